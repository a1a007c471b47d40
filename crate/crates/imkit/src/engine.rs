//! The associate/predict/combine pipeline: focal sets, belief and
//! plausibility (closed-form and Monte Carlo), plausibility curves and
//! regions, validity diagnostics, and conditional evaluation on reduced
//! associations.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::association::{Association, AuxiliaryDistribution};
use crate::error::{ImError, Result};
use crate::prs::{PredictiveRandomSet, SetRealization, ValidityReport};
use crate::quad::interp_linear;
use crate::stats::{chunked_mc, fmt_f64, ks_one_sided_above, ks_one_sided_critical};

/// A hypothesis about the parameter: a subset of the parameter space.
#[derive(Clone)]
pub enum Assertion {
    /// The single point `{theta0}`.
    Singleton(Vec<f64>),
    /// The closed box `[lower, upper]` (coordinate-wise).
    Box { lower: Vec<f64>, upper: Vec<f64> },
    /// An arbitrary membership predicate.
    Predicate(Arc<dyn Fn(&[f64]) -> bool + Send + Sync>),
}

impl Assertion {
    pub fn contains(&self, theta: &[f64]) -> bool {
        match self {
            Assertion::Singleton(t) => {
                t.len() == theta.len()
                    && t.iter().zip(theta).all(|(a, b)| (a - b).abs() <= 0.0)
            }
            Assertion::Box { lower, upper } => theta
                .iter()
                .zip(lower.iter().zip(upper))
                .all(|(t, (lo, hi))| *lo <= *t && *t <= *hi),
            Assertion::Predicate(f) => f(theta),
        }
    }

    /// Points that must be included in any evaluation grid so that thin
    /// assertions are never missed entirely.
    fn anchors(&self) -> Vec<Vec<f64>> {
        match self {
            Assertion::Singleton(t) => vec![t.clone()],
            Assertion::Box { lower, upper } => {
                let mid: Vec<f64> =
                    lower.iter().zip(upper).map(|(a, b)| 0.5 * (a + b)).collect();
                vec![lower.clone(), upper.clone(), mid]
            }
            Assertion::Predicate(_) => Vec::new(),
        }
    }
}

/// Lower/upper probability pair with Monte Carlo standard errors.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BeliefPlausibility {
    pub bel: f64,
    pub pl: f64,
    pub mc_se_bel: f64,
    pub mc_se_pl: f64,
    pub n_draws: usize,
}

/// Grid on which focal-set subset/intersection questions are decided.
#[derive(Clone, Debug)]
pub struct FocalGrid {
    /// Per-axis evaluation window. Must be inside the parameter bounds.
    pub domain: Vec<(f64, f64)>,
    /// Points per axis.
    pub resolution: usize,
}

impl FocalGrid {
    pub fn new(domain: Vec<(f64, f64)>) -> Self {
        Self {
            domain,
            resolution: 512,
        }
    }

    pub fn with_resolution(mut self, resolution: usize) -> Self {
        self.resolution = resolution.max(2);
        self
    }

    fn axis(&self, k: usize) -> Vec<f64> {
        let (lo, hi) = self.domain[k];
        let m = self.resolution;
        (0..m)
            .map(|i| lo + (hi - lo) * i as f64 / (m - 1) as f64)
            .collect()
    }

    fn points(&self) -> Vec<Vec<f64>> {
        let axes: Vec<Vec<f64>> = (0..self.domain.len()).map(|k| self.axis(k)).collect();
        product_points(&axes)
    }

    fn cell_widths(&self) -> Vec<f64> {
        self.domain
            .iter()
            .map(|(lo, hi)| (hi - lo) / (self.resolution - 1) as f64)
            .collect()
    }
}

fn product_points(axes: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut pts: Vec<Vec<f64>> = vec![Vec::new()];
    for axis in axes {
        let mut next = Vec::with_capacity(pts.len() * axis.len());
        for base in &pts {
            for v in axis {
                let mut p = base.clone();
                p.push(*v);
                next.push(p);
            }
        }
        pts = next;
    }
    pts
}

/// True iff `theta` belongs to the focal set `Theta_x(S)` of the realized
/// set: the auxiliary preimage of `x` at `theta` lies inside the realization.
pub fn focal_set_contains(
    assoc: &Association,
    realization: &SetRealization,
    x: &[f64],
    theta: &[f64],
) -> Result<bool> {
    let u = assoc.inverse(x, theta)?;
    Ok(realization.contains(&u))
}

/// Plausibility of the singleton `{theta0}`: exactly `gamma(u(x, theta0))`,
/// no Monte Carlo error.
pub fn plausibility_singleton(
    assoc: &Association,
    prs: &PredictiveRandomSet,
    x: &[f64],
    theta0: &[f64],
) -> Result<f64> {
    let u = assoc.inverse(x, theta0)?;
    Ok(prs.containment_prob(&u))
}

/// Driving-statistic value of `theta` against the data, or infinity when the
/// inverse does not exist (such theta belongs to no focal set).
fn depth_at(assoc: &Association, prs: &PredictiveRandomSet, x: &[f64], theta: &[f64]) -> f64 {
    match assoc.inverse(x, theta) {
        Ok(u) => prs.driving_stat(&u),
        Err(_) => f64::INFINITY,
    }
}

/// Shrinking local search for the minimum of the depth over one side of the
/// assertion, started from the best coarse grid point.
fn refine_min(
    assoc: &Association,
    prs: &PredictiveRandomSet,
    x: &[f64],
    side: &dyn Fn(&[f64]) -> bool,
    start: &[f64],
    start_val: f64,
    cell: &[f64],
) -> f64 {
    let p = start.len();
    let mut best_pt = start.to_vec();
    let mut best = start_val;
    let mut width: Vec<f64> = cell.to_vec();
    for _ in 0..14 {
        let axes: Vec<Vec<f64>> = (0..p)
            .map(|k| {
                (-2..=2)
                    .map(|i| best_pt[k] + i as f64 * 0.5 * width[k])
                    .collect()
            })
            .collect();
        for cand in product_points(&axes) {
            if !assoc.params().contains(&cand) || !side(&cand) {
                continue;
            }
            let v = depth_at(assoc, prs, x, &cand);
            if v < best {
                best = v;
                best_pt = cand;
            }
        }
        for w in width.iter_mut() {
            *w *= 0.4;
        }
    }
    best
}

/// Monte Carlo belief and plausibility of an assertion.
///
/// Subset and intersection questions are decided on a deterministic grid
/// refinement of the assertion and its complement: the minimum depth on each
/// side is compared against every realized radius. Draws split over fixed
/// RNG-stream chunks, so results are identical for any thread count.
pub fn belief_plausibility_mc(
    assoc: &Association,
    prs: &PredictiveRandomSet,
    x: &[f64],
    assertion: &Assertion,
    grid: &FocalGrid,
    n_draws: usize,
    seed: u64,
) -> Result<BeliefPlausibility> {
    if n_draws < 100 {
        return Err(ImError::Precondition("n_draws must be >= 100".into()));
    }
    if grid.domain.len() != assoc.params().dim() {
        return Err(ImError::InvalidInput(
            "grid dimension must match parameter dimension".into(),
        ));
    }
    match assertion {
        Assertion::Singleton(t) | Assertion::Box { lower: t, .. } => {
            assoc.params().check(t).map_err(|e| {
                ImError::Precondition(format!("assertion outside parameter space: {e}"))
            })?;
        }
        Assertion::Predicate(_) => {}
    }

    let mut pts = grid.points();
    for a in assertion.anchors() {
        if assoc.params().contains(&a) {
            pts.push(a);
        }
    }
    let cell = grid.cell_widths();

    let mut min_in: Option<(Vec<f64>, f64)> = None;
    let mut min_out: Option<(Vec<f64>, f64)> = None;
    for pt in &pts {
        if !assoc.params().contains(pt) {
            continue;
        }
        let d = depth_at(assoc, prs, x, pt);
        let slot = if assertion.contains(pt) {
            &mut min_in
        } else {
            &mut min_out
        };
        if slot.as_ref().map_or(true, |(_, v)| d < *v) {
            *slot = Some((pt.clone(), d));
        }
    }

    let inside = |t: &[f64]| assertion.contains(t);
    let outside = |t: &[f64]| !assertion.contains(t);
    let min_a = match &min_in {
        Some((pt, v)) => refine_min(assoc, prs, x, &inside, pt, *v, &cell),
        None => f64::INFINITY,
    };
    let min_ac = match &min_out {
        Some((pt, v)) => refine_min(assoc, prs, x, &outside, pt, *v, &cell),
        None => f64::INFINITY,
    };
    let min_all = min_a.min(min_ac);

    let counts: Vec<(u32, u32, u32)> = chunked_mc(n_draws, seed, 0xbe1, |rng| {
        let r = prs.draw_radius(rng);
        let empty = u32::from(r < min_all);
        let hit_a = u32::from(min_a <= r);
        let inside_a = u32::from(min_ac > r && empty == 0);
        (inside_a, hit_a, empty)
    });
    let (mut bel_n, mut pl_n, mut empty_n) = (0u64, 0u64, 0u64);
    for (b, p, e) in counts {
        bel_n += b as u64;
        pl_n += p as u64;
        empty_n += e as u64;
    }
    if empty_n > 0 {
        return Err(ImError::EmptyFocalSet);
    }
    let n = n_draws as f64;
    let bel = bel_n as f64 / n;
    let pl = pl_n as f64 / n;
    Ok(BeliefPlausibility {
        bel,
        pl,
        mc_se_bel: (bel * (1.0 - bel) / n).sqrt(),
        mc_se_pl: (pl * (1.0 - pl) / n).sqrt(),
        n_draws,
    })
}

/// Plausibility values over a product grid of parameter values.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PlausibilityCurve {
    /// Strictly increasing grid per axis.
    pub axes: Vec<Vec<f64>>,
    /// Row-major plausibility values over the product grid.
    pub pl: Vec<f64>,
    pub assoc_id: String,
    pub prs_id: String,
}

impl PlausibilityCurve {
    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    /// CSV with header `theta_1,...,theta_p,pl`, floats at 17 significant digits.
    pub fn to_csv(&self) -> String {
        let p = self.dim();
        let mut out = String::new();
        for k in 0..p {
            out.push_str(&format!("theta_{},", k + 1));
        }
        out.push_str("pl\n");
        for (pt, v) in product_points(&self.axes).iter().zip(&self.pl) {
            for c in pt {
                out.push_str(&fmt_f64(*c));
                out.push(',');
            }
            out.push_str(&fmt_f64(*v));
            out.push('\n');
        }
        out
    }

    /// `{theta : pl >= alpha}` as maximal intervals of a one-dimensional
    /// curve, endpoints linearly interpolated between grid nodes. An
    /// all-below-alpha curve yields an empty list.
    ///
    /// Threshold convention: for the unit-variance location model the region
    /// at `alpha = 0.05` is the textbook central 95% interval
    /// `[x + z_0.025, x + z_0.975]`. The plausibility at each endpoint is the
    /// two-sided level 0.05, twice the one-sided tail mass 0.025 — quoting
    /// the one-sided 0.025 as the threshold is a common convention slip.
    pub fn region(&self, alpha: f64) -> Result<Vec<(f64, f64)>> {
        if !(0.0 < alpha && alpha < 1.0) {
            return Err(ImError::Precondition("alpha must be in (0,1)".into()));
        }
        if self.dim() != 1 {
            return Err(ImError::Precondition(
                "plausibility regions are defined for one-dimensional curves".into(),
            ));
        }
        let g = &self.axes[0];
        let pl = &self.pl;
        let mut intervals = Vec::new();
        let mut start: Option<f64> = None;
        let cross = |i: usize| -> f64 {
            // linear interpolation of the alpha crossing in cell [i, i+1]
            let t = (alpha - pl[i]) / (pl[i + 1] - pl[i]);
            g[i] + t * (g[i + 1] - g[i])
        };
        for i in 0..g.len() {
            let above = pl[i] >= alpha;
            match (above, start) {
                (true, None) => {
                    let left = if i == 0 { g[0] } else { cross(i - 1) };
                    start = Some(left);
                }
                (false, Some(s)) => {
                    intervals.push((s, cross(i - 1)));
                    start = None;
                }
                _ => {}
            }
        }
        if let Some(s) = start {
            intervals.push((s, g[g.len() - 1]));
        }
        Ok(intervals)
    }
}

/// Pointwise singleton plausibility over a product grid (closed-form path).
pub fn plausibility_curve(
    assoc: &Association,
    prs: &PredictiveRandomSet,
    x: &[f64],
    axes: Vec<Vec<f64>>,
) -> Result<PlausibilityCurve> {
    for axis in &axes {
        if axis.windows(2).any(|w| w[0] >= w[1]) {
            return Err(ImError::Precondition("grid axes must be strictly increasing".into()));
        }
    }
    let pts = product_points(&axes);
    let mut pl = Vec::with_capacity(pts.len());
    for pt in &pts {
        pl.push(plausibility_singleton(assoc, prs, x, pt)?);
    }
    Ok(PlausibilityCurve {
        axes,
        pl,
        assoc_id: assoc.label().to_string(),
        prs_id: prs.label().to_string(),
    })
}

/// Monte Carlo singleton-plausibility curve with draws shared across the
/// whole grid (common random numbers).
pub fn plausibility_curve_mc(
    assoc: &Association,
    prs: &PredictiveRandomSet,
    x: &[f64],
    axes: Vec<Vec<f64>>,
    n_draws: usize,
    seed: u64,
) -> Result<PlausibilityCurve> {
    let pts = product_points(&axes);
    let depths: Vec<f64> = pts
        .iter()
        .map(|pt| depth_at(assoc, prs, x, pt))
        .collect();
    let mut radii: Vec<f64> = chunked_mc(n_draws, seed, 0xcafe, |rng| prs.draw_radius(rng));
    radii.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = n_draws as f64;
    let pl: Vec<f64> = depths
        .iter()
        .map(|d| {
            // count radii >= d via binary search on the sorted radii
            let idx = radii.partition_point(|r| r < d);
            (n_draws - idx) as f64 / n
        })
        .collect();
    Ok(PlausibilityCurve {
        axes,
        pl,
        assoc_id: assoc.label().to_string(),
        prs_id: format!("{}(mc)", prs.label()),
    })
}

/// Frequency-calibration diagnostic: simulates datasets at `theta_true`,
/// evaluates the singleton plausibility at the truth for each, and reports
/// the one-sided KS statistic of the plausibility sample against stochastic
/// dominance of Uniform(0,1).
pub fn validity_diagnostic(
    assoc: &Association,
    prs: &PredictiveRandomSet,
    theta_true: &[f64],
    n_sim: usize,
    seed: u64,
) -> Result<ValidityReport> {
    assoc.params().check(theta_true)?;
    if n_sim == 0 {
        return Err(ImError::Precondition("n_sim must be >= 1".into()));
    }
    let non_coverage: Vec<f64> = chunked_mc(n_sim, seed, 0xd1a9, |rng| {
        let u = assoc.aux().sample(rng);
        let x = match assoc.forward(&u, theta_true) {
            Ok(x) => x,
            Err(_) => return 1.0,
        };
        match plausibility_singleton(assoc, prs, &x, theta_true) {
            Ok(pl) => 1.0 - pl,
            Err(_) => 1.0,
        }
    });
    let ks = ks_one_sided_above(&non_coverage);
    Ok(ValidityReport {
        n_sim,
        ks_one_sided: ks,
        pass: ks <= ks_one_sided_critical(n_sim, 0.01),
    })
}

/// Whether a conditional association is anchored at a specific parameter
/// value (local) or valid at every parameter (regular).
#[derive(Clone, Debug)]
pub enum Anchor {
    Global,
    At(Vec<f64>),
}

type VecFn = dyn Fn(&[f64]) -> Vec<f64> + Send + Sync;
type BForwardFn = dyn Fn(&[f64], &[f64]) -> Vec<f64> + Send + Sync;
type BInverseFn = dyn Fn(&[f64], &[f64]) -> Result<Vec<f64>> + Send + Sync;

/// A dimension-reduced association `T(x) = b(V, theta)` where `V` follows the
/// conditional law of the retained auxiliaries given the observed values of
/// the conditioning variables.
#[derive(Clone)]
pub struct ConditionalAssociation {
    label: String,
    reduced_dim: usize,
    full_dim: usize,
    t_stat: Arc<VecFn>,
    b_forward: Arc<BForwardFn>,
    b_inverse: Arc<BInverseFn>,
    conditioning_values: Vec<f64>,
    conditional: AuxiliaryDistribution,
    anchor: Anchor,
}

impl ConditionalAssociation {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        label: impl Into<String>,
        reduced_dim: usize,
        full_dim: usize,
        t_stat: Arc<VecFn>,
        b_forward: Arc<BForwardFn>,
        b_inverse: Arc<BInverseFn>,
        conditioning_values: Vec<f64>,
        conditional: AuxiliaryDistribution,
        anchor: Anchor,
    ) -> Result<Self> {
        if reduced_dim >= full_dim {
            return Err(ImError::InvalidInput(format!(
                "reduced dimension {reduced_dim} must be below the full dimension {full_dim}"
            )));
        }
        if conditional.dim() != reduced_dim {
            return Err(ImError::InvalidInput(
                "conditional law dimension must equal the reduced dimension".into(),
            ));
        }
        Ok(Self {
            label: label.into(),
            reduced_dim,
            full_dim,
            t_stat,
            b_forward,
            b_inverse,
            conditioning_values,
            conditional,
            anchor,
        })
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn reduced_dim(&self) -> usize {
        self.reduced_dim
    }

    pub fn full_dim(&self) -> usize {
        self.full_dim
    }

    pub fn conditioning_values(&self) -> &[f64] {
        &self.conditioning_values
    }

    pub fn conditional(&self) -> &AuxiliaryDistribution {
        &self.conditional
    }

    pub fn anchor(&self) -> &Anchor {
        &self.anchor
    }

    pub fn t_stat(&self, x: &[f64]) -> Vec<f64> {
        (self.t_stat)(x)
    }

    pub fn b_forward(&self, v: &[f64], theta: &[f64]) -> Vec<f64> {
        (self.b_forward)(v, theta)
    }

    pub fn b_inverse(&self, t: &[f64], theta: &[f64]) -> Result<Vec<f64>> {
        (self.b_inverse)(t, theta)
    }
}

/// Conditional plausibility of the singleton `{theta0}` on the reduced
/// association, with the exact containment-probability path.
///
/// `prs_on_v` must be built against the conditional law of `V`.
pub fn conditional_plausibility(
    cond: &ConditionalAssociation,
    prs_on_v: &PredictiveRandomSet,
    x: &[f64],
    theta0: &[f64],
) -> Result<f64> {
    if let Anchor::At(anchor) = &cond.anchor {
        let drift = anchor
            .iter()
            .zip(theta0)
            .map(|(a, t)| (a - t).abs())
            .fold(0.0, f64::max);
        if drift > 1e-9 {
            return Err(ImError::Precondition(
                "local conditional association evaluated away from its anchor; rebuild at theta0"
                    .into(),
            ));
        }
    }
    let t = cond.t_stat(x);
    let v = cond.b_inverse(&t, theta0)?;
    Ok(prs_on_v.containment_prob(&v))
}

/// Monte Carlo route for the same quantity: draws `V` from the conditional
/// sampler and counts how often the realized sublevel set contains the
/// observed `v`. Converges to [`conditional_plausibility`] as draws grow.
pub fn conditional_plausibility_mc(
    cond: &ConditionalAssociation,
    prs_on_v: &PredictiveRandomSet,
    x: &[f64],
    theta0: &[f64],
    n_draws: usize,
    seed: u64,
) -> Result<BeliefPlausibility> {
    let t = cond.t_stat(x);
    let v = cond.b_inverse(&t, theta0)?;
    let d_obs = prs_on_v.driving_stat(&v);
    let scale = prs_on_v.radius_scale();
    let hits: Vec<u32> = chunked_mc(n_draws, seed, 0xc0de, |rng| {
        let draw = cond.conditional.sample(rng);
        u32::from(d_obs <= scale * prs_on_v.driving_stat(&draw))
    });
    let k: u64 = hits.iter().map(|h| *h as u64).sum();
    let pl = k as f64 / n_draws as f64;
    Ok(BeliefPlausibility {
        bel: 0.0,
        pl,
        mc_se_bel: 0.0,
        mc_se_pl: (pl * (1.0 - pl) / n_draws as f64).sqrt(),
        n_draws,
    })
}

/// Linear interpolation helper re-exported for curve consumers.
pub fn curve_value_at(curve: &PlausibilityCurve, theta: f64) -> Result<f64> {
    if curve.dim() != 1 {
        return Err(ImError::Precondition("interpolation needs a 1-D curve".into()));
    }
    Ok(interp_linear(&curve.axes[0], &curve.pl, theta))
}
