//! Classifies sampling models by whether globally observed conditioning
//! variables exist: generalized location / location-scale structure, checked
//! numerically on grids through separability of partial-derivative ratios,
//! and a singular-value rank test for three-parameter degeneracy.

use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{ImError, Result};
use crate::expr::{Expr, Var};
use crate::quad::{adaptive_simpson, MonotoneCubic};

/// Default points per grid axis.
pub const DEFAULT_GRID_POINTS: usize = 21;
/// Default relative tolerance for "numerically zero" sups.
pub const DEFAULT_TOLERANCE: f64 = 1e-5;

type CoordFn = dyn Fn(usize, f64, &[f64]) -> f64 + Send + Sync;
type CoordPartialFn = dyn Fn(usize, f64, &[f64], usize) -> f64 + Send + Sync;

/// A coordinate-wise model `x_j = g_j(u_j, theta)` with analytic partials.
#[derive(Clone)]
pub struct CoordinateModel {
    n_obs: usize,
    p: usize,
    g: Arc<CoordFn>,
    dg_du: Arc<CoordFn>,
    dg_dtheta: Arc<CoordPartialFn>,
}

impl CoordinateModel {
    pub fn new(
        n_obs: usize,
        p: usize,
        g: Arc<CoordFn>,
        dg_du: Arc<CoordFn>,
        dg_dtheta: Arc<CoordPartialFn>,
    ) -> Result<Self> {
        if n_obs == 0 || p == 0 {
            return Err(ImError::InvalidInput("need n_obs >= 1 and p >= 1".into()));
        }
        Ok(Self {
            n_obs,
            p,
            g,
            dg_du,
            dg_dtheta,
        })
    }

    /// Builds from one expression per coordinate; each expression uses `u_1`
    /// for its own auxiliary coordinate and `theta_k` for the parameters.
    /// Partials are symbolic.
    pub fn from_exprs(exprs: Vec<Expr>, p: usize) -> Result<Self> {
        if exprs.is_empty() {
            return Err(ImError::InvalidInput("need at least one coordinate".into()));
        }
        for (j, e) in exprs.iter().enumerate() {
            let (nu, nt) = e.arity();
            if nu > 1 {
                return Err(ImError::InvalidInput(format!(
                    "coordinate {} may only reference u_1 (its own auxiliary)",
                    j + 1
                )));
            }
            if nt > p {
                return Err(ImError::InvalidInput(format!(
                    "coordinate {} references theta_{} but p = {p}",
                    j + 1,
                    nt
                )));
            }
        }
        let n_obs = exprs.len();
        let du: Vec<Expr> = exprs.iter().map(|e| e.diff(Var::U(0))).collect();
        let dths: Vec<Vec<Expr>> = exprs
            .iter()
            .map(|e| (0..p).map(|k| e.diff(Var::Theta(k))).collect())
            .collect();
        let gs = exprs;
        Ok(Self {
            n_obs,
            p,
            g: Arc::new({
                let gs = gs.clone();
                move |j, u, th| gs[j].eval(&[u], th)
            }),
            dg_du: Arc::new(move |j, u, th| du[j].eval(&[u], th)),
            dg_dtheta: Arc::new(move |j, u, th, k| dths[j][k].eval(&[u], th)),
        })
    }

    pub fn n_obs(&self) -> usize {
        self.n_obs
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn g(&self, j: usize, u: f64, theta: &[f64]) -> f64 {
        (self.g)(j, u, theta)
    }

    pub fn dg_du(&self, j: usize, u: f64, theta: &[f64]) -> f64 {
        (self.dg_du)(j, u, theta)
    }

    pub fn dg_dtheta(&self, j: usize, u: f64, theta: &[f64], k: usize) -> f64 {
        (self.dg_dtheta)(j, u, theta, k)
    }

    /// The ratio `(dg_j/dtheta) / (dg_j/du_j)` entering every test here.
    fn ratio(&self, j: usize, u: f64, theta: &[f64], k: usize) -> Result<f64> {
        let den = self.dg_du(j, u, theta);
        let num = self.dg_dtheta(j, u, theta, k);
        if den.abs() < 1e-300 {
            return Err(ImError::SingularModel(format!(
                "dg_{}/du vanishes at u = {u}, theta = {theta:?}",
                j + 1
            )));
        }
        Ok(num / den)
    }
}

/// A common-form model `x_j = a(theta, u_j)`: every observation shares `a`.
#[derive(Clone)]
pub struct CommonFormModel {
    p: usize,
    a: Arc<dyn Fn(&[f64], f64) -> f64 + Send + Sync>,
    da_du: Arc<dyn Fn(&[f64], f64) -> f64 + Send + Sync>,
    da_dtheta: Arc<dyn Fn(&[f64], f64, usize) -> f64 + Send + Sync>,
}

impl CommonFormModel {
    pub fn new(
        p: usize,
        a: Arc<dyn Fn(&[f64], f64) -> f64 + Send + Sync>,
        da_du: Arc<dyn Fn(&[f64], f64) -> f64 + Send + Sync>,
        da_dtheta: Arc<dyn Fn(&[f64], f64, usize) -> f64 + Send + Sync>,
    ) -> Self {
        Self {
            p,
            a,
            da_du,
            da_dtheta,
        }
    }

    /// Builds from one expression in `u_1` and `theta_1..theta_p`.
    pub fn from_expr(expr: Expr, p: usize) -> Result<Self> {
        let (nu, nt) = expr.arity();
        if nu > 1 || nt > p {
            return Err(ImError::InvalidInput(
                "common-form expression may reference u_1 and theta_1..theta_p only".into(),
            ));
        }
        let du = expr.diff(Var::U(0));
        let dth: Vec<Expr> = (0..p).map(|k| expr.diff(Var::Theta(k))).collect();
        Ok(Self {
            p,
            a: Arc::new(move |th, u| expr.eval(&[u], th)),
            da_du: Arc::new(move |th, u| du.eval(&[u], th)),
            da_dtheta: Arc::new(move |th, u, k| dth[k].eval(&[u], th)),
        })
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn a(&self, theta: &[f64], u: f64) -> f64 {
        (self.a)(theta, u)
    }

    pub fn da_du(&self, theta: &[f64], u: f64) -> f64 {
        (self.da_du)(theta, u)
    }

    pub fn da_dtheta(&self, theta: &[f64], u: f64, k: usize) -> f64 {
        (self.da_dtheta)(theta, u, k)
    }
}

/// Evaluation window for the numerical tests.
#[derive(Clone, Debug)]
pub struct DetectorGrid {
    /// Range per auxiliary coordinate (recycled when fewer than needed).
    pub u_ranges: Vec<(f64, f64)>,
    /// Range per parameter coordinate.
    pub theta_ranges: Vec<(f64, f64)>,
    pub points_per_axis: usize,
    pub tolerance: f64,
}

impl DetectorGrid {
    pub fn new(u_ranges: Vec<(f64, f64)>, theta_ranges: Vec<(f64, f64)>) -> Self {
        Self {
            u_ranges,
            theta_ranges,
            points_per_axis: DEFAULT_GRID_POINTS,
            tolerance: DEFAULT_TOLERANCE,
        }
    }

    pub fn with_points(mut self, m: usize) -> Self {
        self.points_per_axis = m.max(3);
        self
    }

    pub fn with_tolerance(mut self, tol: f64) -> Self {
        self.tolerance = tol;
        self
    }

    fn u_axis(&self, j: usize) -> Vec<f64> {
        let (lo, hi) = self.u_ranges[j % self.u_ranges.len()];
        linspace(lo, hi, self.points_per_axis)
    }

    fn theta_axis(&self, k: usize) -> Vec<f64> {
        let (lo, hi) = self.theta_ranges[k % self.theta_ranges.len()];
        linspace(lo, hi, self.points_per_axis)
    }
}

fn linspace(lo: f64, hi: f64, m: usize) -> Vec<f64> {
    (0..m)
        .map(|i| lo + (hi - lo) * i as f64 / (m - 1) as f64)
        .collect()
}

/// Outcome of a separability test.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SeparabilityReport {
    /// Sup over the grid of the parameter-derivative of `log h`.
    pub h_theta_dependence: f64,
    /// Sup over the grid of the mixed auxiliary partial of `log h`.
    pub mixed_log_partial: f64,
    pub separable: bool,
    pub regular: bool,
    pub tolerance: f64,
    /// 1-based coordinate pairs that failed, for multi-observation tests.
    pub offending_pairs: Vec<(usize, usize)>,
    /// Human-readable grid description.
    pub grid: String,
}

fn grid_label(grid: &DetectorGrid) -> String {
    format!(
        "u in {:?}, theta in {:?}, {} points/axis",
        grid.u_ranges, grid.theta_ranges, grid.points_per_axis
    )
}

/// Pairwise separability statistics of `log h` for one coordinate pair.
///
/// `h(u_i, u_j, theta) = ratio_i / ratio_j`; the model admits an observed
/// conditioning variable iff `h` is parameter-free and `log h` splits
/// additively in `(u_i, u_j)`.
fn pair_statistics(
    model: &CoordinateModel,
    grid: &DetectorGrid,
    i: usize,
    j: usize,
) -> Result<(f64, f64)> {
    let ui = grid.u_axis(i);
    let uj = grid.u_axis(j);
    let th = grid.theta_axis(0);
    let m = grid.points_per_axis;

    // log |h| over the (u_i, u_j, theta) grid
    let mut logh = vec![0.0; m * m * m];
    for (a, &uia) in ui.iter().enumerate() {
        for (b, &ujb) in uj.iter().enumerate() {
            for (c, &thc) in th.iter().enumerate() {
                let theta = [thc];
                let r1 = model.ratio(i, uia, &theta, 0)?;
                let r2 = model.ratio(j, ujb, &theta, 0)?;
                if r1 == 0.0 || r2 == 0.0 {
                    return Err(ImError::SingularModel(format!(
                        "dg/dtheta vanishes on the grid for pair ({}, {})",
                        i + 1,
                        j + 1
                    )));
                }
                logh[(a * m + b) * m + c] = (r1 / r2).abs().ln();
            }
        }
    }

    let du_i = ui[1] - ui[0];
    let du_j = uj[1] - uj[0];
    let dth = th[1] - th[0];
    let idx = |a: usize, b: usize, c: usize| (a * m + b) * m + c;

    let mut theta_dep: f64 = 0.0;
    let mut mixed: f64 = 0.0;
    for a in 0..m {
        for b in 0..m {
            for c in 0..m {
                if c + 1 < m {
                    theta_dep = theta_dep
                        .max(((logh[idx(a, b, c + 1)] - logh[idx(a, b, c)]) / dth).abs());
                }
                if a + 1 < m && b + 1 < m {
                    let cross = logh[idx(a + 1, b + 1, c)] - logh[idx(a + 1, b, c)]
                        - logh[idx(a, b + 1, c)]
                        + logh[idx(a, b, c)];
                    mixed = mixed.max((cross / (du_i * du_j)).abs());
                }
            }
        }
    }
    Ok((theta_dep, mixed))
}

/// Two-observation, one-parameter separability test.
pub fn separability_test(
    model: &CoordinateModel,
    grid: &DetectorGrid,
) -> Result<SeparabilityReport> {
    if model.p() != 1 || model.n_obs() != 2 {
        return Err(ImError::Precondition(
            "separability_test needs exactly two observations and one parameter".into(),
        ));
    }
    let (theta_dep, mixed) = pair_statistics(model, grid, 0, 1)?;
    let separable = mixed <= grid.tolerance;
    Ok(SeparabilityReport {
        h_theta_dependence: theta_dep,
        mixed_log_partial: mixed,
        separable,
        regular: separable && theta_dep <= grid.tolerance,
        tolerance: grid.tolerance,
        offending_pairs: if separable && theta_dep <= grid.tolerance {
            Vec::new()
        } else {
            vec![(1, 2)]
        },
        grid: grid_label(grid),
    })
}

/// N-observation, one-parameter test: every coordinate pair must pass with a
/// shared parameter factor, checked through pairwise ratios being
/// parameter-free.
pub fn n_sample_separability(
    model: &CoordinateModel,
    grid: &DetectorGrid,
) -> Result<SeparabilityReport> {
    if model.p() != 1 || model.n_obs() < 2 {
        return Err(ImError::Precondition(
            "n_sample_separability needs one parameter and at least two observations".into(),
        ));
    }
    let mut worst_dep: f64 = 0.0;
    let mut worst_mixed: f64 = 0.0;
    let mut offending = Vec::new();
    for i in 0..model.n_obs() {
        for j in (i + 1)..model.n_obs() {
            let (dep, mixed) = pair_statistics(model, grid, i, j)?;
            worst_dep = worst_dep.max(dep);
            worst_mixed = worst_mixed.max(mixed);
            if dep > grid.tolerance || mixed > grid.tolerance {
                offending.push((i + 1, j + 1));
            }
        }
    }
    let separable = worst_mixed <= grid.tolerance;
    Ok(SeparabilityReport {
        h_theta_dependence: worst_dep,
        mixed_log_partial: worst_mixed,
        separable,
        regular: offending.is_empty(),
        tolerance: grid.tolerance,
        offending_pairs: offending,
        grid: grid_label(grid),
    })
}

/// Two-parameter common-form test via the cross-ratio of determinant pairs:
/// the model is regular iff the ratio is parameter-free on the grid.
/// Grid points with near-singular determinants are excluded; exceeding 50%
/// exclusions aborts as inconclusive.
pub fn two_parameter_test(
    model: &CommonFormModel,
    grid: &DetectorGrid,
) -> Result<SeparabilityReport> {
    if model.p() != 2 {
        return Err(ImError::Precondition(
            "two_parameter_test needs exactly two parameters".into(),
        ));
    }
    let u1 = grid.u_axis(0);
    let u2 = grid.u_axis(1);
    let u3 = grid.u_axis(2);
    let t1 = grid.theta_axis(0);
    let t2 = grid.theta_axis(1);
    let m = grid.points_per_axis;

    // determinant of the theta-gradient pair at (u_a, u_b)
    let det = |theta: &[f64], ua: f64, ub: f64| -> f64 {
        model.da_dtheta(theta, ub, 0) * model.da_dtheta(theta, ua, 1)
            - model.da_dtheta(theta, ua, 0) * model.da_dtheta(theta, ub, 1)
    };

    let mut theta_dep: f64 = 0.0;
    let mut excluded = 0usize;
    let mut total = 0usize;

    for &a in &u1 {
        for &b in &u2 {
            for &c in &u3 {
                // log |cross-ratio| along the theta grid for this u-triple
                let mut vals = vec![f64::NAN; m * m];
                let mut scale: f64 = 0.0;
                for (r, &x1) in t1.iter().enumerate() {
                    for (s, &x2) in t2.iter().enumerate() {
                        total += 1;
                        let theta = [x1, x2];
                        let f_23 = det(&theta, b, c);
                        let f_31 = det(&theta, c, a);
                        let g_1 = model.da_du(&theta, a);
                        let g_2 = model.da_du(&theta, b);
                        let ratio = f_23 / f_31 * (g_1 / g_2);
                        scale = scale.max(f_31.abs()).max(g_2.abs());
                        if !ratio.is_finite()
                            || f_31.abs() < 1e-9 * scale.max(1.0)
                            || g_2.abs() < 1e-12 * scale.max(1.0)
                            || ratio.abs() < 1e-12
                        {
                            excluded += 1;
                            continue;
                        }
                        vals[r * m + s] = ratio.abs().ln();
                    }
                }
                let d1 = t1[1] - t1[0];
                let d2 = t2[1] - t2[0];
                for r in 0..m {
                    for s in 0..m {
                        let v = vals[r * m + s];
                        if !v.is_finite() {
                            continue;
                        }
                        if r + 1 < m && vals[(r + 1) * m + s].is_finite() {
                            theta_dep =
                                theta_dep.max(((vals[(r + 1) * m + s] - v) / d1).abs());
                        }
                        if s + 1 < m && vals[r * m + s + 1].is_finite() {
                            theta_dep = theta_dep.max(((vals[r * m + s + 1] - v) / d2).abs());
                        }
                    }
                }
            }
        }
    }
    if excluded * 2 > total {
        return Err(ImError::Inconclusive { excluded, total });
    }
    let regular = theta_dep <= grid.tolerance;
    Ok(SeparabilityReport {
        h_theta_dependence: theta_dep,
        mixed_log_partial: 0.0,
        separable: regular,
        regular,
        tolerance: grid.tolerance,
        offending_pairs: Vec::new(),
        grid: grid_label(grid),
    })
}

/// Result of the three-parameter degeneracy rank test.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DegeneracyReport {
    pub numerical_rank: usize,
    pub singular_values: Vec<f64>,
    pub degenerate: bool,
    /// Orthonormal parameter-space directions spanning the gradient plane,
    /// present when the model is degenerate; usable as reduced coordinates.
    pub reduced_directions: Option<Vec<Vec<f64>>>,
}

/// Assembles the matrix of normalized parameter gradients at the given
/// auxiliary points and reads its numerical rank off the singular values.
/// Rank at most 2 across every sampled parameter means the three parameters
/// act through two reduced coordinates.
pub fn degeneracy_rank_test(
    model: &CommonFormModel,
    theta_samples: &[Vec<f64>],
    u_points: &[f64],
) -> Result<DegeneracyReport> {
    if model.p() != 3 {
        return Err(ImError::Precondition(
            "degeneracy_rank_test needs exactly three parameters".into(),
        ));
    }
    if u_points.len() < 4 {
        return Err(ImError::Precondition(
            "degeneracy_rank_test needs at least four auxiliary points".into(),
        ));
    }
    if theta_samples.is_empty() {
        return Err(ImError::Precondition("need at least one theta sample".into()));
    }

    let mut worst_rank = 0usize;
    let mut rep_svals: Vec<f64> = Vec::new();
    let mut rep_vt: Option<DMatrix<f64>> = None;

    for theta in theta_samples {
        // rows: usable u-points, columns: the three parameter directions
        let mut rows: Vec<[f64; 3]> = Vec::new();
        for &u in u_points {
            let den = model.da_du(theta, u);
            if den.abs() < 1e-12 {
                continue; // excluded point
            }
            rows.push([
                model.da_dtheta(theta, u, 0) / den,
                model.da_dtheta(theta, u, 1) / den,
                model.da_dtheta(theta, u, 2) / den,
            ]);
        }
        if rows.is_empty() {
            return Err(ImError::SingularModel(
                "da/du vanished at every supplied auxiliary point".into(),
            ));
        }
        let mat = DMatrix::from_fn(rows.len(), 3, |r, c| rows[r][c]);
        let svd = mat.svd(true, true);
        let mut svals: Vec<f64> = svd.singular_values.iter().copied().collect();
        svals.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let smax = svals[0].max(1e-300);
        let rank = svals.iter().filter(|s| **s > 1e-8 * smax).count();
        if rank > worst_rank {
            worst_rank = rank;
            rep_svals = svals;
            rep_vt = svd.v_t.clone();
        } else if rep_svals.is_empty() {
            rep_svals = svals;
            rep_vt = svd.v_t.clone();
        }
    }

    let degenerate = worst_rank <= 2;
    let reduced_directions = if degenerate {
        rep_vt.map(|vt| {
            (0..2.min(vt.nrows()))
                .map(|r| vt.row(r).iter().copied().collect::<Vec<f64>>())
                .collect()
        })
    } else {
        None
    };
    Ok(DegeneracyReport {
        numerical_rank: worst_rank,
        singular_values: rep_svals,
        degenerate,
        reduced_directions,
    })
}

/// Tabulated change of variables turning a regular model into pure location
/// form: strictly monotone per-coordinate auxiliary maps plus one parameter
/// map, with the residual of the level-set verification.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LocationScaleTransform {
    /// Per-coordinate `(u grid, V values)` tables.
    pub v_maps: Vec<(Vec<f64>, Vec<f64>)>,
    /// `(theta grid, delta values)` table.
    pub delta_map: (Vec<f64>, Vec<f64>),
    /// Sup deviation of the transformed association from pure location form.
    pub residual: f64,
}

impl LocationScaleTransform {
    fn v_interp(&self, j: usize) -> MonotoneCubic {
        MonotoneCubic::new(self.v_maps[j].0.clone(), self.v_maps[j].1.clone())
            .expect("tabulated V map is strictly monotone by construction")
    }

    pub fn v(&self, j: usize, u: f64) -> f64 {
        self.v_interp(j).eval(u)
    }

    pub fn v_inverse(&self, j: usize, value: f64) -> f64 {
        self.v_interp(j).inverse(value)
    }

    pub fn delta(&self, theta: f64) -> f64 {
        MonotoneCubic::new(self.delta_map.0.clone(), self.delta_map.1.clone())
            .expect("tabulated delta map is strictly monotone by construction")
            .eval(theta)
    }

    /// Rough shape classification of the recovered maps, for reporting: a
    /// near-constant integrand gives plain location structure, an integrand
    /// proportional to its argument gives location-after-log.
    pub fn flavor(&self) -> TransformFlavor {
        let (ug, vg) = &self.v_maps[0];
        let lin = fit_shape(ug, vg);
        let (tg, dg) = &self.delta_map;
        let dl = fit_shape(tg, dg);
        match (lin, dl) {
            (Shape::Affine, Shape::Affine) => TransformFlavor::Location,
            (Shape::Log, Shape::Log) => TransformFlavor::LocationAfterLog,
            _ => TransformFlavor::General,
        }
    }
}

/// Shape of the recovered transform.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TransformFlavor {
    Location,
    LocationAfterLog,
    General,
}

enum Shape {
    Affine,
    Log,
    Other,
}

fn fit_shape(xs: &[f64], ys: &[f64]) -> Shape {
    let resid_against = |f: &dyn Fn(f64) -> f64| -> f64 {
        // least-squares affine fit of ys against f(xs), then residual sup
        let n = xs.len() as f64;
        let fx: Vec<f64> = xs.iter().map(|x| f(*x)).collect();
        let mx = fx.iter().sum::<f64>() / n;
        let my = ys.iter().sum::<f64>() / n;
        let mut sxx = 0.0;
        let mut sxy = 0.0;
        for (a, b) in fx.iter().zip(ys) {
            sxx += (a - mx) * (a - mx);
            sxy += (a - mx) * (b - my);
        }
        if sxx < 1e-300 {
            return f64::INFINITY;
        }
        let slope = sxy / sxx;
        let scale = ys.iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(1e-12);
        fx.iter()
            .zip(ys)
            .map(|(a, b)| (b - (my + slope * (a - mx))).abs())
            .fold(0.0_f64, f64::max)
            / scale
    };
    if resid_against(&|x| x) < 1e-6 {
        Shape::Affine
    } else if xs.iter().all(|x| *x > 0.0) && resid_against(&|x: f64| x.ln()) < 1e-6 {
        Shape::Log
    } else {
        Shape::Other
    }
}

/// Recovers the location-form change of variables for a model certified
/// regular: integrand factors from the derivative ratios anchored at the
/// first grid points, tabulated by adaptive quadrature, then verified on
/// level sets of the forward map.
pub fn extract_location_transform(
    model: &CoordinateModel,
    report: &SeparabilityReport,
    grid: &DetectorGrid,
) -> Result<LocationScaleTransform> {
    if !report.regular {
        return Err(ImError::Precondition(
            "extract_location_transform needs a regular separability report".into(),
        ));
    }
    let th_axis = grid.theta_axis(0);
    let theta0 = [th_axis[0]];
    let n = model.n_obs();

    // tabulation knots refined well past the decision grid so the monotone
    // cubic interpolant carries the quadrature accuracy
    let refine = 16;
    let densify = |axis: &[f64]| -> Vec<f64> {
        let mut out = Vec::with_capacity((axis.len() - 1) * refine + 1);
        for w in axis.windows(2) {
            for s in 0..refine {
                out.push(w[0] + (w[1] - w[0]) * s as f64 / refine as f64);
            }
        }
        out.push(axis[axis.len() - 1]);
        out
    };

    // C_j(u) = ratio_j(u, theta0); C(theta) = C_1(u0) / ratio_1(u0, theta)
    let u_axes: Vec<Vec<f64>> = (0..n).map(|j| grid.u_axis(j)).collect();
    let u0 = u_axes[0][0];
    let c1_at_u0 = model.ratio(0, u0, &theta0, 0)?;

    let mut v_maps = Vec::with_capacity(n);
    for j in 0..n {
        let knots = densify(&u_axes[j]);
        let mut vals = Vec::with_capacity(knots.len());
        let mut acc = 0.0;
        vals.push(0.0);
        for w in knots.windows(2) {
            let seg = adaptive_simpson(
                &|t| 1.0 / (self_ratio(model, j, t, &theta0)),
                w[0],
                w[1],
                1e-12,
            )?;
            acc += seg;
            vals.push(acc);
        }
        let increasing = vals.windows(2).all(|w| w[1] > w[0]);
        let decreasing = vals.windows(2).all(|w| w[1] < w[0]);
        if !(increasing || decreasing) {
            return Err(ImError::SingularModel(format!(
                "V map for coordinate {} is not strictly monotone on its grid",
                j + 1
            )));
        }
        v_maps.push((knots, vals));
    }

    let th_knots = densify(&th_axis);
    let mut dvals = Vec::with_capacity(th_knots.len());
    let mut acc = 0.0;
    dvals.push(0.0);
    for w in th_knots.windows(2) {
        let seg = adaptive_simpson(
            &|t| {
                let r = model.ratio(0, u0, &[t], 0).unwrap_or(f64::NAN);
                r / c1_at_u0
            },
            w[0],
            w[1],
            1e-12,
        )?;
        acc += seg;
        dvals.push(acc);
    }
    if !(dvals.windows(2).all(|w| w[1] > w[0]) || dvals.windows(2).all(|w| w[1] < w[0])) {
        return Err(ImError::SingularModel(
            "delta map is not strictly monotone on its grid".into(),
        ));
    }
    let delta_map = (th_knots, dvals);

    let transform = LocationScaleTransform {
        v_maps,
        delta_map,
        residual: 0.0,
    };

    // level-set verification: pairs (u, theta) and (u', theta') with equal
    // V + delta must map to equal data values
    let mut residual: f64 = 0.0;
    for j in 0..n {
        let axis = &u_axes[j];
        let v_interp = transform.v_interp(j);
        let (lo_v, hi_v) = {
            let (_, ys) = v_interp.knots();
            let a = ys[0];
            let b = ys[ys.len() - 1];
            (a.min(b), a.max(b))
        };
        for &ua in axis.iter().step_by(4) {
            for (it, &ta) in th_axis.iter().enumerate().step_by(4) {
                let level = v_interp.eval(ua) + transform.delta(ta);
                // move to another theta on the grid and solve for u'
                let it2 = (it + th_axis.len() / 2) % th_axis.len();
                let tb = th_axis[it2];
                let target_v = level - transform.delta(tb);
                if target_v < lo_v || target_v > hi_v {
                    continue;
                }
                let ub = v_interp.inverse(target_v);
                let xa = model.g(j, ua, &[ta]);
                let xb = model.g(j, ub, &[tb]);
                let scale = xa.abs().max(xb.abs()).max(1.0);
                residual = residual.max((xa - xb).abs() / scale);
            }
        }
    }
    Ok(LocationScaleTransform {
        residual,
        ..transform
    })
}

fn self_ratio(model: &CoordinateModel, j: usize, u: f64, theta0: &[f64]) -> f64 {
    model.ratio(j, u, theta0, 0).unwrap_or(f64::NAN)
}
