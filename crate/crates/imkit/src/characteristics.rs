//! Characteristic-curve solver for systems of first-order homogeneous linear
//! PDEs in the auxiliary variables.
//!
//! The conditioning-variable equation requires eta to be constant along the
//! characteristic surfaces `du_i/dtau_k = g_{i,k}(u)`, where `g` collects the
//! parameter-partials of the inverse association at an anchor. This module
//! solves those characteristics with Picard iteration on the path-ordered
//! integral operator (tensor Chebyshev collocation in `tau`), certifies a
//! contraction rectangle from sampled field bounds, and traces invariants
//! back to a reference slice, which yields the conditioning variables.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::association::Association;
use crate::error::{ImError, Result};
use crate::quad::gauss_legendre;
use crate::stats::{chunked_mc, fmt_f64};

type FieldFn = dyn Fn(&[f64], &[f64]) -> DMatrix<f64> + Send + Sync;

/// Right-hand side of the characteristic system: an `n x p` matrix-valued
/// function of `(tau, u)`. Fields built from associations are autonomous
/// (independent of `tau`); the argument is kept for user-supplied fields.
#[derive(Clone)]
pub struct CharacteristicField {
    n: usize,
    p: usize,
    anchor: Vec<f64>,
    eval: Arc<FieldFn>,
}

impl CharacteristicField {
    pub fn from_fn(n: usize, p: usize, anchor: Vec<f64>, eval: Arc<FieldFn>) -> Self {
        Self { n, p, anchor, eval }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn anchor(&self) -> &[f64] {
        &self.anchor
    }

    pub fn eval(&self, tau: &[f64], u: &[f64]) -> DMatrix<f64> {
        (self.eval)(tau, u)
    }

    /// The same characteristics with reversed orientation. Solutions of the
    /// underlying PDE system are unchanged by a sign flip of the field.
    pub fn negated(&self) -> Self {
        let inner = Arc::clone(&self.eval);
        Self {
            n: self.n,
            p: self.p,
            anchor: self.anchor.clone(),
            eval: Arc::new(move |tau, u| -inner(tau, u)),
        }
    }

}

/// Builds the characteristic field of an association at the anchor: entry
/// `(i, k)` is the parameter-partial of the inverse, re-expressed as a
/// function of `u` by substituting `x = a(u, anchor)`.
pub fn build_field(assoc: &Association, theta0: &[f64]) -> Result<CharacteristicField> {
    assoc.params().check(theta0)?;
    let anchor = theta0.to_vec();
    let n = assoc.n_data();
    let p = assoc.params().dim();
    let a = assoc.clone();
    let th = anchor.clone();
    let eval: Arc<FieldFn> = Arc::new(move |_tau, u| {
        let nan = || DMatrix::from_element(n, p, f64::NAN);
        let x = match a.forward(u, &th) {
            Ok(x) => x,
            Err(_) => return nan(),
        };
        a.du_dtheta_default(&x, &th).unwrap_or_else(|_| nan())
    });
    let field = CharacteristicField::from_fn(n, p, anchor, eval);
    // fail fast when the partials are undefined at the anchor itself
    let probe = vec![0.5; n];
    if !field.eval(&vec![0.0; p], &probe).iter().all(|v| v.is_finite()) {
        return Err(ImError::NonFinite(
            "association partials undefined at the anchor".into(),
        ));
    }
    Ok(field)
}

/// Solver configuration: the rectangle `I_a(tau0) x B_b(u0)`, the sup-norm
/// fixed-point tolerance, and iteration/collocation controls.
#[derive(Clone, Debug)]
pub struct PicardConfig {
    /// Half-width of the tau-rectangle per axis.
    pub half_widths: Vec<f64>,
    /// Radius of the Euclidean ball around `u0` the trajectory must stay in.
    pub radius: f64,
    pub tol: f64,
    pub max_iter: usize,
    /// Chebyshev collocation nodes per tau-axis (degree; node count is +1).
    pub degree: usize,
    /// Optional path ordering of the tau-axes for the operator integrals.
    pub axis_order: Option<Vec<usize>>,
}

impl PicardConfig {
    pub fn new(half_widths: Vec<f64>, radius: f64) -> Result<Self> {
        if half_widths.iter().any(|a| !(*a > 0.0)) || !(radius > 0.0) {
            return Err(ImError::InvalidInput(
                "rectangle half-widths and radius must be positive".into(),
            ));
        }
        Ok(Self {
            half_widths,
            radius,
            tol: 1e-10,
            max_iter: 60,
            degree: 12,
            axis_order: None,
        })
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn with_degree(mut self, degree: usize) -> Self {
        self.degree = degree.max(2);
        self
    }

    pub fn with_axis_order(mut self, order: Vec<usize>) -> Self {
        self.axis_order = Some(order);
        self
    }
}

/// Chebyshev–Lobatto nodes on `[c - a, c + a]`, in descending order.
fn cheb_nodes(center: f64, half_width: f64, degree: usize) -> Vec<f64> {
    (0..=degree)
        .map(|j| center + half_width * (j as f64 * std::f64::consts::PI / degree as f64).cos())
        .collect()
}

/// Normalized barycentric coefficients at `x` for Chebyshev–Lobatto nodes.
fn bary_coeffs(nodes: &[f64], x: f64) -> Vec<f64> {
    let m = nodes.len();
    let span = (nodes[0] - nodes[m - 1]).abs().max(1e-300);
    for (j, xj) in nodes.iter().enumerate() {
        if (x - xj).abs() < 1e-14 * span {
            let mut e = vec![0.0; m];
            e[j] = 1.0;
            return e;
        }
    }
    let mut num = vec![0.0; m];
    let mut den = 0.0;
    for (j, xj) in nodes.iter().enumerate() {
        let mut w = if j == 0 || j == m - 1 { 0.5 } else { 1.0 };
        if j % 2 == 1 {
            w = -w;
        }
        let c = w / (x - xj);
        num[j] = c;
        den += c;
    }
    num.iter_mut().for_each(|v| *v /= den);
    num
}

/// Solved characteristic surface on a certified rectangle, represented by
/// tensor Chebyshev collocation values.
#[derive(Clone, Debug)]
pub struct Trajectory {
    axes: Vec<Vec<f64>>,
    /// Flat node-major values, each of length `n`.
    values: Vec<Vec<f64>>,
    tau0: Vec<f64>,
    pub iterations_used: usize,
    pub final_residual: f64,
}

impl Trajectory {
    fn node_count(&self) -> usize {
        self.axes.iter().map(|a| a.len()).product()
    }

    fn node_coords(&self, mut flat: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.axes.len()];
        for (k, axis) in self.axes.iter().enumerate().rev() {
            out[k] = axis[flat % axis.len()];
            flat /= axis.len();
        }
        out
    }

    /// Value of the solution at `tau` by tensor barycentric interpolation.
    pub fn evaluate(&self, tau: &[f64]) -> Vec<f64> {
        let coeffs: Vec<Vec<f64>> = self
            .axes
            .iter()
            .zip(tau)
            .map(|(nodes, x)| bary_coeffs(nodes, *x))
            .collect();
        let n = self.values[0].len();
        let mut acc = vec![0.0; n];
        for flat in 0..self.node_count() {
            let mut w = 1.0;
            let mut rem = flat;
            for (k, axis) in self.axes.iter().enumerate().rev() {
                w *= coeffs[k][rem % axis.len()];
                rem /= axis.len();
            }
            if w == 0.0 {
                continue;
            }
            for (a, v) in acc.iter_mut().zip(&self.values[flat]) {
                *a += w * v;
            }
        }
        acc
    }

    /// CSV sampling of the surface: `tau_1,...,tau_p,u_1,...,u_n`.
    pub fn to_csv(&self, samples_per_axis: usize) -> String {
        let p = self.axes.len();
        let n = self.values[0].len();
        let mut out = String::new();
        for k in 0..p {
            out.push_str(&format!("tau_{},", k + 1));
        }
        for i in 0..n {
            out.push_str(&format!("u_{}", i + 1));
            out.push(if i + 1 == n { '\n' } else { ',' });
        }
        let axes: Vec<Vec<f64>> = self
            .axes
            .iter()
            .map(|nodes| {
                let lo = nodes[nodes.len() - 1];
                let hi = nodes[0];
                (0..samples_per_axis)
                    .map(|i| lo + (hi - lo) * i as f64 / (samples_per_axis - 1) as f64)
                    .collect()
            })
            .collect();
        let mut idx = vec![0usize; p];
        loop {
            let tau: Vec<f64> = idx.iter().zip(&axes).map(|(i, ax)| ax[*i]).collect();
            let u = self.evaluate(&tau);
            for t in &tau {
                out.push_str(&fmt_f64(*t));
                out.push(',');
            }
            for (i, v) in u.iter().enumerate() {
                out.push_str(&fmt_f64(*v));
                out.push(if i + 1 == u.len() { '\n' } else { ',' });
            }
            // odometer increment
            let mut k = p;
            loop {
                if k == 0 {
                    return out;
                }
                k -= 1;
                idx[k] += 1;
                if idx[k] < axes[k].len() {
                    break;
                }
                idx[k] = 0;
            }
        }
    }

    fn tau0(&self) -> &[f64] {
        &self.tau0
    }
}

/// One application of the path-ordered integral operator to the current
/// iterate, evaluated at every collocation node.
fn apply_operator(
    field: &CharacteristicField,
    u0: &[f64],
    tau0: &[f64],
    traj: &Trajectory,
    segments: usize,
    order: &[usize],
) -> Vec<Vec<f64>> {
    let n = field.n();
    (0..traj.node_count())
        .map(|flat| {
            let tau = traj.node_coords(flat);
            let mut val = u0.to_vec();
            for (pos, &axis) in order.iter().enumerate() {
                // path point: axes earlier in the order sit at the base,
                // later axes at their final values, the current axis sweeps
                let mut pt = tau.clone();
                for &earlier in &order[..pos] {
                    pt[earlier] = tau0[earlier];
                }
                let lo = tau0[axis];
                let hi = tau[axis];
                if lo == hi {
                    continue;
                }
                for i in 0..n {
                    let contrib = gauss_legendre(
                        |s| {
                            let mut q = pt.clone();
                            q[axis] = s;
                            let u = traj.evaluate(&q);
                            field.eval(&q, &u)[(i, axis)]
                        },
                        lo,
                        hi,
                        segments,
                    );
                    val[i] += contrib;
                }
            }
            val
        })
        .collect()
}

fn sup_diff(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| x.iter().zip(y).map(|(u, v)| (u - v).abs()))
        .fold(0.0, f64::max)
}

/// Fixed point of the Picard operator on the configured rectangle.
///
/// The operator is applied with composite Gauss–Legendre panel counts doubled
/// until one application is quadrature-converged to `tol / 10`; iterations
/// stop when the sup-norm change drops to `tol`. `iterations_used` counts the
/// applications that moved the iterate by more than `tol`, so a field without
/// `u`-dependence reports one iteration and a zero field reports none.
pub fn picard_solve(
    field: &CharacteristicField,
    u0: &[f64],
    tau0: &[f64],
    config: &PicardConfig,
) -> Result<Trajectory> {
    let p = field.p();
    let n = field.n();
    if config.half_widths.len() != p || u0.len() != n || tau0.len() != p {
        return Err(ImError::InvalidInput(
            "dimension mismatch between field, u0, tau0, and config".into(),
        ));
    }
    let order: Vec<usize> = match &config.axis_order {
        Some(o) => {
            let mut sorted = o.clone();
            sorted.sort_unstable();
            if sorted != (0..p).collect::<Vec<_>>() {
                return Err(ImError::InvalidInput(
                    "axis_order must be a permutation of the tau axes".into(),
                ));
            }
            o.clone()
        }
        None => (0..p).collect(),
    };

    let axes: Vec<Vec<f64>> = (0..p)
        .map(|k| cheb_nodes(tau0[k], config.half_widths[k], config.degree))
        .collect();
    let node_count: usize = axes.iter().map(|a| a.len()).product();
    let mut traj = Trajectory {
        axes,
        values: vec![u0.to_vec(); node_count],
        tau0: tau0.to_vec(),
        iterations_used: 0,
        final_residual: f64::INFINITY,
    };

    let mut residuals: Vec<f64> = Vec::new();
    let mut productive = 0usize;
    for _ in 0..config.max_iter {
        // quadrature refinement: double panels until the application settles
        let mut segments = 2;
        let mut new_vals = apply_operator(field, u0, tau0, &traj, segments, &order);
        loop {
            let refined = apply_operator(field, u0, tau0, &traj, 2 * segments, &order);
            let q_err = sup_diff(&new_vals, &refined);
            new_vals = refined;
            segments *= 2;
            if q_err <= config.tol / 10.0 || segments >= 64 {
                if q_err > config.tol / 10.0 {
                    return Err(ImError::Quadrature(format!(
                        "operator application not quadrature-converged: {q_err:.3e} at {segments} panels"
                    )));
                }
                break;
            }
        }
        for v in new_vals.iter().flatten() {
            if !v.is_finite() {
                return Err(ImError::NonFinite("field produced non-finite values".into()));
            }
        }
        // domain guard: stay inside the Euclidean ball around u0
        for v in &new_vals {
            let excursion: f64 = v
                .iter()
                .zip(u0)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            if excursion > config.radius {
                return Err(ImError::DomainExit {
                    radius: config.radius,
                    excursion,
                });
            }
        }
        let r = sup_diff(&new_vals, &traj.values);
        traj.values = new_vals;
        residuals.push(r);
        if r <= config.tol {
            traj.iterations_used = productive;
            traj.final_residual = r;
            return Ok(traj);
        }
        productive += 1;
        // non-contraction guard: residual non-decreasing three times running
        if residuals.len() >= 4 {
            let tail = &residuals[residuals.len() - 4..];
            if tail.windows(2).all(|w| w[1] >= w[0]) {
                return Err(ImError::Divergence {
                    residual: r,
                    stalled: 3,
                });
            }
        }
    }
    Err(ImError::Divergence {
        residual: *residuals.last().unwrap_or(&f64::INFINITY),
        stalled: 0,
    })
}

/// Evaluates the integral-equation residual of a solved trajectory at probe
/// points: `sup |Gamma(phi)(tau) - phi(tau)|`.
pub fn integral_equation_residual(
    field: &CharacteristicField,
    u0: &[f64],
    traj: &Trajectory,
    probes: &[Vec<f64>],
) -> f64 {
    let p = field.p();
    let order: Vec<usize> = (0..p).collect();
    let tau0 = traj.tau0().to_vec();
    probes
        .iter()
        .map(|tau| {
            let mut val = u0.to_vec();
            for (pos, &axis) in order.iter().enumerate() {
                let mut pt = tau.clone();
                for &earlier in &order[..pos] {
                    pt[earlier] = tau0[earlier];
                }
                for (i, acc) in val.iter_mut().enumerate() {
                    *acc += gauss_legendre(
                        |s| {
                            let mut q = pt.clone();
                            q[axis] = s;
                            let u = traj.evaluate(&q);
                            field.eval(&q, &u)[(i, axis)]
                        },
                        tau0[axis],
                        tau[axis],
                        32,
                    );
                }
            }
            let phi = traj.evaluate(tau);
            val.iter()
                .zip(&phi)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max)
        })
        .fold(0.0, f64::max)
}

/// Certified contraction bounds on `I_a(tau0) x B_b(u0)`: the sampled sup of
/// the field norm `M`, the sampled Lipschitz quotient `L`, and the half-width
/// `a = 0.9 * min(b / (2 p M), 1 / (p n L))`, shrunk to self-consistency.
pub fn certify_rectangle(
    field: &CharacteristicField,
    u0: &[f64],
    tau0: &[f64],
    b: f64,
) -> Result<(f64, f64, f64)> {
    if !(b > 0.0) {
        return Err(ImError::InvalidInput("ball radius b must be positive".into()));
    }
    let n = field.n();
    let p = field.p();

    // deterministic u-samples: center, axis directions, and one diagonal
    let mut dirs: Vec<Vec<f64>> = Vec::new();
    for i in 0..n {
        let mut d = vec![0.0; n];
        d[i] = 1.0;
        dirs.push(d.clone());
        d[i] = -1.0;
        dirs.push(d);
    }
    let diag = vec![1.0 / (n as f64).sqrt(); n];
    dirs.push(diag.iter().map(|v| -v).collect());
    dirs.push(diag);
    let mut u_samples: Vec<Vec<f64>> = vec![u0.to_vec()];
    for r in [0.25, 0.5, 0.75, 1.0] {
        for d in &dirs {
            u_samples.push(
                u0.iter()
                    .zip(d)
                    .map(|(c, dd)| c + r * b * dd)
                    .collect::<Vec<f64>>(),
            );
        }
    }

    let mut a = f64::INFINITY;
    let mut m_sup = 0.0;
    let mut lips = 0.0;
    for _ in 0..20 {
        let tau_samples: Vec<Vec<f64>> = if a.is_finite() {
            let axes: Vec<Vec<f64>> = (0..p)
                .map(|k| vec![tau0[k] - a, tau0[k], tau0[k] + a])
                .collect();
            product(&axes)
        } else {
            vec![tau0.to_vec()]
        };
        m_sup = 0.0;
        lips = 0.0;
        for tau in &tau_samples {
            let evals: Vec<(usize, DMatrix<f64>)> = u_samples
                .iter()
                .enumerate()
                .map(|(i, u)| (i, field.eval(tau, u)))
                .collect();
            for (_, g) in &evals {
                let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
                if !norm.is_finite() {
                    return Err(ImError::NonFinite(
                        "field unbounded on the sample grid".into(),
                    ));
                }
                m_sup = f64::max(m_sup, norm);
            }
            for i in 0..evals.len() {
                for j in (i + 1)..evals.len() {
                    let du: f64 = u_samples[i]
                        .iter()
                        .zip(&u_samples[j])
                        .map(|(x, y)| (x - y) * (x - y))
                        .sum::<f64>()
                        .sqrt();
                    if du < 1e-12 {
                        continue;
                    }
                    let dg: f64 = (&evals[i].1 - &evals[j].1)
                        .iter()
                        .map(|v| v * v)
                        .sum::<f64>()
                        .sqrt();
                    lips = f64::max(lips, dg / du);
                }
            }
        }
        let mut bound = b / (2.0 * p as f64 * m_sup.max(1e-300));
        if lips > 1e-10 {
            bound = bound.min(1.0 / (p as f64 * n as f64 * lips));
        }
        let a_new = (0.9 * bound).min(a);
        if a.is_finite() && (a - a_new) <= 0.01 * a {
            a = a_new;
            break;
        }
        a = a_new;
    }
    Ok((m_sup, lips, a))
}

fn product(axes: &[Vec<f64>]) -> Vec<Vec<f64>> {
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

/// Traces the characteristic through `u` back to the reference slice
/// `{u : u_1 = slice[0], ..., u_p = slice[p-1]}` and returns the remaining
/// `n - p` coordinates there. These are invariant along characteristics, so
/// they define conditioning variables. Verifies that the invariants have a
/// numerically full-rank Jacobian in `u` (independence).
pub fn trace_invariants(
    field: &CharacteristicField,
    u: &[f64],
    slice: &[f64],
    config: &PicardConfig,
) -> Result<Vec<f64>> {
    let inv = trace_invariants_unchecked(field, u, slice, config)?;
    let n = field.n();
    let p = field.p();
    // finite-difference Jacobian of the invariant map
    let mut jac = DMatrix::zeros(n - p, n);
    for c in 0..n {
        let h = 1e-5 * u[c].abs().max(1.0);
        let mut up = u.to_vec();
        up[c] += h;
        let fp = trace_invariants_unchecked(field, &up, slice, config)?;
        up[c] = u[c] - h;
        let fm = trace_invariants_unchecked(field, &up, slice, config)?;
        for r in 0..(n - p) {
            jac[(r, c)] = (fp[r] - fm[r]) / (2.0 * h);
        }
    }
    let svd = jac.svd(false, false);
    let mut svals: Vec<f64> = svd.singular_values.iter().copied().collect();
    svals.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let smax = svals[0].max(1e-300);
    let rank = svals.iter().filter(|s| **s > 1e-8 * smax).count();
    if rank < n - p {
        return Err(ImError::DependentInvariants {
            rank,
            expected: n - p,
        });
    }
    Ok(inv)
}

/// The trace itself, without the independence certificate.
pub fn trace_invariants_unchecked(
    field: &CharacteristicField,
    u: &[f64],
    slice: &[f64],
    config: &PicardConfig,
) -> Result<Vec<f64>> {
    let n = field.n();
    let p = field.p();
    if slice.len() != p {
        return Err(ImError::InvalidInput(
            "reference slice needs one value per parameter axis".into(),
        ));
    }
    if n <= p {
        return Err(ImError::InvalidInput(
            "invariants need auxiliary dimension above the parameter dimension".into(),
        ));
    }
    let target = DVector::from_column_slice(slice);
    let mut u_cur = u.to_vec();
    let tau0 = vec![0.0; p];

    for _hop in 0..500 {
        let head = DVector::from_iterator(p, u_cur[..p].iter().copied());
        if (&head - &target).amax() <= 1e-10 * (1.0 + target.amax()) {
            return Ok(u_cur[p..].to_vec());
        }
        // solve on a patch anchored at the current point, Newton in tau
        let traj = picard_solve(field, &u_cur, &tau0, config)?;
        let mut tau = vec![0.0; p];
        let mut clamped = false;
        for _newton in 0..50 {
            let u_here = traj.evaluate(&tau);
            let f = DVector::from_iterator(p, u_here[..p].iter().copied()) - &target;
            if f.amax() <= 1e-12 * (1.0 + target.amax()) {
                let out = traj.evaluate(&tau);
                return Ok(out[p..].to_vec());
            }
            let g = field.eval(&tau, &u_here);
            let jac = g.view((0, 0), (p, p)).into_owned();
            let step = jac.lu().solve(&(-f)).ok_or_else(|| {
                ImError::SliceNotReached("singular top block of the field".into())
            })?;
            let mut next: Vec<f64> = tau.iter().zip(step.iter()).map(|(t, s)| t + s).collect();
            // clamp into the patch rectangle
            clamped = false;
            for k in 0..p {
                let a = config.half_widths[k];
                if next[k] > a {
                    next[k] = a;
                    clamped = true;
                } else if next[k] < -a {
                    next[k] = -a;
                    clamped = true;
                }
            }
            let moved: f64 = next
                .iter()
                .zip(&tau)
                .map(|(a_, b_)| (a_ - b_).abs())
                .fold(0.0, f64::max);
            tau = next;
            if clamped || moved < 1e-15 {
                break;
            }
        }
        if !clamped {
            // Newton stalled inside the patch without converging
            return Err(ImError::SliceNotReached(
                "stalled before reaching the slice".into(),
            ));
        }
        // hop: continue from the patch boundary point along the curve
        u_cur = traj.evaluate(&tau);
    }
    Err(ImError::SliceNotReached(format!(
        "chain limit reached; current head {:?}",
        &u_cur[..p]
    )))
}

/// Certifies a candidate conditioning variable: the maximum over sampled
/// auxiliaries and parameter coordinates of the central finite-difference
/// derivative of `eta(u(x, theta))` at the anchor, normalized per sample by
/// `max(1, |eta(u)|)`.
pub fn verify_local_conditioning(
    eta: &(dyn Fn(&[f64]) -> f64 + Sync),
    assoc: &Association,
    theta0: &[f64],
    sample_size: usize,
    fd_step: f64,
    seed: u64,
) -> Result<f64> {
    assoc.params().check(theta0)?;
    let p = assoc.params().dim();
    let steps: Vec<f64> = theta0.iter().map(|t| fd_step * t.abs().max(1.0)).collect();
    assoc.params().check_stencil(theta0, &steps)?;

    let per_sample: Vec<Result<f64>> = chunked_mc(sample_size, seed, 0xe7a, |rng| {
        let u = assoc.aux().sample(rng);
        let x = assoc.forward(&u, theta0)?;
        let scale = eta(&u).abs().max(1.0);
        let mut worst: f64 = 0.0;
        let mut th = theta0.to_vec();
        for k in 0..p {
            th[k] = theta0[k] + steps[k];
            let up = assoc.inverse(&x, &th)?;
            th[k] = theta0[k] - steps[k];
            let um = assoc.inverse(&x, &th)?;
            th[k] = theta0[k];
            let d = (eta(&up) - eta(&um)) / (2.0 * steps[k]);
            worst = worst.max(d.abs() / scale);
        }
        Ok(worst)
    });
    let mut max_rel: f64 = 0.0;
    for r in per_sample {
        max_rel = max_rel.max(r?);
    }
    Ok(max_rel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::gaussian_mean_model;
    use approx::assert_relative_eq;

    fn constant_field(n: usize, cols: Vec<Vec<f64>>) -> CharacteristicField {
        let p = cols.len();
        CharacteristicField::from_fn(
            n,
            p,
            vec![0.0; p],
            Arc::new(move |_tau, _u| {
                DMatrix::from_fn(cols[0].len(), cols.len(), |i, k| cols[k][i])
            }),
        )
    }

    #[test]
    fn gaussian_mean_field_is_minus_one() {
        let assoc = gaussian_mean_model(2, 1.0).unwrap();
        let field = build_field(&assoc, &[0.3]).unwrap();
        let g = field.eval(&[0.0], &[0.1, -0.4]);
        assert_relative_eq!(g[(0, 0)], -1.0, max_relative = 1e-9);
        assert_relative_eq!(g[(1, 0)], -1.0, max_relative = 1e-9);
        // field independent of u
        let g2 = field.eval(&[0.0], &[2.0, 5.0]);
        assert_relative_eq!(g[(0, 0)], g2[(0, 0)], max_relative = 1e-9);
    }

    #[test]
    fn zero_field_stays_put() {
        let f = constant_field(3, vec![vec![0.0, 0.0, 0.0]]);
        let cfg = PicardConfig::new(vec![1.0], 1.0).unwrap();
        let traj = picard_solve(&f, &[0.4, -0.2, 1.0], &[0.0], &cfg).unwrap();
        assert_eq!(traj.iterations_used, 0);
        let v = traj.evaluate(&[0.7]);
        assert_relative_eq!(v[0], 0.4, epsilon = 1e-13);
        assert_relative_eq!(v[2], 1.0, epsilon = 1e-13);
    }

    #[test]
    fn constant_two_axis_field_exact_in_one_iteration() {
        // du_i/dtau_1 = 1, du_i/dtau_2 = c_i
        let c = [0.5, 0.25, 0.125];
        let f = constant_field(3, vec![vec![1.0, 1.0, 1.0], c.to_vec()]);
        let cfg = PicardConfig::new(vec![1.0, 1.0], 4.0).unwrap().with_tol(1e-12);
        let traj = picard_solve(&f, &[0.0, 0.0, 0.0], &[0.0, 0.0], &cfg).unwrap();
        assert_eq!(traj.iterations_used, 1);
        for (t1, t2) in [(0.3, -0.8), (1.0, 1.0), (-0.77, 0.13)] {
            let v = traj.evaluate(&[t1, t2]);
            for i in 0..3 {
                assert_relative_eq!(v[i], t1 + c[i] * t2, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn exponential_field_matches_closed_form() {
        // du/dtau = u, u(0) = 1 -> e^tau on |tau| <= 0.5
        let f = CharacteristicField::from_fn(
            1,
            1,
            vec![0.0],
            Arc::new(|_tau, u| DMatrix::from_element(1, 1, u[0])),
        );
        let cfg = PicardConfig::new(vec![0.5], 1.5).unwrap().with_tol(1e-11);
        let traj = picard_solve(&f, &[1.0], &[0.0], &cfg).unwrap();
        for &t in &[-0.5, -0.2, 0.0, 0.31, 0.5] {
            assert_relative_eq!(traj.evaluate(&[t])[0], t.exp(), epsilon = 1e-8);
        }
        assert!(traj.iterations_used > 1);
    }

    #[test]
    fn integral_equation_residual_small_on_verification_grid() {
        let f = CharacteristicField::from_fn(
            1,
            1,
            vec![0.0],
            Arc::new(|_tau, u| DMatrix::from_element(1, 1, u[0])),
        );
        let cfg = PicardConfig::new(vec![0.5], 1.5).unwrap().with_tol(1e-11);
        let traj = picard_solve(&f, &[1.0], &[0.0], &cfg).unwrap();
        let probes: Vec<Vec<f64>> = (0..25)
            .map(|i| vec![-0.5 + i as f64 / 24.0])
            .collect();
        let r = integral_equation_residual(&f, &[1.0], &traj, &probes);
        assert!(r <= 1e-10, "residual {r}");
    }

    #[test]
    fn path_order_independent_for_constant_fields() {
        let c = [2.0, -0.5];
        let f = constant_field(2, vec![vec![1.0, 1.0], c.to_vec()]);
        let base = PicardConfig::new(vec![0.8, 0.8], 4.0).unwrap();
        let t12 = picard_solve(&f, &[0.1, 0.2], &[0.0, 0.0], &base.clone()).unwrap();
        let t21 = picard_solve(
            &f,
            &[0.1, 0.2],
            &[0.0, 0.0],
            &base.with_axis_order(vec![1, 0]),
        )
        .unwrap();
        for (a, b) in [(0.5, -0.3), (0.8, 0.8)] {
            let va = t12.evaluate(&[a, b]);
            let vb = t21.evaluate(&[a, b]);
            for i in 0..2 {
                assert!((va[i] - vb[i]).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn divergence_and_domain_exit_detected() {
        // quadratic blow-up field leaves the ball
        let f = CharacteristicField::from_fn(
            1,
            1,
            vec![0.0],
            Arc::new(|_tau, u| DMatrix::from_element(1, 1, u[0] * u[0])),
        );
        let cfg = PicardConfig::new(vec![2.0], 0.4).unwrap();
        let err = picard_solve(&f, &[1.0], &[0.0], &cfg).unwrap_err();
        assert!(
            matches!(err, ImError::DomainExit { .. } | ImError::Divergence { .. }),
            "{err}"
        );
    }

    #[test]
    fn certify_constant_field_bounds() {
        // |g| = 2 constant, L = 0: a = 0.9 * b / (2 p M)
        let f = constant_field(1, vec![vec![2.0]]);
        let (m, l, a) = certify_rectangle(&f, &[0.0], &[0.0], 1.0).unwrap();
        assert_relative_eq!(m, 2.0, epsilon = 1e-12);
        assert!(l <= 1e-10);
        assert_relative_eq!(a, 0.9 * 1.0 / (2.0 * 2.0), epsilon = 1e-12);
    }

    #[test]
    fn certify_identity_field_lipschitz() {
        let f = CharacteristicField::from_fn(
            1,
            1,
            vec![0.0],
            Arc::new(|_tau, u| DMatrix::from_element(1, 1, u[0])),
        );
        let (m, l, a) = certify_rectangle(&f, &[1.0], &[0.0], 0.5).unwrap();
        assert_relative_eq!(l, 1.0, epsilon = 1e-9);
        assert!(m <= 1.5 + 1e-12);
        assert!(a <= 0.9 / (1.0 * 1.0 * 1.0) + 1e-12);
    }

    #[test]
    fn trace_recovers_difference_invariant() {
        // two-observation location field: single invariant affinely
        // equivalent to u_2 - u_1
        let f = constant_field(2, vec![vec![-1.0, -1.0]]);
        let cfg = PicardConfig::new(vec![0.45], 4.0).unwrap();
        let inv = trace_invariants(&f, &[0.9, 0.4], &[0.0], &cfg).unwrap();
        assert_eq!(inv.len(), 1);
        assert_relative_eq!(inv[0], 0.4 - 0.9, epsilon = 1e-9);

        // already on the slice: invariants are its own tail coordinates
        let inv0 = trace_invariants_unchecked(&f, &[0.0, 0.7], &[0.0], &cfg).unwrap();
        assert_relative_eq!(inv0[0], 0.7, epsilon = 1e-12);
    }

    #[test]
    fn invariance_along_the_curve() {
        let c = [1.0, 0.6, 0.2];
        let f = constant_field(3, vec![c.to_vec()]);
        let cfg = PicardConfig::new(vec![0.45], 4.0).unwrap();
        let u = [0.3, -0.5, 0.8];
        let a = trace_invariants_unchecked(&f, &u, &[0.0], &cfg).unwrap();
        // move along the characteristic and re-trace
        let moved: Vec<f64> = u.iter().zip(&c).map(|(x, g)| x + 0.7 * g).collect();
        let b = trace_invariants_unchecked(&f, &moved, &[0.0], &cfg).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_relative_eq!(x, y, epsilon = 1e-8);
        }
    }

    #[test]
    fn conditioning_certificate_for_pivots() {
        let assoc = gaussian_mean_model(3, 1.0).unwrap();
        // eta = u_1 - u_2 is a global conditioning variable
        let eta = |u: &[f64]| u[0] - u[1];
        let worst = verify_local_conditioning(&eta, &assoc, &[0.4], 50, 1e-6, 9).unwrap();
        assert!(worst <= 1e-9, "{worst}");

        // constants are trivially conditioning
        let konst = |_u: &[f64]| 3.25;
        let w0 = verify_local_conditioning(&konst, &assoc, &[0.4], 20, 1e-6, 9).unwrap();
        assert_eq!(w0, 0.0);

        // eta = u_1 is not: derivative through the inverse is -1
        let not_cond = |u: &[f64]| u[0];
        let w1 = verify_local_conditioning(&not_cond, &assoc, &[0.4], 50, 1e-6, 9).unwrap();
        assert!(w1 > 0.1, "{w1}");
    }
}
