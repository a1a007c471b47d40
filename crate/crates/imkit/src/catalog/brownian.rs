//! Noisy-Brownian-path model: closed-form eigensystem of the differenced
//! covariance, minimal sufficient statistics, local conditioning variables,
//! conditional samplers built by slice-density quadrature, the signal
//! posterior, and the marginal fraction field for characteristic solving.
//!
//! Data are `n + 1` equally spaced path observations `y_0..y_n` of a Brownian
//! signal plus white noise. Serial differencing removes the intercept, and
//! projecting onto the eigenvectors of the tridiagonal difference covariance
//! gives `n` independent scaled chi-square(1) statistics
//! `Q_i = sigma^2 (lambda_i + phi) U_i`, with `phi` the scaled
//! signal-to-noise ratio. Inference works on `theta = (ln sigma^2, phi)`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::association::{Association, AuxiliaryDistribution, ParameterSpace};
use crate::characteristics::CharacteristicField;
use crate::engine::{Anchor, ConditionalAssociation};
use crate::error::{ImError, Result};
use crate::prs::PredictiveRandomSet;
use crate::quad::{adaptive_simpson, cumulative_trapezoid, interp_inverse, interp_linear};
use crate::stats::stream_rng;

/// The model at fixed `(sigma^2, phi)` with its eigensystem.
#[derive(Clone, Debug)]
pub struct BrownianModel {
    pub n: usize,
    pub sigma2: f64,
    pub phi: f64,
    pub lambdas: Vec<f64>,
    /// Columns are the orthonormal eigenvectors, matching `lambdas`.
    pub eigvecs: DMatrix<f64>,
}

impl BrownianModel {
    pub fn new(n: usize, sigma2: f64, phi: f64) -> Result<Self> {
        if n < 3 {
            return Err(ImError::Precondition("model needs n >= 3 increments".into()));
        }
        if !(sigma2 > 0.0) || !(phi > 0.0) {
            return Err(ImError::InvalidInput(
                "sigma^2 and phi must be positive".into(),
            ));
        }
        let (lambdas, eigvecs) = brownian_eigensystem(n)?;
        Ok(Self {
            n,
            sigma2,
            phi,
            lambdas,
            eigvecs,
        })
    }
}

/// The symmetric tridiagonal Toeplitz matrix with 2 on the diagonal and -1
/// off it: the covariance shape of the differenced path.
pub fn sigma_tridiagonal(n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            2.0
        } else if i.abs_diff(j) == 1 {
            -1.0
        } else {
            0.0
        }
    })
}

/// Closed-form eigensystem: `lambda_i = 2 - 2 cos(i pi / (n+1))` ascending,
/// eigenvector entries `sqrt(2/(n+1)) sin(i j pi / (n+1))`.
pub fn brownian_eigensystem(n: usize) -> Result<(Vec<f64>, DMatrix<f64>)> {
    if n < 3 {
        return Err(ImError::Precondition("eigensystem needs n >= 3".into()));
    }
    let denom = (n + 1) as f64;
    let lambdas: Vec<f64> = (1..=n)
        .map(|i| 2.0 - 2.0 * (i as f64 * std::f64::consts::PI / denom).cos())
        .collect();
    let scale = (2.0 / denom).sqrt();
    let eigvecs = DMatrix::from_fn(n, n, |j, i| {
        scale * (((i + 1) * (j + 1)) as f64 * std::f64::consts::PI / denom).sin()
    });
    Ok((lambdas, eigvecs))
}

/// Serial differences of the path projected onto the eigenvectors, squared:
/// the minimal sufficient statistics `Q`.
pub fn brownian_statistics(y: &[f64]) -> Result<Vec<f64>> {
    if y.len() < 4 {
        return Err(ImError::Precondition(
            "need at least 4 path observations (n >= 3 increments)".into(),
        ));
    }
    let n = y.len() - 1;
    let z: Vec<f64> = (1..=n).map(|i| y[i] - y[i - 1]).collect();
    let (_, v) = brownian_eigensystem(n)?;
    Ok((0..n)
        .map(|i| {
            let dot: f64 = (0..n).map(|j| v[(j, i)] * z[j]).sum();
            dot * dot
        })
        .collect())
}

/// Simulates `n + 1` path observations at the given noise variance and
/// signal-to-noise ratio `psi` (the internal scale parameter is
/// `phi = psi / n`). Deterministic given `seed`.
pub fn brownian_simulate_path(n: usize, sigma2: f64, psi: f64, seed: u64) -> Result<Vec<f64>> {
    if n < 3 || !(sigma2 > 0.0) || !(psi > 0.0) {
        return Err(ImError::InvalidInput(
            "need n >= 3, sigma2 > 0, psi > 0".into(),
        ));
    }
    let mut rng = stream_rng(seed, 0x0b0);
    let sd_noise = sigma2.sqrt();
    let sd_step = (psi * sigma2 / n as f64).sqrt();
    let mut signal = 0.0;
    let mut path = Vec::with_capacity(n + 1);
    let e0: f64 = rng.sample(rand_distr::StandardNormal);
    path.push(sd_noise * e0);
    for _ in 1..=n {
        let step: f64 = rng.sample(rand_distr::StandardNormal);
        signal += sd_step * step;
        let e: f64 = rng.sample(rand_distr::StandardNormal);
        path.push(signal + sd_noise * e);
    }
    Ok(path)
}

fn check_theta_dims(theta: &[f64]) -> (f64, f64) {
    (theta[0], theta[1])
}

/// Association for the statistics themselves: `Q_i = e^{theta_1}
/// (lambda_i + theta_2) U_i` with chi-square(1) auxiliaries.
/// `theta = (ln sigma^2, phi)`; `phi` may go down to `-lambda_1`, where the
/// model degenerates.
pub fn brownian_q_association(n: usize) -> Result<Association> {
    let (lambdas, _) = brownian_eigensystem(n)?;
    let lam = lambdas.clone();
    let lam_inv = lambdas.clone();
    let lam_du = lambdas;
    let phi_floor = -lam[0];
    let assoc = Association::new(
        format!("brownian-q(n={n})"),
        n,
        ParameterSpace::new(vec![
            (f64::NEG_INFINITY, f64::INFINITY),
            (phi_floor, f64::INFINITY),
        ])?,
        AuxiliaryDistribution::chi_square_1(n),
        Arc::new(move |u: &[f64], th: &[f64]| {
            let (ls2, phi) = check_theta_dims(th);
            u.iter()
                .enumerate()
                .map(|(i, ui)| ls2.exp() * (lam[i] + phi) * ui)
                .collect()
        }),
        Arc::new(move |x: &[f64], th: &[f64]| {
            let (ls2, phi) = check_theta_dims(th);
            x.iter()
                .enumerate()
                .map(|(i, qi)| {
                    if *qi <= 0.0 {
                        return Err(ImError::Inversion(format!(
                            "statistic {} = {qi} not positive; outside the model range",
                            i + 1
                        )));
                    }
                    Ok(qi * (-ls2).exp() / (lam_inv[i] + phi))
                })
                .collect()
        }),
    )?;
    Ok(assoc.with_du_dtheta(Arc::new(move |x: &[f64], th: &[f64]| {
        let (ls2, phi) = check_theta_dims(th);
        DMatrix::from_fn(x.len(), 2, |i, k| {
            let ui = x[i] * (-ls2).exp() / (lam_du[i] + phi);
            if k == 0 {
                -ui
            } else {
                -ui / (lam_du[i] + phi)
            }
        })
    })))
}

/// Log-scale variant: auxiliaries `V_i = ln U_i`, inverse
/// `V_i = ln Q_i - theta_1 - ln(lambda_i + theta_2)`. Its parameter-partials
/// are constant in the data, which makes the characteristic field constant.
pub fn brownian_v_association(n: usize) -> Result<Association> {
    let (lambdas, _) = brownian_eigensystem(n)?;
    let lam = lambdas.clone();
    let lam_inv = lambdas.clone();
    let lam_du = lambdas;
    let phi_floor = -lam[0];
    let assoc = Association::new(
        format!("brownian-v(n={n})"),
        n,
        ParameterSpace::new(vec![
            (f64::NEG_INFINITY, f64::INFINITY),
            (phi_floor, f64::INFINITY),
        ])?,
        AuxiliaryDistribution::log_chi_square_1(n),
        Arc::new(move |v: &[f64], th: &[f64]| {
            let (ls2, phi) = check_theta_dims(th);
            v.iter()
                .enumerate()
                .map(|(i, vi)| (ls2 + (lam[i] + phi).ln() + vi).exp())
                .collect()
        }),
        Arc::new(move |x: &[f64], th: &[f64]| {
            let (ls2, phi) = check_theta_dims(th);
            x.iter()
                .enumerate()
                .map(|(i, qi)| {
                    if *qi <= 0.0 {
                        return Err(ImError::Inversion(format!(
                            "statistic {} = {qi} not positive; log domain",
                            i + 1
                        )));
                    }
                    Ok(qi.ln() - ls2 - (lam_inv[i] + phi).ln())
                })
                .collect()
        }),
    )?;
    Ok(assoc.with_du_dtheta(Arc::new(move |x: &[f64], th: &[f64]| {
        let (_, phi) = check_theta_dims(th);
        DMatrix::from_fn(x.len(), 2, |i, k| {
            if k == 0 {
                -1.0
            } else {
                -1.0 / (lam_du[i] + phi)
            }
        })
    })))
}

/// The constant characteristic field of the log-scale model at the anchor,
/// in the orientation with unit first column: entry `(i, 0) = 1`,
/// entry `(i, 1) = 1/(lambda_i + phi_0)`. This is the negated
/// parameter-sensitivity field; both orientations have the same invariants.
pub fn brownian_v_field(n: usize, theta0: &[f64]) -> Result<CharacteristicField> {
    let (lambdas, _) = brownian_eigensystem(n)?;
    let phi0 = theta0[1];
    if phi0 <= -lambdas[0] {
        return Err(ImError::InvalidInput("phi0 must exceed -lambda_1".into()));
    }
    let cols: Vec<f64> = lambdas.iter().map(|l| 1.0 / (l + phi0)).collect();
    Ok(CharacteristicField::from_fn(
        n,
        2,
        theta0.to_vec(),
        Arc::new(move |_tau, _u| {
            DMatrix::from_fn(cols.len(), 2, |i, k| if k == 0 { 1.0 } else { cols[i] })
        }),
    ))
}

/// Coefficients of the local conditioning variables anchored at
/// `(ln sigma^2_0, phi_0)`: `H_i = ln u_i + c1_i ln u_a + c2_i ln u_b` for
/// every non-anchor index `i`, with the anchor pair `(a, b)`.
#[derive(Clone, Debug)]
pub struct BrownianConditioning {
    pub anchor_pair: (usize, usize),
    /// `(index i, c1, c2)` per conditioning variable, 0-based indices.
    pub coeffs: Vec<(usize, f64, f64)>,
    /// Observed values, computable from the data without `sigma^2`.
    pub observed: Vec<f64>,
    pub phi0: f64,
}

impl BrownianConditioning {
    /// Evaluates `H_i` (by position in `coeffs`) at an auxiliary vector `u`
    /// on the chi-square scale.
    pub fn h(&self, pos: usize, u: &[f64]) -> f64 {
        let (i, c1, c2) = self.coeffs[pos];
        u[i].ln() + c1 * u[self.anchor_pair.0].ln() + c2 * u[self.anchor_pair.1].ln()
    }
}

/// Conditioning variables of the statistics model at `theta0`, anchored on
/// the pair of smallest eigenvalues. `phi0` must be positive and every
/// statistic strictly positive.
pub fn brownian_conditioning(q: &[f64], theta0: &[f64]) -> Result<BrownianConditioning> {
    brownian_conditioning_with_pair(q, theta0, (0, 1))
}

/// Same with an explicit anchor pair (the two eigenvalue indices whose
/// auxiliaries remain unpredicted). The pair must have distinct eigenvalues.
pub fn brownian_conditioning_with_pair(
    q: &[f64],
    theta0: &[f64],
    pair: (usize, usize),
) -> Result<BrownianConditioning> {
    let n = q.len();
    if n < 3 {
        return Err(ImError::Precondition("conditioning needs n >= 3".into()));
    }
    let phi0 = theta0[1];
    if !(phi0 > 0.0) {
        return Err(ImError::Precondition(format!(
            "anchor phi_0 must be positive, got {phi0}"
        )));
    }
    for (i, qi) in q.iter().enumerate() {
        if !(*qi > 0.0) {
            return Err(ImError::Inversion(format!(
                "statistic {} = {qi} not positive; log domain",
                i + 1
            )));
        }
    }
    let (a, b) = pair;
    if a == b || a >= n || b >= n {
        return Err(ImError::InvalidInput("anchor pair must be two distinct indices".into()));
    }
    let (lambdas, _) = brownian_eigensystem(n)?;
    let la = lambdas[a] + phi0;
    let lb = lambdas[b] + phi0;
    if (lambdas[a] - lambdas[b]).abs() < 1e-12 {
        return Err(ImError::InvalidInput(
            "anchor eigenvalues must be distinct".into(),
        ));
    }
    let dl = lambdas[a] - lambdas[b];
    let mut coeffs = Vec::with_capacity(n - 2);
    let mut observed = Vec::with_capacity(n - 2);
    for i in 0..n {
        if i == a || i == b {
            continue;
        }
        let li = lambdas[i] + phi0;
        let c1 = (la * lb - la * li) / (dl * li);
        let c2 = (lb * li - la * lb) / (dl * li);
        coeffs.push((i, c1, c2));
        // observed value: sigma^2 cancels because 1 + c1 + c2 = 0
        observed.push(
            (q[i].ln() - li.ln()) + c1 * (q[a].ln() - la.ln()) + c2 * (q[b].ln() - lb.ln()),
        );
    }
    Ok(BrownianConditioning {
        anchor_pair: pair,
        coeffs,
        observed,
        phi0,
    })
}

/// Invariants of the log-scale characteristic field in closed form: the
/// value of each non-anchor coordinate when the characteristic is pushed
/// back to the slice where the anchor-pair coordinates vanish.
pub fn brownian_closed_form_invariants(n: usize, theta0: &[f64], v: &[f64]) -> Result<Vec<f64>> {
    let (lambdas, _) = brownian_eigensystem(n)?;
    let phi0 = theta0[1];
    let la = lambdas[0] + phi0;
    let lb = lambdas[1] + phi0;
    let dl = lambdas[0] - lambdas[1];
    Ok((2..n)
        .map(|i| {
            let li = lambdas[i] + phi0;
            let c1 = (la * lb - la * li) / (dl * li);
            let c2 = (lb * li - la * lb) / (dl * li);
            v[i] + c1 * v[0] + c2 * v[1]
        })
        .collect())
}

/// Tabulated two-dimensional conditional law of the anchor-pair log
/// auxiliaries given the observed conditioning values: slice density built
/// from chi-square(1) log-density products, normalized by adaptive
/// quadrature, sampled by inverse CDF on a product grid.
#[derive(Clone)]
pub struct ConditionalLaw2D {
    pub axis1: Vec<f64>,
    pub axis2: Vec<f64>,
    node_density: Vec<f64>,
    cdf1: Vec<f64>,
    cdf2: Vec<f64>,
    col_cdf: Vec<Vec<f64>>,
    maxdepth_surv: Vec<f64>,
    delta_vals: Vec<f64>,
    delta_cdf: Vec<f64>,
    pub log_normalizer: f64,
}

const LOG_CHI2_HALF_LOG_2PI: f64 = 0.918938533204672742; // ln sqrt(2 pi)

fn log_chi2_log_density(w: f64) -> f64 {
    0.5 * w - 0.5 * w.exp() - LOG_CHI2_HALF_LOG_2PI
}

impl ConditionalLaw2D {
    /// Builds the law with the full adaptive-quadrature normalization and
    /// its verification pass. `resolution` is the node count per axis of the
    /// sampling grid.
    pub fn build(cond: &BrownianConditioning, resolution: usize) -> Result<Self> {
        Self::build_impl(cond, resolution, true)
    }

    /// Grid-normalized build without the adaptive passes. Every tabulated
    /// quantity the sets and samplers use is self-normalized, so this is the
    /// right tool inside repeated-simulation loops.
    pub fn build_fast(cond: &BrownianConditioning, resolution: usize) -> Result<Self> {
        Self::build_impl(cond, resolution, false)
    }

    fn build_impl(
        cond: &BrownianConditioning,
        resolution: usize,
        adaptive_normalizer: bool,
    ) -> Result<Self> {
        let m = resolution.max(41);
        let log_density = |w1: f64, w2: f64| -> f64 {
            let mut l = log_chi2_log_density(w1) + log_chi2_log_density(w2);
            for (pos, &(_, c1, c2)) in cond.coeffs.iter().enumerate() {
                let w = cond.observed[pos] - c1 * w1 - c2 * w2;
                l += log_chi2_log_density(w);
            }
            l
        };

        // coarse scan for the mode and a mass-bearing box; chi-square(1) grids
        // are clipped at the 1e-10 quantile (integrable singularity at zero)
        let w_lo = -45.600119154591459; // ln of the 1e-10 quantile
        let w_hi = 5.0;
        let coarse = 81;
        let mut best = f64::NEG_INFINITY;
        let mut mode_w1 = 0.0;
        let step = (w_hi - w_lo) / (coarse - 1) as f64;
        let mut lvals = vec![0.0; coarse * coarse];
        for i in 0..coarse {
            for j in 0..coarse {
                let l = log_density(w_lo + i as f64 * step, w_lo + j as f64 * step);
                lvals[i * coarse + j] = l;
                if l > best {
                    best = l;
                    mode_w1 = w_lo + i as f64 * step;
                }
            }
        }
        if !best.is_finite() {
            return Err(ImError::NonFinite("slice density has no finite mode".into()));
        }
        let drop = 30.0;
        let (mut lo1, mut hi1, mut lo2, mut hi2) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
        for i in 0..coarse {
            for j in 0..coarse {
                if lvals[i * coarse + j] >= best - drop {
                    let w1 = w_lo + i as f64 * step;
                    let w2 = w_lo + j as f64 * step;
                    lo1 = lo1.min(w1);
                    hi1 = hi1.max(w1);
                    lo2 = lo2.min(w2);
                    hi2 = hi2.max(w2);
                }
            }
        }
        let pad = 1.5 * step;
        lo1 = (lo1 - pad).max(w_lo);
        hi1 = (hi1 + pad).min(w_hi);
        lo2 = (lo2 - pad).max(w_lo);
        hi2 = (hi2 + pad).min(w_hi);

        // The conditional slice narrows sharply in the tails, so plain
        // adaptive panels can step over it. Each inner integral is split at
        // a scanned argmax of its slice, and the outer one at the mode.
        let inner_mass = |w1: f64, tol: f64, offset: f64| -> f64 {
            let g = |w2: f64| (log_density(w1, w2) - offset).exp();
            let scan = 128;
            let mut arg = lo2;
            let mut peak = f64::NEG_INFINITY;
            for k in 0..=scan {
                let w2 = lo2 + (hi2 - lo2) * k as f64 / scan as f64;
                let v = g(w2);
                if v > peak {
                    peak = v;
                    arg = w2;
                }
            }
            let left = adaptive_simpson(&g, lo2, arg, 0.5 * tol).unwrap_or(f64::NAN);
            let right = adaptive_simpson(&g, arg, hi2, 0.5 * tol).unwrap_or(f64::NAN);
            left + right
        };
        let outer_mass = |inner_tol: f64, outer_tol: f64, offset: f64| -> Result<f64> {
            let g = |w1: f64| inner_mass(w1, inner_tol, offset);
            let split = mode_w1.clamp(lo1, hi1);
            let left = adaptive_simpson(&g, lo1, split, 0.5 * outer_tol)?;
            let right = adaptive_simpson(&g, split, hi1, 0.5 * outer_tol)?;
            Ok(left + right)
        };

        let log_normalizer = if adaptive_normalizer {
            let z = outer_mass(1e-11, 1e-9, best)?;
            if !z.is_finite() || z <= 0.0 {
                return Err(ImError::Quadrature(format!(
                    "normalizer not finite over box [{lo1},{hi1}]x[{lo2},{hi2}]"
                )));
            }
            let log_normalizer = best + z.ln();
            // verification pass at a different tolerance: the normalized
            // density must integrate to 1 within 1e-6
            let total = outer_mass(1e-12, 5e-10, log_normalizer)?;
            if (total - 1.0).abs() > 1e-6 {
                return Err(ImError::Quadrature(format!(
                    "normalized mass {total} deviates from 1 beyond 1e-6 \
                     (box [{lo1},{hi1}]x[{lo2},{hi2}], {m} nodes)"
                )));
            }
            log_normalizer
        } else {
            // trapezoid normalizer on the sampling grid itself
            let mut grid_mass = 0.0;
            let h1 = (hi1 - lo1) / (m - 1) as f64;
            let h2 = (hi2 - lo2) / (m - 1) as f64;
            for i in 0..m {
                let w1 = lo1 + i as f64 * h1;
                let wi = if i == 0 || i == m - 1 { 0.5 } else { 1.0 };
                for j in 0..m {
                    let w2 = lo2 + j as f64 * h2;
                    let wj = if j == 0 || j == m - 1 { 0.5 } else { 1.0 };
                    grid_mass += wi * wj * (log_density(w1, w2) - best).exp();
                }
            }
            grid_mass *= h1 * h2;
            best + grid_mass.ln()
        };

        let axis1: Vec<f64> = (0..m)
            .map(|i| lo1 + (hi1 - lo1) * i as f64 / (m - 1) as f64)
            .collect();
        let axis2: Vec<f64> = (0..m)
            .map(|i| lo2 + (hi2 - lo2) * i as f64 / (m - 1) as f64)
            .collect();
        let mut node_density = vec![0.0; m * m];
        for (i, w1) in axis1.iter().enumerate() {
            for (j, w2) in axis2.iter().enumerate() {
                node_density[i * m + j] = (log_density(*w1, *w2) - log_normalizer).exp();
            }
        }

        // marginals and per-column conditionals by trapezoid on the grid
        let marg1: Vec<f64> = (0..m)
            .map(|i| trapz(&axis2, &node_density[i * m..(i + 1) * m]))
            .collect();
        let marg2: Vec<f64> = (0..m)
            .map(|j| {
                let col: Vec<f64> = (0..m).map(|i| node_density[i * m + j]).collect();
                trapz(&axis1, &col)
            })
            .collect();
        let cdf1 = normalized_cdf(&axis1, &marg1);
        let cdf2 = normalized_cdf(&axis2, &marg2);
        let col_cdf: Vec<Vec<f64>> = (0..m)
            .map(|i| normalized_cdf(&axis2, &node_density[i * m..(i + 1) * m]))
            .collect();

        // survival table of the max-depth statistic under the grid law
        let bins = 2048;
        let mut bin_mass = vec![0.0; bins + 1];
        for i in 0..(m - 1) {
            for j in 0..(m - 1) {
                let mass = 0.25
                    * (node_density[i * m + j]
                        + node_density[(i + 1) * m + j]
                        + node_density[i * m + j + 1]
                        + node_density[(i + 1) * m + j + 1])
                    * (axis1[i + 1] - axis1[i])
                    * (axis2[j + 1] - axis2[j]);
                let c1 = 0.5 * (axis1[i] + axis1[i + 1]);
                let c2 = 0.5 * (axis2[j] + axis2[j + 1]);
                let d1 = (2.0 * interp_linear(&axis1, &cdf1, c1) - 1.0).abs();
                let d2 = (2.0 * interp_linear(&axis2, &cdf2, c2) - 1.0).abs();
                let d = d1.max(d2).clamp(0.0, 1.0);
                bin_mass[(d * bins as f64) as usize] += mass;
            }
        }
        let total_mass: f64 = bin_mass.iter().sum();
        let mut maxdepth_surv = vec![0.0; bins + 1];
        let mut acc = 0.0;
        for k in (0..=bins).rev() {
            acc += bin_mass[k] / total_mass;
            maxdepth_surv[k] = acc;
        }

        // CDF of w1 - w2, tabulated to match the product-grid sampler: the
        // outer sum runs over the w1 marginal's trapezoid weights and the
        // inner probability reads the per-column conditional tables
        let mut mass1: Vec<f64> = vec![0.0; m];
        for i in 0..m {
            let w = if i == 0 || i == m - 1 { 0.5 } else { 1.0 };
            mass1[i] = w * marg1[i] * (axis1[1] - axis1[0]);
        }
        let mtot: f64 = mass1.iter().sum();
        mass1.iter_mut().for_each(|v| *v /= mtot);
        let d_lo = axis1[0] - axis2[m - 1];
        let d_hi = axis1[m - 1] - axis2[0];
        let probes = 1024;
        let mut delta_vals = Vec::with_capacity(probes + 1);
        let mut delta_cdf = Vec::with_capacity(probes + 1);
        for k in 0..=probes {
            let d = d_lo + (d_hi - d_lo) * k as f64 / probes as f64;
            // P(w1 - w2 <= d) = E_w1[ P(w2 >= w1 - d | w1) ]
            let mut p = 0.0;
            for i in 0..m {
                p += mass1[i] * (1.0 - interp_linear(&axis2, &col_cdf[i], axis1[i] - d));
            }
            delta_vals.push(d);
            delta_cdf.push(p.clamp(0.0, 1.0));
        }
        // enforce monotone nondecreasing against rounding
        for k in 1..delta_cdf.len() {
            if delta_cdf[k] < delta_cdf[k - 1] {
                delta_cdf[k] = delta_cdf[k - 1];
            }
        }

        Ok(Self {
            axis1,
            axis2,
            node_density,
            cdf1,
            cdf2,
            col_cdf,
            maxdepth_surv,
            delta_vals,
            delta_cdf,
            log_normalizer,
        })
    }

    pub fn marginal_cdf(&self, coord: usize, w: f64) -> f64 {
        if coord == 0 {
            interp_linear(&self.axis1, &self.cdf1, w)
        } else {
            interp_linear(&self.axis2, &self.cdf2, w)
        }
    }

    /// Per-coordinate depth in conditional-probability units, combined by max.
    pub fn max_depth(&self, w: &[f64]) -> f64 {
        let d1 = (2.0 * self.marginal_cdf(0, w[0]) - 1.0).abs();
        let d2 = (2.0 * self.marginal_cdf(1, w[1]) - 1.0).abs();
        d1.max(d2).clamp(0.0, 1.0)
    }

    /// Survival function of the max-depth statistic under this law.
    pub fn max_depth_survival(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 1.0;
        }
        if t >= 1.0 {
            return 0.0;
        }
        let bins = self.maxdepth_surv.len() - 1;
        let pos = t * bins as f64;
        let k = (pos as usize).min(bins - 1);
        let frac = pos - k as f64;
        self.maxdepth_surv[k] * (1.0 - frac) + self.maxdepth_surv[k + 1] * frac
    }

    /// CDF of the difference `w_1 - w_2` under this law.
    pub fn delta_cdf(&self, d: f64) -> f64 {
        interp_linear(&self.delta_vals, &self.delta_cdf, d).clamp(0.0, 1.0)
    }

    /// Inverse-CDF sample on the product grid.
    pub fn sample(&self, rng: &mut rand_chacha::ChaCha8Rng) -> (f64, f64) {
        let w1 = interp_inverse(&self.axis1, &self.cdf1, rng.gen::<f64>());
        // blend neighbouring column conditionals at w1
        let m = self.axis1.len();
        let j = self
            .axis1
            .partition_point(|v| *v < w1)
            .clamp(1, m - 1);
        let t = ((w1 - self.axis1[j - 1]) / (self.axis1[j] - self.axis1[j - 1])).clamp(0.0, 1.0);
        let blended: Vec<f64> = self.col_cdf[j - 1]
            .iter()
            .zip(&self.col_cdf[j])
            .map(|(a, b)| (1.0 - t) * a + t * b)
            .collect();
        let w2 = interp_inverse(&self.axis2, &blended, rng.gen::<f64>());
        (w1, w2)
    }

    /// Conditional medians (the per-coordinate set centers).
    pub fn medians(&self) -> (f64, f64) {
        (
            interp_inverse(&self.axis1, &self.cdf1, 0.5),
            interp_inverse(&self.axis2, &self.cdf2, 0.5),
        )
    }
}

fn trapz(xs: &[f64], ys: &[f64]) -> f64 {
    let mut acc = 0.0;
    for i in 1..xs.len() {
        acc += 0.5 * (ys[i] + ys[i - 1]) * (xs[i] - xs[i - 1]);
    }
    acc
}

fn normalized_cdf(xs: &[f64], density: &[f64]) -> Vec<f64> {
    let mut cdf = cumulative_trapezoid(xs, density);
    let total = *cdf.last().unwrap();
    if total > 0.0 {
        cdf.iter_mut().for_each(|v| *v /= total);
    }
    cdf
}

/// Default grid resolution for the conditional law.
pub const CONDITIONAL_GRID_RESOLUTION: usize = 201;

/// Local conditional association on the anchor pair `(Q_1, Q_2)` with
/// `(ln U_1, ln U_2)` following the conditional law given the observed
/// conditioning values, plus an exactly grid-calibrated nested set on it.
pub fn brownian_conditional_im(
    q: &[f64],
    theta0: &[f64],
) -> Result<(ConditionalAssociation, PredictiveRandomSet)> {
    brownian_conditional_im_with_resolution(q, theta0, CONDITIONAL_GRID_RESOLUTION)
}

/// As [`brownian_conditional_im`] with an explicit grid resolution.
pub fn brownian_conditional_im_with_resolution(
    q: &[f64],
    theta0: &[f64],
    resolution: usize,
) -> Result<(ConditionalAssociation, PredictiveRandomSet)> {
    let cond_vars = brownian_conditioning(q, theta0)?;
    let law = ConditionalLaw2D::build(&cond_vars, resolution)?;
    conditional_im_from_law(q, theta0, cond_vars, law)
}

/// Grid-normalized variant for repeated-simulation studies; skips the
/// adaptive normalization passes (see [`ConditionalLaw2D::build_fast`]).
pub fn brownian_conditional_im_fast(
    q: &[f64],
    theta0: &[f64],
    resolution: usize,
) -> Result<(ConditionalAssociation, PredictiveRandomSet)> {
    let cond_vars = brownian_conditioning(q, theta0)?;
    let law = ConditionalLaw2D::build_fast(&cond_vars, resolution)?;
    conditional_im_from_law(q, theta0, cond_vars, law)
}

fn conditional_im_from_law(
    q: &[f64],
    theta0: &[f64],
    cond_vars: BrownianConditioning,
    law: ConditionalLaw2D,
) -> Result<(ConditionalAssociation, PredictiveRandomSet)> {
    let n = q.len();
    let (lambdas, _) = brownian_eigensystem(n)?;
    let (a, b) = cond_vars.anchor_pair;
    let (la, lb) = (lambdas[a], lambdas[b]);

    let law_for_aux = law.clone();
    let law_for_density = law.clone();
    let law_for_cdf = law.clone();
    let conditional = AuxiliaryDistribution::new(
        2,
        vec![
            (f64::NEG_INFINITY, f64::INFINITY),
            (f64::NEG_INFINITY, f64::INFINITY),
        ],
        Arc::new(move |rng| {
            let (w1, w2) = law_for_aux.sample(rng);
            vec![w1, w2]
        }),
        Arc::new(move |w: &[f64]| grid_log_density(&law_for_density, w[0], w[1])),
        Some(Arc::new(move |i, w| law_for_cdf.marginal_cdf(i, w))),
    )?;

    let cond = ConditionalAssociation::new(
        format!("brownian-conditional(n={n})"),
        2,
        n,
        Arc::new(move |data: &[f64]| vec![data[a], data[b]]),
        Arc::new(move |w: &[f64], th: &[f64]| {
            vec![
                (th[0] + (la + th[1]).ln() + w[0]).exp(),
                (th[0] + (lb + th[1]).ln() + w[1]).exp(),
            ]
        }),
        Arc::new(move |t: &[f64], th: &[f64]| {
            if t[0] <= 0.0 || t[1] <= 0.0 {
                return Err(ImError::Inversion("reduced statistics must be positive".into()));
            }
            if la + th[1] <= 0.0 || lb + th[1] <= 0.0 {
                return Err(ImError::Inversion("phi below the eigenvalue floor".into()));
            }
            Ok(vec![
                t[0].ln() - th[0] - (la + th[1]).ln(),
                t[1].ln() - th[0] - (lb + th[1]).ln(),
            ])
        }),
        cond_vars.observed.clone(),
        conditional.clone(),
        Anchor::At(theta0.to_vec()),
    )?;

    let law_for_stat = law.clone();
    let law_for_surv = law;
    let prs = PredictiveRandomSet::from_driving_statistic(
        "brownian-conditional-depth",
        conditional,
        Arc::new(move |w: &[f64]| law_for_stat.max_depth(w)),
        Arc::new(move |t: f64| law_for_surv.max_depth_survival(t)),
    );
    Ok((cond, prs))
}

pub(crate) fn grid_log_density(law: &ConditionalLaw2D, w1: f64, w2: f64) -> f64 {
    let m = law.axis1.len();
    if w1 < law.axis1[0] || w1 > law.axis1[m - 1] || w2 < law.axis2[0] || w2 > law.axis2[m - 1] {
        return f64::NEG_INFINITY;
    }
    // bilinear on the stored grid
    let i = law.axis1.partition_point(|v| *v < w1).clamp(1, m - 1);
    let j = law.axis2.partition_point(|v| *v < w2).clamp(1, m - 1);
    let t1 = (w1 - law.axis1[i - 1]) / (law.axis1[i] - law.axis1[i - 1]);
    let t2 = (w2 - law.axis2[j - 1]) / (law.axis2[j] - law.axis2[j - 1]);
    let d = law.node_density[(i - 1) * m + j - 1] * (1.0 - t1) * (1.0 - t2)
        + law.node_density[i * m + j - 1] * t1 * (1.0 - t2)
        + law.node_density[(i - 1) * m + j] * (1.0 - t1) * t2
        + law.node_density[i * m + j] * t1 * t2;
    d.max(1e-300).ln()
}

/// Marginal route for `phi` alone: the single conditional association on the
/// ratio of the anchor statistics. `theta` here is the one-vector `[phi]`.
pub fn brownian_ratio_conditional(
    q: &[f64],
    theta0: &[f64],
) -> Result<(ConditionalAssociation, PredictiveRandomSet)> {
    let cond_vars = brownian_conditioning(q, theta0)?;
    let law = ConditionalLaw2D::build(&cond_vars, CONDITIONAL_GRID_RESOLUTION)?;
    ratio_conditional_from_law(q, theta0, cond_vars, law)
}

/// Grid-normalized ratio route for sweeps over many anchors.
pub fn brownian_ratio_conditional_fast(
    q: &[f64],
    theta0: &[f64],
    resolution: usize,
) -> Result<(ConditionalAssociation, PredictiveRandomSet)> {
    let cond_vars = brownian_conditioning(q, theta0)?;
    let law = ConditionalLaw2D::build_fast(&cond_vars, resolution)?;
    ratio_conditional_from_law(q, theta0, cond_vars, law)
}

fn ratio_conditional_from_law(
    q: &[f64],
    theta0: &[f64],
    cond_vars: BrownianConditioning,
    law: ConditionalLaw2D,
) -> Result<(ConditionalAssociation, PredictiveRandomSet)> {
    let n = q.len();
    let (lambdas, _) = brownian_eigensystem(n)?;
    let (a, b) = cond_vars.anchor_pair;
    let (la, lb) = (lambdas[a], lambdas[b]);

    let law_sample = law.clone();
    let law_cdf = law.clone();
    let law_dens = law.clone();
    let conditional = AuxiliaryDistribution::new(
        1,
        vec![(f64::NEG_INFINITY, f64::INFINITY)],
        Arc::new(move |rng| {
            let (w1, w2) = law_sample.sample(rng);
            vec![w1 - w2]
        }),
        Arc::new(move |d: &[f64]| {
            // numerical derivative of the tabulated difference CDF
            let h = 1e-3;
            let f = (law_dens.delta_cdf(d[0] + h) - law_dens.delta_cdf(d[0] - h)) / (2.0 * h);
            f.max(1e-300).ln()
        }),
        Some(Arc::new(move |_i, d| law_cdf.delta_cdf(d))),
    )?;

    let cond = ConditionalAssociation::new(
        format!("brownian-ratio(n={n})"),
        1,
        n,
        Arc::new(move |data: &[f64]| vec![(data[a] / data[b]).ln()]),
        Arc::new(move |d: &[f64], th: &[f64]| vec![d[0] + ((la + th[0]) / (lb + th[0])).ln()]),
        Arc::new(move |t: &[f64], th: &[f64]| {
            if la + th[0] <= 0.0 || lb + th[0] <= 0.0 {
                return Err(ImError::Inversion("phi below the eigenvalue floor".into()));
            }
            Ok(vec![t[0] - ((la + th[0]) / (lb + th[0])).ln()])
        }),
        cond_vars.observed.clone(),
        conditional.clone(),
        // the reduced parameter is [phi] alone; sigma^2 cancels in the ratio
        Anchor::At(vec![theta0[1]]),
    )?;

    let law_stat = law;
    let prs = PredictiveRandomSet::from_driving_statistic(
        "brownian-ratio-depth",
        conditional,
        Arc::new(move |d: &[f64]| (2.0 * law_stat.delta_cdf(d[0]) - 1.0).abs()),
        Arc::new(|t: f64| 1.0 - t.clamp(0.0, 1.0)),
    );
    Ok((cond, prs))
}

/// Posterior of the signal increments given the observed differences.
#[derive(Clone, Debug)]
pub struct XiPosterior {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

/// Closed-form posterior through the eigensystem (no dense inversion):
/// `mean = V diag(psi/(psi + n lambda_i)) V' z` and
/// `cov = sigma^2 V diag(lambda_i psi/(psi + n lambda_i)) V'`.
pub fn brownian_xi_posterior(z: &[f64], sigma2: f64, psi: f64) -> Result<XiPosterior> {
    if !(sigma2 > 0.0) || !(psi > 0.0) {
        return Err(ImError::InvalidInput("sigma2 and psi must be positive".into()));
    }
    let n = z.len();
    let (lambdas, v) = brownian_eigensystem(n)?;
    let zv = DVector::from_column_slice(z);
    let proj = v.transpose() * &zv;
    let mean_coeffs = DVector::from_fn(n, |i, _| {
        psi / (psi + n as f64 * lambdas[i]) * proj[i]
    });
    let mean = &v * mean_coeffs;
    let cov_diag = DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            sigma2 * lambdas[i] * psi / (psi + n as f64 * lambdas[i])
        } else {
            0.0
        }
    });
    let cov = &v * cov_diag * v.transpose();
    // enforce exact symmetry against rounding
    let cov = 0.5 * (&cov + cov.transpose());
    Ok(XiPosterior { mean, cov })
}

/// Normalized fractions `B_i = (q_i/(lambda_i+phi)) / sum_j (q_j/(lambda_j+phi))`.
pub fn brownian_marginal_fractions(q: &[f64], phi: f64) -> Result<Vec<f64>> {
    let (lambdas, _) = brownian_eigensystem(q.len())?;
    marginal_fractions_with(&lambdas, q, phi)
}

fn marginal_fractions_with(lambdas: &[f64], q: &[f64], phi: f64) -> Result<Vec<f64>> {
    if q.len() != lambdas.len() {
        return Err(ImError::InvalidInput("q and lambdas must match".into()));
    }
    let mut r = Vec::with_capacity(q.len());
    for (qi, li) in q.iter().zip(lambdas) {
        if !(*qi > 0.0) || li + phi <= 0.0 {
            return Err(ImError::InvalidInput(
                "fractions need positive statistics and lambda + phi > 0".into(),
            ));
        }
        r.push(qi / (li + phi));
    }
    let s: f64 = r.iter().sum();
    Ok(r.into_iter().map(|v| v / s).collect())
}

/// The `n - 1` phi-sensitivity components of the fractions, expressed through
/// the fractions themselves:
/// `(B_i/(lambda_n+phi)) [ sum_{j<n} ((lambda_n-lambda_j)/(lambda_j+phi)) B_j
///   + (lambda_i-lambda_n)/(lambda_i+phi) ]`.
pub fn brownian_marginal_field(q: &[f64], phi: f64) -> Result<Vec<f64>> {
    let (lambdas, _) = brownian_eigensystem(q.len())?;
    brownian_marginal_field_with_lambdas(&lambdas, q, phi)
}

/// Same with explicit eigenvalues (supports perturbation studies).
pub fn brownian_marginal_field_with_lambdas(
    lambdas: &[f64],
    q: &[f64],
    phi: f64,
) -> Result<Vec<f64>> {
    let b = marginal_fractions_with(lambdas, q, phi)?;
    Ok(marginal_field_from_fractions(lambdas, &b, phi))
}

fn marginal_field_from_fractions(lambdas: &[f64], b: &[f64], phi: f64) -> Vec<f64> {
    let n = b.len();
    let ln = lambdas[n - 1];
    let shared: f64 = (0..n - 1)
        .map(|j| (ln - lambdas[j]) / (lambdas[j] + phi) * b[j])
        .sum();
    (0..n - 1)
        .map(|i| b[i] / (ln + phi) * (shared + (lambdas[i] - ln) / (lambdas[i] + phi)))
        .collect()
}

/// Characteristic field of the marginal fraction association at anchor
/// `phi_0`: state is the first `n - 1` fractions, the last is implied by
/// normalization.
pub fn brownian_marginal_char_field(n: usize, phi0: f64) -> Result<CharacteristicField> {
    let (lambdas, _) = brownian_eigensystem(n)?;
    if lambdas[0] + phi0 <= 0.0 {
        return Err(ImError::InvalidInput("phi0 below the eigenvalue floor".into()));
    }
    Ok(CharacteristicField::from_fn(
        n - 1,
        1,
        vec![phi0],
        Arc::new(move |_tau, u| {
            let mut b = Vec::with_capacity(n);
            b.extend_from_slice(u);
            b.push(1.0 - u.iter().sum::<f64>());
            let f = marginal_field_from_fractions(&lambdas, &b, phi0);
            DMatrix::from_fn(n - 1, 1, |i, _| f[i])
        }),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn eigensystem_small_case_closed_form() {
        let (lam, _) = brownian_eigensystem(3).unwrap();
        let s2 = 2.0_f64.sqrt();
        assert_relative_eq!(lam[0], 2.0 - s2, epsilon = 1e-14);
        assert_relative_eq!(lam[1], 2.0, epsilon = 1e-14);
        assert_relative_eq!(lam[2], 2.0 + s2, epsilon = 1e-14);
        assert!(lam.windows(2).all(|w| w[0] < w[1]));
        assert!(lam.iter().all(|l| *l > 0.0 && *l < 4.0));
    }

    #[test]
    fn eigensystem_trace_and_reconstruction() {
        for n in [3, 8, 17] {
            let (lam, v) = brownian_eigensystem(n).unwrap();
            assert_relative_eq!(lam.iter().sum::<f64>(), 2.0 * n as f64, epsilon = 1e-10);
            let rebuilt = {
                let mut acc = DMatrix::zeros(n, n);
                for i in 0..n {
                    let vi = v.column(i);
                    acc += lam[i] * &vi * vi.transpose();
                }
                acc
            };
            let target = sigma_tridiagonal(n);
            let err = (&rebuilt - &target).amax();
            assert!(err <= 1e-10, "n={n}: {err}");
            // orthonormality
            let gram = v.transpose() * &v;
            assert!((gram - DMatrix::identity(n, n)).amax() <= 1e-10);
        }
    }

    #[test]
    fn statistics_shift_invariant_and_parseval() {
        let y = [0.3, 0.9, 0.1, -0.5, 0.2, 0.8, 0.0];
        let q = brownian_statistics(&y).unwrap();
        let shifted: Vec<f64> = y.iter().map(|v| v + 5.5).collect();
        let q2 = brownian_statistics(&shifted).unwrap();
        for (a, b) in q.iter().zip(&q2) {
            assert_relative_eq!(a, b, epsilon = 1e-10);
        }
        // constant path: all differences zero
        let qc = brownian_statistics(&[2.0; 8]).unwrap();
        assert!(qc.iter().all(|v| *v == 0.0));
        // orthonormality: sum Q = ||Z||^2
        let n = y.len() - 1;
        let z: Vec<f64> = (1..=n).map(|i| y[i] - y[i - 1]).collect();
        let znorm: f64 = z.iter().map(|v| v * v).sum();
        assert_relative_eq!(q.iter().sum::<f64>(), znorm, epsilon = 1e-10);
    }

    #[test]
    fn q_forward_at_unit_u_gives_lambdas() {
        let n = 5;
        let assoc = brownian_q_association(n).unwrap();
        // sigma^2 = 1, phi = 0 is inside the open domain (floor is -lambda_1)
        let x = assoc.forward(&vec![1.0; n], &[0.0, 0.0]).unwrap();
        let (lam, _) = brownian_eigensystem(n).unwrap();
        for (xi, li) in x.iter().zip(&lam) {
            assert_relative_eq!(xi, li, epsilon = 1e-12);
        }
    }

    #[test]
    fn v_association_inverse_and_partials() {
        let n = 5;
        let assoc = brownian_v_association(n).unwrap();
        let theta = [0.26, 0.7]; // ln sigma^2, phi
        let (lam, _) = brownian_eigensystem(n).unwrap();
        let q: Vec<f64> = (0..n).map(|i| 0.4 + 0.3 * i as f64).collect();
        let v = assoc.inverse(&q, &theta).unwrap();
        for i in 0..n {
            let expect = q[i].ln() - theta[0] - (lam[i] + theta[1]).ln();
            assert_relative_eq!(v[i], expect, epsilon = 1e-12);
        }
        let m = assoc.du_dtheta_default(&q, &theta).unwrap();
        for i in 0..n {
            assert_relative_eq!(m[(i, 0)], -1.0);
            assert_relative_eq!(m[(i, 1)], -1.0 / (lam[i] + theta[1]), epsilon = 1e-12);
        }
        // round trip
        let q2 = assoc.forward(&v, &theta).unwrap();
        for (a, b) in q.iter().zip(&q2) {
            assert_relative_eq!(a, b, max_relative = 1e-12);
        }
        // non-positive statistic rejected
        let mut bad = q.clone();
        bad[2] = 0.0;
        assert!(assoc.inverse(&bad, &theta).is_err());
    }

    #[test]
    fn v_field_matches_negated_build_field() {
        use crate::characteristics::build_field;
        let n = 4;
        let theta0 = [0.1, 0.9];
        let assoc = brownian_v_association(n).unwrap();
        let generic = build_field(&assoc, &theta0).unwrap().negated();
        let direct = brownian_v_field(n, &theta0).unwrap();
        let u = vec![-0.3, 0.2, -1.0, 0.5];
        let g1 = generic.eval(&[0.0, 0.0], &u);
        let g2 = direct.eval(&[0.0, 0.0], &u);
        assert!((g1 - g2).amax() < 1e-9);
    }

    #[test]
    fn conditioning_coefficients_solve_both_equations() {
        let n = 7;
        let theta0 = [0.0, 0.55];
        let q: Vec<f64> = (0..n).map(|i| 0.5 + 0.21 * i as f64).collect();
        let c = brownian_conditioning(&q, &theta0).unwrap();
        let (lam, _) = brownian_eigensystem(n).unwrap();
        for &(i, c1, c2) in &c.coeffs {
            // coefficients sum to zero (first balance equation)
            assert_relative_eq!(1.0 + c1 + c2, 0.0, epsilon = 1e-12);
            // weighted sum with the sensitivity weights vanishes too
            let s = 1.0 / (lam[i] + theta0[1])
                + c1 / (lam[0] + theta0[1])
                + c2 / (lam[1] + theta0[1]);
            assert_relative_eq!(s, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn observed_values_match_h_at_inverse() {
        let n = 6;
        let theta0 = [0.4, 0.8];
        let assoc = brownian_q_association(n).unwrap();
        let u0: Vec<f64> = (1..=n).map(|i| 0.2 + 0.37 * i as f64).collect();
        let q = assoc.forward(&u0, &theta0).unwrap();
        let c = brownian_conditioning(&q, &theta0).unwrap();
        let u = assoc.inverse(&q, &theta0).unwrap();
        for pos in 0..c.coeffs.len() {
            assert_relative_eq!(c.observed[pos], c.h(pos, &u), epsilon = 1e-10);
        }
        // sigma^2 drops out: same observed values at a different ln sigma^2
        let c2 = brownian_conditioning(&q, &[theta0[0] + 2.0, theta0[1]]).unwrap();
        for (a, b) in c.observed.iter().zip(&c2.observed) {
            assert_relative_eq!(a, b, epsilon = 1e-10);
        }
    }

    #[test]
    fn conditioning_rejects_bad_inputs() {
        let q = [1.0, 2.0, 0.5, 0.7];
        assert!(brownian_conditioning(&q, &[0.0, -0.1]).is_err());
        let qbad = [1.0, -2.0, 0.5, 0.7];
        assert!(brownian_conditioning(&qbad, &[0.0, 0.5]).is_err());
    }

    #[test]
    fn conditional_law_integrates_and_samples_in_box() {
        let n = 5;
        let theta0 = [0.0, 0.9];
        let q: Vec<f64> = (0..n).map(|i| 0.8 + 0.3 * i as f64).collect();
        let c = brownian_conditioning(&q, &theta0).unwrap();
        let law = ConditionalLaw2D::build(&c, 161).unwrap();
        // medians sit inside the grid box
        let (m1, m2) = law.medians();
        assert!(law.axis1[0] < m1 && m1 < law.axis1[law.axis1.len() - 1]);
        assert!(law.axis2[0] < m2 && m2 < law.axis2[law.axis2.len() - 1]);
        // samples honor the box and reproduce the marginal cdf roughly
        let mut rng = stream_rng(5, 0);
        let mut count_below = 0;
        let total = 4000;
        for _ in 0..total {
            let (w1, _) = law.sample(&mut rng);
            assert!(w1 >= law.axis1[0] && w1 <= law.axis1[law.axis1.len() - 1]);
            if w1 <= m1 {
                count_below += 1;
            }
        }
        let frac = count_below as f64 / total as f64;
        assert!((frac - 0.5).abs() < 0.03, "median check {frac}");
    }

    #[test]
    fn xi_posterior_limits_and_oracle() {
        let n = 8;
        let z: Vec<f64> = (0..n).map(|i| (i as f64 * 0.7).sin()).collect();
        // large psi: mean approaches z
        let post = brownian_xi_posterior(&z, 1.3, 1e8).unwrap();
        for i in 0..n {
            assert!((post.mean[i] - z[i]).abs() < 1e-4);
        }
        // zero data: zero mean
        let post0 = brownian_xi_posterior(&vec![0.0; n], 1.0, 2.0).unwrap();
        assert!(post0.mean.amax() == 0.0);

        // dense-solve oracle at n = 8
        let sigma2 = 0.8;
        let psi = 3.0;
        let post = brownian_xi_posterior(&z, sigma2, psi).unwrap();
        let sig = sigma_tridiagonal(n);
        let sig_inv = sig.clone().try_inverse().unwrap();
        let a = &sig_inv + DMatrix::identity(n, n) * (n as f64 / psi);
        let a_inv = a.try_inverse().unwrap();
        let mean_dense = &a_inv * &sig_inv * DVector::from_column_slice(&z);
        let cov_dense = a_inv * sigma2;
        assert!((&post.mean - &mean_dense).amax() <= 1e-9);
        assert!((&post.cov - &cov_dense).amax() <= 1e-9);
        // symmetric positive definite
        assert!((post.cov.clone() - post.cov.transpose()).amax() <= 1e-12);
        let chol = nalgebra::Cholesky::new(post.cov.clone());
        assert!(chol.is_some());
    }

    #[test]
    fn fractions_normalize_and_field_matches_fd() {
        let n = 6;
        let mut rng = stream_rng(3, 0);
        for _ in 0..20 {
            let q: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..4.0)).collect();
            let phi: f64 = rng.gen_range(0.2..2.5);
            let b = brownian_marginal_fractions(&q, phi).unwrap();
            assert_relative_eq!(b.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
            let field = brownian_marginal_field(&q, phi).unwrap();
            let h = 1e-6 * phi.max(1.0);
            let bp = brownian_marginal_fractions(&q, phi + h).unwrap();
            let bm = brownian_marginal_fractions(&q, phi - h).unwrap();
            let scale = field.iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(1e-12);
            for i in 0..n - 1 {
                let fd = (bp[i] - bm[i]) / (2.0 * h);
                assert!(
                    (field[i] - fd).abs() / scale <= 1e-5,
                    "component {i}: {} vs {fd}",
                    field[i]
                );
            }
        }
    }

    #[test]
    fn near_equal_eigenvalues_shrink_field_linearly() {
        // with equal eigenvalues the fractions lose phi-dependence entirely;
        // a linear perturbation of the spectrum scales the field linearly
        let n = 4;
        let q = [0.9, 1.4, 0.6, 2.2];
        let phi = 1.1;
        let base = vec![1.5; n];
        let dir = [0.3, -0.2, 0.1, -0.05];
        let sup = |eps: f64| -> f64 {
            let lam: Vec<f64> = base.iter().zip(&dir).map(|(b, d)| b + eps * d).collect();
            brownian_marginal_field_with_lambdas(&lam, &q, phi)
                .unwrap()
                .iter()
                .fold(0.0_f64, |m, v| m.max(v.abs()))
        };
        let f1 = sup(1e-3);
        let f2 = sup(5e-4);
        assert!(f1 > 0.0);
        let ratio = f1 / f2;
        assert!((ratio - 2.0).abs() < 0.05, "ratio {ratio}");
    }

    #[test]
    fn simulated_path_statistics_positive() {
        let y = brownian_simulate_path(10, 1.0, 5.0, 42).unwrap();
        assert_eq!(y.len(), 11);
        let y2 = brownian_simulate_path(10, 1.0, 5.0, 42).unwrap();
        assert_eq!(y, y2);
        let q = brownian_statistics(&y).unwrap();
        assert!(q.iter().all(|v| *v > 0.0));
    }
}
