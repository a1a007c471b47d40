//! Associations: the sampling model written as `x = a(u, theta)` with a
//! fully known auxiliary distribution for `u`, a unique inverse `u(x, theta)`,
//! and parameter sensitivities of that inverse.

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{ImError, Result};
use crate::stats::stream_rng;

/// Default relative step for central finite differences.
pub const DEFAULT_FD_STEP: f64 = 1e-6;

/// Open product domain for the parameter vector.
#[derive(Clone, Debug)]
pub struct ParameterSpace {
    bounds: Vec<(f64, f64)>,
}

impl ParameterSpace {
    /// Builds a parameter space from per-coordinate open intervals.
    pub fn new(bounds: Vec<(f64, f64)>) -> Result<Self> {
        if bounds.is_empty() {
            return Err(ImError::InvalidInput("parameter space needs dim >= 1".into()));
        }
        for (k, (lo, hi)) in bounds.iter().enumerate() {
            if !(lo < hi) {
                return Err(ImError::InvalidInput(format!(
                    "coordinate {k}: lower {lo} not below upper {hi}"
                )));
            }
        }
        Ok(Self { bounds })
    }

    /// Unbounded space of the given dimension.
    pub fn unbounded(dim: usize) -> Self {
        Self::new(vec![(f64::NEG_INFINITY, f64::INFINITY); dim]).unwrap()
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    /// Strict interior check; boundaries are excluded by design.
    pub fn contains(&self, theta: &[f64]) -> bool {
        theta.len() == self.dim()
            && theta
                .iter()
                .zip(&self.bounds)
                .all(|(t, (lo, hi))| t.is_finite() && *lo < *t && *t < *hi)
    }

    /// Errors with the offending coordinate when `theta` is not interior.
    pub fn check(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.dim() {
            return Err(ImError::InvalidInput(format!(
                "theta has length {}, parameter space has dim {}",
                theta.len(),
                self.dim()
            )));
        }
        for (k, (t, (lo, hi))) in theta.iter().zip(&self.bounds).enumerate() {
            if !(t.is_finite() && *lo < *t && *t < *hi) {
                return Err(ImError::OutOfBounds {
                    index: k,
                    value: *t,
                    lower: *lo,
                    upper: *hi,
                });
            }
        }
        Ok(())
    }

    /// Checks that a stencil of half-width `steps[k]` around `theta` stays interior.
    pub fn check_stencil(&self, theta: &[f64], steps: &[f64]) -> Result<()> {
        self.check(theta)?;
        for (k, ((t, (lo, hi)), h)) in theta.iter().zip(&self.bounds).zip(steps).enumerate() {
            if *t - *h <= *lo || *t + *h >= *hi {
                return Err(ImError::Stencil { index: k, step: *h });
            }
        }
        Ok(())
    }
}

type SampleFn = dyn Fn(&mut ChaCha8Rng) -> Vec<f64> + Send + Sync;
type DensityFn = dyn Fn(&[f64]) -> f64 + Send + Sync;
type MarginalCdf = dyn Fn(usize, f64) -> f64 + Send + Sync;

/// Fully known distribution of the auxiliary vector.
#[derive(Clone)]
pub struct AuxiliaryDistribution {
    dim: usize,
    support: Vec<(f64, f64)>,
    sampler: Arc<SampleFn>,
    log_density: Arc<DensityFn>,
    marginal_cdf: Option<Arc<MarginalCdf>>,
}

impl AuxiliaryDistribution {
    pub fn new(
        dim: usize,
        support: Vec<(f64, f64)>,
        sampler: Arc<SampleFn>,
        log_density: Arc<DensityFn>,
        marginal_cdf: Option<Arc<MarginalCdf>>,
    ) -> Result<Self> {
        if dim == 0 || support.len() != dim {
            return Err(ImError::InvalidInput(
                "auxiliary dim must be >= 1 and match the support list".into(),
            ));
        }
        Ok(Self {
            dim,
            support,
            sampler,
            log_density,
            marginal_cdf,
        })
    }

    /// `dim` iid standard normal coordinates.
    pub fn standard_normal(dim: usize) -> Self {
        let half_log_2pi = 0.5 * (2.0 * std::f64::consts::PI).ln();
        Self {
            dim,
            support: vec![(f64::NEG_INFINITY, f64::INFINITY); dim],
            sampler: Arc::new(move |rng| {
                (0..dim)
                    .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal))
                    .collect()
            }),
            log_density: Arc::new(move |u| {
                u.iter().map(|x| -0.5 * x * x - half_log_2pi).sum()
            }),
            marginal_cdf: Some(Arc::new(|_, x| crate::stats::norm_cdf(x))),
        }
    }

    /// `dim` iid Uniform(0,1) coordinates.
    pub fn uniform01(dim: usize) -> Self {
        Self {
            dim,
            support: vec![(0.0, 1.0); dim],
            sampler: Arc::new(move |rng| (0..dim).map(|_| rng.gen::<f64>()).collect()),
            log_density: Arc::new(move |u| {
                if u.iter().all(|x| (0.0..=1.0).contains(x)) {
                    0.0
                } else {
                    f64::NEG_INFINITY
                }
            }),
            marginal_cdf: Some(Arc::new(|_, x| x.clamp(0.0, 1.0))),
        }
    }

    /// `dim` iid chi-square(1) coordinates, sampled as squared standard normals.
    pub fn chi_square_1(dim: usize) -> Self {
        let half_log_2pi = 0.5 * (2.0 * std::f64::consts::PI).ln();
        Self {
            dim,
            support: vec![(0.0, f64::INFINITY); dim],
            sampler: Arc::new(move |rng| {
                (0..dim)
                    .map(|_| {
                        let z: f64 = rng.sample(rand_distr::StandardNormal);
                        z * z
                    })
                    .collect()
            }),
            log_density: Arc::new(move |u| {
                u.iter()
                    .map(|x| {
                        if *x > 0.0 {
                            -0.5 * x.ln() - 0.5 * x - half_log_2pi
                        } else {
                            f64::NEG_INFINITY
                        }
                    })
                    .sum()
            }),
            marginal_cdf: Some(Arc::new(|_, x| crate::stats::chi2_cdf(1.0, x))),
        }
    }

    /// `dim` iid coordinates distributed as `ln(chi-square(1))`.
    pub fn log_chi_square_1(dim: usize) -> Self {
        let half_log_2pi = 0.5 * (2.0 * std::f64::consts::PI).ln();
        Self {
            dim,
            support: vec![(f64::NEG_INFINITY, f64::INFINITY); dim],
            sampler: Arc::new(move |rng| {
                (0..dim)
                    .map(|_| {
                        let z: f64 = rng.sample(rand_distr::StandardNormal);
                        (z * z).ln()
                    })
                    .collect()
            }),
            log_density: Arc::new(move |w| {
                w.iter().map(|x| 0.5 * x - 0.5 * x.exp() - half_log_2pi).sum()
            }),
            marginal_cdf: Some(Arc::new(|_, w| crate::stats::chi2_cdf(1.0, w.exp()))),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn support(&self) -> &[(f64, f64)] {
        &self.support
    }

    pub fn in_support(&self, u: &[f64]) -> bool {
        u.len() == self.dim
            && u.iter()
                .zip(&self.support)
                .all(|(x, (lo, hi))| *lo <= *x && *x <= *hi)
    }

    /// One draw from the distribution.
    pub fn sample(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (self.sampler)(rng)
    }

    pub fn log_density(&self, u: &[f64]) -> f64 {
        (self.log_density)(u)
    }

    pub fn has_marginal_cdf(&self) -> bool {
        self.marginal_cdf.is_some()
    }

    /// Marginal CDF of coordinate `i`, if declared.
    pub fn marginal_cdf(&self, i: usize, x: f64) -> Option<f64> {
        self.marginal_cdf.as_ref().map(|f| f(i, x))
    }
}

type ForwardFn = dyn Fn(&[f64], &[f64]) -> Vec<f64> + Send + Sync;
type InverseFn = dyn Fn(&[f64], &[f64]) -> Result<Vec<f64>> + Send + Sync;
type DuDthetaFn = dyn Fn(&[f64], &[f64]) -> DMatrix<f64> + Send + Sync;

/// A statistical model written as a forward map `x = a(u, theta)` together
/// with its unique inverse `u = u(x, theta)`.
///
/// Values are immutable after construction and safe to share across threads;
/// sampling takes explicit seeds so parallel callers use independent streams.
#[derive(Clone)]
pub struct Association {
    label: String,
    n_data: usize,
    params: ParameterSpace,
    aux: AuxiliaryDistribution,
    forward: Arc<ForwardFn>,
    inverse: Arc<InverseFn>,
    du_dtheta: Option<Arc<DuDthetaFn>>,
}

impl Association {
    pub fn new(
        label: impl Into<String>,
        n_data: usize,
        params: ParameterSpace,
        aux: AuxiliaryDistribution,
        forward: Arc<ForwardFn>,
        inverse: Arc<InverseFn>,
    ) -> Result<Self> {
        if n_data == 0 {
            return Err(ImError::InvalidInput("n_data must be >= 1".into()));
        }
        if aux.dim() != n_data {
            return Err(ImError::InvalidInput(format!(
                "auxiliary dim {} != n_data {}",
                aux.dim(),
                n_data
            )));
        }
        Ok(Self {
            label: label.into(),
            n_data,
            params,
            aux,
            forward,
            inverse,
            du_dtheta: None,
        })
    }

    /// Attaches analytic parameter-partials of the inverse map.
    pub fn with_du_dtheta(mut self, partials: Arc<DuDthetaFn>) -> Self {
        self.du_dtheta = Some(partials);
        self
    }

    /// Builds an association from a coordinate-wise forward map that is
    /// strictly monotone in each `u_i`; the inverse is solved by bracketed
    /// bisection on `u_bracket`. Intended for user models without closed-form
    /// inverses.
    pub fn from_monotone_forward(
        label: impl Into<String>,
        n_data: usize,
        params: ParameterSpace,
        aux: AuxiliaryDistribution,
        forward: Arc<ForwardFn>,
        u_bracket: Vec<(f64, f64)>,
    ) -> Result<Self> {
        if u_bracket.len() != n_data {
            return Err(ImError::InvalidInput(
                "u_bracket must have one interval per coordinate".into(),
            ));
        }
        let fwd = Arc::clone(&forward);
        let inverse: Arc<InverseFn> = Arc::new(move |x, theta| {
            let mut u = vec![0.0; x.len()];
            for i in 0..x.len() {
                u[i] = bisect_coordinate(&*fwd, i, x, theta, u_bracket[i])?;
            }
            Ok(u)
        });
        Self::new(label, n_data, params, aux, forward, inverse)
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn n_data(&self) -> usize {
        self.n_data
    }

    pub fn params(&self) -> &ParameterSpace {
        &self.params
    }

    pub fn aux(&self) -> &AuxiliaryDistribution {
        &self.aux
    }

    /// Simulated data `x = a(u, theta)`.
    pub fn forward(&self, u: &[f64], theta: &[f64]) -> Result<Vec<f64>> {
        self.params.check(theta)?;
        Ok((self.forward)(u, theta))
    }

    /// The unique auxiliary preimage `u(x, theta)`.
    pub fn inverse(&self, x: &[f64], theta: &[f64]) -> Result<Vec<f64>> {
        self.params.check(theta)?;
        (self.inverse)(x, theta)
    }

    /// `n x p` matrix of partials of the inverse with respect to theta:
    /// analytic when attached, otherwise central finite differences with
    /// per-coordinate step `step * max(1, |theta_k|)`.
    pub fn du_dtheta(&self, x: &[f64], theta: &[f64], step: f64) -> Result<DMatrix<f64>> {
        self.params.check(theta)?;
        if let Some(analytic) = &self.du_dtheta {
            return Ok(analytic(x, theta));
        }
        let p = self.params.dim();
        let steps: Vec<f64> = theta.iter().map(|t| step * t.abs().max(1.0)).collect();
        self.params.check_stencil(theta, &steps)?;
        let mut m = DMatrix::zeros(self.n_data, p);
        let mut th = theta.to_vec();
        for k in 0..p {
            let h = steps[k];
            th[k] = theta[k] + h;
            let up = (self.inverse)(x, &th)?;
            th[k] = theta[k] - h;
            let um = (self.inverse)(x, &th)?;
            th[k] = theta[k];
            for i in 0..self.n_data {
                m[(i, k)] = (up[i] - um[i]) / (2.0 * h);
            }
        }
        Ok(m)
    }

    /// `du_dtheta` with the default step.
    pub fn du_dtheta_default(&self, x: &[f64], theta: &[f64]) -> Result<DMatrix<f64>> {
        self.du_dtheta(x, theta, DEFAULT_FD_STEP)
    }

    /// Draws one dataset at `theta`; deterministic given `seed`.
    pub fn sample_data(&self, theta: &[f64], seed: u64) -> Result<Vec<f64>> {
        self.params.check(theta)?;
        let mut rng = stream_rng(seed, 0);
        let u = self.aux.sample(&mut rng);
        Ok((self.forward)(&u, theta))
    }
}

/// Bisection solve of `forward(u, theta)[i] = x[i]` in coordinate `i`.
/// Expands the initial bracket geometrically if it does not straddle the root.
fn bisect_coordinate(
    forward: &ForwardFn,
    i: usize,
    x: &[f64],
    theta: &[f64],
    bracket: (f64, f64),
) -> Result<f64> {
    let eval = |ui: f64| -> f64 {
        let mut u = vec![0.0; x.len()];
        u[i] = ui;
        forward(&u, theta)[i] - x[i]
    };
    let (mut lo, mut hi) = bracket;
    let mut flo = eval(lo);
    let mut fhi = eval(hi);
    let mut width = hi - lo;
    let mut tries = 0;
    while flo * fhi > 0.0 {
        tries += 1;
        if tries > 60 {
            return Err(ImError::Inversion(format!(
                "coordinate {i}: no sign change in expanded bracket [{lo}, {hi}]"
            )));
        }
        width *= 2.0;
        lo -= width;
        hi += width;
        flo = eval(lo);
        fhi = eval(hi);
    }
    if flo == 0.0 {
        return Ok(lo);
    }
    if fhi == 0.0 {
        return Ok(hi);
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let fm = eval(mid);
        if fm == 0.0 || (hi - lo) < 1e-15 * (1.0 + mid.abs()) {
            return Ok(mid);
        }
        if flo * fm < 0.0 {
            hi = mid;
        } else {
            lo = mid;
            flo = fm;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::gaussian_mean_model;
    use approx::assert_relative_eq;

    #[test]
    fn gaussian_mean_forward_is_location_shift() {
        let a = gaussian_mean_model(1, 1.0).unwrap();
        let x = a.forward(&[0.5], &[1.0]).unwrap();
        assert_relative_eq!(x[0], 1.5, max_relative = 1e-15);
        // zero-noise case: a(0, theta) is the deterministic value mu
        let x0 = a.forward(&[0.0], &[2.25]).unwrap();
        assert_relative_eq!(x0[0], 2.25, max_relative = 1e-15);
    }

    #[test]
    fn gaussian_mean_inverse_and_round_trip() {
        let a = gaussian_mean_model(1, 1.0).unwrap();
        let u = a.inverse(&[2.0], &[0.5]).unwrap();
        assert_relative_eq!(u[0], 1.5, max_relative = 1e-15);

        let mut rng = stream_rng(11, 0);
        for _ in 0..1000 {
            let u0: f64 = rng.gen_range(-3.0..3.0);
            let mu: f64 = rng.gen_range(-5.0..5.0);
            let x = a.forward(&[u0], &[mu]).unwrap();
            let ub = a.inverse(&x, &[mu]).unwrap();
            assert_relative_eq!(ub[0], u0, max_relative = 1e-9, epsilon = 1e-12);
        }
    }

    #[test]
    fn out_of_bounds_theta_names_coordinate() {
        let a = gaussian_mean_model(1, 1.0).unwrap();
        let params = ParameterSpace::new(vec![(0.0, 1.0)]).unwrap();
        let err = params.check(&[1.5]).unwrap_err();
        match err {
            ImError::OutOfBounds { index, value, .. } => {
                assert_eq!(index, 0);
                assert_eq!(value, 1.5);
            }
            other => panic!("unexpected error {other:?}"),
        }
        let _ = a;
    }

    #[test]
    fn du_dtheta_gaussian_mean_is_minus_one() {
        let a = gaussian_mean_model(3, 1.0).unwrap();
        let m = a.du_dtheta_default(&[0.3, -0.7, 1.1], &[0.2]).unwrap();
        for i in 0..3 {
            assert_relative_eq!(m[(i, 0)], -1.0, max_relative = 1e-12);
        }
    }

    #[test]
    fn fd_matches_analytic_partials() {
        // analytic route on the catalog model vs an FD-only clone
        let a = gaussian_mean_model(2, 2.0).unwrap();
        let fd_only = Association::new(
            "fd-clone",
            2,
            ParameterSpace::unbounded(1),
            AuxiliaryDistribution::standard_normal(2),
            Arc::new(|u: &[f64], th: &[f64]| u.iter().map(|ui| th[0] + 2.0 * ui).collect()),
            Arc::new(|x: &[f64], th: &[f64]| Ok(x.iter().map(|xi| (xi - th[0]) / 2.0).collect())),
        )
        .unwrap();
        let x = [0.4, -1.3];
        let got = a.du_dtheta_default(&x, &[0.7]).unwrap();
        let fd = fd_only.du_dtheta_default(&x, &[0.7]).unwrap();
        for i in 0..2 {
            assert_relative_eq!(got[(i, 0)], fd[(i, 0)], max_relative = 1e-5);
        }
    }

    #[test]
    fn stencil_error_near_boundary() {
        let params = ParameterSpace::new(vec![(0.0, 1.0)]).unwrap();
        let aux = AuxiliaryDistribution::uniform01(1);
        let a = Association::new(
            "unit-scale",
            1,
            params,
            aux,
            Arc::new(|u: &[f64], th: &[f64]| vec![th[0] * u[0]]),
            Arc::new(|x: &[f64], th: &[f64]| Ok(vec![x[0] / th[0]])),
        )
        .unwrap();
        let err = a.du_dtheta(&[0.1], &[1e-8], 1e-6).unwrap_err();
        assert!(matches!(err, ImError::Stencil { .. }), "{err}");
    }

    #[test]
    fn sample_data_deterministic_and_centered() {
        let a = gaussian_mean_model(1, 1.0).unwrap();
        let x1 = a.sample_data(&[0.3], 99).unwrap();
        let x2 = a.sample_data(&[0.3], 99).unwrap();
        assert_eq!(x1, x2);

        // CLT bound: mean of 1e5 draws within 4 sigma/sqrt(N) of mu
        let n = 100_000;
        let vals = crate::stats::chunked_mc(n, 5, 0, |rng| {
            let z: f64 = rng.sample(rand_distr::StandardNormal);
            1.7 + z
        });
        let mean = vals.iter().sum::<f64>() / n as f64;
        assert!((mean - 1.7).abs() < 4.0 / (n as f64).sqrt());
    }

    #[test]
    fn monotone_fallback_inverts_cubic_link() {
        let params = ParameterSpace::unbounded(1);
        let aux = AuxiliaryDistribution::standard_normal(1);
        let a = Association::from_monotone_forward(
            "cubic-link",
            1,
            params,
            aux,
            Arc::new(|u: &[f64], th: &[f64]| vec![th[0] + u[0] + u[0].powi(3)]),
            vec![(-2.0, 2.0)],
        )
        .unwrap();
        let x = a.forward(&[1.3], &[0.4]).unwrap();
        let u = a.inverse(&x, &[0.4]).unwrap();
        assert_relative_eq!(u[0], 1.3, max_relative = 1e-9);
    }

    #[test]
    fn sampler_lands_in_declared_support() {
        let aux = AuxiliaryDistribution::chi_square_1(4);
        let mut rng = stream_rng(3, 0);
        for _ in 0..2000 {
            let u = aux.sample(&mut rng);
            assert!(aux.in_support(&u));
        }
    }

    #[test]
    fn marginal_cdf_monotone_with_limits() {
        let aux = AuxiliaryDistribution::log_chi_square_1(1);
        let mut prev = 0.0;
        for i in 0..200 {
            let w = -30.0 + i as f64 * 0.2;
            let c = aux.marginal_cdf(0, w).unwrap();
            assert!(c >= prev - 1e-15);
            prev = c;
        }
        assert!(aux.marginal_cdf(0, -40.0).unwrap() < 1e-8);
        assert!(aux.marginal_cdf(0, 10.0).unwrap() > 1.0 - 1e-8);
    }
}
