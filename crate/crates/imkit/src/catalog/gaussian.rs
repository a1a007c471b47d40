//! Gaussian location and location-scale models with their conditional
//! (dimension-reduced) forms.

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;

use crate::association::{Association, AuxiliaryDistribution, ParameterSpace};
use crate::engine::{Anchor, ConditionalAssociation};
use crate::error::{ImError, Result};
use crate::prs::PredictiveRandomSet;
use crate::stats::{chi2_cdf, norm_cdf};

/// `x_i = mu + sigma u_i` with known `sigma` and unknown location `mu`.
pub fn gaussian_mean_model(n: usize, sigma: f64) -> Result<Association> {
    if n == 0 {
        return Err(ImError::InvalidInput("need n >= 1".into()));
    }
    if !(sigma > 0.0) {
        return Err(ImError::InvalidInput(format!("sigma must be positive, got {sigma}")));
    }
    let assoc = Association::new(
        format!("gaussian-mean(n={n},sigma={sigma})"),
        n,
        ParameterSpace::unbounded(1),
        AuxiliaryDistribution::standard_normal(n),
        Arc::new(move |u: &[f64], th: &[f64]| u.iter().map(|ui| th[0] + sigma * ui).collect()),
        Arc::new(move |x: &[f64], th: &[f64]| {
            Ok(x.iter().map(|xi| (xi - th[0]) / sigma).collect())
        }),
    )?;
    Ok(assoc.with_du_dtheta(Arc::new(move |x: &[f64], _th: &[f64]| {
        DMatrix::from_element(x.len(), 1, -1.0 / sigma)
    })))
}

/// Conditional reduction of the location model for `n >= 2`: the contrasts
/// `u_i - u_bar` are observed through the data, leaving the single auxiliary
/// `sqrt(n) * u_bar ~ N(0,1)` for the reduced association `x_bar = mu +
/// (sigma/sqrt(n)) v`. Returns the reduction and a symmetric set on `v`.
pub fn gaussian_mean_conditional(
    n: usize,
    sigma: f64,
    x: &[f64],
) -> Result<(ConditionalAssociation, PredictiveRandomSet)> {
    if n < 2 {
        return Err(ImError::Precondition(
            "conditioning needs at least two observations".into(),
        ));
    }
    if x.len() != n {
        return Err(ImError::InvalidInput("data length must be n".into()));
    }
    let xbar = x.iter().sum::<f64>() / n as f64;
    // observed values of the contrasts (u_i - u_bar) = (x_i - x_bar)/sigma
    let conditioning_values: Vec<f64> = x.iter().skip(1).map(|xi| (xi - xbar) / sigma).collect();
    let scale = sigma / (n as f64).sqrt();
    let cond = ConditionalAssociation::new(
        format!("gaussian-mean-conditional(n={n})"),
        1,
        n,
        Arc::new(move |data: &[f64]| vec![data.iter().sum::<f64>() / data.len() as f64]),
        Arc::new(move |v: &[f64], th: &[f64]| vec![th[0] + scale * v[0]]),
        Arc::new(move |t: &[f64], th: &[f64]| Ok(vec![(t[0] - th[0]) / scale])),
        conditioning_values,
        AuxiliaryDistribution::standard_normal(1),
        Anchor::Global,
    )?;
    let prs = PredictiveRandomSet::symmetric(AuxiliaryDistribution::standard_normal(1), &[0.0])?;
    Ok((cond, prs))
}

/// `x_i = mu + sigma u_i` with both location and scale unknown,
/// `theta = (mu, sigma)`, `sigma > 0`.
pub fn gaussian_location_scale_model(n: usize) -> Result<Association> {
    if n < 3 {
        return Err(ImError::Precondition(
            "location-scale reduction needs n >= 3".into(),
        ));
    }
    let assoc = Association::new(
        format!("gaussian-location-scale(n={n})"),
        n,
        ParameterSpace::new(vec![(f64::NEG_INFINITY, f64::INFINITY), (0.0, f64::INFINITY)])?,
        AuxiliaryDistribution::standard_normal(n),
        Arc::new(|u: &[f64], th: &[f64]| u.iter().map(|ui| th[0] + th[1] * ui).collect()),
        Arc::new(|x: &[f64], th: &[f64]| {
            Ok(x.iter().map(|xi| (xi - th[0]) / th[1]).collect())
        }),
    )?;
    Ok(assoc.with_du_dtheta(Arc::new(|x: &[f64], th: &[f64]| {
        DMatrix::from_fn(x.len(), 2, |i, k| {
            if k == 0 {
                -1.0 / th[1]
            } else {
                -(x[i] - th[0]) / (th[1] * th[1])
            }
        })
    })))
}

/// Conditional reduction of the location-scale model: the normalized
/// contrasts `(z_i - z_bar)/sqrt(sum (z_j - z_bar)^2)` for `i = 3..n` are
/// observed; the reduced auxiliaries are `v_1 = sqrt(n) z_bar ~ N(0,1)` and
/// `v_2 = sum (z_i - z_bar)^2 ~ chi-square(n-1)`, mutually independent and
/// independent of the observed directions.
pub fn gaussian_location_scale_conditional(
    n: usize,
    x: &[f64],
) -> Result<(ConditionalAssociation, PredictiveRandomSet)> {
    if n < 3 {
        return Err(ImError::Precondition("needs n >= 3".into()));
    }
    if x.len() != n {
        return Err(ImError::InvalidInput("data length must be n".into()));
    }
    let xbar = x.iter().sum::<f64>() / n as f64;
    let ss: f64 = x.iter().map(|xi| (xi - xbar) * (xi - xbar)).sum();
    if ss <= 0.0 {
        return Err(ImError::Inversion(
            "degenerate sample: zero spread, directions undefined".into(),
        ));
    }
    let conditioning_values: Vec<f64> =
        x.iter().skip(2).map(|xi| (xi - xbar) / ss.sqrt()).collect();

    let sqrt_n = (n as f64).sqrt();
    let df = (n - 1) as f64;
    let conditional = AuxiliaryDistribution::new(
        2,
        vec![(f64::NEG_INFINITY, f64::INFINITY), (0.0, f64::INFINITY)],
        Arc::new(move |rng| {
            let z: f64 = rng.sample(rand_distr::StandardNormal);
            let mut s = 0.0;
            for _ in 0..(df as usize) {
                let w: f64 = rng.sample(rand_distr::StandardNormal);
                s += w * w;
            }
            vec![z, s]
        }),
        Arc::new(move |v: &[f64]| {
            let z = v[0];
            let s = v[1];
            if s <= 0.0 {
                return f64::NEG_INFINITY;
            }
            let half_log_2pi = 0.5 * (2.0 * std::f64::consts::PI).ln();
            let logchi = (0.5 * df - 1.0) * s.ln() - 0.5 * s
                - 0.5 * df * std::f64::consts::LN_2
                - statrs::function::gamma::ln_gamma(0.5 * df);
            -0.5 * z * z - half_log_2pi + logchi
        }),
        Some(Arc::new(move |i, v| {
            if i == 0 {
                norm_cdf(v)
            } else {
                chi2_cdf(df, v)
            }
        })),
    )?;

    let cond = ConditionalAssociation::new(
        format!("gaussian-ls-conditional(n={n})"),
        2,
        n,
        Arc::new(move |data: &[f64]| {
            let m = data.iter().sum::<f64>() / data.len() as f64;
            let s: f64 = data.iter().map(|d| (d - m) * (d - m)).sum();
            vec![m, s]
        }),
        Arc::new(move |v: &[f64], th: &[f64]| {
            vec![th[0] + th[1] * v[0] / sqrt_n, th[1] * th[1] * v[1]]
        }),
        Arc::new(move |t: &[f64], th: &[f64]| {
            if t[1] < 0.0 {
                return Err(ImError::Inversion("negative sum of squares".into()));
            }
            Ok(vec![
                (t[0] - th[0]) * sqrt_n / th[1],
                t[1] / (th[1] * th[1]),
            ])
        }),
        conditioning_values,
        conditional.clone(),
        Anchor::Global,
    )?;

    // symmetric set centered at the per-coordinate medians
    let chi_median = crate::stats::chi2_inv_cdf(df, 0.5);
    let prs = PredictiveRandomSet::symmetric(conditional, &[0.0, chi_median])?;
    Ok((cond, prs))
}
