//! Shared distribution functions, one-sided KS statistics, deterministic
//! stream-split Monte Carlo, and output float formatting.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

/// Standard normal CDF, via erfc for full double precision in the tails.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Standard normal quantile function.
pub fn norm_inv_cdf(p: f64) -> f64 {
    Normal::new(0.0, 1.0).unwrap().inverse_cdf(p)
}

/// Chi-square CDF with `k` degrees of freedom.
pub fn chi2_cdf(k: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    ChiSquared::new(k).unwrap().cdf(x)
}

/// Chi-square quantile with `k` degrees of freedom.
pub fn chi2_inv_cdf(k: f64, p: f64) -> f64 {
    ChiSquared::new(k).unwrap().inverse_cdf(p)
}

/// One-sided Kolmogorov-Smirnov statistic `sup_t (t - F_emp(t))`.
///
/// Measures how far the sample's empirical CDF falls *below* the uniform
/// diagonal; a sample stochastically dominated by Uniform(0,1) keeps this
/// near zero. Values are clamped into [0,1] before sorting.
pub fn ks_one_sided_above(sample: &[f64]) -> f64 {
    let mut v: Vec<f64> = sample.iter().map(|x| x.clamp(0.0, 1.0)).collect();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len() as f64;
    let mut sup: f64 = 0.0;
    for (i, x) in v.iter().enumerate() {
        sup = sup.max(x - i as f64 / n);
    }
    sup.max(0.0)
}

/// One-sided KS statistic `sup_t (F_emp(t) - t)`: how far the empirical CDF
/// rises *above* the diagonal. Used for samples that should stochastically
/// dominate Uniform(0,1).
pub fn ks_one_sided_below(sample: &[f64]) -> f64 {
    let mut v: Vec<f64> = sample.iter().map(|x| x.clamp(0.0, 1.0)).collect();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len() as f64;
    let mut sup: f64 = 0.0;
    for (i, x) in v.iter().enumerate() {
        sup = sup.max((i + 1) as f64 / n - x);
    }
    sup.max(0.0)
}

/// Two-sided KS distance of a sample of Uniform(0,1) values from uniformity.
pub fn ks_two_sided(sample: &[f64]) -> f64 {
    ks_one_sided_above(sample).max(ks_one_sided_below(sample))
}

/// One-sided KS critical value at level `alpha`: `sqrt(-ln(alpha) / (2 n))`.
pub fn ks_one_sided_critical(n: usize, alpha: f64) -> f64 {
    (-(alpha.ln()) / (2.0 * n as f64)).sqrt()
}

/// RNG for the given (seed, stream) pair. Distinct streams are independent.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Fixed chunk length for stream-split Monte Carlo.
const MC_CHUNK: usize = 1024;

/// Runs `n` seeded Monte Carlo evaluations split into fixed-size chunks, each
/// chunk on its own RNG stream. Chunks execute in parallel but the output
/// order and every drawn number depend only on `(seed, stream_tag, n)`, so
/// results are bit-identical for any worker-thread count.
pub fn chunked_mc<T, F>(n: usize, seed: u64, stream_tag: u64, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(&mut ChaCha8Rng) -> T + Sync,
{
    let n_chunks = n.div_ceil(MC_CHUNK);
    (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = stream_rng(seed, stream_tag.wrapping_add(c as u64));
            let len = MC_CHUNK.min(n - c * MC_CHUNK);
            (0..len).map(|_| f(&mut rng)).collect::<Vec<T>>()
        })
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect()
}

/// Formats a float with 17 significant digits, enough to round-trip f64.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}
