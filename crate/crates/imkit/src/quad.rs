//! Quadrature: composite Gauss–Legendre panels and adaptive Simpson.

use crate::error::{ImError, Result};

/// 8-point Gauss–Legendre nodes on [-1, 1].
const GL8_NODES: [f64; 8] = [
    -0.9602898564975362,
    -0.7966664774136267,
    -0.5255324099163290,
    -0.1834346424956498,
    0.1834346424956498,
    0.5255324099163290,
    0.7966664774136267,
    0.9602898564975362,
];

/// Matching 8-point Gauss–Legendre weights.
const GL8_WEIGHTS: [f64; 8] = [
    0.1012285362903763,
    0.2223810344533745,
    0.3137066458778873,
    0.3626837833783620,
    0.3626837833783620,
    0.3137066458778873,
    0.2223810344533745,
    0.1012285362903763,
];

/// Integrates `f` over `[a, b]` with `segments` composite 8-point
/// Gauss–Legendre panels. Exact for polynomials up to degree 15 per panel.
pub fn gauss_legendre<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, segments: usize) -> f64 {
    let segments = segments.max(1);
    let h = (b - a) / segments as f64;
    let mut total = 0.0;
    for s in 0..segments {
        let lo = a + s as f64 * h;
        let mid = lo + 0.5 * h;
        let half = 0.5 * h;
        let mut acc = 0.0;
        for (x, w) in GL8_NODES.iter().zip(GL8_WEIGHTS.iter()) {
            acc += w * f(mid + half * x);
        }
        total += acc * half;
    }
    total
}

/// Adaptive Simpson integration of `f` over `[a, b]` to absolute tolerance
/// `tol`. Errors out if the recursion cannot meet the tolerance.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> Result<f64> {
    fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, fa: f64, b: f64, fb: f64) -> (f64, f64, f64) {
        let m = 0.5 * (a + b);
        let fm = f(m);
        ((b - a) / 6.0 * (fa + 4.0 * fm + fb), m, fm)
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse<F: Fn(f64) -> f64>(
        f: &F,
        a: f64,
        fa: f64,
        b: f64,
        fb: f64,
        whole: f64,
        m: f64,
        fm: f64,
        tol: f64,
        min_width: f64,
        depth: usize,
    ) -> Result<f64> {
        let (left, lm, flm) = simpson(f, a, fa, m, fm);
        let (right, rm, frm) = simpson(f, m, fm, b, fb);
        let delta = left + right - whole;
        // accept on tolerance, or when the panel is at roundoff width
        if delta.abs() <= 15.0 * tol || (b - a).abs() <= min_width {
            return Ok(left + right + delta / 15.0);
        }
        if depth == 0 {
            return Err(ImError::Quadrature(format!(
                "adaptive depth exhausted on [{a}, {b}], residual {:.3e}",
                delta.abs()
            )));
        }
        let l = recurse(f, a, fa, m, fm, left, lm, flm, 0.5 * tol, min_width, depth - 1)?;
        let r = recurse(f, m, fm, b, fb, right, rm, frm, 0.5 * tol, min_width, depth - 1)?;
        Ok(l + r)
    }

    if !(a.is_finite() && b.is_finite()) {
        return Err(ImError::Quadrature("non-finite limits".into()));
    }
    let fa = f(a);
    let fb = f(b);
    if !fa.is_finite() || !fb.is_finite() {
        return Err(ImError::Quadrature("non-finite integrand at endpoint".into()));
    }
    let (whole, m, fm) = simpson(&f, a, fa, b, fb);
    let min_width = 1e-12 * (b - a).abs().max(1e-300);
    recurse(&f, a, fa, b, fb, whole, m, fm, tol, min_width, 48)
}

/// Cumulative trapezoid of `values` tabulated on `grid`; output starts at 0.
pub fn cumulative_trapezoid(grid: &[f64], values: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(grid.len());
    let mut acc = 0.0;
    out.push(0.0);
    for i in 1..grid.len() {
        acc += 0.5 * (values[i] + values[i - 1]) * (grid[i] - grid[i - 1]);
        out.push(acc);
    }
    out
}

/// Piecewise-linear interpolation of `(xs, ys)` at `x`, clamped at the ends.
pub fn interp_linear(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    debug_assert_eq!(xs.len(), ys.len());
    if x <= xs[0] {
        return ys[0];
    }
    if x >= xs[xs.len() - 1] {
        return ys[ys.len() - 1];
    }
    let j = match xs.binary_search_by(|v| v.partial_cmp(&x).unwrap()) {
        Ok(j) => return ys[j],
        Err(j) => j,
    };
    let t = (x - xs[j - 1]) / (xs[j] - xs[j - 1]);
    ys[j - 1] + t * (ys[j] - ys[j - 1])
}

/// Monotone cubic interpolant (Fritsch–Carlson) over strictly monotone data.
/// Stays monotone between knots, so it is invertible.
#[derive(Clone, Debug)]
pub struct MonotoneCubic {
    xs: Vec<f64>,
    ys: Vec<f64>,
    slopes: Vec<f64>,
}

impl MonotoneCubic {
    pub fn new(xs: Vec<f64>, ys: Vec<f64>) -> crate::error::Result<Self> {
        if xs.len() < 2 || xs.len() != ys.len() {
            return Err(ImError::InvalidInput("need matching tables of length >= 2".into()));
        }
        if xs.windows(2).any(|w| w[0] >= w[1]) {
            return Err(ImError::InvalidInput("knots must be strictly increasing".into()));
        }
        let inc = ys.windows(2).all(|w| w[1] > w[0]);
        let dec = ys.windows(2).all(|w| w[1] < w[0]);
        if !(inc || dec) {
            return Err(ImError::InvalidInput("values must be strictly monotone".into()));
        }
        let n = xs.len();
        let h: Vec<f64> = xs.windows(2).map(|w| w[1] - w[0]).collect();
        let d: Vec<f64> = ys
            .windows(2)
            .zip(&h)
            .map(|(w, hi)| (w[1] - w[0]) / hi)
            .collect();
        let mut m = vec![0.0; n];
        m[0] = d[0];
        m[n - 1] = d[n - 2];
        for i in 1..n - 1 {
            if d[i - 1] * d[i] <= 0.0 {
                m[i] = 0.0;
            } else {
                let w1 = 2.0 * h[i] + h[i - 1];
                let w2 = h[i] + 2.0 * h[i - 1];
                m[i] = (w1 + w2) / (w1 / d[i - 1] + w2 / d[i]);
            }
        }
        Ok(Self { xs, ys, slopes: m })
    }

    pub fn knots(&self) -> (&[f64], &[f64]) {
        (&self.xs, &self.ys)
    }

    pub fn eval(&self, x: f64) -> f64 {
        let n = self.xs.len();
        if x <= self.xs[0] {
            return self.ys[0] + self.slopes[0] * (x - self.xs[0]);
        }
        if x >= self.xs[n - 1] {
            return self.ys[n - 1] + self.slopes[n - 1] * (x - self.xs[n - 1]);
        }
        let j = self.xs.partition_point(|v| *v < x).max(1);
        let (x0, x1) = (self.xs[j - 1], self.xs[j]);
        let (y0, y1) = (self.ys[j - 1], self.ys[j]);
        let (m0, m1) = (self.slopes[j - 1], self.slopes[j]);
        let h = x1 - x0;
        let t = (x - x0) / h;
        let t2 = t * t;
        let t3 = t2 * t;
        y0 * (2.0 * t3 - 3.0 * t2 + 1.0)
            + m0 * h * (t3 - 2.0 * t2 + t)
            + y1 * (-2.0 * t3 + 3.0 * t2)
            + m1 * h * (t3 - t2)
    }

    /// Inverts the interpolant at `y` by bisection on its monotone branch.
    pub fn inverse(&self, y: f64) -> f64 {
        let n = self.xs.len();
        let increasing = self.ys[n - 1] > self.ys[0];
        let (mut lo, mut hi) = (self.xs[0], self.xs[n - 1]);
        let y_lo = self.eval(lo);
        let y_hi = self.eval(hi);
        let (ymin, ymax) = if increasing { (y_lo, y_hi) } else { (y_hi, y_lo) };
        if y <= ymin {
            return if increasing { lo } else { hi };
        }
        if y >= ymax {
            return if increasing { hi } else { lo };
        }
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            let v = self.eval(mid);
            if (v - y).abs() < 1e-15 * (1.0 + y.abs()) {
                return mid;
            }
            let below = if increasing { v < y } else { v > y };
            if below {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }
}

/// Inverts a nondecreasing tabulated map `(xs, ys)` at level `y` by linear
/// interpolation; ties resolve to the leftmost crossing.
pub fn interp_inverse(xs: &[f64], ys: &[f64], y: f64) -> f64 {
    if y <= ys[0] {
        return xs[0];
    }
    let last = ys.len() - 1;
    if y >= ys[last] {
        return xs[last];
    }
    let mut lo = 0usize;
    let mut hi = last;
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if ys[mid] < y {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let dy = ys[hi] - ys[lo];
    if dy <= 0.0 {
        return xs[lo];
    }
    xs[lo] + (y - ys[lo]) / dy * (xs[hi] - xs[lo])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gl8_exact_on_degree_15() {
        // integral of x^15 over [0,2] = 2^16/16 = 4096
        let got = gauss_legendre(|x| x.powi(15), 0.0, 2.0, 1);
        assert!((got - 4096.0).abs() < 1e-9, "{got}");
    }

    #[test]
    fn gl_composite_converges_on_exp() {
        let got = gauss_legendre(f64::exp, 0.0, 1.0, 4);
        assert!((got - (std::f64::consts::E - 1.0)).abs() < 1e-14);
    }

    #[test]
    fn simpson_matches_closed_forms() {
        let v = adaptive_simpson(&|x: f64| x.sin(), 0.0, std::f64::consts::PI, 1e-12).unwrap();
        assert!((v - 2.0).abs() < 1e-10);
        let g = adaptive_simpson(&|x: f64| (-0.5 * x * x).exp(), -8.0, 8.0, 1e-12).unwrap();
        assert!((g - (2.0 * std::f64::consts::PI).sqrt()).abs() < 1e-9);
    }

    #[test]
    fn interp_inverse_round_trip() {
        let xs: Vec<f64> = (0..101).map(|i| i as f64 / 100.0).collect();
        let ys: Vec<f64> = xs.iter().map(|x| x * x).collect();
        for &y in &[0.04, 0.3, 0.77] {
            let x = interp_inverse(&xs, &ys, y);
            assert!((interp_linear(&xs, &ys, x) - y).abs() < 1e-12);
        }
    }
}
