//! Scalar utilities shared by the rest of the crate: seeded normal sampling,
//! percentiles, the χ² distribution function and a bracketed root solver.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Default relative tolerance for [`solve_scalar`].
pub const DEFAULT_REL_TOL: f64 = 1e-12;

/// Iteration cap for [`solve_scalar`].
pub const MAX_ITERATIONS: usize = 200;

/// A reproducible random stream identified by `(seed, stream_id)`.
///
/// Backed by ChaCha8 with the seed as key and `stream_id` as the cipher
/// stream selector, so distinct ids give non-overlapping sequences and the
/// output does not depend on platform or thread scheduling.
#[derive(Debug, Clone)]
pub struct RandomStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
}

impl RandomStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        Self {
            seed,
            stream_id,
            rng,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    /// Draw `mean·(1 + cv·z)` with `z` standard normal.
    pub fn sample_normal(&mut self, mean: f64, cv: f64) -> Result<f64> {
        if !(cv >= 0.0) || !cv.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "coefficient of variation must be >= 0, got {cv}"
            )));
        }
        if cv > 0.0 && !(mean > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "mean must be > 0 for a CV parameterisation, got {mean}"
            )));
        }
        let z = self.standard_normal();
        Ok(mean * (1.0 + cv * z))
    }
}

/// Linear interpolation between order statistics at rank `(n-1)·p`.
pub fn percentile(values: &[f64], p: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::InvalidInput("percentile of an empty list".into()));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidInput(format!(
            "percentile fraction must be in [0, 1], got {p}"
        )));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(percentile_sorted(&sorted, p))
}

/// Same as [`percentile`] on an already sorted, non-empty slice.
pub fn percentile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = h - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Natural log of the gamma function (Lanczos, g = 7, n = 9).
pub fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = COEF[0];
    let t = x + G + 0.5;
    for (i, c) in COEF.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// Regularised lower incomplete gamma function P(a, x).
pub fn gamma_p(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x < a + 1.0 {
        gamma_p_series(a, x)
    } else {
        1.0 - gamma_q_continued_fraction(a, x)
    }
}

fn gamma_p_series(a: f64, x: f64) -> f64 {
    let mut ap = a;
    let mut term = 1.0 / a;
    let mut sum = term;
    for _ in 0..10_000 {
        ap += 1.0;
        term *= x / ap;
        sum += term;
        if term.abs() < sum.abs() * 1e-17 {
            break;
        }
    }
    sum * (-x + a * x.ln() - ln_gamma(a)).exp()
}

// Modified Lentz evaluation of the continued fraction for Q(a, x).
fn gamma_q_continued_fraction(a: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / TINY;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..10_000 {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < TINY {
            d = TINY;
        }
        c = b + an / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < 1e-16 {
            break;
        }
    }
    (-x + a * x.ln() - ln_gamma(a)).exp() * h
}

/// χ² cumulative distribution function with `dof` degrees of freedom.
pub fn chisq_cdf(x: f64, dof: u32) -> Result<f64> {
    if dof == 0 {
        return Err(Error::InvalidInput("degrees of freedom must be >= 1".into()));
    }
    if !(x >= 0.0) {
        return Err(Error::InvalidInput(format!(
            "chi-square argument must be >= 0, got {x}"
        )));
    }
    if x.is_infinite() {
        return Ok(1.0);
    }
    Ok(gamma_p(dof as f64 / 2.0, x / 2.0).clamp(0.0, 1.0))
}

/// Inverse of [`chisq_cdf`] for `p` in `[0, 1)`.
pub fn chisq_quantile(p: f64, dof: u32) -> Result<f64> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::InvalidInput(format!(
            "quantile probability must be in [0, 1), got {p}"
        )));
    }
    if p == 0.0 {
        return Ok(0.0);
    }
    let mut hi = dof as f64 + 10.0;
    while chisq_cdf(hi, dof)? < p {
        hi *= 2.0;
    }
    solve_scalar(
        |x| chisq_cdf(x, dof).map(|c| c - p).unwrap_or(f64::NAN),
        0.0,
        hi,
        1e-14,
    )
}

/// Bracketed bisection for a continuous monotone `f` with a sign change on
/// `[lo, hi]`.
///
/// Bisection stops once the bracket width is at most `rel_tol` times the
/// larger magnitude of its current endpoints (or no representable midpoint
/// remains). A final false-position step inside the last bracket polishes the
/// estimate, and the candidate with the smallest residual is returned.
pub fn solve_scalar<F>(f: F, lo: f64, hi: f64, rel_tol: f64) -> Result<f64>
where
    F: Fn(f64) -> f64,
{
    if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::InvalidInput(format!("invalid bracket [{lo}, {hi}]")));
    }
    if !(rel_tol > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "rel_tol must be > 0, got {rel_tol}"
        )));
    }
    let (mut a, mut b) = (lo, hi);
    let (mut fa, mut fb) = (f(a), f(b));
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    if !(fa.signum() != fb.signum()) || fa.is_nan() || fb.is_nan() {
        return Err(Error::Bracket {
            lo,
            hi,
            f_lo: fa,
            f_hi: fb,
        });
    }
    let mut converged = false;
    for _ in 0..MAX_ITERATIONS {
        let mid = a + 0.5 * (b - a);
        if mid <= a || mid >= b {
            converged = true;
            break;
        }
        let fm = f(mid);
        if fm == 0.0 {
            return Ok(mid);
        }
        if fm.is_nan() {
            return Err(Error::InvalidInput(format!("function is NaN at {mid}")));
        }
        if fm.signum() == fa.signum() {
            a = mid;
            fa = fm;
        } else {
            b = mid;
            fb = fm;
        }
        if b - a <= rel_tol * a.abs().max(b.abs()) {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Convergence {
            iterations: MAX_ITERATIONS,
        });
    }
    let mut best = if fa.abs() <= fb.abs() { (a, fa) } else { (b, fb) };
    let interp = a - fa * (b - a) / (fb - fa);
    if interp > a && interp < b {
        let fi = f(interp);
        if fi.abs() < best.1.abs() {
            best = (interp, fi);
        }
    }
    Ok(best.0)
}

/// Arithmetic mean; `NaN` for an empty slice.
pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample standard deviation with divisor `n - 1`; `NaN` when `n < 2`.
pub fn sample_std(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return f64::NAN;
    }
    // Deviations from the first value are exact for identical inputs, so a
    // constant sample gives exactly zero.
    let shift = values[0];
    let d: Vec<f64> = values.iter().map(|v| v - shift).collect();
    let m = mean(&d);
    let ss: f64 = d.iter().map(|v| (v - m).powi(2)).sum();
    (ss / (values.len() - 1) as f64).sqrt()
}
