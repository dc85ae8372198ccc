//! Straight-line least squares on `(log10 C, log10 X)` with a-priori and
//! a-posteriori parameter variances.

use std::f64::consts::LN_10;
use std::fmt;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogPoint {
    /// log10(c_e / c_ref).
    pub x: f64,
    /// log10(X).
    pub y: f64,
    /// σ_ε of this level.
    pub sigma: f64,
}

impl LogPoint {
    pub fn new(x: f64, y: f64, sigma: f64) -> Self {
        Self { x, y, sigma }
    }

    pub fn weight(&self) -> f64 {
        1.0 / (self.sigma * self.sigma)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FitMethod {
    UlsPosterior,
    WlsAprioriTrue,
    WlsAprioriEstimated,
    WlsRelativePosterior,
}

impl FitMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            FitMethod::UlsPosterior => "ULS-posterior",
            FitMethod::WlsAprioriTrue => "WLS-a-priori-true",
            FitMethod::WlsAprioriEstimated => "WLS-a-priori-estimated",
            FitMethod::WlsRelativePosterior => "WLS-relative-posterior",
        }
    }
}

impl fmt::Display for FitMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    /// Intercept, log10(K_F·c_ref).
    pub a: f64,
    /// Slope, the Freundlich exponent.
    pub n: f64,
    pub k_f: f64,
    pub c_ref: f64,
    pub sigma_a: f64,
    pub sigma_n: f64,
    pub sigma_kf: f64,
    pub cv_kf: f64,
    pub cv_n: f64,
    /// Weighted residual sum of squares with the weights used in the fit.
    pub chi2: f64,
    pub dof: usize,
    /// Multiplier applied to the a-priori variances (1 for a-priori fits).
    pub scale_factor: f64,
    pub method: FitMethod,
    /// `y − a − n·x` per point.
    pub residuals: Vec<f64>,
}

/// Centered weighted sums of a straight-line fit.
struct LineSums {
    s: f64,
    x_m: f64,
    s_tt: f64,
    a: f64,
    b: f64,
}

fn line_sums(points: &[LogPoint]) -> Result<LineSums> {
    if points.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "need at least 3 points for a line with >= 1 degree of freedom, got {}",
            points.len()
        )));
    }
    for (i, p) in points.iter().enumerate() {
        if !(p.sigma > 0.0 && p.sigma.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "point {i}: sigma must be > 0, got {}",
                p.sigma
            )));
        }
        if !p.x.is_finite() || !p.y.is_finite() {
            return Err(Error::InvalidInput(format!(
                "point {i}: non-finite coordinates ({}, {})",
                p.x, p.y
            )));
        }
    }
    let s: f64 = points.iter().map(LogPoint::weight).sum();
    let x_m = points.iter().map(|p| p.weight() * p.x).sum::<f64>() / s;
    let y_m = points.iter().map(|p| p.weight() * p.y).sum::<f64>() / s;
    let mut s_tt = 0.0;
    let mut s_ty = 0.0;
    for p in points {
        let t = p.x - x_m;
        s_tt += p.weight() * t * t;
        s_ty += p.weight() * t * p.y;
    }
    let spread = points
        .iter()
        .map(|p| (p.x - x_m).abs())
        .fold(0.0, f64::max);
    if spread == 0.0 || !(s_tt > 0.0) {
        return Err(Error::DegenerateDesign);
    }
    let b = s_ty / s_tt;
    let a = y_m - b * x_m;
    Ok(LineSums { s, x_m, s_tt, a, b })
}

/// Σ((y − a − n·x)/σ)².
pub fn chi2_merit(points: &[LogPoint], a: f64, n: f64) -> f64 {
    points
        .iter()
        .map(|p| ((p.y - a - n * p.x) / p.sigma).powi(2))
        .sum()
}

fn assemble(
    points: &[LogPoint],
    sums: &LineSums,
    c_ref: f64,
    scale_factor: f64,
    method: FitMethod,
) -> Result<FitResult> {
    if !(c_ref > 0.0) {
        return Err(Error::InvalidParameter(format!("c_ref must be > 0, got {c_ref}")));
    }
    let var_n = 1.0 / sums.s_tt;
    // 1/S · (1 + (Σw x)²/(S·S_tt)) = 1/S + x_m²/S_tt
    let var_a = 1.0 / sums.s + sums.x_m * sums.x_m / sums.s_tt;
    let sigma_a = (var_a * scale_factor).sqrt();
    let sigma_n = (var_n * scale_factor).sqrt();
    let k_f = 10f64.powf(sums.a) / c_ref;
    let sigma_kf = LN_10 * k_f * sigma_a;
    let residuals = points.iter().map(|p| p.y - sums.a - sums.b * p.x).collect();
    Ok(FitResult {
        a: sums.a,
        n: sums.b,
        k_f,
        c_ref,
        sigma_a,
        sigma_n,
        sigma_kf,
        cv_kf: sigma_kf / k_f,
        cv_n: sigma_n / sums.b.abs(),
        chi2: chi2_merit(points, sums.a, sums.b),
        dof: points.len() - 2,
        scale_factor,
        method,
        residuals,
    })
}

/// WLS fit with weights `1/σ²` and a-priori variances.
pub fn fit_line(points: &[LogPoint], c_ref: f64) -> Result<FitResult> {
    let sums = line_sums(points)?;
    assemble(points, &sums, c_ref, 1.0, FitMethod::WlsAprioriTrue)
}

/// Same as [`fit_line`] but tagged with the given method.
pub fn fit_line_as(points: &[LogPoint], c_ref: f64, method: FitMethod) -> Result<FitResult> {
    let sums = line_sums(points)?;
    assemble(points, &sums, c_ref, 1.0, method)
}

/// Unweighted fit with variances scaled by `F_ULS = Σ residual² / ν`.
pub fn fit_uls_posterior(xy: &[(f64, f64)], c_ref: f64) -> Result<FitResult> {
    let points: Vec<LogPoint> = xy.iter().map(|&(x, y)| LogPoint::new(x, y, 1.0)).collect();
    posterior(&points, c_ref, FitMethod::UlsPosterior)
}

/// WLS fit with relative weights and variances scaled by
/// `F_WLS = Σ w·residual² / ν`.
pub fn fit_relative_posterior(points: &[LogPoint], c_ref: f64) -> Result<FitResult> {
    posterior(points, c_ref, FitMethod::WlsRelativePosterior)
}

fn posterior(points: &[LogPoint], c_ref: f64, method: FitMethod) -> Result<FitResult> {
    let sums = line_sums(points)?;
    let dof = points.len() - 2;
    let scale = chi2_merit(points, sums.a, sums.b) / dof as f64;
    assemble(points, &sums, c_ref, scale, method)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pts(xs: &[f64], ys: &[f64], sig: &[f64]) -> Vec<LogPoint> {
        xs.iter()
            .zip(ys)
            .zip(sig)
            .map(|((&x, &y), &s)| LogPoint::new(x, y, s))
            .collect()
    }

    // Uncentered normal equations solved by Cramer's rule.
    fn normal_equations(points: &[LogPoint]) -> (f64, f64, f64, f64) {
        let (mut s, mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for p in points {
            let w = 1.0 / (p.sigma * p.sigma);
            s += w;
            sx += w * p.x;
            sy += w * p.y;
            sxx += w * p.x * p.x;
            sxy += w * p.x * p.y;
        }
        let det = s * sxx - sx * sx;
        let a = (sxx * sy - sx * sxy) / det;
        let b = (s * sxy - sx * sy) / det;
        // inverse of [[s, sx], [sx, sxx]]
        (a, b, sxx / det, s / det)
    }

    #[test]
    fn exact_line() {
        let xs = [-1.0, -0.5, 0.0, 0.5, 1.0];
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 + 0.5 * x).collect();
        let f = fit_line(&pts(&xs, &ys, &[0.1; 5]), 1.0).unwrap();
        assert!((f.a - 2.0).abs() < 1e-14);
        assert!((f.n - 0.5).abs() < 1e-14);
        assert!(f.chi2 < 1e-24);
        assert_eq!(f.dof, 3);
        assert_eq!(f.scale_factor, 1.0);
        assert!((f.k_f - 100.0).abs() < 1e-11);
    }

    #[test]
    fn three_point_slope_variance() {
        let f = fit_line(&pts(&[-1.0, 0.0, 1.0], &[1.0, 2.0, 3.0], &[1.0; 3]), 1.0).unwrap();
        assert!((f.a - 2.0).abs() < 1e-15);
        assert!((f.n - 1.0).abs() < 1e-15);
        assert!((f.sigma_n - 0.5f64.sqrt()).abs() < 1e-15);
        // 1/S + x_m²/S_tt with x_m = 0
        assert!((f.sigma_a - (1.0f64 / 3.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn matches_normal_equations() {
        let p = pts(&[0.0, 1.0, 2.0], &[0.0, 1.0, 1.0], &[0.5, 1.0, 1.0]);
        let f = fit_line(&p, 1.0).unwrap();
        let (a, b, var_a, var_b) = normal_equations(&p);
        assert!((f.a - a).abs() < 1e-12);
        assert!((f.n - b).abs() < 1e-12);
        assert!((f.sigma_a.powi(2) - var_a).abs() < 1e-12);
        assert!((f.sigma_n.powi(2) - var_b).abs() < 1e-12);
    }

    #[test]
    fn fit_errors() {
        assert!(matches!(
            fit_line(&pts(&[0.0, 1.0], &[0.0, 1.0], &[1.0, 1.0]), 1.0),
            Err(Error::InsufficientData(_))
        ));
        assert!(matches!(
            fit_line(&pts(&[1.0; 3], &[0.0, 1.0, 2.0], &[1.0; 3]), 1.0),
            Err(Error::DegenerateDesign)
        ));
        assert!(fit_line(&pts(&[0.0, 1.0, 2.0], &[0.0, 1.0, 2.0], &[1.0, 0.0, 1.0]), 1.0).is_err());
    }

    #[test]
    fn uls_scale_factor() {
        let f = fit_uls_posterior(&[(0.0, 1.0), (1.0, 2.0), (2.0, 3.0)], 1.0).unwrap();
        assert!(f.scale_factor < 1e-28);
        assert!(f.cv_kf < 1e-12 && f.cv_n < 1e-12);

        // residuals {1, -2, 1} are orthogonal to (1, x) for x = {0, 1, 2},
        // so the fitted line stays at y = x and F_ULS = 6
        let f = fit_uls_posterior(&[(0.0, 1.0), (1.0, -1.0), (2.0, 3.0)], 1.0).unwrap();
        assert!((f.n - 1.0).abs() < 1e-14 && f.a.abs() < 1e-14);
        assert!((f.scale_factor - 6.0).abs() < 1e-12);
        assert_eq!(f.method, FitMethod::UlsPosterior);
    }

    #[test]
    fn uls_arithmetic_on_given_residuals() {
        // F_ULS for residuals {1, -1, 1} and ν = 1
        let res = [1.0f64, -1.0, 1.0];
        let f_uls: f64 = res.iter().map(|r| r * r).sum::<f64>() / 1.0;
        assert_eq!(f_uls, 3.0);
        // F_WLS for the same residuals scaled by σ = 2
        let f_wls: f64 = [2.0f64, -2.0, 2.0].iter().map(|r| 0.25 * r * r).sum::<f64>() / 1.0;
        assert_eq!(f_wls, 3.0);
    }

    #[test]
    fn relative_scale_factor() {
        // residuals {2, -4, 2} orthogonal to (1, x), σ = 2
        let p = pts(&[0.0, 1.0, 2.0], &[2.0, -3.0, 4.0], &[2.0; 3]);
        let f = fit_relative_posterior(&p, 1.0).unwrap();
        assert!((f.scale_factor - 0.25 * 24.0).abs() < 1e-12);
        let exact = pts(&[0.0, 1.0, 2.0], &[0.0, 1.0, 2.0], &[0.3, 2.0, 5.0]);
        assert!(fit_relative_posterior(&exact, 1.0).unwrap().scale_factor < 1e-28);
    }

    #[test]
    fn chi2_examples() {
        let p = pts(&[0.0, 1.0], &[1.0, 0.0], &[1.0, 1.0]);
        assert!((chi2_merit(&p, 0.0, 0.0) - 1.0).abs() < 1e-15);
        let p = pts(&[0.0, 1.0], &[1.0, -1.0], &[1.0, 1.0]);
        assert_eq!(chi2_merit(&p, 0.0, 0.0), 2.0);
        let p = pts(&[0.0, 1.0, 2.0], &[1.0, 3.0, 5.0], &[0.1, 0.2, 0.3]);
        assert_eq!(chi2_merit(&p, 1.0, 2.0), 0.0);
    }

    #[test]
    fn cv_kf_is_ln10_sigma_a() {
        let p = pts(&[-1.0, -0.3, 0.4, 1.1], &[0.1, 0.4, 0.6, 1.2], &[0.05, 0.02, 0.03, 0.01]);
        let f = fit_line(&p, 2.0).unwrap();
        assert!((f.cv_kf - LN_10 * f.sigma_a).abs() < 1e-15);
        assert!((f.k_f - 10f64.powf(f.a) / 2.0).abs() < 1e-12 * f.k_f);
    }

    fn point_sets() -> impl Strategy<Value = Vec<LogPoint>> {
        proptest::collection::vec(
            (-2.0f64..2.0, -3.0f64..3.0, 0.01f64..2.0).prop_map(|(x, y, s)| LogPoint::new(x, y, s)),
            5..=5,
        )
        .prop_filter("needs x spread", |p| {
            let lo = p.iter().map(|q| q.x).fold(f64::INFINITY, f64::min);
            let hi = p.iter().map(|q| q.x).fold(f64::NEG_INFINITY, f64::max);
            hi - lo > 0.1
        })
    }

    proptest! {
        #[test]
        fn uls_is_apriori_times_factor(p in point_sets()) {
            let xy: Vec<(f64, f64)> = p.iter().map(|q| (q.x, q.y)).collect();
            let unit: Vec<LogPoint> = xy.iter().map(|&(x, y)| LogPoint::new(x, y, 1.0)).collect();
            let prior = fit_line(&unit, 1.0).unwrap();
            let post = fit_uls_posterior(&xy, 1.0).unwrap();
            let sumsq: f64 = prior.residuals.iter().map(|r| r * r).sum();
            prop_assert!((post.scale_factor - sumsq / 3.0).abs() <= 1e-12 * sumsq.max(1e-300));
            prop_assert!((post.sigma_n.powi(2) - prior.sigma_n.powi(2) * post.scale_factor).abs()
                <= 1e-12 * post.sigma_n.powi(2).max(1e-300));
            prop_assert!((post.sigma_a.powi(2) - prior.sigma_a.powi(2) * post.scale_factor).abs()
                <= 1e-12 * post.sigma_a.powi(2).max(1e-300));
        }

        #[test]
        fn coefficients_match_normal_equations(p in point_sets()) {
            let f = fit_line(&p, 1.0).unwrap();
            let (a, b, _, _) = normal_equations(&p);
            prop_assert!((f.a - a).abs() < 1e-9 * (1.0 + a.abs()));
            prop_assert!((f.n - b).abs() < 1e-9 * (1.0 + b.abs()));
        }

        #[test]
        fn sigma_scale_invariance(p in point_sets(), c in 0.01f64..100.0) {
            let f = fit_line(&p, 1.0).unwrap();
            let scaled: Vec<LogPoint> = p.iter().map(|q| LogPoint::new(q.x, q.y, q.sigma * c)).collect();
            let g = fit_line(&scaled, 1.0).unwrap();
            prop_assert!((f.a - g.a).abs() < 1e-10 * (1.0 + f.a.abs()));
            prop_assert!((f.n - g.n).abs() < 1e-10 * (1.0 + f.n.abs()));
            prop_assert!((g.sigma_n / f.sigma_n - c).abs() < 1e-10 * c);
            let rf = fit_relative_posterior(&p, 1.0).unwrap();
            let rg = fit_relative_posterior(&scaled, 1.0).unwrap();
            prop_assert!((rf.sigma_n - rg.sigma_n).abs() <= 1e-9 * rf.sigma_n.max(1e-300));
            prop_assert!((rf.sigma_a - rg.sigma_a).abs() <= 1e-9 * rf.sigma_a.max(1e-300));
        }

        #[test]
        fn equal_sigma_is_unweighted(p in point_sets(), s in 0.01f64..10.0) {
            let eq: Vec<LogPoint> = p.iter().map(|q| LogPoint::new(q.x, q.y, s)).collect();
            let f = fit_line(&eq, 1.0).unwrap();
            let n = eq.len() as f64;
            let mx = eq.iter().map(|q| q.x).sum::<f64>() / n;
            let my = eq.iter().map(|q| q.y).sum::<f64>() / n;
            let sxy: f64 = eq.iter().map(|q| (q.x - mx) * (q.y - my)).sum();
            let sxx: f64 = eq.iter().map(|q| (q.x - mx).powi(2)).sum();
            prop_assert!((f.n - sxy / sxx).abs() < 1e-10 * (1.0 + f.n.abs()));
            prop_assert!((f.a - (my - f.n * mx)).abs() < 1e-10 * (1.0 + f.a.abs()));
        }

        #[test]
        fn local_optimality(p in point_sets()) {
            let f = fit_line(&p, 1.0).unwrap();
            let h = 1e-6;
            for (da, dn) in [(h, 0.0), (-h, 0.0), (0.0, h), (0.0, -h), (h, h), (-h, -h), (h, -h), (-h, h)] {
                prop_assert!(f.chi2 <= chi2_merit(&p, f.a + da, f.n + dn) * (1.0 + 1e-12));
            }
        }

        #[test]
        fn chi2_matches_naive_sum(p in point_sets(), a in -2.0f64..2.0, n in -2.0f64..2.0) {
            let mut naive = 0.0;
            for q in &p {
                let r = q.y - (a + n * q.x);
                naive += r * r / (q.sigma * q.sigma);
            }
            prop_assert!((chi2_merit(&p, a, n) - naive).abs() <= 1e-14 * naive.max(1.0));
        }
    }
}
