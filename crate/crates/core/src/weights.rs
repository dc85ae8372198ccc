//! Analytical error model for log-log Freundlich regression.
//!
//! The residual of the fit at one concentration level, averaged over `U`
//! replicates that share a single measured `c_i`, has standard deviation
//!
//! ```text
//! σ_ε = 1/(δ·ln10) · sqrt(γ_i² + γ_e²·[1 − δ(1 − N)]²/U)
//! ```
//!
//! in log10 units. The WLS weight of the level is `1/σ_ε²`.

use std::f64::consts::LN_10;
use std::io::Write;

use log::warn;

use crate::error::{Error, Result};
use crate::isotherm::MAX_CV;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorInputs {
    pub delta: f64,
    pub n: f64,
    pub gamma_i: f64,
    pub gamma_e: f64,
    pub u: usize,
}

impl ErrorInputs {
    pub fn new(delta: f64, n: f64, gamma_i: f64, gamma_e: f64, u: usize) -> Self {
        Self {
            delta,
            n,
            gamma_i,
            gamma_e,
            u,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0) {
            return Err(Error::InvalidInput(format!(
                "fractional decrease must be > 0 (sigma_eps diverges), got {}",
                self.delta
            )));
        }
        if self.delta > 1.0 {
            return Err(Error::InvalidInput(format!(
                "fractional decrease must be <= 1, got {}",
                self.delta
            )));
        }
        if !self.n.is_finite() {
            return Err(Error::InvalidInput(format!("non-finite exponent {}", self.n)));
        }
        if !(self.gamma_i >= 0.0) || !(self.gamma_e >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "CVs must be >= 0, got gamma_i = {}, gamma_e = {}",
                self.gamma_i, self.gamma_e
            )));
        }
        if self.u == 0 {
            return Err(Error::InvalidInput("replicate count must be >= 1".into()));
        }
        Ok(())
    }

    /// True when either CV lies beyond the range where the log linearisation
    /// is accurate.
    pub fn exceeds_cv_bound(&self) -> bool {
        self.gamma_i > MAX_CV || self.gamma_e > MAX_CV
    }
}

/// Where the σ_ε values of an [`ErrorModel`] came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorSource {
    TrueParameters,
    EstimatedFromData,
    Unit,
    RelativeScaled,
}

/// σ_ε per concentration level.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorModel {
    pub sigma_eps: Vec<f64>,
    pub source: ErrorSource,
}

impl ErrorModel {
    /// Log-space σ_ε evaluated at each level's δ with shared N, γ_i, γ_e and U.
    pub fn from_deltas(
        deltas: &[f64],
        n: f64,
        gamma_i: f64,
        gamma_e: f64,
        u: usize,
        source: ErrorSource,
    ) -> Result<Self> {
        let sigma_eps = deltas
            .iter()
            .map(|&delta| sigma_eps(&ErrorInputs::new(delta, n, gamma_i, gamma_e, u)))
            .collect::<Result<Vec<_>>>()?;
        Self::new(sigma_eps, source)
    }

    pub fn unit(levels: usize) -> Self {
        Self {
            sigma_eps: vec![1.0; levels],
            source: ErrorSource::Unit,
        }
    }

    pub fn new(sigma_eps: Vec<f64>, source: ErrorSource) -> Result<Self> {
        if let Some(s) = sigma_eps.iter().find(|s| !(**s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidInput(format!("sigma_eps must be > 0, got {s}")));
        }
        Ok(Self { sigma_eps, source })
    }

    /// The same model with every σ_ε multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(
            self.sigma_eps.iter().map(|s| s * factor).collect(),
            ErrorSource::RelativeScaled,
        )
    }

    pub fn levels(&self) -> usize {
        self.sigma_eps.len()
    }
}

fn warn_if_beyond_bound(inp: &ErrorInputs) {
    if inp.exceeds_cv_bound() {
        warn!(
            "CV above {MAX_CV} (gamma_i = {}, gamma_e = {}): weight approximation degrades",
            inp.gamma_i, inp.gamma_e
        );
    }
}

/// σ_ε from the variance of the log-log residual.
pub fn sigma_eps(inp: &ErrorInputs) -> Result<f64> {
    inp.validate()?;
    warn_if_beyond_bound(inp);
    let curvature = 1.0 - inp.delta * (1.0 - inp.n);
    let var = inp.gamma_i.powi(2) + inp.gamma_e.powi(2) * curvature.powi(2) / inp.u as f64;
    Ok(var.sqrt() / (inp.delta * LN_10))
}

/// σ_ε through the effective-variance route: the direct contribution
/// `d log X_d / d log c_i = 1/δ` of the initial concentration plus the direct
/// `|(δ−1)/δ|` and indirect `N` contributions of the equilibrium
/// concentration.
pub fn sigma_eps_effective(inp: &ErrorInputs) -> Result<f64> {
    inp.validate()?;
    warn_if_beyond_bound(inp);
    let d = inp.delta;
    let via_c_i = (1.0 / d).powi(2) * inp.gamma_i.powi(2);
    let via_c_e = ((d - 1.0).abs() / d + inp.n).powi(2) * inp.gamma_e.powi(2) / inp.u as f64;
    Ok((via_c_i + via_c_e).sqrt() / LN_10)
}

/// `[1 − δ(1 − N)]²`, the factor scaling the γ_e contribution to σ_ε.
pub fn curvature_term(delta: f64, n: f64) -> f64 {
    (1.0 - delta * (1.0 - n)).powi(2)
}

/// CV of the sorbed amount X derived from the concentration decrease.
pub fn cv_of_x(delta: f64, gamma_i: f64, gamma_e: f64) -> Result<f64> {
    if !(delta > 0.0) {
        return Err(Error::InvalidInput(format!(
            "fractional decrease must be > 0, got {delta}"
        )));
    }
    Ok((gamma_i.powi(2) + gamma_e.powi(2) * (1.0 - delta).powi(2)).sqrt() / delta)
}

/// Standard deviation of log10 of a variable with CV `gamma` (first order).
pub fn log_cv(gamma: f64) -> f64 {
    if gamma > MAX_CV {
        warn!("CV {gamma} above {MAX_CV}: log10 standard deviation approximation degrades");
    }
    gamma / LN_10
}

/// CV of δ estimated as the mean of `u` replicate decreases.
pub fn gamma_delta(delta: f64, gamma_i: f64, gamma_e: f64, u: usize) -> Result<f64> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidInput(format!(
            "fractional decrease must be in (0, 1), got {delta}"
        )));
    }
    if u == 0 {
        return Err(Error::InvalidInput("replicate count must be >= 1".into()));
    }
    Ok((1.0 - delta) / delta * (gamma_i.powi(2) + gamma_e.powi(2) / u as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceRow {
    pub delta: f64,
    pub n: f64,
    pub curvature: f64,
    /// σ_ε / γ_e.
    pub sigma_ratio: f64,
}

/// Curvature term and σ_ε/γ_e on a δ × N grid.
pub fn weight_surface(
    delta_grid: &[f64],
    n_grid: &[f64],
    gamma_i: f64,
    gamma_e: f64,
    u: usize,
) -> Result<Vec<SurfaceRow>> {
    if !(gamma_e > 0.0) {
        return Err(Error::InvalidInput(format!(
            "gamma_e must be > 0 to form sigma_eps/gamma_e, got {gamma_e}"
        )));
    }
    let mut rows = Vec::with_capacity(delta_grid.len() * n_grid.len());
    for &delta in delta_grid {
        for &n in n_grid {
            let s = sigma_eps(&ErrorInputs::new(delta, n, gamma_i, gamma_e, u))?;
            rows.push(SurfaceRow {
                delta,
                n,
                curvature: curvature_term(delta, n),
                sigma_ratio: s / gamma_e,
            });
        }
    }
    Ok(rows)
}

/// Evenly spaced grid from `lo` to `hi` inclusive.
pub fn linear_grid(lo: f64, hi: f64, steps: usize) -> Vec<f64> {
    if steps == 0 {
        return vec![lo];
    }
    (0..=steps)
        .map(|i| lo + (hi - lo) * i as f64 / steps as f64)
        .collect()
}

pub const SURFACE_HEADER: &str = "delta,n,curvature,sigma_ratio";

pub fn write_surface_csv<W: Write>(rows: &[SurfaceRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SURFACE_HEADER.split(','))?;
    for r in rows {
        w.write_record(&[
            r.delta.to_string(),
            r.n.to_string(),
            r.curvature.to_string(),
            r.sigma_ratio.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
