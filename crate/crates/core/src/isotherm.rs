//! Freundlich isotherm and batch-experiment mass balance.
//!
//! Concentrations are in mg/L, sorbed amounts in mg/kg and the
//! sorbent-liquid ratio `r` in kg/L.

use crate::error::{Error, Result};
use crate::numerics::{solve_scalar, DEFAULT_REL_TOL};

/// Upper bound on the CV of a concentration for which the log-normal
/// linearisation behind the weight formula stays accurate.
pub const MAX_CV: f64 = 0.10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FreundlichParams {
    /// Sorption coefficient, L/kg.
    pub k_f: f64,
    /// Freundlich exponent.
    pub n: f64,
    /// Reference concentration, mg/L.
    pub c_ref: f64,
}

impl FreundlichParams {
    pub fn new(k_f: f64, n: f64, c_ref: f64) -> Result<Self> {
        if !(k_f > 0.0 && k_f.is_finite()) {
            return Err(Error::InvalidParameter(format!("k_f must be > 0, got {k_f}")));
        }
        if !(n > 0.0 && n.is_finite()) {
            return Err(Error::InvalidParameter(format!("n must be > 0, got {n}")));
        }
        if !(c_ref > 0.0 && c_ref.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "c_ref must be > 0, got {c_ref}"
            )));
        }
        Ok(Self { k_f, n, c_ref })
    }

    /// Parameters with the conventional `c_ref = 1 mg/L`.
    pub fn with_unit_ref(k_f: f64, n: f64) -> Result<Self> {
        Self::new(k_f, n, 1.0)
    }
}

/// Design of a batch sorption experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct SorptionSystem {
    pub params: FreundlichParams,
    /// Sorbent-liquid ratio, kg/L.
    pub r: f64,
    /// Design initial concentrations, strictly increasing.
    pub c_i_levels: Vec<f64>,
    /// Replicate count per level.
    pub u: usize,
    pub gamma_i: f64,
    pub gamma_e: f64,
}

impl SorptionSystem {
    pub fn new(
        params: FreundlichParams,
        r: f64,
        c_i_levels: Vec<f64>,
        u: usize,
        gamma_i: f64,
        gamma_e: f64,
    ) -> Result<Self> {
        let system = Self {
            params,
            r,
            c_i_levels,
            u,
            gamma_i,
            gamma_e,
        };
        system.validate()?;
        Ok(system)
    }

    pub fn validate(&self) -> Result<()> {
        FreundlichParams::new(self.params.k_f, self.params.n, self.params.c_ref)?;
        if !(self.r > 0.0 && self.r.is_finite()) {
            return Err(Error::InvalidParameter(format!("r must be > 0, got {}", self.r)));
        }
        if self.c_i_levels.is_empty() {
            return Err(Error::InvalidParameter("no concentration levels".into()));
        }
        if self.c_i_levels.iter().any(|c| !(*c > 0.0 && c.is_finite())) {
            return Err(Error::InvalidParameter(
                "concentration levels must be > 0".into(),
            ));
        }
        if self.c_i_levels.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidParameter(
                "concentration levels must be strictly increasing".into(),
            ));
        }
        if self.u == 0 {
            return Err(Error::InvalidParameter("replicate count must be >= 1".into()));
        }
        for (name, g) in [("gamma_i", self.gamma_i), ("gamma_e", self.gamma_e)] {
            if !(0.0..=MAX_CV).contains(&g) {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be in [0, {MAX_CV}], got {g}"
                )));
            }
        }
        Ok(())
    }

    pub fn levels(&self) -> usize {
        self.c_i_levels.len()
    }

    /// Dimensionless product R·K_F that governs the system's behaviour.
    pub fn rk_f(&self) -> f64 {
        self.r * self.params.k_f
    }

    /// True equilibrium concentration at each design level.
    pub fn true_c_e(&self) -> Result<Vec<f64>> {
        self.c_i_levels
            .iter()
            .map(|&c_i| solve_equilibrium(&self.params, self.r, c_i))
            .collect()
    }

    /// True fractional decrease at each design level.
    pub fn true_delta(&self) -> Result<Vec<f64>> {
        self.c_i_levels
            .iter()
            .zip(self.true_c_e()?)
            .map(|(&c_i, c_e)| fractional_decrease(c_i, c_e))
            .collect()
    }
}

/// X = K_F·c_ref·(c_e/c_ref)^N.
pub fn sorbed_freundlich(params: &FreundlichParams, c_e: f64) -> Result<f64> {
    if !(c_e >= 0.0) {
        return Err(Error::InvalidInput(format!("c_e must be >= 0, got {c_e}")));
    }
    Ok(params.k_f * params.c_ref * (c_e / params.c_ref).powf(params.n))
}

/// X = (c_i − c_e)/R. Negative when the solution gained solute.
pub fn sorbed_from_decrease(r: f64, c_i: f64, c_e: f64) -> Result<f64> {
    if !(r > 0.0) {
        return Err(Error::InvalidInput(format!("r must be > 0, got {r}")));
    }
    if !(c_i > 0.0) {
        return Err(Error::InvalidInput(format!("c_i must be > 0, got {c_i}")));
    }
    if !(c_e >= 0.0) {
        return Err(Error::InvalidInput(format!("c_e must be >= 0, got {c_e}")));
    }
    Ok((c_i - c_e) / r)
}

/// δ = (c_i − c_e)/c_i.
pub fn fractional_decrease(c_i: f64, c_e: f64) -> Result<f64> {
    if !(c_i > 0.0) {
        return Err(Error::InvalidInput(format!("c_i must be > 0, got {c_i}")));
    }
    Ok((c_i - c_e) / c_i)
}

/// δ = R·K_F·C^N / (C + R·K_F·C^N) with C = c_e/c_ref.
pub fn delta_of_system(params: &FreundlichParams, r: f64, c_e: f64) -> Result<f64> {
    if !(c_e > 0.0) {
        return Err(Error::InvalidInput(format!("c_e must be > 0, got {c_e}")));
    }
    if !(r >= 0.0) {
        return Err(Error::InvalidInput(format!("r must be >= 0, got {r}")));
    }
    let c = c_e / params.c_ref;
    let sorbed = r * params.k_f * c.powf(params.n);
    Ok(sorbed / (c + sorbed))
}

/// Equilibrium concentration solving `c_e + R·K_F·c_ref·(c_e/c_ref)^N = c_i`.
///
/// The left side is strictly increasing in `c_e` for `N > 0`, so the root in
/// `(0, c_i]` is unique.
pub fn solve_equilibrium(params: &FreundlichParams, r: f64, c_i: f64) -> Result<f64> {
    if !(c_i > 0.0 && c_i.is_finite()) {
        return Err(Error::InvalidInput(format!("c_i must be > 0, got {c_i}")));
    }
    if !(r >= 0.0) || !(params.k_f >= 0.0) || !(params.n > 0.0) || !(params.c_ref > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "invalid system for mass balance: r = {r}, {params:?}"
        )));
    }
    let rk = r * params.k_f * params.c_ref;
    let mass_balance = |c: f64| c + rk * (c / params.c_ref).powf(params.n) - c_i;
    if rk == 0.0 {
        return Ok(c_i);
    }
    // Either c_e or the sorbed term carries at least half of c_i, which
    // brackets the root within a factor of 2^(1/N) even when c_e is tiny.
    // Both ends are widened by 2 so rounding in powf cannot lose the sign change.
    let inv_n = 1.0 / params.n;
    let lo = 0.5 * (0.5 * c_i).min(params.c_ref * (0.5 * c_i / rk).powf(inv_n));
    let hi = c_i.min(2.0 * params.c_ref * (c_i / rk).powf(inv_n));
    if !(hi > 0.0) {
        return Ok(hi.max(0.0));
    }
    let root = if mass_balance(lo) == 0.0 {
        lo
    } else if mass_balance(hi) == 0.0 {
        hi
    } else {
        solve_scalar(mass_balance, lo, hi, DEFAULT_REL_TOL)?
    };
    Ok(newton_polish(root, c_i, |c| {
        let sorbed = rk * (c / params.c_ref).powf(params.n);
        (c + sorbed - c_i, 1.0 + params.n * sorbed / c)
    }))
}

// A few Newton steps from a bracketed estimate, kept only while they reduce
// the residual and stay inside (0, upper].
fn newton_polish<F>(mut x: f64, upper: f64, f: F) -> f64
where
    F: Fn(f64) -> (f64, f64),
{
    if x <= 0.0 {
        return x;
    }
    let (mut fx, mut dfx) = f(x);
    for _ in 0..3 {
        if fx == 0.0 || !(dfx > 0.0) {
            break;
        }
        let next = x - fx / dfx;
        if !(next > 0.0 && next <= upper) {
            break;
        }
        let (fn_, dfn) = f(next);
        if fn_.abs() >= fx.abs() {
            break;
        }
        x = next;
        fx = fn_;
        dfx = dfn;
    }
    x
}
