//! Estimating δ, γ_e and γ_i from the replicate structure of one isotherm.

use crate::error::{Error, Result};
use crate::numerics::{mean, sample_std};

/// One concentration level of a batch sorption experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelRecord {
    /// Design initial concentration, when known.
    pub expected_c_i: Option<f64>,
    /// The single measured initial concentration shared by all replicates.
    pub measured_c_i: f64,
    pub replicate_c_e: Vec<f64>,
}

/// Measured or simulated isotherm: `L` levels with `U` replicates each.
#[derive(Debug, Clone, PartialEq)]
pub struct IsothermDataset {
    pub levels: Vec<LevelRecord>,
    /// Sorbent-liquid ratio, kg/L.
    pub r: f64,
    pub c_ref: f64,
}

impl IsothermDataset {
    pub fn new(levels: Vec<LevelRecord>, r: f64, c_ref: f64) -> Result<Self> {
        let ds = Self { levels, r, c_ref };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.r > 0.0) {
            return Err(Error::InvalidInput(format!("r must be > 0, got {}", self.r)));
        }
        if !(self.c_ref > 0.0) {
            return Err(Error::InvalidInput(format!(
                "c_ref must be > 0, got {}",
                self.c_ref
            )));
        }
        let Some(first) = self.levels.first() else {
            return Err(Error::InvalidInput("dataset has no levels".into()));
        };
        let u = first.replicate_c_e.len();
        if u == 0 {
            return Err(Error::InvalidInput("level 1 has no replicates".into()));
        }
        for (i, lvl) in self.levels.iter().enumerate() {
            if lvl.replicate_c_e.len() != u {
                return Err(Error::InvalidInput(format!(
                    "level {} has {} replicates, expected {u}",
                    i + 1,
                    lvl.replicate_c_e.len()
                )));
            }
            if !(lvl.measured_c_i > 0.0) {
                return Err(Error::InvalidInput(format!(
                    "level {}: measured c_i must be > 0, got {}",
                    i + 1,
                    lvl.measured_c_i
                )));
            }
            if let Some(e) = lvl.expected_c_i {
                if !(e > 0.0) {
                    return Err(Error::InvalidInput(format!(
                        "level {}: expected c_i must be > 0, got {e}",
                        i + 1
                    )));
                }
            }
            for (j, &c) in lvl.replicate_c_e.iter().enumerate() {
                if !(c > 0.0) {
                    return Err(Error::NonpositiveObservable {
                        what: "c_e",
                        level: i + 1,
                        replicate: j + 1,
                        value: c,
                    });
                }
            }
        }
        Ok(())
    }

    pub fn replicates(&self) -> usize {
        self.levels.first().map_or(0, |l| l.replicate_c_e.len())
    }

    pub fn level_count(&self) -> usize {
        self.levels.len()
    }

    /// Mean measured δ per level.
    pub fn deltas(&self) -> Vec<f64> {
        self.levels.iter().map(estimate_delta).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatedErrorParams {
    pub delta_per_level: Vec<f64>,
    pub gamma_e: f64,
    pub gamma_i: f64,
}

/// Mean over replicates of `(c_i − c_e,u)/c_i`.
pub fn estimate_delta(level: &LevelRecord) -> f64 {
    let c_i = level.measured_c_i;
    let ds: Vec<f64> = level
        .replicate_c_e
        .iter()
        .map(|c_e| (c_i - c_e) / c_i)
        .collect();
    mean(&ds)
}

/// Root mean over levels of `s²/c̄_e²`, with `s²` the replicate sample
/// variance (divisor `U − 1`).
pub fn estimate_gamma_e(dataset: &IsothermDataset) -> Result<f64> {
    let u = dataset.replicates();
    if u < 2 {
        return Err(Error::InsufficientReplicates(u));
    }
    if dataset.levels.is_empty() {
        return Err(Error::InsufficientLevels(0));
    }
    let per_level: Vec<f64> = dataset
        .levels
        .iter()
        .map(|l| (sample_std(&l.replicate_c_e) / mean(&l.replicate_c_e)).powi(2))
        .collect();
    Ok(mean(&per_level).sqrt())
}

/// CV of the initial concentrations from measured/expected quotients.
///
/// The quotients are normalised by their mean so a common bias in the
/// stock solutions cancels, then their sample standard deviation (divisor
/// `L − 1`) is returned.
pub fn estimate_gamma_i(dataset: &IsothermDataset) -> Result<f64> {
    let l = dataset.level_count();
    if l < 2 {
        return Err(Error::InsufficientLevels(l));
    }
    let quotients = dataset
        .levels
        .iter()
        .enumerate()
        .map(|(i, lvl)| match lvl.expected_c_i {
            Some(e) if e > 0.0 => Ok(lvl.measured_c_i / e),
            _ => Err(Error::InvalidInput(format!(
                "level {}: expected c_i is required to estimate gamma_i",
                i + 1
            ))),
        })
        .collect::<Result<Vec<f64>>>()?;
    let q_mean = mean(&quotients);
    let revised: Vec<f64> = quotients.iter().map(|q| q / q_mean).collect();
    Ok(sample_std(&revised))
}

pub fn estimate_error_params(dataset: &IsothermDataset) -> Result<EstimatedErrorParams> {
    Ok(EstimatedErrorParams {
        delta_per_level: dataset.deltas(),
        gamma_e: estimate_gamma_e(dataset)?,
        gamma_i: estimate_gamma_i(dataset)?,
    })
}
