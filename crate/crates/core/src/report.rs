//! End-to-end fit of a measured isotherm and its printable report.

use std::fmt::Write as _;
use std::io::Write;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::estimate::{estimate_gamma_e, estimate_gamma_i, IsothermDataset};
use crate::isotherm::MAX_CV;
use crate::io::sig6;
use crate::regress::{fit_line_as, fit_relative_posterior, fit_uls_posterior, FitMethod, FitResult, LogPoint};
use crate::simkit::prepare_points;
use crate::weights::{ErrorModel, ErrorSource};

/// δ below which a level is flagged as poorly determined.
pub const LOW_DELTA_WARNING: f64 = 0.30;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MethodChoice {
    /// Log-space σ_ε weights from supplied γ_i and γ_e and measured δ.
    WlsApriori,
    /// Log-space σ_ε weights from γ_i, γ_e and δ estimated from the data.
    WlsEstimated,
    /// Unweighted fit with a-posteriori variances.
    Uls,
    /// Log-space σ_ε used as relative weights, a-posteriori variances.
    WlsRelative,
}

impl MethodChoice {
    pub fn as_str(&self) -> &'static str {
        match self {
            MethodChoice::WlsApriori => "wls-apriori",
            MethodChoice::WlsEstimated => "wls-estimated",
            MethodChoice::Uls => "uls",
            MethodChoice::WlsRelative => "wls-relative",
        }
    }
}

impl FromStr for MethodChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "wls-apriori" => Ok(Self::WlsApriori),
            "wls-estimated" => Ok(Self::WlsEstimated),
            "uls" => Ok(Self::Uls),
            "wls-relative" => Ok(Self::WlsRelative),
            other => Err(Error::InvalidParameter(format!(
                "unknown method '{other}' (expected wls-apriori, wls-estimated, uls or wls-relative)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitRequest {
    pub method: MethodChoice,
    pub gamma_i: Option<f64>,
    pub gamma_e: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LevelRow {
    pub level: usize,
    pub delta: f64,
    pub x: f64,
    pub y: f64,
    pub sigma: f64,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    pub method: MethodChoice,
    pub fit: FitResult,
    pub gamma_i: Option<f64>,
    pub gamma_e: Option<f64>,
    pub levels: Vec<LevelRow>,
    pub warnings: Vec<String>,
}

fn require(v: Option<f64>, flag: &str, method: MethodChoice) -> Result<f64> {
    let g = v.ok_or_else(|| {
        Error::InvalidParameter(format!("{flag} is required for method {}", method.as_str()))
    })?;
    if !(g >= 0.0 && g.is_finite()) {
        return Err(Error::InvalidParameter(format!("{flag} must be >= 0, got {g}")));
    }
    Ok(g)
}

/// Fits a dataset with the requested method.
pub fn fit_dataset(dataset: &IsothermDataset, req: &FitRequest) -> Result<FitReport> {
    dataset.validate()?;
    let l = dataset.level_count();
    if l < 3 {
        return Err(Error::InsufficientData(format!(
            "need at least 3 concentration levels, got {l}"
        )));
    }
    let xy = prepare_points(dataset)?;
    let deltas = dataset.deltas();
    let u = dataset.replicates();
    let mut warnings = Vec::new();
    for (i, d) in deltas.iter().enumerate() {
        if *d < LOW_DELTA_WARNING {
            warnings.push(format!(
                "level {}: fractional decrease {} is below {LOW_DELTA_WARNING}; K_F and N are poorly determined",
                i + 1,
                sig6(*d)
            ));
        }
    }
    let first = fit_uls_posterior(&xy, dataset.c_ref)?;
    let first_n = first.n;

    let gammas = match req.method {
        MethodChoice::Uls => None,
        MethodChoice::WlsApriori => Some((
            require(req.gamma_i, "--gamma-i", req.method)?,
            require(req.gamma_e, "--gamma-e", req.method)?,
        )),
        MethodChoice::WlsEstimated => Some(estimated_gammas(dataset)?),
        MethodChoice::WlsRelative => match (req.gamma_i, req.gamma_e) {
            (Some(_), _) | (_, Some(_)) => Some((
                require(req.gamma_i, "--gamma-i", req.method)?,
                require(req.gamma_e, "--gamma-e", req.method)?,
            )),
            (None, None) => Some(estimated_gammas(dataset)?),
        },
    };
    if let Some((gi, ge)) = gammas {
        if gi > MAX_CV || ge > MAX_CV {
            warnings.push(format!(
                "gamma_i = {}, gamma_e = {}: CVs above {MAX_CV} degrade the weight approximation",
                sig6(gi),
                sig6(ge)
            ));
        }
    }

    let fit = match (req.method, gammas) {
        (MethodChoice::Uls, _) | (_, None) => first,
        (method, Some((gi, ge))) => {
            if let Some((i, d)) = deltas.iter().enumerate().find(|(_, d)| !(**d > 0.0)) {
                return Err(Error::InvalidInput(format!(
                    "level {}: fractional decrease {d} is not positive; exclude the level before weighting",
                    i + 1
                )));
            }
            let source = if method == MethodChoice::WlsApriori {
                ErrorSource::TrueParameters
            } else {
                ErrorSource::EstimatedFromData
            };
            let model = ErrorModel::from_deltas(&deltas, first.n, gi, ge, u, source)?;
            let points: Vec<LogPoint> = xy
                .iter()
                .zip(&model.sigma_eps)
                .map(|(&(x, y), &s)| LogPoint::new(x, y, s))
                .collect();
            match method {
                MethodChoice::WlsApriori => fit_line_as(&points, dataset.c_ref, FitMethod::WlsAprioriTrue)?,
                MethodChoice::WlsEstimated => {
                    fit_line_as(&points, dataset.c_ref, FitMethod::WlsAprioriEstimated)?
                }
                _ => fit_relative_posterior(&points, dataset.c_ref)?,
            }
        }
    };

    let sigmas: Vec<f64> = match (req.method, gammas) {
        (MethodChoice::Uls, _) | (_, None) => vec![1.0; l],
        (_, Some((gi, ge))) => {
            ErrorModel::from_deltas(&deltas, first_n, gi, ge, u, ErrorSource::Unit)?.sigma_eps
        }
    };
    let levels = xy
        .iter()
        .zip(&deltas)
        .zip(&sigmas)
        .zip(&fit.residuals)
        .enumerate()
        .map(|(i, (((&(x, y), &delta), &sigma), &residual))| LevelRow {
            level: i + 1,
            delta,
            x,
            y,
            sigma,
            residual,
        })
        .collect();

    Ok(FitReport {
        method: req.method,
        fit,
        gamma_i: gammas.map(|g| g.0),
        gamma_e: gammas.map(|g| g.1),
        levels,
        warnings,
    })
}

fn estimated_gammas(dataset: &IsothermDataset) -> Result<(f64, f64)> {
    Ok((estimate_gamma_i(dataset)?, estimate_gamma_e(dataset)?))
}

impl FitReport {
    /// Human-readable report at 6 significant digits.
    pub fn render(&self) -> String {
        let f = &self.fit;
        let mut s = String::new();
        let _ = writeln!(s, "method        {} ({})", self.method.as_str(), f.method);
        let _ = writeln!(s, "K_F           {}  L/kg", sig6(f.k_f));
        let _ = writeln!(s, "N             {}", sig6(f.n));
        let _ = writeln!(s, "sigma_K_F     {}", sig6(f.sigma_kf));
        let _ = writeln!(s, "sigma_N       {}", sig6(f.sigma_n));
        let _ = writeln!(s, "CV_K_F        {}", sig6(f.cv_kf));
        let _ = writeln!(s, "CV_N          {}", sig6(f.cv_n));
        let _ = writeln!(s, "chi2          {}", sig6(f.chi2));
        let _ = writeln!(s, "dof           {}", f.dof);
        let _ = writeln!(s, "scale_factor  {}", sig6(f.scale_factor));
        if let (Some(gi), Some(ge)) = (self.gamma_i, self.gamma_e) {
            let _ = writeln!(s, "gamma_i       {}", sig6(gi));
            let _ = writeln!(s, "gamma_e       {}", sig6(ge));
        }
        let _ = writeln!(s);
        let _ = writeln!(s, "level  delta       x           y           sigma       residual");
        for r in &self.levels {
            let _ = writeln!(
                s,
                "{:<6} {:<11} {:<11} {:<11} {:<11} {}",
                r.level,
                sig6(r.delta),
                sig6(r.x),
                sig6(r.y),
                sig6(r.sigma),
                sig6(r.residual)
            );
        }
        for w in &self.warnings {
            let _ = writeln!(s, "warning: {w}");
        }
        s
    }

    /// Machine-readable `key,value` CSV at full precision, followed by the
    /// per-level table.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let f = &self.fit;
        let mut w = csv::WriterBuilder::new().flexible(true).from_writer(out);
        w.write_record(["key", "value"])?;
        let mut kv = vec![
            ("method", f.method.to_string()),
            ("k_f", f.k_f.to_string()),
            ("n", f.n.to_string()),
            ("a", f.a.to_string()),
            ("c_ref", f.c_ref.to_string()),
            ("sigma_a", f.sigma_a.to_string()),
            ("sigma_kf", f.sigma_kf.to_string()),
            ("sigma_n", f.sigma_n.to_string()),
            ("cv_kf", f.cv_kf.to_string()),
            ("cv_n", f.cv_n.to_string()),
            ("chi2", f.chi2.to_string()),
            ("dof", f.dof.to_string()),
            ("scale_factor", f.scale_factor.to_string()),
        ];
        if let (Some(gi), Some(ge)) = (self.gamma_i, self.gamma_e) {
            kv.push(("gamma_i", gi.to_string()));
            kv.push(("gamma_e", ge.to_string()));
        }
        for (k, v) in kv {
            w.write_record([k, v.as_str()])?;
        }
        w.write_record(["level", "delta", "x", "y", "sigma", "residual"])?;
        for r in &self.levels {
            w.write_record(&[
                r.level.to_string(),
                r.delta.to_string(),
                r.x.to_string(),
                r.y.to_string(),
                r.sigma.to_string(),
                r.residual.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}
