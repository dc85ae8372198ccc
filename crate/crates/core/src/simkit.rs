//! Monte Carlo engine: synthetic isotherms, the four fitting pipelines, the
//! 546-system sweep grid and the χ² calibration runs.
//!
//! Every isotherm draws from its own [`RandomStream`] whose id packs the
//! system index and the replicate-isotherm index, so results do not depend
//! on how systems are scheduled across threads. All cases evaluated for one
//! system see the same datasets.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::estimate::{estimate_error_params, IsothermDataset, LevelRecord};
use crate::isotherm::{fractional_decrease, FreundlichParams, SorptionSystem};
use crate::numerics::{chisq_quantile, mean, percentile_sorted, sample_std, RandomStream};
use crate::regress::{fit_line_as, fit_relative_posterior, fit_uls_posterior, FitMethod, FitResult, LogPoint};
use crate::weights::{ErrorModel, ErrorSource};

/// Full-isotherm redraws allowed before a system is declared degenerate.
pub const MAX_REDRAWS: usize = 1000;

/// σ multiplier for the relative-weight pipeline.
pub const RELATIVE_WEIGHT_FACTOR: f64 = 0.1;

/// Percentiles reported for the CV ratios.
pub const RATIO_PERCENTILES: [f64; 3] = [0.025, 0.5, 0.975];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Case {
    /// Log-space σ_ε weights from the true δ, γ_i and γ_e.
    I,
    /// Log-space σ_ε weights from δ, γ_i and γ_e estimated from the isotherm.
    II,
    /// Unweighted fit with a-posteriori variance scaling.
    III,
    /// Case I weights scaled by 0.1, a-posteriori variance scaling.
    IV,
}

impl Case {
    pub const ALL: [Case; 4] = [Case::I, Case::II, Case::III, Case::IV];

    pub fn label(&self) -> &'static str {
        match self {
            Case::I => "I",
            Case::II => "II",
            Case::III => "III",
            Case::IV => "IV",
        }
    }
}

impl fmt::Display for Case {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Case {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "I" | "1" => Ok(Case::I),
            "II" | "2" => Ok(Case::II),
            "III" | "3" => Ok(Case::III),
            "IV" | "4" => Ok(Case::IV),
            other => Err(Error::InvalidParameter(format!(
                "unknown case '{other}', expected I, II, III or IV"
            ))),
        }
    }
}

/// Stream id of isotherm `rep` of system `system_index`.
pub fn stream_id(system_index: u64, rep: u64) -> u64 {
    (system_index << 32) | (rep & 0xffff_ffff)
}

/// Draws synthetic isotherms for one system, caching its true equilibrium.
#[derive(Debug, Clone)]
pub struct IsothermGenerator {
    system: SorptionSystem,
    true_c_e: Vec<f64>,
    true_delta: Vec<f64>,
}

impl IsothermGenerator {
    pub fn new(system: &SorptionSystem) -> Result<Self> {
        system.validate()?;
        let true_c_e = system.true_c_e()?;
        let true_delta = system
            .c_i_levels
            .iter()
            .zip(&true_c_e)
            .map(|(&c_i, &c_e)| fractional_decrease(c_i, c_e))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            system: system.clone(),
            true_c_e,
            true_delta,
        })
    }

    pub fn system(&self) -> &SorptionSystem {
        &self.system
    }

    pub fn true_c_e(&self) -> &[f64] {
        &self.true_c_e
    }

    pub fn true_delta(&self) -> &[f64] {
        &self.true_delta
    }

    /// One isotherm plus the number of degenerate draws that were discarded.
    pub fn generate(&self, stream: &mut RandomStream) -> Result<(IsothermDataset, usize)> {
        let s = &self.system;
        'attempt: for redraws in 0..=MAX_REDRAWS {
            let mut levels = Vec::with_capacity(s.levels());
            for (&c_i, &c_e) in s.c_i_levels.iter().zip(&self.true_c_e) {
                let measured_c_i = stream.sample_normal(c_i, s.gamma_i)?;
                let mut replicate_c_e = Vec::with_capacity(s.u);
                for _ in 0..s.u {
                    replicate_c_e.push(stream.sample_normal(c_e, s.gamma_e)?);
                }
                if measured_c_i <= 0.0 || replicate_c_e.iter().any(|&c| c <= 0.0 || c >= measured_c_i) {
                    continue 'attempt;
                }
                levels.push(LevelRecord {
                    expected_c_i: Some(c_i),
                    measured_c_i,
                    replicate_c_e,
                });
            }
            let ds = IsothermDataset {
                levels,
                r: s.r,
                c_ref: s.params.c_ref,
            };
            return Ok((ds, redraws));
        }
        Err(Error::DegenerateSystem(format!(
            "more than {MAX_REDRAWS} redraws for one isotherm (k_f = {}, n = {})",
            s.params.k_f, s.params.n
        )))
    }
}

/// One synthetic isotherm for `system`, redrawn until every c_e and X is
/// positive.
pub fn generate_isotherm(system: &SorptionSystem, stream: &mut RandomStream) -> Result<IsothermDataset> {
    IsothermGenerator::new(system)?.generate(stream).map(|(ds, _)| ds)
}

/// Per-level means of `log10(c_e/c_ref)` and `log10(X)` over replicates.
pub fn prepare_points(dataset: &IsothermDataset) -> Result<Vec<(f64, f64)>> {
    dataset
        .levels
        .iter()
        .enumerate()
        .map(|(i, lvl)| {
            let mut sx = 0.0;
            let mut sy = 0.0;
            for (j, &c_e) in lvl.replicate_c_e.iter().enumerate() {
                if !(c_e > 0.0) {
                    return Err(Error::NonpositiveObservable {
                        what: "c_e",
                        level: i + 1,
                        replicate: j + 1,
                        value: c_e,
                    });
                }
                let x = (lvl.measured_c_i - c_e) / dataset.r;
                if !(x > 0.0) {
                    return Err(Error::NonpositiveObservable {
                        what: "X",
                        level: i + 1,
                        replicate: j + 1,
                        value: x,
                    });
                }
                sx += (c_e / dataset.c_ref).log10();
                sy += x.log10();
            }
            let u = lvl.replicate_c_e.len() as f64;
            Ok((sx / u, sy / u))
        })
        .collect()
}

fn with_sigmas(xy: &[(f64, f64)], model: &ErrorModel) -> Vec<LogPoint> {
    xy.iter()
        .zip(&model.sigma_eps)
        .map(|(&(x, y), &s)| LogPoint::new(x, y, s))
        .collect()
}

/// First (unweighted) and final fits of one pipeline run.
#[derive(Debug, Clone, PartialEq)]
pub struct CaseOutcome {
    pub first: FitResult,
    pub fit: FitResult,
}

/// Runs one pipeline on one dataset.
///
/// `true_delta` is the true fractional decrease per level, used by cases I
/// and IV. Every case begins with an unweighted fit whose slope feeds the
/// weight formula; there is exactly one further fit.
pub fn run_case_detailed(
    case: Case,
    system: &SorptionSystem,
    true_delta: &[f64],
    dataset: &IsothermDataset,
) -> Result<CaseOutcome> {
    let xy = prepare_points(dataset)?;
    let c_ref = dataset.c_ref;
    let first = fit_uls_posterior(&xy, c_ref)?;
    let n = first.n;
    let true_model = || {
        ErrorModel::from_deltas(
            true_delta,
            n,
            system.gamma_i,
            system.gamma_e,
            system.u,
            ErrorSource::TrueParameters,
        )
        .map_err(|e| Error::RejectedIsotherm(e.to_string()))
    };
    let fit = match case {
        Case::I => fit_line_as(&with_sigmas(&xy, &true_model()?), c_ref, FitMethod::WlsAprioriTrue)?,
        Case::II => {
            let est = estimate_error_params(dataset)?;
            if let Some((i, d)) = est
                .delta_per_level
                .iter()
                .enumerate()
                .find(|(_, d)| !(**d > 0.0))
            {
                return Err(Error::RejectedIsotherm(format!(
                    "estimated fractional decrease {d} at level {}",
                    i + 1
                )));
            }
            let model = ErrorModel::from_deltas(
                &est.delta_per_level,
                n,
                est.gamma_i,
                est.gamma_e,
                dataset.replicates(),
                ErrorSource::EstimatedFromData,
            )
            .map_err(|e| Error::RejectedIsotherm(e.to_string()))?;
            fit_line_as(&with_sigmas(&xy, &model), c_ref, FitMethod::WlsAprioriEstimated)?
        }
        Case::III => first.clone(),
        Case::IV => {
            let model = true_model()?.scaled(RELATIVE_WEIGHT_FACTOR)?;
            fit_relative_posterior(&with_sigmas(&xy, &model), c_ref)?
        }
    };
    Ok(CaseOutcome { first, fit })
}

pub fn run_case(
    case: Case,
    system: &SorptionSystem,
    true_delta: &[f64],
    dataset: &IsothermDataset,
) -> Result<FitResult> {
    run_case_detailed(case, system, true_delta, dataset).map(|o| o.fit)
}

/// 2.5th, 50th and 97.5th percentiles.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatioPercentiles {
    pub p2_5: f64,
    pub p50: f64,
    pub p97_5: f64,
}

impl RatioPercentiles {
    fn from_values(values: &[f64]) -> Option<Self> {
        if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let [a, b, c] = RATIO_PERCENTILES.map(|p| percentile_sorted(&sorted, p));
        Some(Self {
            p2_5: a,
            p50: b,
            p97_5: c,
        })
    }

    /// Distance between the outer percentiles.
    pub fn spread(&self) -> f64 {
        self.p97_5 - self.p2_5
    }
}

/// Mean and standard deviation of first-fit / final-fit parameter ratios.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitRatioStats {
    pub mean: f64,
    pub std: f64,
}

impl FitRatioStats {
    fn from_values(values: &[f64]) -> Self {
        Self {
            mean: mean(values),
            std: if values.len() > 1 { sample_std(values) } else { 0.0 },
        }
    }
}

/// Outcome of `reps` simulated experiments on one system for one case.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemPopulation {
    pub case: Case,
    pub system_index: u64,
    pub k_f: f64,
    pub n: f64,
    pub rk_f: f64,
    pub fitted_kf: Vec<f64>,
    pub fitted_n: Vec<f64>,
    pub cv_kf: Vec<f64>,
    pub cv_n: Vec<f64>,
    /// std/mean of the case I fitted K_F population.
    pub true_cv_kf: f64,
    pub true_cv_n: f64,
    /// `None` when the true CVs are zero (noiseless system).
    pub ratio_kf: Option<RatioPercentiles>,
    pub ratio_n: Option<RatioPercentiles>,
    pub first_fit_ratio_kf: FitRatioStats,
    pub first_fit_ratio_n: FitRatioStats,
    /// Isotherms the case refused to fit.
    pub rejected: usize,
    /// Degenerate draws that were regenerated.
    pub redraws: usize,
    /// Largest minus smallest true δ over the levels.
    pub delta_spread: f64,
}

impl SystemPopulation {
    pub fn is_degenerate(&self) -> bool {
        self.ratio_kf.is_none() || self.ratio_n.is_none()
    }

    pub fn mean_kf(&self) -> f64 {
        mean(&self.fitted_kf)
    }

    pub fn mean_n(&self) -> f64 {
        mean(&self.fitted_n)
    }

    pub fn kf_bias(&self) -> f64 {
        self.mean_kf() / self.k_f - 1.0
    }

    pub fn n_bias(&self) -> f64 {
        self.mean_n() / self.n - 1.0
    }
}

#[derive(Default)]
struct Accumulator {
    kf: Vec<f64>,
    n: Vec<f64>,
    cv_kf: Vec<f64>,
    cv_n: Vec<f64>,
    first_kf: Vec<f64>,
    first_n: Vec<f64>,
    rejected: usize,
}

/// Simulates `reps` isotherms of one system and evaluates every case in
/// `cases` on the same datasets. Case I is always evaluated as the yardstick
/// for the true CVs.
pub fn simulate_system(
    system_index: u64,
    system: &SorptionSystem,
    cases: &[Case],
    reps: usize,
    seed: u64,
) -> Result<Vec<SystemPopulation>> {
    if reps < 2 {
        return Err(Error::InvalidParameter(format!("reps must be >= 2, got {reps}")));
    }
    if reps > u32::MAX as usize {
        return Err(Error::InvalidParameter(format!("reps too large: {reps}")));
    }
    let generator = IsothermGenerator::new(system)?;
    let mut evaluated: Vec<Case> = vec![Case::I];
    evaluated.extend(cases.iter().copied().filter(|c| *c != Case::I));
    let mut acc: Vec<Accumulator> = evaluated.iter().map(|_| Accumulator::default()).collect();
    let mut redraws = 0usize;
    for rep in 0..reps {
        let mut stream = RandomStream::new(seed, stream_id(system_index, rep as u64));
        let (ds, r) = generator.generate(&mut stream)?;
        redraws += r;
        for (case, acc) in evaluated.iter().zip(acc.iter_mut()) {
            match run_case_detailed(*case, system, generator.true_delta(), &ds) {
                Ok(out) => {
                    acc.kf.push(out.fit.k_f);
                    acc.n.push(out.fit.n);
                    acc.cv_kf.push(out.fit.cv_kf);
                    acc.cv_n.push(out.fit.cv_n);
                    acc.first_kf.push(out.first.k_f / out.fit.k_f);
                    acc.first_n.push(out.first.n / out.fit.n);
                }
                Err(Error::RejectedIsotherm(_)) => acc.rejected += 1,
                Err(e) => return Err(e),
            }
        }
    }
    let yardstick = &acc[0];
    let true_cv_kf = sample_std(&yardstick.kf) / mean(&yardstick.kf);
    let true_cv_n = sample_std(&yardstick.n) / mean(&yardstick.n);
    let deltas = generator.true_delta();
    let delta_spread = deltas.iter().copied().fold(f64::NEG_INFINITY, f64::max)
        - deltas.iter().copied().fold(f64::INFINITY, f64::min);

    let ratios = |cvs: &[f64], truth: f64| {
        if truth > 0.0 && truth.is_finite() {
            let r: Vec<f64> = cvs.iter().map(|c| c / truth).collect();
            RatioPercentiles::from_values(&r)
        } else {
            None
        }
    };

    let mut out = Vec::with_capacity(cases.len());
    for case in cases {
        let i = evaluated.iter().position(|c| c == case).expect("case evaluated");
        let a = &acc[i];
        out.push(SystemPopulation {
            case: *case,
            system_index,
            k_f: system.params.k_f,
            n: system.params.n,
            rk_f: system.rk_f(),
            ratio_kf: ratios(&a.cv_kf, true_cv_kf),
            ratio_n: ratios(&a.cv_n, true_cv_n),
            first_fit_ratio_kf: FitRatioStats::from_values(&a.first_kf),
            first_fit_ratio_n: FitRatioStats::from_values(&a.first_n),
            fitted_kf: a.kf.clone(),
            fitted_n: a.n.clone(),
            cv_kf: a.cv_kf.clone(),
            cv_n: a.cv_n.clone(),
            true_cv_kf,
            true_cv_n,
            rejected: a.rejected,
            redraws,
            delta_spread,
        });
    }
    Ok(out)
}

/// One case on one system.
pub fn run_system(
    case: Case,
    system: &SorptionSystem,
    reps: usize,
    seed: u64,
    system_index: u64,
) -> Result<SystemPopulation> {
    let mut v = simulate_system(system_index, system, &[case], reps, seed)?;
    Ok(v.remove(0))
}

/// The K_F × N design of the reference sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepGrid {
    pub k_f_values: Vec<f64>,
    pub n_values: Vec<f64>,
    pub r: f64,
    pub c_i_levels: Vec<f64>,
    pub u: usize,
    pub gamma_i: f64,
    pub gamma_e: f64,
    pub min_delta: f64,
    pub reps: usize,
}

impl Default for SweepGrid {
    fn default() -> Self {
        let k_f_values = (0..=25).map(|j| 0.5 * 20f64.powf(j as f64 / 25.0)).collect();
        let n_values = (0..=20).map(|k| 0.2 + 0.8 * k as f64 / 20.0).collect();
        Self {
            k_f_values,
            n_values,
            r: 1.0,
            c_i_levels: vec![0.1, 0.32, 1.0, 3.2, 10.0],
            u: 3,
            gamma_i: 0.01,
            gamma_e: 0.05,
            min_delta: 0.30,
            reps: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridSystem {
    /// Position in the K_F-major enumeration of all candidates.
    pub index: u64,
    pub kf_index: usize,
    pub n_index: usize,
    pub system: SorptionSystem,
    pub min_delta: f64,
    pub max_delta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridPartition {
    pub grid: SweepGrid,
    pub retained: Vec<GridSystem>,
    pub discarded: Vec<GridSystem>,
}

impl GridPartition {
    pub fn candidates(&self) -> usize {
        self.retained.len() + self.discarded.len()
    }

    pub fn find(&self, kf_index: usize, n_index: usize) -> Option<&GridSystem> {
        self.retained
            .iter()
            .chain(&self.discarded)
            .find(|g| g.kf_index == kf_index && g.n_index == n_index)
    }
}

impl SweepGrid {
    /// Enumerates every candidate and discards those whose true δ falls
    /// below `min_delta` at any level.
    pub fn partition(&self) -> Result<GridPartition> {
        let mut retained = Vec::new();
        let mut discarded = Vec::new();
        let mut index = 0u64;
        for (kf_index, &k_f) in self.k_f_values.iter().enumerate() {
            for (n_index, &n) in self.n_values.iter().enumerate() {
                let system = SorptionSystem::new(
                    FreundlichParams::with_unit_ref(k_f, n)?,
                    self.r,
                    self.c_i_levels.clone(),
                    self.u,
                    self.gamma_i,
                    self.gamma_e,
                )?;
                let deltas = system.true_delta()?;
                let min_delta = deltas.iter().copied().fold(f64::INFINITY, f64::min);
                let max_delta = deltas.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let g = GridSystem {
                    index,
                    kf_index,
                    n_index,
                    system,
                    min_delta,
                    max_delta,
                };
                if min_delta < self.min_delta {
                    discarded.push(g);
                } else {
                    retained.push(g);
                }
                index += 1;
            }
        }
        Ok(GridPartition {
            grid: self.clone(),
            retained,
            discarded,
        })
    }
}

/// The reference 26 × 21 grid, partitioned.
pub fn build_grid() -> Result<GridPartition> {
    SweepGrid::default().partition()
}

fn thread_pool(parallelism: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism)
        .build()
        .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))
}

/// Runs `cases` on every system in `systems`, returning one population per
/// case per system (case-major). The output does not depend on
/// `parallelism`; `0` uses all available cores.
pub fn run_systems(
    systems: &[GridSystem],
    cases: &[Case],
    reps: usize,
    seed: u64,
    parallelism: usize,
) -> Result<Vec<Vec<SystemPopulation>>> {
    let per_system: Vec<Vec<SystemPopulation>> = thread_pool(parallelism)?.install(|| {
        systems
            .par_iter()
            .map(|g| simulate_system(g.index, &g.system, cases, reps, seed))
            .collect::<Result<Vec<_>>>()
    })?;
    let mut by_case: Vec<Vec<SystemPopulation>> = cases.iter().map(|_| Vec::new()).collect();
    for pops in per_system {
        for (slot, pop) in by_case.iter_mut().zip(pops) {
            slot.push(pop);
        }
    }
    Ok(by_case)
}

/// One case over every retained system of the grid.
pub fn run_sweep(
    case: Case,
    grid: &GridPartition,
    seed: u64,
    parallelism: usize,
) -> Result<Vec<SystemPopulation>> {
    let mut v = run_systems(&grid.retained, &[case], grid.grid.reps, seed, parallelism)?;
    Ok(v.remove(0))
}

pub const SWEEP_HEADER: &str = "kf,n,rkf,true_cv_kf,true_cv_n,ratio_kf_p2_5,ratio_kf_p50,ratio_kf_p97_5,ratio_n_p2_5,ratio_n_p50,ratio_n_p97_5,rejected";

pub const DIAGNOSTICS_HEADER: &str = "kf,n,rkf,mean_kf_bias,mean_n_bias,first_fit_ratio_kf_mean,first_fit_ratio_kf_std,first_fit_ratio_n_mean,first_fit_ratio_n_std,delta_spread,rejected,redraws";

fn ratio_fields(r: Option<RatioPercentiles>) -> [String; 3] {
    match r {
        Some(r) => [r.p2_5.to_string(), r.p50.to_string(), r.p97_5.to_string()],
        None => ["NaN".into(), "NaN".into(), "NaN".into()],
    }
}

pub fn write_sweep_csv<W: Write>(pops: &[SystemPopulation], out: W) -> Result<()> {
    write_sweep_rows(pops, out, true)
}

/// Writes sweep rows, with the header only when `header` is set, so chunks
/// of a long sweep can be appended to one file.
pub fn write_sweep_rows<W: Write>(pops: &[SystemPopulation], out: W, header: bool) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    if header {
        w.write_record(SWEEP_HEADER.split(','))?;
    }
    for p in pops {
        let mut row = vec![
            p.k_f.to_string(),
            p.n.to_string(),
            p.rk_f.to_string(),
            p.true_cv_kf.to_string(),
            p.true_cv_n.to_string(),
        ];
        row.extend(ratio_fields(p.ratio_kf));
        row.extend(ratio_fields(p.ratio_n));
        row.push((p.rejected + p.redraws).to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_diagnostics_csv<W: Write>(pops: &[SystemPopulation], out: W) -> Result<()> {
    write_diagnostics_rows(pops, out, true)
}

pub fn write_diagnostics_rows<W: Write>(pops: &[SystemPopulation], out: W, header: bool) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    if header {
        w.write_record(DIAGNOSTICS_HEADER.split(','))?;
    }
    for p in pops {
        w.write_record(&[
            p.k_f.to_string(),
            p.n.to_string(),
            p.rk_f.to_string(),
            p.kf_bias().to_string(),
            p.n_bias().to_string(),
            p.first_fit_ratio_kf.mean.to_string(),
            p.first_fit_ratio_kf.std.to_string(),
            p.first_fit_ratio_n.mean.to_string(),
            p.first_fit_ratio_n.std.to_string(),
            p.delta_spread.to_string(),
            p.rejected.to_string(),
            p.redraws.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// The three calibration systems used to check the χ² distribution of the
/// weighted merit function (`case` in 1..=3).
pub fn chisq_reference_system(case: u8) -> Result<SorptionSystem> {
    let (r, k_f, n, gamma_i, gamma_e, u, levels): (f64, f64, f64, f64, f64, usize, Vec<f64>) =
        match case {
            1 => (0.5, 0.5, 0.9, 0.005, 0.01, 3, vec![0.1, 0.32, 1.0, 3.2, 10.0]),
            2 => (0.04, 200.0, 0.3, 0.025, 0.05, 2, vec![0.2, 0.5, 2.0, 5.0, 10.0, 20.0]),
            3 => (
                1.0,
                1.0,
                0.7,
                0.025,
                0.05,
                1,
                vec![0.1, 0.2, 0.32, 0.7, 1.0, 2.0, 3.2, 7.0, 10.0],
            ),
            other => {
                return Err(Error::InvalidParameter(format!(
                    "chi-square reference case must be 1, 2 or 3, got {other}"
                )))
            }
        };
    SorptionSystem::new(
        FreundlichParams::with_unit_ref(k_f, n)?,
        r,
        levels,
        u,
        gamma_i,
        gamma_e,
    )
}

/// Percentiles compared by [`chisq_validation`].
pub const CHISQ_PERCENTILES: [f64; 5] = [0.10, 0.25, 0.50, 0.75, 0.90];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChisqRow {
    pub percentile: f64,
    pub simulated: f64,
    pub theoretical: f64,
}

impl ChisqRow {
    pub fn relative_error(&self) -> f64 {
        (self.simulated - self.theoretical).abs() / self.theoretical
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChisqValidation {
    pub dof: usize,
    pub reps: usize,
    pub rows: Vec<ChisqRow>,
    pub chi2: Vec<f64>,
}

/// Fits `reps` synthetic isotherms with the true-parameter weights and
/// compares percentiles of the merit function with χ²(L − 2).
pub fn chisq_validation(system: &SorptionSystem, reps: usize, seed: u64) -> Result<ChisqValidation> {
    if reps < 2 {
        return Err(Error::InvalidParameter(format!("reps must be >= 2, got {reps}")));
    }
    if system.levels() < 3 {
        return Err(Error::InsufficientData(format!(
            "need at least 3 levels, got {}",
            system.levels()
        )));
    }
    let generator = IsothermGenerator::new(system)?;
    let chi2 = (0..reps)
        .into_par_iter()
        .map(|rep| {
            let mut stream = RandomStream::new(seed, stream_id(0, rep as u64));
            let (ds, _) = generator.generate(&mut stream)?;
            run_case(Case::I, system, generator.true_delta(), &ds).map(|f| f.chi2)
        })
        .collect::<Result<Vec<f64>>>()?;
    let dof = system.levels() - 2;
    let mut sorted = chi2.clone();
    sorted.sort_by(f64::total_cmp);
    let rows = CHISQ_PERCENTILES
        .iter()
        .map(|&p| {
            Ok(ChisqRow {
                percentile: p,
                simulated: percentile_sorted(&sorted, p),
                theoretical: chisq_quantile(p, dof as u32)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ChisqValidation {
        dof,
        reps,
        rows,
        chi2,
    })
}

pub const CHISQ_HEADER: &str = "percentile,simulated,theoretical";

pub fn write_chisq_csv<W: Write>(v: &ChisqValidation, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CHISQ_HEADER.split(','))?;
    for r in &v.rows {
        w.write_record(&[
            (r.percentile * 100.0).to_string(),
            r.simulated.to_string(),
            r.theoretical.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Scaled estimator statistics: sample means of `L(U−1)·γ̂_e²/γ_e²` and
/// `(L−1)·γ̂_i²/γ_i²`, which should equal their degrees of freedom.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatorCheck {
    pub gamma_e_dof: usize,
    pub gamma_i_dof: usize,
    pub mean_gamma_e_stat: f64,
    pub mean_gamma_i_stat: f64,
}

pub fn estimator_distribution(system: &SorptionSystem, reps: usize, seed: u64) -> Result<EstimatorCheck> {
    if !(system.gamma_e > 0.0 && system.gamma_i > 0.0) || system.u < 2 || system.levels() < 2 {
        return Err(Error::InvalidParameter(
            "estimator check needs gamma_i, gamma_e > 0, U >= 2 and L >= 2".into(),
        ));
    }
    let generator = IsothermGenerator::new(system)?;
    let l = system.levels();
    let e_dof = l * (system.u - 1);
    let i_dof = l - 1;
    let stats = (0..reps)
        .into_par_iter()
        .map(|rep| {
            let mut stream = RandomStream::new(seed, stream_id(0, rep as u64));
            let (ds, _) = generator.generate(&mut stream)?;
            let est = estimate_error_params(&ds)?;
            Ok((
                e_dof as f64 * (est.gamma_e / system.gamma_e).powi(2),
                i_dof as f64 * (est.gamma_i / system.gamma_i).powi(2),
            ))
        })
        .collect::<Result<Vec<(f64, f64)>>>()?;
    let e: Vec<f64> = stats.iter().map(|s| s.0).collect();
    let i: Vec<f64> = stats.iter().map(|s| s.1).collect();
    Ok(EstimatorCheck {
        gamma_e_dof: e_dof,
        gamma_i_dof: i_dof,
        mean_gamma_e_stat: mean(&e),
        mean_gamma_i_stat: mean(&i),
    })
}
