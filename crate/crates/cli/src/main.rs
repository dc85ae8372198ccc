use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use freundlich::estimate::estimate_error_params;
use freundlich::io::{parse_config, parse_real_list, read_isotherm_file, sig6, write_isotherm_csv};
use freundlich::isotherm::{FreundlichParams, SorptionSystem};
use freundlich::numerics::RandomStream;
use freundlich::report::{fit_dataset, FitRequest, MethodChoice};
use freundlich::simkit::{
    chisq_reference_system, chisq_validation, run_systems, simulate_system, stream_id,
    write_chisq_csv, write_diagnostics_rows, write_sweep_csv, write_sweep_rows, Case,
    IsothermGenerator, SweepGrid,
};
use freundlich::weights::{linear_grid, weight_surface, write_surface_csv};
use freundlich::{Error, Result};

const SEED_ENV: &str = "FREUNDLICH_SEED";
const SWEEP_CHUNK: usize = 25;
const LOW_REPS_WARNING: usize = 1000;

#[derive(Parser)]
#[command(name = "freundlich", version, about = "Weighted least-squares fits of Freundlich isotherms")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit one measured isotherm.
    Fit(FitArgs),
    /// Monte Carlo sweep over the K_F × N grid.
    Sweep(SweepArgs),
    /// Monte Carlo run on a single system.
    Simulate(SimulateArgs),
    /// Compare the simulated merit function with its χ² distribution.
    ValidateChisq(ChisqArgs),
    /// Tabulate log-space σ_ε over a δ × N grid.
    WeightsTable(WeightsArgs),
}

#[derive(Args)]
struct FitArgs {
    /// Long-form isotherm CSV.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Sorbent-liquid ratio (kg/L).
    #[arg(long)]
    r: Option<f64>,
    #[arg(long)]
    c_ref: Option<f64>,
    /// wls-apriori, wls-estimated, uls or wls-relative.
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    gamma_i: Option<f64>,
    #[arg(long)]
    gamma_e: Option<f64>,
    /// Also write the result as key,value CSV.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    /// I, II, III, IV or all.
    #[arg(long)]
    case: Option<String>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads, 0 for all cores.
    #[arg(long)]
    parallelism: Option<usize>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    r: Option<f64>,
    /// Comma-separated initial concentrations.
    #[arg(long)]
    levels: Option<String>,
    #[arg(long)]
    u: Option<usize>,
    #[arg(long)]
    gamma_i: Option<f64>,
    #[arg(long)]
    gamma_e: Option<f64>,
    #[arg(long)]
    min_delta: Option<f64>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    kf: Option<f64>,
    #[arg(long)]
    n: Option<f64>,
    #[arg(long)]
    c_ref: Option<f64>,
    #[arg(long)]
    r: Option<f64>,
    #[arg(long)]
    levels: Option<String>,
    #[arg(long)]
    u: Option<usize>,
    #[arg(long)]
    gamma_i: Option<f64>,
    #[arg(long)]
    gamma_e: Option<f64>,
    #[arg(long)]
    case: Option<String>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Sweep-format CSV with one row per case.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write the first simulated isotherm as long-form CSV.
    #[arg(long)]
    write_isotherm: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct ChisqArgs {
    /// Reference system 1, 2 or 3.
    #[arg(long)]
    case: Option<u8>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct WeightsArgs {
    /// Defaults to half of gamma_e.
    #[arg(long)]
    gamma_i: Option<f64>,
    #[arg(long)]
    gamma_e: Option<f64>,
    #[arg(long)]
    u: Option<usize>,
    #[arg(long)]
    delta_min: Option<f64>,
    #[arg(long)]
    delta_max: Option<f64>,
    #[arg(long)]
    delta_steps: Option<usize>,
    #[arg(long)]
    n_min: Option<f64>,
    #[arg(long)]
    n_max: Option<f64>,
    #[arg(long)]
    n_steps: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
}

/// Flag values layered over an optional config file.
struct Settings {
    file: BTreeMap<String, String>,
    used: BTreeSet<&'static str>,
}

impl Settings {
    fn load(path: Option<&Path>) -> Result<Self> {
        let file = match path {
            Some(p) => {
                let text = fs::read_to_string(p)
                    .map_err(|e| Error::Io(format!("{}: {e}", p.display())))?;
                parse_config(&text)?
            }
            None => BTreeMap::new(),
        };
        Ok(Self {
            file,
            used: BTreeSet::new(),
        })
    }

    fn get<T: FromStr>(&mut self, key: &'static str, flag: Option<T>) -> Result<Option<T>> {
        self.used.insert(key);
        if flag.is_some() {
            return Ok(flag);
        }
        match self.file.get(key) {
            Some(raw) => raw.parse::<T>().map(Some).map_err(|_| {
                Error::InvalidParameter(format!("config key '{key}': invalid value '{raw}'"))
            }),
            None => Ok(None),
        }
    }

    fn or<T: FromStr>(&mut self, key: &'static str, flag: Option<T>, default: T) -> Result<T> {
        Ok(self.get(key, flag)?.unwrap_or(default))
    }

    fn required<T: FromStr>(&mut self, key: &'static str, flag: Option<T>) -> Result<T> {
        self.get(key, flag)?.ok_or_else(|| {
            Error::InvalidParameter(format!("--{} is required", key.replace('_', "-")))
        })
    }

    fn seed(&mut self, flag: Option<u64>) -> Result<u64> {
        if let Some(s) = self.get("seed", flag)? {
            return Ok(s);
        }
        match std::env::var(SEED_ENV) {
            Ok(v) => v.trim().parse().map_err(|_| {
                Error::InvalidParameter(format!("{SEED_ENV}: invalid seed '{v}'"))
            }),
            Err(_) => Ok(0),
        }
    }

    /// Rejects config keys that no flag of the command consumed.
    fn finish(&self) -> Result<()> {
        match self.file.keys().find(|k| !self.used.contains(k.as_str())) {
            Some(k) => Err(Error::InvalidParameter(format!("unknown config key '{k}'"))),
            None => Ok(()),
        }
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

fn parse_cases(s: &str) -> Result<Vec<Case>> {
    if s.eq_ignore_ascii_case("all") {
        return Ok(Case::ALL.to_vec());
    }
    s.split(',').map(|c| c.trim().parse::<Case>()).collect()
}

fn check_reps(reps: usize) -> Result<()> {
    if reps < 2 {
        return Err(Error::InvalidParameter(format!("--reps must be >= 2, got {reps}")));
    }
    Ok(())
}

fn cmd_fit(a: FitArgs) -> Result<()> {
    let mut s = Settings::load(a.config.as_deref())?;
    let data: PathBuf = s.required("data", a.data)?;
    let r: f64 = s.required("r", a.r)?;
    let c_ref = s.or("c_ref", a.c_ref, 1.0)?;
    let method: MethodChoice = s.or("method", a.method, "wls-estimated".into())?.parse()?;
    let gamma_i = s.get("gamma_i", a.gamma_i)?;
    let gamma_e = s.get("gamma_e", a.gamma_e)?;
    let out: Option<PathBuf> = s.get("out", a.out)?;
    s.finish()?;
    if !(r > 0.0) {
        return Err(Error::InvalidParameter(format!("--r must be > 0, got {r}")));
    }
    if !(c_ref > 0.0) {
        return Err(Error::InvalidParameter(format!("--c-ref must be > 0, got {c_ref}")));
    }

    let dataset = read_isotherm_file(&data, r, c_ref)?;
    let estimates_needed = method == MethodChoice::WlsEstimated
        || (method == MethodChoice::WlsRelative && gamma_i.is_none() && gamma_e.is_none());
    if estimates_needed && dataset.level_count() < 3 {
        // Too few levels for a line, but the error parameters are still useful.
        let est = estimate_error_params(&dataset)?;
        for (i, d) in est.delta_per_level.iter().enumerate() {
            println!("level {} delta   {}", i + 1, sig6(*d));
        }
        println!("gamma_i       {}", sig6(est.gamma_i));
        println!("gamma_e       {}", sig6(est.gamma_e));
    }
    let report = fit_dataset(
        &dataset,
        &FitRequest {
            method,
            gamma_i,
            gamma_e,
        },
    )?;
    print!("{}", report.render());
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    if let Some(path) = out {
        report.write_csv(create(&path)?)?;
    }
    Ok(())
}

fn grid_from(s: &mut Settings, a: &SweepArgs) -> Result<SweepGrid> {
    let mut grid = SweepGrid::default();
    grid.r = s.or("r", a.r, grid.r)?;
    if let Some(levels) = s.get::<String>("levels", a.levels.clone())? {
        grid.c_i_levels = parse_real_list(&levels)?;
    }
    grid.u = s.or("u", a.u, grid.u)?;
    grid.gamma_i = s.or("gamma_i", a.gamma_i, grid.gamma_i)?;
    grid.gamma_e = s.or("gamma_e", a.gamma_e, grid.gamma_e)?;
    grid.min_delta = s.or("min_delta", a.min_delta, grid.min_delta)?;
    grid.reps = s.or("reps", a.reps, grid.reps)?;
    Ok(grid)
}

fn cmd_sweep(a: SweepArgs) -> Result<()> {
    let mut s = Settings::load(a.config.as_deref())?;
    let cases = parse_cases(&s.or("case", a.case.clone(), "all".into())?)?;
    let grid = grid_from(&mut s, &a)?;
    let seed = s.seed(a.seed)?;
    let parallelism = s.or("parallelism", a.parallelism, 0)?;
    let out_dir: PathBuf = s.or("out_dir", a.out_dir.clone(), PathBuf::from("sweep-out"))?;
    s.finish()?;
    check_reps(grid.reps)?;
    let partition = grid.partition()?;

    fs::create_dir_all(&out_dir).map_err(|e| Error::Io(format!("{}: {e}", out_dir.display())))?;
    let summary = format!(
        "candidates {}\nretained {}\ndiscarded {}\nreps {}\nseed {}\ncases {}\n",
        partition.candidates(),
        partition.retained.len(),
        partition.discarded.len(),
        grid.reps,
        seed,
        cases.iter().map(|c| c.label()).collect::<Vec<_>>().join(",")
    );
    fs::write(out_dir.join("summary.txt"), &summary)?;
    print!("{summary}");

    let mut files = Vec::new();
    for case in &cases {
        let sweep = create(&out_dir.join(format!("sweep_case_{}.csv", case.label())))?;
        let diag = create(&out_dir.join(format!("diagnostics_case_{}.csv", case.label())))?;
        files.push((sweep, diag));
    }
    let total = partition.retained.len();
    for (k, chunk) in partition.retained.chunks(SWEEP_CHUNK).enumerate() {
        let by_case = run_systems(chunk, &cases, grid.reps, seed, parallelism)?;
        for ((sweep, diag), pops) in files.iter_mut().zip(&by_case) {
            write_sweep_rows(pops, &mut *sweep, k == 0)?;
            write_diagnostics_rows(pops, &mut *diag, k == 0)?;
            sweep.flush()?;
            diag.flush()?;
        }
        eprintln!("systems {}/{total}", (k * SWEEP_CHUNK + chunk.len()).min(total));
    }
    Ok(())
}

fn cmd_simulate(a: SimulateArgs) -> Result<()> {
    let mut s = Settings::load(a.config.as_deref())?;
    let k_f: f64 = s.required("kf", a.kf)?;
    let n: f64 = s.required("n", a.n)?;
    let c_ref = s.or("c_ref", a.c_ref, 1.0)?;
    let r = s.or("r", a.r, 1.0)?;
    let levels = parse_real_list(&s.or("levels", a.levels, "0.1,0.32,1,3.2,10".into())?)?;
    let u = s.or("u", a.u, 3)?;
    let gamma_i = s.or("gamma_i", a.gamma_i, 0.01)?;
    let gamma_e = s.or("gamma_e", a.gamma_e, 0.05)?;
    let cases = parse_cases(&s.or("case", a.case, "all".into())?)?;
    let reps = s.or("reps", a.reps, 10_000)?;
    let seed = s.seed(a.seed)?;
    let out: Option<PathBuf> = s.get("out", a.out)?;
    let write_iso: Option<PathBuf> = s.get("write_isotherm", a.write_isotherm)?;
    s.finish()?;
    check_reps(reps)?;
    let system = SorptionSystem::new(FreundlichParams::new(k_f, n, c_ref)?, r, levels, u, gamma_i, gamma_e)?;

    if let Some(path) = write_iso {
        let generator = IsothermGenerator::new(&system)?;
        let (ds, _) = generator.generate(&mut RandomStream::new(seed, stream_id(0, 0)))?;
        write_isotherm_csv(&ds, create(&path)?)?;
    }
    let pops = simulate_system(0, &system, &cases, reps, seed)?;
    let stdout = io::stdout();
    let mut w = stdout.lock();
    writeln!(w, "RK_F {}  true CV(K_F) {}  true CV(N) {}", sig6(system.rk_f()), sig6(pops[0].true_cv_kf), sig6(pops[0].true_cv_n))?;
    for p in &pops {
        write!(w, "case {:<4} mean K_F {}  mean N {}  rejected {}", p.case.label(), sig6(p.mean_kf()), sig6(p.mean_n()), p.rejected)?;
        match (p.ratio_kf, p.ratio_n) {
            (Some(k), Some(nr)) => writeln!(
                w,
                "  CV ratio K_F {} {} {}  CV ratio N {} {} {}",
                sig6(k.p2_5), sig6(k.p50), sig6(k.p97_5), sig6(nr.p2_5), sig6(nr.p50), sig6(nr.p97_5)
            )?,
            _ => writeln!(w, "  CV ratios undefined (degenerate system)")?,
        }
    }
    if let Some(path) = out {
        write_sweep_csv(&pops, create(&path)?)?;
    }
    Ok(())
}

fn cmd_chisq(a: ChisqArgs) -> Result<()> {
    let mut s = Settings::load(a.config.as_deref())?;
    let case: u8 = s.required("case", a.case)?;
    let reps = s.or("reps", a.reps, 10_000)?;
    let seed = s.seed(a.seed)?;
    let out: Option<PathBuf> = s.get("out", a.out)?;
    s.finish()?;
    check_reps(reps)?;
    let system = chisq_reference_system(case)?;
    if reps < LOW_REPS_WARNING {
        eprintln!("warning: reps = {reps} gives low Monte Carlo precision on the percentiles");
    }
    let v = chisq_validation(&system, reps, seed)?;
    println!("dof = {}", v.dof);
    match out {
        Some(path) => write_chisq_csv(&v, create(&path)?)?,
        None => write_chisq_csv(&v, io::stdout().lock())?,
    }
    Ok(())
}

fn cmd_weights(a: WeightsArgs) -> Result<()> {
    let mut s = Settings::load(a.config.as_deref())?;
    let gamma_e = s.or("gamma_e", a.gamma_e, 0.05)?;
    let gamma_i = s.or("gamma_i", a.gamma_i, 0.5 * gamma_e)?;
    let u = s.or("u", a.u, 3)?;
    let d_lo = s.or("delta_min", a.delta_min, 0.05)?;
    let d_hi = s.or("delta_max", a.delta_max, 1.0)?;
    let d_steps = s.or("delta_steps", a.delta_steps, 19)?;
    let n_lo = s.or("n_min", a.n_min, 0.2)?;
    let n_hi = s.or("n_max", a.n_max, 1.0)?;
    let n_steps = s.or("n_steps", a.n_steps, 16)?;
    let out: Option<PathBuf> = s.get("out", a.out)?;
    s.finish()?;
    if !(d_lo > 0.0 && d_hi <= 1.0 && d_lo <= d_hi) {
        return Err(Error::InvalidParameter(format!(
            "--delta-min/--delta-max must satisfy 0 < min <= max <= 1, got {d_lo} and {d_hi}"
        )));
    }
    if !(n_lo > 0.0 && n_lo <= n_hi) {
        return Err(Error::InvalidParameter(format!(
            "--n-min/--n-max must satisfy 0 < min <= max, got {n_lo} and {n_hi}"
        )));
    }
    let rows = weight_surface(
        &linear_grid(d_lo, d_hi, d_steps),
        &linear_grid(n_lo, n_hi, n_steps),
        gamma_i,
        gamma_e,
        u,
    )?;
    match out {
        Some(path) => write_surface_csv(&rows, create(&path)?)?,
        None => write_surface_csv(&rows, io::stdout().lock())?,
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Fit(a) => cmd_fit(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::ValidateChisq(a) => cmd_chisq(a),
        Command::WeightsTable(a) => cmd_weights(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 3 } else { 2 })
        }
    }
}
