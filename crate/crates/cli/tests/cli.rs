use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use freundlich::estimate::{IsothermDataset, LevelRecord};
use freundlich::io::{read_isotherm_file, write_isotherm_csv};
use freundlich::isotherm::{solve_equilibrium, FreundlichParams};
use freundlich::report::{fit_dataset, FitRequest, MethodChoice};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_freundlich"));
    c.env_remove("FREUNDLICH_SEED");
    c
}

fn scratch(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join(name);
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn run(cmd: &mut Command) -> (i32, String, String) {
    let Output { status, stdout, stderr } = cmd.output().unwrap();
    (
        status.code().unwrap_or(-1),
        String::from_utf8(stdout).unwrap(),
        String::from_utf8(stderr).unwrap(),
    )
}

fn value(report: &str, key: &str) -> f64 {
    report
        .lines()
        .find_map(|l| {
            let mut it = l.split_whitespace();
            (it.next() == Some(key)).then(|| it.next().unwrap().parse().unwrap())
        })
        .unwrap_or_else(|| panic!("{key} missing in\n{report}"))
}

fn noiseless_file(dir: &Path) -> PathBuf {
    let params = FreundlichParams::with_unit_ref(1.0, 0.7).unwrap();
    let levels = [0.1, 0.32, 1.0, 3.2, 10.0]
        .iter()
        .map(|&c_i| LevelRecord {
            expected_c_i: Some(c_i),
            measured_c_i: c_i,
            replicate_c_e: vec![solve_equilibrium(&params, 1.0, c_i).unwrap(); 3],
        })
        .collect();
    let ds = IsothermDataset::new(levels, 1.0, 1.0).unwrap();
    let path = dir.join("noiseless.csv");
    write_isotherm_csv(&ds, fs::File::create(&path).unwrap()).unwrap();
    path
}

#[test]
fn noiseless_fit_recovers_parameters() {
    let dir = scratch("noiseless");
    let data = noiseless_file(&dir);
    let (code, out, err) = run(bin().args(["fit", "--r", "1", "--method", "wls-apriori"])
        .args(["--gamma-i", "0.01", "--gamma-e", "0.05", "--data"])
        .arg(&data));
    assert_eq!(code, 0, "{err}");
    assert_eq!(format!("{:.3}", value(&out, "K_F")), "1.000");
    assert_eq!(format!("{:.3}", value(&out, "N")), "0.700");
    assert!(value(&out, "chi2") < 1e-12);
    assert_eq!(value(&out, "dof"), 3.0);
}

#[test]
fn two_level_file_reports_gamma_i() {
    let dir = scratch("gamma_i");
    let data = dir.join("two.csv");
    fs::write(
        &data,
        "level,expected_ci,measured_ci,replicate,ce\n\
         1,1,0.94,1,0.5\n1,1,0.94,2,0.52\n\
         2,10,9.8,1,5.0\n2,10,9.8,2,5.1\n",
    )
    .unwrap();
    let (code, out, err) = run(bin().args(["fit", "--r", "1", "--method", "wls-estimated", "--data"]).arg(&data));
    let g = value(&out, "gamma_i");
    assert!((g - 0.029).abs() < 0.0005, "{g}");
    assert_eq!(code, 2, "{err}");
    assert!(err.contains("3"), "{err}");
}

#[test]
fn uls_scale_factor_matches_printed_residuals() {
    let dir = scratch("uls");
    let data = dir.join("noisy.csv");
    fs::write(
        &data,
        "level,measured_ci,replicate,ce\n\
         1,0.1,1,0.052\n1,0.1,2,0.049\n\
         2,0.32,1,0.18\n2,0.32,2,0.19\n\
         3,1,1,0.61\n3,1,2,0.58\n\
         4,3.2,1,2.1\n4,3.2,2,2.2\n",
    )
    .unwrap();
    let csv_out = dir.join("fit.csv");
    let (code, out, err) = run(bin().args(["fit", "--r", "1", "--method", "uls", "--data"])
        .arg(&data)
        .arg("--out")
        .arg(&csv_out));
    assert_eq!(code, 0, "{err}");
    let text = fs::read_to_string(&csv_out).unwrap();
    let mut residuals = Vec::new();
    let mut scale = None;
    let mut dof = None;
    let mut in_table = false;
    for line in text.lines() {
        let f: Vec<&str> = line.split(',').collect();
        if f[0] == "level" {
            in_table = true;
            continue;
        }
        if in_table {
            residuals.push(f[5].parse::<f64>().unwrap());
        } else if f[0] == "scale_factor" {
            scale = Some(f[1].parse::<f64>().unwrap());
        } else if f[0] == "dof" {
            dof = Some(f[1].parse::<f64>().unwrap());
        }
    }
    assert_eq!(residuals.len(), 4);
    let by_hand = residuals.iter().map(|r| r * r).sum::<f64>() / dof.unwrap();
    assert!((scale.unwrap() - by_hand).abs() <= 1e-12 * by_hand.max(1e-300));
    assert!((value(&out, "scale_factor") / by_hand - 1.0).abs() < 1e-5);
}

#[test]
fn fit_errors_name_the_problem() {
    let dir = scratch("fit_errors");
    let data = noiseless_file(&dir);
    let (code, _, err) = run(bin().args(["fit", "--r", "1", "--method", "wls-apriori", "--gamma-e", "0.05", "--data"]).arg(&data));
    assert_eq!(code, 2);
    assert!(err.contains("--gamma-i"), "{err}");

    let bad = dir.join("bad.csv");
    fs::write(&bad, "level,measured_ci,replicate,ce\n1,1,1,0.5\n2,2,1,x\n").unwrap();
    let (code, _, err) = run(bin().args(["fit", "--r", "1", "--method", "uls", "--data"]).arg(&bad));
    assert_eq!(code, 2);
    assert!(err.contains("line 3"), "{err}");

    let neg = dir.join("neg.csv");
    fs::write(
        &neg,
        "level,measured_ci,replicate,ce\n1,1,1,0.5\n2,2,1,2.5\n3,3,1,1\n",
    )
    .unwrap();
    let (code, _, err) = run(bin().args(["fit", "--r", "1", "--method", "uls", "--data"]).arg(&neg));
    assert_eq!(code, 2);
    assert!(err.contains("level 2"), "{err}");
}

#[test]
fn degenerate_design_exits_3() {
    let dir = scratch("degenerate");
    let data = dir.join("flat.csv");
    fs::write(
        &data,
        "level,measured_ci,replicate,ce\n1,1,1,0.5\n2,2,1,0.5\n3,3,1,0.5\n",
    )
    .unwrap();
    let (code, _, err) = run(bin().args(["fit", "--r", "1", "--method", "uls", "--data"]).arg(&data));
    assert_eq!(code, 3, "{err}");
}

#[test]
fn csv_round_trip_reproduces_fit() {
    let dir = scratch("round_trip");
    let first = dir.join("sim.csv");
    let (code, _, err) = run(bin().args(["simulate", "--kf", "2", "--n", "0.6", "--reps", "2", "--seed", "11", "--write-isotherm"]).arg(&first));
    assert_eq!(code, 0, "{err}");
    let req = FitRequest {
        method: MethodChoice::WlsEstimated,
        gamma_i: None,
        gamma_e: None,
    };
    let a = read_isotherm_file(&first, 1.0, 1.0).unwrap();
    let second = dir.join("again.csv");
    write_isotherm_csv(&a, fs::File::create(&second).unwrap()).unwrap();
    let b = read_isotherm_file(&second, 1.0, 1.0).unwrap();
    assert_eq!(a, b);
    assert_eq!(fit_dataset(&a, &req).unwrap(), fit_dataset(&b, &req).unwrap());
    assert_eq!(fs::read(&first).unwrap(), fs::read(&second).unwrap());
}

#[test]
fn sweep_smoke_and_determinism() {
    let a = scratch("sweep_a");
    let b = scratch("sweep_b");
    let (code, out, err) = run(bin().args(["sweep", "--reps", "20", "--seed", "5", "--case", "III", "--parallelism", "1", "--out-dir"]).arg(&a));
    assert_eq!(code, 0, "{err}");
    assert!(out.contains("candidates 546"));
    assert!(out.contains("retained 425"));
    assert!(out.contains("discarded 121"));
    let cfg = b.join("sweep.cfg");
    fs::write(&cfg, "reps = 20\ncase = III\nparallelism = 3\nseed = 99\n").unwrap();
    let (code, _, err) = run(bin()
        .env("FREUNDLICH_SEED", "123")
        .args(["sweep", "--seed", "5", "--config"])
        .arg(&cfg)
        .arg("--out-dir")
        .arg(&b));
    assert_eq!(code, 0, "{err}");
    for f in ["sweep_case_III.csv", "diagnostics_case_III.csv", "summary.txt"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let text = fs::read_to_string(a.join("sweep_case_III.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), freundlich::simkit::SWEEP_HEADER);
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 425);
    for r in rows {
        let fields: Vec<&str> = r.split(',').collect();
        assert_eq!(fields.len(), 12);
        for f in &fields[..11] {
            assert!(f.parse::<f64>().unwrap().is_finite(), "{r}");
        }
        fields[11].parse::<usize>().unwrap();
    }
}

#[test]
fn seed_comes_from_environment_when_no_flag() {
    let dir = scratch("seed_env");
    let a = dir.join("a.csv");
    let b = dir.join("b.csv");
    let c = dir.join("c.csv");
    let sim = ["simulate", "--kf", "1", "--n", "0.7", "--reps", "5", "--case", "I", "--out"];
    assert_eq!(run(bin().env("FREUNDLICH_SEED", "42").args(sim).arg(&a)).0, 0);
    assert_eq!(run(bin().args(sim).arg(&b).args(["--seed", "42"])).0, 0);
    assert_eq!(run(bin().args(sim).arg(&c).args(["--seed", "43"])).0, 0);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert_ne!(fs::read(&a).unwrap(), fs::read(&c).unwrap());
}

#[test]
fn config_rejects_unknown_keys_before_work() {
    let dir = scratch("bad_cfg");
    let cfg = dir.join("x.cfg");
    fs::write(&cfg, "reps = 20\nrepz = 3\n").unwrap();
    let out = dir.join("out");
    let (code, _, err) = run(bin().args(["sweep", "--config"]).arg(&cfg).arg("--out-dir").arg(&out));
    assert_eq!(code, 2);
    assert!(err.contains("repz"));
    assert!(!out.exists());
}

#[test]
fn validate_chisq_reports_dof() {
    let (code, out, err) = run(bin().args(["validate-chisq", "--case", "2", "--reps", "200", "--seed", "1"]));
    assert_eq!(code, 0, "{err}");
    assert!(out.lines().next().unwrap().contains("dof = 4"));
    assert!(out.contains(freundlich::simkit::CHISQ_HEADER));

    let (code, out, err) = run(bin().args(["validate-chisq", "--case", "1", "--reps", "10"]));
    assert_eq!(code, 0);
    assert!(out.contains("dof = 3"));
    assert!(err.contains("warning"));

    let (code, _, _) = run(bin().args(["validate-chisq", "--case", "4"]));
    assert_eq!(code, 2);
}

fn surface(args: &[&str]) -> Vec<Vec<f64>> {
    let (code, out, err) = run(bin().arg("weights-table").args(args));
    assert_eq!(code, 0, "{err}");
    let mut lines = out.lines();
    assert_eq!(lines.next().unwrap(), freundlich::weights::SURFACE_HEADER);
    lines
        .map(|l| l.split(',').map(|f| f.parse().unwrap()).collect())
        .collect()
}

#[test]
fn weights_table_variants() {
    let default = surface(&[]);
    let explicit = surface(&["--gamma-e", "0.05", "--gamma-i", "0.025", "--u", "3"]);
    assert_eq!(default, explicit);
    let no_ci = surface(&["--gamma-i", "0"]);
    assert_eq!(default.len(), no_ci.len());
    for (a, b) in default.iter().zip(&no_ci) {
        assert!((0.0..=1.0).contains(&a[2]));
        assert_eq!(a[2], b[2]);
        assert!(b[3] < a[3]);
    }
}
