//! Isotherm CSV and flat `key = value` configuration files.
//!
//! Isotherm files are long form, one row per replicate:
//!
//! ```text
//! level,expected_ci,measured_ci,replicate,ce
//! 1,0.1,0.1012,1,0.0431
//! 1,0.1,0.1012,2,0.0447
//! ```
//!
//! `expected_ci` may be left empty or omitted entirely; it is only needed to
//! estimate γ_i.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::estimate::{IsothermDataset, LevelRecord};

pub const ISOTHERM_HEADER: &str = "level,expected_ci,measured_ci,replicate,ce";

struct Row {
    line: u64,
    level: u64,
    expected: Option<f64>,
    measured: f64,
    replicate: u64,
    c_e: f64,
}

fn parse_field<T: std::str::FromStr>(raw: &str, name: &str, line: u64) -> Result<T> {
    raw.trim().parse::<T>().map_err(|_| Error::Parse {
        line,
        message: format!("invalid {name} '{raw}'"),
    })
}

/// Reads a long-form isotherm CSV into a dataset with the given `r` and
/// `c_ref`.
pub fn read_isotherm_csv<R: Read>(input: R, r: f64, c_ref: f64) -> Result<IsothermDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(input);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h.eq_ignore_ascii_case(name));
    let missing = |name: &str| Error::Parse {
        line: 1,
        message: format!("missing column '{name}' (expected header {ISOTHERM_HEADER})"),
    };
    let c_level = col("level").ok_or_else(|| missing("level"))?;
    let c_expected = col("expected_ci");
    let c_measured = col("measured_ci").ok_or_else(|| missing("measured_ci"))?;
    let c_rep = col("replicate").ok_or_else(|| missing("replicate"))?;
    let c_ce = col("ce").ok_or_else(|| missing("ce"))?;

    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let get = |i: usize, name: &str| {
            rec.get(i).ok_or_else(|| Error::Parse {
                line,
                message: format!("missing field '{name}'"),
            })
        };
        let expected = match c_expected {
            Some(i) => {
                let raw = get(i, "expected_ci")?;
                if raw.is_empty() {
                    None
                } else {
                    Some(parse_field::<f64>(raw, "expected_ci", line)?)
                }
            }
            None => None,
        };
        rows.push(Row {
            line,
            level: parse_field(get(c_level, "level")?, "level", line)?,
            expected,
            measured: parse_field(get(c_measured, "measured_ci")?, "measured_ci", line)?,
            replicate: parse_field(get(c_rep, "replicate")?, "replicate", line)?,
            c_e: parse_field(get(c_ce, "ce")?, "ce", line)?,
        });
    }
    if rows.is_empty() {
        return Err(Error::InvalidInput("isotherm file has no data rows".into()));
    }

    let mut grouped: BTreeMap<u64, Vec<&Row>> = BTreeMap::new();
    for row in &rows {
        grouped.entry(row.level).or_default().push(row);
    }
    let mut levels = Vec::with_capacity(grouped.len());
    for (level, mut group) in grouped {
        group.sort_by_key(|r| r.replicate);
        let first = group[0];
        for pair in group.windows(2) {
            if pair[0].replicate == pair[1].replicate {
                return Err(Error::Parse {
                    line: pair[1].line,
                    message: format!("duplicate replicate {} at level {level}", pair[1].replicate),
                });
            }
        }
        for row in &group {
            if row.measured != first.measured {
                return Err(Error::Parse {
                    line: row.line,
                    message: format!(
                        "measured_ci {} differs from {} on line {} within level {level}",
                        row.measured, first.measured, first.line
                    ),
                });
            }
            if row.expected != first.expected {
                return Err(Error::Parse {
                    line: row.line,
                    message: format!("expected_ci is inconsistent within level {level}"),
                });
            }
        }
        levels.push(LevelRecord {
            expected_c_i: first.expected,
            measured_c_i: first.measured,
            replicate_c_e: group.iter().map(|r| r.c_e).collect(),
        });
    }
    IsothermDataset::new(levels, r, c_ref)
}

pub fn read_isotherm_file(path: &Path, r: f64, c_ref: f64) -> Result<IsothermDataset> {
    let f = std::fs::File::open(path)
        .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    read_isotherm_csv(f, r, c_ref)
}

/// Writes a dataset in the long-form schema at full precision.
pub fn write_isotherm_csv<W: Write>(dataset: &IsothermDataset, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(ISOTHERM_HEADER.split(','))?;
    for (i, lvl) in dataset.levels.iter().enumerate() {
        for (j, c_e) in lvl.replicate_c_e.iter().enumerate() {
            w.write_record(&[
                (i + 1).to_string(),
                lvl.expected_c_i.map(|e| e.to_string()).unwrap_or_default(),
                lvl.measured_c_i.to_string(),
                (j + 1).to_string(),
                c_e.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Parses `key = value` lines. Blank lines and `#` comments are skipped;
/// keys are normalised to lowercase with `-` replaced by `_`.
pub fn parse_config(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::Parse {
                line: i as u64 + 1,
                message: format!("expected 'key = value', got '{line}'"),
            });
        };
        let key = k.trim().to_ascii_lowercase().replace('-', "_");
        if key.is_empty() {
            return Err(Error::Parse {
                line: i as u64 + 1,
                message: "empty key".into(),
            });
        }
        out.insert(key, v.trim().to_string());
    }
    Ok(out)
}

/// Comma-separated list of reals.
pub fn parse_real_list(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| Error::InvalidParameter(format!("invalid number '{t}' in list '{s}'")))
        })
        .collect()
}

/// Formats `v` with 6 significant digits.
pub fn sig6(v: f64) -> String {
    if !v.is_finite() {
        return v.to_string();
    }
    if v == 0.0 {
        return "0".into();
    }
    let mag = v.abs().log10().floor() as i32;
    if !(-4..=9).contains(&mag) {
        return format!("{v:.5e}");
    }
    let decimals = (5 - mag).max(0) as usize;
    format!("{v:.decimals$}")
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "\
level,expected_ci,measured_ci,replicate,ce
1,1.0,0.94,1,0.5
1,1.0,0.94,2,0.52
2,10.0,9.8,2,5.1
2,10.0,9.8,1,5.0
";

    #[test]
    fn reads_long_form() {
        let ds = read_isotherm_csv(SAMPLE.as_bytes(), 1.0, 1.0).unwrap();
        assert_eq!(ds.levels.len(), 2);
        assert_eq!(ds.levels[1].replicate_c_e, vec![5.0, 5.1]);
        assert_eq!(ds.levels[0].expected_c_i, Some(1.0));
        assert_eq!(ds.levels[1].measured_c_i, 9.8);
    }

    #[test]
    fn optional_expected_column() {
        let text = "level,measured_ci,replicate,ce\n1,1,1,0.5\n2,2,1,0.8\n";
        let ds = read_isotherm_csv(text.as_bytes(), 1.0, 1.0).unwrap();
        assert!(ds.levels.iter().all(|l| l.expected_c_i.is_none()));
        let text = "level,expected_ci,measured_ci,replicate,ce\n1,,1,1,0.5\n";
        let ds = read_isotherm_csv(text.as_bytes(), 1.0, 1.0).unwrap();
        assert_eq!(ds.levels[0].expected_c_i, None);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let text = "level,expected_ci,measured_ci,replicate,ce\n1,1,1,1,0.5\n1,1,1,2,abc\n";
        match read_isotherm_csv(text.as_bytes(), 1.0, 1.0) {
            Err(Error::Parse { line, message }) => {
                assert_eq!(line, 3);
                assert!(message.contains("ce"));
            }
            other => panic!("{other:?}"),
        }
        let text = "level,expected_ci,measured_ci,replicate,ce\n1,1,1,1,0.5\n1,1,1.1,2,0.4\n";
        assert!(matches!(
            read_isotherm_csv(text.as_bytes(), 1.0, 1.0),
            Err(Error::Parse { line: 3, .. })
        ));
        let text = "level,measured,replicate,ce\n1,1,1,0.5\n";
        assert!(matches!(
            read_isotherm_csv(text.as_bytes(), 1.0, 1.0),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn round_trip() {
        let ds = read_isotherm_csv(SAMPLE.as_bytes(), 0.5, 1.0).unwrap();
        let mut buf = Vec::new();
        write_isotherm_csv(&ds, &mut buf).unwrap();
        let back = read_isotherm_csv(buf.as_slice(), 0.5, 1.0).unwrap();
        assert_eq!(ds, back);
    }

    #[test]
    fn config_parsing() {
        let cfg = parse_config("# sweep\nreps = 100\nSeed=7 # trailing\n\ngamma-e = 0.05\n").unwrap();
        assert_eq!(cfg["reps"], "100");
        assert_eq!(cfg["seed"], "7");
        assert_eq!(cfg["gamma_e"], "0.05");
        assert!(matches!(parse_config("reps 100"), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn six_significant_digits() {
        assert_eq!(sig6(1.0), "1.00000");
        assert_eq!(sig6(0.0123456789), "0.0123457");
        assert_eq!(sig6(123456.789), "123457");
        assert_eq!(sig6(0.0), "0");
        assert_eq!(sig6(1.5e-7), "1.50000e-7");
    }

    #[test]
    fn real_lists() {
        assert_eq!(parse_real_list("0.1, 1,10").unwrap(), vec![0.1, 1.0, 10.0]);
        assert!(parse_real_list("0.1,x").is_err());
    }
}
