//! Experiment runner: TOML configs in, CSV and JSON artifacts out.

pub mod config;
pub mod output;
pub mod suites;
pub mod verify;

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use config::{ConfigError, ExperimentConfig, Suite};
use output::{read_csv, write_atomic, write_csv, write_json, Provenance};
use suites::{run_suite, SuiteOutcome};

pub const EXIT_PASS: u8 = 0;
pub const EXIT_FAIL: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;

/// Command-line overrides of a config.
#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub parallel_suites: bool,
    /// Suppress the per-suite lines on stderr.
    pub quiet: bool,
}

#[derive(Serialize)]
struct Summary<'a> {
    passed: bool,
    suites: &'a [SuiteOutcome],
}

/// Result of a run: exit code and per-suite outcomes.
#[derive(Debug)]
pub struct RunReport {
    pub code: u8,
    pub outcomes: Vec<SuiteOutcome>,
    pub out_dir: PathBuf,
}

/// Loads, validates and runs a config file. Messages go to stderr.
pub fn cmd_run(path: &Path, opts: &RunOptions) -> RunReport {
    match run_inner(path, opts) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("config error: {e}");
            RunReport {
                code: EXIT_CONFIG,
                outcomes: Vec::new(),
                out_dir: PathBuf::new(),
            }
        }
    }
}

fn run_inner(path: &Path, opts: &RunOptions) -> Result<RunReport, ConfigError> {
    let (mut cfg, text) = ExperimentConfig::load(path)?;
    if let Some(s) = opts.seed {
        cfg.seed = s;
    }
    let exp = cfg.build()?;
    let out_dir = opts
        .out
        .clone()
        .or_else(|| cfg.output.dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    std::fs::create_dir_all(&out_dir).map_err(|e| ConfigError::Io(format!("{}: {e}", out_dir.display())))?;
    let prov = Provenance::new(&text, cfg.seed);
    let mut suites: Vec<Suite> = cfg.suites.clone();
    suites.dedup();
    let io = |e: std::io::Error| ConfigError::Io(format!("writing into {}: {e}", out_dir.display()));
    let outcomes: Vec<SuiteOutcome> = if opts.parallel_suites {
        suites
            .par_iter()
            .map(|&s| run_suite(&exp, s, &out_dir, &prov))
            .collect::<std::io::Result<_>>()
            .map_err(io)?
    } else {
        suites
            .iter()
            .map(|&s| run_suite(&exp, s, &out_dir, &prov))
            .collect::<std::io::Result<_>>()
            .map_err(io)?
    };
    let passed = outcomes.iter().all(|o| o.passed);
    write_json(&out_dir.join("summary.json"), &prov, &Summary { passed, suites: &outcomes }).map_err(io)?;
    for o in outcomes.iter().filter(|_| !opts.quiet) {
        for f in &o.failures {
            eprintln!("FAIL {}: {}", o.suite.name(), f.invariant);
            if !f.witness.is_empty() {
                eprintln!("  witness: {}", f.witness);
            }
        }
        if o.passed {
            eprintln!("pass {}", o.suite.name());
        }
    }
    Ok(RunReport {
        code: if passed { EXIT_PASS } else { EXIT_FAIL },
        outcomes,
        out_dir,
    })
}

#[derive(Debug, thiserror::Error)]
pub enum EmitError {
    #[error("{0}: no decay.csv, jensen.csv or attractor.csv found")]
    Empty(PathBuf),
    #[error("{path}: {message}")]
    Read { path: PathBuf, message: String },
    #[error("{path}: column {column} missing")]
    Column { path: PathBuf, column: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Plot-ready CSVs from the artifacts of a run: `decay.csv (t,h,g)`,
/// `jensen.csv (n,normalized_f)` and `attractor.csv (t,weak_distance)`,
/// written into `out` (default `<dir>/plots`).
pub fn cmd_emit_plots(dir: &Path, out: Option<&Path>) -> Result<Vec<PathBuf>, EmitError> {
    let out = out.map(Path::to_path_buf).unwrap_or_else(|| dir.join("plots"));
    let jobs: [(&str, &[&str]); 3] = [
        ("decay.csv", &["t", "h", "g"]),
        ("jensen.csv", &["n", "normalized_f"]),
        ("attractor.csv", &["t", "weak_distance"]),
    ];
    let mut written = Vec::new();
    for (name, cols) in jobs {
        let src = dir.join(name);
        if !src.is_file() {
            continue;
        }
        let read_err = |e: String| EmitError::Read {
            path: src.clone(),
            message: e,
        };
        let (header, rows) = read_csv(&src).map_err(|e| read_err(e.to_string()))?;
        let idx: Vec<usize> = cols
            .iter()
            .map(|c| {
                header.iter().position(|h| h == c).ok_or_else(|| EmitError::Column {
                    path: src.clone(),
                    column: c.to_string(),
                })
            })
            .collect::<Result<_, _>>()?;
        let text = std::fs::read_to_string(&src)?;
        let prov = header_provenance(&text);
        let rows: Vec<Vec<String>> = rows.iter().map(|r| idx.iter().map(|&i| r[i].clone()).collect()).collect();
        let header: Vec<String> = cols.iter().map(|s| s.to_string()).collect();
        let dst = out.join(name);
        match prov {
            Some(p) => write_csv(&dst, &p, &header, &rows)?,
            None => {
                let mut w = csv::Writer::from_writer(Vec::new());
                w.write_record(&header).map_err(std::io::Error::from)?;
                for r in &rows {
                    w.write_record(r).map_err(std::io::Error::from)?;
                }
                write_atomic(&dst, &w.into_inner().map_err(|e| e.into_error())?)?;
            }
        }
        written.push(dst);
    }
    if written.is_empty() {
        return Err(EmitError::Empty(dir.to_path_buf()));
    }
    Ok(written)
}

fn header_provenance(text: &str) -> Option<Provenance> {
    let mut version = None;
    let mut sha = None;
    let mut seed = None;
    for line in text.lines().take_while(|l| l.starts_with("# ")) {
        let body = &line[2..];
        if let Some(v) = body.strip_prefix("config_sha256 ") {
            sha = Some(v.to_string());
        } else if let Some(v) = body.strip_prefix("seed ") {
            seed = v.parse().ok();
        } else if body.starts_with("ipslab ") {
            version = Some(body.to_string());
        }
    }
    Some(Provenance {
        version: version?,
        config_sha256: sha?,
        seed: seed?,
    })
}
