//! `regsob` command-line front end.
//!
//! Exit codes: 0 on success, 2 when a verdict or property check fails, 1 on error.

mod checks;
mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

use regsob::expansion::{residual_fit, verdicts_csv, verify_upper_bound};
use regsob::field::{kernel_table_to_bytes, load_field, make_grid, Grading};
use regsob::gamma0::{estimate_gamma0, Gamma0Report};
use regsob::kernel::{build_kernel_table_with_budget, KernelParams};
use regsob::minimize::{save_result, solve_halfspace};

use config::RunConfig;

const THREADS_ENV: &str = "REGSOB_THREADS";
const CACHE_ENV: &str = "REGSOB_CACHE_DIR";

#[derive(Parser)]
#[command(name = "regsob", version, about = "Regional fractional Sobolev quotients on the half-space and near curved boundaries")]
#[command(after_help = "Environment: REGSOB_THREADS overrides `threads`; REGSOB_CACHE_DIR is the default directory for kernel tables.")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the full default configuration.
    PrintConfig,
    /// Minimize the half-space quotient; writes theta.field, theta.json.
    Solve {
        #[arg(long)]
        config: Option<String>,
    },
    /// Estimate Γ₀ from a solved field; writes gamma0.json.
    Gamma0 {
        #[arg(long)]
        config: Option<String>,
        #[arg(long)]
        theta: PathBuf,
    },
    /// Upper-bound verdicts for the configured boundary graph.
    ///
    /// Writes verdicts.json and scan.csv with columns
    /// lambda, measured_quotient, stderr, predicted_bound, curvature_term, F_term, pass.
    Verify {
        #[arg(long)]
        config: Option<String>,
        #[arg(long)]
        theta: PathBuf,
        #[arg(long)]
        gamma0: PathBuf,
    },
    /// Run a property suite: rearrangement | kernel | appendix-scaling | taylor-bounds.
    Check {
        suite: String,
        #[arg(long)]
        config: Option<String>,
    },
    /// Tabulate the reduced kernel on the configured grid.
    KernelTable {
        #[arg(long)]
        config: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Serialize)]
struct FileEntry {
    path: String,
    sha256: String,
}

#[derive(Serialize)]
struct RunManifest {
    command: String,
    config: RunConfig,
    version: &'static str,
    seeds: Vec<u64>,
    inputs: Vec<FileEntry>,
    wall_time_s: Option<f64>,
    outputs: Vec<FileEntry>,
}

fn sha256(path: &Path) -> Result<FileEntry> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(FileEntry { path: path.display().to_string(), sha256: format!("{:x}", Sha256::digest(&bytes)) })
}

/// Manifest written before any result and completed afterwards.
struct Run {
    manifest: RunManifest,
    path: PathBuf,
    start: Instant,
}

impl Run {
    fn begin(command: &str, cfg: &RunConfig, dir: &Path, inputs: &[&Path]) -> Result<Self> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let manifest = RunManifest {
            command: command.into(),
            config: cfg.clone(),
            version: env!("CARGO_PKG_VERSION"),
            seeds: vec![cfg.seed],
            inputs: inputs.iter().map(|p| sha256(p)).collect::<Result<_>>()?,
            wall_time_s: None,
            outputs: vec![],
        };
        let run = Self { manifest, path: dir.join(format!("{command}.manifest.json")), start: Instant::now() };
        run.write()?;
        Ok(run)
    }

    fn write(&self) -> Result<()> {
        std::fs::write(&self.path, serde_json::to_string_pretty(&self.manifest)?)?;
        Ok(())
    }

    fn finish(mut self, outputs: &[PathBuf]) -> Result<()> {
        self.manifest.outputs = outputs.iter().map(|p| sha256(p)).collect::<Result<_>>()?;
        self.manifest.wall_time_s = Some(self.start.elapsed().as_secs_f64());
        self.write()
    }
}

fn load_config(path: &Option<String>) -> Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Ok(t) = std::env::var(THREADS_ENV) {
        cfg.threads = t.parse().with_context(|| format!("{THREADS_ENV}={t} is not a thread count"))?;
    }
    Ok(cfg)
}

#[cfg(feature = "parallel")]
fn set_threads(n: usize) -> Result<()> {
    if n > 0 {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

#[cfg(not(feature = "parallel"))]
fn set_threads(_: usize) -> Result<()> {
    Ok(())
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)?).with_context(|| format!("writing {}", path.display()))
}

/// Returns whether every verdict or check passed.
fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::PrintConfig => {
            print!("{}", RunConfig::default().to_toml());
            Ok(true)
        }
        Command::Solve { config } => {
            let cfg = load_config(&config)?;
            set_threads(cfg.threads)?;
            let solver = cfg.solver()?;
            let dir = PathBuf::from(&cfg.output_dir);
            let run = Run::begin("solve", &cfg, &dir, &[])?;
            let res = solve_halfspace(&solver)?;
            let files = save_result(&res, &dir, "theta")?;
            println!("S = {:.6}  EL residual {:.2e}  status {:?}", res.s_estimate, res.el_residual, res.status);
            for l in &res.levels {
                println!("  N = {:3}  Q = {:.6}  residual {:.2e}  iterations {}", l.intervals, l.s_estimate, l.el_residual, l.iterations);
            }
            run.finish(&files)?;
            Ok(true)
        }
        Command::Gamma0 { config, theta } => {
            let cfg = load_config(&config)?;
            set_threads(cfg.threads)?;
            let dir = PathBuf::from(&cfg.output_dir);
            let run = Run::begin("gamma0", &cfg, &dir, &[&theta])?;
            let field = load_field(&theta)?;
            let grids = if cfg.gamma0_grids.is_empty() {
                let m = field.grid.intervals().0;
                vec![m / 2, m]
            } else {
                cfg.gamma0_grids.clone()
            };
            let provenance = u64::from_str_radix(&sha256(&theta)?.sha256[..16], 16)?;
            let rep = estimate_gamma0(&field, &cfg.gamma0_lambdas, &grids, provenance)?;
            println!("{}", rep.verdict_line());
            println!("{:>6} {:>10} {:>16}", "grid", "lambda", "value");
            for row in &rep.table {
                let l = row.lambda.map_or("box".to_string(), |l| format!("{l}"));
                println!("{:>6} {:>10} {:>16.8e}", row.intervals, l, row.value);
            }
            let out = dir.join("gamma0.json");
            write_json(&out, &rep)?;
            run.finish(&[out])?;
            Ok(true)
        }
        Command::Verify { config, theta, gamma0 } => {
            let cfg = load_config(&config)?;
            set_threads(cfg.threads)?;
            let dir = PathBuf::from(&cfg.output_dir);
            let run = Run::begin("verify", &cfg, &dir, &[&theta, &gamma0])?;
            let field = load_field(&theta)?;
            let g0: Gamma0Report = serde_json::from_slice(&std::fs::read(&gamma0)?)?;
            let bg = cfg.graph()?;
            let verdicts = verify_upper_bound(&field, Some(&g0), &bg, &cfg.lambdas, &cfg.monte_carlo())?;
            let csv = verdicts_csv(&verdicts);
            print!("{csv}");
            if verdicts.len() >= 2 {
                let fit = residual_fit(&verdicts, field.sigma)?;
                println!("residual ≈ {:.4e}/λ + {:.4e}/λ^(2σ), R² = {:.4}", fit.coefficients[0], fit.coefficients[1], fit.r_squared);
            }
            let (json, csv_path) = (dir.join("verdicts.json"), dir.join("scan.csv"));
            write_json(&json, &verdicts)?;
            std::fs::write(&csv_path, csv)?;
            run.finish(&[json, csv_path])?;
            Ok(verdicts.iter().all(|v| v.pass))
        }
        Command::Check { suite, config } => {
            let cfg = load_config(&config)?;
            set_threads(cfg.threads)?;
            let lines = checks::run(&suite, &cfg)?;
            for l in &lines {
                println!("{} {}: {}", if l.pass { "PASS" } else { "FAIL" }, l.name, l.value);
            }
            Ok(lines.iter().all(|l| l.pass))
        }
        Command::KernelTable { config, out } => {
            let cfg = load_config(&config)?;
            set_threads(cfg.threads)?;
            let out = match out {
                Some(p) => p,
                None => {
                    let dir = std::env::var(CACHE_ENV).unwrap_or_else(|_| cfg.output_dir.clone());
                    PathBuf::from(dir).join(format!("kernel-n{}-s{}-m{}.table", cfg.n, cfg.sigma, cfg.table_intervals))
                }
            };
            let dir = out.parent().map(Path::to_path_buf).unwrap_or_default();
            let run = Run::begin("kernel-table", &cfg, &dir, &[])?;
            let m = cfg.table_intervals;
            let grid = make_grid(cfg.n, cfg.r_max, m, m, Grading { beta_r: cfg.grading_beta, beta_z: cfg.grading_beta })?;
            let table = build_kernel_table_with_budget(&grid, KernelParams::energy(cfg.n, cfg.sigma)?, cfg.table_budget_mb << 20)?;
            std::fs::write(&out, kernel_table_to_bytes(&table)?)?;
            let (a, b, c) = table.shape();
            println!("{}: {a} x {b} x {c} entries, {} bytes", out.display(), table.bytes());
            run.finish(&[out])?;
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
