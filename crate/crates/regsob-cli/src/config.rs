//! Run configuration: one flat TOML key/value file per run.

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use regsob::expansion::{BoundaryGraph, McConfig, Perturbation};
use regsob::field::Grading;
use regsob::minimize::{Initialization, SolverConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub n: usize,
    pub sigma: f64,

    // solver
    pub r_max: f64,
    pub schedule: Vec<usize>,
    pub grading_beta: f64,
    pub max_iterations: usize,
    pub el_tol: f64,
    pub pin_height: f64,
    /// envelope | gaussian | perturbed
    pub init: String,
    pub init_amplitude: f64,
    pub seed: u64,

    // Γ₀: grids in intervals per axis (empty: half and full resolution of Θ)
    pub gamma0_grids: Vec<usize>,
    pub gamma0_lambdas: Vec<f64>,

    // boundary graph
    pub alpha: Vec<f64>,
    /// zero | quadratic-taper | polynomial
    pub g: String,
    pub g_amplitude: f64,
    pub g_width: f64,
    pub g_coefficients: Vec<f64>,
    pub r0: f64,
    pub delta0: f64,
    pub epsilon0: f64,
    pub dilation: f64,

    // verification
    pub lambdas: Vec<f64>,
    pub mc_samples_per_batch: usize,
    pub mc_batches: usize,
    pub mc_max_rel_stderr: f64,

    // property suites
    pub check_samples: usize,

    // kernel table
    pub table_intervals: usize,
    pub table_budget_mb: usize,

    /// Worker threads; 0 uses every core.
    pub threads: usize,
    pub output_dir: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        let s = SolverConfig::default();
        let mc = McConfig::default();
        Self {
            n: s.n,
            sigma: s.sigma,
            r_max: s.r_max,
            schedule: s.schedule,
            grading_beta: s.grading.beta_r,
            max_iterations: s.max_iterations,
            el_tol: s.el_tol,
            pin_height: s.pin_height,
            init: "envelope".into(),
            init_amplitude: 0.3,
            seed: s.seed,
            gamma0_grids: vec![],
            gamma0_lambdas: vec![0.25, 0.5, 1.0, 1.5, 2.0, 3.0],
            alpha: vec![0.05; s.n - 1],
            g: "zero".into(),
            g_amplitude: 0.0,
            g_width: 1.0,
            g_coefficients: vec![],
            r0: 4.0,
            delta0: 1.0,
            epsilon0: 0.05,
            dilation: 1.0,
            lambdas: vec![1.0, 1.5, 2.0, 3.0, 4.0, 6.0, 8.0],
            mc_samples_per_batch: mc.samples_per_batch,
            mc_batches: mc.batches,
            mc_max_rel_stderr: mc.max_rel_stderr,
            check_samples: 100_000,
            table_intervals: 24,
            table_budget_mb: 512,
            threads: 0,
            output_dir: "out".into(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &str) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {path}"))?;
        // toml reports the line, column and key of the offending entry
        toml::from_str(&text).map_err(|e| anyhow::anyhow!("{path}: {e}"))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn solver(&self) -> Result<SolverConfig> {
        let init = match self.init.as_str() {
            "envelope" => Initialization::Envelope,
            "gaussian" => Initialization::Gaussian,
            "perturbed" => Initialization::Perturbed { amplitude: self.init_amplitude },
            other => bail!("init: unknown initialization `{other}` (envelope | gaussian | perturbed)"),
        };
        let cfg = SolverConfig {
            n: self.n,
            sigma: self.sigma,
            r_max: self.r_max,
            schedule: self.schedule.clone(),
            grading: Grading { beta_r: self.grading_beta, beta_z: self.grading_beta },
            max_iterations: self.max_iterations,
            el_tol: self.el_tol,
            pin_height: self.pin_height,
            init,
            seed: self.seed,
            ..SolverConfig::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn graph(&self) -> Result<BoundaryGraph> {
        let g = match self.g.as_str() {
            "zero" => Perturbation::Zero,
            "quadratic-taper" => Perturbation::QuadraticTaper { amplitude: self.g_amplitude, width: self.g_width },
            "polynomial" => Perturbation::Polynomial { coefficients: self.g_coefficients.clone() },
            other => bail!("g: unknown perturbation `{other}` (zero | quadratic-taper | polynomial)"),
        };
        if self.alpha.len() + 1 != self.n {
            bail!("alpha: expected {} principal curvatures, got {}", self.n - 1, self.alpha.len());
        }
        let bg = BoundaryGraph::new(self.alpha.clone(), g, self.r0, self.delta0, self.epsilon0)?;
        Ok(bg.dilate(self.dilation))
    }

    pub fn monte_carlo(&self) -> McConfig {
        McConfig {
            samples_per_batch: self.mc_samples_per_batch,
            batches: self.mc_batches,
            seed: self.seed,
            max_rel_stderr: self.mc_max_rel_stderr,
            ..McConfig::default()
        }
    }
}
