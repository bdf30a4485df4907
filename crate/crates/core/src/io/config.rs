//! Run configuration: a TOML document with fixed sections, every key
//! optional with a documented default, unknown keys rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::diagnostics::GridSpec;
use crate::error::{Error, Result};
use crate::nn::Precision;
use crate::sampling::SamplerConfig;
use crate::training::{AdamConfig, ElboEstimator, TrainConfig};

/// Environment variable naming the default output root.
pub const OUTPUT_ROOT_ENV: &str = "VMCMC_OUTPUT_ROOT";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub name: String,
    /// Run directory; defaults to `$VMCMC_OUTPUT_ROOT/<name>` or `runs/<name>`.
    pub output_dir: Option<PathBuf>,
    pub precision: Precision,
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    pub langevin: LangevinConfig,
    pub train: TrainSection,
    pub adam: AdamSection,
    pub grid: GridConfig,
    pub eval: EvalConfig,
    pub testbed: TestbedConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            name: "run".into(),
            output_dir: None,
            precision: Precision::F64,
            dataset: DatasetConfig::default(),
            model: ModelConfig::default(),
            langevin: LangevinConfig::default(),
            train: TrainSection::default(),
            adam: AdamSection::default(),
            grid: GridConfig::default(),
            eval: EvalConfig::default(),
            testbed: TestbedConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    /// gaussian_grid, ring, two_spirals, checkerboard, patches, two_branch
    /// or ring_slice.
    pub kind: String,
    pub n: usize,
    pub seed: u64,
    /// Mixture layout for gaussian_grid.
    pub rows: usize,
    pub cols: usize,
    /// Component standard deviation for gaussian_grid.
    pub std: f64,
    /// Ring radius; outer radius for two_spirals.
    pub radius: f64,
    /// Additive noise standard deviation for ring, two_spirals and the
    /// paired datasets.
    pub noise: f64,
    pub turns: f64,
    /// Cells per side for checkerboard.
    pub cells: usize,
    /// Image directory for patches.
    pub dir: Option<PathBuf>,
    pub patch_size: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            kind: "gaussian_grid".into(),
            n: 10_000,
            seed: 0,
            rows: 2,
            cols: 4,
            std: 0.1,
            radius: 0.8,
            noise: 0.03,
            turns: 1.5,
            cells: 4,
            dir: None,
            patch_size: 8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Requested latent dimension; capped at the data dimension.
    pub latent_dim: usize,
    pub energy_hidden: Vec<usize>,
    pub generator_hidden: Vec<usize>,
    pub encoder_hidden: Vec<usize>,
    /// Generator observation noise σ.
    pub sigma: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            latent_dim: 200,
            energy_hidden: vec![128, 128],
            generator_hidden: vec![128, 128],
            encoder_hidden: vec![128, 128],
            sigma: 0.3,
        }
    }
}

impl ModelConfig {
    pub fn effective_latent_dim(&self, data_dim: usize) -> usize {
        self.latent_dim.min(data_dim).max(1)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LangevinConfig {
    pub steps: usize,
    pub step_size: f64,
    pub noise: bool,
    pub ancestral_noise: bool,
    pub clamp: Option<[f64; 2]>,
    pub keep_frames: bool,
}

impl Default for LangevinConfig {
    fn default() -> Self {
        Self {
            steps: 15,
            step_size: 0.002,
            noise: true,
            ancestral_noise: true,
            clamp: None,
            keep_frames: false,
        }
    }
}

impl LangevinConfig {
    pub fn sampler(&self, seed: u64) -> SamplerConfig {
        SamplerConfig {
            steps: self.steps,
            step_size: self.step_size,
            noise_enabled: self.noise,
            ancestral_noise: self.ancestral_noise,
            clamp: self.clamp.map(|[lo, hi]| (lo, hi)),
            keep_frames: self.keep_frames,
            seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub batch_size: usize,
    pub sample_batch: usize,
    pub gamma: f64,
    pub iterations: u64,
    pub seed: u64,
    /// Iterations between metric rows; 0 disables periodic evaluation.
    pub eval_every: u64,
    /// Iterations between checkpoints; 0 keeps only the final one.
    pub checkpoint_every: u64,
    pub clip_norm: Option<f64>,
    /// L2 weight decay on the energy parameters.
    pub weight_decay: f64,
    pub elbo_draws: usize,
    /// Use Gauss–Hermite quadrature with this many nodes instead of draws.
    pub elbo_nodes: Option<usize>,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            batch_size: 100,
            sample_batch: 100,
            gamma: 2.0,
            iterations: 10_000,
            seed: 0,
            eval_every: 500,
            checkpoint_every: 0,
            clip_norm: None,
            weight_decay: 0.0,
            elbo_draws: 1,
            elbo_nodes: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamSection {
    pub energy: AdamConfig,
    pub generator: AdamConfig,
    pub encoder: AdamConfig,
}

impl Default for AdamSection {
    fn default() -> Self {
        Self {
            energy: AdamConfig::with_lr(1e-4),
            generator: AdamConfig::with_lr(3e-4),
            encoder: AdamConfig::with_lr(3e-4),
        }
    }
}

/// Square quadrature grid used by the energy heatmap and partition function.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub lo: f64,
    pub hi: f64,
    pub resolution: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { lo: -4.0, hi: 4.0, resolution: 200 }
    }
}

impl GridConfig {
    pub fn spec(&self, dims: usize) -> Result<GridSpec> {
        GridSpec::square(dims, self.lo, self.hi, self.resolution)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Ancestral Langevin samples drawn for coverage and final figures.
    pub samples: usize,
    /// Fresh data samples for histogram KL estimates.
    pub data_samples: usize,
    /// Coverage radius; defaults to three component standard deviations.
    pub coverage_radius: Option<f64>,
    /// Histogram grid for KL estimates (square, nodes per side).
    pub kl_lo: f64,
    pub kl_hi: f64,
    pub kl_resolution: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            samples: 10_000,
            data_samples: 100_000,
            coverage_radius: None,
            kl_lo: -1.25,
            kl_hi: 1.25,
            kl_resolution: 51,
        }
    }
}

impl EvalConfig {
    pub fn kl_grid(&self, dims: usize) -> Result<GridSpec> {
        GridSpec::square(dims, self.kl_lo, self.kl_hi, self.kl_resolution)
    }
}

/// Linear-Gaussian testbed: data `N(mean, var)`, generator noise σ, and the
/// settings of a testbed training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TestbedConfig {
    pub mean: f64,
    pub var: f64,
    pub sigma: f64,
    pub n: usize,
    pub batch_size: usize,
    pub gamma: f64,
    pub lr: f64,
    pub steps: usize,
    pub step_size: f64,
    pub iterations: u64,
    pub eval_every: u64,
}

impl Default for TestbedConfig {
    fn default() -> Self {
        Self {
            mean: 2.0,
            var: 0.25,
            sigma: 0.3,
            n: 10_000,
            batch_size: 512,
            gamma: 1.0,
            lr: 0.01,
            steps: 15,
            step_size: 0.2,
            iterations: 5000,
            eval_every: 50,
        }
    }
}

fn value_error(key: &str, reason: impl Into<String>) -> Error {
    Error::ConfigValue { key: key.to_string(), reason: reason.into() }
}

impl RunConfig {
    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            batch_size: t.batch_size,
            sample_batch: t.sample_batch,
            sampler: self.langevin.sampler(t.seed),
            gamma: t.gamma,
            adam_energy: self.adam.energy,
            adam_generator: self.adam.generator,
            adam_encoder: self.adam.encoder,
            iterations: t.iterations,
            seed: t.seed,
            clip_norm: t.clip_norm,
            weight_decay: t.weight_decay,
            estimator: match t.elbo_nodes {
                Some(nodes) => ElboEstimator::GaussHermite { nodes },
                None => ElboEstimator::Reparameterized { draws: t.elbo_draws },
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return Err(value_error("name", "must be a non-empty plain file name"));
        }
        if self.dataset.n == 0 {
            return Err(value_error("dataset.n", "must be at least 1"));
        }
        let l = &self.langevin;
        if !(l.step_size > 0.0) || !l.step_size.is_finite() {
            return Err(value_error("langevin.step_size", format!("must be positive, got {}", l.step_size)));
        }
        if let Some([lo, hi]) = l.clamp {
            if !(lo < hi) {
                return Err(value_error("langevin.clamp", "needs lo < hi"));
            }
        }
        let m = &self.model;
        if m.latent_dim == 0 {
            return Err(value_error("model.latent_dim", "must be at least 1"));
        }
        if !(m.sigma > 0.0) || !m.sigma.is_finite() {
            return Err(value_error("model.sigma", "must be positive"));
        }
        for (key, widths) in [
            ("model.energy_hidden", &m.energy_hidden),
            ("model.generator_hidden", &m.generator_hidden),
            ("model.encoder_hidden", &m.encoder_hidden),
        ] {
            if widths.contains(&0) {
                return Err(value_error(key, "layer widths must be positive"));
            }
        }
        if !(self.train.weight_decay >= 0.0) {
            return Err(value_error("train.weight_decay", "must be non-negative"));
        }
        if self.train.elbo_draws == 0 {
            return Err(value_error("train.elbo_draws", "must be at least 1"));
        }
        for (key, seed) in [("train.seed", self.train.seed), ("dataset.seed", self.dataset.seed)] {
            if seed > i64::MAX as u64 {
                return Err(value_error(key, "must fit in a signed 64-bit integer"));
            }
        }
        self.grid.spec(1).map_err(|e| value_error("grid", e.to_string()))?;
        self.eval.kl_grid(1).map_err(|e| value_error("eval", e.to_string()))?;
        if self.eval.samples == 0 || self.eval.data_samples == 0 {
            return Err(value_error("eval.samples", "must be at least 1"));
        }
        if let Some(r) = self.eval.coverage_radius {
            if !(r > 0.0) {
                return Err(value_error("eval.coverage_radius", "must be positive"));
            }
        }
        let tb = &self.testbed;
        if !(tb.var > tb.sigma * tb.sigma) || !(tb.sigma > 0.0) {
            return Err(value_error("testbed.var", "must exceed testbed.sigma^2 > 0"));
        }
        if !(tb.step_size > 0.0) || !(tb.lr > 0.0) || tb.batch_size == 0 || tb.n == 0 {
            return Err(value_error("testbed", "step_size, lr, batch_size and n must be positive"));
        }
        self.train_config().validate()
    }

    /// Parses a document, applies `key = value` overrides, and validates.
    pub fn parse_with_overrides(text: &str, overrides: &[(String, String)]) -> Result<Self> {
        let cfg_err = |e: toml::de::Error| Error::Config(e.to_string());
        // Deserializing the document itself first keeps line/column
        // information in error messages.
        let mut cfg: RunConfig = toml::from_str(text).map_err(cfg_err)?;
        if !overrides.is_empty() {
            let mut table: toml::Table = text.parse().map_err(cfg_err)?;
            for (key, value) in overrides {
                apply_override(&mut table, key, value)?;
            }
            cfg = table.try_into().map_err(|e: toml::de::Error| {
                Error::Config(format!("in command-line overrides: {e}"))
            })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::parse_with_overrides(text, &[])
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// The run directory: `output_dir` if set, else `<root>/<name>` where the
    /// root comes from `VMCMC_OUTPUT_ROOT` or defaults to `runs`.
    pub fn run_dir(&self) -> PathBuf {
        match &self.output_dir {
            Some(p) => p.clone(),
            None => {
                let root = std::env::var_os(OUTPUT_ROOT_ENV)
                    .map(PathBuf::from)
                    .unwrap_or_else(|| PathBuf::from("runs"));
                root.join(&self.name)
            }
        }
    }
}

pub fn load_config(path: &Path, overrides: &[(String, String)]) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    RunConfig::parse_with_overrides(&text, overrides)
        .map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
}

/// Sets `section.key` (or a top-level `key`) to `value`, read as a TOML
/// value when it parses as one and as a string otherwise.
pub fn apply_override(table: &mut toml::Table, key: &str, value: &str) -> Result<()> {
    let parsed = format!("v = {value}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(value.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("malformed key `{key}`")));
    }
    let mut cur = table;
    for part in &parts[..parts.len() - 1] {
        let entry = cur
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("`{part}` in `{key}` is not a section")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), parsed);
    Ok(())
}
