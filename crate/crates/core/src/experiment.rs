//! End-to-end runs: neural training with metrics, checkpoints and figures,
//! evaluation on low-dimensional data, and the linear-Gaussian testbed.

use std::fs;
use std::path::{Path, PathBuf};

use crate::diagnostics::{
    energy_gap, grid_divergences, grid_kl, latent_interpolate, mode_coverage, nash_residuals,
    stats, testbed_divergences, DivergenceEntry, DivergenceTrace, GridSpec, KlSource,
    NashResiduals,
};
use crate::error::{Error, Result};
use crate::io::checkpoint::Checkpoint;
use crate::io::dataset::{self, Dataset};
use crate::io::figures;
use crate::io::metrics::{MetricsRow, MetricsWriter};
use crate::io::{Image, RunConfig};
use crate::models::{
    AffineEncoder, AffineGenerator, GaussianTestbed, GeneratorModel, LangevinKernel,
    NeuralEncoder, NeuralEnergy, NeuralGenerator, QuadraticEnergy,
};
use crate::nn::Tensor;
use crate::rng::{self, tag};
use crate::sampling::{ancestral_langevin_sample, ChainRecord, SamplerConfig};
use crate::training::{AdamConfig, LossReport, TrainConfig, Trainer};

pub type NeuralTrainer = Trainer<NeuralEnergy, NeuralGenerator, NeuralEncoder>;
pub type TestbedTrainer = Trainer<QuadraticEnergy, AffineGenerator, AffineEncoder>;

pub const CONFIG_FILE: &str = "config.toml";
pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";

/// Fresh models sized for the data, each initialized from its own stream.
pub fn build_trainer(cfg: &RunConfig, data_dim: usize, cond_dim: usize) -> Result<NeuralTrainer> {
    let m = &cfg.model;
    let seed = cfg.train.seed;
    let latent = m.effective_latent_dim(data_dim);
    let energy = NeuralEnergy::new(
        data_dim,
        cond_dim,
        &m.energy_hidden,
        &mut rng::stream(seed, &[tag::INIT_ENERGY]),
    )?
    .with_precision(cfg.precision);
    let generator = NeuralGenerator::new(
        latent,
        data_dim,
        cond_dim,
        &m.generator_hidden,
        m.sigma,
        &mut rng::stream(seed, &[tag::INIT_GENERATOR]),
    )?
    .with_precision(cfg.precision);
    let encoder = NeuralEncoder::new(
        data_dim,
        latent,
        cond_dim,
        &m.encoder_hidden,
        &mut rng::stream(seed, &[tag::INIT_ENCODER]),
    )?
    .with_precision(cfg.precision);
    Trainer::new(energy, generator, encoder, cfg.train_config())
}

/// Rebuilds a trainer from a checkpoint using the configuration it carries.
pub fn restore_trainer(ck: &Checkpoint) -> Result<(RunConfig, NeuralTrainer)> {
    let cfg = RunConfig::parse(&ck.config)?;
    let data = dataset::generate_n(&cfg.dataset, 1, cfg.dataset.seed)?;
    let cond_dim = data.cond.as_ref().map_or(0, |c| c.cols());
    let mut t = build_trainer(&cfg, data.x.cols(), cond_dim)?;
    ck.restore(&mut t)?;
    Ok((cfg, t))
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub iteration: u64,
    /// Histogram KL(data ‖ p_θ) and the generator/EBM pair on the evaluation grid.
    pub divergences: DivergenceEntry,
    /// KL(data ‖ p_θ) on the wide quadrature grid.
    pub kl_data_p_wide: f64,
    /// Per-mode fraction of revised samples, for mixture datasets.
    pub coverage: Option<Vec<f64>>,
    pub energy_gap: f64,
}

/// Grid-based evaluation for unconditional data in one or two dimensions.
pub struct Evaluator {
    data: Tensor,
    centers: Option<Vec<Vec<f64>>>,
    radius: f64,
    kl_grid: GridSpec,
    wide_grid: GridSpec,
    samples: usize,
    sampler: SamplerConfig,
}

impl Evaluator {
    /// `None` when the data are conditional or have more than two dimensions.
    pub fn new(cfg: &RunConfig) -> Result<Option<Self>> {
        let seed = rng::derive_seed(cfg.dataset.seed, &[tag::EVAL]);
        let data = dataset::generate_n(&cfg.dataset, cfg.eval.data_samples, seed)?;
        let dims = data.x.cols();
        if data.cond.is_some() || dims > 2 {
            return Ok(None);
        }
        let mut sampler = cfg.langevin.sampler(rng::derive_seed(cfg.train.seed, &[tag::EVAL]));
        sampler.keep_frames = false;
        Ok(Some(Self {
            centers: data.centers.clone(),
            data: data.x,
            radius: cfg.eval.coverage_radius.unwrap_or(3.0 * cfg.dataset.std),
            kl_grid: cfg.eval.kl_grid(dims)?,
            wide_grid: cfg.grid.spec(dims)?,
            samples: cfg.eval.samples,
            sampler,
        }))
    }

    pub fn evaluate(&self, iteration: u64, t: &NeuralTrainer) -> Result<EvalReport> {
        let divergences = grid_divergences(
            iteration,
            &self.data,
            &t.energy,
            &t.generator,
            &self.kl_grid,
            self.samples,
            rng::derive_seed(self.sampler.seed, &[tag::ANCESTRAL]),
        )?;
        let kl_data_p_wide = grid_kl(KlSource::Samples(&self.data), &t.energy, &self.wide_grid)?;
        let rec = ancestral_langevin_sample(&t.generator, &t.energy, self.samples, None, &self.sampler)?;
        let coverage = match &self.centers {
            Some(c) => Some(mode_coverage(&rec.final_state, c, self.radius)?),
            None => None,
        };
        Ok(EvalReport {
            iteration,
            divergences,
            kl_data_p_wide,
            coverage,
            energy_gap: energy_gap(&t.energy, &rec.initial, &rec.final_state, None)?,
        })
    }
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Continue from the checkpoint in the run directory when one exists.
    pub resume: bool,
    /// Write figure files at the end of the run.
    pub figures: bool,
    /// Require a dataset with (`Some(true)`) or without (`Some(false)`) conditions.
    pub conditional: Option<bool>,
}

pub struct RunOutcome {
    pub dir: PathBuf,
    pub trainer: NeuralTrainer,
    pub trace: DivergenceTrace,
    pub evals: Vec<EvalReport>,
    pub reports: Vec<LossReport>,
}

fn config_mismatch(a: &RunConfig, b: &RunConfig) -> bool {
    let mut a = a.clone();
    a.train.iterations = b.train.iterations;
    a.train.checkpoint_every = b.train.checkpoint_every;
    a.output_dir = b.output_dir.clone();
    a != *b
}

/// Trains on the configured dataset, writing `config.toml`, `metrics.csv`,
/// `checkpoint.bin` and optionally figures into the run directory.
pub fn train(cfg: &RunConfig, opts: &RunOptions, log: &mut dyn FnMut(&str)) -> Result<RunOutcome> {
    let dir = cfg.run_dir();
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let config_text = cfg.to_toml()?;
    let config_path = dir.join(CONFIG_FILE);
    fs::write(&config_path, &config_text).map_err(|e| Error::io(&config_path, e))?;

    let data = dataset::generate(&cfg.dataset)?;
    if let Some(want) = opts.conditional {
        if want != data.cond.is_some() {
            return Err(Error::Config(format!(
                "dataset `{}` is {}conditional; use `{}`",
                cfg.dataset.kind,
                if want { "not " } else { "" },
                if want { "train" } else { "train-cond" },
            )));
        }
    }
    let cond_dim = data.cond.as_ref().map_or(0, |c| c.cols());
    let mut trainer = build_trainer(cfg, data.x.cols(), cond_dim)?;

    let ck_path = dir.join(CHECKPOINT_FILE);
    let metrics_path = dir.join(METRICS_FILE);
    let mut metrics = if opts.resume && ck_path.exists() {
        let ck = Checkpoint::load(&ck_path)?;
        if config_mismatch(&RunConfig::parse(&ck.config)?, cfg) {
            return Err(Error::Checkpoint(format!(
                "{} was written with a different configuration",
                ck_path.display()
            )));
        }
        ck.restore(&mut trainer)?;
        log(&format!("resuming from iteration {}", ck.iteration));
        MetricsWriter::resume(&metrics_path, ck.iteration)?
    } else {
        MetricsWriter::create(&metrics_path)?
    };

    let evaluator = Evaluator::new(cfg)?;
    let until = cfg.train.iterations;
    let (eval_every, ck_every) = (cfg.train.eval_every, cfg.train.checkpoint_every);
    let mut trace = DivergenceTrace::default();
    let mut evals = Vec::new();
    let mut reports = Vec::new();
    let mut failure = None;
    trainer.run(&data.x, data.cond.as_ref(), until, |t, report, _| {
        let it = t.iteration();
        reports.push(*report);
        let mut entry = None;
        if it == until || (eval_every > 0 && it % eval_every == 0) {
            if let Some(ev) = &evaluator {
                let r = ev.evaluate(it, t)?;
                trace.push(r.divergences)?;
                entry = Some(r.divergences);
                let cov = r.coverage.as_ref().map(|c| {
                    format!(" min_coverage={:.4}", c.iter().copied().fold(1.0, f64::min))
                });
                log(&format!(
                    "iter {it} kl_data_p={:.4} kl_data_p_wide={:.4} energy_gap={:.4}{}",
                    r.divergences.kl_data_p.unwrap_or(f64::NAN),
                    r.kl_data_p_wide,
                    r.energy_gap,
                    cov.unwrap_or_default()
                ));
                evals.push(r);
            } else {
                log(&format!(
                    "iter {it} pos_energy={:.4} neg_energy={:.4} vae_loss={:.4}",
                    report.pos_energy, report.neg_energy, report.vae_loss
                ));
            }
        }
        metrics.append(&MetricsRow::new(report, entry.as_ref()))?;
        if it == until || (eval_every > 0 && it % eval_every == 0) {
            metrics.flush()?;
        }
        if it == until || (ck_every > 0 && it % ck_every == 0) {
            if let Err(e) = Checkpoint::from_trainer(t, &config_text).save(&ck_path) {
                failure = Some(e);
                return Ok(false);
            }
        }
        Ok(true)
    })?;
    metrics.flush()?;
    if let Some(e) = failure {
        return Err(e);
    }
    if trainer.iteration() >= until && !ck_path.exists() {
        Checkpoint::from_trainer(&trainer, &config_text).save(&ck_path)?;
    }
    if opts.figures {
        emit_figures(&dir.join("figures"), cfg, &trainer, &data)?;
    }
    Ok(RunOutcome { dir, trainer, trace, evals, reports })
}

fn first_rows(t: &Tensor, n: usize) -> Result<Tensor> {
    let idx: Vec<usize> = (0..n.min(t.rows())).collect();
    t.select_rows(&idx)
}

/// Ancestral Langevin samples with every frame kept; conditions, when the
/// data have them, are taken from the first dataset rows.
pub fn sample_run(
    t: &NeuralTrainer,
    data: &Dataset,
    n: usize,
    sampler: &SamplerConfig,
) -> Result<ChainRecord> {
    let cond = match &data.cond {
        Some(c) => {
            let idx: Vec<usize> = (0..n).map(|i| i % c.rows()).collect();
            Some(c.select_rows(&idx)?)
        }
        None => None,
    };
    ancestral_langevin_sample(&t.generator, &t.energy, n, cond.as_ref(), sampler)
}

/// Writes point sets, scatter overlays, the density heatmap, Langevin frame
/// strips and a latent interpolation strip into `dir`.
pub fn emit_figures(dir: &Path, cfg: &RunConfig, t: &NeuralTrainer, data: &Dataset) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let n = cfg.eval.samples.min(2000);
    let mut sampler = cfg.langevin.sampler(rng::derive_seed(cfg.train.seed, &[tag::EVAL, 1]));
    sampler.keep_frames = true;
    let rec = sample_run(t, data, n, &sampler)?;
    write_sample_figures(dir, &first_rows(&data.x, n)?, &rec, cfg.dataset.patch_size)?;
    let mut written = vec![
        dir.join("data.csv"),
        dir.join("x_hat.csv"),
        dir.join("x_tilde.csv"),
    ];
    let dims = data.x.cols();
    if dims == 2 && data.cond.is_none() {
        let path = dir.join("heatmap.pgm");
        figures::heatmap(&t.energy, &cfg.eval.kl_grid(2)?)?.write_pnm(&path)?;
        written.push(path);
    }
    let d = t.generator.latent_dim();
    let mut r = rng::stream(cfg.train.seed, &[tag::EVAL, 2]);
    let mut z = vec![0.0; 2 * d];
    rng::fill_standard_normal(&mut r, &mut z);
    let cond = data.cond.as_ref().map(|c| c.row(0).to_vec());
    let path = interpolation_figure(dir, &t.generator, &z[..d], &z[d..], cond.as_deref(), cfg.dataset.patch_size)?;
    written.push(path);
    Ok(written)
}

fn write_sample_figures(dir: &Path, data: &Tensor, rec: &ChainRecord, patch: usize) -> Result<()> {
    figures::write_points_csv(&dir.join("data.csv"), data)?;
    figures::write_points_csv(&dir.join("x_hat.csv"), &rec.initial)?;
    figures::write_points_csv(&dir.join("x_tilde.csv"), &rec.final_state)?;
    let dims = data.cols();
    if dims <= 2 {
        let (lo, hi) = (-1.25, 1.25);
        figures::scatter(
            &[
                (data, figures::DATA_COLOR),
                (&rec.initial, figures::INITIAL_COLOR),
                (&rec.final_state, figures::REVISED_COLOR),
            ],
            lo,
            hi,
            400,
        )?
        .write_pnm(&dir.join("scatter.ppm"))?;
        figures::scatter(&[(&rec.initial, figures::INITIAL_COLOR)], lo, hi, 400)?
            .write_pnm(&dir.join("scatter_x_hat.ppm"))?;
        figures::scatter(&[(&rec.final_state, figures::REVISED_COLOR)], lo, hi, 400)?
            .write_pnm(&dir.join("scatter_x_tilde.ppm"))?;
        if let Some(frames) = &rec.frames {
            let stride = frames.len().div_ceil(16).max(1);
            let kept: Vec<Tensor> = frames.iter().step_by(stride).cloned().collect();
            figures::frame_strip(&kept, lo, hi, 160)?.write_pnm(&dir.join("frames.ppm"))?;
        }
    } else if dims == patch * patch {
        figures::patch_strip(&first_rows(&rec.final_state, 16)?, patch)?
            .write_pnm(&dir.join("samples.pgm"))?;
        if let Some(frames) = &rec.frames {
            // One strip per chain: the final state first, then the earlier frames.
            let mut rows = Vec::new();
            for chain in 0..rec.initial.rows().min(8) {
                let mut strip: Vec<Vec<f64>> = frames.iter().rev().map(|f| f.row(chain).to_vec()).collect();
                strip.truncate(16);
                rows.push(figures::patch_strip(&Tensor::from_rows(&strip)?, patch)?);
            }
            vstack(&rows)?.write_pnm(&dir.join("frames.pgm"))?;
        }
    }
    Ok(())
}

fn vstack(images: &[Image]) -> Result<Image> {
    let width = images.iter().map(|i| i.width).max().unwrap_or(1);
    let height: usize = images.iter().map(|i| i.height).sum();
    let mut out = Image::new(width, height.max(1), 3)?;
    out.data.fill(255);
    let mut y0 = 0;
    for img in images {
        for y in 0..img.height {
            for x in 0..img.width {
                let v = (img.gray(x, y) * 255.0).round() as u8;
                out.put(x, y0 + y, [v; 3]);
            }
        }
        y0 += img.height;
    }
    Ok(out)
}

fn interpolation_figure(
    dir: &Path,
    g: &NeuralGenerator,
    z_l: &[f64],
    z_r: &[f64],
    cond: Option<&[f64]>,
    patch: usize,
) -> Result<PathBuf> {
    let path = dir.join("interpolation.csv");
    let out = latent_interpolate(g, z_l, z_r, 10, cond)?;
    figures::write_points_csv(&path, &out)?;
    if out.cols() <= 2 {
        figures::scatter(&[(&out, figures::REVISED_COLOR)], -1.25, 1.25, 200)?
            .write_pnm(&dir.join("interpolation.ppm"))?;
    } else if out.cols() == patch * patch {
        figures::patch_strip(&out, patch)?.write_pnm(&dir.join("interpolation.pgm"))?;
    }
    Ok(path)
}

/// Random testbed starting point: θ2 and a kept positive so every
/// density is proper from the first iteration.
pub fn testbed_init(sigma: f64, seed: u64) -> Result<(QuadraticEnergy, AffineGenerator, AffineEncoder)> {
    let mut r = rng::stream(seed, &[tag::INIT_ENERGY]);
    let mut u = || rng::standard_normal(&mut r);
    let e = QuadraticEnergy::new(u(), 1.0 + 0.5 * u().abs())?;
    let g = AffineGenerator::new(1.0 + 0.3 * u(), u(), sigma)?;
    let enc = AffineEncoder::new(0.3 * u(), 0.3 * u(), 1.0)?;
    Ok((e, g, enc))
}

pub fn testbed_data(cfg: &RunConfig, seed: u64) -> Result<Tensor> {
    let tb = &cfg.testbed;
    let mut r = rng::stream(seed, &[tag::DATASET]);
    let sd = tb.var.sqrt();
    let x = (0..tb.n).map(|_| tb.mean + sd * rng::standard_normal(&mut r)).collect();
    Tensor::matrix(tb.n, 1, x)
}

pub fn testbed_train_config(cfg: &RunConfig, seed: u64) -> TrainConfig {
    let tb = &cfg.testbed;
    let adam = AdamConfig::with_lr(tb.lr);
    TrainConfig {
        batch_size: tb.batch_size,
        sample_batch: tb.batch_size,
        sampler: SamplerConfig {
            steps: tb.steps,
            step_size: tb.step_size,
            ..SamplerConfig::default()
        },
        gamma: tb.gamma,
        adam_energy: adam,
        adam_generator: adam,
        adam_encoder: adam,
        iterations: tb.iterations,
        seed,
        ..TrainConfig::default()
    }
}

pub struct TestbedOutcome {
    pub trainer: TestbedTrainer,
    pub trace: DivergenceTrace,
    pub residuals: NashResiduals,
    pub p_theta_mean: f64,
    pub p_theta_std: f64,
    /// Mann–Kendall trend of KL(q_α ‖ p_θ) over the evaluations where both
    /// densities are proper.
    pub kl_q_p_trend: Option<stats::Trend>,
}

/// Trains the linear-Gaussian testbed from a random start, recording the
/// closed-form divergences every `testbed.eval_every` iterations.
pub fn run_testbed(cfg: &RunConfig, seed: u64, log: &mut dyn FnMut(&str)) -> Result<TestbedOutcome> {
    let tbc = &cfg.testbed;
    let tb = GaussianTestbed::new(tbc.mean, tbc.var, tbc.sigma)?;
    let (e, g, enc) = testbed_init(tbc.sigma, seed)?;
    let data = testbed_data(cfg, seed)?;
    let mut trainer = Trainer::new(e, g, enc, testbed_train_config(cfg, seed))?;
    let mut trace = DivergenceTrace::default();
    let every = tbc.eval_every.max(1);
    trainer.run(&data, None, tbc.iterations, |t, _, _| {
        let it = t.iteration();
        if it % every == 0 || it == tbc.iterations {
            // θ2 ≤ 0 mid-run leaves p_θ improper; such points are skipped.
            if let Ok(d) = testbed_divergences(it, &tb, &t.energy, &t.generator, &t.encoder) {
                if it % (every * 20) == 0 {
                    log(&format!(
                        "iter {it} kl_data_p={:.6} kl_q_p={:.6} kl_enc_post={:.6}",
                        d.kl_data_p.unwrap_or(f64::NAN),
                        d.kl_q_p.unwrap_or(f64::NAN),
                        d.kl_enc_post.unwrap_or(f64::NAN)
                    ));
                }
                trace.push(d)?;
            }
        }
        Ok(true)
    })?;
    let kernel = LangevinKernel {
        step_size: tbc.step_size,
        steps: tbc.steps,
        noise: true,
    };
    let residuals = nash_residuals(&tb, &trainer.energy, &trainer.generator, &trainer.encoder, &kernel)?;
    let p = trainer.energy.density()?;
    let series: Vec<f64> = trace.series(|d| d.kl_q_p).into_iter().map(|(_, v)| v).collect();
    let kl_q_p_trend = stats::mann_kendall(&series).ok();
    Ok(TestbedOutcome {
        trainer,
        trace,
        residuals,
        p_theta_mean: p.mean,
        p_theta_std: p.std(),
        kl_q_p_trend,
    })
}
