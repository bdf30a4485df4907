//! Command-line entry point.
//!
//! Any `--section.key value` (or `--section.key=value`) argument overrides
//! the matching configuration key; everything else is parsed by clap.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::diagnostics::mode_coverage;
use crate::error::{Error, Result};
use crate::experiment::{self, RunOptions, CHECKPOINT_FILE};
use crate::io::checkpoint::Checkpoint;
use crate::io::config::RunConfig;
use crate::io::dataset;
use crate::io::{figures, load_config};
use crate::models::GeneratorModel;
use crate::nn::Tensor;
use crate::rng::{self, tag};
use crate::sampling;
use crate::selfcheck;

#[derive(Parser, Debug)]
#[command(name = "vmcmc", version, about = "Train and inspect EBM/generator/encoder triplets")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train on an unconditional dataset.
    Train(TrainArgs),
    /// Train on a paired (x, y) dataset.
    TrainCond(TrainArgs),
    /// Ancestral Langevin samples from a trained run.
    Sample(SampleArgs),
    /// Noise-free conditional prediction from a trained run.
    Predict(PredictArgs),
    /// Train the linear-Gaussian testbed and report equilibrium residuals.
    Testbed(ConfigArgs),
    /// Grid KL, mode coverage and energy gap of a trained run.
    Eval(RunArgs),
    /// One training run per combination of the listed values.
    Sweep(SweepArgs),
    /// Gradient and closed-form self-tests.
    Check(CheckArgs),
}

#[derive(Args, Debug)]
struct ConfigArgs {
    /// Configuration file; defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Continue from the run directory's checkpoint.
    #[arg(long)]
    resume: bool,
    /// Skip figure files.
    #[arg(long)]
    no_figures: bool,
}

#[derive(Args, Debug)]
struct RunArgs {
    /// Run directory containing `checkpoint.bin`.
    #[arg(long)]
    run: PathBuf,
}

#[derive(Args, Debug)]
struct SampleArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long, default_value_t = 1000)]
    n: usize,
    /// Langevin steps (0 gives pure ancestral samples).
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    step_size: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory (default `<run>/samples`).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Comma-separated condition values, one per prediction (1-D conditions).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    cond: Vec<f64>,
    /// CSV file with one condition row per prediction.
    #[arg(long)]
    cond_file: Option<PathBuf>,
    #[arg(long)]
    steps: Option<usize>,
    /// Output CSV (default: standard output).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Langevin steps l.
    #[arg(long, value_delimiter = ',')]
    steps: Vec<usize>,
    /// Langevin step sizes δ.
    #[arg(long, value_delimiter = ',')]
    step_size: Vec<f64>,
    /// Latent dimensions d.
    #[arg(long, value_delimiter = ',')]
    latent_dim: Vec<usize>,
    /// KL weights γ.
    #[arg(long, value_delimiter = ',')]
    gamma: Vec<f64>,
    #[arg(long)]
    no_figures: bool,
}

#[derive(Args, Debug)]
struct CheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// Top-level configuration keys, overridable as `--name value` etc.
pub const TOP_LEVEL_KEYS: [&str; 3] = ["name", "output_dir", "precision"];

/// Splits `--a.b value` / `--a.b=value` pairs from the remaining arguments.
pub fn split_overrides(argv: &[String]) -> std::result::Result<(Vec<String>, Vec<(String, String)>), String> {
    let mut rest = Vec::new();
    let mut overrides = Vec::new();
    let mut it = argv.iter();
    while let Some(arg) = it.next() {
        let Some(flag) = arg.strip_prefix("--") else {
            rest.push(arg.clone());
            continue;
        };
        let (key, inline) = match flag.split_once('=') {
            Some((k, v)) => (k, Some(v.to_string())),
            None => (flag, None),
        };
        if !key.contains('.') && !TOP_LEVEL_KEYS.contains(&key) {
            rest.push(arg.clone());
            continue;
        }
        let value = match inline {
            Some(v) => v,
            None => it.next().cloned().ok_or_else(|| format!("missing value for --{key}"))?,
        };
        overrides.push((key.to_string(), value));
    }
    Ok((rest, overrides))
}

fn load(cfg: &ConfigArgs, overrides: &[(String, String)]) -> Result<RunConfig> {
    match &cfg.config {
        Some(path) => load_config(path, overrides),
        None => RunConfig::parse_with_overrides("", overrides),
    }
}

fn print_line(s: &str) {
    println!("{s}");
}

/// Runs the CLI on `argv` (including the program name) and returns the
/// process exit code: 0 on success, 1 on runtime failure, 2 on usage errors.
pub fn cli_main(argv: &[String]) -> i32 {
    let (rest, overrides) = match split_overrides(argv.get(1..).unwrap_or(&[])) {
        Ok(v) => v,
        Err(msg) => {
            eprintln!("error: {msg}");
            return 2;
        }
    };
    let program = argv.first().cloned().unwrap_or_else(|| "vmcmc".into());
    let cli = match Cli::try_parse_from(std::iter::once(program).chain(rest)) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command, &overrides) {
        Ok(true) => 0,
        Ok(false) => 1,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) | Error::ConfigValue { .. } => 2,
                _ => 1,
            }
        }
    }
}

fn dispatch(cmd: Command, overrides: &[(String, String)]) -> Result<bool> {
    match cmd {
        Command::Train(a) => train(&a, overrides, false),
        Command::TrainCond(a) => train(&a, overrides, true),
        Command::Sample(a) => sample(&a, overrides),
        Command::Predict(a) => predict(&a, overrides),
        Command::Testbed(a) => testbed(&a, overrides),
        Command::Eval(a) => eval(&a, overrides),
        Command::Sweep(a) => sweep(&a, overrides),
        Command::Check(a) => check(&a, overrides),
    }
}

fn train(a: &TrainArgs, overrides: &[(String, String)], conditional: bool) -> Result<bool> {
    let cfg = load(&a.cfg, overrides)?;
    let opts = RunOptions { resume: a.resume, figures: !a.no_figures, conditional: Some(conditional) };
    let out = experiment::train(&cfg, &opts, &mut print_line)?;
    println!("run directory: {}", out.dir.display());
    Ok(true)
}

fn open_run(run: &Path, overrides: &[(String, String)]) -> Result<(RunConfig, experiment::NeuralTrainer)> {
    let ck = Checkpoint::load(&run.join(CHECKPOINT_FILE))?;
    let (cfg, t) = experiment::restore_trainer(&ck)?;
    if overrides.is_empty() {
        return Ok((cfg, t));
    }
    // Overrides only affect sampling and evaluation settings here.
    let cfg = RunConfig::parse_with_overrides(&ck.config, overrides)?;
    Ok((cfg, t))
}

fn sample(a: &SampleArgs, overrides: &[(String, String)]) -> Result<bool> {
    let (cfg, t) = open_run(&a.run.run, overrides)?;
    let mut sampler = cfg.langevin.sampler(rng::derive_seed(a.seed, &[tag::SAMPLER]));
    if let Some(l) = a.steps {
        sampler.steps = l;
    }
    if let Some(d) = a.step_size {
        sampler.step_size = d;
    }
    sampler.keep_frames = true;
    let data = dataset::generate(&cfg.dataset)?;
    let rec = experiment::sample_run(&t, &data, a.n, &sampler)?;
    let out = a.out.clone().unwrap_or_else(|| a.run.run.join("samples"));
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    figures::write_points_csv(&out.join("x_hat.csv"), &rec.initial)?;
    figures::write_points_csv(&out.join("x_tilde.csv"), &rec.final_state)?;
    if rec.initial.cols() <= 2 {
        let (lo, hi) = (-1.25, 1.25);
        figures::scatter(&[(&rec.initial, figures::INITIAL_COLOR)], lo, hi, 400)?
            .write_pnm(&out.join("scatter_x_hat.ppm"))?;
        figures::scatter(&[(&rec.final_state, figures::REVISED_COLOR)], lo, hi, 400)?
            .write_pnm(&out.join("scatter_x_tilde.ppm"))?;
    }
    println!(
        "{} samples, {} Langevin steps, energy {:.4} -> {:.4}; written to {}",
        a.n,
        sampler.steps,
        rec.energy_trace.first().copied().unwrap_or(f64::NAN),
        rec.energy_trace.last().copied().unwrap_or(f64::NAN),
        out.display()
    );
    Ok(true)
}

fn predict(a: &PredictArgs, overrides: &[(String, String)]) -> Result<bool> {
    let (cfg, t) = open_run(&a.run.run, overrides)?;
    let cond_dim = t.generator.cond_dim();
    if cond_dim == 0 {
        return Err(Error::invalid("the run was trained without conditions"));
    }
    let cond = match &a.cond_file {
        Some(path) => figures::read_points_csv(path)?,
        None => {
            if a.cond.is_empty() {
                return Err(Error::invalid("give --cond values or --cond-file"));
            }
            Tensor::matrix(a.cond.len(), 1, a.cond.clone())?
        }
    };
    if cond.cols() != cond_dim {
        return Err(Error::invalid(format!(
            "conditions have {} columns, the model expects {cond_dim}",
            cond.cols()
        )));
    }
    let mut sampler = cfg.langevin.sampler(0);
    sampler.noise_enabled = false;
    if let Some(l) = a.steps {
        sampler.steps = l;
    }
    let x = sampling::predict(&t.generator, &t.energy, &cond, &sampler)?;
    match &a.out {
        Some(path) => figures::write_points_csv(path, &x)?,
        None => {
            for row in x.iter_rows() {
                let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
                println!("{}", cells.join(","));
            }
        }
    }
    Ok(true)
}

fn testbed(a: &ConfigArgs, overrides: &[(String, String)]) -> Result<bool> {
    let cfg = load(a, overrides)?;
    let out = experiment::run_testbed(&cfg, cfg.train.seed, &mut print_line)?;
    let r = &out.residuals;
    let tb = &cfg.testbed;
    println!("p_theta: mean {:.6} std {:.6} (data: mean {} std {})", out.p_theta_mean, out.p_theta_std, tb.mean, tb.var.sqrt());
    if let Some(d) = out.trace.last() {
        println!(
            "final: kl_data_p {:.3e} kl_p_q {:.3e} kl_q_p {:.3e} kl_enc_post {:.3e}",
            d.kl_data_p.unwrap_or(f64::NAN),
            d.kl_p_q.unwrap_or(f64::NAN),
            d.kl_q_p.unwrap_or(f64::NAN),
            d.kl_enc_post.unwrap_or(f64::NAN)
        );
    }
    println!("nash residuals: r_theta {:.3e} r_alpha {:.3e} r_beta {:.3e}", r.r_theta, r.r_alpha, r.r_beta);
    if let Some(tr) = &out.kl_q_p_trend {
        println!("KL(q||p) trend: tau {:.3} z {:.2} p {:.3e}", tr.tau, tr.z, tr.p_value);
    }
    Ok(true)
}

fn eval(a: &RunArgs, overrides: &[(String, String)]) -> Result<bool> {
    let (cfg, t) = open_run(&a.run, overrides)?;
    match experiment::Evaluator::new(&cfg)? {
        Some(ev) => {
            let r = ev.evaluate(t.iteration(), &t)?;
            let d = &r.divergences;
            println!("iteration {}", r.iteration);
            println!("kl_data_p {:.6}", d.kl_data_p.unwrap_or(f64::NAN));
            println!("kl_data_p_wide {:.6}", r.kl_data_p_wide);
            println!("kl_p_q {:.6}", d.kl_p_q.unwrap_or(f64::NAN));
            println!("kl_q_p {:.6}", d.kl_q_p.unwrap_or(f64::NAN));
            println!("energy_gap {:.6}", r.energy_gap);
            if let Some(c) = &r.coverage {
                let cells: Vec<String> = c.iter().map(|v| format!("{v:.4}")).collect();
                println!("coverage {}", cells.join(","));
            }
        }
        None => {
            let held = dataset::generate_n(&cfg.dataset, 1000, rng::derive_seed(cfg.dataset.seed, &[tag::EVAL]))?;
            let mut sampler = cfg.langevin.sampler(0);
            sampler.noise_enabled = false;
            match &held.cond {
                Some(c) => {
                    let x = sampling::predict(&t.generator, &t.energy, c, &sampler)?;
                    println!("iteration {}", t.iteration());
                    println!("predict_mse {:.6}", mse(&x, &held.x));
                }
                None => {
                    let mut s = cfg.langevin.sampler(rng::derive_seed(cfg.train.seed, &[tag::EVAL]));
                    s.keep_frames = false;
                    let rec = sampling::ancestral_langevin_sample(&t.generator, &t.energy, cfg.eval.samples.min(1000), None, &s)?;
                    println!("iteration {}", t.iteration());
                    println!("energy_gap {:.6}", crate::diagnostics::energy_gap(&t.energy, &rec.initial, &rec.final_state, None)?);
                    if let Some(centers) = &held.centers {
                        let radius = cfg.eval.coverage_radius.unwrap_or(3.0 * cfg.dataset.std);
                        let c = mode_coverage(&rec.final_state, centers, radius)?;
                        let cells: Vec<String> = c.iter().map(|v| format!("{v:.4}")).collect();
                        println!("coverage {}", cells.join(","));
                    }
                }
            }
        }
    }
    Ok(true)
}

pub fn mse(a: &Tensor, b: &Tensor) -> f64 {
    let n = a.rows().max(1) as f64;
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / n
}

fn sweep(a: &SweepArgs, overrides: &[(String, String)]) -> Result<bool> {
    let base = load(&a.cfg, overrides)?;
    let steps = if a.steps.is_empty() { vec![base.langevin.steps] } else { a.steps.clone() };
    let deltas = if a.step_size.is_empty() { vec![base.langevin.step_size] } else { a.step_size.clone() };
    let dims = if a.latent_dim.is_empty() { vec![base.model.latent_dim] } else { a.latent_dim.clone() };
    let gammas = if a.gamma.is_empty() { vec![base.train.gamma] } else { a.gamma.clone() };
    let root = base.run_dir();
    let opts = RunOptions { resume: false, figures: !a.no_figures, conditional: None };
    for &l in &steps {
        for &delta in &deltas {
            for &d in &dims {
                for &gamma in &gammas {
                    let mut cfg = base.clone();
                    cfg.langevin.steps = l;
                    cfg.langevin.step_size = delta;
                    cfg.model.latent_dim = d;
                    cfg.train.gamma = gamma;
                    let name = format!("l{l}_delta{delta}_d{d}_gamma{gamma}");
                    cfg.output_dir = Some(root.join(&name));
                    cfg.validate()?;
                    println!("== {name}");
                    let out = experiment::train(&cfg, &opts, &mut print_line)?;
                    if let Some(r) = out.evals.last() {
                        println!(
                            "{name}: kl_data_p {:.6} energy_gap {:.6}",
                            r.divergences.kl_data_p.unwrap_or(f64::NAN),
                            r.energy_gap
                        );
                    }
                }
            }
        }
    }
    Ok(true)
}

fn check(a: &CheckArgs, overrides: &[(String, String)]) -> Result<bool> {
    if !overrides.is_empty() {
        return Err(Error::Config("`check` takes no configuration overrides".into()));
    }
    let mut all = true;
    for c in selfcheck::run_all(a.seed)? {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
        all &= c.passed;
    }
    Ok(all)
}
