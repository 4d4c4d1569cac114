//! Command-line driver. Exit codes: 0 success, 1 usage or validation
//! failure, 2 runtime failure (including a diagnostic that ran but did not
//! pass).

use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::config::{preset, RunConfig};
use crate::diag;
use crate::dynamics::{discrete_step, generalized_rhs, kuramoto_rhs, trig_winfree_rhs, TrajectoryRecord};
use crate::energy::interaction_energy;
use crate::error::{Result, WonnError};
use crate::phase::{wrap_unchecked, PhaseField};
use crate::rng::{normal_vec, stream};
use crate::tasks::{gen_datasets, read_jsonl, write_jsonl, Instance};
use crate::train::{evaluate, fit, pool, Model};
use crate::voting::{energy_vote, sample_candidates, VoteConfig};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::Rng;
use rayon::ThreadPool;
use serde::{Deserialize, Serialize};
use serde_json::json;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "wonn", version, about = "Winfree oscillatory neural networks")]
pub struct Cli {
    /// JSON run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Built-in configuration (shidoku, maze, blobs, toy) used when no
    /// --config is given.
    #[arg(long, global = true)]
    pub preset: Option<String>,
    /// Seed for every random stream; overrides the config's train seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output file or directory, depending on the command.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads. Results do not depend on this.
    #[arg(long, global = true, default_value_t = 1)]
    pub workers: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Roll out classical phase dynamics and write the trajectory as JSONL.
    Simulate(SimulateArgs),
    /// Train on the configured task; writes metrics.jsonl, model.ckpt and
    /// config.json into --out.
    Train(TrainArgs),
    /// Accuracy of a checkpoint on a dataset split.
    Eval(EvalArgs),
    /// Energy voting over several phase initializations; one JSON line per instance, then a summary.
    Vote(VoteArgs),
    /// Diagnostics; each prints a JSON report with a "pass" field.
    Diag {
        #[command(subcommand)]
        mode: DiagMode,
    },
    /// Generate the configured datasets as JSONL.
    GenData,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum DynamicsKind {
    Winfree,
    Kuramoto,
    Generalized,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, value_enum, default_value = "winfree")]
    pub dynamics: DynamicsKind,
    /// Number of oscillators.
    #[arg(long, default_value_t = 16)]
    pub d: usize,
    #[arg(long, default_value_t = 10)]
    pub steps: usize,
    /// Coupling strength.
    #[arg(long, default_value_t = 1.0)]
    pub gamma: f64,
    /// Symmetry-breaking parameter for the generalized field.
    #[arg(long, default_value_t = 1.0)]
    pub q: f64,
    /// Euler step.
    #[arg(long, default_value_t = 0.1)]
    pub dt: f64,
    /// Scale of the random symmetric coupling; 0 disables coupling.
    #[arg(long, default_value_t = 1.0)]
    pub coupling_scale: f64,
    /// Standard deviation of the natural frequencies.
    #[arg(long, default_value_t = 0.0)]
    pub omega_std: f64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Override the number of epochs.
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Debug, Clone, Copy, ValueEnum, PartialEq, Eq)]
pub enum SplitArg {
    Train,
    Test,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset JSONL; defaults to regenerating the checkpoint's task.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,
}

#[derive(Debug, Args)]
pub struct VoteArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Candidates per instance; defaults to the config's vote section.
    #[arg(long)]
    pub k: Option<usize>,
    /// Inference steps; defaults to the config's vote section.
    #[arg(long)]
    pub t_eval: Option<usize>,
    /// Only vote on the first N instances.
    #[arg(long)]
    pub limit: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum DiagMode {
    /// Reverse mode against central differences for the configured model.
    GradCheck {
        #[arg(long, default_value_t = 200)]
        coords: usize,
        /// Check a trained checkpoint instead of a fresh initialization.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Energy descent of the zero-frequency trigonometric dynamics.
    Lyapunov {
        #[arg(long, default_value_t = 32)]
        d: usize,
        #[arg(long, default_value_t = 20)]
        runs: usize,
        #[arg(long, default_value_t = 1000)]
        steps: usize,
        #[arg(long, default_value_t = 0.01)]
        gamma: f64,
    },
    /// Separable-form and shift-equivariance identities.
    Identities {
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
        #[arg(long, default_value_t = 16)]
        d: usize,
    },
    /// Circulation of constant drift around the circle.
    Circulation {
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_value = "0,0.5,1,-2")]
        omega: Vec<f64>,
        #[arg(long, default_value_t = 1024)]
        loop_steps: usize,
    },
    /// Histogram of final phases of a trained model on one test instance.
    Hist {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 36)]
        bins: usize,
        #[arg(long, default_value_t = 0)]
        index: usize,
    },
}

/// Metadata stored next to the tensors of a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub schema: u32,
    pub config: RunConfig,
    pub seed: u64,
    pub epoch: usize,
}

pub const META_SCHEMA: u32 = 1;

/// Parse `argv` (including the program name) and run; returns the exit code.
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_VALIDATION } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(&cli) {
        Ok(true) => EXIT_OK,
        Ok(false) => EXIT_RUNTIME,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                EXIT_VALIDATION
            } else {
                EXIT_RUNTIME
            }
        }
    }
}

fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match (&cli.config, &cli.preset) {
        (Some(_), Some(_)) => return Err(WonnError::config("give either --config or --preset, not both")),
        (Some(path), None) => RunConfig::load(path)?,
        (None, Some(name)) => preset(name)?,
        (None, None) => return Err(WonnError::config("this command needs --config or --preset")),
    };
    if let Some(seed) = cli.seed {
        cfg.train.seed = seed;
    }
    Ok(cfg)
}

fn seed_of(cli: &Cli) -> u64 {
    cli.seed.unwrap_or(0)
}

/// Writer for `--out` or stdout.
fn output(out: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match out {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(std::io::stdout())),
    })
}

fn print_report<T: Serialize>(out: &Option<PathBuf>, report: &T) -> Result<()> {
    let mut w = output(out)?;
    serde_json::to_writer(&mut w, report)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn pass_of<T: Serialize>(report: &T) -> bool {
    serde_json::to_value(report).ok().and_then(|v| v["pass"].as_bool()).unwrap_or(true)
}

fn dispatch(cli: &Cli) -> Result<bool> {
    if cli.workers == 0 {
        return Err(WonnError::config("--workers must be at least 1"));
    }
    let pool = pool(cli.workers)?;
    match &cli.command {
        Command::Simulate(args) => simulate(cli, args),
        Command::Train(args) => train(cli, args, &pool),
        Command::Eval(args) => eval(cli, args, &pool),
        Command::Vote(args) => vote(cli, args, &pool),
        Command::GenData => gen_data(cli),
        Command::Diag { mode } => diagnose(cli, mode),
    }
}

fn simulate(cli: &Cli, a: &SimulateArgs) -> Result<bool> {
    if a.d == 0 {
        return Err(WonnError::config("--d must be positive"));
    }
    if !(a.dt > 0.0) || !a.dt.is_finite() {
        return Err(WonnError::config("--dt must be positive"));
    }
    if !(a.omega_std >= 0.0) || !a.coupling_scale.is_finite() {
        return Err(WonnError::config("--omega-std must be non-negative and --coupling-scale finite"));
    }
    let seed = seed_of(cli);
    let d = a.d;
    let mut rng = stream(seed, "simulate_theta");
    let theta0: Vec<f64> = (0..d).map(|_| rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI)).collect();
    let omega = normal_vec(&mut stream(seed, "simulate_omega"), d, a.omega_std);
    let mut k = vec![0.0; d * d];
    if a.coupling_scale != 0.0 {
        let mut rng = stream(seed, "simulate_coupling");
        let scale = a.coupling_scale / d as f64;
        for i in 0..d {
            for j in i..d {
                let v = scale * rng.gen_range(-1.0..1.0);
                k[i * d + j] = v;
                k[j * d + i] = v;
            }
        }
    }
    let mut theta = PhaseField::flat(theta0.into_iter().map(wrap_unchecked).collect())?;
    let mut traj = TrajectoryRecord::default();
    for step in 1..=a.steps {
        let rhs = match a.dynamics {
            DynamicsKind::Winfree => trig_winfree_rhs(theta.as_slice(), &omega, &k, a.gamma)?,
            DynamicsKind::Kuramoto => kuramoto_rhs(theta.as_slice(), &omega, &k, a.gamma)?,
            DynamicsKind::Generalized => generalized_rhs(theta.as_slice(), &omega, &k, a.gamma, a.q)?,
        };
        theta = discrete_step(&theta, &rhs, a.dt)?;
        let energy = match a.dynamics {
            DynamicsKind::Winfree => Some(interaction_energy(theta.as_slice(), &k)?),
            _ => None,
        };
        traj.push(step, theta.as_slice(), energy)?;
    }
    let mut w = output(&cli.out)?;
    traj.write_jsonl(&mut w)?;
    w.flush()?;
    Ok(true)
}

fn train(cli: &Cli, a: &TrainArgs, pool: &ThreadPool) -> Result<bool> {
    let mut cfg = resolve_config(cli)?;
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    cfg.validate()?;
    let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("run"));
    std::fs::create_dir_all(&out)?;
    std::fs::write(out.join("config.json"), cfg.to_json())?;
    let seed = cfg.train.seed;
    let (train_set, test_set) = gen_datasets(&cfg.task, seed)?;
    let mut metrics = BufWriter::new(File::create(out.join("metrics.jsonl"))?);
    let started = std::time::Instant::now();
    let outcome = fit(&cfg.model, &cfg.train, &train_set, &test_set, pool, |m| {
        serde_json::to_writer(&mut metrics, m)?;
        writeln!(metrics)?;
        metrics.flush()?;
        eprintln!(
            "epoch {} loss {:.4} train_acc {:.3}{} [{:.0}s]",
            m.epoch,
            m.loss,
            m.accuracy,
            m.test_accuracy.map(|t| format!(" test_acc {t:.3}")).unwrap_or_default(),
            started.elapsed().as_secs_f64()
        );
        Ok(())
    })?;
    let meta = CheckpointMeta { schema: META_SCHEMA, config: cfg.clone(), seed, epoch: cfg.train.epochs };
    save_checkpoint(&outcome.model.params, &serde_json::to_string(&meta)?, &out.join("model.ckpt"))?;
    let last = outcome.metrics.last();
    print_report(
        &None,
        &json!({
            "epochs": cfg.train.epochs,
            "final_loss": last.map(|m| m.loss),
            "test_accuracy": last.and_then(|m| m.test_accuracy),
            "checkpoint": out.join("model.ckpt"),
        }),
    )?;
    Ok(true)
}

/// Model and metadata from a checkpoint, checked against its own config.
pub fn load_model(path: &Path) -> Result<(Model, CheckpointMeta)> {
    let (params, meta) = load_checkpoint(path)?;
    let meta: CheckpointMeta = serde_json::from_str(&meta)?;
    meta.config.validate()?;
    params.check_against(&meta.config.model)?;
    Ok((Model { cfg: meta.config.model.clone(), params }, meta))
}

fn dataset(meta: &CheckpointMeta, data: &Option<PathBuf>, split: SplitArg) -> Result<Vec<Instance>> {
    if let Some(p) = data {
        let set = read_jsonl(BufReader::new(File::open(p)?))?;
        if let Some(bad) = set.iter().find(|i| i.kind() != meta.config.task.kind()) {
            return Err(WonnError::config(format!("dataset holds {:?} instances, model expects {:?}", bad.kind(), meta.config.task.kind())));
        }
        return Ok(set);
    }
    let (train, test) = gen_datasets(&meta.config.task, meta.seed)?;
    Ok(if split == SplitArg::Train { train } else { test })
}

fn eval(cli: &Cli, a: &EvalArgs, pool: &ThreadPool) -> Result<bool> {
    let (model, meta) = load_model(&a.checkpoint)?;
    let set = dataset(&meta, &a.data, a.split)?;
    let report = evaluate(&model, &set, cli.seed.unwrap_or(meta.seed), pool)?;
    print_report(&cli.out, &report)?;
    Ok(true)
}

/// Outcome of voting over a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoteReport {
    pub n: usize,
    pub k: usize,
    pub t_eval: Option<usize>,
    /// Mean over candidates of single-pass accuracy.
    pub single_pass_accuracy: f64,
    pub vote_accuracy: f64,
    /// Every selected candidate had the minimum energy of its pool.
    pub selected_min_energy: bool,
    pub pass: bool,
}

/// Per-instance vote outcome as emitted by `wonn vote`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoteRecord {
    pub schema: u32,
    pub index: usize,
    pub selected_seed: u64,
    pub selected_energy: f64,
    /// Final energies in candidate (seed) order.
    pub energies: Vec<f64>,
    pub prediction: Vec<usize>,
    pub correct: bool,
    pub energy_convention: String,
}

/// How `final_energy` is computed, recorded with every vote.
pub const ENERGY_CONVENTION: &str = "-1/2 <sin(theta), C sin(theta)> at the final step; attentive C is the frozen attention operator, equivalent to its symmetrization";

pub fn vote_records(model: &Model, set: &[Instance], cfg: &VoteConfig, pool: &ThreadPool) -> Result<(VoteReport, Vec<VoteRecord>)> {
    cfg.validate()?;
    if set.is_empty() {
        return Err(WonnError::Precondition("no instances to vote on".into()));
    }
    let mut single = 0usize;
    let mut min_ok = true;
    let mut records = Vec::with_capacity(set.len());
    for (index, inst) in set.iter().enumerate() {
        let cands = sample_candidates(model, &inst.encode().input, cfg, pool)?;
        single += cands.iter().filter(|c| inst.score(&c.prediction)).count();
        let pick = energy_vote(&cands)?;
        min_ok &= cands.iter().all(|c| pick.final_energy <= c.final_energy);
        records.push(VoteRecord {
            schema: META_SCHEMA,
            index,
            selected_seed: pick.seed,
            selected_energy: pick.final_energy,
            energies: cands.iter().map(|c| c.final_energy).collect(),
            prediction: pick.prediction.clone(),
            correct: inst.score(&pick.prediction),
            energy_convention: ENERGY_CONVENTION.to_string(),
        });
    }
    let n = set.len();
    let voted = records.iter().filter(|r| r.correct).count();
    let report = VoteReport {
        n,
        k: cfg.k,
        t_eval: cfg.t_eval,
        single_pass_accuracy: single as f64 / (n * cfg.k) as f64,
        vote_accuracy: voted as f64 / n as f64,
        selected_min_energy: min_ok,
        pass: min_ok,
    };
    Ok((report, records))
}

pub fn vote_dataset(model: &Model, set: &[Instance], cfg: &VoteConfig, pool: &ThreadPool) -> Result<VoteReport> {
    Ok(vote_records(model, set, cfg, pool)?.0)
}

fn vote(cli: &Cli, a: &VoteArgs, pool: &ThreadPool) -> Result<bool> {
    let (model, meta) = load_model(&a.checkpoint)?;
    let mut set = dataset(&meta, &a.data, SplitArg::Test)?;
    if let Some(n) = a.limit {
        set.truncate(n);
    }
    let mut cfg = meta.config.vote;
    if let Some(k) = a.k {
        cfg.k = k;
    }
    if a.t_eval.is_some() {
        cfg.t_eval = a.t_eval;
    }
    if let Some(s) = cli.seed {
        cfg.base_seed = s;
    }
    let (report, records) = vote_records(&model, &set, &cfg, pool)?;
    let mut w = output(&cli.out)?;
    for r in &records {
        serde_json::to_writer(&mut w, r)?;
        writeln!(w)?;
    }
    serde_json::to_writer(&mut w, &report)?;
    writeln!(w)?;
    w.flush()?;
    Ok(report.pass)
}

fn gen_data(cli: &Cli) -> Result<bool> {
    let cfg = resolve_config(cli)?;
    let (train, test) = gen_datasets(&cfg.task, cfg.train.seed)?;
    let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("data"));
    std::fs::create_dir_all(&out)?;
    for (name, set) in [("train.jsonl", &train), ("test.jsonl", &test)] {
        let mut w = BufWriter::new(File::create(out.join(name))?);
        write_jsonl(set, &mut w)?;
        w.flush()?;
    }
    print_report(&None, &json!({"train": train.len(), "test": test.len(), "dir": out}))?;
    Ok(true)
}

fn diagnose(cli: &Cli, mode: &DiagMode) -> Result<bool> {
    let seed = seed_of(cli);
    match mode {
        DiagMode::Identities { samples, d } => report(cli, diag::identities(seed, *samples, *d)?),
        DiagMode::Lyapunov { d, runs, steps, gamma } => report(cli, diag::lyapunov(seed, *runs, *d, *gamma, *steps)?),
        DiagMode::Circulation { omega, loop_steps } => report(cli, diag::circulation(omega, *loop_steps)?),
        DiagMode::GradCheck { coords, checkpoint } => {
            let (model, task, data_seed) = match checkpoint {
                Some(p) => {
                    let (m, meta) = load_model(p)?;
                    (m, meta.config.task, meta.seed)
                }
                None => {
                    let cfg = resolve_config(cli)?;
                    (Model::new(cfg.model.clone(), seed)?, cfg.task, cfg.train.seed)
                }
            };
            let (train, _) = gen_datasets(&task, data_seed)?;
            let inst = train.first().ok_or_else(|| WonnError::config("task has an empty training split"))?;
            report(cli, diag::grad_check_model(&model, inst, seed, *coords)?)
        }
        DiagMode::Hist { checkpoint, bins, index } => {
            let (model, meta) = load_model(checkpoint)?;
            let (_, test) = gen_datasets(&meta.config.task, meta.seed)?;
            let inst = test
                .get(*index)
                .ok_or_else(|| WonnError::config(format!("index {index} outside the {}-instance test split", test.len())))?;
            report(cli, diag::hist(&model, inst, seed, *bins)?)
        }
    }
}

fn report<T: Serialize>(cli: &Cli, r: T) -> Result<bool> {
    print_report(&cli.out, &r)?;
    Ok(pass_of(&r))
}
