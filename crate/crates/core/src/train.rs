//! Losses, finite-difference gradient checks, training epochs and
//! evaluation.

use crate::autodiff::Tape;
use crate::energy::coupling_energy;
use crate::error::{Result, WonnError};
use crate::phase::{FieldShape, PhaseField};
use crate::network::{forward_on_tape, init_params, sample_theta, wonn_forward, Bound, ForwardOptions, ModelConfig, ModelParams};
use crate::optim::{clip_global_norm, optimizer_step, AdamConfig, OptimizerState, Schedule};
use crate::rng::{child_seed, stream};
use crate::tasks::{Example, Instance};
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use rayon::ThreadPool;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Parameters plus the config that shapes them.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub cfg: ModelConfig,
    pub params: ModelParams,
}

impl Model {
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        let mut params = init_params(&cfg, seed)?;
        round_to_f32(&mut params);
        Ok(Model { cfg, params })
    }
}

/// Keep parameters on the `f32` grid so checkpoints store them in the
/// compact dtype without losing bits.
pub fn round_to_f32(params: &mut ModelParams) {
    for t in params.tensors.values_mut() {
        t.data.iter_mut().for_each(|v| *v = *v as f32 as f64);
    }
}

/// The `"train"` section of a run config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub schedule: Schedule,
    #[serde(default)]
    pub weight_decay: f64,
    #[serde(default = "clip")]
    pub clip_norm: f64,
    /// Apply a random task symmetry to every training example.
    #[serde(default)]
    pub augment: bool,
    /// Evaluate on the test split every this many epochs; 0 never.
    #[serde(default)]
    pub eval_every: usize,
    /// Unroll each training example for `T + u` steps with `u` drawn
    /// uniformly from `0..=extra_steps`. Single dynamics layer only.
    #[serde(default)]
    pub extra_steps: usize,
}

fn clip() -> f64 {
    10.0
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 {
            return Err(WonnError::config("batch must be positive"));
        }
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(WonnError::config(format!("learning rate must be non-negative, got {}", self.lr)));
        }
        if !(self.clip_norm > 0.0) {
            return Err(WonnError::config("clip_norm must be positive"));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(WonnError::config("weight_decay must be non-negative"));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig { weight_decay: self.weight_decay, ..AdamConfig::new(self.lr) }
    }
}

/// Loss, gradients and diagnostics for one example.
#[derive(Debug, Clone)]
pub struct ExampleGrad {
    pub loss: f64,
    pub grads: BTreeMap<String, Vec<f64>>,
    pub predictions: Vec<usize>,
    /// Phases after the last dynamics step.
    pub final_theta: Vec<f64>,
}

/// Masked softmax cross-entropy of one example, starting from phases
/// `theta0`.
pub fn example_loss(model: &Model, ex: &Example, theta0: &[f64]) -> Result<f64> {
    let mut tape = Tape::new();
    let b = Bound::new(&mut tape, &model.params, false);
    let fwd = forward_on_tape(&mut tape, &b, &model.cfg, &ex.input, theta0, ForwardOptions::default())?;
    let loss = tape.cross_entropy(fwd.logits, &ex.targets, &ex.mask)?;
    Ok(tape.value(loss).data[0])
}

/// Reverse-mode gradients of [`example_loss`].
pub fn example_grad(model: &Model, ex: &Example, theta0: &[f64]) -> Result<ExampleGrad> {
    example_grad_with(model, ex, theta0, ForwardOptions::default())
}

/// [`example_grad`] with explicit forward options.
pub fn example_grad_with(model: &Model, ex: &Example, theta0: &[f64], opts: ForwardOptions) -> Result<ExampleGrad> {
    let mut tape = Tape::new();
    let b = Bound::new(&mut tape, &model.params, true);
    let fwd = forward_on_tape(&mut tape, &b, &model.cfg, &ex.input, theta0, opts)?;
    let predictions = crate::network::argmax_rows(tape.value(fwd.logits));
    let (_, last) = *fwd.thetas.last().expect("at least one step");
    let final_theta = tape.value(last).data.clone();
    let loss = tape.cross_entropy(fwd.logits, &ex.targets, &ex.mask)?;
    let g = tape.backward(loss)?;
    Ok(ExampleGrad { loss: tape.value(loss).data[0], grads: b.gradients(&g, &model.params), predictions, final_theta })
}

/// Result of comparing reverse-mode gradients with central differences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_err: f64,
    pub worst: String,
    pub h: f64,
}

/// Relative error with a floor on the denominator so coordinates whose
/// true gradient is numerically zero are judged on absolute error.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Central differences with step `h` on `coords` sampled parameter
/// coordinates (every coordinate if the model is smaller).
pub fn grad_check(model: &Model, ex: &Example, theta_seed: u64, h: f64, coords: usize, pick_seed: u64) -> Result<GradCheckReport> {
    let theta0 = sample_theta(&model.cfg, theta_seed);
    let analytic = example_grad(model, ex, &theta0)?.grads;
    let all: Vec<(String, usize)> =
        model.params.tensors.iter().flat_map(|(k, t)| (0..t.len()).map(move |i| (k.clone(), i))).collect();
    let chosen: Vec<(String, usize)> = if all.len() <= coords {
        all
    } else {
        let mut rng = stream(pick_seed, "grad_check");
        all.choose_multiple(&mut rng, coords).cloned().collect()
    };
    let mut probe = model.clone();
    let mut worst = (0.0, String::new());
    for (name, i) in &chosen {
        let orig = model.params.tensors[name].data[*i];
        probe.params.tensors.get_mut(name).unwrap().data[*i] = orig + h;
        let up = example_loss(&probe, ex, &theta0)?;
        probe.params.tensors.get_mut(name).unwrap().data[*i] = orig - h;
        let down = example_loss(&probe, ex, &theta0)?;
        probe.params.tensors.get_mut(name).unwrap().data[*i] = orig;
        let numeric = (up - down) / (2.0 * h);
        let e = rel_err(analytic[name][*i], numeric);
        if e > worst.0 || worst.1.is_empty() {
            worst = (e, format!("{name}[{i}]"));
        }
    }
    Ok(GradCheckReport { checked: chosen.len(), max_rel_err: worst.0, worst: worst.1, h })
}

/// One line of the metrics stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
    pub energy_mean: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_accuracy: Option<f64>,
}

/// Trainer state carried across epochs.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub cfg: TrainConfig,
    pub optimizer: OptimizerState,
    pub steps_per_epoch: u64,
}

impl Trainer {
    pub fn new(cfg: TrainConfig, model: &Model, train_size: usize) -> Result<Self> {
        cfg.validate()?;
        if train_size == 0 {
            return Err(WonnError::Precondition("training set is empty".into()));
        }
        let optimizer = OptimizerState::new(cfg.adam(), &model.params);
        Ok(Trainer { steps_per_epoch: train_size.div_ceil(cfg.batch) as u64, cfg, optimizer })
    }

    fn total_steps(&self) -> u64 {
        self.steps_per_epoch * self.cfg.epochs as u64
    }
}

/// Seed of `Theta_init` for training example `position` of `epoch`.
pub fn train_theta_seed(seed: u64, epoch: usize, position: usize) -> u64 {
    child_seed(seed, &format!("theta/{epoch}"), position as u64)
}

/// One pass over `data` in a seed-determined order. Per-example gradients
/// are computed on `pool` and reduced in example order, so the result
/// does not depend on the number of workers.
pub fn train_epoch(model: &mut Model, trainer: &mut Trainer, data: &[Instance], epoch: usize, pool: &ThreadPool) -> Result<EpochMetrics> {
    if data.is_empty() {
        return Err(WonnError::Precondition("training set is empty".into()));
    }
    let seed = trainer.cfg.seed;
    let extra = trainer.cfg.extra_steps;
    if extra > 0 && model.cfg.layers != 1 {
        return Err(WonnError::config("extra_steps needs a single dynamics layer"));
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut stream(child_seed(seed, "shuffle", epoch as u64), "shuffle"));
    let mut loss_sum = 0.0;
    let mut correct = 0usize;
    let mut energy_sum = 0.0;
    for (bi, batch) in order.chunks(trainer.cfg.batch).enumerate() {
        let results: Vec<Result<(ExampleGrad, bool, f64)>> = pool.install(|| {
            batch
                .par_iter()
                .enumerate()
                .map(|(j, &idx)| {
                    let position = bi * trainer.cfg.batch + j;
                    let inst = if trainer.cfg.augment {
                        let mut rng = stream(child_seed(seed, &format!("augment/{epoch}"), position as u64), "augment");
                        data[idx].augment(&mut rng)
                    } else {
                        data[idx].clone()
                    };
                    let ex = inst.encode();
                    let theta0 = sample_theta(&model.cfg, train_theta_seed(seed, epoch, position));
                    let mut opts = ForwardOptions::default();
                    if extra > 0 {
                        let u = stream(child_seed(seed, &format!("unroll/{epoch}"), position as u64), "unroll").gen_range(0..=extra);
                        opts.t_eval = Some(model.cfg.steps[0] + u);
                    }
                    let g = example_grad_with(model, &ex, &theta0, opts)?;
                    let ok = inst.score(&g.predictions);
                    let energy = final_energy(model, &g.final_theta)?;
                    Ok((g, ok, energy))
                })
                .collect()
        });
        let mut sum: BTreeMap<String, Vec<f64>> =
            model.params.tensors.iter().map(|(k, t)| (k.clone(), vec![0.0; t.len()])).collect();
        let n = batch.len() as f64;
        for r in results {
            let (g, ok, energy) = r?;
            loss_sum += g.loss;
            correct += usize::from(ok);
            energy_sum += energy;
            for (k, v) in g.grads {
                sum.get_mut(&k).expect("same parameter set").iter_mut().zip(v).for_each(|(s, x)| *s += x / n);
            }
        }
        clip_global_norm(&mut sum, trainer.cfg.clip_norm);
        let lr = trainer.cfg.schedule.lr(trainer.cfg.lr, trainer.optimizer.step, trainer.total_steps());
        if lr > 0.0 {
            optimizer_step(&mut model.params, &sum, &mut trainer.optimizer, lr)?;
            round_to_f32(&mut model.params);
        }
    }
    let n = data.len() as f64;
    Ok(EpochMetrics {
        epoch,
        loss: loss_sum / n,
        accuracy: correct as f64 / n,
        energy_mean: energy_sum / n,
        test_accuracy: None,
    })
}

/// Interaction energy of last-layer phases under that layer's coupling.
pub fn final_energy(model: &Model, theta: &[f64]) -> Result<f64> {
    let l = model.cfg.layers - 1;
    let spec = crate::network::layer_coupling(&model.params, &model.cfg, l)?;
    let (h, w) = model.cfg.grid();
    let field = PhaseField::from_angles(FieldShape::Grid { h, w, c: model.cfg.layer_channels(l) }, theta.to_vec())?;
    coupling_energy(&spec, &field)
}

/// Accuracy report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    pub correct: usize,
    pub accuracy: f64,
    pub energy_mean: f64,
}

/// Seed of `Theta_init` for evaluation example `i`.
pub fn eval_theta_seed(seed: u64, i: usize) -> u64 {
    child_seed(seed, "eval", i as u64)
}

/// Fraction of instances solved by a single forward pass each.
pub fn evaluate(model: &Model, data: &[Instance], seed: u64, pool: &ThreadPool) -> Result<EvalReport> {
    if data.is_empty() {
        return Err(WonnError::Precondition("evaluation set is empty".into()));
    }
    let results: Vec<Result<(bool, f64)>> = pool.install(|| {
        data.par_iter()
            .enumerate()
            .map(|(i, inst)| {
                let ex = inst.encode();
                let out = wonn_forward(&ex.input, &model.params, &model.cfg, eval_theta_seed(seed, i))?;
                Ok((inst.score(&out.predictions()), out.final_energy))
            })
            .collect()
    });
    let mut correct = 0;
    let mut energy = 0.0;
    for r in results {
        let (ok, e) = r?;
        correct += usize::from(ok);
        energy += e;
    }
    Ok(EvalReport { n: data.len(), correct, accuracy: correct as f64 / data.len() as f64, energy_mean: energy / data.len() as f64 })
}

/// Thread pool with exactly `workers` threads.
pub fn pool(workers: usize) -> Result<ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| WonnError::config(format!("cannot start {workers} workers: {e}")))
}

/// Random index into `0..n` drawn from a named stream; used by callers that
/// need a reproducible example choice.
pub fn pick(seed: u64, purpose: &str, n: usize) -> usize {
    stream(seed, purpose).gen_range(0..n)
}

/// Everything a finished run produces.
#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub model: Model,
    pub metrics: Vec<EpochMetrics>,
}

/// Initialize from `seed` and train for `cfg.epochs` epochs, evaluating
/// on `test` every `cfg.eval_every` epochs and after the last one.
/// `on_epoch` sees each metrics record as soon as it exists.
pub fn fit<F: FnMut(&EpochMetrics) -> Result<()>>(
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    train: &[Instance],
    test: &[Instance],
    pool: &ThreadPool,
    mut on_epoch: F,
) -> Result<FitOutcome> {
    model_cfg.validate()?;
    let mut model = Model::new(model_cfg.clone(), child_seed(cfg.seed, "init", 0))?;
    let mut trainer = Trainer::new(cfg.clone(), &model, train.len())?;
    let mut metrics = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut m = train_epoch(&mut model, &mut trainer, train, epoch, pool)?;
        let last = epoch + 1 == cfg.epochs;
        if !test.is_empty() && ((cfg.eval_every > 0 && (epoch + 1) % cfg.eval_every == 0) || last) {
            m.test_accuracy = Some(evaluate(&model, test, cfg.seed, pool)?.accuracy);
        }
        on_epoch(&m)?;
        metrics.push(m);
    }
    Ok(FitOutcome { model, metrics })
}
