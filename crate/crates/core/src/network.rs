//! The layered network: patch embedding of the input into natural
//! frequencies, per-layer Winfree rollouts with shared parameters, the
//! atan2 phase transition and residual frequency transition between
//! layers, and a periodic read-out head.
//!
//! The forward pass is written once against the [`Tape`]; inference binds
//! parameters as constants, training binds them as differentiable leaves.

use crate::autodiff::{Gradients, Tape, Var};
use crate::coupling::{build_coupling, uniform_vec, CouplingConfig, CouplingKind, CouplingSpec, GroupSpec};
use crate::dynamics::{InteractionFns, ScalarMlp, TrajectoryRecord};
use crate::energy::coupling_energy;
use crate::error::{Result, WonnError};
use crate::phase::{wrap_unchecked, FieldShape, PhaseField};
use crate::rng::{normal_vec, stream};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InteractionConfig {
    Trig,
    Mlp { hidden: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum HeadConfig {
    Classifier { num_classes: usize },
    PerCell { num_labels: usize },
}

impl HeadConfig {
    pub fn outputs(&self) -> usize {
        match *self {
            HeadConfig::Classifier { num_classes } => num_classes,
            HeadConfig::PerCell { num_labels } => num_labels,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// `[h, w, c]` of one input.
    pub input_shape: [usize; 3],
    #[serde(default = "one")]
    pub input_patch_size: usize,
    pub layers: usize,
    /// Steps per layer, one entry per layer.
    pub steps: Vec<usize>,
    pub gamma: f64,
    #[serde(default = "one")]
    pub group_size: usize,
    pub channels: usize,
    /// Width after the mid-stack lift; `None` keeps the width constant.
    #[serde(default)]
    pub channels_out: Option<usize>,
    #[serde(default = "trig")]
    pub interaction: InteractionConfig,
    pub coupling: CouplingConfig,
    #[serde(default = "unit")]
    pub sigma_init: f64,
    pub head: HeadConfig,
    /// Add a learned per-position offset to the embedded frequencies.
    #[serde(default)]
    pub positional: bool,
}

fn one() -> usize {
    1
}
fn unit() -> f64 {
    1.0
}
fn trig() -> InteractionConfig {
    InteractionConfig::Trig
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let [h, w, c] = self.input_shape;
        let p = self.input_patch_size;
        if h == 0 || w == 0 || c == 0 {
            return Err(WonnError::config("input shape must be positive"));
        }
        if p == 0 || h % p != 0 || w % p != 0 {
            return Err(WonnError::config(format!("input {h}x{w} is not divisible into {p}x{p} patches")));
        }
        if self.layers == 0 {
            return Err(WonnError::config("need at least one layer"));
        }
        if self.steps.len() != self.layers {
            return Err(WonnError::config(format!("{} step counts given for {} layers", self.steps.len(), self.layers)));
        }
        if self.steps.contains(&0) {
            return Err(WonnError::config("every layer needs at least one step"));
        }
        if !(self.gamma > 0.0) || !self.gamma.is_finite() {
            return Err(WonnError::config(format!("gamma must be positive, got {}", self.gamma)));
        }
        if !(self.sigma_init >= 0.0) || !self.sigma_init.is_finite() {
            return Err(WonnError::config(format!("sigma_init must be non-negative, got {}", self.sigma_init)));
        }
        if self.channels == 0 || self.channels_out == Some(0) {
            return Err(WonnError::config("channel counts must be positive"));
        }
        if let InteractionConfig::Mlp { hidden: 0 } = self.interaction {
            return Err(WonnError::config("mlp hidden width must be positive"));
        }
        if self.head.outputs() < 2 {
            return Err(WonnError::config("head needs at least two outputs"));
        }
        let (gh, gw) = self.grid();
        GroupSpec::new(self.group_size).and_then(|g| g.check(gh, gw)).map_err(|e| WonnError::config(e.to_string()))?;
        if self.coupling.kind == CouplingKind::Stencil && self.coupling.kernel_size % 2 == 0 {
            return Err(WonnError::config("stencil kernel size must be odd"));
        }
        Ok(())
    }

    /// Oscillator grid `(h, w)` after patch embedding.
    pub fn grid(&self) -> (usize, usize) {
        (self.input_shape[0] / self.input_patch_size, self.input_shape[1] / self.input_patch_size)
    }

    pub fn positions(&self) -> usize {
        let (h, w) = self.grid();
        h * w
    }

    /// First (0-based) layer that runs at `channels_out` width.
    pub fn lift_layer(&self) -> usize {
        self.layers.div_ceil(2)
    }

    pub fn layer_channels(&self, l: usize) -> usize {
        match self.channels_out {
            Some(b) if l >= self.lift_layer() => b,
            _ => self.channels,
        }
    }

    pub fn oscillators(&self, l: usize) -> usize {
        self.positions() * self.layer_channels(l)
    }

    pub fn groups(&self) -> GroupSpec {
        GroupSpec { group_size: self.group_size }
    }
}

/// Named parameter tensors, kept in a sorted map so iteration order (and
/// therefore checkpoints and optimizer updates) is canonical.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ModelParams {
    pub tensors: BTreeMap<String, Tensor>,
}

impl ModelParams {
    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors.get(name).ok_or_else(|| WonnError::shape(format!("missing parameter {name}")))
    }

    pub fn count(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.values().all(Tensor::is_finite)
    }

    /// Check every expected tensor is present with the expected shape.
    pub fn check_against(&self, cfg: &ModelConfig) -> Result<()> {
        let reference = param_shapes(cfg);
        if reference.len() != self.tensors.len() {
            return Err(WonnError::shape(format!("expected {} tensors, found {}", reference.len(), self.tensors.len())));
        }
        for (name, shape) in reference {
            let t = self.get(&name)?;
            if t.shape != shape {
                return Err(WonnError::shape(format!("{name}: expected shape {shape:?}, found {:?}", t.shape)));
            }
        }
        Ok(())
    }
}

pub(crate) fn key(l: usize, s: &str) -> String {
    format!("l{l}.{s}")
}

fn param_shapes(cfg: &ModelConfig) -> BTreeMap<String, Vec<usize>> {
    let mut out = BTreeMap::new();
    let p = cfg.input_patch_size;
    let c0 = cfg.layer_channels(0);
    out.insert("embed.w".into(), vec![p * p * cfg.input_shape[2], c0]);
    out.insert("embed.b".into(), vec![c0]);
    if cfg.positional {
        out.insert("embed.pos".into(), vec![cfg.positions(), c0]);
    }
    let n = cfg.group_size;
    for l in 0..cfg.layers {
        let c = cfg.layer_channels(l);
        if let InteractionConfig::Mlp { hidden } = cfg.interaction {
            for f in ["s", "i"] {
                out.insert(key(l, &format!("{f}.w1")), vec![2, hidden]);
                out.insert(key(l, &format!("{f}.b1")), vec![hidden]);
                out.insert(key(l, &format!("{f}.w2")), vec![hidden, 1]);
                out.insert(key(l, &format!("{f}.b2")), vec![1]);
            }
            if n > 1 {
                out.insert(key(l, "patch.w"), vec![n * n * 2 * c, c]);
                out.insert(key(l, "patch.b"), vec![c]);
            }
        }
        match cfg.coupling.kind {
            CouplingKind::Dense => {
                let d = cfg.oscillators(l);
                out.insert(key(l, "c.dense"), vec![d, d]);
            }
            CouplingKind::Stencil => {
                let k = cfg.coupling.kernel_size;
                out.insert(key(l, "c.kernel"), vec![k, k, c, c]);
            }
            CouplingKind::Attentive => {
                out.insert(key(l, "c.wq"), vec![2 * c, c]);
                out.insert(key(l, "c.wk"), vec![2 * c, c]);
                out.insert(key(l, "c.wv"), vec![c, c]);
            }
        }
        if l + 1 < cfg.layers {
            let c2 = cfg.layer_channels(l + 1);
            out.insert(key(l, "theta.k"), vec![TRANSITION_KERNEL, TRANSITION_KERNEL, c, c2]);
            out.insert(key(l, "omega.w1"), vec![3 * c, c2]);
            out.insert(key(l, "omega.b1"), vec![c2]);
            out.insert(key(l, "omega.w2"), vec![c2, c2]);
            out.insert(key(l, "omega.b2"), vec![c2]);
            if c2 != c {
                out.insert(key(l, "omega.proj"), vec![c, c2]);
            }
        }
    }
    let cl = cfg.layer_channels(cfg.layers - 1);
    out.insert("head.w".into(), vec![2 * cl, cfg.head.outputs()]);
    out.insert("head.b".into(), vec![cfg.head.outputs()]);
    out
}

/// Side of the phase-transition convolution.
pub const TRANSITION_KERNEL: usize = 3;

/// Draw fresh parameters. Affine and convolution weights are uniform in
/// `+-1/sqrt(fan_in)` with zero biases; couplings follow the coupling
/// config; positional offsets are `N(0, 0.25)`.
pub fn init_params(cfg: &ModelConfig, seed: u64) -> Result<ModelParams> {
    cfg.validate()?;
    let mut rng = stream(seed, "params");
    let (h, w) = cfg.grid();
    let mut tensors = BTreeMap::new();
    for (name, shape) in param_shapes(cfg) {
        let n: usize = shape.iter().product();
        let fan_in = if shape.len() == 4 { shape[0] * shape[1] * shape[2] } else { shape[0] };
        let data = if name == "embed.pos" {
            normal_vec(&mut rng, n, 0.5)
        } else if name.ends_with(".b") || name.ends_with(".b1") || name.ends_with(".b2") {
            vec![0.0; n]
        } else if name.contains(".c.") {
            continue;
        } else {
            uniform_vec(&mut rng, n, 1.0 / (fan_in as f64).sqrt())
        };
        tensors.insert(name, Tensor::new(shape, data)?);
    }
    for l in 0..cfg.layers {
        let c = cfg.layer_channels(l);
        let mut crng = stream(seed, &format!("coupling{l}"));
        match build_coupling(&cfg.coupling, h, w, c, &mut crng)? {
            CouplingSpec::Dense { d, matrix } => {
                tensors.insert(key(l, "c.dense"), Tensor::new(vec![d, d], matrix)?);
            }
            CouplingSpec::Stencil { k, c_in, c_out, kernel } => {
                tensors.insert(key(l, "c.kernel"), Tensor::new(vec![k, k, c_in, c_out], kernel)?);
            }
            CouplingSpec::Attentive { channels, wq, wk, wv } => {
                tensors.insert(key(l, "c.wq"), Tensor::new(vec![2 * channels, channels], wq)?);
                tensors.insert(key(l, "c.wk"), Tensor::new(vec![2 * channels, channels], wk)?);
                tensors.insert(key(l, "c.wv"), Tensor::new(vec![channels, channels], wv)?);
            }
        }
    }
    let params = ModelParams { tensors };
    params.check_against(cfg)?;
    Ok(params)
}

/// Coupling of layer `l` as a standalone spec.
pub fn layer_coupling(params: &ModelParams, cfg: &ModelConfig, l: usize) -> Result<CouplingSpec> {
    let c = cfg.layer_channels(l);
    Ok(match cfg.coupling.kind {
        CouplingKind::Dense => CouplingSpec::Dense { d: cfg.oscillators(l), matrix: params.get(&key(l, "c.dense"))?.data.clone() },
        CouplingKind::Stencil => {
            let k = cfg.coupling.kernel_size;
            CouplingSpec::Stencil { k, c_in: c, c_out: c, kernel: params.get(&key(l, "c.kernel"))?.data.clone() }
        }
        CouplingKind::Attentive => CouplingSpec::Attentive {
            channels: c,
            wq: params.get(&key(l, "c.wq"))?.data.clone(),
            wk: params.get(&key(l, "c.wk"))?.data.clone(),
            wv: params.get(&key(l, "c.wv"))?.data.clone(),
        },
    })
}

/// Sensitivity/influence pair of layer `l`.
pub fn layer_interaction(params: &ModelParams, cfg: &ModelConfig, l: usize) -> Result<InteractionFns> {
    match cfg.interaction {
        InteractionConfig::Trig => Ok(InteractionFns::Trig),
        InteractionConfig::Mlp { .. } => {
            let mlp = |f: &str| -> Result<ScalarMlp> {
                Ok(ScalarMlp {
                    w1: params.get(&key(l, &format!("{f}.w1")))?.data.clone(),
                    b1: params.get(&key(l, &format!("{f}.b1")))?.data.clone(),
                    w2: params.get(&key(l, &format!("{f}.w2")))?.data.clone(),
                    b2: params.get(&key(l, &format!("{f}.b2")))?.data[0],
                })
            };
            let grouped = cfg.group_size > 1;
            Ok(InteractionFns::LearnedMlp {
                s: mlp("s")?,
                i: mlp("i")?,
                patch_w: if grouped { Some(params.get(&key(l, "patch.w"))?.data.clone()) } else { None },
                patch_b: if grouped { Some(params.get(&key(l, "patch.b"))?.data.clone()) } else { None },
            })
        }
    }
}

/// Parameters placed on a tape.
#[derive(Debug, Clone)]
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    pub fn new(tape: &mut Tape, params: &ModelParams, trainable: bool) -> Self {
        let vars = params
            .tensors
            .iter()
            .map(|(k, t)| (k.clone(), if trainable { tape.param(t.clone()) } else { tape.constant(t.clone()) }))
            .collect();
        Bound { vars }
    }

    pub fn var(&self, name: &str) -> Result<Var> {
        self.vars.get(name).copied().ok_or_else(|| WonnError::shape(format!("missing parameter {name}")))
    }

    /// Collect gradients in parameter order.
    pub fn gradients(&self, grads: &Gradients, params: &ModelParams) -> BTreeMap<String, Vec<f64>> {
        self.vars.iter().map(|(k, v)| (k.clone(), grads.get_or_zero(*v, params.tensors[k].len()))).collect()
    }
}

/// Phases and frequencies of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct DualState {
    pub theta: PhaseField,
    pub omega: Vec<f64>,
}

/// `N(0, sigma^2)` draws wrapped onto the circle, keyed by `seed`.
pub fn sample_theta(cfg: &ModelConfig, seed: u64) -> Vec<f64> {
    let mut rng = stream(seed, "theta_init");
    normal_vec(&mut rng, cfg.oscillators(0), cfg.sigma_init).into_iter().map(wrap_unchecked).collect()
}

fn check_input(cfg: &ModelConfig, input: &Tensor) -> Result<()> {
    if input.shape != cfg.input_shape {
        return Err(WonnError::shape(format!("input shape {:?}, model expects {:?}", input.shape, cfg.input_shape)));
    }
    Ok(())
}

fn embed(tape: &mut Tape, b: &Bound, cfg: &ModelConfig, input: &Tensor) -> Result<Var> {
    check_input(cfg, input)?;
    let [h, w, c] = cfg.input_shape;
    let x = tape.constant(input.clone());
    let patches = tape.patch_gather(x, h, w, c, cfg.input_patch_size);
    let proj = tape.matmul(patches, b.var("embed.w")?);
    let mut omega = tape.add_bias(proj, b.var("embed.b")?);
    if cfg.positional {
        omega = tape.add(omega, b.var("embed.pos")?);
    }
    Ok(omega)
}

/// `Omega = f_init(x)` and `Theta ~ N(0, sigma^2)` wrapped.
pub fn init_state(input: &Tensor, params: &ModelParams, cfg: &ModelConfig, seed: u64) -> Result<DualState> {
    let mut tape = Tape::new();
    let b = Bound::new(&mut tape, params, false);
    let omega = embed(&mut tape, &b, cfg, input)?;
    let (h, w) = cfg.grid();
    let theta = PhaseField::from_angles(FieldShape::Grid { h, w, c: cfg.layer_channels(0) }, sample_theta(cfg, seed))?;
    Ok(DualState { theta, omega: tape.value(omega).data.clone() })
}

fn scalar_mlp(tape: &mut Tape, b: &Bound, prefix: &str, s: Var, c: Var) -> Result<Var> {
    let shape = tape.value(s).shape.clone();
    let n = tape.value(s).len();
    let sc = tape.reshape(s, &[n, 1]);
    let cc = tape.reshape(c, &[n, 1]);
    let x = tape.concat(sc, cc);
    let h = tape.matmul(x, b.var(&format!("{prefix}.w1"))?);
    let h = tape.add_bias(h, b.var(&format!("{prefix}.b1"))?);
    let h = tape.tanh(h);
    let y = tape.matmul(h, b.var(&format!("{prefix}.w2"))?);
    let y = tape.add_bias(y, b.var(&format!("{prefix}.b2"))?);
    Ok(tape.reshape(y, &shape))
}

/// One discrete Winfree step of layer `l` on `[P, C]` phases.
fn winfree_step(tape: &mut Tape, b: &Bound, cfg: &ModelConfig, l: usize, theta: Var, omega: Var) -> Result<Var> {
    let (h, w) = cfg.grid();
    let c = cfg.layer_channels(l);
    let p = h * w;
    let n = cfg.group_size;
    let s = tape.sin(theta);
    let co = tape.cos(theta);
    let feats = tape.concat(s, co);
    let (influence, sensitivity) = match cfg.interaction {
        InteractionConfig::Trig => {
            let infl = if n == 1 {
                s
            } else {
                let m = tape.patch_mean(s, h, w, c, n);
                let bc = tape.patch_broadcast(m, h, w, c, n);
                tape.reshape(bc, &[p, c])
            };
            (infl, co)
        }
        InteractionConfig::Mlp { .. } => {
            let infl = if n == 1 {
                scalar_mlp(tape, b, &key(l, "i"), s, co)?
            } else {
                let g = tape.patch_gather(feats, h, w, 2 * c, n);
                let y = tape.matmul(g, b.var(&key(l, "patch.w"))?);
                let y = tape.add_bias(y, b.var(&key(l, "patch.b"))?);
                let bc = tape.patch_broadcast(y, h, w, c, n);
                tape.reshape(bc, &[p, c])
            };
            (infl, scalar_mlp(tape, b, &key(l, "s"), s, co)?)
        }
    };
    let coupled = match cfg.coupling.kind {
        CouplingKind::Dense => {
            let col = tape.reshape(influence, &[p * c, 1]);
            let y = tape.matmul(b.var(&key(l, "c.dense"))?, col);
            tape.reshape(y, &[p, c])
        }
        CouplingKind::Stencil => {
            let grid = tape.reshape(influence, &[h, w, c]);
            let y = tape.conv2d(grid, b.var(&key(l, "c.kernel"))?, h, w);
            tape.reshape(y, &[p, c])
        }
        CouplingKind::Attentive => {
            let q = tape.matmul(feats, b.var(&key(l, "c.wq"))?);
            let k = tape.matmul(feats, b.var(&key(l, "c.wk"))?);
            let scores = tape.matmul_t(q, k, false, true);
            let scores = tape.scale(scores, 1.0 / (c as f64).sqrt());
            let a = tape.softmax_rows(scores);
            let v = tape.matmul(influence, b.var(&key(l, "c.wv"))?);
            tape.matmul(a, v)
        }
    };
    let drive = tape.mul(sensitivity, coupled);
    let delta = tape.add(omega, drive);
    let step = tape.scale(delta, cfg.gamma);
    let moved = tape.add(theta, step);
    Ok(tape.wrap(moved))
}

fn theta_update(tape: &mut Tape, kernel: Var, theta: Var, h: usize, w: usize) -> Result<Var> {
    let c_in = tape.value(theta).rows_cols().1;
    let s = tape.sin(theta);
    let co = tape.cos(theta);
    let s = tape.reshape(s, &[h, w, c_in]);
    let co = tape.reshape(co, &[h, w, c_in]);
    let ys = tape.conv2d(s, kernel, h, w);
    let xs = tape.conv2d(co, kernel, h, w);
    let c_out = tape.value(ys).shape[2];
    let a = tape.atan2(ys, xs)?;
    let a = tape.wrap(a);
    Ok(tape.reshape(a, &[h * w, c_out]))
}

fn omega_update(tape: &mut Tape, b: &Bound, l: usize, omega: Var, theta: Var) -> Result<Var> {
    let s = tape.sin(theta);
    let co = tape.cos(theta);
    let z = tape.concat(omega, s);
    let z = tape.concat(z, co);
    let g = tape.matmul(z, b.var(&key(l, "omega.w1"))?);
    let g = tape.add_bias(g, b.var(&key(l, "omega.b1"))?);
    let g = tape.tanh(g);
    let g = tape.matmul(g, b.var(&key(l, "omega.w2"))?);
    let g = tape.add_bias(g, b.var(&key(l, "omega.b2"))?);
    let base = match b.var(&key(l, "omega.proj")) {
        Ok(proj) => tape.matmul(omega, proj),
        Err(_) => omega,
    };
    Ok(tape.add(base, g))
}

fn head(tape: &mut Tape, b: &Bound, cfg: &ModelConfig, theta: Var) -> Result<Var> {
    let s = tape.sin(theta);
    let co = tape.cos(theta);
    let feats = tape.concat(s, co);
    let feats = match cfg.head {
        HeadConfig::Classifier { .. } => {
            let m = tape.mean_rows(feats);
            let width = tape.value(m).len();
            tape.reshape(m, &[1, width])
        }
        HeadConfig::PerCell { .. } => feats,
    };
    let y = tape.matmul(feats, b.var("head.w")?);
    Ok(tape.add_bias(y, b.var("head.b")?))
}

/// Forward-pass options.
#[derive(Debug, Clone, Copy, Default)]
pub struct ForwardOptions {
    /// Replace the step count of the single dynamics layer.
    pub t_eval: Option<usize>,
    /// Record the interaction energy after every step, not only the last.
    pub energy_every_step: bool,
}

/// Handles into a tape after a forward pass.
#[derive(Debug, Clone)]
pub struct TapeForward {
    pub logits: Var,
    /// Phases after every dynamics step, in order, with their layer.
    pub thetas: Vec<(usize, Var)>,
    /// Frequencies used by each layer.
    pub omegas: Vec<Var>,
}

/// Record the full forward pass on `tape` starting from phases `theta0`.
pub fn forward_on_tape(
    tape: &mut Tape,
    b: &Bound,
    cfg: &ModelConfig,
    input: &Tensor,
    theta0: &[f64],
    opts: ForwardOptions,
) -> Result<TapeForward> {
    let (h, w) = cfg.grid();
    let p = h * w;
    if theta0.len() != cfg.oscillators(0) {
        return Err(WonnError::shape(format!("{} initial phases for {} oscillators", theta0.len(), cfg.oscillators(0))));
    }
    if opts.t_eval.is_some() && cfg.layers != 1 {
        return Err(WonnError::config("t_eval overrides need a single dynamics layer"));
    }
    let mut omega = embed(tape, b, cfg, input)?;
    let mut theta = tape.constant(Tensor::new(vec![p, cfg.layer_channels(0)], theta0.to_vec())?);
    let mut thetas = Vec::new();
    let mut omegas = Vec::new();
    for l in 0..cfg.layers {
        omegas.push(omega);
        let steps = opts.t_eval.unwrap_or(cfg.steps[l]);
        for t in 0..steps {
            theta = winfree_step(tape, b, cfg, l, theta, omega)?;
            if !tape.value(theta).is_finite() {
                return Err(WonnError::numeric(format!("non-finite phases in layer {l}, step {}", t + 1)));
            }
            thetas.push((l, theta));
        }
        if l + 1 < cfg.layers {
            let next = theta_update(tape, b.var(&key(l, "theta.k"))?, theta, h, w)?;
            omega = omega_update(tape, b, l, omega, theta)?;
            if !tape.value(omega).is_finite() {
                return Err(WonnError::numeric(format!("non-finite frequencies after layer {l}")));
            }
            theta = next;
        }
    }
    let logits = head(tape, b, cfg, theta)?;
    if !tape.value(logits).is_finite() {
        return Err(WonnError::numeric("non-finite logits"));
    }
    Ok(TapeForward { logits, thetas, omegas })
}

/// Result of [`wonn_forward`].
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    /// `[1, classes]` for a classifier, `[h*w, labels]` per cell.
    pub logits: Tensor,
    pub trajectory: TrajectoryRecord,
    /// Frequencies of each layer, flattened.
    pub omegas: Vec<Vec<f64>>,
    /// Interaction energy of the final phases under the last layer's coupling.
    pub final_energy: f64,
}

impl ForwardOutput {
    /// Row-wise argmax of the logits.
    pub fn predictions(&self) -> Vec<usize> {
        argmax_rows(&self.logits)
    }
}

pub fn argmax_rows(t: &Tensor) -> Vec<usize> {
    let (_, n) = t.rows_cols();
    t.data
        .chunks(n)
        .map(|row| row.iter().enumerate().fold(0, |best, (i, v)| if *v > row[best] { i } else { best }))
        .collect()
}

fn layer_field(cfg: &ModelConfig, l: usize, data: &[f64]) -> Result<PhaseField> {
    let (h, w) = cfg.grid();
    PhaseField::from_angles(FieldShape::Grid { h, w, c: cfg.layer_channels(l) }, data.to_vec())
}

/// Full forward pass with `Theta_init` drawn from `seed`.
pub fn wonn_forward(input: &Tensor, params: &ModelParams, cfg: &ModelConfig, seed: u64) -> Result<ForwardOutput> {
    wonn_forward_with(input, params, cfg, seed, ForwardOptions::default())
}

pub fn wonn_forward_with(
    input: &Tensor,
    params: &ModelParams,
    cfg: &ModelConfig,
    seed: u64,
    opts: ForwardOptions,
) -> Result<ForwardOutput> {
    let mut tape = Tape::new();
    let b = Bound::new(&mut tape, params, false);
    let theta0 = sample_theta(cfg, seed);
    let fwd = forward_on_tape(&mut tape, &b, cfg, input, &theta0, opts)?;
    let couplings = (0..cfg.layers).map(|l| layer_coupling(params, cfg, l)).collect::<Result<Vec<_>>>()?;
    let mut trajectory = TrajectoryRecord::default();
    let last = fwd.thetas.len();
    let mut final_energy = 0.0;
    for (step, (l, v)) in fwd.thetas.iter().enumerate() {
        let theta = &tape.value(*v).data;
        let energy = if opts.energy_every_step || step + 1 == last {
            let e = coupling_energy(&couplings[*l], &layer_field(cfg, *l, theta)?)?;
            final_energy = e;
            Some(e)
        } else {
            None
        };
        trajectory.push(step + 1, theta, energy)?;
    }
    Ok(ForwardOutput {
        logits: tape.value(fwd.logits).clone(),
        trajectory,
        omegas: fwd.omegas.iter().map(|v| tape.value(*v).data.clone()).collect(),
        final_energy,
    })
}

/// Phase transition between layers:
/// `atan2(conv(sin theta), conv(cos theta))` with one shared kernel
/// `[k, k, c_in, c_out]`.
pub fn theta_transition(theta: &PhaseField, kernel: &Tensor) -> Result<PhaseField> {
    let FieldShape::Grid { h, w, c } = theta.shape() else {
        return Err(WonnError::shape("phase transition needs a grid-shaped field"));
    };
    if kernel.rank() != 4 || kernel.shape[2] != c || kernel.shape[0] % 2 == 0 {
        return Err(WonnError::shape(format!("kernel {:?} does not fit {c} channels", kernel.shape)));
    }
    let mut tape = Tape::new();
    let k = tape.constant(kernel.clone());
    let th = tape.constant(Tensor::new(vec![h * w, c], theta.as_slice().to_vec())?);
    let out = theta_update(&mut tape, k, th, h, w)?;
    PhaseField::from_angles(FieldShape::Grid { h, w, c: kernel.shape[3] }, tape.value(out).data.clone())
}

/// Residual frequency transition of layer `l`:
/// `Omega' = P Omega + W2 tanh(W1 [Omega; sin theta; cos theta] + b1) + b2`,
/// where `P` is the identity unless the layer changes width.
pub fn omega_transition(omega: &[f64], theta: &PhaseField, params: &ModelParams, cfg: &ModelConfig, l: usize) -> Result<Vec<f64>> {
    if l + 1 >= cfg.layers {
        return Err(WonnError::domain(format!("layer {l} has no outgoing transition")));
    }
    let p = cfg.positions();
    let c = cfg.layer_channels(l);
    if omega.len() != p * c || theta.len() != p * c {
        return Err(WonnError::shape("omega/theta do not match the layer width"));
    }
    let mut tape = Tape::new();
    let b = Bound::new(&mut tape, params, false);
    let om = tape.constant(Tensor::new(vec![p, c], omega.to_vec())?);
    let th = tape.constant(Tensor::new(vec![p, c], theta.as_slice().to_vec())?);
    let out = omega_update(&mut tape, &b, l, om, th)?;
    Ok(tape.value(out).data.clone())
}

/// Read-out on `(sin theta, cos theta)` of the final phases.
pub fn output_head(theta: &PhaseField, params: &ModelParams, cfg: &ModelConfig) -> Result<Tensor> {
    let cl = cfg.layer_channels(cfg.layers - 1);
    let p = cfg.positions();
    if theta.len() != p * cl {
        return Err(WonnError::shape("final phases do not match the last layer"));
    }
    let mut tape = Tape::new();
    let b = Bound::new(&mut tape, params, false);
    let th = tape.constant(Tensor::new(vec![p, cl], theta.as_slice().to_vec())?);
    let y = head(&mut tape, &b, cfg, th)?;
    Ok(tape.value(y).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coupling::CouplingInit;
    use crate::dynamics::{discrete_step, winfree_rhs};
    use crate::phase::embed_circle;
    use rand::Rng;

    fn cfg(kind: CouplingKind, interaction: InteractionConfig, n: usize) -> ModelConfig {
        ModelConfig {
            input_shape: [4, 4, 3],
            input_patch_size: 1,
            layers: 1,
            steps: vec![1],
            gamma: 0.3,
            group_size: n,
            channels: 3,
            channels_out: None,
            interaction,
            coupling: CouplingConfig::new(kind),
            sigma_init: 1.0,
            head: HeadConfig::PerCell { num_labels: 2 },
            positional: false,
        }
    }

    fn input(c: &ModelConfig, seed: u64) -> Tensor {
        let mut rng = stream(seed, "input");
        let [h, w, ch] = c.input_shape;
        Tensor::new(vec![h, w, ch], (0..h * w * ch).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn tape_step_matches_reference_dynamics() {
        for kind in [CouplingKind::Dense, CouplingKind::Stencil, CouplingKind::Attentive] {
            for inter in [InteractionConfig::Trig, InteractionConfig::Mlp { hidden: 5 }] {
                for n in [1, 2] {
                    let c = cfg(kind, inter, n);
                    let params = init_params(&c, 3).unwrap();
                    let x = input(&c, 4);
                    let state = init_state(&x, &params, &c, 9).unwrap();
                    let fns = layer_interaction(&params, &c, 0).unwrap();
                    let spec = layer_coupling(&params, &c, 0).unwrap();
                    let rhs = winfree_rhs(&state.theta, &state.omega, &fns, &spec, c.groups()).unwrap();
                    let expect = discrete_step(&state.theta, &rhs, c.gamma).unwrap();
                    let out = wonn_forward(&x, &params, &c, 9).unwrap();
                    let got = out.trajectory.last_theta().unwrap();
                    let err = got.iter().zip(expect.as_slice()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                    assert!(err < 1e-12, "{kind:?} {inter:?} n={n}: {err}");
                }
            }
        }
    }

    #[test]
    fn sigma_zero_and_seed_determinism() {
        let mut c = cfg(CouplingKind::Attentive, InteractionConfig::Trig, 1);
        let params = init_params(&c, 1).unwrap();
        let x = input(&c, 2);
        let a = init_state(&x, &params, &c, 5).unwrap();
        let b = init_state(&x, &params, &c, 5).unwrap();
        assert_eq!(a, b);
        c.sigma_init = 0.0;
        assert!(init_state(&x, &params, &c, 5).unwrap().theta.as_slice().iter().all(|t| *t == 0.0));
    }

    #[test]
    fn patch_embedding_shape() {
        let mut c = cfg(CouplingKind::Stencil, InteractionConfig::Trig, 1);
        c.input_shape = [28, 28, 1];
        c.input_patch_size = 7;
        c.channels = 16;
        let params = init_params(&c, 1).unwrap();
        let x = Tensor::zeros(&[28, 28, 1]);
        let s = init_state(&x, &params, &c, 0).unwrap();
        assert_eq!(s.theta.shape(), FieldShape::Grid { h: 4, w: 4, c: 16 });
        assert_eq!(s.omega.len(), 4 * 4 * 16);
    }

    #[test]
    fn identity_dynamics_gives_head_of_initial_phases() {
        let mut c = cfg(CouplingKind::Dense, InteractionConfig::Trig, 1);
        c.coupling.init = CouplingInit::Zero;
        let mut params = init_params(&c, 1).unwrap();
        for name in ["embed.w", "embed.b"] {
            params.tensors.get_mut(name).unwrap().data.iter_mut().for_each(|v| *v = 0.0);
        }
        let x = input(&c, 2);
        let out = wonn_forward(&x, &params, &c, 6).unwrap();
        let (h, w) = c.grid();
        let th0 = PhaseField::from_angles(FieldShape::Grid { h, w, c: 3 }, sample_theta(&c, 6)).unwrap();
        let direct = output_head(&th0, &params, &c).unwrap();
        assert!(out.logits.max_abs_diff(&direct) < 1e-15);
    }

    #[test]
    fn theta_transition_identity_and_scale() {
        let c = 3;
        let mut k = Tensor::zeros(&[3, 3, c, c]);
        (0..c).for_each(|i| k.data[(4 * c + i) * c + i] = 1.0);
        let mut rng = stream(3, "t");
        let th = PhaseField::from_angles(FieldShape::Grid { h: 4, w: 5, c }, (0..60).map(|_| rng.gen_range(-3.0..3.0)).collect()).unwrap();
        let out = theta_transition(&th, &k).unwrap();
        let err = out.as_slice().iter().zip(th.as_slice()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-14);
        let rnd = Tensor::new(vec![3, 3, c, c], (0..81).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let base = theta_transition(&th, &rnd).unwrap();
        for s in [2.0, 0.5] {
            let scaled = Tensor { shape: rnd.shape.clone(), data: rnd.data.iter().map(|v| v * s).collect() };
            let out = theta_transition(&th, &scaled).unwrap();
            let err = out.as_slice().iter().zip(base.as_slice()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(err < 1e-12);
        }
    }

    #[test]
    fn omega_transition_residual_identity() {
        let mut c = cfg(CouplingKind::Stencil, InteractionConfig::Trig, 1);
        c.layers = 2;
        c.steps = vec![1, 1];
        let mut params = init_params(&c, 1).unwrap();
        for name in ["l0.omega.w2", "l0.omega.b2"] {
            params.tensors.get_mut(name).unwrap().data.iter_mut().for_each(|v| *v = 0.0);
        }
        let x = input(&c, 2);
        let s = init_state(&x, &params, &c, 1).unwrap();
        assert_eq!(omega_transition(&s.omega, &s.theta, &params, &c, 0).unwrap(), s.omega);
    }

    #[test]
    fn per_cell_head_is_translation_symmetric() {
        let c = cfg(CouplingKind::Stencil, InteractionConfig::Trig, 1);
        let params = init_params(&c, 1).unwrap();
        let th = PhaseField::constant(FieldShape::Grid { h: 4, w: 4, c: 3 }, 0.4).unwrap();
        let y = output_head(&th, &params, &c).unwrap();
        assert_eq!(y.shape, vec![16, 2]);
        assert!(y.data.chunks(2).all(|r| r == &y.data[..2]));
        let mut cc = c.clone();
        cc.head = HeadConfig::Classifier { num_classes: 5 };
        let p2 = init_params(&cc, 1).unwrap();
        assert_eq!(output_head(&th, &p2, &cc).unwrap().len(), 5);
    }

    #[test]
    fn parameter_count_is_independent_of_steps() {
        let mut c = cfg(CouplingKind::Attentive, InteractionConfig::Mlp { hidden: 4 }, 2);
        let a = init_params(&c, 1).unwrap().count();
        c.steps = vec![9];
        assert_eq!(init_params(&c, 1).unwrap().count(), a);
    }

    #[test]
    fn omega_is_constant_within_a_layer() {
        let mut c = cfg(CouplingKind::Stencil, InteractionConfig::Trig, 1);
        c.layers = 3;
        c.steps = vec![2, 3, 2];
        c.channels_out = Some(5);
        let params = init_params(&c, 2).unwrap();
        let out = wonn_forward(&input(&c, 1), &params, &c, 3).unwrap();
        assert_eq!(out.trajectory.len(), 7);
        assert_eq!(out.omegas.len(), 3);
        assert_eq!(out.omegas[2].len(), 16 * 5);
        assert_ne!(out.omegas[0], out.omegas[1][..48]);
    }

    #[test]
    fn embed_matches_circle_embedding() {
        let c = cfg(CouplingKind::Attentive, InteractionConfig::Trig, 1);
        let params = init_params(&c, 1).unwrap();
        let s = init_state(&input(&c, 1), &params, &c, 1).unwrap();
        let e = embed_circle(&s.theta);
        assert!(e.sin_part.iter().zip(&e.cos_part).all(|(a, b)| (a * a + b * b - 1.0).abs() < 1e-12));
    }
}
