//! Phase dynamics: classical Kuramoto, the symmetry-breaking generalized
//! Winfree field, the separable Winfree field used by the network, the
//! discrete wrapped step and an RK4 reference integrator.

use crate::coupling::{apply_coupling, partition_groups, patch_influence, CouplingSpec, GroupSpec};
use crate::energy::coupling_energy;
use crate::error::{Result, WonnError};
use crate::phase::{embed_circle, order_parameter, wrap_unchecked, FieldShape, PhaseField};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::io::Write;

/// Scalar parameters of the classical presets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DynamicsParams {
    pub gamma: f64,
    #[serde(default)]
    pub kappa: f64,
    #[serde(default)]
    pub q: f64,
    pub steps: usize,
}

impl DynamicsParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0) || !self.gamma.is_finite() {
            return Err(WonnError::domain(format!("gamma must be positive, got {}", self.gamma)));
        }
        if self.steps == 0 {
            return Err(WonnError::domain("need at least one step"));
        }
        if self.kappa < 0.0 {
            return Err(WonnError::domain("kappa must be non-negative"));
        }
        Ok(())
    }
}

/// Two-layer perceptron `R^2 -> R` evaluated on `(sin theta, cos theta)`:
/// `w2 . tanh(W1^T [s, c] + b1) + b2`. `w1` is `[2, hidden]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarMlp {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
}

impl ScalarMlp {
    pub fn hidden(&self) -> usize {
        self.b1.len()
    }

    pub fn eval(&self, theta: f64) -> f64 {
        let (s, c) = theta.sin_cos();
        let h = self.hidden();
        (0..h)
            .map(|j| self.w2[j] * (s * self.w1[j] + c * self.w1[h + j] + self.b1[j]).tanh())
            .sum::<f64>()
            + self.b2
    }
}

/// Sensitivity `S` and influence `I`.
#[derive(Debug, Clone, PartialEq)]
pub enum InteractionFns {
    /// `S = cos`, `I = sin`; grouped influence is the patch mean of `sin`.
    Trig,
    /// Learned pointwise maps; grouped influence is an affine map of the
    /// patch's concatenated `(sin, cos)` values (`patch_w` is
    /// `[n*n*2C, C]`, used only when the group size exceeds 1).
    LearnedMlp { s: ScalarMlp, i: ScalarMlp, patch_w: Option<Vec<f64>>, patch_b: Option<Vec<f64>> },
}

impl InteractionFns {
    pub fn sensitivity(&self, theta: f64) -> f64 {
        match self {
            InteractionFns::Trig => theta.cos(),
            InteractionFns::LearnedMlp { s, .. } => s.eval(theta),
        }
    }

    pub fn influence(&self, theta: f64) -> f64 {
        match self {
            InteractionFns::Trig => theta.sin(),
            InteractionFns::LearnedMlp { i, .. } => i.eval(theta),
        }
    }

    /// Influence field (before coupling) of an `[h, w, c]` phase tensor.
    pub fn influence_field(&self, theta: &Tensor, groups: GroupSpec) -> Result<Tensor> {
        let n = groups.group_size;
        if n == 1 {
            return Ok(Tensor { shape: theta.shape.clone(), data: theta.data.iter().map(|&t| self.influence(t)).collect() });
        }
        let (h, w, c) = crate::coupling::grid_dims(theta)?;
        let patches = partition_groups(theta, groups)?;
        match self {
            InteractionFns::Trig => patch_influence(&patches, h, w, groups, c, |p| {
                let mut mean = vec![0.0; c];
                for cell in p.data.chunks(c) {
                    mean.iter_mut().zip(cell).for_each(|(m, t)| *m += t.sin());
                }
                mean.iter_mut().for_each(|m| *m /= (n * n) as f64);
                mean
            }),
            InteractionFns::LearnedMlp { patch_w, patch_b, .. } => {
                let (Some(pw), Some(pb)) = (patch_w, patch_b) else {
                    return Err(WonnError::shape("grouped learned influence needs patch weights"));
                };
                let f = n * n * 2 * c;
                if pw.len() != f * c || pb.len() != c {
                    return Err(WonnError::shape("patch influence weights have the wrong shape"));
                }
                patch_influence(&patches, h, w, groups, c, |p| {
                    let mut feats = Vec::with_capacity(f);
                    for cell in p.data.chunks(c) {
                        feats.extend(cell.iter().map(|t| t.sin()));
                        feats.extend(cell.iter().map(|t| t.cos()));
                    }
                    let mut out = pb.clone();
                    crate::tensor::gemm(1, f, c, &feats, false, pw, false, 1.0, &mut out);
                    out
                })
            }
        }
    }
}

fn check_dense(theta: &[f64], omega: &[f64], k: &[f64]) -> Result<usize> {
    let d = theta.len();
    if omega.len() != d || k.len() != d * d {
        return Err(WonnError::shape(format!(
            "theta has {d} oscillators, omega {}, coupling {} entries",
            omega.len(),
            k.len()
        )));
    }
    Ok(d)
}

/// `dtheta_i = omega_i + gamma sum_j K_ij sin(theta_j - theta_i)`.
pub fn kuramoto_rhs(theta: &[f64], omega: &[f64], k: &[f64], gamma: f64) -> Result<Vec<f64>> {
    generalized_rhs(theta, omega, k, gamma, 0.0)
}

/// `dtheta_i = omega_i + gamma sum_j K_ij [sin(theta_j - theta_i) + q sin(theta_j + theta_i)]`.
pub fn generalized_rhs(theta: &[f64], omega: &[f64], k: &[f64], gamma: f64, q: f64) -> Result<Vec<f64>> {
    let d = check_dense(theta, omega, k)?;
    Ok((0..d).map(|i| generalized_rhs_at(theta, omega, k, gamma, q, i)).collect())
}

/// One component of [`generalized_rhs`]; components are independent, which
/// lets callers split the field across workers without changing results.
pub fn generalized_rhs_at(theta: &[f64], omega: &[f64], k: &[f64], gamma: f64, q: f64, i: usize) -> f64 {
    let d = theta.len();
    let ti = theta[i];
    let row = &k[i * d..(i + 1) * d];
    let mut acc = 0.0;
    if q == 0.0 {
        for (kij, tj) in row.iter().zip(theta) {
            acc += kij * (tj - ti).sin();
        }
    } else {
        for (kij, tj) in row.iter().zip(theta) {
            acc += kij * ((tj - ti).sin() + q * (tj + ti).sin());
        }
    }
    omega[i] + gamma * acc
}

/// Separable trigonometric field `omega_i + gamma cos(theta_i) sum_j c_ij sin(theta_j)`.
pub fn trig_winfree_rhs(theta: &[f64], omega: &[f64], c: &[f64], gamma: f64) -> Result<Vec<f64>> {
    let d = check_dense(theta, omega, c)?;
    let s: Vec<f64> = theta.iter().map(|t| t.sin()).collect();
    Ok((0..d)
        .map(|i| {
            let acc: f64 = c[i * d..(i + 1) * d].iter().zip(&s).map(|(a, b)| a * b).sum();
            omega[i] + gamma * theta[i].cos() * acc
        })
        .collect())
}

/// Bracket of the discrete Winfree step,
/// `omega_i + S(theta_i) [coupling(influence(theta))]_i`.
/// The step size is applied by [`discrete_step`].
pub fn winfree_rhs(
    theta: &PhaseField,
    omega: &[f64],
    fns: &InteractionFns,
    coupling: &CouplingSpec,
    groups: GroupSpec,
) -> Result<Vec<f64>> {
    if omega.len() != theta.len() {
        return Err(WonnError::shape("omega and theta differ in length"));
    }
    let shape = theta.shape().dims();
    let grid = match theta.shape() {
        FieldShape::Grid { .. } => Tensor::new(shape, theta.as_slice().to_vec())?,
        FieldShape::Flat(d) => Tensor::new(vec![1, 1, d], theta.as_slice().to_vec())?,
    };
    let infl = if matches!(theta.shape(), FieldShape::Flat(_)) {
        if groups.group_size != 1 {
            return Err(WonnError::shape("grouped influence needs a grid-shaped field"));
        }
        Tensor { shape: grid.shape.clone(), data: grid.data.iter().map(|&t| fns.influence(t)).collect() }
    } else {
        fns.influence_field(&grid, groups)?
    };
    let ctx = embed_circle(theta);
    let coupled = apply_coupling(coupling, &infl, &ctx)?;
    Ok(theta
        .as_slice()
        .iter()
        .zip(omega)
        .zip(&coupled.data)
        .map(|((&t, &w), &cpl)| w + fns.sensitivity(t) * cpl)
        .collect())
}

/// `theta' = wrap(theta + gamma * rhs)`.
pub fn discrete_step(theta: &PhaseField, rhs: &[f64], gamma: f64) -> Result<PhaseField> {
    if rhs.len() != theta.len() {
        return Err(WonnError::shape("rhs and theta differ in length"));
    }
    let next: Vec<f64> = theta.as_slice().iter().zip(rhs).map(|(t, r)| t + gamma * r).collect();
    if let Some(i) = next.iter().position(|v| !v.is_finite()) {
        return Err(WonnError::numeric(format!("non-finite update at oscillator {i}")));
    }
    PhaseField::from_angles(theta.shape(), next)
}

/// One step of a trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub theta: Vec<f64>,
    pub energy: Option<f64>,
    #[serde(rename = "order_R")]
    pub order_r: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub steps: Vec<StepRecord>,
}

impl TrajectoryRecord {
    pub fn push(&mut self, step: usize, theta: &[f64], energy: Option<f64>) -> Result<()> {
        let (r, _) = order_parameter(theta)?;
        self.steps.push(StepRecord { step, theta: theta.to_vec(), energy, order_r: r });
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn last_theta(&self) -> Option<&[f64]> {
        self.steps.last().map(|s| s.theta.as_slice())
    }

    /// One JSON object per line.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for s in &self.steps {
            serde_json::to_writer(&mut out, s)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Interaction pieces shared across every step of a rollout.
#[derive(Debug, Clone)]
pub struct DynamicsPieces<'a> {
    pub fns: &'a InteractionFns,
    pub coupling: &'a CouplingSpec,
    pub groups: GroupSpec,
    pub gamma: f64,
}

/// `steps` applications of [`winfree_rhs`] + [`discrete_step`] with the same
/// pieces. The record holds the state after each step.
pub fn rollout(
    theta0: &PhaseField,
    omega: &[f64],
    pieces: &DynamicsPieces<'_>,
    steps: usize,
    record_energy: bool,
) -> Result<TrajectoryRecord> {
    if steps == 0 {
        return Err(WonnError::domain("rollout needs at least one step"));
    }
    let mut theta = theta0.clone();
    let mut rec = TrajectoryRecord::default();
    for t in 1..=steps {
        let rhs = winfree_rhs(&theta, omega, pieces.fns, pieces.coupling, pieces.groups)?;
        theta = discrete_step(&theta, &rhs, pieces.gamma)?;
        let energy = if record_energy { Some(coupling_energy(pieces.coupling, &theta)?) } else { None };
        rec.push(t, theta.as_slice(), energy)?;
    }
    Ok(rec)
}

/// Classical RK4 step on the unwrapped lift, wrapped afterwards.
pub fn rk4_step<F>(theta: &[f64], rhs: F, dt: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    rk4_step_unwrapped(theta, rhs, dt).map(|v| v.into_iter().map(wrap_unchecked).collect())
}

/// RK4 step without the final wrap (for derivative estimates on the lift).
pub fn rk4_step_unwrapped<F>(theta: &[f64], rhs: F, dt: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(WonnError::domain(format!("rk4 needs dt > 0, got {dt}")));
    }
    let axpy = |a: &[f64], k: &[f64], s: f64| a.iter().zip(k).map(|(x, y)| x + s * y).collect::<Vec<_>>();
    let k1 = rhs(theta)?;
    let k2 = rhs(&axpy(theta, &k1, 0.5 * dt))?;
    let k3 = rhs(&axpy(theta, &k2, 0.5 * dt))?;
    let k4 = rhs(&axpy(theta, &k3, dt))?;
    let out: Vec<f64> = (0..theta.len())
        .map(|i| theta[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect();
    if out.iter().any(|v| !v.is_finite()) {
        return Err(WonnError::numeric("non-finite rk4 stage"));
    }
    Ok(out)
}
