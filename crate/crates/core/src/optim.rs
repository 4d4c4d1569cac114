//! Adam with optional decoupled weight decay, global-norm clipping and
//! learning-rate schedules.

use crate::error::{Result, WonnError};
use crate::network::ModelParams;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::f64::consts::PI;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    #[serde(default = "beta1")]
    pub beta1: f64,
    #[serde(default = "beta2")]
    pub beta2: f64,
    #[serde(default = "eps")]
    pub eps: f64,
    #[serde(default)]
    pub weight_decay: f64,
}

fn beta1() -> f64 {
    0.9
}
fn beta2() -> f64 {
    0.999
}
fn eps() -> f64 {
    1e-8
}

impl AdamConfig {
    pub fn new(lr: f64) -> Self {
        AdamConfig { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub cfg: AdamConfig,
    pub step: u64,
    pub m: BTreeMap<String, Vec<f64>>,
    pub v: BTreeMap<String, Vec<f64>>,
}

impl OptimizerState {
    pub fn new(cfg: AdamConfig, params: &ModelParams) -> Self {
        let zeros = || params.tensors.iter().map(|(k, t)| (k.clone(), vec![0.0; t.len()])).collect();
        OptimizerState { cfg, step: 0, m: zeros(), v: zeros() }
    }
}

/// Learning-rate schedule over optimizer steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    #[default]
    Constant,
    /// Cosine decay from the base rate to zero over the run.
    Cosine,
}

impl Schedule {
    pub fn lr(&self, base: f64, step: u64, total: u64) -> f64 {
        match self {
            Schedule::Constant => base,
            Schedule::Cosine => {
                let frac = if total == 0 { 0.0 } else { (step as f64 / total as f64).min(1.0) };
                0.5 * base * (1.0 + (PI * frac).cos())
            }
        }
    }
}

pub fn global_norm(grads: &BTreeMap<String, Vec<f64>>) -> f64 {
    grads.values().flat_map(|g| g.iter()).map(|v| v * v).sum::<f64>().sqrt()
}

/// Scale gradients so their global norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_global_norm(grads: &mut BTreeMap<String, Vec<f64>>, max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        grads.values_mut().for_each(|g| g.iter_mut().for_each(|v| *v *= s));
    }
    norm
}

/// One bias-corrected Adam update at learning rate `lr`.
pub fn optimizer_step(
    params: &mut ModelParams,
    grads: &BTreeMap<String, Vec<f64>>,
    state: &mut OptimizerState,
    lr: f64,
) -> Result<()> {
    for (name, g) in grads {
        if let Some(i) = g.iter().position(|v| !v.is_finite()) {
            return Err(WonnError::numeric(format!("non-finite gradient in {name}[{i}]")));
        }
        let len = params.get(name)?.len();
        if g.len() != len {
            return Err(WonnError::shape(format!("gradient for {name} has {} entries, parameter {len}", g.len())));
        }
    }
    state.step += 1;
    let c = state.cfg;
    let bc1 = 1.0 - c.beta1.powi(state.step as i32);
    let bc2 = 1.0 - c.beta2.powi(state.step as i32);
    for (name, g) in grads {
        let p = params.tensors.get_mut(name).expect("checked above");
        let m = state.m.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
        let v = state.v.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
        for i in 0..g.len() {
            m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
            v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
            let mh = m[i] / bc1;
            let vh = v[i] / bc2;
            if c.weight_decay != 0.0 {
                p.data[i] -= lr * c.weight_decay * p.data[i];
            }
            p.data[i] -= lr * mh / (vh.sqrt() + c.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn params(v: &[f64]) -> ModelParams {
        let mut p = ModelParams::default();
        p.tensors.insert("x".into(), Tensor::new(vec![v.len()], v.to_vec()).unwrap());
        p
    }

    #[test]
    fn zero_gradients_leave_params() {
        let mut p = params(&[1.0, -2.0]);
        let mut s = OptimizerState::new(AdamConfig::new(0.1), &p);
        let g = BTreeMap::from([("x".to_string(), vec![0.0, 0.0])]);
        optimizer_step(&mut p, &g, &mut s, 0.1).unwrap();
        assert_eq!(p.tensors["x"].data, vec![1.0, -2.0]);
    }

    #[test]
    fn first_step_closed_form() {
        let mut p = params(&[1.0, 1.0, 1.0]);
        let mut s = OptimizerState::new(AdamConfig::new(0.01), &p);
        let g = vec![0.5, -3.0, 1e-9];
        optimizer_step(&mut p, &BTreeMap::from([("x".to_string(), g.clone())]), &mut s, 0.01).unwrap();
        for i in 0..3 {
            let expect = 1.0 - 0.01 * g[i] / (g[i].abs() + 1e-8);
            assert!((p.tensors["x"].data[i] - expect).abs() < 1e-15, "{i}");
        }
    }

    #[test]
    fn repeated_calls_are_deterministic() {
        let p0 = params(&[0.3, 0.7]);
        let g = BTreeMap::from([("x".to_string(), vec![0.2, -0.1])]);
        let s0 = OptimizerState::new(AdamConfig::new(0.05), &p0);
        let run = || {
            let (mut p, mut s) = (p0.clone(), s0.clone());
            optimizer_step(&mut p, &g, &mut s, 0.05).unwrap();
            p
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn non_finite_gradient_is_rejected() {
        let mut p = params(&[0.0]);
        let mut s = OptimizerState::new(AdamConfig::new(0.1), &p);
        let g = BTreeMap::from([("x".to_string(), vec![f64::NAN])]);
        assert!(matches!(optimizer_step(&mut p, &g, &mut s, 0.1), Err(WonnError::Numeric(_))));
    }

    #[test]
    fn clipping_and_cosine() {
        let mut g = BTreeMap::from([("x".to_string(), vec![30.0, 40.0])]);
        assert_eq!(clip_global_norm(&mut g, 10.0), 50.0);
        assert!((global_norm(&g) - 10.0).abs() < 1e-12);
        assert_eq!(Schedule::Cosine.lr(1.0, 0, 10), 1.0);
        assert!(Schedule::Cosine.lr(1.0, 10, 10).abs() < 1e-15);
        assert!((Schedule::Cosine.lr(1.0, 5, 10) - 0.5).abs() < 1e-15);
    }
}
