//! Self-contained diagnostic checks. Each returns a serializable report
//! with a `pass` flag; the CLI prints them as JSON.

use crate::dynamics::{generalized_rhs, kuramoto_rhs};
use crate::energy::{drift_circulation, energy_rate, lyapunov_check, EnergyReport};
use crate::error::Result;
use crate::network::{sample_theta, wonn_forward};
use crate::phase::{phase_histogram, wrap_unchecked, PhaseHistogram};
use crate::rng::{child_seed, stream};
use crate::tasks::Instance;
use crate::train::{grad_check, GradCheckReport, Model};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Random phases in `[-pi, pi)`, frequencies and a coupling matrix.
fn random_state(seed: u64, d: usize, symmetric: bool) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut rng = stream(seed, "diag_state");
    let theta: Vec<f64> = (0..d).map(|_| rng.gen_range(-PI..PI)).collect();
    let omega: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut k: Vec<f64> = (0..d * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
    if symmetric {
        for i in 0..d {
            for j in 0..i {
                k[i * d + j] = k[j * d + i];
            }
        }
    }
    (theta, omega, k)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityReport {
    pub samples: usize,
    pub d: usize,
    /// `max |generalized_rhs(q=1) - (omega + 2 gamma cos(theta) K sin(theta))|`.
    pub q1_identity_max_err: f64,
    /// Largest change of the Kuramoto field under a global phase shift.
    pub kuramoto_shift_max_err: f64,
    /// Largest change of the `q = 0.5` field under a global phase shift.
    pub q_half_shift_max_diff: f64,
    pub pass: bool,
}

pub const IDENTITY_TOL: f64 = 1e-12;

pub fn identities(seed: u64, samples: usize, d: usize) -> Result<IdentityReport> {
    let mut q1 = 0.0f64;
    let mut shift = 0.0f64;
    let mut half = 0.0f64;
    for s in 0..samples {
        let (theta, omega, k) = random_state(child_seed(seed, "identities", s as u64), d, false);
        let gamma = 0.7;
        let got = generalized_rhs(&theta, &omega, &k, gamma, 1.0)?;
        for i in 0..d {
            let acc: f64 = (0..d).map(|j| k[i * d + j] * theta[j].sin()).sum();
            q1 = q1.max((got[i] - (omega[i] + 2.0 * gamma * theta[i].cos() * acc)).abs());
        }
        let alpha = stream(child_seed(seed, "shift", s as u64), "alpha").gen_range(-PI..PI);
        let shifted: Vec<f64> = theta.iter().map(|t| wrap_unchecked(t + alpha)).collect();
        let a = kuramoto_rhs(&theta, &omega, &k, gamma)?;
        let b = kuramoto_rhs(&shifted, &omega, &k, gamma)?;
        shift = shift.max(a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max));
        let a = generalized_rhs(&theta, &omega, &k, gamma, 0.5)?;
        let b = generalized_rhs(&shifted, &omega, &k, gamma, 0.5)?;
        half = half.max(a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max));
    }
    Ok(IdentityReport {
        samples,
        d,
        q1_identity_max_err: q1,
        kuramoto_shift_max_err: shift,
        q_half_shift_max_diff: half,
        pass: q1 < IDENTITY_TOL && shift < IDENTITY_TOL && half > 1e-3,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LyapunovDiag {
    pub runs: usize,
    pub d: usize,
    pub gamma: f64,
    pub steps: usize,
    /// Largest single-step energy increase over all runs.
    pub max_increase: f64,
    pub all_descended: bool,
    /// Energy bookkeeping of the first run's initial state.
    pub initial: EnergyReport,
    pub pass: bool,
}

pub const LYAPUNOV_TOL: f64 = 1e-6;

pub fn lyapunov(seed: u64, runs: usize, d: usize, gamma: f64, steps: usize) -> Result<LyapunovDiag> {
    let mut max_increase = f64::NEG_INFINITY;
    let mut all_descended = true;
    let mut initial = None;
    for r in 0..runs {
        let (theta, _, c) = random_state(child_seed(seed, "lyapunov", r as u64), d, true);
        if initial.is_none() {
            initial = Some(energy_rate(&theta, &vec![0.0; d], gamma, &c)?);
        }
        let rep = lyapunov_check(&theta, &c, gamma, steps)?;
        max_increase = max_increase.max(rep.max_increase);
        all_descended &= rep.descended();
    }
    let initial = initial.ok_or_else(|| crate::WonnError::domain("lyapunov diagnostic needs at least one run"))?;
    Ok(LyapunovDiag {
        runs,
        d,
        gamma,
        steps,
        max_increase,
        all_descended,
        initial,
        pass: max_increase <= LYAPUNOV_TOL && all_descended,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CirculationEntry {
    pub omega: f64,
    pub circulation: f64,
    pub expected: f64,
    pub abs_err: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CirculationReport {
    pub loop_steps: usize,
    pub entries: Vec<CirculationEntry>,
    pub pass: bool,
}

pub const CIRCULATION_TOL: f64 = 1e-8;

pub fn circulation(omegas: &[f64], loop_steps: usize) -> Result<CirculationReport> {
    let entries = omegas
        .iter()
        .map(|&omega| {
            let circulation = drift_circulation(omega, loop_steps)?;
            let expected = 2.0 * PI * omega;
            Ok(CirculationEntry { omega, circulation, expected, abs_err: (circulation - expected).abs() })
        })
        .collect::<Result<Vec<_>>>()?;
    let pass = entries.iter().all(|e| e.abs_err < CIRCULATION_TOL);
    Ok(CirculationReport { loop_steps, entries, pass })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckDiag {
    #[serde(flatten)]
    pub report: GradCheckReport,
    pub tolerance: f64,
    pub pass: bool,
}

pub const GRAD_CHECK_TOL: f64 = 1e-4;
pub const GRAD_CHECK_H: f64 = 1e-5;

/// Reverse mode against central differences on one encoded instance.
pub fn grad_check_model(model: &Model, inst: &Instance, seed: u64, coords: usize) -> Result<GradCheckDiag> {
    let ex = inst.encode();
    let report = grad_check(model, &ex, child_seed(seed, "grad_check_theta", 0), GRAD_CHECK_H, coords, seed)?;
    let pass = report.max_rel_err < GRAD_CHECK_TOL;
    Ok(GradCheckDiag { report, tolerance: GRAD_CHECK_TOL, pass })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistReport {
    #[serde(flatten)]
    pub histogram: PhaseHistogram,
    pub oscillators: usize,
    pub total: u64,
    /// Count of the second mode over the first; monitored, not asserted.
    pub top_two_ratio: Option<f64>,
    pub mode_separation: Option<f64>,
    pub pass: bool,
}

/// Histogram of the final phases of one forward pass.
pub fn hist(model: &Model, inst: &Instance, seed: u64, bins: usize) -> Result<HistReport> {
    let out = wonn_forward(&inst.encode().input, &model.params, &model.cfg, seed)?;
    let theta = out.trajectory.last_theta().map(<[f64]>::to_vec).unwrap_or_else(|| sample_theta(&model.cfg, seed));
    let histogram = phase_histogram(&theta, bins)?;
    let total = histogram.total();
    let modes = histogram.top_two_modes();
    let oscillators = model.cfg.oscillators(model.cfg.layers - 1);
    Ok(HistReport {
        oscillators,
        total,
        top_two_ratio: modes.map(|m| m.0),
        mode_separation: modes.map(|m| m.1),
        pass: total as usize == oscillators && histogram.counts.len() == bins,
        histogram,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_identity_run_passes() {
        let r = identities(1, 50, 6).unwrap();
        assert!(r.pass, "{r:?}");
    }

    #[test]
    fn circulation_closed_form() {
        assert!(circulation(&[0.0, 0.5, 1.0, -2.0], 64).unwrap().pass);
    }

    #[test]
    fn lyapunov_small() {
        let r = lyapunov(2, 2, 8, 0.01, 100).unwrap();
        assert!(r.pass, "{r:?}");
        assert!(r.initial.predicted_rate <= 0.0);
    }
}
