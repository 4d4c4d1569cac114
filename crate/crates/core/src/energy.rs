//! Interaction energy of the trigonometric Winfree core,
//! `E = -1/2 sum_ij c_ij sin(theta_i) sin(theta_j)`, its gradient, the
//! drift-plus-gradient rate identity, discrete Lyapunov descent and the
//! circulation of constant drift around the circle.

use crate::coupling::{apply_coupling, CouplingSpec, GroupSpec};
use crate::dynamics::{discrete_step, winfree_rhs, InteractionFns};
use crate::error::{Result, WonnError};
use crate::phase::{circular_diff, embed_circle, wrap_unchecked, FieldShape, PhaseField};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::f64::consts::{PI, TAU};

/// Tolerance for the symmetry precondition on `c`.
pub const SYMMETRY_TOL: f64 = 1e-10;

/// Central-difference step used by gradient checks.
pub const FD_STEP: f64 = 1e-5;

fn check_symmetric(theta: &[f64], c: &[f64]) -> Result<usize> {
    let d = theta.len();
    if c.len() != d * d {
        return Err(WonnError::shape(format!("coupling has {} entries for {d} oscillators", c.len())));
    }
    for i in 0..d {
        for j in i + 1..d {
            if (c[i * d + j] - c[j * d + i]).abs() > SYMMETRY_TOL {
                return Err(WonnError::Precondition(format!(
                    "coupling not symmetric at ({i}, {j}): {} vs {}",
                    c[i * d + j],
                    c[j * d + i]
                )));
            }
        }
    }
    Ok(d)
}

fn coupled_sin(theta: &[f64], c: &[f64], d: usize) -> Vec<f64> {
    let s: Vec<f64> = theta.iter().map(|t| t.sin()).collect();
    (0..d).map(|i| c[i * d..(i + 1) * d].iter().zip(&s).map(|(a, b)| a * b).sum()).collect()
}

pub fn interaction_energy(theta: &[f64], c: &[f64]) -> Result<f64> {
    let d = check_symmetric(theta, c)?;
    let cs = coupled_sin(theta, c, d);
    Ok(-0.5 * theta.iter().zip(&cs).map(|(t, v)| t.sin() * v).sum::<f64>())
}

/// `(grad E)_i = -cos(theta_i) sum_j c_ij sin(theta_j)`.
pub fn energy_gradient(theta: &[f64], c: &[f64]) -> Result<Vec<f64>> {
    let d = check_symmetric(theta, c)?;
    let cs = coupled_sin(theta, c, d);
    Ok(theta.iter().zip(&cs).map(|(t, v)| -t.cos() * v).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub e_int: f64,
    pub grad_norm_sq: f64,
    pub drift_term: f64,
    pub predicted_rate: f64,
}

/// `dE/dt = <grad E, omega> - gamma |grad E|^2` along
/// `dtheta/dt = omega + gamma cos(theta) (c sin(theta))`.
pub fn energy_rate(theta: &[f64], omega: &[f64], gamma: f64, c: &[f64]) -> Result<EnergyReport> {
    if omega.len() != theta.len() {
        return Err(WonnError::shape("omega and theta differ in length"));
    }
    let e_int = interaction_energy(theta, c)?;
    let grad = energy_gradient(theta, c)?;
    let grad_norm_sq = grad.iter().map(|g| g * g).sum::<f64>();
    let drift_term = grad.iter().zip(omega).map(|(g, w)| g * w).sum::<f64>();
    Ok(EnergyReport { e_int, grad_norm_sq, drift_term, predicted_rate: drift_term - gamma * grad_norm_sq })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LyapunovReport {
    /// Energy at step 0 (initial state) through step `steps`.
    pub energies: Vec<f64>,
    pub max_increase: f64,
}

impl LyapunovReport {
    pub fn descended(&self) -> bool {
        self.energies.last() < self.energies.first()
    }
}

/// Discrete rollout of the zero-frequency trigonometric dynamics with fixed
/// symmetric dense coupling, recording the energy after every step.
pub fn lyapunov_check(theta0: &[f64], c: &[f64], gamma: f64, steps: usize) -> Result<LyapunovReport> {
    let d = check_symmetric(theta0, c)?;
    if !(gamma > 0.0) {
        return Err(WonnError::Precondition(format!("gamma must be positive, got {gamma}")));
    }
    let spec = CouplingSpec::Dense { d, matrix: c.to_vec() };
    let groups = GroupSpec::new(1)?;
    let omega = vec![0.0; d];
    let mut theta = PhaseField::flat(theta0.to_vec())?;
    let mut energies = Vec::with_capacity(steps + 1);
    energies.push(interaction_energy(theta.as_slice(), c)?);
    for _ in 0..steps {
        let rhs = winfree_rhs(&theta, &omega, &InteractionFns::Trig, &spec, groups)?;
        theta = discrete_step(&theta, &rhs, gamma)?;
        energies.push(interaction_energy(theta.as_slice(), c)?);
    }
    let max_increase = energies.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max);
    Ok(LyapunovReport { energies, max_increase })
}

/// Numerical `oint omega dtheta` once around the fundamental cycle of one
/// oscillator. The loop is sampled on the wrapped circle; increments are
/// measured as shortest signed arcs, so the winding is counted.
pub fn drift_circulation(omega_i: f64, loop_steps: usize) -> Result<f64> {
    if loop_steps < 8 {
        return Err(WonnError::domain(format!("need at least 8 loop steps, got {loop_steps}")));
    }
    let points: Vec<f64> = (0..=loop_steps).map(|k| wrap_unchecked(-PI + TAU * k as f64 / loop_steps as f64)).collect();
    Ok(points.windows(2).map(|w| omega_i * circular_diff(w[1], w[0])).sum())
}

/// Interaction energy of the trig core for an arbitrary coupling operator,
/// `-1/2 <sin theta, C sin theta>`. For state-dependent (attentive)
/// coupling the operator is frozen at `theta`; the quadratic form equals
/// the one of the symmetrized matrix `(W + W^T)/2`.
pub fn coupling_energy(spec: &CouplingSpec, theta: &PhaseField) -> Result<f64> {
    let grid = match theta.shape() {
        FieldShape::Grid { h, w, c } => Tensor::new(vec![h, w, c], theta.as_slice().iter().map(|t| t.sin()).collect())?,
        FieldShape::Flat(d) => Tensor::new(vec![1, 1, d], theta.as_slice().iter().map(|t| t.sin()).collect())?,
    };
    let ctx = embed_circle(theta);
    let coupled = apply_coupling(spec, &grid, &ctx)?;
    Ok(-0.5 * grid.data.iter().zip(&coupled.data).map(|(a, b)| a * b).sum::<f64>())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use rand::Rng;
    use std::f64::consts::FRAC_PI_2;

    const SWAP: [f64; 4] = [0.0, 1.0, 1.0, 0.0];

    fn sym(rng: &mut rand_chacha::ChaCha8Rng, d: usize) -> Vec<f64> {
        let a: Vec<f64> = (0..d * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut c = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                c[i * d + j] = 0.5 * (a[i * d + j] + a[j * d + i]);
            }
        }
        c
    }

    #[test]
    fn energy_examples() {
        assert_eq!(interaction_energy(&[0.0, 0.0], &SWAP).unwrap(), 0.0);
        assert!((interaction_energy(&[FRAC_PI_2, FRAC_PI_2], &SWAP).unwrap() + 1.0).abs() < 1e-15);
        assert!((interaction_energy(&[FRAC_PI_2, -FRAC_PI_2], &SWAP).unwrap() - 1.0).abs() < 1e-15);
        assert!(matches!(interaction_energy(&[0.0, 0.0], &[0.0, 1.0, 0.5, 0.0]), Err(WonnError::Precondition(_))));
    }

    #[test]
    fn gradient_examples() {
        let g = energy_gradient(&[FRAC_PI_2; 2], &SWAP).unwrap();
        assert!(g.iter().all(|v| v.abs() < 1e-15));
        let g = energy_gradient(&[0.0, FRAC_PI_2], &SWAP).unwrap();
        assert!((g[0] + 1.0).abs() < 1e-15 && g[1].abs() < 1e-15);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = stream(10, "t");
        for d in [4, 16] {
            let c = sym(&mut rng, d);
            let th: Vec<f64> = (0..d).map(|_| rng.gen_range(-PI..PI)).collect();
            let g = energy_gradient(&th, &c).unwrap();
            for i in 0..d {
                let mut p = th.clone();
                let mut m = th.clone();
                p[i] += FD_STEP;
                m[i] -= FD_STEP;
                let fd = (interaction_energy(&p, &c).unwrap() - interaction_energy(&m, &c).unwrap()) / (2.0 * FD_STEP);
                assert!((fd - g[i]).abs() <= 1e-6 * g[i].abs().max(1e-3), "d={d} i={i}: {fd} vs {}", g[i]);
            }
        }
    }

    #[test]
    fn rate_examples() {
        let mut rng = stream(11, "t");
        let c = sym(&mut rng, 5);
        let th: Vec<f64> = (0..5).map(|_| rng.gen_range(-PI..PI)).collect();
        let r = energy_rate(&th, &[0.0; 5], 0.3, &c).unwrap();
        assert_eq!(r.drift_term, 0.0);
        assert!(r.predicted_rate <= 0.0);
        assert_eq!(r.predicted_rate, r.drift_term - 0.3 * r.grad_norm_sq);
        let r = energy_rate(&[FRAC_PI_2; 2], &[1.0, -2.0], 0.5, &SWAP).unwrap();
        assert!(r.predicted_rate.abs() < 1e-15);
    }

    #[test]
    fn reflection_invariance() {
        let mut rng = stream(12, "t");
        let c = sym(&mut rng, 9);
        let th: Vec<f64> = (0..9).map(|_| rng.gen_range(-PI..PI)).collect();
        let refl: Vec<f64> = th.iter().map(|t| PI - t).collect();
        let (a, b) = (interaction_energy(&th, &c).unwrap(), interaction_energy(&refl, &c).unwrap());
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn fixed_point_energy_is_constant() {
        let r = lyapunov_check(&[FRAC_PI_2; 2], &SWAP, 0.01, 50).unwrap();
        let e0 = r.energies[0];
        assert!(r.energies.iter().all(|e| (e - e0).abs() < 1e-12));
    }

    #[test]
    fn small_gamma_descends() {
        let mut rng = stream(13, "t");
        let c = sym(&mut rng, 12);
        let th: Vec<f64> = (0..12).map(|_| rng.gen_range(-PI..PI)).collect();
        let r = lyapunov_check(&th, &c, 0.01, 300).unwrap();
        assert!(r.max_increase <= 1e-6);
        assert!(r.descended());
        assert_eq!(r.energies.len(), 301);
    }

    #[test]
    fn circulation_closed_form() {
        for (w, expect) in [(0.0, 0.0), (0.5, PI), (1.0, TAU), (-2.0, -2.0 * TAU)] {
            assert!((drift_circulation(w, 64).unwrap() - expect).abs() < 1e-8);
        }
        assert!(drift_circulation(1.0, 7).is_err());
    }

    #[test]
    fn operator_energy_matches_matrix_form() {
        let mut rng = stream(14, "t");
        let c = sym(&mut rng, 6);
        let th: Vec<f64> = (0..6).map(|_| rng.gen_range(-PI..PI)).collect();
        let spec = CouplingSpec::Dense { d: 6, matrix: c.clone() };
        let a = coupling_energy(&spec, &PhaseField::flat(th.clone()).unwrap()).unwrap();
        assert!((a - interaction_energy(&th, &c).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn voting_argmin_is_scale_invariant() {
        let mut rng = stream(15, "t");
        let c = sym(&mut rng, 8);
        let c3: Vec<f64> = c.iter().map(|v| 3.0 * v).collect();
        let states: Vec<Vec<f64>> = (0..10).map(|_| (0..8).map(|_| rng.gen_range(-PI..PI)).collect()).collect();
        let argmin = |m: &[f64]| {
            states
                .iter()
                .enumerate()
                .map(|(i, s)| (i, interaction_energy(s, m).unwrap()))
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .unwrap()
                .0
        };
        assert_eq!(argmin(&c), argmin(&c3));
    }
}
