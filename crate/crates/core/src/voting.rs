//! Inference by sampling several phase initializations and keeping the
//! lowest-energy outcome.

use crate::error::{Result, WonnError};
use crate::network::{wonn_forward_with, ForwardOptions};
use crate::tensor::Tensor;
use crate::train::Model;
use rayon::prelude::*;
use rayon::ThreadPool;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VoteConfig {
    /// Number of candidates.
    pub k: usize,
    /// Dynamics steps at inference; `None` keeps the trained count.
    #[serde(default)]
    pub t_eval: Option<usize>,
    #[serde(default)]
    pub base_seed: u64,
}

impl VoteConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(WonnError::config("vote needs k >= 1"));
        }
        if self.t_eval == Some(0) {
            return Err(WonnError::config("t_eval must be at least 1"));
        }
        Ok(())
    }

    /// Seed of candidate `j`: `base_seed + j`, so candidate `j` is the plain
    /// forward pass with that seed.
    pub fn seed(&self, j: usize) -> u64 {
        self.base_seed.wrapping_add(j as u64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub prediction: Vec<usize>,
    pub final_energy: f64,
    pub seed: u64,
}

/// One forward pass per candidate seed, in seed order.
pub fn sample_candidates(model: &Model, input: &Tensor, cfg: &VoteConfig, pool: &ThreadPool) -> Result<Vec<Candidate>> {
    cfg.validate()?;
    let opts = ForwardOptions { t_eval: cfg.t_eval, energy_every_step: false };
    pool.install(|| {
        (0..cfg.k)
            .into_par_iter()
            .map(|j| {
                let seed = cfg.seed(j);
                let out = wonn_forward_with(input, &model.params, &model.cfg, seed, opts)?;
                Ok(Candidate { prediction: out.predictions(), final_energy: out.final_energy, seed })
            })
            .collect()
    })
}

/// Minimum final energy; ties go to the smaller seed.
pub fn energy_vote(candidates: &[Candidate]) -> Result<&Candidate> {
    if let Some(c) = candidates.iter().find(|c| !c.final_energy.is_finite()) {
        return Err(WonnError::numeric(format!("candidate {} has non-finite energy", c.seed)));
    }
    candidates
        .iter()
        .min_by(|a, b| a.final_energy.total_cmp(&b.final_energy).then(a.seed.cmp(&b.seed)))
        .ok_or_else(|| WonnError::domain("energy vote over zero candidates"))
}
