//! Run configuration and built-in presets.

use crate::coupling::{CouplingConfig, CouplingKind};
use crate::error::{Result, WonnError};
use crate::network::{HeadConfig, InteractionConfig, ModelConfig};
use crate::optim::Schedule;
use crate::tasks::blobs::BlobSpec;
use crate::tasks::maze::{MazeSpec, Placement};
use crate::tasks::TaskConfig;
use crate::train::TrainConfig;
use crate::voting::VoteConfig;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub task: TaskConfig,
    pub train: TrainConfig,
    #[serde(default = "default_vote")]
    pub vote: VoteConfig,
}

fn default_vote() -> VoteConfig {
    VoteConfig { k: 8, t_eval: None, base_seed: 0 }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.task.validate()?;
        self.train.validate()?;
        self.vote.validate()?;
        if self.model.input_shape != self.task.input_shape() {
            return Err(WonnError::config(format!(
                "model input shape {:?} does not match the task's {:?}",
                self.model.input_shape,
                self.task.input_shape()
            )));
        }
        let expected = match &self.task {
            TaskConfig::Blobs { spec, .. } => HeadConfig::Classifier { num_classes: spec.num_classes },
            TaskConfig::Maze { .. } => HeadConfig::PerCell { num_labels: 2 },
            TaskConfig::Shidoku { .. } => HeadConfig::PerCell { num_labels: 4 },
        };
        if self.model.head != expected {
            return Err(WonnError::config(format!("task needs head {expected:?}, config has {:?}", self.model.head)));
        }
        if self.train.extra_steps > 0 && self.model.layers != 1 {
            return Err(WonnError::config("train.extra_steps needs a single dynamics layer"));
        }
        if matches!(self.model.head, HeadConfig::PerCell { .. }) && self.model.input_patch_size != 1 {
            return Err(WonnError::config("per-cell heads need input_patch_size 1"));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

pub const PRESETS: [&str; 4] = ["shidoku", "maze", "blobs", "toy"];

/// Built-in configurations by name.
pub fn preset(name: &str) -> Result<RunConfig> {
    let cfg = match name {
        "shidoku" => RunConfig {
            model: ModelConfig {
                input_shape: [4, 4, 5],
                input_patch_size: 1,
                layers: 1,
                steps: vec![16],
                gamma: 0.15,
                group_size: 1,
                channels: 64,
                channels_out: None,
                interaction: InteractionConfig::Trig,
                coupling: CouplingConfig::new(CouplingKind::Attentive),
                sigma_init: 0.0,
                head: HeadConfig::PerCell { num_labels: 4 },
                positional: true,
            },
            task: TaskConfig::Shidoku { givens_min: 6, givens_max: 10, train_size: 2000, test_size: 200 },
            train: TrainConfig {
                epochs: 30,
                lr: 2e-3,
                batch: 20,
                seed: 0,
                schedule: Schedule::Cosine,
                weight_decay: 0.0,
                clip_norm: 10.0,
                augment: true,
                eval_every: 5,
                extra_steps: 0,
            },
            vote: default_vote(),
        },
        "maze" => RunConfig {
            model: ModelConfig {
                input_shape: [9, 9, 4],
                input_patch_size: 1,
                layers: 1,
                steps: vec![12],
                gamma: 0.5,
                group_size: 1,
                channels: 32,
                channels_out: None,
                interaction: InteractionConfig::Trig,
                coupling: CouplingConfig::new(CouplingKind::Stencil),
                sigma_init: 0.1,
                head: HeadConfig::PerCell { num_labels: 2 },
                positional: false,
            },
            task: TaskConfig::Maze {
                spec: MazeSpec { h: 9, w: 9, wall_density: 0.3, placement: Placement::Random, unique_path: true },
                train_size: 4000,
                test_size: 200,
            },
            train: TrainConfig {
                epochs: 30,
                lr: 1e-3,
                batch: 20,
                seed: 0,
                schedule: Schedule::Cosine,
                weight_decay: 0.1,
                clip_norm: 10.0,
                augment: true,
                eval_every: 5,
                extra_steps: 1,
            },
            vote: VoteConfig { k: 8, t_eval: Some(13), base_seed: 0 },
        },
        "blobs" => RunConfig {
            model: ModelConfig {
                input_shape: [8, 8, 1],
                input_patch_size: 2,
                layers: 2,
                steps: vec![4, 4],
                gamma: 0.5,
                group_size: 1,
                channels: 8,
                channels_out: Some(16),
                interaction: InteractionConfig::Trig,
                coupling: CouplingConfig::new(CouplingKind::Stencil),
                sigma_init: 1.0,
                head: HeadConfig::Classifier { num_classes: 4 },
                positional: false,
            },
            task: TaskConfig::Blobs {
                spec: BlobSpec { h: 8, w: 8, num_classes: 4, noise: 0.1, jitter: true },
                train_size: 200,
                test_size: 100,
            },
            train: TrainConfig {
                epochs: 10,
                lr: 3e-3,
                batch: 20,
                seed: 0,
                schedule: Schedule::Constant,
                weight_decay: 0.0,
                clip_norm: 10.0,
                augment: false,
                eval_every: 1,
                extra_steps: 0,
            },
            vote: default_vote(),
        },
        // Tiny two-layer model used for quick end-to-end runs.
        "toy" => {
            let mut cfg = preset("blobs")?;
            cfg.model.channels = 4;
            cfg.model.channels_out = None;
            cfg.model.steps = vec![2, 2];
            cfg.task = TaskConfig::Blobs {
                spec: BlobSpec { h: 8, w: 8, num_classes: 4, noise: 0.1, jitter: true },
                train_size: 40,
                test_size: 20,
            };
            cfg.train.epochs = 2;
            cfg.train.batch = 8;
            cfg
        }
        _ => return Err(WonnError::config(format!("unknown preset {name:?}; choose one of {PRESETS:?}"))),
    };
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate_and_round_trip() {
        for name in PRESETS {
            let cfg = preset(name).unwrap();
            assert_eq!(RunConfig::from_json(&cfg.to_json()).unwrap(), cfg, "{name}");
        }
        assert!(preset("nope").is_err());
    }

    #[test]
    fn unknown_keys_rejected() {
        let mut v: serde_json::Value = serde_json::from_str(&preset("toy").unwrap().to_json()).unwrap();
        v["train"]["momentum"] = 0.9.into();
        assert!(RunConfig::from_json(&v.to_string()).is_err());
        let mut v: serde_json::Value = serde_json::from_str(&preset("toy").unwrap().to_json()).unwrap();
        v["model"]["coupling"]["radius"] = 2.into();
        assert!(RunConfig::from_json(&v.to_string()).is_err());
    }

    #[test]
    fn mismatched_shapes_rejected() {
        let mut cfg = preset("shidoku").unwrap();
        cfg.model.input_shape = [9, 9, 4];
        assert!(cfg.validate().is_err());
        let mut cfg = preset("maze").unwrap();
        cfg.model.head = HeadConfig::PerCell { num_labels: 4 };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn extra_steps_need_one_layer() {
        assert_eq!(preset("maze").unwrap().train.extra_steps, 1);
        let mut cfg = preset("toy").unwrap();
        cfg.train.extra_steps = 1;
        assert!(cfg.validate().is_err());
        let mut v: serde_json::Value = serde_json::from_str(&preset("shidoku").unwrap().to_json()).unwrap();
        v["train"].as_object_mut().unwrap().remove("extra_steps");
        assert_eq!(RunConfig::from_json(&v.to_string()).unwrap().train.extra_steps, 0);
    }
}
