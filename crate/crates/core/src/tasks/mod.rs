//! Dataset generators with exact oracles, encoders and scoring.

pub mod blobs;
pub mod maze;
pub mod shidoku;

use crate::error::{Result, WonnError};
use crate::rng::{child_seed, stream};
use crate::tensor::Tensor;
use blobs::{gen_blobs, BlobInstance, BlobSpec};
use maze::{gen_maze, mask_solves, MazeInstance, MazeSpec};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use shidoku::{gen_shidoku, ShidokuInstance, CELLS};
use std::collections::HashSet;
use std::io::{BufRead, Write};

/// Version tag written into every dataset line.
pub const DATASET_SCHEMA: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Blobs,
    Maze,
    Shidoku,
}

/// The `"task"` section of a run config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TaskConfig {
    Blobs {
        spec: BlobSpec,
        train_size: usize,
        test_size: usize,
    },
    Maze {
        spec: MazeSpec,
        train_size: usize,
        test_size: usize,
    },
    Shidoku {
        #[serde(default = "givens_min")]
        givens_min: usize,
        #[serde(default = "givens_max")]
        givens_max: usize,
        train_size: usize,
        test_size: usize,
    },
}

fn givens_min() -> usize {
    6
}
fn givens_max() -> usize {
    10
}

impl TaskConfig {
    pub fn kind(&self) -> TaskKind {
        match self {
            TaskConfig::Blobs { .. } => TaskKind::Blobs,
            TaskConfig::Maze { .. } => TaskKind::Maze,
            TaskConfig::Shidoku { .. } => TaskKind::Shidoku,
        }
    }

    pub fn sizes(&self) -> (usize, usize) {
        match *self {
            TaskConfig::Blobs { train_size, test_size, .. }
            | TaskConfig::Maze { train_size, test_size, .. }
            | TaskConfig::Shidoku { train_size, test_size, .. } => (train_size, test_size),
        }
    }

    /// `[h, w, c]` of an encoded input.
    pub fn input_shape(&self) -> [usize; 3] {
        match self {
            TaskConfig::Blobs { spec, .. } => [spec.h, spec.w, 1],
            TaskConfig::Maze { spec, .. } => [spec.h, spec.w, 4],
            TaskConfig::Shidoku { .. } => [4, 4, 5],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let TaskConfig::Shidoku { givens_min, givens_max, .. } = *self {
            if givens_min < 4 || givens_max > CELLS || givens_min > givens_max {
                return Err(WonnError::config(format!("givens range {givens_min}..={givens_max} is not within 4..=16")));
            }
        }
        Ok(())
    }

    fn generate_one(&self, seed: u64) -> Result<Instance> {
        Ok(match self {
            TaskConfig::Blobs { spec, .. } => Instance::Blob(gen_blobs(spec, seed)?),
            TaskConfig::Maze { spec, .. } => Instance::Maze(gen_maze(spec, seed)?),
            TaskConfig::Shidoku { givens_min, givens_max, .. } => {
                let n = stream(seed, "givens").gen_range(*givens_min..=*givens_max);
                Instance::Shidoku(gen_shidoku(n, seed)?)
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Instance {
    Blob(BlobInstance),
    Maze(MazeInstance),
    Shidoku(ShidokuInstance),
}

/// Encoded training example.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub input: Tensor,
    /// One class per output row (one row for classification, one per cell
    /// for boards).
    pub targets: Vec<usize>,
    /// Rows that contribute to the loss.
    pub mask: Vec<bool>,
}

/// Maze channels.
pub const WALL: usize = 0;
pub const OPEN: usize = 1;
pub const START: usize = 2;
pub const GOAL: usize = 3;
/// Shidoku blank channel (digits use channels 0..4).
pub const BLANK: usize = 4;

impl Instance {
    pub fn kind(&self) -> TaskKind {
        match self {
            Instance::Blob(_) => TaskKind::Blobs,
            Instance::Maze(_) => TaskKind::Maze,
            Instance::Shidoku(_) => TaskKind::Shidoku,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Instance::Blob(_) => Ok(()),
            Instance::Maze(m) => m.validate(),
            Instance::Shidoku(s) => s.validate(),
        }
    }

    /// Maze: one-hot `{wall, open, start, goal}`, start and goal cells are
    /// also open; target is the path mask over every cell. Shidoku:
    /// one-hot digits plus a blank channel; target is the digit of every
    /// cell, loss only on blanks. Blobs: one intensity channel.
    pub fn encode(&self) -> Example {
        match self {
            Instance::Blob(b) => Example {
                input: Tensor { shape: vec![b.h, b.w, 1], data: b.image.clone() },
                targets: vec![b.label],
                mask: vec![true],
            },
            Instance::Maze(m) => {
                let mut x = vec![0.0; m.h * m.w * 4];
                for i in 0..m.h * m.w {
                    x[i * 4 + if m.walls[i] { WALL } else { OPEN }] = 1.0;
                }
                x[(m.start.0 * m.w + m.start.1) * 4 + START] = 1.0;
                x[(m.goal.0 * m.w + m.goal.1) * 4 + GOAL] = 1.0;
                Example {
                    input: Tensor { shape: vec![m.h, m.w, 4], data: x },
                    targets: m.path_mask().into_iter().map(usize::from).collect(),
                    mask: vec![true; m.h * m.w],
                }
            }
            Instance::Shidoku(s) => {
                let mut x = vec![0.0; CELLS * 5];
                for i in 0..CELLS {
                    let ch = if s.givens[i] == 0 { BLANK } else { (s.givens[i] - 1) as usize };
                    x[i * 5 + ch] = 1.0;
                }
                Example {
                    input: Tensor { shape: vec![4, 4, 5], data: x },
                    targets: s.solution.iter().map(|&d| (d - 1) as usize).collect(),
                    mask: s.givens.iter().map(|&g| g == 0).collect(),
                }
            }
        }
    }

    /// Did the row-wise class predictions solve this instance?
    pub fn score(&self, predictions: &[usize]) -> bool {
        match self {
            Instance::Blob(b) => predictions == [b.label],
            Instance::Maze(m) => {
                predictions.len() == m.h * m.w && mask_solves(m, &predictions.iter().map(|&p| p == 1).collect::<Vec<_>>())
            }
            Instance::Shidoku(s) => {
                predictions.len() == CELLS
                    && (0..CELLS).all(|i| s.givens[i] != 0 || predictions[i] + 1 == s.solution[i] as usize)
            }
        }
    }

    /// Random symmetry of the instance (identity for blobs).
    pub fn augment(&self, rng: &mut ChaCha8Rng) -> Instance {
        match self {
            Instance::Blob(_) => self.clone(),
            Instance::Maze(m) => Instance::Maze(maze::transform(m, rng.gen_range(0..8))),
            Instance::Shidoku(s) => Instance::Shidoku(shidoku::random_transform(s, rng)),
        }
    }
}

/// Inverse of [`Instance::encode`] for the board tasks.
pub fn decode(kind: TaskKind, ex: &Example) -> Result<Instance> {
    let bad = |m: &str| WonnError::shape(format!("cannot decode {kind:?}: {m}"));
    match kind {
        TaskKind::Blobs => {
            let (h, w) = (ex.input.shape[0], ex.input.shape[1]);
            Ok(Instance::Blob(BlobInstance { h, w, image: ex.input.data.clone(), label: ex.targets[0] }))
        }
        TaskKind::Maze => {
            let [h, w, 4] = ex.input.shape[..] else { return Err(bad("shape")) };
            let x = &ex.input.data;
            let walls: Vec<bool> = (0..h * w).map(|i| x[i * 4 + WALL] == 1.0).collect();
            let find = |ch: usize| (0..h * w).find(|&i| x[i * 4 + ch] == 1.0).map(|i| (i / w, i % w));
            let (start, goal) = (find(START).ok_or_else(|| bad("no start"))?, find(GOAL).ok_or_else(|| bad("no goal"))?);
            let mask: Vec<bool> = ex.targets.iter().map(|&t| t == 1).collect();
            let mut path = vec![start];
            let mut seen = vec![false; h * w];
            seen[start.0 * w + start.1] = true;
            while *path.last().unwrap() != goal {
                let (r, c) = *path.last().unwrap();
                let next = [(r.wrapping_sub(1), c), (r + 1, c), (r, c.wrapping_sub(1)), (r, c + 1)]
                    .into_iter()
                    .find(|&(nr, nc)| nr < h && nc < w && mask[nr * w + nc] && !seen[nr * w + nc])
                    .ok_or_else(|| bad("path mask is not a simple path"))?;
                seen[next.0 * w + next.1] = true;
                path.push(next);
            }
            Ok(Instance::Maze(MazeInstance { h, w, walls, start, goal, optimal_path: path }))
        }
        TaskKind::Shidoku => {
            if ex.input.shape != [4, 4, 5] || ex.targets.len() != CELLS {
                return Err(bad("shape"));
            }
            let mut givens = [0u8; CELLS];
            let mut solution = [0u8; CELLS];
            for i in 0..CELLS {
                let ch = (0..5).find(|&c| ex.input.data[i * 5 + c] == 1.0).ok_or_else(|| bad("cell not one-hot"))?;
                givens[i] = if ch == BLANK { 0 } else { ch as u8 + 1 };
                solution[i] = ex.targets[i] as u8 + 1;
            }
            Ok(Instance::Shidoku(ShidokuInstance { givens, solution }))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// Train and test instances for `cfg`. Instance `i` of a split is
/// generated from `child_seed(seed, "train" | "test", i)`; test instances
/// that coincide with a training instance are skipped, so the splits are
/// disjoint.
pub fn gen_datasets(cfg: &TaskConfig, seed: u64) -> Result<(Vec<Instance>, Vec<Instance>)> {
    cfg.validate()?;
    let (n_train, n_test) = cfg.sizes();
    let train = (0..n_train as u64).map(|i| cfg.generate_one(child_seed(seed, "train", i))).collect::<Result<Vec<_>>>()?;
    let keys: HashSet<String> = train.iter().map(instance_key).collect::<Result<_>>()?;
    let mut test = Vec::with_capacity(n_test);
    let mut i = 0u64;
    while test.len() < n_test {
        if i > 100 * (n_test as u64 + 10) {
            return Err(WonnError::Generation("could not find enough test instances distinct from training".into()));
        }
        let inst = cfg.generate_one(child_seed(seed, "test", i))?;
        i += 1;
        if !keys.contains(&instance_key(&inst)?) {
            test.push(inst);
        }
    }
    Ok((train, test))
}

fn instance_key(inst: &Instance) -> Result<String> {
    Ok(match inst {
        Instance::Shidoku(s) => format!("{:?}", s.givens),
        other => serde_json::to_string(other)?,
    })
}

#[derive(Serialize, Deserialize)]
struct Line {
    schema: u32,
    #[serde(flatten)]
    instance: Instance,
}

pub fn write_jsonl<W: Write>(instances: &[Instance], mut out: W) -> Result<()> {
    for inst in instances {
        serde_json::to_writer(&mut out, &Line { schema: DATASET_SCHEMA, instance: inst.clone() })?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_jsonl<R: BufRead>(input: R) -> Result<Vec<Instance>> {
    let mut out = Vec::new();
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: Line = serde_json::from_str(&line)?;
        if parsed.schema != DATASET_SCHEMA {
            return Err(WonnError::config(format!("dataset schema {} is not supported", parsed.schema)));
        }
        out.push(parsed.instance);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shidoku_cfg() -> TaskConfig {
        TaskConfig::Shidoku { givens_min: 6, givens_max: 10, train_size: 50, test_size: 20 }
    }

    #[test]
    fn encode_shapes_and_round_trip() {
        let maze = TaskConfig::Maze {
            spec: MazeSpec { h: 9, w: 9, wall_density: 0.3, placement: maze::Placement::Random, unique_path: true },
            train_size: 5,
            test_size: 5,
        };
        for cfg in [maze, shidoku_cfg()] {
            let (train, _) = gen_datasets(&cfg, 3).unwrap();
            for inst in train {
                let ex = inst.encode();
                assert_eq!(ex.input.shape, cfg.input_shape().to_vec());
                assert_eq!(decode(inst.kind(), &ex).unwrap(), inst);
                assert!(inst.score(&ex.targets));
            }
        }
    }

    #[test]
    fn splits_are_disjoint_and_reproducible() {
        let (a, b) = gen_datasets(&shidoku_cfg(), 1).unwrap();
        let (a2, b2) = gen_datasets(&shidoku_cfg(), 1).unwrap();
        assert_eq!((a.clone(), b.clone()), (a2, b2));
        let keys: HashSet<String> = a.iter().map(|i| instance_key(i).unwrap()).collect();
        assert!(b.iter().all(|i| !keys.contains(&instance_key(i).unwrap())));
        assert_eq!(b.len(), 20);
    }

    #[test]
    fn jsonl_round_trip() {
        let (a, _) = gen_datasets(&shidoku_cfg(), 2).unwrap();
        let mut buf = Vec::new();
        write_jsonl(&a, &mut buf).unwrap();
        assert_eq!(read_jsonl(&buf[..]).unwrap(), a);
        let first = String::from_utf8(buf).unwrap().lines().next().unwrap().to_string();
        assert!(first.contains("\"schema\":1"));
    }

    #[test]
    fn shidoku_score_ignores_given_cells() {
        let (a, _) = gen_datasets(&shidoku_cfg(), 4).unwrap();
        let ex = a[0].encode();
        let mut p = ex.targets.clone();
        let given = ex.mask.iter().position(|m| !m).unwrap();
        p[given] = (p[given] + 1) % 4;
        assert!(a[0].score(&p));
        let blank = ex.mask.iter().position(|m| *m).unwrap();
        p[blank] = (p[blank] + 1) % 4;
        assert!(!a[0].score(&p));
    }
}
