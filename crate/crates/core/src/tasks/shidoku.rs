//! 4x4 Sudoku (Shidoku) with a backtracking solution counter.

use crate::error::{Result, WonnError};
use crate::rng::stream;
use rand::seq::{index::sample, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::sync::OnceLock;

/// Cells on the board.
pub const CELLS: usize = 16;

/// Row-major board; 0 is blank, 1..=4 are digits.
pub type Board = [u8; CELLS];

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ShidokuInstance {
    pub givens: Board,
    pub solution: Board,
}

/// Attempts per requested puzzle before giving up.
pub const SHIDOKU_RETRIES: usize = 10_000;

fn allowed(b: &Board, i: usize, d: u8) -> bool {
    let (r, c) = (i / 4, i % 4);
    let (br, bc) = (r / 2 * 2, c / 2 * 2);
    (0..4).all(|k| b[r * 4 + k] != d && b[k * 4 + c] != d)
        && (0..2).all(|a| (0..2).all(|e| b[(br + a) * 4 + bc + e] != d))
}

fn search(b: &mut Board, limit: usize, out: &mut Vec<Board>, count: &mut usize) {
    if *count >= limit {
        return;
    }
    let Some(i) = b.iter().position(|&v| v == 0) else {
        *count += 1;
        out.push(*b);
        return;
    };
    for d in 1..=4 {
        if allowed(b, i, d) {
            b[i] = d;
            search(b, limit, out, count);
            b[i] = 0;
        }
    }
}

/// Solutions of `board`, stopping after `limit`. Givens that already clash
/// yield no solutions.
pub fn solve(board: &Board, limit: usize) -> Vec<Board> {
    for i in 0..CELLS {
        let d = board[i];
        if d > 4 {
            return Vec::new();
        }
        if d != 0 {
            let mut b = *board;
            b[i] = 0;
            if !allowed(&b, i, d) {
                return Vec::new();
            }
        }
    }
    let mut out = Vec::new();
    let mut count = 0;
    search(&mut board.clone(), limit, &mut out, &mut count);
    out
}

pub fn count_solutions(board: &Board, limit: usize) -> usize {
    solve(board, limit).len()
}

/// Every complete valid grid, in lexicographic order.
pub fn all_grids() -> &'static [Board] {
    static GRIDS: OnceLock<Vec<Board>> = OnceLock::new();
    GRIDS.get_or_init(|| solve(&[0; CELLS], usize::MAX))
}

pub fn is_valid_solution(b: &Board) -> bool {
    b.iter().all(|&d| (1..=4).contains(&d)) && (0..CELLS).all(|i| {
        let mut t = *b;
        t[i] = 0;
        allowed(&t, i, b[i])
    })
}

impl ShidokuInstance {
    pub fn num_givens(&self) -> usize {
        self.givens.iter().filter(|&&d| d != 0).count()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(WonnError::Generation(format!("invalid shidoku: {m}")));
        if !is_valid_solution(&self.solution) {
            return bad("solution breaks a constraint");
        }
        if self.givens.iter().zip(&self.solution).any(|(g, s)| *g != 0 && g != s) {
            return bad("givens disagree with the solution");
        }
        if count_solutions(&self.givens, 2) != 1 {
            return bad("puzzle does not have exactly one solution");
        }
        Ok(())
    }
}

/// Unique-solution puzzle with exactly `num_givens` givens.
pub fn gen_shidoku(num_givens: usize, seed: u64) -> Result<ShidokuInstance> {
    if !(4..=CELLS).contains(&num_givens) {
        return Err(WonnError::domain(format!("givens must be in 4..=16, got {num_givens}")));
    }
    let mut rng = stream(seed, "shidoku");
    let grids = all_grids();
    for _ in 0..SHIDOKU_RETRIES {
        let solution = *grids.choose(&mut rng).expect("288 grids");
        let mut givens = [0u8; CELLS];
        for i in sample(&mut rng, CELLS, num_givens) {
            givens[i] = solution[i];
        }
        if count_solutions(&givens, 2) == 1 {
            return Ok(ShidokuInstance { givens, solution });
        }
    }
    Err(WonnError::Generation(format!("no unique puzzle with {num_givens} givens in {SHIDOKU_RETRIES} tries")))
}

/// Validity-preserving relabelling: digit permutation `digits`
/// (`digits[d-1]` replaces `d`), then the board symmetry `sym` in
/// `0..128` (band swap, row swaps within bands, same for columns,
/// transpose).
pub fn transform(inst: &ShidokuInstance, digits: [u8; 4], sym: usize) -> ShidokuInstance {
    let order = |bits: usize| -> [usize; 4] {
        let bands = if bits & 1 != 0 { [2, 0] } else { [0, 2] };
        let first = if bits & 2 != 0 { [1, 0] } else { [0, 1] };
        let second = if bits & 4 != 0 { [1, 0] } else { [0, 1] };
        [bands[0] + first[0], bands[0] + first[1], bands[1] + second[0], bands[1] + second[1]]
    };
    let rows = order(sym & 7);
    let cols = order((sym >> 3) & 7);
    let transpose = sym & 64 != 0;
    let map = |b: &Board| -> Board {
        let mut out = [0u8; CELLS];
        for r in 0..4 {
            for c in 0..4 {
                let (sr, sc) = (rows[r], cols[c]);
                let d = if transpose { b[sc * 4 + sr] } else { b[sr * 4 + sc] };
                out[r * 4 + c] = if d == 0 { 0 } else { digits[(d - 1) as usize] };
            }
        }
        out
    };
    ShidokuInstance { givens: map(&inst.givens), solution: map(&inst.solution) }
}

/// Random symmetry draw for augmentation.
pub fn random_transform<R: Rng>(inst: &ShidokuInstance, rng: &mut R) -> ShidokuInstance {
    let mut digits = [1, 2, 3, 4];
    digits.shuffle(rng);
    transform(inst, digits, rng.gen_range(0..128))
}
