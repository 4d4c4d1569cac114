use proptest::prelude::*;
use std::collections::HashSet;
use wonn::tasks::maze::{gen_maze, mask_solves, maze_oracle, transform, Cell, MazeInstance, MazeSpec, Placement};
use wonn::tasks::shidoku::{all_grids, count_solutions, gen_shidoku, Board};
use wonn::tasks::{gen_datasets, Instance, TaskConfig};

fn permutations(items: &[u8]) -> Vec<Vec<u8>> {
    if items.len() <= 1 {
        return vec![items.to_vec()];
    }
    let mut out = Vec::new();
    for i in 0..items.len() {
        let mut rest = items.to_vec();
        let x = rest.remove(i);
        for mut p in permutations(&rest) {
            p.insert(0, x);
            out.push(p);
        }
    }
    out
}

/// Every grid whose rows are permutations of 1..=4 with distinct columns
/// and boxes, by exhaustive search over 24^4 row choices.
fn brute_force_grids() -> Vec<Board> {
    let perms = permutations(&[1, 2, 3, 4]);
    let mut out = Vec::new();
    for a in &perms {
        for b in &perms {
            for c in &perms {
                for d in &perms {
                    let rows = [a, b, c, d];
                    let mut g = [0u8; 16];
                    for r in 0..4 {
                        g[r * 4..r * 4 + 4].copy_from_slice(rows[r]);
                    }
                    let cols_ok = (0..4).all(|c| (0..4).map(|r| g[r * 4 + c]).collect::<HashSet<_>>().len() == 4);
                    let boxes_ok = [0, 2].iter().all(|&br| {
                        [0, 2].iter().all(|&bc| {
                            [(0, 0), (0, 1), (1, 0), (1, 1)].iter().map(|(x, y)| g[(br + x) * 4 + bc + y]).collect::<HashSet<_>>().len() == 4
                        })
                    });
                    if cols_ok && boxes_ok {
                        out.push(g);
                    }
                }
            }
        }
    }
    out
}

#[test]
fn shidoku_grids_match_brute_force() {
    let brute = brute_force_grids();
    assert_eq!(brute.len(), 288);
    let lib: HashSet<Board> = all_grids().iter().copied().collect();
    assert_eq!(lib, brute.into_iter().collect::<HashSet<_>>());
}

#[test]
fn shidoku_uniqueness_matches_grid_scan() {
    let grids = brute_force_grids();
    for seed in 0..40 {
        let p = gen_shidoku(6 + (seed as usize % 5), seed).unwrap();
        let consistent = grids
            .iter()
            .filter(|g| p.givens.iter().zip(g.iter()).all(|(a, b)| *a == 0 || a == b))
            .count();
        assert_eq!(consistent, 1, "seed {seed}");
        // Dropping givens can only keep or increase the solution count.
        let mut fewer = p.givens;
        if let Some(i) = fewer.iter().position(|&d| d != 0) {
            fewer[i] = 0;
        }
        let scan = grids.iter().filter(|g| fewer.iter().zip(g.iter()).all(|(a, b)| *a == 0 || a == b)).count();
        assert_eq!(count_solutions(&fewer, 1000), scan);
    }
}

/// Shortest path length by exhaustive depth-first search over simple paths.
fn dfs_shortest(inst: &MazeInstance) -> Option<usize> {
    fn go(inst: &MazeInstance, at: Cell, seen: &mut Vec<bool>, len: usize, best: &mut Option<usize>) {
        if best.is_some_and(|b| len >= b) {
            return;
        }
        if at == inst.goal {
            *best = Some(len);
            return;
        }
        for (dr, dc) in [(-1isize, 0isize), (1, 0), (0, -1), (0, 1)] {
            let (r, c) = (at.0 as isize + dr, at.1 as isize + dc);
            if r < 0 || c < 0 || r >= inst.h as isize || c >= inst.w as isize {
                continue;
            }
            let i = r as usize * inst.w + c as usize;
            if inst.walls[i] || seen[i] {
                continue;
            }
            seen[i] = true;
            go(inst, (r as usize, c as usize), seen, len + 1, best);
            seen[i] = false;
        }
    }
    let mut seen = vec![false; inst.h * inst.w];
    seen[inst.start.0 * inst.w + inst.start.1] = true;
    let mut best = None;
    go(inst, inst.start, &mut seen, 1, &mut best);
    best
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn bfs_matches_exhaustive_search(walls in prop::collection::vec(prop::bool::weighted(0.3), 25), s in 0usize..25, g in 0usize..25) {
        prop_assume!(s != g && !walls[s] && !walls[g]);
        let (start, goal) = ((s / 5, s % 5), (g / 5, g % 5));
        let inst = MazeInstance { h: 5, w: 5, walls: walls.clone(), start, goal, optimal_path: vec![] };
        let oracle = maze_oracle(&walls, 5, 5, start, goal);
        prop_assert_eq!(oracle.as_ref().map(Vec::len), dfs_shortest(&inst));
        if let Some(p) = oracle {
            let inst = MazeInstance { optimal_path: p, ..inst };
            prop_assert!(mask_solves(&inst, &inst.path_mask()));
            prop_assert!(inst.validate().is_ok());
        }
    }

    #[test]
    fn symmetries_preserve_solutions(seed in 0u64..500, sym in 0usize..8) {
        let spec = MazeSpec { h: 7, w: 7, wall_density: 0.3, placement: Placement::Random, unique_path: true };
        let m = gen_maze(&spec, seed).unwrap();
        let t = transform(&m, sym);
        prop_assert!(t.validate().is_ok());
        prop_assert!(mask_solves(&t, &t.path_mask()));
        prop_assert_eq!(Some(t.optimal_path.len()), dfs_shortest(&t));
    }
}

#[test]
fn mask_scoring_rejects_extras_and_gaps() {
    let spec = MazeSpec { h: 9, w: 9, wall_density: 0.3, placement: Placement::Random, unique_path: true };
    for seed in 0..30 {
        let m = gen_maze(&spec, seed).unwrap();
        let mask = m.path_mask();
        assert!(mask_solves(&m, &mask));
        // One extra open cell.
        if let Some(i) = (0..81).find(|&i| !m.walls[i] && !mask[i]) {
            let mut extra = mask.clone();
            extra[i] = true;
            assert!(!mask_solves(&m, &extra));
        }
        // A gap in the middle of the path.
        if m.optimal_path.len() > 2 {
            let (r, c) = m.optimal_path[1];
            let mut gap = mask.clone();
            gap[r * 9 + c] = false;
            assert!(!mask_solves(&m, &gap));
        }
        assert!(!mask_solves(&m, &vec![false; 81]));
    }
}

#[test]
fn datasets_are_deterministic_and_disjoint() {
    let cfg = TaskConfig::Shidoku { givens_min: 6, givens_max: 10, train_size: 300, test_size: 50 };
    let (a_train, a_test) = gen_datasets(&cfg, 8).unwrap();
    let (b_train, b_test) = gen_datasets(&cfg, 8).unwrap();
    assert_eq!(a_train, b_train);
    assert_eq!(a_test, b_test);
    let train: HashSet<String> = a_train.iter().map(|i| serde_json::to_string(i).unwrap()).collect();
    assert!(a_test.iter().all(|i| !train.contains(&serde_json::to_string(i).unwrap())));
    for inst in a_train.iter().chain(&a_test) {
        inst.validate().unwrap();
        let Instance::Shidoku(s) = inst else { panic!("wrong kind") };
        assert!((6..=10).contains(&s.num_givens()));
    }
}
