//! Aggregated influence `sum_j c_ij I(theta_j)` under dense, stencil or
//! attentive coupling, plus the grouped (patch) influence.

use crate::error::{Result, WonnError};
use crate::phase::CircleEmbedding;
use crate::tensor::{conv2d, gemm, softmax_rows, ConvShape, Tensor};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq)]
pub enum CouplingSpec {
    /// `d x d` row-major matrix over the flattened field.
    Dense { d: usize, matrix: Vec<f64> },
    /// `[k, k, c_in, c_out]` kernel, zero padding, same spatial size.
    Stencil { k: usize, c_in: usize, c_out: usize, kernel: Vec<f64> },
    /// Single-head attention. `wq`, `wk` are `[2C, C]` (acting on the
    /// `(sin, cos)` features), `wv` is `[C, C]` (acting on the influence).
    Attentive { channels: usize, wq: Vec<f64>, wk: Vec<f64>, wv: Vec<f64> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CouplingKind {
    Dense,
    Stencil,
    Attentive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CouplingInit {
    /// Kind-specific default: uniform +-1/sqrt(fan_in) for stencil and
    /// attentive, symmetric Gaussian for dense.
    Default,
    Identity,
    Zero,
    /// `(A + A^T) / 2` with `A_ij ~ N(0, 1/d)`.
    Symmetric,
}

/// The `"coupling"` section of a model config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplingConfig {
    pub kind: CouplingKind,
    #[serde(default = "default_init")]
    pub init: CouplingInit,
    #[serde(default = "default_kernel")]
    pub kernel_size: usize,
    /// Multiplies every initial weight.
    #[serde(default = "default_scale")]
    pub scale: f64,
}

fn default_init() -> CouplingInit {
    CouplingInit::Default
}
fn default_kernel() -> usize {
    3
}
fn default_scale() -> f64 {
    1.0
}

impl CouplingConfig {
    pub fn new(kind: CouplingKind) -> Self {
        CouplingConfig { kind, init: CouplingInit::Default, kernel_size: 3, scale: 1.0 }
    }
}

/// Tile size for grouped influence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupSpec {
    pub group_size: usize,
}

impl GroupSpec {
    pub fn new(group_size: usize) -> Result<Self> {
        if group_size == 0 {
            return Err(WonnError::domain("group size must be at least 1"));
        }
        Ok(GroupSpec { group_size })
    }

    pub fn check(&self, h: usize, w: usize) -> Result<()> {
        let n = self.group_size;
        if n == 0 || h % n != 0 || w % n != 0 {
            return Err(WonnError::shape(format!("{h}x{w} grid is not divisible into {n}x{n} groups")));
        }
        Ok(())
    }
}

pub(crate) fn uniform_vec(rng: &mut ChaCha8Rng, n: usize, bound: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-bound..=bound)).collect()
}

fn symmetric_gaussian(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    let sd = (1.0 / d as f64).sqrt();
    let a: Vec<f64> = (0..d * d)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            sd * z
        })
        .collect();
    let mut m = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            m[i * d + j] = 0.5 * (a[i * d + j] + a[j * d + i]);
        }
    }
    m
}

fn identity(d: usize) -> Vec<f64> {
    let mut m = vec![0.0; d * d];
    (0..d).for_each(|i| m[i * d + i] = 1.0);
    m
}

/// Initialize a coupling for an `h x w x c` field.
pub fn build_coupling(cfg: &CouplingConfig, h: usize, w: usize, c: usize, rng: &mut ChaCha8Rng) -> Result<CouplingSpec> {
    let s = cfg.scale;
    let scaled = |v: Vec<f64>| v.into_iter().map(|x| x * s).collect::<Vec<_>>();
    Ok(match cfg.kind {
        CouplingKind::Dense => {
            let d = h * w * c;
            let matrix = match cfg.init {
                CouplingInit::Identity => identity(d),
                CouplingInit::Zero => vec![0.0; d * d],
                CouplingInit::Default | CouplingInit::Symmetric => symmetric_gaussian(rng, d),
            };
            CouplingSpec::Dense { d, matrix: scaled(matrix) }
        }
        CouplingKind::Stencil => {
            let k = cfg.kernel_size;
            if k % 2 == 0 {
                return Err(WonnError::config(format!("stencil kernel size must be odd, got {k}")));
            }
            let n = k * k * c * c;
            let kernel = match cfg.init {
                CouplingInit::Zero => vec![0.0; n],
                CouplingInit::Identity => {
                    let mut kv = vec![0.0; n];
                    let centre = (k / 2) * k + k / 2;
                    (0..c).for_each(|i| kv[(centre * c + i) * c + i] = 1.0);
                    kv
                }
                _ => uniform_vec(rng, n, 1.0 / ((k * k * c) as f64).sqrt()),
            };
            CouplingSpec::Stencil { k, c_in: c, c_out: c, kernel: scaled(kernel) }
        }
        CouplingKind::Attentive => {
            let (wq, wk, wv) = match cfg.init {
                CouplingInit::Zero => (vec![0.0; 2 * c * c], vec![0.0; 2 * c * c], vec![0.0; c * c]),
                CouplingInit::Identity => {
                    let mut q = vec![0.0; 2 * c * c];
                    (0..c).for_each(|i| q[i * c + i] = 1.0);
                    (q.clone(), q, identity(c))
                }
                _ => {
                    let bq = 1.0 / ((2 * c) as f64).sqrt();
                    let bv = 1.0 / (c as f64).sqrt();
                    (uniform_vec(rng, 2 * c * c, bq), uniform_vec(rng, 2 * c * c, bq), uniform_vec(rng, c * c, bv))
                }
            };
            CouplingSpec::Attentive { channels: c, wq: scaled(wq), wk: scaled(wk), wv: scaled(wv) }
        }
    })
}

/// Split an `[h, w, c]` field into non-overlapping `n x n x c` patches in
/// row-major patch order. Each patch is stored row-major.
pub fn partition_groups(field: &Tensor, g: GroupSpec) -> Result<Vec<Tensor>> {
    let (h, w, c) = grid_dims(field)?;
    g.check(h, w)?;
    let n = g.group_size;
    let mut patches = Vec::with_capacity((h / n) * (w / n));
    for py in 0..h / n {
        for px in 0..w / n {
            let mut data = Vec::with_capacity(n * n * c);
            for y in py * n..(py + 1) * n {
                let start = (y * w + px * n) * c;
                data.extend_from_slice(&field.data[start..start + n * c]);
            }
            patches.push(Tensor { shape: vec![n, n, c], data });
        }
    }
    Ok(patches)
}

/// Inverse of [`partition_groups`].
pub fn assemble_groups(patches: &[Tensor], h: usize, w: usize, g: GroupSpec) -> Result<Tensor> {
    g.check(h, w)?;
    let n = g.group_size;
    let Some(first) = patches.first() else {
        return Err(WonnError::shape("no patches to assemble"));
    };
    let c = first.data.len() / (n * n);
    if patches.len() != (h / n) * (w / n) {
        return Err(WonnError::shape("patch count does not match grid"));
    }
    let mut out = vec![0.0; h * w * c];
    for (p, patch) in patches.iter().enumerate() {
        let (py, px) = (p / (w / n), p % (w / n));
        for r in 0..n {
            let dst = ((py * n + r) * w + px * n) * c;
            out[dst..dst + n * c].copy_from_slice(&patch.data[r * n * c..(r + 1) * n * c]);
        }
    }
    Ok(Tensor { shape: vec![h, w, c], data: out })
}

/// Evaluate `influence_fn` once per patch and broadcast the resulting
/// `c_out`-vector to every member position.
pub fn patch_influence<F>(patches: &[Tensor], h: usize, w: usize, g: GroupSpec, c_out: usize, influence_fn: F) -> Result<Tensor>
where
    F: Fn(&Tensor) -> Vec<f64>,
{
    let n = g.group_size;
    let mut values = Vec::with_capacity(patches.len());
    for patch in patches {
        let v = influence_fn(patch);
        if v.len() != c_out {
            return Err(WonnError::shape(format!("influence function returned {} values, expected {c_out}", v.len())));
        }
        values.push(v);
    }
    let broadcast: Vec<Tensor> = values
        .into_iter()
        .map(|v| Tensor { shape: vec![n, n, c_out], data: (0..n * n).flat_map(|_| v.iter().copied()).collect() })
        .collect();
    assemble_groups(&broadcast, h, w, g)
}

pub(crate) fn grid_dims(t: &Tensor) -> Result<(usize, usize, usize)> {
    match t.shape.as_slice() {
        &[h, w, c] => Ok((h, w, c)),
        other => Err(WonnError::shape(format!("expected an [h, w, c] field, got {other:?}"))),
    }
}

/// Attention weights for the attentive kind: row-stochastic `[P, P]`.
pub fn attention_weights(wq: &[f64], wk: &[f64], c: usize, ctx: &CircleEmbedding) -> Result<Vec<f64>> {
    let d = ctx.sin_part.len();
    if d % c != 0 {
        return Err(WonnError::shape(format!("context of {d} phases is not a multiple of {c} channels")));
    }
    let p = d / c;
    let mut feats = Vec::with_capacity(p * 2 * c);
    for i in 0..p {
        feats.extend_from_slice(&ctx.sin_part[i * c..(i + 1) * c]);
        feats.extend_from_slice(&ctx.cos_part[i * c..(i + 1) * c]);
    }
    let mut q = vec![0.0; p * c];
    let mut k = vec![0.0; p * c];
    gemm(p, 2 * c, c, &feats, false, wq, false, 0.0, &mut q);
    gemm(p, 2 * c, c, &feats, false, wk, false, 0.0, &mut k);
    let mut scores = vec![0.0; p * p];
    gemm(p, c, p, &q, false, &k, true, 0.0, &mut scores);
    let inv = 1.0 / (c as f64).sqrt();
    scores.iter_mut().for_each(|s| *s *= inv);
    let a = softmax_rows(&scores, p);
    if a.iter().any(|v| !v.is_finite()) {
        return Err(WonnError::numeric("non-finite attention weights"));
    }
    Ok(a)
}

/// `sum_j c_ij influence_j` for the given coupling. `influence` is an
/// `[h, w, c]` field (or flat `[d]` for dense coupling).
pub fn apply_coupling(spec: &CouplingSpec, influence: &Tensor, context: &CircleEmbedding) -> Result<Tensor> {
    match spec {
        CouplingSpec::Dense { d, matrix } => {
            if influence.len() != *d {
                return Err(WonnError::shape(format!("dense coupling over {d} oscillators, influence has {}", influence.len())));
            }
            if matrix.iter().any(|v| !v.is_finite()) {
                return Err(WonnError::numeric("non-finite dense coupling"));
            }
            let mut out = vec![0.0; *d];
            gemm(*d, *d, 1, matrix, false, &influence.data, false, 0.0, &mut out);
            Ok(Tensor { shape: influence.shape.clone(), data: out })
        }
        CouplingSpec::Stencil { k, c_in, c_out, kernel } => {
            let (h, w, c) = grid_dims(influence)?;
            if c != *c_in {
                return Err(WonnError::shape(format!("stencil expects {c_in} channels, got {c}")));
            }
            let s = ConvShape { h, w, c_in: *c_in, c_out: *c_out, k: *k };
            Ok(Tensor { shape: vec![h, w, *c_out], data: conv2d(&influence.data, kernel, s) })
        }
        CouplingSpec::Attentive { channels, wq, wk, wv } => {
            let c = *channels;
            let (h, w, ci) = grid_dims(influence)?;
            if ci != c || context.sin_part.len() != h * w * c {
                return Err(WonnError::shape("attentive coupling: influence/context/channel mismatch"));
            }
            let p = h * w;
            let a = attention_weights(wq, wk, c, context)?;
            let mut v = vec![0.0; p * c];
            gemm(p, c, c, &influence.data, false, wv, false, 0.0, &mut v);
            let mut out = vec![0.0; p * c];
            gemm(p, p, c, &a, false, &v, false, 0.0, &mut out);
            Ok(Tensor { shape: vec![h, w, c], data: out })
        }
    }
}

impl CouplingSpec {
    /// Explicit `d x d` matrix of the linear map `influence -> coupled`
    /// (for attentive coupling, at the state given by `context`).
    pub fn effective_matrix(&self, h: usize, w: usize, c: usize, context: &CircleEmbedding) -> Result<Vec<f64>> {
        let d = h * w * c;
        let mut m = vec![0.0; d * d];
        let mut e = Tensor::zeros(&[h, w, c]);
        for j in 0..d {
            e.data.iter_mut().for_each(|v| *v = 0.0);
            e.data[j] = 1.0;
            let col = apply_coupling(self, &e, context)?;
            for i in 0..d {
                m[i * d + j] = col.data[i];
            }
        }
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phase::{embed_circle, FieldShape, PhaseField};
    use crate::rng::stream;

    fn field(h: usize, w: usize, c: usize, f: impl Fn(usize) -> f64) -> Tensor {
        Tensor { shape: vec![h, w, c], data: (0..h * w * c).map(f).collect() }
    }

    fn ctx(h: usize, w: usize, c: usize, seed: u64) -> CircleEmbedding {
        let mut rng = stream(seed, "ctx");
        let angles = (0..h * w * c).map(|_| rng.gen_range(-3.0..3.0)).collect();
        embed_circle(&PhaseField::from_angles(FieldShape::Grid { h, w, c }, angles).unwrap())
    }

    #[test]
    fn partition_counts() {
        let f = field(4, 4, 3, |i| i as f64);
        assert_eq!(partition_groups(&f, GroupSpec::new(2).unwrap()).unwrap().len(), 4);
        assert_eq!(partition_groups(&f, GroupSpec::new(1).unwrap()).unwrap().len(), 16);
        assert_eq!(partition_groups(&f, GroupSpec::new(4).unwrap()).unwrap().len(), 1);
        assert!(matches!(partition_groups(&f, GroupSpec::new(3).unwrap()), Err(WonnError::Shape(_))));
        assert!(GroupSpec::new(0).is_err());
    }

    #[test]
    fn partition_then_assemble_is_exact() {
        let f = field(6, 4, 2, |i| (i as f64 * 0.37).sin());
        for n in [1, 2] {
            let g = GroupSpec::new(n).unwrap();
            let back = assemble_groups(&partition_groups(&f, g).unwrap(), 6, 4, g).unwrap();
            assert_eq!(back, f);
        }
    }

    #[test]
    fn pointwise_influence_equals_elementwise() {
        let f = field(3, 5, 2, |i| i as f64 * 0.21 - 1.0);
        let g = GroupSpec::new(1).unwrap();
        let patches = partition_groups(&f, g).unwrap();
        let out = patch_influence(&patches, 3, 5, g, 2, |p| p.data.iter().map(|t| t.sin()).collect()).unwrap();
        let expected: Vec<f64> = f.data.iter().map(|t| t.sin()).collect();
        assert_eq!(out.data, expected);
    }

    #[test]
    fn patch_mean_of_sin_example() {
        use std::f64::consts::FRAC_PI_2;
        let f = Tensor { shape: vec![2, 2, 1], data: vec![0.0, 0.0, FRAC_PI_2, FRAC_PI_2] };
        let g = GroupSpec::new(2).unwrap();
        let patches = partition_groups(&f, g).unwrap();
        let out = patch_influence(&patches, 2, 2, g, 1, |p| vec![p.data.iter().map(|t| t.sin()).sum::<f64>() / 4.0]).unwrap();
        assert!(out.data.iter().all(|v| (v - 0.5).abs() < 1e-15));
    }

    #[test]
    fn patch_influence_checks_output_width() {
        let f = field(2, 2, 1, |_| 0.0);
        let g = GroupSpec::new(2).unwrap();
        let patches = partition_groups(&f, g).unwrap();
        assert!(patch_influence(&patches, 2, 2, g, 3, |_| vec![0.0]).is_err());
    }

    #[test]
    fn constant_field_gives_constant_influence() {
        let f = field(4, 4, 2, |_| 0.4);
        let g = GroupSpec::new(2).unwrap();
        let patches = partition_groups(&f, g).unwrap();
        let out = patch_influence(&patches, 4, 4, g, 2, |p| vec![p.data.iter().map(|t| t.cos()).sum(), p.data[0]]).unwrap();
        for cell in out.data.chunks(2) {
            assert_eq!(cell, &out.data[..2]);
        }
    }

    #[test]
    fn dense_identity_and_zero() {
        let mut rng = stream(0, "t");
        let infl = field(2, 2, 1, |i| i as f64 + 0.5);
        let c = ctx(2, 2, 1, 1);
        let mut cfg = CouplingConfig::new(CouplingKind::Dense);
        cfg.init = CouplingInit::Identity;
        let id = build_coupling(&cfg, 2, 2, 1, &mut rng).unwrap();
        assert_eq!(apply_coupling(&id, &infl, &c).unwrap().data, infl.data);
        if let CouplingSpec::Dense { d, matrix } = &id {
            assert_eq!(*d, 4);
            assert_eq!(matrix, &identity(4));
        }
        cfg.init = CouplingInit::Zero;
        let zero = build_coupling(&cfg, 2, 2, 1, &mut rng).unwrap();
        assert!(apply_coupling(&zero, &infl, &c).unwrap().data.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn stencil_box_filter_matches_loops() {
        let (h, w) = (5, 6);
        let v = 2.0;
        let spec = CouplingSpec::Stencil { k: 3, c_in: 1, c_out: 1, kernel: vec![1.0 / 9.0; 9] };
        let infl = field(h, w, 1, |_| v);
        let out = apply_coupling(&spec, &infl, &ctx(h, w, 1, 0)).unwrap();
        // direct nested-loop oracle: count of in-bounds neighbours / 9 * v
        for y in 0..h as isize {
            for x in 0..w as isize {
                let mut n = 0;
                for dy in -1..=1 {
                    for dx in -1..=1 {
                        let (yy, xx) = (y + dy, x + dx);
                        if yy >= 0 && xx >= 0 && yy < h as isize && xx < w as isize {
                            n += 1;
                        }
                    }
                }
                let expect = v * n as f64 / 9.0;
                assert!((out.data[(y as usize) * w + x as usize] - expect).abs() < 1e-14);
            }
        }
        assert!((out.data[2 * w + 2] - v).abs() < 1e-14);
        assert!((out.data[0] - v * 4.0 / 9.0).abs() < 1e-14);
    }

    #[test]
    fn build_shapes() {
        let mut rng = stream(3, "t");
        let s = build_coupling(&CouplingConfig::new(CouplingKind::Stencil), 4, 4, 5, &mut rng).unwrap();
        match s {
            CouplingSpec::Stencil { k, c_in, c_out, kernel } => {
                assert_eq!((k, c_in, c_out, kernel.len()), (3, 5, 5, 9 * 25));
                let bound = 1.0 / ((9 * 5) as f64).sqrt();
                assert!(kernel.iter().all(|v| v.abs() <= bound));
            }
            _ => panic!("wrong kind"),
        }
        let a = build_coupling(&CouplingConfig::new(CouplingKind::Attentive), 2, 2, 16, &mut rng).unwrap();
        match a {
            CouplingSpec::Attentive { channels, wq, wk, wv } => {
                assert_eq!(channels, 16);
                assert_eq!((wq.len(), wk.len(), wv.len()), (32 * 16, 32 * 16, 16 * 16));
            }
            _ => panic!("wrong kind"),
        }
        let mut even = CouplingConfig::new(CouplingKind::Stencil);
        even.kernel_size = 4;
        assert!(matches!(build_coupling(&even, 4, 4, 1, &mut rng), Err(WonnError::Config(_))));
    }

    #[test]
    fn unknown_kind_is_config_error() {
        let r: std::result::Result<CouplingConfig, _> = serde_json::from_str(r#"{"kind": "sparse"}"#);
        assert!(r.is_err());
    }

    #[test]
    fn attention_rows_are_stochastic() {
        let mut rng = stream(5, "t");
        let (h, w, c) = (3, 3, 4);
        if let CouplingSpec::Attentive { wq, wk, .. } = build_coupling(&CouplingConfig::new(CouplingKind::Attentive), h, w, c, &mut rng).unwrap() {
            let a = attention_weights(&wq, &wk, c, &ctx(h, w, c, 9)).unwrap();
            for row in a.chunks(h * w) {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
                assert!(row.iter().all(|v| *v >= 0.0));
            }
        }
    }

    #[test]
    fn dense_and_stencil_are_linear() {
        let mut rng = stream(8, "t");
        let (h, w, c) = (3, 4, 2);
        let cx = ctx(h, w, c, 2);
        let x = field(h, w, c, |i| (i as f64 * 0.77).cos());
        let y = field(h, w, c, |i| (i as f64 * 1.31).sin());
        let (a, b) = (0.7, -1.9);
        let comb = Tensor { shape: x.shape.clone(), data: x.data.iter().zip(&y.data).map(|(p, q)| a * p + b * q).collect() };
        for kind in [CouplingKind::Dense, CouplingKind::Stencil] {
            let spec = build_coupling(&CouplingConfig::new(kind), h, w, c, &mut rng).unwrap();
            let fx = apply_coupling(&spec, &x, &cx).unwrap();
            let fy = apply_coupling(&spec, &y, &cx).unwrap();
            let fc = apply_coupling(&spec, &comb, &cx).unwrap();
            for i in 0..fc.len() {
                assert!((fc.data[i] - (a * fx.data[i] + b * fy.data[i])).abs() < 1e-10);
            }
        }
    }
}
