//! Toy image classification: parametric shapes with jitter and noise.

use crate::error::{Result, WonnError};
use crate::rng::stream;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlobInstance {
    pub h: usize,
    pub w: usize,
    /// Row-major intensities in `[0, 1]`.
    pub image: Vec<f64>,
    pub label: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlobSpec {
    pub h: usize,
    pub w: usize,
    pub num_classes: usize,
    /// Standard deviation of additive Gaussian pixel noise.
    #[serde(default = "noise")]
    pub noise: f64,
    /// Randomize centre and size.
    #[serde(default = "yes")]
    pub jitter: bool,
}

fn noise() -> f64 {
    0.1
}
fn yes() -> bool {
    true
}

/// Shape families, indexed by label.
pub const SHAPES: [&str; 6] = ["disc", "horizontal_bar", "cross", "ring", "vertical_bar", "square"];

fn render(shape: usize, y: f64, x: f64, cy: f64, cx: f64, r: f64) -> f64 {
    let (dy, dx) = (y - cy, x - cx);
    let inside = match shape {
        0 => dy * dy + dx * dx <= r * r,
        1 => dy.abs() <= 0.3 * r && dx.abs() <= r,
        2 => (dy.abs() <= 0.25 * r && dx.abs() <= r) || (dx.abs() <= 0.25 * r && dy.abs() <= r),
        3 => {
            let d = (dy * dy + dx * dx).sqrt();
            d <= r && d >= 0.55 * r
        }
        4 => dx.abs() <= 0.3 * r && dy.abs() <= r,
        _ => dy.abs() <= 0.75 * r && dx.abs() <= 0.75 * r,
    };
    if inside {
        1.0
    } else {
        0.0
    }
}

pub fn gen_blobs(spec: &BlobSpec, seed: u64) -> Result<BlobInstance> {
    let BlobSpec { h, w, num_classes, noise, jitter } = *spec;
    if !(2..=SHAPES.len()).contains(&num_classes) {
        return Err(WonnError::domain(format!("num_classes must be in 2..={}, got {num_classes}", SHAPES.len())));
    }
    if h < 4 || w < 4 {
        return Err(WonnError::domain("blob images must be at least 4x4"));
    }
    if !(noise >= 0.0) || !noise.is_finite() {
        return Err(WonnError::domain(format!("noise must be non-negative, got {noise}")));
    }
    let mut rng = stream(seed, "blobs");
    let label = rng.gen_range(0..num_classes);
    let side = h.min(w) as f64;
    let (mut cy, mut cx, mut r) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0, 0.35 * side);
    if jitter {
        r = side * rng.gen_range(0.25..0.4);
        let spread = 0.12 * side;
        cy += rng.gen_range(-spread..=spread);
        cx += rng.gen_range(-spread..=spread);
    }
    let dist = Normal::new(0.0, noise.max(f64::MIN_POSITIVE)).expect("finite sigma");
    let image = (0..h * w)
        .map(|i| {
            let v = render(label, (i / w) as f64, (i % w) as f64, cy, cx, r);
            let n = if noise > 0.0 { dist.sample(&mut rng) } else { 0.0 };
            (v + n).clamp(0.0, 1.0)
        })
        .collect();
    Ok(BlobInstance { h, w, image, label })
}
