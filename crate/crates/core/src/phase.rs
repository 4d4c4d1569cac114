//! Phases on the circle and torus: wrapping, the (sin, cos) embedding,
//! phase recovery via atan2, order parameter and phase histograms.
//!
//! All phases use the half-open range `[-pi, pi)`; `pi` itself maps to `-pi`.

use crate::error::{Result, WonnError};
use serde::{Deserialize, Serialize};
use std::f64::consts::{PI, TAU};

/// Wrap a finite angle into `[-pi, pi)`. Values already in range are
/// returned untouched, which makes the map exactly idempotent.
#[inline]
pub fn wrap_unchecked(angle: f64) -> f64 {
    if (-PI..PI).contains(&angle) {
        return angle;
    }
    let r = (angle + PI).rem_euclid(TAU) - PI;
    // rem_euclid can round up to TAU for inputs just below a multiple of it.
    if r >= PI {
        r - TAU
    } else if r < -PI {
        -PI
    } else {
        r
    }
}

pub fn wrap(angle: f64) -> Result<f64> {
    if !angle.is_finite() {
        return Err(WonnError::domain(format!("cannot wrap non-finite angle {angle}")));
    }
    Ok(wrap_unchecked(angle))
}

/// Shortest signed distance from `b` to `a` on the circle.
pub fn circular_diff(a: f64, b: f64) -> f64 {
    wrap_unchecked(a - b)
}

/// A single phase in `[-pi, pi)`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct Phase(f64);

impl Phase {
    pub fn new(angle: f64) -> Result<Self> {
        wrap(angle).map(Phase)
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FieldShape {
    Flat(usize),
    Grid { h: usize, w: usize, c: usize },
}

impl FieldShape {
    pub fn len(&self) -> usize {
        match *self {
            FieldShape::Flat(d) => d,
            FieldShape::Grid { h, w, c } => h * w * c,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dims(&self) -> Vec<usize> {
        match *self {
            FieldShape::Flat(d) => vec![d],
            FieldShape::Grid { h, w, c } => vec![h, w, c],
        }
    }
}

/// Oscillator phases, every element in `[-pi, pi)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseField {
    shape: FieldShape,
    data: Vec<f64>,
}

impl PhaseField {
    /// Build a field, wrapping every angle into range.
    pub fn from_angles(shape: FieldShape, angles: Vec<f64>) -> Result<Self> {
        if shape.len() != angles.len() {
            return Err(WonnError::shape(format!(
                "field shape {:?} holds {} phases, got {}",
                shape,
                shape.len(),
                angles.len()
            )));
        }
        let data = angles.into_iter().map(wrap).collect::<Result<Vec<_>>>()?;
        Ok(PhaseField { shape, data })
    }

    pub fn flat(angles: Vec<f64>) -> Result<Self> {
        Self::from_angles(FieldShape::Flat(angles.len()), angles)
    }

    pub fn constant(shape: FieldShape, angle: f64) -> Result<Self> {
        Self::from_angles(shape, vec![angle; shape.len()])
    }

    pub fn shape(&self) -> FieldShape {
        self.shape
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, i: usize) -> Phase {
        Phase(self.data[i])
    }
}

/// Elementwise `(sin, cos)` of a phase field. Not necessarily unit norm once
/// a linear map has been applied to both parts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CircleEmbedding {
    pub shape: FieldShape,
    pub sin_part: Vec<f64>,
    pub cos_part: Vec<f64>,
}

pub fn embed_circle(theta: &PhaseField) -> CircleEmbedding {
    let (sin_part, cos_part) = theta.as_slice().iter().map(|t| t.sin_cos()).unzip();
    CircleEmbedding { shape: theta.shape(), sin_part, cos_part }
}

/// `atan2(sin_part, cos_part)` elementwise, wrapped into `[-pi, pi)`.
pub fn recover_phase(e: &CircleEmbedding) -> Result<PhaseField> {
    if e.sin_part.len() != e.cos_part.len() || e.sin_part.len() != e.shape.len() {
        return Err(WonnError::shape("sin/cos parts disagree with the field shape"));
    }
    let data = e
        .sin_part
        .iter()
        .zip(&e.cos_part)
        .enumerate()
        .map(|(i, (&s, &c))| {
            if s == 0.0 && c == 0.0 {
                Err(WonnError::numeric(format!("degenerate direction (0, 0) at element {i}")))
            } else {
                wrap(s.atan2(c))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PhaseField { shape: e.shape, data })
}

/// Kuramoto order parameter: `R e^{i psi} = mean_j e^{i theta_j}`.
pub fn order_parameter(theta: &[f64]) -> Result<(f64, f64)> {
    if theta.is_empty() {
        return Err(WonnError::domain("order parameter of an empty field"));
    }
    let (s, c) = theta
        .iter()
        .fold((0.0, 0.0), |(s, c), t| (s + t.sin(), c + t.cos()));
    let n = theta.len() as f64;
    let (s, c) = (s / n, c / n);
    let r = s.hypot(c).min(1.0);
    Ok((r, wrap_unchecked(s.atan2(c))))
}

/// Equal-width histogram over `[-pi, pi)` with half-open bins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseHistogram {
    pub bin_edges: Vec<f64>,
    pub counts: Vec<u64>,
}

pub fn phase_histogram(theta: &[f64], bins: usize) -> Result<PhaseHistogram> {
    if bins == 0 {
        return Err(WonnError::domain("histogram needs at least one bin"));
    }
    let width = TAU / bins as f64;
    let bin_edges = (0..=bins).map(|k| -PI + width * k as f64).collect();
    let mut counts = vec![0u64; bins];
    for &t in theta {
        let t = wrap(t)?;
        let idx = (((t + PI) / TAU) * bins as f64).floor() as usize;
        counts[idx.min(bins - 1)] += 1;
    }
    Ok(PhaseHistogram { bin_edges, counts })
}

impl PhaseHistogram {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Circular local maxima of the counts, highest first, as (bin, count).
    pub fn modes(&self) -> Vec<(usize, u64)> {
        let n = self.counts.len();
        let mut modes: Vec<(usize, u64)> = (0..n)
            .filter(|&i| {
                let c = self.counts[i];
                let prev = self.counts[(i + n - 1) % n];
                let next = self.counts[(i + 1) % n];
                c > 0 && c >= prev && c > next
            })
            .map(|i| (i, self.counts[i]))
            .collect();
        modes.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        modes
    }

    /// Bimodality summary: (second mode / first mode, angular separation of
    /// the two mode centres). `None` when fewer than two modes exist.
    pub fn top_two_modes(&self) -> Option<(f64, f64)> {
        let modes = self.modes();
        if modes.len() < 2 {
            return None;
        }
        let centre = |i: usize| 0.5 * (self.bin_edges[i] + self.bin_edges[i + 1]);
        let sep = circular_diff(centre(modes[0].0), centre(modes[1].0)).abs();
        Some((modes[1].1 as f64 / modes[0].1 as f64, sep))
    }
}
