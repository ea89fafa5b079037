//! Sampling boxes and the conic domain of a metric.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::norm;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FiberPoint {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl FiberPoint {
    pub fn new(x: &[f64], y: &[f64]) -> FiberPoint {
        FiberPoint { x: x.to_vec(), y: y.to_vec() }
    }
}

const PRIMES: [u32; 16] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53];

/// Radical inverse of `index` in `base`.
pub fn halton(mut index: u64, base: u32) -> f64 {
    let b = base as f64;
    let mut f = 1.0;
    let mut r = 0.0;
    while index > 0 {
        f /= b;
        r += f * (index % base as u64) as f64;
        index /= base as u64;
    }
    r
}

/// Deterministic points in `[0, 1)^dim`, skipping the first 20 indices.
pub fn halton_points(dim: usize, count: usize, offset: u64) -> Vec<Vec<f64>> {
    assert!(dim <= PRIMES.len(), "Halton sequence limited to {} dimensions", PRIMES.len());
    (0..count as u64)
        .map(|i| (0..dim).map(|d| halton(i + 20 + offset, PRIMES[d])).collect())
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    pub x_box: Vec<[f64; 2]>,
    pub y_box: Vec<[f64; 2]>,
    /// Radius of the excluded ball around the zero section.
    #[serde(default = "default_y_min")]
    pub y_min: f64,
}

pub fn default_y_min() -> f64 {
    1e-3
}

impl Domain {
    pub fn n(&self) -> usize {
        self.x_box.len()
    }

    pub fn k(&self) -> usize {
        self.y_box.len()
    }

    pub fn validate(&self) -> Result<()> {
        for (i, [lo, hi]) in self.x_box.iter().chain(&self.y_box).enumerate() {
            if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(Error::Spec(format!("box interval {i} is empty or unbounded: [{lo}, {hi}]")));
            }
        }
        if !(self.y_min >= 0.0) {
            return Err(Error::Spec(format!("y_min must be non-negative, got {}", self.y_min)));
        }
        Ok(())
    }

    pub fn contains_x(&self, x: &[f64], margin: f64) -> bool {
        x.len() == self.n()
            && x.iter().zip(&self.x_box).all(|(v, [lo, hi])| *v >= lo + margin && *v <= hi - margin)
    }

    pub fn cone_ok(&self, y: &[f64], margin: f64) -> bool {
        norm(y) >= self.y_min + margin
    }

    fn map(unit: &[f64], bx: &[[f64; 2]]) -> Vec<f64> {
        unit.iter().zip(bx).map(|(u, [lo, hi])| lo + u * (hi - lo)).collect()
    }

    /// Quasi-random fiber points in the box, outside the excluded ball.
    pub fn sample(&self, count: usize, offset: u64) -> Vec<FiberPoint> {
        let (n, k) = (self.n(), self.k());
        let mut out = Vec::with_capacity(count);
        let mut idx = offset;
        while out.len() < count {
            let batch = halton_points(n + k, count, idx);
            idx += count as u64;
            for u in batch {
                let p = FiberPoint { x: Self::map(&u[..n], &self.x_box), y: Self::map(&u[n..], &self.y_box) };
                // keep clear of the excluded ball with a 10% margin
                if norm(&p.y) >= 1.1 * self.y_min && out.len() < count {
                    out.push(p);
                }
            }
        }
        out
    }

    /// Quasi-random base points, shrunk towards the centre by `shrink`.
    pub fn sample_base(&self, count: usize, offset: u64, shrink: f64) -> Vec<Vec<f64>> {
        let inner: Vec<[f64; 2]> = self
            .x_box
            .iter()
            .map(|[lo, hi]| {
                let c = 0.5 * (lo + hi);
                let r = 0.5 * (hi - lo) * (1.0 - shrink);
                [c - r, c + r]
            })
            .collect();
        halton_points(self.n(), count, offset).iter().map(|u| Self::map(u, &inner)).collect()
    }

    pub fn centre(&self) -> Vec<f64> {
        self.x_box.iter().map(|[lo, hi]| 0.5 * (lo + hi)).collect()
    }
}
