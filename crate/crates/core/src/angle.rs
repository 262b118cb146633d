//! Angle intervals, partitions of the circle and the closed-form Fourier
//! integrals `(1/2pi) int_a^b e^{i k theta} d theta`.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::C64;

/// Half-open interval `[lo, hi)` with `0 <= lo < hi <= 2pi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite()) || lo < 0.0 || hi > TAU || lo >= hi {
            return Err(Error::InvalidInterval { lo, hi });
        }
        Ok(Interval { lo, hi })
    }

    pub fn full() -> Self {
        Interval { lo: 0.0, hi: TAU }
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub fn contains(&self, theta: f64) -> bool {
        theta >= self.lo && theta < self.hi
    }

    /// `self + theta` taken mod 2pi, split into at most two pieces.
    pub fn shifted(&self, theta: f64) -> Vec<Interval> {
        if self.width() >= TAU {
            return vec![Interval::full()];
        }
        let lo = wrap(self.lo + theta);
        let hi = lo + self.width();
        if hi <= TAU {
            vec![Interval { lo, hi }]
        } else {
            let mut out = vec![Interval { lo, hi: TAU }];
            if hi - TAU > 0.0 {
                out.push(Interval { lo: 0.0, hi: hi - TAU });
            }
            out
        }
    }

    /// Intersection with `other`, if non-empty.
    pub fn intersect(&self, other: &Interval) -> Option<Interval> {
        let lo = self.lo.max(other.lo);
        let hi = self.hi.min(other.hi);
        (lo < hi).then_some(Interval { lo, hi })
    }
}

/// Reduce an angle to `[0, 2pi)`.
pub fn wrap(theta: f64) -> f64 {
    let t = theta.rem_euclid(TAU);
    if t >= TAU {
        0.0
    } else {
        t
    }
}

/// `(1/2pi) int_a^b e^{i k theta} d theta`.
///
/// Written as `e^{ik(a+b)/2} sin(k(b-a)/2) / (pi k)`, which avoids the
/// cancellation in `e^{ibk} - e^{iak}` for narrow intervals.
pub fn angle_kernel_integral(k: i64, iv: &Interval) -> C64 {
    if k == 0 {
        return C64::new(iv.width() / TAU, 0.0);
    }
    let kf = k as f64;
    let amp = (0.5 * kf * iv.width()).sin() / (PI * kf);
    C64::from_polar(1.0, 0.5 * kf * (iv.lo + iv.hi)) * amp
}

/// Kernel integral over a disjoint union of intervals.
pub fn angle_kernel_set(k: i64, set: &[Interval]) -> C64 {
    set.iter().map(|iv| angle_kernel_integral(k, iv)).sum()
}

/// `(1/2pi) int_a^b e^{ik theta} (theta - a) d theta`, used for piecewise
/// linear integrands.
pub fn angle_kernel_linear(k: i64, iv: &Interval) -> C64 {
    let h = iv.width();
    if k == 0 {
        return C64::new(h * h / (2.0 * TAU), 0.0);
    }
    let kf = k as f64;
    let i = C64::i();
    let eb = C64::from_polar(1.0, kf * iv.hi);
    let ea = C64::from_polar(1.0, kf * iv.lo);
    // int_0^h t e^{ik(a+t)} dt = e^{ika}[ h e^{ikh}/(ik) + (e^{ikh} - 1)/k^2 ]
    (eb * h / (i * kf) + (eb - ea) / (kf * kf)) / TAU
}

/// Partition of `[0, 2pi)` into consecutive half-open bins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnglePartition {
    edges: Vec<f64>,
}

impl AnglePartition {
    /// `k` equal bins starting at 0.
    pub fn uniform(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidPartition("zero bins".into()));
        }
        let mut edges: Vec<f64> = (0..k).map(|j| TAU * j as f64 / k as f64).collect();
        edges.push(TAU);
        Ok(AnglePartition { edges })
    }

    pub fn from_edges(edges: Vec<f64>) -> Result<Self> {
        if edges.len() < 2 {
            return Err(Error::InvalidPartition("need at least two edges".into()));
        }
        if edges[0] != 0.0 || *edges.last().unwrap() != TAU {
            return Err(Error::InvalidPartition("edges must start at 0 and end at 2pi".into()));
        }
        if edges.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidPartition("edges must be strictly increasing".into()));
        }
        Ok(AnglePartition { edges })
    }

    pub fn len(&self) -> usize {
        self.edges.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn bin(&self, j: usize) -> Interval {
        Interval { lo: self.edges[j], hi: self.edges[j + 1] }
    }

    pub fn bins(&self) -> Vec<Interval> {
        (0..self.len()).map(|j| self.bin(j)).collect()
    }

    /// Bin containing `theta` (after wrapping).
    pub fn locate(&self, theta: f64) -> usize {
        let t = wrap(theta);
        match self.edges.binary_search_by(|e| e.partial_cmp(&t).expect("finite edge")) {
            Ok(i) => i.min(self.len() - 1),
            Err(i) => i - 1,
        }
    }

    /// True when all bins have the same width, so shifts by multiples of the
    /// width permute bins.
    pub fn is_uniform(&self) -> bool {
        let w = TAU / self.len() as f64;
        self.edges
            .iter()
            .enumerate()
            .all(|(j, e)| (e - w * j as f64).abs() < 1e-12)
    }
}

/// Kernel values `K(k, bin_j)` for `k` in `-kmax..=kmax`, laid out as
/// `table[j][k + kmax]`.
pub fn kernel_table(partition: &AnglePartition, kmax: usize) -> Vec<Vec<C64>> {
    let km = kmax as i64;
    partition
        .bins()
        .iter()
        .map(|iv| (-km..=km).map(|k| angle_kernel_integral(k, iv)).collect())
        .collect()
}
