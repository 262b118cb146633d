//! Covariant phase observables defined by phase matrices.

use std::f64::consts::TAU;
use std::sync::Arc;

use rand::Rng;

use crate::angle::{angle_kernel_integral, angle_kernel_linear, angle_kernel_set, AnglePartition, Interval};
use crate::error::{Error, Result};
use crate::fock::{phase_shift_unitary, DensityMatrix};
use crate::linalg::{self, CMatrix};
use crate::par;
use crate::C64;

/// Floor used for every positivity check on effects and phase matrices.
pub const PSD_FLOOR: f64 = -1e-10;

/// Positive semidefinite matrix with unit diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseMatrix {
    c: CMatrix,
}

impl PhaseMatrix {
    /// Validate with the default floor.
    pub fn new(c: CMatrix) -> Result<Self> {
        Self::with_floor(c, PSD_FLOOR)
    }

    /// Validate and pin the diagonal to exactly one. A diagonal further than
    /// `1e-8` from one is rejected.
    pub fn with_floor(mut c: CMatrix, floor: f64) -> Result<Self> {
        let d = c.nrows();
        if d == 0 || c.ncols() != d {
            return Err(Error::InvalidPhaseMatrix("not a non-empty square matrix".into()));
        }
        let herm = linalg::hermiticity_defect(&c);
        if herm > 1e-10 {
            return Err(Error::InvalidPhaseMatrix(format!("hermiticity defect {herm:e}")));
        }
        for m in 0..d {
            let dev = (c[(m, m)] - 1.0).norm();
            if dev > 1e-8 {
                return Err(Error::InvalidPhaseMatrix(format!("diagonal entry {m} off by {dev:e}")));
            }
            c[(m, m)] = C64::new(1.0, 0.0);
        }
        c = linalg::hermitian_part(&c);
        let min_eig = linalg::min_eigenvalue(&c);
        if min_eig < floor {
            return Err(Error::NotPositive { min_eig, floor });
        }
        Ok(PhaseMatrix { c })
    }

    /// All-ones matrix, giving the canonical phase observable.
    pub fn canonical(d: usize) -> Self {
        PhaseMatrix { c: CMatrix::from_element(d, d, C64::new(1.0, 0.0)) }
    }

    /// Identity phase matrix: the trivial phase observable.
    pub fn trivial(d: usize) -> Self {
        PhaseMatrix { c: CMatrix::identity(d, d) }
    }

    /// Gram matrix of `d` random unit vectors in `C^rank`.
    pub fn random<R: Rng + ?Sized>(d: usize, rank: usize, rng: &mut R) -> Self {
        let g = linalg::ginibre(rank.max(1), d, rng);
        let mut cols: Vec<Vec<C64>> = Vec::with_capacity(d);
        for j in 0..d {
            let col: Vec<C64> = g.column(j).iter().copied().collect();
            let n = col.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            cols.push(col.iter().map(|z| z / n).collect());
        }
        let c = CMatrix::from_fn(d, d, |m, n| {
            if m == n {
                C64::new(1.0, 0.0)
            } else {
                cols[m].iter().zip(&cols[n]).map(|(a, b)| a.conj() * b).sum()
            }
        });
        PhaseMatrix { c }
    }

    pub fn dim(&self) -> usize {
        self.c.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.c
    }

    pub fn get(&self, m: usize, n: usize) -> C64 {
        self.c[(m, n)]
    }
}

/// Vectors `eta_m` with `<eta_m|eta_n> = c_mn`.
#[derive(Debug, Clone, PartialEq)]
pub struct StructureVectors {
    pub rank: usize,
    /// `vectors[m]` has length `rank`.
    pub vectors: Vec<Vec<C64>>,
}

impl StructureVectors {
    pub fn dim(&self) -> usize {
        self.vectors.len()
    }

    /// `<eta_m|eta_n>`.
    pub fn gram(&self, m: usize, n: usize) -> C64 {
        self.vectors[m]
            .iter()
            .zip(&self.vectors[n])
            .map(|(a, b)| a.conj() * b)
            .sum()
    }

    pub fn gram_matrix(&self) -> CMatrix {
        let d = self.dim();
        CMatrix::from_fn(d, d, |m, n| self.gram(m, n))
    }

    /// `eta_m` embedded into `C^d` as its first components.
    pub fn embedded(&self, m: usize, d: usize) -> Result<Vec<C64>> {
        if self.rank > d {
            return Err(Error::DimensionMismatch { expected: d, got: self.rank });
        }
        let mut v = vec![C64::new(0.0, 0.0); d];
        v[..self.rank].copy_from_slice(&self.vectors[m]);
        Ok(v)
    }
}

/// Minimal decomposition of `C` from its eigenpairs with
/// `lambda > 1e-12 lambda_max`.
pub fn structure_vectors(c: &PhaseMatrix) -> StructureVectors {
    let (vals, vecs) = linalg::hermitian_eigen(c.matrix());
    let lmax = vals.iter().copied().fold(0.0, f64::max);
    let keep: Vec<usize> = (0..vals.len()).filter(|&a| vals[a] > 1e-12 * lmax).collect();
    let vectors = (0..c.dim())
        .map(|m| {
            keep.iter()
                .map(|&a| vecs[(m, a)].conj() * vals[a].sqrt())
                .collect()
        })
        .collect();
    StructureVectors { rank: keep.len(), vectors }
}

/// Effect over a union of intervals: `c_mn K(m-n, set)`.
pub fn phase_effect_set(c: &PhaseMatrix, set: &[Interval]) -> CMatrix {
    let d = c.dim();
    let ker: Vec<C64> = (0..2 * d - 1)
        .map(|i| angle_kernel_set(i as i64 - (d as i64 - 1), set))
        .collect();
    CMatrix::from_fn(d, d, |m, n| c.get(m, n) * ker[m + d - 1 - n])
}

/// `E(Theta)` with entries `c_mn K(m-n, Theta)`.
pub fn phase_effect(c: &PhaseMatrix, iv: &Interval) -> CMatrix {
    phase_effect_set(c, std::slice::from_ref(iv))
}

/// Effects for every bin of a partition.
pub fn phase_effects(c: &PhaseMatrix, p: &AnglePartition) -> Vec<CMatrix> {
    let bins = p.bins();
    par::map_slice(&bins, |iv| phase_effect(c, iv))
}

/// Canonical effect `E_can(Theta)` at dimension `d`.
pub fn canonical_effect(d: usize, iv: &Interval) -> CMatrix {
    phase_effect(&PhaseMatrix::canonical(d), iv)
}

/// Sums `s_k = sum_{m-n=k} rho_nm c_mn` for `k` in `-(d-1)..=d-1`, stored at
/// `k + d - 1`. Every bin probability is `Re sum_k s_k K(k, bin)`.
pub fn difference_sums(rho: &CMatrix, c: &PhaseMatrix) -> Vec<C64> {
    let d = c.dim();
    let mut s = vec![C64::new(0.0, 0.0); 2 * d - 1];
    for m in 0..d {
        for n in 0..d {
            s[m + d - 1 - n] += rho[(n, m)] * c.get(m, n);
        }
    }
    s
}

/// `p_j = Re tr[rho E(Theta_j)]` for every bin.
pub fn phase_distribution(rho: &DensityMatrix, c: &PhaseMatrix, p: &AnglePartition) -> Result<Vec<f64>> {
    let d = c.dim();
    if rho.dim() != d {
        return Err(Error::DimensionMismatch { expected: d, got: rho.dim() });
    }
    let tr = linalg::trace(&rho.mat).re;
    if (1.0 - tr).abs() > 1e-6 {
        return Err(Error::TraceDeficit { deficit: 1.0 - tr, bound: 1e-6 });
    }
    let s = difference_sums(&rho.mat, c);
    let bins = p.bins();
    let raw = par::map_slice(&bins, |iv| {
        let mut acc = C64::new(0.0, 0.0);
        for (i, sk) in s.iter().enumerate() {
            acc += sk * angle_kernel_integral(i as i64 - (d as i64 - 1), iv);
        }
        acc.re
    });
    clip_probabilities(raw)
}

/// Clip values in `[-1e-10, 0)` to zero; anything lower is an error.
pub fn clip_probabilities(raw: Vec<f64>) -> Result<Vec<f64>> {
    raw.into_iter()
        .map(|v| {
            if v >= 0.0 {
                Ok(v)
            } else if v >= PSD_FLOOR {
                Ok(0.0)
            } else {
                Err(Error::NotPositive { min_eig: v, floor: PSD_FLOOR })
            }
        })
        .collect()
}

/// `|| e^{i theta N} E(Theta) e^{-i theta N} - E(Theta + theta) ||_F`.
pub fn check_covariance(c: &PhaseMatrix, theta: f64, iv: &Interval) -> f64 {
    let d = c.dim();
    let u = phase_shift_unitary(theta, d);
    let rotated = &u * phase_effect(c, iv) * u.adjoint();
    let shifted = phase_effect_set(c, &iv.shifted(theta));
    linalg::frobenius(&(rotated - shifted))
}

/// `B_k = sum_m |m><m+k|`, truncated.
pub fn shift_operator(k: usize, d: usize) -> CMatrix {
    CMatrix::from_fn(d, d, |i, j| if j == i + k { C64::new(1.0, 0.0) } else { C64::new(0.0, 0.0) })
}

/// `max_j || [A, E_can(Theta_j)] ||_F`.
pub fn commutator_defect(a: &CMatrix, p: &AnglePartition) -> Result<f64> {
    if a.nrows() != a.ncols() {
        return Err(Error::DimensionMismatch { expected: a.nrows(), got: a.ncols() });
    }
    let d = a.nrows();
    let effects = phase_effects(&PhaseMatrix::canonical(d), p);
    Ok(effects
        .iter()
        .map(|e| linalg::frobenius(&linalg::commutator(a, e)))
        .fold(0.0, f64::max))
}

/// `1 - |E[e^{i theta}]|` for a binned distribution, taking the probability
/// of each bin as spread uniformly over it.
pub fn circular_variance(probs: &[f64], p: &AnglePartition) -> f64 {
    let mean: C64 = probs
        .iter()
        .zip(p.bins())
        .map(|(pj, iv)| angle_kernel_integral(1, &iv) * (TAU / iv.width()) * *pj)
        .sum();
    1.0 - mean.norm()
}

type KernelFn = Arc<dyn Fn(usize, f64) -> f64 + Send + Sync>;

/// Weak Markov kernel `m(X_j, theta)` from angles to a finite outcome set.
#[derive(Clone)]
pub enum MarkovKernel {
    /// `values[j][i]` is the value on bin `i` of `partition`.
    PiecewiseConstant { partition: AnglePartition, values: Vec<Vec<f64>> },
    /// Continuous, linear between `knots` (which start at 0 and end at 2pi);
    /// `values[j][t]` is the value at knot `t`.
    PiecewiseLinear { knots: Vec<f64>, values: Vec<Vec<f64>> },
    /// Arbitrary kernel, integrated by the 4096-point trapezoid rule.
    Function { outcomes: usize, f: KernelFn },
}

impl std::fmt::Debug for MarkovKernel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MarkovKernel::PiecewiseConstant { values, .. } => {
                write!(f, "PiecewiseConstant({} outcomes)", values.len())
            }
            MarkovKernel::PiecewiseLinear { values, .. } => {
                write!(f, "PiecewiseLinear({} outcomes)", values.len())
            }
            MarkovKernel::Function { outcomes, .. } => write!(f, "Function({outcomes} outcomes)"),
        }
    }
}

/// Trapezoid resolution for [`MarkovKernel::Function`].
pub const KERNEL_TRAPEZOID_POINTS: usize = 4096;

impl MarkovKernel {
    /// `m(X_j, theta) = chi_{Theta_j}(theta)`.
    pub fn indicator(p: &AnglePartition) -> Self {
        let k = p.len();
        let values = (0..k)
            .map(|j| (0..k).map(|i| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        MarkovKernel::PiecewiseConstant { partition: p.clone(), values }
    }

    /// Theta-independent kernel `m(X_j, theta) = mu_j`.
    pub fn constant(mu: &[f64]) -> Self {
        let partition = AnglePartition::uniform(1).expect("one bin");
        let values = mu.iter().map(|&v| vec![v]).collect();
        MarkovKernel::PiecewiseConstant { partition, values }
    }

    /// Smearing of the uniform `k`-bin partition by a box of `width_bins` bins
    /// centred on zero: `m(X_j, theta) = |Theta_j cap (theta + box)| / |box|`.
    pub fn box_smoothing(k: usize, width_bins: usize) -> Result<Self> {
        if k == 0 || width_bins == 0 || width_bins > k {
            return Err(Error::InvalidPartition(format!("box of {width_bins} bins on {k}")));
        }
        let h = TAU / k as f64;
        let half = 0.5 * width_bins as f64 * h;
        let nk = 2 * k;
        let knots: Vec<f64> = (0..=nk).map(|t| TAU * t as f64 / nk as f64).collect();
        let values = (0..k)
            .map(|j| {
                let (lo, hi) = (j as f64 * h, (j + 1) as f64 * h);
                knots
                    .iter()
                    .map(|&theta| {
                        let mut acc = 0.0;
                        for wrap in [-TAU, 0.0, TAU] {
                            let a = (theta - half + wrap).max(lo);
                            let b = (theta + half + wrap).min(hi);
                            acc += (b - a).max(0.0);
                        }
                        acc / (2.0 * half)
                    })
                    .collect()
            })
            .collect();
        Ok(MarkovKernel::PiecewiseLinear { knots, values })
    }

    pub fn outcomes(&self) -> usize {
        match self {
            MarkovKernel::PiecewiseConstant { values, .. } => values.len(),
            MarkovKernel::PiecewiseLinear { values, .. } => values.len(),
            MarkovKernel::Function { outcomes, .. } => *outcomes,
        }
    }

    /// `m(X_j, theta)`.
    pub fn eval(&self, j: usize, theta: f64) -> f64 {
        let t = crate::angle::wrap(theta);
        match self {
            MarkovKernel::PiecewiseConstant { partition, values } => values[j][partition.locate(t)],
            MarkovKernel::PiecewiseLinear { knots, values } => {
                let i = match knots.binary_search_by(|k| k.partial_cmp(&t).expect("finite knot")) {
                    Ok(i) => i.min(knots.len() - 2),
                    Err(i) => i - 1,
                };
                let s = (t - knots[i]) / (knots[i + 1] - knots[i]);
                values[j][i] * (1.0 - s) + values[j][i + 1] * s
            }
            MarkovKernel::Function { f, .. } => f(j, t),
        }
    }

    /// Check `0 <= m <= 1` and `sum_j m(X_j, theta) = 1` at every breakpoint
    /// (or on the trapezoid grid for general kernels).
    pub fn validate(&self) -> Result<()> {
        let thetas: Vec<f64> = match self {
            MarkovKernel::PiecewiseConstant { partition, values } => {
                if values.iter().any(|v| v.len() != partition.len()) {
                    return Err(Error::InvalidPartition("kernel values do not match bins".into()));
                }
                partition.bins().iter().map(Interval::midpoint).collect()
            }
            MarkovKernel::PiecewiseLinear { knots, values } => {
                if knots.len() < 2 || knots[0] != 0.0 || *knots.last().unwrap() != TAU {
                    return Err(Error::InvalidPartition("knots must run from 0 to 2pi".into()));
                }
                if values.iter().any(|v| v.len() != knots.len()) {
                    return Err(Error::InvalidPartition("kernel values do not match knots".into()));
                }
                if values.iter().any(|v| (v[0] - v[v.len() - 1]).abs() > 1e-12) {
                    return Err(Error::InvalidPartition("linear kernel is not periodic".into()));
                }
                knots[..knots.len() - 1].to_vec()
            }
            MarkovKernel::Function { .. } => (0..KERNEL_TRAPEZOID_POINTS)
                .map(|s| TAU * s as f64 / KERNEL_TRAPEZOID_POINTS as f64)
                .collect(),
        };
        for &t in &thetas {
            let mut sum = 0.0;
            for j in 0..self.outcomes() {
                let v = self.eval(j, t);
                if !(-1e-12..=1.0 + 1e-12).contains(&v) {
                    return Err(Error::KernelNormalization { deviation: v, theta: t });
                }
                sum += v;
            }
            if (sum - 1.0).abs() > 1e-10 {
                return Err(Error::KernelNormalization { deviation: sum - 1.0, theta: t });
            }
        }
        Ok(())
    }

    /// `(1/2pi) int_Theta m(X_j, theta) e^{ik theta} d theta`.
    pub fn fourier(&self, j: usize, k: i64, over: &Interval) -> C64 {
        match self {
            MarkovKernel::PiecewiseConstant { partition, values } => partition
                .bins()
                .iter()
                .zip(&values[j])
                .filter_map(|(b, &v)| b.intersect(over).map(|iv| angle_kernel_integral(k, &iv) * v))
                .sum(),
            MarkovKernel::PiecewiseLinear { knots, values } => {
                let mut acc = C64::new(0.0, 0.0);
                for i in 0..knots.len() - 1 {
                    let seg = Interval { lo: knots[i], hi: knots[i + 1] };
                    let Some(iv) = seg.intersect(over) else { continue };
                    let slope = (values[j][i + 1] - values[j][i]) / seg.width();
                    let start = values[j][i] + slope * (iv.lo - seg.lo);
                    acc += angle_kernel_integral(k, &iv) * start + angle_kernel_linear(k, &iv) * slope;
                }
                acc
            }
            MarkovKernel::Function { f, .. } => {
                let full = over.width() >= TAU;
                let n = KERNEL_TRAPEZOID_POINTS;
                let h = over.width() / n as f64;
                let g = |t: f64| C64::from_polar(f(j, crate::angle::wrap(t)), k as f64 * t);
                let mut acc = if full {
                    C64::new(0.0, 0.0)
                } else {
                    (g(over.lo) + g(over.hi)) * 0.5
                };
                let start = if full { 0 } else { 1 };
                for s in start..n {
                    acc += g(over.lo + s as f64 * h);
                }
                acc * h / TAU
            }
        }
    }
}

/// `F(X_j)_{mn} = (1/2pi) int m(X_j, theta) e^{i theta (m-n)} d theta`.
pub fn post_process(kernel: &MarkovKernel, d: usize) -> Result<Vec<CMatrix>> {
    kernel.validate()?;
    let full = Interval::full();
    let effects = par::map_range(kernel.outcomes(), |j| joint_entry_matrix(kernel, j, &full, d));
    let total = effects.iter().fold(CMatrix::zeros(d, d), |acc, e| acc + e);
    let dev = linalg::max_abs(&(total - CMatrix::identity(d, d)));
    if dev > 1e-8 {
        return Err(Error::KernelNormalization { deviation: dev, theta: f64::NAN });
    }
    Ok(effects)
}

/// `M(X_j x Theta)_{mn} = (1/2pi) int_Theta m(X_j, theta) e^{i theta (m-n)} d theta`.
pub fn joint_observable(kernel: &MarkovKernel, j: usize, iv: &Interval, d: usize) -> Result<CMatrix> {
    if j >= kernel.outcomes() {
        return Err(Error::OutOfRange(format!("outcome {j} of {}", kernel.outcomes())));
    }
    Ok(joint_entry_matrix(kernel, j, iv, d))
}

fn joint_entry_matrix(kernel: &MarkovKernel, j: usize, iv: &Interval, d: usize) -> CMatrix {
    let ker: Vec<C64> = (0..2 * d - 1)
        .map(|i| kernel.fourier(j, i as i64 - (d as i64 - 1), iv))
        .collect();
    CMatrix::from_fn(d, d, |m, n| ker[m + d - 1 - n])
}
