//! Two-mode couplings into `L^2(C)`: the double-homodyne isometry `U`, the
//! target coupling `V`, the correction `W` with `V = U W`, relative number
//! states and the spectral measures built from them.
//!
//! Output functions live on `C` with the measure `r dr d theta`, which in the
//! radial variable `x = r^2` is `(1/2) dx d theta`. Kernels carry the factor
//! `1/sqrt(pi)`, so every column of `U` and `V` has unit norm.

use std::f64::consts::PI;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::angle::{angle_kernel_integral, angle_kernel_set, AnglePartition, Interval};
use crate::error::{Error, Result};
use crate::fock::TwoModeVector;
use crate::linalg::CMatrix;
use crate::par;
use crate::quadrature::{GridFamily, QuadratureGrid};
use crate::special::{laguerre_functions, laguerre_table, ln_factorial, ln_gamma};
use crate::C64;

fn inv_sqrt_pi() -> f64 {
    1.0 / PI.sqrt()
}

/// Radial factor of `U|m,n>` without `e^{-x/2}/sqrt(pi)`.
pub fn u_radial(m: usize, n: usize, x: f64) -> f64 {
    let (lo, hi) = if m <= n { (m, n) } else { (n, m) };
    let phi = laguerre_functions(hi - lo, lo + 1, x)[lo];
    if n > m && (n - m) % 2 == 1 {
        -phi
    } else {
        phi
    }
}

/// Radial factor of `V|m,n>` without `e^{-x/2}/sqrt(pi)`.
pub fn v_radial(m: usize, n: usize, x: f64) -> f64 {
    *laguerre_table(m.min(n) + 1, x).last().expect("len > 0")
}

/// `(U|m> (x) |n>)(r, theta) = (1/sqrt(pi)) <n|D(r e^{i theta})^*|m>` at `x = r^2`.
pub fn u_kernel(m: usize, n: usize, x: f64, theta: f64) -> C64 {
    C64::from_polar(
        u_radial(m, n, x) * (-0.5 * x).exp() * inv_sqrt_pi(),
        -theta * (m as f64 - n as f64),
    )
}

/// `(V|m> (x) |n>)(r, theta) = (1/sqrt(pi)) e^{i theta (n-m)} L_{min(m,n)}(x) e^{-x/2}`.
pub fn v_kernel(m: usize, n: usize, x: f64, theta: f64) -> C64 {
    C64::from_polar(
        v_radial(m, n, x) * (-0.5 * x).exp() * inv_sqrt_pi(),
        theta * (n as f64 - m as f64),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum KernelLabel {
    U,
    V,
}

/// Radial factors of a coupling sampled on the quadrature nodes. The angle
/// dependence `e^{-i theta (m-n)}` is kept analytic.
#[derive(Debug, Clone)]
pub struct CouplingKernel {
    pub label: KernelLabel,
    pub dim: usize,
    pub grid: QuadratureGrid,
    /// `radial[(m * dim + n) * nq + q]`.
    radial: Vec<f64>,
}

impl CouplingKernel {
    pub fn new(label: KernelLabel, dim: usize, grid: &QuadratureGrid) -> Self {
        let nq = grid.len();
        let mut radial = vec![0.0; dim * dim * nq];
        match label {
            KernelLabel::U => {
                let tables = phi_tables(dim, grid);
                for m in 0..dim {
                    for n in 0..dim {
                        let (lo, hi) = if m <= n { (m, n) } else { (n, m) };
                        let sign = if n > m && (n - m) % 2 == 1 { -1.0 } else { 1.0 };
                        for q in 0..nq {
                            radial[(m * dim + n) * nq + q] = sign * tables[hi - lo][q][lo];
                        }
                    }
                }
            }
            KernelLabel::V => {
                for (q, &x) in grid.nodes.iter().enumerate() {
                    let l = laguerre_table(dim, x);
                    for m in 0..dim {
                        for n in 0..dim {
                            radial[(m * dim + n) * nq + q] = l[m.min(n)];
                        }
                    }
                }
            }
        }
        CouplingKernel { label, dim, grid: grid.clone(), radial }
    }

    pub fn radial(&self, m: usize, n: usize, q: usize) -> f64 {
        self.radial[(m * self.dim + n) * self.grid.len() + q]
    }

    /// Kernel value at node `q` and angle `theta`.
    pub fn value(&self, m: usize, n: usize, q: usize, theta: f64) -> C64 {
        let x = self.grid.nodes[q];
        C64::from_polar(
            self.radial(m, n, q) * (-0.5 * x).exp() * inv_sqrt_pi(),
            -theta * (m as f64 - n as f64),
        )
    }

    /// Closed-form value at an arbitrary point.
    pub fn eval(&self, m: usize, n: usize, x: f64, theta: f64) -> C64 {
        match self.label {
            KernelLabel::U => u_kernel(m, n, x, theta),
            KernelLabel::V => v_kernel(m, n, x, theta),
        }
    }

    /// `<K|m,n> | K|m',n'>>` in the output space, by quadrature.
    pub fn column_inner(&self, a: (usize, usize), b: (usize, usize)) -> f64 {
        if a.0 as i64 - a.1 as i64 != b.0 as i64 - b.1 as i64 {
            return 0.0;
        }
        (0..self.grid.len())
            .map(|q| self.grid.weights[q] * self.radial(a.0, a.1, q) * self.radial(b.0, b.1, q))
            .sum()
    }

    /// Apply to a two-mode vector of the same dimension.
    pub fn apply(&self, psi: &TwoModeVector) -> Result<Wavefunction> {
        if psi.dim != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: psi.dim });
        }
        let d = self.dim;
        let nq = self.grid.len();
        let smax = d - 1;
        let harm = par::map_range(2 * smax + 1, |si| {
            let s = si as i64 - smax as i64;
            let mut row = vec![C64::new(0.0, 0.0); nq];
            for m in 0..d {
                let n = m as i64 - s;
                if n < 0 || n >= d as i64 {
                    continue;
                }
                let a = psi.get(m, n as usize);
                if a == C64::new(0.0, 0.0) {
                    continue;
                }
                let base = (m * d + n as usize) * nq;
                for (q, slot) in row.iter_mut().enumerate() {
                    *slot += a * self.radial[base + q];
                }
            }
            row
        });
        Ok(Wavefunction { grid: self.grid.clone(), smax, harm: harm.concat() })
    }
}

/// `tables[delta][q][j] = phi^delta_j(x_q)` for `delta + j < dim`.
fn phi_tables(dim: usize, grid: &QuadratureGrid) -> Vec<Vec<Vec<f64>>> {
    par::map_range(dim, |delta| {
        grid.nodes
            .iter()
            .map(|&x| laguerre_functions(delta, dim - delta, x))
            .collect()
    })
}

/// Output wavefunction `Psi(x, theta) = e^{-x/2}/sqrt(pi) sum_s F_s(x) e^{-i s theta}`
/// stored through its angular harmonics `F_s` on the quadrature nodes.
#[derive(Debug, Clone)]
pub struct Wavefunction {
    pub grid: QuadratureGrid,
    /// Harmonics run over `-smax..=smax`.
    pub smax: usize,
    harm: Vec<C64>,
}

impl Wavefunction {
    /// `F_s(x_q)`, zero outside the stored range.
    pub fn harmonic(&self, s: i64, q: usize) -> C64 {
        if s.unsigned_abs() as usize > self.smax {
            return C64::new(0.0, 0.0);
        }
        self.harm[(s + self.smax as i64) as usize * self.grid.len() + q]
    }

    /// `Psi(x_q, theta)`.
    pub fn value(&self, q: usize, theta: f64) -> C64 {
        let x = self.grid.nodes[q];
        let sm = self.smax as i64;
        let sum: C64 = (-sm..=sm)
            .map(|s| self.harmonic(s, q) * C64::from_polar(1.0, -theta * s as f64))
            .sum();
        sum * (-0.5 * x).exp() * inv_sqrt_pi()
    }

    /// Density of the outcome distribution with respect to `dx d theta`.
    pub fn density(&self, q: usize, theta: f64) -> f64 {
        0.5 * self.value(q, theta).norm_sqr()
    }

    /// Squared norm in the output space.
    pub fn mass(&self) -> f64 {
        let nq = self.grid.len();
        self.harm
            .iter()
            .enumerate()
            .map(|(i, f)| self.grid.weights[i % nq] * f.norm_sqr())
            .sum()
    }

    /// `S_q[t] = sum_{s - s' = t} conj(F_s) F_{s'}` at node `q`, indexed by
    /// `t + 2 smax`.
    fn autocorrelation(&self, q: usize) -> Vec<C64> {
        let sm = self.smax as i64;
        let mut out = vec![C64::new(0.0, 0.0); 4 * self.smax + 1];
        for s in -sm..=sm {
            let a = self.harmonic(s, q);
            if a == C64::new(0.0, 0.0) {
                continue;
            }
            let ac = a.conj();
            for s2 in -sm..=sm {
                out[(s - s2 + 2 * sm) as usize] += ac * self.harmonic(s2, q);
            }
        }
        out
    }

    /// Cell probabilities `P[q][j]` for node `q` and angle bin `j`.
    pub fn cell_probabilities(&self, p: &AnglePartition) -> Vec<Vec<f64>> {
        let tmax = 2 * self.smax as i64;
        let kt: Vec<Vec<C64>> = p
            .bins()
            .iter()
            .map(|iv| (-tmax..=tmax).map(|t| angle_kernel_integral(t, iv)).collect())
            .collect();
        par::map_range(self.grid.len(), |q| {
            let s = self.autocorrelation(q);
            let w = self.grid.weights[q];
            kt.iter()
                .map(|row| w * s.iter().zip(row).map(|(a, b)| a * b).sum::<C64>().re)
                .collect()
        })
    }

    /// Angle marginal `sum_q P[q][j]`.
    pub fn angle_marginal(&self, p: &AnglePartition) -> Vec<f64> {
        let tmax = 2 * self.smax as i64;
        let nt = (2 * tmax + 1) as usize;
        let mut total = vec![C64::new(0.0, 0.0); nt];
        for q in 0..self.grid.len() {
            let w = self.grid.weights[q];
            for (acc, v) in total.iter_mut().zip(self.autocorrelation(q)) {
                *acc += v * w;
            }
        }
        p.bins()
            .iter()
            .map(|iv| {
                (-tmax..=tmax)
                    .zip(&total)
                    .map(|(t, v)| v * angle_kernel_integral(t, iv))
                    .sum::<C64>()
                    .re
            })
            .collect()
    }

    /// `|| self - other ||` in the output space.
    pub fn distance(&self, other: &Wavefunction) -> f64 {
        let sm = self.smax.max(other.smax) as i64;
        let mut acc = 0.0;
        for s in -sm..=sm {
            for q in 0..self.grid.len() {
                acc += self.grid.weights[q] * (self.harmonic(s, q) - other.harmonic(s, q)).norm_sqr();
            }
        }
        acc.sqrt()
    }

    /// `self * c + other`, harmonics aligned.
    pub fn scaled_add(&self, c: C64, other: &Wavefunction) -> Wavefunction {
        let smax = self.smax.max(other.smax);
        let sm = smax as i64;
        let nq = self.grid.len();
        let mut harm = Vec::with_capacity((2 * smax + 1) * nq);
        for s in -sm..=sm {
            for q in 0..nq {
                harm.push(self.harmonic(s, q) * c + other.harmonic(s, q));
            }
        }
        Wavefunction { grid: self.grid.clone(), smax, harm }
    }
}

/// Apply a coupling of the given kind to a two-mode vector.
pub fn apply_kernel(psi: &TwoModeVector, kernel: &CouplingKernel) -> Result<Wavefunction> {
    kernel.apply(psi)
}

/// Relative number state label `|m, k>>`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RnsIndex {
    pub m: i64,
    pub k: i64,
}

impl RnsIndex {
    pub fn new(m: i64, k: i64) -> Result<Self> {
        if k < 0 {
            return Err(Error::OutOfRange(format!("negative pair index {k}")));
        }
        Ok(RnsIndex { m, k })
    }
}

/// `|p> (x) |q> = |p - q, min(p, q)>>`.
pub fn rns_pack(p: usize, q: usize) -> RnsIndex {
    RnsIndex { m: p as i64 - q as i64, k: p.min(q) as i64 }
}

/// Inverse of [`rns_pack`].
pub fn rns_unpack(idx: RnsIndex) -> Result<(usize, usize)> {
    if idx.k < 0 {
        return Err(Error::OutOfRange(format!("negative pair index {}", idx.k)));
    }
    let k = idx.k as usize;
    let a = idx.m.unsigned_abs() as usize;
    Ok(if idx.m >= 0 { (k + a, k) } else { (k, k + a) })
}

/// `(1/2pi) int_Theta e^{i theta (m - n)} d theta |m,k>><<n,k|`, truncated to
/// the `d x d` product basis (row-major `p * d + q`).
pub fn o_angle_effect(iv: &Interval, d: usize) -> CMatrix {
    o_angle_effect_set(std::slice::from_ref(iv), d)
}

/// [`o_angle_effect`] over a union of intervals.
pub fn o_angle_effect_set(set: &[Interval], d: usize) -> CMatrix {
    let ker: Vec<C64> = (0..4 * d - 3)
        .map(|i| angle_kernel_set(i as i64 - (2 * d as i64 - 2), set))
        .collect();
    rns_operator(d, |a, b| {
        if a.k == b.k {
            ker[(a.m - b.m + 2 * d as i64 - 2) as usize]
        } else {
            C64::new(0.0, 0.0)
        }
    })
}

/// `R_kl(X) = sum_{q in X} w_q L_k(x_q) L_l(x_q)` for `k, l < d`.
pub fn radial_laguerre_gram(set: &[usize], d: usize, grid: &QuadratureGrid) -> Result<Vec<Vec<f64>>> {
    if let Some(&bad) = set.iter().find(|&&q| q >= grid.len()) {
        return Err(Error::OutOfRange(format!("radial node {bad} of {}", grid.len())));
    }
    let mut r = vec![vec![0.0; d]; d];
    for &q in set {
        let l = laguerre_table(d, grid.nodes[q]);
        let w = grid.weights[q];
        for k in 0..d {
            for j in 0..d {
                r[k][j] += w * l[k] * l[j];
            }
        }
    }
    Ok(r)
}

/// `sum R_kl(X) |n,k>><<n,l|`.
pub fn o_rad_effect(set: &[usize], d: usize, grid: &QuadratureGrid) -> Result<CMatrix> {
    let r = radial_laguerre_gram(set, d, grid)?;
    Ok(rns_operator(d, |a, b| {
        if a.m == b.m {
            C64::new(r[a.k as usize][b.k as usize], 0.0)
        } else {
            C64::new(0.0, 0.0)
        }
    }))
}

/// `O(X x Theta) = sum K(m-n, Theta) R_kl(X) |m,k>><<n,l|`.
pub fn o_effect(set: &[usize], iv: &Interval, d: usize, grid: &QuadratureGrid) -> Result<CMatrix> {
    let r = radial_laguerre_gram(set, d, grid)?;
    let ker: Vec<C64> = (0..4 * d - 3)
        .map(|i| angle_kernel_integral(i as i64 - (2 * d as i64 - 2), iv))
        .collect();
    Ok(rns_operator(d, |a, b| {
        ker[(a.m - b.m + 2 * d as i64 - 2) as usize] * r[a.k as usize][b.k as usize]
    }))
}

fn rns_operator<F: Fn(RnsIndex, RnsIndex) -> C64 + Sync + Send>(d: usize, f: F) -> CMatrix {
    let n = d * d;
    let rows = par::map_range(n, |i| {
        let a = rns_pack(i / d, i % d);
        (0..n).map(|j| f(a, rns_pack(j / d, j % d))).collect::<Vec<C64>>()
    });
    CMatrix::from_fn(n, n, |i, j| rows[i][j])
}

/// Indices `p * d + q` of product states with `|m| + k < limit` in RNS
/// coordinates.
pub fn rns_block(d: usize, limit: usize) -> Vec<usize> {
    (0..d * d)
        .filter(|&i| {
            let r = rns_pack(i / d, i % d);
            (r.m.unsigned_abs() as usize) + (r.k as usize) < limit
        })
        .collect()
}

/// `alpha_{kl,mn} = <U|k,l> | V|m,n>>` by quadrature; zero unless
/// `l = k + n - m`.
pub fn w_alpha(k: usize, l: usize, m: usize, n: usize, grid: &QuadratureGrid) -> f64 {
    if k as i64 - l as i64 != m as i64 - n as i64 {
        return 0.0;
    }
    grid.integrate(|x| u_radial(k, l, x) * v_radial(m, n, x))
}

/// Version of the serialized W cache layout.
pub const W_FORMAT_VERSION: u32 = 1;
const W_MAGIC: &[u8; 4] = b"PKWM";

/// Truncated matrix of `W` in the product basis. Columns run over input
/// states `|m,n>` with `m, n < dim`; rows over output states `|k,l>` with
/// `k, l < out_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct WMatrix {
    pub dim: usize,
    pub out_dim: usize,
    pub order: usize,
    pub family: GridFamily,
    pub mat: CMatrix,
    /// `1 - ||W|m,n>||^2` per input column: weight lost to the truncation.
    pub dropped: Vec<f64>,
}

impl WMatrix {
    pub fn column(&self, m: usize, n: usize) -> TwoModeVector {
        let col = self.mat.column(m * self.dim + n);
        TwoModeVector { dim: self.out_dim, amp: col.iter().copied().collect() }
    }

    /// `W psi`, as a vector on the output truncation.
    pub fn apply(&self, psi: &TwoModeVector) -> Result<TwoModeVector> {
        if psi.dim != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: psi.dim });
        }
        let v = nalgebra::DVector::from_column_slice(&psi.amp);
        let out = &self.mat * v;
        Ok(TwoModeVector { dim: self.out_dim, amp: out.iter().copied().collect() })
    }

    /// Largest off-block entry: entries joining different number differences.
    pub fn selection_rule_defect(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for c in 0..self.dim * self.dim {
            let (m, n) = (c / self.dim, c % self.dim);
            for r in 0..self.out_dim * self.out_dim {
                let (k, l) = (r / self.out_dim, r % self.out_dim);
                if k as i64 - l as i64 != m as i64 - n as i64 {
                    worst = worst.max(self.mat[(r, c)].norm());
                }
            }
        }
        worst
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let entries: Vec<(usize, usize, f64, f64)> = (0..self.mat.ncols())
            .flat_map(|c| {
                (0..self.mat.nrows()).filter_map(move |r| {
                    let z = self.mat[(r, c)];
                    (z != C64::new(0.0, 0.0)).then_some((r, c, z.re, z.im))
                })
            })
            .collect();
        let doc = WJson {
            format_version: W_FORMAT_VERSION,
            dim: self.dim,
            out_dim: self.out_dim,
            order: self.order,
            family: self.family,
            dropped: self.dropped.clone(),
            entries,
        };
        let text = serde_json::to_string(&doc).map_err(|e| Error::Cache(e.to_string()))?;
        write_atomic(path, text.as_bytes())
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let doc: WJson = serde_json::from_str(&text).map_err(|e| Error::Cache(e.to_string()))?;
        if doc.format_version != W_FORMAT_VERSION {
            return Err(Error::Cache(format!("format version {}", doc.format_version)));
        }
        let rows = doc.out_dim * doc.out_dim;
        let cols = doc.dim * doc.dim;
        let mut mat = CMatrix::zeros(rows, cols);
        for (r, c, re, im) in doc.entries {
            if r >= rows || c >= cols {
                return Err(Error::Cache(format!("entry ({r},{c}) out of range")));
            }
            mat[(r, c)] = C64::new(re, im);
        }
        if doc.dropped.len() != cols {
            return Err(Error::Cache("dropped-weight list has wrong length".into()));
        }
        Ok(WMatrix {
            dim: doc.dim,
            out_dim: doc.out_dim,
            order: doc.order,
            family: doc.family,
            mat,
            dropped: doc.dropped,
        })
    }

    pub fn save_binary(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::with_capacity(32 + self.mat.len() * 16);
        buf.extend_from_slice(W_MAGIC);
        buf.extend_from_slice(&W_FORMAT_VERSION.to_le_bytes());
        for v in [self.dim, self.out_dim, self.order] {
            buf.extend_from_slice(&(v as u32).to_le_bytes());
        }
        buf.push(self.family.code());
        for v in &self.dropped {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        for z in self.mat.iter() {
            buf.extend_from_slice(&z.re.to_le_bytes());
            buf.extend_from_slice(&z.im.to_le_bytes());
        }
        write_atomic(path, &buf)
    }

    pub fn load_binary(path: &Path) -> Result<Self> {
        let mut buf = Vec::new();
        fs::File::open(path)?.read_to_end(&mut buf)?;
        let mut cur = Cursor { buf: &buf, pos: 0 };
        if cur.take(4)? != W_MAGIC {
            return Err(Error::Cache("bad magic".into()));
        }
        let version = cur.u32()?;
        if version != W_FORMAT_VERSION {
            return Err(Error::Cache(format!("format version {version}")));
        }
        let dim = cur.u32()? as usize;
        let out_dim = cur.u32()? as usize;
        let order = cur.u32()? as usize;
        let family = match cur.take(1)?[0] {
            0 => GridFamily::Laguerre,
            1 => GridFamily::Radial,
            other => return Err(Error::Cache(format!("unknown family code {other}"))),
        };
        let cols = dim * dim;
        let rows = out_dim * out_dim;
        let dropped = (0..cols).map(|_| cur.f64()).collect::<Result<Vec<_>>>()?;
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            let re = cur.f64()?;
            let im = cur.f64()?;
            data.push(C64::new(re, im));
        }
        if cur.pos != buf.len() {
            return Err(Error::Cache("trailing bytes".into()));
        }
        Ok(WMatrix {
            dim,
            out_dim,
            order,
            family,
            mat: CMatrix::from_vec(rows, cols, data),
            dropped,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct WJson {
    format_version: u32,
    dim: usize,
    out_dim: usize,
    order: usize,
    family: GridFamily,
    dropped: Vec<f64>,
    entries: Vec<(usize, usize, f64, f64)>,
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Cache("truncated file".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

/// Write through a temporary file in the same directory, then rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| Error::Io(format!("no file name in {}", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// `W` on the `d x d` input truncation, output truncated to `d x d`.
pub fn w_matrix(d: usize, grid: &QuadratureGrid) -> Result<WMatrix> {
    w_matrix_extended(d, d, grid)
}

/// `W` with the output truncation `out_dim >= d`.
pub fn w_matrix_extended(d: usize, out_dim: usize, grid: &QuadratureGrid) -> Result<WMatrix> {
    if grid.order < 2 * d {
        return Err(Error::QuadratureOrder { order: grid.order, required: 2 * d });
    }
    if out_dim < d {
        return Err(Error::OutOfRange(format!("output truncation {out_dim} below {d}")));
    }
    let nq = grid.len();
    let tables = phi_tables(out_dim, grid);
    let lag: Vec<Vec<f64>> = grid.nodes.iter().map(|&x| laguerre_table(d, x)).collect();

    let columns = par::map_range(d * d, |c| {
        let (m, n) = (c / d, c % d);
        let j = m.min(n);
        let mut col = vec![C64::new(0.0, 0.0); out_dim * out_dim];
        let mut norm = 0.0;
        for k in 0..out_dim {
            let l = k as i64 + n as i64 - m as i64;
            if l < 0 || l >= out_dim as i64 {
                continue;
            }
            let l = l as usize;
            let (lo, hi) = if k <= l { (k, l) } else { (l, k) };
            let sign = if l > k && (l - k) % 2 == 1 { -1.0 } else { 1.0 };
            let t = &tables[hi - lo];
            let mut acc = 0.0;
            for q in 0..nq {
                acc += grid.weights[q] * t[q][lo] * lag[q][j];
            }
            let a = sign * acc;
            norm += a * a;
            col[k * out_dim + l] = C64::new(a, 0.0);
        }
        (col, 1.0 - norm)
    });
    let rows = out_dim * out_dim;
    let mut mat = CMatrix::zeros(rows, d * d);
    let mut dropped = Vec::with_capacity(d * d);
    for (c, (col, drop)) in columns.into_iter().enumerate() {
        for (r, v) in col.into_iter().enumerate() {
            mat[(r, c)] = v;
        }
        dropped.push(drop);
    }
    Ok(WMatrix { dim: d, out_dim, order: grid.order, family: grid.family, mat, dropped })
}

/// Load `W` from `dir` if a matching cache file exists, otherwise compute and
/// store it.
pub fn w_matrix_cached(d: usize, grid: &QuadratureGrid, dir: &Path) -> Result<WMatrix> {
    let path = dir.join(format!("w_d{d}_q{}_{}.bin", grid.order, grid.family.as_str()));
    if path.exists() {
        let w = WMatrix::load_binary(&path)?;
        if w.dim == d && w.out_dim == d && w.order == grid.order && w.family == grid.family {
            return Ok(w);
        }
    }
    let w = w_matrix(d, grid)?;
    fs::create_dir_all(dir)?;
    w.save_binary(&path)?;
    Ok(w)
}

/// Closed-form coefficients of `W(|m> (x) |0>)` on `|m,k>>` for `k <= kmax`:
/// `(m/2) Gamma(k + m/2) / sqrt(k! (k+m)!)`, and `[1]` for `m = 0`.
/// Returns the coefficients and their partial squared norm.
pub fn w_column_vacuum(m: usize, kmax: usize) -> (Vec<f64>, f64) {
    if m == 0 {
        return (vec![1.0], 1.0);
    }
    let half = 0.5 * m as f64;
    let coeffs: Vec<f64> = (0..=kmax)
        .map(|k| {
            let ln = ln_gamma(k as f64 + half) - 0.5 * (ln_factorial(k) + ln_factorial(k + m));
            half * ln.exp()
        })
        .collect();
    let norm = coeffs.iter().map(|c| c * c).sum();
    (coeffs, norm)
}

/// Coefficients `C_k` of the two-mode nonlinear coherent state with
/// `f(n1, n2) = 2/(n1 + n2)`, eigenvalue one and
/// `C_0 = Gamma(m/2 + 1)/sqrt(m!)`, built by the product recursion.
pub fn nonlinear_coherent_coefficients(m: usize, kmax: usize) -> Vec<f64> {
    let f = |n1: usize, n2: usize| 2.0 / (n1 + n2) as f64;
    let c0 = (ln_gamma(0.5 * m as f64 + 1.0) - 0.5 * ln_factorial(m)).exp();
    let mut prod = 1.0;
    (0..=kmax)
        .map(|k| {
            if k > 0 {
                prod /= f(k - 1 + m, k - 1);
            }
            let norm = (0.5 * (ln_factorial(m) - ln_factorial(k) - ln_factorial(k + m))).exp();
            norm * prod * c0
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg;

    #[test]
    fn kernel_simple_values() {
        for &x in &[0.0f64, 0.7, 3.0] {
            let want = (-x / 2.0).exp() / PI.sqrt();
            assert!((u_kernel(0, 0, x, 1.1) - want).norm() < 1e-15);
            assert!((v_kernel(0, 0, x, 1.1) - want).norm() < 1e-15);
            let l3 = 1.0 - 3.0 * x + 1.5 * x * x - x * x * x / 6.0;
            assert!((v_kernel(3, 3, x, 0.4) - l3 * want).norm() < 1e-13);
            assert!((v_kernel(3, 3, x, 0.4) - v_kernel(3, 3, x, 2.9)).norm() < 1e-15);
        }
    }

    #[test]
    fn u_matches_conjugate_displacement() {
        let (x, th) = (1.3f64, 0.7);
        for m in 0..6 {
            for n in 0..6 {
                let d = crate::fock::displacement_element(m, n, x.sqrt(), th);
                assert!((u_kernel(m, n, x, th) - d.conj() / PI.sqrt()).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn columns_are_orthonormal() {
        let d = 24;
        let g = QuadratureGrid::radial(64).unwrap();
        for label in [KernelLabel::U, KernelLabel::V] {
            let k = CouplingKernel::new(label, d, &g);
            let cols: Vec<(usize, usize)> =
                (0..=d / 2).flat_map(|m| (0..=d / 2).map(move |n| (m, n))).collect();
            for &a in &cols {
                for &b in &cols {
                    let want = if a == b { 1.0 } else { 0.0 };
                    assert!((k.column_inner(a, b) - want).abs() < 1e-8, "{label:?} {a:?} {b:?}");
                }
            }
        }
    }

    #[test]
    fn wavefunction_density_of_vacuum() {
        let d = 8;
        let g = QuadratureGrid::radial(32).unwrap();
        let k = CouplingKernel::new(KernelLabel::U, d, &g);
        let mut psi = TwoModeVector::zeros(d);
        psi.set(0, 0, C64::new(1.0, 0.0));
        let wf = k.apply(&psi).unwrap();
        assert!((wf.mass() - 1.0).abs() < 1e-13);
        for q in [0usize, 5, 20] {
            let x = g.nodes[q];
            assert!((wf.density(q, 0.3) - (-x).exp() / (2.0 * PI)).abs() < 1e-15);
        }
    }

    #[test]
    fn vacuum_column_spot_values() {
        let (c, _) = w_column_vacuum(1, 3);
        assert!((c[0] - PI.sqrt() / 2.0).abs() < 1e-14);
        let (c, _) = w_column_vacuum(2, 0);
        assert!((c[0] - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-14);
        assert_eq!(w_column_vacuum(0, 5), (vec![1.0], 1.0));
    }

    #[test]
    fn nonlinear_coherent_identification() {
        for m in 1..=6 {
            let (w, _) = w_column_vacuum(m, 40);
            let nl = nonlinear_coherent_coefficients(m, 40);
            for (a, b) in w.iter().zip(&nl) {
                assert!((a - b).abs() < 1e-12 * a.abs().max(1.0));
            }
        }
    }

    #[test]
    fn rns_examples() {
        assert_eq!(rns_pack(5, 3), RnsIndex { m: 2, k: 3 });
        assert_eq!(rns_pack(0, 4), RnsIndex { m: -4, k: 0 });
        for p in 0..64 {
            for q in 0..64 {
                assert_eq!(rns_unpack(rns_pack(p, q)).unwrap(), (p, q));
            }
        }
        assert!(RnsIndex::new(1, -1).is_err());
        assert!(rns_unpack(RnsIndex { m: 0, k: -2 }).is_err());
    }

    #[test]
    fn o_angle_full_is_identity() {
        let d = 6;
        let o = o_angle_effect(&Interval::full(), d);
        assert!(linalg::max_abs(&(o - CMatrix::identity(d * d, d * d))) < 1e-14);
    }

    #[test]
    fn w_rejects_low_order() {
        let g = QuadratureGrid::radial(10).unwrap();
        assert!(matches!(w_matrix(8, &g), Err(Error::QuadratureOrder { .. })));
    }

    #[test]
    fn w_cache_round_trip() {
        let g = QuadratureGrid::radial(12).unwrap();
        let w = w_matrix(5, &g).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let jp = dir.path().join("w.json");
        w.save_json(&jp).unwrap();
        assert_eq!(WMatrix::load_json(&jp).unwrap(), w);
        let bp = dir.path().join("w.bin");
        w.save_binary(&bp).unwrap();
        assert_eq!(WMatrix::load_binary(&bp).unwrap(), w);
        let cached = w_matrix_cached(5, &g, dir.path()).unwrap();
        assert_eq!(cached, w);
        let again = w_matrix_cached(5, &g, dir.path()).unwrap();
        assert_eq!(again, w);
        fs::write(&bp, b"JUNK").unwrap();
        assert!(matches!(WMatrix::load_binary(&bp), Err(Error::Cache(_))));
    }
}
