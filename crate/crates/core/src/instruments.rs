//! Minimal measurement models: rank-1 covariant instruments, the nuclear
//! canonical-phase instrument and the swap dilation.

use serde::Serialize;

use crate::angle::{angle_kernel_set, Interval};
use crate::couplings::o_angle_effect;
use crate::error::{Error, Result};
use crate::fock::{phase_shift_unitary, DensityMatrix, FockVector};
use crate::linalg::{self, CMatrix};
use crate::phase::{canonical_effect, StructureVectors};
use crate::C64;

/// `I_Theta(rho)` together with its trace.
#[derive(Debug, Clone, Serialize)]
pub struct InstrumentOutput {
    pub interval: Vec<Interval>,
    #[serde(skip)]
    pub output: CMatrix,
    pub weight: f64,
}

impl InstrumentOutput {
    fn new(interval: Vec<Interval>, output: CMatrix) -> Self {
        let weight = linalg::trace(&output).re;
        InstrumentOutput { interval, output, weight }
    }

    /// Posterior state, `None` when the outcome has zero weight.
    pub fn posterior(&self) -> Option<CMatrix> {
        (self.weight > 1e-300).then(|| &self.output / C64::new(self.weight, 0.0))
    }
}

/// Structure vectors of the all-ones phase matrix, every `eta_n = eta`.
pub fn uniform_structure(eta: &FockVector) -> StructureVectors {
    StructureVectors { rank: eta.dim(), vectors: vec![eta.amp.clone(); eta.dim()] }
}

/// The linear map `X -> sum_{m,n} X_nm int_Theta e^{i theta N}|eta_n><eta_m|
/// e^{-i theta N} e^{i theta (m-n)} d theta / 2 pi` on arbitrary `X`.
pub fn rank1_map(x: &CMatrix, eta: &StructureVectors, set: &[Interval]) -> Result<CMatrix> {
    let d = x.nrows();
    if x.ncols() != d || eta.dim() != d {
        return Err(Error::DimensionMismatch { expected: d, got: eta.dim() });
    }
    let r = eta.rank;
    if r > d {
        return Err(Error::DimensionMismatch { expected: d, got: r });
    }
    // offset k = a - b + m - n spans -(r-1)-(d-1) ..= (r-1)+(d-1)
    let off = (r + d - 2) as i64;
    let ker: Vec<C64> = (0..=2 * off).map(|i| angle_kernel_set(i - off, set)).collect();
    let mut out = CMatrix::zeros(d, d);
    for n in 0..d {
        let en = &eta.vectors[n];
        for m in 0..d {
            let xnm = x[(n, m)];
            if xnm == C64::new(0.0, 0.0) {
                continue;
            }
            let em = &eta.vectors[m];
            let shift = m as i64 - n as i64;
            for a in 0..r {
                let pa = xnm * en[a];
                for b in 0..r {
                    let k = a as i64 - b as i64 + shift;
                    out[(a, b)] += pa * em[b].conj() * ker[(k + off) as usize];
                }
            }
        }
    }
    Ok(out)
}

/// Rank-1 covariant instrument with posterior family built from `eta`.
pub fn rank1_covariant_instrument(
    rho: &DensityMatrix,
    eta: &StructureVectors,
    iv: &Interval,
) -> Result<InstrumentOutput> {
    rank1_covariant_instrument_set(rho, eta, std::slice::from_ref(iv))
}

pub fn rank1_covariant_instrument_set(
    rho: &DensityMatrix,
    eta: &StructureVectors,
    set: &[Interval],
) -> Result<InstrumentOutput> {
    Ok(InstrumentOutput::new(set.to_vec(), rank1_map(&rho.mat, eta, set)?))
}

/// `int_Theta sigma_theta p_can(theta) d theta` with
/// `sigma_theta = e^{i theta N}|eta><eta|e^{-i theta N}`.
pub fn canonical_nuclear_instrument(rho: &DensityMatrix, eta: &FockVector, iv: &Interval) -> Result<InstrumentOutput> {
    let d = rho.dim();
    if eta.dim() != d {
        return Err(Error::DimensionMismatch { expected: d, got: eta.dim() });
    }
    if (eta.norm() - 1.0).abs() > 1e-10 {
        return Err(Error::InvalidState(format!("posterior vector has norm {}", eta.norm())));
    }
    // density series s_t = sum_{m-n=t} rho_nm, so p(theta) = sum_t s_t e^{i t theta} / 2 pi
    let mut s = vec![C64::new(0.0, 0.0); 2 * d - 1];
    for m in 0..d {
        for n in 0..d {
            s[m + d - 1 - n] += rho.mat[(n, m)];
        }
    }
    let set = std::slice::from_ref(iv);
    let off = 2 * d as i64 - 2;
    let ker: Vec<C64> = (0..=2 * off).map(|i| angle_kernel_set(i - off, set)).collect();
    let out = CMatrix::from_fn(d, d, |j, k| {
        let mut acc = C64::new(0.0, 0.0);
        for (i, st) in s.iter().enumerate() {
            let t = i as i64 - (d as i64 - 1);
            acc += st * ker[(j as i64 - k as i64 + t + off) as usize];
        }
        eta.amp[j] * eta.amp[k].conj() * acc
    });
    Ok(InstrumentOutput::new(vec![*iv], out))
}

/// Choi-style block matrix `sum_{n,m} |n><m| (x) I(|n><m|)`, `d^2 x d^2`.
pub fn choi_matrix<F: Fn(&CMatrix) -> Result<CMatrix>>(d: usize, map: F) -> Result<CMatrix> {
    let mut j = CMatrix::zeros(d * d, d * d);
    for n in 0..d {
        for m in 0..d {
            let mut unit = CMatrix::zeros(d, d);
            unit[(n, m)] = C64::new(1.0, 0.0);
            let img = map(&unit)?;
            j.view_mut((n * d, m * d), (d, d)).copy_from(&img);
        }
    }
    Ok(j)
}

/// Smallest eigenvalue of the Choi matrix of a rank-1 instrument on `set`.
pub fn rank1_choi_min_eigenvalue(eta: &StructureVectors, set: &[Interval]) -> Result<f64> {
    let j = choi_matrix(eta.dim(), |x| rank1_map(x, eta, set))?;
    Ok(linalg::min_eigenvalue(&linalg::hermitian_part(&j)))
}

/// Largest entry of `e^{i theta N} I_Theta(e^{-i theta N} rho e^{i theta N}) e^{-i theta N}
/// - I_{Theta + theta}(rho)`.
pub fn instrument_covariance_defect(
    rho: &DensityMatrix,
    eta: &StructureVectors,
    iv: &Interval,
    theta: f64,
) -> Result<f64> {
    let d = rho.dim();
    let u = phase_shift_unitary(theta, d);
    let ud = u.adjoint();
    let rotated = &ud * &rho.mat * &u;
    let lhs = &u * rank1_map(&rotated, eta, std::slice::from_ref(iv))? * &ud;
    let rhs = rank1_map(&rho.mat, eta, &iv.shifted(theta))?;
    Ok(linalg::max_abs(&(lhs - rhs)))
}

/// The two-mode swap `|p> (x) |q> -> |q> (x) |p>`, row-major `p * d + q`.
pub fn swap_operator(d: usize) -> CMatrix {
    let mut s = CMatrix::zeros(d * d, d * d);
    for p in 0..d {
        for q in 0..d {
            s[(q * d + p, p * d + q)] = C64::new(1.0, 0.0);
        }
    }
    s
}

/// `H = pi sum_{n<k} |phi^-_nk><phi^-_nk|` with
/// `phi^-_nk = (|n,k> - |k,n>)/sqrt 2`.
pub fn swap_hamiltonian(d: usize) -> CMatrix {
    let mut h = CMatrix::zeros(d * d, d * d);
    let half = C64::new(std::f64::consts::PI / 2.0, 0.0);
    for n in 0..d {
        for k in n + 1..d {
            let a = n * d + k;
            let b = k * d + n;
            h[(a, a)] += half;
            h[(b, b)] += half;
            h[(a, b)] -= half;
            h[(b, a)] -= half;
        }
    }
    h
}

/// Largest dimension accepted by [`swap_hamiltonian_check`].
pub const SWAP_CHECK_MAX_DIM: usize = 24;

/// `|| exp(iH) - SWAP ||_F`.
pub fn swap_hamiltonian_check(d: usize) -> Result<f64> {
    if d == 0 || d > SWAP_CHECK_MAX_DIM {
        return Err(Error::OutOfRange(format!("swap check dimension {d} not in 1..={SWAP_CHECK_MAX_DIM}")));
    }
    let u = (swap_hamiltonian(d) * C64::new(0.0, 1.0)).exp();
    Ok(linalg::frobenius(&(u - swap_operator(d))))
}

/// `|tr[(rho (x) |0><0|) O_angle(Theta)] - tr[rho E_can(Theta)]|`.
pub fn dilation_check(rho: &DensityMatrix, iv: &Interval) -> f64 {
    let d = rho.dim();
    let o = o_angle_effect(iv, d);
    // rho (x) |0><0| only touches rows and columns p * d
    let mut lhs = C64::new(0.0, 0.0);
    for p in 0..d {
        for pp in 0..d {
            lhs += rho.mat[(p, pp)] * o[(pp * d, p * d)];
        }
    }
    let rhs = linalg::trace_product(&rho.mat, &canonical_effect(d, iv));
    (lhs - rhs).norm()
}
