//! States on the truncated number basis and the state constructors used by
//! the examples.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, CMatrix};
use crate::special::{bessel_j0, binomial, laguerre_functions};
use crate::C64;

/// Default truncation.
pub const DEFAULT_DIM: usize = 32;

/// Largest index for which results are guaranteed at truncation `d`.
pub fn safe_limit(d: usize) -> usize {
    d / 2
}

/// Amplitudes on `|0>, ..., |d-1>`.
#[derive(Debug, Clone, PartialEq)]
pub struct FockVector {
    pub amp: Vec<C64>,
}

impl FockVector {
    pub fn new(amp: Vec<C64>) -> Result<Self> {
        if amp.is_empty() {
            return Err(Error::InvalidState("empty amplitude vector".into()));
        }
        if amp.iter().any(|z| !(z.re.is_finite() && z.im.is_finite())) {
            return Err(Error::InvalidState("non-finite amplitude".into()));
        }
        Ok(FockVector { amp })
    }

    pub fn number(n: usize, d: usize) -> Result<Self> {
        if n >= d {
            return Err(Error::OutOfRange(format!("number state {n} at truncation {d}")));
        }
        let mut amp = vec![C64::new(0.0, 0.0); d];
        amp[n] = C64::new(1.0, 0.0);
        Ok(FockVector { amp })
    }

    pub fn vacuum(d: usize) -> Self {
        Self::number(0, d).expect("d > 0")
    }

    /// Truncated coherent state; amplitudes are exact, the tail is dropped.
    pub fn coherent(alpha: C64, d: usize) -> Self {
        let mut amp = Vec::with_capacity(d);
        let mut a = C64::new((-0.5 * alpha.norm_sqr()).exp(), 0.0);
        for n in 0..d {
            if n > 0 {
                a = a * alpha / (n as f64).sqrt();
            }
            amp.push(a);
        }
        FockVector { amp }
    }

    pub fn dim(&self) -> usize {
        self.amp.len()
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amp.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    pub fn normalized(&self) -> Result<Self> {
        let n = self.norm();
        if n == 0.0 {
            return Err(Error::InvalidState("zero vector".into()));
        }
        Ok(FockVector { amp: self.amp.iter().map(|z| z / n).collect() })
    }

    pub fn conj(&self) -> Self {
        FockVector { amp: self.amp.iter().map(|z| z.conj()).collect() }
    }

    /// `<self|other>`.
    pub fn inner(&self, other: &FockVector) -> C64 {
        self.amp.iter().zip(&other.amp).map(|(a, b)| a.conj() * b).sum()
    }
}

/// Amplitudes of `|m> (x) |n>` stored row-major at `m * dim + n`.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoModeVector {
    pub dim: usize,
    pub amp: Vec<C64>,
}

impl TwoModeVector {
    pub fn zeros(dim: usize) -> Self {
        TwoModeVector { dim, amp: vec![C64::new(0.0, 0.0); dim * dim] }
    }

    pub fn new(dim: usize, amp: Vec<C64>) -> Result<Self> {
        if amp.len() != dim * dim {
            return Err(Error::DimensionMismatch { expected: dim * dim, got: amp.len() });
        }
        if amp.iter().any(|z| !(z.re.is_finite() && z.im.is_finite())) {
            return Err(Error::InvalidState("non-finite amplitude".into()));
        }
        Ok(TwoModeVector { dim, amp })
    }

    pub fn product(a: &FockVector, b: &FockVector) -> Result<Self> {
        if a.dim() != b.dim() {
            return Err(Error::DimensionMismatch { expected: a.dim(), got: b.dim() });
        }
        let d = a.dim();
        let mut out = Self::zeros(d);
        for m in 0..d {
            for n in 0..d {
                out.amp[m * d + n] = a.amp[m] * b.amp[n];
            }
        }
        Ok(out)
    }

    pub fn get(&self, m: usize, n: usize) -> C64 {
        self.amp[m * self.dim + n]
    }

    pub fn set(&mut self, m: usize, n: usize, v: C64) {
        self.amp[m * self.dim + n] = v;
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amp.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    pub fn scaled(&self, s: f64) -> Self {
        TwoModeVector { dim: self.dim, amp: self.amp.iter().map(|z| z * s).collect() }
    }
}

/// Density matrix on the truncated space.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    pub mat: CMatrix,
}

impl DensityMatrix {
    /// Validates Hermiticity (1e-12), trace (1e-10) and positivity (-1e-10).
    pub fn new(mat: CMatrix) -> Result<Self> {
        if mat.nrows() != mat.ncols() || mat.nrows() == 0 {
            return Err(Error::InvalidDensityMatrix("not a non-empty square matrix".into()));
        }
        let herm = linalg::hermiticity_defect(&mat);
        if herm > 1e-12 {
            return Err(Error::InvalidDensityMatrix(format!("hermiticity defect {herm:e}")));
        }
        let tr = linalg::trace(&mat).re;
        if (tr - 1.0).abs() > 1e-10 {
            return Err(Error::TraceDeficit { deficit: 1.0 - tr, bound: 1e-10 });
        }
        let min_eig = linalg::min_eigenvalue(&mat);
        if min_eig < -1e-10 {
            return Err(Error::NotPositive { min_eig, floor: -1e-10 });
        }
        Ok(DensityMatrix { mat })
    }

    /// `|psi><psi| / <psi|psi>`.
    pub fn from_pure(psi: &FockVector) -> Result<Self> {
        let v = psi.normalized()?;
        let d = v.dim();
        let mat = CMatrix::from_fn(d, d, |i, j| v.amp[i] * v.amp[j].conj());
        Ok(DensityMatrix { mat })
    }

    /// `G G^* / tr` for a `d x rank` Ginibre matrix `G`.
    pub fn random<R: Rng + ?Sized>(d: usize, rank: usize, rng: &mut R) -> Self {
        let g = linalg::ginibre(d, rank.clamp(1, d), rng);
        let m = &g * g.adjoint();
        let m = linalg::hermitian_part(&m);
        let t = linalg::trace(&m);
        DensityMatrix { mat: m / t }
    }

    /// Diagonal state with the given probabilities.
    pub fn diagonal(probs: &[f64]) -> Result<Self> {
        Self::new(linalg::diag_real(probs))
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    /// Entrywise complex conjugate in the number basis.
    pub fn conjugate(&self) -> Self {
        DensityMatrix { mat: self.mat.map(|z| z.conj()) }
    }

    /// Largest off-diagonal modulus.
    pub fn max_offdiag(&self) -> f64 {
        let d = self.dim();
        let mut m: f64 = 0.0;
        for i in 0..d {
            for j in 0..d {
                if i != j {
                    m = m.max(self.mat[(i, j)].norm());
                }
            }
        }
        m
    }

    /// Ensemble `(p_i, psi_i)` from the eigen-decomposition, dropping
    /// eigenvalues below `1e-14`.
    pub fn pure_components(&self) -> Vec<(f64, FockVector)> {
        let d = self.dim();
        if self.max_offdiag() == 0.0 {
            return (0..d)
                .filter(|&i| self.mat[(i, i)].re > 1e-14)
                .map(|i| (self.mat[(i, i)].re, FockVector::number(i, d).expect("i < d")))
                .collect();
        }
        let (vals, vecs) = linalg::hermitian_eigen(&self.mat);
        vals.iter()
            .enumerate()
            .filter(|(_, &p)| p > 1e-14)
            .map(|(i, &p)| (p, FockVector { amp: vecs.column(i).iter().copied().collect() }))
            .collect()
    }

    /// `tr[rho A]`.
    pub fn expect(&self, a: &CMatrix) -> C64 {
        linalg::trace_product(&self.mat, a)
    }
}

/// `<m| D(r e^{i theta}) |k>`.
pub fn displacement_element(m: usize, k: usize, r: f64, theta: f64) -> C64 {
    let x = r * r;
    let (lo, hi) = if m <= k { (m, k) } else { (k, m) };
    let phi = *laguerre_functions(hi - lo, lo + 1, x).last().expect("len > 0");
    let sign = if k > m && (k - m) % 2 == 1 { -1.0 } else { 1.0 };
    C64::from_polar(sign * phi * (-0.5 * x).exp(), theta * (m as f64 - k as f64))
}

/// `diag(e^{i theta n})`.
pub fn phase_shift_unitary(theta: f64, d: usize) -> CMatrix {
    CMatrix::from_fn(d, d, |i, j| {
        if i == j {
            C64::from_polar(1.0, theta * i as f64)
        } else {
            C64::new(0.0, 0.0)
        }
    })
}

/// State recipes recognised by [`make_state`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StateSpec {
    Number { n: usize },
    Coherent { re: f64, im: f64 },
    PairCoherent { re: f64, im: f64 },
    TwoModePhaseCoherent { q: usize, re: f64, im: f64 },
    Monomial { n: usize },
}

impl StateSpec {
    pub fn is_two_mode(&self) -> bool {
        matches!(
            self,
            StateSpec::PairCoherent { .. }
                | StateSpec::TwoModePhaseCoherent { .. }
                | StateSpec::Monomial { .. }
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum State {
    Single(FockVector),
    Two(TwoModeVector),
}

/// Output of [`make_state`].
#[derive(Debug, Clone, PartialEq)]
pub struct Prepared {
    pub state: State,
    /// `1 - ||amp||^2` relative to the untruncated normalized state.
    pub leakage: f64,
    /// Norm before normalization, for recipes that are not normalized.
    pub original_norm: Option<f64>,
}

impl Prepared {
    pub fn single(&self) -> Option<&FockVector> {
        match &self.state {
            State::Single(v) => Some(v),
            State::Two(_) => None,
        }
    }

    pub fn two_mode(&self) -> Option<&TwoModeVector> {
        match &self.state {
            State::Two(v) => Some(v),
            State::Single(_) => None,
        }
    }
}

/// Build the truncated state for `spec` at dimension `d`.
///
/// Amplitudes are the exact coefficients of the normalized infinite state, so
/// the truncated vector has norm below one by the reported leakage. The
/// monomial recipe is the exception: it is finite, and is returned normalized
/// with its original norm reported.
pub fn make_state(spec: StateSpec, d: usize, max_leakage: f64) -> Result<Prepared> {
    if d == 0 {
        return Err(Error::OutOfRange("dimension must be positive".into()));
    }
    let (state, original_norm) = match spec {
        StateSpec::Number { n } => (State::Single(FockVector::number(n, d)?), None),
        StateSpec::Coherent { re, im } => {
            (State::Single(FockVector::coherent(C64::new(re, im), d)), None)
        }
        StateSpec::PairCoherent { re, im } => {
            let alpha = C64::new(re, im);
            let c = pair_coherent_normalizer(alpha)?;
            let mut v = TwoModeVector::zeros(d);
            let mut a = C64::new(c, 0.0);
            for m in 0..d {
                if m > 0 {
                    a = a * alpha / m as f64;
                }
                v.set(m, m, a);
            }
            (State::Two(v), None)
        }
        StateSpec::TwoModePhaseCoherent { q, re, im } => {
            let alpha = C64::new(re, im);
            if alpha.norm() >= 1.0 {
                return Err(Error::OutOfRange(format!(
                    "two-mode phase coherent state needs |alpha| < 1, got {}",
                    alpha.norm()
                )));
            }
            if q >= d {
                return Err(Error::OutOfRange(format!("offset q = {q} at truncation {d}")));
            }
            let mut v = TwoModeVector::zeros(d);
            let mut a = C64::new((1.0 - alpha.norm_sqr()).sqrt(), 0.0);
            for m in 0..d - q {
                if m > 0 {
                    a *= alpha;
                }
                v.set(m, m + q, a);
            }
            (State::Two(v), None)
        }
        StateSpec::Monomial { n } => {
            if n >= d {
                return Err(Error::OutOfRange(format!("monomial order {n} at truncation {d}")));
            }
            let norm = binomial(2 * n, n).sqrt();
            let mut v = TwoModeVector::zeros(d);
            for m in 0..=n {
                let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
                v.set(m, m, C64::new(sign * binomial(n, m) / norm, 0.0));
            }
            (State::Two(v), Some(norm))
        }
    };
    let norm_sqr = match &state {
        State::Single(v) => v.norm_sqr(),
        State::Two(v) => v.norm_sqr(),
    };
    let leakage = (1.0 - norm_sqr).max(0.0);
    if leakage > max_leakage {
        return Err(Error::Leakage { leakage, bound: max_leakage });
    }
    Ok(Prepared { state, leakage, original_norm })
}

/// `C(alpha) = J0(2i|alpha|)^{-1/2}`.
pub fn pair_coherent_normalizer(alpha: C64) -> Result<f64> {
    let j = bessel_j0(C64::new(0.0, 2.0 * alpha.norm()))?;
    Ok(1.0 / j.re.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn number_and_vacuum() {
        let p = make_state(StateSpec::Number { n: 3 }, 8, 0.0).unwrap();
        let v = p.single().unwrap();
        assert_eq!(v.dim(), 8);
        for (i, a) in v.amp.iter().enumerate() {
            assert_eq!(*a, C64::new(if i == 3 { 1.0 } else { 0.0 }, 0.0));
        }
        let c = make_state(StateSpec::Coherent { re: 0.0, im: 0.0 }, 8, 0.0).unwrap();
        assert_eq!(c.single().unwrap(), &FockVector::vacuum(8));
        assert!(make_state(StateSpec::Number { n: 8 }, 8, 0.0).is_err());
    }

    #[test]
    fn pair_coherent_normalization() {
        let p = make_state(StateSpec::PairCoherent { re: 1.0, im: 0.0 }, 32, 1e-12).unwrap();
        let v = p.two_mode().unwrap();
        assert!((v.norm() - 1.0).abs() < 1e-10);
        // I0(2) = sum 1/(m!)^2
        let mut i0 = 0.0;
        let mut f = 1.0;
        for m in 0..30 {
            if m > 0 {
                f *= m as f64;
            }
            i0 += 1.0 / (f * f);
        }
        let c = pair_coherent_normalizer(C64::new(1.0, 0.0)).unwrap();
        assert!((c - i0.powf(-0.5)).abs() < 1e-14);
        // amp(m,m) proportional to 1/m!
        assert!((v.get(3, 3).re * 6.0 - c).abs() < 1e-14);
        assert_eq!(v.get(2, 3), C64::new(0.0, 0.0));
    }

    #[test]
    fn tmpc_rejects_large_alpha() {
        let s = StateSpec::TwoModePhaseCoherent { q: 1, re: 0.6, im: 0.8 };
        assert!(matches!(make_state(s, 16, 1.0), Err(Error::OutOfRange(_))));
    }

    #[test]
    fn monomial_is_normalized_with_reported_norm() {
        let p = make_state(StateSpec::Monomial { n: 3 }, 8, 0.0).unwrap();
        assert!((p.two_mode().unwrap().norm() - 1.0).abs() < 1e-14);
        assert!((p.original_norm.unwrap() - 20f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn leakage_bound_enforced() {
        let s = StateSpec::Coherent { re: 3.0, im: 0.0 };
        let err = make_state(s, 8, 1e-6).unwrap_err();
        assert!(matches!(err, Error::Leakage { .. }));
        let ok = make_state(s, 40, 1e-6).unwrap();
        assert!(ok.leakage < 1e-6);
    }

    #[test]
    fn displacement_simple_values() {
        for &r in &[0.0, 0.3, 1.7] {
            let v = displacement_element(0, 0, r, 0.8);
            assert!((v - C64::new((-r * r / 2.0).exp(), 0.0)).norm() < 1e-15);
        }
        for m in 0..5 {
            assert!((displacement_element(m, m, 0.0, 1.3) - 1.0).norm() < 1e-15);
        }
    }

    #[test]
    fn displacement_matches_matrix_exponential() {
        let d = 40;
        let r = 0.7;
        let theta = 0.4;
        let z = C64::from_polar(r, theta);
        // generator z a^dagger - conj(z) a
        let mut g = CMatrix::zeros(d, d);
        for n in 0..d - 1 {
            let s = ((n + 1) as f64).sqrt();
            g[(n + 1, n)] += z * s;
            g[(n, n + 1)] -= z.conj() * s;
        }
        let dm = g.exp();
        for m in 0..8 {
            for k in 0..8 {
                let want = dm[(m, k)];
                let got = displacement_element(m, k, r, theta);
                assert!((want - got).norm() < 1e-10, "({m},{k}): {want} vs {got}");
            }
        }
        let r1 = displacement_element(1, 0, r, 0.0);
        assert!((r1 - C64::new(r * (-r * r / 2.0).exp(), 0.0)).norm() < 1e-15);
    }

    #[test]
    fn phase_shift_group_law() {
        let d = 6;
        assert_eq!(phase_shift_unitary(0.0, d), CMatrix::identity(d, d));
        let p = phase_shift_unitary(std::f64::consts::PI, 2);
        assert!((p[(1, 1)] + 1.0).norm() < 1e-15);
        let (a, b) = (2.5, 4.9);
        let lhs = phase_shift_unitary(a, d) * phase_shift_unitary(b, d);
        let rhs = phase_shift_unitary((a + b).rem_euclid(std::f64::consts::TAU), d);
        assert!(linalg::max_abs(&(lhs - rhs)) < 1e-14);
    }

    #[test]
    fn density_validation_and_components() {
        let psi = FockVector::coherent(C64::new(0.5, 0.2), 10);
        let rho = DensityMatrix::from_pure(&psi).unwrap();
        assert!(DensityMatrix::new(rho.mat.clone()).is_ok());
        let comps = rho.pure_components();
        assert_eq!(comps.len(), 1);
        assert!((comps[0].0 - 1.0).abs() < 1e-12);
        let bad = CMatrix::identity(3, 3);
        assert!(DensityMatrix::new(bad).is_err());
        let conj2 = rho.conjugate().conjugate();
        assert_eq!(conj2, rho);
    }
}
