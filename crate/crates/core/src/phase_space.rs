//! Phase-shift covariant phase-space observables given by radial profiles
//! `(mu, eta_m(x))`, with the radial variable `x = r^2`.

use crate::angle::{angle_kernel_set, AnglePartition, Interval};
use crate::error::{Error, Result};
use crate::fock::phase_shift_unitary;
use crate::linalg::{self, CMatrix};
use crate::par;
use crate::phase::{structure_vectors, PhaseMatrix};
use crate::quadrature::QuadratureGrid;
use crate::special::{laguerre_functions, laguerre_table};
use crate::C64;

/// Where the radial measure lives.
#[derive(Debug, Clone, PartialEq)]
pub enum RadialSupport {
    /// Quadrature nodes of `e^{-x} dx`.
    Grid(QuadratureGrid),
    /// Unit point mass at `x0`; node index 0 refers to the atom.
    Atom { x0: f64 },
}

/// Sampled profile: `eta_m(x_q)` in `C^comp_dim` for every `m < dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct RadialProfile {
    pub dim: usize,
    pub support: RadialSupport,
    pub comp_dim: usize,
    eta: Vec<C64>,
}

impl RadialProfile {
    /// Build from `eta[(m * nodes + q) * comp_dim + c]`.
    pub fn new(dim: usize, support: RadialSupport, comp_dim: usize, eta: Vec<C64>) -> Result<Self> {
        let nodes = match &support {
            RadialSupport::Grid(g) => g.len(),
            RadialSupport::Atom { x0 } => {
                if !(*x0 > 0.0 && x0.is_finite()) {
                    return Err(Error::OutOfRange(format!("atom position {x0}")));
                }
                1
            }
        };
        let want = dim * nodes * comp_dim;
        if eta.len() != want {
            return Err(Error::DimensionMismatch { expected: want, got: eta.len() });
        }
        Ok(RadialProfile { dim, support, comp_dim, eta })
    }

    pub fn node_count(&self) -> usize {
        match &self.support {
            RadialSupport::Grid(g) => g.len(),
            RadialSupport::Atom { .. } => 1,
        }
    }

    pub fn node(&self, q: usize) -> f64 {
        match &self.support {
            RadialSupport::Grid(g) => g.nodes[q],
            RadialSupport::Atom { x0 } => *x0,
        }
    }

    pub fn weight(&self, q: usize) -> f64 {
        match &self.support {
            RadialSupport::Grid(g) => g.weights[q],
            RadialSupport::Atom { .. } => 1.0,
        }
    }

    pub fn all_nodes(&self) -> Vec<usize> {
        (0..self.node_count()).collect()
    }

    /// `eta_m(x_q)`.
    pub fn eta(&self, m: usize, q: usize) -> &[C64] {
        let start = (m * self.node_count() + q) * self.comp_dim;
        &self.eta[start..start + self.comp_dim]
    }

    /// `sum_q w_q ||eta_m(x_q)||^2`; equals one for a normalized profile.
    pub fn normalization(&self, m: usize) -> f64 {
        (0..self.node_count())
            .map(|q| self.weight(q) * self.eta(m, q).iter().map(|z| z.norm_sqr()).sum::<f64>())
            .sum()
    }

    /// `c_mn(X) = sum_{q in X} w_q <eta_m(x_q)|eta_n(x_q)>`.
    pub fn radial_coefficients(&self, set: &[usize]) -> Result<CMatrix> {
        let nodes = self.node_count();
        if let Some(&bad) = set.iter().find(|&&q| q >= nodes) {
            return Err(Error::OutOfRange(format!("radial node {bad} of {nodes}")));
        }
        let d = self.dim;
        let rows = par::map_range(d, |m| {
            (0..d)
                .map(|n| {
                    set.iter()
                        .map(|&q| {
                            let dot: C64 = self
                                .eta(m, q)
                                .iter()
                                .zip(self.eta(n, q))
                                .map(|(a, b)| a.conj() * b)
                                .sum();
                            dot * self.weight(q)
                        })
                        .sum::<C64>()
                })
                .collect::<Vec<C64>>()
        });
        Ok(CMatrix::from_fn(d, d, |m, n| rows[m][n]))
    }
}

/// Profile generated by the number state `|k>`:
/// `eta_m(x) = (-1)^{max(0,k-m)} sqrt(min!/max!) x^{|m-k|/2} L^{|m-k|}_{min(m,k)}(x)`.
pub fn profile_g(k: usize, d: usize, grid: &QuadratureGrid) -> Result<RadialProfile> {
    if k >= d {
        return Err(Error::OutOfRange(format!("generator |{k}> at truncation {d}")));
    }
    let nq = grid.len();
    let mut eta = vec![C64::new(0.0, 0.0); d * nq];
    for (q, &x) in grid.nodes.iter().enumerate() {
        for (m, v) in g_profile_values(k, d, x).into_iter().enumerate() {
            eta[m * nq + q] = C64::new(v, 0.0);
        }
    }
    RadialProfile::new(d, RadialSupport::Grid(grid.clone()), 1, eta)
}

/// `eta^k_m(x)` for `m < d` at a single point.
pub fn g_profile_values(k: usize, d: usize, x: f64) -> Vec<f64> {
    let mut out = vec![0.0; d];
    for (m, slot) in out.iter_mut().enumerate() {
        let (lo, hi) = if m <= k { (m, k) } else { (k, m) };
        let phi = laguerre_functions(hi - lo, lo + 1, x)[lo];
        let sign = if k > m && (k - m) % 2 == 1 { -1.0 } else { 1.0 };
        *slot = sign * phi;
    }
    out
}

/// Profile `eta_m(x) = L_{min(m,k)}(x)`.
pub fn profile_f(k: usize, d: usize, grid: &QuadratureGrid) -> Result<RadialProfile> {
    if k >= d {
        return Err(Error::OutOfRange(format!("generator |{k}> at truncation {d}")));
    }
    let nq = grid.len();
    let mut eta = vec![C64::new(0.0, 0.0); d * nq];
    for (q, &x) in grid.nodes.iter().enumerate() {
        let l = laguerre_table(k + 1, x);
        for m in 0..d {
            eta[m * nq + q] = C64::new(l[m.min(k)], 0.0);
        }
    }
    RadialProfile::new(d, RadialSupport::Grid(grid.clone()), 1, eta)
}

/// Point-mass radial measure at `x0` with constant structure vectors of `c`.
pub fn profile_dirac(x0: f64, c: &PhaseMatrix) -> Result<RadialProfile> {
    let sv = structure_vectors(c);
    let eta: Vec<C64> = sv.vectors.iter().flatten().copied().collect();
    RadialProfile::new(c.dim(), RadialSupport::Atom { x0 }, sv.rank, eta)
}

/// Effect on `X x Theta`: entries `c_mn(X) K(m-n, Theta)`.
pub fn psc_effect(profile: &RadialProfile, set: &[usize], iv: &Interval) -> Result<CMatrix> {
    psc_effect_set(profile, set, std::slice::from_ref(iv))
}

/// Same as [`psc_effect`] for a union of angle intervals.
pub fn psc_effect_set(profile: &RadialProfile, set: &[usize], ivs: &[Interval]) -> Result<CMatrix> {
    let c = profile.radial_coefficients(set)?;
    Ok(apply_angle(&c, ivs))
}

/// Multiply `c_mn` by `K(m-n, set)` entrywise.
pub fn apply_angle(c: &CMatrix, ivs: &[Interval]) -> CMatrix {
    let d = c.nrows();
    let ker: Vec<C64> = (0..2 * d - 1)
        .map(|i| angle_kernel_set(i as i64 - (d as i64 - 1), ivs))
        .collect();
    CMatrix::from_fn(d, d, |m, n| c[(m, n)] * ker[m + d - 1 - n])
}

/// Angle margin as a phase matrix and the radial margin
/// `radial[b][m] = c_mm(X_b)` for each radial bin.
#[derive(Debug, Clone)]
pub struct Margins {
    pub phase: PhaseMatrix,
    pub radial: Vec<Vec<f64>>,
}

/// Floor below which a margin phase matrix is refused rather than repaired.
pub const MARGIN_PSD_FLOOR: f64 = -1e-8;

pub fn margins(profile: &RadialProfile, radial_bins: &[Vec<usize>]) -> Result<Margins> {
    let c = profile.radial_coefficients(&profile.all_nodes())?;
    let phase = PhaseMatrix::with_floor(c, MARGIN_PSD_FLOOR)?;
    let radial = radial_bins
        .iter()
        .map(|b| {
            (0..profile.dim)
                .map(|m| {
                    b.iter()
                        .map(|&q| profile.weight(q) * profile.eta(m, q).iter().map(|z| z.norm_sqr()).sum::<f64>())
                        .sum()
                })
                .collect()
        })
        .collect();
    Ok(Margins { phase, radial })
}

/// Split the nodes of `grid` into bins `[edges_i, edges_{i+1})`; the last edge
/// may be infinite.
pub fn radial_bins(grid: &QuadratureGrid, edges: &[f64]) -> Result<Vec<Vec<usize>>> {
    if edges.len() < 2 || edges.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::InvalidPartition("radial edges must increase".into()));
    }
    Ok(edges.windows(2).map(|w| grid.nodes_in(w[0], w[1])).collect())
}

/// Discrete covariantization on a uniform partition:
/// `P_j = (1/K) sum_s e^{-i theta_s N} M_{j+s} e^{i theta_s N}`.
pub fn covariantize(effects: &[CMatrix], p: &AnglePartition) -> Result<Vec<CMatrix>> {
    let k = p.len();
    if effects.len() != k {
        return Err(Error::DimensionMismatch { expected: k, got: effects.len() });
    }
    if !p.is_uniform() {
        return Err(Error::InvalidPartition("covariantization needs a uniform partition".into()));
    }
    let d = effects[0].nrows();
    let shifts: Vec<CMatrix> = (0..k)
        .map(|s| phase_shift_unitary(std::f64::consts::TAU * s as f64 / k as f64, d))
        .collect();
    Ok(par::map_range(k, |j| {
        let mut acc = CMatrix::zeros(d, d);
        for (s, u) in shifts.iter().enumerate() {
            acc += u.adjoint() * &effects[(j + s) % k] * u;
        }
        acc * C64::new(1.0 / k as f64, 0.0)
    }))
}

/// Largest covariance defect of a binned table on its own shift group:
/// `max_{j,t} || e^{i theta_t N} P_j e^{-i theta_t N} - P_{j+t} ||_F`.
pub fn partition_covariance_defect(effects: &[CMatrix], p: &AnglePartition) -> f64 {
    let k = p.len();
    let d = effects[0].nrows();
    let mut worst: f64 = 0.0;
    for t in 0..k {
        let u = phase_shift_unitary(std::f64::consts::TAU * t as f64 / k as f64, d);
        for j in 0..k {
            let lhs = &u * &effects[j] * u.adjoint();
            worst = worst.max(linalg::frobenius(&(lhs - &effects[(j + t) % k])));
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::special::ln_gamma;

    fn grid() -> QuadratureGrid {
        QuadratureGrid::radial(64).unwrap()
    }

    #[test]
    fn g0_values_and_normalization() {
        let g = grid();
        let prof = profile_g(0, 20, &g).unwrap();
        for m in 0..=16 {
            assert!((prof.normalization(m) - 1.0).abs() < 1e-8, "m={m}");
        }
        let x = 2.3f64;
        let vals = g_profile_values(0, 6, x);
        for (m, v) in vals.iter().enumerate() {
            let want = (0.5 * m as f64 * x.ln() - 0.5 * ln_gamma(m as f64 + 1.0)).exp();
            assert!((v - want).abs() < 1e-12);
        }
    }

    #[test]
    fn g0_margin_is_gamma_integral() {
        let prof = profile_g(0, 16, &grid()).unwrap();
        let mg = margins(&prof, &[prof.all_nodes()]).unwrap();
        for m in 0..16 {
            for n in 0..16 {
                let s = 0.5 * (m + n) as f64;
                let want = (ln_gamma(s + 1.0) - 0.5 * (ln_gamma(m as f64 + 1.0) + ln_gamma(n as f64 + 1.0))).exp();
                assert!((mg.phase.get(m, n).re - want).abs() < 1e-8);
            }
        }
        let c01 = mg.phase.get(0, 1).re;
        assert!((c01 - std::f64::consts::PI.sqrt() / 2.0).abs() < 1e-8);
    }

    #[test]
    fn f_margins_identity_pattern() {
        let d = 24;
        let g = grid();
        for k in 0..5 {
            let prof = profile_f(k, d, &g).unwrap();
            let mg = margins(&prof, &[prof.all_nodes()]).unwrap();
            for m in 0..d {
                for n in 0..d {
                    let want = if m.min(k) == n.min(k) { 1.0 } else { 0.0 };
                    assert!((mg.phase.get(m, n) - want).norm() < 1e-9, "k={k} ({m},{n})");
                }
            }
        }
    }

    #[test]
    fn f1_radial_margin_separates_vacuum() {
        let g = grid();
        let prof = profile_f(1, 10, &g).unwrap();
        let bins = radial_bins(&g, &[0.0, 0.5, 2.0, f64::INFINITY]).unwrap();
        let mg = margins(&prof, &bins).unwrap();
        for row in &mg.radial {
            for m in 2..10 {
                assert!((row[m] - row[1]).abs() < 1e-12);
            }
        }
        assert!((mg.radial[0][0] - mg.radial[0][1]).abs() > 1e-3);
        for m in 0..10 {
            let s: f64 = mg.radial.iter().map(|r| r[m]).sum();
            assert!((s - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn dirac_profile_margins() {
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(9);
        let c = PhaseMatrix::random(6, 2, &mut rng);
        let prof = profile_dirac(1.5, &c).unwrap();
        let mg = margins(&prof, &[vec![0], vec![]]).unwrap();
        assert!(linalg::max_abs(&(mg.phase.matrix() - c.matrix())) < 1e-9);
        assert!(mg.radial[0].iter().all(|v| (v - 1.0).abs() < 1e-9));
        assert!(mg.radial[1].iter().all(|v| *v == 0.0));
        assert!(profile_dirac(0.0, &c).is_err());
    }

    #[test]
    fn full_region_is_identity() {
        let d = 20;
        let g = grid();
        for prof in [profile_g(2, d, &g).unwrap(), profile_f(3, d, &g).unwrap()] {
            let e = psc_effect(&prof, &prof.all_nodes(), &Interval::full()).unwrap();
            for m in 0..=d / 2 {
                for n in 0..=d / 2 {
                    let want = if m == n { 1.0 } else { 0.0 };
                    assert!((e[(m, n)] - want).norm() < 1e-8);
                }
            }
        }
    }

    #[test]
    fn covariantize_fixed_point() {
        let d = 8;
        let g = QuadratureGrid::radial(24).unwrap();
        let prof = profile_g(1, d, &g).unwrap();
        let p = AnglePartition::uniform(8).unwrap();
        let set = g.nodes_in(0.0, 1.5);
        let eff: Vec<CMatrix> = p.bins().iter().map(|b| psc_effect(&prof, &set, b).unwrap()).collect();
        let cov = covariantize(&eff, &p).unwrap();
        for (a, b) in eff.iter().zip(&cov) {
            assert!(linalg::max_abs(&(a - b)) < 1e-10);
        }
        assert!(partition_covariance_defect(&cov, &p) < 1e-10);
    }
}
