//! Double homodyne detection: the joint outcome distribution after the
//! coupling `U`, the phase-space observable it realizes, and the modified
//! scheme that inserts `W` in front to recover the canonical phase.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::angle::AnglePartition;
use crate::couplings::{CouplingKernel, KernelLabel, WMatrix};
use crate::error::{Error, Result};
use crate::fock::{DensityMatrix, FockVector, TwoModeVector};
use crate::linalg::CMatrix;
use crate::phase::{phase_distribution, PhaseMatrix};
use crate::phase_space::{apply_angle, profile_g, RadialProfile};
use crate::quadrature::QuadratureGrid;
use crate::{par, C64};

/// Binned joint distribution over (radial node, angle bin).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JointDensityTable {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    pub edges: Vec<f64>,
    /// `probs[q * bins + j]`.
    pub probs: Vec<f64>,
    pub mass: f64,
}

impl JointDensityTable {
    /// Build from `rows[q][j]`, clipping entries in `[-1e-12, 0)`.
    pub fn from_rows(grid: &QuadratureGrid, p: &AnglePartition, rows: Vec<Vec<f64>>) -> Result<Self> {
        let mut probs = Vec::with_capacity(grid.len() * p.len());
        for row in rows {
            for v in row {
                if v < -1e-12 {
                    return Err(Error::NotPositive { min_eig: v, floor: -1e-12 });
                }
                probs.push(v.max(0.0));
            }
        }
        let mass = probs.iter().sum();
        Ok(JointDensityTable {
            nodes: grid.nodes.clone(),
            weights: grid.weights.clone(),
            edges: p.edges().to_vec(),
            probs,
            mass,
        })
    }

    /// Table from explicit cell probabilities on `rows x bins`.
    pub fn from_probs(nodes: Vec<f64>, weights: Vec<f64>, edges: Vec<f64>, probs: Vec<f64>) -> Result<Self> {
        let bins = edges.len().saturating_sub(1);
        if probs.len() != nodes.len() * bins {
            return Err(Error::DimensionMismatch { expected: nodes.len() * bins, got: probs.len() });
        }
        let mass = probs.iter().sum();
        Ok(JointDensityTable { nodes, weights, edges, probs, mass })
    }

    pub fn bins(&self) -> usize {
        self.edges.len() - 1
    }

    pub fn rows(&self) -> usize {
        self.nodes.len()
    }

    pub fn cell(&self, q: usize, j: usize) -> f64 {
        self.probs[q * self.bins() + j]
    }

    /// Probability density w.r.t. `dx d theta` in cell `(q, j)`, with the
    /// radial weight taken against `e^{-x} dx` and the angle bin width.
    pub fn density(&self, q: usize, j: usize) -> f64 {
        let width = self.edges[j + 1] - self.edges[j];
        self.cell(q, j) * (-self.nodes[q]).exp() / (self.weights[q] * width)
    }

    pub fn angle_marginal(&self) -> Vec<f64> {
        let k = self.bins();
        (0..k)
            .map(|j| (0..self.rows()).map(|q| self.cell(q, j)).sum())
            .collect()
    }

    pub fn radial_marginal(&self) -> Vec<f64> {
        let k = self.bins();
        (0..self.rows())
            .map(|q| (0..k).map(|j| self.cell(q, j)).sum())
            .collect()
    }
}

/// `sum_k lambda_k P^{G^k}(X x Theta)` for a number-diagonal parameter state.
pub fn gsigma_effect(
    lambda: &[f64],
    set: &[usize],
    iv: &crate::angle::Interval,
    grid: &QuadratureGrid,
) -> Result<CMatrix> {
    let c = gsigma_radial(lambda, set, grid)?;
    Ok(apply_angle(&c, std::slice::from_ref(iv)))
}

/// Radial coefficients `sum_k lambda_k c^{(k)}_mn(X)`.
pub fn gsigma_radial(lambda: &[f64], set: &[usize], grid: &QuadratureGrid) -> Result<CMatrix> {
    let d = lambda.len();
    check_weights(lambda)?;
    let mut c = CMatrix::zeros(d, d);
    for (k, &l) in lambda.iter().enumerate() {
        if l == 0.0 {
            continue;
        }
        let prof: RadialProfile = profile_g(k, d, grid)?;
        c += prof.radial_coefficients(set)? * C64::new(l, 0.0);
    }
    Ok(c)
}

fn check_weights(lambda: &[f64]) -> Result<()> {
    if lambda.iter().any(|&l| !(l >= 0.0)) {
        return Err(Error::InvalidState("negative parameter weight".into()));
    }
    let s: f64 = lambda.iter().sum();
    if (s - 1.0).abs() > 1e-10 {
        return Err(Error::TraceDeficit { deficit: 1.0 - s, bound: 1e-10 });
    }
    Ok(())
}

/// Diagonal of `sigma`, refusing states with coherences (covariance of the
/// measured observable needs a number-diagonal parameter state).
pub fn diagonal_weights(sigma: &DensityMatrix) -> Result<Vec<f64>> {
    let off = sigma.max_offdiag();
    if off > 1e-12 {
        return Err(Error::NonDiagonalParameter { max_offdiag: off });
    }
    Ok((0..sigma.dim()).map(|i| sigma.mat[(i, i)].re).collect())
}

/// `sigma' = C sigma C`, the entrywise conjugate in the number basis.
pub fn conjugate_state(sigma: &DensityMatrix) -> DensityMatrix {
    sigma.conjugate()
}

/// Largest tolerated loss of probability mass in the homodyne table.
pub const MASS_DEFICIT_BOUND: f64 = 1e-4;

/// Joint outcome distribution of `U (rho (x) sigma) U^*` on the grid cells.
pub fn double_homodyne_dist(
    rho: &DensityMatrix,
    sigma: &DensityMatrix,
    grid: &QuadratureGrid,
    p: &AnglePartition,
) -> Result<JointDensityTable> {
    let d = rho.dim();
    if sigma.dim() != d {
        return Err(Error::DimensionMismatch { expected: d, got: sigma.dim() });
    }
    let kernel = CouplingKernel::new(KernelLabel::U, d, grid);
    let pairs: Vec<(f64, FockVector, FockVector)> = rho
        .pure_components()
        .into_iter()
        .flat_map(|(pr, psi)| {
            sigma
                .pure_components()
                .into_iter()
                .map(move |(ps, phi)| (pr * ps, psi.clone(), phi))
        })
        .collect();
    let tables = par::map_slice(&pairs, |(w, psi, phi)| -> Result<(f64, Vec<Vec<f64>>)> {
        let two = TwoModeVector::product(psi, phi)?;
        Ok((*w, kernel.apply(&two)?.cell_probabilities(p)))
    });
    let mut rows = vec![vec![0.0; p.len()]; grid.len()];
    for t in tables {
        let (w, cells) = t?;
        for (acc, row) in rows.iter_mut().zip(cells) {
            for (a, v) in acc.iter_mut().zip(row) {
                *a += w * v;
            }
        }
    }
    let table = JointDensityTable::from_rows(grid, p, rows)?;
    if (1.0 - table.mass).abs() > MASS_DEFICIT_BOUND {
        return Err(Error::TraceDeficit { deficit: 1.0 - table.mass, bound: MASS_DEFICIT_BOUND });
    }
    Ok(table)
}

/// Cell probabilities `tr[rho G^lambda(x_q x Theta_j)]`, evaluated from the
/// effects rather than from the coupling.
pub fn gsigma_table(
    rho: &DensityMatrix,
    lambda: &[f64],
    grid: &QuadratureGrid,
    p: &AnglePartition,
) -> Result<JointDensityTable> {
    let d = rho.dim();
    if lambda.len() != d {
        return Err(Error::DimensionMismatch { expected: d, got: lambda.len() });
    }
    check_weights(lambda)?;
    let profiles: Vec<(f64, RadialProfile)> = lambda
        .iter()
        .enumerate()
        .filter(|(_, &l)| l > 0.0)
        .map(|(k, &l)| profile_g(k, d, grid).map(|pr| (l, pr)))
        .collect::<Result<_>>()?;
    let rows = par::map_range(grid.len(), |q| -> Result<Vec<f64>> {
        let mut c = CMatrix::zeros(d, d);
        for (l, prof) in &profiles {
            c += prof.radial_coefficients(&[q])? * C64::new(*l, 0.0);
        }
        let s = weighted_sums(&rho.mat, &c);
        Ok(p.bins()
            .iter()
            .map(|iv| {
                s.iter()
                    .enumerate()
                    .map(|(i, v)| v * crate::angle::angle_kernel_integral(i as i64 - (d as i64 - 1), iv))
                    .sum::<C64>()
                    .re
            })
            .collect())
    });
    JointDensityTable::from_rows(grid, p, rows.into_iter().collect::<Result<_>>()?)
}

// Same layout as `difference_sums`, for radial coefficients that are not a
// normalized phase matrix.
fn weighted_sums(rho: &CMatrix, c: &CMatrix) -> Vec<C64> {
    let d = c.nrows();
    let mut s = vec![C64::new(0.0, 0.0); 2 * d - 1];
    for m in 0..d {
        for n in 0..d {
            s[m + d - 1 - n] += rho[(n, m)] * c[(m, n)];
        }
    }
    s
}

/// Largest per-cell gap between the coupled distribution and the effect
/// probabilities of `G^{sigma'}`.
pub fn measurement_identity_defect(
    rho: &DensityMatrix,
    sigma: &DensityMatrix,
    grid: &QuadratureGrid,
    p: &AnglePartition,
) -> Result<f64> {
    let lambda = diagonal_weights(&conjugate_state(sigma))?;
    let a = double_homodyne_dist(rho, sigma, grid, p)?;
    let b = gsigma_table(rho, &lambda, grid, p)?;
    Ok(a.probs
        .iter()
        .zip(&b.probs)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max))
}

/// Angle distributions of the modified scheme.
#[derive(Debug, Clone, Serialize)]
pub struct ModifiedScheme {
    /// `W` then `U`, angle marginal.
    pub via_uw: Vec<f64>,
    /// Directly through `V`.
    pub via_v: Vec<f64>,
    /// Canonical phase distribution of the input.
    pub canonical: Vec<f64>,
    /// Probability mass that reached the detector after truncating `W`.
    pub mass_uw: f64,
}

impl ModifiedScheme {
    /// `max_j |via_uw_j - canonical_j|`.
    pub fn residual(&self) -> Vec<f64> {
        self.via_uw.iter().zip(&self.canonical).map(|(a, b)| a - b).collect()
    }

    pub fn max_residual(&self) -> f64 {
        self.residual().iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max_path_gap(&self) -> f64 {
        self.via_uw
            .iter()
            .zip(&self.via_v)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }
}

/// Prepare `W (rho (x) |0><0|) W^*`, detect with `U` and keep the angle
/// margin; the same quantity is also computed through `V` directly.
pub fn modified_scheme_phase_dist(
    rho: &DensityMatrix,
    w: &WMatrix,
    grid: &QuadratureGrid,
    p: &AnglePartition,
) -> Result<ModifiedScheme> {
    let d = rho.dim();
    if w.dim != d {
        return Err(Error::DimensionMismatch { expected: d, got: w.dim });
    }
    let uk = CouplingKernel::new(KernelLabel::U, w.out_dim, grid);
    let vk = CouplingKernel::new(KernelLabel::V, d, grid);
    let vac = FockVector::vacuum(d);
    let comps = rho.pure_components();
    let parts = par::map_slice(&comps, |(pr, psi)| -> Result<(Vec<f64>, Vec<f64>, f64)> {
        let two = TwoModeVector::product(psi, &vac)?;
        let out = uk.apply(&w.apply(&two)?)?;
        let uw = out.angle_marginal(p);
        let v = vk.apply(&two)?.angle_marginal(p);
        Ok((uw.iter().map(|x| x * pr).collect(), v.iter().map(|x| x * pr).collect(), out.mass() * pr))
    });
    let k = p.len();
    let mut via_uw = vec![0.0; k];
    let mut via_v = vec![0.0; k];
    let mut mass_uw = 0.0;
    for part in parts {
        let (a, b, m) = part?;
        via_uw.iter_mut().zip(a).for_each(|(x, y)| *x += y);
        via_v.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        mass_uw += m;
    }
    let canonical = phase_distribution(rho, &PhaseMatrix::canonical(d), p)?;
    Ok(ModifiedScheme { via_uw, via_v, canonical, mass_uw })
}

/// Draw `n` cells `(q, j)` i.i.d. from the table, deterministically in `seed`.
pub fn sample_outcomes(table: &JointDensityTable, n: usize, seed: u64) -> Result<Vec<(usize, usize)>> {
    if n == 0 {
        return Ok(Vec::new());
    }
    let dist = WeightedIndex::new(&table.probs)
        .map_err(|e| Error::InvalidState(format!("cannot sample from table: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = table.bins();
    Ok((0..n)
        .map(|_| {
            let i = dist.sample(&mut rng);
            (i / k, i % k)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::angle::Interval;
    use crate::linalg;
    use std::f64::consts::PI;

    #[test]
    fn vacuum_vacuum_is_gaussian() {
        let d = 8;
        let g = QuadratureGrid::radial(32).unwrap();
        let p = AnglePartition::uniform(16).unwrap();
        let vac = DensityMatrix::from_pure(&FockVector::vacuum(d)).unwrap();
        let t = double_homodyne_dist(&vac, &vac, &g, &p).unwrap();
        assert!((t.mass - 1.0).abs() < 1e-12);
        for q in [0usize, 7, 20] {
            for j in [0usize, 5] {
                // e^{-x}/(2 pi) integrated over the cell
                let want = g.weights[q] / 16.0;
                assert!((t.cell(q, j) - want).abs() < 1e-15);
                assert!((t.density(q, j) - (-g.nodes[q]).exp() / (2.0 * PI)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn one_photon_radial_profile() {
        let d = 8;
        let g = QuadratureGrid::radial(32).unwrap();
        let p = AnglePartition::uniform(8).unwrap();
        let one = DensityMatrix::from_pure(&FockVector::number(1, d).unwrap()).unwrap();
        let vac = DensityMatrix::from_pure(&FockVector::vacuum(d)).unwrap();
        let t = double_homodyne_dist(&one, &vac, &g, &p).unwrap();
        let rad = t.radial_marginal();
        for q in 0..g.len() {
            assert!((rad[q] - g.weights[q] * g.nodes[q]).abs() < 1e-13);
            assert!((t.cell(q, 0) - t.cell(q, 5)).abs() < 1e-15);
        }
    }

    #[test]
    fn gsigma_vacuum_full_region_identity() {
        let d = 12;
        let g = QuadratureGrid::radial(32).unwrap();
        let mut lambda = vec![0.0; d];
        lambda[0] = 1.0;
        let e = gsigma_effect(&lambda, &g.all_nodes(), &Interval::full(), &g).unwrap();
        assert!(linalg::max_abs(&(e - CMatrix::identity(d, d))) < 1e-8);
        let c = gsigma_radial(&lambda, &g.all_nodes(), &g).unwrap();
        assert!((c[(0, 1)].re - PI.sqrt() / 2.0).abs() < 1e-12);
    }

    #[test]
    fn gsigma_mixture_is_average() {
        let d = 8;
        let g = QuadratureGrid::radial(24).unwrap();
        let set = g.nodes_in(0.5, 3.0);
        let iv = Interval::new(0.3, 2.0).unwrap();
        let mut l0 = vec![0.0; d];
        l0[0] = 1.0;
        let mut l1 = vec![0.0; d];
        l1[1] = 1.0;
        let mut mix = vec![0.0; d];
        mix[0] = 0.5;
        mix[1] = 0.5;
        let a = gsigma_effect(&l0, &set, &iv, &g).unwrap();
        let b = gsigma_effect(&l1, &set, &iv, &g).unwrap();
        let m = gsigma_effect(&mix, &set, &iv, &g).unwrap();
        assert!(linalg::max_abs(&((a + b) * C64::new(0.5, 0.0) - m)) < 1e-15);
    }

    #[test]
    fn non_diagonal_parameter_rejected() {
        let sigma = DensityMatrix::from_pure(&FockVector::coherent(C64::new(0.5, 0.0), 6)).unwrap();
        assert!(matches!(diagonal_weights(&sigma), Err(Error::NonDiagonalParameter { .. })));
    }

    #[test]
    fn conjugate_coherent() {
        let a = C64::new(0.4, 0.7);
        let s = DensityMatrix::from_pure(&FockVector::coherent(a, 10)).unwrap();
        let want = DensityMatrix::from_pure(&FockVector::coherent(a.conj(), 10)).unwrap();
        assert!(linalg::max_abs(&(conjugate_state(&s).mat - want.mat)) < 1e-15);
        let diag = DensityMatrix::diagonal(&[0.5, 0.5, 0.0]).unwrap();
        assert_eq!(conjugate_state(&diag), diag);
    }

    #[test]
    fn identity_coherent_vs_one_photon() {
        let d = 16;
        let g = QuadratureGrid::radial(48).unwrap();
        let p = AnglePartition::uniform(16).unwrap();
        let rho = DensityMatrix::from_pure(&FockVector::coherent(C64::new(1.0, 0.0), d)).unwrap();
        let sigma = DensityMatrix::from_pure(&FockVector::number(1, d).unwrap()).unwrap();
        assert!(measurement_identity_defect(&rho, &sigma, &g, &p).unwrap() < 1e-6);
    }

    #[test]
    fn sampling_contract() {
        let g = QuadratureGrid::radial(4).unwrap();
        let p = AnglePartition::uniform(4).unwrap();
        let mut probs = vec![0.0; 16];
        probs[6] = 1.0;
        let t = JointDensityTable::from_probs(g.nodes.clone(), g.weights.clone(), p.edges().to_vec(), probs).unwrap();
        assert!(sample_outcomes(&t, 100, 1).unwrap().iter().all(|&c| c == (1, 2)));
        assert!(sample_outcomes(&t, 0, 1).unwrap().is_empty());
        let a = sample_outcomes(&t, 10, 42).unwrap();
        assert_eq!(a, sample_outcomes(&t, 10, 42).unwrap());
    }

    #[test]
    fn vacuum_modified_scheme_is_uniform() {
        let d = 8;
        let g = QuadratureGrid::radial(24).unwrap();
        let p = AnglePartition::uniform(8).unwrap();
        let w = crate::couplings::w_matrix(d, &g).unwrap();
        let vac = DensityMatrix::from_pure(&FockVector::vacuum(d)).unwrap();
        let r = modified_scheme_phase_dist(&vac, &w, &g, &p).unwrap();
        for v in r.via_uw.iter().chain(&r.via_v) {
            assert!((v - 1.0 / 8.0).abs() < 1e-12);
        }
    }
}
