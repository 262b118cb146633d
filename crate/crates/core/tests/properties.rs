use std::f64::consts::TAU;

use phasekit::angle::{AnglePartition, Interval};
use phasekit::couplings::{rns_pack, rns_unpack, w_matrix};
use phasekit::fock::{phase_shift_unitary, DensityMatrix};
use phasekit::instruments::rank1_map;
use phasekit::linalg::{self, CMatrix};
use phasekit::phase::{phase_effect, phase_effect_set, phase_effects, structure_vectors, MarkovKernel, PhaseMatrix};
use phasekit::phase_space::{covariantize, partition_covariance_defect, profile_g, psc_effect, psc_effect_set};
use phasekit::quadrature::QuadratureGrid;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn interval() -> impl Strategy<Value = Interval> {
    (0.0..TAU, 0.0..1.0f64).prop_map(|(lo, f)| Interval::new(lo, lo + f * (TAU - lo)).unwrap())
}

fn edges() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.01..TAU - 0.01, 3..9).prop_map(|mut v| {
        v.sort_by(f64::total_cmp);
        v.dedup_by(|a, b| (*a - *b).abs() < 1e-3);
        let mut e = vec![0.0];
        e.extend(v);
        e.push(TAU);
        e
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn random_density_matrices_are_states(seed in any::<u64>(), d in 2usize..12, rank in 1usize..5) {
        let rho = DensityMatrix::random(d, rank, &mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert!(linalg::max_abs(&(&rho.mat - rho.mat.adjoint())) < 1e-12);
        prop_assert!((linalg::trace(&rho.mat).re - 1.0).abs() < 1e-10);
        prop_assert!(linalg::min_eigenvalue(&rho.mat) > -1e-10);
    }

    #[test]
    fn quadrature_moments(q in 4usize..120) {
        for g in [QuadratureGrid::radial(q).unwrap(), QuadratureGrid::laguerre(q).unwrap()] {
            prop_assert!((g.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!((g.integrate(|x| x) - 1.0).abs() < 1e-10);
            prop_assert!(g.weights.iter().all(|&w| w > 0.0));
        }
    }

    #[test]
    fn partitions_cover_circle(e in edges()) {
        let p = AnglePartition::from_edges(e).unwrap();
        prop_assert!(p.edges().windows(2).all(|w| w[0] < w[1]));
        let total: f64 = p.bins().iter().map(Interval::width).sum();
        prop_assert!((total - TAU).abs() < 1e-12);
    }

    #[test]
    fn phase_matrix_structure(seed in any::<u64>(), d in 2usize..10, rank in 1usize..10) {
        let c = PhaseMatrix::random(d, rank.min(d), &mut ChaCha8Rng::seed_from_u64(seed));
        for m in 0..d {
            prop_assert_eq!(c.get(m, m).re, 1.0);
        }
        prop_assert!(linalg::min_eigenvalue(c.matrix()) > -1e-10);
        let sv = structure_vectors(&c);
        for m in 0..d {
            let n: f64 = sv.vectors[m].iter().map(|z| z.norm_sqr()).sum();
            prop_assert!((n.sqrt() - 1.0).abs() < 1e-10);
        }
        prop_assert!(linalg::max_abs(&(sv.gram_matrix() - c.matrix())) < 1e-9);
    }

    #[test]
    fn phase_effects_form_a_povm(seed in any::<u64>(), d in 2usize..9, e in edges()) {
        let c = PhaseMatrix::random(d, 2.min(d), &mut ChaCha8Rng::seed_from_u64(seed));
        let p = AnglePartition::from_edges(e).unwrap();
        let mut sum = CMatrix::zeros(d, d);
        for eff in phase_effects(&c, &p) {
            let (vals, _) = linalg::hermitian_eigen(&eff);
            prop_assert!(vals.iter().all(|&v| v > -1e-10 && v < 1.0 + 1e-10));
            sum += eff;
        }
        prop_assert!(linalg::max_abs(&(sum - CMatrix::identity(d, d))) < 1e-10);
    }

    #[test]
    fn phase_effects_are_covariant(seed in any::<u64>(), d in 2usize..9, iv in interval(), th in 0.0..TAU) {
        let c = PhaseMatrix::random(d, d, &mut ChaCha8Rng::seed_from_u64(seed));
        let u = phase_shift_unitary(th, d);
        let lhs = &u * phase_effect(&c, &iv) * u.adjoint();
        prop_assert!(linalg::max_abs(&(lhs - phase_effect_set(&c, &iv.shifted(th)))) < 1e-10);
    }

    #[test]
    fn phase_space_effects_are_covariant(k in 0usize..4, lo in 0.0..3.0f64, iv in interval(), th in 0.0..TAU) {
        let d = 8;
        let g = QuadratureGrid::radial(32).unwrap();
        let pr = profile_g(k, d, &g).unwrap();
        let set = g.nodes_in(lo, lo + 2.0);
        let u = phase_shift_unitary(th, d);
        let lhs = &u * psc_effect(&pr, &set, &iv).unwrap() * u.adjoint();
        let rhs = psc_effect_set(&pr, &set, &iv.shifted(th)).unwrap();
        prop_assert!(linalg::max_abs(&(lhs - rhs)) < 1e-10);
        prop_assert!(linalg::min_eigenvalue(&psc_effect(&pr, &set, &iv).unwrap()) > -1e-10);
    }

    #[test]
    fn covariantized_tables_are_covariant(seed in any::<u64>(), k in 2usize..7) {
        let d = 4;
        let p = AnglePartition::uniform(k).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let effs: Vec<CMatrix> = (0..k).map(|_| {
            let g = linalg::ginibre(d, 2, &mut rng);
            &g * g.adjoint()
        }).collect();
        let cov = covariantize(&effs, &p).unwrap();
        prop_assert!(partition_covariance_defect(&cov, &p) < 1e-10);
        let again = covariantize(&cov, &p).unwrap();
        for (a, b) in cov.iter().zip(&again) {
            prop_assert!(linalg::max_abs(&(a - b)) < 1e-10);
        }
    }

    #[test]
    fn box_kernels_are_markov(k in 4usize..20, w in 1usize..4, theta in 0.0..TAU) {
        let ker = MarkovKernel::box_smoothing(k, w.min(k - 1)).unwrap();
        let vals: Vec<f64> = (0..ker.outcomes()).map(|j| ker.eval(j, theta)).collect();
        prop_assert!(vals.iter().all(|&v| (0.0..=1.0).contains(&v)));
        prop_assert!((vals.iter().sum::<f64>() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn relative_number_states_biject(p in 0usize..500, q in 0usize..500) {
        let r = rns_pack(p, q);
        prop_assert_eq!(r.m, p as i64 - q as i64);
        prop_assert_eq!(r.k, p.min(q) as i64);
        prop_assert_eq!(rns_unpack(r).unwrap(), (p, q));
    }

    #[test]
    fn rank1_instruments_are_positive_and_weighted(seed in any::<u64>(), d in 2usize..8, iv in interval()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = PhaseMatrix::random(d, 2.min(d), &mut rng);
        let rho = DensityMatrix::random(d, 2, &mut rng);
        let out = rank1_map(&rho.mat, &structure_vectors(&c), &[iv]).unwrap();
        prop_assert!(linalg::min_eigenvalue(&linalg::hermitian_part(&out)) > -1e-10);
        let want = linalg::trace_product(&rho.mat, &phase_effect(&c, &iv)).re;
        prop_assert!((linalg::trace(&out).re - want).abs() < 1e-9);
    }
}

#[test]
fn w_preserves_number_difference() {
    let g = QuadratureGrid::radial(48).unwrap();
    for d in [4, 8, 12] {
        assert_eq!(w_matrix(d, &g).unwrap().selection_rule_defect(), 0.0);
    }
}
