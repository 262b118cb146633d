use std::f64::consts::{PI, TAU};

use phasekit::angle::{AnglePartition, Interval};
use phasekit::fock::{DensityMatrix, FockVector};
use phasekit::linalg::{self, CMatrix};
use phasekit::phase::{
    canonical_effect, circular_variance, commutator_defect, joint_observable, phase_distribution, phase_effects,
    post_process, structure_vectors, MarkovKernel, PhaseMatrix,
};
use phasekit::C64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

// London density e^{-|a|^2} |sum a^m e^{-im theta} / sqrt(m!)|^2 / 2pi,
// series summed far past the truncation.
fn london_density(a: C64, theta: f64) -> f64 {
    let z = a * C64::from_polar(1.0, -theta);
    let mut term = C64::new(1.0, 0.0);
    let mut acc = term;
    for m in 1..120 {
        term = term * z / (m as f64).sqrt();
        acc += term;
    }
    (-a.norm_sqr()).exp() * acc.norm_sqr() / TAU
}

fn london_bin(a: C64, lo: f64, hi: f64) -> f64 {
    // composite Simpson on a smooth periodic integrand
    let n = 64;
    let h = (hi - lo) / n as f64;
    let mut s = london_density(a, lo) + london_density(a, hi);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * london_density(a, lo + i as f64 * h);
    }
    s * h / 3.0
}

#[test]
fn canonical_coherent_matches_london_histogram() {
    let d = 32;
    let a = C64::new(1.0, 0.0);
    let rho = DensityMatrix::from_pure(&FockVector::coherent(a, d)).unwrap();
    let p = AnglePartition::uniform(360).unwrap();
    let probs = phase_distribution(&rho, &PhaseMatrix::canonical(d), &p).unwrap();
    for (j, iv) in p.bins().iter().enumerate() {
        assert!((probs[j] - london_bin(a, iv.lo, iv.hi)).abs() < 1e-8, "bin {j}");
    }
}

#[test]
fn number_state_is_uniform_for_every_phase_matrix() {
    let d = 10;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let c = PhaseMatrix::random(d, 4, &mut rng);
    let rho = DensityMatrix::from_pure(&FockVector::number(3, d).unwrap()).unwrap();
    let p = AnglePartition::uniform(12).unwrap();
    for v in phase_distribution(&rho, &c, &p).unwrap() {
        assert!((v - 1.0 / 12.0).abs() < 1e-15);
    }
}

#[test]
fn trivial_phase_matrix_gives_uniform_distribution() {
    let d = 8;
    let rho = DensityMatrix::from_pure(&FockVector::coherent(C64::new(1.5, 0.5), d).normalized().unwrap()).unwrap();
    let p = AnglePartition::uniform(16).unwrap();
    for v in phase_distribution(&rho, &PhaseMatrix::trivial(d), &p).unwrap() {
        assert!((v - 1.0 / 16.0).abs() < 1e-15);
    }
}

#[test]
fn canonical_structure_vectors_rank_one() {
    let sv = structure_vectors(&PhaseMatrix::canonical(9));
    assert_eq!(sv.rank, 1);
    assert!(linalg::max_abs(&(sv.gram_matrix() - PhaseMatrix::canonical(9).matrix())) < 1e-12);
    let triv = structure_vectors(&PhaseMatrix::trivial(9));
    assert_eq!(triv.rank, 9);
}

#[test]
fn phase_matrix_rejects_bad_input() {
    let mut c = CMatrix::identity(3, 3);
    c[(0, 1)] = C64::new(2.0, 0.0);
    c[(1, 0)] = C64::new(2.0, 0.0);
    assert!(PhaseMatrix::new(c).is_err());
    let mut c = CMatrix::identity(3, 3);
    c[(2, 2)] = C64::new(0.5, 0.0);
    assert!(PhaseMatrix::new(c).is_err());
}

#[test]
fn canonical_effect_half_circle_closed_form() {
    // entries (1/2pi) int_0^pi e^{i theta (m-n)}: 1/2 on the diagonal,
    // i/(pi k) for odd k = m - n, zero for even k
    let e = canonical_effect(6, &Interval::new(0.0, PI).unwrap());
    for m in 0..6 {
        for n in 0..6 {
            let k = m as i64 - n as i64;
            let want = if k == 0 {
                C64::new(0.5, 0.0)
            } else if k % 2 != 0 {
                C64::new(0.0, 1.0 / (PI * k as f64))
            } else {
                C64::new(0.0, 0.0)
            };
            assert!((e[(m, n)] - want).norm() < 1e-15);
        }
    }
}

#[test]
fn projector_on_vacuum_does_not_commute() {
    let mut a = CMatrix::zeros(16, 16);
    a[(0, 0)] = C64::new(1.0, 0.0);
    let p = AnglePartition::uniform(8).unwrap();
    assert!(commutator_defect(&a, &p).unwrap() > 0.01);
    let s = CMatrix::identity(16, 16) * C64::new(-0.3, 0.0);
    assert!(commutator_defect(&s, &p).unwrap() < 1e-13);
}

#[test]
fn circular_variance_limits() {
    let p = AnglePartition::uniform(64).unwrap();
    let uniform = vec![1.0 / 64.0; 64];
    assert!((circular_variance(&uniform, &p) - 1.0).abs() < 1e-12);
    let mut spike = vec![0.0; 64];
    spike[0] = 1.0;
    // a single bin of width w has mean resultant sin(w/2)/(w/2)
    let w = TAU / 64.0;
    assert!((circular_variance(&spike, &p) - (1.0 - (w / 2.0).sin() / (w / 2.0))).abs() < 1e-12);
}

#[test]
fn coherent_states_sharpen_with_amplitude() {
    let d = 40;
    let p = AnglePartition::uniform(128).unwrap();
    let mut last = f64::INFINITY;
    for a in [0.5, 1.0, 2.0, 3.0] {
        let rho = DensityMatrix::from_pure(&FockVector::coherent(C64::new(a, 0.0), d)).unwrap();
        let v = circular_variance(&phase_distribution(&rho, &PhaseMatrix::canonical(d), &p).unwrap(), &p);
        assert!(v < last);
        last = v;
    }
}

#[test]
fn smoothing_kernel_post_processes_canonical() {
    let d = 10;
    let k = MarkovKernel::box_smoothing(6, 2).unwrap();
    let f = post_process(&k, d).unwrap();
    let total = f.iter().fold(CMatrix::zeros(d, d), |a, b| a + b);
    assert!(linalg::max_abs(&(total - CMatrix::identity(d, d))) < 1e-12);
    for e in &f {
        assert!(linalg::min_eigenvalue(e) > -1e-12);
    }
    // joint observable over the full circle recovers the post-processed effect
    for (j, fj) in f.iter().enumerate() {
        let m = joint_observable(&k, j, &Interval::full(), d).unwrap();
        assert!(linalg::max_abs(&(m - fj)) < 1e-13);
    }
}

#[test]
fn non_normalized_kernel_rejected() {
    let k = MarkovKernel::constant(&[0.3, 0.3]);
    assert!(post_process(&k, 4).is_err());
}

#[test]
fn random_phase_effects_are_positive() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let p = AnglePartition::from_edges(vec![0.0, 0.1, 1.0, 3.3, 5.0, TAU]).unwrap();
    for rank in [1, 2, 7] {
        let c = PhaseMatrix::random(7, rank, &mut rng);
        for e in phase_effects(&c, &p) {
            assert!(linalg::min_eigenvalue(&e) > -1e-12);
        }
    }
}
