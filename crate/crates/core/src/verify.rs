//! Invariant suites run by `phasekit verify`. Each suite returns a list of
//! named checks with the measured value and the bound it was held to.

use std::f64::consts::{PI, TAU};
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::angle::{AnglePartition, Interval};
use crate::config::RunConfig;
use crate::couplings::{
    o_angle_effect, o_angle_effect_set, w_alpha, w_column_vacuum, w_matrix, CouplingKernel, KernelLabel,
};
use crate::error::{Error, Result};
use crate::fock::{make_state, phase_shift_unitary, safe_limit, DensityMatrix, FockVector, StateSpec, TwoModeVector};
use crate::homodyne::{gsigma_table, double_homodyne_dist, modified_scheme_phase_dist};
use crate::instruments::{
    canonical_nuclear_instrument, dilation_check, instrument_covariance_defect, rank1_choi_min_eigenvalue, rank1_map,
    swap_hamiltonian_check, uniform_structure,
};
use crate::linalg::{self, CMatrix};
use crate::phase::{
    circular_variance, commutator_defect, joint_observable, phase_distribution, phase_effect, phase_effects,
    post_process, structure_vectors, MarkovKernel, PhaseMatrix,
};
use crate::phase_space::{apply_angle, margins, profile_dirac, profile_f, profile_g, radial_bins, RadialProfile, RadialSupport};
use crate::quadrature::QuadratureGrid;
use crate::special::{bessel_j0, J0_SERIES_RADIUS};
use crate::C64;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    Povm,
    Covariance,
    Coupling,
    Identity,
    Instruments,
}

impl Suite {
    pub const ALL: [Suite; 5] = [Suite::Povm, Suite::Covariance, Suite::Coupling, Suite::Identity, Suite::Instruments];

    pub fn as_str(self) -> &'static str {
        match self {
            Suite::Povm => "povm",
            Suite::Covariance => "covariance",
            Suite::Coupling => "coupling",
            Suite::Identity => "identity",
            Suite::Instruments => "instruments",
        }
    }

    /// Parse a suite name; `all` expands to every suite.
    pub fn parse_list(name: &str) -> Result<Vec<Suite>> {
        if name == "all" {
            return Ok(Suite::ALL.to_vec());
        }
        Ok(vec![name.parse()?])
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL
            .into_iter()
            .find(|x| x.as_str() == s)
            .ok_or_else(|| Error::OutOfRange(format!("unknown suite `{s}`")))
    }
}

/// One measured quantity and its verdict.
#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    /// `max` (value at most bound), `min` (value at least bound; strictly
    /// above for `above`) or `flag`.
    pub kind: &'static str,
    pub value: Option<f64>,
    pub bound: Option<f64>,
    pub passed: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteReport {
    pub suite: Suite,
    pub passed: bool,
    pub checks: Vec<Check>,
    /// Wall time; left out of the JSON so reports stay reproducible.
    #[serde(skip)]
    pub seconds: f64,
}

impl SuiteReport {
    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub schema_version: u32,
    pub config: RunConfig,
    pub passed: bool,
    pub suites: Vec<SuiteReport>,
}

#[derive(Default)]
struct Checks(Vec<Check>);

impl Checks {
    fn push(&mut self, name: &str, kind: &'static str, value: Option<f64>, bound: Option<f64>, passed: bool, note: Option<String>) {
        self.0.push(Check { name: name.to_string(), kind, value, bound, passed, note });
    }

    fn at_most(&mut self, name: &str, r: Result<f64>, bound: f64) {
        match r {
            Ok(v) => self.push(name, "max", Some(v), Some(bound), v <= bound, None),
            Err(e) => self.push(name, "max", None, Some(bound), false, Some(e.to_string())),
        }
    }

    fn at_most_noted(&mut self, name: &str, r: Result<(f64, String)>, bound: f64) {
        match r {
            Ok((v, note)) => self.push(name, "max", Some(v), Some(bound), v <= bound, Some(note)),
            Err(e) => self.push(name, "max", None, Some(bound), false, Some(e.to_string())),
        }
    }

    fn at_least(&mut self, name: &str, r: Result<f64>, bound: f64) {
        match r {
            Ok(v) => self.push(name, "min", Some(v), Some(bound), v >= bound, None),
            Err(e) => self.push(name, "min", None, Some(bound), false, Some(e.to_string())),
        }
    }

    /// Strict lower bound.
    fn above(&mut self, name: &str, r: Result<f64>, bound: f64) {
        match r {
            Ok(v) => self.push(name, "min", Some(v), Some(bound), v > bound, None),
            Err(e) => self.push(name, "min", None, Some(bound), false, Some(e.to_string())),
        }
    }

    fn holds(&mut self, name: &str, r: Result<(bool, String)>) {
        match r {
            Ok((ok, note)) => self.push(name, "flag", None, None, ok, Some(note)),
            Err(e) => self.push(name, "flag", None, None, false, Some(e.to_string())),
        }
    }
}

/// Run the named suite (or `all`).
pub fn verify(name: &str, cfg: &RunConfig) -> Result<VerifyReport> {
    let suites = Suite::parse_list(name)?;
    cfg.validate()?;
    if suites.contains(&Suite::Coupling) {
        cfg.validate_coupling()?;
    }
    let reports = suites
        .into_iter()
        .map(|s| run_suite(s, cfg))
        .collect::<Result<Vec<_>>>()?;
    Ok(VerifyReport {
        schema_version: REPORT_SCHEMA_VERSION,
        config: cfg.clone(),
        passed: reports.iter().all(|r| r.passed),
        suites: reports,
    })
}

pub fn run_suite(suite: Suite, cfg: &RunConfig) -> Result<SuiteReport> {
    cfg.validate()?;
    let start = Instant::now();
    let checks = match suite {
        Suite::Povm => povm_suite(cfg)?,
        Suite::Covariance => covariance_suite(cfg)?,
        Suite::Coupling => {
            cfg.validate_coupling()?;
            coupling_suite(cfg)?
        }
        Suite::Identity => identity_suite(cfg)?,
        Suite::Instruments => instruments_suite(cfg)?,
    };
    Ok(SuiteReport {
        suite,
        passed: checks.0.iter().all(|c| c.passed),
        checks: checks.0,
        seconds: start.elapsed().as_secs_f64(),
    })
}

fn rng_for(cfg: &RunConfig, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(cfg.seed);
    r.set_stream(stream);
    r
}

/// Shift grid used by all covariance checks: 16 angles off the bin lattice.
pub fn shift_grid() -> Vec<f64> {
    (0..16).map(|t| (t as f64 + 0.37) * TAU / 16.0).collect()
}

/// Radial cell edges for binned phase-space effects.
pub const RADIAL_EDGES: [f64; 5] = [0.0, 0.5, 1.5, 4.0, f64::INFINITY];

// ---------------------------------------------------------------- povm

struct BinStats {
    min_eig: f64,
    sum_dev: f64,
    cov: f64,
}

fn phase_stats(c: &PhaseMatrix, p: &AnglePartition) -> BinStats {
    let d = c.dim();
    let effects = phase_effects(c, p);
    let min_eig = effects.iter().map(linalg::min_eigenvalue).fold(f64::INFINITY, f64::min);
    let total = effects.iter().fold(CMatrix::zeros(d, d), |a, e| a + e);
    let sum_dev = linalg::max_abs(&(total - CMatrix::identity(d, d)));
    let bins = p.bins();
    let cov = crate::par::map_slice(&shift_grid(), |&t| {
        let u = phase_shift_unitary(t, d);
        bins.iter()
            .zip(&effects)
            .map(|(iv, e)| {
                let rotated = &u * e * u.adjoint();
                let shifted = crate::phase::phase_effect_set(c, &iv.shifted(t));
                linalg::frobenius(&(rotated - shifted))
            })
            .fold(0.0, f64::max)
    })
    .into_iter()
    .fold(0.0, f64::max);
    BinStats { min_eig, sum_dev, cov }
}

fn radial_cells(profile: &RadialProfile, grid: &QuadratureGrid) -> Result<Vec<Vec<usize>>> {
    match profile.support {
        RadialSupport::Atom { .. } => Ok(vec![profile.all_nodes()]),
        RadialSupport::Grid(_) => radial_bins(grid, &RADIAL_EDGES),
    }
}

fn phase_space_stats(profile: &RadialProfile, grid: &QuadratureGrid, p: &AnglePartition) -> Result<BinStats> {
    let d = profile.dim;
    let cells = radial_cells(profile, grid)?;
    let coeffs = cells
        .iter()
        .map(|set| profile.radial_coefficients(set))
        .collect::<Result<Vec<_>>>()?;
    let bins = p.bins();
    let mut min_eig = f64::INFINITY;
    let mut total = CMatrix::zeros(d, d);
    for c in &coeffs {
        let effects: Vec<CMatrix> = bins.iter().map(|iv| apply_angle(c, std::slice::from_ref(iv))).collect();
        for e in &effects {
            min_eig = min_eig.min(linalg::min_eigenvalue(e));
            total += e;
        }
    }
    let sum_dev = linalg::max_abs(&(total - CMatrix::identity(d, d)));
    let cov = crate::par::map_slice(&shift_grid(), |&t| {
        let u = phase_shift_unitary(t, d);
        let mut worst: f64 = 0.0;
        for c in &coeffs {
            for iv in &bins {
                let rotated = &u * apply_angle(c, std::slice::from_ref(iv)) * u.adjoint();
                let shifted = apply_angle(c, &iv.shifted(t));
                worst = worst.max(linalg::frobenius(&(rotated - shifted)));
            }
        }
        worst
    })
    .into_iter()
    .fold(0.0, f64::max);
    Ok(BinStats { min_eig, sum_dev, cov })
}

fn push_stats(ch: &mut Checks, label: &str, r: Result<BinStats>, cfg: &RunConfig) {
    let t = &cfg.tolerances;
    match r {
        Ok(s) => {
            ch.at_least(&format!("{label}: min effect eigenvalue"), Ok(s.min_eig), -t.psd_floor);
            ch.at_most(&format!("{label}: bins sum to identity"), Ok(s.sum_dev), t.sum_to_identity);
            ch.at_most(&format!("{label}: covariance defect"), Ok(s.cov), t.covariance);
        }
        Err(e) => ch.holds(label, Err(e)),
    }
}

fn povm_suite(cfg: &RunConfig) -> Result<Checks> {
    let d = cfg.dim;
    let t = &cfg.tolerances;
    let p = AnglePartition::uniform(cfg.bins)?;
    let grid = QuadratureGrid::new(cfg.quad_family, cfg.quad_order)?;
    let mut ch = Checks::default();

    push_stats(&mut ch, "canonical", Ok(phase_stats(&PhaseMatrix::canonical(d), &p)), cfg);

    let mut rng = rng_for(cfg, 1);
    let randoms: Vec<PhaseMatrix> = (0..20)
        .map(|_| {
            let rank = rng.random_range(1..=d);
            PhaseMatrix::random(d, rank, &mut rng)
        })
        .collect();
    let stats = crate::par::map_slice(&randoms, |c| phase_stats(c, &p));
    let worst = BinStats {
        min_eig: stats.iter().map(|s| s.min_eig).fold(f64::INFINITY, f64::min),
        sum_dev: stats.iter().map(|s| s.sum_dev).fold(0.0, f64::max),
        cov: stats.iter().map(|s| s.cov).fold(0.0, f64::max),
    };
    push_stats(&mut ch, "20 random phase matrices", Ok(worst), cfg);

    for k in 0..=4.min(d - 1) {
        let f = profile_f(k, d, &grid).and_then(|pr| phase_space_stats(&pr, &grid, &p));
        push_stats(&mut ch, &format!("F^{k}"), f, cfg);
        let g = profile_g(k, d, &grid).and_then(|pr| phase_space_stats(&pr, &grid, &p));
        push_stats(&mut ch, &format!("G^{k}"), g, cfg);
    }
    let dirac = profile_dirac(1.0, &randoms[0]).and_then(|pr| phase_space_stats(&pr, &grid, &p));
    push_stats(&mut ch, "dirac radial at x0=1", dirac, cfg);

    // angle margins
    for k in 0..=4.min(d - 1) {
        let r = profile_f(k, d, &grid).and_then(|pr| {
            let m = margins(&pr, &[])?;
            let want = CMatrix::from_fn(d, d, |a, b| {
                C64::new(if a.min(k) == b.min(k) { 1.0 } else { 0.0 }, 0.0)
            });
            Ok(linalg::max_abs(&(m.phase.matrix() - want)))
        });
        ch.at_most(&format!("F^{k} angle margin equals delta(min(m,k), min(n,k))"), r, t.margin);
    }
    let g0 = profile_g(0, d, &grid).and_then(|pr| margins(&pr, &[]));
    ch.at_most(
        "G^0 angle margin c_01 = Gamma(3/2)",
        g0.map(|m| (m.phase.get(0, 1) - C64::new(PI.sqrt() / 2.0, 0.0)).norm()),
        t.g_margin,
    );
    let c01 = (0..=8.min(d - 1))
        .map(|k| profile_g(k, d, &grid).and_then(|pr| margins(&pr, &[])).map(|m| m.phase.get(0, 1).norm()))
        .collect::<Result<Vec<f64>>>();
    ch.holds(
        "G^k angle margin |c_01| < 1 for k <= 8",
        c01.map(|v| (v.iter().all(|&x| x < 1.0), format!("{v:.6?}"))),
    );

    // classical limit
    let cv = [0.5, 1.0, 2.0, 3.0]
        .iter()
        .map(|&a| {
            let psi = FockVector::coherent(C64::new(a, 0.0), d).normalized()?;
            let rho = DensityMatrix::from_pure(&psi)?;
            Ok(circular_variance(&phase_distribution(&rho, &PhaseMatrix::canonical(d), &p)?, &p))
        })
        .collect::<Result<Vec<f64>>>();
    ch.holds(
        "canonical circular variance decreases along alpha = 0.5, 1, 2, 3",
        cv.map(|v| (v.windows(2).all(|w| w[1] < w[0]), format!("{v:.6?}"))),
    );
    Ok(ch)
}

// ---------------------------------------------------------------- covariance

fn tent_kernel() -> MarkovKernel {
    // two continuous outcomes: a tent peaked at pi and its complement
    let knots = vec![0.0, PI, TAU];
    MarkovKernel::PiecewiseLinear { knots, values: vec![vec![0.0, 1.0, 0.0], vec![1.0, 0.0, 1.0]] }
}

fn covariance_suite(cfg: &RunConfig) -> Result<Checks> {
    let d = cfg.dim;
    let t = &cfg.tolerances;
    let p = AnglePartition::uniform(cfg.bins)?;
    let mut ch = Checks::default();

    let kernels: Vec<(&str, Result<MarkovKernel>)> = vec![
        ("indicator kernel on 8 bins", AnglePartition::uniform(8).map(|q| MarkovKernel::indicator(&q))),
        ("box smoothing over 3 of 8 bins", MarkovKernel::box_smoothing(8, 3)),
        ("constant kernel", Ok(MarkovKernel::constant(&[0.1, 0.2, 0.3, 0.4]))),
        ("piecewise linear tent", Ok(tent_kernel())),
    ];
    for (label, kernel) in kernels {
        let r = kernel.and_then(|kernel| {
            let post = post_process(&kernel, d)?;
            let bins = p.bins();
            let can = phase_effects(&PhaseMatrix::canonical(d), &p);
            let mut angle_sum = vec![CMatrix::zeros(d, d); bins.len()];
            let mut worst: f64 = 0.0;
            for (j, fj) in post.iter().enumerate() {
                let mut bin_sum = CMatrix::zeros(d, d);
                for (b, iv) in bins.iter().enumerate() {
                    let m = joint_observable(&kernel, j, iv, d)?;
                    bin_sum += &m;
                    angle_sum[b] += &m;
                }
                worst = worst.max(linalg::max_abs(&(bin_sum - fj)));
            }
            for (s, e) in angle_sum.iter().zip(&can) {
                worst = worst.max(linalg::max_abs(&(s - e)));
            }
            Ok(worst)
        });
        ch.at_most(&format!("joint observable margins: {label}"), r, t.joint_margin);
    }

    // commutant of the canonical phase
    let lemma_dim = 12;
    let defects: Vec<f64> = (0..50)
        .map(|s| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(s));
            let a = linalg::random_hermitian(lemma_dim, &mut rng);
            commutator_defect(&a, &p)
        })
        .collect::<Result<_>>()?;
    ch.above(
        "non-scalar A fails to commute with E_can (min over 50 seeds, d=12)",
        Ok(defects.iter().copied().fold(f64::INFINITY, f64::min)),
        t.lemma_nonscalar,
    );
    let scalar = CMatrix::identity(lemma_dim, lemma_dim) * C64::new(2.5, 0.0);
    ch.at_most("scalar A commutes with E_can (d=12)", commutator_defect(&scalar, &p), t.lemma_scalar);
    let diag = CMatrix::from_fn(lemma_dim, lemma_dim, |i, j| {
        C64::new(if i == j && i == 0 { 1.0 } else { 0.0 }, 0.0)
    });
    ch.above("A = |0><0| fails to commute with E_can (d=12)", commutator_defect(&diag, &p), t.lemma_nonscalar);

    // relative-phase covariance of O_angle
    let od = d.min(16);
    let obins: Vec<Interval> = p.bins().into_iter().step_by((cfg.bins / 8).max(1)).collect();
    let delta: Vec<f64> = (0..od * od).map(|i| (i / od) as f64 - (i % od) as f64).collect();
    let cov = crate::par::map_slice(&shift_grid(), |&th| {
        obins
            .iter()
            .map(|iv| {
                let o = o_angle_effect(iv, od);
                let rotated = CMatrix::from_fn(od * od, od * od, |a, b| {
                    o[(a, b)] * C64::from_polar(1.0, th * (delta[a] - delta[b]))
                });
                linalg::max_abs(&(rotated - o_angle_effect_set(&iv.shifted(th), od)))
            })
            .fold(0.0, f64::max)
    })
    .into_iter()
    .fold(0.0, f64::max);
    ch.at_most(
        &format!("O_angle covariance under the number-difference phase (d={od})"),
        Ok(cov),
        t.covariance,
    );
    let osum = p
        .bins()
        .iter()
        .fold(CMatrix::zeros(od * od, od * od), |acc, iv| acc + o_angle_effect(iv, od));
    ch.at_most(
        &format!("O_angle bins sum to identity (d={od})"),
        Ok(linalg::max_abs(&(osum - CMatrix::identity(od * od, od * od)))),
        t.sum_to_identity,
    );
    Ok(ch)
}

// ---------------------------------------------------------------- coupling

fn closed_form_defect(
    spec: StateSpec,
    d: usize,
    grid: &QuadratureGrid,
    thetas: &[f64],
    oracle: &dyn Fn(f64, f64) -> Result<Option<C64>>,
) -> Result<(f64, String)> {
    let prep = make_state(spec, d, 1e-6)?;
    let two = match prep.two_mode() {
        Some(v) => v.clone(),
        None => TwoModeVector::product(prep.single().expect("single-mode state"), &FockVector::vacuum(d))?,
    };
    let scale = prep.original_norm.unwrap_or(1.0);
    let psi = CouplingKernel::new(KernelLabel::V, d, grid).apply(&two)?;
    let mut worst: f64 = 0.0;
    let mut skipped = 0;
    for q in 0..grid.len() {
        for &th in thetas {
            match oracle(grid.nodes[q], th)? {
                Some(want) => worst = worst.max((psi.value(q, th) * scale - want).norm()),
                None => skipped += 1,
            }
        }
    }
    Ok((worst, format!("leakage {:.1e}, {skipped} points beyond the oracle's range", prep.leakage)))
}

fn coupling_suite(cfg: &RunConfig) -> Result<Checks> {
    let d = cfg.dim;
    let t = &cfg.tolerances;
    let grid = QuadratureGrid::new(cfg.quad_family, cfg.quad_order)?;
    let p = AnglePartition::uniform(cfg.bins)?;
    let mut ch = Checks::default();
    let safe = safe_limit(d);

    let uk = CouplingKernel::new(KernelLabel::U, d, &grid);
    let vk = CouplingKernel::new(KernelLabel::V, d, &grid);
    for (label, k) in [("U", &uk), ("V", &vk)] {
        let mut worst: f64 = 0.0;
        for m in 0..=safe {
            for n in 0..=safe {
                worst = worst.max((k.column_inner((m, n), (m, n)) - 1.0).abs());
                if m + 1 <= safe && n + 1 <= safe {
                    worst = worst.max(k.column_inner((m, n), (m + 1, n + 1)).abs());
                }
            }
        }
        ch.at_most(&format!("{label} columns orthonormal on safe indices"), Ok(worst), t.normalization);
    }

    let w = w_matrix(d, &grid);
    match &w {
        Ok(w) => {
            let mut e00 = TwoModeVector::zeros(d);
            e00.set(0, 0, C64::new(1.0, 0.0));
            let col = w.column(0, 0);
            let dev = col.amp.iter().zip(&e00.amp).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
            ch.at_most("W|0,0> = |0,0>", Ok(dev), t.w_vacuum);
            ch.at_most("W supported on fixed number difference", Ok(w.selection_rule_defect()), 0.0);
        }
        Err(e) => ch.holds("W assembly", Err(Error::Cache(e.to_string()))),
    }

    // vacuum column by quadrature against the closed form
    let kmax = 40;
    let mut worst: f64 = 0.0;
    for m in 0..=6 {
        let (coeffs, _) = w_column_vacuum(m, kmax);
        for (k, c) in coeffs.iter().enumerate() {
            worst = worst.max((w_alpha(k + m, k, m, 0, &grid) - c).abs());
        }
    }
    ch.at_most("W vacuum column: quadrature vs closed form (m <= 6, k <= 40)", Ok(worst), t.w_column);

    if let Ok(w) = &w {
        let lim = d / 4;
        let cols: Vec<(usize, usize)> = (0..=lim).flat_map(|m| (0..=lim).map(move |n| (m, n))).collect();
        let dists = crate::par::map_slice(&cols, |&(m, n)| -> Result<(f64, f64)> {
            let mut e = TwoModeVector::zeros(d);
            e.set(m, n, C64::new(1.0, 0.0));
            let v = vk.apply(&e)?;
            let uw = uk.apply(&w.column(m, n))?;
            Ok((v.distance(&uw), w.dropped[m * d + n]))
        });
        let r = dists.into_iter().collect::<Result<Vec<_>>>().map(|v| {
            let (dist, drop) = v.iter().fold((0.0f64, 0.0f64), |a, b| (a.0.max(b.0), a.1.max(b.1)));
            (dist, format!("largest weight dropped from a W column by truncation: {drop:.3e}"))
        });
        ch.at_most_noted(&format!("V = UW on columns m, n <= {lim}"), r, t.v_equals_uw);
    }

    ch.at_most("exp(iH) = SWAP (d=8)", swap_hamiltonian_check(8), t.swap);

    // closed-form outputs of V
    let thetas: Vec<f64> = p.bins().iter().map(|iv| iv.midpoint()).collect();
    let sp = PI.sqrt();
    let a = C64::new(1.0, 0.0);
    let ca = crate::fock::pair_coherent_normalizer(a)?;
    ch.at_most_noted(
        "V pair-coherent output is C J0(2 r sqrt(alpha)) e^alpha e^{-x/2} / sqrt(pi)",
        closed_form_defect(StateSpec::PairCoherent { re: a.re, im: a.im }, d, &grid, &thetas, &|x, _| {
            let z = (a * x).sqrt() * 2.0;
            if z.norm() > J0_SERIES_RADIUS {
                return Ok(None);
            }
            Ok(Some(bessel_j0(z)? * a.exp() * ca * (-x / 2.0).exp() / sp))
        }),
        t.closed_form,
    );
    // |b|^(d-q) must stay below the tolerance for the truncated series
    let (q, b) = (2usize, C64::new(0.3, 0.25));
    ch.at_most_noted(
        "V two-mode phase coherent output is Gaussian",
        closed_form_defect(StateSpec::TwoModePhaseCoherent { q, re: b.re, im: b.im }, d, &grid, &thetas, &|x, th| {
            let pref = (1.0 - b.norm_sqr()).sqrt() / (sp * (C64::new(1.0, 0.0) - b));
            let expo = C64::new(0.0, q as f64 * th) - (b / (C64::new(1.0, 0.0) - b) + 0.5) * x;
            Ok(Some(pref * expo.exp()))
        }),
        t.closed_form,
    );
    let n = 3usize.min(d - 1);
    let nf: f64 = (1..=n).map(|i| i as f64).product();
    ch.at_most_noted(
        "V monomial output is x^n e^{-x/2} / (sqrt(pi) n!)",
        closed_form_defect(StateSpec::Monomial { n }, d, &grid, &thetas, &|x, _| {
            Ok(Some(C64::new(x.powi(n as i32) * (-x / 2.0).exp() / (sp * nf), 0.0)))
        }),
        t.closed_form,
    );
    let al = C64::new(0.8, -0.6);
    ch.at_most_noted(
        "V coherent (x) vacuum output is e^{-x/2} <theta|alpha> / sqrt(pi)",
        closed_form_defect(StateSpec::Coherent { re: al.re, im: al.im }, d, &grid, &thetas, &|x, th| {
            Ok(Some(london_amplitude(al, th, 120) * (-x / 2.0).exp() / sp))
        }),
        t.closed_form,
    );
    Ok(ch)
}

/// `<theta|alpha> = e^{-|alpha|^2/2} sum_m alpha^m e^{-i m theta} / sqrt(m!)`,
/// summed to `terms`.
pub fn london_amplitude(alpha: C64, theta: f64, terms: usize) -> C64 {
    let z = alpha * C64::from_polar(1.0, -theta);
    let mut term = C64::new((-alpha.norm_sqr() / 2.0).exp(), 0.0);
    let mut acc = term;
    for m in 1..terms {
        term = term * z / (m as f64).sqrt();
        acc += term;
    }
    acc
}

// ---------------------------------------------------------------- identity

fn random_diagonal(d: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let raw: Vec<f64> = (0..d).map(|_| -rng.random::<f64>().max(1e-300).ln()).collect();
    let s: f64 = raw.iter().sum();
    raw.iter().map(|v| v / s).collect()
}

fn identity_suite(cfg: &RunConfig) -> Result<Checks> {
    let d = cfg.dim;
    let t = &cfg.tolerances;
    let grid = QuadratureGrid::new(cfg.quad_family, cfg.quad_order)?;
    let p = AnglePartition::uniform(cfg.bins)?;
    let mut ch = Checks::default();

    let mut rng = rng_for(cfg, 5);
    let pairs: Vec<(DensityMatrix, Vec<f64>)> = (0..20)
        .map(|_| {
            let rank = rng.random_range(1..=3);
            let rho = DensityMatrix::random(d, rank, &mut rng);
            (rho, random_diagonal(d, &mut rng))
        })
        .collect();
    let mut worst: f64 = 0.0;
    let mut mass: f64 = 0.0;
    for (rho, lambda) in &pairs {
        let r = DensityMatrix::diagonal(lambda).and_then(|sigma| {
            let a = double_homodyne_dist(rho, &sigma, &grid, &p)?;
            let b = gsigma_table(rho, lambda, &grid, &p)?;
            Ok((
                a.probs.iter().zip(&b.probs).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max),
                (1.0 - a.mass).abs(),
            ))
        });
        match r {
            Ok((w, m)) => {
                worst = worst.max(w);
                mass = mass.max(m);
            }
            Err(e) => {
                ch.at_most("homodyne identity", Err(e), t.homodyne_identity);
                return Ok(ch);
            }
        }
    }
    ch.at_most("U-propagated table equals tr[rho G^sigma'] (20 random pairs)", Ok(worst), t.homodyne_identity);
    ch.at_most("homodyne table mass defect", Ok(mass), t.normalization);

    let w = w_matrix(d, &grid)?;
    for a in [C64::new(0.5, 0.0), C64::new(1.0, 0.0), C64::new(1.0, 1.0), C64::new(2.0, 0.0)] {
        let r = FockVector::coherent(a, d)
            .normalized()
            .and_then(|psi| DensityMatrix::from_pure(&psi))
            .and_then(|rho| modified_scheme_phase_dist(&rho, &w, &grid, &p));
        let label = format!("alpha = {}{:+}i", a.re, a.im);
        match r {
            Ok(s) => {
                let v_gap = s.via_v.iter().zip(&s.canonical).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
                ch.at_most_noted(
                    &format!("modified scheme (W then U) equals canonical, {label}"),
                    Ok((s.max_residual(), format!("mass after truncated W: {:.6}", s.mass_uw))),
                    t.modified_scheme,
                );
                ch.at_most(&format!("via V equals via UW, {label}"), Ok(s.max_path_gap()), t.path_gap);
                ch.at_most(&format!("via V equals canonical, {label}"), Ok(v_gap), t.homodyne_identity);
            }
            Err(e) => ch.at_most(&format!("modified scheme, {label}"), Err(e), t.modified_scheme),
        }
    }
    Ok(ch)
}

// ---------------------------------------------------------------- instruments

fn random_interval(rng: &mut ChaCha8Rng) -> Interval {
    let a = rng.random_range(0.0..TAU);
    let w = rng.random_range(0.05..TAU - 0.05);
    let b = a + w;
    if b <= TAU {
        Interval::new(a, b).expect("ordered")
    } else {
        Interval::new(b - TAU, a).expect("ordered")
    }
}

fn instruments_suite(cfg: &RunConfig) -> Result<Checks> {
    let d = cfg.dim;
    let t = &cfg.tolerances;
    let p = AnglePartition::uniform(cfg.bins)?;
    let mut ch = Checks::default();
    let mut rng = rng_for(cfg, 7);

    let mut phase_mats = vec![PhaseMatrix::canonical(d)];
    for r in [1, 3, d] {
        phase_mats.push(PhaseMatrix::random(d, r, &mut rng));
    }
    let mut weight: f64 = 0.0;
    let mut min_eig = f64::INFINITY;
    let mut cov: f64 = 0.0;
    let mut additive: f64 = 0.0;
    let mut norm: f64 = 0.0;
    for c in &phase_mats {
        let eta = structure_vectors(c);
        let rho = DensityMatrix::random(d, 3, &mut rng);
        let iv = random_interval(&mut rng);
        let out = rank1_map(&rho.mat, &eta, std::slice::from_ref(&iv))?;
        let w = linalg::trace(&out).re;
        weight = weight.max((w - linalg::trace_product(&rho.mat, &phase_effect(c, &iv)).re).abs());
        min_eig = min_eig.min(linalg::min_eigenvalue(&linalg::hermitian_part(&out)));
        for th in shift_grid() {
            cov = cov.max(instrument_covariance_defect(&rho, &eta, &iv, th)?);
        }
        let outs = p
            .bins()
            .iter()
            .map(|b| rank1_map(&rho.mat, &eta, std::slice::from_ref(b)))
            .collect::<Result<Vec<_>>>()?;
        let total = outs.iter().fold(CMatrix::zeros(d, d), |a, b| a + b);
        norm = norm.max((linalg::trace(&total).re - 1.0).abs());
        let full = rank1_map(&rho.mat, &eta, &[Interval::full()])?;
        additive = additive.max(linalg::max_abs(&(total - full)));
    }
    ch.at_most("rank-1 instrument weight equals tr[rho E(Theta)]", Ok(weight), t.instrument);
    ch.at_least("rank-1 instrument output eigenvalue", Ok(min_eig), -t.psd_floor);
    ch.at_most("rank-1 instrument covariance on the shift grid", Ok(cov), t.instrument);
    ch.at_most("additivity over a full partition", Ok(additive), 1e-12);
    ch.at_most("partition outputs have unit total trace", Ok(norm), t.instrument);

    // Choi surrogate at d = 8
    let cd = 8;
    let small = AnglePartition::uniform(8)?;
    let mut choi = f64::INFINITY;
    let mut c_rng = rng_for(cfg, 8);
    let mut cands = vec![PhaseMatrix::canonical(cd), PhaseMatrix::random(cd, 2, &mut c_rng)];
    cands.push(PhaseMatrix::random(cd, cd, &mut c_rng));
    for c in &cands {
        let eta = structure_vectors(c);
        for b in small.bins() {
            choi = choi.min(rank1_choi_min_eigenvalue(&eta, &[b])?);
        }
    }
    ch.at_least("Choi matrix eigenvalue (d=8, 8 bins)", Ok(choi), -t.choi_floor);

    // nuclear instrument
    let mut gap: f64 = 0.0;
    for _ in 0..5 {
        let rho = DensityMatrix::random(d, 2, &mut rng);
        let amp: Vec<C64> = (0..d).map(|_| linalg::gaussian_c64(&mut rng)).collect();
        let eta = FockVector { amp }.normalized()?;
        let iv = random_interval(&mut rng);
        let a = canonical_nuclear_instrument(&rho, &eta, &iv)?;
        let b = rank1_map(&rho.mat, &uniform_structure(&eta), &[iv])?;
        gap = gap.max(linalg::max_abs(&(a.output - b)));
    }
    ch.at_most("nuclear instrument equals rank-1 form with all-ones C", Ok(gap), 1e-8);

    // dilation
    let mut worst: f64 = 0.0;
    for i in 0..50 {
        let rho = DensityMatrix::random(d, 1 + i % 4, &mut rng);
        let iv = random_interval(&mut rng);
        worst = worst.max(dilation_check(&rho, &iv));
    }
    ch.at_most("dilation: tr[(rho x |0><0|) O_angle] = tr[rho E_can] (50 draws)", Ok(worst), t.dilation);
    Ok(ch)
}
