mod spec;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use phasekit::angle::AnglePartition;
use phasekit::config::RunConfig;
use phasekit::couplings::{w_matrix, w_matrix_cached, write_atomic, CouplingKernel, KernelLabel};
use phasekit::fock::{make_state, DensityMatrix, FockVector, StateSpec, TwoModeVector};
use phasekit::homodyne::{diagonal_weights, double_homodyne_dist, modified_scheme_phase_dist, sample_outcomes};
use phasekit::linalg::CMatrix;
use phasekit::phase::{phase_distribution, PhaseMatrix};
use phasekit::phase_space::{margins, profile_dirac, profile_f, profile_g};
use phasekit::quadrature::{GridFamily, QuadratureGrid};
use phasekit::verify::verify;
use phasekit::C64;

use spec::{parse_observable, parse_state, ObservableSpec};

const SCHEMA_VERSION: u32 = 1;

/// Leakage above which a truncated state is reported on stderr.
const LEAKAGE_WARNING: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Parser, Debug)]
#[command(name = "phasekit", version, about = "Covariant phase observables and double homodyne detection")]
struct Cli {
    /// Fock truncation dimension d.
    #[arg(long, global = true, default_value_t = 32)]
    dim: usize,
    /// Radial quadrature order Q.
    #[arg(long, global = true, default_value_t = 96)]
    quad: usize,
    /// Radial quadrature family (radial or laguerre).
    #[arg(long, global = true, default_value = "radial")]
    quad_family: GridFamily,
    /// Number of uniform angle bins K.
    #[arg(long, global = true, default_value_t = 64)]
    bins: usize,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Output file (written atomically); stdout when absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
    /// Override a verification tolerance, `key=value`; repeatable.
    #[arg(long = "tol-override", global = true, value_name = "KEY=VAL")]
    tol_override: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Binned phase distribution of a single-mode state.
    PhaseDist {
        /// number:n | coherent:re+imi
        state: String,
        /// canonical | file:path | F:k | G:k | dirac:x0
        #[arg(long, default_value = "canonical")]
        observable: String,
    },
    /// Double homodyne statistics of a signal with a parameter (local reference) state.
    Homodyne {
        signal: String,
        #[arg(long, default_value = "number:0")]
        param: String,
        /// Prepare the signal through W first and compare with the canonical distribution.
        #[arg(long)]
        modified: bool,
        /// Accept a parameter state with number coherences.
        #[arg(long)]
        allow: bool,
        /// Emit the joint (radial node, angle bin) table instead of the angle marginal (CSV).
        #[arg(long)]
        joint: bool,
        /// Draw this many outcome cells (JSON output only).
        #[arg(long, default_value_t = 0)]
        samples: usize,
        /// Directory for a cached W matrix.
        #[arg(long)]
        cache_dir: Option<PathBuf>,
    },
    /// Output wavefunction of a coupling applied to a state on the grid.
    Wavefunction {
        /// Any state; single-mode states are paired with the vacuum.
        state: String,
        #[arg(long, value_enum, default_value_t = Kernel::V)]
        kernel: Kernel,
    },
    /// Run invariant suites: povm, covariance, coupling, identity, instruments or all.
    Verify { suite: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Kernel {
    U,
    V,
}

enum Failure {
    Usage(String),
    Verification,
}

impl From<phasekit::Error> for Failure {
    fn from(e: phasekit::Error) -> Self {
        Failure::Usage(e.to_string())
    }
}

impl From<spec::ParseError> for Failure {
    fn from(e: spec::ParseError) -> Self {
        Failure::Usage(format!("parse error {e}"))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Verification) => ExitCode::from(1),
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn config(cli: &Cli) -> Result<RunConfig, Failure> {
    let mut cfg = RunConfig {
        dim: cli.dim,
        quad_order: cli.quad,
        quad_family: cli.quad_family,
        bins: cli.bins,
        seed: cli.seed,
        ..RunConfig::default()
    };
    for o in &cli.tol_override {
        cfg.tolerances.apply_override(o)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<(), Failure> {
    let cfg = config(cli)?;
    let text = match &cli.command {
        Command::PhaseDist { state, observable } => cmd_phase_dist(&cfg, cli.format, state, observable)?,
        Command::Homodyne { signal, param, modified, allow, joint, samples, cache_dir } => {
            let opts = HomodyneOpts {
                modified: *modified,
                allow: *allow,
                joint: *joint,
                samples: *samples,
                cache_dir: cache_dir.as_deref(),
            };
            cmd_homodyne(&cfg, cli.format, signal, param, &opts)?
        }
        Command::Wavefunction { state, kernel } => cmd_wavefunction(&cfg, cli.format, state, *kernel)?,
        Command::Verify { suite } => {
            let (text, passed) = cmd_verify(&cfg, cli.format, suite)?;
            emit(cli.out.as_deref(), &text)?;
            return if passed { Ok(()) } else { Err(Failure::Verification) };
        }
    };
    emit(cli.out.as_deref(), &text)
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), Failure> {
    match out {
        Some(path) => write_atomic(path, text.as_bytes()).map_err(Failure::from),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("report serializes");
    s.push('\n');
    s
}

/// Normalized single-mode density matrix for `spec`, warning about leakage.
fn single_mode(spec_text: &str, d: usize) -> Result<(StateSpec, DensityMatrix, f64), Failure> {
    let spec = parse_state(spec_text)?;
    if spec.is_two_mode() {
        return Err(Failure::Usage(format!("`{spec_text}` is a two-mode state; this command needs a single mode")));
    }
    let prep = make_state(spec, d, 1.0)?;
    if prep.leakage > LEAKAGE_WARNING {
        eprintln!("warning: `{spec_text}` loses {:.3e} of its norm at d = {d}; renormalized", prep.leakage);
    }
    let psi = prep.single().expect("single-mode recipe");
    Ok((spec, DensityMatrix::from_pure(psi)?, prep.leakage))
}

#[derive(Deserialize)]
struct MatrixFile {
    re: Vec<Vec<f64>>,
    #[serde(default)]
    im: Option<Vec<Vec<f64>>>,
}

fn load_phase_matrix(path: &Path, d: usize) -> Result<PhaseMatrix, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Usage(format!("cannot read {}: {e}", path.display())))?;
    let m: MatrixFile = serde_json::from_str(&text)
        .map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    let n = m.re.len();
    let rows_ok = m.re.iter().all(|r| r.len() == n)
        && m.im.as_ref().is_none_or(|im| im.len() == n && im.iter().all(|r| r.len() == n));
    if !rows_ok {
        return Err(Failure::Usage(format!("{}: phase matrix must be square", path.display())));
    }
    if n != d {
        return Err(Failure::Usage(format!("{}: phase matrix is {n}x{n} but --dim is {d}", path.display())));
    }
    let c = CMatrix::from_fn(n, n, |i, j| C64::new(m.re[i][j], m.im.as_ref().map_or(0.0, |im| im[i][j])));
    Ok(PhaseMatrix::new(c)?)
}

fn observable_matrix(obs: &ObservableSpec, cfg: &RunConfig) -> Result<PhaseMatrix, Failure> {
    let d = cfg.dim;
    let grid = || QuadratureGrid::new(cfg.quad_family, cfg.quad_order);
    Ok(match obs {
        ObservableSpec::Canonical => PhaseMatrix::canonical(d),
        ObservableSpec::File(p) => load_phase_matrix(p, d)?,
        ObservableSpec::F(k) => margins(&profile_f(*k, d, &grid()?)?, &[])?.phase,
        ObservableSpec::G(k) => margins(&profile_g(*k, d, &grid()?)?, &[])?.phase,
        ObservableSpec::Dirac(x0) => margins(&profile_dirac(*x0, &PhaseMatrix::canonical(d))?, &[])?.phase,
    })
}

#[derive(Serialize)]
struct Row {
    theta_lo: f64,
    theta_hi: f64,
    prob: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    residual: Option<f64>,
}

fn rows(p: &AnglePartition, probs: &[f64], residual: Option<&[f64]>) -> Vec<Row> {
    let e = p.edges();
    probs
        .iter()
        .enumerate()
        .map(|(j, &prob)| Row { theta_lo: e[j], theta_hi: e[j + 1], prob, residual: residual.map(|r| r[j]) })
        .collect()
}

fn rows_csv(rows: &[Row], sum_residual: f64) -> String {
    let mut s = format!("# sum_residual={sum_residual:e}\n");
    let with_res = rows.first().is_some_and(|r| r.residual.is_some());
    s.push_str(if with_res { "theta_lo,theta_hi,prob,residual\n" } else { "theta_lo,theta_hi,prob\n" });
    for r in rows {
        let _ = write!(s, "{},{},{}", r.theta_lo, r.theta_hi, r.prob);
        if let Some(res) = r.residual {
            let _ = write!(s, ",{res}");
        }
        s.push('\n');
    }
    s
}

fn sum_residual(probs: &[f64]) -> f64 {
    probs.iter().sum::<f64>() - 1.0
}

#[derive(Serialize)]
struct PhaseDistReport<'a> {
    schema_version: u32,
    command: &'static str,
    config: &'a RunConfig,
    state: StateSpec,
    observable: &'a str,
    leakage: f64,
    sum_residual: f64,
    rows: Vec<Row>,
}

fn cmd_phase_dist(cfg: &RunConfig, fmt: Format, state: &str, observable: &str) -> Result<String, Failure> {
    let (spec, rho, leakage) = single_mode(state, cfg.dim)?;
    let obs = parse_observable(observable)?;
    let c = observable_matrix(&obs, cfg)?;
    let p = AnglePartition::uniform(cfg.bins)?;
    let probs = phase_distribution(&rho, &c, &p)?;
    let res = sum_residual(&probs);
    let rows = rows(&p, &probs, None);
    Ok(match fmt {
        Format::Csv => rows_csv(&rows, res),
        Format::Json => to_json(&PhaseDistReport {
            schema_version: SCHEMA_VERSION,
            command: "phase-dist",
            config: cfg,
            state: spec,
            observable,
            leakage,
            sum_residual: res,
            rows,
        }),
    })
}

struct HomodyneOpts<'a> {
    modified: bool,
    allow: bool,
    joint: bool,
    samples: usize,
    cache_dir: Option<&'a Path>,
}

#[derive(Serialize)]
struct JointRow {
    x: f64,
    weight: f64,
    theta_lo: f64,
    theta_hi: f64,
    prob: f64,
}

#[derive(Serialize)]
struct HomodyneReport<'a> {
    schema_version: u32,
    command: &'static str,
    config: &'a RunConfig,
    signal: StateSpec,
    param: Option<StateSpec>,
    modified: bool,
    leakage: f64,
    sum_residual: f64,
    /// Angle marginal; with `modified`, the residual is against the canonical distribution.
    rows: Vec<Row>,
    #[serde(skip_serializing_if = "Option::is_none")]
    max_residual: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    via_v: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    mass_after_w: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    joint: Option<Vec<JointRow>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    samples: Option<Vec<(usize, usize)>>,
}

fn cmd_homodyne(cfg: &RunConfig, fmt: Format, signal: &str, param: &str, o: &HomodyneOpts) -> Result<String, Failure> {
    cfg.validate_coupling()?;
    if o.samples > 0 && fmt == Format::Csv {
        return Err(Failure::Usage("--samples needs --format json".into()));
    }
    let d = cfg.dim;
    let (sig_spec, rho, leakage) = single_mode(signal, d)?;
    let grid = QuadratureGrid::new(cfg.quad_family, cfg.quad_order)?;
    let p = AnglePartition::uniform(cfg.bins)?;

    if o.modified {
        if o.joint || o.samples > 0 {
            return Err(Failure::Usage("--modified yields only the angle marginal".into()));
        }
        let w = match o.cache_dir {
            Some(dir) => w_matrix_cached(d, &grid, dir)?,
            None => w_matrix(d, &grid)?,
        };
        let s = modified_scheme_phase_dist(&rho, &w, &grid, &p)?;
        let residual = s.residual();
        let rows = rows(&p, &s.via_uw, Some(&residual));
        let res = sum_residual(&s.via_uw);
        return Ok(match fmt {
            Format::Csv => rows_csv(&rows, res),
            Format::Json => to_json(&HomodyneReport {
                schema_version: SCHEMA_VERSION,
                command: "homodyne",
                config: cfg,
                signal: sig_spec,
                param: None,
                modified: true,
                leakage,
                sum_residual: res,
                max_residual: Some(s.max_residual()),
                via_v: Some(s.via_v.clone()),
                mass_after_w: Some(s.mass_uw),
                rows,
                joint: None,
                samples: None,
            }),
        });
    }

    let (par_spec, sigma, _) = single_mode(param, d)?;
    if !o.allow {
        diagonal_weights(&sigma).map_err(|e| {
            Failure::Usage(format!("{e}; the measured observable is covariant only for number-diagonal parameter states (pass --allow to proceed)"))
        })?;
    }
    let table = double_homodyne_dist(&rho, &sigma, &grid, &p)?;
    let marginal = table.angle_marginal();
    let res = sum_residual(&marginal);
    let joint_rows = || {
        let e = p.edges();
        (0..table.rows())
            .flat_map(|q| {
                (0..table.bins()).map(move |j| (q, j))
            })
            .map(|(q, j)| JointRow {
                x: table.nodes[q],
                weight: table.weights[q],
                theta_lo: e[j],
                theta_hi: e[j + 1],
                prob: table.cell(q, j),
            })
            .collect::<Vec<_>>()
    };
    Ok(match fmt {
        Format::Csv if o.joint => {
            let mut s = format!("# sum_residual={:e}\nx,weight,theta_lo,theta_hi,prob\n", table.mass - 1.0);
            for r in joint_rows() {
                let _ = writeln!(s, "{},{},{},{},{}", r.x, r.weight, r.theta_lo, r.theta_hi, r.prob);
            }
            s
        }
        Format::Csv => rows_csv(&rows(&p, &marginal, None), res),
        Format::Json => to_json(&HomodyneReport {
            schema_version: SCHEMA_VERSION,
            command: "homodyne",
            config: cfg,
            signal: sig_spec,
            param: Some(par_spec),
            modified: false,
            leakage,
            sum_residual: res,
            rows: rows(&p, &marginal, None),
            max_residual: None,
            via_v: None,
            mass_after_w: None,
            joint: Some(joint_rows()),
            samples: (o.samples > 0).then(|| sample_outcomes(&table, o.samples, cfg.seed)).transpose()?,
        }),
    })
}

#[derive(Serialize)]
struct WaveRow {
    x: f64,
    theta: f64,
    re: f64,
    im: f64,
}

#[derive(Serialize)]
struct WavefunctionReport<'a> {
    schema_version: u32,
    command: &'static str,
    config: &'a RunConfig,
    state: StateSpec,
    kernel: &'static str,
    leakage: f64,
    /// Norm of the recipe before normalization, when it is not normalized.
    original_norm: Option<f64>,
    mass: f64,
    values: Vec<WaveRow>,
}

fn cmd_wavefunction(cfg: &RunConfig, fmt: Format, state: &str, kernel: Kernel) -> Result<String, Failure> {
    cfg.validate_coupling()?;
    let d = cfg.dim;
    let spec = parse_state(state)?;
    let prep = make_state(spec, d, 1.0)?;
    if prep.leakage > LEAKAGE_WARNING {
        eprintln!("warning: `{state}` loses {:.3e} of its norm at d = {d}", prep.leakage);
    }
    let two = match prep.two_mode() {
        Some(v) => v.clone(),
        None => TwoModeVector::product(prep.single().expect("single-mode recipe"), &FockVector::vacuum(d))?,
    };
    let grid = QuadratureGrid::new(cfg.quad_family, cfg.quad_order)?;
    let label = match kernel {
        Kernel::U => KernelLabel::U,
        Kernel::V => KernelLabel::V,
    };
    let psi = CouplingKernel::new(label, d, &grid).apply(&two)?;
    let p = AnglePartition::uniform(cfg.bins)?;
    let values: Vec<WaveRow> = (0..grid.len())
        .flat_map(|q| p.bins().into_iter().map(move |iv| (q, iv.midpoint())))
        .map(|(q, th)| {
            let z = psi.value(q, th);
            WaveRow { x: grid.nodes[q], theta: th, re: z.re, im: z.im }
        })
        .collect();
    Ok(match fmt {
        Format::Csv => {
            let mut s = format!("# mass={}\nx,theta,re,im\n", psi.mass());
            for r in &values {
                let _ = writeln!(s, "{},{},{},{}", r.x, r.theta, r.re, r.im);
            }
            s
        }
        Format::Json => to_json(&WavefunctionReport {
            schema_version: SCHEMA_VERSION,
            command: "wavefunction",
            config: cfg,
            state: spec,
            kernel: match kernel {
                Kernel::U => "u",
                Kernel::V => "v",
            },
            leakage: prep.leakage,
            original_norm: prep.original_norm,
            mass: psi.mass(),
            values,
        }),
    })
}

fn cmd_verify(cfg: &RunConfig, fmt: Format, suite: &str) -> Result<(String, bool), Failure> {
    let start = Instant::now();
    let report = verify(suite, cfg)?;
    for s in &report.suites {
        eprintln!(
            "{} {} ({} checks, {:.2} s)",
            if s.passed { "PASS" } else { "FAIL" },
            s.suite.as_str(),
            s.checks.len(),
            s.seconds
        );
        for c in s.failures() {
            eprintln!("  failed: {} value={:?} bound={:?}", c.name, c.value, c.bound);
        }
    }
    eprintln!("total {:.2} s", start.elapsed().as_secs_f64());
    let text = match fmt {
        Format::Json => to_json(&report),
        Format::Csv => {
            let mut s = String::from("suite,check,kind,value,bound,passed\n");
            for r in &report.suites {
                for c in &r.checks {
                    let num = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
                    let _ = writeln!(
                        s,
                        "{},\"{}\",{},{},{},{}",
                        r.suite.as_str(),
                        c.name.replace('"', "\"\""),
                        c.kind,
                        num(c.value),
                        num(c.bound),
                        c.passed
                    );
                }
            }
            s
        }
    };
    Ok((text, report.passed))
}
