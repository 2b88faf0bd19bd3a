//! Command-line front end: argument parsing, flat config files, output files
//! with reproducibility metadata, and the verification suite.
//!
//! Every command writes under the output directory (`--out`, else the
//! `QSTOCH_OUT` environment variable, else `.`). Each result file has a
//! `.meta.json` sidecar holding the seed, a SHA-256 hash of the resolved
//! configuration and the crate version. Outputs carry no timestamps, so
//! identical configurations give byte-identical files.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use num_complex::Complex64 as C64;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::apps::{
    generalized_chisq_quantiles, increment_covariance, strike_tail, symmetric_eigenvalues, test_power_with_band,
    variance_swap_strike_with, Alternative, FbmGenerator, SwapOptions, SwapSpec, TamsdBand, TamsdTestConfig,
};
use crate::circuits::{
    compute_loader_angles, dft_matrix, dst_apply, dst_matrix, qft_circuit, unary_loader_circuit,
};
use crate::error::{Error, Result};
use crate::levy::{
    cosine_similarity, fractional_kernel, sample_levy_noise, stochastic_integral_classical,
    stochastic_integral_quantum_with_noise, LevyNoiseSpec, NoiseKind,
};
use crate::qmc::{
    estimate_normalized_inner_with, phase_estimation_distribution, ae_outcome_distribution, plan_estimate,
    EstimateOptions, Method, Moment, Target, TestFunction,
};
use crate::randgauss::{node_beta_ks, sample_angle_tree};
use crate::rng::{seeded, stream};
use crate::spectral_bm::{
    coherent_encoding_build, exact_mixture_density, simulate_trajectory_dense, terms_for_accuracy, DstPlan,
    ProcessSpec, RadiusMode, ShiftSampling, SimOptions, TrajectorySampler,
};
use crate::statevector::{trace_distance, QuantumState};

/// Environment variable naming the default output directory.
pub const OUT_ENV: &str = "QSTOCH_OUT";

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_VERIFY: i32 = 2;
pub const EXIT_RESOURCE: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "qstoch", version, about = "Spectral Brownian motion, Levy integrals and quantum Monte Carlo")]
#[command(args_override_self = true)]
pub struct Cli {
    /// Output directory (default: $QSTOCH_OUT or the current directory).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads for parallel loops (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Flat key = value file; command-line flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Sample trajectories with the fast quantum-pipeline path.
    Trajectory(TrajectoryArgs),
    /// Number of series terms for each accuracy and Hurst exponent.
    Table1(Table1Args),
    /// Circuit, equivalence and distribution checks.
    Verify(VerifyArgs),
    /// Normalized inner-product estimation.
    Qmc(QmcArgs),
    /// Stochastic integral against Levy noise.
    Levy(LevyArgs),
    /// TAMSD test power for anomalous diffusion.
    Tamsd(TamsdArgs),
    /// Variance-swap strike.
    Swap(SwapArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
pub enum ShiftArg {
    Born,
    Independent,
}

#[derive(Args, Debug, Serialize)]
#[command(args_override_self = true)]
pub struct TrajectoryArgs {
    #[arg(long, default_value_t = 0.5)]
    pub hurst: f64,
    #[arg(long, default_value_t = 256)]
    pub terms: usize,
    #[arg(long, default_value_t = 4096)]
    pub steps: usize,
    #[arg(long, default_value_t = 10)]
    pub count: usize,
    #[arg(long, value_enum, default_value_t = ShiftArg::Born)]
    pub shift: ShiftArg,
}

#[derive(Args, Debug, Serialize)]
#[command(args_override_self = true)]
pub struct Table1Args {}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
pub enum Fault {
    /// Scale the DST implementation by 1/sqrt(2) (wrong normalization).
    DstNormalization,
}

#[derive(Args, Debug, Serialize)]
#[command(args_override_self = true)]
pub struct VerifyArgs {
    /// Mutation fixture: deliberately break one component.
    #[arg(long, value_enum)]
    pub inject_fault: Option<Fault>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
pub enum ModeArg {
    Direct,
    Ae,
    Classical,
}

impl ModeArg {
    fn method(self) -> Method {
        match self {
            ModeArg::Direct => Method::DirectAmplitude,
            ModeArg::Ae => Method::PhaseEstimationAE,
            ModeArg::Classical => Method::ClassicalMC,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
pub enum MomentArg {
    First,
    Second,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
pub enum FunctionArg {
    /// Indicator of the --window span.
    Window,
    /// sin(t).
    Sine,
    /// t (pi - t).
    Parabola,
}

#[derive(Args, Debug, Serialize)]
#[command(args_override_self = true)]
pub struct QmcArgs {
    #[arg(long, value_enum, default_value_t = ModeArg::Direct)]
    pub mode: ModeArg,
    #[arg(long, default_value_t = 0.5)]
    pub hurst: f64,
    #[arg(long, default_value_t = 0.05)]
    pub epsilon: f64,
    #[arg(long, value_enum, default_value_t = FunctionArg::Window)]
    pub function: FunctionArg,
    /// Time window lo:hi as fractions of [0, pi].
    #[arg(long, default_value = "0:1")]
    pub window: String,
    #[arg(long, value_enum, default_value_t = MomentArg::Second)]
    pub moment: MomentArg,
    /// Override the planned series length.
    #[arg(long)]
    pub terms: Option<usize>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub precision_bits: Option<u32>,
    #[arg(long)]
    pub ae_bits: Option<u32>,
    #[arg(long)]
    pub samples: Option<usize>,
    /// Keep only branches with |B| in lo:hi.
    #[arg(long)]
    pub norm_window: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
pub enum KindArg {
    Gaussian,
    Cpoisson,
    Mixed,
}

#[derive(Args, Debug, Serialize)]
#[command(args_override_self = true)]
pub struct LevyArgs {
    #[arg(long, value_enum, default_value_t = KindArg::Gaussian)]
    pub kind: KindArg,
    #[arg(long, default_value_t = 1.0)]
    pub rate: f64,
    #[arg(long, default_value_t = 0.0)]
    pub jump_mean: f64,
    #[arg(long, default_value_t = 1.0)]
    pub jump_std: f64,
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,
    #[arg(long, default_value_t = 0.0)]
    pub drift: f64,
    #[arg(long, default_value_t = 256)]
    pub steps: usize,
    /// Exponent H of the kernel t^{H - 1/2}.
    #[arg(long, default_value_t = 0.75)]
    pub kernel_hurst: f64,
    #[arg(long, default_value_t = 10)]
    pub runs: usize,
    /// Fourier coefficients kept (default: all 2T).
    #[arg(long)]
    pub keep: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
pub enum AltArg {
    Fbm,
    Cpoisson,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
pub enum GeneratorArg {
    DaviesHarte,
    Spectral,
}

#[derive(Args, Debug, Serialize)]
#[command(args_override_self = true)]
pub struct TamsdArgs {
    #[arg(long, default_value_t = 0.5)]
    pub h_test: f64,
    #[arg(long, default_value_t = 0.8)]
    pub h_alt: f64,
    #[arg(long, value_enum, default_value_t = AltArg::Fbm)]
    pub alternative: AltArg,
    #[arg(long, default_value_t = 0.5)]
    pub rate: f64,
    /// Jump size; default sqrt(D / rate), matching the null mean.
    #[arg(long)]
    pub jump_std: Option<f64>,
    #[arg(long, default_value_t = 1000)]
    pub trials: usize,
    #[arg(long, default_value_t = 512)]
    pub steps: usize,
    #[arg(long, default_value_t = 4)]
    pub tau: usize,
    #[arg(long, default_value_t = 1.0)]
    pub diffusion: f64,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long, default_value_t = 10_000)]
    pub quantile_samples: usize,
    #[arg(long, value_enum, default_value_t = GeneratorArg::DaviesHarte)]
    pub generator: GeneratorArg,
}

#[derive(Args, Debug, Serialize)]
#[command(args_override_self = true)]
pub struct SwapArgs {
    #[arg(long, value_enum, default_value_t = ModeArg::Direct)]
    pub mode: ModeArg,
    #[arg(long, default_value_t = 0.5)]
    pub hurst: f64,
    #[arg(long, default_value_t = 4)]
    pub terms: usize,
    #[arg(long, default_value_t = 16)]
    pub steps: usize,
    #[arg(long, default_value_t = 0.01)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 1)]
    pub intervals: usize,
    #[arg(long, default_value_t = 1.0)]
    pub annualization: f64,
    #[arg(long, default_value_t = 0.0)]
    pub rate: f64,
    /// Time span lo:hi as fractions of [0, pi].
    #[arg(long, default_value = "0:1")]
    pub span: String,
    #[arg(long)]
    pub norm_window: Option<String>,
    #[arg(long, default_value_t = 4)]
    pub precision_bits: u32,
    #[arg(long)]
    pub ae_bits: Option<u32>,
    #[arg(long)]
    pub samples: Option<usize>,
}

// ------------------------------------------------------------------ plumbing

/// Exit code for a module error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Resource(_) | Error::Budget(_) | Error::RetryCapExceeded(_) => EXIT_RESOURCE,
        Error::Verification(_) | Error::DegeneratePostselection(_) => EXIT_VERIFY,
        _ => EXIT_USAGE,
    }
}

/// 17 significant digits, locale independent.
pub fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

/// Parses `key = value` lines ('#' starts a comment) into flag arguments.
pub fn parse_config(text: &str) -> Result<Vec<String>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::InvalidInput(format!("config line {}: expected key = value", n + 1)))?;
        let k = k.trim().replace('_', "-");
        let v = v.trim();
        if k.is_empty() {
            return Err(Error::InvalidInput(format!("config line {}: empty key", n + 1)));
        }
        out.push(format!("--{k}"));
        if v != "true" {
            out.push(v.to_string());
        }
    }
    Ok(out)
}

fn config_path(args: &[String]) -> Option<String> {
    let mut it = args.iter();
    while let Some(a) = it.next() {
        if a == "--config" {
            return it.next().cloned();
        }
        if let Some(p) = a.strip_prefix("--config=") {
            return Some(p.to_string());
        }
    }
    None
}

const COMMANDS: [&str; 7] = ["trajectory", "table1", "verify", "qmc", "levy", "tamsd", "swap"];

/// Inserts config-file flags right after the subcommand, so later
/// command-line flags override them.
pub fn merge_config_args(args: Vec<String>) -> Result<Vec<String>> {
    let Some(path) = config_path(&args[1..]) else { return Ok(args) };
    let text = fs::read_to_string(&path).map_err(|e| Error::InvalidInput(format!("config {path}: {e}")))?;
    let extra = parse_config(&text)?;
    let Some(pos) = args.iter().skip(1).position(|a| COMMANDS.contains(&a.as_str())).map(|p| p + 1) else {
        return Ok(args);
    };
    let mut out = vec![args[0].clone(), args[pos].clone()];
    out.extend(extra);
    out.extend(args[1..pos].iter().cloned());
    out.extend(args[pos + 1..].iter().cloned());
    Ok(out)
}

fn parse_range(s: &str, what: &str) -> Result<(f64, f64)> {
    let bad = || Error::InvalidInput(format!("{what} must look like lo:hi, got '{s}'"));
    let (a, b) = s.split_once(':').ok_or_else(bad)?;
    let a: f64 = a.trim().parse().map_err(|_| bad())?;
    let b: f64 = b.trim().parse().map_err(|_| bad())?;
    if !(a <= b) {
        return Err(Error::InvalidInput(format!("{what} {s} is empty")));
    }
    Ok((a, b))
}

/// Reproducibility header written next to every output.
#[derive(Debug, Serialize)]
pub struct Meta<'a> {
    pub command: &'a str,
    pub version: &'a str,
    pub seed: u64,
    pub config_hash: String,
    pub config: serde_json::Value,
    pub files: Vec<String>,
}

pub fn config_hash(command: &str, seed: u64, config: &serde_json::Value) -> String {
    let text = serde_json::to_string(&(command, seed, config)).expect("serializable");
    Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

struct Output {
    dir: PathBuf,
    command: &'static str,
    seed: u64,
    config: serde_json::Value,
    files: Vec<String>,
}

impl Output {
    fn new(dir: PathBuf, command: &'static str, seed: u64, config: serde_json::Value) -> Result<Self> {
        fs::create_dir_all(&dir)?;
        Ok(Output { dir, command, seed, config, files: Vec::new() })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn csv(&mut self, name: &str, header: &[String], rows: &[Vec<String>]) -> Result<()> {
        let mut w = csv::Writer::from_path(self.path(name))?;
        w.write_record(header)?;
        for r in rows {
            w.write_record(r)?;
        }
        w.flush()?;
        self.files.push(name.to_string());
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut body = serde_json::to_value(value)?;
        if let serde_json::Value::Object(m) = &mut body {
            m.insert("seed".into(), self.seed.into());
            m.insert("config_hash".into(), config_hash(self.command, self.seed, &self.config).into());
            m.insert("version".into(), env!("CARGO_PKG_VERSION").into());
        }
        fs::write(self.path(name), serde_json::to_string_pretty(&body)? + "\n")?;
        self.files.push(name.to_string());
        Ok(())
    }

    /// Writes `<command>.meta.json`.
    fn finish(self) -> Result<PathBuf> {
        let meta = Meta {
            command: self.command,
            version: env!("CARGO_PKG_VERSION"),
            seed: self.seed,
            config_hash: config_hash(self.command, self.seed, &self.config),
            config: self.config.clone(),
            files: self.files.clone(),
        };
        let p = self.path(&format!("{}.meta.json", self.command));
        fs::write(&p, serde_json::to_string_pretty(&meta)? + "\n")?;
        Ok(p)
    }
}

fn out_dir(cli: &Cli) -> PathBuf {
    cli.out
        .clone()
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."))
}

/// Parses and runs a command line; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let raw: Vec<String> = args.into_iter().map(|a| a.into().to_string_lossy().into_owned()).collect();
    let merged = match merge_config_args(raw) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_USAGE;
        }
    };
    let cli = match Cli::try_parse_from(merged) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    if let Some(n) = cli.threads {
        // a pool built earlier in the same process stays in place
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    match dispatch(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn dispatch(cli: &Cli) -> Result<i32> {
    let dir = out_dir(cli);
    let seed = cli.seed;
    match &cli.command {
        Command::Trajectory(a) => cmd_trajectory(a, dir, seed),
        Command::Table1(a) => cmd_table1(a, dir, seed),
        Command::Verify(a) => cmd_verify(a, dir, seed),
        Command::Qmc(a) => cmd_qmc(a, dir, seed),
        Command::Levy(a) => cmd_levy(a, dir, seed),
        Command::Tamsd(a) => cmd_tamsd(a, dir, seed),
        Command::Swap(a) => cmd_swap(a, dir, seed),
    }
}

fn to_value<T: Serialize>(t: &T) -> serde_json::Value {
    serde_json::to_value(t).expect("serializable")
}

// ------------------------------------------------------------------ commands

pub fn cmd_trajectory(a: &TrajectoryArgs, dir: PathBuf, seed: u64) -> Result<i32> {
    let spec = ProcessSpec::new(a.hurst, a.terms, a.steps)?;
    if a.count == 0 {
        return Err(Error::InvalidInput("count must be at least 1".into()));
    }
    let shift = match a.shift {
        ShiftArg::Born => ShiftSampling::Born,
        ShiftArg::Independent => ShiftSampling::Independent,
    };
    let sampler = TrajectorySampler::new(spec, SimOptions { shift, radius: RadiusMode::Sampled })?;
    let runs = sampler.sample_batch(seed, a.count)?;
    let cols: Vec<Vec<f64>> = runs.iter().map(|r| r.trajectory.with_endpoints()).collect();
    let header: Vec<String> = (0..a.count).map(|i| format!("traj_{i}")).collect();
    let rows: Vec<Vec<String>> = (0..=a.steps).map(|i| cols.iter().map(|c| fmt17(c[i])).collect()).collect();
    let mut out = Output::new(dir, "trajectory", seed, to_value(a))?;
    out.csv("trajectories.csv", &header, &rows)?;
    #[derive(Serialize)]
    struct Runs {
        /// Row i of the CSV is t_i = i pi / T, i = 0..=T.
        times: String,
        shifts: Vec<usize>,
        shift_probabilities: Vec<f64>,
        norms: Vec<f64>,
    }
    out.json(
        "trajectories.runs.json",
        &Runs {
            times: format!("row i is t = i*pi/{}", a.steps),
            shifts: runs.iter().map(|r| r.shift).collect(),
            shift_probabilities: runs.iter().map(|r| r.shift_probability).collect(),
            norms: runs.iter().map(|r| r.trajectory.norm).collect(),
        },
    )?;
    let meta = out.finish()?;
    println!("wrote {} trajectories; metadata in {}", a.count, meta.display());
    Ok(EXIT_OK)
}

/// Published values of the terms table, indexed [epsilon][hurst].
pub const TABLE1_REFERENCE: [[usize; 3]; 3] = [[100, 35, 20], [1000, 205, 75], [10000, 1200, 320]];
pub const TABLE1_EPS: [f64; 3] = [1e-2, 1e-3, 1e-4];
pub const TABLE1_HURST: [f64; 3] = [0.5, 0.65, 0.8];

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Table1Row {
    pub epsilon: f64,
    pub hurst: f64,
    pub terms: usize,
    pub reference: usize,
    /// |terms - reference| / reference.
    pub deviation: f64,
}

pub fn table1() -> Result<Vec<Table1Row>> {
    let mut rows = Vec::new();
    for (i, &e) in TABLE1_EPS.iter().enumerate() {
        for (j, &h) in TABLE1_HURST.iter().enumerate() {
            let terms = terms_for_accuracy(e, h)?;
            let reference = TABLE1_REFERENCE[i][j];
            rows.push(Table1Row {
                epsilon: e,
                hurst: h,
                terms,
                reference,
                deviation: (terms as f64 - reference as f64).abs() / reference as f64,
            });
        }
    }
    Ok(rows)
}

pub fn cmd_table1(a: &Table1Args, dir: PathBuf, seed: u64) -> Result<i32> {
    let rows = table1()?;
    let mut out = Output::new(dir, "table1", seed, to_value(a))?;
    let header: Vec<String> = ["epsilon", "hurst", "terms", "reference", "deviation"].map(String::from).to_vec();
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| vec![fmt17(r.epsilon), fmt17(r.hurst), r.terms.to_string(), r.reference.to_string(), fmt17(r.deviation)])
        .collect();
    out.csv("table1.csv", &header, &body)?;
    println!("{:>8} {:>6} {:>7} {:>7} {:>9}", "epsilon", "H", "L", "ref", "dev");
    for r in &rows {
        println!("{:>8.0e} {:>6} {:>7} {:>7} {:>8.2}%", r.epsilon, r.hurst, r.terms, r.reference, 100.0 * r.deviation);
    }
    out.finish()?;
    Ok(EXIT_OK)
}

// -------------------------------------------------------------- verification

/// One verification check.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub measured: f64,
    pub tolerance: f64,
    /// "max" checks require measured <= tolerance, "min" require >=.
    pub kind: &'static str,
    pub pass: bool,
}

impl Check {
    fn at_most(name: &str, measured: f64, tolerance: f64) -> Self {
        Check { name: name.into(), measured, tolerance, kind: "max", pass: measured <= tolerance }
    }

    fn at_least(name: &str, measured: f64, tolerance: f64) -> Self {
        Check { name: name.into(), measured, tolerance, kind: "min", pass: measured >= tolerance }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VerifyReport {
    pub checks: Vec<Check>,
    pub pass: bool,
    pub failed: Vec<String>,
    pub fault: Option<Fault>,
}

fn random_real(n: usize, seed: u64) -> Vec<f64> {
    let mut r = seeded(seed);
    (0..n).map(|_| r.sample::<f64, _>(StandardNormal)).collect()
}

/// Circuit-vs-matrix oracles, dense-vs-fast equivalence and distribution
/// tests. `fault` breaks one component to show the suite catches it.
pub fn verification_suite(fault: Option<Fault>) -> Result<VerifyReport> {
    let dst_scale = if fault == Some(Fault::DstNormalization) { std::f64::consts::FRAC_1_SQRT_2 } else { 1.0 };
    let mut checks = Vec::new();

    // QFT circuit against the DFT matrix
    let mut err: f64 = 0.0;
    for k in 1..=6 {
        let m = qft_circuit(k)?.matrix()?;
        let d = dft_matrix(1 << k);
        err = err.max((m - d).iter().map(|z| z.norm()).fold(0.0, f64::max));
    }
    checks.push(Check::at_most("qft_circuit_vs_matrix", err, 1e-10));

    // DST circuit and FFT sine transform against the DST-I matrix
    let (mut e_circ, mut e_fft): (f64, f64) = (0.0, 0.0);
    for k in 2..=6 {
        let n = 1usize << k;
        let mut x = random_real(n, k as u64);
        x[0] = 0.0;
        let nx = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        x.iter_mut().for_each(|v| *v /= nx);
        let want = dst_matrix(n) * nalgebra::DVector::from_vec(x.clone());
        let got = dst_apply(&QuantumState::from_real(&x)?, n, true)?;
        for i in 0..n {
            e_circ = e_circ.max((dst_scale * got.amplitudes()[i] - C64::new(want[i], 0.0)).norm());
        }
        let fast = DstPlan::new(n)?.orthonormal(&x[1..]);
        for i in 1..n {
            e_fft = e_fft.max((dst_scale * fast[i - 1] - want[i]).abs());
        }
    }
    checks.push(Check::at_most("dst_circuit_vs_matrix", e_circ, 1e-10));
    checks.push(Check::at_most("dst_fft_vs_matrix", e_fft, 1e-10));

    // unary loader round trip
    let x = random_real(16, 99);
    let nx = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    let tree = compute_loader_angles(&x)?;
    let s = unary_loader_circuit(&tree)?.apply(&QuantumState::new_basis_state(16, 0)?)?;
    let e = (0..16).map(|i| (s.amplitudes()[1 << i].re - x[i] / nx).abs()).fold(0.0, f64::max);
    checks.push(Check::at_most("unary_loader_roundtrip", e, 1e-10));

    // gate-level pipeline against the fast path under shared seeds
    let spec = ProcessSpec::new(0.5, 8, 32)?;
    let sampler = TrajectorySampler::new(spec, SimOptions::default())?;
    let mut e: f64 = 0.0;
    for seed in 0..10 {
        let dense = simulate_trajectory_dense(&spec, SimOptions::default(), &mut seeded(seed))?;
        let fast = sampler.run(&mut seeded(seed))?;
        if dense.shift != fast.shift {
            e = f64::INFINITY;
            continue;
        }
        let enc = fast.trajectory.analog_encoding();
        for i in 1..32 {
            e = e.max((dense.state.amplitudes()[i] - C64::new(enc[i - 1], 0.0)).norm());
        }
    }
    checks.push(Check::at_most("dense_vs_fast_pipeline", e, 1e-9));

    // coherent encoding against the exact mixture
    let spec = ProcessSpec::new(0.5, 4, 16)?;
    let enc = coherent_encoding_build(&spec, 2)?;
    let td = trace_distance(&enc.value_density()?, &exact_mixture_density(&spec));
    checks.push(Check::at_most("coherent_vs_exact_mixture", td, 1e-10));

    // node angle laws (10^4 trees, 7 nodes)
    let trees: Vec<_> = (0..10_000).map(|i| sample_angle_tree(8, &mut stream(77, i))).collect::<Result<_>>()?;
    let p = (1..8).map(|j| node_beta_ks(&trees, j).p_value).fold(1.0, f64::min);
    checks.push(Check::at_least("node_angle_ks_min_p", p, 1e-3));

    // untruncated quantum integral against the Toeplitz product
    let kernel = fractional_kernel(32, 0.75, 1.0);
    let noise = sample_levy_noise(&LevyNoiseSpec::new(NoiseKind::GaussianWhite { sigma: 1.0 }, 32)?, &mut seeded(5))?;
    let q = stochastic_integral_quantum_with_noise(&kernel, &noise, 64, &mut seeded(6))?;
    let c = stochastic_integral_classical(&kernel, &noise)?;
    checks.push(Check::at_least("levy_untruncated_cosine", cosine_similarity(q.state.amplitudes(), &c), 1.0 - 1e-8));

    // gate-level phase estimation against its closed-form law
    let mut a = crate::circuits::Circuit::new(2);
    a.push(crate::statevector::GateOp::ry(0, 0.9));
    a.push(crate::statevector::GateOp::cry(0, 1, 1.3));
    let t = Target::qubits(vec![(1, true)]);
    let s = a.apply(&QuantumState::new_basis_state(2, 0)?)?;
    let law = ae_outcome_distribution(t.probability(&s), 4)?;
    let circ = phase_estimation_distribution(&a, &t, 4)?;
    let e = law.iter().zip(&circ).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    checks.push(Check::at_most("phase_estimation_vs_closed_form", e, 1e-9));

    let failed: Vec<String> = checks.iter().filter(|c| !c.pass).map(|c| c.name.clone()).collect();
    Ok(VerifyReport { pass: failed.is_empty(), failed, checks, fault })
}

pub fn cmd_verify(a: &VerifyArgs, dir: PathBuf, seed: u64) -> Result<i32> {
    let report = verification_suite(a.inject_fault)?;
    let mut out = Output::new(dir, "verify", seed, to_value(a))?;
    out.json("verify_report.json", &report)?;
    out.finish()?;
    for c in &report.checks {
        println!("{} {:<34} measured {:.3e} ({} {:.1e})", if c.pass { "PASS" } else { "FAIL" }, c.name, c.measured, c.kind, c.tolerance);
    }
    if report.pass {
        Ok(EXIT_OK)
    } else {
        eprintln!("verification failed: {}", report.failed.join(", "));
        Ok(EXIT_VERIFY)
    }
}

// ------------------------------------------------------------ module commands

pub fn cmd_qmc(a: &QmcArgs, dir: PathBuf, seed: u64) -> Result<i32> {
    let method = a.mode.method();
    let moment = match a.moment {
        MomentArg::First => Moment::First,
        MomentArg::Second => Moment::Second,
    };
    let plan = plan_estimate(a.hurst, a.epsilon, method, moment, a.terms, a.steps, a.precision_bits)?;
    let spec = ProcessSpec::new(a.hurst, plan.terms, plan.steps)?;
    let (lo, hi) = parse_range(&a.window, "window")?;
    let f = match a.function {
        FunctionArg::Window => TestFunction::window(spec.steps, lo, hi)?,
        FunctionArg::Sine => TestFunction::from_fn(spec.steps, f64::sin)?,
        FunctionArg::Parabola => TestFunction::from_fn(spec.steps, |t| t * (std::f64::consts::PI - t))?,
    };
    let opts = EstimateOptions {
        moment,
        precision_bits: plan.precision_bits,
        norm_window: a.norm_window.as_deref().map(|s| parse_range(s, "norm window")).transpose()?,
        ae_bits: a.ae_bits,
        samples: a.samples,
        ..Default::default()
    };
    let result = estimate_normalized_inner_with(&spec, &f, a.epsilon, method, &opts, &mut seeded(seed))?;
    #[derive(Serialize)]
    struct Report<'a> {
        result: &'a crate::qmc::EstimationResult,
        spec: ProcessSpec,
        plan: &'a crate::qmc::Plan,
    }
    let mut out = Output::new(dir, "qmc", seed, to_value(a))?;
    out.json("qmc_result.json", &Report { result: &result, spec, plan: &plan })?;
    out.finish()?;
    println!("{}", serde_json::to_string_pretty(&result)?);
    Ok(EXIT_OK)
}

pub fn cmd_levy(a: &LevyArgs, dir: PathBuf, seed: u64) -> Result<i32> {
    let kind = match a.kind {
        KindArg::Gaussian => NoiseKind::GaussianWhite { sigma: a.sigma },
        KindArg::Cpoisson => NoiseKind::CompoundPoisson { rate: a.rate, jump_mean: a.jump_mean, jump_std: a.jump_std },
        KindArg::Mixed => NoiseKind::Mixed {
            drift: a.drift,
            sigma: a.sigma,
            rate: a.rate,
            jump_mean: a.jump_mean,
            jump_std: a.jump_std,
        },
    };
    let spec = LevyNoiseSpec::new(kind, a.steps)?;
    if a.runs == 0 {
        return Err(Error::InvalidInput("runs must be at least 1".into()));
    }
    let kernel = fractional_kernel(a.steps, a.kernel_hurst, spec.dt);
    let keep = a.keep.unwrap_or(2 * a.steps);
    #[derive(Serialize)]
    struct RunLog {
        acceptance_probability: f64,
        ratio_squared_bound: f64,
        forward_probability: f64,
        flag_attempts: usize,
        half_retries: usize,
        retained: usize,
        cosine_similarity: f64,
    }
    let mut logs = Vec::new();
    let mut first: Option<(Vec<f64>, Vec<f64>)> = None;
    for i in 0..a.runs {
        let mut r = stream(seed, i as u64);
        let noise = sample_levy_noise(&spec, &mut r)?;
        let q = stochastic_integral_quantum_with_noise(&kernel, &noise, keep, &mut r)?;
        let c = stochastic_integral_classical(&kernel, &noise)?;
        logs.push(RunLog {
            acceptance_probability: q.acceptance_probability,
            ratio_squared_bound: q.min_max_ratio.powi(2),
            forward_probability: q.forward_probability,
            flag_attempts: q.flag_attempts,
            half_retries: q.half_retries,
            retained: q.retained,
            cosine_similarity: cosine_similarity(q.state.amplitudes(), &c),
        });
        if first.is_none() {
            first = Some((q.state.amplitudes().iter().map(|z| z.re).collect(), c));
        }
    }
    let (qs, c) = first.expect("at least one run");
    let cn = c.iter().map(|v| v * v).sum::<f64>().sqrt();
    let header: Vec<String> = ["t", "classical_normalized", "quantum_amplitude"].map(String::from).to_vec();
    let rows: Vec<Vec<String>> =
        (0..a.steps).map(|t| vec![t.to_string(), fmt17(if cn > 0.0 { c[t] / cn } else { 0.0 }), fmt17(qs[t])]).collect();
    let mut out = Output::new(dir, "levy", seed, to_value(a))?;
    out.csv("levy_integral.csv", &header, &rows)?;
    #[derive(Serialize)]
    struct Log {
        runs: Vec<RunLog>,
        mean_acceptance: f64,
    }
    let mean_acceptance = logs.iter().map(|l| l.acceptance_probability).sum::<f64>() / logs.len() as f64;
    out.json("levy_log.json", &Log { runs: logs, mean_acceptance })?;
    out.finish()?;
    println!("mean flag acceptance {mean_acceptance:.6} over {} runs", a.runs);
    Ok(EXIT_OK)
}

#[derive(Clone, Debug, Serialize, serde::Deserialize)]
struct QuantileCache {
    q_low: f64,
    q_high: f64,
}

pub fn cmd_tamsd(a: &TamsdArgs, dir: PathBuf, seed: u64) -> Result<i32> {
    let alternative = match a.alternative {
        AltArg::Fbm => Alternative::Fbm { hurst: a.h_alt },
        AltArg::Cpoisson => {
            if !(a.rate > 0.0) {
                return Err(Error::InvalidInput("rate must be positive".into()));
            }
            Alternative::CompoundPoisson { rate: a.rate, jump_std: a.jump_std.unwrap_or((a.diffusion / a.rate).sqrt()) }
        }
    };
    let config = TamsdTestConfig {
        steps: a.steps,
        tau: a.tau,
        diffusion: a.diffusion,
        hurst_null: a.h_test,
        alpha_sig: a.alpha,
        quantile_samples: a.quantile_samples,
        alternative,
        generator: match a.generator {
            GeneratorArg::DaviesHarte => FbmGenerator::DaviesHarte,
            GeneratorArg::Spectral => FbmGenerator::Spectral,
        },
    };
    config.validate()?;
    let eigs = symmetric_eigenvalues(increment_covariance(a.steps, a.tau, 1.0, a.h_test)?);
    let mut out = Output::new(dir, "tamsd", seed, to_value(a))?;

    // quantiles cached by (eigenvalues, alpha, R, seed)
    let mut h = Sha256::new();
    for e in &eigs {
        h.update(e.to_le_bytes());
    }
    h.update(a.alpha.to_le_bytes());
    h.update((a.quantile_samples as u64).to_le_bytes());
    h.update(seed.to_le_bytes());
    let key: String = h.finalize().iter().take(12).map(|b| format!("{b:02x}")).collect();
    let cache_dir = out.dir.join("cache");
    fs::create_dir_all(&cache_dir)?;
    let cache = cache_dir.join(format!("quantiles-{key}.json"));
    let q = match read_cache(&cache) {
        Some(q) => q,
        None => {
            let (q_low, q_high) = generalized_chisq_quantiles(&eigs, a.alpha, a.quantile_samples, &mut stream(seed, 1))?;
            let q = QuantileCache { q_low, q_high };
            fs::write(&cache, serde_json::to_string(&q)?)?;
            q
        }
    };
    let n = (a.steps - a.tau) as f64;
    let band = TamsdBand {
        q_low: q.q_low,
        q_high: q.q_high,
        lower: a.diffusion * q.q_low / n,
        upper: a.diffusion * q.q_high / n,
        eigenvalues: eigs,
    };
    let report = test_power_with_band(&config, band, a.trials, &mut stream(seed, 2))?;
    #[derive(Serialize)]
    struct Summary<'a> {
        power: f64,
        standard_error: f64,
        rejections: usize,
        trials: usize,
        band_lower: f64,
        band_upper: f64,
        config: &'a TamsdTestConfig,
    }
    out.json(
        "tamsd_power.json",
        &Summary {
            power: report.power,
            standard_error: report.standard_error,
            rejections: report.rejections,
            trials: report.trials,
            band_lower: report.band.lower,
            band_upper: report.band.upper,
            config: &config,
        },
    )?;
    let header: Vec<String> = ["level", "quantile", "tamsd_bound"].map(String::from).to_vec();
    let rows = vec![
        vec![fmt17(a.alpha / 2.0), fmt17(report.band.q_low), fmt17(report.band.lower)],
        vec![fmt17(1.0 - a.alpha / 2.0), fmt17(report.band.q_high), fmt17(report.band.upper)],
    ];
    out.csv("tamsd_quantiles.csv", &header, &rows)?;
    out.finish()?;
    println!("power {:.4} (se {:.4}), band [{:.6}, {:.6}]", report.power, report.standard_error, report.band.lower, report.band.upper);
    Ok(EXIT_OK)
}

fn read_cache(p: &Path) -> Option<QuantileCache> {
    serde_json::from_str(&fs::read_to_string(p).ok()?).ok()
}

pub fn cmd_swap(a: &SwapArgs, dir: PathBuf, seed: u64) -> Result<i32> {
    let process = ProcessSpec::new(a.hurst, a.terms, a.steps)?;
    let swap = SwapSpec {
        intervals: a.intervals,
        annualization: a.annualization,
        hurst: a.hurst,
        rate: a.rate,
        span: parse_range(&a.span, "span")?,
        norm_window: a.norm_window.as_deref().map(|s| parse_range(s, "norm window")).transpose()?,
    };
    let opts = SwapOptions { precision_bits: a.precision_bits, ae_bits: a.ae_bits, samples: a.samples, ..Default::default() };
    let r = variance_swap_strike_with(&swap, &process, a.epsilon, a.mode.method(), &opts, &mut seeded(seed))?;
    #[derive(Serialize)]
    struct Report<'a> {
        result: &'a crate::qmc::EstimationResult,
        /// Estimate plus the analytic contribution of frequencies above L
        /// (meaningful without a norm window).
        extrapolated: f64,
        swap: SwapSpec,
        process: ProcessSpec,
    }
    let extrapolated = r.estimate + strike_tail(&swap, a.hurst, a.terms);
    let mut out = Output::new(dir, "swap", seed, to_value(a))?;
    out.json("swap_result.json", &Report { result: &r, extrapolated, swap, process })?;
    out.finish()?;
    println!("strike {:.10} +- {:.3e}; with tail {:.10}", r.estimate, r.error_bound, extrapolated);
    Ok(EXIT_OK)
}

/// Flag map of a config file, for inspection.
pub fn config_map(text: &str) -> Result<BTreeMap<String, String>> {
    let args = parse_config(text)?;
    let mut m = BTreeMap::new();
    let mut it = args.into_iter().peekable();
    while let Some(k) = it.next() {
        let v = match it.peek() {
            Some(n) if !n.starts_with("--") => it.next().unwrap(),
            _ => "true".into(),
        };
        m.insert(k.trim_start_matches("--").to_string(), v);
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_lines() {
        let a = parse_config("hurst = 0.8\n# note\nterms=16  # trailing\n").unwrap();
        assert_eq!(a, vec!["--hurst", "0.8", "--terms", "16"]);
        assert!(parse_config("oops").is_err());
        let m = config_map("precision_bits = 3\n").unwrap();
        assert_eq!(m["precision-bits"], "3");
    }

    #[test]
    fn config_goes_after_subcommand() {
        let dir = std::env::temp_dir().join(format!("qstoch-cfg-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let p = dir.join("c.cfg");
        fs::write(&p, "hurst = 0.8\nterms = 16\n").unwrap();
        let args: Vec<String> = ["qstoch", "--config", p.to_str().unwrap(), "trajectory", "--terms", "32"]
            .map(String::from)
            .to_vec();
        let merged = merge_config_args(args).unwrap();
        let cli = Cli::try_parse_from(merged).unwrap();
        match cli.command {
            Command::Trajectory(t) => {
                assert_eq!(t.hurst, 0.8);
                assert_eq!(t.terms, 32);
            }
            _ => panic!("wrong command"),
        }
        fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn table_matches_known_cells() {
        let t = table1().unwrap();
        let cell = |e: f64, h: f64| t.iter().find(|r| r.epsilon == e && r.hurst == h).unwrap().clone();
        assert_eq!(cell(1e-3, 0.5).terms, 1000);
        assert_eq!(cell(1e-3, 0.65).terms, 204);
        assert_eq!(cell(1e-2, 0.8).terms, 18);
        assert!(t.iter().all(|r| r.deviation < 0.15));
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::Budget("x".into())), EXIT_RESOURCE);
        assert_eq!(exit_code(&Error::Verification("x".into())), EXIT_VERIFY);
        assert_eq!(exit_code(&Error::Divergent("x".into())), EXIT_USAGE);
        assert_eq!(fmt17(0.1), "1.0000000000000001e-1");
    }
}
