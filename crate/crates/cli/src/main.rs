//! `kcurve`: spectra, learning-curve predictions and Monte Carlo checks for
//! kernel ridge regression.

// `!(x >= 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use kcurve::data::{LabelColumn, Normalization};
use kcurve::kernels::KernelDescriptor;
use kcurve::Error;

#[derive(Parser, Debug)]
#[command(name = "kcurve", version, about, propagate_version = true)]
#[command(after_help = "Exit codes: 0 success, 1 numerical failure (or failed --strict check), 2 I/O or validation error.")]
struct Cli {
    /// Cap on worker threads for data-parallel sections [default: all cores]
    #[arg(long, global = true, env = "KCURVE_THREADS")]
    threads: Option<usize>,

    /// More log output on stderr (repeat for more)
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    Spectrum(SpectrumArgs),
    Predict(PredictArgs),
    Verify(VerifyArgs),
    Phase(PhaseArgs),
    Stages(StagesArgs),
    NtkTable(NtkTableArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum KernelFamily {
    /// exp(-|x - x'|^2 / (2 D width^2))
    Rbf,
    /// Rectifier neural tangent kernel
    Ntk,
    /// Rectifier network Gaussian-process kernel
    Nngp,
    /// x . x'
    Linear,
}

#[derive(Args, Debug, Clone)]
struct KernelArgs {
    /// Kernel family
    #[arg(long, value_enum, default_value = "rbf")]
    kernel: KernelFamily,
    /// RBF width omega
    #[arg(long, default_value_t = 0.1)]
    width: f64,
    /// Number of weight layers for ntk/nngp (1 is the linear kernel)
    #[arg(long, default_value_t = 2)]
    depth: u32,
    /// Weight variance sigma_W^2 for ntk/nngp
    #[arg(long, default_value_t = 1.0)]
    weight_var: f64,
    /// Bias variance sigma_b^2 for ntk/nngp
    #[arg(long, default_value_t = 0.0)]
    bias_var: f64,
}

impl KernelArgs {
    fn descriptor(&self) -> KernelDescriptor {
        match self.kernel {
            KernelFamily::Rbf => KernelDescriptor::rbf(self.width),
            KernelFamily::Ntk => KernelDescriptor::ntk(self.depth, self.weight_var, self.bias_var),
            KernelFamily::Nngp => KernelDescriptor::nngp(self.depth, self.weight_var, self.bias_var),
            KernelFamily::Linear => KernelDescriptor::DotProductPoly {
                coefficients: vec![0.0, 1.0],
            },
        }
    }
}

/// Extract a spectrum and target decomposition and write a spectrum document.
///
/// With --data, the kernel Gram matrix of the dataset is diagonalized and
/// every label channel projected onto its eigenvectors (one-hot by default).
/// With --analytic-sphere, per-degree eigenvalues of a dot-product kernel on
/// the unit sphere come from quadrature; the trace beyond --kmax becomes one
/// extra block at degree kmax+1.
#[derive(Args, Debug)]
struct SpectrumArgs {
    #[command(flatten)]
    kernel: KernelArgs,
    /// Dataset file (delimited text, optionally .gz, or a binary matrix)
    #[arg(long, conflicts_with = "analytic_sphere", required_unless_present = "analytic_sphere")]
    data: Option<PathBuf>,
    /// Label column: first, last, none or a zero-based index
    #[arg(long, default_value = "last")]
    labels_col: LabelColumn,
    /// Use the raw label column as a single channel instead of one-hot classes
    #[arg(long)]
    raw_labels: bool,
    /// Input normalization: none, unit_norm or max_abs
    #[arg(long, default_value = "none")]
    normalize: Normalization,
    /// Use the analytic spectrum on the unit sphere instead of a dataset
    #[arg(long)]
    analytic_sphere: bool,
    /// Sphere dimension D (points live on S^{D-1})
    #[arg(long, default_value_t = 25)]
    dim: u32,
    /// Highest resolved degree on the sphere
    #[arg(long, default_value_t = 8)]
    kmax: u32,
    /// Sphere target: a single Gegenbauer mode of this degree with unit
    /// amplitude [default: unit weight on every mode]
    #[arg(long)]
    target_degree: Option<u32>,
    /// Seed for the Gegenbauer target direction
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Label-noise variance stored in the document
    #[arg(long, default_value_t = 0.0)]
    sigma2: f64,
    /// Output spectrum document (JSON)
    #[arg(long)]
    out: PathBuf,
    /// Optional sidecar with the eigenvector matrix (binary f32)
    #[arg(long)]
    eigvecs: Option<PathBuf>,
}

/// Predict a learning curve from a spectrum document.
///
/// Output columns: P, kappa, gamma, eg, bias, variance, diverged, then
/// staged_eg_1..staged_eg_N with --stages N. Multi-channel documents report
/// the sum over channels. Divergent points carry eg = inf and diverged = true.
#[derive(Args, Debug)]
struct PredictArgs {
    /// Spectrum document
    #[arg(long)]
    spectrum: PathBuf,
    /// Ridge lambda
    #[arg(long, default_value_t = 0.0)]
    lambda: f64,
    /// Label-noise variance [default: the document's]
    #[arg(long)]
    sigma2: Option<f64>,
    /// Comma-separated sample sizes
    #[arg(long, value_delimiter = ',', required_unless_present = "p_range")]
    p: Vec<f64>,
    /// Geometric grid LO:HI:COUNT of integer sample sizes
    #[arg(long, conflicts_with = "p")]
    p_range: Option<String>,
    /// Add staged-approximation columns for the first N blocks
    #[arg(long)]
    stages: Option<usize>,
    /// Output CSV [default: stdout]
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Run the Monte Carlo experiment of a plan and align it with theory.
///
/// Output columns: P, eg_theory, eg_emp_mean, eg_emp_std, bias_emp,
/// variance_emp, z_score, failures. The theory comes from --spectrum when
/// given, otherwise from the plan itself.
#[derive(Args, Debug)]
struct VerifyArgs {
    /// Experiment plan (JSON)
    #[arg(long)]
    plan: PathBuf,
    /// Spectrum document overriding the plan's own theory
    #[arg(long)]
    spectrum: Option<PathBuf>,
    /// Exit with status 1 unless at least 95% of points have |z| <= 3
    #[arg(long)]
    strict: bool,
    /// Output CSV [default: stdout]
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Classify band-limited learning curves over a (lambda, sigma2) grid.
///
/// Output columns: lambda, sigma2, classification (monotone, single_peak,
/// dip_then_peak), boundary g(lambda) and optimal_ridge (= sigma2).
#[derive(Args, Debug)]
struct PhaseArgs {
    /// Smallest ridge
    #[arg(long, default_value_t = 0.0)]
    lambda_min: f64,
    /// Largest ridge
    #[arg(long, default_value_t = 2.0)]
    lambda_max: f64,
    /// Ridge grid points
    #[arg(long, default_value_t = 40)]
    lambda_steps: usize,
    /// Smallest noise variance
    #[arg(long, default_value_t = 0.0)]
    sigma2_min: f64,
    /// Largest noise variance
    #[arg(long, default_value_t = 5.0)]
    sigma2_max: f64,
    /// Noise grid points
    #[arg(long, default_value_t = 40)]
    sigma2_steps: usize,
    /// Output CSV [default: stdout]
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Learning-stage table and staged curves.
///
/// Table columns: stage, n_l (block size, the P scale of the stage), eta_bar,
/// weight_bar_sq, eff_noise_sq, eff_ridge, peak_alpha (1 + eff_ridge),
/// peak_p, status. Curve columns: stage, alpha, P, staged_eg, full_eg.
#[derive(Args, Debug)]
struct StagesArgs {
    /// Spectrum document
    #[arg(long, conflicts_with = "power_law", required_unless_present = "power_law")]
    spectrum: Option<PathBuf>,
    /// Channel of a multi-channel document
    #[arg(long, default_value_t = 0)]
    channel: usize,
    /// Power-law spectrum with summed block eigenvalue L^-S and unit weight
    /// per mode
    #[arg(long, value_name = "S")]
    power_law: Option<f64>,
    /// Sphere dimension for --power-law
    #[arg(long, default_value_t = 100)]
    dim: u32,
    /// Number of degrees for --power-law
    #[arg(long, default_value_t = 14)]
    kmax: u32,
    /// Ridge lambda
    #[arg(long, default_value_t = 0.0)]
    lambda: f64,
    /// Label-noise variance [default: the document's, 0 for --power-law]
    #[arg(long)]
    sigma2: Option<f64>,
    /// Number of stages to report
    #[arg(long, default_value_t = 3)]
    stages: usize,
    /// Output stage table CSV [default: stdout]
    #[arg(long)]
    out: Option<PathBuf>,
    /// Output CSV of staged vs full curves
    #[arg(long)]
    curves: Option<PathBuf>,
    /// Smallest alpha = P / n_l on the curve grid
    #[arg(long, default_value_t = 0.1)]
    alpha_min: f64,
    /// Largest alpha on the curve grid
    #[arg(long, default_value_t = 10.0)]
    alpha_max: f64,
    /// Geometric curve grid points
    #[arg(long, default_value_t = 41)]
    alpha_points: usize,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum NetworkKernel {
    Ntk,
    Nngp,
}

/// Per-degree spectra and effective regularization of rectifier network
/// kernels on the sphere.
///
/// Output columns: depth, degree, degeneracy, eta, eta_bar, eff_ridge.
#[derive(Args, Debug)]
struct NtkTableArgs {
    /// Network kernel
    #[arg(long, value_enum, default_value = "ntk")]
    kernel: NetworkKernel,
    /// Sphere dimension D
    #[arg(long, default_value_t = 25)]
    dim: u32,
    /// Comma-separated depths
    #[arg(long, value_delimiter = ',', default_value = "2,3,4")]
    depths: Vec<u32>,
    /// Highest degree
    #[arg(long, default_value_t = 4)]
    lmax: u32,
    /// Ridge lambda
    #[arg(long, default_value_t = 0.0)]
    lambda: f64,
    /// Weight variance sigma_W^2
    #[arg(long, default_value_t = 1.0)]
    weight_var: f64,
    /// Bias variance sigma_b^2
    #[arg(long, default_value_t = 0.0)]
    bias_var: f64,
    /// Output CSV [default: stdout]
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Outcome of a command that ran to completion.
enum Status {
    Ok,
    CheckFailed,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::NoConvergence { .. } | Error::Numerical(_) | Error::Precision(_) => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        2 => log::LevelFilter::Debug,
        _ => log::LevelFilter::Trace,
    };
    env_logger::Builder::new().filter_level(level).parse_env("KCURVE_LOG").init();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("kcurve: cannot set thread count: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match &cli.command {
        Command::Spectrum(a) => commands::spectrum(a),
        Command::Predict(a) => commands::predict(a),
        Command::Verify(a) => commands::verify(a),
        Command::Phase(a) => commands::phase(a),
        Command::Stages(a) => commands::stages(a),
        Command::NtkTable(a) => commands::ntk_table(a),
    };
    match result {
        Ok(Status::Ok) => ExitCode::SUCCESS,
        Ok(Status::CheckFailed) => ExitCode::from(1),
        Err(e) => {
            eprintln!("kcurve: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
