mod commands;
mod manifest;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub const EXIT_OK: u8 = 0;
pub const EXIT_INVALID: u8 = 2;
pub const EXIT_VERIFY_FAIL: u8 = 3;
pub const EXIT_RESOURCE: u8 = 4;
pub const EXIT_USAGE: u8 = 64;

/// Concentration constants, simulation and exact oracles for binary PCA.
#[derive(Parser, Debug)]
#[command(name = "pca-gcb", version)]
pub struct Cli {
    /// Worker threads; falls back to PCA_GCB_THREADS, then to all cores.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Output format. `simulate` also accepts `trajectory` (CSV) and `stats` (JSON).
    #[arg(long, global = true, value_enum, default_value_t = Emit::Json)]
    pub emit: Emit,
    /// Output file; standard output when absent.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Emit {
    Json,
    Csv,
    Trajectory,
    Stats,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Rule files: Fourier expansion, inspection and built-in models.
    Rule {
        #[command(subcommand)]
        cmd: RuleCmd,
    },
    /// Ledger of concentration constants.
    Constants(ConstantsArgs),
    /// Monte Carlo simulation on a torus.
    Simulate(SimulateArgs),
    /// Exact oracles on small tori.
    Exact {
        #[command(subcommand)]
        cmd: ExactCmd,
    },
    /// Certification reports.
    Verify {
        #[command(subcommand)]
        cmd: VerifyCmd,
    },
}

#[derive(Args, Debug, Clone)]
#[group(required = true, multiple = false)]
pub struct RuleSource {
    /// Rule file (Fourier coefficients).
    #[arg(long)]
    pub rule: Option<PathBuf>,
    /// Built-in model, e.g. `noisy_majority3:0.45` or `independent_flip:0.1,0.5`.
    #[arg(long)]
    pub builtin: Option<String>,
}

#[derive(Args, Debug, Clone)]
#[group(required = false, multiple = false)]
pub struct OptRuleSource {
    /// Rule file; kappa is taken from it.
    #[arg(long)]
    pub rule: Option<PathBuf>,
    /// Built-in model; kappa is taken from it.
    #[arg(long)]
    pub builtin: Option<String>,
}

#[derive(Subcommand, Debug)]
pub enum RuleCmd {
    /// Fourier coefficients of a probability table.
    Expand {
        #[arg(long)]
        table: PathBuf,
    },
    /// Coefficients, admissibility, psi, kappa and the probability table.
    Inspect {
        #[command(flatten)]
        source: RuleSource,
        /// Largest support evaluated exactly when computing max |h|.
        #[arg(long, default_value_t = 20)]
        exact_threshold: usize,
    },
    /// Writes the rule file of a built-in model.
    Builtin {
        name: String,
        #[arg(allow_negative_numbers = true)]
        params: Vec<f64>,
    },
}

#[derive(Args, Debug)]
pub struct ConstantsArgs {
    /// One-step product constant.
    #[arg(long, default_value_t = pca_gcb::constants::DEFAULT_PRODUCT_C)]
    pub c: f64,
    /// Constant of the initial measure.
    #[arg(long = "C0", default_value_t = pca_gcb::constants::DEFAULT_PRODUCT_C)]
    pub c0: f64,
    /// Contraction coefficient, when no rule is given.
    #[arg(long)]
    pub kappa: Option<f64>,
    #[command(flatten)]
    pub source: OptRuleSource,
    /// Largest n of the C_n table.
    #[arg(long, default_value_t = 50)]
    pub n: u64,
    /// Size of the space-time matrix (defaults to min(n, 200)).
    #[arg(long)]
    pub matrix_n: Option<usize>,
    /// Cube radius of the relaxation bounds (needs a rule).
    #[arg(long, default_value_t = 1)]
    pub relax_n: u64,
    /// Largest k of the relaxation bounds.
    #[arg(long, default_value_t = 10)]
    pub relax_k: u64,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub source: RuleSource,
    /// Torus sides, e.g. `64` or `32x32`.
    #[arg(long)]
    pub torus: String,
    /// `all_plus`, `all_minus` or `product:p`.
    #[arg(long, default_value = "all_minus")]
    pub init: String,
    #[arg(long, default_value_t = 10)]
    pub steps: u64,
    #[arg(long, default_value_t = 1)]
    pub replicas: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Local function file, optionally anchored: `f.json@3` or `f.json@1,2`.
    #[arg(long)]
    pub observable: Vec<String>,
}

#[derive(Args, Debug, Clone)]
pub struct MeasureArgs {
    /// Use the stationary measure.
    #[arg(long, conflicts_with = "steps")]
    pub stationary: bool,
    /// Initial law evolved for `--steps` steps.
    #[arg(long, default_value = "product:0.5")]
    pub init: String,
    #[arg(long, default_value_t = 0)]
    pub steps: u64,
    /// Residual of the exact stationary solver.
    #[arg(long, default_value_t = pca_gcb::exact::DEFAULT_STATIONARY_TOL)]
    pub tol: f64,
    /// Steps simulated to approximate the stationary measure with `--source mc`.
    #[arg(long, default_value_t = 200)]
    pub burn_in: u64,
}

#[derive(Subcommand, Debug)]
pub enum ExactCmd {
    /// Stationary measure by power iteration.
    Stationary {
        #[command(flatten)]
        source: RuleSource,
        #[arg(long)]
        torus: String,
        #[arg(long, default_value_t = pca_gcb::exact::DEFAULT_STATIONARY_TOL)]
        tol: f64,
        #[arg(long, default_value_t = pca_gcb::exact::DEFAULT_MAX_ITER)]
        max_iter: usize,
        /// Include the full probability vector.
        #[arg(long)]
        probs: bool,
    },
    /// Centered log-MGF of observables under an exact measure.
    Mgf {
        #[command(flatten)]
        source: RuleSource,
        #[arg(long)]
        torus: String,
        #[command(flatten)]
        measure: MeasureArgs,
        #[arg(long)]
        observable: Vec<String>,
        /// Comma-separated lambda values.
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        lambda: Vec<f64>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SourceArg {
    Exact,
    Mc,
}

#[derive(Args, Debug, Clone)]
pub struct VerifyCommon {
    #[command(flatten)]
    pub source: RuleSource,
    #[arg(long)]
    pub torus: String,
    /// GCB constant under test; defaults to the ledger value for the measure.
    #[arg(long = "C")]
    pub big_c: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Per-point CSV written next to the report.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SampleArgs {
    #[arg(long = "source", value_enum, default_value_t = SourceArg::Exact)]
    pub source_kind: SourceArg,
    #[arg(long, default_value_t = 100_000)]
    pub replicas: u64,
    #[arg(long, default_value_t = pca_gcb::verify::DEFAULT_BOOTSTRAP)]
    pub bootstrap: usize,
    #[arg(long)]
    pub observable: Vec<String>,
}

#[derive(Subcommand, Debug)]
pub enum VerifyCmd {
    /// Log-MGF against (C/2) lambda^2 ||delta f||_2^2.
    Mgf {
        #[command(flatten)]
        common: VerifyCommon,
        #[command(flatten)]
        measure: MeasureArgs,
        #[command(flatten)]
        samples: SampleArgs,
        #[arg(long, default_value_t = -4.0, allow_negative_numbers = true)]
        lambda_min: f64,
        #[arg(long, default_value_t = 4.0, allow_negative_numbers = true)]
        lambda_max: f64,
        #[arg(long, default_value_t = 0.25)]
        lambda_step: f64,
    },
    /// Upper tails against exp(-u^2 / (2 C ||delta f||_2^2)).
    Tail {
        #[command(flatten)]
        common: VerifyCommon,
        #[command(flatten)]
        measure: MeasureArgs,
        #[command(flatten)]
        samples: SampleArgs,
        #[arg(long, value_delimiter = ',', default_value = "0.5,1,1.5,2,3")]
        u: Vec<f64>,
    },
    /// Exact relaxation trace against the relaxation bounds.
    Relax {
        #[command(flatten)]
        common: VerifyCommon,
        #[arg(long, default_value = "all_minus")]
        init: String,
        #[arg(long, default_value_t = 30)]
        k_max: usize,
        /// Radius n of the cube C_n where distances are measured.
        #[arg(long, default_value_t = 1)]
        radius: u64,
        /// Finite-energy constant; taken from the rule when absent.
        #[arg(long)]
        rho: Option<f64>,
    },
    /// Relative entropy against distance lower bounds on growing cubes.
    Entropy {
        #[command(flatten)]
        common: VerifyCommon,
        /// Law compared with the stationary measure.
        #[arg(long, default_value = "all_plus")]
        nu: String,
        #[arg(long, default_value_t = 0)]
        nu_steps: u64,
        #[arg(long, default_value_t = 2)]
        max_radius: u64,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let code = match commands::run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    ExitCode::from(code)
}
