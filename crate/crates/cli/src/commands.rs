use std::fmt;
use std::io;
use std::path::{Path, PathBuf};

use pca_gcb::constants::{self, ConstantLedger, RelaxationBound};
use pca_gcb::engine::{BoundObservable, EngineError, InitialLaw, SeedSpec, Simulator, Torus};
use pca_gcb::exact::{self, exact_evolution, exact_mgf, exact_stationary, ExactDistribution};
use pca_gcb::io::{format_f64, read_local_function, read_prob_table, read_rule, RuleFile};
use pca_gcb::rule::{builtin, walsh_expand, FourierRule};
use pca_gcb::verify::{
    self, certify_gcb, check_tail, cube_sites, entropy_dbar_diagnostic, relaxation_trace,
    CorpusEntry, McPolicy, MeasureSource, RelaxationConfig,
};
use pca_gcb::{LocalFunction, Site};
use serde::Serialize;

use crate::manifest::ManifestBuilder;
use crate::output::{self, Table};
use crate::{
    Cli, Command, ConstantsArgs, Emit, ExactCmd, MeasureArgs, RuleCmd, RuleSource, SampleArgs,
    SimulateArgs, SourceArg, VerifyCmd, VerifyCommon, EXIT_INVALID, EXIT_OK, EXIT_RESOURCE,
    EXIT_USAGE, EXIT_VERIFY_FAIL,
};

/// Largest rule support evaluated exactly by admissibility checks.
const EXACT_THRESHOLD: usize = 20;

#[derive(Debug)]
pub enum CliError {
    Core(pca_gcb::Error),
    Usage(String),
    Output(io::Error),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Output(e) => write!(f, "writing output: {e}"),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(e) if e.is_resource_limit() => EXIT_RESOURCE,
            CliError::Core(_) | CliError::Output(_) => EXIT_INVALID,
            CliError::Usage(_) => EXIT_USAGE,
        }
    }
}

macro_rules! core_error {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Core(e.into())
            }
        }
    )*};
}

core_error!(
    pca_gcb::Error,
    pca_gcb::rule::RuleError,
    pca_gcb::localfn::LocalFnError,
    pca_gcb::constants::ConstantsError,
    pca_gcb::engine::EngineError,
    pca_gcb::exact::ExactError,
    pca_gcb::verify::VerifyError,
    pca_gcb::io::IoError
);

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Output(e)
    }
}

type Res<T> = Result<T, CliError>;

struct Ctx {
    emit: Emit,
    out: Option<PathBuf>,
    manifest: ManifestBuilder,
}

impl Ctx {
    fn json<T: Serialize>(&self, result: &T) -> Res<()> {
        Ok(output::json(
            self.out.as_deref(),
            &self.manifest.finish(),
            result,
        )?)
    }

    fn csv(&self, table: &Table) -> Res<()> {
        Ok(output::csv(
            self.out.as_deref(),
            &self.manifest.finish(),
            table,
        )?)
    }

    /// JSON or CSV depending on `--emit`, plus an optional side CSV.
    fn emit<T: Serialize>(
        &self,
        result: &T,
        table: impl Fn() -> Table,
        side: Option<&Path>,
    ) -> Res<()> {
        match self.emit {
            Emit::Csv => self.csv(&table())?,
            _ => self.json(result)?,
        }
        if let Some(p) = side {
            output::csv(Some(p), &self.manifest.finish(), &table())?;
        }
        Ok(())
    }
}

fn subcommand_name(cmd: &Command) -> String {
    match cmd {
        Command::Rule { cmd } => match cmd {
            RuleCmd::Expand { .. } => "rule expand",
            RuleCmd::Inspect { .. } => "rule inspect",
            RuleCmd::Builtin { .. } => "rule builtin",
        },
        Command::Constants(_) => "constants",
        Command::Simulate(_) => "simulate",
        Command::Exact { cmd } => match cmd {
            ExactCmd::Stationary { .. } => "exact stationary",
            ExactCmd::Mgf { .. } => "exact mgf",
        },
        Command::Verify { cmd } => match cmd {
            VerifyCmd::Mgf { .. } => "verify mgf",
            VerifyCmd::Tail { .. } => "verify tail",
            VerifyCmd::Relax { .. } => "verify relax",
            VerifyCmd::Entropy { .. } => "verify entropy",
        },
    }
    .to_string()
}

fn thread_count(flag: Option<usize>) -> Res<usize> {
    if let Some(n) = flag {
        return Ok(n);
    }
    match std::env::var("PCA_GCB_THREADS") {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| CliError::Usage(format!("PCA_GCB_THREADS={v:?} is not a thread count"))),
        Err(_) => Ok(0),
    }
}

pub fn run(cli: Cli) -> Res<u8> {
    let threads = thread_count(cli.threads)?;
    if threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| CliError::Core(EngineError::ThreadPool(e.to_string()).into()))?;
    }
    let mut ctx = Ctx {
        emit: cli.emit,
        out: cli.out,
        manifest: ManifestBuilder::new(
            subcommand_name(&cli.command),
            std::env::args().skip(1).collect(),
            rayon::current_num_threads(),
        ),
    };
    if matches!(ctx.emit, Emit::Trajectory | Emit::Stats)
        && !matches!(cli.command, Command::Simulate(_))
    {
        return Err(CliError::Usage(
            "--emit trajectory|stats applies to simulate only".into(),
        ));
    }
    match cli.command {
        Command::Rule { cmd } => rule_cmd(&mut ctx, cmd),
        Command::Constants(args) => constants_cmd(&mut ctx, args),
        Command::Simulate(args) => simulate_cmd(&mut ctx, args),
        Command::Exact { cmd } => exact_cmd(&mut ctx, cmd),
        Command::Verify { cmd } => verify_cmd(&mut ctx, cmd),
    }
}

fn parse_builtin(spec: &str) -> Res<FourierRule> {
    let (name, params) = match spec.split_once(':') {
        Some((n, p)) => (n, p),
        None => (spec, ""),
    };
    let params = params
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| CliError::Usage(format!("bad parameter {s:?} in --builtin {spec:?}")))
        })
        .collect::<Res<Vec<_>>>()?;
    Ok(builtin(name, &params)?)
}

fn load_rule(
    ctx: &mut Ctx,
    rule: Option<&PathBuf>,
    builtin_spec: Option<&String>,
) -> Res<Option<FourierRule>> {
    match (rule, builtin_spec) {
        (Some(p), _) => {
            ctx.manifest.input(p);
            Ok(Some(read_rule(p)?))
        }
        (None, Some(s)) => Ok(Some(parse_builtin(s)?)),
        (None, None) => Ok(None),
    }
}

fn require_rule(ctx: &mut Ctx, src: &RuleSource) -> Res<FourierRule> {
    load_rule(ctx, src.rule.as_ref(), src.builtin.as_ref())?
        .ok_or_else(|| CliError::Usage("one of --rule or --builtin is required".into()))
}

fn check_admissible(rule: &FourierRule) -> Res<()> {
    let report = rule.validate(EXACT_THRESHOLD);
    if !report.admissible {
        return Err(EngineError::Inadmissible {
            h_max: report.h_max,
        }
        .into());
    }
    Ok(())
}

fn parse_observable(ctx: &mut Ctx, spec: &str, dimension: usize) -> Res<CorpusEntry> {
    let (path, anchor) = match spec.rsplit_once('@') {
        Some((p, a)) => {
            let coords = a
                .split(',')
                .map(|c| c.trim().parse::<i64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|_| CliError::Usage(format!("bad anchor in observable {spec:?}")))?;
            (p, Site::new(coords))
        }
        None => (spec, Site::origin(dimension)),
    };
    if anchor.dimension() != dimension {
        return Err(CliError::Usage(format!(
            "anchor of {spec:?} has dimension {}, expected {dimension}",
            anchor.dimension()
        )));
    }
    let path = Path::new(path);
    ctx.manifest.input(path);
    let f = read_local_function(path)?;
    Ok(CorpusEntry {
        name: spec.to_string(),
        f,
        anchor,
    })
}

fn default_corpus(dimension: usize) -> Res<Vec<CorpusEntry>> {
    if dimension == 1 {
        return Ok(verify::standard_corpus());
    }
    let o = Site::origin(dimension);
    let mut e1 = vec![0; dimension];
    e1[0] = 1;
    let e1 = Site::new(e1);
    Ok(vec![
        CorpusEntry::new("sigma_0", LocalFunction::spin(o.clone())),
        CorpusEntry::new(
            "sigma_0*sigma_e1",
            LocalFunction::product(dimension, vec![o.clone(), e1.clone()])?,
        ),
        CorpusEntry::new(
            "plus_indicator_2",
            LocalFunction::all_plus_indicator(dimension, vec![o, e1])?,
        ),
    ])
}

fn corpus(ctx: &mut Ctx, specs: &[String], dimension: usize) -> Res<Vec<CorpusEntry>> {
    if specs.is_empty() {
        return default_corpus(dimension);
    }
    specs
        .iter()
        .map(|s| parse_observable(ctx, s, dimension))
        .collect()
}

fn f(v: f64) -> String {
    format_f64(v)
}

fn opt(v: Option<f64>) -> String {
    v.map(format_f64).unwrap_or_default()
}

// ---------------------------------------------------------------- rule

#[derive(Serialize)]
struct PsiEntry {
    site: Vec<i64>,
    value: f64,
}

#[derive(Serialize)]
struct RuleInspection {
    rule: RuleFile,
    validation: pca_gcb::ValidationReport,
    rho: f64,
    psi: Vec<PsiEntry>,
    kappa: f64,
    propagation_speed: u64,
    support: Vec<Vec<i64>>,
    /// `P(+1 | eta)` over the support, bit `i` = spin of `support[i]`.
    probs: Option<Vec<f64>>,
}

fn rule_cmd(ctx: &mut Ctx, cmd: RuleCmd) -> Res<u8> {
    match cmd {
        RuleCmd::Expand { table } => {
            ctx.manifest.input(&table);
            let t = read_prob_table(&table)?;
            let rule = walsh_expand(&t);
            let file = RuleFile::from_rule(&rule);
            ctx.emit(&file, || coeff_table(&file), None)?;
            Ok(EXIT_OK)
        }
        RuleCmd::Builtin { name, params } => {
            let rule = builtin(&name, &params)?;
            let file = RuleFile::from_rule(&rule);
            ctx.emit(&file, || coeff_table(&file), None)?;
            Ok(EXIT_OK)
        }
        RuleCmd::Inspect {
            source,
            exact_threshold,
        } => {
            let rule = require_rule(ctx, &source)?;
            let validation = rule.validate(exact_threshold);
            let probs = rule.to_prob_table().ok().map(|t| t.probs().to_vec());
            let report = RuleInspection {
                rule: RuleFile::from_rule(&rule),
                rho: validation.finite_energy_rho(),
                validation,
                psi: rule
                    .psi()
                    .values()
                    .iter()
                    .map(|(s, v)| PsiEntry {
                        site: s.coords().to_vec(),
                        value: *v,
                    })
                    .collect(),
                kappa: rule.kappa(),
                propagation_speed: rule.propagation_speed(),
                support: rule.support().iter().map(|s| s.coords().to_vec()).collect(),
                probs,
            };
            ctx.emit(
                &report,
                || {
                    let mut t = Table::new(vec!["index", "prob_plus"]);
                    for (i, p) in report.probs.iter().flatten().enumerate() {
                        t.push(vec![i.to_string(), f(*p)]);
                    }
                    t
                },
                None,
            )?;
            Ok(if validation.admissible {
                EXIT_OK
            } else {
                EXIT_INVALID
            })
        }
    }
}

fn coeff_table(file: &RuleFile) -> Table {
    let mut t = Table::new(vec!["A", "r"]);
    for e in &file.coeffs {
        let a: Vec<String> =
            e.a.iter()
                .map(|c| c.iter().map(i64::to_string).collect::<Vec<_>>().join(" "))
                .collect();
        t.push(vec![format!("\"{}\"", a.join(";")), f(e.r)]);
    }
    t
}

// ---------------------------------------------------------------- constants

#[derive(Serialize)]
struct ConstantsReport {
    ledger: ConstantLedger,
    spacetime_matrix: Option<MatrixSummary>,
    relaxation: Vec<RelaxationBound>,
    relaxation_note: Option<String>,
}

#[derive(Serialize)]
struct MatrixSummary {
    n: usize,
    norm_inf: f64,
    norm_1: f64,
    norm_2_exact: f64,
    norm_2_exact_sq: f64,
    norm_2_bound: f64,
    c_prime: Option<f64>,
    iterations: usize,
}

fn constants_cmd(ctx: &mut Ctx, args: ConstantsArgs) -> Res<u8> {
    let rule = load_rule(ctx, args.source.rule.as_ref(), args.source.builtin.as_ref())?;
    let kappa = match (&rule, args.kappa) {
        (Some(_), Some(_)) => {
            return Err(CliError::Usage(
                "give either --kappa or a rule, not both".into(),
            ))
        }
        (Some(r), None) => {
            check_admissible(r)?;
            r.kappa()
        }
        (None, Some(k)) => k,
        (None, None) => {
            return Err(CliError::Usage(
                "one of --kappa, --rule or --builtin is required".into(),
            ))
        }
    };
    let ledger = ConstantLedger::new(args.c, args.c0, kappa, args.n)?;
    let matrix_n = args.matrix_n.unwrap_or(args.n.min(200) as usize);
    let spacetime_matrix = if kappa < 1.0 {
        let m = constants::spacetime_matrix(matrix_n, args.c, args.c0, kappa)?;
        Some(MatrixSummary {
            n: m.n,
            norm_inf: m.norm_inf,
            norm_1: m.norm_1,
            norm_2_exact: m.norm_2_exact,
            norm_2_exact_sq: m.norm_2_exact * m.norm_2_exact,
            norm_2_bound: m.norm_2_bound,
            c_prime: ledger.c_prime,
            iterations: m.iterations,
        })
    } else {
        None
    };
    let mut relaxation = Vec::new();
    let mut relaxation_note = None;
    if let Some(r) = &rule {
        match ledger.c_inf {
            None => {
                relaxation_note =
                    Some("kappa >= 1: no stationary constant, relaxation bounds skipped".into())
            }
            Some(c_inf) => {
                for k in 0..=args.relax_k {
                    match RelaxationBound::for_rule(r, c_inf, args.relax_n, k) {
                        Ok(b) => relaxation.push(b),
                        Err(e @ constants::ConstantsError::InfiniteRho) => {
                            relaxation_note = Some(e.to_string());
                            break;
                        }
                        Err(e) => return Err(e.into()),
                    }
                }
            }
        }
    }
    let report = ConstantsReport {
        ledger,
        spacetime_matrix,
        relaxation,
        relaxation_note,
    };
    ctx.emit(
        &report,
        || {
            let mut t = Table::new(vec!["n", "C_n"]);
            for (n, c) in report.ledger.c_n.iter().enumerate() {
                t.push(vec![n.to_string(), f(*c)]);
            }
            t
        },
        None,
    )?;
    Ok(EXIT_OK)
}

// ---------------------------------------------------------------- simulate

#[derive(Serialize)]
struct SimulateSummary {
    torus: String,
    init: String,
    steps: u64,
    replicas: u64,
    observables: Vec<String>,
    stats: Vec<pca_gcb::engine::ObservableStats>,
}

fn simulate_cmd(ctx: &mut Ctx, args: SimulateArgs) -> Res<u8> {
    let rule = require_rule(ctx, &args.source)?;
    let torus = Torus::parse(&args.torus)?;
    let law = InitialLaw::parse(&args.init)?;
    ctx.manifest.seed(args.seed);
    let sim = Simulator::new(&rule, torus.clone(), SeedSpec::new(args.seed))?;
    let entries = if args.observable.is_empty() {
        vec![CorpusEntry::new(
            "sigma_0",
            LocalFunction::spin(Site::origin(rule.dimension())),
        )]
    } else {
        corpus(ctx, &args.observable, rule.dimension())?
    };
    let bound = entries
        .iter()
        .map(|e| BoundObservable::new(&e.f, &torus, &e.anchor))
        .collect::<Result<Vec<_>, _>>()?;
    let ens = sim.run(law, args.steps, args.replicas)?;
    match ctx.emit {
        Emit::Trajectory | Emit::Csv => {
            use rayon::prelude::*;
            let mut t = Table::new(vec!["replica", "step", "observable", "value"]);
            let rows: Vec<Vec<Vec<String>>> = (0..args.replicas)
                .into_par_iter()
                .map(|r| {
                    let mut rows = Vec::new();
                    for (step, c) in ens.trajectory(r)? {
                        for (j, o) in bound.iter().enumerate() {
                            rows.push(vec![
                                r.to_string(),
                                step.to_string(),
                                j.to_string(),
                                f(o.eval(&c)),
                            ]);
                        }
                    }
                    Ok(rows)
                })
                .collect::<Result<_, EngineError>>()?;
            t.rows = rows.into_iter().flatten().collect();
            ctx.csv(&t)?;
        }
        Emit::Json | Emit::Stats => {
            let summary = SimulateSummary {
                torus: torus.to_string(),
                init: args.init.clone(),
                steps: args.steps,
                replicas: args.replicas,
                observables: entries.iter().map(|e| e.name.clone()).collect(),
                stats: ens.stats(&bound)?,
            };
            ctx.json(&summary)?;
        }
    }
    Ok(EXIT_OK)
}

// ---------------------------------------------------------------- exact

fn exact_measure(
    rule: &FourierRule,
    torus: &Torus,
    m: &MeasureArgs,
) -> Res<(ExactDistribution, String)> {
    if m.stationary {
        let (mu, rep) = exact_stationary(rule, torus, m.tol, exact::DEFAULT_MAX_ITER)?;
        Ok((
            mu,
            format!(
                "stationary (iterations {}, residual {:e})",
                rep.iterations, rep.residual
            ),
        ))
    } else {
        let law = InitialLaw::parse(&m.init)?;
        let nu = ExactDistribution::from_law(torus, &law)?;
        let path = exact_evolution(&nu, rule, m.steps as usize)?;
        Ok((
            path.into_iter().last().expect("evolution includes time 0"),
            format!("{} after {} steps", m.init, m.steps),
        ))
    }
}

#[derive(Serialize)]
struct StationaryOutput {
    torus: String,
    iterations: usize,
    residual: f64,
    /// Expectation of each spin, in torus index order.
    magnetization: Vec<f64>,
    probs: Option<Vec<f64>>,
}

#[derive(Serialize)]
struct MgfRow {
    observable: String,
    lambda: f64,
    log_mgf: f64,
    delta_l2_sq: f64,
}

#[derive(Serialize)]
struct MgfOutput {
    measure: String,
    rows: Vec<MgfRow>,
}

fn exact_cmd(ctx: &mut Ctx, cmd: ExactCmd) -> Res<u8> {
    match cmd {
        ExactCmd::Stationary {
            source,
            torus,
            tol,
            max_iter,
            probs,
        } => {
            let rule = require_rule(ctx, &source)?;
            check_admissible(&rule)?;
            let torus = Torus::parse(&torus)?;
            let (mu, rep) = exact_stationary(&rule, &torus, tol, max_iter)?;
            let magnetization = (0..torus.len())
                .map(|i| {
                    let s = torus.site(i);
                    mu.expectation(&LocalFunction::spin(Site::origin(torus.dimension())), &s)
                })
                .collect::<Result<Vec<_>, _>>()?;
            let out = StationaryOutput {
                torus: torus.to_string(),
                iterations: rep.iterations,
                residual: rep.residual,
                magnetization,
                probs: probs.then(|| mu.probs().to_vec()),
            };
            ctx.emit(
                &out,
                || {
                    let mut t = Table::new(vec!["index", "prob"]);
                    for (i, p) in mu.probs().iter().enumerate() {
                        t.push(vec![i.to_string(), f(*p)]);
                    }
                    t
                },
                None,
            )?;
            Ok(EXIT_OK)
        }
        ExactCmd::Mgf {
            source,
            torus,
            measure,
            observable,
            lambda,
        } => {
            let rule = require_rule(ctx, &source)?;
            check_admissible(&rule)?;
            let torus = Torus::parse(&torus)?;
            let entries = corpus(ctx, &observable, rule.dimension())?;
            let (mu, label) = exact_measure(&rule, &torus, &measure)?;
            let lambdas = if lambda.is_empty() {
                verify::default_lambda_grid()
            } else {
                lambda
            };
            let mut rows = Vec::new();
            for e in &entries {
                let d2 = e.f.oscillation().norm_sq();
                for &l in &lambdas {
                    rows.push(MgfRow {
                        observable: e.name.clone(),
                        lambda: l,
                        log_mgf: exact_mgf(&mu, &e.f, &e.anchor, l)?,
                        delta_l2_sq: d2,
                    });
                }
            }
            let out = MgfOutput {
                measure: label,
                rows,
            };
            ctx.emit(
                &out,
                || {
                    let mut t = Table::new(vec!["observable", "lambda", "log_mgf", "delta_l2_sq"]);
                    for r in &out.rows {
                        t.push(vec![
                            r.observable.clone(),
                            f(r.lambda),
                            f(r.log_mgf),
                            f(r.delta_l2_sq),
                        ]);
                    }
                    t
                },
                None,
            )?;
            Ok(EXIT_OK)
        }
    }
}

// ---------------------------------------------------------------- verify

/// Ledger constant of the measure: `C_inf` for the stationary measure,
/// `C_k` from the product constant otherwise.
fn default_c(rule: &FourierRule, m: &MeasureArgs) -> Res<f64> {
    let c = constants::DEFAULT_PRODUCT_C;
    if m.stationary {
        Ok(constants::gcb_stationary(c, rule.kappa())?)
    } else {
        Ok(constants::gcb_after_n(c, c, rule.kappa(), m.steps)?)
    }
}

fn stationary_c(rule: &FourierRule) -> Res<f64> {
    Ok(constants::gcb_stationary(
        constants::DEFAULT_PRODUCT_C,
        rule.kappa(),
    )?)
}

/// Monte Carlo samples of each corpus entry under the measure.
fn mc_samples(
    rule: &FourierRule,
    torus: &Torus,
    m: &MeasureArgs,
    s: &SampleArgs,
    seed: u64,
    entries: &[CorpusEntry],
) -> Res<Vec<Vec<f64>>> {
    let sim = Simulator::new(rule, torus.clone(), SeedSpec::new(seed))?;
    let (law, steps) = if m.stationary {
        (InitialLaw::parse(&m.init)?, m.burn_in)
    } else {
        (InitialLaw::parse(&m.init)?, m.steps)
    };
    let bound = entries
        .iter()
        .map(|e| BoundObservable::new(&e.f, torus, &e.anchor))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(sim.run(law, steps, s.replicas)?.observe(&bound)?)
}

fn verify_cmd(ctx: &mut Ctx, cmd: VerifyCmd) -> Res<u8> {
    match cmd {
        VerifyCmd::Mgf {
            common,
            measure,
            samples,
            lambda_min,
            lambda_max,
            lambda_step,
        } => {
            let (rule, torus) = verify_setup(ctx, &common)?;
            if !(lambda_step > 0.0) || !(lambda_min <= lambda_max) {
                return Err(CliError::Usage(
                    "need lambda-min <= lambda-max and lambda-step > 0".into(),
                ));
            }
            let count = ((lambda_max - lambda_min) / lambda_step + 1e-9).floor() as usize + 1;
            let lambdas: Vec<f64> = (0..count)
                .map(|i| lambda_min + i as f64 * lambda_step)
                .collect();
            let entries = corpus(ctx, &samples.observable, rule.dimension())?;
            let big_c = match common.big_c {
                Some(c) => c,
                None => default_c(&rule, &measure)?,
            };
            let policy = McPolicy {
                bootstrap: samples.bootstrap,
                seed: common.seed,
                ..McPolicy::default()
            };
            let cert = match samples.source_kind {
                SourceArg::Exact => {
                    let (mu, _) = exact_measure(&rule, &torus, &measure)?;
                    certify_gcb(
                        MeasureSource::Exact(&mu),
                        big_c,
                        &entries,
                        &lambdas,
                        &policy,
                    )?
                }
                SourceArg::Mc => {
                    let data =
                        mc_samples(&rule, &torus, &measure, &samples, common.seed, &entries)?;
                    certify_gcb(
                        MeasureSource::Samples(&data),
                        big_c,
                        &entries,
                        &lambdas,
                        &policy,
                    )?
                }
            };
            ctx.emit(
                &cert,
                || {
                    let mut t = Table::new(vec![
                        "function",
                        "lambda",
                        "observed",
                        "bound",
                        "slack",
                        "std_error",
                        "skipped",
                        "violated",
                    ]);
                    for p in &cert.points {
                        t.push(vec![
                            cert.corpus[p.function].name.clone(),
                            f(p.lambda),
                            f(p.observed),
                            f(p.bound),
                            f(p.slack),
                            opt(p.std_error),
                            p.skipped.to_string(),
                            p.violated.to_string(),
                        ]);
                    }
                    t
                },
                common.csv.as_deref(),
            )?;
            Ok(if cert.passed {
                EXIT_OK
            } else {
                EXIT_VERIFY_FAIL
            })
        }
        VerifyCmd::Tail {
            common,
            measure,
            samples,
            u,
        } => {
            let (rule, torus) = verify_setup(ctx, &common)?;
            let entries = corpus(ctx, &samples.observable, rule.dimension())?;
            let big_c = match common.big_c {
                Some(c) => c,
                None => default_c(&rule, &measure)?,
            };
            let policy = McPolicy {
                seed: common.seed,
                ..McPolicy::default()
            };
            let reports = match samples.source_kind {
                SourceArg::Exact => {
                    let (mu, _) = exact_measure(&rule, &torus, &measure)?;
                    entries
                        .iter()
                        .map(|e| check_tail(MeasureSource::Exact(&mu), big_c, e, &u, &policy))
                        .collect::<Result<Vec<_>, _>>()?
                }
                SourceArg::Mc => {
                    let data =
                        mc_samples(&rule, &torus, &measure, &samples, common.seed, &entries)?;
                    entries
                        .iter()
                        .zip(data)
                        .map(|(e, d)| {
                            check_tail(MeasureSource::Samples(&[d]), big_c, e, &u, &policy)
                        })
                        .collect::<Result<Vec<_>, _>>()?
                }
            };
            let passed = reports.iter().all(|r| r.passed);
            ctx.emit(
                &reports,
                || {
                    let mut t = Table::new(vec![
                        "function",
                        "u",
                        "observed",
                        "bound",
                        "std_error",
                        "violated",
                    ]);
                    for r in &reports {
                        for p in &r.points {
                            t.push(vec![
                                r.function.clone(),
                                f(p.u),
                                f(p.observed),
                                f(p.bound),
                                opt(p.std_error),
                                p.violated.to_string(),
                            ]);
                        }
                    }
                    t
                },
                common.csv.as_deref(),
            )?;
            Ok(if passed { EXIT_OK } else { EXIT_VERIFY_FAIL })
        }
        VerifyCmd::Relax {
            common,
            init,
            k_max,
            radius,
            rho,
        } => {
            let (rule, torus) = verify_setup(ctx, &common)?;
            let big_c = match common.big_c {
                Some(c) => c,
                None => stationary_c(&rule)?,
            };
            let law = InitialLaw::parse(&init)?;
            let cfg = RelaxationConfig {
                volume_radius: radius,
                k_max,
                big_c,
                rho,
            };
            let trace = relaxation_trace(&rule, &torus, &law, &cfg)?;
            ctx.emit(
                &trace,
                || {
                    let mut t = Table::new(vec![
                        "k",
                        "check",
                        "lhs",
                        "rhs",
                        "diameter_sq",
                        "surrogate",
                        "status",
                    ]);
                    for r in &trace.rows {
                        for c in &r.checks {
                            t.push(vec![
                                r.k.to_string(),
                                c.name.to_string(),
                                f(c.lhs),
                                f(c.rhs),
                                f(c.diameter_sq),
                                c.surrogate.to_string(),
                                format!("{:?}", c.status).to_lowercase(),
                            ]);
                        }
                    }
                    t
                },
                common.csv.as_deref(),
            )?;
            Ok(if trace.passed {
                EXIT_OK
            } else {
                EXIT_VERIFY_FAIL
            })
        }
        VerifyCmd::Entropy {
            common,
            nu,
            nu_steps,
            max_radius,
        } => {
            let (rule, torus) = verify_setup(ctx, &common)?;
            let big_c = match common.big_c {
                Some(c) => c,
                None => stationary_c(&rule)?,
            };
            let (mu, _) = exact_stationary(
                &rule,
                &torus,
                exact::DEFAULT_STATIONARY_TOL,
                exact::DEFAULT_MAX_ITER,
            )?;
            let law = InitialLaw::parse(&nu)?;
            let nu0 = ExactDistribution::from_law(&torus, &law)?;
            let nu_dist = exact_evolution(&nu0, &rule, nu_steps as usize)?
                .into_iter()
                .last()
                .expect("evolution includes time 0");
            let mut volumes: Vec<Vec<Site>> = Vec::new();
            for m in 0..=max_radius {
                let v = cube_sites(&torus, m);
                if volumes.last().is_some_and(|last| last.len() == v.len()) {
                    break;
                }
                volumes.push(v);
            }
            let report = entropy_dbar_diagnostic(&mu, &nu_dist, big_c, &volumes)?;
            ctx.emit(
                &report,
                || {
                    let mut t = Table::new(vec![
                        "volume_size",
                        "ent",
                        "ent_density",
                        "d_inf",
                        "d_2",
                        "density_requirement",
                        "volume_requirement",
                        "density_flag",
                        "volume_flag",
                    ]);
                    for r in &report.rows {
                        t.push(vec![
                            r.volume_size.to_string(),
                            f(r.ent),
                            f(r.ent_density),
                            f(r.d_inf),
                            f(r.d_2),
                            f(r.density_requirement),
                            f(r.volume_requirement),
                            r.density_flag.to_string(),
                            r.volume_flag.to_string(),
                        ]);
                    }
                    t
                },
                common.csv.as_deref(),
            )?;
            Ok(if report.any_volume_flag {
                EXIT_VERIFY_FAIL
            } else {
                EXIT_OK
            })
        }
    }
}

fn verify_setup(ctx: &mut Ctx, common: &VerifyCommon) -> Res<(FourierRule, Torus)> {
    let rule = require_rule(ctx, &common.source)?;
    check_admissible(&rule)?;
    ctx.manifest.seed(common.seed);
    let torus = Torus::parse(&common.torus)?;
    Ok((rule, torus))
}
