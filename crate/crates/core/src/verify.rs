//! Checks of concentration, tail and relaxation inequalities against exact
//! finite-volume measures and Monte Carlo samples.
//!
//! Exact checks record a violation when the observed value exceeds the bound
//! by more than `1e-9`; sample-based checks when it exceeds the bound by more
//! than three standard errors.

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::constants::{cube_size, ConstantsError};
use crate::engine::{unit_f64, CounterRng, EngineError, InitialLaw, Torus};
use crate::exact::{
    dictionary_lower_bound, distance_from_difference, exact_evolution, exact_stationary,
    log_mgf_centered, relative_entropy_tables, value_masses, ExactDistribution, ExactError,
    OscNorm, DEFAULT_MAX_ITER, DEFAULT_STATIONARY_TOL, TAIL_SLACK,
};
use crate::lattice::Site;
use crate::localfn::{LocalFnError, LocalFunction};
use crate::rule::{FourierRule, Kernel, RuleError};

/// Slack for exact comparisons.
pub const EXACT_TOL: f64 = 1e-9;
/// Distances are compared as `D <= sqrt(bound) + DISTANCE_TOL`, absorbing the
/// residual of the stationary solver.
pub const DISTANCE_TOL: f64 = 1e-9;
pub const DEFAULT_BOOTSTRAP: usize = 200;
pub const DEFAULT_SE_MULTIPLIER: f64 = 3.0;
/// Empirical MGFs are evaluated only where `|lambda| * range(f)` stays below this.
pub const DEFAULT_LAMBDA_RANGE_CAP: f64 = 20.0;
pub const DEFAULT_SAMPLE_FLOOR: usize = 100;

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error("empty function corpus")]
    EmptyCorpus,
    #[error("corpus entry {0:?} has zero oscillation")]
    Degenerate(String),
    #[error("lambda grid is empty")]
    EmptyGrid,
    #[error("lambda grid has no negative value; the bound must be checked for f and -f")]
    OneSidedGrid,
    #[error("u grid values must be positive, got {0}")]
    NonPositiveU(f64),
    #[error("{found} samples for {name:?}, below the floor of {floor}")]
    SampleFloor {
        name: String,
        found: usize,
        floor: usize,
    },
    #[error("{samples} sample columns for a corpus of {corpus}")]
    SampleShape { samples: usize, corpus: usize },
    #[error("finite-energy constant rho is infinite; relaxation bounds need rho < inf")]
    InfiniteRho,
    #[error("volume of radius {radius} does not fit the torus {torus}")]
    VolumeTooLarge { radius: u64, torus: String },
    #[error(transparent)]
    Exact(#[from] ExactError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    LocalFn(#[from] LocalFnError),
    #[error(transparent)]
    Rule(#[from] RuleError),
    #[error(transparent)]
    Constants(#[from] ConstantsError),
}

impl VerifyError {
    pub fn is_resource_limit(&self) -> bool {
        match self {
            VerifyError::Exact(e) => e.is_resource_limit(),
            VerifyError::Engine(e) => e.is_resource_limit(),
            VerifyError::LocalFn(e) => e.is_resource_limit(),
            VerifyError::Rule(e) => e.is_resource_limit(),
            VerifyError::Constants(e) => matches!(e, ConstantsError::NoConvergence { .. }),
            VerifyError::VolumeTooLarge { .. } => true,
            _ => false,
        }
    }
}

/// A test function placed at an anchor.
#[derive(Clone, Debug)]
pub struct CorpusEntry {
    pub name: String,
    pub f: LocalFunction,
    pub anchor: Site,
}

impl CorpusEntry {
    pub fn new(name: impl Into<String>, f: LocalFunction) -> Self {
        let anchor = Site::origin(f.dimension());
        CorpusEntry {
            name: name.into(),
            f,
            anchor,
        }
    }
}

/// `sigma_0`, `sigma_0 sigma_1`, `sigma_{-1} sigma_0 sigma_1` and the
/// all-plus indicators of the windows `{0}`, `{0,1}`, `{0,1,2}` (one dimension).
pub fn standard_corpus() -> Vec<CorpusEntry> {
    let s = |xs: &[i64]| xs.iter().map(|&x| Site::d1(x)).collect::<Vec<_>>();
    let mut out = vec![
        CorpusEntry::new("sigma_0", LocalFunction::spin(Site::d1(0))),
        CorpusEntry::new(
            "sigma_0*sigma_1",
            LocalFunction::product(1, s(&[0, 1])).expect("two sites"),
        ),
        CorpusEntry::new(
            "sigma_-1*sigma_0*sigma_1",
            LocalFunction::product(1, s(&[-1, 0, 1])).expect("three sites"),
        ),
    ];
    for w in 1..=3 {
        let sites: Vec<i64> = (0..w).collect();
        out.push(CorpusEntry::new(
            format!("plus_indicator_{w}"),
            LocalFunction::all_plus_indicator(1, s(&sites)).expect("small window"),
        ));
    }
    out
}

/// `-4, -3.75, ..., 4`.
pub fn default_lambda_grid() -> Vec<f64> {
    (-16..=16).map(|i| i as f64 * 0.25).collect()
}

/// Where the measure comes from.
#[derive(Clone, Copy, Debug)]
pub enum MeasureSource<'a> {
    Exact(&'a ExactDistribution),
    /// `samples[j]` holds i.i.d. draws of corpus entry `j`.
    Samples(&'a [Vec<f64>]),
}

/// Statistical settings of the sample-based checks.
#[derive(Clone, Debug, Serialize)]
pub struct McPolicy {
    pub bootstrap: usize,
    pub seed: u64,
    pub se_multiplier: f64,
    pub lambda_range_cap: f64,
    pub sample_floor: usize,
}

impl Default for McPolicy {
    fn default() -> Self {
        McPolicy {
            bootstrap: DEFAULT_BOOTSTRAP,
            seed: 0,
            se_multiplier: DEFAULT_SE_MULTIPLIER,
            lambda_range_cap: DEFAULT_LAMBDA_RANGE_CAP,
            sample_floor: DEFAULT_SAMPLE_FLOOR,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    Exact,
    MonteCarlo,
}

#[derive(Clone, Debug, Serialize)]
pub struct CorpusSummary {
    pub name: String,
    pub delta_l2_sq: f64,
    pub mean: f64,
    pub range: f64,
    pub samples: Option<usize>,
}

#[derive(Clone, Debug, Serialize)]
pub struct GcbPoint {
    pub function: usize,
    pub lambda: f64,
    /// `log E exp(lambda (f - mean))`.
    pub observed: f64,
    /// `(C/2) lambda^2 ||delta f||_2^2`.
    pub bound: f64,
    /// `bound - observed`.
    pub slack: f64,
    pub std_error: Option<f64>,
    /// Skipped by the `|lambda| * range(f)` cap.
    pub skipped: bool,
    pub violated: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct GcbCertificate {
    pub source: SourceKind,
    pub big_c: f64,
    pub lambdas: Vec<f64>,
    pub corpus: Vec<CorpusSummary>,
    pub points: Vec<GcbPoint>,
    /// Smallest slack over the evaluated points.
    pub min_slack: f64,
    pub violations: Vec<GcbPoint>,
    pub passed: bool,
}

/// Empirical law of one sample column: distinct values with multiplicities.
struct Compressed {
    values: Vec<f64>,
    counts: Vec<u64>,
    /// `owner[i]`: index in `values` of the `i`-th sorted sample.
    owner: Vec<u32>,
    n: usize,
}

impl Compressed {
    fn new(samples: &[f64]) -> Self {
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        let mut values: Vec<f64> = Vec::new();
        let mut counts: Vec<u64> = Vec::new();
        let mut owner = Vec::with_capacity(sorted.len());
        for v in sorted {
            if values.last() != Some(&v) {
                values.push(v);
                counts.push(0);
            }
            *counts.last_mut().expect("pushed") += 1;
            owner.push((values.len() - 1) as u32);
        }
        Compressed {
            values,
            counts,
            owner,
            n: samples.len(),
        }
    }

    fn law(&self, counts: &[u64]) -> Vec<(f64, f64)> {
        self.values
            .iter()
            .zip(counts)
            .filter(|(_, c)| **c > 0)
            .map(|(v, c)| (*v, *c as f64))
            .collect()
    }

    fn mean(&self) -> f64 {
        self.values
            .iter()
            .zip(&self.counts)
            .map(|(v, c)| v * *c as f64)
            .sum::<f64>()
            / self.n as f64
    }

    /// Multinomial resamples of the counts; resample `b` of column `stream`
    /// reads counter positions `b * n .. (b + 1) * n`.
    fn resample_counts(&self, rng: &CounterRng, stream: u64, resamples: usize) -> Vec<Vec<u64>> {
        (0..resamples)
            .into_par_iter()
            .map(|b| {
                let mut g = rng.at(stream, b as u128 * self.n as u128);
                let mut counts = vec![0u64; self.values.len()];
                for _ in 0..self.n {
                    use rand_chacha::rand_core::Rng;
                    let i = ((g.next_u64() as u128 * self.n as u128) >> 64) as usize;
                    counts[self.owner[i] as usize] += 1;
                }
                counts
            })
            .collect()
    }
}

fn std_dev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0)).sqrt()
}

fn check_corpus(corpus: &[CorpusEntry]) -> Result<Vec<f64>, VerifyError> {
    if corpus.is_empty() {
        return Err(VerifyError::EmptyCorpus);
    }
    corpus
        .iter()
        .map(|e| {
            let d = e.f.oscillation().norm_sq();
            if d > 0.0 {
                Ok(d)
            } else {
                Err(VerifyError::Degenerate(e.name.clone()))
            }
        })
        .collect()
}

fn check_samples<'a>(
    samples: &'a [Vec<f64>],
    corpus: &[CorpusEntry],
    policy: &McPolicy,
) -> Result<&'a [Vec<f64>], VerifyError> {
    if samples.len() != corpus.len() {
        return Err(VerifyError::SampleShape {
            samples: samples.len(),
            corpus: corpus.len(),
        });
    }
    for (s, e) in samples.iter().zip(corpus) {
        if s.len() < policy.sample_floor {
            return Err(VerifyError::SampleFloor {
                name: e.name.clone(),
                found: s.len(),
                floor: policy.sample_floor,
            });
        }
    }
    Ok(samples)
}

/// Checks `log E exp(lambda (f - E f)) <= (C/2) lambda^2 ||delta f||_2^2`
/// for every corpus entry and every `lambda` of the grid.
pub fn certify_gcb(
    source: MeasureSource<'_>,
    big_c: f64,
    corpus: &[CorpusEntry],
    lambdas: &[f64],
    policy: &McPolicy,
) -> Result<GcbCertificate, VerifyError> {
    let deltas = check_corpus(corpus)?;
    if lambdas.is_empty() {
        return Err(VerifyError::EmptyGrid);
    }
    if !lambdas.iter().any(|l| *l < 0.0) {
        return Err(VerifyError::OneSidedGrid);
    }
    let mut points = Vec::new();
    let mut summaries = Vec::new();
    let kind = match source {
        MeasureSource::Exact(_) => SourceKind::Exact,
        MeasureSource::Samples(_) => SourceKind::MonteCarlo,
    };
    match source {
        MeasureSource::Exact(dist) => {
            for (j, (e, d2)) in corpus.iter().zip(&deltas).enumerate() {
                let law = value_masses(dist, &e.f, &e.anchor)?;
                summaries.push(CorpusSummary {
                    name: e.name.clone(),
                    delta_l2_sq: *d2,
                    mean: law.iter().map(|(v, w)| v * w).sum(),
                    range: e.f.range(),
                    samples: None,
                });
                for &lambda in lambdas {
                    let observed = log_mgf_centered(&law, lambda);
                    let bound = 0.5 * big_c * lambda * lambda * d2;
                    points.push(GcbPoint {
                        function: j,
                        lambda,
                        observed,
                        bound,
                        slack: bound - observed,
                        std_error: None,
                        skipped: false,
                        violated: observed - bound > EXACT_TOL,
                    });
                }
            }
        }
        MeasureSource::Samples(samples) => {
            let samples = check_samples(samples, corpus, policy)?;
            let rng = CounterRng::new(policy.seed);
            for (j, (e, d2)) in corpus.iter().zip(&deltas).enumerate() {
                let comp = Compressed::new(&samples[j]);
                let full = comp.law(&comp.counts);
                let resamples = comp.resample_counts(&rng, j as u64, policy.bootstrap);
                let laws: Vec<Vec<(f64, f64)>> = resamples.iter().map(|c| comp.law(c)).collect();
                let range = e.f.range();
                summaries.push(CorpusSummary {
                    name: e.name.clone(),
                    delta_l2_sq: *d2,
                    mean: comp.mean(),
                    range,
                    samples: Some(comp.n),
                });
                for &lambda in lambdas {
                    let bound = 0.5 * big_c * lambda * lambda * d2;
                    if lambda.abs() * range > policy.lambda_range_cap {
                        points.push(GcbPoint {
                            function: j,
                            lambda,
                            observed: f64::NAN,
                            bound,
                            slack: f64::NAN,
                            std_error: None,
                            skipped: true,
                            violated: false,
                        });
                        continue;
                    }
                    let observed = log_mgf_centered(&full, lambda);
                    let boot: Vec<f64> = laws.iter().map(|l| log_mgf_centered(l, lambda)).collect();
                    let se = std_dev(&boot);
                    points.push(GcbPoint {
                        function: j,
                        lambda,
                        observed,
                        bound,
                        slack: bound - observed,
                        std_error: Some(se),
                        skipped: false,
                        violated: observed - bound > policy.se_multiplier * se,
                    });
                }
            }
        }
    }
    let min_slack = points
        .iter()
        .filter(|p| !p.skipped)
        .map(|p| p.slack)
        .fold(f64::INFINITY, f64::min);
    let violations: Vec<GcbPoint> = points.iter().filter(|p| p.violated).cloned().collect();
    Ok(GcbCertificate {
        source: kind,
        big_c,
        lambdas: lambdas.to_vec(),
        corpus: summaries,
        passed: violations.is_empty(),
        points,
        min_slack,
        violations,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct TailPoint {
    pub u: f64,
    /// `P(f - E f >= u)`.
    pub observed: f64,
    /// `exp(-u^2 / (2 C ||delta f||_2^2))`.
    pub bound: f64,
    pub std_error: Option<f64>,
    pub violated: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct TailReport {
    pub source: SourceKind,
    pub big_c: f64,
    pub function: String,
    pub delta_l2_sq: f64,
    pub points: Vec<TailPoint>,
    pub passed: bool,
}

/// Checks `P(f - E f >= u) <= exp(-u^2 / (2 C ||delta f||_2^2))` on a grid of `u`.
///
/// With samples, `samples` holds i.i.d. draws of `entry`.
pub fn check_tail(
    source: MeasureSource<'_>,
    big_c: f64,
    entry: &CorpusEntry,
    us: &[f64],
    policy: &McPolicy,
) -> Result<TailReport, VerifyError> {
    let d2 = check_corpus(std::slice::from_ref(entry))?[0];
    if us.is_empty() {
        return Err(VerifyError::EmptyGrid);
    }
    if let Some(u) = us.iter().find(|u| !(**u > 0.0)) {
        return Err(VerifyError::NonPositiveU(*u));
    }
    let (law, n, kind) = match source {
        MeasureSource::Exact(dist) => (
            value_masses(dist, &entry.f, &entry.anchor)?,
            None,
            SourceKind::Exact,
        ),
        MeasureSource::Samples(samples) => {
            let s = check_samples(samples, std::slice::from_ref(entry), policy)?;
            let comp = Compressed::new(&s[0]);
            let total = comp.n as f64;
            let law = comp
                .law(&comp.counts)
                .into_iter()
                .map(|(v, c)| (v, c / total))
                .collect();
            (law, Some(comp.n), SourceKind::MonteCarlo)
        }
    };
    let mean: f64 = law.iter().map(|(v, w)| v * w).sum();
    let points: Vec<TailPoint> = us
        .iter()
        .map(|&u| {
            let observed: f64 = law
                .iter()
                .filter(|(v, _)| v - mean >= u - TAIL_SLACK)
                .map(|(_, w)| w)
                .sum();
            let bound = (-u * u / (2.0 * big_c * d2)).exp();
            let std_error = n.map(|n| (observed * (1.0 - observed) / n as f64).sqrt());
            let violated = match std_error {
                None => observed - bound > EXACT_TOL,
                Some(se) => observed - bound > policy.se_multiplier * se,
            };
            TailPoint {
                u,
                observed,
                bound,
                std_error,
                violated,
            }
        })
        .collect();
    Ok(TailReport {
        source: kind,
        big_c,
        function: entry.name.clone(),
        delta_l2_sq: d2,
        passed: points.iter().all(|p| !p.violated),
        points,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckStatus {
    Pass,
    /// The bound is at least the largest possible value; nothing was tested.
    Vacuous,
    Fail,
}

/// One inequality `lhs <= rhs` between squared distances.
#[derive(Clone, Debug, Serialize)]
pub struct BoundCheck {
    pub name: &'static str,
    pub lhs: f64,
    pub rhs: f64,
    pub diameter_sq: f64,
    /// Finite-torus stand-in for an infinite-volume statement.
    pub surrogate: bool,
    pub status: CheckStatus,
}

impl BoundCheck {
    fn new(name: &'static str, distance: f64, rhs: f64, diameter_sq: f64, surrogate: bool) -> Self {
        let status = if distance > rhs.max(0.0).sqrt() + DISTANCE_TOL {
            CheckStatus::Fail
        } else if rhs >= diameter_sq {
            CheckStatus::Vacuous
        } else {
            CheckStatus::Pass
        };
        BoundCheck {
            name,
            lhs: distance * distance,
            rhs,
            diameter_sq,
            surrogate,
            status,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct RelaxationRow {
    pub k: usize,
    /// Lower bound on `D_{inf,C_n}(nu P^k, mu)`.
    pub d_inf: f64,
    /// Lower bound on `D_{2,C_n}(nu P^k, mu)`.
    pub d_2: f64,
    pub distances_exact: bool,
    /// Sites of `C_{n+ak}` on the torus.
    pub ent_volume: usize,
    /// `Ent_{C_{n+ak}}(nu | mu)` when available.
    pub ent: Option<f64>,
    pub psi_k_l1: f64,
    /// `||psi_k||_2` after folding onto the torus.
    pub psi_k_l2_torus: f64,
    pub checks: Vec<BoundCheck>,
}

#[derive(Clone, Debug, Serialize)]
pub struct RelaxationTrace {
    pub source: SourceKind,
    pub big_c: f64,
    pub rho: f64,
    pub kappa: f64,
    pub propagation_speed: u64,
    pub volume_radius: u64,
    pub volume_size: usize,
    pub rows: Vec<RelaxationRow>,
    pub passed: bool,
    pub note: &'static str,
}

const TORUS_NOTE: &str = "finite-torus diagnostics: distances are certified lower bounds, entropies and d-bar surrogates are finite-volume stand-ins for the infinite-volume quantities";

#[derive(Clone, Debug, Serialize)]
pub struct RelaxationConfig {
    /// `n` in `C_n`, the volume where distances are measured.
    pub volume_radius: u64,
    pub k_max: usize,
    /// GCB constant of the stationary measure.
    pub big_c: f64,
    /// Finite-energy constant; taken from the rule when absent.
    pub rho: Option<f64>,
}

/// Sites of the cube `C_m` wrapped onto the torus, as distinct representatives.
pub fn cube_sites(torus: &Torus, m: u64) -> Vec<Site> {
    let d = torus.dimension();
    let side = 2 * m as i64 + 1;
    let total = (side as u128).pow(d as u32);
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    let mut count = 0u128;
    let mut coords = vec![-(m as i64); d];
    while count < total {
        let site = Site(coords.clone());
        if seen.insert(torus.index(&site)) {
            out.push(site);
        }
        if seen.len() == torus.len() {
            break;
        }
        count += 1;
        for c in coords.iter_mut() {
            *c += 1;
            if *c <= m as i64 {
                break;
            }
            *c = -(m as i64);
        }
    }
    out
}

/// `||psi||_2` of the kernel folded onto the torus.
pub fn folded_l2(kernel: &Kernel, torus: &Torus) -> f64 {
    let mut folded = vec![0.0; torus.len()];
    for (s, v) in kernel.values() {
        folded[torus.index(s)] += v;
    }
    folded.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn rho_of(rule: &FourierRule, given: Option<f64>) -> Result<f64, VerifyError> {
    let rho = match given {
        Some(r) => r,
        None => rule.finite_energy_rho()?,
    };
    if rho.is_infinite() {
        return Err(VerifyError::InfiniteRho);
    }
    Ok(rho)
}

fn row_checks(
    big_c: f64,
    rho: f64,
    kappa: f64,
    k: usize,
    d_inf: f64,
    d_2: f64,
    volume: usize,
    ent_volume: usize,
    ent: Option<f64>,
    psi_l1: f64,
    psi_l2: f64,
) -> Vec<BoundCheck> {
    let base = 2.0 * big_c;
    let diam_inf = OscNorm::L1Osc.diameter(volume).powi(2);
    let diam_2 = OscNorm::L2Osc.diameter(volume).powi(2);
    let mut checks = Vec::new();
    if let Some(ent) = ent {
        checks.push(BoundCheck::new(
            "dinf",
            d_inf,
            base * ent * psi_l2 * psi_l2,
            diam_inf,
            false,
        ));
        checks.push(BoundCheck::new(
            "2dist",
            d_2,
            base * ent * psi_l1 * psi_l1,
            diam_2,
            false,
        ));
    }
    let energy = rho * ent_volume as f64;
    checks.push(BoundCheck::new(
        "dinfconv",
        d_inf,
        base * energy * psi_l2 * psi_l2,
        diam_inf,
        false,
    ));
    checks.push(BoundCheck::new(
        "2dist_energy",
        d_2,
        base * energy * psi_l1 * psi_l1,
        diam_2,
        false,
    ));
    checks.push(BoundCheck::new(
        "dbarconv",
        d_inf,
        base * rho * psi_l1 * psi_l1,
        diam_inf,
        true,
    ));
    checks.push(BoundCheck::new(
        "dbar_exp",
        d_inf,
        base * rho * kappa.powi(k as i32),
        diam_inf,
        true,
    ));
    checks
}

fn entropy_on(
    nu: &ExactDistribution,
    mu: &ExactDistribution,
    sites: &[Site],
) -> Result<f64, VerifyError> {
    if sites.len() == mu.torus().len() {
        Ok(relative_entropy_tables(nu.probs(), mu.probs()))
    } else {
        Ok(relative_entropy_tables(
            &nu.marginal(sites)?,
            &mu.marginal(sites)?,
        ))
    }
}

/// Exact relaxation trace: distances between `nu P^k` and the stationary
/// measure on `C_n`, against the bounds of the relaxation theorem.
pub fn relaxation_trace(
    rule: &FourierRule,
    torus: &Torus,
    law: &InitialLaw,
    cfg: &RelaxationConfig,
) -> Result<RelaxationTrace, VerifyError> {
    let rho = rho_of(rule, cfg.rho)?;
    if torus
        .sides()
        .iter()
        .any(|&l| (l as u64) < 2 * cfg.volume_radius + 1)
    {
        return Err(VerifyError::VolumeTooLarge {
            radius: cfg.volume_radius,
            torus: torus.to_string(),
        });
    }
    let (mu, _) = exact_stationary(rule, torus, DEFAULT_STATIONARY_TOL, DEFAULT_MAX_ITER)?;
    let nu0 = ExactDistribution::from_law(torus, law)?;
    let evolution = exact_evolution(&nu0, rule, cfg.k_max)?;
    let lambda_sites = cube_sites(torus, cfg.volume_radius);
    let volume = lambda_sites.len();
    let mu_marginal = mu.marginal(&lambda_sites)?;
    let a = rule.propagation_speed();
    let kappa = rule.kappa();
    let rows = evolution
        .iter()
        .enumerate()
        .map(|(k, nu_k)| {
            let nu_marginal = nu_k.marginal(&lambda_sites)?;
            let d: Vec<f64> = nu_marginal
                .iter()
                .zip(&mu_marginal)
                .map(|(x, y)| x - y)
                .collect();
            let r_inf = distance_from_difference(&d, volume, OscNorm::L1Osc);
            let r_2 = distance_from_difference(&d, volume, OscNorm::L2Osc);
            let big = cube_sites(torus, cfg.volume_radius + a * k as u64);
            let ent = entropy_on(&nu0, &mu, &big)?;
            let psi_k = rule.psi_power(k)?;
            let (l1, l2) = (psi_k.l1(), folded_l2(&psi_k, torus));
            Ok(RelaxationRow {
                k,
                d_inf: r_inf.value,
                d_2: r_2.value,
                distances_exact: r_inf.exact && r_2.exact,
                ent_volume: big.len(),
                ent: Some(ent),
                psi_k_l1: l1,
                psi_k_l2_torus: l2,
                checks: row_checks(
                    cfg.big_c,
                    rho,
                    kappa,
                    k,
                    r_inf.value,
                    r_2.value,
                    volume,
                    big.len(),
                    Some(ent),
                    l1,
                    l2,
                ),
            })
        })
        .collect::<Result<Vec<_>, VerifyError>>()?;
    let passed = rows
        .iter()
        .all(|r| r.checks.iter().all(|c| c.status != CheckStatus::Fail));
    Ok(RelaxationTrace {
        source: SourceKind::Exact,
        big_c: cfg.big_c,
        rho,
        kappa,
        propagation_speed: a,
        volume_radius: cfg.volume_radius,
        volume_size: volume,
        rows,
        passed,
        note: TORUS_NOTE,
    })
}

/// Monte Carlo relaxation trace. `nu_samples[k]` and `mu_samples` hold
/// sampled assignments of the volume `C_n` (bit `i` = spin of the `i`-th
/// site of [`cube_sites`]). Each dictionary function contributes the lower
/// bound `(|mean difference| - 3 SE) / ||delta f||`; entropies are not
/// available, so only the finite-energy bounds are checked.
pub fn relaxation_trace_mc(
    rule: &FourierRule,
    torus: &Torus,
    nu_samples: &[Vec<u32>],
    mu_samples: &[u32],
    cfg: &RelaxationConfig,
    policy: &McPolicy,
) -> Result<RelaxationTrace, VerifyError> {
    let rho = rho_of(rule, cfg.rho)?;
    let lambda_sites = cube_sites(torus, cfg.volume_radius);
    let volume = lambda_sites.len();
    if volume > 16 {
        return Err(VerifyError::VolumeTooLarge {
            radius: cfg.volume_radius,
            torus: torus.to_string(),
        });
    }
    let floor = policy.sample_floor;
    let short = nu_samples
        .iter()
        .map(Vec::len)
        .chain([mu_samples.len()])
        .min()
        .unwrap_or(0);
    if short < floor {
        return Err(VerifyError::SampleFloor {
            name: "volume assignments".into(),
            found: short,
            floor,
        });
    }
    let hist = |xs: &[u32]| {
        let mut h = vec![0.0; 1 << volume];
        for &x in xs {
            h[x as usize] += 1.0;
        }
        let n = xs.len() as f64;
        h.iter_mut().for_each(|v| *v /= n);
        (h, n)
    };
    let (mu_hist, n_mu) = hist(mu_samples);
    let a = rule.propagation_speed();
    let kappa = rule.kappa();
    let mut rows = Vec::new();
    for (k, samples) in nu_samples.iter().enumerate() {
        let (nu_hist, n_nu) = hist(samples);
        let d: Vec<f64> = nu_hist.iter().zip(&mu_hist).map(|(x, y)| x - y).collect();
        let mut best = [0.0f64; 2];
        for (slot, norm) in [OscNorm::L1Osc, OscNorm::L2Osc].into_iter().enumerate() {
            // the dictionary maximizer for the point estimate, then its
            // statistically discounted value
            let (_, witness) = dictionary_lower_bound(&d, volume, norm);
            if let Some(w) = witness {
                let full: Vec<f64> = (0..1usize << volume)
                    .map(|s| {
                        let j = w
                            .bits
                            .iter()
                            .enumerate()
                            .fold(0usize, |acc, (i, &b)| acc | (((s >> b) & 1) << i));
                        w.table[j]
                    })
                    .collect();
                let moments = |h: &[f64]| {
                    let m: f64 = h.iter().zip(&full).map(|(p, f)| p * f).sum();
                    let v: f64 = h
                        .iter()
                        .zip(&full)
                        .map(|(p, f)| p * (f - m) * (f - m))
                        .sum();
                    (m, v)
                };
                let (m_nu, v_nu) = moments(&nu_hist);
                let (m_mu, v_mu) = moments(&mu_hist);
                let se = (v_nu / n_nu + v_mu / n_mu).sqrt();
                let osc = crate::localfn::table_oscillation(&full, volume);
                let denom = match norm {
                    OscNorm::L1Osc => osc.iter().sum::<f64>(),
                    OscNorm::L2Osc => osc.iter().map(|x| x * x).sum::<f64>().sqrt(),
                };
                if denom > 0.0 {
                    best[slot] =
                        (((m_nu - m_mu).abs() - policy.se_multiplier * se) / denom).max(0.0);
                }
            }
        }
        let psi_k = rule.psi_power(k)?;
        let (l1, l2) = (psi_k.l1(), folded_l2(&psi_k, torus));
        let ent_volume = cube_sites(torus, cfg.volume_radius + a * k as u64).len();
        rows.push(RelaxationRow {
            k,
            d_inf: best[0],
            d_2: best[1],
            distances_exact: false,
            ent_volume,
            ent: None,
            psi_k_l1: l1,
            psi_k_l2_torus: l2,
            checks: row_checks(
                cfg.big_c, rho, kappa, k, best[0], best[1], volume, ent_volume, None, l1, l2,
            ),
        });
    }
    let passed = rows
        .iter()
        .all(|r| r.checks.iter().all(|c| c.status != CheckStatus::Fail));
    Ok(RelaxationTrace {
        source: SourceKind::MonteCarlo,
        big_c: cfg.big_c,
        rho,
        kappa,
        propagation_speed: a,
        volume_radius: cfg.volume_radius,
        volume_size: volume,
        rows,
        passed,
        note: TORUS_NOTE,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct EntropyDbarRow {
    pub volume_size: usize,
    /// `Ent_Lambda(nu | mu)`.
    pub ent: f64,
    pub ent_density: f64,
    /// Lower bound on `D_{inf,Lambda}(nu, mu)`, itself a lower bound on d-bar.
    pub d_inf: f64,
    /// Lower bound on `D_{2,Lambda}(nu, mu)`.
    pub d_2: f64,
    /// `d_inf^2 / (2C)`, compared with the entropy density.
    pub density_requirement: f64,
    /// `d_2^2 / (2C)`, which `Ent_Lambda` must dominate under GCB(C).
    pub volume_requirement: f64,
    /// Entropy density below the d-bar surrogate: evidence against GCB(C).
    pub density_flag: bool,
    /// `Ent_Lambda < D_2^2 / (2C)`: GCB(C) fails for `mu` on this torus.
    pub volume_flag: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct EntropyDbarReport {
    pub big_c: f64,
    pub rows: Vec<EntropyDbarRow>,
    pub any_density_flag: bool,
    pub any_volume_flag: bool,
    pub note: &'static str,
}

/// Compares relative entropies with distance lower bounds on each volume.
pub fn entropy_dbar_diagnostic(
    mu: &ExactDistribution,
    nu: &ExactDistribution,
    big_c: f64,
    volumes: &[Vec<Site>],
) -> Result<EntropyDbarReport, VerifyError> {
    let rows = volumes
        .iter()
        .map(|sites| {
            let m_mu = mu.marginal(sites)?;
            let m_nu = nu.marginal(sites)?;
            let ent = relative_entropy_tables(&m_nu, &m_mu);
            let d: Vec<f64> = m_nu.iter().zip(&m_mu).map(|(a, b)| a - b).collect();
            let d_inf = distance_from_difference(&d, sites.len(), OscNorm::L1Osc).value;
            let d_2 = distance_from_difference(&d, sites.len(), OscNorm::L2Osc).value;
            let size = sites.len().max(1);
            let ent_density = ent / size as f64;
            let density_requirement = d_inf * d_inf / (2.0 * big_c);
            let volume_requirement = d_2 * d_2 / (2.0 * big_c);
            Ok(EntropyDbarRow {
                volume_size: sites.len(),
                ent,
                ent_density,
                d_inf,
                d_2,
                density_requirement,
                volume_requirement,
                density_flag: ent_density < density_requirement - EXACT_TOL,
                volume_flag: ent < volume_requirement - EXACT_TOL,
            })
        })
        .collect::<Result<Vec<_>, VerifyError>>()?;
    Ok(EntropyDbarReport {
        big_c,
        any_density_flag: rows.iter().any(|r| r.density_flag),
        any_volume_flag: rows.iter().any(|r| r.volume_flag),
        rows,
        note: TORUS_NOTE,
    })
}

/// Volume of `C_m` in `Z^d`, re-exported for report consumers.
pub fn cube_volume(m: u64, dimension: usize) -> f64 {
    cube_size(m, dimension)
}

/// Uniform draws for synthetic tests, on the engine's counter contract.
pub fn counter_uniforms(seed: u64, stream: u64, n: usize) -> Vec<f64> {
    use rand_chacha::rand_core::Rng;
    let mut g = CounterRng::new(seed).at(stream, 0);
    (0..n).map(|_| unit_f64(g.next_u64())).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::TorusConfig;
    use crate::rule::Builtin;

    #[test]
    fn dirac_passes_with_zero_observed() {
        let t = Torus::ring(5).unwrap();
        let dirac = ExactDistribution::dirac(&TorusConfig::all_plus(&t)).unwrap();
        let cert = certify_gcb(
            MeasureSource::Exact(&dirac),
            0.0,
            &standard_corpus(),
            &default_lambda_grid(),
            &McPolicy::default(),
        )
        .unwrap();
        assert!(cert.passed);
        assert!(cert.points.iter().all(|p| p.observed == 0.0));
    }

    #[test]
    fn fair_coin_passes_at_quarter() {
        let t = Torus::ring(4).unwrap();
        let fair = ExactDistribution::product(&t, 0.5).unwrap();
        let corpus = vec![CorpusEntry::new("s0", LocalFunction::spin(Site::d1(0)))];
        let cert = certify_gcb(
            MeasureSource::Exact(&fair),
            0.25,
            &corpus,
            &default_lambda_grid(),
            &McPolicy::default(),
        )
        .unwrap();
        assert!(cert.passed);
        let cert = certify_gcb(
            MeasureSource::Exact(&fair),
            0.2,
            &corpus,
            &default_lambda_grid(),
            &McPolicy::default(),
        )
        .unwrap();
        assert!(!cert.passed);
    }

    #[test]
    fn grid_and_corpus_errors() {
        let t = Torus::ring(4).unwrap();
        let fair = ExactDistribution::product(&t, 0.5).unwrap();
        let src = MeasureSource::Exact(&fair);
        let p = McPolicy::default();
        let corpus = standard_corpus();
        assert!(matches!(
            certify_gcb(src, 0.25, &corpus, &[0.5, 1.0], &p),
            Err(VerifyError::OneSidedGrid)
        ));
        assert!(matches!(
            certify_gcb(src, 0.25, &[], &[-1.0], &p),
            Err(VerifyError::EmptyCorpus)
        ));
        let flat = vec![CorpusEntry::new("c", LocalFunction::constant(1, 2.0))];
        assert!(matches!(
            certify_gcb(src, 0.25, &flat, &[-1.0], &p),
            Err(VerifyError::Degenerate(_))
        ));
        let few = vec![vec![1.0; 10]];
        let one = vec![corpus[0].clone()];
        assert!(matches!(
            certify_gcb(MeasureSource::Samples(&few), 0.25, &one, &[-1.0], &p),
            Err(VerifyError::SampleFloor { .. })
        ));
    }

    #[test]
    fn tail_examples() {
        let t = Torus::ring(5).unwrap();
        let fair = ExactDistribution::product(&t, 0.5).unwrap();
        let sum = CorpusEntry::new(
            "sum",
            LocalFunction::sum(1, vec![Site::d1(-1), Site::d1(0), Site::d1(1)]).unwrap(),
        );
        let rep = check_tail(
            MeasureSource::Exact(&fair),
            0.25,
            &sum,
            &[2.0, 10.0],
            &McPolicy::default(),
        )
        .unwrap();
        assert!(rep.passed);
        assert_eq!(rep.points[0].observed, 0.125);
        assert!((rep.points[0].bound - (-2.0f64 / 3.0).exp()).abs() < 1e-15);
        assert_eq!(rep.points[1].observed, 0.0);
        assert!(check_tail(
            MeasureSource::Exact(&fair),
            0.25,
            &sum,
            &[0.0],
            &McPolicy::default()
        )
        .is_err());
    }

    #[test]
    fn bootstrap_is_reproducible() {
        let u = counter_uniforms(3, 0, 500);
        let samples = vec![u
            .iter()
            .map(|x| if *x < 0.5 { 1.0 } else { -1.0 })
            .collect::<Vec<_>>()];
        let corpus = vec![CorpusEntry::new("s0", LocalFunction::spin(Site::d1(0)))];
        let p = McPolicy::default();
        let a = certify_gcb(
            MeasureSource::Samples(&samples),
            0.25,
            &corpus,
            &default_lambda_grid(),
            &p,
        )
        .unwrap();
        let b = certify_gcb(
            MeasureSource::Samples(&samples),
            0.25,
            &corpus,
            &default_lambda_grid(),
            &p,
        )
        .unwrap();
        let se = |c: &GcbCertificate| c.points.iter().map(|p| p.std_error).collect::<Vec<_>>();
        assert_eq!(se(&a), se(&b));
        assert!(a.passed);
        // |lambda| * range > 20 is skipped: range 2, so |lambda| > 10 only
        assert!(a.points.iter().all(|p| !p.skipped));
    }

    #[test]
    fn relaxation_refuses_infinite_rho() {
        let t = Torus::ring(5).unwrap();
        let cfg = RelaxationConfig {
            volume_radius: 0,
            k_max: 2,
            big_c: 0.3,
            rho: None,
        };
        let r = relaxation_trace(
            &Builtin::Stavskaya { eps: 0.5 }.rule(),
            &t,
            &InitialLaw::AllMinus,
            &cfg,
        );
        assert!(matches!(r, Err(VerifyError::InfiniteRho)));
    }

    #[test]
    fn cube_sites_wrap() {
        let t = Torus::ring(5).unwrap();
        assert_eq!(cube_sites(&t, 1).len(), 3);
        assert_eq!(cube_sites(&t, 7).len(), 5);
        let t2 = Torus::new(vec![4, 4]).unwrap();
        assert_eq!(cube_sites(&t2, 1).len(), 9);
        assert_eq!(cube_sites(&t2, 2).len(), 16);
    }

    #[test]
    fn identical_measures_have_zero_distance() {
        let t = Torus::ring(4).unwrap();
        let mu = ExactDistribution::product(&t, 0.3).unwrap();
        let vols = vec![vec![Site::d1(0)], vec![Site::d1(0), Site::d1(1)]];
        let rep = entropy_dbar_diagnostic(&mu, &mu, 0.25, &vols).unwrap();
        assert!(rep.rows.iter().all(|r| r.ent == 0.0 && r.d_inf == 0.0));
        assert!(!rep.any_density_flag && !rep.any_volume_flag);
    }
}
