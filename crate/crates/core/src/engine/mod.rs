//! Synchronous PCA simulation on finite tori.
//!
//! Randomness is counter based: the uniform used at `(replica, step, site)`
//! is a fixed position of a ChaCha8 keystream keyed by the master seed, with
//! the replica as stream id. Any schedule of workers therefore reproduces the
//! same sample paths bit for bit.

mod torus;

use std::sync::Arc;

use rand_chacha::rand_core::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::lattice::Site;
use crate::localfn::LocalFunction;
use crate::rule::{CompiledRule, FourierRule, RuleError, DEFAULT_EXACT_THRESHOLD};

pub use torus::{Torus, TorusConfig, MAX_SITES};

/// Output words handled by one task inside a single step.
const WORDS_PER_TASK: usize = 16;
/// Replicas accumulated per deterministic reduction block.
const REPLICA_CHUNK: usize = 4096;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid torus {0}")]
    BadTorus(String),
    #[error("torus of {sites} sites exceeds the limit of {limit}")]
    TooManySites { sites: u128, limit: usize },
    #[error("torus side {side} is below 2*range+1 = {needed}")]
    TorusTooSmall { side: usize, needed: usize },
    #[error("rule is not admissible: max |h| = {h_max}")]
    Inadmissible { h_max: f64 },
    #[error("rule dimension {rule} does not match torus dimension {torus}")]
    DimensionMismatch { rule: usize, torus: usize },
    #[error("observable wraps onto itself on torus {0}")]
    Overlap(String),
    #[error("probability {0} outside [0, 1]")]
    Probability(f64),
    #[error("configuration has {found} sites, torus has {expected}")]
    ConfigSize { found: usize, expected: usize },
    #[error("spin value {0} is not +1 or -1")]
    BadSpin(i8),
    #[error("unknown initial law {0:?}")]
    UnknownLaw(String),
    #[error("thread pool: {0}")]
    ThreadPool(String),
    #[error(transparent)]
    Rule(#[from] RuleError),
}

impl EngineError {
    pub fn is_resource_limit(&self) -> bool {
        match self {
            EngineError::TooManySites { .. } => true,
            EngineError::Rule(e) => e.is_resource_limit(),
            _ => false,
        }
    }
}

/// Master seed plus an optional relabelling of the per-site streams.
///
/// With `label_shift = Some(s)`, site `x` consumes the uniform that site
/// `x + s` would consume without the shift.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct SeedSpec {
    pub master: u64,
    pub label_shift: Option<Site>,
}

impl SeedSpec {
    pub fn new(master: u64) -> Self {
        SeedSpec {
            master,
            label_shift: None,
        }
    }

    pub fn with_label_shift(mut self, shift: Site) -> Self {
        self.label_shift = Some(shift);
        self
    }
}

/// Counter-based uniform source shared by the engine and the bootstrap.
#[derive(Clone)]
pub(crate) struct CounterRng {
    key: ChaCha8Rng,
}

impl CounterRng {
    pub(crate) fn new(master: u64) -> Self {
        CounterRng {
            key: ChaCha8Rng::seed_from_u64(master),
        }
    }

    /// A generator positioned at `counter` (in 64-bit draws) of `stream`.
    pub(crate) fn at(&self, stream: u64, counter: u128) -> ChaCha8Rng {
        let mut rng = self.key.clone();
        rng.set_stream(stream);
        rng.set_word_pos(2 * counter);
        rng
    }
}

/// Uniform in `[0, 1)` with 53 random bits.
#[inline]
pub(crate) fn unit_f64(x: u64) -> f64 {
    (x >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Distribution of the configuration at time 0.
#[derive(Clone, Debug, PartialEq)]
pub enum InitialLaw {
    AllPlus,
    AllMinus,
    /// Independent spins with `P(+1) = p`.
    Product(f64),
    Explicit(TorusConfig),
}

impl InitialLaw {
    /// `all_plus`, `all_minus` or `product:p`.
    pub fn parse(text: &str) -> Result<Self, EngineError> {
        match text {
            "all_plus" => Ok(InitialLaw::AllPlus),
            "all_minus" => Ok(InitialLaw::AllMinus),
            _ => {
                let p = text
                    .strip_prefix("product:")
                    .and_then(|p| p.parse::<f64>().ok())
                    .ok_or_else(|| EngineError::UnknownLaw(text.to_string()))?;
                if !(0.0..=1.0).contains(&p) {
                    return Err(EngineError::Probability(p));
                }
                Ok(InitialLaw::Product(p))
            }
        }
    }

    fn check(&self, torus: &Torus) -> Result<(), EngineError> {
        match self {
            InitialLaw::Product(p) if !(0.0..=1.0).contains(p) => Err(EngineError::Probability(*p)),
            InitialLaw::Explicit(c) if c.torus() != torus => Err(EngineError::ConfigSize {
                found: c.torus().len(),
                expected: torus.len(),
            }),
            _ => Ok(()),
        }
    }
}

/// A rule bound to a torus and a seed.
pub struct Simulator {
    rule: FourierRule,
    compiled: CompiledRule,
    torus: Arc<Torus>,
    /// `neighbors[i * s + j]` is the index of `site(i) + support[j]`.
    neighbors: Vec<u32>,
    support_len: usize,
    seed: SeedSpec,
    rng: CounterRng,
    /// Stream label of each site when the labels are shifted.
    labels: Option<Vec<u32>>,
    threads: Option<usize>,
}

impl Simulator {
    pub fn new(rule: &FourierRule, torus: Torus, seed: SeedSpec) -> Result<Self, EngineError> {
        if rule.dimension() != torus.dimension() {
            return Err(EngineError::DimensionMismatch {
                rule: rule.dimension(),
                torus: torus.dimension(),
            });
        }
        let report = rule.validate(DEFAULT_EXACT_THRESHOLD);
        if !report.admissible {
            return Err(EngineError::Inadmissible {
                h_max: report.h_max,
            });
        }
        torus.check_range(rule.propagation_speed())?;
        let compiled = rule.compile()?;
        let support = compiled.support().to_vec();
        let m = torus.len();
        let mut neighbors = Vec::with_capacity(m * support.len());
        for i in 0..m {
            let c = torus.coords(i);
            for s in &support {
                let moved: Vec<i64> = c.iter().zip(s.coords()).map(|(a, b)| a + b).collect();
                neighbors.push(torus.index_of(&moved) as u32);
            }
        }
        if let Some(shift) = &seed.label_shift {
            if shift.dimension() != torus.dimension() {
                return Err(EngineError::DimensionMismatch {
                    rule: shift.dimension(),
                    torus: torus.dimension(),
                });
            }
        }
        let labels = seed
            .label_shift
            .as_ref()
            .map(|s| (0..m).map(|i| torus.shift(i, s) as u32).collect());
        Ok(Simulator {
            rule: rule.clone(),
            compiled,
            support_len: support.len(),
            neighbors,
            torus: torus.shared(),
            rng: CounterRng::new(seed.master),
            seed,
            labels,
            threads: None,
        })
    }

    /// Runs every parallel section on a pool of `threads` workers.
    pub fn with_threads(mut self, threads: usize) -> Self {
        self.threads = Some(threads.max(1));
        self
    }

    pub fn rule(&self) -> &FourierRule {
        &self.rule
    }

    pub fn torus(&self) -> &Torus {
        &self.torus
    }

    pub fn seed(&self) -> &SeedSpec {
        &self.seed
    }

    fn install<R: Send>(&self, job: impl FnOnce() -> R + Send) -> Result<R, EngineError> {
        match self.threads {
            None => Ok(job()),
            Some(n) => {
                let pool = rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build()
                    .map_err(|e| EngineError::ThreadPool(e.to_string()))?;
                Ok(pool.install(job))
            }
        }
    }

    /// Fills the words of one output block: bit `j` of a word is set when the
    /// site's uniform draw falls below `prob(site)`.
    fn fill_words(
        &self,
        label: u64,
        replica: u64,
        first_word: usize,
        out: &mut [u64],
        prob: impl Fn(usize) -> f64,
    ) {
        let m = self.torus.len();
        for (w, word) in out.iter_mut().enumerate() {
            let base = (first_word + w) * 64;
            let count = (m - base).min(64);
            let mut bits = 0u64;
            match &self.labels {
                None => {
                    let mut rng = self
                        .rng
                        .at(replica, label as u128 * m as u128 + base as u128);
                    for j in 0..count {
                        if unit_f64(rng.next_u64()) < prob(base + j) {
                            bits |= 1 << j;
                        }
                    }
                }
                Some(labels) => {
                    for j in 0..count {
                        let site_label = labels[base + j] as u128;
                        let mut rng = self.rng.at(replica, label as u128 * m as u128 + site_label);
                        if unit_f64(rng.next_u64()) < prob(base + j) {
                            bits |= 1 << j;
                        }
                    }
                }
            }
            *word = bits;
        }
    }

    fn build(&self, label: u64, replica: u64, prob: impl Fn(usize) -> f64 + Sync) -> TorusConfig {
        let n_words = self.torus.len().div_ceil(64);
        let mut words = vec![0u64; n_words];
        if n_words <= WORDS_PER_TASK {
            self.fill_words(label, replica, 0, &mut words, &prob);
        } else {
            words
                .par_chunks_mut(WORDS_PER_TASK)
                .enumerate()
                .for_each(|(c, chunk)| {
                    self.fill_words(label, replica, c * WORDS_PER_TASK, chunk, &prob)
                });
        }
        TorusConfig::from_words(self.torus.clone(), words)
    }

    /// Time-0 configuration of `replica`.
    pub fn sample_initial(
        &self,
        law: &InitialLaw,
        replica: u64,
    ) -> Result<TorusConfig, EngineError> {
        law.check(&self.torus)?;
        Ok(match law {
            InitialLaw::AllPlus => TorusConfig::filled(self.torus.clone(), true),
            InitialLaw::AllMinus => TorusConfig::filled(self.torus.clone(), false),
            InitialLaw::Explicit(c) => {
                TorusConfig::from_words(self.torus.clone(), c.words().to_vec())
            }
            InitialLaw::Product(p) => {
                let p = *p;
                self.build(0, replica, move |_| p)
            }
        })
    }

    /// `P(+1 | config)` at site `i`.
    #[inline]
    pub fn prob_plus(&self, config: &TorusConfig, i: usize) -> f64 {
        let s = self.support_len;
        let nb = &self.neighbors[i * s..(i + 1) * s];
        let bits = nb.iter().enumerate().fold(0u64, |acc, (j, &k)| {
            acc | ((config.get(k as usize) as u64) << j)
        });
        self.compiled.prob_plus(bits)
    }

    /// One synchronous update; `step_index` counts from 0.
    pub fn step(&self, config: &TorusConfig, replica: u64, step_index: u64) -> TorusConfig {
        assert!(
            **config.torus_arc() == *self.torus,
            "configuration lives on a different torus"
        );
        self.build(step_index + 1, replica, |i| self.prob_plus(config, i))
    }

    /// The configurations of `replica` at times `0..=steps`, computed lazily.
    pub fn trajectory<'a>(
        &'a self,
        law: &InitialLaw,
        replica: u64,
        steps: u64,
    ) -> Result<Trajectory<'a>, EngineError> {
        let first = self.sample_initial(law, replica)?;
        Ok(Trajectory {
            sim: self,
            replica,
            steps,
            next_time: 0,
            current: Some(first),
        })
    }

    fn final_config(
        &self,
        law: &InitialLaw,
        replica: u64,
        steps: u64,
    ) -> Result<TorusConfig, EngineError> {
        let mut c = self.sample_initial(law, replica)?;
        for t in 0..steps {
            c = self.step(&c, replica, t);
        }
        Ok(c)
    }

    pub fn run(
        &self,
        law: InitialLaw,
        steps: u64,
        replicas: u64,
    ) -> Result<Ensemble<'_>, EngineError> {
        law.check(&self.torus)?;
        Ok(Ensemble {
            sim: self,
            law,
            steps,
            replicas: replicas.max(1),
        })
    }
}

/// Lazy iterator over one replica's configurations.
pub struct Trajectory<'a> {
    sim: &'a Simulator,
    replica: u64,
    steps: u64,
    next_time: u64,
    current: Option<TorusConfig>,
}

impl Iterator for Trajectory<'_> {
    type Item = (u64, TorusConfig);

    fn next(&mut self) -> Option<Self::Item> {
        let current = self.current.take()?;
        let t = self.next_time;
        if t < self.steps {
            self.current = Some(self.sim.step(&current, self.replica, t));
        }
        self.next_time += 1;
        Some((t, current))
    }
}

/// A batch of replicas that share a law, a rule and a seed.
pub struct Ensemble<'a> {
    sim: &'a Simulator,
    law: InitialLaw,
    steps: u64,
    replicas: u64,
}

/// Mean and spread of one observable over the replicas at one time.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ObservableStats {
    pub step: u64,
    pub observable: usize,
    pub replicas: u64,
    pub mean: f64,
    /// Unbiased sample variance.
    pub variance: f64,
    /// `sqrt(variance / replicas)`.
    pub std_error: f64,
}

impl<'a> Ensemble<'a> {
    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn replicas(&self) -> u64 {
        self.replicas
    }

    pub fn trajectory(&self, replica: u64) -> Result<Trajectory<'a>, EngineError> {
        self.sim.trajectory(&self.law, replica, self.steps)
    }

    /// Configurations of every replica after the last step.
    pub fn final_configs(&self) -> Result<Vec<TorusConfig>, EngineError> {
        self.sim.install(|| {
            (0..self.replicas)
                .into_par_iter()
                .map(|r| self.sim.final_config(&self.law, r, self.steps))
                .collect()
        })?
    }

    /// Values of each observable on every replica after the last step,
    /// indexed `[observable][replica]`.
    pub fn observe(&self, observables: &[BoundObservable]) -> Result<Vec<Vec<f64>>, EngineError> {
        let per_replica: Vec<Vec<f64>> = self.sim.install(|| {
            (0..self.replicas)
                .into_par_iter()
                .map(|r| {
                    let c = self.sim.final_config(&self.law, r, self.steps)?;
                    Ok(observables.iter().map(|o| o.eval(&c)).collect())
                })
                .collect::<Result<_, EngineError>>()
        })??;
        Ok((0..observables.len())
            .map(|k| per_replica.iter().map(|v| v[k]).collect())
            .collect())
    }

    /// Per-step summary statistics of each observable, reduced in a fixed
    /// order so the result does not depend on the worker count.
    pub fn stats(
        &self,
        observables: &[BoundObservable],
    ) -> Result<Vec<ObservableStats>, EngineError> {
        let n_obs = observables.len();
        let n_t = self.steps as usize + 1;
        let mut sum = vec![0.0; n_t * n_obs];
        let mut sum_sq = vec![0.0; n_t * n_obs];
        let mut start = 0u64;
        while start < self.replicas {
            let end = (start + REPLICA_CHUNK as u64).min(self.replicas);
            let block: Vec<Vec<f64>> = self.sim.install(|| {
                (start..end)
                    .into_par_iter()
                    .map(|r| {
                        let mut vals = Vec::with_capacity(n_t * n_obs);
                        for (_, c) in self.trajectory(r)? {
                            vals.extend(observables.iter().map(|o| o.eval(&c)));
                        }
                        Ok(vals)
                    })
                    .collect::<Result<_, EngineError>>()
            })??;
            for vals in &block {
                for (i, v) in vals.iter().enumerate() {
                    sum[i] += v;
                    sum_sq[i] += v * v;
                }
            }
            start = end;
        }
        let n = self.replicas as f64;
        let mut out = Vec::with_capacity(n_t * n_obs);
        for t in 0..n_t {
            for k in 0..n_obs {
                let i = t * n_obs + k;
                let mean = sum[i] / n;
                let variance = if self.replicas > 1 {
                    ((sum_sq[i] - n * mean * mean) / (n - 1.0)).max(0.0)
                } else {
                    0.0
                };
                out.push(ObservableStats {
                    step: t as u64,
                    observable: k,
                    replicas: self.replicas,
                    mean,
                    variance,
                    std_error: (variance / n).sqrt(),
                });
            }
        }
        Ok(out)
    }
}

/// A local function placed at an anchor of a torus, ready for fast lookups.
#[derive(Clone, Debug)]
pub struct BoundObservable {
    indices: Vec<usize>,
    table: Vec<f64>,
}

impl BoundObservable {
    /// Places `f` so that its site `y` reads torus site `anchor + y`.
    pub fn new(f: &LocalFunction, torus: &Torus, anchor: &Site) -> Result<Self, EngineError> {
        if f.dimension() != torus.dimension() || anchor.dimension() != torus.dimension() {
            return Err(EngineError::DimensionMismatch {
                rule: f.dimension(),
                torus: torus.dimension(),
            });
        }
        let indices: Vec<usize> = f
            .sites()
            .iter()
            .map(|s| torus.index(&s.add(anchor)))
            .collect();
        let mut sorted = indices.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != indices.len() {
            return Err(EngineError::Overlap(torus.to_string()));
        }
        Ok(BoundObservable {
            indices,
            table: f.table().to_vec(),
        })
    }

    #[inline]
    pub fn eval(&self, config: &TorusConfig) -> f64 {
        let idx = self
            .indices
            .iter()
            .enumerate()
            .fold(0usize, |acc, (j, &k)| acc | ((config.get(k) as usize) << j));
        self.table[idx]
    }

    /// Value on the configuration whose bit `i` is the spin of site `i`.
    #[inline]
    pub fn eval_index(&self, index: u64) -> f64 {
        let idx = self
            .indices
            .iter()
            .enumerate()
            .fold(0usize, |acc, (j, &k)| {
                acc | ((((index >> k) & 1) as usize) << j)
            });
        self.table[idx]
    }
}

/// `f(tau_anchor config)`, reading the torus with periodic wrap.
pub fn evaluate(
    f: &LocalFunction,
    config: &TorusConfig,
    anchor: &Site,
) -> Result<f64, EngineError> {
    Ok(BoundObservable::new(f, config.torus(), anchor)?.eval(config))
}
