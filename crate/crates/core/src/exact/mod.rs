//! Exact finite-volume oracles on tiny tori.
//!
//! A measure on a torus with `M <= 22` sites is stored as its full
//! probability vector, index bit `i` being the spin of site `i`.

mod distance;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::engine::{EngineError, InitialLaw, Torus, TorusConfig};
use crate::lattice::Site;
use crate::localfn::LocalFunction;
use crate::rule::{CompiledRule, FourierRule, RuleError, DEFAULT_EXACT_THRESHOLD};

pub use distance::{
    dictionary_distance, dictionary_lower_bound, distance_from_difference, ratio, DistanceReport,
    OscNorm, Witness, EXACT_DISTANCE_SITES,
};

pub const MAX_EXACT_SITES: usize = 22;
/// Largest working vector of the transition sweep, in index bits.
pub const STATE_CAP_BITS: usize = 26;
pub const DEFAULT_STATIONARY_TOL: f64 = 1e-12;
pub const DEFAULT_MAX_ITER: usize = 10_000;
/// Accepted deviation of the total mass from 1 for user supplied vectors.
pub const MASS_TOL: f64 = 1e-9;
/// Marginals are tabulated for at most this many sites.
pub const MAX_MARGINAL_SITES: usize = 20;

#[derive(Debug, Error)]
pub enum ExactError {
    #[error("exact oracle supports at most {limit} sites, torus has {sites}")]
    TooLarge { sites: usize, limit: usize },
    #[error("transition sweep needs 2^{bits} entries, above the cap 2^{cap}")]
    StateCap { bits: usize, cap: usize },
    #[error("no convergence after {iterations} iterations, l1 residual {residual:e}")]
    NonConvergence { iterations: usize, residual: f64 },
    #[error("probability vector has {found} entries, expected {expected}")]
    Size { found: usize, expected: usize },
    #[error("invalid probability vector: {0}")]
    NotProbability(String),
    #[error("measures live on different tori")]
    TorusMismatch,
    #[error("volume of {sites} sites exceeds {limit}")]
    VolumeTooLarge { sites: usize, limit: usize },
    #[error("volume repeats a torus site")]
    VolumeOverlap,
    #[error("u must be positive, got {0}")]
    NonPositiveU(f64),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Rule(#[from] RuleError),
}

impl ExactError {
    pub fn is_resource_limit(&self) -> bool {
        match self {
            ExactError::TooLarge { .. }
            | ExactError::StateCap { .. }
            | ExactError::NonConvergence { .. }
            | ExactError::VolumeTooLarge { .. } => true,
            ExactError::Engine(e) => e.is_resource_limit(),
            ExactError::Rule(e) => e.is_resource_limit(),
            _ => false,
        }
    }
}

/// A probability vector over all `2^M` configurations of a torus.
#[derive(Clone, Debug, PartialEq)]
pub struct ExactDistribution {
    torus: Torus,
    probs: Vec<f64>,
}

fn check_size(torus: &Torus) -> Result<(), ExactError> {
    if torus.len() > MAX_EXACT_SITES {
        return Err(ExactError::TooLarge {
            sites: torus.len(),
            limit: MAX_EXACT_SITES,
        });
    }
    Ok(())
}

impl ExactDistribution {
    pub fn new(torus: Torus, probs: Vec<f64>) -> Result<Self, ExactError> {
        check_size(&torus)?;
        let expected = 1usize << torus.len();
        if probs.len() != expected {
            return Err(ExactError::Size {
                found: probs.len(),
                expected,
            });
        }
        if let Some(p) = probs.iter().find(|p| !(p.is_finite() && **p >= 0.0)) {
            return Err(ExactError::NotProbability(format!("entry {p}")));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > MASS_TOL {
            return Err(ExactError::NotProbability(format!("total mass {total}")));
        }
        Ok(ExactDistribution { torus, probs })
    }

    pub fn dirac(config: &TorusConfig) -> Result<Self, ExactError> {
        let torus = config.torus().clone();
        check_size(&torus)?;
        let mut probs = vec![0.0; 1 << torus.len()];
        probs[config.to_index() as usize] = 1.0;
        Ok(ExactDistribution { torus, probs })
    }

    pub fn uniform(torus: &Torus) -> Result<Self, ExactError> {
        check_size(torus)?;
        let n = 1usize << torus.len();
        Ok(ExactDistribution {
            torus: torus.clone(),
            probs: vec![1.0 / n as f64; n],
        })
    }

    /// Independent spins, `P(sigma_i = +1) = p[i]`.
    pub fn product_sitewise(torus: &Torus, p: &[f64]) -> Result<Self, ExactError> {
        check_size(torus)?;
        if p.len() != torus.len() {
            return Err(ExactError::Size {
                found: p.len(),
                expected: torus.len(),
            });
        }
        if let Some(q) = p.iter().find(|q| !(0.0..=1.0).contains(*q)) {
            return Err(ExactError::NotProbability(format!("site probability {q}")));
        }
        let probs = (0..1usize << torus.len())
            .into_par_iter()
            .map(|idx| {
                p.iter()
                    .enumerate()
                    .map(|(i, &q)| if (idx >> i) & 1 == 1 { q } else { 1.0 - q })
                    .product()
            })
            .collect();
        Ok(ExactDistribution {
            torus: torus.clone(),
            probs,
        })
    }

    pub fn product(torus: &Torus, p: f64) -> Result<Self, ExactError> {
        Self::product_sitewise(torus, &vec![p; torus.len()])
    }

    pub fn from_law(torus: &Torus, law: &InitialLaw) -> Result<Self, ExactError> {
        match law {
            InitialLaw::AllPlus => Self::dirac(&TorusConfig::all_plus(torus)),
            InitialLaw::AllMinus => Self::dirac(&TorusConfig::all_minus(torus)),
            InitialLaw::Product(p) => Self::product(torus, *p),
            InitialLaw::Explicit(c) => {
                if c.torus() != torus {
                    return Err(ExactError::TorusMismatch);
                }
                Self::dirac(c)
            }
        }
    }

    pub fn torus(&self) -> &Torus {
        &self.torus
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn total_mass(&self) -> f64 {
        ordered_sum(&self.probs)
    }

    pub fn l1_distance(&self, other: &ExactDistribution) -> Result<f64, ExactError> {
        if self.torus != other.torus {
            return Err(ExactError::TorusMismatch);
        }
        let diffs: Vec<f64> = self
            .probs
            .iter()
            .zip(&other.probs)
            .map(|(a, b)| (a - b).abs())
            .collect();
        Ok(ordered_sum(&diffs))
    }

    /// Mass carried by each row of `f`'s table when `f` is placed at `anchor`.
    pub fn pushforward(&self, f: &LocalFunction, anchor: &Site) -> Result<Vec<f64>, ExactError> {
        let positions: Vec<Site> = f.sites().iter().map(|s| s.add(anchor)).collect();
        self.marginal(&positions)
    }

    /// `int f(tau_anchor .) d mu`.
    pub fn expectation(&self, f: &LocalFunction, anchor: &Site) -> Result<f64, ExactError> {
        let w = self.pushforward(f, anchor)?;
        Ok(w.iter().zip(f.table()).map(|(a, b)| a * b).sum())
    }

    /// Marginal on `sites` (wrapped onto the torus): entry `j` is the mass of
    /// the assignment whose bit `i` is the spin of `sites[i]`.
    pub fn marginal(&self, sites: &[Site]) -> Result<Vec<f64>, ExactError> {
        if sites.len() > MAX_MARGINAL_SITES {
            return Err(ExactError::VolumeTooLarge {
                sites: sites.len(),
                limit: MAX_MARGINAL_SITES,
            });
        }
        let idx: Vec<usize> = sites
            .iter()
            .map(|s| {
                if s.dimension() != self.torus.dimension() {
                    Err(ExactError::Engine(EngineError::DimensionMismatch {
                        rule: s.dimension(),
                        torus: self.torus.dimension(),
                    }))
                } else {
                    Ok(self.torus.index(s))
                }
            })
            .collect::<Result<_, _>>()?;
        let mut sorted = idx.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != idx.len() {
            return Err(ExactError::VolumeOverlap);
        }
        let k = idx.len();
        const CHUNK: usize = 1 << 14;
        let partial: Vec<Vec<f64>> = self
            .probs
            .par_chunks(CHUNK)
            .enumerate()
            .map(|(c, chunk)| {
                let mut out = vec![0.0; 1 << k];
                for (o, &p) in chunk.iter().enumerate() {
                    if p == 0.0 {
                        continue;
                    }
                    let full = c * CHUNK + o;
                    let j = idx
                        .iter()
                        .enumerate()
                        .fold(0usize, |acc, (b, &s)| acc | (((full >> s) & 1) << b));
                    out[j] += p;
                }
                out
            })
            .collect();
        let mut out = vec![0.0; 1 << k];
        for part in &partial {
            for (o, v) in out.iter_mut().zip(part) {
                *o += v;
            }
        }
        Ok(out)
    }

    /// One exact step of the PCA.
    pub fn step(&self, rule: &FourierRule) -> Result<ExactDistribution, ExactError> {
        exact_step(self, rule)
    }
}

/// Sequential sum in index order of blocks summed in parallel.
fn ordered_sum(v: &[f64]) -> f64 {
    let parts: Vec<f64> = v
        .par_chunks(1 << 14)
        .map(|c| c.iter().sum::<f64>())
        .collect();
    parts.iter().sum()
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Var {
    Eta(usize),
    Sigma(usize),
    Free,
}

#[derive(Clone, Debug)]
enum Op {
    /// Multiplies in the kernel of `site`; `sum_slot` holds an `eta` that
    /// is summed out while the new `sigma` takes its bit.
    FactorInPlace { site: usize, sum_slot: usize },
    /// Multiplies in the kernel of `site`, writing `sigma` into a free slot.
    FactorInto { site: usize, slot: usize },
    /// Sums out the `eta` held by `slot`.
    Marginalize { slot: usize },
}

/// The transition operator of a rule on a torus, as a sequence of
/// variable-elimination passes over a working vector.
pub struct ExactKernel {
    torus: Torus,
    compiled: CompiledRule,
    ops: Vec<Op>,
    /// Slot of each `eta` at the time of each factor, per site.
    factor_slots: Vec<Vec<usize>>,
    sigma_slot: Vec<usize>,
    bits: usize,
}

impl ExactKernel {
    pub fn new(rule: &FourierRule, torus: &Torus) -> Result<Self, ExactError> {
        check_size(torus)?;
        if rule.dimension() != torus.dimension() {
            return Err(EngineError::DimensionMismatch {
                rule: rule.dimension(),
                torus: torus.dimension(),
            }
            .into());
        }
        let report = rule.validate(DEFAULT_EXACT_THRESHOLD);
        if !report.admissible {
            return Err(EngineError::Inadmissible {
                h_max: report.h_max,
            }
            .into());
        }
        torus.check_range(rule.propagation_speed())?;
        let compiled = rule.compile()?;
        let m = torus.len();
        let neighbors: Vec<Vec<usize>> = (0..m)
            .map(|x| {
                compiled
                    .support()
                    .iter()
                    .map(|s| torus.shift(x, s))
                    .collect()
            })
            .collect();

        let mut remaining = vec![0usize; m];
        for nb in &neighbors {
            for &y in nb {
                remaining[y] += 1;
            }
        }
        let mut slots: Vec<Var> = (0..m).map(Var::Eta).collect();
        let mut ops = Vec::new();
        let mut factor_slots = vec![Vec::new(); m];
        let slot_of = |slots: &[Var], v: Var| {
            slots
                .iter()
                .position(|s| *s == v)
                .expect("variable present")
        };
        for y in 0..m {
            if remaining[y] == 0 {
                ops.push(Op::Marginalize { slot: y });
                slots[y] = Var::Free;
            }
        }
        for x in 0..m {
            factor_slots[x] = neighbors[x]
                .iter()
                .map(|&y| slot_of(&slots, Var::Eta(y)))
                .collect();
            let mut freed = Vec::new();
            for &y in &neighbors[x] {
                remaining[y] -= 1;
                if remaining[y] == 0 {
                    freed.push(y);
                }
            }
            // prefer summing eta_x in place so sigma_x lands on its own bit
            freed.sort_by_key(|&y| (y != x, y));
            if let Some((&first, rest)) = freed.split_first() {
                let slot = slot_of(&slots, Var::Eta(first));
                ops.push(Op::FactorInPlace {
                    site: x,
                    sum_slot: slot,
                });
                slots[slot] = Var::Sigma(x);
                for &y in rest {
                    let s = slot_of(&slots, Var::Eta(y));
                    ops.push(Op::Marginalize { slot: s });
                    slots[s] = Var::Free;
                }
            } else {
                let slot = match slots.iter().position(|s| *s == Var::Free) {
                    Some(s) => s,
                    None => {
                        slots.push(Var::Free);
                        slots.len() - 1
                    }
                };
                ops.push(Op::FactorInto { site: x, slot });
                slots[slot] = Var::Sigma(x);
            }
        }
        let bits = slots.len();
        if bits > STATE_CAP_BITS {
            return Err(ExactError::StateCap {
                bits,
                cap: STATE_CAP_BITS,
            });
        }
        let sigma_slot = (0..m).map(|x| slot_of(&slots, Var::Sigma(x))).collect();
        Ok(ExactKernel {
            torus: torus.clone(),
            compiled,
            ops,
            factor_slots,
            sigma_slot,
            bits,
        })
    }

    /// Index bits of the working vector.
    pub fn working_bits(&self) -> usize {
        self.bits
    }

    #[inline]
    fn prob(&self, site: usize, index: usize) -> f64 {
        let bits = self.factor_slots[site]
            .iter()
            .enumerate()
            .fold(0u64, |acc, (j, &s)| {
                acc | ((((index >> s) & 1) as u64) << j)
            });
        self.compiled.prob_plus(bits)
    }

    /// `(mu P)(sigma) = sum_eta mu(eta) prod_x p(sigma_x | eta)`.
    pub fn apply(&self, probs: &[f64]) -> Vec<f64> {
        let m = self.torus.len();
        debug_assert_eq!(probs.len(), 1 << m);
        let mut v = vec![0.0; 1usize << self.bits];
        v[..probs.len()].copy_from_slice(probs);
        for op in &self.ops {
            match *op {
                Op::Marginalize { slot } => for_pairs(&mut v, slot, |_, a, b| {
                    *a += *b;
                    *b = 0.0;
                }),
                Op::FactorInPlace { site, sum_slot } => for_pairs(&mut v, sum_slot, |i0, a, b| {
                    let p0 = self.prob(site, i0);
                    let p1 = self.prob(site, i0 | (1 << sum_slot));
                    let (x0, x1) = (*a, *b);
                    *a = x0 * (1.0 - p0) + x1 * (1.0 - p1);
                    *b = x0 * p0 + x1 * p1;
                }),
                Op::FactorInto { site, slot } => for_pairs(&mut v, slot, |i0, a, b| {
                    let p = self.prob(site, i0);
                    let x = *a;
                    *a = x * (1.0 - p);
                    *b = x * p;
                }),
            }
        }
        let identity = self.sigma_slot.iter().enumerate().all(|(y, &s)| y == s);
        if identity {
            v.truncate(1 << m);
            return v;
        }
        (0..1usize << m)
            .into_par_iter()
            .map(|sigma| {
                let src = self
                    .sigma_slot
                    .iter()
                    .enumerate()
                    .fold(0usize, |acc, (y, &s)| acc | (((sigma >> y) & 1) << s));
                v[src]
            })
            .collect()
    }
}

/// Calls `f(i0, v[i0], v[i0 | 1 << bit])` for every index `i0` with `bit` clear.
fn for_pairs(v: &mut [f64], bit: usize, f: impl Fn(usize, &mut f64, &mut f64) + Sync) {
    let half = 1usize << bit;
    let block = half << 1;
    if half >= 1 << 12 {
        v.par_chunks_mut(block).enumerate().for_each(|(c, chunk)| {
            let (lo, hi) = chunk.split_at_mut(half);
            lo.par_iter_mut()
                .zip(hi.par_iter_mut())
                .enumerate()
                .for_each(|(k, (a, b))| f(c * block + k, a, b));
        });
    } else {
        v.par_chunks_mut(block.max(1 << 12))
            .enumerate()
            .for_each(|(g, group)| {
                let base = g * block.max(1 << 12);
                for (c, chunk) in group.chunks_mut(block).enumerate() {
                    let (lo, hi) = chunk.split_at_mut(half);
                    for (k, (a, b)) in lo.iter_mut().zip(hi.iter_mut()).enumerate() {
                        f(base + c * block + k, a, b);
                    }
                }
            });
    }
}

/// `mu P` for one step of the PCA.
pub fn exact_step(
    dist: &ExactDistribution,
    rule: &FourierRule,
) -> Result<ExactDistribution, ExactError> {
    let kernel = ExactKernel::new(rule, &dist.torus)?;
    Ok(ExactDistribution {
        torus: dist.torus.clone(),
        probs: kernel.apply(&dist.probs),
    })
}

/// `mu P^k` for `k = 0..=steps`.
pub fn exact_evolution(
    dist: &ExactDistribution,
    rule: &FourierRule,
    steps: usize,
) -> Result<Vec<ExactDistribution>, ExactError> {
    let kernel = ExactKernel::new(rule, &dist.torus)?;
    let mut out = vec![dist.clone()];
    for _ in 0..steps {
        let next = kernel.apply(&out.last().expect("nonempty").probs);
        out.push(ExactDistribution {
            torus: dist.torus.clone(),
            probs: next,
        });
    }
    Ok(out)
}

#[derive(Clone, Debug, Serialize)]
pub struct StationaryReport {
    pub iterations: usize,
    /// `||mu P - mu||_1` at the returned `mu`.
    pub residual: f64,
}

/// Power iteration from the uniform measure until `||mu P - mu||_1 <= tol`.
pub fn exact_stationary(
    rule: &FourierRule,
    torus: &Torus,
    tol: f64,
    max_iter: usize,
) -> Result<(ExactDistribution, StationaryReport), ExactError> {
    let kernel = ExactKernel::new(rule, torus)?;
    let mut cur = ExactDistribution::uniform(torus)?.probs;
    let mut residual = f64::INFINITY;
    for it in 1..=max_iter {
        let next = kernel.apply(&cur);
        let diffs: Vec<f64> = next.iter().zip(&cur).map(|(a, b)| (a - b).abs()).collect();
        residual = ordered_sum(&diffs);
        cur = next;
        if residual <= tol {
            return Ok((
                ExactDistribution {
                    torus: torus.clone(),
                    probs: cur,
                },
                StationaryReport {
                    iterations: it,
                    residual,
                },
            ));
        }
    }
    Err(ExactError::NonConvergence {
        iterations: max_iter,
        residual,
    })
}

/// Distribution of the values of `f` under `mu` as `(value, mass)` pairs with
/// positive mass, merged by table row.
pub(crate) fn value_masses(
    dist: &ExactDistribution,
    f: &LocalFunction,
    anchor: &Site,
) -> Result<Vec<(f64, f64)>, ExactError> {
    let w = dist.pushforward(f, anchor)?;
    Ok(f.table()
        .iter()
        .zip(&w)
        .filter(|(_, m)| **m > 0.0)
        .map(|(v, m)| (*v, *m))
        .collect())
}

/// `log sum_i w_i exp(lambda (v_i - mean))` for a discrete law.
pub fn log_mgf_centered(values: &[(f64, f64)], lambda: f64) -> f64 {
    let total: f64 = values.iter().map(|(_, w)| w).sum();
    let mean = values.iter().map(|(v, w)| v * w).sum::<f64>() / total;
    let exps: Vec<f64> = values.iter().map(|(v, _)| lambda * (v - mean)).collect();
    let top = exps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = values
        .iter()
        .zip(&exps)
        .map(|((_, w), e)| w * (e - top).exp())
        .sum();
    top + (s / total).ln()
}

/// `log int exp(lambda (f - int f d mu)) d mu`.
pub fn exact_mgf(
    dist: &ExactDistribution,
    f: &LocalFunction,
    anchor: &Site,
    lambda: f64,
) -> Result<f64, ExactError> {
    Ok(log_mgf_centered(&value_masses(dist, f, anchor)?, lambda))
}

/// Comparison slack for `f - mean >= u`.
pub const TAIL_SLACK: f64 = 1e-12;

/// `mu(f - int f d mu >= u)`.
pub fn exact_tail(
    dist: &ExactDistribution,
    f: &LocalFunction,
    anchor: &Site,
    u: f64,
) -> Result<f64, ExactError> {
    if !(u > 0.0) {
        return Err(ExactError::NonPositiveU(u));
    }
    let vm = value_masses(dist, f, anchor)?;
    let total: f64 = vm.iter().map(|(_, w)| w).sum();
    let mean = vm.iter().map(|(v, w)| v * w).sum::<f64>() / total;
    Ok(vm
        .iter()
        .filter(|(v, _)| v - mean >= u - TAIL_SLACK)
        .map(|(_, w)| w)
        .sum())
}

pub fn exact_marginal(dist: &ExactDistribution, sites: &[Site]) -> Result<Vec<f64>, ExactError> {
    dist.marginal(sites)
}

#[derive(Clone, Debug, Serialize)]
pub struct EntropyReport {
    pub volume: Vec<Site>,
    /// `Ent_Lambda(mu | nu)`; infinite when `mu_Lambda` is not absolutely
    /// continuous with respect to `nu_Lambda`.
    pub ent: f64,
    pub finite: bool,
}

/// Relative entropy of two marginal tables, `0 log 0 = 0`.
pub fn relative_entropy_tables(mu: &[f64], nu: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (&p, &q) in mu.iter().zip(nu) {
        if p <= 0.0 {
            continue;
        }
        if q <= 0.0 {
            return f64::INFINITY;
        }
        acc += p * (p / q).ln();
    }
    acc.max(0.0)
}

/// `Ent_Lambda(mu | nu) = sum_s mu_Lambda(s) log(mu_Lambda(s) / nu_Lambda(s))`.
pub fn exact_relative_entropy(
    mu: &ExactDistribution,
    nu: &ExactDistribution,
    sites: &[Site],
) -> Result<EntropyReport, ExactError> {
    if mu.torus != nu.torus {
        return Err(ExactError::TorusMismatch);
    }
    let ent = relative_entropy_tables(&mu.marginal(sites)?, &nu.marginal(sites)?);
    Ok(EntropyReport {
        volume: sites.to_vec(),
        ent,
        finite: ent.is_finite(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::spin_of;
    use crate::rule::Builtin;

    /// Dense `2^M x 2^M` product, the reference for the sweep.
    fn dense_step(probs: &[f64], rule: &FourierRule, torus: &Torus) -> Vec<f64> {
        let m = torus.len();
        let support = rule.support();
        let n = 1usize << m;
        let mut out = vec![0.0; n];
        for (eta, &w) in probs.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            let p: Vec<f64> = (0..m)
                .map(|x| {
                    let h = rule
                        .evaluate_h_with(|s| {
                            let pos = support.iter().position(|t| t == s)?;
                            Some(spin_of(eta, torus.shift(x, &support[pos])))
                        })
                        .unwrap();
                    (1.0 + h) / 2.0
                })
                .collect();
            for (sigma, o) in out.iter_mut().enumerate() {
                let pr: f64 = (0..m)
                    .map(|x| {
                        if (sigma >> x) & 1 == 1 {
                            p[x]
                        } else {
                            1.0 - p[x]
                        }
                    })
                    .product();
                *o += w * pr;
            }
        }
        out
    }

    fn random_probs(n: usize, seed: u64) -> Vec<f64> {
        let mut s = seed;
        let mut v: Vec<f64> = (0..n)
            .map(|_| {
                s = s
                    .wrapping_mul(6364136223846793005)
                    .wrapping_add(1442695040888963407);
                (s >> 11) as f64 / (1u64 << 53) as f64
            })
            .collect();
        let t: f64 = v.iter().sum();
        v.iter_mut().for_each(|x| *x /= t);
        v
    }

    #[test]
    fn sweep_matches_dense_product() {
        let cases: Vec<(FourierRule, Torus)> = vec![
            (
                Builtin::Stavskaya { eps: 0.3 }.rule(),
                Torus::ring(6).unwrap(),
            ),
            (
                Builtin::NoisyMajority3 { eps: 0.2 }.rule(),
                Torus::ring(7).unwrap(),
            ),
            (
                Builtin::ToomNec { eps: 0.25 }.rule(),
                Torus::new(vec![3, 3]).unwrap(),
            ),
            (
                Builtin::IndependentFlip { m: 0.1, rho: 0.6 }.rule(),
                Torus::ring(5).unwrap(),
            ),
            (
                FourierRule::new(
                    1,
                    [
                        (crate::OffsetSet::d1(&[1, 2]), 0.5),
                        (crate::OffsetSet::empty(), 0.2),
                    ],
                )
                .unwrap(),
                Torus::ring(6).unwrap(),
            ),
            (Builtin::AlwaysPlus.rule(), Torus::ring(4).unwrap()),
        ];
        for (i, (rule, torus)) in cases.iter().enumerate() {
            let probs = random_probs(1 << torus.len(), i as u64 + 1);
            let dense = dense_step(&probs, rule, torus);
            let dist = ExactDistribution::new(torus.clone(), probs).unwrap();
            let fast = exact_step(&dist, rule).unwrap();
            for (a, b) in fast.probs().iter().zip(&dense) {
                assert!((a - b).abs() < 1e-14, "case {i}");
            }
            assert!((fast.total_mass() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn step_examples() {
        let t = Torus::ring(4).unwrap();
        let start = ExactDistribution::dirac(&TorusConfig::from_index(&t, 0b0110)).unwrap();
        let next = exact_step(&start, &Builtin::AlwaysPlus.rule()).unwrap();
        assert_eq!(next.probs()[0b1111], 1.0);

        let u = ExactDistribution::uniform(&t).unwrap();
        let next = exact_step(&u, &Builtin::IndependentFlip { m: 0.0, rho: 0.7 }.rule()).unwrap();
        assert!(next.probs().iter().all(|p| (p - 1.0 / 16.0).abs() < 1e-15));

        let minus = ExactDistribution::dirac(&TorusConfig::all_minus(&t)).unwrap();
        let eps = 0.3;
        let next = exact_step(&minus, &Builtin::Stavskaya { eps }.rule()).unwrap();
        let expected = ExactDistribution::product(&t, eps).unwrap();
        assert!(next.l1_distance(&expected).unwrap() < 1e-14);
    }

    #[test]
    fn stationary_examples() {
        let t = Torus::ring(6).unwrap();
        let (m, rho) = (0.2, 0.5);
        let (mu, rep) = exact_stationary(
            &Builtin::IndependentFlip { m, rho }.rule(),
            &t,
            1e-13,
            10_000,
        )
        .unwrap();
        assert!(rep.residual <= 1e-13);
        let target = ExactDistribution::product(&t, (1.0 + m / (1.0 - rho)) / 2.0).unwrap();
        assert!(mu.l1_distance(&target).unwrap() < 1e-10);

        let (mu, _) = exact_stationary(&Builtin::AlwaysPlus.rule(), &t, 1e-12, 10).unwrap();
        assert!((mu.probs()[63] - 1.0).abs() < 1e-15);

        let err =
            exact_stationary(&Builtin::Stavskaya { eps: 0.01 }.rule(), &t, 1e-15, 3).unwrap_err();
        assert!(matches!(
            err,
            ExactError::NonConvergence { iterations: 3, .. }
        ));
        assert!(err.is_resource_limit());
    }

    #[test]
    fn mgf_and_tail_examples() {
        let t = Torus::ring(3).unwrap();
        let fair = ExactDistribution::product(&t, 0.5).unwrap();
        let f = LocalFunction::spin(Site::d1(0));
        let o = Site::d1(0);
        assert_eq!(exact_mgf(&fair, &f, &o, 0.0).unwrap(), 0.0);
        for &l in &[-3.0, -0.5, 0.7, 2.0] {
            let v = exact_mgf(&fair, &f, &o, l).unwrap();
            assert!((v - f64::cosh(l).ln()).abs() < 1e-14);
            assert!(v <= l * l / 2.0);
        }
        let dirac = ExactDistribution::dirac(&TorusConfig::from_index(&t, 5)).unwrap();
        assert_eq!(exact_mgf(&dirac, &f, &o, 3.0).unwrap(), 0.0);

        assert_eq!(exact_tail(&fair, &f, &o, 0.5).unwrap(), 0.5);
        assert_eq!(exact_tail(&fair, &f, &o, 2.5).unwrap(), 0.0);
        let sum = LocalFunction::sum(1, vec![Site::d1(-1), Site::d1(0), Site::d1(1)]).unwrap();
        assert_eq!(exact_tail(&fair, &sum, &o, 2.0).unwrap(), 0.125);
        assert!(exact_tail(&fair, &sum, &o, 0.0).is_err());
    }

    #[test]
    fn entropy_examples() {
        let t = Torus::ring(5).unwrap();
        let (p, q) = (0.3, 0.6);
        let mu = ExactDistribution::product(&t, p).unwrap();
        let nu = ExactDistribution::product(&t, q).unwrap();
        let vol: Vec<Site> = (0..3).map(Site::d1).collect();
        let e = exact_relative_entropy(&mu, &nu, &vol).unwrap();
        let one = p * (p / q).ln() + (1.0 - p) * ((1.0 - p) / (1.0 - q)).ln();
        assert!((e.ent - 3.0 * one).abs() < 1e-13);
        assert_eq!(exact_relative_entropy(&mu, &mu, &vol).unwrap().ent, 0.0);
        let plus = ExactDistribution::dirac(&TorusConfig::all_plus(&t)).unwrap();
        let minus = ExactDistribution::dirac(&TorusConfig::all_minus(&t)).unwrap();
        let e = exact_relative_entropy(&plus, &minus, &vol).unwrap();
        assert!(e.ent.is_infinite() && !e.finite);
        let e = exact_relative_entropy(&plus, &mu, &vol).unwrap();
        assert!((e.ent + (p * p * p).ln()).abs() < 1e-12);
    }

    #[test]
    fn marginal_and_pushforward() {
        let t = Torus::ring(4).unwrap();
        let mu = ExactDistribution::product_sitewise(&t, &[0.1, 0.2, 0.3, 0.4]).unwrap();
        let m = mu.marginal(&[Site::d1(2), Site::d1(0)]).unwrap();
        assert!((m[0b11] - 0.03).abs() < 1e-15);
        assert!((m[0b01] - 0.27).abs() < 1e-15);
        assert!(mu.marginal(&[Site::d1(0), Site::d1(4)]).is_err());
        let f = LocalFunction::spin(Site::d1(0));
        let e = mu.expectation(&f, &Site::d1(5)).unwrap();
        assert!((e - (-0.6)).abs() < 1e-15);
    }

    #[test]
    fn apply_transfer_duality() {
        let t = Torus::ring(7).unwrap();
        let rule = Builtin::NoisyMajority3 { eps: 0.15 }.rule();
        let mu = ExactDistribution::new(t.clone(), random_probs(128, 99)).unwrap();
        let next = exact_step(&mu, &rule).unwrap();
        let f = LocalFunction::from_fn(1, vec![Site::d1(0), Site::d1(1)], |s| {
            s[0] + 0.5 * s[0] * s[1] + 0.1
        })
        .unwrap();
        let pf = f.apply_transfer(&rule).unwrap();
        let o = Site::d1(2);
        let lhs = mu.expectation(&pf, &o).unwrap();
        let rhs = next.expectation(&f, &o).unwrap();
        assert!((lhs - rhs).abs() < 1e-11);
    }

    #[test]
    fn caps() {
        assert!(matches!(
            ExactDistribution::uniform(&Torus::ring(23).unwrap()),
            Err(ExactError::TooLarge { .. })
        ));
    }
}
