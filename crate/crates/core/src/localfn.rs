//! Local observables on `{-1,+1}^{Z^d}` and the exact action of the
//! transition operator on them.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::lattice::{canonical_order, permute_table_bits, spin_of, Site};
use crate::rule::{CompiledRule, FourierRule, RuleError};

/// Default cap on the dependence-set size (tables of at most `2^20` entries).
pub const DEFAULT_SITE_CAP: usize = 20;
/// Sites whose oscillation falls below this after applying `P` are dropped.
pub const PRUNE_TOL: f64 = 1e-14;

#[derive(Debug, Error)]
pub enum LocalFnError {
    #[error("dependence set of {sites} sites exceeds the cap of {cap}")]
    SiteCap { sites: usize, cap: usize },
    #[error("table has {found} entries, expected {expected}")]
    TableSize { found: usize, expected: usize },
    #[error("site {0:?} appears twice")]
    DuplicateSite(Site),
    #[error("site {site:?} has dimension {found}, expected {expected}")]
    DimensionMismatch {
        site: Site,
        found: usize,
        expected: usize,
    },
    #[error("rule dimension {rule} does not match function dimension {function}")]
    RuleDimension { rule: usize, function: usize },
    #[error("table entry {0} is not finite")]
    NonFinite(usize),
    #[error(transparent)]
    Rule(#[from] RuleError),
}

impl LocalFnError {
    pub fn is_resource_limit(&self) -> bool {
        match self {
            LocalFnError::SiteCap { .. } => true,
            LocalFnError::Rule(e) => e.is_resource_limit(),
            _ => false,
        }
    }
}

/// A function of finitely many spins, stored as a value table.
///
/// Sites are kept in canonical (sorted) order; bit `i` of a table index is the
/// spin of `sites[i]` with bit 1 meaning `+1`.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalFunction {
    dimension: usize,
    sites: Vec<Site>,
    table: Vec<f64>,
}

impl LocalFunction {
    /// Sites may come in any order; the table is re-indexed to canonical order.
    pub fn new(dimension: usize, sites: Vec<Site>, table: Vec<f64>) -> Result<Self, LocalFnError> {
        Self::with_cap(dimension, sites, table, DEFAULT_SITE_CAP)
    }

    pub fn with_cap(
        dimension: usize,
        sites: Vec<Site>,
        table: Vec<f64>,
        cap: usize,
    ) -> Result<Self, LocalFnError> {
        if sites.len() > cap {
            return Err(LocalFnError::SiteCap {
                sites: sites.len(),
                cap,
            });
        }
        let expected = 1usize << sites.len();
        if table.len() != expected {
            return Err(LocalFnError::TableSize {
                found: table.len(),
                expected,
            });
        }
        for s in &sites {
            if s.dimension() != dimension {
                return Err(LocalFnError::DimensionMismatch {
                    site: s.clone(),
                    found: s.dimension(),
                    expected: dimension,
                });
            }
        }
        if let Some(i) = table.iter().position(|v| !v.is_finite()) {
            return Err(LocalFnError::NonFinite(i));
        }
        let (sorted, perm) = canonical_order(&sites).map_err(LocalFnError::DuplicateSite)?;
        let table = if perm.iter().enumerate().all(|(i, &p)| i == p) {
            table
        } else {
            permute_table_bits(&table, &perm)
        };
        Ok(LocalFunction {
            dimension,
            sites: sorted,
            table,
        })
    }

    /// Tabulates `f` where `f` receives the spins in the order of `sites`.
    pub fn from_fn(
        dimension: usize,
        sites: Vec<Site>,
        f: impl Fn(&[f64]) -> f64,
    ) -> Result<Self, LocalFnError> {
        let n = sites.len();
        if n > DEFAULT_SITE_CAP {
            return Err(LocalFnError::SiteCap {
                sites: n,
                cap: DEFAULT_SITE_CAP,
            });
        }
        let mut spins = vec![0.0; n];
        let table = (0..1usize << n)
            .map(|idx| {
                for (i, s) in spins.iter_mut().enumerate() {
                    *s = spin_of(idx, i);
                }
                f(&spins)
            })
            .collect();
        Self::new(dimension, sites, table)
    }

    pub fn constant(dimension: usize, value: f64) -> Self {
        LocalFunction {
            dimension,
            sites: Vec::new(),
            table: vec![value],
        }
    }

    /// `sigma_x`.
    pub fn spin(site: Site) -> Self {
        let d = site.dimension();
        Self::from_fn(d, vec![site], |s| s[0]).expect("one site")
    }

    /// `prod_{x in sites} sigma_x`.
    pub fn product(dimension: usize, sites: Vec<Site>) -> Result<Self, LocalFnError> {
        Self::from_fn(dimension, sites, |s| s.iter().product())
    }

    /// `sum_{x in sites} sigma_x`.
    pub fn sum(dimension: usize, sites: Vec<Site>) -> Result<Self, LocalFnError> {
        Self::from_fn(dimension, sites, |s| s.iter().sum())
    }

    /// Indicator of the all-plus pattern on `sites`.
    pub fn all_plus_indicator(dimension: usize, sites: Vec<Site>) -> Result<Self, LocalFnError> {
        Self::from_fn(dimension, sites, |s| {
            if s.iter().all(|&v| v > 0.0) {
                1.0
            } else {
                0.0
            }
        })
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn sites(&self) -> &[Site] {
        &self.sites
    }

    pub fn table(&self) -> &[f64] {
        &self.table
    }

    pub fn value(&self, index: usize) -> f64 {
        self.table[index]
    }

    pub fn min_value(&self) -> f64 {
        self.table.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_value(&self) -> f64 {
        self.table.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// `max f - min f`.
    pub fn range(&self) -> f64 {
        self.max_value() - self.min_value()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        LocalFunction {
            dimension: self.dimension,
            sites: self.sites.clone(),
            table: self.table.iter().map(|v| v * factor).collect(),
        }
    }

    /// `f(tau_offset .)`: the same function anchored at `sites + offset`.
    pub fn translate(&self, offset: &Site) -> Self {
        LocalFunction {
            dimension: self.dimension,
            sites: self.sites.iter().map(|s| s.add(offset)).collect(),
            table: self.table.clone(),
        }
    }

    /// Re-expresses the function on a superset of its sites.
    pub fn lift(&self, sites: &[Site]) -> Result<Self, LocalFnError> {
        let mut all: Vec<Site> = sites.iter().chain(&self.sites).cloned().collect();
        all.sort();
        all.dedup();
        if all.len() > DEFAULT_SITE_CAP {
            return Err(LocalFnError::SiteCap {
                sites: all.len(),
                cap: DEFAULT_SITE_CAP,
            });
        }
        let pos: Vec<usize> = self
            .sites
            .iter()
            .map(|s| all.binary_search(s).expect("subset"))
            .collect();
        let table = (0..1usize << all.len())
            .map(|idx| self.table[gather_bits(idx, &pos)])
            .collect();
        Ok(LocalFunction {
            dimension: self.dimension,
            sites: all,
            table,
        })
    }

    /// Pointwise `op(f, g)` on the union of both dependence sets.
    pub fn combine(
        &self,
        other: &LocalFunction,
        op: impl Fn(f64, f64) -> f64,
    ) -> Result<Self, LocalFnError> {
        let a = self.lift(&other.sites)?;
        let b = other.lift(&self.sites)?;
        let table = a
            .table
            .iter()
            .zip(&b.table)
            .map(|(x, y)| op(*x, *y))
            .collect();
        Ok(LocalFunction {
            dimension: self.dimension,
            sites: a.sites,
            table,
        })
    }

    /// `delta_x f = sup_sigma (f(sigma^x) - f(sigma))` for every dependence site.
    pub fn oscillation(&self) -> OscillationVector {
        let osc = table_oscillation(&self.table, self.sites.len());
        OscillationVector {
            dimension: self.dimension,
            values: self.sites.iter().cloned().zip(osc).collect(),
        }
    }

    /// `||delta f||_p`; `p = f64::INFINITY` gives the maximum.
    pub fn delta_norm(&self, p: f64) -> f64 {
        self.oscillation().norm(p)
    }

    /// `Pf(eta) = E[f(sigma_1) | sigma_0 = eta]` as an exact local function.
    pub fn apply_transfer(&self, rule: &FourierRule) -> Result<LocalFunction, LocalFnError> {
        self.apply_transfer_with_cap(rule, DEFAULT_SITE_CAP)
    }

    pub fn apply_transfer_with_cap(
        &self,
        rule: &FourierRule,
        cap: usize,
    ) -> Result<LocalFunction, LocalFnError> {
        let full = transfer_unpruned(self, rule, cap)?;
        Ok(full.pruned(PRUNE_TOL))
    }

    /// Drops sites whose oscillation is below `tol`.
    pub fn pruned(&self, tol: f64) -> LocalFunction {
        let osc = table_oscillation(&self.table, self.sites.len());
        let keep: Vec<usize> = (0..self.sites.len()).filter(|&i| osc[i] >= tol).collect();
        if keep.len() == self.sites.len() {
            return self.clone();
        }
        let table = (0..1usize << keep.len())
            .map(|idx| {
                let mut full = 0usize;
                for (j, &i) in keep.iter().enumerate() {
                    full |= ((idx >> j) & 1) << i;
                }
                self.table[full]
            })
            .collect();
        LocalFunction {
            dimension: self.dimension,
            sites: keep.iter().map(|&i| self.sites[i].clone()).collect(),
            table,
        }
    }
}

#[inline]
pub(crate) fn gather_bits(index: usize, positions: &[usize]) -> usize {
    positions
        .iter()
        .enumerate()
        .fold(0usize, |acc, (j, &p)| acc | (((index >> p) & 1) << j))
}

/// Oscillation of a table along each of its `n` bits.
pub(crate) fn table_oscillation(table: &[f64], n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| {
            let bit = 1usize << i;
            (0..table.len())
                .filter(|idx| idx & bit == 0)
                .map(|idx| (table[idx | bit] - table[idx]).abs())
                .fold(0.0, f64::max)
        })
        .collect()
}

/// Expectation of `table` under independent spins with `P(+1) = p[i]` for bit `i`.
fn product_expectation(table: &[f64], p: &[f64], scratch: &mut Vec<f64>) -> f64 {
    scratch.clear();
    scratch.extend_from_slice(table);
    let mut len = table.len();
    for &pi in p.iter().rev() {
        len /= 2;
        let (lo, hi) = scratch.split_at_mut(len);
        for (a, b) in lo.iter_mut().zip(hi.iter()) {
            *a = (1.0 - pi) * *a + pi * *b;
        }
    }
    scratch[0]
}

fn transfer_unpruned(
    f: &LocalFunction,
    rule: &FourierRule,
    cap: usize,
) -> Result<LocalFunction, LocalFnError> {
    if rule.dimension() != f.dimension {
        return Err(LocalFnError::RuleDimension {
            rule: rule.dimension(),
            function: f.dimension,
        });
    }
    let compiled = CompiledRule::new(rule)?;
    let support = compiled.support().to_vec();
    let mut deps: Vec<Site> = f
        .sites
        .iter()
        .flat_map(|x| support.iter().map(move |s| x.add(s)))
        .collect();
    deps.sort();
    deps.dedup();
    if deps.len() > cap {
        return Err(LocalFnError::SiteCap {
            sites: deps.len(),
            cap,
        });
    }
    let positions: Vec<Vec<usize>> = f
        .sites
        .iter()
        .map(|x| {
            support
                .iter()
                .map(|s| deps.binary_search(&x.add(s)).expect("in dependence set"))
                .collect()
        })
        .collect();
    let table: Vec<f64> = (0..1usize << deps.len())
        .into_par_iter()
        .map_init(
            || (vec![0.0; f.sites.len()], Vec::with_capacity(f.table.len())),
            |(p, scratch), eta| {
                for (pi, pos) in p.iter_mut().zip(&positions) {
                    *pi = compiled.prob_plus(gather_bits(eta, pos) as u64);
                }
                product_expectation(&f.table, p, scratch)
            },
        )
        .collect();
    Ok(LocalFunction {
        dimension: f.dimension,
        sites: deps,
        table,
    })
}

/// Oscillations `delta_x f` indexed by site.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OscillationVector {
    pub dimension: usize,
    pub values: BTreeMap<Site, f64>,
}

impl OscillationVector {
    pub fn get(&self, site: &Site) -> f64 {
        self.values.get(site).copied().unwrap_or(0.0)
    }

    pub fn norm(&self, p: f64) -> f64 {
        if p.is_infinite() {
            self.values.values().copied().fold(0.0, f64::max)
        } else if p == 1.0 {
            self.values.values().sum()
        } else if p == 2.0 {
            self.norm_sq().sqrt()
        } else {
            self.values
                .values()
                .map(|v| v.powf(p))
                .sum::<f64>()
                .powf(1.0 / p)
        }
    }

    /// `||delta f||_2^2`.
    pub fn norm_sq(&self) -> f64 {
        self.values.values().map(|v| v * v).sum()
    }

    /// `(psi * delta f)_x = sum_y psi(x - y) delta_y f`.
    pub fn spread(&self, psi: &crate::rule::Kernel) -> BTreeMap<Site, f64> {
        let mut out = BTreeMap::new();
        for (y, dy) in &self.values {
            for (z, w) in psi.values() {
                *out.entry(y.add(z)).or_insert(0.0) += w * dy;
            }
        }
        out
    }
}

/// Site-by-site comparison of `delta_x(Pf)` with `(psi * delta f)_x`.
#[derive(Clone, Debug, Serialize)]
pub struct ContractionReport {
    pub sites: Vec<SiteContraction>,
    /// `max_x (lhs_x - rhs_x)`, clipped below at 0.
    pub max_violation: f64,
    /// `||delta(Pf)||_2^2`.
    pub l2_lhs_sq: f64,
    /// `kappa ||delta f||_2^2`.
    pub l2_bound: f64,
    pub l2_violation: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct SiteContraction {
    pub site: Site,
    pub lhs: f64,
    pub rhs: f64,
}

/// Evaluates both sides of the one-step contraction inequality exactly.
pub fn check_contraction(
    f: &LocalFunction,
    rule: &FourierRule,
) -> Result<ContractionReport, LocalFnError> {
    let pf = transfer_unpruned(f, rule, DEFAULT_SITE_CAP)?;
    let lhs = pf.oscillation();
    let rhs = f.oscillation().spread(&rule.psi());
    let mut sites: Vec<Site> = lhs.values.keys().chain(rhs.keys()).cloned().collect();
    sites.sort();
    sites.dedup();
    let mut max_violation = 0.0f64;
    let rows: Vec<SiteContraction> = sites
        .into_iter()
        .map(|site| {
            let l = lhs.get(&site);
            let r = rhs.get(&site).copied().unwrap_or(0.0);
            max_violation = max_violation.max(l - r);
            SiteContraction {
                site,
                lhs: l,
                rhs: r,
            }
        })
        .collect();
    let l2_lhs_sq = lhs.norm_sq();
    let l2_bound = rule.kappa() * f.oscillation().norm_sq();
    Ok(ContractionReport {
        sites: rows,
        max_violation,
        l2_lhs_sq,
        l2_bound,
        l2_violation: (l2_lhs_sq - l2_bound).max(0.0),
    })
}

/// A function of the space-time configuration on finitely many layers.
///
/// The joint table uses layer 0's sites on the lowest bits, then layer 1's, and so on.
#[derive(Clone, Debug, PartialEq)]
pub struct SpaceTimeFunction {
    dimension: usize,
    layers: Vec<Vec<Site>>,
    table: Vec<f64>,
}

impl SpaceTimeFunction {
    pub fn new(
        dimension: usize,
        layers: Vec<Vec<Site>>,
        table: Vec<f64>,
    ) -> Result<Self, LocalFnError> {
        let total: usize = layers.iter().map(Vec::len).sum();
        if total > DEFAULT_SITE_CAP {
            return Err(LocalFnError::SiteCap {
                sites: total,
                cap: DEFAULT_SITE_CAP,
            });
        }
        if table.len() != 1usize << total {
            return Err(LocalFnError::TableSize {
                found: table.len(),
                expected: 1usize << total,
            });
        }
        for layer in &layers {
            canonical_order(layer).map_err(LocalFnError::DuplicateSite)?;
            for s in layer {
                if s.dimension() != dimension {
                    return Err(LocalFnError::DimensionMismatch {
                        site: s.clone(),
                        found: s.dimension(),
                        expected: dimension,
                    });
                }
            }
        }
        Ok(SpaceTimeFunction {
            dimension,
            layers,
            table,
        })
    }

    /// Tabulates `f(spins)` where `spins[n][i]` is the spin of `layers[n][i]` at time `n`.
    pub fn from_fn(
        dimension: usize,
        layers: Vec<Vec<Site>>,
        f: impl Fn(&[Vec<f64>]) -> f64,
    ) -> Result<Self, LocalFnError> {
        let total: usize = layers.iter().map(Vec::len).sum();
        if total > DEFAULT_SITE_CAP {
            return Err(LocalFnError::SiteCap {
                sites: total,
                cap: DEFAULT_SITE_CAP,
            });
        }
        let mut spins: Vec<Vec<f64>> = layers.iter().map(|l| vec![0.0; l.len()]).collect();
        let table = (0..1usize << total)
            .map(|idx| {
                let mut bit = 0;
                for layer in spins.iter_mut() {
                    for s in layer.iter_mut() {
                        *s = spin_of(idx, bit);
                        bit += 1;
                    }
                }
                f(&spins)
            })
            .collect();
        Self::new(dimension, layers, table)
    }

    pub fn layers(&self) -> &[Vec<Site>] {
        &self.layers
    }

    /// Per-layer oscillation vectors `delta^n f` and `||delta f||_2^2 = sum_n ||delta^n f||_2^2`.
    pub fn oscillation(&self) -> SpaceTimeOscillation {
        let total: usize = self.layers.iter().map(Vec::len).sum();
        let osc = table_oscillation(&self.table, total);
        let mut it = osc.into_iter();
        let layers: Vec<OscillationVector> = self
            .layers
            .iter()
            .map(|sites| OscillationVector {
                dimension: self.dimension,
                values: sites.iter().cloned().zip(it.by_ref()).collect(),
            })
            .collect();
        let total_sq = layers.iter().map(OscillationVector::norm_sq).sum();
        SpaceTimeOscillation { layers, total_sq }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SpaceTimeOscillation {
    pub layers: Vec<OscillationVector>,
    pub total_sq: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::OffsetSet;
    use crate::rule::Builtin;

    fn s(x: i64) -> Site {
        Site::d1(x)
    }

    #[test]
    fn oscillation_examples() {
        let f = LocalFunction::spin(s(0));
        assert_eq!(f.oscillation().get(&s(0)), 2.0);
        let ind = LocalFunction::all_plus_indicator(1, vec![s(0), s(1)]).unwrap();
        let o = ind.oscillation();
        assert_eq!((o.get(&s(0)), o.get(&s(1))), (1.0, 1.0));
        let prod = LocalFunction::product(1, vec![s(0), s(1)]).unwrap();
        let o = prod.oscillation();
        assert_eq!((o.get(&s(0)), o.get(&s(1))), (2.0, 2.0));
        assert_eq!(o.get(&s(5)), 0.0);
    }

    #[test]
    fn norm_examples() {
        assert_eq!(LocalFunction::spin(s(0)).oscillation().norm_sq(), 4.0);
        let k = 5;
        let sum = LocalFunction::sum(1, (0..k).map(s).collect()).unwrap();
        assert_eq!(sum.oscillation().norm_sq(), 4.0 * k as f64);
        assert_eq!(sum.delta_norm(1.0), 2.0 * k as f64);
        assert_eq!(sum.delta_norm(f64::INFINITY), 2.0);
        let ind = LocalFunction::all_plus_indicator(1, vec![s(0), s(1)]).unwrap();
        assert_eq!(ind.oscillation().norm_sq(), 2.0);
        assert!((ind.delta_norm(3.0) - 2f64.powf(1.0 / 3.0)).abs() < 1e-15);
    }

    #[test]
    fn unordered_sites_are_canonicalized() {
        // f = sigma_1 - 2 sigma_0 given in (1, 0) order
        let f = LocalFunction::from_fn(1, vec![s(1), s(0)], |v| v[0] - 2.0 * v[1]).unwrap();
        assert_eq!(f.sites(), &[s(0), s(1)]);
        let o = f.oscillation();
        assert_eq!(o.get(&s(0)), 4.0);
        assert_eq!(o.get(&s(1)), 2.0);
    }

    #[test]
    fn transfer_of_single_spin_is_h() {
        let rule = Builtin::Stavskaya { eps: 0.3 }.rule();
        let pf = LocalFunction::spin(s(0)).apply_transfer(&rule).unwrap();
        let h = rule.h_table().unwrap();
        assert_eq!(pf.sites(), &rule.support()[..]);
        for (a, b) in pf.table().iter().zip(&h) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn transfer_non_interacting_iterates() {
        let rho = 0.7;
        let rule = Builtin::IndependentFlip { m: 0.0, rho }.rule();
        let mut f = LocalFunction::spin(s(0));
        for k in 1..=4 {
            f = f.apply_transfer(&rule).unwrap();
            assert_eq!(f.sites(), &[s(0)]);
            assert!((f.value(1) - rho.powi(k)).abs() < 1e-12);
            assert!((f.value(0) + rho.powi(k)).abs() < 1e-12);
        }
    }

    #[test]
    fn transfer_majority() {
        let eps = 0.2;
        let rule = Builtin::NoisyMajority3 { eps }.rule();
        let pf = LocalFunction::spin(s(0)).apply_transfer(&rule).unwrap();
        assert_eq!(pf.sites(), &[s(-1), s(0), s(1)]);
        for idx in 0..8 {
            let total: f64 = (0..3).map(|i| spin_of(idx, i)).sum();
            let maj = total.signum();
            assert!((pf.value(idx) - (1.0 - 2.0 * eps) * maj).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_rule_maps_to_constants() {
        let rule = FourierRule::new(1, [(OffsetSet::empty(), 0.4)]).unwrap();
        let f = LocalFunction::product(1, vec![s(0), s(3)]).unwrap();
        let pf = f.apply_transfer(&rule).unwrap();
        assert!(pf.sites().is_empty());
        assert!((pf.value(0) - 0.16).abs() < 1e-12);
        let rep = check_contraction(&f, &rule).unwrap();
        assert_eq!(rep.max_violation, 0.0);
        assert!(rep.sites.iter().all(|r| r.lhs == 0.0 && r.rhs == 0.0));
    }

    #[test]
    fn contraction_examples() {
        let rho = 0.6;
        let rule = Builtin::IndependentFlip { m: 0.0, rho }.rule();
        let rep = check_contraction(&LocalFunction::spin(s(0)), &rule).unwrap();
        assert_eq!(rep.sites.len(), 1);
        assert!((rep.sites[0].lhs - 2.0 * rho).abs() < 1e-12);
        assert!((rep.sites[0].rhs - 2.0 * rho).abs() < 1e-12);

        let rule = Builtin::NoisyMajority3 { eps: 0.2 }.rule();
        let rep = check_contraction(&LocalFunction::spin(s(0)), &rule).unwrap();
        for row in &rep.sites {
            assert!((row.lhs - 1.2).abs() < 1e-12, "{row:?}");
            assert!((row.rhs - 1.2).abs() < 1e-12);
        }
        assert!(rep.max_violation <= 1e-12);
        assert!(rep.l2_lhs_sq <= rep.l2_bound + 1e-9);
    }

    #[test]
    fn cap_is_enforced() {
        let rule = Builtin::NoisyMajority3 { eps: 0.2 }.rule();
        let f = LocalFunction::sum(1, (0..6).map(s).collect()).unwrap();
        assert!(matches!(
            f.apply_transfer_with_cap(&rule, 7),
            Err(LocalFnError::SiteCap { sites: 8, cap: 7 })
        ));
        assert!(LocalFunction::new(1, (0..21).map(s).collect(), vec![0.0; 1 << 21]).is_err());
    }

    #[test]
    fn spacetime_examples() {
        let layers = vec![vec![s(0)], vec![s(0)]];
        let f = SpaceTimeFunction::from_fn(1, layers, |v| v[0][0] * v[1][0]).unwrap();
        let o = f.oscillation();
        assert_eq!(o.layers[0].get(&s(0)), 2.0);
        assert_eq!(o.layers[1].get(&s(0)), 2.0);
        assert_eq!(o.total_sq, 8.0);

        let layers = vec![vec![s(0), s(1)], vec![s(0), s(1)]];
        let ind = SpaceTimeFunction::from_fn(1, layers, |v| {
            if v.iter().flatten().all(|&x| x > 0.0) {
                1.0
            } else {
                0.0
            }
        })
        .unwrap();
        assert_eq!(ind.oscillation().total_sq, 4.0);

        let g = LocalFunction::product(1, vec![s(0), s(2)]).unwrap();
        let st = SpaceTimeFunction::new(1, vec![g.sites().to_vec()], g.table().to_vec()).unwrap();
        let o = st.oscillation();
        assert_eq!(o.layers[0], g.oscillation());
        assert_eq!(o.total_sq, g.oscillation().norm_sq());
    }

    #[test]
    fn combine_and_lift() {
        let a = LocalFunction::spin(s(0));
        let b = LocalFunction::spin(s(2));
        let c = a.combine(&b, |x, y| x + 2.0 * y).unwrap();
        assert_eq!(c.sites(), &[s(0), s(2)]);
        assert_eq!(c.oscillation().get(&s(2)), 4.0);
        let l = a.lift(&[s(-1), s(0)]).unwrap();
        assert_eq!(l.sites(), &[s(-1), s(0)]);
        assert_eq!(l.oscillation().get(&s(-1)), 0.0);
        assert_eq!(l.pruned(PRUNE_TOL), a);
    }
}
