//! PCA update rules in Fourier form.
//!
//! A translation-invariant binary PCA is fully described by finitely many
//! coefficients `r_A` indexed by finite offset sets `A`:
//!
//! ```text
//! h_x(eta) = sum_A r_A prod_{y in A} eta_{x+y},   P(sigma_x = +1 | eta) = (1 + h_x(eta)) / 2.
//! ```
//!
//! From the coefficients we derive the spreading kernel `psi(x) = sum_{A ∋ x} |r_A|`,
//! the contraction coefficient `kappa = ||psi||_1^2`, the propagation speed
//! and the finite-energy constant of stationary measures.

use std::collections::BTreeMap;
use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::lattice::{canonical_order, permute_table_bits, OffsetSet, Site};
use crate::walsh;

/// Union supports up to this size are checked by exact enumeration.
pub const DEFAULT_EXACT_THRESHOLD: usize = 24;
/// Coefficients smaller than this after expansion are not stored.
pub const COEFF_DROP_TOL: f64 = 1e-15;
/// Slack on `|h| <= 1` accepted as admissible.
pub const ADMISSIBLE_TOL: f64 = 1e-12;
/// Default cap on the support size of convolution powers of `psi`.
pub const DEFAULT_KERNEL_CAP: usize = 1 << 20;
/// Largest neighbourhood for which a rule is compiled to a lookup table.
pub const TABLE_COMPILE_LIMIT: usize = 16;

#[derive(Debug, Error)]
pub enum RuleError {
    #[error("lattice dimension must be at least 1")]
    ZeroDimension,
    #[error("site {site:?} has dimension {found}, expected {expected}")]
    DimensionMismatch {
        site: Site,
        found: usize,
        expected: usize,
    },
    #[error("site {0:?} appears twice in the neighbourhood")]
    DuplicateSite(Site),
    #[error("probability table has {found} entries, expected 2^{sites} = {expected}")]
    TableSize {
        found: usize,
        sites: usize,
        expected: usize,
    },
    #[error("table length {0} is not a power of two")]
    NotPowerOfTwo(usize),
    #[error("probability {value} at index {index} lies outside [0, 1]")]
    ProbabilityOutOfRange { index: usize, value: f64 },
    #[error("coefficient for {set} is not finite")]
    NonFiniteCoefficient { set: String },
    #[error("assignment has no spin for site {0:?}")]
    MissingSite(Site),
    #[error("unknown built-in model `{0}` (expected stavskaya, toom_nec, noisy_majority3, independent_flip, always_plus)")]
    UnknownModel(String),
    #[error("model `{model}` expects {expected} parameter(s), got {found}")]
    ParameterCount {
        model: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("parameter {name} = {value} is out of range ({reason})")]
    ParameterOutOfRange {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },
    #[error("kernel support of {size} sites exceeds the cap of {cap}")]
    KernelCap { size: usize, cap: usize },
    #[error("rule support of {sites} sites is too large to tabulate (limit {limit})")]
    SupportTooLarge { sites: usize, limit: usize },
    #[error("finite energy needs the exact maximum of |h|, but the support of {sites} sites exceeds the exact threshold")]
    InexactValidation { sites: usize },
}

impl RuleError {
    pub fn is_resource_limit(&self) -> bool {
        matches!(
            self,
            RuleError::KernelCap { .. } | RuleError::SupportTooLarge { .. }
        )
    }
}

fn check_dimension(site: &Site, dimension: usize) -> Result<(), RuleError> {
    if site.dimension() != dimension {
        return Err(RuleError::DimensionMismatch {
            site: site.clone(),
            found: site.dimension(),
            expected: dimension,
        });
    }
    Ok(())
}

/// Conditional probabilities of `+1` given every assignment of an ordered
/// neighbourhood. Bit `i` of the index is the spin of `neighborhood[i]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbTable {
    dimension: usize,
    neighborhood: Vec<Site>,
    probs: Vec<f64>,
}

impl ProbTable {
    pub fn new(
        dimension: usize,
        neighborhood: Vec<Site>,
        probs: Vec<f64>,
    ) -> Result<Self, RuleError> {
        if dimension == 0 {
            return Err(RuleError::ZeroDimension);
        }
        if !probs.len().is_power_of_two() {
            return Err(RuleError::NotPowerOfTwo(probs.len()));
        }
        let n = neighborhood.len();
        if n >= usize::BITS as usize || probs.len() != 1usize << n {
            return Err(RuleError::TableSize {
                found: probs.len(),
                sites: n,
                expected: 1usize.checked_shl(n as u32).unwrap_or(0),
            });
        }
        for s in &neighborhood {
            check_dimension(s, dimension)?;
        }
        canonical_order(&neighborhood).map_err(RuleError::DuplicateSite)?;
        for (index, &value) in probs.iter().enumerate() {
            if !(0.0..=1.0).contains(&value) {
                return Err(RuleError::ProbabilityOutOfRange { index, value });
            }
        }
        Ok(ProbTable {
            dimension,
            neighborhood,
            probs,
        })
    }

    /// Tabulates `g(spins)` where `spins[i]` is the spin of `neighborhood[i]`.
    pub fn from_fn(
        dimension: usize,
        neighborhood: Vec<Site>,
        g: impl Fn(&[f64]) -> f64,
    ) -> Result<Self, RuleError> {
        let n = neighborhood.len();
        let mut spins = vec![0.0; n];
        let probs = (0..1usize << n)
            .map(|idx| {
                for (i, s) in spins.iter_mut().enumerate() {
                    *s = crate::lattice::spin_of(idx, i);
                }
                g(&spins)
            })
            .collect();
        ProbTable::new(dimension, neighborhood, probs)
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn neighborhood(&self) -> &[Site] {
        &self.neighborhood
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }
}

/// Multilinear expansion of a probability table:
/// `r_A = 2^{-N} sum_eta (2 g(eta) - 1) eta_A`.
pub fn walsh_expand(table: &ProbTable) -> FourierRule {
    let h: Vec<f64> = table.probs.iter().map(|p| 2.0 * p - 1.0).collect();
    let coeffs = walsh::table_to_coefficients(&h);
    let nb = &table.neighborhood;
    let entries = coeffs.iter().enumerate().map(|(mask, &r)| {
        let set = OffsetSet::new(
            (0..nb.len())
                .filter(|i| (mask >> i) & 1 == 1)
                .map(|i| nb[i].clone()),
        );
        (set, r)
    });
    FourierRule::new(table.dimension, entries).expect("expansion of a valid table is a valid rule")
}

/// A PCA rule given by its nonzero Fourier coefficients.
#[derive(Clone, PartialEq)]
pub struct FourierRule {
    dimension: usize,
    coeffs: BTreeMap<OffsetSet, f64>,
}

impl fmt::Debug for FourierRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FourierRule")
            .field("dimension", &self.dimension)
            .field("coeffs", &self.coeffs)
            .finish()
    }
}

impl FourierRule {
    /// Repeated sets are summed; coefficients below [`COEFF_DROP_TOL`] in
    /// magnitude are dropped.
    pub fn new(
        dimension: usize,
        coeffs: impl IntoIterator<Item = (OffsetSet, f64)>,
    ) -> Result<Self, RuleError> {
        if dimension == 0 {
            return Err(RuleError::ZeroDimension);
        }
        let mut map: BTreeMap<OffsetSet, f64> = BTreeMap::new();
        for (set, r) in coeffs {
            if !r.is_finite() {
                return Err(RuleError::NonFiniteCoefficient {
                    set: set.to_string(),
                });
            }
            for s in set.sites() {
                check_dimension(s, dimension)?;
            }
            *map.entry(set).or_insert(0.0) += r;
        }
        map.retain(|_, r| r.abs() >= COEFF_DROP_TOL);
        Ok(FourierRule {
            dimension,
            coeffs: map,
        })
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn coeffs(&self) -> &BTreeMap<OffsetSet, f64> {
        &self.coeffs
    }

    pub fn coefficient(&self, set: &OffsetSet) -> f64 {
        self.coeffs.get(set).copied().unwrap_or(0.0)
    }

    /// Union of all sets carrying a nonzero coefficient, sorted.
    pub fn support(&self) -> Vec<Site> {
        let mut s: Vec<Site> = self
            .coeffs
            .keys()
            .flat_map(|a| a.sites().iter().cloned())
            .collect();
        s.sort();
        s.dedup();
        s
    }

    pub fn sum_abs(&self) -> f64 {
        self.coeffs.values().map(|r| r.abs()).sum()
    }

    /// True when `h_x` depends on `eta_x` alone.
    pub fn is_non_interacting(&self) -> bool {
        let origin = Site::origin(self.dimension);
        self.coeffs
            .keys()
            .all(|a| a.sites().iter().all(|s| *s == origin))
    }

    /// `h_0(eta) = sum_A r_A prod_{y in A} eta_y`.
    pub fn evaluate_h(&self, assignment: &BTreeMap<Site, i8>) -> Result<f64, RuleError> {
        self.evaluate_h_with(|s| assignment.get(s).map(|&v| if v > 0 { 1.0 } else { -1.0 }))
    }

    /// As [`evaluate_h`](Self::evaluate_h) with the spins supplied by a closure.
    pub fn evaluate_h_with(&self, spin: impl Fn(&Site) -> Option<f64>) -> Result<f64, RuleError> {
        let mut h = 0.0;
        for (set, r) in &self.coeffs {
            let mut prod = 1.0;
            for s in set.sites() {
                prod *= spin(s).ok_or_else(|| RuleError::MissingSite(s.clone()))?;
            }
            h += r * prod;
        }
        Ok(h)
    }

    /// `h_0` on every assignment of the union support (bit `i` = spin of
    /// `support()[i]`), by one Walsh–Hadamard transform.
    pub fn h_table(&self) -> Result<Vec<f64>, RuleError> {
        let support = self.support();
        if support.len() > 30 {
            return Err(RuleError::SupportTooLarge {
                sites: support.len(),
                limit: 30,
            });
        }
        let mut coeff_vec = vec![0.0; 1usize << support.len()];
        for (set, r) in &self.coeffs {
            coeff_vec[mask_in(&support, set)] += r;
        }
        Ok(walsh::coefficients_to_table(&coeff_vec))
    }

    /// Tabulates `P(+1 | eta)` over the union support.
    pub fn to_prob_table(&self) -> Result<ProbTable, RuleError> {
        let h = self.h_table()?;
        let probs = h
            .iter()
            .map(|v| ((1.0 + v) / 2.0).clamp(0.0, 1.0))
            .collect();
        ProbTable::new(self.dimension, self.support(), probs)
    }

    /// Admissibility report. Supports of at most `exact_threshold` sites are
    /// enumerated exactly; larger ones fall back to `sum |r_A|`.
    pub fn validate(&self, exact_threshold: usize) -> ValidationReport {
        let support = self.support();
        let sum_abs_r = self.sum_abs();
        let (h_max, exact) = if support.len() <= exact_threshold.min(30) {
            let table = self.h_table().expect("support within tabulation limit");
            (table.iter().fold(0.0f64, |m, v| m.max(v.abs())), true)
        } else {
            (sum_abs_r, false)
        };
        ValidationReport {
            h_max,
            sum_abs_r,
            p_min: ((1.0 - h_max) / 2.0).max(0.0),
            admissible: h_max <= 1.0 + ADMISSIBLE_TOL,
            exact,
            support_size: support.len(),
        }
    }

    /// `psi(x) = sum_{A ∋ x} |r_A|`.
    pub fn psi(&self) -> Kernel {
        let mut values: BTreeMap<Site, f64> = BTreeMap::new();
        for (set, r) in &self.coeffs {
            for s in set.sites() {
                *values.entry(s.clone()).or_insert(0.0) += r.abs();
            }
        }
        Kernel::from_map(self.dimension, values)
    }

    /// `kappa = (sum_A |A| |r_A|)^2`.
    pub fn kappa(&self) -> f64 {
        let l1: f64 = self
            .coeffs
            .iter()
            .map(|(a, r)| a.len() as f64 * r.abs())
            .sum();
        l1 * l1
    }

    /// k-fold convolution power of `psi`; `k = 0` gives the unit mass at
    /// the origin.
    pub fn psi_power(&self, k: usize) -> Result<Kernel, RuleError> {
        self.psi_power_with_cap(k, DEFAULT_KERNEL_CAP)
    }

    pub fn psi_power_with_cap(&self, k: usize, cap: usize) -> Result<Kernel, RuleError> {
        let psi = self.psi();
        let mut acc = Kernel::unit(self.dimension);
        for _ in 0..k {
            acc = acc.convolve(&psi, cap)?;
        }
        Ok(acc)
    }

    /// Largest `||y||_inf` over the sites of all sets with `r_A != 0`.
    pub fn propagation_speed(&self) -> u64 {
        self.coeffs
            .keys()
            .flat_map(|a| a.sites().iter().map(Site::linf_norm))
            .max()
            .unwrap_or(0)
    }

    /// `rho = -log((1 - h_max)/2)`, the finite-energy constant shared by every
    /// stationary measure; `+inf` when some transition is deterministic.
    pub fn finite_energy_rho(&self) -> Result<f64, RuleError> {
        let report = self.validate(DEFAULT_EXACT_THRESHOLD);
        if !report.exact {
            return Err(RuleError::InexactValidation {
                sites: report.support_size,
            });
        }
        Ok(report.finite_energy_rho())
    }

    pub fn compile(&self) -> Result<CompiledRule, RuleError> {
        CompiledRule::new(self)
    }
}

/// Bitmask of `set` inside the sorted `support`.
fn mask_in(support: &[Site], set: &OffsetSet) -> usize {
    set.sites().iter().fold(0usize, |m, s| {
        let i = support
            .binary_search(s)
            .expect("set is contained in the support");
        m | (1 << i)
    })
}

/// Outcome of [`FourierRule::validate`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ValidationReport {
    /// Exact `max |h_0|` when `exact`, otherwise the bound `sum |r_A|`.
    pub h_max: f64,
    pub sum_abs_r: f64,
    /// `(1 - h_max) / 2`, the smallest one-site transition probability.
    pub p_min: f64,
    pub admissible: bool,
    pub exact: bool,
    pub support_size: usize,
}

impl ValidationReport {
    pub fn finite_energy_rho(&self) -> f64 {
        if self.h_max >= 1.0 - ADMISSIBLE_TOL {
            f64::INFINITY
        } else {
            -self.p_min.ln()
        }
    }
}

/// A rule lowered to its support list and a fast evaluator of `P(+1 | eta)`.
///
/// Local indices use bit `j` for the spin of `support[j]`.
#[derive(Clone, Debug)]
pub struct CompiledRule {
    support: Vec<Site>,
    eval: Evaluator,
}

#[derive(Clone, Debug)]
enum Evaluator {
    Table(Vec<f64>),
    Terms(Vec<(u64, f64)>),
}

impl CompiledRule {
    pub fn new(rule: &FourierRule) -> Result<Self, RuleError> {
        let support = rule.support();
        let eval = if support.len() <= TABLE_COMPILE_LIMIT {
            let h = rule.h_table()?;
            Evaluator::Table(
                h.iter()
                    .map(|v| ((1.0 + v) / 2.0).clamp(0.0, 1.0))
                    .collect(),
            )
        } else if support.len() <= 64 {
            Evaluator::Terms(
                rule.coeffs
                    .iter()
                    .map(|(a, &r)| (mask_in(&support, a) as u64, r))
                    .collect(),
            )
        } else {
            return Err(RuleError::SupportTooLarge {
                sites: support.len(),
                limit: 64,
            });
        };
        Ok(CompiledRule { support, eval })
    }

    pub fn support(&self) -> &[Site] {
        &self.support
    }

    /// `P(+1 | eta)` for the local assignment `bits`.
    #[inline]
    pub fn prob_plus(&self, bits: u64) -> f64 {
        match &self.eval {
            Evaluator::Table(t) => t[bits as usize],
            Evaluator::Terms(terms) => {
                let minus = !bits;
                let h: f64 = terms
                    .iter()
                    .map(|&(m, r)| {
                        if (m & minus).count_ones() % 2 == 0 {
                            r
                        } else {
                            -r
                        }
                    })
                    .sum();
                ((1.0 + h) / 2.0).clamp(0.0, 1.0)
            }
        }
    }
}

/// A nonnegative, finitely supported kernel on `Z^d`; zero values are not stored.
#[derive(Clone, Debug, PartialEq)]
pub struct Kernel {
    dimension: usize,
    values: BTreeMap<Site, f64>,
}

impl Kernel {
    pub fn from_map(dimension: usize, mut values: BTreeMap<Site, f64>) -> Self {
        values.retain(|_, v| *v > 0.0);
        Kernel { dimension, values }
    }

    /// Unit mass at the origin.
    pub fn unit(dimension: usize) -> Self {
        let mut values = BTreeMap::new();
        values.insert(Site::origin(dimension), 1.0);
        Kernel { dimension, values }
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn values(&self) -> &BTreeMap<Site, f64> {
        &self.values
    }

    pub fn get(&self, site: &Site) -> f64 {
        self.values.get(site).copied().unwrap_or(0.0)
    }

    pub fn support_size(&self) -> usize {
        self.values.len()
    }

    pub fn l1(&self) -> f64 {
        self.values.values().sum()
    }

    pub fn l2(&self) -> f64 {
        self.l2_squared().sqrt()
    }

    pub fn l2_squared(&self) -> f64 {
        self.values.values().map(|v| v * v).sum()
    }

    /// Exact convolution over `Z^d`.
    pub fn convolve(&self, other: &Kernel, cap: usize) -> Result<Kernel, RuleError> {
        let mut out: BTreeMap<Site, f64> = BTreeMap::new();
        for (x, a) in &self.values {
            for (y, b) in &other.values {
                *out.entry(x.add(y)).or_insert(0.0) += a * b;
                if out.len() > cap {
                    return Err(RuleError::KernelCap {
                        size: out.len(),
                        cap,
                    });
                }
            }
        }
        Ok(Kernel::from_map(self.dimension, out))
    }
}

/// The built-in model library.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Builtin {
    /// One-dimensional Stavskaya model: `+1` when `eta_0 = eta_1 = +1`,
    /// otherwise `+1` with probability `eps`.
    Stavskaya {
        eps: f64,
    },
    /// Two-dimensional North-East-Center majority with noise `eps` toward `+1`.
    ToomNec {
        eps: f64,
    },
    /// Majority of `eta_{-1}, eta_0, eta_1`, flipped with probability `eps`.
    NoisyMajority3 {
        eps: f64,
    },
    /// `h = m + rho eta_0`.
    IndependentFlip {
        m: f64,
        rho: f64,
    },
    AlwaysPlus,
}

impl Builtin {
    pub fn parse(name: &str, params: &[f64]) -> Result<Self, RuleError> {
        fn expect(model: &'static str, params: &[f64], n: usize) -> Result<(), RuleError> {
            if params.len() != n {
                return Err(RuleError::ParameterCount {
                    model,
                    expected: n,
                    found: params.len(),
                });
            }
            Ok(())
        }
        fn unit(name: &'static str, v: f64) -> Result<f64, RuleError> {
            if !(0.0..=1.0).contains(&v) {
                return Err(RuleError::ParameterOutOfRange {
                    name,
                    value: v,
                    reason: "must lie in [0, 1]",
                });
            }
            Ok(v)
        }
        fn finite(name: &'static str, v: f64) -> Result<f64, RuleError> {
            if !v.is_finite() {
                return Err(RuleError::ParameterOutOfRange {
                    name,
                    value: v,
                    reason: "must be finite",
                });
            }
            Ok(v)
        }
        let model = match name {
            "stavskaya" => {
                expect("stavskaya", params, 1)?;
                Builtin::Stavskaya {
                    eps: unit("eps", params[0])?,
                }
            }
            "toom_nec" => {
                expect("toom_nec", params, 1)?;
                Builtin::ToomNec {
                    eps: unit("eps", params[0])?,
                }
            }
            "noisy_majority3" => {
                expect("noisy_majority3", params, 1)?;
                Builtin::NoisyMajority3 {
                    eps: unit("eps", params[0])?,
                }
            }
            "independent_flip" => {
                expect("independent_flip", params, 2)?;
                Builtin::IndependentFlip {
                    m: finite("m", params[0])?,
                    rho: finite("rho", params[1])?,
                }
            }
            "always_plus" => {
                expect("always_plus", params, 0)?;
                Builtin::AlwaysPlus
            }
            other => return Err(RuleError::UnknownModel(other.to_string())),
        };
        Ok(model)
    }

    /// Closed-form coefficients.
    pub fn rule(&self) -> FourierRule {
        let s1 = OffsetSet::d1;
        let coeffs: (usize, Vec<(OffsetSet, f64)>) = match *self {
            Builtin::Stavskaya { eps } => {
                let a = (1.0 - eps) / 2.0;
                (
                    1,
                    vec![
                        (OffsetSet::empty(), (3.0 * eps - 1.0) / 2.0),
                        (s1(&[0]), a),
                        (s1(&[1]), a),
                        (s1(&[0, 1]), a),
                    ],
                )
            }
            Builtin::ToomNec { eps } => {
                let a = (1.0 - eps) / 2.0;
                let n = Site::new(vec![0, 1]);
                let e = Site::new(vec![1, 0]);
                let c = Site::new(vec![0, 0]);
                (
                    2,
                    vec![
                        (OffsetSet::empty(), eps),
                        (OffsetSet::new([n.clone()]), a),
                        (OffsetSet::new([e.clone()]), a),
                        (OffsetSet::new([c.clone()]), a),
                        (OffsetSet::new([n, e, c]), -a),
                    ],
                )
            }
            Builtin::NoisyMajority3 { eps } => {
                let a = (1.0 - 2.0 * eps) / 2.0;
                (
                    1,
                    vec![
                        (s1(&[-1]), a),
                        (s1(&[0]), a),
                        (s1(&[1]), a),
                        (s1(&[-1, 0, 1]), -a),
                    ],
                )
            }
            Builtin::IndependentFlip { m, rho } => {
                (1, vec![(OffsetSet::empty(), m), (s1(&[0]), rho)])
            }
            Builtin::AlwaysPlus => (1, vec![(OffsetSet::empty(), 1.0)]),
        };
        FourierRule::new(coeffs.0, coeffs.1).expect("built-in coefficients are finite")
    }
}

/// Looks up a built-in model by name, e.g. `builtin("stavskaya", &[0.8])`.
pub fn builtin(name: &str, params: &[f64]) -> Result<FourierRule, RuleError> {
    Ok(Builtin::parse(name, params)?.rule())
}

/// Reorders a neighbourhood table to canonical (sorted) site order.
pub fn canonicalize_table(table: &ProbTable) -> ProbTable {
    let (sorted, perm) = canonical_order(&table.neighborhood).expect("validated");
    ProbTable {
        dimension: table.dimension,
        probs: permute_table_bits(&table.probs, &perm),
        neighborhood: sorted,
    }
}
