//! Concentration constants propagated by a PCA.
//!
//! Starting from a GCB constant `C` and a one-step product constant `c`
//! (1/4 by default), one step of a PCA with contraction coefficient `kappa`
//! yields `C_1 = c + C kappa`; iterating gives `C_n` and, when `kappa < 1`,
//! the stationary constant `C_inf = c / (1 - kappa)`.

use serde::Serialize;
use thiserror::Error;

use crate::rule::{FourierRule, RuleError};

/// Gaussian constant of any product measure on `{-1,+1}`.
pub const DEFAULT_PRODUCT_C: f64 = 0.25;
/// `|kappa - 1|` below this is treated as `kappa = 1`.
pub const KAPPA_ONE_TOL: f64 = 1e-12;
/// Relative tolerance and iteration cap of [`largest_singular_value`].
pub const SVD_TOL: f64 = 1e-10;
pub const SVD_MAX_ITER: usize = 10_000;

#[derive(Debug, Error)]
pub enum ConstantsError {
    #[error("{name} must be nonnegative and finite, got {value}")]
    Negative { name: &'static str, value: f64 },
    #[error("{name} must be positive and finite, got {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error("kappa = {kappa} is not contractive (kappa < 1 required)")]
    NotContractive { kappa: f64 },
    #[error("finite-energy constant rho is infinite: some transition probability is 0, so stationary cylinder probabilities admit no exponential lower bound")]
    InfiniteRho,
    #[error("singular value iteration did not converge after {iterations} iterations (relative change {change:e})")]
    NoConvergence { iterations: usize, change: f64 },
    #[error(transparent)]
    Rule(#[from] RuleError),
}

fn nonneg(name: &'static str, value: f64) -> Result<f64, ConstantsError> {
    if value.is_finite() && value >= 0.0 {
        Ok(value)
    } else {
        Err(ConstantsError::Negative { name, value })
    }
}

fn positive(name: &'static str, value: f64) -> Result<f64, ConstantsError> {
    if value.is_finite() && value > 0.0 {
        Ok(value)
    } else {
        Err(ConstantsError::NonPositive { name, value })
    }
}

/// `C_1 = c + C kappa`.
pub fn gcb_after_one(c: f64, big_c: f64, kappa: f64) -> Result<f64, ConstantsError> {
    positive("c", c)?;
    nonneg("C", big_c)?;
    nonneg("kappa", kappa)?;
    Ok(c + big_c * kappa)
}

/// Closed form of `C_n`: `c (1 - kappa^n)/(1 - kappa) + C kappa^n`, or `c n + C` at `kappa = 1`.
pub fn gcb_after_n(c: f64, big_c: f64, kappa: f64, n: u64) -> Result<f64, ConstantsError> {
    positive("c", c)?;
    nonneg("C", big_c)?;
    nonneg("kappa", kappa)?;
    if (kappa - 1.0).abs() < KAPPA_ONE_TOL {
        return Ok(c * n as f64 + big_c);
    }
    let kn = kappa.powf(n as f64);
    if kn.is_infinite() {
        // kappa > 1: C_n = (c/(kappa-1) + C) kappa^n - c/(kappa-1), in log space
        let shift = c / (kappa - 1.0);
        let lead = (n as f64 * kappa.ln() + (shift + big_c).ln()).exp();
        return Ok(lead - shift);
    }
    let geometric = c * (kn - 1.0) / (kappa - 1.0);
    // C = 0 must not meet kappa^n = inf
    let carried = if big_c == 0.0 { 0.0 } else { big_c * kn };
    Ok(geometric + carried)
}

/// `C_n` by applying `C -> c + C kappa` `n` times.
pub fn gcb_iterate(c: f64, big_c: f64, kappa: f64, n: u64) -> Result<f64, ConstantsError> {
    let mut acc = nonneg("C", big_c)?;
    for _ in 0..n {
        acc = gcb_after_one(c, acc, kappa)?;
        if acc.is_infinite() {
            break;
        }
    }
    Ok(acc)
}

/// `C_inf = c / (1 - kappa)`.
pub fn gcb_stationary(c: f64, kappa: f64) -> Result<f64, ConstantsError> {
    positive("c", c)?;
    nonneg("kappa", kappa)?;
    if kappa >= 1.0 {
        return Err(ConstantsError::NotContractive { kappa });
    }
    Ok(c / (1.0 - kappa))
}

/// `C' = ((sqrt(c) v sqrt(C)) / (1 - sqrt(kappa)))^2`.
pub fn spacetime_constant(c: f64, big_c: f64, kappa: f64) -> Result<f64, ConstantsError> {
    positive("c", c)?;
    nonneg("C", big_c)?;
    nonneg("kappa", kappa)?;
    if kappa >= 1.0 {
        return Err(ConstantsError::NotContractive { kappa });
    }
    let top = c.sqrt().max(big_c.sqrt());
    let v = top / (1.0 - kappa.sqrt());
    Ok(v * v)
}

/// The `(n+1) x (n+1)` matrix bounding space-time oscillations by
/// per-layer oscillations, with its norms.
#[derive(Clone, Debug, Serialize)]
pub struct SpaceTimeMatrix {
    pub n: usize,
    pub entries: Vec<Vec<f64>>,
    pub norm_inf: f64,
    pub norm_1: f64,
    /// Largest singular value.
    pub norm_2_exact: f64,
    /// `sqrt(norm_inf * norm_1)`.
    pub norm_2_bound: f64,
    pub iterations: usize,
}

/// Rows `i < n` hold `sqrt(c) sqrt(kappa)^j` at column `n - i + j` for `j <= i`;
/// row `n` holds `sqrt(C) sqrt(kappa)^j` at column `j`.
pub fn spacetime_matrix(
    n: usize,
    c: f64,
    big_c: f64,
    kappa: f64,
) -> Result<SpaceTimeMatrix, ConstantsError> {
    positive("c", c)?;
    nonneg("C", big_c)?;
    nonneg("kappa", kappa)?;
    let size = n + 1;
    let sk = kappa.sqrt();
    let mut a = vec![vec![0.0; size]; size];
    for (i, row) in a.iter_mut().enumerate().take(n) {
        let mut w = c.sqrt();
        for j in 0..=i {
            row[n - i + j] = w;
            w *= sk;
        }
    }
    let mut w = big_c.sqrt();
    for j in 0..=n {
        a[n][j] = w;
        w *= sk;
    }
    let norm_inf = a
        .iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let norm_1 = (0..size)
        .map(|j| a.iter().map(|r| r[j].abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let (sigma, iterations) = largest_singular_value(&a, SVD_TOL, SVD_MAX_ITER)?;
    Ok(SpaceTimeMatrix {
        n,
        entries: a,
        norm_inf,
        norm_1,
        norm_2_exact: sigma,
        norm_2_bound: (norm_inf * norm_1).sqrt(),
        iterations,
    })
}

/// Largest singular value by Lanczos iteration on `A^T A` from the all-ones
/// vector, with full reorthogonalization. Stops when the top Ritz value moves
/// by at most `tol` (relative) or the Krylov space becomes invariant.
pub fn largest_singular_value(
    a: &[Vec<f64>],
    tol: f64,
    max_iter: usize,
) -> Result<(f64, usize), ConstantsError> {
    let cols = a.first().map_or(0, Vec::len);
    if cols == 0 {
        return Ok((0.0, 0));
    }
    let gram = |v: &[f64]| {
        let av: Vec<f64> = a
            .iter()
            .map(|r| r.iter().zip(v).map(|(x, y)| x * y).sum())
            .collect();
        let mut w = vec![0.0; cols];
        for (r, s) in a.iter().zip(&av) {
            for (wj, x) in w.iter_mut().zip(r) {
                *wj += x * s;
            }
        }
        w
    };
    let dot = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>();
    let mut basis: Vec<Vec<f64>> = vec![vec![1.0 / (cols as f64).sqrt(); cols]];
    let mut alpha: Vec<f64> = Vec::new();
    let mut beta: Vec<f64> = Vec::new();
    let mut theta = 0.0f64;
    let mut change = f64::INFINITY;
    for it in 1..=max_iter {
        let q = basis.last().expect("nonempty basis");
        let mut w = gram(q);
        alpha.push(dot(q, &w));
        for _ in 0..2 {
            for b in &basis {
                let h = dot(b, &w);
                w.iter_mut().zip(b).for_each(|(x, y)| *x -= h * y);
            }
        }
        let next = top_tridiagonal_eigenvalue(&alpha, &beta);
        change = (next - theta).abs() / next.abs().max(f64::MIN_POSITIVE);
        theta = next;
        let norm = dot(&w, &w).sqrt();
        if theta <= 0.0 && norm == 0.0 {
            return Ok((0.0, it));
        }
        if norm <= 1e-14 * theta || it == cols || (it > 1 && change <= tol) {
            return Ok((theta.max(0.0).sqrt(), it));
        }
        beta.push(norm);
        basis.push(w.into_iter().map(|x| x / norm).collect());
    }
    Err(ConstantsError::NoConvergence {
        iterations: max_iter,
        change,
    })
}

/// Largest eigenvalue of the symmetric tridiagonal matrix with diagonal
/// `alpha` and off-diagonal `beta`, by Sturm-sequence bisection.
fn top_tridiagonal_eigenvalue(alpha: &[f64], beta: &[f64]) -> f64 {
    let n = alpha.len();
    let radius = |i: usize| {
        (if i > 0 { beta[i - 1].abs() } else { 0.0 })
            + (if i + 1 < n { beta[i].abs() } else { 0.0 })
    };
    let mut lo = (0..n)
        .map(|i| alpha[i] - radius(i))
        .fold(f64::INFINITY, f64::min);
    let mut hi = (0..n)
        .map(|i| alpha[i] + radius(i))
        .fold(f64::NEG_INFINITY, f64::max);
    // eigenvalues strictly below x
    let below = |x: f64| {
        let mut count = 0;
        let mut d = 1.0;
        for i in 0..n {
            let off = if i > 0 {
                beta[i - 1] * beta[i - 1] / d
            } else {
                0.0
            };
            d = alpha[i] - x - off;
            if d == 0.0 {
                d = -f64::EPSILON * (x.abs() + 1.0);
            }
            if d < 0.0 {
                count += 1;
            }
        }
        count
    };
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if below(mid) == n {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

/// `|C_m| = (2m + 1)^d`, the number of sites of the cube of radius `m`.
pub fn cube_size(m: u64, dimension: usize) -> f64 {
    ((2 * m + 1) as f64).powi(dimension as i32)
}

/// Inputs of the relaxation bounds.
#[derive(Clone, Debug, Serialize)]
pub struct RelaxationInput {
    pub big_c: f64,
    pub rho: f64,
    pub kappa: f64,
    pub dimension: usize,
    pub n: u64,
    pub k: u64,
    pub a: u64,
    pub psi_k_l1: f64,
    pub psi_k_l2: f64,
}

/// Upper bounds on squared distances between `nu P^k` and a stationary `mu`
/// satisfying GCB(C) with finite energy `rho`.
#[derive(Clone, Debug, Serialize)]
pub struct RelaxationBound {
    pub big_c: f64,
    pub rho: f64,
    pub n: u64,
    pub k: u64,
    pub a: u64,
    /// `|C_{n+ak}|`.
    pub volume: f64,
    /// Bound on `D_{inf,C_n}^2`: `2 C rho |C_{n+ak}| ||psi_k||_2^2`.
    pub d_inf_sq_bound: f64,
    /// Bound on `D_{2,C_n}^2`: `2 C rho |C_{n+ak}| ||psi_k||_1^2`.
    pub d_2_sq_bound: f64,
    /// Bound on the squared d-bar distance: `2 C rho ||psi_k||_1^2`.
    pub dbar_sq_bound: f64,
    /// `2 C rho kappa^k`, which dominates `dbar_sq_bound`.
    pub dbar_exp_bound: f64,
}

pub fn relaxation_bounds(input: &RelaxationInput) -> Result<RelaxationBound, ConstantsError> {
    nonneg("C", input.big_c)?;
    if input.rho.is_infinite() {
        return Err(ConstantsError::InfiniteRho);
    }
    nonneg("rho", input.rho)?;
    nonneg("kappa", input.kappa)?;
    nonneg("psi_k_l1", input.psi_k_l1)?;
    nonneg("psi_k_l2", input.psi_k_l2)?;
    let base = 2.0 * input.big_c * input.rho;
    let volume = cube_size(input.n + input.a * input.k, input.dimension);
    Ok(RelaxationBound {
        big_c: input.big_c,
        rho: input.rho,
        n: input.n,
        k: input.k,
        a: input.a,
        volume,
        d_inf_sq_bound: base * volume * input.psi_k_l2 * input.psi_k_l2,
        d_2_sq_bound: base * volume * input.psi_k_l1 * input.psi_k_l1,
        dbar_sq_bound: base * input.psi_k_l1 * input.psi_k_l1,
        dbar_exp_bound: base * input.kappa.powf(input.k as f64),
    })
}

impl RelaxationBound {
    /// Bounds for `rule` after `k` steps on the cube `C_n`, with `rho` from the rule.
    pub fn for_rule(
        rule: &FourierRule,
        big_c: f64,
        n: u64,
        k: u64,
    ) -> Result<Self, ConstantsError> {
        let rho = rule.finite_energy_rho()?;
        if rho.is_infinite() {
            return Err(ConstantsError::InfiniteRho);
        }
        let psi_k = rule.psi_power(k as usize)?;
        relaxation_bounds(&RelaxationInput {
            big_c,
            rho,
            kappa: rule.kappa(),
            dimension: rule.dimension(),
            n,
            k,
            a: rule.propagation_speed(),
            psi_k_l1: psi_k.l1(),
            psi_k_l2: psi_k.l2(),
        })
    }
}

/// The constants of one run: inputs, `C_n` table and the derived stationary
/// and space-time constants.
#[derive(Clone, Debug, Serialize)]
pub struct ConstantLedger {
    pub c: f64,
    pub c0: f64,
    pub kappa: f64,
    /// `C_n` for `n = 0..=n_max`.
    pub c_n: Vec<f64>,
    pub c_inf: Option<f64>,
    pub c_prime: Option<f64>,
}

impl ConstantLedger {
    pub fn new(c: f64, c0: f64, kappa: f64, n_max: u64) -> Result<Self, ConstantsError> {
        let c_n = (0..=n_max)
            .map(|n| gcb_after_n(c, c0, kappa, n))
            .collect::<Result<Vec<_>, _>>()?;
        let contractive = kappa < 1.0;
        Ok(ConstantLedger {
            c,
            c0,
            kappa,
            c_n,
            c_inf: contractive.then(|| gcb_stationary(c, kappa)).transpose()?,
            c_prime: contractive
                .then(|| spacetime_constant(c, c0, kappa))
                .transpose()?,
        })
    }

    pub fn c_at(&self, n: u64) -> Result<f64, ConstantsError> {
        gcb_after_n(self.c, self.c0, self.kappa, n)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() <= 1e-12 * b.abs().max(1.0)
    }

    #[test]
    fn one_step_examples() {
        assert_eq!(gcb_after_one(0.25, 7.0, 0.0).unwrap(), 0.25);
        assert_eq!(gcb_after_one(0.25, 0.25, 0.25).unwrap(), 0.3125);
        assert_eq!(gcb_after_one(0.25, 0.0, 0.9).unwrap(), 0.25);
        assert!(gcb_after_one(0.25, -1.0, 0.5).is_err());
        assert!(gcb_after_one(0.0, 1.0, 0.5).is_err());
    }

    #[test]
    fn n_step_examples() {
        assert_eq!(gcb_after_n(0.25, 1.0, 1.0, 8).unwrap(), 3.0);
        assert!(close(gcb_after_n(0.25, 2.0, 0.5, 2000).unwrap(), 0.5));
        assert!(close(
            gcb_after_n(0.25, 0.25, 0.25, 2).unwrap(),
            21.0 / 64.0
        ));
        assert_eq!(gcb_after_n(0.25, 3.0, 0.7, 0).unwrap(), 3.0);
        // near-one kappa takes the linear branch
        assert_eq!(gcb_after_n(0.25, 1.0, 1.0 + 1e-13, 8).unwrap(), 3.0);
    }

    #[test]
    fn overflow_stays_infinite() {
        let v = gcb_after_n(0.25, 0.0, 1.5, 10_000).unwrap();
        assert!(v.is_infinite() && v > 0.0);
        let w = gcb_iterate(0.25, 0.0, 1.5, 10_000).unwrap();
        assert!(w.is_infinite());
    }

    #[test]
    fn stationary_examples() {
        assert_eq!(gcb_stationary(0.25, 0.0).unwrap(), 0.25);
        assert_eq!(gcb_stationary(0.25, 0.5).unwrap(), 0.5);
        assert!(close(
            gcb_stationary(0.25, 0.16).unwrap(),
            0.297_619_047_619_047_6
        ));
        assert!(matches!(
            gcb_stationary(0.25, 1.0),
            Err(ConstantsError::NotContractive { .. })
        ));
    }

    #[test]
    fn spacetime_constant_examples() {
        assert!(close(spacetime_constant(0.25, 0.25, 0.0).unwrap(), 0.25));
        assert!(close(spacetime_constant(0.25, 1.0, 0.25).unwrap(), 4.0));
        assert!(close(
            spacetime_constant(0.25, 0.25, 0.16).unwrap(),
            (0.5f64 / 0.6).powi(2)
        ));
    }

    #[test]
    fn matrix_examples() {
        let m = spacetime_matrix(0, 0.25, 0.81, 0.3).unwrap();
        assert_eq!(m.entries, vec![vec![0.9]]);
        assert!(close(m.norm_2_exact, 0.9));
        assert!(close(m.norm_inf, 0.9) && close(m.norm_1, 0.9));

        let m = spacetime_matrix(1, 1.0, 1.0, 0.0).unwrap();
        assert_eq!(m.entries, vec![vec![0.0, 1.0], vec![1.0, 0.0]]);
        assert!(close(m.norm_2_exact, 1.0));

        let m = spacetime_matrix(2, 0.25, 1.0, 0.25).unwrap();
        let e = &m.entries;
        assert_eq!(e[0], vec![0.0, 0.0, 0.5]);
        assert_eq!(e[1], vec![0.0, 0.5, 0.25]);
        assert_eq!(e[2], vec![1.0, 0.5, 0.25]);
    }

    #[test]
    fn kappa_zero_has_one_entry_per_row() {
        let m = spacetime_matrix(7, 0.25, 0.5, 0.0).unwrap();
        for row in &m.entries {
            assert_eq!(row.iter().filter(|v| **v != 0.0).count(), 1);
        }
    }

    #[test]
    fn relaxation_examples() {
        let input = RelaxationInput {
            big_c: 0.3,
            rho: 2.0,
            kappa: 0.0,
            dimension: 1,
            n: 1,
            k: 4,
            a: 1,
            psi_k_l1: 0.0,
            psi_k_l2: 0.0,
        };
        let b = relaxation_bounds(&input).unwrap();
        assert_eq!(b.d_inf_sq_bound, 0.0);
        assert_eq!(b.d_2_sq_bound, 0.0);
        assert_eq!(b.dbar_sq_bound, 0.0);
        assert_eq!(b.dbar_exp_bound, 0.0);
        assert_eq!(b.volume, 11.0);

        let b = relaxation_bounds(&RelaxationInput {
            k: 0,
            psi_k_l1: 1.0,
            psi_k_l2: 1.0,
            kappa: 0.5,
            ..input.clone()
        })
        .unwrap();
        assert!(close(b.dbar_sq_bound, 1.2));
        assert!(close(b.dbar_exp_bound, 1.2));

        assert!(matches!(
            relaxation_bounds(&RelaxationInput {
                rho: f64::INFINITY,
                ..input
            }),
            Err(ConstantsError::InfiniteRho)
        ));
    }

    #[test]
    fn relaxation_for_majority() {
        let rule = crate::rule::Builtin::NoisyMajority3 { eps: 0.45 }.rule();
        let b = RelaxationBound::for_rule(&rule, 0.3, 1, 3).unwrap();
        let rho = -(0.45f64).ln();
        assert!(close(b.dbar_exp_bound, 2.0 * 0.3 * rho * 0.09f64.powi(3)));
        assert!(b.dbar_sq_bound <= b.dbar_exp_bound * (1.0 + 1e-12));
        let stav = crate::rule::Builtin::Stavskaya { eps: 0.3 }.rule();
        assert!(matches!(
            RelaxationBound::for_rule(&stav, 0.3, 1, 3),
            Err(ConstantsError::InfiniteRho)
        ));
    }

    #[test]
    fn ledger() {
        let l = ConstantLedger::new(0.25, 0.25, 0.16, 50).unwrap();
        assert_eq!(l.c_n.len(), 51);
        assert!(close(l.c_inf.unwrap(), 0.297_619_047_619_047_6));
        assert!(l.c_prime.is_some());
        let l = ConstantLedger::new(0.25, 0.25, 1.5, 3).unwrap();
        assert!(l.c_inf.is_none() && l.c_prime.is_none());
    }
}
