//! Brute-force oracles written directly from the model definitions, sharing
//! no code with the library beyond its data types.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use pca_gcb::{FourierRule, LocalFunction, Site};
use rand_chacha::rand_core::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(r: &mut ChaCha8Rng) -> f64 {
    (r.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

pub fn spin(index: usize, bit: usize) -> f64 {
    if (index >> bit) & 1 == 1 {
        1.0
    } else {
        -1.0
    }
}

/// `h_x(eta) = sum_A r_A prod_{y in A} eta_{x+y}`.
pub fn h_at(rule: &FourierRule, x: &Site, eta: &dyn Fn(&Site) -> f64) -> f64 {
    rule.coeffs()
        .iter()
        .map(|(a, r)| r * a.sites().iter().map(|y| eta(&x.add(y))).product::<f64>())
        .sum()
}

/// `r_A = 2^-N sum_eta (2 p(eta) - 1) prod_{i in A} eta_i`, indexed by the
/// bit mask of `A` over the neighbourhood.
pub fn walsh_oracle(probs: &[f64]) -> Vec<f64> {
    let n = probs.len().trailing_zeros() as usize;
    (0..probs.len())
        .map(|mask| {
            probs
                .iter()
                .enumerate()
                .map(|(eta, p)| {
                    let chi: f64 = (0..n)
                        .filter(|i| (mask >> i) & 1 == 1)
                        .map(|i| spin(eta, i))
                        .product();
                    (2.0 * p - 1.0) * chi
                })
                .sum::<f64>()
                / probs.len() as f64
        })
        .collect()
}

/// `Pf` on the dependency region `S_f + supp(rule)`, by summing over all
/// outcomes of the sites of `f`. Returns the region and the table.
pub fn transfer_oracle(f: &LocalFunction, rule: &FourierRule) -> (Vec<Site>, Vec<f64>) {
    let support = rule.support();
    let region: Vec<Site> = f
        .sites()
        .iter()
        .flat_map(|x| support.iter().map(move |y| x.add(y)))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let pos: BTreeMap<Site, usize> = region
        .iter()
        .cloned()
        .enumerate()
        .map(|(i, s)| (s, i))
        .collect();
    let k = f.sites().len();
    let table = (0..1usize << region.len())
        .map(|eta| {
            let probs: Vec<f64> = f
                .sites()
                .iter()
                .map(|x| (1.0 + h_at(rule, x, &|s| spin(eta, pos[s]))) / 2.0)
                .collect();
            (0..1usize << k)
                .map(|sigma| {
                    let w: f64 = (0..k)
                        .map(|i| {
                            if (sigma >> i) & 1 == 1 {
                                probs[i]
                            } else {
                                1.0 - probs[i]
                            }
                        })
                        .product();
                    w * f.value(sigma)
                })
                .sum()
        })
        .collect();
    (region, table)
}

/// `delta_i g = max |g(eta) - g(eta^i)|` of a table on `n` bits.
pub fn oscillations(table: &[f64], n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| {
            (0..table.len())
                .filter(|s| (s >> i) & 1 == 0)
                .map(|s| (table[s] - table[s | (1 << i)]).abs())
                .fold(0.0, f64::max)
        })
        .collect()
}

/// `psi(z) = sum_{A containing z} |r_A|`.
pub fn psi_oracle(rule: &FourierRule) -> BTreeMap<Site, f64> {
    let mut psi = BTreeMap::new();
    for (a, r) in rule.coeffs() {
        for z in a.sites() {
            *psi.entry(z.clone()).or_insert(0.0) += r.abs();
        }
    }
    psi
}

/// Dense transition matrix on a ring of `m` sites, `t[from][to]`.
pub fn dense_ring_matrix(rule: &FourierRule, m: usize) -> Vec<Vec<f64>> {
    let wrap = |s: &Site| s.coords()[0].rem_euclid(m as i64) as usize;
    (0..1usize << m)
        .map(|eta| {
            let p: Vec<f64> = (0..m)
                .map(|x| (1.0 + h_at(rule, &Site::d1(x as i64), &|s| spin(eta, wrap(s)))) / 2.0)
                .collect();
            (0..1usize << m)
                .map(|sigma| {
                    (0..m)
                        .map(|x| {
                            if (sigma >> x) & 1 == 1 {
                                p[x]
                            } else {
                                1.0 - p[x]
                            }
                        })
                        .product()
                })
                .collect()
        })
        .collect()
}

pub fn dense_step(t: &[Vec<f64>], mu: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; mu.len()];
    for (from, w) in mu.iter().enumerate() {
        if *w == 0.0 {
            continue;
        }
        for (o, p) in out.iter_mut().zip(&t[from]) {
            *o += w * p;
        }
    }
    out
}

pub fn product_law(m: usize, p: f64) -> Vec<f64> {
    (0..1usize << m)
        .map(|s| {
            let k = s.count_ones() as i32;
            p.powi(k) * (1.0 - p).powi(m as i32 - k)
        })
        .collect()
}
