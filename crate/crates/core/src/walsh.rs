//! Fast Walsh–Hadamard transform in the `±1` spin convention used by every
//! table in the crate (bit 1 of an index is spin `+1`).

/// Unnormalized in-place transform: `out[a] = sum_y v[y] (-1)^{|a & y|}`.
pub(crate) fn fwht(v: &mut [f64]) {
    let n = v.len();
    debug_assert!(n.is_power_of_two());
    let mut h = 1;
    while h < n {
        for chunk in v.chunks_mut(2 * h) {
            let (lo, hi) = chunk.split_at_mut(h);
            for (a, b) in lo.iter_mut().zip(hi.iter_mut()) {
                let (x, y) = (*a, *b);
                *a = x + y;
                *b = x - y;
            }
        }
        h *= 2;
    }
}

/// Multilinear coefficients of a table: `coeff[A] = 2^{-n} sum_x t(x) chi_A(x)`
/// where `chi_A(x) = prod_{i in A} spin_i(x)`.
pub(crate) fn table_to_coefficients(table: &[f64]) -> Vec<f64> {
    let mask = table.len() - 1;
    // (-1)^{|A & y|} with y = !x turns into chi_A(x)
    let mut w: Vec<f64> = (0..table.len()).map(|y| table[y ^ mask]).collect();
    fwht(&mut w);
    let scale = 1.0 / table.len() as f64;
    w.iter_mut().for_each(|c| *c *= scale);
    w
}

/// Inverse of [`table_to_coefficients`]: `t(x) = sum_A coeff[A] chi_A(x)`.
pub(crate) fn coefficients_to_table(coeffs: &[f64]) -> Vec<f64> {
    let mask = coeffs.len() - 1;
    let mut w = coeffs.to_vec();
    fwht(&mut w);
    (0..coeffs.len()).map(|x| w[x ^ mask]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::spin_of;

    fn chi(a: usize, x: usize, n: usize) -> f64 {
        (0..n)
            .filter(|i| (a >> i) & 1 == 1)
            .map(|i| spin_of(x, i))
            .product()
    }

    #[test]
    fn matches_direct_sum() {
        let n = 3;
        let t: Vec<f64> = (0..8).map(|i| (i as f64 * 0.37).sin()).collect();
        let c = table_to_coefficients(&t);
        for a in 0..8 {
            let direct: f64 = (0..8).map(|x| t[x] * chi(a, x, n)).sum::<f64>() / 8.0;
            assert!((c[a] - direct).abs() < 1e-15);
        }
        let back = coefficients_to_table(&c);
        for x in 0..8 {
            assert!((back[x] - t[x]).abs() < 1e-14);
        }
    }

    #[test]
    fn single_spin() {
        // t(x) = spin_0(x) has the single coefficient {0}
        let t: Vec<f64> = (0..4).map(|x| spin_of(x, 0)).collect();
        let c = table_to_coefficients(&t);
        assert_eq!(c, vec![0.0, 1.0, 0.0, 0.0]);
    }
}
