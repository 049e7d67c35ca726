//! Lattice sites and finite offset sets in `Z^d`.

use std::fmt;

use serde::{Deserialize, Serialize};

/// A point of `Z^d`, ordered lexicographically.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Site(pub Vec<i64>);

impl Site {
    pub fn new(coords: impl Into<Vec<i64>>) -> Self {
        Site(coords.into())
    }

    pub fn origin(dimension: usize) -> Self {
        Site(vec![0; dimension])
    }

    /// One-dimensional shorthand.
    pub fn d1(x: i64) -> Self {
        Site(vec![x])
    }

    pub fn dimension(&self) -> usize {
        self.0.len()
    }

    pub fn coords(&self) -> &[i64] {
        &self.0
    }

    pub fn add(&self, other: &Site) -> Site {
        debug_assert_eq!(self.dimension(), other.dimension());
        Site(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }

    pub fn sub(&self, other: &Site) -> Site {
        debug_assert_eq!(self.dimension(), other.dimension());
        Site(self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect())
    }

    /// `max_i |x_i|`.
    pub fn linf_norm(&self) -> u64 {
        self.0.iter().map(|c| c.unsigned_abs()).max().unwrap_or(0)
    }
}

impl fmt::Debug for Site {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.0)
    }
}

impl fmt::Display for Site {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.len() == 1 {
            write!(f, "{}", self.0[0])
        } else {
            write!(f, "(")?;
            for (i, c) in self.0.iter().enumerate() {
                if i > 0 {
                    write!(f, ",")?;
                }
                write!(f, "{c}")?;
            }
            write!(f, ")")
        }
    }
}

/// A finite set of offsets, stored sorted and without repetitions.
///
/// The empty set is valid and indexes the constant Fourier coefficient.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct OffsetSet(Vec<Site>);

impl OffsetSet {
    /// Builds the canonical form. Repeated sites collapse since `eta_y^2 = 1`.
    pub fn new(sites: impl IntoIterator<Item = Site>) -> Self {
        let mut v: Vec<Site> = sites.into_iter().collect();
        v.sort();
        v.dedup();
        OffsetSet(v)
    }

    pub fn empty() -> Self {
        OffsetSet(Vec::new())
    }

    /// One-dimensional shorthand: `OffsetSet::d1(&[0, 1])`.
    pub fn d1(xs: &[i64]) -> Self {
        OffsetSet::new(xs.iter().map(|&x| Site::d1(x)))
    }

    pub fn sites(&self) -> &[Site] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, site: &Site) -> bool {
        self.0.binary_search(site).is_ok()
    }
}

impl fmt::Debug for OffsetSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.0.iter()).finish()
    }
}

impl fmt::Display for OffsetSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (i, s) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{s}")?;
        }
        write!(f, "}}")
    }
}

/// Sorts `sites` and returns the permutation `perm` with
/// `sorted[i] == sites[perm[i]]`, or the first repeated site.
pub(crate) fn canonical_order(sites: &[Site]) -> Result<(Vec<Site>, Vec<usize>), Site> {
    let mut perm: Vec<usize> = (0..sites.len()).collect();
    perm.sort_by(|&a, &b| sites[a].cmp(&sites[b]));
    for w in perm.windows(2) {
        if sites[w[0]] == sites[w[1]] {
            return Err(sites[w[0]].clone());
        }
    }
    let sorted = perm.iter().map(|&i| sites[i].clone()).collect();
    Ok((sorted, perm))
}

/// Spin encoded by bit `i` of `index`: bit 1 is `+1`, bit 0 is `-1`.
#[inline]
pub fn spin_of(index: usize, i: usize) -> f64 {
    if (index >> i) & 1 == 1 {
        1.0
    } else {
        -1.0
    }
}

/// Re-indexes a table whose bit `j` refers to `old_order[j]` so that bit
/// `i` refers to `old_order[perm[i]]`.
pub(crate) fn permute_table_bits(table: &[f64], perm: &[usize]) -> Vec<f64> {
    let n = perm.len();
    let mut out = vec![0.0; table.len()];
    for (new_index, slot) in out.iter_mut().enumerate() {
        let mut old_index = 0usize;
        for (i, &p) in perm.iter().enumerate().take(n) {
            if (new_index >> i) & 1 == 1 {
                old_index |= 1 << p;
            }
        }
        *slot = table[old_index];
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn offset_set_is_canonical() {
        let a = OffsetSet::d1(&[1, 0, 1]);
        assert_eq!(a, OffsetSet::d1(&[0, 1]));
        assert_eq!(a.len(), 2);
        assert!(OffsetSet::empty().is_empty());
        assert!(OffsetSet::empty() < a);
    }

    #[test]
    fn canonical_order_reports_duplicates() {
        let s = vec![Site::d1(2), Site::d1(-1), Site::d1(0)];
        let (sorted, perm) = canonical_order(&s).unwrap();
        assert_eq!(sorted, vec![Site::d1(-1), Site::d1(0), Site::d1(2)]);
        assert_eq!(perm, vec![1, 2, 0]);
        assert!(canonical_order(&[Site::d1(1), Site::d1(1)]).is_err());
    }

    #[test]
    fn permuting_bits_relabels_table() {
        // f(a, b) = a - 2b in (a, b) order, i.e. bit 0 = a, bit 1 = b.
        let t: Vec<f64> = (0..4)
            .map(|i| spin_of(i, 0) - 2.0 * spin_of(i, 1))
            .collect();
        // new bit 0 = b, new bit 1 = a
        let p = permute_table_bits(&t, &[1, 0]);
        for i in 0..4 {
            assert_eq!(p[i], spin_of(i, 1) - 2.0 * spin_of(i, 0));
        }
    }

    #[test]
    fn linf_norm() {
        assert_eq!(Site::new(vec![1, -3, 2]).linf_norm(), 3);
        assert_eq!(Site::origin(2).linf_norm(), 0);
    }
}
