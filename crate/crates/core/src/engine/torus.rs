use std::fmt;
use std::sync::Arc;

use crate::lattice::Site;

use super::EngineError;

/// Largest supported number of torus sites.
pub const MAX_SITES: usize = 1 << 31;

/// A periodic box `Z_{L_1} x ... x Z_{L_d}`.
///
/// Sites are numbered row-major with coordinate 0 varying fastest.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Torus {
    sides: Vec<usize>,
    strides: Vec<usize>,
    len: usize,
}

impl Torus {
    pub fn new(sides: Vec<usize>) -> Result<Self, EngineError> {
        if sides.is_empty() || sides.contains(&0) {
            return Err(EngineError::BadTorus(format!("{sides:?}")));
        }
        let mut strides = Vec::with_capacity(sides.len());
        let mut len = 1usize;
        for &l in &sides {
            strides.push(len);
            len = len.checked_mul(l).filter(|&m| m <= MAX_SITES).ok_or(
                EngineError::TooManySites {
                    sites: sides.iter().map(|&l| l as u128).product(),
                    limit: MAX_SITES,
                },
            )?;
        }
        Ok(Torus {
            sides,
            strides,
            len,
        })
    }

    pub fn ring(l: usize) -> Result<Self, EngineError> {
        Torus::new(vec![l])
    }

    /// Parses `L1xL2x...`.
    pub fn parse(text: &str) -> Result<Self, EngineError> {
        let sides = text
            .split('x')
            .map(|t| t.trim().parse::<usize>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|_| EngineError::BadTorus(text.to_string()))?;
        Torus::new(sides)
    }

    pub fn dimension(&self) -> usize {
        self.sides.len()
    }

    pub fn sides(&self) -> &[usize] {
        &self.sides
    }

    /// `M`, the number of sites.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Index of the site with (unwrapped) coordinates `coords`.
    pub fn index_of(&self, coords: &[i64]) -> usize {
        debug_assert_eq!(coords.len(), self.sides.len());
        coords
            .iter()
            .zip(&self.sides)
            .zip(&self.strides)
            .map(|((&c, &l), &s)| c.rem_euclid(l as i64) as usize * s)
            .sum()
    }

    pub fn index(&self, site: &Site) -> usize {
        self.index_of(site.coords())
    }

    /// Coordinates in `[0, L_i)`.
    pub fn coords(&self, index: usize) -> Vec<i64> {
        self.sides
            .iter()
            .zip(&self.strides)
            .map(|(&l, &s)| ((index / s) % l) as i64)
            .collect()
    }

    pub fn site(&self, index: usize) -> Site {
        Site(self.coords(index))
    }

    /// Index of `site(index) + offset`.
    pub fn shift(&self, index: usize, offset: &Site) -> usize {
        let c: Vec<i64> = self
            .coords(index)
            .iter()
            .zip(offset.coords())
            .map(|(a, b)| a + b)
            .collect();
        self.index_of(&c)
    }

    /// Checks that every side is at least `2 * range + 1`.
    pub fn check_range(&self, range: u64) -> Result<(), EngineError> {
        let needed = 2 * range as usize + 1;
        match self.sides.iter().find(|&&l| l < needed) {
            Some(&side) => Err(EngineError::TorusTooSmall { side, needed }),
            None => Ok(()),
        }
    }

    pub(crate) fn shared(self) -> Arc<Torus> {
        Arc::new(self)
    }
}

impl fmt::Debug for Torus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Torus({self})")
    }
}

impl fmt::Display for Torus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, l) in self.sides.iter().enumerate() {
            if i > 0 {
                write!(f, "x")?;
            }
            write!(f, "{l}")?;
        }
        Ok(())
    }
}

/// A `+-1` configuration on a torus, one bit per site (1 is `+1`).
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct TorusConfig {
    torus: Arc<Torus>,
    words: Vec<u64>,
}

impl TorusConfig {
    pub fn all_minus(torus: &Torus) -> Self {
        Self::filled(Arc::new(torus.clone()), false)
    }

    pub fn all_plus(torus: &Torus) -> Self {
        Self::filled(Arc::new(torus.clone()), true)
    }

    pub(crate) fn filled(torus: Arc<Torus>, plus: bool) -> Self {
        let m = torus.len();
        let mut words = vec![if plus { u64::MAX } else { 0 }; m.div_ceil(64)];
        if plus && m % 64 != 0 {
            *words.last_mut().expect("nonempty") = (1u64 << (m % 64)) - 1;
        }
        TorusConfig { torus, words }
    }

    pub(crate) fn from_words(torus: Arc<Torus>, words: Vec<u64>) -> Self {
        debug_assert_eq!(words.len(), torus.len().div_ceil(64));
        TorusConfig { torus, words }
    }

    /// From spins `+-1` listed by site index.
    pub fn from_spins(torus: &Torus, spins: &[i8]) -> Result<Self, EngineError> {
        if spins.len() != torus.len() {
            return Err(EngineError::ConfigSize {
                found: spins.len(),
                expected: torus.len(),
            });
        }
        let mut c = Self::all_minus(torus);
        for (i, &s) in spins.iter().enumerate() {
            match s {
                1 => c.set(i, true),
                -1 => {}
                _ => return Err(EngineError::BadSpin(s)),
            }
        }
        Ok(c)
    }

    /// From an index whose bit `i` is the spin of site `i`; `M <= 64`.
    pub fn from_index(torus: &Torus, index: u64) -> Self {
        assert!(torus.len() <= 64);
        let mask = if torus.len() == 64 {
            u64::MAX
        } else {
            (1u64 << torus.len()) - 1
        };
        TorusConfig {
            torus: Arc::new(torus.clone()),
            words: vec![index & mask],
        }
    }

    pub fn torus(&self) -> &Torus {
        &self.torus
    }

    pub(crate) fn torus_arc(&self) -> &Arc<Torus> {
        &self.torus
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    #[inline]
    pub fn get(&self, i: usize) -> bool {
        (self.words[i >> 6] >> (i & 63)) & 1 == 1
    }

    /// `+1.0` or `-1.0`.
    #[inline]
    pub fn spin(&self, i: usize) -> f64 {
        if self.get(i) {
            1.0
        } else {
            -1.0
        }
    }

    pub fn set(&mut self, i: usize, plus: bool) {
        let bit = 1u64 << (i & 63);
        if plus {
            self.words[i >> 6] |= bit;
        } else {
            self.words[i >> 6] &= !bit;
        }
    }

    pub fn count_plus(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    /// `M^{-1} sum_x sigma_x`.
    pub fn magnetization(&self) -> f64 {
        let m = self.torus.len() as f64;
        (2.0 * self.count_plus() as f64 - m) / m
    }

    /// The index with bit `i` equal to the spin of site `i`; `M <= 64`.
    pub fn to_index(&self) -> u64 {
        assert!(self.torus.len() <= 64);
        self.words[0]
    }

    /// `(tau_x sigma)_y = sigma_{y+x}`.
    pub fn translated(&self, offset: &Site) -> TorusConfig {
        let mut out = TorusConfig::filled(self.torus.clone(), false);
        for i in 0..self.torus.len() {
            if self.get(self.torus.shift(i, offset)) {
                out.set(i, true);
            }
        }
        out
    }

    pub fn spins(&self) -> Vec<i8> {
        (0..self.torus.len())
            .map(|i| if self.get(i) { 1 } else { -1 })
            .collect()
    }
}

impl fmt::Debug for TorusConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "TorusConfig({}, ", self.torus)?;
        for i in 0..self.torus.len().min(256) {
            write!(f, "{}", if self.get(i) { '+' } else { '-' })?;
        }
        if self.torus.len() > 256 {
            write!(f, "...")?;
        }
        write!(f, ")")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn indexing_round_trip() {
        let t = Torus::new(vec![3, 4, 5]).unwrap();
        assert_eq!(t.len(), 60);
        for i in 0..60 {
            assert_eq!(t.index_of(&t.coords(i)), i);
        }
        assert_eq!(t.index_of(&[1, 0, 0]), 1);
        assert_eq!(t.index_of(&[0, 1, 0]), 3);
        assert_eq!(t.index_of(&[-1, 0, 0]), 2);
        assert_eq!(t.shift(0, &Site::new(vec![0, -1, 0])), 9);
    }

    #[test]
    fn parse_and_limits() {
        assert_eq!(Torus::parse("8x4").unwrap().sides(), &[8, 4]);
        assert!(Torus::parse("8x").is_err());
        assert!(Torus::new(vec![0]).is_err());
        assert!(matches!(
            Torus::new(vec![1 << 16, 1 << 16]),
            Err(EngineError::TooManySites { .. })
        ));
        let t = Torus::ring(2).unwrap();
        assert!(t.check_range(1).is_err());
        assert!(Torus::ring(3).unwrap().check_range(1).is_ok());
    }

    #[test]
    fn config_bits() {
        let t = Torus::ring(70).unwrap();
        let plus = TorusConfig::all_plus(&t);
        assert_eq!(plus.count_plus(), 70);
        assert_eq!(plus.magnetization(), 1.0);
        let mut c = TorusConfig::all_minus(&t);
        c.set(65, true);
        assert!(c.get(65) && !c.get(64));
        assert_eq!(c.spin(65), 1.0);
        let shifted = c.translated(&Site::d1(5));
        assert!(shifted.get(60));
        assert_eq!(shifted.count_plus(), 1);
        let small = Torus::ring(5).unwrap();
        let s = TorusConfig::from_index(&small, 0b10110);
        assert_eq!(s.spins(), vec![-1, 1, 1, -1, 1]);
        assert_eq!(TorusConfig::from_spins(&small, &s.spins()).unwrap(), s);
    }
}
