//! Free products `Z^{*k} * Z_2^{*r}` as reduced words, and the `d`-regular
//! Cayley tree they induce (`d = 2k + r`).
//!
//! Generators are numbered `0..d`: indices `2i` and `2i + 1` are `a_{i+1}`
//! and its inverse, indices `2k..2k + r` are the involutions `b_j`.
//!
//! The tree uses left multiplication: the neighbours of `x` are `s * x`.
//! A word's leftmost letter is the last generator applied, so the parent of
//! a vertex strips its first letter and the first letter is the vertex type.

use std::collections::HashSet;
use std::fmt;

use crate::error::{Error, Result};

/// Generator alphabet of the free product.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GeneratorSet {
    k: usize,
    r: usize,
}

impl GeneratorSet {
    pub fn new(k: usize, r: usize) -> Result<Self> {
        let degree = 2 * k + r;
        if !(3..=255).contains(&degree) {
            return Err(Error::DegenerateGroup { degree });
        }
        Ok(Self { k, r })
    }

    /// Number of `Z` factors.
    pub fn k(&self) -> usize {
        self.k
    }

    /// Number of `Z_2` factors.
    pub fn r(&self) -> usize {
        self.r
    }

    /// Tree degree `2k + r`.
    pub fn degree(&self) -> usize {
        2 * self.k + self.r
    }

    /// Inverse of generator `s`.
    #[inline]
    pub fn inv(&self, s: u8) -> u8 {
        if (s as usize) < 2 * self.k {
            s ^ 1
        } else {
            s
        }
    }

    pub fn check(&self, s: usize) -> Result<u8> {
        if s < self.degree() {
            Ok(s as u8)
        } else {
            Err(Error::InvalidGenerator {
                letter: s,
                degree: self.degree(),
            })
        }
    }

    /// Human readable label: `a1`, `a1^-1`, `b1`.
    pub fn label(&self, s: u8) -> String {
        let s = s as usize;
        if s < 2 * self.k {
            if s % 2 == 0 {
                format!("a{}", s / 2 + 1)
            } else {
                format!("a{}^-1", s / 2 + 1)
            }
        } else {
            format!("b{}", s - 2 * self.k + 1)
        }
    }

    /// Free reduction of an arbitrary word (leftmost letter applied last).
    pub fn reduce_word(&self, letters: &[usize]) -> Result<Vertex> {
        let mut path: Vec<u8> = Vec::with_capacity(letters.len());
        for &l in letters.iter().rev() {
            let s = self.check(l)?;
            if path.last() == Some(&self.inv(s)) {
                path.pop();
            } else {
                path.push(s);
            }
        }
        Ok(Vertex { path })
    }

    /// `s * x`, reduced. The level changes by exactly one.
    pub fn left_multiply(&self, s: u8, x: &Vertex) -> Vertex {
        let mut y = x.clone();
        self.apply(s, &mut y);
        y
    }

    /// In-place version of [`left_multiply`](Self::left_multiply).
    /// Returns `true` if the step moved away from the root.
    #[inline]
    pub fn apply(&self, s: u8, x: &mut Vertex) -> bool {
        debug_assert!((s as usize) < self.degree());
        if x.path.last() == Some(&self.inv(s)) {
            x.path.pop();
            false
        } else {
            x.path.push(s);
            true
        }
    }

    /// The `d` neighbours `s * x`, in generator order.
    pub fn neighbors(&self, x: &Vertex) -> Vec<Vertex> {
        (0..self.degree() as u8)
            .map(|s| self.left_multiply(s, x))
            .collect()
    }

    /// Generator `g` with `y = g * x`, if `x` and `y` are adjacent.
    pub fn generator_between(&self, x: &Vertex, y: &Vertex) -> Option<u8> {
        if y.level() == x.level() + 1 && y.path[..x.level()] == x.path[..] {
            y.first_letter()
        } else if x.level() == y.level() + 1 && x.path[..y.level()] == y.path[..] {
            x.first_letter().map(|t| self.inv(t))
        } else {
            None
        }
    }

    /// Vertices on the unique geodesic from `x` to `y`, both ends included.
    pub fn geodesic(&self, x: &Vertex, y: &Vertex) -> Vec<Vertex> {
        let common = x
            .path
            .iter()
            .zip(&y.path)
            .take_while(|(a, b)| a == b)
            .count();
        let mut out = Vec::with_capacity(x.level() + y.level() - 2 * common + 1);
        for len in (common..=x.level()).rev() {
            out.push(Vertex {
                path: x.path[..len].to_vec(),
            });
        }
        for len in common + 1..=y.level() {
            out.push(Vertex {
                path: y.path[..len].to_vec(),
            });
        }
        out
    }

    /// All vertices at distance at most `depth` from the root, in
    /// breadth-first order.
    pub fn ball(&self, depth: usize) -> Vec<Vertex> {
        let mut out = vec![Vertex::root()];
        let mut frontier = 0;
        for _ in 0..depth {
            let end = out.len();
            for i in frontier..end {
                let x = out[i].clone();
                for s in 0..self.degree() as u8 {
                    if x.path.last() != Some(&self.inv(s)) {
                        let mut y = x.clone();
                        y.path.push(s);
                        out.push(y);
                    }
                }
            }
            frontier = end;
        }
        out
    }

    pub fn parse_vertex(&self, text: &str) -> Result<Vertex> {
        if text.is_empty() {
            return Ok(Vertex::root());
        }
        let letters = text
            .split('.')
            .map(|t| {
                t.parse::<usize>()
                    .map_err(|_| Error::InvalidInput(format!("bad vertex letter {t:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let v = self.reduce_word(&letters)?;
        if v.level() != letters.len() {
            return Err(Error::InvalidInput(format!("vertex {text:?} is not reduced")));
        }
        Ok(v)
    }

    /// Whether `v` satisfies the reduced-word invariant for this alphabet.
    pub fn is_reduced(&self, v: &Vertex) -> bool {
        v.path.iter().all(|&s| (s as usize) < self.degree())
            && v.path.windows(2).all(|w| w[1] != self.inv(w[0]))
    }
}

/// A group element as a reduced word.
///
/// Letters are kept root-first (the order they were applied), which makes
/// stepping to a child or to the parent a push or a pop.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Vertex {
    path: Vec<u8>,
}

impl Vertex {
    pub fn root() -> Self {
        Self { path: Vec::new() }
    }

    pub fn is_root(&self) -> bool {
        self.path.is_empty()
    }

    /// Graph distance to the root.
    #[inline]
    pub fn level(&self) -> usize {
        self.path.len()
    }

    /// Letters in word order: leftmost is the last generator applied.
    pub fn word(&self) -> Vec<u8> {
        self.path.iter().rev().copied().collect()
    }

    /// Letters in the order they were applied from the root.
    pub fn path(&self) -> &[u8] {
        &self.path
    }

    /// The vertex type, i.e. the generator carrying the parent to `self`.
    #[inline]
    pub fn first_letter(&self) -> Option<u8> {
        self.path.last().copied()
    }

    pub fn parent_and_type(&self) -> Result<(Vertex, u8)> {
        match self.path.split_last() {
            Some((&s, rest)) => Ok((Vertex { path: rest.to_vec() }, s)),
            None => Err(Error::RootHasNoParent),
        }
    }

    /// `self` lies in the subtree rooted at `y` (`y`'s word is a suffix of
    /// ours).
    pub fn is_in_subtree_of(&self, y: &Vertex) -> bool {
        self.path.starts_with(&y.path)
    }

    /// Length-prefixed byte form: `u32` little-endian length, then one byte
    /// per letter in word order.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(4 + self.path.len());
        out.extend_from_slice(&(self.path.len() as u32).to_le_bytes());
        out.extend(self.path.iter().rev());
        out
    }
}

impl fmt::Display for Vertex {
    /// Letters in word order joined by `.`; the root prints as an empty
    /// string.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, s) in self.path.iter().rev().enumerate() {
            if i > 0 {
                f.write_str(".")?;
            }
            write!(f, "{s}")?;
        }
        Ok(())
    }
}

/// Number of distinct vertices in a list, used by enumeration checks.
pub fn count_distinct(vertices: &[Vertex]) -> usize {
    vertices.iter().collect::<HashSet<_>>().len()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn gs(k: usize, r: usize) -> GeneratorSet {
        GeneratorSet::new(k, r).unwrap()
    }

    // a1 = 0, a1^-1 = 1, a2 = 2, a2^-1 = 3 when k = 2; b1 = 2k.
    const A1: usize = 0;
    const A1_INV: usize = 1;

    #[test]
    fn rejects_degenerate_degree() {
        assert_eq!(
            GeneratorSet::new(1, 0),
            Err(Error::DegenerateGroup { degree: 2 })
        );
        assert!(GeneratorSet::new(0, 2).is_err());
        assert!(GeneratorSet::new(0, 3).is_ok());
    }

    #[test]
    fn inverse_is_involution_with_r_fixed_points() {
        for (k, r) in [(2, 0), (1, 1), (0, 3), (2, 3)] {
            let g = gs(k, r);
            let fixed = (0..g.degree() as u8).filter(|&s| g.inv(s) == s).count();
            assert_eq!(fixed, r);
            for s in 0..g.degree() as u8 {
                assert_eq!(g.inv(g.inv(s)), s);
            }
        }
    }

    #[test]
    fn reduce_word_examples() {
        let g = gs(1, 1);
        let b1 = 2;
        assert!(g.reduce_word(&[A1, A1_INV]).unwrap().is_root());
        assert!(g.reduce_word(&[b1, b1]).unwrap().is_root());
        let v = g.reduce_word(&[A1, b1, b1, A1]).unwrap();
        assert_eq!(v.word(), vec![0, 0]);
        assert_eq!(
            g.reduce_word(&[3]),
            Err(Error::InvalidGenerator {
                letter: 3,
                degree: 3
            })
        );
    }

    #[test]
    fn left_multiply_examples() {
        let g = gs(1, 1);
        let b1 = 2u8;
        let a = g.left_multiply(0, &Vertex::root());
        assert_eq!((a.word(), a.level()), (vec![0], 1));
        let ab = g.reduce_word(&[A1, b1 as usize]).unwrap();
        let y = g.left_multiply(1, &ab);
        assert_eq!((y.word(), y.level()), (vec![b1], 1));
        let z = g.left_multiply(0, &ab);
        assert_eq!((z.word(), z.level()), (vec![0, 0, b1], 3));
    }

    #[test]
    fn neighbors_examples() {
        let g = gs(2, 0);
        let n = g.neighbors(&Vertex::root());
        assert_eq!(n.len(), 4);
        for (s, v) in n.iter().enumerate() {
            assert_eq!(v.word(), vec![s as u8]);
        }
        let a1 = g.reduce_word(&[A1]).unwrap();
        let mut words: Vec<Vec<u8>> = g.neighbors(&a1).iter().map(|v| v.word()).collect();
        words.sort();
        assert_eq!(words, vec![vec![], vec![0, 0], vec![2, 0], vec![3, 0]]);
    }

    #[test]
    fn parent_and_type_examples() {
        let g = gs(2, 1);
        let a1 = g.reduce_word(&[A1]).unwrap();
        assert_eq!(a1.parent_and_type().unwrap(), (Vertex::root(), 0));
        // b1 = 4, a2 = 2
        let x = g.reduce_word(&[4, 2, 2]).unwrap();
        let (p, t) = x.parent_and_type().unwrap();
        assert_eq!((p.word(), t), (vec![2, 2], 4));
        assert_eq!(
            Vertex::root().parent_and_type(),
            Err(Error::RootHasNoParent)
        );
    }

    #[test]
    fn text_form_round_trip() {
        let g = gs(2, 1);
        let x = g.reduce_word(&[0, 3, 4]).unwrap();
        assert_eq!(x.to_string(), "0.3.4");
        assert_eq!(g.parse_vertex("0.3.4").unwrap(), x);
        assert_eq!(Vertex::root().to_string(), "");
        assert!(g.parse_vertex("0.1").is_err());
    }

    #[test]
    fn canonical_bytes_are_length_prefixed() {
        let g = gs(2, 0);
        let x = g.reduce_word(&[2, 0]).unwrap();
        assert_eq!(x.canonical_bytes(), vec![2, 0, 0, 0, 2, 0]);
    }

    #[test]
    fn geodesic_between_cousins() {
        let g = gs(2, 0);
        let x = g.reduce_word(&[0, 2]).unwrap();
        let y = g.reduce_word(&[3, 3, 2]).unwrap();
        let path = g.geodesic(&x, &y);
        assert_eq!(path.len(), 4);
        assert_eq!(path[0], x);
        assert_eq!(path[3], y);
        for w in path.windows(2) {
            assert!(g.generator_between(&w[0], &w[1]).is_some());
        }
    }

    #[test]
    fn level_counts_match_enumeration() {
        for (k, r) in [(0, 3), (2, 0), (2, 1)] {
            let g = gs(k, r);
            let d = g.degree();
            let ball = g.ball(6);
            assert_eq!(count_distinct(&ball), ball.len());
            for n in 1..=6usize {
                let count = ball.iter().filter(|v| v.level() == n).count();
                assert_eq!(count, d * (d - 1).pow(n as u32 - 1));
            }
        }
    }

    fn arb_vertex(g: GeneratorSet) -> impl Strategy<Value = Vertex> {
        proptest::collection::vec(0..g.degree(), 0..24)
            .prop_map(move |letters| g.reduce_word(&letters).unwrap())
    }

    proptest! {
        #[test]
        fn reduce_is_idempotent(letters in proptest::collection::vec(0usize..5, 0..30)) {
            let g = gs(2, 1);
            let v = g.reduce_word(&letters).unwrap();
            prop_assert!(g.is_reduced(&v));
            let again = g.reduce_word(&v.word().iter().map(|&s| s as usize).collect::<Vec<_>>()).unwrap();
            prop_assert_eq!(again, v);
        }

        #[test]
        fn left_multiply_changes_level_by_one(x in arb_vertex(gs(2, 1)), s in 0u8..5) {
            let g = gs(2, 1);
            let y = g.left_multiply(s, &x);
            prop_assert_eq!(y.level().abs_diff(x.level()), 1);
            prop_assert_eq!(g.left_multiply(g.inv(s), &y), x);
        }

        #[test]
        fn neighbors_are_distinct(x in arb_vertex(gs(1, 2))) {
            let g = gs(1, 2);
            let n = g.neighbors(&x);
            prop_assert_eq!(n.len(), 4);
            prop_assert_eq!(count_distinct(&n), 4);
            let closer = n.iter().filter(|v| v.level() + 1 == x.level()).count();
            prop_assert_eq!(closer, usize::from(!x.is_root()));
        }

        #[test]
        fn parent_type_round_trip(x in arb_vertex(gs(2, 2))) {
            let g = gs(2, 2);
            prop_assume!(!x.is_root());
            let (p, t) = x.parent_and_type().unwrap();
            prop_assert_eq!(g.left_multiply(t, &p), x);
        }
    }
}
