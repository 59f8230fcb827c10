//! Exact computations on finite absorbing Markov chains: hitting
//! probabilities and expected absorption times by first-step analysis.
//!
//! These are the ground truth the closed-form and Monte Carlo routes are
//! checked against.

use std::collections::{HashMap, VecDeque};

use crate::environment::Environment;
use crate::error::{Error, Result};
use crate::group::{GeneratorSet, Vertex};
use crate::walk::PathEnvironment;

pub const MAX_STATES: usize = 2000;
const ROW_TOL: f64 = 1e-12;
const RESIDUAL_TOL: f64 = 1e-10;

/// A finite chain with absorbing target set `A` and taboo set `B`. Rows of
/// absorbing states are ignored.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteChain {
    pub labels: Option<Vec<Vertex>>,
    transition: Vec<Vec<f64>>,
    target: Vec<bool>,
    taboo: Vec<bool>,
}

impl FiniteChain {
    pub fn new(transition: Vec<Vec<f64>>, target: Vec<bool>, taboo: Vec<bool>) -> Result<Self> {
        let n = transition.len();
        if n == 0 || n > MAX_STATES {
            return Err(Error::InvalidInput(format!(
                "chain must have 1..={MAX_STATES} states, got {n}"
            )));
        }
        if target.len() != n || taboo.len() != n || transition.iter().any(|r| r.len() != n) {
            return Err(Error::InvalidInput("chain dimensions disagree".into()));
        }
        if let Some(i) = (0..n).find(|&i| target[i] && taboo[i]) {
            return Err(Error::InvalidInput(format!(
                "state {i} is both target and taboo"
            )));
        }
        for i in (0..n).filter(|&i| !target[i] && !taboo[i]) {
            let row = &transition[i];
            if row.iter().any(|&p| !(p >= 0.0)) {
                return Err(Error::InvalidInput(format!("row {i} has a negative entry")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_TOL {
                return Err(Error::InvalidInput(format!("row {i} sums to {sum}")));
            }
        }
        let chain = Self {
            labels: None,
            transition,
            target,
            taboo,
        };
        chain.check_absorbing()?;
        Ok(chain)
    }

    pub fn with_labels(mut self, labels: Vec<Vertex>) -> Self {
        assert_eq!(labels.len(), self.len());
        self.labels = Some(labels);
        self
    }

    pub fn len(&self) -> usize {
        self.transition.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transition.is_empty()
    }

    pub fn is_absorbing(&self, i: usize) -> bool {
        self.target[i] || self.taboo[i]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.transition[i]
    }

    pub fn is_target(&self, i: usize) -> bool {
        self.target[i]
    }

    pub fn index_of(&self, v: &Vertex) -> Option<usize> {
        self.labels.as_ref()?.iter().position(|l| l == v)
    }

    /// Every interior state must reach `A ∪ B`.
    fn check_absorbing(&self) -> Result<()> {
        let n = self.len();
        let mut reverse: Vec<Vec<usize>> = vec![Vec::new(); n];
        for i in (0..n).filter(|&i| !self.is_absorbing(i)) {
            for (j, &p) in self.transition[i].iter().enumerate() {
                if p > 0.0 {
                    reverse[j].push(i);
                }
            }
        }
        let mut seen = vec![false; n];
        let mut queue: VecDeque<usize> = (0..n).filter(|&i| self.is_absorbing(i)).collect();
        queue.iter().for_each(|&i| seen[i] = true);
        while let Some(j) = queue.pop_front() {
            for &i in &reverse[j] {
                if !seen[i] {
                    seen[i] = true;
                    queue.push_back(i);
                }
            }
        }
        match seen.iter().position(|&s| !s) {
            Some(i) => Err(Error::AbsorbingStructure(format!(
                "state {i} cannot reach the absorbing set"
            ))),
            None => Ok(()),
        }
    }

    /// Solve `(I - Q) h = rhs` over interior states.
    fn solve_interior(&self, rhs: impl Fn(usize) -> f64) -> Result<Vec<Option<f64>>> {
        let n = self.len();
        let interior: Vec<usize> = (0..n).filter(|&i| !self.is_absorbing(i)).collect();
        let mut pos = vec![usize::MAX; n];
        for (k, &i) in interior.iter().enumerate() {
            pos[i] = k;
        }
        let m = interior.len();
        let mut a = vec![vec![0.0; m]; m];
        let mut b = vec![0.0; m];
        for (k, &i) in interior.iter().enumerate() {
            a[k][k] = 1.0;
            for &j in &interior {
                a[k][pos[j]] -= self.transition[i][j];
            }
            b[k] = rhs(i);
        }
        let x = gauss_solve(a.clone(), b.clone())?;
        let residual = a
            .iter()
            .zip(&b)
            .map(|(row, bi)| (row.iter().zip(&x).map(|(p, q)| p * q).sum::<f64>() - bi).abs())
            .fold(0.0, f64::max);
        if residual > RESIDUAL_TOL {
            return Err(Error::AbsorbingStructure(format!(
                "linear solve residual {residual:e} exceeds {RESIDUAL_TOL:e}"
            )));
        }
        let mut out = vec![None; n];
        for (k, &i) in interior.iter().enumerate() {
            out[i] = Some(x[k]);
        }
        Ok(out)
    }
}

/// Gaussian elimination with partial pivoting.
fn gauss_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Result<Vec<f64>> {
    let m = b.len();
    for col in 0..m {
        let piv = (col..m)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        if a[piv][col].abs() < 1e-14 {
            return Err(Error::AbsorbingStructure(
                "singular interior block: some state cannot reach the absorbing set".into(),
            ));
        }
        a.swap(col, piv);
        b.swap(col, piv);
        let (head, tail) = a.split_at_mut(col + 1);
        let pivot_row = &head[col];
        for (off, row) in tail.iter_mut().enumerate() {
            let f = row[col] / pivot_row[col];
            if f != 0.0 {
                for c in col..m {
                    row[c] -= f * pivot_row[c];
                }
                b[col + 1 + off] -= f * b[col];
            }
        }
    }
    let mut x = vec![0.0; m];
    for i in (0..m).rev() {
        let s: f64 = (i + 1..m).map(|j| a[i][j] * x[j]).sum();
        x[i] = (b[i] - s) / a[i][i];
    }
    Ok(x)
}

/// Probability of reaching the target set before the taboo set.
pub fn exact_hitting_probability(chain: &FiniteChain, from: usize) -> Result<f64> {
    if chain.is_target(from) {
        return Ok(1.0);
    }
    if chain.is_absorbing(from) {
        return Ok(0.0);
    }
    let h = chain.solve_interior(|i| {
        chain.transition[i]
            .iter()
            .enumerate()
            .filter(|&(j, _)| chain.target[j])
            .map(|(_, p)| p)
            .sum()
    })?;
    Ok(h[from].unwrap().clamp(0.0, 1.0))
}

/// Expected number of steps until absorption in `A ∪ B`.
pub fn exact_expected_hitting_time(chain: &FiniteChain, from: usize) -> Result<f64> {
    if chain.is_absorbing(from) {
        return Ok(0.0);
    }
    let t = chain.solve_interior(|_| 1.0)?;
    Ok(t[from].unwrap())
}

/// The restricted walk on a path as a finite chain: states `0..=n`, `0`
/// taboo, `n` target. The forced first step means the escape probability is
/// the hitting probability from state 1.
pub fn path_chain(path: &PathEnvironment) -> Result<FiniteChain> {
    let n = path.len();
    let mut p = vec![vec![0.0; n + 1]; n + 1];
    for (j, &(back, fwd)) in path.interior.iter().enumerate() {
        let i = j + 1;
        let total = back + fwd;
        if !(total > 0.0) {
            return Err(Error::EllipticityViolation(format!(
                "interior vertex {i} has no mass on the path"
            )));
        }
        p[i][i - 1] = back / total;
        p[i][i + 1] = fwd / total;
    }
    let mut target = vec![false; n + 1];
    let mut taboo = vec![false; n + 1];
    target[n] = true;
    taboo[0] = true;
    FiniteChain::new(p, target, taboo)
}

/// Escape probability of a path computed by linear solve.
pub fn path_escape_probability(path: &PathEnvironment) -> Result<f64> {
    exact_hitting_probability(&path_chain(path)?, 1)
}

/// The walk on the depth-`depth` ball around the root; boundary vertices
/// (level `depth`) are targets when `is_target` holds and taboo otherwise.
pub fn truncated_tree(
    env: &Environment,
    gs: &GeneratorSet,
    depth: usize,
    is_target: impl Fn(&Vertex) -> bool,
) -> Result<FiniteChain> {
    if depth == 0 {
        return Err(Error::InvalidInput("depth must be >= 1".into()));
    }
    let states = gs.ball(depth);
    if states.len() > MAX_STATES {
        return Err(Error::InvalidInput(format!(
            "ball of depth {depth} has {} states (max {MAX_STATES})",
            states.len()
        )));
    }
    let index: HashMap<&Vertex, usize> = states.iter().enumerate().map(|(i, v)| (v, i)).collect();
    let n = states.len();
    let mut p = vec![vec![0.0; n]; n];
    let mut target = vec![false; n];
    let mut taboo = vec![false; n];
    for (i, x) in states.iter().enumerate() {
        if x.level() == depth {
            if is_target(x) {
                target[i] = true;
            } else {
                taboo[i] = true;
            }
            continue;
        }
        let tv = env.transition_at(x);
        for s in 0..gs.degree() as u8 {
            let y = gs.left_multiply(s, x);
            p[i][index[&y]] += tv.get(s);
        }
    }
    Ok(FiniteChain::new(p, target, taboo)?.with_labels(states))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::{build_law, LawSpec};
    use crate::seeds::stream;
    use crate::walk::{Sampler, Walker};

    #[test]
    fn three_state_path() {
        let path = PathEnvironment::from_pairs(vec![(0.3, 0.7)]);
        assert!((path_escape_probability(&path).unwrap() - 0.7).abs() < 1e-15);
    }

    #[test]
    fn symmetric_path_of_length_four() {
        let path = PathEnvironment::from_pairs(vec![(0.5, 0.5); 3]);
        assert!((path_escape_probability(&path).unwrap() - 0.25).abs() < 1e-14);
    }

    #[test]
    fn single_edge_is_certain() {
        let path = PathEnvironment::from_pairs(vec![]);
        assert_eq!(path_escape_probability(&path).unwrap(), 1.0);
    }

    #[test]
    fn two_state_absorption_time() {
        let chain = FiniteChain::new(
            vec![vec![0.0, 1.0], vec![0.0, 0.0]],
            vec![false, true],
            vec![false, false],
        )
        .unwrap();
        assert!((exact_expected_hitting_time(&chain, 0).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn symmetric_ruin_duration() {
        for n in 2..10usize {
            let mut p = vec![vec![0.0; n + 1]; n + 1];
            for i in 1..n {
                p[i][i - 1] = 0.5;
                p[i][i + 1] = 0.5;
            }
            let mut a = vec![false; n + 1];
            let mut b = vec![false; n + 1];
            a[n] = true;
            b[0] = true;
            let chain = FiniteChain::new(p, a, b).unwrap();
            let t = exact_expected_hitting_time(&chain, 1).unwrap();
            assert!((t - (n - 1) as f64).abs() < 1e-10);
        }
    }

    #[test]
    fn unreachable_absorption_is_rejected() {
        // state 1 loops forever
        let err = FiniteChain::new(
            vec![vec![0.0, 0.5, 0.5], vec![0.0, 1.0, 0.0], vec![0.0; 3]],
            vec![false, false, true],
            vec![false; 3],
        )
        .unwrap_err();
        assert!(matches!(err, Error::AbsorbingStructure(_)));
    }

    #[test]
    fn bad_rows_and_overlaps() {
        assert!(FiniteChain::new(vec![vec![0.5, 0.4], vec![0.0, 0.0]], vec![false, true], vec![false; 2]).is_err());
        assert!(FiniteChain::new(vec![vec![0.0, 1.0], vec![0.0, 0.0]], vec![false, true], vec![false, true]).is_err());
    }

    #[test]
    fn moving_taboo_to_target_never_decreases() {
        let gs = GeneratorSet::new(0, 3).unwrap();
        let law = build_law(3, 0.05, &LawSpec::DirichletMixture { alpha: vec![1.0; 3] }).unwrap();
        let env = Environment::new(law, 21);
        let small = truncated_tree(&env, &gs, 3, |v| v.path()[0] == 0).unwrap();
        let large = truncated_tree(&env, &gs, 3, |v| v.path()[0] != 2).unwrap();
        for i in 0..small.len() {
            let a = exact_hitting_probability(&small, i).unwrap();
            let b = exact_hitting_probability(&large, i).unwrap();
            assert!((0.0..=1.0).contains(&a));
            assert!(b >= a - 1e-12);
        }
    }

    #[test]
    fn simulated_absorption_time_matches_exact() {
        // d = 5, depth 2: 26 states
        let gs = GeneratorSet::new(2, 1).unwrap();
        let law = build_law(5, 0.05, &LawSpec::DirichletMixture { alpha: vec![1.0; 5] }).unwrap();
        for seed in 0..3u64 {
            let env = Environment::new(law.clone(), seed);
            let chain = truncated_tree(&env, &gs, 2, |_| true).unwrap();
            assert_eq!(chain.len(), 26);
            let exact = exact_expected_hitting_time(&chain, chain.index_of(&Vertex::root()).unwrap()).unwrap();
            assert!(exact >= 1.0);
            let mut rng = stream(seed, "absorb", 0);
            let runs = 20_000;
            let (mut sum, mut sq) = (0.0, 0.0);
            for _ in 0..runs {
                let mut w = Walker::new(&env, gs, Vertex::root());
                let mut t = 0.0;
                while w.position().level() < 2 {
                    w.step(Sampler::Categorical, &mut rng);
                    t += 1.0;
                }
                sum += t;
                sq += t * t;
            }
            let mean = sum / runs as f64;
            let sd = ((sq / runs as f64 - mean * mean) / runs as f64).sqrt();
            assert!((mean - exact).abs() < 3.0 * sd, "seed {seed}: {mean} vs {exact}");
        }
    }
}
