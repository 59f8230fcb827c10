//! The colouring-scheme branching process.
//!
//! A vertex `y` at level `k * psi` is red when its red ancestor `x` at level
//! `(k - 1) * psi` sends the walk restricted to `[x, y]` to `y` before it
//! returns to `x`. Counting red descendants by type gives a multi-type
//! Galton-Watson process whose mean matrix `M` is estimated here, and whose
//! Perron root decides supercriticality.

use std::sync::Arc;

use rayon::prelude::*;

use crate::environment::{Environment, TransitionLaw};
use crate::error::{Error, Result};
use crate::group::{GeneratorSet, Vertex};
use crate::seeds::{derive_seed, stream, VertexKey};
use crate::walk::{simulate_restricted_walk, PathEnvironment, PathOutcome, StopRule};

pub const PATH_CAP: f64 = 1e5;

/// Probability that the walk restricted to the path hits the far end before
/// returning to its start: `(sum_{m=0}^{n-1} prod_{j=1}^m back_j / fwd_j)^-1`.
pub fn escape_probability_path(path: &PathEnvironment) -> Result<f64> {
    let mut prod = 1.0;
    let mut sum = 1.0;
    for (j, &(back, fwd)) in path.interior.iter().enumerate() {
        if !(fwd > 0.0) {
            return Err(Error::EllipticityViolation(format!(
                "zero forward probability at interior vertex {}",
                j + 1
            )));
        }
        prod *= back / fwd;
        sum += prod;
    }
    Ok(1.0 / sum)
}

/// Which paths count as offspring of a type-`s` vertex.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PathConvention {
    /// Paths of length `psi` descending from a vertex of type `s`; the
    /// first step avoids `s^-1`.
    #[default]
    Descendant,
    /// Paths of length `psi` from the root whose first step has type `s`.
    FirstStepTyped,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OffspringMatrix {
    pub psi: usize,
    pub convention: PathConvention,
    /// `m[s][u]`: expected red offspring of type `u` of a type-`s` vertex.
    pub m: Vec<Vec<f64>>,
    pub stderr: Vec<Vec<f64>>,
    pub row_sum_stderr: Vec<f64>,
    pub mc_samples: usize,
}

impl OffspringMatrix {
    pub fn degree(&self) -> usize {
        self.m.len()
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.m.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn min_row_sum(&self) -> f64 {
        self.row_sums().into_iter().fold(f64::INFINITY, f64::min)
    }

    pub fn stderr_max(&self) -> f64 {
        self.stderr.iter().flatten().copied().fold(0.0, f64::max)
    }

    /// Smallest of `rowsum_s - z * stderr_s` over rows.
    pub fn min_row_sum_lower(&self, z: f64) -> f64 {
        self.row_sums()
            .iter()
            .zip(&self.row_sum_stderr)
            .map(|(r, se)| r - z * se)
            .fold(f64::INFINITY, f64::min)
    }
}

fn check_cap(gs: &GeneratorSet, psi: usize) -> Result<()> {
    let paths = ((gs.degree() - 1) as f64).powi(psi as i32);
    if paths > PATH_CAP {
        return Err(Error::TooLargePsi { paths, cap: PATH_CAP });
    }
    Ok(())
}

/// Sum of escape probabilities of one environment, tallied by
/// `(parent type, end type)`.
fn offspring_sums(env: &Environment, gs: &GeneratorSet, psi: usize, convention: PathConvention) -> Vec<Vec<f64>> {
    let d = gs.degree();
    let mut out = vec![vec![0.0; d]; d];
    let root = env.root_key();
    for s in 0..d as u8 {
        let row = &mut out[s as usize];
        match convention {
            PathConvention::Descendant => {
                // x_0 = s at level 1
                let x0 = root.child(s);
                for t in (0..d as u8).filter(|&t| t != gs.inv(s)) {
                    descend(env, gs, x0.child(t), t, 1, psi, 1.0, 1.0, row);
                }
            }
            PathConvention::FirstStepTyped => {
                descend(env, gs, root.child(s), s, 1, psi, 1.0, 1.0, row);
            }
        }
    }
    out
}

/// At `x_j` (type `kind`) with `prod = P_{j-1}` and `sum = sum_{m<j} P_m`.
#[allow(clippy::too_many_arguments)]
fn descend(
    env: &Environment,
    gs: &GeneratorSet,
    key: VertexKey,
    kind: u8,
    depth: usize,
    psi: usize,
    prod: f64,
    sum: f64,
    row: &mut [f64],
) {
    if depth == psi {
        row[kind as usize] += 1.0 / sum;
        return;
    }
    let p = env.transition_for_key(&key);
    let back = p.get(gs.inv(kind));
    for t in (0..gs.degree() as u8).filter(|&t| t != gs.inv(kind)) {
        let next = prod * back / p.get(t);
        descend(env, gs, key.child(t), t, depth + 1, psi, next, sum + next, row);
    }
}

/// Monte Carlo estimate of the mean offspring matrix over `mc_samples`
/// independent environments.
pub fn estimate_offspring_matrix(
    law: Arc<dyn TransitionLaw>,
    gs: GeneratorSet,
    psi: usize,
    mc_samples: usize,
    seed: u64,
    convention: PathConvention,
) -> Result<OffspringMatrix> {
    if psi < 1 || mc_samples < 1 {
        return Err(Error::InvalidParameter(
            "psi and mc_samples must be >= 1".into(),
        ));
    }
    if law.degree() != gs.degree() {
        return Err(Error::InvalidParameter("law degree does not match group".into()));
    }
    check_cap(&gs, psi)?;
    let d = gs.degree();
    let samples: Vec<Vec<Vec<f64>>> = (0..mc_samples as u64)
        .into_par_iter()
        .map(|i| {
            let env = Environment::new(law.clone(), derive_seed(seed, "offspring-env", i));
            offspring_sums(&env, &gs, psi, convention)
        })
        .collect();

    let n = mc_samples as f64;
    let mut mean = vec![vec![0.0; d]; d];
    for smp in &samples {
        for s in 0..d {
            for u in 0..d {
                mean[s][u] += smp[s][u];
            }
        }
    }
    mean.iter_mut().flatten().for_each(|v| *v /= n);

    let mut var = vec![vec![0.0; d]; d];
    let mut row_var = vec![0.0; d];
    let row_mean: Vec<f64> = mean.iter().map(|r| r.iter().sum()).collect();
    for smp in &samples {
        for s in 0..d {
            for u in 0..d {
                var[s][u] += (smp[s][u] - mean[s][u]).powi(2);
            }
            row_var[s] += (smp[s].iter().sum::<f64>() - row_mean[s]).powi(2);
        }
    }
    let se = |v: f64| {
        if mc_samples > 1 {
            (v / (n - 1.0) / n).sqrt()
        } else {
            f64::NAN
        }
    };
    Ok(OffspringMatrix {
        psi,
        convention,
        m: mean,
        stderr: var.iter().map(|r| r.iter().map(|&v| se(v)).collect()).collect(),
        row_sum_stderr: row_var.iter().map(|&v| se(v)).collect(),
        mc_samples,
    })
}

/// Direct simulation of the colouring: one restricted walk per descendant
/// path, averaged over environments. Only a cross-check for small `psi`.
pub fn simulate_offspring_counts(
    law: Arc<dyn TransitionLaw>,
    gs: GeneratorSet,
    psi: usize,
    mc_samples: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    check_cap(&gs, psi)?;
    let d = gs.degree();
    let mut counts = vec![vec![0.0; d]; d];
    for i in 0..mc_samples as u64 {
        let env = Environment::new(law.clone(), derive_seed(seed, "colouring-env", i));
        let mut rng = stream(seed, "colouring-walk", i);
        for s in 0..d as u8 {
            let x0 = gs.left_multiply(s, &Vertex::root());
            for y in descendants(&gs, &x0, psi) {
                let path = PathEnvironment::from_geodesic(&env, &gs, &x0, &y)?;
                let run = simulate_restricted_walk(&path, StopRule::FirstOfEither, &mut rng);
                if run.outcome == PathOutcome::HitFarEnd {
                    counts[s as usize][y.first_letter().unwrap() as usize] += 1.0;
                }
            }
        }
    }
    counts
        .iter_mut()
        .flatten()
        .for_each(|c| *c /= mc_samples as f64);
    Ok(counts)
}

fn descendants(gs: &GeneratorSet, x: &Vertex, depth: usize) -> Vec<Vertex> {
    let mut layer = vec![x.clone()];
    for _ in 0..depth {
        layer = layer
            .iter()
            .flat_map(|v| {
                let back = v.first_letter().map(|t| gs.inv(t));
                (0..gs.degree() as u8)
                    .filter(move |&t| Some(t) != back)
                    .map(move |t| gs.left_multiply(t, v))
            })
            .collect();
    }
    layer
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerronReport {
    pub rho: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Whether the shifted matrix `M + I` was needed.
    pub shifted: bool,
    pub irreducible: bool,
    pub min_row_sum: f64,
    pub max_row_sum: f64,
}

const PERRON_TOL: f64 = 1e-12;
const PERRON_MAX_ITER: usize = 100_000;

/// Spectral radius of a nonnegative square matrix by power iteration on
/// successive Rayleigh quotients.
pub fn perron_root(m: &[Vec<f64>]) -> Result<PerronReport> {
    let d = m.len();
    if d == 0 || m.iter().any(|r| r.len() != d) {
        return Err(Error::InvalidInput("matrix must be square and nonempty".into()));
    }
    if m.iter().flatten().any(|&v| !(v >= 0.0) || !v.is_finite()) {
        return Err(Error::InvalidInput("matrix must be finite and nonnegative".into()));
    }
    let row_sums: Vec<f64> = m.iter().map(|r| r.iter().sum()).collect();
    let min_row_sum = row_sums.iter().copied().fold(f64::INFINITY, f64::min);
    let max_row_sum = row_sums.iter().copied().fold(0.0, f64::max);
    let irreducible = is_irreducible(m);

    let half = PERRON_MAX_ITER / 2;
    let (mut rho, mut iterations, mut converged) = power_iterate(m, 0.0, half);
    let mut shifted = false;
    if !converged {
        shifted = true;
        let (r, it, c) = power_iterate(m, 1.0, half);
        rho = r - 1.0;
        iterations += it;
        converged = c;
    }
    Ok(PerronReport {
        rho: rho.max(0.0),
        iterations,
        converged,
        shifted,
        irreducible,
        min_row_sum,
        max_row_sum,
    })
}

fn power_iterate(m: &[Vec<f64>], shift: f64, max_iter: usize) -> (f64, usize, bool) {
    let d = m.len();
    let mut v = vec![1.0 / (d as f64).sqrt(); d];
    let mut prev = f64::NAN;
    for it in 1..=max_iter {
        let w: Vec<f64> = (0..d)
            .map(|i| m[i].iter().zip(&v).map(|(a, b)| a * b).sum::<f64>() + shift * v[i])
            .collect();
        let lambda: f64 = v.iter().zip(&w).map(|(a, b)| a * b).sum();
        let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return (shift, it, true);
        }
        if (lambda - prev).abs() <= PERRON_TOL * lambda.abs().max(1.0) {
            return (lambda, it, true);
        }
        prev = lambda;
        v = w.into_iter().map(|x| x / norm).collect();
    }
    (prev, max_iter, false)
}

fn is_irreducible(m: &[Vec<f64>]) -> bool {
    let d = m.len();
    (0..d).all(|start| {
        let mut seen = vec![false; d];
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(i) = stack.pop() {
            for j in 0..d {
                if m[i][j] > 0.0 && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        seen.iter().all(|&s| s)
    })
}
