//! Python bindings for the `rwre` crate.

use std::sync::Arc;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use rwre::branching::{escape_probability_path, estimate_offspring_matrix, perron_root, PathConvention};
use rwre::config::parse_config;
use rwre::environment::{self as env, LawSpec, TransitionLaw};
use rwre::group::{self, Vertex};
use rwre::oracle::path_escape_probability;
use rwre::regeneration::{self as regen, RegenMode};
use rwre::runner::{run_command, Command};
use rwre::seeds::stream;
use rwre::stats::{self, BlockSummary};
use rwre::walk::{self, PathEnvironment, Sampler};

fn err(e: rwre::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn mode(name: &str) -> PyResult<RegenMode> {
    match name {
        "strict" => Ok(RegenMode::Strict),
        "literal" => Ok(RegenMode::Literal),
        _ => Err(PyValueError::new_err(format!("unknown regeneration mode {name:?}"))),
    }
}

/// Generators of `Z^{*k} * Z_2^{*r}`. Vertices are written as '.'-joined
/// generator indices, leftmost letter last applied; the root is "".
#[pyclass(frozen)]
#[derive(Clone, Copy)]
struct GeneratorSet(group::GeneratorSet);

#[pymethods]
impl GeneratorSet {
    #[new]
    fn new(k: usize, r: usize) -> PyResult<Self> {
        group::GeneratorSet::new(k, r).map(Self).map_err(err)
    }

    #[getter]
    fn degree(&self) -> usize {
        self.0.degree()
    }

    fn label(&self, s: u8) -> PyResult<String> {
        self.0.check(s as usize).map_err(err)?;
        Ok(self.0.label(s))
    }

    fn inv(&self, s: u8) -> PyResult<u8> {
        self.0.check(s as usize).map_err(err)?;
        Ok(self.0.inv(s))
    }

    /// Freely reduce a word given as a list of generator indices.
    fn reduce(&self, word: Vec<usize>) -> PyResult<String> {
        self.0.reduce_word(&word).map(|v| v.to_string()).map_err(err)
    }

    fn level(&self, vertex: &str) -> PyResult<usize> {
        Ok(self.parse(vertex)?.level())
    }

    fn neighbors(&self, vertex: &str) -> PyResult<Vec<String>> {
        let x = self.parse(vertex)?;
        Ok(self.0.neighbors(&x).iter().map(|v| v.to_string()).collect())
    }

    /// Vertices within `depth` of the root in breadth-first order.
    fn ball(&self, depth: usize) -> Vec<String> {
        self.0.ball(depth).iter().map(|v| v.to_string()).collect()
    }

    fn __repr__(&self) -> String {
        format!("GeneratorSet(k={}, r={})", self.0.k(), self.0.r())
    }
}

impl GeneratorSet {
    fn parse(&self, text: &str) -> PyResult<Vertex> {
        self.0.parse_vertex(text).map_err(err)
    }
}

/// Law of the transition vector at a single vertex.
#[pyclass(frozen)]
#[derive(Clone)]
struct Law(Arc<dyn TransitionLaw>);

#[pymethods]
impl Law {
    /// `epsilon + (1 - d epsilon) Dirichlet(alpha)`.
    #[staticmethod]
    fn dirichlet(epsilon: f64, alpha: Vec<f64>) -> PyResult<Self> {
        env::build_law(alpha.len(), epsilon, &LawSpec::DirichletMixture { alpha })
            .map(Self)
            .map_err(err)
    }

    #[staticmethod]
    #[pyo3(signature = (epsilon, vectors, weights=None))]
    fn finite(epsilon: f64, vectors: Vec<Vec<f64>>, weights: Option<Vec<f64>>) -> PyResult<Self> {
        let d = vectors.first().map_or(0, Vec::len);
        let weights = weights.unwrap_or_else(|| vec![1.0 / vectors.len() as f64; vectors.len()]);
        env::build_law(d, epsilon, &LawSpec::FiniteSupport { vectors, weights })
            .map(Self)
            .map_err(err)
    }

    #[staticmethod]
    fn uniform(degree: usize) -> Self {
        Self(env::uniform_law(degree))
    }

    #[getter]
    fn degree(&self) -> usize {
        self.0.degree()
    }

    #[getter]
    fn epsilon(&self) -> f64 {
        self.0.epsilon()
    }

    fn sample(&self, seed: u64) -> Vec<f64> {
        self.0.sample(&mut stream(seed, "py-law-sample", 0)).probs().to_vec()
    }

    fn __repr__(&self) -> String {
        format!("Law({}, epsilon={})", self.0.name(), self.0.epsilon())
    }
}

/// A quenched environment: one transition vector per vertex, a pure
/// function of the seed and the vertex.
#[pyclass(frozen)]
struct Environment(env::Environment);

#[pymethods]
impl Environment {
    #[new]
    fn new(law: &Law, seed: u64) -> Self {
        Self(env::Environment::new(law.0.clone(), seed))
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.0.seed()
    }

    fn transition_at(&self, group: &GeneratorSet, vertex: &str) -> PyResult<Vec<f64>> {
        let x = group.parse(vertex)?;
        Ok(self.0.transition_at(&x).probs().to_vec())
    }
}

#[pyclass(frozen)]
struct Trajectory(walk::Trajectory);

#[pymethods]
impl Trajectory {
    /// Generator index applied at each step.
    #[getter]
    fn steps(&self) -> Vec<u8> {
        self.0.steps.clone()
    }

    fn levels(&self) -> Vec<usize> {
        self.0.levels()
    }

    fn vertex_at(&self, n: usize) -> PyResult<String> {
        if n > self.0.len() {
            return Err(PyValueError::new_err(format!("time {n} beyond horizon {}", self.0.len())));
        }
        Ok(self.0.vertex_at(n).to_string())
    }

    fn end(&self) -> String {
        self.0.end().to_string()
    }

    /// `(tau, level, type, confirmed)` for every qualifying level.
    #[pyo3(signature = (mode="strict", delta=200))]
    fn regenerations(&self, mode: &str, delta: usize) -> PyResult<Vec<(usize, usize, u8, bool)>> {
        let rec = regen::detect_regenerations(&self.0, self::mode(mode)?, delta).map_err(err)?;
        Ok(rec.entries.iter().map(|e| (e.tau, e.level, e.kind, e.confirmed)).collect())
    }

    /// `(type, Y, Z)` for every block fed to the estimators.
    #[pyo3(signature = (mode="strict", delta=200, include_first=false))]
    fn blocks(&self, mode: &str, delta: usize, include_first: bool) -> PyResult<Vec<(u8, usize, usize)>> {
        let rec = regen::detect_regenerations(&self.0, self::mode(mode)?, delta).map_err(err)?;
        Ok(rec.estimator_blocks(include_first).iter().map(|b| (b.kind, b.y, b.z)).collect())
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }
}

/// Walk `n_steps` steps in `environment` from `start` with its own stream.
#[pyfunction]
#[pyo3(signature = (environment, group, n_steps, seed, start="", sampler="categorical"))]
fn simulate_walk(
    environment: &Environment,
    group: &GeneratorSet,
    n_steps: usize,
    seed: u64,
    start: &str,
    sampler: &str,
) -> PyResult<Trajectory> {
    let sampler = match sampler {
        "categorical" => Sampler::Categorical,
        "race" => Sampler::ExponentialRace,
        _ => return Err(PyValueError::new_err(format!("unknown sampler {sampler:?}"))),
    };
    if environment.0.degree() != group.0.degree() {
        return Err(PyValueError::new_err("environment degree does not match the group"));
    }
    let x = group.parse(start)?;
    let mut rng = stream(seed, "py-walk", 0);
    Ok(Trajectory(walk::simulate_walk(
        &environment.0,
        group.0,
        &x,
        n_steps,
        sampler,
        &mut rng,
        0,
    )))
}

fn summary(degree: usize, blocks: Vec<(u8, usize, usize)>) -> PyResult<BlockSummary> {
    let rows: Vec<regen::Block> = blocks
        .into_iter()
        .map(|(kind, y, z)| {
            if kind as usize >= degree {
                return Err(PyValueError::new_err(format!("block type {kind} >= degree {degree}")));
            }
            Ok(regen::Block {
                index: 0,
                tau: 0,
                level: 0,
                kind,
                y,
                z,
                l_block: 0,
                d_block: 0,
            })
        })
        .collect::<PyResult<_>>()?;
    Ok(BlockSummary::from_blocks(degree, &rows))
}

/// `(v_hat, ci95)` from `(type, Y, Z)` blocks.
#[pyfunction]
fn estimate_speed(degree: usize, blocks: Vec<(u8, usize, usize)>) -> PyResult<(f64, f64)> {
    let s = stats::estimate_speed(&summary(degree, blocks)?).map_err(err)?;
    Ok((s.v_hat, s.ci95))
}

/// `(sigma2_hat, sigma2_se, E tau)` from `(type, Y, Z)` blocks.
#[pyfunction]
fn estimate_sigma2(degree: usize, blocks: Vec<(u8, usize, usize)>, v_hat: f64) -> PyResult<(f64, f64, f64)> {
    let c = stats::estimate_sigma2(&summary(degree, blocks)?, v_hat).map_err(err)?;
    Ok((c.sigma2_hat, c.sigma2_se, c.etau_hat))
}

/// Closed-form escape probability along a path of interior `(back, fwd)`.
#[pyfunction]
fn escape_probability(interior: Vec<(f64, f64)>) -> PyResult<f64> {
    escape_probability_path(&PathEnvironment::from_pairs(interior)).map_err(err)
}

/// The same probability from a dense linear solve.
#[pyfunction]
fn exact_escape_probability(interior: Vec<(f64, f64)>) -> PyResult<f64> {
    path_escape_probability(&PathEnvironment::from_pairs(interior)).map_err(err)
}

/// `(M, stderr)` for the red-path offspring matrix at depth `psi`.
#[pyfunction]
fn offspring_matrix(
    law: &Law,
    group: &GeneratorSet,
    psi: usize,
    mc_samples: usize,
    seed: u64,
) -> PyResult<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let m = estimate_offspring_matrix(law.0.clone(), group.0, psi, mc_samples, seed, PathConvention::Descendant)
        .map_err(err)?;
    Ok((m.m, m.stderr))
}

#[pyfunction]
fn perron(matrix: Vec<Vec<f64>>) -> PyResult<f64> {
    perron_root(&matrix).map(|r| r.rho).map_err(err)
}

/// Run a CLI command on config text; returns `(exit_code, records)` with
/// records as JSON strings.
#[pyfunction]
fn run(command: &str, config: &str) -> PyResult<(i32, Vec<String>)> {
    let cmd: Command = command.parse().map_err(err)?;
    let cfg = parse_config(config).map_err(err)?;
    let out = run_command(cmd, &cfg).map_err(err)?;
    Ok((out.exit_code, out.records.iter().map(|r| r.to_string()).collect()))
}

#[pymodule]
#[pyo3(name = "rwre")]
fn rwre_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", rwre::runner::VERSION)?;
    m.add_class::<GeneratorSet>()?;
    m.add_class::<Law>()?;
    m.add_class::<Environment>()?;
    m.add_class::<Trajectory>()?;
    m.add_function(wrap_pyfunction!(simulate_walk, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_speed, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_sigma2, m)?)?;
    m.add_function(wrap_pyfunction!(escape_probability, m)?)?;
    m.add_function(wrap_pyfunction!(exact_escape_probability, m)?)?;
    m.add_function(wrap_pyfunction!(offspring_matrix, m)?)?;
    m.add_function(wrap_pyfunction!(perron, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    Ok(())
}
