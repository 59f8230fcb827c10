//! The i.i.d. uniformly elliptic environment `omega(x, .)`.
//!
//! Transition vectors are generated lazily: the vector at `x` is drawn from
//! the law using `x`'s private stream, so an environment over the infinite
//! tree costs no memory and any vertex can be queried from any thread.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};

use crate::error::{Error, Result};
use crate::group::Vertex;
use crate::seeds::VertexKey;

const SUM_TOL: f64 = 1e-9;

/// Probability of stepping `x -> s * x`, indexed by generator `s`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionVector(Vec<f64>);

impl TransitionVector {
    pub fn new(p: Vec<f64>) -> Result<Self> {
        if p.iter().any(|&v| !v.is_finite() || v < 0.0) {
            return Err(Error::InvalidParameter(format!(
                "transition vector has a negative or non-finite entry: {p:?}"
            )));
        }
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() > SUM_TOL {
            return Err(Error::InvalidParameter(format!(
                "transition vector sums to {sum}, not 1"
            )));
        }
        Ok(Self(p.into_iter().map(|v| v / sum).collect()))
    }

    /// `epsilon + (1 - d * epsilon) * mix`, where `mix` is a point of the
    /// simplex.
    pub fn mixture(epsilon: f64, mix: &[f64]) -> Self {
        let d = mix.len() as f64;
        let scale = 1.0 - d * epsilon;
        Self(mix.iter().map(|&m| epsilon + scale * m).collect())
    }

    pub fn uniform(d: usize) -> Self {
        Self(vec![1.0 / d as f64; d])
    }

    #[inline]
    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    #[inline]
    pub fn get(&self, s: u8) -> f64 {
        self.0[s as usize]
    }

    pub fn degree(&self) -> usize {
        self.0.len()
    }

    pub fn min(&self) -> f64 {
        self.0.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// A marginal law for the transition vector at a single vertex.
///
/// Implementations must draw only from the supplied stream so that the
/// environment stays a pure function of its seed.
pub trait TransitionLaw: Send + Sync + fmt::Debug {
    fn degree(&self) -> usize;
    fn epsilon(&self) -> f64;
    fn sample(&self, rng: &mut ChaCha8Rng) -> TransitionVector;

    /// `false` for point-mass laws, letting callers skip key derivation.
    fn is_random(&self) -> bool {
        true
    }

    fn name(&self) -> String;
}

/// Parameters of one of the built-in law families.
#[derive(Debug, Clone, PartialEq)]
pub enum LawSpec {
    DirichletMixture { alpha: Vec<f64> },
    FiniteSupport { vectors: Vec<Vec<f64>>, weights: Vec<f64> },
}

/// `p = epsilon + (1 - d * epsilon) * D` with `D ~ Dirichlet(alpha)`.
#[derive(Debug, Clone)]
pub struct DirichletMixture {
    epsilon: f64,
    alpha: Vec<f64>,
    gammas: Vec<Gamma<f64>>,
}

impl DirichletMixture {
    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    /// Dirichlet draw via normalised Gamma(alpha_s, 1) variates.
    pub fn sample_dirichlet(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let mut g: Vec<f64> = self.gammas.iter().map(|dist| dist.sample(rng)).collect();
        let sum: f64 = g.iter().sum();
        if sum > 0.0 && sum.is_finite() {
            g.iter_mut().for_each(|v| *v /= sum);
        } else {
            // every variate underflowed (tiny alpha); fall back to one vertex of
            // the simplex chosen proportionally to alpha
            let total: f64 = self.alpha.iter().sum();
            let u = rng.gen::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = self.alpha.len() - 1;
            for (i, a) in self.alpha.iter().enumerate() {
                acc += a;
                if u < acc {
                    pick = i;
                    break;
                }
            }
            g.iter_mut().for_each(|v| *v = 0.0);
            g[pick] = 1.0;
        }
        g
    }
}

impl TransitionLaw for DirichletMixture {
    fn degree(&self) -> usize {
        self.alpha.len()
    }

    fn epsilon(&self) -> f64 {
        self.epsilon
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> TransitionVector {
        TransitionVector::mixture(self.epsilon, &self.sample_dirichlet(rng))
    }

    fn name(&self) -> String {
        let a: Vec<String> = self.alpha.iter().map(|a| a.to_string()).collect();
        format!("dirichlet_mixture({})", a.join(","))
    }
}

/// Finitely many transition vectors chosen with fixed weights.
#[derive(Debug, Clone)]
pub struct FiniteSupport {
    epsilon: f64,
    vectors: Vec<TransitionVector>,
    cumulative: Vec<f64>,
}

impl FiniteSupport {
    pub fn vectors(&self) -> &[TransitionVector] {
        &self.vectors
    }
}

impl TransitionLaw for FiniteSupport {
    fn degree(&self) -> usize {
        self.vectors[0].degree()
    }

    fn epsilon(&self) -> f64 {
        self.epsilon
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> TransitionVector {
        if self.vectors.len() == 1 {
            return self.vectors[0].clone();
        }
        let u: f64 = rng.gen();
        let i = self
            .cumulative
            .iter()
            .position(|&c| u < c)
            .unwrap_or(self.vectors.len() - 1);
        self.vectors[i].clone()
    }

    fn is_random(&self) -> bool {
        self.vectors.len() > 1
    }

    fn name(&self) -> String {
        if self.vectors.len() == 1 {
            "point_mass".to_string()
        } else {
            format!("finite_support({})", self.vectors.len())
        }
    }
}

fn check_epsilon(epsilon: f64, degree: usize) -> Result<()> {
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "epsilon must be positive, got {epsilon}"
        )));
    }
    if epsilon * degree as f64 >= 1.0 {
        return Err(Error::InfeasibleEllipticity { epsilon, degree });
    }
    Ok(())
}

/// Validate a law specification for degree `degree`.
pub fn build_law(degree: usize, epsilon: f64, spec: &LawSpec) -> Result<Arc<dyn TransitionLaw>> {
    check_epsilon(epsilon, degree)?;
    match spec {
        LawSpec::DirichletMixture { alpha } => {
            if alpha.len() != degree {
                return Err(Error::InvalidParameter(format!(
                    "alpha has {} entries, degree is {degree}",
                    alpha.len()
                )));
            }
            let gammas = alpha
                .iter()
                .map(|&a| {
                    if !(a > 0.0) || !a.is_finite() {
                        return Err(Error::InvalidParameter(format!(
                            "alpha entries must be positive, got {a}"
                        )));
                    }
                    Gamma::new(a, 1.0).map_err(|e| Error::InvalidParameter(e.to_string()))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(Arc::new(DirichletMixture {
                epsilon,
                alpha: alpha.clone(),
                gammas,
            }))
        }
        LawSpec::FiniteSupport { vectors, weights } => {
            if vectors.is_empty() || vectors.len() != weights.len() {
                return Err(Error::InvalidParameter(format!(
                    "finite support needs one weight per vector ({} vectors, {} weights)",
                    vectors.len(),
                    weights.len()
                )));
            }
            let wsum: f64 = weights.iter().sum();
            if weights.iter().any(|&w| !(w >= 0.0)) || (wsum - 1.0).abs() > SUM_TOL {
                return Err(Error::InvalidParameter(format!(
                    "weights must be nonnegative and sum to 1, got {weights:?}"
                )));
            }
            let mut tvs = Vec::with_capacity(vectors.len());
            for v in vectors {
                if v.len() != degree {
                    return Err(Error::InvalidParameter(format!(
                        "support vector has {} entries, degree is {degree}",
                        v.len()
                    )));
                }
                let tv = TransitionVector::new(v.clone())?;
                if tv.min() < epsilon {
                    return Err(Error::EllipticityViolation(format!(
                        "support vector {v:?} has an entry below epsilon = {epsilon}"
                    )));
                }
                tvs.push(tv);
            }
            let cumulative = weights
                .iter()
                .scan(0.0, |acc, &w| {
                    *acc += w / wsum;
                    Some(*acc)
                })
                .collect();
            Ok(Arc::new(FiniteSupport {
                epsilon,
                vectors: tvs,
                cumulative,
            }))
        }
    }
}

/// Point-mass law at the uniform vector.
pub fn uniform_law(degree: usize) -> Arc<dyn TransitionLaw> {
    let epsilon = 0.5 / degree as f64;
    build_law(
        degree,
        epsilon,
        &LawSpec::FiniteSupport {
            vectors: vec![vec![1.0 / degree as f64; degree]],
            weights: vec![1.0],
        },
    )
    .expect("uniform law is valid")
}

/// One realisation of the random environment.
#[derive(Debug, Clone)]
pub struct Environment {
    law: Arc<dyn TransitionLaw>,
    seed: u64,
}

impl Environment {
    pub fn new(law: Arc<dyn TransitionLaw>, seed: u64) -> Self {
        Self { law, seed }
    }

    pub fn law(&self) -> &Arc<dyn TransitionLaw> {
        &self.law
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn degree(&self) -> usize {
        self.law.degree()
    }

    pub fn transition_at(&self, x: &Vertex) -> TransitionVector {
        if !self.law.is_random() {
            return self.law.sample(&mut VertexKey::root(0).stream());
        }
        self.transition_for_key(&VertexKey::of(self.seed, x))
    }

    /// Same as [`transition_at`](Self::transition_at) when `key` is the
    /// vertex's key under this environment's seed.
    #[inline]
    pub fn transition_for_key(&self, key: &VertexKey) -> TransitionVector {
        self.law.sample(&mut key.stream())
    }

    pub fn root_key(&self) -> VertexKey {
        VertexKey::root(self.seed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::group::GeneratorSet;
    use crate::seeds::stream;

    fn dirichlet(d: usize, eps: f64) -> Arc<dyn TransitionLaw> {
        build_law(
            d,
            eps,
            &LawSpec::DirichletMixture {
                alpha: vec![1.0; d],
            },
        )
        .unwrap()
    }

    #[test]
    fn build_law_examples() {
        assert!(build_law(4, 0.1, &LawSpec::DirichletMixture { alpha: vec![1.0; 4] }).is_ok());
        assert_eq!(
            build_law(4, 0.25, &LawSpec::DirichletMixture { alpha: vec![1.0; 4] }).unwrap_err(),
            Error::InfeasibleEllipticity {
                epsilon: 0.25,
                degree: 4
            }
        );
        let point = LawSpec::FiniteSupport {
            vectors: vec![vec![0.4, 0.3, 0.2, 0.1]],
            weights: vec![1.0],
        };
        assert!(build_law(4, 0.1, &point).is_ok());
        assert!(matches!(
            build_law(4, 0.15, &point).unwrap_err(),
            Error::EllipticityViolation(_)
        ));
        assert!(matches!(
            build_law(4, 0.1, &LawSpec::DirichletMixture { alpha: vec![1.0, 0.0, 1.0, 1.0] })
                .unwrap_err(),
            Error::InvalidParameter(_)
        ));
    }

    #[test]
    fn point_mass_is_constant() {
        let law = uniform_law(4);
        let env = Environment::new(law, 3);
        let g = GeneratorSet::new(2, 0).unwrap();
        for v in g.ball(3) {
            assert_eq!(env.transition_at(&v), TransitionVector::uniform(4));
        }
    }

    #[test]
    fn mixture_formula() {
        let p = TransitionVector::mixture(0.1, &[1.0, 0.0, 0.0, 0.0]);
        let expect = [0.7, 0.1, 0.1, 0.1];
        for (a, b) in p.probs().iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn queries_are_deterministic() {
        let env = Environment::new(dirichlet(4, 0.1), 99);
        let g = GeneratorSet::new(2, 0).unwrap();
        let x = g.reduce_word(&[0, 2, 2, 1]).unwrap();
        let a = env.transition_at(&x);
        let b = env.transition_at(&x);
        assert_eq!(a.probs(), b.probs());
        let other = Environment::new(dirichlet(4, 0.1), 100).transition_at(&x);
        assert_ne!(a, other);
    }

    #[test]
    fn elliptic_and_normalised() {
        let law = dirichlet(5, 0.05);
        let mut rng = stream(1, "test", 0);
        for _ in 0..20_000 {
            let p = law.sample(&mut rng);
            assert!(p.min() >= 0.05);
            assert!((p.probs().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn dirichlet_coordinates_have_mean_one_over_d() {
        let d = 4;
        let mix = DirichletMixture {
            epsilon: 0.1,
            alpha: vec![1.0; d],
            gammas: vec![Gamma::new(1.0, 1.0).unwrap(); d],
        };
        let n = 40_000;
        let mut rng = stream(5, "test", 0);
        let mut sums = vec![0.0; d];
        for _ in 0..n {
            for (s, v) in sums.iter_mut().zip(mix.sample_dirichlet(&mut rng)) {
                *s += v;
            }
        }
        // Var of a Dirichlet(1,..,1) coordinate is (d-1)/(d^2 (d+1)).
        let sd = ((d - 1) as f64 / ((d * d * (d + 1)) as f64) / n as f64).sqrt();
        for s in sums {
            assert!((s / n as f64 - 0.25).abs() < 3.0 * sd);
        }
    }

    #[test]
    fn finite_support_respects_weights() {
        let law = build_law(
            3,
            0.1,
            &LawSpec::FiniteSupport {
                vectors: vec![vec![0.8, 0.1, 0.1], vec![0.1, 0.1, 0.8]],
                weights: vec![0.3, 0.7],
            },
        )
        .unwrap();
        let mut rng = stream(2, "test", 0);
        let n = 20_000;
        let hits = (0..n).filter(|_| law.sample(&mut rng).get(0) > 0.5).count();
        let sd = (0.3f64 * 0.7 / n as f64).sqrt();
        assert!((hits as f64 / n as f64 - 0.3).abs() < 3.0 * sd);
    }
}
