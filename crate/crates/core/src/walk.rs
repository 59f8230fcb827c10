//! The quenched walk `X_n` on the tree, its two step samplers, the walk
//! restricted to a geodesic path, and hitting / return functionals.

use std::collections::{BTreeMap, HashMap};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};

use crate::environment::{Environment, TransitionVector};
use crate::error::{Error, Result};
use crate::group::{GeneratorSet, Vertex};
use crate::seeds::VertexKey;

/// A time that may lie beyond the simulated horizon.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum HorizonTime {
    At(usize),
    BeyondHorizon,
}

impl HorizonTime {
    pub fn finite(self) -> Option<usize> {
        match self {
            HorizonTime::At(n) => Some(n),
            HorizonTime::BeyondHorizon => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Sampler {
    #[default]
    Categorical,
    ExponentialRace,
}

impl Sampler {
    #[inline]
    pub fn draw(self, p: &TransitionVector, rng: &mut ChaCha8Rng) -> u8 {
        match self {
            Sampler::Categorical => sample_categorical(p, rng),
            Sampler::ExponentialRace => sample_race(p, rng),
        }
    }
}

/// One uniform and a linear scan over the cumulative weights.
#[inline]
pub fn sample_categorical(p: &TransitionVector, rng: &mut ChaCha8Rng) -> u8 {
    let probs = p.probs();
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (s, &w) in probs.iter().enumerate() {
        acc += w;
        if u < acc {
            return s as u8;
        }
    }
    // rounding left u above the final partial sum
    probs.iter().rposition(|&w| w > 0.0).unwrap_or(0) as u8
}

/// `argmin_s h_s / p_s` over independent unit exponentials `h_s`; ties go to
/// the smallest index.
pub fn sample_race(p: &TransitionVector, rng: &mut ChaCha8Rng) -> u8 {
    let mut best = f64::INFINITY;
    let mut arg = 0u8;
    for (s, &w) in p.probs().iter().enumerate() {
        let h: f64 = Exp1.sample(rng);
        let t = if w > 0.0 { h / w } else { f64::INFINITY };
        if t < best {
            best = t;
            arg = s as u8;
        }
    }
    arg
}

pub fn step_categorical(env: &Environment, gs: &GeneratorSet, x: &Vertex, rng: &mut ChaCha8Rng) -> Vertex {
    let s = sample_categorical(&env.transition_at(x), rng);
    gs.left_multiply(s, x)
}

pub fn step_exponential_race(
    env: &Environment,
    gs: &GeneratorSet,
    x: &Vertex,
    rng: &mut ChaCha8Rng,
) -> Vertex {
    let s = sample_race(&env.transition_at(x), rng);
    gs.left_multiply(s, x)
}

/// Incremental walker that keeps the keys (and cached transition vectors)
/// of every vertex on the geodesic from the root to its position.
pub struct Walker<'a> {
    env: &'a Environment,
    gs: GeneratorSet,
    pos: Vertex,
    keys: Vec<VertexKey>,
    cache: Vec<Option<TransitionVector>>,
    constant: Option<TransitionVector>,
}

impl<'a> Walker<'a> {
    pub fn new(env: &'a Environment, gs: GeneratorSet, start: Vertex) -> Self {
        assert_eq!(env.degree(), gs.degree(), "environment degree mismatch");
        let constant = (!env.law().is_random()).then(|| env.transition_at(&start));
        let mut keys = Vec::new();
        let mut cache = Vec::new();
        if constant.is_none() {
            keys.reserve(start.level() + 1);
            keys.push(env.root_key());
            for &s in start.path() {
                let k = keys.last().unwrap().child(s);
                keys.push(k);
            }
            cache = vec![None; keys.len()];
        }
        Self {
            env,
            gs,
            pos: start,
            keys,
            cache,
            constant,
        }
    }

    pub fn position(&self) -> &Vertex {
        &self.pos
    }

    /// Transition vector at the current position.
    pub fn here(&mut self) -> &TransitionVector {
        if let Some(c) = &self.constant {
            return c;
        }
        let top = self.cache.len() - 1;
        if self.cache[top].is_none() {
            self.cache[top] = Some(self.env.transition_for_key(&self.keys[top]));
        }
        self.cache[top].as_ref().unwrap()
    }

    /// Apply generator `s` to the current position.
    #[inline]
    pub fn apply(&mut self, s: u8) {
        let outward = self.gs.apply(s, &mut self.pos);
        if self.constant.is_some() {
            return;
        }
        if outward {
            let k = self.keys.last().unwrap().child(s);
            self.keys.push(k);
            self.cache.push(None);
        } else {
            self.keys.pop();
            self.cache.pop();
        }
    }

    /// Draw and apply one step; returns the generator used.
    #[inline]
    pub fn step(&mut self, sampler: Sampler, rng: &mut ChaCha8Rng) -> u8 {
        let s = sampler.draw(self.here(), rng);
        self.apply(s);
        s
    }
}

/// A finite walk path, stored as the generators applied at each step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trajectory {
    pub start: Vertex,
    pub steps: Vec<u8>,
    pub gs: GeneratorSet,
    pub stream_id: u64,
}

impl Trajectory {
    pub fn from_vertices(gs: GeneratorSet, vertices: &[Vertex]) -> Result<Self> {
        let start = vertices
            .first()
            .cloned()
            .ok_or_else(|| Error::InvalidInput("empty vertex sequence".into()))?;
        let steps = vertices
            .windows(2)
            .map(|w| {
                gs.generator_between(&w[0], &w[1]).ok_or_else(|| {
                    Error::InvalidInput(format!("{} and {} are not adjacent", w[0], w[1]))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            start,
            steps,
            gs,
            stream_id: 0,
        })
    }

    /// Number of steps `n`; the trajectory has `n + 1` positions.
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Replays the walk; yields `X_0, ..., X_n`.
    pub fn vertices(&self) -> impl Iterator<Item = Vertex> + '_ {
        let mut cur = self.start.clone();
        std::iter::once(self.start.clone()).chain(self.steps.iter().map(move |&s| {
            self.gs.apply(s, &mut cur);
            cur.clone()
        }))
    }

    pub fn vertex_at(&self, n: usize) -> Vertex {
        let mut cur = self.start.clone();
        for &s in &self.steps[..n] {
            self.gs.apply(s, &mut cur);
        }
        cur
    }

    pub fn end(&self) -> Vertex {
        self.vertex_at(self.steps.len())
    }

    /// `|X_0|, ..., |X_n|`.
    pub fn levels(&self) -> Vec<usize> {
        let mut cur = self.start.clone();
        let mut out = Vec::with_capacity(self.steps.len() + 1);
        out.push(cur.level());
        for &s in &self.steps {
            self.gs.apply(s, &mut cur);
            out.push(cur.level());
        }
        out
    }
}

/// Simulate `n_steps` steps of the quenched walk from `start`.
pub fn simulate_walk(
    env: &Environment,
    gs: GeneratorSet,
    start: &Vertex,
    n_steps: usize,
    sampler: Sampler,
    rng: &mut ChaCha8Rng,
    stream_id: u64,
) -> Trajectory {
    let mut w = Walker::new(env, gs, start.clone());
    let mut steps = Vec::with_capacity(n_steps);
    for _ in 0..n_steps {
        steps.push(w.step(sampler, rng));
    }
    Trajectory {
        start: start.clone(),
        steps,
        gs,
        stream_id,
    }
}

/// A vertex of the tree spanned by a trajectory.
#[derive(Debug, Clone)]
pub struct VisitNode {
    pub parent: Option<u32>,
    pub level: usize,
    /// Vertex type (first letter); `None` for the root.
    pub kind: Option<u8>,
    children: Vec<(u8, u32)>,
}

/// Trajectory positions mapped to dense node ids, one node per distinct
/// visited vertex (plus any unvisited ancestors of the start, which are
/// never referenced by `at`).
#[derive(Debug, Clone)]
pub struct VisitTree {
    pub nodes: Vec<VisitNode>,
    /// `at[n]` is the node id of `X_n`.
    pub at: Vec<u32>,
}

impl VisitTree {
    pub fn build(traj: &Trajectory) -> Self {
        let gs = traj.gs;
        let start = &traj.start;
        let mut nodes = Vec::with_capacity(traj.len() / 2 + 2);
        // ancestors of the start, root first
        for i in 0..=start.level() {
            nodes.push(VisitNode {
                parent: i.checked_sub(1).map(|p| p as u32),
                level: i,
                kind: (i > 0).then(|| start.path()[i - 1]),
                children: Vec::new(),
            });
            if i > 0 {
                nodes[i - 1].children.push((start.path()[i - 1], i as u32));
            }
        }
        let mut cur = start.level() as u32;
        let mut at = Vec::with_capacity(traj.len() + 1);
        at.push(cur);
        for &s in &traj.steps {
            let node = &nodes[cur as usize];
            let back = node.kind.map(|t| gs.inv(t));
            if back == Some(s) {
                cur = node.parent.expect("ancestor chain is complete");
            } else if let Some(&(_, c)) = node.children.iter().find(|(l, _)| *l == s) {
                cur = c;
            } else {
                let id = nodes.len() as u32;
                let level = node.level + 1;
                nodes.push(VisitNode {
                    parent: Some(cur),
                    level,
                    kind: Some(s),
                    children: Vec::new(),
                });
                nodes[cur as usize].children.push((s, id));
                cur = id;
            }
            at.push(cur);
        }
        Self { nodes, at }
    }

    pub fn level_at(&self, n: usize) -> usize {
        self.nodes[self.at[n] as usize].level
    }
}

/// `T(y)`, `T_n`, `R` and `R(y)` evaluated on a finite trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct HittingTimes {
    /// `T(y)` for every visited `y`.
    pub first_visit: HashMap<Vertex, usize>,
    /// `T_n` for every level reached.
    pub level_hit: BTreeMap<usize, usize>,
    /// `R`: first return to `X_0`.
    pub return_to_start: HorizonTime,
    /// `R(y)` for every visited `y`: first step entering `y` from its own
    /// subtree.
    pub subtree_return: HashMap<Vertex, HorizonTime>,
}

impl HittingTimes {
    pub fn hit(&self, y: &Vertex) -> HorizonTime {
        self.first_visit
            .get(y)
            .map_or(HorizonTime::BeyondHorizon, |&n| HorizonTime::At(n))
    }

    pub fn level(&self, n: usize) -> HorizonTime {
        self.level_hit
            .get(&n)
            .map_or(HorizonTime::BeyondHorizon, |&t| HorizonTime::At(t))
    }

    pub fn subtree_return_of(&self, y: &Vertex) -> HorizonTime {
        self.subtree_return
            .get(y)
            .copied()
            .unwrap_or(HorizonTime::BeyondHorizon)
    }
}

pub fn hitting_and_return_times(traj: &Trajectory) -> HittingTimes {
    let mut first_visit = HashMap::new();
    let mut level_hit = BTreeMap::new();
    let mut subtree_return = HashMap::new();
    let mut return_to_start = HorizonTime::BeyondHorizon;
    let mut prev: Option<Vertex> = None;
    for (n, x) in traj.vertices().enumerate() {
        first_visit.entry(x.clone()).or_insert(n);
        level_hit.entry(x.level()).or_insert(n);
        if n >= 1 && return_to_start == HorizonTime::BeyondHorizon && x == traj.start {
            return_to_start = HorizonTime::At(n);
        }
        if let Some(p) = &prev {
            // neighbours: p is in the subtree of x iff p is one level deeper
            let from_below = p.level() == x.level() + 1;
            debug_assert_eq!(from_below, p.is_in_subtree_of(&x));
            if from_below {
                subtree_return.entry(x.clone()).or_insert(HorizonTime::At(n));
            }
        }
        prev = Some(x);
    }
    for y in first_visit.keys() {
        subtree_return
            .entry(y.clone())
            .or_insert(HorizonTime::BeyondHorizon);
    }
    HittingTimes {
        first_visit,
        level_hit,
        return_to_start,
        subtree_return,
    }
}

/// Environment along a geodesic `x_0, ..., x_n`: for each interior vertex
/// `x_j` the pair `(omega(x_j, x_{j-1}), omega(x_j, x_{j+1}))`.
#[derive(Debug, Clone, PartialEq)]
pub struct PathEnvironment {
    pub vertices: Option<Vec<Vertex>>,
    /// Entry `j - 1` holds `(back, forward)` for interior vertex `x_j`.
    pub interior: Vec<(f64, f64)>,
}

impl PathEnvironment {
    /// A path of `interior.len() + 1` edges with abstract vertices.
    pub fn from_pairs(interior: Vec<(f64, f64)>) -> Self {
        Self {
            vertices: None,
            interior,
        }
    }

    /// Read the environment along the geodesic from `x` to `y`.
    pub fn from_geodesic(env: &Environment, gs: &GeneratorSet, x: &Vertex, y: &Vertex) -> Result<Self> {
        let path = gs.geodesic(x, y);
        if path.len() < 2 {
            return Err(Error::InvalidInput("path must have length >= 1".into()));
        }
        let interior = (1..path.len() - 1)
            .map(|j| {
                let p = env.transition_at(&path[j]);
                let back = gs.generator_between(&path[j], &path[j - 1]).unwrap();
                let fwd = gs.generator_between(&path[j], &path[j + 1]).unwrap();
                (p.get(back), p.get(fwd))
            })
            .collect();
        Ok(Self {
            vertices: Some(path),
            interior,
        })
    }

    /// Number of edges `n`.
    pub fn len(&self) -> usize {
        self.interior.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopRule {
    /// Stop at the first of: hitting `x_n`, returning to `x_0`.
    FirstOfEither,
    /// Stop only on hitting `x_n`; returns to `x_0` are counted and the walk
    /// is forced back to `x_1`.
    FarEndOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PathOutcome {
    HitFarEnd,
    ReturnedToStart,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RestrictedRun {
    pub outcome: PathOutcome,
    /// Visits to each `x_j`, the initial position included.
    pub visits: Vec<u64>,
    pub steps: u64,
}

/// Walk on the path with interior probabilities renormalised to the two
/// in-path neighbours; the step out of `x_0` is forced.
pub fn simulate_restricted_walk(path: &PathEnvironment, stop: StopRule, rng: &mut ChaCha8Rng) -> RestrictedRun {
    let n = path.len();
    let mut visits = vec![0u64; n + 1];
    let mut pos = 0usize;
    let mut steps = 0u64;
    visits[0] = 1;
    loop {
        pos = if pos == 0 {
            1
        } else {
            let (back, fwd) = path.interior[pos - 1];
            if rng.gen::<f64>() * (back + fwd) < fwd {
                pos + 1
            } else {
                pos - 1
            }
        };
        steps += 1;
        visits[pos] += 1;
        if pos == n {
            return RestrictedRun {
                outcome: PathOutcome::HitFarEnd,
                visits,
                steps,
            };
        }
        if pos == 0 && stop == StopRule::FirstOfEither {
            return RestrictedRun {
                outcome: PathOutcome::ReturnedToStart,
                visits,
                steps,
            };
        }
    }
}
