//! Flat `key = value` run configuration.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;

use sha2::{Digest, Sha256};

use crate::environment::{build_law, LawSpec, TransitionLaw};
use crate::error::{Error, Result};
use crate::group::GeneratorSet;
use crate::regeneration::{RegenMode, DEFAULT_DELTA};
use crate::walk::Sampler;

/// Keys left out of the config hash: they change where or how fast a run
/// happens, not what it computes.
const UNHASHED: [&str; 2] = ["parallel.workers", "output.dir"];

const KEYS: [&str; 22] = [
    "group.k",
    "group.r",
    "env.kind",
    "env.epsilon",
    "env.alpha",
    "env.vectors",
    "env.weights",
    "env.sharing",
    "seed.master",
    "walk.n_steps",
    "walk.n_traj",
    "walk.sampler",
    "regen.mode",
    "regen.delta",
    "regen.include_first_block",
    "branching.psi",
    "branching.mc_samples",
    "tail.stride",
    "oracle.paths",
    "output.dir",
    "output.dump_trajectory",
    "parallel.workers",
];

/// Whether trajectories share one environment or each draw their own.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EnvSharing {
    #[default]
    Annealed,
    Quenched,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub group: GeneratorSet,
    pub law_spec: LawSpec,
    pub epsilon: f64,
    pub law: Arc<dyn TransitionLaw>,
    pub sharing: EnvSharing,
    pub master_seed: u64,
    pub n_steps: usize,
    pub n_traj: usize,
    pub sampler: Sampler,
    pub regen_mode: RegenMode,
    pub delta: usize,
    pub include_first_block: bool,
    pub psi: Vec<usize>,
    pub mc_samples: usize,
    pub tail_stride: usize,
    pub oracle_paths: usize,
    pub output_dir: PathBuf,
    pub dump_trajectory: bool,
    /// 0 means one worker per available core.
    pub workers: usize,
    /// Hex SHA-256 of the canonical key/value listing.
    pub hash: String,
}

struct Entry {
    line: usize,
    value: String,
}

struct Parser {
    entries: BTreeMap<String, Entry>,
    errors: Vec<String>,
}

impl Parser {
    fn raw(&self, key: &str) -> Option<(&str, usize)> {
        self.entries.get(key).map(|e| (e.value.as_str(), e.line))
    }

    fn line_of(&self, key: &str) -> String {
        self.entries
            .get(key)
            .map(|e| format!("line {}", e.line))
            .unwrap_or_else(|| "config".into())
    }

    fn err(&mut self, key: &str, msg: impl std::fmt::Display) {
        let at = self.line_of(key);
        self.errors.push(format!("{at}: {key}: {msg}"));
    }

    fn get<T: std::str::FromStr>(&mut self, key: &str, what: &str) -> Option<T> {
        let (v, line) = self.raw(key)?;
        match v.parse() {
            Ok(x) => Some(x),
            Err(_) => {
                let msg = format!("line {line}: {key}: expected {what}, got {v:?}");
                self.errors.push(msg);
                None
            }
        }
    }

    fn required<T: std::str::FromStr>(&mut self, key: &str, what: &str) -> Option<T> {
        if self.raw(key).is_none() {
            self.errors.push(format!("config: missing required key {key}"));
            return None;
        }
        self.get(key, what)
    }

    fn or<T: std::str::FromStr>(&mut self, key: &str, what: &str, default: T) -> T {
        match self.raw(key) {
            None => default,
            Some(_) => self.get(key, what).unwrap_or(default),
        }
    }

    fn list<T: std::str::FromStr>(&mut self, key: &str, sep: char, what: &str) -> Option<Vec<T>> {
        let (v, line) = self.raw(key)?;
        let parsed: std::result::Result<Vec<T>, _> = v.split(sep).map(|s| s.trim().parse()).collect();
        match parsed {
            Ok(x) => Some(x),
            Err(_) => {
                let msg = format!("line {line}: {key}: expected a '{sep}'-separated list of {what}, got {v:?}");
                self.errors.push(msg);
                None
            }
        }
    }

    fn choice<T: Copy>(&mut self, key: &str, options: &[(&str, T)], default: T) -> T {
        let Some((v, _)) = self.raw(key) else {
            return default;
        };
        if let Some(&(_, x)) = options.iter().find(|(name, _)| *name == v) {
            return x;
        }
        let names: Vec<&str> = options.iter().map(|(n, _)| *n).collect();
        let msg = format!("expected one of {}, got {v:?}", names.join(", "));
        self.err(key, msg);
        default
    }
}

fn split_lines(text: &str, overrides: &[String]) -> (BTreeMap<String, Entry>, Vec<String>) {
    let mut entries: BTreeMap<String, Entry> = BTreeMap::new();
    let mut errors = Vec::new();
    let mut take = |line_no: usize, raw: &str, is_override: bool, errors: &mut Vec<String>| {
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            return;
        }
        let where_ = if is_override {
            format!("override {line_no}")
        } else {
            format!("line {line_no}")
        };
        let Some((k, v)) = body.split_once('=') else {
            errors.push(format!("{where_}: expected key = value, got {body:?}"));
            return;
        };
        let (k, v) = (k.trim(), v.trim());
        if !KEYS.contains(&k) {
            errors.push(format!("{where_}: unknown key {k:?}"));
            return;
        }
        if v.is_empty() {
            errors.push(format!("{where_}: {k}: empty value"));
            return;
        }
        if !is_override {
            if let Some(prev) = entries.get(k) {
                errors.push(format!(
                    "line {line_no}: duplicate key {k:?} (first set on line {})",
                    prev.line
                ));
                return;
            }
        }
        let line = if is_override {
            entries.get(k).map(|e| e.line).unwrap_or(0)
        } else {
            line_no
        };
        entries.insert(
            k.to_string(),
            Entry {
                line,
                value: v.to_string(),
            },
        );
    };
    for (i, raw) in text.lines().enumerate() {
        take(i + 1, raw, false, &mut errors);
    }
    for (i, raw) in overrides.iter().enumerate() {
        take(i + 1, raw, true, &mut errors);
    }
    (entries, errors)
}

pub fn parse_config(text: &str) -> Result<RunConfig> {
    parse_config_with_overrides(text, &[])
}

/// Parse `text`, then apply `key=value` overrides, which replace rather
/// than duplicate. All errors are collected.
pub fn parse_config_with_overrides(text: &str, overrides: &[String]) -> Result<RunConfig> {
    let (entries, errors) = split_lines(text, overrides);
    let mut p = Parser { entries, errors };

    let k: Option<usize> = p.required("group.k", "a nonnegative integer");
    let r: Option<usize> = p.required("group.r", "a nonnegative integer");
    let group = match (k, r) {
        (Some(k), Some(r)) => match GeneratorSet::new(k, r) {
            Ok(g) => Some(g),
            Err(e) => {
                p.err("group.k", e);
                None
            }
        },
        _ => None,
    };

    let epsilon: Option<f64> = p.required("env.epsilon", "a number");
    let kind = p.raw("env.kind").map(|(v, _)| v.to_string());
    let law_spec = match kind.as_deref() {
        None => {
            p.errors.push("config: missing required key env.kind".into());
            None
        }
        Some("dirichlet") => {
            if p.raw("env.alpha").is_none() {
                p.err("env.kind", "dirichlet needs env.alpha");
            }
            p.list("env.alpha", ',', "numbers")
                .map(|alpha| LawSpec::DirichletMixture { alpha })
        }
        Some("finite") => {
            if p.raw("env.vectors").is_none() {
                p.err("env.kind", "finite needs env.vectors");
            }
            let raw = p.raw("env.vectors").map(|(v, line)| (v.to_string(), line));
            let vectors: Option<Vec<Vec<f64>>> = raw.and_then(|(v, line)| {
                let parsed: std::result::Result<Vec<Vec<f64>>, _> = v
                    .split(';')
                    .map(|vec| vec.split(',').map(|x| x.trim().parse::<f64>()).collect())
                    .collect();
                match parsed {
                    Ok(x) => Some(x),
                    Err(_) => {
                        p.errors.push(format!(
                            "line {line}: env.vectors: expected ';'-separated vectors of ','-separated numbers"
                        ));
                        None
                    }
                }
            });
            let weights = match p.raw("env.weights") {
                Some(_) => p.list("env.weights", ',', "numbers"),
                None => vectors
                    .as_ref()
                    .map(|vs| vec![1.0 / vs.len() as f64; vs.len()]),
            };
            match (vectors, weights) {
                (Some(vectors), Some(weights)) => Some(LawSpec::FiniteSupport { vectors, weights }),
                _ => None,
            }
        }
        Some(other) => {
            let msg = format!("expected dirichlet or finite, got {other:?}");
            p.err("env.kind", msg);
            None
        }
    };
    let law = match (&group, epsilon, &law_spec) {
        (Some(g), Some(eps), Some(spec)) => match build_law(g.degree(), eps, spec) {
            Ok(l) => Some(l),
            Err(e) => {
                let key = match e {
                    Error::InfeasibleEllipticity { .. } => "env.epsilon",
                    _ => match spec {
                        LawSpec::DirichletMixture { .. } => "env.alpha",
                        LawSpec::FiniteSupport { .. } => "env.vectors",
                    },
                };
                p.err(key, e);
                None
            }
        },
        _ => None,
    };

    let sharing = p.choice(
        "env.sharing",
        &[("annealed", EnvSharing::Annealed), ("quenched", EnvSharing::Quenched)],
        EnvSharing::Annealed,
    );
    let master_seed: Option<u64> = p.required("seed.master", "an unsigned 64-bit integer");
    let n_steps = p.or("walk.n_steps", "a nonnegative integer", 1000usize);
    let n_traj = p.or("walk.n_traj", "a positive integer", 1usize);
    if n_traj == 0 {
        p.err("walk.n_traj", "must be >= 1");
    }
    let sampler = p.choice(
        "walk.sampler",
        &[
            ("categorical", Sampler::Categorical),
            ("race", Sampler::ExponentialRace),
        ],
        Sampler::Categorical,
    );
    let regen_mode = p.choice(
        "regen.mode",
        &[("strict", RegenMode::Strict), ("literal", RegenMode::Literal)],
        RegenMode::Strict,
    );
    let delta = p.or("regen.delta", "a positive integer", DEFAULT_DELTA);
    if delta == 0 {
        p.err("regen.delta", Error::InvalidMargin(0));
    }
    let include_first_block = p.or("regen.include_first_block", "true or false", false);
    let psi = if p.raw("branching.psi").is_some() {
        p.list("branching.psi", ',', "positive integers").unwrap_or_default()
    } else {
        vec![1, 2, 3, 4, 5, 6]
    };
    if psi.contains(&0) {
        p.err("branching.psi", "entries must be >= 1");
    }
    let mc_samples = p.or("branching.mc_samples", "a positive integer", 1000usize);
    if mc_samples == 0 {
        p.err("branching.mc_samples", "must be >= 1");
    }
    let tail_stride = p.or("tail.stride", "a positive integer", 1usize);
    if tail_stride == 0 {
        p.err("tail.stride", "must be >= 1");
    }
    let oracle_paths = p.or("oracle.paths", "a positive integer", 1000usize);
    if oracle_paths == 0 {
        p.err("oracle.paths", "must be >= 1");
    }
    let output_dir = PathBuf::from(p.raw("output.dir").map(|(v, _)| v).unwrap_or("out"));
    let dump_trajectory = p.or("output.dump_trajectory", "true or false", false);
    let workers = p.or("parallel.workers", "a nonnegative integer", 0usize);

    if !p.errors.is_empty() {
        return Err(Error::Config(p.errors));
    }
    let hash = config_hash(&p.entries);
    Ok(RunConfig {
        group: group.unwrap(),
        law_spec: law_spec.unwrap(),
        epsilon: epsilon.unwrap(),
        law: law.unwrap(),
        sharing,
        master_seed: master_seed.unwrap(),
        n_steps,
        n_traj,
        sampler,
        regen_mode,
        delta,
        include_first_block,
        psi,
        mc_samples,
        tail_stride,
        oracle_paths,
        output_dir,
        dump_trajectory,
        workers,
        hash,
    })
}

fn config_hash(entries: &BTreeMap<String, Entry>) -> String {
    let mut h = Sha256::new();
    for (k, e) in entries {
        if UNHASHED.contains(&k.as_str()) {
            continue;
        }
        h.update(k.as_bytes());
        h.update(b"=");
        h.update(e.value.as_bytes());
        h.update(b"\n");
    }
    h.finalize()
        .iter()
        .take(8)
        .map(|b| format!("{b:02x}"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "\
# minimal
group.k = 2
group.r = 0
env.kind = dirichlet
env.epsilon = 0.1
env.alpha = 1,1,1,1
seed.master = 42
walk.n_steps = 100
";

    fn errors(text: &str) -> Vec<String> {
        match parse_config(text) {
            Err(Error::Config(e)) => e,
            other => panic!("expected config errors, got {other:?}"),
        }
    }

    #[test]
    fn minimal_config() {
        let c = parse_config(MINIMAL).unwrap();
        assert_eq!(c.group.degree(), 4);
        assert_eq!(c.master_seed, 42);
        assert_eq!(c.n_steps, 100);
        assert_eq!(c.regen_mode, RegenMode::Strict);
        assert_eq!(c.delta, DEFAULT_DELTA);
        assert_eq!(c.law_spec, LawSpec::DirichletMixture { alpha: vec![1.0; 4] });
        assert_eq!(c.hash.len(), 16);
    }

    #[test]
    fn infeasible_epsilon_at_parse() {
        let e = errors(&MINIMAL.replace("env.epsilon = 0.1", "epsilon=0.3\nenv.epsilon=0.3"));
        assert!(e.iter().any(|m| m.contains("unknown key \"epsilon\"")));
        assert!(e.iter().any(|m| m.contains("line 6: env.epsilon") && m.contains("infeasible")), "{e:?}");
    }

    #[test]
    fn duplicate_key_cites_both_lines() {
        let e = errors(&format!("{MINIMAL}seed.master = 7\n"));
        assert_eq!(e, vec!["line 9: duplicate key \"seed.master\" (first set on line 7)".to_string()]);
    }

    #[test]
    fn collects_every_error() {
        let text = "group.k = x\ngroup.r = 0\nenv.kind = gauss\nbogus = 1\nwalk.n_traj = 0\n";
        let e = errors(text);
        assert!(e.iter().any(|m| m.starts_with("line 1: group.k")));
        assert!(e.iter().any(|m| m.starts_with("line 3: env.kind")));
        assert!(e.iter().any(|m| m.starts_with("line 4: unknown key")));
        assert!(e.iter().any(|m| m.starts_with("line 5: walk.n_traj")));
        assert!(e.iter().any(|m| m.contains("missing required key seed.master")));
        assert!(e.len() >= 6, "{e:?}");
    }

    #[test]
    fn finite_support_and_overrides() {
        let text = MINIMAL
            .replace("env.kind = dirichlet", "env.kind = finite")
            .replace("env.alpha = 1,1,1,1", "env.vectors = 0.25,0.25,0.25,0.25; 0.4,0.2,0.2,0.2");
        let c = parse_config(&text).unwrap();
        assert!(c.law.is_random());
        let c2 = parse_config_with_overrides(&text, &["walk.n_steps = 5".into()]).unwrap();
        assert_eq!(c2.n_steps, 5);
        assert_ne!(c.hash, c2.hash);
        let e = match parse_config(&text.replace("0.4,0.2", "0.02,0.58")) {
            Err(Error::Config(e)) => e,
            other => panic!("{other:?}"),
        };
        assert!(e[0].contains("env.vectors") && e[0].contains("ellipticity"), "{e:?}");
    }

    #[test]
    fn hash_ignores_workers_and_output_dir() {
        let a = parse_config(MINIMAL).unwrap();
        let b = parse_config(&format!("{MINIMAL}parallel.workers = 3\noutput.dir = /tmp/x\n")).unwrap();
        assert_eq!(a.hash, b.hash);
        let c = parse_config(&format!("{MINIMAL}walk.n_traj = 3\n")).unwrap();
        assert_ne!(a.hash, c.hash);
    }
}
