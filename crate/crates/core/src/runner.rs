//! Command execution: trajectory batches on a worker pool, reduction in
//! trajectory-id order, and artifact writing under `output.dir`.

use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::branching::{escape_probability_path, estimate_offspring_matrix, perron_root, PathConvention};
use crate::config::{EnvSharing, RunConfig};
use crate::environment::Environment;
use crate::error::{Error, Result};
use crate::group::Vertex;
use crate::oracle::{exact_expected_hitting_time, exact_hitting_probability, path_chain, path_escape_probability};
use crate::regeneration::{detect_on_tree, occupation_stats, RegenMode};
use crate::seeds::{derive_seed, stream};
use crate::stats::{
    endpoint_speed, estimate_sigma2, estimate_speed, l1_tail_fit, moment_doubling, normality_check, survival_table,
    BlockSummary, TailReport,
};
use crate::walk::{simulate_walk, PathEnvironment, Trajectory, VisitTree};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
pub const THREADS_ENV: &str = "RWRE_THREADS";

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

const ORACLE_TOL: f64 = 1e-10;
const KS_ALPHA: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Simulate,
    Speed,
    Clt,
    Branching,
    L1Tail,
    OracleCheck,
}

impl Command {
    pub const ALL: [Command; 6] = [
        Command::Simulate,
        Command::Speed,
        Command::Clt,
        Command::Branching,
        Command::L1Tail,
        Command::OracleCheck,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Speed => "speed",
            Command::Clt => "clt",
            Command::Branching => "branching",
            Command::L1Tail => "l1-tail",
            Command::OracleCheck => "oracle-check",
        }
    }
}

impl FromStr for Command {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Command::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown command {s:?}")))
    }
}

/// What a command produced.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub exit_code: i32,
    /// Records written to `summary.jsonl` after the provenance line.
    pub records: Vec<Value>,
    pub files: Vec<PathBuf>,
}

/// Worker count: `RWRE_THREADS` if set, else `parallel.workers` (0 = all cores).
pub fn effective_workers(cfg: &RunConfig) -> Result<usize> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| Error::InvalidInput(format!("{THREADS_ENV} must be a nonnegative integer, got {v:?}"))),
        Err(_) => Ok(cfg.workers),
    }
}

/// Environment of trajectory `id`.
pub fn environment_for(cfg: &RunConfig, id: u64) -> Environment {
    let seed = match cfg.sharing {
        EnvSharing::Annealed => derive_seed(cfg.master_seed, "annealed-env", id),
        EnvSharing::Quenched => derive_seed(cfg.master_seed, "quenched-env", 0),
    };
    Environment::new(cfg.law.clone(), seed)
}

/// Trajectory `id` from the root; its randomness depends only on the
/// master seed and `id`.
pub fn trajectory(cfg: &RunConfig, id: u64) -> Trajectory {
    let env = environment_for(cfg, id);
    let mut rng = stream(cfg.master_seed, "walk", id);
    simulate_walk(&env, cfg.group, &Vertex::root(), cfg.n_steps, cfg.sampler, &mut rng, id)
}

/// Run `f` on every trajectory of the config over `workers` threads and
/// return the results in trajectory-id order.
pub fn map_trajectories<T, F>(cfg: &RunConfig, workers: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64, Trajectory) -> T + Sync,
{
    in_pool(workers, || {
        (0..cfg.n_traj as u64)
            .into_par_iter()
            .map(|id| f(id, trajectory(cfg, id)))
            .collect()
    })
}

fn in_pool<T: Send>(workers: usize, job: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidInput(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(job))
}

struct Artifacts {
    dir: PathBuf,
    header: String,
    files: Vec<PathBuf>,
}

impl Artifacts {
    fn new(cfg: &RunConfig, cmd: Command) -> Result<Self> {
        fs::create_dir_all(&cfg.output_dir)?;
        Ok(Self {
            dir: cfg.output_dir.clone(),
            header: format!("# rwre {VERSION} config={} command={}\n", cfg.hash, cmd.as_str()),
            files: Vec::new(),
        })
    }

    fn csv(&mut self, name: &str, columns: &str, rows: impl IntoIterator<Item = String>) -> Result<()> {
        let mut out = self.header.clone();
        out.push_str(columns);
        out.push('\n');
        for r in rows {
            out.push_str(&r);
            out.push('\n');
        }
        self.write(name, out)
    }

    fn write(&mut self, name: &str, body: String) -> Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, body)?;
        self.files.push(path);
        Ok(())
    }
}

fn provenance(cfg: &RunConfig, cmd: Command) -> Value {
    json!({
        "rwre": VERSION,
        "config_hash": cfg.hash,
        "command": cmd.as_str(),
        "degree": cfg.group.degree(),
        "law": cfg.law.name(),
        "epsilon": cfg.epsilon,
        "master_seed": cfg.master_seed,
    })
}

/// Run `cmd` and write its artifacts. Statistical check failures give exit
/// code 1 with the reason recorded; parameter and I/O problems are errors.
pub fn run_command(cmd: Command, cfg: &RunConfig) -> Result<RunOutcome> {
    let workers = effective_workers(cfg)?;
    let mut art = Artifacts::new(cfg, cmd)?;
    let (exit_code, records) = match cmd {
        Command::Simulate => run_simulate(cfg, workers, &mut art)?,
        Command::Speed => run_speed(cfg, workers)?,
        Command::Clt => run_clt(cfg, workers, &mut art)?,
        Command::Branching => run_branching(cfg, workers, &mut art)?,
        Command::L1Tail => run_l1_tail(cfg, workers, &mut art)?,
        Command::OracleCheck => run_oracle_check(cfg, &mut art)?,
    };
    let walks = matches!(cmd, Command::Speed | Command::Clt | Command::L1Tail);
    if cfg.dump_trajectory && walks {
        for id in 0..cfg.n_traj {
            write_trajectory(cfg, &mut art, id, &trajectory(cfg, id as u64))?;
        }
    }
    let mut summary = String::new();
    for v in std::iter::once(&provenance(cfg, cmd)).chain(&records) {
        writeln!(summary, "{v}").unwrap();
    }
    art.write("summary.jsonl", summary)?;
    Ok(RunOutcome {
        exit_code,
        records,
        files: art.files,
    })
}

fn check_failed(records: &mut Vec<Value>, reason: String) -> i32 {
    records.push(json!({"record": "check-failed", "reason": reason}));
    EXIT_CHECK_FAILED
}

/// Errors that mean "not enough data" rather than a bad request.
fn is_statistical(e: &Error) -> bool {
    matches!(e, Error::InsufficientBlocks { .. } | Error::InvalidInput(_))
}

struct SimRow {
    traj: Trajectory,
    blocks: Vec<crate::regeneration::Block>,
    entries: (usize, usize, usize),
    subset: bool,
}

fn run_simulate(cfg: &RunConfig, workers: usize, art: &mut Artifacts) -> Result<(i32, Vec<Value>)> {
    let rows = map_trajectories(cfg, workers, |_, traj| -> Result<SimRow> {
        let tree = VisitTree::build(&traj);
        let strict = detect_on_tree(&tree, RegenMode::Strict, cfg.delta)?;
        let literal = detect_on_tree(&tree, RegenMode::Literal, cfg.delta)?;
        let lit: std::collections::HashSet<usize> = literal.entries.iter().map(|e| e.level).collect();
        let subset = strict.entries.iter().all(|e| lit.contains(&e.level));
        let rec = if cfg.regen_mode == RegenMode::Strict { strict } else { literal.clone() };
        Ok(SimRow {
            blocks: rec.blocks.clone(),
            entries: (
                rec.confirmed().count(),
                rec.entries.len(),
                literal.entries.len(),
            ),
            subset,
            traj,
        })
    })?
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let mut block_rows = Vec::new();
    for (id, r) in rows.iter().enumerate() {
        for b in &r.blocks {
            block_rows.push(format!(
                "{id},{},{},{},{},{},{},{},{}",
                b.index, b.tau, b.level, b.kind, b.y, b.z, b.l_block, b.d_block
            ));
        }
    }
    art.csv("blocks.csv", "traj,block,tau,level,type,y,z,l_block,d_block", block_rows)?;
    for (id, r) in rows.iter().enumerate() {
        write_trajectory(cfg, art, id, &r.traj)?;
    }

    let subset = rows.iter().all(|r| r.subset);
    let end_levels: Vec<usize> = rows.iter().map(|r| r.traj.levels().last().copied().unwrap_or(0)).collect();
    let mut records = vec![json!({
        "record": "simulate",
        "n_traj": cfg.n_traj,
        "n_steps": cfg.n_steps,
        "mode": cfg.regen_mode.as_str(),
        "delta": cfg.delta,
        "blocks": rows.iter().map(|r| r.blocks.len()).sum::<usize>(),
        "confirmed_regenerations": rows.iter().map(|r| r.entries.0).sum::<usize>(),
        "qualifying_levels": rows.iter().map(|r| r.entries.1).sum::<usize>(),
        "literal_levels": rows.iter().map(|r| r.entries.2).sum::<usize>(),
        "mean_end_level": end_levels.iter().sum::<usize>() as f64 / end_levels.len() as f64,
        "strict_subset_literal": subset,
    })];
    let code = if subset {
        EXIT_OK
    } else {
        check_failed(&mut records, "a strict regeneration level is not a literal one".into())
    };
    Ok((code, records))
}

fn write_trajectory(cfg: &RunConfig, art: &mut Artifacts, id: usize, traj: &Trajectory) -> Result<()> {
    let gs = cfg.group;
    let lines = traj.levels().into_iter().enumerate().map(|(n, l)| {
        let g = if n == 0 { String::new() } else { gs.label(traj.steps[n - 1]) };
        format!("{n},{l},{g}")
    });
    art.csv(&format!("trajectory_{id}.csv"), "n,level,generator", lines)
}

struct BlockRow {
    summary: BlockSummary,
    end_level: usize,
}

fn collect_blocks(cfg: &RunConfig, workers: usize) -> Result<Vec<BlockRow>> {
    let d = cfg.group.degree();
    map_trajectories(cfg, workers, |_, traj| -> Result<BlockRow> {
        let tree = VisitTree::build(&traj);
        let rec = detect_on_tree(&tree, cfg.regen_mode, cfg.delta)?;
        Ok(BlockRow {
            summary: BlockSummary::from_blocks(d, rec.estimator_blocks(cfg.include_first_block)),
            end_level: tree.level_at(traj.len()),
        })
    })?
    .into_iter()
    .collect()
}

fn merged(cfg: &RunConfig, rows: &[BlockRow]) -> BlockSummary {
    let mut all = BlockSummary::new(cfg.group.degree());
    for r in rows {
        all.merge(&r.summary);
    }
    all
}

fn run_speed(cfg: &RunConfig, workers: usize) -> Result<(i32, Vec<Value>)> {
    let rows = collect_blocks(cfg, workers)?;
    let blocks = merged(cfg, &rows);
    let ends: Vec<usize> = rows.iter().map(|r| r.end_level).collect();
    let mut records = Vec::new();
    let est = match estimate_speed(&blocks) {
        Ok(e) => e,
        Err(e) if is_statistical(&e) => return Ok((check_failed(&mut records, e.to_string()), records)),
        Err(e) => return Err(e),
    };
    records.push(json!({"record": "speed", "estimate": est, "mode": cfg.regen_mode.as_str(), "delta": cfg.delta}));
    match endpoint_speed(&ends, cfg.n_steps) {
        Ok(ep) => records.push(json!({"record": "speed", "estimate": ep})),
        Err(e) => records.push(json!({"record": "speed-endpoint-skipped", "reason": e.to_string()})),
    }
    let code = if est.excludes_zero() {
        EXIT_OK
    } else {
        check_failed(&mut records, "speed confidence interval contains 0".into())
    };
    Ok((code, records))
}

fn run_clt(cfg: &RunConfig, workers: usize, art: &mut Artifacts) -> Result<(i32, Vec<Value>)> {
    let rows = collect_blocks(cfg, workers)?;
    let blocks = merged(cfg, &rows);
    let mut records = Vec::new();
    let stat = (|| {
        let v = estimate_speed(&blocks)?;
        let mut c = estimate_sigma2(&blocks, v.v_hat)?;
        let n = cfg.n_steps as f64;
        let scale = (n * c.sigma2_hat).sqrt();
        let z: Vec<f64> = rows.iter().map(|r| (r.end_level as f64 - n * v.v_hat) / scale).collect();
        let ks = normality_check(&z, 0.0, 1.0, true, KS_ALPHA)?;
        c.ks_distance = Some(ks.distance);
        c.sample_count = Some(ks.m);
        Ok::<_, Error>((v, c, ks, z))
    })();
    let (v, c, ks, z) = match stat {
        Ok(x) => x,
        Err(e) if is_statistical(&e) => return Ok((check_failed(&mut records, e.to_string()), records)),
        Err(e) => return Err(e),
    };
    art.csv(
        "standardized.csv",
        "traj,end_level,z",
        rows.iter().zip(&z).enumerate().map(|(i, (r, z))| format!("{i},{},{z}", r.end_level)),
    )?;
    let sigma_positive = c.sigma2_hat - 3.0 * c.sigma2_se > 0.0;
    records.push(json!({"record": "speed", "estimate": v}));
    records.push(json!({
        "record": "clt",
        "estimate": c,
        "ks": ks,
        "ks_pass": ks.pass,
        "sigma2_positive_3se": sigma_positive,
    }));
    let mut code = EXIT_OK;
    if !ks.pass {
        code = check_failed(&mut records, format!("Kolmogorov distance {} > {}", ks.distance, ks.threshold));
    }
    if !sigma_positive {
        code = check_failed(&mut records, "sigma2_hat is not positive at 3 standard errors".into());
    }
    Ok((code, records))
}

fn run_branching(cfg: &RunConfig, workers: usize, art: &mut Artifacts) -> Result<(i32, Vec<Value>)> {
    let mut records = Vec::new();
    let mut matrix_rows = Vec::new();
    let mut supercritical = None;
    for &psi in &cfg.psi {
        let seed = derive_seed(cfg.master_seed, "branching", psi as u64);
        let est = in_pool(workers, || {
            estimate_offspring_matrix(cfg.law.clone(), cfg.group, psi, cfg.mc_samples, seed, PathConvention::Descendant)
        })?;
        let m = match est {
            Ok(m) => m,
            Err(e @ Error::TooLargePsi { .. }) => {
                records.push(json!({"record": "branching-skipped", "psi": psi, "reason": e.to_string()}));
                continue;
            }
            Err(e) => return Err(e),
        };
        let perron = perron_root(&m.m)?;
        for (s, row) in m.m.iter().enumerate() {
            for (u, x) in row.iter().enumerate() {
                matrix_rows.push(format!("{psi},{s},{u},{x},{}", m.stderr[s][u]));
            }
        }
        let lower = m.min_row_sum_lower(3.0);
        let ok = lower > 1.0 && perron.rho > 1.0;
        if ok && supercritical.is_none() {
            supercritical = Some(psi);
        }
        records.push(json!({
            "record": "branching",
            "psi": psi,
            "mc_samples": m.mc_samples,
            "row_sums": m.row_sums(),
            "row_sum_stderr": m.row_sum_stderr,
            "min_row_sum": m.min_row_sum(),
            "min_row_sum_lower_3se": lower,
            "rho": perron.rho,
            "perron_converged": perron.converged,
            "perron_shifted": perron.shifted,
            "irreducible": perron.irreducible,
            "supercritical": ok,
        }));
    }
    art.csv("matrix.csv", "psi,s,u,m,stderr", matrix_rows)?;
    records.push(json!({"record": "branching-check", "supercritical_psi": supercritical}));
    let code = match supercritical {
        Some(_) => EXIT_OK,
        None => check_failed(&mut records, "no psi gives a supercritical offspring matrix at 3 stderr".into()),
    };
    Ok((code, records))
}

fn run_l1_tail(cfg: &RunConfig, workers: usize, art: &mut Artifacts) -> Result<(i32, Vec<Value>)> {
    let firsts = map_trajectories(cfg, workers, |_, traj| -> Result<Option<(usize, usize, usize, usize)>> {
        let tree = VisitTree::build(&traj);
        let rec = detect_on_tree(&tree, cfg.regen_mode, cfg.delta)?;
        Ok(occupation_stats(&tree, &rec)
            .ok()
            .map(|o| (o.l1, o.tau1, o.distinct_before_tau1, o.visits_to_start)))
    })?
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let found: Vec<_> = firsts.iter().flatten().copied().collect();
    let l1: Vec<usize> = found.iter().map(|f| f.0).collect();
    let mut records = Vec::new();

    art.csv(
        "survival.csv",
        "level,survival",
        survival_table(&l1).into_iter().map(|(k, s)| format!("{k},{s}")),
    )?;
    let moments = |xs: Vec<f64>| -> Value {
        if xs.len() < 2 {
            return Value::Null;
        }
        (1..=3)
            .map(|p| {
                let (half, full, rel) = moment_doubling(&xs, p);
                json!({"p": p, "half": half, "full": full, "rel_change": rel})
            })
            .collect()
    };
    records.push(json!({
        "record": "l1-samples",
        "mode": cfg.regen_mode.as_str(),
        "delta": cfg.delta,
        "samples": l1.len(),
        "unconfirmed": firsts.len() - found.len(),
        "moments_l1": moments(l1.iter().map(|&x| x as f64).collect()),
        "moments_tau1": moments(found.iter().map(|f| f.1 as f64).collect()),
        "moments_distinct_before_tau1": moments(found.iter().map(|f| f.2 as f64).collect()),
        "moments_visits_to_start": moments(found.iter().map(|f| f.3 as f64).collect()),
    }));
    let code = match l1_tail_fit(&l1, cfg.tail_stride) {
        Ok(TailReport::Fit(f)) => {
            let neg = f.negative_at(3.0);
            records.push(json!({"record": "l1-tail", "fit": f, "negative_3se": neg}));
            if neg {
                EXIT_OK
            } else {
                check_failed(&mut records, "log-survival slope is not negative at 3 standard errors".into())
            }
        }
        Ok(TailReport::Degenerate(reason)) => {
            records.push(json!({"record": "l1-tail", "degenerate": reason}));
            EXIT_OK
        }
        Err(e) if is_statistical(&e) => check_failed(&mut records, e.to_string()),
        Err(e) => return Err(e),
    };
    Ok((code, records))
}

/// One row of the oracle agreement table.
fn oracle_row(check: &str, cases: usize, max_diff: f64) -> Value {
    json!({
        "record": "oracle-check",
        "check": check,
        "cases": cases,
        "max_abs_diff": max_diff,
        "tolerance": ORACLE_TOL,
        "pass": max_diff <= ORACLE_TOL,
    })
}

/// Random geodesic of length `n` from the root in the environment of `env`.
fn random_path(cfg: &RunConfig, env: &Environment, n: usize, rng: &mut impl Rng) -> Result<PathEnvironment> {
    let gs = cfg.group;
    let d = gs.degree();
    let mut y = Vertex::root();
    for _ in 0..n {
        let s = loop {
            let s = rng.gen_range(0..d) as u8;
            if y.first_letter().map_or(true, |f| gs.inv(f) != s) {
                break s;
            }
        };
        gs.apply(s, &mut y);
    }
    PathEnvironment::from_geodesic(env, &gs, &Vertex::root(), &y)
}

fn run_oracle_check(cfg: &RunConfig, art: &mut Artifacts) -> Result<(i32, Vec<Value>)> {
    let mut max_escape: f64 = 0.0;
    for i in 0..cfg.oracle_paths as u64 {
        let mut rng = stream(cfg.master_seed, "oracle", i);
        let n = rng.gen_range(1..=8);
        let env = Environment::new(cfg.law.clone(), derive_seed(cfg.master_seed, "oracle-env", i));
        let path = random_path(cfg, &env, n, &mut rng)?;
        let diff = (escape_probability_path(&path)? - path_escape_probability(&path)?).abs();
        max_escape = max_escape.max(diff);
    }

    let (mut max_ruin, mut max_duration): (f64, f64) = (0.0, 0.0);
    for n in 2..=8 {
        let path = PathEnvironment::from_pairs(vec![(0.5, 0.5); n - 1]);
        let chain = path_chain(&path)?;
        max_ruin = max_ruin.max((exact_hitting_probability(&chain, 1)? - 1.0 / n as f64).abs());
        max_duration = max_duration.max((exact_expected_hitting_time(&chain, 1)? - (n - 1) as f64).abs());
    }

    let mut records = vec![
        oracle_row("escape formula vs linear solve", cfg.oracle_paths, max_escape),
        oracle_row("symmetric ruin probability 1/n", 7, max_ruin),
        oracle_row("symmetric ruin duration n-1", 7, max_duration),
    ];
    art.csv(
        "oracle.csv",
        "check,cases,max_abs_diff,tolerance,pass",
        records.iter().map(|r| {
            format!(
                "{},{},{},{},{}",
                r["check"].as_str().unwrap(),
                r["cases"],
                r["max_abs_diff"],
                r["tolerance"],
                r["pass"]
            )
        }),
    )?;
    let failed: Vec<String> = records
        .iter()
        .filter(|r| r["pass"] == false)
        .map(|r| r["check"].as_str().unwrap().to_string())
        .collect();
    let code = if failed.is_empty() {
        EXIT_OK
    } else {
        check_failed(&mut records, format!("oracle disagreement: {}", failed.join("; ")))
    };
    Ok((code, records))
}
