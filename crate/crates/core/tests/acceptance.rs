//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails. Pass criterion numbers as arguments to run a subset.

use std::collections::HashSet;
use std::time::Instant;

use rand::Rng;
use rwre::branching::{escape_probability_path, estimate_offspring_matrix, perron_root, PathConvention};
use rwre::config::{parse_config, RunConfig};
use rwre::environment::{build_law, uniform_law, Environment, LawSpec};
use rwre::group::{GeneratorSet, Vertex};
use rwre::oracle::path_escape_probability;
use rwre::regeneration::{detect_on_tree, RegenMode};
use rwre::runner::{map_trajectories, run_command, Command, RunOutcome};
use rwre::seeds::stream;
use rwre::stats::{
    chi_square_two_sample, endpoint_speed, estimate_sigma2, estimate_speed, l1_tail_fit, lag1_autocorrelation,
    BlockSummary, TailReport,
};
use rwre::walk::{sample_categorical, sample_race, PathEnvironment, VisitTree};
use serde_json::Value;

type Outcome = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn scratch(name: &str) -> String {
    let dir = std::env::temp_dir().join(format!("rwre-acceptance-{}", std::process::id()));
    dir.join(name).display().to_string()
}

fn config(body: &str) -> RunConfig {
    parse_config(body).unwrap_or_else(|e| panic!("bad config: {e}"))
}

fn uniform_config(k: usize, r: usize, n_steps: usize, n_traj: usize, out: &str) -> RunConfig {
    let d = 2 * k + r;
    let p = vec![format!("{}", 1.0 / d as f64); d].join(",");
    config(&format!(
        "group.k = {k}\ngroup.r = {r}\nenv.kind = finite\nenv.epsilon = {}\nenv.vectors = {p}\n\
         seed.master = 2024\nwalk.n_steps = {n_steps}\nwalk.n_traj = {n_traj}\noutput.dir = {out}\n",
        0.5 / d as f64
    ))
}

fn elliptic_config(n_steps: usize, n_traj: usize, extra: &str) -> RunConfig {
    config(&format!(
        "group.k = 2\ngroup.r = 0\nenv.kind = dirichlet\nenv.epsilon = 0.1\nenv.alpha = 1,1,1,1\n\
         seed.master = 777\nwalk.n_steps = {n_steps}\nwalk.n_traj = {n_traj}\n{extra}"
    ))
}

fn block_summaries(cfg: &RunConfig) -> (BlockSummary, Vec<usize>) {
    let d = cfg.group.degree();
    let rows = map_trajectories(cfg, 0, |_, traj| {
        let tree = VisitTree::build(&traj);
        let rec = detect_on_tree(&tree, cfg.regen_mode, cfg.delta).unwrap();
        (
            BlockSummary::from_blocks(d, rec.estimator_blocks(cfg.include_first_block)),
            tree.level_at(traj.len()),
        )
    })
    .unwrap();
    let mut all = BlockSummary::new(d);
    for (s, _) in &rows {
        all.merge(s);
    }
    (all, rows.into_iter().map(|r| r.1).collect())
}

fn record<'a>(out: &'a RunOutcome, kind: &str) -> &'a Value {
    out.records
        .iter()
        .find(|r| r["record"] == kind)
        .unwrap_or_else(|| panic!("no {kind} record in {:?}", out.records))
}

fn criterion_1() -> Outcome {
    let mut rng = stream(1, "acceptance-words", 0);
    for (k, r) in [(1, 1), (0, 3), (2, 0), (1, 2), (0, 4), (2, 1), (1, 3), (0, 5)] {
        let gs = GeneratorSet::new(k, r).unwrap();
        let d = gs.degree();
        let ball = gs.ball(6);
        let distinct: HashSet<&Vertex> = ball.iter().collect();
        if distinct.len() != ball.len() {
            return Err(format!("duplicates in ball for k={k}, r={r}"));
        }
        let mut per_level = [0usize; 7];
        for v in &ball {
            per_level[v.level()] += 1;
        }
        for (n, &c) in per_level.iter().enumerate().skip(1) {
            if c != d * (d - 1).pow(n as u32 - 1) {
                return Err(format!("k={k} r={r}: level {n} has {c} vertices"));
            }
        }
    }
    let cases = 100_000;
    for i in 0..cases {
        let (k, r) = [(1, 1), (2, 0), (1, 3)][i % 3];
        let gs = GeneratorSet::new(k, r).unwrap();
        let d = gs.degree();
        let word = |rng: &mut rand_chacha::ChaCha8Rng| -> Vec<usize> {
            let n = rng.gen_range(0..8);
            (0..n).map(|_| rng.gen_range(0..d)).collect()
        };
        let (a, b, c) = (word(&mut rng), word(&mut rng), word(&mut rng));
        let red = |w: &[usize]| gs.reduce_word(w).unwrap();
        let letters = |v: &Vertex| v.word().into_iter().map(usize::from).collect::<Vec<_>>();
        let cat = |x: &[usize], y: &[usize]| [x, y].concat();
        let ab = letters(&red(&cat(&a, &b)));
        let bc = letters(&red(&cat(&b, &c)));
        let assoc = red(&cat(&ab, &c)) == red(&cat(&a, &bc));
        let inv: Vec<usize> = a.iter().rev().map(|&s| gs.inv(s as u8) as usize).collect();
        let inverse = red(&cat(&a, &inv)).is_root() && red(&cat(&inv, &a)).is_root();
        let x = red(&a);
        let identity = red(&cat(&a, &[])) == x && red(&cat(&[], &a)) == x;
        let text = gs.parse_vertex(&x.to_string()).unwrap() == x;
        if !(assoc && inverse && identity && text && gs.is_reduced(&x)) {
            return Err(format!("group axiom failure for words {a:?} {b:?} {c:?}"));
        }
    }
    Ok(format!("level counts d(d-1)^(n-1) to depth 6 for d in 3..=5; {cases} axiom cases"))
}

fn criterion_2() -> Outcome {
    let law = build_law(4, 0.05, &LawSpec::DirichletMixture { alpha: vec![1.0; 4] }).unwrap();
    let gs = GeneratorSet::new(2, 0).unwrap();
    let mut worst: f64 = 0.0;
    for i in 0..1000u64 {
        let mut rng = stream(2, "acceptance-paths", i);
        let env = Environment::new(law.clone(), rng.gen());
        let n = rng.gen_range(1..=8);
        let mut y = Vertex::root();
        while y.level() < n {
            let s = rng.gen_range(0..4u8);
            if y.first_letter().map_or(true, |f| gs.inv(f) != s) {
                gs.apply(s, &mut y);
            }
        }
        let path = PathEnvironment::from_geodesic(&env, &gs, &Vertex::root(), &y).unwrap();
        let diff = (escape_probability_path(&path).unwrap() - path_escape_probability(&path).unwrap()).abs();
        worst = worst.max(diff);
    }
    ensure(worst <= 1e-10, format!("max |formula - solver| = {worst:.3e} over 1000 paths"))
}

fn criterion_3() -> Outcome {
    let law = build_law(4, 0.05, &LawSpec::DirichletMixture { alpha: vec![1.0; 4] }).unwrap();
    let p = law.sample(&mut stream(3, "acceptance-vector", 0));
    let mut rng = stream(3, "acceptance-samplers", 0);
    let (mut cat, mut race) = ([0u64; 4], [0u64; 4]);
    for _ in 0..1_000_000 {
        cat[sample_categorical(&p, &mut rng) as usize] += 1;
        race[sample_race(&p, &mut rng) as usize] += 1;
    }
    let chi = chi_square_two_sample(&cat, &race);
    ensure(chi < 16.27, format!("chi-square = {chi:.3} (3 dof, 99.9% quantile 16.27)"))
}

fn criterion_4() -> Outcome {
    let mut lines = Vec::new();
    let mut ok = true;
    for (k, r, v) in [(2, 0, 0.5), (1, 1, 1.0 / 3.0)] {
        let cfg = uniform_config(k, r, 100_000, 100, &scratch("c4"));
        let (blocks, ends) = block_summaries(&cfg);
        let b = estimate_speed(&blocks).unwrap();
        let e = endpoint_speed(&ends, cfg.n_steps).unwrap();
        ok &= (b.v_hat - v).abs() <= 0.01 && (e.v_hat - v).abs() <= 0.01 && b.excludes_zero() && e.excludes_zero();
        lines.push(format!(
            "d={}: blocks {:.4}±{:.4}, endpoint {:.4}±{:.4} (target {v:.4})",
            2 * k + r,
            b.v_hat,
            b.ci95,
            e.v_hat,
            e.ci95
        ));
    }
    ensure(ok, lines.join("; "))
}

fn criterion_5() -> Outcome {
    let cfg = uniform_config(2, 0, 100_000, 100, &scratch("c5"));
    let (blocks, _) = block_summaries(&cfg);
    let v = estimate_speed(&blocks).unwrap();
    let c = estimate_sigma2(&blocks, v.v_hat).unwrap();
    let clt = run_command(Command::Clt, &uniform_config(2, 0, 10_000, 2000, &scratch("c5"))).unwrap();
    let ks = &record(&clt, "clt")["ks"];
    ensure(
        (c.sigma2_hat - 0.75).abs() <= 0.05 && ks["pass"] == true && clt.exit_code == 0,
        format!(
            "sigma2_hat = {:.4} (target 0.75); KS D = {:.4} <= {:.4} over m = {}",
            c.sigma2_hat,
            ks["distance"].as_f64().unwrap(),
            ks["threshold"].as_f64().unwrap(),
            ks["m"]
        ),
    )
}

fn criterion_6() -> Outcome {
    let cfg = elliptic_config(10_000, 2000, &format!("output.dir = {}\n", scratch("c6")));
    let out = run_command(Command::Clt, &cfg).unwrap();
    let v = &record(&out, "speed")["estimate"];
    let c = record(&out, "clt");
    let (vh, ci) = (v["v_hat"].as_f64().unwrap(), v["ci95"].as_f64().unwrap());
    let s2 = c["estimate"]["sigma2_hat"].as_f64().unwrap();
    let se = c["estimate"]["sigma2_se"].as_f64().unwrap();
    ensure(
        vh - ci > 0.0 && s2 - 3.0 * se > 0.0 && c["ks_pass"] == true,
        format!(
            "v_hat = {vh:.4}±{ci:.4}; sigma2_hat = {s2:.4} (se {se:.4}); KS D = {:.4} <= {:.4}",
            c["ks"]["distance"].as_f64().unwrap(),
            c["ks"]["threshold"].as_f64().unwrap()
        ),
    )
}

fn criterion_7() -> Outcome {
    let cfg = elliptic_config(10_000, 200, "regen.delta = 100\n");
    let d = cfg.group.degree();
    let per_traj = map_trajectories(&cfg, 0, |_, traj| {
        let tree = VisitTree::build(&traj);
        let strict = detect_on_tree(&tree, RegenMode::Strict, 100).unwrap();
        let literal = detect_on_tree(&tree, RegenMode::Literal, 100).unwrap();
        let wide = detect_on_tree(&tree, RegenMode::Strict, 400).unwrap();
        let lit: HashSet<usize> = literal.entries.iter().map(|e| e.level).collect();
        let subset = strict.entries.iter().all(|e| lit.contains(&e.level));
        (strict.estimator_blocks(false).to_vec(), wide.estimator_blocks(false).to_vec(), subset)
    })
    .unwrap();

    let mut narrow = BlockSummary::new(d);
    let mut wide = BlockSummary::new(d);
    let mut ys = Vec::new();
    for (a, b, _) in &per_traj {
        narrow.extend(a);
        wide.extend(b);
        ys.extend(a.iter().map(|b| b.y as f64));
    }
    let n = narrow.len();
    let counts = narrow.type_counts();
    let expect = n as f64 / d as f64;
    let sd = (n as f64 * (1.0 / d as f64) * (1.0 - 1.0 / d as f64)).sqrt();
    let types_ok = counts.iter().all(|&c| (c as f64 - expect).abs() <= 3.0 * sd);
    let rho = lag1_autocorrelation(&ys);
    let rho_ok = rho.abs() <= 3.0 / (n as f64).sqrt();
    let subset_ok = per_traj.iter().all(|t| t.2);
    let v100 = estimate_speed(&narrow).unwrap();
    let v400 = estimate_speed(&wide).unwrap();
    let delta_ok = (v100.v_hat - v400.v_hat).abs() < v100.ci95.max(v400.ci95);
    ensure(
        n >= 10_000 && types_ok && rho_ok && subset_ok && delta_ok,
        format!(
            "{n} blocks, type counts {counts:?} (3sd = {:.0}); lag-1 rho(Y) = {rho:.4} (bound {:.4}); \
             strict in literal: {subset_ok}; v(100) = {:.4}, v(400) = {:.4}, ci {:.4}",
            3.0 * sd,
            3.0 / (n as f64).sqrt(),
            v100.v_hat,
            v400.v_hat,
            v100.ci95.max(v400.ci95)
        ),
    )
}

fn criterion_8() -> Outcome {
    let gs = GeneratorSet::new(2, 0).unwrap();
    let law = build_law(4, 0.1, &LawSpec::DirichletMixture { alpha: vec![1.0; 4] }).unwrap();
    let mut found = Vec::new();
    for psi in 1..=6 {
        let m = estimate_offspring_matrix(law.clone(), gs, psi, 500, 88, PathConvention::Descendant).unwrap();
        let rho = perron_root(&m.m).unwrap().rho;
        if m.min_row_sum_lower(3.0) > 1.0 && rho > 1.0 {
            found.push(format!("psi={psi}: min row {:.3}, rho {:.3}", m.min_row_sum(), rho));
        }
    }
    let m = estimate_offspring_matrix(uniform_law(4), gs, 2, 4, 0, PathConvention::Descendant).unwrap();
    let mut exact_err: f64 = 0.0;
    for s in 0..4 {
        for u in 0..4 {
            let want = if s == u { 1.5 } else { 1.0 };
            exact_err = exact_err.max((m.m[s][u] - want).abs());
        }
    }
    let rho = perron_root(&m.m).unwrap().rho;
    ensure(
        !found.is_empty() && exact_err <= 1e-6 && (rho - 4.5).abs() <= 1e-6,
        format!(
            "supercritical: [{}]; uniform psi=2 max |M - (J + I/2)| = {exact_err:.2e}, rho = {rho:.9}",
            found.join(", ")
        ),
    )
}

fn criterion_9() -> Outcome {
    let cfg = elliptic_config(1500, 10_000, "regen.delta = 100\n");
    let l1: Vec<usize> = map_trajectories(&cfg, 0, |_, traj| {
        let tree = VisitTree::build(&traj);
        let rec = detect_on_tree(&tree, RegenMode::Strict, 100).unwrap();
        rec.first_confirmed().map(|e| e.level)
    })
    .unwrap()
    .into_iter()
    .flatten()
    .collect();
    let fit = match l1_tail_fit(&l1, 1).unwrap() {
        TailReport::Fit(f) => f,
        TailReport::Degenerate(r) => return Err(format!("degenerate l1 tail: {r}")),
    };

    let mut rng = stream(9, "acceptance-geometric", 0);
    let geo: Vec<usize> = (0..10_000)
        .map(|_| {
            let u: f64 = rng.gen();
            1 + (u.ln() / 0.5f64.ln()).floor() as usize
        })
        .collect();
    let gamma = match l1_tail_fit(&geo, 1).unwrap() {
        TailReport::Fit(f) => f.gamma_hat,
        TailReport::Degenerate(r) => return Err(r),
    };
    ensure(
        l1.len() >= 10_000 && fit.negative_at(3.0) && (gamma - 0.5).abs() <= 0.05,
        format!(
            "{} samples, slope {:.4} (se {:.4}); synthetic gamma_hat = {gamma:.4}",
            l1.len(),
            fit.slope,
            fit.slope_se
        ),
    )
}

fn criterion_10() -> Outcome {
    let mut bodies = Vec::new();
    for workers in [1, 4] {
        let dir = scratch(&format!("c10-w{workers}"));
        let mut cfg = uniform_config(2, 0, 10_000, 2000, &dir);
        cfg.workers = workers;
        let out = run_command(Command::Clt, &cfg).unwrap();
        let path = out.files.iter().find(|f| f.ends_with("summary.jsonl")).unwrap();
        bodies.push(std::fs::read(path).unwrap());
    }
    ensure(
        bodies[0] == bodies[1],
        format!("summary.jsonl with 1 and 4 workers: {} bytes, identical", bodies[0].len()),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("word algebra", criterion_1),
        ("formula vs oracle", criterion_2),
        ("sampler equivalence", criterion_3),
        ("known speed", criterion_4),
        ("known variance and CLT", criterion_5),
        ("elliptic positivity", criterion_6),
        ("regeneration structure", criterion_7),
        ("supercriticality", criterion_8),
        ("geometric tail", criterion_9),
        ("reproducibility", criterion_10),
    ];
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    std::env::remove_var("RWRE_THREADS");
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let n = i + 1;
        if !only.is_empty() && !only.contains(&n) {
            continue;
        }
        let t = Instant::now();
        let res = run();
        let secs = t.elapsed().as_secs_f64();
        match res {
            Ok(detail) => println!("criterion {n:>2} {name}: PASS ({secs:.1}s) {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {n:>2} {name}: FAIL ({secs:.1}s) {detail}");
            }
        }
    }
    let _ = std::fs::remove_dir_all(std::env::temp_dir().join(format!("rwre-acceptance-{}", std::process::id())));
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
