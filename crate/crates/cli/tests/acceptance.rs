//! End-to-end acceptance suite. Runs every criterion in sequence, prints one
//! PASS/FAIL line each, and exits nonzero if any criterion fails.
//!
//! Timed budgets are measured on one core with the workspace's optimized dev
//! profile.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::Parser;
use nalgebra::{UnitQuaternion, Vector3};
use ndarray::Array2;
use rand::Rng;

use tpabc::baselines::{
    abc_smc, cell_count, grid_map, mcmc_mh, particle_filter, GridConfig, MhConfig, PfConfig, SmcConfig,
};
use tpabc::geometry::{euler_yxz_to_quaternion, EulerYXZ, Quaternion};
use tpabc::reach::{RawSimForward, ReachDataset, ReachScene};
use tpabc::surrogate::{load_weights, Mlp};
use tpabc::{
    compute_tp_posterior, seed, ErrorModel, FnForward, ForwardModel, InferenceResult, KdTp,
    LatentPoint, Observation, PriorBox, SlackGrid, Threshold, TpConfig,
};
use tpabc_cli::report::{read_raw, summarize, Summary};
use tpabc_cli::{run, Cli};

type Outcome = Result<String, String>;

struct Fixture {
    dir: PathBuf,
    weights: PathBuf,
    scene: ReachScene,
    net: Mlp,
}

fn cli(args: &[&str]) -> Result<String, String> {
    let cli = Cli::try_parse_from(std::iter::once("tpabc").chain(args.iter().copied()))
        .map_err(|e| e.to_string())?;
    run(&cli).map_err(|e| e.to_string())
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn kv(text: &str, key: &str) -> Result<String, String> {
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{key}=")))
        .map(String::from)
        .ok_or_else(|| format!("{key} missing from output"))
}

fn gen(dir: &Path, name: &str, n: usize, seed: u64, sigma: f64) -> Result<PathBuf, String> {
    let out = dir.join(name);
    cli(&[
        "gen-data",
        "--n",
        &n.to_string(),
        "--seed",
        &seed.to_string(),
        "--sigma-obs",
        &sigma.to_string(),
        "--out",
        p(&out),
    ])?;
    Ok(out)
}

/// Standard surrogate: 10k noiseless trajectories, two 128-unit layers.
fn fixture() -> Result<Fixture, String> {
    let dir = std::env::temp_dir().join(format!("tpabc-acceptance-{}", std::process::id()));
    fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
    let t0 = Instant::now();
    let data = gen(&dir, "train.txt", 10_000, 1, 0.0)?;
    let weights = dir.join("surrogate.bin");
    cli(&[
        "train", "--data", p(&data), "--out", p(&weights), "--seed", "3", "--epochs", "100", "--lr",
        "0.03", "--batch", "64", "--epsilon-star", "0.02",
    ])?;
    println!("fixture: surrogate trained in {:.1} s", t0.elapsed().as_secs_f64());
    let net = load_weights(&weights).map_err(|e| e.to_string())?;
    Ok(Fixture {
        dir,
        weights,
        scene: ReachScene::default(),
        net,
    })
}

fn grid_count(f: &Fixture) -> Outcome {
    let data = gen(&f.dir, "one.txt", 1, 5, 0.0)?;
    let t0 = Instant::now();
    let text = cli(&[
        "infer", "--method", "grid", "--h", "0.1", "--data", p(&data), "--weights", p(&f.weights),
        "--out", p(&f.dir.join("grid10")),
    ])?;
    let secs = t0.elapsed().as_secs_f64();
    let evals = kv(&text, "n_evals")?;
    let msg = format!("{evals} evaluations in {secs:.3} s");
    if evals == "1600" && secs < 1.0 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

/// Noiseless, fully observed suite shared by the oracle and cost criteria.
fn standard_suite(f: &Fixture) -> Result<Vec<(LatentPoint, Observation)>, String> {
    let path = gen(&f.dir, "suite.txt", 100, 11, 0.0)?;
    let ds = ReachDataset::load(&path).map_err(|e| e.to_string())?;
    ds.goals
        .iter()
        .zip(&ds.trajectories)
        .map(|(g, t)| Ok((g.clone(), Observation::new(t.clone(), 3).map_err(|e| e.to_string())?)))
        .collect()
}

fn tp_vs_grid(f: &Fixture, suite: &[(LatentPoint, Observation)], tp_evals: &mut Vec<usize>) -> Outcome {
    let model = ErrorModel::with_prior(f.scene.table.clone());
    let tp = TpConfig::default();
    let grid = GridConfig::default();
    let bound = tp.rho * 2f64.sqrt();
    let t0 = Instant::now();
    let mut agree = 0;
    for (_, obs) in suite {
        let (_, t) = compute_tp_posterior(&tp, &model, obs, &f.net).map_err(|e| e.to_string())?;
        let g = grid_map(&grid, &model, obs, &f.net).map_err(|e| e.to_string())?;
        tp_evals.push(t.n_evals);
        if t.map_x.distance(&g.map_x) <= bound {
            agree += 1;
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    let msg = format!("{agree}/{} within {:.4} m of the grid MAP in {secs:.1} s", suite.len(), bound);
    if agree >= 95 && secs < 120.0 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn eval_advantage(tp_evals: &[usize], fifty: Option<&Summary>) -> Outcome {
    let table = ReachScene::default().table;
    let full = cell_count(&table, GridConfig::default().spacing);
    let mean = tp_evals.iter().sum::<usize>() as f64 / tp_evals.len().max(1) as f64;
    let mut msg = format!("mean {mean:.0} evaluations vs {full} grid cells ({:.2}%)", 100.0 * mean / full as f64);
    if let Some(s) = fifty {
        msg.push_str(&format!("; at 50% observed {:.0} ± {:.0}", s.n_evals.0, s.n_evals.1));
    }
    if !tp_evals.is_empty() && mean < 0.1 * full as f64 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn baseline_ordering(f: &Fixture) -> (Outcome, Option<Summary>) {
    let res = (|| {
        let data = gen(&f.dir, "noisy.txt", 100, 17, 0.01)?;
        let out = f.dir.join("bench");
        let t0 = Instant::now();
        let table = cli(&[
            "bench", "--methods", "tp,particle_filter,mcmc_mh,abc_smc", "--trials", "100",
            "--observed-frac", "0.5", "--data", p(&data), "--weights", p(&f.weights), "--seed", "7",
            "--out", p(&out),
        ])?;
        println!("bench finished in {:.1} s", t0.elapsed().as_secs_f64());
        print!("{table}");
        let raw = read_raw(&out.join("raw.csv")).map_err(|e| e.to_string())?;
        Ok::<_, String>(summarize(&raw))
    })();
    let rows = match res {
        Ok(r) => r,
        Err(e) => return (Err(e), None),
    };
    let get = |m: &str| rows.iter().find(|s| s.method == m).cloned();
    let (Some(tp), Some(pf), Some(mh), Some(smc)) =
        (get("tp"), get("particle_filter"), get("mcmc_mh"), get("abc_smc"))
    else {
        return (Err("missing summary rows".into()), None);
    };
    let mut notes = Vec::new();
    let mut failed = false;
    for (lo, hi) in [(&tp, &pf), (&pf, &mh), (&tp, &smc)] {
        let (a, b) = (lo.error_m.0, hi.error_m.0);
        if a > b {
            let std = lo.error_m.1.max(hi.error_m.1);
            if a - b <= std {
                notes.push(format!("{} > {} by {:.4} m, within 1 std", lo.method, hi.method, a - b));
            } else {
                failed = true;
                notes.push(format!("{} > {} by {:.4} m, beyond 1 std", lo.method, hi.method, a - b));
            }
        }
    }
    if tp.failed + pf.failed + mh.failed + smc.failed > 0 {
        failed = true;
        notes.push("some runs failed".into());
    }
    let mut msg = format!(
        "mean error tp {:.4}, pf {:.4}, mh {:.4}, smc {:.4} m",
        tp.error_m.0, pf.error_m.0, mh.error_m.0, smc.error_m.0
    );
    if !notes.is_empty() {
        msg.push_str(&format!(" [{}]", notes.join("; ")));
    }
    (if failed { Err(msg) } else { Ok(msg) }, Some(tp))
}

fn surrogate_speedup(f: &Fixture) -> Outcome {
    let mut rng = seed::rng(21);
    let xs: Vec<LatentPoint> = (0..1000)
        .map(|_| f.scene.sample_goal(&mut rng, 1000).map(|g| g.0))
        .collect::<Option<_>>()
        .ok_or("goal sampling failed")?;
    let sim = RawSimForward::new(&f.scene);
    let best = |run: &dyn Fn()| {
        (0..3)
            .map(|_| {
                let t0 = Instant::now();
                run();
                t0.elapsed().as_secs_f64()
            })
            .fold(f64::INFINITY, f64::min)
    };
    let net_s = best(&|| {
        f.net.forward_batch(&xs).unwrap();
    });
    let sim_s = best(&|| {
        sim.forward_batch(&xs).unwrap();
    });
    let ratio = sim_s / net_s;
    let msg = format!("surrogate {:.2} ms, simulator {:.0} ms, {ratio:.0}x", 1e3 * net_s, 1e3 * sim_s);
    if ratio >= 100.0 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn gradient_check() -> Outcome {
    let mut rng = seed::rng(31);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let sizes = [2, rng.gen_range(2..6), rng.gen_range(2..6), 3];
        let net = Mlp::random(&sizes, &mut rng).map_err(|e| e.to_string())?;
        let x = Array2::from_shape_fn((5, 2), |_| rng.gen_range(-1.0..1.0));
        let t = Array2::from_shape_fn((5, 3), |_| rng.gen_range(-1.0..1.0));
        let analytic = net.loss_and_gradient(x.view(), t.view()).1.flatten();
        let params = net.parameters();
        let mut probe = net.clone();
        let mut loss_at = |ps: &[f64]| {
            probe.set_parameters(ps).unwrap();
            probe.loss_and_gradient(x.view(), t.view()).0
        };
        for i in 0..params.len() {
            let mut ps = params.clone();
            ps[i] += h;
            let up = loss_at(&ps);
            ps[i] -= 2.0 * h;
            let down = loss_at(&ps);
            let numeric = (up - down) / (2.0 * h);
            let rel = (analytic[i] - numeric).abs() / analytic[i].abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(rel);
        }
    }
    let msg = format!("max relative error {worst:.2e}");
    if worst < 1e-4 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn slack_detection(f: &Fixture) -> Outcome {
    let clean = gen(&f.dir, "clean.txt", 50, 23, 0.01)?;
    let mut shifted = ReachDataset::load(&clean).map_err(|e| e.to_string())?;
    for t in &mut shifted.trajectories {
        t.iter_mut().for_each(|v| *v += 0.5);
    }
    let bad = f.dir.join("shifted.txt");
    shifted.save(&bad).map_err(|e| e.to_string())?;
    let scan = |data: &Path, name: &str| -> Result<Vec<f64>, String> {
        let out = f.dir.join(name);
        cli(&["slack-scan", "--data", p(data), "--weights", p(&f.weights), "--out", p(&out)])?;
        let text = fs::read_to_string(&out).map_err(|e| e.to_string())?;
        text.lines()
            .skip(1)
            .map(|l| l.split(',').nth(1).unwrap_or("").parse::<f64>().map_err(|e| e.to_string()))
            .collect()
    };
    let a = scan(&clean, "clean.csv")?;
    let b = scan(&bad, "shifted.csv")?;
    let wins = a.iter().zip(&b).filter(|(c, s)| s > c).count();
    let med = |v: &[f64]| {
        let mut v = v.to_vec();
        v.sort_by(f64::total_cmp);
        v[v.len() / 2]
    };
    let msg = format!(
        "{wins}/{} pairs; median slack clean {:.3}, shifted {:.3}",
        a.len(),
        med(&a),
        med(&b)
    );
    if a.len() == 50 && wins * 10 >= 9 * a.len() {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn controller_convergence(f: &Fixture) -> Outcome {
    let mut rng = seed::rng(41);
    let mut reached = 0;
    for _ in 0..1000 {
        let (g, _) = f.scene.sample_goal(&mut rng, 1000).ok_or("goal sampling failed")?;
        let t = f.scene.simulate(&g, 0.0, 0).map_err(|e| e.to_string())?;
        if t.final_error() < 0.01 {
            reached += 1;
        }
    }
    let msg = format!("{reached}/1000 goals within 1 cm at the final frame");
    if reached >= 990 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn quaternion_correctness() -> Outcome {
    use std::f64::consts::PI;
    let mut rng = seed::rng(51);
    let mut worst: f64 = 0.0;
    for _ in 0..10_000 {
        let (a, b, c) = (rng.gen_range(-PI..PI), rng.gen_range(-PI..PI), rng.gen_range(-PI..PI));
        let q = euler_yxz_to_quaternion(EulerYXZ::new(a, b, c).map_err(|e| e.to_string())?);
        let oracle = (UnitQuaternion::from_axis_angle(&Vector3::y_axis(), a)
            * UnitQuaternion::from_axis_angle(&Vector3::x_axis(), b)
            * UnitQuaternion::from_axis_angle(&Vector3::z_axis(), c))
        .to_rotation_matrix();
        worst = worst.max((q.to_rotation_matrix() - oracle.matrix()).abs().max());
    }
    let id = euler_yxz_to_quaternion(EulerYXZ::new(0.0, 0.0, 0.0).unwrap());
    let half = euler_yxz_to_quaternion(EulerYXZ::new(PI, 0.0, 0.0).unwrap()).to_array();
    let half_ok = half.iter().zip([0.0, 0.0, 1.0, 0.0]).all(|(x, y)| (x - y).abs() < 1e-15);
    let msg = format!("max matrix deviation {worst:.1e}; identity {}, half turn {}", id == Quaternion::IDENTITY, half_ok);
    if worst < 1e-10 && id == Quaternion::IDENTITY && half_ok {
        Ok(msg)
    } else {
        Err(msg)
    }
}

/// Leaf volumes sum to the root volume and random points hit exactly one leaf.
fn tiles(tree: &KdTp, rng: &mut impl Rng) -> Result<(), String> {
    let root = tree.node(tree.root());
    let total: f64 = tree.leaves().map(|(_, l)| l.volume()).sum();
    if (total - root.volume()).abs() > 1e-9 * root.volume() {
        return Err(format!("leaf volume {total} vs root {}", root.volume()));
    }
    for _ in 0..50 {
        let x: Vec<f64> = root.center.iter().map(|c| c + root.radius * rng.gen_range(-0.999..0.999)).collect();
        let hits = tree.leaves().filter(|(_, l)| l.contains(&x)).count();
        if hits != 1 {
            return Err(format!("point {x:?} in {hits} leaves"));
        }
    }
    Ok(())
}

fn tree_invariants() -> Outcome {
    let mut rng = seed::rng(61);
    let mut violations = Vec::new();
    let mut nodes = 0;
    for run in 0..100 {
        let k = rng.gen_range(1..=3);
        let m = 4;
        let dirs: Vec<f64> = (0..k * m).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let forward = FnForward::new(k, m, move |x: &[f64]| {
            (0..m).map(|j| (0..k).map(|i| dirs[j * k + i] * x[i]).sum::<f64>().sin()).collect()
        });
        let center: Vec<f64> = (0..k).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let radius = rng.gen_range(0.5..2.0);
        let truth: LatentPoint = center.iter().map(|c| c + radius * rng.gen_range(-1.0..1.0)).collect::<Vec<_>>().into();
        let obs = Observation::new(forward.forward(&truth).unwrap(), 1).unwrap();
        let model = ErrorModel::new(SlackGrid::default(), PriorBox::cube(center, radius).unwrap());
        let cfg = TpConfig {
            threshold: Threshold::Relative(-rng.gen_range(1.0..50.0)),
            rho: radius / f64::powi(2.0, rng.gen_range(2..7)),
            max_evals: 100_000,
        };
        let a = compute_tp_posterior(&cfg, &model, &obs, &forward);
        let b = compute_tp_posterior(&cfg, &model, &obs, &forward);
        let check = (|| {
            let (ta, ra) = a.map_err(|e| e.to_string())?;
            let (tb, rb) = b.map_err(|e| e.to_string())?;
            ta.check_invariants()?;
            tiles(&ta, &mut rng)?;
            if ra.leaves != rb.leaves || ra.map_x != rb.map_x || ra.n_evals != rb.n_evals || ta.len() != tb.len() {
                return Err("repeat run differs".to_string());
            }
            nodes += ta.len();
            Ok::<_, String>(())
        })();
        if let Err(e) = check {
            violations.push(format!("run {run}: {e}"));
        }
    }
    let msg = format!("{} violations over 100 runs ({nodes} nodes)", violations.len());
    if violations.is_empty() {
        Ok(msg)
    } else {
        Err(format!("{msg}: {}", violations[0]))
    }
}

/// Replicated runs of one sampler on the 1D toy; the posterior mean of x is
/// the data mean because the prior box is flat and far wider than the data.
fn conjugate(name: &str, ybar: f64, means: &[f64]) -> (bool, String) {
    let n = means.len() as f64;
    let avg = means.iter().sum::<f64>() / n;
    let sd = (means.iter().map(|m| (m - avg).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let se = sd / n.sqrt();
    let ok = (avg - ybar).abs() < 3.0 * se.max(1e-12);
    (ok, format!("{name} {:+.4} ({:.1} SE)", avg - ybar, (avg - ybar).abs() / se))
}

fn conjugate_gaussian() -> Outcome {
    let mut rng = seed::rng(71);
    let m = 20;
    let sigma = 0.5;
    let y: Vec<f64> = (0..m).map(|_| 1.3 + sigma * rng.gen_range(-1.0f64..1.0) * 3f64.sqrt()).collect();
    let ybar = y.iter().sum::<f64>() / m as f64;
    let spread = (y.iter().map(|v| (v - ybar).powi(2)).sum::<f64>() / m as f64).sqrt();
    let model = ErrorModel::new(SlackGrid::new(vec![sigma]).unwrap(), PriorBox::cube(vec![0.0], 5.0).unwrap());
    let obs = Observation::new(y, 1).unwrap();
    let f = FnForward::new(1, m, move |x: &[f64]| vec![x[0]; m]);
    let mean = |r: &InferenceResult| r.sample_mean().unwrap()[0];
    let tol = |w: f64| (spread * spread + w * w).sqrt();

    let runs = 20u64;
    let mut smc = Vec::new();
    let mut mh = Vec::new();
    let mut pf = Vec::new();
    for s in 0..runs {
        let cfg = SmcConfig {
            tolerances: [2.0, 0.6, 0.2, 0.06].iter().map(|w| tol(*w)).collect(),
            population: 300,
            budget: 100_000,
            batch: 256,
            seed: s,
        };
        smc.push(mean(&abc_smc(&cfg, &model, &obs, &f).map_err(|e| e.to_string())?));
        let cfg = MhConfig {
            length: 6000,
            burn_in: 1000,
            proposal_std: vec![0.25],
            log_slack_std: 0.0,
            init_slack: sigma,
            seed: s,
            ..Default::default()
        };
        mh.push(mean(&mcmc_mh(&cfg, &model, &obs, &f).map_err(|e| e.to_string())?));
        let cfg = PfConfig {
            particles: 2000,
            seed: s,
            ..Default::default()
        };
        let frames = particle_filter(&cfg, &model, &obs, &f).map_err(|e| e.to_string())?;
        pf.push(mean(frames.last().unwrap()));
    }
    let results = [conjugate("smc", ybar, &smc), conjugate("mh", ybar, &mh), conjugate("pf", ybar, &pf)];
    let msg = results.iter().map(|r| r.1.as_str()).collect::<Vec<_>>().join(", ");
    if results.iter().all(|r| r.0) {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn report(results: &mut Vec<bool>, n: usize, name: &str, outcome: Outcome) {
    let (tag, msg) = match &outcome {
        Ok(m) => ("PASS", m),
        Err(m) => ("FAIL", m),
    };
    println!("[{tag}] {n:>2}. {name}: {msg}");
    results.push(outcome.is_ok());
}

fn main() -> ExitCode {
    let fx = match fixture() {
        Ok(f) => f,
        Err(e) => {
            println!("[FAIL] fixture: {e}");
            return ExitCode::FAILURE;
        }
    };
    let mut results = Vec::new();
    let mut lines = Vec::new();
    let mut record = |n: usize, name: &str, o: Outcome| {
        report(&mut results, n, name, o.clone());
        lines.push((n, name.to_string(), o));
    };

    record(1, "grid count fidelity", grid_count(&fx));
    let mut tp_evals = Vec::new();
    let suite = standard_suite(&fx);
    record(
        2,
        "tree pyramid matches the grid",
        suite.as_ref().map_err(Clone::clone).and_then(|s| tp_vs_grid(&fx, s, &mut tp_evals)),
    );
    let (ordering, tp50) = baseline_ordering(&fx);
    record(3, "evaluation-count advantage", eval_advantage(&tp_evals, tp50.as_ref()));
    record(4, "baseline ordering", ordering);
    record(5, "surrogate speedup", surrogate_speedup(&fx));
    record(6, "surrogate gradient check", gradient_check());
    record(7, "slack anomaly detection", slack_detection(&fx));
    record(8, "controller convergence", controller_convergence(&fx));
    record(9, "quaternion correctness", quaternion_correctness());
    record(10, "tree invariants", tree_invariants());
    record(11, "conjugate Gaussian sanity", conjugate_gaussian());

    let _ = fs::remove_dir_all(&fx.dir);
    println!("\nsummary");
    for (n, name, o) in &lines {
        println!("[{}] {n:>2}. {name}", if o.is_ok() { "PASS" } else { "FAIL" });
    }
    let passed = results.iter().filter(|r| **r).count();
    println!("{passed}/{} criteria passed", results.len());
    if passed == results.len() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
