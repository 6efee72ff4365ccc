use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use tpabc::baselines::{particle_filter, MethodConfig, MethodTag};
use tpabc::reach::{generate_dataset, ReachDataset, ReachScene, RawSimForward};
use tpabc::surrogate::{load_weights, save_weights, train_sgd, Mlp, TrainConfig};
use tpabc::tree::{leaf_density, write_leaf_dump};
use tpabc::{
    compute_tp_posterior, infer_slack_map, seed, ErrorModel, ForwardModel, InferenceResult,
    LatentPoint, Observation, PriorBox, Threshold, TpConfig,
};

use crate::args::{
    BenchArgs, GenDataArgs, InferArgs, MethodArgs, SlackScanArgs, SourceArgs, TrainArgs,
};
use crate::error::CliError;
use crate::report::{self, BenchRecord, Measured};
use crate::settings::{List, Settings};

/// Tree pyramid or one of the baselines.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Tp,
    Base(MethodTag),
}

impl FromStr for Method {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        if s == "tp" {
            return Ok(Method::Tp);
        }
        s.parse::<MethodTag>()
            .map(Method::Base)
            .map_err(|_| CliError::Usage(format!("unknown method {s:?}")))
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Tp => f.write_str("tp"),
            Method::Base(t) => f.write_str(t.as_str()),
        }
    }
}

/// Parameters for every method, resolved once per command.
#[derive(Debug, Clone)]
pub struct MethodParams {
    pub tp: TpConfig,
    pub base: MethodConfig,
}

impl MethodParams {
    pub fn resolve(s: &mut Settings, a: &MethodArgs) -> Result<Self, CliError> {
        let mut tp = TpConfig::default();
        tp.rho = s.get("rho", a.rho, tp.rho)?;
        let tau_default = match tp.threshold {
            Threshold::PerCoordinate(t) => t,
            _ => unreachable!("default threshold is per coordinate"),
        };
        tp.threshold = Threshold::PerCoordinate(s.get("tau", a.tau, tau_default)?);

        let mut base = MethodConfig::new(MethodTag::Grid);
        base.grid.spacing = s.get("h", a.h, tp.rho)?;
        let budget = s.get("budget", a.budget, base.reject.budget)?;
        base.reject.budget = budget;
        base.smc.budget = budget;
        base.reject.tolerance = s.get("tolerance", a.tolerance, base.reject.tolerance)?;
        base.smc.tolerances = s
            .get("schedule", a.schedule.clone(), List(base.smc.tolerances.clone()))?
            .0;
        base.smc.population = s.get("population", a.population, base.smc.population)?;
        base.mh.length = s.get("chain_length", a.chain_length, base.mh.length)?;
        base.mh.burn_in = s.get("burn_in", a.burn_in, base.mh.burn_in)?;
        let step = s.get("step", a.step, 0.1)?;
        base.mh.proposal_std = vec![step, step];
        base.pf.particles = s.get("particles", a.particles, base.pf.particles)?;
        base.pf.resample_threshold =
            s.get("resample_threshold", a.resample_threshold, base.pf.resample_threshold)?;
        Ok(MethodParams { tp, base })
    }

    pub fn validate(&self, method: Method) -> Result<(), CliError> {
        match method {
            Method::Tp => self.tp.validate(2)?,
            Method::Base(tag) => MethodConfig {
                method: tag,
                ..self.base.clone()
            }
            .validate(2)?,
        }
        Ok(())
    }
}

/// A surrogate or the simulator, owned.
pub enum Source {
    Net(Mlp),
    Sim(ReachScene),
}

impl Source {
    pub fn resolve(s: &mut Settings, a: &SourceArgs) -> Result<Self, CliError> {
        let raw = s.switch("raw_sim", a.raw_sim)?;
        let weights: Option<String> = match a.weights.clone() {
            Some(w) => Some(w),
            None => {
                let w = s.get("weights", None, String::new())?;
                (!w.is_empty()).then_some(w)
            }
        };
        match (raw, weights) {
            (true, Some(_)) => Err(CliError::Usage("--weights and --raw-sim are exclusive".into())),
            (true, None) => Ok(Source::Sim(ReachScene::default())),
            (false, Some(w)) => {
                s.get("weights", Some(w.clone()), String::new())?;
                Ok(Source::Net(load_weights(&w)?))
            }
            (false, None) => Err(CliError::Usage("one of --weights or --raw-sim is required".into())),
        }
    }
}

impl ForwardModel for Source {
    fn input_dim(&self) -> usize {
        match self {
            Source::Net(n) => ForwardModel::input_dim(n),
            Source::Sim(_) => 2,
        }
    }

    fn output_dim(&self) -> usize {
        match self {
            Source::Net(n) => ForwardModel::output_dim(n),
            Source::Sim(s) => s.output_dim(),
        }
    }

    fn forward_batch(&self, xs: &[LatentPoint]) -> tpabc::Result<Vec<Vec<f64>>> {
        match self {
            Source::Net(n) => n.forward_batch(xs),
            Source::Sim(s) => RawSimForward::new(s).forward_batch(xs),
        }
    }

    fn residual_sq_batch(&self, xs: &[LatentPoint], obs: &Observation) -> tpabc::Result<Vec<f64>> {
        match self {
            Source::Net(n) => ForwardModel::residual_sq_batch(n, xs, obs),
            Source::Sim(s) => RawSimForward::new(s).residual_sq_batch(xs, obs),
        }
    }
}

/// Error model over the default table.
pub fn table_model() -> ErrorModel {
    ErrorModel::with_prior(ReachScene::default().table)
}

/// Runs one method; `seed` drives the stochastic ones.
pub fn run_method<F: ForwardModel + ?Sized>(
    method: Method,
    params: &MethodParams,
    model: &ErrorModel,
    obs: &Observation,
    forward: &F,
    seed: u64,
) -> Result<InferenceResult, CliError> {
    Ok(match method {
        Method::Tp => compute_tp_posterior(&params.tp, model, obs, forward)?.1,
        Method::Base(tag) => MethodConfig {
            method: tag,
            seed,
            ..params.base.clone()
        }
        .run(model, obs, forward)?,
    })
}

fn load_dataset(path: &str) -> Result<ReachDataset, CliError> {
    Ok(ReachDataset::load(path)?)
}

fn observation(ds: &ReachDataset, i: usize, frac: f64) -> Result<Observation, CliError> {
    let traj = ds.trajectories.get(i).ok_or_else(|| {
        CliError::Usage(format!("record {i} out of range; the dataset has {}", ds.len()))
    })?;
    Ok(Observation::new(traj.clone(), 3)?.with_fraction(frac)?)
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn ensure_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}

/// `<path>.config`: the effective settings of a single-file output.
fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(".config");
    PathBuf::from(s)
}

fn fmt_point(x: &[f64]) -> String {
    x.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" ")
}

pub fn gen_data(s: &mut Settings, a: &GenDataArgs) -> Result<String, CliError> {
    let n = s.get("n", a.n, 10_000usize)?;
    let seed = s.get("seed", a.seed, 0u64)?;
    let sigma = s.get("sigma_obs", a.sigma_obs, 0.0f64)?;
    let scene = ReachScene::default();
    let center = s
        .get("bounds_center", a.bounds_center.clone(), List(scene.table.center().to_vec()))?
        .0;
    let radius = s.get("bounds_radius", a.bounds_radius, scene.table.radius()[0])?;
    let out: String = s.require("out", a.out.clone())?;
    s.check_unused()?;
    if center.len() != 2 {
        return Err(CliError::Usage("--bounds-center takes two values".into()));
    }
    let bounds = PriorBox::cube(center, radius)?;
    let ds = generate_dataset(&scene, n, &bounds, sigma, seed)?;
    let out = Path::new(&out);
    ds.save(out)?;
    write_file(&sidecar(out), &s.effective())?;
    Ok(format!("wrote {} trajectories to {}\n", ds.len(), out.display()))
}

pub fn train(s: &mut Settings, a: &TrainArgs) -> Result<String, CliError> {
    let data: String = s.require("data", a.data.clone())?;
    let out: String = s.require("out", a.out.clone())?;
    let seed = s.get("seed", a.seed, 0u64)?;
    let d = TrainConfig::default();
    let cfg = TrainConfig {
        epochs: s.get("epochs", a.epochs, d.epochs)?,
        learning_rate: s.get("lr", a.lr, d.learning_rate)?,
        batch_size: s.get("batch", a.batch, d.batch_size)?,
        epsilon_star: s.get("epsilon_star", a.epsilon_star, d.epsilon_star)?,
        seed: seed::derive(seed, 1),
        fit_scaling: true,
    };
    let hidden = s.get("hidden", a.hidden.clone(), List(vec![128usize, 128]))?.0;
    s.check_unused()?;

    let ds = load_dataset(&data)?;
    let training = ds.to_training()?;
    let m = ds.trajectories.first().map_or(0, |t| t.len());
    let mut sizes = vec![2];
    sizes.extend(&hidden);
    sizes.push(m);
    let mut net = Mlp::random(&sizes, &mut seed::rng_for(seed, 0))?;
    let report = train_sgd(&mut net, &training, &cfg)?;

    let out = Path::new(&out);
    save_weights(&net, out)?;
    let mut log = String::from("epoch,loss\n");
    for (i, l) in report.epoch_losses.iter().enumerate() {
        log.push_str(&format!("{},{}\n", i + 1, l));
    }
    let mut log_path = out.as_os_str().to_os_string();
    log_path.push(".loss.csv");
    write_file(Path::new(&log_path), &log)?;
    write_file(&sidecar(out), &s.effective())?;
    Ok(format!(
        "trained {:?} for {} epochs; final loss {:.6}\n",
        sizes,
        cfg.epochs,
        report.final_loss().unwrap_or(f64::NAN)
    ))
}

fn result_text(
    method: Method,
    index: usize,
    obs: &Observation,
    truth: &LatentPoint,
    r: &InferenceResult,
    time_ms: f64,
) -> String {
    let mut t = String::new();
    t.push_str(&format!("method={method}\n"));
    t.push_str(&format!("index={index}\n"));
    t.push_str(&format!("observed_points={}\n", obs.observed_points()));
    t.push_str(&format!("truth={}\n", fmt_point(truth)));
    t.push_str(&format!("map={}\n", fmt_point(&r.map_x)));
    t.push_str(&format!("error_m={}\n", r.map_x.distance(truth)));
    t.push_str(&format!("map_slack={}\n", r.map_slack));
    t.push_str(&format!("log_posterior={}\n", r.log_posterior));
    t.push_str(&format!("n_evals={}\n", r.n_evals));
    t.push_str(&format!("time_ms={time_ms}\n"));
    if let Some(a) = r.acceptance_rate {
        t.push_str(&format!("acceptance_rate={a}\n"));
    }
    let flags: Vec<String> = r.flags.iter().map(|f| format!("{f:?}")).collect();
    t.push_str(&format!("flags={}\n", flags.join(";")));
    t
}

pub fn infer(s: &mut Settings, a: &InferArgs) -> Result<String, CliError> {
    let method: Method = s.require::<String>("method", a.method.clone())?.parse()?;
    let data: String = s.require("data", a.data.clone())?;
    let index = s.get("index", a.index, 0usize)?;
    let frac = s.get("observed_frac", a.observed_frac, 1.0f64)?;
    let stream = s.switch("stream", a.stream)?;
    let seed = s.get("seed", a.seed, 0u64)?;
    let params = MethodParams::resolve(s, &a.params)?;
    let out: String = s.require("out", a.out.clone())?;
    let source = Source::resolve(s, &a.source)?;
    s.check_unused()?;
    params.validate(method)?;

    let ds = load_dataset(&data)?;
    let obs = observation(&ds, index, frac)?;
    let truth = ds.goals[index].clone();
    let model = table_model();
    let out = Path::new(&out);
    ensure_dir(out)?;
    write_file(&out.join("config.txt"), &s.effective())?;

    if stream {
        let mut rows = String::from("frame,map_x,map_y,error_m,map_slack,n_evals,time_ms\n");
        let mut push = |frame: usize, r: &InferenceResult, ms: f64| {
            rows.push_str(&format!(
                "{frame},{},{},{},{},{},{ms}\n",
                r.map_x[0],
                r.map_x[1],
                r.map_x.distance(&truth),
                r.map_slack,
                r.n_evals
            ));
        };
        if let Method::Base(MethodTag::ParticleFilter) = method {
            let cfg = tpabc::baselines::PfConfig {
                seed,
                ..params.base.pf.clone()
            };
            let frames = particle_filter(&cfg, &model, &obs, &source)?;
            let mut prev = 0.0;
            for (i, r) in frames.iter().enumerate() {
                let ms = r.wall_time.as_secs_f64() * 1e3;
                push(i + 1, r, ms - prev);
                prev = ms;
            }
        } else {
            for n in 1..=obs.observed_points() {
                let prefix = obs.with_observed(n)?;
                let t0 = Instant::now();
                let r = run_method(method, &params, &model, &prefix, &source, seed)?;
                push(n, &r, t0.elapsed().as_secs_f64() * 1e3);
            }
        }
        write_file(&out.join("stream.csv"), &rows)?;
        return Ok(format!(
            "streamed {} frames to {}\n",
            obs.observed_points(),
            out.join("stream.csv").display()
        ));
    }

    let t0 = Instant::now();
    let (r, tree) = match method {
        Method::Tp => {
            let (tree, r) = compute_tp_posterior(&params.tp, &model, &obs, &source)?;
            (r, Some(tree))
        }
        _ => (run_method(method, &params, &model, &obs, &source, seed)?, None),
    };
    let ms = t0.elapsed().as_secs_f64() * 1e3;
    let text = result_text(method, index, &obs, &truth, &r, ms);
    write_file(&out.join("result.txt"), &text)?;
    if let Some(tree) = tree {
        let path = out.join("leaves.txt");
        let f = fs::File::create(&path).map_err(|e| CliError::io(&path, e))?;
        write_leaf_dump(std::io::BufWriter::new(f), &leaf_density(&tree)?)
            .map_err(|e| CliError::io(&path, e))?;
    }
    Ok(text)
}

pub fn bench(s: &mut Settings, a: &BenchArgs) -> Result<String, CliError> {
    let data: String = s.require("data", a.data.clone())?;
    let all = "tp,grid,abc_reject,abc_smc,mcmc_mh,particle_filter";
    let methods: Vec<Method> = s
        .get("methods", a.methods.clone(), all.parse::<List<String>>().expect("valid list"))?
        .0
        .iter()
        .map(|m| m.parse())
        .collect::<Result<_, _>>()?;
    let trials = s.get("trials", a.trials, 100usize)?;
    let fracs = s.get("observed_frac", a.observed_frac.clone(), List(vec![0.5f64]))?.0;
    let seed = s.get("seed", a.seed, 0u64)?;
    let params = MethodParams::resolve(s, &a.params)?;
    let out: String = s.require("out", a.out.clone())?;
    let source = Source::resolve(s, &a.source)?;
    s.check_unused()?;
    if methods.is_empty() || fracs.is_empty() || trials == 0 {
        return Err(CliError::Usage("bench needs at least one method, fraction and trial".into()));
    }
    for &m in &methods {
        params.validate(m)?;
    }

    let ds = load_dataset(&data)?;
    if trials > ds.len() {
        return Err(CliError::Usage(format!(
            "{trials} trials requested but the dataset has {} records",
            ds.len()
        )));
    }
    let model = table_model();
    let out = Path::new(&out);
    ensure_dir(out)?;
    write_file(&out.join("config.txt"), &s.effective())?;

    let mut records = Vec::new();
    for trial in 0..trials {
        let trial_seed = seed::derive(seed, trial as u64);
        for &frac in &fracs {
            let obs = observation(&ds, trial, frac)?;
            for &m in &methods {
                let t0 = Instant::now();
                let res = run_method(m, &params, &model, &obs, &source, trial_seed);
                let time_ms = t0.elapsed().as_secs_f64() * 1e3;
                records.push(BenchRecord {
                    method: m.to_string(),
                    trial,
                    observed_frac: frac,
                    outcome: res
                        .map(|r| Measured {
                            error_m: r.map_x.distance(&ds.goals[trial]),
                            time_ms,
                            n_evals: r.n_evals,
                            map_slack: r.map_slack,
                        })
                        .map_err(|e| e.to_string()),
                });
            }
        }
    }

    report::write_raw(&out.join("raw.csv"), &records)?;
    let summary = report::summarize(&records);
    report::write_summary(&out.join("summary.csv"), &summary)?;
    for &m in &methods {
        let name = m.to_string();
        let mine: Vec<&BenchRecord> = records.iter().filter(|r| r.method == name).collect();
        report::write_points(&out.join(format!("points_{name}.csv")), &mine)?;
    }
    Ok(report::format_table(&summary))
}

pub fn slack_scan(s: &mut Settings, a: &SlackScanArgs) -> Result<String, CliError> {
    let data: String = s.require("data", a.data.clone())?;
    let out: String = s.require("out", a.out.clone())?;
    let threshold = s.get("threshold", a.threshold, 0.1f64)?;
    let frac = s.get("observed_frac", a.observed_frac, 1.0f64)?;
    let mut tp = TpConfig::default();
    tp.rho = s.get("rho", a.rho, 0.05)?;
    if let Threshold::PerCoordinate(t) = tp.threshold {
        tp.threshold = Threshold::PerCoordinate(s.get("tau", a.tau, t)?);
    }
    let source = Source::resolve(s, &a.source)?;
    s.check_unused()?;
    tp.validate(2)?;

    let ds = load_dataset(&data)?;
    if ds.is_empty() {
        return Err(CliError::Usage(format!("{data} holds no observations")));
    }
    let model = table_model();
    let mut rows = String::from("index,slack,anomalous,map_x,map_y\n");
    let mut flagged = 0;
    for i in 0..ds.len() {
        let obs = observation(&ds, i, frac)?;
        let (tree, r) = compute_tp_posterior(&tp, &model, &obs, &source)?;
        let leaves: Vec<LatentPoint> = tree
            .leaves()
            .filter(|(_, n)| n.log_likelihood.is_some())
            .map(|(_, n)| LatentPoint::new(n.center.clone()))
            .collect();
        let eps = infer_slack_map(&obs, &model, &source, &leaves)?;
        let anomalous = eps > threshold;
        flagged += anomalous as usize;
        rows.push_str(&format!("{i},{eps},{anomalous},{},{}\n", r.map_x[0], r.map_x[1]));
    }
    let out = Path::new(&out);
    write_file(out, &rows)?;
    write_file(&sidecar(out), &s.effective())?;
    Ok(format!(
        "{flagged} of {} observations exceed slack {threshold}\n",
        ds.len()
    ))
}
