use std::time::Instant;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{log_sum_exp, weighted_std};
use crate::error::{Error, Result};
use crate::forward::ForwardModel;
use crate::model::{
    score_sse, ErrorModel, Flag, InferenceResult, LatentPoint, Observation, SlackScore,
    WeightedSample,
};
use crate::seed;

/// Rejection ABC with a fixed budget.
#[derive(Debug, Clone, PartialEq)]
pub struct RejectConfig {
    /// Acceptance threshold on the RMS residual; may be infinite.
    pub tolerance: f64,
    pub budget: usize,
    /// Points per forward call.
    pub batch: usize,
    pub seed: u64,
}

impl Default for RejectConfig {
    fn default() -> Self {
        RejectConfig {
            tolerance: 0.05,
            budget: 15_000,
            batch: 1024,
            seed: 0,
        }
    }
}

impl RejectConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tolerance.is_nan() || self.tolerance < 0.0 {
            return Err(Error::invalid("rejection tolerance must be non-negative"));
        }
        if self.budget == 0 || self.batch == 0 {
            return Err(Error::invalid("rejection budget and batch size must be positive"));
        }
        Ok(())
    }
}

/// Population Monte Carlo ABC over a decreasing tolerance schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct SmcConfig {
    /// Strictly decreasing RMS-residual thresholds, one per generation.
    pub tolerances: Vec<f64>,
    pub population: usize,
    /// Total forward evaluations across all generations.
    pub budget: usize,
    pub batch: usize,
    pub seed: u64,
}

impl Default for SmcConfig {
    fn default() -> Self {
        SmcConfig {
            tolerances: vec![0.4, 0.2, 0.1, 0.05, 0.03, 0.02],
            population: 500,
            budget: 15_000,
            batch: 1024,
            seed: 0,
        }
    }
}

impl SmcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tolerances.is_empty() {
            return Err(Error::invalid("tolerance schedule is empty"));
        }
        if self.tolerances.iter().any(|t| t.is_nan() || *t < 0.0) {
            return Err(Error::invalid("tolerances must be non-negative"));
        }
        if self.tolerances.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::invalid("tolerance schedule must be strictly decreasing"));
        }
        if self.population == 0 || self.budget == 0 || self.batch == 0 {
            return Err(Error::invalid("population, budget and batch size must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Scored {
    x: LatentPoint,
    distance: f64,
    score: SlackScore,
}

/// One forward call over `xs`; returns RMS distance and slack score per point.
fn evaluate<F: ForwardModel + ?Sized>(
    xs: Vec<LatentPoint>,
    obs: &Observation,
    model: &ErrorModel,
    forward: &F,
) -> Result<Vec<Scored>> {
    if xs.is_empty() {
        return Ok(Vec::new());
    }
    let sse = forward.residual_sq_batch(&xs, obs)?;
    if sse.len() != xs.len() {
        return Err(Error::Forward(format!("{} residuals for {} points", sse.len(), xs.len())));
    }
    let m = obs.compared_len();
    Ok(xs
        .into_iter()
        .zip(sse)
        .map(|(x, r)| {
            let score = score_sse(&x, m, r, model);
            Scored {
                distance: (r / m as f64).sqrt(),
                score,
                x,
            }
        })
        .collect())
}

fn better(a: &Scored, best: &Option<Scored>) -> bool {
    best.as_ref().map_or(true, |b| a.score.log_posterior > b.score.log_posterior)
}

/// Draws `budget` prior samples and keeps those within `tolerance`.
///
/// With no acceptances the best-scoring rejected draw is reported and the
/// result carries [`Flag::NoAcceptance`].
pub fn abc_reject<F: ForwardModel + ?Sized>(
    cfg: &RejectConfig,
    model: &ErrorModel,
    obs: &Observation,
    forward: &F,
) -> Result<InferenceResult> {
    cfg.validate()?;
    let start = Instant::now();
    let mut rng = seed::rng(cfg.seed);
    let mut evals = 0;
    let mut accepted = Vec::new();
    let mut best_acc: Option<Scored> = None;
    let mut best_any: Option<Scored> = None;
    while evals < cfg.budget {
        let n = cfg.batch.min(cfg.budget - evals);
        let xs = (0..n).map(|_| model.prior.sample(&mut rng)).collect();
        evals += n;
        for s in evaluate(xs, obs, model, forward)? {
            if better(&s, &best_any) {
                best_any = Some(s.clone());
            }
            if s.distance < cfg.tolerance {
                if better(&s, &best_acc) {
                    best_acc = Some(s.clone());
                }
                accepted.push(s.x);
            }
        }
    }
    let n_acc = accepted.len();
    let best = best_acc.clone().or(best_any).expect("budget is positive");
    let mut result = InferenceResult::new(best.x, best.score, evals);
    result.acceptance_rate = Some(n_acc as f64 / evals as f64);
    result.samples = accepted
        .into_iter()
        .map(|x| WeightedSample {
            x,
            weight: 1.0 / n_acc as f64,
        })
        .collect();
    if best_acc.is_none() {
        result.flags.push(Flag::NoAcceptance);
    }
    result.wall_time = start.elapsed();
    Ok(result)
}

struct Particle {
    s: Scored,
    log_w: f64,
}

/// Mutable sampling state shared by the generations of one run.
struct SmcRun<'a, F: ?Sized, R> {
    cfg: &'a SmcConfig,
    model: &'a ErrorModel,
    obs: &'a Observation,
    forward: &'a F,
    rng: R,
    evals: usize,
    best_any: Option<Scored>,
}

impl<F: ForwardModel + ?Sized, R: Rng> SmcRun<'_, F, R> {
    fn room(&self, accepted: usize) -> usize {
        self.cfg
            .batch
            .min(self.cfg.budget - self.evals)
            .min(self.cfg.population - accepted)
    }

    fn track(&mut self, s: &Scored) {
        if better(s, &self.best_any) {
            self.best_any = Some(s.clone());
        }
    }

    /// Prior draws until the population fills or the budget runs out.
    fn from_prior(&mut self, tol: f64) -> Result<Vec<Particle>> {
        let mut pop = Vec::new();
        while pop.len() < self.cfg.population && self.evals < self.cfg.budget {
            let n = self.room(pop.len());
            let xs = (0..n).map(|_| self.model.prior.sample(&mut self.rng)).collect();
            self.evals += n;
            for s in evaluate(xs, self.obs, self.model, self.forward)? {
                self.track(&s);
                if s.distance < tol {
                    pop.push(Particle { s, log_w: 0.0 });
                }
            }
        }
        normalize(&mut pop);
        Ok(pop)
    }

    /// Kernel-perturbed resampling of `prev` until the population fills.
    fn perturb(&mut self, prev: &[Particle], tol: f64) -> Result<Vec<Particle>> {
        let k = self.model.prior.dim();
        let xs: Vec<&[f64]> = prev.iter().map(|p| p.s.x.coords()).collect();
        let ws: Vec<f64> = prev.iter().map(|p| p.log_w.exp()).collect();
        let sigma: Vec<f64> = weighted_std(&xs, &ws)
            .iter()
            .zip(self.model.prior.radius())
            .map(|(s, r)| (2.0 * s).max(1e-9 * r))
            .collect();
        let mut cum = Vec::with_capacity(ws.len());
        let mut acc = 0.0;
        for w in &ws {
            acc += w;
            cum.push(acc);
        }

        let mut pop: Vec<Particle> = Vec::new();
        while pop.len() < self.cfg.population && self.evals < self.cfg.budget {
            let n = self.room(pop.len());
            let mut batch = Vec::with_capacity(n);
            // Out-of-box proposals are redrawn and cost no evaluation.
            let mut attempts = 0usize;
            while batch.len() < n && attempts < 1000 * n {
                attempts += 1;
                let u = self.rng.gen::<f64>() * acc;
                let j = cum.partition_point(|c| *c <= u).min(prev.len() - 1);
                let x: Vec<f64> = (0..k)
                    .map(|d| {
                        let z: f64 = StandardNormal.sample(&mut self.rng);
                        xs[j][d] + sigma[d] * z
                    })
                    .collect();
                if self.model.prior.contains(&x) {
                    batch.push(LatentPoint::new(x));
                }
            }
            if batch.is_empty() {
                break;
            }
            self.evals += batch.len();
            for s in evaluate(batch, self.obs, self.model, self.forward)? {
                self.track(&s);
                if s.distance < tol {
                    let terms: Vec<f64> = prev
                        .iter()
                        .map(|p| {
                            p.log_w
                                + (0..k)
                                    .map(|d| {
                                        let z = (s.x[d] - p.s.x[d]) / sigma[d];
                                        -0.5 * z * z - sigma[d].ln()
                                    })
                                    .sum::<f64>()
                        })
                        .collect();
                    pop.push(Particle {
                        s,
                        log_w: -log_sum_exp(&terms),
                    });
                }
            }
        }
        normalize(&mut pop);
        Ok(pop)
    }
}

/// Rescales log weights to sum to one. Returns false if every weight is zero.
fn normalize(pop: &mut [Particle]) -> bool {
    let ws: Vec<f64> = pop.iter().map(|p| p.log_w).collect();
    let z = log_sum_exp(&ws);
    if !z.is_finite() {
        return false;
    }
    for p in pop.iter_mut() {
        p.log_w -= z;
    }
    true
}

/// ABC population Monte Carlo.
///
/// Generation one samples the prior. Each later generation resamples
/// ancestors by weight, perturbs them with a Gaussian kernel of twice the
/// weighted population std, and weights accepted particles by
/// `1 / sum_j w_j K(x | x_j)` (the uniform prior cancels). If the budget runs
/// out mid-generation the partial population becomes final; an empty one
/// leaves the previous generation final.
pub fn abc_smc<F: ForwardModel + ?Sized>(
    cfg: &SmcConfig,
    model: &ErrorModel,
    obs: &Observation,
    forward: &F,
) -> Result<InferenceResult> {
    cfg.validate()?;
    let start = Instant::now();
    let mut run = SmcRun {
        cfg,
        model,
        obs,
        forward,
        rng: seed::rng(cfg.seed),
        evals: 0,
        best_any: None,
    };
    let mut flags = Vec::new();
    let mut pop = run.from_prior(cfg.tolerances[0])?;
    let mut last_rate = pop.len() as f64 / run.evals.max(1) as f64;
    for (g, &tol) in cfg.tolerances.iter().enumerate().skip(1) {
        if pop.is_empty() || run.evals >= cfg.budget {
            break;
        }
        let before = run.evals;
        let mut next = run.perturb(&pop, tol)?;
        let mut ok = normalize(&mut next);
        if !next.is_empty() && !ok {
            flags.push(Flag::DegeneratePopulation { generation: g });
            next = run.from_prior(tol)?;
            ok = !next.is_empty();
        }
        if next.is_empty() || !ok {
            break;
        }
        last_rate = next.len() as f64 / (run.evals - before).max(1) as f64;
        pop = next;
    }
    if run.evals >= cfg.budget && pop.len() < cfg.population {
        flags.push(Flag::BudgetExhausted);
    }

    let mut result = match pop
        .iter()
        .max_by(|a, b| a.s.score.log_posterior.total_cmp(&b.s.score.log_posterior))
    {
        Some(p) => InferenceResult::new(p.s.x.clone(), p.s.score, run.evals),
        None => {
            flags.push(Flag::NoAcceptance);
            let b = run.best_any.clone().expect("budget is positive");
            InferenceResult::new(b.x, b.score, run.evals)
        }
    };
    result.samples = pop
        .into_iter()
        .map(|p| WeightedSample {
            x: p.s.x,
            weight: p.log_w.exp(),
        })
        .collect();
    result.acceptance_rate = Some(last_rate);
    result.flags = flags;
    result.wall_time = start.elapsed();
    Ok(result)
}
