use std::time::Instant;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::forward::ForwardModel;
use crate::model::{
    loglik_from_sse, slack_log_prior, ErrorModel, Flag, InferenceResult, LatentPoint, Observation,
    SlackScore, WeightedSample,
};
use crate::seed;

/// Random-walk Metropolis over the joint `(x, log eps)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MhConfig {
    /// Chain length including the initial state; equals the evaluation count.
    pub length: usize,
    pub burn_in: usize,
    /// Per-axis proposal std for `x`. Empty means 5% of each prior radius.
    pub proposal_std: Vec<f64>,
    pub log_slack_std: f64,
    /// Starting latent; `None` starts at the prior center.
    pub init: Option<Vec<f64>>,
    pub init_slack: f64,
    pub seed: u64,
}

impl Default for MhConfig {
    fn default() -> Self {
        MhConfig {
            length: 5000,
            burn_in: 1000,
            proposal_std: Vec::new(),
            log_slack_std: 0.2,
            init: None,
            init_slack: 0.5,
            seed: 0,
        }
    }
}

impl MhConfig {
    pub fn validate(&self, k: usize) -> Result<()> {
        if self.length == 0 || self.burn_in >= self.length {
            return Err(Error::invalid("chain length must be positive and exceed the burn-in"));
        }
        if !self.proposal_std.is_empty() && self.proposal_std.len() != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                found: self.proposal_std.len(),
            });
        }
        if self
            .proposal_std
            .iter()
            .chain([&self.log_slack_std])
            .any(|s| !(s.is_finite() && *s >= 0.0))
        {
            return Err(Error::invalid("proposal stds must be finite and non-negative"));
        }
        if !(self.init_slack > 0.0 && self.init_slack.is_finite()) {
            return Err(Error::invalid("initial slack must be positive"));
        }
        if let Some(x) = &self.init {
            if x.len() != k {
                return Err(Error::DimensionMismatch {
                    expected: k,
                    found: x.len(),
                });
            }
        }
        Ok(())
    }
}

/// A Metropolis chain: every state visited, its log target, and the
/// number of accepted moves.
#[derive(Debug, Clone, PartialEq)]
pub struct Chain<S> {
    pub states: Vec<S>,
    pub log_targets: Vec<f64>,
    pub accepted: usize,
}

impl<S> Chain<S> {
    /// Accepted moves over proposals made.
    pub fn acceptance_rate(&self) -> f64 {
        if self.states.len() < 2 {
            return 0.0;
        }
        self.accepted as f64 / (self.states.len() - 1) as f64
    }
}

/// Metropolis sampling with a symmetric proposal. `log_target` runs exactly
/// `length` times: once on `init` and once per proposal.
pub fn metropolis<S, R, T, P>(
    init: S,
    length: usize,
    rng: &mut R,
    mut log_target: T,
    mut propose: P,
) -> Result<Chain<S>>
where
    S: Clone,
    R: Rng + ?Sized,
    T: FnMut(&S) -> Result<f64>,
    P: FnMut(&S, &mut R) -> S,
{
    if length == 0 {
        return Err(Error::invalid("chain length must be positive"));
    }
    let mut cur_lt = log_target(&init)?;
    let mut cur = init;
    let mut chain = Chain {
        states: Vec::with_capacity(length),
        log_targets: Vec::with_capacity(length),
        accepted: 0,
    };
    chain.states.push(cur.clone());
    chain.log_targets.push(cur_lt);
    for _ in 1..length {
        let cand = propose(&cur, rng);
        let lt = log_target(&cand)?;
        let u: f64 = rng.gen();
        let accept = if lt == f64::NEG_INFINITY {
            false
        } else if cur_lt == f64::NEG_INFINITY {
            true
        } else {
            u.ln() < lt - cur_lt
        };
        if accept {
            cur = cand;
            cur_lt = lt;
            chain.accepted += 1;
        }
        chain.states.push(cur.clone());
        chain.log_targets.push(cur_lt);
    }
    Ok(chain)
}

/// Metropolis-Hastings over latent and slack jointly.
///
/// Slack moves on the log scale, so the target carries the `log eps`
/// Jacobian. The forward model runs on every proposal, including those
/// outside the prior box, so `n_evals` equals the chain length. The MAP is the
/// best post-burn-in state by joint posterior; its slack is continuous.
pub fn mcmc_mh<F: ForwardModel + ?Sized>(
    cfg: &MhConfig,
    model: &ErrorModel,
    obs: &Observation,
    forward: &F,
) -> Result<InferenceResult> {
    let k = model.prior.dim();
    cfg.validate(k)?;
    let start = Instant::now();
    let std: Vec<f64> = if cfg.proposal_std.is_empty() {
        model.prior.radius().iter().map(|r| 0.05 * r).collect()
    } else {
        cfg.proposal_std.clone()
    };
    let init_x = cfg.init.clone().unwrap_or_else(|| model.prior.center().to_vec());
    let m = obs.compared_len();
    let mut rng = seed::rng(cfg.seed);

    let target = |s: &(LatentPoint, f64)| -> Result<f64> {
        let (x, log_eps) = s;
        let sse = forward.residual_sq_batch(std::slice::from_ref(x), obs)?[0];
        let lp = model.prior.log_prior(x);
        if lp == f64::NEG_INFINITY {
            return Ok(f64::NEG_INFINITY);
        }
        let eps = log_eps.exp();
        Ok(lp + slack_log_prior(eps)? + loglik_from_sse(m, sse, eps) + log_eps)
    };
    let propose = |s: &(LatentPoint, f64), rng: &mut rand_chacha::ChaCha8Rng| {
        let x = s
            .0
            .iter()
            .zip(&std)
            .map(|(v, sd)| v + sd * Distribution::<f64>::sample(&StandardNormal, rng))
            .collect::<Vec<_>>();
        let le = s.1 + cfg.log_slack_std * Distribution::<f64>::sample(&StandardNormal, rng);
        (LatentPoint::new(x), le)
    };
    let chain = metropolis(
        (LatentPoint::new(init_x), cfg.init_slack.ln()),
        cfg.length,
        &mut rng,
        target,
        propose,
    )?;

    let post = cfg.burn_in..cfg.length;
    let (best_i, best_lp) = post
        .clone()
        .map(|i| (i, chain.log_targets[i] - chain.states[i].1))
        .fold((cfg.burn_in, f64::NEG_INFINITY), |b, c| if c.1 > b.1 { c } else { b });
    let (x, le) = chain.states[best_i].clone();
    let score = SlackScore {
        log_posterior: best_lp,
        slack: le.exp(),
    };
    let mut result = InferenceResult::new(x, score, cfg.length);
    let w = 1.0 / post.len() as f64;
    result.samples = chain.states[post]
        .iter()
        .map(|(x, _)| WeightedSample {
            x: x.clone(),
            weight: w,
        })
        .collect();
    result.acceptance_rate = Some(chain.acceptance_rate());
    if chain.accepted == 0 {
        result.flags.push(Flag::ZeroAcceptanceChain);
    }
    result.wall_time = start.elapsed();
    Ok(result)
}
