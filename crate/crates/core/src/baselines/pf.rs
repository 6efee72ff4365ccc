use std::time::Instant;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::log_sum_exp;
use crate::error::{Error, Result};
use crate::forward::ForwardModel;
use crate::model::{
    loglik_from_sse, score_prediction, ErrorModel, Flag, InferenceResult, LatentPoint, Observation,
    WeightedSample,
};
use crate::seed;

/// Bootstrap filter over a static latent.
#[derive(Debug, Clone, PartialEq)]
pub struct PfConfig {
    pub particles: usize,
    /// Resample when the effective sample size drops below this fraction of
    /// the particle count.
    pub resample_threshold: f64,
    /// Post-resampling jitter std as a fraction of each prior radius.
    pub jitter: f64,
    pub seed: u64,
}

impl Default for PfConfig {
    fn default() -> Self {
        PfConfig {
            particles: 300,
            resample_threshold: 0.5,
            jitter: 0.01,
            seed: 0,
        }
    }
}

impl PfConfig {
    pub fn validate(&self) -> Result<()> {
        if self.particles == 0 {
            return Err(Error::invalid("particle count must be positive"));
        }
        if !(0.0..=1.0).contains(&self.resample_threshold) {
            return Err(Error::invalid("resample threshold must lie in [0, 1]"));
        }
        if !(self.jitter >= 0.0 && self.jitter.is_finite()) {
            return Err(Error::invalid("jitter must be finite and non-negative"));
        }
        Ok(())
    }
}

/// Systematic resampling: ancestor indices for `n` offspring from
/// normalized weights, using a single uniform offset.
pub fn systematic_resample<R: Rng + ?Sized>(weights: &[f64], n: usize, rng: &mut R) -> Vec<usize> {
    let u0: f64 = rng.gen::<f64>() / n as f64;
    let mut out = Vec::with_capacity(n);
    let mut cum = weights[0];
    let mut j = 0;
    for i in 0..n {
        let u = u0 + i as f64 / n as f64;
        while u > cum && j + 1 < weights.len() {
            j += 1;
            cum += weights[j];
        }
        out.push(j);
    }
    out
}

struct Particle {
    x: LatentPoint,
    /// Log-likelihood of the frames seen so far, one entry per grid slack.
    cum: Vec<f64>,
    log_w: f64,
}

/// Log evidence of a particle with slack marginalized over the grid under
/// its prior.
fn marginal(cum: &[f64], grid: &[f64]) -> f64 {
    let terms: Vec<f64> = cum.iter().zip(grid).map(|(c, e)| c - e).collect();
    log_sum_exp(&terms)
}

/// Runs the filter over the observed prefix of `obs`, one frame per observed
/// point, and returns a result per frame.
///
/// Each frame costs one forward call over all particles. Weights are
/// multiplied by the likelihood of the new frame's point with the slack
/// marginalized over the grid. The per-frame MAP is the highest-weight
/// particle, scored against the prefix seen so far from its stored
/// prediction. If every weight vanishes the cloud is redrawn from the prior
/// and the frame is flagged.
pub fn particle_filter<F: ForwardModel + ?Sized>(
    cfg: &PfConfig,
    model: &ErrorModel,
    obs: &Observation,
    forward: &F,
) -> Result<Vec<InferenceResult>> {
    cfg.validate()?;
    let start = Instant::now();
    let mut rng = seed::rng(cfg.seed);
    let grid = model.slack_grid.values();
    let pd = obs.point_dim();
    let frames = obs.observed_points();
    if frames == 0 {
        return Err(Error::Empty("observed frames"));
    }
    let fresh = |rng: &mut rand_chacha::ChaCha8Rng| -> Vec<Particle> {
        (0..cfg.particles)
            .map(|_| Particle {
                x: model.prior.sample(rng),
                cum: vec![0.0; grid.len()],
                log_w: -(cfg.particles as f64).ln(),
            })
            .collect()
    };
    let mut ps = fresh(&mut rng);
    let mut results = Vec::with_capacity(frames);
    let mut evals = 0;

    for frame in 1..=frames {
        let mut flags = Vec::new();
        let xs: Vec<LatentPoint> = ps.iter().map(|p| p.x.clone()).collect();
        let preds = forward.forward_batch(&xs)?;
        evals += xs.len();
        let (lo, hi) = ((frame - 1) * pd, frame * pd);
        let y = &obs.values()[lo..hi];
        for (p, pred) in ps.iter_mut().zip(&preds) {
            if pred.len() < hi {
                return Err(Error::DimensionMismatch {
                    expected: hi,
                    found: pred.len(),
                });
            }
            let sse: f64 = y.iter().zip(&pred[lo..hi]).map(|(a, b)| (a - b) * (a - b)).sum();
            let before = marginal(&p.cum, grid);
            for (c, e) in p.cum.iter_mut().zip(grid) {
                *c += loglik_from_sse(pd, sse, *e);
            }
            p.log_w += marginal(&p.cum, grid) - before;
        }
        let z = log_sum_exp(&ps.iter().map(|p| p.log_w).collect::<Vec<_>>());
        let prefix = obs.with_observed(frame)?;
        let result = if z.is_finite() {
            for p in &mut ps {
                p.log_w -= z;
            }
            let best = (0..ps.len())
                .max_by(|&a, &b| ps[a].log_w.total_cmp(&ps[b].log_w))
                .expect("particles exist");
            let score = score_prediction(&ps[best].x, &prefix, &preds[best], model)?;
            let mut r = InferenceResult::new(ps[best].x.clone(), score, evals);
            r.samples = ps
                .iter()
                .map(|p| WeightedSample {
                    x: p.x.clone(),
                    weight: p.log_w.exp(),
                })
                .collect();
            r
        } else {
            flags.push(Flag::WeightCollapse { frame });
            let score = score_prediction(&ps[0].x, &prefix, &preds[0], model)?;
            let r = InferenceResult::new(ps[0].x.clone(), score, evals);
            ps = fresh(&mut rng);
            r
        };

        let ws: Vec<f64> = ps.iter().map(|p| p.log_w.exp()).collect();
        let ess = 1.0 / ws.iter().map(|w| w * w).sum::<f64>();
        if frame < frames && ess < cfg.resample_threshold * cfg.particles as f64 {
            let idx = systematic_resample(&ws, cfg.particles, &mut rng);
            let uniform = -(cfg.particles as f64).ln();
            ps = idx
                .into_iter()
                .map(|j| {
                    let mut x = ps[j].x.clone().into_inner();
                    for (v, r) in x.iter_mut().zip(model.prior.radius()) {
                        *v += cfg.jitter * r * Distribution::<f64>::sample(&StandardNormal, &mut rng);
                    }
                    model.prior.clamp(&mut x);
                    Particle {
                        x: LatentPoint::new(x),
                        cum: ps[j].cum.clone(),
                        log_w: uniform,
                    }
                })
                .collect();
        }

        let mut result = result;
        result.flags = flags;
        result.wall_time = start.elapsed();
        results.push(result);
    }
    Ok(results)
}
