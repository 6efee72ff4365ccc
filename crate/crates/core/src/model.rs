//! Gaussian error model with slack, and the posterior-scoring primitives every
//! inference method shares.
//!
//! The joint posterior over a latent scene `x` and slack `eps` is
//!
//! ```text
//! log p(x, eps | D) = log p(x) + log p(eps) + log Normal(D | f(x), eps)
//! ```
//!
//! with `p(x)` uniform over the prior box, `p(eps)` a Gamma(1, 1) density and
//! `eps` an isotropic standard deviation shared by every observation
//! coordinate. Only the observed prefix of a partial observation is scored.
//!
//! Slack inference on a grid uses the joint MAP over `(x, eps)` pairs as a
//! plug-in for the marginal argmax of `p(eps | D)`.

use std::f64::consts::PI;
use std::ops::Deref;
use std::time::Duration;

use rand::Rng;

use crate::error::{Error, Result};
use crate::forward::ForwardModel;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// A point in the latent space.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentPoint(Vec<f64>);

impl LatentPoint {
    pub fn new(coords: Vec<f64>) -> Self {
        LatentPoint(coords)
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn distance(&self, other: &LatentPoint) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

impl Deref for LatentPoint {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vec<f64>> for LatentPoint {
    fn from(v: Vec<f64>) -> Self {
        LatentPoint(v)
    }
}

impl<const N: usize> From<[f64; N]> for LatentPoint {
    fn from(v: [f64; N]) -> Self {
        LatentPoint(v.to_vec())
    }
}

/// An observation vector, possibly only partially observed.
///
/// `values` holds the full-length vector (`M` entries, grouped in points of
/// `point_dim` coordinates); only the first `observed` points take part in
/// scoring.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    values: Vec<f64>,
    point_dim: usize,
    observed: usize,
}

impl Observation {
    /// A fully observed vector.
    pub fn new(values: Vec<f64>, point_dim: usize) -> Result<Self> {
        if point_dim == 0 || values.is_empty() || values.len() % point_dim != 0 {
            return Err(Error::invalid(format!(
                "observation length {} is not a positive multiple of point_dim {}",
                values.len(),
                point_dim
            )));
        }
        let observed = values.len() / point_dim;
        Self::partial(values, point_dim, observed)
    }

    /// Only the first `observed` points are valid.
    pub fn partial(values: Vec<f64>, point_dim: usize, observed: usize) -> Result<Self> {
        if point_dim == 0 || observed == 0 || observed * point_dim > values.len() {
            return Err(Error::invalid(format!(
                "observed prefix {observed}x{point_dim} does not fit in {} values",
                values.len()
            )));
        }
        if values[..observed * point_dim].iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("observation"));
        }
        Ok(Observation {
            values,
            point_dim,
            observed,
        })
    }

    /// Same data, observed up to `observed` points.
    pub fn with_observed(&self, observed: usize) -> Result<Self> {
        Self::partial(self.values.clone(), self.point_dim, observed)
    }

    /// Observed prefix covering `fraction` of the points, at least one point.
    pub fn with_fraction(&self, fraction: f64) -> Result<Self> {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(Error::invalid(format!(
                "observed fraction {fraction} not in (0, 1]"
            )));
        }
        let n = ((self.total_points() as f64 * fraction).round() as usize).max(1);
        self.with_observed(n)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// The scored entries.
    pub fn compared(&self) -> &[f64] {
        &self.values[..self.compared_len()]
    }

    pub fn compared_len(&self) -> usize {
        self.observed * self.point_dim
    }

    pub fn point_dim(&self) -> usize {
        self.point_dim
    }

    pub fn observed_points(&self) -> usize {
        self.observed
    }

    pub fn total_points(&self) -> usize {
        self.values.len() / self.point_dim
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Discrete slack values (standard deviations), strictly increasing.
#[derive(Debug, Clone, PartialEq)]
pub struct SlackGrid(Vec<f64>);

impl SlackGrid {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Empty("slack grid"));
        }
        if values.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::invalid("slack values must be finite and positive"));
        }
        if values.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("slack values must be strictly increasing"));
        }
        Ok(SlackGrid(values))
    }

    /// `n` values spaced evenly in log between `lo` and `hi` inclusive.
    pub fn log_spaced(lo: f64, hi: f64, n: usize) -> Result<Self> {
        if n == 0 || !(lo > 0.0 && hi >= lo) {
            return Err(Error::invalid(format!("bad log-spaced grid [{lo}, {hi}] x {n}")));
        }
        if n == 1 {
            return Self::new(vec![lo]);
        }
        let (a, b) = (lo.ln(), hi.ln());
        let step = (b - a) / (n - 1) as f64;
        let mut v: Vec<f64> = (0..n).map(|i| (a + step * i as f64).exp()).collect();
        v[0] = lo;
        v[n - 1] = hi;
        Self::new(v)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, slack: f64) -> bool {
        self.0.contains(&slack)
    }
}

impl Default for SlackGrid {
    /// 16 log-spaced values in [0.01, 5.0].
    fn default() -> Self {
        SlackGrid::log_spaced(0.01, 5.0, 16).expect("valid default slack grid")
    }
}

/// Axis-aligned box carrying the uniform scene prior.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorBox {
    center: Vec<f64>,
    radius: Vec<f64>,
}

impl PriorBox {
    pub fn new(center: Vec<f64>, radius: Vec<f64>) -> Result<Self> {
        if center.is_empty() || center.len() != radius.len() {
            return Err(Error::invalid("prior box center/radius dimensions differ"));
        }
        if radius.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            return Err(Error::invalid("prior box radius must be positive"));
        }
        if center.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite("prior box center"));
        }
        Ok(PriorBox { center, radius })
    }

    /// Hypercube with the same radius on every axis.
    pub fn cube(center: Vec<f64>, radius: f64) -> Result<Self> {
        let r = vec![radius; center.len()];
        Self::new(center, r)
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn center(&self) -> &[f64] {
        &self.center
    }

    pub fn radius(&self) -> &[f64] {
        &self.radius
    }

    /// The common radius if the box is a hypercube.
    pub fn cube_radius(&self) -> Option<f64> {
        let r0 = self.radius[0];
        self.radius.iter().all(|r| *r == r0).then_some(r0)
    }

    /// Closed-box membership.
    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.center.iter().zip(&self.radius))
                .all(|(v, (c, r))| (v - c).abs() <= *r)
    }

    /// Log density of the uniform prior inside the box.
    pub fn log_density(&self) -> f64 {
        -self.radius.iter().map(|r| (2.0 * r).ln()).sum::<f64>()
    }

    /// Log density at `x`, negative infinity outside.
    pub fn log_prior(&self, x: &[f64]) -> f64 {
        if self.contains(x) {
            self.log_density()
        } else {
            f64::NEG_INFINITY
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> LatentPoint {
        LatentPoint(
            self.center
                .iter()
                .zip(&self.radius)
                .map(|(c, r)| c + r * (2.0 * rng.gen::<f64>() - 1.0))
                .collect(),
        )
    }

    /// Clamp `x` into the box in place.
    pub fn clamp(&self, x: &mut [f64]) {
        for (v, (c, r)) in x.iter_mut().zip(self.center.iter().zip(&self.radius)) {
            *v = v.clamp(c - r, c + r);
        }
    }
}

/// Slack grid plus scene prior.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorModel {
    pub slack_grid: SlackGrid,
    pub prior: PriorBox,
}

impl ErrorModel {
    pub fn new(slack_grid: SlackGrid, prior: PriorBox) -> Self {
        ErrorModel { slack_grid, prior }
    }

    /// Default slack grid over the given prior box.
    pub fn with_prior(prior: PriorBox) -> Self {
        ErrorModel {
            slack_grid: SlackGrid::default(),
            prior,
        }
    }
}

/// Best joint score over the slack grid and the slack achieving it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlackScore {
    pub log_posterior: f64,
    pub slack: f64,
}

/// A scored tree leaf, as reported in [`InferenceResult::leaves`].
#[derive(Debug, Clone, PartialEq)]
pub struct LeafRecord {
    pub center: LatentPoint,
    pub radius: f64,
    pub log_likelihood: f64,
}

/// A weighted posterior sample produced by a Monte Carlo method.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedSample {
    pub x: LatentPoint,
    pub weight: f64,
}

/// Conditions an inference run reports without failing.
#[derive(Debug, Clone, PartialEq)]
pub enum Flag {
    BudgetExhausted,
    NoAcceptance,
    DegeneratePopulation { generation: usize },
    WeightCollapse { frame: usize },
    ZeroAcceptanceChain,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InferenceResult {
    pub map_x: LatentPoint,
    pub map_slack: f64,
    pub log_posterior: f64,
    pub n_evals: usize,
    pub wall_time: Duration,
    /// Tree leaves; empty for non-tree methods.
    pub leaves: Vec<LeafRecord>,
    /// Posterior samples with normalized weights; empty for deterministic methods.
    pub samples: Vec<WeightedSample>,
    pub acceptance_rate: Option<f64>,
    pub flags: Vec<Flag>,
}

impl InferenceResult {
    pub fn new(map_x: LatentPoint, score: SlackScore, n_evals: usize) -> Self {
        InferenceResult {
            map_x,
            map_slack: score.slack,
            log_posterior: score.log_posterior,
            n_evals,
            wall_time: Duration::ZERO,
            leaves: Vec::new(),
            samples: Vec::new(),
            acceptance_rate: None,
            flags: Vec::new(),
        }
    }

    pub fn has_flag(&self, flag: &Flag) -> bool {
        self.flags.contains(flag)
    }

    /// Weighted mean of `samples`, if any.
    pub fn sample_mean(&self) -> Option<Vec<f64>> {
        let first = self.samples.first()?;
        let mut mean = vec![0.0; first.x.dim()];
        let mut total = 0.0;
        for s in &self.samples {
            for (m, v) in mean.iter_mut().zip(s.x.coords()) {
                *m += s.weight * v;
            }
            total += s.weight;
        }
        (total > 0.0).then(|| mean.into_iter().map(|m| m / total).collect())
    }
}

fn check_prefix(obs: &Observation, pred: &[f64]) -> Result<()> {
    let m = obs.compared_len();
    if pred.len() < m {
        return Err(Error::DimensionMismatch {
            expected: m,
            found: pred.len(),
        });
    }
    if pred[..m].iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("prediction"));
    }
    Ok(())
}

/// Squared residual norm over the observed prefix.
pub fn residual_sq(obs: &Observation, pred: &[f64]) -> Result<f64> {
    check_prefix(obs, pred)?;
    Ok(obs
        .compared()
        .iter()
        .zip(pred)
        .map(|(o, p)| (o - p) * (o - p))
        .sum())
}

pub(crate) fn loglik_from_sse(m: usize, sse: f64, slack: f64) -> f64 {
    -(m as f64) * 0.5 * (LN_2PI + 2.0 * slack.ln()) - sse / (2.0 * slack * slack)
}

/// Isotropic Gaussian log-likelihood of the observed prefix given a prediction.
pub fn gaussian_loglik(obs: &Observation, pred: &[f64], slack: f64) -> Result<f64> {
    if !(slack.is_finite() && slack > 0.0) {
        return Err(Error::invalid(format!("slack must be positive, got {slack}")));
    }
    let sse = residual_sq(obs, pred)?;
    Ok(loglik_from_sse(obs.compared_len(), sse, slack))
}

/// Log-density of Gamma(1, 1) (an Exponential(1)).
pub fn slack_log_prior(slack: f64) -> Result<f64> {
    if slack.is_nan() || slack < 0.0 {
        return Err(Error::invalid(format!("slack must be non-negative, got {slack}")));
    }
    Ok(-slack)
}

/// Joint log posterior for a prediction already computed at `x`.
pub fn joint_log_posterior_from_prediction(
    x: &[f64],
    slack: f64,
    obs: &Observation,
    pred: &[f64],
    model: &ErrorModel,
) -> Result<f64> {
    let lp = model.prior.log_prior(x);
    if lp == f64::NEG_INFINITY {
        return Ok(f64::NEG_INFINITY);
    }
    Ok(lp + slack_log_prior(slack)? + gaussian_loglik(obs, pred, slack)?)
}

/// `log p(x) + log p(eps) + log Normal(obs | forward(x), eps)`.
///
/// Outside the prior box this returns negative infinity without calling the
/// forward model, so samplers may propose freely.
pub fn joint_log_posterior<F: ForwardModel + ?Sized>(
    x: &LatentPoint,
    slack: f64,
    obs: &Observation,
    model: &ErrorModel,
    forward: &F,
) -> Result<f64> {
    if !model.prior.contains(x) {
        return Ok(f64::NEG_INFINITY);
    }
    let pred = forward.forward(x)?;
    joint_log_posterior_from_prediction(x, slack, obs, &pred, model)
}

/// Maximize the joint score over the slack grid for one prediction.
///
/// Ties go to the smaller slack.
pub fn score_prediction(
    x: &[f64],
    obs: &Observation,
    pred: &[f64],
    model: &ErrorModel,
) -> Result<SlackScore> {
    let sse = residual_sq(obs, pred)?;
    Ok(score_sse(x, obs.compared_len(), sse, model))
}

/// Maximize the joint score over the slack grid given the squared residual
/// `sse` over `m` compared entries. Ties go to the smaller slack.
pub fn score_sse(x: &[f64], m: usize, sse: f64, model: &ErrorModel) -> SlackScore {
    let lp = model.prior.log_prior(x);
    let grid = model.slack_grid.values();
    let mut best = SlackScore {
        log_posterior: f64::NEG_INFINITY,
        slack: grid[0],
    };
    if lp == f64::NEG_INFINITY {
        return best;
    }
    for &eps in grid {
        let s = lp - eps + loglik_from_sse(m, sse, eps);
        if s > best.log_posterior {
            best = SlackScore {
                log_posterior: s,
                slack: eps,
            };
        }
    }
    best
}

/// Best joint score over the slack grid at `x`, reusing one forward call.
pub fn score_over_slack<F: ForwardModel + ?Sized>(
    x: &LatentPoint,
    obs: &Observation,
    model: &ErrorModel,
    forward: &F,
) -> Result<SlackScore> {
    let pred = forward.forward(x)?;
    score_prediction(x, obs, &pred, model)
}

/// Score a batch of points with a single batched forward call.
pub fn score_batch<F: ForwardModel + ?Sized>(
    xs: &[LatentPoint],
    obs: &Observation,
    model: &ErrorModel,
    forward: &F,
) -> Result<Vec<SlackScore>> {
    if xs.is_empty() {
        return Ok(Vec::new());
    }
    let sse = forward.residual_sq_batch(xs, obs)?;
    if sse.len() != xs.len() {
        return Err(Error::Forward(format!(
            "{} residuals for {} points",
            sse.len(),
            xs.len()
        )));
    }
    let m = obs.compared_len();
    Ok(xs
        .iter()
        .zip(sse)
        .map(|(x, r)| score_sse(x, m, r, model))
        .collect())
}

/// Plug-in MAP slack: the slack of the best `(x, eps)` pair over the candidates
/// and the slack grid.
pub fn infer_slack_map<F: ForwardModel + ?Sized>(
    obs: &Observation,
    model: &ErrorModel,
    forward: &F,
    candidates: &[LatentPoint],
) -> Result<f64> {
    if candidates.is_empty() {
        return Err(Error::Empty("slack candidate set"));
    }
    let scores = score_batch(candidates, obs, model, forward)?;
    let mut best = scores[0];
    for s in &scores[1..] {
        if s.log_posterior > best.log_posterior
            || (s.log_posterior == best.log_posterior && s.slack < best.slack)
        {
            best = *s;
        }
    }
    Ok(best.slack)
}

/// Normal density normalizer used by tests and diagnostics.
pub fn normal_log_density(x: f64, mean: f64, std: f64) -> f64 {
    let z = (x - mean) / std;
    -0.5 * z * z - std.ln() - 0.5 * (2.0 * PI).ln()
}


#[cfg(test)]
mod props {
    use super::*;
    use proptest::prelude::*;

    fn model() -> ErrorModel {
        ErrorModel::new(
            SlackGrid::default(),
            PriorBox::cube(vec![0.0], 10.0).unwrap(),
        )
    }

    proptest! {
        #[test]
        fn loglik_peaks_at_observation(
            o in prop::collection::vec(-5.0f64..5.0, 1..6),
            d in prop::collection::vec(-1.0f64..1.0, 6),
            slack in 0.01f64..3.0,
        ) {
            let obs = Observation::new(o.clone(), 1).unwrap();
            let at = gaussian_loglik(&obs, &o, slack).unwrap();
            let pred: Vec<f64> = o.iter().zip(&d).map(|(a, b)| a + b).collect();
            let off = gaussian_loglik(&obs, &pred, slack).unwrap();
            prop_assert!(at >= off);
            let pred2: Vec<f64> = o.iter().zip(&d).map(|(a, b)| a + 2.0 * b).collect();
            let off2 = gaussian_loglik(&obs, &pred2, slack).unwrap();
            if d[..o.len()].iter().any(|v| *v != 0.0) {
                prop_assert!(off2 < off);
            }
        }

        #[test]
        fn translation_covariance(
            o in prop::collection::vec(-5.0f64..5.0, 1..6),
            p in prop::collection::vec(-5.0f64..5.0, 6),
            shift in -3.0f64..3.0,
            slack in 0.05f64..3.0,
        ) {
            let m = model();
            let p = &p[..o.len()];
            let obs = Observation::new(o.clone(), 1).unwrap();
            let a = joint_log_posterior_from_prediction(&[0.0], slack, &obs, p, &m).unwrap();
            let o2: Vec<f64> = o.iter().map(|v| v + shift).collect();
            let p2: Vec<f64> = p.iter().map(|v| v + shift).collect();
            let obs2 = Observation::new(o2, 1).unwrap();
            let b = joint_log_posterior_from_prediction(&[0.0], slack, &obs2, &p2, &m).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }

        #[test]
        fn best_dominates_every_slack(
            o in prop::collection::vec(-2.0f64..2.0, 1..5),
            p in prop::collection::vec(-2.0f64..2.0, 5),
        ) {
            let m = model();
            let p = &p[..o.len()];
            let obs = Observation::new(o, 1).unwrap();
            let best = score_prediction(&[0.0], &obs, p, &m).unwrap();
            for &e in m.slack_grid.values() {
                let v = joint_log_posterior_from_prediction(&[0.0], e, &obs, p, &m).unwrap();
                prop_assert!(best.log_posterior >= v);
            }
        }

        #[test]
        fn slack_monotone_in_residual(
            dir in prop::collection::vec(-1.0f64..1.0, 3),
            r1 in 0.0f64..4.0,
            extra in 0.0f64..4.0,
        ) {
            let m = model();
            let obs = Observation::new(vec![0.0; 3], 1).unwrap();
            let n = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
            prop_assume!(n > 1e-6);
            let pred = |r: f64| dir.iter().map(|v| v / n * r).collect::<Vec<_>>();
            let s1 = score_prediction(&[0.0], &obs, &pred(r1), &m).unwrap();
            let s2 = score_prediction(&[0.0], &obs, &pred(r1 + extra), &m).unwrap();
            prop_assert!(s2.slack >= s1.slack);
        }
    }
}
