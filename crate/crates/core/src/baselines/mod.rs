//! Baseline inference methods sharing the forward-model and error-model
//! interfaces with the tree pyramid, so evaluation counts and accuracies are
//! directly comparable.
//!
//! Every method reports `n_evals` equal to the number of latent points passed
//! through the forward model.

mod abc;
mod grid;
mod mh;
mod pf;

use std::fmt;
use std::str::FromStr;

pub use abc::{abc_reject, abc_smc, RejectConfig, SmcConfig};
pub use grid::{cell_count, cells_per_axis, grid_map, GridConfig};
pub use mh::{mcmc_mh, metropolis, Chain, MhConfig};
pub use pf::{particle_filter, systematic_resample, PfConfig};

use crate::error::{Error, Result};
use crate::forward::ForwardModel;
use crate::model::{ErrorModel, InferenceResult, Observation};

/// Numerically stable `log(sum(exp(xs)))`; negative infinity when empty or
/// when every term is negative infinity.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Per-axis weighted standard deviation; weights need not be normalized.
pub fn weighted_std(xs: &[&[f64]], ws: &[f64]) -> Vec<f64> {
    let k = xs.first().map_or(0, |x| x.len());
    let total: f64 = ws.iter().sum();
    (0..k)
        .map(|d| {
            let mean = xs.iter().zip(ws).map(|(x, w)| w * x[d]).sum::<f64>() / total;
            let var = xs
                .iter()
                .zip(ws)
                .map(|(x, w)| w * (x[d] - mean).powi(2))
                .sum::<f64>()
                / total;
            var.max(0.0).sqrt()
        })
        .collect()
}

/// Baseline selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MethodTag {
    Grid,
    AbcReject,
    AbcSmc,
    McmcMh,
    ParticleFilter,
}

impl MethodTag {
    pub const ALL: [MethodTag; 5] = [
        MethodTag::Grid,
        MethodTag::AbcReject,
        MethodTag::AbcSmc,
        MethodTag::McmcMh,
        MethodTag::ParticleFilter,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MethodTag::Grid => "grid",
            MethodTag::AbcReject => "abc_reject",
            MethodTag::AbcSmc => "abc_smc",
            MethodTag::McmcMh => "mcmc_mh",
            MethodTag::ParticleFilter => "particle_filter",
        }
    }
}

impl fmt::Display for MethodTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MethodTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MethodTag::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown method {s:?}")))
    }
}

/// A baseline with its parameters. Defaults follow the benchmark budgets:
/// 15000 evaluations for rejection, SMC and the particle filter (300
/// particles over 50 frames), 5000 for Metropolis-Hastings.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodConfig {
    pub method: MethodTag,
    pub grid: GridConfig,
    pub reject: RejectConfig,
    pub smc: SmcConfig,
    pub mh: MhConfig,
    pub pf: PfConfig,
    /// Overrides the per-method seeds when running.
    pub seed: u64,
}

impl MethodConfig {
    pub fn new(method: MethodTag) -> Self {
        MethodConfig {
            method,
            grid: GridConfig::default(),
            reject: RejectConfig::default(),
            smc: SmcConfig::default(),
            mh: MhConfig::default(),
            pf: PfConfig::default(),
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self, k: usize) -> Result<()> {
        match self.method {
            MethodTag::Grid => self.grid.validate(),
            MethodTag::AbcReject => self.reject.validate(),
            MethodTag::AbcSmc => self.smc.validate(),
            MethodTag::McmcMh => self.mh.validate(k),
            MethodTag::ParticleFilter => self.pf.validate(),
        }
    }

    /// Runs the selected method. The particle filter streams the observed
    /// prefix and reports its last frame.
    pub fn run<F: ForwardModel + ?Sized>(
        &self,
        model: &ErrorModel,
        obs: &Observation,
        forward: &F,
    ) -> Result<InferenceResult> {
        match self.method {
            MethodTag::Grid => grid_map(&self.grid, model, obs, forward),
            MethodTag::AbcReject => {
                let cfg = RejectConfig {
                    seed: self.seed,
                    ..self.reject.clone()
                };
                abc_reject(&cfg, model, obs, forward)
            }
            MethodTag::AbcSmc => {
                let cfg = SmcConfig {
                    seed: self.seed,
                    ..self.smc.clone()
                };
                abc_smc(&cfg, model, obs, forward)
            }
            MethodTag::McmcMh => {
                let cfg = MhConfig {
                    seed: self.seed,
                    ..self.mh.clone()
                };
                mcmc_mh(&cfg, model, obs, forward)
            }
            MethodTag::ParticleFilter => {
                let cfg = PfConfig {
                    seed: self.seed,
                    ..self.pf.clone()
                };
                let mut frames = particle_filter(&cfg, model, obs, forward)?;
                Ok(frames.pop().expect("at least one frame"))
            }
        }
    }
}
