use std::time::Instant;

use crate::error::{Error, Result};
use crate::forward::ForwardModel;
use crate::model::{score_batch, ErrorModel, InferenceResult, LatentPoint, Observation, PriorBox, SlackScore};

/// Exhaustive grid over the prior box.
#[derive(Debug, Clone, PartialEq)]
pub struct GridConfig {
    /// Target cell width; the actual width per axis is `2r / ceil(2r / h)`.
    pub spacing: f64,
    pub max_cells: usize,
    /// Points scored per forward call.
    pub chunk: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            spacing: 0.01,
            max_cells: 4_000_000,
            chunk: 16_384,
        }
    }
}

impl GridConfig {
    pub fn with_spacing(spacing: f64) -> Self {
        GridConfig {
            spacing,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.spacing > 0.0 && self.spacing.is_finite()) {
            return Err(Error::invalid(format!("grid spacing must be positive, got {}", self.spacing)));
        }
        if self.max_cells == 0 || self.chunk == 0 {
            return Err(Error::invalid("grid cap and chunk size must be positive"));
        }
        Ok(())
    }
}

/// Cells per axis. The small slack keeps `2r / h` that lands on an integer
/// from rounding up to an extra cell.
pub fn cells_per_axis(prior: &PriorBox, spacing: f64) -> Vec<usize> {
    prior
        .radius()
        .iter()
        .map(|r| ((2.0 * r / spacing - 1e-9).ceil() as usize).max(1))
        .collect()
}

/// Total cell count, saturating on overflow.
pub fn cell_count(prior: &PriorBox, spacing: f64) -> usize {
    cells_per_axis(prior, spacing)
        .iter()
        .fold(1usize, |acc, &n| acc.saturating_mul(n))
}

fn cell_center(prior: &PriorBox, counts: &[usize], mut index: usize) -> LatentPoint {
    let mut x = vec![0.0; counts.len()];
    for (j, &n) in counts.iter().enumerate().rev() {
        let i = index % n;
        index /= n;
        let (c, r) = (prior.center()[j], prior.radius()[j]);
        let w = 2.0 * r / n as f64;
        x[j] = c - r + (i as f64 + 0.5) * w;
    }
    LatentPoint::new(x)
}

/// Scores every cell center and returns the best. Cells are visited in
/// row-major order with the last axis fastest; ties keep the first cell.
pub fn grid_map<F: ForwardModel + ?Sized>(
    cfg: &GridConfig,
    model: &ErrorModel,
    obs: &Observation,
    forward: &F,
) -> Result<InferenceResult> {
    cfg.validate()?;
    let start = Instant::now();
    let counts = cells_per_axis(&model.prior, cfg.spacing);
    let total = cell_count(&model.prior, cfg.spacing);
    if total > cfg.max_cells {
        return Err(Error::GridTooLarge {
            cells: total,
            cap: cfg.max_cells,
        });
    }
    let mut best: Option<(LatentPoint, SlackScore)> = None;
    let mut chunk = Vec::with_capacity(cfg.chunk.min(total));
    let mut next = 0;
    while next < total {
        let end = (next + cfg.chunk).min(total);
        chunk.clear();
        chunk.extend((next..end).map(|i| cell_center(&model.prior, &counts, i)));
        let scores = score_batch(&chunk, obs, model, forward)?;
        for (x, s) in chunk.iter().zip(scores) {
            if best.as_ref().map_or(true, |(_, b)| s.log_posterior > b.log_posterior) {
                best = Some((x.clone(), s));
            }
        }
        next = end;
    }
    let (x, score) = best.expect("grid has at least one cell");
    let mut result = InferenceResult::new(x, score, total);
    result.wall_time = start.elapsed();
    Ok(result)
}
