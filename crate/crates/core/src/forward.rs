//! Forward models: anything mapping latent points to predicted observations.

use std::sync::atomic::{AtomicUsize, Ordering};

use crate::error::{Error, Result};
use crate::model::{residual_sq, LatentPoint, Observation};

/// A simulator or surrogate evaluated in batches.
pub trait ForwardModel: Sync {
    fn input_dim(&self) -> usize;

    fn output_dim(&self) -> usize;

    fn forward_batch(&self, xs: &[LatentPoint]) -> Result<Vec<Vec<f64>>>;

    fn forward(&self, x: &LatentPoint) -> Result<Vec<f64>> {
        let mut out = self.forward_batch(std::slice::from_ref(x))?;
        out.pop().ok_or_else(|| Error::Forward("empty batch result".into()))
    }

    /// Squared residual against the observed prefix of `obs`, per point.
    /// Implementations may fuse this with the forward pass; the result must
    /// match scoring the output of `forward_batch`.
    fn residual_sq_batch(&self, xs: &[LatentPoint], obs: &Observation) -> Result<Vec<f64>> {
        self.forward_batch(xs)?
            .iter()
            .map(|p| residual_sq(obs, p))
            .collect()
    }
}

impl<F: ForwardModel + ?Sized> ForwardModel for &F {
    fn input_dim(&self) -> usize {
        (**self).input_dim()
    }

    fn output_dim(&self) -> usize {
        (**self).output_dim()
    }

    fn forward_batch(&self, xs: &[LatentPoint]) -> Result<Vec<Vec<f64>>> {
        (**self).forward_batch(xs)
    }

    fn residual_sq_batch(&self, xs: &[LatentPoint], obs: &Observation) -> Result<Vec<f64>> {
        (**self).residual_sq_batch(xs, obs)
    }
}

/// Closure-backed forward model.
pub struct FnForward<F> {
    input_dim: usize,
    output_dim: usize,
    f: F,
}

impl<F> FnForward<F>
where
    F: Fn(&[f64]) -> Vec<f64> + Sync,
{
    pub fn new(input_dim: usize, output_dim: usize, f: F) -> Self {
        FnForward {
            input_dim,
            output_dim,
            f,
        }
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        (self.f)(x)
    }
}

impl<F> ForwardModel for FnForward<F>
where
    F: Fn(&[f64]) -> Vec<f64> + Sync,
{
    fn input_dim(&self) -> usize {
        self.input_dim
    }

    fn output_dim(&self) -> usize {
        self.output_dim
    }

    fn forward_batch(&self, xs: &[LatentPoint]) -> Result<Vec<Vec<f64>>> {
        xs.iter()
            .map(|x| {
                if x.dim() != self.input_dim {
                    return Err(Error::DimensionMismatch {
                        expected: self.input_dim,
                        found: x.dim(),
                    });
                }
                let y = (self.f)(x);
                if y.len() != self.output_dim {
                    return Err(Error::Forward(format!(
                        "closure returned {} values, expected {}",
                        y.len(),
                        self.output_dim
                    )));
                }
                Ok(y)
            })
            .collect()
    }
}

/// Wraps a forward model and counts every point it evaluates.
pub struct CountingForward<F> {
    inner: F,
    evals: AtomicUsize,
    calls: AtomicUsize,
}

impl<F: ForwardModel> CountingForward<F> {
    pub fn new(inner: F) -> Self {
        CountingForward {
            inner,
            evals: AtomicUsize::new(0),
            calls: AtomicUsize::new(0),
        }
    }

    /// Points evaluated so far.
    pub fn evals(&self) -> usize {
        self.evals.load(Ordering::Relaxed)
    }

    /// Batch calls made so far.
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }

    pub fn reset(&self) {
        self.evals.store(0, Ordering::Relaxed);
        self.calls.store(0, Ordering::Relaxed);
    }

    pub fn inner(&self) -> &F {
        &self.inner
    }
}

impl<F: ForwardModel> ForwardModel for CountingForward<F> {
    fn input_dim(&self) -> usize {
        self.inner.input_dim()
    }

    fn output_dim(&self) -> usize {
        self.inner.output_dim()
    }

    fn forward_batch(&self, xs: &[LatentPoint]) -> Result<Vec<Vec<f64>>> {
        self.evals.fetch_add(xs.len(), Ordering::Relaxed);
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.inner.forward_batch(xs)
    }

    fn residual_sq_batch(&self, xs: &[LatentPoint], obs: &Observation) -> Result<Vec<f64>> {
        self.evals.fetch_add(xs.len(), Ordering::Relaxed);
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.inner.residual_sq_batch(xs, obs)
    }
}
