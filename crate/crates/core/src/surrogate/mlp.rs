use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;

use crate::error::{Error, Result};
use crate::forward::ForwardModel;
use crate::model::{LatentPoint, Observation};

/// Points per block in fused residual scoring.
const SCORE_BLOCK: usize = 1024;

/// Hyperbolic tangent through a single `exp`; accurate to a few ulps in
/// absolute terms and roughly twice as fast as `f64::tanh`.
#[inline]
pub(crate) fn tanh(x: f64) -> f64 {
    if x.abs() > 19.0 {
        return x.signum();
    }
    let e = (2.0 * x).exp();
    (e - 1.0) / (e + 1.0)
}

/// Per-dimension affine map between data units and `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Scaler {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Scaler {
    /// Identity map (`lo = -1`, `hi = 1`).
    pub fn identity(dim: usize) -> Self {
        Scaler {
            lo: vec![-1.0; dim],
            hi: vec![1.0; dim],
        }
    }

    /// Bounds spanning the given rows.
    pub fn fit<'a, I>(dim: usize, rows: I) -> Self
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        let mut lo = vec![f64::INFINITY; dim];
        let mut hi = vec![f64::NEG_INFINITY; dim];
        for row in rows {
            for ((l, h), v) in lo.iter_mut().zip(hi.iter_mut()).zip(row) {
                *l = l.min(*v);
                *h = h.max(*v);
            }
        }
        Scaler { lo, hi }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    /// Widens every dimension symmetrically to a half-width of at least
    /// `min_half`. Keeps nearly constant outputs from dominating a loss
    /// measured in normalized units.
    pub fn widen_to(&mut self, min_half: f64) {
        for (l, h) in self.lo.iter_mut().zip(self.hi.iter_mut()) {
            let (mid, half) = ((*l + *h) / 2.0, (*h - *l) / 2.0);
            if half < min_half {
                *l = mid - min_half;
                *h = mid + min_half;
            }
        }
    }

    fn mid_half(&self, i: usize) -> (f64, f64) {
        let half = (self.hi[i] - self.lo[i]) / 2.0;
        // Constant columns keep unit scale.
        let half = if half > 1e-12 { half } else { 1.0 };
        ((self.hi[i] + self.lo[i]) / 2.0, half)
    }

    /// Half-widths, i.e. data units per normalized unit.
    pub fn half_widths(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self.mid_half(i).1).collect()
    }

    pub fn to_unit(&self, i: usize, v: f64) -> f64 {
        let (m, h) = self.mid_half(i);
        (v - m) / h
    }

    pub fn from_unit(&self, i: usize, v: f64) -> f64 {
        let (m, h) = self.mid_half(i);
        v * h + m
    }
}

/// Fully connected network: tanh on hidden layers, identity on the output,
/// with input/output rescaling to `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    /// `weights[l]` has shape `(sizes[l + 1], sizes[l])`.
    pub(crate) weights: Vec<Array2<f64>>,
    pub(crate) biases: Vec<Array1<f64>>,
    pub(crate) input_scale: Scaler,
    pub(crate) output_scale: Scaler,
}

/// Parameter gradients, same shapes as the network's parameters.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

fn check_sizes(sizes: &[usize]) -> Result<()> {
    if sizes.len() < 2 || sizes.iter().any(|&s| s == 0) {
        return Err(Error::invalid(format!("bad layer sizes {sizes:?}")));
    }
    Ok(())
}

impl Mlp {
    /// All-zero parameters.
    pub fn zeros(sizes: &[usize]) -> Result<Self> {
        check_sizes(sizes)?;
        let weights = sizes.windows(2).map(|w| Array2::zeros((w[1], w[0]))).collect();
        let biases = sizes[1..].iter().map(|&n| Array1::zeros(n)).collect();
        Ok(Mlp {
            sizes: sizes.to_vec(),
            weights,
            biases,
            input_scale: Scaler::identity(sizes[0]),
            output_scale: Scaler::identity(*sizes.last().unwrap()),
        })
    }

    /// Glorot-uniform weights, zero biases.
    pub fn random<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(sizes)?;
        for w in &mut net.weights {
            let (out, inp) = w.dim();
            let a = (6.0 / (inp + out) as f64).sqrt();
            w.mapv_inplace(|_| rng.gen_range(-a..a));
        }
        Ok(net)
    }

    /// Build from explicit parameters (row-major `out x in` weights).
    pub fn from_parameters(
        sizes: &[usize],
        weights: Vec<Array2<f64>>,
        biases: Vec<Array1<f64>>,
    ) -> Result<Self> {
        let mut net = Self::zeros(sizes)?;
        if weights.len() != net.weights.len() || biases.len() != net.biases.len() {
            return Err(Error::invalid("parameter count does not match layer sizes"));
        }
        for (l, (w, b)) in weights.iter().zip(&biases).enumerate() {
            if w.dim() != net.weights[l].dim() || b.len() != net.biases[l].len() {
                return Err(Error::invalid(format!("layer {l} parameter shape mismatch")));
            }
        }
        net.weights = weights;
        net.biases = biases;
        net.check_finite()?;
        Ok(net)
    }

    pub fn set_scaling(&mut self, input: Scaler, output: Scaler) -> Result<()> {
        if input.dim() != self.input_dim() || output.dim() != self.output_dim() {
            return Err(Error::invalid("scaler dimensions do not match the network"));
        }
        self.input_scale = input;
        self.output_scale = output;
        Ok(())
    }

    pub fn input_scale(&self) -> &Scaler {
        &self.input_scale
    }

    pub fn output_scale(&self) -> &Scaler {
        &self.output_scale
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[Array2<f64>] {
        &self.weights
    }

    pub fn biases(&self) -> &[Array1<f64>] {
        &self.biases
    }

    pub fn num_parameters(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>()
            + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    /// Parameters flattened layer by layer (weights row-major, then biases).
    pub fn parameters(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_parameters());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.iter());
            out.extend(b.iter());
        }
        out
    }

    pub fn set_parameters(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.num_parameters() {
            return Err(Error::DimensionMismatch {
                expected: self.num_parameters(),
                found: params.len(),
            });
        }
        let mut it = params.iter();
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            w.iter_mut().for_each(|v| *v = *it.next().unwrap());
            b.iter_mut().for_each(|v| *v = *it.next().unwrap());
        }
        Ok(())
    }

    pub(crate) fn check_finite(&self) -> Result<()> {
        let finite = self.weights.iter().all(|w| w.iter().all(|v| v.is_finite()))
            && self.biases.iter().all(|b| b.iter().all(|v| v.is_finite()));
        if finite {
            Ok(())
        } else {
            Err(Error::NonFinite("network parameters"))
        }
    }

    pub(crate) fn normalize_inputs(&self, xs: &[LatentPoint]) -> Result<Array2<f64>> {
        let d = self.input_dim();
        let mut a = Array2::zeros((xs.len(), d));
        for (mut row, x) in a.rows_mut().into_iter().zip(xs) {
            if x.dim() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    found: x.dim(),
                });
            }
            for (i, (r, v)) in row.iter_mut().zip(x.coords()).enumerate() {
                *r = self.input_scale.to_unit(i, *v);
            }
        }
        Ok(a)
    }

    /// Forward pass in normalized units, keeping every layer's activation
    /// (`acts[0]` is the input).
    pub(crate) fn forward_activations(&self, input: Array2<f64>) -> Vec<Array2<f64>> {
        let mut acts = Vec::with_capacity(self.weights.len() + 1);
        acts.push(input);
        let last = self.weights.len() - 1;
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = acts[l].dot(&w.t());
            z += b;
            if l < last {
                z.mapv_inplace(tanh);
            }
            acts.push(z);
        }
        acts
    }

    /// Activation of the last hidden layer (the input if there is none).
    fn last_hidden(&self, input: Array2<f64>) -> Array2<f64> {
        let last = self.weights.len() - 1;
        let mut a = input;
        for (w, b) in self.weights[..last].iter().zip(&self.biases[..last]) {
            let mut z = a.dot(&w.t());
            z += b;
            z.mapv_inplace(tanh);
            a = z;
        }
        a
    }

    /// Squared data-unit residual between the observed prefix of `obs` and
    /// each prediction, computed without materializing the outputs.
    ///
    /// With per-output half-widths `h`, normalized targets `t = unit(y) - b`
    /// and last hidden activation `a`, the residual is
    /// `sum_i h_i^2 (t_i - (W a)_i)^2`. When more outputs are compared than the
    /// last hidden layer is wide and the batch amortizes building it, the
    /// quadratic form `k - 2 c.a + a^T G a` with `G = W^T diag(h^2) W` is
    /// cheaper.
    pub fn residual_sq_batch(&self, xs: &[LatentPoint], obs: &Observation) -> Result<Vec<f64>> {
        let m = obs.compared_len();
        if m > self.output_dim() {
            return Err(Error::DimensionMismatch {
                expected: m,
                found: self.output_dim(),
            });
        }
        let last = self.weights.len() - 1;
        let w = self.weights[last].slice(s![..m, ..]);
        let bias = &self.biases[last];
        let halves = self.output_scale.half_widths();
        let wt: Vec<f64> = halves[..m].iter().map(|h| h * h).collect();
        let t: Array1<f64> = obs
            .compared()
            .iter()
            .enumerate()
            .map(|(i, y)| self.output_scale.to_unit(i, *y) - bias[i])
            .collect();
        let hidden = w.ncols();
        let quad = m > hidden && xs.len() * (m - hidden) > m * hidden;
        let (gram, c, k) = if quad {
            let mut dw = w.to_owned();
            for (mut row, wi) in dw.rows_mut().into_iter().zip(&wt) {
                row *= *wi;
            }
            let gram = w.t().dot(&dw);
            let c = dw.t().dot(&t);
            let k: f64 = t.iter().zip(&wt).map(|(ti, wi)| wi * ti * ti).sum();
            (gram, c, k)
        } else {
            (Array2::zeros((0, 0)), Array1::zeros(0), 0.0)
        };

        let mut out = Vec::with_capacity(xs.len());
        for block in xs.chunks(SCORE_BLOCK) {
            let a = self.last_hidden(self.normalize_inputs(block)?);
            if quad {
                let ag = a.dot(&gram);
                let ac = a.dot(&c);
                for ((row, grow), lin) in a.rows().into_iter().zip(ag.rows()).zip(&ac) {
                    let q: f64 = row.iter().zip(grow.iter()).map(|(x, y)| x * y).sum();
                    out.push((k - 2.0 * lin + q).max(0.0));
                }
            } else {
                let z = a.dot(&w.t());
                for row in z.rows() {
                    let r: f64 = row
                        .iter()
                        .zip(t.iter().zip(&wt))
                        .map(|(zi, (ti, wi))| wi * (ti - zi) * (ti - zi))
                        .sum();
                    out.push(r);
                }
            }
        }
        if out.iter().any(|r| !r.is_finite()) {
            return Err(Error::NonFinite("prediction"));
        }
        Ok(out)
    }

    /// Output for normalized inputs, in normalized output units.
    pub fn forward_normalized(&self, input: ArrayView2<f64>) -> Array2<f64> {
        self.forward_activations(input.to_owned()).pop().unwrap()
    }

    /// Batched prediction in data units.
    pub fn predict(&self, xs: &[LatentPoint]) -> Result<Vec<Vec<f64>>> {
        let out = self.forward_normalized(self.normalize_inputs(xs)?.view());
        Ok(out
            .rows()
            .into_iter()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .map(|(i, v)| self.output_scale.from_unit(i, *v))
                    .collect()
            })
            .collect())
    }

    /// Mean over the batch of `||f(x) - t||^2` and its parameter gradient,
    /// both in normalized units.
    pub fn loss_and_gradient(
        &self,
        inputs: ArrayView2<f64>,
        targets: ArrayView2<f64>,
    ) -> (f64, Gradients) {
        let batch = inputs.nrows() as f64;
        let acts = self.forward_activations(inputs.to_owned());
        let out = acts.last().unwrap();
        let diff = out - &targets;
        let loss = diff.iter().map(|d| d * d).sum::<f64>() / batch;

        let n = self.weights.len();
        let mut gw = Vec::with_capacity(n);
        let mut gb = Vec::with_capacity(n);
        let mut delta = diff * (2.0 / batch);
        for l in (0..n).rev() {
            gw.push(delta.t().dot(&acts[l]));
            gb.push(delta.sum_axis(Axis(0)));
            if l > 0 {
                let mut back = delta.dot(&self.weights[l]);
                back.zip_mut_with(&acts[l], |g, a| *g *= 1.0 - a * a);
                delta = back;
            }
        }
        gw.reverse();
        gb.reverse();
        (
            loss,
            Gradients {
                weights: gw,
                biases: gb,
            },
        )
    }

    pub(crate) fn apply_gradient(&mut self, g: &Gradients, lr: f64) {
        for (w, gw) in self.weights.iter_mut().zip(&g.weights) {
            w.scaled_add(-lr, gw);
        }
        for (b, gb) in self.biases.iter_mut().zip(&g.biases) {
            b.scaled_add(-lr, gb);
        }
    }
}

impl Gradients {
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.iter());
            out.extend(b.iter());
        }
        out
    }
}

impl ForwardModel for Mlp {
    fn input_dim(&self) -> usize {
        Mlp::input_dim(self)
    }

    fn output_dim(&self) -> usize {
        Mlp::output_dim(self)
    }

    fn forward_batch(&self, xs: &[LatentPoint]) -> Result<Vec<Vec<f64>>> {
        if xs.is_empty() {
            return Ok(Vec::new());
        }
        self.predict(xs)
    }

    fn residual_sq_batch(&self, xs: &[LatentPoint], obs: &Observation) -> Result<Vec<f64>> {
        Mlp::residual_sq_batch(self, xs, obs)
    }
}
