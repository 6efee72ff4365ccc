use ndarray::Array2;
use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};

use super::mlp::{Mlp, Scaler};
use crate::error::{Error, Result};
use crate::model::LatentPoint;
use crate::seed;

/// Paired simulator inputs and clean outputs.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub inputs: Vec<LatentPoint>,
    pub targets: Vec<Vec<f64>>,
}

impl Dataset {
    pub fn new(inputs: Vec<LatentPoint>, targets: Vec<Vec<f64>>) -> Result<Self> {
        if inputs.len() != targets.len() {
            return Err(Error::invalid(format!(
                "{} inputs but {} targets",
                inputs.len(),
                targets.len()
            )));
        }
        if let (Some(x0), Some(t0)) = (inputs.first(), targets.first()) {
            let (dx, dt) = (x0.dim(), t0.len());
            if inputs.iter().any(|x| x.dim() != dx) || targets.iter().any(|t| t.len() != dt) {
                return Err(Error::invalid("inconsistent dataset dimensions"));
            }
        }
        Ok(Dataset { inputs, targets })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Std of the Gaussian noise added to every target presentation, in
    /// target units.
    pub epsilon_star: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Refit the input/output scalers to the dataset before training.
    pub fit_scaling: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epsilon_star: 0.02,
            learning_rate: 1e-3,
            batch_size: 64,
            epochs: 100,
            seed: 0,
            fit_scaling: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Mean per-sample squared error (normalized units) for every epoch.
    pub epoch_losses: Vec<f64>,
}

impl TrainReport {
    pub fn final_loss(&self) -> Option<f64> {
        self.epoch_losses.last().copied()
    }
}

/// Mini-batch SGD on squared error against noise-corrupted targets.
///
/// Every time a sample is visited its target is redrawn as `z + eta`,
/// `eta ~ Normal(0, epsilon_star^2 I)`, so the network regresses onto the mean
/// of the corrupted outputs. The whole run is determined by `cfg.seed`.
pub fn train_sgd(net: &mut Mlp, data: &Dataset, cfg: &TrainConfig) -> Result<TrainReport> {
    if data.is_empty() {
        return Err(Error::Empty("training dataset"));
    }
    if !(cfg.learning_rate > 0.0) || cfg.batch_size == 0 || cfg.epochs == 0 {
        return Err(Error::invalid("learning rate, batch size and epochs must be positive"));
    }
    if !(cfg.epsilon_star >= 0.0 && cfg.epsilon_star.is_finite()) {
        return Err(Error::invalid("epsilon_star must be finite and non-negative"));
    }
    let (din, dout) = (net.input_dim(), net.output_dim());
    if data.inputs[0].dim() != din || data.targets[0].len() != dout {
        return Err(Error::DimensionMismatch {
            expected: din,
            found: data.inputs[0].dim(),
        });
    }

    if cfg.fit_scaling {
        let input = Scaler::fit(din, data.inputs.iter().map(|x| x.coords()));
        let mut output = Scaler::fit(dout, data.targets.iter().map(|t| t.as_slice()));
        output.widen_to(0.25 * output.half_widths().iter().cloned().fold(0.0, f64::max));
        net.set_scaling(input, output)?;
    }

    let n = data.len();
    let x_norm = net.normalize_inputs(&data.inputs)?;
    let mut t_norm = Array2::zeros((n, dout));
    for (mut row, t) in t_norm.rows_mut().into_iter().zip(&data.targets) {
        for (i, (r, v)) in row.iter_mut().zip(t).enumerate() {
            *r = net.output_scale.to_unit(i, *v);
        }
    }
    // Noise drawn in target units, expressed in normalized units.
    let noise_scale: Vec<f64> = net
        .output_scale
        .half_widths()
        .iter()
        .map(|h| cfg.epsilon_star / h)
        .collect();

    let mut rng = seed::rng(cfg.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut losses = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let bx = x_norm.select(ndarray::Axis(0), chunk);
            let mut bt = t_norm.select(ndarray::Axis(0), chunk);
            if cfg.epsilon_star > 0.0 {
                for mut row in bt.rows_mut() {
                    for (v, s) in row.iter_mut().zip(&noise_scale) {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        *v += s * z;
                    }
                }
            }
            let (loss, grad) = net.loss_and_gradient(bx.view(), bt.view());
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch, loss });
            }
            epoch_loss += loss * chunk.len() as f64;
            net.apply_gradient(&grad, cfg.learning_rate);
        }
        let mean = epoch_loss / n as f64;
        if !mean.is_finite() || net.check_finite().is_err() {
            return Err(Error::Divergence { epoch, loss: mean });
        }
        losses.push(mean);
    }
    Ok(TrainReport {
        epoch_losses: losses,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn fd_check(net: &Mlp, x: &Array2<f64>, t: &Array2<f64>) -> f64 {
        let (_, g) = net.loss_and_gradient(x.view(), t.view());
        let analytic = g.flatten();
        let params = net.parameters();
        let h = 1e-5;
        let mut probe = net.clone();
        let mut worst: f64 = 0.0;
        for i in 0..params.len() {
            let mut p = params.clone();
            p[i] += h;
            probe.set_parameters(&p).unwrap();
            let up = probe.loss_and_gradient(x.view(), t.view()).0;
            p[i] -= 2.0 * h;
            probe.set_parameters(&p).unwrap();
            let down = probe.loss_and_gradient(x.view(), t.view()).0;
            let numeric = (up - down) / (2.0 * h);
            let denom = analytic[i].abs().max(numeric.abs()).max(1e-6);
            worst = worst.max((analytic[i] - numeric).abs() / denom);
        }
        worst
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let net = Mlp::random(&[2, 3, 2], &mut rng).unwrap();
            let x = Array2::from_shape_fn((4, 2), |_| rng.gen_range(-1.0..1.0));
            let t = Array2::from_shape_fn((4, 2), |_| rng.gen_range(-1.0..1.0));
            let err = fd_check(&net, &x, &t);
            assert!(err < 1e-4, "max relative error {err}");
        }
    }

    #[test]
    fn realizable_linear_data_fits_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let inputs: Vec<LatentPoint> = (0..200)
            .map(|_| vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)].into())
            .collect();
        let targets: Vec<Vec<f64>> = inputs
            .iter()
            .map(|x| vec![0.5 * x[0] - 0.3 * x[1] + 0.1, -0.2 * x[0] + 0.7 * x[1]])
            .collect();
        let data = Dataset::new(inputs, targets).unwrap();
        let mut net = Mlp::zeros(&[2, 2]).unwrap();
        let cfg = TrainConfig {
            epsilon_star: 0.0,
            learning_rate: 0.05,
            batch_size: 16,
            epochs: 400,
            seed: 2,
            fit_scaling: false,
        };
        let report = train_sgd(&mut net, &data, &cfg).unwrap();
        assert!(report.final_loss().unwrap() < 1e-6);
        assert!(report.epoch_losses[0] > report.final_loss().unwrap());
    }

    #[test]
    fn noisy_targets_regress_to_clean_mean() {
        // One sample presented many times: prediction converges to the clean
        // target, within the Monte Carlo error of the averaged noise.
        let data = Dataset::new(vec![vec![0.2].into()], vec![vec![1.5]]).unwrap();
        let mut net = Mlp::zeros(&[1, 1]).unwrap();
        let eps = 0.3;
        let epochs = 20_000;
        let cfg = TrainConfig {
            epsilon_star: eps,
            learning_rate: 1e-3,
            batch_size: 1,
            epochs,
            seed: 9,
            fit_scaling: false,
        };
        train_sgd(&mut net, &data, &cfg).unwrap();
        let pred = net.predict(&[vec![0.2].into()]).unwrap()[0][0];
        // SGD with step lr averages roughly 1/(2 lr (1 + x^2)) presentations.
        let effective = (1.0f64 / (2.0 * 1e-3 * (1.0 + 0.04))).min(epochs as f64);
        assert!(
            (pred - 1.5).abs() < 3.0 * eps / effective.sqrt(),
            "prediction {pred}"
        );
    }

    #[test]
    fn divergence_is_reported() {
        let data = Dataset::new(vec![vec![1.0].into()], vec![vec![1e6]]).unwrap();
        let mut net = Mlp::zeros(&[1, 1]).unwrap();
        let cfg = TrainConfig {
            epsilon_star: 0.0,
            learning_rate: 10.0,
            batch_size: 1,
            epochs: 200,
            seed: 0,
            fit_scaling: false,
        };
        assert!(matches!(
            train_sgd(&mut net, &data, &cfg),
            Err(Error::Divergence { .. })
        ));
    }

    #[test]
    fn seeded_training_is_reproducible() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let inputs: Vec<LatentPoint> =
            (0..50).map(|_| vec![rng.gen_range(-1.0..1.0)].into()).collect();
        let targets: Vec<Vec<f64>> = inputs.iter().map(|x| vec![x[0].sin(), x[0] * x[0]]).collect();
        let data = Dataset::new(inputs, targets).unwrap();
        let init = Mlp::random(&[1, 8, 2], &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let cfg = TrainConfig {
            epochs: 5,
            ..TrainConfig::default()
        };
        let (mut a, mut b) = (init.clone(), init);
        let ra = train_sgd(&mut a, &data, &cfg).unwrap();
        let rb = train_sgd(&mut b, &data, &cfg).unwrap();
        assert_eq!(ra, rb);
        assert_eq!(a, b);
    }

    #[test]
    fn empty_dataset_rejected() {
        let mut net = Mlp::zeros(&[1, 1]).unwrap();
        assert!(train_sgd(&mut net, &Dataset::default(), &TrainConfig::default()).is_err());
    }
}
