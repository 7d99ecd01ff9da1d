//! Feed-forward regression network trained by mini-batch SGD.
//!
//! Hidden layers use ReLU, the output layer is linear and the loss is the mean
//! squared error over samples and outputs. Inputs and targets are standardized
//! with statistics from the training split only.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    sizes: Vec<usize>,
    /// Per layer, row-major `out × in`.
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
}

impl Mlp {
    /// He-uniform weights for ReLU layers, Glorot-uniform for the output layer, zero biases.
    pub fn new(sizes: &[usize], rng: &mut impl Rng) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::InvalidArgument("layer sizes must be positive with at least input and output".into()));
        }
        let layers = sizes.len() - 1;
        let mut weights = Vec::with_capacity(layers);
        let mut biases = Vec::with_capacity(layers);
        for l in 0..layers {
            let (fan_in, fan_out) = (sizes[l], sizes[l + 1]);
            let limit = if l + 1 < layers {
                (6.0 / fan_in as f64).sqrt()
            } else {
                (6.0 / (fan_in + fan_out) as f64).sqrt()
            };
            weights.push((0..fan_in * fan_out).map(|_| rng.random_range(-limit..limit)).collect());
            biases.push(vec![0.0; fan_out]);
        }
        Ok(Mlp {
            sizes: sizes.to_vec(),
            weights,
            biases,
        })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.iter().chain(&self.biases).map(Vec::len).sum()
    }

    /// Parameters flattened layer by layer, weights before biases.
    pub fn parameters(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.parameter_count());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            p.extend_from_slice(w);
            p.extend_from_slice(b);
        }
        p
    }

    pub fn set_parameters(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.parameter_count() {
            return Err(Error::Dimension {
                what: "network parameters",
                expected: self.parameter_count(),
                got: params.len(),
            });
        }
        let mut at = 0;
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            let (nw, nb) = (w.len(), b.len());
            w.copy_from_slice(&params[at..at + nw]);
            at += nw;
            b.copy_from_slice(&params[at..at + nb]);
            at += nb;
        }
        Ok(())
    }

    fn is_finite(&self) -> bool {
        self.weights.iter().chain(&self.biases).flatten().all(|v| v.is_finite())
    }

    /// Activations of every layer, input first.
    fn activations(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let layers = self.weights.len();
        let mut acts = Vec::with_capacity(layers + 1);
        acts.push(x.to_vec());
        for l in 0..layers {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let a = &acts[l];
            let w = &self.weights[l];
            let mut z = self.biases[l].clone();
            for (o, zo) in z.iter_mut().enumerate() {
                let row = &w[o * n_in..(o + 1) * n_in];
                *zo += row.iter().zip(a).map(|(p, q)| p * q).sum::<f64>();
            }
            debug_assert_eq!(z.len(), n_out);
            if l + 1 < layers {
                for v in &mut z {
                    *v = v.max(0.0);
                }
            }
            acts.push(z);
        }
        acts
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.activations(x).pop().expect("network has an output layer")
    }

    /// Mean squared error over `xs`/`ys` and its gradient in [`Mlp::parameters`] order.
    pub fn loss_gradient(&self, xs: &[Vec<f64>], ys: &[Vec<f64>]) -> (f64, Vec<f64>) {
        let mut grads: Vec<(Vec<f64>, Vec<f64>)> = self
            .weights
            .iter()
            .zip(&self.biases)
            .map(|(w, b)| (vec![0.0; w.len()], vec![0.0; b.len()]))
            .collect();
        let n_out = *self.sizes.last().expect("sizes nonempty");
        let scale = 1.0 / (xs.len() * n_out) as f64;
        let mut loss = 0.0;
        let layers = self.weights.len();
        for (x, y) in xs.iter().zip(ys) {
            let acts = self.activations(x);
            let mut delta: Vec<f64> = acts[layers].iter().zip(y).map(|(p, t)| p - t).collect();
            loss += delta.iter().map(|d| d * d).sum::<f64>();
            for d in &mut delta {
                *d *= 2.0 * scale;
            }
            for l in (0..layers).rev() {
                let n_in = self.sizes[l];
                let a = &acts[l];
                let (gw, gb) = &mut grads[l];
                for (o, &d) in delta.iter().enumerate() {
                    if d != 0.0 {
                        gb[o] += d;
                        for (g, v) in gw[o * n_in..(o + 1) * n_in].iter_mut().zip(a) {
                            *g += d * v;
                        }
                    }
                }
                if l > 0 {
                    let w = &self.weights[l];
                    let mut prev = vec![0.0; n_in];
                    for (o, &d) in delta.iter().enumerate() {
                        if d != 0.0 {
                            for (p, wv) in prev.iter_mut().zip(&w[o * n_in..(o + 1) * n_in]) {
                                *p += d * wv;
                            }
                        }
                    }
                    for (p, v) in prev.iter_mut().zip(a) {
                        if *v <= 0.0 {
                            *p = 0.0;
                        }
                    }
                    delta = prev;
                }
            }
        }
        let mut flat = Vec::with_capacity(self.parameter_count());
        for (gw, gb) in grads {
            flat.extend(gw);
            flat.extend(gb);
        }
        (loss * scale, flat)
    }
}

/// Per-column affine map to zero mean and unit variance. Constant columns
/// have scale 0: they map to zero and invert to their mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(rows: &[&Vec<f64>]) -> Self {
        let dim = rows.first().map_or(0, |r| r.len());
        let n = rows.len() as f64;
        let mut mean = vec![0.0; dim];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(r.iter()) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= n;
        }
        let mut scale = vec![0.0; dim];
        for r in rows {
            for ((s, v), m) in scale.iter_mut().zip(r.iter()).zip(&mean) {
                *s += (v - m) * (v - m) / n;
            }
        }
        // Spread at rounding level counts as constant.
        for (s, m) in scale.iter_mut().zip(&mean) {
            let floor = 1e-12 * (1.0 + m.abs());
            *s = if s.sqrt() > floor { s.sqrt() } else { 0.0 };
        }
        Standardizer { mean, scale }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((v, m), s)| if *s > 0.0 { (v - m) / s } else { 0.0 })
            .collect()
    }

    pub fn invert(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((v, m), s)| if *s > 0.0 { v * s + m } else { *m })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    /// Candidates tried in order; the lowest validation error wins, ties to the earlier one.
    pub learning_rates: Vec<f64>,
    pub momentum: f64,
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            hidden: vec![16, 32, 100],
            epochs: 500,
            batch_size: 32,
            learning_rates: vec![1e-3, 1e-2, 1e-4],
            momentum: 0.9,
            validation_fraction: 0.2,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateNet {
    pub net: Mlp,
    pub input: Standardizer,
    pub output: Standardizer,
    pub learning_rate: f64,
    /// Training loss of the final epoch, standardized units.
    pub train_loss: f64,
    /// Validation mean squared error, standardized units.
    pub validation_mse: f64,
}

impl SurrogateNet {
    pub fn predict(&self, x: &[f64]) -> Vec<f64> {
        self.output.invert(&self.net.forward(&self.input.apply(x)))
    }
}

/// Standardized MSE; constant target columns are predicted exactly.
fn mse(net: &Mlp, output: &Standardizer, xs: &[Vec<f64>], ys: &[Vec<f64>]) -> f64 {
    let n_out = ys.first().map_or(1, Vec::len).max(1);
    let total: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| {
            net.forward(x)
                .iter()
                .zip(y)
                .zip(&output.scale)
                .filter(|(_, s)| **s > 0.0)
                .map(|((p, t), _)| (p - t) * (p - t))
                .sum::<f64>()
        })
        .sum();
    total / (xs.len().max(1) * n_out) as f64
}

/// Train one network per candidate learning rate and keep the best on the
/// validation split.
pub fn train_surrogate(inputs: &[Vec<f64>], targets: &[Vec<f64>], config: &TrainConfig) -> Result<SurrogateNet> {
    if inputs.len() != targets.len() {
        return Err(Error::Dimension {
            what: "training targets",
            expected: inputs.len(),
            got: targets.len(),
        });
    }
    if inputs.len() < 2 {
        return Err(Error::InvalidArgument("training needs at least 2 samples".into()));
    }
    if config.learning_rates.is_empty() || config.batch_size == 0 || config.epochs == 0 {
        return Err(Error::InvalidArgument("need learning rates, a positive batch size and epochs".into()));
    }
    if !(0.0..1.0).contains(&config.validation_fraction) {
        return Err(Error::InvalidArgument("validation fraction must be in [0, 1)".into()));
    }
    let n_in = inputs[0].len();
    let n_out = targets[0].len();
    if inputs.iter().any(|x| x.len() != n_in) || targets.iter().any(|y| y.len() != n_out) {
        return Err(Error::InvalidArgument("ragged training data".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    order.shuffle(&mut rng);
    let n_val = ((inputs.len() as f64 * config.validation_fraction).round() as usize).clamp(1, inputs.len() - 1);
    let (val_idx, train_idx) = order.split_at(n_val);

    let input = Standardizer::fit(&train_idx.iter().map(|&i| &inputs[i]).collect::<Vec<_>>());
    let output = Standardizer::fit(&train_idx.iter().map(|&i| &targets[i]).collect::<Vec<_>>());
    let xs: Vec<Vec<f64>> = train_idx.iter().map(|&i| input.apply(&inputs[i])).collect();
    let ys: Vec<Vec<f64>> = train_idx.iter().map(|&i| output.apply(&targets[i])).collect();
    let vx: Vec<Vec<f64>> = val_idx.iter().map(|&i| input.apply(&inputs[i])).collect();
    let vy: Vec<Vec<f64>> = val_idx.iter().map(|&i| output.apply(&targets[i])).collect();

    let mut sizes = vec![n_in];
    sizes.extend(&config.hidden);
    sizes.push(n_out);
    let init_seed: u64 = rng.random();
    let shuffle_seed: u64 = rng.random();

    let runs: Vec<Result<(Mlp, f64, f64)>> = config
        .learning_rates
        .par_iter()
        .map(|&lr| {
            let mut init = ChaCha8Rng::seed_from_u64(init_seed);
            let net = Mlp::new(&sizes, &mut init)?;
            let mut shuffle = ChaCha8Rng::seed_from_u64(shuffle_seed);
            let (net, loss) = sgd(net, &xs, &ys, lr, config, &mut shuffle)?;
            let val = mse(&net, &output, &vx, &vy);
            if !val.is_finite() {
                return Err(Error::Divergence {
                    learning_rate: lr,
                    epoch: config.epochs,
                });
            }
            Ok((net, loss, val))
        })
        .collect();

    let mut best: Option<(usize, Mlp, f64, f64)> = None;
    let mut first_error = None;
    for (i, run) in runs.into_iter().enumerate() {
        match run {
            Ok((net, loss, val)) => {
                if best.as_ref().is_none_or(|b| val < b.3) {
                    best = Some((i, net, loss, val));
                }
            }
            Err(e) => {
                first_error.get_or_insert(e);
            }
        }
    }
    match best {
        Some((i, net, train_loss, validation_mse)) => Ok(SurrogateNet {
            net,
            input,
            output,
            learning_rate: config.learning_rates[i],
            train_loss,
            validation_mse,
        }),
        None => Err(first_error.expect("every run failed")),
    }
}

fn sgd(
    mut net: Mlp,
    xs: &[Vec<f64>],
    ys: &[Vec<f64>],
    lr: f64,
    config: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(Mlp, f64)> {
    let mut params = net.parameters();
    let mut velocity = vec![0.0; params.len()];
    let mut order: Vec<usize> = (0..xs.len()).collect();
    let mut epoch_loss = f64::NAN;
    for epoch in 0..config.epochs {
        order.shuffle(rng);
        let mut total = 0.0;
        for batch in order.chunks(config.batch_size) {
            let bx: Vec<Vec<f64>> = batch.iter().map(|&i| xs[i].clone()).collect();
            let by: Vec<Vec<f64>> = batch.iter().map(|&i| ys[i].clone()).collect();
            let (loss, grad) = net.loss_gradient(&bx, &by);
            total += loss * batch.len() as f64;
            for ((p, v), g) in params.iter_mut().zip(velocity.iter_mut()).zip(&grad) {
                *v = config.momentum * *v - lr * g;
                *p += *v;
            }
            net.set_parameters(&params)?;
        }
        epoch_loss = total / xs.len() as f64;
        if !epoch_loss.is_finite() || !net.is_finite() {
            return Err(Error::Divergence {
                learning_rate: lr,
                epoch,
            });
        }
    }
    Ok((net, epoch_loss))
}
