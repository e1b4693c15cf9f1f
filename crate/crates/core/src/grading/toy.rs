//! Small shared-trunk classifier with one 4-way head per task.
//!
//! Trunk: dense layers with leaky-ReLU (slope 0.01). Heads: one linear layer per task,
//! followed by softmax. Inputs are standardized with statistics fitted at training time.

use super::checkpoint::{Checkpoint, CheckpointError, Tensor};
use super::{
    loss_gradient, weighted_ce_loss, Adadelta, ClassWeights, GradingError, OneHotTargets,
    Reduction, TaskProbabilities, CLASSES, TASKS,
};
use crate::anatomy::Site;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const LEAKY_SLOPE: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub seed: u64,
    pub rho: f64,
    pub epsilon: f64,
    pub learning_rate: f64,
    pub hidden_sizes: Vec<usize>,
    pub batch_size: usize,
    pub reduction: Reduction,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            seed: 42,
            rho: Adadelta::DEFAULT_RHO,
            epsilon: Adadelta::DEFAULT_EPSILON,
            learning_rate: 1.0,
            hidden_sizes: vec![64, 32],
            batch_size: 16,
            reduction: Reduction::Sum,
        }
    }
}

impl TrainConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, GradingError> {
        let cfg: TrainConfig =
            toml::from_str(text).map_err(|e| GradingError::BadConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, GradingError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<(), GradingError> {
        let bad = |m: &str| Err(GradingError::BadConfig(m.to_string()));
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return bad("rho must lie in (0, 1)");
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return bad("epsilon must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if self.hidden_sizes.contains(&0) {
            return bad("hidden layer sizes must be positive");
        }
        Ok(())
    }
}

/// Dense layer stored inside the model's flat parameter vector: `outputs × inputs`
/// row-major weights followed by `outputs` biases.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Dense {
    inputs: usize,
    outputs: usize,
    offset: usize,
}

impl Dense {
    fn len(&self) -> usize {
        self.outputs * (self.inputs + 1)
    }

    fn weight(&self, o: usize, i: usize) -> usize {
        self.offset + o * self.inputs + i
    }

    fn bias(&self, o: usize) -> usize {
        self.offset + self.outputs * self.inputs + o
    }

    fn forward(&self, params: &[f64], x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for o in 0..self.outputs {
            let row = &params[self.weight(o, 0)..self.weight(o, 0) + self.inputs];
            let z: f64 = row.iter().zip(x).map(|(w, v)| w * v).sum();
            out.push(z + params[self.bias(o)]);
        }
    }

    /// Accumulates parameter gradients for upstream `dz` and returns `∂/∂x`.
    fn backward(&self, params: &[f64], x: &[f64], dz: &[f64], grad: &mut [f64]) -> Vec<f64> {
        let mut dx = vec![0.0; self.inputs];
        for (o, &d) in dz.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            let w0 = self.weight(o, 0);
            for i in 0..self.inputs {
                grad[w0 + i] += d * x[i];
                dx[i] += d * params[w0 + i];
            }
            grad[self.bias(o)] += d;
        }
        dx
    }
}

fn leaky(z: f64) -> f64 {
    if z > 0.0 {
        z
    } else {
        LEAKY_SLOPE * z
    }
}

fn leaky_slope(z: f64) -> f64 {
    if z > 0.0 {
        1.0
    } else {
        LEAKY_SLOPE
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean per-sample loss over each epoch.
    pub loss_history: Vec<f64>,
    pub samples: usize,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyModel {
    input_dim: usize,
    trunk: Vec<Dense>,
    heads: [Dense; TASKS],
    params: Vec<f64>,
    feature_mean: Vec<f64>,
    feature_std: Vec<f64>,
}

struct Trace {
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    top: Vec<f64>,
    logits: [[f64; CLASSES]; TASKS],
}

impl ToyModel {
    /// Glorot-uniform initialization from a ChaCha stream seeded with `seed`.
    pub fn new(input_dim: usize, hidden_sizes: &[usize], seed: u64) -> Self {
        let mut offset = 0;
        let mut layer = |inputs: usize, outputs: usize| {
            let d = Dense {
                inputs,
                outputs,
                offset,
            };
            offset += d.len();
            d
        };
        let mut trunk = Vec::new();
        let mut width = input_dim;
        for &h in hidden_sizes {
            trunk.push(layer(width, h));
            width = h;
        }
        let heads = [
            layer(width, CLASSES),
            layer(width, CLASSES),
            layer(width, CLASSES),
        ];
        let total = offset;

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![0.0; total];
        for d in trunk.iter().chain(heads.iter()) {
            let limit = (6.0 / (d.inputs + d.outputs) as f64).sqrt();
            for o in 0..d.outputs {
                for i in 0..d.inputs {
                    params[d.weight(o, i)] = rng.random_range(-limit..limit);
                }
            }
        }
        ToyModel {
            input_dim,
            trunk,
            heads,
            params,
            feature_mean: vec![0.0; input_dim],
            feature_std: vec![1.0; input_dim],
        }
    }

    pub fn from_config(input_dim: usize, config: &TrainConfig) -> Self {
        Self::new(input_dim, &config.hidden_sizes, config.seed)
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden_sizes(&self) -> Vec<usize> {
        self.trunk.iter().map(|d| d.outputs).collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.params.len()
    }

    pub fn parameters(&self) -> &[f64] {
        &self.params
    }

    pub fn parameters_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn check_features(&self, index: usize, x: &[f64]) -> Result<(), GradingError> {
        if x.len() != self.input_dim {
            return Err(GradingError::FeatureShape {
                index,
                expected: self.input_dim,
                found: x.len(),
            });
        }
        if let Some(&bad) = x.iter().find(|v| !v.is_finite()) {
            return Err(GradingError::NonFiniteInput(bad));
        }
        Ok(())
    }

    fn standardize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.feature_mean)
            .zip(&self.feature_std)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }

    fn trace(&self, x: &[f64]) -> Trace {
        let mut a = self.standardize(x);
        let mut inputs = Vec::with_capacity(self.trunk.len());
        let mut pre = Vec::with_capacity(self.trunk.len());
        let mut z = Vec::new();
        for d in &self.trunk {
            d.forward(&self.params, &a, &mut z);
            let next: Vec<f64> = z.iter().map(|&v| leaky(v)).collect();
            inputs.push(std::mem::replace(&mut a, next));
            pre.push(z.clone());
        }
        let mut logits = [[0.0; CLASSES]; TASKS];
        for (t, head) in self.heads.iter().enumerate() {
            head.forward(&self.params, &a, &mut z);
            logits[t].copy_from_slice(&z);
        }
        Trace {
            inputs,
            pre,
            top: a,
            logits,
        }
    }

    pub fn logits(&self, x: &[f64]) -> Result<[[f64; CLASSES]; TASKS], GradingError> {
        self.check_features(0, x)?;
        Ok(self.trace(x).logits)
    }

    pub fn predict(&self, x: &[f64]) -> Result<TaskProbabilities, GradingError> {
        TaskProbabilities::from_logits(&self.logits(x)?)
    }

    pub fn predict_batch(&self, xs: &[Vec<f64>]) -> Result<Vec<TaskProbabilities>, GradingError> {
        xs.iter().map(|x| self.predict(x)).collect()
    }

    /// Loss of one sample; accumulates its parameter gradient into `grad` scaled by `scale`.
    fn accumulate(
        &self,
        x: &[f64],
        y: &OneHotTargets,
        weights: &ClassWeights,
        scale: f64,
        grad: &mut [f64],
    ) -> Result<f64, GradingError> {
        let tr = self.trace(x);
        let probs = TaskProbabilities::from_logits(&tr.logits)?;
        let loss = weighted_ce_loss(&probs, y, weights);
        let dlogits = loss_gradient(&tr.logits, y, weights)?;
        let mut da = vec![0.0; tr.top.len()];
        for (t, head) in self.heads.iter().enumerate() {
            let dz = dlogits[t].map(|v| v * scale);
            for (acc, v) in da
                .iter_mut()
                .zip(head.backward(&self.params, &tr.top, &dz, grad))
            {
                *acc += v;
            }
        }
        for (l, d) in self.trunk.iter().enumerate().rev() {
            let dz: Vec<f64> = da
                .iter()
                .zip(&tr.pre[l])
                .map(|(g, &z)| g * leaky_slope(z))
                .collect();
            da = d.backward(&self.params, &tr.inputs[l], &dz, grad);
        }
        Ok(loss)
    }

    /// Parameter gradient of the summed loss over `xs`.
    pub fn gradient(
        &self,
        xs: &[Vec<f64>],
        ys: &[OneHotTargets],
        weights: &ClassWeights,
    ) -> Result<(f64, Vec<f64>), GradingError> {
        let mut grad = vec![0.0; self.params.len()];
        let mut loss = 0.0;
        for (i, (x, y)) in xs.iter().zip(ys).enumerate() {
            self.check_features(i, x)?;
            loss += self.accumulate(x, y, weights, 1.0, &mut grad)?;
        }
        Ok((loss, grad))
    }

    fn fit_standardization(&mut self, xs: &[Vec<f64>]) {
        let n = xs.len() as f64;
        for f in 0..self.input_dim {
            let mean = xs.iter().map(|x| x[f]).sum::<f64>() / n;
            let var = xs.iter().map(|x| (x[f] - mean).powi(2)).sum::<f64>() / n;
            self.feature_mean[f] = mean;
            self.feature_std[f] = if var > 1e-24 { var.sqrt() } else { 1.0 };
        }
    }

    /// Mini-batch training with Adadelta. Samples without any label are skipped.
    pub fn train(
        &mut self,
        xs: &[Vec<f64>],
        ys: &[OneHotTargets],
        weights: &ClassWeights,
        config: &TrainConfig,
    ) -> Result<TrainReport, GradingError> {
        config.validate()?;
        for (i, x) in xs.iter().enumerate() {
            self.check_features(i, x)?;
        }
        let mut order: Vec<usize> = (0..xs.len().min(ys.len()))
            .filter(|&i| !ys[i].is_empty())
            .collect();
        if order.is_empty() {
            return Err(GradingError::EmptyDataset);
        }
        let labeled: Vec<Vec<f64>> = order.iter().map(|&i| xs[i].clone()).collect();
        self.fit_standardization(&labeled);

        let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x005e_ed0f_7a11);
        let mut opt = Adadelta::new(self.params.len(), config.rho, config.epsilon);
        opt.learning_rate = config.learning_rate;
        let mut grad = vec![0.0; self.params.len()];
        let mut history = Vec::with_capacity(config.epochs);
        let mut steps = 0;
        for _ in 0..config.epochs {
            order.shuffle(&mut rng);
            let mut epoch_loss = 0.0;
            for batch in order.chunks(config.batch_size) {
                grad.iter_mut().for_each(|g| *g = 0.0);
                let scale = match config.reduction {
                    Reduction::Sum => 1.0,
                    Reduction::Mean => 1.0 / batch.len() as f64,
                };
                for &i in batch {
                    epoch_loss += self.accumulate(&xs[i], &ys[i], weights, scale, &mut grad)?;
                }
                let mut params = std::mem::take(&mut self.params);
                opt.step(&mut params, &grad);
                self.params = params;
                steps += 1;
            }
            history.push(epoch_loss / order.len() as f64);
        }
        Ok(TrainReport {
            loss_history: history,
            samples: order.len(),
            steps,
        })
    }

    fn layer_names(&self) -> Vec<(String, Dense)> {
        let mut out: Vec<(String, Dense)> = self
            .trunk
            .iter()
            .enumerate()
            .map(|(i, d)| (format!("trunk.{i}"), *d))
            .collect();
        for site in Site::ALL {
            out.push((
                format!("head.{}", site.name().to_ascii_lowercase()),
                self.heads[site.index()],
            ));
        }
        out
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let f32s = |v: &[f64]| v.iter().map(|&x| x as f32).collect::<Vec<f32>>();
        let mut c = Checkpoint::new();
        let mut push = |name: String, shape: Vec<usize>, data: Vec<f32>| {
            c.push(Tensor::new(name, shape, data).expect("consistent shape"))
                .expect("unique tensor names");
        };
        push(
            "input.mean".into(),
            vec![self.input_dim],
            f32s(&self.feature_mean),
        );
        push(
            "input.std".into(),
            vec![self.input_dim],
            f32s(&self.feature_std),
        );
        for (name, d) in self.layer_names() {
            let w = &self.params[d.offset..d.offset + d.outputs * d.inputs];
            let b = &self.params[d.bias(0)..d.bias(0) + d.outputs];
            push(format!("{name}.weight"), vec![d.outputs, d.inputs], f32s(w));
            push(format!("{name}.bias"), vec![d.outputs], f32s(b));
        }
        c
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self, CheckpointError> {
        let mean = c.require("input.mean")?;
        let input_dim = mean.data.len();
        let mut hidden = Vec::new();
        while let Some(t) = c.get(&format!("trunk.{}.bias", hidden.len())) {
            hidden.push(t.data.len());
        }
        let mut model = ToyModel::new(input_dim, &hidden, 0);
        let f64s = |v: &[f32]| v.iter().map(|&x| x as f64).collect::<Vec<f64>>();
        model.feature_mean = f64s(&mean.data);
        model.feature_std = f64s(&c.require("input.std")?.data);
        for (name, d) in model.layer_names() {
            let w = c.require(&format!("{name}.weight"))?;
            let b = c.require(&format!("{name}.bias"))?;
            if w.shape != [d.outputs, d.inputs] || b.shape != [d.outputs] {
                return Err(CheckpointError::ShapeMismatch {
                    name: name.clone(),
                    shape: w.shape.clone(),
                    found: w.data.len(),
                });
            }
            for (k, v) in w.data.iter().chain(&b.data).enumerate() {
                model.params[d.offset + k] = *v as f64;
            }
        }
        if model.feature_std.len() != input_dim {
            return Err(CheckpointError::ShapeMismatch {
                name: "input.std".into(),
                shape: vec![input_dim],
                found: model.feature_std.len(),
            });
        }
        Ok(model)
    }
}
