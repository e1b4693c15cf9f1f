//! Multi-task stenosis grading: softmax heads, class-weighted cross-entropy with its
//! analytic gradient, Adadelta, and probability merges used for evaluation.
//!
//! Every task (SCS, RFS, LFS) is a 4-way classification over grades 0..=3. Targets may be
//! absent per task; absent tasks contribute nothing to loss or gradient.

pub mod checkpoint;
pub mod toy;

use crate::anatomy::{Grade, Site};
use crate::report::StenosisLabelSet;
use serde::{Deserialize, Serialize};

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, CheckpointError, Tensor};
pub use toy::{ToyModel, TrainConfig, TrainReport};

pub const TASKS: usize = 3;
pub const CLASSES: usize = Grade::COUNT;
/// Floor applied to probabilities before taking logs.
pub const LOG_CLAMP: f64 = 1e-12;

#[derive(Debug, thiserror::Error)]
pub enum GradingError {
    #[error("non-finite input value {0}")]
    NonFiniteInput(f64),
    #[error("task {task} has no training samples of grade {grade}")]
    DegenerateClass { task: Site, grade: u8 },
    #[error("no sample carries a label for any task")]
    EmptyDataset,
    #[error("feature vector {index} has length {found}, expected {expected}")]
    FeatureShape {
        index: usize,
        expected: usize,
        found: usize,
    },
    #[error("invalid probability vector {0:?}")]
    InvalidProbabilities([f64; CLASSES]),
    #[error("invalid training config: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Max-shifted softmax over one head's logits.
pub fn softmax(logits: &[f64; CLASSES]) -> Result<[f64; CLASSES], GradingError> {
    if let Some(&bad) = logits.iter().find(|v| !v.is_finite()) {
        return Err(GradingError::NonFiniteInput(bad));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp = logits.map(|z| (z - max).exp());
    let sum: f64 = exp.iter().sum();
    Ok(exp.map(|e| e / sum))
}

/// Per-task grade probabilities; each row is nonnegative and sums to 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskProbabilities(pub [[f64; CLASSES]; TASKS]);

impl TaskProbabilities {
    pub fn new(rows: [[f64; CLASSES]; TASKS]) -> Result<Self, GradingError> {
        for row in &rows {
            let sum: f64 = row.iter().sum();
            if row.iter().any(|p| !p.is_finite() || *p < 0.0) || (sum - 1.0).abs() > 1e-9 {
                return Err(GradingError::InvalidProbabilities(*row));
            }
        }
        Ok(TaskProbabilities(rows))
    }

    pub fn from_logits(logits: &[[f64; CLASSES]; TASKS]) -> Result<Self, GradingError> {
        Ok(TaskProbabilities([
            softmax(&logits[0])?,
            softmax(&logits[1])?,
            softmax(&logits[2])?,
        ]))
    }

    pub fn task(&self, site: Site) -> &[f64; CLASSES] {
        &self.0[site.index()]
    }

    /// Most probable grade per task; ties resolve to the lower grade.
    pub fn argmax(&self) -> [Grade; TASKS] {
        self.0.map(|row| {
            let mut best = 0;
            for (j, p) in row.iter().enumerate() {
                if *p > row[best] {
                    best = j;
                }
            }
            Grade::new(best as u8).expect("index below CLASSES")
        })
    }
}

/// Per-task class weights `α[task][grade]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights(pub [[f64; CLASSES]; TASKS]);

impl ClassWeights {
    pub fn uniform() -> Self {
        ClassWeights([[1.0; CLASSES]; TASKS])
    }

    pub fn alpha(&self, site: Site, grade: Grade) -> f64 {
        self.0[site.index()][grade.index()]
    }
}

/// `α[t][j] = N_t / (C · n[t][j])`, so `Σ_j α n = N_t` and balanced counts give 1.
pub fn class_weights(counts: &[[u64; CLASSES]; TASKS]) -> Result<ClassWeights, GradingError> {
    let mut alpha = [[0.0; CLASSES]; TASKS];
    for site in Site::ALL {
        let t = site.index();
        let total: u64 = counts[t].iter().sum();
        for j in 0..CLASSES {
            let n = counts[t][j];
            if n == 0 {
                return Err(GradingError::DegenerateClass {
                    task: site,
                    grade: j as u8,
                });
            }
            alpha[t][j] = total as f64 / (CLASSES as f64 * n as f64);
        }
    }
    Ok(ClassWeights(alpha))
}

/// True grade per task, `None` where the task is unlabeled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct OneHotTargets(pub [Option<Grade>; TASKS]);

impl OneHotTargets {
    pub fn from_labels(labels: &StenosisLabelSet) -> Self {
        OneHotTargets(labels.grades())
    }

    pub fn one_hot(&self, site: Site) -> Option<[f64; CLASSES]> {
        self.0[site.index()].map(|g| {
            let mut y = [0.0; CLASSES];
            y[g.index()] = 1.0;
            y
        })
    }

    pub fn is_empty(&self) -> bool {
        self.0.iter().all(Option::is_none)
    }
}

/// Batch reduction of the per-sample loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reduction {
    #[default]
    Sum,
    Mean,
}

/// `−Σ_t Σ_j α[t][j] y[t][j] ln max(P[t][j], 1e-12)` over labeled tasks.
pub fn weighted_ce_loss(
    probs: &TaskProbabilities,
    targets: &OneHotTargets,
    weights: &ClassWeights,
) -> f64 {
    let mut loss = 0.0;
    for site in Site::ALL {
        if let Some(g) = targets.0[site.index()] {
            let p = probs.task(site)[g.index()].max(LOG_CLAMP);
            loss -= weights.alpha(site, g) * p.ln();
        }
    }
    loss
}

/// Loss over a batch, summed or averaged over samples.
pub fn batch_loss(
    probs: &[TaskProbabilities],
    targets: &[OneHotTargets],
    weights: &ClassWeights,
    reduction: Reduction,
) -> f64 {
    let total: f64 = probs
        .iter()
        .zip(targets)
        .map(|(p, y)| weighted_ce_loss(p, y, weights))
        .sum();
    match reduction {
        Reduction::Sum => total,
        Reduction::Mean if probs.is_empty() => 0.0,
        Reduction::Mean => total / probs.len() as f64,
    }
}

/// Gradient of [`weighted_ce_loss`] after softmax with respect to the logits:
/// `α_true · (P − y)` per labeled task, zero for unlabeled tasks.
pub fn loss_gradient(
    logits: &[[f64; CLASSES]; TASKS],
    targets: &OneHotTargets,
    weights: &ClassWeights,
) -> Result<[[f64; CLASSES]; TASKS], GradingError> {
    let mut grad = [[0.0; CLASSES]; TASKS];
    for site in Site::ALL {
        let t = site.index();
        if let Some(g) = targets.0[t] {
            let p = softmax(&logits[t])?;
            let alpha = weights.alpha(site, g);
            for j in 0..CLASSES {
                let y = if j == g.index() { 1.0 } else { 0.0 };
                grad[t][j] = alpha * (p[j] - y);
            }
        }
    }
    Ok(grad)
}

/// Adadelta accumulators for a flat parameter vector.
///
/// `E[g²] ← ρE[g²] + (1−ρ)g²`, `Δ = −√(E[Δ²]+ε)/√(E[g²]+ε) · g`,
/// `E[Δ²] ← ρE[Δ²] + (1−ρ)Δ²`, `w ← w + lr·Δ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adadelta {
    pub learning_rate: f64,
    pub rho: f64,
    pub epsilon: f64,
    sq_grad: Vec<f64>,
    sq_update: Vec<f64>,
}

impl Adadelta {
    pub const DEFAULT_RHO: f64 = 0.95;
    pub const DEFAULT_EPSILON: f64 = 1e-6;

    pub fn new(len: usize, rho: f64, epsilon: f64) -> Self {
        Adadelta {
            learning_rate: 1.0,
            rho,
            epsilon,
            sq_grad: vec![0.0; len],
            sq_update: vec![0.0; len],
        }
    }

    pub fn with_defaults(len: usize) -> Self {
        Self::new(len, Self::DEFAULT_RHO, Self::DEFAULT_EPSILON)
    }

    pub fn accumulated_sq_grad(&self) -> &[f64] {
        &self.sq_grad
    }

    pub fn accumulated_sq_update(&self) -> &[f64] {
        &self.sq_update
    }

    /// Applies one update in place. `params` and `grad` must match the state length.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        assert_eq!(params.len(), self.sq_grad.len(), "parameter length");
        assert_eq!(grad.len(), self.sq_grad.len(), "gradient length");
        let (rho, eps) = (self.rho, self.epsilon);
        for i in 0..params.len() {
            let g = grad[i];
            self.sq_grad[i] = rho * self.sq_grad[i] + (1.0 - rho) * g * g;
            let delta = -((self.sq_update[i] + eps).sqrt() / (self.sq_grad[i] + eps).sqrt()) * g;
            self.sq_update[i] = rho * self.sq_update[i] + (1.0 - rho) * delta * delta;
            params[i] += self.learning_rate * delta;
        }
    }
}

/// `(p0, p1 + p2, p3)`: mild and moderate share one class.
pub fn merge_mild_moderate(p: &[f64; CLASSES]) -> [f64; 3] {
    [p[0], p[1] + p[2], p[3]]
}

/// `(p0 + p1 + p2, p3)`: only severe is positive.
pub fn binary_collapse(p: &[f64; CLASSES]) -> [f64; 2] {
    [p[0] + p[1] + p[2], p[3]]
}
