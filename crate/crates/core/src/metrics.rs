//! Evaluation: regression error on a dense noiseless grid, classification
//! accuracy, graph error against the oracle, and the running lifelong mean.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::local::{class_logits, featurize, FeatureBasis, TaskBatch, Targets};
use crate::tasks::{TargetFunction, DOMAIN};
use crate::types::{CollaborationGraph, ModelParams};

pub const GRID_POINTS: usize = 1001;

/// Features and true values of a target function on a uniform grid.
#[derive(Debug, Clone)]
pub struct EvalGrid {
    features: DMatrix<f64>,
    truth: DVector<f64>,
}

impl EvalGrid {
    pub fn new(f: &TargetFunction, harmonics: usize, points: usize) -> Self {
        let xs: Vec<f64> = (0..points)
            .map(|i| DOMAIN.0 + (DOMAIN.1 - DOMAIN.0) * i as f64 / (points - 1) as f64)
            .collect();
        Self::from_samples(&xs, |x| f.eval(x), harmonics)
    }

    pub fn from_samples(xs: &[f64], truth: impl Fn(f64) -> f64, harmonics: usize) -> Self {
        Self {
            features: featurize(xs, harmonics),
            truth: DVector::from_iterator(xs.len(), xs.iter().map(|&x| truth(x))),
        }
    }

    pub fn len(&self) -> usize {
        self.truth.len()
    }

    pub fn is_empty(&self) -> bool {
        self.truth.is_empty()
    }
}

/// Mean squared error of the model's predictions against the grid truth.
pub fn eval_regression(theta: &ModelParams, grid: &EvalGrid) -> Result<f64> {
    if theta.dim() != grid.features.ncols() {
        return Err(Error::DimensionMismatch {
            expected: grid.features.ncols(),
            found: theta.dim(),
        });
    }
    let resid = &grid.features * theta.as_vector() - &grid.truth;
    Ok(resid.norm_squared() / grid.len() as f64)
}

/// Argmax accuracy; ties go to the lowest class index.
pub fn eval_accuracy(theta: &ModelParams, test: &TaskBatch, basis: FeatureBasis, classes: usize) -> Result<f64> {
    let Targets::Labels(labels) = &test.targets else {
        return Err(Error::Config("accuracy needs labelled targets".into()));
    };
    let x = basis.featurize(&test.inputs)?;
    if theta.dim() != x.ncols() * classes {
        return Err(Error::DimensionMismatch {
            expected: x.ncols() * classes,
            found: theta.dim(),
        });
    }
    let mut correct = 0usize;
    for (r, &label) in labels.iter().enumerate() {
        let row: Vec<f64> = x.row(r).iter().cloned().collect();
        let logits = class_logits(theta.as_slice(), &row, classes);
        let mut best = 0;
        for (c, &l) in logits.iter().enumerate() {
            if l > logits[best] {
                best = c;
            }
        }
        if best == label {
            correct += 1;
        }
    }
    Ok(correct as f64 / labels.len() as f64)
}

/// `‖W − W*‖_F / ‖W*‖_F`.
pub fn gmse(w: &CollaborationGraph, oracle: &CollaborationGraph) -> Result<f64> {
    if w.len() != oracle.len() {
        return Err(Error::DimensionMismatch {
            expected: oracle.len(),
            found: w.len(),
        });
    }
    let denom = oracle.weights().norm();
    if denom == 0.0 {
        return Err(Error::invariant("nonzero oracle", "oracle graph has no edges"));
    }
    Ok((w.weights() - oracle.weights()).norm() / denom)
}

/// Which per-agent quantity a record holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Mse,
    Accuracy,
}

impl MetricKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            MetricKind::Mse => "mse",
            MetricKind::Accuracy => "accuracy",
        }
    }
}

/// Metrics for one timestamp of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRecord {
    pub t: usize,
    pub kind: MetricKind,
    pub per_agent: Vec<f64>,
    /// Graph error against the oracle; absent for variants without a graph.
    pub gmse: Option<f64>,
    pub messages: usize,
    pub payload_scalars: usize,
    pub rounds_graph: usize,
    pub rounds_jacobi: usize,
}

impl MetricRecord {
    pub fn system_mean(&self) -> f64 {
        self.per_agent.iter().sum::<f64>() / self.per_agent.len() as f64
    }
}

/// Running mean of the per-timestamp system means.
pub fn cumulative(records: &[MetricRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::Config("cumulative metric needs at least one record".into()));
    }
    Ok(records.iter().map(MetricRecord::system_mean).sum::<f64>() / records.len() as f64)
}
