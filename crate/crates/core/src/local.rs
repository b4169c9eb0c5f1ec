//! Per-agent local learning: second-order expansion of each batch loss,
//! the running-mean memory, and the ridge-regularized local initialization.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{AgentMemory, ModelParams};

/// Loss whose per-sample mean is expanded at the expansion point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LossKind {
    Mse,
    CrossEntropy { classes: usize },
}

impl LossKind {
    /// Parameter dimension for `features` input features.
    pub fn param_dim(&self, features: usize) -> usize {
        match *self {
            LossKind::Mse => features,
            LossKind::CrossEntropy { classes } => features * classes,
        }
    }
}

/// Raw inputs of one batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Inputs {
    Scalars(Vec<f64>),
    Vectors(Vec<Vec<f64>>),
}

impl Inputs {
    pub fn len(&self) -> usize {
        match self {
            Inputs::Scalars(v) => v.len(),
            Inputs::Vectors(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Targets {
    Real(Vec<f64>),
    Labels(Vec<usize>),
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Real(v) => v.len(),
            Targets::Labels(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// One timestamp's supervised data for one agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskBatch {
    pub inputs: Inputs,
    pub targets: Targets,
}

impl TaskBatch {
    pub fn new(inputs: Inputs, targets: Targets) -> Result<Self> {
        if inputs.is_empty() {
            return Err(Error::invariant("non-empty batch", "batch has no samples"));
        }
        if inputs.len() != targets.len() {
            return Err(Error::DimensionMismatch {
                expected: inputs.len(),
                found: targets.len(),
            });
        }
        Ok(Self { inputs, targets })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

/// Fixed (non-learned) feature maps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureBasis {
    /// `[1, x, x², sin x, cos x, …, sin Kx, cos Kx]` for scalar inputs.
    PolyTrig { harmonics: usize },
    /// `[1, x_1, …, x_d]` for vector inputs.
    Affine { dim: usize },
}

impl FeatureBasis {
    pub fn dim(&self) -> usize {
        match *self {
            FeatureBasis::PolyTrig { harmonics } => 3 + 2 * harmonics,
            FeatureBasis::Affine { dim } => 1 + dim,
        }
    }

    pub fn featurize(&self, inputs: &Inputs) -> Result<DMatrix<f64>> {
        match (*self, inputs) {
            (FeatureBasis::PolyTrig { harmonics }, Inputs::Scalars(xs)) => Ok(featurize(xs, harmonics)),
            (FeatureBasis::Affine { dim }, Inputs::Vectors(xs)) => {
                let mut out = DMatrix::zeros(xs.len(), dim + 1);
                for (r, x) in xs.iter().enumerate() {
                    if x.len() != dim {
                        return Err(Error::DimensionMismatch {
                            expected: dim,
                            found: x.len(),
                        });
                    }
                    out[(r, 0)] = 1.0;
                    for (c, v) in x.iter().enumerate() {
                        out[(r, c + 1)] = *v;
                    }
                }
                Ok(out)
            }
            _ => Err(Error::Config("feature basis does not match input kind".into())),
        }
    }
}

/// Polynomial-plus-harmonic features of scalar inputs, one row per sample.
pub fn featurize(xs: &[f64], harmonics: usize) -> DMatrix<f64> {
    let f = 3 + 2 * harmonics;
    DMatrix::from_fn(xs.len(), f, |r, c| {
        let x = xs[r];
        match c {
            0 => 1.0,
            1 => x,
            2 => x * x,
            _ => {
                let k = ((c - 3) / 2 + 1) as f64;
                if (c - 3) % 2 == 0 {
                    (k * x).sin()
                } else {
                    (k * x).cos()
                }
            }
        }
    })
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Class logits of a class-major flattened parameter vector.
pub fn class_logits(theta: &[f64], x: &[f64], classes: usize) -> Vec<f64> {
    let f = x.len();
    (0..classes)
        .map(|c| theta[c * f..(c + 1) * f].iter().zip(x).map(|(w, v)| w * v).sum())
        .collect()
}

/// Mean per-sample loss at `theta`.
pub fn batch_loss(x: &DMatrix<f64>, targets: &Targets, loss: LossKind, theta: &DVector<f64>) -> Result<f64> {
    check_dims(x, targets, loss, theta.len())?;
    let n = x.nrows() as f64;
    match (loss, targets) {
        (LossKind::Mse, Targets::Real(y)) => {
            let r = x * theta - DVector::from_column_slice(y);
            Ok(r.norm_squared() / n)
        }
        (LossKind::CrossEntropy { classes }, Targets::Labels(labels)) => {
            let mut total = 0.0;
            for (row, &label) in labels.iter().enumerate() {
                let xr: Vec<f64> = x.row(row).iter().cloned().collect();
                let logits = class_logits(theta.as_slice(), &xr, classes);
                let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
                total += lse - logits[label];
            }
            Ok(total / n)
        }
        _ => Err(Error::Config("loss kind does not match targets".into())),
    }
}

fn check_dims(x: &DMatrix<f64>, targets: &Targets, loss: LossKind, param_dim: usize) -> Result<()> {
    if x.nrows() != targets.len() {
        return Err(Error::DimensionMismatch {
            expected: x.nrows(),
            found: targets.len(),
        });
    }
    let p = loss.param_dim(x.ncols());
    if p != param_dim {
        return Err(Error::DimensionMismatch {
            expected: p,
            found: param_dim,
        });
    }
    if let (LossKind::CrossEntropy { classes }, Targets::Labels(labels)) = (loss, targets) {
        if classes < 2 {
            return Err(Error::invariant("class count", format!("{classes} < 2")));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::invariant("label range", format!("label {bad} >= {classes}")));
        }
    }
    Ok(())
}

/// Hessian and gradient of the mean per-sample loss at `alpha`.
///
/// MSE: `H = (2/n) XᵀX`, `g = (2/n) Xᵀ(Xα − y)`.
/// Cross-entropy: `H = (1/n) Σ_j (diag p_j − p_j p_jᵀ) ⊗ x_j x_jᵀ`,
/// `g = (1/n) Σ_j (p_j − e_{y_j}) ⊗ x_j`.
pub fn hessian_gradient(
    x: &DMatrix<f64>,
    targets: &Targets,
    loss: LossKind,
    alpha: &DVector<f64>,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    check_dims(x, targets, loss, alpha.len())?;
    let n = x.nrows() as f64;
    match (loss, targets) {
        (LossKind::Mse, Targets::Real(y)) => {
            let xt = x.transpose();
            let mut h = &xt * x * (2.0 / n);
            symmetrize(&mut h);
            let r = x * alpha - DVector::from_column_slice(y);
            let g = xt * r * (2.0 / n);
            Ok((h, g))
        }
        (LossKind::CrossEntropy { classes }, Targets::Labels(labels)) => {
            let f = x.ncols();
            let p = f * classes;
            let mut h = DMatrix::zeros(p, p);
            let mut g = DVector::zeros(p);
            for (row, &label) in labels.iter().enumerate() {
                let xr: Vec<f64> = x.row(row).iter().cloned().collect();
                let probs = softmax(&class_logits(alpha.as_slice(), &xr, classes));
                for c in 0..classes {
                    let resid = probs[c] - if c == label { 1.0 } else { 0.0 };
                    for a in 0..f {
                        g[c * f + a] += resid * xr[a];
                    }
                    for d in 0..classes {
                        let m = if c == d { probs[c] } else { 0.0 } - probs[c] * probs[d];
                        if m == 0.0 {
                            continue;
                        }
                        for a in 0..f {
                            for b in 0..f {
                                h[(c * f + a, d * f + b)] += m * xr[a] * xr[b];
                            }
                        }
                    }
                }
            }
            h /= n;
            g /= n;
            symmetrize(&mut h);
            Ok((h, g))
        }
        _ => Err(Error::Config("loss kind does not match targets".into())),
    }
}

fn symmetrize(h: &mut DMatrix<f64>) {
    let p = h.nrows();
    for i in 0..p {
        for j in (i + 1)..p {
            let v = 0.5 * (h[(i, j)] + h[(j, i)]);
            h[(i, j)] = v;
            h[(j, i)] = v;
        }
    }
}

/// Absorbs one batch expansion into the running means:
/// `A' = (tA + H)/(t+1)`, `b' = (tb + Hα − g)/(t+1)`.
pub fn update_memory(
    mem: &AgentMemory,
    h: &DMatrix<f64>,
    g: &DVector<f64>,
    alpha: &DVector<f64>,
) -> Result<AgentMemory> {
    let p = mem.dim();
    for found in [h.nrows(), h.ncols(), g.len(), alpha.len()] {
        if found != p {
            return Err(Error::DimensionMismatch { expected: p, found });
        }
    }
    let t = mem.t() as f64;
    let next = t + 1.0;
    let mut a = (mem.a() * t + h) / next;
    symmetrize(&mut a);
    let b = (mem.b() * t + h * alpha - g) / next;
    Ok(AgentMemory::from_parts_unchecked(a, b, mem.t() + 1))
}

/// Solves `(A + 2λ₁I) θ = b`.
pub fn local_init(mem: &AgentMemory, lambda1: f64) -> Result<ModelParams> {
    if mem.t() == 0 {
        return Err(Error::invariant("non-empty memory", "local_init needs at least one batch"));
    }
    let p = mem.dim();
    let system = mem.a() + DMatrix::identity(p, p) * (2.0 * lambda1);
    let theta = solve_spd(system, mem.b())?;
    ModelParams::new(theta)
}

/// Cholesky solve that reports near-singular systems instead of returning garbage.
pub(crate) fn solve_spd(system: DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    let scale = system.diagonal().amax().max(f64::MIN_POSITIVE);
    let chol = system.cholesky().ok_or(Error::SingularLocalSystem)?;
    let l = chol.l_dirty();
    let min_pivot = (0..l.nrows()).map(|i| l[(i, i)]).fold(f64::INFINITY, f64::min);
    if min_pivot * min_pivot <= 1e-13 * scale {
        return Err(Error::SingularLocalSystem);
    }
    Ok(chol.solve(rhs))
}
