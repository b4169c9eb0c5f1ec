//! Validated domain values shared by every stage of the pipeline.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Parameters of one agent's linear model.
///
/// For classification the vector is the class-major flattening of a
/// `classes × features` weight matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams(DVector<f64>);

impl ModelParams {
    pub fn new(theta: DVector<f64>) -> Result<Self> {
        if let Some(i) = theta.iter().position(|v| !v.is_finite()) {
            return Err(Error::invariant(
                "finite parameters",
                format!("entry {i} is {}", theta[i]),
            ));
        }
        Ok(Self(theta))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(DVector::zeros(dim))
    }

    pub fn from_slice(values: &[f64]) -> Result<Self> {
        Self::new(DVector::from_column_slice(values))
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn into_vector(self) -> DVector<f64> {
        self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice()
    }
}

/// Constant-size learning memory: running means of the per-batch Hessians
/// (`a`) and of `H·alpha − g` (`b`) over `t` absorbed batches.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentMemory {
    a: DMatrix<f64>,
    b: DVector<f64>,
    t: usize,
}

impl AgentMemory {
    pub fn empty(dim: usize) -> Self {
        Self {
            a: DMatrix::zeros(dim, dim),
            b: DVector::zeros(dim),
            t: 0,
        }
    }

    /// Builds a memory from raw parts, checking shape, symmetry and the
    /// empty-memory convention. PSD-ness is checked by [`AgentMemory::check_psd`].
    pub fn from_parts(a: DMatrix<f64>, b: DVector<f64>, t: usize) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(Error::DimensionMismatch {
                expected: a.nrows(),
                found: a.ncols(),
            });
        }
        if b.len() != a.nrows() {
            return Err(Error::DimensionMismatch {
                expected: a.nrows(),
                found: b.len(),
            });
        }
        let asym = (&a - a.transpose()).amax();
        if asym > 1e-10 * a.amax().max(1.0) {
            return Err(Error::invariant("memory symmetry", format!("max |A - A^T| = {asym:e}")));
        }
        if t == 0 && (a.amax() != 0.0 || b.amax() != 0.0) {
            return Err(Error::invariant("empty memory", "t = 0 requires A = 0 and b = 0"));
        }
        Ok(Self { a, b, t })
    }

    pub(crate) fn from_parts_unchecked(a: DMatrix<f64>, b: DVector<f64>, t: usize) -> Self {
        Self { a, b, t }
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }

    /// Number of absorbed batches.
    pub fn t(&self) -> usize {
        self.t
    }

    pub fn dim(&self) -> usize {
        self.b.len()
    }

    /// Smallest eigenvalue of `A` must be at least `-1e-8`.
    pub fn check_psd(&self) -> Result<()> {
        if self.dim() == 0 {
            return Ok(());
        }
        let min = self
            .a
            .clone()
            .symmetric_eigenvalues()
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        if min < -1e-8 {
            return Err(Error::invariant("memory PSD", format!("min eigenvalue {min:e}")));
        }
        Ok(())
    }
}

/// Binary symmetric communication topology with unit diagonal.
///
/// Construction rejects anything asymmetric, missing a diagonal entry, or
/// disconnected.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommGraph {
    n: usize,
    links: Vec<bool>,
}

impl CommGraph {
    /// Builds from a 0/1 matrix given row by row.
    pub fn from_rows(rows: &[Vec<u8>]) -> Result<Self> {
        let n = rows.len();
        let mut links = Vec::with_capacity(n * n);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    found: row.len(),
                });
            }
            for (j, &v) in row.iter().enumerate() {
                match v {
                    0 => links.push(false),
                    1 => links.push(true),
                    other => {
                        return Err(Error::invariant(
                            "binary",
                            format!("entry ({i},{j}) = {other}"),
                        ))
                    }
                }
            }
        }
        let graph = Self { n, links };
        graph.validate()?;
        Ok(graph)
    }

    /// Builds from an undirected edge list; the diagonal is added.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut links = vec![false; n * n];
        for i in 0..n {
            links[i * n + i] = true;
        }
        for &(i, j) in edges {
            if i >= n || j >= n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    found: i.max(j) + 1,
                });
            }
            links[i * n + j] = true;
            links[j * n + i] = true;
        }
        let graph = Self { n, links };
        graph.validate()?;
        Ok(graph)
    }

    pub fn fully_connected(n: usize) -> Self {
        Self {
            n,
            links: vec![true; n * n],
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn linked(&self, i: usize, j: usize) -> bool {
        self.links[i * self.n + j]
    }

    /// Off-diagonal neighbours of `i`, ascending.
    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.n).filter(move |&j| j != i && self.linked(i, j))
    }

    /// `‖C‖_1`, counting the diagonal.
    pub fn entry_count(&self) -> usize {
        self.links.iter().filter(|&&l| l).count()
    }

    pub fn validate(&self) -> Result<()> {
        validate_comm_graph(self)
    }
}

/// Checks unit diagonal, symmetry and connectivity, in that order.
pub fn validate_comm_graph(c: &CommGraph) -> Result<()> {
    let n = c.n;
    if c.links.len() != n * n {
        return Err(Error::DimensionMismatch {
            expected: n * n,
            found: c.links.len(),
        });
    }
    for i in 0..n {
        if !c.linked(i, i) {
            return Err(Error::invariant("diagonal", format!("C[{i}][{i}] = 0")));
        }
    }
    for i in 0..n {
        for j in (i + 1)..n {
            if c.linked(i, j) != c.linked(j, i) {
                return Err(Error::invariant(
                    "asymmetric",
                    format!("C[{i}][{j}] != C[{j}][{i}]"),
                ));
            }
        }
    }
    if n > 0 {
        let mut seen = vec![false; n];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(i) = stack.pop() {
            for j in c.neighbors(i) {
                if !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        if let Some(lost) = seen.iter().position(|s| !s) {
            return Err(Error::invariant(
                "disconnected",
                format!("agent {lost} unreachable from agent 0"),
            ));
        }
    }
    Ok(())
}

/// Symmetric, nonnegative collaboration weights with fixed total mass.
#[derive(Debug, Clone, PartialEq)]
pub struct CollaborationGraph {
    w: DMatrix<f64>,
    mass: f64,
}

impl CollaborationGraph {
    /// Wraps a weight matrix without checking it; see [`validate_collab_graph`].
    pub fn from_parts(w: DMatrix<f64>, mass: f64) -> Self {
        Self { w, mass }
    }

    pub fn empty(n: usize, mass: f64) -> Self {
        Self {
            w: DMatrix::zeros(n, n),
            mass,
        }
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.w[(i, j)]
    }

    pub fn mass(&self) -> f64 {
        self.mass
    }

    pub fn len(&self) -> usize {
        self.w.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.w.nrows() == 0
    }

    /// Weighted degree `Σ_j W_ij`.
    pub fn degree(&self, i: usize) -> f64 {
        self.w.row(i).iter().sum()
    }

    /// Agents with positive weight from `i`, ascending.
    pub fn support(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(move |&j| self.w[(i, j)] > 0.0)
    }

    /// Entrywise L1 norm.
    pub fn l1(&self) -> f64 {
        self.w.iter().map(|v| v.abs()).sum()
    }

    pub fn max_asymmetry(&self) -> f64 {
        (&self.w - self.w.transpose()).amax()
    }
}

/// Checks every collaboration-graph invariant against `c` and reports the
/// first one that fails.
pub fn validate_collab_graph(w: &CollaborationGraph, c: &CommGraph) -> Result<()> {
    let n = c.len();
    if w.w.nrows() != n || w.w.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: w.w.nrows(),
        });
    }
    if !(w.mass > 0.0) {
        return Err(Error::invariant("mass positive", format!("m = {}", w.mass)));
    }
    for i in 0..n {
        for j in 0..n {
            let v = w.w[(i, j)];
            if !(v >= 0.0) {
                return Err(Error::invariant("nonnegativity", format!("W[{i}][{j}] = {v}")));
            }
        }
    }
    for i in 0..n {
        if w.w[(i, i)] != 0.0 {
            return Err(Error::invariant("zero diagonal", format!("W[{i}][{i}] = {}", w.w[(i, i)])));
        }
    }
    for i in 0..n {
        for j in 0..n {
            if !c.linked(i, j) && w.w[(i, j)] != 0.0 {
                return Err(Error::invariant(
                    "support within C",
                    format!("W[{i}][{j}] = {} but C[{i}][{j}] = 0", w.w[(i, j)]),
                ));
            }
        }
    }
    let asym = w.max_asymmetry();
    if asym > 1e-10 {
        return Err(Error::invariant("symmetry", format!("max |W - W^T| = {asym:e}")));
    }
    let l1 = w.l1();
    if (l1 - w.mass).abs() > 1e-9 {
        return Err(Error::invariant("L1 mass", format!("‖W‖_1 = {l1}, m = {}", w.mass)));
    }
    Ok(())
}

/// Solver and regularization settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Hyperparams {
    /// Ridge weight on each agent's parameters.
    pub lambda1: f64,
    /// Weight of the graph-smoothness term.
    pub lambda2: f64,
    /// Weight of the Frobenius penalty on the collaboration graph.
    pub lambda3: f64,
    /// Total edge mass of the collaboration graph.
    pub mass: f64,
    /// Smoothing constant of the ReLU surrogate used inside the dual Newton solve.
    pub b_smooth: f64,
    pub newton_iters: usize,
    pub jacobi_iters: usize,
    pub tol_dual: f64,
    pub tol_jacobi: f64,
}

impl Hyperparams {
    /// Defaults for `n` agents (one unit of edge mass per agent).
    pub fn for_agents(n: usize) -> Self {
        Self {
            lambda1: 1e-2,
            lambda2: 0.1,
            lambda3: 1.0,
            mass: n as f64,
            b_smooth: 1e-6,
            newton_iters: 100,
            jacobi_iters: 500,
            tol_dual: 1e-10,
            tol_jacobi: 1e-9,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let reals = [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("lambda3", self.lambda3),
            ("mass", self.mass),
            ("b_smooth", self.b_smooth),
            ("tol_dual", self.tol_dual),
            ("tol_jacobi", self.tol_jacobi),
        ];
        for (name, v) in reals {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invariant("positive hyperparameter", format!("{name} = {v}")));
            }
        }
        if self.newton_iters == 0 || self.jacobi_iters == 0 {
            return Err(Error::invariant("positive hyperparameter", "iteration caps must be >= 1"));
        }
        Ok(())
    }
}
