//! Collaboration-graph inference.
//!
//! The graph subproblem decouples entrywise once the multiplier `z` of the
//! mass constraint is known: `W_ij = ReLU(−(λ₂ d_ij + z) / (2λ₃))`. Finding
//! `z` is a scalar root problem whose left-hand side is a sum over agents,
//! so each Newton step needs one network-wide aggregation of two scalars.
//! The ReLU is replaced by the smooth surrogate `h_b` while iterating.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::network::Network;
use crate::types::{CollaborationGraph, CommGraph, Hyperparams, ModelParams};

/// Squared parameter distances along communication edges; `+∞` elsewhere.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceField {
    n: usize,
    d: Vec<f64>,
}

impl DistanceField {
    /// Builds from a dense matrix. Off-diagonal entries must be nonnegative
    /// or `+∞`, and the matrix must be symmetric.
    pub fn from_matrix(d: &DMatrix<f64>) -> Result<Self> {
        let n = d.nrows();
        if d.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: d.ncols(),
            });
        }
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let v = d[(i, j)];
                if !(v >= 0.0) {
                    return Err(Error::invariant("nonnegative distance", format!("d[{i}][{j}] = {v}")));
                }
                if v != d[(j, i)] {
                    return Err(Error::invariant("symmetric distance", format!("d[{i}][{j}] != d[{j}][{i}]")));
                }
                out[i * n + j] = v;
            }
        }
        Ok(Self { n, d: out })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.d[i * self.n + j]
    }

    /// Finite off-diagonal entries of row `i` as `(j, d_ij)`.
    pub fn finite_row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        (0..self.n)
            .filter(move |&j| j != i)
            .map(move |j| (j, self.get(i, j)))
            .filter(|(_, v)| v.is_finite())
    }

    pub fn finite_count(&self) -> usize {
        (0..self.n).map(|i| self.finite_row(i).count()).sum()
    }
}

/// Each agent sends its parameters to its communication neighbours and
/// computes distances from what it receives.
pub fn pairwise_distances(thetas: &[ModelParams], net: &mut Network) -> Result<DistanceField> {
    let n = net.agents();
    if thetas.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: thetas.len(),
        });
    }
    let p = thetas.first().map_or(0, ModelParams::dim);
    if let Some(bad) = thetas.iter().find(|t| t.dim() != p) {
        return Err(Error::DimensionMismatch {
            expected: p,
            found: bad.dim(),
        });
    }
    for i in 0..n {
        let neighbors: Vec<usize> = net.comm().neighbors(i).collect();
        for j in neighbors {
            net.send_along(i, j, thetas[i].as_slice().to_vec())?;
        }
    }
    net.barrier();
    let mut d = vec![f64::INFINITY; n * n];
    for i in 0..n {
        d[i * n + i] = 0.0;
        let own = thetas[i].as_slice();
        for env in net.take_inbox(i) {
            d[i * n + env.from] = own.iter().zip(&env.payload).map(|(a, b)| (a - b) * (a - b)).sum();
        }
    }
    Ok(DistanceField { n, d })
}

/// Value and first two derivatives of `h_b(x) = (√(x² + b) + x) / 2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothedRelu {
    pub value: f64,
    pub slope: f64,
    pub curvature: f64,
}

/// Evaluates `h_b` without cancellation for large negative `x`.
pub fn smoothed_relu(x: f64, b: f64) -> SmoothedRelu {
    let r = (x * x + b).sqrt();
    let (value, slope) = if x >= 0.0 {
        ((r + x) / 2.0, (x / r + 1.0) / 2.0)
    } else {
        // (r + x)/2 = b / (2(r − x)) and h' = h / r
        let value = b / (2.0 * (r - x));
        (value, value / r)
    };
    SmoothedRelu {
        value,
        slope,
        curvature: b / (2.0 * r * r * r),
    }
}

/// Per-agent copies of the dual variable after the Newton solve.
#[derive(Debug, Clone, PartialEq)]
pub struct DualState {
    pub z: Vec<f64>,
    pub iterations: usize,
    /// `|φ(z) − m|` at the returned `z`, with φ the smoothed mass.
    pub residual: f64,
}

impl DualState {
    /// The common value of all copies; panics if they disagree.
    pub fn consensus(&self) -> f64 {
        let z0 = self.z[0];
        assert!(
            self.z.iter().all(|z| z.to_bits() == z0.to_bits()),
            "dual copies diverged"
        );
        z0
    }
}

fn pre_activation(d: f64, z: f64, hp: &Hyperparams) -> f64 {
    -(hp.lambda2 * d + z) / (2.0 * hp.lambda3)
}

/// Row-local smoothed mass and its derivative in `z`.
fn local_mass(d: &DistanceField, i: usize, z: f64, hp: &Hyperparams) -> [f64; 2] {
    let mut phi = 0.0;
    let mut dphi = 0.0;
    for (_, dij) in d.finite_row(i) {
        let s = smoothed_relu(pre_activation(dij, z, hp), hp.b_smooth);
        phi += s.value;
        dphi += s.slope;
    }
    [phi, -dphi / (2.0 * hp.lambda3)]
}

/// Newton iteration on `φ(z) = m`, where `φ(z) = Σ h_b(−(λ₂ d_ij + z)/(2λ₃))`
/// over finite off-diagonal entries.
///
/// Every agent keeps its own copy of `z`; each round the agents aggregate
/// their row sums over the network and apply the identical update. Steps
/// that leave the current bracket, or have a vanishing derivative, are
/// replaced by bisection.
pub fn solve_dual(d: &DistanceField, hp: &Hyperparams, net: &mut Network) -> Result<DualState> {
    let n = d.len();
    if net.agents() != n {
        return Err(Error::DimensionMismatch {
            expected: net.agents(),
            found: n,
        });
    }
    // Bracket setup: count of finite entries and their maximum.
    let setup: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let row: Vec<f64> = d.finite_row(i).map(|(_, v)| v).collect();
            vec![row.len() as f64, row.iter().cloned().fold(0.0, f64::max)]
        })
        .collect();
    let counts = net.aggregate_sum(&setup.iter().map(|r| vec![r[0]]).collect::<Vec<_>>())?;
    let maxima = net.aggregate_max(&setup.iter().map(|r| vec![r[1]]).collect::<Vec<_>>())?;

    let mut copies: Vec<DualCopy> = (0..n)
        .map(|i| {
            let k = counts.per_agent[i][0];
            let dmax = maxima.per_agent[i][0];
            // φ(lo) ≥ m: every pre-activation is at least m there.
            let lo = -hp.lambda2 * dmax - 2.0 * hp.lambda3 * hp.mass;
            // φ(hi) < m: h_b(u) ≤ b / (4|u|) for u < 0.
            let hi = (k * hp.b_smooth * hp.lambda3 / hp.mass).max(0.0);
            DualCopy { z: 0.0, lo, hi }
        })
        .collect();
    if counts.per_agent[0][0] < 1.0 {
        return Err(Error::invariant("finite distance", "no communication edge to weight"));
    }

    for iteration in 1..=hp.newton_iters {
        let locals: Vec<Vec<f64>> = (0..n).map(|i| local_mass(d, i, copies[i].z, hp).to_vec()).collect();
        let global = net.aggregate_sum(&locals)?;
        let mut residual = 0.0;
        let mut converged = true;
        for (copy, sums) in copies.iter_mut().zip(&global.per_agent) {
            let gap = sums[0] - hp.mass;
            residual = gap.abs();
            if gap.abs() <= hp.tol_dual {
                continue;
            }
            converged = false;
            copy.step(gap, sums[1]);
        }
        if converged {
            let state = DualState {
                z: copies.iter().map(|c| c.z).collect(),
                iterations: iteration,
                residual,
            };
            state.consensus();
            return Ok(state);
        }
        if copies.iter().any(|c| c.lo == c.hi) {
            return Err(Error::Degenerate { z: copies[0].z });
        }
    }
    let locals: Vec<Vec<f64>> = (0..n).map(|i| local_mass(d, i, copies[i].z, hp).to_vec()).collect();
    let residual = (locals.iter().map(|v| v[0]).sum::<f64>() - hp.mass).abs();
    Err(Error::NoConvergence {
        stage: "dual newton",
        iterations: hp.newton_iters,
        residual,
    })
}

#[derive(Debug, Clone, Copy)]
struct DualCopy {
    z: f64,
    lo: f64,
    hi: f64,
}

impl DualCopy {
    /// `gap = φ(z) − m`, `slope = φ'(z) < 0`.
    fn step(&mut self, gap: f64, slope: f64) {
        // φ is decreasing: gap > 0 means the root lies to the right.
        if gap > 0.0 {
            self.lo = self.z;
        } else {
            self.hi = self.z;
        }
        let newton = self.z - gap / slope;
        self.z = if slope < 0.0 && newton.is_finite() && newton > self.lo && newton < self.hi {
            newton
        } else {
            0.5 * (self.lo + self.hi)
        };
    }
}

fn clipped_rows(d: &DistanceField, z: f64, hp: &Hyperparams) -> DMatrix<f64> {
    let n = d.len();
    let mut w = DMatrix::zeros(n, n);
    for i in 0..n {
        for (j, dij) in d.finite_row(i) {
            w[(i, j)] = pre_activation(dij, z, hp).max(0.0);
        }
    }
    w
}

fn rescale(mut w: DMatrix<f64>, total: f64, hp: &Hyperparams) -> Result<CollaborationGraph> {
    if !(total > 0.0) {
        return Err(Error::AllZeroGraph);
    }
    w *= hp.mass / total;
    Ok(CollaborationGraph::from_parts(w, hp.mass))
}

fn row_sums(w: &DMatrix<f64>) -> Vec<f64> {
    (0..w.nrows()).map(|i| w.row(i).iter().sum()).collect()
}

/// Exact-ReLU weights at `z`, rescaled to total mass `m`.
pub fn recover_weights(d: &DistanceField, z: f64, hp: &Hyperparams) -> Result<CollaborationGraph> {
    let w = clipped_rows(d, z, hp);
    let total = row_sums(&w).into_iter().fold(0.0, |acc, s| acc + s);
    rescale(w, total, hp)
}

/// Smoothed weights `h_b(−(λ₂d_ij + z)/(2λ₃))` at `z`, without rescaling.
pub fn smoothed_weights(d: &DistanceField, z: f64, hp: &Hyperparams) -> DMatrix<f64> {
    let n = d.len();
    let mut w = DMatrix::zeros(n, n);
    for i in 0..n {
        for (j, dij) in d.finite_row(i) {
            w[(i, j)] = smoothed_relu(pre_activation(dij, z, hp), hp.b_smooth).value;
        }
    }
    w
}

/// Diagnostics from one graph inference.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphInference {
    pub graph: CollaborationGraph,
    pub dual: DualState,
    pub distances: DistanceField,
}

/// Distances, dual solve and weight recovery, with every cross-agent value
/// routed through `net`.
pub fn infer_graph(thetas: &[ModelParams], hp: &Hyperparams, net: &mut Network) -> Result<GraphInference> {
    let distances = pairwise_distances(thetas, net)?;
    let dual = solve_dual(&distances, hp, net)?;
    let z = dual.consensus();
    let w = clipped_rows(&distances, z, hp);
    let sums: Vec<Vec<f64>> = row_sums(&w).into_iter().map(|s| vec![s]).collect();
    let total = net.aggregate_sum(&sums)?;
    let graph = rescale(w, total.per_agent[0][0], hp)?;
    Ok(GraphInference { graph, dual, distances })
}

/// Objective `Σ_ij λ₂ W_ij d_ij + λ₃ W_ij²` over finite entries.
pub fn graph_objective(d: &DistanceField, w: &CollaborationGraph, hp: &Hyperparams) -> f64 {
    let mut total = 0.0;
    for i in 0..d.len() {
        for (j, dij) in d.finite_row(i) {
            let v = w.weight(i, j);
            total += hp.lambda2 * v * dij + hp.lambda3 * v * v;
        }
    }
    total
}

/// Euclidean projection onto `{w ≥ 0, Σw = mass}` by sorting.
pub fn project_simplex(v: &[f64], mass: f64) -> Vec<f64> {
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).expect("finite input"));
    let mut cumulative = 0.0;
    let mut tau = 0.0;
    for (k, &u) in sorted.iter().enumerate() {
        cumulative += u;
        let candidate = (cumulative - mass) / (k as f64 + 1.0);
        if u - candidate > 0.0 {
            tau = candidate;
        }
    }
    v.iter().map(|x| (x - tau).max(0.0)).collect()
}

/// Centralized solution of the graph QP by projected gradient descent over
/// the finite entries, stopped when the gradient mapping is below `1e-10`.
pub fn brute_force_oracle(d: &DistanceField, hp: &Hyperparams) -> CollaborationGraph {
    let n = d.len();
    let index: Vec<(usize, usize, f64)> = (0..n)
        .flat_map(|i| d.finite_row(i).map(move |(j, v)| (i, j, v)))
        .collect();
    let k = index.len().max(1);
    let mut w = vec![hp.mass / k as f64; index.len()];
    // Lipschitz constant of the gradient is 2λ₃.
    let step = 1.0 / (2.0 * hp.lambda3);
    for _ in 0..100_000 {
        let trial: Vec<f64> = w
            .iter()
            .zip(&index)
            .map(|(wi, &(_, _, dij))| wi - step * (hp.lambda2 * dij + 2.0 * hp.lambda3 * wi))
            .collect();
        let next = project_simplex(&trial, hp.mass);
        let mapping = next
            .iter()
            .zip(&w)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
            / step;
        w = next;
        if mapping <= 1e-10 {
            break;
        }
    }
    let mut out = DMatrix::zeros(n, n);
    for (v, &(i, j, _)) in w.iter().zip(&index) {
        out[(i, j)] = *v;
    }
    CollaborationGraph::from_parts(out, hp.mass)
}

/// Dense distance field for tests and tools that bypass the network.
pub fn distances_from_thetas(thetas: &[ModelParams], comm: &CommGraph) -> DistanceField {
    let n = thetas.len();
    let mut d = vec![f64::INFINITY; n * n];
    for i in 0..n {
        d[i * n + i] = 0.0;
        for j in comm.neighbors(i) {
            d[i * n + j] = (thetas[i].as_vector() - thetas[j].as_vector()).norm_squared();
        }
    }
    DistanceField { n, d }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::validate_collab_graph;

    fn hp(n: usize, mass: f64, b: f64) -> Hyperparams {
        Hyperparams {
            mass,
            b_smooth: b,
            lambda2: 1.0,
            lambda3: 1.0,
            ..Hyperparams::for_agents(n)
        }
    }

    fn uniform(n: usize, delta: f64) -> DistanceField {
        let mut m = DMatrix::from_element(n, n, delta);
        m.fill_diagonal(0.0);
        DistanceField::from_matrix(&m).unwrap()
    }

    #[test]
    fn smoothed_relu_at_zero() {
        let s = smoothed_relu(0.0, 1.0);
        assert_eq!((s.value, s.slope, s.curvature), (0.5, 0.5, 0.5));
    }

    #[test]
    fn smoothed_relu_large_x() {
        assert!((smoothed_relu(10.0, 1e-8).value - 10.0).abs() < 1e-9);
    }

    #[test]
    fn smoothed_relu_stable_far_left() {
        let s = smoothed_relu(-1e6, 1e-8);
        assert!(s.value > 0.0 && s.slope > 0.0 && s.curvature > 0.0);
    }

    #[test]
    fn distances_over_edges_only() {
        let c = CommGraph::from_edges(3, &[(0, 1), (1, 2)]).unwrap();
        let thetas = vec![
            ModelParams::from_slice(&[0.0]).unwrap(),
            ModelParams::from_slice(&[3.0]).unwrap(),
            ModelParams::from_slice(&[3.0]).unwrap(),
        ];
        let mut net = Network::new(c);
        let d = pairwise_distances(&thetas, &mut net).unwrap();
        assert_eq!(d.get(0, 1), 9.0);
        assert_eq!(d.get(1, 2), 0.0);
        assert_eq!(d.get(0, 2), f64::INFINITY);
        assert_eq!(net.illegal_edges(), 0);
    }

    #[test]
    fn two_agent_closed_form() {
        let d = uniform(2, 1.0);
        let hp = hp(2, 1.0, 1e-12);
        let mut net = Network::new(CommGraph::fully_connected(2));
        let dual = solve_dual(&d, &hp, &mut net).unwrap();
        assert!((dual.consensus() + 2.0).abs() < 1e-5);
        let w = recover_weights(&d, dual.consensus(), &hp).unwrap();
        assert!((w.weight(0, 1) - 0.5).abs() < 1e-12);
        assert!((w.weight(1, 0) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn uniform_distances_give_uniform_weights() {
        for n in [3, 5, 7] {
            let d = uniform(n, 2.5);
            let hp = hp(n, n as f64, 1e-8);
            let mut net = Network::new(CommGraph::fully_connected(n));
            let dual = solve_dual(&d, &hp, &mut net).unwrap();
            let w = recover_weights(&d, dual.consensus(), &hp).unwrap();
            let want = n as f64 / (n * (n - 1)) as f64;
            for i in 0..n {
                for j in 0..n {
                    let expected = if i == j { 0.0 } else { want };
                    assert!((w.weight(i, j) - expected).abs() < 1e-12);
                }
            }
            let oracle = brute_force_oracle(&d, &hp);
            assert!((oracle.weights() - w.weights()).amax() < 1e-9);
        }
    }

    #[test]
    fn far_pair_is_clipped() {
        let mut m = DMatrix::from_element(4, 4, 1.0);
        m.fill_diagonal(0.0);
        m[(0, 1)] = 100.0;
        m[(1, 0)] = 100.0;
        let d = DistanceField::from_matrix(&m).unwrap();
        let hp = hp(4, 4.0, 1e-8);
        let mut net = Network::new(CommGraph::fully_connected(4));
        let dual = solve_dual(&d, &hp, &mut net).unwrap();
        let w = recover_weights(&d, dual.consensus(), &hp).unwrap();
        assert_eq!(w.weight(0, 1), 0.0);
        validate_collab_graph(&w, &CommGraph::fully_connected(4)).unwrap();
    }

    #[test]
    fn all_zero_graph_is_reported() {
        let d = uniform(3, 1.0);
        let hp = hp(3, 3.0, 1e-8);
        assert_eq!(recover_weights(&d, 10.0, &hp).unwrap_err(), Error::AllZeroGraph);
    }

    #[test]
    fn simplex_projection_basics() {
        let p = project_simplex(&[0.5, 0.5], 1.0);
        assert_eq!(p, vec![0.5, 0.5]);
        let p = project_simplex(&[3.0, 0.0, -1.0], 1.0);
        assert_eq!(p, vec![1.0, 0.0, 0.0]);
        let p = project_simplex(&[0.2, 0.1], 2.0);
        assert!((p.iter().sum::<f64>() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn oracle_two_agent_instance() {
        let w = brute_force_oracle(&uniform(2, 1.0), &hp(2, 1.0, 1e-8));
        assert!((w.weight(0, 1) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn two_agents_get_half_mass_per_direction() {
        let thetas = vec![
            ModelParams::from_slice(&[1.0, 0.0]).unwrap(),
            ModelParams::from_slice(&[0.0, 2.0]).unwrap(),
        ];
        let hp = hp(2, 2.0, 1e-6);
        let mut net = Network::new(CommGraph::fully_connected(2));
        let out = infer_graph(&thetas, &hp, &mut net).unwrap();
        assert!((out.graph.weight(0, 1) - 1.0).abs() < 1e-12);
        assert!((out.graph.weight(1, 0) - 1.0).abs() < 1e-12);
    }
}
