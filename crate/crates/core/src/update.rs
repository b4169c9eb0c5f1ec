//! Jacobi message passing for the model parameters under a fixed
//! collaboration graph, and the stacked direct solve it must agree with.
//!
//! Agent `i` iterates
//! `θ_i ← B_i⁻¹ [b_i + 4λ₂ Σ_j W_ij θ_j]` with `B_i = A_i + (2λ₁ + 4λ₂ D_i) I`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::network::Network;
use crate::types::{AgentMemory, CollaborationGraph, Hyperparams, ModelParams};

/// `A + (2λ₁ + 4λ₂·degree) I`.
pub fn assemble_b(mem: &AgentMemory, lambda1: f64, lambda2: f64, degree: f64) -> DMatrix<f64> {
    let p = mem.dim();
    mem.a() + DMatrix::identity(p, p) * (2.0 * lambda1 + 4.0 * lambda2 * degree)
}

/// Iterate of the synchronous Jacobi solve.
#[derive(Debug, Clone)]
pub struct UpdateState {
    thetas: Vec<ModelParams>,
    factors: Vec<Cholesky<f64, Dyn>>,
    round: usize,
    residual: f64,
}

impl UpdateState {
    /// Factorizes every `B_i` once; the factors are reused by all rounds.
    pub fn new(
        initial: Vec<ModelParams>,
        graph: &CollaborationGraph,
        mems: &[AgentMemory],
        hp: &Hyperparams,
    ) -> Result<Self> {
        let n = mems.len();
        for found in [initial.len(), graph.len()] {
            if found != n {
                return Err(Error::DimensionMismatch { expected: n, found });
            }
        }
        let factors = mems
            .iter()
            .enumerate()
            .map(|(i, mem)| {
                if initial[i].dim() != mem.dim() {
                    return Err(Error::DimensionMismatch {
                        expected: mem.dim(),
                        found: initial[i].dim(),
                    });
                }
                assemble_b(mem, hp.lambda1, hp.lambda2, graph.degree(i))
                    .cholesky()
                    .ok_or(Error::SingularLocalSystem)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            thetas: initial,
            factors,
            round: 0,
            residual: f64::INFINITY,
        })
    }

    pub fn thetas(&self) -> &[ModelParams] {
        &self.thetas
    }

    pub fn into_thetas(self) -> Vec<ModelParams> {
        self.thetas
    }

    pub fn round(&self) -> usize {
        self.round
    }

    /// `max_i ‖θ_i^k − θ_i^{k−1}‖` of the last round.
    pub fn residual(&self) -> f64 {
        self.residual
    }
}

/// One synchronous round: each agent sends its current parameters to its
/// collaborators, then recomputes from what it received.
pub fn jacobi_round(
    state: &mut UpdateState,
    graph: &CollaborationGraph,
    mems: &[AgentMemory],
    hp: &Hyperparams,
    net: &mut Network,
) -> Result<()> {
    let n = mems.len();
    for i in 0..n {
        let targets: Vec<usize> = graph.support(i).collect();
        for j in targets {
            net.send_within(i, j, state.thetas[i].as_slice().to_vec(), graph)?;
        }
    }
    net.barrier();
    let mut residual: f64 = 0.0;
    let mut next = Vec::with_capacity(n);
    for i in 0..n {
        let mut rhs = mems[i].b().clone();
        for env in net.take_inbox(i) {
            let coeff = 4.0 * hp.lambda2 * graph.weight(i, env.from);
            for (r, v) in rhs.iter_mut().zip(&env.payload) {
                *r += coeff * v;
            }
        }
        let theta = state.factors[i].solve(&rhs);
        residual = residual.max((&theta - state.thetas[i].as_vector()).norm());
        next.push(ModelParams::new(theta)?);
    }
    state.thetas = next;
    state.round += 1;
    state.residual = residual;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct JacobiOutcome {
    pub thetas: Vec<ModelParams>,
    pub rounds: usize,
    pub residual: f64,
    /// Residual after each round.
    pub history: Vec<f64>,
}

/// Runs rounds until the residual drops to `tol_jacobi` or the cap is hit.
/// Hitting the cap is an error only if the residual is still above
/// `100·tol_jacobi`.
pub fn solve_models(
    initial: Vec<ModelParams>,
    graph: &CollaborationGraph,
    mems: &[AgentMemory],
    hp: &Hyperparams,
    net: &mut Network,
) -> Result<JacobiOutcome> {
    let mut state = UpdateState::new(initial, graph, mems, hp)?;
    let mut history = Vec::new();
    while state.round < hp.jacobi_iters {
        jacobi_round(&mut state, graph, mems, hp, net)?;
        history.push(state.residual);
        if state.residual <= hp.tol_jacobi {
            break;
        }
    }
    if state.residual > 100.0 * hp.tol_jacobi {
        return Err(Error::NoConvergence {
            stage: "jacobi",
            iterations: state.round,
            residual: state.residual,
        });
    }
    Ok(JacobiOutcome {
        rounds: state.round,
        residual: state.residual,
        thetas: state.into_thetas(),
        history,
    })
}

/// Solves the stacked first-order conditions
/// `(A_i + 2λ₁I)θ_i + 2λ₂ Σ_j (W_ij + W_ji)(θ_i − θ_j) = b_i` centrally.
pub fn direct_solve_oracle(
    mems: &[AgentMemory],
    graph: &CollaborationGraph,
    hp: &Hyperparams,
) -> Result<Vec<ModelParams>> {
    let n = mems.len();
    if graph.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: graph.len(),
        });
    }
    let p = mems.first().map_or(0, AgentMemory::dim);
    let mut system = DMatrix::zeros(n * p, n * p);
    let mut rhs = DVector::zeros(n * p);
    for i in 0..n {
        let mut coupling = 0.0;
        for j in 0..n {
            if i == j {
                continue;
            }
            let c = 2.0 * hp.lambda2 * (graph.weight(i, j) + graph.weight(j, i));
            coupling += c;
            for k in 0..p {
                system[(i * p + k, j * p + k)] -= c;
            }
        }
        let mut block = system.view_mut((i * p, i * p), (p, p));
        block += mems[i].a();
        for k in 0..p {
            block[(k, k)] += 2.0 * hp.lambda1 + coupling;
        }
        rhs.rows_mut(i * p, p).copy_from(mems[i].b());
    }
    let solution = system.lu().solve(&rhs).ok_or(Error::SingularLocalSystem)?;
    (0..n)
        .map(|i| ModelParams::new(solution.rows(i * p, p).into_owned()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::local::local_init;
    use crate::types::CommGraph;

    fn scalar_mem(a: f64, b: f64) -> AgentMemory {
        AgentMemory::from_parts(DMatrix::from_element(1, 1, a), DVector::from_element(1, b), 1).unwrap()
    }

    fn pair_graph(w: f64) -> CollaborationGraph {
        CollaborationGraph::from_parts(DMatrix::from_row_slice(2, 2, &[0.0, w, w, 0.0]), 2.0 * w)
    }

    fn hp(lambda1: f64, lambda2: f64) -> Hyperparams {
        Hyperparams {
            lambda1,
            lambda2,
            ..Hyperparams::for_agents(2)
        }
    }

    #[test]
    fn assemble_b_examples() {
        let zero = AgentMemory::from_parts(DMatrix::zeros(2, 2), DVector::zeros(2), 1).unwrap();
        assert_eq!(assemble_b(&zero, 0.5, 0.0, 0.0), DMatrix::identity(2, 2));
        let ident = AgentMemory::from_parts(DMatrix::identity(2, 2), DVector::zeros(2), 1).unwrap();
        assert_eq!(assemble_b(&ident, 0.0, 0.25, 1.0), DMatrix::identity(2, 2) * 2.0);
    }

    #[test]
    fn scalar_pair_iterates_toward_one() {
        let mems = vec![scalar_mem(1.0, 1.0), scalar_mem(1.0, 1.0)];
        let graph = pair_graph(1.0);
        let hp = hp(0.0, 0.25);
        let mut net = Network::new(CommGraph::fully_connected(2));
        let zero = vec![ModelParams::zeros(1), ModelParams::zeros(1)];
        let mut state = UpdateState::new(zero, &graph, &mems, &hp).unwrap();
        let mut seen = Vec::new();
        for _ in 0..3 {
            jacobi_round(&mut state, &graph, &mems, &hp, &mut net).unwrap();
            seen.push(state.thetas()[0].as_slice()[0]);
        }
        for (got, want) in seen.iter().zip([0.5, 0.75, 0.875]) {
            assert!((got - want).abs() < 1e-15, "{got} vs {want}");
        }
        let direct = direct_solve_oracle(&mems, &graph, &hp).unwrap();
        assert!((direct[0].as_slice()[0] - 1.0).abs() < 1e-14);
        assert!((direct[1].as_slice()[0] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn decoupled_system_converges_in_one_round() {
        let mems = vec![scalar_mem(2.0, 1.0), scalar_mem(0.5, 3.0)];
        let graph = pair_graph(1.0);
        let hp = hp(0.1, 0.0);
        let init: Vec<_> = mems.iter().map(|m| local_init(m, hp.lambda1).unwrap()).collect();
        let mut net = Network::new(CommGraph::fully_connected(2));
        let out = solve_models(init.clone(), &graph, &mems, &hp, &mut net).unwrap();
        assert_eq!(out.rounds, 1);
        assert_eq!(out.thetas, init);
        let direct = direct_solve_oracle(&mems, &graph, &hp).unwrap();
        for (a, b) in direct.iter().zip(&init) {
            assert!((a.as_vector() - b.as_vector()).amax() < 1e-14);
        }
    }

    #[test]
    fn empty_graph_returns_local_init() {
        let mems = vec![scalar_mem(2.0, 1.0), scalar_mem(0.5, 3.0)];
        let graph = CollaborationGraph::empty(2, 1.0);
        let hp = hp(0.1, 1.0);
        let init: Vec<_> = mems.iter().map(|m| local_init(m, hp.lambda1).unwrap()).collect();
        let mut net = Network::new(CommGraph::fully_connected(2));
        let out = solve_models(init.clone(), &graph, &mems, &hp, &mut net).unwrap();
        assert_eq!(out.thetas, init);
        assert_eq!(net.ledger().total_messages(), 0);
    }

    #[test]
    fn identical_agents_agree() {
        let mems = vec![scalar_mem(0.7, 2.0), scalar_mem(0.7, 2.0)];
        let graph = pair_graph(0.8);
        let hp = hp(0.05, 1.0);
        let init: Vec<_> = mems.iter().map(|m| local_init(m, hp.lambda1).unwrap()).collect();
        let mut net = Network::new(CommGraph::fully_connected(2));
        let out = solve_models(init, &graph, &mems, &hp, &mut net).unwrap();
        assert!((out.thetas[0].as_vector() - out.thetas[1].as_vector()).amax() < 1e-10);
    }

    #[test]
    fn cap_hit_far_from_tolerance_is_an_error() {
        let mems = vec![scalar_mem(1.0, 1.0), scalar_mem(1.0, -1.0)];
        let graph = pair_graph(1.0);
        let mut hp = hp(1e-3, 10.0);
        hp.jacobi_iters = 2;
        let init: Vec<_> = mems.iter().map(|m| local_init(m, hp.lambda1).unwrap()).collect();
        let mut net = Network::new(CommGraph::fully_connected(2));
        let err = solve_models(init, &graph, &mems, &hp, &mut net).unwrap_err();
        assert!(matches!(err, Error::NoConvergence { stage: "jacobi", .. }));
    }

    #[test]
    fn full_round_on_complete_graph_sends_n_times_n_minus_one() {
        let n = 6;
        let mems: Vec<_> = (0..n).map(|i| scalar_mem(1.0, i as f64)).collect();
        let mut w = DMatrix::from_element(n, n, 1.0 / 5.0);
        w.fill_diagonal(0.0);
        let graph = CollaborationGraph::from_parts(w, 6.0);
        let hp = Hyperparams::for_agents(n);
        let init: Vec<_> = mems.iter().map(|m| local_init(m, hp.lambda1).unwrap()).collect();
        let mut state = UpdateState::new(init, &graph, &mems, &hp).unwrap();
        let mut net = Network::new(CommGraph::fully_connected(n));
        jacobi_round(&mut state, &graph, &mems, &hp, &mut net).unwrap();
        assert_eq!(net.ledger().total_messages(), n * (n - 1));
        assert_eq!(net.ledger().total_scalars(), n * (n - 1));
    }
}
