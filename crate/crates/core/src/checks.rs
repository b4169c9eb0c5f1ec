//! Randomized equivalence suites comparing the decentralized solvers with
//! their centralized counterparts. Used by `colearn oracle-check` and by the
//! acceptance tests.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::experiment::{ExperimentConfig, Scenario};
use crate::graph::{brute_force_oracle, recover_weights, solve_dual, DistanceField};
use crate::local::{
    batch_loss, featurize, hessian_gradient, local_init, solve_spd, update_memory, FeatureBasis, Inputs, LossKind,
    TaskBatch, Targets,
};
use crate::network::Network;
use crate::tasks::{next_batch, sample_regression_scenario};
use crate::types::{validate_collab_graph, AgentMemory, CollaborationGraph, CommGraph, Hyperparams, ModelParams};
use crate::update::{direct_solve_oracle, solve_models};

/// Symmetric random distances in `[0, 10)` on a complete graph of `n` agents.
pub fn random_distances(n: usize, rng: &mut impl Rng) -> DistanceField {
    let mut d = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let v = rng.random_range(0.0..10.0);
            d[(i, j)] = v;
            d[(j, i)] = v;
        }
    }
    DistanceField::from_matrix(&d).expect("valid by construction")
}

/// Summary of the graph suite.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GraphSuiteReport {
    pub instances: usize,
    /// Max `‖W_solver − W_oracle‖_F`.
    pub max_weight_error: f64,
    /// Max `|‖W‖_1 − m|` after rescale.
    pub max_mass_residual: f64,
    /// Max smoothed dual residual `|φ(z) − m|` at termination.
    pub max_dual_residual: f64,
    pub max_newton_iterations: usize,
    pub max_asymmetry: f64,
    /// Number of solver outputs that failed graph validation.
    pub invalid_graphs: usize,
}

/// `instances` random problems with `N ∈ [3, 8]`, `λ₂ = λ₃ = 1`, `m = N`.
pub fn graph_suite(instances: usize, seed: u64, b_smooth: f64) -> Result<GraphSuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GraphSuiteReport {
        instances,
        ..Default::default()
    };
    for _ in 0..instances {
        let n = rng.random_range(3..=8);
        let d = random_distances(n, &mut rng);
        let hp = Hyperparams {
            lambda2: 1.0,
            lambda3: 1.0,
            mass: n as f64,
            b_smooth,
            ..Hyperparams::for_agents(n)
        };
        let comm = CommGraph::fully_connected(n);
        let mut net = Network::new(comm.clone());
        let dual = solve_dual(&d, &hp, &mut net)?;
        let w = recover_weights(&d, dual.consensus(), &hp)?;
        let oracle = brute_force_oracle(&d, &hp);
        report.max_weight_error = report.max_weight_error.max((w.weights() - oracle.weights()).norm());
        report.max_mass_residual = report.max_mass_residual.max((w.l1() - hp.mass).abs());
        report.max_dual_residual = report.max_dual_residual.max(dual.residual);
        report.max_newton_iterations = report.max_newton_iterations.max(dual.iterations);
        report.max_asymmetry = report.max_asymmetry.max(w.max_asymmetry());
        if validate_collab_graph(&w, &comm).is_err() {
            report.invalid_graphs += 1;
        }
    }
    Ok(report)
}

/// Random PSD matrix `GᵀG / rows` with `rows = dim + 5`.
pub fn random_psd(dim: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    let rows = dim + 5;
    let g = DMatrix::from_fn(rows, dim, |_, _| rng.random_range(-1.0..1.0));
    let mut a = g.transpose() * g / rows as f64;
    let sym = (&a + a.transpose()) * 0.5;
    a.copy_from(&sym);
    a
}

/// Random symmetric collaboration graph with roughly half the pairs active.
pub fn random_collab_graph(n: usize, mass: f64, rng: &mut impl Rng) -> CollaborationGraph {
    let mut w = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            if rng.random_bool(0.6) {
                let v = rng.random_range(0.1..1.0);
                w[(i, j)] = v;
                w[(j, i)] = v;
            }
        }
    }
    if w.sum() == 0.0 && n > 1 {
        w[(0, 1)] = 1.0;
        w[(1, 0)] = 1.0;
    }
    let s = w.sum();
    CollaborationGraph::from_parts(w * (mass / s), mass)
}

/// One random Jacobi instance.
#[derive(Debug, Clone)]
pub struct JacobiInstance {
    pub mems: Vec<AgentMemory>,
    pub graph: CollaborationGraph,
    pub hp: Hyperparams,
}

/// `N ∈ [2, 6]`, `P ∈ [1, 20]`, `λ₁` log-uniform in `[1e-3, 1e-1]`,
/// `λ₂ ∈ [0.1, 2]`.
pub fn random_jacobi_instance(rng: &mut impl Rng) -> JacobiInstance {
    let n = rng.random_range(2..=6);
    let p = rng.random_range(1..=20);
    let mems = (0..n)
        .map(|_| {
            let a = random_psd(p, rng);
            let b = DVector::from_fn(p, |_, _| rng.random_range(-2.0..2.0));
            AgentMemory::from_parts(a, b, 1).expect("valid by construction")
        })
        .collect();
    let hp = Hyperparams {
        lambda1: 10f64.powf(rng.random_range(-3.0..-1.0)),
        lambda2: rng.random_range(0.1..2.0),
        jacobi_iters: 100_000,
        tol_jacobi: 1e-12,
        ..Hyperparams::for_agents(n)
    };
    let graph = random_collab_graph(n, hp.mass, rng);
    JacobiInstance { mems, graph, hp }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct JacobiSuiteReport {
    pub instances: usize,
    /// Max over agents and instances of `‖θ_jacobi − θ_direct‖ / max(‖θ_direct‖, 1e-12)`.
    pub max_relative_error: f64,
    pub max_rounds: usize,
    pub illegal_edges: usize,
}

pub fn jacobi_suite(instances: usize, seed: u64) -> Result<JacobiSuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = JacobiSuiteReport {
        instances,
        ..Default::default()
    };
    for _ in 0..instances {
        let inst = random_jacobi_instance(&mut rng);
        let init = inst
            .mems
            .iter()
            .map(|m| local_init(m, inst.hp.lambda1))
            .collect::<Result<Vec<_>>>()?;
        let mut net = Network::new(CommGraph::fully_connected(inst.mems.len()));
        let out = solve_models(init, &inst.graph, &inst.mems, &inst.hp, &mut net)?;
        let direct = direct_solve_oracle(&inst.mems, &inst.graph, &inst.hp)?;
        for (a, b) in out.thetas.iter().zip(&direct) {
            let err = (a.as_vector() - b.as_vector()).norm() / b.as_vector().norm().max(1e-12);
            report.max_relative_error = report.max_relative_error.max(err);
        }
        report.max_rounds = report.max_rounds.max(out.rounds);
        report.illegal_edges += net.illegal_edges();
    }
    Ok(report)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MemorySuiteReport {
    pub instances: usize,
    pub batches: usize,
    /// Max `‖θ_memory − θ_pooled‖ / ‖θ_pooled‖`.
    pub max_relative_error: f64,
}

/// Ridge regression on the concatenation of `batches`, each batch weighted
/// by `1/(T·n_k)`, solved by QR of the augmented design.
pub fn pooled_ridge(batches: &[(Vec<f64>, Vec<f64>)], harmonics: usize, lambda1: f64) -> DVector<f64> {
    let f = 3 + 2 * harmonics;
    let t = batches.len() as f64;
    let rows: usize = batches.iter().map(|(x, _)| x.len()).sum::<usize>() + f;
    let mut design = DMatrix::zeros(rows, f);
    let mut target = DVector::zeros(rows);
    let mut r = 0;
    for (xs, ys) in batches {
        let scale = (2.0 / (t * xs.len() as f64)).sqrt();
        let feats = featurize(xs, harmonics);
        for k in 0..xs.len() {
            for c in 0..f {
                design[(r, c)] = scale * feats[(k, c)];
            }
            target[r] = scale * ys[k];
            r += 1;
        }
    }
    let ridge = (2.0 * lambda1).sqrt();
    for c in 0..f {
        design[(r + c, c)] = ridge;
    }
    let qr = design.qr();
    let qtb = qr.q().transpose() * target;
    qr.r().solve_upper_triangular(&qtb).expect("ridge keeps R nonsingular")
}

/// Regression memories after `batches` timestamps versus pooled ridge,
/// across `instances` scenario seeds and every agent.
pub fn memory_suite(instances: usize, batches: usize, seed: u64, lambda1: f64) -> Result<MemorySuiteReport> {
    let mut report = MemorySuiteReport {
        instances,
        batches,
        ..Default::default()
    };
    for k in 0..instances as u64 {
        let scenario = sample_regression_scenario(6, seed.wrapping_add(k), None)?;
        let p = scenario.basis().dim();
        for agent in 0..scenario.agents() {
            let mut mem = AgentMemory::empty(p);
            let mut raw = Vec::new();
            for t in 1..=batches {
                let batch = next_batch(&scenario, agent, t, seed ^ 0x5eed)?;
                let (Inputs::Scalars(xs), Targets::Real(ys)) = (&batch.inputs, &batch.targets) else {
                    unreachable!("regression batches are scalar");
                };
                let x = featurize(xs, scenario.harmonics);
                let alpha = DVector::zeros(p);
                let (h, g) = hessian_gradient(&x, &batch.targets, LossKind::Mse, &alpha)?;
                mem = update_memory(&mem, &h, &g, &alpha)?;
                raw.push((xs.clone(), ys.clone()));
            }
            let theta = local_init(&mem, lambda1)?;
            let pooled = pooled_ridge(&raw, scenario.harmonics, lambda1);
            let err = (theta.as_vector() - &pooled).norm() / pooled.norm().max(1e-300);
            report.max_relative_error = report.max_relative_error.max(err);
        }
    }
    Ok(report)
}

/// Ridge-regularized objective over pooled batches, each batch weighted
/// equally: `(1/T) Σ_k ℓ_k(θ) + λ₁‖θ‖²`.
fn pooled_objective(feats: &[DMatrix<f64>], batches: &[TaskBatch], loss: LossKind, lambda1: f64, theta: &DVector<f64>) -> Result<f64> {
    let mut total = 0.0;
    for (x, batch) in feats.iter().zip(batches) {
        total += batch_loss(x, &batch.targets, loss, theta)?;
    }
    Ok(total / batches.len() as f64 + lambda1 * theta.norm_squared())
}

/// Exact minimizer of the pooled objective by damped Newton.
pub fn fit_pooled(batches: &[TaskBatch], basis: FeatureBasis, loss: LossKind, lambda1: f64) -> Result<DVector<f64>> {
    if batches.is_empty() {
        return Err(Error::Config("pooled fit needs at least one batch".into()));
    }
    let feats = batches
        .iter()
        .map(|b| basis.featurize(&b.inputs))
        .collect::<Result<Vec<_>>>()?;
    let p = loss.param_dim(basis.dim());
    let t = batches.len() as f64;
    let mut theta = DVector::zeros(p);
    let mut value = pooled_objective(&feats, batches, loss, lambda1, &theta)?;
    for _ in 0..200 {
        let mut h = DMatrix::identity(p, p) * (2.0 * lambda1);
        let mut g = &theta * (2.0 * lambda1);
        for (x, batch) in feats.iter().zip(batches) {
            let (hk, gk) = hessian_gradient(x, &batch.targets, loss, &theta)?;
            h += hk / t;
            g += gk / t;
        }
        let step = solve_spd(h, &g)?;
        let mut scale = 1.0;
        loop {
            let trial = &theta - &step * scale;
            let v = pooled_objective(&feats, batches, loss, lambda1, &trial)?;
            if v <= value || scale < 1e-10 {
                theta = trial;
                value = v;
                break;
            }
            scale *= 0.5;
        }
        if step.norm() * scale <= 1e-12 * (1.0 + theta.norm()) {
            return Ok(theta);
        }
    }
    Err(Error::NoConvergence {
        stage: "pooled fit",
        iterations: 200,
        residual: f64::NAN,
    })
}

/// Per-agent metric of the centralized reference: for each group, one model
/// fit on every batch of every member up to `config.timestamps`, scored on
/// that group's evaluation data.
pub fn pooled_reference(config: &ExperimentConfig) -> Result<Vec<f64>> {
    let scenario = Scenario::sample(config)?;
    let groups = scenario.groups().to_vec();
    let hp = config.hyperparams();
    let group_count = groups.iter().max().map_or(0, |g| g + 1);
    let mut models = Vec::with_capacity(group_count);
    for g in 0..group_count {
        let mut batches = Vec::new();
        for t in 1..=config.timestamps {
            for agent in (0..groups.len()).filter(|&i| groups[i] == g) {
                batches.push(scenario.batch(agent, t, config.seeds.run)?);
            }
        }
        models.push(fit_pooled(&batches, scenario.basis(), scenario.loss(), hp.lambda1)?);
    }
    (0..groups.len())
        .map(|i| scenario.evaluate(i, &ModelParams::new(models[groups[i]].clone())?))
        .collect()
}

impl fmt::Display for GraphSuiteReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "graph suite: {} instances", self.instances)?;
        writeln!(f, "  max ‖W - W_oracle‖_F     {:.3e}", self.max_weight_error)?;
        writeln!(f, "  max |‖W‖_1 - m|          {:.3e}", self.max_mass_residual)?;
        writeln!(f, "  max dual residual        {:.3e}", self.max_dual_residual)?;
        writeln!(f, "  max Newton iterations    {}", self.max_newton_iterations)?;
        writeln!(f, "  max |W - W^T|            {:.3e}", self.max_asymmetry)?;
        write!(f, "  invalid graphs           {}", self.invalid_graphs)
    }
}

impl fmt::Display for JacobiSuiteReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "jacobi suite: {} instances", self.instances)?;
        writeln!(f, "  max relative error       {:.3e}", self.max_relative_error)?;
        writeln!(f, "  max rounds               {}", self.max_rounds)?;
        write!(f, "  illegal edges            {}", self.illegal_edges)
    }
}

impl fmt::Display for MemorySuiteReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "memory suite: {} scenarios x {} batches", self.instances, self.batches)?;
        write!(f, "  max relative error       {:.3e}", self.max_relative_error)
    }
}
