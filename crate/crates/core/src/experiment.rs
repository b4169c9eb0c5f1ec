//! End-to-end runs: per-timestamp local learning, graph inference and
//! Jacobi refinement, the ablation variants, CSV output, and black-box
//! hyperparameter search.

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::infer_graph;
use crate::local::{hessian_gradient, local_init, solve_spd, update_memory, FeatureBasis, LossKind, TaskBatch};
use crate::metrics::{cumulative, eval_accuracy, eval_regression, gmse, EvalGrid, MetricKind, MetricRecord, GRID_POINTS};
use crate::network::{make_comm_graph, Network, TopologyKind, TopologySpec};
use crate::tasks::{
    next_batch, next_class_batch, oracle_collaboration_graph, sample_classification_scenario,
    sample_regression_scenario, ClassificationScenario, RegressionScenario,
};
use crate::types::{validate_collab_graph, AgentMemory, CollaborationGraph, Hyperparams, ModelParams};
use crate::update::solve_models;

/// Header of the per-agent results CSV.
pub const CSV_HEADER: [&str; 10] = [
    "run_seed",
    "t",
    "agent",
    "metric_kind",
    "metric_value",
    "gmse",
    "messages",
    "payload_scalars",
    "rounds_graph",
    "rounds_jacobi",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    Regression,
    Classification,
}

/// Pipeline variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Memory, graph inference and collaborative refinement.
    Delama,
    /// Memory only; no collaboration.
    Wc,
    /// Collaboration with memory reset every timestamp.
    Wm,
    /// Same pipeline as `Wc`, kept as a separately named baseline.
    Local,
    /// Every agent adopts the model fitted to the pooled memories.
    Avg,
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "delama" => Ok(Variant::Delama),
            "wc" => Ok(Variant::Wc),
            "wm" => Ok(Variant::Wm),
            "local" => Ok(Variant::Local),
            "avg" => Ok(Variant::Avg),
            other => Err(Error::Config(format!("unknown variant {other:?}"))),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Delama => "delama",
            Variant::Wc => "wc",
            Variant::Wm => "wm",
            Variant::Local => "local",
            Variant::Avg => "avg",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopologyName {
    FullyConnected,
    ErdosRenyi,
    BarabasiAlbert,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologyConfig {
    pub kind: TopologyName,
    /// Edge probability (Erdős–Rényi only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    /// Edges per new node (Barabási–Albert only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attach: Option<usize>,
    #[serde(default)]
    pub seed: u64,
}

impl Default for TopologyConfig {
    fn default() -> Self {
        Self {
            kind: TopologyName::FullyConnected,
            p: None,
            attach: None,
            seed: 0,
        }
    }
}

impl TopologyConfig {
    pub fn spec(&self, agents: usize) -> Result<TopologySpec> {
        let kind = match (self.kind, self.p, self.attach) {
            (TopologyName::FullyConnected, None, None) => TopologyKind::FullyConnected,
            (TopologyName::ErdosRenyi, Some(p), None) => TopologyKind::ErdosRenyi { p },
            (TopologyName::BarabasiAlbert, None, Some(attach)) => TopologyKind::BarabasiAlbert { attach },
            _ => {
                return Err(Error::Config(
                    "topology: erdos_renyi needs only `p`, barabasi_albert needs only `attach`".into(),
                ))
            }
        };
        Ok(TopologySpec {
            kind,
            agents,
            seed: self.seed,
        })
    }
}

/// Partial hyperparameter overrides; unset fields fall back to
/// [`Hyperparams::for_agents`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda3: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mass: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b_smooth: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub newton_iters: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jacobi_iters: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol_dual: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol_jacobi: Option<f64>,
}

impl HyperConfig {
    pub fn resolve(&self, agents: usize) -> Hyperparams {
        let d = Hyperparams::for_agents(agents);
        Hyperparams {
            lambda1: self.lambda1.unwrap_or(d.lambda1),
            lambda2: self.lambda2.unwrap_or(d.lambda2),
            lambda3: self.lambda3.unwrap_or(d.lambda3),
            mass: self.mass.unwrap_or(d.mass),
            b_smooth: self.b_smooth.unwrap_or(d.b_smooth),
            newton_iters: self.newton_iters.unwrap_or(d.newton_iters),
            jacobi_iters: self.jacobi_iters.unwrap_or(d.jacobi_iters),
            tol_dual: self.tol_dual.unwrap_or(d.tol_dual),
            tol_jacobi: self.tol_jacobi.unwrap_or(d.tol_jacobi),
        }
    }

    pub fn from_params(hp: &Hyperparams) -> Self {
        Self {
            lambda1: Some(hp.lambda1),
            lambda2: Some(hp.lambda2),
            lambda3: Some(hp.lambda3),
            mass: Some(hp.mass),
            b_smooth: Some(hp.b_smooth),
            newton_iters: Some(hp.newton_iters),
            jacobi_iters: Some(hp.jacobi_iters),
            tol_dual: Some(hp.tol_dual),
            tol_jacobi: Some(hp.tol_jacobi),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedConfig {
    #[serde(default)]
    pub scenario: u64,
    #[serde(default)]
    pub run: u64,
}

fn default_alternations() -> usize {
    1
}

fn default_variant() -> Variant {
    Variant::Delama
}

/// Everything needed to reproduce one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: ScenarioKind,
    pub agents: usize,
    pub timestamps: usize,
    #[serde(default = "default_variant")]
    pub variant: Variant,
    /// Forces the regression group count instead of drawing it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group_count: Option<usize>,
    /// Graph/model alternations per timestamp.
    #[serde(default = "default_alternations")]
    pub alternations: usize,
    #[serde(default)]
    pub topology: TopologyConfig,
    #[serde(default)]
    pub hyper: HyperConfig,
    #[serde(default)]
    pub seeds: SeedConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

impl ExperimentConfig {
    /// Six agents in two groups on a complete graph, ten timestamps.
    pub fn regression_default() -> Self {
        Self {
            scenario: ScenarioKind::Regression,
            agents: 6,
            timestamps: 10,
            variant: Variant::Delama,
            group_count: Some(2),
            alternations: 1,
            topology: TopologyConfig::default(),
            hyper: HyperConfig::default(),
            seeds: SeedConfig::default(),
            output: None,
        }
    }

    /// Ten agents in two groups, five timestamps (one class each).
    pub fn classification_default() -> Self {
        Self {
            scenario: ScenarioKind::Classification,
            agents: 10,
            timestamps: 5,
            group_count: None,
            ..Self::regression_default()
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn hyperparams(&self) -> Hyperparams {
        self.hyper.resolve(self.agents)
    }

    pub fn validate(&self) -> Result<()> {
        if self.timestamps == 0 {
            return Err(Error::Config("timestamps must be >= 1".into()));
        }
        if self.agents == 0 {
            return Err(Error::Config("agents must be >= 1".into()));
        }
        if self.alternations == 0 {
            return Err(Error::Config("alternations must be >= 1".into()));
        }
        if self.scenario == ScenarioKind::Classification && self.group_count.is_some() {
            return Err(Error::Config("group_count applies to regression only".into()));
        }
        self.topology.spec(self.agents)?;
        self.hyperparams().validate()
    }
}

/// A sampled scenario with its evaluation data.
#[derive(Debug, Clone)]
pub enum Scenario {
    Regression {
        spec: RegressionScenario,
        grids: Vec<EvalGrid>,
    },
    Classification(ClassificationScenario),
}

impl Scenario {
    pub fn sample(config: &ExperimentConfig) -> Result<Self> {
        match config.scenario {
            ScenarioKind::Regression => {
                let spec = sample_regression_scenario(config.agents, config.seeds.scenario, config.group_count)?;
                let grids = spec
                    .functions
                    .iter()
                    .map(|f| EvalGrid::new(f, spec.harmonics, GRID_POINTS))
                    .collect();
                Ok(Scenario::Regression { spec, grids })
            }
            ScenarioKind::Classification => Ok(Scenario::Classification(sample_classification_scenario(
                config.agents,
                config.seeds.scenario,
            )?)),
        }
    }

    pub fn groups(&self) -> &[usize] {
        match self {
            Scenario::Regression { spec, .. } => &spec.groups,
            Scenario::Classification(spec) => &spec.groups,
        }
    }

    pub fn basis(&self) -> FeatureBasis {
        match self {
            Scenario::Regression { spec, .. } => spec.basis(),
            Scenario::Classification(spec) => spec.basis(),
        }
    }

    pub fn loss(&self) -> LossKind {
        match self {
            Scenario::Regression { .. } => LossKind::Mse,
            Scenario::Classification(spec) => LossKind::CrossEntropy { classes: spec.classes },
        }
    }

    pub fn param_dim(&self) -> usize {
        self.loss().param_dim(self.basis().dim())
    }

    pub fn metric_kind(&self) -> MetricKind {
        match self {
            Scenario::Regression { .. } => MetricKind::Mse,
            Scenario::Classification(_) => MetricKind::Accuracy,
        }
    }

    pub fn batch(&self, agent: usize, t: usize, seed: u64) -> Result<TaskBatch> {
        match self {
            Scenario::Regression { spec, .. } => next_batch(spec, agent, t, seed),
            Scenario::Classification(spec) => next_class_batch(spec, agent, t, seed),
        }
    }

    pub fn evaluate(&self, agent: usize, theta: &ModelParams) -> Result<f64> {
        let group = self.groups()[agent];
        match self {
            Scenario::Regression { grids, .. } => eval_regression(theta, &grids[group]),
            Scenario::Classification(spec) => {
                eval_accuracy(theta, &spec.test_sets[group], spec.basis(), spec.classes)
            }
        }
    }
}

/// State of a run between timestamps.
#[derive(Debug, Clone)]
pub struct Simulation {
    config: ExperimentConfig,
    hp: Hyperparams,
    scenario: Scenario,
    net: Network,
    memories: Vec<AgentMemory>,
    thetas: Vec<ModelParams>,
    graph: Option<CollaborationGraph>,
    oracle: Option<CollaborationGraph>,
    t: usize,
}

impl Simulation {
    pub fn new(config: &ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let hp = config.hyperparams();
        let scenario = Scenario::sample(config)?;
        let comm = make_comm_graph(&config.topology.spec(config.agents)?)?;
        let p = scenario.param_dim();
        let oracle = oracle_collaboration_graph(scenario.groups(), hp.mass).ok();
        Ok(Self {
            config: config.clone(),
            hp,
            net: Network::new(comm),
            memories: vec![AgentMemory::empty(p); config.agents],
            thetas: vec![ModelParams::zeros(p); config.agents],
            graph: None,
            oracle,
            scenario,
            t: 0,
        })
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn memories(&self) -> &[AgentMemory] {
        &self.memories
    }

    pub fn thetas(&self) -> &[ModelParams] {
        &self.thetas
    }

    /// Collaboration graph inferred at the latest timestamp, if the variant infers one.
    pub fn graph(&self) -> Option<&CollaborationGraph> {
        self.graph.as_ref()
    }

    pub fn oracle(&self) -> Option<&CollaborationGraph> {
        self.oracle.as_ref()
    }

    pub fn hyperparams(&self) -> &Hyperparams {
        &self.hp
    }

    pub fn timestamp(&self) -> usize {
        self.t
    }

    /// Draws the next timestamp's batches and processes them.
    pub fn step(&mut self) -> Result<MetricRecord> {
        let t = self.t + 1;
        let batches = (0..self.config.agents)
            .map(|i| self.scenario.batch(i, t, self.config.seeds.run))
            .collect::<Result<Vec<_>>>()?;
        run_timestep(self, &batches)
    }
}

/// Processes one timestamp: local learning for every agent, then the
/// variant's collaboration step, then evaluation.
pub fn run_timestep(sim: &mut Simulation, batches: &[TaskBatch]) -> Result<MetricRecord> {
    let n = sim.config.agents;
    if batches.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: batches.len(),
        });
    }
    let messages_before = sim.net.ledger().total_messages();
    let scalars_before = sim.net.ledger().total_scalars();
    let basis = sim.scenario.basis();
    let loss = sim.scenario.loss();
    let p = sim.scenario.param_dim();
    let alpha = DVector::zeros(p);
    let variant = sim.config.variant;

    let mut local = Vec::with_capacity(n);
    for (i, batch) in batches.iter().enumerate() {
        let x = basis.featurize(&batch.inputs)?;
        let (h, g) = hessian_gradient(&x, &batch.targets, loss, &alpha)?;
        let base = if variant == Variant::Wm {
            AgentMemory::empty(p)
        } else {
            sim.memories[i].clone()
        };
        sim.memories[i] = update_memory(&base, &h, &g, &alpha)?;
        local.push(local_init(&sim.memories[i], sim.hp.lambda1)?);
    }

    let mut rounds_graph = 0;
    let mut rounds_jacobi = 0;
    let mut graph = None;
    let thetas = match variant {
        Variant::Wc | Variant::Local => local,
        Variant::Delama | Variant::Wm => {
            let mut thetas = local;
            for _ in 0..sim.config.alternations {
                let inferred = infer_graph(&thetas, &sim.hp, &mut sim.net)?;
                validate_collab_graph(&inferred.graph, sim.net.comm())?;
                rounds_graph += inferred.dual.iterations;
                let solved = solve_models(thetas, &inferred.graph, &sim.memories, &sim.hp, &mut sim.net)?;
                rounds_jacobi += solved.rounds;
                thetas = solved.thetas;
                graph = Some(inferred.graph);
            }
            thetas
        }
        Variant::Avg => pooled_model(&sim.memories, &sim.hp, &mut sim.net)?,
    };

    let per_agent = thetas
        .iter()
        .enumerate()
        .map(|(i, theta)| sim.scenario.evaluate(i, theta))
        .collect::<Result<Vec<_>>>()?;
    let graph_error = match (&graph, &sim.oracle) {
        (Some(w), Some(oracle)) => Some(gmse(w, oracle)?),
        _ => None,
    };
    sim.thetas = thetas;
    sim.graph = graph;
    sim.t += 1;
    let ledger = sim.net.ledger();
    Ok(MetricRecord {
        t: sim.t,
        kind: sim.scenario.metric_kind(),
        per_agent,
        gmse: graph_error,
        messages: ledger.total_messages() - messages_before,
        payload_scalars: ledger.total_scalars() - scalars_before,
        rounds_graph,
        rounds_jacobi,
    })
}

/// `((Σ A_i) + 2λ₁I)⁻¹ Σ b_i`, with the sums gathered over the network.
pub fn pooled_model(mems: &[AgentMemory], hp: &Hyperparams, net: &mut Network) -> Result<Vec<ModelParams>> {
    let p = mems.first().map_or(0, AgentMemory::dim);
    let packed: Vec<Vec<f64>> = mems
        .iter()
        .map(|m| m.a().iter().chain(m.b().iter()).cloned().collect())
        .collect();
    let agg = net.aggregate_sum(&packed)?;
    agg.per_agent
        .iter()
        .map(|sum| {
            let a = DMatrix::from_column_slice(p, p, &sum[..p * p]);
            let b = DVector::from_column_slice(&sum[p * p..]);
            ModelParams::new(solve_spd(a + DMatrix::identity(p, p) * (2.0 * hp.lambda1), &b)?)
        })
        .collect()
}

/// Records and network audit for a finished run.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub records: Vec<MetricRecord>,
    pub illegal_edges: usize,
    pub ledger: crate::network::MessageLedger,
}

/// Runs all timestamps; writes the CSV when the config names an output path.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunOutput> {
    let mut sim = Simulation::new(config)?;
    let mut records = Vec::with_capacity(config.timestamps);
    for _ in 0..config.timestamps {
        records.push(sim.step()?);
    }
    if let Some(path) = &config.output {
        let file = std::fs::File::create(path)?;
        write_records_csv(config.seeds.run, &records, std::io::BufWriter::new(file))?;
    }
    Ok(RunOutput {
        records,
        illegal_edges: sim.net.illegal_edges(),
        ledger: sim.net.ledger().clone(),
    })
}

/// Naive comparator: every agent uses the pooled-memory global model.
pub fn run_baseline_avg(config: &ExperimentConfig) -> Result<RunOutput> {
    run_experiment(&ExperimentConfig {
        variant: Variant::Avg,
        ..config.clone()
    })
}

/// One row per agent per timestamp.
pub fn write_records_csv<W: Write>(run_seed: u64, records: &[MetricRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::Io(e.to_string());
    w.write_record(CSV_HEADER).map_err(io)?;
    for r in records {
        for (agent, value) in r.per_agent.iter().enumerate() {
            w.write_record([
                run_seed.to_string(),
                r.t.to_string(),
                agent.to_string(),
                r.kind.as_str().to_string(),
                value.to_string(),
                r.gmse.map(|g| g.to_string()).unwrap_or_default(),
                r.messages.to_string(),
                r.payload_scalars.to_string(),
                r.rounds_graph.to_string(),
                r.rounds_jacobi.to_string(),
            ])
            .map_err(io)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Cumulative task loss of a run: mean MSE, or mean error rate for classification.
pub fn run_loss(records: &[MetricRecord]) -> Result<f64> {
    let c = cumulative(records)?;
    Ok(match records[0].kind {
        MetricKind::Mse => c,
        MetricKind::Accuracy => 1.0 - c,
    })
}

/// Outcome of [`meta_tune`].
#[derive(Debug, Clone, PartialEq)]
pub struct TuneReport {
    pub best: Hyperparams,
    pub train_loss: f64,
    pub val_loss: f64,
    /// `(candidate, mean train loss)` in sampling order.
    pub candidates: Vec<(Hyperparams, f64)>,
}

pub const SEARCH_RANGE: (f64, f64) = (1e-4, 1e2);

/// Draws `budget` candidates log-uniformly over `(λ₁, λ₂, λ₃)`.
pub fn sample_candidates(base: &Hyperparams, budget: usize, search_seed: u64) -> Vec<Hyperparams> {
    let mut rng = ChaCha8Rng::seed_from_u64(search_seed);
    let (lo, hi) = (SEARCH_RANGE.0.ln(), SEARCH_RANGE.1.ln());
    (0..budget)
        .map(|_| Hyperparams {
            lambda1: rng.random_range(lo..=hi).exp(),
            lambda2: rng.random_range(lo..=hi).exp(),
            lambda3: rng.random_range(lo..=hi).exp(),
            ..base.clone()
        })
        .collect()
}

/// Mean run loss of `hp` over scenario seeds; failed runs count as `+∞`.
pub fn mean_loss(template: &ExperimentConfig, hp: &Hyperparams, seeds: &[u64]) -> f64 {
    let losses = map_seeds(seeds, |seed| {
        let config = ExperimentConfig {
            hyper: HyperConfig::from_params(hp),
            seeds: SeedConfig { scenario: seed, run: seed },
            output: None,
            ..template.clone()
        };
        run_experiment(&config)
            .and_then(|out| run_loss(&out.records))
            .unwrap_or(f64::INFINITY)
    });
    losses.iter().sum::<f64>() / losses.len() as f64
}

#[cfg(feature = "parallel")]
fn map_seeds(seeds: &[u64], f: impl Fn(u64) -> f64 + Sync + Send) -> Vec<f64> {
    use rayon::prelude::*;
    seeds.par_iter().map(|&s| f(s)).collect()
}

#[cfg(not(feature = "parallel"))]
fn map_seeds(seeds: &[u64], f: impl Fn(u64) -> f64) -> Vec<f64> {
    seeds.iter().map(|&s| f(s)).collect()
}

/// Random search over the regularization weights, scored by mean cumulative
/// loss over `train_seeds`; the winner is re-scored on `val_seeds`.
pub fn meta_tune(
    template: &ExperimentConfig,
    budget: usize,
    train_seeds: &[u64],
    val_seeds: &[u64],
    search_seed: u64,
) -> Result<TuneReport> {
    if budget == 0 {
        return Err(Error::Config("budget must be >= 1".into()));
    }
    if train_seeds.is_empty() || val_seeds.is_empty() {
        return Err(Error::Config("meta_tune needs train and validation seeds".into()));
    }
    let base = template.hyperparams();
    let candidates: Vec<(Hyperparams, f64)> = sample_candidates(&base, budget, search_seed)
        .into_iter()
        .map(|hp| {
            let loss = mean_loss(template, &hp, train_seeds);
            (hp, loss)
        })
        .collect();
    let (best, train_loss) = candidates
        .iter()
        .fold(None::<&(Hyperparams, f64)>, |acc, c| match acc {
            Some(a) if a.1 <= c.1 => Some(a),
            _ => Some(c),
        })
        .cloned()
        .expect("budget >= 1");
    let val_loss = mean_loss(template, &best, val_seeds);
    Ok(TuneReport {
        best,
        train_loss,
        val_loss,
        candidates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(variant: Variant) -> ExperimentConfig {
        ExperimentConfig {
            timestamps: 3,
            variant,
            seeds: SeedConfig { scenario: 4, run: 9 },
            ..ExperimentConfig::regression_default()
        }
    }

    #[test]
    fn config_round_trips_through_toml() {
        let config = small(Variant::Wm);
        let text = config.to_toml().unwrap();
        assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), config);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = "scenario = \"regression\"\nagents = 6\ntimestamps = 2\nbogus = 1\n";
        assert!(ExperimentConfig::from_toml(text).is_err());
        let text = "scenario = \"regression\"\nagents = 6\ntimestamps = 2\n[hyper]\nlambda4 = 1.0\n";
        assert!(ExperimentConfig::from_toml(text).is_err());
    }

    #[test]
    fn topology_fields_must_match_kind() {
        let text = "scenario = \"regression\"\nagents = 6\ntimestamps = 2\n[topology]\nkind = \"erdos_renyi\"\n";
        assert!(ExperimentConfig::from_toml(text).is_err());
        let text = "scenario = \"regression\"\nagents = 6\ntimestamps = 2\n[topology]\nkind = \"erdos_renyi\"\np = 0.5\nseed = 3\n";
        assert!(ExperimentConfig::from_toml(text).is_ok());
    }

    #[test]
    fn variants_parse() {
        for v in ["delama", "wc", "wm", "local", "avg"] {
            assert_eq!(v.parse::<Variant>().unwrap().to_string(), v);
        }
        assert!("fedavg".parse::<Variant>().is_err());
    }

    #[test]
    fn without_collaboration_models_are_local_init() {
        let config = small(Variant::Wc);
        let mut sim = Simulation::new(&config).unwrap();
        let record = sim.step().unwrap();
        assert_eq!(record.messages, 0);
        assert!(record.gmse.is_none());
        for (mem, theta) in sim.memories().iter().zip(sim.thetas()) {
            assert_eq!(&local_init(mem, sim.hyperparams().lambda1).unwrap(), theta);
        }
    }

    #[test]
    fn forgetting_variant_keeps_one_batch() {
        let mut sim = Simulation::new(&small(Variant::Wm)).unwrap();
        sim.step().unwrap();
        sim.step().unwrap();
        assert!(sim.memories().iter().all(|m| m.t() == 1));
        let mut sim = Simulation::new(&small(Variant::Delama)).unwrap();
        sim.step().unwrap();
        sim.step().unwrap();
        assert!(sim.memories().iter().all(|m| m.t() == 2));
    }

    #[test]
    fn single_timestamp_run_matches_one_step() {
        let config = ExperimentConfig {
            timestamps: 1,
            ..small(Variant::Delama)
        };
        let out = run_experiment(&config).unwrap();
        let mut sim = Simulation::new(&config).unwrap();
        assert_eq!(out.records, vec![sim.step().unwrap()]);
    }

    #[test]
    fn csv_is_reproducible() {
        let dir = tempfile::tempdir().unwrap();
        let mut texts = Vec::new();
        for name in ["a.csv", "b.csv"] {
            let path = dir.path().join(name);
            let config = ExperimentConfig {
                output: Some(path.clone()),
                ..small(Variant::Delama)
            };
            run_experiment(&config).unwrap();
            texts.push(std::fs::read(path).unwrap());
        }
        assert_eq!(texts[0], texts[1]);
        let text = String::from_utf8(texts.remove(0)).unwrap();
        assert!(text.starts_with(
            "run_seed,t,agent,metric_kind,metric_value,gmse,messages,payload_scalars,rounds_graph,rounds_jacobi\n"
        ));
        assert_eq!(text.lines().count(), 1 + 3 * 6);
    }

    #[test]
    fn budget_of_one_returns_the_sample() {
        let template = ExperimentConfig {
            timestamps: 2,
            ..ExperimentConfig::regression_default()
        };
        let report = meta_tune(&template, 1, &[1], &[2], 5).unwrap();
        let sampled = sample_candidates(&template.hyperparams(), 1, 5);
        assert_eq!(report.best, sampled[0]);
        assert_eq!(report.candidates.len(), 1);
    }

    #[test]
    fn zero_budget_is_rejected() {
        assert!(meta_tune(&ExperimentConfig::regression_default(), 0, &[1], &[2], 0).is_err());
    }
}
