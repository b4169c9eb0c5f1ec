//! Browser bindings for the interactive page in `www/`. Every export returns
//! a JSON string; the plain functions below the bindings are usable natively.

use colearn::experiment::{ExperimentConfig, HyperConfig, Scenario, SeedConfig, Simulation, Variant};
use colearn::graph::{infer_graph, smoothed_relu};
use colearn::local::featurize;
use colearn::metrics::gmse;
use colearn::network::Network;
use colearn::tasks::{oracle_collaboration_graph, DOMAIN};
use colearn::{CommGraph, Hyperparams, ModelParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use wasm_bindgen::prelude::*;

#[derive(Debug, Serialize)]
pub struct Curve {
    pub x: Vec<f64>,
    pub relu: Vec<f64>,
    pub smooth: Vec<f64>,
}

/// Exact and smoothed ReLU on `[-2, 2]`.
pub fn smoothing_curve(b: f64, points: usize) -> Curve {
    let points = points.max(2);
    let x: Vec<f64> = (0..points).map(|i| -2.0 + 4.0 * i as f64 / (points - 1) as f64).collect();
    Curve {
        relu: x.iter().map(|v| v.max(0.0)).collect(),
        smooth: x.iter().map(|&v| smoothed_relu(v, b).value).collect(),
        x,
    }
}

#[derive(Debug, Serialize)]
pub struct GraphView {
    pub points: Vec<[f64; 2]>,
    pub groups: Vec<usize>,
    pub weights: Vec<Vec<f64>>,
    pub oracle: Vec<Vec<f64>>,
    pub gmse: f64,
    pub newton_iterations: usize,
    pub messages: usize,
}

fn rows(m: &nalgebra::DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().cloned().collect()).collect()
}

/// Two-dimensional models scattered around `groups` centers, then a graph
/// inferred from them on a complete network.
pub fn graph_view(agents: usize, groups: usize, spread: f64, lambda2: f64, lambda3: f64, seed: u64) -> colearn::Result<GraphView> {
    let groups = groups.clamp(1, (agents / 2).max(1));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers: Vec<[f64; 2]> = (0..groups)
        .map(|g| {
            let angle = std::f64::consts::TAU * g as f64 / groups as f64;
            [3.0 * angle.cos(), 3.0 * angle.sin()]
        })
        .collect();
    let labels: Vec<usize> = (0..agents).map(|i| i * groups / agents).collect();
    let points: Vec<[f64; 2]> = labels
        .iter()
        .map(|&g| {
            [
                centers[g][0] + spread * rng.random_range(-1.0..1.0),
                centers[g][1] + spread * rng.random_range(-1.0..1.0),
            ]
        })
        .collect();
    let thetas = points
        .iter()
        .map(|p| ModelParams::from_slice(p))
        .collect::<colearn::Result<Vec<_>>>()?;
    let hp = Hyperparams {
        lambda2,
        lambda3,
        ..Hyperparams::for_agents(agents)
    };
    hp.validate()?;
    let mut net = Network::new(CommGraph::fully_connected(agents));
    let inferred = infer_graph(&thetas, &hp, &mut net)?;
    let oracle = oracle_collaboration_graph(&labels, hp.mass)?;
    Ok(GraphView {
        gmse: gmse(&inferred.graph, &oracle)?,
        weights: rows(inferred.graph.weights()),
        oracle: rows(oracle.weights()),
        newton_iterations: inferred.dual.iterations,
        messages: net.ledger().total_messages(),
        points,
        groups: labels,
    })
}

#[derive(Debug, Serialize)]
pub struct RegressionView {
    pub grid: Vec<f64>,
    /// Per group, the true function on `grid`.
    pub truth: Vec<Vec<f64>>,
    pub groups: Vec<usize>,
    pub agent_types: Vec<u8>,
    /// `predictions[t][agent]` on `grid`.
    pub predictions: Vec<Vec<Vec<f64>>>,
    pub mse: Vec<f64>,
    pub gmse: Vec<Option<f64>>,
    pub weights: Vec<Option<Vec<Vec<f64>>>>,
}

/// Runs the default regression scenario and records every agent's fit at
/// every timestamp.
pub fn regression_view(variant: &str, seed: u64, lambda1: f64, lambda2: f64, lambda3: f64) -> colearn::Result<RegressionView> {
    let config = ExperimentConfig {
        variant: variant.parse::<Variant>()?,
        seeds: SeedConfig { scenario: seed, run: seed },
        hyper: HyperConfig {
            lambda1: Some(lambda1),
            lambda2: Some(lambda2),
            lambda3: Some(lambda3),
            ..HyperConfig::default()
        },
        ..ExperimentConfig::regression_default()
    };
    config.validate()?;
    let mut sim = Simulation::new(&config)?;
    let Scenario::Regression { spec, .. } = sim.scenario().clone() else {
        unreachable!("regression config")
    };
    let grid: Vec<f64> = (0..201).map(|i| DOMAIN.0 + (DOMAIN.1 - DOMAIN.0) * i as f64 / 200.0).collect();
    let features = featurize(&grid, spec.harmonics);
    let mut view = RegressionView {
        truth: spec.functions.iter().map(|f| grid.iter().map(|&x| f.eval(x)).collect()).collect(),
        groups: spec.groups.clone(),
        agent_types: spec.agent_types.clone(),
        grid,
        predictions: Vec::new(),
        mse: Vec::new(),
        gmse: Vec::new(),
        weights: Vec::new(),
    };
    for _ in 0..config.timestamps {
        let record = sim.step()?;
        view.predictions.push(
            sim.thetas()
                .iter()
                .map(|theta| (&features * theta.as_vector()).iter().cloned().collect())
                .collect(),
        );
        view.mse.push(record.system_mean());
        view.gmse.push(record.gmse);
        view.weights.push(sim.graph().map(|w| rows(w.weights())));
    }
    Ok(view)
}

fn to_json<T: Serialize>(value: colearn::Result<T>) -> Result<String, JsError> {
    let value = value.map_err(|e| JsError::new(&e.to_string()))?;
    serde_json::to_string(&value).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen(js_name = smoothingCurve)]
pub fn smoothing_curve_js(b: f64) -> Result<String, JsError> {
    to_json(Ok(smoothing_curve(b, 161)))
}

#[wasm_bindgen(js_name = graphDemo)]
pub fn graph_demo_js(agents: usize, groups: usize, spread: f64, lambda2: f64, lambda3: f64, seed: u64) -> Result<String, JsError> {
    to_json(graph_view(agents, groups, spread, lambda2, lambda3, seed))
}

#[wasm_bindgen(js_name = regressionDemo)]
pub fn regression_demo_js(variant: &str, seed: u64, lambda1: f64, lambda2: f64, lambda3: f64) -> Result<String, JsError> {
    to_json(regression_view(variant, seed, lambda1, lambda2, lambda3))
}
