//! Seeded synthetic scenarios: grouped regression streams with three agent
//! quality profiles, class-incremental Gaussian blobs, and the ground-truth
//! collaboration graph implied by group membership.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::local::{FeatureBasis, Inputs, TaskBatch, Targets};
use crate::types::CollaborationGraph;

pub const DOMAIN: (f64, f64) = (-5.0, 5.0);

/// RNG for one `(seed, agent, t)` triple; independent streams per triple.
fn batch_rng(seed: u64, agent: usize, t: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((agent as u64) << 32) | t as u64);
    rng
}

/// Data-quality profile of an agent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentTypeProfile {
    pub batch_size: usize,
    /// Width of the per-timestamp sampling window; `None` samples the whole domain.
    pub interval: Option<f64>,
    pub noise: f64,
}

impl AgentTypeProfile {
    /// Profiles for types 1–3: many clean samples over the whole domain,
    /// a unit window with medium noise, and a handful of very noisy samples.
    pub fn defaults() -> [AgentTypeProfile; 3] {
        [
            AgentTypeProfile {
                batch_size: 20,
                interval: None,
                noise: 0.1,
            },
            AgentTypeProfile {
                batch_size: 6,
                interval: Some(1.0),
                noise: 0.5,
            },
            AgentTypeProfile {
                batch_size: 3,
                interval: Some(1.0),
                noise: 1.0,
            },
        ]
    }
}

/// `f(x) = a·x² + Σ_k c_k sin(kx)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetFunction {
    pub quadratic: f64,
    pub sines: Vec<f64>,
}

impl TargetFunction {
    pub fn eval(&self, x: f64) -> f64 {
        self.quadratic * x * x
            + self
                .sines
                .iter()
                .enumerate()
                .map(|(k, c)| c * ((k + 1) as f64 * x).sin())
                .sum::<f64>()
    }

    /// Exact coefficients in the poly-trig basis with `harmonics ≥ sines.len()`.
    pub fn coefficients(&self, harmonics: usize) -> DVector<f64> {
        let mut c = DVector::zeros(3 + 2 * harmonics);
        c[2] = self.quadratic;
        for (k, s) in self.sines.iter().enumerate().take(harmonics) {
            c[3 + 2 * k] = *s;
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionScenario {
    pub groups: Vec<usize>,
    pub functions: Vec<TargetFunction>,
    /// Agent type in `1..=3`.
    pub agent_types: Vec<u8>,
    pub profiles: [AgentTypeProfile; 3],
    pub harmonics: usize,
}

impl RegressionScenario {
    pub fn agents(&self) -> usize {
        self.groups.len()
    }

    pub fn basis(&self) -> FeatureBasis {
        FeatureBasis::PolyTrig {
            harmonics: self.harmonics,
        }
    }

    pub fn profile(&self, agent: usize) -> &AgentTypeProfile {
        &self.profiles[self.agent_types[agent] as usize - 1]
    }

    pub fn function_of(&self, agent: usize) -> &TargetFunction {
        &self.functions[self.groups[agent]]
    }
}

/// Draws group structure and target functions. The group count is uniform
/// over `{1, 2, 3}` unless forced; every group gets at least two agents,
/// assigned in contiguous index blocks; types cycle 1, 2, 3 by index.
pub fn sample_regression_scenario(n: usize, seed: u64, group_count: Option<usize>) -> Result<RegressionScenario> {
    if n < 2 {
        return Err(Error::Config(format!("regression scenario needs at least 2 agents, got {n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let groups_wanted = match group_count {
        Some(g) => g,
        None => rng.random_range(1..=(n / 2).min(3)),
    };
    if groups_wanted == 0 || 2 * groups_wanted > n {
        return Err(Error::Config(format!(
            "cannot split {n} agents into {groups_wanted} groups of at least two"
        )));
    }
    let mut sizes = vec![2usize; groups_wanted];
    for _ in 0..(n - 2 * groups_wanted) {
        let g = rng.random_range(0..groups_wanted);
        sizes[g] += 1;
    }
    let groups: Vec<usize> = sizes
        .iter()
        .enumerate()
        .flat_map(|(g, &s)| std::iter::repeat_n(g, s))
        .collect();
    let harmonics = 3;
    let functions = (0..groups_wanted)
        .map(|_| TargetFunction {
            quadratic: rng.random_range(-0.5..=0.5),
            sines: (0..harmonics).map(|_| rng.random_range(-2.0..=2.0)).collect(),
        })
        .collect();
    Ok(RegressionScenario {
        agent_types: (0..n).map(|i| (i % 3) as u8 + 1).collect(),
        groups,
        functions,
        profiles: AgentTypeProfile::defaults(),
        harmonics,
    })
}

/// One regression batch: inputs from the agent's window, targets `f(x) + ε`.
pub fn next_batch(spec: &RegressionScenario, agent: usize, t: usize, seed: u64) -> Result<TaskBatch> {
    next_batch_with_noise(spec, agent, t, seed, None)
}

/// As [`next_batch`], optionally overriding the profile's noise level.
pub fn next_batch_with_noise(
    spec: &RegressionScenario,
    agent: usize,
    t: usize,
    seed: u64,
    noise: Option<f64>,
) -> Result<TaskBatch> {
    if agent >= spec.agents() {
        return Err(Error::DimensionMismatch {
            expected: spec.agents(),
            found: agent + 1,
        });
    }
    let profile = spec.profile(agent);
    let sigma = noise.unwrap_or(profile.noise);
    let f = spec.function_of(agent);
    let mut rng = batch_rng(seed, agent, t);
    let (lo, hi) = match profile.interval {
        None => DOMAIN,
        Some(width) => {
            let start = rng.random_range(DOMAIN.0..=DOMAIN.1 - width);
            (start, start + width)
        }
    };
    let xs: Vec<f64> = (0..profile.batch_size).map(|_| rng.random_range(lo..=hi)).collect();
    let ys: Vec<f64> = if sigma > 0.0 {
        let normal = Normal::new(0.0, sigma).map_err(|e| Error::Config(e.to_string()))?;
        xs.iter().map(|&x| f.eval(x) + normal.sample(&mut rng)).collect()
    } else {
        xs.iter().map(|&x| f.eval(x)).collect()
    };
    TaskBatch::new(Inputs::Scalars(xs), Targets::Real(ys))
}

/// Two groups of agents, each learning its own 5-class problem over 2-D
/// Gaussian blobs. Classes arrive one per timestamp.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationScenario {
    pub groups: Vec<usize>,
    /// `centers[group][class]`.
    pub centers: Vec<Vec<[f64; 2]>>,
    pub sigma: f64,
    pub classes: usize,
    pub batch_size: usize,
    /// Held-out test set per group, covering every class.
    pub test_sets: Vec<TaskBatch>,
}

impl ClassificationScenario {
    pub fn agents(&self) -> usize {
        self.groups.len()
    }

    pub fn basis(&self) -> FeatureBasis {
        FeatureBasis::Affine { dim: 2 }
    }

    /// Position of `agent` among the members of its group.
    pub fn rank_in_group(&self, agent: usize) -> usize {
        let g = self.groups[agent];
        self.groups[..agent].iter().filter(|&&h| h == g).count()
    }

    /// Class seen by `agent` at timestamp `t ≥ 1`; members of a group start
    /// at staggered classes and every agent has seen all classes by `t = classes`.
    pub fn class_at(&self, agent: usize, t: usize) -> usize {
        (t - 1 + self.rank_in_group(agent)) % self.classes
    }
}

const CLASSES: usize = 5;
const BLOB_RADIUS: f64 = 5.0;
const TEST_PER_CLASS: usize = 10;

fn blob_sample(center: [f64; 2], sigma: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let normal = Normal::new(0.0, sigma).expect("sigma is positive");
    vec![center[0] + normal.sample(rng), center[1] + normal.sample(rng)]
}

/// Two groups of `n/2` agents. Each group's class centres sit on a circle of
/// radius 5 (σ = 1, so neighbouring centres are ~5.9σ apart), with the second
/// group rotated by half a class spacing so the two class sets differ.
pub fn sample_classification_scenario(n: usize, seed: u64) -> Result<ClassificationScenario> {
    if n < 4 || !n.is_multiple_of(2) {
        return Err(Error::Config(format!(
            "classification scenario needs an even number of agents >= 4, got {n}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sigma = 1.0;
    let spacing = std::f64::consts::TAU / CLASSES as f64;
    let mut centers: Vec<Vec<[f64; 2]>> = Vec::new();
    for g in 0..2 {
        let base = rng.random_range(0.0..spacing) + g as f64 * spacing / 2.0;
        let mut order: Vec<usize> = (0..CLASSES).collect();
        order.shuffle(&mut rng);
        centers.push(
            order
                .into_iter()
                .map(|slot| {
                    let angle = base + slot as f64 * spacing;
                    [BLOB_RADIUS * angle.cos(), BLOB_RADIUS * angle.sin()]
                })
                .collect(),
        );
    }
    let test_sets = (0..2)
        .map(|g| {
            let mut xs = Vec::new();
            let mut ys = Vec::new();
            for c in 0..CLASSES {
                for _ in 0..TEST_PER_CLASS {
                    xs.push(blob_sample(centers[g][c], sigma, &mut rng));
                    ys.push(c);
                }
            }
            TaskBatch::new(Inputs::Vectors(xs), Targets::Labels(ys))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ClassificationScenario {
        groups: (0..n).map(|i| if i < n / 2 { 0 } else { 1 }).collect(),
        centers,
        sigma,
        classes: CLASSES,
        batch_size: 10,
        test_sets,
    })
}

/// Ten samples of the single class scheduled for `(agent, t)`.
pub fn next_class_batch(spec: &ClassificationScenario, agent: usize, t: usize, seed: u64) -> Result<TaskBatch> {
    if agent >= spec.agents() || t == 0 {
        return Err(Error::Config(format!("invalid agent {agent} or timestamp {t}")));
    }
    let class = spec.class_at(agent, t);
    let center = spec.centers[spec.groups[agent]][class];
    let mut rng = batch_rng(seed, agent, t);
    let xs = (0..spec.batch_size).map(|_| blob_sample(center, spec.sigma, &mut rng)).collect();
    TaskBatch::new(Inputs::Vectors(xs), Targets::Labels(vec![class; spec.batch_size]))
}

/// `m · W̃ / ‖W̃‖₁` with `W̃_ij = 1` iff `i ≠ j` share a group.
pub fn oracle_collaboration_graph(groups: &[usize], mass: f64) -> Result<CollaborationGraph> {
    let n = groups.len();
    let w = DMatrix::from_fn(n, n, |i, j| if i != j && groups[i] == groups[j] { 1.0 } else { 0.0 });
    let total = w.sum();
    if total == 0.0 {
        return Err(Error::invariant("oracle support", "no group has two members"));
    }
    Ok(CollaborationGraph::from_parts(w * (mass / total), mass))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{validate_collab_graph, CommGraph};

    #[test]
    fn forced_two_groups_on_six_agents() {
        for seed in 0..20 {
            let s = sample_regression_scenario(6, seed, Some(2)).unwrap();
            let a = s.groups.iter().filter(|&&g| g == 0).count();
            assert!([(3, 3), (4, 2), (2, 4)].contains(&(a, 6 - a)));
        }
    }

    #[test]
    fn scenario_is_deterministic() {
        assert_eq!(
            sample_regression_scenario(9, 5, None).unwrap(),
            sample_regression_scenario(9, 5, None).unwrap()
        );
    }

    #[test]
    fn every_group_has_two_agents() {
        for seed in 0..200 {
            let s = sample_regression_scenario(7, seed, None).unwrap();
            for g in 0..s.functions.len() {
                assert!(s.groups.iter().filter(|&&h| h == g).count() >= 2);
            }
        }
    }

    #[test]
    fn type_three_batch_size() {
        let s = sample_regression_scenario(6, 1, None).unwrap();
        assert_eq!(s.agent_types[2], 3);
        assert_eq!(next_batch(&s, 2, 1, 0).unwrap().len(), 3);
    }

    #[test]
    fn noiseless_batch_lies_on_target() {
        let s = sample_regression_scenario(6, 2, None).unwrap();
        let batch = next_batch_with_noise(&s, 1, 4, 8, Some(0.0)).unwrap();
        let (Inputs::Scalars(xs), Targets::Real(ys)) = (&batch.inputs, &batch.targets) else {
            panic!("regression batch");
        };
        for (x, y) in xs.iter().zip(ys) {
            assert_eq!(*y, s.function_of(1).eval(*x));
        }
    }

    #[test]
    fn windowed_agents_stay_in_unit_interval() {
        let s = sample_regression_scenario(6, 3, None).unwrap();
        let batch = next_batch(&s, 1, 2, 4).unwrap();
        let Inputs::Scalars(xs) = &batch.inputs else { panic!() };
        let lo = xs.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!(hi - lo <= 1.0);
        assert!(lo >= DOMAIN.0 && hi <= DOMAIN.1);
    }

    #[test]
    fn batches_are_determined_by_seed_agent_and_time() {
        let s = sample_regression_scenario(6, 3, None).unwrap();
        assert_eq!(next_batch(&s, 4, 7, 11).unwrap(), next_batch(&s, 4, 7, 11).unwrap());
        assert_ne!(next_batch(&s, 4, 7, 11).unwrap(), next_batch(&s, 4, 8, 11).unwrap());
    }

    #[test]
    fn targets_are_representable() {
        let s = sample_regression_scenario(6, 9, None).unwrap();
        let f = &s.functions[0];
        let xs: Vec<f64> = (0..50).map(|i| -5.0 + i as f64 * 0.2).collect();
        let pred = crate::local::featurize(&xs, s.harmonics) * f.coefficients(s.harmonics);
        for (x, p) in xs.iter().zip(pred.iter()) {
            assert!((f.eval(*x) - p).abs() < 1e-12);
        }
    }

    #[test]
    fn class_batches_hold_one_label_and_cover_all_classes() {
        let s = sample_classification_scenario(6, 1).unwrap();
        for agent in 0..6 {
            let mut seen = std::collections::BTreeSet::new();
            for t in 1..=5 {
                let batch = next_class_batch(&s, agent, t, 3).unwrap();
                let Targets::Labels(labels) = &batch.targets else { panic!() };
                assert_eq!(labels.len(), 10);
                assert!(labels.iter().all(|&l| l == labels[0]));
                seen.insert(labels[0]);
            }
            assert_eq!(seen.len(), 5);
        }
        assert_eq!(s.test_sets[0].len(), 50);
    }

    #[test]
    fn oracle_graph_examples() {
        let w = oracle_collaboration_graph(&[0, 0, 1], 1.0).unwrap();
        assert_eq!(w.weight(0, 1), 0.5);
        assert_eq!(w.weight(1, 0), 0.5);
        assert_eq!(w.l1(), 1.0);
        let w = oracle_collaboration_graph(&[0; 4], 4.0).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(w.weight(i, j), if i == j { 0.0 } else { 4.0 / 12.0 });
            }
        }
        validate_collab_graph(&w, &CommGraph::fully_connected(4)).unwrap();
    }
}
