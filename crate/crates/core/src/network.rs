//! Simulated peer-to-peer layer.
//!
//! Every value one agent learns about another passes through [`Network`]:
//! point-to-point sends along an edge, or flooding-based aggregation over
//! the communication graph. Sends are queued and become visible only after
//! [`Network::barrier`], which closes a round in the ledger.

use std::io::Write;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{CollaborationGraph, CommGraph};

const MAX_TOPOLOGY_RETRIES: usize = 1000;

/// Topology family for the communication graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TopologyKind {
    FullyConnected,
    ErdosRenyi { p: f64 },
    BarabasiAlbert { attach: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TopologySpec {
    pub kind: TopologyKind,
    pub agents: usize,
    pub seed: u64,
}

/// Generates a connected communication graph; ER and BA draws are repeated
/// with fresh randomness until connected.
pub fn make_comm_graph(spec: &TopologySpec) -> Result<CommGraph> {
    let n = spec.agents;
    if n == 0 {
        return Err(Error::Config("topology needs at least one agent".into()));
    }
    match spec.kind {
        TopologyKind::FullyConnected => Ok(CommGraph::fully_connected(n)),
        TopologyKind::ErdosRenyi { p } => {
            if !(p > 0.0 && p <= 1.0) {
                return Err(Error::Config(format!("edge probability {p} outside (0, 1]")));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            for _ in 0..MAX_TOPOLOGY_RETRIES {
                let mut edges = Vec::new();
                for i in 0..n {
                    for j in (i + 1)..n {
                        if rng.random::<f64>() < p {
                            edges.push((i, j));
                        }
                    }
                }
                if let Ok(c) = CommGraph::from_edges(n, &edges) {
                    return Ok(c);
                }
            }
            Err(Error::TopologyGeneration {
                retries: MAX_TOPOLOGY_RETRIES,
            })
        }
        TopologyKind::BarabasiAlbert { attach } => {
            if attach == 0 || attach >= n.max(2) {
                return Err(Error::Config(format!(
                    "attachment count {attach} must be in [1, {n})"
                )));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            let edges = barabasi_albert_edges(n, attach, &mut rng);
            CommGraph::from_edges(n, &edges)
        }
    }
}

/// Preferential attachment seeded with a star on the first `attach + 1`
/// nodes, so the result is always connected.
fn barabasi_albert_edges(n: usize, attach: usize, rng: &mut ChaCha8Rng) -> Vec<(usize, usize)> {
    let mut edges = Vec::new();
    // each endpoint appears once per incident edge
    let mut endpoints: Vec<usize> = Vec::new();
    for j in 1..=attach.min(n - 1) {
        edges.push((0, j));
        endpoints.extend([0, j]);
    }
    for new in (attach + 1)..n {
        let mut targets: Vec<usize> = Vec::with_capacity(attach);
        while targets.len() < attach {
            let candidate = *endpoints.choose(rng).expect("seed star is non-empty");
            if !targets.contains(&candidate) {
                targets.push(candidate);
            }
        }
        targets.sort_unstable();
        for t in targets {
            edges.push((t, new));
            endpoints.extend([t, new]);
        }
    }
    edges
}

/// `‖C‖_1 / N²`.
pub fn connectivity(c: &CommGraph) -> f64 {
    let n = c.len() as f64;
    c.entry_count() as f64 / (n * n)
}

/// One message in flight.
#[derive(Debug, Clone, PartialEq)]
pub struct Envelope {
    pub from: usize,
    pub to: usize,
    pub payload: Vec<f64>,
}

/// Traffic counted for one synchronous round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RoundTraffic {
    pub round: usize,
    pub messages: usize,
    pub scalars: usize,
    pub hops: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MessageLedger {
    rounds: Vec<RoundTraffic>,
}

impl MessageLedger {
    pub fn rounds(&self) -> &[RoundTraffic] {
        &self.rounds
    }

    pub fn total_messages(&self) -> usize {
        self.rounds.iter().map(|r| r.messages).sum()
    }

    pub fn total_scalars(&self) -> usize {
        self.rounds.iter().map(|r| r.scalars).sum()
    }

    /// Writes `round,messages,scalars,hops`, one row per round.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["round", "messages", "scalars", "hops"])
            .map_err(|e| Error::Io(e.to_string()))?;
        for r in &self.rounds {
            w.write_record([
                r.round.to_string(),
                r.messages.to_string(),
                r.scalars.to_string(),
                r.hops.to_string(),
            ])
            .map_err(|e| Error::Io(e.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Result of a flooding aggregation: one copy of the aggregate per agent.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub per_agent: Vec<Vec<f64>>,
    /// Flooding rounds needed until every agent heard from every other.
    pub hops: usize,
}

/// Lossless, round-synchronous channels constrained to a communication graph.
#[derive(Debug, Clone)]
pub struct Network {
    comm: CommGraph,
    pending: Vec<Envelope>,
    inboxes: Vec<Vec<Envelope>>,
    ledger: MessageLedger,
    open: RoundTraffic,
    illegal_edges: usize,
}

impl Network {
    pub fn new(comm: CommGraph) -> Self {
        let n = comm.len();
        Self {
            comm,
            pending: Vec::new(),
            inboxes: vec![Vec::new(); n],
            ledger: MessageLedger::default(),
            open: RoundTraffic::default(),
            illegal_edges: 0,
        }
    }

    pub fn comm(&self) -> &CommGraph {
        &self.comm
    }

    pub fn agents(&self) -> usize {
        self.comm.len()
    }

    pub fn ledger(&self) -> &MessageLedger {
        &self.ledger
    }

    /// Number of rejected sends so far.
    pub fn illegal_edges(&self) -> usize {
        self.illegal_edges
    }

    /// Queues `payload` from `from` to `to`; fails unless `C[from][to] = 1`
    /// and `from != to`.
    pub fn send_along(&mut self, from: usize, to: usize, payload: Vec<f64>) -> Result<()> {
        if from == to || from >= self.agents() || to >= self.agents() || !self.comm.linked(from, to) {
            self.illegal_edges += 1;
            return Err(Error::IllegalEdge { from, to });
        }
        self.enqueue(from, to, payload);
        Ok(())
    }

    /// Like [`Network::send_along`], but additionally requires `W[from][to] > 0`.
    pub fn send_within(
        &mut self,
        from: usize,
        to: usize,
        payload: Vec<f64>,
        graph: &CollaborationGraph,
    ) -> Result<()> {
        if from >= graph.len() || to >= graph.len() || !(graph.weight(from, to) > 0.0) {
            self.illegal_edges += 1;
            return Err(Error::IllegalEdge { from, to });
        }
        self.send_along(from, to, payload)
    }

    fn enqueue(&mut self, from: usize, to: usize, payload: Vec<f64>) {
        self.open.messages += 1;
        self.open.scalars += payload.len();
        self.open.hops = self.open.hops.max(1);
        self.pending.push(Envelope { from, to, payload });
    }

    /// Delivers everything queued this round and closes the round.
    pub fn barrier(&mut self) {
        for env in self.pending.drain(..) {
            self.inboxes[env.to].push(env);
        }
        let mut closed = self.open;
        closed.round = self.ledger.rounds.len() + 1;
        self.ledger.rounds.push(closed);
        self.open = RoundTraffic::default();
    }

    /// Removes and returns everything delivered to `agent`, ordered by sender.
    pub fn take_inbox(&mut self, agent: usize) -> Vec<Envelope> {
        let mut inbox = std::mem::take(&mut self.inboxes[agent]);
        inbox.sort_by_key(|e| e.from);
        inbox
    }

    /// Floods every agent's vector to every other agent along `C`.
    ///
    /// Each round an agent forwards the entries it learned in the previous
    /// round to all of its neighbours. Returns, for each agent, the full
    /// table of origin values indexed by origin, plus the round count.
    fn flood(&mut self, values: &[Vec<f64>]) -> Result<(Vec<Vec<Option<Vec<f64>>>>, usize)> {
        let n = self.agents();
        if values.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: values.len(),
            });
        }
        let mut known: Vec<Vec<Option<Vec<f64>>>> = (0..n)
            .map(|i| {
                let mut row = vec![None; n];
                row[i] = Some(values[i].clone());
                row
            })
            .collect();
        let mut fresh: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
        let mut hops = 0;
        while known.iter().any(|row| row.iter().any(Option::is_none)) {
            if fresh.iter().all(Vec::is_empty) {
                return Err(Error::invariant("disconnected", "flooding stalled before reaching every agent"));
            }
            hops += 1;
            for i in 0..n {
                if fresh[i].is_empty() {
                    continue;
                }
                // payload layout: [origin, len, values...] repeated
                let mut payload = Vec::new();
                for &origin in &fresh[i] {
                    let v = known[i][origin].as_ref().expect("fresh entries are known");
                    payload.push(origin as f64);
                    payload.push(v.len() as f64);
                    payload.extend_from_slice(v);
                }
                let neighbors: Vec<usize> = self.comm.neighbors(i).collect();
                for j in neighbors {
                    self.send_along(i, j, payload.clone())?;
                }
            }
            self.open.hops = 1;
            self.barrier();
            for i in 0..n {
                fresh[i].clear();
                for env in self.take_inbox(i) {
                    let mut k = 0;
                    while k < env.payload.len() {
                        let origin = env.payload[k] as usize;
                        let len = env.payload[k + 1] as usize;
                        if known[i][origin].is_none() {
                            known[i][origin] = Some(env.payload[k + 2..k + 2 + len].to_vec());
                            fresh[i].push(origin);
                        }
                        k += 2 + len;
                    }
                }
                fresh[i].sort_unstable();
            }
        }
        Ok((known, hops))
    }

    /// Every agent ends up holding `Σ_j values[j]`, summed in agent-index order.
    pub fn aggregate_sum(&mut self, values: &[Vec<f64>]) -> Result<Aggregate> {
        self.aggregate_with(values, |acc, v| *acc += v)
    }

    /// Entrywise maximum, otherwise like [`Network::aggregate_sum`].
    pub fn aggregate_max(&mut self, values: &[Vec<f64>]) -> Result<Aggregate> {
        self.aggregate_with(values, |acc, v| *acc = acc.max(v))
    }

    fn aggregate_with(&mut self, values: &[Vec<f64>], combine: impl Fn(&mut f64, f64)) -> Result<Aggregate> {
        let width = values.first().map_or(0, Vec::len);
        if let Some(bad) = values.iter().find(|v| v.len() != width) {
            return Err(Error::DimensionMismatch {
                expected: width,
                found: bad.len(),
            });
        }
        let (known, hops) = self.flood(values)?;
        let per_agent = known
            .into_iter()
            .map(|row| {
                let mut it = row.into_iter().map(|v| v.expect("flooding completed"));
                let mut acc = it.next().unwrap_or_default();
                for v in it {
                    for (a, x) in acc.iter_mut().zip(v) {
                        combine(a, x);
                    }
                }
                acc
            })
            .collect();
        Ok(Aggregate { per_agent, hops })
    }
}
