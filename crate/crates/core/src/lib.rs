//! Peer-to-peer collaborative learning over a stream of tasks.
//!
//! Agents keep constant-size quadratic memories of every task they have
//! seen ([`local`]), jointly infer a sparse collaboration graph by a
//! dual Newton solve ([`graph`]), and refine their models by Jacobi message
//! passing over that graph ([`update`]). All cross-agent traffic goes through
//! a simulated network that enforces the communication topology ([`network`]).

pub mod checks;
pub mod error;
pub mod experiment;
pub mod graph;
pub mod local;
pub mod metrics;
pub mod network;
pub mod tasks;
pub mod types;
pub mod update;

pub use error::{Error, Result};
pub use types::{
    validate_collab_graph, validate_comm_graph, AgentMemory, CollaborationGraph, CommGraph, Hyperparams, ModelParams,
};
