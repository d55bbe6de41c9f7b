//! Simulated multi-robot execution. Robots are agents that exchange typed
//! messages in synchronous rounds; the solver's control flow is replicated on
//! every agent, so only per-robot computations and their communication are
//! simulated. All sums over robots are taken in robot order, which makes a
//! distributed run reproduce the in-process run bit for bit.

mod agents;
mod message;
mod network;

pub use agents::NetBackend;
pub use message::{AggregateTag, Control, Message, Slot};
pub use network::{message_audit, transcript_jsonl, Envelope, MessageAudit, Phase, PhaseTotals, RoundScheduler, TranscriptEntry};

use crate::certify::{solve_problem, SolveConfig, SolveOutcome};
use crate::error::Result;
use crate::posegraph::PoseGraph;

#[derive(Clone, Debug)]
pub struct DistributedRun {
    pub outcome: SolveOutcome,
    pub audit: MessageAudit,
    pub transcript: Vec<TranscriptEntry>,
}

/// Runs the full pipeline with every robot of `graph.ownership` as an agent.
pub fn run_distributed(graph: &PoseGraph, cfg: &SolveConfig, strict_privacy: bool) -> Result<DistributedRun> {
    let backend = NetBackend::new(graph, strict_privacy)?;
    let outcome = solve_problem(graph, &backend, cfg)?;
    let net = backend.scheduler();
    let transcript = net.transcript().to_vec();
    let audit = message_audit(&transcript, net.privacy_leaks());
    Ok(DistributedRun { outcome, audit, transcript })
}
