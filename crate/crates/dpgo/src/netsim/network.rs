use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use super::message::Message;
use crate::posegraph::BlockPartition;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    Initialization,
    LocalSearch,
    Certification,
    Control,
    Rounding,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Envelope {
    pub from: usize,
    pub to: usize,
    pub msg: Message,
}

/// One line of the message transcript.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    /// Round in which the message was sent; it is read in the next one.
    pub round: usize,
    pub phase: Phase,
    pub from: usize,
    pub to: usize,
    pub kind: String,
    pub pose: Option<usize>,
    pub payload: usize,
}

/// Synchronous rounds over the robot dependency graph: every message sent in
/// round `k` is delivered at the start of round `k + 1`, in send order.
#[derive(Clone, Debug)]
pub struct RoundScheduler {
    round: usize,
    pub phase: Phase,
    neighbors: Vec<Vec<usize>>,
    owner: Vec<usize>,
    public: Vec<bool>,
    outgoing: Vec<Envelope>,
    inboxes: Vec<Vec<Envelope>>,
    transcript: Vec<TranscriptEntry>,
    leaks: usize,
    strict: bool,
}

impl RoundScheduler {
    /// With `strict`, a private pose in a message payload panics.
    pub fn new(part: &BlockPartition, strict: bool) -> Self {
        RoundScheduler {
            round: 0,
            phase: Phase::Initialization,
            neighbors: part.neighbors.clone(),
            owner: part.robot_of.clone(),
            public: part.public.clone(),
            outgoing: Vec::new(),
            inboxes: vec![Vec::new(); part.num_robots],
            transcript: Vec::new(),
            leaks: 0,
            strict,
        }
    }

    pub fn round(&self) -> usize {
        self.round
    }

    pub fn privacy_leaks(&self) -> usize {
        self.leaks
    }

    pub fn transcript(&self) -> &[TranscriptEntry] {
        &self.transcript
    }

    pub fn send(&mut self, from: usize, to: usize, msg: Message) {
        assert!(self.neighbors[from].binary_search(&to).is_ok(), "robot {from} cannot reach non-neighbor {to}");
        if let Message::PublicPoseUpdate { robot, pose, .. } | Message::EigSegment { robot, pose, .. } = &msg {
            let ok = *robot == from && self.owner[*pose] == from && self.public[*pose];
            if !ok {
                self.leaks += 1;
                if self.strict {
                    panic!("privacy violation: robot {from} sent pose {pose} (public: {})", self.public[*pose]);
                }
            }
        }
        self.transcript.push(TranscriptEntry {
            round: self.round,
            phase: self.phase,
            from,
            to,
            kind: msg.kind().to_string(),
            pose: msg.pose(),
            payload: msg.payload(),
        });
        self.outgoing.push(Envelope { from, to, msg });
    }

    /// Ends the round. Returns `false` (and does not count a round) if nothing was sent.
    pub fn advance(&mut self) -> bool {
        if self.outgoing.is_empty() {
            return false;
        }
        for env in self.outgoing.drain(..) {
            self.inboxes[env.to].push(env);
        }
        self.round += 1;
        true
    }

    pub fn take_inbox(&mut self, robot: usize) -> Vec<Envelope> {
        std::mem::take(&mut self.inboxes[robot])
    }
}

pub fn transcript_jsonl(entries: &[TranscriptEntry]) -> String {
    let mut s = String::new();
    for e in entries {
        s.push_str(&serde_json::to_string(e).expect("transcript entries serialize"));
        s.push('\n');
    }
    s
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseTotals {
    pub phase: Phase,
    pub rounds: usize,
    pub messages: usize,
    pub payload: usize,
    pub pose_blocks: usize,
    /// Largest number of pose blocks sent in a single round.
    pub max_round_pose_blocks: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MessageAudit {
    pub phases: Vec<PhaseTotals>,
    pub rounds: usize,
    pub messages: usize,
    pub payload: usize,
    pub privacy_leaks: usize,
    /// Pose blocks carried by `PublicPoseUpdate` messages during local search.
    pub local_search_pose_blocks: usize,
}

impl MessageAudit {
    pub fn phase(&self, p: Phase) -> Option<&PhaseTotals> {
        self.phases.iter().find(|t| t.phase == p)
    }

    pub fn table(&self) -> String {
        let mut s = String::from("phase            rounds   messages    payload  pose-blocks  max/round\n");
        for t in &self.phases {
            let name = serde_json::to_string(&t.phase).unwrap_or_default();
            let _ = writeln!(
                s,
                "{:<15} {:>7} {:>10} {:>10} {:>12} {:>10}",
                name.trim_matches('"'),
                t.rounds,
                t.messages,
                t.payload,
                t.pose_blocks,
                t.max_round_pose_blocks
            );
        }
        let _ = writeln!(s, "total           {:>7} {:>10} {:>10}", self.rounds, self.messages, self.payload);
        let _ = writeln!(s, "privacy leaks: {}", self.privacy_leaks);
        s
    }
}

/// Per-phase communication totals of a transcript.
pub fn message_audit(transcript: &[TranscriptEntry], privacy_leaks: usize) -> MessageAudit {
    let mut by_phase: BTreeMap<Phase, (BTreeSet<usize>, usize, usize, BTreeMap<usize, usize>)> = BTreeMap::new();
    let mut local_search_pose_blocks = 0;
    for e in transcript {
        let t = by_phase.entry(e.phase).or_default();
        t.0.insert(e.round);
        t.1 += 1;
        t.2 += e.payload;
        if e.pose.is_some() {
            *t.3.entry(e.round).or_default() += 1;
            if e.phase == Phase::LocalSearch && e.kind == "public-pose-update" {
                local_search_pose_blocks += 1;
            }
        }
    }
    let phases: Vec<PhaseTotals> = by_phase
        .into_iter()
        .map(|(phase, (rounds, messages, payload, per_round))| PhaseTotals {
            phase,
            rounds: rounds.len(),
            messages,
            payload,
            pose_blocks: per_round.values().sum(),
            max_round_pose_blocks: per_round.values().copied().max().unwrap_or(0),
        })
        .collect();
    let rounds: BTreeSet<usize> = transcript.iter().map(|e| e.round).collect();
    MessageAudit {
        rounds: rounds.len(),
        messages: transcript.len(),
        payload: transcript.iter().map(|e| e.payload).sum(),
        phases,
        privacy_leaks,
        local_search_pose_blocks,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netsim::message::Slot;
    use crate::posegraph::{partition, PoseGraph, RelativeMeasurement};
    use nalgebra::{DMatrix, DVector};

    /// Robot 0 owns poses 0 (private) and 1; robot 1 owns pose 2.
    fn scheduler(strict: bool) -> RoundScheduler {
        let edge = |i, j| RelativeMeasurement {
            i,
            j,
            rotation: DMatrix::identity(2, 2),
            translation: DVector::from_vec(vec![1.0, 0.0]),
            kappa: 1.0,
            tau: 1.0,
        };
        let g = PoseGraph::new(2, 3, vec![edge(0, 1), edge(1, 2)], vec![0, 0, 1]).unwrap();
        RoundScheduler::new(&partition(&g), strict)
    }

    fn update(robot: usize, pose: usize) -> Message {
        Message::PublicPoseUpdate { robot, pose, slot: Slot::Primal, values: vec![1.0; 3] }
    }

    #[test]
    fn messages_arrive_next_round_in_order() {
        let mut net = scheduler(true);
        assert!(!net.advance());
        net.send(0, 1, update(0, 1));
        net.send(0, 1, Message::GradNormShare { robot: 0, value: 4.0 });
        assert!(net.take_inbox(1).is_empty());
        assert!(net.advance());
        assert_eq!(net.round(), 1);
        let inbox = net.take_inbox(1);
        assert_eq!(inbox.len(), 2);
        assert_eq!(inbox[1].msg.kind(), "grad-norm-share");
        assert!(net.take_inbox(1).is_empty());
    }

    #[test]
    fn private_pose_is_a_leak() {
        let mut net = scheduler(false);
        net.send(0, 1, update(0, 0));
        net.send(1, 0, update(1, 1));
        net.send(1, 0, update(1, 2));
        assert_eq!(net.privacy_leaks(), 2);
    }

    #[test]
    #[should_panic(expected = "privacy violation")]
    fn strict_mode_panics_on_leak() {
        scheduler(true).send(0, 1, update(0, 0));
    }

    #[test]
    fn audit_totals() {
        let mut net = scheduler(true);
        net.phase = Phase::LocalSearch;
        net.send(0, 1, update(0, 1));
        net.send(1, 0, update(1, 2));
        net.advance();
        net.phase = Phase::Control;
        net.send(0, 1, Message::ControlSignal(crate::netsim::Control::RankTransition(4)));
        net.advance();
        let a = message_audit(net.transcript(), net.privacy_leaks());
        assert_eq!((a.rounds, a.messages, a.payload), (2, 3, 7));
        assert_eq!(a.local_search_pose_blocks, 2);
        let ls = a.phase(Phase::LocalSearch).unwrap();
        assert_eq!((ls.rounds, ls.pose_blocks, ls.max_round_pose_blocks), (1, 2, 2));
        assert!(a.table().contains("privacy leaks: 0"));
        assert_eq!(transcript_jsonl(net.transcript()).lines().count(), 3);
    }
}
