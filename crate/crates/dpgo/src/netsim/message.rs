use serde::{Deserialize, Serialize};

/// Which distributed quantity a pose-indexed message refers to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Slot {
    /// The lifted iterate `X` (or an intermediate such as `Y` in RBCD++).
    Primal,
    /// Spanning-tree initialization poses.
    TreePose,
    /// Relaxed rotations of chordal initialization.
    ChordalRotation,
    /// Rotations of chordal initialization after projection onto SO(d).
    Rotation,
    ChordalTranslation,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AggregateTag {
    Cost,
    EigDot,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Control {
    RankTransition(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Message {
    /// Values of one public pose, column-major.
    PublicPoseUpdate { robot: usize, pose: usize, slot: Slot, values: Vec<f64> },
    /// Flooded squared gradient norm of `robot`'s block.
    GradNormShare { robot: usize, value: f64 },
    /// Per-robot partial values on their way to the root, or the total on its way back.
    ScalarAggregate { tag: AggregateTag, entries: Vec<(usize, f64)> },
    /// One public pose's slice of an eigenvector iterate.
    EigSegment { robot: usize, pose: usize, values: Vec<f64> },
    ControlSignal(Control),
    /// `Y₁` of the first pose, relayed hop by hop for rounding.
    FrameRelay { values: Vec<f64> },
}

impl Message {
    pub fn kind(&self) -> &'static str {
        match self {
            Message::PublicPoseUpdate { .. } => "public-pose-update",
            Message::GradNormShare { .. } => "grad-norm-share",
            Message::ScalarAggregate { .. } => "scalar-aggregate",
            Message::EigSegment { .. } => "eig-segment",
            Message::ControlSignal(_) => "control-signal",
            Message::FrameRelay { .. } => "frame-relay",
        }
    }

    /// Number of floating-point values carried.
    pub fn payload(&self) -> usize {
        match self {
            Message::PublicPoseUpdate { values, .. } | Message::EigSegment { values, .. } => values.len(),
            Message::FrameRelay { values } => values.len(),
            Message::GradNormShare { .. } | Message::ControlSignal(_) => 1,
            Message::ScalarAggregate { entries, .. } => entries.len(),
        }
    }

    /// The pose whose values the message carries, if any.
    pub fn pose(&self) -> Option<usize> {
        match self {
            Message::PublicPoseUpdate { pose, .. } | Message::EigSegment { pose, .. } => Some(*pose),
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn payload_counts_floats() {
        let m = Message::PublicPoseUpdate { robot: 0, pose: 3, slot: Slot::Primal, values: vec![0.0; 20] };
        assert_eq!((m.kind(), m.payload(), m.pose()), ("public-pose-update", 20, Some(3)));
        let m = Message::ScalarAggregate { tag: AggregateTag::Cost, entries: vec![(0, 1.0), (2, 3.0)] };
        assert_eq!((m.payload(), m.pose()), (2, None));
        assert_eq!(Message::ControlSignal(Control::RankTransition(5)).payload(), 1);
        assert_eq!(Message::GradNormShare { robot: 1, value: 2.0 }.kind(), "grad-norm-share");
    }

    #[test]
    fn serializes_with_kebab_case_tags() {
        let m = Message::EigSegment { robot: 1, pose: 2, values: vec![1.5] };
        let s = serde_json::to_string(&m).unwrap();
        assert!(s.contains("eig-segment"));
        assert_eq!(serde_json::from_str::<Message>(&s).unwrap(), m);
    }
}
