//! Domain vocabulary: skeleton definitions, pose instances, ground-truth
//! annotations and tracks. Everything here is immutable after construction
//! and safe to share across threads.

mod pose;
mod skeleton;

pub use pose::{GroundTruthAnnotation, GtKeypoint, Keypoint, Pose, Rect, Visibility};
pub use skeleton::{builtin_skeleton, Edge, Skeleton, Violation, BUILTIN_SKELETONS};

use std::collections::BTreeMap;

/// A tracked identity over a sequence: one pose per frame it was observed in.
#[derive(Debug, Clone)]
pub struct Track {
    pub id: u64,
    pub poses: BTreeMap<u64, Pose>,
    pub last_active_frame: u64,
}

impl Track {
    pub fn new(id: u64, frame: u64, pose: Pose) -> Self {
        let mut poses = BTreeMap::new();
        poses.insert(frame, pose);
        Track {
            id,
            poses,
            last_active_frame: frame,
        }
    }

    /// Record a pose for `frame`. Frames must arrive in increasing order.
    pub fn push(&mut self, frame: u64, pose: Pose) {
        debug_assert!(frame > self.last_active_frame);
        self.poses.insert(frame, pose);
        self.last_active_frame = frame;
    }

    pub fn last_pose(&self) -> Option<&Pose> {
        self.poses.get(&self.last_active_frame)
    }
}

/// A decoded pose carrying the track id it was assigned to.
#[derive(Debug, Clone)]
pub struct TrackedPose {
    pub track_id: u64,
    pub pose: Pose,
}
