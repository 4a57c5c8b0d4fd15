//! Keypoint-level non-maximum suppression with dynamic radii.

use serde::{Deserialize, Serialize};

use crate::model::Pose;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NmsConfig {
    /// Minimum suppression radius in pixels.
    pub r_min: f32,
    /// Radius scale on the predicted joint size.
    pub alpha: f32,
    /// Poses with fewer detected keypoints are dropped.
    pub min_keypoints: usize,
    /// Poses whose recomputed instance score falls below this are dropped.
    pub instance_threshold: f32,
}

impl Default for NmsConfig {
    fn default() -> Self {
        NmsConfig {
            r_min: 4.0,
            alpha: 1.0,
            min_keypoints: 1,
            instance_threshold: 0.2,
        }
    }
}

impl NmsConfig {
    pub fn radius(&self, size: f32) -> f32 {
        (self.alpha * size).max(self.r_min)
    }
}

/// Spatial index of claimed keypoint locations, one layer per keypoint
/// type. Claims are discs; the coarse bucket grid keeps point queries O(1).
pub struct Occupancy {
    n_types: usize,
    cell: f32,
    cols: usize,
    rows: usize,
    buckets: Vec<Vec<(f32, f32, f32)>>,
}

impl Occupancy {
    pub fn new(n_types: usize, image_size: (u32, u32)) -> Self {
        let cell = 4.0f32;
        let cols = (image_size.0 as f32 / cell).ceil() as usize + 1;
        let rows = (image_size.1 as f32 / cell).ceil() as usize + 1;
        Occupancy {
            n_types,
            cell,
            cols,
            rows,
            buckets: vec![Vec::new(); n_types * cols * rows],
        }
    }

    #[inline]
    fn clamp_col(&self, v: f32) -> usize {
        ((v / self.cell).floor().max(0.0) as usize).min(self.cols - 1)
    }

    #[inline]
    fn clamp_row(&self, v: f32) -> usize {
        ((v / self.cell).floor().max(0.0) as usize).min(self.rows - 1)
    }

    pub fn claim(&mut self, kp_type: usize, x: f32, y: f32, radius: f32) {
        debug_assert!(kp_type < self.n_types);
        let c0 = self.clamp_col(x - radius);
        let c1 = self.clamp_col(x + radius);
        let r0 = self.clamp_row(y - radius);
        let r1 = self.clamp_row(y + radius);
        for row in r0..=r1 {
            for col in c0..=c1 {
                self.buckets[(kp_type * self.rows + row) * self.cols + col].push((x, y, radius));
            }
        }
    }

    pub fn is_claimed(&self, kp_type: usize, x: f32, y: f32) -> bool {
        let col = self.clamp_col(x);
        let row = self.clamp_row(y);
        self.buckets[(kp_type * self.rows + row) * self.cols + col]
            .iter()
            .any(|&(cx, cy, r)| (x - cx).powi(2) + (y - cy).powi(2) <= r * r)
    }
}

/// Weighted mean of detected keypoint scores with the top three weighted
/// three-fold.
pub fn instance_score(scores: &[f32]) -> f32 {
    let n = scores.len();
    if n == 0 {
        return 0.0;
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let top = sorted.iter().take(3).sum::<f32>();
    let rest = sorted.iter().skip(3).sum::<f32>();
    let denom = 3 * n.min(3) + n.saturating_sub(3);
    (3.0 * top + rest) / denom as f32
}

pub fn instance_score_of(pose: &Pose) -> f32 {
    let detected: Vec<f32> = pose
        .keypoints
        .iter()
        .filter(|k| k.is_detected())
        .map(|k| k.score)
        .collect();
    instance_score(&detected)
}

/// Walk poses best first; keypoints falling into a region already claimed
/// by a better pose have their score multiplied by `decay` (0 removes
/// them). Surviving keypoints claim their own location. Poses are dropped
/// when they fall below the keypoint-count or instance-score floors.
pub fn nms_with_decay<T>(
    mut items: Vec<(Pose, T)>,
    decay: f32,
    cfg: &NmsConfig,
    max_poses: usize,
    n_types: usize,
    image_size: (u32, u32),
) -> Vec<(Pose, T)> {
    items.sort_by(|a, b| b.0.instance_score.total_cmp(&a.0.instance_score));
    let mut occupancy = Occupancy::new(n_types, image_size);
    let mut out = Vec::new();
    for (mut pose, tag) in items {
        for (k, kp) in pose.keypoints.iter_mut().enumerate() {
            if kp.is_detected() && occupancy.is_claimed(k, kp.x, kp.y) {
                kp.score *= decay;
            }
        }
        pose.instance_score = instance_score_of(&pose);
        if pose.detected_count() < cfg.min_keypoints
            || pose.instance_score < cfg.instance_threshold
        {
            continue;
        }
        for (k, kp) in pose.keypoints.iter().enumerate() {
            if kp.is_detected() {
                occupancy.claim(k, kp.x, kp.y, cfg.radius(kp.size));
            }
        }
        out.push((pose, tag));
        if out.len() >= max_poses {
            break;
        }
    }
    out
}

/// Hard keypoint-level NMS: suppressed keypoints are zeroed.
pub fn keypoint_nms(
    poses: Vec<Pose>,
    cfg: &NmsConfig,
    max_poses: usize,
    n_types: usize,
    image_size: (u32, u32),
) -> Vec<Pose> {
    nms_with_decay(
        poses.into_iter().map(|p| (p, ())).collect(),
        0.0,
        cfg,
        max_poses,
        n_types,
        image_size,
    )
    .into_iter()
    .map(|(p, ())| p)
    .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Keypoint;

    fn pose_at(x: f32, y: f32, n: usize, score: f32) -> Pose {
        let mut pose = Pose::empty(n);
        for (k, kp) in pose.keypoints.iter_mut().enumerate() {
            *kp = Keypoint {
                x: x + 10.0 * k as f32,
                y,
                score,
                size: 5.0,
            };
        }
        pose.instance_score = instance_score_of(&pose);
        pose
    }

    #[test]
    fn constant_scores_average_to_themselves() {
        assert!((instance_score(&[0.7; 17]) - 0.7).abs() < 1e-6);
        assert_eq!(instance_score(&[0.42]), 0.42);
        assert_eq!(instance_score(&[]), 0.0);
    }

    #[test]
    fn top_three_weighting() {
        let mut scores = vec![0.0f32; 17];
        scores[0] = 1.0;
        scores[1] = 1.0;
        scores[2] = 1.0;
        let s = instance_score(&scores);
        assert!((s - 9.0 / 23.0).abs() < 1e-6);
    }

    #[test]
    fn duplicate_poses_collapse_to_one() {
        let a = pose_at(50.0, 50.0, 5, 1.0);
        let b = a.clone();
        let out = keypoint_nms(vec![a, b], &NmsConfig::default(), 20, 5, (200, 200));
        assert_eq!(out.len(), 1);
    }

    #[test]
    fn distant_poses_survive_unchanged() {
        let a = pose_at(30.0, 30.0, 5, 1.0);
        let b = pose_at(30.0, 150.0, 5, 0.9);
        let out = keypoint_nms(vec![a.clone(), b.clone()], &NmsConfig::default(), 20, 5, (200, 200));
        assert_eq!(out.len(), 2);
        assert_eq!(out[0], a);
        assert_eq!(out[1], b);
    }

    #[test]
    fn partial_overlap_zeroes_only_the_shared_keypoint() {
        let a = pose_at(50.0, 50.0, 5, 1.0);
        let mut b = pose_at(50.0, 120.0, 5, 0.8);
        // One keypoint of b sits exactly on a's keypoint 2.
        b.keypoints[2] = a.keypoints[2];
        b.instance_score = instance_score_of(&b);
        let cfg = NmsConfig {
            min_keypoints: 1,
            instance_threshold: 0.1,
            ..NmsConfig::default()
        };
        let out = keypoint_nms(vec![a, b], &cfg, 20, 5, (200, 200));
        assert_eq!(out.len(), 2);
        assert!(!out[1].keypoints[2].is_detected());
        assert_eq!(out[1].detected_count(), 4);
    }

    #[test]
    fn max_poses_truncates() {
        let poses: Vec<Pose> = (0..6)
            .map(|i| pose_at(30.0, 20.0 + 60.0 * i as f32, 3, 1.0 - 0.05 * i as f32))
            .collect();
        let out = keypoint_nms(poses, &NmsConfig::default(), 4, 3, (420, 420));
        assert_eq!(out.len(), 4);
    }

    #[test]
    fn occupancy_claims_are_radial() {
        let mut occ = Occupancy::new(2, (100, 100));
        occ.claim(0, 50.0, 50.0, 6.0);
        assert!(occ.is_claimed(0, 53.0, 50.0));
        assert!(!occ.is_claimed(0, 57.0, 50.0));
        assert!(!occ.is_claimed(1, 50.0, 50.0));
    }
}
