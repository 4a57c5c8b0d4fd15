//! Pose-to-pose similarity for frame-to-frame matching baselines.

use crate::error::{Error, Result};
use crate::metrics;
use crate::model::{GroundTruthAnnotation, GtKeypoint, Pose, Skeleton, Visibility};

/// Mean Euclidean distance over keypoints detected in both poses;
/// infinite when they share none.
pub fn pose_distance_euclidean(a: &Pose, b: &Pose) -> Result<f64> {
    if a.keypoints.len() != b.keypoints.len() {
        return Err(Error::Shape(format!(
            "poses have {} vs {} keypoints",
            a.keypoints.len(),
            b.keypoints.len()
        )));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for (ka, kb) in a.keypoints.iter().zip(b.keypoints.iter()) {
        if ka.is_detected() && kb.is_detected() {
            sum += ((ka.x as f64 - kb.x as f64).powi(2) + (ka.y as f64 - kb.y as f64).powi(2))
                .sqrt();
            count += 1;
        }
    }
    if count == 0 {
        return Ok(f64::INFINITY);
    }
    Ok(sum / count as f64)
}

/// OKS similarity between two poses (1 = identical), treating `b`'s
/// detected keypoints as the reference.
pub fn pose_distance_oks(a: &Pose, b: &Pose, skeleton: &Skeleton, area: f64) -> Result<f64> {
    let reference = GroundTruthAnnotation::new(
        b.keypoints
            .iter()
            .map(|k| {
                if k.is_detected() {
                    GtKeypoint {
                        x: k.x,
                        y: k.y,
                        visibility: Visibility::Visible,
                        size: k.size,
                    }
                } else {
                    GtKeypoint::absent()
                }
            })
            .collect(),
    );
    metrics::oks(a, &reference, skeleton, area)
}
