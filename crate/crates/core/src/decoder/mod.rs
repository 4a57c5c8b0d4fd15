//! Greedy field decoding: intensity fields seed pose instances, association
//! fields grow them, keypoint-level NMS cleans up the result.

mod connection;
mod growth;
mod nms;
mod seeds;

pub use connection::{
    caf_association_score, find_connection, index_assoc_cells, AssocCell, Connection, Direction,
};
pub use growth::{force_complete, grow, GrowthEdge, GrowthGraph};
pub use nms::{instance_score, instance_score_of, keypoint_nms, nms_with_decay, NmsConfig, Occupancy};
pub use seeds::{extract_seeds, Seed};

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{cif_hr_accumulate, CafTensor, CifTensor, HrMap};
use crate::model::{Keypoint, Pose, Skeleton};

/// How seed scores are derived from the raw confidence cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SeedRescoring {
    /// Blend the high-resolution accumulation into the seed score.
    #[default]
    Hr,
    /// Keep only cells that are maximal in their 3x3 neighborhood.
    Local3x3Nms,
    /// Use the raw confidence.
    None,
}

impl std::str::FromStr for SeedRescoring {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "hr" => Ok(SeedRescoring::Hr),
            "local3x3nms" => Ok(SeedRescoring::Local3x3Nms),
            "none" => Ok(SeedRescoring::None),
            other => Err(Error::Domain(format!("unknown seed rescoring '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecoderConfig {
    /// Minimum (rescored) seed score.
    pub seed_threshold: f32,
    /// Minimum cell confidence for field cells to participate at all.
    pub conf_threshold: f32,
    /// Grown keypoints below this score are dropped from the pose.
    pub keypoint_threshold: f32,
    pub use_frontier: bool,
    pub use_dense_edges: bool,
    pub seed_rescoring: SeedRescoring,
    /// Multiply association scores by the target's high-resolution
    /// confidence.
    pub caf_rescoring: bool,
    /// Blend the best two associations when they agree on the target.
    pub blend_top2: bool,
    /// Fill undetected keypoints from sub-threshold evidence.
    pub force_complete: bool,
    pub max_poses: usize,
    /// High-resolution grid is `stride / hr_stride_divisor` pixels per node.
    pub hr_stride_divisor: u32,
    pub nms: NmsConfig,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        DecoderConfig {
            seed_threshold: 0.2,
            conf_threshold: 0.1,
            keypoint_threshold: 0.0,
            use_frontier: true,
            use_dense_edges: false,
            seed_rescoring: SeedRescoring::Hr,
            caf_rescoring: true,
            blend_top2: true,
            force_complete: false,
            max_poses: 20,
            hr_stride_divisor: 4,
            nms: NmsConfig::default(),
        }
    }
}

impl DecoderConfig {
    pub fn hr_stride(&self, stride: u32) -> u32 {
        (stride / self.hr_stride_divisor.max(1)).max(1)
    }

    pub fn needs_hr(&self) -> bool {
        self.caf_rescoring || self.seed_rescoring == SeedRescoring::Hr
    }
}

/// Wall time spent in each decode stage.
#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct DecodeTiming {
    pub accumulation: Duration,
    pub seeds: Duration,
    pub growth: Duration,
    pub nms: Duration,
}

impl DecodeTiming {
    pub fn total(&self) -> Duration {
        self.accumulation + self.seeds + self.growth + self.nms
    }
}

fn check_frame_shapes(cif: &CifTensor, caf: &CafTensor, skeleton: &Skeleton) -> Result<()> {
    if cif.n_keypoints != skeleton.n_keypoints() {
        return Err(Error::Shape(format!(
            "cif has {} keypoint channels, skeleton '{}' has {}",
            cif.n_keypoints,
            skeleton.name,
            skeleton.n_keypoints()
        )));
    }
    if caf.n_edges != skeleton.n_edges() {
        return Err(Error::Shape(format!(
            "caf has {} edge channels, skeleton '{}' has {}",
            caf.n_edges,
            skeleton.name,
            skeleton.n_edges()
        )));
    }
    if cif.stride != caf.stride || cif.image_size != caf.image_size {
        return Err(Error::Shape(
            "cif and caf disagree on stride or image size".into(),
        ));
    }
    Ok(())
}

/// The per-frame working set shared by the single-frame decoder and the
/// tracker.
pub struct FrameFields<'a> {
    pub skeleton: &'a Skeleton,
    pub stride: u32,
    pub image_size: (u32, u32),
    pub hr: Option<HrMap>,
    pub edge_cells: Vec<Vec<AssocCell>>,
    pub relaxed_edge_cells: Option<Vec<Vec<AssocCell>>>,
}

impl<'a> FrameFields<'a> {
    pub fn prepare(
        cif: &CifTensor,
        caf: &CafTensor,
        skeleton: &'a Skeleton,
        cfg: &DecoderConfig,
    ) -> Result<(Self, Duration)> {
        check_frame_shapes(cif, caf, skeleton)?;
        let start = Instant::now();
        let hr = cfg
            .needs_hr()
            .then(|| cif_hr_accumulate(cif, cfg.conf_threshold, cfg.hr_stride(cif.stride)));
        let accumulation = start.elapsed();
        let edge_cells = index_assoc_cells(caf, cfg.conf_threshold);
        let relaxed_edge_cells = cfg
            .force_complete
            .then(|| index_assoc_cells(caf, 1e-6));
        Ok((
            FrameFields {
                skeleton,
                stride: cif.stride,
                image_size: cif.image_size,
                hr,
                edge_cells,
                relaxed_edge_cells,
            },
            accumulation,
        ))
    }

    /// Single-frame growth graph: one node per keypoint type, every
    /// skeleton edge decodable in both directions.
    pub fn graph(&self) -> GrowthGraph<'_> {
        self.graph_from(&self.edge_cells)
    }

    fn graph_from<'s>(&'s self, cells: &'s [Vec<AssocCell>]) -> GrowthGraph<'s> {
        let edges = self
            .skeleton
            .edges
            .iter()
            .enumerate()
            .map(|(e, edge)| GrowthEdge {
                a: edge.source(),
                b: edge.target(),
                a_kp: edge.source(),
                b_kp: edge.target(),
                cells: &cells[e],
                bidirectional: true,
                dense: edge.is_dense(),
            })
            .collect();
        GrowthGraph::new(self.skeleton.n_keypoints(), edges)
    }
}

/// Decode one frame's fields into scored, NMS-filtered pose instances.
pub fn decode_frame(
    cif: &CifTensor,
    caf: &CafTensor,
    skeleton: &Skeleton,
    cfg: &DecoderConfig,
) -> Result<Vec<Pose>> {
    decode_frame_profiled(cif, caf, skeleton, cfg).map(|(poses, _)| poses)
}

/// Like [`decode_frame`] but also reports per-stage timings.
pub fn decode_frame_profiled(
    cif: &CifTensor,
    caf: &CafTensor,
    skeleton: &Skeleton,
    cfg: &DecoderConfig,
) -> Result<(Vec<Pose>, DecodeTiming)> {
    let (fields, accumulation) = FrameFields::prepare(cif, caf, skeleton, cfg)?;
    let mut timing = DecodeTiming {
        accumulation,
        ..DecodeTiming::default()
    };

    let start = Instant::now();
    let seeds = extract_seeds(cif, fields.hr.as_ref(), cfg);
    timing.seeds = start.elapsed();

    let start = Instant::now();
    let graph = fields.graph();
    let relaxed_graph = fields
        .relaxed_edge_cells
        .as_ref()
        .map(|cells| fields.graph_from(cells));
    let n_types = skeleton.n_keypoints();
    let mut occupancy = Occupancy::new(n_types, fields.image_size);
    let mut poses = Vec::new();
    for seed in &seeds {
        if occupancy.is_claimed(seed.keypoint, seed.x, seed.y) {
            continue;
        }
        let mut nodes = vec![Keypoint::undetected(); n_types];
        nodes[seed.keypoint] = Keypoint {
            x: seed.x,
            y: seed.y,
            score: seed.score,
            size: seed.size,
        };
        grow(&mut nodes, &graph, fields.hr.as_ref(), fields.stride, cfg);
        if cfg.keypoint_threshold > 0.0 {
            for kp in nodes.iter_mut() {
                if kp.is_detected() && kp.score < cfg.keypoint_threshold {
                    *kp = Keypoint::undetected();
                }
            }
        }
        if let Some(relaxed) = &relaxed_graph {
            force_complete(&mut nodes, relaxed, fields.hr.as_ref(), fields.stride, cfg);
        }
        for (k, kp) in nodes.iter().enumerate() {
            if kp.is_detected() {
                occupancy.claim(k, kp.x, kp.y, cfg.nms.radius(kp.size));
            }
        }
        let mut pose = Pose {
            instance_score: 0.0,
            keypoints: nodes,
        };
        if pose.detected_count() == 0 {
            continue;
        }
        pose.instance_score = instance_score_of(&pose);
        poses.push(pose);
    }
    timing.growth = start.elapsed();

    let start = Instant::now();
    let poses = keypoint_nms(poses, &cfg.nms, cfg.max_poses, n_types, fields.image_size);
    timing.nms = start.elapsed();
    Ok((poses, timing))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{encode_caf, encode_cif, generate_scene, EncoderOptions, SceneConfig};
    use crate::model::builtin_skeleton;

    fn decode_scene(
        seed: u64,
        cfg: &DecoderConfig,
        scene_cfg: &SceneConfig,
    ) -> (Vec<Pose>, Vec<crate::model::GroundTruthAnnotation>) {
        let skeleton = builtin_skeleton("coco17").unwrap();
        let scene = generate_scene(seed, &skeleton, scene_cfg).unwrap();
        let annotations = scene.frame_annotations(0);
        let opts = EncoderOptions::default();
        let (cif, _) = encode_cif(&annotations, &skeleton, 8, scene.image_size, &opts).unwrap();
        let (caf, _) = encode_caf(&annotations, &skeleton, 8, scene.image_size, &opts).unwrap();
        let poses = decode_frame(&cif, &caf, &skeleton, cfg).unwrap();
        (poses, annotations)
    }

    fn max_keypoint_error(pose: &Pose, gt: &crate::model::GroundTruthAnnotation) -> f32 {
        pose.keypoints
            .iter()
            .zip(gt.keypoints.iter())
            .filter(|(_, g)| g.is_labeled())
            .map(|(p, g)| ((p.x - g.x).powi(2) + (p.y - g.y).powi(2)).sqrt())
            .fold(0.0, f32::max)
    }

    #[test]
    fn single_pose_round_trip_recovers_all_keypoints() {
        let cfg = DecoderConfig::default();
        let scene_cfg = SceneConfig {
            min_poses: 1,
            max_poses: 1,
            ..SceneConfig::default()
        };
        let (poses, annotations) = decode_scene(7, &cfg, &scene_cfg);
        assert_eq!(poses.len(), 1);
        assert_eq!(poses[0].detected_count(), 17);
        assert!(max_keypoint_error(&poses[0], &annotations[0]) < 0.5);
        assert!(poses[0].instance_score > 0.99);
    }

    #[test]
    fn disjoint_poses_decode_one_to_one() {
        let cfg = DecoderConfig::default();
        let scene_cfg = SceneConfig {
            min_poses: 5,
            max_poses: 5,
            ..SceneConfig::default()
        };
        for seed in [1u64, 2, 3] {
            let (poses, annotations) = decode_scene(seed, &cfg, &scene_cfg);
            assert_eq!(poses.len(), annotations.len(), "seed {seed}");
            for pose in &poses {
                let best = annotations
                    .iter()
                    .map(|gt| max_keypoint_error(pose, gt))
                    .fold(f32::INFINITY, f32::min);
                assert!(best < 0.5, "seed {seed}: worst keypoint error {best}");
            }
        }
    }

    #[test]
    fn empty_fields_decode_to_nothing() {
        let skeleton = builtin_skeleton("coco17").unwrap();
        let cif = CifTensor::zeros(17, 8, (160, 160)).unwrap();
        let caf = CafTensor::zeros(18, 8, (160, 160)).unwrap();
        let poses = decode_frame(&cif, &caf, &skeleton, &DecoderConfig::default()).unwrap();
        assert!(poses.is_empty());
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let skeleton = builtin_skeleton("coco17").unwrap();
        let cif = CifTensor::zeros(16, 8, (160, 160)).unwrap();
        let caf = CafTensor::zeros(18, 8, (160, 160)).unwrap();
        assert!(matches!(
            decode_frame(&cif, &caf, &skeleton, &DecoderConfig::default()),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn frontier_and_serial_agree_on_unambiguous_scenes() {
        let scene_cfg = SceneConfig {
            min_poses: 2,
            max_poses: 4,
            ..SceneConfig::default()
        };
        for seed in 0..5u64 {
            let frontier_cfg = DecoderConfig::default();
            let serial_cfg = DecoderConfig {
                use_frontier: false,
                ..DecoderConfig::default()
            };
            let (a, _) = decode_scene(seed, &frontier_cfg, &scene_cfg);
            let (b, _) = decode_scene(seed, &serial_cfg, &scene_cfg);
            assert_eq!(a, b, "seed {seed}");
        }
    }

    #[test]
    fn decoding_is_deterministic() {
        let scene_cfg = SceneConfig {
            min_poses: 3,
            max_poses: 6,
            ..SceneConfig::default()
        };
        let cfg = DecoderConfig::default();
        let (a, _) = decode_scene(11, &cfg, &scene_cfg);
        let (b, _) = decode_scene(11, &cfg, &scene_cfg);
        assert_eq!(a, b);
    }

    #[test]
    fn seed_without_associations_stays_a_single_keypoint() {
        let skeleton = builtin_skeleton("coco17").unwrap();
        let mut cif = CifTensor::zeros(17, 8, (160, 160)).unwrap();
        use crate::fields::cif_ch;
        for (j, i) in [(5, 5), (5, 6), (6, 5), (6, 6)] {
            cif.set(cif_ch::C, 3, j, i, 1.0);
            cif.set(cif_ch::X, 3, j, i, 44.0);
            cif.set(cif_ch::Y, 3, j, i, 44.0);
            cif.set(cif_ch::SIGMA, 3, j, i, 5.0);
            cif.set(cif_ch::B, 3, j, i, 1.0);
        }
        let caf = CafTensor::zeros(18, 8, (160, 160)).unwrap();
        let cfg = DecoderConfig {
            nms: NmsConfig {
                instance_threshold: 0.1,
                ..NmsConfig::default()
            },
            ..DecoderConfig::default()
        };
        let poses = decode_frame(&cif, &caf, &skeleton, &cfg).unwrap();
        assert_eq!(poses.len(), 1);
        assert_eq!(poses[0].detected_count(), 1);
        assert!(poses[0].keypoints[3].is_detected());
    }

    #[test]
    fn raising_seed_threshold_never_adds_poses() {
        let scene_cfg = SceneConfig {
            min_poses: 3,
            max_poses: 6,
            ..SceneConfig::default()
        };
        for seed in 0..5u64 {
            let mut counts = Vec::new();
            for threshold in [0.1f32, 0.3, 0.6, 0.9] {
                let cfg = DecoderConfig {
                    seed_threshold: threshold,
                    ..DecoderConfig::default()
                };
                let (poses, _) = decode_scene(seed, &cfg, &scene_cfg);
                counts.push(poses.len());
            }
            for pair in counts.windows(2) {
                assert!(pair[1] <= pair[0], "seed {seed}: counts {counts:?}");
            }
        }
    }

    #[test]
    fn force_complete_fills_from_weak_evidence() {
        let skeleton = builtin_skeleton("coco17").unwrap();
        let scene_cfg = SceneConfig {
            min_poses: 1,
            max_poses: 1,
            ..SceneConfig::default()
        };
        let scene = generate_scene(3, &skeleton, &scene_cfg).unwrap();
        let annotations = scene.frame_annotations(0);
        let opts = EncoderOptions::default();
        let (cif, _) = encode_cif(&annotations, &skeleton, 8, scene.image_size, &opts).unwrap();
        let (mut caf, _) = encode_caf(&annotations, &skeleton, 8, scene.image_size, &opts).unwrap();

        // Weaken one limb edge below the confidence threshold.
        use crate::fields::caf_ch;
        let edge = 10; // wrist edge (7, 9)
        for j in 0..caf.height {
            for i in 0..caf.width {
                let c = caf.get(caf_ch::C, edge, j, i);
                if c > 0.0 {
                    caf.set(caf_ch::C, edge, j, i, 0.05);
                }
            }
        }

        let plain = decode_frame(&cif, &caf, &skeleton, &DecoderConfig::default()).unwrap();
        assert_eq!(plain[0].detected_count(), 16);

        let forced_cfg = DecoderConfig {
            force_complete: true,
            ..DecoderConfig::default()
        };
        let forced = decode_frame(&cif, &caf, &skeleton, &forced_cfg).unwrap();
        assert_eq!(forced[0].detected_count(), 17);
        let filled = forced[0].keypoints[9];
        assert!(filled.score >= 0.001);
        let gt = &annotations[0].keypoints[9];
        assert!(((filled.x - gt.x).powi(2) + (filled.y - gt.y).powi(2)).sqrt() < 2.0);
    }
}
