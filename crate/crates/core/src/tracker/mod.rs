//! Frame-to-frame pose association.
//!
//! The main mode grows spatio-temporal poses: a tracked pose from the
//! previous frame is frozen as the first block of a two-frame pose graph
//! and completed into the current frame over spatial and temporal
//! association fields, with the frontier picking whichever connection
//! scores best. Hungarian matching over pose distances is kept as a
//! baseline.

mod distance;
pub mod hungarian;

pub use distance::{pose_distance_euclidean, pose_distance_oks};

use serde::{Deserialize, Serialize};

use crate::decoder::{
    decode_frame, extract_seeds, grow, index_assoc_cells, instance_score_of, nms_with_decay,
    AssocCell, DecoderConfig, FrameFields, GrowthEdge, GrowthGraph, Occupancy,
};
use crate::error::{Error, Result};
use crate::fields::{CafTensor, CifTensor, TcafTensor};
use crate::model::{Keypoint, Pose, Skeleton, Track, TrackedPose};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Baseline {
    /// Spatio-temporal poses over temporal association fields.
    #[default]
    Tcaf,
    HungarianEuclidean,
    HungarianOks,
}

impl std::str::FromStr for Baseline {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "tcaf" => Ok(Baseline::Tcaf),
            "hungarian-euclidean" => Ok(Baseline::HungarianEuclidean),
            "hungarian-oks" => Ok(Baseline::HungarianOks),
            other => Err(Error::Domain(format!("unknown tracking baseline '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackingConfig {
    pub decoder: DecoderConfig,
    pub baseline: Baseline,
    /// Suppressed keypoint scores are multiplied by this in soft NMS.
    pub soft_nms_decay: f32,
    /// Maximum joint distance for the Euclidean Hungarian baseline, px.
    pub euclidean_threshold: f64,
    /// Minimum OKS similarity for the OKS Hungarian baseline.
    pub oks_threshold: f64,
    /// Tracks without an update for more than this many frames retire.
    pub track_timeout: u64,
}

impl Default for TrackingConfig {
    fn default() -> Self {
        TrackingConfig {
            decoder: DecoderConfig::default(),
            baseline: Baseline::Tcaf,
            soft_nms_decay: 0.0,
            euclidean_threshold: 50.0,
            oks_threshold: 0.3,
            track_timeout: 2,
        }
    }
}

/// Sequence-scoped tracker state: active tracks and the id counter.
#[derive(Debug, Default)]
pub struct TrackerState {
    pub tracks: Vec<Track>,
    next_track_id: u64,
    last_frame: Option<u64>,
}

impl TrackerState {
    pub fn new() -> Self {
        TrackerState {
            tracks: Vec::new(),
            next_track_id: 1,
            last_frame: None,
        }
    }

    pub fn last_frame(&self) -> Option<u64> {
        self.last_frame
    }

    fn fresh_id(&mut self) -> u64 {
        let id = self.next_track_id;
        self.next_track_id += 1;
        id
    }
}

/// Soft keypoint NMS over tracked poses: overlapping keypoints decay
/// instead of removing the pose outright; a pose is dropped only when its
/// recomputed instance score falls below the threshold.
pub fn soft_nms(
    poses: Vec<TrackedPose>,
    decay: f32,
    decoder_cfg: &DecoderConfig,
    n_types: usize,
    image_size: (u32, u32),
) -> Vec<TrackedPose> {
    nms_with_decay(
        poses.into_iter().map(|tp| (tp.pose, tp.track_id)).collect(),
        decay,
        &decoder_cfg.nms,
        decoder_cfg.max_poses,
        n_types,
        image_size,
    )
    .into_iter()
    .map(|(pose, track_id)| TrackedPose { track_id, pose })
    .collect()
}

/// Advance the tracker by one frame and return the tracked poses.
///
/// In TCAF mode, poses from tracks active in the previous frame are grown
/// first (continuity wins occupancy ties), then unclaimed single-frame
/// seeds start new poses. The current-frame block of every completed
/// spatio-temporal pose is extracted, soft NMS filters duplicates, and
/// surviving poses keep their originating track id or get a fresh one.
pub fn track_step(
    state: &mut TrackerState,
    frame: u64,
    cif: &CifTensor,
    caf: &CafTensor,
    tcaf: Option<&TcafTensor>,
    skeleton: &Skeleton,
    cfg: &TrackingConfig,
) -> Result<Vec<TrackedPose>> {
    if let Some(last) = state.last_frame {
        if frame <= last {
            return Err(Error::Sequence(format!(
                "frame {frame} is not after the last processed frame {last}"
            )));
        }
        if tcaf.is_some() && frame != last + 1 {
            return Err(Error::Sequence(format!(
                "temporal fields bridge frames {last} -> {} but frame {frame} was supplied",
                last + 1
            )));
        }
    }
    if let Some(t) = tcaf {
        if t.0.n_edges != skeleton.temporal_edges.len() {
            return Err(Error::Shape(format!(
                "tcaf has {} channels, skeleton '{}' defines {} temporal edges",
                t.0.n_edges,
                skeleton.name,
                skeleton.temporal_edges.len()
            )));
        }
    }

    let candidates = match cfg.baseline {
        Baseline::Tcaf => step_tcaf(state, frame, cif, caf, tcaf, skeleton, cfg)?,
        Baseline::HungarianEuclidean | Baseline::HungarianOks => {
            step_hungarian(state, frame, cif, caf, skeleton, cfg)?
        }
    };

    let survivors = nms_with_decay(
        candidates,
        cfg.soft_nms_decay,
        &cfg.decoder.nms,
        cfg.decoder.max_poses,
        skeleton.n_keypoints(),
        cif.image_size,
    );

    let mut out = Vec::with_capacity(survivors.len());
    for (pose, track_id) in survivors {
        let track_id = track_id.unwrap_or_else(|| state.fresh_id());
        if let Some(track) = state.tracks.iter_mut().find(|t| t.id == track_id) {
            track.push(frame, pose.clone());
        } else {
            state.tracks.push(Track::new(track_id, frame, pose.clone()));
        }
        out.push(TrackedPose { track_id, pose });
    }

    state
        .tracks
        .retain(|t| frame - t.last_active_frame <= cfg.track_timeout);
    state.last_frame = Some(frame);
    Ok(out)
}

type Candidate = (Pose, Option<u64>);

fn extract_t0_block(nodes: &[Keypoint], k: usize, cfg: &DecoderConfig) -> Pose {
    let mut keypoints: Vec<Keypoint> = nodes[k..2 * k].to_vec();
    if cfg.keypoint_threshold > 0.0 {
        for kp in keypoints.iter_mut() {
            if kp.is_detected() && kp.score < cfg.keypoint_threshold {
                *kp = Keypoint::undetected();
            }
        }
    }
    let mut pose = Pose {
        instance_score: 0.0,
        keypoints,
    };
    pose.instance_score = instance_score_of(&pose);
    pose
}

fn step_tcaf(
    state: &mut TrackerState,
    frame: u64,
    cif: &CifTensor,
    caf: &CafTensor,
    tcaf: Option<&TcafTensor>,
    skeleton: &Skeleton,
    cfg: &TrackingConfig,
) -> Result<Vec<Candidate>> {
    let dcfg = &cfg.decoder;
    let (fields, _) = FrameFields::prepare(cif, caf, skeleton, dcfg)?;
    let temporal_cells: Option<Vec<Vec<AssocCell>>> = tcaf
        .filter(|_| state.last_frame.map_or(false, |last| frame == last + 1))
        .map(|t| index_assoc_cells(&t.0, dcfg.conf_threshold));

    let k = skeleton.n_keypoints();
    let mut edges: Vec<GrowthEdge> = skeleton
        .edges
        .iter()
        .enumerate()
        .map(|(e, edge)| GrowthEdge {
            a: k + edge.source(),
            b: k + edge.target(),
            a_kp: edge.source(),
            b_kp: edge.target(),
            cells: &fields.edge_cells[e],
            bidirectional: true,
            dense: edge.is_dense(),
        })
        .collect();
    if let Some(cells) = &temporal_cells {
        for (ti, &kp) in skeleton.temporal_edges.iter().enumerate() {
            edges.push(GrowthEdge {
                a: kp,
                b: k + kp,
                a_kp: kp,
                b_kp: kp,
                cells: &cells[ti],
                bidirectional: false,
                dense: false,
            });
        }
    }
    let graph = GrowthGraph::new(2 * k, edges);

    let mut occupancy = Occupancy::new(k, cif.image_size);
    let mut candidates: Vec<Candidate> = Vec::new();

    // Existing tracks first, best previous pose first.
    if temporal_cells.is_some() {
        let prev_frame = frame - 1;
        let mut track_order: Vec<usize> = (0..state.tracks.len())
            .filter(|&i| state.tracks[i].last_active_frame == prev_frame)
            .collect();
        track_order.sort_by(|&a, &b| {
            let sa = state.tracks[a].last_pose().map_or(0.0, |p| p.instance_score);
            let sb = state.tracks[b].last_pose().map_or(0.0, |p| p.instance_score);
            sb.total_cmp(&sa)
                .then(state.tracks[a].id.cmp(&state.tracks[b].id))
        });
        for ti in track_order {
            let track = &state.tracks[ti];
            let Some(prev_pose) = track.last_pose() else {
                continue;
            };
            let mut nodes = vec![Keypoint::undetected(); 2 * k];
            nodes[..k].copy_from_slice(&prev_pose.keypoints);
            grow(&mut nodes, &graph, fields.hr.as_ref(), fields.stride, dcfg);
            let pose = extract_t0_block(&nodes, k, dcfg);
            if pose.detected_count() == 0 {
                continue;
            }
            for (kp_type, kp) in pose.keypoints.iter().enumerate() {
                if kp.is_detected() {
                    occupancy.claim(kp_type, kp.x, kp.y, dcfg.nms.radius(kp.size));
                }
            }
            candidates.push((pose, Some(track.id)));
        }
    }

    // New poses from unclaimed single-frame seeds.
    let seeds = extract_seeds(cif, fields.hr.as_ref(), dcfg);
    for seed in &seeds {
        if occupancy.is_claimed(seed.keypoint, seed.x, seed.y) {
            continue;
        }
        let mut nodes = vec![Keypoint::undetected(); 2 * k];
        nodes[k + seed.keypoint] = Keypoint {
            x: seed.x,
            y: seed.y,
            score: seed.score,
            size: seed.size,
        };
        grow(&mut nodes, &graph, fields.hr.as_ref(), fields.stride, dcfg);
        let pose = extract_t0_block(&nodes, k, dcfg);
        if pose.detected_count() == 0 {
            continue;
        }
        for (kp_type, kp) in pose.keypoints.iter().enumerate() {
            if kp.is_detected() {
                occupancy.claim(kp_type, kp.x, kp.y, dcfg.nms.radius(kp.size));
            }
        }
        candidates.push((pose, None));
    }
    Ok(candidates)
}

fn step_hungarian(
    state: &mut TrackerState,
    frame: u64,
    cif: &CifTensor,
    caf: &CafTensor,
    skeleton: &Skeleton,
    cfg: &TrackingConfig,
) -> Result<Vec<Candidate>> {
    let poses = decode_frame(cif, caf, skeleton, &cfg.decoder)?;
    let previous: Vec<(u64, Pose)> = state
        .tracks
        .iter()
        .filter(|t| t.last_active_frame < frame)
        .filter_map(|t| t.last_pose().map(|p| (t.id, p.clone())))
        .collect();
    let ids = assign_hungarian(&previous, &poses, skeleton, cfg)?;
    Ok(poses.into_iter().zip(ids).collect())
}

const FORBIDDEN: f64 = 1e9;

/// Assign previous track ids to current poses by minimum-cost matching.
/// Pairs beyond the distance (or below the similarity) threshold stay
/// unmatched and yield `None`.
pub fn hungarian_track(
    previous: &[TrackedPose],
    current: &[Pose],
    skeleton: &Skeleton,
    cfg: &TrackingConfig,
) -> Result<Vec<Option<u64>>> {
    let prev: Vec<(u64, Pose)> = previous
        .iter()
        .map(|tp| (tp.track_id, tp.pose.clone()))
        .collect();
    assign_hungarian(&prev, current, skeleton, cfg)
}

fn assign_hungarian(
    previous: &[(u64, Pose)],
    current: &[Pose],
    skeleton: &Skeleton,
    cfg: &TrackingConfig,
) -> Result<Vec<Option<u64>>> {
    if previous.is_empty() || current.is_empty() {
        return Ok(vec![None; current.len()]);
    }
    let mut cost = vec![vec![FORBIDDEN; previous.len()]; current.len()];
    let mut admissible = vec![vec![false; previous.len()]; current.len()];
    for (i, cur) in current.iter().enumerate() {
        for (j, (_, prev)) in previous.iter().enumerate() {
            match cfg.baseline {
                Baseline::HungarianOks => {
                    let area = prev.bbox().map(|b| b.area() as f64).unwrap_or(0.0).max(1.0);
                    let similarity = pose_distance_oks(cur, prev, skeleton, area)?;
                    if similarity >= cfg.oks_threshold {
                        cost[i][j] = 1.0 - similarity;
                        admissible[i][j] = true;
                    }
                }
                _ => {
                    let d = pose_distance_euclidean(cur, prev)?;
                    if d <= cfg.euclidean_threshold {
                        cost[i][j] = d;
                        admissible[i][j] = true;
                    }
                }
            }
        }
    }
    let (assignment, _) = hungarian::solve(&cost);
    Ok(assignment
        .into_iter()
        .enumerate()
        .map(|(i, j)| match j {
            Some(j) if admissible[i][j] => Some(previous[j].0),
            _ => None,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{
        encode_caf, encode_cif, encode_tcaf, generate_scene, EncoderOptions, Scene, SceneConfig,
    };
    use crate::model::builtin_skeleton;

    fn track_scene(
        scene: &Scene,
        skeleton: &Skeleton,
        cfg: &TrackingConfig,
    ) -> Vec<Vec<TrackedPose>> {
        let opts = EncoderOptions::default();
        let mut state = TrackerState::new();
        let mut out = Vec::new();
        for (f, _) in scene.frames.iter().enumerate() {
            let annotations = scene.frame_annotations(f);
            let (cif, _) =
                encode_cif(&annotations, skeleton, 8, scene.image_size, &opts).unwrap();
            let (caf, _) =
                encode_caf(&annotations, skeleton, 8, scene.image_size, &opts).unwrap();
            let tcaf = (f > 0).then(|| {
                encode_tcaf(
                    &scene.frames[f - 1],
                    &scene.frames[f],
                    skeleton,
                    8,
                    scene.image_size,
                    &opts,
                )
                .unwrap()
                .0
            });
            let tracked = track_step(
                &mut state,
                f as u64,
                &cif,
                &caf,
                tcaf.as_ref(),
                skeleton,
                cfg,
            )
            .unwrap();
            out.push(tracked);
        }
        out
    }

    fn id_sets(frames: &[Vec<TrackedPose>]) -> Vec<Vec<u64>> {
        frames
            .iter()
            .map(|f| {
                let mut ids: Vec<u64> = f.iter().map(|t| t.track_id).collect();
                ids.sort_unstable();
                ids
            })
            .collect()
    }

    #[test]
    fn static_scene_keeps_track_ids() {
        let skeleton = builtin_skeleton("posetrack17").unwrap();
        let cfg = TrackingConfig::default();
        let scene_cfg = SceneConfig {
            min_poses: 2,
            max_poses: 2,
            frames: 2,
            velocity_range: (0.0, 0.0),
            ..SceneConfig::default()
        };
        let scene = generate_scene(21, &skeleton, &scene_cfg).unwrap();
        let frames = track_scene(&scene, &skeleton, &cfg);
        let ids = id_sets(&frames);
        assert_eq!(ids[0].len(), 2);
        assert_eq!(ids[0], ids[1], "ids must be stable across frames");
    }

    #[test]
    fn moving_scene_keeps_track_ids_for_all_baselines() {
        let skeleton = builtin_skeleton("posetrack17").unwrap();
        let scene_cfg = SceneConfig {
            min_poses: 3,
            max_poses: 3,
            frames: 6,
            velocity_range: (3.0, 6.0),
            ..SceneConfig::default()
        };
        let scene = generate_scene(8, &skeleton, &scene_cfg).unwrap();
        for baseline in [
            Baseline::Tcaf,
            Baseline::HungarianEuclidean,
            Baseline::HungarianOks,
        ] {
            let cfg = TrackingConfig {
                baseline,
                ..TrackingConfig::default()
            };
            let frames = track_scene(&scene, &skeleton, &cfg);
            let ids = id_sets(&frames);
            for f in 1..ids.len() {
                assert_eq!(ids[f], ids[0], "{baseline:?} changed ids at frame {f}");
            }
        }
    }

    #[test]
    fn appearing_person_gets_a_new_id() {
        let skeleton = builtin_skeleton("posetrack17").unwrap();
        let scene_cfg = SceneConfig {
            min_poses: 2,
            max_poses: 2,
            frames: 3,
            velocity_range: (0.0, 0.0),
            ..SceneConfig::default()
        };
        let scene = generate_scene(33, &skeleton, &scene_cfg).unwrap();
        // Drop identity 2 from the first frame.
        let mut edited = scene.clone();
        edited.frames[0].annotations.retain(|a| a.id != 2);

        let cfg = TrackingConfig::default();
        let frames = track_scene(&edited, &skeleton, &cfg);
        assert_eq!(frames[0].len(), 1);
        assert_eq!(frames[1].len(), 2);
        let first_id = frames[0][0].track_id;
        let new_ids: Vec<u64> = frames[1]
            .iter()
            .map(|t| t.track_id)
            .filter(|&id| id != first_id)
            .collect();
        assert_eq!(new_ids.len(), 1);
        // The newcomer's id persists.
        assert!(frames[2].iter().any(|t| t.track_id == new_ids[0]));
    }

    #[test]
    fn all_zero_tcaf_starts_fresh_tracks_every_frame() {
        let skeleton = builtin_skeleton("posetrack17").unwrap();
        let scene_cfg = SceneConfig {
            min_poses: 1,
            max_poses: 1,
            frames: 3,
            velocity_range: (0.0, 0.0),
            ..SceneConfig::default()
        };
        let scene = generate_scene(4, &skeleton, &scene_cfg).unwrap();
        let opts = EncoderOptions::default();
        let cfg = TrackingConfig::default();
        let mut state = TrackerState::new();
        let mut seen_ids = Vec::new();
        for f in 0..3 {
            let annotations = scene.frame_annotations(f);
            let (cif, _) =
                encode_cif(&annotations, &skeleton, 8, scene.image_size, &opts).unwrap();
            let (caf, _) =
                encode_caf(&annotations, &skeleton, 8, scene.image_size, &opts).unwrap();
            let zero_tcaf = TcafTensor(
                CafTensor::zeros(skeleton.temporal_edges.len(), 8, scene.image_size).unwrap(),
            );
            let tcaf = (f > 0).then_some(&zero_tcaf);
            let tracked =
                track_step(&mut state, f as u64, &cif, &caf, tcaf, &skeleton, &cfg).unwrap();
            assert_eq!(tracked.len(), 1);
            seen_ids.push(tracked[0].track_id);
        }
        assert_eq!(seen_ids.len(), 3);
        assert!(seen_ids[0] < seen_ids[1] && seen_ids[1] < seen_ids[2]);
    }

    #[test]
    fn out_of_order_frames_are_rejected() {
        let skeleton = builtin_skeleton("posetrack17").unwrap();
        let cif = CifTensor::zeros(17, 8, (160, 160)).unwrap();
        let caf = CafTensor::zeros(18, 8, (160, 160)).unwrap();
        let cfg = TrackingConfig::default();
        let mut state = TrackerState::new();
        track_step(&mut state, 5, &cif, &caf, None, &skeleton, &cfg).unwrap();
        assert!(matches!(
            track_step(&mut state, 5, &cif, &caf, None, &skeleton, &cfg),
            Err(Error::Sequence(_))
        ));
        let tcaf = TcafTensor(CafTensor::zeros(17, 8, (160, 160)).unwrap());
        assert!(matches!(
            track_step(&mut state, 8, &cif, &caf, Some(&tcaf), &skeleton, &cfg),
            Err(Error::Sequence(_))
        ));
    }

    #[test]
    fn hungarian_track_matches_by_geometry_not_order() {
        let skeleton = builtin_skeleton("posetrack17").unwrap();
        let scene_cfg = SceneConfig {
            min_poses: 2,
            max_poses: 2,
            ..SceneConfig::default()
        };
        let scene = generate_scene(13, &skeleton, &scene_cfg).unwrap();
        let annotations = scene.frame_annotations(0);
        let opts = EncoderOptions::default();
        let (cif, _) = encode_cif(&annotations, &skeleton, 8, scene.image_size, &opts).unwrap();
        let (caf, _) = encode_caf(&annotations, &skeleton, 8, scene.image_size, &opts).unwrap();
        let poses =
            decode_frame(&cif, &caf, &skeleton, &DecoderConfig::default()).unwrap();
        assert_eq!(poses.len(), 2);

        let previous = vec![
            TrackedPose {
                track_id: 101,
                pose: poses[1].clone(),
            },
            TrackedPose {
                track_id: 102,
                pose: poses[0].clone(),
            },
        ];
        let cfg = TrackingConfig {
            baseline: Baseline::HungarianEuclidean,
            ..TrackingConfig::default()
        };
        let ids = hungarian_track(&previous, &poses, &skeleton, &cfg).unwrap();
        assert_eq!(ids, vec![Some(102), Some(101)]);
    }

    #[test]
    fn hungarian_threshold_leaves_far_poses_unmatched() {
        let skeleton = builtin_skeleton("posetrack17").unwrap();
        let mut pose = Pose::empty(17);
        for (i, kp) in pose.keypoints.iter_mut().enumerate() {
            *kp = Keypoint {
                x: 100.0 + i as f32,
                y: 100.0,
                score: 1.0,
                size: 4.0,
            };
        }
        pose.instance_score = 1.0;
        let mut far = pose.clone();
        for kp in far.keypoints.iter_mut() {
            kp.x += 300.0;
        }
        let previous = vec![TrackedPose {
            track_id: 7,
            pose,
        }];
        let cfg = TrackingConfig {
            baseline: Baseline::HungarianEuclidean,
            ..TrackingConfig::default()
        };
        let ids = hungarian_track(&previous, &[far], &skeleton, &cfg).unwrap();
        assert_eq!(ids, vec![None]);
    }
}
