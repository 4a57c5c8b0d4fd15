//! Deterministic synthetic scene generation for round-trip testing and
//! benchmarks. Poses are articulated variations of a per-skeleton template;
//! sequences move identities at constant velocity, optionally on crossing
//! trajectories.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{GroundTruthAnnotation, GtKeypoint, Skeleton, Visibility};

pub const SCENE_FORMAT_VERSION: u32 = 1;

/// One annotated identity in one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneAnnotation {
    pub id: u64,
    #[serde(flatten)]
    pub gt: GroundTruthAnnotation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneFrame {
    pub annotations: Vec<SceneAnnotation>,
}

/// A single- or multi-frame annotated scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub format_version: u32,
    pub image_size: (u32, u32),
    pub frames: Vec<SceneFrame>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<serde_json::Value>,
}

impl Scene {
    pub fn frame_annotations(&self, frame: usize) -> Vec<GroundTruthAnnotation> {
        self.frames[frame]
            .annotations
            .iter()
            .map(|a| a.gt.clone())
            .collect()
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json_str(json: &str) -> Result<Scene> {
        Ok(serde_json::from_str(json)?)
    }

    pub fn from_json_file(path: &Path) -> Result<Scene> {
        Scene::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn write_json_file(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json_string()?)?;
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SceneConfig {
    pub image_size: (u32, u32),
    pub min_poses: usize,
    pub max_poses: usize,
    pub frames: usize,
    /// Target pose bounding-box diagonal range in pixels.
    pub scale_range: (f32, f32),
    pub allow_overlap: bool,
    /// Minimum gap between instance bounding boxes when overlap is off.
    pub min_gap: f32,
    /// Keep-out margin from the image border.
    pub margin: f32,
    pub hidden_fraction: f32,
    pub absent_fraction: f32,
    /// Speed range in pixels per frame for multi-frame scenes.
    pub velocity_range: (f32, f32),
    /// Generate exactly two identities on intersecting trajectories whose
    /// centers swap sides over the sequence.
    pub crossing: bool,
    /// Perpendicular offset between the two crossing trajectories.
    pub crossing_offset: f32,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            image_size: (801, 801),
            min_poses: 1,
            max_poses: 3,
            frames: 1,
            scale_range: (60.0, 140.0),
            allow_overlap: false,
            min_gap: 24.0,
            margin: 16.0,
            hidden_fraction: 0.0,
            absent_fraction: 0.0,
            velocity_range: (2.0, 6.0),
            crossing: false,
            crossing_offset: 20.0,
        }
    }
}

const GOLDEN_ANGLE: f32 = 2.399_963_2;
const PLACEMENT_ATTEMPTS: usize = 300;

/// Keypoint layout grown over the sparse edges: every edge gets a
/// deterministic base direction, perturbed per instance.
fn layout(skeleton: &Skeleton, rng: &mut ChaCha8Rng, jitter: bool) -> Vec<(f32, f32)> {
    let n = skeleton.n_keypoints();
    let sparse: Vec<(usize, usize, usize)> = skeleton
        .sparse_edges()
        .map(|(e, edge)| (e, edge.source(), edge.target()))
        .collect();
    let params: Vec<(f32, f32)> = sparse
        .iter()
        .map(|&(e, _, _)| {
            let base = e as f32 * GOLDEN_ANGLE;
            if jitter {
                (
                    base + rng.gen_range(-0.3..0.3),
                    rng.gen_range(0.75..1.25f32),
                )
            } else {
                (base, 1.0)
            }
        })
        .collect();

    let mut pos: Vec<Option<(f32, f32)>> = vec![None; n];
    pos[0] = Some((0.0, 0.0));
    loop {
        let mut progressed = false;
        for (idx, &(_, s, t)) in sparse.iter().enumerate() {
            let (angle, len) = params[idx];
            let step = (angle.cos() * len, angle.sin() * len);
            match (pos[s], pos[t]) {
                (Some(p), None) => {
                    pos[t] = Some((p.0 + step.0, p.1 + step.1));
                    progressed = true;
                }
                (None, Some(p)) => {
                    pos[s] = Some((p.0 - step.0, p.1 - step.1));
                    progressed = true;
                }
                _ => {}
            }
        }
        if !progressed {
            break;
        }
    }
    pos.into_iter().map(|p| p.unwrap_or((0.0, 0.0))).collect()
}

struct InstanceShape {
    /// Keypoint offsets from the bbox center.
    offsets: Vec<(f32, f32)>,
    half_w: f32,
    half_h: f32,
    diag: f32,
}

fn sample_shape(skeleton: &Skeleton, rng: &mut ChaCha8Rng, target_diag: f32) -> InstanceShape {
    let raw = layout(skeleton, rng, true);
    let rot = rng.gen_range(0.0..std::f32::consts::TAU);
    let (sin, cos) = rot.sin_cos();
    let rotated: Vec<(f32, f32)> = raw
        .iter()
        .map(|&(x, y)| (x * cos - y * sin, x * sin + y * cos))
        .collect();

    let min_x = rotated.iter().map(|p| p.0).fold(f32::INFINITY, f32::min);
    let max_x = rotated.iter().map(|p| p.0).fold(f32::NEG_INFINITY, f32::max);
    let min_y = rotated.iter().map(|p| p.1).fold(f32::INFINITY, f32::min);
    let max_y = rotated.iter().map(|p| p.1).fold(f32::NEG_INFINITY, f32::max);
    let w = (max_x - min_x).max(1e-3);
    let h = (max_y - min_y).max(1e-3);
    let scale = target_diag / (w * w + h * h).sqrt();
    let cx = (min_x + max_x) / 2.0;
    let cy = (min_y + max_y) / 2.0;

    let offsets: Vec<(f32, f32)> = rotated
        .iter()
        .map(|&(x, y)| ((x - cx) * scale, (y - cy) * scale))
        .collect();
    InstanceShape {
        offsets,
        half_w: w * scale / 2.0,
        half_h: h * scale / 2.0,
        diag: target_diag,
    }
}

fn sample_visibility(
    n: usize,
    rng: &mut ChaCha8Rng,
    hidden_fraction: f32,
    absent_fraction: f32,
) -> Vec<Visibility> {
    let mut vis: Vec<Visibility> = (0..n)
        .map(|_| {
            let r: f32 = rng.gen();
            if r < absent_fraction {
                Visibility::Absent
            } else if r < absent_fraction + hidden_fraction {
                Visibility::Hidden
            } else {
                Visibility::Visible
            }
        })
        .collect();
    if vis.iter().all(|&v| v == Visibility::Absent) {
        vis[0] = Visibility::Visible;
    }
    vis
}

struct PlacedInstance {
    shape: InstanceShape,
    center: (f32, f32),
    velocity: (f32, f32),
    visibility: Vec<Visibility>,
}

fn swept_bbox(p: &PlacedInstance, frames: usize) -> (f32, f32, f32, f32) {
    let last = (frames.max(1) - 1) as f32;
    let x0 = p.center.0.min(p.center.0 + p.velocity.0 * last) - p.shape.half_w;
    let x1 = p.center.0.max(p.center.0 + p.velocity.0 * last) + p.shape.half_w;
    let y0 = p.center.1.min(p.center.1 + p.velocity.1 * last) - p.shape.half_h;
    let y1 = p.center.1.max(p.center.1 + p.velocity.1 * last) + p.shape.half_h;
    (x0, y0, x1, y1)
}

fn boxes_gap_ok(a: (f32, f32, f32, f32), b: (f32, f32, f32, f32), gap: f32) -> bool {
    a.2 + gap <= b.0 || b.2 + gap <= a.0 || a.3 + gap <= b.1 || b.3 + gap <= a.1
}

/// Generate a deterministic scene for `seed`. Multi-frame configs move each
/// identity at constant velocity; the crossing config produces exactly two
/// identities whose trajectories intersect mid-sequence.
pub fn generate_scene(seed: u64, skeleton: &Skeleton, cfg: &SceneConfig) -> Result<Scene> {
    if cfg.min_poses == 0 || cfg.max_poses < cfg.min_poses || cfg.frames == 0 {
        return Err(Error::GenerationFailed("empty pose or frame range".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (img_w, img_h) = (cfg.image_size.0 as f32, cfg.image_size.1 as f32);

    let placed = if cfg.crossing {
        place_crossing(skeleton, cfg, &mut rng, img_w, img_h)?
    } else {
        place_free(skeleton, cfg, &mut rng, img_w, img_h)?
    };

    let mut frames = Vec::with_capacity(cfg.frames);
    for t in 0..cfg.frames {
        let mut annotations = Vec::with_capacity(placed.len());
        for (idx, inst) in placed.iter().enumerate() {
            let cx = inst.center.0 + inst.velocity.0 * t as f32;
            let cy = inst.center.1 + inst.velocity.1 * t as f32;
            let keypoints: Vec<GtKeypoint> = inst
                .shape
                .offsets
                .iter()
                .zip(inst.visibility.iter())
                .enumerate()
                .map(|(k, (&(ox, oy), &vis))| {
                    if vis == Visibility::Absent {
                        GtKeypoint::absent()
                    } else {
                        GtKeypoint {
                            x: cx + ox,
                            y: cy + oy,
                            visibility: vis,
                            size: (inst.shape.diag * skeleton.sigmas[k]).max(1.5),
                        }
                    }
                })
                .collect();
            annotations.push(SceneAnnotation {
                id: idx as u64 + 1,
                gt: GroundTruthAnnotation::new(keypoints),
            });
        }
        frames.push(SceneFrame { annotations });
    }

    Ok(Scene {
        format_version: SCENE_FORMAT_VERSION,
        image_size: cfg.image_size,
        frames,
        config: None,
    })
}

fn place_free(
    skeleton: &Skeleton,
    cfg: &SceneConfig,
    rng: &mut ChaCha8Rng,
    img_w: f32,
    img_h: f32,
) -> Result<Vec<PlacedInstance>> {
    let n_poses = rng.gen_range(cfg.min_poses..=cfg.max_poses);
    let last = (cfg.frames - 1) as f32;
    let mut placed: Vec<PlacedInstance> = Vec::with_capacity(n_poses);

    for pose_idx in 0..n_poses {
        let mut accepted = false;
        for _attempt in 0..PLACEMENT_ATTEMPTS {
            let diag = rng.gen_range(cfg.scale_range.0..=cfg.scale_range.1);
            let shape = sample_shape(skeleton, rng, diag);
            let velocity = if cfg.frames > 1 {
                let speed = rng.gen_range(cfg.velocity_range.0..=cfg.velocity_range.1);
                let angle = rng.gen_range(0.0..std::f32::consts::TAU);
                (speed * angle.cos(), speed * angle.sin())
            } else {
                (0.0, 0.0)
            };

            // Center interval keeping the whole trajectory inside the image.
            let x_lo = (cfg.margin + shape.half_w).max(cfg.margin + shape.half_w - velocity.0 * last);
            let x_hi =
                (img_w - cfg.margin - shape.half_w).min(img_w - cfg.margin - shape.half_w - velocity.0 * last);
            let y_lo = (cfg.margin + shape.half_h).max(cfg.margin + shape.half_h - velocity.1 * last);
            let y_hi =
                (img_h - cfg.margin - shape.half_h).min(img_h - cfg.margin - shape.half_h - velocity.1 * last);
            if x_lo >= x_hi || y_lo >= y_hi {
                continue;
            }
            let center = (rng.gen_range(x_lo..=x_hi), rng.gen_range(y_lo..=y_hi));
            let visibility = sample_visibility(
                skeleton.n_keypoints(),
                rng,
                cfg.hidden_fraction,
                cfg.absent_fraction,
            );
            let candidate = PlacedInstance {
                shape,
                center,
                velocity,
                visibility,
            };

            if !cfg.allow_overlap {
                let cand_box = swept_bbox(&candidate, cfg.frames);
                if placed
                    .iter()
                    .any(|p| !boxes_gap_ok(cand_box, swept_bbox(p, cfg.frames), cfg.min_gap))
                {
                    continue;
                }
            }
            placed.push(candidate);
            accepted = true;
            break;
        }
        if !accepted {
            return Err(Error::GenerationFailed(format!(
                "could not place pose {} of {n_poses} in a {img_w}x{img_h} image",
                pose_idx + 1
            )));
        }
    }
    Ok(placed)
}

fn place_crossing(
    skeleton: &Skeleton,
    cfg: &SceneConfig,
    rng: &mut ChaCha8Rng,
    img_w: f32,
    img_h: f32,
) -> Result<Vec<PlacedInstance>> {
    if cfg.frames < 3 {
        return Err(Error::GenerationFailed(
            "crossing trajectories need at least 3 frames".into(),
        ));
    }
    let diag = rng.gen_range(cfg.scale_range.0..=cfg.scale_range.1);
    let shape_a = sample_shape(skeleton, rng, diag);
    let shape_b = sample_shape(skeleton, rng, diag);
    let half_w = shape_a.half_w.max(shape_b.half_w);
    let half_span_limit = img_w / 2.0 - cfg.margin - half_w;
    if half_span_limit <= 0.0 {
        return Err(Error::GenerationFailed("image too small for crossing".into()));
    }
    let speed = rng
        .gen_range(cfg.velocity_range.0..=cfg.velocity_range.1)
        .min(2.0 * half_span_limit / (cfg.frames - 1) as f32);
    if speed <= 0.0 {
        return Err(Error::GenerationFailed("crossing speed collapsed to zero".into()));
    }
    let half_span = speed * (cfg.frames - 1) as f32 / 2.0;
    let cx = img_w / 2.0 + rng.gen_range(-8.0..8.0);
    let cy = (img_h / 2.0 + rng.gen_range(-8.0..8.0))
        .clamp(cfg.margin + shape_a.half_h + cfg.crossing_offset, img_h - cfg.margin - shape_a.half_h - cfg.crossing_offset);

    let occlusion = |rng: &mut ChaCha8Rng| {
        sample_visibility(skeleton.n_keypoints(), rng, cfg.hidden_fraction, cfg.absent_fraction)
    };
    let vis_a = occlusion(rng);
    let vis_b = occlusion(rng);
    Ok(vec![
        PlacedInstance {
            shape: shape_a,
            center: (cx - half_span, cy - cfg.crossing_offset / 2.0),
            velocity: (speed, 0.0),
            visibility: vis_a,
        },
        PlacedInstance {
            shape: shape_b,
            center: (cx + half_span, cy + cfg.crossing_offset / 2.0),
            velocity: (-speed, 0.0),
            visibility: vis_b,
        },
    ])
}
