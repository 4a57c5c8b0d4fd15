//! Ground-truth target generation: the inverse of the decoder.
//!
//! Annotated poses (and annotation pairs across frames) become CIF/CAF/TCAF
//! target tensors plus the confidence/localization/scale loss masks. The
//! synthetic scene generator lives in [`scene`].

mod scene;

pub use scene::{
    generate_scene, Scene, SceneAnnotation, SceneConfig, SceneFrame, SCENE_FORMAT_VERSION,
};

use crate::error::{Error, Result};
use crate::fields::{caf_ch, cif_ch, CafTensor, CifTensor, TcafTensor, TensorBlock};
use crate::model::{GroundTruthAnnotation, Skeleton, Visibility};

/// Boolean grid per channel, `[C][H][W]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskGrid {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    bits: Vec<bool>,
}

impl MaskGrid {
    pub fn filled(channels: usize, height: usize, width: usize, value: bool) -> Self {
        MaskGrid {
            channels,
            height,
            width,
            bits: vec![value; channels * height * width],
        }
    }

    #[inline]
    fn idx(&self, ch: usize, j: usize, i: usize) -> usize {
        (ch * self.height + j) * self.width + i
    }

    #[inline]
    pub fn get(&self, ch: usize, j: usize, i: usize) -> bool {
        self.bits[self.idx(ch, j, i)]
    }

    #[inline]
    pub fn set(&mut self, ch: usize, j: usize, i: usize, value: bool) {
        let idx = self.idx(ch, j, i);
        self.bits[idx] = value;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    fn to_block(&self, name: &str) -> TensorBlock {
        TensorBlock {
            name: name.to_string(),
            shape: vec![self.channels, self.height, self.width],
            data: self.bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        }
    }

    fn from_block(block: &TensorBlock) -> Result<Self> {
        if block.shape.len() != 3 {
            return Err(Error::Shape(format!(
                "mask block '{}' has shape {:?}, expected [C, H, W]",
                block.name, block.shape
            )));
        }
        Ok(MaskGrid {
            channels: block.shape[0],
            height: block.shape[1],
            width: block.shape[2],
            bits: block.data.iter().map(|&v| v > 0.5).collect(),
        })
    }
}

/// Confidence, localization and scale masks for one field tensor.
/// Localization and scale are subsets of the confidence mask.
#[derive(Debug, Clone, PartialEq)]
pub struct LossMasks {
    pub m_c: MaskGrid,
    pub m_v: MaskGrid,
    pub m_s: MaskGrid,
}

impl LossMasks {
    pub fn empty(channels: usize, height: usize, width: usize) -> Self {
        LossMasks {
            m_c: MaskGrid::filled(channels, height, width, false),
            m_v: MaskGrid::filled(channels, height, width, false),
            m_s: MaskGrid::filled(channels, height, width, false),
        }
    }

    fn all_confidence(channels: usize, height: usize, width: usize) -> Self {
        LossMasks {
            m_c: MaskGrid::filled(channels, height, width, true),
            m_v: MaskGrid::filled(channels, height, width, false),
            m_s: MaskGrid::filled(channels, height, width, false),
        }
    }

    pub(crate) fn check_shape(&self, channels: usize, height: usize, width: usize) -> Result<()> {
        for (name, grid) in [("m_c", &self.m_c), ("m_v", &self.m_v), ("m_s", &self.m_s)] {
            if grid.channels != channels || grid.height != height || grid.width != width {
                return Err(Error::Shape(format!(
                    "{name} mask is [{},{},{}], tensor is [{channels},{height},{width}]",
                    grid.channels, grid.height, grid.width
                )));
            }
        }
        Ok(())
    }

    /// Serialize as three 0/1 float blocks named `{prefix}.mc/.mv/.ms`.
    pub fn to_blocks(&self, prefix: &str) -> Vec<TensorBlock> {
        vec![
            self.m_c.to_block(&format!("{prefix}.mc")),
            self.m_v.to_block(&format!("{prefix}.mv")),
            self.m_s.to_block(&format!("{prefix}.ms")),
        ]
    }

    pub fn from_blocks(blocks: &[TensorBlock], prefix: &str) -> Result<Self> {
        let find = |suffix: &str| {
            let name = format!("{prefix}.{suffix}");
            blocks
                .iter()
                .find(|b| b.name == name)
                .ok_or_else(|| Error::NotFound(format!("mask block '{name}'")))
        };
        Ok(LossMasks {
            m_c: MaskGrid::from_block(find("mc")?)?,
            m_v: MaskGrid::from_block(find("mv")?)?,
            m_s: MaskGrid::from_block(find("ms")?)?,
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct EncoderOptions {
    /// Side length, in cells, of the active window around each keypoint.
    pub window: usize,
    /// Spread value written into the b channels of target tensors.
    pub b_default: f32,
    /// When set, cells without a ground-truth writer carry a self-pointing
    /// regression at the cell anchor with `background_size`, mimicking the
    /// everywhere-defined output of a regression head. Their confidence
    /// target stays zero.
    pub background_regression: bool,
    /// Joint size for background regressions; 0 means one stride.
    pub background_size: f32,
}

impl Default for EncoderOptions {
    fn default() -> Self {
        EncoderOptions {
            window: 4,
            b_default: 1.0,
            background_regression: false,
            background_size: 0.0,
        }
    }
}

/// Remove hidden keypoints that coincide with a visible keypoint of the
/// same type in another annotation. A hidden keypoint within
/// `radius_factor * size(visible)` of some visible keypoint is set to
/// absent; visible keypoints are never touched. Idempotent.
pub fn suppress_self_hidden(
    annotations: &[GroundTruthAnnotation],
    radius_factor: f32,
) -> Vec<GroundTruthAnnotation> {
    let mut out = annotations.to_vec();
    for a in 0..annotations.len() {
        for k in 0..annotations[a].keypoints.len() {
            if annotations[a].keypoints[k].visibility != Visibility::Hidden {
                continue;
            }
            let h = annotations[a].keypoints[k];
            let suppressed = annotations.iter().enumerate().any(|(b, other)| {
                if b == a || k >= other.keypoints.len() {
                    return false;
                }
                let v = other.keypoints[k];
                if v.visibility != Visibility::Visible {
                    return false;
                }
                let d = ((v.x - h.x).powi(2) + (v.y - h.y).powi(2)).sqrt();
                d < radius_factor * v.size
            });
            if suppressed {
                out[a].keypoints[k] = crate::model::GtKeypoint {
                    x: h.x,
                    y: h.y,
                    visibility: Visibility::Absent,
                    size: 0.0,
                };
            }
        }
    }
    out
}

fn check_in_image(
    annotations: &[GroundTruthAnnotation],
    image_size: (u32, u32),
) -> Result<()> {
    let (w, h) = (image_size.0 as f32, image_size.1 as f32);
    for (a, ann) in annotations.iter().enumerate() {
        for (k, kp) in ann.keypoints.iter().enumerate() {
            if kp.is_labeled() && !(kp.x >= 0.0 && kp.x < w && kp.y >= 0.0 && kp.y < h) {
                return Err(Error::EncodeOutOfBounds(format!(
                    "annotation {a} keypoint {k} at ({}, {}) outside {w}x{h}",
                    kp.x, kp.y
                )));
            }
        }
    }
    Ok(())
}

/// Cells i0..=i1 of the window around fractional cell coordinate `f`.
fn window_range(f: f32, window: usize, extent: usize) -> (usize, usize) {
    let half_low = (window as isize - 2) / 2; // 1 for the default 4
    let lo = (f.floor() as isize - half_low).max(0);
    let hi = (f.floor() as isize + (window as isize - 1) - half_low).min(extent as isize - 1);
    (lo as usize, hi.max(lo) as usize)
}

fn mask_crowd_regions(
    m_c: &mut MaskGrid,
    annotations: &[GroundTruthAnnotation],
    stride: u32,
) {
    let s = stride as f32;
    for ann in annotations {
        for region in &ann.crowd_regions {
            for j in 0..m_c.height {
                for i in 0..m_c.width {
                    if region.contains(i as f32 * s, j as f32 * s) {
                        for ch in 0..m_c.channels {
                            m_c.set(ch, j, i, false);
                        }
                    }
                }
            }
        }
    }
}

/// Encode annotations into an intensity field target and its loss masks.
///
/// Every labeled keypoint activates the cells of its window with confidence
/// one and writes its exact location and size into the regression channels;
/// where two keypoints of the same type compete for a cell, the closer one
/// wins. Confidence masks are cleared inside crowd regions.
pub fn encode_cif(
    annotations: &[GroundTruthAnnotation],
    skeleton: &Skeleton,
    stride: u32,
    image_size: (u32, u32),
    opts: &EncoderOptions,
) -> Result<(CifTensor, LossMasks)> {
    check_in_image(annotations, image_size)?;
    let k_count = skeleton.n_keypoints();
    let mut cif = CifTensor::zeros(k_count, stride, image_size)?;
    let (h, w) = (cif.height, cif.width);
    let mut masks = LossMasks::all_confidence(k_count, h, w);
    mask_crowd_regions(&mut masks.m_c, annotations, stride);

    let s = stride as f32;
    let mut best_d2 = vec![f32::INFINITY; k_count * h * w];

    for ann in annotations {
        for (k, kp) in ann.keypoints.iter().enumerate() {
            if k >= k_count || !kp.is_labeled() {
                continue;
            }
            let (i0, i1) = window_range(kp.x / s, opts.window, w);
            let (j0, j1) = window_range(kp.y / s, opts.window, h);
            for j in j0..=j1 {
                for i in i0..=i1 {
                    let dx = kp.x - i as f32 * s;
                    let dy = kp.y - j as f32 * s;
                    let d2 = dx * dx + dy * dy;
                    let slot = (k * h + j) * w + i;
                    if d2 < best_d2[slot] {
                        best_d2[slot] = d2;
                        cif.set(cif_ch::C, k, j, i, 1.0);
                        cif.set(cif_ch::X, k, j, i, kp.x);
                        cif.set(cif_ch::Y, k, j, i, kp.y);
                        cif.set(cif_ch::B, k, j, i, opts.b_default);
                        cif.set(cif_ch::SIGMA, k, j, i, kp.size);
                    }
                    if masks.m_c.get(k, j, i) {
                        masks.m_v.set(k, j, i, true);
                        masks.m_s.set(k, j, i, true);
                    }
                }
            }
        }
    }

    if opts.background_regression {
        let bg_size = if opts.background_size > 0.0 {
            opts.background_size
        } else {
            s
        };
        for k in 0..k_count {
            for j in 0..h {
                for i in 0..w {
                    if best_d2[(k * h + j) * w + i].is_infinite() {
                        cif.set(cif_ch::X, k, j, i, i as f32 * s);
                        cif.set(cif_ch::Y, k, j, i, j as f32 * s);
                        cif.set(cif_ch::B, k, j, i, opts.b_default);
                        cif.set(cif_ch::SIGMA, k, j, i, bg_size);
                    }
                }
            }
        }
    }

    Ok((cif, masks))
}

fn point_segment_distance(px: f32, py: f32, ax: f32, ay: f32, bx: f32, by: f32) -> f32 {
    let abx = bx - ax;
    let aby = by - ay;
    let len2 = abx * abx + aby * aby;
    let t = if len2 > 0.0 {
        (((px - ax) * abx + (py - ay) * aby) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let cx = ax + t * abx;
    let cy = ay + t * aby;
    ((px - cx).powi(2) + (py - cy).powi(2)).sqrt()
}

#[derive(Clone)]
struct AssocTarget {
    x1: f32,
    y1: f32,
    x2: f32,
    y2: f32,
    s1: f32,
    s2: f32,
}

/// Shared rasterizer for spatial and temporal association targets.
fn encode_assoc_channels(
    tensor: &mut CafTensor,
    masks: &mut LossMasks,
    channel_targets: &[Vec<AssocTarget>],
    stride: u32,
    opts: &EncoderOptions,
) {
    let s = stride as f32;
    let (h, w) = (tensor.height, tensor.width);
    let mut best_d = vec![f32::INFINITY; tensor.n_edges * h * w];

    for (e, targets) in channel_targets.iter().enumerate() {
        for t in targets {
            // Band half-width along the segment: at least one cell.
            let radius = t.s1.max(s);
            let x_lo = (((t.x1.min(t.x2) - radius) / s).floor().max(0.0)) as usize;
            let x_hi = ((t.x1.max(t.x2) + radius) / s).ceil().min(w as f32 - 1.0) as usize;
            let y_lo = (((t.y1.min(t.y2) - radius) / s).floor().max(0.0)) as usize;
            let y_hi = ((t.y1.max(t.y2) + radius) / s).ceil().min(h as f32 - 1.0) as usize;
            for j in y_lo..=y_hi {
                for i in x_lo..=x_hi {
                    let d = point_segment_distance(
                        i as f32 * s,
                        j as f32 * s,
                        t.x1,
                        t.y1,
                        t.x2,
                        t.y2,
                    );
                    if d > radius {
                        continue;
                    }
                    let slot = (e * h + j) * w + i;
                    if d < best_d[slot] {
                        best_d[slot] = d;
                        tensor.set(caf_ch::C, e, j, i, 1.0);
                        tensor.set(caf_ch::X1, e, j, i, t.x1);
                        tensor.set(caf_ch::Y1, e, j, i, t.y1);
                        tensor.set(caf_ch::X2, e, j, i, t.x2);
                        tensor.set(caf_ch::Y2, e, j, i, t.y2);
                        tensor.set(caf_ch::B1, e, j, i, opts.b_default);
                        tensor.set(caf_ch::B2, e, j, i, opts.b_default);
                        tensor.set(caf_ch::SIGMA1, e, j, i, t.s1);
                        tensor.set(caf_ch::SIGMA2, e, j, i, t.s2);
                    }
                    if masks.m_c.get(e, j, i) {
                        masks.m_v.set(e, j, i, true);
                        masks.m_s.set(e, j, i, true);
                    }
                }
            }
        }
    }

    if opts.background_regression {
        let bg_size = if opts.background_size > 0.0 {
            opts.background_size
        } else {
            s
        };
        for e in 0..tensor.n_edges {
            for j in 0..h {
                for i in 0..w {
                    if best_d[(e * h + j) * w + i].is_infinite() {
                        let (ax, ay) = (i as f32 * s, j as f32 * s);
                        tensor.set(caf_ch::X1, e, j, i, ax);
                        tensor.set(caf_ch::Y1, e, j, i, ay);
                        tensor.set(caf_ch::X2, e, j, i, ax);
                        tensor.set(caf_ch::Y2, e, j, i, ay);
                        tensor.set(caf_ch::B1, e, j, i, opts.b_default);
                        tensor.set(caf_ch::B2, e, j, i, opts.b_default);
                        tensor.set(caf_ch::SIGMA1, e, j, i, bg_size);
                        tensor.set(caf_ch::SIGMA2, e, j, i, bg_size);
                    }
                }
            }
        }
    }
}

/// Encode annotations into an association field target and its loss masks.
/// Cells within the edge band carry confidence one and both exact
/// endpoints. Edges whose endpoints coincide are valid and encode a
/// zero-length segment.
pub fn encode_caf(
    annotations: &[GroundTruthAnnotation],
    skeleton: &Skeleton,
    stride: u32,
    image_size: (u32, u32),
    opts: &EncoderOptions,
) -> Result<(CafTensor, LossMasks)> {
    check_in_image(annotations, image_size)?;
    let mut caf = CafTensor::zeros(skeleton.n_edges(), stride, image_size)?;
    let mut masks = LossMasks::all_confidence(caf.n_edges, caf.height, caf.width);
    mask_crowd_regions(&mut masks.m_c, annotations, stride);

    let mut channel_targets: Vec<Vec<AssocTarget>> = vec![Vec::new(); skeleton.n_edges()];
    for ann in annotations {
        for (e, edge) in skeleton.edges.iter().enumerate() {
            let (src, dst) = (edge.source(), edge.target());
            if src >= ann.keypoints.len() || dst >= ann.keypoints.len() {
                continue;
            }
            let p1 = ann.keypoints[src];
            let p2 = ann.keypoints[dst];
            if !p1.is_labeled() || !p2.is_labeled() {
                continue;
            }
            channel_targets[e].push(AssocTarget {
                x1: p1.x,
                y1: p1.y,
                x2: p2.x,
                y2: p2.y,
                s1: p1.size,
                s2: p2.size,
            });
        }
    }
    encode_assoc_channels(&mut caf, &mut masks, &channel_targets, stride, opts);
    Ok((caf, masks))
}

/// Encode a pair of frames into a temporal association field. Endpoint 1
/// is the identity's keypoint in the previous frame, endpoint 2 in the
/// current frame; identities present in only one frame produce no targets.
pub fn encode_tcaf(
    prev: &SceneFrame,
    cur: &SceneFrame,
    skeleton: &Skeleton,
    stride: u32,
    image_size: (u32, u32),
    opts: &EncoderOptions,
) -> Result<(TcafTensor, LossMasks)> {
    let prev_annotations: Vec<GroundTruthAnnotation> =
        prev.annotations.iter().map(|a| a.gt.clone()).collect();
    let cur_annotations: Vec<GroundTruthAnnotation> =
        cur.annotations.iter().map(|a| a.gt.clone()).collect();
    check_in_image(&prev_annotations, image_size)?;
    check_in_image(&cur_annotations, image_size)?;

    let n_temporal = skeleton.temporal_edges.len();
    let mut tcaf = CafTensor::zeros(n_temporal, stride, image_size)?;
    let mut masks = LossMasks::all_confidence(n_temporal, tcaf.height, tcaf.width);
    mask_crowd_regions(&mut masks.m_c, &cur_annotations, stride);

    let mut channel_targets: Vec<Vec<AssocTarget>> = vec![Vec::new(); n_temporal];
    for cur_ann in &cur.annotations {
        let Some(prev_ann) = prev.annotations.iter().find(|p| p.id == cur_ann.id) else {
            continue;
        };
        for (ti, &k) in skeleton.temporal_edges.iter().enumerate() {
            if k >= prev_ann.gt.keypoints.len() || k >= cur_ann.gt.keypoints.len() {
                continue;
            }
            let p1 = prev_ann.gt.keypoints[k];
            let p2 = cur_ann.gt.keypoints[k];
            if !p1.is_labeled() || !p2.is_labeled() {
                continue;
            }
            channel_targets[ti].push(AssocTarget {
                x1: p1.x,
                y1: p1.y,
                x2: p2.x,
                y2: p2.y,
                s1: p1.size,
                s2: p2.size,
            });
        }
    }
    encode_assoc_channels(&mut tcaf, &mut masks, &channel_targets, stride, opts);
    Ok((TcafTensor(tcaf), masks))
}
