//! Evaluation: object keypoint similarity, average precision over OKS
//! thresholds, CLEAR-MOT tracking metrics and the crowd-index scene split.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{GroundTruthAnnotation, Pose, Skeleton, TrackedPose};

/// Object keypoint similarity between a predicted pose and an annotation,
/// normalized by the instance `area` (px^2). Per-keypoint falloff constants
/// are `k_i = 2 * sigma_i`; only labeled keypoints contribute.
pub fn oks(
    pred: &Pose,
    gt: &GroundTruthAnnotation,
    skeleton: &Skeleton,
    area: f64,
) -> Result<f64> {
    if !(area > 0.0) {
        return Err(Error::Domain(format!("area {area} must be positive")));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for (i, g) in gt.keypoints.iter().enumerate() {
        if !g.is_labeled() {
            continue;
        }
        let sigma = *skeleton
            .sigmas
            .get(i)
            .ok_or_else(|| Error::Shape(format!("keypoint {i} beyond skeleton sigmas")))?
            as f64;
        let k = 2.0 * sigma;
        let p = pred
            .keypoints
            .get(i)
            .ok_or_else(|| Error::Shape(format!("keypoint {i} beyond pose length")))?;
        let d2 = (p.x as f64 - g.x as f64).powi(2) + (p.y as f64 - g.y as f64).powi(2);
        sum += (-d2 / (2.0 * area * k * k)).exp();
        count += 1;
    }
    if count == 0 {
        return Err(Error::Domain("annotation has no labeled keypoints".into()));
    }
    Ok(sum / count as f64)
}

fn gt_area(gt: &GroundTruthAnnotation) -> f64 {
    gt.bbox().map(|b| b.area() as f64).unwrap_or(0.0).max(1.0)
}

pub const DEFAULT_OKS_THRESHOLDS: [f64; 10] =
    [0.50, 0.55, 0.60, 0.65, 0.70, 0.75, 0.80, 0.85, 0.90, 0.95];

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ApConfig {
    pub thresholds: Vec<f64>,
    /// Only the best-scoring poses per image are evaluated.
    pub max_poses_per_image: usize,
    /// Instance-area split bounds: medium is (lo, hi], large is above hi.
    pub medium_area: (f64, f64),
}

impl Default for ApConfig {
    fn default() -> Self {
        ApConfig {
            thresholds: DEFAULT_OKS_THRESHOLDS.to_vec(),
            max_poses_per_image: 20,
            medium_area: (32.0 * 32.0, 96.0 * 96.0),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ThresholdPr {
    pub threshold: f64,
    pub ap: f64,
    pub recall: f64,
    pub precision: Vec<f64>,
    pub recall_curve: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ApReport {
    pub ap: f64,
    pub ap50: f64,
    pub ap75: f64,
    pub ap_medium: Option<f64>,
    pub ap_large: Option<f64>,
    pub ar: f64,
    pub per_threshold: Vec<ThresholdPr>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum AreaRange {
    All,
    Medium,
    Large,
}

impl AreaRange {
    fn contains(&self, area: f64, cfg: &ApConfig) -> bool {
        match self {
            AreaRange::All => true,
            AreaRange::Medium => area > cfg.medium_area.0 && area <= cfg.medium_area.1,
            AreaRange::Large => area > cfg.medium_area.1,
        }
    }
}

/// One evaluated image: scored predictions plus annotations.
pub type ApImage = (Vec<Pose>, Vec<GroundTruthAnnotation>);

struct RankedPrediction {
    score: f32,
    image: usize,
    matched: bool,
    ignored: bool,
}

fn evaluate_threshold(
    images: &[ApImage],
    skeleton: &Skeleton,
    threshold: f64,
    range: AreaRange,
    cfg: &ApConfig,
) -> Result<(Vec<RankedPrediction>, usize)> {
    let mut ranked = Vec::new();
    let mut n_gt = 0usize;

    for (image_idx, (preds, gts)) in images.iter().enumerate() {
        let in_range: Vec<bool> = gts.iter().map(|g| range.contains(gt_area(g), cfg)).collect();
        n_gt += in_range.iter().filter(|&&r| r).count();

        // Best-scoring predictions first, capped per image.
        let mut order: Vec<usize> = (0..preds.len()).collect();
        order.sort_by(|&a, &b| preds[b].instance_score.total_cmp(&preds[a].instance_score));
        order.truncate(cfg.max_poses_per_image);

        let mut gt_taken = vec![false; gts.len()];
        for &pi in &order {
            let pred = &preds[pi];
            // Greedy: best remaining annotation by OKS, if above threshold.
            let mut best: Option<(usize, f64)> = None;
            for (gi, gt) in gts.iter().enumerate() {
                if gt_taken[gi] || gt.labeled_count() == 0 {
                    continue;
                }
                let o = oks(pred, gt, skeleton, gt_area(gt))?;
                if o >= threshold && best.map_or(true, |(_, b)| o > b) {
                    best = Some((gi, o));
                }
            }
            match best {
                Some((gi, _)) if in_range[gi] => {
                    gt_taken[gi] = true;
                    ranked.push(RankedPrediction {
                        score: pred.instance_score,
                        image: image_idx,
                        matched: true,
                        ignored: false,
                    });
                }
                Some((gi, _)) => {
                    // Matched an out-of-range annotation: ignore the pair.
                    gt_taken[gi] = true;
                    ranked.push(RankedPrediction {
                        score: pred.instance_score,
                        image: image_idx,
                        matched: false,
                        ignored: true,
                    });
                }
                None => ranked.push(RankedPrediction {
                    score: pred.instance_score,
                    image: image_idx,
                    matched: false,
                    ignored: range != AreaRange::All,
                }),
            }
        }
    }
    Ok((ranked, n_gt))
}

/// 101-point interpolated average precision.
fn interpolated_ap(precision: &[f64], recall: &[f64]) -> f64 {
    let mut total = 0.0;
    for step in 0..=100 {
        let r = step as f64 / 100.0;
        let p = precision
            .iter()
            .zip(recall.iter())
            .filter(|(_, &rc)| rc >= r)
            .map(|(&p, _)| p)
            .fold(0.0, f64::max);
        total += p;
    }
    total / 101.0
}

fn pr_curve(ranked: &mut [RankedPrediction], n_gt: usize) -> (Vec<f64>, Vec<f64>, f64) {
    ranked.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.image.cmp(&b.image)));
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut precision = Vec::new();
    let mut recall = Vec::new();
    for p in ranked.iter().filter(|p| !p.ignored) {
        if p.matched {
            tp += 1;
        } else {
            fp += 1;
        }
        precision.push(tp as f64 / (tp + fp) as f64);
        recall.push(if n_gt > 0 { tp as f64 / n_gt as f64 } else { 0.0 });
    }
    let final_recall = recall.last().copied().unwrap_or(0.0);
    (precision, recall, final_recall)
}

fn ap_over_range(
    images: &[ApImage],
    skeleton: &Skeleton,
    range: AreaRange,
    cfg: &ApConfig,
) -> Result<Option<(f64, Vec<ThresholdPr>)>> {
    let mut per_threshold = Vec::new();
    let mut any_gt = false;
    for &threshold in &cfg.thresholds {
        let (mut ranked, n_gt) = evaluate_threshold(images, skeleton, threshold, range, cfg)?;
        if n_gt > 0 {
            any_gt = true;
        }
        let (precision, recall_curve, recall) = pr_curve(&mut ranked, n_gt);
        let ap = if n_gt == 0 {
            0.0
        } else {
            interpolated_ap(&precision, &recall_curve)
        };
        per_threshold.push(ThresholdPr {
            threshold,
            ap,
            recall,
            precision,
            recall_curve,
        });
    }
    if !any_gt {
        return Ok(None);
    }
    let mean = per_threshold.iter().map(|t| t.ap).sum::<f64>() / per_threshold.len() as f64;
    Ok(Some((mean, per_threshold)))
}

/// COCO-style average precision over OKS thresholds, with medium/large
/// area splits.
pub fn average_precision(
    images: &[ApImage],
    skeleton: &Skeleton,
    cfg: &ApConfig,
) -> Result<ApReport> {
    let (ap, per_threshold) =
        ap_over_range(images, skeleton, AreaRange::All, cfg)?.unwrap_or((0.0, Vec::new()));
    let pick = |t: f64| {
        per_threshold
            .iter()
            .find(|p| (p.threshold - t).abs() < 1e-9)
            .map(|p| p.ap)
            .unwrap_or(f64::NAN)
    };
    let ar = if per_threshold.is_empty() {
        0.0
    } else {
        per_threshold.iter().map(|t| t.recall).sum::<f64>() / per_threshold.len() as f64
    };
    let ap50 = pick(0.50);
    let ap75 = pick(0.75);
    let ap_medium = ap_over_range(images, skeleton, AreaRange::Medium, cfg)?.map(|(a, _)| a);
    let ap_large = ap_over_range(images, skeleton, AreaRange::Large, cfg)?.map(|(a, _)| a);
    Ok(ApReport {
        ap,
        ap50,
        ap75,
        ap_medium,
        ap_large,
        ar,
        per_threshold,
    })
}

/// One frame of tracking ground truth: identity label per annotation.
pub type MotFrame = (Vec<TrackedPose>, Vec<(u64, GroundTruthAnnotation)>);

#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct FrameCounts {
    pub matches: usize,
    pub false_positives: usize,
    pub misses: usize,
    pub id_switches: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MotReport {
    pub mota: f64,
    pub motp: f64,
    pub false_positives: usize,
    pub misses: usize,
    pub id_switches: usize,
    pub total_gt: usize,
    pub per_frame: Vec<FrameCounts>,
}

/// CLEAR-MOT over OKS matching.
///
/// Matching per frame prefers the previous frame's correspondence when it
/// still holds, then greedily matches the remaining predictions best score
/// first. A ground-truth identity matched to a different track id than its
/// last known one counts as an id switch. MOTP is the mean OKS over
/// matches.
pub fn mota(frames: &[MotFrame], skeleton: &Skeleton, match_threshold: f64) -> Result<MotReport> {
    let mut last_track: HashMap<u64, u64> = HashMap::new();
    let mut total_gt = 0usize;
    let mut fp = 0usize;
    let mut misses = 0usize;
    let mut switches = 0usize;
    let mut oks_sum = 0.0;
    let mut oks_count = 0usize;
    let mut per_frame = Vec::with_capacity(frames.len());

    for (preds, gts) in frames {
        total_gt += gts.len();
        let mut counts = FrameCounts::default();
        let mut gt_matched: Vec<Option<u64>> = vec![None; gts.len()];
        let mut pred_taken = vec![false; preds.len()];

        let score = |p: &TrackedPose, g: &GroundTruthAnnotation| -> Result<f64> {
            if g.labeled_count() == 0 {
                return Ok(0.0);
            }
            oks(&p.pose, g, skeleton, gt_area(g))
        };

        // Continuity pass: keep last frame's correspondence when possible.
        for (gi, (identity, gt)) in gts.iter().enumerate() {
            let Some(&prev_track) = last_track.get(identity) else {
                continue;
            };
            let Some(pi) = preds
                .iter()
                .position(|p| p.track_id == prev_track)
                .filter(|&pi| !pred_taken[pi])
            else {
                continue;
            };
            let o = score(&preds[pi], gt)?;
            if o >= match_threshold {
                pred_taken[pi] = true;
                gt_matched[gi] = Some(preds[pi].track_id);
                oks_sum += o;
                oks_count += 1;
            }
        }

        // Greedy pass over remaining predictions, best score first.
        let mut order: Vec<usize> = (0..preds.len()).filter(|&pi| !pred_taken[pi]).collect();
        order.sort_by(|&a, &b| {
            preds[b]
                .pose
                .instance_score
                .total_cmp(&preds[a].pose.instance_score)
                .then(preds[a].track_id.cmp(&preds[b].track_id))
        });
        for pi in order {
            let mut best: Option<(usize, f64)> = None;
            for (gi, (_, gt)) in gts.iter().enumerate() {
                if gt_matched[gi].is_some() {
                    continue;
                }
                let o = score(&preds[pi], gt)?;
                if o >= match_threshold && best.map_or(true, |(_, b)| o > b) {
                    best = Some((gi, o));
                }
            }
            if let Some((gi, o)) = best {
                pred_taken[pi] = true;
                gt_matched[gi] = Some(preds[pi].track_id);
                oks_sum += o;
                oks_count += 1;
            }
        }

        for (gi, (identity, _)) in gts.iter().enumerate() {
            match gt_matched[gi] {
                Some(track) => {
                    counts.matches += 1;
                    if let Some(&prev) = last_track.get(identity) {
                        if prev != track {
                            counts.id_switches += 1;
                        }
                    }
                    last_track.insert(*identity, track);
                }
                None => counts.misses += 1,
            }
        }
        counts.false_positives = pred_taken.iter().filter(|&&t| !t).count();

        fp += counts.false_positives;
        misses += counts.misses;
        switches += counts.id_switches;
        per_frame.push(counts);
    }

    let mota = if total_gt > 0 {
        1.0 - (fp + misses + switches) as f64 / total_gt as f64
    } else {
        1.0
    };
    Ok(MotReport {
        mota,
        motp: if oks_count > 0 {
            oks_sum / oks_count as f64
        } else {
            0.0
        },
        false_positives: fp,
        misses,
        id_switches: switches,
        total_gt,
        per_frame,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CrowdIndexSplit {
    pub easy: Vec<usize>,
    pub medium: Vec<usize>,
    pub hard: Vec<usize>,
}

/// Mean fraction of each instance's bounding box covered by the union of
/// the other instances' boxes.
pub fn crowd_index(annotations: &[GroundTruthAnnotation]) -> f64 {
    let boxes: Vec<_> = annotations.iter().filter_map(|a| a.bbox()).collect();
    if boxes.is_empty() {
        return 0.0;
    }
    let mut total = 0.0;
    for (i, own) in boxes.iter().enumerate() {
        let area = own.area() as f64;
        if area <= 0.0 {
            continue;
        }
        let others: Vec<_> = boxes
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .filter_map(|(_, b)| own.intersection(b))
            .collect();
        total += union_area(&others) / area;
    }
    total / boxes.len() as f64
}

/// Union area by coordinate-compressed sweep; inputs are already clipped.
fn union_area(boxes: &[crate::model::Rect]) -> f64 {
    if boxes.is_empty() {
        return 0.0;
    }
    let mut xs: Vec<f32> = boxes.iter().flat_map(|b| [b.x0, b.x1]).collect();
    let mut ys: Vec<f32> = boxes.iter().flat_map(|b| [b.y0, b.y1]).collect();
    xs.sort_by(f32::total_cmp);
    xs.dedup();
    ys.sort_by(f32::total_cmp);
    ys.dedup();
    let mut area = 0.0f64;
    for xw in xs.windows(2) {
        for yw in ys.windows(2) {
            let cx = (xw[0] + xw[1]) / 2.0;
            let cy = (yw[0] + yw[1]) / 2.0;
            if boxes.iter().any(|b| b.contains(cx, cy)) {
                area += (xw[1] - xw[0]) as f64 * (yw[1] - yw[0]) as f64;
            }
        }
    }
    area
}

/// Partition scene indices by crowd index: easy [0, 0.1], medium
/// (0.1, 0.8], hard (0.8, 1.0].
pub fn split_by_crowd_index(indices: &[f64]) -> CrowdIndexSplit {
    let mut split = CrowdIndexSplit {
        easy: Vec::new(),
        medium: Vec::new(),
        hard: Vec::new(),
    };
    for (i, &ci) in indices.iter().enumerate() {
        if ci <= 0.1 {
            split.easy.push(i);
        } else if ci <= 0.8 {
            split.medium.push(i);
        } else {
            split.hard.push(i);
        }
    }
    split
}
