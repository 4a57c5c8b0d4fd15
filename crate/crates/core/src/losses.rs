//! Field loss terms as pure numeric functions: focal binary cross-entropy
//! for confidences, a spread-attenuated Laplace loss for localization and a
//! fixed-spread Laplace loss for joint sizes. Gradients are provided for
//! finite-difference verification only; there is no optimizer here.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{caf_ch, cif_ch, CafTensor, CifTensor, FieldTensor};
use crate::encoder::LossMasks;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LossConfig {
    /// Focal weighting exponent.
    pub focal_gamma: f64,
    /// Floor added inside the localization norm, in pixels. Prevents the
    /// loss from exploding as the predicted spread shrinks.
    pub b_min: f64,
    /// Fixed spread of the scale loss.
    pub b_sigma: f64,
    /// Cross-entropy values are clipped here, in nats, before focal
    /// weighting.
    pub bce_clip: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            focal_gamma: 2.0,
            b_min: 1.0,
            b_sigma: 3.0,
            bce_clip: 5.0,
        }
    }
}

/// Focal-weighted, clipped binary cross-entropy for a single cell.
///
/// The raw BCE is clipped first; the focal weight `(1 - p_t)^gamma` is
/// applied to the clipped value.
pub fn focal_bce(target: bool, c_hat: f64, cfg: &LossConfig) -> Result<f64> {
    Ok(focal_bce_grad(target, c_hat, cfg)?.0)
}

/// Value and gradient with respect to `c_hat`.
pub fn focal_bce_grad(target: bool, c_hat: f64, cfg: &LossConfig) -> Result<(f64, f64)> {
    if !(c_hat > 0.0 && c_hat < 1.0) {
        return Err(Error::Domain(format!(
            "confidence {c_hat} outside the open interval (0, 1)"
        )));
    }
    let p_t = if target { c_hat } else { 1.0 - c_hat };
    let dp_dc = if target { 1.0 } else { -1.0 };

    let bce = -p_t.ln();
    let (bce_clipped, dbce_dc) = if bce > cfg.bce_clip {
        (cfg.bce_clip, 0.0)
    } else {
        (bce, -dp_dc / p_t)
    };

    let w = (1.0 - p_t).powf(cfg.focal_gamma);
    let dw_dc = if cfg.focal_gamma == 0.0 {
        0.0
    } else {
        -cfg.focal_gamma * (1.0 - p_t).powf(cfg.focal_gamma - 1.0) * dp_dc
    };

    Ok((w * bce_clipped, dw_dc * bce_clipped + w * dbce_dc))
}

#[inline]
fn soft_l2(d1: f64, d2: f64, b_min: f64) -> f64 {
    (d1 * d1 + d2 * d2 + b_min * b_min).sqrt()
}

/// Laplace localization loss: `L2(v, v_hat, b_min) / b_hat + ln b_hat`.
pub fn laplace_localization(
    v: (f64, f64),
    v_hat: (f64, f64),
    b_hat: f64,
    cfg: &LossConfig,
) -> Result<f64> {
    Ok(laplace_localization_grad(v, v_hat, b_hat, cfg)?.0)
}

/// Value and gradients with respect to `(v_hat.0, v_hat.1, b_hat)`.
pub fn laplace_localization_grad(
    v: (f64, f64),
    v_hat: (f64, f64),
    b_hat: f64,
    cfg: &LossConfig,
) -> Result<(f64, [f64; 3])> {
    if !(b_hat > 0.0) {
        return Err(Error::Domain(format!("spread {b_hat} must be positive")));
    }
    let d1 = v.0 - v_hat.0;
    let d2 = v.1 - v_hat.1;
    let l2 = soft_l2(d1, d2, cfg.b_min);
    let value = l2 / b_hat + b_hat.ln();
    let grad = [
        -d1 / (l2 * b_hat),
        -d2 / (l2 * b_hat),
        -l2 / (b_hat * b_hat) + 1.0 / b_hat,
    ];
    Ok((value, grad))
}

/// Relative scale loss with fixed spread: `|1 - s_hat/s| / b_sigma`.
pub fn scale_loss(s: f64, s_hat: f64, cfg: &LossConfig) -> Result<f64> {
    Ok(scale_loss_grad(s, s_hat, cfg)?.0)
}

/// Value and gradient with respect to `s_hat`.
pub fn scale_loss_grad(s: f64, s_hat: f64, cfg: &LossConfig) -> Result<(f64, f64)> {
    if !(s > 0.0) || !(s_hat > 0.0) {
        return Err(Error::Domain(format!(
            "scales must be positive, got s={s}, s_hat={s_hat}"
        )));
    }
    let r = 1.0 - s_hat / s;
    let value = r.abs() / cfg.b_sigma;
    let grad = if r == 0.0 {
        0.0
    } else {
        -r.signum() / (s * cfg.b_sigma)
    };
    Ok((value, grad))
}

/// Per-channel sums and cell counts of each loss part.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ChannelLoss {
    pub confidence_sum: f64,
    pub confidence_count: usize,
    pub localization_sum: f64,
    pub localization_count: usize,
    pub scale_sum: f64,
    pub scale_count: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub confidence: f64,
    pub localization: f64,
    pub scale: f64,
    pub total: f64,
    pub per_channel: Vec<ChannelLoss>,
}

impl LossBreakdown {
    fn from_channels(per_channel: Vec<ChannelLoss>) -> Self {
        let confidence = per_channel.iter().map(|c| c.confidence_sum).sum();
        let localization = per_channel.iter().map(|c| c.localization_sum).sum();
        let scale = per_channel.iter().map(|c| c.scale_sum).sum();
        LossBreakdown {
            confidence,
            localization,
            scale,
            total: confidence + localization + scale,
            per_channel,
        }
    }
}

// Tensor confidences may sit exactly at 0 or 1; nudge them into the open
// interval the scalar loss is defined on.
const CONF_EPS: f64 = 1e-9;

fn cell_confidence_loss(target_c: f32, pred_c: f32, cfg: &LossConfig) -> Result<f64> {
    let c_hat = (pred_c as f64).clamp(CONF_EPS, 1.0 - CONF_EPS);
    focal_bce(target_c > 0.5, c_hat, cfg)
}

/// Masked loss of an intensity field pair.
pub fn cif_loss(
    pred: &CifTensor,
    target: &CifTensor,
    masks: &LossMasks,
    cfg: &LossConfig,
) -> Result<LossBreakdown> {
    if pred.n_keypoints != target.n_keypoints
        || pred.width != target.width
        || pred.height != target.height
    {
        return Err(Error::Shape("cif pred/target shapes differ".into()));
    }
    masks.check_shape(pred.n_keypoints, pred.height, pred.width)?;

    let mut channels = vec![ChannelLoss::default(); pred.n_keypoints];
    for k in 0..pred.n_keypoints {
        let ch = &mut channels[k];
        for j in 0..pred.height {
            for i in 0..pred.width {
                if masks.m_c.get(k, j, i) {
                    ch.confidence_sum += cell_confidence_loss(
                        target.get(cif_ch::C, k, j, i),
                        pred.get(cif_ch::C, k, j, i),
                        cfg,
                    )?;
                    ch.confidence_count += 1;
                }
                if masks.m_v.get(k, j, i) {
                    let v = (
                        target.get(cif_ch::X, k, j, i) as f64,
                        target.get(cif_ch::Y, k, j, i) as f64,
                    );
                    let v_hat = (
                        pred.get(cif_ch::X, k, j, i) as f64,
                        pred.get(cif_ch::Y, k, j, i) as f64,
                    );
                    let b_hat = pred.get(cif_ch::B, k, j, i) as f64;
                    ch.localization_sum += laplace_localization(v, v_hat, b_hat, cfg)?;
                    ch.localization_count += 1;
                }
                if masks.m_s.get(k, j, i) {
                    let s = target.get(cif_ch::SIGMA, k, j, i) as f64;
                    let s_hat = pred.get(cif_ch::SIGMA, k, j, i) as f64;
                    ch.scale_sum += scale_loss(s, s_hat, cfg)?;
                    ch.scale_count += 1;
                }
            }
        }
    }
    Ok(LossBreakdown::from_channels(channels))
}

/// Masked loss of an association field pair: two localization components
/// and two scale components per cell.
pub fn caf_loss(
    pred: &CafTensor,
    target: &CafTensor,
    masks: &LossMasks,
    cfg: &LossConfig,
) -> Result<LossBreakdown> {
    if pred.n_edges != target.n_edges || pred.width != target.width || pred.height != target.height
    {
        return Err(Error::Shape("caf pred/target shapes differ".into()));
    }
    masks.check_shape(pred.n_edges, pred.height, pred.width)?;

    let ends = [
        (caf_ch::X1, caf_ch::Y1, caf_ch::B1, caf_ch::SIGMA1),
        (caf_ch::X2, caf_ch::Y2, caf_ch::B2, caf_ch::SIGMA2),
    ];
    let mut channels = vec![ChannelLoss::default(); pred.n_edges];
    for e in 0..pred.n_edges {
        let ch = &mut channels[e];
        for j in 0..pred.height {
            for i in 0..pred.width {
                if masks.m_c.get(e, j, i) {
                    ch.confidence_sum += cell_confidence_loss(
                        target.get(caf_ch::C, e, j, i),
                        pred.get(caf_ch::C, e, j, i),
                        cfg,
                    )?;
                    ch.confidence_count += 1;
                }
                if masks.m_v.get(e, j, i) {
                    for &(cx, cy, cb, _) in &ends {
                        let v = (target.get(cx, e, j, i) as f64, target.get(cy, e, j, i) as f64);
                        let v_hat = (pred.get(cx, e, j, i) as f64, pred.get(cy, e, j, i) as f64);
                        let b_hat = pred.get(cb, e, j, i) as f64;
                        ch.localization_sum += laplace_localization(v, v_hat, b_hat, cfg)?;
                        ch.localization_count += 1;
                    }
                }
                if masks.m_s.get(e, j, i) {
                    for &(_, _, _, cs) in &ends {
                        let s = target.get(cs, e, j, i) as f64;
                        let s_hat = pred.get(cs, e, j, i) as f64;
                        ch.scale_sum += scale_loss(s, s_hat, cfg)?;
                        ch.scale_count += 1;
                    }
                }
            }
        }
    }
    Ok(LossBreakdown::from_channels(channels))
}

/// Dispatch over the field kind. Prediction and target must be the same
/// kind and shape.
pub fn composite_field_loss(
    pred: &FieldTensor,
    target: &FieldTensor,
    masks: &LossMasks,
    cfg: &LossConfig,
) -> Result<LossBreakdown> {
    match (pred, target) {
        (FieldTensor::Cif(p), FieldTensor::Cif(t)) => cif_loss(p, t, masks, cfg),
        (FieldTensor::Caf(p), FieldTensor::Caf(t)) => caf_loss(p, t, masks, cfg),
        (FieldTensor::Tcaf(p), FieldTensor::Tcaf(t)) => caf_loss(&p.0, &t.0, masks, cfg),
        (p, t) => Err(Error::Shape(format!(
            "field kinds differ: {} vs {}",
            p.kind(),
            t.kind()
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const CFG: LossConfig = LossConfig {
        focal_gamma: 2.0,
        b_min: 1.0,
        b_sigma: 3.0,
        bce_clip: 5.0,
    };

    #[test]
    fn perfect_confidence_has_near_zero_loss() {
        let loss = focal_bce(true, 1.0 - 1e-12, &CFG).unwrap();
        assert!(loss.abs() < 1e-10);
    }

    #[test]
    fn focal_bce_half_confidence() {
        // w = (1 - 0.5)^2 = 0.25, BCE = ln 2.
        let loss = focal_bce(true, 0.5, &CFG).unwrap();
        assert!((loss - 0.25 * std::f64::consts::LN_2).abs() < 1e-12);
        assert!((loss - 0.17329).abs() < 1e-5);
    }

    #[test]
    fn focal_bce_clips_at_five() {
        let c_hat = 1e-9;
        let loss = focal_bce(true, c_hat, &CFG).unwrap();
        let w = (1.0 - c_hat) * (1.0 - c_hat);
        assert_eq!(loss, w * 5.0);
    }

    #[test]
    fn focal_bce_domain() {
        assert!(focal_bce(true, 0.0, &CFG).is_err());
        assert!(focal_bce(true, 1.0, &CFG).is_err());
        assert!(focal_bce(false, -0.5, &CFG).is_err());
    }

    #[test]
    fn focal_bce_monotone_in_p_t() {
        let mut last = f64::INFINITY;
        for i in 1..100 {
            let p = i as f64 / 100.0;
            let loss = focal_bce(true, p, &CFG).unwrap();
            assert!(loss < last, "not decreasing at p_t={p}");
            last = loss;
        }
    }

    #[test]
    fn laplace_localization_values() {
        let v = (10.0, 20.0);
        assert!((laplace_localization(v, v, 1.0, &CFG).unwrap() - 1.0).abs() < 1e-12);

        let e = std::f64::consts::E;
        let at_e = laplace_localization(v, v, e, &CFG).unwrap();
        assert!((at_e - (1.0 / e + 1.0)).abs() < 1e-12);

        let shifted = laplace_localization(v, (13.0, 24.0), 1.0, &CFG).unwrap();
        assert!((shifted - 26.0f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn laplace_localization_rejects_non_positive_spread() {
        assert!(laplace_localization((0.0, 0.0), (0.0, 0.0), 0.0, &CFG).is_err());
        assert!(laplace_localization((0.0, 0.0), (0.0, 0.0), -1.0, &CFG).is_err());
    }

    #[test]
    fn scale_loss_values() {
        assert_eq!(scale_loss(3.0, 3.0, &CFG).unwrap(), 0.0);
        assert_eq!(scale_loss(2.0, 1.0, &CFG).unwrap(), 1.0 / 6.0);
        assert_eq!(scale_loss(1.0, 2.0, &CFG).unwrap(), 1.0 / 3.0);
        assert!(scale_loss(0.0, 1.0, &CFG).is_err());
        assert!(scale_loss(1.0, 0.0, &CFG).is_err());
    }

    #[test]
    fn breakdown_totals_are_consistent() {
        use crate::encoder::{encode_cif, EncoderOptions};
        use crate::model::{builtin_skeleton, GroundTruthAnnotation, GtKeypoint, Visibility};

        let skeleton = builtin_skeleton("coco17").unwrap();
        let mut keypoints = vec![GtKeypoint::absent(); 17];
        for (i, kp) in keypoints.iter_mut().enumerate() {
            *kp = GtKeypoint {
                x: 30.0 + 3.0 * i as f32,
                y: 40.0 + 2.0 * i as f32,
                visibility: Visibility::Visible,
                size: 4.0,
            };
        }
        let scene = vec![GroundTruthAnnotation::new(keypoints)];
        let (target, masks) =
            encode_cif(&scene, &skeleton, 8, (120, 120), &EncoderOptions::default()).unwrap();

        // Identical tensors with spread at b_min: every masked localization
        // cell contributes exactly 1.
        let breakdown = cif_loss(&target, &target, &masks, &CFG).unwrap();
        let loc_count: usize = breakdown.per_channel.iter().map(|c| c.localization_count).sum();
        assert!(loc_count > 0);
        assert!((breakdown.localization - loc_count as f64).abs() < 1e-9);
        assert!(breakdown.confidence.abs() < 1e-6);
        assert!(breakdown.scale.abs() < 1e-12);
        assert!(
            (breakdown.total - (breakdown.confidence + breakdown.localization + breakdown.scale))
                .abs()
                < 1e-12
        );
    }

    #[test]
    fn empty_masks_give_zero() {
        let pred = CifTensor::zeros(2, 8, (32, 32)).unwrap();
        let masks = LossMasks::empty(2, pred.height, pred.width);
        let b = cif_loss(&pred, &pred, &masks, &CFG).unwrap();
        assert_eq!(b.total, 0.0);
        assert_eq!(b.per_channel[0].confidence_count, 0);
    }

    #[test]
    fn caf_has_twice_the_component_counts() {
        use crate::encoder::{encode_caf, encode_cif, EncoderOptions};
        use crate::model::{builtin_skeleton, GroundTruthAnnotation, GtKeypoint, Visibility};

        let skeleton = builtin_skeleton("coco17").unwrap();
        let mut keypoints = vec![GtKeypoint::absent(); 17];
        for (i, kp) in keypoints.iter_mut().enumerate() {
            *kp = GtKeypoint {
                x: 30.0 + 4.0 * i as f32,
                y: 50.0 + 3.0 * ((i % 5) as f32),
                visibility: Visibility::Visible,
                size: 4.0,
            };
        }
        let scene = vec![GroundTruthAnnotation::new(keypoints)];
        let opts = EncoderOptions::default();
        let (cif, cif_masks) = encode_cif(&scene, &skeleton, 8, (160, 120), &opts).unwrap();
        let (caf, caf_masks) = encode_caf(&scene, &skeleton, 8, (160, 120), &opts).unwrap();

        let cb = cif_loss(&cif, &cif, &cif_masks, &CFG).unwrap();
        let ab = caf_loss(&caf, &caf, &caf_masks, &CFG).unwrap();
        let cif_cells: usize = cif_masks.m_v.count();
        let caf_cells: usize = caf_masks.m_v.count();
        let cif_loc: usize = cb.per_channel.iter().map(|c| c.localization_count).sum();
        let caf_loc: usize = ab.per_channel.iter().map(|c| c.localization_count).sum();
        assert_eq!(cif_loc, cif_cells);
        assert_eq!(caf_loc, 2 * caf_cells);
    }

    #[test]
    fn kind_mismatch_is_a_shape_error() {
        let cif = CifTensor::zeros(1, 8, (32, 32)).unwrap();
        let caf = CafTensor::zeros(1, 8, (32, 32)).unwrap();
        let masks = LossMasks::empty(1, cif.height, cif.width);
        let err = composite_field_loss(
            &FieldTensor::Cif(cif),
            &FieldTensor::Caf(caf),
            &masks,
            &CFG,
        );
        assert!(matches!(err, Err(Error::Shape(_))));
    }
}
