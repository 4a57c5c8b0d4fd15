//! Seed extraction from intensity fields.

use crate::fields::{cif_ch, CifTensor, HrMap};

use super::{DecoderConfig, SeedRescoring};

/// A candidate starting keypoint for pose growth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Seed {
    pub keypoint: usize,
    pub x: f32,
    pub y: f32,
    pub score: f32,
    pub size: f32,
}

fn is_local_max_3x3(cif: &CifTensor, k: usize, j: usize, i: usize) -> bool {
    let c = cif.get(cif_ch::C, k, j, i);
    for dj in -1i32..=1 {
        for di in -1i32..=1 {
            if dj == 0 && di == 0 {
                continue;
            }
            let nj = j as i32 + dj;
            let ni = i as i32 + di;
            if nj < 0 || ni < 0 || nj >= cif.height as i32 || ni >= cif.width as i32 {
                continue;
            }
            if cif.get(cif_ch::C, k, nj as usize, ni as usize) > c {
                return false;
            }
        }
    }
    true
}

/// Turn confident intensity cells into seeds at their regressed location,
/// ordered best first.
///
/// Candidate cells need raw confidence at or above the seed threshold. With
/// high-resolution rescoring the accumulated map replaces most of the raw
/// confidence and the threshold is applied again to the rescored value;
/// with the local 3x3 mode only cells that are maximal in their
/// neighborhood survive.
pub fn extract_seeds(cif: &CifTensor, hr: Option<&HrMap>, cfg: &DecoderConfig) -> Vec<Seed> {
    let mut candidates: Vec<(f32, usize, usize, usize, f32, f32, f32)> = Vec::new();
    for k in 0..cif.n_keypoints {
        for j in 0..cif.height {
            for i in 0..cif.width {
                let c = cif.get(cif_ch::C, k, j, i);
                if c < cfg.seed_threshold {
                    continue;
                }
                let x = cif.get(cif_ch::X, k, j, i);
                let y = cif.get(cif_ch::Y, k, j, i);
                let size = cif.get(cif_ch::SIGMA, k, j, i);
                if !(size > 0.0) || !x.is_finite() || !y.is_finite() {
                    continue;
                }
                let score = match (cfg.seed_rescoring, hr) {
                    (SeedRescoring::Hr, Some(hr)) => {
                        (0.9 * hr.value_at(k, x, y) + 0.1 * c).clamp(0.0, 1.0)
                    }
                    (SeedRescoring::Local3x3Nms, _) => {
                        if !is_local_max_3x3(cif, k, j, i) {
                            continue;
                        }
                        c
                    }
                    _ => c,
                };
                if score < cfg.seed_threshold {
                    continue;
                }
                candidates.push((score, k, j, i, x, y, size));
            }
        }
    }
    candidates.sort_by(|a, b| {
        b.0.total_cmp(&a.0)
            .then(a.1.cmp(&b.1))
            .then(a.2.cmp(&b.2))
            .then(a.3.cmp(&b.3))
    });
    candidates
        .into_iter()
        .map(|(score, k, _, _, x, y, size)| Seed {
            keypoint: k,
            x,
            y,
            score,
            size,
        })
        .collect()
}
