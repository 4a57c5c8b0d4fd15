//! Association scoring and connection proposals.

use crate::fields::{caf_ch, CafTensor, HrMap};

use super::DecoderConfig;

/// One active association cell, stripped of its spread channels.
#[derive(Debug, Clone, Copy)]
pub struct AssocCell {
    pub c: f32,
    pub x1: f32,
    pub y1: f32,
    pub x2: f32,
    pub y2: f32,
    pub s1: f32,
    pub s2: f32,
}

/// Which endpoint of the cell acts as the source.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

impl Direction {
    pub fn flip(self) -> Direction {
        match self {
            Direction::Forward => Direction::Backward,
            Direction::Backward => Direction::Forward,
        }
    }
}

impl AssocCell {
    /// (source x, y, sigma, target x, y, sigma) under `dir`.
    #[inline]
    pub fn oriented(&self, dir: Direction) -> (f32, f32, f32, f32, f32, f32) {
        match dir {
            Direction::Forward => (self.x1, self.y1, self.s1, self.x2, self.y2, self.s2),
            Direction::Backward => (self.x2, self.y2, self.s2, self.x1, self.y1, self.s1),
        }
    }
}

/// Collect the active cells of every association channel: confidence at or
/// above the threshold, positive sizes, finite regressions.
pub fn index_assoc_cells(caf: &CafTensor, conf_threshold: f32) -> Vec<Vec<AssocCell>> {
    let mut per_edge = Vec::with_capacity(caf.n_edges);
    for e in 0..caf.n_edges {
        let mut cells = Vec::new();
        for j in 0..caf.height {
            for i in 0..caf.width {
                let c = caf.get(caf_ch::C, e, j, i);
                if c < conf_threshold || c <= 0.0 {
                    continue;
                }
                let cell = AssocCell {
                    c,
                    x1: caf.get(caf_ch::X1, e, j, i),
                    y1: caf.get(caf_ch::Y1, e, j, i),
                    x2: caf.get(caf_ch::X2, e, j, i),
                    y2: caf.get(caf_ch::Y2, e, j, i),
                    s1: caf.get(caf_ch::SIGMA1, e, j, i),
                    s2: caf.get(caf_ch::SIGMA2, e, j, i),
                };
                if !(cell.s1 > 0.0 && cell.s2 > 0.0)
                    || !cell.x1.is_finite()
                    || !cell.y1.is_finite()
                    || !cell.x2.is_finite()
                    || !cell.y2.is_finite()
                {
                    continue;
                }
                cells.push(cell);
            }
        }
        per_edge.push(cells);
    }
    per_edge
}

/// Score one association from a source location:
/// `c * exp(-|source - origin| / sigma_origin) * f(target)`, where `f` is
/// the target keypoint's high-resolution confidence when rescoring is on
/// and 1 otherwise.
pub fn caf_association_score(
    cell: &AssocCell,
    dir: Direction,
    source: (f32, f32),
    hr: Option<&HrMap>,
    target_kp: usize,
    caf_rescoring: bool,
) -> f32 {
    let (ox, oy, os, tx, ty, _) = cell.oriented(dir);
    let d = ((source.0 - ox).powi(2) + (source.1 - oy).powi(2)).sqrt();
    let f = match hr {
        Some(hr) if caf_rescoring => hr.value_at(target_kp, tx, ty),
        _ => 1.0,
    };
    cell.c * (-d / os).exp() * f
}

/// A proposed target keypoint reached over one association edge.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Connection {
    pub x: f32,
    pub y: f32,
    pub size: f32,
    pub score: f32,
}

struct Scored {
    score: f32,
    cell: AssocCell,
}

fn best_two(
    cells: &[AssocCell],
    dir: Direction,
    source: (f32, f32),
    hr: Option<&HrMap>,
    target_kp: usize,
    caf_rescoring: bool,
) -> (Option<Scored>, Option<Scored>) {
    let mut best: Option<Scored> = None;
    let mut second: Option<Scored> = None;
    for cell in cells {
        let score = caf_association_score(cell, dir, source, hr, target_kp, caf_rescoring);
        if score <= 0.0 {
            continue;
        }
        if best.as_ref().map_or(true, |b| score > b.score) {
            second = best.take();
            best = Some(Scored { score, cell: *cell });
        } else if second.as_ref().map_or(true, |s| score > s.score) {
            second = Some(Scored { score, cell: *cell });
        }
    }
    (best, second)
}

/// Find the best connection for one edge from `source`.
///
/// The winning association may be blended with the runner-up when both
/// point at the same target; the proposal is then verified by decoding the
/// edge backwards from the target, which must land within
/// `max(sigma_origin, 2 * stride)` of the source.
#[allow(clippy::too_many_arguments)]
pub fn find_connection(
    source: (f32, f32),
    cells: &[AssocCell],
    dir: Direction,
    hr: Option<&HrMap>,
    source_kp: usize,
    target_kp: usize,
    stride: u32,
    cfg: &DecoderConfig,
) -> Option<Connection> {
    find_connection_impl(source, cells, dir, hr, source_kp, target_kp, stride, cfg, true)
}

/// Variant without the reverse-matching gate, for filling forced-complete
/// poses from weak evidence.
#[allow(clippy::too_many_arguments)]
pub(crate) fn find_connection_unchecked(
    source: (f32, f32),
    cells: &[AssocCell],
    dir: Direction,
    hr: Option<&HrMap>,
    source_kp: usize,
    target_kp: usize,
    stride: u32,
    cfg: &DecoderConfig,
) -> Option<Connection> {
    find_connection_impl(source, cells, dir, hr, source_kp, target_kp, stride, cfg, false)
}

#[allow(clippy::too_many_arguments)]
fn find_connection_impl(
    source: (f32, f32),
    cells: &[AssocCell],
    dir: Direction,
    hr: Option<&HrMap>,
    source_kp: usize,
    target_kp: usize,
    stride: u32,
    cfg: &DecoderConfig,
    reverse_match: bool,
) -> Option<Connection> {
    let (best, second) = best_two(cells, dir, source, hr, target_kp, cfg.caf_rescoring);
    let best = best?;
    let (_, _, best_os, bx, by, bs) = best.cell.oriented(dir);

    let (mut tx, mut ty) = (bx, by);
    if cfg.blend_top2 {
        if let Some(second) = &second {
            let (_, _, _, sx, sy, _) = second.cell.oriented(dir);
            let d = ((sx - bx).powi(2) + (sy - by).powi(2)).sqrt();
            if d <= bs {
                let w_sum = best.score + second.score;
                tx = (best.score * bx + second.score * sx) / w_sum;
                ty = (best.score * by + second.score * sy) / w_sum;
            }
        }
    }

    if reverse_match {
        let (rbest, _) = best_two(cells, dir.flip(), (tx, ty), hr, source_kp, cfg.caf_rescoring);
        let rbest = rbest?;
        let (_, _, _, rx, ry, _) = rbest.cell.oriented(dir.flip());
        let tolerance = best_os.max(2.0 * stride as f32);
        let back = ((rx - source.0).powi(2) + (ry - source.1).powi(2)).sqrt();
        if back > tolerance {
            return None;
        }
    }

    Some(Connection {
        x: tx,
        y: ty,
        size: bs,
        score: best.score,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cell(c: f32, x1: f32, y1: f32, x2: f32, y2: f32) -> AssocCell {
        AssocCell {
            c,
            x1,
            y1,
            x2,
            y2,
            s1: 4.0,
            s2: 4.0,
        }
    }

    #[test]
    fn score_at_origin_is_c_times_f() {
        let a = cell(0.8, 10.0, 10.0, 50.0, 50.0);
        // No hr map: f = 1.
        let s = caf_association_score(&a, Direction::Forward, (10.0, 10.0), None, 0, false);
        assert!((s - 0.8).abs() < 1e-6);
        // caf_rescoring on but no map available still falls back to 1.
        let s = caf_association_score(&a, Direction::Forward, (10.0, 10.0), None, 0, true);
        assert!((s - 0.8).abs() < 1e-6);
    }

    #[test]
    fn score_one_sigma_away() {
        let a = cell(1.0, 10.0, 10.0, 50.0, 50.0);
        let s = caf_association_score(&a, Direction::Forward, (14.0, 10.0), None, 0, false);
        assert!((s - (-1.0f32).exp()).abs() < 1e-6);
    }

    #[test]
    fn backward_direction_swaps_endpoints() {
        let a = cell(1.0, 10.0, 10.0, 50.0, 50.0);
        let s = caf_association_score(&a, Direction::Backward, (50.0, 50.0), None, 0, false);
        assert!((s - 1.0).abs() < 1e-6);
    }

    #[test]
    fn empty_cells_give_no_connection() {
        let cfg = DecoderConfig::default();
        assert!(find_connection((0.0, 0.0), &[], Direction::Forward, None, 0, 1, 8, &cfg).is_none());
    }

    #[test]
    fn reverse_mismatch_rejects() {
        let cfg = DecoderConfig::default();
        // Forward evidence points from (10,10) to (50,50), but the reverse
        // side of the field claims the source is 50 px away.
        let forged = vec![cell(1.0, 10.0, 10.0, 50.0, 50.0)];
        let ok = find_connection((10.0, 10.0), &forged, Direction::Forward, None, 0, 1, 8, &cfg);
        assert!(ok.is_some(), "consistent cell must pass reverse matching");

        let inconsistent = vec![AssocCell {
            c: 1.0,
            x1: 60.0,
            y1: 10.0,
            x2: 50.0,
            y2: 50.0,
            s1: 4.0,
            s2: 4.0,
        }];
        // Scoring from (10,10): origin is 50 px away, still the best cell,
        // but decoding backwards lands at (60,10), 50 px from the source.
        let rejected =
            find_connection((10.0, 10.0), &inconsistent, Direction::Forward, None, 0, 1, 8, &cfg);
        assert!(rejected.is_none());
    }

    #[test]
    fn blending_merges_nearby_targets() {
        let cfg = DecoderConfig::default();
        let cells = vec![
            cell(1.0, 10.0, 10.0, 50.0, 50.0),
            cell(0.5, 10.0, 10.0, 52.0, 50.0),
        ];
        let conn = find_connection((10.0, 10.0), &cells, Direction::Forward, None, 0, 1, 8, &cfg)
            .unwrap();
        // Weighted mean of 50 and 52 with weights 1.0 and 0.5.
        assert!((conn.x - (50.0 + 0.5 * 52.0) / 1.5).abs() < 1e-4);
        assert_eq!(conn.y, 50.0);

        let mut no_blend = DecoderConfig::default();
        no_blend.blend_top2 = false;
        let conn =
            find_connection((10.0, 10.0), &cells, Direction::Forward, None, 0, 1, 8, &no_blend)
                .unwrap();
        assert_eq!(conn.x, 50.0);
    }

    #[test]
    fn distant_runner_up_is_not_blended() {
        let cfg = DecoderConfig::default();
        let cells = vec![
            cell(1.0, 10.0, 10.0, 50.0, 50.0),
            cell(0.9, 10.0, 10.0, 80.0, 50.0),
        ];
        let conn = find_connection((10.0, 10.0), &cells, Direction::Forward, None, 0, 1, 8, &cfg)
            .unwrap();
        assert_eq!(conn.x, 50.0);
    }
}
