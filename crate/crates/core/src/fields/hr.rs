//! High-resolution confidence accumulation.
//!
//! Every sufficiently confident intensity cell splats an unnormalized
//! Gaussian of its own predicted width onto a fine grid at its regressed
//! target. Sigma is the Gaussian standard deviation; each splat is
//! truncated at three sigma per axis, where the remaining contribution is
//! below 1.2% of the peak.

use super::{cif_ch, CifTensor};

/// Per-keypoint accumulated confidence on a grid finer than the field
/// stride. Node `(gx, gy)` sits at image pixel `(gx*hr_stride, gy*hr_stride)`.
#[derive(Debug, Clone)]
pub struct HrMap {
    pub n_keypoints: usize,
    pub hr_stride: u32,
    pub image_size: (u32, u32),
    pub width: usize,
    pub height: usize,
    data: Vec<f32>,
}

impl HrMap {
    pub fn zeros(n_keypoints: usize, hr_stride: u32, image_size: (u32, u32)) -> Self {
        let hr_stride = hr_stride.max(1);
        let width = (image_size.0.div_ceil(hr_stride) + 1) as usize;
        let height = (image_size.1.div_ceil(hr_stride) + 1) as usize;
        HrMap {
            n_keypoints,
            hr_stride,
            image_size,
            width,
            height,
            data: vec![0.0; n_keypoints * width * height],
        }
    }

    #[inline]
    fn idx(&self, k: usize, gy: usize, gx: usize) -> usize {
        (k * self.height + gy) * self.width + gx
    }

    #[inline]
    pub fn node(&self, k: usize, gy: usize, gx: usize) -> f32 {
        self.data[self.idx(k, gy, gx)]
    }

    /// Bilinear interpolation at image coordinates, clamped at grid borders.
    /// Queries outside the image return 0.
    pub fn value_at(&self, k: usize, x: f32, y: f32) -> f32 {
        if !(x >= 0.0 && y >= 0.0)
            || x >= self.image_size.0 as f32
            || y >= self.image_size.1 as f32
        {
            return 0.0;
        }
        let s = self.hr_stride as f32;
        let fx = (x / s).min((self.width - 1) as f32);
        let fy = (y / s).min((self.height - 1) as f32);
        let gx0 = (fx.floor() as usize).min(self.width - 2);
        let gy0 = (fy.floor() as usize).min(self.height - 2);
        let tx = fx - gx0 as f32;
        let ty = fy - gy0 as f32;
        let v00 = self.node(k, gy0, gx0);
        let v01 = self.node(k, gy0, gx0 + 1);
        let v10 = self.node(k, gy0 + 1, gx0);
        let v11 = self.node(k, gy0 + 1, gx0 + 1);
        (v00 * (1.0 - tx) + v01 * tx) * (1.0 - ty) + (v10 * (1.0 - tx) + v11 * tx) * ty
    }

    /// Splat `c * exp(-((v-x)^2 + (w-y)^2) / (2 sigma^2))` onto the grid,
    /// truncated at `3 sigma` per axis. The kernel is separable, so row and
    /// column factors are computed once each.
    pub fn add_gauss(&mut self, k: usize, c: f32, x: f32, y: f32, sigma: f32) {
        if !(sigma > 0.0) || !x.is_finite() || !y.is_finite() || !(c > 0.0) {
            return;
        }
        let s = self.hr_stride as f32;
        let cutoff = 3.0 * sigma;
        let gx_min = (((x - cutoff) / s).ceil().max(0.0)) as usize;
        let gx_max = (((x + cutoff) / s).floor() as isize).min(self.width as isize - 1);
        let gy_min = (((y - cutoff) / s).ceil().max(0.0)) as usize;
        let gy_max = (((y + cutoff) / s).floor() as isize).min(self.height as isize - 1);
        if gx_max < gx_min as isize || gy_max < gy_min as isize {
            return;
        }
        let gx_max = gx_max as usize;
        let gy_max = gy_max as usize;

        let inv_two_sigma_sq = 1.0 / (2.0 * sigma * sigma);
        let col: Vec<f32> = (gx_min..=gx_max)
            .map(|gx| {
                let dx = gx as f32 * s - x;
                (-dx * dx * inv_two_sigma_sq).exp()
            })
            .collect();
        for gy in gy_min..=gy_max {
            let dy = gy as f32 * s - y;
            let row_factor = c * (-dy * dy * inv_two_sigma_sq).exp();
            let base = self.idx(k, gy, gx_min);
            let slice = &mut self.data[base..base + col.len()];
            for (cell, &cf) in slice.iter_mut().zip(col.iter()) {
                *cell += row_factor * cf;
            }
        }
    }
}

/// Accumulate every intensity cell above `conf_threshold` into a
/// high-resolution confidence map at `hr_stride` pixels per node.
pub fn cif_hr_accumulate(cif: &CifTensor, conf_threshold: f32, hr_stride: u32) -> HrMap {
    let mut hr = HrMap::zeros(cif.n_keypoints, hr_stride, cif.image_size);
    for k in 0..cif.n_keypoints {
        for j in 0..cif.height {
            for i in 0..cif.width {
                let c = cif.get(cif_ch::C, k, j, i);
                if c > conf_threshold {
                    hr.add_gauss(
                        k,
                        c,
                        cif.get(cif_ch::X, k, j, i),
                        cif.get(cif_ch::Y, k, j, i),
                        cif.get(cif_ch::SIGMA, k, j, i),
                    );
                }
            }
        }
    }
    hr
}
