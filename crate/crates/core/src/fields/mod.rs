//! Composite field tensors on a strided grid, their high-resolution
//! confidence accumulation and the on-disk container format.
//!
//! Grid convention: cell `(i, j)` of a stride-`s` tensor is anchored at
//! image pixel `(i*s, j*s)`. Regression channels store absolute image
//! coordinates, which keeps encoding and decoding symmetric and makes the
//! tensors stride-independent to interpret.

mod file;
mod hr;

pub use file::{read_field_file, write_field_file, Manifest, TensorBlock, TensorMeta};
pub use hr::{cif_hr_accumulate, HrMap};

use crate::error::{Error, Result};

/// Channel indices of an intensity field: confidence, regressed x/y,
/// localization spread b, joint size sigma.
pub mod cif_ch {
    pub const C: usize = 0;
    pub const X: usize = 1;
    pub const Y: usize = 2;
    pub const B: usize = 3;
    pub const SIGMA: usize = 4;
    pub const COUNT: usize = 5;
}

/// Channel indices of an association field: confidence, both regressed
/// endpoints, both spreads, both joint sizes.
pub mod caf_ch {
    pub const C: usize = 0;
    pub const X1: usize = 1;
    pub const Y1: usize = 2;
    pub const X2: usize = 3;
    pub const Y2: usize = 4;
    pub const B1: usize = 5;
    pub const B2: usize = 6;
    pub const SIGMA1: usize = 7;
    pub const SIGMA2: usize = 8;
    pub const COUNT: usize = 9;
}

pub fn grid_extent(image: u32, stride: u32) -> usize {
    image.div_ceil(stride) as usize
}

/// Grid of per-keypoint intensity composites, `[5][K][H][W]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CifTensor {
    pub n_keypoints: usize,
    pub stride: u32,
    pub image_size: (u32, u32),
    pub height: usize,
    pub width: usize,
    data: Vec<f32>,
}

/// Grid of per-edge association composites, `[9][E][H][W]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CafTensor {
    pub n_edges: usize,
    pub stride: u32,
    pub image_size: (u32, u32),
    pub height: usize,
    pub width: usize,
    data: Vec<f32>,
}

/// Association field whose endpoint 1 lives in the previous frame and
/// endpoint 2 in the current frame. Same memory layout as [`CafTensor`].
#[derive(Debug, Clone, PartialEq)]
pub struct TcafTensor(pub CafTensor);

impl CifTensor {
    pub fn zeros(n_keypoints: usize, stride: u32, image_size: (u32, u32)) -> Result<Self> {
        if stride == 0 {
            return Err(Error::Domain("stride must be positive".into()));
        }
        let width = grid_extent(image_size.0, stride);
        let height = grid_extent(image_size.1, stride);
        Ok(CifTensor {
            n_keypoints,
            stride,
            image_size,
            height,
            width,
            data: vec![0.0; cif_ch::COUNT * n_keypoints * height * width],
        })
    }

    #[inline]
    fn idx(&self, ch: usize, k: usize, j: usize, i: usize) -> usize {
        ((ch * self.n_keypoints + k) * self.height + j) * self.width + i
    }

    #[inline]
    pub fn get(&self, ch: usize, k: usize, j: usize, i: usize) -> f32 {
        self.data[self.idx(ch, k, j, i)]
    }

    #[inline]
    pub fn set(&mut self, ch: usize, k: usize, j: usize, i: usize, value: f32) {
        let idx = self.idx(ch, k, j, i);
        self.data[idx] = value;
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn from_raw(
        n_keypoints: usize,
        stride: u32,
        image_size: (u32, u32),
        data: Vec<f32>,
    ) -> Result<Self> {
        let mut t = CifTensor::zeros(n_keypoints, stride, image_size)?;
        if data.len() != t.data.len() {
            return Err(Error::Shape(format!(
                "cif raw data has {} values, expected {}",
                data.len(),
                t.data.len()
            )));
        }
        t.data = data;
        Ok(t)
    }
}

impl CafTensor {
    pub fn zeros(n_edges: usize, stride: u32, image_size: (u32, u32)) -> Result<Self> {
        if stride == 0 {
            return Err(Error::Domain("stride must be positive".into()));
        }
        let width = grid_extent(image_size.0, stride);
        let height = grid_extent(image_size.1, stride);
        Ok(CafTensor {
            n_edges,
            stride,
            image_size,
            height,
            width,
            data: vec![0.0; caf_ch::COUNT * n_edges * height * width],
        })
    }

    #[inline]
    fn idx(&self, ch: usize, e: usize, j: usize, i: usize) -> usize {
        ((ch * self.n_edges + e) * self.height + j) * self.width + i
    }

    #[inline]
    pub fn get(&self, ch: usize, e: usize, j: usize, i: usize) -> f32 {
        self.data[self.idx(ch, e, j, i)]
    }

    #[inline]
    pub fn set(&mut self, ch: usize, e: usize, j: usize, i: usize, value: f32) {
        let idx = self.idx(ch, e, j, i);
        self.data[idx] = value;
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn from_raw(
        n_edges: usize,
        stride: u32,
        image_size: (u32, u32),
        data: Vec<f32>,
    ) -> Result<Self> {
        let mut t = CafTensor::zeros(n_edges, stride, image_size)?;
        if data.len() != t.data.len() {
            return Err(Error::Shape(format!(
                "caf raw data has {} values, expected {}",
                data.len(),
                t.data.len()
            )));
        }
        t.data = data;
        Ok(t)
    }
}

/// Either field tensor kind, for operations generic over the field type.
#[derive(Debug, Clone)]
pub enum FieldTensor {
    Cif(CifTensor),
    Caf(CafTensor),
    Tcaf(TcafTensor),
}

impl FieldTensor {
    pub fn kind(&self) -> &'static str {
        match self {
            FieldTensor::Cif(_) => "cif",
            FieldTensor::Caf(_) => "caf",
            FieldTensor::Tcaf(_) => "tcaf",
        }
    }
}

impl CifTensor {
    pub fn to_block(&self, name: &str) -> TensorBlock {
        TensorBlock {
            name: name.to_string(),
            shape: vec![cif_ch::COUNT, self.n_keypoints, self.height, self.width],
            data: self.data.clone(),
        }
    }

    pub fn from_block(block: &TensorBlock, stride: u32, image_size: (u32, u32)) -> Result<Self> {
        if block.shape.len() != 4 || block.shape[0] != cif_ch::COUNT {
            return Err(Error::Shape(format!(
                "block '{}' has shape {:?}, expected [5, K, H, W]",
                block.name, block.shape
            )));
        }
        let t = CifTensor::from_raw(block.shape[1], stride, image_size, block.data.clone())?;
        if t.height != block.shape[2] || t.width != block.shape[3] {
            return Err(Error::Shape(format!(
                "block '{}' grid {:?} does not match image {:?} at stride {}",
                block.name,
                &block.shape[2..],
                image_size,
                stride
            )));
        }
        Ok(t)
    }
}

impl CafTensor {
    pub fn to_block(&self, name: &str) -> TensorBlock {
        TensorBlock {
            name: name.to_string(),
            shape: vec![caf_ch::COUNT, self.n_edges, self.height, self.width],
            data: self.data.clone(),
        }
    }

    pub fn from_block(block: &TensorBlock, stride: u32, image_size: (u32, u32)) -> Result<Self> {
        if block.shape.len() != 4 || block.shape[0] != caf_ch::COUNT {
            return Err(Error::Shape(format!(
                "block '{}' has shape {:?}, expected [9, E, H, W]",
                block.name, block.shape
            )));
        }
        let t = CafTensor::from_raw(block.shape[1], stride, image_size, block.data.clone())?;
        if t.height != block.shape[2] || t.width != block.shape[3] {
            return Err(Error::Shape(format!(
                "block '{}' grid {:?} does not match image {:?} at stride {}",
                block.name,
                &block.shape[2..],
                image_size,
                stride
            )));
        }
        Ok(t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_dimensions_cover_the_image() {
        assert_eq!(grid_extent(801, 8), 101);
        assert_eq!(grid_extent(808, 8), 101);
        assert_eq!(grid_extent(800, 8), 100);
    }

    #[test]
    fn zero_stride_rejected() {
        assert!(CifTensor::zeros(17, 0, (100, 100)).is_err());
    }

    #[test]
    fn get_set_round_trip() {
        let mut t = CafTensor::zeros(2, 8, (64, 48)).unwrap();
        t.set(caf_ch::X2, 1, 3, 5, 42.5);
        assert_eq!(t.get(caf_ch::X2, 1, 3, 5), 42.5);
        assert_eq!(t.get(caf_ch::C, 0, 0, 0), 0.0);
    }
}
