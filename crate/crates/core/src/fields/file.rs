//! Bit-exact field container format.
//!
//! Layout: a little-endian u32 byte length, the UTF-8 JSON manifest, then
//! the raw float32 little-endian tensor blocks in manifest order. The
//! manifest records each block's shape and CRC-32.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TensorMeta {
    pub name: String,
    pub shape: Vec<usize>,
    pub crc32: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub skeleton: String,
    pub stride: u32,
    pub image_size: (u32, u32),
    pub frame: u64,
    pub tensors: Vec<TensorMeta>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<serde_json::Value>,
}

impl Manifest {
    pub fn new(skeleton: &str, stride: u32, image_size: (u32, u32), frame: u64) -> Self {
        Manifest {
            format_version: FORMAT_VERSION,
            skeleton: skeleton.to_string(),
            stride,
            image_size,
            frame,
            tensors: Vec::new(),
            config: None,
        }
    }

    pub fn tensor(&self, name: &str) -> Option<&TensorMeta> {
        self.tensors.iter().find(|t| t.name == name)
    }

    fn validate(&self) -> Result<()> {
        if self.stride == 0 {
            return Err(Error::InvalidManifest("stride must be positive".into()));
        }
        if self.image_size.0 == 0 || self.image_size.1 == 0 {
            return Err(Error::InvalidManifest("image size must be positive".into()));
        }
        Ok(())
    }
}

/// A named tensor with its shape and row-major float32 payload.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorBlock {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl TensorBlock {
    fn byte_len(&self) -> usize {
        self.data.len() * 4
    }

    fn to_bytes(&self) -> Vec<u8> {
        let mut bytes = Vec::with_capacity(self.byte_len());
        for v in &self.data {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        bytes
    }
}

/// Write a field container. The manifest's tensor list is derived from
/// `blocks`; any tensor list already present in `manifest` is replaced.
pub fn write_field_file(path: &Path, manifest: &Manifest, blocks: &[TensorBlock]) -> Result<()> {
    manifest.validate()?;
    let mut manifest = manifest.clone();
    manifest.tensors.clear();

    let mut payloads = Vec::with_capacity(blocks.len());
    for block in blocks {
        let expected: usize = block.shape.iter().product();
        if expected != block.data.len() {
            return Err(Error::InvalidManifest(format!(
                "block '{}' shape {:?} implies {} values but holds {}",
                block.name,
                block.shape,
                expected,
                block.data.len()
            )));
        }
        let bytes = block.to_bytes();
        manifest.tensors.push(TensorMeta {
            name: block.name.clone(),
            shape: block.shape.clone(),
            crc32: crc32fast::hash(&bytes),
        });
        payloads.push(bytes);
    }

    let manifest_json = serde_json::to_vec(&manifest)?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&(manifest_json.len() as u32).to_le_bytes())?;
    w.write_all(&manifest_json)?;
    for payload in &payloads {
        w.write_all(payload)?;
    }
    w.flush()?;
    Ok(())
}

/// Read a field container, verifying shapes and per-block checksums.
pub fn read_field_file(path: &Path) -> Result<(Manifest, Vec<TensorBlock>)> {
    let mut r = BufReader::new(File::open(path)?);

    let mut len_buf = [0u8; 4];
    r.read_exact(&mut len_buf)
        .map_err(|_| Error::Truncated(format!("{}: missing manifest length", path.display())))?;
    let manifest_len = u32::from_le_bytes(len_buf) as usize;

    let mut manifest_buf = vec![0u8; manifest_len];
    r.read_exact(&mut manifest_buf)
        .map_err(|_| Error::Truncated(format!("{}: manifest shorter than header", path.display())))?;
    let manifest: Manifest = serde_json::from_slice(&manifest_buf)
        .map_err(|e| Error::InvalidManifest(format!("{}: {e}", path.display())))?;
    manifest.validate()?;

    let mut blocks = Vec::with_capacity(manifest.tensors.len());
    for meta in &manifest.tensors {
        let n_values: usize = meta.shape.iter().product();
        let mut bytes = vec![0u8; n_values * 4];
        r.read_exact(&mut bytes).map_err(|_| {
            Error::Truncated(format!(
                "{}: tensor block '{}' shorter than its shape",
                path.display(),
                meta.name
            ))
        })?;
        if crc32fast::hash(&bytes) != meta.crc32 {
            return Err(Error::ChecksumMismatch(meta.name.clone()));
        }
        let data: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        blocks.push(TensorBlock {
            name: meta.name.clone(),
            shape: meta.shape.clone(),
            data,
        });
    }
    Ok((manifest, blocks))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_blocks() -> Vec<TensorBlock> {
        vec![
            TensorBlock {
                name: "cif".into(),
                shape: vec![2, 3],
                data: vec![0.0, 1.5, -2.25, f32::MIN_POSITIVE, 1e30, -0.0],
            },
            TensorBlock {
                name: "caf".into(),
                shape: vec![4],
                data: vec![9.0, 8.0, 7.0, 6.5],
            },
        ]
    }

    #[test]
    fn round_trip_is_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.fields");
        let manifest = Manifest::new("coco17", 8, (64, 64), 3);
        let blocks = sample_blocks();
        write_field_file(&path, &manifest, &blocks).unwrap();

        let (m, read) = read_field_file(&path).unwrap();
        assert_eq!(m.skeleton, "coco17");
        assert_eq!(m.frame, 3);
        assert_eq!(read, blocks);

        // Writing the identical content twice produces identical bytes.
        let path2 = dir.path().join("y.fields");
        write_field_file(&path2, &manifest, &blocks).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn corrupted_payload_is_a_checksum_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.fields");
        write_field_file(&path, &Manifest::new("coco17", 8, (64, 64), 0), &sample_blocks())
            .unwrap();

        let mut bytes = std::fs::read(&path).unwrap();
        let last = bytes.len() - 1;
        bytes[last] ^= 0xff;
        std::fs::write(&path, &bytes).unwrap();

        assert!(matches!(
            read_field_file(&path),
            Err(Error::ChecksumMismatch(name)) if name == "caf"
        ));
    }

    #[test]
    fn zero_stride_manifest_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.fields");
        let manifest = Manifest::new("coco17", 0, (64, 64), 0);
        assert!(matches!(
            write_field_file(&path, &manifest, &[]),
            Err(Error::InvalidManifest(_))
        ));
    }

    #[test]
    fn truncated_file_reports_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.fields");
        write_field_file(&path, &Manifest::new("coco17", 8, (64, 64), 0), &sample_blocks())
            .unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 6]).unwrap();
        assert!(matches!(read_field_file(&path), Err(Error::Truncated(_))));
    }

    #[test]
    fn shape_data_disagreement_rejected_on_write() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.fields");
        let blocks = vec![TensorBlock {
            name: "bad".into(),
            shape: vec![2, 2],
            data: vec![1.0; 3],
        }];
        assert!(matches!(
            write_field_file(&path, &Manifest::new("coco17", 8, (64, 64), 0), &blocks),
            Err(Error::InvalidManifest(_))
        ));
    }
}
