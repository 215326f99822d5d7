//! Readers for locally downloaded image datasets.
//!
//! * IDX (MNIST / Fashion-MNIST): an `idx3-ubyte` image file and an `idx1-ubyte` label file.
//! * CIFAR binary batches: records of label byte(s) followed by 3072 planar RGB bytes.

use std::fs;
use std::path::Path;

use degan_core::{DatasetSpec, ImageShape};

use crate::error::{format_error, Error, IoContext, Result};

fn be_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_be_bytes([bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]])
}

fn idx_header(path: &Path, bytes: &[u8], dims: usize) -> Result<Vec<usize>> {
    let header = 4 + 4 * dims;
    if bytes.len() < header || bytes[0] != 0 || bytes[1] != 0 || bytes[2] != 0x08 || bytes[3] as usize != dims {
        return Err(format_error(path, format!("not an unsigned-byte IDX file with {dims} dimensions")));
    }
    let shape: Vec<usize> = (0..dims).map(|d| be_u32(bytes, 4 + 4 * d) as usize).collect();
    if bytes.len() != header + shape.iter().product::<usize>() {
        return Err(format_error(path, "length does not match the IDX header"));
    }
    Ok(shape)
}

pub fn read_idx(images: &Path, labels: &Path, num_classes: usize, name: &str) -> Result<DatasetSpec> {
    let img = fs::read(images).at(images)?;
    let lab = fs::read(labels).at(labels)?;
    let dims = idx_header(images, &img, 3)?;
    let count = idx_header(labels, &lab, 1)?[0];
    if count != dims[0] {
        return Err(Error::Config(format!("{} images but {count} labels", dims[0])));
    }
    let pixels = img[16..].iter().map(|&b| b as f32 / 255.0).collect();
    let labels = lab[8..].iter().map(|&b| b as usize).collect();
    Ok(DatasetSpec::new(name, ImageShape::new(dims[1], dims[2], 1), num_classes, pixels, Some(labels))?)
}

/// CIFAR-10 batches have one label byte per record; CIFAR-100 has coarse then fine,
/// and the fine label is used.
pub fn read_cifar(files: &[&Path], fine_labels: bool, name: &str) -> Result<DatasetSpec> {
    let (label_bytes, num_classes) = if fine_labels { (2, 100) } else { (1, 10) };
    let record = label_bytes + 3072;
    let (mut pixels, mut labels) = (Vec::new(), Vec::new());
    for path in files {
        let bytes = fs::read(path).at(*path)?;
        if bytes.is_empty() || bytes.len() % record != 0 {
            return Err(format_error(*path, format!("length is not a multiple of {record}-byte records")));
        }
        for rec in bytes.chunks_exact(record) {
            labels.push(rec[label_bytes - 1] as usize);
            let planes = &rec[label_bytes..];
            for i in 0..1024 {
                for c in 0..3 {
                    pixels.push(planes[c * 1024 + i] as f32 / 255.0);
                }
            }
        }
    }
    Ok(DatasetSpec::new(name, ImageShape::new(32, 32, 3), num_classes, pixels, Some(labels))?)
}
