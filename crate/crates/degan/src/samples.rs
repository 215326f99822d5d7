//! Sample grids: a PNG raster plus a CSV sidecar with the classifier's
//! prediction for every cell.

use std::fs;
use std::path::{Path, PathBuf};

use degan_core::pipelines::generate_batch;
use degan_core::{ModelHandle, RangeAdapter, StreamRng};
use image::{GrayImage, RgbImage};

use crate::error::{format_error, Error, IoContext, Result};

const PAD: u32 = 1;

pub struct SampleExport {
    pub image: PathBuf,
    pub sidecar: PathBuf,
    pub predictions: Vec<(usize, f64)>,
}

pub fn sidecar_path(image: &Path) -> PathBuf {
    image.with_extension("csv")
}

fn to_byte(v: f64) -> u8 {
    (((v.clamp(-1.0, 1.0) + 1.0) * 0.5) * 255.0).round() as u8
}

/// Writes `rows × cols` generated samples to `path` (PNG) and `path` with a `.csv` extension.
pub fn export_samples(
    generator: &ModelHandle,
    classifier: &ModelHandle,
    rows: usize,
    cols: usize,
    seed: u64,
    path: &Path,
) -> Result<SampleExport> {
    if rows == 0 || cols == 0 {
        return Err(Error::Config("sample grid must have at least one row and column".into()));
    }
    let n = rows * cols;
    let out = generate_batch(generator, classifier, n, &mut StreamRng::new(seed, "samples"))?;
    let images = RangeAdapter::new(classifier.input_stats()).inverse(&out.images);
    let shape = generator.arch().image_shape;
    let (h, w, c) = (shape.height as u32, shape.width as u32, shape.channels);
    let (gw, gh) = (cols as u32 * (w + PAD) + PAD, rows as u32 * (h + PAD) + PAD);
    let cell_origin = |i: usize| ((i % cols) as u32 * (w + PAD) + PAD, (i / cols) as u32 * (h + PAD) + PAD);
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).at(parent)?;
    }
    let save_err = |e: image::ImageError| match e {
        image::ImageError::IoError(source) => Error::Io { path: path.into(), source },
        other => format_error(path, other),
    };
    match c {
        1 => {
            let mut img = GrayImage::new(gw, gh);
            for i in 0..n {
                let (ox, oy) = cell_origin(i);
                let px = images.item(i);
                for y in 0..h {
                    for x in 0..w {
                        img.put_pixel(ox + x, oy + y, image::Luma([to_byte(px[(y * w + x) as usize])]));
                    }
                }
            }
            img.save_with_format(path, image::ImageFormat::Png).map_err(save_err)?;
        }
        3 => {
            let mut img = RgbImage::new(gw, gh);
            for i in 0..n {
                let (ox, oy) = cell_origin(i);
                let px = images.item(i);
                for y in 0..h {
                    for x in 0..w {
                        let base = ((y * w + x) * 3) as usize;
                        let rgb = [to_byte(px[base]), to_byte(px[base + 1]), to_byte(px[base + 2])];
                        img.put_pixel(ox + x, oy + y, image::Rgb(rgb));
                    }
                }
            }
            img.save_with_format(path, image::ImageFormat::Png).map_err(save_err)?;
        }
        other => return Err(Error::Config(format!("cannot render images with {other} channels"))),
    }
    let predictions: Vec<(usize, f64)> =
        out.distribution.predictions().into_iter().zip(out.distribution.confidences()).collect();
    let sidecar = sidecar_path(path);
    let mut csv = csv::Writer::from_path(&sidecar).map_err(|e| format_error(&sidecar, e))?;
    csv.write_record(["index", "row", "col", "argmax", "confidence"]).map_err(|e| format_error(&sidecar, e))?;
    for (i, (arg, conf)) in predictions.iter().enumerate() {
        let rec = [i.to_string(), (i / cols).to_string(), (i % cols).to_string(), arg.to_string(), format!("{conf}")];
        csv.write_record(&rec).map_err(|e| format_error(&sidecar, e))?;
    }
    csv.flush().at(&sidecar)?;
    Ok(SampleExport { image: path.into(), sidecar, predictions })
}
