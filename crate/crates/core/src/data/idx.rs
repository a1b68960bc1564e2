//! IDX image/label ingestion and in-place image rotation.

use super::LabeledSet;
use crate::error::{Error, Result};
use crate::numerics::DenseMatrix;
use std::path::Path;

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

struct Cursor<'a> {
    bytes: &'a [u8],
    offset: usize,
}

impl<'a> Cursor<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, offset: 0 }
    }

    fn read_u32(&mut self, what: &str) -> Result<u32> {
        let end = self.offset + 4;
        if end > self.bytes.len() {
            return Err(Error::format(
                self.offset as u64,
                format!("truncated while reading {what}"),
            ));
        }
        let v = u32::from_be_bytes(self.bytes[self.offset..end].try_into().unwrap());
        self.offset = end;
        Ok(v)
    }

    fn read_bytes(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.offset + n;
        if end > self.bytes.len() {
            return Err(Error::format(
                self.offset as u64,
                format!(
                    "truncated while reading {what}: need {n} bytes, {} remain",
                    self.bytes.len() - self.offset
                ),
            ));
        }
        let s = &self.bytes[self.offset..end];
        self.offset = end;
        Ok(s)
    }
}

/// Loads a big-endian IDX image file plus its label file into a labeled
/// set, pixels scaled to [0, 1] and flattened row-major.
pub fn load_idx_images<P: AsRef<Path>, Q: AsRef<Path>>(
    images_path: P,
    labels_path: Q,
) -> Result<LabeledSet> {
    let image_bytes = std::fs::read(images_path)?;
    let label_bytes = std::fs::read(labels_path)?;

    let mut cur = Cursor::new(&image_bytes);
    let magic = cur.read_u32("image magic")?;
    if magic != IMAGE_MAGIC {
        return Err(Error::format(
            0,
            format!("bad image magic {magic:#010x}, expected {IMAGE_MAGIC:#010x}"),
        ));
    }
    let n = cur.read_u32("image count")? as usize;
    let rows = cur.read_u32("row count")? as usize;
    let cols = cur.read_u32("column count")? as usize;
    let pixels = cur.read_bytes(n * rows * cols, "pixel data")?;

    let mut lcur = Cursor::new(&label_bytes);
    let lmagic = lcur.read_u32("label magic")?;
    if lmagic != LABEL_MAGIC {
        return Err(Error::format(
            0,
            format!("bad label magic {lmagic:#010x}, expected {LABEL_MAGIC:#010x}"),
        ));
    }
    let ln = lcur.read_u32("label count")? as usize;
    if ln != n {
        return Err(Error::format(
            4,
            format!("label count {ln} does not match image count {n}"),
        ));
    }
    let labels = lcur.read_bytes(ln, "label data")?;

    let data: Vec<f64> = pixels.iter().map(|&b| b as f64 / 255.0).collect();
    let features = DenseMatrix::from_vec(n, rows * cols, data)?;
    LabeledSet::new(features, labels.iter().map(|&b| b as usize).collect())
}

/// Rotates every image counterclockwise about its center by the given
/// angle, with bilinear interpolation and zero fill outside the frame.
/// Labels pass through. The transform is deterministic; the seed parameter
/// is accepted for interface uniformity with the generators and ignored.
pub fn rotate_images(
    set: &LabeledSet,
    width: usize,
    height: usize,
    angle_degrees: f64,
    _seed: u64,
) -> Result<LabeledSet> {
    if set.feature_dim() != width * height {
        return Err(Error::contract(format!(
            "feature dim {} does not match {width}x{height} images",
            set.feature_dim()
        )));
    }
    if angle_degrees == 0.0 {
        return Ok(set.clone());
    }
    let r = angle_degrees.to_radians();
    let (cos, sin) = (r.cos(), r.sin());
    let cx = (width as f64 - 1.0) / 2.0;
    let cy = (height as f64 - 1.0) / 2.0;
    let n = set.len();
    let mut out = vec![0.0f64; n * width * height];
    for i in 0..n {
        let src = set.features().row(i);
        let dst = &mut out[i * width * height..(i + 1) * width * height];
        for y in 0..height {
            for x in 0..width {
                // Inverse map: where in the source does this output pixel
                // come from?
                let dx = x as f64 - cx;
                let dy = y as f64 - cy;
                let sx = cos * dx + sin * dy + cx;
                let sy = -sin * dx + cos * dy + cy;
                dst[y * width + x] = bilinear(src, width, height, sx, sy);
            }
        }
    }
    let features = DenseMatrix::from_vec(n, width * height, out)?;
    LabeledSet::new(features, set.labels().to_vec())
}

fn bilinear(img: &[f64], width: usize, height: usize, x: f64, y: f64) -> f64 {
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let at = |xi: f64, yi: f64| -> f64 {
        if xi < 0.0 || yi < 0.0 || xi >= width as f64 || yi >= height as f64 {
            0.0
        } else {
            img[yi as usize * width + xi as usize]
        }
    };
    let top = at(x0, y0) * (1.0 - fx) + at(x0 + 1.0, y0) * fx;
    let bottom = at(x0, y0 + 1.0) * (1.0 - fx) + at(x0 + 1.0, y0 + 1.0) * fx;
    top * (1.0 - fy) + bottom * fy
}
