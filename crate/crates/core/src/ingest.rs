//! Weight files, IDX image/label files and seeded synthetic fixtures.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::circuit::{is_weight_realizable, Mode};
use crate::{Activation, AnnSpec, DeviceModel, Error, Result};

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Serialize, Deserialize)]
struct WeightFile {
    widths: Vec<usize>,
    /// One row-major matrix per layer.
    layers: Vec<Vec<Vec<f64>>>,
}

/// Parses the weight JSON schema `{ "widths": [n0, ..., nL], "layers": [...] }`.
pub fn parse_weights(text: &str, activation: Activation) -> Result<AnnSpec> {
    let file: WeightFile = serde_json::from_str(text)?;
    if file.widths.len() != file.layers.len() + 1 {
        return Err(Error::dim("declared widths", file.layers.len() + 1, file.widths.len()));
    }
    let mut weights = Vec::with_capacity(file.layers.len());
    for (l, rows) in file.layers.iter().enumerate() {
        let (n, m) = (file.widths[l + 1], file.widths[l]);
        if rows.len() != n {
            return Err(Error::dim(format!("rows of layer {}", l + 1), n, rows.len()));
        }
        if let Some(bad) = rows.iter().find(|r| r.len() != m) {
            return Err(Error::dim(format!("columns of layer {}", l + 1), m, bad.len()));
        }
        if rows.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(format!("layer {} holds a non-finite weight", l + 1)));
        }
        weights.push(DMatrix::from_fn(n, m, |k, j| rows[k][j]));
    }
    AnnSpec::new(weights, activation)
}

pub fn load_weights(path: impl AsRef<Path>, activation: Activation) -> Result<AnnSpec> {
    parse_weights(&fs::read_to_string(path)?, activation)
}

pub fn weights_to_json(spec: &AnnSpec) -> Result<String> {
    let file = WeightFile {
        widths: spec.widths(),
        layers: spec.weights.iter().map(crate::protocols::matrix_rows).collect(),
    };
    Ok(serde_json::to_string_pretty(&file)?)
}

pub fn save_weights(spec: &AnnSpec, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, weights_to_json(spec)? + "\n")?;
    Ok(())
}

/// Images with pixel intensities in `[0, 1]` and their digit labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub images: Vec<DVector<f64>>,
    pub labels: Vec<u8>,
    pub rows: usize,
    pub cols: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Rescales so that each image holds `scale` times its raw pixel bytes.
    pub fn with_pixel_scale(mut self, scale: f64) -> Self {
        let factor = scale * 255.0;
        for img in &mut self.images {
            *img *= factor;
        }
        self
    }
}

fn be_u32(bytes: &[u8], at: usize, what: &str) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Idx(format!("{what}: truncated header")))
}

/// Raw `u8` pixels of an IDX image file: `(count, rows, cols, pixels)`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<(usize, usize, usize, &[u8])> {
    let magic = be_u32(bytes, 0, "images")?;
    if magic != IMAGE_MAGIC {
        return Err(Error::Idx(format!("images: bad magic {magic:#010x}")));
    }
    let count = be_u32(bytes, 4, "images")? as usize;
    let rows = be_u32(bytes, 8, "images")? as usize;
    let cols = be_u32(bytes, 12, "images")? as usize;
    let need = count * rows * cols;
    let data = &bytes[16..];
    if data.len() < need {
        return Err(Error::Idx(format!(
            "images: truncated, expected {need} pixel bytes, found {}",
            data.len()
        )));
    }
    Ok((count, rows, cols, &data[..need]))
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<&[u8]> {
    let magic = be_u32(bytes, 0, "labels")?;
    if magic != LABEL_MAGIC {
        return Err(Error::Idx(format!("labels: bad magic {magic:#010x}")));
    }
    let count = be_u32(bytes, 4, "labels")? as usize;
    let data = &bytes[8..];
    if data.len() < count {
        return Err(Error::Idx(format!(
            "labels: truncated, expected {count} bytes, found {}",
            data.len()
        )));
    }
    Ok(&data[..count])
}

/// Loads the first `limit` image/label pairs (all when `None`), scaling
/// pixels by `1/255`.
pub fn load_idx(images: impl AsRef<Path>, labels: impl AsRef<Path>, limit: Option<usize>) -> Result<Dataset> {
    let image_bytes = fs::read(images)?;
    let label_bytes = fs::read(labels)?;
    idx_from_bytes(&image_bytes, &label_bytes, limit)
}

pub fn idx_from_bytes(image_bytes: &[u8], label_bytes: &[u8], limit: Option<usize>) -> Result<Dataset> {
    let (count, rows, cols, pixels) = parse_idx_images(image_bytes)?;
    let labels = parse_idx_labels(label_bytes)?;
    if labels.len() != count {
        return Err(Error::Idx(format!("{count} images but {} labels", labels.len())));
    }
    let take = limit.unwrap_or(count).min(count);
    let size = rows * cols;
    Ok(Dataset {
        images: (0..take)
            .map(|i| DVector::from_iterator(size, pixels[i * size..(i + 1) * size].iter().map(|&p| p as f64 / 255.0)))
            .collect(),
        labels: labels[..take].to_vec(),
        rows,
        cols,
    })
}

/// Encodes raw pixels and labels as IDX image and label files.
pub fn idx_bytes(pixels: &[Vec<u8>], labels: &[u8], rows: usize, cols: usize) -> Result<(Vec<u8>, Vec<u8>)> {
    if pixels.len() != labels.len() {
        return Err(Error::Idx(format!("{} images but {} labels", pixels.len(), labels.len())));
    }
    let mut img = Vec::with_capacity(16 + pixels.len() * rows * cols);
    for v in [IMAGE_MAGIC, pixels.len() as u32, rows as u32, cols as u32] {
        img.extend_from_slice(&v.to_be_bytes());
    }
    for p in pixels {
        if p.len() != rows * cols {
            return Err(Error::dim("image pixels", rows * cols, p.len()));
        }
        img.extend_from_slice(p);
    }
    let mut lab = Vec::with_capacity(8 + labels.len());
    lab.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    lab.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    lab.extend_from_slice(labels);
    Ok((img, lab))
}

pub fn write_idx(
    pixels: &[Vec<u8>],
    labels: &[u8],
    rows: usize,
    cols: usize,
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
) -> Result<()> {
    let (img, lab) = idx_bytes(pixels, labels, rows, cols)?;
    fs::write(images_path, img)?;
    fs::write(labels_path, lab)?;
    Ok(())
}

/// Seeded digit-like images: a few random strokes on a dark background.
/// Returns raw pixels and labels.
pub fn synthetic_digits(count: usize, rows: usize, cols: usize, seed: u64) -> (Vec<Vec<u8>>, Vec<u8>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut images = Vec::with_capacity(count);
    let mut labels = Vec::with_capacity(count);
    for _ in 0..count {
        let mut img = vec![0u8; rows * cols];
        let strokes = rng.random_range(2..5);
        for _ in 0..strokes {
            let (mut r, mut c) = (rng.random_range(4..rows.max(5) - 4) as f64, rng.random_range(4..cols.max(5) - 4) as f64);
            let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let len = rng.random_range(5..15);
            for _ in 0..len {
                let (ri, ci) = (r.round() as isize, c.round() as isize);
                for (dr, dc) in [(0, 0), (0, 1), (1, 0)] {
                    let (rr, cc) = (ri + dr, ci + dc);
                    if rr >= 0 && cc >= 0 && (rr as usize) < rows && (cc as usize) < cols {
                        let px = &mut img[rr as usize * cols + cc as usize];
                        *px = (*px).max(rng.random_range(128..=255));
                    }
                }
                r += angle.sin();
                c += angle.cos();
            }
        }
        images.push(img);
        labels.push(rng.random_range(0..10));
    }
    (images, labels)
}

/// Seeded weights drawn uniformly from `ranges[l]` for layer `l + 1`.
pub fn synthetic_weights(widths: &[usize], ranges: &[(f64, f64)], activation: Activation, seed: u64) -> Result<AnnSpec> {
    if widths.len() < 2 || ranges.len() != widths.len() - 1 {
        return Err(Error::InvalidParameter(format!(
            "{} widths need {} weight ranges, got {}",
            widths.len(),
            widths.len().saturating_sub(1),
            ranges.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights = widths
        .windows(2)
        .zip(ranges)
        .map(|(w, &(lo, hi))| DMatrix::from_fn(w[1], w[0], |_, _| rng.random_range(lo..hi)))
        .collect();
    AnnSpec::new(weights, activation)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RealizabilityViolation {
    pub layer: usize,
    pub row: usize,
    pub col: usize,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RealizabilityReport {
    pub mode: Mode,
    pub checked: usize,
    pub violators: Vec<RealizabilityViolation>,
}

impl RealizabilityReport {
    pub fn all_realizable(&self) -> bool {
        self.violators.is_empty()
    }
}

/// Lists weights that cannot be programmed: single mode needs
/// `W_min < w < W_max`, differential mode accepts pair differences and signed
/// single memristors.
pub fn weights_realizability(spec: &AnnSpec, device: &DeviceModel, mode: Mode) -> RealizabilityReport {
    let mut violators = Vec::new();
    let mut checked = 0;
    for (l, m) in spec.weights.iter().enumerate() {
        for k in 0..m.nrows() {
            for j in 0..m.ncols() {
                let w = m[(k, j)];
                checked += 1;
                let ok = match mode {
                    Mode::Single => device.is_realizable(w),
                    Mode::Differential => is_weight_realizable(w, device),
                };
                if !ok {
                    violators.push(RealizabilityViolation {
                        layer: l + 1,
                        row: k,
                        col: j,
                        value: w,
                    });
                }
            }
        }
    }
    RealizabilityReport {
        mode,
        checked,
        violators,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const ACADEMIC: &str = r#"{"widths":[2,3,2],"layers":[[[0.5,3.5],[2.5,2.5],[3.5,0.5]],[[0.5,1.5,3.5],[3.5,1.0,0.5]]]}"#;

    #[test]
    fn academic_weights_parse() {
        let spec = parse_weights(ACADEMIC, Activation::tanh()).unwrap();
        assert_eq!(spec.weights[0], DMatrix::from_row_slice(3, 2, &[1.0, 7.0, 5.0, 5.0, 7.0, 1.0]) * 0.5);
        assert_eq!(spec.weights[1], DMatrix::from_row_slice(2, 3, &[1.0, 3.0, 7.0, 7.0, 2.0, 1.0]) * 0.5);
        let again = parse_weights(&weights_to_json(&spec).unwrap(), Activation::tanh()).unwrap();
        assert_eq!(again.weights, spec.weights);
    }

    #[test]
    fn malformed_weights_are_rejected() {
        let empty = r#"{"widths":[2,0],"layers":[[]]}"#;
        assert!(parse_weights(empty, Activation::tanh()).is_err());
        let ragged = r#"{"widths":[2,1],"layers":[[[1.0]]]}"#;
        assert!(matches!(parse_weights(ragged, Activation::tanh()), Err(Error::Dimension { .. })));
        let count = r#"{"widths":[2,1,1],"layers":[[[1.0,2.0]]]}"#;
        assert!(parse_weights(count, Activation::tanh()).is_err());
        assert!(matches!(parse_weights("{", Activation::tanh()), Err(Error::Json(_))));
    }

    #[test]
    fn identity_network_is_the_activation() {
        let spec = parse_weights(r#"{"widths":[1,1],"layers":[[[1.0]]]}"#, Activation::tanh()).unwrap();
        let y = spec.forward(&DVector::from_vec(vec![0.3])).unwrap();
        assert_eq!(y[0], 0.3f64.tanh());
    }

    #[test]
    fn idx_round_trip() {
        let (pixels, labels) = synthetic_digits(5, 28, 28, 7);
        let (img, lab) = idx_bytes(&pixels, &labels, 28, 28).unwrap();
        let (count, rows, cols, raw) = parse_idx_images(&img).unwrap();
        assert_eq!((count, rows, cols), (5, 28, 28));
        assert_eq!(raw, pixels.concat().as_slice());
        assert_eq!(parse_idx_labels(&lab).unwrap(), labels.as_slice());
        let d = idx_from_bytes(&img, &lab, Some(3)).unwrap();
        assert_eq!(d.len(), 3);
        assert_eq!(d.labels, labels[..3]);
        assert!(d.images.iter().all(|v| v.iter().all(|&p| (0.0..=1.0).contains(&p))));
        assert_eq!(d.images[1][100], pixels[1][100] as f64 / 255.0);
        assert!(idx_from_bytes(&img, &lab, Some(0)).unwrap().is_empty());
        let raw_scale = d.with_pixel_scale(1.0);
        assert_eq!(raw_scale.images[1][100], pixels[1][100] as f64);
    }

    #[test]
    fn idx_errors() {
        let (pixels, labels) = synthetic_digits(2, 4 + 5, 9, 1);
        let (mut img, lab) = idx_bytes(&pixels, &labels, 9, 9).unwrap();
        assert!(idx_from_bytes(&img[..40], &lab, None).is_err());
        assert!(idx_from_bytes(&img, &lab[..9], None).is_err());
        let (_, short_lab) = idx_bytes(&pixels[..1], &labels[..1], 9, 9).unwrap();
        assert!(matches!(idx_from_bytes(&img, &short_lab, None), Err(Error::Idx(_))));
        img[3] = 0x02;
        assert!(matches!(idx_from_bytes(&img, &lab, None), Err(Error::Idx(m)) if m.contains("magic")));
    }

    #[test]
    fn scaling_preserves_linear_argmax() {
        let (pixels, _) = synthetic_digits(4, 28, 28, 3);
        let w = synthetic_weights(&[784, 10], &[(-1.0, 1.0)], Activation::tanh(), 9).unwrap();
        for p in pixels {
            let raw = DVector::from_iterator(784, p.iter().map(|&x| x as f64));
            let scaled = &raw / 255.0;
            assert_eq!((&w.weights[0] * raw).argmax().0, (&w.weights[0] * scaled).argmax().0);
        }
    }

    #[test]
    fn synthetic_fixtures_are_seeded() {
        assert_eq!(synthetic_digits(3, 28, 28, 5), synthetic_digits(3, 28, 28, 5));
        assert_ne!(synthetic_digits(3, 28, 28, 5), synthetic_digits(3, 28, 28, 6));
        let a = synthetic_weights(&[3, 2], &[(0.5, 3.5)], Activation::tanh(), 1).unwrap();
        let b = synthetic_weights(&[3, 2], &[(0.5, 3.5)], Activation::tanh(), 1).unwrap();
        assert_eq!(a.weights, b.weights);
        assert!(a.weights[0].iter().all(|&w| (0.5..3.5).contains(&w)));
    }

    #[test]
    fn realizability() {
        let d = DeviceModel::arctan();
        let spec = parse_weights(ACADEMIC, Activation::tanh()).unwrap();
        assert!(weights_realizability(&spec, &d, Mode::Single).all_realizable());
        let big = AnnSpec::new(vec![DMatrix::from_row_slice(1, 2, &[4.0, 2.0])], Activation::tanh()).unwrap();
        let r = weights_realizability(&big, &d, Mode::Single);
        assert_eq!(r.violators.len(), 1);
        assert_eq!((r.violators[0].col, r.violators[0].value), (0, 4.0));
        let neg = AnnSpec::new(vec![DMatrix::from_row_slice(1, 1, &[-1.86])], Activation::tanh()).unwrap();
        assert!(weights_realizability(&neg, &d, Mode::Differential).all_realizable());
        assert!(!weights_realizability(&neg, &d, Mode::Single).all_realizable());
    }
}
