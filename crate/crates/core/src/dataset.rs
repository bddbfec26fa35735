//! IDX-format image/label files and a deterministic synthetic digit corpus
//! for environments without the real files.

use std::fs;
use std::io::Read;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Labeled grayscale images with pixels normalized to [0, 1].
#[derive(Debug, Clone)]
pub struct Dataset {
    /// Row-major 28x28 images.
    pub images: Vec<Vec<f64>>,
    pub labels: Vec<u8>,
    pub rows: usize,
    pub cols: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Split off `test_count` samples (deterministic shuffle by `seed`).
    pub fn split(&self, test_count: usize, seed: u64) -> (Dataset, Dataset) {
        let mut order: Vec<usize> = (0..self.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in (1..order.len()).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }
        let test_count = test_count.min(self.len());
        let pick = |idx: &[usize]| Dataset {
            images: idx.iter().map(|&i| self.images[i].clone()).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            rows: self.rows,
            cols: self.cols,
        };
        let (test_idx, train_idx) = order.split_at(test_count);
        (pick(train_idx), pick(test_idx))
    }

    /// Keep the first `n` samples.
    pub fn take(&self, n: usize) -> Dataset {
        let n = n.min(self.len());
        Dataset {
            images: self.images[..n].to_vec(),
            labels: self.labels[..n].to_vec(),
            rows: self.rows,
            cols: self.cols,
        }
    }
}

fn read_u32_be(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Format("IDX file truncated".into()))
}

/// Load an IDX image file (magic 0x00000803), normalizing pixels to [0,1].
pub fn load_idx_images(path: &Path) -> Result<(Vec<Vec<f64>>, usize, usize)> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    let magic = read_u32_be(&bytes, 0)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Format(format!(
            "{}: bad image magic {magic:#010x}",
            path.display()
        )));
    }
    let count = read_u32_be(&bytes, 4)? as usize;
    let rows = read_u32_be(&bytes, 8)? as usize;
    let cols = read_u32_be(&bytes, 12)? as usize;
    let need = 16 + count * rows * cols;
    if bytes.len() < need {
        return Err(Error::Format(format!(
            "{}: expected {need} bytes, found {}",
            path.display(),
            bytes.len()
        )));
    }
    let mut images = Vec::with_capacity(count);
    for k in 0..count {
        let start = 16 + k * rows * cols;
        images.push(
            bytes[start..start + rows * cols]
                .iter()
                .map(|&b| b as f64 / 255.0)
                .collect(),
        );
    }
    Ok((images, rows, cols))
}

/// Load an IDX label file (magic 0x00000801).
pub fn load_idx_labels(path: &Path) -> Result<Vec<u8>> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    let magic = read_u32_be(&bytes, 0)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Format(format!(
            "{}: bad label magic {magic:#010x}",
            path.display()
        )));
    }
    let count = read_u32_be(&bytes, 4)? as usize;
    if bytes.len() < 8 + count {
        return Err(Error::Format(format!("{}: label file truncated", path.display())));
    }
    Ok(bytes[8..8 + count].to_vec())
}

/// Load a dataset from an images/labels IDX file pair.
pub fn load_pair(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let (images, rows, cols) = load_idx_images(images_path)?;
    let labels = load_idx_labels(labels_path)?;
    if images.len() != labels.len() {
        return Err(Error::Format(format!(
            "{} images but {} labels",
            images.len(),
            labels.len()
        )));
    }
    Ok(Dataset { images, labels, rows, cols })
}

/// Load `train-images*`/`train-labels*` IDX files from a directory, accepting
/// both the `-idx3-ubyte` and `.idx3-ubyte` naming conventions.
pub fn load_train_dir(dir: &Path) -> Result<Dataset> {
    let candidates = [
        ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
        ("train-images.idx3-ubyte", "train-labels.idx1-ubyte"),
    ];
    for (img, lab) in candidates {
        let ip = dir.join(img);
        let lp = dir.join(lab);
        if ip.exists() && lp.exists() {
            return load_pair(&ip, &lp);
        }
    }
    Err(Error::Format(format!(
        "no train-images/train-labels IDX pair under {}",
        dir.display()
    )))
}

/// Serialize images (pixels in [0,1]) to IDX bytes.
pub fn idx_image_bytes(images: &[Vec<f64>], rows: usize, cols: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.len() * rows * cols);
    out.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    out.extend_from_slice(&(images.len() as u32).to_be_bytes());
    out.extend_from_slice(&(rows as u32).to_be_bytes());
    out.extend_from_slice(&(cols as u32).to_be_bytes());
    for img in images {
        out.extend(img.iter().map(|&p| (p.clamp(0.0, 1.0) * 255.0).round() as u8));
    }
    out
}

/// Serialize labels to IDX bytes.
pub fn idx_label_bytes(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

// ---------------------------------------------------------------------------
// Synthetic digits
// ---------------------------------------------------------------------------

type Stroke = Vec<(f64, f64)>;

/// Digit skeletons as polylines in a unit box, y growing downward.
fn digit_strokes(digit: u8) -> Vec<Stroke> {
    let ellipse = |cx: f64, cy: f64, rx: f64, ry: f64, from: f64, to: f64| -> Stroke {
        let steps = 40;
        (0..=steps)
            .map(|k| {
                let t = from + (to - from) * k as f64 / steps as f64;
                (cx + rx * t.cos(), cy + ry * t.sin())
            })
            .collect()
    };
    use std::f64::consts::PI;
    match digit {
        0 => vec![ellipse(0.5, 0.5, 0.32, 0.42, 0.0, 2.0 * PI)],
        1 => vec![vec![(0.35, 0.25), (0.55, 0.08), (0.55, 0.92)]],
        2 => vec![
            ellipse(0.5, 0.3, 0.3, 0.22, -PI, 0.1),
            vec![(0.78, 0.34), (0.22, 0.9), (0.8, 0.9)],
        ],
        3 => vec![
            ellipse(0.47, 0.3, 0.28, 0.21, -PI * 0.9, PI * 0.5),
            ellipse(0.47, 0.71, 0.3, 0.22, -PI * 0.5, PI * 0.9),
        ],
        4 => vec![
            vec![(0.62, 0.08), (0.2, 0.62), (0.85, 0.62)],
            vec![(0.62, 0.08), (0.62, 0.92)],
        ],
        5 => vec![
            vec![(0.75, 0.1), (0.3, 0.1), (0.27, 0.48)],
            ellipse(0.48, 0.68, 0.3, 0.24, -PI * 0.6, PI * 0.75),
        ],
        6 => vec![
            vec![(0.68, 0.08), (0.35, 0.45)],
            ellipse(0.5, 0.68, 0.27, 0.25, 0.0, 2.0 * PI),
        ],
        7 => vec![vec![(0.2, 0.1), (0.8, 0.1), (0.42, 0.92)]],
        8 => vec![
            ellipse(0.5, 0.3, 0.24, 0.2, 0.0, 2.0 * PI),
            ellipse(0.5, 0.71, 0.29, 0.22, 0.0, 2.0 * PI),
        ],
        9 => vec![
            ellipse(0.5, 0.32, 0.27, 0.25, 0.0, 2.0 * PI),
            vec![(0.72, 0.4), (0.58, 0.92)],
        ],
        _ => unreachable!("digits are 0-9"),
    }
}

fn render_digit(digit: u8, rng: &mut ChaCha8Rng, side: usize) -> Vec<f64> {
    let angle: f64 = rng.gen_range(-0.18..0.18);
    let scale: f64 = rng.gen_range(0.8..1.05);
    let dx: f64 = rng.gen_range(-0.08..0.08);
    let dy: f64 = rng.gen_range(-0.08..0.08);
    let thickness: f64 = rng.gen_range(0.055..0.085);
    let intensity: f64 = rng.gen_range(0.8..1.0);
    let noise: f64 = rng.gen_range(0.0..0.04);

    let (sin_a, cos_a) = angle.sin_cos();
    let transform = |(x, y): (f64, f64)| -> (f64, f64) {
        let (cx, cy) = (x - 0.5, y - 0.5);
        let (rx, ry) = (cx * cos_a - cy * sin_a, cx * sin_a + cy * cos_a);
        (rx * scale + 0.5 + dx, ry * scale + 0.5 + dy)
    };

    // Densely sample every stroke, then stamp soft discs.
    let mut points = Vec::new();
    for stroke in digit_strokes(digit) {
        let stroke: Vec<(f64, f64)> = stroke.into_iter().map(transform).collect();
        for seg in stroke.windows(2) {
            let (x0, y0) = seg[0];
            let (x1, y1) = seg[1];
            let len = ((x1 - x0).powi(2) + (y1 - y0).powi(2)).sqrt();
            let steps = (len / 0.01).ceil().max(1.0) as usize;
            for k in 0..=steps {
                let t = k as f64 / steps as f64;
                points.push((x0 + (x1 - x0) * t, y0 + (y1 - y0) * t));
            }
        }
    }

    // Stamp a soft-edged disc at every curve sample.
    let mut img = vec![0.0f64; side * side];
    let px = 1.0 / side as f64;
    let reach = 1.6 * thickness;
    for &(sx, sy) in &points {
        let r0 = (((sy - reach) / px).floor().max(0.0)) as usize;
        let r1 = (((sy + reach) / px).ceil().min(side as f64 - 1.0)) as usize;
        let c0 = (((sx - reach) / px).floor().max(0.0)) as usize;
        let c1 = (((sx + reach) / px).ceil().min(side as f64 - 1.0)) as usize;
        for r in r0..=r1 {
            for c in c0..=c1 {
                let y = (r as f64 + 0.5) * px;
                let x = (c as f64 + 0.5) * px;
                let d = ((x - sx).powi(2) + (y - sy).powi(2)).sqrt();
                let v = if d <= thickness {
                    1.0
                } else {
                    (1.0 - (d - thickness) / (0.6 * thickness)).max(0.0)
                };
                let cell = &mut img[r * side + c];
                *cell = cell.max(v * intensity);
            }
        }
    }
    if noise > 0.0 {
        for p in img.iter_mut() {
            *p = (*p + rng.gen_range(-noise..noise)).clamp(0.0, 1.0);
        }
    }
    img
}

/// Deterministic corpus of stroke-rendered digits, balanced across classes.
pub fn synthetic_digits(count: usize, seed: u64) -> Dataset {
    let side = 28;
    let mut images = Vec::with_capacity(count);
    let mut labels = Vec::with_capacity(count);
    for k in 0..count {
        let digit = (k % 10) as u8;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (k as u64).wrapping_mul(0x9e37_79b9));
        images.push(render_digit(digit, &mut rng, side));
        labels.push(digit);
    }
    Dataset { images, labels, rows: side, cols: side }
}
