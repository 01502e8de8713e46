//! Image classification datasets: IDX files on disk and a synthetic digit
//! generator that needs no downloads.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

/// Smallest canvas [`synth_digits`] can draw on.
pub const MIN_SYNTH_SIZE: usize = 12;
pub const DEFAULT_SYNTH_SIZE: usize = 20;
/// Standard deviation of the Gaussian pixel noise in [`synth_digits`].
pub const SYNTH_NOISE_SD: f64 = 0.22;

/// Images `[N, 1, H, W]` with pixels in `[0, 1]`, and labels in `[0, num_classes)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    images: Tensor,
    labels: Vec<usize>,
    num_classes: usize,
}

impl Dataset {
    pub fn new(images: Tensor, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        let n = match *images.shape() {
            [n, 1, _, _] => n,
            _ => {
                return Err(Error::InvalidShape {
                    shape: images.shape().to_vec(),
                    reason: "dataset images must be [N, 1, H, W]".into(),
                })
            }
        };
        if n != labels.len() {
            return Err(Error::CountMismatch {
                images: n,
                labels: labels.len(),
            });
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::LabelOutOfRange {
                label,
                classes: num_classes,
            });
        }
        if images.data().iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Config("pixel values must lie in [0, 1]".into()));
        }
        Ok(Self {
            images,
            labels,
            num_classes,
        })
    }

    pub fn images(&self) -> &Tensor {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// `[height, width, channels]`, the layout network specs use.
    pub fn input_shape(&self) -> [usize; 3] {
        let s = self.images.shape();
        [s[2], s[3], s[1]]
    }

    fn pixels_per_image(&self) -> usize {
        let s = self.images.shape();
        s[1] * s[2] * s[3]
    }

    /// Images and labels at `indices`, in that order.
    pub fn gather(&self, indices: &[usize]) -> (Tensor, Vec<usize>) {
        let per = self.pixels_per_image();
        let mut data = Vec::with_capacity(indices.len() * per);
        for &i in indices {
            data.extend_from_slice(&self.images.data()[i * per..(i + 1) * per]);
        }
        let mut shape = self.images.shape().to_vec();
        shape[0] = indices.len();
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        (Tensor::from_parts(shape, data), labels)
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let (images, labels) = self.gather(indices);
        Dataset {
            images,
            labels,
            num_classes: self.num_classes,
        }
    }

    /// Number of samples per class.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }
}

fn read_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_be_bytes(bytes[at..at + 4].try_into().expect("4 bytes"))
}

fn header(bytes: &[u8], file: &str, magic: u32, dims: usize) -> Result<Vec<usize>> {
    let head = 4 * (dims + 1);
    if bytes.len() < 4 {
        return Err(Error::Truncated {
            file: file.into(),
            expected: head,
            actual: bytes.len(),
        });
    }
    let found = read_u32(bytes, 0);
    if found != magic {
        return Err(Error::BadMagic {
            file: file.into(),
            expected: magic,
            found,
        });
    }
    if bytes.len() < head {
        return Err(Error::Truncated {
            file: file.into(),
            expected: head,
            actual: bytes.len(),
        });
    }
    let sizes: Vec<usize> = (0..dims).map(|d| read_u32(bytes, 4 + 4 * d) as usize).collect();
    let expected = head + sizes.iter().product::<usize>();
    if bytes.len() < expected {
        return Err(Error::Truncated {
            file: file.into(),
            expected,
            actual: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(Error::TrailingBytes {
            file: file.into(),
            expected,
            actual: bytes.len(),
        });
    }
    Ok(sizes)
}

/// Parses an IDX image file (`0x00000803`, count, rows, cols, pixels).
/// Returns `[N, 1, rows, cols]` with pixels divided by 255.
pub fn parse_idx_images(bytes: &[u8], file: &str) -> Result<Tensor> {
    let dims = header(bytes, file, IMAGE_MAGIC, 3)?;
    let pixels = bytes[16..].iter().map(|&b| f64::from(b) / 255.0).collect();
    Tensor::from_vec(&[dims[0], 1, dims[1], dims[2]], pixels)
}

/// Parses an IDX label file (`0x00000801`, count, labels).
pub fn parse_idx_labels(bytes: &[u8], file: &str) -> Result<Vec<u8>> {
    header(bytes, file, LABEL_MAGIC, 1)?;
    Ok(bytes[8..].to_vec())
}

/// Loads an image/label IDX pair. The class count is one more than the
/// largest label.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let img_bytes = fs::read(images_path).map_err(|e| Error::io(images_path, e))?;
    let lbl_bytes = fs::read(labels_path).map_err(|e| Error::io(labels_path, e))?;
    let images = parse_idx_images(&img_bytes, &images_path.display().to_string())?;
    let labels = parse_idx_labels(&lbl_bytes, &labels_path.display().to_string())?;
    let labels: Vec<usize> = labels.into_iter().map(usize::from).collect();
    let classes = labels.iter().max().map_or(1, |&m| m + 1);
    Dataset::new(images, labels, classes)
}

/// IDX image bytes for `ds`. Pixels are rounded to the nearest 1/255.
pub fn encode_idx_images(ds: &Dataset) -> Vec<u8> {
    let s = ds.images.shape();
    let mut out = Vec::with_capacity(16 + ds.images.len());
    for v in [IMAGE_MAGIC, s[0] as u32, s[2] as u32, s[3] as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend(ds.images.data().iter().map(|&p| (p * 255.0).round().clamp(0.0, 255.0) as u8));
    out
}

/// IDX label bytes for `ds`. Fails when a label does not fit in a byte.
pub fn encode_idx_labels(ds: &Dataset) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(8 + ds.len());
    out.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    out.extend_from_slice(&(ds.len() as u32).to_be_bytes());
    for &l in &ds.labels {
        out.push(u8::try_from(l).map_err(|_| Error::LabelOutOfRange { label: l, classes: 256 })?);
    }
    Ok(out)
}

pub fn write_idx(ds: &Dataset, images_path: &Path, labels_path: &Path) -> Result<()> {
    fs::write(images_path, encode_idx_images(ds)).map_err(|e| Error::io(images_path, e))?;
    fs::write(labels_path, encode_idx_labels(ds)?).map_err(|e| Error::io(labels_path, e))
}

// Seven-segment layout: a top, b upper right, c lower right, d bottom,
// e lower left, f upper left, g middle. Bits are a..g from bit 0.
const GLYPHS: [u8; 16] = [
    0b0111111, // 0
    0b0000110, // 1
    0b1011011, // 2
    0b1001111, // 3
    0b1100110, // 4
    0b1101101, // 5
    0b1111101, // 6
    0b0000111, // 7
    0b1111111, // 8
    0b1101111, // 9
    0b1110111, // A
    0b1111100, // b
    0b0111001, // C
    0b1011110, // d
    0b1111001, // E
    0b1110001, // F
];

/// Segment endpoints in a unit box, x to the right and y downward.
const SEGMENTS: [[(f64, f64); 2]; 7] = [
    [(0.0, 0.0), (1.0, 0.0)],
    [(1.0, 0.0), (1.0, 0.5)],
    [(1.0, 0.5), (1.0, 1.0)],
    [(0.0, 1.0), (1.0, 1.0)],
    [(0.0, 0.5), (0.0, 1.0)],
    [(0.0, 0.0), (0.0, 0.5)],
    [(0.0, 0.5), (1.0, 0.5)],
];

pub const MAX_SYNTH_CLASSES: usize = GLYPHS.len();

fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0);
    let (cx, cy) = (a.0 + t * dx, a.1 + t * dy);
    ((p.0 - cx).powi(2) + (p.1 - cy).powi(2)).sqrt()
}

fn render(class: usize, size: usize, rng: &mut ChaCha8Rng, noise: &Normal<f64>, out: &mut [f64]) {
    let s = size as f64;
    let height = (s - 6.0) * rng.random_range(0.85..1.0);
    let width = height * rng.random_range(0.45..0.65);
    let slant = rng.random_range(-0.2..0.2);
    let thickness = (s / 10.0) * rng.random_range(0.8..1.3);
    let cx = s / 2.0 + rng.random_range(-2.0..=2.0);
    let cy = s / 2.0 + rng.random_range(-2.0..=2.0);
    let mut place = |(u, v): (f64, f64)| {
        let y = cy + (v - 0.5) * height + rng.random_range(-0.4..0.4);
        let x = cx + (u - 0.5) * width - slant * (y - cy) + rng.random_range(-0.4..0.4);
        (x, y)
    };
    let strokes: Vec<((f64, f64), (f64, f64))> = SEGMENTS
        .iter()
        .enumerate()
        .filter(|(k, _)| GLYPHS[class] >> k & 1 == 1)
        .map(|(_, [a, b])| (place(*a), place(*b)))
        .collect();
    for (i, px) in out.iter_mut().enumerate() {
        let p = ((i % size) as f64 + 0.5, (i / size) as f64 + 0.5);
        let d = strokes
            .iter()
            .map(|&(a, b)| segment_distance(p, a, b))
            .fold(f64::INFINITY, f64::min);
        let ink = (thickness / 2.0 + 0.5 - d).clamp(0.0, 1.0);
        *px = (ink + noise.sample(rng)).clamp(0.0, 1.0);
    }
}

/// Seven-segment style glyphs, one class per glyph, with random shift of up to
/// two pixels, size, slant, stroke jitter and per-pixel Gaussian noise.
/// Samples are ordered by class, `n_per_class` each.
pub fn synth_digits(n_per_class: usize, num_classes: usize, size: usize, seed: u64) -> Result<Dataset> {
    synth_digits_with_noise(n_per_class, num_classes, size, SYNTH_NOISE_SD, seed)
}

/// [`synth_digits`] with a chosen per-pixel noise deviation.
pub fn synth_digits_with_noise(n_per_class: usize, num_classes: usize, size: usize, noise_sd: f64, seed: u64) -> Result<Dataset> {
    if size < MIN_SYNTH_SIZE {
        return Err(Error::Config(format!("synthetic images need size >= {MIN_SYNTH_SIZE}, got {size}")));
    }
    if !(2..=MAX_SYNTH_CLASSES).contains(&num_classes) || n_per_class == 0 {
        return Err(Error::Config(format!(
            "synthetic data supports 2..={MAX_SYNTH_CLASSES} classes and at least one sample each"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, noise_sd).map_err(|e| Error::Config(format!("noise deviation {noise_sd}: {e}")))?;
    let n = n_per_class * num_classes;
    let per = size * size;
    let mut data = vec![0.0; n * per];
    let mut labels = Vec::with_capacity(n);
    for (i, img) in data.chunks_mut(per).enumerate() {
        let class = i / n_per_class;
        render(class, size, &mut rng, &noise, img);
        labels.push(class);
    }
    Dataset::new(Tensor::from_vec(&[n, 1, size, size], data)?, labels, num_classes)
}

/// Stratified split: each class contributes `round(count · fraction)` samples
/// to the first part. Both parts keep class order, shuffled within class.
pub fn split(ds: &Dataset, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Config(format!("train fraction {train_fraction} must lie in (0, 1)")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for class in 0..ds.num_classes {
        let mut idx: Vec<usize> = (0..ds.len()).filter(|&i| ds.labels[i] == class).collect();
        idx.shuffle(&mut rng);
        let k = (idx.len() as f64 * train_fraction).round() as usize;
        train.extend_from_slice(&idx[..k]);
        test.extend_from_slice(&idx[k..]);
    }
    if train.is_empty() || test.is_empty() {
        return Err(Error::Config(format!(
            "train fraction {train_fraction} leaves one side of a {}-sample split empty",
            ds.len()
        )));
    }
    Ok((ds.subset(&train), ds.subset(&test)))
}

/// Shuffled mini-batches covering `ds` once. A final batch of a single sample
/// is dropped, since batch normalization cannot train on it.
pub fn batches(ds: &Dataset, batch_size: usize, seed: u64) -> Result<impl Iterator<Item = (Tensor, Vec<usize>)> + '_> {
    if batch_size < 2 {
        return Err(Error::Config(format!("batch size {batch_size} is below 2")));
    }
    let mut order: Vec<usize> = (0..ds.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let chunks: Vec<Vec<usize>> = order
        .chunks(batch_size)
        .filter(|c| c.len() >= 2)
        .map(<[usize]>::to_vec)
        .collect();
    Ok(chunks.into_iter().map(move |c| ds.gather(&c)))
}
