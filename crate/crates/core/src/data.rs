//! In-memory labelled image sets and a procedural expression-like corpus.

use alloc::format;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(Split::Train),
            "valid" => Some(Split::Valid),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

/// One image in `[0, 1]` with its class.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: Tensor<f32>,
    pub label: usize,
    pub split: Split,
}

/// Samples sharing one image shape, with labels below `num_classes`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub num_classes: usize,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>, num_classes: usize) -> Result<Self> {
        if let Some(first) = samples.first() {
            let shape = first.image.shape();
            for (i, s) in samples.iter().enumerate() {
                if s.image.shape() != shape {
                    return Err(Error::shape("dataset", shape, s.image.shape()));
                }
                if s.label >= num_classes {
                    return Err(Error::Contract(format!(
                        "sample {i} has label {} but there are {num_classes} classes",
                        s.label
                    )));
                }
            }
        }
        Ok(Dataset {
            samples,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn image_shape(&self) -> Option<&[usize]> {
        self.samples.first().map(|s| s.image.shape())
    }

    /// Samples of one split, keeping order.
    pub fn split(&self, split: Split) -> Dataset {
        Dataset {
            samples: self.samples.iter().filter(|s| s.split == split).cloned().collect(),
            num_classes: self.num_classes,
        }
    }

    pub fn with_split(mut self, split: Split) -> Dataset {
        for s in &mut self.samples {
            s.split = split;
        }
        self
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = alloc::vec![0; self.num_classes];
        for s in &self.samples {
            counts[s.label] += 1;
        }
        counts
    }
}

/// Geometry of one class in the synthetic corpus.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Signature {
    /// Mouth bend: positive is a smile, negative a frown.
    curvature: f64,
    /// Eyebrow tilt, in units of the face size.
    brow_tilt: f64,
    /// Column of the cheek blob as a fraction of the width.
    blob_x: f64,
    /// Mouth opening.
    mouth_open: f64,
}

fn signature(class: usize, classes: usize) -> Signature {
    let t = if classes > 1 {
        class as f64 / (classes - 1) as f64
    } else {
        0.5
    };
    Signature {
        curvature: 1.0 - 2.0 * t,
        brow_tilt: if class % 2 == 0 { 0.12 } else { -0.12 },
        blob_x: 0.2 + 0.6 * libm::fmod(t * 2.0 + 0.3 * (class % 3) as f64, 1.0),
        mouth_open: if class % 3 == 2 { 0.08 } else { 0.0 },
    }
}

fn stroke(d: f64, width: f64) -> f64 {
    libm::exp(-(d * d) / (2.0 * width * width))
}

/// Renders a face-like template at `size x size`: head outline, two eyes,
/// tilted brows, a bent mouth and a cheek blob, all shifted by `(dy, dx)`.
fn render(sig: &Signature, size: usize, dy: f64, dx: f64, ink: f64) -> Vec<f64> {
    let s = size as f64;
    let width = 0.045 * s;
    let mut img = alloc::vec![0.0; size * size];
    for y in 0..size {
        for x in 0..size {
            // normalized coordinates in [0, 1] after the jitter shift
            let u = (x as f64 + 0.5 - dx) / s;
            let v = (y as f64 + 0.5 - dy) / s;
            let mut p: f64 = 0.0;
            // head outline
            let r = libm::sqrt((u - 0.5) * (u - 0.5) + (v - 0.5) * (v - 0.5) * 0.8);
            p = p.max(0.5 * stroke((r - 0.44) * s, width * 1.2));
            // eyes
            for ex in [0.33, 0.67] {
                let d = libm::sqrt((u - ex) * (u - ex) + (v - 0.38) * (v - 0.38)) * s;
                p = p.max(stroke(d, width * 1.4));
            }
            // brows: short tilted segments above the eyes, mirrored
            for (ex, side) in [(0.33, -1.0), (0.67, 1.0)] {
                if (u - ex).abs() < 0.12 {
                    let yb = 0.24 + side * sig.brow_tilt * (u - ex);
                    p = p.max(0.9 * stroke((v - yb) * s, width));
                }
            }
            // mouth: parabola v = 0.7 - c * (u - 0.5)^2 scaled, plus an
            // optional lower lip for the open variant
            if (u - 0.5).abs() < 0.22 {
                let du = (u - 0.5) / 0.22;
                let ym = 0.72 - 0.1 * sig.curvature * (1.0 - du * du);
                p = p.max(stroke((v - ym) * s, width));
                if sig.mouth_open > 0.0 {
                    let yl = ym + sig.mouth_open * (1.0 - du * du);
                    p = p.max(stroke((v - yl) * s, width));
                }
            }
            // cheek blob
            let d = libm::sqrt((u - sig.blob_x) * (u - sig.blob_x) + (v - 0.58) * (v - 0.58)) * s;
            p = p.max(0.8 * stroke(d, width * 1.6));
            img[y * size + x] = p * ink;
        }
    }
    img
}

/// Balanced procedural dataset of `classes * per_class` grey
/// `[1 x size x size]` images, all tagged [`Split::Train`].
///
/// Each class fixes the mouth bend, brow tilt, mouth opening and blob
/// position of a face template; every sample adds a random sub-pixel
/// shift, ink level and Gaussian pixel noise. Samples are interleaved by
/// class. The same seed always yields the same bytes.
pub fn synth_dataset(classes: usize, per_class: usize, size: usize, seed: u64) -> Result<Dataset> {
    if classes < 2 {
        return Err(Error::Config("synthetic dataset needs at least 2 classes".into()));
    }
    if size < 4 {
        return Err(Error::Config("synthetic images need at least 4 pixels per side".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shift = size as f64 * 0.06;
    let mut samples = Vec::with_capacity(classes * per_class);
    for _ in 0..per_class {
        for class in 0..classes {
            let sig = signature(class, classes);
            let dy = rng.random_range(-shift..=shift);
            let dx = rng.random_range(-shift..=shift);
            let ink = rng.random_range(0.7..=1.0);
            let base = render(&sig, size, dy, dx, ink);
            let data: Vec<f32> = base
                .iter()
                .map(|&p| (p + 0.1 + 0.05 * crate::sample::standard_normal(&mut rng)).clamp(0.0, 1.0) as f32)
                .collect();
            samples.push(Sample {
                image: Tensor::new(&[1, size, size], data)?,
                label: class,
                split: Split::Train,
            });
        }
    }
    Dataset::new(samples, classes)
}
