//! Image preprocessing, pixel-domain augmentation, Mixup and Cutout.
//!
//! Images are `[C x H x W]` tensors. Augmentations act on the `[0, 1]`
//! pixel domain before normalization; Cutout acts after it.

use alloc::vec::Vec;

use rand::Rng;

use crate::config::{AugmentConfig, NormConfig};
use crate::error::{Error, Result};
use crate::scalar::Element;
use crate::tensor::Tensor;

fn dims3<T: Element>(image: &Tensor<T>, op: &'static str) -> Result<(usize, usize, usize)> {
    match image.shape() {
        &[c, h, w] => Ok((c, h, w)),
        s => Err(Error::shape(op, s, &[0, 0, 0])),
    }
}

/// Replicates a single channel to three; three-channel input is returned
/// unchanged.
pub fn to_rgb<T: Element>(image: &Tensor<T>) -> Result<Tensor<T>> {
    let (c, h, w) = dims3(image, "to_rgb")?;
    match c {
        3 => Ok(image.clone()),
        1 => {
            let mut data = Vec::with_capacity(3 * h * w);
            for _ in 0..3 {
                data.extend_from_slice(image.data());
            }
            Tensor::new(&[3, h, w], data)
        }
        _ => Err(Error::shape("to_rgb", image.shape(), &[3, h, w])),
    }
}

/// Bilinear resize with half-pixel centers: output pixel `i` samples the
/// input at `(i + 0.5) * in / out - 0.5`, clamped to the border.
pub fn resize_bilinear<T: Element>(image: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    let (c, h, w) = dims3(image, "resize_bilinear")?;
    if out_h == 0 || out_w == 0 {
        return Err(Error::Contract("resize to an empty image".into()));
    }
    if (h, w) == (out_h, out_w) {
        return Ok(image.clone());
    }
    let taps = |n_in: usize, n_out: usize| -> Vec<(usize, usize, f64)> {
        (0..n_out)
            .map(|i| {
                let src = ((i as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5)
                    .clamp(0.0, (n_in - 1) as f64);
                let lo = libm::floor(src) as usize;
                let hi = (lo + 1).min(n_in - 1);
                (lo, hi, src - lo as f64)
            })
            .collect()
    };
    let ys = taps(h, out_h);
    let xs = taps(w, out_w);
    let src = image.data();
    let mut out = Vec::with_capacity(c * out_h * out_w);
    for k in 0..c {
        let plane = &src[k * h * w..(k + 1) * h * w];
        for &(y0, y1, fy) in &ys {
            for &(x0, x1, fx) in &xs {
                let p = |y: usize, x: usize| plane[y * w + x].as_f64();
                let top = p(y0, x0) * (1.0 - fx) + p(y0, x1) * fx;
                let bottom = p(y1, x0) * (1.0 - fx) + p(y1, x1) * fx;
                out.push(T::from_f64(top * (1.0 - fy) + bottom * fy));
            }
        }
    }
    Tensor::new(&[c, out_h, out_w], out)
}

/// Per-channel `(x - mean) / std` on a three-channel image.
pub fn normalize<T: Element>(image: &Tensor<T>, norm: &NormConfig) -> Result<Tensor<T>> {
    let (c, h, w) = dims3(image, "normalize")?;
    if c != 3 {
        return Err(Error::shape("normalize", image.shape(), &[3, h, w]));
    }
    let mut out = image.clone();
    for (k, plane) in out.data_mut().chunks_mut(h * w).enumerate() {
        let mean = T::from_f64(norm.mean[k]);
        let std = T::from_f64(norm.std[k]);
        for v in plane {
            *v = (*v - mean) / std;
        }
    }
    Ok(out)
}

/// Channel replication, bilinear resize to `target x target`, then
/// normalization.
pub fn preprocess<T: Element>(image: &Tensor<T>, target: usize, norm: &NormConfig) -> Result<Tensor<T>> {
    let (_, h, w) = dims3(image, "preprocess")?;
    if h == 0 || w == 0 || target == 0 {
        return Err(Error::Contract("preprocess of an empty image".into()));
    }
    let rgb = to_rgb(image)?;
    normalize(&resize_bilinear(&rgb, target, target)?, norm)
}

/// Reverses the column order of every row.
pub fn flip_horizontal<T: Element>(image: &Tensor<T>) -> Tensor<T> {
    let w = image.last_dim();
    let mut out = image.clone();
    for row in out.data_mut().chunks_mut(w) {
        row.reverse();
    }
    out
}

fn luminance<T: Element>(image: &Tensor<T>) -> Result<Vec<T>> {
    let (c, h, w) = dims3(image, "grayscale")?;
    let n = h * w;
    let scale = T::from_f64(1.0 / c as f64);
    Ok((0..n)
        .map(|i| (0..c).map(|k| image.data()[k * n + i]).sum::<T>() * scale)
        .collect())
}

/// Channel average replicated to every channel.
pub fn grayscale<T: Element>(image: &Tensor<T>) -> Result<Tensor<T>> {
    let lum = luminance(image)?;
    let n = lum.len();
    Ok(Tensor::from_fn(image.shape(), |i| lum[i % n]))
}

fn clamp01<T: Element>(v: T) -> T {
    v.max(T::zero()).min(T::one())
}

/// `x * factor`, clamped to `[0, 1]`.
pub fn adjust_brightness<T: Element>(image: &Tensor<T>, factor: f64) -> Tensor<T> {
    let f = T::from_f64(factor);
    image.map(|v| clamp01(v * f))
}

/// Blends with the mean grey level: `mean + factor * (x - mean)`.
pub fn adjust_contrast<T: Element>(image: &Tensor<T>, factor: f64) -> Result<Tensor<T>> {
    let lum = luminance(image)?;
    let mean = lum.iter().copied().sum::<T>() / T::from_f64(lum.len() as f64);
    let f = T::from_f64(factor);
    Ok(image.map(|v| clamp01(mean + f * (v - mean))))
}

/// Blends with the per-pixel grey level: `grey + factor * (x - grey)`.
pub fn adjust_saturation<T: Element>(image: &Tensor<T>, factor: f64) -> Result<Tensor<T>> {
    let grey = grayscale(image)?;
    let f = T::from_f64(factor);
    image.zip_map(&grey, "saturation", |v, g| clamp01(g + f * (v - g)))
}

/// Random flip, grey conversion and colour jitter, each drawn with its
/// configured probability. With every probability at zero no random
/// number is consumed and the image is returned unchanged.
pub fn augment<T: Element, R: Rng + ?Sized>(
    image: &Tensor<T>,
    rng: &mut R,
    cfg: &AugmentConfig,
) -> Result<Tensor<T>> {
    let mut out = image.clone();
    let mut touched = false;
    if cfg.flip_p > 0.0 && rng.random_bool(cfg.flip_p) {
        out = flip_horizontal(&out);
    }
    if cfg.jitter_p > 0.0 {
        let factor = |rng: &mut R| {
            if cfg.jitter_max > cfg.jitter_min {
                rng.random_range(cfg.jitter_min..cfg.jitter_max)
            } else {
                cfg.jitter_min
            }
        };
        if rng.random_bool(cfg.jitter_p) {
            out = adjust_brightness(&out, factor(rng));
            touched = true;
        }
        if rng.random_bool(cfg.jitter_p) {
            out = adjust_contrast(&out, factor(rng))?;
            touched = true;
        }
        if rng.random_bool(cfg.jitter_p) {
            out = adjust_saturation(&out, factor(rng))?;
            touched = true;
        }
    }
    if cfg.grayscale_p > 0.0 && rng.random_bool(cfg.grayscale_p) {
        out = grayscale(&out)?;
        touched = true;
    }
    if touched {
        out = out.map(clamp01);
    }
    Ok(out)
}

/// Convex combination of two samples and their label distributions.
pub fn mixup<T: Element>(
    x1: &Tensor<T>,
    y1: &Tensor<T>,
    x2: &Tensor<T>,
    y2: &Tensor<T>,
    lambda: f64,
) -> Result<(Tensor<T>, Tensor<T>)> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::Contract(alloc::format!("mixup lambda {lambda} outside [0, 1]")));
    }
    let l = T::from_f64(lambda);
    let r = T::from_f64(1.0 - lambda);
    let x = x1.zip_map(x2, "mixup", |a, b| l * a + r * b)?;
    let y = y1.zip_map(y2, "mixup", |a, b| l * a + r * b)?;
    Ok((x, y))
}

/// Sets an `size x size` square centered at `center` (clipped to the
/// image) to `fill` on every channel.
///
/// For even sizes the window spans `center - size/2 .. center + size/2`.
pub fn cutout<T: Element>(image: &Tensor<T>, center: (usize, usize), size: usize, fill: T) -> Result<Tensor<T>> {
    let (c, h, w) = dims3(image, "cutout")?;
    let mut out = image.clone();
    if size == 0 {
        return Ok(out);
    }
    let half = size / 2;
    let y0 = center.0.saturating_sub(half);
    let x0 = center.1.saturating_sub(half);
    let y1 = (center.0 + size - half).min(h);
    let x1 = (center.1 + size - half).min(w);
    let data = out.data_mut();
    for k in 0..c {
        for y in y0..y1 {
            for x in x0..x1 {
                data[(k * h + y) * w + x] = fill;
            }
        }
    }
    Ok(out)
}

/// Draws from `Beta(alpha, alpha)`; `alpha == 0` degenerates to 1.
pub fn sample_mixup_lambda<R: Rng + ?Sized>(rng: &mut R, alpha: f64) -> Result<f64> {
    if alpha == 0.0 {
        return Ok(1.0);
    }
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::Config(alloc::format!("mixup alpha must be positive and finite, got {alpha}")));
    }
    Ok(crate::sample::beta(rng, alpha, alpha))
}
