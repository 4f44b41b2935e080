//! Attention rollout.
//!
//! Each layer's attention is averaged over heads and mixed with the
//! identity to account for the residual path, `Â = 0.5 A̅ + 0.5 I`. The
//! rollout is the product `Â_N ⋯ Â_1`; its class-token row, restricted to
//! the patch columns, scores how much each patch feeds the class token.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::scalar::Element;
use crate::tensor::Tensor;
use crate::vit::AttentionTrace;

/// Per-layer maps and the rollout, all as `[grid x grid]` patch scores.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMap {
    /// Head-averaged attention of each layer, `[T x T]`.
    pub layer_attention: Vec<Tensor<f64>>,
    /// Class-token attention to the patches of each layer, scaled to max 1.
    pub layer_maps: Vec<Tensor<f64>>,
    /// Rolled-out attention `[T x T]`.
    pub rollout: Tensor<f64>,
    /// Class-token row of the rollout on the patch grid, scaled to max 1.
    pub rollout_map: Tensor<f64>,
}

/// Mean over heads of a `[z x T x T]` stack.
pub fn head_average<T: Element>(layer: &Tensor<T>) -> Result<Tensor<f64>> {
    let (z, t) = match layer.shape() {
        &[z, t, t2] if t == t2 => (z, t),
        s => return Err(Error::shape("head_average", s, &[0, 0, 0])),
    };
    let mut out = Tensor::zeros(&[t, t]);
    for head in layer.data().chunks(t * t) {
        for (o, &v) in out.data_mut().iter_mut().zip(head) {
            *o += v.as_f64();
        }
    }
    Ok(out.scale(1.0 / z as f64))
}

/// `0.5 * A + 0.5 * I`.
pub fn residual_mix(attn: &Tensor<f64>) -> Result<Tensor<f64>> {
    let (t, _) = attn.dims2("residual_mix")?;
    attn.scale(0.5).add(&Tensor::eye(t).scale(0.5))
}

/// Class-token row restricted to patches, reshaped to the square patch
/// grid and divided by its maximum. An all-zero row stays zero.
pub fn cls_patch_map(matrix: &Tensor<f64>) -> Result<Tensor<f64>> {
    let (t, _) = matrix.dims2("cls_patch_map")?;
    let patches = t - 1;
    let grid = libm::sqrt(patches as f64) as usize;
    if grid * grid != patches || patches == 0 {
        return Err(Error::Contract(alloc::format!(
            "{patches} patches do not form a square grid"
        )));
    }
    let row = &matrix.data()[1..t];
    let max = row.iter().copied().fold(0.0, f64::max);
    let data = if max > 0.0 {
        row.iter().map(|&v| v / max).collect()
    } else {
        row.to_vec()
    };
    Tensor::new(&[grid, grid], data)
}

/// Rollout over a recorded forward pass.
pub fn attention_rollout<T: Element>(trace: &AttentionTrace<T>) -> Result<AttentionMap> {
    let first = trace
        .layers
        .first()
        .ok_or_else(|| Error::Contract("attention rollout needs at least one layer".into()))?;
    let t = first.shape().get(1).copied().unwrap_or(0);
    let mut rollout = Tensor::eye(t);
    let mut layer_attention = Vec::with_capacity(trace.layers.len());
    let mut layer_maps = Vec::with_capacity(trace.layers.len());
    for layer in &trace.layers {
        let avg = head_average(layer)?;
        rollout = residual_mix(&avg)?.matmul(&rollout)?;
        layer_maps.push(cls_patch_map(&avg)?);
        layer_attention.push(avg);
    }
    let rollout_map = cls_patch_map(&rollout)?;
    Ok(AttentionMap {
        layer_attention,
        layer_maps,
        rollout,
        rollout_map,
    })
}

/// Nearest-neighbour upscale of a `[g x g]` map to `[size x size]`.
pub fn upscale_nearest(map: &Tensor<f64>, size: usize) -> Result<Tensor<f64>> {
    let (gh, gw) = map.dims2("upscale_nearest")?;
    Ok(Tensor::from_fn(&[size, size], |i| {
        let (y, x) = (i / size, i % size);
        map.at2(y * gh / size, x * gw / size)
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn trace_of(layers: Vec<Tensor<f64>>) -> AttentionTrace<f64> {
        AttentionTrace { layers }
    }

    #[test]
    fn uniform_attention_is_flat() {
        let t = 5;
        let layer = Tensor::full(&[2, t, t], 1.0 / t as f64);
        let map = attention_rollout(&trace_of(vec![layer])).unwrap();
        assert!(map.rollout_map.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn identity_attention_gives_zero_map() {
        let t = 5;
        let eye = Tensor::<f64>::eye(t);
        let mut data = eye.data().to_vec();
        data.extend_from_slice(eye.data());
        let layer = Tensor::new(&[2, t, t], data).unwrap();
        let map = attention_rollout(&trace_of(vec![layer.clone(), layer])).unwrap();
        assert!(map.rollout_map.data().iter().all(|&v| v == 0.0));
        assert_eq!(map.rollout, Tensor::eye(t));
    }

    #[test]
    fn upscale_repeats_cells() {
        let m = Tensor::new(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let up = upscale_nearest(&m, 4).unwrap();
        assert_eq!(up.data()[..4], [1.0, 1.0, 2.0, 2.0]);
        assert_eq!(up.data()[12..], [3.0, 3.0, 4.0, 4.0]);
    }

    #[test]
    fn non_square_grid_is_rejected() {
        let layer = Tensor::full(&[1, 4, 4], 0.25);
        assert!(attention_rollout(&trace_of(vec![layer])).is_err());
    }
}
