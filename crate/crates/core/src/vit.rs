//! Patch tokenization and the transformer encoder.

use alloc::vec::Vec;

use crate::config::ViTConfig;
use crate::error::{Error, Result};
use crate::params::{EncoderBlockParams, LayerNormParams, Linear, ModelParams};
use crate::scalar::{c, Element};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Cuts a `[C x H x W]` image into non-overlapping `h x h` patches.
///
/// Row `r` of the result is the patch at row-major patch index `r`,
/// flattened channel-major and then row-major inside the patch.
pub fn patchify<T: Element>(image: &Tensor<T>, h: usize) -> Result<Tensor<T>> {
    let (ch, height, width) = match image.shape() {
        &[c, hh, ww] => (c, hh, ww),
        s => return Err(Error::shape("patchify", s, &[0, 0, 0])),
    };
    if h == 0 || height % h != 0 || width % h != 0 {
        return Err(Error::Patch {
            height,
            width,
            patch: h,
        });
    }
    let (gh, gw) = (height / h, width / h);
    let dim = ch * h * h;
    let src = image.data();
    let mut out = Vec::with_capacity(gh * gw * dim);
    for pr in 0..gh {
        for pc in 0..gw {
            for k in 0..ch {
                for y in 0..h {
                    let row = (k * height + pr * h + y) * width + pc * h;
                    out.extend_from_slice(&src[row..row + h]);
                }
            }
        }
    }
    Tensor::new(&[gh * gw, dim], out)
}

/// Inverse of [`patchify`].
pub fn unpatchify<T: Element>(
    patches: &Tensor<T>,
    channels: usize,
    height: usize,
    width: usize,
    h: usize,
) -> Result<Tensor<T>> {
    if h == 0 || height % h != 0 || width % h != 0 {
        return Err(Error::Patch {
            height,
            width,
            patch: h,
        });
    }
    let (gh, gw) = (height / h, width / h);
    let want = [gh * gw, channels * h * h];
    if patches.shape() != want {
        return Err(Error::shape("unpatchify", patches.shape(), &want));
    }
    let mut out = Tensor::zeros(&[channels, height, width]);
    let src = patches.data();
    let dst = out.data_mut();
    let mut i = 0;
    for pr in 0..gh {
        for pc in 0..gw {
            for k in 0..channels {
                for y in 0..h {
                    let row = (k * height + pr * h + y) * width + pc * h;
                    dst[row..row + h].copy_from_slice(&src[i..i + h]);
                    i += h;
                }
            }
        }
    }
    Ok(out)
}

impl<'t, T: Element> Linear<Var<'t, T>> {
    /// `x W + b` for `x` of shape `[m x in]`.
    pub fn apply(&self, x: Var<'t, T>) -> Result<Var<'t, T>> {
        x.matmul(self.weight)?.add_bias(self.bias)
    }
}

impl<'t, T: Element> LayerNormParams<Var<'t, T>> {
    pub fn apply(&self, x: Var<'t, T>, eps: f64) -> Result<Var<'t, T>> {
        x.layer_norm(self.gain, self.bias, c(eps))
    }
}

/// Token matrix `[(L+1) x γ]`: the class token followed by the projected
/// patches, plus the position table.
pub fn embed_tokens<'t, T: Element>(
    patches: Var<'t, T>,
    params: &ModelParams<Var<'t, T>>,
) -> Result<Var<'t, T>> {
    let in_dim = params.patch_embed.weight.shape()[0];
    let shape = patches.shape();
    if shape.len() != 2 || shape[1] != in_dim {
        return Err(Error::shape("embed_tokens", &shape, &[shape[0], in_dim]));
    }
    let projected = params.patch_embed.apply(patches)?;
    let width = params.cls_token.shape()[0];
    let cls = params.cls_token.reshape(&[1, width])?;
    let tokens = patches.tape().concat_rows(&[cls, projected])?;
    tokens.add(params.pos_embed)
}

/// Scaled dot-product attention for one head: `softmax(Q Kᵀ / √d_k) V`.
/// Returns the output and the attention matrix.
pub fn attention_head<'t, T: Element>(
    q: Var<'t, T>,
    k: Var<'t, T>,
    v: Var<'t, T>,
) -> Result<(Var<'t, T>, Var<'t, T>)> {
    let (qs, ks, vs) = (q.shape(), k.shape(), v.shape());
    if qs.len() != 2 || qs != ks || ks != vs {
        return Err(Error::shape("attention_head", &qs, &ks));
    }
    let d_k = qs[1] as f64;
    let scores = q.matmul(k.transpose()?)?.scale(c(1.0 / libm::sqrt(d_k)))?;
    let attn = scores.softmax_lastdim()?;
    Ok((attn.matmul(v)?, attn))
}

/// Multi-head self-attention. Returns the projected output and the
/// per-head attention matrices.
pub fn multi_head_attention<'t, T: Element>(
    x: Var<'t, T>,
    block: &EncoderBlockParams<Var<'t, T>>,
    heads: usize,
) -> Result<(Var<'t, T>, Vec<Var<'t, T>>)> {
    let width = block.attn.query.weight.shape()[1];
    if heads == 0 || width % heads != 0 {
        return Err(Error::Config(alloc::format!(
            "width {width} is not divisible into {heads} heads"
        )));
    }
    let d_k = width / heads;
    let q = block.attn.query.apply(x)?;
    let k = block.attn.key.apply(x)?;
    let v = block.attn.value.apply(x)?;
    let mut outputs = Vec::with_capacity(heads);
    let mut maps = Vec::with_capacity(heads);
    for h in 0..heads {
        let (o, a) = attention_head(
            q.narrow_cols(h * d_k, d_k)?,
            k.narrow_cols(h * d_k, d_k)?,
            v.narrow_cols(h * d_k, d_k)?,
        )?;
        outputs.push(o);
        maps.push(a);
    }
    let concat = if heads == 1 {
        outputs[0]
    } else {
        x.tape().concat_cols(&outputs)?
    };
    Ok((block.attn.output.apply(concat)?, maps))
}

/// Pre-norm encoder block: `y = x + MHA(LN(x))`, then `y + MLP(LN(y))`.
pub fn encoder_block<'t, T: Element>(
    x: Var<'t, T>,
    block: &EncoderBlockParams<Var<'t, T>>,
    cfg: &ViTConfig,
) -> Result<(Var<'t, T>, Vec<Var<'t, T>>)> {
    let (attn, maps) = multi_head_attention(block.norm1.apply(x, cfg.layer_norm_eps)?, block, cfg.heads)?;
    let y = x.add(attn)?;
    let hidden = block.mlp_in.apply(block.norm2.apply(y, cfg.layer_norm_eps)?)?.gelu()?;
    let out = y.add(block.mlp_out.apply(hidden)?)?;
    Ok((out, maps))
}

/// Attention matrices recorded during a forward pass: one `[z x T x T]`
/// tensor per encoder layer.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AttentionTrace<T> {
    pub layers: Vec<Tensor<T>>,
}

/// Runs the encoder on one `[C x H x W]` image and returns the class-token
/// feature `[γ]` after the final layer norm.
pub fn forward_features<'t, T: Element>(
    image: &Tensor<T>,
    params: &ModelParams<Var<'t, T>>,
    cfg: &ViTConfig,
    mut trace: Option<&mut AttentionTrace<T>>,
) -> Result<Var<'t, T>> {
    let want = [cfg.channels, cfg.image_size, cfg.image_size];
    if image.shape() != want {
        return Err(Error::shape("forward_features", image.shape(), &want));
    }
    if params.blocks.len() != cfg.depth {
        return Err(Error::Config(alloc::format!(
            "parameters hold {} blocks, config wants {}",
            params.blocks.len(),
            cfg.depth
        )));
    }
    let tape: &'t Tape<T> = params.cls_token.tape();
    let patches = tape.constant(patchify(image, cfg.patch_size)?);
    let mut x = embed_tokens(patches, params)?;
    for block in &params.blocks {
        let (y, maps) = encoder_block(x, block, cfg)?;
        if let Some(trace) = trace.as_deref_mut() {
            let t = cfg.num_tokens();
            let mut data = Vec::with_capacity(maps.len() * t * t);
            for m in &maps {
                data.extend_from_slice(m.value_ref().data());
            }
            trace.layers.push(Tensor::new(&[maps.len(), t, t], data)?);
        }
        x = y;
    }
    params.norm.apply(x.row(0)?, cfg.layer_norm_eps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn patchify_constant_image() {
        let img = Tensor::<f64>::full(&[1, 4, 4], 0.7);
        let p = patchify(&img, 2).unwrap();
        assert_eq!(p.shape(), &[4, 4]);
        assert!(p.data().iter().all(|&v| v == 0.7));
    }

    #[test]
    fn patchify_single_patch() {
        let img = Tensor::<f64>::new(&[1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(patchify(&img, 2).unwrap().data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn patchify_index_enumeration() {
        let img = Tensor::<f64>::from_fn(&[1, 4, 4], |i| i as f64);
        let p = patchify(&img, 2).unwrap();
        // brute-force: patch (pr, pc) holds pixels (2pr + y, 2pc + x)
        for pr in 0..2 {
            for pc in 0..2 {
                let row = p.row(pr * 2 + pc).unwrap();
                let mut want = vec![];
                for y in 0..2 {
                    for x in 0..2 {
                        want.push(((2 * pr + y) * 4 + 2 * pc + x) as f64);
                    }
                }
                assert_eq!(row.data(), &want[..]);
            }
        }
        assert_eq!(p.row(0).unwrap().data(), &[0.0, 1.0, 4.0, 5.0]);
    }

    #[test]
    fn patchify_rejects_indivisible() {
        let img = Tensor::<f64>::zeros(&[1, 5, 4]);
        let err = patchify(&img, 2).unwrap_err();
        assert_eq!(
            err,
            Error::Patch {
                height: 5,
                width: 4,
                patch: 2
            }
        );
    }

    #[test]
    fn unpatchify_inverts_multichannel() {
        let img = Tensor::<f64>::from_fn(&[3, 6, 6], |i| i as f64 * 0.5);
        let p = patchify(&img, 3).unwrap();
        assert_eq!(p.shape(), &[4, 27]);
        assert_eq!(unpatchify(&p, 3, 6, 6, 3).unwrap(), img);
    }

    #[test]
    fn embed_shape() {
        let cfg = ViTConfig {
            image_size: 16,
            patch_size: 4,
            embed_dim: 8,
            heads: 2,
            channels: 1,
            ..ViTConfig::toy()
        };
        let params = ModelParams::<Tensor<f64>>::init(&cfg, true, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let tape = Tape::new();
        let bound = params.bind(&tape);
        let patches = tape.constant(Tensor::zeros(&[16, 16]));
        let tokens = embed_tokens(patches, &bound).unwrap();
        assert_eq!(tokens.shape(), [17, 8]);
    }

    #[test]
    fn single_token_attention_returns_values() {
        let tape = Tape::<f64>::new();
        let q = tape.constant(Tensor::new(&[1, 2], vec![0.3, -2.0]).unwrap());
        let k = tape.constant(Tensor::new(&[1, 2], vec![1.5, 0.1]).unwrap());
        let v = tape.constant(Tensor::new(&[1, 2], vec![4.0, 5.0]).unwrap());
        let (out, attn) = attention_head(q, k, v).unwrap();
        assert_eq!(out.value().data(), &[4.0, 5.0]);
        assert_eq!(attn.value().data(), &[1.0]);
    }

    #[test]
    fn zero_query_averages_values() {
        let tape = Tape::<f64>::new();
        let q = tape.constant(Tensor::zeros(&[3, 2]));
        let k = tape.constant(Tensor::from_fn(&[3, 2], |i| i as f64));
        let v = tape.constant(Tensor::new(&[3, 2], vec![1.0, 2.0, 3.0, 4.0, 8.0, 0.0]).unwrap());
        let (out, _) = attention_head(q, k, v).unwrap();
        for row in out.value().data().chunks(2) {
            assert!((row[0] - 4.0).abs() < 1e-12 && (row[1] - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn two_token_hand_computation() {
        let tape = Tape::<f64>::new();
        let id = tape.constant(Tensor::eye(2));
        let (out, _) = attention_head(id, id, id).unwrap();
        let s = 1.0 / libm::sqrt(2.0);
        let sigma = libm::exp(s) / (libm::exp(s) + 1.0);
        let out = out.value();
        assert!((out.at2(0, 0) - sigma).abs() < 1e-12);
        assert!((out.at2(0, 1) - (1.0 - sigma)).abs() < 1e-12);
        assert!((out.at2(1, 0) - (1.0 - sigma)).abs() < 1e-12);
    }
}
