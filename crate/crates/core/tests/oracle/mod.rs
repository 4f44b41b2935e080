//! Reference implementations of the model with plain loops over
//! `Vec<Vec<f64>>`, shared by the model tests and the acceptance run.

#![allow(dead_code)]

use vitse_core::params::{EncoderBlockParams, Linear};
use vitse_core::{ModelParams, Tensor, ViTConfig};

pub type Mat = Vec<Vec<f64>>;

pub fn mat(t: &Tensor<f64>) -> Mat {
    let cols = t.last_dim();
    t.data().chunks(cols).map(|r| r.to_vec()).collect()
}

pub fn vecof(t: &Tensor<f64>) -> Vec<f64> {
    t.data().to_vec()
}

pub fn linear(x: &Mat, l: &Linear<Tensor<f64>>) -> Mat {
    let w = mat(&l.weight);
    let b = vecof(&l.bias);
    x.iter()
        .map(|row| {
            (0..b.len())
                .map(|j| b[j] + row.iter().enumerate().map(|(i, v)| v * w[i][j]).sum::<f64>())
                .collect()
        })
        .collect()
}

pub fn layer_norm(x: &Mat, gain: &Tensor<f64>, bias: &Tensor<f64>, eps: f64) -> Mat {
    let (g, b) = (vecof(gain), vecof(bias));
    x.iter()
        .map(|row| {
            let n = row.len() as f64;
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            row.iter()
                .enumerate()
                .map(|(i, v)| g[i] * (v - mean) / (var + eps).sqrt() + b[i])
                .collect()
        })
        .collect()
}

pub fn gelu(v: f64) -> f64 {
    0.5 * v * (1.0 + libm::erf(v / std::f64::consts::SQRT_2))
}

pub fn add(a: &Mat, b: &Mat) -> Mat {
    a.iter().zip(b).map(|(r, s)| r.iter().zip(s).map(|(x, y)| x + y).collect()).collect()
}

/// Per-head attention with explicit loops. Returns the output and the
/// attention matrices.
pub fn mha(x: &Mat, block: &EncoderBlockParams<Tensor<f64>>, heads: usize) -> (Mat, Vec<Mat>) {
    let q = linear(x, &block.attn.query);
    let k = linear(x, &block.attn.key);
    let v = linear(x, &block.attn.value);
    let t = x.len();
    let width = q[0].len();
    let d = width / heads;
    let mut concat = vec![vec![0.0; width]; t];
    let mut maps = Vec::new();
    for h in 0..heads {
        let mut a = vec![vec![0.0; t]; t];
        for i in 0..t {
            let scores: Vec<f64> = (0..t)
                .map(|j| (0..d).map(|c| q[i][h * d + c] * k[j][h * d + c]).sum::<f64>() / (d as f64).sqrt())
                .collect();
            let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = scores.iter().map(|s| (s - m).exp()).sum();
            for j in 0..t {
                a[i][j] = (scores[j] - m).exp() / z;
            }
            for c in 0..d {
                concat[i][h * d + c] = (0..t).map(|j| a[i][j] * v[j][h * d + c]).sum();
            }
        }
        maps.push(a);
    }
    (linear(&concat, &block.attn.output), maps)
}

pub fn block_oracle(x: &Mat, block: &EncoderBlockParams<Tensor<f64>>, cfg: &ViTConfig) -> Mat {
    let eps = cfg.layer_norm_eps;
    let (attn, _) = mha(&layer_norm(x, &block.norm1.gain, &block.norm1.bias, eps), block, cfg.heads);
    let y = add(x, &attn);
    let hidden: Mat = linear(&layer_norm(&y, &block.norm2.gain, &block.norm2.bias, eps), &block.mlp_in)
        .into_iter()
        .map(|r| r.into_iter().map(gelu).collect())
        .collect();
    add(&y, &linear(&hidden, &block.mlp_out))
}

pub fn patches_oracle(image: &Tensor<f64>, h: usize) -> Mat {
    let (c, size) = (image.shape()[0], image.shape()[1]);
    let g = size / h;
    let px = |ch: usize, y: usize, x: usize| image.data()[(ch * size + y) * size + x];
    let mut out = Vec::new();
    for pr in 0..g {
        for pc in 0..g {
            let mut row = Vec::new();
            for ch in 0..c {
                for r in 0..h {
                    for col in 0..h {
                        row.push(px(ch, pr * h + r, pc * h + col));
                    }
                }
            }
            out.push(row);
        }
    }
    out
}

pub fn embed_oracle(image: &Tensor<f64>, p: &ModelParams<Tensor<f64>>, cfg: &ViTConfig) -> Mat {
    let mut tokens = vec![vecof(&p.cls_token)];
    tokens.extend(linear(&patches_oracle(image, cfg.patch_size), &p.patch_embed));
    add(&tokens, &mat(&p.pos_embed))
}

pub fn logits_oracle(image: &Tensor<f64>, p: &ModelParams<Tensor<f64>>, cfg: &ViTConfig) -> Vec<f64> {
    let mut x = embed_oracle(image, p, cfg);
    for block in &p.blocks {
        x = block_oracle(&x, block, cfg);
    }
    let mut cls = layer_norm(&vec![x[0].clone()], &p.norm.gain, &p.norm.bias, cfg.layer_norm_eps);
    if let Some(se) = &p.se {
        let hidden: Mat = linear(&cls, &se.reduce).into_iter().map(|r| r.into_iter().map(|v| v.max(0.0)).collect()).collect();
        let gate = linear(&hidden, &se.expand);
        for (c, s) in cls[0].iter_mut().zip(&gate[0]) {
            *c *= 1.0 / (1.0 + (-s).exp());
        }
    }
    linear(&cls, &p.head).remove(0)
}

pub fn max_diff(a: &Mat, b: &Tensor<f64>) -> f64 {
    a.iter().flatten().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
