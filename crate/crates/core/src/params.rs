//! The named parameter set.
//!
//! Every parameter struct is generic over its leaf type so the same layout
//! holds plain tensors (`ModelParams<Tensor<T>>`), tape handles
//! (`ModelParams<Var<'t, T>>`) or gradients. Names follow a dotted path,
//! e.g. `blocks.1.attn.query.weight`, and the visiting order is fixed.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;

use crate::config::ViTConfig;
use crate::error::{Error, Result};
use crate::scalar::Element;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Standard deviation of the truncated normal initializer.
pub const INIT_STD: f64 = 0.02;

/// Affine map `x W + b` with `W` stored `[in x out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<P> {
    pub weight: P,
    pub bias: P,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNormParams<P> {
    pub gain: P,
    pub bias: P,
}

/// Query, key and value projections are each stored fused as `[γ x γ]`;
/// head `i` owns columns `i*d_k .. (i+1)*d_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams<P> {
    pub query: Linear<P>,
    pub key: Linear<P>,
    pub value: Linear<P>,
    pub output: Linear<P>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderBlockParams<P> {
    pub norm1: LayerNormParams<P>,
    pub attn: AttentionParams<P>,
    pub norm2: LayerNormParams<P>,
    pub mlp_in: Linear<P>,
    pub mlp_out: Linear<P>,
}

/// Weights of the excitation gate: `γ -> γ/r -> γ`.
#[derive(Debug, Clone, PartialEq)]
pub struct SEWeights<P> {
    pub reduce: Linear<P>,
    pub expand: Linear<P>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<P> {
    pub patch_embed: Linear<P>,
    pub cls_token: P,
    pub pos_embed: P,
    pub blocks: Vec<EncoderBlockParams<P>>,
    pub norm: LayerNormParams<P>,
    pub head: Linear<P>,
    /// `None` for the plain ViT arm of the ablation.
    pub se: Option<SEWeights<P>>,
}

type Visit<'a, P> = &'a mut dyn FnMut(&str, &P);
type MapFn<'a, P, Q> = &'a mut dyn FnMut(&str, &P) -> Result<Q>;

fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        String::from(name)
    } else {
        format!("{prefix}.{name}")
    }
}

impl<P> Linear<P> {
    fn visit(&self, prefix: &str, f: Visit<'_, P>) {
        f(&join(prefix, "weight"), &self.weight);
        f(&join(prefix, "bias"), &self.bias);
    }
    fn leaves<'a>(&'a self, out: &mut Vec<&'a P>) {
        out.push(&self.weight);
        out.push(&self.bias);
    }
    fn leaves_mut<'a>(&'a mut self, out: &mut Vec<&'a mut P>) {
        out.push(&mut self.weight);
        out.push(&mut self.bias);
    }
    fn try_map<Q>(&self, prefix: &str, f: MapFn<'_, P, Q>) -> Result<Linear<Q>> {
        Ok(Linear {
            weight: f(&join(prefix, "weight"), &self.weight)?,
            bias: f(&join(prefix, "bias"), &self.bias)?,
        })
    }
}

impl<P> LayerNormParams<P> {
    fn visit(&self, prefix: &str, f: Visit<'_, P>) {
        f(&join(prefix, "gain"), &self.gain);
        f(&join(prefix, "bias"), &self.bias);
    }
    fn leaves<'a>(&'a self, out: &mut Vec<&'a P>) {
        out.push(&self.gain);
        out.push(&self.bias);
    }
    fn leaves_mut<'a>(&'a mut self, out: &mut Vec<&'a mut P>) {
        out.push(&mut self.gain);
        out.push(&mut self.bias);
    }
    fn try_map<Q>(&self, prefix: &str, f: MapFn<'_, P, Q>) -> Result<LayerNormParams<Q>> {
        Ok(LayerNormParams {
            gain: f(&join(prefix, "gain"), &self.gain)?,
            bias: f(&join(prefix, "bias"), &self.bias)?,
        })
    }
}

impl<P> EncoderBlockParams<P> {
    fn visit(&self, prefix: &str, f: Visit<'_, P>) {
        self.norm1.visit(&join(prefix, "norm1"), f);
        self.attn.query.visit(&join(prefix, "attn.query"), f);
        self.attn.key.visit(&join(prefix, "attn.key"), f);
        self.attn.value.visit(&join(prefix, "attn.value"), f);
        self.attn.output.visit(&join(prefix, "attn.output"), f);
        self.norm2.visit(&join(prefix, "norm2"), f);
        self.mlp_in.visit(&join(prefix, "mlp.in"), f);
        self.mlp_out.visit(&join(prefix, "mlp.out"), f);
    }
    fn leaves<'a>(&'a self, out: &mut Vec<&'a P>) {
        self.norm1.leaves(out);
        self.attn.query.leaves(out);
        self.attn.key.leaves(out);
        self.attn.value.leaves(out);
        self.attn.output.leaves(out);
        self.norm2.leaves(out);
        self.mlp_in.leaves(out);
        self.mlp_out.leaves(out);
    }
    fn leaves_mut<'a>(&'a mut self, out: &mut Vec<&'a mut P>) {
        self.norm1.leaves_mut(out);
        self.attn.query.leaves_mut(out);
        self.attn.key.leaves_mut(out);
        self.attn.value.leaves_mut(out);
        self.attn.output.leaves_mut(out);
        self.norm2.leaves_mut(out);
        self.mlp_in.leaves_mut(out);
        self.mlp_out.leaves_mut(out);
    }
    fn try_map<Q>(&self, prefix: &str, f: MapFn<'_, P, Q>) -> Result<EncoderBlockParams<Q>> {
        Ok(EncoderBlockParams {
            norm1: self.norm1.try_map(&join(prefix, "norm1"), f)?,
            attn: AttentionParams {
                query: self.attn.query.try_map(&join(prefix, "attn.query"), f)?,
                key: self.attn.key.try_map(&join(prefix, "attn.key"), f)?,
                value: self.attn.value.try_map(&join(prefix, "attn.value"), f)?,
                output: self.attn.output.try_map(&join(prefix, "attn.output"), f)?,
            },
            norm2: self.norm2.try_map(&join(prefix, "norm2"), f)?,
            mlp_in: self.mlp_in.try_map(&join(prefix, "mlp.in"), f)?,
            mlp_out: self.mlp_out.try_map(&join(prefix, "mlp.out"), f)?,
        })
    }
}

impl<P> SEWeights<P> {
    fn visit(&self, prefix: &str, f: Visit<'_, P>) {
        self.reduce.visit(&join(prefix, "reduce"), f);
        self.expand.visit(&join(prefix, "expand"), f);
    }
    fn leaves<'a>(&'a self, out: &mut Vec<&'a P>) {
        self.reduce.leaves(out);
        self.expand.leaves(out);
    }
    fn leaves_mut<'a>(&'a mut self, out: &mut Vec<&'a mut P>) {
        self.reduce.leaves_mut(out);
        self.expand.leaves_mut(out);
    }
    fn try_map<Q>(&self, prefix: &str, f: MapFn<'_, P, Q>) -> Result<SEWeights<Q>> {
        Ok(SEWeights {
            reduce: self.reduce.try_map(&join(prefix, "reduce"), f)?,
            expand: self.expand.try_map(&join(prefix, "expand"), f)?,
        })
    }
}

impl<P> ModelParams<P> {
    /// Calls `f` on every parameter in canonical order.
    pub fn visit(&self, f: &mut dyn FnMut(&str, &P)) {
        self.patch_embed.visit("patch_embed", f);
        f("cls_token", &self.cls_token);
        f("pos_embed", &self.pos_embed);
        for (i, b) in self.blocks.iter().enumerate() {
            b.visit(&format!("blocks.{i}"), f);
        }
        self.norm.visit("norm", f);
        self.head.visit("head", f);
        if let Some(se) = &self.se {
            se.visit("se", f);
        }
    }

    /// Mutable references to every leaf, in the order of [`visit`](Self::visit).
    pub fn leaves_mut(&mut self) -> Vec<&mut P> {
        let mut out = Vec::new();
        self.patch_embed.leaves_mut(&mut out);
        out.push(&mut self.cls_token);
        out.push(&mut self.pos_embed);
        for b in &mut self.blocks {
            b.leaves_mut(&mut out);
        }
        self.norm.leaves_mut(&mut out);
        self.head.leaves_mut(&mut out);
        if let Some(se) = &mut self.se {
            se.leaves_mut(&mut out);
        }
        out
    }

    pub fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut P)) {
        let names = self.names();
        for (name, leaf) in names.iter().zip(self.leaves_mut()) {
            f(name, leaf);
        }
    }

    /// Shared references to every leaf, in canonical order.
    pub fn leaves(&self) -> Vec<&P> {
        let mut out = Vec::new();
        self.patch_embed.leaves(&mut out);
        out.push(&self.cls_token);
        out.push(&self.pos_embed);
        for b in &self.blocks {
            b.leaves(&mut out);
        }
        self.norm.leaves(&mut out);
        self.head.leaves(&mut out);
        if let Some(se) = &self.se {
            se.leaves(&mut out);
        }
        out
    }

    /// Builds a parallel structure by mapping every named leaf.
    pub fn try_map<Q>(&self, f: &mut dyn FnMut(&str, &P) -> Result<Q>) -> Result<ModelParams<Q>> {
        Ok(ModelParams {
            patch_embed: self.patch_embed.try_map("patch_embed", f)?,
            cls_token: f("cls_token", &self.cls_token)?,
            pos_embed: f("pos_embed", &self.pos_embed)?,
            blocks: self
                .blocks
                .iter()
                .enumerate()
                .map(|(i, b)| b.try_map(&format!("blocks.{i}"), f))
                .collect::<Result<_>>()?,
            norm: self.norm.try_map("norm", f)?,
            head: self.head.try_map("head", f)?,
            se: match &self.se {
                Some(se) => Some(se.try_map("se", f)?),
                None => None,
            },
        })
    }

    pub fn map<Q>(&self, f: &mut dyn FnMut(&str, &P) -> Q) -> ModelParams<Q> {
        self.try_map(&mut |name, p| Ok(f(name, p)))
            .expect("infallible map")
    }

    pub fn names(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.visit(&mut |name, _| out.push(String::from(name)));
        out
    }

    pub fn leaf_count(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_, _| n += 1);
        n
    }
}

fn trunc_normal<T: Element, R: Rng + ?Sized>(rng: &mut R, shape: &[usize], std: f64) -> Tensor<T> {
    Tensor::from_fn(shape, |_| loop {
        let z = crate::sample::standard_normal(rng);
        if z.abs() <= 2.0 {
            break T::from_f64(z * std);
        }
    })
}

fn init_linear<T: Element, R: Rng + ?Sized>(rng: &mut R, fan_in: usize, fan_out: usize) -> Linear<Tensor<T>> {
    Linear {
        weight: trunc_normal(rng, &[fan_in, fan_out], INIT_STD),
        bias: Tensor::zeros(&[fan_out]),
    }
}

fn init_norm<T: Element>(width: usize) -> LayerNormParams<Tensor<T>> {
    LayerNormParams {
        gain: Tensor::ones(&[width]),
        bias: Tensor::zeros(&[width]),
    }
}

impl<T: Element> SEWeights<Tensor<T>> {
    pub fn init<R: Rng + ?Sized>(cfg: &ViTConfig, rng: &mut R) -> Self {
        let (g, r) = (cfg.embed_dim, cfg.se_bottleneck());
        SEWeights {
            reduce: init_linear(rng, g, r),
            expand: init_linear(rng, r, g),
        }
    }

    pub fn bind_const<'t>(&self, tape: &'t Tape<T>) -> SEWeights<Var<'t, T>> {
        self.try_map("se", &mut |_, t| Ok(tape.constant(t.clone())))
            .expect("infallible")
    }

    pub fn bind<'t>(&self, tape: &'t Tape<T>) -> SEWeights<Var<'t, T>> {
        self.try_map("se", &mut |_, t| Ok(tape.leaf(t.clone())))
            .expect("infallible")
    }

    pub fn zeros(cfg: &ViTConfig) -> Self {
        let (g, r) = (cfg.embed_dim, cfg.se_bottleneck());
        SEWeights {
            reduce: Linear {
                weight: Tensor::zeros(&[g, r]),
                bias: Tensor::zeros(&[r]),
            },
            expand: Linear {
                weight: Tensor::zeros(&[r, g]),
                bias: Tensor::zeros(&[g]),
            },
        }
    }
}

impl<T: Element> ModelParams<Tensor<T>> {
    /// Standard ViT initialization: truncated normal (std 0.02) for
    /// projections, the class token and positions; zero biases; unit
    /// layer-norm gains. The SE weights are drawn last, so toggling them
    /// leaves every other tensor unchanged for a given rng state.
    pub fn init<R: Rng + ?Sized>(cfg: &ViTConfig, se_enabled: bool, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let g = cfg.embed_dim;
        let patch_embed = init_linear(rng, cfg.patch_dim(), g);
        let cls_token = trunc_normal(rng, &[g], INIT_STD);
        let pos_embed = trunc_normal(rng, &[cfg.num_tokens(), g], INIT_STD);
        let blocks = (0..cfg.depth)
            .map(|_| EncoderBlockParams {
                norm1: init_norm(g),
                attn: AttentionParams {
                    query: init_linear(rng, g, g),
                    key: init_linear(rng, g, g),
                    value: init_linear(rng, g, g),
                    output: init_linear(rng, g, g),
                },
                norm2: init_norm(g),
                mlp_in: init_linear(rng, g, cfg.mlp_hidden()),
                mlp_out: init_linear(rng, cfg.mlp_hidden(), g),
            })
            .collect();
        let norm = init_norm(g);
        let head = init_linear(rng, g, cfg.num_classes);
        let se = se_enabled.then(|| SEWeights::init(cfg, rng));
        Ok(ModelParams {
            patch_embed,
            cls_token,
            pos_embed,
            blocks,
            norm,
            head,
            se,
        })
    }

    /// Total number of scalars.
    pub fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_, t| n += t.len());
        n
    }

    /// Name and shape of every tensor in canonical order.
    pub fn inventory(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        self.visit(&mut |name, t| out.push((String::from(name), t.shape().to_vec())));
        out
    }

    /// Shapes every tensor must have under `cfg`, in canonical order.
    pub fn expected_inventory(cfg: &ViTConfig, se_enabled: bool) -> Result<Vec<(String, Vec<usize>)>> {
        let zeros = Self::init(cfg, se_enabled, &mut <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0))?;
        Ok(zeros.inventory())
    }

    /// Checks that every tensor has the shape `cfg` implies.
    pub fn check_shapes(&self, cfg: &ViTConfig) -> Result<()> {
        let want = Self::expected_inventory(cfg, self.se.is_some())?;
        let have = self.inventory();
        for ((wn, ws), (hn, hs)) in want.iter().zip(&have) {
            if wn != hn || ws != hs {
                return Err(Error::Config(format!(
                    "parameter {hn} has shape {hs:?}, expected {wn} {ws:?}"
                )));
            }
        }
        if want.len() != have.len() {
            return Err(Error::Config("parameter inventory length differs from config".into()));
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        let mut ok = true;
        self.visit(&mut |_, t| ok &= t.all_finite());
        ok
    }

    pub fn cast<U: Element>(&self) -> ModelParams<Tensor<U>> {
        self.map(&mut |_, t| t.cast())
    }

    /// Records every tensor as a trainable leaf on `tape`.
    pub fn bind<'t>(&self, tape: &'t Tape<T>) -> ModelParams<Var<'t, T>> {
        self.map(&mut |_, t| tape.leaf(t.clone()))
    }

    /// Records every tensor as a constant on `tape`.
    pub fn bind_const<'t>(&self, tape: &'t Tape<T>) -> ModelParams<Var<'t, T>> {
        self.map(&mut |_, t| tape.constant(t.clone()))
    }

}
