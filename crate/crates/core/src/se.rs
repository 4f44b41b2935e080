//! Excitation gate on the class token and the classifier head.
//!
//! The gate is the excitation half of a squeeze-and-excitation block:
//! `Sigmoid(expand(ReLU(reduce(cls))))`, with `reduce: γ -> γ/4` and
//! `expand: γ/4 -> γ`. The class token is then rescaled pointwise by the
//! gate before the linear classifier.

use crate::config::ViTConfig;
use crate::error::{Error, Result};
use crate::params::{Linear, ModelParams, SEWeights};
use crate::scalar::Element;
use crate::tape::Var;
use crate::tensor::Tensor;
use crate::vit::{forward_features, AttentionTrace};

fn as_row<'t, T: Element>(v: Var<'t, T>, op: &'static str, width: usize) -> Result<Var<'t, T>> {
    let shape = v.shape();
    if shape != [width] {
        return Err(Error::shape(op, &shape, &[width]));
    }
    v.reshape(&[1, width])
}

/// Gate in `(0, 1)^γ` for a class-token vector of length γ.
pub fn excitation<'t, T: Element>(cls: Var<'t, T>, w: &SEWeights<Var<'t, T>>) -> Result<Var<'t, T>> {
    let width = w.reduce.weight.shape()[0];
    let x = as_row(cls, "excitation", width)?;
    let squeezed = w.reduce.apply(x)?.relu()?;
    w.expand.apply(squeezed)?.sigmoid()?.reshape(&[width])
}

/// `cls ⊙ excitation(cls)`.
pub fn se_gate<'t, T: Element>(cls: Var<'t, T>, w: &SEWeights<Var<'t, T>>) -> Result<Var<'t, T>> {
    let gate = excitation(cls, w)?;
    cls.mul(gate)
}

/// Logits `[K]` from a feature vector `[γ]`. When `se` is given the
/// features pass through [`se_gate`] first; `None` is the plain ViT head.
pub fn classify<'t, T: Element>(
    features: Var<'t, T>,
    head: &Linear<Var<'t, T>>,
    se: Option<&SEWeights<Var<'t, T>>>,
) -> Result<Var<'t, T>> {
    let gated = match se {
        Some(w) => se_gate(features, w)?,
        None => features,
    };
    let width = head.weight.shape()[0];
    let classes = head.weight.shape()[1];
    head.apply(as_row(gated, "classify", width)?)?.reshape(&[classes])
}

/// Output of a full forward pass on one image.
#[derive(Clone, Copy)]
pub struct Forward<'t, T: Element> {
    /// Class-token feature after the final layer norm.
    pub features: Var<'t, T>,
    /// Features after the gate; equals `features` when SE is disabled.
    pub gated: Var<'t, T>,
    pub logits: Var<'t, T>,
}

/// Encoder, gate (if the parameters carry one) and classifier.
pub fn forward<'t, T: Element>(
    image: &Tensor<T>,
    params: &ModelParams<Var<'t, T>>,
    cfg: &ViTConfig,
    trace: Option<&mut AttentionTrace<T>>,
) -> Result<Forward<'t, T>> {
    let features = forward_features(image, params, cfg, trace)?;
    let gated = match &params.se {
        Some(w) => se_gate(features, w)?,
        None => features,
    };
    let logits = classify(gated, &params.head, None)?;
    Ok(Forward {
        features,
        gated,
        logits,
    })
}
