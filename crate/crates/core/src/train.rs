//! Training loop and evaluation.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::augment::{augment, cutout, mixup, normalize, preprocess, resize_bilinear, sample_mixup_lambda, to_rgb};
use crate::config::{NormConfig, TrainConfig, ViTConfig};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::loss::one_hot;
use crate::optim::{adamw_step, AdamWConfig, OptimizerState};
use crate::params::ModelParams;
use crate::se::forward;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Samples per evaluation tape.
const EVAL_CHUNK: usize = 64;

/// Parameters plus optimizer state: everything that changes during
/// training.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub params: ModelParams<Tensor<f32>>,
    pub optimizer: OptimizerState<f32>,
}

impl TrainState {
    pub fn new(params: ModelParams<Tensor<f32>>) -> Self {
        let optimizer = OptimizerState::new(params.leaves());
        TrainState { params, optimizer }
    }

    pub fn step(&self) -> u64 {
        self.optimizer.step
    }
}

/// Loss and step count of one pass over the data.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    /// Sample-weighted mean of the batch losses.
    pub mean_loss: f64,
    pub steps: usize,
    /// Loss of every batch in order.
    pub batch_losses: Vec<f64>,
}

/// Model input for evaluation: channel replication, resize, normalization.
pub fn eval_input(image: &Tensor<f32>, cfg: &ViTConfig, norm: &NormConfig) -> Result<Tensor<f32>> {
    check_channels(cfg)?;
    preprocess(image, cfg.image_size, norm)
}

/// Model input for training: resize, pixel augmentation, normalization and
/// (when enabled) Cutout at a uniformly drawn center with fill 0.
pub fn train_input<R: Rng + ?Sized>(
    image: &Tensor<f32>,
    model: &ViTConfig,
    train: &TrainConfig,
    rng: &mut R,
) -> Result<Tensor<f32>> {
    check_channels(model)?;
    let rgb = resize_bilinear(&to_rgb(image)?, model.image_size, model.image_size)?;
    let augmented = augment(&rgb, rng, &train.augment)?;
    let mut x = normalize(&augmented, &train.norm)?;
    if train.cutout && train.cutout_size > 0 {
        let cy = rng.random_range(0..model.image_size);
        let cx = rng.random_range(0..model.image_size);
        x = cutout(&x, (cy, cx), train.cutout_size, 0.0)?;
    }
    Ok(x)
}

fn check_channels(cfg: &ViTConfig) -> Result<()> {
    if cfg.channels != 3 {
        return Err(Error::Config(alloc::format!(
            "the image pipeline produces 3 channels but the model expects {}",
            cfg.channels
        )));
    }
    Ok(())
}

/// Batch logits `[B x K]` for model-ready images.
pub fn batch_logits<'t>(
    images: &[Tensor<f32>],
    params: &ModelParams<Var<'t, f32>>,
    cfg: &ViTConfig,
) -> Result<Var<'t, f32>> {
    let tape = params.cls_token.tape();
    let rows = images
        .iter()
        .map(|img| forward(img, params, cfg, None)?.logits.reshape(&[1, cfg.num_classes]))
        .collect::<Result<Vec<_>>>()?;
    tape.concat_rows(&rows)
}

/// One optimizer step on model-ready images and soft targets `[B x K]`.
/// Returns the batch loss before the update.
pub fn train_step(
    state: &mut TrainState,
    images: &[Tensor<f32>],
    targets: &Tensor<f32>,
    model: &ViTConfig,
    optim: &AdamWConfig,
) -> Result<f64> {
    let tape = Tape::new();
    let bound = state.params.bind(&tape);
    let loss = batch_logits(images, &bound, model)?.cross_entropy(targets)?;
    let value = loss.value().item() as f64;
    let grads = loss.backward()?;
    let grads: Vec<Tensor<f32>> = bound.leaves().into_iter().map(|&v| grads.get_or_zeros(v)).collect();
    drop(bound);
    let mut leaves = state.params.leaves_mut();
    adamw_step(&mut leaves, &grads, &mut state.optimizer, optim)?;
    Ok(value)
}

/// One pass over `dataset` in seeded-shuffled order.
///
/// Per batch: augmentation and Cutout per sample, then Mixup of the batch
/// with itself rolled by one, forward, cross-entropy, backward and an
/// AdamW step. Everything random comes from `rng`.
pub fn train_epoch<R: Rng + ?Sized>(
    state: &mut TrainState,
    dataset: &Dataset,
    model: &ViTConfig,
    train: &TrainConfig,
    rng: &mut R,
) -> Result<EpochStats> {
    if dataset.is_empty() {
        return Err(Error::Contract("cannot train on an empty dataset".into()));
    }
    if dataset.num_classes != model.num_classes {
        return Err(Error::Config(alloc::format!(
            "dataset has {} classes, model has {}",
            dataset.num_classes,
            model.num_classes
        )));
    }
    let optim = AdamWConfig::from(train);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(rng);

    let mut batch_losses = Vec::new();
    let mut weighted = 0.0;
    for batch in order.chunks(train.batch_size) {
        let mut images = Vec::with_capacity(batch.len());
        for &i in batch {
            images.push(train_input(&dataset.samples[i].image, model, train, rng)?);
        }
        let labels: Vec<usize> = batch.iter().map(|&i| dataset.samples[i].label).collect();
        let mut targets: Tensor<f32> = one_hot(&labels, model.num_classes)?;
        if train.mixup && batch.len() > 1 {
            let lambda = sample_mixup_lambda(rng, train.mixup_alpha)?;
            let (x, y) = mix_rolled(&images, &targets, lambda)?;
            images = x;
            targets = y;
        }
        let loss = train_step(state, &images, &targets, model, &optim)?;
        weighted += loss * batch.len() as f64;
        batch_losses.push(loss);
    }
    Ok(EpochStats {
        mean_loss: weighted / dataset.len() as f64,
        steps: batch_losses.len(),
        batch_losses,
    })
}

/// Mixes sample `i` with sample `(i + 1) % B`.
fn mix_rolled(images: &[Tensor<f32>], targets: &Tensor<f32>, lambda: f64) -> Result<(Vec<Tensor<f32>>, Tensor<f32>)> {
    let b = images.len();
    let k = targets.shape()[1];
    let mut out_x = Vec::with_capacity(b);
    let mut out_y = Vec::with_capacity(b * k);
    for i in 0..b {
        let j = (i + 1) % b;
        let yi = targets.row(i)?;
        let yj = targets.row(j)?;
        let (x, y) = mixup(&images[i], &yi, &images[j], &yj, lambda)?;
        out_x.push(x);
        out_y.extend_from_slice(y.data());
    }
    Ok((out_x, Tensor::new(&[b, k], out_y)?))
}

/// Accuracy and confusion matrix over hard labels.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub accuracy: f64,
    /// `confusion[true][predicted]` counts.
    pub confusion: Vec<Vec<usize>>,
    /// Diagonal over row sum; NaN for classes with no samples.
    pub per_class_accuracy: Vec<f64>,
}

impl EvalReport {
    /// Builds the report from `(true, predicted)` pairs.
    pub fn from_predictions(classes: usize, pairs: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut confusion = vec![vec![0usize; classes]; classes];
        for (t, p) in pairs {
            if t >= classes || p >= classes {
                return Err(Error::Contract(alloc::format!(
                    "class pair ({t}, {p}) out of range for {classes} classes"
                )));
            }
            confusion[t][p] += 1;
        }
        let total: usize = confusion.iter().flatten().sum();
        if total == 0 {
            return Err(Error::Contract("cannot evaluate an empty dataset".into()));
        }
        let correct: usize = (0..classes).map(|i| confusion[i][i]).sum();
        let per_class_accuracy = confusion
            .iter()
            .enumerate()
            .map(|(i, row)| {
                let n: usize = row.iter().sum();
                if n == 0 {
                    f64::NAN
                } else {
                    row[i] as f64 / n as f64
                }
            })
            .collect();
        Ok(EvalReport {
            accuracy: correct as f64 / total as f64,
            confusion,
            per_class_accuracy,
        })
    }

    pub fn total(&self) -> usize {
        self.confusion.iter().flatten().sum()
    }
}

/// Logits `[N x K]` for raw dataset images (no augmentation).
pub fn predict_logits(
    params: &ModelParams<Tensor<f32>>,
    model: &ViTConfig,
    norm: &NormConfig,
    images: &[&Tensor<f32>],
) -> Result<Tensor<f32>> {
    let mut rows = Vec::with_capacity(images.len() * model.num_classes);
    for chunk in images.chunks(EVAL_CHUNK) {
        let tape = Tape::new();
        let bound = params.bind_const(&tape);
        for img in chunk {
            let x = eval_input(img, model, norm)?;
            let logits = forward(&x, &bound, model, None)?.logits;
            rows.extend_from_slice(logits.value_ref().data());
        }
    }
    Tensor::new(&[images.len().max(1), model.num_classes], rows)
        .map_err(|_| Error::Contract("cannot predict on no images".into()))
}

/// Argmax predictions (ties to the lowest class) against the labels.
pub fn evaluate(
    params: &ModelParams<Tensor<f32>>,
    model: &ViTConfig,
    norm: &NormConfig,
    dataset: &Dataset,
) -> Result<EvalReport> {
    if dataset.is_empty() {
        return Err(Error::Contract("cannot evaluate an empty dataset".into()));
    }
    let images: Vec<&Tensor<f32>> = dataset.samples.iter().map(|s| &s.image).collect();
    let logits = predict_logits(params, model, norm, &images)?;
    let preds = logits.argmax_lastdim();
    EvalReport::from_predictions(
        model.num_classes,
        dataset.samples.iter().map(|s| s.label).zip(preds),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degenerate_predictor() {
        let pairs = [(0, 0), (0, 0), (1, 0), (1, 0)];
        let r = EvalReport::from_predictions(2, pairs).unwrap();
        assert_eq!(r.accuracy, 0.5);
        assert_eq!(r.confusion, vec![vec![2, 0], vec![2, 0]]);
        assert_eq!(r.per_class_accuracy, vec![1.0, 0.0]);
    }

    #[test]
    fn perfect_predictor() {
        let r = EvalReport::from_predictions(3, [(0, 0), (1, 1), (2, 2), (2, 2)]).unwrap();
        assert_eq!(r.accuracy, 1.0);
        assert_eq!(r.confusion, vec![vec![1, 0, 0], vec![0, 1, 0], vec![0, 0, 2]]);
    }

    #[test]
    fn crafted_six_samples() {
        // hand tally: true 0 -> {0, 1}, true 1 -> {1, 1}, true 2 -> {0, 2}
        let pairs = [(0, 0), (0, 1), (1, 1), (1, 1), (2, 0), (2, 2)];
        let r = EvalReport::from_predictions(3, pairs).unwrap();
        assert_eq!(r.confusion, vec![vec![1, 1, 0], vec![0, 2, 0], vec![1, 0, 1]]);
        assert_eq!(r.accuracy, 4.0 / 6.0);
        assert_eq!(r.per_class_accuracy, vec![0.5, 1.0, 0.5]);
        assert_eq!(r.total(), 6);
    }

    #[test]
    fn empty_is_an_error() {
        assert!(EvalReport::from_predictions(3, []).is_err());
    }

    #[test]
    fn rolled_mixup_keeps_distributions() {
        let images = vec![Tensor::<f32>::full(&[1], 0.0), Tensor::full(&[1], 4.0), Tensor::full(&[1], 8.0)];
        let targets = one_hot::<f32>(&[0, 1, 2], 3).unwrap();
        let (x, y) = mix_rolled(&images, &targets, 0.25).unwrap();
        assert_eq!(x[0].item(), 3.0);
        assert_eq!(x[2].item(), 2.0);
        for row in y.data().chunks(3) {
            assert!((row.iter().sum::<f32>() - 1.0).abs() < 1e-6);
        }
    }
}
