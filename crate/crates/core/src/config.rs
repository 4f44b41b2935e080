//! Architecture and training hyperparameters.

use alloc::format;

use crate::error::{Error, Result};

/// Architecture of the encoder and heads.
#[derive(Debug, Clone, PartialEq)]
pub struct ViTConfig {
    /// Side of the square input image, in pixels.
    pub image_size: usize,
    pub patch_size: usize,
    pub channels: usize,
    pub embed_dim: usize,
    pub depth: usize,
    pub heads: usize,
    /// MLP hidden width is `mlp_ratio * embed_dim`.
    pub mlp_ratio: usize,
    pub num_classes: usize,
    pub layer_norm_eps: f64,
    /// Bottleneck of the excitation gate is `embed_dim / se_reduction`.
    pub se_reduction: usize,
}

impl ViTConfig {
    /// Small model used for tests and the synthetic corpus: 16 px images,
    /// 4 px patches, width 32, 4 heads, 2 blocks.
    pub fn toy() -> Self {
        ViTConfig {
            image_size: 16,
            patch_size: 4,
            channels: 3,
            embed_dim: 32,
            depth: 2,
            heads: 4,
            mlp_ratio: 4,
            num_classes: 3,
            layer_norm_eps: 1e-6,
            se_reduction: 4,
        }
    }

    /// ViT-B/16 at 224 px with seven expression classes.
    pub fn vit_b16_224() -> Self {
        ViTConfig {
            image_size: 224,
            patch_size: 16,
            channels: 3,
            embed_dim: 768,
            depth: 12,
            heads: 12,
            mlp_ratio: 4,
            num_classes: 7,
            layer_norm_eps: 1e-6,
            se_reduction: 4,
        }
    }

    /// Smallest config the gradient check runs on: 4x4 grey images cut into
    /// four 2x2 patches, width 16, 4 heads, 2 blocks.
    pub fn gradcheck() -> Self {
        ViTConfig {
            image_size: 4,
            patch_size: 2,
            channels: 1,
            embed_dim: 16,
            depth: 2,
            heads: 4,
            mlp_ratio: 2,
            num_classes: 3,
            layer_norm_eps: 1e-6,
            se_reduction: 4,
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "toy" => Some(Self::toy()),
            "vit-b16-224" => Some(Self::vit_b16_224()),
            "gradcheck" => Some(Self::gradcheck()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("image_size", self.image_size),
            ("patch_size", self.patch_size),
            ("channels", self.channels),
            ("embed_dim", self.embed_dim),
            ("heads", self.heads),
            ("mlp_ratio", self.mlp_ratio),
            ("se_reduction", self.se_reduction),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.image_size % self.patch_size != 0 {
            return Err(Error::Config(format!(
                "image_size {} is not divisible by patch_size {}",
                self.image_size, self.patch_size
            )));
        }
        if self.embed_dim % self.heads != 0 {
            return Err(Error::Config(format!(
                "embed_dim {} is not divisible by heads {}",
                self.embed_dim, self.heads
            )));
        }
        if self.embed_dim < 2 {
            return Err(Error::Config("embed_dim must be at least 2".into()));
        }
        if self.se_bottleneck() == 0 {
            return Err(Error::Config(format!(
                "se bottleneck embed_dim / se_reduction = {} / {} is empty",
                self.embed_dim, self.se_reduction
            )));
        }
        if self.num_classes < 2 {
            return Err(Error::Config("num_classes must be at least 2".into()));
        }
        if !(self.layer_norm_eps > 0.0 && self.layer_norm_eps.is_finite()) {
            return Err(Error::Config("layer_norm_eps must be positive".into()));
        }
        Ok(())
    }

    /// Patches per side.
    pub fn grid(&self) -> usize {
        self.image_size / self.patch_size
    }

    /// Number of patches `L`.
    pub fn num_patches(&self) -> usize {
        self.grid() * self.grid()
    }

    /// Encoder sequence length `L + 1`.
    pub fn num_tokens(&self) -> usize {
        self.num_patches() + 1
    }

    /// Flattened patch width `C * h^2`.
    pub fn patch_dim(&self) -> usize {
        self.channels * self.patch_size * self.patch_size
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.heads
    }

    pub fn mlp_hidden(&self) -> usize {
        self.mlp_ratio * self.embed_dim
    }

    pub fn se_bottleneck(&self) -> usize {
        self.embed_dim / self.se_reduction
    }

    /// Parameters added by the excitation gate.
    pub fn se_param_count(&self) -> usize {
        let (g, r) = (self.embed_dim, self.se_bottleneck());
        g * r * 2 + r + g
    }

    /// Closed-form parameter count.
    pub fn param_count(&self, se_enabled: bool) -> usize {
        let g = self.embed_dim;
        let hidden = self.mlp_hidden();
        let patch = self.patch_dim() * g + g;
        let cls = g;
        let pos = self.num_tokens() * g;
        let attn = 4 * (g * g + g);
        let norms = 2 * 2 * g;
        let mlp = g * hidden + hidden + hidden * g + g;
        let block = attn + norms + mlp;
        let final_norm = 2 * g;
        let head = g * self.num_classes + self.num_classes;
        let se = if se_enabled { self.se_param_count() } else { 0 };
        patch + cls + pos + self.depth * block + final_norm + head + se
    }
}

/// Probabilities and magnitudes of the pixel-domain augmentations.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentConfig {
    pub flip_p: f64,
    pub grayscale_p: f64,
    /// Probability of each of the brightness, contrast and saturation jitters.
    pub jitter_p: f64,
    pub jitter_min: f64,
    pub jitter_max: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            flip_p: 0.5,
            grayscale_p: 0.2,
            jitter_p: 0.5,
            jitter_min: 0.6,
            jitter_max: 1.4,
        }
    }
}

impl AugmentConfig {
    /// No augmentation at all.
    pub fn off() -> Self {
        AugmentConfig {
            flip_p: 0.0,
            grayscale_p: 0.0,
            jitter_p: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("flip_p", self.flip_p),
            ("grayscale_p", self.grayscale_p),
            ("jitter_p", self.jitter_p),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} must lie in [0, 1]")));
            }
        }
        if !(self.jitter_min >= 0.0 && self.jitter_min <= self.jitter_max) {
            return Err(Error::Config("jitter range must satisfy 0 <= min <= max".into()));
        }
        Ok(())
    }
}

/// Per-channel normalization `(x - mean) / std`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormConfig {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl Default for NormConfig {
    fn default() -> Self {
        NormConfig {
            mean: [0.5; 3],
            std: [0.5; 3],
        }
    }
}

impl NormConfig {
    pub fn validate(&self) -> Result<()> {
        if self.std.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::Config("normalization std must be positive".into()));
        }
        Ok(())
    }
}

/// The training recipe.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub weight_decay: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub mixup: bool,
    pub mixup_alpha: f64,
    pub cutout: bool,
    /// Side of the Cutout square, in pixels of the model input.
    pub cutout_size: usize,
    pub rng_seed: u64,
    pub se_enabled: bool,
    pub augment: AugmentConfig,
    pub norm: NormConfig,
}

/// Epochs when training on the large expression corpus used as a
/// pretraining stage.
pub const PRETRAIN_EPOCHS: usize = 8;

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1.6e-4,
            batch_size: 16,
            epochs: 10,
            weight_decay: 0.05,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            mixup: true,
            mixup_alpha: 0.2,
            cutout: true,
            cutout_size: 4,
            rng_seed: 0,
            se_enabled: true,
            augment: AugmentConfig::default(),
            norm: NormConfig::default(),
        }
    }
}

impl TrainConfig {
    /// Defaults for a model of the given input size: Cutout covers a
    /// quarter of the image side.
    pub fn for_model(model: &ViTConfig) -> Self {
        TrainConfig {
            cutout_size: model.image_size / 4,
            ..Self::default()
        }
    }

    /// Recipe for the toy preset trained from scratch on the synthetic
    /// corpus. The default learning rate is tuned for fine-tuning a
    /// pretrained encoder and is too small to fit a fresh toy model within a
    /// few hundred steps.
    pub fn toy(model: &ViTConfig) -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            epochs: 15,
            ..Self::for_model(model)
        }
    }

    /// Defaults for the pretraining stage.
    pub fn pretrain(model: &ViTConfig) -> Self {
        TrainConfig {
            epochs: PRETRAIN_EPOCHS,
            ..Self::for_model(model)
        }
    }

    pub fn validate(&self, model: &ViTConfig) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be non-negative".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.mixup_alpha >= 0.0) {
            return Err(Error::Config("mixup_alpha must be non-negative".into()));
        }
        if self.cutout_size > model.image_size {
            return Err(Error::Config(format!(
                "cutout_size {} exceeds image_size {}",
                self.cutout_size, model.image_size
            )));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(Error::Config("adam betas must lie in [0, 1)".into()));
        }
        if !(self.adam_eps > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::Config("adam_eps must be positive and weight_decay non-negative".into()));
        }
        self.augment.validate()?;
        self.norm.validate()
    }
}
