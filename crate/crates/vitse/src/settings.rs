//! `key = value` text shared by config files and checkpoints.

use vitse_core::{TrainConfig, ViTConfig};

/// One parsed `key = value` line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entry {
    pub line: usize,
    pub key: String,
    pub value: String,
}

/// Splits config text into entries. Blank lines and `#` comments (whole
/// line or trailing) are skipped.
pub fn parse_entries(text: &str) -> Result<Vec<Entry>, (usize, String)> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let Some((key, value)) = content.split_once('=') else {
            return Err((line, format!("expected `key = value`, found `{content}`")));
        };
        let key = key.trim();
        if key.is_empty() {
            return Err((line, "empty key".into()));
        }
        out.push(Entry {
            line,
            key: key.to_string(),
            value: value.trim().to_string(),
        });
    }
    Ok(out)
}

pub fn render(entries: &[(&'static str, String)]) -> String {
    entries.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
}

pub fn model_entries(m: &ViTConfig) -> Vec<(&'static str, String)> {
    vec![
        ("image_size", m.image_size.to_string()),
        ("patch_size", m.patch_size.to_string()),
        ("channels", m.channels.to_string()),
        ("embed_dim", m.embed_dim.to_string()),
        ("depth", m.depth.to_string()),
        ("heads", m.heads.to_string()),
        ("mlp_ratio", m.mlp_ratio.to_string()),
        ("num_classes", m.num_classes.to_string()),
        ("layer_norm_eps", m.layer_norm_eps.to_string()),
        ("se_reduction", m.se_reduction.to_string()),
    ]
}

pub fn train_entries(t: &TrainConfig) -> Vec<(&'static str, String)> {
    let triple = |v: [f64; 3]| format!("{},{},{}", v[0], v[1], v[2]);
    vec![
        ("learning_rate", t.learning_rate.to_string()),
        ("batch_size", t.batch_size.to_string()),
        ("epochs", t.epochs.to_string()),
        ("weight_decay", t.weight_decay.to_string()),
        ("adam_beta1", t.adam_beta1.to_string()),
        ("adam_beta2", t.adam_beta2.to_string()),
        ("adam_eps", t.adam_eps.to_string()),
        ("mixup", t.mixup.to_string()),
        ("mixup_alpha", t.mixup_alpha.to_string()),
        ("cutout", t.cutout.to_string()),
        ("cutout_size", t.cutout_size.to_string()),
        ("rng_seed", t.rng_seed.to_string()),
        ("se_enabled", t.se_enabled.to_string()),
        ("flip_p", t.augment.flip_p.to_string()),
        ("grayscale_p", t.augment.grayscale_p.to_string()),
        ("jitter_p", t.augment.jitter_p.to_string()),
        ("jitter_min", t.augment.jitter_min.to_string()),
        ("jitter_max", t.augment.jitter_max.to_string()),
        ("norm_mean", triple(t.norm.mean)),
        ("norm_std", triple(t.norm.std)),
    ]
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, String> {
    value
        .parse()
        .map_err(|_| format!("invalid value `{value}` for {key}"))
}

/// Accepts `true`/`false` and `on`/`off`.
pub fn parse_bool(key: &str, value: &str) -> Result<bool, String> {
    match value {
        "true" | "on" => Ok(true),
        "false" | "off" => Ok(false),
        _ => Err(format!("invalid value `{value}` for {key}, expected on/off")),
    }
}

fn parse_triple(key: &str, value: &str) -> Result<[f64; 3], String> {
    let parts: Vec<&str> = value.split(',').map(str::trim).collect();
    match parts.as_slice() {
        [v] => {
            let v = parse(key, v)?;
            Ok([v; 3])
        }
        [a, b, c] => Ok([parse(key, a)?, parse(key, b)?, parse(key, c)?]),
        _ => Err(format!("{key} takes one or three comma-separated values")),
    }
}

/// Applies a model key. Returns `None` when `key` is not a model key.
pub fn set_model(m: &mut ViTConfig, key: &str, value: &str) -> Option<Result<(), String>> {
    let r = match key {
        "image_size" => parse(key, value).map(|v| m.image_size = v),
        "patch_size" => parse(key, value).map(|v| m.patch_size = v),
        "channels" => parse(key, value).map(|v| m.channels = v),
        "embed_dim" => parse(key, value).map(|v| m.embed_dim = v),
        "depth" => parse(key, value).map(|v| m.depth = v),
        "heads" => parse(key, value).map(|v| m.heads = v),
        "mlp_ratio" => parse(key, value).map(|v| m.mlp_ratio = v),
        "num_classes" => parse(key, value).map(|v| m.num_classes = v),
        "layer_norm_eps" => parse(key, value).map(|v| m.layer_norm_eps = v),
        "se_reduction" => parse(key, value).map(|v| m.se_reduction = v),
        _ => return None,
    };
    Some(r)
}

/// Applies a training key. Returns `None` when `key` is not a training key.
pub fn set_train(t: &mut TrainConfig, key: &str, value: &str) -> Option<Result<(), String>> {
    let r = match key {
        "learning_rate" => parse(key, value).map(|v| t.learning_rate = v),
        "batch_size" => parse(key, value).map(|v| t.batch_size = v),
        "epochs" => parse(key, value).map(|v| t.epochs = v),
        "weight_decay" => parse(key, value).map(|v| t.weight_decay = v),
        "adam_beta1" => parse(key, value).map(|v| t.adam_beta1 = v),
        "adam_beta2" => parse(key, value).map(|v| t.adam_beta2 = v),
        "adam_eps" => parse(key, value).map(|v| t.adam_eps = v),
        "mixup" => parse_bool(key, value).map(|v| t.mixup = v),
        "mixup_alpha" => parse(key, value).map(|v| t.mixup_alpha = v),
        "cutout" => parse_bool(key, value).map(|v| t.cutout = v),
        "cutout_size" => parse(key, value).map(|v| t.cutout_size = v),
        "rng_seed" => parse(key, value).map(|v| t.rng_seed = v),
        "se_enabled" => parse_bool(key, value).map(|v| t.se_enabled = v),
        "flip_p" => parse(key, value).map(|v| t.augment.flip_p = v),
        "grayscale_p" => parse(key, value).map(|v| t.augment.grayscale_p = v),
        "jitter_p" => parse(key, value).map(|v| t.augment.jitter_p = v),
        "jitter_min" => parse(key, value).map(|v| t.augment.jitter_min = v),
        "jitter_max" => parse(key, value).map(|v| t.augment.jitter_max = v),
        "norm_mean" => parse_triple(key, value).map(|v| t.norm.mean = v),
        "norm_std" => parse_triple(key, value).map(|v| t.norm.std = v),
        _ => return None,
    };
    Some(r)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn comments_and_blanks_are_skipped() {
        let e = parse_entries("# header\n\nepochs = 3 # trailing\n  depth=1\n").unwrap();
        assert_eq!(e.len(), 2);
        assert_eq!((e[0].line, e[0].key.as_str(), e[0].value.as_str()), (3, "epochs", "3"));
        assert_eq!((e[1].line, e[1].key.as_str(), e[1].value.as_str()), (4, "depth", "1"));
    }

    #[test]
    fn missing_equals_names_the_line() {
        assert_eq!(parse_entries("a = 1\nbogus\n").unwrap_err().0, 2);
        assert_eq!(parse_entries(" = 1\n").unwrap_err().0, 1);
    }

    #[test]
    fn rendered_configs_parse_back() {
        let model = ViTConfig::vit_b16_224();
        let train = TrainConfig {
            learning_rate: 1.234567e-7,
            norm: vitse_core::config::NormConfig {
                mean: [0.1, 0.2, 0.3],
                std: [0.25; 3],
            },
            ..TrainConfig::for_model(&model)
        };
        let text = render(&model_entries(&model)) + &render(&train_entries(&train));
        let mut m = ViTConfig::toy();
        let mut t = TrainConfig::default();
        for e in parse_entries(&text).unwrap() {
            set_model(&mut m, &e.key, &e.value)
                .or_else(|| set_train(&mut t, &e.key, &e.value))
                .unwrap()
                .unwrap();
        }
        assert_eq!(m, model);
        assert_eq!(t, train);
    }

    #[test]
    fn bad_values_are_reported() {
        let mut t = TrainConfig::default();
        assert!(set_train(&mut t, "batch_size", "-1").unwrap().is_err());
        assert!(set_train(&mut t, "mixup", "maybe").unwrap().is_err());
        assert!(set_train(&mut t, "norm_std", "1,2").unwrap().is_err());
        assert!(set_train(&mut t, "nonsense", "1").is_none());
    }
}
