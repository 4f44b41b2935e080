//! Run configuration: model, training recipe, data source and command
//! options, resolved from built-in defaults, a `key = value` file and
//! command-line overrides (in that order of precedence).

use std::collections::HashMap;
use std::path::PathBuf;

use vitse_core::{TrainConfig, ViTConfig};

use crate::settings::{model_entries, parse_entries, render, set_model, set_train, train_entries};

/// Keys that are neither model nor training settings, with their defaults.
pub const RUN_KEYS: [(&str, &str); 15] = [
    ("preset", "toy (gradcheck for the gradcheck command)"),
    ("data", "synth"),
    ("synth_per_class", "100"),
    ("synth_valid_per_class", "20"),
    ("synth_size", "image_size"),
    ("synth_seed", "0"),
    ("synth_export", "(none)"),
    ("out_dir", "run"),
    ("checkpoint", "(none)"),
    ("init", "(none)"),
    ("image", "(none)"),
    ("split", "train"),
    ("gradcheck_eps", "1e-6"),
    ("gradcheck_tolerance", "1e-4"),
    ("gradcheck_batch", "2"),
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DataSource {
    /// The procedural corpus.
    Synth,
    /// A FER-2013 CSV file.
    Csv(PathBuf),
}

/// Which samples `eval` scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalSplit {
    All,
    Only(vitse_core::data::Split),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub preset: String,
    pub model: ViTConfig,
    pub train: TrainConfig,
    pub data: DataSource,
    pub synth_per_class: usize,
    pub synth_valid_per_class: usize,
    pub synth_size: usize,
    pub synth_seed: u64,
    pub synth_export: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub checkpoint: Option<PathBuf>,
    pub init: Option<PathBuf>,
    pub image: Option<PathBuf>,
    pub split: EvalSplit,
    pub gradcheck_eps: f64,
    pub gradcheck_tolerance: f64,
    pub gradcheck_batch: usize,
}

/// Where a setting came from, for error messages.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Origin {
    File { path: String, line: usize },
    Flag,
}

impl std::fmt::Display for Origin {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Origin::File { path, line } => write!(f, "{path}:{line}"),
            Origin::Flag => f.write_str("command line"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Setting {
    pub key: String,
    pub value: String,
    pub origin: Origin,
}

fn is_known(key: &str) -> bool {
    let model = model_entries(&ViTConfig::toy());
    let train = train_entries(&TrainConfig::default());
    RUN_KEYS.iter().any(|(k, _)| *k == key)
        || model.iter().chain(&train).any(|(k, _)| *k == key)
}

/// Settings from config file text. Unknown and repeated keys are errors.
pub fn file_settings(text: &str, path: &str) -> Result<Vec<Setting>, String> {
    let entries = parse_entries(text).map_err(|(line, msg)| format!("{path}:{line}: {msg}"))?;
    let mut seen = HashMap::new();
    let mut out = Vec::with_capacity(entries.len());
    for e in entries {
        if !is_known(&e.key) {
            return Err(format!("{path}:{}: unknown key `{}`", e.line, e.key));
        }
        if let Some(first) = seen.insert(e.key.clone(), e.line) {
            return Err(format!("{path}:{}: `{}` already set on line {first}", e.line, e.key));
        }
        out.push(Setting {
            key: e.key,
            value: e.value,
            origin: Origin::File {
                path: path.to_string(),
                line: e.line,
            },
        });
    }
    Ok(out)
}

/// Parses a `KEY=VALUE` override.
pub fn flag_setting(arg: &str) -> Result<Setting, String> {
    let (key, value) = arg
        .split_once('=')
        .ok_or_else(|| format!("override `{arg}` is not KEY=VALUE"))?;
    let key = key.trim();
    if !is_known(key) {
        return Err(format!("unknown key `{key}`"));
    }
    Ok(Setting {
        key: key.to_string(),
        value: value.trim().to_string(),
        origin: Origin::Flag,
    })
}

fn parse<T: std::str::FromStr>(s: &Setting) -> Result<T, String> {
    s.value
        .parse()
        .map_err(|_| format!("{}: invalid value `{}` for {}", s.origin, s.value, s.key))
}

fn path_or_none(v: &str) -> Option<PathBuf> {
    (!v.is_empty() && v != "none").then(|| PathBuf::from(v))
}

impl RunConfig {
    /// Applies `settings` in order (later wins) on top of the defaults.
    /// The preset is applied first, then model keys, then the training
    /// recipe for that model, then everything else.
    pub fn resolve(default_preset: &str, settings: &[Setting]) -> Result<Self, String> {
        let last = |key: &str| settings.iter().rev().find(|s| s.key == key);
        let preset = last("preset").map_or(default_preset, |s| s.value.as_str()).to_string();
        let mut model = ViTConfig::preset(&preset)
            .ok_or_else(|| format!("unknown preset `{preset}` (toy, vit-b16-224, gradcheck)"))?;
        for s in settings {
            if let Some(r) = set_model(&mut model, &s.key, &s.value) {
                r.map_err(|e| format!("{}: {e}", s.origin))?;
            }
        }
        model.validate().map_err(|e| e.to_string())?;
        let mut train = TrainConfig::for_model(&model);
        for s in settings {
            if let Some(r) = set_train(&mut train, &s.key, &s.value) {
                r.map_err(|e| format!("{}: {e}", s.origin))?;
            }
        }
        train.validate(&model).map_err(|e| e.to_string())?;

        let mut cfg = RunConfig {
            preset,
            train,
            data: DataSource::Synth,
            synth_per_class: 100,
            synth_valid_per_class: 20,
            synth_size: model.image_size,
            synth_seed: 0,
            synth_export: None,
            out_dir: PathBuf::from("run"),
            checkpoint: None,
            init: None,
            image: None,
            split: EvalSplit::Only(vitse_core::data::Split::Train),
            gradcheck_eps: 1e-6,
            gradcheck_tolerance: 1e-4,
            gradcheck_batch: 2,
            model,
        };
        for s in settings {
            let v = s.value.as_str();
            match s.key.as_str() {
                "data" => {
                    cfg.data = match v {
                        "synth" => DataSource::Synth,
                        path => DataSource::Csv(PathBuf::from(path)),
                    }
                }
                "synth_per_class" => cfg.synth_per_class = parse(s)?,
                "synth_valid_per_class" => cfg.synth_valid_per_class = parse(s)?,
                "synth_size" => cfg.synth_size = parse(s)?,
                "synth_seed" => cfg.synth_seed = parse(s)?,
                "synth_export" => cfg.synth_export = path_or_none(v),
                "out_dir" => cfg.out_dir = PathBuf::from(v),
                "checkpoint" => cfg.checkpoint = path_or_none(v),
                "init" => cfg.init = path_or_none(v),
                "image" => cfg.image = path_or_none(v),
                "split" => {
                    cfg.split = match v {
                        "all" => EvalSplit::All,
                        other => EvalSplit::Only(vitse_core::data::Split::parse(other).ok_or_else(|| {
                            format!("{}: split must be train, valid, test or all", s.origin)
                        })?),
                    }
                }
                "gradcheck_eps" => cfg.gradcheck_eps = parse(s)?,
                "gradcheck_tolerance" => cfg.gradcheck_tolerance = parse(s)?,
                "gradcheck_batch" => cfg.gradcheck_batch = parse(s)?,
                _ => {}
            }
        }
        if cfg.synth_size == 0 {
            return Err("synth_size must be positive".into());
        }
        if !(cfg.gradcheck_eps > 0.0) || !(cfg.gradcheck_tolerance > 0.0) || cfg.gradcheck_batch == 0 {
            return Err("gradcheck_eps, gradcheck_tolerance and gradcheck_batch must be positive".into());
        }
        Ok(cfg)
    }

    /// Every resolved key, one `key = value` per line. Parsing this text
    /// back yields the same configuration.
    pub fn echo(&self) -> String {
        let path = |p: &Option<PathBuf>| p.as_ref().map_or("none".to_string(), |p| p.display().to_string());
        let run: Vec<(&'static str, String)> = vec![
            ("preset", self.preset.clone()),
            (
                "data",
                match &self.data {
                    DataSource::Synth => "synth".into(),
                    DataSource::Csv(p) => p.display().to_string(),
                },
            ),
            ("synth_per_class", self.synth_per_class.to_string()),
            ("synth_valid_per_class", self.synth_valid_per_class.to_string()),
            ("synth_size", self.synth_size.to_string()),
            ("synth_seed", self.synth_seed.to_string()),
            ("synth_export", path(&self.synth_export)),
            ("out_dir", self.out_dir.display().to_string()),
            ("checkpoint", path(&self.checkpoint)),
            ("init", path(&self.init)),
            ("image", path(&self.image)),
            (
                "split",
                match self.split {
                    EvalSplit::All => "all".into(),
                    EvalSplit::Only(s) => s.as_str().into(),
                },
            ),
            ("gradcheck_eps", self.gradcheck_eps.to_string()),
            ("gradcheck_tolerance", self.gradcheck_tolerance.to_string()),
            ("gradcheck_batch", self.gradcheck_batch.to_string()),
        ];
        render(&run) + &render(&model_entries(&self.model)) + &render(&train_entries(&self.train))
    }
}
