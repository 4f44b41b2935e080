//! The four subcommands. Each writes its resolved configuration and
//! results to `<out_dir>/<command>.log` and echoes the log to stdout.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vitse_core::data::{synth_dataset, Dataset, Split};
use vitse_core::gradcheck::{no_hook, ModelCheck, ParamGroupError};
use vitse_core::rollout::{attention_rollout, upscale_nearest};
use vitse_core::se::forward;
use vitse_core::train::{eval_input, evaluate, train_epoch, EvalReport, TrainState};
use vitse_core::vit::AttentionTrace;
use vitse_core::{ModelParams, Tape, Tensor};

use crate::checkpoint::Checkpoint;
use crate::error::CliError;
use crate::fer::{read_fer2013, FER_CLASSES};
use crate::pgm::{save_image, save_map};
use crate::runconfig::{DataSource, EvalSplit, RunConfig};

pub const METRICS_HEADER: &str = "epoch,train_loss,valid_accuracy";

/// Offset between the seeds of the synthetic train and validation sets.
const VALID_SEED_OFFSET: u64 = 0x9E37_79B9_7F4A_7C15;

struct Log {
    file: BufWriter<File>,
}

impl Log {
    fn open(cfg: &RunConfig, command: &str) -> Result<Self, CliError> {
        fs::create_dir_all(&cfg.out_dir)?;
        let path = cfg.out_dir.join(format!("{command}.log"));
        let mut log = Log {
            file: BufWriter::new(File::create(&path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?),
        };
        log.line("# resolved configuration")?;
        for line in cfg.echo().lines() {
            log.line(line)?;
        }
        Ok(log)
    }

    fn line(&mut self, text: &str) -> Result<(), CliError> {
        println!("{text}");
        writeln!(self.file, "{text}")?;
        Ok(())
    }
}

/// Training, validation and test samples named by the configuration.
pub fn load_dataset(cfg: &RunConfig) -> Result<Dataset, CliError> {
    match &cfg.data {
        DataSource::Csv(path) => Ok(read_fer2013(path)?),
        DataSource::Synth => {
            let k = cfg.model.num_classes;
            let mut data = synth_dataset(k, cfg.synth_per_class, cfg.synth_size, cfg.synth_seed)?;
            if cfg.synth_valid_per_class > 0 {
                let seed = cfg.synth_seed.wrapping_add(VALID_SEED_OFFSET);
                let valid = synth_dataset(k, cfg.synth_valid_per_class, cfg.synth_size, seed)?;
                data.samples.extend(valid.with_split(Split::Valid).samples);
            }
            Ok(data)
        }
    }
}

/// Display names of the classes of the configured data source.
pub fn class_names(cfg: &RunConfig, classes: usize) -> Vec<String> {
    match cfg.data {
        DataSource::Csv(_) if classes == FER_CLASSES.len() => FER_CLASSES.iter().map(|s| s.to_string()).collect(),
        _ => (0..classes).map(|k| format!("class{k}")).collect(),
    }
}

/// Writes every sample as `<class>_<index>.pgm`, indexed within its class.
pub fn export_pgms(data: &Dataset, dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir)?;
    let mut next = vec![0usize; data.num_classes];
    for s in &data.samples {
        save_image(&dir.join(format!("{}_{}.pgm", s.label, next[s.label])), &s.image)?;
        next[s.label] += 1;
    }
    Ok(())
}

fn subset(data: &Dataset, split: EvalSplit) -> Dataset {
    match split {
        EvalSplit::All => data.clone(),
        EvalSplit::Only(s) => data.split(s),
    }
}

fn require<'a>(path: &'a Option<PathBuf>, what: &str) -> Result<&'a Path, CliError> {
    path.as_deref()
        .ok_or_else(|| CliError::Usage(format!("missing {what}")))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub steps: u64,
    pub epoch_losses: Vec<f64>,
    pub valid_accuracy: Vec<f64>,
    /// Accuracy on the training split after the last epoch.
    pub train_accuracy: Option<f64>,
    pub final_checkpoint: PathBuf,
}

/// Copies every tensor of `ckpt` whose name and shape match; everything
/// else keeps its fresh initialization.
fn warm_start(params: &mut ModelParams<Tensor<f32>>, ckpt: &Checkpoint, log: &mut Log) -> Result<(), CliError> {
    let stored = ckpt.params()?;
    let mut from_ckpt = std::collections::HashMap::new();
    stored.visit(&mut |name, t| {
        from_ckpt.insert(name.to_string(), t.clone());
    });
    let (mut copied, mut kept) = (0, Vec::new());
    params.visit_mut(&mut |name, slot| match from_ckpt.get(name) {
        Some(t) if t.shape() == slot.shape() => {
            *slot = t.clone();
            copied += 1;
        }
        _ => kept.push(name.to_string()),
    });
    if copied == 0 {
        return Err(CliError::Config("the init checkpoint shares no tensor with this model".into()));
    }
    log.line(&format!("init: {copied} tensors from checkpoint, fresh: [{}]", kept.join(", ")))
}

pub fn cmd_train(cfg: &RunConfig) -> Result<TrainSummary, CliError> {
    let mut log = Log::open(cfg, "train")?;
    let (model, train) = (&cfg.model, &cfg.train);
    let data = load_dataset(cfg)?;
    if data.num_classes != model.num_classes {
        return Err(CliError::Config(format!(
            "dataset has {} classes, model num_classes is {}",
            data.num_classes, model.num_classes
        )));
    }
    if let Some(dir) = &cfg.synth_export {
        export_pgms(&data, dir)?;
    }
    let train_set = data.split(Split::Train);
    let valid_set = data.split(Split::Valid);
    if train_set.is_empty() && train.epochs > 0 {
        return Err(CliError::Data("no training samples".into()));
    }
    log.line(&format!(
        "data: {} train, {} valid, {} test samples",
        train_set.len(),
        valid_set.len(),
        data.split(Split::Test).len()
    ))?;

    let mut rng = ChaCha8Rng::seed_from_u64(train.rng_seed);
    let mut params = ModelParams::init(model, train.se_enabled, &mut rng)?;
    if let Some(init) = &cfg.init {
        warm_start(&mut params, &Checkpoint::load(init)?, &mut log)?;
    }
    let mut state = TrainState::new(params);

    let metrics_path = cfg.out_dir.join("metrics.csv");
    let mut metrics = BufWriter::new(File::create(&metrics_path)?);
    writeln!(metrics, "{METRICS_HEADER}")?;
    metrics.flush()?;

    let mut summary = TrainSummary {
        steps: 0,
        epoch_losses: Vec::new(),
        valid_accuracy: Vec::new(),
        train_accuracy: None,
        final_checkpoint: cfg.out_dir.join("final.vse"),
    };
    for epoch in 1..=train.epochs {
        let stats = train_epoch(&mut state, &train_set, model, train, &mut rng)?;
        if !stats.mean_loss.is_finite() {
            return Err(CliError::Numeric(format!("epoch {epoch}: training loss is {}", stats.mean_loss)));
        }
        let valid = if valid_set.is_empty() {
            f64::NAN
        } else {
            evaluate(&state.params, model, &train.norm, &valid_set)?.accuracy
        };
        writeln!(metrics, "{epoch},{:.6},{valid:.6}", stats.mean_loss)?;
        metrics.flush()?;
        Checkpoint::from_params(model, train, &state.params, state.step())
            .save(&cfg.out_dir.join(format!("epoch_{epoch:03}.vse")))?;
        log.line(&format!(
            "epoch {epoch}: steps {} train_loss {:.6} valid_accuracy {valid:.6}",
            state.step(),
            stats.mean_loss
        ))?;
        summary.epoch_losses.push(stats.mean_loss);
        summary.valid_accuracy.push(valid);
    }
    Checkpoint::from_params(model, train, &state.params, state.step()).save(&summary.final_checkpoint)?;
    summary.steps = state.step();
    if !train_set.is_empty() {
        let acc = evaluate(&state.params, model, &train.norm, &train_set)?.accuracy;
        log.line(&format!("final train_accuracy {acc:.6}"))?;
        summary.train_accuracy = Some(acc);
    }
    log.line(&format!("wrote {}", summary.final_checkpoint.display()))?;
    Ok(summary)
}

/// Confusion counts with a header row of class names.
pub fn confusion_csv(report: &EvalReport, names: &[String]) -> String {
    let mut out = names.join(",") + "\n";
    for row in &report.confusion {
        out += &row.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(",");
        out.push('\n');
    }
    out
}

pub fn cmd_eval(cfg: &RunConfig) -> Result<EvalReport, CliError> {
    let ckpt_path = require(&cfg.checkpoint, "checkpoint (use --checkpoint)")?;
    let mut log = Log::open(cfg, "eval")?;
    let ckpt = Checkpoint::load(ckpt_path)?;
    let params = ckpt.params()?;
    let data = load_dataset(cfg)?;
    if data.num_classes != ckpt.model.num_classes {
        return Err(CliError::Data(format!(
            "dataset has {} classes, checkpoint model has {}",
            data.num_classes, ckpt.model.num_classes
        )));
    }
    let set = subset(&data, cfg.split);
    let report = evaluate(&params, &ckpt.model, &ckpt.train.norm, &set)?;
    let names = class_names(cfg, ckpt.model.num_classes);
    log.line(&format!("samples {} accuracy {:.6}", report.total(), report.accuracy))?;
    for (name, acc) in names.iter().zip(&report.per_class_accuracy) {
        log.line(&format!("  {name}: {acc:.6}"))?;
    }
    let path = cfg.out_dir.join("confusion.csv");
    fs::write(&path, confusion_csv(&report, &names))?;
    log.line(&format!("wrote {}", path.display()))?;
    Ok(report)
}

pub fn cmd_attnmap(cfg: &RunConfig) -> Result<Vec<PathBuf>, CliError> {
    let ckpt_path = require(&cfg.checkpoint, "checkpoint (use --checkpoint)")?;
    let image_path = require(&cfg.image, "input image (use --image)")?;
    let mut log = Log::open(cfg, "attnmap")?;
    let ckpt = Checkpoint::load(ckpt_path)?;
    let model = &ckpt.model;
    if model.depth == 0 {
        return Err(CliError::Config("the model has no encoder layers to map".into()));
    }
    let params = ckpt.params()?;
    let image = crate::pgm::load_image(image_path)?;
    let x = eval_input(&image, model, &ckpt.train.norm)?;
    let tape = Tape::new();
    let bound = params.bind_const(&tape);
    let mut trace = AttentionTrace::default();
    let logits = forward(&x, &bound, model, Some(&mut trace))?.logits.value();
    let predicted = logits.argmax_lastdim()[0];
    let maps = attention_rollout(&trace)?;

    let mut written = Vec::new();
    for (i, m) in maps.layer_maps.iter().enumerate() {
        let path = cfg.out_dir.join(format!("attn_layer{}.pgm", i + 1));
        save_map(&path, &upscale_nearest(m, model.image_size)?)?;
        written.push(path);
    }
    let path = cfg.out_dir.join("attn_rollout.pgm");
    save_map(&path, &upscale_nearest(&maps.rollout_map, model.image_size)?)?;
    written.push(path);
    log.line(&format!("predicted class {predicted}"))?;
    for p in &written {
        log.line(&format!("wrote {}", p.display()))?;
    }
    Ok(written)
}

pub fn cmd_gradcheck(cfg: &RunConfig) -> Result<Vec<ParamGroupError>, CliError> {
    let mut log = Log::open(cfg, "gradcheck")?;
    let mut check = ModelCheck::random(&cfg.model, cfg.train.se_enabled, cfg.gradcheck_batch, cfg.train.rng_seed)?;
    let groups = check.run(&cfg.model, cfg.gradcheck_eps, &no_hook)?;
    let tol = cfg.gradcheck_tolerance;
    let mut failed = Vec::new();
    for g in &groups {
        let ok = g.max_relative_error < tol;
        log.line(&format!(
            "{:<28} {:.3e} {}",
            g.name,
            g.max_relative_error,
            if ok { "ok" } else { "FAIL" }
        ))?;
        if !ok {
            failed.push(g.name.clone());
        }
    }
    let worst = groups.iter().map(|g| g.max_relative_error).fold(0.0, f64::max);
    log.line(&format!("{} groups, max relative error {worst:.3e}, tolerance {tol:e}", groups.len()))?;
    if failed.is_empty() {
        Ok(groups)
    } else {
        Err(CliError::Numeric(format!("gradient mismatch in {}", failed.join(", "))))
    }
}
