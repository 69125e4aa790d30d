//! Pre-training and fine-tuning loops, and evaluation.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::attention::DropPath;
use crate::error::{Error, Result};
use crate::masking::plan_for;
use crate::model::{classification_loss, AudioMaeModel, ModelConfig, Objective};
use crate::numerics::{AdamW, Checkpoint, DType, LrSchedule, Tape};
use crate::pipeline::config::{Phase, TrainConfig};
use crate::pipeline::data::{item_rng, ClipSource, Example, FeaturePipeline, Loader, Mode};
use crate::pipeline::metrics::{argmax, mean_average_precision, EvalReport};
use crate::pipeline::sampling::{
    balance_expand, class_weights, instance_weights, weighted_sample_without_replacement,
};

/// One pre-training step as written to the JSONL log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainLog {
    pub step: usize,
    pub epoch: usize,
    pub lr: f64,
    pub l_r: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub l_c: Option<f64>,
    pub loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinetuneLog {
    pub step: usize,
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochEval {
    pub epoch: usize,
    pub train_accuracy: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub eval: Option<EvalReport>,
}

/// Output locations and limits shared by both loops.
#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub log_path: Option<PathBuf>,
    pub checkpoint_path: Option<PathBuf>,
    /// Stop after this many optimizer steps (the schedule still spans the full run).
    pub max_steps: Option<usize>,
    pub workers: Option<usize>,
    pub dtype: DType,
}

struct JsonlSink(Option<BufWriter<File>>);

impl JsonlSink {
    fn open(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(JsonlSink(None)),
            Some(p) => {
                if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
                }
                let f = File::create(p).map_err(|e| Error::io(p, e))?;
                Ok(JsonlSink(Some(BufWriter::new(f))))
            }
        }
    }

    fn write(&mut self, v: &impl Serialize) -> Result<()> {
        if let Some(w) = &mut self.0 {
            serde_json::to_writer(&mut *w, v)?;
            w.write_all(b"\n")
                .and_then(|_| w.flush())
                .map_err(|e| Error::io("<log>", e))?;
        }
        Ok(())
    }
}

fn loader<'a>(
    source: &'a dyn ClipSource,
    fp: &'a FeaturePipeline,
    cfg: &TrainConfig,
    opts: &RunOptions,
) -> Loader<'a> {
    let mut l = Loader::new(source, fp, cfg.seed);
    if let Some(w) = opts.workers {
        l.workers = w;
    }
    l
}

fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut item_rng(seed ^ 0x5EED_0F0D, epoch, usize::MAX >> 32));
    order
}

fn check_shape(model: &AudioMaeModel, cfg: &TrainConfig) -> Result<()> {
    let m = &model.config;
    if (m.frames, m.bins) != (cfg.target_frames, cfg.n_mels) {
        return Err(Error::Config(format!(
            "training features are {}x{}, model expects {}x{}",
            cfg.target_frames, cfg.n_mels, m.frames, m.bins
        )));
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct PretrainSummary {
    pub log: Vec<PretrainLog>,
    pub steps: usize,
}

/// Masked-reconstruction pre-training. Each epoch visits every clip once in a
/// fresh order; every item draws its own mask.
pub fn run_pretrain(
    model: &mut AudioMaeModel,
    source: &dyn ClipSource,
    cfg: &TrainConfig,
    opts: &RunOptions,
) -> Result<PretrainSummary> {
    cfg.validate()?;
    if cfg.phase != Phase::Pretrain {
        return Err(Error::Config(format!(
            "{} is not a pre-training config",
            cfg.name
        )));
    }
    if !model.has_decoder() {
        return Err(Error::Config("pre-training needs a decoder".into()));
    }
    check_shape(model, cfg)?;
    if source.is_empty() {
        return Err(Error::Config("no training clips".into()));
    }
    let fp = FeaturePipeline::from_config(cfg)?;
    let data = loader(source, &fp, cfg, opts);
    let steps_per_epoch = source.len().div_ceil(cfg.batch_size);
    let sched = LrSchedule::new(
        cfg.base_lr,
        cfg.batch_size,
        cfg.warmup_epochs,
        cfg.epochs,
        steps_per_epoch,
        cfg.min_lr,
    )?;
    let mut opt = AdamW::new(cfg.optimizer, &model.store);
    let mut sink = JsonlSink::open(opts.log_path.as_deref())?;
    let grid = *model.grid();
    let (rt, rf) = cfg.masking.ratios();
    let limit = opts.max_steps.unwrap_or(usize::MAX);
    let mut log = Vec::new();
    let mut step = 0;
    'epochs: for epoch in 0..cfg.epochs {
        if step >= limit {
            break;
        }
        let order = epoch_order(source.len(), cfg.seed, epoch);
        let result = data.stream(&order, epoch, cfg.batch_size, Mode::Train, |batch| {
            if step >= limit {
                return Ok(());
            }
            let entry = pretrain_step(
                model,
                &mut opt,
                &sched,
                cfg,
                &batch,
                epoch,
                step,
                grid,
                (rt, rf),
            )?;
            sink.write(&entry)?;
            log.push(entry);
            step += 1;
            Ok(())
        });
        if let Err(e) = result {
            if matches!(e, Error::NonFinite(_)) {
                if let Some(p) = &opts.checkpoint_path {
                    let diag = p.with_extension("nan.smae");
                    warn!(
                        "non-finite loss at step {step}; saving diagnostic checkpoint {}",
                        diag.display()
                    );
                    model.save(
                        &diag,
                        DType::F64,
                        json!({ "halted_at_step": step, "error": e.to_string() }),
                    )?;
                }
            }
            return Err(e);
        }
        if step >= limit {
            break 'epochs;
        }
    }
    if let Some(p) = &opts.checkpoint_path {
        model.save(p, opts.dtype, json!({ "train": cfg, "steps": step }))?;
    }
    info!("pre-training finished after {step} steps");
    Ok(PretrainSummary { log, steps: step })
}

#[allow(clippy::too_many_arguments)]
fn pretrain_step(
    model: &mut AudioMaeModel,
    opt: &mut AdamW,
    sched: &LrSchedule,
    cfg: &TrainConfig,
    batch: &[Example],
    epoch: usize,
    step: usize,
    grid: crate::patches::PatchGridSpec,
    (rt, rf): (f64, f64),
) -> Result<PretrainLog> {
    model.store.zero_grad();
    let inv_b = 1.0 / batch.len() as f64;
    let (mut l_r, mut l_c, mut total) = (0.0, None::<f64>, 0.0);
    for (k, ex) in batch.iter().enumerate() {
        let mut rng = item_rng(cfg.seed ^ 0x4D41_534B, epoch, step * cfg.batch_size + k);
        let plan = plan_for(&grid, cfg.masking.strategy, rt, rf, &mut rng)?;
        let mut tape = Tape::new();
        let out = model.pretrain_forward(&mut tape, &ex.spec, &plan, cfg.objective)?;
        let scaled = tape.scale(out.loss, inv_b);
        tape.backward_params(scaled, &mut model.store)?;
        l_r += out.report.l_r * inv_b;
        if let Some(c) = out.report.l_c {
            *l_c.get_or_insert(0.0) += c * inv_b;
        }
        total += out.report.total * inv_b;
    }
    let lr = sched.lr_at_step(step);
    opt.step(&mut model.store, lr)?;
    Ok(PretrainLog {
        step,
        epoch,
        lr,
        l_r,
        l_c,
        loss: total,
    })
}

/// Mean masked reconstruction loss over every clip under `draws` fixed masks
/// per clip (eval features, masks seeded by `seed`).
pub fn masked_mse(
    model: &AudioMaeModel,
    source: &dyn ClipSource,
    cfg: &TrainConfig,
    draws: usize,
    seed: u64,
) -> Result<f64> {
    check_shape(model, cfg)?;
    let fp = FeaturePipeline::from_config(cfg)?;
    let data = Loader {
        workers: 0,
        ..Loader::new(source, &fp, seed)
    };
    let grid = *model.grid();
    let (rt, rf) = cfg.masking.ratios();
    let mut total = 0.0;
    for i in 0..source.len() {
        let ex = data.example(i, 0, i, Mode::Eval)?;
        for d in 0..draws {
            let mut rng = item_rng(seed, d, i);
            let plan = plan_for(&grid, cfg.masking.strategy, rt, rf, &mut rng)?;
            let mut tape = Tape::new();
            total += model
                .pretrain_forward(&mut tape, &ex.spec, &plan, Objective::Reconstruction)?
                .report
                .l_r;
        }
    }
    Ok(total / (source.len() * draws.max(1)) as f64)
}

/// Classifier with the encoder of `ck` and a fresh head over `n_classes`.
pub fn classifier_from_checkpoint(
    ck: &Checkpoint,
    n_classes: usize,
    seed: u64,
) -> Result<AudioMaeModel> {
    let stored = AudioMaeModel::config_from_checkpoint(ck)?;
    let config = ModelConfig {
        decoder: None,
        n_classes: Some(n_classes),
        ..stored
    };
    let mut model = AudioMaeModel::new(config, seed)?;
    model.load_encoder_from(ck)?;
    Ok(model)
}

#[derive(Clone, Debug)]
pub struct FinetuneSummary {
    pub log: Vec<FinetuneLog>,
    pub epochs: Vec<EpochEval>,
    pub steps: usize,
}

fn epoch_indices(source: &dyn ClipSource, cfg: &TrainConfig, epoch: usize) -> Result<Vec<usize>> {
    let labels = source.all_labels();
    let mut rng = item_rng(cfg.seed ^ 0x5A4D_504C, epoch, 0);
    if cfg.weighted_sampling {
        let k = cfg
            .weighted_sampling_size
            .unwrap_or(source.len())
            .min(source.len());
        let w = instance_weights(&labels, &class_weights(&labels, source.n_classes()));
        return weighted_sample_without_replacement(&w, k, &mut rng);
    }
    let mut idx = match &cfg.balance {
        Some(b) => {
            let names = source.class_names();
            let reference = names
                .iter()
                .position(|n| *n == b.reference_class)
                .or_else(|| b.reference_class.parse().ok().filter(|&c| c < names.len()))
                .ok_or_else(|| {
                    Error::Config(format!(
                        "balance reference class {:?} not in label space",
                        b.reference_class
                    ))
                })?;
            balance_expand(&labels, reference, b.fraction)
        }
        None => (0..source.len()).collect(),
    };
    idx.shuffle(&mut rng);
    Ok(idx)
}

/// Fine-tuning with a fresh time+frequency mask per item and stochastic depth.
/// After each epoch the model is scored with masking off on `eval_source`.
pub fn run_finetune(
    model: &mut AudioMaeModel,
    source: &dyn ClipSource,
    eval_source: Option<&dyn ClipSource>,
    cfg: &TrainConfig,
    opts: &RunOptions,
) -> Result<FinetuneSummary> {
    cfg.validate()?;
    if cfg.phase != Phase::Finetune {
        return Err(Error::Config(format!(
            "{} is not a fine-tuning config",
            cfg.name
        )));
    }
    check_shape(model, cfg)?;
    let n_classes = source.n_classes();
    if model.n_classes() != Some(n_classes) {
        return Err(Error::Config(format!(
            "model head has {:?} classes, data has {n_classes}",
            model.n_classes()
        )));
    }
    let kind = cfg.loss.class_loss()?;
    let fp = FeaturePipeline::from_config(cfg)?;
    let data = loader(source, &fp, cfg, opts);
    let per_epoch = epoch_indices(source, cfg, 0)?.len();
    if per_epoch == 0 {
        return Err(Error::Config("no training clips".into()));
    }
    let steps_per_epoch = per_epoch.div_ceil(cfg.batch_size);
    let sched = LrSchedule::new(
        cfg.base_lr,
        cfg.batch_size,
        cfg.warmup_epochs,
        cfg.epochs,
        steps_per_epoch,
        cfg.min_lr,
    )?;
    let mut opt = AdamW::new(cfg.optimizer, &model.store);
    let mut sink = JsonlSink::open(opts.log_path.as_deref())?;
    let grid = *model.grid();
    let (rt, rf) = cfg.masking.ratios();
    let limit = opts.max_steps.unwrap_or(usize::MAX);
    let (mut log, mut evals, mut step) = (Vec::new(), Vec::new(), 0);
    for epoch in 0..cfg.epochs {
        if step >= limit {
            break;
        }
        let order = epoch_indices(source, cfg, epoch)?;
        let mut correct = 0usize;
        let mut seen = 0usize;
        data.stream(&order, epoch, cfg.batch_size, Mode::Train, |batch| {
            if step >= limit {
                return Ok(());
            }
            model.store.zero_grad();
            let inv_b = 1.0 / batch.len() as f64;
            let mut loss = 0.0;
            for (k, ex) in batch.iter().enumerate() {
                let mut rng = item_rng(cfg.seed ^ 0x4D41_534B, epoch, step * cfg.batch_size + k);
                let plan = plan_for(&grid, cfg.masking.strategy, rt, rf, &mut rng)?;
                let mut drop = DropPath {
                    rate: cfg.drop_path,
                    rng: &mut rng,
                };
                let mut tape = Tape::new();
                let z = model.classify(&mut tape, &ex.spec, Some(&plan), Some(&mut drop))?;
                if argmax(tape.value(z).data()) == argmax(&ex.target) {
                    correct += 1;
                }
                seen += 1;
                let l = classification_loss(&mut tape, z, &ex.target, kind)?;
                let v = tape.value(l).item();
                if !v.is_finite() {
                    return Err(Error::NonFinite(format!(
                        "classification loss {v} at step {step}"
                    )));
                }
                loss += v * inv_b;
                let scaled = tape.scale(l, inv_b);
                tape.backward_params(scaled, &mut model.store)?;
            }
            let lr = sched.lr_at_step(step);
            opt.step(&mut model.store, lr)?;
            let entry = FinetuneLog {
                step,
                epoch,
                lr,
                loss,
            };
            sink.write(&entry)?;
            log.push(entry);
            step += 1;
            Ok(())
        })?;
        if epoch + 1 == cfg.epochs || step >= limit {
            // the final report should describe the weights as they will be stored
            if opts.dtype == DType::F32 {
                model.store.iter_mut().for_each(|p| {
                    p.value
                        .data_mut()
                        .iter_mut()
                        .for_each(|v| *v = *v as f32 as f64)
                });
            }
        }
        let eval = match eval_source {
            Some(s) => Some(evaluate(model, s, &fp, opts.workers)?),
            None => None,
        };
        let e = EpochEval {
            epoch,
            train_accuracy: correct as f64 / seen.max(1) as f64,
            eval,
        };
        if let Some(r) = &e.eval {
            info!(
                "epoch {epoch}: accuracy {:.4}, mAP {:.4}",
                r.accuracy, r.map
            );
        }
        sink.write(&e)?;
        evals.push(e);
    }
    if let Some(p) = &opts.checkpoint_path {
        model.save(p, opts.dtype, json!({ "train": cfg, "steps": step }))?;
    }
    Ok(FinetuneSummary {
        log,
        epochs: evals,
        steps: step,
    })
}

/// Eval-mode scores (no masking, no augmentation) for every clip.
pub fn predict_all(
    model: &AudioMaeModel,
    source: &dyn ClipSource,
    fp: &FeaturePipeline,
    workers: Option<usize>,
) -> Result<Vec<Vec<f64>>> {
    let eval_fp = FeaturePipeline {
        augment: Default::default(),
        ..fp.clone()
    };
    let mut l = Loader::new(source, &eval_fp, 0);
    if let Some(w) = workers {
        l.workers = w;
    }
    let order: Vec<usize> = (0..source.len()).collect();
    let mut scores = Vec::with_capacity(order.len());
    l.stream(&order, 0, 16, Mode::Eval, |batch| {
        for ex in &batch {
            scores.push(model.predict(&ex.spec)?);
        }
        Ok(())
    })?;
    Ok(scores)
}

/// mAP over classes with positives, and top-1 accuracy counting a hit when
/// the arg-max class is among the clip's labels.
pub fn evaluate(
    model: &AudioMaeModel,
    source: &dyn ClipSource,
    fp: &FeaturePipeline,
    workers: Option<usize>,
) -> Result<EvalReport> {
    let scores = predict_all(model, source, fp, workers)?;
    report_from_scores(&scores, &source.all_labels(), source.n_classes())
}

pub fn report_from_scores(
    scores: &[Vec<f64>],
    labels: &[Vec<usize>],
    n_classes: usize,
) -> Result<EvalReport> {
    let truth: Vec<Vec<bool>> = labels
        .iter()
        .map(|ls| (0..n_classes).map(|c| ls.contains(&c)).collect())
        .collect();
    let (map, per_class_ap) = mean_average_precision(scores, &truth)?;
    let hits = scores
        .iter()
        .zip(labels)
        .filter(|(s, ls)| ls.contains(&argmax(s)))
        .count();
    Ok(EvalReport {
        map,
        accuracy: hits as f64 / scores.len().max(1) as f64,
        per_class_ap,
        n_items: scores.len(),
    })
}

/// Deterministic seeds for dataset construction and model init.
pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
