//! Command-line front end. Each subcommand resolves its configuration, writes
//! `config.resolved.json` into `--out`, then calls into the pipeline.
//!
//! Exit codes: 0 success, 1 configuration or usage error, 2 runtime failure.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::augment::NoiseDomain;
use crate::dsp::{
    decode_wav, encode_wav, griffin_lim_seeded, log_mel, resample_linear, LogMelSpectrogram,
    StatsAccumulator,
};
use crate::dsp::{MelParams, Waveform, DEFAULT_SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::masking::{plan_for, MaskStrategy};
use crate::model::{AudioMaeModel, EncoderConfig, ModelConfig};
use crate::numerics::{Checkpoint, DType};
use crate::pipeline::{
    classifier_from_checkpoint, evaluate, reconstruct, run_finetune, run_pretrain, ClipRecord,
    ClipSource, FeaturePipeline, InMemoryClips, Manifest, ManifestClips, RunOptions, SynthConfig,
    SynthKind, TrainConfig,
};
use crate::render::{value_range, write_png, RenderOptions};

#[derive(Parser, Debug)]
#[command(
    name = "smae",
    version,
    about = "Masked spectrogram autoencoders: pre-train, fine-tune, inspect"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Masked-reconstruction pre-training.
    Pretrain(PretrainArgs),
    /// Classifier fine-tuning from a pre-trained encoder (or from scratch).
    Finetune(FinetuneArgs),
    /// Score a classifier checkpoint.
    Eval(EvalArgs),
    /// Mask, reconstruct and resynthesise one clip.
    Reconstruct(ReconstructArgs),
    /// Dataset mean / standard deviation of log-mel cells.
    Stats(StatsArgs),
    /// Write a synthetic dataset as WAV files plus a manifest.
    Synth(SynthArgs),
    /// Render a waveform or spectrogram file as PNG.
    Render(RenderArgs),
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone, Default)]
pub struct TrainSel {
    /// Training config JSON; overrides --preset.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// One of as2m-pt, as2m, as20k, esc, spc2, spc1, sid, toy-pt, toy-ft.
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub max_steps: Option<usize>,
    #[arg(long, value_parser = parse_noise_domain)]
    pub noise_domain: Option<NoiseDomain>,
}

#[derive(Args, Debug, Clone, Default)]
pub struct MaskSel {
    #[arg(long, value_parser = parse_strategy)]
    pub strategy: Option<MaskStrategy>,
    /// Unstructured masking ratio.
    #[arg(long)]
    pub ratio: Option<f64>,
    /// Fraction of time columns masked.
    #[arg(long = "rt", alias = "ratio-t")]
    pub rt: Option<f64>,
    /// Fraction of frequency rows masked.
    #[arg(long = "rf", alias = "ratio-f")]
    pub rf: Option<f64>,
}

#[derive(Args, Debug, Clone, Default)]
pub struct DataSel {
    /// JSONL manifest; clip paths resolve relative to it.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long, default_value = "train")]
    pub split: String,
    /// Synthetic data `kind:classes:per_class[:seconds[:noise_floor]]`, e.g. `tones:4:50`.
    #[arg(long)]
    pub synth: Option<String>,
}

#[derive(Args, Debug, Clone, Default)]
pub struct ModelSel {
    /// Model config JSON.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// toy, vit-s, vit-b or vit-l.
    #[arg(long)]
    pub variant: Option<String>,
    /// Store checkpoints in f64 instead of f32.
    #[arg(long)]
    pub f64: bool,
}

#[derive(Args, Debug)]
pub struct PretrainArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub train: TrainSel,
    #[command(flatten)]
    pub mask: MaskSel,
    #[command(flatten)]
    pub data: DataSel,
    #[command(flatten)]
    pub model: ModelSel,
}

#[derive(Args, Debug)]
pub struct FinetuneArgs {
    #[command(flatten)]
    pub common: Common,
    /// Pre-trained checkpoint whose encoder is fine-tuned.
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    #[command(flatten)]
    pub train: TrainSel,
    #[command(flatten)]
    pub mask: MaskSel,
    #[command(flatten)]
    pub data: DataSel,
    /// Manifest split scored after every epoch.
    #[arg(long)]
    pub eval_split: Option<String>,
    /// Synthetic evaluation set (drawn with seed + 1).
    #[arg(long)]
    pub eval_synth: Option<String>,
    #[command(flatten)]
    pub model: ModelSel,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub ckpt: PathBuf,
    #[command(flatten)]
    pub train: TrainSel,
    #[command(flatten)]
    pub data: DataSel,
}

#[derive(Args, Debug)]
pub struct ReconstructArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Input WAV; alternatively pick clip --index of --synth.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub synth: Option<String>,
    #[arg(long, default_value_t = 0)]
    pub index: usize,
    #[command(flatten)]
    pub train: TrainSel,
    #[command(flatten)]
    pub mask: MaskSel,
    /// Packet-loss mode: mask 25% of time columns.
    #[arg(long)]
    pub plc: bool,
    /// Replace every patch with its prediction, not only masked ones.
    #[arg(long)]
    pub full: bool,
    #[arg(long, default_value_t = 32)]
    pub gl_iters: usize,
}

#[derive(Args, Debug)]
pub struct StatsArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub data: DataSel,
    /// WAV files or spectrogram JSON files (`{"frames", "bins", "values"}`).
    pub inputs: Vec<PathBuf>,
    #[arg(long, default_value_t = 128)]
    pub n_mels: usize,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, default_value = "tones", value_parser = parse_kind)]
    pub kind: SynthKind,
    #[arg(long, default_value_t = 4)]
    pub classes: usize,
    #[arg(long, default_value_t = 50)]
    pub per_class: usize,
    /// Extra clips per class written to the `test` split.
    #[arg(long, default_value_t = 0)]
    pub test_per_class: usize,
    #[arg(long, default_value_t = 0.64)]
    pub seconds: f64,
    #[arg(long, default_value_t = 0.01)]
    pub noise_floor: f64,
}

#[derive(Args, Debug)]
pub struct RenderArgs {
    #[command(flatten)]
    pub common: Common,
    /// WAV or spectrogram JSON.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value_t = 128)]
    pub n_mels: usize,
    /// Palette range as `lo,hi`.
    #[arg(long, value_parser = parse_range, allow_hyphen_values = true)]
    pub range: Option<(f64, f64)>,
    #[arg(long, default_value_t = 2)]
    pub scale: usize,
}

fn parse_strategy(s: &str) -> std::result::Result<MaskStrategy, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_noise_domain(s: &str) -> std::result::Result<NoiseDomain, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_kind(s: &str) -> std::result::Result<SynthKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_range(s: &str) -> std::result::Result<(f64, f64), String> {
    let (a, b) = s.split_once(',').ok_or("expected lo,hi")?;
    let lo: f64 = a.trim().parse().map_err(|_| format!("bad number {a:?}"))?;
    let hi: f64 = b.trim().parse().map_err(|_| format!("bad number {b:?}"))?;
    (lo < hi)
        .then_some((lo, hi))
        .ok_or_else(|| "lo must be below hi".to_string())
}

/// Spectrogram interchange file.
#[derive(Debug, Serialize, Deserialize)]
pub struct SpecFile {
    pub frames: usize,
    pub bins: usize,
    pub values: Vec<f64>,
}

fn config_io(path: &Path, e: std::io::Error) -> Error {
    Error::Config(format!("cannot read {}: {e}", path.display()))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| config_io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn write_json(path: &Path, v: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(v)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn prepare_out(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn resolved(common: &Common, command: &str, body: Value) -> Result<()> {
    prepare_out(&common.out)?;
    let mut v = json!({ "command": command, "seed": common.seed });
    if let (Value::Object(m), Value::Object(b)) = (&mut v, body) {
        m.extend(b);
    }
    write_json(&common.out.join("config.resolved.json"), &v)
}

fn train_config(sel: &TrainSel, default_preset: &str, seed: u64) -> Result<TrainConfig> {
    let mut cfg = match (&sel.config, &sel.preset) {
        (Some(p), _) => {
            let text = std::fs::read_to_string(p).map_err(|e| config_io(p, e))?;
            TrainConfig::from_json(&text)?
        }
        (None, Some(name)) => TrainConfig::preset(name)?,
        (None, None) => TrainConfig::preset(default_preset)?,
    };
    if let Some(e) = sel.epochs {
        cfg.epochs = e;
        cfg.warmup_epochs = cfg.warmup_epochs.min(e);
    }
    if let Some(b) = sel.batch_size {
        cfg.batch_size = b;
    }
    if let Some(d) = sel.noise_domain {
        cfg.augment.noise_domain = d;
    }
    cfg.seed = seed;
    cfg.validate()?;
    Ok(cfg)
}

fn apply_mask(cfg: &mut TrainConfig, m: &MaskSel) {
    if let Some(s) = m.strategy {
        cfg.masking.strategy = s;
    }
    if let Some(r) = m.ratio {
        cfg.masking.ratio = r;
    }
    if let Some(r) = m.rt {
        cfg.masking.ratio_t = r;
    }
    if let Some(r) = m.rf {
        cfg.masking.ratio_f = r;
    }
}

fn parse_synth(spec: &str, seconds: f64, seed: u64) -> Result<SynthConfig> {
    let parts: Vec<&str> = spec.split(':').collect();
    let bad = || {
        Error::Config(format!(
            "synthetic data {spec:?}: expected kind:classes:per_class[:seconds[:noise_floor]]"
        ))
    };
    if !(3..=5).contains(&parts.len()) {
        return Err(bad());
    }
    let num = |s: &str| s.parse::<f64>().map_err(|_| bad());
    let int = |s: &str| s.parse::<usize>().map_err(|_| bad());
    let mut cfg = SynthConfig::tones(int(parts[1])?, int(parts[2])?, seconds, seed);
    cfg.kind = parts[0].parse()?;
    if let Some(s) = parts.get(3) {
        cfg.seconds = num(s)?;
    }
    if let Some(f) = parts.get(4) {
        cfg.noise_floor = num(f)?;
    }
    if cfg.n_classes == 0 || cfg.per_class == 0 || !(cfg.seconds > 0.0) {
        return Err(bad());
    }
    Ok(cfg)
}

fn data_source(
    sel: &DataSel,
    split: &str,
    seconds: f64,
    seed: u64,
) -> Result<(Box<dyn ClipSource>, Value)> {
    match (&sel.manifest, &sel.synth) {
        (Some(_), Some(_)) => Err(Error::Config(
            "give either --manifest or --synth, not both".into(),
        )),
        (Some(m), None) => {
            if !m.exists() {
                return Err(Error::Config(format!("manifest {} not found", m.display())));
            }
            let src = ManifestClips::open(m, split)?;
            Ok((Box::new(src), json!({ "manifest": m, "split": split })))
        }
        (None, Some(s)) => {
            let cfg = parse_synth(s, seconds, seed)?;
            let desc = serde_json::to_value(&cfg)?;
            Ok((
                Box::new(InMemoryClips::from_synth(&cfg)?),
                json!({ "synth": desc }),
            ))
        }
        (None, None) => Err(Error::Config("no data: pass --manifest or --synth".into())),
    }
}

fn model_config(sel: &ModelSel, cfg: &TrainConfig) -> Result<ModelConfig> {
    let mut m = match (&sel.model, sel.variant.as_deref()) {
        (Some(p), _) => read_json(p)?,
        (None, None) | (None, Some("toy")) => ModelConfig::toy(),
        (None, Some(v)) => ModelConfig {
            encoder: EncoderConfig::from_variant(v)?,
            ..ModelConfig::default()
        },
    };
    m.masking = cfg.masking;
    if (m.frames, m.bins) != (cfg.target_frames, cfg.n_mels) {
        return Err(Error::Config(format!(
            "model input {}x{} differs from training features {}x{}",
            m.frames, m.bins, cfg.target_frames, cfg.n_mels
        )));
    }
    m.validate()?;
    Ok(m)
}

fn dtype(sel: &ModelSel) -> DType {
    if sel.f64 {
        DType::F64
    } else {
        DType::F32
    }
}

fn cmd_pretrain(a: &PretrainArgs) -> Result<()> {
    let mut cfg = train_config(&a.train, "toy-pt", a.common.seed)?;
    apply_mask(&mut cfg, &a.mask);
    cfg.validate()?;
    let mc = model_config(&a.model, &cfg)?;
    let (data, desc) = data_source(&a.data, &a.data.split, cfg.clip_seconds, a.common.seed)?;
    resolved(
        &a.common,
        "pretrain",
        json!({ "train": cfg, "model": mc, "data": desc }),
    )?;
    let mut model = AudioMaeModel::new(mc, a.common.seed)?;
    let opts = RunOptions {
        log_path: Some(a.common.out.join("log.jsonl")),
        checkpoint_path: Some(a.common.out.join("model.smae")),
        max_steps: a.train.max_steps,
        workers: None,
        dtype: dtype(&a.model),
    };
    let r = run_pretrain(&mut model, data.as_ref(), &cfg, &opts)?;
    if let (Some(first), Some(last)) = (r.log.first(), r.log.last()) {
        println!(
            "pretrain: {} steps, l_r {:.4} -> {:.4}",
            r.steps, first.l_r, last.l_r
        );
    }
    Ok(())
}

fn cmd_finetune(a: &FinetuneArgs) -> Result<()> {
    let mut cfg = train_config(&a.train, "toy-ft", a.common.seed)?;
    apply_mask(&mut cfg, &a.mask);
    cfg.validate()?;
    let (data, desc) = data_source(&a.data, &a.data.split, cfg.clip_seconds, a.common.seed)?;
    let eval: Option<(Box<dyn ClipSource>, Value)> = match (&a.eval_split, &a.eval_synth) {
        (Some(split), _) => Some(data_source(
            &DataSel {
                synth: None,
                ..a.data.clone()
            },
            split,
            cfg.clip_seconds,
            a.common.seed,
        )?),
        (None, Some(s)) => {
            let sel = DataSel {
                manifest: None,
                synth: Some(s.clone()),
                split: a.data.split.clone(),
            };
            Some(data_source(
                &sel,
                "test",
                cfg.clip_seconds,
                a.common.seed + 1,
            )?)
        }
        (None, None) => None,
    };
    let n_classes = data.n_classes();
    let mut model = match &a.ckpt {
        Some(p) => {
            let ck = load_checkpoint(p)?;
            let m = classifier_from_checkpoint(&ck, n_classes, a.common.seed)?;
            if (m.config.frames, m.config.bins) != (cfg.target_frames, cfg.n_mels) {
                return Err(Error::Config(
                    "checkpoint input shape differs from training features".into(),
                ));
            }
            m
        }
        None => {
            let mc = ModelConfig {
                decoder: None,
                n_classes: Some(n_classes),
                ..model_config(&a.model, &cfg)?
            };
            AudioMaeModel::new(mc, a.common.seed)?
        }
    };
    model.config.masking = cfg.masking;
    resolved(
        &a.common,
        "finetune",
        json!({ "train": cfg, "model": model.config, "ckpt": a.ckpt, "data": desc, "eval_data": eval.as_ref().map(|e| &e.1) }),
    )?;
    let opts = RunOptions {
        log_path: Some(a.common.out.join("log.jsonl")),
        checkpoint_path: Some(a.common.out.join("model.smae")),
        max_steps: a.train.max_steps,
        workers: None,
        dtype: dtype(&a.model),
    };
    // without a held-out set, each epoch is scored on the training clips in eval mode
    let eval_src: &dyn ClipSource = match &eval {
        Some((s, _)) => s.as_ref(),
        None => data.as_ref(),
    };
    let r = run_finetune(&mut model, data.as_ref(), Some(eval_src), &cfg, &opts)?;
    if let Some(report) = r.epochs.last().and_then(|e| e.eval.clone()) {
        write_json(&a.common.out.join("eval.json"), &report)?;
        println!(
            "finetune: {} steps, accuracy {:.4}, mAP {:.4}",
            r.steps, report.accuracy, report.map
        );
    }
    Ok(())
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let cfg = train_config(&a.train, "toy-ft", a.common.seed)?;
    let model = AudioMaeModel::from_checkpoint(&load_checkpoint(&a.ckpt)?)?;
    let (data, desc) = data_source(&a.data, &a.data.split, cfg.clip_seconds, a.common.seed)?;
    if model.n_classes() != Some(data.n_classes()) {
        return Err(Error::Config(format!(
            "checkpoint head has {:?} classes, data has {}",
            model.n_classes(),
            data.n_classes()
        )));
    }
    resolved(
        &a.common,
        "eval",
        json!({ "train": cfg, "ckpt": a.ckpt, "data": desc }),
    )?;
    let fp = FeaturePipeline::from_config(&cfg)?;
    let report = evaluate(&model, data.as_ref(), &fp, None)?;
    write_json(&a.common.out.join("eval.json"), &report)?;
    println!("{}", serde_json::to_string(&report)?);
    Ok(())
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    if !path.is_file() {
        return Err(Error::Config(format!(
            "checkpoint {} not found",
            path.display()
        )));
    }
    Checkpoint::load(path)
}

fn read_wav(path: &Path) -> Result<Waveform> {
    let bytes = std::fs::read(path).map_err(|e| config_io(path, e))?;
    let w = decode_wav(&bytes)?;
    if w.sample_rate == DEFAULT_SAMPLE_RATE {
        Ok(w)
    } else {
        resample_linear(&w, DEFAULT_SAMPLE_RATE)
    }
}

fn cmd_reconstruct(a: &ReconstructArgs) -> Result<()> {
    let mut cfg = train_config(&a.train, "toy-pt", a.common.seed)?;
    apply_mask(&mut cfg, &a.mask);
    if a.plc {
        cfg.masking.strategy = MaskStrategy::Time;
        cfg.masking.ratio_t = 0.25;
    }
    let model = AudioMaeModel::from_checkpoint(&load_checkpoint(&a.ckpt)?)?;
    let wave = match (&a.input, &a.synth) {
        (Some(p), None) => read_wav(p)?,
        (None, Some(s)) => {
            let sc = parse_synth(s, cfg.clip_seconds, a.common.seed)?;
            let clips = InMemoryClips::from_synth(&sc)?;
            if a.index >= clips.len() {
                return Err(Error::Config(format!(
                    "--index {} outside {} clips",
                    a.index,
                    clips.len()
                )));
            }
            clips.clips[a.index].clone()
        }
        _ => {
            return Err(Error::Config(
                "give exactly one of --input or --synth".into(),
            ))
        }
    };
    let fp = FeaturePipeline::from_config(&cfg)?;
    if (model.config.frames, model.config.bins) != (fp.target_frames, fp.mel.n_mels) {
        return Err(Error::Config(
            "checkpoint input shape differs from the feature config".into(),
        ));
    }
    resolved(
        &a.common,
        "reconstruct",
        json!({ "train": cfg, "ckpt": a.ckpt, "input": a.input, "synth": a.synth,
        "index": a.index, "plc": a.plc, "full": a.full, "gl_iters": a.gl_iters }),
    )?;
    let spec = fp.eval_features(&wave)?;
    let (rt, rf) = cfg.masking.ratios();
    let mut rng = ChaCha8Rng::seed_from_u64(a.common.seed);
    let plan = plan_for(model.grid(), cfg.masking.strategy, rt, rf, &mut rng)?;
    let r = reconstruct(&model, &spec, &plan, fp.stats, a.full)?;
    let out = &a.common.out;
    write_json(
        &out.join("plan.json"),
        &serde_json::from_str::<Value>(&plan.to_json()?)?,
    )?;
    write_json(&out.join("reconstruction.json"), &r.info)?;
    let range = Some(value_range(&r.original));
    for (name, s, mask) in [
        ("original", &r.original, None),
        ("masked", &r.masked, Some(r.cells.as_slice())),
        ("restored", &r.restored, None),
    ] {
        write_png(
            out.join(format!("{name}.png")),
            s,
            mask,
            RenderOptions { range, scale: 2 },
        )?;
        let audio = griffin_lim_seeded(s, DEFAULT_SAMPLE_RATE, a.gl_iters, a.common.seed)?;
        let p = out.join(format!("{name}.wav"));
        std::fs::write(&p, encode_wav(&audio.waveform)?).map_err(|e| Error::io(&p, e))?;
    }
    println!(
        "reconstruct: {} of {} patches masked",
        plan.n_masked(),
        plan.n_total
    );
    Ok(())
}

fn read_spectrogram(path: &Path, n_mels: usize) -> Result<LogMelSpectrogram> {
    let is_json = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("json"));
    if is_json {
        let f: SpecFile = read_json(path)?;
        LogMelSpectrogram::new(f.frames, f.bins, f.values)
    } else {
        log_mel(&read_wav(path)?, &MelParams::with_mels(n_mels))
    }
}

fn cmd_stats(a: &StatsArgs) -> Result<()> {
    let mut acc = StatsAccumulator::default();
    let mel = MelParams::with_mels(a.n_mels);
    let mut desc = json!({ "inputs": a.inputs, "n_mels": a.n_mels });
    if a.data.manifest.is_some() || a.data.synth.is_some() {
        let (src, d) = data_source(&a.data, &a.data.split, 10.0, a.common.seed)?;
        for i in 0..src.len() {
            acc.extend(&log_mel(&src.waveform(i)?, &mel)?.values);
        }
        desc["data"] = d;
    } else if a.inputs.is_empty() {
        return Err(Error::Config(
            "no inputs: pass files, --manifest or --synth".into(),
        ));
    }
    for p in &a.inputs {
        acc.extend(&read_spectrogram(p, a.n_mels)?.values);
    }
    resolved(&a.common, "stats", desc)?;
    let stats = acc.finish()?;
    let v = json!({ "mean": stats.mean, "std": stats.std, "cells": acc.count() });
    write_json(&a.common.out.join("stats.json"), &v)?;
    println!("{}", serde_json::to_string(&v)?);
    Ok(())
}

fn cmd_synth(a: &SynthArgs) -> Result<()> {
    let base = SynthConfig {
        kind: a.kind,
        noise_floor: a.noise_floor,
        ..SynthConfig::tones(a.classes, a.per_class, a.seconds, a.common.seed)
    };
    if a.classes == 0 || a.per_class == 0 || !(a.seconds > 0.0) {
        return Err(Error::Config(
            "classes, per-class count and duration must be positive".into(),
        ));
    }
    resolved(
        &a.common,
        "synth",
        json!({ "synth": base, "test_per_class": a.test_per_class }),
    )?;
    let mut records = Vec::new();
    for (split, cfg) in [
        ("train", base.clone()),
        (
            "test",
            SynthConfig {
                per_class: a.test_per_class,
                seed: a.common.seed + 1,
                ..base.clone()
            },
        ),
    ] {
        let dir = a.common.out.join(split);
        prepare_out(&dir)?;
        for (k, (w, c)) in crate::pipeline::synth_dataset(&cfg)?
            .into_iter()
            .enumerate()
        {
            let name = format!("{split}/{k:05}_c{c}.wav");
            let p = a.common.out.join(&name);
            std::fs::write(&p, encode_wav(&w)?).map_err(|e| Error::io(&p, e))?;
            records.push(ClipRecord {
                path: name,
                labels: vec![c],
                split: split.into(),
            });
        }
    }
    let m = Manifest::new(records, base.class_names())?;
    m.save(a.common.out.join("manifest.jsonl"))?;
    println!(
        "synth: {} clips in {}",
        m.records.len(),
        a.common.out.display()
    );
    Ok(())
}

fn cmd_render(a: &RenderArgs) -> Result<()> {
    let spec = read_spectrogram(&a.input, a.n_mels)?;
    resolved(
        &a.common,
        "render",
        json!({ "input": a.input, "n_mels": a.n_mels, "range": a.range, "scale": a.scale }),
    )?;
    write_png(
        a.common.out.join("spectrogram.png"),
        &spec,
        None,
        RenderOptions {
            range: a.range,
            scale: a.scale,
        },
    )
}

pub fn execute(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Pretrain(a) => cmd_pretrain(a),
        Command::Finetune(a) => cmd_finetune(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Reconstruct(a) => cmd_reconstruct(a),
        Command::Stats(a) => cmd_stats(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Render(a) => cmd_render(a),
    }
}

/// Parses `args` (including the program name) and runs; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_config_error() {
                1
            } else {
                2
            }
        }
    }
}
