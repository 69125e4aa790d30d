//! Clip sources, the train/eval feature pipeline and a worker pool that
//! prepares examples ahead of the training step.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::mpsc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::augment::{mixup, AugmentConfig};
use crate::dsp::{
    decode_wav, log_mel, normalize, pad_or_trim, resample_linear, DatasetStats, LogMelSpectrogram,
    MelParams, Waveform, DEFAULT_SAMPLE_RATE,
};
use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::pipeline::config::TrainConfig;
use crate::pipeline::manifest::Manifest;
use crate::pipeline::synth::{synth_dataset, SynthConfig};

/// Random access to labelled waveforms.
pub trait ClipSource: Sync {
    fn len(&self) -> usize;
    fn n_classes(&self) -> usize;
    fn labels(&self, i: usize) -> &[usize];
    fn waveform(&self, i: usize) -> Result<Waveform>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn class_names(&self) -> Vec<String> {
        (0..self.n_classes()).map(|c| c.to_string()).collect()
    }

    fn all_labels(&self) -> Vec<Vec<usize>> {
        (0..self.len()).map(|i| self.labels(i).to_vec()).collect()
    }
}

#[derive(Clone, Debug, Default)]
pub struct InMemoryClips {
    pub clips: Vec<Waveform>,
    pub labels: Vec<Vec<usize>>,
    pub n_classes: usize,
}

impl InMemoryClips {
    pub fn new(clips: Vec<Waveform>, labels: Vec<Vec<usize>>, n_classes: usize) -> Result<Self> {
        if clips.len() != labels.len() {
            return Err(Error::InvalidArgument(format!(
                "{} clips, {} label lists",
                clips.len(),
                labels.len()
            )));
        }
        if labels.iter().flatten().any(|&l| l >= n_classes) {
            return Err(Error::InvalidArgument(format!(
                "label outside {n_classes} classes"
            )));
        }
        Ok(InMemoryClips {
            clips,
            labels,
            n_classes,
        })
    }

    pub fn from_synth(cfg: &SynthConfig) -> Result<Self> {
        let (clips, labels): (Vec<_>, Vec<_>) = synth_dataset(cfg)?
            .into_iter()
            .map(|(w, c)| (w, vec![c]))
            .unzip();
        Self::new(clips, labels, cfg.n_classes)
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        InMemoryClips {
            clips: idx.iter().map(|&i| self.clips[i].clone()).collect(),
            labels: idx.iter().map(|&i| self.labels[i].clone()).collect(),
            n_classes: self.n_classes,
        }
    }
}

impl ClipSource for InMemoryClips {
    fn len(&self) -> usize {
        self.clips.len()
    }

    fn n_classes(&self) -> usize {
        self.n_classes
    }

    fn labels(&self, i: usize) -> &[usize] {
        &self.labels[i]
    }

    fn waveform(&self, i: usize) -> Result<Waveform> {
        Ok(self.clips[i].clone())
    }
}

/// WAV files listed in a manifest, read on demand and resampled to 16 kHz.
/// Relative paths resolve against `root`.
#[derive(Clone, Debug)]
pub struct ManifestClips {
    pub manifest: Manifest,
    pub root: PathBuf,
}

impl ManifestClips {
    pub fn new(manifest: Manifest, root: impl Into<PathBuf>) -> Self {
        ManifestClips {
            manifest,
            root: root.into(),
        }
    }

    /// Loads a manifest and the named split, resolving clips beside the manifest.
    pub fn open(path: impl AsRef<Path>, split: &str) -> Result<Self> {
        let path = path.as_ref();
        let m = Manifest::load(path)?.split(split);
        if m.records.is_empty() {
            return Err(Error::Config(format!(
                "{}: split {split:?} is empty",
                path.display()
            )));
        }
        Ok(Self::new(m, path.parent().unwrap_or(Path::new("."))))
    }
}

impl ClipSource for ManifestClips {
    fn len(&self) -> usize {
        self.manifest.records.len()
    }

    fn n_classes(&self) -> usize {
        self.manifest.n_classes()
    }

    fn labels(&self, i: usize) -> &[usize] {
        &self.manifest.records[i].labels
    }

    fn class_names(&self) -> Vec<String> {
        self.manifest.class_names.clone()
    }

    fn waveform(&self, i: usize) -> Result<Waveform> {
        let p = self.root.join(&self.manifest.records[i].path);
        let bytes = std::fs::read(&p).map_err(|e| Error::io(&p, e))?;
        let w = decode_wav(&bytes)?;
        if w.sample_rate == DEFAULT_SAMPLE_RATE {
            Ok(w)
        } else {
            resample_linear(&w, DEFAULT_SAMPLE_RATE)
        }
    }
}

/// Waveform → normalised, fixed-length log-mel features.
#[derive(Clone, Debug, PartialEq)]
pub struct FeaturePipeline {
    pub mel: MelParams,
    pub stats: DatasetStats,
    pub clip_samples: usize,
    pub target_frames: usize,
    pub augment: AugmentConfig,
}

impl FeaturePipeline {
    pub fn from_config(cfg: &TrainConfig) -> Result<Self> {
        Ok(FeaturePipeline {
            mel: MelParams::with_mels(cfg.n_mels),
            stats: cfg.stats()?,
            clip_samples: (cfg.clip_seconds * DEFAULT_SAMPLE_RATE as f64).round() as usize,
            target_frames: cfg.target_frames,
            augment: cfg.augment.clone(),
        })
    }

    fn finish(&self, mut w: Waveform) -> Result<LogMelSpectrogram> {
        w.samples.truncate(self.clip_samples);
        // normalise first so the padding value 0 is the dataset mean
        let s = normalize(&log_mel(&w, &self.mel)?, self.stats);
        pad_or_trim(&s, self.target_frames)
    }

    /// Deterministic features with every augmentation off.
    pub fn eval_features(&self, w: &Waveform) -> Result<LogMelSpectrogram> {
        self.finish(w.clone())
    }

    /// Waveform augmentations, features, then spectrogram augmentations.
    pub fn train_features(&self, w: &Waveform, rng: &mut impl Rng) -> Result<LogMelSpectrogram> {
        let w = self.augment.apply_wave(w, rng)?;
        let s = self.finish(w)?;
        self.augment.apply_spec(&s, rng)
    }
}

/// One prepared item: features (`frames × bins`) and a label distribution.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub index: usize,
    pub spec: Tensor,
    pub target: Vec<f64>,
}

pub fn multi_hot(labels: &[usize], n_classes: usize) -> Vec<f64> {
    let mut y = vec![0.0; n_classes];
    labels.iter().for_each(|&l| y[l] = 1.0);
    y
}

/// Independent stream per (seed, epoch, slot), so results do not depend on
/// which worker prepares an item.
pub fn item_rng(seed: u64, epoch: usize, slot: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((epoch as u64) << 32) | slot as u64);
    rng
}

pub fn num_workers() -> usize {
    match std::env::var("SMAE_NUM_WORKERS")
        .ok()
        .and_then(|v| v.parse().ok())
    {
        Some(n) => n,
        None => std::thread::available_parallelism()
            .map_or(1, |n| n.get())
            .saturating_sub(1)
            .min(8),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

pub struct Loader<'a> {
    pub source: &'a dyn ClipSource,
    pub pipeline: &'a FeaturePipeline,
    pub seed: u64,
    pub workers: usize,
}

impl<'a> Loader<'a> {
    pub fn new(source: &'a dyn ClipSource, pipeline: &'a FeaturePipeline, seed: u64) -> Self {
        Loader {
            source,
            pipeline,
            seed,
            workers: num_workers(),
        }
    }

    pub fn example(&self, index: usize, epoch: usize, slot: usize, mode: Mode) -> Result<Example> {
        let n_classes = self.source.n_classes();
        let w = self.source.waveform(index)?;
        let mut target = multi_hot(self.source.labels(index), n_classes);
        let spec = match mode {
            Mode::Eval => self.pipeline.eval_features(&w)?,
            Mode::Train => {
                let mut rng = item_rng(self.seed, epoch, slot);
                let mut spec = self.pipeline.train_features(&w, &mut rng)?;
                if let Some(lam) = self.pipeline.augment.draw_mixup(&mut rng) {
                    let other = rng.gen_range(0..self.source.len());
                    let ow = self.source.waveform(other)?;
                    let os = self.pipeline.train_features(&ow, &mut rng)?;
                    let oy = multi_hot(self.source.labels(other), n_classes);
                    (spec, target) = mixup(&spec, &target, &os, &oy, lam)?;
                }
                spec
            }
        };
        Ok(Example {
            index,
            spec: spec.to_tensor(),
            target,
        })
    }

    /// Prepares `order[k]` for every slot `k` and hands them to `consume` in
    /// batches of `batch`, in order. Workers run ahead through a bounded queue;
    /// the first error from either side stops the stream.
    pub fn stream(
        &self,
        order: &[usize],
        epoch: usize,
        batch: usize,
        mode: Mode,
        mut consume: impl FnMut(Vec<Example>) -> Result<()>,
    ) -> Result<()> {
        if batch == 0 {
            return Err(Error::InvalidArgument("batch size 0".into()));
        }
        if self.workers == 0 {
            for (b, chunk) in order.chunks(batch).enumerate() {
                let items = chunk
                    .iter()
                    .enumerate()
                    .map(|(k, &i)| self.example(i, epoch, b * batch + k, mode))
                    .collect::<Result<Vec<_>>>()?;
                consume(items)?;
            }
            return Ok(());
        }
        let workers = self.workers;
        std::thread::scope(|scope| {
            let (tx, rx) = mpsc::sync_channel::<(usize, Result<Example>)>(2 * batch);
            for w in 0..workers {
                let tx = tx.clone();
                scope.spawn(move || {
                    for slot in (w..order.len()).step_by(workers) {
                        let item = self.example(order[slot], epoch, slot, mode);
                        if tx.send((slot, item)).is_err() {
                            break;
                        }
                    }
                });
            }
            drop(tx);
            let mut pending = BTreeMap::new();
            let mut next = 0;
            let mut current = Vec::with_capacity(batch);
            let outcome = (|| {
                while next < order.len() {
                    while let Some(item) = pending.remove(&next) {
                        current.push(item?);
                        next += 1;
                        if current.len() == batch || next == order.len() {
                            consume(std::mem::replace(&mut current, Vec::with_capacity(batch)))?;
                        }
                    }
                    if next == order.len() {
                        break;
                    }
                    let (slot, item) = rx
                        .recv()
                        .map_err(|_| Error::InvalidArgument("data workers exited early".into()))?;
                    pending.insert(slot, item);
                }
                Ok(())
            })();
            drop(rx);
            outcome
        })
    }

    pub fn collect(&self, order: &[usize], epoch: usize, mode: Mode) -> Result<Vec<Example>> {
        let mut out = Vec::with_capacity(order.len());
        self.stream(order, epoch, order.len().max(1), mode, |b| {
            out.extend(b);
            Ok(())
        })?;
        Ok(out)
    }
}
