//! The masked autoencoder: patch embedding, encoder over visible tokens,
//! decoder over the restored sequence, reconstruction and contrastive heads,
//! and the pooled classifier used for fine-tuning.

mod config;
mod loss;

use std::path::Path;

use log::warn;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

pub use config::{
    DecoderConfig, EncoderConfig, MaskingDefaults, ModelConfig, Objective, AUDIOSET_CLASSES,
};
pub use loss::{
    classification_loss, infonce_loss, normalize_patches, reconstruction_loss, ClassLoss,
    PATCH_NORM_EPS,
};

use crate::attention::{
    build_decoder_layouts, transformer_block, AttentionLayout, BlockWeights, DropPath, LN_EPS,
};
use crate::error::{Error, Result};
use crate::masking::{restore_full_sequence, select_visible, MaskPlan};
use crate::numerics::init::{normal, trunc_normal};
use crate::numerics::{Checkpoint, DType, ParamId, ParamStore, Tape, Tensor, Var};
use crate::patches::{embed, patchify, sinusoidal_embedding, PatchGridSpec};

const INIT_STD: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub l_r: f64,
    pub l_c: Option<f64>,
    pub alpha: f64,
    pub total: f64,
}

pub struct PretrainOutput {
    pub loss: Var,
    pub pred: Var,
    pub report: LossReport,
}

#[derive(Clone, Debug)]
struct DecoderIds {
    adapter: Option<(ParamId, ParamId)>,
    mask_token: ParamId,
    blocks: Vec<BlockWeights>,
    norm: (ParamId, ParamId),
    pred: (ParamId, ParamId),
    contrast: (ParamId, ParamId),
    layouts: Vec<AttentionLayout>,
    pos: Tensor,
}

#[derive(Clone, Debug)]
pub struct AudioMaeModel {
    pub config: ModelConfig,
    pub store: ParamStore,
    grid: PatchGridSpec,
    patch: (ParamId, ParamId),
    enc_pos: Tensor,
    enc_blocks: Vec<BlockWeights>,
    enc_norm: (ParamId, ParamId),
    decoder: Option<DecoderIds>,
    head: Option<(ParamId, ParamId)>,
}

fn linear_params(
    store: &mut ParamStore,
    name: &str,
    fan_in: usize,
    fan_out: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(ParamId, ParamId)> {
    let w = store.add(
        format!("{name}.weight"),
        trunc_normal(&[fan_in, fan_out], INIT_STD, rng),
    )?;
    let b = store.add(format!("{name}.bias"), Tensor::zeros([fan_out]))?;
    Ok((w, b))
}

fn norm_params(store: &mut ParamStore, name: &str, d: usize) -> Result<(ParamId, ParamId)> {
    let g = store.add(format!("{name}.weight"), Tensor::full([d], 1.0))?;
    let b = store.add(format!("{name}.bias"), Tensor::zeros([d]))?;
    Ok((g, b))
}

impl AudioMaeModel {
    /// Builds and initialises every part named by the config from `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let grid = config.grid()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let e = config.encoder.clone();
        let patch = linear_params(&mut store, "patch_embed", grid.patch_dim(), e.dim, &mut rng)?;
        let enc_blocks = (0..e.depth)
            .map(|i| {
                BlockWeights::register(
                    &mut store,
                    &format!("encoder.blocks.{i}"),
                    e.dim,
                    e.heads,
                    &mut rng,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let enc_norm = norm_params(&mut store, "encoder.norm", e.dim)?;
        let decoder = match &config.decoder {
            None => None,
            Some(d) => {
                let adapter = if d.dim != e.dim {
                    Some(linear_params(
                        &mut store,
                        "decoder.embed",
                        e.dim,
                        d.dim,
                        &mut rng,
                    )?)
                } else {
                    None
                };
                let mask_token =
                    store.add("decoder.mask_token", normal(&[d.dim], INIT_STD, &mut rng))?;
                let blocks = (0..d.layer_count())
                    .map(|i| {
                        BlockWeights::register(
                            &mut store,
                            &format!("decoder.blocks.{i}"),
                            d.dim,
                            d.heads,
                            &mut rng,
                        )
                    })
                    .collect::<Result<Vec<_>>>()?;
                let norm = norm_params(&mut store, "decoder.norm", d.dim)?;
                let pred = linear_params(
                    &mut store,
                    "decoder.pred",
                    d.dim,
                    grid.patch_dim(),
                    &mut rng,
                )?;
                let contrast = linear_params(
                    &mut store,
                    "decoder.contrast",
                    d.dim,
                    grid.patch_dim(),
                    &mut rng,
                )?;
                Some(DecoderIds {
                    adapter,
                    mask_token,
                    blocks,
                    norm,
                    pred,
                    contrast,
                    layouts: build_decoder_layouts(d.layer_count(), d.attention, grid, d.window),
                    pos: sinusoidal_embedding(&grid, d.dim)?,
                })
            }
        };
        let head = match config.n_classes {
            Some(c) => Some(linear_params(&mut store, "head", e.dim, c, &mut rng)?),
            None => None,
        };
        Ok(AudioMaeModel {
            enc_pos: sinusoidal_embedding(&grid, e.dim)?,
            config,
            store,
            grid,
            patch,
            enc_blocks,
            enc_norm,
            decoder,
            head,
        })
    }

    pub fn grid(&self) -> &PatchGridSpec {
        &self.grid
    }

    pub fn has_decoder(&self) -> bool {
        self.decoder.is_some()
    }

    pub fn n_classes(&self) -> Option<usize> {
        self.config.n_classes
    }

    pub fn decoder_layouts(&self) -> &[AttentionLayout] {
        self.decoder.as_ref().map_or(&[], |d| &d.layouts)
    }

    /// Parameters touched by the encoder and classifier.
    pub fn encoder_param_ids(&self) -> Vec<ParamId> {
        let mut ids = vec![self.patch.0, self.patch.1];
        self.enc_blocks
            .iter()
            .for_each(|b| ids.extend(b.param_ids()));
        ids.extend([self.enc_norm.0, self.enc_norm.1]);
        if let Some((w, b)) = self.head {
            ids.extend([w, b]);
        }
        ids
    }

    fn dec(&self) -> Result<&DecoderIds> {
        self.decoder
            .as_ref()
            .ok_or_else(|| Error::Config("model has no decoder (classifier checkpoint?)".into()))
    }

    /// Checks the spectrogram fits the grid and patchifies it.
    pub fn patches(&self, spec: &Tensor) -> Result<Tensor> {
        let (t, f) = spec.dims2()?;
        if (t, f) != (self.config.frames, self.config.bins) {
            return Err(Error::shape(
                "model input",
                format!(
                    "{t}x{f} spectrogram, model expects {}x{}",
                    self.config.frames, self.config.bins
                ),
            ));
        }
        patchify(spec, &self.grid)
    }

    /// Patch projection plus encoder positional table.
    pub fn embed_tokens(&self, tape: &mut Tape, patches: &Tensor) -> Result<Var> {
        let x = tape.constant(patches.clone());
        let w = tape.param(&self.store, self.patch.0);
        let b = tape.param(&self.store, self.patch.1);
        embed(tape, x, w, b, &self.enc_pos)
    }

    /// Selects visible tokens (all when `plan` is `None`), runs the global
    /// encoder blocks and the final norm.
    pub fn encode_visible(
        &self,
        tape: &mut Tape,
        tokens: Var,
        plan: Option<&MaskPlan>,
        drop: Option<&mut DropPath<'_>>,
    ) -> Result<Var> {
        let mut x = match plan {
            Some(p) => select_visible(tape, tokens, p)?,
            None => tokens,
        };
        let layout = AttentionLayout::global(self.grid);
        let depth = self.enc_blocks.len();
        let mut drop = drop;
        for (i, blk) in self.enc_blocks.iter().enumerate() {
            // stochastic depth grows linearly from 0 at the first block
            x = match drop.as_deref_mut() {
                Some(d) if d.rate > 0.0 => {
                    let rate = if depth > 1 {
                        d.rate * i as f64 / (depth - 1) as f64
                    } else {
                        d.rate
                    };
                    let mut layer = DropPath {
                        rate,
                        rng: &mut *d.rng,
                    };
                    transformer_block(tape, &self.store, x, blk, &layout, Some(&mut layer))?
                }
                _ => transformer_block(tape, &self.store, x, blk, &layout, None)?,
            };
        }
        let (g, b) = (
            tape.param(&self.store, self.enc_norm.0),
            tape.param(&self.store, self.enc_norm.1),
        );
        tape.layer_norm(x, g, b, LN_EPS)
    }

    /// Decoder output after its final norm, `n_total × dec_dim`.
    pub fn decode_features(&self, tape: &mut Tape, latents: Var, plan: &MaskPlan) -> Result<Var> {
        let dec = self.dec()?;
        let mut x = latents;
        if let Some((w, b)) = dec.adapter {
            let (w, b) = (tape.param(&self.store, w), tape.param(&self.store, b));
            x = tape.linear(x, w, b)?;
        }
        let mt = tape.param(&self.store, dec.mask_token);
        x = restore_full_sequence(tape, x, mt, plan, &dec.pos)?;
        for (blk, layout) in dec.blocks.iter().zip(&dec.layouts) {
            x = transformer_block(tape, &self.store, x, blk, layout, None)?;
        }
        let (g, b) = (
            tape.param(&self.store, dec.norm.0),
            tape.param(&self.store, dec.norm.1),
        );
        tape.layer_norm(x, g, b, LN_EPS)
    }

    /// Predicted patches for every grid position, `n_total × patch_dim`.
    pub fn decode(&self, tape: &mut Tape, latents: Var, plan: &MaskPlan) -> Result<Var> {
        let feats = self.decode_features(tape, latents, plan)?;
        self.prediction_head(tape, feats)
    }

    fn prediction_head(&self, tape: &mut Tape, feats: Var) -> Result<Var> {
        let (w, b) = self.dec()?.pred;
        let (w, b) = (tape.param(&self.store, w), tape.param(&self.store, b));
        tape.linear(feats, w, b)
    }

    /// Patchify, embed, encode, decode and score one normalised spectrogram.
    pub fn pretrain_forward(
        &self,
        tape: &mut Tape,
        spec: &Tensor,
        plan: &MaskPlan,
        objective: Objective,
    ) -> Result<PretrainOutput> {
        let patches = self.patches(spec)?;
        let tokens = self.embed_tokens(tape, &patches)?;
        let latents = self.encode_visible(tape, tokens, Some(plan), None)?;
        let feats = self.decode_features(tape, latents, plan)?;
        let pred = self.prediction_head(tape, feats)?;
        let norm = self.config.norm_pix_loss;
        let l_r = reconstruction_loss(tape, pred, &patches, plan, norm)?;
        let contrastive = |tape: &mut Tape| -> Result<Var> {
            let (w, b) = self.dec()?.contrast;
            let (w, b) = (tape.param(&self.store, w), tape.param(&self.store, b));
            let masked = tape.gather_rows(feats, &plan.masked_idx)?;
            let ctx = tape.linear(masked, w, b)?;
            let target = if norm {
                normalize_patches(&patches)?
            } else {
                patches.clone()
            };
            let target = tape.constant(target.gather_rows(&plan.masked_idx)?);
            infonce_loss(tape, ctx, target)
        };
        let (loss, l_c, alpha) = match objective {
            Objective::Reconstruction => (l_r, None, 0.0),
            Objective::Contrastive => {
                let l_c = contrastive(tape)?;
                (l_c, Some(l_c), 1.0)
            }
            Objective::Combined { alpha } => {
                let l_c = contrastive(tape)?;
                let scaled = tape.scale(l_c, alpha);
                (tape.add(l_r, scaled)?, Some(l_c), alpha)
            }
        };
        let report = LossReport {
            l_r: tape.value(l_r).item(),
            l_c: l_c.map(|v| tape.value(v).item()),
            alpha,
            total: tape.value(loss).item(),
        };
        for (name, v) in [
            ("l_r", Some(report.l_r)),
            ("l_c", report.l_c),
            ("total", Some(report.total)),
        ] {
            if let Some(v) = v.filter(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("{name} = {v}")));
            }
        }
        Ok(PretrainOutput { loss, pred, report })
    }

    /// Mean-pooled encoder output through the linear head, `1 × n_classes`.
    pub fn classify(
        &self,
        tape: &mut Tape,
        spec: &Tensor,
        plan: Option<&MaskPlan>,
        drop: Option<&mut DropPath<'_>>,
    ) -> Result<Var> {
        let (w, b) = self
            .head
            .ok_or_else(|| Error::Config("model has no classifier head".into()))?;
        let patches = self.patches(spec)?;
        let tokens = self.embed_tokens(tape, &patches)?;
        let latents = self.encode_visible(tape, tokens, plan, drop)?;
        let pooled = tape.mean_rows(latents)?;
        let (w, b) = (tape.param(&self.store, w), tape.param(&self.store, b));
        tape.linear(pooled, w, b)
    }

    /// Eval-mode logits with masking off.
    pub fn predict(&self, spec: &Tensor) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let z = self.classify(&mut tape, spec, None, None)?;
        Ok(tape.value(z).data().to_vec())
    }

    pub fn checkpoint(&self, extra: serde_json::Value) -> Result<Checkpoint> {
        let meta = json!({ "model": serde_json::to_value(&self.config)?, "extra": extra });
        Ok(Checkpoint::from_params(meta, &self.store))
    }

    pub fn save(
        &self,
        path: impl AsRef<Path>,
        dtype: DType,
        extra: serde_json::Value,
    ) -> Result<()> {
        self.checkpoint(extra)?.save(path, dtype)
    }

    pub fn config_from_checkpoint(ck: &Checkpoint) -> Result<ModelConfig> {
        let v = ck
            .metadata
            .get("model")
            .ok_or_else(|| Error::Checkpoint("metadata has no model config".into()))?;
        Ok(serde_json::from_value(v.clone())?)
    }

    /// Rebuilds the exact model stored in a checkpoint.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let mut model = Self::new(Self::config_from_checkpoint(ck)?, 0)?;
        let missing = ck.load_into(&mut model.store, |_| false)?;
        if !missing.is_empty() {
            return Err(Error::Checkpoint(format!(
                "checkpoint lacks {}",
                missing.join(", ")
            )));
        }
        Ok(model)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }

    /// Copies encoder weights from `ck`. A classifier head whose label space
    /// differs from the stored one keeps its fresh initialisation.
    pub fn load_encoder_from(&mut self, ck: &Checkpoint) -> Result<()> {
        let stored = Self::config_from_checkpoint(ck)?;
        if stored.encoder != self.config.encoder || stored.grid()? != self.grid {
            return Err(Error::Checkpoint(format!(
                "checkpoint encoder {:?} on {:?} does not match {:?} on {:?}",
                stored.encoder,
                stored.grid()?,
                self.config.encoder,
                self.grid
            )));
        }
        let head_matches = stored.n_classes.is_some() && stored.n_classes == self.config.n_classes;
        if self.head.is_some() && stored.n_classes.is_some() && !head_matches {
            warn!(
                "checkpoint head has {:?} classes, model has {:?}; reinitialising head",
                stored.n_classes, self.config.n_classes
            );
        }
        let missing = ck.load_into(&mut self.store, |name| {
            name.starts_with("decoder.") || (name.starts_with("head.") && !head_matches)
        })?;
        if !missing.is_empty() {
            return Err(Error::Checkpoint(format!(
                "checkpoint lacks {}",
                missing.join(", ")
            )));
        }
        Ok(())
    }

    /// Fresh head initialisation (used when the label space changes).
    pub fn reset_head(&mut self, rng: &mut dyn RngCore) {
        if let Some((w, b)) = self.head {
            let shape = self.store.value(w).shape().to_vec();
            self.store.get_mut(w).value = trunc_normal(&shape, INIT_STD, rng);
            self.store.get_mut(b).value = Tensor::zeros(self.store.value(b).shape().to_vec());
        }
    }
}

#[cfg(test)]
mod tests;
