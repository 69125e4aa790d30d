//! Masked-patch reconstruction for inspection: the model's predictions are
//! pasted into the masked positions of the input.

use serde::Serialize;

use crate::dsp::{denormalize, DatasetStats, LogMelSpectrogram};
use crate::error::{Error, Result};
use crate::masking::MaskPlan;
use crate::model::{AudioMaeModel, PATCH_NORM_EPS};
use crate::numerics::{Tape, Tensor};
use crate::patches::PatchGridSpec;
use crate::render::cell_mask;

#[derive(Clone, Debug)]
pub struct Reconstruction {
    /// All three in raw log-mel units.
    pub original: LogMelSpectrogram,
    pub masked: LogMelSpectrogram,
    pub restored: LogMelSpectrogram,
    /// `frames × bins` flags of cells under a masked patch.
    pub cells: Vec<bool>,
    pub info: ReconstructionInfo,
}

#[derive(Clone, Debug, Serialize)]
pub struct ReconstructionInfo {
    pub n_masked: usize,
    pub full_prediction: bool,
    /// Predictions of a per-patch-normalised model are mapped back with the
    /// target patch's own mean and spread.
    pub target_stats_used: bool,
}

fn write_patch(cells: &mut [f64], bins: usize, g: &PatchGridSpec, i: usize, values: &[f64]) {
    let (t, f) = g.coords(i);
    for dt in 0..g.patch_t {
        let row = (t * g.stride_t + dt) * bins + f * g.stride_f;
        cells[row..row + g.patch_f].copy_from_slice(&values[dt * g.patch_f..(dt + 1) * g.patch_f]);
    }
}

fn patch_stats(p: &[f64]) -> (f64, f64) {
    let n = p.len() as f64;
    let mean = p.iter().sum::<f64>() / n;
    let var = p.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, (var + PATCH_NORM_EPS).sqrt())
}

/// `spec` is the normalised model input. With `full`, every patch is replaced
/// by its prediction; otherwise visible cells pass through untouched.
pub fn reconstruct(
    model: &AudioMaeModel,
    spec: &LogMelSpectrogram,
    plan: &MaskPlan,
    stats: DatasetStats,
    full: bool,
) -> Result<Reconstruction> {
    if !model.has_decoder() {
        return Err(Error::Config(
            "reconstruction needs a pre-trained model with its decoder".into(),
        ));
    }
    let g = *model.grid();
    let input = spec.to_tensor();
    let patches = model.patches(&input)?;
    let mut tape = Tape::new();
    let tokens = model.embed_tokens(&mut tape, &patches)?;
    let latents = model.encode_visible(&mut tape, tokens, Some(plan), None)?;
    let pred_var = model.decode(&mut tape, latents, plan)?;
    let pred: &Tensor = tape.value(pred_var);
    let norm = model.config.norm_pix_loss;
    let mut restored = spec.values.clone();
    let targets: Vec<usize> = if full {
        (0..plan.n_total).collect()
    } else {
        plan.masked_idx.clone()
    };
    for &i in &targets {
        let mut p = pred.row(i).to_vec();
        if norm {
            let (m, s) = patch_stats(patches.row(i));
            p.iter_mut().for_each(|v| *v = *v * s + m);
        }
        write_patch(&mut restored, spec.bins, &g, i, &p);
    }
    let cells = cell_mask(&g, plan, spec.frames, spec.bins)?;
    // masked cells become the quietest input value
    let floor = spec.values.iter().copied().fold(f64::INFINITY, f64::min);
    let masked: Vec<f64> = spec
        .values
        .iter()
        .zip(&cells)
        .map(|(&v, &m)| if m { floor } else { v })
        .collect();
    let mk = |values: Vec<f64>| -> Result<LogMelSpectrogram> {
        let s =
            LogMelSpectrogram::with_params(spec.frames, spec.bins, values, spec.params.clone())?;
        Ok(denormalize(&s, stats))
    };
    Ok(Reconstruction {
        original: denormalize(spec, stats),
        masked: mk(masked)?,
        restored: mk(restored)?,
        cells,
        info: ReconstructionInfo {
            n_masked: plan.n_masked(),
            full_prediction: full,
            target_stats_used: norm,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::masking::{plan_for, MaskStrategy};
    use crate::model::ModelConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn input() -> LogMelSpectrogram {
        LogMelSpectrogram::new(
            64,
            32,
            (0..64 * 32)
                .map(|i| ((i * 37) % 101) as f64 / 50.0 - 1.0)
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn visible_cells_are_bit_preserved_and_masked_cells_filled() {
        let m = AudioMaeModel::new(ModelConfig::toy(), 0).unwrap();
        let s = input();
        let stats = DatasetStats::new(-4.0, 3.3).unwrap();
        let plan = plan_for(
            m.grid(),
            MaskStrategy::Time,
            0.25,
            0.0,
            &mut ChaCha8Rng::seed_from_u64(1),
        )
        .unwrap();
        let r = reconstruct(&m, &s, &plan, stats, false).unwrap();
        assert_eq!(plan.n_masked(), 2 * 4);
        let mut changed = 0;
        for (k, &masked) in r.cells.iter().enumerate() {
            if masked {
                changed += (r.restored.values[k] != r.original.values[k]) as usize;
            } else {
                assert_eq!(
                    r.restored.values[k].to_bits(),
                    r.original.values[k].to_bits()
                );
                assert_eq!(r.masked.values[k].to_bits(), r.original.values[k].to_bits());
            }
        }
        assert_eq!(r.cells.iter().filter(|&&c| c).count(), 8 * 64);
        assert!(changed > 8 * 60);
    }

    #[test]
    fn ratio_zero_restores_the_input() {
        let m = AudioMaeModel::new(ModelConfig::toy(), 0).unwrap();
        let s = input();
        let stats = DatasetStats::new(0.0, 1.0).unwrap();
        let plan = plan_for(
            m.grid(),
            MaskStrategy::Unstructured,
            0.0,
            0.0,
            &mut ChaCha8Rng::seed_from_u64(1),
        )
        .unwrap();
        let r = reconstruct(&m, &s, &plan, stats, false).unwrap();
        assert_eq!(r.restored, r.original);
        assert!(reconstruct(&m, &s, &plan, stats, true).unwrap().restored != r.original);
    }
}
