//! Saving a model in both precisions and loading it back.

use smae::model::{AudioMaeModel, ModelConfig};
use smae::numerics::{Checkpoint, DType, Tensor};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir();
    let model = AudioMaeModel::new(ModelConfig::toy(), 11)?;
    let probe = Tensor::new(
        vec![64, 32],
        (0..64 * 32).map(|i| (i as f64 * 0.01).sin()).collect(),
    )?;
    for dtype in [DType::F32, DType::F64] {
        let path = dir.join(format!("toy_{dtype:?}.smae"));
        model.save(&path, dtype, serde_json::json!({ "note": "example" }))?;
        let bytes = std::fs::metadata(&path)?.len();
        let back = AudioMaeModel::load(&path)?;
        let worst = model
            .store
            .iter()
            .zip(back.store.iter())
            .flat_map(|(a, b)| {
                a.value
                    .data()
                    .iter()
                    .zip(b.value.data())
                    .map(|(x, y)| (x - y).abs())
            })
            .fold(0.0f64, f64::max);
        let plan =
            smae::masking::plan_unstructured(32, 0.0, &mut rand::rngs::mock::StepRng::new(0, 1))?;
        let latent_gap = {
            let z = |m: &AudioMaeModel| -> smae::Result<Vec<f64>> {
                let mut t = smae::numerics::Tape::new();
                let tok = m.embed_tokens(&mut t, &m.patches(&probe)?)?;
                let z = m.encode_visible(&mut t, tok, Some(&plan), None)?;
                Ok(t.value(z).data().to_vec())
            };
            z(&model)?
                .iter()
                .zip(z(&back)?)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max)
        };
        println!("{dtype:?}: {bytes} bytes, max weight change {worst:.1e}, max latent change {latent_gap:.1e}");
    }
    let ck = Checkpoint::load(dir.join("toy_F64.smae"))?;
    println!("metadata: {}", ck.metadata["extra"]);
    Ok(())
}
