//! Parameter counts for the encoder variants and the toy model.

use smae::model::{AudioMaeModel, EncoderConfig, ModelConfig, AUDIOSET_CLASSES};

fn main() -> smae::Result<()> {
    for enc in [
        EncoderConfig::vit_s(),
        EncoderConfig::vit_b(),
        EncoderConfig::vit_l(),
    ] {
        let n = enc.param_count(256, AUDIOSET_CLASSES);
        println!(
            "{:<6} depth {:>2} width {:>4} heads {:>2}: {:>6.2}M parameters with a {AUDIOSET_CLASSES}-way head",
            enc.variant,
            enc.depth,
            enc.dim,
            enc.heads,
            n as f64 / 1e6
        );
    }
    let toy = AudioMaeModel::new(ModelConfig::toy(), 0)?;
    let enc: usize = toy
        .encoder_param_ids()
        .iter()
        .map(|&id| toy.store.value(id).len())
        .sum();
    println!(
        "toy: {} tensors, {} scalars ({} encoder), grid {}x{}",
        toy.store.len(),
        toy.store.num_scalars(),
        enc,
        toy.grid().grid_t,
        toy.grid().grid_f
    );
    for (i, layout) in toy.decoder_layouts().iter().enumerate() {
        println!("decoder layer {i}: {:?}", layout.kind);
    }
    Ok(())
}
