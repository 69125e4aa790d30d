//! Window partitions with and without a cyclic shift, and the equivalent dense mask.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use smae::attention::{
    multi_head_attention, window_partition, windowed_attention, AttentionWeights, WindowSpec,
};
use smae::numerics::{ParamStore, Tape, Tensor};
use smae::patches::PatchGridSpec;

fn main() -> smae::Result<()> {
    let grid = PatchGridSpec::new(8, 8, (1, 1), (1, 1))?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut store = ParamStore::new();
    let w = AttentionWeights::register(&mut store, "attn", 16, 4, &mut rng)?;
    let x = Tensor::new(
        vec![64, 16],
        (0..64 * 16).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )?;

    for shift in [0, 2] {
        let spec = WindowSpec {
            win_t: 4,
            win_f: 4,
            shift_t: shift,
            shift_f: shift,
        };
        let part = window_partition(&grid, &spec)?;
        let allowed = part.allowed_mask();
        let pairs = allowed.iter().filter(|&&a| a).count();
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let a = windowed_attention(&mut tape, &store, xv, &w, &grid, &spec)?;
        let b = multi_head_attention(&mut tape, &store, xv, &w, Some(&allowed))?;
        let diff = tape
            .value(a)
            .data()
            .iter()
            .zip(tape.value(b).data())
            .fold(0.0f64, |m, (p, q)| m.max((p - q).abs()));
        println!("4x4 windows, shift {shift}: {pairs} of 4096 pairs attend; windowed vs masked dense max diff {diff:.1e}");
    }
    Ok(())
}
