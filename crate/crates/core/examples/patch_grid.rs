//! Patch grids for the standard input and a patchify/unpatchify round trip.

use smae::numerics::Tensor;
use smae::patches::{patchify, sinusoidal_embedding, unpatchify, PatchGridSpec};

fn main() -> smae::Result<()> {
    for (patch, stride) in [
        ((16, 16), (16, 16)),
        ((16, 16), (10, 10)),
        ((32, 16), (16, 16)),
        ((16, 32), (16, 16)),
    ] {
        let g = PatchGridSpec::new(1024, 128, patch, stride)?;
        println!(
            "patch {:>2}x{:<2} stride {:>2}x{:<2} -> grid {:>3}x{:<2} = {:>4} tokens of dim {}",
            patch.0,
            patch.1,
            stride.0,
            stride.1,
            g.grid_t,
            g.grid_f,
            g.n_patches(),
            g.patch_dim()
        );
    }

    let g = PatchGridSpec::new(64, 32, (8, 8), (8, 8))?;
    let spec = Tensor::new(vec![64, 32], (0..64 * 32).map(|i| i as f64).collect())?;
    let seq = patchify(&spec, &g)?;
    let back = unpatchify(&seq, &g)?;
    println!(
        "64x32 -> {:?} tokens -> round trip exact: {}",
        seq.shape(),
        back == spec
    );
    let pos = sinusoidal_embedding(&g, 16)?;
    println!(
        "2-D sinusoidal table {:?}, token (1,2) starts {:?}",
        pos.shape(),
        &pos.row(g.index(1, 2))[..4]
    );
    Ok(())
}
