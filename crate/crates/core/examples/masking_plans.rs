//! Unstructured and structured masking plans drawn on a small grid.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use smae::masking::{plan_for, MaskStrategy};
use smae::patches::PatchGridSpec;

fn show(grid: &PatchGridSpec, flags: &[bool]) {
    for f in (0..grid.grid_f).rev() {
        let row: String = (0..grid.grid_t)
            .map(|t| if flags[grid.index(t, f)] { '#' } else { '.' })
            .collect();
        println!("  {row}");
    }
}

fn main() -> smae::Result<()> {
    let grid = PatchGridSpec::new(256, 128, (16, 16), (16, 16))?;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for (strategy, rt, rf) in [
        (MaskStrategy::Unstructured, 0.8, 0.0),
        (MaskStrategy::Time, 0.25, 0.0),
        (MaskStrategy::Frequency, 0.0, 0.25),
        (MaskStrategy::TimeFrequency, 0.25, 0.25),
    ] {
        let plan = plan_for(&grid, strategy, rt, rf, &mut rng)?;
        println!(
            "{strategy:?} ({rt}, {rf}): {} of {} masked, {} visible",
            plan.n_masked(),
            plan.n_total,
            plan.n_visible()
        );
        show(&grid, &plan.mask_flags());
    }
    Ok(())
}
