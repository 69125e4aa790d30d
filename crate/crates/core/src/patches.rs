//! Spectrogram ↔ token conversion.
//!
//! Patch `i` sits at grid cell `(i / grid_f, i % grid_f)`: time-major,
//! row-major order. Overlapping grids (stride < patch) keep only windows that
//! fit entirely inside the spectrogram.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchGridSpec {
    pub patch_t: usize,
    pub patch_f: usize,
    pub stride_t: usize,
    pub stride_f: usize,
    pub grid_t: usize,
    pub grid_f: usize,
}

impl PatchGridSpec {
    pub fn new(
        frames: usize,
        bins: usize,
        patch: (usize, usize),
        stride: (usize, usize),
    ) -> Result<Self> {
        let (pt, pf) = patch;
        let (st, sf) = stride;
        if pt == 0 || pf == 0 || st == 0 || sf == 0 {
            return Err(Error::InvalidArgument(
                "patch and stride extents must be positive".into(),
            ));
        }
        if frames < pt || bins < pf {
            return Err(Error::InvalidArgument(format!(
                "{frames}x{bins} spectrogram is smaller than one {pt}x{pf} patch"
            )));
        }
        Ok(PatchGridSpec {
            patch_t: pt,
            patch_f: pf,
            stride_t: st,
            stride_f: sf,
            grid_t: 1 + (frames - pt) / st,
            grid_f: 1 + (bins - pf) / sf,
        })
    }

    /// Non-overlapping `patch × patch` grid.
    pub fn square(frames: usize, bins: usize, patch: usize) -> Result<Self> {
        Self::new(frames, bins, (patch, patch), (patch, patch))
    }

    pub fn n_patches(&self) -> usize {
        self.grid_t * self.grid_f
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_t * self.patch_f
    }

    pub fn is_overlapping(&self) -> bool {
        self.stride_t != self.patch_t || self.stride_f != self.patch_f
    }

    pub fn coords(&self, i: usize) -> (usize, usize) {
        (i / self.grid_f, i % self.grid_f)
    }

    pub fn index(&self, t: usize, f: usize) -> usize {
        t * self.grid_f + f
    }

    /// Frames and bins covered by the grid.
    pub fn covered_extent(&self) -> (usize, usize) {
        (
            (self.grid_t - 1) * self.stride_t + self.patch_t,
            (self.grid_f - 1) * self.stride_f + self.patch_f,
        )
    }
}

/// Token matrix paired with the grid it was cut from.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenSequence {
    pub tokens: Tensor,
    pub grid: PatchGridSpec,
}

/// `frames × bins` → `n_patches × (patch_t·patch_f)`.
pub fn patchify(spec: &Tensor, g: &PatchGridSpec) -> Result<Tensor> {
    let (frames, bins) = spec.dims2()?;
    let (need_t, need_f) = g.covered_extent();
    if frames < need_t || bins < need_f {
        return Err(Error::shape(
            "patchify",
            format!("grid needs {need_t}x{need_f}, spectrogram is {frames}x{bins}"),
        ));
    }
    let src = spec.data();
    let mut out = Vec::with_capacity(g.n_patches() * g.patch_dim());
    for gt in 0..g.grid_t {
        for gf in 0..g.grid_f {
            let (t0, f0) = (gt * g.stride_t, gf * g.stride_f);
            for dt in 0..g.patch_t {
                let row = (t0 + dt) * bins + f0;
                out.extend_from_slice(&src[row..row + g.patch_f]);
            }
        }
    }
    Tensor::new(vec![g.n_patches(), g.patch_dim()], out)
}

/// Inverse of [`patchify`] for non-overlapping grids.
pub fn unpatchify(patches: &Tensor, g: &PatchGridSpec) -> Result<Tensor> {
    if g.is_overlapping() {
        return Err(Error::InvalidArgument(
            "unpatchify needs stride == patch size; overlapping grids are unsupported for reconstruction".into(),
        ));
    }
    let (n, d) = patches.dims2()?;
    if n != g.n_patches() || d != g.patch_dim() {
        return Err(Error::shape(
            "unpatchify",
            format!(
                "{n}x{d} patches for a {}x{} grid of {}",
                g.grid_t,
                g.grid_f,
                g.patch_dim()
            ),
        ));
    }
    let (frames, bins) = g.covered_extent();
    let mut out = vec![0.0; frames * bins];
    for i in 0..n {
        let (gt, gf) = g.coords(i);
        let p = patches.row(i);
        for dt in 0..g.patch_t {
            let row = (gt * g.patch_t + dt) * bins + gf * g.patch_f;
            out[row..row + g.patch_f].copy_from_slice(&p[dt * g.patch_f..(dt + 1) * g.patch_f]);
        }
    }
    Tensor::new(vec![frames, bins], out)
}

/// Fixed 2-D sin-cos table. The first `d/2` columns encode the time index,
/// the last `d/2` the frequency index; each half interleaves
/// `sin(p·ω_k), cos(p·ω_k)` with `ω_k = 10000^(−2k/(d/2))`.
pub fn sinusoidal_embedding(g: &PatchGridSpec, d: usize) -> Result<Tensor> {
    if d == 0 || d % 4 != 0 {
        return Err(Error::InvalidArgument(format!(
            "embedding width {d} is not divisible by 4"
        )));
    }
    let half = d / 2;
    let omegas: Vec<f64> = (0..half / 2)
        .map(|k| 1.0 / 10000f64.powf(2.0 * k as f64 / half as f64))
        .collect();
    let mut out = vec![0.0; g.n_patches() * d];
    for i in 0..g.n_patches() {
        let (t, f) = g.coords(i);
        let row = &mut out[i * d..(i + 1) * d];
        for (k, &w) in omegas.iter().enumerate() {
            row[2 * k] = (t as f64 * w).sin();
            row[2 * k + 1] = (t as f64 * w).cos();
            row[half + 2 * k] = (f as f64 * w).sin();
            row[half + 2 * k + 1] = (f as f64 * w).cos();
        }
    }
    Tensor::new(vec![g.n_patches(), d], out)
}

/// `patches·W + b + pos` on the tape.
pub fn embed(tape: &mut Tape, patches: Var, w: Var, b: Var, pos: &Tensor) -> Result<Var> {
    let x = tape.linear(patches, w, b)?;
    let pos = tape.constant(pos.clone());
    tape.add(x, pos)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_spec(t: usize, f: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::new(
            [t, f],
            (0..t * f).map(|_| rng.gen_range(-3.0..3.0)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn grid_shapes_for_patch_and_stride_variants() {
        let cases = [
            ((16, 16), (16, 16), (64, 8)),
            ((16, 16), (10, 10), (101, 12)),
            ((32, 16), (16, 16), (63, 8)),
            ((16, 32), (16, 16), (64, 7)),
        ];
        for (patch, stride, want) in cases {
            let g = PatchGridSpec::new(1024, 128, patch, stride).unwrap();
            assert_eq!((g.grid_t, g.grid_f), want, "{patch:?}/{stride:?}");
            let p = patchify(&Tensor::zeros([1024, 128]), &g).unwrap();
            assert_eq!(p.shape(), &[want.0 * want.1, patch.0 * patch.1]);
        }
    }

    #[test]
    fn spectrogram_smaller_than_patch_is_rejected() {
        assert!(PatchGridSpec::square(8, 32, 16).is_err());
    }

    #[test]
    fn full_size_round_trip() {
        let g = PatchGridSpec::square(1024, 128, 16).unwrap();
        let s = random_spec(1024, 128, 1);
        assert_eq!(unpatchify(&patchify(&s, &g).unwrap(), &g).unwrap(), s);
    }

    #[test]
    fn single_patch_is_a_reshape() {
        let g = PatchGridSpec::square(4, 4, 4).unwrap();
        let s = random_spec(4, 4, 2);
        let p = patchify(&s, &g).unwrap();
        assert_eq!(p.data(), s.data());
        assert_eq!(p.shape(), &[1, 16]);
    }

    #[test]
    fn cells_land_at_their_offsets() {
        let g = PatchGridSpec::square(64, 32, 8).unwrap();
        // value encodes its own (t, f)
        let s = Tensor::new(
            [64, 32],
            (0..64 * 32)
                .map(|k| ((k / 32) * 1000 + k % 32) as f64)
                .collect(),
        )
        .unwrap();
        let p = patchify(&s, &g).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let (t, f) = (rng.gen_range(0..64), rng.gen_range(0..32));
            let i = g.index(t / 8, f / 8);
            let v = p.row(i)[(t % 8) * 8 + f % 8];
            assert_eq!(v, (t * 1000 + f) as f64);
        }
    }

    #[test]
    fn unpatchify_rejects_overlap() {
        let g = PatchGridSpec::new(1024, 128, (16, 16), (10, 10)).unwrap();
        let p = Tensor::zeros([g.n_patches(), 256]);
        assert!(unpatchify(&p, &g).is_err());
    }

    #[test]
    fn positional_table_properties() {
        let g = PatchGridSpec::square(1024, 128, 16).unwrap();
        let pe = sinusoidal_embedding(&g, 768).unwrap();
        let row0 = pe.row(0);
        for k in 0..192 {
            assert_eq!(row0[2 * k], 0.0);
            assert_eq!(row0[2 * k + 1], 1.0);
        }
        // same t, different f: first half identical
        assert_eq!(pe.row(g.index(5, 1))[..384], pe.row(g.index(5, 6))[..384]);
        let mut min = f64::INFINITY;
        for i in 0..g.n_patches() {
            for j in i + 1..g.n_patches() {
                let d: f64 = pe
                    .row(i)
                    .iter()
                    .zip(pe.row(j))
                    .map(|(a, b)| (a - b).powi(2))
                    .sum();
                min = min.min(d.sqrt());
            }
        }
        assert!(min > 0.0);
        assert_eq!(pe, sinusoidal_embedding(&g, 768).unwrap());
        assert!(sinusoidal_embedding(&g, 766).is_err());
    }

    #[test]
    fn zero_patches_embed_to_position_table() {
        let g = PatchGridSpec::square(32, 16, 8).unwrap();
        let pos = sinusoidal_embedding(&g, 8).unwrap();
        let mut tape = Tape::new();
        let p = tape.constant(Tensor::zeros([g.n_patches(), 64]));
        let w = tape.constant(Tensor::full([64, 8], 0.3));
        let b = tape.constant(Tensor::zeros([8]));
        let tok = embed(&mut tape, p, w, b, &pos).unwrap();
        assert_eq!(tape.value(tok), &pos);
    }

    #[test]
    fn unit_patches_with_identity_weights_add_position() {
        let g = PatchGridSpec::square(4, 4, 1).unwrap();
        let s = random_spec(4, 4, 4);
        let pos = sinusoidal_embedding(&g, 4).unwrap();
        let mut tape = Tape::new();
        let p = tape.constant(patchify(&s, &g).unwrap());
        let w = tape.constant(Tensor::new([1, 4], vec![1.0; 4]).unwrap());
        let b = tape.constant(Tensor::zeros([4]));
        let tok = embed(&mut tape, p, w, b, &pos).unwrap();
        for i in 0..16 {
            for k in 0..4 {
                assert_eq!(tape.value(tok).row(i)[k], s.data()[i] + pos.row(i)[k]);
            }
        }
    }

    #[test]
    fn embed_weight_gradient_matches_finite_differences() {
        let g = PatchGridSpec::square(8, 8, 4).unwrap();
        let s = random_spec(8, 8, 5);
        let patches = patchify(&s, &g).unwrap();
        let pos = sinusoidal_embedding(&g, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let w0 = Tensor::new([16, 4], (0..64).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let loss = |w: &Tensor| {
            let mut t = Tape::new();
            let p = t.constant(patches.clone());
            let wv = t.leaf(w.clone());
            let b = t.constant(Tensor::zeros([4]));
            let tok = embed(&mut t, p, wv, b, &pos).unwrap();
            let sq = t.square(tok);
            let l = t.sum(sq);
            (t, wv, l)
        };
        let (mut t, wv, l) = loss(&w0);
        t.backward(l).unwrap();
        let ad = t.grad(wv).unwrap().to_vec();
        for k in 0..64 {
            let mut wp = w0.clone();
            wp.data_mut()[k] += 1e-5;
            let mut wm = w0.clone();
            wm.data_mut()[k] -= 1e-5;
            let (tp, _, lp) = loss(&wp);
            let (tm, _, lm) = loss(&wm);
            let fd = (tp.value(lp).item() - tm.value(lm).item()) / 2e-5;
            assert!((fd - ad[k]).abs() / ad[k].abs().max(1e-3) < 1e-5);
        }
    }

    proptest! {
        #[test]
        fn round_trip_any_shape(gt in 1usize..6, gf in 1usize..6, pt in 1usize..5, pf in 1usize..5, seed in 0u64..1000) {
            let g = PatchGridSpec::new(gt * pt, gf * pf, (pt, pf), (pt, pf)).unwrap();
            let s = random_spec(gt * pt, gf * pf, seed);
            prop_assert_eq!(unpatchify(&patchify(&s, &g).unwrap(), &g).unwrap(), s);
        }
    }
}
