//! Mask plans: which patches the encoder sees and how to put the sequence
//! back in grid order afterwards.
//!
//! A plan lists visible indices followed by masked indices (the "shuffled"
//! order). `restore[i]` is the shuffled position holding original patch `i`,
//! so gathering shuffled rows by `restore` yields grid order.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Tape, Tensor, Var};
use crate::patches::PatchGridSpec;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskStrategy {
    Unstructured,
    Time,
    Frequency,
    TimeFrequency,
}

impl std::str::FromStr for MaskStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unstructured" => Ok(MaskStrategy::Unstructured),
            "time" => Ok(MaskStrategy::Time),
            "freq" | "frequency" => Ok(MaskStrategy::Frequency),
            "timefreq" | "timefrequency" | "time+freq" => Ok(MaskStrategy::TimeFrequency),
            other => Err(Error::Config(format!("unknown masking strategy {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskPlan {
    pub strategy: MaskStrategy,
    /// Overall ratio for unstructured plans.
    pub ratio: f64,
    pub ratio_t: f64,
    pub ratio_f: f64,
    #[serde(default)]
    pub seed: Option<u64>,
    pub n_total: usize,
    pub visible_idx: Vec<usize>,
    pub masked_idx: Vec<usize>,
    pub restore: Vec<usize>,
}

fn check_ratio(r: f64, what: &str) -> Result<()> {
    if !(0.0..1.0).contains(&r) {
        return Err(Error::Masking(format!("{what} ratio {r} outside [0, 1)")));
    }
    Ok(())
}

/// `round((1 − ratio) · n)`.
pub fn visible_count(n: usize, ratio: f64) -> usize {
    ((1.0 - ratio) * n as f64).round() as usize
}

/// Number of whole columns (or rows) masked out of `extent`.
pub fn masked_lines(extent: usize, ratio: f64) -> usize {
    (ratio * extent as f64).round() as usize
}

impl MaskPlan {
    fn from_groups(
        strategy: MaskStrategy,
        (ratio, ratio_t, ratio_f): (f64, f64, f64),
        visible: Vec<usize>,
        masked: Vec<usize>,
    ) -> Result<Self> {
        let n_total = visible.len() + masked.len();
        if visible.is_empty() {
            return Err(Error::Masking(format!(
                "plan would mask all {n_total} patches; nothing left for the encoder"
            )));
        }
        let mut restore = vec![usize::MAX; n_total];
        for (pos, &orig) in visible.iter().chain(&masked).enumerate() {
            restore[orig] = pos;
        }
        debug_assert!(restore.iter().all(|&r| r != usize::MAX));
        Ok(MaskPlan {
            strategy,
            ratio,
            ratio_t,
            ratio_f,
            seed: None,
            n_total,
            visible_idx: visible,
            masked_idx: masked,
            restore,
        })
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn n_visible(&self) -> usize {
        self.visible_idx.len()
    }

    pub fn n_masked(&self) -> usize {
        self.masked_idx.len()
    }

    pub fn masked_fraction(&self) -> f64 {
        self.n_masked() as f64 / self.n_total as f64
    }

    /// Visible indices followed by masked indices.
    pub fn shuffled_order(&self) -> Vec<usize> {
        self.visible_idx
            .iter()
            .chain(&self.masked_idx)
            .copied()
            .collect()
    }

    pub fn is_masked(&self, i: usize) -> bool {
        self.restore[i] >= self.n_visible()
    }

    /// Boolean mask over original positions.
    pub fn mask_flags(&self) -> Vec<bool> {
        (0..self.n_total).map(|i| self.is_masked(i)).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Uniformly random subset of `round((1−ratio)·n)` visible patches.
pub fn plan_unstructured(n_total: usize, ratio: f64, rng: &mut impl Rng) -> Result<MaskPlan> {
    check_ratio(ratio, "masking")?;
    let n_vis = visible_count(n_total, ratio);
    let mut perm: Vec<usize> = (0..n_total).collect();
    perm.shuffle(rng);
    let masked = perm.split_off(n_vis);
    MaskPlan::from_groups(MaskStrategy::Unstructured, (ratio, 0.0, 0.0), perm, masked)
}

/// Whole time columns and/or frequency rows. `TimeFrequency` masks the union
/// of independently chosen columns (`ratio_t`) and rows (`ratio_f`).
pub fn plan_structured(
    grid: &PatchGridSpec,
    strategy: MaskStrategy,
    ratio_t: f64,
    ratio_f: f64,
    rng: &mut impl Rng,
) -> Result<MaskPlan> {
    check_ratio(ratio_t, "time")?;
    check_ratio(ratio_f, "frequency")?;
    let pick = |extent: usize, r: f64, rng: &mut dyn rand::RngCore| {
        let mut lines: Vec<usize> = (0..extent).collect();
        lines.shuffle(rng);
        lines.truncate(masked_lines(extent, r));
        let mut flags = vec![false; extent];
        lines.into_iter().for_each(|l| flags[l] = true);
        flags
    };
    let (cols, rows) = match strategy {
        MaskStrategy::Unstructured => {
            return Err(Error::Masking(
                "use plan_unstructured for unstructured masking".into(),
            ))
        }
        MaskStrategy::Time => (pick(grid.grid_t, ratio_t, rng), vec![false; grid.grid_f]),
        MaskStrategy::Frequency => (vec![false; grid.grid_t], pick(grid.grid_f, ratio_f, rng)),
        MaskStrategy::TimeFrequency => {
            let c = pick(grid.grid_t, ratio_t, rng);
            (c, pick(grid.grid_f, ratio_f, rng))
        }
    };
    let (mut visible, mut masked): (Vec<usize>, Vec<usize>) =
        (0..grid.n_patches()).partition(|&i| {
            let (t, f) = grid.coords(i);
            !(cols[t] || rows[f])
        });
    visible.shuffle(rng);
    masked.shuffle(rng);
    let (rt, rf) = match strategy {
        MaskStrategy::Time => (ratio_t, 0.0),
        MaskStrategy::Frequency => (0.0, ratio_f),
        _ => (ratio_t, ratio_f),
    };
    MaskPlan::from_groups(strategy, (0.0, rt, rf), visible, masked)
}

/// Dispatches on strategy; `ratio_t` doubles as the unstructured ratio.
pub fn plan_for(
    grid: &PatchGridSpec,
    strategy: MaskStrategy,
    ratio_t: f64,
    ratio_f: f64,
    rng: &mut impl Rng,
) -> Result<MaskPlan> {
    match strategy {
        MaskStrategy::Unstructured => plan_unstructured(grid.n_patches(), ratio_t, rng),
        s => plan_structured(grid, s, ratio_t, ratio_f, rng),
    }
}

fn check_count(rows: usize, plan: &MaskPlan) -> Result<()> {
    if rows != plan.n_total {
        return Err(Error::Masking(format!(
            "plan covers {} patches, sequence has {rows}",
            plan.n_total
        )));
    }
    Ok(())
}

/// Visible rows in the plan's shuffled order.
pub fn select_visible(tape: &mut Tape, tokens: Var, plan: &MaskPlan) -> Result<Var> {
    check_count(tape.value(tokens).rows(), plan)?;
    tape.gather_rows(tokens, &plan.visible_idx)
}

pub fn select_visible_tensor(tokens: &Tensor, plan: &MaskPlan) -> Result<Tensor> {
    check_count(tokens.rows(), plan)?;
    tokens.gather_rows(&plan.visible_idx)
}

/// Appends one mask token per masked patch, restores grid order and adds `pos`.
pub fn restore_full_sequence(
    tape: &mut Tape,
    encoded: Var,
    mask_token: Var,
    plan: &MaskPlan,
    pos: &Tensor,
) -> Result<Var> {
    let (n_vis, d) = tape.value(encoded).dims2()?;
    if n_vis != plan.n_visible() || tape.value(mask_token).len() != d {
        return Err(Error::shape(
            "restore_full_sequence",
            format!(
                "{n_vis}x{d} encoded rows, mask token of {}, plan expects {} visible",
                tape.value(mask_token).len(),
                plan.n_visible()
            ),
        ));
    }
    if pos.shape() != [plan.n_total, d] {
        return Err(Error::shape(
            "restore_full_sequence",
            format!("positional table {:?} vs {}x{d}", pos.shape(), plan.n_total),
        ));
    }
    let full = if plan.n_masked() > 0 {
        let tok = tape.reshape(mask_token, &[1, d])?;
        let fill = tape.repeat_rows(tok, plan.n_masked())?;
        tape.concat_rows(&[encoded, fill])?
    } else {
        encoded
    };
    let ordered = tape.gather_rows(full, &plan.restore)?;
    let pos = tape.constant(pos.clone());
    tape.add(ordered, pos)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn unstructured_counts() {
        assert_eq!(
            plan_unstructured(512, 0.7, &mut rng(0))
                .unwrap()
                .n_visible(),
            154
        );
        assert_eq!(
            plan_unstructured(512, 0.8, &mut rng(0))
                .unwrap()
                .n_visible(),
            102
        );
        let p = plan_unstructured(512, 0.0, &mut rng(0)).unwrap();
        assert_eq!((p.n_visible(), p.n_masked()), (512, 0));
        assert!(plan_unstructured(1, 0.9, &mut rng(0)).is_err());
        assert!(plan_unstructured(10, 1.0, &mut rng(0)).is_err());
    }

    #[test]
    fn structured_counts() {
        let g = PatchGridSpec::square(1024, 128, 16).unwrap();
        let p = plan_structured(&g, MaskStrategy::Time, 0.5, 0.0, &mut rng(1)).unwrap();
        assert_eq!(p.n_masked(), 256);
        let p = plan_structured(&g, MaskStrategy::TimeFrequency, 0.3, 0.3, &mut rng(2)).unwrap();
        assert_eq!(p.n_masked(), 19 * 8 + 2 * 64 - 19 * 2);
        assert_eq!(p.n_visible(), 270);
        let p = plan_structured(&g, MaskStrategy::Frequency, 0.0, 0.0, &mut rng(3)).unwrap();
        assert_eq!(p.n_masked(), 0);
    }

    #[test]
    fn masked_time_columns_are_whole() {
        let g = PatchGridSpec::square(64, 32, 8).unwrap();
        let p = plan_structured(&g, MaskStrategy::Time, 0.5, 0.0, &mut rng(4)).unwrap();
        for t in 0..g.grid_t {
            let m: Vec<bool> = (0..g.grid_f).map(|f| p.is_masked(g.index(t, f))).collect();
            assert!(m.iter().all(|&x| x) || m.iter().all(|&x| !x));
        }
    }

    #[test]
    fn all_masked_structured_plan_errors() {
        let g = PatchGridSpec::square(8, 8, 8).unwrap();
        assert!(plan_structured(&g, MaskStrategy::Time, 0.6, 0.0, &mut rng(5)).is_err());
    }

    #[test]
    fn gathered_rows_come_from_recorded_sources() {
        let p = plan_unstructured(20, 0.4, &mut rng(6)).unwrap();
        let x = Tensor::new([20, 3], (0..60).map(|v| v as f64).collect()).unwrap();
        let vis = select_visible_tensor(&x, &p).unwrap();
        assert_eq!(vis.rows(), 12);
        for (r, &src) in p.visible_idx.iter().enumerate() {
            assert_eq!(vis.row(r), x.row(src));
        }
        let ident = plan_unstructured(20, 0.0, &mut rng(6)).unwrap();
        let mut seen = ident.visible_idx.clone();
        seen.sort();
        assert_eq!(seen, (0..20).collect::<Vec<_>>());
        let bad = Tensor::zeros([19, 3]);
        assert!(select_visible_tensor(&bad, &p).is_err());
    }

    #[test]
    fn restore_places_mask_tokens_and_visible_rows() {
        let p = plan_unstructured(512, 0.8, &mut rng(7)).unwrap();
        let d = 4;
        let x = Tensor::new([512, d], (0..512 * d).map(|v| v as f64 + 1.0).collect()).unwrap();
        let pos = Tensor::zeros([512, d]);
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let vis = select_visible(&mut tape, xv, &p).unwrap();
        let mt = tape.constant(Tensor::full([d], -7.0));
        let out = restore_full_sequence(&mut tape, vis, mt, &p, &pos).unwrap();
        let out = tape.value(out);
        let mut mask_rows = 0;
        for i in 0..512 {
            if out.row(i).iter().all(|&v| v == -7.0) {
                mask_rows += 1;
                assert!(p.is_masked(i));
            } else {
                assert_eq!(out.row(i), x.row(i));
            }
        }
        assert_eq!(mask_rows, 410);
    }

    #[test]
    fn ratio_zero_restore_is_an_unshuffle_plus_position() {
        let p = plan_unstructured(6, 0.0, &mut rng(8)).unwrap();
        let x = Tensor::new([6, 4], (0..24).map(|v| v as f64).collect()).unwrap();
        let g = PatchGridSpec::square(6, 4, 2).unwrap();
        let pos = crate::patches::sinusoidal_embedding(&g, 4).unwrap();
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let vis = select_visible(&mut tape, xv, &p).unwrap();
        let mt = tape.constant(Tensor::zeros([4]));
        let out = restore_full_sequence(&mut tape, vis, mt, &p, &pos).unwrap();
        assert_eq!(tape.value(out), &x.add(&pos).unwrap());
    }

    #[test]
    fn unstructured_visibility_is_uniform() {
        let n = 512;
        let trials = 10_000;
        let mut hits = vec![0u32; n];
        let mut r = rng(9);
        for _ in 0..trials {
            for i in plan_unstructured(n, 0.8, &mut r).unwrap().visible_idx {
                hits[i] += 1;
            }
        }
        let p = 102.0 / 512.0;
        let sigma = (p * (1.0 - p) / trials as f64).sqrt();
        for h in hits {
            let freq = h as f64 / trials as f64;
            assert!((freq - p).abs() < 5.0 * sigma, "{freq}");
        }
    }

    #[test]
    fn plan_json_round_trip() {
        let g = PatchGridSpec::square(64, 32, 8).unwrap();
        let p = plan_structured(&g, MaskStrategy::TimeFrequency, 0.25, 0.5, &mut rng(10))
            .unwrap()
            .with_seed(10);
        let back: MaskPlan = serde_json::from_str(&p.to_json().unwrap()).unwrap();
        assert_eq!(back, p);
    }

    fn strategy() -> impl Strategy<Value = MaskStrategy> {
        prop_oneof![
            Just(MaskStrategy::Time),
            Just(MaskStrategy::Frequency),
            Just(MaskStrategy::TimeFrequency),
        ]
    }

    proptest! {
        #[test]
        fn structured_counts_follow_inclusion_exclusion(
            gt in 1usize..=128, gf in 1usize..=128,
            rt in 0.0f64..0.95, rf in 0.0f64..0.95,
            s in strategy(), seed in 0u64..1_000_000,
        ) {
            let g = PatchGridSpec::square(gt, gf, 1).unwrap();
            let (c, r) = match s {
                MaskStrategy::Time => (masked_lines(gt, rt), 0),
                MaskStrategy::Frequency => (0, masked_lines(gf, rf)),
                _ => (masked_lines(gt, rt), masked_lines(gf, rf)),
            };
            let want = c * gf + r * gt - c * r;
            match plan_structured(&g, s, rt, rf, &mut rng(seed)) {
                Ok(p) => {
                    prop_assert_eq!(p.n_masked(), want);
                    prop_assert_eq!(p.n_visible() + p.n_masked(), gt * gf);
                }
                Err(_) => prop_assert_eq!(want, gt * gf),
            }
        }

        #[test]
        fn plans_are_deterministic_and_partition(n in 1usize..300, ratio in 0.0f64..0.99, seed in 0u64..1000) {
            let a = plan_unstructured(n, ratio, &mut rng(seed));
            let b = plan_unstructured(n, ratio, &mut rng(seed));
            match (a, b) {
                (Ok(a), Ok(b)) => {
                    prop_assert_eq!(&a, &b);
                    let mut all = a.shuffled_order();
                    all.sort();
                    prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
                    let order = a.shuffled_order();
                    for i in 0..n {
                        prop_assert_eq!(order[a.restore[i]], i);
                    }
                }
                (Err(_), Err(_)) => prop_assert_eq!(visible_count(n, ratio), 0),
                _ => prop_assert!(false, "nondeterministic outcome"),
            }
        }
    }
}
