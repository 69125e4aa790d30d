use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::attention::AttentionKind;
use crate::masking::{plan_structured, plan_unstructured, MaskStrategy};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random(shape: &[usize], r: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| r.gen_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}

/// Full-size 1024×128 grid with narrow layers, so shapes match the defaults.
fn narrow_full_grid(decoder: Option<DecoderConfig>, classes: Option<usize>) -> AudioMaeModel {
    let cfg = ModelConfig {
        encoder: EncoderConfig::custom("narrow", 1, 16, 2),
        decoder,
        n_classes: classes,
        ..ModelConfig::default()
    };
    AudioMaeModel::new(cfg, 1).unwrap()
}

fn narrow_decoder() -> DecoderConfig {
    DecoderConfig {
        depth: 2,
        dim: 8,
        heads: 2,
        attention: AttentionKind::Local,
        window: (4, 4),
    }
}

fn toy(seed: u64) -> AudioMaeModel {
    AudioMaeModel::new(ModelConfig::toy(), seed).unwrap()
}

#[test]
fn parameter_counts_track_reference_sizes() {
    let count = |e: EncoderConfig| e.param_count(256, AUDIOSET_CLASSES) as f64;
    for (e, millions) in [
        (EncoderConfig::vit_s(), 22.0),
        (EncoderConfig::vit_b(), 86.0),
        (EncoderConfig::vit_l(), 304.0),
    ] {
        let n = count(e) / 1e6;
        assert!(
            (n - millions).abs() / millions < 0.02,
            "{n}M vs {millions}M"
        );
    }
    let cfg = ModelConfig {
        decoder: None,
        n_classes: Some(5),
        ..ModelConfig::toy()
    };
    let m = AudioMaeModel::new(cfg.clone(), 0).unwrap();
    assert_eq!(m.store.num_scalars(), cfg.encoder.param_count(64, 5));
}

#[test]
fn encoder_keeps_102_tokens_at_80_percent() {
    let m = narrow_full_grid(None, None);
    assert_eq!(m.grid().n_patches(), 512);
    let spec = random(&[1024, 128], &mut rng(2));
    let plan = plan_unstructured(512, 0.8, &mut rng(3)).unwrap();
    let mut tape = Tape::new();
    let tok = m
        .embed_tokens(&mut tape, &m.patches(&spec).unwrap())
        .unwrap();
    let lat = m.encode_visible(&mut tape, tok, Some(&plan), None).unwrap();
    assert_eq!(tape.shape(lat), &[102, 16]);
}

#[test]
fn zero_weight_encoder_returns_normed_visible_tokens() {
    let mut m = toy(4);
    for i in 0..m.store.len() {
        let id = m.store.ids().nth(i).unwrap();
        if m.store.get(id).name.starts_with("encoder.blocks") {
            let shape = m.store.value(id).shape().to_vec();
            m.store.get_mut(id).value = Tensor::zeros(shape);
        }
    }
    let spec = random(&[64, 32], &mut rng(5));
    let plan = plan_unstructured(32, 0.5, &mut rng(6)).unwrap();
    let mut tape = Tape::new();
    let tok = m
        .embed_tokens(&mut tape, &m.patches(&spec).unwrap())
        .unwrap();
    let vis = select_visible(&mut tape, tok, &plan).unwrap();
    let (g, b) = (
        tape.constant(Tensor::full([64], 1.0)),
        tape.constant(Tensor::zeros([64])),
    );
    let want = tape.layer_norm(vis, g, b, LN_EPS).unwrap();
    let lat = m.encode_visible(&mut tape, tok, Some(&plan), None).unwrap();
    assert_eq!(tape.value(lat), tape.value(want));
}

#[test]
fn masked_patch_content_never_reaches_latents() {
    let m = toy(7);
    let spec = random(&[64, 32], &mut rng(8));
    let plan = plan_unstructured(32, 0.75, &mut rng(9)).unwrap();
    let latents = |spec: &Tensor| {
        let mut tape = Tape::new();
        let tok = m
            .embed_tokens(&mut tape, &m.patches(spec).unwrap())
            .unwrap();
        let lat = m.encode_visible(&mut tape, tok, Some(&plan), None).unwrap();
        tape.value(lat).clone()
    };
    let mut altered = spec.clone();
    for &i in &plan.masked_idx {
        let (t, f) = m.grid().coords(i);
        for dt in 0..8 {
            for df in 0..8 {
                altered.data_mut()[(t * 8 + dt) * 32 + f * 8 + df] = 1e3 * (dt as f64 - df as f64);
            }
        }
    }
    assert_ne!(altered, spec);
    assert_eq!(latents(&altered), latents(&spec));
}

#[test]
fn decoder_emits_one_prediction_per_patch() {
    let m = narrow_full_grid(Some(narrow_decoder()), None);
    let spec = random(&[1024, 128], &mut rng(10));
    let plan = plan_unstructured(512, 0.8, &mut rng(11)).unwrap();
    let mut tape = Tape::new();
    let out = m
        .pretrain_forward(&mut tape, &spec, &plan, Objective::Reconstruction)
        .unwrap();
    assert_eq!(tape.shape(out.pred), &[512, 256]);
}

#[test]
fn ratio_zero_decoder_uses_no_mask_token() {
    let mut m = toy(12);
    let spec = random(&[64, 32], &mut rng(13));
    let plan = plan_unstructured(32, 0.0, &mut rng(14)).unwrap();
    let run = |m: &AudioMaeModel| {
        let mut tape = Tape::new();
        let tok = m
            .embed_tokens(&mut tape, &m.patches(&spec).unwrap())
            .unwrap();
        let lat = m.encode_visible(&mut tape, tok, Some(&plan), None).unwrap();
        let p = m.decode(&mut tape, lat, &plan).unwrap();
        tape.value(p).clone()
    };
    let before = run(&m);
    let id = m.store.id("decoder.mask_token").unwrap();
    m.store.get_mut(id).value = Tensor::full([32], 123.0);
    assert_eq!(run(&m), before);
}

#[test]
fn symmetric_contexts_give_equal_predictions() {
    // a global decoder without positional information treats all mask tokens alike
    let cfg = ModelConfig {
        decoder: Some(DecoderConfig {
            attention: AttentionKind::Global,
            ..ModelConfig::toy().decoder.unwrap()
        }),
        ..ModelConfig::toy()
    };
    let mut m = AudioMaeModel::new(cfg, 15).unwrap();
    m.decoder.as_mut().unwrap().pos = Tensor::zeros([32, 32]);
    let spec = random(&[64, 32], &mut rng(16));
    let plan = plan_unstructured(32, 0.5, &mut rng(17)).unwrap();
    let mut tape = Tape::new();
    let out = m
        .pretrain_forward(&mut tape, &spec, &plan, Objective::Reconstruction)
        .unwrap();
    let pred = tape.value(out.pred);
    let (a, b) = (plan.masked_idx[0], plan.masked_idx[1]);
    assert_eq!(pred.row(a), pred.row(b));
}

fn unit_plan() -> MaskPlan {
    // patches 1 and 3 of 4 masked
    let g = crate::patches::PatchGridSpec::square(4, 1, 1).unwrap();
    let mut r = rng(0);
    loop {
        let p = plan_structured(&g, MaskStrategy::Time, 0.5, 0.0, &mut r).unwrap();
        if p.mask_flags() == [false, true, false, true] {
            return p;
        }
    }
}

#[test]
fn reconstruction_loss_cases() {
    let plan = unit_plan();
    let target = random(&[4, 3], &mut rng(18));
    let mut tape = Tape::new();
    let same = tape.constant(target.clone());
    let l = reconstruction_loss(&mut tape, same, &target, &plan, false).unwrap();
    assert_eq!(tape.value(l).item(), 0.0);

    let off = target.add(&Tensor::full([4, 3], 1.0)).unwrap();
    let p = tape.leaf(off.clone());
    let l = reconstruction_loss(&mut tape, p, &target, &plan, false).unwrap();
    assert!((tape.value(l).item() - 1.0).abs() < 1e-15);
    tape.backward(l).unwrap();
    let g = tape.grad(p).unwrap();
    for i in [0, 2] {
        assert!(g[i * 3..i * 3 + 3].iter().all(|&v| v == 0.0));
    }

    let mut vis_changed = off.clone();
    vis_changed.data_mut()[0] = 99.0;
    vis_changed.data_mut()[7] = -5.0;
    let p2 = tape.constant(vis_changed);
    let l2 = reconstruction_loss(&mut tape, p2, &target, &plan, true).unwrap();
    let p1 = tape.constant(off);
    let l1 = reconstruction_loss(&mut tape, p1, &target, &plan, true).unwrap();
    assert_eq!(tape.value(l1).item(), tape.value(l2).item());

    let none = plan_unstructured(4, 0.0, &mut rng(1)).unwrap();
    let p = tape.constant(target.clone());
    assert!(reconstruction_loss(&mut tape, p, &target, &none, false).is_err());
}

#[test]
fn per_patch_normalisation_standardises_rows() {
    let t = random(&[5, 16], &mut rng(19));
    let n = normalize_patches(&t).unwrap();
    for i in 0..5 {
        let r = n.row(i);
        let mean = r.iter().sum::<f64>() / 16.0;
        let var = r.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 16.0;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-4);
    }
}

fn direct_infonce(c: &Tensor, x: &Tensor) -> f64 {
    let n = c.rows();
    let dot = |i: usize, j: usize| {
        c.row(i)
            .iter()
            .zip(x.row(j))
            .map(|(a, b)| a * b)
            .sum::<f64>()
    };
    -(0..n)
        .map(|i| (dot(i, i).exp() / (0..n).map(|j| dot(i, j).exp()).sum::<f64>()).ln())
        .sum::<f64>()
        / n as f64
}

fn infonce_value(c: &Tensor, x: &Tensor) -> f64 {
    let mut tape = Tape::new();
    let (cv, xv) = (tape.constant(c.clone()), tape.constant(x.clone()));
    let l = infonce_loss(&mut tape, cv, xv).unwrap();
    tape.value(l).item()
}

#[test]
fn infonce_cases() {
    let mut r = rng(20);
    assert_eq!(
        infonce_value(&random(&[1, 4], &mut r), &random(&[1, 4], &mut r)),
        0.0
    );
    let ones = Tensor::full([2, 3], 1.0);
    assert!((infonce_value(&ones, &ones) - 2f64.ln()).abs() < 1e-15);
    for _ in 0..5 {
        let (c, x) = (random(&[4, 6], &mut r), random(&[4, 6], &mut r));
        assert!((infonce_value(&c, &x) - direct_infonce(&c, &x)).abs() < 1e-10);
    }
}

fn logits_loss(z: &[f64], y: &[f64], kind: ClassLoss) -> f64 {
    let mut tape = Tape::new();
    let zv = tape.constant(Tensor::new([1, z.len()], z.to_vec()).unwrap());
    let l = classification_loss(&mut tape, zv, y, kind).unwrap();
    tape.value(l).item()
}

#[test]
fn classification_loss_cases() {
    assert!(logits_loss(&[20.0, 0.0, 0.0], &[1.0, 0.0, 0.0], ClassLoss::Ce) < 1e-8);
    assert!(
        (logits_loss(&[0.0; 4], &[1.0, 0.0, 1.0, 0.0], ClassLoss::Bce) - 2f64.ln()).abs() < 1e-15
    );
    let mut r = rng(21);
    let z: Vec<f64> = (0..5).map(|_| r.gen_range(-4.0..4.0)).collect();
    let y: Vec<f64> = (0..5).map(|_| r.gen_range(0.0..1.0)).collect();
    let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
    let bce = -z
        .iter()
        .zip(&y)
        .map(|(&z, &y)| y * sig(z).ln() + (1.0 - y) * (1.0 - sig(z)).ln())
        .sum::<f64>()
        / 5.0;
    assert!((logits_loss(&z, &y, ClassLoss::Bce) - bce).abs() < 1e-10);
    let norm: f64 = z.iter().map(|v| v.exp()).sum();
    let ysum: f64 = y.iter().sum();
    let yn: Vec<f64> = y.iter().map(|v| v / ysum).collect();
    let ce = -z
        .iter()
        .zip(&yn)
        .map(|(&z, &y)| y * (z.exp() / norm).ln())
        .sum::<f64>();
    assert!((logits_loss(&z, &yn, ClassLoss::Ce) - ce).abs() < 1e-10);
    let mut tape = Tape::new();
    let zv = tape.constant(Tensor::zeros([1, 3]));
    assert!(classification_loss(&mut tape, zv, &[1.0, 0.0], ClassLoss::Ce).is_err());
}

#[test]
fn objectives_compose_as_documented() {
    let m = toy(22);
    let spec = random(&[64, 32], &mut rng(23));
    let plan = plan_unstructured(32, 0.8, &mut rng(24)).unwrap();
    let report = |o: Objective| {
        let mut tape = Tape::new();
        m.pretrain_forward(&mut tape, &spec, &plan, o)
            .unwrap()
            .report
    };
    let r = report(Objective::default());
    assert_eq!((r.l_c, r.total), (None, r.l_r));
    let r0 = report(Objective::Combined { alpha: 0.0 });
    assert!((r0.total - r0.l_r).abs() < 1e-12);
    let r2 = report(Objective::Combined { alpha: 0.2 });
    assert!((r2.total - (r2.l_r + 0.2 * r2.l_c.unwrap())).abs() < 1e-12);
    assert_eq!(r2.l_r, r.l_r);
    assert!(r.l_r >= 0.0 && r2.l_c.unwrap().is_finite());
}

#[test]
fn classifier_pooling_and_zero_head() {
    let mut m = narrow_full_grid(None, Some(3));
    let spec = random(&[1024, 128], &mut rng(25));
    let mut tape = Tape::new();
    let tok = m
        .embed_tokens(&mut tape, &m.patches(&spec).unwrap())
        .unwrap();
    let all = m.encode_visible(&mut tape, tok, None, None).unwrap();
    assert_eq!(tape.shape(all)[0], 512);
    let plan = plan_structured(
        m.grid(),
        MaskStrategy::TimeFrequency,
        0.3,
        0.3,
        &mut rng(26),
    )
    .unwrap();
    let some = m.encode_visible(&mut tape, tok, Some(&plan), None).unwrap();
    assert_eq!(tape.shape(some)[0], 270);
    assert_ne!(m.predict(&spec).unwrap(), vec![0.0; 3]);

    let (w, b) = m.head.unwrap();
    m.store.get_mut(w).value = Tensor::zeros([16, 3]);
    m.store.get_mut(b).value = Tensor::zeros([3]);
    assert_eq!(m.predict(&spec).unwrap(), vec![0.0; 3]);
}

#[test]
fn toy_end_to_end_gradient_spot_check() {
    // a generic point: at the 0.02 init, attention is near uniform and some
    // gradients sit below finite-difference round-off
    let mut m = toy(27);
    let mut r = rng(270);
    for p in m.store.iter_mut() {
        let base = if p.name.contains("norm") && p.name.ends_with("weight") {
            1.0
        } else {
            0.0
        };
        p.value
            .data_mut()
            .iter_mut()
            .for_each(|v| *v = base + r.gen_range(-0.3..0.3));
    }
    let spec = random(&[64, 32], &mut rng(28));
    let plan = plan_unstructured(32, 0.75, &mut rng(29)).unwrap();
    let objective = Objective::Combined { alpha: 0.2 };
    let loss = |m: &AudioMaeModel| {
        let mut tape = Tape::new();
        m.pretrain_forward(&mut tape, &spec, &plan, objective)
            .unwrap()
            .report
            .total
    };
    let mut g = m.clone();
    let mut tape = Tape::new();
    let out = g
        .pretrain_forward(&mut tape, &spec, &plan, objective)
        .unwrap();
    g.store.zero_grad();
    tape.backward_params(out.loss, &mut g.store).unwrap();
    let mut r = rng(30);
    let h = 1e-5;
    for id in m.store.ids() {
        let n = m.store.value(id).len();
        let k = r.gen_range(0..n);
        let mut plus = m.clone();
        plus.store.get_mut(id).value.data_mut()[k] += h;
        let mut minus = m.clone();
        minus.store.get_mut(id).value.data_mut()[k] -= h;
        let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
        let ad = g.store.get(id).grad[k];
        let rel = (ad - fd).abs() / ad.abs().max(fd.abs()).max(1e-6);
        assert!(
            rel < 1e-4,
            "{} [{k}]: ad {ad} fd {fd}",
            m.store.get(id).name
        );
    }
}

#[test]
fn checkpoint_round_trip_and_encoder_transfer() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("toy.smae");
    let m = toy(31);
    m.save(&path, DType::F64, serde_json::json!({"step": 3}))
        .unwrap();
    let back = AudioMaeModel::load(&path).unwrap();
    assert_eq!(back.config, m.config);
    let spec = random(&[64, 32], &mut rng(32));
    let plan = plan_unstructured(32, 0.8, &mut rng(33)).unwrap();
    let loss = |m: &AudioMaeModel| {
        let mut tape = Tape::new();
        m.pretrain_forward(&mut tape, &spec, &plan, Objective::Reconstruction)
            .unwrap()
            .report
            .total
    };
    assert_eq!(loss(&back), loss(&m));

    let ck = Checkpoint::load(&path).unwrap();
    let cfg = ModelConfig {
        decoder: None,
        n_classes: Some(4),
        ..ModelConfig::toy()
    };
    let mut clf = AudioMaeModel::new(cfg, 99).unwrap();
    clf.load_encoder_from(&ck).unwrap();
    let pe = clf.store.id("patch_embed.weight").unwrap();
    assert_eq!(
        clf.store.value(pe),
        m.store.value(m.store.id("patch_embed.weight").unwrap())
    );
    assert!(!clf.has_decoder());

    // a classifier with a different label space keeps a fresh head
    let p = dir.path().join("clf.smae");
    clf.save(&p, DType::F32, serde_json::Value::Null).unwrap();
    let cfg6 = ModelConfig {
        n_classes: Some(6),
        ..clf.config.clone()
    };
    let mut six = AudioMaeModel::new(cfg6.clone(), 5).unwrap();
    let fresh = six
        .store
        .value(six.store.id("head.weight").unwrap())
        .clone();
    six.load_encoder_from(&Checkpoint::load(&p).unwrap())
        .unwrap();
    assert_eq!(
        six.store.value(six.store.id("head.weight").unwrap()),
        &fresh
    );

    let other = ModelConfig {
        encoder: EncoderConfig::custom("x", 1, 64, 4),
        ..cfg6
    };
    let mut bad = AudioMaeModel::new(other, 0).unwrap();
    assert!(bad.load_encoder_from(&ck).is_err());
}
