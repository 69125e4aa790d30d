use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::error::Result;

type Build = dyn Fn(&mut Tape, &[Var]) -> Result<Var>;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}

fn eval(build: &Build, inputs: &[Tensor]) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let loss = build(&mut tape, &vars).unwrap();
    tape.value(loss).item()
}

/// Max relative error between tape gradients and central differences (h = 1e-5).
fn gradcheck(build: &Build, inputs: &[Tensor]) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let loss = build(&mut tape, &vars).unwrap();
    tape.backward(loss).unwrap();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for (i, t) in inputs.iter().enumerate() {
        let ad = tape
            .grad(vars[i])
            .map(<[f64]>::to_vec)
            .unwrap_or(vec![0.0; t.len()]);
        for k in 0..t.len() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[k] += h;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[k] -= h;
            let fd = (eval(build, &plus) - eval(build, &minus)) / (2.0 * h);
            let denom = ad[k].abs().max(fd.abs()).max(1e-3);
            worst = worst.max((ad[k] - fd).abs() / denom);
        }
    }
    worst
}

fn weighted_sum(tape: &mut Tape, x: Var, seed: u64) -> Result<Var> {
    // random projection so every output element gets a distinct cotangent
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = random(tape.shape(x), &mut rng);
    let w = tape.constant(w);
    let p = tape.mul(x, w)?;
    Ok(tape.sum(p))
}

#[test]
fn sum_gradient_is_ones() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::full([3, 2], 0.7));
    let s = tape.sum(x);
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(x).unwrap(), &[1.0; 6]);
}

#[test]
fn half_square_gradient_is_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let xv = random(&[4, 3], &mut rng);
    let mut tape = Tape::new();
    let x = tape.leaf(xv.clone());
    let sq = tape.mul(x, x).unwrap();
    let s = tape.sum(sq);
    let l = tape.scale(s, 0.5);
    tape.backward(l).unwrap();
    assert_eq!(tape.grad(x).unwrap(), xv.data());
}

#[test]
fn repeated_backward_accumulates() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::full([2], 1.0));
    let s = tape.sum(x);
    tape.backward(s).unwrap();
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(x).unwrap(), &[2.0, 2.0]);
}

#[test]
fn non_scalar_loss_rejected() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::zeros([2]));
    assert!(matches!(
        tape.backward(x),
        Err(crate::Error::NonScalarLoss(_))
    ));
}

#[test]
fn gelu_at_zero_and_layer_norm_of_constant_row() {
    assert_eq!(gelu(0.0), 0.0);
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::full([1, 5], 3.2));
    let g = tape.constant(Tensor::full([5], 1.0));
    let b = tape.constant(Tensor::zeros([5]));
    let y = tape.layer_norm(x, g, b, 1e-6).unwrap();
    assert!(tape.value(y).data().iter().all(|&v| v == 0.0));
}

#[test]
fn layer_norm_rows_are_standardized() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut tape = Tape::new();
    let x = tape.constant(random(&[6, 32], &mut rng).scale(7.0));
    let g = tape.constant(Tensor::full([32], 1.0));
    let b = tape.constant(Tensor::zeros([32]));
    let y = tape.layer_norm(x, g, b, 1e-6).unwrap();
    for r in 0..6 {
        let row = tape.value(y).row(r);
        let mu = row.iter().sum::<f64>() / 32.0;
        let var = row.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / 32.0;
        assert!(mu.abs() < 1e-10);
        assert!((var - 1.0).abs() < 1e-6, "{var}");
    }
}

#[test]
fn mlp_three_layers_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let inputs = vec![
        random(&[5, 4], &mut rng),
        random(&[4, 6], &mut rng),
        random(&[6], &mut rng),
        random(&[6, 6], &mut rng),
        random(&[6], &mut rng),
        random(&[6, 3], &mut rng),
        random(&[3], &mut rng),
    ];
    let build: Box<Build> = Box::new(|t, v| {
        let h = t.linear(v[0], v[1], v[2])?;
        let h = t.gelu(h);
        let h = t.linear(h, v[3], v[4])?;
        let h = t.gelu(h);
        let o = t.linear(h, v[5], v[6])?;
        let sq = t.square(o);
        Ok(t.mean(sq))
    });
    let err = gradcheck(&*build, &inputs);
    assert!(err < 1e-5, "max relative error {err}");
}

#[test]
fn structural_ops_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let inputs = vec![random(&[4, 6], &mut rng), random(&[1, 3], &mut rng)];
    let build: Box<Build> = Box::new(|t, v| {
        let a = t.slice_cols(v[0], 1, 3)?;
        let b = t.slice_cols(v[0], 3, 3)?;
        let c = t.concat_cols(&[b, a])?;
        let r = t.repeat_rows(v[1], 2)?;
        let rr = t.concat_cols(&[r, r])?;
        let d = t.concat_rows(&[c, rr])?;
        let g = t.gather_rows(d, &[5, 0, 2, 2, 4])?;
        let tr = t.transpose(g)?;
        let rs = t.reshape(tr, &[5, 6])?;
        let m = t.mean_rows(rs)?;
        let s = t.sub(m, m)?;
        let m2 = t.add(m, s)?;
        let m3 = t.add_scalar(m2, 0.3);
        weighted_sum(t, m3, 9)
    });
    assert!(gradcheck(&*build, &inputs) < 1e-5);
}

#[test]
fn softmax_family_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let inputs = vec![random(&[3, 5], &mut rng).scale(3.0)];
    let mask: Vec<bool> = (0..15).map(|k| k % 4 != 1).collect();
    let build: Box<Build> = Box::new(move |t, v| {
        let p = t.softmax_rows(v[0], Some(&mask))?;
        let l = t.log_softmax_rows(v[0])?;
        let sp = t.softplus(v[0]);
        let a = weighted_sum(t, p, 1)?;
        let b = weighted_sum(t, l, 2)?;
        let c = weighted_sum(t, sp, 3)?;
        let ab = t.add(a, b)?;
        t.add(ab, c)
    });
    assert!(gradcheck(&*build, &inputs) < 1e-5);
}

#[test]
fn layer_norm_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let inputs = vec![
        random(&[4, 7], &mut rng),
        random(&[7], &mut rng),
        random(&[7], &mut rng),
    ];
    let build: Box<Build> = Box::new(|t, v| {
        let y = t.layer_norm(v[0], v[1], v[2], 1e-6)?;
        weighted_sum(t, y, 4)
    });
    assert!(gradcheck(&*build, &inputs) < 1e-5);
}

#[test]
fn forward_is_bit_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let a = random(&[8, 8], &mut rng);
    let b = random(&[8, 8], &mut rng);
    let run = || {
        let mut t = Tape::new();
        let x = t.constant(a.clone());
        let y = t.constant(b.clone());
        let z = t.matmul(x, y).unwrap();
        let z = t.gelu(z);
        t.value(z).clone()
    };
    assert_eq!(run(), run());
}

proptest! {
    #[test]
    fn softmax_rows_sum_to_one(values in prop::collection::vec(-30.0f64..30.0, 12)) {
        let t = Tensor::new([3, 4], values).unwrap();
        let p = t.softmax_rows(None).unwrap();
        for r in 0..3 {
            prop_assert!((p.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn elementwise_gradients_match(values in prop::collection::vec(-2.0f64..2.0, 6)) {
        let x = Tensor::new([2, 3], values).unwrap();
        let build: Box<Build> = Box::new(|t, v| {
            let g = t.gelu(v[0]);
            let s = t.softplus(v[0]);
            let m = t.mul(g, s)?;
            let sc = t.scale(m, 1.7);
            weighted_sum(t, sc, 6)
        });
        prop_assert!(gradcheck(&*build, &[x]) < 1e-5);
    }
}
