//! Reverse-mode gradients of a small expression against central differences.

use smae::numerics::{Tape, Tensor, Var};

/// `mean(softmax(gelu(x·w))²)`, returning the leaf for `w` and the loss.
fn forward(tape: &mut Tape, x: &Tensor, w: &Tensor) -> smae::Result<(Var, Var)> {
    let xv = tape.constant(x.clone());
    let wv = tape.leaf(w.clone());
    let h = tape.matmul(xv, wv)?;
    let h = tape.gelu(h);
    let s = tape.softmax_rows(h, None)?;
    let sq = tape.square(s);
    Ok((wv, tape.mean(sq)))
}

fn main() -> smae::Result<()> {
    let x = Tensor::new(
        vec![3, 4],
        (0..12).map(|i| (i as f64 * 0.37).sin()).collect(),
    )?;
    let w = Tensor::new(
        vec![4, 5],
        (0..20).map(|i| (i as f64 * 0.71).cos()).collect(),
    )?;
    let mut tape = Tape::new();
    let (wv, loss) = forward(&mut tape, &x, &w)?;
    tape.backward(loss)?;
    let g = tape.grad(wv).expect("leaf gradient").to_vec();
    println!(
        "loss {:.6}, {} nodes on the tape",
        tape.value(loss).item(),
        tape.len()
    );

    let h = 1e-5;
    let mut worst = 0.0f64;
    for k in 0..w.len() {
        let eval = |d: f64| -> smae::Result<f64> {
            let mut wp = w.clone();
            wp.data_mut()[k] += d;
            let mut t = Tape::new();
            let (_, l) = forward(&mut t, &x, &wp)?;
            Ok(t.value(l).item())
        };
        let fd = (eval(h)? - eval(-h)?) / (2.0 * h);
        worst = worst.max((fd - g[k]).abs() / fd.abs().max(g[k].abs()).max(1e-9));
    }
    println!(
        "dL/dW checked at {} entries, worst relative error {worst:.2e}",
        w.len()
    );
    Ok(())
}
