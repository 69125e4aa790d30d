//! Average precision, mAP and accuracy on a small scored set.

use smae::pipeline::{accuracy, average_precision, mean_average_precision};

fn main() -> smae::Result<()> {
    let scores = vec![
        vec![0.9, 0.1, 0.3],
        vec![0.2, 0.8, 0.4],
        vec![0.6, 0.7, 0.1],
        vec![0.1, 0.2, 0.9],
    ];
    let single = [0, 1, 0, 2];
    let multi: Vec<Vec<bool>> = vec![
        vec![true, false, false],
        vec![false, true, true],
        vec![true, true, false],
        vec![false, false, true],
    ];
    println!("top-1 accuracy {:.3}", accuracy(&scores, &single));
    let col0: Vec<f64> = scores.iter().map(|s| s[0]).collect();
    let pos0: Vec<bool> = multi.iter().map(|m| m[0]).collect();
    println!(
        "AP for class 0: {:.3}",
        average_precision(&col0, &pos0).unwrap_or(f64::NAN)
    );
    let (map, per) = mean_average_precision(&scores, &multi)?;
    println!("mAP {map:.3}, per class {per:?}");
    Ok(())
}
