//! Label-frequency weights and weighted sampling without replacement.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use smae::pipeline::{
    balance_expand, class_weights, instance_weights, weighted_sample_without_replacement,
};

fn main() -> smae::Result<()> {
    let labels = vec![
        vec![0],
        vec![0, 1],
        vec![1],
        vec![2],
        vec![0, 2],
        vec![0],
        vec![0],
    ];
    let cw = class_weights(&labels, 4);
    let iw = instance_weights(&labels, &cw);
    println!(
        "class weights   {:?}",
        cw.iter()
            .map(|w| (w * 10.0).round() / 10.0)
            .collect::<Vec<_>>()
    );
    println!(
        "instance weights {:?}",
        iw.iter()
            .map(|w| (w * 10.0).round() / 10.0)
            .collect::<Vec<_>>()
    );

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut hits = vec![0usize; labels.len()];
    for _ in 0..2000 {
        for i in weighted_sample_without_replacement(&iw, 3, &mut rng)? {
            hits[i] += 1;
        }
    }
    println!("inclusions over 2000 draws of 3: {hits:?}");

    let expanded = balance_expand(&labels, 0, 0.5);
    println!(
        "balanced to half of class 0: {} indices {expanded:?}",
        expanded.len()
    );
    Ok(())
}
