//! Shared helpers for the integration suites.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ckav_core::store::{Checkpoint, CheckpointMeta};
use ckav_core::tensor::{Tensor, TensorMap};

/// A randomized but valid checkpoint: random tensor layout, finite f32
/// data salted with edge values, optional gradients and dev perplexity.
pub fn random_checkpoint(seed: u64) -> Checkpoint {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_tensors = rng.random_range(1..=5);

    let mut params = TensorMap::new();
    let mut shapes = Vec::new();
    for i in 0..n_tensors {
        let stem = ["w", "bias", "layer.norm", "emb/tok", "ß-head"][rng.random_range(0..5)];
        let name = format!("{stem}{i}");
        let rank = rng.random_range(0..=3usize);
        let shape: Vec<usize> = (0..rank).map(|_| rng.random_range(1..=6)).collect();
        let len: usize = shape.iter().product();
        let data: Vec<f32> = (0..len).map(|_| random_value(&mut rng)).collect();
        shapes.push((name.clone(), shape.clone()));
        params
            .insert(name, Tensor::new(shape, data).unwrap())
            .unwrap();
    }

    let grads = rng.random_bool(0.5).then(|| {
        let mut g = TensorMap::new();
        for (name, shape) in &shapes {
            let len: usize = shape.iter().product();
            let data: Vec<f32> = (0..len).map(|_| random_value(&mut rng)).collect();
            g.insert(name.clone(), Tensor::new(shape.clone(), data).unwrap())
                .unwrap();
        }
        g
    });

    let dev_ppl = rng
        .random_bool(0.5)
        .then(|| (rng.random::<f64>() * 12.0 - 6.0).exp());
    let step = rng.random_range(0..100_000);
    let tag = ["", "toy", "schnappszahl-111", "夜"][rng.random_range(0..4)].to_string();

    Checkpoint::new(
        params,
        grads,
        CheckpointMeta::new(step, dev_ppl, tag).unwrap(),
    )
    .unwrap()
}

/// Finite f32, occasionally an edge value (zeros, subnormals, huge).
fn random_value(rng: &mut ChaCha8Rng) -> f32 {
    if rng.random_bool(0.1) {
        let edge = [0.0f32, -0.0, f32::MIN_POSITIVE, 1.0e-40, 3.0e38, -2.5e-30];
        edge[rng.random_range(0..edge.len())]
    } else {
        (rng.random::<f32>() - 0.5) * 4.0
    }
}

/// Bit-level equality: tensor data compared by bits, metadata compared
/// exactly (dev_ppl by bits).
pub fn assert_checkpoints_bit_equal(a: &Checkpoint, b: &Checkpoint) {
    assert_tensormaps_bit_equal(a.params(), b.params());
    match (a.grads(), b.grads()) {
        (None, None) => {}
        (Some(ga), Some(gb)) => assert_tensormaps_bit_equal(ga, gb),
        _ => panic!("gradient presence differs"),
    }
    assert_eq!(a.meta().step, b.meta().step);
    assert_eq!(a.meta().tag, b.meta().tag);
    assert_eq!(
        a.meta().dev_ppl.map(f64::to_bits),
        b.meta().dev_ppl.map(f64::to_bits)
    );
}

pub fn assert_tensormaps_bit_equal(a: &TensorMap<f32>, b: &TensorMap<f32>) {
    let names_a: Vec<_> = a.names().collect();
    let names_b: Vec<_> = b.names().collect();
    assert_eq!(names_a, names_b);
    for (name, ta) in a.iter() {
        let tb = b.get(name).unwrap();
        assert_eq!(ta.shape(), tb.shape(), "shape of {name}");
        let bits_a: Vec<u32> = ta.data().iter().map(|v| v.to_bits()).collect();
        let bits_b: Vec<u32> = tb.data().iter().map(|v| v.to_bits()).collect();
        assert_eq!(bits_a, bits_b, "data bits of {name}");
    }
}
