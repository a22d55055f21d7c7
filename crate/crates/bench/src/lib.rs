//! Seeded inputs shared by the benchmarks.

use cim_core::{normalize, CorpusBuilder, CorpusIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `n` records with uniform random embeddings, normalized on build.
pub fn corpus(n: usize, image_dim: usize, text_dim: usize, seed: u64) -> CorpusIndex {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = CorpusBuilder::with_capacity(image_dim, text_dim, n);
    let mut img = vec![0.0f32; image_dim];
    let mut txt = vec![0.0f32; text_dim];
    for i in 0..n {
        img.iter_mut()
            .for_each(|x| *x = rng.random_range(-1.0..1.0));
        txt.iter_mut()
            .for_each(|x| *x = rng.random_range(-1.0..1.0));
        b.push(format!("r{i}"), &img, &txt, None)
            .expect("valid row");
    }
    b.build().expect("non-empty corpus")
}

pub fn unit_vectors(count: usize, dim: usize, seed: u64) -> Vec<Vec<f32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let raw: Vec<f32> = (0..dim).map(|_| rng.random_range(-1.0f32..1.0)).collect();
            normalize(&raw).expect("non-zero").into_inner()
        })
        .collect()
}
