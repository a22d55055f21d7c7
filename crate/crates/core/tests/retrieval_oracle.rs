use cim_core::{top_k, top_k_batch, top_k_with, CorpusBuilder, CorpusIndex, ScanOptions};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Full-sort brute force: sequential f64 dot products, sorted by
/// (similarity desc, row asc).
fn oracle(query: &[f32], idx: &CorpusIndex, exclude: Option<usize>) -> Vec<(usize, f64)> {
    let mut all: Vec<(usize, f64)> = (0..idx.len())
        .filter(|&r| Some(r) != exclude)
        .map(|r| {
            let s: f64 = query
                .iter()
                .zip(idx.text(r))
                .map(|(&a, &b)| a as f64 * b as f64)
                .sum();
            (r, s.clamp(-1.0, 1.0))
        })
        .collect();
    all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    all
}

fn random_corpus(rng: &mut ChaCha8Rng, n: usize, dim: usize, dup_rate: f64) -> CorpusIndex {
    let mut b = CorpusBuilder::with_capacity(2, dim, n);
    let mut texts: Vec<Vec<f32>> = Vec::with_capacity(n);
    for i in 0..n {
        let text = if i > 0 && rng.random_bool(dup_rate) {
            texts[rng.random_range(0..i)].clone()
        } else {
            (0..dim).map(|_| rng.random_range(-1.0f32..1.0)).collect()
        };
        b.push(
            format!("r{i}"),
            &[1.0, rng.random_range(-1.0f32..1.0)],
            &text,
            None,
        )
        .unwrap();
        texts.push(text);
    }
    b.build().unwrap()
}

fn random_query(rng: &mut ChaCha8Rng, idx: &CorpusIndex) -> Vec<f32> {
    if rng.random_bool(0.3) {
        // Query equal to a stored text: exercises exact self-matches and ties.
        idx.text(rng.random_range(0..idx.len())).to_vec()
    } else {
        let raw: Vec<f32> = (0..idx.text_dim())
            .map(|_| rng.random_range(-1.0f32..1.0))
            .collect();
        cim_core::normalize(&raw).unwrap().into_inner()
    }
}

fn check_all_k(idx: &CorpusIndex, query: &[f32], parts: usize) {
    let expected = oracle(query, idx, None);
    for k in 1..=idx.len() {
        let got = top_k_with(query, idx, k, None, &ScanOptions::partitions(parts)).unwrap();
        assert_eq!(got.len(), k);
        assert!(!got.truncated);
        for (e, (row, sim)) in got.entries.iter().zip(&expected[..k]) {
            assert_eq!(e.row, *row, "k={k}");
            assert!((e.text_similarity - sim).abs() < 1e-9);
            assert_eq!(e.id, idx.id(*row));
        }
    }
}

#[test]
fn matches_full_sort_for_every_k() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for case in 0..25 {
        let n = rng.random_range(1..=200);
        let dim = rng.random_range(1..=64);
        let idx = random_corpus(&mut rng, n, dim, 0.2);
        let q = random_query(&mut rng, &idx);
        check_all_k(&idx, &q, 1 + case % 5);
    }
}

#[test]
fn exclusion_matches_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..20 {
        let n = rng.random_range(2..=150);
        let idx = random_corpus(&mut rng, n, 16, 0.3);
        let q = random_query(&mut rng, &idx);
        let ex = rng.random_range(0..n);
        let expected = oracle(&q, &idx, Some(ex));
        let k = rng.random_range(1..=n + 3);
        let got = top_k(&q, &idx, k, Some(idx.id(ex))).unwrap();
        assert_eq!(got.truncated, k > n - 1);
        let rows: Vec<usize> = got.rows().collect();
        let want: Vec<usize> = expected.iter().take(k).map(|e| e.0).collect();
        assert_eq!(rows, want);
    }
}

#[test]
fn partitioning_is_bitwise_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let idx = random_corpus(&mut rng, 5000, 32, 0.05);
    let queries: Vec<Vec<f32>> = (0..6).map(|_| random_query(&mut rng, &idx)).collect();
    for k in [1, 5, 64, 65, 300] {
        let base = top_k_batch(&queries, &idx, k, None, &ScanOptions::partitions(1)).unwrap();
        for parts in [2, 3, 8, 64] {
            let other =
                top_k_batch(&queries, &idx, k, None, &ScanOptions::partitions(parts)).unwrap();
            for (a, b) in base.iter().zip(&other) {
                assert_eq!(a.entries.len(), b.entries.len());
                for (x, y) in a.entries.iter().zip(&b.entries) {
                    assert_eq!(x.row, y.row);
                    assert_eq!(x.text_similarity.to_bits(), y.text_similarity.to_bits());
                }
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn similarities_non_increasing(seed in any::<u64>(), n in 1usize..120, k in 1usize..40) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let idx = random_corpus(&mut rng, n, 8, 0.2);
        let q = random_query(&mut rng, &idx);
        let s = top_k(&q, &idx, k, None).unwrap();
        prop_assert_eq!(s.len(), k.min(n));
        prop_assert_eq!(s.truncated, k > n);
        for w in s.entries.windows(2) {
            prop_assert!(w[0].text_similarity >= w[1].text_similarity);
            if w[0].text_similarity == w[1].text_similarity {
                prop_assert!(w[0].row < w[1].row);
            }
        }
        let mut rows: Vec<usize> = s.rows().collect();
        rows.sort_unstable();
        rows.dedup();
        prop_assert_eq!(rows.len(), s.len());
        for e in &s.entries {
            let cos = cim_core::cosine(&q, idx.text(e.row)).unwrap();
            prop_assert!((cos - e.text_similarity).abs() < 1e-6);
        }
    }
}
