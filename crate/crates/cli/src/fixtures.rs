//! Seeded synthetic corpora with a controllable caption-quality signal.
//!
//! Each record belongs to one of `n / 50` visual classes and one of
//! `quality_levels` noise levels. Its image embedding is a jittered class
//! center; its text embedding is a fixed random projection of the image plus
//! Gaussian noise whose scale grows with the level; its correctness label is
//! drawn with a probability that falls as the level rises. Scoring each
//! record's text against the corpus therefore yields rewards that move with
//! correctness. With one level, noise and label probability are uniform and
//! no signal is injected.

use std::fs;
use std::path::Path;

use cim_core::correlation::write_samples_jsonl;
use cim_core::store::write_corpus;
use cim_core::{ingest_corpus, CimError, Result, RewardParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::samples::score_corpus;

pub const SAMPLES_FILE: &str = "samples.jsonl";

const RECORDS_PER_CLASS: usize = 50;
const IMAGE_JITTER: f64 = 0.5;
const MAX_TEXT_NOISE: f64 = 2.0;
const BEST_ACCURACY: f64 = 0.9;
const WORST_ACCURACY: f64 = 0.15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct FixtureSpec {
    pub seed: u64,
    pub n: usize,
    pub image_dim: usize,
    pub text_dim: usize,
    pub quality_levels: usize,
}

impl Default for FixtureSpec {
    fn default() -> Self {
        FixtureSpec {
            seed: 0,
            n: 2000,
            image_dim: 64,
            text_dim: 48,
            quality_levels: 5,
        }
    }
}

impl FixtureSpec {
    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(CimError::InvalidParams(m.into()));
        if self.n < 2 {
            return bad("n must be at least 2");
        }
        if self.image_dim == 0 || self.text_dim == 0 {
            return bad("dims must be at least 1");
        }
        if self.quality_levels == 0 {
            return bad("quality_levels must be at least 1");
        }
        if u32::try_from(self.n).is_err() {
            return bad("n exceeds u32");
        }
        Ok(())
    }

    /// Text noise scale for a level.
    pub fn noise(&self, level: usize) -> f64 {
        match self.quality_levels {
            1 => MAX_TEXT_NOISE / 2.0,
            l => MAX_TEXT_NOISE * level as f64 / (l - 1) as f64,
        }
    }

    /// Probability that a record at `level` is labeled correct.
    pub fn accuracy(&self, level: usize) -> f64 {
        match self.quality_levels {
            1 => 0.5,
            l => BEST_ACCURACY - (BEST_ACCURACY - WORST_ACCURACY) * level as f64 / (l - 1) as f64,
        }
    }
}

/// Raw (unnormalized) generated corpus.
#[derive(Debug, Clone)]
pub struct Fixture {
    pub spec: FixtureSpec,
    pub ids: Vec<String>,
    pub images: Vec<f32>,
    pub texts: Vec<f32>,
    pub labels: Vec<Option<bool>>,
    pub levels: Vec<usize>,
}

fn gaussian(rng: &mut ChaCha8Rng, dim: usize, scale: f64) -> Vec<f64> {
    (0..dim)
        .map(|_| rng.sample::<f64, _>(StandardNormal) * scale)
        .collect()
}

fn unit(v: &[f64]) -> Vec<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / norm).collect()
}

pub fn generate(spec: &FixtureSpec) -> Result<Fixture> {
    spec.validate()?;
    let FixtureSpec {
        n,
        image_dim,
        text_dim,
        ..
    } = *spec;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let classes = (n / RECORDS_PER_CLASS).max(2);
    let centers: Vec<Vec<f64>> = (0..classes)
        .map(|_| unit(&gaussian(&mut rng, image_dim, 1.0)))
        .collect();
    let projection: Vec<Vec<f64>> = (0..text_dim)
        .map(|_| gaussian(&mut rng, image_dim, 1.0 / (image_dim as f64).sqrt()))
        .collect();

    let mut fx = Fixture {
        spec: *spec,
        ids: Vec::with_capacity(n),
        images: Vec::with_capacity(n * image_dim),
        texts: Vec::with_capacity(n * text_dim),
        labels: Vec::with_capacity(n),
        levels: Vec::with_capacity(n),
    };
    let digits = n.to_string().len();
    for i in 0..n {
        let class = rng.random_range(0..classes);
        let level = rng.random_range(0..spec.quality_levels);
        let jitter = gaussian(
            &mut rng,
            image_dim,
            IMAGE_JITTER / (image_dim as f64).sqrt(),
        );
        let image: Vec<f64> = centers[class]
            .iter()
            .zip(&jitter)
            .map(|(c, j)| c + j)
            .collect();
        let image = unit(&image);

        let noise = gaussian(
            &mut rng,
            text_dim,
            spec.noise(level) / (text_dim as f64).sqrt(),
        );
        let text: Vec<f64> = projection
            .iter()
            .zip(&noise)
            .map(|(row, e)| row.iter().zip(&image).map(|(p, x)| p * x).sum::<f64>() + e)
            .collect();
        let correct = rng.random_bool(spec.accuracy(level));

        fx.ids.push(format!("s{i:0digits$}"));
        fx.images.extend(image.iter().map(|&x| x as f32));
        fx.texts.extend(text.iter().map(|&x| x as f32));
        fx.labels.push(Some(correct));
        fx.levels.push(level);
    }
    Ok(fx)
}

#[derive(Debug, Clone, Serialize)]
pub struct FixtureSummary {
    pub spec: FixtureSpec,
    pub count: usize,
    pub checksum: String,
    pub samples: usize,
}

/// Writes the corpus to `dir` and scores every record against it with
/// `params`, writing the joined samples to `dir/samples.jsonl`.
pub fn write_fixture(
    spec: &FixtureSpec,
    dir: &Path,
    params: &RewardParams,
) -> Result<FixtureSummary> {
    let fx = generate(spec)?;
    write_corpus(
        dir,
        &fx.ids,
        spec.image_dim,
        &fx.images,
        spec.text_dim,
        &fx.texts,
        Some(&fx.labels),
    )?;
    let index = ingest_corpus(dir)?;
    let samples = score_corpus(&index, params)?;
    let path = dir.join(SAMPLES_FILE);
    let mut out = Vec::new();
    write_samples_jsonl(&mut out, &samples)?;
    fs::write(&path, out).map_err(|e| CimError::Format(format!("{}: {e}", path.display())))?;
    Ok(FixtureSummary {
        spec: *spec,
        count: index.len(),
        checksum: index.checksum().to_owned(),
        samples: samples.len(),
    })
}
