//! Caption rewards from a retrieved support set, and group-relative
//! advantages over several candidate captions for the same image.

use serde::{Deserialize, Serialize};

use crate::error::{CimError, Result};
use crate::retrieval::{top_k_batch, ScanOptions, SupportSet};
use crate::store::CorpusIndex;
use crate::vector::{clamp_unit, dot, dot_unchecked};

/// Groups whose reward standard deviation is below this get zero advantages.
pub const DEGENERATE_STD: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardParams {
    /// Support set size.
    pub k: usize,
    /// Weight of relevance against consistency in the reward.
    pub beta: f64,
    /// Rank `r` (1-based) is weighted `decay_base^(r-1)` in the relevance sum.
    pub decay_base: f64,
    /// Drop the source image's own corpus record from retrieval.
    pub exclude_self: bool,
}

impl Default for RewardParams {
    fn default() -> Self {
        RewardParams {
            k: 5,
            beta: 1.0,
            decay_base: 0.5,
            exclude_self: false,
        }
    }
}

impl RewardParams {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(CimError::InvalidParams("k must be at least 1".into()));
        }
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return Err(CimError::InvalidParams(format!(
                "beta must be a non-negative real, got {}",
                self.beta
            )));
        }
        if !(self.decay_base > 0.0 && self.decay_base <= 1.0) {
            return Err(CimError::InvalidParams(format!(
                "decay_base must lie in (0, 1], got {}",
                self.decay_base
            )));
        }
        Ok(())
    }

    /// Rank weight for 1-based rank `r`.
    pub fn rank_weight(&self, r: usize) -> f64 {
        debug_assert!(r >= 1);
        self.decay_base.powi(r as i32 - 1)
    }

    /// Largest possible `|qir|` for a support of `m` entries.
    pub fn qir_bound(&self, m: usize) -> f64 {
        (1..=m).map(|r| self.rank_weight(r)).sum()
    }
}

/// Scores for one candidate caption.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub support: SupportSet,
    /// Entries actually used (`<= k` on small corpora).
    pub support_size: usize,
    #[serde(serialize_with = "crate::serde_sig::f64")]
    pub grc: f64,
    /// Source-to-retrieved image cosine per support rank.
    #[serde(serialize_with = "crate::serde_sig::vec_f64")]
    pub relevances: Vec<f64>,
    #[serde(serialize_with = "crate::serde_sig::f64")]
    pub qir: f64,
    #[serde(serialize_with = "crate::serde_sig::f64")]
    pub reward: f64,
    pub params: RewardParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupResult {
    #[serde(serialize_with = "crate::serde_sig::vec_f64")]
    pub rewards: Vec<f64>,
    #[serde(serialize_with = "crate::serde_sig::vec_f64")]
    pub advantages: Vec<f64>,
    /// Rewards had (numerically) zero spread; advantages are all zero.
    pub degenerate: bool,
}

/// Per-candidate reports plus the group standardization, in input order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupScore {
    #[serde(rename = "candidates")]
    pub reports: Vec<ScoreReport>,
    #[serde(flatten)]
    pub group: GroupResult,
}

fn check_dims<S: AsRef<[f32]>>(vectors: &[S], dim: usize) -> Result<()> {
    for v in vectors {
        let found = v.as_ref().len();
        if found != dim {
            return Err(CimError::DimensionMismatch {
                expected: dim,
                found,
            });
        }
    }
    Ok(())
}

/// Mean resultant length `‖(1/m) Σ v_r‖₂` of unit vectors: 1 when they all
/// coincide, near 0 when they cancel out.
pub fn grc<S: AsRef<[f32]>>(support: &[S]) -> Result<f64> {
    let first = support.first().ok_or(CimError::EmptySupport)?.as_ref();
    check_dims(support, first.len())?;
    let mut sum = vec![0.0f64; first.len()];
    for v in support {
        for (acc, &x) in sum.iter_mut().zip(v.as_ref()) {
            *acc += x as f64;
        }
    }
    let m = support.len() as f64;
    let sq: f64 = sum.iter().map(|s| (s / m) * (s / m)).sum();
    Ok(sq.sqrt().min(1.0))
}

/// Cosine between the source image and one retrieved image.
pub fn relevance(source: &[f32], retrieved: &[f32]) -> Result<f64> {
    dot(source, retrieved).map(clamp_unit)
}

/// Rank-decayed relevance sum. `support` must be in retrieval rank order.
pub fn qir<S: AsRef<[f32]>>(source: &[f32], support: &[S], params: &RewardParams) -> Result<f64> {
    Ok(relevances_and_qir(source, support, params)?.1)
}

fn relevances_and_qir<S: AsRef<[f32]>>(
    source: &[f32],
    support: &[S],
    params: &RewardParams,
) -> Result<(Vec<f64>, f64)> {
    if support.is_empty() {
        return Err(CimError::EmptySupport);
    }
    check_dims(support, source.len())?;
    let rel: Vec<f64> = support
        .iter()
        .map(|v| clamp_unit(dot_unchecked(source, v.as_ref())))
        .collect();
    let total = rel
        .iter()
        .enumerate()
        .map(|(i, r)| params.rank_weight(i + 1) * r)
        .sum();
    Ok((rel, total))
}

/// `grc + beta * qir`
pub fn reward(grc_value: f64, qir_value: f64, beta: f64) -> f64 {
    grc_value + beta * qir_value
}

/// Standardizes rewards within a group: `(r - mean) / std` with the
/// population standard deviation.
pub fn group_advantages(rewards: &[f64]) -> Result<GroupResult> {
    let g = rewards.len();
    if g < 2 {
        return Err(CimError::GroupTooSmall(g));
    }
    let n = g as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    let degenerate = std.is_nan() || std < DEGENERATE_STD;
    let advantages = if degenerate {
        vec![0.0; g]
    } else {
        rewards.iter().map(|r| (r - mean) / std).collect()
    };
    Ok(GroupResult {
        rewards: rewards.to_vec(),
        advantages,
        degenerate,
    })
}

fn exclusion<'a>(params: &RewardParams, source_id: Option<&'a str>) -> Result<Option<&'a str>> {
    params.validate()?;
    if !params.exclude_self {
        return Ok(None);
    }
    source_id
        .map(Some)
        .ok_or_else(|| CimError::InvalidParams("exclude_self requires a source id".into()))
}

fn check_source(source_image: &[f32], index: &CorpusIndex) -> Result<()> {
    if source_image.len() != index.image_dim() {
        return Err(CimError::DimensionMismatch {
            expected: index.image_dim(),
            found: source_image.len(),
        });
    }
    Ok(())
}

fn report(
    source_image: &[f32],
    support: SupportSet,
    index: &CorpusIndex,
    params: &RewardParams,
) -> Result<ScoreReport> {
    let images: Vec<&[f32]> = support.rows().map(|row| index.image(row)).collect();
    let grc_value = grc(&images)?;
    let (relevances, qir_value) = relevances_and_qir(source_image, &images, params)?;
    Ok(ScoreReport {
        support_size: support.len(),
        support,
        grc: grc_value,
        relevances,
        qir: qir_value,
        reward: reward(grc_value, qir_value, params.beta),
        params: *params,
    })
}

/// Retrieves the support for one caption and scores it against the source
/// image.
pub fn score_candidate(
    source_image: &[f32],
    caption_embedding: &[f32],
    index: &CorpusIndex,
    params: &RewardParams,
    source_id: Option<&str>,
) -> Result<ScoreReport> {
    score_candidate_with(
        source_image,
        caption_embedding,
        index,
        params,
        source_id,
        &ScanOptions::default(),
    )
}

pub fn score_candidate_with(
    source_image: &[f32],
    caption_embedding: &[f32],
    index: &CorpusIndex,
    params: &RewardParams,
    source_id: Option<&str>,
    opts: &ScanOptions,
) -> Result<ScoreReport> {
    let exclude = exclusion(params, source_id)?;
    check_source(source_image, index)?;
    let support = top_k_batch(&[caption_embedding], index, params.k, exclude, opts)?
        .pop()
        .expect("one query");
    report(source_image, support, index, params)
}

/// Scores `G >= 2` candidate captions for one source image and standardizes
/// their rewards. All candidates share one pass over the corpus.
pub fn score_group<Q: AsRef<[f32]> + Sync>(
    source_image: &[f32],
    caption_embeddings: &[Q],
    index: &CorpusIndex,
    params: &RewardParams,
    source_id: Option<&str>,
) -> Result<GroupScore> {
    score_group_with(
        source_image,
        caption_embeddings,
        index,
        params,
        source_id,
        &ScanOptions::default(),
    )
}

pub fn score_group_with<Q: AsRef<[f32]> + Sync>(
    source_image: &[f32],
    caption_embeddings: &[Q],
    index: &CorpusIndex,
    params: &RewardParams,
    source_id: Option<&str>,
    opts: &ScanOptions,
) -> Result<GroupScore> {
    if caption_embeddings.len() < 2 {
        return Err(CimError::GroupTooSmall(caption_embeddings.len()));
    }
    let exclude = exclusion(params, source_id)?;
    check_source(source_image, index)?;
    let supports = top_k_batch(caption_embeddings, index, params.k, exclude, opts)?;
    let reports = supports
        .into_iter()
        .map(|s| report(source_image, s, index, params))
        .collect::<Result<Vec<_>>>()?;
    let rewards: Vec<f64> = reports.iter().map(|r| r.reward).collect();
    let group = group_advantages(&rewards)?;
    Ok(GroupScore { reports, group })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::CorpusBuilder;

    const EPS: f64 = 1e-9;

    #[test]
    fn grc_examples() {
        let same = vec![[0.0f32, 0.0, 1.0]; 5];
        assert_eq!(grc(&same).unwrap(), 1.0);
        assert_eq!(grc(&[[1.0f32, 0.0], [-1.0, 0.0]]).unwrap(), 0.0);
        let ortho = [[1.0f32, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        assert!((grc(&ortho).unwrap() - 1.0 / 3f64.sqrt()).abs() < EPS);
    }

    #[test]
    fn grc_errors() {
        let empty: [&[f32]; 0] = [];
        assert!(matches!(grc(&empty), Err(CimError::EmptySupport)));
        let ragged: [&[f32]; 2] = [&[1.0, 0.0], &[1.0]];
        assert!(matches!(
            grc(&ragged),
            Err(CimError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn relevance_examples() {
        let v = [0.0f32, 1.0, 0.0];
        assert_eq!(relevance(&v, &v).unwrap(), 1.0);
        assert_eq!(relevance(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert!((relevance(&[0.6, 0.8], &[1.0, 0.0]).unwrap() - 0.6).abs() < 1e-6);
        assert!(matches!(
            relevance(&[1.0], &[1.0, 0.0]),
            Err(CimError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn qir_examples() {
        let p = RewardParams::default();
        let src = [0.0f32, 0.0, 1.0];
        assert_eq!(qir(&src, &[src; 5], &p).unwrap(), 1.9375);
        assert_eq!(qir(&src, &[[1.0f32, 0.0, 0.0]; 5], &p).unwrap(), 0.0);

        // Supports whose cosines with [1, 0] are 0.8, 0.6, 0.4, 0.2, 0.0.
        let src = [1.0f32, 0.0];
        let support: Vec<[f32; 2]> = [0.8f64, 0.6, 0.4, 0.2, 0.0]
            .iter()
            .map(|&c| [c as f32, (1.0 - c * c).sqrt() as f32])
            .collect();
        assert!((qir(&src, &support, &p).unwrap() - 1.225).abs() < 1e-6);

        let empty: [&[f32]; 0] = [];
        assert!(matches!(qir(&src, &empty, &p), Err(CimError::EmptySupport)));
    }

    #[test]
    fn reward_examples() {
        assert_eq!(reward(1.0, 1.9375, 1.0), 2.9375);
        assert_eq!(reward(0.5, 0.0, 1.0), 0.5);
        assert!((reward(0.577350, 1.225, 0.5) - 1.189850).abs() < 1e-12);
    }

    #[test]
    fn params_validation() {
        assert!(RewardParams::default().validate().is_ok());
        for bad in [
            RewardParams {
                k: 0,
                ..Default::default()
            },
            RewardParams {
                beta: -1.0,
                ..Default::default()
            },
            RewardParams {
                beta: f64::NAN,
                ..Default::default()
            },
            RewardParams {
                decay_base: 0.0,
                ..Default::default()
            },
            RewardParams {
                decay_base: 1.5,
                ..Default::default()
            },
        ] {
            assert!(
                matches!(bad.validate(), Err(CimError::InvalidParams(_))),
                "{bad:?}"
            );
        }
        let p = RewardParams::default();
        assert_eq!(p.rank_weight(1), 1.0);
        assert_eq!(p.qir_bound(5), 1.9375);
        let flat = RewardParams {
            decay_base: 1.0,
            ..p
        };
        assert_eq!(flat.rank_weight(1), 1.0);
    }

    #[test]
    fn advantage_examples() {
        let g = group_advantages(&[2.0, 2.0, 2.0]).unwrap();
        assert!(g.degenerate);
        assert_eq!(g.advantages, vec![0.0; 3]);

        let g = group_advantages(&[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert!(!g.degenerate);
        // Population std is sqrt(2).
        let (r2, h) = (std::f64::consts::SQRT_2, std::f64::consts::FRAC_1_SQRT_2);
        for (a, e) in g.advantages.iter().zip([-r2, -h, 0.0, h, r2]) {
            assert!((a - e).abs() < 1e-12);
        }

        assert_eq!(
            group_advantages(&[0.0, 1.0]).unwrap().advantages,
            vec![-1.0, 1.0]
        );
        assert!(matches!(
            group_advantages(&[1.0]),
            Err(CimError::GroupTooSmall(1))
        ));
        assert!(matches!(
            group_advantages(&[]),
            Err(CimError::GroupTooSmall(0))
        ));
    }

    fn flat_gallery() -> CorpusIndex {
        let mut b = CorpusBuilder::new(3, 2);
        for (i, t) in [[1.0f32, 0.0], [0.0, 1.0], [0.6, 0.8]].iter().enumerate() {
            b.push(format!("g{i}"), &[0.0, 0.0, 1.0], t, None).unwrap();
        }
        b.build().unwrap()
    }

    #[test]
    fn identical_gallery_images_give_unit_grc() {
        let idx = flat_gallery();
        let p = RewardParams {
            k: 3,
            ..Default::default()
        };
        for q in [[1.0f32, 0.0], [0.0, 1.0]] {
            let r = score_candidate(&[1.0, 0.0, 0.0], &q, &idx, &p, None).unwrap();
            assert_eq!(r.grc, 1.0);
            assert_eq!(r.qir, 0.0);
            assert_eq!(r.support_size, 3);
        }
    }

    #[test]
    fn source_matching_every_image() {
        let mut b = CorpusBuilder::new(3, 2);
        for i in 0..7 {
            let t = i as f32;
            b.push(format!("g{i}"), &[0.0, 0.0, 1.0], &[t.cos(), t.sin()], None)
                .unwrap();
        }
        let idx = b.build().unwrap();
        let r = score_candidate(
            &[0.0, 0.0, 1.0],
            &[1.0, 0.0],
            &idx,
            &RewardParams::default(),
            None,
        )
        .unwrap();
        assert_eq!(r.reward, r.grc + 1.9375);
    }

    #[test]
    fn exclude_self_needs_id() {
        let idx = flat_gallery();
        let p = RewardParams {
            exclude_self: true,
            ..Default::default()
        };
        assert!(matches!(
            score_candidate(&[0.0, 0.0, 1.0], &[1.0, 0.0], &idx, &p, None),
            Err(CimError::InvalidParams(_))
        ));
        let r = score_candidate(&[0.0, 0.0, 1.0], &[1.0, 0.0], &idx, &p, Some("g0")).unwrap();
        assert!(r.support.rows().all(|row| row != 0));
        assert!(r.support.truncated);
        assert_eq!(r.support_size, 2);
    }

    #[test]
    fn group_two_point_order() {
        // Images of g0 match the source; g1 is orthogonal to it.
        let mut b = CorpusBuilder::new(2, 2);
        b.push("g0", &[1.0, 0.0], &[1.0, 0.0], None).unwrap();
        b.push("g1", &[0.0, 1.0], &[0.0, 1.0], None).unwrap();
        let idx = b.build().unwrap();
        let p = RewardParams {
            k: 1,
            ..Default::default()
        };
        let out = score_group(&[1.0, 0.0], &[[1.0f32, 0.0], [0.0, 1.0]], &idx, &p, None).unwrap();
        assert_eq!(out.group.advantages, vec![1.0, -1.0]);
        assert!(!out.group.degenerate);
    }

    #[test]
    fn group_identical_candidates() {
        let idx = flat_gallery();
        let caps = vec![[0.6f32, 0.8]; 5];
        let out = score_group(
            &[0.0, 0.0, 1.0],
            &caps,
            &idx,
            &RewardParams::default(),
            None,
        )
        .unwrap();
        assert!(out.group.degenerate);
        assert_eq!(out.group.advantages, vec![0.0; 5]);
        assert!(out.reports.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn group_errors() {
        let idx = flat_gallery();
        let p = RewardParams::default();
        assert!(matches!(
            score_group(&[0.0, 0.0, 1.0], &[[1.0f32, 0.0]], &idx, &p, None),
            Err(CimError::GroupTooSmall(1))
        ));
        assert!(matches!(
            score_group(&[0.0, 1.0], &[[1.0f32, 0.0]; 2], &idx, &p, None),
            Err(CimError::DimensionMismatch {
                expected: 3,
                found: 2
            })
        ));
        assert!(matches!(
            score_group(&[0.0, 0.0, 1.0], &[[1.0f32, 0.0, 0.0]; 2], &idx, &p, None),
            Err(CimError::DimensionMismatch {
                expected: 2,
                found: 3
            })
        ));
    }

    #[test]
    fn report_serializes_with_nine_digits() {
        let idx = flat_gallery();
        let out = score_group(
            &[0.0, 0.6, 0.8],
            &[[1.0f32, 0.0], [0.0, 1.0]],
            &idx,
            &RewardParams {
                k: 2,
                ..Default::default()
            },
            None,
        )
        .unwrap();
        let json = serde_json::to_value(&out).unwrap();
        assert!(json["candidates"].as_array().unwrap().len() == 2);
        assert!(json["advantages"].is_array());
        assert!(json["degenerate"].is_boolean());
        let qir = json["candidates"][0]["qir"].as_f64().unwrap();
        assert_eq!(crate::serde_sig::round_sig9(qir), qir);
        assert!((qir - out.reports[0].qir).abs() <= 1e-8 * out.reports[0].qir.abs());
    }
}
