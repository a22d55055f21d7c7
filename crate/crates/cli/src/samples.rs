//! Joins a corpus's correctness labels with per-record scores.

use cim_core::{score_candidate, CorpusIndex, Result, RewardParams, ScoredSample};

/// Scores every labeled record, using its image as the source and its text
/// embedding as the caption. Unlabeled records are skipped. Output keeps
/// corpus row order.
pub fn score_corpus(index: &CorpusIndex, params: &RewardParams) -> Result<Vec<ScoredSample>> {
    index
        .records()
        .filter_map(|rec| rec.label.map(|correct| (rec, correct)))
        .map(|(rec, correct)| {
            let report = score_candidate(
                rec.image_embedding,
                rec.text_embedding,
                index,
                params,
                Some(rec.id),
            )?;
            Ok(ScoredSample {
                id: rec.id.to_owned(),
                grc: report.grc,
                qir: report.qir,
                reward: report.reward,
                correct,
            })
        })
        .collect()
}
