use super::model::CommentScorer;
use crate::corpus::CorpusStore;
use crate::error::Result;
use crate::features::user_history_at;

/// Users whose featured ratio exceeds 3% are predicted to write featured posts.
pub const BASELINE_THRESHOLD: f64 = 0.03;

/// The user's featured-post ratio as of the comment's creation.
pub fn baseline_score(comment_id: &str, corpus: &CorpusStore) -> Result<f64> {
    let i = corpus.index_of(comment_id)?;
    let c = corpus.record_at(i);
    Ok(user_history_at(&c.user_key, c.created_at, corpus).ratio_featured)
}

pub fn baseline_classify(score: f64, threshold: f64) -> bool {
    score > threshold
}

/// Ranks comments by their author's featured history.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InformedBaseline {
    pub threshold: f64,
}

impl Default for InformedBaseline {
    fn default() -> Self {
        Self {
            threshold: BASELINE_THRESHOLD,
        }
    }
}

impl InformedBaseline {
    pub fn classify(&self, score: f64) -> bool {
        baseline_classify(score, self.threshold)
    }
}

impl CommentScorer for InformedBaseline {
    fn name(&self) -> &str {
        "informed_baseline"
    }

    fn score_comments(&self, corpus: &CorpusStore, comment_ids: &[String]) -> Result<Vec<f64>> {
        comment_ids.iter().map(|id| baseline_score(id, corpus)).collect()
    }
}
