//! Per-article ranking and evaluation metrics: precision/recall/F1, NDCG@k and
//! Krippendorff's alpha for nominal labels.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::hash::Hash;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{ArticleSet, CommentSet, CorpusStore, Status};
use crate::error::{Error, Result};
use crate::forest::CommentScorer;

pub const DEFAULT_KS: [usize; 3] = [3, 5, 10];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedEntry {
    pub comment_id: String,
    pub probability: f64,
}

/// Comments of one article ordered by descending probability, ties by id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedRecommendation {
    pub article_id: String,
    pub entries: Vec<RankedEntry>,
    pub k: usize,
}

/// Sorts `(id, score)` pairs by score descending, then id ascending.
pub fn rank_scored(ids: &[String], scores: &[f64]) -> Vec<RankedEntry> {
    let mut entries: Vec<RankedEntry> = ids
        .iter()
        .zip(scores)
        .map(|(id, &p)| RankedEntry {
            comment_id: id.clone(),
            probability: p,
        })
        .collect();
    entries.sort_by(|a, b| {
        b.probability
            .total_cmp(&a.probability)
            .then_with(|| a.comment_id.cmp(&b.comment_id))
    });
    entries
}

/// Published (including featured) comments of an article; rejected comments
/// are never candidates.
pub fn article_candidates(corpus: &CorpusStore, article_id: &str) -> Result<Vec<String>> {
    Ok(corpus
        .article_comments(article_id)?
        .iter()
        .filter(|id| corpus.comment(id).is_some_and(|c| c.status != Status::Rejected))
        .cloned()
        .collect())
}

/// Scores and ranks every candidate of the article without truncation.
pub fn rank_article_full<S: CommentScorer + ?Sized>(scorer: &S, article_id: &str, corpus: &CorpusStore) -> Result<Vec<RankedEntry>> {
    let ids = article_candidates(corpus, article_id)?;
    let scores = scorer.score_comments(corpus, &ids)?;
    Ok(rank_scored(&ids, &scores))
}

pub fn rank_article<S: CommentScorer + ?Sized>(scorer: &S, article_id: &str, corpus: &CorpusStore, k: usize) -> Result<RankedRecommendation> {
    let mut entries = rank_article_full(scorer, article_id, corpus)?;
    entries.truncate(k);
    Ok(RankedRecommendation {
        article_id: article_id.to_string(),
        entries,
        k,
    })
}

/// Binary-gain NDCG with a `log2(i + 1)` discount. `None` when there is no
/// relevant item (or `k == 0`).
pub fn ndcg_at_k<T, Q>(ranking: &[T], relevant: &HashSet<Q>, k: usize) -> Option<f64>
where
    T: std::borrow::Borrow<Q>,
    Q: Eq + Hash,
{
    if relevant.is_empty() || k == 0 {
        return None;
    }
    let discount = |i: usize| 1.0 / ((i + 2) as f64).log2();
    let dcg: f64 = ranking
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, id)| relevant.contains((*id).borrow()))
        .map(|(i, _)| discount(i))
        .sum();
    let idcg: f64 = (0..k.min(relevant.len())).map(discount).sum();
    Some(dcg / idcg)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
}

impl ClassificationMetrics {
    /// Zero-denominator conventions: P=0 without predicted positives, R=0
    /// without actual positives, F1=0 when P+R=0.
    pub fn from_counts(tp: usize, fp: usize, fn_: usize, tn: usize) -> Self {
        let precision = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
        let recall = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Self {
            precision,
            recall,
            f1,
            tp,
            fp,
            fn_,
            tn,
        }
    }
}

/// Predicted positive when `prob > threshold`.
pub fn classification_metrics(probs: &[f64], labels: &[bool], threshold: f64) -> ClassificationMetrics {
    assert_eq!(probs.len(), labels.len(), "probabilities and labels must align");
    let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
    for (&p, &y) in probs.iter().zip(labels) {
        match (p > threshold, y) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => tn += 1,
        }
    }
    ClassificationMetrics::from_counts(tp, fp, fn_, tn)
}

/// Items x raters binary labels; `None` marks a missing rating.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelMatrix {
    pub items: Vec<Vec<Option<bool>>>,
}

impl LabelMatrix {
    pub fn new(items: Vec<Vec<Option<bool>>>) -> Self {
        Self { items }
    }

    pub fn from_complete(items: &[&[bool]]) -> Self {
        Self {
            items: items.iter().map(|r| r.iter().map(|&v| Some(v)).collect()).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Agreement {
    pub alpha: f64,
    /// Total pairable values `n`.
    pub pairable_values: usize,
    /// Items with at least two ratings.
    pub items_used: usize,
    /// Expected disagreement was zero; alpha is reported as 1 by convention.
    pub degenerate: bool,
}

/// Nominal Krippendorff's alpha from the coincidence matrix of pairable values.
pub fn krippendorff_alpha(m: &LabelMatrix) -> Result<Agreement> {
    let mut o = [[0f64; 2]; 2];
    let mut items_used = 0usize;
    for item in &m.items {
        let mut counts = [0f64; 2];
        for v in item.iter().flatten() {
            counts[*v as usize] += 1.0;
        }
        let mu = counts[0] + counts[1];
        if mu < 2.0 {
            continue;
        }
        items_used += 1;
        for c in 0..2 {
            for d in 0..2 {
                let pairs = if c == d { counts[c] * (counts[c] - 1.0) } else { counts[c] * counts[d] };
                o[c][d] += pairs / (mu - 1.0);
            }
        }
    }
    let n_c = [o[0][0] + o[0][1], o[1][0] + o[1][1]];
    let n = n_c[0] + n_c[1];
    if items_used == 0 || n < 2.0 {
        return Err(Error::NoPairableValues);
    }
    let d_o = (o[0][1] + o[1][0]) / n;
    let d_e = 2.0 * n_c[0] * n_c[1] / (n * (n - 1.0));
    let (alpha, degenerate) = if d_e == 0.0 { (1.0, true) } else { (1.0 - d_o / d_e, false) };
    Ok(Agreement {
        alpha,
        pairable_values: n.round() as usize,
        items_used,
        degenerate,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub model: String,
    pub ks: Vec<usize>,
    /// Split name to threshold metrics.
    pub classification: BTreeMap<String, ClassificationMetrics>,
    /// Article id to (k to NDCG@k); only articles with a featured comment.
    pub per_article: BTreeMap<String, BTreeMap<usize, f64>>,
    pub mean_ndcg: BTreeMap<usize, f64>,
    pub articles_evaluated: usize,
    /// Articles without any featured comment.
    pub articles_skipped: usize,
}

impl EvaluationReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        if !self.classification.is_empty() {
            let _ = writeln!(s, "{:<28} {:>9} {:>7} {:>9}", "Model", "Precision", "Recall", "F1-score");
            for (split, m) in &self.classification {
                let _ = writeln!(
                    s,
                    "{:<28} {:>9.2} {:>7.2} {:>9.2}",
                    format!("{} ({split})", self.model),
                    m.precision,
                    m.recall,
                    m.f1
                );
            }
            s.push('\n');
        }
        let _ = write!(s, "{:<28}", "Model");
        for k in &self.ks {
            let _ = write!(s, " {:>8}", format!("NDCG@{k}"));
        }
        s.push('\n');
        let _ = write!(s, "{:<28}", self.model);
        for k in &self.ks {
            let _ = write!(s, " {:>8.2}", self.mean_ndcg.get(k).copied().unwrap_or(f64::NAN));
        }
        let _ = writeln!(
            s,
            "\n\narticles evaluated: {}, skipped (no featured): {}",
            self.articles_evaluated, self.articles_skipped
        );
        s
    }
}

fn featured_set(corpus: &CorpusStore, ids: &[String]) -> HashSet<String> {
    ids.iter()
        .filter(|id| corpus.comment(id).is_some_and(|c| c.status.is_featured()))
        .cloned()
        .collect()
}

fn mean_over(per_article: &BTreeMap<String, BTreeMap<usize, f64>>, ks: &[usize]) -> BTreeMap<usize, f64> {
    ks.iter()
        .map(|&k| {
            let vals: Vec<f64> = per_article.values().filter_map(|m| m.get(&k).copied()).collect();
            let mean = if vals.is_empty() {
                f64::NAN
            } else {
                vals.iter().sum::<f64>() / vals.len() as f64
            };
            (k, mean)
        })
        .collect()
}

/// Mean NDCG@k over the articles that have at least one featured comment.
pub fn evaluate_articles<S: CommentScorer + ?Sized>(scorer: &S, corpus: &CorpusStore, articles: &ArticleSet, ks: &[usize]) -> Result<EvaluationReport> {
    let per: Vec<Option<(String, BTreeMap<usize, f64>)>> = articles
        .ids()
        .par_iter()
        .map(|a| -> Result<_> {
            let ids = article_candidates(corpus, a)?;
            let featured = featured_set(corpus, &ids);
            if featured.is_empty() {
                return Ok(None);
            }
            let scores = scorer.score_comments(corpus, &ids)?;
            let ranking: Vec<String> = rank_scored(&ids, &scores).into_iter().map(|e| e.comment_id).collect();
            let m = ks
                .iter()
                .filter_map(|&k| ndcg_at_k(&ranking, &featured, k).map(|v| (k, v)))
                .collect();
            Ok(Some((a.clone(), m)))
        })
        .collect::<Result<_>>()?;
    let skipped = per.iter().filter(|p| p.is_none()).count();
    let per_article: BTreeMap<String, BTreeMap<usize, f64>> = per.into_iter().flatten().collect();
    Ok(EvaluationReport {
        model: scorer.name().to_string(),
        ks: ks.to_vec(),
        classification: BTreeMap::new(),
        mean_ndcg: mean_over(&per_article, ks),
        articles_evaluated: per_article.len(),
        articles_skipped: skipped,
        per_article,
    })
}

/// Threshold metrics of a scorer over a comment set.
pub fn evaluate_classification<S: CommentScorer + ?Sized>(scorer: &S, corpus: &CorpusStore, set: &CommentSet, threshold: f64) -> Result<ClassificationMetrics> {
    let scores = scorer.score_comments(corpus, set.ids())?;
    let labels: Vec<bool> = set
        .ids()
        .iter()
        .map(|id| corpus.comment(id).is_some_and(|c| c.status.is_featured()))
        .collect();
    Ok(classification_metrics(&scores, &labels, threshold))
}

/// Mean NDCG@k of uniformly random rankings, averaged over `shuffles` runs.
pub fn random_ranker_ndcg(corpus: &CorpusStore, articles: &ArticleSet, ks: &[usize], shuffles: usize, seed: u64) -> Result<BTreeMap<usize, f64>> {
    let mut prepared = Vec::new();
    for a in articles.ids() {
        let ids = article_candidates(corpus, a)?;
        let featured = featured_set(corpus, &ids);
        if !featured.is_empty() {
            prepared.push((ids, featured));
        }
    }
    let mut totals: BTreeMap<usize, f64> = ks.iter().map(|&k| (k, 0.0)).collect();
    for s in 0..shuffles {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(s as u64);
        let mut per_article: BTreeMap<String, BTreeMap<usize, f64>> = BTreeMap::new();
        for (i, (ids, featured)) in prepared.iter().enumerate() {
            let mut order = ids.clone();
            order.shuffle(&mut rng);
            let m = ks.iter().filter_map(|&k| ndcg_at_k(&order, featured, k).map(|v| (k, v))).collect();
            per_article.insert(format!("{i:08}"), m);
        }
        for (k, v) in mean_over(&per_article, ks) {
            *totals.get_mut(&k).unwrap() += v;
        }
    }
    Ok(totals.into_iter().map(|(k, v)| (k, v / shuffles.max(1) as f64)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn set(ids: &[&str]) -> HashSet<String> {
        ids.iter().map(|s| s.to_string()).collect()
    }

    fn ranking(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("r{i}")).collect()
    }

    #[test]
    fn ndcg_ranks_one_and_four() {
        let r = ranking(10);
        let v = ndcg_at_k(&r, &set(&["r0", "r3"]), 5).unwrap();
        // Direct evaluation of the definition.
        let want = (1.0 + 1.0 / 5f64.log2()) / (1.0 + 1.0 / 3f64.log2());
        assert!((v - want).abs() < 1e-15);
        assert!((v - 0.87722).abs() < 1e-5);
    }

    #[test]
    fn ndcg_ideal_and_empty() {
        let r = ranking(10);
        assert_eq!(ndcg_at_k(&r, &set(&["r0", "r1", "r2"]), 5), Some(1.0));
        assert_eq!(ndcg_at_k(&r, &set(&["r0", "r1", "r2", "r3", "r4", "r5", "r6"]), 5), Some(1.0));
        assert_eq!(ndcg_at_k(&r, &set(&["r8"]), 5), Some(0.0));
        assert_eq!(ndcg_at_k(&r, &HashSet::<String>::new(), 5), None);
    }

    #[test]
    fn classification_conventions() {
        let m = ClassificationMetrics::from_counts(2, 2, 6, 0);
        assert_eq!((m.precision, m.recall), (0.5, 0.25));
        assert_eq!(m.f1, 1.0 / 3.0);
        let probs = [0.1, 0.2, 0.3];
        let m = classification_metrics(&probs, &[true, false, true], 0.5);
        assert_eq!((m.precision, m.recall, m.f1), (0.0, 0.0, 0.0));
        let m = classification_metrics(&[0.9, 0.1], &[true, false], 0.5);
        assert_eq!((m.precision, m.recall, m.f1), (1.0, 1.0, 1.0));
        let m = classification_metrics(&[0.5], &[true], 0.5);
        assert_eq!(m.fn_, 1);
    }

    #[test]
    fn alpha_fixture() {
        let m = LabelMatrix::from_complete(&[&[true, true], &[false, false], &[true, false], &[false, false]]);
        let a = krippendorff_alpha(&m).unwrap();
        // Hand computation: D_o = 2/8, D_e = 2*3*5/(8*7).
        let want = 1.0 - 0.25 / (30.0 / 56.0);
        assert!((a.alpha - want).abs() < 1e-12);
        assert!((a.alpha - 0.53333).abs() < 1e-4);
        assert_eq!(a.pairable_values, 8);
    }

    #[test]
    fn alpha_perfect_and_degenerate() {
        let m = LabelMatrix::from_complete(&[&[true, true], &[false, false], &[true, true], &[false, false]]);
        assert_eq!(krippendorff_alpha(&m).unwrap().alpha, 1.0);
        let c = LabelMatrix::from_complete(&[&[true, true], &[true, true]]);
        let a = krippendorff_alpha(&c).unwrap();
        assert_eq!(a.alpha, 1.0);
        assert!(a.degenerate);
    }

    #[test]
    fn alpha_skips_single_ratings() {
        let m = LabelMatrix::new(vec![vec![Some(true), None], vec![None, Some(false)]]);
        assert!(matches!(krippendorff_alpha(&m), Err(Error::NoPairableValues)));
        let m = LabelMatrix::new(vec![
            vec![Some(true), Some(true), None],
            vec![Some(false), Some(false), Some(true)],
            vec![None, Some(false), None],
        ]);
        let a = krippendorff_alpha(&m).unwrap();
        assert_eq!(a.items_used, 2);
        assert_eq!(a.pairable_values, 5);
    }

    #[test]
    fn rank_ties_by_id() {
        let ids: Vec<String> = ["b", "a", "c"].iter().map(|s| s.to_string()).collect();
        let e = rank_scored(&ids, &[0.5, 0.5, 0.9]);
        let order: Vec<&str> = e.iter().map(|e| e.comment_id.as_str()).collect();
        assert_eq!(order, ["c", "a", "b"]);
    }

    proptest! {
        #[test]
        fn ndcg_bounded_and_swap_monotone(rel in prop::collection::btree_set(0usize..15, 1..6), k in 1usize..12, pos in 1usize..15) {
            let r = ranking(15);
            let featured: HashSet<String> = rel.iter().map(|i| format!("r{i}")).collect();
            let v = ndcg_at_k(&r, &featured, k).unwrap();
            prop_assert!((0.0..=1.0 + 1e-12).contains(&v));
            let mut swapped = r.clone();
            if featured.contains(&r[pos]) && !featured.contains(&r[pos - 1]) {
                swapped.swap(pos, pos - 1);
                prop_assert!(ndcg_at_k(&swapped, &featured, k).unwrap() >= v - 1e-12);
            }
        }

        #[test]
        fn ndcg_depends_on_order_only(scores in prop::collection::vec(0.0f64..1.0, 12), rel in prop::collection::btree_set(0usize..12, 1..4)) {
            let ids = ranking(12);
            let featured: HashSet<String> = rel.iter().map(|i| format!("r{i}")).collect();
            let a: Vec<String> = rank_scored(&ids, &scores).into_iter().map(|e| e.comment_id).collect();
            let transformed: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() - 7.0).collect();
            let b: Vec<String> = rank_scored(&ids, &transformed).into_iter().map(|e| e.comment_id).collect();
            prop_assert_eq!(ndcg_at_k(&a, &featured, 5), ndcg_at_k(&b, &featured, 5));
        }

        #[test]
        fn f1_is_harmonic_mean(tp in 0usize..50, fp in 0usize..50, fn_ in 0usize..50) {
            let m = ClassificationMetrics::from_counts(tp, fp, fn_, 0);
            if m.precision + m.recall > 0.0 {
                let h = 2.0 * m.precision * m.recall / (m.precision + m.recall);
                prop_assert!((m.f1 - h).abs() < 1e-12);
            }
            prop_assert!((0.0..=1.0).contains(&m.f1));
        }

        #[test]
        fn alpha_symmetries(cells in prop::collection::vec(prop::collection::vec(prop::option::of(any::<bool>()), 3), 2..10)) {
            let m = LabelMatrix::new(cells.clone());
            let Ok(a) = krippendorff_alpha(&m) else { return Ok(()) };
            let mut items = cells.clone();
            items.reverse();
            let raters: Vec<Vec<Option<bool>>> = cells.iter().map(|r| r.iter().rev().cloned().collect()).collect();
            let flipped: Vec<Vec<Option<bool>>> = cells.iter().map(|r| r.iter().map(|v| v.map(|b| !b)).collect()).collect();
            for other in [items, raters, flipped] {
                let b = krippendorff_alpha(&LabelMatrix::new(other)).unwrap();
                prop_assert!((a.alpha - b.alpha).abs() < 1e-12);
            }
        }
    }
}
