//! Path-based decomposition of forest predictions into a bias term plus
//! per-feature contributions, and error analysis built on it.
//!
//! Walking a tree from root to leaf, each edge changes the node's featured
//! frequency; that change is credited to the feature split on at the parent.
//! The root frequency is the tree's bias, so per tree
//! `bias + sum(contributions) = leaf frequency`. Forest values are tree means.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::{ArticleSet, CorpusStore};
use crate::error::{Error, Result};
use crate::eval::{article_candidates, rank_scored};
use crate::features::FeatureVector;
use crate::forest::{DecisionTree, Forest, ForestScorer};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContributionBreakdown {
    pub comment_id: String,
    /// Root featured frequency averaged over trees.
    pub bias: f64,
    /// Decimal probability points per feature, in schema order.
    pub contributions: Vec<f64>,
    pub predicted: f64,
}

impl ContributionBreakdown {
    /// `(feature index, contribution)` pairs with the largest magnitude first.
    pub fn top(&self, n: usize) -> Vec<(usize, f64)> {
        let mut idx: Vec<(usize, f64)> = self.contributions.iter().copied().enumerate().filter(|(_, c)| *c != 0.0).collect();
        idx.sort_by(|a, b| b.1.abs().total_cmp(&a.1.abs()).then(a.0.cmp(&b.0)));
        idx.truncate(n);
        idx
    }

    pub fn reconstruction_error(&self) -> f64 {
        (self.bias + self.contributions.iter().sum::<f64>() - self.predicted).abs()
    }
}

fn accumulate_tree(tree: &DecisionTree, x: &[f64], contributions: &mut [f64]) -> (f64, f64) {
    let mut node = 0usize;
    while !tree.is_leaf(node) {
        let f = tree.feature[node] as usize;
        let next = if x[f] <= tree.threshold[node] {
            tree.left[node] as usize
        } else {
            tree.right[node] as usize
        };
        contributions[f] += tree.featured_freq[next] - tree.featured_freq[node];
        node = next;
    }
    (tree.featured_freq[0], tree.featured_freq[node])
}

/// Bias, contributions and prediction for a raw feature row.
pub fn decompose(forest: &Forest, x: &[f64]) -> Result<(f64, Vec<f64>, f64)> {
    if x.len() != forest.n_features {
        return Err(Error::SchemaMismatch(format!(
            "input has {} features, forest expects {}",
            x.len(),
            forest.n_features
        )));
    }
    let mut contributions = vec![0.0; forest.n_features];
    let mut bias = 0.0;
    let mut predicted = 0.0;
    for t in &forest.trees {
        let (b, p) = accumulate_tree(t, x, &mut contributions);
        bias += b;
        predicted += p;
    }
    let n = forest.trees.len() as f64;
    contributions.iter_mut().for_each(|c| *c /= n);
    Ok((bias / n, contributions, predicted / n))
}

pub fn decompose_prediction(forest: &Forest, x: &FeatureVector) -> Result<ContributionBreakdown> {
    if x.schema_id != forest.schema_id {
        return Err(Error::SchemaMismatch(format!(
            "vector schema {} differs from forest schema {}",
            x.schema_id, forest.schema_id
        )));
    }
    let (bias, contributions, predicted) = decompose(forest, &x.values)?;
    Ok(ContributionBreakdown {
        comment_id: x.comment_id.clone(),
        bias,
        contributions,
        predicted,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Tp,
    Fp,
    Tn,
    Fn,
}

impl Outcome {
    pub const ALL: [Outcome; 4] = [Outcome::Tp, Outcome::Fp, Outcome::Tn, Outcome::Fn];

    fn of(predicted: bool, actual: bool) -> Self {
        match (predicted, actual) {
            (true, true) => Outcome::Tp,
            (true, false) => Outcome::Fp,
            (false, false) => Outcome::Tn,
            (false, true) => Outcome::Fn,
        }
    }

    fn slot(self) -> usize {
        self as usize
    }

    pub fn label(self) -> &'static str {
        match self {
            Outcome::Tp => "True pos.",
            Outcome::Fp => "False pos.",
            Outcome::Tn => "True neg.",
            Outcome::Fn => "False neg.",
        }
    }
}

/// Which rule decides that a comment counts as recommended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// In its article's top k and above the probability threshold.
    RankBased,
    /// Above the probability threshold, regardless of rank.
    ThresholdBased,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutcomeStats {
    pub mean_value: Option<f64>,
    pub mean_contribution: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureErrorRow {
    pub feature: String,
    pub mean_abs_contribution: f64,
    pub outcomes: BTreeMap<Outcome, OutcomeStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantReport {
    pub counts: BTreeMap<Outcome, usize>,
    pub features: Vec<FeatureErrorRow>,
}

impl VariantReport {
    pub fn row(&self, feature: &str) -> Option<&FeatureErrorRow> {
        self.features.iter().find(|r| r.feature == feature)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub k: usize,
    pub threshold: f64,
    pub analyzed: usize,
    pub variants: BTreeMap<Variant, VariantReport>,
}

#[derive(Clone)]
struct Sums {
    count: usize,
    values: Vec<f64>,
    contributions: Vec<f64>,
}

impl Sums {
    fn new(p: usize) -> Self {
        Self {
            count: 0,
            values: vec![0.0; p],
            contributions: vec![0.0; p],
        }
    }
}

/// Classifies every published comment of the articles as TP/FP/TN/FN under
/// both [`Variant`]s and summarizes the `top_n` features by mean absolute
/// contribution.
pub fn error_analysis(scorer: &ForestScorer<'_>, corpus: &CorpusStore, articles: &ArticleSet, k: usize, threshold: f64, top_n: usize) -> Result<ErrorReport> {
    let model = scorer.model();
    let forest = &model.forest;
    let p = forest.n_features;
    let mut sums = [vec![Sums::new(p); 4], vec![Sums::new(p); 4]];
    let mut abs_total = vec![0.0; p];
    let mut analyzed = 0usize;

    for a in articles.ids() {
        let ids = article_candidates(corpus, a)?;
        if ids.is_empty() {
            continue;
        }
        let m = scorer.featurizer().matrix(corpus, &ids)?;
        let probs = forest.predict_matrix(&m)?;
        let top: HashSet<String> = rank_scored(&ids, &probs).into_iter().take(k).map(|e| e.comment_id).collect();
        for (i, id) in ids.iter().enumerate() {
            let x = m.row(i);
            let (_, contrib, prob) = decompose(forest, x)?;
            let actual = m.labels[i];
            let above = prob > threshold;
            let outcomes = [
                Outcome::of(above && top.contains(id), actual),
                Outcome::of(above, actual),
            ];
            for (v, o) in outcomes.into_iter().enumerate() {
                let s = &mut sums[v][o.slot()];
                s.count += 1;
                for j in 0..p {
                    s.values[j] += x[j];
                    s.contributions[j] += contrib[j];
                }
            }
            for j in 0..p {
                abs_total[j] += contrib[j].abs();
            }
            analyzed += 1;
        }
    }

    let mean_abs: Vec<f64> = abs_total.iter().map(|s| s / analyzed.max(1) as f64).collect();
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| mean_abs[b].total_cmp(&mean_abs[a]).then(a.cmp(&b)));
    order.truncate(top_n);

    let mut variants = BTreeMap::new();
    for (v, variant) in [Variant::RankBased, Variant::ThresholdBased].into_iter().enumerate() {
        let counts = Outcome::ALL.iter().map(|&o| (o, sums[v][o.slot()].count)).collect();
        let features = order
            .iter()
            .map(|&j| FeatureErrorRow {
                feature: model.schema.names[j].clone(),
                mean_abs_contribution: mean_abs[j],
                outcomes: Outcome::ALL
                    .iter()
                    .map(|&o| {
                        let s = &sums[v][o.slot()];
                        let mean = |x: f64| (s.count > 0).then(|| x / s.count as f64);
                        (
                            o,
                            OutcomeStats {
                                mean_value: mean(s.values[j]),
                                mean_contribution: mean(s.contributions[j]),
                            },
                        )
                    })
                    .collect(),
            })
            .collect();
        variants.insert(variant, VariantReport { counts, features });
    }
    Ok(ErrorReport {
        k,
        threshold,
        analyzed,
        variants,
    })
}

impl ErrorReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Mean feature values (and contributions) per outcome, one table per variant.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let fmt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.3}"));
        for (variant, rep) in &self.variants {
            let _ = writeln!(s, "{variant:?} (k={}, threshold={})", self.k, self.threshold);
            let _ = write!(s, "{:<24}", "Feature");
            for o in Outcome::ALL {
                let _ = write!(s, " {:>20}", format!("{} (n={})", o.label(), rep.counts[&o]));
            }
            s.push('\n');
            for row in &rep.features {
                let _ = write!(s, "{:<24}", row.feature);
                for o in Outcome::ALL {
                    let st = row.outcomes[&o];
                    let _ = write!(s, " {:>20}", format!("{} (c={})", fmt(st.mean_value), fmt(st.mean_contribution)));
                }
                s.push('\n');
            }
            s.push('\n');
        }
        s
    }
}
