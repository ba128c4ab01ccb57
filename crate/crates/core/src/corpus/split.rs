use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{CorpusStore, Status};
use crate::error::{Error, Result};

const SPLIT_STREAM: u64 = 1;
const DOWNSAMPLE_STREAM: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    /// Share of articles (oldest first) placed in set 1.
    pub chrono_fraction: f64,
    pub train_fraction: f64,
    pub val_fraction: f64,
    pub test_fraction: f64,
    /// Target featured share of the downsampled training rows.
    pub downsample_ratio: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            chrono_fraction: 0.5,
            train_fraction: 0.8,
            val_fraction: 0.1,
            test_fraction: 0.1,
            downsample_ratio: 0.05,
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let open = |name: &str, v: f64| {
            if v > 0.0 && v < 1.0 {
                Ok(())
            } else {
                Err(Error::InvalidSplitSpec(format!("{name} must be in (0,1), got {v}")))
            }
        };
        open("chrono_fraction", self.chrono_fraction)?;
        open("train_fraction", self.train_fraction)?;
        open("val_fraction", self.val_fraction)?;
        open("test_fraction", self.test_fraction)?;
        let sum = self.train_fraction + self.val_fraction + self.test_fraction;
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidSplitSpec(format!(
                "train+val+test must equal 1, got {sum}"
            )));
        }
        if !(self.downsample_ratio > 0.0 && self.downsample_ratio <= 1.0) {
            return Err(Error::InvalidSplitSpec(format!(
                "downsample_ratio must be in (0,1], got {}",
                self.downsample_ratio
            )));
        }
        Ok(())
    }
}

/// Article ids ordered by publication time (ties by id).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArticleSet(pub Vec<String>);

impl ArticleSet {
    pub fn ids(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Comment ids in canonical corpus order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommentSet(pub Vec<String>);

impl CommentSet {
    pub fn ids(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn featured_count(&self, corpus: &CorpusStore) -> usize {
        self.0
            .iter()
            .filter(|id| corpus.comment(id).is_some_and(|c| c.status.is_featured()))
            .count()
    }

    fn from_indices(corpus: &CorpusStore, mut indices: Vec<usize>) -> Self {
        indices.sort_unstable();
        CommentSet(
            indices
                .into_iter()
                .map(|i| corpus.record_at(i).comment_id.clone())
                .collect(),
        )
    }
}

/// Splits articles chronologically: the first `ceil(fraction * N)` go to set 1.
pub fn chronological_split(corpus: &CorpusStore, spec: &SplitSpec) -> Result<(ArticleSet, ArticleSet)> {
    spec.validate()?;
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut ordered: Vec<(chrono::DateTime<chrono::Utc>, &str)> = corpus
        .articles
        .iter()
        .map(|(id, a)| (a.published_at, id.as_str()))
        .collect();
    ordered.sort();
    let n = ordered.len();
    let cut = ((spec.chrono_fraction * n as f64) - 1e-9).ceil().max(0.0) as usize;
    let cut = cut.min(n);
    let ids: Vec<String> = ordered.into_iter().map(|(_, id)| id.to_string()).collect();
    let (first, second) = ids.split_at(cut);
    Ok((ArticleSet(first.to_vec()), ArticleSet(second.to_vec())))
}

/// Comment-level train/validation/test split.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainValTest {
    pub train: CommentSet,
    pub val: CommentSet,
    pub test: CommentSet,
}

/// Rejected comments are never shown to moderators, so candidate rows are the
/// published (including featured) comments.
pub(crate) fn candidate_indices(corpus: &CorpusStore, articles: &ArticleSet) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for id in articles.ids() {
        for &i in corpus.article_indices(id)? {
            if corpus.record_at(i).status != Status::Rejected {
                out.push(i);
            }
        }
    }
    out.sort_unstable();
    Ok(out)
}

fn round_share(count: usize, fraction: f64) -> usize {
    ((count as f64) * fraction).round() as usize
}

/// Shuffles the published comments of `set1` with `spec.seed` and deals them
/// into train/val/test, stratified by the featured label.
pub fn train_val_test_split(corpus: &CorpusStore, set1: &ArticleSet, spec: &SplitSpec) -> Result<TrainValTest> {
    spec.validate()?;
    if set1.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let candidates = candidate_indices(corpus, set1)?;
    let (mut featured, mut other): (Vec<usize>, Vec<usize>) = candidates
        .into_iter()
        .partition(|&i| corpus.record_at(i).status.is_featured());
    if featured.len() < 3 {
        return Err(Error::TooFewFeatured(featured.len()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(SPLIT_STREAM);
    featured.shuffle(&mut rng);
    other.shuffle(&mut rng);

    let mut train = Vec::new();
    let mut val = Vec::new();
    let mut test = Vec::new();
    for group in [featured, other] {
        let n_val = round_share(group.len(), spec.val_fraction);
        let n_test = round_share(group.len(), spec.test_fraction).min(group.len() - n_val);
        let (v, rest) = group.split_at(n_val);
        let (t, tr) = rest.split_at(n_test);
        val.extend_from_slice(v);
        test.extend_from_slice(t);
        train.extend_from_slice(tr);
    }
    Ok(TrainValTest {
        train: CommentSet::from_indices(corpus, train),
        val: CommentSet::from_indices(corpus, val),
        test: CommentSet::from_indices(corpus, test),
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Downsampled {
    pub set: CommentSet,
    pub featured: usize,
    pub requested_negatives: usize,
    pub kept_negatives: usize,
}

impl Downsampled {
    pub fn shortfall(&self) -> usize {
        self.requested_negatives - self.kept_negatives
    }
}

/// `floor(F * (1 - ratio) / ratio)`, robust to the representation error of
/// decimal ratios such as 0.05.
pub fn negatives_for_ratio(featured: usize, ratio: f64) -> usize {
    let exact = featured as f64 * (1.0 - ratio) / ratio;
    (exact + 1e-7 * exact.max(1.0)).floor() as usize
}

/// Keeps every featured comment and a uniform sample of non-featured ones so
/// that featured rows make up `ratio` of the output.
pub fn downsample(corpus: &CorpusStore, train: &CommentSet, ratio: f64, seed: u64) -> Result<Downsampled> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::InvalidSplitSpec(format!(
            "downsample ratio must be in (0,1], got {ratio}"
        )));
    }
    let mut featured = Vec::new();
    let mut other = Vec::new();
    for id in train.ids() {
        let i = corpus.index_of(id)?;
        if corpus.record_at(i).status.is_featured() {
            featured.push(i);
        } else {
            other.push(i);
        }
    }
    if featured.is_empty() {
        return Err(Error::NoFeatured);
    }
    other.sort_unstable();
    other.dedup();
    featured.sort_unstable();
    featured.dedup();

    let requested = negatives_for_ratio(featured.len(), ratio);
    let kept = if requested > other.len() {
        log::warn!(
            "downsample: requested {requested} non-featured rows but only {} available; keeping all",
            other.len()
        );
        other.len()
    } else {
        requested
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(DOWNSAMPLE_STREAM);
    let chosen = index::sample(&mut rng, other.len(), kept);
    let n_featured = featured.len();
    let mut rows = featured;
    rows.extend(chosen.into_iter().map(|j| other[j]));
    Ok(Downsampled {
        set: CommentSet::from_indices(corpus, rows),
        featured: n_featured,
        requested_negatives: requested,
        kept_negatives: kept,
    })
}
