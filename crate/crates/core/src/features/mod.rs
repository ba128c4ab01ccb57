//! Per-comment feature extraction and design-matrix assembly.
//!
//! Every row starts with the thirteen non-textual features in
//! [`NONTEXTUAL_FEATURES`] order, optionally followed by bag-of-words counts
//! and embedding dimensions.

mod embeddings;
mod text;

use chrono::{DateTime, Utc};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{CommentRecord, CorpusStore};
use crate::error::{Error, Result};

pub use embeddings::{load_embeddings, EmbeddingTable, BINARY_MAGIC, BINARY_VERSION};
pub use text::{
    bow_vector, build_vocabulary, default_stopwords, load_stopwords, parse_stopwords, tokenize,
    BowEncoder, Vocabulary, DEFAULT_VOCABULARY_SIZE,
};

pub const NONTEXTUAL_FEATURES: [&str; 13] = [
    "delta_minutes",
    "reply_uptime",
    "reply_count",
    "respect_uptime",
    "respect_count",
    "wordcount",
    "wordspersentence",
    "total_posts_user",
    "featured_posts_user",
    "ratio_featured",
    "ratio_rejected",
    "ratio_reply",
    "ratio_respect",
];

/// Column of `ratio_featured` within every schema.
pub const RATIO_FEATURED: usize = 9;
pub const RESPECT_COUNT: usize = 4;

/// A user's posting record built from posts strictly before `as_of`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserHistory {
    pub total_posts_user: u64,
    pub featured_posts_user: u64,
    pub ratio_featured: f64,
    pub ratio_rejected: f64,
    /// Mean direct replies per post.
    pub ratio_reply: f64,
    /// Mean likes per post.
    pub ratio_respect: f64,
    pub as_of: DateTime<Utc>,
}

impl UserHistory {
    fn empty(as_of: DateTime<Utc>) -> Self {
        Self {
            total_posts_user: 0,
            featured_posts_user: 0,
            ratio_featured: 0.0,
            ratio_rejected: 0.0,
            ratio_reply: 0.0,
            ratio_respect: 0.0,
            as_of,
        }
    }
}

/// Aggregates a user's posts created strictly before `t`. Unknown users and
/// users without earlier posts get an all-zero history.
pub fn user_history_at(user_key: &str, t: DateTime<Utc>, corpus: &CorpusStore) -> UserHistory {
    let Some(tl) = corpus.timeline(user_key) else {
        return UserHistory::empty(t);
    };
    let n = tl.times.partition_point(|&x| x < t);
    if n == 0 {
        return UserHistory::empty(t);
    }
    let total = n as f64;
    UserHistory {
        total_posts_user: n as u64,
        featured_posts_user: tl.featured[n],
        ratio_featured: tl.featured[n] as f64 / total,
        ratio_rejected: tl.rejected[n] as f64 / total,
        ratio_reply: tl.replies[n] as f64 / total,
        ratio_respect: tl.respect[n] as f64 / total,
        as_of: t,
    }
}

pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Mean words per sentence; sentences are the non-blank segments between
/// '.', '!' and '?', with at least one sentence per non-empty text.
pub fn words_per_sentence(text: &str) -> f64 {
    let words = word_count(text);
    if words == 0 {
        return 0.0;
    }
    let sentences = text
        .split(['.', '!', '?'])
        .filter(|s| !s.trim().is_empty())
        .count()
        .max(1);
    words as f64 / sentences as f64
}

fn delta_minutes(c: &CommentRecord) -> i64 {
    ((c.created_at - c.article_published_at).num_seconds() / 60).max(1)
}

fn nontextual_at(corpus: &CorpusStore, index: usize, out: &mut [f64]) {
    let c = corpus.record_at(index);
    let delta = delta_minutes(c) as f64;
    let replies = corpus.reply_count_at(index) as f64;
    let respect = c.respect_count as f64;
    let words = word_count(&c.text) as f64;
    let h = user_history_at(&c.user_key, c.created_at, corpus);
    out[0] = delta;
    out[1] = replies / delta;
    out[2] = replies;
    out[3] = respect / delta;
    out[4] = respect;
    out[5] = words;
    out[6] = words_per_sentence(&c.text);
    out[7] = h.total_posts_user as f64;
    out[8] = h.featured_posts_user as f64;
    out[9] = h.ratio_featured;
    out[10] = h.ratio_rejected;
    out[11] = h.ratio_reply;
    out[12] = h.ratio_respect;
}

/// The thirteen non-textual features of a comment. Never reads the comment's
/// own moderation status.
pub fn nontextual_features(comment_id: &str, corpus: &CorpusStore) -> Result<Vec<f64>> {
    let i = corpus.index_of(comment_id)?;
    let mut out = vec![0.0; NONTEXTUAL_FEATURES.len()];
    nontextual_at(corpus, i, &mut out);
    Ok(out)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub use_bow: bool,
    pub use_embeddings: bool,
}

/// Ordered feature names plus whatever is needed to featurize at inference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub names: Vec<String>,
    pub config: FeatureConfig,
    pub vocabulary: Option<Vocabulary>,
    pub embedding_dim: Option<usize>,
}

impl FeatureSchema {
    pub fn new(config: FeatureConfig, vocabulary: Option<Vocabulary>, embedding_dim: Option<usize>) -> Result<Self> {
        let mut names: Vec<String> = NONTEXTUAL_FEATURES.iter().map(|s| s.to_string()).collect();
        match (config.use_bow, &vocabulary) {
            (true, Some(v)) => names.extend(v.tokens.iter().map(|t| format!("bow:{t}"))),
            (true, None) => return Err(Error::SchemaMismatch("bag-of-words enabled without a vocabulary".into())),
            (false, Some(_)) => return Err(Error::SchemaMismatch("vocabulary given but bag-of-words disabled".into())),
            (false, None) => {}
        }
        match (config.use_embeddings, embedding_dim) {
            (true, Some(d)) if d > 0 => names.extend((0..d).map(|i| format!("emb:{i}"))),
            (true, _) => return Err(Error::SchemaMismatch("embeddings enabled without a dimension".into())),
            (false, Some(_)) => return Err(Error::SchemaMismatch("embedding dimension given but embeddings disabled".into())),
            (false, None) => {}
        }
        Ok(Self {
            names,
            config,
            vocabulary,
            embedding_dim,
        })
    }

    pub fn nontextual() -> Self {
        Self::new(FeatureConfig::default(), None, None).expect("plain schema")
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    /// Short digest of the ordered feature names.
    pub fn id(&self) -> String {
        let mut h = Sha256::new();
        for n in &self.names {
            h.update(n.as_bytes());
            h.update(b"\n");
        }
        hex::encode(h.finalize())[..16].to_string()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

/// A single featurized comment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub comment_id: String,
    pub values: Vec<f64>,
    pub schema_id: String,
}

/// Turns corpus comments into rows for a fixed schema.
#[derive(Debug, Clone)]
pub struct Featurizer<'a> {
    schema: &'a FeatureSchema,
    bow: Option<BowEncoder>,
    embeddings: Option<&'a EmbeddingTable>,
}

impl<'a> Featurizer<'a> {
    pub fn new(schema: &'a FeatureSchema, embeddings: Option<&'a EmbeddingTable>) -> Result<Self> {
        let embeddings = match (schema.config.use_embeddings, embeddings) {
            (true, Some(t)) if Some(t.dim()) == schema.embedding_dim => Some(t),
            (true, Some(t)) => {
                return Err(Error::SchemaMismatch(format!(
                    "embedding table has dimension {}, schema expects {:?}",
                    t.dim(),
                    schema.embedding_dim
                )))
            }
            (true, None) => return Err(Error::SchemaMismatch("schema needs an embedding table".into())),
            (false, _) => None,
        };
        Ok(Self {
            schema,
            bow: schema.vocabulary.as_ref().map(BowEncoder::new),
            embeddings,
        })
    }

    pub fn schema(&self) -> &FeatureSchema {
        self.schema
    }

    pub(crate) fn row_at(&self, corpus: &CorpusStore, index: usize, out: &mut [f64]) -> Result<()> {
        debug_assert_eq!(out.len(), self.schema.len());
        let (head, mut rest) = out.split_at_mut(NONTEXTUAL_FEATURES.len());
        nontextual_at(corpus, index, head);
        let c = corpus.record_at(index);
        if let Some(bow) = &self.bow {
            let (b, r) = rest.split_at_mut(self.schema.vocabulary.as_ref().map_or(0, Vocabulary::len));
            bow.encode_into(&c.text, b);
            rest = r;
        }
        if let Some(t) = self.embeddings {
            let v = t
                .get(&c.comment_id)
                .ok_or_else(|| Error::MissingEmbedding(c.comment_id.clone()))?;
            rest.copy_from_slice(v);
        }
        Ok(())
    }

    pub fn featurize(&self, corpus: &CorpusStore, comment_id: &str) -> Result<FeatureVector> {
        let i = corpus.index_of(comment_id)?;
        let mut values = vec![0.0; self.schema.len()];
        self.row_at(corpus, i, &mut values)?;
        Ok(FeatureVector {
            comment_id: comment_id.to_string(),
            values,
            schema_id: self.schema.id(),
        })
    }

    /// Featurizes many comments in parallel; output rows follow input order.
    pub fn matrix(&self, corpus: &CorpusStore, comment_ids: &[String]) -> Result<DesignMatrix> {
        let width = self.schema.len();
        let indices: Vec<usize> = comment_ids
            .iter()
            .map(|id| corpus.index_of(id))
            .collect::<Result<_>>()?;
        let mut values = vec![0.0; indices.len() * width];
        if width > 0 {
            values
                .par_chunks_mut(width)
                .zip(indices.par_iter())
                .try_for_each(|(row, &i)| self.row_at(corpus, i, row))?;
        }
        let labels = indices
            .iter()
            .map(|&i| corpus.record_at(i).status.is_featured())
            .collect();
        Ok(DesignMatrix {
            schema: self.schema.clone(),
            values,
            labels,
            comment_ids: comment_ids.to_vec(),
        })
    }
}

/// Aligned feature rows, featured labels and comment ids.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    pub schema: FeatureSchema,
    /// Row-major, `rows * schema.len()` values.
    pub values: Vec<f64>,
    pub labels: Vec<bool>,
    pub comment_ids: Vec<String>,
}

impl DesignMatrix {
    /// Builds a matrix from raw rows; used for tests and externally prepared data.
    pub fn from_rows(schema: FeatureSchema, rows: &[Vec<f64>], labels: Vec<bool>) -> Result<Self> {
        if rows.len() != labels.len() {
            return Err(Error::SchemaMismatch(format!(
                "{} rows but {} labels",
                rows.len(),
                labels.len()
            )));
        }
        let mut values = Vec::with_capacity(rows.len() * schema.len());
        for (i, r) in rows.iter().enumerate() {
            if r.len() != schema.len() {
                return Err(Error::SchemaMismatch(format!(
                    "row {i} has {} values, schema has {}",
                    r.len(),
                    schema.len()
                )));
            }
            values.extend_from_slice(r);
        }
        Ok(Self {
            comment_ids: (0..rows.len()).map(|i| format!("row{i}")).collect(),
            schema,
            values,
            labels,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.labels.len()
    }

    pub fn n_features(&self) -> usize {
        self.schema.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.n_features();
        &self.values[i * w..(i + 1) * w]
    }

    pub fn featured_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l).count()
    }
}

/// Builds the schema implied by `config` and featurizes `comment_ids`.
pub fn assemble_matrix(
    comment_ids: &[String],
    corpus: &CorpusStore,
    config: FeatureConfig,
    vocab: Option<&Vocabulary>,
    embeddings: Option<&EmbeddingTable>,
) -> Result<DesignMatrix> {
    let vocab = if config.use_bow { vocab.cloned() } else { None };
    let dim = if config.use_embeddings {
        Some(
            embeddings
                .ok_or_else(|| Error::SchemaMismatch("embeddings enabled without a table".into()))?
                .dim(),
        )
    } else {
        None
    };
    let schema = FeatureSchema::new(config, vocab, dim)?;
    Featurizer::new(&schema, embeddings)?.matrix(corpus, comment_ids)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::fixtures::*;
    use crate::corpus::{SourceManifest, Status, SynthConfig};
    use chrono::TimeDelta;
    use proptest::prelude::*;

    fn store(records: Vec<CommentRecord>) -> CorpusStore {
        CorpusStore::from_records(records, SourceManifest::default()).unwrap()
    }

    #[test]
    fn unknown_user_has_zero_history() {
        let s = store(vec![record("c1", "a", "u1", 5, Status::Published)]);
        let h = user_history_at("nobody", ts(2, 0), &s);
        assert_eq!(h.total_posts_user, 0);
        assert_eq!((h.ratio_featured, h.ratio_rejected, h.ratio_reply, h.ratio_respect), (0.0, 0.0, 0.0, 0.0));
        let first = user_history_at("u1", ts(1, 5), &s);
        assert_eq!(first.total_posts_user, 0);
    }

    #[test]
    fn fifty_prior_posts() {
        let mut recs: Vec<CommentRecord> = (0..50)
            .map(|i| {
                let status = match i {
                    0 | 1 => Status::Featured,
                    2..=6 => Status::Rejected,
                    _ => Status::Published,
                };
                record(&format!("c{i:02}"), "a", "u1", i + 1, status)
            })
            .collect();
        recs.push(record("now", "a", "u1", 100, Status::Published));
        let s = store(recs);
        let h = user_history_at("u1", ts(1, 100), &s);
        assert_eq!(h.total_posts_user, 50);
        assert_eq!(h.featured_posts_user, 2);
        assert!((h.ratio_featured - 0.04).abs() < 1e-15);
        assert!((h.ratio_rejected - 0.10).abs() < 1e-15);
    }

    #[test]
    fn history_only_counts_strictly_earlier_posts() {
        let mut r1 = record("p1", "a", "u1", 10, Status::Featured);
        r1.respect_count = 4;
        let mut r2 = record("p2", "a", "u1", 20, Status::Published);
        r2.respect_count = 9;
        let r3 = record("p3", "a", "u1", 30, Status::Rejected);
        let mut reply = record("r", "a", "u2", 11, Status::Published);
        reply.parent_id = Some("p1".into());
        let s = store(vec![r1, r2, r3, reply]);

        let h = user_history_at("u1", ts(1, 20), &s);
        // Brute-force oracle over the raw fixture.
        let prior: Vec<&CommentRecord> = s
            .comments()
            .iter()
            .filter(|c| c.user_key == "u1" && c.created_at < ts(1, 20))
            .collect();
        assert_eq!(prior.len(), 1);
        assert_eq!(h.total_posts_user, prior.len() as u64);
        assert_eq!(h.featured_posts_user, 1);
        assert_eq!(h.ratio_respect, 4.0);
        assert_eq!(h.ratio_reply, 1.0);
    }

    #[test]
    fn thirty_minutes_three_likes() {
        let mut r = record("c1", "a", "u1", 30, Status::Published);
        r.respect_count = 3;
        let s = store(vec![r]);
        let f = nontextual_features("c1", &s).unwrap();
        assert_eq!(f.len(), 13);
        assert_eq!(f[0], 30.0);
        assert!((f[3] - 0.1).abs() < 1e-15);
        assert_eq!(f[1], 0.0);
    }

    #[test]
    fn same_minute_clamps_delta() {
        let mut r = record("c1", "a", "u1", 0, Status::Published);
        r.respect_count = 7;
        r.created_at += TimeDelta::seconds(30);
        let mut child = record("c2", "a", "u2", 3, Status::Published);
        child.parent_id = Some("c1".into());
        let s = store(vec![r, child]);
        let f = nontextual_features("c1", &s).unwrap();
        assert_eq!(f[0], 1.0);
        assert_eq!(f[1], 1.0);
        assert_eq!(f[3], 7.0);
        assert!(f.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn sentence_rule() {
        assert_eq!(word_count("Dit is een test. Echt waar!"), 6);
        assert_eq!(words_per_sentence("Dit is een test. Echt waar!"), 3.0);
        assert_eq!(words_per_sentence("geen punt hier"), 3.0);
        assert_eq!(words_per_sentence(""), 0.0);
        assert_eq!(words_per_sentence("... !"), 2.0);
    }

    #[test]
    fn status_is_not_read() {
        let a = store(vec![
            record("p", "a", "u1", 1, Status::Published),
            record("c", "a", "u1", 5, Status::Published),
        ]);
        let b = store(vec![
            record("p", "a", "u1", 1, Status::Published),
            record("c", "a", "u1", 5, Status::Featured),
        ]);
        assert_eq!(nontextual_features("c", &a).unwrap(), nontextual_features("c", &b).unwrap());
    }

    fn vocab(n: usize) -> Vocabulary {
        Vocabulary {
            tokens: (0..n).map(|i| format!("t{i}")).collect(),
            doc_freq: vec![1; n],
            stopwords: vec![],
        }
    }

    #[test]
    fn row_widths() {
        let s = synth_generate_small();
        let ids: Vec<String> = s.comments().iter().take(5).map(|c| c.comment_id.clone()).collect();
        let m = assemble_matrix(&ids, &s, FeatureConfig::default(), None, None).unwrap();
        assert_eq!(m.n_features(), 13);

        let v = vocab(DEFAULT_VOCABULARY_SIZE);
        let cfg = FeatureConfig {
            use_bow: true,
            use_embeddings: false,
        };
        let m = assemble_matrix(&ids, &s, cfg, Some(&v), None).unwrap();
        assert_eq!(m.n_features(), 426);

        let mut emb = EmbeddingTable::new(784).unwrap();
        for id in &ids {
            emb.insert(id.clone(), vec![0.25; 784]).unwrap();
        }
        let cfg = FeatureConfig {
            use_bow: false,
            use_embeddings: true,
        };
        let m = assemble_matrix(&ids, &s, cfg, None, Some(&emb)).unwrap();
        assert_eq!(m.n_features(), 797);
        assert_eq!(m.row(2)[13..], [0.25; 784]);
    }

    #[test]
    fn missing_embedding_named() {
        let s = synth_generate_small();
        let ids: Vec<String> = s.comments().iter().take(3).map(|c| c.comment_id.clone()).collect();
        let mut emb = EmbeddingTable::new(2).unwrap();
        emb.insert(ids[0].clone(), vec![1.0, 2.0]).unwrap();
        let cfg = FeatureConfig {
            use_bow: false,
            use_embeddings: true,
        };
        let err = assemble_matrix(&ids, &s, cfg, None, Some(&emb)).unwrap_err();
        assert!(matches!(err, Error::MissingEmbedding(ref id) if *id == ids[1] || *id == ids[2]));
    }

    #[test]
    fn featurizer_rejects_wrong_embedding_dim() {
        let schema = FeatureSchema::new(
            FeatureConfig {
                use_bow: false,
                use_embeddings: true,
            },
            None,
            Some(4),
        )
        .unwrap();
        let emb = EmbeddingTable::new(3).unwrap();
        assert!(matches!(Featurizer::new(&schema, Some(&emb)), Err(Error::SchemaMismatch(_))));
        assert!(matches!(Featurizer::new(&schema, None), Err(Error::SchemaMismatch(_))));
    }

    fn synth_generate_small() -> CorpusStore {
        crate::corpus::synth_generate(
            &SynthConfig {
                n_articles: 8,
                ..SynthConfig::default()
            },
            4,
        )
        .unwrap()
    }

    #[test]
    fn matrix_rows_equal_single_featurization() {
        let s = synth_generate_small();
        let texts: Vec<&str> = s.comments().iter().map(|c| c.text.as_str()).collect();
        let v = build_vocabulary(texts, 50, &default_stopwords()).unwrap();
        let schema = FeatureSchema::new(
            FeatureConfig {
                use_bow: true,
                use_embeddings: false,
            },
            Some(v),
            None,
        )
        .unwrap();
        let f = Featurizer::new(&schema, None).unwrap();
        let ids: Vec<String> = s.comments().iter().map(|c| c.comment_id.clone()).collect();
        let m = f.matrix(&s, &ids).unwrap();
        for (i, id) in ids.iter().enumerate() {
            assert_eq!(m.row(i), f.featurize(&s, id).unwrap().values.as_slice());
        }
        assert_eq!(m, f.matrix(&s, &ids).unwrap());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn user_history_invariants(minute in 0u32..3000) {
            let s = synth_generate_small();
            let t = ts(1, 0) + TimeDelta::minutes(minute as i64 * 3);
            for user in ["u00001", "u00002", "u00010", "u00100"] {
                let h = user_history_at(user, t, &s);
                prop_assert!(h.featured_posts_user <= h.total_posts_user);
                prop_assert!((0.0..=1.0).contains(&h.ratio_featured));
                prop_assert!((0.0..=1.0).contains(&h.ratio_rejected));
                let brute = s.comments().iter().filter(|c| c.user_key == user && c.created_at < t).count();
                prop_assert_eq!(h.total_posts_user as usize, brute);
            }
        }
    }
}
