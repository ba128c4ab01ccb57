//! Synthetic corpora with a planted featured-comment signal.
//!
//! Each user has a latent quality `q` in [0,1]. Comment text mixes a
//! "constructive" and a "filler" lexicon with a constructive share that grows
//! with `q`; likes, replies and length also depend on `q`. Per article, the
//! `m` comments with the highest noisy score of (q, length, likes) are
//! featured, where `m` follows an over-dispersed count distribution.

use chrono::{DateTime, TimeDelta, TimeZone, Utc};
use rand::distr::weighted::WeightedIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Exp, Gamma, LogNormal, Normal, Poisson};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{CommentRecord, CorpusStore, SourceFile, SourceManifest, Status};
use crate::error::{Error, Result};

const LEXICON_SIZE: usize = 320;
const LEXICON_SEED: u64 = 0x6c65_7869_636f_6e73;

/// Weights of the planted signal in the featured-selection score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignalStrengths {
    /// Weight of the latent user quality.
    pub quality: f64,
    /// Weight of log word count.
    pub length: f64,
    /// Weight of log like count.
    pub likes: f64,
}

impl SignalStrengths {
    pub fn none() -> Self {
        Self {
            quality: 0.0,
            length: 0.0,
            likes: 0.0,
        }
    }
}

impl Default for SignalStrengths {
    fn default() -> Self {
        Self {
            quality: 3.0,
            length: 0.6,
            likes: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_articles: usize,
    /// Mean comments per article (log-normally distributed, at least 1).
    pub mean_comments: f64,
    pub n_users: usize,
    pub signal: SignalStrengths,
    /// Standard deviation of the Gaussian noise added to the selection score.
    pub label_noise: f64,
    pub featured_mean: f64,
    pub featured_sd: f64,
    /// Minutes between consecutive article publications.
    pub article_spacing_minutes: i64,
    pub start: DateTime<Utc>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_articles: 200,
            mean_comments: 50.0,
            n_users: 1500,
            signal: SignalStrengths::default(),
            label_noise: 0.2,
            featured_mean: 2.8,
            featured_sd: 3.0,
            article_spacing_minutes: 180,
            start: Utc.with_ymd_and_hms(2020, 1, 1, 6, 0, 0).unwrap(),
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidSynthConfig(m.to_string()));
        if self.n_articles == 0 {
            return bad("n_articles must be positive");
        }
        if self.n_users == 0 {
            return bad("n_users must be positive");
        }
        if self.mean_comments.is_nan() || self.mean_comments < 1.0 {
            return bad("mean_comments must be at least 1");
        }
        if !(self.featured_mean > 0.0 && self.featured_sd > 0.0) {
            return bad("featured_mean and featured_sd must be positive");
        }
        if self.featured_sd * self.featured_sd <= self.featured_mean {
            return bad("featured_sd^2 must exceed featured_mean (over-dispersed counts)");
        }
        if !self.label_noise.is_finite() || self.label_noise < 0.0 {
            return bad("label_noise must be non-negative");
        }
        Ok(())
    }
}

const ONSETS_A: &[&str] = &["ar", "be", "con", "de", "ex", "for", "in", "me", "ob", "pro", "re", "struc", "the", "ver"];
const CODAS_A: &[&str] = &["ment", "tie", "sis", "iek", "heid", "ing", "ief", "aal", "eur", "ologie"];
const ONSETS_B: &[&str] = &["bla", "boe", "gek", "haha", "jo", "lol", "meh", "nou", "pff", "poe", "tja", "wauw", "zo"];
const CODAS_B: &[&str] = &["", "h", "hh", "joh", "ns", "pie", "tje", "zz", "k", "w"];

/// Deterministic pseudo-word lexicon built from fixed syllable sets.
fn lexicon(onsets: &[&str], codas: &[&str], prefix: &str) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(LEXICON_SEED);
    let mut words = std::collections::BTreeSet::new();
    while words.len() < LEXICON_SIZE {
        let a = onsets[rng.random_range(0..onsets.len())];
        let b = onsets[rng.random_range(0..onsets.len())];
        let c = codas[rng.random_range(0..codas.len())];
        words.insert(format!("{prefix}{a}{b}{c}"));
    }
    let mut words: Vec<String> = words.into_iter().collect();
    // Fixed shuffle so Zipf ranks are not alphabetical.
    for i in (1..words.len()).rev() {
        let j = rng.random_range(0..=i);
        words.swap(i, j);
    }
    words
}

const GLUE: &[&str] = &["de", "het", "een", "en", "is", "dat", "van", "niet", "ik", "ze", "op", "te", "maar", "ook"];

struct User {
    quality: f64,
}

struct Draft {
    record: CommentRecord,
    quality: f64,
    words: usize,
}

/// Generates a corpus; identical `(config, seed)` pairs give identical output.
pub fn synth_generate(config: &SynthConfig, seed: u64) -> Result<CorpusStore> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let constructive = lexicon(ONSETS_A, CODAS_A, "");
    let filler = lexicon(ONSETS_B, CODAS_B, "x");
    let zipf = WeightedIndex::new((0..LEXICON_SIZE).map(|r| 1.0 / (r as f64 + 2.0))).expect("weights");

    let quality_dist = Beta::new(2.0, 3.0).expect("beta");
    let activity_dist = LogNormal::new(0.0, 1.0).expect("lognormal");
    let users: Vec<User> = (0..config.n_users)
        .map(|_| User {
            quality: quality_dist.sample(&mut rng),
        })
        .collect();
    let activity: Vec<f64> = (0..config.n_users).map(|_| activity_dist.sample(&mut rng)).collect();
    let pick_user = WeightedIndex::new(&activity).expect("activity weights");

    // Comments per article: log-normal with the requested mean.
    let sigma: f64 = 0.8;
    let count_dist = LogNormal::new(config.mean_comments.ln() - sigma * sigma / 2.0, sigma).expect("lognormal");
    // Featured per article: gamma-Poisson mixture with the requested mean and sd.
    let var = config.featured_sd * config.featured_sd;
    let shape = config.featured_mean * config.featured_mean / (var - config.featured_mean);
    let rate_dist = Gamma::new(shape, config.featured_mean / shape).expect("gamma");
    let delay_dist = Exp::<f64>::new(1.0 / 240.0).expect("exp");
    let unit_normal = Normal::new(0.0, 1.0).expect("normal");

    let mut records = Vec::new();
    for a in 0..config.n_articles {
        let article_id = format!("a{a:05}");
        let published = config.start + TimeDelta::minutes(a as i64 * config.article_spacing_minutes);
        let n_comments = (count_dist.sample(&mut rng).round() as usize).max(1);

        let mut delays: Vec<i64> = (0..n_comments)
            .map(|_| delay_dist.sample(&mut rng).floor() as i64)
            .collect();
        delays.sort_unstable();

        let mut drafts: Vec<Draft> = Vec::with_capacity(n_comments);
        for (k, delay) in delays.into_iter().enumerate() {
            let user_idx = pick_user.sample(&mut rng);
            let q = users[user_idx].quality;

            let mean_words = 30.0 * (1.2 * (q - 0.5)).exp();
            let words = (Gamma::new(3.0, mean_words / 3.0).expect("gamma").sample(&mut rng).round() as usize).max(1);
            let p_constructive = (0.05 + 0.9 * q).clamp(0.02, 0.98);
            let mut text = String::new();
            let mut since_stop = 0usize;
            let sentence_len = rng.random_range(6..16);
            for w in 0..words {
                let token: &str = if rng.random_bool(0.25) {
                    GLUE[rng.random_range(0..GLUE.len())]
                } else if rng.random_bool(p_constructive) {
                    &constructive[zipf.sample(&mut rng)]
                } else {
                    &filler[zipf.sample(&mut rng)]
                };
                if w == 0 {
                    let mut cs = token.chars();
                    if let Some(first) = cs.next() {
                        text.extend(first.to_uppercase());
                        text.push_str(cs.as_str());
                    }
                } else {
                    text.push(' ');
                    text.push_str(token);
                }
                since_stop += 1;
                if since_stop >= sentence_len && w + 1 < words {
                    text.push(if rng.random_bool(0.8) { '.' } else { '!' });
                    since_stop = 0;
                }
            }
            text.push(if rng.random_bool(0.85) { '.' } else { '?' });

            let time_decay = 1.0 / (1.0 + delay as f64 / 600.0);
            let like_rate = (0.5 + 2.5 * q + 0.9 * unit_normal.sample(&mut rng)).exp() * time_decay;
            let likes = Poisson::new(like_rate.max(1e-6)).expect("poisson").sample(&mut rng) as u64;

            let parent_id = if k > 0 && rng.random_bool(0.25) {
                let weights: Vec<f64> = drafts.iter().map(|d| 0.2 + d.quality).collect();
                let p = WeightedIndex::new(&weights).expect("reply weights").sample(&mut rng);
                Some(drafts[p].record.comment_id.clone())
            } else {
                None
            };

            let rejected = rng.random_bool((0.12 * (1.3 - q)).clamp(0.0, 1.0));
            drafts.push(Draft {
                record: CommentRecord {
                    comment_id: format!("c{a:05}-{k:04}"),
                    article_id: article_id.clone(),
                    user_key: format!("u{user_idx:05}"),
                    created_at: published + TimeDelta::minutes(delay),
                    article_published_at: published,
                    text,
                    respect_count: likes,
                    parent_id,
                    status: if rejected { Status::Rejected } else { Status::Published },
                },
                quality: q,
                words,
            });
        }

        let lambda = rate_dist.sample(&mut rng);
        let m = if lambda > 0.0 {
            Poisson::new(lambda).expect("poisson").sample(&mut rng) as usize
        } else {
            0
        };
        let s = config.signal;
        let mut scored: Vec<(f64, usize)> = drafts
            .iter()
            .enumerate()
            .filter(|(_, d)| d.record.status != Status::Rejected)
            .map(|(i, d)| {
                let score = s.quality * d.quality
                    + s.length * (1.0 + d.words as f64).ln() / 100f64.ln()
                    + s.likes * (1.0 + d.record.respect_count as f64).ln() / 50f64.ln()
                    + config.label_noise * unit_normal.sample(&mut rng);
                (score, i)
            })
            .collect();
        scored.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)));
        for &(_, i) in scored.iter().take(m) {
            drafts[i].record.status = Status::Featured;
        }
        records.extend(drafts.into_iter().map(|d| d.record));
    }

    let mut hasher = Sha256::new();
    hasher.update(serde_json::to_vec(config)?);
    hasher.update(seed.to_le_bytes());
    let manifest = SourceManifest {
        sources: vec![SourceFile {
            name: format!("synthetic(seed={seed})"),
            sha256: hex::encode(hasher.finalize()),
            lines: records.len(),
        }],
        ..SourceManifest::default()
    };
    CorpusStore::from_records(records, manifest)
}
