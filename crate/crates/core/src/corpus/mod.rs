//! Comment corpora grouped by article: ingestion, canonical ordering, splits and
//! synthetic generation.

mod split;
mod synth;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use chrono::{DateTime, DurationRound, TimeDelta, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub use split::{
    chronological_split, downsample, negatives_for_ratio, train_val_test_split, ArticleSet, CommentSet, Downsampled,
    SplitSpec, TrainValTest,
};
pub use synth::{synth_generate, SignalStrengths, SynthConfig};

/// Moderation outcome of a comment. `Featured` comments are also published.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Rejected,
    Published,
    Featured,
}

impl Status {
    pub fn is_featured(self) -> bool {
        self == Status::Featured
    }
}

/// One pseudonymized comment, as stored in the JSONL interchange format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommentRecord {
    pub comment_id: String,
    pub article_id: String,
    pub user_key: String,
    pub created_at: DateTime<Utc>,
    pub article_published_at: DateTime<Utc>,
    pub text: String,
    pub respect_count: u64,
    pub parent_id: Option<String>,
    pub status: Status,
}

/// Per-source ingestion bookkeeping.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SourceManifest {
    pub sources: Vec<SourceFile>,
    /// Records accepted into the store.
    pub record_count: usize,
    /// Malformed lines plus records failing validation.
    pub rejected_count: usize,
    pub diagnostics: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceFile {
    pub name: String,
    pub sha256: String,
    pub lines: usize,
}

#[derive(Debug, Clone, PartialEq)]
struct Article {
    published_at: DateTime<Utc>,
    comment_ids: Vec<String>,
    indices: Vec<usize>,
}

/// Prefix aggregates over one user's posts in chronological order.
#[derive(Debug, Clone, Default, PartialEq)]
pub(crate) struct UserTimeline {
    pub(crate) times: Vec<DateTime<Utc>>,
    pub(crate) featured: Vec<u64>,
    pub(crate) rejected: Vec<u64>,
    pub(crate) replies: Vec<u64>,
    pub(crate) respect: Vec<u64>,
}

/// An immutable, canonically ordered comment corpus.
///
/// Comments are held in ascending `(created_at, comment_id)` order and each
/// article keeps its comment list in that same order.
#[derive(Debug, Clone)]
pub struct CorpusStore {
    comments: Vec<CommentRecord>,
    by_id: HashMap<String, usize>,
    articles: BTreeMap<String, Article>,
    reply_counts: Vec<u64>,
    timelines: HashMap<String, UserTimeline>,
    manifest: SourceManifest,
}

impl PartialEq for CorpusStore {
    /// Content equality; the source manifest is not compared.
    fn eq(&self, other: &Self) -> bool {
        self.comments == other.comments && self.articles == other.articles
    }
}

pub(crate) fn truncate_to_minute(t: DateTime<Utc>) -> DateTime<Utc> {
    t.duration_trunc(TimeDelta::minutes(1)).unwrap_or(t)
}

impl CorpusStore {
    /// Validates records and builds the canonical store.
    ///
    /// Records posted before their article are rejected with a diagnostic. A
    /// `parent_id` that does not resolve to a comment of the same article is
    /// dropped with a diagnostic. Duplicate ids are fatal.
    pub fn from_records(records: Vec<CommentRecord>, mut manifest: SourceManifest) -> Result<Self> {
        let mut seen = HashSet::with_capacity(records.len());
        for r in &records {
            if !seen.insert(r.comment_id.as_str()) {
                return Err(Error::DuplicateCommentId(r.comment_id.clone()));
            }
        }
        drop(seen);

        let mut diagnostics = Vec::new();
        let mut comments: Vec<CommentRecord> = Vec::with_capacity(records.len());
        for mut r in records {
            r.created_at = truncate_to_minute(r.created_at);
            r.article_published_at = truncate_to_minute(r.article_published_at);
            if r.created_at < r.article_published_at {
                diagnostics.push(format!(
                    "rejected {}: created_at {} precedes article_published_at {}",
                    r.comment_id, r.created_at, r.article_published_at
                ));
                manifest.rejected_count += 1;
                continue;
            }
            comments.push(r);
        }

        // One publication instant per article: the earliest one reported.
        let mut published: HashMap<String, DateTime<Utc>> = HashMap::new();
        for r in &comments {
            published
                .entry(r.article_id.clone())
                .and_modify(|t| *t = (*t).min(r.article_published_at))
                .or_insert(r.article_published_at);
        }
        for r in &mut comments {
            r.article_published_at = published[&r.article_id];
        }

        let article_of: HashMap<&str, &str> = comments
            .iter()
            .map(|r| (r.comment_id.as_str(), r.article_id.as_str()))
            .collect();
        let mut dropped_links = Vec::new();
        for (i, r) in comments.iter().enumerate() {
            if let Some(parent) = &r.parent_id {
                if article_of.get(parent.as_str()) != Some(&r.article_id.as_str()) {
                    dropped_links.push(i);
                }
            }
        }
        drop(article_of);
        for i in dropped_links {
            let r = &mut comments[i];
            diagnostics.push(format!(
                "dropped parent link of {}: {:?} is not a comment of article {}",
                r.comment_id,
                r.parent_id.as_deref().unwrap_or_default(),
                r.article_id
            ));
            r.parent_id = None;
        }

        if comments.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        comments.sort_by(|a, b| {
            a.created_at
                .cmp(&b.created_at)
                .then_with(|| a.comment_id.cmp(&b.comment_id))
        });

        let by_id: HashMap<String, usize> = comments
            .iter()
            .enumerate()
            .map(|(i, r)| (r.comment_id.clone(), i))
            .collect();

        let mut reply_counts = vec![0u64; comments.len()];
        for r in &comments {
            if let Some(p) = &r.parent_id {
                reply_counts[by_id[p]] += 1;
            }
        }

        let mut articles: BTreeMap<String, Article> = BTreeMap::new();
        for (i, r) in comments.iter().enumerate() {
            let a = articles.entry(r.article_id.clone()).or_insert_with(|| Article {
                published_at: r.article_published_at,
                comment_ids: Vec::new(),
                indices: Vec::new(),
            });
            a.comment_ids.push(r.comment_id.clone());
            a.indices.push(i);
        }

        let mut timelines: HashMap<String, UserTimeline> = HashMap::new();
        for (i, r) in comments.iter().enumerate() {
            let tl = timelines.entry(r.user_key.clone()).or_insert_with(|| UserTimeline {
                featured: vec![0],
                rejected: vec![0],
                replies: vec![0],
                respect: vec![0],
                ..Default::default()
            });
            let last = |v: &Vec<u64>| *v.last().unwrap();
            tl.times.push(r.created_at);
            let f = last(&tl.featured) + u64::from(r.status == Status::Featured);
            let rj = last(&tl.rejected) + u64::from(r.status == Status::Rejected);
            let rp = last(&tl.replies) + reply_counts[i];
            let rs = last(&tl.respect) + r.respect_count;
            tl.featured.push(f);
            tl.rejected.push(rj);
            tl.replies.push(rp);
            tl.respect.push(rs);
        }

        diagnostics.sort();
        manifest.diagnostics.extend(diagnostics);
        manifest.record_count = comments.len();

        Ok(Self {
            comments,
            by_id,
            articles,
            reply_counts,
            timelines,
            manifest,
        })
    }

    pub fn comments(&self) -> &[CommentRecord] {
        &self.comments
    }

    pub fn len(&self) -> usize {
        self.comments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.comments.is_empty()
    }

    pub fn manifest(&self) -> &SourceManifest {
        &self.manifest
    }

    pub fn comment(&self, comment_id: &str) -> Option<&CommentRecord> {
        self.by_id.get(comment_id).map(|&i| &self.comments[i])
    }

    pub(crate) fn index_of(&self, comment_id: &str) -> Result<usize> {
        self.by_id
            .get(comment_id)
            .copied()
            .ok_or_else(|| Error::UnknownComment(comment_id.to_string()))
    }

    pub(crate) fn record_at(&self, index: usize) -> &CommentRecord {
        &self.comments[index]
    }

    /// Article ids in lexicographic order.
    pub fn article_ids(&self) -> impl Iterator<Item = &str> {
        self.articles.keys().map(String::as_str)
    }

    pub fn article_count(&self) -> usize {
        self.articles.len()
    }

    pub fn has_article(&self, article_id: &str) -> bool {
        self.articles.contains_key(article_id)
    }

    /// Comment ids of an article in chronological order.
    pub fn article_comments(&self, article_id: &str) -> Result<&[String]> {
        self.articles
            .get(article_id)
            .map(|a| a.comment_ids.as_slice())
            .ok_or_else(|| Error::UnknownArticle(article_id.to_string()))
    }

    pub(crate) fn article_indices(&self, article_id: &str) -> Result<&[usize]> {
        self.articles
            .get(article_id)
            .map(|a| a.indices.as_slice())
            .ok_or_else(|| Error::UnknownArticle(article_id.to_string()))
    }

    pub fn article_published_at(&self, article_id: &str) -> Result<DateTime<Utc>> {
        self.articles
            .get(article_id)
            .map(|a| a.published_at)
            .ok_or_else(|| Error::UnknownArticle(article_id.to_string()))
    }

    /// Number of direct replies to a comment across the whole corpus.
    pub fn reply_count(&self, comment_id: &str) -> Result<u64> {
        Ok(self.reply_counts[self.index_of(comment_id)?])
    }

    pub(crate) fn reply_count_at(&self, index: usize) -> u64 {
        self.reply_counts[index]
    }

    pub(crate) fn timeline(&self, user_key: &str) -> Option<&UserTimeline> {
        self.timelines.get(user_key)
    }

    /// Writes the corpus as JSONL in canonical order.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for r in &self.comments {
            serde_json::to_writer(&mut out, r)?;
            out.write_all(b"\n").map_err(|e| Error::io("<output>", e))?;
        }
        Ok(())
    }

    pub fn save_jsonl(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        self.write_jsonl(&mut w)?;
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Supported corpus file formats.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CorpusFormat {
    #[default]
    Jsonl,
}

/// Reads a comment corpus. Malformed lines are counted in the manifest and
/// skipped; the call fails only when no line yields a valid record.
pub fn ingest_comments(path: &Path, format: CorpusFormat) -> Result<CorpusStore> {
    let CorpusFormat::Jsonl = format;
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    ingest_jsonl_bytes(&bytes, &path.display().to_string())
}

pub(crate) fn ingest_jsonl_bytes(bytes: &[u8], name: &str) -> Result<CorpusStore> {
    let sha256 = hex::encode(Sha256::digest(bytes));
    let mut records = Vec::new();
    let mut manifest = SourceManifest::default();
    let mut lines = 0usize;
    for (lineno, line) in BufReader::new(bytes).lines().enumerate() {
        let line = line.map_err(|e| Error::io(name, e))?;
        if line.trim().is_empty() {
            continue;
        }
        lines += 1;
        match serde_json::from_str::<CommentRecord>(&line) {
            Ok(r) => records.push(r),
            Err(e) => {
                manifest.rejected_count += 1;
                manifest
                    .diagnostics
                    .push(format!("{name}:{}: malformed record: {e}", lineno + 1));
            }
        }
    }
    manifest.sources.push(SourceFile {
        name: name.to_string(),
        sha256,
        lines,
    });
    if records.is_empty() {
        return Err(Error::ZeroValidRecords(name.to_string()));
    }
    match CorpusStore::from_records(records, manifest) {
        Err(Error::EmptyCorpus) => Err(Error::ZeroValidRecords(name.to_string())),
        other => other,
    }
}
