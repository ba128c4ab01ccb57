//! Blind moderator surveys: construction, pick persistence and reporting.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::CorpusStore;
use crate::error::{Error, Result};
use crate::eval::{krippendorff_alpha, ndcg_at_k, rank_article_full, rank_scored, Agreement, LabelMatrix};
use crate::features::user_history_at;
use crate::forest::CommentScorer;

/// Comments above this probability are recommended.
pub const RECOMMEND_THRESHOLD: f64 = 0.5;
pub const MAX_RECOMMENDED: usize = 10;
pub const SURVEY_NDCG_K: usize = 10;

/// What a moderator sees next to each comment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisplayFields {
    pub prior_posts: u64,
    pub prior_featured: u64,
    pub rejection_rate: f64,
    pub respect_points: u64,
}

impl DisplayFields {
    pub fn of(corpus: &CorpusStore, comment_id: &str) -> Result<Self> {
        let c = corpus.comment(comment_id).ok_or_else(|| Error::UnknownComment(comment_id.to_string()))?;
        let h = user_history_at(&c.user_key, c.created_at, corpus);
        Ok(Self {
            prior_posts: h.total_posts_user,
            prior_featured: h.featured_posts_user,
            rejection_rate: h.ratio_rejected,
            respect_points: c.respect_count,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurveyItem {
    pub comment_id: String,
    pub text: String,
    pub display: DisplayFields,
    /// Server-side only; never serialized.
    pub recommended: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurveySet {
    pub article_id: String,
    pub shuffle_seed: u64,
    pub items: Vec<SurveyItem>,
}

/// The serializable, blind form of a [`SurveySet`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurveyView {
    pub article_id: String,
    pub shuffle_seed: u64,
    pub items: Vec<SurveyViewItem>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurveyViewItem {
    pub comment_id: String,
    pub text: String,
    pub display: DisplayFields,
}

impl SurveySet {
    pub fn recommended_count(&self) -> usize {
        self.items.iter().filter(|i| i.recommended).count()
    }

    pub fn client_view(&self) -> SurveyView {
        SurveyView {
            article_id: self.article_id.clone(),
            shuffle_seed: self.shuffle_seed,
            items: self
                .items
                .iter()
                .map(|i| SurveyViewItem {
                    comment_id: i.comment_id.clone(),
                    text: i.text.clone(),
                    display: i.display.clone(),
                })
                .collect(),
        }
    }
}

/// Up to ten comments above 0.5 plus an equal number of uniformly drawn
/// others (or all that remain), shuffled together.
pub fn build_survey<S: CommentScorer + ?Sized>(scorer: &S, corpus: &CorpusStore, article_id: &str, seed: u64) -> Result<SurveySet> {
    let ranked = rank_article_full(scorer, article_id, corpus)?;
    if ranked.is_empty() {
        return Err(Error::EmptyArticle(article_id.to_string()));
    }
    let n_rec = ranked
        .iter()
        .take_while(|e| e.probability > RECOMMEND_THRESHOLD)
        .count()
        .min(MAX_RECOMMENDED);
    let (rec, rest) = ranked.split_at(n_rec);
    // Draw from the remainder in canonical comment order so the sample
    // depends only on the seed, not on score ties.
    let mut rest: Vec<&str> = rest.iter().map(|e| e.comment_id.as_str()).collect();
    rest.sort_unstable();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_other = n_rec.min(rest.len());
    let others = index::sample(&mut rng, rest.len(), n_other);

    let mut picked: Vec<(&str, bool)> = rec.iter().map(|e| (e.comment_id.as_str(), true)).collect();
    picked.extend(others.iter().map(|i| (rest[i], false)));
    picked.shuffle(&mut rng);

    let items = picked
        .into_iter()
        .map(|(id, recommended)| {
            Ok(SurveyItem {
                comment_id: id.to_string(),
                text: corpus.comment(id).map(|c| c.text.clone()).unwrap_or_default(),
                display: DisplayFields::of(corpus, id)?,
                recommended,
            })
        })
        .collect::<Result<_>>()?;
    Ok(SurveySet {
        article_id: article_id.to_string(),
        shuffle_seed: seed,
        items,
    })
}

/// A moderator's verdict on one comment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PickEvent {
    pub article_id: String,
    pub comment_id: String,
    pub rater_id: String,
    /// Whether the rater considers the comment feature-worthy.
    pub decision: bool,
    pub at: DateTime<Utc>,
}

type PickKey = (String, String, String);

fn key_of(e: &PickEvent) -> PickKey {
    (e.article_id.clone(), e.comment_id.clone(), e.rater_id.clone())
}

/// Append-only JSONL store of [`PickEvent`]s. Later events for the same
/// (article, comment, rater) supersede earlier ones.
#[derive(Debug)]
pub struct PickLog {
    path: PathBuf,
    writer: BufWriter<File>,
    latest: BTreeMap<PickKey, PickEvent>,
    lines: usize,
}

impl PickLog {
    /// Opens or creates the log, replaying every line. A torn final line
    /// from an interrupted write is skipped.
    pub fn open(path: &Path) -> Result<Self> {
        let mut latest = BTreeMap::new();
        let mut lines = 0;
        if path.exists() {
            let f = File::open(path).map_err(|e| Error::io(path, e))?;
            for (n, line) in BufReader::new(f).lines().enumerate() {
                let line = line.map_err(|e| Error::io(path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<PickEvent>(&line) {
                    Ok(e) => {
                        latest.insert(key_of(&e), e);
                        lines += 1;
                    }
                    Err(err) => log::warn!("{}:{}: skipping unreadable pick: {err}", path.display(), n + 1),
                }
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(path).map_err(|e| Error::io(path, e))?;
        Ok(Self {
            path: path.to_path_buf(),
            writer: BufWriter::new(file),
            latest,
            lines,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Appends and flushes one event before acknowledging it.
    pub fn record(&mut self, event: PickEvent) -> Result<()> {
        let mut line = serde_json::to_vec(&event)?;
        line.push(b'\n');
        self.writer
            .write_all(&line)
            .and_then(|_| self.writer.flush())
            .and_then(|_| self.writer.get_ref().sync_data())
            .map_err(|e| Error::io(&self.path, e))?;
        self.latest.insert(key_of(&event), event);
        self.lines += 1;
        if self.lines > 2 * self.latest.len() + 256 {
            self.compact()?;
        }
        Ok(())
    }

    /// Rewrites the file to hold only the latest event per key.
    pub fn compact(&mut self) -> Result<()> {
        let tmp = self.path.with_extension("jsonl.tmp");
        {
            let f = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
            let mut w = BufWriter::new(f);
            for e in self.latest.values() {
                serde_json::to_writer(&mut w, e)?;
                w.write_all(b"\n").map_err(|e| Error::io(&tmp, e))?;
            }
            w.flush().map_err(|e| Error::io(&tmp, e))?;
            w.get_ref().sync_all().map_err(|e| Error::io(&tmp, e))?;
        }
        std::fs::rename(&tmp, &self.path).map_err(|e| Error::io(&self.path, e))?;
        let file = OpenOptions::new().append(true).open(&self.path).map_err(|e| Error::io(&self.path, e))?;
        self.writer = BufWriter::new(file);
        self.lines = self.latest.len();
        Ok(())
    }

    /// Current picks, one per key, ordered by (article, comment, rater).
    pub fn events(&self) -> impl Iterator<Item = &PickEvent> {
        self.latest.values()
    }

    pub fn len(&self) -> usize {
        self.latest.len()
    }

    pub fn is_empty(&self) -> bool {
        self.latest.is_empty()
    }

    pub fn line_count(&self) -> usize {
        self.lines
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArticleSurveyScore {
    /// Mean over raters with at least one approval; `None` if nobody approved anything.
    pub ndcg: Option<f64>,
    pub raters: usize,
    pub items: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurveyReport {
    pub k: usize,
    pub per_article: BTreeMap<String, ArticleSurveyScore>,
    pub mean_ndcg: Option<f64>,
    /// `None` when no item was rated by two raters.
    pub agreement: Option<Agreement>,
}

/// Scores moderator picks against the model.
///
/// For each rater and article, the comments they rated are ranked by model
/// probability and NDCG@k is computed with approved comments as relevant.
/// Agreement is nominal alpha over all rated comments.
pub fn survey_report<'a, S, I>(scorer: &S, corpus: &CorpusStore, picks: I, articles: Option<&[String]>, k: usize) -> Result<SurveyReport>
where
    S: CommentScorer + ?Sized,
    I: IntoIterator<Item = &'a PickEvent>,
{
    let wanted: Option<HashSet<&str>> = articles.map(|a| a.iter().map(String::as_str).collect());
    let mut by_article: BTreeMap<&str, Vec<&PickEvent>> = BTreeMap::new();
    for p in picks {
        if wanted.as_ref().is_none_or(|w| w.contains(p.article_id.as_str())) {
            by_article.entry(p.article_id.as_str()).or_default().push(p);
        }
    }
    if by_article.is_empty() {
        return Err(Error::NoPicks);
    }

    let mut per_article = BTreeMap::new();
    let mut all_raters = BTreeSet::new();
    let mut items: BTreeMap<(&str, &str), HashMap<&str, bool>> = BTreeMap::new();
    for (&article, events) in &by_article {
        let ids: Vec<String> = events.iter().map(|e| e.comment_id.clone()).collect::<BTreeSet<_>>().into_iter().collect();
        for id in &ids {
            match corpus.comment(id) {
                Some(c) if c.article_id == article => {}
                _ => return Err(Error::UnknownComment(id.clone())),
            }
        }
        let scores = scorer.score_comments(corpus, &ids)?;
        let score_of: HashMap<&str, f64> = ids.iter().map(String::as_str).zip(scores.iter().copied()).collect();

        let mut by_rater: BTreeMap<&str, Vec<&PickEvent>> = BTreeMap::new();
        for e in events {
            by_rater.entry(e.rater_id.as_str()).or_default().push(e);
            all_raters.insert(e.rater_id.as_str());
            items.entry((article, e.comment_id.as_str())).or_default().insert(e.rater_id.as_str(), e.decision);
        }
        let ndcgs: Vec<f64> = by_rater
            .values()
            .filter_map(|evs| {
                let rated: Vec<String> = evs.iter().map(|e| e.comment_id.clone()).collect();
                let s: Vec<f64> = rated.iter().map(|id| score_of[id.as_str()]).collect();
                let ranking: Vec<String> = rank_scored(&rated, &s).into_iter().map(|e| e.comment_id).collect();
                let relevant: HashSet<String> = evs.iter().filter(|e| e.decision).map(|e| e.comment_id.clone()).collect();
                ndcg_at_k(&ranking, &relevant, k)
            })
            .collect();
        per_article.insert(
            article.to_string(),
            ArticleSurveyScore {
                ndcg: (!ndcgs.is_empty()).then(|| ndcgs.iter().sum::<f64>() / ndcgs.len() as f64),
                raters: by_rater.len(),
                items: ids.len(),
            },
        );
    }

    let scored: Vec<f64> = per_article.values().filter_map(|a| a.ndcg).collect();
    let mean_ndcg = (!scored.is_empty()).then(|| scored.iter().sum::<f64>() / scored.len() as f64);

    let raters: Vec<&str> = all_raters.into_iter().collect();
    let matrix = LabelMatrix::new(items.values().map(|m| raters.iter().map(|r| m.get(r).copied()).collect()).collect());
    let agreement = match krippendorff_alpha(&matrix) {
        Ok(a) => Some(a),
        Err(Error::NoPairableValues) => None,
        Err(e) => return Err(e),
    };
    Ok(SurveyReport {
        k,
        per_article,
        mean_ndcg,
        agreement,
    })
}
