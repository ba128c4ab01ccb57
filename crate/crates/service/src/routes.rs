use std::collections::HashSet;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::rejection::QueryRejection;
use axum::extract::{Path, Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use modq_core::eval::{article_candidates, rank_article};
use modq_core::explain::decompose_prediction;
use modq_core::forest::ForestScorer;
use modq_core::survey::{build_survey, survey_report, DisplayFields, PickEvent, SurveyReport, SurveyView, SURVEY_NDCG_K};

use crate::error::ApiError;
use crate::{AppState, LoadedModel};

/// Header carrying the caller's rater identity on `POST /picks`.
pub const RATER_HEADER: &str = "x-rater-id";

const DEFAULT_K: usize = 5;
const DEFAULT_EXPLAIN_TOP: usize = 10;

type ApiResult<T> = Result<Json<T>, ApiError>;

#[derive(Debug, Serialize)]
struct Versioned<T> {
    model_version: String,
    #[serde(flatten)]
    body: T,
}

fn versioned<T>(model: &LoadedModel, body: T) -> Json<Versioned<T>> {
    Json(Versioned {
        model_version: model.version.clone(),
        body,
    })
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/articles", get(articles))
        .route("/articles/{id}/recommendations", get(recommendations))
        .route("/articles/{id}/survey", get(survey))
        .route("/picks", post(picks))
        .route("/reports/survey", get(report))
        .fallback(not_found)
        .with_state(state)
}

/// Runs CPU-bound work off the async executor.
async fn blocking<T, F>(version: &str, f: F) -> Result<T, ApiError>
where
    T: Send + 'static,
    F: FnOnce() -> Result<T, ApiError> + Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string(), version))?
}

fn query<T>(q: Result<Query<T>, QueryRejection>, version: &str) -> Result<T, ApiError> {
    q.map(|Query(v)| v)
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, e.body_text(), version))
}

async fn not_found(State(state): State<Arc<AppState>>) -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "no such route", &state.current_model().version)
}

#[derive(Serialize)]
struct Health {
    status: &'static str,
    articles: usize,
    comments: usize,
    picks: usize,
}

async fn healthz(State(state): State<Arc<AppState>>) -> Json<Versioned<Health>> {
    let model = state.current_model();
    let picks = state.picks.lock().await.len();
    versioned(
        &model,
        Health {
            status: "ok",
            articles: state.corpus.article_count(),
            comments: state.corpus.len(),
            picks,
        },
    )
}

#[derive(Serialize)]
struct ArticleSummary {
    article_id: String,
    published_at: DateTime<Utc>,
    /// Published comments, i.e. ranking candidates.
    comment_count: usize,
}

#[derive(Serialize)]
struct ArticleList {
    articles: Vec<ArticleSummary>,
}

async fn articles(State(state): State<Arc<AppState>>) -> ApiResult<Versioned<ArticleList>> {
    let model = state.current_model();
    let corpus = &state.corpus;
    let articles = corpus
        .article_ids()
        .map(|a| {
            Ok(ArticleSummary {
                article_id: a.to_string(),
                published_at: corpus.article_published_at(a)?,
                comment_count: article_candidates(corpus, a)?.len(),
            })
        })
        .collect::<modq_core::Result<_>>()
        .map_err(|e| ApiError::from_core(e, &model.version))?;
    Ok(versioned(&model, ArticleList { articles }))
}

#[derive(Deserialize)]
struct RecommendationQuery {
    k: Option<usize>,
    explain_top: Option<usize>,
}

#[derive(Serialize)]
struct NamedContribution {
    feature: String,
    value: f64,
    contribution: f64,
}

#[derive(Serialize)]
struct Explanation {
    bias: f64,
    predicted: f64,
    /// Largest contributions by magnitude.
    contributions: Vec<NamedContribution>,
}

#[derive(Serialize)]
struct RecommendationEntry {
    rank: usize,
    comment_id: String,
    probability: f64,
    text: String,
    display: DisplayFields,
    explanation: Explanation,
}

#[derive(Serialize)]
struct Recommendations {
    article_id: String,
    k: usize,
    entries: Vec<RecommendationEntry>,
}

async fn recommendations(
    State(state): State<Arc<AppState>>,
    Path(article_id): Path<String>,
    q: Result<Query<RecommendationQuery>, QueryRejection>,
) -> ApiResult<Versioned<Recommendations>> {
    let model = state.current_model();
    let q = query(q, &model.version)?;
    let k = q.k.unwrap_or(DEFAULT_K);
    let top = q.explain_top.unwrap_or(DEFAULT_EXPLAIN_TOP);
    let version = model.version.clone();
    let m = model.clone();
    let body = blocking(&version, move || {
        let fail = |e| ApiError::from_core(e, &m.version);
        let corpus = &state.corpus;
        let scorer = ForestScorer::new(&m.model, state.embeddings.as_deref()).map_err(fail)?;
        let ranked = rank_article(&scorer, &article_id, corpus, k).map_err(fail)?;
        let schema = &m.model.schema;
        let entries = ranked
            .entries
            .into_iter()
            .enumerate()
            .map(|(i, e)| {
                let fv = scorer.featurizer().featurize(corpus, &e.comment_id)?;
                let b = decompose_prediction(&m.model.forest, &fv)?;
                let contributions = b
                    .top(top)
                    .into_iter()
                    .map(|(j, c)| NamedContribution {
                        feature: schema.names[j].clone(),
                        value: fv.values[j],
                        contribution: c,
                    })
                    .collect();
                Ok(RecommendationEntry {
                    rank: i + 1,
                    text: corpus.comment(&e.comment_id).map(|c| c.text.clone()).unwrap_or_default(),
                    display: DisplayFields::of(corpus, &e.comment_id)?,
                    comment_id: e.comment_id,
                    probability: e.probability,
                    explanation: Explanation {
                        bias: b.bias,
                        predicted: b.predicted,
                        contributions,
                    },
                })
            })
            .collect::<modq_core::Result<_>>()
            .map_err(fail)?;
        Ok(Recommendations { article_id, k, entries })
    })
    .await?;
    Ok(versioned(&model, body))
}

#[derive(Deserialize)]
struct SurveyQuery {
    seed: Option<u64>,
}

async fn survey(
    State(state): State<Arc<AppState>>,
    Path(article_id): Path<String>,
    q: Result<Query<SurveyQuery>, QueryRejection>,
) -> ApiResult<Versioned<SurveyView>> {
    let model = state.current_model();
    let seed = query(q, &model.version)?.seed.unwrap_or(0);
    let version = model.version.clone();
    let m = model.clone();
    let view = blocking(&version, move || {
        let fail = |e| ApiError::from_core(e, &m.version);
        let scorer = ForestScorer::new(&m.model, state.embeddings.as_deref()).map_err(fail)?;
        let set = build_survey(&scorer, &state.corpus, &article_id, seed).map_err(fail)?;
        Ok(set.client_view())
    })
    .await?;
    Ok(versioned(&model, view))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PickBody {
    article_id: String,
    comment_id: String,
    decision: bool,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum PickPayload {
    One(PickBody),
    Many(Vec<PickBody>),
}

#[derive(Serialize)]
struct PickAck {
    rater_id: String,
    recorded: usize,
}

async fn picks(State(state): State<Arc<AppState>>, headers: HeaderMap, body: Bytes) -> ApiResult<Versioned<PickAck>> {
    let model = state.current_model();
    let bad = |m: String| ApiError::new(StatusCode::BAD_REQUEST, m, &model.version);
    let rater_id = headers
        .get(RATER_HEADER)
        .and_then(|v| v.to_str().ok())
        .map(str::trim)
        .filter(|v| !v.is_empty())
        .ok_or_else(|| bad(format!("missing {RATER_HEADER} header")))?
        .to_string();
    let payload: PickPayload = serde_json::from_slice(&body).map_err(|e| bad(format!("invalid pick payload: {e}")))?;
    let bodies = match payload {
        PickPayload::One(b) => vec![b],
        PickPayload::Many(v) => v,
    };
    for b in &bodies {
        if !state.corpus.has_article(&b.article_id) {
            return Err(ApiError::from_core(modq_core::Error::UnknownArticle(b.article_id.clone()), &model.version));
        }
        if state.corpus.comment(&b.comment_id).is_none_or(|c| c.article_id != b.article_id) {
            return Err(ApiError::from_core(modq_core::Error::UnknownComment(b.comment_id.clone()), &model.version));
        }
    }
    let at = Utc::now();
    let mut log = state.picks.lock().await;
    for b in &bodies {
        log.record(PickEvent {
            article_id: b.article_id.clone(),
            comment_id: b.comment_id.clone(),
            rater_id: rater_id.clone(),
            decision: b.decision,
            at,
        })
        .map_err(|e| ApiError::from_core(e, &model.version))?;
    }
    drop(log);
    Ok(versioned(
        &model,
        PickAck {
            rater_id,
            recorded: bodies.len(),
        },
    ))
}

#[derive(Deserialize)]
struct ReportQuery {
    /// Comma-separated article ids; all articles with picks when absent.
    articles: Option<String>,
    k: Option<usize>,
}

async fn report(State(state): State<Arc<AppState>>, q: Result<Query<ReportQuery>, QueryRejection>) -> ApiResult<Versioned<SurveyReport>> {
    let model = state.current_model();
    let q = query(q, &model.version)?;
    let events: Vec<PickEvent> = state.picks.lock().await.events().cloned().collect();
    let articles: Option<Vec<String>> = q.articles.map(|s| {
        s.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(String::from)
            .collect::<HashSet<_>>()
            .into_iter()
            .collect()
    });
    let k = q.k.unwrap_or(SURVEY_NDCG_K);
    let version = model.version.clone();
    let m = model.clone();
    let report = blocking(&version, move || {
        let fail = |e| ApiError::from_core(e, &m.version);
        let scorer = ForestScorer::new(&m.model, state.embeddings.as_deref()).map_err(fail)?;
        survey_report(&scorer, &state.corpus, &events, articles.as_deref(), k).map_err(fail)
    })
    .await?;
    Ok(versioned(&model, report))
}
