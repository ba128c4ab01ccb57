//! HTTP front end over a trained model, a corpus and a moderator pick log.
//!
//! Reads share the current model through an `Arc`; replacing the model swaps
//! that pointer, so requests already running finish on the model they started
//! with. Pick writes go through a single mutex-guarded appender.

mod error;
mod routes;

use std::net::SocketAddr;
use std::path::Path;
use std::sync::{Arc, RwLock};

use tokio::sync::Mutex;

use modq_core::corpus::CorpusStore;
use modq_core::features::EmbeddingTable;
use modq_core::forest::{ForestScorer, Model};
use modq_core::survey::PickLog;

pub use error::ApiError;
pub use routes::{router, RATER_HEADER};

/// A model plus the version string reported with every response.
#[derive(Debug)]
pub struct LoadedModel {
    pub model: Model,
    pub version: String,
}

impl LoadedModel {
    pub fn new(model: Model) -> modq_core::Result<Self> {
        let digest = model.digest()?;
        Ok(Self {
            version: digest[..16].to_string(),
            model,
        })
    }
}

pub struct AppState {
    model: RwLock<Arc<LoadedModel>>,
    corpus: Arc<CorpusStore>,
    embeddings: Option<Arc<EmbeddingTable>>,
    picks: Mutex<PickLog>,
}

impl AppState {
    pub fn new(model: Model, corpus: CorpusStore, embeddings: Option<EmbeddingTable>, pick_log: &Path) -> modq_core::Result<Self> {
        let loaded = LoadedModel::new(model)?;
        let embeddings = embeddings.map(Arc::new);
        // A mismatch is reported per request (409) so the corpus stays browsable.
        if let Err(e) = ForestScorer::new(&loaded.model, embeddings.as_deref()) {
            log::warn!("model {} cannot score this corpus: {e}", loaded.version);
        }
        Ok(Self {
            model: RwLock::new(Arc::new(loaded)),
            corpus: Arc::new(corpus),
            embeddings,
            picks: Mutex::new(PickLog::open(pick_log)?),
        })
    }

    pub fn current_model(&self) -> Arc<LoadedModel> {
        self.model.read().unwrap_or_else(|e| e.into_inner()).clone()
    }

    /// Atomically replaces the served model and returns its version.
    pub fn swap_model(&self, model: Model) -> modq_core::Result<String> {
        let loaded = LoadedModel::new(model)?;
        ForestScorer::new(&loaded.model, self.embeddings.as_deref())?;
        let version = loaded.version.clone();
        *self.model.write().unwrap_or_else(|e| e.into_inner()) = Arc::new(loaded);
        log::info!("now serving model {version}");
        Ok(version)
    }

    pub fn corpus(&self) -> &Arc<CorpusStore> {
        &self.corpus
    }

    /// Rewrites the pick log down to the latest decision per key.
    pub async fn compact_picks(&self) -> modq_core::Result<()> {
        self.picks.lock().await.compact()
    }
}

pub async fn serve(state: Arc<AppState>, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state)).await
}
