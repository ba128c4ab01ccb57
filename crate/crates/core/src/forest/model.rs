use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::Forest;
use crate::corpus::CorpusStore;
use crate::error::{Error, Result};
use crate::features::{EmbeddingTable, FeatureSchema, Featurizer};

pub const MODEL_FORMAT: &str = "modq-forest";
pub const MODEL_VERSION: u32 = 1;

/// A forest together with the schema needed to featurize comments for it.
///
/// Serialized as a single JSON document; `save -> load -> save` reproduces
/// the same bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub format: String,
    pub version: u32,
    pub schema: FeatureSchema,
    pub forest: Forest,
}

impl Model {
    pub fn new(schema: FeatureSchema, forest: Forest) -> Result<Self> {
        let m = Self {
            format: MODEL_FORMAT.to_string(),
            version: MODEL_VERSION,
            schema,
            forest,
        };
        m.validate()?;
        Ok(m)
    }

    fn validate(&self) -> Result<()> {
        if self.format != MODEL_FORMAT {
            return Err(Error::ModelFormat(format!("unexpected format {:?}", self.format)));
        }
        if self.version != MODEL_VERSION {
            return Err(Error::ModelFormat(format!("unsupported version {}", self.version)));
        }
        if self.forest.schema_id != self.schema.id() || self.forest.n_features != self.schema.len() {
            return Err(Error::SchemaMismatch(format!(
                "forest schema {} ({} features) does not match model schema {} ({} features)",
                self.forest.schema_id,
                self.forest.n_features,
                self.schema.id(),
                self.schema.len()
            )));
        }
        if self.forest.trees.is_empty() {
            return Err(Error::ModelFormat("forest without trees".into()));
        }
        for t in &self.forest.trees {
            t.validate(self.forest.n_features)?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        Ok(serde_json::to_vec(self)?)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let m: Self = serde_json::from_slice(bytes)?;
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// SHA-256 of the serialized model.
    pub fn digest(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.to_bytes()?)))
    }
}

/// Anything that assigns a featured-ness score to corpus comments.
pub trait CommentScorer: Sync {
    fn name(&self) -> &str;

    /// One score per id, in input order.
    fn score_comments(&self, corpus: &CorpusStore, comment_ids: &[String]) -> Result<Vec<f64>>;
}

/// Scores comments with a trained model, featurizing them on the fly.
#[derive(Debug, Clone)]
pub struct ForestScorer<'a> {
    model: &'a Model,
    featurizer: Featurizer<'a>,
}

impl<'a> ForestScorer<'a> {
    pub fn new(model: &'a Model, embeddings: Option<&'a EmbeddingTable>) -> Result<Self> {
        Ok(Self {
            model,
            featurizer: Featurizer::new(&model.schema, embeddings)?,
        })
    }

    pub fn model(&self) -> &'a Model {
        self.model
    }

    pub fn featurizer(&self) -> &Featurizer<'a> {
        &self.featurizer
    }
}

impl CommentScorer for ForestScorer<'_> {
    fn name(&self) -> &str {
        "forest"
    }

    fn score_comments(&self, corpus: &CorpusStore, comment_ids: &[String]) -> Result<Vec<f64>> {
        let m = self.featurizer.matrix(corpus, comment_ids)?;
        self.model.forest.predict_matrix(&m)
    }
}
