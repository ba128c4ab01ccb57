//! End-to-end training and evaluation over a corpus.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{chronological_split, downsample, train_val_test_split, ArticleSet, CommentSet, CorpusStore, SplitSpec};
use crate::error::{Error, Result};
use crate::eval::{evaluate_articles, evaluate_classification, EvaluationReport, DEFAULT_KS};
use crate::features::{assemble_matrix, build_vocabulary, default_stopwords, EmbeddingTable, FeatureConfig, DEFAULT_VOCABULARY_SIZE};
use crate::forest::{train_forest, ForestScorer, Hyperparams, Model};

/// Builds the vocabulary (when needed) from the training comments and fits a forest.
pub fn train_model(
    corpus: &CorpusStore,
    train: &CommentSet,
    config: FeatureConfig,
    hp: &Hyperparams,
    embeddings: Option<&EmbeddingTable>,
) -> Result<Model> {
    let vocab = if config.use_bow {
        let texts = train
            .ids()
            .iter()
            .map(|id| corpus.comment(id).map(|c| c.text.as_str()).ok_or_else(|| Error::UnknownComment(id.clone())))
            .collect::<Result<Vec<_>>>()?;
        Some(build_vocabulary(texts, DEFAULT_VOCABULARY_SIZE, &default_stopwords())?)
    } else {
        None
    };
    let m = assemble_matrix(train.ids(), corpus, config, vocab.as_ref(), embeddings)?;
    let forest = train_forest(&m, hp)?;
    Model::new(m.schema, forest)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSummary {
    pub set1_articles: usize,
    pub set2_articles: usize,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub train_downsampled: usize,
    pub train_featured: usize,
}

#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub model: Model,
    pub digest: String,
    pub splits: SplitSummary,
    /// Ranking on the held-out articles plus classification on val and test.
    pub evaluation: EvaluationReport,
    pub heldout_articles: ArticleSet,
}

/// Split, downsample, train, and evaluate on the later half of the articles.
pub fn run_pipeline(
    corpus: &CorpusStore,
    spec: &SplitSpec,
    config: FeatureConfig,
    hp: &Hyperparams,
    embeddings: Option<&EmbeddingTable>,
) -> Result<PipelineOutcome> {
    let (set1, set2) = chronological_split(corpus, spec)?;
    let tvt = train_val_test_split(corpus, &set1, spec)?;
    let ds = downsample(corpus, &tvt.train, spec.downsample_ratio, spec.seed)?;
    log::info!(
        "training on {} comments ({} featured), {} trees",
        ds.set.len(),
        ds.featured,
        hp.n_estimators
    );
    let model = train_model(corpus, &ds.set, config, hp, embeddings)?;
    let scorer = ForestScorer::new(&model, embeddings)?;
    let mut evaluation = evaluate_articles(&scorer, corpus, &set2, &DEFAULT_KS)?;
    let mut classification = BTreeMap::new();
    for (name, set) in [("val", &tvt.val), ("test", &tvt.test)] {
        classification.insert(name.to_string(), evaluate_classification(&scorer, corpus, set, 0.5)?);
    }
    evaluation.classification = classification;
    Ok(PipelineOutcome {
        digest: model.digest()?,
        splits: SplitSummary {
            set1_articles: set1.len(),
            set2_articles: set2.len(),
            train: tvt.train.len(),
            val: tvt.val.len(),
            test: tvt.test.len(),
            train_downsampled: ds.set.len(),
            train_featured: ds.featured,
        },
        model,
        evaluation,
        heldout_articles: set2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{synth_generate, SynthConfig};

    #[test]
    fn small_run_is_reproducible() {
        let corpus = synth_generate(&SynthConfig { n_articles: 30, ..SynthConfig::default() }, 5).unwrap();
        let spec = SplitSpec { seed: 5, downsample_ratio: 0.2, ..SplitSpec::default() };
        let hp = Hyperparams { n_estimators: 10, seed: 5, ..Hyperparams::rf(5) };
        let a = run_pipeline(&corpus, &spec, FeatureConfig::default(), &hp, None).unwrap();
        let b = run_pipeline(&corpus, &spec, FeatureConfig::default(), &hp, None).unwrap();
        assert_eq!(a.digest, b.digest);
        assert_eq!(a.evaluation, b.evaluation);
        assert_eq!(a.splits.set1_articles + a.splits.set2_articles, 30);
        assert!(a.evaluation.articles_evaluated > 0);
        assert_eq!(a.model.schema.len(), 13);
    }

    #[test]
    fn bow_model_has_vocabulary() {
        let corpus = synth_generate(&SynthConfig { n_articles: 20, ..SynthConfig::default() }, 9).unwrap();
        let ids = CommentSet(corpus.comments().iter().map(|c| c.comment_id.clone()).collect());
        let cfg = FeatureConfig { use_bow: true, use_embeddings: false };
        let m = train_model(&corpus, &ids, cfg, &Hyperparams { n_estimators: 3, ..Hyperparams::default() }, None).unwrap();
        assert_eq!(m.schema.len(), 13 + DEFAULT_VOCABULARY_SIZE);
    }
}
