//! Random-forest classifiers over design matrices, the informed user-history
//! baseline, and the model file container.

mod baseline;
mod model;
mod tree;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::eval::{classification_metrics, ClassificationMetrics};
use crate::features::DesignMatrix;

pub use baseline::{baseline_classify, baseline_score, InformedBaseline, BASELINE_THRESHOLD};
pub use model::{CommentScorer, ForestScorer, Model, MODEL_FORMAT, MODEL_VERSION};
pub use tree::{DecisionTree, NodeSpec};

use tree::{grow_tree, Columns, GrowParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaxFeatures {
    /// `floor(sqrt(p))`, at least one.
    Sqrt,
    All,
    Fixed(usize),
}

impl MaxFeatures {
    pub fn resolve(self, n_features: usize) -> usize {
        let k = match self {
            MaxFeatures::Sqrt => (n_features as f64).sqrt().floor() as usize,
            MaxFeatures::All => n_features,
            MaxFeatures::Fixed(k) => k,
        };
        k.clamp(1, n_features.max(1))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub n_estimators: usize,
    /// `None` grows until purity or `min_samples_split`.
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    pub max_features: MaxFeatures,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            n_estimators: 100,
            max_depth: None,
            min_samples_split: 2,
            max_features: MaxFeatures::Sqrt,
            bootstrap: true,
            seed: 0,
        }
    }
}

impl Hyperparams {
    /// Non-textual forest: 200 trees, depth 50, minimum split 10.
    pub fn rf(seed: u64) -> Self {
        Self {
            n_estimators: 200,
            max_depth: Some(50),
            min_samples_split: 10,
            seed,
            ..Self::default()
        }
    }

    /// Forest with embedding features: 1200 trees, depth 64, minimum split 2.
    pub fn rf_emb(seed: u64) -> Self {
        Self {
            n_estimators: 1200,
            max_depth: Some(64),
            min_samples_split: 2,
            seed,
            ..Self::default()
        }
    }

    /// Forest with bag-of-words features: 1200 trees, depth 110, minimum split 10.
    pub fn rf_bow(seed: u64) -> Self {
        Self {
            n_estimators: 1200,
            max_depth: Some(110),
            min_samples_split: 10,
            seed,
            ..Self::default()
        }
    }

    pub fn preset(name: &str, seed: u64) -> Option<Self> {
        match name.to_ascii_lowercase().as_str() {
            "rf" => Some(Self::rf(seed)),
            "rf_emb" | "rf-emb" => Some(Self::rf_emb(seed)),
            "rf_bow" | "rf-bow" => Some(Self::rf_bow(seed)),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidHyperparams(m.to_string()));
        if self.n_estimators == 0 {
            return bad("n_estimators must be positive");
        }
        if self.max_depth == Some(0) {
            return bad("max_depth must be positive");
        }
        if self.min_samples_split < 2 {
            return bad("min_samples_split must be at least 2");
        }
        if self.max_features == MaxFeatures::Fixed(0) {
            return bad("max_features must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingManifest {
    pub rows: usize,
    pub featured: usize,
    /// SHA-256 over the row-major feature values and labels.
    pub data_digest: String,
}

/// A trained tree ensemble. Immutable once built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub hyperparams: Hyperparams,
    pub schema_id: String,
    pub n_features: usize,
    pub training_manifest: TrainingManifest,
    pub trees: Vec<DecisionTree>,
}

fn data_digest(m: &DesignMatrix) -> String {
    let mut h = Sha256::new();
    for v in &m.values {
        h.update(v.to_le_bytes());
    }
    for &l in &m.labels {
        h.update([l as u8]);
    }
    hex::encode(h.finalize())
}

/// Trains a forest. Tree `i` draws from ChaCha stream `i` of `hp.seed`, so the
/// result does not depend on how trees are scheduled across threads.
pub fn train_forest(matrix: &DesignMatrix, hp: &Hyperparams) -> Result<Forest> {
    hp.validate()?;
    let n_rows = matrix.n_rows();
    let n_features = matrix.n_features();
    if matrix.values.len() != n_rows * n_features {
        return Err(Error::SchemaMismatch(format!(
            "{} values for {n_rows} rows of width {n_features}",
            matrix.values.len()
        )));
    }
    if n_features == 0 {
        return Err(Error::SchemaMismatch("no features".into()));
    }
    if matrix.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::SchemaMismatch("non-finite feature value".into()));
    }
    let featured = matrix.featured_count();
    if featured == 0 || featured == n_rows {
        return Err(Error::SingleClass);
    }

    let mut columns = vec![0.0; matrix.values.len()];
    for r in 0..n_rows {
        for (f, &v) in matrix.row(r).iter().enumerate() {
            columns[f * n_rows + r] = v;
        }
    }
    let data = Columns {
        values: &columns,
        labels: &matrix.labels,
        n_rows,
        n_features,
    };
    let params = GrowParams {
        max_depth: hp.max_depth,
        min_samples_split: hp.min_samples_split,
        max_features: hp.max_features.resolve(n_features),
    };

    let trees = (0..hp.n_estimators)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
            rng.set_stream(t as u64);
            let rows: Vec<u32> = if hp.bootstrap {
                use rand::Rng;
                (0..n_rows).map(|_| rng.random_range(0..n_rows as u32)).collect()
            } else {
                (0..n_rows as u32).collect()
            };
            grow_tree(&data, rows, &params, &mut rng)
        })
        .collect();

    Ok(Forest {
        hyperparams: *hp,
        schema_id: matrix.schema.id(),
        n_features,
        training_manifest: TrainingManifest {
            rows: n_rows,
            featured,
            data_digest: data_digest(matrix),
        },
        trees,
    })
}

impl Forest {
    /// Assembles a forest from prebuilt trees.
    pub fn from_trees(trees: Vec<DecisionTree>, n_features: usize, schema_id: String) -> Result<Self> {
        if trees.is_empty() {
            return Err(Error::ModelFormat("forest without trees".into()));
        }
        for t in &trees {
            t.validate(n_features)?;
        }
        Ok(Self {
            hyperparams: Hyperparams {
                n_estimators: trees.len(),
                ..Hyperparams::default()
            },
            schema_id,
            n_features,
            training_manifest: TrainingManifest {
                rows: 0,
                featured: 0,
                data_digest: String::new(),
            },
            trees,
        })
    }

    fn check_width(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.n_features {
            return Err(Error::SchemaMismatch(format!(
                "input has {} features, forest expects {}",
                x.len(),
                self.n_features
            )));
        }
        Ok(())
    }

    /// Mean over trees of the reached leaf's featured frequency.
    pub fn predict_proba(&self, x: &[f64]) -> Result<f64> {
        self.check_width(x)?;
        Ok(self.predict_unchecked(x))
    }

    pub(crate) fn predict_unchecked(&self, x: &[f64]) -> f64 {
        let sum: f64 = self.trees.iter().map(|t| t.predict_featured(x)).sum();
        sum / self.trees.len() as f64
    }

    /// `[P(not featured), P(featured)]`.
    pub fn predict_class_proba(&self, x: &[f64]) -> Result<[f64; 2]> {
        let p = self.predict_proba(x)?;
        Ok([1.0 - p, p])
    }

    pub fn predict_matrix(&self, m: &DesignMatrix) -> Result<Vec<f64>> {
        if m.n_features() != self.n_features {
            return Err(Error::SchemaMismatch(format!(
                "matrix has {} features, forest expects {}",
                m.n_features(),
                self.n_features
            )));
        }
        Ok((0..m.n_rows())
            .into_par_iter()
            .map(|i| self.predict_unchecked(m.row(i)))
            .collect())
    }
}

/// Validation score of one grid point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridResult {
    pub hyperparams: Hyperparams,
    pub metrics: ClassificationMetrics,
}

/// Trains every candidate and scores it on `val` at threshold 0.5; results
/// are sorted by F1 descending (stable on grid order).
pub fn grid_search(train: &DesignMatrix, val: &DesignMatrix, grid: &[Hyperparams]) -> Result<Vec<GridResult>> {
    let mut out = Vec::with_capacity(grid.len());
    for hp in grid {
        let forest = train_forest(train, hp)?;
        let probs = forest.predict_matrix(val)?;
        out.push(GridResult {
            hyperparams: *hp,
            metrics: classification_metrics(&probs, &val.labels, 0.5),
        });
    }
    out.sort_by(|a, b| b.metrics.f1.total_cmp(&a.metrics.f1));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FeatureSchema;
    use proptest::prelude::*;
    use rand::Rng;

    fn schema13() -> FeatureSchema {
        FeatureSchema::nontextual()
    }

    fn random_matrix(seed: u64, rows: usize, distinct: bool) -> DesignMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<Vec<f64>> = (0..rows)
            .map(|i| {
                (0..13)
                    .map(|f| {
                        if distinct && f == 0 {
                            i as f64
                        } else {
                            rng.random_range(0..20) as f64
                        }
                    })
                    .collect()
            })
            .collect();
        let labels = data.iter().map(|r| r[1] + r[2] + rng.random_range(0.0..8.0) > 24.0).collect();
        DesignMatrix::from_rows(schema13(), &data, labels).unwrap()
    }

    /// Independent traversal: recursive descent over the node arrays.
    fn oracle_leaf_value(t: &DecisionTree, node: usize, x: &[f64]) -> f64 {
        if t.feature[node] < 0 {
            return t.featured_freq[node];
        }
        let f = t.feature[node] as usize;
        let next = if x[f] <= t.threshold[node] { t.left[node] } else { t.right[node] };
        oracle_leaf_value(t, next as usize, x)
    }

    #[test]
    fn single_tree_overfits_unique_rows() {
        let m = random_matrix(1, 300, true);
        let hp = Hyperparams {
            n_estimators: 1,
            bootstrap: false,
            max_features: MaxFeatures::All,
            ..Hyperparams::default()
        };
        let f = train_forest(&m, &hp).unwrap();
        for i in 0..m.n_rows() {
            let p = f.predict_proba(m.row(i)).unwrap();
            assert_eq!(p > 0.5, m.labels[i]);
        }
    }

    #[test]
    fn pure_root_predicts_training_share() {
        let m = random_matrix(2, 100, false);
        let share = m.featured_count() as f64 / 100.0;
        let f = Forest::from_trees(
            vec![DecisionTree::from_nodes(&[NodeSpec::Leaf {
                featured_freq: share,
                n_samples: 100,
            }])
            .unwrap()],
            13,
            schema13().id(),
        )
        .unwrap();
        assert_eq!(f.predict_proba(&[3.0; 13]).unwrap(), share);
        let leaf = DecisionTree::from_nodes(&[NodeSpec::Leaf {
            featured_freq: 0.3,
            n_samples: 10,
        }])
        .unwrap();
        let f = Forest::from_trees(vec![leaf], 13, schema13().id()).unwrap();
        assert_eq!(f.predict_proba(&[0.0; 13]).unwrap(), 0.3);
    }

    #[test]
    fn depth_one_wordcount_tree() {
        let t = DecisionTree::from_nodes(&[
            NodeSpec::Split {
                feature: 5,
                threshold: 50.0,
                left: 1,
                right: 2,
                featured_freq: 0.3,
                n_samples: 20,
            },
            NodeSpec::Leaf {
                featured_freq: 0.1,
                n_samples: 10,
            },
            NodeSpec::Leaf {
                featured_freq: 0.7,
                n_samples: 10,
            },
        ])
        .unwrap();
        let f = Forest::from_trees(vec![t], 13, schema13().id()).unwrap();
        let mut x = [0.0; 13];
        x[5] = 80.0;
        assert_eq!(f.predict_proba(&x).unwrap(), 0.7);
    }

    #[test]
    fn wrong_width_rejected() {
        let m = random_matrix(3, 60, false);
        let f = train_forest(&m, &Hyperparams { n_estimators: 3, ..Hyperparams::default() }).unwrap();
        assert!(matches!(f.predict_proba(&[0.0; 12]), Err(Error::SchemaMismatch(_))));
    }

    #[test]
    fn single_class_rejected() {
        let rows = vec![vec![1.0; 13]; 4];
        let m = DesignMatrix::from_rows(schema13(), &rows, vec![false; 4]).unwrap();
        assert!(matches!(train_forest(&m, &Hyperparams::default()), Err(Error::SingleClass)));
    }

    #[test]
    fn invalid_hyperparams_rejected() {
        let m = random_matrix(3, 40, false);
        for hp in [
            Hyperparams { n_estimators: 0, ..Hyperparams::default() },
            Hyperparams { min_samples_split: 1, ..Hyperparams::default() },
            Hyperparams { max_depth: Some(0), ..Hyperparams::default() },
        ] {
            assert!(matches!(train_forest(&m, &hp), Err(Error::InvalidHyperparams(_))));
        }
    }

    #[test]
    fn presets() {
        let rf = Hyperparams::rf(1);
        assert_eq!((rf.n_estimators, rf.max_depth, rf.min_samples_split), (200, Some(50), 10));
        let e = Hyperparams::rf_emb(1);
        assert_eq!((e.n_estimators, e.max_depth, e.min_samples_split), (1200, Some(64), 2));
        let b = Hyperparams::rf_bow(1);
        assert_eq!((b.n_estimators, b.max_depth, b.min_samples_split), (1200, Some(110), 10));
        assert_eq!(Hyperparams::preset("RF_BoW", 1), Some(b));
        assert_eq!(MaxFeatures::Sqrt.resolve(426), 20);
        assert_eq!(MaxFeatures::Sqrt.resolve(13), 3);
    }

    #[test]
    fn matches_traversal_oracle() {
        let m = random_matrix(4, 200, false);
        let f = train_forest(&m, &Hyperparams { n_estimators: 7, max_depth: Some(6), seed: 9, ..Hyperparams::default() }).unwrap();
        let probe = random_matrix(5, 50, false);
        for i in 0..probe.n_rows() {
            let x = probe.row(i);
            let want = f.trees.iter().map(|t| oracle_leaf_value(t, 0, x)).sum::<f64>() / 7.0;
            assert!((f.predict_proba(x).unwrap() - want).abs() < 1e-15);
        }
    }

    #[test]
    fn worker_count_does_not_matter() {
        let m = random_matrix(6, 150, false);
        let hp = Hyperparams { n_estimators: 16, seed: 42, ..Hyperparams::default() };
        let train_with = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| train_forest(&m, &hp).unwrap())
        };
        assert_eq!(train_with(1), train_with(4));
    }

    #[test]
    fn respects_depth_and_split_limits() {
        let m = random_matrix(7, 300, false);
        let f = train_forest(&m, &Hyperparams { n_estimators: 5, max_depth: Some(3), min_samples_split: 40, ..Hyperparams::default() }).unwrap();
        for t in &f.trees {
            assert!(t.depth() <= 3);
            for n in 0..t.node_count() {
                if !t.is_leaf(n) {
                    assert!(t.n_samples[n] >= 40);
                }
                let [a, b] = t.class_frequencies(n);
                assert!((a + b - 1.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn grid_search_orders_by_f1() {
        let train = random_matrix(8, 200, false);
        let val = random_matrix(9, 100, false);
        let grid = [
            Hyperparams { n_estimators: 5, max_depth: Some(1), ..Hyperparams::default() },
            Hyperparams { n_estimators: 5, max_depth: Some(8), ..Hyperparams::default() },
        ];
        let res = grid_search(&train, &val, &grid).unwrap();
        assert_eq!(res.len(), 2);
        assert!(res[0].metrics.f1 >= res[1].metrics.f1);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn probabilities_in_unit_interval(seed in any::<u64>()) {
            let m = random_matrix(seed, 80, false);
            let f = train_forest(&m, &Hyperparams { n_estimators: 4, seed, ..Hyperparams::default() }).unwrap();
            let probe = random_matrix(seed ^ 1, 20, false);
            for i in 0..probe.n_rows() {
                let [a, b] = f.predict_class_proba(probe.row(i)).unwrap();
                prop_assert!((0.0..=1.0).contains(&b));
                prop_assert!((a + b - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn duplicated_tree_stays_in_hull(seed in any::<u64>(), dup in 0usize..4) {
            let m = random_matrix(seed, 80, false);
            let f = train_forest(&m, &Hyperparams { n_estimators: 4, seed, ..Hyperparams::default() }).unwrap();
            let mut trees = f.trees.clone();
            trees.push(f.trees[dup].clone());
            let g = Forest::from_trees(trees, 13, f.schema_id.clone()).unwrap();
            let probe = random_matrix(seed ^ 7, 20, false);
            for i in 0..probe.n_rows() {
                let x = probe.row(i);
                let leaves: Vec<f64> = f.trees.iter().map(|t| t.predict_featured(x)).collect();
                let lo = leaves.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = leaves.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let p = g.predict_proba(x).unwrap();
                prop_assert!(p >= lo - 1e-12 && p <= hi + 1e-12);
            }
        }

        #[test]
        fn row_order_invariant_without_bootstrap(seed in any::<u64>()) {
            let m = random_matrix(seed, 60, false);
            let mut order: Vec<usize> = (0..60).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            use rand::seq::SliceRandom;
            order.shuffle(&mut rng);
            let rows: Vec<Vec<f64>> = order.iter().map(|&i| m.row(i).to_vec()).collect();
            let labels = order.iter().map(|&i| m.labels[i]).collect();
            let p = DesignMatrix::from_rows(schema13(), &rows, labels).unwrap();
            let hp = Hyperparams { n_estimators: 3, bootstrap: false, seed, ..Hyperparams::default() };
            let a = train_forest(&m, &hp).unwrap();
            let b = train_forest(&p, &hp).unwrap();
            prop_assert_eq!(a.trees, b.trees);
        }

        #[test]
        fn monotone_relabeling_keeps_partitions(seed in any::<u64>(), feat in 0usize..13) {
            let m = random_matrix(seed, 80, false);
            let rows: Vec<Vec<f64>> = (0..80)
                .map(|i| {
                    let mut r = m.row(i).to_vec();
                    r[feat] = (r[feat] * 0.5).exp() + 3.0;
                    r
                })
                .collect();
            let t = DesignMatrix::from_rows(schema13(), &rows, m.labels.clone()).unwrap();
            // Without bootstrap every row is in-sample; out-of-sample values
            // inside a gap may land on either side of a transformed midpoint.
            let hp = Hyperparams { n_estimators: 3, bootstrap: false, seed, ..Hyperparams::default() };
            let a = train_forest(&m, &hp).unwrap();
            let b = train_forest(&t, &hp).unwrap();
            for (ta, tb) in a.trees.iter().zip(&b.trees) {
                prop_assert_eq!(&ta.feature, &tb.feature);
                for i in 0..80 {
                    prop_assert_eq!(ta.leaf_index(m.row(i)), tb.leaf_index(t.row(i)));
                }
            }
        }
    }
}
