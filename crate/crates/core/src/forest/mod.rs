//! Random-forest binary classifier producing class-1 vote fractions.
//!
//! Trees are grown on bootstrap resamples of the training rows; each split
//! picks the best Gini split among a random subset of features, and trees
//! grow until nodes are pure or reach `min_node_size`. Defaults follow the
//! usual classification forest settings: 500 trees, `floor(sqrt(p))`
//! features per split, node size 1.

mod tree;

use std::io::{Read, Write};

use ndarray::{ArrayView2, Axis};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::{Purpose, Seed};

pub use tree::{Node, RankedFeatures, Tree};
use tree::TreeBuilder;

/// A binary classifier usable by the permutation engine.
pub trait Classifier: Sync {
    type Model: ScoreModel;

    fn fit(&self, features: ArrayView2<'_, f64>, labels: &[bool], seed: Seed) -> Result<Self::Model>;
}

/// A fitted model that scores rows by their class-1 probability.
pub trait ScoreModel: Send + Sync {
    fn predict_proba(&self, features: ArrayView2<'_, f64>) -> Result<Vec<f64>>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub tree_count: usize,
    /// `None` means `floor(sqrt(n_features))`, at least 1.
    pub features_per_split: Option<usize>,
    pub min_node_size: usize,
    pub bootstrap: bool,
    /// Grow trees in parallel on the current rayon pool.
    #[serde(default)]
    pub parallel_trees: bool,
    /// Track out-of-bag votes during fitting.
    #[serde(default)]
    pub out_of_bag: bool,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            tree_count: 500,
            features_per_split: None,
            min_node_size: 1,
            bootstrap: true,
            parallel_trees: false,
            out_of_bag: false,
        }
    }
}

impl ForestParams {
    pub fn with_trees(tree_count: usize) -> Self {
        ForestParams {
            tree_count,
            ..Self::default()
        }
    }

    pub fn resolved_features_per_split(&self, n_features: usize) -> usize {
        self.features_per_split
            .unwrap_or_else(|| (n_features as f64).sqrt().floor() as usize)
            .clamp(1, n_features.max(1))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RandomForest {
    pub params: ForestParams,
}

impl RandomForest {
    pub fn new(params: ForestParams) -> Self {
        RandomForest { params }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub trees: Vec<Tree>,
    pub n_features: usize,
    pub params: ForestParams,
    /// Fraction of out-of-bag rows classified correctly, when tracked.
    pub oob_accuracy: Option<f64>,
}

const MODEL_FORMAT: &str = "idconf-forest";
const MODEL_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    model: ForestModel,
}

impl ForestModel {
    /// Writes the model as versioned JSON.
    pub fn save<W: Write>(&self, writer: W) -> Result<()> {
        let file = ModelFile {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            model: self.clone(),
        };
        serde_json::to_writer(writer, &file)?;
        Ok(())
    }

    pub fn load<R: Read>(reader: R) -> Result<Self> {
        let file: ModelFile = serde_json::from_reader(reader)?;
        if file.format != MODEL_FORMAT || file.version != MODEL_VERSION {
            return Err(Error::Classifier(format!(
                "unsupported model file {} v{}",
                file.format, file.version
            )));
        }
        if file.model.trees.iter().any(|t| {
            t.max_feature()
                .is_some_and(|f| f as usize >= file.model.n_features)
        }) {
            return Err(Error::Classifier("tree references an unknown feature".into()));
        }
        Ok(file.model)
    }

    /// Number of trees voting for class 1 on each row.
    pub fn votes(&self, features: ArrayView2<'_, f64>) -> Result<Vec<u32>> {
        if features.ncols() != self.n_features {
            return Err(Error::Classifier(format!(
                "model was fitted on {} features, got {}",
                self.n_features,
                features.ncols()
            )));
        }
        let mut buf = vec![0.0; self.n_features];
        Ok(features
            .axis_iter(Axis(0))
            .map(|row| {
                let row: &[f64] = match row.as_slice() {
                    Some(s) => s,
                    None => {
                        buf.iter_mut().zip(row.iter()).for_each(|(b, v)| *b = *v);
                        &buf
                    }
                };
                self.trees.iter().filter(|t| t.predict_row(row)).count() as u32
            })
            .collect())
    }
}

impl ScoreModel for ForestModel {
    fn predict_proba(&self, features: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
        let t = self.trees.len() as f64;
        Ok(self
            .votes(features)?
            .into_iter()
            .map(|v| v as f64 / t)
            .collect())
    }
}

impl Classifier for RandomForest {
    type Model = ForestModel;

    fn fit(&self, features: ArrayView2<'_, f64>, labels: &[bool], seed: Seed) -> Result<ForestModel> {
        let n = features.nrows();
        let p = &self.params;
        if n < 2 {
            return Err(Error::Classifier(format!("need at least 2 training rows, got {n}")));
        }
        if labels.len() != n {
            return Err(Error::Classifier(format!("{n} rows but {} labels", labels.len())));
        }
        if p.tree_count == 0 {
            return Err(Error::InvalidParameter("tree_count must be at least 1".into()));
        }
        if labels.iter().all(|&y| y) || labels.iter().all(|&y| !y) {
            return Err(Error::Classifier("training labels contain a single class".into()));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::Classifier("non-finite training feature".into()));
        }

        let ranked = RankedFeatures::new(features);
        let features_per_split = p.resolved_features_per_split(features.ncols());
        let min_node_size = p.min_node_size.max(1);
        let grow = |t: usize| -> (Tree, Vec<u32>) {
            let mut rng = seed.derive(Purpose::Tree, t as u64).rng();
            let mut weights = vec![0u32; n];
            if p.bootstrap {
                for _ in 0..n {
                    weights[rng.random_range(0..n)] += 1;
                }
            } else {
                weights.fill(1);
            }
            let mut sample: Vec<u32> = (0..n as u32).filter(|&r| weights[r as usize] > 0).collect();
            let oob = if p.out_of_bag {
                (0..n as u32).filter(|&r| weights[r as usize] == 0).collect()
            } else {
                Vec::new()
            };
            let builder = TreeBuilder {
                data: &ranked,
                labels,
                weights: &weights,
                features_per_split,
                min_node_size,
            };
            (builder.grow(&mut sample, &mut rng), oob)
        };
        let grown: Vec<(Tree, Vec<u32>)> = if p.parallel_trees {
            (0..p.tree_count).into_par_iter().map(grow).collect()
        } else {
            (0..p.tree_count).map(grow).collect()
        };

        let oob_accuracy = p.out_of_bag.then(|| {
            let mut votes = vec![(0u32, 0u32); n];
            for (tree, oob) in &grown {
                for &r in oob {
                    let row = features.row(r as usize).to_vec();
                    let v = &mut votes[r as usize];
                    v.0 += tree.predict_row(&row) as u32;
                    v.1 += 1;
                }
            }
            let (mut correct, mut counted) = (0usize, 0usize);
            for (r, &(ones, total)) in votes.iter().enumerate() {
                if total > 0 {
                    counted += 1;
                    // Vote ties count as half correct.
                    let pred = 2 * ones as usize;
                    correct += match pred.cmp(&(total as usize)) {
                        std::cmp::Ordering::Greater => 2 * labels[r] as usize,
                        std::cmp::Ordering::Less => 2 * !labels[r] as usize,
                        std::cmp::Ordering::Equal => 1,
                    };
                }
            }
            correct as f64 / (2 * counted.max(1)) as f64
        });

        Ok(ForestModel {
            trees: grown.into_iter().map(|(t, _)| t).collect(),
            n_features: features.ncols(),
            params: *p,
            oob_accuracy,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn clusters(n: usize) -> (Array2<f64>, Vec<bool>) {
        let x = Array2::from_shape_fn((n, 1), |(i, _)| {
            let t = (i / 2) as f64 + 1.0;
            if i % 2 == 0 {
                -t
            } else {
                t
            }
        });
        let y = (0..n).map(|i| i % 2 == 1).collect();
        (x, y)
    }

    #[test]
    fn separable_clusters_fit_perfectly() {
        let (x, y) = clusters(100);
        let model = RandomForest::new(ForestParams::with_trees(50))
            .fit(x.view(), &y, Seed::new(3))
            .unwrap();
        let p = model.predict_proba(x.view()).unwrap();
        for (pi, yi) in p.iter().zip(&y) {
            assert_eq!(*pi > 0.5, *yi);
        }
    }

    #[test]
    fn identical_seed_identical_model() {
        let (x, y) = clusters(40);
        let f = RandomForest::new(ForestParams::with_trees(20));
        let a = f.fit(x.view(), &y, Seed::new(11)).unwrap();
        let b = f.fit(x.view(), &y, Seed::new(11)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn parallel_trees_match_sequential() {
        let (x, y) = clusters(40);
        let mut params = ForestParams::with_trees(16);
        let a = RandomForest::new(params).fit(x.view(), &y, Seed::new(2)).unwrap();
        params.parallel_trees = true;
        let b = RandomForest::new(params).fit(x.view(), &y, Seed::new(2)).unwrap();
        assert_eq!(a.trees, b.trees);
    }

    #[test]
    fn probabilities_are_vote_fractions() {
        let (x, y) = clusters(30);
        let model = RandomForest::new(ForestParams::with_trees(7))
            .fit(x.view(), &y, Seed::new(1))
            .unwrap();
        for p in model.predict_proba(x.view()).unwrap() {
            let k = p * 7.0;
            assert!((k - k.round()).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_training_input() {
        let f = RandomForest::default();
        let x = Array2::<f64>::zeros((3, 2));
        assert!(f.fit(x.view(), &[true, true, true], Seed::new(0)).is_err());
        assert!(f.fit(x.view(), &[true, false], Seed::new(0)).is_err());
        let x1 = Array2::<f64>::zeros((1, 2));
        assert!(f.fit(x1.view(), &[true], Seed::new(0)).is_err());
        let mut xn = Array2::<f64>::zeros((2, 2));
        xn[[0, 0]] = f64::NAN;
        assert!(f.fit(xn.view(), &[true, false], Seed::new(0)).is_err());
    }

    #[test]
    fn feature_count_mismatch_is_an_error() {
        let (x, y) = clusters(10);
        let model = RandomForest::new(ForestParams::with_trees(3))
            .fit(x.view(), &y, Seed::new(0))
            .unwrap();
        let wrong = Array2::<f64>::zeros((2, 2));
        assert!(model.predict_proba(wrong.view()).is_err());
    }

    #[test]
    fn model_dump_round_trips() {
        let (x, y) = clusters(20);
        let model = RandomForest::new(ForestParams::with_trees(5))
            .fit(x.view(), &y, Seed::new(4))
            .unwrap();
        let mut buf = Vec::new();
        model.save(&mut buf).unwrap();
        let back = ForestModel::load(buf.as_slice()).unwrap();
        assert_eq!(back, model);
        assert_eq!(
            back.predict_proba(x.view()).unwrap(),
            model.predict_proba(x.view()).unwrap()
        );
    }

    #[test]
    fn every_split_feature_is_in_range() {
        let x = Array2::from_shape_fn((60, 5), |(i, j)| ((i * 7 + j * 13) % 17) as f64);
        let y: Vec<bool> = (0..60).map(|i| (i * 5) % 3 == 0).collect();
        let model = RandomForest::new(ForestParams::with_trees(25))
            .fit(x.view(), &y, Seed::new(8))
            .unwrap();
        assert!(model.trees.iter().all(|t| t.max_feature().is_none_or(|f| f < 5)));
    }
}
