//! Tree learners on ordinal token features: gradient boosting and random forests.

pub mod boost;
pub mod forest;
pub mod matrix;
pub mod tree;

pub use boost::{fit_gbt, BoostHistory, GbtConfig, GbtModel};
pub use forest::{fit_random_forest, gini, gini_gain, ForestConfig, MaxFeatures, RandomForest};
pub use matrix::FeatureMatrix;
pub use tree::{DecisionTree, Node};
