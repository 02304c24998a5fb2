use serde::{Deserialize, Serialize};

use crate::gbt::matrix::FeatureMatrix;

/// Internal nodes send a sample left when `token <= threshold`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Split {
        feature: u32,
        threshold: u8,
        left: u32,
        right: u32,
        /// Training mass reaching the node (hessian sum for boosting, sample count for forests).
        cover: f64,
    },
    Leaf {
        /// Margin contribution (boosting) or resistant-class frequency (forests).
        value: f64,
        cover: f64,
    },
}

impl Node {
    pub fn cover(&self) -> f64 {
        match *self {
            Node::Split { cover, .. } | Node::Leaf { cover, .. } => cover,
        }
    }
}

/// Binary tree stored as a node array rooted at index 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub nodes: Vec<Node>,
}

impl DecisionTree {
    pub fn leaf(value: f64, cover: f64) -> Self {
        DecisionTree {
            nodes: vec![Node::Leaf { value, cover }],
        }
    }

    /// Index of the leaf reached by a sample whose token for feature `f` is `token(f)`.
    #[inline]
    pub fn leaf_index(&self, token: impl Fn(usize) -> u8) -> usize {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { .. } => return i,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => {
                    i = if token(feature as usize) <= threshold {
                        left as usize
                    } else {
                        right as usize
                    };
                }
            }
        }
    }

    pub fn predict(&self, token: impl Fn(usize) -> u8) -> f64 {
        match self.nodes[self.leaf_index(token)] {
            Node::Leaf { value, .. } => value,
            Node::Split { .. } => unreachable!("leaf_index returns leaves"),
        }
    }

    pub fn predict_row(&self, x: &FeatureMatrix, row: usize) -> f64 {
        self.predict(|f| x.get(row, f))
    }

    /// Number of edges on the longest root-to-leaf path.
    pub fn depth(&self) -> usize {
        fn walk(t: &DecisionTree, i: usize) -> usize {
            match t.nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => {
                    1 + walk(t, left as usize).max(walk(t, right as usize))
                }
            }
        }
        walk(self, 0)
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, Node::Leaf { .. }))
            .count()
    }

    /// Features used by any split.
    pub fn split_features(&self) -> impl Iterator<Item = usize> + '_ {
        self.nodes.iter().filter_map(|n| match n {
            Node::Split { feature, .. } => Some(*feature as usize),
            Node::Leaf { .. } => None,
        })
    }

    /// Every node is reachable from the root exactly once and child indices are in range.
    pub fn is_well_formed(&self) -> bool {
        let mut seen = vec![false; self.nodes.len()];
        let mut stack = vec![0usize];
        while let Some(i) = stack.pop() {
            if i >= self.nodes.len() || seen[i] {
                return false;
            }
            seen[i] = true;
            if let Node::Split { left, right, .. } = self.nodes[i] {
                stack.push(left as usize);
                stack.push(right as usize);
            }
        }
        !self.nodes.is_empty() && seen.iter().all(|&s| s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stump() -> DecisionTree {
        DecisionTree {
            nodes: vec![
                Node::Split {
                    feature: 1,
                    threshold: 2,
                    left: 1,
                    right: 2,
                    cover: 4.0,
                },
                Node::Leaf {
                    value: -1.0,
                    cover: 3.0,
                },
                Node::Leaf {
                    value: 2.0,
                    cover: 1.0,
                },
            ],
        }
    }

    #[test]
    fn routing_is_inclusive_on_the_left() {
        let t = stump();
        assert_eq!(t.predict(|_| 2), -1.0);
        assert_eq!(t.predict(|_| 3), 2.0);
        assert_eq!(t.depth(), 1);
        assert_eq!(t.n_leaves(), 2);
        assert!(t.is_well_formed());
    }

    #[test]
    fn cycles_are_not_well_formed() {
        let mut t = stump();
        if let Node::Split { right, .. } = &mut t.nodes[0] {
            *right = 0;
        }
        assert!(!t.is_well_formed());
    }
}
