//! Fully grown CART regression tree.
//!
//! Splits maximize variance reduction, searched over every feature and the
//! midpoints between consecutive distinct sorted feature values. Recursion
//! stops when a node's labels are constant or its rows offer no valid split
//! (all feature values identical); such leaves predict the label mean. Ties
//! in variance reduction go to the lowest feature index, then the lowest
//! threshold. Routing uses `value <= threshold` to the left child.

use ndarray::{ArrayView1, ArrayView2};

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        value: f64,
    },
}

#[derive(Debug, Clone)]
pub struct TreeModel {
    nodes: Vec<Node>,
    input_dim: usize,
    n_train: usize,
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    reduction: f64,
}

impl TreeModel {
    pub fn fit(x: ArrayView2<f64>, y: ArrayView1<f64>) -> Result<Self> {
        if x.nrows() == 0 {
            return Err(Error::invalid("tree needs at least one training row"));
        }
        if x.nrows() != y.len() {
            return Err(Error::invalid(format!(
                "tree row mismatch: x={}, y={}",
                x.nrows(),
                y.len()
            )));
        }
        let mut tree = TreeModel {
            nodes: Vec::new(),
            input_dim: x.ncols(),
            n_train: x.nrows(),
        };
        let all: Vec<usize> = (0..x.nrows()).collect();
        tree.grow(&x, &y, all);
        Ok(tree)
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn n_train(&self) -> usize {
        self.n_train
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, Node::Leaf { .. }))
            .count()
    }

    /// Grows the subtree for `rows`, returns its root node id.
    fn grow(&mut self, x: &ArrayView2<f64>, y: &ArrayView1<f64>, rows: Vec<usize>) -> usize {
        let mean = rows.iter().map(|&i| y[i]).sum::<f64>() / rows.len() as f64;
        let constant = rows.iter().all(|&i| y[i] == y[rows[0]]);
        let split = if constant {
            None
        } else {
            best_split(x, y, &rows)
        };
        match split {
            None => {
                self.nodes.push(Node::Leaf { value: mean });
                self.nodes.len() - 1
            }
            Some(s) => {
                let (left_rows, right_rows): (Vec<usize>, Vec<usize>) =
                    rows.into_iter().partition(|&i| x[(i, s.feature)] <= s.threshold);
                let id = self.nodes.len();
                self.nodes.push(Node::Leaf { value: mean }); // placeholder
                let left = self.grow(x, y, left_rows);
                let right = self.grow(x, y, right_rows);
                self.nodes[id] = Node::Split {
                    feature: s.feature,
                    threshold: s.threshold,
                    left,
                    right,
                };
                id
            }
        }
    }

    pub fn predict(&self, q: ArrayView1<f64>) -> Result<f64> {
        if q.len() != self.input_dim {
            return Err(Error::invalid(format!(
                "query has {} dims, tree expects {}",
                q.len(),
                self.input_dim
            )));
        }
        let mut at = 0usize;
        loop {
            match &self.nodes[at] {
                Node::Leaf { value } => return Ok(*value),
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    at = if q[*feature] <= *threshold { *left } else { *right };
                }
            }
        }
    }
}

/// Exhaustive variance-reduction split search over `rows`.
///
/// Returns `None` when no feature has two distinct values among the rows.
fn best_split(x: &ArrayView2<f64>, y: &ArrayView1<f64>, rows: &[usize]) -> Option<BestSplit> {
    let n = rows.len() as f64;
    let total: f64 = rows.iter().map(|&i| y[i]).sum();
    let parent_score = total * total / n;
    let mut best: Option<BestSplit> = None;

    let mut order: Vec<usize> = Vec::with_capacity(rows.len());
    for feature in 0..x.ncols() {
        order.clear();
        order.extend_from_slice(rows);
        order.sort_by(|&a, &b| {
            x[(a, feature)]
                .partial_cmp(&x[(b, feature)])
                .expect("finite feature values")
        });

        let mut left_sum = 0.0;
        let mut left_n = 0.0;
        for w in 0..(order.len() - 1) {
            left_sum += y[order[w]];
            left_n += 1.0;
            let v0 = x[(order[w], feature)];
            let v1 = x[(order[w + 1], feature)];
            if v0 == v1 {
                continue;
            }
            let threshold = v0 + (v1 - v0) / 2.0;
            let right_sum = total - left_sum;
            let right_n = n - left_n;
            // Variance reduction up to the constant sum of squares:
            // maximizing this maximizes SSE(parent) - SSE(left) - SSE(right).
            let reduction =
                left_sum * left_sum / left_n + right_sum * right_sum / right_n - parent_score;
            let better = match &best {
                None => true,
                Some(b) => reduction > b.reduction,
            };
            if better {
                best = Some(BestSplit {
                    feature,
                    threshold,
                    reduction,
                });
            }
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn constant_labels_make_a_single_leaf() {
        let t = TreeModel::fit(
            array![[0.0], [1.0], [2.0]].view(),
            array![3.0, 3.0, 3.0].view(),
        )
        .unwrap();
        assert_eq!(t.n_leaves(), 1);
        assert_eq!(t.predict(array![-7.0].view()).unwrap(), 3.0);
        assert_eq!(t.predict(array![7.0].view()).unwrap(), 3.0);
    }

    #[test]
    fn two_points_split_at_midpoint() {
        // Exhaustive search by hand: the only candidate is feature 0 at 0.5.
        let t = TreeModel::fit(array![[0.0], [1.0]].view(), array![0.0, 10.0].view()).unwrap();
        assert_eq!(t.predict(array![0.2].view()).unwrap(), 0.0);
        assert_eq!(t.predict(array![0.9].view()).unwrap(), 10.0);
        // Boundary routes left on `<=`.
        assert_eq!(t.predict(array![0.5].view()).unwrap(), 0.0);
    }

    #[test]
    fn duplicate_rows_with_different_labels_predict_their_mean() {
        let t = TreeModel::fit(
            array![[1.0], [1.0]].view(),
            array![2.0, 4.0].view(),
        )
        .unwrap();
        assert_eq!(t.n_leaves(), 1);
        assert_eq!(t.predict(array![1.0].view()).unwrap(), 3.0);
    }

    #[test]
    fn fully_grown_tree_interpolates_distinct_rows() {
        let x = array![[0.0], [1.0], [2.0], [3.5], [7.0]];
        let y = array![5.0, -1.0, 2.0, 2.0, 0.0];
        let t = TreeModel::fit(x.view(), y.view()).unwrap();
        for i in 0..x.nrows() {
            assert_eq!(t.predict(x.row(i)).unwrap(), y[i]);
        }
    }

    #[test]
    fn tie_breaks_prefer_lowest_feature_then_threshold() {
        // Both features separate the labels perfectly; feature 0 must win.
        let x = array![[0.0, 10.0], [1.0, 11.0]];
        let y = array![0.0, 1.0];
        let t = TreeModel::fit(x.view(), y.view()).unwrap();
        // Routing on feature 0: flipping feature 1 across its own midpoint
        // must not change the prediction.
        assert_eq!(t.predict(array![0.0, 99.0].view()).unwrap(), 0.0);
        assert_eq!(t.predict(array![1.0, -99.0].view()).unwrap(), 1.0);
    }

    #[test]
    fn rejects_empty_and_mismatched() {
        assert!(TreeModel::fit(
            ndarray::Array2::zeros((0, 1)).view(),
            ndarray::Array1::zeros(0).view()
        )
        .is_err());
        let t = TreeModel::fit(array![[0.0]].view(), array![1.0].view()).unwrap();
        assert!(t.predict(array![0.0, 1.0].view()).is_err());
    }
}
