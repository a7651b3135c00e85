//! Brute-force 1-nearest-neighbor regression.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};

/// A fitted 1-NN regressor: the training sample itself.
///
/// Prediction returns the label row of the Euclidean-nearest training row,
/// ties broken by the lowest training index. Labels may be multi-column.
#[derive(Debug, Clone)]
pub struct OneNnModel {
    x: Array2<f64>,
    y: Array2<f64>,
}

impl OneNnModel {
    pub fn fit(x: ArrayView2<f64>, y: ArrayView2<f64>) -> Result<Self> {
        if x.nrows() == 0 {
            return Err(Error::invalid("1-NN needs at least one training row"));
        }
        if x.nrows() != y.nrows() {
            return Err(Error::invalid(format!(
                "1-NN row mismatch: x={}, y={}",
                x.nrows(),
                y.nrows()
            )));
        }
        Ok(OneNnModel {
            x: x.to_owned(),
            y: y.to_owned(),
        })
    }

    pub fn n_train(&self) -> usize {
        self.x.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.y.ncols()
    }

    /// Index of the nearest training row to `q` (lowest index on ties).
    pub fn nearest(&self, q: ArrayView1<f64>) -> Result<usize> {
        if q.len() != self.x.ncols() {
            return Err(Error::invalid(format!(
                "query has {} dims, model expects {}",
                q.len(),
                self.x.ncols()
            )));
        }
        let mut best = 0usize;
        let mut best_d = f64::INFINITY;
        for (i, row) in self.x.rows().into_iter().enumerate() {
            let mut d = 0.0;
            for (a, b) in row.iter().zip(q.iter()) {
                let diff = a - b;
                d += diff * diff;
            }
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        Ok(best)
    }

    pub fn predict(&self, q: ArrayView1<f64>) -> Result<Array1<f64>> {
        let i = self.nearest(q)?;
        Ok(self.y.row(i).to_owned())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn single_point_predicts_its_label_everywhere() {
        let m = OneNnModel::fit(array![[0.0]].view(), array![[5.0]].view()).unwrap();
        assert_eq!(m.predict(array![-3.0].view()).unwrap()[0], 5.0);
        assert_eq!(m.predict(array![100.0].view()).unwrap()[0], 5.0);
    }

    #[test]
    fn picks_nearest_by_distance() {
        let m = OneNnModel::fit(
            array![[0.0], [1.0]].view(),
            array![[0.0], [1.0]].view(),
        )
        .unwrap();
        assert_eq!(m.predict(array![0.4].view()).unwrap()[0], 0.0);
        assert_eq!(m.predict(array![0.6].view()).unwrap()[0], 1.0);
    }

    #[test]
    fn exact_tie_goes_to_lowest_index() {
        let m = OneNnModel::fit(
            array![[0.0], [1.0]].view(),
            array![[0.0], [1.0]].view(),
        )
        .unwrap();
        assert_eq!(m.predict(array![0.5].view()).unwrap()[0], 0.0);
    }

    #[test]
    fn rejects_empty_and_mismatched_input() {
        assert!(OneNnModel::fit(
            Array2::zeros((0, 1)).view(),
            Array2::zeros((0, 1)).view()
        )
        .is_err());
        let m = OneNnModel::fit(array![[0.0]].view(), array![[1.0]].view()).unwrap();
        assert!(m.predict(array![0.0, 1.0].view()).is_err());
    }

    #[test]
    fn multi_output_returns_full_label_row() {
        let m = OneNnModel::fit(
            array![[0.0], [2.0]].view(),
            array![[1.0, 10.0], [2.0, 20.0]].view(),
        )
        .unwrap();
        let p = m.predict(array![1.9].view()).unwrap();
        assert_eq!(p, array![2.0, 20.0]);
    }
}
