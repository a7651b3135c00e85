//! Observation container shared by all estimation and diagnostic code.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};

/// An in-memory observation table.
///
/// Rows are observations; `x` holds covariates, `t` the treatment (one or
/// more columns), `y` the outcome and `w` an optional instrument with the
/// same width as `t`. All indices are 0-based.
#[derive(Debug, Clone)]
pub struct Dataset {
    x: Array2<f64>,
    t: Array2<f64>,
    y: Array1<f64>,
    w: Option<Array2<f64>>,
}

impl Dataset {
    pub fn new(
        x: Array2<f64>,
        t: Array2<f64>,
        y: Array1<f64>,
        w: Option<Array2<f64>>,
    ) -> Result<Self> {
        let n = x.nrows();
        if n < 2 {
            return Err(Error::invalid(format!(
                "dataset needs at least 2 observations, got {n}"
            )));
        }
        if x.ncols() == 0 {
            return Err(Error::invalid("covariate matrix has zero columns"));
        }
        if t.nrows() != n || y.len() != n {
            return Err(Error::invalid(format!(
                "row counts differ: x={n}, t={}, y={}",
                t.nrows(),
                y.len()
            )));
        }
        if t.ncols() == 0 {
            return Err(Error::invalid("treatment matrix has zero columns"));
        }
        if let Some(w) = &w {
            if w.nrows() != n {
                return Err(Error::invalid(format!(
                    "row counts differ: x={n}, w={}",
                    w.nrows()
                )));
            }
            if w.ncols() != t.ncols() {
                return Err(Error::invalid(format!(
                    "instrument width {} must match treatment width {}",
                    w.ncols(),
                    t.ncols()
                )));
            }
        }
        let finite = x.iter().all(|v| v.is_finite())
            && t.iter().all(|v| v.is_finite())
            && y.iter().all(|v| v.is_finite())
            && w.iter().flat_map(|m| m.iter()).all(|v| v.is_finite());
        if !finite {
            return Err(Error::invalid("dataset contains non-finite entries"));
        }
        Ok(Dataset { x, t, y, w })
    }

    /// Convenience constructor for scalar treatment and no instrument.
    pub fn from_scalar_treatment(x: Array2<f64>, t: Array1<f64>, y: Array1<f64>) -> Result<Self> {
        let n = t.len();
        let t = t.into_shape_with_order((n, 1)).expect("column reshape");
        Dataset::new(x, t, y, None)
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn x(&self) -> &Array2<f64> {
        &self.x
    }

    pub fn t(&self) -> &Array2<f64> {
        &self.t
    }

    pub fn y(&self) -> &Array1<f64> {
        &self.y
    }

    pub fn w(&self) -> Option<&Array2<f64>> {
        self.w.as_ref()
    }

    /// Treatment width (the target dimension of the linear moments).
    pub fn treatment_dim(&self) -> usize {
        self.t.ncols()
    }

    pub fn covariate_dim(&self) -> usize {
        self.x.ncols()
    }

    /// Returns a copy with observation `l` overwritten.
    ///
    /// This is the replace-one perturbation used by the leave-one-out
    /// diagnostics; `w_row` must be given exactly when the dataset has an
    /// instrument.
    pub fn with_row_replaced(
        &self,
        l: usize,
        x_row: &[f64],
        t_row: &[f64],
        y_val: f64,
        w_row: Option<&[f64]>,
    ) -> Result<Self> {
        if l >= self.n() {
            return Err(Error::invalid(format!("row {l} out of range")));
        }
        if x_row.len() != self.x.ncols() || t_row.len() != self.t.ncols() {
            return Err(Error::invalid("replacement row has wrong width"));
        }
        if w_row.is_some() != self.w.is_some() {
            return Err(Error::invalid(
                "replacement must provide an instrument row iff the dataset has one",
            ));
        }
        let mut out = self.clone();
        for (j, v) in x_row.iter().enumerate() {
            out.x[(l, j)] = *v;
        }
        for (j, v) in t_row.iter().enumerate() {
            out.t[(l, j)] = *v;
        }
        out.y[l] = y_val;
        if let (Some(w), Some(row)) = (&mut out.w, w_row) {
            if row.len() != w.ncols() {
                return Err(Error::invalid("replacement instrument row has wrong width"));
            }
            for (j, v) in row.iter().enumerate() {
                w[(l, j)] = *v;
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn small() -> Dataset {
        Dataset::from_scalar_treatment(
            array![[0.0], [1.0], [2.0]],
            array![1.0, 2.0, 3.0],
            array![0.5, 1.5, 2.5],
        )
        .unwrap()
    }

    #[test]
    fn accepts_consistent_table() {
        let d = small();
        assert_eq!(d.n(), 3);
        assert_eq!(d.treatment_dim(), 1);
        assert!(d.w().is_none());
    }

    #[test]
    fn rejects_too_small_and_ragged() {
        assert!(Dataset::from_scalar_treatment(
            array![[0.0]],
            array![1.0],
            array![1.0]
        )
        .is_err());
        assert!(Dataset::from_scalar_treatment(
            array![[0.0], [1.0]],
            array![1.0, 2.0, 3.0],
            array![1.0, 2.0]
        )
        .is_err());
    }

    #[test]
    fn rejects_non_finite() {
        assert!(Dataset::from_scalar_treatment(
            array![[0.0], [f64::NAN]],
            array![1.0, 2.0],
            array![1.0, 2.0]
        )
        .is_err());
    }

    #[test]
    fn rejects_instrument_width_mismatch() {
        let err = Dataset::new(
            array![[0.0], [1.0]],
            array![[1.0], [2.0]],
            array![1.0, 2.0],
            Some(array![[1.0, 2.0], [3.0, 4.0]]),
        );
        assert!(err.is_err());
    }

    #[test]
    fn row_replacement_only_touches_one_row() {
        let d = small();
        let d2 = d.with_row_replaced(1, &[9.0], &[9.5], 9.9, None).unwrap();
        assert_eq!(d2.x()[(1, 0)], 9.0);
        assert_eq!(d2.t()[(1, 0)], 9.5);
        assert_eq!(d2.y()[1], 9.9);
        assert_eq!(d2.x()[(0, 0)], d.x()[(0, 0)]);
        assert_eq!(d2.y()[2], d.y()[2]);
    }
}
