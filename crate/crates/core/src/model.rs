//! Common interface of the step-A annual predictors.

use nalgebra::DMatrix;

use crate::error::Result;

/// Maps raw design-matrix rows to predictions of the annual target.
pub trait Predictor: Sync {
    fn predict_rows(&self, x: &DMatrix<f64>) -> Result<Vec<f64>>;

    /// Raw width of the rows this predictor accepts.
    fn input_width(&self) -> usize;
}
