//! Post-hoc analysis of an evaluation log: which parameters drive the
//! objective, and how pairs of them interact.

pub mod contour;
pub mod regression;
pub mod tree;

pub use contour::{contour_grid, ContourGrid};
pub use regression::{stepwise_regression, Coefficient, EliminationStep, RegressionReport, DEFAULT_ALPHA};
pub use tree::{fit_tree, TreeNode, DEFAULT_MAX_DEPTH, DEFAULT_MIN_LEAF};

use crate::error::{Error, Result};
use crate::objective::EvaluationRecord;

/// Checks that every record carries one value per variable name.
pub(crate) fn check_log(records: &[EvaluationRecord], names: &[String]) -> Result<()> {
    for (i, r) in records.iter().enumerate() {
        if r.vector.len() != names.len() {
            return Err(Error::Structural(format!(
                "record {i} has {} values but {} variable names were given",
                r.vector.len(),
                names.len()
            )));
        }
        if !r.epsilon.is_finite() {
            return Err(Error::Analysis(format!("record {i} has a non-finite objective value")));
        }
    }
    Ok(())
}
