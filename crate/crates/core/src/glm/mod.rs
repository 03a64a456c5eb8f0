//! Reference-coded design matrices and maximum-likelihood logistic
//! regression: log(π / (1 − π)) = xᵀβ.

mod design;
mod fit;
mod linalg;

pub use design::{build_design, build_design_on, DesignMatrix, ModelSpec, Response, VariableBlock};
pub use fit::{fit, log_likelihood, logistic, odds_ratio, predict, score_vector, FittedLogit, OddsRatio};
