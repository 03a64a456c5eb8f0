use serde::{Deserialize, Serialize};

use super::design::DesignMatrix;
use super::linalg::PivotedCholesky;
use crate::data_model::AuditConfig;
use crate::error::{Error, Result};
use crate::specfun::{normal_quantile, normal_sf, TailProbability};

const PROB_FLOOR: f64 = 1e-12;
const RANK_TOL: f64 = 1e-10;
const MAX_HALVINGS: usize = 40;

/// Maximum-likelihood logistic fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedLogit {
    pub column_labels: Vec<String>,
    pub coefficients: Vec<f64>,
    /// Inverse Fisher information at the estimate.
    pub covariance: Vec<Vec<f64>>,
    pub log_likelihood: f64,
    pub n_obs: usize,
    pub converged: bool,
    pub iterations: usize,
    /// Log-likelihood after each accepted iteration, starting from β = 0.
    #[serde(skip)]
    pub loglik_trace: Vec<f64>,
}

impl FittedLogit {
    pub fn n_params(&self) -> usize {
        self.coefficients.len()
    }

    pub fn std_error(&self, k: usize) -> f64 {
        self.covariance[k][k].sqrt()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("fits serialize")
    }
}

/// Inverse logit, evaluated without overflow.
pub fn logistic(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Bernoulli log-likelihood with fitted probabilities clamped to
/// `[1e-12, 1 - 1e-12]`.
pub fn log_likelihood(design: &DesignMatrix, beta: &[f64]) -> f64 {
    design
        .rows()
        .zip(&design.response)
        .map(|(row, &y)| {
            let eta = dot(row, beta);
            let p = logistic(eta).max(PROB_FLOOR);
            let q = logistic(-eta).max(PROB_FLOOR);
            y * p.ln() + (1.0 - y) * q.ln()
        })
        .sum()
}

/// Score vector Xᵀ(y − π).
pub fn score_vector(design: &DesignMatrix, beta: &[f64]) -> Vec<f64> {
    let mut g = vec![0.0; design.n_cols()];
    for (row, &y) in design.rows().zip(&design.response) {
        let r = y - logistic(dot(row, beta));
        for (gj, xj) in g.iter_mut().zip(row) {
            *gj += xj * r;
        }
    }
    g
}

/// Fisher information XᵀWX, row-major.
fn information(design: &DesignMatrix, beta: &[f64]) -> Vec<f64> {
    let k = design.n_cols();
    let mut info = vec![0.0; k * k];
    for row in design.rows() {
        let p = logistic(dot(row, beta));
        let w = p * (1.0 - p);
        for (r, &xr) in row.iter().enumerate() {
            if xr == 0.0 {
                continue;
            }
            let wr = w * xr;
            for c in r..k {
                info[r * k + c] += wr * row[c];
            }
        }
    }
    for r in 0..k {
        for c in 0..r {
            info[r * k + c] = info[c * k + r];
        }
    }
    info
}

fn factor_information(design: &DesignMatrix, beta: &[f64]) -> Result<PivotedCholesky> {
    let info = information(design, beta);
    PivotedCholesky::factor(&info, design.n_cols(), RANK_TOL).map_err(|col| Error::RankDeficient {
        column: design.column_labels[col].clone(),
    })
}

/// Fits the logit model by iteratively reweighted least squares (Newton
/// steps on the log-likelihood), halving any step that would lower the
/// likelihood. Starts from β = 0.
pub fn fit(design: &DesignMatrix, config: &AuditConfig) -> Result<FittedLogit> {
    config.validate()?;
    let k = design.n_cols();
    if design.n_rows() == 0 {
        return Err(Error::EmptyDesign);
    }
    let mut beta = vec![0.0; k];
    let mut ll = log_likelihood(design, &beta);
    let mut trace = vec![ll];
    let mut converged = false;
    let mut iterations = 0;

    for it in 1..=config.max_iterations {
        iterations = it;
        let grad = score_vector(design, &beta);
        let step = factor_information(design, &beta)?.solve(&grad);

        let mut t = 1.0;
        let mut candidate: Vec<f64> = Vec::new();
        let mut ll_new = f64::NEG_INFINITY;
        for _ in 0..MAX_HALVINGS {
            candidate = beta.iter().zip(&step).map(|(b, s)| b + t * s).collect();
            ll_new = log_likelihood(design, &candidate);
            if ll_new >= ll {
                break;
            }
            t *= 0.5;
        }
        if ll_new < ll {
            // No ascent direction left at floating-point resolution.
            converged = true;
            if polish(design, &mut beta, &mut ll)? {
                trace.push(ll);
            }
            break;
        }
        beta = candidate;
        if let Some(j) = beta.iter().position(|b| b.abs() > config.divergence_bound) {
            return Err(Error::Separation { column: design.column_labels[j].clone(), value: beta[j] });
        }
        let change = ll_new - ll;
        ll = ll_new;
        trace.push(ll);
        if change < config.loglik_tolerance {
            converged = true;
            if polish(design, &mut beta, &mut ll)? {
                trace.push(ll);
            }
            break;
        }
    }

    let inverse = factor_information(design, &beta)?.inverse();
    Ok(FittedLogit {
        column_labels: design.column_labels.clone(),
        coefficients: beta,
        covariance: inverse.chunks_exact(k).map(<[f64]>::to_vec).collect(),
        log_likelihood: ll,
        n_obs: design.n_rows(),
        converged,
        iterations,
        loglik_trace: trace,
    })
}

/// Newton steps once the likelihood has settled, kept while they shrink the
/// score. Near the optimum L is flat to rounding, so the score rather than L
/// decides here.
fn polish(design: &DesignMatrix, beta: &mut Vec<f64>, ll: &mut f64) -> Result<bool> {
    let norm = |g: &[f64]| g.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let mut grad = score_vector(design, beta);
    let mut moved = false;
    for _ in 0..3 {
        let step = factor_information(design, beta)?.solve(&grad);
        let candidate: Vec<f64> = beta.iter().zip(&step).map(|(b, s)| b + s).collect();
        let grad_new = score_vector(design, &candidate);
        if !(norm(&grad_new) < norm(&grad)) {
            break;
        }
        *beta = candidate;
        grad = grad_new;
        moved = true;
    }
    if moved {
        *ll = log_likelihood(design, beta);
    }
    Ok(moved)
}

/// Fitted probability g⁻¹(rowᵀβ) for one design row.
pub fn predict(model: &FittedLogit, row: &[f64]) -> Result<f64> {
    if row.len() != model.coefficients.len() {
        return Err(Error::DimensionMismatch { expected: model.coefficients.len(), actual: row.len() });
    }
    Ok(logistic(dot(row, &model.coefficients)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OddsRatio {
    pub or_value: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub std_error: f64,
    pub wald_z: f64,
    pub wald_p: TailProbability,
}

/// exp(β_k) with its Wald interval and two-sided Wald test at `config.alpha`.
pub fn odds_ratio(model: &FittedLogit, k: usize, config: &AuditConfig) -> Result<OddsRatio> {
    if !model.converged {
        return Err(Error::NotConverged { iterations: model.iterations });
    }
    if k == 0 || k >= model.n_params() {
        return Err(Error::DimensionMismatch { expected: model.n_params() - 1, actual: k });
    }
    let beta = model.coefficients[k];
    let se = model.std_error(k);
    let z_crit = normal_quantile(1.0 - config.alpha / 2.0)?;
    let wald_z = beta / se;
    Ok(OddsRatio {
        or_value: beta.exp(),
        ci_low: (beta - z_crit * se).exp(),
        ci_high: (beta + z_crit * se).exp(),
        std_error: se,
        wald_z,
        wald_p: TailProbability::new(2.0 * normal_sf(wald_z.abs())),
    })
}
