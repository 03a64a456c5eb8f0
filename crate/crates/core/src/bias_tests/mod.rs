//! The test battery: univariate logistic audits, the likelihood-ratio
//! adjustment procedure with confounding verdicts, Pearson chi-squared
//! contingency tests and one-way ANOVA.

mod classical;
mod export;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

pub use classical::{anova_groups, chi2_contingency, one_way_anova, pearson_chi2, AnovaResult, ContingencyResult, LevelCounts};
pub use export::{Decision, EffectDisplay, RecordDisplay, ResultsFile, TestRecord, TestType, VerdictDetail};

use crate::data_model::{AuditConfig, DemographicSchema, Variable};
use crate::error::{Error, Result};
use crate::glm::{build_design_on, fit, odds_ratio, DesignMatrix, FittedLogit, ModelSpec, VariableBlock};
use crate::ingestion::DatasetManifest;
use crate::metrics::{pair_scores, UtteranceScore};
use crate::specfun::{chi2_quantile, chi2_sf, format_p, TailProbability};

/// Odds ratio of one level against the reference, with its Wald test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectEstimate {
    pub variable: Variable,
    pub level: String,
    pub reference: String,
    pub or_value: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub wald_z: f64,
    pub wald_p: TailProbability,
    pub significant: bool,
    pub display: EffectDisplay,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LlrResult {
    pub statistic: f64,
    pub df: usize,
    pub critical_value: f64,
    pub p_value: TailProbability,
    pub significant: bool,
}

/// T = 2 (L_full − L_restricted) against the χ²(df) quantile at 1 − α.
///
/// Small negative statistics from rounding are clamped to zero. With
/// `df == 0` the models coincide and nothing is tested.
pub fn llr_test(restricted_loglik: f64, full_loglik: f64, df: usize, alpha: f64) -> Result<LlrResult> {
    let statistic = (2.0 * (full_loglik - restricted_loglik)).max(0.0);
    if df == 0 {
        return Ok(LlrResult {
            statistic: 0.0,
            df,
            critical_value: 0.0,
            p_value: TailProbability::new(1.0),
            significant: false,
        });
    }
    let critical_value = chi2_quantile(1.0 - alpha, df as f64)?;
    Ok(LlrResult {
        statistic,
        df,
        critical_value,
        p_value: TailProbability::new(chi2_sf(statistic, df as f64)?),
        significant: statistic > critical_value,
    })
}

fn effects_for(model: &FittedLogit, block: &VariableBlock, config: &AuditConfig) -> Result<Vec<EffectEstimate>> {
    block
        .levels
        .iter()
        .enumerate()
        .map(|(i, level)| {
            let or = odds_ratio(model, block.first_column + i, config)?;
            Ok(EffectEstimate {
                variable: block.variable,
                level: level.clone(),
                reference: block.reference.clone(),
                or_value: or.or_value,
                ci_low: or.ci_low,
                ci_high: or.ci_high,
                wald_z: or.wald_z,
                wald_p: or.wald_p,
                significant: or.wald_p.value() < config.alpha,
                display: EffectDisplay {
                    or: format!("{:.2}", or.or_value),
                    ci_low: format!("{:.2}", or.ci_low),
                    ci_high: format!("{:.2}", or.ci_high),
                    p: format_p(or.wald_p.value()),
                },
            })
        })
        .collect()
}

fn intercept_only(design: &DesignMatrix) -> DesignMatrix {
    let k = design.n_cols();
    DesignMatrix {
        column_labels: vec![design.column_labels[0].clone()],
        values: design.values.chunks_exact(k).map(|r| r[0]).collect(),
        response: design.response.clone(),
        row_ids: design.row_ids.clone(),
        blocks: Vec::new(),
        excluded: design.excluded,
    }
}

fn fit_converged(design: &DesignMatrix, config: &AuditConfig) -> Result<FittedLogit> {
    let model = fit(design, config)?;
    if !model.converged {
        return Err(Error::NotConverged { iterations: model.iterations });
    }
    Ok(model)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnivariateAudit {
    pub variable: Variable,
    pub n_obs: usize,
    pub excluded: usize,
    pub model: FittedLogit,
    pub effects: Vec<EffectEstimate>,
    /// Likelihood-ratio test of all non-intercept coefficients against the
    /// intercept-only model.
    pub global_test: LlrResult,
}

/// Fits EM ~ variable and reports each level's OR against the reference.
pub fn univariate_audit(
    manifest: &DatasetManifest,
    scores: &[UtteranceScore],
    variable: Variable,
    schema: &DemographicSchema,
    config: &AuditConfig,
) -> Result<UnivariateAudit> {
    config.validate()?;
    let spec = ModelSpec::new(&[variable], config, schema)?;
    let design = build_design_on(manifest, scores, &spec, schema, &[variable])?;
    let model = fit_converged(&design, config)?;
    let null = fit_converged(&intercept_only(&design), config)?;
    let global_test = llr_test(null.log_likelihood, model.log_likelihood, model.n_params() - 1, config.alpha)?;
    let block = design.block(variable).expect("covariate block");
    Ok(UnivariateAudit {
        variable,
        n_obs: design.n_rows(),
        excluded: design.excluded,
        effects: effects_for(&model, block, config)?,
        model,
        global_test,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    /// The adjusting variable does not improve the model.
    NoAddedInformation,
    /// The adjustment flips at least one Wald conclusion of the target.
    Confounder,
    /// No flip, but some target OR moves by at least the shift threshold.
    CrossEffect,
    IndependentEffects,
}

impl Verdict {
    pub fn classify(llr_significant: bool, any_flip: bool, max_abs_shift: f64, threshold: f64) -> Self {
        if !llr_significant {
            Verdict::NoAddedInformation
        } else if any_flip {
            Verdict::Confounder
        } else if max_abs_shift >= threshold {
            Verdict::CrossEffect
        } else {
            Verdict::IndependentEffects
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::NoAddedInformation => "no_added_information",
            Verdict::Confounder => "confounder",
            Verdict::CrossEffect => "cross_effect",
            Verdict::IndependentEffects => "independent_effects",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfoundingVerdict {
    pub target_variable: Variable,
    pub adjusting_variable: Variable,
    /// Rows shared by both fits.
    pub n_obs: usize,
    pub univariate_log_likelihood: f64,
    pub multivariate_log_likelihood: f64,
    pub llr: LlrResult,
    pub univariate_effects: Vec<EffectEstimate>,
    pub adjusted_effects: Vec<EffectEstimate>,
    /// Target levels whose Wald conclusion at α differs between the fits.
    pub flipped_levels: Vec<String>,
    /// (OR_adjusted − OR_univariate) / OR_univariate per target level.
    pub or_shifts: BTreeMap<String, f64>,
    pub verdict: Verdict,
}

fn observed_levels(
    manifest: &DatasetManifest,
    scores: &[UtteranceScore],
    var: Variable,
    required: &[Variable],
) -> Result<BTreeSet<String>> {
    Ok(pair_scores(manifest, scores)?
        .into_iter()
        .filter(|(r, _)| required.iter().all(|&v| r.tags.get(v).is_some()))
        .filter_map(|(r, _)| r.tags.get(var).map(str::to_string))
        .collect())
}

/// Compares EM ~ target with EM ~ target + adjusting on the rows tagged for
/// both variables.
pub fn adjustment_test(
    manifest: &DatasetManifest,
    scores: &[UtteranceScore],
    target: Variable,
    adjusting: Variable,
    schema: &DemographicSchema,
    config: &AuditConfig,
) -> Result<ConfoundingVerdict> {
    config.validate()?;
    if target == adjusting {
        return Err(Error::InvalidConfig(format!("cannot adjust {target} by itself")));
    }
    let required = [target, adjusting];
    let uni_spec = ModelSpec::new(&[target], config, schema)?;
    let uni_design = build_design_on(manifest, scores, &uni_spec, schema, &required)?;
    let uni = fit_converged(&uni_design, config)?;
    let univariate_effects = effects_for(&uni, uni_design.block(target).expect("target block"), config)?;

    let adjusting_levels = observed_levels(manifest, scores, adjusting, &required)?;
    if adjusting_levels.len() < 2 {
        // The multivariate model collapses onto the univariate one.
        return Ok(ConfoundingVerdict {
            target_variable: target,
            adjusting_variable: adjusting,
            n_obs: uni.n_obs,
            univariate_log_likelihood: uni.log_likelihood,
            multivariate_log_likelihood: uni.log_likelihood,
            llr: llr_test(uni.log_likelihood, uni.log_likelihood, 0, config.alpha)?,
            adjusted_effects: univariate_effects.clone(),
            or_shifts: univariate_effects.iter().map(|e| (e.level.clone(), 0.0)).collect(),
            univariate_effects,
            flipped_levels: Vec::new(),
            verdict: Verdict::NoAddedInformation,
        });
    }

    let multi_spec = ModelSpec::new(&required, config, schema)?;
    let multi_design = build_design_on(manifest, scores, &multi_spec, schema, &required)?;
    debug_assert_eq!(multi_design.row_ids, uni_design.row_ids);
    let multi = fit_converged(&multi_design, config)?;
    let adjusted_effects = effects_for(&multi, multi_design.block(target).expect("target block"), config)?;

    let llr = llr_test(
        uni.log_likelihood,
        multi.log_likelihood,
        multi.n_params() - uni.n_params(),
        config.alpha,
    )?;
    let mut flipped_levels = Vec::new();
    let mut or_shifts = BTreeMap::new();
    for (u, m) in univariate_effects.iter().zip(&adjusted_effects) {
        debug_assert_eq!(u.level, m.level);
        if u.significant != m.significant {
            flipped_levels.push(u.level.clone());
        }
        or_shifts.insert(u.level.clone(), (m.or_value - u.or_value) / u.or_value);
    }
    let max_shift = or_shifts.values().fold(0.0f64, |acc, s| acc.max(s.abs()));
    let verdict = Verdict::classify(llr.significant, !flipped_levels.is_empty(), max_shift, config.or_shift_threshold);
    Ok(ConfoundingVerdict {
        target_variable: target,
        adjusting_variable: adjusting,
        n_obs: uni.n_obs,
        univariate_log_likelihood: uni.log_likelihood,
        multivariate_log_likelihood: multi.log_likelihood,
        llr,
        univariate_effects,
        adjusted_effects,
        flipped_levels,
        or_shifts,
        verdict,
    })
}

/// Runs [`adjustment_test`] for every ordered pair of distinct variables.
///
/// Each pair is analysed on the rows tagged for both of its variables, so
/// pairs involving a sparsely tagged variable use that subset only.
pub fn full_adjustment_matrix(
    manifest: &DatasetManifest,
    scores: &[UtteranceScore],
    variables: &[Variable],
    schema: &DemographicSchema,
    config: &AuditConfig,
) -> Result<Vec<ConfoundingVerdict>> {
    if variables.len() < 2 {
        return Err(Error::InvalidConfig("the adjustment matrix needs at least two variables".into()));
    }
    if variables.iter().collect::<BTreeSet<_>>().len() != variables.len() {
        return Err(Error::InvalidConfig("variables must be distinct".into()));
    }
    let mut out = Vec::with_capacity(variables.len() * (variables.len() - 1));
    for &target in variables {
        for &adjusting in variables {
            if target != adjusting {
                out.push(adjustment_test(manifest, scores, target, adjusting, schema, config)?);
            }
        }
    }
    Ok(out)
}
