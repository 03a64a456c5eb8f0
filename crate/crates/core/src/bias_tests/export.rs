//! Machine-readable test results.
//!
//! Every number that the markdown report prints is carried here as a
//! preformatted string, so the JSON export is the single source for both.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AnovaResult, ConfoundingVerdict, ContingencyResult, EffectEstimate, UnivariateAudit, Verdict};
use crate::data_model::{AuditConfig, Variable};
use crate::error::{Error, Result};
use crate::specfun::{format_p, TailProbability};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EffectDisplay {
    pub or: String,
    pub ci_low: String,
    pub ci_high: String,
    pub p: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestType {
    UnivariateLogit,
    LlrAdjustment,
    Chi2Contingency,
    OneWayAnova,
}

impl TestType {
    pub fn as_str(self) -> &'static str {
        match self {
            TestType::UnivariateLogit => "univariate_logit",
            TestType::LlrAdjustment => "llr_adjustment",
            TestType::Chi2Contingency => "chi2_contingency",
            TestType::OneWayAnova => "one_way_anova",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    RejectNull,
    RetainNull,
}

impl Decision {
    fn from_bool(reject: bool) -> Self {
        if reject {
            Decision::RejectNull
        } else {
            Decision::RetainNull
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordDisplay {
    pub statistic: String,
    pub p_value: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub critical_value: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictDetail {
    pub verdict: Verdict,
    pub target: Variable,
    pub adjusting: Variable,
    pub flipped_levels: Vec<String>,
    pub or_shifts: BTreeMap<String, f64>,
    pub or_shift_display: BTreeMap<String, String>,
}

/// One row of the test-result export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestRecord {
    pub test_type: TestType,
    pub variables: Vec<Variable>,
    pub n_obs: usize,
    #[serde(with = "nonfinite")]
    pub statistic: f64,
    pub df: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub df_denominator: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub critical_value: Option<f64>,
    pub p_value: TailProbability,
    pub alpha: f64,
    pub decision: Decision,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub effects: Vec<EffectEstimate>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub adjusted_effects: Vec<EffectEstimate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verdict: Option<VerdictDetail>,
    pub display: RecordDisplay,
}

fn fmt_stat(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.2}")
    } else {
        "inf".to_string()
    }
}

impl TestRecord {
    /// Univariate logit: statistic and decision come from the global
    /// likelihood-ratio test against the intercept-only model.
    pub fn from_univariate(a: &UnivariateAudit, alpha: f64) -> Self {
        TestRecord {
            test_type: TestType::UnivariateLogit,
            variables: vec![a.variable],
            n_obs: a.n_obs,
            statistic: a.global_test.statistic,
            df: a.global_test.df,
            df_denominator: None,
            critical_value: Some(a.global_test.critical_value),
            p_value: a.global_test.p_value,
            alpha,
            decision: Decision::from_bool(a.global_test.significant),
            effects: a.effects.clone(),
            adjusted_effects: Vec::new(),
            verdict: None,
            display: RecordDisplay {
                statistic: fmt_stat(a.global_test.statistic),
                p_value: a.global_test.p_value.display(),
                critical_value: Some(fmt_stat(a.global_test.critical_value)),
            },
        }
    }

    pub fn from_adjustment(v: &ConfoundingVerdict, alpha: f64) -> Self {
        TestRecord {
            test_type: TestType::LlrAdjustment,
            variables: vec![v.target_variable, v.adjusting_variable],
            n_obs: v.n_obs,
            statistic: v.llr.statistic,
            df: v.llr.df,
            df_denominator: None,
            critical_value: Some(v.llr.critical_value),
            p_value: v.llr.p_value,
            alpha,
            decision: Decision::from_bool(v.llr.significant),
            effects: v.univariate_effects.clone(),
            adjusted_effects: v.adjusted_effects.clone(),
            verdict: Some(VerdictDetail {
                verdict: v.verdict,
                target: v.target_variable,
                adjusting: v.adjusting_variable,
                flipped_levels: v.flipped_levels.clone(),
                or_shifts: v.or_shifts.clone(),
                or_shift_display: v
                    .or_shifts
                    .iter()
                    .map(|(k, s)| (k.clone(), format!("{:+.2}%", 100.0 * s)))
                    .collect(),
            }),
            display: RecordDisplay {
                statistic: fmt_stat(v.llr.statistic),
                p_value: v.llr.p_value.display(),
                critical_value: Some(fmt_stat(v.llr.critical_value)),
            },
        }
    }

    pub fn from_contingency(c: &ContingencyResult, alpha: f64) -> Self {
        TestRecord {
            test_type: TestType::Chi2Contingency,
            variables: vec![c.variable],
            n_obs: c.n_obs,
            statistic: c.statistic,
            df: c.df,
            df_denominator: None,
            critical_value: None,
            p_value: c.p_value,
            alpha,
            decision: Decision::from_bool(c.p_value.value() < alpha),
            effects: Vec::new(),
            adjusted_effects: Vec::new(),
            verdict: None,
            display: RecordDisplay {
                statistic: fmt_stat(c.statistic),
                p_value: c.p_value.display(),
                critical_value: None,
            },
        }
    }

    pub fn from_anova(a: &AnovaResult, alpha: f64) -> Self {
        TestRecord {
            test_type: TestType::OneWayAnova,
            variables: vec![a.variable],
            n_obs: a.n_obs,
            statistic: a.f_statistic,
            df: a.df_between,
            df_denominator: Some(a.df_within),
            critical_value: None,
            p_value: a.p_value,
            alpha,
            decision: Decision::from_bool(a.p_value.value() < alpha),
            effects: Vec::new(),
            adjusted_effects: Vec::new(),
            verdict: None,
            display: RecordDisplay {
                statistic: fmt_stat(a.f_statistic),
                p_value: format_p(a.p_value.value()),
                critical_value: None,
            },
        }
    }
}

/// Envelope written by the `audit`, `adjust` and `matrix` commands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsFile {
    pub tool_version: String,
    pub config: AuditConfig,
    pub results: Vec<TestRecord>,
}

impl ResultsFile {
    pub fn new(config: &AuditConfig, results: Vec<TestRecord>) -> Self {
        ResultsFile {
            tool_version: crate::TOOL_VERSION.to_string(),
            config: config.clone(),
            results,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("results serialize");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse { line: e.line(), message: e.to_string() })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// JSON has no infinities; they travel as the strings "inf" / "-inf".
pub(crate) mod nonfinite {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
        if x.is_finite() {
            s.serialize_f64(*x)
        } else if x.is_nan() {
            s.serialize_str("nan")
        } else if *x > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(x) => Ok(x),
            Repr::Text(t) => match t.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(serde::de::Error::custom(format!("not a number: {other:?}"))),
            },
        }
    }
}
