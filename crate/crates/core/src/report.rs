//! Markdown and JSON audit reports, and per-speaker CSV exports for
//! drawing box plots.
//!
//! Every number printed in the markdown body also occurs verbatim in the
//! JSON form of the same [`AuditReport`].

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::bias_tests::{EffectEstimate, TestRecord, TestType};
use crate::data_model::{AuditConfig, DemographicSchema, Variable};
use crate::error::{Error, Result};
use crate::ingestion::DatasetManifest;
use crate::metrics::{pair_scores, UtteranceScore};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelCount {
    pub level: String,
    pub records: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariableSummary {
    pub variable: Variable,
    pub levels: Vec<LevelCount>,
    /// Records without a tag for this variable.
    pub missing: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub n_records: usize,
    pub n_speakers: usize,
    pub per_split: BTreeMap<String, usize>,
    pub per_variable: Vec<VariableSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntentSummary {
    pub intent: String,
    pub n_utterances: usize,
    pub emr: f64,
    pub emr_display: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub n_utterances: usize,
    pub emr: f64,
    pub emr_display: String,
    pub wer: Option<f64>,
    pub wer_display: Option<String>,
    /// Utterances that carry word error counts.
    pub n_wer_utterances: usize,
    pub per_intent: Vec<IntentSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub tool_version: String,
    pub config_echo: AuditConfig,
    pub dataset_summary: DatasetSummary,
    pub metric_summary: MetricSummary,
    /// Single-variable tests: logit audits, contingency tests, ANOVA.
    pub univariate_results: Vec<TestRecord>,
    /// Likelihood-ratio adjustment tests with their verdicts.
    pub adjustment_matrix: Vec<TestRecord>,
}

fn rate(x: f64) -> String {
    format!("{x:.4}")
}

fn summarize_dataset(manifest: &DatasetManifest, schema: &DemographicSchema) -> DatasetSummary {
    let mut per_split = BTreeMap::new();
    let mut speakers = std::collections::BTreeSet::new();
    for r in &manifest.records {
        *per_split.entry(r.split.to_string()).or_insert(0) += 1;
        speakers.insert(r.speaker_id.as_str());
    }
    let per_variable = schema
        .variables()
        .map(|var| {
            let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
            let mut missing = 0;
            for r in &manifest.records {
                match r.tags.get(var) {
                    Some(l) => *counts.entry(l).or_insert(0) += 1,
                    None => missing += 1,
                }
            }
            let order = &schema.variables[&var];
            let mut levels: Vec<LevelCount> = counts
                .into_iter()
                .map(|(level, records)| LevelCount { level: level.to_string(), records })
                .collect();
            levels.sort_by_key(|c| order.index_of(&c.level).unwrap_or(usize::MAX));
            VariableSummary { variable: var, levels, missing }
        })
        .collect();
    DatasetSummary {
        n_records: manifest.len(),
        n_speakers: speakers.len(),
        per_split,
        per_variable,
    }
}

fn summarize_metrics(manifest: &DatasetManifest, scores: &[UtteranceScore]) -> Result<MetricSummary> {
    let pairs = pair_scores(manifest, scores)?;
    if pairs.is_empty() {
        return Err(Error::EmptyDesign);
    }
    let n = pairs.len();
    let em: usize = pairs.iter().map(|(_, s)| usize::from(s.em)).sum();
    let (mut errors, mut words, mut n_wer) = (0usize, 0usize, 0usize);
    let mut intents: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for (r, s) in &pairs {
        if let (Some(e), Some(w)) = (s.wer_errors, s.ref_word_count) {
            errors += e;
            words += w;
            n_wer += 1;
        }
        let entry = intents.entry(r.reference_parse.intent.as_str()).or_default();
        entry.0 += 1;
        entry.1 += usize::from(s.em);
    }
    let emr = em as f64 / n as f64;
    let wer = (words > 0).then(|| errors as f64 / words as f64);
    Ok(MetricSummary {
        n_utterances: n,
        emr,
        emr_display: rate(emr),
        wer,
        wer_display: wer.map(rate),
        n_wer_utterances: n_wer,
        per_intent: intents
            .into_iter()
            .map(|(intent, (n, em))| {
                let emr = em as f64 / n as f64;
                IntentSummary { intent: intent.to_string(), n_utterances: n, emr, emr_display: rate(emr) }
            })
            .collect(),
    })
}

impl AuditReport {
    /// Collects summaries of the scored dataset and the given test records.
    pub fn assemble(
        manifest: &DatasetManifest,
        scores: &[UtteranceScore],
        results: &[TestRecord],
        config: &AuditConfig,
        schema: &DemographicSchema,
    ) -> Result<Self> {
        let (adjustment_matrix, univariate_results): (Vec<TestRecord>, Vec<TestRecord>) = results
            .iter()
            .cloned()
            .partition(|r| r.test_type == TestType::LlrAdjustment);
        Ok(AuditReport {
            tool_version: crate::TOOL_VERSION.to_string(),
            config_echo: config.clone(),
            dataset_summary: summarize_dataset(manifest, schema),
            metric_summary: summarize_metrics(manifest, scores)?,
            univariate_results,
            adjustment_matrix,
        })
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("reports serialize");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse { line: e.line(), message: e.to_string() })
    }
}

fn decision_word(e: &EffectEstimate) -> &'static str {
    if e.significant {
        "significant"
    } else {
        "not significant"
    }
}

fn effects_table(out: &mut String, effects: &[EffectEstimate]) {
    out.push_str("| level | OR | CI | p | decision |\n|---|---|---|---|---|\n");
    for e in effects {
        let _ = writeln!(
            out,
            "| {} | {} | [{}, {}] | {} | {} |",
            e.level,
            e.display.or,
            e.display.ci_low,
            e.display.ci_high,
            e.display.p,
            decision_word(e)
        );
    }
}

fn variables_label(r: &TestRecord) -> String {
    r.variables.iter().map(|v| v.name()).collect::<Vec<_>>().join(", ")
}

fn decision_label(r: &TestRecord) -> &'static str {
    match r.decision {
        crate::bias_tests::Decision::RejectNull => "reject the null hypothesis",
        crate::bias_tests::Decision::RetainNull => "retain the null hypothesis",
    }
}

fn render_univariate(out: &mut String, r: &TestRecord) {
    let _ = writeln!(out, "### {} ({})\n", variables_label(r), r.test_type.as_str());
    let df = match r.df_denominator {
        Some(d2) => format!("df ({}, {})", r.df, d2),
        None => format!("df {}", r.df),
    };
    let critical = match &r.display.critical_value {
        Some(c) => format!(", critical value {c}"),
        None => String::new(),
    };
    let _ = writeln!(
        out,
        "n = {}. Statistic {} on {}{}, p = {}: {}.\n",
        r.n_obs,
        r.display.statistic,
        df,
        critical,
        r.display.p_value,
        decision_label(r)
    );
    if !r.effects.is_empty() {
        let _ = writeln!(out, "Reference level: {}.\n", r.effects[0].reference);
        effects_table(out, &r.effects);
        out.push('\n');
    }
}

fn render_explanation(out: &mut String, r: &TestRecord, config: &AuditConfig) {
    let Some(v) = &r.verdict else { return };
    let _ = writeln!(out, "### {} adjusted by {}: {}\n", v.target, v.adjusting, v.verdict.as_str());
    if r.df == 0 {
        let _ = writeln!(
            out,
            "Only one level of {} is observed on the shared rows, so the adjusted model adds no parameters.\n",
            v.adjusting
        );
        return;
    }
    let improved = r.decision == crate::bias_tests::Decision::RejectNull;
    let comparison = if improved {
        "exceeds"
    } else {
        "does not exceed"
    };
    let _ = writeln!(
        out,
        "The likelihood-ratio statistic {} {} the critical value {} (df {}, alpha {}); p = {}.",
        r.display.statistic,
        comparison,
        r.display.critical_value.as_deref().unwrap_or("-"),
        r.df,
        config.alpha,
        r.display.p_value
    );
    if !improved {
        let _ = writeln!(out, "Adding {} does not improve the model for {}.\n", v.adjusting, v.target);
    } else if !v.flipped_levels.is_empty() {
        let _ = writeln!(
            out,
            "The Wald conclusion at alpha {} changes for: {}.\n",
            config.alpha,
            v.flipped_levels.join(", ")
        );
    } else {
        let shifts: Vec<String> = v
            .or_shift_display
            .iter()
            .map(|(level, s)| format!("{level} {s}"))
            .collect();
        let _ = writeln!(
            out,
            "No Wald conclusion changes. Relative OR shifts: {}; cross-effect threshold {}.\n",
            shifts.join(", "),
            config.or_shift_threshold
        );
    }
    out.push_str("Univariate estimates:\n\n");
    effects_table(out, &r.effects);
    out.push_str("\nAdjusted estimates:\n\n");
    effects_table(out, &r.adjusted_effects);
    out.push('\n');
}

/// Renders the report as markdown. The first line is a comment carrying
/// the tool version; the rest depends on the report contents only.
pub fn render_markdown(report: &AuditReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "<!-- slu-audit {} -->", report.tool_version);
    out.push_str("# Bias audit report\n\n## Dataset\n\n");
    let ds = &report.dataset_summary;
    let _ = writeln!(out, "Records: {}. Speakers: {}.\n", ds.n_records, ds.n_speakers);
    out.push_str("| split | records |\n|---|---|\n");
    for (split, n) in &ds.per_split {
        let _ = writeln!(out, "| {split} | {n} |");
    }
    out.push('\n');
    for v in &ds.per_variable {
        let _ = writeln!(out, "### {}\n\n| level | records |\n|---|---|", v.variable);
        for c in &v.levels {
            let _ = writeln!(out, "| {} | {} |", c.level, c.records);
        }
        if v.missing > 0 {
            let _ = writeln!(out, "| (untagged) | {} |", v.missing);
        }
        out.push('\n');
    }

    out.push_str("## Metrics\n\n");
    let m = &report.metric_summary;
    let _ = writeln!(out, "Exact match ratio: {} over {} utterances.", m.emr_display, m.n_utterances);
    match &m.wer_display {
        Some(w) => {
            let _ = writeln!(out, "Word error rate: {} over {} utterances.\n", w, m.n_wer_utterances);
        }
        None => out.push_str("Word error rate: unavailable (no hypothesis transcripts).\n\n"),
    }
    out.push_str("| intent | utterances | EMR |\n|---|---|---|\n");
    for i in &m.per_intent {
        let _ = writeln!(out, "| {} | {} | {} |", i.intent, i.n_utterances, i.emr_display);
    }
    out.push('\n');

    out.push_str("## Univariate tests\n\n");
    if report.univariate_results.is_empty() {
        out.push_str("No univariate tests.\n\n");
    }
    for r in &report.univariate_results {
        render_univariate(&mut out, r);
    }

    out.push_str("## Adjustment matrix\n\n");
    if report.adjustment_matrix.is_empty() {
        out.push_str("no pairs analyzed\n");
        return out;
    }
    out.push_str("| target | adjusted by | n | statistic | df | critical value | p | verdict |\n");
    out.push_str("|---|---|---|---|---|---|---|---|\n");
    for r in &report.adjustment_matrix {
        let Some(v) = &r.verdict else { continue };
        let _ = writeln!(
            out,
            "| {} | {} | {} | {} | {} | {} | {} | {} |",
            v.target,
            v.adjusting,
            r.n_obs,
            r.display.statistic,
            r.df,
            r.display.critical_value.as_deref().unwrap_or("-"),
            r.display.p_value,
            v.verdict.as_str()
        );
    }
    out.push_str("\n## Verdict explanations\n\n");
    for r in &report.adjustment_matrix {
        render_explanation(&mut out, r, &report.config_echo);
    }
    while out.ends_with("\n\n") {
        out.pop();
    }
    out
}

/// One CSV per variable with a row per (level, speaker):
/// `level,speaker_id,speaker_emr,speaker_wer,n_utterances`.
///
/// `speaker_wer` is empty for speakers without word error counts.
pub fn export_boxplot_data(
    scores: &[UtteranceScore],
    manifest: &DatasetManifest,
    variables: &[Variable],
    schema: &DemographicSchema,
) -> Result<Vec<(Variable, String)>> {
    let pairs = pair_scores(manifest, scores)?;
    let mut out = Vec::with_capacity(variables.len());
    for &var in variables {
        let order = schema.levels(var)?;
        // (level rank, level, speaker) -> (n, em, errors, words)
        let mut cells: BTreeMap<(usize, &str, &str), (usize, usize, usize, usize)> = BTreeMap::new();
        for (r, s) in &pairs {
            let Some(level) = r.tags.get(var) else { continue };
            let rank = order.index_of(level).unwrap_or(usize::MAX);
            let e = cells.entry((rank, level, r.speaker_id.as_str())).or_default();
            e.0 += 1;
            e.1 += usize::from(s.em);
            if let (Some(err), Some(w)) = (s.wer_errors, s.ref_word_count) {
                e.2 += err;
                e.3 += w;
            }
        }
        let mut w = csv::Writer::from_writer(Vec::new());
        let csv_err = |e: csv::Error| Error::Parse { line: 0, message: e.to_string() };
        w.write_record(["level", "speaker_id", "speaker_emr", "speaker_wer", "n_utterances"])
            .map_err(csv_err)?;
        for ((_, level, speaker), (n, em, errors, words)) in cells {
            let emr = (em as f64 / n as f64).to_string();
            let wer = if words > 0 { (errors as f64 / words as f64).to_string() } else { String::new() };
            w.write_record([level, speaker, emr.as_str(), wer.as_str(), n.to_string().as_str()])
                .map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Parse { line: 0, message: e.to_string() })?;
        out.push((var, String::from_utf8(bytes).expect("csv output is utf-8")));
    }
    Ok(out)
}
