//! Manifest loading, hypothesis joins and synthetic cohorts.
//!
//! Manifests are line-delimited JSON, one [`UtteranceRecord`] per line.
//! Blank lines are ignored.

mod synthetic;

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use synthetic::{generate_synthetic, Cell, SyntheticRng, SyntheticSpec};

use crate::data_model::{
    validate_record_with, DemographicSchema, LocatedViolation, Parse, UtteranceRecord, Violation,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    pub records: Vec<UtteranceRecord>,
    pub schema_version: String,
    pub source_descriptor: String,
}

impl DatasetManifest {
    pub fn new(records: Vec<UtteranceRecord>, schema_version: impl Into<String>, source: impl Into<String>) -> Self {
        DatasetManifest {
            records,
            schema_version: schema_version.into(),
            source_descriptor: source.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Serializes the records as line-delimited JSON.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("records serialize"));
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_jsonl().as_bytes()).map_err(|e| Error::io(path, e))
    }

    /// Re-runs record validation on an in-memory manifest.
    pub fn validate(&self, schema: &DemographicSchema, require_response: bool) -> Result<()> {
        let violations: Vec<_> = self
            .records
            .iter()
            .enumerate()
            .flat_map(|(i, r)| {
                validate_record_with(r, schema, require_response)
                    .into_iter()
                    .map(move |v| LocatedViolation {
                        line: i + 1,
                        utterance_id: Some(r.utterance_id.clone()),
                        violation: v,
                    })
            })
            .collect();
        if violations.is_empty() {
            Ok(())
        } else {
            Err(Error::SchemaViolation(violations))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LoadOptions {
    /// Enforce the response-source rule (needs `hypothesis_parse` or `em_override`).
    pub require_response: bool,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions { require_response: true }
    }
}

/// Everything found wrong with a manifest file, without failing early on
/// record-level problems.
#[derive(Debug, Clone, Default, Serialize)]
pub struct ValidationReport {
    pub n_records: usize,
    pub duplicate_ids: Vec<String>,
    pub violations: Vec<LocatedViolation>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.duplicate_ids.is_empty() && self.violations.is_empty()
    }
}

/// Parses a manifest text into records plus every violation found.
///
/// Malformed JSON aborts with the offending line number; structural problems
/// (missing or mistyped fields) are collected as violations.
pub fn check_manifest_text(
    text: &str,
    schema: &DemographicSchema,
    opts: LoadOptions,
) -> Result<(Vec<UtteranceRecord>, ValidationReport)> {
    let mut records = Vec::new();
    let mut report = ValidationReport::default();
    let mut seen = HashSet::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(line)
            .map_err(|e| Error::Parse { line: line_no, message: e.to_string() })?;
        let id_hint = value
            .get("utterance_id")
            .and_then(|v| v.as_str())
            .map(str::to_string);
        let record: UtteranceRecord = match serde_json::from_value(value) {
            Ok(r) => r,
            Err(e) => {
                report.violations.push(LocatedViolation {
                    line: line_no,
                    utterance_id: id_hint,
                    violation: Violation { field: "record".into(), rule: e.to_string() },
                });
                continue;
            }
        };
        if !seen.insert(record.utterance_id.clone()) {
            report.duplicate_ids.push(record.utterance_id.clone());
        }
        for v in validate_record_with(&record, schema, opts.require_response) {
            report.violations.push(LocatedViolation {
                line: line_no,
                utterance_id: Some(record.utterance_id.clone()),
                violation: v,
            });
        }
        records.push(record);
    }
    report.n_records = records.len();
    Ok((records, report))
}

pub fn load_manifest(path: &Path, schema: &DemographicSchema) -> Result<DatasetManifest> {
    load_manifest_with(path, schema, LoadOptions::default())
}

pub fn load_manifest_with(
    path: &Path,
    schema: &DemographicSchema,
    opts: LoadOptions,
) -> Result<DatasetManifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let (records, report) = check_manifest_text(&text, schema, opts)?;
    if let Some(id) = report.duplicate_ids.into_iter().next() {
        return Err(Error::DuplicateId(id));
    }
    if !report.violations.is_empty() {
        return Err(Error::SchemaViolation(report.violations));
    }
    Ok(DatasetManifest::new(
        records,
        schema.schema_version.clone(),
        path.display().to_string(),
    ))
}

/// System output for one utterance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Hypothesis {
    pub utterance_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hypothesis_transcript: Option<String>,
    pub hypothesis_parse: Parse,
}

/// Reads a hypothesis file (line-delimited JSON of [`Hypothesis`]).
pub fn load_hypotheses(path: &Path) -> Result<BTreeMap<String, Hypothesis>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = BTreeMap::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let h: Hypothesis = serde_json::from_str(line)
            .map_err(|e| Error::Parse { line: idx + 1, message: e.to_string() })?;
        if out.contains_key(&h.utterance_id) {
            return Err(Error::DuplicateId(h.utterance_id));
        }
        out.insert(h.utterance_id.clone(), h);
    }
    Ok(out)
}

/// Copies hypothesis fields onto the matching records.
///
/// Fails without modifying anything if a hypothesis names an id that is not
/// in the manifest.
pub fn join_hypotheses(
    manifest: &DatasetManifest,
    hypotheses: &BTreeMap<String, Hypothesis>,
) -> Result<DatasetManifest> {
    let known: HashSet<&str> = manifest.records.iter().map(|r| r.utterance_id.as_str()).collect();
    let orphans: Vec<String> = hypotheses
        .keys()
        .filter(|k| !known.contains(k.as_str()))
        .cloned()
        .collect();
    if !orphans.is_empty() {
        return Err(Error::UnknownIds(orphans));
    }
    let mut joined = manifest.clone();
    for record in &mut joined.records {
        if let Some(h) = hypotheses.get(&record.utterance_id) {
            record.hypothesis_parse = Some(h.hypothesis_parse.clone());
            if h.hypothesis_transcript.is_some() {
                record.hypothesis_transcript = h.hypothesis_transcript.clone();
            }
        }
    }
    Ok(joined)
}
