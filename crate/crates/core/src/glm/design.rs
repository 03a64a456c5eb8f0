use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::data_model::{AuditConfig, DemographicSchema, Variable};
use crate::error::{Error, Result};
use crate::ingestion::DatasetManifest;
use crate::metrics::{pair_scores, UtteranceScore};

/// The binary outcome being modelled.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Response {
    #[default]
    ExactMatch,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub response: Response,
    pub covariates: Vec<Variable>,
    pub reference_levels: BTreeMap<Variable, String>,
}

impl ModelSpec {
    /// Resolves reference levels from the config (falling back to the schema).
    pub fn new(covariates: &[Variable], config: &AuditConfig, schema: &DemographicSchema) -> Result<Self> {
        let reference_levels = covariates
            .iter()
            .map(|&v| Ok((v, config.reference_for(v, schema)?)))
            .collect::<Result<_>>()?;
        let spec = ModelSpec {
            response: Response::ExactMatch,
            covariates: covariates.to_vec(),
            reference_levels,
        };
        spec.validate(schema)?;
        Ok(spec)
    }

    pub fn validate(&self, schema: &DemographicSchema) -> Result<()> {
        if self.covariates.is_empty() {
            return Err(Error::InvalidConfig("a model needs at least one covariate".into()));
        }
        let distinct: BTreeSet<_> = self.covariates.iter().collect();
        if distinct.len() != self.covariates.len() {
            return Err(Error::InvalidConfig("covariates must be distinct".into()));
        }
        for &v in &self.covariates {
            let levels = schema.levels(v)?;
            let reference = self
                .reference_levels
                .get(&v)
                .ok_or_else(|| Error::InvalidConfig(format!("no reference level for {v}")))?;
            if levels.index_of(reference).is_none() {
                return Err(Error::InvalidConfig(format!(
                    "reference level {reference:?} is not a level of {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Columns belonging to one categorical covariate.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariableBlock {
    pub variable: Variable,
    pub reference: String,
    /// Non-reference levels, one column each, in schema order.
    pub levels: Vec<String>,
    pub first_column: usize,
}

impl VariableBlock {
    pub fn column_of(&self, level: &str) -> Option<usize> {
        self.levels
            .iter()
            .position(|l| l == level)
            .map(|i| self.first_column + i)
    }
}

/// Intercept plus reference-coded indicator columns, with the binary
/// response.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    pub column_labels: Vec<String>,
    /// Row-major values, `n_rows * n_cols`.
    pub values: Vec<f64>,
    pub response: Vec<f64>,
    pub row_ids: Vec<String>,
    pub blocks: Vec<VariableBlock>,
    /// Records dropped because a required tag was missing.
    pub excluded: usize,
}

impl DesignMatrix {
    /// Builds a design from raw rows. The first column must be the intercept.
    pub fn from_rows(column_labels: Vec<String>, rows: &[Vec<f64>], response: Vec<f64>) -> Result<Self> {
        let k = column_labels.len();
        if rows.is_empty() {
            return Err(Error::EmptyDesign);
        }
        if rows.len() != response.len() {
            return Err(Error::DimensionMismatch { expected: rows.len(), actual: response.len() });
        }
        let mut values = Vec::with_capacity(rows.len() * k);
        for row in rows {
            if row.len() != k {
                return Err(Error::DimensionMismatch { expected: k, actual: row.len() });
            }
            values.extend_from_slice(row);
        }
        Ok(DesignMatrix {
            column_labels,
            values,
            row_ids: (0..rows.len()).map(|i| i.to_string()).collect(),
            response,
            blocks: Vec::new(),
            excluded: 0,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.response.len()
    }

    pub fn n_cols(&self) -> usize {
        self.column_labels.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let k = self.n_cols();
        &self.values[i * k..(i + 1) * k]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.n_cols())
    }

    pub fn block(&self, var: Variable) -> Option<&VariableBlock> {
        self.blocks.iter().find(|b| b.variable == var)
    }
}

/// Reference-coded design for `spec` over every record tagged for all of
/// its covariates.
pub fn build_design(
    manifest: &DatasetManifest,
    scores: &[UtteranceScore],
    spec: &ModelSpec,
    schema: &DemographicSchema,
) -> Result<DesignMatrix> {
    build_design_on(manifest, scores, spec, schema, &spec.covariates)
}

/// Like [`build_design`], but rows are kept only if tagged for every
/// variable in `required` (a superset of the covariates), so that nested
/// models can share the same rows.
pub fn build_design_on(
    manifest: &DatasetManifest,
    scores: &[UtteranceScore],
    spec: &ModelSpec,
    schema: &DemographicSchema,
    required: &[Variable],
) -> Result<DesignMatrix> {
    spec.validate(schema)?;
    let pairs = pair_scores(manifest, scores)?;
    let kept: Vec<_> = pairs
        .iter()
        .filter(|(r, _)| {
            spec.covariates
                .iter()
                .chain(required)
                .all(|&v| r.tags.get(v).is_some())
        })
        .collect();
    let excluded = pairs.len() - kept.len();
    if kept.is_empty() {
        return Err(Error::EmptyDesign);
    }

    let mut labels = vec!["intercept".to_string()];
    let mut blocks = Vec::new();
    for &var in &spec.covariates {
        let schema_levels = schema.levels(var)?;
        let observed: BTreeSet<&str> = kept
            .iter()
            .filter_map(|(r, _)| r.tags.get(var))
            .collect();
        if observed.len() < 2 {
            return Err(Error::SingleLevel { variable: var.to_string(), observed: observed.len() });
        }
        let reference = &spec.reference_levels[&var];
        if !observed.contains(reference.as_str()) {
            return Err(Error::ReferenceNotObserved { variable: var.to_string(), level: reference.clone() });
        }
        let levels: Vec<String> = schema_levels
            .levels
            .iter()
            .filter(|l| *l != reference && observed.contains(l.as_str()))
            .cloned()
            .collect();
        let block = VariableBlock {
            variable: var,
            reference: reference.clone(),
            levels,
            first_column: labels.len(),
        };
        labels.extend(block.levels.iter().map(|l| format!("{var}={l}")));
        blocks.push(block);
    }

    let k = labels.len();
    let mut values = vec![0.0; kept.len() * k];
    let mut response = Vec::with_capacity(kept.len());
    let mut row_ids = Vec::with_capacity(kept.len());
    for (i, (record, score)) in kept.iter().enumerate() {
        let row = &mut values[i * k..(i + 1) * k];
        row[0] = 1.0;
        for block in &blocks {
            let level = record.tags.get(block.variable).expect("filtered above");
            if let Some(c) = block.column_of(level) {
                row[c] = 1.0;
            }
        }
        response.push(f64::from(score.em));
        row_ids.push(record.utterance_id.clone());
    }
    Ok(DesignMatrix { column_labels: labels, values, response, row_ids, blocks, excluded })
}
