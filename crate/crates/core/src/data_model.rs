//! Domain types shared by every stage of an audit: utterance records, parses,
//! the demographic taxonomy and the audit configuration.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const DEFAULT_SCHEMA: &str = include_str!("../schema/default_schema.json");

/// A demographic dimension that can be used as a covariate.
///
/// The declaration order is the canonical order used when several variables
/// are listed together (schema files, reports, cell keys).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variable {
    Gender,
    AgeRange,
    DialectalRegion,
    Ethnicity,
}

impl Variable {
    pub const ALL: [Variable; 4] = [
        Variable::Gender,
        Variable::AgeRange,
        Variable::DialectalRegion,
        Variable::Ethnicity,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variable::Gender => "gender",
            Variable::AgeRange => "age_range",
            Variable::DialectalRegion => "dialectal_region",
            Variable::Ethnicity => "ethnicity",
        }
    }
}

impl fmt::Display for Variable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variable {
    type Err = Error;

    /// Accepts the canonical field names plus the short forms `age` and `dialect`.
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "gender" => Ok(Variable::Gender),
            "age" | "age_range" => Ok(Variable::AgeRange),
            "dialect" | "dialectal_region" => Ok(Variable::DialectalRegion),
            "ethnicity" => Ok(Variable::Ethnicity),
            other => Err(Error::InvalidConfig(format!("unknown variable {other:?}"))),
        }
    }
}

/// Ordered level set of one variable together with its default reference level.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariableLevels {
    pub levels: Vec<String>,
    pub reference: String,
}

impl VariableLevels {
    pub fn index_of(&self, level: &str) -> Option<usize> {
        self.levels.iter().position(|l| l == level)
    }
}

/// Closed demographic taxonomy, loaded from a JSON schema file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemographicSchema {
    pub schema_version: String,
    pub variables: BTreeMap<Variable, VariableLevels>,
}

impl Default for DemographicSchema {
    fn default() -> Self {
        Self::from_json(DEFAULT_SCHEMA).expect("bundled schema is valid")
    }
}

impl DemographicSchema {
    pub fn from_json(text: &str) -> Result<Self> {
        let schema: DemographicSchema = serde_json::from_str(text)
            .map_err(|e| Error::InvalidSchema(e.to_string()))?;
        schema.check()?;
        Ok(schema)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    fn check(&self) -> Result<()> {
        for (var, levels) in &self.variables {
            if levels.levels.is_empty() {
                return Err(Error::InvalidSchema(format!("{var} has no levels")));
            }
            for (i, level) in levels.levels.iter().enumerate() {
                if level.is_empty() {
                    return Err(Error::InvalidSchema(format!("{var} has an empty level name")));
                }
                if levels.levels[..i].contains(level) {
                    return Err(Error::InvalidSchema(format!("{var} lists {level:?} twice")));
                }
            }
            if levels.index_of(&levels.reference).is_none() {
                return Err(Error::InvalidSchema(format!(
                    "reference {:?} of {var} is not one of its levels",
                    levels.reference
                )));
            }
        }
        Ok(())
    }

    pub fn levels(&self, var: Variable) -> Result<&VariableLevels> {
        self.variables
            .get(&var)
            .ok_or_else(|| Error::InvalidConfig(format!("variable {var} is not declared in the schema")))
    }

    pub fn variables(&self) -> impl Iterator<Item = Variable> + '_ {
        self.variables.keys().copied()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Slot {
    pub name: String,
    pub value: String,
}

impl Slot {
    pub fn new(name: impl Into<String>, value: impl Into<String>) -> Self {
        Slot { name: name.into(), value: value.into() }
    }

    fn folded(&self) -> (String, String) {
        (self.name.to_lowercase(), self.value.to_lowercase())
    }
}

/// Intent plus an unordered multiset of slots.
///
/// Equality is case-folded on every string and ignores slot order.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Parse {
    pub intent: String,
    #[serde(default)]
    pub slots: Vec<Slot>,
}

impl Parse {
    pub fn new(intent: impl Into<String>, slots: Vec<Slot>) -> Self {
        Parse { intent: intent.into(), slots }
    }

    /// Case-folded intent and sorted case-folded slots.
    pub fn canonical(&self) -> (String, Vec<(String, String)>) {
        let mut slots: Vec<_> = self.slots.iter().map(Slot::folded).collect();
        slots.sort_unstable();
        (self.intent.to_lowercase(), slots)
    }
}

impl PartialEq for Parse {
    fn eq(&self, other: &Self) -> bool {
        self.slots.len() == other.slots.len() && self.canonical() == other.canonical()
    }
}

impl Eq for Parse {}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemographicTags {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gender: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub age_range: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dialectal_region: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ethnicity: Option<String>,
}

impl DemographicTags {
    pub fn get(&self, var: Variable) -> Option<&str> {
        match var {
            Variable::Gender => self.gender.as_deref(),
            Variable::AgeRange => self.age_range.as_deref(),
            Variable::DialectalRegion => self.dialectal_region.as_deref(),
            Variable::Ethnicity => self.ethnicity.as_deref(),
        }
    }

    pub fn set(&mut self, var: Variable, level: Option<String>) {
        let slot = match var {
            Variable::Gender => &mut self.gender,
            Variable::AgeRange => &mut self.age_range,
            Variable::DialectalRegion => &mut self.dialectal_region,
            Variable::Ethnicity => &mut self.ethnicity,
        };
        *slot = level;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        })
    }
}

/// One utterance with its reference annotation, optional system output and
/// speaker tags.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UtteranceRecord {
    pub utterance_id: String,
    pub speaker_id: String,
    pub split: Split,
    pub reference_transcript: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hypothesis_transcript: Option<String>,
    pub reference_parse: Parse,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hypothesis_parse: Option<Parse>,
    #[serde(default)]
    pub tags: DemographicTags,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub em_override: Option<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub field: String,
    pub rule: String,
}

impl Violation {
    fn new(field: impl Into<String>, rule: impl Into<String>) -> Self {
        Violation { field: field.into(), rule: rule.into() }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.rule)
    }
}

/// A violation tied to its position in an input file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LocatedViolation {
    pub line: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub utterance_id: Option<String>,
    #[serde(flatten)]
    pub violation: Violation,
}

impl fmt::Display for LocatedViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.utterance_id {
            Some(id) => write!(f, "line {} ({id}): {}", self.line, self.violation),
            None => write!(f, "line {}: {}", self.line, self.violation),
        }
    }
}

/// Checks every record invariant and returns one entry per broken rule.
///
/// `require_response` controls the response-source rule: a record entering
/// an audit needs `hypothesis_parse` or `em_override`, but a reference-only
/// manifest awaiting a hypothesis join does not.
pub fn validate_record_with(
    record: &UtteranceRecord,
    schema: &DemographicSchema,
    require_response: bool,
) -> Vec<Violation> {
    let mut out = Vec::new();
    if record.utterance_id.is_empty() {
        out.push(Violation::new("utterance_id", "must be non-empty"));
    }
    if record.speaker_id.is_empty() {
        out.push(Violation::new("speaker_id", "must be non-empty"));
    }
    check_parse(&record.reference_parse, "reference_parse", &mut out);
    if let Some(hyp) = &record.hypothesis_parse {
        check_parse(hyp, "hypothesis_parse", &mut out);
    }
    for var in Variable::ALL {
        let Some(level) = record.tags.get(var) else { continue };
        match schema.variables.get(&var) {
            None => out.push(Violation::new(
                format!("tags.{var}"),
                "variable is not declared in the schema",
            )),
            Some(levels) if levels.index_of(level).is_none() => out.push(Violation::new(
                format!("tags.{var}"),
                format!("level {level:?} not in level set"),
            )),
            Some(_) => {}
        }
    }
    if let Some(em) = record.em_override {
        if em > 1 {
            out.push(Violation::new("em_override", format!("must be 0 or 1, got {em}")));
        }
    }
    if require_response && record.hypothesis_parse.is_none() && record.em_override.is_none() {
        out.push(Violation::new(
            "hypothesis_parse",
            "missing response source: neither hypothesis_parse nor em_override is present",
        ));
    }
    out
}

/// Audit-ready validation: every invariant including the response-source rule.
pub fn validate_record(record: &UtteranceRecord, schema: &DemographicSchema) -> Vec<Violation> {
    validate_record_with(record, schema, true)
}

fn check_parse(parse: &Parse, field: &str, out: &mut Vec<Violation>) {
    if parse.intent.is_empty() {
        out.push(Violation::new(format!("{field}.intent"), "must be non-empty"));
    }
    for (i, slot) in parse.slots.iter().enumerate() {
        if slot.name.is_empty() || slot.name.chars().any(char::is_whitespace) {
            out.push(Violation::new(
                format!("{field}.slots[{i}].name"),
                "must be non-empty and contain no whitespace",
            ));
        }
        if slot.value.is_empty() {
            out.push(Violation::new(format!("{field}.slots[{i}].value"), "must be non-empty"));
        }
    }
}

/// Granularity of the observations fed to the one-way ANOVA.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnovaUnit {
    /// Per-utterance binary EM values.
    #[default]
    Utterance,
    /// Per-speaker exact match ratios.
    Speaker,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuditConfig {
    pub alpha: f64,
    pub reference_levels: BTreeMap<Variable, String>,
    pub max_iterations: usize,
    pub loglik_tolerance: f64,
    /// Largest admissible |coefficient| before a fit is declared separated.
    pub divergence_bound: f64,
    /// Relative OR change that marks a cross-effect.
    pub or_shift_threshold: f64,
    pub anova_unit: AnovaUnit,
}

impl Default for AuditConfig {
    fn default() -> Self {
        AuditConfig::for_schema(&DemographicSchema::default())
    }
}

impl AuditConfig {
    /// Defaults with reference levels taken from the schema.
    pub fn for_schema(schema: &DemographicSchema) -> Self {
        AuditConfig {
            alpha: 0.05,
            reference_levels: schema
                .variables
                .iter()
                .map(|(v, l)| (*v, l.reference.clone()))
                .collect(),
            max_iterations: 100,
            loglik_tolerance: 1e-8,
            divergence_bound: 15.0,
            or_shift_threshold: 0.05,
            anova_unit: AnovaUnit::Utterance,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad("alpha must lie in (0, 1)");
        }
        if self.max_iterations == 0 {
            return bad("max_iterations must be positive");
        }
        if !(self.loglik_tolerance > 0.0) {
            return bad("loglik_tolerance must be positive");
        }
        if !(self.divergence_bound > 0.0) {
            return bad("divergence_bound must be positive");
        }
        if !(self.or_shift_threshold > 0.0) {
            return bad("or_shift_threshold must be positive");
        }
        Ok(())
    }

    /// Reference level for `var`: the configured one, else the schema default.
    pub fn reference_for(&self, var: Variable, schema: &DemographicSchema) -> Result<String> {
        let levels = schema.levels(var)?;
        let reference = self
            .reference_levels
            .get(&var)
            .cloned()
            .unwrap_or_else(|| levels.reference.clone());
        if levels.index_of(&reference).is_none() {
            return Err(Error::InvalidConfig(format!(
                "reference level {reference:?} is not a level of {var}"
            )));
        }
        Ok(reference)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record() -> UtteranceRecord {
        UtteranceRecord {
            utterance_id: "u1".into(),
            speaker_id: "s1".into(),
            split: Split::Test,
            reference_transcript: "play abbey road".into(),
            hypothesis_transcript: None,
            reference_parse: Parse::new("PlayMusic", vec![Slot::new("album_name", "abbey road")]),
            hypothesis_parse: None,
            tags: DemographicTags { gender: Some("female".into()), ..Default::default() },
            em_override: Some(1),
        }
    }

    #[test]
    fn well_formed_record_has_no_violations() {
        assert!(validate_record(&record(), &DemographicSchema::default()).is_empty());
    }

    #[test]
    fn unknown_level_is_reported() {
        let mut r = record();
        r.tags.gender = Some("other".into());
        let v = validate_record(&r, &DemographicSchema::default());
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].field, "tags.gender");
        assert!(v[0].rule.contains("not in level set"));
    }

    #[test]
    fn missing_response_source_is_reported() {
        let mut r = record();
        r.em_override = None;
        let v = validate_record(&r, &DemographicSchema::default());
        assert_eq!(v.len(), 1);
        assert!(v[0].rule.contains("missing response source"));
        assert!(validate_record_with(&r, &DemographicSchema::default(), false).is_empty());
    }

    #[test]
    fn bad_em_override_and_slot_names() {
        let mut r = record();
        r.em_override = Some(2);
        r.reference_parse.slots.push(Slot::new("bad name", ""));
        let v = validate_record(&r, &DemographicSchema::default());
        let fields: Vec<_> = v.iter().map(|v| v.field.as_str()).collect();
        assert_eq!(
            fields,
            ["reference_parse.slots[1].name", "reference_parse.slots[1].value", "em_override"]
        );
    }

    #[test]
    fn parse_equality_folds_case_and_ignores_order() {
        let a = Parse::new("PlayMusic", vec![Slot::new("artist", "Queen"), Slot::new("song", "x")]);
        let b = Parse::new("playmusic", vec![Slot::new("song", "X"), Slot::new("ARTIST", "queen")]);
        assert_eq!(a, b);
        let c = Parse::new("playmusic", vec![Slot::new("song", "X"), Slot::new("song", "X")]);
        assert_ne!(a, c);
    }

    #[test]
    fn default_schema_matches_defaults() {
        let schema = DemographicSchema::default();
        assert_eq!(schema.levels(Variable::DialectalRegion).unwrap().levels.len(), 8);
        let cfg = AuditConfig::default();
        assert_eq!(cfg.reference_levels[&Variable::Gender], "female");
        assert_eq!(cfg.reference_levels[&Variable::AgeRange], "17-28");
        assert_eq!(cfg.reference_levels[&Variable::DialectalRegion], "Asian");
        assert_eq!(cfg.reference_levels[&Variable::Ethnicity], "African American");
        cfg.validate().unwrap();
    }

    #[test]
    fn schema_rejects_unknown_reference() {
        let text = r#"{"schema_version":"x","variables":{"gender":{"levels":["a","b"],"reference":"c"}}}"#;
        assert!(matches!(DemographicSchema::from_json(text), Err(Error::InvalidSchema(_))));
    }

    #[test]
    fn config_rejects_bad_alpha() {
        let cfg = AuditConfig { alpha: 1.0, ..AuditConfig::default() };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn variable_aliases() {
        assert_eq!("age".parse::<Variable>().unwrap(), Variable::AgeRange);
        assert_eq!("dialect".parse::<Variable>().unwrap(), Variable::DialectalRegion);
        assert!("height".parse::<Variable>().is_err());
    }
}
