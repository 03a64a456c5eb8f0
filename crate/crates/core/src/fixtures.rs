//! Small deterministic cohorts used by the test suites, the examples in the
//! README and the `simulate` presets.

use std::collections::BTreeMap;

use crate::data_model::{DemographicTags, Parse, Split, UtteranceRecord, Variable};
use crate::ingestion::{DatasetManifest, SyntheticSpec};

/// One cell of a hand-built cohort: tags plus exact success/failure counts.
#[derive(Debug, Clone)]
pub struct CountCell {
    pub tags: DemographicTags,
    pub successes: usize,
    pub failures: usize,
}

impl CountCell {
    pub fn new(tags: &[(Variable, &str)], successes: usize, failures: usize) -> Self {
        let mut t = DemographicTags::default();
        for (v, l) in tags {
            t.set(*v, Some((*l).to_string()));
        }
        CountCell { tags: t, successes, failures }
    }
}

/// Records with `em_override` set so that each cell has exactly the given
/// counts. Successes come first within a cell; speakers rotate over four ids.
pub fn manifest_from_counts(cells: &[CountCell]) -> DatasetManifest {
    let mut records = Vec::new();
    for (c, cell) in cells.iter().enumerate() {
        for i in 0..cell.successes + cell.failures {
            records.push(UtteranceRecord {
                utterance_id: format!("c{c:02}-{i:05}"),
                speaker_id: format!("s{c:02}-{}", i % 4),
                split: Split::Test,
                reference_transcript: "play some music".into(),
                hypothesis_transcript: None,
                reference_parse: Parse::new("PlayMusic", Vec::new()),
                hypothesis_parse: None,
                tags: cell.tags.clone(),
                em_override: Some(u8::from(i < cell.successes)),
            });
        }
    }
    DatasetManifest::new(records, "1.0", "fixture")
}

/// Female 30/100 vs male 60/100 exact matches.
pub fn two_by_two() -> DatasetManifest {
    manifest_from_counts(&[
        CountCell::new(&[(Variable::Gender, "female")], 30, 70),
        CountCell::new(&[(Variable::Gender, "male")], 60, 40),
    ])
}

/// Dialect success probabilities for the confounding scenario, low for the
/// two non-native groups.
pub const CONFOUNDED_DIALECT_P: [(&str, f64); 8] = [
    ("Asian", 0.55),
    ("LatinX", 0.60),
    ("Inland-North", 0.80),
    ("Mid-Atlantic", 0.85),
    ("Midland", 0.90),
    ("New England", 0.95),
    ("Southern", 0.85),
    ("Western", 0.90),
];

/// EM depends on dialect only; female speakers are over-represented (62%)
/// in the two low-EM dialect groups and under-represented (45%) elsewhere.
/// Gender therefore looks significant on its own and stops mattering once
/// dialect is adjusted for.
pub fn confounded_spec(seed: u64) -> SyntheticSpec {
    let per_dialect = 1500u64;
    let mut probs = BTreeMap::new();
    let mut counts = BTreeMap::new();
    for (dialect, p) in CONFOUNDED_DIALECT_P {
        let female_share = if p < 0.7 { 0.62 } else { 0.45 };
        let n_female = (per_dialect as f64 * female_share).round() as u64;
        for (gender, n) in [("female", n_female), ("male", per_dialect - n_female)] {
            let key = format!("{gender}|17-28|{dialect}");
            probs.insert(key.clone(), p);
            counts.insert(key, n);
        }
    }
    SyntheticSpec { group_probabilities: probs, cell_counts: counts, seed, speakers_per_cell: 10 }
}

/// Balanced gender × age cells with additive logit effects: a strong male
/// effect and a mild age effect.
pub fn independent_effects_spec(seed: u64) -> SyntheticSpec {
    let base = 0.4;
    let male = 0.6;
    let age = [("9-16", -0.15), ("17-28", 0.0), ("29-41", 0.1), ("42-54", 0.15), ("55-100", 0.2)];
    let mut probs = BTreeMap::new();
    let mut counts = BTreeMap::new();
    for (gender, g) in [("female", 0.0), ("male", male)] {
        for (level, a) in age {
            let key = format!("{gender}|{level}|");
            probs.insert(key.clone(), crate::glm::logistic(base + g + a));
            counts.insert(key, 2500);
        }
    }
    SyntheticSpec { group_probabilities: probs, cell_counts: counts, seed, speakers_per_cell: 10 }
}

/// Two equal-sized gender groups with the same success probability.
pub fn null_spec(p: f64, per_level: u64, seed: u64) -> SyntheticSpec {
    let mut probs = BTreeMap::new();
    let mut counts = BTreeMap::new();
    for gender in ["female", "male"] {
        let key = format!("{gender}||");
        probs.insert(key.clone(), p);
        counts.insert(key, per_level);
    }
    SyntheticSpec { group_probabilities: probs, cell_counts: counts, seed, speakers_per_cell: 10 }
}
