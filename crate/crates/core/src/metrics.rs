//! Per-utterance Exact Match and word error counts, and their aggregation
//! per demographic group and per speaker.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::data_model::{DemographicSchema, Parse, UtteranceRecord, Variable};
use crate::error::{Error, Result};
use crate::ingestion::DatasetManifest;

/// 1 iff intents and slot multisets agree after case folding.
pub fn exact_match(reference: &Parse, hypothesis: &Parse) -> u8 {
    u8::from(reference == hypothesis)
}

/// Case-folds and splits on ASCII whitespace.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split_ascii_whitespace()
        .map(str::to_string)
        .collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WordErrors {
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
}

impl WordErrors {
    pub fn total(&self) -> usize {
        self.substitutions + self.deletions + self.insertions
    }
}

/// Minimum edit-distance alignment counts under unit costs.
///
/// When several alignments share the minimal cost, the backtrace prefers
/// substitution (or match), then deletion, then insertion.
pub fn word_error_counts<S: AsRef<str>>(reference: &[S], hypothesis: &[S]) -> Result<WordErrors> {
    if reference.is_empty() {
        return Err(Error::EmptyReference);
    }
    let n = reference.len();
    let m = hypothesis.len();
    let width = m + 1;
    let mut cost = vec![0usize; (n + 1) * width];
    for i in 0..=n {
        cost[i * width] = i;
    }
    for j in 0..=m {
        cost[j] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let sub = usize::from(reference[i - 1].as_ref() != hypothesis[j - 1].as_ref());
            cost[i * width + j] = (cost[(i - 1) * width + j - 1] + sub)
                .min(cost[(i - 1) * width + j] + 1)
                .min(cost[i * width + j - 1] + 1);
        }
    }

    let mut counts = WordErrors::default();
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let here = cost[i * width + j];
        if i > 0 && j > 0 {
            let sub = usize::from(reference[i - 1].as_ref() != hypothesis[j - 1].as_ref());
            if cost[(i - 1) * width + j - 1] + sub == here {
                counts.substitutions += sub;
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && cost[(i - 1) * width + j] + 1 == here {
            counts.deletions += 1;
            i -= 1;
        } else {
            counts.insertions += 1;
            j -= 1;
        }
    }
    Ok(counts)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UtteranceScore {
    pub utterance_id: String,
    pub em: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wer_errors: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ref_word_count: Option<usize>,
}

fn score_record(record: &UtteranceRecord) -> Option<UtteranceScore> {
    let em = match (record.em_override, &record.hypothesis_parse) {
        (Some(em), _) => em,
        (None, Some(hyp)) => exact_match(&record.reference_parse, hyp),
        (None, None) => return None,
    };
    let reference = tokenize(&record.reference_transcript);
    let wer = match &record.hypothesis_transcript {
        Some(hyp) if !reference.is_empty() => {
            let errors = word_error_counts(&reference, &tokenize(hyp)).expect("reference is non-empty");
            Some((errors.total(), reference.len()))
        }
        _ => None,
    };
    Some(UtteranceScore {
        utterance_id: record.utterance_id.clone(),
        em,
        wer_errors: wer.map(|w| w.0),
        ref_word_count: wer.map(|w| w.1),
    })
}

/// One score per record, in manifest order. `em_override` wins over the
/// parse comparison; WER fields are omitted when there is no hypothesis
/// transcript.
pub fn score_manifest(manifest: &DatasetManifest) -> Result<Vec<UtteranceScore>> {
    let mut scores = Vec::with_capacity(manifest.len());
    let mut missing = Vec::new();
    for record in &manifest.records {
        match score_record(record) {
            Some(s) => scores.push(s),
            None => missing.push(record.utterance_id.clone()),
        }
    }
    if !missing.is_empty() {
        return Err(Error::MissingResponse(missing));
    }
    Ok(scores)
}

/// Joins scores back onto their records, in manifest order.
///
/// Every score must name a manifest record; records without a score are an
/// error as well.
pub fn pair_scores<'a>(
    manifest: &'a DatasetManifest,
    scores: &'a [UtteranceScore],
) -> Result<Vec<(&'a UtteranceRecord, &'a UtteranceScore)>> {
    let by_id: HashMap<&str, &UtteranceScore> =
        scores.iter().map(|s| (s.utterance_id.as_str(), s)).collect();
    let known: BTreeSet<&str> = manifest.records.iter().map(|r| r.utterance_id.as_str()).collect();
    let mut mismatched: Vec<String> = scores
        .iter()
        .filter(|s| !known.contains(s.utterance_id.as_str()))
        .map(|s| s.utterance_id.clone())
        .collect();
    let mut pairs = Vec::with_capacity(manifest.len());
    for r in &manifest.records {
        match by_id.get(r.utterance_id.as_str()) {
            Some(s) => pairs.push((r, *s)),
            None => mismatched.push(r.utterance_id.clone()),
        }
    }
    if !mismatched.is_empty() {
        return Err(Error::IdMismatch(mismatched));
    }
    Ok(pairs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupAggregate {
    pub group_key: String,
    pub n_utterances: usize,
    pub n_speakers: usize,
    pub emr: f64,
    /// `None` when no utterance in the group carries WER counts.
    pub wer: Option<f64>,
    pub per_speaker_emr: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregation {
    pub group_by: Vec<Variable>,
    pub groups: Vec<GroupAggregate>,
    /// Records lacking at least one grouping tag.
    pub excluded: usize,
}

#[derive(Default)]
struct Accumulator {
    n: usize,
    em: usize,
    wer_errors: usize,
    ref_words: usize,
    speakers: BTreeMap<String, (usize, usize)>,
}

impl Accumulator {
    fn add(&mut self, speaker: &str, s: &UtteranceScore) {
        self.n += 1;
        self.em += usize::from(s.em);
        if let (Some(e), Some(w)) = (s.wer_errors, s.ref_word_count) {
            self.wer_errors += e;
            self.ref_words += w;
        }
        let entry = self.speakers.entry(speaker.to_string()).or_default();
        entry.0 += 1;
        entry.1 += usize::from(s.em);
    }

    fn finish(self, group_key: String) -> GroupAggregate {
        GroupAggregate {
            group_key,
            n_utterances: self.n,
            n_speakers: self.speakers.len(),
            emr: self.em as f64 / self.n as f64,
            wer: (self.ref_words > 0).then(|| self.wer_errors as f64 / self.ref_words as f64),
            per_speaker_emr: self
                .speakers
                .into_iter()
                .map(|(k, (n, em))| (k, em as f64 / n as f64))
                .collect(),
        }
    }
}

/// Position of a record's levels in schema order, or `None` if any grouping
/// tag is missing.
fn cell_of(record: &UtteranceRecord, group_by: &[Variable], schema: &DemographicSchema) -> Option<Vec<(usize, String)>> {
    group_by
        .iter()
        .map(|&v| {
            let level = record.tags.get(v)?;
            let rank = schema
                .variables
                .get(&v)
                .and_then(|l| l.index_of(level))
                .unwrap_or(usize::MAX);
            Some((rank, level.to_string()))
        })
        .collect()
}

/// Aggregates scores per observed level (one variable) or cell (several).
///
/// Groups come out in schema level order; group keys join levels with `|`.
pub fn aggregate(
    scores: &[UtteranceScore],
    manifest: &DatasetManifest,
    group_by: &[Variable],
    schema: &DemographicSchema,
) -> Result<Aggregation> {
    let pairs = pair_scores(manifest, scores)?;
    let mut groups: BTreeMap<Vec<(usize, String)>, Accumulator> = BTreeMap::new();
    let mut excluded = 0;
    for (record, score) in pairs {
        match cell_of(record, group_by, schema) {
            Some(cell) => groups.entry(cell).or_default().add(&record.speaker_id, score),
            None => excluded += 1,
        }
    }
    Ok(Aggregation {
        group_by: group_by.to_vec(),
        groups: groups
            .into_iter()
            .map(|(cell, acc)| {
                let key = cell.into_iter().map(|(_, l)| l).collect::<Vec<_>>().join("|");
                acc.finish(key)
            })
            .collect(),
        excluded,
    })
}

/// Line-delimited JSON score export.
pub fn scores_to_jsonl(scores: &[UtteranceScore]) -> String {
    let mut out = String::new();
    for s in scores {
        out.push_str(&serde_json::to_string(s).expect("scores serialize"));
        out.push('\n');
    }
    out
}

pub fn scores_from_jsonl(text: &str) -> Result<Vec<UtteranceScore>> {
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let s: UtteranceScore = serde_json::from_str(line)
            .map_err(|e| Error::Parse { line: idx + 1, message: e.to_string() })?;
        if s.em > 1 {
            return Err(Error::Parse { line: idx + 1, message: format!("em must be 0 or 1, got {}", s.em) });
        }
        out.push(s);
    }
    Ok(out)
}

/// CSV with header `group_key,n_utterances,n_speakers,emr,wer`.
pub fn aggregation_to_csv(agg: &Aggregation) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["group_key", "n_utterances", "n_speakers", "emr", "wer"])
        .expect("in-memory write");
    for g in &agg.groups {
        w.write_record([
            g.group_key.clone(),
            g.n_utterances.to_string(),
            g.n_speakers.to_string(),
            g.emr.to_string(),
            g.wer.map(|x| x.to_string()).unwrap_or_default(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
}
