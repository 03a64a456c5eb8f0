use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data_model::{AnovaUnit, AuditConfig, DemographicSchema, UtteranceRecord, Variable};
use crate::error::{Error, Result};
use crate::ingestion::DatasetManifest;
use crate::metrics::{pair_scores, UtteranceScore};
use crate::specfun::{chi2_sf, f_sf, TailProbability};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelCounts {
    pub level: String,
    pub em0: u64,
    pub em1: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContingencyResult {
    pub variable: Variable,
    pub table: Vec<LevelCounts>,
    pub statistic: f64,
    pub df: usize,
    pub p_value: TailProbability,
    pub n_obs: usize,
    pub excluded: usize,
}

/// Pearson statistic Σ (O − E)² / E over an L × 2 table, without
/// continuity correction. Returns (statistic, df, p).
pub fn pearson_chi2(table: &[[u64; 2]]) -> Result<(f64, usize, f64)> {
    if table.len() < 2 {
        return Err(Error::SingleLevel { variable: "table".into(), observed: table.len() });
    }
    let col_sums = [
        table.iter().map(|r| r[0]).sum::<u64>() as f64,
        table.iter().map(|r| r[1]).sum::<u64>() as f64,
    ];
    let total = col_sums[0] + col_sums[1];
    for (i, row) in table.iter().enumerate() {
        if row[0] + row[1] == 0 {
            return Err(Error::DegenerateGroup { group: format!("level {i}"), reason: "no observations".into() });
        }
    }
    if col_sums.iter().any(|&c| c == 0.0) {
        return Err(Error::DegenerateGroup {
            group: "all".into(),
            reason: "every outcome is identical, expected counts vanish".into(),
        });
    }
    let mut statistic = 0.0;
    for row in table {
        let row_sum = (row[0] + row[1]) as f64;
        for (j, &observed) in row.iter().enumerate() {
            let expected = row_sum * col_sums[j] / total;
            statistic += (observed as f64 - expected).powi(2) / expected;
        }
    }
    let df = table.len() - 1;
    Ok((statistic, df, chi2_sf(statistic, df as f64)?))
}

fn tagged_pairs<'a>(
    manifest: &'a DatasetManifest,
    scores: &'a [UtteranceScore],
    variable: Variable,
) -> Result<(Vec<(&'a UtteranceRecord, &'a UtteranceScore)>, usize)> {
    let pairs = pair_scores(manifest, scores)?;
    let total = pairs.len();
    let kept: Vec<_> = pairs.into_iter().filter(|(r, _)| r.tags.get(variable).is_some()).collect();
    let excluded = total - kept.len();
    Ok((kept, excluded))
}

fn level_rank(schema: &DemographicSchema, variable: Variable, level: &str) -> usize {
    schema
        .variables
        .get(&variable)
        .and_then(|l| l.index_of(level))
        .unwrap_or(usize::MAX)
}

/// Independence of EM and `variable`, over the observed levels.
pub fn chi2_contingency(
    manifest: &DatasetManifest,
    scores: &[UtteranceScore],
    variable: Variable,
    schema: &DemographicSchema,
    _config: &AuditConfig,
) -> Result<ContingencyResult> {
    let (pairs, excluded) = tagged_pairs(manifest, scores, variable)?;
    let mut counts: BTreeMap<(usize, String), [u64; 2]> = BTreeMap::new();
    for (r, s) in &pairs {
        let level = r.tags.get(variable).expect("filtered");
        counts.entry((level_rank(schema, variable, level), level.to_string())).or_default()[usize::from(s.em)] += 1;
    }
    if counts.len() < 2 {
        return Err(Error::SingleLevel { variable: variable.to_string(), observed: counts.len() });
    }
    let table: Vec<[u64; 2]> = counts.values().copied().collect();
    let (statistic, df, p) = pearson_chi2(&table)?;
    Ok(ContingencyResult {
        variable,
        table: counts
            .into_iter()
            .map(|((_, level), c)| LevelCounts { level, em0: c[0], em1: c[1] })
            .collect(),
        statistic,
        df,
        p_value: TailProbability::new(p),
        n_obs: pairs.len(),
        excluded,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnovaResult {
    pub variable: Variable,
    pub unit: AnovaUnit,
    pub f_statistic: f64,
    pub df_between: usize,
    pub df_within: usize,
    pub p_value: TailProbability,
    /// Observations entering the test (utterances or speakers).
    pub n_obs: usize,
    pub group_means: BTreeMap<String, f64>,
}

/// Classical one-way ANOVA. Returns (F, df_between, df_within, p).
///
/// Every group needs at least two observations. With zero within-group
/// variance, F is +∞ (p = 0) unless the groups also share a mean, in which
/// case F = 0 and p = 1.
pub fn anova_groups(groups: &[(String, Vec<f64>)]) -> Result<(f64, usize, usize, f64)> {
    if groups.len() < 2 {
        return Err(Error::SingleLevel { variable: "groups".into(), observed: groups.len() });
    }
    for (name, values) in groups {
        if values.len() < 2 {
            return Err(Error::DegenerateGroup {
                group: name.clone(),
                reason: format!("{} observation(s); at least 2 are required", values.len()),
            });
        }
    }
    let n: usize = groups.iter().map(|(_, v)| v.len()).sum();
    let grand = groups.iter().flat_map(|(_, v)| v).sum::<f64>() / n as f64;
    let mut ssb = 0.0;
    let mut ssw = 0.0;
    for (_, values) in groups {
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        ssb += values.len() as f64 * (mean - grand).powi(2);
        ssw += values.iter().map(|x| (x - mean).powi(2)).sum::<f64>();
    }
    let df1 = groups.len() - 1;
    let df2 = n - groups.len();
    // Rounding leaves SSB slightly positive for identical means.
    let ssb_is_zero = ssb <= 1e-12 * (ssb + ssw).max(f64::MIN_POSITIVE);
    if ssb_is_zero {
        return Ok((0.0, df1, df2, 1.0));
    }
    if ssw == 0.0 {
        return Ok((f64::INFINITY, df1, df2, 0.0));
    }
    let f = (ssb / df1 as f64) / (ssw / df2 as f64);
    Ok((f, df1, df2, f_sf(f, df1 as f64, df2 as f64)?))
}

/// One-way ANOVA of EM across the levels of `variable`, on utterances or
/// on per-speaker EMRs depending on `config.anova_unit`.
pub fn one_way_anova(
    manifest: &DatasetManifest,
    scores: &[UtteranceScore],
    variable: Variable,
    schema: &DemographicSchema,
    config: &AuditConfig,
) -> Result<AnovaResult> {
    let (pairs, _) = tagged_pairs(manifest, scores, variable)?;
    let mut groups: BTreeMap<(usize, String), Vec<f64>> = BTreeMap::new();
    match config.anova_unit {
        AnovaUnit::Utterance => {
            for (r, s) in &pairs {
                let level = r.tags.get(variable).expect("filtered");
                groups
                    .entry((level_rank(schema, variable, level), level.to_string()))
                    .or_default()
                    .push(f64::from(s.em));
            }
        }
        AnovaUnit::Speaker => {
            let mut speakers: BTreeMap<(usize, String, String), (usize, usize)> = BTreeMap::new();
            for (r, s) in &pairs {
                let level = r.tags.get(variable).expect("filtered");
                let e = speakers
                    .entry((level_rank(schema, variable, level), level.to_string(), r.speaker_id.clone()))
                    .or_default();
                e.0 += 1;
                e.1 += usize::from(s.em);
            }
            for ((rank, level, _), (n, em)) in speakers {
                groups.entry((rank, level)).or_default().push(em as f64 / n as f64);
            }
        }
    }
    let named: Vec<(String, Vec<f64>)> = groups.into_iter().map(|((_, l), v)| (l, v)).collect();
    if named.len() < 2 {
        return Err(Error::SingleLevel { variable: variable.to_string(), observed: named.len() });
    }
    let (f, df1, df2, p) = anova_groups(&named)?;
    Ok(AnovaResult {
        variable,
        unit: config.anova_unit,
        f_statistic: f,
        df_between: df1,
        df_within: df2,
        p_value: TailProbability::new(p),
        n_obs: named.iter().map(|(_, v)| v.len()).sum(),
        group_means: named
            .iter()
            .map(|(l, v)| (l.clone(), v.iter().sum::<f64>() / v.len() as f64))
            .collect(),
    })
}
