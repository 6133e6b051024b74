//! Coverage, concentration, per-position means and POS-stratified summaries.
//!
//! All sums run in a fixed order (neighbor rank, then ascending row or
//! sentence id), so results do not depend on how records were produced.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpusio::OccurrenceTable;
use crate::knn::{NeighborList, TypeNeighborList};
use crate::lexicon::fold;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("neighbor list of row {0} is empty")]
    EmptyNeighborList(usize),
}

pub type Result<T, E = MetricsError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum CoverageKind {
    Embed,
    Lexicon,
}

impl fmt::Display for CoverageKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CoverageKind::Embed => "EMBED",
            CoverageKind::Lexicon => "LEXICON",
        })
    }
}

/// How neighbor slots are counted against the reference set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CountingMode {
    /// Every slot counts, so a type appearing twice counts twice; the
    /// denominator is the list length.
    #[default]
    PerSlot,
    /// Neighbor types are deduplicated first; both sides of the ratio count
    /// distinct types.
    DistinctTypes,
}

/// Which string of a neighbor occurrence is compared with the reference set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MatchKey {
    Surface,
    OriginWord,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoverageOptions {
    pub counting: CountingMode,
    pub key: MatchKey,
    pub fold_case: bool,
}

impl CoverageOptions {
    pub fn embedding() -> Self {
        CoverageOptions { counting: CountingMode::PerSlot, key: MatchKey::Surface, fold_case: false }
    }

    pub fn lexical() -> Self {
        CoverageOptions { counting: CountingMode::PerSlot, key: MatchKey::OriginWord, fold_case: false }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoverageRecord {
    pub row: usize,
    pub sentence_id: u64,
    pub token_id: u64,
    pub kind: CoverageKind,
    pub numerator: usize,
    pub denominator: usize,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConcentrationRecord {
    pub row: usize,
    pub sentence_id: u64,
    pub token_id: u64,
    pub value: f64,
}

fn neighbor_key(table: &OccurrenceTable, row: usize, key: MatchKey) -> &str {
    let occ = table.get(row);
    match key {
        MatchKey::Surface => &occ.surface,
        MatchKey::OriginWord => &occ.origin_word,
    }
}

fn count_covered<'t, F>(
    keys: impl Iterator<Item = &'t str>,
    counting: CountingMode,
    fold_case: bool,
    member: F,
) -> (usize, usize)
where
    F: Fn(&str) -> bool,
{
    let normalize = |k: &'t str| -> std::borrow::Cow<'t, str> {
        if fold_case {
            fold(k).into()
        } else {
            k.into()
        }
    };
    match counting {
        CountingMode::PerSlot => keys.fold((0, 0), |(num, den), k| (num + member(&normalize(k)) as usize, den + 1)),
        CountingMode::DistinctTypes => {
            let distinct: BTreeSet<_> = keys.map(normalize).collect();
            (distinct.iter().filter(|k| member(k)).count(), distinct.len())
        }
    }
}

fn coverage_record(
    neighbors: &NeighborList,
    table: &OccurrenceTable,
    kind: CoverageKind,
    options: CoverageOptions,
    member: impl Fn(&str) -> bool,
) -> Result<CoverageRecord> {
    if neighbors.is_empty() {
        return Err(MetricsError::EmptyNeighborList(neighbors.query));
    }
    let keys = neighbors.entries.iter().map(|e| neighbor_key(table, e.row, options.key));
    let (numerator, denominator) = count_covered(keys, options.counting, options.fold_case, member);
    let q = table.get(neighbors.query);
    Ok(CoverageRecord {
        row: neighbors.query,
        sentence_id: q.sentence_id,
        token_id: q.token_id,
        kind,
        numerator,
        denominator,
        value: numerator as f64 / denominator as f64,
    })
}

/// Share of a hidden state's neighbors whose type is among the embedding
/// neighbors of the query's type.
pub fn embedding_coverage(
    neighbors: &NeighborList,
    type_neighbors: &TypeNeighborList,
    table: &OccurrenceTable,
    options: CoverageOptions,
) -> Result<CoverageRecord> {
    let reference: HashSet<String> =
        type_neighbors.entries.iter().map(|(t, _)| if options.fold_case { fold(t) } else { t.clone() }).collect();
    coverage_record(neighbors, table, CoverageKind::Embed, options, |k| reference.contains(k))
}

/// Share of a hidden state's neighbors whose word is in R_w. `relations`
/// must already be case-folded when `options.fold_case` is set.
pub fn lexical_coverage(
    neighbors: &NeighborList,
    relations: &BTreeSet<String>,
    table: &OccurrenceTable,
    options: CoverageOptions,
) -> Result<CoverageRecord> {
    coverage_record(neighbors, table, CoverageKind::Lexicon, options, |k| relations.contains(k))
}

/// Mean squared cosine distance of the neighbors: (1/n) * sum (1 - x_k)^2.
pub fn concentration_value(scores: &[f64]) -> Option<f64> {
    if scores.is_empty() {
        return None;
    }
    let sum = scores.iter().fold(0.0f64, |acc, &x| acc + (1.0 - x) * (1.0 - x));
    Some(sum / scores.len() as f64)
}

pub fn concentration(neighbors: &NeighborList, table: &OccurrenceTable) -> Result<ConcentrationRecord> {
    let scores: Vec<f64> = neighbors.scores().collect();
    let value = concentration_value(&scores).ok_or(MetricsError::EmptyNeighborList(neighbors.query))?;
    let q = table.get(neighbors.query);
    Ok(ConcentrationRecord { row: neighbors.query, sentence_id: q.sentence_id, token_id: q.token_id, value })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SeriesKind {
    AcpEmbed,
    AcpLex,
    Av,
}

impl SeriesKind {
    pub fn name(self) -> &'static str {
        match self {
            SeriesKind::AcpEmbed => "ACP_EMBED",
            SeriesKind::AcpLex => "ACP_LEX",
            SeriesKind::Av => "AV",
        }
    }
}

/// Treatment of sentences that have no record at position j.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MissingPolicy {
    /// Contribute 0 to the sum but stay in |S_{l(s) >= j}|.
    #[default]
    ZeroFill,
    /// Leave the sentence out of position j's denominator.
    SkipSentence,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeriesPoint {
    /// 1-based position.
    pub position: usize,
    /// `None` when `support` is 0.
    pub value: Option<f64>,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PositionalSeries {
    pub kind: SeriesKind,
    pub points: Vec<SeriesPoint>,
}

impl PositionalSeries {
    pub fn value_at(&self, position: usize) -> Option<f64> {
        self.points.get(position.checked_sub(1)?).and_then(|p| p.value)
    }

    pub fn support_total(&self) -> usize {
        self.points.iter().map(|p| p.support).sum()
    }
}

/// A per-occurrence value at (sentence, 0-based token position).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Positioned {
    pub sentence_id: u64,
    pub token_id: u64,
    pub value: f64,
}

impl From<&CoverageRecord> for Positioned {
    fn from(r: &CoverageRecord) -> Self {
        Positioned { sentence_id: r.sentence_id, token_id: r.token_id, value: r.value }
    }
}

impl From<&ConcentrationRecord> for Positioned {
    fn from(r: &ConcentrationRecord) -> Self {
        Positioned { sentence_id: r.sentence_id, token_id: r.token_id, value: r.value }
    }
}

/// Per-position mean: sum over sentences of the value at position j divided
/// by the number of sentences of length >= j. Records for sentences unknown
/// to the table are ignored.
pub fn positional_mean(
    records: &[Positioned],
    table: &OccurrenceTable,
    kind: SeriesKind,
    missing: MissingPolicy,
) -> PositionalSeries {
    let lengths = table.sentence_lengths();
    let max_len = table.max_sentence_length();
    let mut sorted: Vec<&Positioned> =
        records.iter().filter(|r| lengths.get(&r.sentence_id).is_some_and(|&l| (r.token_id as usize) < l)).collect();
    sorted.sort_by_key(|r| (r.sentence_id, r.token_id));

    let mut sums = vec![0.0f64; max_len];
    let mut present = vec![0usize; max_len];
    for r in sorted {
        let j = r.token_id as usize;
        sums[j] += r.value;
        present[j] += 1;
    }
    let at_least = table.sentences_at_least();
    let points = (0..max_len)
        .map(|j| {
            let support = match missing {
                MissingPolicy::ZeroFill => at_least[j],
                MissingPolicy::SkipSentence => present[j],
            };
            SeriesPoint { position: j + 1, value: (support > 0).then(|| sums[j] / support as f64), support }
        })
        .collect();
    PositionalSeries { kind, points }
}

/// Dispersion reported next to each stratum mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VarianceMode {
    /// Population variance of per-occurrence coverage values.
    #[default]
    Occurrence,
    /// Population variance of per-type mean coverage values.
    Type,
}

pub const POS_BUCKETS: [&str; 4] = ["VERB", "NOUN", "ADJ", "ADV"];
pub const ALL_BUCKET: &str = "All";

#[derive(Debug, Clone, PartialEq)]
pub struct StratumRow {
    pub bucket: String,
    pub mean_pct: f64,
    /// Variance of coverage fractions, times 100.
    pub var: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StratifiedTable {
    pub kind: CoverageKind,
    pub rows: Vec<StratumRow>,
}

impl StratifiedTable {
    pub fn bucket(&self, name: &str) -> Option<&StratumRow> {
        self.rows.iter().find(|r| r.bucket == name)
    }
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

fn population_variance(values: &[f64]) -> f64 {
    let m = mean(values);
    values.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / values.len() as f64
}

/// Mean coverage (as percent) and dispersion for All and each open-class
/// POS bucket. Buckets without occurrences are omitted.
pub fn stratify_by_pos(records: &[CoverageRecord], table: &OccurrenceTable, mode: VarianceMode) -> StratifiedTable {
    let kind = records.first().map_or(CoverageKind::Embed, |r| r.kind);
    let mut sorted: Vec<&CoverageRecord> = records.iter().collect();
    sorted.sort_by_key(|r| r.row);

    let summarize = |bucket: &str, members: Vec<&CoverageRecord>| -> Option<StratumRow> {
        if members.is_empty() {
            return None;
        }
        let values: Vec<f64> = members.iter().map(|r| r.value).collect();
        let var = match mode {
            VarianceMode::Occurrence => population_variance(&values),
            VarianceMode::Type => {
                let mut by_type: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
                for r in &members {
                    by_type.entry(&table.get(r.row).surface).or_default().push(r.value);
                }
                let type_means: Vec<f64> = by_type.values().map(|v| mean(v)).collect();
                population_variance(&type_means)
            }
        };
        Some(StratumRow {
            bucket: bucket.to_string(),
            mean_pct: mean(&values) * 100.0,
            var: var * 100.0,
            count: values.len(),
        })
    };

    let mut rows = Vec::new();
    rows.extend(summarize(ALL_BUCKET, sorted.clone()));
    for bucket in POS_BUCKETS {
        let members = sorted.iter().copied().filter(|r| table.get(r.row).pos == bucket).collect();
        rows.extend(summarize(bucket, members));
    }
    StratifiedTable { kind, rows }
}
