//! End-to-end driver: configuration, stage sequencing, output bundle and
//! run manifest.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{self, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpusio::{
    align_bpe, apply_frequency_band, load_parse_lines, load_token_index, load_vector_log, load_vocab, CorpusError,
    OccurrenceTable, DEFAULT_CONTINUATION,
};
use crate::knn::{
    write_neighbors_binary, write_neighbors_tsv, EmbeddingIndex, ExclusionPolicy, NeighborList, SimilarityIndex,
    TypeNeighborList, DEFAULT_N,
};
use crate::lexicon::{fold, load_relations, RelationLexicon};
use crate::metrics::{
    concentration, embedding_coverage, lexical_coverage, positional_mean, stratify_by_pos, ConcentrationRecord,
    CountingMode, CoverageKind, CoverageOptions, CoverageRecord, MissingPolicy, PositionalSeries, Positioned,
    SeriesKind, StratifiedTable, VarianceMode,
};
use crate::report;
use crate::treesim::{average_treesim, parse_bracketed, smallest_phrase_subtree, SubtreeAssignment, TreeSimSummary};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const NEIGHBORS_FILE: &str = "neighbors.tsv";
pub const NEIGHBORS_BINARY_FILE: &str = "neighbors.bin";
pub const COVERAGE_FILE: &str = "coverage.tsv";
pub const CONCENTRATION_FILE: &str = "concentration.tsv";
pub const POSITIONAL_FILE: &str = "positional.tsv";
pub const STRATA_FILE: &str = "strata.tsv";
pub const TREESIM_FILE: &str = "treesim.tsv";
pub const TABLES_FILE: &str = "tables.txt";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config error: {0}")]
    Config(String),
    #[error("input inconsistency: {0}")]
    InputInconsistency(String),
    #[error("stage {stage} failed: {message}")]
    Stage { stage: &'static str, message: String },
}

impl PipelineError {
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            PipelineError::InputInconsistency(_) => 3,
            PipelineError::Stage { .. } => 4,
        }
    }

    fn stage(stage: &'static str, e: impl std::fmt::Display) -> Self {
        PipelineError::Stage { stage, message: e.to_string() }
    }
}

impl From<CorpusError> for PipelineError {
    fn from(e: CorpusError) -> Self {
        match e {
            CorpusError::Io { .. } => PipelineError::Config(e.to_string()),
            other => PipelineError::InputInconsistency(other.to_string()),
        }
    }
}

pub type Result<T, E = PipelineError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    pub n: usize,
    pub min_freq: u64,
    pub max_freq: u64,
    pub exclusion: ExclusionPolicy,
    pub counting: CountingMode,
    pub variance: VarianceMode,
    pub missing: MissingPolicy,
    pub fold_case: bool,
    /// Restrict lexicon lookups to entries matching the query's POS (or
    /// carrying none).
    pub lexicon_pos_filter: bool,
    pub continuation: String,
    pub vectors: Option<PathBuf>,
    pub tokens: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub vocab: Option<PathBuf>,
    pub parses: Option<PathBuf>,
    pub lexicon: Option<PathBuf>,
    pub out_dir: PathBuf,
    /// Worker threads; `None` uses every available core.
    pub threads: Option<usize>,
    /// Only read by the fixture generator.
    pub seed: u64,
    pub binary_neighbors: bool,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            n: DEFAULT_N,
            min_freq: 10,
            max_freq: 2000,
            exclusion: ExclusionPolicy::default(),
            counting: CountingMode::default(),
            variance: VarianceMode::default(),
            missing: MissingPolicy::default(),
            fold_case: false,
            lexicon_pos_filter: false,
            continuation: DEFAULT_CONTINUATION.to_string(),
            vectors: None,
            tokens: None,
            embeddings: None,
            vocab: None,
            parses: None,
            lexicon: None,
            out_dir: PathBuf::from("out"),
            threads: None,
            seed: 1,
            binary_neighbors: false,
        }
    }
}

impl AnalysisConfig {
    /// Reads a TOML file; relative paths inside it resolve against the
    /// file's directory.
    pub fn from_toml_file(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg: AnalysisConfig =
            toml::from_str(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        if let Some(base) = path.parent() {
            cfg.rebase(base);
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for p in [
            &mut self.vectors,
            &mut self.tokens,
            &mut self.embeddings,
            &mut self.vocab,
            &mut self.parses,
            &mut self.lexicon,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
        fix(&mut self.out_dir);
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(PipelineError::Config(m));
        if self.n == 0 {
            return bad("n must be at least 1".into());
        }
        if self.min_freq > self.max_freq {
            return bad(format!("min_freq {} exceeds max_freq {}", self.min_freq, self.max_freq));
        }
        if self.threads == Some(0) {
            return bad("threads must be at least 1".into());
        }
        if self.continuation.is_empty() {
            return bad("continuation marker is empty".into());
        }
        for (name, path) in [("vectors", &self.vectors), ("tokens", &self.tokens)] {
            if path.is_none() {
                return bad(format!("{name} path is required"));
            }
        }
        if self.embeddings.is_some() != self.vocab.is_some() {
            return bad("embeddings and vocab must be given together".into());
        }
        for (name, path) in self.inputs() {
            if !path.is_file() {
                return bad(format!("{name} file {} does not exist", path.display()));
            }
        }
        Ok(())
    }

    fn inputs(&self) -> Vec<(&'static str, &Path)> {
        [
            ("vectors", &self.vectors),
            ("tokens", &self.tokens),
            ("embeddings", &self.embeddings),
            ("vocab", &self.vocab),
            ("parses", &self.parses),
            ("lexicon", &self.lexicon),
        ]
        .into_iter()
        .filter_map(|(name, p)| p.as_deref().map(|p| (name, p)))
        .collect()
    }
}

/// Which outputs a run produces. Neighbor search always runs; it feeds
/// every other stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Stages {
    pub neighbors: bool,
    pub coverage: bool,
    pub concentration: bool,
    pub treesim: bool,
    pub tables: bool,
}

impl Stages {
    pub const ALL: Stages =
        Stages { neighbors: true, coverage: true, concentration: true, treesim: true, tables: true };
    pub const NONE: Stages =
        Stages { neighbors: false, coverage: false, concentration: false, treesim: false, tables: false };
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: PathBuf,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RunCounts {
    /// Sentences m.
    pub sentences: usize,
    pub tokens: usize,
    pub dim: usize,
    pub queries: usize,
    pub zero_norm_queries: usize,
    pub short_lists: usize,
    /// Queries whose type has no usable embedding neighbor list.
    pub embed_unmatched: usize,
    /// Sum over positions of |S_{l(s) >= j}|.
    pub positional_support: usize,
    pub subtree_rows: usize,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub status: String,
    pub error: Option<String>,
    pub config: Option<AnalysisConfig>,
    pub inputs: BTreeMap<String, InputDigest>,
    pub counts: RunCounts,
    pub stages: BTreeMap<String, String>,
    pub notes: Vec<String>,
    pub outputs: Vec<String>,
    pub timing_ms: BTreeMap<String, u128>,
}

impl RunManifest {
    fn new(config: &AnalysisConfig) -> Self {
        RunManifest {
            tool: "hsnn".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            status: "running".into(),
            config: Some(config.clone()),
            ..Default::default()
        }
    }

    fn skip(&mut self, stage: &str, why: &str) {
        self.stages.insert(stage.into(), "skipped".into());
        self.notes.push(format!("{stage}: skipped ({why})"));
    }
}

/// Everything a run computed, kept in memory for callers and tests.
#[derive(Debug, Clone, Default)]
pub struct ReportBundle {
    pub neighbors: Vec<NeighborList>,
    pub coverage: Vec<CoverageRecord>,
    pub concentration: Vec<ConcentrationRecord>,
    pub positional: Vec<PositionalSeries>,
    pub strata: Vec<StratifiedTable>,
    pub treesim: Option<TreeSimSummary>,
    pub manifest: RunManifest,
}

impl ReportBundle {
    pub fn series(&self, kind: SeriesKind) -> Option<&PositionalSeries> {
        self.positional.iter().find(|s| s.kind == kind)
    }

    pub fn mean_coverage(&self, kind: CoverageKind) -> Option<f64> {
        let values: Vec<f64> = self.coverage.iter().filter(|r| r.kind == kind).map(|r| r.value).collect();
        (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
    }
}

pub fn file_digest(path: &Path) -> io::Result<InputDigest> {
    let mut f = File::open(path)?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 20];
    let mut bytes = 0u64;
    loop {
        let k = f.read(&mut buf)?;
        if k == 0 {
            break;
        }
        hasher.update(&buf[..k]);
        bytes += k as u64;
    }
    let sha256 = hasher.finalize().iter().map(|b| format!("{b:02x}")).collect();
    Ok(InputDigest { path: path.to_path_buf(), bytes, sha256 })
}

/// Runs the selected stages and writes their outputs plus `manifest.json`
/// into the output directory. The manifest is written on failure too.
pub fn run_pipeline(config: &AnalysisConfig, stages: Stages) -> Result<ReportBundle> {
    std::fs::create_dir_all(&config.out_dir)
        .map_err(|e| PipelineError::Config(format!("{}: {e}", config.out_dir.display())))?;
    let mut manifest = RunManifest::new(config);
    let started = Instant::now();

    let result = (|| {
        config.validate()?;
        for (name, path) in config.inputs() {
            let digest = file_digest(path).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
            manifest.inputs.insert(name.into(), digest);
        }
        let mut builder = rayon::ThreadPoolBuilder::new();
        if let Some(t) = config.threads {
            builder = builder.num_threads(t);
        }
        let pool = builder.build().map_err(|e| PipelineError::Config(e.to_string()))?;
        pool.install(|| execute(config, stages, &mut manifest))
    })();

    manifest.timing_ms.insert("total".into(), started.elapsed().as_millis());
    match &result {
        Ok(_) => manifest.status = "ok".into(),
        Err(e) => {
            manifest.status = "failed".into();
            manifest.error = Some(e.to_string());
        }
    }
    let path = config.out_dir.join(MANIFEST_FILE);
    let written = serde_json::to_string_pretty(&manifest)
        .map_err(io::Error::other)
        .and_then(|json| std::fs::write(&path, json + "\n"));
    let mut bundle = result?;
    written.map_err(|e| PipelineError::stage("write", e))?;
    bundle.manifest = manifest;
    Ok(bundle)
}

fn timed<T>(manifest: &mut RunManifest, name: &str, f: impl FnOnce(&mut RunManifest) -> Result<T>) -> Result<T> {
    let t = Instant::now();
    let out = f(manifest);
    manifest.timing_ms.insert(name.into(), t.elapsed().as_millis());
    out
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    File::create(dir.join(name)).map(BufWriter::new).map_err(|e| PipelineError::stage("write", format!("{name}: {e}")))
}

fn write_output(
    manifest: &mut RunManifest,
    dir: &Path,
    name: &str,
    f: impl FnOnce(BufWriter<File>) -> io::Result<()>,
) -> Result<()> {
    f(create(dir, name)?).map_err(|e| PipelineError::stage("write", format!("{name}: {e}")))?;
    manifest.outputs.push(name.into());
    Ok(())
}

fn execute(config: &AnalysisConfig, stages: Stages, manifest: &mut RunManifest) -> Result<ReportBundle> {
    let out = config.out_dir.as_path();
    let (vectors, table) = timed(manifest, "load", |_| {
        let vectors = load_vector_log(config.vectors.as_deref().unwrap())?;
        let table = load_token_index(config.tokens.as_deref().unwrap(), &vectors)?;
        Ok((vectors, table))
    })?;
    manifest.counts.sentences = table.sentence_count();
    manifest.counts.tokens = table.len();
    manifest.counts.dim = vectors.dim();

    let queries = apply_frequency_band(&table, config.min_freq, config.max_freq);
    let all = timed(manifest, "knn", |_| {
        let index = SimilarityIndex::build(&vectors, &table).map_err(|e| PipelineError::stage("knn", e))?;
        index.all_neighbors(&queries, config.n, config.exclusion).map_err(|e| PipelineError::stage("knn", e))
    })?;
    manifest.counts.queries = all.lists.len();
    manifest.counts.zero_norm_queries = all.skipped.len();
    manifest.counts.short_lists = all.lists.iter().filter(|l| l.short).count();
    if !all.skipped.is_empty() {
        log::warn!("{} zero-norm query rows skipped", all.skipped.len());
    }
    manifest.stages.insert("knn".into(), "ok".into());
    // Empty lists (no admissible candidate at all) carry no metric value.
    let lists: Vec<&NeighborList> = all.lists.iter().filter(|l| !l.is_empty()).collect();

    let mut bundle = ReportBundle::default();
    if stages.neighbors {
        write_output(manifest, out, NEIGHBORS_FILE, |w| write_neighbors_tsv(&all.lists, w))?;
        if config.binary_neighbors {
            write_output(manifest, out, NEIGHBORS_BINARY_FILE, |w| write_neighbors_binary(&all.lists, w))?;
        }
    }

    let want_coverage = stages.coverage || stages.tables;
    if want_coverage {
        timed(manifest, "coverage", |m| {
            bundle.coverage = coverage_stage(config, &table, &lists, m)?;
            Ok(())
        })?;
        for (kind, series) in [(CoverageKind::Embed, SeriesKind::AcpEmbed), (CoverageKind::Lexicon, SeriesKind::AcpLex)]
        {
            let records: Vec<CoverageRecord> = bundle.coverage.iter().filter(|r| r.kind == kind).cloned().collect();
            if records.is_empty() {
                continue;
            }
            let pos: Vec<Positioned> = records.iter().map(Positioned::from).collect();
            bundle.positional.push(positional_mean(&pos, &table, series, config.missing));
            bundle.strata.push(stratify_by_pos(&records, &table, config.variance));
        }
    }

    if stages.concentration || stages.coverage {
        bundle.concentration = timed(manifest, "concentration", |_| {
            lists
                .iter()
                .map(|l| concentration(l, &table).map_err(|e| PipelineError::stage("concentration", e)))
                .collect()
        })?;
        manifest.stages.insert("concentration".into(), "ok".into());
        let pos: Vec<Positioned> = bundle.concentration.iter().map(Positioned::from).collect();
        bundle.positional.push(positional_mean(&pos, &table, SeriesKind::Av, config.missing));
    }
    if let Some(s) = bundle.positional.first() {
        manifest.counts.positional_support = s.support_total();
    }

    if stages.treesim || stages.tables {
        if let Some(parses) = &config.parses {
            let summary = timed(manifest, "treesim", |m| {
                let subtrees = subtree_assignment(parses, &table, &config.continuation)?;
                m.counts.subtree_rows = subtrees.assigned_rows();
                Ok(average_treesim(&all.lists, &subtrees))
            })?;
            manifest.stages.insert("treesim".into(), "ok".into());
            bundle.treesim = Some(summary);
        } else {
            manifest.skip("treesim", "no parses path");
        }
    }

    // Output writing is sequential and in a fixed order.
    if stages.coverage {
        write_output(manifest, out, COVERAGE_FILE, |w| write_coverage_sorted(&bundle.coverage, w))?;
        write_output(manifest, out, POSITIONAL_FILE, |w| report::write_positional_tsv(&bundle.positional, w))?;
        let names = report::emit_figure_data(&bundle.positional, out).map_err(|e| PipelineError::stage("write", e))?;
        manifest.outputs.extend(names);
        write_output(manifest, out, STRATA_FILE, |w| report::write_strata_tsv(&bundle.strata, w))?;
    }
    if stages.concentration {
        write_output(manifest, out, CONCENTRATION_FILE, |w| report::write_concentration_tsv(&bundle.concentration, w))?;
    }
    if stages.treesim {
        if let Some(summary) = &bundle.treesim {
            write_output(manifest, out, TREESIM_FILE, |w| report::write_treesim_tsv(summary, w))?;
        }
    }
    if stages.tables {
        let text = report::render_tables(&bundle.strata, bundle.treesim.as_ref());
        write_output(manifest, out, TABLES_FILE, |mut w| {
            w.write_all(text.as_bytes())?;
            w.flush()
        })?;
    }
    bundle.neighbors = all.lists;
    Ok(bundle)
}

fn write_coverage_sorted<W: Write>(records: &[CoverageRecord], w: W) -> io::Result<()> {
    let mut sorted: Vec<CoverageRecord> = records.to_vec();
    sorted.sort_by_key(|r| (r.row, r.kind));
    report::write_coverage_tsv(&sorted, w)
}

fn coverage_stage(
    config: &AnalysisConfig,
    table: &OccurrenceTable,
    lists: &[&NeighborList],
    manifest: &mut RunManifest,
) -> Result<Vec<CoverageRecord>> {
    let mut records = Vec::new();

    match (&config.embeddings, &config.vocab) {
        (Some(emb_path), Some(vocab_path)) => {
            let embeddings = load_vector_log(emb_path)?;
            let vocab = load_vocab(vocab_path, &embeddings)?;
            let index = EmbeddingIndex::build(&embeddings, &vocab).map_err(|e| PipelineError::stage("coverage", e))?;
            let sq = |t: &str| vocab.row_of(t).map(|r| crate::knn::squared_norm(embeddings.row(r)) > 0.0);
            let types: BTreeSet<&str> =
                lists.iter().map(|l| table.get(l.query).surface.as_str()).filter(|t| sq(t) == Some(true)).collect();
            let types: Vec<&str> = types.into_iter().collect();
            let type_lists = index.neighbors_many(&types, config.n).map_err(|e| PipelineError::stage("coverage", e))?;
            let by_type: HashMap<&str, &TypeNeighborList> =
                types.iter().copied().zip(type_lists.iter()).filter(|(_, l)| !l.entries.is_empty()).collect();
            let opts = CoverageOptions {
                counting: config.counting,
                fold_case: config.fold_case,
                ..CoverageOptions::embedding()
            };
            let mut unmatched = 0;
            for l in lists {
                match by_type.get(table.get(l.query).surface.as_str()) {
                    Some(tl) => records
                        .push(embedding_coverage(l, tl, table, opts).map_err(|e| PipelineError::stage("coverage", e))?),
                    None => unmatched += 1,
                }
            }
            manifest.counts.embed_unmatched = unmatched;
            if unmatched > 0 {
                manifest.notes.push(format!("embedding coverage: {unmatched} queries have no embedding neighbor list"));
            }
            manifest.stages.insert("coverage_embed".into(), "ok".into());
        }
        _ => manifest.skip("coverage_embed", "no embeddings path"),
    }

    match &config.lexicon {
        Some(path) => {
            let lexicon = load_relations(path).map_err(|e| PipelineError::InputInconsistency(e.to_string()))?;
            records.extend(lexical_records(config, table, lists, &lexicon)?);
            manifest.stages.insert("coverage_lexicon".into(), "ok".into());
        }
        None => manifest.skip("coverage_lexicon", "no lexicon path"),
    }
    Ok(records)
}

fn lexical_records(
    config: &AnalysisConfig,
    table: &OccurrenceTable,
    lists: &[&NeighborList],
    lexicon: &RelationLexicon,
) -> Result<Vec<CoverageRecord>> {
    let opts = CoverageOptions { counting: config.counting, fold_case: config.fold_case, ..CoverageOptions::lexical() };
    let mut cache: HashMap<(String, Option<String>), BTreeSet<String>> = HashMap::new();
    let mut out = Vec::with_capacity(lists.len());
    for l in lists {
        let q = table.get(l.query);
        let pos = config.lexicon_pos_filter.then(|| q.pos.clone());
        let word = if config.fold_case { fold(&q.origin_word) } else { q.origin_word.clone() };
        let related = cache
            .entry((word, pos))
            .or_insert_with_key(|(w, p)| lexicon.related_set(w, p.as_deref(), config.fold_case));
        out.push(lexical_coverage(l, related, table, opts).map_err(|e| PipelineError::stage("coverage", e))?);
    }
    Ok(out)
}

/// Maps every row to the smallest-phrase subtree of its origin word, using
/// one parse line per sentence id. Sentences beyond the last parse line are
/// an input inconsistency.
pub fn subtree_assignment(parses: &Path, table: &OccurrenceTable, marker: &str) -> Result<SubtreeAssignment> {
    let lines = load_parse_lines(parses)?;
    let mut assignment = SubtreeAssignment::new(table.len());
    for (sid, rows) in table.sentences() {
        let line = lines.get(sid as usize).ok_or_else(|| {
            PipelineError::InputInconsistency(format!("sentence {sid} has no parse line ({} lines)", lines.len()))
        })?;
        let tree =
            parse_bracketed(line).map_err(|e| PipelineError::stage("treesim", format!("sentence {sid}: {e}")))?;
        let surfaces: Vec<&str> = rows.iter().map(|&r| table.get(r).surface.as_str()).collect();
        let map = align_bpe(&tree.terminals(), &surfaces, marker)
            .map_err(|e| PipelineError::InputInconsistency(format!("sentence {sid}: {e}")))?;
        let handles = (0..map.word_count())
            .map(|w| {
                smallest_phrase_subtree(&tree, w)
                    .map(|s| assignment.push(s))
                    .map_err(|e| PipelineError::stage("treesim", format!("sentence {sid}: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        for (k, &row) in rows.iter().enumerate() {
            assignment.assign(row, handles[map.word_of(k)]);
        }
    }
    Ok(assignment)
}
