//! On-disk artifacts: binary vector logs, token indices, embedding
//! vocabularies and parse files, plus BPE alignment and frequency banding.
//!
//! Vector log layout (all little-endian):
//!
//! ```text
//! b"HSV1" | dim: u32 | count: u64 | count * dim f32, row-major
//! ```

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

pub const VECTOR_MAGIC: &[u8; 4] = b"HSV1";
pub const TOKEN_HEADER: &str = "row_id\tsentence_id\ttoken_id\tsurface\torigin_word\tpos";
pub const VOCAB_HEADER: &str = "row_id\ttoken_type";
pub const DEFAULT_CONTINUATION: &str = "@@";
/// POS placeholder for tokens without a tag.
pub const NO_POS: &str = "_";

const HEADER_LEN: u64 = 4 + 4 + 8;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("bad magic bytes: expected \"HSV1\"")]
    BadMagic,
    #[error("vector log declares {declared} payload bytes but {actual} are present")]
    HeaderMismatch { declared: u64, actual: u64 },
    #[error("vector dimension must be positive")]
    ZeroDimension,
    #[error("non-finite value at row {row}, column {col}")]
    NonFiniteValue { row: usize, col: usize },
    #[error("{rows} index rows but {vectors} vectors")]
    RowCountMismatch { rows: usize, vectors: usize },
    #[error("duplicate position (sentence {sentence}, token {token})")]
    DuplicatePosition { sentence: u64, token: u64 },
    #[error("line {line}: {reason}")]
    MalformedRow { line: usize, reason: String },
    #[error("segments do not reproduce the word sequence at segment {segment}")]
    AlignmentFailure { segment: usize },
    #[error("empty word or segment list")]
    EmptyInput,
}

impl CorpusError {
    fn io(path: &Path, source: io::Error) -> Self {
        CorpusError::Io { path: path.to_path_buf(), source }
    }

    fn malformed(line: usize, reason: impl Into<String>) -> Self {
        CorpusError::MalformedRow { line, reason: reason.into() }
    }
}

pub type Result<T, E = CorpusError> = std::result::Result<T, E>;

/// Dense row-major matrix of hidden states or embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorSet {
    dim: usize,
    data: Vec<f32>,
}

impl VectorSet {
    /// Builds a set from row-major data, checking shape and finiteness.
    pub fn new(dim: usize, data: Vec<f32>) -> Result<Self> {
        if dim == 0 {
            return Err(CorpusError::ZeroDimension);
        }
        if !data.len().is_multiple_of(dim) {
            return Err(CorpusError::HeaderMismatch {
                declared: (data.len() / dim * dim * 4) as u64,
                actual: (data.len() * 4) as u64,
            });
        }
        if let Some(pos) = data.iter().position(|x| !x.is_finite()) {
            return Err(CorpusError::NonFiniteValue { row: pos / dim, col: pos % dim });
        }
        Ok(VectorSet { dim, data })
    }

    pub fn from_rows(dim: usize, rows: &[Vec<f32>]) -> Result<Self> {
        let mut data = Vec::with_capacity(rows.len() * dim);
        for (r, row) in rows.iter().enumerate() {
            if row.len() != dim {
                return Err(CorpusError::malformed(r, format!("row has {} values, expected {dim}", row.len())));
            }
            data.extend_from_slice(row);
        }
        Self::new(dim, data)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn count(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, r: usize) -> &[f32] {
        &self.data[r * self.dim..(r + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f32]> + '_ {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> io::Result<()> {
        w.write_all(VECTOR_MAGIC)?;
        w.write_all(&(self.dim as u32).to_le_bytes())?;
        w.write_all(&(self.count() as u64).to_le_bytes())?;
        for x in &self.data {
            w.write_all(&x.to_le_bytes())?;
        }
        w.flush()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| CorpusError::io(path, e))?;
        self.write_to(BufWriter::new(file)).map_err(|e| CorpusError::io(path, e))
    }

    /// Reads a vector log from a stream. `payload_len`, when known, lets the
    /// size check fail before any payload is read.
    pub fn read_from<R: Read>(mut r: R, payload_len: Option<u64>) -> Result<Self> {
        let io_err = |e: io::Error| CorpusError::Io { path: PathBuf::from("<stream>"), source: e };
        let mut magic = [0u8; 4];
        if read_full(&mut r, &mut magic).map_err(io_err)? < 4 || &magic != VECTOR_MAGIC {
            return Err(CorpusError::BadMagic);
        }
        let mut header = [0u8; 12];
        let got = read_full(&mut r, &mut header).map_err(io_err)?;
        if got < 12 {
            return Err(CorpusError::HeaderMismatch { declared: 12, actual: got as u64 });
        }
        let dim = u32::from_le_bytes(header[0..4].try_into().unwrap()) as usize;
        let count = u64::from_le_bytes(header[4..12].try_into().unwrap());
        if dim == 0 {
            return Err(CorpusError::ZeroDimension);
        }
        let declared = count
            .checked_mul(dim as u64)
            .and_then(|n| n.checked_mul(4))
            .ok_or(CorpusError::HeaderMismatch { declared: u64::MAX, actual: payload_len.unwrap_or(0) })?;
        if let Some(actual) = payload_len {
            if actual != declared {
                return Err(CorpusError::HeaderMismatch { declared, actual });
            }
        }

        // Capacity is capped so a corrupt header cannot force a huge allocation.
        let mut data = Vec::with_capacity((count as usize).saturating_mul(dim).min(1 << 26));
        let mut row_bytes = vec![0u8; dim * 4];
        for row in 0..count as usize {
            let got = read_full(&mut r, &mut row_bytes).map_err(io_err)?;
            if got < row_bytes.len() {
                return Err(CorpusError::HeaderMismatch { declared, actual: (row * dim * 4 + got) as u64 });
            }
            for (col, chunk) in row_bytes.chunks_exact(4).enumerate() {
                let x = f32::from_le_bytes(chunk.try_into().unwrap());
                if !x.is_finite() {
                    return Err(CorpusError::NonFiniteValue { row, col });
                }
                data.push(x);
            }
        }
        let mut extra = [0u8; 1];
        if read_full(&mut r, &mut extra).map_err(io_err)? > 0 {
            return Err(CorpusError::HeaderMismatch { declared, actual: declared + 1 });
        }
        Ok(VectorSet { dim, data })
    }
}

fn read_full<R: Read>(r: &mut R, buf: &mut [u8]) -> io::Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(k) => filled += k,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(filled)
}

pub fn load_vector_log(path: &Path) -> Result<VectorSet> {
    let file = File::open(path).map_err(|e| CorpusError::io(path, e))?;
    let len = file.metadata().map_err(|e| CorpusError::io(path, e))?.len();
    let payload = len.checked_sub(HEADER_LEN);
    VectorSet::read_from(BufReader::with_capacity(1 << 20, file), payload).map_err(|e| match e {
        CorpusError::Io { source, .. } => CorpusError::io(path, source),
        other => other,
    })
}

/// One logged token: a row of the vector log plus its position and annotations.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenOccurrence {
    pub row_id: usize,
    pub sentence_id: u64,
    pub token_id: u64,
    pub surface: String,
    pub origin_word: String,
    pub pos: String,
}

/// Token metadata indexed by row; `occurrences[r].row_id == r` always holds.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct OccurrenceTable {
    occurrences: Vec<TokenOccurrence>,
    sentence_lengths: BTreeMap<u64, usize>,
}

impl OccurrenceTable {
    /// Validates and indexes occurrences. Rows may arrive in any order but
    /// their row ids must be exactly `0..len`.
    pub fn new(mut occurrences: Vec<TokenOccurrence>) -> Result<Self> {
        occurrences.sort_by_key(|o| o.row_id);
        for (r, occ) in occurrences.iter().enumerate() {
            if occ.row_id != r {
                return Err(CorpusError::malformed(
                    r + 1,
                    format!("row ids must cover 0..{} exactly; found {}", occurrences.len(), occ.row_id),
                ));
            }
        }
        let mut seen = HashSet::with_capacity(occurrences.len());
        let mut sentence_lengths: BTreeMap<u64, usize> = BTreeMap::new();
        for occ in &occurrences {
            if !seen.insert((occ.sentence_id, occ.token_id)) {
                return Err(CorpusError::DuplicatePosition { sentence: occ.sentence_id, token: occ.token_id });
            }
            let len = sentence_lengths.entry(occ.sentence_id).or_insert(0);
            *len = (*len).max(occ.token_id as usize + 1);
        }
        Ok(OccurrenceTable { occurrences, sentence_lengths })
    }

    pub fn len(&self) -> usize {
        self.occurrences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.occurrences.is_empty()
    }

    pub fn get(&self, row: usize) -> &TokenOccurrence {
        &self.occurrences[row]
    }

    pub fn occurrences(&self) -> &[TokenOccurrence] {
        &self.occurrences
    }

    /// l(s) for every sentence, taken as one past the largest token id seen.
    pub fn sentence_lengths(&self) -> &BTreeMap<u64, usize> {
        &self.sentence_lengths
    }

    pub fn sentence_count(&self) -> usize {
        self.sentence_lengths.len()
    }

    pub fn max_sentence_length(&self) -> usize {
        self.sentence_lengths.values().copied().max().unwrap_or(0)
    }

    /// Number of sentences with l(s) >= j for j = 1..=max length; index 0 is j = 1.
    pub fn sentences_at_least(&self) -> Vec<usize> {
        let max = self.max_sentence_length();
        let mut by_len = vec![0usize; max + 1];
        for &l in self.sentence_lengths.values() {
            by_len[l] += 1;
        }
        let mut out = vec![0usize; max];
        let mut running = 0;
        for j in (1..=max).rev() {
            running += by_len[j];
            out[j - 1] = running;
        }
        out
    }

    /// Rows of each sentence ordered by token id.
    pub fn sentences(&self) -> BTreeMap<u64, Vec<usize>> {
        let mut out: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
        for occ in &self.occurrences {
            out.entry(occ.sentence_id).or_default().push(occ.row_id);
        }
        for rows in out.values_mut() {
            rows.sort_by_key(|&r| self.occurrences[r].token_id);
        }
        out
    }

    pub fn write_tsv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "{TOKEN_HEADER}")?;
        for o in &self.occurrences {
            writeln!(
                w,
                "{}\t{}\t{}\t{}\t{}\t{}",
                o.row_id, o.sentence_id, o.token_id, o.surface, o.origin_word, o.pos
            )?;
        }
        w.flush()
    }
}

fn open_lines(path: &Path) -> Result<io::Lines<BufReader<File>>> {
    let file = File::open(path).map_err(|e| CorpusError::io(path, e))?;
    Ok(BufReader::new(file).lines())
}

pub fn load_token_index(path: &Path, vectors: &VectorSet) -> Result<OccurrenceTable> {
    let mut lines = open_lines(path)?;
    let header = lines
        .next()
        .transpose()
        .map_err(|e| CorpusError::io(path, e))?
        .ok_or_else(|| CorpusError::malformed(1, "missing header"))?;
    if header.trim_end_matches('\r') != TOKEN_HEADER {
        return Err(CorpusError::malformed(1, format!("expected header `{TOKEN_HEADER}`")));
    }
    let mut occurrences = Vec::new();
    for (k, line) in lines.enumerate() {
        let line_no = k + 2;
        let line = line.map_err(|e| CorpusError::io(path, e))?;
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        occurrences.push(parse_token_row(line, line_no)?);
    }
    if occurrences.len() != vectors.count() {
        return Err(CorpusError::RowCountMismatch { rows: occurrences.len(), vectors: vectors.count() });
    }
    OccurrenceTable::new(occurrences)
}

fn parse_token_row(line: &str, line_no: usize) -> Result<TokenOccurrence> {
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() != 6 {
        return Err(CorpusError::malformed(line_no, format!("expected 6 fields, found {}", fields.len())));
    }
    let int = |s: &str, name: &str| -> Result<u64> {
        s.parse::<u64>()
            .map_err(|_| CorpusError::malformed(line_no, format!("{name} `{s}` is not a non-negative integer")))
    };
    if fields[3].is_empty() {
        return Err(CorpusError::malformed(line_no, "empty surface"));
    }
    Ok(TokenOccurrence {
        row_id: int(fields[0], "row_id")? as usize,
        sentence_id: int(fields[1], "sentence_id")?,
        token_id: int(fields[2], "token_id")?,
        surface: fields[3].to_string(),
        origin_word: fields[4].to_string(),
        pos: if fields[5].is_empty() { NO_POS.to_string() } else { fields[5].to_string() },
    })
}

/// Embedding vocabulary: row `r` of the embedding matrix belongs to `types[r]`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Vocab {
    types: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    pub fn new(types: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(types.len());
        for (r, t) in types.iter().enumerate() {
            if index.insert(t.clone(), r).is_some() {
                return Err(CorpusError::malformed(r + 2, format!("duplicate token type `{t}`")));
            }
        }
        Ok(Vocab { types, index })
    }

    pub fn len(&self) -> usize {
        self.types.len()
    }

    pub fn is_empty(&self) -> bool {
        self.types.is_empty()
    }

    pub fn types(&self) -> &[String] {
        &self.types
    }

    pub fn row_of(&self, token_type: &str) -> Option<usize> {
        self.index.get(token_type).copied()
    }

    pub fn write_tsv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "{VOCAB_HEADER}")?;
        for (r, t) in self.types.iter().enumerate() {
            writeln!(w, "{r}\t{t}")?;
        }
        w.flush()
    }
}

pub fn load_vocab(path: &Path, embeddings: &VectorSet) -> Result<Vocab> {
    let mut lines = open_lines(path)?;
    let header = lines
        .next()
        .transpose()
        .map_err(|e| CorpusError::io(path, e))?
        .ok_or_else(|| CorpusError::malformed(1, "missing header"))?;
    if header.trim_end_matches('\r') != VOCAB_HEADER {
        return Err(CorpusError::malformed(1, format!("expected header `{VOCAB_HEADER}`")));
    }
    let mut rows: Vec<(usize, String, usize)> = Vec::new();
    for (k, line) in lines.enumerate() {
        let line_no = k + 2;
        let line = line.map_err(|e| CorpusError::io(path, e))?;
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let (id, token) = line.split_once('\t').ok_or_else(|| CorpusError::malformed(line_no, "expected 2 fields"))?;
        if token.is_empty() || token.contains('\t') {
            return Err(CorpusError::malformed(line_no, "expected a single non-empty token type"));
        }
        let id = id
            .parse::<usize>()
            .map_err(|_| CorpusError::malformed(line_no, format!("row_id `{id}` is not an integer")))?;
        rows.push((id, token.to_string(), line_no));
    }
    if rows.len() != embeddings.count() {
        return Err(CorpusError::RowCountMismatch { rows: rows.len(), vectors: embeddings.count() });
    }
    rows.sort_by_key(|r| r.0);
    for (expected, (id, _, line_no)) in rows.iter().enumerate() {
        if *id != expected {
            return Err(CorpusError::malformed(*line_no, format!("row ids must cover 0..{} exactly", rows.len())));
        }
    }
    Vocab::new(rows.into_iter().map(|(_, t, _)| t).collect())
}

/// Reads a parse file: one bracketed tree per line, line number = sentence id.
/// Blank lines are kept so that numbering stays aligned.
pub fn load_parse_lines(path: &Path) -> Result<Vec<String>> {
    open_lines(path)?
        .map(|l| l.map(|s| s.trim_end_matches('\r').to_string()).map_err(|e| CorpusError::io(path, e)))
        .collect()
}

/// For one sentence, the index of the pre-BPE word each segment came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentMap {
    segment_to_word: Vec<usize>,
}

impl SegmentMap {
    pub fn segment_to_word(&self) -> &[usize] {
        &self.segment_to_word
    }

    pub fn word_of(&self, segment: usize) -> usize {
        self.segment_to_word[segment]
    }

    pub fn word_count(&self) -> usize {
        self.segment_to_word.last().map_or(0, |w| w + 1)
    }

    /// Half-open segment ranges, one per word.
    pub fn word_boundaries(&self) -> Vec<(usize, usize)> {
        let mut out: Vec<(usize, usize)> = Vec::with_capacity(self.word_count());
        for (s, &w) in self.segment_to_word.iter().enumerate() {
            if w == out.len() {
                out.push((s, s + 1));
            } else {
                out[w].1 = s + 1;
            }
        }
        out
    }

    /// Copies a word-level annotation onto every segment of that word.
    pub fn propagate<T: Clone>(&self, per_word: &[T]) -> Vec<T> {
        self.segment_to_word.iter().map(|&w| per_word[w].clone()).collect()
    }
}

/// Maps BPE segments back to the words they were cut from.
///
/// A segment ending in `marker` continues into the next segment; any other
/// segment closes the current word. Each closed word must equal the
/// corresponding entry of `words`.
pub fn align_bpe<W: AsRef<str>, S: AsRef<str>>(words: &[W], segments: &[S], marker: &str) -> Result<SegmentMap> {
    if words.is_empty() || segments.is_empty() {
        return Err(CorpusError::EmptyInput);
    }
    let mut map = Vec::with_capacity(segments.len());
    let mut word = 0usize;
    let mut consumed = 0usize;
    for (s, seg) in segments.iter().enumerate() {
        let seg = seg.as_ref();
        let (piece, continues) = match seg.strip_suffix(marker) {
            Some(p) if !marker.is_empty() => (p, true),
            _ => (seg, false),
        };
        let target = words.get(word).map(|w| w.as_ref()).ok_or(CorpusError::AlignmentFailure { segment: s })?;
        let rest = &target[consumed..];
        if !rest.starts_with(piece) || (piece.is_empty() && !continues) {
            return Err(CorpusError::AlignmentFailure { segment: s });
        }
        consumed += piece.len();
        map.push(word);
        let exhausted = consumed == target.len();
        match (continues, exhausted) {
            (false, true) => {
                word += 1;
                consumed = 0;
            }
            (true, false) => {}
            _ => return Err(CorpusError::AlignmentFailure { segment: s }),
        }
    }
    if word != words.len() {
        return Err(CorpusError::AlignmentFailure { segment: segments.len() });
    }
    Ok(SegmentMap { segment_to_word: map })
}

/// Rows selected as k-NN queries, ascending.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct QuerySet {
    rows: Vec<usize>,
}

impl QuerySet {
    pub fn from_rows(mut rows: Vec<usize>) -> Self {
        rows.sort_unstable();
        rows.dedup();
        QuerySet { rows }
    }

    pub fn rows(&self) -> &[usize] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn contains(&self, row: usize) -> bool {
        self.rows.binary_search(&row).is_ok()
    }
}

/// Corpus frequency of each surface type.
pub fn surface_frequencies(table: &OccurrenceTable) -> HashMap<&str, u64> {
    let mut freq: HashMap<&str, u64> = HashMap::new();
    for occ in table.occurrences() {
        *freq.entry(occ.surface.as_str()).or_insert(0) += 1;
    }
    freq
}

/// Selects rows whose surface type frequency lies in `[min_freq, max_freq]`.
pub fn apply_frequency_band(table: &OccurrenceTable, min_freq: u64, max_freq: u64) -> QuerySet {
    let freq = surface_frequencies(table);
    let rows = table
        .occurrences()
        .iter()
        .filter(|o| {
            let f = freq[o.surface.as_str()];
            min_freq <= f && f <= max_freq
        })
        .map(|o| o.row_id)
        .collect();
    QuerySet { rows }
}
