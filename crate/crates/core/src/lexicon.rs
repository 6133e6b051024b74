//! WordNet-style relation lexicon loaded from a flat TSV export.
//!
//! Each row is `word<TAB>relation<TAB>related_word[<TAB>pos]` with relation
//! one of `SYN`, `ANT`, `HYPO`, `HYPER`. Lines starting with `#` are comments.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::File;
use std::io::{self, BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum LexiconError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("line {line}: unknown relation tag `{tag}`")]
    UnknownRelationTag { line: usize, tag: String },
    #[error("line {line}: {reason}")]
    MalformedRow { line: usize, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Relation {
    Synonym,
    Antonym,
    Hyponym,
    Hypernym,
}

impl Relation {
    pub const ALL: [Relation; 4] = [Relation::Synonym, Relation::Antonym, Relation::Hyponym, Relation::Hypernym];

    pub fn tag(self) -> &'static str {
        match self {
            Relation::Synonym => "SYN",
            Relation::Antonym => "ANT",
            Relation::Hyponym => "HYPO",
            Relation::Hypernym => "HYPER",
        }
    }
}

impl FromStr for Relation {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        Relation::ALL.into_iter().find(|r| r.tag() == s).ok_or(())
    }
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
struct Entry {
    relation: Relation,
    related: String,
    pos: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RelationLexicon {
    entries: BTreeMap<String, BTreeSet<Entry>>,
    /// Case-folded key -> original keys.
    folded: BTreeMap<String, BTreeSet<String>>,
}

impl RelationLexicon {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds one relation row; duplicates are merged.
    pub fn insert(&mut self, word: &str, relation: Relation, related: &str, pos: Option<&str>) {
        let entry = Entry { relation, related: related.to_string(), pos: pos.map(str::to_string) };
        self.entries.entry(word.to_string()).or_default().insert(entry);
        self.folded.entry(fold(word)).or_default().insert(word.to_string());
    }

    pub fn word_count(&self) -> usize {
        self.entries.len()
    }

    pub fn row_count(&self) -> usize {
        self.entries.values().map(BTreeSet::len).sum()
    }

    /// Words related to `word` by `relation` only.
    pub fn related_by(&self, word: &str, relation: Relation) -> BTreeSet<String> {
        self.entries
            .get(word)
            .into_iter()
            .flatten()
            .filter(|e| e.relation == relation)
            .map(|e| e.related.clone())
            .collect()
    }

    /// R_w: union of synonyms, antonyms, hyponyms and hypernyms of `word`.
    ///
    /// With `pos`, only entries tagged with that POS or untagged entries count.
    /// With `fold_case`, every key that case-folds to the same string matches
    /// and the returned words are case-folded too.
    pub fn related_set(&self, word: &str, pos: Option<&str>, fold_case: bool) -> BTreeSet<String> {
        let keys: Vec<&str> = if fold_case {
            self.folded.get(&fold(word)).into_iter().flatten().map(String::as_str).collect()
        } else {
            vec![word]
        };
        let mut out = BTreeSet::new();
        for key in keys {
            for e in self.entries.get(key).into_iter().flatten() {
                if let (Some(want), Some(have)) = (pos, e.pos.as_deref()) {
                    if want != have {
                        continue;
                    }
                }
                out.insert(if fold_case { fold(&e.related) } else { e.related.clone() });
            }
        }
        out
    }
}

pub fn fold(s: &str) -> String {
    s.to_lowercase()
}

pub fn parse_relations<R: BufRead>(reader: R) -> Result<RelationLexicon, LexiconError> {
    let mut lex = RelationLexicon::new();
    for (k, line) in reader.lines().enumerate() {
        let line_no = k + 1;
        let line = line.map_err(|e| LexiconError::Io { path: PathBuf::from("<stream>"), source: e })?;
        let line = line.trim_end_matches('\r');
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if !(3..=4).contains(&fields.len()) {
            return Err(LexiconError::MalformedRow {
                line: line_no,
                reason: format!("expected 3 or 4 fields, found {}", fields.len()),
            });
        }
        if fields[0].is_empty() || fields[2].is_empty() {
            return Err(LexiconError::MalformedRow { line: line_no, reason: "empty word".into() });
        }
        let relation = fields[1]
            .parse::<Relation>()
            .map_err(|_| LexiconError::UnknownRelationTag { line: line_no, tag: fields[1].to_string() })?;
        let pos = fields.get(3).copied().filter(|p| !p.is_empty());
        lex.insert(fields[0], relation, fields[2], pos);
    }
    Ok(lex)
}

pub fn load_relations(path: &Path) -> Result<RelationLexicon, LexiconError> {
    let file = File::open(path).map_err(|e| LexiconError::Io { path: path.to_path_buf(), source: e })?;
    parse_relations(BufReader::new(file)).map_err(|e| match e {
        LexiconError::Io { source, .. } => LexiconError::Io { path: path.to_path_buf(), source },
        other => other,
    })
}
