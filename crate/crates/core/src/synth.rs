//! Synthetic fixture bundles with planted structure.
//!
//! Word types are grouped into clusters. Each type gets an embedding near
//! its cluster center; each occurrence's hidden state is that embedding,
//! optionally pulled toward a per-sentence context vector (more strongly at
//! later positions), plus isotropic Gaussian noise. Lexical relations are
//! planted only between types of the same cluster, and every sentence gets a
//! parse from a small template grammar.

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpusio::{CorpusError, OccurrenceTable, TokenOccurrence, VectorSet, Vocab};
use crate::lexicon::Relation;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synthesis spec: {0}")]
    Spec(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub clusters: usize,
    pub types_per_cluster: usize,
    /// Occurrences generated per cluster, spread evenly over its types.
    pub tokens_per_cluster: usize,
    pub dim: usize,
    /// Standard deviation of the hidden-state noise, as a fraction of the
    /// embedding norm (per-coordinate sd = noise * |e| / sqrt(dim)).
    pub noise: f64,
    /// Distance of each type embedding from its cluster center, relative to
    /// the center's unit norm.
    pub type_spread: f64,
    /// Probability that an ordered pair of types in one cluster is related.
    pub planted_coverage: f64,
    /// Weight of the sentence context vector at the last position; grows
    /// linearly from 0 at the first position.
    pub mixing: f64,
    pub min_sentence_len: usize,
    pub max_sentence_len: usize,
    /// Fraction of types written as two BPE segments (`stem@@ suffix`).
    pub bpe_fraction: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            clusters: 10,
            types_per_cluster: 11,
            tokens_per_cluster: 330,
            dim: 32,
            noise: 0.05,
            type_spread: 0.3,
            planted_coverage: 1.0,
            mixing: 0.0,
            min_sentence_len: 5,
            max_sentence_len: 20,
            bpe_fraction: 0.0,
            seed: 1,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let err = |m: &str| Err(SynthError::Spec(m.to_string()));
        if self.dim < 2 {
            return err("dim must be at least 2");
        }
        if self.clusters == 0 || self.types_per_cluster == 0 {
            return err("clusters and types_per_cluster must be positive");
        }
        if self.tokens_per_cluster < self.types_per_cluster {
            return err("tokens_per_cluster must be at least types_per_cluster");
        }
        if self.min_sentence_len == 0 || self.min_sentence_len > self.max_sentence_len {
            return err("sentence length range must satisfy 1 <= min <= max");
        }
        for (name, v) in [("planted_coverage", self.planted_coverage), ("bpe_fraction", self.bpe_fraction)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(SynthError::Spec(format!("{name} must lie in [0, 1]")));
            }
        }
        for (name, v) in [("noise", self.noise), ("type_spread", self.type_spread), ("mixing", self.mixing)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(SynthError::Spec(format!("{name} must be finite and non-negative")));
            }
        }
        Ok(())
    }
}

const POS_CYCLE: [&str; 4] = ["NOUN", "VERB", "ADJ", "ADV"];
const SUFFIXES: [&str; 3] = ["s", "ed", "ly"];

/// Stem of the type `t` of cluster `c`; the cluster is recoverable with [`cluster_of`].
pub fn type_name(cluster: usize, t: usize) -> String {
    format!("c{cluster:03}w{t:03}")
}

/// Cluster index of a generated word or segment, `None` for suffix segments.
pub fn cluster_of(token: &str) -> Option<usize> {
    let rest = token.strip_prefix('c')?;
    rest.get(..3)?.parse().ok().filter(|_| rest.get(3..4) == Some("w"))
}

#[derive(Debug, Clone)]
struct WordType {
    word: String,
    segments: Vec<String>,
    pos: &'static str,
    cluster: usize,
}

/// A generated bundle held in memory.
#[derive(Debug, Clone)]
pub struct Synthetic {
    pub vectors: VectorSet,
    pub table: OccurrenceTable,
    pub embeddings: VectorSet,
    pub vocab: Vocab,
    pub parses: Vec<String>,
    /// (word, relation, related word)
    pub relations: Vec<(String, Relation, String)>,
}

/// File locations of a written bundle.
#[derive(Debug, Clone, PartialEq)]
pub struct FixturePaths {
    pub vectors: PathBuf,
    pub tokens: PathBuf,
    pub embeddings: PathBuf,
    pub vocab: PathBuf,
    pub parses: PathBuf,
    pub lexicon: PathBuf,
}

impl FixturePaths {
    pub fn in_dir(dir: &Path) -> Self {
        FixturePaths {
            vectors: dir.join("vectors.bin"),
            tokens: dir.join("tokens.tsv"),
            embeddings: dir.join("embeddings.bin"),
            vocab: dir.join("vocab.tsv"),
            parses: dir.join("parses.txt"),
            lexicon: dir.join("lexicon.tsv"),
        }
    }
}

fn gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

fn unit(v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

pub fn generate(spec: &SynthSpec) -> Result<Synthetic, SynthError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let dim = spec.dim;

    // Word types and their BPE segmentation.
    let mut types = Vec::with_capacity(spec.clusters * spec.types_per_cluster);
    for c in 0..spec.clusters {
        for t in 0..spec.types_per_cluster {
            let stem = type_name(c, t);
            let pos = POS_CYCLE[types.len() % POS_CYCLE.len()];
            let (word, segments) = if rng.random::<f64>() < spec.bpe_fraction {
                let suffix = SUFFIXES[rng.random_range(0..SUFFIXES.len())];
                (format!("{stem}{suffix}"), vec![format!("{stem}@@"), suffix.to_string()])
            } else {
                (stem.clone(), vec![stem])
            };
            types.push(WordType { word, segments, pos, cluster: c });
        }
    }

    // Embedding vocabulary over segment types.
    let centers: Vec<Vec<f64>> = (0..spec.clusters)
        .map(|c| {
            if spec.clusters <= dim {
                (0..dim).map(|i| if i == c { 1.0 } else { 0.0 }).collect()
            } else {
                unit(gaussian(&mut rng, dim))
            }
        })
        .collect();
    let mut vocab_types: Vec<String> = Vec::new();
    let mut embed_rows: Vec<Vec<f64>> = Vec::new();
    let mut segment_rows: Vec<Vec<usize>> = Vec::with_capacity(types.len());
    for ty in &types {
        let dir = unit(gaussian(&mut rng, dim));
        let e: Vec<f64> = centers[ty.cluster].iter().zip(&dir).map(|(c, d)| c + spec.type_spread * d).collect();
        vocab_types.push(ty.segments[0].clone());
        embed_rows.push(e);
        segment_rows.push(vec![vocab_types.len() - 1]);
    }
    for suffix in SUFFIXES {
        if types.iter().any(|t| t.segments.len() > 1 && t.segments[1] == suffix) {
            vocab_types.push(suffix.to_string());
            embed_rows.push(unit(gaussian(&mut rng, dim)));
        }
    }
    for (ty, rows) in types.iter().zip(segment_rows.iter_mut()) {
        if let Some(suffix) = ty.segments.get(1) {
            rows.push(vocab_types.iter().position(|v| v == suffix).unwrap());
        }
    }

    // Word occurrences, shuffled and cut into sentences.
    let mut stream: Vec<usize> = Vec::with_capacity(spec.clusters * spec.tokens_per_cluster);
    for c in 0..spec.clusters {
        for k in 0..spec.tokens_per_cluster {
            stream.push(c * spec.types_per_cluster + k % spec.types_per_cluster);
        }
    }
    stream.shuffle(&mut rng);
    let mut sentences: Vec<Vec<usize>> = Vec::new();
    let mut rest = &stream[..];
    while !rest.is_empty() {
        let len = rng.random_range(spec.min_sentence_len..=spec.max_sentence_len).min(rest.len());
        sentences.push(rest[..len].to_vec());
        rest = &rest[len..];
    }

    let mut occurrences = Vec::new();
    let mut hidden: Vec<f32> = Vec::new();
    let mut parses = Vec::with_capacity(sentences.len());
    for (s, words) in sentences.iter().enumerate() {
        let context = unit(gaussian(&mut rng, dim));
        let seg_count: usize = words.iter().map(|&w| types[w].segments.len()).sum();
        let mut j = 0usize;
        for &w in words {
            let ty = &types[w];
            for (seg, &erow) in ty.segments.iter().zip(&segment_rows[w]) {
                let e = &embed_rows[erow];
                let alpha = if seg_count > 1 { spec.mixing * j as f64 / (seg_count - 1) as f64 } else { 0.0 };
                let enorm = e.iter().map(|x| x * x).sum::<f64>().sqrt();
                let sd = spec.noise * enorm / (dim as f64).sqrt();
                let z = gaussian(&mut rng, dim);
                for i in 0..dim {
                    let mixed = (1.0 - alpha) * e[i] + alpha * enorm * context[i];
                    hidden.push((mixed + sd * z[i]) as f32);
                }
                occurrences.push(TokenOccurrence {
                    row_id: occurrences.len(),
                    sentence_id: s as u64,
                    token_id: j as u64,
                    surface: seg.clone(),
                    origin_word: ty.word.clone(),
                    pos: ty.pos.to_string(),
                });
                j += 1;
            }
        }
        parses.push(template_parse(words.iter().map(|&w| &types[w]), &mut rng));
    }

    let mut relations = Vec::new();
    for c in 0..spec.clusters {
        let members = &types[c * spec.types_per_cluster..(c + 1) * spec.types_per_cluster];
        for a in members {
            for b in members {
                if a.word != b.word && rng.random::<f64>() < spec.planted_coverage {
                    let rel = Relation::ALL[rng.random_range(0..Relation::ALL.len())];
                    relations.push((a.word.clone(), rel, b.word.clone()));
                }
            }
        }
    }

    let embed_flat: Vec<f32> = embed_rows.iter().flatten().map(|&x| x as f32).collect();
    Ok(Synthetic {
        vectors: VectorSet::new(dim, hidden)?,
        table: OccurrenceTable::new(occurrences)?,
        embeddings: VectorSet::new(dim, embed_flat)?,
        vocab: Vocab::new(vocab_types)?,
        parses,
        relations,
    })
}

#[derive(Clone, Copy, PartialEq)]
enum Phrase {
    Np,
    Vp,
    Advp,
}

impl fmt::Display for Phrase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phrase::Np => "NP",
            Phrase::Vp => "VP",
            Phrase::Advp => "ADVP",
        })
    }
}

/// Groups words into flat phrases by POS (at most three words each) and
/// sometimes nests a noun phrase inside a preceding verb phrase.
fn template_parse<'a>(words: impl Iterator<Item = &'a WordType>, rng: &mut ChaCha8Rng) -> String {
    let mut groups: Vec<(Phrase, Vec<String>)> = Vec::new();
    for ty in words {
        let (phrase, tag) = match ty.pos {
            "NOUN" => (Phrase::Np, "NN"),
            "ADJ" => (Phrase::Np, "JJ"),
            "VERB" => (Phrase::Vp, "VBZ"),
            _ => (Phrase::Advp, "RB"),
        };
        let leaf = format!("({tag} {})", ty.word);
        match groups.last_mut() {
            Some((p, leaves)) if *p == phrase && leaves.len() < 3 => leaves.push(leaf),
            _ => groups.push((phrase, vec![leaf])),
        }
    }
    let mut parts: Vec<String> = Vec::new();
    let mut k = 0;
    while k < groups.len() {
        let (phrase, leaves) = &groups[k];
        let inner = leaves.join(" ");
        if *phrase == Phrase::Vp && k + 1 < groups.len() && groups[k + 1].0 == Phrase::Np && rng.random::<bool>() {
            let np = groups[k + 1].1.join(" ");
            parts.push(format!("(VP {inner} (NP {np}))"));
            k += 2;
        } else {
            parts.push(format!("({phrase} {inner})"));
            k += 1;
        }
    }
    format!("(S {})", parts.join(" "))
}

impl Synthetic {
    pub fn write(&self, dir: &Path) -> Result<FixturePaths, SynthError> {
        let paths = FixturePaths::in_dir(dir);
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |e| SynthError::Io { path, source: e }
        };
        std::fs::create_dir_all(dir).map_err(io(dir))?;
        self.vectors.save(&paths.vectors)?;
        self.embeddings.save(&paths.embeddings)?;
        let create = |p: &Path| File::create(p).map(BufWriter::new).map_err(io(p));
        self.table.write_tsv(create(&paths.tokens)?).map_err(io(&paths.tokens))?;
        self.vocab.write_tsv(create(&paths.vocab)?).map_err(io(&paths.vocab))?;

        let mut w = create(&paths.parses)?;
        for p in &self.parses {
            writeln!(w, "{p}").map_err(io(&paths.parses))?;
        }
        w.flush().map_err(io(&paths.parses))?;

        let mut w = create(&paths.lexicon)?;
        for (a, rel, b) in &self.relations {
            writeln!(w, "{a}\t{rel}\t{b}").map_err(io(&paths.lexicon))?;
        }
        w.flush().map_err(io(&paths.lexicon))?;
        Ok(paths)
    }
}

pub fn generate_synthetic(spec: &SynthSpec, dir: &Path) -> Result<FixturePaths, SynthError> {
    generate(spec)?.write(dir)
}
