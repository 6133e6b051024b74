//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails. Pass substrings as arguments to run a subset:
//! `cargo test --release -p hsnn-cli --test acceptance -- knn planted`.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use hsnn::corpusio::{OccurrenceTable, QuerySet, TokenOccurrence, VectorSet};
use hsnn::knn::{ExclusionPolicy, Neighbor, NeighborList, SimilarityIndex, TypeNeighborList};
use hsnn::lexicon::load_relations;
use hsnn::metrics::{
    concentration, embedding_coverage, lexical_coverage, positional_mean, CoverageKind, CoverageOptions, MissingPolicy,
    Positioned, SeriesKind,
};
use hsnn::pipeline::{run_pipeline, AnalysisConfig, RunManifest, Stages, MANIFEST_FILE};
use hsnn::synth::{cluster_of, generate_synthetic, FixturePaths, SynthSpec};
use hsnn::treesim::{parse_bracketed, parseval, smallest_phrase_subtree, LabeledSpan, SubtreeSpan};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------------------------------------------------------------- k-NN

fn random_corpus(rng: &mut ChaCha8Rng, quantized: bool) -> (VectorSet, OccurrenceTable) {
    let rows = rng.random_range(50..=500);
    let dim = rng.random_range(2..=64);
    let types = rng.random_range(5..=60);
    let mut occ = Vec::with_capacity(rows);
    let (mut sid, mut tid) = (0u64, 0u64);
    for r in 0..rows {
        let w = format!("t{}", rng.random_range(0..types));
        occ.push(TokenOccurrence {
            row_id: r,
            sentence_id: sid,
            token_id: tid,
            surface: w.clone(),
            origin_word: w,
            pos: "_".into(),
        });
        tid += 1;
        if rng.random_bool(0.1) {
            sid += 1;
            tid = 0;
        }
    }
    let mut data: Vec<f32> = (0..rows * dim)
        .map(|_| {
            if quantized {
                rng.random_range(-3i32..=3) as f32
            } else {
                rng.sample::<f32, _>(rand_distr::StandardNormal)
            }
        })
        .collect();
    // exact duplicates and a zero row exercise ties and unqueryable rows
    for _ in 0..5 {
        let (a, b) = (rng.random_range(0..rows), rng.random_range(0..rows));
        let src: Vec<f32> = data[a * dim..(a + 1) * dim].to_vec();
        data[b * dim..(b + 1) * dim].copy_from_slice(&src);
    }
    let z = rng.random_range(0..rows);
    data[z * dim..(z + 1) * dim].fill(0.0);
    (VectorSet::new(dim, data).unwrap(), OccurrenceTable::new(occ).unwrap())
}

/// Exhaustive sort over every admissible candidate with a plain serial sum.
fn oracle_neighbors(v: &VectorSet, t: &OccurrenceTable, q: usize, n: usize, policy: ExclusionPolicy) -> Vec<Neighbor> {
    let dot = |a: &[f32], b: &[f32]| a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum::<f64>();
    let qq = dot(v.row(q), v.row(q));
    let mut all: Vec<(f64, (u64, u64), usize)> = Vec::new();
    for c in 0..v.count() {
        let cc = dot(v.row(c), v.row(c));
        let same_type = t.get(c).surface == t.get(q).surface;
        if c == q || cc == 0.0 || (policy == ExclusionPolicy::SameType && same_type) {
            continue;
        }
        let s = (dot(v.row(q), v.row(c)) / (qq * cc).sqrt()).clamp(-1.0, 1.0);
        all.push((s, (t.get(c).sentence_id, t.get(c).token_id), c));
    }
    all.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    all.into_iter().take(n).map(|(score, _, row)| Neighbor { row, score }).collect()
}

fn knn_exactness() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut lists = 0;
    for k in 0..20 {
        let (v, t) = random_corpus(&mut rng, k % 2 == 1);
        let idx = SimilarityIndex::build(&v, &t).map_err(|e| e.to_string())?;
        let all = QuerySet::from_rows((0..t.len()).collect());
        for policy in [ExclusionPolicy::SameType, ExclusionPolicy::SelfOnly] {
            let got = idx.all_neighbors(&all, 10, policy).map_err(|e| e.to_string())?;
            for list in &got.lists {
                let want = oracle_neighbors(&v, &t, list.query, 10, policy);
                let rows_got: Vec<usize> = list.entries.iter().map(|e| e.row).collect();
                let rows_want: Vec<usize> = want.iter().map(|e| e.row).collect();
                ensure(rows_got == rows_want, || {
                    format!("corpus {k} query {} ({policy:?}): {rows_got:?} != {rows_want:?}", list.query)
                })?;
                for (a, b) in list.entries.iter().zip(&want) {
                    ensure((a.score - b.score).abs() <= 1e-6, || {
                        format!("corpus {k} query {}: score {} vs {}", list.query, a.score, b.score)
                    })?;
                }
                lists += 1;
            }
        }
    }
    Ok(format!("{lists} lists over 20 corpora, both exclusion policies"))
}

// ---------------------------------------------------------------- formulas

fn formula_oracles() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0f64;
    for fixture in 0..1000 {
        let vocab = rng.random_range(2..12);
        let rows = rng.random_range(2..40);
        let occ: Vec<TokenOccurrence> = (0..rows)
            .map(|r| {
                let surface = format!("s{}", rng.random_range(0..vocab));
                let origin_word = format!("w{}", rng.random_range(0..vocab));
                TokenOccurrence { row_id: r, sentence_id: 0, token_id: r as u64, surface, origin_word, pos: "_".into() }
            })
            .collect();
        let table = OccurrenceTable::new(occ).unwrap();
        let n = rng.random_range(1..=12);
        let list = NeighborList {
            query: 0,
            entries: (0..n)
                .map(|_| Neighbor { row: rng.random_range(1..rows), score: rng.random_range(-1.0..=1.0) })
                .collect(),
            short: false,
        };
        let ne: BTreeSet<String> = (0..vocab).filter(|_| rng.random_bool(0.4)).map(|i| format!("s{i}")).collect();
        let rw: BTreeSet<String> = (0..vocab).filter(|_| rng.random_bool(0.4)).map(|i| format!("w{i}")).collect();
        let type_list = TypeNeighborList {
            query_type: "q".into(),
            entries: ne.iter().map(|t| (t.clone(), 0.0)).collect(),
            short: false,
        };

        // direct definitions
        let mut hits_e = 0usize;
        let mut hits_w = 0usize;
        let mut sq = 0f64;
        for e in &list.entries {
            let o = table.get(e.row);
            if ne.contains(&o.surface) {
                hits_e += 1;
            }
            if rw.contains(&o.origin_word) {
                hits_w += 1;
            }
            sq += (1.0 - e.score).powi(2);
        }
        let want = [hits_e as f64 / n as f64, hits_w as f64 / n as f64, sq / n as f64];

        let got = [
            embedding_coverage(&list, &type_list, &table, CoverageOptions::embedding())
                .map_err(|e| e.to_string())?
                .value,
            lexical_coverage(&list, &rw, &table, CoverageOptions::lexical()).map_err(|e| e.to_string())?.value,
            concentration(&list, &table).map_err(|e| e.to_string())?.value,
        ];
        for (name, (g, w)) in
            ["embedding coverage", "lexical coverage", "concentration"].iter().zip(got.iter().zip(want))
        {
            let d = (g - w).abs();
            worst = worst.max(d);
            ensure(d <= 1e-12, || format!("fixture {fixture} {name}: {g} vs {w}"))?;
        }
    }
    Ok(format!("1000 fixtures, max |diff| = {worst:e}"))
}

// ---------------------------------------------------------------- positional

fn positional_identity() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0f64;
    for corpus in 0..200 {
        let sentences = rng.random_range(1..30);
        let lengths: Vec<usize> = (0..sentences).map(|_| rng.random_range(1..25)).collect();
        let mut occ = Vec::new();
        for (s, &l) in lengths.iter().enumerate() {
            for j in 0..l {
                occ.push(TokenOccurrence {
                    row_id: occ.len(),
                    // sparse, unordered-looking sentence ids
                    sentence_id: (s * 7 + 3) as u64,
                    token_id: j as u64,
                    surface: "x".into(),
                    origin_word: "x".into(),
                    pos: "_".into(),
                });
            }
        }
        let table = OccurrenceTable::new(occ).unwrap();
        // each record present with probability 0.8 (filtered occurrences)
        let records: Vec<Positioned> = table
            .occurrences()
            .iter()
            .filter_map(|o| {
                let value = rng.random_range(0.0..1.0);
                rng.random_bool(0.8).then_some(Positioned { sentence_id: o.sentence_id, token_id: o.token_id, value })
            })
            .collect();

        for kind in [SeriesKind::AcpEmbed, SeriesKind::Av] {
            let series = positional_mean(&records, &table, kind, MissingPolicy::ZeroFill);
            let total: usize = lengths.iter().sum();
            ensure(series.support_total() == total, || {
                format!("corpus {corpus}: support sum {} != {total} tokens", series.support_total())
            })?;
            let max_len = *lengths.iter().max().unwrap();
            for j in 1..=max_len {
                // hand sum over sentences
                let mut num = 0.0;
                for (s, &l) in lengths.iter().enumerate() {
                    if l >= j {
                        let sid = (s * 7 + 3) as u64;
                        if let Some(r) = records.iter().find(|r| r.sentence_id == sid && r.token_id == (j - 1) as u64) {
                            num += r.value;
                        }
                    }
                }
                let den = lengths.iter().filter(|&&l| l >= j).count();
                let want = num / den as f64;
                let got = series.value_at(j).ok_or(format!("corpus {corpus}: no value at {j}"))?;
                let d = (got - want).abs();
                worst = worst.max(d);
                ensure(d <= 1e-12, || format!("corpus {corpus} j={j}: {got} vs {want}"))?;
            }
        }
    }
    Ok(format!("200 corpora, support sums exact, max |diff| = {worst:e}"))
}

// ---------------------------------------------------------------- PARSEVAL

const PHRASES: [&str; 6] = ["NP", "VP", "PP", "S", "ADJP", "NP-SBJ"];
const TAGS: [&str; 6] = ["DT", "NN", "VBD", "JJ", "IN", "-LRB-"];

fn random_subtree(rng: &mut ChaCha8Rng, depth: usize, leaf: &mut usize, words: &mut Vec<String>) -> String {
    if depth == 0 || rng.random_bool(0.3) {
        let w = format!("w{}", *leaf);
        *leaf += 1;
        words.push(w.clone());
        return format!("({} {w})", TAGS[rng.random_range(0..TAGS.len())]);
    }
    let kids = rng.random_range(1..=3);
    let inner: Vec<String> = (0..kids).map(|_| random_subtree(rng, depth - 1, leaf, words)).collect();
    format!("({} {})", PHRASES[rng.random_range(0..PHRASES.len())], inner.join(" "))
}

fn random_tree(rng: &mut ChaCha8Rng) -> String {
    let (mut leaf, mut words) = (0, Vec::new());
    let kids = rng.random_range(1..=4);
    let inner: Vec<String> = (0..kids).map(|_| random_subtree(rng, 4, &mut leaf, &mut words)).collect();
    format!("(ROOT {})", inner.join(" "))
}

fn span(label: &str, start: usize, end: usize) -> LabeledSpan {
    LabeledSpan { label: label.into(), start, end }
}

fn parseval_suite() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let trees: Vec<String> = (0..200).map(|_| random_tree(&mut rng)).collect();
    let mut subtrees = Vec::new();
    for (k, text) in trees.iter().enumerate() {
        let tree = parse_bracketed(text).map_err(|e| format!("tree {k}: {e}"))?;
        // (d) terminal strings replaced with "*"-style dummies
        let starred = text
            .split(' ')
            .map(|tok| match tok.strip_prefix('w') {
                Some(rest) => format!("*{}", rest.replace(|c: char| c.is_ascii_digit(), "")),
                None => tok.to_string(),
            })
            .collect::<Vec<_>>()
            .join(" ");
        let dummy = parse_bracketed(&starred).map_err(|e| format!("tree {k} starred: {e}"))?;
        for leaf in 0..tree.leaf_count() {
            let s = smallest_phrase_subtree(&tree, leaf).map_err(|e| e.to_string())?;
            ensure(smallest_phrase_subtree(&dummy, leaf).ok().as_ref() == Some(&s), || {
                format!("(d) tree {k} leaf {leaf}: terminal strings changed the subtree")
            })?;
            // (a) self-similarity
            let p = parseval(&s, &s).map_err(|e| e.to_string())?;
            ensure(
                p.precision == 1.0 && p.recall == 1.0 && p.complete_match && p.tag_accuracy == 1.0 && p.crossing == 0,
                || format!("(a) tree {k} leaf {leaf}: {p:?}"),
            )?;
            subtrees.push(s);
        }
    }
    // (b) duality on consecutive pairs
    let mut pairs = 0;
    for w in subtrees.windows(2) {
        let ab = parseval(&w[0], &w[1]).map_err(|e| e.to_string())?;
        let ba = parseval(&w[1], &w[0]).map_err(|e| e.to_string())?;
        ensure(ab.precision == ba.recall && ab.recall == ba.precision, || format!("(b) {ab:?} vs {ba:?}"))?;
        pairs += 1;
    }
    // (c) hand-computed fixtures
    let tree = parse_bracketed("(S (NP (DT the) (NN law)) (VP (VBD passed)))").map_err(|e| e.to_string())?;
    let law = smallest_phrase_subtree(&tree, 1).map_err(|e| e.to_string())?;
    ensure(law.spans == vec![span("NP", 0, 2)] && law.preterminals == ["DT", "NN"] && law.leaf_count == 2, || {
        format!("(c) law subtree {law:?}")
    })?;
    let passed = smallest_phrase_subtree(&tree, 2).map_err(|e| e.to_string())?;
    ensure(passed.spans == vec![span("VP", 0, 1)] && passed.preterminals == ["VBD"], || {
        format!("(c) passed subtree {passed:?}")
    })?;
    let g = SubtreeSpan::new(vec![span("NP", 0, 2)], vec!["DT".into(), "NN".into()]);
    let c = SubtreeSpan::new(vec![span("NP", 0, 2)], vec!["DT".into(), "JJ".into()]);
    let p = parseval(&g, &c).map_err(|e| e.to_string())?;
    ensure(p.precision == 1.0 && p.recall == 1.0 && p.tag_accuracy == 0.5, || format!("(c) tag fixture {p:?}"))?;
    let tags: Vec<String> = ["DT", "NN", "VBD", "NN"].iter().map(|s| s.to_string()).collect();
    let g = SubtreeSpan::new(vec![span("NP", 0, 2), span("VP", 2, 4), span("S", 0, 4)], tags.clone());
    let c = SubtreeSpan::new(vec![span("X", 1, 3), span("S", 0, 4)], tags);
    let p = parseval(&g, &c).map_err(|e| e.to_string())?;
    ensure(p.matched == 1 && p.precision == 0.5 && p.recall == 1.0 / 3.0 && p.crossing == 1, || {
        format!("(c) crossing fixture {p:?}")
    })?;
    Ok(format!("200 trees, {} subtrees, {pairs} dual pairs, fixtures exact", subtrees.len()))
}

// ---------------------------------------------------------------- synthetic

fn bundle(dir: &Path, spec: &SynthSpec) -> Result<FixturePaths, String> {
    generate_synthetic(spec, dir).map_err(|e| e.to_string())
}

fn config(paths: &FixturePaths, out: PathBuf) -> AnalysisConfig {
    AnalysisConfig {
        vectors: Some(paths.vectors.clone()),
        tokens: Some(paths.tokens.clone()),
        embeddings: Some(paths.embeddings.clone()),
        vocab: Some(paths.vocab.clone()),
        parses: Some(paths.parses.clone()),
        lexicon: Some(paths.lexicon.clone()),
        out_dir: out,
        ..AnalysisConfig::default()
    }
}

fn planted_recovery() -> Check {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let stages = Stages { neighbors: false, treesim: false, tables: false, ..Stages::ALL };

    let zero = bundle(&tmp.path().join("zero"), &SynthSpec { noise: 0.0, ..SynthSpec::default() })?;
    let run = run_pipeline(&config(&zero, tmp.path().join("zero_out")), stages).map_err(|e| e.to_string())?;
    let zero_cov = run.mean_coverage(CoverageKind::Embed).ok_or("no embedding coverage")?;
    ensure(zero_cov == 1.0, || format!("zero noise: mean embedding coverage {zero_cov} != 1.000"))?;

    // Informational: with self-only exclusion every neighbor of a zero-noise
    // state is a duplicate of the same type, which N^E never contains.
    let cfg = AnalysisConfig { exclusion: ExclusionPolicy::SelfOnly, ..config(&zero, tmp.path().join("self_out")) };
    let self_only = run_pipeline(&cfg, stages).map_err(|e| e.to_string())?.mean_coverage(CoverageKind::Embed);

    let spec = SynthSpec { noise: 0.05, clusters: 10, ..SynthSpec::default() };
    let noisy = bundle(&tmp.path().join("noisy"), &spec)?;
    let run = run_pipeline(&config(&noisy, tmp.path().join("noisy_out")), Stages::ALL).map_err(|e| e.to_string())?;
    let cov = run.mean_coverage(CoverageKind::Embed).ok_or("no embedding coverage")?;
    ensure(cov >= 0.95, || format!("noise 0.05: mean embedding coverage {cov:.4} < 0.95"))?;

    // With n = 10 every neighbor stays inside its cluster, so the
    // cross-cluster check also runs with lists longer than a cluster's
    // admissible pool, which forces cross-cluster neighbors into every list.
    let lexicon = load_relations(&noisy.lexicon).map_err(|e| e.to_string())?;
    let vectors = hsnn::corpusio::load_vector_log(&noisy.vectors).map_err(|e| e.to_string())?;
    let table = hsnn::corpusio::load_token_index(&noisy.tokens, &vectors).map_err(|e| e.to_string())?;
    let index = SimilarityIndex::build(&vectors, &table).map_err(|e| e.to_string())?;
    let long_n = spec.tokens_per_cluster + 10;
    let all = QuerySet::from_rows((0..table.len()).collect());
    let long = index.all_neighbors(&all, long_n, ExclusionPolicy::SameType).map_err(|e| e.to_string())?;
    let (mut cross, mut cross_hits) = (0usize, 0usize);
    for list in run.neighbors.iter().chain(&long.lists) {
        let q = table.get(list.query);
        let related = lexicon.related_set(&q.origin_word, None, false);
        for e in &list.entries {
            let c = table.get(e.row);
            if cluster_of(&c.origin_word) != cluster_of(&q.origin_word) {
                cross += 1;
                cross_hits += related.contains(&c.origin_word) as usize;
            }
        }
    }
    ensure(cross > 0, || "no cross-cluster neighbors were examined".into())?;
    ensure(cross_hits == 0, || format!("{cross_hits} of {cross} cross-cluster neighbors are related words"))?;
    Ok(format!(
        "zero noise 1.000 (same-type; self-only gives {}), noise 0.05 {cov:.4}, cross-cluster lexical 0/{cross}",
        self_only.map_or("n/a".into(), |v| format!("{v:.3}"))
    ))
}

fn spearman(xs: &[f64]) -> f64 {
    // rank correlation of (j, value) with average ranks for ties
    let n = xs.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| xs[a].partial_cmp(&xs[b]).unwrap());
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        for k in i..=j {
            ranks[idx[k]] = (i + j) as f64 / 2.0;
        }
        i = j + 1;
    }
    let pos: Vec<f64> = (0..n).map(|k| k as f64).collect();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (mp, mr) = (mean(&pos), mean(&ranks));
    let cov: f64 = pos.iter().zip(&ranks).map(|(p, r)| (p - mp) * (r - mr)).sum();
    let vp: f64 = pos.iter().map(|p| (p - mp).powi(2)).sum();
    let vr: f64 = ranks.iter().map(|r| (r - mr).powi(2)).sum();
    cov / (vp * vr).sqrt()
}

fn directional_check() -> Check {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let stages = Stages { coverage: true, ..Stages::NONE };
    let curve = |name: &str, mixing: f64| -> Result<Vec<f64>, String> {
        let spec = SynthSpec { mixing, min_sentence_len: 12, max_sentence_len: 12, ..SynthSpec::default() };
        let paths = bundle(&tmp.path().join(name), &spec)?;
        let cfg =
            AnalysisConfig { lexicon: None, parses: None, ..config(&paths, tmp.path().join(format!("{name}_out"))) };
        let run = run_pipeline(&cfg, stages).map_err(|e| e.to_string())?;
        let series = run.series(SeriesKind::AcpEmbed).ok_or("no ACP series")?;
        Ok((1..=12).map(|j| series.value_at(j).unwrap_or(f64::NAN)).collect())
    };
    let mixed = curve("mixed", 0.9)?;
    let flat = curve("flat", 0.0)?;
    let drop = mixed[0] - mixed[11];
    let rho = spearman(&mixed);
    let spread = flat.iter().cloned().fold(f64::MIN, f64::max) - flat.iter().cloned().fold(f64::MAX, f64::min);
    ensure(drop >= 0.2 && rho <= -0.8, || format!("mixing curve not decreasing: drop {drop:.3}, spearman {rho:.3}"))?;
    ensure(spread <= 0.05, || format!("mixing-free curve not flat: spread {spread:.3}"))?;
    Ok(format!("acp_1 - acp_12 = {drop:.3}, spearman {rho:.3}; flat spread {spread:.3}"))
}

fn output_files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap() != MANIFEST_FILE)
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect()
}

fn determinism_performance() -> Check {
    const BUDGET: Duration = Duration::from_secs(15 * 60);
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let spec = SynthSpec {
        clusters: 100,
        types_per_cluster: 20,
        tokens_per_cluster: 1000,
        dim: 512,
        noise: 0.3,
        ..SynthSpec::default()
    };
    let paths = bundle(&tmp.path().join("big"), &spec)?;
    let cfg_path = tmp.path().join("big.toml");
    fs::write(&cfg_path, config(&paths, tmp.path().join("unused")).to_toml()).map_err(|e| e.to_string())?;

    let mut runs = Vec::new();
    for threads in [1, 2] {
        let out = tmp.path().join(format!("out_t{threads}"));
        let start = Instant::now();
        let status = Command::new(env!("CARGO_BIN_EXE_hsnn"))
            .args(["run", "--config"])
            .arg(&cfg_path)
            .arg("--out-dir")
            .arg(&out)
            .env("HSNN_THREADS", threads.to_string())
            .status()
            .map_err(|e| e.to_string())?;
        let wall = start.elapsed();
        ensure(status.success(), || format!("run with {threads} threads exited with {status}"))?;
        let manifest: RunManifest =
            serde_json::from_slice(&fs::read(out.join(MANIFEST_FILE)).map_err(|e| e.to_string())?)
                .map_err(|e| e.to_string())?;
        ensure(manifest.counts.tokens == 100_000 && manifest.counts.dim == 512, || {
            format!("unexpected corpus size {:?}", manifest.counts)
        })?;
        let scan = Duration::from_millis(manifest.timing_ms["knn"] as u64);
        runs.push((threads, wall, scan, output_files(&out)));
    }
    let (a, b) = (&runs[0].3, &runs[1].3);
    ensure(a == b, || {
        let differing: Vec<&String> = a.keys().filter(|k| a.get(*k) != b.get(*k)).collect();
        format!("outputs differ between thread counts: {differing:?}")
    })?;
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    let timing: Vec<String> = runs
        .iter()
        .map(|(t, wall, scan, _)| {
            format!("{t} thread(s): scan {:.0}s, run {:.0}s", scan.as_secs_f64(), wall.as_secs_f64())
        })
        .collect();
    for (_, _, scan, _) in &runs {
        ensure(*scan < BUDGET, || format!("scan exceeded 15 min on {cores} core(s): {}", timing.join("; ")))?;
    }
    Ok(format!("{} files byte-identical; {}; {cores} core(s) available", a.len(), timing.join("; ")))
}

// ---------------------------------------------------------------- driver

struct Criterion {
    key: &'static str,
    name: &'static str,
    budget: Option<Duration>,
    run: fn() -> Check,
}

fn main() {
    let criteria = [
        Criterion { key: "knn", name: "k-NN exactness", budget: Some(Duration::from_secs(10)), run: knn_exactness },
        Criterion {
            key: "formula",
            name: "Formula oracles",
            budget: Some(Duration::from_secs(5)),
            run: formula_oracles,
        },
        Criterion { key: "positional", name: "Positional identity", budget: None, run: positional_identity },
        Criterion { key: "parseval", name: "PARSEVAL suite", budget: None, run: parseval_suite },
        Criterion {
            key: "planted",
            name: "Planted-structure recovery",
            budget: Some(Duration::from_secs(30)),
            run: planted_recovery,
        },
        Criterion { key: "determinism", name: "Determinism & performance", budget: None, run: determinism_performance },
        Criterion { key: "directional", name: "Directional check", budget: None, run: directional_check },
    ];
    // libtest-style flags (e.g. --nocapture) are ignored; bare words filter
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for c in &criteria {
        if !filters.is_empty() && !filters.iter().any(|f| c.key.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = (c.run)();
        let took = start.elapsed();
        let outcome = match (outcome, c.budget) {
            (Ok(detail), Some(b)) if took > b => Err(format!("{detail}; took {took:.1?} > {b:?}")),
            (o, _) => o,
        };
        match outcome {
            Ok(detail) => println!("PASS  {:<28} {detail} [{took:.1?}]", c.name),
            Err(why) => {
                failed += 1;
                println!("FAIL  {:<28} {why} [{took:.1?}]", c.name);
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
