//! Times the exact k-NN scan on a synthetic corpus.
//!
//! cargo run --release -p hsnn-core --example scan_throughput -- [rows] [dim]

use std::time::Instant;

use hsnn::corpusio::{apply_frequency_band, QuerySet};
use hsnn::knn::{ExclusionPolicy, SimilarityIndex};
use hsnn::synth::{generate, SynthSpec};

fn main() {
    let mut args = std::env::args().skip(1).map(|a| a.parse::<usize>().expect("integer argument"));
    let rows = args.next().unwrap_or(20_000);
    let dim = args.next().unwrap_or(512);
    let clusters = 100;
    let spec = SynthSpec {
        clusters,
        types_per_cluster: 20,
        tokens_per_cluster: rows / clusters,
        dim,
        noise: 0.3,
        ..SynthSpec::default()
    };
    let t = Instant::now();
    let s = generate(&spec).unwrap();
    println!("generated {} x {} in {:.2?}", s.vectors.count(), dim, t.elapsed());

    let index = SimilarityIndex::build(&s.vectors, &s.table).unwrap();
    let queries: QuerySet = apply_frequency_band(&s.table, 0, u64::MAX);
    let t = Instant::now();
    let out = index.all_neighbors(&queries, 10, ExclusionPolicy::SameType).unwrap();
    let secs = t.elapsed().as_secs_f64();
    let macs = out.lists.len() as f64 * index.queryable_count() as f64 * dim as f64;
    println!("{} lists in {secs:.2}s, {:.2} GMAC/s", out.lists.len(), macs / secs / 1e9);
}
