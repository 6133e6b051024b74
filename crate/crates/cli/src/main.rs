use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use hsnn::knn::ExclusionPolicy;
use hsnn::metrics::{CountingMode, MissingPolicy, VarianceMode};
use hsnn::pipeline::{run_pipeline, AnalysisConfig, PipelineError, Stages, STRATA_FILE, TABLES_FILE, TREESIM_FILE};
use hsnn::report;
use hsnn::synth::{generate_synthetic, SynthSpec};

/// Name of the analysis config written next to a synthetic bundle.
const SYNTH_CONFIG: &str = "analysis.toml";

#[derive(Parser)]
#[command(name = "hsnn", version, about = "Nearest-neighbor analysis of encoder hidden states")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic fixture bundle plus a matching analysis config
    Synth(SynthArgs),
    /// Neighbor lists only
    Knn(AnalysisArgs),
    /// Coverage, positional curves and POS strata
    Coverage(AnalysisArgs),
    /// Subtree similarity of neighbor pairs
    Treesim(AnalysisArgs),
    /// Neighbor-distance concentration
    Concentration(AnalysisArgs),
    /// Render tables from strata.tsv / treesim.tsv in the output directory
    Report(ReportArgs),
    /// All stages
    Run(AnalysisArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Exclusion {
    SameType,
    SelfOnly,
}

#[derive(Clone, Copy, ValueEnum)]
enum Counting {
    PerSlot,
    DistinctTypes,
}

#[derive(Clone, Copy, ValueEnum)]
enum Variance {
    Occurrence,
    Type,
}

#[derive(Clone, Copy, ValueEnum)]
enum Missing {
    ZeroFill,
    SkipSentence,
}

#[derive(Args)]
struct AnalysisArgs {
    /// TOML config; flags given here override it
    #[arg(long, short)]
    config: Option<PathBuf>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    min_freq: Option<u64>,
    #[arg(long)]
    max_freq: Option<u64>,
    #[arg(long, value_enum)]
    exclusion: Option<Exclusion>,
    #[arg(long, value_enum)]
    counting: Option<Counting>,
    #[arg(long, value_enum)]
    variance: Option<Variance>,
    #[arg(long, value_enum)]
    missing: Option<Missing>,
    #[arg(long)]
    fold_case: bool,
    #[arg(long)]
    lexicon_pos_filter: bool,
    #[arg(long)]
    continuation: Option<String>,
    #[arg(long)]
    vectors: Option<PathBuf>,
    #[arg(long)]
    tokens: Option<PathBuf>,
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long)]
    parses: Option<PathBuf>,
    #[arg(long)]
    lexicon: Option<PathBuf>,
    #[arg(long, short)]
    out_dir: Option<PathBuf>,
    #[arg(long, env = "HSNN_THREADS")]
    threads: Option<usize>,
    /// Also write neighbors.bin
    #[arg(long)]
    binary_neighbors: bool,
}

impl AnalysisArgs {
    fn resolve(self) -> Result<AnalysisConfig, PipelineError> {
        let mut c = match &self.config {
            Some(path) => AnalysisConfig::from_toml_file(path)?,
            None => AnalysisConfig::default(),
        };
        macro_rules! set {
            ($($field:ident),*) => {$(if let Some(v) = self.$field { c.$field = v; })*};
        }
        set!(n, min_freq, max_freq, continuation, out_dir);
        macro_rules! set_opt {
            ($($field:ident),*) => {$(if self.$field.is_some() { c.$field = self.$field; })*};
        }
        set_opt!(vectors, tokens, embeddings, vocab, parses, lexicon, threads);
        if let Some(e) = self.exclusion {
            c.exclusion = match e {
                Exclusion::SameType => ExclusionPolicy::SameType,
                Exclusion::SelfOnly => ExclusionPolicy::SelfOnly,
            };
        }
        if let Some(m) = self.counting {
            c.counting = match m {
                Counting::PerSlot => CountingMode::PerSlot,
                Counting::DistinctTypes => CountingMode::DistinctTypes,
            };
        }
        if let Some(v) = self.variance {
            c.variance = match v {
                Variance::Occurrence => VarianceMode::Occurrence,
                Variance::Type => VarianceMode::Type,
            };
        }
        if let Some(m) = self.missing {
            c.missing = match m {
                Missing::ZeroFill => MissingPolicy::ZeroFill,
                Missing::SkipSentence => MissingPolicy::SkipSentence,
            };
        }
        c.fold_case |= self.fold_case;
        c.lexicon_pos_filter |= self.lexicon_pos_filter;
        c.binary_neighbors |= self.binary_neighbors;
        Ok(c)
    }
}

#[derive(Args)]
struct SynthArgs {
    /// Bundle directory
    #[arg(long, short)]
    out: PathBuf,
    #[arg(long)]
    clusters: Option<usize>,
    #[arg(long)]
    types_per_cluster: Option<usize>,
    #[arg(long)]
    tokens_per_cluster: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    type_spread: Option<f64>,
    #[arg(long)]
    planted_coverage: Option<f64>,
    #[arg(long)]
    mixing: Option<f64>,
    #[arg(long)]
    min_sentence_len: Option<usize>,
    #[arg(long)]
    max_sentence_len: Option<usize>,
    #[arg(long)]
    bpe_fraction: Option<f64>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Directory holding strata.tsv and optionally treesim.tsv
    #[arg(long, short)]
    out_dir: Option<PathBuf>,
}

fn synth(args: SynthArgs) -> Result<(), PipelineError> {
    let mut spec = SynthSpec { seed: args.seed, ..SynthSpec::default() };
    macro_rules! set {
        ($($field:ident),*) => {$(if let Some(v) = args.$field { spec.$field = v; })*};
    }
    set!(
        clusters,
        types_per_cluster,
        tokens_per_cluster,
        dim,
        noise,
        type_spread,
        planted_coverage,
        mixing,
        min_sentence_len,
        max_sentence_len,
        bpe_fraction
    );
    let paths = generate_synthetic(&spec, &args.out).map_err(|e| PipelineError::Config(e.to_string()))?;
    let name = |p: &Path| p.file_name().map(PathBuf::from);
    let config = AnalysisConfig {
        vectors: name(&paths.vectors),
        tokens: name(&paths.tokens),
        embeddings: name(&paths.embeddings),
        vocab: name(&paths.vocab),
        parses: name(&paths.parses),
        lexicon: name(&paths.lexicon),
        out_dir: PathBuf::from("out"),
        seed: args.seed,
        ..AnalysisConfig::default()
    };
    let cfg_path = args.out.join(SYNTH_CONFIG);
    std::fs::write(&cfg_path, config.to_toml())
        .map_err(|e| PipelineError::Stage { stage: "synth", message: format!("{}: {e}", cfg_path.display()) })?;
    println!("{}", cfg_path.display());
    Ok(())
}

fn render_report(args: ReportArgs) -> Result<(), PipelineError> {
    let dir = match (args.out_dir, args.config) {
        (Some(d), _) => d,
        (None, Some(c)) => AnalysisConfig::from_toml_file(&c)?.out_dir,
        (None, None) => AnalysisConfig::default().out_dir,
    };
    let fail = |e: std::io::Error| PipelineError::Stage { stage: "report", message: e.to_string() };
    let open = |name: &str| -> Result<std::io::BufReader<std::fs::File>, PipelineError> {
        std::fs::File::open(dir.join(name))
            .map(std::io::BufReader::new)
            .map_err(|e| PipelineError::Config(format!("{}: {e}", dir.join(name).display())))
    };
    let strata = report::read_strata_tsv(open(STRATA_FILE)?).map_err(fail)?;
    let treesim = match dir.join(TREESIM_FILE).is_file() {
        true => Some(report::read_treesim_tsv(open(TREESIM_FILE)?).map_err(fail)?),
        false => None,
    };
    let text = report::render_tables(&strata, treesim.as_ref());
    std::fs::write(dir.join(TABLES_FILE), &text).map_err(fail)?;
    print!("{text}");
    Ok(())
}

fn analyze(args: AnalysisArgs, stages: Stages) -> Result<(), PipelineError> {
    let config = args.resolve()?;
    let bundle = run_pipeline(&config, stages)?;
    for note in &bundle.manifest.notes {
        log::info!("{note}");
    }
    println!(
        "{} queries over {} tokens; outputs in {}",
        bundle.manifest.counts.queries,
        bundle.manifest.counts.tokens,
        config.out_dir.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let only = |f: fn(&mut Stages)| {
        let mut s = Stages::NONE;
        f(&mut s);
        s
    };
    let result = match cli.command {
        Command::Synth(a) => synth(a),
        Command::Report(a) => render_report(a),
        Command::Knn(a) => analyze(a, only(|s| s.neighbors = true)),
        Command::Coverage(a) => analyze(a, only(|s| s.coverage = true)),
        Command::Treesim(a) => analyze(a, only(|s| s.treesim = true)),
        Command::Concentration(a) => analyze(a, only(|s| s.concentration = true)),
        Command::Run(a) => analyze(a, Stages::ALL),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("hsnn: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
