//! Output files: per-occurrence records, positional series, figure data,
//! stratified tables and tree similarity, plus text renderings laid out
//! like the published tables.

use std::fmt::Write as _;
use std::io::{self, BufRead, Write};
use std::path::Path;

use crate::metrics::{
    ConcentrationRecord, CoverageKind, CoverageRecord, PositionalSeries, SeriesKind, StratifiedTable, StratumRow,
    ALL_BUCKET, POS_BUCKETS,
};
use crate::treesim::TreeSimSummary;

pub const COVERAGE_HEADER: &str = "row_id\tsentence_id\ttoken_id\tkind\tnumerator\tdenominator\tvalue";
pub const CONCENTRATION_HEADER: &str = "row_id\tsentence_id\ttoken_id\tvalue";
pub const POSITIONAL_HEADER: &str = "series\tj\tvalue\tsupport";
pub const FIGURE_HEADER: &str = "position\tvalue\tsupport";
pub const STRATA_HEADER: &str = "kind\tbucket\tmean_pct\tvar\tcount";
pub const TREESIM_HEADER: &str =
    "precision\trecall\tmatched_brackets\tcross_brackets\ttag_accuracy\tpair_count\tskipped_pairs";

pub fn write_coverage_tsv<W: Write>(records: &[CoverageRecord], mut w: W) -> io::Result<()> {
    writeln!(w, "{COVERAGE_HEADER}")?;
    for r in records {
        writeln!(
            w,
            "{}\t{}\t{}\t{}\t{}\t{}\t{:.6}",
            r.row, r.sentence_id, r.token_id, r.kind, r.numerator, r.denominator, r.value
        )?;
    }
    w.flush()
}

pub fn write_concentration_tsv<W: Write>(records: &[ConcentrationRecord], mut w: W) -> io::Result<()> {
    writeln!(w, "{CONCENTRATION_HEADER}")?;
    for r in records {
        writeln!(w, "{}\t{}\t{}\t{:.6}", r.row, r.sentence_id, r.token_id, r.value)?;
    }
    w.flush()
}

/// All series in one file; positions without support are omitted.
pub fn write_positional_tsv<W: Write>(series: &[PositionalSeries], mut w: W) -> io::Result<()> {
    writeln!(w, "{POSITIONAL_HEADER}")?;
    for s in series {
        for p in &s.points {
            if let Some(v) = p.value {
                writeln!(w, "{}\t{}\t{:.6}\t{}", s.kind.name(), p.position, v, p.support)?;
            }
        }
    }
    w.flush()
}

pub fn figure_file_name(kind: SeriesKind) -> &'static str {
    match kind {
        SeriesKind::AcpEmbed => "fig_acp_embed.tsv",
        SeriesKind::AcpLex => "fig_acp_lex.tsv",
        SeriesKind::Av => "fig_av.tsv",
    }
}

pub fn write_figure_tsv<W: Write>(series: &PositionalSeries, mut w: W) -> io::Result<()> {
    writeln!(w, "{FIGURE_HEADER}")?;
    for p in &series.points {
        if let (Some(v), true) = (p.value, p.support > 0) {
            writeln!(w, "{}\t{:.6}\t{}", p.position, v, p.support)?;
        }
    }
    w.flush()
}

/// Writes one plot-data file per series family into `dir`; returns the file names.
pub fn emit_figure_data(series: &[PositionalSeries], dir: &Path) -> io::Result<Vec<String>> {
    let mut names = Vec::with_capacity(series.len());
    for s in series {
        let name = figure_file_name(s.kind);
        write_figure_tsv(s, io::BufWriter::new(std::fs::File::create(dir.join(name))?))?;
        names.push(name.to_string());
    }
    Ok(names)
}

pub fn write_strata_tsv<W: Write>(tables: &[StratifiedTable], mut w: W) -> io::Result<()> {
    writeln!(w, "{STRATA_HEADER}")?;
    for t in tables {
        for r in &t.rows {
            writeln!(w, "{}\t{}\t{:.6}\t{:.6}\t{}", t.kind, r.bucket, r.mean_pct, r.var, r.count)?;
        }
    }
    w.flush()
}

pub fn write_treesim_tsv<W: Write>(summary: &TreeSimSummary, mut w: W) -> io::Result<()> {
    writeln!(w, "{TREESIM_HEADER}")?;
    writeln!(
        w,
        "{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{}\t{}",
        summary.precision,
        summary.recall,
        summary.matched_brackets,
        summary.cross_brackets,
        summary.tag_accuracy,
        summary.pair_count,
        summary.skipped_pairs
    )?;
    w.flush()
}

fn invalid(msg: String) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, msg)
}

fn expect_header(lines: &mut impl Iterator<Item = io::Result<String>>, header: &str) -> io::Result<()> {
    match lines.next().transpose()? {
        Some(h) if h.trim_end() == header => Ok(()),
        other => Err(invalid(format!("expected header `{header}`, found {other:?}"))),
    }
}

fn parse_field<T: std::str::FromStr>(s: &str, line: usize) -> io::Result<T> {
    s.parse().map_err(|_| invalid(format!("line {line}: cannot parse `{s}`")))
}

pub fn read_strata_tsv<R: BufRead>(r: R) -> io::Result<Vec<StratifiedTable>> {
    let mut lines = r.lines();
    expect_header(&mut lines, STRATA_HEADER)?;
    let mut tables: Vec<StratifiedTable> = Vec::new();
    for (k, line) in lines.enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 5 {
            return Err(invalid(format!("line {}: expected 5 fields", k + 2)));
        }
        let kind = match f[0] {
            "EMBED" => CoverageKind::Embed,
            "LEXICON" => CoverageKind::Lexicon,
            other => return Err(invalid(format!("line {}: unknown kind `{other}`", k + 2))),
        };
        let row = StratumRow {
            bucket: f[1].to_string(),
            mean_pct: parse_field(f[2], k + 2)?,
            var: parse_field(f[3], k + 2)?,
            count: parse_field(f[4], k + 2)?,
        };
        match tables.iter_mut().find(|t| t.kind == kind) {
            Some(t) => t.rows.push(row),
            None => tables.push(StratifiedTable { kind, rows: vec![row] }),
        }
    }
    Ok(tables)
}

pub fn read_treesim_tsv<R: BufRead>(r: R) -> io::Result<TreeSimSummary> {
    let mut lines = r.lines();
    expect_header(&mut lines, TREESIM_HEADER)?;
    let line = lines.next().transpose()?.ok_or_else(|| invalid("missing treesim row".into()))?;
    let f: Vec<&str> = line.split('\t').collect();
    if f.len() != 7 {
        return Err(invalid("line 2: expected 7 fields".into()));
    }
    Ok(TreeSimSummary {
        precision: parse_field(f[0], 2)?,
        recall: parse_field(f[1], 2)?,
        matched_brackets: parse_field(f[2], 2)?,
        cross_brackets: parse_field(f[3], 2)?,
        tag_accuracy: parse_field(f[4], 2)?,
        pair_count: parse_field(f[5], 2)?,
        skipped_pairs: parse_field(f[6], 2)?,
    })
}

fn coverage_title(kind: CoverageKind) -> &'static str {
    match kind {
        CoverageKind::Embed => "Hidden-state neighbors covered by embedding neighbors",
        CoverageKind::Lexicon => "Hidden-state neighbors covered by directly related words",
    }
}

/// Coverage table with one row per POS bucket: rounded percent and variance.
pub fn render_coverage_table(table: &StratifiedTable) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{}", coverage_title(table.kind));
    let _ = writeln!(out, "{:<8} {:>9} {:>6} {:>9}", "POS", "Coverage", "σ²", "Count");
    for bucket in std::iter::once(ALL_BUCKET).chain(POS_BUCKETS) {
        let label = if bucket == ALL_BUCKET { "All POS" } else { bucket };
        match table.bucket(bucket) {
            Some(r) => {
                let _ = writeln!(out, "{:<8} {:>8.0}% {:>6.0} {:>9}", label, r.mean_pct, r.var, r.count);
            }
            None => {
                let _ = writeln!(out, "{:<8} {:>9} {:>6} {:>9}", label, "-", "-", 0);
            }
        }
    }
    out
}

/// Tree similarity table, two decimals.
pub fn render_treesim_table(summary: &TreeSimSummary) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "Average parse tree similarity (PARSEVAL) between occurrences and their neighbors");
    let _ = writeln!(
        out,
        "{:>9} {:>9} {:>16} {:>14} {:>12} {:>10} {:>8}",
        "Precision", "Recall", "Matched Brackets", "Cross Brackets", "Tag Accuracy", "Pairs", "Skipped"
    );
    let _ = writeln!(
        out,
        "{:>9.2} {:>9.2} {:>16.2} {:>14.2} {:>12.2} {:>10} {:>8}",
        summary.precision,
        summary.recall,
        summary.matched_brackets,
        summary.cross_brackets,
        summary.tag_accuracy,
        summary.pair_count,
        summary.skipped_pairs
    );
    out
}

/// All available tables in one text document.
pub fn render_tables(strata: &[StratifiedTable], treesim: Option<&TreeSimSummary>) -> String {
    let mut parts: Vec<String> = Vec::new();
    for kind in [CoverageKind::Embed, CoverageKind::Lexicon] {
        if let Some(t) = strata.iter().find(|t| t.kind == kind) {
            parts.push(render_coverage_table(t));
        }
    }
    if let Some(s) = treesim {
        parts.push(render_treesim_table(s));
    }
    parts.join("\n")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::SeriesPoint;

    fn series(kind: SeriesKind, values: &[(usize, Option<f64>, usize)]) -> PositionalSeries {
        PositionalSeries {
            kind,
            points: values.iter().map(|&(position, value, support)| SeriesPoint { position, value, support }).collect(),
        }
    }

    fn render_figure(s: &PositionalSeries) -> String {
        let mut buf = Vec::new();
        write_figure_tsv(s, &mut buf).unwrap();
        String::from_utf8(buf).unwrap()
    }

    #[test]
    fn figure_rows_per_supported_position() {
        let s = series(SeriesKind::AcpEmbed, &[(1, Some(0.5), 3), (2, Some(0.25), 2), (3, Some(0.0), 1)]);
        assert_eq!(render_figure(&s).lines().count(), 4);
        let s = series(SeriesKind::Av, &[(1, Some(0.1), 1), (2, None, 0)]);
        assert_eq!(render_figure(&s).lines().count(), 2);
    }

    #[test]
    fn figure_file_matches_hand_written() {
        let s = series(SeriesKind::AcpEmbed, &[(1, Some(0.6), 2), (2, Some(0.4), 1)]);
        assert_eq!(render_figure(&s), "position\tvalue\tsupport\n1\t0.600000\t2\n2\t0.400000\t1\n");
    }

    #[test]
    fn strata_and_treesim_round_trip() {
        let tables = vec![StratifiedTable {
            kind: CoverageKind::Lexicon,
            rows: vec![StratumRow { bucket: "All".into(), mean_pct: 30.0, var: 1.0, count: 2 }],
        }];
        let mut buf = Vec::new();
        write_strata_tsv(&tables, &mut buf).unwrap();
        assert_eq!(read_strata_tsv(&buf[..]).unwrap(), tables);

        let summary = TreeSimSummary {
            precision: 0.5,
            recall: 0.25,
            matched_brackets: 0.125,
            cross_brackets: 1.5,
            tag_accuracy: 0.75,
            pair_count: 8,
            skipped_pairs: 1,
        };
        let mut buf = Vec::new();
        write_treesim_tsv(&summary, &mut buf).unwrap();
        assert_eq!(read_treesim_tsv(&buf[..]).unwrap(), summary);
        let text = render_treesim_table(&summary);
        assert!(text.contains("0.50") && text.contains("1.50"));
    }

    #[test]
    fn coverage_table_layout() {
        let t = StratifiedTable {
            kind: CoverageKind::Embed,
            rows: vec![
                StratumRow { bucket: "All".into(), mean_pct: 18.2, var: 4.4, count: 10 },
                StratumRow { bucket: "VERB".into(), mean_pct: 29.0, var: 5.0, count: 4 },
            ],
        };
        let text = render_coverage_table(&t);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 7);
        assert!(lines[2].starts_with("All POS") && lines[2].contains("18%"));
        assert!(lines[4].starts_with("NOUN") && lines[4].contains('-'));
    }
}
