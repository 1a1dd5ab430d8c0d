//! TREC qrels and run files.
//!
//! Qrels: `query_id 0 doc_id relevance`, relevance in `{0, 1}`.
//! Run: `query_id Q0 doc_id rank score run_tag`, ranks starting at 1.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::metrics::Qrels;
use crate::retrieval::RankedRun;

fn parse_error(path: &str, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_string(),
        line,
        message: message.into(),
    }
}

/// Parses qrels text. `origin` only labels error messages.
pub fn parse_qrels(text: &str, origin: &str) -> Result<Qrels> {
    let mut qrels = Qrels::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.len() != 4 {
            return Err(parse_error(
                origin,
                line_no,
                format!("expected 4 columns, found {}", cols.len()),
            ));
        }
        let rel: i64 = cols[3]
            .parse()
            .map_err(|_| parse_error(origin, line_no, format!("bad relevance `{}`", cols[3])))?;
        match rel {
            0 => {}
            1 => qrels.insert(cols[0], cols[2]),
            other => {
                return Err(parse_error(
                    origin,
                    line_no,
                    format!("relevance must be 0 or 1, found {other}"),
                ))
            }
        }
    }
    Ok(qrels)
}

pub fn read_qrels(path: impl AsRef<Path>) -> Result<Qrels> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_qrels(&text, &path.display().to_string())
}

/// Writes the relevant pairs of `qrels`, one line each, sorted by query then doc.
pub fn format_qrels(qrels: &Qrels) -> String {
    let mut out = String::new();
    for (query_id, docs) in qrels.queries() {
        for doc_id in docs {
            let _ = writeln!(out, "{query_id} 0 {doc_id} 1");
        }
    }
    out
}

pub fn write_qrels(path: impl AsRef<Path>, qrels: &Qrels) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_qrels(qrels)).map_err(|e| Error::io(path, e))
}

/// Parses a run. Lines of a query are ordered by their rank column; the
/// score column is kept as written.
pub fn parse_run(text: &str, origin: &str) -> Result<RankedRun> {
    let mut rows: Vec<(String, usize, String, f64)> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.len() != 6 {
            return Err(parse_error(
                origin,
                line_no,
                format!("expected 6 columns, found {}", cols.len()),
            ));
        }
        let rank: usize = cols[3]
            .parse()
            .map_err(|_| parse_error(origin, line_no, format!("bad rank `{}`", cols[3])))?;
        let score: f64 = cols[4]
            .parse()
            .map_err(|_| parse_error(origin, line_no, format!("bad score `{}`", cols[4])))?;
        rows.push((cols[0].to_string(), rank, cols[2].to_string(), score));
    }
    rows.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut run = RankedRun::new();
    for (query_id, _, doc_id, score) in rows {
        run.push(query_id, doc_id, score);
    }
    Ok(run)
}

pub fn read_run(path: impl AsRef<Path>) -> Result<RankedRun> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_run(&text, &path.display().to_string())
}

pub fn format_run(run: &RankedRun, run_tag: &str) -> String {
    let mut out = String::new();
    for (query_id, ranking) in run.iter() {
        for (i, (doc_id, score)) in ranking.iter().enumerate() {
            let _ = writeln!(out, "{query_id} Q0 {doc_id} {} {score:.8} {run_tag}", i + 1);
        }
    }
    out
}

pub fn write_run(path: impl AsRef<Path>, run: &RankedRun, run_tag: &str) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_run(run, run_tag)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn qrels_skip_zero_judgments() {
        let q = parse_qrels("q1 0 d1 1\nq1 0 d2 0\n\nq2 0 d3 1\n", "t").unwrap();
        assert!(q.is_relevant("q1", "d1"));
        assert!(!q.is_relevant("q1", "d2"));
        assert_eq!(q.n_pairs(), 2);
        assert_eq!(format_qrels(&q), "q1 0 d1 1\nq2 0 d3 1\n");
    }

    #[test]
    fn qrels_errors_carry_line_numbers() {
        match parse_qrels("q1 0 d1 1\nq1 0 d2\n", "f.qrels") {
            Err(Error::Parse { line, path, .. }) => {
                assert_eq!(line, 2);
                assert_eq!(path, "f.qrels");
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse_qrels("q 0 d 2\n", "t"), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn run_orders_by_rank_column() {
        let text = "q1 Q0 b 2 0.5 t\nq1 Q0 a 1 0.9 t\nq0 Q0 c 1 0.1 t\n";
        let run = parse_run(text, "r").unwrap();
        let docs: Vec<&str> = run.ranking("q1").unwrap().iter().map(|(d, _)| d.as_str()).collect();
        assert_eq!(docs, ["a", "b"]);
        assert_eq!(
            format_run(&run, "x"),
            "q0 Q0 c 1 0.10000000 x\nq1 Q0 a 1 0.90000000 x\nq1 Q0 b 2 0.50000000 x\n"
        );
        assert!(matches!(parse_run("q Q0 d one 1 t", "r"), Err(Error::Parse { line: 1, .. })));
    }
}
