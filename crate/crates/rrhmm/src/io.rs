//! CSV dataset, trace, and experiment-result files.
//!
//! Datasets come in three shapes, distinguished by the header row: `x1,x2,x3`
//! for one observation triple per row, `x` for one symbol per row, and any
//! other header for real-valued points (one point per row, one column per
//! dimension). All floating-point output is written with enough digits to
//! round-trip exactly.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DVector;

use crate::diagnostics::{EigenRecoveryResult, L1ErrorResult};
use crate::error::{Error, Result};

pub const TRIPLES_HEADER: &str = "x1,x2,x3";
pub const SEQUENCE_HEADER: &str = "x";
pub const TRACE_HEADER_PREFIX: &str = "step,symbol,normalizer,trust";
pub const EIGEN_TRIALS_HEADER: &str = "experiment,n,trial,index,true_re,true_im,est_re,est_im";
pub const EIGEN_SUMMARY_HEADER: &str =
    "experiment,n,index,true_re,true_im,mean_re,mean_im,half_width";
pub const L1_TRIALS_HEADER: &str = "experiment,n,trial,l1_error";
pub const L1_SUMMARY_HEADER: &str = "experiment,n,mean_l1,stderr_l1";

/// A parsed dataset file.
#[derive(Debug, Clone)]
pub enum Dataset {
    Triples(Vec<[usize; 3]>),
    Sequence(Vec<usize>),
    Continuous(Vec<DVector<f64>>),
}

impl Dataset {
    pub fn len(&self) -> usize {
        match self {
            Dataset::Triples(t) => t.len(),
            Dataset::Sequence(s) => s.len(),
            Dataset::Continuous(p) => p.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn write_triples_csv(path: &Path, triples: &[[usize; 3]]) -> Result<()> {
    let mut out = String::with_capacity(triples.len() * 8 + 16);
    out.push_str(TRIPLES_HEADER);
    out.push('\n');
    for t in triples {
        let _ = writeln!(out, "{},{},{}", t[0], t[1], t[2]);
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn write_sequence_csv(path: &Path, sequence: &[usize]) -> Result<()> {
    let mut out = String::with_capacity(sequence.len() * 3 + 4);
    out.push_str(SEQUENCE_HEADER);
    out.push('\n');
    for x in sequence {
        let _ = writeln!(out, "{x}");
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn write_continuous_csv(path: &Path, points: &[DVector<f64>]) -> Result<()> {
    let dim = points.first().map_or(1, |p| p.len());
    let mut out = String::new();
    let header: Vec<String> = (0..dim).map(|d| format!("c{d}")).collect();
    out.push_str(&header.join(","));
    out.push('\n');
    for p in points {
        let fields: Vec<String> = p.iter().map(|v| format!("{v}")).collect();
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Read a dataset, dispatching on the header row.
pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::InvalidDataset("missing header row".into()))?
        .trim();
    match header {
        TRIPLES_HEADER => {
            let mut triples = Vec::new();
            for (idx, line) in lines.enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let fields: Vec<&str> = line.split(',').collect();
                if fields.len() != 3 {
                    return Err(Error::InvalidDataset(format!(
                        "row {}: expected 3 fields",
                        idx + 2
                    )));
                }
                let mut triple = [0usize; 3];
                for (slot, field) in triple.iter_mut().zip(&fields) {
                    *slot = field.trim().parse().map_err(|_| {
                        Error::InvalidDataset(format!("row {}: bad symbol {field}", idx + 2))
                    })?;
                }
                triples.push(triple);
            }
            Ok(Dataset::Triples(triples))
        }
        SEQUENCE_HEADER => {
            let mut sequence = Vec::new();
            for (idx, line) in lines.enumerate() {
                let field = line.trim();
                if field.is_empty() {
                    continue;
                }
                sequence.push(field.parse().map_err(|_| {
                    Error::InvalidDataset(format!("row {}: bad symbol {field}", idx + 2))
                })?);
            }
            Ok(Dataset::Sequence(sequence))
        }
        _ => {
            let dim = header.split(',').count();
            let mut points = Vec::new();
            for (idx, line) in lines.enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let fields: Vec<&str> = line.split(',').collect();
                if fields.len() != dim {
                    return Err(Error::InvalidDataset(format!(
                        "row {}: expected {dim} fields",
                        idx + 2
                    )));
                }
                let values = fields
                    .iter()
                    .map(|f| {
                        f.trim().parse::<f64>().map_err(|_| {
                            Error::InvalidDataset(format!("row {}: bad number {f}", idx + 2))
                        })
                    })
                    .collect::<Result<Vec<f64>>>()?;
                points.push(DVector::from_vec(values));
            }
            Ok(Dataset::Continuous(points))
        }
    }
}

// ---------------------------------------------------------------------------
// Filtering traces
// ---------------------------------------------------------------------------

/// One row of a filtering trace.
#[derive(Debug, Clone)]
pub struct TraceRow {
    pub step: usize,
    /// 1-based symbol consumed at this step (nearest center for continuous
    /// streams).
    pub symbol: usize,
    /// The update's normalizer before any flooring.
    pub normalizer: f64,
    pub trusted: bool,
    /// Predictive distribution over base symbols before consuming `symbol`.
    pub predictive: Vec<f64>,
}

pub fn write_trace_csv(path: &Path, rows: &[TraceRow], n_base: usize) -> Result<()> {
    let mut out = String::new();
    out.push_str(TRACE_HEADER_PREFIX);
    for x in 1..=n_base {
        let _ = write!(out, ",pred_{x}");
    }
    out.push('\n');
    for row in rows {
        let _ = write!(
            out,
            "{},{},{},{}",
            row.step, row.symbol, row.normalizer, row.trusted as u8
        );
        for p in &row.predictive {
            let _ = write!(out, ",{p}");
        }
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Parse a trace back; used by round-trip tests and downstream tooling.
pub fn read_trace_csv(path: &Path) -> Result<Vec<TraceRow>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::InvalidDataset("missing trace header".into()))?;
    if !header.starts_with(TRACE_HEADER_PREFIX) {
        return Err(Error::InvalidDataset("not a trace file".into()));
    }
    let mut rows = Vec::new();
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() < 4 {
            return Err(Error::InvalidDataset("short trace row".into()));
        }
        let parse_f = |s: &str| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Error::InvalidDataset(format!("bad number {s}")))
        };
        rows.push(TraceRow {
            step: fields[0]
                .trim()
                .parse()
                .map_err(|_| Error::InvalidDataset("bad step".into()))?,
            symbol: fields[1]
                .trim()
                .parse()
                .map_err(|_| Error::InvalidDataset("bad symbol".into()))?,
            normalizer: parse_f(fields[2])?,
            trusted: fields[3].trim() == "1",
            predictive: fields[4..]
                .iter()
                .map(|f| parse_f(f))
                .collect::<Result<Vec<f64>>>()?,
        });
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Experiment results
// ---------------------------------------------------------------------------

pub fn eigen_trials_csv(name: &str, result: &EigenRecoveryResult) -> String {
    let mut out = String::new();
    out.push_str(EIGEN_TRIALS_HEADER);
    out.push('\n');
    for cell in &result.cells {
        for (trial, estimates) in cell.estimates.iter().enumerate() {
            for (index, est) in estimates.iter().enumerate() {
                let truth = result.true_eigs[index];
                let _ = writeln!(
                    out,
                    "{name},{},{trial},{index},{},{},{},{}",
                    cell.n, truth.re, truth.im, est.re, est.im
                );
            }
        }
    }
    out
}

pub fn eigen_summary_csv(name: &str, result: &EigenRecoveryResult) -> String {
    let mut out = String::new();
    out.push_str(EIGEN_SUMMARY_HEADER);
    out.push('\n');
    for s in result.summaries() {
        let _ = writeln!(
            out,
            "{name},{},{},{},{},{},{},{}",
            s.n, s.index, s.true_value.re, s.true_value.im, s.mean.re, s.mean.im, s.half_width
        );
    }
    out
}

pub fn l1_trials_csv(name: &str, result: &L1ErrorResult) -> String {
    let mut out = String::new();
    out.push_str(L1_TRIALS_HEADER);
    out.push('\n');
    for cell in &result.cells {
        for (trial, err) in cell.errors.iter().enumerate() {
            let _ = writeln!(out, "{name},{},{trial},{err}", cell.n);
        }
    }
    out
}

pub fn l1_summary_csv(name: &str, result: &L1ErrorResult) -> String {
    let mut out = String::new();
    out.push_str(L1_SUMMARY_HEADER);
    out.push('\n');
    for cell in &result.cells {
        let _ = writeln!(out, "{name},{},{},{}", cell.n, cell.mean(), cell.stderr());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn temp_path(name: &str) -> std::path::PathBuf {
        let mut p = std::env::temp_dir();
        p.push(format!("rrhmm_io_test_{}_{name}", std::process::id()));
        p
    }

    #[test]
    fn triples_round_trip() {
        let path = temp_path("triples.csv");
        let triples = vec![[1, 2, 3], [3, 3, 1]];
        write_triples_csv(&path, &triples).unwrap();
        match read_dataset(&path).unwrap() {
            Dataset::Triples(back) => assert_eq!(back, triples),
            other => panic!("wrong dataset kind: {other:?}"),
        }
        std::fs::remove_file(&path).ok();
    }

    #[test]
    fn empty_triples_file_round_trips() {
        let path = temp_path("empty.csv");
        write_triples_csv(&path, &[]).unwrap();
        match read_dataset(&path).unwrap() {
            Dataset::Triples(back) => assert!(back.is_empty()),
            other => panic!("wrong dataset kind: {other:?}"),
        }
        std::fs::remove_file(&path).ok();
    }

    #[test]
    fn sequence_round_trip() {
        let path = temp_path("seq.csv");
        let seq = vec![2, 1, 1, 3, 2];
        write_sequence_csv(&path, &seq).unwrap();
        match read_dataset(&path).unwrap() {
            Dataset::Sequence(back) => assert_eq!(back, seq),
            other => panic!("wrong dataset kind: {other:?}"),
        }
        std::fs::remove_file(&path).ok();
    }

    #[test]
    fn continuous_round_trip_preserves_full_precision() {
        let path = temp_path("cont.csv");
        let points = vec![
            DVector::from_vec(vec![0.1 + 0.2, -1.5e-13]),
            DVector::from_vec(vec![std::f64::consts::PI, 2.0_f64.sqrt()]),
        ];
        write_continuous_csv(&path, &points).unwrap();
        match read_dataset(&path).unwrap() {
            Dataset::Continuous(back) => {
                for (a, b) in back.iter().zip(&points) {
                    assert_eq!(a, b);
                }
            }
            other => panic!("wrong dataset kind: {other:?}"),
        }
        std::fs::remove_file(&path).ok();
    }

    #[test]
    fn malformed_rows_are_rejected() {
        let path = temp_path("bad.csv");
        std::fs::write(&path, "x1,x2,x3\n1,2\n").unwrap();
        assert!(matches!(read_dataset(&path), Err(Error::InvalidDataset(_))));
        std::fs::remove_file(&path).ok();
    }

    #[test]
    fn trace_round_trip() {
        let path = temp_path("trace.csv");
        let rows = vec![TraceRow {
            step: 1,
            symbol: 2,
            normalizer: 0.25,
            trusted: true,
            predictive: vec![0.5, 0.25, 0.25],
        }];
        write_trace_csv(&path, &rows, 3).unwrap();
        let back = read_trace_csv(&path).unwrap();
        assert_eq!(back.len(), 1);
        assert_eq!(back[0].symbol, 2);
        assert_eq!(back[0].normalizer, 0.25);
        assert_eq!(back[0].predictive, rows[0].predictive);
        std::fs::remove_file(&path).ok();
    }
}
