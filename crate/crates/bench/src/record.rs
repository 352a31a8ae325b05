//! One CSV row per trial and controller.

use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::error::Result;

/// Columns that hold wall-clock measurements and therefore vary run to run.
pub const TIMING_COLUMNS: &[&str] = &[
    "opt_time_median",
    "opt_time_q1",
    "opt_time_q3",
    "total_time_median",
    "total_time_q1",
    "total_time_q3",
];

#[derive(Debug, Clone, PartialEq, Serialize, Default)]
pub struct TrialRecord {
    pub experiment: String,
    pub kind: String,
    pub robot: String,
    pub links: usize,
    pub trial: usize,
    pub horizon: usize,
    pub controller: String,
    pub knots: Option<usize>,
    pub generations: Option<usize>,
    pub multiplier: Option<f64>,
    /// Joint angles separated by `;`.
    pub start: String,
    pub goal: String,
    pub actual_cost: Option<f64>,
    pub cost_ratio: Option<f64>,
    pub normalized_cost: Option<f64>,
    pub rise_time: Option<f64>,
    pub overshoot_pct: Option<f64>,
    pub itae: Option<f64>,
    pub final_error: Option<f64>,
    pub steps: usize,
    pub failures: usize,
    pub status: Option<String>,
    pub iterations: Option<usize>,
    pub objective: Option<f64>,
    pub opt_time_median: f64,
    pub opt_time_q1: f64,
    pub opt_time_q3: f64,
    pub total_time_median: f64,
    pub total_time_q1: f64,
    pub total_time_q3: f64,
}

pub fn join_angles(v: &[f64]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(";")
}

pub const COLUMNS: &[&str] = &[
    "experiment",
    "kind",
    "robot",
    "links",
    "trial",
    "horizon",
    "controller",
    "knots",
    "generations",
    "multiplier",
    "start",
    "goal",
    "actual_cost",
    "cost_ratio",
    "normalized_cost",
    "rise_time",
    "overshoot_pct",
    "itae",
    "final_error",
    "steps",
    "failures",
    "status",
    "iterations",
    "objective",
    "opt_time_median",
    "opt_time_q1",
    "opt_time_q3",
    "total_time_median",
    "total_time_q1",
    "total_time_q3",
];

pub fn write_csv<W: Write>(out: W, records: &[TrialRecord]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(out);
    w.write_record(COLUMNS)?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_csv_file(path: &Path, records: &[TrialRecord]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    let file = std::fs::File::create(path)?;
    write_csv(std::io::BufWriter::new(file), records)
}

/// The CSV text with timing columns removed, for reproducibility checks.
pub fn without_timing(csv_text: &str) -> Result<String> {
    let mut r = csv::Reader::from_reader(csv_text.as_bytes());
    let headers = r.headers()?.clone();
    let keep: Vec<usize> = headers
        .iter()
        .enumerate()
        .filter(|(_, h)| !TIMING_COLUMNS.contains(h))
        .map(|(i, _)| i)
        .collect();
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(keep.iter().map(|&i| &headers[i]))?;
    for row in r.records() {
        let row = row?;
        w.write_record(keep.iter().map(|&i| &row[i]))?;
    }
    Ok(
        String::from_utf8(w.into_inner().map_err(|e| e.into_error())?)
            .expect("csv output is UTF-8"),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> TrialRecord {
        TrialRecord {
            experiment: "demo, quoted".into(),
            controller: "small_param".into(),
            knots: Some(3),
            start: join_angles(&[0.5, -1.25]),
            actual_cost: Some(12.5),
            opt_time_median: 0.001,
            ..TrialRecord::default()
        }
    }

    #[test]
    fn header_matches_serialized_fields() {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.serialize(sample()).unwrap();
        let text = String::from_utf8(w.into_inner().unwrap()).unwrap();
        let header = text.lines().next().unwrap();
        assert_eq!(header, COLUMNS.join(","));
    }

    #[test]
    fn quoting_and_empty_cells() {
        let mut buf = Vec::new();
        write_csv(&mut buf, &[sample()]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let row = text.lines().nth(1).unwrap();
        assert!(row.starts_with("\"demo, quoted\",,,0,0,0,small_param,3,,,0.5;-1.25,,12.5,"));

        let mut empty = Vec::new();
        write_csv(&mut empty, &[]).unwrap();
        assert_eq!(String::from_utf8(empty).unwrap().lines().count(), 1);
    }

    #[test]
    fn timing_columns_are_stripped() {
        let mut a = sample();
        let mut b = sample();
        a.total_time_q3 = 1.0;
        b.total_time_q3 = 2.0;
        let mut ta = Vec::new();
        let mut tb = Vec::new();
        write_csv(&mut ta, &[a]).unwrap();
        write_csv(&mut tb, &[b]).unwrap();
        let (ta, tb) = (
            String::from_utf8(ta).unwrap(),
            String::from_utf8(tb).unwrap(),
        );
        assert_ne!(ta, tb);
        let sa = without_timing(&ta).unwrap();
        assert_eq!(sa, without_timing(&tb).unwrap());
        assert!(!sa.contains("opt_time"));
    }
}
