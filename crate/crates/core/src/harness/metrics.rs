//! Accuracy decomposition, run aggregation and prediction dumps.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{normalize_answer, AnswerType, VqaRecord};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub image_id: String,
    pub question: String,
    pub gold_answer: String,
    pub predicted_answer: String,
    pub correct: bool,
}

impl PredictionRow {
    /// Builds a row; correctness is exact match after normalization.
    pub fn new(record: &VqaRecord, predicted: &str) -> Self {
        Self {
            image_id: record.image_id.clone(),
            question: record.question.clone(),
            gold_answer: record.answer.clone(),
            predicted_answer: predicted.to_string(),
            correct: normalize_answer(predicted) == normalize_answer(&record.answer),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionDump {
    pub rows: Vec<PredictionRow>,
}

const DUMP_HEADER: [&str; 5] = ["image_id", "question", "gold", "predicted", "correct"];

impl PredictionDump {
    pub fn failures(&self) -> PredictionDump {
        PredictionDump {
            rows: self.rows.iter().filter(|r| !r.correct).cloned().collect(),
        }
    }

    /// UTF-8 CSV with a header row.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let fail = |e: &dyn std::fmt::Display| Error::WriteFailure {
            path: path.to_path_buf(),
            reason: e.to_string(),
        };
        let mut w = csv::Writer::from_path(path).map_err(|e| fail(&e))?;
        w.write_record(DUMP_HEADER).map_err(|e| fail(&e))?;
        for r in &self.rows {
            w.write_record([
                r.image_id.as_str(),
                r.question.as_str(),
                r.gold_answer.as_str(),
                r.predicted_answer.as_str(),
                if r.correct { "true" } else { "false" },
            ])
            .map_err(|e| fail(&e))?;
        }
        w.flush().map_err(|e| fail(&e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        if !path.is_file() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let mut r = csv::Reader::from_path(path)?;
        let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        if header != DUMP_HEADER {
            return Err(Error::MalformedRow {
                row: 1,
                reason: format!("unexpected header {header:?}"),
            });
        }
        let mut rows = Vec::new();
        for (i, rec) in r.records().enumerate() {
            let rec = rec?;
            let correct = match &rec[4] {
                "true" => true,
                "false" => false,
                other => {
                    return Err(Error::MalformedRow {
                        row: i + 2,
                        reason: format!("correct must be true or false, got `{other}`"),
                    })
                }
            };
            rows.push(PredictionRow {
                image_id: rec[0].to_string(),
                question: rec[1].to_string(),
                gold_answer: rec[2].to_string(),
                predicted_answer: rec[3].to_string(),
                correct,
            });
        }
        Ok(Self { rows })
    }
}

/// Accuracies split by answer type. A partition with no records reports
/// `None` rather than zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub open_accuracy: Option<f64>,
    pub closed_accuracy: Option<f64>,
    pub overall_accuracy: Option<f64>,
    pub n_open: usize,
    pub n_closed: usize,
    pub per_question_type: BTreeMap<String, f64>,
}

fn ratio(hits: usize, n: usize) -> Option<f64> {
    (n > 0).then(|| hits as f64 / n as f64)
}

/// Scores `dump` against `records`, which must describe the same questions in
/// the same order.
pub fn compute_accuracy(dump: &PredictionDump, records: &[VqaRecord]) -> Result<MetricsReport> {
    if dump.rows.len() != records.len() {
        return Err(Error::AlignmentError(format!(
            "{} prediction rows for {} records",
            dump.rows.len(),
            records.len()
        )));
    }
    let mut hits = [0usize; 2];
    let mut counts = [0usize; 2];
    let mut by_type: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for (i, (row, rec)) in dump.rows.iter().zip(records).enumerate() {
        if row.image_id != rec.image_id || row.question != rec.question {
            return Err(Error::AlignmentError(format!(
                "row {i} is ({}, {:?}) but record is ({}, {:?})",
                row.image_id, row.question, rec.image_id, rec.question
            )));
        }
        let slot = match rec.answer_type {
            AnswerType::Open => 0,
            AnswerType::Closed => 1,
        };
        counts[slot] += 1;
        hits[slot] += usize::from(row.correct);
        if let Some(t) = &rec.question_type {
            let e = by_type.entry(t.clone()).or_default();
            e.0 += usize::from(row.correct);
            e.1 += 1;
        }
    }
    Ok(MetricsReport {
        open_accuracy: ratio(hits[0], counts[0]),
        closed_accuracy: ratio(hits[1], counts[1]),
        overall_accuracy: ratio(hits[0] + hits[1], counts[0] + counts[1]),
        n_open: counts[0],
        n_closed: counts[1],
        per_question_type: by_type
            .into_iter()
            .map(|(t, (h, n))| (t, h as f64 / n as f64))
            .collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunAggregate {
    pub per_run: Vec<MetricsReport>,
    pub mean_report: MetricsReport,
    pub run_count: usize,
}

fn mean_of(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

impl RunAggregate {
    /// Field-wise arithmetic means. Optional fields average over the runs that
    /// report them; counts are rounded means.
    pub fn from_runs(per_run: Vec<MetricsReport>) -> Result<Self> {
        if per_run.is_empty() {
            return Err(Error::ConfigInvalid("cannot aggregate zero runs".into()));
        }
        let n = per_run.len() as f64;
        let mut types: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for r in &per_run {
            for (t, a) in &r.per_question_type {
                types.entry(t.clone()).or_default().push(*a);
            }
        }
        let mean_report = MetricsReport {
            open_accuracy: mean_of(per_run.iter().map(|r| r.open_accuracy)),
            closed_accuracy: mean_of(per_run.iter().map(|r| r.closed_accuracy)),
            overall_accuracy: mean_of(per_run.iter().map(|r| r.overall_accuracy)),
            n_open: (per_run.iter().map(|r| r.n_open).sum::<usize>() as f64 / n).round() as usize,
            n_closed: (per_run.iter().map(|r| r.n_closed).sum::<usize>() as f64 / n).round() as usize,
            per_question_type: types
                .into_iter()
                .map(|(t, v)| (t, v.iter().sum::<f64>() / v.len() as f64))
                .collect(),
        };
        Ok(Self {
            run_count: per_run.len(),
            per_run,
            mean_report,
        })
    }
}

fn pct(v: Option<f64>) -> String {
    v.map(|x| format!("{:.1}", 100.0 * x)).unwrap_or_else(|| "-".into())
}

/// Aligned open / closed / overall table, one line per labelled report.
pub fn render_table(rows: &[(&str, &MetricsReport)]) -> String {
    let width = rows.iter().map(|(l, _)| l.len()).max().unwrap_or(0).max(5);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<width$}  {:>7}  {:>7}  {:>7}",
        "model", "open", "closed", "overall"
    );
    for (label, r) in rows {
        let _ = writeln!(
            out,
            "{:<width$}  {:>7}  {:>7}  {:>7}",
            label,
            pct(r.open_accuracy),
            pct(r.closed_accuracy),
            pct(r.overall_accuracy)
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::PathBuf;

    fn record(i: usize, ty: AnswerType, answer: &str, qt: &str) -> VqaRecord {
        VqaRecord {
            image_id: format!("img{i}"),
            image_path: PathBuf::from(format!("img{i}.png")),
            question: format!("q{i}"),
            answer: answer.into(),
            answer_type: ty,
            question_type: Some(qt.into()),
            language: None,
        }
    }

    #[test]
    fn hand_counted_fixture() {
        let mut records = Vec::new();
        let mut rows = Vec::new();
        for i in 0..4 {
            let r = record(i, AnswerType::Open, "chest", "ORGAN");
            rows.push(PredictionRow::new(&r, if i < 2 { "chest" } else { "brain" }));
            records.push(r);
        }
        for i in 4..8 {
            let r = record(i, AnswerType::Closed, "yes", "PRES");
            rows.push(PredictionRow::new(&r, if i < 7 { "Yes." } else { "no" }));
            records.push(r);
        }
        let m = compute_accuracy(&PredictionDump { rows }, &records).unwrap();
        assert_eq!(m.open_accuracy, Some(0.5));
        assert_eq!(m.closed_accuracy, Some(0.75));
        assert_eq!(m.overall_accuracy, Some(0.625));
        assert_eq!(m.per_question_type["ORGAN"], 0.5);
    }

    #[test]
    fn empty_partition_is_absent() {
        let r = record(0, AnswerType::Closed, "no", "PRES");
        let dump = PredictionDump {
            rows: vec![PredictionRow::new(&r, "no")],
        };
        let m = compute_accuracy(&dump, &[r]).unwrap();
        assert_eq!(m.open_accuracy, None);
        assert_eq!(m.overall_accuracy, m.closed_accuracy);
    }

    #[test]
    fn misaligned_rows() {
        let a = record(0, AnswerType::Closed, "no", "PRES");
        let b = record(1, AnswerType::Closed, "no", "PRES");
        let dump = PredictionDump {
            rows: vec![PredictionRow::new(&a, "no")],
        };
        assert!(matches!(
            compute_accuracy(&dump, std::slice::from_ref(&b)),
            Err(Error::AlignmentError(_))
        ));
        assert!(matches!(
            compute_accuracy(&dump, &[a, b]),
            Err(Error::AlignmentError(_))
        ));
    }

    #[test]
    fn aggregate_means() {
        let mk = |o: f64| MetricsReport {
            open_accuracy: Some(o),
            closed_accuracy: None,
            overall_accuracy: Some(o),
            n_open: 4,
            n_closed: 0,
            per_question_type: BTreeMap::new(),
        };
        let agg = RunAggregate::from_runs(vec![mk(0.6), mk(0.7)]).unwrap();
        assert!((agg.mean_report.overall_accuracy.unwrap() - 0.65).abs() < 1e-12);
        assert_eq!(agg.run_count, 2);
        let one = RunAggregate::from_runs(vec![mk(0.3)]).unwrap();
        assert_eq!(one.mean_report, mk(0.3));
    }

    #[test]
    fn csv_round_trip_and_failure_filter() {
        let dir = tempfile::tempdir().unwrap();
        let recs: Vec<VqaRecord> = (0..3).map(|i| record(i, AnswerType::Open, "a, \"b\"", "X")).collect();
        let dump = PredictionDump {
            rows: vec![
                PredictionRow::new(&recs[0], "a, \"b\""),
                PredictionRow::new(&recs[1], "a, \"b\""),
                PredictionRow::new(&recs[2], "ñ"),
            ],
        };
        let path = dir.path().join("d.csv");
        dump.write_csv(&path).unwrap();
        assert_eq!(PredictionDump::read_csv(&path).unwrap(), dump);
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().next().unwrap(), "image_id,question,gold,predicted,correct");
        assert_eq!(dump.failures().rows.len(), 1);
        let bad = dir.path().join("missing-dir").join("d.csv");
        assert!(matches!(dump.write_csv(&bad), Err(Error::WriteFailure { .. })));
    }

    #[test]
    fn table_layout() {
        let m = MetricsReport {
            open_accuracy: Some(0.5),
            closed_accuracy: None,
            overall_accuracy: Some(0.5),
            n_open: 2,
            n_closed: 0,
            per_question_type: BTreeMap::new(),
        };
        let t = render_table(&[("rn50", &m)]);
        assert_eq!(t.lines().nth(1).unwrap(), "rn50      50.0        -     50.0");
    }
}
