//! Evaluation tables and the per-sub-epoch convergence report.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use semisup::distopt::{MetricsRow, METRICS_HEADER};
use semisup::schedule::relative_error_reduction;

use crate::error::{CliError, Result};

/// Error counts of one evaluation condition.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditionResult {
    pub condition: String,
    pub frames: usize,
    pub errors: usize,
    pub ce_sum: f64,
    pub baseline_error: Option<f64>,
}

impl ConditionResult {
    pub fn new(condition: &str) -> Self {
        ConditionResult {
            condition: condition.to_string(),
            frames: 0,
            errors: 0,
            ce_sum: 0.0,
            baseline_error: None,
        }
    }

    pub fn frame_error(&self) -> f64 {
        if self.frames == 0 {
            0.0
        } else {
            self.errors as f64 / self.frames as f64
        }
    }

    pub fn ce(&self) -> f64 {
        if self.frames == 0 {
            0.0
        } else {
            self.ce_sum / self.frames as f64
        }
    }

    /// Percent reduction of frame error against the baseline, if one was evaluated.
    pub fn relative_reduction(&self) -> Option<f64> {
        self.baseline_error
            .and_then(|b| relative_error_reduction(b, self.frame_error()).ok())
    }
}

pub fn write_eval_table<W: Write>(mut w: W, results: &[ConditionResult]) -> Result<()> {
    let io = CliError::from_io;
    writeln!(
        w,
        "condition\tframes\tframe_error\tce\tbaseline_frame_error\trelative_error_reduction"
    )
    .map_err(io)?;
    for r in results {
        let base = r
            .baseline_error
            .map(|b| format!("{b:.6}"))
            .unwrap_or_default();
        let rel = r
            .relative_reduction()
            .map(|v| format!("{v:.2}"))
            .unwrap_or_default();
        writeln!(
            w,
            "{}\t{}\t{:.6}\t{:.6}\t{base}\t{rel}",
            r.condition,
            r.frames,
            r.frame_error(),
            r.ce()
        )
        .map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_metrics(path: impl AsRef<Path>) -> Result<Vec<MetricsRow>> {
    let path = path.as_ref();
    let bad = |msg: String| CliError::data(format!("{}: {msg}", path.display()));
    let mut rdr = csv::Reader::from_path(path).map_err(|e| bad(e.to_string()))?;
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| bad(e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    if header.join(",") != METRICS_HEADER {
        return Err(bad(format!("unexpected header {:?}", header.join(","))));
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let num = |i: usize| -> Result<f64> {
            rec[i]
                .parse()
                .map_err(|_| bad(format!("bad number {:?}", &rec[i])))
        };
        rows.push(MetricsRow {
            sub_epoch: rec[0]
                .parse()
                .map_err(|_| bad(format!("bad sub-epoch {:?}", &rec[0])))?,
            frames_seen: rec[1]
                .parse()
                .map_err(|_| bad(format!("bad frame count {:?}", &rec[1])))?,
            heldout_ce: num(2)?,
            heldout_frame_error: num(3)?,
            relative_error_reduction_vs_baseline: if rec[4].is_empty() {
                None
            } else {
                Some(num(4)?)
            },
        });
    }
    Ok(rows)
}

/// Tab-separated table with one row per sub-epoch and, per run, the
/// held-out frame error and its relative reduction against the baseline.
pub fn merge_metrics(runs: &[(String, Vec<MetricsRow>)], baseline_error: Option<f64>) -> String {
    let mut table: BTreeMap<usize, Vec<Option<&MetricsRow>>> = BTreeMap::new();
    for (i, (_, rows)) in runs.iter().enumerate() {
        for r in rows {
            table
                .entry(r.sub_epoch)
                .or_insert_with(|| vec![None; runs.len()])[i] = Some(r);
        }
    }
    let mut out = String::from("sub_epoch");
    for (name, _) in runs {
        out.push_str(&format!("\t{name}.frame_error\t{name}.reduction_pct"));
    }
    out.push('\n');
    for (sub, cells) in table {
        out.push_str(&sub.to_string());
        for c in cells {
            match c {
                Some(r) => {
                    let red = match baseline_error {
                        Some(b) => relative_error_reduction(b, r.heldout_frame_error).ok(),
                        None => r.relative_error_reduction_vs_baseline,
                    };
                    out.push_str(&format!(
                        "\t{:.6}\t{}",
                        r.heldout_frame_error,
                        red.map(|v| format!("{v:.2}")).unwrap_or_default()
                    ));
                }
                None => out.push_str("\t\t"),
            }
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(sub_epoch: usize, err: f64) -> MetricsRow {
        MetricsRow {
            sub_epoch,
            frames_seen: 10 * sub_epoch as u64,
            heldout_ce: 1.0,
            heldout_frame_error: err,
            relative_error_reduction_vs_baseline: None,
        }
    }

    #[test]
    fn self_baseline_gives_zero_reduction() {
        let mut r = ConditionResult::new("all");
        r.frames = 10;
        r.errors = 4;
        r.baseline_error = Some(r.frame_error());
        assert_eq!(r.relative_reduction(), Some(0.0));
    }

    #[test]
    fn merged_table_aligns_sub_epochs() {
        let runs = vec![
            ("a".to_string(), vec![row(0, 0.5), row(1, 0.4)]),
            (
                "b".to_string(),
                vec![row(0, 0.5), row(1, 0.45), row(2, 0.25)],
            ),
        ];
        let t = merge_metrics(&runs, Some(0.5));
        assert_eq!(
            t,
            "sub_epoch\ta.frame_error\ta.reduction_pct\tb.frame_error\tb.reduction_pct\n\
             0\t0.500000\t0.00\t0.500000\t0.00\n\
             1\t0.400000\t20.00\t0.450000\t10.00\n\
             2\t\t\t0.250000\t50.00\n"
        );
    }

    #[test]
    fn metrics_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        let mut rows = vec![row(0, 0.5), row(1, 0.25)];
        rows[1].relative_error_reduction_vs_baseline = Some(50.0);
        let mut buf = Vec::new();
        semisup::distopt::write_metrics_csv(&mut buf, &rows).unwrap();
        std::fs::write(&p, buf).unwrap();
        assert_eq!(read_metrics(&p).unwrap(), rows);
    }
}
