//! Flat-file outputs: one CSV per run plus a short summary. Columns are
//! numeric throughout, so no quoting is ever needed.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::online::TraceRow;
use crate::sequence::MetricsMatrix;

/// `task,stage,accuracy` rows for every evaluated cell, stages outermost.
pub fn sequence_csv(m: &MetricsMatrix) -> String {
    let mut out = String::from("task,stage,accuracy\n");
    for stage in 0..m.tasks() {
        for task in 0..=stage {
            if let Some(a) = m.get(task, stage) {
                writeln!(out, "{task},{stage},{a:.6}").unwrap();
            }
        }
    }
    out
}

pub fn write_sequence_csv(path: &Path, m: &MetricsMatrix) -> Result<()> {
    fs::write(path, sequence_csv(m))?;
    Ok(())
}

/// Inverse of [`sequence_csv`]; accuracies round-trip at 6 decimals.
pub fn read_sequence_csv(text: &str) -> Result<MetricsMatrix> {
    let mut rows = Vec::new();
    let mut max_task = 0usize;
    for (i, line) in text.lines().enumerate() {
        if i == 0 {
            if line != "task,stage,accuracy" {
                return Err(Error::Data(format!("unexpected header {line:?}")));
            }
            continue;
        }
        let mut parts = line.split(',');
        let (t, s, a) = (parts.next(), parts.next(), parts.next());
        let (Some(t), Some(s), Some(a), None) = (t, s, a, parts.next()) else {
            return Err(Error::Data(format!("line {}: expected 3 fields", i + 1)));
        };
        let t: usize = t.parse().map_err(|e| Error::Data(format!("line {}: {e}", i + 1)))?;
        let s: usize = s.parse().map_err(|e| Error::Data(format!("line {}: {e}", i + 1)))?;
        let a: f64 = a.parse().map_err(|e| Error::Data(format!("line {}: {e}", i + 1)))?;
        max_task = max_task.max(s).max(t);
        rows.push((t, s, a));
    }
    let mut m = MetricsMatrix::new(max_task + 1);
    for (t, s, a) in rows {
        m.set(t, s, a);
    }
    Ok(m)
}

/// `step,phase,phase_accuracy,loss_mean,omega_updates` rows.
pub fn trace_csv(trace: &[TraceRow]) -> String {
    let mut out = String::from("step,phase,phase_accuracy,loss_mean,omega_updates\n");
    for r in trace {
        writeln!(
            out,
            "{},{},{:.6},{:.6},{}",
            r.step, r.phase, r.accuracy, r.loss_mean, r.omega_updates
        )
        .unwrap();
    }
    out
}

pub fn write_trace_csv(path: &Path, trace: &[TraceRow]) -> Result<()> {
    fs::write(path, trace_csv(trace))?;
    Ok(())
}

/// `metric,value` lines: final average accuracy plus per-task forgetting
/// (accuracy right after learning a task minus its accuracy at the end).
pub fn summary(m: &MetricsMatrix) -> String {
    let mut out = String::from("metric,value\n");
    match m.avg_accuracy() {
        Some(a) => writeln!(out, "avg_accuracy,{a:.6}").unwrap(),
        None => writeln!(out, "avg_accuracy,nan").unwrap(),
    }
    for (t, f) in m.forgetting().iter().enumerate() {
        match f {
            Some(f) => writeln!(out, "forgetting_task_{t},{f:.6}").unwrap(),
            None => writeln!(out, "forgetting_task_{t},nan").unwrap(),
        }
    }
    out
}

pub fn write_summary(path: &Path, m: &MetricsMatrix) -> Result<()> {
    fs::write(path, summary(m))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_matrix() -> MetricsMatrix {
        let mut m = MetricsMatrix::new(3);
        m.set(0, 0, 0.9);
        m.set(0, 1, 0.85);
        m.set(1, 1, 0.88);
        m.set(0, 2, 0.8);
        m.set(1, 2, 0.86);
        m.set(2, 2, 0.95);
        m
    }

    #[test]
    fn sequence_csv_round_trips() {
        let m = sample_matrix();
        let text = sequence_csv(&m);
        let back = read_sequence_csv(&text).unwrap();
        assert_eq!(back.tasks(), 3);
        for stage in 0..3 {
            for task in 0..=stage {
                let a = m.get(task, stage).unwrap();
                let b = back.get(task, stage).unwrap();
                assert!((a - b).abs() < 5e-7, "cell ({task},{stage})");
            }
        }
        assert_eq!(text, sequence_csv(&back), "re-serialization must be identical");
    }

    #[test]
    fn read_rejects_malformed_input() {
        assert!(read_sequence_csv("nonsense\n").is_err());
        assert!(read_sequence_csv("task,stage,accuracy\n1,2\n").is_err());
        assert!(read_sequence_csv("task,stage,accuracy\n1,2,0.5,9\n").is_err());
        assert!(read_sequence_csv("task,stage,accuracy\nx,2,0.5\n").is_err());
    }

    #[test]
    fn summary_lists_average_then_forgetting() {
        let m = sample_matrix();
        let s = summary(&m);
        let lines: Vec<&str> = s.lines().collect();
        assert_eq!(lines[0], "metric,value");
        let avg = (0.8 + 0.86 + 0.95) / 3.0;
        assert_eq!(lines[1], format!("avg_accuracy,{avg:.6}"));
        assert_eq!(lines[2], format!("forgetting_task_0,{:.6}", 0.9 - 0.8));
        assert_eq!(lines[3], format!("forgetting_task_1,{:.6}", 0.88 - 0.86));
        assert_eq!(lines.len(), 4, "last task has no forgetting entry");
    }

    #[test]
    fn trace_csv_has_one_row_per_entry() {
        let trace = vec![
            TraceRow { step: 10, phase: 0, accuracy: 0.5, loss_mean: 0.7, omega_updates: 0 },
            TraceRow { step: 10, phase: 1, accuracy: 0.25, loss_mean: 0.7, omega_updates: 0 },
        ];
        let text = trace_csv(&trace);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[1], "10,0,0.500000,0.700000,0");
        assert_eq!(lines[2], "10,1,0.250000,0.700000,0");
    }

    #[test]
    fn files_land_on_disk() {
        let dir = tempfile::tempdir().unwrap();
        let m = sample_matrix();
        let p = dir.path().join("metrics.csv");
        write_sequence_csv(&p, &m).unwrap();
        let back = read_sequence_csv(&std::fs::read_to_string(&p).unwrap()).unwrap();
        assert_eq!(back.tasks(), 3);
        let s = dir.path().join("summary.csv");
        write_summary(&s, &m).unwrap();
        assert!(std::fs::read_to_string(&s).unwrap().starts_with("metric,value"));
    }
}
