//! Per-iteration run metrics and their CSV form.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: u64,
    /// Expected system service time of the profile played this iteration.
    pub total_expected_time: f64,
    /// Largest per-UE L2 change of the mixed strategy (0 for one-shot algorithms).
    pub max_strategy_delta: f64,
    /// Per-UE expected delay, conditioned on the UE being active.
    pub ue_delays: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub rows: Vec<TraceRow>,
}

impl RunTrace {
    pub fn push(&mut self, row: TraceRow) {
        self.rows.push(row);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn last(&self) -> Option<&TraceRow> {
        self.rows.last()
    }

    /// Row-wise sum of two subgame traces. The shorter trace is held at its
    /// last row, since a converged subgame no longer changes.
    pub fn combine(a: &RunTrace, b: &RunTrace) -> RunTrace {
        let len = a.len().max(b.len());
        let at = |t: &RunTrace, i: usize| t.rows.get(i).or(t.rows.last()).cloned();
        let rows = (0..len)
            .map(|i| match (at(a, i), at(b, i)) {
                (Some(x), Some(y)) => TraceRow {
                    iteration: i as u64,
                    total_expected_time: x.total_expected_time + y.total_expected_time,
                    max_strategy_delta: x.max_strategy_delta.max(y.max_strategy_delta),
                    ue_delays: x.ue_delays.iter().zip(&y.ue_delays).map(|(p, q)| p + q).collect(),
                },
                (Some(x), None) | (None, Some(x)) => TraceRow { iteration: i as u64, ..x },
                (None, None) => unreachable!("index below the longer length"),
            })
            .collect();
        RunTrace { rows }
    }

    /// Moving average of the totals over `window` rows (shorter at the start).
    pub fn moving_average(&self, window: usize) -> Vec<f64> {
        let window = window.max(1);
        let mut out = Vec::with_capacity(self.len());
        let mut sum = 0.0;
        for (i, row) in self.rows.iter().enumerate() {
            sum += row.total_expected_time;
            if i >= window {
                sum -= self.rows[i - window].total_expected_time;
            }
            out.push(sum / (i + 1).min(window) as f64);
        }
        out
    }

    /// CSV with columns `iteration,total_expected_time,max_strategy_delta,ue_0..`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let n = self.rows.first().map_or(0, |r| r.ue_delays.len());
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["iteration".to_string(), "total_expected_time".into(), "max_strategy_delta".into()];
        header.extend((0..n).map(|i| format!("ue_{i}")));
        w.write_record(&header)?;
        for row in &self.rows {
            let mut rec = vec![row.iteration.to_string(), row.total_expected_time.to_string(), row.max_strategy_delta.to_string()];
            rec.extend(row.ue_delays.iter().map(f64::to_string));
            w.write_record(&rec)?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trace(totals: &[f64]) -> RunTrace {
        RunTrace {
            rows: totals
                .iter()
                .enumerate()
                .map(|(i, &t)| TraceRow { iteration: i as u64, total_expected_time: t, max_strategy_delta: t, ue_delays: vec![t] })
                .collect(),
        }
    }

    #[test]
    fn combine_holds_shorter_trace() {
        let c = RunTrace::combine(&trace(&[1.0, 2.0, 3.0]), &trace(&[10.0]));
        let totals: Vec<f64> = c.rows.iter().map(|r| r.total_expected_time).collect();
        assert_eq!(totals, vec![11.0, 12.0, 13.0]);
        assert_eq!(c.rows[2].max_strategy_delta, 10.0);
        assert_eq!(c.rows[1].ue_delays, vec![12.0]);
    }

    #[test]
    fn moving_average_window() {
        assert_eq!(trace(&[2.0, 4.0, 6.0, 8.0]).moving_average(2), vec![2.0, 3.0, 5.0, 7.0]);
    }

    #[test]
    fn csv_layout() {
        let mut buf = Vec::new();
        trace(&[0.5]).write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "iteration,total_expected_time,max_strategy_delta,ue_0\n0,0.5,0.5,0.5\n");
    }
}
