//! Per-step, per-dataset validation traces and the checkpoint selection
//! rules applied to them.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row per evaluated step, column per dataset.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TraceMatrix {
    pub datasets: Vec<String>,
    pub steps: Vec<u64>,
    pub values: Vec<Vec<f64>>,
}

impl TraceMatrix {
    pub fn new(datasets: Vec<String>) -> Self {
        Self { datasets, steps: Vec::new(), values: Vec::new() }
    }

    pub fn push(&mut self, step: u64, row: Vec<f64>) -> Result<()> {
        if row.len() != self.datasets.len() {
            return Err(Error::invalid(format!("row has {} values for {} datasets", row.len(), self.datasets.len())));
        }
        if self.steps.last().is_some_and(|&s| s >= step) {
            return Err(Error::invalid(format!("step {step} is not after the previous step")));
        }
        self.steps.push(step);
        self.values.push(row);
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Unweighted mean of a row. Values are summed in sorted order so the
    /// result does not depend on dataset order.
    pub fn mean(&self, row: usize) -> f64 {
        let mut v = self.values[row].clone();
        v.sort_by(f64::total_cmp);
        v.iter().sum::<f64>() / v.len() as f64
    }

    pub fn row_of(&self, step: u64) -> Option<usize> {
        self.steps.iter().position(|&s| s == step)
    }

    pub fn write_csv<W: Write>(&self, w: W, metric: &str) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["step", "dataset_id", metric])?;
        for (step, row) in self.steps.iter().zip(&self.values) {
            for (d, v) in self.datasets.iter().zip(row) {
                out.write_record([step.to_string(), d.clone(), format!("{v:?}")])?;
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn to_csv(&self, metric: &str) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf, metric).expect("writing to memory");
        String::from_utf8(buf).expect("csv is utf-8")
    }

    /// Reads `step,dataset_id,<metric>` rows. Datasets keep first-seen order;
    /// every step must list every dataset.
    pub fn read_csv<R: Read>(r: R, metric: &str) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let headers = rdr.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["step", "dataset_id", metric] {
            return Err(Error::Parse { line: 1, column: 1, message: format!("expected header step,dataset_id,{metric}") });
        }
        let mut datasets: Vec<String> = Vec::new();
        let mut rows: Vec<(u64, Vec<Option<f64>>)> = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let line = i + 2;
            let bad = |m: &str| Error::Parse { line, column: 1, message: m.to_string() };
            let step: u64 = rec.get(0).and_then(|s| s.parse().ok()).ok_or_else(|| bad("bad step"))?;
            let d = rec.get(1).ok_or_else(|| bad("missing dataset_id"))?;
            let v: f64 = rec.get(2).and_then(|s| s.parse().ok()).ok_or_else(|| bad("bad value"))?;
            let col = match datasets.iter().position(|x| x == d) {
                Some(c) => c,
                None => {
                    if rows.len() > 1 || rows.first().is_some_and(|(s, _)| *s != step) {
                        return Err(bad("dataset appears after the first step"));
                    }
                    datasets.push(d.to_string());
                    for (_, r) in &mut rows {
                        r.push(None);
                    }
                    datasets.len() - 1
                }
            };
            if rows.last().is_none_or(|(s, _)| *s != step) {
                rows.push((step, vec![None; datasets.len()]));
            }
            let row = &mut rows.last_mut().expect("pushed").1;
            if row[col].replace(v).is_some() {
                return Err(bad("duplicate (step, dataset) entry"));
            }
        }
        let mut m = TraceMatrix::new(datasets);
        for (step, row) in rows {
            let row: Option<Vec<f64>> = row.into_iter().collect();
            m.push(step, row.ok_or_else(|| Error::invalid(format!("step {step} is missing datasets")))?)?;
        }
        Ok(m)
    }
}

/// Validation loss per step and dataset during adaptation.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AdaptTrace(pub TraceMatrix);

/// Validation F1 per step and dataset during joint fine-tuning.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct JointTrace(pub TraceMatrix);

impl AdaptTrace {
    pub fn new(datasets: Vec<String>) -> Self {
        Self(TraceMatrix::new(datasets))
    }

    pub fn push(&mut self, step: u64, losses: Vec<f64>) -> Result<()> {
        if losses.iter().any(|l| !l.is_finite() || *l < 0.0) {
            return Err(Error::invalid("losses must be finite and non-negative"));
        }
        self.0.push(step, losses)
    }

    pub fn to_csv(&self) -> String {
        self.0.to_csv("loss")
    }

    pub fn from_csv(s: &str) -> Result<Self> {
        let m = TraceMatrix::read_csv(s.as_bytes(), "loss")?;
        let mut t = Self::new(m.datasets.clone());
        for (s, r) in m.steps.into_iter().zip(m.values) {
            t.push(s, r)?;
        }
        Ok(t)
    }
}

impl JointTrace {
    pub fn new(datasets: Vec<String>) -> Self {
        Self(TraceMatrix::new(datasets))
    }

    pub fn push(&mut self, step: u64, f1: Vec<f64>) -> Result<()> {
        if f1.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid("F1 values must lie in [0, 1]"));
        }
        self.0.push(step, f1)
    }

    pub fn to_csv(&self) -> String {
        self.0.to_csv("f1")
    }

    pub fn from_csv(s: &str) -> Result<Self> {
        let m = TraceMatrix::read_csv(s.as_bytes(), "f1")?;
        let mut t = Self::new(m.datasets.clone());
        for (s, r) in m.steps.into_iter().zip(m.values) {
            t.push(s, r)?;
        }
        Ok(t)
    }
}

/// Step with the lowest mean validation loss; the earlier step wins ties.
pub fn select_adapt_checkpoint(trace: &AdaptTrace) -> Result<u64> {
    let m = &trace.0;
    if m.is_empty() {
        return Err(Error::invalid("adaptation trace is empty"));
    }
    let mut best = 0;
    for i in 1..m.steps.len() {
        if m.mean(i) < m.mean(best) {
            best = i;
        }
    }
    Ok(m.steps[best])
}

/// Step with the highest mean validation F1; the earlier step wins ties.
pub fn select_joint_checkpoint(trace: &JointTrace) -> Result<u64> {
    let m = &trace.0;
    if m.is_empty() {
        return Err(Error::invalid("joint trace is empty"));
    }
    let mut best = 0;
    for i in 1..m.steps.len() {
        if m.mean(i) > m.mean(best) {
            best = i;
        }
    }
    Ok(m.steps[best])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn adapt(rows: &[(u64, &[f64])]) -> AdaptTrace {
        let mut t = AdaptTrace::new((0..rows[0].1.len()).map(|i| format!("d{i}")).collect());
        for (s, r) in rows {
            t.push(*s, r.to_vec()).unwrap();
        }
        t
    }

    #[test]
    fn adapt_selection() {
        let t = adapt(&[(2000, &[1.2, 1.0]), (4000, &[1.1, 1.1]), (6000, &[0.9, 1.1]), (8000, &[1.3, 1.0])]);
        assert_eq!(select_adapt_checkpoint(&t).unwrap(), 6000);
        assert_eq!(select_adapt_checkpoint(&adapt(&[(5, &[3.0])])).unwrap(), 5);
        assert_eq!(select_adapt_checkpoint(&adapt(&[(1, &[1.0, 2.0]), (2, &[2.0, 1.0])])).unwrap(), 1);
        assert!(select_adapt_checkpoint(&AdaptTrace::new(vec!["a".into()])).is_err());
    }

    #[test]
    fn joint_selection_ignores_late_single_dataset_gains() {
        let mut t = JointTrace::new(vec!["a".into(), "b".into()]);
        t.push(10_000, vec![0.5, 0.5]).unwrap();
        t.push(30_000, vec![0.9, 0.8]).unwrap();
        t.push(100_000, vec![0.6, 0.95]).unwrap();
        assert_eq!(select_joint_checkpoint(&t).unwrap(), 30_000);
        assert!(select_joint_checkpoint(&JointTrace::new(vec![])).is_err());
    }

    #[test]
    fn invalid_rows() {
        let mut t = JointTrace::new(vec!["a".into()]);
        assert!(t.push(1, vec![1.5]).is_err());
        assert!(t.push(1, vec![0.5, 0.5]).is_err());
        t.push(1, vec![0.5]).unwrap();
        assert!(t.push(1, vec![0.5]).is_err());
        let mut a = AdaptTrace::new(vec!["a".into()]);
        assert!(a.push(1, vec![f64::NAN]).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let t = adapt(&[(200, &[1.25, 0.1 + 0.2]), (400, &[0.75, 1e-9])]);
        let csv = t.to_csv();
        assert!(csv.starts_with("step,dataset_id,loss\n200,d0,1.25\n"));
        assert_eq!(AdaptTrace::from_csv(&csv).unwrap(), t);
        assert!(JointTrace::from_csv(&csv).is_err());
    }

    #[test]
    fn csv_rejects_ragged_rows() {
        assert!(JointTrace::from_csv("step,dataset_id,f1\n1,a,0.5\n1,b,0.5\n2,a,0.5\n").is_err());
        assert!(JointTrace::from_csv("step,dataset_id,f1\n1,a,0.5\n2,a,0.5\n2,b,0.5\n").is_err());
    }
}
