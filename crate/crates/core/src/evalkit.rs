//! Exact-match NER scoring and comparison tables.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::codec::{ground_pairs, TypedPair};
use crate::corpus::Mention;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchMode {
    /// Multiset of (type, surface text).
    #[default]
    Surface,
    /// (type, start, end) after grounding predictions in the sentence.
    Grounded,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TypeCounts {
    pub tp: u64,
    pub pred: u64,
    pub gold: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MatchCounts {
    pub per_type: BTreeMap<String, TypeCounts>,
    /// Predicted payloads that could not be located in the text (grounded
    /// mode only).
    pub ungroundable: u64,
}

impl MatchCounts {
    pub fn merge(&mut self, other: &MatchCounts) {
        for (t, c) in &other.per_type {
            let e = self.per_type.entry(t.clone()).or_default();
            e.tp += c.tp;
            e.pred += c.pred;
            e.gold += c.gold;
        }
        self.ungroundable += other.ungroundable;
    }

    pub fn total(&self) -> TypeCounts {
        self.per_type.values().fold(TypeCounts::default(), |a, c| TypeCounts { tp: a.tp + c.tp, pred: a.pred + c.pred, gold: a.gold + c.gold })
    }
}

/// Counts for one sentence. `NULL` pairs are ignored; every gold item can be
/// matched at most once.
pub fn score_sentence(pred: &[TypedPair], gold: &[Mention], text: &str, mode: MatchMode) -> MatchCounts {
    let mut out = MatchCounts::default();
    for g in gold {
        out.per_type.entry(g.type_id.clone()).or_default().gold += 1;
    }
    let pred: Vec<&TypedPair> = pred.iter().filter(|p| !p.is_null()).collect();
    for p in &pred {
        out.per_type.entry(p.type_id.clone()).or_default().pred += 1;
    }
    match mode {
        MatchMode::Surface => {
            let mut avail: HashMap<(&str, &str), u64> = HashMap::new();
            for g in gold {
                *avail.entry((&g.type_id, &g.text)).or_default() += 1;
            }
            for p in &pred {
                let key = (p.type_id.as_str(), p.surface().expect("non-null"));
                if let Some(n) = avail.get_mut(&key).filter(|n| **n > 0) {
                    *n -= 1;
                    out.per_type.get_mut(key.0).expect("counted").tp += 1;
                }
            }
        }
        MatchMode::Grounded => {
            let owned: Vec<TypedPair> = pred.iter().map(|p| (*p).clone()).collect();
            let g = ground_pairs(text, &owned);
            out.ungroundable = g.ungroundable.len() as u64;
            let mut avail: HashMap<(&str, usize, usize), u64> = HashMap::new();
            for m in gold {
                *avail.entry((&m.type_id, m.start, m.end)).or_default() += 1;
            }
            for m in &g.mentions {
                if let Some(n) = avail.get_mut(&(m.type_id.as_str(), m.start, m.end)).filter(|n| **n > 0) {
                    *n -= 1;
                    out.per_type.get_mut(&m.type_id).expect("counted").tp += 1;
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TypeScore {
    pub tp: u64,
    pub pred: u64,
    pub gold: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

impl TypeScore {
    fn from_counts(c: TypeCounts) -> Self {
        let (precision, recall) = (ratio(c.tp, c.pred), ratio(c.tp, c.gold));
        Self { tp: c.tp, pred: c.pred, gold: c.gold, precision, recall, f1: f1(precision, recall) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_type: BTreeMap<String, TypeScore>,
    pub macro_f1: f64,
    pub micro_precision: f64,
    pub micro_recall: f64,
    pub micro_f1: f64,
    pub generations: u64,
    pub parse_validity: f64,
    pub ungroundable_rate: f64,
}

/// Aggregates counts. Types with neither gold nor predicted items are left
/// out of the macro average.
pub fn aggregate(counts: &MatchCounts) -> Result<EvalReport> {
    let total = counts.total();
    if total.gold == 0 && total.pred == 0 {
        return Err(Error::invalid("nothing to evaluate: no gold mentions and no predictions"));
    }
    let per_type: BTreeMap<String, TypeScore> = counts
        .per_type
        .iter()
        .filter(|(_, c)| c.gold > 0 || c.pred > 0)
        .map(|(t, c)| (t.clone(), TypeScore::from_counts(*c)))
        .collect();
    let macro_f1 = per_type.values().map(|s| s.f1).sum::<f64>() / per_type.len() as f64;
    let micro = TypeScore::from_counts(total);
    Ok(EvalReport {
        per_type,
        macro_f1,
        micro_precision: micro.precision,
        micro_recall: micro.recall,
        micro_f1: micro.f1,
        generations: 0,
        parse_validity: 1.0,
        ungroundable_rate: ratio(counts.ungroundable, total.pred),
    })
}

/// Running evaluation over generated targets.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Evaluation {
    pub counts: MatchCounts,
    pub generations: u64,
    pub valid: u64,
}

impl Evaluation {
    /// Adds one generation. An unparseable generation should be passed with
    /// no predicted pairs and `valid = false`.
    pub fn add(&mut self, pred: &[TypedPair], gold: &[Mention], text: &str, mode: MatchMode, valid: bool) {
        self.counts.merge(&score_sentence(pred, gold, text, mode));
        self.generations += 1;
        self.valid += valid as u64;
    }

    pub fn merge(&mut self, other: &Evaluation) {
        self.counts.merge(&other.counts);
        self.generations += other.generations;
        self.valid += other.valid;
    }

    pub fn report(&self) -> Result<EvalReport> {
        let mut r = aggregate(&self.counts)?;
        r.generations = self.generations;
        r.parse_validity = if self.generations == 0 { 1.0 } else { ratio(self.valid, self.generations) };
        Ok(r)
    }
}

/// Aligned plain-text table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Table {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(headers: impl IntoIterator<Item = impl Into<String>>) -> Self {
        Self { headers: headers.into_iter().map(Into::into).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: impl IntoIterator<Item = impl Into<String>>) {
        self.rows.push(row.into_iter().map(Into::into).collect());
    }
}

impl fmt::Display for Table {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let cols = self.headers.len();
        let mut w: Vec<usize> = self.headers.iter().map(|h| h.chars().count()).collect();
        for r in &self.rows {
            for (i, c) in r.iter().enumerate().take(cols) {
                w[i] = w[i].max(c.chars().count());
            }
        }
        let line = |f: &mut fmt::Formatter<'_>, cells: &[String]| -> fmt::Result {
            let mut s = String::new();
            for (i, c) in cells.iter().enumerate().take(cols) {
                let pad = w[i] - c.chars().count();
                if i == 0 {
                    s.push_str(c);
                    s.push_str(&" ".repeat(pad));
                } else {
                    s.push_str("  ");
                    s.push_str(&" ".repeat(pad));
                    s.push_str(c);
                }
            }
            writeln!(f, "{}", s.trim_end())
        };
        line(f, &self.headers)?;
        let total: usize = w.iter().sum::<usize>() + 2 * cols.saturating_sub(1);
        writeln!(f, "{}", "-".repeat(total))?;
        for r in &self.rows {
            line(f, r)?;
        }
        Ok(())
    }
}

/// F1 as a percentage with two decimals.
pub fn pct(x: f64) -> String {
    format!("{:.2}", 100.0 * x)
}

impl EvalReport {
    pub fn to_table(&self) -> Table {
        let mut t = Table::new(["type", "P", "R", "F1", "tp", "pred", "gold"]);
        for (ty, s) in &self.per_type {
            t.push([ty.clone(), pct(s.precision), pct(s.recall), pct(s.f1), s.tp.to_string(), s.pred.to_string(), s.gold.to_string()]);
        }
        t.push(["macro".to_string(), String::new(), String::new(), pct(self.macro_f1), String::new(), String::new(), String::new()]);
        t.push([
            "micro".to_string(),
            pct(self.micro_precision),
            pct(self.micro_recall),
            pct(self.micro_f1),
            String::new(),
            String::new(),
            String::new(),
        ]);
        t
    }
}

/// Per-dataset F1 of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunScores {
    pub name: String,
    pub models: usize,
    pub f1: Vec<(String, f64)>,
}

impl RunScores {
    pub fn mean(&self) -> f64 {
        self.f1.iter().map(|(_, v)| v).sum::<f64>() / self.f1.len().max(1) as f64
    }

    pub fn get(&self, dataset: &str) -> Option<f64> {
        self.f1.iter().find(|(d, _)| d == dataset).map(|(_, v)| *v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub datasets: Vec<String>,
    pub a: RunScores,
    pub b: RunScores,
    /// `b - a` per dataset.
    pub deltas: Vec<f64>,
    pub mean_delta: f64,
}

pub fn compare_runs(a: &RunScores, b: &RunScores) -> Result<Comparison> {
    let da: Vec<&String> = a.f1.iter().map(|(d, _)| d).collect();
    let db: Vec<&String> = b.f1.iter().map(|(d, _)| d).collect();
    if da != db || da.is_empty() {
        return Err(Error::invalid("runs cover different dataset lists"));
    }
    let deltas: Vec<f64> = a.f1.iter().zip(&b.f1).map(|((_, x), (_, y))| y - x).collect();
    Ok(Comparison {
        datasets: da.into_iter().cloned().collect(),
        a: a.clone(),
        b: b.clone(),
        mean_delta: b.mean() - a.mean(),
        deltas,
    })
}

impl Comparison {
    pub fn to_table(&self) -> Table {
        let mut headers = vec!["Model".to_string()];
        headers.extend(self.datasets.iter().cloned());
        headers.push("Avg.".into());
        headers.push("# models".into());
        let mut t = Table { headers, rows: Vec::new() };
        for r in [&self.a, &self.b] {
            let mut row = vec![r.name.clone()];
            row.extend(r.f1.iter().map(|(_, v)| pct(*v)));
            row.push(pct(r.mean()));
            row.push(r.models.to_string());
            t.rows.push(row);
        }
        let mut row = vec!["delta".to_string()];
        row.extend(self.deltas.iter().map(|d| format!("{:+.2}", 100.0 * d)));
        row.push(format!("{:+.2}", 100.0 * self.mean_delta));
        row.push(String::new());
        t.rows.push(row);
        t
    }
}

/// Rows of named runs over the same datasets with an average column.
pub fn score_table(first_header: &str, runs: &[RunScores]) -> Result<Table> {
    let first = runs.first().ok_or_else(|| Error::invalid("no runs to tabulate"))?;
    let mut headers = vec![first_header.to_string()];
    headers.extend(first.f1.iter().map(|(d, _)| d.clone()));
    headers.push("Avg. Score".into());
    let mut t = Table { headers, rows: Vec::new() };
    for r in runs {
        if r.f1.iter().map(|(d, _)| d).ne(first.f1.iter().map(|(d, _)| d)) {
            return Err(Error::invalid("runs cover different dataset lists"));
        }
        let mut row = vec![r.name.clone()];
        row.extend(r.f1.iter().map(|(_, v)| pct(*v)));
        row.push(pct(r.mean()));
        t.rows.push(row);
    }
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tom() -> (&'static str, Vec<Mention>) {
        ("Tom went to the zoo", vec![Mention::new("name", "Tom", 0, 3), Mention::new("location", "zoo", 16, 19)])
    }

    #[test]
    fn partial_match() {
        let (text, gold) = tom();
        let c = score_sentence(&[TypedPair::text("name", "Tom")], &gold, text, MatchMode::Surface);
        assert_eq!(c.per_type["name"], TypeCounts { tp: 1, pred: 1, gold: 1 });
        assert_eq!(c.per_type["location"], TypeCounts { tp: 0, pred: 0, gold: 1 });
    }

    #[test]
    fn gold_against_itself() {
        let (text, gold) = tom();
        let pred: Vec<TypedPair> = gold.iter().map(|m| TypedPair::text(&m.type_id, &m.text)).collect();
        for mode in [MatchMode::Surface, MatchMode::Grounded] {
            let c = score_sentence(&pred, &gold, text, mode);
            assert!(c.per_type.values().all(|t| t.tp == t.gold));
            let r = aggregate(&c).unwrap();
            assert_eq!((r.macro_f1, r.micro_f1), (1.0, 1.0));
        }
    }

    #[test]
    fn duplicate_predictions_match_once() {
        let (text, gold) = tom();
        let pred = [TypedPair::text("name", "Tom"), TypedPair::text("name", "Tom")];
        for mode in [MatchMode::Surface, MatchMode::Grounded] {
            let c = score_sentence(&pred, &gold, text, mode);
            assert_eq!((c.per_type["name"].tp, c.per_type["name"].pred), (1, 2));
        }
    }

    #[test]
    fn null_pairs_are_ignored() {
        let (text, gold) = tom();
        let c = score_sentence(&[TypedPair::null("time")], &gold, text, MatchMode::Surface);
        assert!(!c.per_type.contains_key("time"));
    }

    #[test]
    fn two_type_hand_computation() {
        let mut c = MatchCounts::default();
        c.per_type.insert("PER".into(), TypeCounts { tp: 1, pred: 1, gold: 1 });
        c.per_type.insert("LOC".into(), TypeCounts { tp: 0, pred: 0, gold: 1 });
        c.per_type.insert("ORG".into(), TypeCounts { tp: 0, pred: 0, gold: 0 });
        let r = aggregate(&c).unwrap();
        assert_eq!(r.macro_f1, 0.5);
        assert_eq!((r.micro_precision, r.micro_recall), (1.0, 0.5));
        assert!((r.micro_f1 - 2.0 / 3.0).abs() < 1e-15);
        assert!(!r.per_type.contains_key("ORG"));
    }

    #[test]
    fn empty_evaluation_is_an_error() {
        assert!(aggregate(&MatchCounts::default()).is_err());
    }

    #[test]
    fn grounded_counts_ungroundable() {
        let (text, gold) = tom();
        let c = score_sentence(&[TypedPair::text("name", "Ann")], &gold, text, MatchMode::Grounded);
        assert_eq!(c.ungroundable, 1);
        assert_eq!(c.per_type["name"].pred, 1);
    }

    #[test]
    fn parse_validity() {
        let (text, gold) = tom();
        let mut e = Evaluation::default();
        e.add(&[TypedPair::text("name", "Tom")], &gold, text, MatchMode::Surface, true);
        e.add(&[], &gold, text, MatchMode::Surface, false);
        let r = e.report().unwrap();
        assert_eq!(r.parse_validity, 0.5);
        assert_eq!(r.generations, 2);
    }

    fn run(name: &str, models: usize, v: &[(&str, f64)]) -> RunScores {
        RunScores { name: name.into(), models, f1: v.iter().map(|(d, x)| (d.to_string(), *x)).collect() }
    }

    #[test]
    fn comparisons() {
        let a = run("single", 3, &[("a", 0.8), ("b", 0.6)]);
        let c = compare_runs(&a, &a).unwrap();
        assert!(c.deltas.iter().all(|d| *d == 0.0) && c.mean_delta == 0.0);

        let b = run("joint", 1, &[("a", 0.9), ("b", 0.6)]);
        let c = compare_runs(&a, &b).unwrap();
        let text = c.to_table().to_string();
        assert!(text.lines().next().unwrap().ends_with("# models"));
        assert!(text.contains("+10.00"));

        assert!(compare_runs(&a, &run("x", 1, &[("a", 0.9)])).is_err());
    }

    #[test]
    fn table_alignment() {
        let mut t = Table::new(["name", "F1"]);
        t.push(["long name", "1.00"]);
        t.push(["x", "10.00"]);
        let s = t.to_string();
        let widths: Vec<usize> = s.lines().map(|l| l.chars().count()).collect();
        assert_eq!(widths, vec![16, 16, 16, 16]);
    }
}
