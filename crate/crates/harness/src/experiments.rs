//! The four study designs, their persisted results and the tables built
//! from them.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use punner_core::evalkit::{compare_runs, pct, score_table, EvalReport, RunScores, Table};
use punner_core::prompting::{PromptStrategy, StrategyKind};
use punner_core::sampler::derive_seed;
use punner_core::Codec;
use punner_model::{Seq2Seq, Trainer, Vocab};

use crate::adaptation::{adapt, raw_texts, AdaptConfig, AdaptRun};
use crate::data::Corpus;
use crate::error::{HarnessError, Result};
use crate::finetune::{fine_tune, final_reports, FineTuneConfig, FineTuneRun};
use crate::ner::{build_vocab, corpus_texts, Recognizer};
use crate::plan::{ExperimentPlan, Resolved};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Pilot,
    JointVsSingle,
    PromptAblation,
    AdaptStepAblation,
}

impl ExperimentKind {
    pub fn key(self) -> &'static str {
        match self {
            ExperimentKind::Pilot => "pilot",
            ExperimentKind::JointVsSingle => "joint_vs_single",
            ExperimentKind::PromptAblation => "prompt_ablation",
            ExperimentKind::AdaptStepAblation => "adapt_steps",
        }
    }
}

/// Everything kept from one arm trained with one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmResult {
    pub arm: String,
    pub seed: u64,
    pub models: usize,
    pub datasets: Vec<String>,
    /// Held-out score per dataset.
    pub scores: Vec<f64>,
    /// Dev score per dataset at the selected step.
    pub dev_scores: Vec<f64>,
    pub reports: Vec<EvalReport>,
    pub steps: u64,
    pub selected_steps: Vec<u64>,
    pub stream_hashes: Vec<String>,
    pub all_null_fraction: f64,
    pub adapt_selected: Option<u64>,
}

impl ArmResult {
    pub fn mean(&self) -> f64 {
        mean(&self.scores)
    }

    pub fn dev_mean(&self) -> f64 {
        mean(&self.dev_scores)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub plan_id: String,
    pub kind: ExperimentKind,
    /// Arm names in presentation order.
    pub arms: Vec<String>,
    pub results: Vec<ArmResult>,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

pub fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    match s.len() {
        0 => f64::NAN,
        n if n % 2 == 1 => s[n / 2],
        n => (s[n / 2 - 1] + s[n / 2]) / 2.0,
    }
}

impl ExperimentReport {
    pub fn arm(&self, name: &str) -> impl Iterator<Item = &ArmResult> {
        let name = name.to_string();
        self.results.iter().filter(move |r| r.arm == name)
    }

    /// Median over seeds of an arm's mean held-out score.
    pub fn median_mean(&self, arm: &str) -> f64 {
        median(&self.arm(arm).map(ArmResult::mean).collect::<Vec<_>>())
    }

    pub fn median_dev_mean(&self, arm: &str) -> f64 {
        median(&self.arm(arm).map(ArmResult::dev_mean).collect::<Vec<_>>())
    }

    /// Median over seeds of an arm's held-out score on one dataset.
    pub fn median_score(&self, arm: &str, dataset: &str) -> f64 {
        let v: Vec<f64> = self
            .arm(arm)
            .filter_map(|r| r.datasets.iter().position(|d| d == dataset).map(|i| r.scores[i]))
            .collect();
        median(&v)
    }

    pub fn median_all_null(&self, arm: &str) -> f64 {
        median(&self.arm(arm).map(|r| r.all_null_fraction).collect::<Vec<_>>())
    }

    fn datasets(&self) -> Vec<String> {
        self.results.first().map(|r| r.datasets.clone()).unwrap_or_default()
    }

    /// Per-dataset medians of one arm.
    pub fn run_scores(&self, arm: &str, label: &str) -> RunScores {
        let models = self.arm(arm).next().map(|r| r.models).unwrap_or(0);
        RunScores { name: label.into(), models, f1: self.datasets().into_iter().map(|d| (d.clone(), self.median_score(arm, &d))).collect() }
    }

    fn per_seed_table(&self, label: impl Fn(&str) -> String, dev: bool) -> Table {
        let mut headers = vec!["Seed".to_string()];
        headers.extend(self.arms.iter().map(|a| label(a)));
        let mut t = Table::new(headers);
        let seeds: Vec<u64> = self.results.iter().filter(|r| r.arm == self.arms[0]).map(|r| r.seed).collect();
        let value = |r: &ArmResult| if dev { r.dev_mean() } else { r.mean() };
        for seed in &seeds {
            let mut row = vec![seed.to_string()];
            for a in &self.arms {
                row.push(self.arm(a).find(|r| r.seed == *seed).map(|r| pct(value(r))).unwrap_or_default());
            }
            t.push(row);
        }
        let mut row = vec!["median".to_string()];
        for a in &self.arms {
            row.push(pct(if dev { self.median_dev_mean(a) } else { self.median_mean(a) }));
        }
        t.push(row);
        t
    }

    /// Per-type held-out F1 (median over seeds); `-` where a dataset lacks
    /// the type.
    fn per_type_table(&self, arm: &str) -> Table {
        let datasets = self.datasets();
        let mut types: Vec<String> = Vec::new();
        for r in self.arm(arm) {
            for rep in &r.reports {
                for t in rep.per_type.keys() {
                    if !types.contains(t) {
                        types.push(t.clone());
                    }
                }
            }
        }
        types.sort();
        let mut headers = vec![format!("{arm}: type")];
        headers.extend(datasets.iter().cloned());
        let mut t = Table::new(headers);
        for ty in &types {
            let mut row = vec![ty.clone()];
            for (i, _) in datasets.iter().enumerate() {
                let v: Vec<f64> = self.arm(arm).filter_map(|r| r.reports[i].per_type.get(ty).map(|s| s.f1)).collect();
                row.push(if v.is_empty() { "-".into() } else { pct(median(&v)) });
            }
            t.push(row);
        }
        t
    }

    /// Titled tables; a pure function of the stored results.
    pub fn tables(&self) -> Result<Vec<(String, Table)>> {
        let mut out = Vec::new();
        match self.kind {
            ExperimentKind::Pilot => {
                out.push(("Dev F1 (mean over datasets)".into(), self.per_seed_table(|a| a.to_string(), true)));
                out.push(("Held-out F1 (mean over datasets)".into(), self.per_seed_table(|a| a.to_string(), false)));
            }
            ExperimentKind::JointVsSingle => {
                let single = self.run_scores("single", "Single-dataset");
                let joint = self.run_scores("joint", "Joint");
                out.push(("Joint vs single-dataset training".into(), compare_runs(&single, &joint)?.to_table()));
                out.push(("Per-type F1, joint".into(), self.per_type_table("joint")));
                out.push(("Per-type F1, single".into(), self.per_type_table("single")));
            }
            ExperimentKind::PromptAblation => {
                let runs: Vec<RunScores> = self.arms.iter().map(|a| self.run_scores(a, &strategy_label(a))).collect();
                out.push(("Prompt strategies".into(), score_table("Prompt strategy", &runs)?));
                let mut t = Table::new(["Prompt strategy", "All-NULL targets"]);
                for a in &self.arms {
                    t.push([strategy_label(a), pct(self.median_all_null(a))]);
                }
                out.push(("Training targets".into(), t));
            }
            ExperimentKind::AdaptStepAblation => {
                let runs: Vec<RunScores> = self.arms.iter().map(|a| self.run_scores(a, a)).collect();
                out.push(("Adaptation steps".into(), score_table("Adaptation", &runs)?));
            }
        }
        Ok(out)
    }

    pub fn render(&self) -> Result<String> {
        let mut s = String::new();
        for (title, t) in self.tables()? {
            s.push_str(&format!("{title}\n{t}\n"));
        }
        Ok(s)
    }
}

fn strategy_label(key: &str) -> String {
    key.parse::<StrategyKind>().map(|k| k.label().to_string()).unwrap_or_else(|_| key.to_string())
}

/// Where results go; `None` keeps everything in memory.
#[derive(Debug, Clone, Default)]
pub struct Output {
    pub dir: Option<PathBuf>,
}

impl Output {
    pub fn to(dir: impl Into<PathBuf>) -> Self {
        Self { dir: Some(dir.into()) }
    }

    fn arm_dir(root: &Path, plan: &str, arm: &str, seed: u64) -> PathBuf {
        root.join(plan).join(arm).join(format!("seed-{seed}"))
    }

    /// Writes one arm's files into a scratch directory and renames it into
    /// place.
    fn write_arm(&self, plan: &str, result: &ArmResult, files: &[(String, String)]) -> Result<()> {
        let Some(root) = &self.dir else { return Ok(()) };
        let dest = Self::arm_dir(root, plan, &result.arm, result.seed);
        let parent = dest.parent().expect("arm directory has a parent");
        fs::create_dir_all(parent)?;
        let tmp = parent.join(format!(".seed-{}.partial", result.seed));
        if tmp.exists() {
            fs::remove_dir_all(&tmp)?;
        }
        fs::create_dir_all(&tmp)?;
        fs::write(tmp.join("result.json"), serde_json::to_string_pretty(result)?)?;
        for (name, body) in files {
            fs::write(tmp.join(name), body)?;
        }
        if dest.exists() {
            fs::remove_dir_all(&dest)?;
        }
        fs::rename(&tmp, &dest)?;
        Ok(())
    }

    fn write_report(&self, report: &ExperimentReport) -> Result<()> {
        let Some(root) = &self.dir else { return Ok(()) };
        let dir = root.join(&report.plan_id);
        fs::create_dir_all(&dir)?;
        let meta = serde_json::json!({ "kind": report.kind, "arms": report.arms });
        fs::write(dir.join("experiment.json"), serde_json::to_string_pretty(&meta)?)?;
        fs::write(dir.join("tables.txt"), report.render()?)?;
        Ok(())
    }
}

/// Rebuilds a report from the per-arm files under `root/plan_id`.
pub fn load_report(root: &Path, plan_id: &str) -> Result<ExperimentReport> {
    #[derive(Deserialize)]
    struct Meta {
        kind: ExperimentKind,
        arms: Vec<String>,
    }
    let dir = root.join(plan_id);
    let meta: Meta = serde_json::from_str(&fs::read_to_string(dir.join("experiment.json"))?)?;
    let mut results = Vec::new();
    for arm in &meta.arms {
        let mut seeds: Vec<(u64, PathBuf)> = Vec::new();
        for entry in fs::read_dir(dir.join(arm))? {
            let path = entry?.path();
            let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
            if let Some(seed) = name.strip_prefix("seed-").and_then(|s| s.parse().ok()) {
                seeds.push((seed, path));
            }
        }
        seeds.sort_by_key(|(s, _)| *s);
        for (_, path) in seeds {
            results.push(serde_json::from_str(&fs::read_to_string(path.join("result.json"))?)?);
        }
    }
    Ok(ExperimentReport { plan_id: plan_id.into(), kind: meta.kind, arms: meta.arms, results })
}

/// Shared state of one experiment: resolved data, vocabulary, plan.
pub struct Context<'p> {
    pub plan: &'p ExperimentPlan,
    pub codec: Codec,
    pub corpora: Vec<Corpus>,
    pub vocab: Vocab,
}

impl<'p> Context<'p> {
    pub fn new(plan: &'p ExperimentPlan) -> Result<Self> {
        let Resolved { codec, corpora } = plan.resolve()?;
        Ok(Self::from_parts(plan, codec, corpora))
    }

    pub fn from_parts(plan: &'p ExperimentPlan, codec: Codec, corpora: Vec<Corpus>) -> Self {
        let vocab = build_vocab(&codec, corpora.iter().flat_map(|c| corpus_texts(&c.split.train)));
        Self { plan, codec, corpora, vocab }
    }

    /// Freshly initialised weights for a seed.
    pub fn init_model(&self, seed: u64) -> Result<Seq2Seq<f32>> {
        let opt = self.plan.optimizer_for(1, None);
        Ok(Trainer::new(self.plan.model.clone(), self.vocab.clone(), opt, derive_seed(seed, "init"))?.model)
    }

    /// Prefix-LM adaptation of `init` on the train texts of every corpus.
    pub fn adapt(&self, init: Seq2Seq<f32>, seed: u64, steps: u64, keep: Vec<u64>) -> Result<AdaptRun> {
        let a = &self.plan.adapt;
        let opt = self.plan.optimizer_for(steps, a.peak_lr);
        let mut trainer = Trainer::from_model(init, self.vocab.clone(), opt, derive_seed(seed, "adapt-dropout"))?;
        let cfg = AdaptConfig { steps, sampling: self.plan.sampling, eval_every: a.eval_every, dev_limit: a.dev_limit, keep, seed };
        adapt(&mut trainer, &raw_texts(&self.corpora, false), &raw_texts(&self.corpora, true), &cfg)
    }

    /// Fine-tunes `init` on the chosen corpora and evaluates the selected
    /// weights on their held-out splits.
    pub fn fine_tune(&self, init: Seq2Seq<f32>, which: &[usize], strategy: PromptStrategy, seed: u64) -> Result<(Trainer, FineTuneRun, Vec<EvalReport>)> {
        let corpora: Vec<Corpus> = which.iter().map(|&i| self.corpora[i].clone()).collect();
        let steps = self.plan.steps_for(corpora.len());
        let opt = self.plan.optimizer_for(steps, None);
        let mut trainer = Trainer::from_model(init, self.vocab.clone(), opt, derive_seed(seed, "dropout"))?;
        let cfg = FineTuneConfig { steps, strategy, sampling: self.plan.sampling, eval_every: self.plan.eval_every, eval: self.plan.eval, seed };
        let run = fine_tune(&mut trainer, &self.codec, &corpora, &cfg)?;
        let rec = Recognizer::new(&trainer.model, &trainer.vocab, &self.codec);
        let reports = final_reports(&rec, &corpora, self.plan.test_beam, self.plan.eval.match_mode, false)?;
        Ok((trainer, run, reports))
    }

    fn dataset_ids(&self) -> Vec<String> {
        self.corpora.iter().map(|c| c.dataset_id.clone()).collect()
    }

    fn all(&self) -> Vec<usize> {
        (0..self.corpora.len()).collect()
    }

    /// Adapted initial weights when the plan asks for adaptation.
    fn start(&self, seed: u64) -> Result<(Seq2Seq<f32>, Option<AdaptRun>)> {
        let init = self.init_model(seed)?;
        if self.plan.adapt.steps == 0 {
            return Ok((init, None));
        }
        let run = self.adapt(init, seed, self.plan.adapt.steps, Vec::new())?;
        Ok((run.snapshot(run.selected_step)?.clone(), Some(run)))
    }
}

/// Combines fine-tuning outcomes over one or several models into one arm
/// result with datasets in corpus order.
fn arm_result(arm: &str, seed: u64, parts: Vec<(FineTuneRun, Vec<EvalReport>)>, ctx: &Context<'_>, adapt: Option<&AdaptRun>) -> (ArmResult, Vec<(String, String)>) {
    let metric = ctx.plan.eval.metric;
    let mut r = ArmResult {
        arm: arm.into(),
        seed,
        models: parts.len(),
        datasets: ctx.dataset_ids(),
        scores: Vec::new(),
        dev_scores: Vec::new(),
        reports: Vec::new(),
        steps: 0,
        selected_steps: Vec::new(),
        stream_hashes: Vec::new(),
        all_null_fraction: 0.0,
        adapt_selected: adapt.map(|a| a.selected_step),
    };
    let (mut nulls, mut examples) = (0u64, 0u64);
    let mut files = Vec::new();
    let single = parts.len() > 1;
    for (run, reports) in parts {
        let row = run.trace.0.row_of(run.selected_step).expect("selected step is in the trace");
        r.dev_scores.extend(run.trace.0.values[row].iter().copied());
        r.scores.extend(reports.iter().map(|x| metric.of(x)));
        r.reports.extend(reports);
        r.steps += run.losses.len() as u64;
        r.selected_steps.push(run.selected_step);
        r.stream_hashes.push(run.stream_hash.clone());
        nulls += run.all_null_targets;
        examples += run.examples;
        let name = if single { format!("trace-{}.csv", run.trace.0.datasets[0]) } else { "trace.csv".to_string() };
        files.push((name.clone(), run.trace.to_csv()));
        files.push((name.replace("trace", "loss").replace(".csv", ".json"), serde_json::to_string(&run.losses).expect("floats serialize")));
    }
    if let Some(a) = adapt {
        files.push(("adapt-trace.csv".into(), a.trace.to_csv()));
    }
    r.all_null_fraction = if examples == 0 { 0.0 } else { nulls as f64 / examples as f64 };
    (r, files)
}

fn finish(ctx: &Context<'_>, out: &Output, kind: ExperimentKind, arms: Vec<String>, results: Vec<ArmResult>) -> Result<ExperimentReport> {
    let report = ExperimentReport { plan_id: ctx.plan.id.clone(), kind, arms, results };
    out.write_report(&report)?;
    Ok(report)
}

/// Scratch fine-tuning against adapt-then-fine-tune. Both arms start from
/// the same initial weights and see the same example stream.
pub fn run_pilot(ctx: &Context<'_>, out: &Output) -> Result<ExperimentReport> {
    let plan = ctx.plan;
    plan.validate()?;
    let mut results = Vec::new();
    for &seed in &plan.seeds {
        let init = ctx.init_model(seed)?;
        let scratch = ctx.fine_tune(init.clone(), &ctx.all(), plan.strategy, seed)?;
        let (r, files) = arm_result("scratch", seed, vec![(scratch.1, scratch.2)], ctx, None);
        out.write_arm(&plan.id, &r, &files)?;
        results.push(r);

        let adapted = if plan.adapt.steps == 0 { None } else { Some(ctx.adapt(init.clone(), seed, plan.adapt.steps, Vec::new())?) };
        let start = match &adapted {
            Some(a) => a.snapshot(a.selected_step)?.clone(),
            None => init,
        };
        let tuned = ctx.fine_tune(start, &ctx.all(), plan.strategy, seed)?;
        let (r, files) = arm_result("adapt", seed, vec![(tuned.1, tuned.2)], ctx, adapted.as_ref());
        out.write_arm(&plan.id, &r, &files)?;
        results.push(r);
    }
    finish(ctx, out, ExperimentKind::Pilot, vec!["scratch".into(), "adapt".into()], results)
}

/// One model over all corpora against one model per corpus.
pub fn run_joint_vs_single(ctx: &Context<'_>, out: &Output) -> Result<ExperimentReport> {
    let plan = ctx.plan;
    plan.validate()?;
    if ctx.corpora.len() < 2 {
        return Err(HarnessError::plan("joint vs single needs at least two corpora"));
    }
    let joint_strategy = PromptStrategy::new(StrategyKind::DatasetDependent);
    let mut results = Vec::new();
    for &seed in &plan.seeds {
        let (start, adapted) = ctx.start(seed)?;
        let mut parts = Vec::new();
        for i in ctx.all() {
            let (_, run, reports) = ctx.fine_tune(start.clone(), &[i], joint_strategy, seed)?;
            parts.push((run, reports));
        }
        let (r, files) = arm_result("single", seed, parts, ctx, adapted.as_ref());
        out.write_arm(&plan.id, &r, &files)?;
        results.push(r);

        let (_, run, reports) = ctx.fine_tune(start, &ctx.all(), joint_strategy, seed)?;
        let (r, files) = arm_result("joint", seed, vec![(run, reports)], ctx, adapted.as_ref());
        out.write_arm(&plan.id, &r, &files)?;
        results.push(r);
    }
    finish(ctx, out, ExperimentKind::JointVsSingle, vec!["single".into(), "joint".into()], results)
}

/// Joint training under each prompt strategy with equal budgets. Inference
/// always uses the dataset's own types.
pub fn run_prompt_ablation(ctx: &Context<'_>, out: &Output, strategies: &[StrategyKind]) -> Result<ExperimentReport> {
    let plan = ctx.plan;
    plan.validate()?;
    if strategies.is_empty() {
        return Err(HarnessError::plan("no prompt strategies to compare"));
    }
    let mut results = Vec::new();
    for &seed in &plan.seeds {
        let (start, adapted) = ctx.start(seed)?;
        for &kind in strategies {
            let strategy = PromptStrategy { kind, ..plan.strategy };
            let (_, run, reports) = ctx.fine_tune(start.clone(), &ctx.all(), strategy, seed)?;
            let (r, files) = arm_result(kind.key(), seed, vec![(run, reports)], ctx, adapted.as_ref());
            out.write_arm(&plan.id, &r, &files)?;
            results.push(r);
        }
    }
    let arms = strategies.iter().map(|k| k.key().to_string()).collect();
    finish(ctx, out, ExperimentKind::PromptAblation, arms, results)
}

/// Joint fine-tuning launched from several adaptation checkpoints of one
/// adaptation run per seed.
pub fn run_adapt_step_ablation(ctx: &Context<'_>, out: &Output, candidates: &[u64]) -> Result<ExperimentReport> {
    let plan = ctx.plan;
    plan.validate()?;
    if candidates.len() < 2 {
        return Err(HarnessError::plan("the step ablation needs at least two candidate steps"));
    }
    let a = &plan.adapt;
    for &c in candidates {
        let evaluated = c >= 1 && c <= a.steps && (c == a.steps || (a.eval_every > 0 && c % a.eval_every == 0));
        if !evaluated {
            return Err(HarnessError::MissingCheckpoint(c));
        }
    }
    let arm = |c: u64| format!("step-{c}");
    let mut results = Vec::new();
    for &seed in &plan.seeds {
        let run = ctx.adapt(ctx.init_model(seed)?, seed, a.steps, candidates.to_vec())?;
        for &c in candidates {
            let (_, ft, reports) = ctx.fine_tune(run.snapshot(c)?.clone(), &ctx.all(), plan.strategy, seed)?;
            let (mut r, files) = arm_result(&arm(c), seed, vec![(ft, reports)], ctx, Some(&run));
            r.adapt_selected = Some(c);
            out.write_arm(&plan.id, &r, &files)?;
            results.push(r);
        }
    }
    finish(ctx, out, ExperimentKind::AdaptStepAblation, candidates.iter().map(|&c| arm(c)).collect(), results)
}

/// Per-seed stream hashes of each arm, for checking that arms saw the same
/// sentences.
pub fn stream_hashes(report: &ExperimentReport) -> BTreeMap<(String, u64), Vec<String>> {
    report.results.iter().map(|r| ((r.arm.clone(), r.seed), r.stream_hashes.clone())).collect()
}
