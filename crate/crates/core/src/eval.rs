//! Batch evaluation: suites of requests run under ablation cells, metrics,
//! and a plain-text report.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{build_backend, resolve_cassette_path, BackendConfig, Cassette, ChatBackend, GatewayError, ReplayBackend};
use crate::instance::{InstanceError, ProblemInstance, ProblemType};
use crate::oracle::{brute_force_optimal, held_karp_optimal, optimality_gap, CostBound};
use crate::pipeline::{solve_request, PipelineConfig, PipelineResult, PipelineStatus, VerificationMode};
use crate::spf::{instantiate_spf, CaseLibrary};
use crate::verifier::verify;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("suite {path} is malformed: {source}")]
    SuiteJson {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("suite is empty")]
    EmptySuite,
    #[error("suite entry {index}: {message}")]
    Entry { index: usize, message: String },
    #[error(transparent)]
    Instance(#[from] InstanceError),
    #[error("no trial records to summarise")]
    NoRecords,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> EvalError + '_ {
    move |source| EvalError::Io { path: path.display().to_string(), source }
}

/// One line of a suite file. Paths are relative to the suite file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub instance_path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub request_text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub request_path: Option<PathBuf>,
    pub problem_type: ProblemType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cassette: Option<PathBuf>,
}

/// A loaded suite entry.
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteCase {
    pub id: String,
    pub instance: ProblemInstance,
    pub request: String,
    pub cassette: Option<PathBuf>,
}

pub fn load_suite(path: &Path) -> Result<Vec<SuiteCase>, EvalError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let entries: Vec<SuiteEntry> = serde_json::from_str(&text)
        .map_err(|source| EvalError::SuiteJson { path: path.display().to_string(), source })?;
    let base = path.parent().unwrap_or(Path::new("."));
    resolve_suite(entries, base)
}

pub fn resolve_suite(entries: Vec<SuiteEntry>, base: &Path) -> Result<Vec<SuiteCase>, EvalError> {
    if entries.is_empty() {
        return Err(EvalError::EmptySuite);
    }
    let mut seen = HashSet::new();
    entries
        .into_iter()
        .enumerate()
        .map(|(index, e)| {
            let entry_err = |message: String| EvalError::Entry { index, message };
            let instance = ProblemInstance::load(base.join(&e.instance_path))?;
            if instance.problem_type != e.problem_type {
                return Err(entry_err(format!(
                    "declares {} but the instance is {}",
                    e.problem_type, instance.problem_type
                )));
            }
            let request = match (e.request_text, e.request_path) {
                (Some(t), None) => t,
                (None, Some(p)) => {
                    let p = base.join(p);
                    std::fs::read_to_string(&p).map_err(io_err(&p))?
                }
                (None, None) if !instance.request_text.trim().is_empty() => instance.request_text.clone(),
                _ => return Err(entry_err("needs exactly one of request_text and request_path".into())),
            };
            let id = e.id.unwrap_or_else(|| {
                e.instance_path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| index.to_string())
            });
            if !seen.insert(id.clone()) {
                return Err(entry_err(format!("duplicate id `{id}`")));
            }
            Ok(SuiteCase { id, instance, request, cassette: e.cassette.map(|c| resolve_cassette_path(&c, Some(base))) })
        })
        .collect()
}

/// Verification on/off crossed with refinement on/off.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AblationCell {
    pub verification: bool,
    pub iteration: bool,
}

impl AblationCell {
    pub const FULL: AblationCell = AblationCell { verification: true, iteration: true };

    pub fn label(self) -> String {
        format!(
            "{}-{}",
            if self.verification { "verify" } else { "noverify" },
            if self.iteration { "iterate" } else { "noiterate" }
        )
    }

    /// Every combination of the requested switches: `None` means both.
    pub fn grid(verification: Option<bool>, iteration: Option<bool>) -> Vec<AblationCell> {
        let v: Vec<bool> = verification.map_or(vec![true, false], |b| vec![b]);
        let i: Vec<bool> = iteration.map_or(vec![true, false], |b| vec![b]);
        v.iter().flat_map(|&verification| i.iter().map(move |&iteration| AblationCell { verification, iteration })).collect()
    }

    pub fn apply(self, base: &PipelineConfig) -> PipelineConfig {
        let mut c = base.clone();
        if !self.verification {
            c.verification_mode = VerificationMode::Unverified;
        }
        c.refine_enabled = self.iteration;
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial_id: String,
    pub instance_id: String,
    pub problem_type: ProblemType,
    pub trial: usize,
    pub verification_mode: VerificationMode,
    pub iteration_enabled: bool,
    pub status: Option<PipelineStatus>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub first_feasible_cost: Option<f64>,
    pub best_cost: Option<f64>,
    /// Re-checked by the verifier, whatever mode the trial ran in.
    pub feasible: bool,
    pub refinement_success: bool,
    pub gap: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<PipelineResult>,
}

impl TrialRecord {
    pub fn verified(&self) -> bool {
        self.verification_mode != VerificationMode::Unverified
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteOptions {
    pub cells: Vec<AblationCell>,
    pub trials: usize,
    pub parallel: usize,
    /// JSON-lines file; existing records are kept and their trials skipped.
    pub sink: Option<PathBuf>,
    /// Keep full pipeline results in records.
    pub keep_results: bool,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        Self { cells: vec![AblationCell::FULL], trials: 1, parallel: 1, sink: None, keep_results: true }
    }
}

/// Replays the case's cassette when it has one, otherwise builds the
/// configured backend.
pub fn backend_for_case(
    case: &SuiteCase,
    config: &BackendConfig,
    base: Option<&Path>,
) -> Result<Box<dyn ChatBackend>, GatewayError> {
    match &case.cassette {
        Some(path) => Ok(Box::new(ReplayBackend::new(Cassette::load(path)?))),
        None => build_backend(config, base),
    }
}

fn exact_bound(instance: &ProblemInstance) -> Option<CostBound> {
    match instance.problem_type {
        ProblemType::TspSingle => held_karp_optimal(instance).ok(),
        ProblemType::Novel => None,
        _ => brute_force_optimal(instance).ok(),
    }
}

fn record_for(
    case: &SuiteCase,
    trial: usize,
    cell: AblationCell,
    verification_mode: VerificationMode,
    outcome: Result<PipelineResult, String>,
    library: &CaseLibrary,
    bound: Option<&CostBound>,
) -> TrialRecord {
    let mut record = TrialRecord {
        trial_id: trial_id(case, trial, cell),
        instance_id: case.id.clone(),
        problem_type: case.instance.problem_type,
        trial,
        verification_mode,
        iteration_enabled: cell.iteration,
        status: None,
        error: None,
        first_feasible_cost: None,
        best_cost: None,
        feasible: false,
        refinement_success: false,
        gap: None,
        result: None,
    };
    let result = match outcome {
        Ok(r) => r,
        Err(e) => {
            record.error = Some(e);
            return record;
        }
    };
    record.status = Some(result.status);
    record.first_feasible_cost = result.trace.first_feasible_cost;
    record.best_cost = result.cost;
    record.refinement_success = result.trace.refinement_success;
    if let Some(solution) = &result.solution {
        let reference = instantiate_spf(library, case.instance.problem_type.tag(), &case.instance)
            .ok()
            .or_else(|| result.trace.spf_used.clone());
        record.feasible = reference.is_some_and(|spf| verify(solution, &spf, &case.instance).feasible);
    }
    if record.feasible {
        record.gap = bound.zip(result.cost).and_then(|(b, c)| optimality_gap(c, b).ok()).map(|g| g.ratio);
    }
    record.result = Some(result);
    record
}

fn trial_id(case: &SuiteCase, trial: usize, cell: AblationCell) -> String {
    format!("{}/t{}/{}", case.id, trial, cell.label())
}

fn read_sink(path: &Path) -> Result<Vec<TrialRecord>, EvalError> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    Ok(text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .filter_map(|l| match serde_json::from_str(l) {
            Ok(r) => Some(r),
            Err(e) => {
                log::warn!("skipping unreadable record in {}: {e}", path.display());
                None
            }
        })
        .collect())
}

fn jsonl(records: &[TrialRecord]) -> String {
    records.iter().map(|r| serde_json::to_string(r).expect("record serialization is infallible") + "\n").collect()
}

/// Runs every case under every cell, `trials` times each. Failures become
/// records; the suite never aborts on one trial. Records come back (and
/// end up in the sink) in suite order.
pub fn run_suite<F>(
    cases: &[SuiteCase],
    library: &CaseLibrary,
    config: &PipelineConfig,
    options: &SuiteOptions,
    backend_factory: F,
) -> Result<Vec<TrialRecord>, EvalError>
where
    F: Fn(&SuiteCase) -> Result<Box<dyn ChatBackend>, GatewayError> + Sync,
{
    if cases.is_empty() {
        return Err(EvalError::EmptySuite);
    }
    let mut jobs = Vec::new();
    for (ci, case) in cases.iter().enumerate() {
        for trial in 1..=options.trials.max(1) {
            for &cell in &options.cells {
                jobs.push((ci, trial, cell, trial_id(case, trial, cell)));
            }
        }
    }
    let previous = match &options.sink {
        Some(p) => read_sink(p)?,
        None => Vec::new(),
    };
    let done: BTreeMap<String, TrialRecord> = previous.into_iter().map(|r| (r.trial_id.clone(), r)).collect();
    let pending: Vec<usize> = (0..jobs.len()).filter(|&j| !done.contains_key(&jobs[j].3)).collect();

    let bounds: Vec<Option<CostBound>> = cases.iter().map(|c| exact_bound(&c.instance)).collect();
    let sink = match &options.sink {
        Some(p) => Some(Mutex::new(
            std::fs::OpenOptions::new().create(true).append(true).open(p).map_err(io_err(p))?,
        )),
        None => None,
    };
    let slots: Mutex<Vec<Option<TrialRecord>>> = Mutex::new(vec![None; jobs.len()]);
    let next = AtomicUsize::new(0);
    let workers = options.parallel.clamp(1, pending.len().max(1));

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::SeqCst);
                let Some(&j) = pending.get(k) else { break };
                let (ci, trial, cell, _) = &jobs[j];
                let case = &cases[*ci];
                let cfg = cell.apply(config);
                let outcome = backend_factory(case).map_err(|e| e.to_string()).and_then(|backend| {
                    solve_request(&case.request, &case.instance, library, &cfg, backend.as_ref())
                        .map_err(|e| e.to_string())
                });
                if let Err(e) = &outcome {
                    log::warn!("trial {} failed: {e}", jobs[j].3);
                }
                let mut record =
                    record_for(case, *trial, *cell, cfg.verification_mode, outcome, library, bounds[*ci].as_ref());
                if !options.keep_results {
                    record.result = None;
                }
                if let Some(sink) = &sink {
                    let mut f = sink.lock().expect("sink lock poisoned");
                    if let Err(e) = f.write_all(jsonl(std::slice::from_ref(&record)).as_bytes()) {
                        log::error!("cannot append to record sink: {e}");
                    }
                }
                slots.lock().expect("slot lock poisoned")[j] = Some(record);
            });
        }
    });

    let slots = slots.into_inner().expect("slot lock poisoned");
    let records: Vec<TrialRecord> = jobs
        .iter()
        .zip(slots)
        .map(|((_, _, _, id), slot)| slot.or_else(|| done.get(id).cloned()).expect("every job has a record"))
        .collect();
    if let Some(p) = &options.sink {
        std::fs::write(p, jsonl(&records)).map_err(io_err(p))?;
    }
    Ok(records)
}

/// `numerator / denominator` with the percentage alongside.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fraction {
    pub numerator: usize,
    pub denominator: usize,
    pub percent: f64,
}

impl Fraction {
    pub fn new(numerator: usize, denominator: usize) -> Option<Self> {
        (denominator > 0).then(|| Self { numerator, denominator, percent: 100.0 * numerator as f64 / denominator as f64 })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeMetrics {
    pub problem_type: ProblemType,
    pub avg_cost_without_iteration: Option<f64>,
    pub avg_cost_with_iteration: Option<f64>,
    pub avg_cost_reduction: Option<f64>,
    pub refinement_success_rate: Option<Fraction>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsTable {
    pub rows: Vec<TypeMetrics>,
    pub total_trials: usize,
    pub feasibility_rate: Option<Fraction>,
    pub feasibility_with_verification: Option<Fraction>,
    pub feasibility_without_verification: Option<Fraction>,
    /// Mean of the per-type success rates.
    pub pooled_success_rate_unweighted: Option<f64>,
    /// Successes over feasible refined trials, all types together.
    pub pooled_success_rate_weighted: Option<Fraction>,
}

pub fn cost_reduction_percent(without: f64, with: f64) -> f64 {
    100.0 * (without - with) / without
}

/// Order-independent mean.
fn mean(mut values: Vec<f64>) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    Some(values.iter().sum::<f64>() / values.len() as f64)
}

/// Table-1 style metrics. Cost columns and success rates use verified,
/// feasible trials; feasibility rates count every trial, failures included.
pub fn compute_metrics(records: &[TrialRecord]) -> Result<MetricsTable, EvalError> {
    if records.is_empty() {
        return Err(EvalError::NoRecords);
    }
    let count = |pred: &dyn Fn(&TrialRecord) -> bool| -> (usize, usize) {
        let matching: Vec<_> = records.iter().filter(|r| pred(r)).collect();
        (matching.iter().filter(|r| r.feasible).count(), matching.len())
    };
    let (f_all, n_all) = count(&|_| true);
    let (f_v, n_v) = count(&|r| r.verified());
    let (f_u, n_u) = count(&|r| !r.verified());

    let mut types: Vec<ProblemType> = records.iter().map(|r| r.problem_type).collect();
    types.sort();
    types.dedup();
    let (mut pooled_success, mut pooled_feasible) = (0, 0);
    let rows: Vec<TypeMetrics> = types
        .into_iter()
        .map(|t| {
            let ok = |r: &&TrialRecord| r.problem_type == t && r.verified() && r.feasible;
            let without =
                mean(records.iter().filter(ok).filter(|r| !r.iteration_enabled).filter_map(|r| r.first_feasible_cost).collect());
            let refined: Vec<&TrialRecord> = records.iter().filter(ok).filter(|r| r.iteration_enabled).collect();
            let with = mean(refined.iter().filter_map(|r| r.best_cost).collect());
            let successes = refined.iter().filter(|r| r.refinement_success).count();
            pooled_success += successes;
            pooled_feasible += refined.len();
            TypeMetrics {
                problem_type: t,
                avg_cost_without_iteration: without,
                avg_cost_with_iteration: with,
                avg_cost_reduction: without.zip(with).map(|(a, b)| cost_reduction_percent(a, b)),
                refinement_success_rate: Fraction::new(successes, refined.len()),
            }
        })
        .collect();
    let rates: Vec<f64> = rows.iter().filter_map(|r| r.refinement_success_rate.map(|f| f.percent)).collect();
    Ok(MetricsTable {
        rows,
        total_trials: n_all,
        feasibility_rate: Fraction::new(f_all, n_all),
        feasibility_with_verification: Fraction::new(f_v, n_v),
        feasibility_without_verification: Fraction::new(f_u, n_u),
        pooled_success_rate_unweighted: mean(rates),
        pooled_success_rate_weighted: Fraction::new(pooled_success, pooled_feasible),
    })
}

/// Two decimals, with a trailing `.00` dropped.
pub fn format_percent(p: f64) -> String {
    let s = format!("{p:.2}");
    format!("{}%", s.strip_suffix(".00").unwrap_or(&s))
}

const EMPTY_CELL: &str = "n/a";

fn cell<T>(v: Option<T>, f: impl Fn(T) -> String) -> String {
    v.map_or_else(|| EMPTY_CELL.to_string(), f)
}

fn fraction_line(label: &str, f: Option<Fraction>) -> String {
    match f {
        Some(f) => format!("{label}: {} ({}/{})\n", format_percent(f.percent), f.numerator, f.denominator),
        None => format!("{label}: {EMPTY_CELL}\n"),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub text: String,
    pub json: String,
}

pub fn render_report(table: &MetricsTable) -> Report {
    let mut text = String::from(
        "Problem Type | Without Iteration | With Iteration | Average Reduction | Refinement Success Rate\n",
    );
    for r in &table.rows {
        let _ = writeln!(
            text,
            "{} | {} | {} | {} | {}",
            r.problem_type.number(),
            cell(r.avg_cost_without_iteration, |v| format!("{v:.2}")),
            cell(r.avg_cost_with_iteration, |v| format!("{v:.2}")),
            cell(r.avg_cost_reduction, format_percent),
            cell(r.refinement_success_rate, |f| format_percent(f.percent)),
        );
    }
    text.push('\n');
    let _ = writeln!(text, "Trials: {}", table.total_trials);
    text.push_str(&fraction_line("Feasibility rate", table.feasibility_rate));
    text.push_str(&fraction_line("Feasibility rate with verification", table.feasibility_with_verification));
    text.push_str(&fraction_line("Feasibility rate without verification", table.feasibility_without_verification));
    let _ = writeln!(
        text,
        "Pooled refinement success rate (mean of per-type rates): {}",
        cell(table.pooled_success_rate_unweighted, format_percent)
    );
    text.push_str(&fraction_line("Pooled refinement success rate (trial-weighted)", table.pooled_success_rate_weighted));
    let json = serde_json::to_string_pretty(table).expect("metrics serialization is infallible") + "\n";
    Report { text, json }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(t: ProblemType, iterate: bool, first: f64, best: f64) -> TrialRecord {
        TrialRecord {
            trial_id: String::new(),
            instance_id: String::new(),
            problem_type: t,
            trial: 1,
            verification_mode: VerificationMode::External,
            iteration_enabled: iterate,
            status: Some(PipelineStatus::Solved),
            error: None,
            first_feasible_cost: Some(first),
            best_cost: Some(best),
            feasible: true,
            refinement_success: best < first,
            gap: None,
            result: None,
        }
    }

    #[test]
    fn percent_formatting() {
        assert_eq!(format_percent(62.0), "62%");
        assert_eq!(format_percent(5.2836), "5.28%");
        assert_eq!(format_percent(8.8101), "8.81%");
        assert_eq!(format_percent(100.0), "100%");
    }

    #[test]
    fn reduction_from_table_costs() {
        for (a, b, expected) in [(287.87, 272.66, 5.28), (589.45, 537.52, 8.81), (328.13, 299.31, 8.78), (460.21, 428.23, 6.95)] {
            assert!((cost_reduction_percent(a, b) - expected).abs() < 0.005);
        }
    }

    #[test]
    fn metrics_and_report() {
        let records = vec![
            rec(ProblemType::TspSingle, false, 287.87, 287.87),
            rec(ProblemType::TspSingle, true, 287.87, 272.66),
            rec(ProblemType::MultiDaySingleDepot, true, 10.0, 10.0),
        ];
        let m = compute_metrics(&records).unwrap();
        assert_eq!(m.rows.len(), 2);
        assert_eq!(m.feasibility_rate.unwrap().percent, 100.0);
        assert_eq!(m.rows[1].avg_cost_without_iteration, None);
        let report = render_report(&m);
        assert!(report.text.contains("1 | 287.87 | 272.66 | 5.28% | 100%"), "{}", report.text);
        assert!(report.text.contains("2 | n/a | 10.00 | n/a | 0%"), "{}", report.text);
        assert_eq!(serde_json::from_str::<MetricsTable>(&report.json).unwrap(), m);
        assert!(matches!(compute_metrics(&[]), Err(EvalError::NoRecords)));
    }

    #[test]
    fn unverified_trials_only_affect_feasibility() {
        let mut bad = rec(ProblemType::TspSingle, true, 1.0, 1.0);
        bad.verification_mode = VerificationMode::Unverified;
        bad.feasible = false;
        let m = compute_metrics(&[rec(ProblemType::TspSingle, true, 2.0, 1.0), bad]).unwrap();
        assert_eq!(m.feasibility_rate.unwrap().percent, 50.0);
        assert_eq!(m.feasibility_without_verification.unwrap().numerator, 0);
        assert_eq!(m.rows[0].avg_cost_with_iteration, Some(1.0));
    }

    #[test]
    fn grid_cells() {
        assert_eq!(AblationCell::grid(None, None).len(), 4);
        assert_eq!(AblationCell::grid(Some(false), None).len(), 2);
        assert_eq!(AblationCell::FULL.label(), "verify-iterate");
        let c = AblationCell { verification: false, iteration: false }.apply(&PipelineConfig::default());
        assert_eq!(c.verification_mode, VerificationMode::Unverified);
        assert!(!c.refine_enabled);
    }
}
