//! The two solving pathways and their trace.
//!
//! Pathway A: match a library case, instantiate it, then alternate
//! generate/verify/fix until feasible and refine. Pathway B: have the model
//! write its own formulation, check solutions by asking it (plus external
//! checks on whatever constraints could be classified), then refine.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{
    parse_generated_spf, parse_match_response, parse_self_verification_response, parse_solution_response,
    BackendConfig, ChatBackend, GatewayError, MatchOutcome, PromptKind, SelfVerdict, Session, Transcript,
};
use crate::instance::{validate_instance, Defect, ProblemInstance};
use crate::spf::{
    instantiate_spf, render_feedback_prompt, render_fix_prompt, render_match_prompt, render_reask,
    render_refine_prompt, render_self_verification_prompt, render_solve_prompt, render_spf_generation_prompt,
    CaseLibrary, SpfError, StructuredProblemFormulation,
};
use crate::verifier::{
    compare_costs, compare_solutions, compute_cost, reported_cost_warning, verify_with_policy, CandidateSolution,
    Comparison, DepotPolicy, VerificationReport,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PathwayOverride {
    ForceA,
    ForceB,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum VerificationMode {
    /// Verifier in pathway A; self-check plus external override in pathway B.
    #[default]
    #[serde(rename = "EXTERNAL")]
    External,
    /// The model's own verdict only.
    #[serde(rename = "SELF")]
    SelfCheck,
    /// No checking at all; the first parseable solution is returned.
    #[serde(rename = "NONE")]
    Unverified,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub max_feasibility_iters: usize,
    pub max_refine_rounds: usize,
    pub pathway_override: Option<PathwayOverride>,
    pub backend: BackendConfig,
    pub verification_mode: VerificationMode,
    pub refine_enabled: bool,
    pub depot_policy: DepotPolicy,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            max_feasibility_iters: 5,
            max_refine_rounds: 5,
            pathway_override: None,
            backend: BackendConfig::default(),
            verification_mode: VerificationMode::External,
            refine_enabled: true,
            depot_policy: DepotPolicy::Strict,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.max_feasibility_iters == 0 {
            return Err(PipelineError::Config("max_feasibility_iters must be at least 1".into()));
        }
        if self.max_refine_rounds == 0 {
            return Err(PipelineError::Config("max_refine_rounds must be at least 1".into()));
        }
        self.backend.validate().map_err(|e| PipelineError::Config(e.to_string()))
    }

    /// Upper bound on backend completions for one run.
    pub fn call_budget(&self) -> usize {
        2 + 2 * self.max_feasibility_iters + 2 * self.max_refine_rounds + 2
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Pathway {
    A,
    B,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Stage {
    Match,
    Formulate,
    Feasibility,
    Refinement,
}

/// One model exchange (plus its self-check, if any) and what came of it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub stage: Stage,
    /// 1-based within the stage.
    pub index: usize,
    pub prompt_kind: PromptKind,
    pub response: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parse_error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solution: Option<CandidateSolution>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<VerificationReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub self_check_response: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub self_verdict: Option<SelfVerdict>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cost: Option<f64>,
    pub accepted: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub best_so_far: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl IterationRecord {
    fn new(stage: Stage, index: usize, prompt_kind: PromptKind, response: String) -> Self {
        Self {
            stage,
            index,
            prompt_kind,
            response,
            parse_error: None,
            solution: None,
            report: None,
            self_check_response: None,
            self_verdict: None,
            cost: None,
            accepted: false,
            best_so_far: None,
            notes: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineTrace {
    pub pathway: Pathway,
    pub match_outcome: Option<MatchOutcome>,
    pub spf_used: Option<StructuredProblemFormulation>,
    pub iterations: Vec<IterationRecord>,
    pub first_feasible_cost: Option<f64>,
    pub best_cost: Option<f64>,
    pub refinement_success: bool,
    /// Set when verification was switched off.
    pub ablation: bool,
    pub config: PipelineConfig,
    pub transcript: Transcript,
}

impl PipelineTrace {
    fn new(config: &PipelineConfig) -> Self {
        Self {
            pathway: Pathway::A,
            match_outcome: None,
            spf_used: None,
            iterations: Vec::new(),
            first_feasible_cost: None,
            best_cost: None,
            refinement_success: false,
            ablation: config.verification_mode == VerificationMode::Unverified,
            config: config.clone(),
            transcript: Transcript::default(),
        }
    }

    pub fn stage(&self, stage: Stage) -> impl Iterator<Item = &IterationRecord> {
        self.iterations.iter().filter(move |r| r.stage == stage)
    }

    /// Verifier reports from the feasibility stage, in order.
    pub fn feasibility_reports(&self) -> Vec<&VerificationReport> {
        self.stage(Stage::Feasibility).filter_map(|r| r.report.as_ref()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PipelineStatus {
    Solved,
    InfeasibleAfterBudget,
    FormulationFailed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineResult {
    pub status: PipelineStatus,
    pub solution: Option<CandidateSolution>,
    pub cost: Option<f64>,
    pub trace: PipelineTrace,
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid pipeline configuration: {0}")]
    Config(String),
    #[error("instance is invalid: {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    InvalidInstance(Vec<Defect>),
    #[error("backend failed: {source}")]
    Backend {
        source: GatewayError,
        /// Everything recorded up to the failure.
        trace: Box<PipelineTrace>,
    },
}

impl PipelineError {
    pub fn trace(&self) -> Option<&PipelineTrace> {
        match self {
            PipelineError::Backend { trace, .. } => Some(trace),
            _ => None,
        }
    }
}

/// A checked candidate.
struct Checked {
    solution: CandidateSolution,
    cost: f64,
}

/// Per-run state: the session plus the trace under construction.
pub struct Run<'a> {
    session: Session<'a>,
    config: &'a PipelineConfig,
    trace: PipelineTrace,
}

impl<'a> Run<'a> {
    pub fn new(backend: &'a dyn ChatBackend, config: &'a PipelineConfig) -> Self {
        Self { session: Session::new(backend, config.backend.temperature), config, trace: PipelineTrace::new(config) }
    }

    pub fn trace(&self) -> &PipelineTrace {
        &self.trace
    }

    pub fn into_trace(mut self) -> PipelineTrace {
        self.trace.transcript = self.session.into_transcript();
        self.trace
    }

    fn ask(&mut self, prompt: &str, kind: PromptKind) -> Result<String, GatewayError> {
        self.session.complete(prompt, kind)
    }

    /// Classifies the request against the library, re-asking once; a second
    /// unusable answer counts as no match.
    pub fn match_case(&mut self, request: &str, library: &CaseLibrary) -> Result<MatchOutcome, GatewayError> {
        let prompt = render_match_prompt(request, library);
        let mut current = prompt.clone();
        for index in 1..=2 {
            let response = self.ask(&current, PromptKind::Match)?;
            let mut record = IterationRecord::new(Stage::Match, index, PromptKind::Match, response.clone());
            match parse_match_response(&response, library) {
                Ok(outcome) => {
                    record.accepted = true;
                    self.trace.iterations.push(record);
                    self.trace.match_outcome = Some(outcome.clone());
                    return Ok(outcome);
                }
                Err(e) => {
                    record.parse_error = Some(e.to_string());
                    self.trace.iterations.push(record);
                    current = render_reask(&prompt, &e.to_string());
                }
            }
        }
        self.trace.match_outcome = Some(MatchOutcome::NoMatch);
        Ok(MatchOutcome::NoMatch)
    }

    /// Single-shot formulation with one re-ask; `None` when both attempts
    /// fail to parse.
    pub fn self_formulate(
        &mut self,
        request: &str,
        instance: &ProblemInstance,
        library: &CaseLibrary,
    ) -> Result<Option<StructuredProblemFormulation>, GatewayError> {
        let prompt = render_spf_generation_prompt(request, library.formulation_example());
        let mut current = prompt.clone();
        for index in 1..=2 {
            let response = self.ask(&current, PromptKind::Formulate)?;
            let mut record = IterationRecord::new(Stage::Formulate, index, PromptKind::Formulate, response.clone());
            match parse_generated_spf(&response, instance) {
                Ok(spf) => {
                    record.accepted = true;
                    self.trace.iterations.push(record);
                    return Ok(Some(spf));
                }
                Err(e) => {
                    record.parse_error = Some(e.to_string());
                    self.trace.iterations.push(record);
                    current = render_reask(&prompt, &e.to_string());
                }
            }
        }
        Ok(None)
    }

    /// Parses and checks one answer, filling `record`. Returns the problems
    /// to feed back when the answer is rejected.
    fn check(
        &mut self,
        record: &mut IterationRecord,
        spf: &StructuredProblemFormulation,
        pathway: Pathway,
    ) -> Result<Result<Checked, (String, Vec<String>)>, GatewayError> {
        let parsed = match parse_solution_response(&record.response, spf) {
            Ok(p) => p,
            Err(e) => {
                record.parse_error = Some(e.to_string());
                return Ok(Err((record.response.clone(), vec![e.to_string()])));
            }
        };
        let solution = parsed.solution;
        let cost = compute_cost(&solution, &spf.distance_matrix);
        record.solution = Some(solution.clone());
        record.cost = Some(cost);
        if let Some(warning) = parsed.reported_cost.and_then(|r| reported_cost_warning(r, cost)) {
            record.notes.push(warning);
        }
        let previous = solution.to_route_lines(None);

        let mode = self.config.verification_mode;
        let external = match (mode, pathway) {
            (VerificationMode::External, _) => {
                Some(verify_with_policy(&solution, spf, &spf.instance, self.config.depot_policy))
            }
            _ => None,
        };
        let self_check = match (mode, pathway) {
            (VerificationMode::SelfCheck, _) | (VerificationMode::External, Pathway::B) => {
                let response = self.ask(&render_self_verification_prompt(spf, &solution), PromptKind::SelfVerify)?;
                let verdict = parse_self_verification_response(&response);
                record.self_check_response = Some(response);
                record.self_verdict = Some(verdict.clone());
                Some(verdict)
            }
            _ => None,
        };

        let mut problems = Vec::new();
        if let Some(report) = &external {
            if !report.feasible {
                problems.extend(report.messages());
            }
        }
        if let Some(SelfVerdict::Violation { description }) = &self_check {
            problems.push(description.clone());
        }
        if matches!(self_check, Some(SelfVerdict::Feasible)) && !problems.is_empty() {
            record.notes.push("external check overrides the self-reported FEASIBLE verdict".into());
        }
        record.report = external;
        if problems.is_empty() {
            record.accepted = true;
            Ok(Ok(Checked { solution, cost }))
        } else {
            Ok(Err((previous, problems)))
        }
    }

    /// Generate/check/fix until an answer is accepted or the budget runs
    /// out. The fix prompt shows only the latest failed attempt.
    pub fn feasibility_loop(
        &mut self,
        spf: &StructuredProblemFormulation,
        pathway: Pathway,
    ) -> Result<Option<(CandidateSolution, f64)>, GatewayError> {
        let mut prompt = render_solve_prompt(spf);
        let mut kind = PromptKind::Solve;
        for index in 1..=self.config.max_feasibility_iters {
            let response = self.ask(&prompt, kind)?;
            let mut record = IterationRecord::new(Stage::Feasibility, index, kind, response);
            let outcome = self.check(&mut record, spf, pathway)?;
            let report = record.report.clone();
            let solution = record.solution.clone();
            self.trace.iterations.push(record);
            match outcome {
                Ok(c) => {
                    self.trace.first_feasible_cost = Some(c.cost);
                    self.trace.best_cost = Some(c.cost);
                    if let Some(last) = self.trace.iterations.last_mut() {
                        last.best_so_far = Some(c.cost);
                    }
                    return Ok(Some((c.solution, c.cost)));
                }
                Err((previous, problems)) => {
                    prompt = match (report, solution) {
                        (Some(report), Some(sol)) if problems == report.messages() => {
                            render_fix_prompt(spf, &sol, &report).unwrap_or_else(|_| {
                                render_feedback_prompt(spf, &previous, &problems)
                            })
                        }
                        _ => render_feedback_prompt(spf, &previous, &problems),
                    };
                    kind = PromptKind::Fix;
                }
            }
        }
        Ok(None)
    }

    /// Asks for cheaper solutions, keeping the best accepted one. Rejected
    /// candidates still use up their round; ties keep the earlier solution.
    pub fn refinement_loop(
        &mut self,
        spf: &StructuredProblemFormulation,
        pathway: Pathway,
        seed: (CandidateSolution, f64),
    ) -> Result<(CandidateSolution, f64), GatewayError> {
        let mut history = vec![seed.clone()];
        let mut best = seed;
        for index in 1..=self.config.max_refine_rounds {
            let prompt = render_refine_prompt(spf, &history);
            let response = self.ask(&prompt, PromptKind::Refine)?;
            let mut record = IterationRecord::new(Stage::Refinement, index, PromptKind::Refine, response);
            if let Ok(c) = self.check(&mut record, spf, pathway)? {
                if compare_solutions((&c.solution, c.cost), (&best.0, best.1)) == Comparison::ABetter {
                    best = (c.solution.clone(), c.cost);
                }
                history.push((c.solution, c.cost));
            }
            record.best_so_far = Some(best.1);
            self.trace.iterations.push(record);
        }
        self.trace.best_cost = Some(best.1);
        self.trace.refinement_success = self
            .trace
            .first_feasible_cost
            .is_some_and(|first| compare_costs(best.1, first) == Comparison::ABetter);
        Ok(best)
    }

    /// Runs feasibility and (if enabled) refinement on a bound formulation.
    fn solve_with(
        &mut self,
        spf: StructuredProblemFormulation,
        pathway: Pathway,
    ) -> Result<(PipelineStatus, Option<(CandidateSolution, f64)>), GatewayError> {
        self.trace.pathway = pathway;
        self.trace.spf_used = Some(spf.clone());
        let Some(seed) = self.feasibility_loop(&spf, pathway)? else {
            return Ok((PipelineStatus::InfeasibleAfterBudget, None));
        };
        let refine = self.config.refine_enabled && self.config.verification_mode != VerificationMode::Unverified;
        let best = if refine { self.refinement_loop(&spf, pathway, seed)? } else { seed };
        Ok((PipelineStatus::Solved, Some(best)))
    }

    fn run(
        &mut self,
        request: &str,
        instance: &ProblemInstance,
        library: &CaseLibrary,
    ) -> Result<(PipelineStatus, Option<(CandidateSolution, f64)>), GatewayError> {
        let case_id = match self.config.pathway_override {
            Some(PathwayOverride::ForceB) => None,
            Some(PathwayOverride::ForceA) => match library.case_for_type(instance.problem_type) {
                Some(e) => Some(e.case_id.clone()),
                None => {
                    self.note(format!("no library case serves a {} instance; using pathway B", instance.problem_type));
                    None
                }
            },
            None => match self.match_case(request, library)? {
                MatchOutcome::Matched { case_id } => Some(case_id),
                MatchOutcome::NoMatch => None,
            },
        };
        if let Some(case_id) = case_id {
            match instantiate_spf(library, &case_id, instance) {
                Ok(spf) => return self.solve_with(spf, Pathway::A),
                Err(e @ SpfError::TypeMismatch { .. }) => self.note(format!("{e}; using pathway B")),
                Err(e) => self.note(format!("cannot instantiate case `{case_id}`: {e}; using pathway B")),
            }
        }
        self.trace.pathway = Pathway::B;
        match self.self_formulate(request, instance, library)? {
            Some(spf) => self.solve_with(spf, Pathway::B),
            None => Ok((PipelineStatus::FormulationFailed, None)),
        }
    }

    fn note(&mut self, note: String) {
        log::info!("{note}");
        if let Some(last) = self.trace.iterations.last_mut() {
            last.notes.push(note);
        }
    }
}

/// Solves one request end to end.
pub fn solve_request(
    request: &str,
    instance: &ProblemInstance,
    library: &CaseLibrary,
    config: &PipelineConfig,
    backend: &dyn ChatBackend,
) -> Result<PipelineResult, PipelineError> {
    config.validate()?;
    let validation = validate_instance(instance);
    if !validation.is_ok() {
        return Err(PipelineError::InvalidInstance(validation.defects.into_iter().filter(Defect::is_fatal).collect()));
    }
    for warning in validation.warnings() {
        log::warn!("{warning}");
    }

    let mut run = Run::new(backend, config);
    let outcome = run.run(request, instance, library);
    let trace = run.into_trace();
    assert!(
        trace.transcript.len() <= config.call_budget(),
        "pipeline made {} calls, over its budget of {}",
        trace.transcript.len(),
        config.call_budget()
    );
    match outcome {
        Ok((status, best)) => {
            let (solution, cost) = best.map_or((None, None), |(s, c)| (Some(s), Some(c)));
            Ok(PipelineResult { status, solution, cost, trace })
        }
        Err(source) => Err(PipelineError::Backend { source, trace: Box::new(trace) }),
    }
}
