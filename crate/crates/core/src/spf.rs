//! Structured problem formulations, the case library, and prompt rendering.
//!
//! A formulation restates a routing request as an enumerated constraint
//! list, an objective, the distance matrix and an output-format contract.
//! Library entries are templates; [`instantiate_spf`] fills them from a
//! concrete instance. Every prompt the pipeline sends is rendered here, and
//! all renderers are pure: the same inputs always give byte-identical text.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::instance::{
    build_distance_matrix, validate_instance, Defect, DistanceMatrix, InstanceError, ProblemInstance, ProblemType,
};
use crate::verifier::{CandidateSolution, VerificationReport};

/// Case id carried by formulations the model wrote itself.
pub const GENERATED: &str = "GENERATED";
/// Identifier of the canonical route output grammar.
pub const GRAMMAR_ID: &str = "route-lines-v1";
/// Template placeholders look like `{{name}}`.
pub const PLACEHOLDER_SIGIL: &str = "{{";
/// Answer token for "no library case fits".
pub const NO_MATCH: &str = "NO_MATCH";
pub const FEASIBLE_TOKEN: &str = "FEASIBLE";
pub const VIOLATION_TOKEN: &str = "VIOLATION:";
/// Number of previous solutions shown in a refinement prompt.
pub const REFINE_HISTORY_CAP: usize = 3;
/// Every refinement prompt asks for this.
pub const REFINE_REQUEST_PHRASE: &str = "strictly lower total cost than the current best";

const OBJECTIVE_SENTENCE: &str =
    "Minimize the total travel cost, the sum of Euclidean distances between consecutive cities on every route.";

#[derive(Debug, Error)]
pub enum SpfError {
    #[error("unknown case id `{0}`")]
    UnknownCase(String),
    #[error("case `{case_id}` expects a {expected} instance, got {found}")]
    TypeMismatch { case_id: String, expected: ProblemType, found: ProblemType },
    #[error("instance is invalid: {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    InvalidInstance(Vec<Defect>),
    #[error(transparent)]
    Instance(#[from] InstanceError),
    #[error("a fix prompt needs at least one violation")]
    EmptyReport,
}

#[derive(Debug, Error)]
pub enum LibraryError {
    #[error("failed to read library file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed library JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("library is empty")]
    Empty,
    #[error("duplicate case id `{0}`")]
    DuplicateCaseId(String),
    #[error("case `{0}` has no problem_type and its id is not a problem type tag")]
    UnknownProblemType(String),
    #[error("case `{case_id}` uses a free-text constraint; library cases must be machine-checkable")]
    FreeTextInLibrary { case_id: String },
    #[error("case `{case_id}` template `{text}` has an unknown placeholder")]
    UnknownPlaceholder { case_id: String, text: String },
    #[error("case `{case_id}` names unsupported output grammar `{grammar}`")]
    UnknownGrammar { case_id: String, grammar: String },
    #[error("case `{case_id}` cannot serve a {problem_type} problem")]
    IncompatibleTemplate { case_id: String, problem_type: ProblemType },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ConstraintKind {
    VisitAllExactlyOnce,
    RouteStartsEndsAtDepot,
    RouteCountEqualsDays,
    DepotAssignedPerDay,
    FreeText,
}

/// A constraint with its parameters filled in.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ConstraintRule {
    VisitAllExactlyOnce,
    RouteStartsEndsAtDepot { depot: usize },
    RouteCountEqualsDays { days: usize },
    /// `depots[d]` is the depot of day `d` (0-based).
    DepotAssignedPerDay { depots: Vec<usize> },
    FreeText { sentence: String },
}

impl ConstraintRule {
    pub fn kind(&self) -> ConstraintKind {
        match self {
            ConstraintRule::VisitAllExactlyOnce => ConstraintKind::VisitAllExactlyOnce,
            ConstraintRule::RouteStartsEndsAtDepot { .. } => ConstraintKind::RouteStartsEndsAtDepot,
            ConstraintRule::RouteCountEqualsDays { .. } => ConstraintKind::RouteCountEqualsDays,
            ConstraintRule::DepotAssignedPerDay { .. } => ConstraintKind::DepotAssignedPerDay,
            ConstraintRule::FreeText { .. } => ConstraintKind::FreeText,
        }
    }

    pub fn machine_checkable(&self) -> bool {
        !matches!(self, ConstraintRule::FreeText { .. })
    }
}

/// A filled constraint plus the sentence(s) shown to the model.
///
/// `text` holds one line per statement; per-day depot assignments render as
/// one line per day.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConstraintSpec {
    pub rule: ConstraintRule,
    pub machine_checkable: bool,
    pub text: String,
}

impl ConstraintSpec {
    pub fn new(rule: ConstraintRule, text: impl Into<String>) -> Self {
        Self { machine_checkable: rule.machine_checkable(), rule, text: text.into() }
    }

    pub fn free_text(sentence: impl Into<String>) -> Self {
        let sentence = sentence.into();
        Self::new(ConstraintRule::FreeText { sentence: sentence.clone() }, sentence)
    }

    pub fn kind(&self) -> ConstraintKind {
        self.rule.kind()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Objective {
    #[default]
    MinimizeTotalCost,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputFormatSpec {
    pub grammar_id: String,
    pub days: usize,
}

impl OutputFormatSpec {
    pub fn route_lines(days: usize) -> Self {
        Self { grammar_id: GRAMMAR_ID.to_string(), days }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructuredProblemFormulation {
    pub case_id: String,
    pub description: String,
    pub constraints: Vec<ConstraintSpec>,
    pub objective: Objective,
    pub output_format: OutputFormatSpec,
    pub instance: ProblemInstance,
    pub distance_matrix: DistanceMatrix,
}

impl StructuredProblemFormulation {
    pub fn is_generated(&self) -> bool {
        self.case_id == GENERATED
    }

    pub fn fully_machine_checkable(&self) -> bool {
        self.constraints.iter().all(|c| c.machine_checkable)
    }

    pub fn has_checkable_constraints(&self) -> bool {
        self.constraints.iter().any(|c| c.machine_checkable)
    }

    /// Constraint statements, one per line, in formulation order.
    pub fn constraint_lines(&self) -> Vec<&str> {
        self.constraints.iter().flat_map(|c| c.text.lines()).filter(|l| !l.trim().is_empty()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConstraintTemplate {
    pub kind: ConstraintKind,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LibraryEntry {
    pub case_id: String,
    /// Defaults to the problem type whose tag equals `case_id`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub problem_type: Option<ProblemType>,
    pub description: String,
    /// Plain-text request used when this entry is the worked example for
    /// self-formulation.
    #[serde(default)]
    pub example_request: String,
    pub constraint_templates: Vec<ConstraintTemplate>,
    pub objective: Objective,
    pub output_format: String,
}

impl LibraryEntry {
    pub fn resolved_type(&self) -> Option<ProblemType> {
        self.problem_type.or_else(|| ProblemType::from_tag(&self.case_id))
    }

    /// Canonical formulation text for this entry bound to a small
    /// illustrative parameter set (depot 0; two days for multi-day cases).
    pub fn example_formulation(&self) -> String {
        let (depots, days) = match self.resolved_type() {
            Some(ProblemType::MultiDaySingleDepot) => (vec![0], 2),
            Some(ProblemType::MultiDayDepotPerDay) => (vec![0, 1], 2),
            _ => (vec![0], 1),
        };
        let constraints: Vec<ConstraintSpec> =
            self.constraint_templates.iter().map(|t| fill_template(t, &depots, days)).collect();
        let mut out = String::new();
        write_formulation_text(&mut out, &self.description, &constraints, &OutputFormatSpec::route_lines(days));
        out
    }
}

/// The immutable catalog of pre-formulated cases.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CaseLibrary {
    entries: Vec<LibraryEntry>,
}

const BUILTIN_LIBRARY: &str = include_str!("../data/case_library.json");

impl CaseLibrary {
    pub fn new(entries: Vec<LibraryEntry>) -> Result<Self, LibraryError> {
        if entries.is_empty() {
            return Err(LibraryError::Empty);
        }
        for (i, e) in entries.iter().enumerate() {
            if entries[..i].iter().any(|o| o.case_id == e.case_id) {
                return Err(LibraryError::DuplicateCaseId(e.case_id.clone()));
            }
            let problem_type = e.resolved_type().ok_or_else(|| LibraryError::UnknownProblemType(e.case_id.clone()))?;
            if problem_type == ProblemType::Novel {
                return Err(LibraryError::IncompatibleTemplate { case_id: e.case_id.clone(), problem_type });
            }
            if e.output_format != GRAMMAR_ID {
                return Err(LibraryError::UnknownGrammar {
                    case_id: e.case_id.clone(),
                    grammar: e.output_format.clone(),
                });
            }
            for t in &e.constraint_templates {
                match t.kind {
                    ConstraintKind::FreeText => {
                        return Err(LibraryError::FreeTextInLibrary { case_id: e.case_id.clone() })
                    }
                    ConstraintKind::DepotAssignedPerDay if problem_type != ProblemType::MultiDayDepotPerDay => {
                        return Err(LibraryError::IncompatibleTemplate { case_id: e.case_id.clone(), problem_type })
                    }
                    ConstraintKind::RouteStartsEndsAtDepot if problem_type == ProblemType::MultiDayDepotPerDay => {
                        return Err(LibraryError::IncompatibleTemplate { case_id: e.case_id.clone(), problem_type })
                    }
                    _ => {}
                }
                let probe = fill_placeholders(&t.text, "0", "0", "1");
                if probe.contains(PLACEHOLDER_SIGIL) {
                    return Err(LibraryError::UnknownPlaceholder { case_id: e.case_id.clone(), text: t.text.clone() });
                }
            }
        }
        Ok(Self { entries })
    }

    /// The three shipped cases (problem types 1 to 3).
    pub fn builtin() -> Self {
        Self::from_json_str(BUILTIN_LIBRARY).expect("builtin case library is valid")
    }

    pub fn from_json_str(s: &str) -> Result<Self, LibraryError> {
        Self::new(serde_json::from_str(s)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, LibraryError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| LibraryError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json_str(&text)
    }

    pub fn entries(&self) -> &[LibraryEntry] {
        &self.entries
    }

    pub fn get(&self, case_id: &str) -> Option<&LibraryEntry> {
        self.entries.iter().find(|e| e.case_id == case_id)
    }

    pub fn case_for_type(&self, problem_type: ProblemType) -> Option<&LibraryEntry> {
        self.entries.iter().find(|e| e.resolved_type() == Some(problem_type))
    }

    /// Worked example for self-formulation: the single-tour case, else the first entry.
    pub fn formulation_example(&self) -> &LibraryEntry {
        self.case_for_type(ProblemType::TspSingle).unwrap_or(&self.entries[0])
    }
}

fn fill_placeholders(text: &str, depot: &str, day: &str, days: &str) -> String {
    text.replace("{{depot}}", depot).replace("{{day}}", day).replace("{{days}}", days)
}

fn fill_template(t: &ConstraintTemplate, depots: &[usize], days: usize) -> ConstraintSpec {
    let first_depot = depots.first().copied().unwrap_or(0);
    let days_s = days.to_string();
    match t.kind {
        ConstraintKind::VisitAllExactlyOnce => ConstraintSpec::new(
            ConstraintRule::VisitAllExactlyOnce,
            fill_placeholders(&t.text, &first_depot.to_string(), "1", &days_s),
        ),
        ConstraintKind::RouteStartsEndsAtDepot => ConstraintSpec::new(
            ConstraintRule::RouteStartsEndsAtDepot { depot: first_depot },
            fill_placeholders(&t.text, &first_depot.to_string(), "1", &days_s),
        ),
        ConstraintKind::RouteCountEqualsDays => ConstraintSpec::new(
            ConstraintRule::RouteCountEqualsDays { days },
            fill_placeholders(&t.text, &first_depot.to_string(), "1", &days_s),
        ),
        ConstraintKind::DepotAssignedPerDay => {
            let lines: Vec<String> = depots
                .iter()
                .enumerate()
                .map(|(d, depot)| fill_placeholders(&t.text, &depot.to_string(), &(d + 1).to_string(), &days_s))
                .collect();
            ConstraintSpec::new(ConstraintRule::DepotAssignedPerDay { depots: depots.to_vec() }, lines.join("\n"))
        }
        ConstraintKind::FreeText => ConstraintSpec::free_text(t.text.clone()),
    }
}

/// Binds a library case to an instance, filling every template parameter.
pub fn instantiate_spf(
    library: &CaseLibrary,
    case_id: &str,
    instance: &ProblemInstance,
) -> Result<StructuredProblemFormulation, SpfError> {
    let entry = library.get(case_id).ok_or_else(|| SpfError::UnknownCase(case_id.to_string()))?;
    let expected = entry.resolved_type().ok_or_else(|| SpfError::UnknownCase(case_id.to_string()))?;
    if expected != instance.problem_type {
        return Err(SpfError::TypeMismatch {
            case_id: case_id.to_string(),
            expected,
            found: instance.problem_type,
        });
    }
    let validation = validate_instance(instance);
    if !validation.is_ok() {
        return Err(SpfError::InvalidInstance(validation.defects.into_iter().filter(Defect::is_fatal).collect()));
    }
    let constraints =
        entry.constraint_templates.iter().map(|t| fill_template(t, &instance.depots, instance.days)).collect();
    Ok(StructuredProblemFormulation {
        case_id: entry.case_id.clone(),
        description: entry.description.clone(),
        constraints,
        objective: entry.objective,
        output_format: OutputFormatSpec::route_lines(instance.days),
        instance: instance.clone(),
        distance_matrix: build_distance_matrix(instance)?,
    })
}

fn write_constraints(out: &mut String, lines: &[&str]) {
    out.push_str("Constraints:\n");
    for (i, line) in lines.iter().enumerate() {
        let _ = writeln!(out, "{}. {}", i + 1, line.trim());
    }
}

fn write_output_format(out: &mut String, format: &OutputFormatSpec) {
    let _ = writeln!(out, "Grammar: {}", format.grammar_id);
    for day in 1..=format.days.max(1) {
        if day == 1 {
            out.push_str("Output format: ");
        }
        let _ = writeln!(out, "Day {day}: <depot> -> ... -> <depot>");
    }
    out.push_str("Total cost: <number>\n");
}

/// The canonical formulation text layout, shared by library examples and
/// model-written formulations.
fn write_formulation_text(out: &mut String, description: &str, constraints: &[ConstraintSpec], format: &OutputFormatSpec) {
    let _ = writeln!(out, "Problem: {}", description.trim());
    let lines: Vec<&str> = constraints.iter().flat_map(|c| c.text.lines()).filter(|l| !l.trim().is_empty()).collect();
    write_constraints(out, &lines);
    let _ = writeln!(out, "Objective: {OBJECTIVE_SENTENCE}");
    write_output_format(out, format);
}

fn write_matrix(out: &mut String, matrix: &DistanceMatrix) {
    out.push_str("Distance matrix (row i, column j is the distance from city i to city j):\n");
    for i in 0..matrix.len() {
        let row: Vec<String> = matrix.row(i).iter().map(|v| format!("{v:.2}")).collect();
        let _ = writeln!(out, "{i}: {}", row.join(" "));
    }
}

fn write_answer_instructions(out: &mut String, format: &OutputFormatSpec) {
    let _ = writeln!(
        out,
        "Answer with exactly {} route line(s) in the {} grammar, Day 1 to Day {}, listing city indices separated by \" -> \" and repeating the depot at both ends, followed by the Total cost line.",
        format.days,
        format.grammar_id,
        format.days
    );
}

/// The full formulation as the model sees it: description, constraints,
/// objective, distance matrix and output format, in that order.
fn write_spf_body(out: &mut String, spf: &StructuredProblemFormulation) {
    let _ = writeln!(out, "Problem: {}", spf.description.trim());
    let _ = writeln!(
        out,
        "Cities: {} (indexed 0 to {}). Travel days: {}.",
        spf.instance.cities.len(),
        spf.instance.cities.len().saturating_sub(1),
        spf.output_format.days
    );
    write_constraints(out, &spf.constraint_lines());
    let _ = writeln!(out, "Objective: {OBJECTIVE_SENTENCE}");
    write_matrix(out, &spf.distance_matrix);
    write_output_format(out, &spf.output_format);
}

pub fn render_solve_prompt(spf: &StructuredProblemFormulation) -> String {
    let mut out = String::from("Solve the following constrained route planning problem.\n\n");
    write_spf_body(&mut out, spf);
    out.push('\n');
    write_answer_instructions(&mut out, &spf.output_format);
    out
}

/// Asks the model to pick one case id, or `NO_MATCH`. The distance matrix is
/// not included: matching concerns constraint shape, not geometry.
pub fn render_match_prompt(request: &str, library: &CaseLibrary) -> String {
    let mut out = String::from("Classify the route planning request below into one of the known problem cases.\n\n");
    out.push_str("Known cases:\n");
    for e in library.entries() {
        let _ = writeln!(out, "- {}: {}", e.case_id, e.description.trim());
    }
    let _ = writeln!(out, "- {NO_MATCH}: none of the cases above describes the request.");
    out.push_str("\nRequest:\n<<<\n");
    out.push_str(request.trim());
    out.push_str("\n>>>\n\n");
    let _ = writeln!(out, "Answer with exactly one case identifier from the list above, or {NO_MATCH}.");
    out
}

fn write_feedback_prompt(
    out: &mut String,
    spf: &StructuredProblemFormulation,
    heading: &str,
    previous: &str,
    problems: &[String],
) {
    let _ = writeln!(out, "{heading}\n");
    out.push_str("Previous answer:\n");
    out.push_str(previous.trim_end());
    out.push_str("\n\nProblems found:\n");
    for p in problems {
        let _ = writeln!(out, "- {p}");
    }
    out.push_str("\nRevise the solution so that every constraint is satisfied.\n\n");
    write_spf_body(out, spf);
    out.push('\n');
    write_answer_instructions(out, &spf.output_format);
}

/// Feedback prompt after a verified-infeasible solution: the failed routes,
/// then one line per violation in report order.
pub fn render_fix_prompt(
    spf: &StructuredProblemFormulation,
    failed_solution: &CandidateSolution,
    report: &VerificationReport,
) -> Result<String, SpfError> {
    if report.violations.is_empty() {
        return Err(SpfError::EmptyReport);
    }
    Ok(render_feedback_prompt(spf, &failed_solution.to_route_lines(None), &report.messages()))
}

/// Feedback prompt for any failed attempt: `previous` is shown verbatim and
/// each problem gets its own line. Used for parse failures and self-check
/// verdicts as well as verifier reports.
pub fn render_feedback_prompt(spf: &StructuredProblemFormulation, previous: &str, problems: &[String]) -> String {
    let mut out = String::new();
    write_feedback_prompt(
        &mut out,
        spf,
        "Your previous solution does not satisfy the problem requirements.",
        previous,
        problems,
    );
    out
}

/// Shows up to [`REFINE_HISTORY_CAP`] feasible solutions, cheapest first,
/// and asks for a cheaper one.
pub fn render_refine_prompt(spf: &StructuredProblemFormulation, history: &[(CandidateSolution, f64)]) -> String {
    let mut ranked: Vec<&(CandidateSolution, f64)> = history.iter().collect();
    ranked.sort_by(|a, b| a.1.total_cmp(&b.1));
    ranked.truncate(REFINE_HISTORY_CAP);

    let mut out = String::from("You have already found feasible solutions to the problem below.\n\n");
    out.push_str("Previous feasible solutions, best first:\n");
    for (i, (sol, cost)) in ranked.iter().enumerate() {
        let _ = writeln!(out, "Solution {} (total cost {cost:.2}):", i + 1);
        out.push_str(&sol.to_route_lines(None));
    }
    if let Some((_, best)) = ranked.first() {
        let _ = writeln!(
            out,
            "\nPropose a new feasible solution with a {REFINE_REQUEST_PHRASE} ({best:.2}). Compare it with the previous solutions and keep every constraint satisfied.\n"
        );
    }
    write_spf_body(&mut out, spf);
    out.push('\n');
    write_answer_instructions(&mut out, &spf.output_format);
    out
}

/// Single-shot prompt: one worked example (request and formulation), then
/// the new request.
pub fn render_spf_generation_prompt(request: &str, example_entry: &LibraryEntry) -> String {
    let mut out = String::from(
        "Rewrite a route planning request as a structured problem formulation. Here is one example.\n\n",
    );
    out.push_str("Example request:\n<<<\n");
    out.push_str(example_entry.example_request.trim());
    out.push_str("\n>>>\nExample formulation:\n");
    out.push_str(&example_entry.example_formulation());
    out.push_str("\nNew request:\n<<<\n");
    out.push_str(request.trim());
    out.push_str("\n>>>\n\n");
    out.push_str(
        "Write the formulation for the new request in exactly the same layout: a Problem line, a numbered Constraints list with one constraint per line (refer to cities by index), the Objective line, and the Grammar, Output format and Total cost lines.\n",
    );
    out
}

pub fn render_self_verification_prompt(spf: &StructuredProblemFormulation, solution: &CandidateSolution) -> String {
    let mut out = String::from("Check whether the solution below satisfies every constraint of the problem.\n\n");
    let _ = writeln!(out, "Problem: {}", spf.description.trim());
    write_constraints(&mut out, &spf.constraint_lines());
    out.push_str("\nSolution:\n");
    out.push_str(&solution.to_route_lines(None));
    let _ = writeln!(
        out,
        "\nAnswer {FEASIBLE_TOKEN} if every constraint is satisfied. Otherwise answer {VIOLATION_TOKEN} <description of the violated constraint>."
    );
    out
}

/// Re-ask wrapper used once when an answer could not be interpreted.
pub fn render_reask(original_prompt: &str, problem: &str) -> String {
    format!(
        "{}\n\nYour previous answer could not be interpreted ({problem}). Answer again, following the required format exactly.\n",
        original_prompt.trim_end()
    )
}
