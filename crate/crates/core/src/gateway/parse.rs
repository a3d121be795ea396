//! Turning free-form model text into typed results.

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::instance::{build_distance_matrix, ProblemInstance};
use crate::spf::{
    CaseLibrary, ConstraintRule, ConstraintSpec, Objective, OutputFormatSpec, StructuredProblemFormulation, GENERATED,
    NO_MATCH,
};
use crate::verifier::CandidateSolution;

pub const UNPARSEABLE_VERDICT: &str = "unparseable verdict";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MatchOutcome {
    Matched { case_id: String },
    NoMatch,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("no case id or {NO_MATCH} found in the answer")]
pub struct UnparseableMatch;

/// Scans word tokens left to right; the first one naming a case id (or
/// `NO_MATCH`) wins. Case-insensitive.
pub fn parse_match_response(text: &str, library: &CaseLibrary) -> Result<MatchOutcome, UnparseableMatch> {
    for token in text.split(|c: char| !(c.is_ascii_alphanumeric() || c == '_')) {
        if token.is_empty() {
            continue;
        }
        if token.eq_ignore_ascii_case(NO_MATCH) {
            return Ok(MatchOutcome::NoMatch);
        }
        if let Some(e) = library.entries().iter().find(|e| e.case_id.eq_ignore_ascii_case(token)) {
            return Ok(MatchOutcome::Matched { case_id: e.case_id.clone() });
        }
    }
    Err(UnparseableMatch)
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[serde(tag = "error", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SolutionParseError {
    #[error("no route line for Day {day} was found; every day needs a line `Day {day}: <depot> -> ... -> <depot>`")]
    MissingDayLine { day: usize },
    #[error("route line `{line}` is malformed; expected city indices separated by ` -> `, at least two stops")]
    MalformedRouteLine { line: String },
    #[error("route line `{line}` uses city {index}, which does not exist (cities are 0 to {max})")]
    IndexOutOfRange { index: usize, max: usize, line: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParsedSolution {
    pub solution: CandidateSolution,
    /// The model's own `Total cost` figure, never trusted.
    pub reported_cost: Option<f64>,
}

fn day_line_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)\bday\s*(\d+)\s*:\s*(.*)$").unwrap())
}

fn total_cost_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)total\s+cost\s*[:=]\s*([-+]?\d+(?:\.\d+)?(?:[eE][-+]?\d+)?)").unwrap())
}

fn strip_markup(line: &str) -> String {
    line.replace(['*', '`'], "").replace('→', "->")
}

fn parse_route_body(line: &str, body: &str, n: usize) -> Result<Vec<usize>, SolutionParseError> {
    let malformed = || SolutionParseError::MalformedRouteLine { line: line.trim().to_string() };
    let body = body.trim().trim_end_matches('.').trim();
    let mut route = Vec::new();
    for tok in body.split("->") {
        let tok = tok.trim();
        if tok.is_empty() || !tok.bytes().all(|b| b.is_ascii_digit()) {
            return Err(malformed());
        }
        let index: usize = tok.parse().map_err(|_| malformed())?;
        if index >= n {
            return Err(SolutionParseError::IndexOutOfRange {
                index,
                max: n.saturating_sub(1),
                line: line.trim().to_string(),
            });
        }
        route.push(index);
    }
    if route.len() < 2 {
        return Err(malformed());
    }
    Ok(route)
}

/// Extracts exactly `days` route lines from the first complete `Day 1..Day k`
/// block; prose around the block and later blocks are ignored. Missing
/// cities are never filled in.
pub fn parse_solution_response(
    text: &str,
    spf: &StructuredProblemFormulation,
) -> Result<ParsedSolution, SolutionParseError> {
    let days = spf.output_format.days.max(1);
    let n = spf.instance.cities.len();
    let mut block: Vec<(String, String)> = Vec::new();
    for raw in text.lines() {
        let line = strip_markup(raw);
        let Some(caps) = day_line_re().captures(&line) else { continue };
        let Ok(k) = caps[1].parse::<usize>() else { continue };
        let body = caps[2].to_string();
        if k == block.len() + 1 {
            block.push((line.trim().to_string(), body));
        } else if k == 1 {
            block = vec![(line.trim().to_string(), body)];
        }
        if block.len() == days {
            break;
        }
    }
    if block.len() < days {
        return Err(SolutionParseError::MissingDayLine { day: block.len() + 1 });
    }
    let routes = block.iter().map(|(line, body)| parse_route_body(line, body, n)).collect::<Result<Vec<_>, _>>()?;
    let reported_cost = total_cost_re().captures(text).and_then(|c| c[1].parse::<f64>().ok());
    Ok(ParsedSolution { solution: CandidateSolution::from_model(routes), reported_cost })
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SpfParseError {
    #[error("the formulation has no numbered constraint list under a `Constraints:` heading")]
    NoConstraintsFound,
    #[error("the formulation has no `Output format:` section")]
    NoOutputFormat,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SelfVerdict {
    Feasible,
    Violation { description: String },
}

fn header_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)^\s*#*\s*(problem|constraints|objective|grammar|output format|distance matrix|total cost)\s*:").unwrap())
}

fn item_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\s*(?:\d+\s*[.)]|[-*•])\s+(.+?)\s*$").unwrap())
}

/// Words that signal a constraint carries more than the known rule shapes;
/// such sentences stay free text.
const QUALIFIERS: &[&str] = &[
    "exceed", "at most", "at least", "no more", "maximum", "max ", "minimum", "less than", "more than", "within",
    "before", "after", "except", "unless", "only if", "stops", "hours", "minutes", "km", "miles", "if ",
];

fn day_depot_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"^(?:on\s+)?day\s+(\d+)\b.*\bstart\w*\s+and\s+end\w*\s+at\s+(?:the\s+)?(?:depot\s+)?(?:city\s+)?#?(\d+)\W*$")
            .unwrap()
    })
}

fn shared_depot_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"^(?:the|each|every|all)\b.*\b(?:route|tour)s?\b.*\bstart\w*\s+and\s+end\w*\s+at\s+(?:the\s+)?(?:same\s+)?(?:depot\s+)?(?:city\s+)?#?(\d+)\W*$")
            .unwrap()
    })
}

fn visit_all_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"\b(?:every|each|all)\s+(?:of\s+the\s+)?(?:other\s+|remaining\s+|non-depot\s+)?cit(?:y|ies)\b.*\bvisit\w*\b.*\b(?:exactly|only)\s+once\b")
            .unwrap()
    })
}

fn route_count_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"^(?:there\s+(?:must|should)\s+be\s+)?exactly\s+(\d+)\s+(?:route|tour)s?(?:\(s\))?\b").unwrap()
    })
}

/// Per-day depot sentence, as `(day_number_1_based, depot)`.
fn classify_day_depot(sentence: &str) -> Option<(usize, usize)> {
    let s = sentence.trim().to_lowercase();
    if QUALIFIERS.iter().any(|q| s.contains(q)) {
        return None;
    }
    let caps = day_depot_re().captures(&s)?;
    Some((caps[1].parse().ok()?, caps[2].parse().ok()?))
}

/// Maps a constraint sentence to a machine-checkable rule via a fixed rule
/// table, or `None` when no rule applies. Per-day depot sentences are
/// handled by [`parse_generated_spf`], which needs them all at once.
pub fn classify_constraint(sentence: &str) -> Option<ConstraintRule> {
    let s = sentence.trim().to_lowercase();
    if QUALIFIERS.iter().any(|q| s.contains(q)) {
        return None;
    }
    if let Some(c) = route_count_re().captures(&s) {
        return Some(ConstraintRule::RouteCountEqualsDays { days: c[1].parse().ok()? });
    }
    if let Some(c) = shared_depot_re().captures(&s) {
        return Some(ConstraintRule::RouteStartsEndsAtDepot { depot: c[1].parse().ok()? });
    }
    if visit_all_re().is_match(&s) {
        return Some(ConstraintRule::VisitAllExactlyOnce);
    }
    None
}

/// Parses a model-written formulation in the canonical layout and binds it
/// to `instance`. Unclassified sentences become free-text constraints.
pub fn parse_generated_spf(
    text: &str,
    instance: &ProblemInstance,
) -> Result<StructuredProblemFormulation, SpfParseError> {
    let lines: Vec<String> = text.lines().map(strip_markup).collect();

    let description = lines
        .iter()
        .find_map(|l| {
            let t = l.trim_start_matches(['#', ' ']);
            t.get(..8).filter(|p| p.eq_ignore_ascii_case("problem:")).map(|_| t[8..].trim().to_string())
        })
        .filter(|d| !d.is_empty())
        .unwrap_or_else(|| instance.request_text.trim().to_string());

    let mut sentences = Vec::new();
    if let Some(start) = lines.iter().position(|l| {
        header_re().captures(l).is_some_and(|c| c[1].eq_ignore_ascii_case("constraints"))
    }) {
        for l in &lines[start + 1..] {
            if l.trim().is_empty() {
                continue;
            }
            if header_re().is_match(l) {
                break;
            }
            match item_re().captures(l) {
                Some(c) => sentences.push(c[1].to_string()),
                None => break,
            }
        }
    }
    if sentences.is_empty() {
        return Err(SpfParseError::NoConstraintsFound);
    }
    if !lines.iter().any(|l| l.to_lowercase().contains("output format")) {
        return Err(SpfParseError::NoOutputFormat);
    }

    let days = instance.days.max(1);
    let day_depots: Vec<Option<(usize, usize)>> = sentences.iter().map(|s| classify_day_depot(s)).collect();
    let mut assigned: Vec<Option<usize>> = vec![None; days];
    let mut consistent = true;
    for &(day, depot) in day_depots.iter().flatten() {
        match assigned.get_mut(day.wrapping_sub(1)) {
            Some(slot @ None) => *slot = Some(depot),
            _ => consistent = false,
        }
    }
    let per_day: Option<Vec<usize>> = if consistent { assigned.into_iter().collect() } else { None };

    let mut constraints = Vec::new();
    let mut per_day_lines = Vec::new();
    let mut per_day_slot = None;
    for (sentence, day_depot) in sentences.iter().zip(&day_depots) {
        if day_depot.is_some() && per_day.is_some() {
            per_day_slot.get_or_insert(constraints.len());
            per_day_lines.push(sentence.clone());
            continue;
        }
        match classify_constraint(sentence) {
            Some(rule) => constraints.push(ConstraintSpec::new(rule, sentence.clone())),
            None => constraints.push(ConstraintSpec::free_text(sentence.clone())),
        }
    }
    if let (Some(depots), Some(slot)) = (per_day, per_day_slot) {
        constraints.insert(
            slot,
            ConstraintSpec::new(ConstraintRule::DepotAssignedPerDay { depots }, per_day_lines.join("\n")),
        );
    }

    Ok(StructuredProblemFormulation {
        case_id: GENERATED.to_string(),
        description,
        constraints,
        objective: Objective::MinimizeTotalCost,
        output_format: OutputFormatSpec::route_lines(days),
        instance: instance.clone(),
        distance_matrix: build_distance_matrix(instance).unwrap_or_else(|_| {
            crate::instance::DistanceMatrix::from_points(&[]).expect("empty matrix")
        }),
    })
}

fn verdict_line(line: &str) -> String {
    line.replace(['*', '`', '#'], "").trim().to_string()
}

/// `VIOLATION: ...` anywhere wins; a standalone `FEASIBLE` answer is
/// accepted; anything else is treated as a violation.
pub fn parse_self_verification_response(text: &str) -> SelfVerdict {
    for line in text.lines().map(verdict_line) {
        let upper = line.to_ascii_uppercase();
        if let Some(pos) = upper.find("VIOLATION:") {
            let description = line[pos + "VIOLATION:".len()..].trim();
            let description = if description.is_empty() { UNPARSEABLE_VERDICT } else { description };
            return SelfVerdict::Violation { description: description.to_string() };
        }
    }
    let feasible = text.lines().map(verdict_line).any(|line| {
        let upper = line.to_ascii_uppercase();
        let head = upper.trim_end_matches(['.', '!']);
        head == "FEASIBLE" || head.starts_with("FEASIBLE ") || head.starts_with("FEASIBLE:") || head.starts_with("FEASIBLE,")
    });
    if feasible {
        SelfVerdict::Feasible
    } else {
        SelfVerdict::Violation { description: UNPARSEABLE_VERDICT.to_string() }
    }
}
