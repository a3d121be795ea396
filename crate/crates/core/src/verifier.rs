//! Ground-truth feasibility checks and cost recomputation.
//!
//! Nothing a model says about its own solution is trusted here: cost comes
//! from the distance matrix and feasibility from the machine-checkable
//! constraints of the bound formulation.

use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};

use crate::instance::{DistanceMatrix, ProblemInstance};
use crate::spf::{ConstraintRule, StructuredProblemFormulation};

/// Relative tolerance under which two costs count as equal.
pub const COST_TIE_TOLERANCE: f64 = 1e-6;

/// Model-reported costs further than this (relative) from the recomputed
/// cost are logged, never treated as violations.
pub const REPORTED_COST_WARN_RATIO: f64 = 0.005;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SolutionSource {
    Model,
    Oracle,
    Heuristic,
}

/// Ordered routes, one per day, each including its start and end depot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateSolution {
    pub routes: Vec<Vec<usize>>,
    pub source: SolutionSource,
}

impl CandidateSolution {
    pub fn new(routes: Vec<Vec<usize>>, source: SolutionSource) -> Self {
        Self { routes, source }
    }

    pub fn from_model(routes: Vec<Vec<usize>>) -> Self {
        Self::new(routes, SolutionSource::Model)
    }

    /// Renders the routes in the `route-lines-v1` grammar, with an optional
    /// trailing cost line (two decimals).
    pub fn to_route_lines(&self, cost: Option<f64>) -> String {
        let mut out = String::new();
        for (day, route) in self.routes.iter().enumerate() {
            let stops: Vec<String> = route.iter().map(usize::to_string).collect();
            let _ = writeln!(out, "Day {}: {}", day + 1, stops.join(" -> "));
        }
        if let Some(cost) = cost {
            let _ = writeln!(out, "Total cost: {cost:.2}");
        }
        out
    }

    pub fn max_index(&self) -> Option<usize> {
        self.routes.iter().flatten().copied().max()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ViolationKind {
    CityNotVisited,
    CityVisitedMultiple,
    WrongStartDepot,
    WrongEndDepot,
    WrongRouteCount,
    DepotInForeignRoute,
    /// A route references a city index the instance does not have.
    UnknownCity,
}

/// One failed check.
///
/// `subject` is a city index for city-centred kinds, a 0-based day index for
/// `WRONG_START_DEPOT`/`WRONG_END_DEPOT`, and the number of routes found for
/// `WRONG_ROUTE_COUNT`. Messages name days by their 1-based `Day k` label,
/// matching the route grammar.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub subject: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub day: Option<usize>,
    pub message: String,
}

impl Violation {
    pub fn city_not_visited(city: usize) -> Self {
        Self {
            kind: ViolationKind::CityNotVisited,
            subject: city,
            day: None,
            message: format!("City {city} is never visited; every non-depot city must be visited exactly once."),
        }
    }

    pub fn city_visited_multiple(city: usize, times: usize) -> Self {
        Self {
            kind: ViolationKind::CityVisitedMultiple,
            subject: city,
            day: None,
            message: format!("City {city} is visited {times} times; every non-depot city must be visited exactly once."),
        }
    }

    pub fn wrong_start(day: usize, found: Option<usize>, depot: usize) -> Self {
        let found = found.map_or_else(|| "nothing".to_string(), |c| format!("city {c}"));
        Self {
            kind: ViolationKind::WrongStartDepot,
            subject: day,
            day: Some(day),
            message: format!("Day {} route starts at {found} but must start at depot city {depot}.", day + 1),
        }
    }

    pub fn wrong_end(day: usize, found: Option<usize>, depot: usize) -> Self {
        let found = found.map_or_else(|| "nothing".to_string(), |c| format!("city {c}"));
        Self {
            kind: ViolationKind::WrongEndDepot,
            subject: day,
            day: Some(day),
            message: format!("Day {} route ends at {found} but must end at depot city {depot}.", day + 1),
        }
    }

    pub fn wrong_route_count(found: usize, expected: usize) -> Self {
        Self {
            kind: ViolationKind::WrongRouteCount,
            subject: found,
            day: None,
            message: format!("Found {found} routes but exactly {expected} are required, one per travel day."),
        }
    }

    pub fn depot_in_route(day: usize, depot: usize, own: bool) -> Self {
        let message = if own {
            format!(
                "Depot city {depot} appears in the middle of the Day {} route; a depot may only be the first and last stop of its own route.",
                day + 1
            )
        } else {
            format!(
                "Depot city {depot} appears in the Day {} route, which belongs to a different depot; a depot may only be the first and last stop of its own route.",
                day + 1
            )
        };
        Self { kind: ViolationKind::DepotInForeignRoute, subject: depot, day: Some(day), message }
    }

    pub fn unknown_city(day: usize, city: usize, cities: usize) -> Self {
        Self {
            kind: ViolationKind::UnknownCity,
            subject: city,
            day: Some(day),
            message: format!(
                "Day {} route contains city {city}, but cities are numbered 0 to {}.",
                day + 1,
                cities.saturating_sub(1)
            ),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub feasible: bool,
    pub violations: Vec<Violation>,
    pub recomputed_cost: Option<f64>,
    /// Sentences of constraints that have no machine check (free text).
    pub unchecked_constraints: Vec<String>,
}

impl VerificationReport {
    pub fn has_kind(&self, kind: ViolationKind) -> bool {
        self.violations.iter().any(|v| v.kind == kind)
    }

    pub fn messages(&self) -> Vec<String> {
        self.violations.iter().map(|v| v.message.clone()).collect()
    }
}

/// How a multi-depot route may treat another day's depot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum DepotPolicy {
    /// A depot appears only as both endpoints of its own day's route.
    #[default]
    Strict,
    /// Foreign depots may be passed through as ordinary stops. A route's own
    /// depot is still forbidden in its interior.
    Permissive,
}

/// Sum of consecutive-pair distances over every route.
pub fn compute_cost(solution: &CandidateSolution, matrix: &DistanceMatrix) -> f64 {
    solution.routes.iter().map(|r| matrix.path_cost(r)).sum()
}

pub fn verify(
    solution: &CandidateSolution,
    spf: &StructuredProblemFormulation,
    instance: &ProblemInstance,
) -> VerificationReport {
    verify_with_policy(solution, spf, instance, DepotPolicy::Strict)
}

/// Runs the checks in fixed order: route count, route endpoints, coverage,
/// depot placement.
pub fn verify_with_policy(
    solution: &CandidateSolution,
    spf: &StructuredProblemFormulation,
    instance: &ProblemInstance,
    policy: DepotPolicy,
) -> VerificationReport {
    let n = instance.cities.len();
    let mut violations = Vec::new();
    let mut unchecked = Vec::new();

    let mut expected_routes = None;
    let mut shared_depot = None;
    let mut per_day: Option<&[usize]> = None;
    let mut coverage = false;
    for c in &spf.constraints {
        match &c.rule {
            ConstraintRule::RouteCountEqualsDays { days } => expected_routes = Some(*days),
            ConstraintRule::RouteStartsEndsAtDepot { depot } => shared_depot = Some(*depot),
            ConstraintRule::DepotAssignedPerDay { depots } => per_day = Some(depots),
            ConstraintRule::VisitAllExactlyOnce => coverage = true,
            ConstraintRule::FreeText { .. } => unchecked.push(c.text.clone()),
        }
    }
    let designated = |day: usize| per_day.and_then(|m| m.get(day).copied()).or(shared_depot);

    let mut depots: Vec<usize> = instance.depots.clone();
    depots.extend(shared_depot);
    depots.extend(per_day.into_iter().flatten().copied());
    depots.sort_unstable();
    depots.dedup();

    for (day, route) in solution.routes.iter().enumerate() {
        for &city in route {
            if city >= n {
                violations.push(Violation::unknown_city(day, city, n));
            }
        }
    }

    // (1) route count
    if let Some(expected) = expected_routes {
        if solution.routes.len() != expected {
            violations.push(Violation::wrong_route_count(solution.routes.len(), expected));
        }
    }

    // (2) endpoints
    for (day, route) in solution.routes.iter().enumerate() {
        let Some(depot) = designated(day) else { continue };
        if route.len() < 2 || route[0] != depot {
            violations.push(Violation::wrong_start(day, route.first().copied(), depot));
        }
        if route.len() < 2 || route[route.len() - 1] != depot {
            let end = if route.len() < 2 { None } else { route.last().copied() };
            violations.push(Violation::wrong_end(day, end, depot));
        }
    }

    // (3) coverage of non-depot cities
    if coverage {
        let mut visits = vec![0usize; n];
        for &city in solution.routes.iter().flatten() {
            if city < n {
                visits[city] += 1;
            }
        }
        for (city, &count) in visits.iter().enumerate() {
            if depots.binary_search(&city).is_ok() {
                continue;
            }
            match count {
                0 => violations.push(Violation::city_not_visited(city)),
                1 => {}
                k => violations.push(Violation::city_visited_multiple(city, k)),
            }
        }
    }

    // (4) depots only at the endpoints of their own route
    if !depots.is_empty() {
        for (day, route) in solution.routes.iter().enumerate() {
            let own = designated(day);
            if route.len() <= 2 {
                continue;
            }
            for &city in &route[1..route.len() - 1] {
                if depots.binary_search(&city).is_err() {
                    continue;
                }
                let is_own = own == Some(city);
                if is_own || policy == DepotPolicy::Strict {
                    violations.push(Violation::depot_in_route(day, city, is_own));
                }
            }
        }
    }

    let feasible = violations.is_empty();
    let recomputed_cost = feasible.then(|| compute_cost(solution, &spf.distance_matrix));
    VerificationReport { feasible, violations, recomputed_cost, unchecked_constraints: unchecked }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Comparison {
    ABetter,
    BBetter,
    Tie,
}

/// Lower cost wins; costs within `1e-6 * max(1, cost_a)` tie.
pub fn compare_costs(cost_a: f64, cost_b: f64) -> Comparison {
    if (cost_a - cost_b).abs() <= COST_TIE_TOLERANCE * cost_a.abs().max(1.0) {
        Comparison::Tie
    } else if cost_a < cost_b {
        Comparison::ABetter
    } else {
        Comparison::BBetter
    }
}

pub fn compare_solutions(a: (&CandidateSolution, f64), b: (&CandidateSolution, f64)) -> Comparison {
    compare_costs(a.1, b.1)
}

/// Returns a warning line when a model's self-reported cost is off by more
/// than half a percent.
pub fn reported_cost_warning(reported: f64, recomputed: f64) -> Option<String> {
    let scale = recomputed.abs().max(f64::EPSILON);
    if !reported.is_finite() || (reported - recomputed).abs() / scale > REPORTED_COST_WARN_RATIO {
        Some(format!(
            "model reported total cost {reported} but the recomputed cost is {recomputed:.4}"
        ))
    } else {
        None
    }
}
