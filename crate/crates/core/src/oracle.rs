//! Reference solvers: exhaustive enumeration, Held-Karp and a
//! nearest-neighbour + 2-opt heuristic.

use std::cmp::Ordering;
use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::instance::{build_distance_matrix, validate_instance, Defect, DistanceMatrix, ProblemInstance, ProblemType};
use crate::verifier::{CandidateSolution, SolutionSource};

pub const BRUTE_FORCE_MAX_CITIES: usize = 11;
pub const BRUTE_FORCE_MAX_STOPS: usize = 9;
pub const BRUTE_FORCE_MAX_DAYS: usize = 3;
pub const HELD_KARP_MAX_CITIES: usize = 18;

/// Relative tolerance under which two candidate costs count as equal for
/// tie-breaking.
const TIE_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum BoundKind {
    Exact,
    Heuristic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostBound {
    pub kind: BoundKind,
    pub cost: f64,
    pub solution: CandidateSolution,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error("instance too large for {method}: {detail}")]
    InstanceTooLarge { method: &'static str, detail: String },
    #[error("{method} does not handle {problem_type} instances")]
    WrongType { method: &'static str, problem_type: ProblemType },
    #[error("reference cost is zero; a gap ratio is undefined")]
    ZeroBound,
    #[error("instance is invalid: {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    InvalidInstance(Vec<Defect>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OracleMethod {
    Brute,
    #[serde(rename = "heldkarp")]
    HeldKarp,
    Heuristic,
}

impl OracleMethod {
    pub fn run(self, instance: &ProblemInstance) -> Result<CostBound, OracleError> {
        match self {
            OracleMethod::Brute => brute_force_optimal(instance),
            OracleMethod::HeldKarp => held_karp_optimal(instance),
            OracleMethod::Heuristic => nearest_neighbor_then_two_opt(instance),
        }
    }
}

/// Ratio of a solution cost to a reference bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gap {
    pub ratio: f64,
    pub kind: BoundKind,
}

impl Gap {
    pub fn label(&self) -> &'static str {
        match self.kind {
            BoundKind::Exact => "EXACT-gap",
            BoundKind::Heuristic => "HEURISTIC-gap",
        }
    }
}

pub fn optimality_gap(solution_cost: f64, bound: &CostBound) -> Result<Gap, OracleError> {
    if bound.cost <= 0.0 {
        return Err(OracleError::ZeroBound);
    }
    Ok(Gap { ratio: solution_cost / bound.cost, kind: bound.kind })
}

/// Day depots and the cities that must be distributed over the days.
struct Layout {
    matrix: DistanceMatrix,
    day_depots: Vec<usize>,
    stops: Vec<usize>,
}

fn layout(instance: &ProblemInstance, method: &'static str) -> Result<Layout, OracleError> {
    if instance.problem_type == ProblemType::Novel {
        return Err(OracleError::WrongType { method, problem_type: instance.problem_type });
    }
    let validation = validate_instance(instance);
    if !validation.is_ok() {
        return Err(OracleError::InvalidInstance(validation.defects.into_iter().filter(Defect::is_fatal).collect()));
    }
    let matrix = build_distance_matrix(instance).map_err(|_| OracleError::InvalidInstance(Vec::new()))?;
    let days = instance.days.max(1);
    let day_depots: Vec<usize> = (0..days).map(|d| instance.depot_for_day(d).unwrap_or(instance.depots[0])).collect();
    let stops = (0..instance.cities.len()).filter(|&c| !instance.is_depot(c)).collect();
    Ok(Layout { matrix, day_depots, stops })
}

fn bound(kind: BoundKind, routes: Vec<Vec<usize>>, matrix: &DistanceMatrix) -> CostBound {
    let cost = routes.iter().map(|r| matrix.path_cost(r)).sum();
    let source = match kind {
        BoundKind::Exact => SolutionSource::Oracle,
        BoundKind::Heuristic => SolutionSource::Heuristic,
    };
    CostBound { kind, cost, solution: CandidateSolution::new(routes, source) }
}

fn lt_cost(a: f64, b: f64) -> bool {
    a < b - TIE_EPS * b.abs().max(1.0)
}

/// Rearranges `v` into the next permutation in lexicographic order.
fn next_permutation(v: &mut [usize]) -> bool {
    let Some(i) = v.windows(2).rposition(|w| w[0] < w[1]) else { return false };
    let j = v.iter().rposition(|&x| x > v[i]).expect("a larger element exists");
    v.swap(i, j);
    v[i + 1..].reverse();
    true
}

/// Cheapest closed route from `depot` through every city in `stops`; among
/// ties the lexicographically smallest route.
fn best_route(depot: usize, stops: &[usize], m: &DistanceMatrix) -> (Vec<usize>, f64) {
    let mut perm = stops.to_vec();
    perm.sort_unstable();
    let mut best: Option<(Vec<usize>, f64)> = None;
    loop {
        // A route and its reversal cost the same; the lexicographically
        // smaller of the pair has the smaller first stop.
        if perm.len() < 2 || perm[0] < perm[perm.len() - 1] {
            let mut cost = 0.0;
            let mut prev = depot;
            for &c in &perm {
                cost += m.get(prev, c);
                prev = c;
            }
            cost += m.get(prev, depot);
            if best.as_ref().is_none_or(|(_, b)| lt_cost(cost, *b)) {
                let mut route = Vec::with_capacity(perm.len() + 2);
                route.push(depot);
                route.extend_from_slice(&perm);
                route.push(depot);
                best = Some((route, cost));
            }
        }
        if !next_permutation(&mut perm) {
            break;
        }
    }
    best.expect("at least one permutation")
}

/// Orders candidates: cheaper first, then fewer empty days, then
/// lexicographic route sequence.
fn better(a: (&[Vec<usize>], f64), b: (&[Vec<usize>], f64)) -> bool {
    if lt_cost(a.1, b.1) {
        return true;
    }
    if lt_cost(b.1, a.1) {
        return false;
    }
    let empties = |r: &[Vec<usize>]| r.iter().filter(|x| x.len() <= 2).count();
    match empties(a.0).cmp(&empties(b.0)) {
        Ordering::Less => true,
        Ordering::Greater => false,
        Ordering::Equal => a.0 < b.0,
    }
}

/// Exhaustive search. Multi-day instances enumerate every assignment of
/// cities to days (deduplicating interchangeable days when they share a
/// depot) and the best ordering within each day.
pub fn brute_force_optimal(instance: &ProblemInstance) -> Result<CostBound, OracleError> {
    const METHOD: &str = "brute force";
    let l = layout(instance, METHOD)?;
    if instance.problem_type == ProblemType::TspSingle {
        if instance.cities.len() > BRUTE_FORCE_MAX_CITIES {
            return Err(OracleError::InstanceTooLarge {
                method: METHOD,
                detail: format!("{} cities, limit {BRUTE_FORCE_MAX_CITIES} for single tours", instance.cities.len()),
            });
        }
        let (route, _) = best_route(l.day_depots[0], &l.stops, &l.matrix);
        return Ok(bound(BoundKind::Exact, vec![route], &l.matrix));
    }
    let days = l.day_depots.len();
    if l.stops.len() > BRUTE_FORCE_MAX_STOPS || days > BRUTE_FORCE_MAX_DAYS {
        return Err(OracleError::InstanceTooLarge {
            method: METHOD,
            detail: format!(
                "{} non-depot cities over {days} days, limit {BRUTE_FORCE_MAX_STOPS} cities and {BRUTE_FORCE_MAX_DAYS} days",
                l.stops.len()
            ),
        });
    }
    let shared_depot = instance.problem_type == ProblemType::MultiDaySingleDepot;
    let mut memo: HashMap<(usize, u32), (Vec<usize>, f64)> = HashMap::new();
    let mut assign = vec![0usize; l.stops.len()];
    let mut best: Option<(Vec<Vec<usize>>, f64)> = None;
    loop {
        let canonical = !shared_depot || {
            let mut max_used = 0;
            assign.iter().enumerate().all(|(i, &d)| {
                let ok = (i == 0 && d == 0) || (i > 0 && d <= max_used + 1);
                max_used = max_used.max(d);
                ok
            })
        };
        if canonical {
            let mut routes = Vec::with_capacity(days);
            let mut total = 0.0;
            for (day, &depot) in l.day_depots.iter().enumerate() {
                let mask = assign.iter().enumerate().filter(|&(_, &d)| d == day).fold(0u32, |m, (i, _)| m | 1 << i);
                let (route, cost) = memo
                    .entry((depot, mask))
                    .or_insert_with(|| {
                        let subset: Vec<usize> =
                            (0..l.stops.len()).filter(|i| mask >> i & 1 == 1).map(|i| l.stops[i]).collect();
                        if subset.is_empty() {
                            (vec![depot, depot], 0.0)
                        } else {
                            best_route(depot, &subset, &l.matrix)
                        }
                    })
                    .clone();
                routes.push(route);
                total += cost;
            }
            if shared_depot {
                routes.sort_by_key(|r| (r.len() <= 2, r.clone()));
            }
            if best.as_ref().is_none_or(|(b, bc)| better((&routes, total), (b, *bc))) {
                best = Some((routes, total));
            }
        }
        // Odometer increment over day assignments.
        let mut i = assign.len();
        loop {
            if i == 0 {
                let (routes, _) = best.expect("at least one assignment");
                return Ok(bound(BoundKind::Exact, routes, &l.matrix));
            }
            i -= 1;
            assign[i] += 1;
            if assign[i] < days {
                break;
            }
            assign[i] = 0;
        }
    }
}

/// Exact dynamic programme over subsets, single tours only.
pub fn held_karp_optimal(instance: &ProblemInstance) -> Result<CostBound, OracleError> {
    const METHOD: &str = "Held-Karp";
    if instance.problem_type != ProblemType::TspSingle {
        return Err(OracleError::WrongType { method: METHOD, problem_type: instance.problem_type });
    }
    if instance.cities.len() > HELD_KARP_MAX_CITIES {
        return Err(OracleError::InstanceTooLarge {
            method: METHOD,
            detail: format!("{} cities, limit {HELD_KARP_MAX_CITIES}", instance.cities.len()),
        });
    }
    let l = layout(instance, METHOD)?;
    let depot = l.day_depots[0];
    let k = l.stops.len();
    if k == 0 {
        return Ok(bound(BoundKind::Exact, vec![vec![depot, depot]], &l.matrix));
    }
    let full = (1usize << k) - 1;
    let idx = |mask: usize, j: usize| mask * k + j;
    let mut cost = vec![f64::INFINITY; (full + 1) * k];
    let mut parent = vec![usize::MAX; (full + 1) * k];
    for j in 0..k {
        cost[idx(1 << j, j)] = l.matrix.get(depot, l.stops[j]);
    }
    for mask in 1..=full {
        for j in 0..k {
            if mask >> j & 1 == 0 {
                continue;
            }
            let here = cost[idx(mask, j)];
            if !here.is_finite() {
                continue;
            }
            for next in 0..k {
                if mask >> next & 1 == 1 {
                    continue;
                }
                let m2 = mask | 1 << next;
                let c = here + l.matrix.get(l.stops[j], l.stops[next]);
                if c < cost[idx(m2, next)] {
                    cost[idx(m2, next)] = c;
                    parent[idx(m2, next)] = j;
                }
            }
        }
    }
    let (mut last, _) = (0..k)
        .map(|j| (j, cost[idx(full, j)] + l.matrix.get(l.stops[j], depot)))
        .fold((0, f64::INFINITY), |acc, x| if x.1 < acc.1 { x } else { acc });
    let mut order = Vec::with_capacity(k);
    let mut mask = full;
    while last != usize::MAX {
        order.push(l.stops[last]);
        let p = parent[idx(mask, last)];
        mask &= !(1 << last);
        last = p;
    }
    order.reverse();
    let mut route = vec![depot];
    route.extend(order);
    route.push(depot);
    Ok(bound(BoundKind::Exact, vec![route], &l.matrix))
}

fn nearest_neighbor(depot: usize, stops: &[usize], m: &DistanceMatrix) -> Vec<usize> {
    let mut left: Vec<usize> = stops.to_vec();
    let mut route = vec![depot];
    let mut here = depot;
    while !left.is_empty() {
        let (pos, _) = left
            .iter()
            .enumerate()
            .map(|(i, &c)| (i, m.get(here, c)))
            .fold((0, f64::INFINITY), |acc, x| if x.1 < acc.1 { x } else { acc });
        here = left.remove(pos);
        route.push(here);
    }
    route.push(depot);
    route
}

/// Reverses interior segments while that shortens the route. Endpoints
/// stay fixed.
pub fn two_opt(route: &mut [usize], m: &DistanceMatrix) {
    let n = route.len();
    if n < 5 {
        return;
    }
    let mut improved = true;
    while improved {
        improved = false;
        for i in 1..n - 2 {
            for j in i + 1..n - 1 {
                let (a, b, c, d) = (route[i - 1], route[i], route[j], route[j + 1]);
                let delta = m.get(a, c) + m.get(b, d) - m.get(a, b) - m.get(c, d);
                if delta < -1e-12 {
                    route[i..=j].reverse();
                    improved = true;
                }
            }
        }
    }
}

/// Construct-and-improve baseline. Single-depot multi-day instances split a
/// nearest-neighbour tour into consecutive, near-equal day segments;
/// per-day-depot instances send each city to its nearest depot.
pub fn nearest_neighbor_then_two_opt(instance: &ProblemInstance) -> Result<CostBound, OracleError> {
    let l = layout(instance, "nearest neighbour + 2-opt")?;
    let days = l.day_depots.len();
    let groups: Vec<Vec<usize>> = match instance.problem_type {
        ProblemType::MultiDaySingleDepot => {
            let tour = nearest_neighbor(l.day_depots[0], &l.stops, &l.matrix);
            let order = &tour[1..tour.len() - 1];
            (0..days).map(|d| order[d * order.len() / days..(d + 1) * order.len() / days].to_vec()).collect()
        }
        _ => {
            let mut groups = vec![Vec::new(); days];
            for &c in &l.stops {
                let (day, _) = l
                    .day_depots
                    .iter()
                    .enumerate()
                    .map(|(d, &dep)| (d, l.matrix.get(dep, c)))
                    .fold((0, f64::INFINITY), |acc, x| if x.1 < acc.1 { x } else { acc });
                groups[day].push(c);
            }
            groups
        }
    };
    let routes = groups
        .iter()
        .zip(&l.day_depots)
        .map(|(g, &depot)| {
            let mut r = nearest_neighbor(depot, g, &l.matrix);
            two_opt(&mut r, &l.matrix);
            r
        })
        .collect();
    Ok(bound(BoundKind::Heuristic, routes, &l.matrix))
}
