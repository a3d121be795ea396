#![allow(dead_code)]

use rand::seq::SliceRandom;
use rand::Rng;
use routeforge::instance::{Point2D, ProblemInstance, ProblemType};
use routeforge::spf::{instantiate_spf, CaseLibrary, StructuredProblemFormulation};
use routeforge::verifier::{CandidateSolution, ViolationKind};

pub const CHECKABLE_TYPES: [ProblemType; 3] =
    [ProblemType::TspSingle, ProblemType::MultiDaySingleDepot, ProblemType::MultiDayDepotPerDay];

pub fn points(coords: &[(f64, f64)]) -> Vec<Point2D> {
    coords.iter().map(|&(x, y)| Point2D::new(x, y)).collect()
}

/// Square with an apex above its top edge; optimal tour 0-1-2-4-3-0.
pub fn apex() -> ProblemInstance {
    ProblemInstance {
        cities: points(&[(0.0, 0.0), (4.0, 0.0), (4.0, 3.0), (0.0, 3.0), (2.0, 5.0)]),
        problem_type: ProblemType::TspSingle,
        depots: vec![0],
        days: 1,
        request_text: "Start at the hotel, visit the four landmarks once each and return.".into(),
    }
}

pub fn apex_optimal_cost() -> f64 {
    4.0 + 3.0 + 8f64.sqrt() + 8f64.sqrt() + 3.0
}

/// `cities` total, at least one non-depot city.
pub fn random_instance(rng: &mut impl Rng, t: ProblemType, cities: usize, days: usize) -> ProblemInstance {
    let days = if t == ProblemType::TspSingle { 1 } else { days };
    let depot_count = if t == ProblemType::MultiDayDepotPerDay { days } else { 1 };
    assert!(cities > depot_count);
    let mut ids: Vec<usize> = (0..cities).collect();
    ids.shuffle(rng);
    let mut depots = ids[..depot_count].to_vec();
    if t != ProblemType::MultiDayDepotPerDay {
        depots.truncate(1);
    }
    ProblemInstance {
        cities: (0..cities).map(|_| Point2D::new(rng.random_range(0.0..100.0), rng.random_range(0.0..100.0))).collect(),
        problem_type: t,
        depots,
        days,
        request_text: "random trip".into(),
    }
}

pub fn reference_spf(instance: &ProblemInstance) -> StructuredProblemFormulation {
    instantiate_spf(&CaseLibrary::builtin(), instance.problem_type.tag(), instance).expect("library covers the type")
}

pub fn day_depot(instance: &ProblemInstance, day: usize) -> usize {
    instance.depot_for_day(day).unwrap_or(instance.depots[0])
}

/// Shuffled stops cut at random points into the days; empty days allowed.
pub fn random_feasible(rng: &mut impl Rng, instance: &ProblemInstance) -> CandidateSolution {
    let mut stops: Vec<usize> = (0..instance.cities.len()).filter(|&c| !instance.is_depot(c)).collect();
    stops.shuffle(rng);
    let days = instance.days.max(1);
    let mut cuts: Vec<usize> = (0..days - 1).map(|_| rng.random_range(0..=stops.len())).collect();
    cuts.sort_unstable();
    cuts.insert(0, 0);
    cuts.push(stops.len());
    let routes = (0..days)
        .map(|d| {
            let depot = day_depot(instance, d);
            let mut r = vec![depot];
            r.extend_from_slice(&stops[cuts[d]..cuts[d + 1]]);
            r.push(depot);
            r
        })
        .collect();
    CandidateSolution::from_model(routes)
}

pub const MUTATIONS: [ViolationKind; 6] = [
    ViolationKind::CityNotVisited,
    ViolationKind::CityVisitedMultiple,
    ViolationKind::WrongStartDepot,
    ViolationKind::WrongEndDepot,
    ViolationKind::WrongRouteCount,
    ViolationKind::DepotInForeignRoute,
];

/// Applies one mutation designed to break exactly the constraint behind
/// `kind`. The verifier must then report `kind` (possibly among others).
pub fn mutate(rng: &mut impl Rng, instance: &ProblemInstance, solution: &CandidateSolution, kind: ViolationKind) -> CandidateSolution {
    let mut routes = solution.routes.clone();
    let stops: Vec<usize> = (0..instance.cities.len()).filter(|&c| !instance.is_depot(c)).collect();
    let day = rng.random_range(0..routes.len());
    match kind {
        ViolationKind::CityNotVisited => {
            let nonempty: Vec<usize> = (0..routes.len()).filter(|&d| routes[d].len() > 2).collect();
            let d = nonempty[rng.random_range(0..nonempty.len())];
            let pos = rng.random_range(1..routes[d].len() - 1);
            routes[d].remove(pos);
        }
        ViolationKind::CityVisitedMultiple => {
            let c = stops[rng.random_range(0..stops.len())];
            let pos = rng.random_range(1..routes[day].len());
            routes[day].insert(pos, c);
        }
        ViolationKind::WrongStartDepot | ViolationKind::WrongEndDepot => {
            let depot = day_depot(instance, day);
            let others: Vec<usize> = (0..instance.cities.len()).filter(|&c| c != depot).collect();
            let c = others[rng.random_range(0..others.len())];
            if kind == ViolationKind::WrongStartDepot {
                routes[day][0] = c;
            } else {
                *routes[day].last_mut().unwrap() = c;
            }
        }
        ViolationKind::WrongRouteCount => {
            if routes.len() > 1 && rng.random_bool(0.5) {
                routes.remove(day);
            } else {
                let d = day_depot(instance, day);
                routes.push(vec![d, d]);
            }
        }
        ViolationKind::DepotInForeignRoute => {
            let depot = instance.depots[rng.random_range(0..instance.depots.len())];
            let pos = rng.random_range(1..routes[day].len());
            routes[day].insert(pos, depot);
        }
        ViolationKind::UnknownCity => routes[day].insert(1, instance.cities.len()),
    }
    CandidateSolution::from_model(routes)
}
