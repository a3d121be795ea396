//! Check candidate routes against a library formulation and read the
//! violation messages.

use routeforge::instance::{Point2D, ProblemInstance, ProblemType};
use routeforge::spf::{instantiate_spf, CaseLibrary};
use routeforge::verifier::{verify, CandidateSolution};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let instance = ProblemInstance {
        cities: [(0.0, 0.0), (10.0, 0.0), (1.0, 1.0), (9.0, 1.0), (1.0, -1.0)]
            .into_iter()
            .map(|(x, y)| Point2D::new(x, y))
            .collect(),
        problem_type: ProblemType::MultiDayDepotPerDay,
        depots: vec![0, 1],
        days: 2,
        request_text: "Two days, a different hotel each night.".into(),
    };
    let spf = instantiate_spf(&CaseLibrary::builtin(), "MULTI_DAY_DEPOT_PER_DAY", &instance)?;

    let good = CandidateSolution::from_model(vec![vec![0, 2, 4, 0], vec![1, 3, 1]]);
    let report = verify(&good, &spf, &instance);
    println!("good: feasible={} cost={:.2}", report.feasible, report.recomputed_cost.unwrap_or_default());
    assert!(report.feasible);

    let bad = CandidateSolution::from_model(vec![vec![0, 2, 3, 0], vec![0, 3, 1]]);
    let report = verify(&bad, &spf, &instance);
    println!("bad: feasible={}", report.feasible);
    for message in report.messages() {
        println!("  - {message}");
    }
    assert!(!report.feasible);
    Ok(())
}
