//! Run pathway A end to end against canned model answers: one infeasible
//! attempt, a fix, then refinement.

use routeforge::gateway::ScriptedBackend;
use routeforge::instance::{Point2D, ProblemInstance, ProblemType};
use routeforge::pipeline::{solve_request, PipelineConfig, Stage};
use routeforge::spf::CaseLibrary;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let instance = ProblemInstance {
        cities: [(0.0, 0.0), (4.0, 0.0), (4.0, 3.0), (0.0, 3.0), (2.0, 5.0)]
            .into_iter()
            .map(|(x, y)| Point2D::new(x, y))
            .collect(),
        problem_type: ProblemType::TspSingle,
        depots: vec![0],
        days: 1,
        request_text: "Start at the hotel, see four landmarks, come back.".into(),
    };
    let backend = ScriptedBackend::new([
        "TSP_SINGLE",
        "Day 1: 0 -> 1 -> 2 -> 3 -> 0",
        "Day 1: 0 -> 2 -> 1 -> 4 -> 3 -> 0\nTotal cost: 19.21",
        "Day 1: 0 -> 1 -> 2 -> 4 -> 3 -> 0",
    ]);
    let config = PipelineConfig { max_refine_rounds: 1, ..PipelineConfig::default() };
    let result = solve_request(&instance.request_text, &instance, &CaseLibrary::builtin(), &config, &backend)?;

    for it in &result.trace.iterations {
        let verdict = match (&it.parse_error, &it.report) {
            (Some(e), _) => format!("unparseable: {e}"),
            (_, Some(r)) if !r.feasible => format!("infeasible: {}", r.messages().join(" ")),
            _ if it.stage == Stage::Match => format!("matched: {}", it.response.trim()),
            _ => format!("ok, cost {:.2}", it.cost.unwrap_or_default()),
        };
        println!("{:?} #{}: {verdict}", it.stage, it.index);
    }
    println!("status {:?}, best {:.2}, first feasible {:.2}, improved: {}",
        result.status,
        result.cost.unwrap_or_default(),
        result.trace.first_feasible_cost.unwrap_or_default(),
        result.trace.refinement_success);
    Ok(())
}
