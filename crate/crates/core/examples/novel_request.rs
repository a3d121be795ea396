//! A request outside the case library: the model writes its own
//! formulation (pathway B) and checks its answers, while the constraints
//! that could be classified are still verified externally.

use routeforge::gateway::ScriptedBackend;
use routeforge::instance::{Point2D, ProblemInstance, ProblemType};
use routeforge::pipeline::{solve_request, PipelineConfig};
use routeforge::spf::CaseLibrary;

const FORMULATION: &str = "Problem: Museum tour over two days with a different hotel each night.
Constraints:
1. Day 1 route must start and end at depot city 0.
2. Day 2 route must start and end at depot city 5.
3. Every non-depot city must be visited exactly once across all routes.
4. Each route may contain at most 3 stops.
Objective: Minimize the total travel cost.
Grammar: route-lines-v1
Output format: Day 1: <depot> -> ... -> <depot>
Day 2: <depot> -> ... -> <depot>
Total cost: <number>";

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let instance = ProblemInstance {
        cities: [(0.0, 0.0), (1.0, 2.0), (2.0, 1.0), (6.0, 1.0), (7.0, 2.0), (8.0, 0.0)]
            .into_iter()
            .map(|(x, y)| Point2D::new(x, y))
            .collect(),
        problem_type: ProblemType::Novel,
        depots: vec![0, 5],
        days: 2,
        request_text: "Visit every museum, different hotel each night, max 3 stops per day.".into(),
    };
    let backend = ScriptedBackend::new([
        "NO_MATCH",
        FORMULATION,
        "Day 1: 0 -> 1 -> 2 -> 0\nDay 2: 5 -> 4 -> 5",
        "FEASIBLE",
        "Day 1: 0 -> 1 -> 2 -> 0\nDay 2: 5 -> 4 -> 3 -> 5",
        "FEASIBLE",
    ]);
    let config = PipelineConfig { refine_enabled: false, ..PipelineConfig::default() };
    let result = solve_request(&instance.request_text, &instance, &CaseLibrary::builtin(), &config, &backend)?;

    let spf = result.trace.spf_used.as_ref().expect("a formulation was used");
    println!("pathway {:?}, {} constraints:", result.trace.pathway, spf.constraints.len());
    for c in &spf.constraints {
        println!("  [{:?}, checkable={}] {}", c.kind(), c.machine_checkable, c.text.replace('\n', " / "));
    }
    for it in result.trace.iterations.iter().filter(|i| i.solution.is_some()) {
        println!("attempt {}: self-check {:?}, accepted {}, notes {:?}", it.index, it.self_verdict, it.accepted, it.notes);
    }
    print!("{}", result.solution.expect("solved").to_route_lines(result.cost));
    Ok(())
}
