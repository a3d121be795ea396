//! Run a small suite with and without refinement and print the metrics
//! table.

use routeforge::eval::{compute_metrics, render_report, run_suite, AblationCell, SuiteCase, SuiteOptions};
use routeforge::gateway::{ChatBackend, ScriptedBackend};
use routeforge::instance::{Point2D, ProblemInstance, ProblemType};
use routeforge::pipeline::PipelineConfig;
use routeforge::spf::CaseLibrary;

fn square(id: &str, side: f64) -> SuiteCase {
    let instance = ProblemInstance {
        cities: [(0.0, 0.0), (side, 0.0), (side, side), (0.0, side)].into_iter().map(|(x, y)| Point2D::new(x, y)).collect(),
        problem_type: ProblemType::TspSingle,
        depots: vec![0],
        days: 1,
        request_text: "Loop around the square.".into(),
    };
    SuiteCase { id: id.into(), request: instance.request_text.clone(), instance, cassette: None }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cases = vec![square("small", 1.0), square("large", 3.0)];
    let options = SuiteOptions {
        cells: AblationCell::grid(Some(true), None),
        parallel: 2,
        ..SuiteOptions::default()
    };
    let config = PipelineConfig { max_refine_rounds: 1, ..PipelineConfig::default() };
    // A crossing tour first, the perimeter on refinement.
    let factory = |_: &SuiteCase| -> Result<Box<dyn ChatBackend>, _> {
        Ok(Box::new(ScriptedBackend::new([
            "TSP_SINGLE",
            "Day 1: 0 -> 2 -> 1 -> 3 -> 0",
            "Day 1: 0 -> 1 -> 2 -> 3 -> 0",
        ])))
    };
    let records = run_suite(&cases, &CaseLibrary::builtin(), &config, &options, factory)?;
    for r in &records {
        println!("{}: feasible={} first={:?} best={:?} gap={:?}", r.trial_id, r.feasible, r.first_feasible_cost, r.best_cost, r.gap);
    }
    let report = render_report(&compute_metrics(&records)?);
    print!("\n{}", report.text);
    Ok(())
}
