//! Record a run to a cassette, then replay it offline and get the same
//! result.

use routeforge::gateway::{Cassette, RecordingBackend, ReplayBackend, ScriptedBackend};
use routeforge::instance::{Point2D, ProblemInstance, ProblemType};
use routeforge::pipeline::{solve_request, PipelineConfig};
use routeforge::spf::CaseLibrary;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let instance = ProblemInstance {
        cities: [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)].into_iter().map(|(x, y)| Point2D::new(x, y)).collect(),
        problem_type: ProblemType::TspSingle,
        depots: vec![0],
        days: 1,
        request_text: "Loop around the square.".into(),
    };
    let library = CaseLibrary::builtin();
    let config = PipelineConfig { max_refine_rounds: 1, ..PipelineConfig::default() };

    let live = RecordingBackend::new(ScriptedBackend::new([
        "TSP_SINGLE",
        "Day 1: 0 -> 2 -> 1 -> 3 -> 0",
        "Day 1: 0 -> 1 -> 2 -> 3 -> 0",
    ]));
    let recorded = solve_request(&instance.request_text, &instance, &library, &config, &live)?;
    let dir = std::env::temp_dir().join(format!("routeforge-replay-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("square.cassette.json");
    live.cassette().save(&path)?;

    let replay = ReplayBackend::new(Cassette::load(&path)?);
    let replayed = solve_request(&instance.request_text, &instance, &library, &config, &replay)?;
    println!("recorded {} exchanges to {}", live.cassette().records.len(), path.display());
    println!("recorded cost {:.2}, replayed cost {:.2}", recorded.cost.unwrap(), replayed.cost.unwrap());
    assert_eq!(recorded.solution, replayed.solution);
    assert_eq!(recorded.trace.iterations, replayed.trace.iterations);

    let again = solve_request(&instance.request_text, &instance, &library, &config, &ReplayBackend::new(Cassette::load(&path)?))?;
    assert_eq!(replayed, again);
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}
