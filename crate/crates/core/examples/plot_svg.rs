//! Draw a two-day heuristic solution as SVG.

use routeforge::instance::{Point2D, ProblemInstance, ProblemType};
use routeforge::oracle::nearest_neighbor_then_two_opt;
use routeforge::svg::render_svg;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let instance = ProblemInstance {
        cities: (0..12)
            .map(|i| {
                let a = i as f64 * 0.9;
                Point2D::new(10.0 * a.cos() + i as f64, 8.0 * a.sin())
            })
            .collect(),
        problem_type: ProblemType::MultiDaySingleDepot,
        depots: vec![0],
        days: 2,
        request_text: String::new(),
    };
    let bound = nearest_neighbor_then_two_opt(&instance)?;
    let svg = render_svg(&bound.solution, &instance);
    let path = std::env::temp_dir().join("routeforge-plot.svg");
    std::fs::write(&path, &svg)?;
    println!("wrote {} ({} bytes, total cost {:.2})", path.display(), svg.len(), bound.cost);
    Ok(())
}
