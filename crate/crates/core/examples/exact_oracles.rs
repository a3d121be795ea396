//! Exact and heuristic reference solutions, and the optimality gap of a
//! worse tour.

use routeforge::instance::{Point2D, ProblemInstance, ProblemType};
use routeforge::oracle::{brute_force_optimal, held_karp_optimal, nearest_neighbor_then_two_opt, optimality_gap};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let instance = ProblemInstance {
        cities: [(0.0, 0.0), (4.0, 0.0), (4.0, 3.0), (0.0, 3.0), (2.0, 5.0)]
            .into_iter()
            .map(|(x, y)| Point2D::new(x, y))
            .collect(),
        problem_type: ProblemType::TspSingle,
        depots: vec![0],
        days: 1,
        request_text: String::new(),
    };
    let brute = brute_force_optimal(&instance)?;
    let dp = held_karp_optimal(&instance)?;
    let heuristic = nearest_neighbor_then_two_opt(&instance)?;
    print!("brute force:\n{}", brute.solution.to_route_lines(Some(brute.cost)));
    println!("Held-Karp: {:.4}", dp.cost);
    println!("nearest neighbour + 2-opt: {:.4}", heuristic.cost);

    let gap = optimality_gap(19.21, &brute)?;
    println!("a 19.21 tour is {:.4}x optimal ({})", gap.ratio, gap.label());
    assert!((brute.cost - dp.cost).abs() < 1e-9);
    Ok(())
}
