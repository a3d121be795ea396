//! Instantiate a library case and print the prompts the pipeline sends.

use routeforge::instance::{Point2D, ProblemInstance, ProblemType};
use routeforge::spf::{instantiate_spf, render_match_prompt, render_solve_prompt, CaseLibrary};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let library = CaseLibrary::builtin();
    let instance = ProblemInstance {
        cities: (0..6).map(|i| Point2D::new(i as f64, (i * i % 5) as f64)).collect(),
        problem_type: ProblemType::MultiDaySingleDepot,
        depots: vec![0],
        days: 2,
        request_text: "Split the six sites over two days, back to the hotel each evening.".into(),
    };
    println!("--- match prompt ---\n{}", render_match_prompt(&instance.request_text, &library));
    let spf = instantiate_spf(&library, "MULTI_DAY_SINGLE_DEPOT", &instance)?;
    println!("--- solve prompt ---\n{}", render_solve_prompt(&spf));
    Ok(())
}
