//! Load an instance, validate it and print its distance matrix.

use routeforge::instance::{build_distance_matrix, validate_instance, ProblemInstance};

const INSTANCE: &str = r#"{
  "cities": [[0, 0], [4, 0], [4, 3], [0, 3], [2, 5]],
  "problem_type": "TSP_SINGLE",
  "depots": [0],
  "days": 1,
  "request_text": "Start at the hotel, see four landmarks, come back."
}"#;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let instance = ProblemInstance::from_json_str(INSTANCE)?;
    let validation = validate_instance(&instance);
    println!("valid: {} ({} defects)", validation.is_ok(), validation.defects.len());

    let m = build_distance_matrix(&instance)?;
    for i in 0..m.len() {
        let row: Vec<String> = m.row(i).iter().map(|d| format!("{d:6.3}")).collect();
        println!("{i}: {}", row.join(" "));
    }
    assert!((m.get(2, 4) - 8f64.sqrt()).abs() < 1e-12);
    Ok(())
}
