mod common;

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use routeforge::eval::{compute_metrics, TrialRecord};
use routeforge::gateway::{
    classify_constraint, parse_generated_spf, parse_match_response, parse_self_verification_response,
    parse_solution_response,
};
use routeforge::gateway::ScriptedBackend;
use routeforge::instance::{build_distance_matrix, ProblemType};
use routeforge::oracle::two_opt;
use routeforge::pipeline::{solve_request, PipelineConfig, PipelineStatus, Stage, VerificationMode};
use routeforge::spf::{render_solve_prompt, CaseLibrary, ConstraintRule};
use routeforge::verifier::{compute_cost, verify};

use common::*;

fn instance_from(seed: u64, type_idx: usize) -> (ChaCha8Rng, routeforge::instance::ProblemInstance) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t = CHECKABLE_TYPES[type_idx % 3];
    let days = rng.random_range(2..=3);
    let min = if t == ProblemType::TspSingle { 2 } else { days + 1 };
    let n = rng.random_range(min..=14);
    let instance = random_instance(&mut rng, t, n, days);
    (rng, instance)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn verifier_flags_each_mutation(seed in any::<u64>(), t in 0usize..3, k in 0usize..MUTATIONS.len()) {
        let (mut rng, instance) = instance_from(seed, t);
        let spf = reference_spf(&instance);
        let solution = random_feasible(&mut rng, &instance);
        let clean = verify(&solution, &spf, &instance);
        prop_assert!(clean.feasible, "{:?}", clean.violations);
        let mutated = mutate(&mut rng, &instance, &solution, MUTATIONS[k]);
        let report = verify(&mutated, &spf, &instance);
        prop_assert!(!report.feasible);
        prop_assert!(report.has_kind(MUTATIONS[k]), "{:?} not in {:?}", MUTATIONS[k], report.violations);
    }

    #[test]
    fn route_lines_round_trip(seed in any::<u64>(), t in 0usize..3) {
        let (mut rng, instance) = instance_from(seed, t);
        let spf = reference_spf(&instance);
        let solution = random_feasible(&mut rng, &instance);
        let cost = compute_cost(&solution, &build_distance_matrix(&instance).unwrap());
        let text = format!("Here you go.\n{}\nThanks!", solution.to_route_lines(Some(cost)));
        let parsed = parse_solution_response(&text, &spf).unwrap();
        prop_assert_eq!(&parsed.solution.routes, &solution.routes);
        prop_assert!((parsed.reported_cost.unwrap() - cost).abs() <= 0.005);
    }

    #[test]
    fn parsers_never_panic(text in "\\PC{0,300}", seed in any::<u64>()) {
        let (_, instance) = instance_from(seed, 1);
        let spf = reference_spf(&instance);
        let library = CaseLibrary::builtin();
        let _ = parse_solution_response(&text, &spf);
        let _ = parse_match_response(&text, &library);
        let _ = parse_generated_spf(&text, &instance);
        let _ = parse_self_verification_response(&text);
        let _ = classify_constraint(&text);
    }

    #[test]
    fn parsers_never_panic_on_near_grammar(
        lines in proptest::collection::vec("(Day|day|\\*\\*Day) ?[0-9]{1,2} ?: ?[0-9 ,>→-]{0,30}", 0..6),
        seed in any::<u64>(),
    ) {
        let (_, instance) = instance_from(seed, 2);
        let spf = reference_spf(&instance);
        let _ = parse_solution_response(&lines.join("\n"), &spf);
    }

    #[test]
    fn two_opt_never_lengthens(seed in any::<u64>(), n in 2usize..16) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let instance = random_instance(&mut rng, ProblemType::TspSingle, n, 1);
        let m = build_distance_matrix(&instance).unwrap();
        let depot = instance.depots[0];
        let mut stops: Vec<usize> = (0..n).filter(|&c| c != depot).collect();
        stops.shuffle(&mut rng);
        let mut route = [vec![depot], stops, vec![depot]].concat();
        let before = m.path_cost(&route);
        let mut sorted_before = route.clone();
        sorted_before.sort_unstable();
        two_opt(&mut route, &m);
        prop_assert!(m.path_cost(&route) <= before + 1e-9);
        prop_assert_eq!((route[0], route[route.len() - 1]), (depot, depot));
        let mut sorted_after = route.clone();
        sorted_after.sort_unstable();
        prop_assert_eq!(sorted_before, sorted_after);
    }

    #[test]
    fn metrics_ignore_record_order(seed in any::<u64>(), count in 1usize..60) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut records: Vec<TrialRecord> = (0..count).map(|i| {
            let first = rng.random_range(10.0..1000.0);
            let best = first * rng.random_range(0.5..=1.0);
            TrialRecord {
                trial_id: format!("r{i}"),
                instance_id: format!("i{}", i % 7),
                problem_type: ProblemType::ALL[rng.random_range(0..4)],
                trial: 1,
                verification_mode: VerificationMode::External,
                iteration_enabled: rng.random_bool(0.6),
                status: Some(PipelineStatus::Solved),
                error: None,
                first_feasible_cost: Some(first),
                best_cost: Some(best),
                feasible: rng.random_bool(0.9),
                refinement_success: best < first,
                gap: None,
                result: None,
            }
        }).collect();
        let expected = serde_json::to_string(&compute_metrics(&records).unwrap()).unwrap();
        records.shuffle(&mut rng);
        let shuffled = serde_json::to_string(&compute_metrics(&records).unwrap()).unwrap();
        prop_assert_eq!(expected, shuffled);
    }

    #[test]
    fn library_constraints_classify_back(seed in any::<u64>(), t in 0usize..3) {
        let (_, instance) = instance_from(seed, t);
        let spf = reference_spf(&instance);
        for c in &spf.constraints {
            if !matches!(c.rule, ConstraintRule::DepotAssignedPerDay { .. } | ConstraintRule::FreeText { .. }) {
                prop_assert_eq!(classify_constraint(&c.text), Some(c.rule.clone()), "{}", c.text);
            }
        }
        let text = render_solve_prompt(&spf);
        let parsed = parse_generated_spf(&text, &instance).unwrap();
        let rules = |s: &routeforge::spf::StructuredProblemFormulation| s.constraints.iter().map(|c| c.rule.clone()).collect::<Vec<_>>();
        prop_assert_eq!(rules(&parsed), rules(&spf));
    }

    #[test]
    fn refinement_keeps_best_feasible(seed in any::<u64>(), t in 0usize..3, rounds in 1usize..6) {
        let (mut rng, instance) = instance_from(seed, t);
        let spf = reference_spf(&instance);
        let m = build_distance_matrix(&instance).unwrap();
        let candidates: Vec<_> = (0..=rounds).map(|i| {
            let s = random_feasible(&mut rng, &instance);
            if i > 0 && rng.random_bool(0.3) { mutate(&mut rng, &instance, &s, MUTATIONS[0]) } else { s }
        }).collect();
        let mut script = vec![instance.problem_type.tag().to_string()];
        script.extend(candidates.iter().map(|c| c.to_route_lines(None)));
        let config = PipelineConfig { max_refine_rounds: rounds, ..PipelineConfig::default() };
        let backend = ScriptedBackend::new(script);
        let r = solve_request(&instance.request_text, &instance, &CaseLibrary::builtin(), &config, &backend).unwrap();
        prop_assert_eq!(r.status, PipelineStatus::Solved);

        let mut best = (0, compute_cost(&candidates[0], &m));
        for (i, c) in candidates.iter().enumerate().skip(1) {
            let cost = compute_cost(c, &m);
            if verify(c, &spf, &instance).feasible && cost < best.1 - 1e-9 {
                best = (i, cost);
            }
        }
        prop_assert_eq!(&r.solution.unwrap().routes, &candidates[best.0].routes);
        let bests: Vec<f64> = r.trace.stage(Stage::Refinement).map(|i| i.best_so_far.unwrap()).collect();
        prop_assert_eq!(bests.len(), rounds);
        prop_assert!(bests.windows(2).all(|w| w[1] <= w[0]));
        prop_assert!(r.cost.unwrap() <= r.trace.first_feasible_cost.unwrap());
    }
}
