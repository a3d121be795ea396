use std::path::PathBuf;
use std::process::Command;

const EXAMPLES: [&str; 9] = [
    "distance_matrix",
    "verify_routes",
    "exact_oracles",
    "render_prompts",
    "scripted_pipeline",
    "novel_request",
    "replay_cassette",
    "evaluate_suite",
    "plot_svg",
];

/// `cargo test` builds examples next to the test binaries' parent directory.
fn example_path(name: &str) -> PathBuf {
    let exe = std::env::current_exe().unwrap();
    let profile_dir = exe.parent().and_then(|deps| deps.parent()).unwrap();
    profile_dir.join("examples").join(format!("{name}{}", std::env::consts::EXE_SUFFIX))
}

#[test]
fn every_example_runs() {
    for name in EXAMPLES {
        let path = example_path(name);
        assert!(path.exists(), "example binary missing: {}", path.display());
        let out = Command::new(&path).env_remove("ROUTEFORGE_CASSETTE_DIR").output().unwrap();
        assert!(out.status.success(), "{name} failed:\n{}", String::from_utf8_lossy(&out.stderr));
        assert!(!out.stdout.is_empty(), "{name} printed nothing");
    }
}
