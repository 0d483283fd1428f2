use std::path::Path;
use std::process::{Command, Output};

fn soatt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_soatt"))
        .args(args)
        .output()
        .unwrap()
}

fn write(path: &Path, text: &str) {
    std::fs::write(path, text).unwrap();
}

const SMALL: &str = "[robots]\ncount = 3\nradius = 2.0\n[sim]\ndt = 0.01\ntotal_time = 1.0\n";

#[test]
fn run_writes_all_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("small.toml");
    write(&config, SMALL);
    let out = dir.path().join("results");
    let result = soatt(&[
        "run",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(
        result.status.success(),
        "{}",
        String::from_utf8_lossy(&result.stderr)
    );
    for file in [
        "trace.csv",
        "multipliers.csv",
        "metrics.csv",
        "trajectories.svg",
    ] {
        assert!(out.join(file).exists(), "{file} missing");
    }
    let svg = std::fs::read_to_string(out.join("trajectories.svg")).unwrap();
    assert!(svg.contains("stroke-dasharray"));
    assert_eq!(svg.matches("<polyline").count(), 6);
}

#[test]
fn sweep_makes_one_directory_per_run() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("small.toml");
    write(&config, SMALL);
    let out = dir.path().join("sweep");
    let result = soatt(&[
        "run",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--sweep-n",
        "2,3",
        "--strategy",
        "proposed,braking",
        "--jobs",
        "2",
        "--emit",
        "metrics",
    ]);
    assert!(
        result.status.success(),
        "{}",
        String::from_utf8_lossy(&result.stderr)
    );
    let runs = std::fs::read_dir(&out).unwrap().count();
    assert_eq!(runs, 4);
    let one = out.join("circle_n2_braking_auxiliary_term");
    assert!(one.join("metrics.csv").exists());
    assert!(!one.join("trace.csv").exists());
}

#[test]
fn plot_rerenders_a_saved_trace() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("small.toml");
    write(&config, SMALL);
    let out = dir.path().join("r");
    assert!(soatt(&[
        "run",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap()
    ])
    .status
    .success());
    let svg = dir.path().join("again.svg");
    let result = soatt(&[
        "plot",
        "--trace",
        out.join("trace.csv").to_str().unwrap(),
        "--out",
        svg.to_str().unwrap(),
    ]);
    assert!(result.status.success());
    assert_eq!(
        std::fs::read(svg).unwrap(),
        std::fs::read(out.join("trajectories.svg")).unwrap()
    );
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    write(&bad, "[sim]\nbogus = 1\n");
    let result = soatt(&[
        "run",
        "--config",
        bad.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(result.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&result.stderr).contains("line 2"));

    let missing = dir.path().join("missing.toml");
    assert_eq!(
        soatt(&["run", "--config", missing.to_str().unwrap()])
            .status
            .code(),
        Some(4)
    );

    // A trace with only its initial state has nothing to plot.
    let trace = dir.path().join("empty.csv");
    write(
        &trace,
        "# dt = 1e-2\n# d_safe = 1e0\n# robot_radius = 5e-1\n\
         step,time,robot_id,x,y,theta,u1,u2,udot1,udot2,ref_x,ref_y,zeta_active,ca_active\n\
         0,0e0,0,0e0,0e0,0e0,0e0,0e0,0e0,0e0,0e0,0e0,0,0\n",
    );
    let svg = dir.path().join("empty.svg");
    let result = soatt(&[
        "plot",
        "--trace",
        trace.to_str().unwrap(),
        "--out",
        svg.to_str().unwrap(),
    ]);
    assert_eq!(result.status.code(), Some(2));
    assert!(!svg.exists());
}

#[test]
fn config_prints_a_loadable_document() {
    let result = soatt(&["config"]);
    assert!(result.status.success());
    let text = String::from_utf8(result.stdout).unwrap();
    let parsed = soatt::config::ConfigFile::parse(&text).unwrap();
    assert_eq!(parsed, soatt::config::ConfigFile::default());
}

#[test]
fn shipped_scenarios_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios");
    let mut count = 0;
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        soatt::config::load_scenario(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        count += 1;
    }
    assert!(count >= 4);
}
