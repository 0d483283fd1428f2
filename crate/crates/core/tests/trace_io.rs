use std::io::Cursor;

use soatt::metrics::MetricsReport;
use soatt::simulator::{circle_scenario, run, Obstacle, SimTrace};
use soatt::trace_io::{
    load_trace, metrics_csv, read_multipliers_csv, read_trace_csv, save_trace,
    write_multipliers_csv, write_trace_csv, TRACE_HEADER,
};
use soatt::SoattError;

fn short_run() -> SimTrace {
    let mut config = circle_scenario(3, 2.0, 1.0);
    config.obstacles.push(Obstacle {
        center: [0.0, 5.0],
        radius: 0.3,
    });
    config.sim.dt = 0.01;
    config.sim.total_time = 2.0;
    run(&config).unwrap()
}

fn to_csv(trace: &SimTrace) -> (String, String) {
    let mut t = Vec::new();
    let mut m = Vec::new();
    write_trace_csv(trace, &mut t).unwrap();
    write_multipliers_csv(trace, &mut m).unwrap();
    (String::from_utf8(t).unwrap(), String::from_utf8(m).unwrap())
}

fn from_csv(trace_csv: &str, multipliers_csv: &str) -> SimTrace {
    let mut trace = read_trace_csv(Cursor::new(trace_csv)).unwrap();
    read_multipliers_csv(Cursor::new(multipliers_csv), &mut trace).unwrap();
    trace
}

#[test]
fn round_trip_preserves_metrics() {
    let trace = short_run();
    let (t, m) = to_csv(&trace);
    let back = from_csv(&t, &m);
    assert_eq!(
        MetricsReport::from_trace(&trace).unwrap(),
        MetricsReport::from_trace(&back).unwrap()
    );
    assert_eq!(back.obstacles, trace.obstacles);
    assert_eq!(back.initial, trace.initial);
    for (a, b) in trace.steps.iter().zip(&back.steps) {
        assert_eq!(a.states, b.states);
        assert_eq!(a.multipliers, b.multipliers);
        assert_eq!(a.time, b.time);
    }
}

#[test]
fn rewriting_a_read_trace_is_idempotent() {
    let (t, m) = to_csv(&short_run());
    let (t2, m2) = to_csv(&from_csv(&t, &m));
    assert_eq!(t, t2);
    assert_eq!(m, m2);
}

#[test]
fn header_matches_golden_file() {
    let (t, m) = to_csv(&short_run());
    let preamble: String = t
        .lines()
        .take_while(|l| l.starts_with('#'))
        .chain(t.lines().skip_while(|l| l.starts_with('#')).take(1))
        .map(|l| format!("{l}\n"))
        .collect();
    assert_eq!(preamble, include_str!("golden/trace_preamble.txt"));
    assert!(m.starts_with("step,pair_alpha,i,j,eta\n"));
    let columns = TRACE_HEADER.split(',').count();
    assert_eq!(columns, 14);
    for line in t.lines().filter(|l| !l.starts_with('#')) {
        assert_eq!(line.split(',').count(), columns);
    }
    // One row per robot per step, initial state included.
    assert_eq!(
        t.lines().filter(|l| !l.starts_with('#')).count(),
        1 + 3 * 201
    );
}

#[test]
fn save_and_load_through_files() {
    let trace = short_run();
    let dir = tempfile::tempdir().unwrap();
    save_trace(&trace, dir.path()).unwrap();
    let back = load_trace(&dir.path().join("trace.csv")).unwrap();
    assert_eq!(
        metrics_csv(&MetricsReport::from_trace(&trace).unwrap()),
        metrics_csv(&MetricsReport::from_trace(&back).unwrap())
    );
}

#[test]
fn malformed_traces_are_rejected() {
    let (t, _) = to_csv(&short_run());
    let expect_err = |text: &str| match read_trace_csv(Cursor::new(text)) {
        Err(SoattError::Trace { .. }) => {}
        other => panic!("expected a trace error, got {other:?}"),
    };
    expect_err("");
    expect_err("not,a,trace\n");
    expect_err(&t.replacen("# dt = ", "# dtx = ", 1));
    // Drop one data row from the middle.
    let lines: Vec<&str> = t.lines().collect();
    let mut missing = lines.clone();
    missing.remove(lines.len() / 2);
    expect_err(&missing.join("\n"));
    // Non-numeric field.
    expect_err(&t.replacen(",0,0\n", ",0,x\n", 1));
    // Truncated final step.
    expect_err(&lines[..lines.len() - 1].join("\n"));
}

#[test]
fn metrics_file_is_key_value() {
    let report = MetricsReport::from_trace(&short_run()).unwrap();
    let text = metrics_csv(&report);
    assert!(text.starts_with("key,value\n"));
    for line in text.lines() {
        assert_eq!(line.split(',').count(), 2, "{line}");
    }
    assert!(text.contains("\nrobots,3\n"));
}
