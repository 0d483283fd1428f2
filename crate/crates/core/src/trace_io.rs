//! CSV export and re-import of simulation traces.
//!
//! `trace.csv` holds one row per (step, robot); step 0 is the initial state.
//! Run-level values (dt, thresholds, radii, obstacles, feasibility events)
//! sit in leading `# key = value` lines. Multipliers go to a companion file
//! with one row per (step, pair). Floats use Rust's shortest round-trip
//! formatting, so a re-read trace reproduces every metric bit for bit.

use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::path::Path;

use nalgebra::Vector2;

use crate::error::{Result, SoattError};
use crate::kinematics::RobotState;
use crate::metrics::MetricsReport;
use crate::simulator::{slot_pair, FeasibilityEvent, Obstacle, SimTrace, TraceStep};
use crate::trajectory::ReferencePoint;

pub const TRACE_HEADER: &str =
    "step,time,robot_id,x,y,theta,u1,u2,udot1,udot2,ref_x,ref_y,zeta_active,ca_active";
pub const MULTIPLIER_HEADER: &str = "step,pair_alpha,i,j,eta";
const FORMAT_TAG: &str = "soatt-trace 1";

pub const TRACE_FILE: &str = "trace.csv";
pub const MULTIPLIER_FILE: &str = "multipliers.csv";
pub const METRICS_FILE: &str = "metrics.csv";

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> SoattError + '_ {
    move |e| SoattError::io(path, e)
}

fn row(
    out: &mut String,
    step: usize,
    time: f64,
    robot: usize,
    s: &RobotState,
    r: &ReferencePoint,
    zeta: bool,
    ca: bool,
) {
    let _ = writeln!(
        out,
        "{step},{time:e},{robot},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{},{}",
        s.position.x,
        s.position.y,
        s.heading,
        s.wheel_velocities.x,
        s.wheel_velocities.y,
        s.wheel_accelerations.x,
        s.wheel_accelerations.y,
        r.position.x,
        r.position.y,
        zeta as u8,
        ca as u8,
    );
}

pub fn write_trace_csv<W: Write>(trace: &SimTrace, mut w: W) -> std::io::Result<()> {
    let mut out = String::new();
    let _ = writeln!(out, "# {FORMAT_TAG}");
    let _ = writeln!(out, "# dt = {:e}", trace.dt);
    let _ = writeln!(out, "# d_safe = {:e}", trace.d_safe);
    let radii: Vec<String> = trace.robot_radii.iter().map(|r| format!("{r:e}")).collect();
    let _ = writeln!(out, "# robot_radius = {}", radii.join(" "));
    for o in &trace.obstacles {
        let _ = writeln!(
            out,
            "# obstacle = {:e} {:e} {:e}",
            o.center[0], o.center[1], o.radius
        );
    }
    for e in &trace.feasibility_events {
        let _ = writeln!(out, "# feasibility = {} {:e}", e.step, e.max_multiplier);
    }
    let _ = writeln!(out, "{TRACE_HEADER}");
    for (k, (s, r)) in trace
        .initial
        .iter()
        .zip(&trace.initial_references)
        .enumerate()
    {
        row(&mut out, 0, 0.0, k, s, r, false, false);
    }
    w.write_all(out.as_bytes())?;
    for step in &trace.steps {
        out.clear();
        for k in 0..trace.robot_count {
            row(
                &mut out,
                step.step,
                step.time,
                k,
                &step.states[k],
                &step.references[k],
                step.zeta_active[k],
                step.ca_active[k],
            );
        }
        w.write_all(out.as_bytes())?;
    }
    w.flush()
}

pub fn write_multipliers_csv<W: Write>(trace: &SimTrace, mut w: W) -> std::io::Result<()> {
    writeln!(w, "{MULTIPLIER_HEADER}")?;
    let entities = trace.entity_count();
    for step in &trace.steps {
        for &(slot, eta) in &step.multipliers {
            let (i, j) = slot_pair(slot, entities);
            writeln!(w, "{},{},{i},{j},{eta:e}", step.step, slot + 1)?;
        }
    }
    w.flush()
}

fn malformed(line: usize, message: impl Into<String>) -> SoattError {
    SoattError::Trace {
        line,
        message: message.into(),
    }
}

fn parse_f64(field: &str, line: usize, name: &str) -> Result<f64> {
    field
        .trim()
        .parse()
        .map_err(|_| malformed(line, format!("{name}: cannot parse {field:?}")))
}

fn parse_usize(field: &str, line: usize, name: &str) -> Result<usize> {
    field
        .trim()
        .parse()
        .map_err(|_| malformed(line, format!("{name}: cannot parse {field:?}")))
}

fn parse_flag(field: &str, line: usize, name: &str) -> Result<bool> {
    match field.trim() {
        "0" => Ok(false),
        "1" => Ok(true),
        other => Err(malformed(
            line,
            format!("{name}: expected 0 or 1, got {other:?}"),
        )),
    }
}

/// Parses `trace.csv`; multipliers are left empty.
pub fn read_trace_csv<R: BufRead>(reader: R) -> Result<SimTrace> {
    let mut dt = None;
    let mut d_safe = None;
    let mut radii: Option<Vec<f64>> = None;
    let mut obstacles = Vec::new();
    let mut feasibility_events = Vec::new();
    let mut header_seen = false;

    let mut initial = Vec::new();
    let mut initial_references = Vec::new();
    let mut steps: Vec<TraceStep> = Vec::new();

    for (index, text) in reader.lines().enumerate() {
        let line = index + 1;
        let text = text.map_err(|e| malformed(line, e.to_string()))?;
        if text.trim().is_empty() {
            continue;
        }
        if let Some(meta) = text.strip_prefix('#') {
            let meta = meta.trim();
            if meta == FORMAT_TAG {
                continue;
            }
            let (key, value) = meta
                .split_once('=')
                .ok_or_else(|| malformed(line, format!("unrecognized comment {meta:?}")))?;
            let values: Vec<&str> = value.split_whitespace().collect();
            match key.trim() {
                "dt" => dt = Some(parse_f64(value, line, "dt")?),
                "d_safe" => d_safe = Some(parse_f64(value, line, "d_safe")?),
                "robot_radius" => {
                    radii = Some(
                        values
                            .iter()
                            .map(|v| parse_f64(v, line, "robot_radius"))
                            .collect::<Result<_>>()?,
                    )
                }
                "obstacle" => {
                    if values.len() != 3 {
                        return Err(malformed(line, "obstacle needs `x y radius`"));
                    }
                    obstacles.push(Obstacle {
                        center: [
                            parse_f64(values[0], line, "obstacle x")?,
                            parse_f64(values[1], line, "obstacle y")?,
                        ],
                        radius: parse_f64(values[2], line, "obstacle radius")?,
                    });
                }
                "feasibility" => {
                    if values.len() != 2 {
                        return Err(malformed(line, "feasibility needs `step max_multiplier`"));
                    }
                    feasibility_events.push(FeasibilityEvent {
                        step: parse_usize(values[0], line, "feasibility step")?,
                        max_multiplier: parse_f64(values[1], line, "feasibility multiplier")?,
                    });
                }
                other => return Err(malformed(line, format!("unknown metadata key {other:?}"))),
            }
            continue;
        }
        if !header_seen {
            if text.trim() != TRACE_HEADER {
                return Err(malformed(line, format!("expected header {TRACE_HEADER:?}")));
            }
            header_seen = true;
            continue;
        }

        let radii = radii
            .as_ref()
            .ok_or_else(|| malformed(line, "missing `# robot_radius` before data"))?;
        let n = radii.len();
        let fields: Vec<&str> = text.split(',').collect();
        if fields.len() != 14 {
            return Err(malformed(
                line,
                format!("expected 14 columns, got {}", fields.len()),
            ));
        }
        let step = parse_usize(fields[0], line, "step")?;
        let time = parse_f64(fields[1], line, "time")?;
        let robot = parse_usize(fields[2], line, "robot_id")?;
        let mut v = [0.0; 9];
        for (slot, (field, name)) in v.iter_mut().zip(fields[3..12].iter().zip([
            "x", "y", "theta", "u1", "u2", "udot1", "udot2", "ref_x", "ref_y",
        ])) {
            *slot = parse_f64(field, line, name)?;
        }
        let zeta = parse_flag(fields[12], line, "zeta_active")?;
        let ca = parse_flag(fields[13], line, "ca_active")?;
        let state = RobotState {
            position: Vector2::new(v[0], v[1]),
            heading: v[2],
            wheel_velocities: Vector2::new(v[3], v[4]),
            wheel_accelerations: Vector2::new(v[5], v[6]),
        };
        let reference = ReferencePoint::stationary(Vector2::new(v[7], v[8]));

        if step == 0 {
            if robot != initial.len() || robot >= n {
                return Err(malformed(
                    line,
                    format!("unexpected robot_id {robot} in step 0"),
                ));
            }
            initial.push(state);
            initial_references.push(reference);
            continue;
        }
        let expected_step = match steps.last() {
            Some(last) if last.states.len() < n => last.step,
            Some(last) => last.step + 1,
            None => 1,
        };
        if step != expected_step {
            return Err(malformed(
                line,
                format!("expected step {expected_step}, got {step}"),
            ));
        }
        if robot == 0 {
            if initial.len() != n {
                return Err(malformed(line, "step 0 is incomplete"));
            }
            steps.push(TraceStep {
                step,
                time,
                states: Vec::with_capacity(n),
                references: Vec::with_capacity(n),
                multipliers: Vec::new(),
                zeta_active: Vec::with_capacity(n),
                ca_active: Vec::with_capacity(n),
            });
        }
        let current = steps
            .last_mut()
            .expect("a step row for robot 0 opened this step");
        if robot != current.states.len() {
            return Err(malformed(
                line,
                format!("unexpected robot_id {robot} in step {step}"),
            ));
        }
        current.states.push(state);
        current.references.push(reference);
        current.zeta_active.push(zeta);
        current.ca_active.push(ca);
    }

    if !header_seen {
        return Err(malformed(0, "no header row"));
    }
    let robot_radii = radii.ok_or_else(|| malformed(0, "missing `# robot_radius`"))?;
    let robot_count = robot_radii.len();
    if robot_count == 0 || initial.len() != robot_count {
        return Err(malformed(0, "trace has no complete initial state"));
    }
    if steps.last().is_some_and(|s| s.states.len() != robot_count) {
        return Err(malformed(0, "last step is incomplete"));
    }
    Ok(SimTrace {
        dt: dt.ok_or_else(|| malformed(0, "missing `# dt`"))?,
        robot_count,
        obstacles,
        d_safe: d_safe.ok_or_else(|| malformed(0, "missing `# d_safe`"))?,
        robot_radii,
        initial,
        initial_references,
        steps,
        feasibility_events,
    })
}

/// Attaches the rows of a multipliers file to `trace`.
pub fn read_multipliers_csv<R: BufRead>(reader: R, trace: &mut SimTrace) -> Result<()> {
    let mut lines = reader.lines().enumerate();
    match lines.next() {
        Some((_, Ok(h))) if h.trim() == MULTIPLIER_HEADER => {}
        _ => {
            return Err(malformed(
                1,
                format!("expected header {MULTIPLIER_HEADER:?}"),
            ))
        }
    }
    for step in &mut trace.steps {
        step.multipliers.clear();
    }
    for (index, text) in lines {
        let line = index + 1;
        let text = text.map_err(|e| malformed(line, e.to_string()))?;
        if text.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = text.split(',').collect();
        if fields.len() != 5 {
            return Err(malformed(
                line,
                format!("expected 5 columns, got {}", fields.len()),
            ));
        }
        let step = parse_usize(fields[0], line, "step")?;
        let alpha = parse_usize(fields[1], line, "pair_alpha")?;
        let eta = parse_f64(fields[4], line, "eta")?;
        if alpha == 0 {
            return Err(malformed(line, "pair_alpha starts at 1"));
        }
        let target = step
            .checked_sub(1)
            .and_then(|k| trace.steps.get_mut(k))
            .ok_or_else(|| malformed(line, format!("step {step} is not in the trace")))?;
        target.multipliers.push((alpha - 1, eta));
    }
    Ok(())
}

pub fn metrics_csv(report: &MetricsReport) -> String {
    let mut out = String::from("key,value\n");
    let mut put = |key: &str, value: String| {
        let _ = writeln!(out, "{key},{value}");
    };
    put("robots", report.robots.len().to_string());
    put("rmse", format!("{:e}", report.tracking.rmse));
    put("mae", format!("{:e}", report.tracking.mae));
    put("std_dev", format!("{:e}", report.tracking.std_dev));
    put(
        "mean_intervention_time",
        format!("{:e}", report.intervention.mean),
    );
    put("min_distance", format!("{:e}", report.safety.min_distance));
    put("violations", report.safety.violations.to_string());
    put(
        "first_violation_step",
        report
            .safety
            .first_violation_step
            .map_or(String::new(), |s| s.to_string()),
    );
    put(
        "min_obstacle_clearance",
        format!("{:e}", report.safety.min_obstacle_clearance),
    );
    put("max_final_error", format!("{:e}", report.max_final_error()));
    put("deadlock_events", report.deadlock_events.len().to_string());
    put("feasibility_events", report.feasibility_events.to_string());
    for (k, robot) in report.robots.iter().enumerate() {
        put(
            &format!("robot{k}_rmse"),
            format!("{:e}", robot.tracking.rmse),
        );
        put(
            &format!("robot{k}_intervention_time"),
            format!("{:e}", robot.intervention_time),
        );
        put(
            &format!("robot{k}_final_error"),
            format!("{:e}", robot.final_error),
        );
    }
    out
}

/// Writes `trace.csv` and `multipliers.csv` into `dir`.
pub fn save_trace(trace: &SimTrace, dir: &Path) -> Result<()> {
    let path = dir.join(TRACE_FILE);
    let file = std::fs::File::create(&path).map_err(io_err(&path))?;
    write_trace_csv(trace, std::io::BufWriter::new(file)).map_err(io_err(&path))?;
    let path = dir.join(MULTIPLIER_FILE);
    let file = std::fs::File::create(&path).map_err(io_err(&path))?;
    write_multipliers_csv(trace, std::io::BufWriter::new(file)).map_err(io_err(&path))
}

/// Reads a trace file, plus `multipliers.csv` next to it when present.
pub fn load_trace(path: &Path) -> Result<SimTrace> {
    let file = std::fs::File::open(path).map_err(io_err(path))?;
    let mut trace = read_trace_csv(std::io::BufReader::new(file))?;
    let companion = path.with_file_name(MULTIPLIER_FILE);
    if companion.exists() {
        let file = std::fs::File::open(&companion).map_err(io_err(&companion))?;
        read_multipliers_csv(std::io::BufReader::new(file), &mut trace)?;
    }
    Ok(trace)
}
