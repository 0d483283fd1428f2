//! SVG rendering of trajectories: desired paths dashed, actual paths solid,
//! obstacles as gray disks, starts as circles and ends as squares.

use std::fmt::Write as _;

use nalgebra::Vector2;

use crate::error::{Result, SoattError};
use crate::simulator::SimTrace;

const CANVAS: f64 = 800.0;
const PAD: f64 = 30.0;
/// Polylines are thinned to at most this many vertices per robot.
const MAX_VERTICES: usize = 1500;

struct Frame {
    min: Vector2<f64>,
    scale: f64,
    height: f64,
}

impl Frame {
    fn map(&self, p: &Vector2<f64>) -> (f64, f64) {
        let x = PAD + (p.x - self.min.x) * self.scale;
        let y = self.height - PAD - (p.y - self.min.y) * self.scale;
        (x, y)
    }
}

fn color(robot: usize, count: usize) -> String {
    let hue = 360.0 * robot as f64 / count.max(1) as f64;
    format!("hsl({hue:.0},70%,42%)")
}

fn polyline(out: &mut String, frame: &Frame, points: &[Vector2<f64>], stroke: &str, extra: &str) {
    let stride = points.len().div_ceil(MAX_VERTICES).max(1);
    let mut coords = String::new();
    let last = points.len() - 1;
    for (k, p) in points.iter().enumerate() {
        if k % stride == 0 || k == last {
            let (x, y) = frame.map(p);
            let _ = write!(coords, "{x:.2},{y:.2} ");
        }
    }
    let _ = writeln!(
        out,
        r#"<polyline points="{}" fill="none" stroke="{stroke}" stroke-width="1.5"{extra}/>"#,
        coords.trim_end()
    );
}

pub fn render_svg(trace: &SimTrace) -> Result<String> {
    if trace.steps.is_empty() || trace.robot_count == 0 {
        return Err(SoattError::Trace {
            line: 0,
            message: "trace has no steps to plot".into(),
        });
    }
    let n = trace.robot_count;
    let mut actual: Vec<Vec<Vector2<f64>>> =
        trace.initial.iter().map(|s| vec![s.position]).collect();
    let mut desired: Vec<Vec<Vector2<f64>>> = trace
        .initial_references
        .iter()
        .map(|r| vec![r.position])
        .collect();
    for step in &trace.steps {
        for k in 0..n {
            actual[k].push(step.states[k].position);
            desired[k].push(step.references[k].position);
        }
    }

    let mut min = Vector2::repeat(f64::INFINITY);
    let mut max = Vector2::repeat(f64::NEG_INFINITY);
    let mut extend = |p: Vector2<f64>, r: f64| {
        min = min.inf(&(p - Vector2::repeat(r)));
        max = max.sup(&(p + Vector2::repeat(r)));
    };
    for path in actual.iter().chain(&desired) {
        for p in path {
            extend(*p, 0.0);
        }
    }
    for o in &trace.obstacles {
        extend(Vector2::from(o.center), o.radius);
    }
    if !(min.iter().chain(max.iter()).all(|v| v.is_finite())) {
        return Err(SoattError::NonFinite {
            what: "trace positions".into(),
        });
    }
    let span = (max - min).max().max(1e-6);
    let scale = (CANVAS - 2.0 * PAD) / span;
    let width = (max.x - min.x) * scale + 2.0 * PAD;
    let height = (max.y - min.y) * scale + 2.0 * PAD;
    let frame = Frame { min, scale, height };

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.2} {height:.2}">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for o in &trace.obstacles {
        let (x, y) = frame.map(&Vector2::from(o.center));
        let _ = writeln!(
            out,
            r##"<circle cx="{x:.2}" cy="{y:.2}" r="{:.2}" fill="#bbbbbb" stroke="#555555"/>"##,
            o.radius * scale
        );
    }
    for k in 0..n {
        let c = color(k, n);
        let _ = writeln!(out, r#"<g id="robot{k}">"#);
        polyline(
            &mut out,
            &frame,
            &desired[k],
            &c,
            r#" stroke-dasharray="6,4" opacity="0.6""#,
        );
        polyline(&mut out, &frame, &actual[k], &c, "");
        let (sx, sy) = frame.map(&actual[k][0]);
        let _ = writeln!(
            out,
            r#"<circle cx="{sx:.2}" cy="{sy:.2}" r="4" fill="{c}"/>"#
        );
        let (ex, ey) = frame.map(actual[k].last().expect("paths are nonempty"));
        let _ = writeln!(
            out,
            r#"<rect x="{:.2}" y="{:.2}" width="8" height="8" fill="none" stroke="{c}" stroke-width="2"/>"#,
            ex - 4.0,
            ey - 4.0
        );
        let _ = writeln!(out, "</g>");
    }
    out.push_str("</svg>\n");
    Ok(out)
}
