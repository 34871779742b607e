//! Trace export: CSV tables and SVG line charts.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use super::{SimError, SimTrace};

/// Writes the trace as CSV with the stable column order
/// `t, x_i, v_i, a_i, ex_i, ev_i, ea_i, g_i, u_i` per vehicle `i` (vehicle
/// id order). Samples before a merged vehicle joined are `NaN`.
pub fn write_trace_csv(trace: &SimTrace, path: &Path) -> Result<(), SimError> {
    let mut out = String::new();
    out.push('t');
    for v in &trace.vehicles {
        let i = v.id;
        write!(
            out,
            ",x_{i},v_{i},a_{i},ex_{i},ev_{i},ea_{i},g_{i},u_{i}"
        )
        .unwrap();
    }
    out.push('\n');
    for k in 0..trace.time.len() {
        write!(out, "{}", trace.time[k]).unwrap();
        for v in &trace.vehicles {
            write!(
                out,
                ",{},{},{},{},{},{},{},{}",
                v.position[k],
                v.velocity[k],
                v.acceleration[k],
                v.error_location[k],
                v.error_velocity[k],
                v.error_acceleration[k],
                v.virtual_input[k],
                v.actuator_input[k]
            )
            .unwrap();
        }
        out.push('\n');
    }
    let mut f = std::fs::File::create(path)
        .map_err(|e| SimError::InvalidScenario(format!("create {path:?}: {e}")))?;
    f.write_all(out.as_bytes())
        .map_err(|e| SimError::InvalidScenario(format!("write {path:?}: {e}")))
}

struct Panel<'a> {
    title: &'a str,
    /// (label, samples); NaN samples break the polyline.
    series: Vec<(String, &'a [f64])>,
}

fn render_panel(time: &[f64], panel: &Panel<'_>) -> String {
    const W: f64 = 860.0;
    const H: f64 = 480.0;
    const ML: f64 = 60.0;
    const MR: f64 = 20.0;
    const MT: f64 = 40.0;
    const MB: f64 = 40.0;
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for (_, s) in &panel.series {
        for v in s.iter().filter(|v| v.is_finite()) {
            lo = lo.min(*v);
            hi = hi.max(*v);
        }
    }
    if !lo.is_finite() || !hi.is_finite() {
        lo = 0.0;
        hi = 1.0;
    }
    if hi - lo < 1e-9 {
        hi = lo + 1.0;
    }
    let t0 = *time.first().unwrap_or(&0.0);
    let t1 = *time.last().unwrap_or(&1.0);
    let xmap = |t: f64| ML + (t - t0) / (t1 - t0).max(1e-12) * (W - ML - MR);
    let ymap = |v: f64| H - MB - (v - lo) / (hi - lo) * (H - MT - MB);

    let palette = [
        "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
        "#bcbd22", "#17becf", "#393b79", "#637939",
    ];
    let mut svg = String::new();
    write!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    )
    .unwrap();
    write!(
        svg,
        r#"<rect width="{W}" height="{H}" fill="white"/><text x="{}" y="20" font-size="15">{}</text>"#,
        ML,
        panel.title
    )
    .unwrap();
    // Axes with min/max labels.
    write!(
        svg,
        r#"<line x1="{ML}" y1="{0}" x2="{1}" y2="{0}" stroke="black"/><line x1="{ML}" y1="{MT}" x2="{ML}" y2="{0}" stroke="black"/>"#,
        H - MB,
        W - MR
    )
    .unwrap();
    write!(
        svg,
        r#"<text x="{ML}" y="{0}">{t0:.1}</text><text x="{1}" y="{0}">{t1:.1}</text>"#,
        H - MB + 16.0,
        W - MR - 30.0
    )
    .unwrap();
    write!(
        svg,
        r#"<text x="4" y="{0}">{lo:.2}</text><text x="4" y="{MT}">{hi:.2}</text>"#,
        H - MB
    )
    .unwrap();
    for (idx, (label, samples)) in panel.series.iter().enumerate() {
        let color = palette[idx % palette.len()];
        let mut d = String::new();
        let mut pen_down = false;
        for (k, v) in samples.iter().enumerate() {
            if v.is_finite() {
                let cmd = if pen_down { 'L' } else { 'M' };
                write!(d, "{cmd}{:.2},{:.2} ", xmap(time[k]), ymap(*v)).unwrap();
                pen_down = true;
            } else {
                pen_down = false;
            }
        }
        write!(
            svg,
            r#"<path d="{d}" fill="none" stroke="{color}" stroke-width="1.2"/>"#
        )
        .unwrap();
        write!(
            svg,
            r#"<text x="{}" y="{}" fill="{color}">{label}</text>"#,
            W - MR - 70.0,
            MT + 14.0 * idx as f64
        )
        .unwrap();
    }
    svg.push_str("</svg>");
    svg
}

/// Writes position, velocity, and location-error panels as SVG files
/// (`position.svg`, `velocity.svg`, `errors.svg`) into `dir`.
pub fn write_trace_svg(trace: &SimTrace, dir: &Path) -> Result<(), SimError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| SimError::InvalidScenario(format!("create {dir:?}: {e}")))?;
    let mut position = Panel {
        title: "positions",
        series: vec![("leader".to_string(), trace.leader_position.as_slice())],
    };
    let mut velocity = Panel {
        title: "velocities",
        series: vec![("leader".to_string(), trace.leader_velocity.as_slice())],
    };
    let mut errors = Panel {
        title: "location errors",
        series: Vec::new(),
    };
    for v in &trace.vehicles {
        position
            .series
            .push((format!("v{}", v.id), v.position.as_slice()));
        velocity
            .series
            .push((format!("v{}", v.id), v.velocity.as_slice()));
        errors
            .series
            .push((format!("v{}", v.id), v.error_location.as_slice()));
    }
    for (name, panel) in [
        ("position.svg", &position),
        ("velocity.svg", &velocity),
        ("errors.svg", &errors),
    ] {
        let svg = render_panel(&trace.time, panel);
        std::fs::write(dir.join(name), svg)
            .map_err(|e| SimError::InvalidScenario(format!("write {name}: {e}")))?;
    }
    Ok(())
}
