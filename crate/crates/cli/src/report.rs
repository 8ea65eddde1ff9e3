//! Trace CSVs, the summary JSON and the gap-versus-iteration plot.

use crate::experiment::Summary;
use aggpolicy::RunTrace;
use anyhow::{ensure, Context, Result};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

/// Write `<prefix>_<algo>.csv` per trace, `<prefix>_summary.json` and, with
/// `emit_plots`, `<prefix>.svg`. Returns the written paths.
pub fn emit_report(
    prefix: &str,
    traces: &[RunTrace],
    summary: &Summary,
    out_dir: &Path,
    emit_plots: bool,
    dump_policies: bool,
) -> Result<Vec<PathBuf>> {
    ensure!(!traces.is_empty(), "refusing to write a report without traces");
    fs::create_dir_all(out_dir).with_context(|| format!("creating output directory {}", out_dir.display()))?;
    let mut written = Vec::new();
    for trace in traces {
        let path = out_dir.join(format!("{prefix}_{}.csv", trace.algo));
        write(&path, &trace.to_csv()?)?;
        written.push(path);
        if dump_policies {
            let path = out_dir.join(format!("{prefix}_{}_policies.json", trace.algo));
            write(&path, &trace.policies_json()?)?;
            written.push(path);
        }
    }
    let path = out_dir.join(format!("{prefix}_summary.json"));
    write(&path, &(serde_json::to_string_pretty(summary)? + "\n"))?;
    written.push(path);
    if emit_plots {
        let path = out_dir.join(format!("{prefix}.svg"));
        let lines = [("2 eps", summary.two_eps_line), ("API lower bound", summary.api_lower_bound_line)];
        write(&path, &gap_plot(prefix, traces, &lines))?;
        written.push(path);
    }
    Ok(written)
}

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 440.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 55.0;
const COLORS: [&str; 5] = ["#d62728", "#1f77b4", "#2ca02c", "#9467bd", "#ff7f0e"];

/// Round `x` up to 1, 2 or 5 times a power of ten.
fn nice_ceil(x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    let p = 10f64.powf(x.log10().floor());
    [1.0, 2.0, 5.0, 10.0].iter().map(|m| m * p).find(|&v| v >= x).unwrap_or(10.0 * p)
}

fn label(v: f64) -> String {
    if v == v.trunc() && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v:.3}")
    }
}

/// Optimality gap against iteration for every trace, with horizontal
/// reference lines. Self-contained SVG with no scripts or external fonts.
pub fn gap_plot(title: &str, traces: &[RunTrace], lines: &[(&str, f64)]) -> String {
    let x_max = traces.iter().flat_map(|t| t.records.last()).map(|r| r.iter).max().unwrap_or(1).max(2) as f64;
    let y_top = traces
        .iter()
        .flat_map(|t| t.records.iter().map(|r| r.opt_gap))
        .chain(lines.iter().map(|l| l.1))
        .filter(|v| v.is_finite())
        .fold(0.0, f64::max);
    let (x_hi, y_hi) = (nice_ceil(x_max), nice_ceil(y_top * 1.05));
    let (pw, ph) = (WIDTH - LEFT - RIGHT, HEIGHT - TOP - BOTTOM);
    let px = |x: f64| LEFT + (x - 1.0).max(0.0) / (x_hi - 1.0) * pw;
    let py = |y: f64| TOP + ph - y.clamp(0.0, y_hi) / y_hi * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{title}: optimality gap by iteration</text>"#, LEFT + pw / 2.0);
    let _ = writeln!(s, r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#);
    for i in 0..=5 {
        let f = i as f64 / 5.0;
        let (xv, yv) = (1.0 + f * (x_hi - 1.0), f * y_hi);
        let (x, y) = (px(xv), py(yv));
        let _ = writeln!(s, r##"<line x1="{x:.2}" y1="{}" x2="{x:.2}" y2="{}" stroke="#ddd"/>"##, TOP, TOP + ph);
        let _ = writeln!(s, r#"<text x="{x:.2}" y="{}" text-anchor="middle">{}</text>"#, TOP + ph + 16.0, label(xv.round()));
        let _ = writeln!(s, r##"<line x1="{LEFT}" y1="{y:.2}" x2="{}" y2="{y:.2}" stroke="#ddd"/>"##, LEFT + pw);
        let _ = writeln!(s, r#"<text x="{}" y="{:.2}" text-anchor="end">{}</text>"#, LEFT - 6.0, y + 4.0, label(yv));
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">iteration</text>"#, LEFT + pw / 2.0, HEIGHT - 14.0);
    let _ = writeln!(
        s,
        r#"<text x="18" y="{0}" text-anchor="middle" transform="rotate(-90 18 {0})">J(pi*) - J(pi_t)</text>"#,
        TOP + ph / 2.0
    );
    for (name, value) in lines {
        let y = py(*value);
        let _ = writeln!(s, r##"<line x1="{LEFT}" y1="{y:.2}" x2="{}" y2="{y:.2}" stroke="#555" stroke-dasharray="6 4"/>"##, LEFT + pw);
        let _ = writeln!(s, r#"<text x="{}" y="{:.2}">{name} = {}</text>"#, LEFT + pw + 6.0, y + 4.0, label(*value));
    }
    for (k, trace) in traces.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let points: Vec<String> = trace.records.iter().map(|r| format!("{:.2},{:.2}", px(r.iter as f64), py(r.opt_gap))).collect();
        let _ = writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, points.join(" "));
        let ly = TOP + 16.0 + 18.0 * k as f64;
        let _ = writeln!(s, r#"<line x1="{0}" y1="{ly}" x2="{1}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#, LEFT + pw + 6.0, LEFT + pw + 26.0);
        let _ = writeln!(s, r#"<text x="{}" y="{}">{}</text>"#, LEFT + pw + 30.0, ly + 4.0, trace.algo);
    }
    s.push_str("</svg>\n");
    s
}
