//! Output formats: CSV tables, JSON event/orbit reports, hand-rolled SVG
//! plots and the run manifest. All files go through an atomic tmp+rename
//! write so a crashed run never leaves a truncated artifact behind.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::atlas::{BoundaryTypeCurve, CellClass, StabilityGrid};
use crate::continuation::{Branch, EventKind, System};
use crate::error::Result;
use crate::integrate::{OrbitSummary, Trajectory};
use crate::model::{dynamic_rhs, CellRow, ParameterSet};
use crate::numerics::NumericsConfig;

/// Writes `bytes` to `path` via a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("out")
    ));
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

fn fmt_f64(v: f64) -> String {
    // Shortest representation that round-trips.
    format!("{v}")
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

/// `t,p_0..p_{n+1},a_1..a_n` — one row per stored sample.
pub fn trajectory_csv(traj: &Trajectory) -> String {
    let n = traj.states[0].a.len();
    let mut out = String::from("t");
    for i in 0..n + 2 {
        let _ = write!(out, ",p_{i}");
    }
    for i in 1..=n {
        let _ = write!(out, ",a_{i}");
    }
    out.push('\n');
    for (t, s) in traj.times.iter().zip(&traj.states) {
        out.push_str(&fmt_f64(*t));
        for v in s.p.iter().chain(s.a.iter()) {
            out.push(',');
            out.push_str(&fmt_f64(*v));
        }
        out.push('\n');
    }
    out
}

/// `t,a,dadt` for one probe cell (1-based), for phase-plane plots.
pub fn phase_csv(
    traj: &Trajectory,
    row: &CellRow,
    params: &ParameterSet,
    probe: usize,
) -> Result<String> {
    assert!(probe >= 1 && probe <= row.n);
    let mut out = String::from("t,a,dadt\n");
    for (t, s) in traj.times.iter().zip(&traj.states) {
        let rhs = dynamic_rhs(s, row, params)?;
        let _ = writeln!(
            out,
            "{},{},{}",
            fmt_f64(*t),
            fmt_f64(s.a[probe - 1]),
            fmt_f64(rhs.a[probe - 1])
        );
    }
    Ok(out)
}

/// `index,lambda,a_probe,stable,unstable_count,dlambda_ds` per branch point.
pub fn branch_csv(branch: &Branch, probe: usize) -> String {
    let mut out = String::from("index,lambda,a_probe,stable,unstable_count,dlambda_ds\n");
    for (i, p) in branch.points.iter().enumerate() {
        let n = p.u.len() / 2;
        let probe = probe.clamp(1, n);
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            i,
            fmt_f64(p.lambda),
            fmt_f64(p.u[n + probe - 1]),
            u8::from(p.stability.is_stable()),
            p.test_values.unstable_count,
            fmt_f64(p.test_values.dlambda_ds),
        );
    }
    out
}

/// First row: empty corner then the x-axis values; each following row: the
/// y value then the class codes (0 unstable, 1 stable, 9 invalid).
pub fn grid_csv(grid: &StabilityGrid) -> String {
    let xs = grid.x.values();
    let ys = grid.y.values();
    let mut out = String::new();
    out.push_str(&format!("{}\\{}", grid.y.param.name(), grid.x.param.name()));
    for x in &xs {
        out.push(',');
        out.push_str(&fmt_f64(*x));
    }
    out.push('\n');
    for (iy, y) in ys.iter().enumerate() {
        out.push_str(&fmt_f64(*y));
        for ix in 0..xs.len() {
            let _ = write!(out, ",{}", grid.cell(ix, iy).code());
        }
        out.push('\n');
    }
    out
}

pub fn boundary_csv(curve: &BoundaryTypeCurve) -> String {
    let mut out = String::from("x,y,kind\n");
    for s in curve {
        let kind = match s.kind {
            EventKind::Hopf => "hopf",
            EventKind::BranchPoint => "branch_point",
            EventKind::LimitPoint => "limit_point",
        };
        let _ = writeln!(out, "{},{},{}", fmt_f64(s.x), fmt_f64(s.y), kind);
    }
    out
}

// ---------------------------------------------------------------------------
// JSON
// ---------------------------------------------------------------------------

fn kind_str(kind: EventKind) -> &'static str {
    match kind {
        EventKind::BranchPoint => "branch_point",
        EventKind::LimitPoint => "limit_point",
        EventKind::Hopf => "hopf",
    }
}

/// Full event report: kind, location, oscillation frequency for Hopf points,
/// the residual norm at the refined location and the state itself.
pub fn events_json(branch: &Branch, system: &System, cfg: &NumericsConfig) -> Result<Value> {
    let _ = cfg;
    let mut items = Vec::new();
    for e in &branch.events {
        let n = e.u.len() / 2;
        let res = system.residual(&e.u, e.lambda)?.norm();
        items.push(json!({
            "kind": kind_str(e.kind),
            "parameter": branch.param.name(),
            "lambda": e.lambda,
            "beta": e.beta,
            "bracket_width": e.bracket_width,
            "unresolved": e.unresolved,
            "residual_norm": res,
            "state": {
                "n": n,
                "p": e.u.as_slice()[..n].to_vec(),
                "a": e.u.as_slice()[n..].to_vec(),
            },
        }));
    }
    Ok(json!({ "events": items }))
}

pub fn orbit_json(orbit: &OrbitSummary) -> Result<String> {
    Ok(serde_json::to_string_pretty(orbit)?)
}

// ---------------------------------------------------------------------------
// SVG
// ---------------------------------------------------------------------------

const SVG_W: f64 = 720.0;
const SVG_H: f64 = 480.0;
const MARGIN: f64 = 50.0;

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn from_ranges(xs: impl Iterator<Item = f64>, ys: impl Iterator<Item = f64>) -> Frame {
        let mut x0 = f64::INFINITY;
        let mut x1 = f64::NEG_INFINITY;
        for v in xs {
            x0 = x0.min(v);
            x1 = x1.max(v);
        }
        let mut y0 = f64::INFINITY;
        let mut y1 = f64::NEG_INFINITY;
        for v in ys {
            y0 = y0.min(v);
            y1 = y1.max(v);
        }
        // Guard degenerate ranges so the mapping stays finite.
        if !(x1 > x0) {
            x0 -= 0.5;
            x1 += 0.5;
        }
        if !(y1 > y0) {
            y0 -= 0.5;
            y1 += 0.5;
        }
        Frame { x0, x1, y0, y1 }
    }

    fn px(&self, x: f64) -> f64 {
        MARGIN + (x - self.x0) / (self.x1 - self.x0) * (SVG_W - 2.0 * MARGIN)
    }

    fn py(&self, y: f64) -> f64 {
        SVG_H - MARGIN - (y - self.y0) / (self.y1 - self.y0) * (SVG_H - 2.0 * MARGIN)
    }
}

fn svg_open(title: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {SVG_W} {SVG_H}\" \
         font-family=\"sans-serif\" font-size=\"11\">\n<title>{title}</title>\n\
         <rect width=\"{SVG_W}\" height=\"{SVG_H}\" fill=\"white\"/>\n"
    )
}

fn svg_axes(out: &mut String, frame: &Frame, xlabel: &str, ylabel: &str) {
    let _ = write!(
        out,
        "<g stroke=\"black\" fill=\"none\">\
         <line x1=\"{m}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\"/>\
         <line x1=\"{m}\" y1=\"{m}\" x2=\"{m}\" y2=\"{b}\"/></g>\n",
        m = MARGIN,
        b = SVG_H - MARGIN,
        r = SVG_W - MARGIN,
    );
    let _ = write!(
        out,
        "<text x=\"{m}\" y=\"{yb}\">{x0:.4}</text>\
         <text x=\"{r}\" y=\"{yb}\" text-anchor=\"end\">{x1:.4}</text>\
         <text x=\"{xl}\" y=\"{yb}\" text-anchor=\"middle\">{xlabel}</text>\
         <text x=\"4\" y=\"{b}\">{y0:.4}</text>\
         <text x=\"4\" y=\"{t}\">{y1:.4}</text>\
         <text x=\"4\" y=\"{yl}\">{ylabel}</text>\n",
        m = MARGIN,
        r = SVG_W - MARGIN,
        yb = SVG_H - MARGIN + 16.0,
        xl = SVG_W / 2.0,
        b = SVG_H - MARGIN,
        t = MARGIN,
        yl = SVG_H / 2.0,
        x0 = frame.x0,
        x1 = frame.x1,
        y0 = frame.y0,
        y1 = frame.y1,
    );
}

/// Bifurcation diagram: probe-cell IAA against the continuation parameter.
/// Stable segments are solid, unstable dashed; every computed point carries a
/// small circle marker and events carry larger labelled markers.
pub fn svg_branch(branches: &[&Branch], probe: usize) -> String {
    let all_points = || branches.iter().flat_map(|b| b.points.iter());
    let probe_of = |p: &crate::continuation::BranchPoint| {
        let n = p.u.len() / 2;
        p.u[n + probe.clamp(1, n) - 1]
    };
    let frame = Frame::from_ranges(all_points().map(|p| p.lambda), all_points().map(probe_of));
    let param = branches.first().map(|b| b.param.name()).unwrap_or("lambda");
    let mut out = svg_open("bifurcation diagram");
    svg_axes(&mut out, &frame, param, "a_probe");
    for branch in branches {
        // Split the polyline wherever stability flips so line style can change.
        let mut seg: Vec<(f64, f64, bool)> = Vec::new();
        let flush = |seg: &mut Vec<(f64, f64, bool)>, out: &mut String| {
            if seg.len() >= 2 {
                let dash = if seg[0].2 { "" } else { " stroke-dasharray=\"4 3\"" };
                let pts: Vec<String> = seg
                    .iter()
                    .map(|(x, y, _)| format!("{:.2},{:.2}", frame.px(*x), frame.py(*y)))
                    .collect();
                let _ = writeln!(
                    out,
                    "<polyline fill=\"none\" stroke=\"black\"{dash} points=\"{}\"/>",
                    pts.join(" ")
                );
            }
            seg.clear();
        };
        for p in &branch.points {
            let stable = p.stability.is_stable();
            if let Some(last) = seg.last() {
                if last.2 != stable {
                    let carry = (p.lambda, probe_of(p), last.2);
                    seg.push(carry);
                    flush(&mut seg, &mut out);
                }
            }
            seg.push((p.lambda, probe_of(p), stable));
        }
        flush(&mut seg, &mut out);
        for p in &branch.points {
            let _ = writeln!(
                out,
                "<circle class=\"pt\" cx=\"{:.2}\" cy=\"{:.2}\" r=\"1.5\" fill=\"black\"/>",
                frame.px(p.lambda),
                frame.py(probe_of(p))
            );
        }
        for e in &branch.events {
            let n = e.u.len() / 2;
            let y = e.u[n + probe.clamp(1, n) - 1];
            let _ = writeln!(
                out,
                "<circle class=\"event\" cx=\"{:.2}\" cy=\"{:.2}\" r=\"5\" fill=\"none\" \
                 stroke=\"black\" stroke-width=\"1.5\"/>\
                 <text x=\"{:.2}\" y=\"{:.2}\">{}</text>",
                frame.px(e.lambda),
                frame.py(y),
                frame.px(e.lambda) + 7.0,
                frame.py(y) - 7.0,
                kind_str(e.kind),
            );
        }
    }
    out.push_str("</svg>\n");
    out
}

/// Stability atlas heatmap: one rectangle per grid node (stable light,
/// unstable dark, invalid hatched white), optional boundary markers on top.
pub fn svg_grid(grid: &StabilityGrid, boundary: Option<&BoundaryTypeCurve>) -> String {
    let xs = grid.x.values();
    let ys = grid.y.values();
    let frame = Frame::from_ranges(xs.iter().copied(), ys.iter().copied());
    let mut out = svg_open("stability atlas");
    let w = (SVG_W - 2.0 * MARGIN) / xs.len() as f64;
    let h = (SVG_H - 2.0 * MARGIN) / ys.len() as f64;
    for (iy, y) in ys.iter().enumerate() {
        for (ix, x) in xs.iter().enumerate() {
            let fill = match grid.cell(ix, iy) {
                CellClass::Stable => "#e8e8e8",
                CellClass::Unstable => "#555555",
                CellClass::Invalid => "#ffffff",
            };
            let stroke = if grid.cell(ix, iy) == CellClass::Invalid {
                " stroke=\"#cc3333\""
            } else {
                ""
            };
            let _ = writeln!(
                out,
                "<rect class=\"cell\" x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"{fill}\"{stroke}/>",
                frame.px(*x) - w / 2.0,
                frame.py(*y) - h / 2.0,
                w,
                h,
            );
        }
    }
    if let Some(curve) = boundary {
        for s in curve {
            let marker = match s.kind {
                EventKind::Hopf => "<circle class=\"hopf\" cx=\"{X}\" cy=\"{Y}\" r=\"3\" fill=\"white\" stroke=\"black\"/>",
                _ => "<rect class=\"bp\" x=\"{X3}\" y=\"{Y3}\" width=\"6\" height=\"6\" fill=\"black\"/>",
            };
            let px = frame.px(s.x);
            let py = frame.py(s.y);
            let marker = marker
                .replace("{X3}", &format!("{:.2}", px - 3.0))
                .replace("{Y3}", &format!("{:.2}", py - 3.0))
                .replace("{X}", &format!("{px:.2}"))
                .replace("{Y}", &format!("{py:.2}"));
            out.push_str(&marker);
            out.push('\n');
        }
    }
    svg_axes(&mut out, &frame, grid.x.param.name(), grid.y.param.name());
    out.push_str("</svg>\n");
    out
}

/// Space-time heatmap of the interior IAA concentrations, one row of
/// rectangles per stored sample (grayscale, normalized over the whole run).
pub fn svg_spacetime(traj: &Trajectory) -> String {
    let n = traj.states[0].a.len();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for s in &traj.states {
        for v in s.a.iter() {
            lo = lo.min(*v);
            hi = hi.max(*v);
        }
    }
    if !(hi > lo) {
        hi = lo + 1.0;
    }
    let frame = Frame::from_ranges(
        [0.5, n as f64 + 0.5].into_iter(),
        [traj.times[0], *traj.times.last().unwrap()].into_iter(),
    );
    let mut out = svg_open("space-time plot");
    let w = (SVG_W - 2.0 * MARGIN) / n as f64;
    let h = (SVG_H - 2.0 * MARGIN) / traj.states.len() as f64;
    for (t, s) in traj.times.iter().zip(&traj.states) {
        let _ = write!(out, "<g class=\"t\">");
        for (i, v) in s.a.iter().enumerate() {
            let shade = (255.0 * (1.0 - (v - lo) / (hi - lo))).round() as u8;
            let _ = write!(
                out,
                "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"#{shade:02x}{shade:02x}{shade:02x}\"/>",
                frame.px((i + 1) as f64) - w / 2.0,
                frame.py(*t) - h / 2.0,
                w,
                h.max(1.0),
            );
        }
        out.push_str("</g>\n");
    }
    svg_axes(&mut out, &frame, "cell", "t");
    out.push_str("</svg>\n");
    out
}

/// Phase-plane plot of `(a_probe, da_probe/dt)`.
pub fn svg_phase(points: &[(f64, f64)]) -> String {
    let frame = Frame::from_ranges(points.iter().map(|p| p.0), points.iter().map(|p| p.1));
    let mut out = svg_open("phase plane");
    svg_axes(&mut out, &frame, "a", "da/dt");
    let pts: Vec<String> = points
        .iter()
        .map(|(x, y)| format!("{:.2},{:.2}", frame.px(*x), frame.py(*y)))
        .collect();
    let _ = writeln!(
        out,
        "<polyline fill=\"none\" stroke=\"black\" points=\"{}\"/>",
        pts.join(" ")
    );
    out.push_str("</svg>\n");
    out
}

// ---------------------------------------------------------------------------
// Run manifest
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct ManifestEntry {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

/// Reproducibility record written next to every run's outputs.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: Vec<String>,
    pub config: Value,
    pub wall_time_s: f64,
    pub outputs: Vec<ManifestEntry>,
}

impl RunManifest {
    pub fn new(command: Vec<String>, config: Value) -> RunManifest {
        RunManifest {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command,
            config,
            wall_time_s: 0.0,
            outputs: Vec::new(),
        }
    }

    /// Records a file that has already been written.
    pub fn record(&mut self, path: &Path) -> Result<()> {
        let data = std::fs::read(path)?;
        let digest = Sha256::digest(&data);
        self.outputs.push(ManifestEntry {
            path: path
                .file_name()
                .map(|f| PathBuf::from(f).display().to_string())
                .unwrap_or_else(|| path.display().to_string()),
            bytes: data.len() as u64,
            sha256: format!("{digest:x}"),
        });
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, serde_json::to_string_pretty(self)?.as_bytes())
    }
}

/// Writes `content` and records it in the manifest.
pub fn emit(manifest: &mut RunManifest, path: &Path, content: &[u8]) -> Result<()> {
    write_atomic(path, content)?;
    manifest.record(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrate::{perturbed_trivial, simulate};
    use crate::model::ParameterSet;

    fn short_run() -> (Trajectory, CellRow, ParameterSet) {
        let row = CellRow::new(6).unwrap();
        let params = ParameterSet::preset("M2").unwrap();
        let state0 = perturbed_trivial(&row, &params, 0.2, 1).unwrap();
        let traj = simulate(&state0, &row, &params, 1.0, 0.05, 4).unwrap();
        (traj, row, params)
    }

    #[test]
    fn trajectory_csv_shape() {
        let (traj, row, _) = short_run();
        let csv = trajectory_csv(&traj);
        let mut lines = csv.lines();
        let header: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(header.len(), 1 + (row.n + 2) + row.n);
        assert_eq!(header[0], "t");
        assert_eq!(header[1], "p_0");
        assert_eq!(*header.last().unwrap(), "a_6");
        assert_eq!(lines.count(), traj.times.len());
    }

    #[test]
    fn phase_csv_columns_match_rhs() {
        let (traj, row, params) = short_run();
        let csv = phase_csv(&traj, &row, &params, 3).unwrap();
        let line2 = csv.lines().nth(1).unwrap();
        let cols: Vec<f64> = line2.split(',').map(|v| v.parse().unwrap()).collect();
        assert_eq!(cols[0], 0.0);
        assert_eq!(cols[1], traj.states[0].a[2]);
        let rhs = dynamic_rhs(&traj.states[0], &row, &params).unwrap();
        assert_eq!(cols[2], rhs.a[2]);
    }

    #[test]
    fn spacetime_svg_has_one_group_per_sample() {
        let (traj, _, _) = short_run();
        let svg = svg_spacetime(&traj);
        let groups = svg.matches("<g class=\"t\">").count();
        assert_eq!(groups, traj.times.len());
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
    }

    #[test]
    fn atomic_write_round_trip_and_manifest() {
        let dir = std::env::temp_dir().join("pincell-io-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("x.csv");
        let mut manifest = RunManifest::new(vec!["test".into()], json!({}));
        emit(&mut manifest, &path, b"a,b\n1,2\n").unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "a,b\n1,2\n");
        assert_eq!(manifest.outputs.len(), 1);
        assert_eq!(manifest.outputs[0].bytes, 8);
        // Same content, same digest.
        let mut second = RunManifest::new(vec!["test".into()], json!({}));
        second.record(&path).unwrap();
        assert_eq!(manifest.outputs[0].sha256, second.outputs[0].sha256);
        let mpath = dir.join("manifest.json");
        manifest.write(&mpath).unwrap();
        let loaded: Value =
            serde_json::from_str(&std::fs::read_to_string(&mpath).unwrap()).unwrap();
        assert_eq!(loaded["outputs"][0]["path"], "x.csv");
    }
}
