//! Deterministic SVG plots of entropy profiles and fixed-point trees.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use difflab::fixedpoints::{BranchKind, FixedPointTree};
use difflab::score::log_density;
use nalgebra::DVector;

use crate::CliError;

const WIDTH: f64 = 760.0;
const HEIGHT: f64 = 460.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;
const HEAT_COLUMNS: usize = 120;
const HEAT_ROWS: usize = 60;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

const PROFILE_SERIES: [(&str, &str, &str); 5] = [
    ("rate_norm", "norm", "#1f77b4"),
    ("rate_var", "variance", "#ff7f0e"),
    ("rate_div", "divergence", "#2ca02c"),
    ("rate_fisher", "fisher", "#d62728"),
    ("rate_fd", "finite difference", "#000000"),
];

/// Renders `input` (an entropy-profile CSV or a fixed-point-tree JSON) to
/// an SVG file. `direction` projects trees of any dimension onto one axis.
pub fn render(input: &Path, output: &Path, direction: Option<&[f64]>) -> Result<(), CliError> {
    let text = fs::read_to_string(input).map_err(|e| CliError::io(format!("reading {}", input.display()), e))?;
    let svg = render_str(&text, direction)?;
    if let Some(dir) = output.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(format!("creating {}", dir.display()), e))?;
    }
    fs::write(output, svg).map_err(|e| CliError::io(format!("writing {}", output.display()), e))
}

pub fn render_str(text: &str, direction: Option<&[f64]>) -> Result<String, CliError> {
    if text.trim_start().starts_with('{') {
        let tree: FixedPointTree = serde_json::from_str(text).map_err(difflab::Error::from)?;
        render_tree(&tree, direction)
    } else {
        render_profile(text)
    }
}

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
    left: f64,
    top: f64,
    width: f64,
    height: f64,
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        self.left + (x - self.x0) / (self.x1 - self.x0) * self.width
    }

    fn py(&self, y: f64) -> f64 {
        self.top + (self.y1 - y) / (self.y1 - self.y0) * self.height
    }

    fn axes(&self, svg: &mut String, x_label: &str, y_label: &str) {
        let (l, t, w, h) = (self.left, self.top, self.width, self.height);
        let _ = writeln!(
            svg,
            r##"<rect x="{l:.2}" y="{t:.2}" width="{w:.2}" height="{h:.2}" fill="none" stroke="#000"/>"##
        );
        let first = self.x0.ceil() as i64;
        let last = self.x1.floor() as i64;
        for k in first..=last {
            let x = self.px(k as f64);
            let _ = writeln!(
                svg,
                r##"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="#000"/><text x="{x:.2}" y="{:.2}" font-size="11" text-anchor="middle">1e{k}</text>"##,
                t + h,
                t + h + 5.0,
                t + h + 18.0
            );
        }
        for y in nice_ticks(self.y0, self.y1) {
            let py = self.py(y);
            let _ = writeln!(
                svg,
                r##"<line x1="{:.2}" y1="{py:.2}" x2="{l:.2}" y2="{py:.2}" stroke="#000"/><text x="{:.2}" y="{:.2}" font-size="11" text-anchor="end">{}</text>"##,
                l - 5.0,
                l - 8.0,
                py + 4.0,
                tick_label(y)
            );
        }
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" font-size="12" text-anchor="middle">{x_label}</text>"#,
            l + w / 2.0,
            t + h + 38.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" font-size="12" text-anchor="middle" transform="rotate(-90 {:.2} {:.2})">{y_label}</text>"#,
            l - 50.0,
            t + h / 2.0,
            l - 50.0,
            t + h / 2.0
        );
    }
}

fn tick_label(v: f64) -> String {
    let s = format!("{v:.6}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" { "0".into() } else { s.into() }
}

fn nice_ticks(lo: f64, hi: f64) -> Vec<f64> {
    let span = hi - lo;
    if !(span > 0.0 && span.is_finite()) {
        return vec![];
    }
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| *s >= raw)
        .unwrap_or(10.0 * mag);
    let first = (lo / step).ceil() as i64;
    let last = (hi / step).floor() as i64;
    (first..=last).map(|k| k as f64 * step).collect()
}

fn header(svg: &mut String, title: &str) {
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif">"#
    );
    let _ = writeln!(svg, r##"<rect width="{WIDTH}" height="{HEIGHT}" fill="#fff"/>"##);
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="24" font-size="14" text-anchor="middle">{title}</text>"#,
        WIDTH / 2.0
    );
}

fn polyline(svg: &mut String, frame: &Frame, pts: &[(f64, f64)], color: &str, dashed: bool) {
    let coords: Vec<String> = pts
        .iter()
        .map(|(x, y)| format!("{:.2},{:.2}", frame.px(*x), frame.py(*y)))
        .collect();
    let dash = if dashed { r#" stroke-dasharray="5,3""# } else { "" };
    let _ = writeln!(
        svg,
        r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.6"{dash}/>"#,
        coords.join(" ")
    );
}

fn legend(svg: &mut String, entries: &[(&str, &str)]) {
    let x = WIDTH - RIGHT + 15.0;
    for (i, (label, color)) in entries.iter().enumerate() {
        let y = TOP + 10.0 + 18.0 * i as f64;
        let _ = writeln!(
            svg,
            r#"<line x1="{x:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="{color}" stroke-width="2"/><text x="{:.2}" y="{:.2}" font-size="11">{label}</text>"#,
            x + 20.0,
            x + 26.0,
            y + 4.0
        );
    }
}

fn parse_field(s: &str, row: usize) -> Result<Option<f64>, CliError> {
    if s.is_empty() {
        return Ok(None);
    }
    s.parse::<f64>().map(Some).map_err(|_| {
        CliError::Core(difflab::Error::Parse {
            row,
            reason: format!("{s:?} is not a number"),
        })
    })
}

fn render_profile(text: &str) -> Result<String, CliError> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let headers = reader.headers().map_err(difflab::Error::from)?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let sigma_col = col("sigma2").filter(|_| col("H_cond").is_some()).ok_or_else(|| {
        CliError::Usage("input is neither an entropy-profile CSV nor a fixed-point-tree JSON".into())
    })?;
    let mut series: Vec<(&str, &str, Vec<(f64, f64)>)> = PROFILE_SERIES
        .iter()
        .map(|(_, label, color)| (*label, *color, Vec::new()))
        .collect();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(difflab::Error::from)?;
        let s2 = parse_field(&rec[sigma_col], i + 1)?
            .filter(|v| *v > 0.0)
            .ok_or_else(|| CliError::Usage(format!("row {}: sigma2 must be positive", i + 1)))?;
        for (k, (name, _, _)) in PROFILE_SERIES.iter().enumerate() {
            if let Some(c) = col(name) {
                if let Some(v) = parse_field(&rec[c], i + 1)? {
                    series[k].2.push((s2.log10(), v));
                }
            }
        }
    }
    series.retain(|s| !s.2.is_empty());
    if series.is_empty() {
        return Err(CliError::Usage("profile has no rate columns".into()));
    }
    let all = series.iter().flat_map(|s| s.2.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, 0.0f64, f64::NEG_INFINITY);
    for &(x, y) in all {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    if !(y1 > y0) {
        y1 = y0 + 1.0;
    }
    let pad = 0.05 * (y1 - y0);
    let frame = Frame {
        x0,
        x1,
        y0: if y0 < 0.0 { y0 - pad } else { 0.0 },
        y1: y1 + pad,
        left: LEFT,
        top: TOP,
        width: WIDTH - LEFT - RIGHT,
        height: HEIGHT - TOP - BOTTOM,
    };
    let mut svg = String::new();
    header(&mut svg, "Conditional entropy rate");
    frame.axes(&mut svg, "sigma^2 (log scale)", "dH(y|x_t)/dt");
    for (label, color, pts) in &series {
        polyline(&mut svg, &frame, pts, color, *label == "finite difference");
    }
    let entries: Vec<(&str, &str)> = series.iter().map(|(l, c, _)| (*l, *c)).collect();
    legend(&mut svg, &entries);
    svg.push_str("</svg>\n");
    Ok(svg)
}

fn render_tree(tree: &FixedPointTree, direction: Option<&[f64]>) -> Result<String, CliError> {
    let dist = tree.distribution.build()?;
    let d = dist.dim();
    // One panel per projection axis.
    let axes: Vec<(String, DVector<f64>)> = match direction {
        Some(v) => {
            if v.len() != d {
                return Err(CliError::Usage(format!(
                    "direction has {} coordinates, the tree has {d}",
                    v.len()
                )));
            }
            let v = DVector::from_column_slice(v);
            let n = v.norm();
            if !(n > 0.0 && n.is_finite()) {
                return Err(CliError::Usage("direction must be a finite non-zero vector".into()));
            }
            vec![("projection".into(), v / n)]
        }
        None if d <= 2 => (0..d)
            .map(|i| {
                let mut e = DVector::zeros(d);
                e[i] = 1.0;
                (format!("x_{}", i + 1), e)
            })
            .collect(),
        None => {
            return Err(CliError::Usage(format!(
                "tree has dimension {d} > 2: a projection direction is required"
            )))
        }
    };
    let heat = d == 1 && direction.is_none();

    let lx: Vec<f64> = tree.sigma2_grid.iter().map(|s| s.log10()).collect();
    let x0 = lx.iter().copied().fold(f64::INFINITY, f64::min);
    let mut x1 = lx.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }

    let mut svg = String::new();
    header(&mut svg, "Paths of fixed points");
    let panel_h = (HEIGHT - TOP - BOTTOM - 20.0 * (axes.len() - 1) as f64) / axes.len() as f64;
    for (k, (label, dir)) in axes.iter().enumerate() {
        let proj = |x: &[f64]| x.iter().zip(dir.iter()).map(|(a, b)| a * b).sum::<f64>();
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for node in tree.paths.iter().flat_map(|p| &p.nodes) {
            let v = proj(&node.x);
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if heat {
            if let Some(mix) = dist.as_mixture() {
                for p in mix.points() {
                    lo = lo.min(p[0]);
                    hi = hi.max(p[0]);
                }
            }
        }
        if !(hi > lo) {
            lo -= 1.0;
            hi += 1.0;
        }
        let pad = 0.1 * (hi - lo);
        let frame = Frame {
            x0,
            x1,
            y0: lo - pad,
            y1: hi + pad,
            left: LEFT,
            top: TOP + k as f64 * (panel_h + 20.0),
            width: WIDTH - LEFT - RIGHT,
            height: panel_h,
        };
        if heat {
            heat_strip(&mut svg, &frame, &dist)?;
        }
        let x_label = if k + 1 == axes.len() { "sigma^2 (log scale)" } else { "" };
        frame.axes(&mut svg, x_label, label);
        for path in &tree.paths {
            let pts: Vec<(f64, f64)> = path.nodes.iter().map(|n| (n.sigma2.log10(), proj(&n.x))).collect();
            let color = PALETTE[path.id % PALETTE.len()];
            if pts.len() == 1 {
                let (px, py) = (frame.px(pts[0].0), frame.py(pts[0].1));
                let _ = writeln!(svg, r#"<circle cx="{px:.2}" cy="{py:.2}" r="1.5" fill="{color}"/>"#);
            } else {
                polyline(&mut svg, &frame, &pts, color, false);
            }
        }
        for ev in &tree.branch_events {
            let (px, py) = (frame.px(ev.sigma2_branch.log10()), frame.py(proj(&ev.parent_x)));
            let style = match ev.kind {
                BranchKind::Continuous => r##"fill="#000""##,
                BranchKind::Jump => r##"fill="none" stroke="#d62728" stroke-width="1.5""##,
            };
            let _ = writeln!(svg, r#"<circle cx="{px:.2}" cy="{py:.2}" r="4" {style}/>"#);
        }
    }
    let mut entries: Vec<(String, &str)> = tree
        .paths
        .iter()
        .take(12)
        .map(|p| (format!("path {}", p.id), PALETTE[p.id % PALETTE.len()]))
        .collect();
    if tree.paths.len() > 12 {
        entries.push((format!("+{} more", tree.paths.len() - 12), "#fff"));
    }
    let refs: Vec<(&str, &str)> = entries.iter().map(|(l, c)| (l.as_str(), *c)).collect();
    legend(&mut svg, &refs);
    svg.push_str("</svg>\n");
    Ok(svg)
}

/// Gray background proportional to p_t(x) / max_x p_t(x) in each column.
fn heat_strip(svg: &mut String, frame: &Frame, dist: &difflab::model::DataDistribution) -> Result<(), CliError> {
    let cw = frame.width / HEAT_COLUMNS as f64;
    let rh = frame.height / HEAT_ROWS as f64;
    for c in 0..HEAT_COLUMNS {
        let lx = frame.x0 + (c as f64 + 0.5) / HEAT_COLUMNS as f64 * (frame.x1 - frame.x0);
        let s2 = 10f64.powf(lx);
        let logs: Vec<f64> = (0..HEAT_ROWS)
            .map(|r| {
                let y = frame.y1 - (r as f64 + 0.5) / HEAT_ROWS as f64 * (frame.y1 - frame.y0);
                log_density(dist, &DVector::from_element(1, y), s2)
            })
            .collect::<Result<_, _>>()?;
        let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for (r, l) in logs.iter().enumerate() {
            let p = (l - top).exp();
            let level = (255.0 - 150.0 * p).round() as u8;
            if level == 255 {
                continue;
            }
            let _ = writeln!(
                svg,
                r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="rgb({level},{level},{level})"/>"#,
                frame.left + c as f64 * cw,
                frame.top + r as f64 * rh,
                cw + 0.05,
                rh + 0.05
            );
        }
    }
    Ok(())
}
