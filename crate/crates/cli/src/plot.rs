//! Static SVG plots: learning curves and return / continuity-cost scatter.
//!
//! Output depends only on the input data: fixed canvas sizes, fixed colour
//! order, numbers printed with a fixed precision.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Result};
use gsde::metrics::mean_std_error;

use crate::runlog::{read_pareto, read_run_log, ParetoRow};

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];
const PANEL_W: f64 = 480.0;
const PANEL_H: f64 = 360.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 20.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotKind {
    Curve,
    Pareto,
}

impl FromStr for PlotKind {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "curve" => Ok(PlotKind::Curve),
            "pareto" => Ok(PlotKind::Pareto),
            other => bail!("unknown plot kind {other:?}; expected curve or pareto"),
        }
    }
}

/// Mean and standard error over seeds at each timestep.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveSeries {
    pub label: String,
    /// `(timestep, mean, std_error)`, sorted by timestep.
    pub points: Vec<(f64, f64, f64)>,
}

/// One scatter panel; `normalized` panels plot returns relative to the best
/// configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ParetoPanel {
    pub title: String,
    pub normalized: bool,
    pub rows: Vec<ParetoRow>,
}

/// Series label of a log: the run label for `<label>/seed-<s>/log.csv`,
/// otherwise the file stem.
fn series_label(path: &Path) -> String {
    let parent = path.parent();
    let in_seed_dir = parent
        .and_then(|p| p.file_name())
        .and_then(|n| n.to_str())
        .is_some_and(|n| n.starts_with("seed-"));
    let named = if in_seed_dir {
        parent.and_then(|p| p.parent()).and_then(|p| p.file_name())
    } else {
        path.file_stem()
    };
    named
        .and_then(|n| n.to_str())
        .unwrap_or("run")
        .to_string()
}

/// Groups logs into series and averages them over seeds. Evaluation returns
/// are used when any log has them, training episode returns otherwise.
pub fn load_curves(paths: &[PathBuf]) -> Result<Vec<CurveSeries>> {
    let mut logs = Vec::new();
    for p in paths {
        logs.push((series_label(p), read_run_log(p)?));
    }
    let use_eval = logs
        .iter()
        .any(|(_, rows)| rows.iter().any(|r| r.eval_return.is_some()));
    let mut grouped: Vec<(String, BTreeMap<u64, Vec<f64>>)> = Vec::new();
    for (label, rows) in logs {
        let idx = match grouped.iter().position(|(l, _)| *l == label) {
            Some(i) => i,
            None => {
                grouped.push((label, BTreeMap::new()));
                grouped.len() - 1
            }
        };
        for r in rows.iter().filter(|r| !r.diverged) {
            let y = if use_eval { r.eval_return } else { r.episode_return };
            if let Some(y) = y {
                grouped[idx].1.entry(r.timestep).or_default().push(y);
            }
        }
    }
    let series: Vec<CurveSeries> = grouped
        .into_iter()
        .filter(|(_, m)| !m.is_empty())
        .map(|(label, m)| CurveSeries {
            label,
            points: m
                .into_iter()
                .map(|(t, ys)| {
                    let (mean, se) = mean_std_error(&ys).expect("non-empty");
                    (t as f64, mean, se)
                })
                .collect(),
        })
        .collect();
    if series.is_empty() {
        bail!("no data to plot");
    }
    Ok(series)
}

/// One raw panel per table, titled by its directory, plus a macro-average
/// panel of normalized returns when there are several tables.
pub fn load_pareto(paths: &[PathBuf]) -> Result<Vec<ParetoPanel>> {
    let mut panels = Vec::new();
    for p in paths {
        let rows = read_pareto(p)?;
        if rows.is_empty() {
            continue;
        }
        let title = p
            .parent()
            .and_then(|d| d.file_name())
            .or_else(|| p.file_stem())
            .and_then(|n| n.to_str())
            .unwrap_or("task")
            .to_string();
        panels.push(ParetoPanel {
            title,
            normalized: false,
            rows,
        });
    }
    if panels.is_empty() {
        bail!("no data to plot");
    }
    if panels.len() > 1 {
        panels.push(macro_average(&panels));
    }
    Ok(panels)
}

/// Normalized return of one configuration: `mean / best` for a positive
/// best, `best / mean` for a negative one, with its standard error.
fn normalize(mean: f64, se: f64, best: f64) -> (f64, f64) {
    if best > 0.0 {
        (mean / best, se / best)
    } else {
        (best / mean, (best * se / (mean * mean)).abs())
    }
}

fn macro_average(panels: &[ParetoPanel]) -> ParetoPanel {
    let mut rows: Vec<ParetoRow> = Vec::new();
    for candidate in &panels[0].rows {
        let key = (&candidate.label, &candidate.interval);
        let matches: Vec<(&ParetoRow, f64)> = panels
            .iter()
            .filter_map(|p| {
                let best = p
                    .rows
                    .iter()
                    .map(|r| r.mean_return)
                    .fold(f64::NEG_INFINITY, f64::max);
                p.rows
                    .iter()
                    .find(|r| (&r.label, &r.interval) == key)
                    .map(|r| (r, best))
            })
            .collect();
        if matches.len() != panels.len() || matches.iter().any(|(_, b)| *b == 0.0) {
            continue;
        }
        let k = matches.len() as f64;
        let (mut y, mut y_var, mut x, mut x_var, mut n) = (0.0, 0.0, 0.0, 0.0, usize::MAX);
        for (r, best) in &matches {
            let (m, s) = normalize(r.mean_return, r.se_return, *best);
            y += m / k;
            y_var += s * s / (k * k);
            x += r.mean_ctrain / k;
            x_var += r.se_ctrain * r.se_ctrain / (k * k);
            n = n.min(r.n_seeds);
        }
        rows.push(ParetoRow {
            label: candidate.label.clone(),
            interval: candidate.interval.clone(),
            mean_return: y,
            se_return: y_var.sqrt(),
            mean_ctrain: x,
            se_ctrain: x_var.sqrt(),
            n_seeds: n,
        });
    }
    ParetoPanel {
        title: "macro average".into(),
        normalized: true,
        rows,
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Axis range padded by 5%, widened when degenerate.
fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        (lo.min(v), hi.max(v))
    });
    if !lo.is_finite() || !hi.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        let pad = if lo.abs() > 0.0 { lo.abs() * 0.1 } else { 1.0 };
        return (lo - pad, hi + pad);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

struct Frame {
    x0: f64,
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        self.x0 + MARGIN_L + (x - self.x.0) / (self.x.1 - self.x.0) * (PANEL_W - MARGIN_L - MARGIN_R)
    }

    fn py(&self, y: f64) -> f64 {
        PANEL_H - MARGIN_B - (y - self.y.0) / (self.y.1 - self.y.0) * (PANEL_H - MARGIN_T - MARGIN_B)
    }

    fn axes(&self, svg: &mut String, title: &str, xlabel: &str, ylabel: &str) {
        let (l, r) = (self.x0 + MARGIN_L, self.x0 + PANEL_W - MARGIN_R);
        let (t, b) = (MARGIN_T, PANEL_H - MARGIN_B);
        let _ = writeln!(
            svg,
            r#"<rect x="{l:.2}" y="{t:.2}" width="{:.2}" height="{:.2}" fill="none" stroke="black"/>"#,
            r - l,
            b - t
        );
        for i in 0..=4 {
            let f = i as f64 / 4.0;
            let xv = self.x.0 + f * (self.x.1 - self.x.0);
            let yv = self.y.0 + f * (self.y.1 - self.y.0);
            let (xp, yp) = (self.px(xv), self.py(yv));
            let _ = writeln!(
                svg,
                r#"<line x1="{xp:.2}" y1="{b:.2}" x2="{xp:.2}" y2="{:.2}" stroke="black"/><text x="{xp:.2}" y="{:.2}" font-size="11" text-anchor="middle">{}</text>"#,
                b + 4.0,
                b + 17.0,
                tick(xv)
            );
            let _ = writeln!(
                svg,
                r#"<line x1="{:.2}" y1="{yp:.2}" x2="{l:.2}" y2="{yp:.2}" stroke="black"/><text x="{:.2}" y="{:.2}" font-size="11" text-anchor="end">{}</text>"#,
                l - 4.0,
                l - 6.0,
                yp + 4.0,
                tick(yv)
            );
        }
        let cx = (l + r) / 2.0;
        let _ = writeln!(
            svg,
            r#"<text x="{cx:.2}" y="24" font-size="14" text-anchor="middle">{}</text>"#,
            escape(title)
        );
        let _ = writeln!(
            svg,
            r#"<text x="{cx:.2}" y="{:.2}" font-size="12" text-anchor="middle">{}</text>"#,
            PANEL_H - 12.0,
            escape(xlabel)
        );
        let cy = (t + b) / 2.0;
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{cy:.2}" font-size="12" text-anchor="middle" transform="rotate(-90 {:.2} {cy:.2})">{}</text>"#,
            self.x0 + 16.0,
            self.x0 + 16.0,
            escape(ylabel)
        );
    }
}

fn tick(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && !(1e-2..1e5).contains(&a) {
        format!("{v:.2e}")
    } else if a >= 100.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}

fn header(width: f64) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width:.0}\" height=\"{PANEL_H:.0}\" viewBox=\"0 0 {width:.0} {PANEL_H:.0}\" font-family=\"sans-serif\">\n<rect width=\"100%\" height=\"100%\" fill=\"#fff\"/>\n"
    )
}

pub fn curve_svg(series: &[CurveSeries]) -> String {
    let all = || series.iter().flat_map(|s| s.points.iter());
    let frame = Frame {
        x0: 0.0,
        x: range(all().map(|p| p.0)),
        y: range(all().flat_map(|p| [p.1 - p.2, p.1 + p.2])),
    };
    let mut svg = header(PANEL_W);
    frame.axes(&mut svg, "learning curve", "timestep", "return");
    for (k, s) in series.iter().enumerate() {
        let colour = PALETTE[k % PALETTE.len()];
        let upper = s.points.iter().map(|p| (p.0, p.1 + p.2));
        let lower = s.points.iter().rev().map(|p| (p.0, p.1 - p.2));
        let band: Vec<String> = upper
            .chain(lower)
            .map(|(x, y)| format!("{:.2},{:.2}", frame.px(x), frame.py(y)))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polygon points="{}" fill="{colour}" fill-opacity="0.2" stroke="none"/>"#,
            band.join(" ")
        );
        let line: Vec<String> = s
            .points
            .iter()
            .map(|p| format!("{:.2},{:.2}", frame.px(p.0), frame.py(p.1)))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline points="{}" fill="none" stroke="{colour}" stroke-width="1.5"/>"#,
            line.join(" ")
        );
        let ly = MARGIN_T + 14.0 + 16.0 * k as f64;
        let lx = PANEL_W - MARGIN_R - 130.0;
        let _ = writeln!(
            svg,
            r#"<line x1="{lx:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{colour}" stroke-width="2"/><text x="{:.2}" y="{ly:.2}" font-size="11">{}</text>"#,
            ly - 4.0,
            lx + 18.0,
            ly - 4.0,
            lx + 24.0,
            escape(&s.label)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

pub fn pareto_svg(panels: &[ParetoPanel]) -> String {
    let mut svg = header(PANEL_W * panels.len() as f64);
    for (k, panel) in panels.iter().enumerate() {
        let frame = Frame {
            x0: PANEL_W * k as f64,
            x: range(panel.rows.iter().flat_map(|r| {
                [r.mean_ctrain - r.se_ctrain, r.mean_ctrain + r.se_ctrain]
            })),
            y: range(panel.rows.iter().flat_map(|r| {
                [r.mean_return - r.se_return, r.mean_return + r.se_return]
            })),
        };
        let ylabel = if panel.normalized {
            "normalized return"
        } else {
            "return"
        };
        frame.axes(&mut svg, &panel.title, "train continuity cost", ylabel);
        for (i, r) in panel.rows.iter().enumerate() {
            let colour = PALETTE[i % PALETTE.len()];
            let (x, y) = (frame.px(r.mean_ctrain), frame.py(r.mean_return));
            let (xl, xh) = (
                frame.px(r.mean_ctrain - r.se_ctrain),
                frame.px(r.mean_ctrain + r.se_ctrain),
            );
            let (yl, yh) = (
                frame.py(r.mean_return - r.se_return),
                frame.py(r.mean_return + r.se_return),
            );
            let _ = writeln!(
                svg,
                r#"<line x1="{xl:.2}" y1="{y:.2}" x2="{xh:.2}" y2="{y:.2}" stroke="{colour}"/><line x1="{x:.2}" y1="{yl:.2}" x2="{x:.2}" y2="{yh:.2}" stroke="{colour}"/><circle cx="{x:.2}" cy="{y:.2}" r="4" fill="{colour}"/><text x="{:.2}" y="{:.2}" font-size="11">{}</text>"#,
                x + 6.0,
                y - 6.0,
                escape(&r.label)
            );
        }
    }
    svg.push_str("</svg>\n");
    svg
}

/// Renders the plot in memory and writes it only on success.
pub fn cmd_plot(kind: PlotKind, inputs: &[PathBuf], output: &Path) -> Result<()> {
    if inputs.is_empty() {
        bail!("no input files");
    }
    let svg = match kind {
        PlotKind::Curve => curve_svg(&load_curves(inputs)?),
        PlotKind::Pareto => pareto_svg(&load_pareto(inputs)?),
    };
    std::fs::write(output, svg)?;
    Ok(())
}
