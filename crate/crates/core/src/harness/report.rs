//! CSV, summary table and plot output.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::{median, RegretReport, SlotRecord};
use crate::error::{Error, Result};

const HEADER: [&str; 8] = [
    "t",
    "cost_learner",
    "cost_benchmark",
    "regret",
    "avg_regret",
    "lambda",
    "delta",
    "M_norm",
];

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> Error + '_ {
    move |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn write_csv(path: &Path, records: &[SlotRecord]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(csv_err(path))?;
    w.write_record(HEADER).map_err(csv_err(path))?;
    for r in records {
        w.serialize(r).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_csv(path: &Path) -> Result<Vec<SlotRecord>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let header = r.headers().map_err(csv_err(path))?.clone();
    if header.iter().ne(HEADER) {
        return Err(Error::config(format!(
            "{}: unexpected header `{}`",
            path.display(),
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    r.deserialize().map(|rec| rec.map_err(csv_err(path))).collect()
}

/// File-name-safe form of a controller label.
pub(crate) fn file_stem(label: &str) -> String {
    label
        .chars()
        .filter_map(|c| match c {
            'a'..='z' | 'A'..='Z' | '0'..='9' | '.' | '-' => Some(c),
            '(' | '_' => Some('_'),
            _ => None,
        })
        .collect()
}

/// Table of median accumulated reward per controller, one row per scenario.
pub fn render_summary(report: &RegretReport) -> String {
    let cfg = &report.config;
    let labels = report.labels();
    let row_name = format!("Scenario ({})", cfg.scenario.scenario);
    let width = labels.iter().map(String::len).max().unwrap_or(0).max(14);
    let first = row_name.len().max(16);
    let cell = |x: Option<f64>| match x {
        Some(v) => format!("{v:.3}"),
        None => "failed".to_string(),
    };

    let mut out = String::new();
    let _ = writeln!(
        out,
        "Accumulated reward (negative cost), median over {} seed(s)",
        cfg.replications
    );
    let _ = writeln!(
        out,
        "T = {}, d = {}, p = {}, kappa_M = {}, oracle = {}, seeds from {}, GPC gradient bound = {}",
        cfg.scenario.horizon,
        report.d,
        cfg.p,
        cfg.kappa_m,
        cfg.oracle,
        cfg.scenario.seed,
        report.gpc_gradient_bound
    );
    let _ = writeln!(out);
    let mut line = format!("{:first$} ", "");
    for l in &labels {
        let _ = write!(line, "| {l:>width$} ");
    }
    let _ = writeln!(out, "{}", line.trim_end());
    let _ = writeln!(out, "{}", "-".repeat(line.trim_end().len()));

    let mut rows: Vec<(String, Vec<String>)> = vec![(
        row_name,
        labels.iter().map(|l| cell(report.median_reward(l))).collect(),
    )];
    rows.push((
        "R_T/T".into(),
        labels.iter().map(|l| cell(report.median_final_avg_regret(l))).collect(),
    ));
    rows.push((
        "failed runs".into(),
        labels
            .iter()
            .map(|l| report.runs_for(l).filter(|r| r.failed()).count().to_string())
            .collect(),
    ));
    for (name, cells) in rows {
        let mut line = format!("{name:first$} ");
        for c in cells {
            let _ = write!(line, "| {c:>width$} ");
        }
        let _ = writeln!(out, "{}", line.trim_end());
    }
    for run in report.runs.iter().filter(|r| r.failed()) {
        let _ = writeln!(
            out,
            "\n{} seed {} failed: {}",
            run.label,
            run.seed,
            run.failure.as_deref().unwrap_or_default()
        );
    }
    out
}

/// Median `R_t/t` across seeds, per controller.
fn median_curves(report: &RegretReport) -> Vec<(String, Vec<f64>)> {
    report
        .labels()
        .into_iter()
        .filter_map(|label| {
            let runs: Vec<_> = report.runs_for(&label).filter(|r| !r.failed()).collect();
            let len = runs.iter().map(|r| r.records.len()).min()?;
            let curve = (0..len)
                .map(|k| median(runs.iter().map(|r| r.records[k].avg_regret).collect()).unwrap_or(0.0))
                .collect();
            Some((label, curve))
        })
        .collect()
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

/// Line plot of `R_t/t` as a standalone SVG document.
pub fn render_plot(report: &RegretReport) -> String {
    let curves = median_curves(report);
    let (w, h, pad) = (720.0, 420.0, 60.0);
    let t_max = curves.iter().map(|(_, c)| c.len()).max().unwrap_or(1).max(1) as f64;
    let (mut lo, mut hi) = curves
        .iter()
        .flat_map(|(_, c)| c.iter().copied())
        .filter(|v| v.is_finite())
        .fold((0.0f64, 0.0f64), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if hi - lo < 1e-12 {
        lo -= 1.0;
        hi += 1.0;
    }
    let sx = |t: f64| pad + (t - 1.0) / (t_max - 1.0).max(1.0) * (w - 2.0 * pad);
    let sy = |v: f64| h - pad - (v - lo) / (hi - lo) * (h - 2.0 * pad);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<path d="M{pad} {pad} V{} H{}" fill="none" stroke="black"/>"#,
        h - pad,
        w - pad
    );
    if lo < 0.0 && hi > 0.0 {
        let _ = writeln!(
            svg,
            r##"<line x1="{pad}" y1="{y}" x2="{}" y2="{y}" stroke="#999" stroke-dasharray="4 3"/>"##,
            w - pad,
            y = sy(0.0)
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" font-size="12" text-anchor="middle">t</text>"#,
        w / 2.0,
        h - 20.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="15" y="{}" font-size="12" transform="rotate(-90 15 {})" text-anchor="middle">R_t / t</text>"#,
        h / 2.0,
        h / 2.0
    );
    for (v, y) in [(lo, h - pad), (hi, pad)] {
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" font-size="10" text-anchor="end">{v:.3}</text>"#,
            pad - 4.0,
            y + 4.0
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" font-size="10" text-anchor="end">{}</text>"#,
        w - pad,
        h - pad + 14.0,
        t_max
    );
    for (k, (label, curve)) in curves.iter().enumerate() {
        let colour = PALETTE[k % PALETTE.len()];
        let mut d = String::new();
        for (i, v) in curve.iter().enumerate() {
            let _ = write!(d, "{}{:.2} {:.2} ", if i == 0 { 'M' } else { 'L' }, sx(i as f64 + 1.0), sy(*v));
        }
        let _ = writeln!(
            svg,
            r#"<path d="{}" fill="none" stroke="{colour}" stroke-width="1.5"/>"#,
            d.trim_end()
        );
        let ly = pad + 16.0 * k as f64;
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{ly}" font-size="12" fill="{colour}" text-anchor="end">{label}</text>"#,
            w - pad - 4.0
        );
    }
    svg.push_str("</svg>\n");
    svg
}

/// Writes one CSV per (controller, seed), `summary.txt`, and optionally
/// `avg_regret.svg` into `out`. Returns the paths written.
pub fn emit_report(report: &RegretReport, out: &Path, plot: bool) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out).map_err(io_err(out))?;
    let mut written = Vec::new();
    for run in report.runs.iter().filter(|r| !r.failed()) {
        let path = out.join(format!("{}_seed{}.csv", file_stem(&run.label), run.seed));
        write_csv(&path, &run.records)?;
        written.push(path);
    }
    let summary = out.join("summary.txt");
    std::fs::write(&summary, render_summary(report)).map_err(io_err(&summary))?;
    written.push(summary);
    if plot {
        let path = out.join("avg_regret.svg");
        std::fs::write(&path, render_plot(report)).map_err(io_err(&path))?;
        written.push(path);
    }
    Ok(written)
}
