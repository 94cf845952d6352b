//! CSV tables and minimal SVG figures from metrics files. The CSV holds the
//! exact plotted numbers.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::ValueEnum;

use hacklab_core::diagnostics::correlate;
use hacklab_core::trainer::{RunRecord, RunSummary};

use crate::config::config_error;
use crate::run::read_metrics;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PlotKind {
    Traces,
    Frontier,
    Correlation,
}

pub struct PlotOutput {
    pub csv: PathBuf,
    pub svg: PathBuf,
}

const W: f64 = 640.0;
const H: f64 = 400.0;
const PAD: f64 = 50.0;
const COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn fit<'a>(points: impl Iterator<Item = &'a (f64, f64)>) -> Self {
        let mut f = Frame {
            x0: f64::INFINITY,
            x1: f64::NEG_INFINITY,
            y0: f64::INFINITY,
            y1: f64::NEG_INFINITY,
        };
        for &(x, y) in points {
            f.x0 = f.x0.min(x);
            f.x1 = f.x1.max(x);
            f.y0 = f.y0.min(y);
            f.y1 = f.y1.max(y);
        }
        if !(f.x1 > f.x0) {
            f.x1 = f.x0 + 1.0;
        }
        if !(f.y1 > f.y0) {
            f.y1 = f.y0 + 1.0;
        }
        f
    }

    fn px(&self, x: f64, y: f64) -> (f64, f64) {
        (
            PAD + (x - self.x0) / (self.x1 - self.x0) * (W - 2.0 * PAD),
            H - PAD - (y - self.y0) / (self.y1 - self.y0) * (H - 2.0 * PAD),
        )
    }
}

fn svg(title: &str, xlabel: &str, series: &[(&str, Vec<(f64, f64)>)], lines: bool) -> String {
    let frame = Frame::fit(series.iter().flat_map(|(_, p)| p.iter()));
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle">{title}</text>"#, W / 2.0);
    let _ = writeln!(
        s,
        r#"<rect x="{PAD}" y="{PAD}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        W - 2.0 * PAD,
        H - 2.0 * PAD
    );
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{xlabel}</text>"#, W / 2.0, H - 15.0);
    let _ = writeln!(s, r#"<text x="{PAD}" y="{}">{:.3}</text>"#, H - PAD + 15.0, frame.x0);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{:.3}</text>"#, W - PAD, H - PAD + 15.0, frame.x1);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{:.3}</text>"#, PAD - 4.0, H - PAD, frame.y0);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{:.3}</text>"#, PAD - 4.0, PAD + 10.0, frame.y1);
    for (i, (name, pts)) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        if lines {
            let path: Vec<String> = pts
                .iter()
                .map(|&(x, y)| {
                    let (a, b) = frame.px(x, y);
                    format!("{a:.1},{b:.1}")
                })
                .collect();
            let _ = writeln!(s, r#"<polyline fill="none" stroke="{color}" points="{}"/>"#, path.join(" "));
        } else {
            for &(x, y) in pts {
                let (a, b) = frame.px(x, y);
                let _ = writeln!(s, r#"<circle cx="{a:.1}" cy="{b:.1}" r="3" fill="{color}"/>"#);
            }
        }
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" fill="{color}">{name}</text>"#,
            W - PAD + 4.0,
            PAD + 15.0 * (i as f64 + 1.0)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn one_file(paths: &[PathBuf], kind: &str) -> anyhow::Result<Vec<RunRecord>> {
    match paths {
        [p] => read_metrics(p),
        _ => Err(config_error(format!("{kind} plot takes exactly one metrics file, got {}", paths.len()))),
    }
}

fn write(out: &Path, stem: &str, csv: String, svg_text: String) -> anyhow::Result<PlotOutput> {
    fs::create_dir_all(out)?;
    let csv_path = out.join(format!("{stem}.csv"));
    let svg_path = out.join(format!("{stem}.svg"));
    fs::write(&csv_path, csv)?;
    fs::write(&svg_path, svg_text)?;
    Ok(PlotOutput {
        csv: csv_path,
        svg: svg_path,
    })
}

fn traces(paths: &[PathBuf], out: &Path) -> anyhow::Result<PlotOutput> {
    let recs = one_file(paths, "traces")?;
    if recs.is_empty() {
        return Err(config_error("missing series 'proxy': metrics file is empty"));
    }
    let mut csv = String::from("step,proxy,gold,grad_norm\n");
    for r in &recs {
        let _ = writeln!(csv, "{},{},{},{}", r.step, r.proxy, r.gold, r.grad_norm);
    }
    let series = |f: fn(&RunRecord) -> f64| recs.iter().map(|r| (r.step as f64, f(r))).collect::<Vec<_>>();
    let svg_text = svg(
        "traces",
        "step",
        &[
            ("proxy", series(|r| r.proxy)),
            ("gold", series(|r| r.gold)),
            ("grad_norm", series(|r| r.grad_norm)),
        ],
        true,
    );
    write(out, "traces", csv, svg_text)
}

/// Final KL to the initial policy against smoothed final gold, one point
/// per run, sorted by KL.
fn frontier(paths: &[PathBuf], out: &Path, window: usize) -> anyhow::Result<PlotOutput> {
    if paths.is_empty() {
        return Err(config_error("frontier plot needs at least one metrics file"));
    }
    let mut pts = Vec::with_capacity(paths.len());
    for p in paths {
        let recs = read_metrics(p)?;
        let s = RunSummary::from_records(&recs, window)
            .map_err(|_| config_error(format!("missing series 'gold' in {}", p.display())))?;
        pts.push((s.final_kl_to_init, s.final_gold, p.display().to_string()));
    }
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut csv = String::from("kl_to_init,gold,path\n");
    for (k, g, p) in &pts {
        let _ = writeln!(csv, "{k},{g},{p}");
    }
    let xy: Vec<(f64, f64)> = pts.iter().map(|(k, g, _)| (*k, *g)).collect();
    let svg_text = svg("gold vs KL to initial policy", "KL to initial policy", &[("runs", xy)], false);
    write(out, "frontier", csv, svg_text)
}

/// Gradient norm against BT loss under the policy after the gold peak. The
/// Pearson value goes in a `# pearson=` header line.
fn correlation(paths: &[PathBuf], out: &Path, window: usize) -> anyhow::Result<PlotOutput> {
    let recs = one_file(paths, "correlation")?;
    let s = RunSummary::from_records(&recs, window).map_err(|_| config_error("missing series 'gold'"))?;
    let pts: Vec<(usize, f64, f64)> = recs
        .iter()
        .filter(|r| r.step >= s.peak_step)
        .filter_map(|r| r.bt_loss.map(|b| (r.step, r.grad_norm, b)))
        .collect();
    if pts.is_empty() {
        return Err(config_error("missing series 'bt_loss': enable trainer.telemetry.bt_every"));
    }
    let a: Vec<f64> = pts.iter().map(|p| p.1).collect();
    let b: Vec<f64> = pts.iter().map(|p| p.2).collect();
    let r = correlate(&a, &b).map_or_else(|e| format!("undefined ({e})"), |r| r.to_string());
    let mut csv = format!("# pearson={r}\nstep,grad_norm,bt_loss\n");
    for (step, g, l) in &pts {
        let _ = writeln!(csv, "{step},{g},{l}");
    }
    let xy: Vec<(f64, f64)> = a.into_iter().zip(b).collect();
    let svg_text = svg(&format!("post-peak, pearson = {r}"), "gradient norm", &[("bt_loss", xy)], false);
    write(out, "correlation", csv, svg_text)
}

pub fn plot(kind: PlotKind, paths: &[PathBuf], out: &Path, window: usize) -> anyhow::Result<PlotOutput> {
    match kind {
        PlotKind::Traces => traces(paths, out),
        PlotKind::Frontier => frontier(paths, out, window),
        PlotKind::Correlation => correlation(paths, out, window),
    }
}
