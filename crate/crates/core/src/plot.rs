//! Hand-written SVG charts for experiment results.
//!
//! Output is a pure function of the result: coordinates are printed with a
//! fixed number of decimals and nothing time- or environment-dependent is
//! embedded, so identical results give identical bytes.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::losses::ProbHistogram;
use crate::runner::ExperimentResult;

const W: f64 = 480.0;
const H: f64 = 320.0;
const LEFT: f64 = 56.0;
const RIGHT: f64 = 16.0;
const TOP: f64 = 36.0;
const BOTTOM: f64 = 44.0;
const LESION_COLOR: &str = "#1f5fbf";
const NORMAL_COLOR: &str = "#c8322d";

/// Writes a PR curve, a probability histogram and a size-strata chart per
/// result into `dir`. Returns the written paths; an empty slice writes nothing.
pub fn emit_plots(results: &[ExperimentResult], dir: &Path) -> Result<Vec<PathBuf>> {
    if results.is_empty() {
        return Ok(Vec::new());
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::with_capacity(3 * results.len());
    for r in results {
        let stem = plot_stem(r);
        for (suffix, svg) in [
            ("pr", pr_svg(r)),
            ("hist", histogram_svg(r)),
            ("strata", strata_svg(r)),
        ] {
            let path = dir.join(format!("{stem}_{suffix}.svg"));
            fs::write(&path, svg).map_err(|e| Error::io(&path, e))?;
            written.push(path);
        }
    }
    Ok(written)
}

fn plot_stem(r: &ExperimentResult) -> String {
    format!("n{}_{}_{}", r.n_train_cases, crate::runner::mode_slug(r.censor.mode), r.cell)
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

struct Canvas {
    out: String,
}

impl Canvas {
    fn new(title: &str) -> Self {
        let mut out = String::new();
        let _ = writeln!(
            out,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">"#
        );
        let _ = writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="20" text-anchor="middle" font-size="13">{}</text>"#,
            W / 2.0,
            esc(title)
        );
        Self { out }
    }

    fn px(x: f64) -> f64 {
        LEFT + x.clamp(0.0, 1.0) * (W - LEFT - RIGHT)
    }

    fn py(y: f64) -> f64 {
        H - BOTTOM - y.clamp(0.0, 1.0) * (H - TOP - BOTTOM)
    }

    fn axes(&mut self, xlabel: &str, ylabel: &str, xticks: &[(f64, String)]) {
        let (x0, x1, y0, y1) = (Self::px(0.0), Self::px(1.0), Self::py(0.0), Self::py(1.0));
        let _ = writeln!(
            self.out,
            r#"<path d="M{x0:.2},{y1:.2} L{x0:.2},{y0:.2} L{x1:.2},{y0:.2}" fill="none" stroke="black"/>"#
        );
        for i in 0..=4 {
            let v = i as f64 / 4.0;
            let y = Self::py(v);
            let _ = writeln!(
                self.out,
                r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{v:.2}</text>"#,
                x0 - 4.0,
                y + 4.0
            );
        }
        for (v, label) in xticks {
            let _ = writeln!(
                self.out,
                r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
                Self::px(*v),
                y0 + 14.0,
                esc(label)
            );
        }
        let _ = writeln!(
            self.out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            (x0 + x1) / 2.0,
            H - 8.0,
            esc(xlabel)
        );
        let _ = writeln!(
            self.out,
            r#"<text x="14" y="{:.2}" text-anchor="middle" transform="rotate(-90 14 {:.2})">{}</text>"#,
            (y0 + y1) / 2.0,
            (y0 + y1) / 2.0,
            esc(ylabel)
        );
    }

    fn finish(mut self) -> String {
        self.out.push_str("</svg>\n");
        self.out
    }
}

fn unit_ticks() -> Vec<(f64, String)> {
    (0..=4).map(|i| (i as f64 / 4.0, format!("{:.2}", i as f64 / 4.0))).collect()
}

/// Step PR curve, recall on x.
pub fn pr_svg(r: &ExperimentResult) -> String {
    let s = &r.evaluation.summary;
    let mut c = Canvas::new(&format!("{}  mAP {:.3}", r.loss_label, s.map));
    c.axes("recall", "precision", &unit_ticks());
    let mut d = String::new();
    let mut prev_recall = 0.0;
    for (i, p) in r.evaluation.pr_curve.points.iter().enumerate() {
        let (x0, x1, y) = (Canvas::px(prev_recall), Canvas::px(p.recall), Canvas::py(p.precision));
        let _ = write!(d, "{}{x0:.2},{y:.2} L{x1:.2},{y:.2} ", if i == 0 { "M" } else { "L" });
        prev_recall = p.recall;
    }
    if !d.is_empty() {
        let _ = writeln!(
            c.out,
            r#"<path d="{}" fill="none" stroke="{LESION_COLOR}" stroke-width="1.5"/>"#,
            d.trim_end()
        );
    }
    c.finish()
}

fn hist_bars(c: &mut Canvas, h: &ProbHistogram, color: &str, class: &str, peak: f64) {
    let n = h.counts.len() as f64;
    let total = h.total().max(1) as f64;
    let bw = (W - LEFT - RIGHT) / n;
    for (i, &count) in h.counts.iter().enumerate() {
        if count == 0 {
            continue;
        }
        let frac = count as f64 / total / peak;
        let (x, y) = (Canvas::px(i as f64 / n), Canvas::py(frac));
        let _ = writeln!(
            c.out,
            r#"<rect class="{class}" data-count="{count}" x="{x:.2}" y="{y:.2}" width="{bw:.2}" height="{:.2}" fill="{color}" fill-opacity="0.55"/>"#,
            Canvas::py(0.0) - y
        );
    }
}

/// Renormalised histograms of predicted lesion probability over ground-truth
/// lesion voxels (blue) and normal voxels (red). Each `rect` carries its raw
/// voxel count in `data-count`.
pub fn histogram_svg(r: &ExperimentResult) -> String {
    let e = &r.evaluation;
    let peak = [&e.lesion_hist, &e.normal_hist]
        .iter()
        .flat_map(|h| {
            let t = h.total().max(1) as f64;
            h.counts.iter().map(move |&c| c as f64 / t)
        })
        .fold(0.0f64, f64::max)
        .max(f64::MIN_POSITIVE);
    let mut c = Canvas::new(&format!(
        "{}  H(lesion) {:.2}  H(normal) {:.2}",
        r.loss_label, e.entropy.lesion_h, e.entropy.normal_h
    ));
    c.axes("predicted lesion probability", "relative frequency (scaled)", &unit_ticks());
    hist_bars(&mut c, &e.normal_hist, NORMAL_COLOR, "normal", peak);
    hist_bars(&mut c, &e.lesion_hist, LESION_COLOR, "lesion", peak);
    let _ = writeln!(
        c.out,
        r#"<text x="{:.2}" y="{:.2}" fill="{LESION_COLOR}">GT lesion</text>"#,
        W - RIGHT - 90.0,
        TOP + 12.0
    );
    let _ = writeln!(
        c.out,
        r#"<text x="{:.2}" y="{:.2}" fill="{NORMAL_COLOR}">GT normal</text>"#,
        W - RIGHT - 90.0,
        TOP + 26.0
    );
    c.finish()
}

/// Detection rate per equivalent-diameter bin, annotated with counts.
pub fn strata_svg(r: &ExperimentResult) -> String {
    let strata = &r.evaluation.strata;
    let mut c = Canvas::new(&format!("{}  detection rate by diameter", r.loss_label));
    let n = strata.len().max(1) as f64;
    let ticks: Vec<(f64, String)> = strata
        .iter()
        .enumerate()
        .map(|(i, s)| ((i as f64 + 0.5) / n, s.label()))
        .collect();
    c.axes("equivalent diameter (mm)", "detection rate", &ticks);
    let slot = (W - LEFT - RIGHT) / n;
    for (i, s) in strata.iter().enumerate() {
        let rate = s.detection_rate().unwrap_or(0.0);
        let x = Canvas::px(i as f64 / n) + slot * 0.15;
        let y = Canvas::py(rate);
        let _ = writeln!(
            c.out,
            r#"<rect x="{x:.2}" y="{y:.2}" width="{:.2}" height="{:.2}" fill="{LESION_COLOR}"/>"#,
            slot * 0.7,
            Canvas::py(0.0) - y
        );
        let _ = writeln!(
            c.out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}/{}</text>"#,
            x + slot * 0.35,
            y - 4.0,
            s.n_detected,
            s.n_gt
        );
    }
    c.finish()
}
