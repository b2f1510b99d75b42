//! Minimal SVG line charts for trial results.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use tri_core::detectors::AlarmThresholds;

use crate::bench::summarize;
use crate::error::Result;
use crate::trial::TrialResult;

const W: f64 = 720.0;
const H: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;
const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf"];

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Chart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
    /// Dashed reference lines at these y values.
    pub hlines: Vec<f64>,
    /// Dashed reference lines at these x values.
    pub vlines: Vec<f64>,
    pub log_x: bool,
    pub log_y: bool,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

impl Chart {
    fn tx(&self, x: f64) -> Option<f64> {
        if self.log_x {
            (x > 0.0).then(|| x.log10())
        } else {
            Some(x)
        }
    }

    fn ty(&self, y: f64) -> Option<f64> {
        if self.log_y {
            (y > 0.0).then(|| y.log10())
        } else {
            Some(y)
        }
    }

    fn bounds(&self) -> (f64, f64, f64, f64) {
        let mut xs: Vec<f64> = Vec::new();
        let mut ys: Vec<f64> = Vec::new();
        for s in &self.series {
            for &(x, y) in &s.points {
                if let (Some(x), Some(y)) = (self.tx(x), self.ty(y)) {
                    if x.is_finite() && y.is_finite() {
                        xs.push(x);
                        ys.push(y);
                    }
                }
            }
        }
        ys.extend(self.hlines.iter().filter_map(|&y| self.ty(y)));
        let span = |v: &[f64]| {
            let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            match (lo.is_finite(), hi > lo) {
                (true, true) => (lo, hi),
                (true, false) => (lo - 0.5, lo + 0.5),
                _ => (0.0, 1.0),
            }
        };
        let (x0, x1) = span(&xs);
        let (y0, y1) = span(&ys);
        let pad = 0.05 * (y1 - y0);
        (x0, x1, y0 - pad, y1 + pad)
    }

    pub fn to_svg(&self) -> String {
        let (x0, x1, y0, y1) = self.bounds();
        let pw = W - LEFT - RIGHT;
        let ph = H - TOP - BOTTOM;
        let px = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
        let py = |y: f64| TOP + (1.0 - (y - y0) / (y1 - y0)) * ph;
        let label = |v: f64, log: bool| {
            let v = if log { 10f64.powf(v) } else { v };
            if v != 0.0 && (v.abs() < 1e-2 || v.abs() >= 1e4) {
                format!("{v:.0e}")
            } else {
                format!("{v:.3}").trim_end_matches('0').trim_end_matches('.').to_string()
            }
        };

        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
            LEFT + pw / 2.0,
            escape(&self.title)
        );
        let _ = writeln!(
            s,
            r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
        );
        for i in 0..=5 {
            let f = i as f64 / 5.0;
            let xv = x0 + f * (x1 - x0);
            let yv = y0 + f * (y1 - y0);
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
                px(xv),
                TOP + ph + 18.0,
                label(xv, self.log_x)
            );
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
                LEFT - 6.0,
                py(yv) + 4.0,
                label(yv, self.log_y)
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            LEFT + pw / 2.0,
            H - 10.0,
            escape(&self.x_label)
        );
        let _ = writeln!(
            s,
            r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">{}</text>"#,
            TOP + ph / 2.0,
            TOP + ph / 2.0,
            escape(&self.y_label)
        );
        for &y in &self.hlines {
            if let Some(y) = self.ty(y).filter(|y| (y0..=y1).contains(y)) {
                let _ = writeln!(
                    s,
                    r#"<line x1="{LEFT}" x2="{:.1}" y1="{:.1}" y2="{:.1}" stroke="gray" stroke-dasharray="4 3"/>"#,
                    LEFT + pw,
                    py(y),
                    py(y)
                );
            }
        }
        for &x in &self.vlines {
            if let Some(x) = self.tx(x).filter(|x| (x0..=x1).contains(x)) {
                let _ = writeln!(
                    s,
                    r#"<line x1="{:.1}" x2="{:.1}" y1="{TOP}" y2="{:.1}" stroke="gray" stroke-dasharray="4 3"/>"#,
                    px(x),
                    px(x),
                    TOP + ph
                );
            }
        }
        for (i, series) in self.series.iter().enumerate() {
            let color = PALETTE[i % PALETTE.len()];
            let pts: Vec<String> = series
                .points
                .iter()
                .filter_map(|&(x, y)| Some((self.tx(x)?, self.ty(y)?)))
                .filter(|(x, y)| x.is_finite() && y.is_finite())
                .map(|(x, y)| format!("{:.1},{:.1}", px(x), py(y)))
                .collect();
            if pts.is_empty() {
                continue;
            }
            let _ = writeln!(
                s,
                r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
                pts.join(" ")
            );
            let ly = TOP + 14.0 + 18.0 * i as f64;
            let _ = writeln!(
                s,
                r#"<line x1="{:.1}" x2="{:.1}" y1="{ly:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="2"/><text x="{:.1}" y="{:.1}">{}</text>"#,
                W - RIGHT + 10.0,
                W - RIGHT + 30.0,
                W - RIGHT + 35.0,
                ly + 4.0,
                escape(&series.name)
            );
        }
        s.push_str("</svg>\n");
        s
    }
}

/// Mean of the TRI fields across trials at each evaluation instant.
fn mean_tri_series(rs: &[&TrialResult], field: fn(&tri_core::tri::TriSample) -> f64) -> Vec<(f64, f64)> {
    let mut ts: Vec<u64> = rs.iter().flat_map(|r| r.tri.iter().map(|s| s.t)).collect();
    ts.sort_unstable();
    ts.dedup();
    ts.into_iter()
        .filter_map(|t| {
            let v: Vec<f64> = rs.iter().filter_map(|r| r.tri_at(t)).map(field).collect();
            (!v.is_empty()).then(|| (t as f64, v.iter().sum::<f64>() / v.len() as f64))
        })
        .collect()
}

fn binned_ber(rs: &[&TrialResult], bin: u64) -> Vec<(f64, f64)> {
    let horizon = rs.iter().map(|r| r.t0 + r.ber.len() as u64).max().unwrap_or(0);
    (0..)
        .map(|i| 1 + i * bin)
        .take_while(|&lo| lo < horizon)
        .map(|lo| {
            let v: Vec<f64> = rs.iter().map(|r| r.mean_ber(lo, lo + bin)).filter(|x| x.is_finite()).collect();
            ((lo + bin / 2) as f64, v.iter().sum::<f64>() / v.len().max(1) as f64)
        })
        .collect()
}

/// Writes one TRI and one BER figure per scenario, plus the lead-versus-rate
/// figure. Returns the written paths.
pub fn plot_results(results: &[TrialResult], out: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out)?;
    let th = AlarmThresholds::default();
    let mut written = Vec::new();
    let mut names: Vec<&str> = results.iter().map(|r| r.scenario.as_str()).collect();
    names.dedup();

    for name in names {
        let rs: Vec<&TrialResult> = results.iter().filter(|r| r.scenario == name).collect();
        let t_star = rs[0].t_star as f64;
        let tri = Chart {
            title: format!("{name}: index and components ({} trials)", rs.len()),
            x_label: "symbol".into(),
            y_label: "value".into(),
            series: vec![
                Series { name: "TRI".into(), points: mean_tri_series(&rs, |s| s.tri) },
                Series { name: "Φ_LS".into(), points: mean_tri_series(&rs, |s| s.phi_ls) },
                Series { name: "Φ_PM".into(), points: mean_tri_series(&rs, |s| s.phi_pm) },
                Series { name: "Φ_CM (smoothed)".into(), points: mean_tri_series(&rs, |s| s.phi_cm_smoothed) },
            ],
            hlines: vec![th.tri],
            vlines: vec![t_star],
            ..Chart::default()
        };
        let ber = Chart {
            title: format!("{name}: BER"),
            x_label: "symbol".into(),
            y_label: "BER (20-symbol bins)".into(),
            series: vec![Series { name: "BER".into(), points: binned_ber(&rs, 20) }],
            hlines: vec![th.ber],
            vlines: vec![t_star],
            log_y: true,
            ..Chart::default()
        };
        for (chart, suffix) in [(tri, "tri"), (ber, "ber")] {
            let path = out.join(format!("{name}_{suffix}.svg"));
            fs::write(&path, chart.to_svg())?;
            written.push(path);
        }
    }

    // Lead against rate, one line per transition and mode.
    let rows = summarize(results);
    let mut lines: Vec<(String, Vec<(f64, f64)>)> = Vec::new();
    for (row, r) in rows.iter().zip(rows.iter().map(|row| results.iter().find(|r| r.scenario == row.scenario))) {
        let (Some(r), Some(lead)) = (r, row.tri_lead.mean) else { continue };
        let key = format!("{} {}", r.scenario.split('_').next().unwrap_or(&r.scenario), row.mode);
        match lines.iter_mut().find(|(k, _)| *k == key) {
            Some((_, pts)) => pts.push((row.lambda, lead)),
            None => lines.push((key, vec![(row.lambda, lead)])),
        }
    }
    if !lines.is_empty() {
        let chart = Chart {
            title: "TRI warning lead against shift rate".into(),
            x_label: "λ".into(),
            y_label: "mean lead (symbols)".into(),
            series: lines
                .into_iter()
                .map(|(name, mut points)| {
                    points.sort_by(|a, b| a.0.total_cmp(&b.0));
                    Series { name, points }
                })
                .collect(),
            hlines: vec![0.0],
            log_x: true,
            ..Chart::default()
        };
        let path = out.join("lead_vs_lambda.svg");
        fs::write(&path, chart.to_svg())?;
        written.push(path);
    }
    Ok(written)
}
