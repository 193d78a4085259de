//! Campaign statistics rendered as CSV, JSON and SVG bar charts.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::Result;
use crate::stats::{CampaignStats, GroupStats};

pub const CSV_HEADER: &str = "group,n,masked,noncrit,crit,f_noncrit,f_noncrit_lo,f_noncrit_hi,f_crit,f_crit_lo,f_crit_hi";

/// One row per group, then the class rollup, then the total.
pub fn stats_to_csv(stats: &CampaignStats) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for g in stats.rows() {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            g.group,
            g.n,
            g.masked,
            g.noncrit,
            g.crit,
            g.f_noncrit,
            g.f_noncrit_lo,
            g.f_noncrit_hi,
            g.f_crit,
            g.f_crit_lo,
            g.f_crit_hi
        );
    }
    out
}

pub fn stats_to_json(stats: &CampaignStats) -> Result<String> {
    let mut s = serde_json::to_string_pretty(stats)?;
    s.push('\n');
    Ok(s)
}

pub fn write_stats_csv(stats: &CampaignStats, path: &Path) -> Result<()> {
    fs::write(path, stats_to_csv(stats))?;
    Ok(())
}

pub fn write_stats_json(stats: &CampaignStats, path: &Path) -> Result<()> {
    fs::write(path, stats_to_json(stats)?)?;
    Ok(())
}

pub fn load_stats(path: &Path) -> Result<CampaignStats> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

const PALETTE: [&str; 6] = ["#4477aa", "#ee6677", "#228833", "#ccbb44", "#66ccee", "#aa3377"];
const PANEL_W: f64 = 560.0;
const PANEL_H: f64 = 300.0;
const MARGIN_L: f64 = 60.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 110.0;
const GAP: f64 = 40.0;

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn series_label(s: &CampaignStats, i: usize) -> String {
    match (s.model.is_empty(), s.sa.is_empty()) {
        (true, true) => format!("series {i}"),
        (true, false) => s.sa.clone(),
        (false, true) => s.model.clone(),
        (false, false) => format!("{} {}", s.model, s.sa),
    }
}

type Interval = fn(&GroupStats) -> (f64, f64, f64);

/// Paired panels (F_crit left, F_noncrit right). Each panel holds one
/// cluster per register group with one bar per entry of `series`, plus
/// Wilson interval whiskers.
pub fn render_svg(series: &[CampaignStats]) -> String {
    let mut groups: Vec<String> = Vec::new();
    for s in series {
        for g in &s.groups {
            if !groups.contains(&g.group) {
                groups.push(g.group.clone());
            }
        }
    }
    let width = MARGIN_L * 2.0 + PANEL_W * 2.0 + GAP;
    let height = MARGIN_T + PANEL_H + MARGIN_B;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(svg, r#"<rect width="{width}" height="{height}" fill="white"/>"#);

    let panels: [(&str, Interval); 2] = [
        ("F_crit", |g| (g.f_crit, g.f_crit_lo, g.f_crit_hi)),
        ("F_noncrit", |g| (g.f_noncrit, g.f_noncrit_lo, g.f_noncrit_hi)),
    ];
    for (p, (title, metric)) in panels.iter().enumerate() {
        let x0 = MARGIN_L + p as f64 * (PANEL_W + GAP);
        let y0 = MARGIN_T;
        let ymax = series
            .iter()
            .flat_map(|s| s.groups.iter().map(|g| metric(g).2))
            .fold(0.0f64, f64::max);
        let ymax = if ymax <= 0.0 { 1.0 } else { (ymax * 10.0).ceil() / 10.0 };
        let _ = writeln!(
            svg,
            r#"<g class="panel" data-metric="{title}"><text x="{}" y="{}" text-anchor="middle" font-size="13">{title}</text>"#,
            x0 + PANEL_W / 2.0,
            y0 - 15.0
        );
        let _ = writeln!(
            svg,
            r#"<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{}" stroke="black"/><line x1="{x0}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#,
            y0 + PANEL_H,
            y0 + PANEL_H,
            x0 + PANEL_W,
            y0 + PANEL_H
        );
        for t in 0..=5 {
            let v = ymax * t as f64 / 5.0;
            let y = y0 + PANEL_H - PANEL_H * t as f64 / 5.0;
            let _ = writeln!(
                svg,
                r#"<text x="{}" y="{}" text-anchor="end">{:.0}%</text>"#,
                x0 - 4.0,
                y + 4.0,
                v * 100.0
            );
        }
        let cluster = if groups.is_empty() { PANEL_W } else { PANEL_W / groups.len() as f64 };
        let bar_w = cluster * 0.8 / series.len().max(1) as f64;
        for (gi, name) in groups.iter().enumerate() {
            let cx = x0 + cluster * gi as f64;
            for (si, s) in series.iter().enumerate() {
                let Some(g) = s.groups.iter().find(|g| &g.group == name) else {
                    continue;
                };
                let (v, lo, hi) = metric(g);
                let h = PANEL_H * v / ymax;
                let x = cx + cluster * 0.1 + bar_w * si as f64;
                let _ = writeln!(
                    svg,
                    r#"<rect class="bar" data-group="{}" data-series="{}" data-value="{v}" x="{x:.2}" y="{:.2}" width="{bar_w:.2}" height="{h:.2}" fill="{}"/>"#,
                    esc(name),
                    esc(&series_label(s, si)),
                    y0 + PANEL_H - h,
                    PALETTE[si % PALETTE.len()]
                );
                let mx = x + bar_w / 2.0;
                let _ = writeln!(
                    svg,
                    r#"<line class="ci" x1="{mx:.2}" y1="{:.2}" x2="{mx:.2}" y2="{:.2}" stroke="black"/>"#,
                    y0 + PANEL_H - PANEL_H * lo / ymax,
                    y0 + PANEL_H - PANEL_H * hi / ymax
                );
            }
            let lx = cx + cluster / 2.0;
            let ly = y0 + PANEL_H + 8.0;
            let _ = writeln!(
                svg,
                r#"<text x="{lx:.2}" y="{ly:.2}" text-anchor="end" transform="rotate(-45 {lx:.2} {ly:.2})">{}</text>"#,
                esc(name)
            );
        }
        svg.push_str("</g>\n");
    }
    for (si, s) in series.iter().enumerate() {
        let x = MARGIN_L + 120.0 * si as f64;
        let y = height - 14.0;
        let _ = writeln!(
            svg,
            r#"<rect class="legend" x="{x}" y="{}" width="10" height="10" fill="{}"/><text x="{}" y="{y}">{}</text>"#,
            y - 9.0,
            PALETTE[si % PALETTE.len()],
            x + 14.0,
            esc(&series_label(s, si))
        );
    }
    svg.push_str("</svg>\n");
    svg
}

pub fn write_svg(series: &[CampaignStats], path: &Path) -> Result<()> {
    fs::write(path, render_svg(series))?;
    Ok(())
}
