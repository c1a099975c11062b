//! Line charts of rejection rate against T, one panel per noise family and
//! effect size, one line per method.

use std::collections::BTreeSet;
use std::fmt::Write;

use crate::simlab::dgp::{Noise, Scenario};
use crate::simlab::study::{Method, StudyRow};

const PANEL_W: f64 = 260.0;
const PANEL_H: f64 = 200.0;
const MARGIN: f64 = 40.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

fn method_color(m: Method) -> &'static str {
    COLORS[m as usize % COLORS.len()]
}

/// Scenarios present in `rows`.
pub fn scenarios(rows: &[StudyRow]) -> Vec<Scenario> {
    rows.iter().map(|r| r.scenario).collect::<BTreeSet<_>>().into_iter().collect()
}

/// One SVG for `scenario`: rows of panels by delta, columns by noise family.
pub fn render_scenario(rows: &[StudyRow], scenario: Scenario, alpha: f64) -> String {
    let rows: Vec<&StudyRow> = rows.iter().filter(|r| r.scenario == scenario).collect();
    let noises: Vec<Noise> = rows.iter().map(|r| r.noise).collect::<BTreeSet<_>>().into_iter().collect();
    let methods: Vec<Method> = rows.iter().map(|r| r.method).collect::<BTreeSet<_>>().into_iter().collect();
    let mut deltas: Vec<f64> = rows.iter().map(|r| r.delta).collect();
    deltas.sort_by(f64::total_cmp);
    deltas.dedup();
    let ts: Vec<usize> = rows.iter().map(|r| r.horizon).collect::<BTreeSet<_>>().into_iter().collect();
    let (t_lo, t_hi) = (*ts.first().unwrap_or(&0) as f64, *ts.last().unwrap_or(&1) as f64);
    let x_of = |t: usize| if t_hi > t_lo { (t as f64 - t_lo) / (t_hi - t_lo) * PANEL_W } else { PANEL_W / 2.0 };
    let y_of = |rate: f64| PANEL_H * (1.0 - rate.clamp(0.0, 1.0));

    let cell_w = PANEL_W + 2.0 * MARGIN;
    let cell_h = PANEL_H + 2.0 * MARGIN;
    let width = cell_w * noises.len().max(1) as f64 + 140.0;
    let height = cell_h * deltas.len().max(1) as f64;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="11">"#
    );
    for (di, &delta) in deltas.iter().enumerate() {
        for (ni, &noise) in noises.iter().enumerate() {
            let (ox, oy) = (ni as f64 * cell_w + MARGIN, di as f64 * cell_h + MARGIN);
            let _ = writeln!(s, r#"<g transform="translate({ox},{oy})">"#);
            let _ = writeln!(s, r#"<rect width="{PANEL_W}" height="{PANEL_H}" fill="none" stroke="gray"/>"#);
            let _ = writeln!(s, r#"<text x="0" y="-8">{scenario}, {noise}, delta = {delta}</text>"#);
            let ya = y_of(alpha);
            let _ = writeln!(s, r#"<line x1="0" x2="{PANEL_W}" y1="{ya}" y2="{ya}" stroke="black" stroke-dasharray="4 3"/>"#);
            for tick in [0.0, 0.5, 1.0] {
                let _ = writeln!(s, r#"<text x="-30" y="{}">{tick:.1}</text>"#, y_of(tick) + 4.0);
            }
            for &t in &ts {
                let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{t}</text>"#, x_of(t), PANEL_H + 15.0);
            }
            for &method in &methods {
                let mut pts: Vec<(usize, f64)> = rows
                    .iter()
                    .filter(|r| r.delta == delta && r.noise == noise && r.method == method && r.rate.is_finite())
                    .map(|r| (r.horizon, r.rate))
                    .collect();
                pts.sort_by_key(|p| p.0);
                let poly: Vec<String> = pts.iter().map(|&(t, r)| format!("{:.2},{:.2}", x_of(t), y_of(r))).collect();
                let color = method_color(method);
                let _ = writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#, poly.join(" "));
                for &(t, r) in &pts {
                    let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#, x_of(t), y_of(r));
                }
            }
            let _ = writeln!(s, "</g>");
        }
    }
    let lx = cell_w * noises.len().max(1) as f64 + 10.0;
    for (i, &method) in methods.iter().enumerate() {
        let y = MARGIN + 18.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<rect x="{lx}" y="{}" width="12" height="12" fill="{}"/><text x="{}" y="{}">{method}</text>"#,
            y - 10.0,
            method_color(method),
            lx + 18.0,
            y
        );
    }
    s.push_str("</svg>\n");
    s
}
