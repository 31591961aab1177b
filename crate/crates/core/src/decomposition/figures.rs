// SPDX-License-Identifier: MIT OR Apache-2.0

//! Self-contained SVG renderings of a [`DeltaReport`].

use std::f64::consts::PI;
use std::fmt::Write as _;

use super::{DeltaReport, Timepoint};

const FONT: &str = "font-family=\"sans-serif\" font-size=\"11\"";

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

fn header(width: f64, height: f64) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" \
         viewBox=\"0 0 {width} {height}\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    )
}

/// Blue for negative, red for positive, white at zero.
fn diverging(value: f64, scale: f64) -> String {
    let t = if scale > 0.0 {
        (value / scale).clamp(-1.0, 1.0)
    } else {
        0.0
    };
    let fade = |t: f64| (255.0 * (1.0 - t.abs())).round() as u8;
    if t >= 0.0 {
        format!("#ff{0:02x}{0:02x}", fade(t))
    } else {
        format!("#{0:02x}{0:02x}ff", fade(t))
    }
}

fn max_abs_delta(report: &DeltaReport) -> f64 {
    report
        .actions
        .iter()
        .map(|d| d.mean_delta.abs())
        .fold(0.0, f64::max)
}

fn action_names(report: &DeltaReport) -> Vec<&str> {
    let mut names: Vec<&str> = Vec::new();
    for d in &report.actions {
        if names.last() != Some(&d.action.as_str()) {
            names.push(&d.action);
        }
    }
    names
}

/// One axis per category; baseline and steered polygons of the category
/// mean layer counts, averaged over timepoints.
pub fn radar_svg(report: &DeltaReport) -> String {
    let mut categories: Vec<&str> = Vec::new();
    for c in &report.categories {
        if !categories.contains(&c.category.as_str()) {
            categories.push(&c.category);
        }
    }
    let averaged = |cat: &str, steered: bool| {
        let rows: Vec<f64> = report
            .categories
            .iter()
            .filter(|c| c.category == cat)
            .map(|c| {
                if steered {
                    c.mean_steered
                } else {
                    c.mean_baseline
                }
            })
            .collect();
        rows.iter().sum::<f64>() / rows.len().max(1) as f64
    };
    let (cx, cy, r) = (220.0, 210.0, 150.0);
    let scale = report.window.len() as f64;
    let k = categories.len().max(1) as f64;
    let point = |i: usize, v: f64| {
        let angle = -PI / 2.0 + 2.0 * PI * i as f64 / k;
        (cx + r * v * angle.cos(), cy + r * v * angle.sin())
    };

    let mut svg = header(440.0, 440.0);
    for ring in 1..=4 {
        let _ = writeln!(
            svg,
            "<circle cx=\"{cx}\" cy=\"{cy}\" r=\"{:.1}\" fill=\"none\" stroke=\"#ddd\"/>",
            r * ring as f64 / 4.0
        );
    }
    for (i, cat) in categories.iter().enumerate() {
        let (x, y) = point(i, 1.0);
        let (lx, ly) = point(i, 1.15);
        let _ = writeln!(
            svg,
            "<line class=\"axis\" x1=\"{cx}\" y1=\"{cy}\" x2=\"{x:.2}\" y2=\"{y:.2}\" stroke=\"#999\"/>"
        );
        let _ = writeln!(
            svg,
            "<text x=\"{lx:.2}\" y=\"{ly:.2}\" text-anchor=\"middle\" {FONT}>{}</text>",
            escape(cat)
        );
    }
    for (steered, colour) in [(false, "#4477aa"), (true, "#cc3311")] {
        let points: Vec<String> = categories
            .iter()
            .enumerate()
            .map(|(i, cat)| {
                let (x, y) = point(i, averaged(cat, steered) / scale);
                format!("{x:.2},{y:.2}")
            })
            .collect();
        let _ = writeln!(
            svg,
            "<polygon class=\"{}\" points=\"{}\" fill=\"{colour}\" fill-opacity=\"0.2\" stroke=\"{colour}\"/>",
            if steered { "steered" } else { "baseline" },
            points.join(" ")
        );
    }
    let _ = writeln!(
        svg,
        "<text x=\"10\" y=\"430\" {FONT}>blue: baseline, red: steered (mean layer count of {})</text>",
        report.window.len()
    );
    svg.push_str("</svg>\n");
    svg
}

/// Diverging horizontal bars of per-action deltas, one panel per timepoint.
pub fn bars_svg(report: &DeltaReport) -> String {
    let names = action_names(report);
    let (label_w, panel_w, row_h, top) = (170.0, 200.0, 14.0, 30.0);
    let width = label_w + panel_w * 3.0 + 20.0;
    let height = top + row_h * names.len() as f64 + 20.0;
    let scale = max_abs_delta(report);
    let mut svg = header(width, height);
    for (p, timepoint) in Timepoint::ALL.into_iter().enumerate() {
        let x0 = label_w + panel_w * p as f64;
        let mid = x0 + panel_w / 2.0;
        let _ = writeln!(
            svg,
            "<text x=\"{mid}\" y=\"18\" text-anchor=\"middle\" {FONT}>{timepoint}</text>"
        );
        let _ = writeln!(
            svg,
            "<line x1=\"{mid}\" y1=\"{top}\" x2=\"{mid}\" y2=\"{:.1}\" stroke=\"#333\"/>",
            top + row_h * names.len() as f64
        );
        for (i, name) in names.iter().enumerate() {
            let Some(d) = report.action_delta(name, timepoint) else {
                continue;
            };
            let len = if scale > 0.0 {
                d.mean_delta / scale * (panel_w / 2.0 - 8.0)
            } else {
                0.0
            };
            let x = if len < 0.0 { mid + len } else { mid };
            let _ = writeln!(
                svg,
                "<rect class=\"bar\" x=\"{x:.2}\" y=\"{:.1}\" width=\"{:.2}\" height=\"{:.1}\" fill=\"{}\"/>",
                top + row_h * i as f64 + 2.0,
                len.abs(),
                row_h - 4.0,
                if d.mean_delta < 0.0 { "#4477aa" } else { "#cc3311" }
            );
        }
    }
    for (i, name) in names.iter().enumerate() {
        let _ = writeln!(
            svg,
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\" {FONT}>{}</text>",
            label_w - 6.0,
            top + row_h * (i as f64 + 0.8),
            escape(name)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

/// Action x timepoint grid of deltas.
pub fn heatmap_svg(report: &DeltaReport) -> String {
    let names = action_names(report);
    let (label_w, cell_w, cell_h, top) = (170.0, 110.0, 14.0, 30.0);
    let width = label_w + cell_w * 3.0 + 20.0;
    let height = top + cell_h * names.len() as f64 + 20.0;
    let scale = max_abs_delta(report);
    let mut svg = header(width, height);
    for (c, timepoint) in Timepoint::ALL.into_iter().enumerate() {
        let _ = writeln!(
            svg,
            "<text x=\"{:.1}\" y=\"18\" text-anchor=\"middle\" {FONT}>{timepoint}</text>",
            label_w + cell_w * (c as f64 + 0.5)
        );
    }
    for (r, name) in names.iter().enumerate() {
        let y = top + cell_h * r as f64;
        let _ = writeln!(
            svg,
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\" {FONT}>{}</text>",
            label_w - 6.0,
            y + cell_h * 0.8,
            escape(name)
        );
        for (c, timepoint) in Timepoint::ALL.into_iter().enumerate() {
            let delta = report
                .action_delta(name, timepoint)
                .map_or(0.0, |d| d.mean_delta);
            let _ = writeln!(
                svg,
                "<rect class=\"cell\" x=\"{:.1}\" y=\"{y:.1}\" width=\"{cell_w}\" height=\"{cell_h}\" \
                 fill=\"{}\" stroke=\"#eee\"><title>{} {timepoint}: {delta:+.3}</title></rect>",
                label_w + cell_w * c as f64,
                diverging(delta, scale),
                escape(name)
            );
        }
    }
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::super::{compute_deltas, AnalysisWindow, TimepointCapture};
    use super::*;
    use crate::taxonomy::builtin_taxonomy;
    use crate::tom_eval::ConditionTag;

    fn report() -> DeltaReport {
        let captures = |tag, v: f64| -> Vec<TimepointCapture> {
            Timepoint::ALL
                .into_iter()
                .map(|timepoint| TimepointCapture {
                    scenario_id: "s".into(),
                    timepoint,
                    condition_tag: tag,
                    confidences: (0..45)
                        .map(|a| vec![if a % 3 == 0 { v } else { 0.2 }; 11])
                        .collect(),
                })
                .collect()
        };
        compute_deltas(
            &captures(ConditionTag::Baseline, 0.2),
            &captures(ConditionTag::Steered, 0.9),
            &builtin_taxonomy(),
            AnalysisWindow::default(),
            0.5,
            10,
        )
        .unwrap()
    }

    #[test]
    fn heatmap_is_45_by_3() {
        let svg = heatmap_svg(&report());
        assert_eq!(svg.matches("<rect class=\"cell\"").count(), 135);
        assert!(svg.contains("#ff0000"));
    }

    #[test]
    fn radar_has_one_axis_per_category() {
        let svg = radar_svg(&report());
        assert_eq!(svg.matches("class=\"axis\"").count(), 5);
        assert_eq!(svg.matches("<polygon").count(), 2);
    }

    #[test]
    fn bars_per_action_and_timepoint() {
        assert_eq!(bars_svg(&report()).matches("class=\"bar\"").count(), 135);
    }

    #[test]
    fn colour_scale() {
        assert_eq!(diverging(0.0, 1.0), "#ffffff");
        assert_eq!(diverging(-2.0, 1.0), "#0000ff");
        assert_eq!(diverging(0.5, 0.0), "#ffffff");
    }
}
