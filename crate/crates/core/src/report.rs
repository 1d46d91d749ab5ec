//! Markdown and SVG renderings of attribution reports and experiment summaries.

use std::fmt::Write as _;

use crate::attribution::AttributionReport;
use crate::experiment::ExperimentSummary;

/// Table with one row per stream: name, score, probability, deviation p-value,
/// changed flag.
pub fn report_markdown(report: &AttributionReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# Attribution for `{}`", report.target);
    let _ = writeln!(out);
    let _ = writeln!(out, "Target divergence (KL, nats): {:.4}", report.delta_y);
    let _ = writeln!(out, "Attributed total: {:.4}", report.efficiency_total);
    let _ = writeln!(out, "Normalisation: {}", report.normalisation);
    if report.degenerate {
        let _ = writeln!(out, "All scores are zero; probabilities are uniform.");
    }
    let _ = writeln!(out);
    let _ = writeln!(out, "| Node Name | Score | Probability | Deviation p | Changed |");
    let _ = writeln!(out, "|---|---|---|---|---|");
    let top = report.top().map(|r| r.stream.clone());
    for row in &report.rows {
        let (b, e) = if Some(&row.stream) == top.as_ref() { ("**", "**") } else { ("", "") };
        let _ = writeln!(
            out,
            "| {b}{}{e} | {b}{:.4}{e} | {b}{:.3}{e} | {:.4} | {} |",
            row.stream,
            row.score,
            row.probability,
            row.deviation.p_value,
            if row.deviation.changed { "yes" } else { "no" }
        );
    }
    for w in &report.warnings {
        let _ = writeln!(out, "\n> warning: {w}");
    }
    out
}

pub fn summary_markdown(summary: &ExperimentSummary) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "# {} experiment, fault `{}`",
        summary.pipeline,
        summary.fault.as_deref().unwrap_or("none")
    );
    let _ = writeln!(out);
    let _ = writeln!(
        out,
        "{} repeats, {} units per window, winner **{}**",
        summary.repeats, summary.n_units, summary.winner
    );
    let _ = writeln!(out);
    let _ = writeln!(out, "| Stream | Mean score | 95% CI | Welch t | Welch p |");
    let _ = writeln!(out, "|---|---|---|---|---|");
    for s in &summary.streams {
        let welch = summary.comparisons.iter().find(|c| c.stream == s.stream);
        let (t, p) = match welch {
            Some(c) => (format!("{:.3}", c.welch.t), format!("{:.2e}", c.welch.p)),
            None => ("-".into(), "-".into()),
        };
        let _ = writeln!(
            out,
            "| {} | {:.5} | ±{:.5} | {t} | {p} |",
            s.stream, s.mean, s.ci_half_width
        );
    }
    out
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Horizontal bar chart; `bars` holds (label, value, optional CI half-width).
fn bar_chart(title: &str, bars: &[(String, f64, Option<f64>)]) -> String {
    const ROW: f64 = 26.0;
    const LABEL_W: f64 = 260.0;
    const PLOT_W: f64 = 420.0;
    const TOP: f64 = 40.0;
    let height = TOP + ROW * bars.len() as f64 + 30.0;
    let width = LABEL_W + PLOT_W + 40.0;
    let lo = bars
        .iter()
        .map(|(_, v, ci)| v - ci.unwrap_or(0.0))
        .fold(0.0, f64::min);
    let hi = bars
        .iter()
        .map(|(_, v, ci)| v + ci.unwrap_or(0.0))
        .fold(0.0, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let x = |v: f64| LABEL_W + (v - lo) / span * PLOT_W;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<text x="10" y="20" font-size="14">{}</text>"#, escape(title));
    let zero = x(0.0);
    let _ = writeln!(
        svg,
        r##"<line x1="{zero:.1}" y1="{TOP}" x2="{zero:.1}" y2="{:.1}" stroke="#333"/>"##,
        TOP + ROW * bars.len() as f64
    );
    for (i, (label, value, ci)) in bars.iter().enumerate() {
        let y = TOP + ROW * i as f64;
        let (x0, x1) = if *value >= 0.0 { (zero, x(*value)) } else { (x(*value), zero) };
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
            LABEL_W - 8.0,
            y + ROW * 0.65,
            escape(label)
        );
        let _ = writeln!(
            svg,
            r##"<rect x="{x0:.1}" y="{:.1}" width="{:.1}" height="{:.1}" fill="#4878a8"/>"##,
            y + 4.0,
            (x1 - x0).max(0.5),
            ROW - 8.0
        );
        if let Some(h) = ci {
            let cy = y + ROW / 2.0;
            let _ = writeln!(
                svg,
                r##"<line x1="{:.1}" y1="{cy:.1}" x2="{:.1}" y2="{cy:.1}" stroke="#000"/>"##,
                x(value - h),
                x(value + h)
            );
        }
    }
    let _ = writeln!(
        svg,
        r#"<text x="{LABEL_W}" y="{:.1}">{lo:.4}</text><text x="{:.1}" y="{:.1}" text-anchor="end">{hi:.4}</text>"#,
        height - 8.0,
        LABEL_W + PLOT_W,
        height - 8.0
    );
    svg.push_str("</svg>\n");
    svg
}

pub fn report_svg(report: &AttributionReport) -> String {
    let bars: Vec<_> = report
        .rows
        .iter()
        .map(|r| (r.stream.clone(), r.score, None))
        .collect();
    bar_chart(&format!("Attribution scores for {}", report.target), &bars)
}

/// Mean score per stream with 95% confidence intervals.
pub fn summary_svg(summary: &ExperimentSummary) -> String {
    let bars: Vec<_> = summary
        .streams
        .iter()
        .map(|s| (s.stream.clone(), s.mean, Some(s.ci_half_width)))
        .collect();
    bar_chart(
        &format!(
            "{}: mean attribution score over {} repeats ({})",
            summary.pipeline,
            summary.repeats,
            summary.fault.as_deref().unwrap_or("no fault")
        ),
        &bars,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::summarise;
    use crate::simulator::Pipeline;

    #[test]
    fn summary_renderings_contain_every_stream() {
        let (streams, winner, comparisons) = summarise(vec![
            ("a<b".into(), vec![0.1, 0.2]),
            ("c".into(), vec![-0.05, 0.0]),
        ])
        .unwrap();
        let summary = ExperimentSummary {
            pipeline: Pipeline::Gcratio,
            fault: None,
            target: "c".into(),
            repeats: 2,
            n_units: 10,
            master_seed: 0,
            streams,
            winner,
            comparisons,
            delta_y: vec![0.0, 0.0],
        };
        let svg = summary_svg(&summary);
        assert!(svg.starts_with("<svg") && svg.contains("a&lt;b") && svg.trim_end().ends_with("</svg>"));
        let md = summary_markdown(&summary);
        assert!(md.contains("| c |") && md.contains("winner **a<b**"));
    }
}
