//! Static SVG rendering of a distortion histogram.

use std::fmt::Write;

use jldict::embed::DistortionReport;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 360.0;
const MARGIN: f64 = 48.0;

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Columns for the histogram bins, a solid line at ratio 1 and dashed lines
/// at `1 ± ε`.
pub fn histogram_svg(report: &DistortionReport, title: &str) -> String {
    let bins = &report.histogram;
    let lo = bins.first().map_or(0.0, |b| b.lo);
    let hi = bins.last().map_or(1.0, |b| b.hi);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let max_count = bins.iter().map(|b| b.count).max().unwrap_or(0).max(1) as f64;
    let plot_w = WIDTH - 2.0 * MARGIN;
    let plot_h = HEIGHT - 2.0 * MARGIN;
    let x_of = |v: f64| MARGIN + (v - lo) / span * plot_w;
    let base = HEIGHT - MARGIN;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(s, r#"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="24" text-anchor="middle" font-family="sans-serif" font-size="14">{}</text>"#,
        WIDTH / 2.0,
        xml_escape(title)
    );
    for b in bins {
        let h = b.count as f64 / max_count * plot_h;
        let x = x_of(b.lo);
        let w = (x_of(b.hi) - x).max(0.5);
        let _ = writeln!(
            s,
            r##"<rect x="{x:.3}" y="{:.3}" width="{w:.3}" height="{h:.3}" fill="#4a7ab5" stroke="white" stroke-width="0.5"/>"##,
            base - h
        );
    }
    let _ = writeln!(
        s,
        r#"<line x1="{MARGIN}" y1="{base}" x2="{}" y2="{base}" stroke="black"/>"#,
        WIDTH - MARGIN
    );
    let mut vline = |v: f64, dash: bool| {
        if v < lo || v > hi {
            return;
        }
        let x = x_of(v);
        let style = if dash { r#" stroke-dasharray="6 4""# } else { "" };
        let _ = writeln!(
            s,
            r##"<line x1="{x:.3}" y1="{MARGIN}" x2="{x:.3}" y2="{base}" stroke="#c0392b"{style}/>"##
        );
    };
    vline(1.0, false);
    if report.epsilon > 0.0 {
        vline(1.0 - report.epsilon, true);
        vline(1.0 + report.epsilon, true);
    }
    for (v, anchor) in [(lo, "start"), (hi, "end")] {
        let _ = writeln!(
            s,
            r#"<text x="{:.3}" y="{}" text-anchor="{anchor}" font-family="sans-serif" font-size="11">{v:.3}</text>"#,
            x_of(v),
            base + 16.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="12">squared distance ratio</text>"#,
        WIDTH / 2.0,
        HEIGHT - 10.0
    );
    s.push_str("</svg>\n");
    s
}
