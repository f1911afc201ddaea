//! Text-only SVG line charts with a fixed viewbox, so golden-file
//! comparisons stay byte-stable.

use std::fmt::Write as _;

const PALETTE: [&str; 6] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b",
];

pub struct Series {
    pub label: String,
    pub values: Vec<f64>,
}

struct Panel<'a> {
    title: &'a str,
    series: &'a [Series],
}

const WIDTH: f64 = 800.0;
const PANEL_HEIGHT: f64 = 360.0;
const MARGIN_LEFT: f64 = 60.0;
const MARGIN_RIGHT: f64 = 160.0;
const MARGIN_TOP: f64 = 36.0;
const MARGIN_BOTTOM: f64 = 32.0;

/// Two stacked line-chart panels over a shared episode axis.
pub fn curves_svg(
    top_title: &str,
    top: &[Series],
    bottom_title: &str,
    bottom: &[Series],
) -> String {
    let height = PANEL_HEIGHT * 2.0;
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {WIDTH} {height}" font-family="monospace" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="{WIDTH}" height="{height}" fill="white"/>"#);
    draw_panel(&mut out, Panel { title: top_title, series: top }, 0.0);
    draw_panel(
        &mut out,
        Panel {
            title: bottom_title,
            series: bottom,
        },
        PANEL_HEIGHT,
    );
    out.push_str("</svg>\n");
    out
}

fn draw_panel(out: &mut String, panel: Panel<'_>, y_off: f64) {
    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = PANEL_HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let x0 = MARGIN_LEFT;
    let y0 = y_off + MARGIN_TOP;

    let points = panel
        .series
        .iter()
        .map(|s| s.values.len())
        .max()
        .unwrap_or(0);
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for s in panel.series {
        for &v in &s.values {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    if !lo.is_finite() || !hi.is_finite() {
        lo = 0.0;
        hi = 1.0;
    }
    if (hi - lo).abs() < 1e-12 {
        hi = lo + 1.0;
    }
    let pad = (hi - lo) * 0.05;
    let lo = lo - pad;
    let hi = hi + pad;

    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" font-size="14">{}</text>"#,
        x0,
        y0 - 14.0,
        panel.title
    );
    // Axes.
    let _ = writeln!(
        out,
        r#"<line x1="{x0:.2}" y1="{y0:.2}" x2="{x0:.2}" y2="{:.2}" stroke="black"/>"#,
        y0 + plot_h
    );
    let _ = writeln!(
        out,
        r#"<line x1="{x0:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="black"/>"#,
        y0 + plot_h,
        x0 + plot_w,
        y0 + plot_h
    );
    // Y-axis labels.
    for tick in 0..=4 {
        let frac = tick as f64 / 4.0;
        let value = lo + (hi - lo) * frac;
        let y = y0 + plot_h * (1.0 - frac);
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{:.2}</text>"#,
            x0 - 6.0,
            y + 4.0,
            value
        );
    }

    for (idx, series) in panel.series.iter().enumerate() {
        let color = PALETTE[idx % PALETTE.len()];
        if series.values.len() > 1 {
            let mut path = String::new();
            let denom = (points.max(2) - 1) as f64;
            for (i, &v) in series.values.iter().enumerate() {
                let x = x0 + plot_w * i as f64 / denom;
                let y = y0 + plot_h * (1.0 - (v - lo) / (hi - lo));
                let _ = write!(path, "{}{x:.2},{y:.2}", if i == 0 { "" } else { " " });
            }
            let _ = writeln!(
                out,
                r#"<polyline points="{path}" fill="none" stroke="{color}" stroke-width="1.5"/>"#
            );
        }
        let ly = y0 + 16.0 * idx as f64;
        let lx = x0 + plot_w + 12.0;
        let _ = writeln!(
            out,
            r#"<rect x="{lx:.2}" y="{:.2}" width="10" height="10" fill="{color}"/>"#,
            ly - 9.0
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{ly:.2}">{}</text>"#,
            lx + 14.0,
            series.label
        );
    }
}
