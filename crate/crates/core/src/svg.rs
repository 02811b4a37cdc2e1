//! Minimal SVG line chart of log-error and log-bound against time.

use std::fmt::Write;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 420.0;
const MARGIN: f64 = 60.0;
/// Values at or below this are drawn at this level on the log axis.
const LOG_FLOOR: f64 = 1e-16;

pub struct ChartSeries<'a> {
    pub t: &'a [usize],
    pub err: &'a [f64],
    pub bound: &'a [f64],
    pub violated: &'a [bool],
}

fn log10_clamped(v: f64) -> f64 {
    if v.is_finite() {
        v.max(LOG_FLOOR).log10()
    } else {
        LOG_FLOOR.log10()
    }
}

pub fn error_bound_chart(title: &str, s: &ChartSeries) -> String {
    let le: Vec<f64> = s.err.iter().copied().map(log10_clamped).collect();
    let lb: Vec<f64> = s.bound.iter().copied().map(log10_clamped).collect();
    let (mut lo, mut hi) = le
        .iter()
        .chain(&lb)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
    if !lo.is_finite() {
        lo = -1.0;
        hi = 1.0;
    }
    if hi - lo < 1e-9 {
        lo -= 1.0;
        hi += 1.0;
    }
    let t_max = s.t.last().copied().unwrap_or(1).max(1) as f64;
    let px = |t: usize| MARGIN + (WIDTH - 2.0 * MARGIN) * t as f64 / t_max;
    let py = |v: f64| HEIGHT - MARGIN - (HEIGHT - 2.0 * MARGIN) * (v - lo) / (hi - lo);

    let polyline = |vals: &[f64]| {
        s.t.iter()
            .zip(vals)
            .map(|(t, v)| format!("{:.2},{:.2}", px(*t), py(*v)))
            .collect::<Vec<_>>()
            .join(" ")
    };

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="24" text-anchor="middle" font-family="sans-serif" font-size="15">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
    let x0 = MARGIN;
    let x1 = WIDTH - MARGIN;
    let y0 = HEIGHT - MARGIN;
    let y1 = MARGIN;
    let _ = writeln!(
        out,
        r#"<path d="M{x0},{y1} L{x0},{y0} L{x1},{y0}" stroke="black" fill="none"/>"#
    );
    for (v, anchor_y) in [(lo, y0), (hi, y1)] {
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{anchor_y:.2}" text-anchor="end" font-family="sans-serif" font-size="11">1e{v:.1}</text>"#,
            x0 - 6.0
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{x1}" y="{}" text-anchor="end" font-family="sans-serif" font-size="11">t = {t_max}</text>"#,
        y0 + 18.0
    );
    let _ = writeln!(
        out,
        r#"<polyline class="series-bound" points="{}" fill="none" stroke="steelblue" stroke-width="1.5"/>"#,
        polyline(&lb)
    );
    let _ = writeln!(
        out,
        r#"<polyline class="series-error" points="{}" fill="none" stroke="darkorange" stroke-width="1.5"/>"#,
        polyline(&le)
    );
    for ((t, v), bad) in s.t.iter().zip(&le).zip(s.violated) {
        if *bad {
            let _ = writeln!(
                out,
                r#"<circle class="violation" cx="{:.2}" cy="{:.2}" r="3.5" fill="red"/>"#,
                px(*t),
                py(*v)
            );
        }
    }
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" font-family="sans-serif" font-size="12" fill="darkorange">log10 error</text>"#,
        x1 - 160.0,
        y1 + 4.0
    );
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" font-family="sans-serif" font-size="12" fill="steelblue">log10 bound</text>"#,
        x1 - 160.0,
        y1 + 20.0
    );
    out.push_str("</svg>\n");
    out
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
