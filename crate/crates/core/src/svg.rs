//! Minimal SVG line plots: ensemble mean with a ±stderr band and the
//! master-equation curve on the same axes.

use std::fmt::Write as _;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 50.0;

pub struct Series<'a> {
    pub label: &'a str,
    pub values: &'a [f64],
    pub colour: &'a str,
    /// Half-width of a shaded band around the line.
    pub band: Option<&'a [f64]>,
}

pub fn line_plot(title: &str, times: &[f64], series: &[Series<'_>]) -> String {
    let (t_lo, t_hi) = bounds(times.iter().copied());
    let (mut y_lo, mut y_hi) = bounds(series.iter().flat_map(|s| {
        s.values.iter().enumerate().flat_map(move |(k, &v)| {
            let b = s.band.map_or(0.0, |b| b[k]);
            [v - b, v + b]
        })
    }));
    if y_hi - y_lo < 1e-12 {
        y_lo -= 0.5;
        y_hi += 0.5;
    }
    let t_span = if t_hi > t_lo { t_hi - t_lo } else { 1.0 };
    let x = |t: f64| MARGIN + (t - t_lo) / t_span * (WIDTH - 2.0 * MARGIN);
    let y = |v: f64| HEIGHT - MARGIN - (v - y_lo) / (y_hi - y_lo) * (HEIGHT - 2.0 * MARGIN);

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="20" text-anchor="middle">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
    let (x0, x1, y0, y1) = (MARGIN, WIDTH - MARGIN, HEIGHT - MARGIN, MARGIN);
    let _ = writeln!(
        out,
        r#"<path d="M{x0},{y1} L{x0},{y0} L{x1},{y0}" fill="none" stroke="black"/>"#
    );
    let _ = writeln!(
        out,
        r#"<text x="{x0}" y="{}" text-anchor="middle">{t_lo:.3}</text>"#,
        y0 + 16.0
    );
    let _ = writeln!(
        out,
        r#"<text x="{x1}" y="{}" text-anchor="middle">{t_hi:.3}</text>"#,
        y0 + 16.0
    );
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="end">{y_lo:.3}</text>"#,
        x0 - 4.0,
        y0
    );
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="end">{y_hi:.3}</text>"#,
        x0 - 4.0,
        y1 + 4.0
    );
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle">t</text>"#,
        WIDTH / 2.0,
        HEIGHT - 12.0
    );

    for s in series {
        if let Some(band) = s.band {
            let upper = times
                .iter()
                .zip(s.values)
                .zip(band)
                .map(|((&t, &v), &b)| (x(t), y(v + b)));
            let lower = times
                .iter()
                .zip(s.values)
                .zip(band)
                .rev()
                .map(|((&t, &v), &b)| (x(t), y(v - b)));
            let pts: Vec<String> = upper
                .chain(lower)
                .map(|(a, b)| format!("{a:.2},{b:.2}"))
                .collect();
            let _ = writeln!(
                out,
                r#"<polygon points="{}" fill="{}" fill-opacity="0.25" stroke="none"/>"#,
                pts.join(" "),
                s.colour
            );
        }
        let pts: Vec<String> = times
            .iter()
            .zip(s.values)
            .map(|(&t, &v)| format!("{:.2},{:.2}", x(t), y(v)))
            .collect();
        let _ = writeln!(
            out,
            r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="1.5"/>"#,
            pts.join(" "),
            s.colour
        );
    }
    for (i, s) in series.iter().enumerate() {
        let ly = MARGIN + 8.0 + 16.0 * i as f64;
        let lx = WIDTH - MARGIN - 150.0;
        let _ = writeln!(
            out,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{}" stroke-width="2"/>"#,
            lx + 20.0,
            s.colour
        );
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}">{}</text>"#,
            lx + 26.0,
            ly + 4.0,
            escape(s.label)
        );
    }
    out.push_str("</svg>\n");
    out
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values
        .filter(|v| v.is_finite())
        .fold(None, |acc: Option<(f64, f64)>, v| match acc {
            None => Some((v, v)),
            Some((lo, hi)) => Some((lo.min(v), hi.max(v))),
        })
        .unwrap_or((0.0, 1.0))
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}
