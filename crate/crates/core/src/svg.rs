//! Self-contained SVG emission for the experiment reports: particle scatter
//! plots and entropy line plots. No plotting dependency; every figure also
//! ships with the raw CSV behind it.

use std::fmt::Write as _;

const WIDTH: f64 = 480.0;
const HEIGHT: f64 = 360.0;
const MARGIN: f64 = 46.0;

struct Frame {
    x_min: f64,
    x_max: f64,
    y_min: f64,
    y_max: f64,
}

impl Frame {
    fn from_points<'a>(points: impl Iterator<Item = (f64, f64)> + 'a) -> Frame {
        let mut f = Frame { x_min: f64::MAX, x_max: f64::MIN, y_min: f64::MAX, y_max: f64::MIN };
        for (x, y) in points {
            f.x_min = f.x_min.min(x);
            f.x_max = f.x_max.max(x);
            f.y_min = f.y_min.min(y);
            f.y_max = f.y_max.max(y);
        }
        for (lo, hi) in [(&mut f.x_min, &mut f.x_max), (&mut f.y_min, &mut f.y_max)] {
            if !lo.is_finite() || !hi.is_finite() {
                *lo = 0.0;
                *hi = 1.0;
            }
            if *hi - *lo < 1e-12 {
                *lo -= 0.5;
                *hi += 0.5;
            }
            let pad = 0.06 * (*hi - *lo);
            *lo -= pad;
            *hi += pad;
        }
        f
    }

    fn px(&self, x: f64) -> f64 {
        MARGIN + (x - self.x_min) / (self.x_max - self.x_min) * (WIDTH - 2.0 * MARGIN)
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT - MARGIN - (y - self.y_min) / (self.y_max - self.y_min) * (HEIGHT - 2.0 * MARGIN)
    }
}

fn header(title: &str, frame: &Frame) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">"
    );
    let _ = writeln!(s, "<rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>");
    let _ = writeln!(
        s,
        "<rect x=\"{MARGIN}\" y=\"{MARGIN}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#444\"/>",
        WIDTH - 2.0 * MARGIN,
        HEIGHT - 2.0 * MARGIN
    );
    let _ = writeln!(
        s,
        "<text x=\"{}\" y=\"{}\" font-family=\"monospace\" font-size=\"13\" text-anchor=\"middle\">{}</text>",
        WIDTH / 2.0,
        MARGIN - 14.0,
        title
    );
    for (v, label_x) in [(frame.x_min, true), (frame.x_max, true)] {
        if label_x {
            let _ = writeln!(
                s,
                "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"monospace\" font-size=\"10\" text-anchor=\"middle\">{v:.2}</text>",
                frame.px(v),
                HEIGHT - MARGIN + 16.0
            );
        }
    }
    for v in [frame.y_min, frame.y_max] {
        let _ = writeln!(
            s,
            "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"monospace\" font-size=\"10\" text-anchor=\"end\">{v:.2}</text>",
            MARGIN - 5.0,
            frame.py(v) + 4.0
        );
    }
    s
}

/// Scatter plot of 2-D (or 1-D, plotted against index) points.
pub fn scatter_plot(points: &[Vec<f64>], title: &str) -> String {
    let coords: Vec<(f64, f64)> = points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            if p.len() >= 2 {
                (p[0], p[1])
            } else {
                (i as f64, p[0])
            }
        })
        .collect();
    let frame = Frame::from_points(coords.iter().copied());
    let mut s = header(title, &frame);
    for (x, y) in &coords {
        let _ = writeln!(
            s,
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"2.2\" fill=\"#1f77b4\" fill-opacity=\"0.7\"/>",
            frame.px(*x),
            frame.py(*y)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Line plot of one or more named series, with an optional horizontal
/// reference line (e.g. a ground-truth value).
pub fn line_plot(series: &[(String, Vec<(f64, f64)>)], reference: Option<f64>, title: &str) -> String {
    let all = series
        .iter()
        .flat_map(|(_, pts)| pts.iter().copied())
        .chain(reference.map(|r| {
            let x = series.first().and_then(|(_, p)| p.first()).map(|p| p.0).unwrap_or(0.0);
            (x, r)
        }));
    let frame = Frame::from_points(all);
    let mut s = header(title, &frame);
    let palette = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"];
    if let Some(r) = reference {
        let _ = writeln!(
            s,
            "<line x1=\"{:.1}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" stroke=\"#888\" stroke-dasharray=\"4 3\"/>",
            frame.px(frame.x_min),
            frame.py(r),
            frame.px(frame.x_max),
            frame.py(r)
        );
    }
    for (i, (label, pts)) in series.iter().enumerate() {
        let color = palette[i % palette.len()];
        let path: Vec<String> = pts
            .iter()
            .enumerate()
            .map(|(k, (x, y))| {
                format!("{}{:.2},{:.2}", if k == 0 { "M" } else { "L" }, frame.px(*x), frame.py(*y))
            })
            .collect();
        let _ = writeln!(
            s,
            "<path d=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.6\"/>",
            path.join(" ")
        );
        for (x, y) in pts {
            let _ = writeln!(
                s,
                "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"2.5\" fill=\"{color}\"/>",
                frame.px(*x),
                frame.py(*y)
            );
        }
        let _ = writeln!(
            s,
            "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"monospace\" font-size=\"11\" fill=\"{color}\">{label}</text>",
            WIDTH - MARGIN - 110.0,
            MARGIN + 16.0 + 14.0 * i as f64
        );
    }
    s.push_str("</svg>\n");
    s
}
