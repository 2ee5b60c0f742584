//! Minimal SVG writers. Output depends only on the input numbers, with
//! coordinates printed at fixed precision, so equal inputs give equal bytes.

use std::fmt::Write;

const W: f64 = 640.0;
const H: f64 = 400.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 160.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    /// Half-width of a shaded band around `ys`.
    pub band: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LineChart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
    /// Horizontal reference lines `(label, y)`.
    pub references: Vec<(String, f64)>,
    /// Extra text lines under the legend.
    pub notes: Vec<String>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in values.filter(|v| v.is_finite()) {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        return (lo - 1.0, hi + 1.0);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

struct Frame {
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        LEFT + (x - self.x.0) / (self.x.1 - self.x.0) * (W - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        H - BOTTOM - (y - self.y.0) / (self.y.1 - self.y.0) * (H - TOP - BOTTOM)
    }
}

fn header(out: &mut String, title: &str) {
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\" font-family=\"sans-serif\" font-size=\"11\">"
    );
    let _ = writeln!(out, "<rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>");
    let _ = writeln!(
        out,
        "<text x=\"{:.1}\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">{}</text>",
        W / 2.0,
        escape(title)
    );
}

fn axes(out: &mut String, f: &Frame, x_label: &str, y_label: &str) {
    let (x0, x1) = (LEFT, W - RIGHT);
    let (y0, y1) = (H - BOTTOM, TOP);
    let _ = writeln!(
        out,
        "<path d=\"M{x0:.1} {y1:.1} L{x0:.1} {y0:.1} L{x1:.1} {y0:.1}\" fill=\"none\" stroke=\"black\"/>"
    );
    for k in 0..=4 {
        let t = k as f64 / 4.0;
        let xv = f.x.0 + t * (f.x.1 - f.x.0);
        let yv = f.y.0 + t * (f.y.1 - f.y.0);
        let _ = writeln!(
            out,
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>",
            f.px(xv),
            y0 + 15.0,
            tick(xv)
        );
        let _ = writeln!(
            out,
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{}</text>",
            x0 - 5.0,
            f.py(yv) + 4.0,
            tick(yv)
        );
    }
    let _ = writeln!(
        out,
        "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>",
        (x0 + x1) / 2.0,
        H - 12.0,
        escape(x_label)
    );
    let _ = writeln!(
        out,
        "<text x=\"15\" y=\"{:.1}\" text-anchor=\"middle\" transform=\"rotate(-90 15 {:.1})\">{}</text>",
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        escape(y_label)
    );
}

fn tick(v: f64) -> String {
    if v.abs() >= 1000.0 {
        format!("{v:.0}")
    } else if v.abs() >= 10.0 {
        format!("{v:.1}")
    } else {
        format!("{v:.3}")
    }
}

fn legend(out: &mut String, entries: &[(String, &str)], notes: &[String]) {
    let x = W - RIGHT + 10.0;
    let mut y = TOP + 10.0;
    for (label, color) in entries {
        let _ = writeln!(
            out,
            "<rect x=\"{x:.1}\" y=\"{:.1}\" width=\"12\" height=\"3\" fill=\"{color}\"/>",
            y - 4.0
        );
        let _ = writeln!(out, "<text x=\"{:.1}\" y=\"{y:.1}\">{}</text>", x + 16.0, escape(label));
        y += 16.0;
    }
    for note in notes {
        let _ = writeln!(out, "<text x=\"{x:.1}\" y=\"{y:.1}\" fill=\"#444\">{}</text>", escape(note));
        y += 14.0;
    }
}

pub fn line_chart(chart: &LineChart) -> String {
    let xs = chart.series.iter().flat_map(|s| s.xs.iter().copied());
    let ys = chart.series.iter().flat_map(|s| {
        let band = s.band.clone().unwrap_or_else(|| vec![0.0; s.ys.len()]);
        s.ys
            .iter()
            .zip(band)
            .flat_map(|(y, b)| [y - b, y + b])
            .collect::<Vec<_>>()
    });
    let refs = chart.references.iter().map(|r| r.1);
    let frame = Frame {
        x: range(xs),
        y: range(ys.chain(refs)),
    };
    let mut out = String::new();
    header(&mut out, &chart.title);
    axes(&mut out, &frame, &chart.x_label, &chart.y_label);
    let mut entries = Vec::new();
    for (k, s) in chart.series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        if let Some(band) = &s.band {
            let mut d = String::new();
            for (i, (x, y)) in s.xs.iter().zip(&s.ys).enumerate() {
                let _ = write!(d, "{}{:.2} {:.2} ", if i == 0 { "M" } else { "L" }, frame.px(*x), frame.py(y + band[i]));
            }
            for (i, (x, y)) in s.xs.iter().zip(&s.ys).enumerate().rev() {
                let _ = write!(d, "L{:.2} {:.2} ", frame.px(*x), frame.py(y - band[i]));
            }
            let _ = writeln!(out, "<path d=\"{}Z\" fill=\"{color}\" fill-opacity=\"0.2\" stroke=\"none\"/>", d);
        }
        let mut d = String::new();
        for (i, (x, y)) in s.xs.iter().zip(&s.ys).enumerate() {
            let _ = write!(d, "{}{:.2} {:.2} ", if i == 0 { "M" } else { "L" }, frame.px(*x), frame.py(*y));
        }
        let _ = writeln!(out, "<path d=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>", d.trim_end());
        entries.push((s.label.clone(), color));
    }
    for (label, y) in &chart.references {
        let py = frame.py(*y);
        let _ = writeln!(
            out,
            "<path d=\"M{LEFT:.1} {py:.2} L{:.1} {py:.2}\" stroke=\"#555\" stroke-dasharray=\"4 3\"/>",
            W - RIGHT
        );
        entries.push((format!("{label} ({})", tick(*y)), "#555"));
    }
    legend(&mut out, &entries, &chart.notes);
    out.push_str("</svg>\n");
    out
}

/// Vertical bars with optional error whiskers.
pub fn bar_chart(title: &str, y_label: &str, bars: &[(String, f64, Option<f64>)]) -> String {
    let ys = bars
        .iter()
        .flat_map(|(_, v, e)| [0.0, v + e.unwrap_or(0.0), v - e.unwrap_or(0.0)]);
    let frame = Frame {
        x: (0.0, bars.len().max(1) as f64),
        y: range(ys),
    };
    let mut out = String::new();
    header(&mut out, title);
    axes(&mut out, &frame, "", y_label);
    let width = (W - LEFT - RIGHT) / bars.len().max(1) as f64;
    for (k, (label, v, err)) in bars.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let x = frame.px(k as f64) + 0.15 * width;
        let (top, bottom) = (frame.py(v.max(0.0)), frame.py(v.min(0.0)));
        let _ = writeln!(
            out,
            "<rect x=\"{x:.2}\" y=\"{top:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"{color}\"/>",
            0.7 * width,
            bottom - top
        );
        if let Some(e) = err {
            let cx = x + 0.35 * width;
            let _ = writeln!(
                out,
                "<path d=\"M{cx:.2} {:.2} L{cx:.2} {:.2}\" stroke=\"black\"/>",
                frame.py(v + e),
                frame.py(v - e)
            );
        }
        let _ = writeln!(
            out,
            "<text x=\"{:.2}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>",
            x + 0.35 * width,
            H - BOTTOM + 28.0,
            escape(label)
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Grid of cells shaded from white (min) to dark blue (max); `None` cells
/// are drawn grey.
pub fn heatmap(title: &str, cells: &[Vec<Option<f64>>]) -> String {
    let rows = cells.len().max(1);
    let cols = cells.iter().map(Vec::len).max().unwrap_or(1).max(1);
    let (lo, hi) = {
        let vals: Vec<f64> = cells.iter().flatten().flatten().copied().filter(|v| v.is_finite()).collect();
        let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if lo.is_finite() {
            (lo, hi)
        } else {
            (0.0, 1.0)
        }
    };
    let side = ((H - TOP - BOTTOM) / rows as f64).min((W - LEFT - RIGHT) / cols as f64);
    let mut out = String::new();
    header(&mut out, title);
    for (r, row) in cells.iter().enumerate() {
        for (c, v) in row.iter().enumerate() {
            let fill = match v {
                Some(v) if v.is_finite() => {
                    let t = if hi > lo { (v - lo) / (hi - lo) } else { 0.5 };
                    let g = (255.0 * (1.0 - 0.85 * t)).round() as u8;
                    let rr = (255.0 * (1.0 - t)).round() as u8;
                    format!("#{rr:02x}{g:02x}ff")
                }
                _ => "#999999".to_string(),
            };
            let _ = writeln!(
                out,
                "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{side:.2}\" height=\"{side:.2}\" fill=\"{fill}\" stroke=\"white\" stroke-width=\"0.5\"/>",
                LEFT + c as f64 * side,
                TOP + r as f64 * side
            );
        }
    }
    let notes = [format!("min {}", tick(lo)), format!("max {}", tick(hi))];
    legend(&mut out, &[], &notes);
    out.push_str("</svg>\n");
    out
}
