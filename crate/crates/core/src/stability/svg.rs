//! Minimal SVG charts: scatter plots and column-normalised bubble grids.

use std::fmt::Write as _;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN: f64 = 56.0;

pub struct Series<'a> {
    pub name: &'a str,
    pub color: &'a str,
    pub points: Vec<(f64, f64)>,
}

struct Frame {
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn fit(points: impl Iterator<Item = (f64, f64)>) -> Frame {
        let (mut x, mut y) = ((0.0f64, 1.0f64), (0.0f64, 1.0f64));
        for (px, py) in points {
            x.1 = x.1.max(px);
            y.1 = y.1.max(py);
        }
        Frame {
            x: (x.0, x.1 * 1.05),
            y: (y.0, y.1 * 1.05),
        }
    }

    fn px(&self, v: f64) -> f64 {
        MARGIN + (v - self.x.0) / (self.x.1 - self.x.0) * (WIDTH - 2.0 * MARGIN)
    }

    fn py(&self, v: f64) -> f64 {
        HEIGHT - MARGIN - (v - self.y.0) / (self.y.1 - self.y.0) * (HEIGHT - 2.0 * MARGIN)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn header(out: &mut String, title: &str, xlabel: &str, ylabel: &str, frame: &Frame) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="24" text-anchor="middle" font-size="14">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
    let (x0, x1, y0, y1) = (MARGIN, WIDTH - MARGIN, HEIGHT - MARGIN, MARGIN);
    let _ = writeln!(
        out,
        r#"<path d="M{x0},{y1} L{x0},{y0} L{x1},{y0}" stroke="black" fill="none"/>"#
    );
    for i in 0..=5 {
        let f = f64::from(i) / 5.0;
        let xv = frame.x.0 + f * (frame.x.1 - frame.x.0);
        let yv = frame.y.0 + f * (frame.y.1 - frame.y.0);
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{xv:.1}</text>"#,
            frame.px(xv),
            y0 + 16.0
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{yv:.1}</text>"#,
            x0 - 6.0,
            frame.py(yv) + 4.0
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        WIDTH / 2.0,
        HEIGHT - 14.0,
        escape(xlabel)
    );
    let _ = writeln!(
        out,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0,
        escape(ylabel)
    );
}

pub fn scatter(title: &str, xlabel: &str, ylabel: &str, series: &[Series<'_>]) -> String {
    let frame = Frame::fit(series.iter().flat_map(|s| s.points.iter().copied()));
    let mut out = String::new();
    header(&mut out, title, xlabel, ylabel, &frame);
    for (i, s) in series.iter().enumerate() {
        for &(x, y) in &s.points {
            let _ = writeln!(
                out,
                r#"<circle cx="{:.1}" cy="{:.1}" r="2.5" fill="{}" fill-opacity="0.6"/>"#,
                frame.px(x),
                frame.py(y),
                s.color
            );
        }
        let ly = MARGIN + 16.0 * i as f64;
        let _ = writeln!(
            out,
            r#"<circle cx="{:.1}" cy="{ly:.1}" r="4" fill="{}"/><text x="{:.1}" y="{:.1}">{}</text>"#,
            WIDTH - MARGIN - 90.0,
            s.color,
            WIDTH - MARGIN - 82.0,
            ly + 4.0,
            escape(s.name)
        );
    }
    out.push_str("</svg>\n");
    out
}

/// One bubble per `(column, row)` cell, area proportional to the cell's share
/// of its column.
pub fn column_bubbles(title: &str, xlabel: &str, ylabel: &str, columns: &[(usize, Vec<usize>)]) -> String {
    let frame = Frame::fit(columns.iter().map(|(n, c)| (*n as f64 + 0.5, c.len() as f64)));
    let mut out = String::new();
    header(&mut out, title, xlabel, ylabel, &frame);
    for (n, counts) in columns {
        let total: usize = counts.iter().sum();
        if total == 0 {
            continue;
        }
        for (s, &c) in counts.iter().enumerate() {
            if c == 0 {
                continue;
            }
            let r = 12.0 * (c as f64 / total as f64).sqrt();
            let _ = writeln!(
                out,
                r#"<circle cx="{:.1}" cy="{:.1}" r="{r:.2}" fill="steelblue" fill-opacity="0.7"><title>{c}</title></circle>"#,
                frame.px(*n as f64),
                frame.py(s as f64)
            );
        }
    }
    out.push_str("</svg>\n");
    out
}
