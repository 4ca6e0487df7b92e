//! Minimal SVG 1.1 output: scatter plots and line plots.

use std::io::Write;

use crate::error::Result;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const MARGIN: f64 = 60.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

pub struct Scatter {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

pub struct Line {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
    log_x: bool,
    log_y: bool,
}

impl Frame {
    fn fit<'a>(pts: impl Iterator<Item = &'a (f64, f64)>, log_x: bool, log_y: bool) -> Self {
        let tx = |v: f64| if log_x { v.log10() } else { v };
        let ty = |v: f64| if log_y { v.log10() } else { v };
        let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for &(x, y) in pts {
            let (x, y) = (tx(x), ty(y));
            if x.is_finite() {
                x0 = x0.min(x);
                x1 = x1.max(x);
            }
            if y.is_finite() {
                y0 = y0.min(y);
                y1 = y1.max(y);
            }
        }
        if !x0.is_finite() {
            (x0, x1) = (0.0, 1.0);
        }
        if !y0.is_finite() {
            (y0, y1) = (0.0, 1.0);
        }
        if x1 - x0 < 1e-12 {
            x0 -= 0.5;
            x1 += 0.5;
        }
        if y1 - y0 < 1e-12 {
            y0 -= 0.5;
            y1 += 0.5;
        }
        Self { x0, x1, y0, y1, log_x, log_y }
    }

    fn map(&self, x: f64, y: f64) -> Option<(f64, f64)> {
        let x = if self.log_x { x.log10() } else { x };
        let y = if self.log_y { y.log10() } else { y };
        if !x.is_finite() || !y.is_finite() {
            return None;
        }
        let px = MARGIN + (x - self.x0) / (self.x1 - self.x0) * (WIDTH - 2.0 * MARGIN);
        let py = HEIGHT - MARGIN - (y - self.y0) / (self.y1 - self.y0) * (HEIGHT - 2.0 * MARGIN);
        Some((px, py))
    }
}

fn header<W: Write>(w: &mut W, title: &str, xlabel: &str, ylabel: &str, f: &Frame) -> Result<()> {
    writeln!(w, r#"<?xml version="1.0" encoding="UTF-8"?>"#)?;
    writeln!(
        w,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    )?;
    writeln!(w, r#"<rect width="100%" height="100%" fill="white"/>"#)?;
    writeln!(
        w,
        r#"<rect x="{MARGIN}" y="{MARGIN}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        WIDTH - 2.0 * MARGIN,
        HEIGHT - 2.0 * MARGIN
    )?;
    writeln!(w, r#"<text x="{}" y="30" text-anchor="middle" font-size="16">{}</text>"#, WIDTH / 2.0, escape(title))?;
    let lx = if f.log_x { format!("log10 {xlabel}") } else { xlabel.to_string() };
    let ly = if f.log_y { format!("log10 {ylabel}") } else { ylabel.to_string() };
    writeln!(
        w,
        r#"<text x="{}" y="{}" text-anchor="middle" font-size="12">{}</text>"#,
        WIDTH / 2.0,
        HEIGHT - 15.0,
        escape(&lx)
    )?;
    writeln!(
        w,
        r#"<text x="15" y="{}" text-anchor="middle" font-size="12" transform="rotate(-90 15 {})">{}</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0,
        escape(&ly)
    )?;
    for (v, px, anchor, py) in [
        (f.x0, MARGIN, "start", HEIGHT - MARGIN + 15.0),
        (f.x1, WIDTH - MARGIN, "end", HEIGHT - MARGIN + 15.0),
    ] {
        writeln!(w, r#"<text x="{px}" y="{py}" text-anchor="{anchor}" font-size="10">{v:.4}</text>"#)?;
    }
    writeln!(w, r#"<text x="{}" y="{}" text-anchor="end" font-size="10">{:.4}</text>"#, MARGIN - 4.0, HEIGHT - MARGIN, f.y0)?;
    writeln!(w, r#"<text x="{}" y="{}" text-anchor="end" font-size="10">{:.4}</text>"#, MARGIN - 4.0, MARGIN + 10.0, f.y1)?;
    Ok(())
}

fn legend<W: Write>(w: &mut W, labels: &[&str]) -> Result<()> {
    for (i, l) in labels.iter().enumerate() {
        let y = MARGIN + 15.0 + 15.0 * i as f64;
        let c = COLORS[i % COLORS.len()];
        writeln!(w, r#"<rect x="{}" y="{}" width="10" height="10" fill="{c}"/>"#, WIDTH - MARGIN - 150.0, y - 9.0)?;
        writeln!(w, r#"<text x="{}" y="{y}" font-size="11">{}</text>"#, WIDTH - MARGIN - 135.0, escape(l))?;
    }
    Ok(())
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

pub fn scatter_svg<W: Write>(mut w: W, title: &str, xlabel: &str, ylabel: &str, series: &[Scatter]) -> Result<()> {
    let frame = Frame::fit(series.iter().flat_map(|s| s.points.iter()), false, false);
    header(&mut w, title, xlabel, ylabel, &frame)?;
    for (i, s) in series.iter().enumerate() {
        let c = COLORS[i % COLORS.len()];
        for &(x, y) in &s.points {
            if let Some((px, py)) = frame.map(x, y) {
                writeln!(w, r#"<circle cx="{px:.2}" cy="{py:.2}" r="2.5" fill="{c}"/>"#)?;
            }
        }
    }
    let labels: Vec<&str> = series.iter().map(|s| s.label.as_str()).collect();
    legend(&mut w, &labels)?;
    writeln!(w, "</svg>")?;
    Ok(())
}

/// Line plot; with `log_log` non-positive values are dropped.
pub fn line_svg<W: Write>(
    mut w: W,
    title: &str,
    xlabel: &str,
    ylabel: &str,
    series: &[Line],
    log_log: bool,
) -> Result<()> {
    let frame = Frame::fit(
        series
            .iter()
            .flat_map(|s| s.points.iter())
            .filter(|(x, y)| !log_log || (*x > 0.0 && *y > 0.0)),
        log_log,
        log_log,
    );
    header(&mut w, title, xlabel, ylabel, &frame)?;
    for (i, s) in series.iter().enumerate() {
        let c = COLORS[i % COLORS.len()];
        let mapped: Vec<(f64, f64)> = s
            .points
            .iter()
            .filter(|(x, y)| !log_log || (*x > 0.0 && *y > 0.0))
            .filter_map(|&(x, y)| frame.map(x, y))
            .collect();
        if mapped.len() > 1 {
            let d: Vec<String> = mapped.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
            writeln!(w, r#"<polyline points="{}" fill="none" stroke="{c}" stroke-width="1.5"/>"#, d.join(" "))?;
        }
        for (x, y) in mapped {
            writeln!(w, r#"<circle cx="{x:.2}" cy="{y:.2}" r="3" fill="{c}"/>"#)?;
        }
    }
    let labels: Vec<&str> = series.iter().map(|s| s.label.as_str()).collect();
    legend(&mut w, &labels)?;
    writeln!(w, "</svg>")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn svg_is_well_formed_enough() {
        let mut buf = Vec::new();
        line_svg(
            &mut buf,
            "trend <a&b>",
            "tau",
            "excess",
            &[Line {
                label: "e".into(),
                points: vec![(0.1, 0.01), (0.05, 0.0025), (0.025, 0.0)],
            }],
            true,
        )
        .unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.starts_with("<?xml"));
        assert!(s.trim_end().ends_with("</svg>"));
        assert!(s.contains("&lt;a&amp;b&gt;"));
        assert_eq!(s.matches("<circle").count(), 2);
    }
}
