//! Minimal SVG rendering for learning curves and prompt scatters.

use std::fmt::Write;

use super::metrics::Curve;
use crate::env::{Task, Vec2};

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

struct Frame {
    x0: f64,
    y0: f64,
    w: f64,
    h: f64,
    xr: (f64, f64),
    yr: (f64, f64),
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        self.x0 + (x - self.xr.0) / (self.xr.1 - self.xr.0) * self.w
    }

    fn py(&self, y: f64) -> f64 {
        self.y0 + self.h - (y - self.yr.0) / (self.yr.1 - self.yr.0) * self.h
    }

    fn axes(&self, s: &mut String, xlabel: &str, ylabel: &str, ticks: usize) {
        let _ = writeln!(
            s,
            r##"<rect x="{:.1}" y="{:.1}" width="{:.1}" height="{:.1}" fill="none" stroke="#333"/>"##,
            self.x0, self.y0, self.w, self.h
        );
        for i in 0..=ticks {
            let t = i as f64 / ticks as f64;
            let xv = self.xr.0 + t * (self.xr.1 - self.xr.0);
            let yv = self.yr.0 + t * (self.yr.1 - self.yr.0);
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}" font-size="10" text-anchor="middle">{}</text>"#,
                self.px(xv),
                self.y0 + self.h + 14.0,
                fmt_tick(xv)
            );
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}" font-size="10" text-anchor="end">{}</text>"#,
                self.x0 - 4.0,
                self.py(yv) + 3.0,
                fmt_tick(yv)
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" font-size="12" text-anchor="middle">{xlabel}</text>"#,
            self.x0 + self.w / 2.0,
            self.y0 + self.h + 32.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" font-size="12" text-anchor="middle" transform="rotate(-90 {:.1} {:.1})">{ylabel}</text>"#,
            self.x0 - 36.0,
            self.y0 + self.h / 2.0,
            self.x0 - 36.0,
            self.y0 + self.h / 2.0
        );
    }
}

fn fmt_tick(v: f64) -> String {
    if (v - v.round()).abs() < 1e-9 {
        format!("{}", v.round() as i64)
    } else {
        format!("{v:.1}")
    }
}

fn open(w: f64, h: f64) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    )
}

/// Mean return per round for each method, with a shaded band of one
/// standard deviation.
pub fn curves_svg(curves: &[Curve], title: &str) -> String {
    let rounds = curves.iter().map(Curve::rounds).max().unwrap_or(1).max(2);
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for c in curves {
        for (m, s) in c.mean.iter().zip(&c.std) {
            lo = lo.min(m - s);
            hi = hi.max(m + s);
        }
    }
    if !lo.is_finite() || !hi.is_finite() || hi - lo < 1e-9 {
        (lo, hi) = (-6.0, 10.0);
    }
    let f = Frame {
        x0: 60.0,
        y0: 30.0,
        w: 560.0,
        h: 320.0,
        xr: (0.0, (rounds - 1) as f64),
        yr: (lo.floor(), hi.ceil()),
    };
    let mut s = open(800.0, 400.0);
    let _ = writeln!(
        s,
        r#"<text x="340" y="18" font-size="14" text-anchor="middle">{title}</text>"#
    );
    f.axes(&mut s, "round", "return", 5);
    for (i, c) in curves.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let mut band = String::new();
        for (k, (m, sd)) in c.mean.iter().zip(&c.std).enumerate() {
            let _ = write!(band, "{:.2},{:.2} ", f.px(k as f64), f.py(m + sd));
        }
        for (k, (m, sd)) in c.mean.iter().zip(&c.std).enumerate().rev() {
            let _ = write!(band, "{:.2},{:.2} ", f.px(k as f64), f.py(m - sd));
        }
        let _ = writeln!(
            s,
            r#"<polygon points="{}" fill="{color}" fill-opacity="0.15" stroke="none"/>"#,
            band.trim_end()
        );
        let line: Vec<String> = c
            .mean
            .iter()
            .enumerate()
            .map(|(k, m)| format!("{:.2},{:.2}", f.px(k as f64), f.py(*m)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
            line.join(" ")
        );
        let ly = 40.0 + 18.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<line x1="636" y1="{ly}" x2="656" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="662" y="{:.1}" font-size="11">{}</text>"#,
            ly + 4.0,
            c.method
        );
    }
    s.push_str("</svg>\n");
    s
}

/// One scatter point: prompt mean state colored by return.
#[derive(Debug, Clone, Copy)]
pub struct ScatterPoint {
    pub mean_state: Vec2,
    pub g: f64,
}

fn heat(g: f64, lo: f64, hi: f64) -> String {
    let t = ((g - lo) / (hi - lo)).clamp(0.0, 1.0);
    let r = (40.0 + 215.0 * t) as u8;
    let b = (255.0 - 215.0 * t) as u8;
    format!("#{r:02x}40{b:02x}")
}

/// Side-by-side panels of prompt mean states, one per window, with task
/// goals marked.
pub fn scatter_svg(panels: &[(&str, Vec<ScatterPoint>)], goals: &[Task], title: &str) -> String {
    let lim = 3.5;
    let pw = 300.0;
    let width = 80.0 + panels.len().max(1) as f64 * (pw + 60.0);
    let mut s = open(width, 400.0);
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="18" font-size="14" text-anchor="middle">{title}</text>"#,
        width / 2.0
    );
    for (i, (label, points)) in panels.iter().enumerate() {
        let f = Frame {
            x0: 60.0 + i as f64 * (pw + 60.0),
            y0: 40.0,
            w: pw,
            h: pw,
            xr: (-lim, lim),
            yr: (-lim, lim),
        };
        f.axes(&mut s, "mean x", "mean y", 4);
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="34" font-size="12" text-anchor="middle">{label}</text>"#,
            f.x0 + pw / 2.0
        );
        for p in points {
            let _ = writeln!(
                s,
                r#"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="{}" fill-opacity="0.7"/>"#,
                f.px(p.mean_state[0].clamp(-lim, lim)),
                f.py(p.mean_state[1].clamp(-lim, lim)),
                heat(p.g, -6.0, 10.0)
            );
        }
        for t in goals {
            let (x, y) = (f.px(t.goal[0]), f.py(t.goal[1]));
            let _ = writeln!(
                s,
                r#"<path d="M{:.1},{:.1}L{:.1},{:.1}M{:.1},{:.1}L{:.1},{:.1}" stroke="black" stroke-width="1.5"/>"#,
                x - 4.0,
                y - 4.0,
                x + 4.0,
                y + 4.0,
                x - 4.0,
                y + 4.0,
                x + 4.0,
                y - 4.0
            );
        }
    }
    s.push_str("</svg>\n");
    s
}
