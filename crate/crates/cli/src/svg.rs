//! Minimal standalone SVG line charts with shaded bands.

use std::fmt::Write;

const WIDTH: f64 = 760.0;
const HEIGHT: f64 = 440.0;
const LEFT: f64 = 72.0;
const RIGHT: f64 = 190.0;
const TOP: f64 = 42.0;
const BOTTOM: f64 = 56.0;
const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

#[derive(Clone, Debug, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<Point>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Chart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_y: bool,
    pub series: Vec<Series>,
}

struct Axis {
    min: f64,
    max: f64,
    log: bool,
}

impl Axis {
    fn fit(values: impl Iterator<Item = f64>, log: bool) -> Self {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values.filter(|v| v.is_finite() && (!log || *v > 0.0)) {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if !lo.is_finite() {
            return if log { Axis { min: 1.0, max: 10.0, log } } else { Axis { min: 0.0, max: 1.0, log } };
        }
        if log {
            let (a, b) = (lo.log10().floor(), hi.log10().ceil());
            let b = if b <= a { a + 1.0 } else { b };
            Axis { min: 10f64.powf(a), max: 10f64.powf(b), log }
        } else {
            let pad = if hi > lo { 0.05 * (hi - lo) } else { lo.abs().max(1.0) * 0.5 };
            Axis { min: lo - pad, max: hi + pad, log }
        }
    }

    /// Position in [0, 1]; values below a log axis clamp to its floor.
    fn frac(&self, v: f64) -> f64 {
        if self.log {
            let v = v.max(self.min);
            (v.log10() - self.min.log10()) / (self.max.log10() - self.min.log10())
        } else {
            (v - self.min) / (self.max - self.min)
        }
    }

    fn ticks(&self) -> Vec<f64> {
        if self.log {
            let (a, b) = (self.min.log10().round() as i32, self.max.log10().round() as i32);
            let mults: &[f64] = if b - a <= 1 { &[1.0, 2.0, 5.0] } else { &[1.0] };
            let mut out = Vec::new();
            for e in a..=b {
                for m in mults {
                    let v = m * 10f64.powi(e);
                    if v >= self.min * (1.0 - 1e-9) && v <= self.max * (1.0 + 1e-9) {
                        out.push(v);
                    }
                }
            }
            return out;
        }
        let step = nice_step((self.max - self.min) / 5.0);
        let mut v = (self.min / step).ceil() * step;
        let mut out = Vec::new();
        while v <= self.max + step * 1e-9 {
            out.push(if v.abs() < step * 1e-9 { 0.0 } else { v });
            v += step;
        }
        out
    }
}

fn nice_step(raw: f64) -> f64 {
    let mag = 10f64.powf(raw.log10().floor());
    let f = raw / mag;
    let nice = if f <= 1.0 {
        1.0
    } else if f <= 2.0 {
        2.0
    } else if f <= 5.0 {
        5.0
    } else {
        10.0
    };
    nice * mag
}

fn label(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let a = v.abs();
    if !(1e-3..1e5).contains(&a) {
        return format!("{v:.0e}");
    }
    let s = format!("{v:.4}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

impl Chart {
    /// Rejects non-finite values and, on a log axis, non-positive centre values.
    pub fn validate(&self) -> Result<(), String> {
        for s in &self.series {
            for p in &s.points {
                if !p.x.is_finite() || !p.y.is_finite() {
                    return Err(format!("series '{}' has a non-finite point at x = {}", s.name, p.x));
                }
                if self.log_y && p.y <= 0.0 {
                    return Err(format!(
                        "series '{}' has value {} at x = {}; a logarithmic axis needs positive values",
                        s.name, p.y, p.x
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn render(&self) -> Result<String, String> {
        self.validate()?;
        let pts = || self.series.iter().flat_map(|s| &s.points);
        let xa = Axis::fit(pts().map(|p| p.x), false);
        let ya = Axis::fit(pts().flat_map(|p| [p.y, p.lo, p.hi]), self.log_y);
        let (pw, ph) = (WIDTH - LEFT - RIGHT, HEIGHT - TOP - BOTTOM);
        let px = |x: f64| LEFT + xa.frac(x) * pw;
        let py = |y: f64| TOP + (1.0 - ya.frac(y).clamp(0.0, 1.0)) * ph;

        let mut svg = String::new();
        let _ = writeln!(
            svg,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
            LEFT + pw / 2.0,
            escape(&self.title)
        );

        svg.push_str("<g class=\"axes\" stroke=\"#444\" fill=\"none\">\n");
        let _ = writeln!(svg, r#"<rect x="{LEFT}" y="{TOP}" width="{pw:.1}" height="{ph:.1}"/>"#);
        svg.push_str("</g>\n<g class=\"ticks\" fill=\"#222\">\n");
        for t in xa.ticks() {
            let x = px(t);
            let _ = writeln!(
                svg,
                r##"<line x1="{x:.1}" y1="{:.1}" x2="{x:.1}" y2="{:.1}" stroke="#444"/><text x="{x:.1}" y="{:.1}" text-anchor="middle">{}</text>"##,
                TOP + ph,
                TOP + ph + 5.0,
                TOP + ph + 19.0,
                label(t)
            );
        }
        for t in ya.ticks() {
            let y = py(t);
            let _ = writeln!(
                svg,
                r##"<line x1="{:.1}" y1="{y:.1}" x2="{LEFT}" y2="{y:.1}" stroke="#444"/><line x1="{LEFT}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#ddd"/><text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"##,
                LEFT - 5.0,
                LEFT + pw,
                LEFT - 8.0,
                y + 4.0,
                label(t)
            );
        }
        svg.push_str("</g>\n");
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            LEFT + pw / 2.0,
            HEIGHT - 14.0,
            escape(&self.x_label)
        );
        let _ = writeln!(
            svg,
            r#"<text transform="translate(18,{:.1}) rotate(-90)" text-anchor="middle">{}</text>"#,
            TOP + ph / 2.0,
            escape(&self.y_label)
        );

        for (i, s) in self.series.iter().enumerate() {
            let color = PALETTE[i % PALETTE.len()];
            let _ = writeln!(svg, r#"<g class="series" data-name="{}">"#, escape(&s.name));
            if !s.points.is_empty() {
                let upper = s.points.iter().map(|p| format!("{:.1},{:.1}", px(p.x), py(p.hi)));
                let lower = s.points.iter().rev().map(|p| format!("{:.1},{:.1}", px(p.x), py(p.lo)));
                let band: Vec<String> = upper.chain(lower).collect();
                let _ = writeln!(
                    svg,
                    r#"<polygon class="band" points="{}" fill="{color}" fill-opacity="0.18" stroke="none"/>"#,
                    band.join(" ")
                );
                let line: Vec<String> = s.points.iter().map(|p| format!("{:.1},{:.1}", px(p.x), py(p.y))).collect();
                let _ = writeln!(
                    svg,
                    r#"<polyline class="line" points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
                    line.join(" ")
                );
            }
            svg.push_str("</g>\n");
        }

        svg.push_str("<g class=\"legend\">\n");
        for (i, s) in self.series.iter().enumerate() {
            let color = PALETTE[i % PALETTE.len()];
            let (x, y) = (WIDTH - RIGHT + 16.0, TOP + 10.0 + 20.0 * i as f64);
            let _ = writeln!(
                svg,
                r#"<rect x="{x:.1}" y="{:.1}" width="14" height="10" fill="{color}"/><text x="{:.1}" y="{:.1}">{}</text>"#,
                y - 9.0,
                x + 20.0,
                y,
                escape(&s.name)
            );
        }
        svg.push_str("</g>\n</svg>\n");
        Ok(svg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chart(log_y: bool, ys: &[f64]) -> Chart {
        Chart {
            title: "t <&>".into(),
            x_label: "x".into(),
            y_label: "y".into(),
            log_y,
            series: vec![Series {
                name: "a".into(),
                points: ys.iter().enumerate().map(|(i, &y)| Point { x: i as f64, y, lo: y * 0.5, hi: y * 2.0 }).collect(),
            }],
        }
    }

    #[test]
    fn log_axis_rejects_non_positive() {
        assert!(chart(true, &[1.0, 0.0]).render().unwrap_err().contains("logarithmic"));
        assert!(chart(false, &[1.0, 0.0]).render().is_ok());
    }

    #[test]
    fn decade_ticks() {
        let a = Axis::fit([0.05, 3.0].into_iter(), true);
        assert_eq!((a.min, a.max), (0.01, 10.0));
        assert_eq!(a.ticks().len(), 4);
    }

    #[test]
    fn linear_ticks_are_round() {
        let a = Axis { min: 0.0, max: 20000.0, log: false };
        assert_eq!(a.ticks(), vec![0.0, 5000.0, 10000.0, 15000.0, 20000.0]);
    }

    #[test]
    fn text_is_escaped() {
        let svg = chart(false, &[1.0]).render().unwrap();
        assert!(svg.contains("t &lt;&amp;&gt;"));
        assert!(svg.starts_with("<svg"));
    }
}
