//! Minimal log-log SVG plots.

use std::fmt::Write;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const MARGIN: [f64; 4] = [70.0, 20.0, 40.0, 60.0]; // left, right, top, bottom
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Style {
    Points,
    Line,
    LineMarkers,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    pub style: Style,
}

/// Dashed reference line `y = anchor.1 (x / anchor.0)^slope`.
#[derive(Clone, Debug, PartialEq)]
pub struct Guide {
    pub label: String,
    pub slope: f64,
    pub anchor: (f64, f64),
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LogLogPlot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
    pub guides: Vec<Guide>,
}

struct Axes {
    x: (f64, f64),
    y: (f64, f64),
}

impl Axes {
    fn px(&self, x: f64) -> f64 {
        MARGIN[0] + (x.log10() - self.x.0) / (self.x.1 - self.x.0) * (WIDTH - MARGIN[0] - MARGIN[1])
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT - MARGIN[3] - (y.log10() - self.y.0) / (self.y.1 - self.y.0) * (HEIGHT - MARGIN[2] - MARGIN[3])
    }
}

fn decades(lo: f64, hi: f64) -> (f64, f64) {
    let (a, b) = (lo.log10().floor(), hi.log10().ceil());
    if a == b {
        (a, a + 1.0)
    } else {
        (a, b)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

impl LogLogPlot {
    pub fn render(&self) -> String {
        let pts = self.series.iter().flat_map(|s| s.points.iter()).filter(|p| p.0 > 0.0 && p.1 > 0.0);
        let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, 0.0f64, f64::INFINITY, 0.0f64);
        for &(x, y) in pts {
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
        if !x0.is_finite() {
            (x0, x1, y0, y1) = (1.0, 10.0, 1.0, 10.0);
        }
        let ax = Axes { x: decades(x0, x1), y: decades(y0, y1) };
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let (l, r, t, b) = (MARGIN[0], WIDTH - MARGIN[1], MARGIN[2], HEIGHT - MARGIN[3]);
        let _ = writeln!(s, r#"<rect x="{l}" y="{t}" width="{}" height="{}" fill="none" stroke="black"/>"#, r - l, b - t);
        for e in ax.x.0 as i32..=ax.x.1 as i32 {
            let x = ax.px(10f64.powi(e));
            let _ = writeln!(s, r##"<line x1="{x:.2}" y1="{t}" x2="{x:.2}" y2="{b}" stroke="#ddd"/>"##);
            let _ = writeln!(s, r#"<text x="{x:.2}" y="{}" text-anchor="middle">1e{e}</text>"#, b + 16.0);
        }
        for e in ax.y.0 as i32..=ax.y.1 as i32 {
            let y = ax.py(10f64.powi(e));
            let _ = writeln!(s, r##"<line x1="{l}" y1="{y:.2}" x2="{r}" y2="{y:.2}" stroke="#ddd"/>"##);
            let _ = writeln!(s, r#"<text x="{}" y="{:.2}" text-anchor="end">1e{e}</text>"#, l - 6.0, y + 4.0);
        }
        let _ = writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-size="14">{}</text>"#, (l + r) / 2.0, escape(&self.title));
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, (l + r) / 2.0, HEIGHT - 16.0, escape(&self.x_label));
        let _ = writeln!(
            s,
            r#"<text x="18" y="{0}" text-anchor="middle" transform="rotate(-90 18 {0})">{1}</text>"#,
            (t + b) / 2.0,
            escape(&self.y_label)
        );
        let _ = writeln!(s, r#"<clipPath id="plot"><rect x="{l}" y="{t}" width="{}" height="{}"/></clipPath>"#, r - l, b - t);
        let _ = writeln!(s, r#"<g clip-path="url(#plot)">"#);
        let mut legend = Vec::new();
        for (k, ser) in self.series.iter().enumerate() {
            let c = COLORS[k % COLORS.len()];
            let pts: Vec<(f64, f64)> = ser
                .points
                .iter()
                .filter(|p| p.0 > 0.0 && p.1 > 0.0)
                .map(|&(x, y)| (ax.px(x), ax.py(y)))
                .collect();
            if matches!(ser.style, Style::Line | Style::LineMarkers) && pts.len() > 1 {
                let path: Vec<String> = pts.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
                let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{c}" stroke-width="2"/>"#, path.join(" "));
            }
            let (rad, op) = match ser.style {
                Style::Points => (1.5, 0.25),
                Style::LineMarkers => (3.5, 1.0),
                Style::Line => (0.0, 0.0),
            };
            if rad > 0.0 {
                for (x, y) in &pts {
                    let _ = writeln!(s, r#"<circle cx="{x:.2}" cy="{y:.2}" r="{rad}" fill="{c}" fill-opacity="{op}"/>"#);
                }
            }
            legend.push((ser.label.clone(), c, false));
        }
        for g in &self.guides {
            let xs = [10f64.powf(ax.x.0), 10f64.powf(ax.x.1)];
            let ys = xs.map(|x| g.anchor.1 * (x / g.anchor.0).powf(g.slope));
            let _ = writeln!(
                s,
                r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="black" stroke-dasharray="6 4"/>"#,
                ax.px(xs[0]),
                ax.py(ys[0]),
                ax.px(xs[1]),
                ax.py(ys[1])
            );
            legend.push((g.label.clone(), "black", true));
        }
        let _ = writeln!(s, "</g>");
        for (k, (label, c, dashed)) in legend.iter().enumerate() {
            let y = t + 16.0 + 16.0 * k as f64;
            let dash = if *dashed { r#" stroke-dasharray="6 4""# } else { "" };
            let _ = writeln!(s, r#"<line x1="{}" y1="{y}" x2="{}" y2="{y}" stroke="{c}" stroke-width="2"{dash}/>"#, r - 150.0, r - 126.0);
            let _ = writeln!(s, r#"<text x="{}" y="{}">{}</text>"#, r - 120.0, y + 4.0, escape(label));
        }
        s.push_str("</svg>\n");
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_series_and_guides() {
        let plot = LogLogPlot {
            title: "decay <test>".into(),
            x_label: "r".into(),
            y_label: "|Du|".into(),
            series: vec![
                Series { label: "data".into(), points: vec![(1.0, 1.0), (10.0, 1e-3), (0.0, 5.0)], style: Style::Points },
                Series { label: "envelope".into(), points: vec![(2.0, 0.1), (20.0, 1e-4)], style: Style::LineMarkers },
            ],
            guides: vec![Guide { label: "r^-3".into(), slope: -3.0, anchor: (1.0, 1.0) }],
        };
        let svg = plot.render();
        assert!(svg.starts_with("<svg") && svg.ends_with("</svg>\n"));
        assert_eq!(svg.matches("<circle").count(), 4);
        assert_eq!(svg.matches("<polyline").count(), 1);
        assert!(svg.contains("decay &lt;test&gt;"));
        assert!(svg.contains("1e-4") && svg.contains("1e1"));
    }

    #[test]
    fn empty_plot_is_valid() {
        let svg = LogLogPlot::default().render();
        assert!(svg.contains("</svg>"));
    }
}
