//! Minimal static SVG line charts: lines with optional shaded bands, a
//! linear or log₁₀ left axis, and an optional linear right axis.

use std::fmt::Write as _;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 440.0;
const LEFT: f64 = 80.0;
const TOP: f64 = 48.0;
const BOTTOM: f64 = 56.0;
const PALETTE: [&str; 10] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
];

#[derive(Debug, Clone, Default)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
    /// `(x, low, high)` shaded around the line.
    pub band: Vec<(f64, f64, f64)>,
    /// Plot against the right axis.
    pub secondary: bool,
}

#[derive(Debug, Clone, Default)]
pub struct Chart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    /// Label of the right axis; only drawn if some series is secondary.
    pub y2_label: String,
    pub log_y: bool,
    /// Fixed range of the right axis.
    pub y2_range: Option<(f64, f64)>,
    pub series: Vec<Series>,
    /// Lines written into a leading XML comment.
    pub provenance: Vec<String>,
}

struct Axis {
    lo: f64,
    hi: f64,
    log: bool,
}

impl Axis {
    fn fit(values: impl Iterator<Item = f64>, log: bool) -> Axis {
        let vals: Vec<f64> = values
            .filter(|v| v.is_finite() && (!log || *v > 0.0))
            .map(|v| if log { v.log10() } else { v })
            .collect();
        let (mut lo, mut hi) = vals
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        if !lo.is_finite() {
            (lo, hi) = (0.0, 1.0);
        }
        if log {
            (lo, hi) = (lo.floor(), hi.ceil());
        }
        if hi - lo < 1e-12 {
            (lo, hi) = (lo - 0.5, hi + 0.5);
        }
        if !log {
            let step = nice_step(hi - lo);
            (lo, hi) = ((lo / step).floor() * step, (hi / step).ceil() * step);
        }
        Axis { lo, hi, log }
    }

    /// Position in `[0, 1]`, or `None` for values a log axis cannot show.
    fn frac(&self, v: f64) -> Option<f64> {
        let v = if self.log {
            if v <= 0.0 {
                return None;
            }
            v.log10()
        } else {
            v
        };
        v.is_finite().then(|| (v - self.lo) / (self.hi - self.lo))
    }

    /// Like `frac` but clamps unrepresentable values to the bottom.
    fn frac_clamped(&self, v: f64) -> f64 {
        self.frac(v).unwrap_or(0.0).clamp(0.0, 1.0)
    }

    fn ticks(&self) -> Vec<(f64, String)> {
        if self.log {
            let span = (self.hi - self.lo).round() as i64;
            let every = (span / 8 + 1).max(1);
            (self.lo as i64..=self.hi as i64)
                .filter(|e| (e - self.lo as i64) % every == 0)
                .map(|e| ((e as f64 - self.lo) / (self.hi - self.lo), format!("1e{e}")))
                .collect()
        } else {
            let step = nice_step(self.hi - self.lo);
            let mut out = Vec::new();
            let mut k = (self.lo / step).round() as i64;
            while (k as f64) * step <= self.hi + step * 1e-9 {
                let v = k as f64 * step;
                out.push(((v - self.lo) / (self.hi - self.lo), format_tick(v, step)));
                k += 1;
            }
            out
        }
    }
}

fn nice_step(range: f64) -> f64 {
    let raw = range / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let m = raw / mag;
    let nice = if m <= 1.0 {
        1.0
    } else if m <= 2.0 {
        2.0
    } else if m <= 5.0 {
        5.0
    } else {
        10.0
    };
    nice * mag
}

fn format_tick(v: f64, step: f64) -> String {
    let decimals = if step >= 1.0 {
        0
    } else {
        (-step.log10().floor()) as usize
    };
    format!("{v:.decimals$}")
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

impl Chart {
    pub fn to_svg(&self) -> String {
        let has_y2 = self.series.iter().any(|s| s.secondary);
        let right = if has_y2 { 80.0 } else { 24.0 };
        let (pw, ph) = (WIDTH - LEFT - right, HEIGHT - TOP - BOTTOM);

        let xs = self.series.iter().flat_map(|s| s.points.iter().map(|p| p.0));
        let x = Axis::fit(xs, false);
        let ys = |secondary: bool| {
            self.series
                .iter()
                .filter(move |s| s.secondary == secondary)
                .flat_map(|s| {
                    s.points
                        .iter()
                        .map(|p| p.1)
                        .chain(s.band.iter().flat_map(|b| [b.1, b.2]))
                })
        };
        let y = Axis::fit(ys(false), self.log_y);
        let y2 = match self.y2_range {
            Some((lo, hi)) => Axis { lo, hi, log: false },
            None => Axis::fit(ys(true), false),
        };
        let px = |v: f64| LEFT + x.frac(v).unwrap_or(0.0) * pw;
        let py = |f: f64| TOP + (1.0 - f) * ph;

        let mut out = String::new();
        writeln!(out, r#"<?xml version="1.0" encoding="UTF-8"?>"#).unwrap();
        if !self.provenance.is_empty() {
            out.push_str("<!--\n");
            for line in &self.provenance {
                writeln!(out, "  {}", line.replace("--", "- -")).unwrap();
            }
            out.push_str("-->\n");
        }
        writeln!(
            out,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
        )
        .unwrap();
        writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();
        writeln!(
            out,
            r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
            WIDTH / 2.0,
            escape(&self.title)
        )
        .unwrap();

        // Grid and ticks.
        for (f, label) in x.ticks() {
            let xx = LEFT + f * pw;
            writeln!(
                out,
                r##"<line x1="{xx:.2}" y1="{TOP}" x2="{xx:.2}" y2="{:.2}" stroke="#e5e5e5"/>"##,
                TOP + ph
            )
            .unwrap();
            writeln!(
                out,
                r#"<text x="{xx:.2}" y="{:.2}" text-anchor="middle">{label}</text>"#,
                TOP + ph + 16.0
            )
            .unwrap();
        }
        for (f, label) in y.ticks() {
            let yy = py(f);
            writeln!(
                out,
                r##"<line x1="{LEFT}" y1="{yy:.2}" x2="{:.2}" y2="{yy:.2}" stroke="#e5e5e5"/>"##,
                LEFT + pw
            )
            .unwrap();
            writeln!(
                out,
                r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{label}</text>"#,
                LEFT - 6.0,
                yy + 4.0
            )
            .unwrap();
        }
        if has_y2 {
            for (f, label) in y2.ticks() {
                let yy = py(f);
                writeln!(
                    out,
                    r#"<text x="{:.2}" y="{:.2}">{label}</text>"#,
                    LEFT + pw + 6.0,
                    yy + 4.0
                )
                .unwrap();
            }
            writeln!(
                out,
                r#"<text transform="translate({:.2},{:.2}) rotate(90)" text-anchor="middle">{}</text>"#,
                WIDTH - 20.0,
                TOP + ph / 2.0,
                escape(&self.y2_label)
            )
            .unwrap();
        }
        writeln!(
            out,
            r#"<rect x="{LEFT}" y="{TOP}" width="{pw:.2}" height="{ph:.2}" fill="none" stroke="black"/>"#
        )
        .unwrap();
        writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            LEFT + pw / 2.0,
            HEIGHT - 14.0,
            escape(&self.x_label)
        )
        .unwrap();
        writeln!(
            out,
            r#"<text transform="translate(20,{:.2}) rotate(-90)" text-anchor="middle">{}</text>"#,
            TOP + ph / 2.0,
            escape(&self.y_label)
        )
        .unwrap();

        for (k, s) in self.series.iter().enumerate() {
            let color = PALETTE[k % PALETTE.len()];
            let axis = if s.secondary { &y2 } else { &y };
            if !s.band.is_empty() {
                let mut pts: Vec<String> = s
                    .band
                    .iter()
                    .map(|b| format!("{:.2},{:.2}", px(b.0), py(axis.frac_clamped(b.2))))
                    .collect();
                pts.extend(
                    s.band
                        .iter()
                        .rev()
                        .map(|b| format!("{:.2},{:.2}", px(b.0), py(axis.frac_clamped(b.1)))),
                );
                writeln!(
                    out,
                    r#"<polygon points="{}" fill="{color}" fill-opacity="0.15" stroke="none"/>"#,
                    pts.join(" ")
                )
                .unwrap();
            }
            let pts: Vec<(f64, f64)> = s
                .points
                .iter()
                .filter_map(|p| axis.frac(p.1).map(|f| (px(p.0), py(f))))
                .collect();
            let dash = if s.secondary { r#" stroke-dasharray="6 4""# } else { "" };
            let path: Vec<String> = pts.iter().map(|(a, b)| format!("{a:.2},{b:.2}")).collect();
            writeln!(
                out,
                r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.8"{dash}/>"#,
                path.join(" ")
            )
            .unwrap();
            for (a, b) in &pts {
                writeln!(out, r#"<circle cx="{a:.2}" cy="{b:.2}" r="2.5" fill="{color}"/>"#).unwrap();
            }
            let ly = TOP + 14.0 + 15.0 * k as f64;
            let lx = LEFT + pw - 150.0;
            writeln!(
                out,
                r#"<line x1="{lx:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{color}" stroke-width="2"{dash}/>"#,
                ly - 4.0,
                lx + 18.0,
                ly - 4.0
            )
            .unwrap();
            writeln!(
                out,
                r#"<text x="{:.2}" y="{ly:.2}">{}</text>"#,
                lx + 24.0,
                escape(&s.name)
            )
            .unwrap();
        }
        out.push_str("</svg>\n");
        out
    }
}
