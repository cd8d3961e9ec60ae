//! Minimal SVG charts for `farm analyze --svg`.

use std::fmt::Write;

use serde_json::Value;

const W: f64 = 640.0;
const H: f64 = 400.0;
const PAD: f64 = 48.0;
const PALETTE: [&str; 6] = [
    "#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02",
];

struct Scale {
    min: f64,
    max: f64,
    lo: f64,
    hi: f64,
}

impl Scale {
    fn new(values: impl Iterator<Item = f64>, lo: f64, hi: f64) -> Self {
        let (mut min, mut max) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values {
            min = min.min(v);
            max = max.max(v);
        }
        if !min.is_finite() {
            (min, max) = (0.0, 1.0);
        }
        if min == max {
            max = min + 1.0;
        }
        Scale { min, max, lo, hi }
    }

    fn at(&self, v: f64) -> f64 {
        self.lo + (v - self.min) / (self.max - self.min) * (self.hi - self.lo)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn frame(title: &str, x_label: &str, body: &str) -> String {
    format!(
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">
<rect width="100%" height="100%" fill="white"/>
<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>
<line x1="{PAD}" y1="{}" x2="{}" y2="{}" stroke="black"/>
<line x1="{PAD}" y1="{PAD}" x2="{PAD}" y2="{}" stroke="black"/>
<text x="{}" y="{}" text-anchor="middle">{}</text>
<text x="14" y="{}" transform="rotate(-90 14 {})" text-anchor="middle">yield_kg</text>
{body}</svg>
"#,
        W / 2.0,
        escape(title),
        H - PAD,
        W - PAD,
        H - PAD,
        H - PAD,
        W / 2.0,
        H - 12.0,
        escape(x_label),
        H / 2.0,
        H / 2.0,
    )
}

/// Renders an analyze response (timeseries or scatter) as SVG.
pub fn render(resp: &Value) -> String {
    match resp["chart"].as_str() {
        Some("scatter") => scatter(resp),
        _ => timeseries(resp),
    }
}

fn timeseries(resp: &Value) -> String {
    let points: Vec<(String, f64)> = resp["series"]
        .as_array()
        .map(|a| {
            a.iter()
                .map(|p| {
                    (
                        p["bucket_start"].as_str().unwrap_or("").to_string(),
                        p["value"].as_f64().unwrap_or(0.0),
                    )
                })
                .collect()
        })
        .unwrap_or_default();
    let xs = Scale::new((0..points.len()).map(|i| i as f64), PAD, W - PAD);
    let ys = Scale::new(points.iter().map(|p| p.1).chain([0.0]), H - PAD, PAD);
    let mut body = String::new();
    let path: Vec<String> = points
        .iter()
        .enumerate()
        .map(|(i, p)| format!("{:.2},{:.2}", xs.at(i as f64), ys.at(p.1)))
        .collect();
    let _ = writeln!(
        body,
        r#"<polyline fill="none" stroke="{}" stroke-width="2" points="{}"/>"#,
        PALETTE[0],
        path.join(" ")
    );
    for (i, (label, v)) in points.iter().enumerate() {
        let _ = writeln!(
            body,
            r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{}"><title>{} {}</title></circle>"#,
            xs.at(i as f64),
            ys.at(*v),
            PALETTE[0],
            escape(label),
            v
        );
    }
    if let (Some(first), Some(last)) = (points.first(), points.last()) {
        let _ = writeln!(
            body,
            r#"<text x="{PAD}" y="{}">{}</text>"#,
            H - PAD + 16.0,
            escape(&first.0)
        );
        let _ = writeln!(
            body,
            r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#,
            W - PAD,
            H - PAD + 16.0,
            escape(&last.0)
        );
    }
    frame("Yield over time", "date", &body)
}

fn scatter(resp: &Value) -> String {
    let empty = serde_json::Map::new();
    let groups = resp["groups"].as_object().unwrap_or(&empty);
    let pts = |g: &Value| -> Vec<(f64, f64)> {
        g["points"]
            .as_array()
            .map(|a| {
                a.iter()
                    .map(|p| (p[0].as_f64().unwrap_or(0.0), p[1].as_f64().unwrap_or(0.0)))
                    .collect()
            })
            .unwrap_or_default()
    };
    let all: Vec<(f64, f64)> = groups.values().flat_map(pts).collect();
    let xs = Scale::new(all.iter().map(|p| p.0), PAD, W - PAD);
    let ys = Scale::new(all.iter().map(|p| p.1).chain([0.0]), H - PAD, PAD);
    let mut body = String::new();
    for (i, (label, g)) in groups.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        for (x, y) in pts(g) {
            let _ = writeln!(
                body,
                r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}" fill-opacity="0.7"/>"#,
                xs.at(x),
                ys.at(y)
            );
        }
        if let (Some(m), Some(b)) = (g["fit"]["slope"].as_f64(), g["fit"]["intercept"].as_f64()) {
            let _ = writeln!(
                body,
                r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{color}" stroke-width="1.5"/>"#,
                xs.at(xs.min),
                ys.at(m * xs.min + b),
                xs.at(xs.max),
                ys.at(m * xs.max + b)
            );
        }
        let ly = PAD + 16.0 * i as f64;
        let _ = writeln!(
            body,
            r#"<rect x="{}" y="{}" width="10" height="10" fill="{color}"/><text x="{}" y="{}">{}</text>"#,
            W - PAD - 120.0,
            ly - 9.0,
            W - PAD - 104.0,
            ly,
            escape(label)
        );
    }
    let resource = resp["resource"].as_str().unwrap_or("resource");
    frame(&format!("Yield vs {resource}"), resource, &body)
}
