//! Minimal standalone SVG renderings.

use std::fmt::Write as _;

use super::{Histogram, RocCurve};

const SIZE: f64 = 400.0;
const PAD: f64 = 40.0;

fn frame(title: &str, x_label: &str, y_label: &str) -> String {
    let mut s = String::new();
    let full = SIZE + 2.0 * PAD;
    writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{full}" height="{full}" viewBox="0 0 {full} {full}">"#).unwrap();
    writeln!(s, r#"<rect x="{PAD}" y="{PAD}" width="{SIZE}" height="{SIZE}" fill="white" stroke="black"/>"#).unwrap();
    writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle" font-size="14">{title}</text>"#, PAD + SIZE / 2.0, PAD / 2.0).unwrap();
    writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle" font-size="12">{x_label}</text>"#, PAD + SIZE / 2.0, full - 10.0).unwrap();
    writeln!(
        s,
        r#"<text x="12" y="{}" text-anchor="middle" font-size="12" transform="rotate(-90 12 {})">{y_label}</text>"#,
        PAD + SIZE / 2.0,
        PAD + SIZE / 2.0
    )
    .unwrap();
    s
}

fn to_px(x: f64, y: f64) -> (f64, f64) {
    (PAD + x * SIZE, PAD + (1.0 - y) * SIZE)
}

pub fn roc_svg(curve: &RocCurve, title: &str) -> String {
    let mut s = frame(title, "FAR", "TAR");
    let (x0, y0) = to_px(0.0, 0.0);
    let (x1, y1) = to_px(1.0, 1.0);
    writeln!(s, r#"<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y1}" stroke="gray" stroke-dasharray="4"/>"#).unwrap();
    let pts: Vec<String> = curve
        .points()
        .iter()
        .map(|p| {
            let (x, y) = to_px(p.far, p.tar);
            format!("{x:.2},{y:.2}")
        })
        .collect();
    writeln!(s, r#"<polyline points="{}" fill="none" stroke="crimson" stroke-width="2"/>"#, pts.join(" ")).unwrap();
    s.push_str("</svg>\n");
    s
}

pub fn histogram_svg(h: &Histogram, title: &str) -> String {
    let mut s = frame(title, "distance to center", "fraction");
    let peak = h.natural.iter().chain(&h.manipulated).fold(0.0f64, |a, &b| a.max(b)).max(f64::MIN_POSITIVE);
    let w = 1.0 / h.bins() as f64;
    for (series, color) in [(&h.natural, "steelblue"), (&h.manipulated, "darkorange")] {
        for (i, &v) in series.iter().enumerate() {
            if v == 0.0 {
                continue;
            }
            let (x, y) = to_px(i as f64 * w, v / peak);
            writeln!(
                s,
                r#"<rect x="{x:.2}" y="{y:.2}" width="{:.2}" height="{:.2}" fill="{color}" fill-opacity="0.5"/>"#,
                w * SIZE,
                v / peak * SIZE
            )
            .unwrap();
        }
    }
    writeln!(s, r#"<text x="{}" y="{}" font-size="11" fill="steelblue">natural</text>"#, PAD + 8.0, PAD + 16.0).unwrap();
    writeln!(s, r#"<text x="{}" y="{}" font-size="11" fill="darkorange">manipulated</text>"#, PAD + 8.0, PAD + 30.0).unwrap();
    writeln!(
        s,
        r#"<text x="{PAD}" y="{}" font-size="10">{:.4}</text><text x="{}" y="{}" font-size="10" text-anchor="end">{:.4}</text>"#,
        PAD + SIZE + 14.0,
        h.lo,
        PAD + SIZE,
        PAD + SIZE + 14.0,
        h.hi
    )
    .unwrap();
    s.push_str("</svg>\n");
    s
}
