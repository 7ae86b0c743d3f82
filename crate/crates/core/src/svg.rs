/*
Copyright 2026 The msgan Authors

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
*/
//! Minimal SVG scatter plots in joint-angle axes.

use std::fmt::Write as _;

use crate::kinematics::Configuration;

const SIZE: f64 = 480.0;
const PAD: f64 = 48.0;

/// One point set with its glyph.
#[derive(Debug, Clone, Copy)]
pub struct Series<'a> {
    pub label: &'a str,
    pub points: &'a [Configuration],
    pub glyph: Glyph,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Glyph {
    Dot,
    Cross,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Scatter of the first two joint angles over the given axis ranges.
pub fn scatter(title: &str, x_range: [f64; 2], y_range: [f64; 2], series: &[Series<'_>]) -> String {
    let span = SIZE - 2.0 * PAD;
    let sx = |v: f64| PAD + (v - x_range[0]) / (x_range[1] - x_range[0]) * span;
    let sy = |v: f64| SIZE - PAD - (v - y_range[0]) / (y_range[1] - y_range[0]) * span;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#
    );
    let _ = writeln!(s, r#"<rect width="{SIZE}" height="{SIZE}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="24" text-anchor="middle" font-family="sans-serif" font-size="14">{}</text>"#,
        SIZE / 2.0,
        escape(title)
    );
    let (x0, x1, y0, y1) = (PAD, SIZE - PAD, SIZE - PAD, PAD);
    let _ = writeln!(s, r#"<g stroke="black" stroke-width="1">"#);
    let _ = writeln!(s, r#"<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}"/>"#);
    let _ = writeln!(s, r#"<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}"/>"#);
    for i in 0..=4 {
        let t = i as f64 / 4.0;
        let (px, py) = (x0 + t * span, y0 - t * span);
        let _ = writeln!(s, r#"<line x1="{px}" y1="{y0}" x2="{px}" y2="{}"/>"#, y0 + 4.0);
        let _ = writeln!(s, r#"<line x1="{x0}" y1="{py}" x2="{}" y2="{py}"/>"#, x0 - 4.0);
    }
    s.push_str("</g>\n");
    let _ = writeln!(s, r#"<g font-family="sans-serif" font-size="10">"#);
    for i in 0..=4 {
        let t = i as f64 / 4.0;
        let vx = x_range[0] + t * (x_range[1] - x_range[0]);
        let vy = y_range[0] + t * (y_range[1] - y_range[0]);
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{vx:.2}</text>"#, x0 + t * span, y0 + 16.0);
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{vy:.2}</text>"#, x0 - 6.0, y0 - t * span + 3.0);
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">q0 [rad]</text>"#, SIZE / 2.0, SIZE - 10.0);
    let _ = writeln!(
        s,
        r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">q1 [rad]</text>"#,
        SIZE / 2.0,
        SIZE / 2.0
    );
    s.push_str("</g>\n");

    let colors = ["#888888", "#d62728", "#1f77b4", "#2ca02c"];
    for (k, ser) in series.iter().enumerate() {
        let color = colors[k % colors.len()];
        let _ = writeln!(s, r#"<g id="series-{k}" fill="{color}" stroke="{color}">"#);
        let _ = writeln!(s, "<title>{}</title>", escape(ser.label));
        for q in ser.points.iter().filter(|q| q.len() >= 2) {
            let (x, y) = (sx(q[0]), sy(q[1]));
            if !(x.is_finite() && y.is_finite()) {
                continue;
            }
            match ser.glyph {
                Glyph::Dot => {
                    let _ = writeln!(s, r#"<circle cx="{x:.2}" cy="{y:.2}" r="1.5" stroke="none"/>"#);
                }
                Glyph::Cross => {
                    let _ = writeln!(
                        s,
                        r#"<path d="M{:.2} {:.2}L{:.2} {:.2}M{:.2} {:.2}L{:.2} {:.2}" fill="none" stroke-width="1"/>"#,
                        x - 3.0,
                        y - 3.0,
                        x + 3.0,
                        y + 3.0,
                        x - 3.0,
                        y + 3.0,
                        x + 3.0,
                        y - 3.0
                    );
                }
            }
        }
        s.push_str("</g>\n");
        let ly = PAD + 14.0 * k as f64;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{ly}" font-family="sans-serif" font-size="11" fill="{color}">{} {}</text>"#,
            SIZE - PAD - 110.0,
            if ser.glyph == Glyph::Dot { "\u{25cf}" } else { "\u{2715}" },
            escape(ser.label)
        );
    }
    s.push_str("</svg>\n");
    s
}
