//! Hand-written SVG scatter panels.

use std::fmt::Write as _;

use siddm_core::eval::MogSpec;
use siddm_core::Tensor;

const SIZE: f64 = 480.0;
const MARGIN: f64 = 24.0;

/// Samples as small translucent dots over the mode centers (red crosses).
/// The view is the grid's extent padded by one spacing on every side, so a
/// healthy panel always has the same framing; points outside are dropped.
pub fn scatter_svg(samples: &Tensor, spec: &MogSpec, title: &str) -> String {
    let half = spec.spacing * ((spec.grid_k as f64 - 1.0) / 2.0 + 1.0);
    let scale = (SIZE - 2.0 * MARGIN) / (2.0 * half);
    let px = |x: f64| MARGIN + (x + half) * scale;
    let py = |y: f64| SIZE - MARGIN - (y + half) * scale;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{}" viewBox="0 0 {SIZE} {}">"#,
        SIZE + 20.0,
        SIZE + 20.0
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r##"<rect x="{MARGIN}" y="{MARGIN}" width="{w}" height="{w}" fill="none" stroke="#999" stroke-width="1"/>"##,
        w = SIZE - 2.0 * MARGIN
    );
    let _ = writeln!(s, r##"<g fill="#1f4e9c" fill-opacity="0.25">"##);
    for row in samples.data().chunks_exact(2) {
        let (x, y) = (row[0], row[1]);
        if x.abs() <= half && y.abs() <= half {
            let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="1.2"/>"#, px(x), py(y));
        }
    }
    s.push_str("</g>\n");
    let _ = writeln!(s, r##"<g stroke="#d62728" stroke-width="1.5">"##);
    for [cx, cy] in spec.centers() {
        let (x, y) = (px(cx), py(cy));
        let _ = writeln!(
            s,
            r#"<path d="M{:.2} {:.2}L{:.2} {:.2}M{:.2} {:.2}L{:.2} {:.2}"/>"#,
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
    s.push_str("</g>\n");
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" font-family="sans-serif" font-size="13" text-anchor="middle">{}</text>"#,
        SIZE / 2.0,
        SIZE + 8.0,
        escape(title)
    );
    s.push_str("</svg>\n");
    s
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
