//! Heatmap and arrow renderings of scene orientation histograms.

use std::f64::consts::TAU;
use std::fmt::Write as _;

/// Binary PPM of the per-pixel maximal bin value, scaled so the largest
/// value in the map is white. A flat map renders mid-grey.
pub fn heatmap_ppm(map: &[f64], bins: usize, h: usize, w: usize) -> Vec<u8> {
    let hw = h * w;
    let peak: Vec<f64> = (0..hw)
        .map(|p| (0..bins).map(|b| map[b * hw + p]).fold(f64::NEG_INFINITY, f64::max))
        .collect();
    let lo = peak.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = peak.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    for &v in &peak {
        let t = if hi - lo > 1e-12 { (v - lo) / (hi - lo) } else { 0.5 };
        // dark blue to yellow
        let px = [(255.0 * t) as u8, (200.0 * t + 30.0 * (1.0 - t)) as u8, (120.0 * (1.0 - t)) as u8];
        out.extend_from_slice(&px);
    }
    out
}

/// SVG with, at every `stride`-th pixel, one segment per bin pointing along
/// the bin's angle with length proportional to its value.
pub fn arrows_svg(map: &[f64], bins: usize, h: usize, w: usize, stride: usize) -> String {
    let hw = h * w;
    let stride = stride.max(1);
    let scale = 4.0 * stride as f64;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}" viewBox="-0.5 -0.5 {w} {h}">"#,
        w * 8,
        h * 8
    );
    let _ = writeln!(s, r#"<rect x="-0.5" y="-0.5" width="{w}" height="{h}" fill="white"/>"#);
    for r in (0..h).step_by(stride) {
        for c in (0..w).step_by(stride) {
            for b in 0..bins {
                let v = map[b * hw + r * w + c];
                let a = TAU * b as f64 / bins as f64;
                let (x2, y2) = (c as f64 + scale * v * a.cos(), r as f64 + scale * v * a.sin());
                let _ = writeln!(
                    s,
                    r#"<line x1="{c}" y1="{r}" x2="{x2:.4}" y2="{y2:.4}" stroke="black" stroke-width="0.15"/>"#
                );
            }
        }
    }
    s.push_str("</svg>\n");
    s
}
