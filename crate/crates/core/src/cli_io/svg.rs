//! Minimal SVG rendering of a macro snapshot: pressure heatmap with a
//! velocity quiver on top.

use std::fmt::Write;

use crate::linalg::Vec2;

const SIZE: f64 = 480.0;
const ARROWS_PER_SIDE: usize = 16;

fn colour(t: f64) -> String {
    // Diverging blue-white-red, t in [-1, 1].
    let t = t.clamp(-1.0, 1.0);
    let (r, g, b) = if t < 0.0 {
        (1.0 + t, 1.0 + t, 1.0)
    } else {
        (1.0, 1.0 - t, 1.0 - t)
    };
    let q = |v: f64| (v * 255.0).round() as u8;
    format!("#{:02x}{:02x}{:02x}", q(r), q(g), q(b))
}

/// `velocity` and `pressure` are cell-centred on an `n × n` grid, row-major
/// from the bottom-left cell.
pub fn render_field(velocity: &[Vec2], pressure: &[f64], n: usize) -> String {
    let cell = SIZE / n as f64;
    let pmax = pressure.iter().fold(0.0_f64, |m, p| m.max(p.abs()));
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#
    );
    for j in 0..n {
        for i in 0..n {
            let p = pressure[i + n * j];
            let t = if pmax > 0.0 { p / pmax } else { 0.0 };
            let _ = writeln!(
                s,
                r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{}"/>"#,
                i as f64 * cell,
                SIZE - (j + 1) as f64 * cell,
                cell + 0.05,
                cell + 0.05,
                colour(t)
            );
        }
    }
    let stride = (n / ARROWS_PER_SIDE).max(1);
    let vmax = velocity.iter().fold(0.0_f64, |m, v| m.max(v.norm()));
    if vmax > 0.0 {
        let scale = 0.9 * stride as f64 * cell / vmax;
        for j in (stride / 2..n).step_by(stride) {
            for i in (stride / 2..n).step_by(stride) {
                let v = velocity[i + n * j];
                let x0 = (i as f64 + 0.5) * cell;
                let y0 = SIZE - (j as f64 + 0.5) * cell;
                let (x1, y1) = (x0 + v.x * scale, y0 - v.y * scale);
                let _ = writeln!(
                    s,
                    r#"<line x1="{x0:.2}" y1="{y0:.2}" x2="{x1:.2}" y2="{y1:.2}" stroke="black" stroke-width="1.2"/><circle cx="{x1:.2}" cy="{y1:.2}" r="1.6"/>"#
                );
            }
        }
    }
    s.push_str("</svg>\n");
    s
}
