//! Deterministic synthetic test scenes for benchmarks and examples.
//!
//! Four scene families with natural-image-like content: piecewise-flat
//! shapes with straight and curved edges, high-contrast glyph rows,
//! sharp shapes over a smooth ramp, and smooth wave texture. All values
//! lie in [0,255].

use crate::image::Image;

/// Piecewise-constant rectangles, a disc and a triangle over a flat
/// background: straight edges, corners and curved boundaries.
pub fn blocks(width: usize, height: usize) -> Image {
    let (w, h) = (width as f64, height as f64);
    let mut img = Image::filled(width, height, 60.0);
    for y in 0..height {
        for x in 0..width {
            let (fx, fy) = (x as f64 / w, y as f64 / h);
            let mut v = 60.0;
            // Large house-like block with a roof-like triangle on top.
            if fx > 0.15 && fx < 0.55 && fy > 0.4 && fy < 0.85 {
                v = 190.0;
            }
            if fy > 0.2 && fy < 0.4 && (fx - 0.35).abs() < (fy - 0.2) * 1.0 {
                v = 230.0;
            }
            // Window.
            if fx > 0.25 && fx < 0.38 && fy > 0.5 && fy < 0.65 {
                v = 30.0;
            }
            // Disc.
            let (cx, cy) = (0.75, 0.35);
            if (fx - cx) * (fx - cx) + (fy - cy) * (fy - cy) < 0.02 {
                v = 140.0;
            }
            // Dark bar.
            if fx > 0.65 && fx < 0.95 && fy > 0.7 && fy < 0.78 {
                v = 10.0;
            }
            img.set(x, y, v);
        }
    }
    img
}

/// Rows of bar-and-gap glyph patterns on a bright background, text-like
/// high-contrast small structure.
pub fn glyphs(width: usize, height: usize) -> Image {
    let mut img = Image::filled(width, height, 220.0);
    let line_h = (height / 8).max(4);
    let glyph_w = (width / 12).max(3);
    for row in 0..8 {
        let y0 = row * line_h + line_h / 4;
        let y1 = y0 + line_h / 2;
        if y1 >= height {
            break;
        }
        for g in 0..12 {
            let x0 = g * glyph_w + glyph_w / 5;
            // Vary the glyph shape per (row, g) deterministically.
            let kind = (row * 5 + g * 3) % 4;
            for y in y0..y1.min(height) {
                for x in x0..(x0 + glyph_w * 3 / 5).min(width) {
                    let inside = match kind {
                        0 => true,                                     // solid bar
                        1 => (x - x0) % 3 != 2,                        // striped
                        2 => y < (y0 + y1) / 2 || (x - x0) < glyph_w / 5, // L-shape
                        _ => (x - x0) + (y - y0) * 2 < line_h,         // wedge
                    };
                    if inside {
                        img.set(x, y, 25.0);
                    }
                }
            }
        }
    }
    img
}

/// Sharp shapes over a smooth diagonal ramp: mixed smooth/edge content.
pub fn ramp_shapes(width: usize, height: usize) -> Image {
    let (w, h) = (width as f64, height as f64);
    let mut img = Image::zeros(width, height);
    for y in 0..height {
        for x in 0..width {
            let (fx, fy) = (x as f64 / w, y as f64 / h);
            let mut v = 40.0 + 150.0 * (0.5 * fx + 0.5 * fy);
            if (fx - 0.3) * (fx - 0.3) + (fy - 0.6) * (fy - 0.6) < 0.03 {
                v = 240.0;
            }
            if fx > 0.55 && fx < 0.85 && fy > 0.15 && fy < 0.45 {
                v = 15.0;
            }
            img.set(x, y, v);
        }
    }
    img
}

/// Smooth two-frequency wave texture with one step edge.
pub fn waves(width: usize, height: usize) -> Image {
    let (w, h) = (width as f64, height as f64);
    let mut img = Image::zeros(width, height);
    for y in 0..height {
        for x in 0..width {
            let (fx, fy) = (x as f64 / w, y as f64 / h);
            let mut v = 128.0
                + 55.0 * (2.0 * std::f64::consts::PI * 3.0 * fx).sin()
                    * (2.0 * std::f64::consts::PI * 2.0 * fy).cos()
                + 25.0 * (2.0 * std::f64::consts::PI * 7.0 * (fx + fy)).sin();
            if fy > 0.75 {
                v = (v - 70.0).max(0.0);
            }
            img.set(x, y, v.clamp(0.0, 255.0));
        }
    }
    img
}

/// The four benchmark scenes by name.
pub fn by_name(name: &str, width: usize, height: usize) -> Option<Image> {
    match name {
        "blocks" => Some(blocks(width, height)),
        "glyphs" => Some(glyphs(width, height)),
        "ramp" => Some(ramp_shapes(width, height)),
        "waves" => Some(waves(width, height)),
        _ => None,
    }
}

/// Names accepted by [`by_name`].
pub const SCENES: [&str; 4] = ["blocks", "glyphs", "ramp", "waves"];

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scenes_in_range_and_deterministic() {
        for name in SCENES {
            let a = by_name(name, 64, 64).unwrap();
            let b = by_name(name, 64, 64).unwrap();
            assert_eq!(a, b);
            assert!(a.min() >= 0.0 && a.max() <= 255.0);
            // Non-trivial content.
            assert!(a.max() - a.min() > 50.0, "{name} too flat");
        }
        assert!(by_name("nope", 8, 8).is_none());
    }
}
