//! Minimal PNG line charts for per-epoch curves: white canvas, grey
//! frame, one colored polyline per series, legend swatches top-left.

use crate::error::{HierError, Result};
use image::{Rgb, RgbImage};
use std::path::Path;

const WIDTH: u32 = 800;
const HEIGHT: u32 = 500;
const MARGIN: u32 = 40;
const COLORS: [Rgb<u8>; 4] = [
    Rgb([200, 60, 60]),
    Rgb([50, 90, 200]),
    Rgb([40, 150, 70]),
    Rgb([160, 100, 180]),
];

/// Draw every (label, values) series over a shared x axis (index) and a
/// shared y range covering all finite values.
pub fn line_chart(path: &Path, series: &[(&str, &[f64])]) -> Result<()> {
    if series.is_empty() || series.iter().all(|(_, v)| v.is_empty()) {
        return Err(HierError::Config("nothing to plot".into()));
    }
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut max_len = 0usize;
    for (_, vals) in series {
        max_len = max_len.max(vals.len());
        for &v in *vals {
            if v.is_finite() {
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
    }
    if !lo.is_finite() {
        lo = 0.0;
        hi = 1.0;
    }
    if hi - lo < 1e-12 {
        hi = lo + 1.0;
    }
    let mut img = RgbImage::from_pixel(WIDTH, HEIGHT, Rgb([255, 255, 255]));
    let frame = Rgb([120, 120, 120]);
    for x in MARGIN..WIDTH - MARGIN {
        img.put_pixel(x, MARGIN, frame);
        img.put_pixel(x, HEIGHT - MARGIN, frame);
    }
    for y in MARGIN..HEIGHT - MARGIN {
        img.put_pixel(MARGIN, y, frame);
        img.put_pixel(WIDTH - MARGIN, y, frame);
    }
    let to_px = |i: usize, v: f64| -> (i64, i64) {
        let span_x = (WIDTH - 2 * MARGIN) as f64;
        let span_y = (HEIGHT - 2 * MARGIN) as f64;
        let fx = if max_len <= 1 {
            0.5
        } else {
            i as f64 / (max_len - 1) as f64
        };
        let fy = (v - lo) / (hi - lo);
        (
            (MARGIN as f64 + fx * span_x) as i64,
            (HEIGHT as f64 - MARGIN as f64 - fy * span_y) as i64,
        )
    };
    for (s, (_, vals)) in series.iter().enumerate() {
        let color = COLORS[s % COLORS.len()];
        for (i, pair) in vals.windows(2).enumerate() {
            if !(pair[0].is_finite() && pair[1].is_finite()) {
                continue;
            }
            let (x0, y0) = to_px(i, pair[0]);
            let (x1, y1) = to_px(i + 1, pair[1]);
            draw_line(&mut img, x0, y0, x1, y1, color);
        }
        if vals.len() == 1 && vals[0].is_finite() {
            let (x, y) = to_px(0, vals[0]);
            draw_line(&mut img, x - 2, y, x + 2, y, color);
        }
        // legend swatch
        let ly = MARGIN as i64 + 10 + 12 * s as i64;
        draw_line(&mut img, MARGIN as i64 + 10, ly, MARGIN as i64 + 30, ly, color);
    }
    img.save(path)
        .map_err(|e| HierError::Config(format!("write {}: {e}", path.display())))
}

fn draw_line(img: &mut RgbImage, x0: i64, y0: i64, x1: i64, y1: i64, color: Rgb<u8>) {
    let dx = (x1 - x0).abs();
    let dy = -(y1 - y0).abs();
    let sx = if x0 < x1 { 1 } else { -1 };
    let sy = if y0 < y1 { 1 } else { -1 };
    let mut err = dx + dy;
    let (mut x, mut y) = (x0, y0);
    loop {
        if x >= 0 && y >= 0 && (x as u32) < WIDTH && (y as u32) < HEIGHT {
            img.put_pixel(x as u32, y as u32, color);
        }
        if x == x1 && y == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}
