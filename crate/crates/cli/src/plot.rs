//! Minimal PNG charts: line plots, heatmaps and saliency overlays.

use std::path::Path;

use image::{Rgb, RgbImage};

use crate::error::{CliError, CliResult};

pub const PALETTE: [[u8; 3]; 5] = [[31, 119, 180], [214, 39, 40], [44, 160, 44], [255, 127, 14], [148, 103, 189]];

const MARGIN: u32 = 24;

pub struct Series {
    pub points: Vec<(f64, f64)>,
    pub color: [u8; 3],
}

fn draw_line(img: &mut RgbImage, (x0, y0): (i64, i64), (x1, y1): (i64, i64), c: Rgb<u8>) {
    let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
    let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
    let (mut x, mut y, mut err) = (x0, y0, dx + dy);
    loop {
        if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
            img.put_pixel(x as u32, y as u32, c);
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

fn range(v: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = v
        .filter(|x| x.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x), hi.max(x)));
    if !lo.is_finite() {
        (0.0, 1.0)
    } else if hi - lo < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

/// Line chart on a white background with a plain frame, axes fitted to the data.
pub fn line_plot(series: &[Series], width: u32, height: u32) -> RgbImage {
    let mut img = RgbImage::from_pixel(width, height, Rgb([255, 255, 255]));
    let (x0, x1) = range(series.iter().flat_map(|s| s.points.iter().map(|p| p.0)));
    let (y0, y1) = range(series.iter().flat_map(|s| s.points.iter().map(|p| p.1)));
    let (l, r, t, b) = (MARGIN as i64, (width - MARGIN) as i64, MARGIN as i64, (height - MARGIN) as i64);
    let frame = Rgb([90, 90, 90]);
    draw_line(&mut img, (l, b), (r, b), frame);
    draw_line(&mut img, (l, t), (l, b), frame);
    let to_px = |(x, y): (f64, f64)| {
        let px = l as f64 + (x - x0) / (x1 - x0) * (r - l) as f64;
        let py = b as f64 - (y - y0) / (y1 - y0) * (b - t) as f64;
        (px.round() as i64, py.round() as i64)
    };
    for s in series {
        let pts: Vec<_> = s.points.iter().filter(|p| p.0.is_finite() && p.1.is_finite()).map(|&p| to_px(p)).collect();
        for w in pts.windows(2) {
            draw_line(&mut img, w[0], w[1], Rgb(s.color));
        }
        if pts.len() == 1 {
            img.put_pixel(pts[0].0 as u32, pts[0].1 as u32, Rgb(s.color));
        }
    }
    img
}

fn colormap(t: f64) -> Rgb<u8> {
    let t = t.clamp(0.0, 1.0);
    let lerp = |a: f64, b: f64| (a + (b - a) * t).round() as u8;
    Rgb([lerp(68.0, 253.0), lerp(1.0, 231.0), lerp(84.0, 37.0)])
}

/// Square cells coloured from the matrix minimum (dark) to maximum (light).
pub fn heatmap(m: &[Vec<f64>], cell: u32) -> RgbImage {
    let n = m.len() as u32;
    let cols = m.first().map_or(0, |r| r.len()) as u32;
    let (lo, hi) = range(m.iter().flatten().copied());
    RgbImage::from_fn(cols.max(1) * cell, n.max(1) * cell, |x, y| {
        m.get((y / cell) as usize)
            .and_then(|r| r.get((x / cell) as usize))
            .map_or(Rgb([255, 255, 255]), |&v| colormap((v - lo) / (hi - lo)))
    })
}

/// Grayscale camera image with the saliency map, stretched to its own
/// range, blended in red.
pub fn saliency_overlay(image: &[f32], h: usize, w: usize, saliency: &[f64]) -> RgbImage {
    let (lo, hi) = range(saliency.iter().copied());
    RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let k = y as usize * w + x as usize;
        let g = (image[k].clamp(0.0, 1.0) * 255.0) as f64;
        let s = (saliency[k] - lo) / (hi - lo);
        let a = 0.6 * s;
        Rgb([
            (g * (1.0 - a) + 255.0 * a).round() as u8,
            (g * (1.0 - a)).round() as u8,
            (g * (1.0 - a)).round() as u8,
        ])
    })
}

pub fn save(img: &RgbImage, path: &Path) -> CliResult<()> {
    img.save(path)
        .map_err(|e| CliError::io(path, std::io::Error::new(std::io::ErrorKind::Other, e)))
}
