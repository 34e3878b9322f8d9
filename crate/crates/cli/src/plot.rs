//! Bare-bones PNG rendering for scatter plots, heatmaps and line charts.
//! Plots are for eyeballing only; numbers always come from the CSVs.

use std::io::Cursor;

use image::{ImageFormat, Rgb, RgbImage};
use ncsn::Tensor;

use crate::error::{CliError, CliResult};
use crate::output::OutDir;

const SIZE: u32 = 480;
const MARGIN: u32 = 20;
const WHITE: Rgb<u8> = Rgb([255, 255, 255]);
const AXIS: Rgb<u8> = Rgb([170, 170, 170]);
pub const BLUE: Rgb<u8> = Rgb([31, 119, 180]);
pub const ORANGE: Rgb<u8> = Rgb([255, 127, 14]);

fn canvas() -> RgbImage {
    RgbImage::from_pixel(SIZE, SIZE, WHITE)
}

/// Maps `v` in `[lo, hi]` to a pixel coordinate inside the margins.
fn to_px(v: f64, lo: f64, hi: f64) -> Option<u32> {
    let span = (SIZE - 2 * MARGIN - 1) as f64;
    let t = (v - lo) / (hi - lo);
    (0.0..=1.0)
        .contains(&t)
        .then(|| MARGIN + (t * span).round() as u32)
}

fn frame(img: &mut RgbImage) {
    for i in MARGIN..SIZE - MARGIN {
        for (x, y) in [
            (i, MARGIN),
            (i, SIZE - MARGIN - 1),
            (MARGIN, i),
            (SIZE - MARGIN - 1, i),
        ] {
            img.put_pixel(x, y, AXIS);
        }
    }
}

fn save(out: &OutDir, name: &str, img: &RgbImage) -> CliResult<()> {
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png)
        .map_err(|e| CliError::io(&out.path(name), e))?;
    crate::output::write_atomic(&out.path(name), buf.get_ref())
}

/// Scatter of the first two columns over the square `[-bound, bound]^2`.
pub fn scatter(out: &OutDir, name: &str, points: &Tensor, bound: f64) -> CliResult<()> {
    let mut img = canvas();
    frame(&mut img);
    for row in points.rows_iter() {
        let y = if row.len() > 1 { row[1] } else { 0.0 };
        if let (Some(px), Some(py)) = (to_px(row[0], -bound, bound), to_px(-y, -bound, bound)) {
            for (dx, dy) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
                img.put_pixel((px + dx).min(SIZE - 1), (py + dy).min(SIZE - 1), BLUE);
            }
        }
    }
    save(out, name, &img)
}

/// Heatmap of an `n x n` grid stored with the first axis outermost.
/// Values are log-compressed and normalized to the grid maximum.
pub fn heatmap(out: &OutDir, name: &str, values: &[f64], n: usize) -> CliResult<()> {
    let mut img = canvas();
    let max = values.iter().map(|v| v.abs().ln_1p()).fold(0.0, f64::max);
    let cell = (SIZE - 2 * MARGIN) as f64 / n as f64;
    for px in 0..SIZE - 2 * MARGIN {
        for py in 0..SIZE - 2 * MARGIN {
            let i = ((px as f64 / cell) as usize).min(n - 1);
            let j = n - 1 - ((py as f64 / cell) as usize).min(n - 1);
            let v = values[i * n + j].abs().ln_1p();
            let t = if max > 0.0 { v / max } else { 0.0 };
            img.put_pixel(px + MARGIN, py + MARGIN, ramp(t));
        }
    }
    frame(&mut img);
    save(out, name, &img)
}

/// Dark blue through teal to yellow.
fn ramp(t: f64) -> Rgb<u8> {
    let t = t.clamp(0.0, 1.0);
    let lerp = |a: f64, b: f64, s: f64| (a + (b - a) * s).round() as u8;
    if t < 0.5 {
        let s = t * 2.0;
        Rgb([
            lerp(68.0, 33.0, s),
            lerp(1.0, 145.0, s),
            lerp(84.0, 140.0, s),
        ])
    } else {
        let s = (t - 0.5) * 2.0;
        Rgb([
            lerp(33.0, 253.0, s),
            lerp(145.0, 231.0, s),
            lerp(140.0, 37.0, s),
        ])
    }
}

/// Line chart of one or more series against their index, sharing one y range.
pub fn lines(out: &OutDir, name: &str, series: &[(&[f64], Rgb<u8>)]) -> CliResult<()> {
    let mut img = canvas();
    frame(&mut img);
    let finite = series
        .iter()
        .flat_map(|(s, _)| s.iter().copied())
        .filter(|v| v.is_finite());
    let (lo, hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| {
        (a.min(v), b.max(v))
    });
    let len = series.iter().map(|(s, _)| s.len()).max().unwrap_or(0);
    if len < 2 || !(hi > lo) {
        return save(out, name, &img);
    }
    for (s, color) in series {
        let mut prev: Option<(u32, u32)> = None;
        for (i, &v) in s.iter().enumerate() {
            let px = to_px(i as f64, 0.0, (len - 1) as f64);
            let py = to_px(hi + lo - v, lo, hi);
            let cur = px.zip(py);
            if let (Some(a), Some(b)) = (prev, cur) {
                segment(&mut img, a, b, *color);
            }
            prev = cur;
        }
    }
    save(out, name, &img)
}

fn segment(img: &mut RgbImage, a: (u32, u32), b: (u32, u32), color: Rgb<u8>) {
    let (dx, dy) = (b.0 as f64 - a.0 as f64, b.1 as f64 - a.1 as f64);
    let n = dx.abs().max(dy.abs()).max(1.0) as u32;
    for k in 0..=n {
        let t = k as f64 / n as f64;
        let x = (a.0 as f64 + t * dx).round() as u32;
        let y = (a.1 as f64 + t * dy).round() as u32;
        img.put_pixel(x, y, color);
    }
}
