//! Scanline rasterizer for [`SvgScene`].
//!
//! Each output row is covered by `s` sub-rows of `s·width` subsamples. Every
//! primitive is intersected analytically with each sub-row's centre line and
//! the resulting spans are painted (in draw order) into a palette-index strip,
//! which is then box-filtered down to 8-bit RGB with round-half-up. Nothing
//! here depends on float summation order beyond per-span arithmetic, so output
//! is identical wherever IEEE-754 doubles are.

use std::io::Cursor;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::scene::{Primitive, SvgScene};
use crate::geom::{Rgb8, Vec2};

pub const DEFAULT_WIDTH: u32 = 1070;
pub const DEFAULT_HEIGHT: u32 = 679;
pub const DEFAULT_SUPERSAMPLE: u32 = 4;
/// Fraction of the canvas left empty on each side.
pub const MARGIN: f64 = 0.05;

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("canvas must have positive size, got {0}x{1}")]
    Size(u32, u32),
    #[error("supersample must be 1, 2 or 4, got {0}")]
    Supersample(u32),
    #[error("scene contains non-finite coordinates")]
    NonFinite,
    #[error("pixel buffer has {got} bytes, expected {expected}")]
    BufferSize { got: usize, expected: usize },
    #[error("corrupt PNG stream: {0}")]
    CorruptPng(String),
    #[error("unsupported PNG layout: {0}")]
    UnsupportedPng(String),
}

/// Row-major 8-bit RGB image.
#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RasterImage {
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<u8>,
}

impl std::fmt::Debug for RasterImage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "RasterImage({}x{})", self.width, self.height)
    }
}

impl RasterImage {
    pub fn new(width: u32, height: u32, pixels: Vec<u8>) -> Result<Self, RasterError> {
        let expected = width as usize * height as usize * 3;
        if pixels.len() != expected {
            return Err(RasterError::BufferSize {
                got: pixels.len(),
                expected,
            });
        }
        Ok(RasterImage { width, height, pixels })
    }

    pub fn filled(width: u32, height: u32, color: Rgb8) -> Self {
        let n = width as usize * height as usize;
        let mut pixels = Vec::with_capacity(n * 3);
        for _ in 0..n {
            pixels.extend_from_slice(&color.0);
        }
        RasterImage { width, height, pixels }
    }

    pub fn get(&self, x: u32, y: u32) -> Rgb8 {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        Rgb8([self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]])
    }

    pub fn set(&mut self, x: u32, y: u32, c: Rgb8) {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        self.pixels[i..i + 3].copy_from_slice(&c.0);
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }
}

/// Intersection of one primitive with horizontal lines, in pixel space.
enum Shape {
    /// Union of round-capped segments, all of radius `r`.
    Capsules { segs: Vec<(Vec2, Vec2)>, r: f64 },
    /// Ring between radii, or a disc when `inner` is 0.
    Ring { c: Vec2, outer: f64, inner: f64 },
    Polygon { pts: Vec<Vec2> },
}

struct Prepared {
    shape: Shape,
    color: u16,
    y0: f64,
    y1: f64,
}

/// Interval of x on the line y = yc where `lo ≤ a·x + b ≤ hi`.
fn linear_band(a: f64, b: f64, lo: f64, hi: f64) -> Option<(f64, f64)> {
    if a == 0.0 {
        return (b >= lo && b <= hi).then_some((f64::NEG_INFINITY, f64::INFINITY));
    }
    let (mut x0, mut x1) = ((lo - b) / a, (hi - b) / a);
    if x0 > x1 {
        std::mem::swap(&mut x0, &mut x1);
    }
    Some((x0, x1))
}

fn chord(c: Vec2, r: f64, yc: f64) -> Option<(f64, f64)> {
    let dy = yc - c.y;
    if dy.abs() > r {
        return None;
    }
    let w = (r * r - dy * dy).sqrt();
    Some((c.x - w, c.x + w))
}

fn capsule_span(a: Vec2, b: Vec2, r: f64, yc: f64) -> Option<(f64, f64)> {
    let d = b - a;
    let len2 = d.dot(d);
    let mut acc: Option<(f64, f64)> = None;
    let mut merge = |iv: Option<(f64, f64)>| {
        if let Some((l, h)) = iv {
            if l <= h {
                acc = Some(match acc {
                    Some((al, ah)) => (al.min(l), ah.max(h)),
                    None => (l, h),
                });
            }
        }
    };
    merge(chord(a, r, yc));
    merge(chord(b, r, yc));
    if len2 > 0.0 {
        // 0 ≤ (p−a)·d ≤ |d|²  and  |(p−a)×d| ≤ r|d|
        let dy = yc - a.y;
        let along = linear_band(d.x, -a.x * d.x + dy * d.y, 0.0, len2);
        let rl = r * len2.sqrt();
        let across = linear_band(d.y, -a.x * d.y - dy * d.x, -rl, rl);
        if let (Some(p), Some(q)) = (along, across) {
            merge(Some((p.0.max(q.0), p.1.min(q.1))));
        }
    }
    acc
}

impl Shape {
    fn spans(&self, yc: f64, out: &mut Vec<(f64, f64)>) {
        match self {
            Shape::Capsules { segs, r } => {
                for &(a, b) in segs {
                    if let Some(s) = capsule_span(a, b, *r, yc) {
                        out.push(s);
                    }
                }
            }
            Shape::Ring { c, outer, inner } => {
                if let Some((l, h)) = chord(*c, *outer, yc) {
                    match chord(*c, *inner, yc) {
                        Some((il, ih)) if *inner > 0.0 => {
                            out.push((l, il));
                            out.push((ih, h));
                        }
                        _ => out.push((l, h)),
                    }
                }
            }
            Shape::Polygon { pts } => {
                let mut xs: Vec<f64> = Vec::new();
                let n = pts.len();
                for i in 0..n {
                    let (p, q) = (pts[i], pts[(i + 1) % n]);
                    if (p.y <= yc && yc < q.y) || (q.y <= yc && yc < p.y) {
                        xs.push(p.x + (yc - p.y) * (q.x - p.x) / (q.y - p.y));
                    }
                }
                xs.sort_by(f64::total_cmp);
                for pair in xs.chunks_exact(2) {
                    out.push((pair[0], pair[1]));
                }
            }
        }
    }
}

struct Palette {
    colors: Vec<Rgb8>,
}

impl Palette {
    fn index(&mut self, c: Rgb8) -> u16 {
        match self.colors.iter().position(|&k| k == c) {
            Some(i) => i as u16,
            None => {
                self.colors.push(c);
                (self.colors.len() - 1) as u16
            }
        }
    }
}

/// Uniform scale and offset mapping scene units to pixels.
pub fn canvas_transform(scene: &SvgScene, width: u32, height: u32) -> (f64, Vec2) {
    let vb = scene.view_box;
    let (w, h) = (width as f64, height as f64);
    let scale = ((1.0 - 2.0 * MARGIN) * w / vb.width).min((1.0 - 2.0 * MARGIN) * h / vb.height);
    let off = Vec2::new(
        (w - vb.width * scale) / 2.0 - vb.x * scale,
        (h - vb.height * scale) / 2.0 - vb.y * scale,
    );
    (scale, off)
}

fn prepare(scene: &SvgScene, scale: f64, off: Vec2, palette: &mut Palette) -> Vec<Prepared> {
    let tf = |p: &Vec2| *p * scale + off;
    let mut out = Vec::new();
    let mut push = |shape: Shape, color: Rgb8, palette: &mut Palette| {
        let (y0, y1) = match &shape {
            Shape::Capsules { segs, r } => segs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (a, b)| {
                (lo.min(a.y.min(b.y) - r), hi.max(a.y.max(b.y) + r))
            }),
            Shape::Ring { c, outer, .. } => (c.y - outer, c.y + outer),
            Shape::Polygon { pts } => pts
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.y), hi.max(p.y))),
        };
        let color = palette.index(color);
        out.push(Prepared { shape, color, y0, y1 });
    };
    for prim in &scene.primitives {
        match prim {
            Primitive::Line { a, b, stroke } => push(
                Shape::Capsules {
                    segs: vec![(tf(a), tf(b))],
                    r: stroke.width * scale / 2.0,
                },
                stroke.color,
                palette,
            ),
            Primitive::Polyline { points, stroke } => {
                let pts: Vec<Vec2> = points.iter().map(tf).collect();
                let segs = if pts.len() == 1 {
                    vec![(pts[0], pts[0])]
                } else {
                    pts.windows(2).map(|w| (w[0], w[1])).collect()
                };
                push(
                    Shape::Capsules {
                        segs,
                        r: stroke.width * scale / 2.0,
                    },
                    stroke.color,
                    palette,
                )
            }
            Primitive::Circle {
                center,
                radius,
                stroke,
                fill,
            } => {
                let c = tf(center);
                let r = radius * scale;
                if let Some(f) = fill {
                    push(Shape::Ring { c, outer: r, inner: 0.0 }, *f, palette);
                }
                if let Some(s) = stroke {
                    let hw = s.width * scale / 2.0;
                    push(
                        Shape::Ring {
                            c,
                            outer: r + hw,
                            inner: (r - hw).max(0.0),
                        },
                        s.color,
                        palette,
                    );
                }
            }
            Primitive::Polygon { points, fill, stroke } => {
                let pts: Vec<Vec2> = points.iter().map(tf).collect();
                if pts.len() >= 3 {
                    push(Shape::Polygon { pts: pts.clone() }, *fill, palette);
                }
                if let Some(s) = stroke {
                    let mut segs: Vec<(Vec2, Vec2)> = pts.windows(2).map(|w| (w[0], w[1])).collect();
                    if let (Some(&first), Some(&last)) = (pts.first(), pts.last()) {
                        segs.push((last, first));
                    }
                    push(
                        Shape::Capsules {
                            segs,
                            r: s.width * scale / 2.0,
                        },
                        s.color,
                        palette,
                    );
                }
            }
        }
    }
    out
}

/// Rasterizes a scene into a `width`×`height` RGB image.
pub fn rasterize(scene: &SvgScene, width: u32, height: u32, supersample: u32) -> Result<RasterImage, RasterError> {
    if width == 0 || height == 0 {
        return Err(RasterError::Size(width, height));
    }
    if ![1, 2, 4].contains(&supersample) {
        return Err(RasterError::Supersample(supersample));
    }
    let vb = scene.view_box;
    if !scene.is_finite() || ![vb.x, vb.y, vb.width, vb.height].iter().all(|v| v.is_finite()) {
        return Err(RasterError::NonFinite);
    }
    let mut img = RasterImage::filled(width, height, scene.background);
    if scene.primitives.is_empty() || vb.width <= 0.0 || vb.height <= 0.0 {
        return Ok(img);
    }

    let mut palette = Palette { colors: vec![scene.background] };
    let (scale, off) = canvas_transform(scene, width, height);
    let prims = prepare(scene, scale, off, &mut palette);
    let rgb: Vec<[u32; 3]> = palette
        .colors
        .iter()
        .map(|c| [c.0[0] as u32, c.0[1] as u32, c.0[2] as u32])
        .collect();

    let s = supersample as usize;
    let sw = width as usize * s;
    let sf = s as f64;
    let area = (s * s) as u32;
    let half = area / 2;
    let mut strip = vec![0u16; sw * s];
    // pixels touched by any span in the current row
    let mut touched = vec![false; width as usize];
    let mut spans = Vec::new();
    let mut active = Vec::new();

    for y in 0..height as usize {
        let (ylo, yhi) = (y as f64, (y + 1) as f64);
        active.clear();
        active.extend(prims.iter().filter(|p| p.y1 >= ylo && p.y0 <= yhi));
        if active.is_empty() {
            continue;
        }
        let (mut dmin, mut dmax) = (usize::MAX, 0usize);
        for k in 0..s {
            let yc = ylo + (k as f64 + 0.5) / sf;
            let row = &mut strip[k * sw..(k + 1) * sw];
            for p in &active {
                if yc < p.y0 || yc > p.y1 {
                    continue;
                }
                spans.clear();
                p.shape.spans(yc, &mut spans);
                for &(x0, x1) in &spans {
                    // subsample j has centre (j + 0.5) / s
                    let lo = (x0 * sf - 0.5).ceil().max(0.0);
                    let hi = (x1 * sf - 0.5).floor().min((sw - 1) as f64);
                    if lo > hi {
                        continue;
                    }
                    let (lo, hi) = (lo as usize, hi as usize);
                    row[lo..=hi].fill(p.color);
                    touched[lo / s..=hi / s].fill(true);
                    dmin = dmin.min(lo);
                    dmax = dmax.max(hi);
                }
            }
        }
        if dmin > dmax {
            continue;
        }
        let (px0, px1) = (dmin / s, dmax / s);
        let line = &mut img.pixels[y * width as usize * 3..(y + 1) * width as usize * 3];
        for px in px0..=px1 {
            if !touched[px] {
                continue;
            }
            touched[px] = false;
            let first = strip[px * s];
            let mut uniform = true;
            let mut acc = [0u32; 3];
            for k in 0..s {
                for &idx in &strip[k * sw + px * s..k * sw + px * s + s] {
                    uniform &= idx == first;
                    let c = &rgb[idx as usize];
                    acc[0] += c[0];
                    acc[1] += c[1];
                    acc[2] += c[2];
                }
            }
            let out = &mut line[px * 3..px * 3 + 3];
            if uniform {
                out.copy_from_slice(&palette.colors[first as usize].0);
            } else {
                for ch in 0..3 {
                    out[ch] = ((acc[ch] + half) / area) as u8;
                }
            }
        }
        for k in 0..s {
            strip[k * sw + dmin..=k * sw + dmax].fill(0);
        }
    }
    Ok(img)
}

/// PNG bytes with fixed encoder settings (8-bit RGB, no alpha, no metadata).
pub fn encode_png(img: &RasterImage) -> Vec<u8> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, img.width, img.height);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        enc.set_compression(png::Compression::Fast);
        enc.set_filter(png::Filter::Paeth);
        let mut w = enc.write_header().expect("writing to a Vec cannot fail");
        w.write_image_data(&img.pixels).expect("buffer size matches header");
        w.finish().expect("writing to a Vec cannot fail");
    }
    out
}

pub fn decode_png(bytes: &[u8]) -> Result<RasterImage, RasterError> {
    let mut dec = png::Decoder::new(Cursor::new(bytes));
    dec.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = dec.read_info().map_err(|e| RasterError::CorruptPng(e.to_string()))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| RasterError::UnsupportedPng("image too large".into()))?;
    let mut buf = vec![0u8; size];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| RasterError::CorruptPng(e.to_string()))?;
    buf.truncate(info.buffer_size());
    let (w, h) = (info.width, info.height);
    let pixels = match info.color_type {
        png::ColorType::Rgb => buf,
        png::ColorType::Rgba => buf.chunks_exact(4).flat_map(|p| [p[0], p[1], p[2]]).collect(),
        png::ColorType::Grayscale => buf.iter().flat_map(|&g| [g, g, g]).collect(),
        png::ColorType::GrayscaleAlpha => buf.chunks_exact(2).flat_map(|p| [p[0], p[0], p[0]]).collect(),
        other => return Err(RasterError::UnsupportedPng(format!("{other:?}"))),
    };
    RasterImage::new(w, h, pixels)
}
