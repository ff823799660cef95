//! Offline reference embedder: hand-built colour and shape features mapped to
//! 512 dimensions by a fixed orthonormal transform.
//!
//! Raw feature layout (`RAW_LEN` = 212), all computed on 8-bit RGB scaled
//! to [0, 1]:
//!
//! | offset | len | block |
//! |-------:|----:|-------|
//! | 0   | 48  | ink (1 − mean) of R, G, B in each cell of a 4×4 grid (row-major cells, channels innermost) |
//! | 48  | 24  | 8-bin histograms of R, G, B (bin = value / 32) over foreground pixels, each summing to 1 |
//! | 72  | 128 | Sobel gradient magnitude of luminance per 4×4 cell and 8 unsigned orientation bins, divided by pixel count |
//! | 200 | 7   | normalized central moments η20 η11 η02 η30 η21 η12 η03 of the foreground mask |
//! | 207 | 5   | darkness (1 − luminance) mean, luminance standard deviation, foreground fraction, darkness maximum and minimum |
//!
//! A pixel is foreground when its smallest channel is below 240. If no pixel
//! is, histograms fall back to all pixels and the moments are zero.
//! Luminance is (0.299 R + 0.587 G + 0.114 B), computed in integers.
//!
//! Each block is multiplied by its weight, the vector is zero-padded to 512,
//! multiplied by the random-sign diagonal `D` and the normalized Hadamard
//! matrix `H/√512`, and finally scaled to unit length.

use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Embedding, EMBEDDING_DIM};
use crate::render::RasterImage;

pub const RAW_LEN: usize = 212;
pub const GRID: usize = 4;
pub const BINS: usize = 8;
pub const FOREGROUND_BELOW: u8 = 240;
const PROJECTION_SEED: u64 = 0x7e1e_9a5e_0512_d00d;

pub const BLOCKS: [(&str, usize, usize); 5] = [
    ("grid_rgb", 0, 48),
    ("histogram", 48, 24),
    ("orientation", 72, 128),
    ("moments", 200, 7),
    ("luminance", 207, 5),
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureWeights {
    pub grid_rgb: f64,
    pub histogram: f64,
    pub orientation: f64,
    pub moments: f64,
    pub luminance: f64,
}

impl Default for FeatureWeights {
    fn default() -> Self {
        FeatureWeights {
            grid_rgb: 2.0,
            histogram: 1.0,
            orientation: 16.0,
            moments: 1.0,
            luminance: 0.5,
        }
    }
}

impl FeatureWeights {
    fn as_array(&self) -> [f64; 5] {
        [self.grid_rgb, self.histogram, self.orientation, self.moments, self.luminance]
    }

    pub fn apply(&self, raw: &[f64]) -> Vec<f64> {
        let mut out = raw.to_vec();
        for ((_, off, len), w) in BLOCKS.iter().zip(self.as_array()) {
            for v in &mut out[*off..off + len] {
                *v *= w;
            }
        }
        out
    }
}

/// Luminance scaled by 255 000 (integer weights 299, 587, 114).
fn luminance_milli(p: &[u8]) -> i32 {
    299 * p[0] as i32 + 587 * p[1] as i32 + 114 * p[2] as i32
}

const LUM_SCALE: f64 = 255_000.0;

/// Unit vectors at k·π/8, k = 1..7, bounding the orientation sectors.
fn sector_edges() -> &'static [(f64, f64); BINS - 1] {
    static EDGES: OnceLock<[(f64, f64); BINS - 1]> = OnceLock::new();
    EDGES.get_or_init(|| {
        let mut e = [(0.0, 0.0); BINS - 1];
        for (k, v) in e.iter_mut().enumerate() {
            let t = (k + 1) as f64 * std::f64::consts::PI / BINS as f64;
            *v = (libm::cos(t), libm::sin(t));
        }
        e
    })
}

/// Unsigned orientation sector of gradient (gx, gy): floor(θ / (π/8)) with
/// θ in [0, π).
fn orientation_bin(gx: f64, gy: f64) -> usize {
    let (gx, gy) = if gy < 0.0 || (gy == 0.0 && gx < 0.0) { (-gx, -gy) } else { (gx, gy) };
    // θ ≥ edge angle  ⇔  cross(edge, g) ≥ 0 for angles in [0, π)
    sector_edges().iter().filter(|(ex, ey)| ex * gy - ey * gx >= 0.0).count()
}

pub fn raw_features(img: &RasterImage) -> Vec<f64> {
    let (w, h) = (img.width as usize, img.height as usize);
    let px = &img.pixels;
    let n = (w * h) as f64;
    let mut f = vec![0.0; RAW_LEN];
    let col_cell: Vec<usize> = (0..w).map(|x| x * GRID / w).collect();

    let mut cell_sum = [[0u64; 3]; GRID * GRID];
    let mut cell_count = [0u64; GRID * GRID];
    let mut hist_fg = [[0u64; BINS]; 3];
    let mut hist_all = [[0u64; BINS]; 3];
    let mut fg = vec![false; w * h];
    let mut fg_count = 0u64;
    let (mut m10, mut m01) = (0u64, 0u64);
    let mut lum = vec![0i32; w * h];
    let (mut lum_sum, mut lum_min, mut lum_max) = (0i64, i32::MAX, i32::MIN);

    for y in 0..h {
        let row_cell = (y * GRID / h) * GRID;
        for x in 0..w {
            let i = y * w + x;
            let p = &px[i * 3..i * 3 + 3];
            let c = row_cell + col_cell[x];
            cell_count[c] += 1;
            for ch in 0..3 {
                cell_sum[c][ch] += p[ch] as u64;
                hist_all[ch][p[ch] as usize / 32] += 1;
            }
            if p[0].min(p[1]).min(p[2]) < FOREGROUND_BELOW {
                fg[i] = true;
                fg_count += 1;
                for ch in 0..3 {
                    hist_fg[ch][p[ch] as usize / 32] += 1;
                }
                m10 += x as u64;
                m01 += y as u64;
            }
            let l = luminance_milli(p);
            lum[i] = l;
            lum_sum += l as i64;
            lum_min = lum_min.min(l);
            lum_max = lum_max.max(l);
        }
    }
    for c in 0..GRID * GRID {
        if cell_count[c] > 0 {
            for ch in 0..3 {
                f[c * 3 + ch] = 1.0 - cell_sum[c][ch] as f64 / (255.0 * cell_count[c] as f64);
            }
        }
    }
    let (hist, total) = if fg_count > 0 { (hist_fg, fg_count) } else { (hist_all, (w * h) as u64) };
    for ch in 0..3 {
        for b in 0..BINS {
            f[48 + ch * BINS + b] = hist[ch][b] as f64 / total as f64;
        }
    }

    // Sobel on integer luminance, interior pixels only
    if w >= 3 && h >= 3 {
        for y in 1..h - 1 {
            let row_cell = (y * GRID / h) * GRID;
            let (up, mid, down) = (&lum[(y - 1) * w..y * w], &lum[y * w..(y + 1) * w], &lum[(y + 1) * w..(y + 2) * w]);
            for x in 1..w - 1 {
                let gx = (up[x + 1] + 2 * mid[x + 1] + down[x + 1]) - (up[x - 1] + 2 * mid[x - 1] + down[x - 1]);
                let gy = (down[x - 1] + 2 * down[x] + down[x + 1]) - (up[x - 1] + 2 * up[x] + up[x + 1]);
                if gx == 0 && gy == 0 {
                    continue;
                }
                let (gx, gy) = (gx as f64, gy as f64);
                let mag = (gx * gx + gy * gy).sqrt() / LUM_SCALE;
                f[72 + (row_cell + col_cell[x]) * BINS + orientation_bin(gx, gy)] += mag;
            }
        }
        for v in &mut f[72..200] {
            *v /= n;
        }
    }

    if fg_count > 0 {
        let m00 = fg_count as f64;
        let (cx, cy) = (m10 as f64 / m00, m01 as f64 / m00);
        let mut mu = [[0.0f64; 4]; 4];
        for y in 0..h {
            let dy = y as f64 - cy;
            let dy2 = dy * dy;
            for x in 0..w {
                if fg[y * w + x] {
                    let dx = x as f64 - cx;
                    let dx2 = dx * dx;
                    mu[2][0] += dx2;
                    mu[1][1] += dx * dy;
                    mu[0][2] += dy2;
                    mu[3][0] += dx2 * dx;
                    mu[2][1] += dx2 * dy;
                    mu[1][2] += dx * dy2;
                    mu[0][3] += dy2 * dy;
                }
            }
        }
        let order = [(2, 0), (1, 1), (0, 2), (3, 0), (2, 1), (1, 2), (0, 3)];
        for (k, &(p, q)) in order.iter().enumerate() {
            f[200 + k] = mu[p][q] / libm::pow(m00, 1.0 + (p + q) as f64 / 2.0);
        }
    }

    let mean = lum_sum as f64 / n;
    let var = lum.iter().map(|&v| (v as f64 - mean) * (v as f64 - mean)).sum::<f64>() / n;
    f[207] = 1.0 - mean / LUM_SCALE;
    f[208] = var.sqrt() / LUM_SCALE;
    f[209] = fg_count as f64 / n;
    f[210] = 1.0 - lum_min as f64 / LUM_SCALE;
    f[211] = 1.0 - lum_max as f64 / LUM_SCALE;
    f
}

fn signs() -> &'static [f64; EMBEDDING_DIM] {
    static SIGNS: OnceLock<[f64; EMBEDDING_DIM]> = OnceLock::new();
    SIGNS.get_or_init(|| {
        let mut rng = ChaCha8Rng::seed_from_u64(PROJECTION_SEED);
        let mut s = [1.0; EMBEDDING_DIM];
        for v in s.iter_mut() {
            if rng.random_bool(0.5) {
                *v = -1.0;
            }
        }
        s
    })
}

/// In-place fast Walsh–Hadamard transform (Sylvester ordering, unnormalized).
fn fwht(v: &mut [f64]) {
    let n = v.len();
    let mut h = 1;
    while h < n {
        for i in (0..n).step_by(2 * h) {
            for j in i..i + h {
                let (a, b) = (v[j], v[j + h]);
                v[j] = a + b;
                v[j + h] = a - b;
            }
        }
        h *= 2;
    }
}

/// `H·D·x / √512` for `x` zero-padded to 512.
pub fn project(x: &[f64]) -> Vec<f64> {
    let mut v = vec![0.0; EMBEDDING_DIM];
    for (i, (a, s)) in x.iter().zip(signs()).enumerate() {
        v[i] = a * s;
    }
    fwht(&mut v);
    let k = 1.0 / (EMBEDDING_DIM as f64).sqrt();
    v.iter_mut().for_each(|a| *a *= k);
    v
}

/// Inverse of [`project`] (the transform is orthonormal).
pub fn unproject(y: &[f64]) -> Vec<f64> {
    let mut v = y.to_vec();
    v.resize(EMBEDDING_DIM, 0.0);
    fwht(&mut v);
    let k = 1.0 / (EMBEDDING_DIM as f64).sqrt();
    v.iter_mut().zip(signs()).for_each(|(a, s)| *a *= k * s);
    v
}

pub fn embed_with(img: &RasterImage, weights: &FeatureWeights) -> Embedding {
    let y = project(&weights.apply(&raw_features(img)));
    let norm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
    let k = if norm > 0.0 { 1.0 / norm } else { 0.0 };
    Embedding::new(y.iter().map(|v| (v * k) as f32).collect())
}

/// Reference embedding with default weights.
pub fn reference_embed(img: &RasterImage) -> Embedding {
    embed_with(img, &FeatureWeights::default())
}

/// Per output index, the covered source indices and their Q16 weights
/// (summing to exactly 65536).
fn area_taps(src: usize, dst: usize) -> Vec<(usize, Vec<u32>)> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|o| {
            let (a, b) = (o as f64 * scale, (o + 1) as f64 * scale);
            let first = a.floor() as usize;
            let mut ws = Vec::new();
            let mut i = first;
            while (i as f64) < b && i < src {
                let cover = b.min((i + 1) as f64) - a.max(i as f64);
                ws.push((cover / scale * 65536.0).round() as i64);
                i += 1;
            }
            let total: i64 = ws.iter().sum();
            let big = (0..ws.len()).max_by_key(|&k| ws[k]).expect("at least one tap");
            ws[big] += 65536 - total;
            (first, ws.into_iter().map(|w| w as u32).collect())
        })
        .collect()
}

/// Area-averaging resize to `w`×`h` in fixed point, rounding half up.
/// Returns a clone when sizes already match.
pub fn area_resize(img: &RasterImage, w: u32, h: u32) -> RasterImage {
    if img.width == w && img.height == h {
        return img.clone();
    }
    let (sw, sh) = (img.width as usize, img.height as usize);
    let (dw, dh) = (w as usize, h as usize);
    let xt = area_taps(sw, dw);
    let yt = area_taps(sh, dh);
    // horizontal pass, values scaled by 2^16
    let mut rows = vec![0u32; sh * dw * 3];
    for y in 0..sh {
        let src = &img.pixels[y * sw * 3..(y + 1) * sw * 3];
        let dst = &mut rows[y * dw * 3..(y + 1) * dw * 3];
        for (x, (first, ws)) in xt.iter().enumerate() {
            let window = &src[first * 3..(first + ws.len()) * 3];
            if window.chunks_exact(3).all(|p| p == &window[..3]) {
                for ch in 0..3 {
                    dst[x * 3 + ch] = (window[ch] as u32) << 16;
                }
                continue;
            }
            let mut acc = [0u32; 3];
            for (k, &wgt) in ws.iter().enumerate() {
                let p = &src[(first + k) * 3..(first + k) * 3 + 3];
                acc[0] += p[0] as u32 * wgt;
                acc[1] += p[1] as u32 * wgt;
                acc[2] += p[2] as u32 * wgt;
            }
            dst[x * 3..x * 3 + 3].copy_from_slice(&acc);
        }
    }
    let mut out = vec![0u8; dw * dh * 3];
    let mut acc = vec![0u64; dw * 3];
    for (y, (first, ws)) in yt.iter().enumerate() {
        acc.iter_mut().for_each(|a| *a = 0);
        for (k, &wgt) in ws.iter().enumerate() {
            let row = &rows[(first + k) * dw * 3..(first + k + 1) * dw * 3];
            for (a, &v) in acc.iter_mut().zip(row) {
                *a += v as u64 * wgt as u64;
            }
        }
        for (o, a) in out[y * dw * 3..(y + 1) * dw * 3].iter_mut().zip(&acc) {
            *o = ((a + (1 << 31)) >> 32) as u8;
        }
    }
    RasterImage {
        width: w,
        height: h,
        pixels: out,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Rgb8;

    #[test]
    fn projection_is_orthonormal() {
        let x: Vec<f64> = (0..RAW_LEN).map(|i| (i as f64 * 0.37).sin()).collect();
        let y = project(&x);
        let nx: f64 = x.iter().map(|v| v * v).sum();
        let ny: f64 = y.iter().map(|v| v * v).sum();
        assert!((nx - ny).abs() < 1e-9);
        let back = unproject(&y);
        for i in 0..EMBEDDING_DIM {
            let want = if i < RAW_LEN { x[i] } else { 0.0 };
            assert!((back[i] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn orientation_sectors() {
        let sector = std::f64::consts::PI / 8.0;
        for k in 0..720 {
            let t = (k as f64 + 0.25) * std::f64::consts::PI / 360.0;
            let (gx, gy) = (libm::cos(t), libm::sin(t));
            let mut theta = libm::atan2(gy, gx);
            if theta < 0.0 {
                theta += std::f64::consts::PI;
            }
            let want = ((theta / sector) as usize).min(7);
            assert_eq!(orientation_bin(gx, gy), want, "angle {t}");
        }
        assert_eq!(orientation_bin(1.0, 0.0), 0);
        assert_eq!(orientation_bin(-1.0, 0.0), 0);
        assert_eq!(orientation_bin(0.0, -1.0), 4);
    }

    #[test]
    fn histogram_block_is_mirror_invariant() {
        let mut img = RasterImage::filled(31, 17, Rgb8::WHITE);
        for y in 0..17 {
            for x in 0..12 {
                img.set(x, y, Rgb8([(x * 20) as u8, 40, (y * 9) as u8]));
            }
        }
        let mut mirror = img.clone();
        for y in 0..17 {
            for x in 0..31 {
                mirror.set(x, y, img.get(30 - x, y));
            }
        }
        assert_eq!(raw_features(&img)[48..72], raw_features(&mirror)[48..72]);
    }

    #[test]
    fn resize_preserves_flat_colour_and_mean() {
        let flat = RasterImage::filled(1070, 679, Rgb8([12, 200, 77]));
        let small = area_resize(&flat, 268, 170);
        assert!(small.pixels.chunks_exact(3).all(|p| p == [12, 200, 77]));
        let mut half = RasterImage::filled(4, 2, Rgb8::WHITE);
        half.set(0, 0, Rgb8::BLACK);
        half.set(1, 0, Rgb8::BLACK);
        let r = area_resize(&half, 2, 1);
        // left cell: two black of four → 127.5 rounds up
        assert_eq!(r.get(0, 0), Rgb8([128, 128, 128]));
        assert_eq!(r.get(1, 0), Rgb8::WHITE);
    }
}
