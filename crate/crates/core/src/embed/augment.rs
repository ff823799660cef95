//! Geometric and sharpness augmentations. None of them alter colour beyond
//! the blending inherent in resampling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::render::RasterImage;

pub const MAX_ROTATION_DEG: f64 = 10.0;
pub const MAX_PERSPECTIVE: f64 = 0.2;
pub const SHARPNESS_RANGE: (f64, f64) = (0.5, 2.0);
pub const FLIP_PROBABILITY: f64 = 0.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentationParams {
    pub flip: bool,
    /// Counter-clockwise, degrees.
    pub rotation: f64,
    pub perspective_strength: f64,
    /// Inward displacement of the top-left, top-right, bottom-right and
    /// bottom-left corners, as fractions of `strength · (w/2, h/2)`.
    pub corners: [[f64; 2]; 4],
    pub sharpness_factor: f64,
    pub seed: u64,
    pub view: u32,
}

impl AugmentationParams {
    pub fn identity() -> Self {
        AugmentationParams {
            flip: false,
            rotation: 0.0,
            perspective_strength: 0.0,
            corners: [[0.0; 2]; 4],
            sharpness_factor: 1.0,
            seed: 0,
            view: 0,
        }
    }

    /// Parameters of view `view` under `seed`; each view has its own
    /// ChaCha stream so views are independent of how many are drawn.
    pub fn draw(seed: u64, view: u32) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(view as u64);
        let flip = rng.random_bool(FLIP_PROBABILITY);
        let rotation = rng.random_range(-MAX_ROTATION_DEG..=MAX_ROTATION_DEG);
        let perspective_strength = rng.random_range(0.0..=MAX_PERSPECTIVE);
        let mut corners = [[0.0; 2]; 4];
        for c in corners.iter_mut() {
            c[0] = rng.random_range(0.0..=1.0);
            c[1] = rng.random_range(0.0..=1.0);
        }
        let sharpness_factor = rng.random_range(SHARPNESS_RANGE.0..=SHARPNESS_RANGE.1);
        AugmentationParams {
            flip,
            rotation,
            perspective_strength,
            corners,
            sharpness_factor,
            seed,
            view,
        }
    }

    pub fn in_range(&self) -> bool {
        self.rotation.abs() <= MAX_ROTATION_DEG
            && (0.0..=MAX_PERSPECTIVE).contains(&self.perspective_strength)
            && self.corners.iter().flatten().all(|c| (0.0..=1.0).contains(c))
            && (SHARPNESS_RANGE.0..=SHARPNESS_RANGE.1).contains(&self.sharpness_factor)
    }
}

type Mat3 = [[f64; 3]; 3];

const IDENTITY: Mat3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

fn matmul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
        }
    }
    out
}

/// Homography taking each `src[k]` to `dst[k]`, or `None` when degenerate.
pub fn homography(src: &[[f64; 2]; 4], dst: &[[f64; 2]; 4]) -> Option<Mat3> {
    let mut a = [[0.0f64; 9]; 8];
    for k in 0..4 {
        let ([x, y], [u, v]) = (src[k], dst[k]);
        a[2 * k] = [x, y, 1.0, 0.0, 0.0, 0.0, -u * x, -u * y, u];
        a[2 * k + 1] = [0.0, 0.0, 0.0, x, y, 1.0, -v * x, -v * y, v];
    }
    // Gauss-Jordan with partial pivoting
    for col in 0..8 {
        let piv = (col..8).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, piv);
        let p = a[col][col];
        for v in a[col].iter_mut() {
            *v /= p;
        }
        for r in 0..8 {
            if r != col {
                let f = a[r][col];
                if f != 0.0 {
                    for c in col..9 {
                        a[r][c] -= f * a[col][c];
                    }
                }
            }
        }
    }
    let h: Vec<f64> = (0..8).map(|r| a[r][8]).collect();
    Some([[h[0], h[1], h[2]], [h[3], h[4], h[5]], [h[6], h[7], 1.0]])
}

/// Maps output pixel-centre coordinates to source coordinates.
fn inverse_map(p: &AugmentationParams, w: f64, h: f64) -> Mat3 {
    let mut m = IDENTITY;
    if p.flip {
        m = [[-1.0, 0.0, w], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    }
    if p.rotation != 0.0 {
        // content turns by +θ (counter-clockwise on screen, y down), so
        // sample at the point turned back by −θ around the centre
        let t = p.rotation.to_radians();
        let (s, c) = (libm::sin(t), libm::cos(t));
        let (cx, cy) = (w / 2.0, h / 2.0);
        let r = [
            [c, -s, cx - c * cx + s * cy],
            [s, c, cy - s * cx - c * cy],
            [0.0, 0.0, 1.0],
        ];
        m = matmul(&m, &r);
    }
    if p.perspective_strength > 0.0 {
        let (hw, hh) = (p.perspective_strength * w / 2.0, p.perspective_strength * h / 2.0);
        let k = &p.corners;
        let orig = [[0.0, 0.0], [w, 0.0], [w, h], [0.0, h]];
        let moved = [
            [k[0][0] * hw, k[0][1] * hh],
            [w - k[1][0] * hw, k[1][1] * hh],
            [w - k[2][0] * hw, h - k[2][1] * hh],
            [k[3][0] * hw, h - k[3][1] * hh],
        ];
        if let Some(hinv) = homography(&moved, &orig) {
            m = matmul(&m, &hinv);
        }
    }
    m
}

fn warp(img: &RasterImage, m: &Mat3) -> RasterImage {
    let (w, h) = (img.width as usize, img.height as usize);
    let mut out = vec![0u8; w * h * 3];
    let src = &img.pixels;
    let (maxx, maxy) = ((w - 1) as f64, (h - 1) as f64);
    for y in 0..h {
        let yc = y as f64 + 0.5;
        let row = &mut out[y * w * 3..(y + 1) * w * 3];
        let (bx, by, bz) = (
            m[0][1] * yc + m[0][2],
            m[1][1] * yc + m[1][2],
            m[2][1] * yc + m[2][2],
        );
        for (x, o) in row.chunks_exact_mut(3).enumerate() {
            let xc = x as f64 + 0.5;
            let iz = 1.0 / (m[2][0] * xc + bz);
            let sx = ((m[0][0] * xc + bx) * iz - 0.5).max(0.0).min(maxx);
            let sy = ((m[1][0] * xc + by) * iz - 0.5).max(0.0).min(maxy);
            let (x0, y0) = (sx as usize, sy as usize);
            // bilinear weights in 1/256 steps
            let fx = ((sx - x0 as f64) * 256.0 + 0.5) as u32;
            let fy = ((sy - y0 as f64) * 256.0 + 0.5) as u32;
            let dx = if x0 + 1 < w { 3 } else { 0 };
            let dy = if y0 + 1 < h { w * 3 } else { 0 };
            let i00 = (y0 * w + x0) * 3;
            let (i10, i01) = (i00 + dx, i00 + dy);
            let i11 = i01 + dx;
            let (p00, p10): (&[u8; 3], &[u8; 3]) = (src[i00..i00 + 3].try_into().unwrap(), src[i10..i10 + 3].try_into().unwrap());
            let (p01, p11): (&[u8; 3], &[u8; 3]) = (src[i01..i01 + 3].try_into().unwrap(), src[i11..i11 + 3].try_into().unwrap());
            if p00 == p10 && p00 == p01 && p00 == p11 {
                o.copy_from_slice(p00);
                continue;
            }
            for ch in 0..3 {
                let top = p00[ch] as u32 * (256 - fx) + p10[ch] as u32 * fx;
                let bot = p01[ch] as u32 * (256 - fx) + p11[ch] as u32 * fx;
                o[ch] = ((top * (256 - fy) + bot * fy + 32768) >> 16) as u8;
            }
        }
    }
    RasterImage {
        width: img.width,
        height: img.height,
        pixels: out,
    }
}

/// Blend with a 3×3 smoothing kernel (centre 5, neighbours 1, /13); factor 1
/// is the identity, below 1 blurs, above 1 sharpens. Border pixels are kept.
pub fn adjust_sharpness(img: &RasterImage, factor: f64) -> RasterImage {
    if factor == 1.0 || img.width < 3 || img.height < 3 {
        return img.clone();
    }
    let (w, h) = (img.width as usize, img.height as usize);
    let stride = w * 3;
    let src = &img.pixels;
    let mut out = src.clone();
    for y in 1..h - 1 {
        let (up, mid, down) = (&src[(y - 1) * stride..y * stride], &src[y * stride..(y + 1) * stride], &src[(y + 1) * stride..(y + 2) * stride]);
        let dst = &mut out[y * stride..(y + 1) * stride];
        for i in 3..stride - 3 {
            let centre = mid[i] as u32;
            let sum = up[i - 3] as u32
                + up[i] as u32
                + up[i + 3] as u32
                + mid[i - 3] as u32
                + 5 * centre
                + mid[i + 3] as u32
                + down[i - 3] as u32
                + down[i] as u32
                + down[i + 3] as u32;
            let blurred = (sum + 6) / 13;
            if blurred == centre {
                continue;
            }
            let v = factor * centre as f64 + (1.0 - factor) * blurred as f64;
            dst[i] = (v + 0.5) as u8;
        }
    }
    RasterImage {
        width: img.width,
        height: img.height,
        pixels: out,
    }
}

/// Flip, then rotation, then perspective (one resampling pass), then sharpness.
pub fn apply(img: &RasterImage, p: &AugmentationParams) -> RasterImage {
    let m = inverse_map(p, img.width as f64, img.height as f64);
    let warped = if m == IDENTITY { img.clone() } else { warp(img, &m) };
    adjust_sharpness(&warped, p.sharpness_factor)
}

pub fn augment_views(img: &RasterImage, n: usize, seed: u64) -> Vec<RasterImage> {
    (0..n as u32).map(|i| apply(img, &AugmentationParams::draw(seed, i))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Rgb8;

    fn gradient(w: u32, h: u32) -> RasterImage {
        let mut img = RasterImage::filled(w, h, Rgb8::WHITE);
        for y in 0..h {
            for x in 0..w {
                img.set(x, y, Rgb8([(x * 7 % 256) as u8, (y * 13 % 256) as u8, ((x + y) % 256) as u8]));
            }
        }
        img
    }

    #[test]
    fn identity_params_return_original() {
        let img = gradient(40, 30);
        assert_eq!(apply(&img, &AugmentationParams::identity()), img);
    }

    #[test]
    fn views_are_deterministic_and_in_range() {
        let img = gradient(40, 30);
        assert_eq!(augment_views(&img, 5, 9), augment_views(&img, 5, 9));
        assert_ne!(augment_views(&img, 5, 9), augment_views(&img, 5, 10));
        for v in 0..200 {
            assert!(AugmentationParams::draw(3, v).in_range());
        }
        // view i does not depend on how many views are requested
        assert_eq!(augment_views(&img, 2, 4)[1], augment_views(&img, 5, 4)[1]);
    }

    #[test]
    fn flip_mirrors_exactly() {
        let img = gradient(17, 5);
        let p = AugmentationParams {
            flip: true,
            ..AugmentationParams::identity()
        };
        let out = apply(&img, &p);
        for y in 0..5 {
            for x in 0..17 {
                assert_eq!(out.get(x, y), img.get(16 - x, y));
            }
        }
    }

    #[test]
    fn homography_maps_corners() {
        let src = [[0.0, 0.0], [10.0, 0.0], [10.0, 8.0], [0.0, 8.0]];
        let dst = [[1.0, 0.5], [9.0, 1.0], [9.5, 7.0], [0.0, 8.0]];
        let m = homography(&src, &dst).unwrap();
        for k in 0..4 {
            let [x, y] = src[k];
            let z = m[2][0] * x + m[2][1] * y + m[2][2];
            assert!(((m[0][0] * x + m[0][1] * y + m[0][2]) / z - dst[k][0]).abs() < 1e-9);
            assert!(((m[1][0] * x + m[1][1] * y + m[1][2]) / z - dst[k][1]).abs() < 1e-9);
        }
    }

    #[test]
    fn quarter_turn_moves_corner() {
        // 90° is outside the sampled range but exercises the rotation sense
        let mut img = RasterImage::filled(9, 9, Rgb8::WHITE);
        img.set(8, 4, Rgb8::BLACK);
        let p = AugmentationParams {
            rotation: 90.0,
            ..AugmentationParams::identity()
        };
        let out = apply(&img, &p);
        // counter-clockwise on screen: the right-middle pixel goes to the top
        assert_eq!(out.get(4, 0), Rgb8::BLACK);
    }

    #[test]
    fn monochrome_image_is_unchanged() {
        let red = RasterImage::filled(50, 30, Rgb8([255, 0, 0]));
        for v in augment_views(&red, 8, 1) {
            assert_eq!(v, red);
        }
    }
}
