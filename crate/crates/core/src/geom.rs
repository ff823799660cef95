//! Small 2D vector type, colours, and the intersection predicates used by
//! the feasibility rules.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Vec2 { x, y }
    }

    /// Unit vector at `deg` degrees counter-clockwise from +x.
    pub fn from_angle_deg(deg: f64) -> Self {
        let r = deg.to_radians();
        Vec2::new(libm::cos(r), libm::sin(r))
    }

    pub fn dot(self, o: Vec2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    pub fn cross(self, o: Vec2) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn length(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn distance(self, o: Vec2) -> f64 {
        (self - o).length()
    }

    /// Rotated a quarter turn counter-clockwise.
    pub fn perp(self) -> Vec2 {
        Vec2::new(-self.y, self.x)
    }

    pub fn normalized(self) -> Vec2 {
        let l = self.length();
        Vec2::new(self.x / l, self.y / l)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, k: f64) -> Vec2 {
        Vec2::new(self.x * k, self.y * k)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

/// 8-bit RGB colour, written `#RRGGBB`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Rgb8(pub [u8; 3]);

impl Rgb8 {
    pub const WHITE: Rgb8 = Rgb8([255, 255, 255]);
    pub const BLACK: Rgb8 = Rgb8([0, 0, 0]);

    /// Quantizes unit-interval channels, rounding half up.
    pub fn from_unit(r: f64, g: f64, b: f64) -> Rgb8 {
        let q = |c: f64| (c.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8;
        Rgb8([q(r), q(g), q(b)])
    }

    pub fn to_unit(self) -> [f64; 3] {
        self.0.map(|c| c as f64 / 255.0)
    }
}

impl fmt::Display for Rgb8 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{:02X}{:02X}{:02X}", self.0[0], self.0[1], self.0[2])
    }
}

impl FromStr for Rgb8 {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let hex = s
            .strip_prefix('#')
            .filter(|h| h.len() == 6 && h.is_ascii())
            .ok_or_else(|| format!("`{s}` is not a #RRGGBB colour"))?;
        let mut out = [0u8; 3];
        for (i, o) in out.iter_mut().enumerate() {
            *o = u8::from_str_radix(&hex[2 * i..2 * i + 2], 16)
                .map_err(|_| format!("`{s}` is not a #RRGGBB colour"))?;
        }
        Ok(Rgb8(out))
    }
}

/// Signed distance of `p` from the infinite line through `a`→`b`, positive
/// on the left.
fn side(a: Vec2, b: Vec2, p: Vec2) -> f64 {
    let d = b - a;
    let len = d.length();
    if len == 0.0 {
        return 0.0;
    }
    d.cross(p - a) / len
}

/// True iff the open segments `a1a2` and `b1b2` properly cross. Touching
/// (an endpoint within `eps` of the other segment's line) and collinear
/// overlap do not count.
pub fn segments_intersect(a1: Vec2, a2: Vec2, b1: Vec2, b2: Vec2, eps: f64) -> bool {
    let d1 = side(b1, b2, a1);
    let d2 = side(b1, b2, a2);
    let d3 = side(a1, a2, b1);
    let d4 = side(a1, a2, b2);
    let straddles = |p: f64, q: f64| (p > eps && q < -eps) || (p < -eps && q > eps);
    straddles(d1, d2) && straddles(d3, d4)
}

#[derive(Debug, thiserror::Error, PartialEq)]
#[error("circle radius must be positive, got {0}")]
pub struct NonPositiveRadius(pub f64);

/// True iff the two circles come closer than `clearance`.
pub fn circles_overlap(
    c1: Vec2,
    r1: f64,
    c2: Vec2,
    r2: f64,
    clearance: f64,
) -> Result<bool, NonPositiveRadius> {
    for r in [r1, r2] {
        if !(r > 0.0) {
            return Err(NonPositiveRadius(r));
        }
    }
    Ok(c1.distance(c2) < r1 + r2 + clearance)
}

/// Distance from `p` to the closed segment `ab`.
pub fn point_segment_distance(p: Vec2, a: Vec2, b: Vec2) -> f64 {
    let d = b - a;
    let len2 = d.dot(d);
    if len2 == 0.0 {
        return p.distance(a);
    }
    let t = ((p - a).dot(d) / len2).clamp(0.0, 1.0);
    p.distance(a + d * t)
}
