//! Side-view bicycle geometry.
//!
//! Conventions: millimetres, +x towards the front wheel, +y up. The bottom
//! bracket sits at the origin. `bb_drop` is how far the bottom bracket sits
//! below the rear axle, so the rear axle is at
//! `(−√(cs² − drop²), +drop)` and the ground line at `y = drop − R_rear`.
//! Angles are measured from horizontal.
//!
//! The fork length is not a free parameter: it is solved so the front wheel
//! stands on the same ground line as the rear wheel.

use serde::{Deserialize, Serialize};

use crate::cad::{keys, CadDocument};
use crate::geom::{Rgb8, Vec2};
use crate::schema::{DesignSchema, DesignVector, Value};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum GeometryError {
    #[error("document key `{0}` is missing")]
    MissingKey(String),
    #[error("document key `{key}` has unusable value `{value}`")]
    BadValue { key: String, value: String },
    #[error(
        "internal inconsistency: rear triangle unsolvable (chain stay {chain_stay} <= bb drop {drop})"
    )]
    UnsolvableRearTriangle { chain_stay: f64, drop: f64 },
    #[error("internal inconsistency: geometry produced non-finite coordinates")]
    NonFinite,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum HandlebarStyle {
    Drop,
    Flat,
    Riser,
}

impl HandlebarStyle {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "drop" => Some(Self::Drop),
            "flat" => Some(Self::Flat),
            "riser" => Some(Self::Riser),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ForkStyle {
    Rigid,
    Suspension,
}

impl ForkStyle {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "rigid" => Some(Self::Rigid),
            "suspension" => Some(Self::Suspension),
            _ => None,
        }
    }
}

/// Every numeric renderer input, in schema units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BikeParams {
    pub seat_tube_length: f64,
    pub top_tube_length: f64,
    pub head_tube_length: f64,
    pub chain_stay_length: f64,
    pub seat_angle: f64,
    pub head_angle: f64,
    pub bb_drop: f64,
    pub seat_stay_offset: f64,
    pub tube_diameter: f64,
    pub wheel_diameter_front: f64,
    pub wheel_diameter_rear: f64,
    pub tire_width_front: f64,
    pub tire_width_rear: f64,
    pub fork_offset: f64,
    pub stem_reach: f64,
    pub stem_stack: f64,
    pub handlebar_drop: f64,
    pub seatpost_extension: f64,
    pub saddle_length: f64,
    pub frame_color: Rgb8,
    pub handlebar_style: HandlebarStyle,
    pub fork_style: ForkStyle,
    pub style: RenderStyle,
}

/// Non-parametric drawing defaults carried by the CAD template.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RenderStyle {
    pub background: Rgb8,
    pub tire_color: Rgb8,
    pub rim_color: Rgb8,
    pub component_color: Rgb8,
    pub rim_width: f64,
    pub component_width: f64,
    pub saddle_thickness: f64,
    pub suspension_gap: f64,
}

impl Default for RenderStyle {
    fn default() -> Self {
        RenderStyle {
            background: Rgb8::WHITE,
            tire_color: Rgb8([0x14, 0x14, 0x14]),
            rim_color: Rgb8([0x5A, 0x5A, 0x5A]),
            component_color: Rgb8([0x2B, 0x2B, 0x2B]),
            rim_width: 8.0,
            component_width: 22.0,
            saddle_thickness: 40.0,
            suspension_gap: 36.0,
        }
    }
}

/// Length-valued fields; these scale with the bike.
const LENGTH_FIELDS: [&str; 17] = [
    "seat_tube_length",
    "top_tube_length",
    "head_tube_length",
    "chain_stay_length",
    "bb_drop",
    "seat_stay_offset",
    "tube_diameter",
    "wheel_diameter_front",
    "wheel_diameter_rear",
    "tire_width_front",
    "tire_width_rear",
    "fork_offset",
    "stem_reach",
    "stem_stack",
    "handlebar_drop",
    "seatpost_extension",
    "saddle_length",
];

impl Default for BikeParams {
    /// The reference schema's default design.
    fn default() -> Self {
        BikeParams {
            seat_tube_length: 560.0,
            top_tube_length: 560.0,
            head_tube_length: 110.0,
            chain_stay_length: 420.0,
            seat_angle: 73.5,
            head_angle: 72.5,
            bb_drop: 70.0,
            seat_stay_offset: 40.0,
            tube_diameter: 32.0,
            wheel_diameter_front: 680.0,
            wheel_diameter_rear: 680.0,
            tire_width_front: 25.0,
            tire_width_rear: 25.0,
            fork_offset: 45.0,
            stem_reach: 100.0,
            stem_stack: 30.0,
            handlebar_drop: 120.0,
            seatpost_extension: 180.0,
            saddle_length: 270.0,
            frame_color: Rgb8::from_unit(0.8, 0.1, 0.1),
            handlebar_style: HandlebarStyle::Drop,
            fork_style: ForkStyle::Rigid,
            style: RenderStyle::default(),
        }
    }
}

impl BikeParams {
    fn length_mut(&mut self, name: &str) -> Option<&mut f64> {
        Some(match name {
            "seat_tube_length" => &mut self.seat_tube_length,
            "top_tube_length" => &mut self.top_tube_length,
            "head_tube_length" => &mut self.head_tube_length,
            "chain_stay_length" => &mut self.chain_stay_length,
            "seat_angle" => &mut self.seat_angle,
            "head_angle" => &mut self.head_angle,
            "bb_drop" => &mut self.bb_drop,
            "seat_stay_offset" => &mut self.seat_stay_offset,
            "tube_diameter" => &mut self.tube_diameter,
            "wheel_diameter_front" => &mut self.wheel_diameter_front,
            "wheel_diameter_rear" => &mut self.wheel_diameter_rear,
            "tire_width_front" => &mut self.tire_width_front,
            "tire_width_rear" => &mut self.tire_width_rear,
            "fork_offset" => &mut self.fork_offset,
            "stem_reach" => &mut self.stem_reach,
            "stem_stack" => &mut self.stem_stack,
            "handlebar_drop" => &mut self.handlebar_drop,
            "seatpost_extension" => &mut self.seatpost_extension,
            "saddle_length" => &mut self.saddle_length,
            _ => return None,
        })
    }

    /// Reads renderer inputs straight from a design; parameters the schema
    /// does not define keep their template defaults.
    pub fn from_design(design: &DesignVector, schema: &DesignSchema) -> BikeParams {
        let mut p = BikeParams::default();
        let mut rgb = p.frame_color.to_unit();
        for (spec, value) in schema.parameters.iter().zip(&design.values) {
            match (spec.name.as_str(), *value) {
                ("red", Value::Real(x)) => rgb[0] = x,
                ("green", Value::Real(x)) => rgb[1] = x,
                ("blue", Value::Real(x)) => rgb[2] = x,
                ("handlebar_style", Value::Label(_)) => {
                    if let Some(s) = design.label(schema, "handlebar_style").and_then(HandlebarStyle::parse) {
                        p.handlebar_style = s;
                    }
                }
                ("fork_style", Value::Label(_)) => {
                    if let Some(s) = design.label(schema, "fork_style").and_then(ForkStyle::parse) {
                        p.fork_style = s;
                    }
                }
                (name, Value::Real(x)) => {
                    if let Some(slot) = p.length_mut(name) {
                        *slot = x;
                    }
                }
                _ => {}
            }
        }
        p.frame_color = Rgb8::from_unit(rgb[0], rgb[1], rgb[2]);
        p
    }

    pub fn from_doc(doc: &CadDocument) -> Result<BikeParams, GeometryError> {
        let get = |key: &str| doc.get(key).ok_or_else(|| GeometryError::MissingKey(key.to_string()));
        let bad = |key: &str, value: &str| GeometryError::BadValue {
            key: key.to_string(),
            value: value.to_string(),
        };
        let num = |key: &str| -> Result<f64, GeometryError> {
            let v = get(key)?;
            v.parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| bad(key, v))
        };
        let color = |key: &str| -> Result<Rgb8, GeometryError> {
            let v = get(key)?;
            v.parse::<Rgb8>().map_err(|_| bad(key, v))
        };
        let mut p = BikeParams::default();
        for name in LENGTH_FIELDS.iter().chain(&["seat_angle", "head_angle"]) {
            let x = num(name)?;
            *p.length_mut(name).expect("known field") = x;
        }
        p.frame_color = color(keys::FRAME_COLOR)?;
        let hb = get("handlebar_style")?;
        p.handlebar_style = HandlebarStyle::parse(hb).ok_or_else(|| bad("handlebar_style", hb))?;
        let fk = get("fork_style")?;
        p.fork_style = ForkStyle::parse(fk).ok_or_else(|| bad("fork_style", fk))?;
        p.style = RenderStyle {
            background: color(keys::BACKGROUND_COLOR)?,
            tire_color: color(keys::TIRE_COLOR)?,
            rim_color: color(keys::RIM_COLOR)?,
            component_color: color(keys::COMPONENT_COLOR)?,
            rim_width: num(keys::RIM_WIDTH)?,
            component_width: num(keys::COMPONENT_WIDTH)?,
            saddle_thickness: num(keys::SADDLE_THICKNESS)?,
            suspension_gap: num(keys::SUSPENSION_GAP)?,
        };
        Ok(p)
    }

    /// Multiplies every length (including drawing widths) by `k`.
    pub fn scaled(&self, k: f64) -> BikeParams {
        let mut p = self.clone();
        for name in LENGTH_FIELDS {
            *p.length_mut(name).expect("known field") *= k;
        }
        p.style.rim_width *= k;
        p.style.component_width *= k;
        p.style.saddle_thickness *= k;
        p.style.suspension_gap *= k;
        p
    }

    /// Named length values checked for strict positivity by the feasibility
    /// rules.
    pub fn lengths(&self) -> Vec<(&'static str, f64)> {
        let mut me = self.clone();
        LENGTH_FIELDS
            .iter()
            .filter(|n| **n != "bb_drop")
            .map(|n| (*n, *me.length_mut(n).expect("known field")))
            .collect()
    }

    pub fn solve(&self) -> Result<BikeGeometry, GeometryError> {
        let cs = self.chain_stay_length;
        let drop = self.bb_drop;
        if !(cs > drop.abs()) {
            return Err(GeometryError::UnsolvableRearTriangle {
                chain_stay: cs,
                drop,
            });
        }
        let rear_radius = self.wheel_diameter_rear / 2.0;
        let front_radius = self.wheel_diameter_front / 2.0;
        let bottom_bracket = Vec2::ZERO;
        let rear_axle = Vec2::new(-(cs * cs - drop * drop).sqrt(), drop);
        let ground_y = drop - rear_radius;

        // seat tube leans back from the bottom bracket
        let seat_dir = Vec2::from_angle_deg(180.0 - self.seat_angle);
        let seat_top = seat_dir * self.seat_tube_length;
        let seat_stay_joint = seat_dir * (self.seat_tube_length - self.seat_stay_offset);

        // horizontal effective top tube
        let head_top = Vec2::new(seat_top.x + self.top_tube_length, seat_top.y);
        let steer_down = Vec2::from_angle_deg(-self.head_angle);
        let head_bottom = head_top + steer_down * self.head_tube_length;

        // forward normal of the steering axis
        let fork_normal = steer_down.perp();
        let front_y = ground_y + front_radius;
        let (sin_h, cos_h) = (-steer_down.y, steer_down.x);
        let fork_length = (head_bottom.y + self.fork_offset * cos_h - front_y) / sin_h;
        let fork_crown_axis = head_bottom + steer_down * fork_length;
        let front_axle = fork_crown_axis + fork_normal * self.fork_offset;

        let stem_top = head_top - steer_down * self.stem_stack;
        let handlebar = stem_top + Vec2::new(self.stem_reach, 0.0);
        let saddle = seat_top + seat_dir * self.seatpost_extension;

        let g = BikeGeometry {
            bottom_bracket,
            rear_axle,
            front_axle,
            seat_top,
            seat_stay_joint,
            head_top,
            head_bottom,
            stem_top,
            handlebar,
            saddle,
            fork_axis_end: fork_crown_axis,
            fork_length,
            ground_y,
            rear_radius,
            front_radius,
            tire_width_rear: self.tire_width_rear,
            tire_width_front: self.tire_width_front,
        };
        if !g.points().iter().all(|(_, p)| p.is_finite()) || !fork_length.is_finite() {
            return Err(GeometryError::NonFinite);
        }
        Ok(g)
    }
}

/// Solved anchor points of one bicycle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BikeGeometry {
    pub bottom_bracket: Vec2,
    pub rear_axle: Vec2,
    pub front_axle: Vec2,
    pub seat_top: Vec2,
    pub seat_stay_joint: Vec2,
    pub head_top: Vec2,
    pub head_bottom: Vec2,
    /// Top of the steerer spacer stack, where the stem starts.
    pub stem_top: Vec2,
    /// Handlebar clamp reference point.
    pub handlebar: Vec2,
    /// Saddle clamp reference point (top of the seat post).
    pub saddle: Vec2,
    /// Point on the steering axis level with the front axle.
    pub fork_axis_end: Vec2,
    pub fork_length: f64,
    pub ground_y: f64,
    pub rear_radius: f64,
    pub front_radius: f64,
    pub tire_width_rear: f64,
    pub tire_width_front: f64,
}

impl BikeGeometry {
    pub fn points(&self) -> [(&'static str, Vec2); 11] {
        [
            ("bottom_bracket", self.bottom_bracket),
            ("rear_axle", self.rear_axle),
            ("front_axle", self.front_axle),
            ("seat_top", self.seat_top),
            ("seat_stay_joint", self.seat_stay_joint),
            ("head_top", self.head_top),
            ("head_bottom", self.head_bottom),
            ("stem_top", self.stem_top),
            ("handlebar", self.handlebar),
            ("saddle", self.saddle),
            ("fork_axis_end", self.fork_axis_end),
        ]
    }

    /// Frame members as named segments, used by the crossing rule.
    pub fn frame_segments(&self) -> [(&'static str, Vec2, Vec2); 7] {
        [
            ("chain_stay", self.bottom_bracket, self.rear_axle),
            ("seat_stay", self.rear_axle, self.seat_stay_joint),
            ("seat_tube", self.bottom_bracket, self.seat_top),
            ("top_tube", self.seat_top, self.head_top),
            ("head_tube", self.head_top, self.head_bottom),
            ("down_tube", self.bottom_bracket, self.head_bottom),
            ("fork", self.head_bottom, self.front_axle),
        ]
    }

    pub fn wheelbase(&self) -> f64 {
        self.front_axle.x - self.rear_axle.x
    }
}

/// Solves the geometry encoded in a CAD document.
pub fn solve_geometry(doc: &CadDocument) -> Result<BikeGeometry, GeometryError> {
    BikeParams::from_doc(doc)?.solve()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn rear_triangle_example() {
        let p = BikeParams {
            chain_stay_length: 430.0,
            bb_drop: 70.0,
            ..BikeParams::default()
        };
        let g = p.solve().unwrap();
        assert_eq!(g.bottom_bracket, Vec2::ZERO);
        // 430² − 70² = 180000
        assert_eq!(g.rear_axle.x, -(180000f64).sqrt());
        assert!(close(g.rear_axle.x, -424.264, 1e-3));
        assert_eq!(g.rear_axle.y, 70.0);
        assert!(close(g.rear_axle.distance(g.bottom_bracket), 430.0, 430.0 * 1e-6));
    }

    #[test]
    fn vertical_seat_tube() {
        let p = BikeParams {
            seat_angle: 90.0,
            seat_tube_length: 500.0,
            ..BikeParams::default()
        };
        let g = p.solve().unwrap();
        assert!(close(g.seat_top.x, 0.0, 1e-9));
        assert!(close(g.seat_top.y, 500.0, 1e-9));
    }

    #[test]
    fn degenerate_rear_triangle() {
        let p = BikeParams {
            chain_stay_length: 70.0,
            bb_drop: 70.0,
            ..BikeParams::default()
        };
        assert!(matches!(
            p.solve(),
            Err(GeometryError::UnsolvableRearTriangle { .. })
        ));
    }

    #[test]
    fn both_wheels_stand_on_ground() {
        let g = BikeParams::default().solve().unwrap();
        assert!(close(g.rear_axle.y - g.rear_radius, g.ground_y, 1e-9));
        assert!(close(g.front_axle.y - g.front_radius, g.ground_y, 1e-9));
        assert!(g.fork_length > 300.0 && g.fork_length < 450.0, "{}", g.fork_length);
        assert!(g.wheelbase() > 900.0 && g.wheelbase() < 1100.0, "{}", g.wheelbase());
    }

    #[test]
    fn fork_offset_is_perpendicular_to_steering_axis() {
        let p = BikeParams::default();
        let g = p.solve().unwrap();
        let axis = (g.head_bottom - g.head_top).normalized();
        let off = g.front_axle - g.fork_axis_end;
        assert!(close(off.dot(axis), 0.0, 1e-9));
        assert!(close(off.length(), p.fork_offset, 1e-9));
        assert!(off.x > 0.0);
    }

    #[test]
    fn scale_equivariance() {
        let p = BikeParams::default();
        let g = p.solve().unwrap();
        for k in [0.5, 1.7, 3.0] {
            let gk = p.scaled(k).solve().unwrap();
            for ((name, a), (_, b)) in g.points().iter().zip(gk.points().iter()) {
                assert!(close(a.x * k, b.x, 1e-9 * k * 2000.0), "{name}");
                assert!(close(a.y * k, b.y, 1e-9 * k * 2000.0), "{name}");
            }
            assert!(close(g.fork_length * k, gk.fork_length, 1e-9 * k * 1000.0));
        }
    }
}
