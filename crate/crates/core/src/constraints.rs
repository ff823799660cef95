//! Feasibility rules that weed out grossly infeasible bicycles before they
//! are rendered.
//!
//! Reference rule set:
//!
//! | id | rule | tolerance |
//! |----|------|-----------|
//! | R1 | every length and diameter (including the solved fork length, the seat-stay joint height and the rim radius) is strictly positive | — |
//! | R2 | the rear triangle is solvable: chain stay longer than bottom-bracket drop | — |
//! | R3 | frame members do not cross each other | `eps` (mm) for touching joints |
//! | R4 | the wheels do not overlap | clearance (mm), 5 by default |
//! | R5 | neither wheel overlaps the seat tube | clearance (mm) |
//! | R6 | head and seat angles lie strictly inside (45°, 90°) | — |
//! | R7 | the front wheel does not overlap the down tube | clearance (mm) |
//!
//! All enabled rules are evaluated for every design so rejection tallies are
//! per rule. R3, R4, R5 and R7 need solved geometry and are skipped when the
//! geometry cannot be solved (R2 or R1 already fire in that case).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{point_segment_distance, segments_intersect};
use crate::render::geometry::{BikeGeometry, BikeParams};
use crate::schema::{DesignSchema, DesignVector};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RuleViolation {
    pub rule: String,
    pub message: String,
    pub values: Vec<(String, f64)>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ConstraintReport {
    pub violations: Vec<RuleViolation>,
}

impl ConstraintReport {
    pub fn is_feasible(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn rules(&self) -> Vec<&str> {
        let mut ids: Vec<&str> = self.violations.iter().map(|v| v.rule.as_str()).collect();
        ids.dedup();
        ids
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RuleConfig {
    pub id: String,
    pub enabled: bool,
    pub tolerance: f64,
}

#[derive(Debug, Error, PartialEq)]
pub enum RuleSetError {
    #[error("duplicate rule id `{0}`")]
    DuplicateId(String),
    #[error("rule `{0}` has a negative or non-finite tolerance")]
    BadTolerance(String),
    #[error("unknown rule id `{0}`")]
    UnknownRule(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RuleSet {
    pub rules: Vec<RuleConfig>,
}

pub const RULE_IDS: [&str; 7] = ["R1", "R2", "R3", "R4", "R5", "R6", "R7"];

impl RuleSet {
    pub fn new(rules: Vec<RuleConfig>) -> Result<Self, RuleSetError> {
        for (i, r) in rules.iter().enumerate() {
            if !RULE_IDS.contains(&r.id.as_str()) {
                return Err(RuleSetError::UnknownRule(r.id.clone()));
            }
            if rules[..i].iter().any(|o| o.id == r.id) {
                return Err(RuleSetError::DuplicateId(r.id.clone()));
            }
            if !(r.tolerance >= 0.0) || !r.tolerance.is_finite() {
                return Err(RuleSetError::BadTolerance(r.id.clone()));
            }
        }
        Ok(RuleSet { rules })
    }

    pub fn reference() -> Self {
        let rule = |id: &str, tolerance: f64| RuleConfig {
            id: id.into(),
            enabled: true,
            tolerance,
        };
        RuleSet {
            rules: vec![
                rule("R1", 0.0),
                rule("R2", 0.0),
                rule("R3", 1e-9),
                rule("R4", 5.0),
                rule("R5", 0.0),
                rule("R6", 0.0),
                rule("R7", 0.0),
            ],
        }
    }

    pub fn with_disabled(mut self, id: &str) -> Self {
        for r in &mut self.rules {
            if r.id == id {
                r.enabled = false;
            }
        }
        self
    }

    fn active(&self) -> impl Iterator<Item = &RuleConfig> {
        self.rules.iter().filter(|r| r.enabled)
    }
}

/// Anything that can judge a design feasible.
pub trait FeasibilityCheck: Sync {
    fn check(&self, design: &DesignVector) -> ConstraintReport;
}

impl<F> FeasibilityCheck for F
where
    F: Fn(&DesignVector) -> ConstraintReport + Sync,
{
    fn check(&self, design: &DesignVector) -> ConstraintReport {
        self(design)
    }
}

/// A rule set bound to a schema.
#[derive(Clone, Debug)]
pub struct RuleChecker {
    pub schema: DesignSchema,
    pub rules: RuleSet,
}

impl RuleChecker {
    pub fn new(schema: DesignSchema, rules: RuleSet) -> Self {
        RuleChecker { schema, rules }
    }
}

impl FeasibilityCheck for RuleChecker {
    fn check(&self, design: &DesignVector) -> ConstraintReport {
        check(design, &self.schema, &self.rules)
    }
}

pub fn check(design: &DesignVector, schema: &DesignSchema, rules: &RuleSet) -> ConstraintReport {
    check_params(&BikeParams::from_design(design, schema), rules)
}

fn violation(rule: &str, message: String, values: &[(&str, f64)]) -> RuleViolation {
    RuleViolation {
        rule: rule.to_string(),
        message,
        values: values.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
    }
}

/// Evaluates every enabled rule against one set of renderer inputs.
pub fn check_params(p: &BikeParams, rules: &RuleSet) -> ConstraintReport {
    let solved = p.solve().ok();
    let mut out = Vec::new();
    for rule in rules.active() {
        let tol = rule.tolerance;
        match rule.id.as_str() {
            "R1" => {
                for (name, x) in p.lengths() {
                    if !(x > 0.0) {
                        out.push(violation("R1", format!("{name} must be positive"), &[(name, x)]));
                    }
                }
                if let Some(g) = &solved {
                    let derived = [
                        ("fork_length", g.fork_length),
                        ("seat_stay_joint_height", p.seat_tube_length - p.seat_stay_offset),
                        ("rim_radius_front", g.front_radius - p.tire_width_front),
                        ("rim_radius_rear", g.rear_radius - p.tire_width_rear),
                    ];
                    for (name, x) in derived {
                        if !(x > 0.0) {
                            out.push(violation("R1", format!("derived {name} must be positive"), &[(name, x)]));
                        }
                    }
                }
            }
            "R2" => {
                if !(p.chain_stay_length > p.bb_drop.abs()) {
                    out.push(violation(
                        "R2",
                        "rear triangle unsolvable: chain stay not longer than bottom-bracket drop".into(),
                        &[("chain_stay_length", p.chain_stay_length), ("bb_drop", p.bb_drop)],
                    ));
                }
            }
            "R3" => {
                if let Some(g) = &solved {
                    frame_crossings(g, tol, &mut out);
                }
            }
            "R4" => {
                if let Some(g) = &solved {
                    let gap = g.rear_axle.distance(g.front_axle) - g.rear_radius - g.front_radius;
                    if gap < tol {
                        out.push(violation(
                            "R4",
                            format!("wheels closer than {tol} mm"),
                            &[("wheel_gap", gap)],
                        ));
                    }
                }
            }
            "R5" => {
                if let Some(g) = &solved {
                    for (name, c, r) in [
                        ("rear", g.rear_axle, g.rear_radius),
                        ("front", g.front_axle, g.front_radius),
                    ] {
                        let d = point_segment_distance(c, g.bottom_bracket, g.seat_top);
                        if d < r + tol {
                            out.push(violation(
                                "R5",
                                format!("{name} wheel overlaps the seat tube"),
                                &[("axle_to_seat_tube", d), ("wheel_radius", r)],
                            ));
                        }
                    }
                }
            }
            "R6" => {
                for (name, a) in [("head_angle", p.head_angle), ("seat_angle", p.seat_angle)] {
                    if !(a > 45.0 + tol && a < 90.0 - tol) {
                        out.push(violation("R6", format!("{name} outside (45, 90) degrees"), &[(name, a)]));
                    }
                }
            }
            "R7" => {
                if let Some(g) = &solved {
                    let d = point_segment_distance(g.front_axle, g.bottom_bracket, g.head_bottom);
                    if d < g.front_radius + tol {
                        out.push(violation(
                            "R7",
                            "front wheel overlaps the down tube".into(),
                            &[("axle_to_down_tube", d), ("wheel_radius", g.front_radius)],
                        ));
                    }
                }
            }
            _ => {}
        }
    }
    ConstraintReport { violations: out }
}

fn frame_crossings(g: &BikeGeometry, eps: f64, out: &mut Vec<RuleViolation>) {
    let segs = g.frame_segments();
    for i in 0..segs.len() {
        for j in i + 1..segs.len() {
            let (na, a1, a2) = segs[i];
            let (nb, b1, b2) = segs[j];
            if segments_intersect(a1, a2, b1, b2, eps) {
                out.push(violation("R3", format!("{na} crosses {nb}"), &[]));
            }
        }
    }
}
