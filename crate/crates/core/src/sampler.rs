//! Unscrambled Sobol points in the unit cube, their mapping into the design
//! hyperrectangle, and rejection sampling of feasible designs.
//!
//! Direction numbers are the Joe–Kuo `new-joe-kuo-6.21201` set, vendored for
//! dimensions 1..=1024. Points are produced in Gray-code order, so point `i`
//! is the XOR of the direction numbers selected by the bits of `i ^ (i >> 1)`.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::constraints::FeasibilityCheck;
use crate::schema::{BoundsTable, DesignSchema, DesignVector, ParamKind, Value};

const DIRECTION_TABLE: &str = include_str!("../assets/sobol_directions.txt");

/// SHA-256 of `assets/sobol_directions.txt`.
pub const DIRECTION_TABLE_SHA256: &str =
    "2fd2f5e074be8d04670e9e35c5bade2af174848986b4784a2c6bcbe8f7f66bc6";

pub const MAX_DIM: usize = 1024;
const BITS: usize = 32;

#[derive(Debug, Error, PartialEq)]
pub enum SamplerError {
    #[error("dimension {dim} outside supported range 1..={max}")]
    Dimension { dim: usize, max: usize },
    #[error("point dimension {got} does not match schema sampling dimension {expected}")]
    DimensionMismatch { got: usize, expected: usize },
    #[error("bounds table has no row for `{0}`")]
    MissingBound(String),
    #[error("Sobol index range exhausted")]
    Exhausted,
    #[error("attempt cap of {cap} reached with {accepted} accepted designs")]
    AttemptCap {
        cap: u64,
        accepted: u64,
        stats: SampleStats,
    },
}

fn directions() -> &'static [[u32; BITS]] {
    static TABLE: OnceLock<Vec<[u32; BITS]>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut out = Vec::with_capacity(MAX_DIM);
        // dimension 1: van der Corput
        let mut first = [0u32; BITS];
        for (j, v) in first.iter_mut().enumerate() {
            *v = 1u32 << (BITS - 1 - j);
        }
        out.push(first);
        for line in DIRECTION_TABLE.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with('d') {
                continue;
            }
            let nums: Vec<u64> = line
                .split_whitespace()
                .map(|t| t.parse().expect("direction table is numeric"))
                .collect();
            let (s, a) = (nums[1] as usize, nums[2] as u32);
            let m = &nums[3..3 + s];
            let mut v = [0u32; BITS];
            for j in 0..BITS {
                if j < s {
                    v[j] = (m[j] as u32) << (BITS - 1 - j);
                } else {
                    let mut x = v[j - s] ^ (v[j - s] >> s);
                    for k in 1..s {
                        if (a >> (s - 1 - k)) & 1 == 1 {
                            x ^= v[j - k];
                        }
                    }
                    v[j] = x;
                }
            }
            out.push(v);
        }
        assert_eq!(out.len(), MAX_DIM, "direction table is truncated");
        out
    })
}

/// Streaming Sobol generator.
#[derive(Clone, Debug)]
pub struct SobolState {
    dimension: usize,
    index: u64,
    current: Vec<u32>,
}

impl SobolState {
    pub fn new(dimension: usize) -> Result<Self, SamplerError> {
        if dimension == 0 || dimension > MAX_DIM {
            return Err(SamplerError::Dimension {
                dim: dimension,
                max: MAX_DIM,
            });
        }
        Ok(SobolState {
            dimension,
            index: 0,
            current: vec![0; dimension],
        })
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    /// Index of the next point to be produced.
    pub fn index(&self) -> u64 {
        self.index
    }

    /// Positions the generator so the next point produced is `index`.
    pub fn seek(&mut self, index: u64) {
        self.index = index;
        if index == 0 {
            self.current.iter_mut().for_each(|x| *x = 0);
            return;
        }
        // `current` holds the previously produced point.
        let prev = index - 1;
        let gray = prev ^ (prev >> 1);
        let dirs = directions();
        for (d, x) in self.current.iter_mut().enumerate() {
            let mut acc = 0u32;
            for (j, v) in dirs[d].iter().enumerate() {
                if (gray >> j) & 1 == 1 {
                    acc ^= v;
                }
            }
            *x = acc;
        }
    }

    /// Integer coordinates of the next point, then advances.
    pub fn next_raw(&mut self) -> Result<&[u32], SamplerError> {
        if self.index >= 1u64 << BITS {
            return Err(SamplerError::Exhausted);
        }
        Ok(self.advance())
    }

    fn advance(&mut self) -> &[u32] {
        if self.index > 0 {
            // Gray-code step: flip the direction of the lowest zero bit of i-1.
            let c = (!(self.index - 1)).trailing_zeros() as usize;
            let dirs = directions();
            for (d, x) in self.current.iter_mut().enumerate() {
                *x ^= dirs[d][c];
            }
        }
        self.index += 1;
        &self.current
    }

    pub fn next_point(&mut self, out: &mut [f64]) -> Result<(), SamplerError> {
        let raw = self.next_raw()?;
        for (o, &x) in out.iter_mut().zip(raw) {
            *o = x as f64 / 4294967296.0;
        }
        Ok(())
    }
}

/// `count` points of dimension `dim` starting at global index `skip`, row-major.
pub fn sobol_points(dim: usize, count: usize, skip: u64) -> Result<Vec<Vec<f64>>, SamplerError> {
    let mut s = SobolState::new(dim)?;
    if skip + count as u64 > 1u64 << BITS {
        return Err(SamplerError::Exhausted);
    }
    s.seek(skip);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let mut p = vec![0.0; dim];
        s.next_point(&mut p)?;
        out.push(p);
    }
    Ok(out)
}

/// Maps one unit-cube point to a design. Continuous axes are scaled
/// linearly; categorical axes pick `floor(u·K)` clamped to `K−1`.
pub fn scale_point(
    point: &[f64],
    bounds: &BoundsTable,
    schema: &DesignSchema,
) -> Result<DesignVector, SamplerError> {
    if point.len() != schema.sampling_dim() {
        return Err(SamplerError::DimensionMismatch {
            got: point.len(),
            expected: schema.sampling_dim(),
        });
    }
    let mut values = Vec::with_capacity(schema.len());
    for (p, &u) in schema.parameters.iter().zip(point) {
        values.push(match &p.kind {
            ParamKind::Continuous { .. } => {
                let (lo, hi) = bounds
                    .get(&p.name)
                    .ok_or_else(|| SamplerError::MissingBound(p.name.clone()))?;
                Value::Real(lo + u * (hi - lo))
            }
            ParamKind::Categorical { categories, .. } => {
                let k = categories.len();
                Value::Label(((u * k as f64).floor() as usize).min(k - 1))
            }
        });
    }
    Ok(DesignVector {
        values,
        schema_version: schema.version.clone(),
    })
}

pub fn scale_to_bounds(
    points: &[Vec<f64>],
    bounds: &BoundsTable,
    schema: &DesignSchema,
) -> Result<Vec<DesignVector>, SamplerError> {
    points.iter().map(|p| scale_point(p, bounds, schema)).collect()
}

/// Rejection-sampling statistics.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SampleStats {
    pub attempted: u64,
    pub accepted: u64,
    pub acceptance_rate: f64,
    /// Designs rejected by each rule (a design can count against several).
    pub rejections: BTreeMap<String, u64>,
}

impl SampleStats {
    pub fn record(&mut self, report: &crate::constraints::ConstraintReport) {
        self.attempted += 1;
        if report.is_feasible() {
            self.accepted += 1;
        } else {
            let mut seen: Vec<&str> = Vec::new();
            for v in &report.violations {
                if !seen.contains(&v.rule.as_str()) {
                    seen.push(&v.rule);
                    *self.rejections.entry(v.rule.clone()).or_default() += 1;
                }
            }
        }
        self.refresh_rate();
    }

    pub fn merge(&mut self, other: &SampleStats) {
        self.attempted += other.attempted;
        self.accepted += other.accepted;
        for (k, v) in &other.rejections {
            *self.rejections.entry(k.clone()).or_default() += v;
        }
        self.refresh_rate();
    }

    fn refresh_rate(&mut self) {
        self.acceptance_rate = if self.attempted == 0 {
            0.0
        } else {
            self.accepted as f64 / self.attempted as f64
        };
    }
}

/// Lazily yields feasible designs in Sobol order.
pub struct FeasibleSampler<'a, C: FeasibilityCheck + ?Sized> {
    schema: &'a DesignSchema,
    bounds: BoundsTable,
    checker: &'a C,
    sobol: SobolState,
    remaining: u64,
    attempt_cap: u64,
    stats: SampleStats,
    point: Vec<f64>,
    failed: bool,
}

impl<'a, C: FeasibilityCheck + ?Sized> FeasibleSampler<'a, C> {
    pub fn new(
        target: u64,
        schema: &'a DesignSchema,
        checker: &'a C,
        skip: u64,
        attempt_cap: u64,
    ) -> Result<Self, SamplerError> {
        let dim = schema.sampling_dim();
        let mut sobol = SobolState::new(dim)?;
        sobol.seek(skip);
        Ok(FeasibleSampler {
            schema,
            bounds: schema.bounds(),
            checker,
            sobol,
            remaining: target,
            attempt_cap,
            stats: SampleStats::default(),
            point: vec![0.0; dim],
            failed: false,
        })
    }

    pub fn stats(&self) -> &SampleStats {
        &self.stats
    }

    /// Global Sobol index of the next candidate.
    pub fn next_index(&self) -> u64 {
        self.sobol.index()
    }
}

impl<C: FeasibilityCheck + ?Sized> Iterator for FeasibleSampler<'_, C> {
    type Item = Result<(u64, DesignVector), SamplerError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.remaining == 0 || self.failed {
            return None;
        }
        loop {
            if self.stats.attempted >= self.attempt_cap {
                self.failed = true;
                return Some(Err(SamplerError::AttemptCap {
                    cap: self.attempt_cap,
                    accepted: self.stats.accepted,
                    stats: self.stats.clone(),
                }));
            }
            let index = self.sobol.index();
            if let Err(e) = self.sobol.next_point(&mut self.point) {
                self.failed = true;
                return Some(Err(e));
            }
            let design = match scale_point(&self.point, &self.bounds, self.schema) {
                Ok(d) => d,
                Err(e) => {
                    self.failed = true;
                    return Some(Err(e));
                }
            };
            let report = self.checker.check(&design);
            self.stats.record(&report);
            if report.is_feasible() {
                self.remaining -= 1;
                return Some(Ok((index, design)));
            }
        }
    }
}

/// Collects exactly `target` feasible designs (with their Sobol indices), or
/// fails once `attempt_cap` candidates were tried.
#[allow(clippy::type_complexity)]
pub fn sample_feasible<C: FeasibilityCheck + ?Sized>(
    target: u64,
    schema: &DesignSchema,
    checker: &C,
    skip: u64,
    attempt_cap: u64,
) -> Result<(Vec<(u64, DesignVector)>, SampleStats), SamplerError> {
    let mut sampler = FeasibleSampler::new(target, schema, checker, skip, attempt_cap)?;
    let mut out = Vec::with_capacity(target.min(1 << 20) as usize);
    for item in sampler.by_ref() {
        out.push(item?);
    }
    let stats = sampler.stats().clone();
    log::info!(
        "sampled {} feasible of {} attempted ({:.3} acceptance)",
        stats.accepted,
        stats.attempted,
        stats.acceptance_rate
    );
    Ok((out, stats))
}
