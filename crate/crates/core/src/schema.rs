//! Parametric design space: parameter specs, design vectors, bounds and
//! the one-hot real encoding used by the surrogate and the optimizer.
//!
//! Schemas are loaded from a small line-oriented text format:
//!
//! ```text
//! # comment
//! version ref-24.1
//! seat_tube_length cont 420 620 560
//! handlebar_style  cat  drop,flat,riser drop
//! ```
//!
//! Record order fixes the vector index of every parameter.

use std::collections::HashMap;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// The schema shipped with the crate.
pub const REFERENCE_SCHEMA: &str = include_str!("../assets/reference.schema");

#[derive(Debug, Error)]
pub enum SchemaError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: duplicate parameter name `{name}`")]
    DuplicateName { name: String, line: usize },
    #[error("line {line}: parameter `{name}` has inverted or empty bounds ({lower} >= {upper})")]
    InvertedBounds {
        name: String,
        line: usize,
        lower: f64,
        upper: f64,
    },
    #[error("line {line}: parameter `{name}`: {message}")]
    Invalid {
        name: String,
        line: usize,
        message: String,
    },
    #[error("schema defines no parameters")]
    Empty,
    #[error("schema version mismatch: design has `{design}`, schema is `{schema}`")]
    VersionMismatch { design: String, schema: String },
    #[error("design has {got} values, schema has {expected} parameters")]
    LengthMismatch { got: usize, expected: usize },
    #[error("design is invalid: {0}")]
    InvalidDesign(String),
    #[error("column `{name}` is degenerate (all values equal)")]
    DegenerateColumn { name: String },
    #[error("bad percentile request: {0}")]
    Percentile(String),
    #[error("csv: {0}")]
    Csv(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = SchemaError> = std::result::Result<T, E>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum ParamKind {
    Continuous { lower: f64, upper: f64, default: f64 },
    Categorical { categories: Vec<String>, default: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterSpec {
    pub name: String,
    pub kind: ParamKind,
}

impl ParameterSpec {
    pub fn is_continuous(&self) -> bool {
        matches!(self.kind, ParamKind::Continuous { .. })
    }

    /// Width of this parameter's slot in the real encoding.
    pub fn encoded_width(&self) -> usize {
        match &self.kind {
            ParamKind::Continuous { .. } => 1,
            ParamKind::Categorical { categories, .. } => categories.len(),
        }
    }

    pub fn default_value(&self) -> Value {
        match &self.kind {
            ParamKind::Continuous { default, .. } => Value::Real(*default),
            ParamKind::Categorical { default, .. } => Value::Label(*default),
        }
    }

    fn check(&self) -> std::result::Result<(), String> {
        match &self.kind {
            ParamKind::Continuous {
                lower,
                upper,
                default,
            } => {
                if !lower.is_finite() || !upper.is_finite() || !default.is_finite() {
                    return Err("bounds and default must be finite".into());
                }
                if lower >= upper {
                    return Err(format!("lower {lower} must be below upper {upper}"));
                }
                if default < lower || default > upper {
                    return Err(format!("default {default} outside [{lower}, {upper}]"));
                }
            }
            ParamKind::Categorical {
                categories,
                default,
            } => {
                if categories.is_empty() {
                    return Err("categorical parameter needs at least one label".into());
                }
                for (i, c) in categories.iter().enumerate() {
                    if c.is_empty() {
                        return Err("empty category label".into());
                    }
                    if categories[..i].contains(c) {
                        return Err(format!("duplicate category label `{c}`"));
                    }
                }
                if *default >= categories.len() {
                    return Err("default label index out of range".into());
                }
            }
        }
        Ok(())
    }
}

/// One parameter value: a real for continuous axes, a label index for
/// categorical ones.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Value {
    Real(f64),
    Label(usize),
}

impl Value {
    pub fn as_real(self) -> Option<f64> {
        match self {
            Value::Real(v) => Some(v),
            Value::Label(_) => None,
        }
    }

    pub fn as_label(self) -> Option<usize> {
        match self {
            Value::Label(i) => Some(i),
            Value::Real(_) => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DesignVector {
    pub values: Vec<Value>,
    pub schema_version: String,
}

impl DesignVector {
    pub fn real(&self, schema: &DesignSchema, name: &str) -> Option<f64> {
        schema
            .index_of(name)
            .and_then(|i| self.values.get(i).copied())
            .and_then(Value::as_real)
    }

    pub fn label<'s>(&self, schema: &'s DesignSchema, name: &str) -> Option<&'s str> {
        let i = schema.index_of(name)?;
        let idx = self.values.get(i)?.as_label()?;
        match &schema.parameters[i].kind {
            ParamKind::Categorical { categories, .. } => categories.get(idx).map(String::as_str),
            ParamKind::Continuous { .. } => None,
        }
    }

    /// Sets a parameter by name. Panics if the name is unknown; intended for
    /// building fixtures.
    pub fn set(&mut self, schema: &DesignSchema, name: &str, value: Value) {
        let i = schema
            .index_of(name)
            .unwrap_or_else(|| panic!("unknown parameter `{name}`"));
        self.values[i] = value;
    }

    pub fn set_label(&mut self, schema: &DesignSchema, name: &str, label: &str) {
        let i = schema
            .index_of(name)
            .unwrap_or_else(|| panic!("unknown parameter `{name}`"));
        let idx = schema.label_index(i, label).unwrap_or_else(|| panic!("unknown label `{label}`"));
        self.values[i] = Value::Label(idx);
    }

    /// Raw numeric row: reals as-is, labels as their index.
    pub fn to_row(&self) -> Vec<f64> {
        self.values
            .iter()
            .map(|v| match *v {
                Value::Real(x) => x,
                Value::Label(i) => i as f64,
            })
            .collect()
    }
}

/// A single out-of-range or malformed value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub parameter: String,
    pub value: String,
    pub expected: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} = {} (expected {})", self.parameter, self.value, self.expected)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundRow {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
}

/// Per-parameter bounds of the continuous axes, in schema order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundsTable {
    pub rows: Vec<BoundRow>,
}

impl BoundsTable {
    pub fn get(&self, name: &str) -> Option<(f64, f64)> {
        self.rows
            .iter()
            .find(|r| r.name == name)
            .map(|r| (r.lower, r.upper))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DesignSchema {
    pub parameters: Vec<ParameterSpec>,
    pub version: String,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl DesignSchema {
    pub fn new(version: impl Into<String>, parameters: Vec<ParameterSpec>) -> Result<Self> {
        if parameters.is_empty() {
            return Err(SchemaError::Empty);
        }
        let mut index = HashMap::with_capacity(parameters.len());
        for (i, p) in parameters.iter().enumerate() {
            if index.insert(p.name.clone(), i).is_some() {
                return Err(SchemaError::DuplicateName {
                    name: p.name.clone(),
                    line: 0,
                });
            }
            p.check().map_err(|message| SchemaError::Invalid {
                name: p.name.clone(),
                line: 0,
                message,
            })?;
        }
        Ok(DesignSchema {
            parameters,
            version: version.into(),
            index,
        })
    }

    /// The bundled 24-parameter reference schema.
    pub fn reference() -> Self {
        Self::parse(REFERENCE_SCHEMA).expect("bundled schema is valid")
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut version = None;
        let mut params: Vec<ParameterSpec> = Vec::new();
        let mut seen: HashMap<String, usize> = HashMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = n + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let fields: Vec<&str> = body.split_whitespace().collect();
            if fields[0] == "version" {
                if fields.len() != 2 {
                    return Err(SchemaError::Parse {
                        line,
                        message: "expected `version <tag>`".into(),
                    });
                }
                version = Some(fields[1].to_string());
                continue;
            }
            let name = fields[0].to_string();
            if let Some(first) = seen.get(&name) {
                let _ = first;
                return Err(SchemaError::DuplicateName { name, line });
            }
            let kind = match fields.get(1).copied() {
                Some("cont") | Some("continuous") => {
                    if fields.len() != 5 {
                        return Err(SchemaError::Parse {
                            line,
                            message: format!("`{name}`: expected `name cont lower upper default`"),
                        });
                    }
                    let num = |s: &str| {
                        s.parse::<f64>().map_err(|_| SchemaError::Parse {
                            line,
                            message: format!("`{name}`: `{s}` is not a number"),
                        })
                    };
                    let (lower, upper, default) = (num(fields[2])?, num(fields[3])?, num(fields[4])?);
                    if !(lower < upper) {
                        return Err(SchemaError::InvertedBounds {
                            name,
                            line,
                            lower,
                            upper,
                        });
                    }
                    ParamKind::Continuous {
                        lower,
                        upper,
                        default,
                    }
                }
                Some("cat") | Some("categorical") => {
                    if fields.len() != 4 {
                        return Err(SchemaError::Parse {
                            line,
                            message: format!("`{name}`: expected `name cat l1,l2,... default`"),
                        });
                    }
                    let categories: Vec<String> =
                        fields[2].split(',').map(|s| s.trim().to_string()).collect();
                    let default = categories.iter().position(|c| c == fields[3]).ok_or_else(|| {
                        SchemaError::Invalid {
                            name: name.clone(),
                            line,
                            message: format!("default label `{}` is not a category", fields[3]),
                        }
                    })?;
                    ParamKind::Categorical {
                        categories,
                        default,
                    }
                }
                other => {
                    return Err(SchemaError::Parse {
                        line,
                        message: format!("`{name}`: unknown kind {other:?}"),
                    })
                }
            };
            let spec = ParameterSpec {
                name: name.clone(),
                kind,
            };
            spec.check()
                .map_err(|message| SchemaError::Invalid { name: name.clone(), line, message })?;
            seen.insert(name, line);
            params.push(spec);
        }
        let version = version.unwrap_or_else(|| "unversioned".to_string());
        Self::new(version, params)
    }

    pub fn len(&self) -> usize {
        self.parameters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parameters.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        if self.index.is_empty() {
            // deserialized schemas skip the index
            return self.parameters.iter().position(|p| p.name == name);
        }
        self.index.get(name).copied()
    }

    pub fn param(&self, name: &str) -> Option<&ParameterSpec> {
        self.index_of(name).map(|i| &self.parameters[i])
    }

    pub fn label_index(&self, param: usize, label: &str) -> Option<usize> {
        match &self.parameters.get(param)?.kind {
            ParamKind::Categorical { categories, .. } => categories.iter().position(|c| c == label),
            ParamKind::Continuous { .. } => None,
        }
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.parameters.iter().map(|p| p.name.as_str())
    }

    /// Number of unit-cube coordinates a sampler needs: one per parameter.
    pub fn sampling_dim(&self) -> usize {
        self.parameters.len()
    }

    /// Length of [`encode_real`] output.
    pub fn encoded_len(&self) -> usize {
        self.parameters.iter().map(ParameterSpec::encoded_width).sum()
    }

    pub fn bounds(&self) -> BoundsTable {
        BoundsTable {
            rows: self
                .parameters
                .iter()
                .filter_map(|p| match p.kind {
                    ParamKind::Continuous { lower, upper, .. } => Some(BoundRow {
                        name: p.name.clone(),
                        lower,
                        upper,
                    }),
                    ParamKind::Categorical { .. } => None,
                })
                .collect(),
        }
    }

    /// Replaces continuous bounds with the given table; defaults are clamped
    /// into the new range.
    pub fn with_bounds(&self, bounds: &BoundsTable) -> Result<Self> {
        let mut params = self.parameters.clone();
        for p in params.iter_mut() {
            if let ParamKind::Continuous {
                lower,
                upper,
                default,
            } = &mut p.kind
            {
                if let Some((lo, hi)) = bounds.get(&p.name) {
                    *lower = lo;
                    *upper = hi;
                    *default = default.clamp(lo, hi);
                }
            }
        }
        Self::new(self.version.clone(), params)
    }

    pub fn default_design(&self) -> DesignVector {
        DesignVector {
            values: self.parameters.iter().map(ParameterSpec::default_value).collect(),
            schema_version: self.version.clone(),
        }
    }

    /// SHA-256 of the canonical textual form, used in manifests.
    pub fn checksum(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        h.update(self.to_text().as_bytes());
        hex::encode(h.finalize())
    }

    /// Canonical text form; parses back to an equal schema.
    pub fn to_text(&self) -> String {
        let mut out = format!("version {}\n", self.version);
        for p in &self.parameters {
            match &p.kind {
                ParamKind::Continuous {
                    lower,
                    upper,
                    default,
                } => out.push_str(&format!("{} cont {lower} {upper} {default}\n", p.name)),
                ParamKind::Categorical {
                    categories,
                    default,
                } => out.push_str(&format!(
                    "{} cat {} {}\n",
                    p.name,
                    categories.join(","),
                    categories[*default]
                )),
            }
        }
        out
    }
}

pub fn load_schema(path: &Path) -> Result<DesignSchema> {
    let text = std::fs::read_to_string(path)?;
    DesignSchema::parse(&text)
}

/// Checks a design against the schema. Returns the list of violations, empty
/// when the design is valid.
pub fn validate(design: &DesignVector, schema: &DesignSchema) -> Result<Vec<Violation>> {
    if design.schema_version != schema.version {
        return Err(SchemaError::VersionMismatch {
            design: design.schema_version.clone(),
            schema: schema.version.clone(),
        });
    }
    if design.values.len() != schema.len() {
        return Err(SchemaError::LengthMismatch {
            got: design.values.len(),
            expected: schema.len(),
        });
    }
    let mut out = Vec::new();
    for (p, v) in schema.parameters.iter().zip(&design.values) {
        match (&p.kind, *v) {
            (ParamKind::Continuous { lower, upper, .. }, Value::Real(x)) => {
                if !x.is_finite() || x < *lower || x > *upper {
                    out.push(Violation {
                        parameter: p.name.clone(),
                        value: x.to_string(),
                        expected: format!("[{lower}, {upper}]"),
                    });
                }
            }
            (ParamKind::Categorical { categories, .. }, Value::Label(i)) => {
                if i >= categories.len() {
                    out.push(Violation {
                        parameter: p.name.clone(),
                        value: format!("label index {i}"),
                        expected: format!("one of {}", categories.join(",")),
                    });
                }
            }
            (ParamKind::Continuous { .. }, Value::Label(i)) => out.push(Violation {
                parameter: p.name.clone(),
                value: format!("label index {i}"),
                expected: "a real value".into(),
            }),
            (ParamKind::Categorical { .. }, Value::Real(x)) => out.push(Violation {
                parameter: p.name.clone(),
                value: x.to_string(),
                expected: "a category label".into(),
            }),
        }
    }
    Ok(out)
}

/// Min-max scales continuous values to [0, 1] and one-hot expands
/// categoricals, in schema order.
pub fn encode_real(design: &DesignVector, schema: &DesignSchema) -> Result<Vec<f64>> {
    let violations = validate(design, schema)?;
    if let Some(v) = violations.first() {
        return Err(SchemaError::InvalidDesign(v.to_string()));
    }
    let mut out = Vec::with_capacity(schema.encoded_len());
    encode_into(design, schema, &mut out);
    Ok(out)
}

/// Encoding without validation; the caller guarantees a valid design.
pub(crate) fn encode_into(design: &DesignVector, schema: &DesignSchema, out: &mut Vec<f64>) {
    for (p, v) in schema.parameters.iter().zip(&design.values) {
        match (&p.kind, *v) {
            (ParamKind::Continuous { lower, upper, .. }, Value::Real(x)) => {
                out.push((x - lower) / (upper - lower));
            }
            (ParamKind::Categorical { categories, .. }, Value::Label(i)) => {
                out.extend((0..categories.len()).map(|k| if k == i { 1.0 } else { 0.0 }));
            }
            _ => unreachable!("encode_into called on an invalid design"),
        }
    }
}

/// Linear-interpolation percentile, index = pct/100·(n−1).
pub fn percentile(sorted: &[f64], pct: f64) -> f64 {
    let n = sorted.len();
    let pos = pct / 100.0 * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = pos - lo as f64;
    if frac == 0.0 {
        sorted[lo]
    } else {
        sorted[lo] + frac * (sorted[hi] - sorted[lo])
    }
}

/// Bounds of one named column from its percentiles.
pub fn column_bounds(name: &str, column: &[f64], lo_pct: f64, hi_pct: f64) -> Result<(f64, f64)> {
    if column.len() < 2 {
        return Err(SchemaError::Percentile(format!(
            "column `{name}` needs at least 2 samples"
        )));
    }
    if !(0.0..=100.0).contains(&lo_pct) || !(0.0..=100.0).contains(&hi_pct) || lo_pct >= hi_pct {
        return Err(SchemaError::Percentile(format!(
            "need 0 <= lo ({lo_pct}) < hi ({hi_pct}) <= 100"
        )));
    }
    let mut sorted = column.to_vec();
    if sorted.iter().any(|x| !x.is_finite()) {
        return Err(SchemaError::Percentile(format!("column `{name}` has non-finite values")));
    }
    sorted.sort_by(f64::total_cmp);
    let (lo, hi) = (percentile(&sorted, lo_pct), percentile(&sorted, hi_pct));
    if sorted[0] == sorted[sorted.len() - 1] || lo >= hi {
        return Err(SchemaError::DegenerateColumn { name: name.to_string() });
    }
    Ok((lo, hi))
}

/// Design-space bounds of every continuous parameter from a sample corpus.
pub fn bounds_from_percentiles(
    schema: &DesignSchema,
    samples: &[DesignVector],
    lo_pct: f64,
    hi_pct: f64,
) -> Result<BoundsTable> {
    let mut rows = Vec::new();
    for (i, p) in schema.parameters.iter().enumerate() {
        if !p.is_continuous() {
            continue;
        }
        let column: Vec<f64> = samples
            .iter()
            .map(|d| d.values.get(i).and_then(|v| v.as_real()).unwrap_or(f64::NAN))
            .collect();
        let (lower, upper) = column_bounds(&p.name, &column, lo_pct, hi_pct)?;
        rows.push(BoundRow {
            name: p.name.clone(),
            lower,
            upper,
        });
    }
    Ok(BoundsTable { rows })
}

/// Writes designs as CSV: a header of parameter names, categoricals as
/// labels. When `ids` is given a leading `id` column is written.
pub fn write_designs_csv<W: Write>(
    out: W,
    schema: &DesignSchema,
    designs: &[DesignVector],
    ids: Option<&[u64]>,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| SchemaError::Csv(e.to_string());
    let mut header: Vec<&str> = Vec::with_capacity(schema.len() + 1);
    if ids.is_some() {
        header.push("id");
    }
    header.extend(schema.names());
    w.write_record(&header).map_err(csv_err)?;
    for (k, d) in designs.iter().enumerate() {
        let mut rec: Vec<String> = Vec::with_capacity(header.len());
        if let Some(ids) = ids {
            rec.push(ids[k].to_string());
        }
        for (p, v) in schema.parameters.iter().zip(&d.values) {
            rec.push(match (&p.kind, v) {
                (_, Value::Real(x)) => x.to_string(),
                (ParamKind::Categorical { categories, .. }, Value::Label(i)) => categories
                    .get(*i)
                    .cloned()
                    .unwrap_or_else(|| i.to_string()),
                (_, Value::Label(i)) => i.to_string(),
            });
        }
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads designs written by [`write_designs_csv`]. Columns are matched by
/// header name; an optional `id` column is returned alongside.
pub fn read_designs_csv<R: Read>(
    input: R,
    schema: &DesignSchema,
) -> Result<Vec<(Option<u64>, DesignVector)>> {
    let mut r = csv::Reader::from_reader(input);
    let csv_err = |e: csv::Error| SchemaError::Csv(e.to_string());
    let header = r.headers().map_err(csv_err)?.clone();
    let id_col = header.iter().position(|h| h == "id");
    let mut cols = Vec::with_capacity(schema.len());
    for p in &schema.parameters {
        let c = header
            .iter()
            .position(|h| h == p.name)
            .ok_or_else(|| SchemaError::Csv(format!("missing column `{}`", p.name)))?;
        cols.push(c);
    }
    let mut out = Vec::new();
    for (row, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let line = row + 2;
        let id = match id_col {
            Some(c) => Some(rec[c].trim().parse::<u64>().map_err(|_| {
                SchemaError::Csv(format!("line {line}: bad id `{}`", &rec[c]))
            })?),
            None => None,
        };
        let mut values = Vec::with_capacity(schema.len());
        for (p, &c) in schema.parameters.iter().zip(&cols) {
            let field = rec.get(c).unwrap_or("").trim();
            values.push(match &p.kind {
                ParamKind::Continuous { .. } => Value::Real(field.parse::<f64>().map_err(|_| {
                    SchemaError::Csv(format!("line {line}: `{}` = `{field}` is not a number", p.name))
                })?),
                ParamKind::Categorical { categories, .. } => {
                    Value::Label(categories.iter().position(|c| c == field).ok_or_else(|| {
                        SchemaError::Csv(format!(
                            "line {line}: `{}` = `{field}` is not a known label",
                            p.name
                        ))
                    })?)
                }
            });
        }
        out.push((
            id,
            DesignVector {
                values,
                schema_version: schema.version.clone(),
            },
        ));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_schema_has_required_parameters() {
        let s = DesignSchema::reference();
        assert_eq!(s.len(), 24);
        for name in [
            "seat_tube_length",
            "top_tube_length",
            "head_tube_length",
            "chain_stay_length",
            "seat_angle",
            "head_angle",
            "bb_drop",
            "wheel_diameter_front",
            "wheel_diameter_rear",
            "tire_width_front",
            "tire_width_rear",
            "fork_offset",
            "stem_reach",
            "stem_stack",
            "red",
            "green",
            "blue",
        ] {
            assert!(s.param(name).is_some(), "missing {name}");
        }
        for c in ["red", "green", "blue"] {
            assert_eq!(
                s.param(c).unwrap().kind,
                ParamKind::Continuous { lower: 0.0, upper: 1.0, default: s.default_design().real(&s, c).unwrap() }
            );
        }
        let continuous = s.parameters.iter().filter(|p| p.is_continuous()).count();
        assert_eq!(continuous, 22);
        for cat in ["handlebar_style", "fork_style"] {
            match &s.param(cat).unwrap().kind {
                ParamKind::Categorical { categories, .. } => assert!(categories.len() >= 2),
                _ => panic!("{cat} should be categorical"),
            }
        }
    }

    #[test]
    fn equal_bounds_name_the_axis() {
        let err = DesignSchema::parse("version t\nfoo cont 1 2 1.5\nbar cont 3 3 3\n").unwrap_err();
        match err {
            SchemaError::InvertedBounds { name, line, .. } => {
                assert_eq!(name, "bar");
                assert_eq!(line, 3);
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn duplicate_names_rejected() {
        let err = DesignSchema::parse(
            "seat_tube_length cont 1 2 1.5\nseat_tube_length cont 1 2 1.5\n",
        )
        .unwrap_err();
        assert!(matches!(err, SchemaError::DuplicateName { ref name, line: 2 } if name == "seat_tube_length"));
    }

    #[test]
    fn parse_errors_carry_line() {
        let err = DesignSchema::parse("# c\n\nx cont 1 two 3\n").unwrap_err();
        assert!(matches!(err, SchemaError::Parse { line: 3, .. }));
        let err = DesignSchema::parse("x cat a,b,a a\n").unwrap_err();
        assert!(matches!(err, SchemaError::Invalid { line: 1, .. }));
        let err = DesignSchema::parse("x cont 0 1 2\n").unwrap_err();
        assert!(matches!(err, SchemaError::Invalid { line: 1, .. }));
    }

    #[test]
    fn text_roundtrip() {
        let s = DesignSchema::reference();
        let back = DesignSchema::parse(&s.to_text()).unwrap();
        assert_eq!(back.parameters, s.parameters);
        assert_eq!(back.version, s.version);
        assert_eq!(back.checksum(), s.checksum());
    }

    #[test]
    fn percentile_examples() {
        let col: Vec<f64> = (0..=100).map(f64::from).collect();
        assert_eq!(column_bounds("x", &col, 1.0, 99.0).unwrap(), (1.0, 99.0));
        assert_eq!(column_bounds("x", &[5.0, 10.0], 0.0, 100.0).unwrap(), (5.0, 10.0));
        assert!(matches!(
            column_bounds("flat", &[3.0; 7], 1.0, 99.0),
            Err(SchemaError::DegenerateColumn { ref name }) if name == "flat"
        ));
        // interpolated: 4 values, 50th pct at index 1.5
        assert_eq!(percentile(&[1.0, 2.0, 4.0, 8.0], 50.0), 3.0);
    }

    #[test]
    fn validate_examples() {
        let s = DesignSchema::reference();
        let d = s.default_design();
        assert!(validate(&d, &s).unwrap().is_empty());

        let mut bad = d.clone();
        bad.set(&s, "seat_tube_length", Value::Real(621.0));
        let v = validate(&bad, &s).unwrap();
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].parameter, "seat_tube_length");

        let mut bad = d.clone();
        bad.set(&s, "handlebar_style", Value::Label(3));
        let v = validate(&bad, &s).unwrap();
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].parameter, "handlebar_style");

        let mut other = d.clone();
        other.schema_version = "other".into();
        assert!(matches!(validate(&other, &s), Err(SchemaError::VersionMismatch { .. })));
    }

    #[test]
    fn encode_examples() {
        let s = DesignSchema::reference();
        let mut d = s.default_design();
        d.set(&s, "seat_tube_length", Value::Real(420.0));
        d.set_label(&s, "handlebar_style", "flat");
        let e = encode_real(&d, &s).unwrap();
        assert_eq!(e.len(), 27);
        assert_eq!(e[0], 0.0);
        // handlebar block follows the 22 continuous slots
        assert_eq!(&e[22..25], &[0.0, 1.0, 0.0]);
        assert_eq!(&e[25..27], &[1.0, 0.0]);
    }

    #[test]
    fn default_encoding_by_hand() {
        let s = DesignSchema::reference();
        let e = encode_real(&s.default_design(), &s).unwrap();
        let mut expected = Vec::new();
        for p in &s.parameters {
            match &p.kind {
                ParamKind::Continuous { lower, upper, default } => {
                    expected.push((default - lower) / (upper - lower))
                }
                ParamKind::Categorical { categories, default } => {
                    for k in 0..categories.len() {
                        expected.push(if k == *default { 1.0 } else { 0.0 });
                    }
                }
            }
        }
        assert_eq!(e.len(), 22 + 3 + 2);
        assert_eq!(e, expected);
        // spot values: seat tube 560 in [420, 620] → 0.7
        assert!((e[0] - 0.7).abs() < 1e-12);
    }

    #[test]
    fn csv_roundtrip_with_ids() {
        let s = DesignSchema::reference();
        let mut d2 = s.default_design();
        d2.set_label(&s, "fork_style", "suspension");
        d2.set(&s, "red", Value::Real(0.123456789));
        let designs = vec![s.default_design(), d2];
        let mut buf = Vec::new();
        write_designs_csv(&mut buf, &s, &designs, Some(&[7, 9])).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("id,seat_tube_length,"));
        assert!(text.contains("suspension"));
        let back = read_designs_csv(&buf[..], &s).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].0, Some(7));
        assert_eq!(back[1].1, designs[1]);
    }
}
