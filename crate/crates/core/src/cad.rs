//! CAD documents: a template of renderer defaults overlaid with a design's
//! parameters, stored as flat XML (`.bcadx`).
//!
//! ```xml
//! <?xml version="1.0" encoding="UTF-8"?>
//! <bcadx version="1" schema="ref-24.1" design="42">
//!   <entry key="seat_tube_length">560</entry>
//!   ...
//! </bcadx>
//! ```
//!
//! Entries keep template order and numbers use the shortest decimal that
//! round-trips, so the same document always serializes to the same bytes.

use std::collections::HashSet;

use quick_xml::escape::escape;
use quick_xml::events::Event;
use quick_xml::Reader;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::Rgb8;
use crate::schema::{DesignSchema, DesignVector, ParamKind, Value};

pub const TEMPLATE_XML: &str = include_str!("../assets/template.bcadx");
pub const FORMAT_VERSION: &str = "1";

/// Document keys that are not named after a schema parameter.
pub mod keys {
    pub const FRAME_COLOR: &str = "frame_color";
    pub const BACKGROUND_COLOR: &str = "background_color";
    pub const TIRE_COLOR: &str = "tire_color";
    pub const RIM_COLOR: &str = "rim_color";
    pub const COMPONENT_COLOR: &str = "component_color";
    pub const RIM_WIDTH: &str = "rim_width";
    pub const COMPONENT_WIDTH: &str = "component_width";
    pub const SADDLE_THICKNESS: &str = "saddle_thickness";
    pub const SUSPENSION_GAP: &str = "suspension_gap";
}

/// Colour-channel parameters and their slot in `frame_color`.
const COLOR_CHANNELS: [(&str, usize); 3] = [("red", 0), ("green", 1), ("blue", 2)];

#[derive(Debug, Error)]
pub enum CadError {
    #[error("schema parameter `{0}` has no key in the template")]
    UnmappedParameter(String),
    #[error("malformed XML at byte {offset}: {message}")]
    Malformed { offset: u64, message: String },
    #[error("design does not match schema: {0}")]
    Design(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub schema_version: Option<String>,
    pub design: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CadDocument {
    pub entries: Vec<(String, String)>,
    pub provenance: Provenance,
}

/// Something odd but recoverable found while parsing.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseWarning {
    pub offset: u64,
    pub message: String,
}

impl CadDocument {
    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    fn set(&mut self, key: &str, value: String) -> bool {
        match self.entries.iter_mut().find(|(k, _)| k == key) {
            Some(slot) => {
                slot.1 = value;
                true
            }
            None => false,
        }
    }

    /// Entry-wise equality, ignoring provenance.
    pub fn same_values(&self, other: &CadDocument) -> bool {
        self.entries == other.entries
    }

    /// Keys whose values differ between two documents with the same layout.
    pub fn diff_keys<'a>(&'a self, other: &'a CadDocument) -> Vec<&'a str> {
        self.entries
            .iter()
            .zip(&other.entries)
            .filter(|(a, b)| a != b)
            .map(|(a, _)| a.0.as_str())
            .collect()
    }
}

/// Default values for every key the renderer reads.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CadTemplate {
    pub doc: CadDocument,
}

impl CadTemplate {
    pub fn reference() -> CadTemplate {
        let (doc, warnings) = parse_xml(TEMPLATE_XML.as_bytes()).expect("bundled template parses");
        debug_assert!(warnings.is_empty());
        CadTemplate { doc }
    }

    pub fn from_xml(bytes: &[u8]) -> Result<CadTemplate, CadError> {
        Ok(CadTemplate {
            doc: parse_xml(bytes)?.0,
        })
    }

    /// Document key bound to a schema parameter.
    pub fn key_for<'a>(&self, param: &'a str) -> Option<&'a str> {
        let key = if COLOR_CHANNELS.iter().any(|(c, _)| *c == param) {
            keys::FRAME_COLOR
        } else {
            param
        };
        self.doc.get(key).map(|_| key)
    }
}

fn format_number(x: f64) -> String {
    // Display for f64 is the shortest string that parses back exactly.
    format!("{x}")
}

/// Overlays a design onto the template.
pub fn to_cad(
    design: &DesignVector,
    template: &CadTemplate,
    schema: &DesignSchema,
) -> Result<CadDocument, CadError> {
    if design.values.len() != schema.len() {
        return Err(CadError::Design(format!(
            "{} values for {} parameters",
            design.values.len(),
            schema.len()
        )));
    }
    let mut doc = template.doc.clone();
    let mut rgb: Option<[f64; 3]> = None;
    for (spec, value) in schema.parameters.iter().zip(&design.values) {
        let key = template
            .key_for(&spec.name)
            .ok_or_else(|| CadError::UnmappedParameter(spec.name.clone()))?;
        if let Some(&(_, slot)) = COLOR_CHANNELS.iter().find(|(c, _)| *c == spec.name) {
            let x = value
                .as_real()
                .ok_or_else(|| CadError::Design(format!("`{}` must be real", spec.name)))?;
            let base = match rgb {
                Some(c) => c,
                None => template
                    .doc
                    .get(keys::FRAME_COLOR)
                    .and_then(|s| s.parse::<Rgb8>().ok())
                    .unwrap_or(Rgb8::BLACK)
                    .to_unit(),
            };
            let mut c = base;
            c[slot] = x;
            rgb = Some(c);
            continue;
        }
        let text = match (&spec.kind, *value) {
            (ParamKind::Continuous { .. }, Value::Real(x)) => format_number(x),
            (ParamKind::Categorical { categories, .. }, Value::Label(i)) => categories
                .get(i)
                .cloned()
                .ok_or_else(|| CadError::Design(format!("`{}` label {i} out of range", spec.name)))?,
            _ => return Err(CadError::Design(format!("`{}` has the wrong kind", spec.name))),
        };
        doc.set(key, text);
    }
    if let Some([r, g, b]) = rgb {
        doc.set(keys::FRAME_COLOR, Rgb8::from_unit(r, g, b).to_string());
    }
    doc.provenance = Provenance {
        schema_version: Some(schema.version.clone()),
        design: Some(design_hash(design)),
    };
    Ok(doc)
}

/// Reads a design back out of a document. Colour channels come from the
/// 8-bit `frame_color`, so they round-trip only to within 1/255.
pub fn from_cad(doc: &CadDocument, schema: &DesignSchema) -> Result<DesignVector, CadError> {
    let color = match doc.get(keys::FRAME_COLOR) {
        Some(s) => Some(
            s.parse::<Rgb8>()
                .map_err(|_| CadError::Design(format!("bad frame colour `{s}`")))?
                .to_unit(),
        ),
        None => None,
    };
    let mut values = Vec::with_capacity(schema.len());
    for spec in &schema.parameters {
        if let Some(&(_, slot)) = COLOR_CHANNELS.iter().find(|(c, _)| *c == spec.name) {
            let c = color.ok_or_else(|| CadError::Design("document has no frame colour".into()))?;
            values.push(Value::Real(c[slot]));
            continue;
        }
        let text = doc
            .get(&spec.name)
            .ok_or_else(|| CadError::UnmappedParameter(spec.name.clone()))?;
        values.push(match &spec.kind {
            ParamKind::Continuous { .. } => Value::Real(
                text.trim()
                    .parse()
                    .map_err(|_| CadError::Design(format!("`{}` = `{text}` is not a number", spec.name)))?,
            ),
            ParamKind::Categorical { categories, .. } => Value::Label(
                categories
                    .iter()
                    .position(|c| c == text.trim())
                    .ok_or_else(|| CadError::Design(format!("`{}` = `{text}` is not a known label", spec.name)))?,
            ),
        });
    }
    Ok(DesignVector {
        values,
        schema_version: schema.version.clone(),
    })
}

/// Short content hash identifying a design.
pub fn design_hash(design: &DesignVector) -> String {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    h.update(design.schema_version.as_bytes());
    for v in &design.values {
        match *v {
            Value::Real(x) => h.update(x.to_bits().to_le_bytes()),
            Value::Label(i) => h.update((i as u64).to_le_bytes()),
        }
    }
    hex::encode(&h.finalize()[..8])
}

pub fn write_xml(doc: &CadDocument) -> Vec<u8> {
    let mut out = String::with_capacity(64 * doc.entries.len() + 128);
    out.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    out.push_str(&format!("<bcadx version=\"{FORMAT_VERSION}\""));
    if let Some(s) = &doc.provenance.schema_version {
        out.push_str(&format!(" schema=\"{}\"", escape(s.as_str())));
    }
    if let Some(d) = &doc.provenance.design {
        out.push_str(&format!(" design=\"{}\"", escape(d.as_str())));
    }
    out.push_str(">\n");
    for (k, v) in &doc.entries {
        out.push_str(&format!(
            "  <entry key=\"{}\">{}</entry>\n",
            escape(k.as_str()),
            escape(v.as_str())
        ));
    }
    out.push_str("</bcadx>\n");
    out.into_bytes()
}

fn known_keys() -> &'static HashSet<String> {
    static KEYS: std::sync::OnceLock<HashSet<String>> = std::sync::OnceLock::new();
    KEYS.get_or_init(|| {
        TEMPLATE_XML
            .lines()
            .filter_map(|l| {
                let rest = l.trim().strip_prefix("<entry key=\"")?;
                Some(rest[..rest.find('"')?].to_string())
            })
            .collect()
    })
}

/// Parses a `.bcadx` document. Keys the renderer does not know are kept and
/// reported as warnings.
pub fn parse_xml(bytes: &[u8]) -> Result<(CadDocument, Vec<ParseWarning>), CadError> {
    let mut reader = Reader::from_reader(bytes);
    reader.config_mut().trim_text(true);
    let mut buf = Vec::new();
    let mut doc = CadDocument {
        entries: Vec::new(),
        provenance: Provenance::default(),
    };
    let mut warnings = Vec::new();
    let mut seen = HashSet::new();
    let mut root_open = false;
    let mut root_closed = false;
    let mut current_key: Option<(String, u64)> = None;
    let mut current_text = String::new();

    let malformed = |offset: u64, message: String| CadError::Malformed { offset, message };

    loop {
        let offset = reader.buffer_position();
        let event = reader
            .read_event_into(&mut buf)
            .map_err(|e| malformed(reader.error_position(), e.to_string()))?;
        match event {
            Event::Decl(_) | Event::Comment(_) | Event::PI(_) | Event::DocType(_) => {}
            Event::Start(e) => {
                let name = e.name();
                match (name.as_ref(), root_open, &current_key) {
                    (b"bcadx", false, None) if !root_closed => {
                        root_open = true;
                        for attr in e.attributes() {
                            let attr = attr.map_err(|e| malformed(offset, e.to_string()))?;
                            let value = attr
                                .unescape_value()
                                .map_err(|e| malformed(offset, e.to_string()))?
                                .into_owned();
                            match attr.key.as_ref() {
                                b"version" if value != FORMAT_VERSION => {
                                    return Err(malformed(
                                        offset,
                                        format!("unsupported format version `{value}`"),
                                    ))
                                }
                                b"schema" => doc.provenance.schema_version = Some(value),
                                b"design" => doc.provenance.design = Some(value),
                                _ => {}
                            }
                        }
                    }
                    (b"entry", true, None) => {
                        let mut key = None;
                        for attr in e.attributes() {
                            let attr = attr.map_err(|e| malformed(offset, e.to_string()))?;
                            if attr.key.as_ref() == b"key" {
                                key = Some(
                                    attr.unescape_value()
                                        .map_err(|e| malformed(offset, e.to_string()))?
                                        .into_owned(),
                                );
                            }
                        }
                        let key = key.ok_or_else(|| malformed(offset, "entry without key".into()))?;
                        current_key = Some((key, offset));
                        current_text.clear();
                    }
                    (other, _, _) => {
                        return Err(malformed(
                            offset,
                            format!("unexpected element <{}>", String::from_utf8_lossy(other)),
                        ))
                    }
                }
            }
            Event::Empty(e) => {
                // <entry key="x"/> is an entry with an empty value
                if e.name().as_ref() == b"entry" && root_open && current_key.is_none() {
                    let mut key = None;
                    for attr in e.attributes() {
                        let attr = attr.map_err(|e| malformed(offset, e.to_string()))?;
                        if attr.key.as_ref() == b"key" {
                            key = Some(
                                attr.unescape_value()
                                    .map_err(|e| malformed(offset, e.to_string()))?
                                    .into_owned(),
                            );
                        }
                    }
                    let key = key.ok_or_else(|| malformed(offset, "entry without key".into()))?;
                    push_entry(&mut doc, &mut seen, &mut warnings, key, String::new(), offset)?;
                } else {
                    return Err(malformed(offset, "unexpected empty element".into()));
                }
            }
            Event::Text(t) => {
                if current_key.is_none() {
                    return Err(malformed(offset, "text outside an entry".into()));
                }
                current_text.push_str(&t.unescape().map_err(|e| malformed(offset, e.to_string()))?);
            }
            Event::CData(t) => {
                if current_key.is_none() {
                    return Err(malformed(offset, "CDATA outside an entry".into()));
                }
                current_text.push_str(&String::from_utf8_lossy(&t.into_inner()));
            }
            Event::End(e) => match (e.name().as_ref(), current_key.take()) {
                (b"entry", Some((key, at))) => {
                    let value = std::mem::take(&mut current_text);
                    push_entry(&mut doc, &mut seen, &mut warnings, key, value, at)?;
                }
                (b"bcadx", None) if root_open => {
                    root_open = false;
                    root_closed = true;
                }
                _ => return Err(malformed(offset, "mismatched end tag".into())),
            },
            Event::Eof => {
                if !root_closed {
                    return Err(malformed(
                        bytes.len() as u64,
                        "unexpected end of input (document truncated?)".into(),
                    ));
                }
                break;
            }
        }
        buf.clear();
    }
    Ok((doc, warnings))
}

fn push_entry(
    doc: &mut CadDocument,
    seen: &mut HashSet<String>,
    warnings: &mut Vec<ParseWarning>,
    key: String,
    value: String,
    offset: u64,
) -> Result<(), CadError> {
    if !seen.insert(key.clone()) {
        return Err(CadError::Malformed {
            offset,
            message: format!("duplicate key `{key}`"),
        });
    }
    if !known_keys().contains(&key) {
        warnings.push(ParseWarning {
            offset,
            message: format!("unknown key `{key}` kept as-is"),
        });
    }
    doc.entries.push((key, value));
    Ok(())
}
