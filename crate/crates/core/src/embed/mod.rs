//! 512-dimensional image (and, through the bridge, text) embeddings.

pub mod augment;
pub mod bridge;
pub mod reference;

use std::borrow::Cow;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use augment::{augment_views, AugmentationParams};
pub use bridge::{BridgeClient, BridgeConfig, Handshake};
pub use reference::{raw_features, reference_embed, FeatureWeights};

use crate::render::RasterImage;

pub const EMBEDDING_DIM: usize = 512;
pub const DEFAULT_VIEWS: usize = 5;
/// Images are reduced to this size before the reference embedder sees them.
pub const REFERENCE_WORKING_SIZE: (u32, u32) = (268, 170);

/// Model tag recorded for the built-in embedder.
pub const REFERENCE_MODEL_TAG: &str = "reference-1";

pub const EMBEDDING_MAGIC: [u8; 4] = *b"VEMB";
pub const DESIGN_MAGIC: [u8; 4] = *b"VDES";

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("embedding bridge unreachable: {0}")]
    Unreachable(String),
    #[error("bridge protocol error: {0}")]
    Protocol(String),
    #[error("unsupported bridge protocol version {0}")]
    ProtocolVersion(u64),
    #[error("embedding dimension {0}, expected 512")]
    Dimension(usize),
    #[error("bridge rejected request {id}: {message}")]
    Remote { id: u64, message: String },
    #[error("{0} is not supported by this embedder")]
    Unsupported(&'static str),
    #[error("view count must be positive")]
    NoViews,
    #[error("bad matrix file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    values: Vec<f32>,
}

impl Embedding {
    /// Panics unless `values` has 512 finite entries.
    pub fn new(values: Vec<f32>) -> Self {
        Self::try_new(values).expect("embedding must have 512 finite values")
    }

    pub fn try_new(values: Vec<f32>) -> Result<Self, EmbedError> {
        if values.len() != EMBEDDING_DIM {
            return Err(EmbedError::Dimension(values.len()));
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(EmbedError::Format("non-finite embedding value".into()));
        }
        Ok(Embedding { values })
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.values.iter().map(|&v| v as f64).collect()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt()
    }

    /// Component-wise arithmetic mean, accumulated in f64 in list order.
    pub fn mean(list: &[Embedding]) -> Option<Embedding> {
        if list.is_empty() {
            return None;
        }
        let mut acc = vec![0.0f64; EMBEDDING_DIM];
        for e in list {
            for (a, &v) in acc.iter_mut().zip(&e.values) {
                *a += v as f64;
            }
        }
        let n = list.len() as f64;
        Some(Embedding::new(acc.iter().map(|a| (a / n) as f32).collect()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum EmbedderConfig {
    Reference,
    Bridge(BridgeConfig),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EmbedderKind {
    Reference,
    External,
}

pub struct ReferenceEmbedder {
    pub working_size: Option<(u32, u32)>,
    pub weights: FeatureWeights,
}

impl Default for ReferenceEmbedder {
    fn default() -> Self {
        ReferenceEmbedder {
            working_size: Some(REFERENCE_WORKING_SIZE),
            weights: FeatureWeights::default(),
        }
    }
}

enum Inner {
    Reference(ReferenceEmbedder),
    External(BridgeClient),
}

/// A live embedder. Calls through one handle share model and preprocessing.
pub struct EmbedderHandle {
    inner: Inner,
}

impl EmbedderHandle {
    pub fn reference() -> Self {
        Self::with_reference(ReferenceEmbedder::default())
    }

    pub fn with_reference(r: ReferenceEmbedder) -> Self {
        EmbedderHandle {
            inner: Inner::Reference(r),
        }
    }

    pub fn external(cfg: &BridgeConfig) -> Result<Self, EmbedError> {
        Ok(EmbedderHandle {
            inner: Inner::External(BridgeClient::spawn(cfg)?),
        })
    }

    pub fn open(cfg: &EmbedderConfig) -> Result<Self, EmbedError> {
        match cfg {
            EmbedderConfig::Reference => Ok(Self::reference()),
            EmbedderConfig::Bridge(b) => Self::external(b),
        }
    }

    pub fn kind(&self) -> EmbedderKind {
        match self.inner {
            Inner::Reference(_) => EmbedderKind::Reference,
            Inner::External(_) => EmbedderKind::External,
        }
    }

    /// Model tag: [`REFERENCE_MODEL_TAG`] or what the bridge announced.
    pub fn model_tag(&self) -> String {
        match &self.inner {
            Inner::Reference(_) => REFERENCE_MODEL_TAG.to_string(),
            Inner::External(c) => c.handshake().model.clone(),
        }
    }

    /// Resizing applied to every image before embedding (and before
    /// augmentation in [`embed_views_avg`]). The external bridge does its
    /// own preprocessing, so it gets the image untouched.
    pub fn preprocess<'a>(&self, img: &'a RasterImage) -> Cow<'a, RasterImage> {
        match &self.inner {
            Inner::Reference(ReferenceEmbedder {
                working_size: Some((w, h)),
                ..
            }) if (img.width, img.height) != (*w, *h) => Cow::Owned(reference::area_resize(img, *w, *h)),
            _ => Cow::Borrowed(img),
        }
    }

    pub fn embed_image(&mut self, img: &RasterImage) -> Result<Embedding, EmbedError> {
        let img = match &self.inner {
            Inner::Reference(_) => self.preprocess(img),
            Inner::External(_) => Cow::Borrowed(img),
        };
        match &mut self.inner {
            Inner::Reference(r) => Ok(reference::embed_with(&img, &r.weights)),
            Inner::External(c) => c.embed_image(&img),
        }
    }

    pub fn embed_text(&mut self, text: &str) -> Result<Embedding, EmbedError> {
        match &mut self.inner {
            Inner::Reference(_) => Err(EmbedError::Unsupported("text embedding")),
            Inner::External(c) => c.embed_text(text),
        }
    }
}

pub fn embed_image(h: &mut EmbedderHandle, img: &RasterImage) -> Result<Embedding, EmbedError> {
    h.embed_image(img)
}

/// Mean of the embeddings of `n` augmented views. The mean is not
/// re-normalized.
pub fn embed_views_avg(h: &mut EmbedderHandle, img: &RasterImage, n: usize, seed: u64) -> Result<Embedding, EmbedError> {
    if n == 0 {
        return Err(EmbedError::NoViews);
    }
    let base = h.preprocess(img).into_owned();
    let views = augment_views(&base, n, seed);
    let embs = views.iter().map(|v| h.embed_image(v)).collect::<Result<Vec<_>, _>>()?;
    Ok(Embedding::mean(&embs).expect("n > 0"))
}

/// Writes the 16-byte header (magic, u64 row count, u32 dim) and the rows as
/// little-endian f32.
pub fn write_matrix<W: Write>(mut w: W, magic: [u8; 4], dim: usize, data: &[f32]) -> Result<(), EmbedError> {
    if dim == 0 || data.len() % dim != 0 {
        return Err(EmbedError::Format(format!("{} values do not form rows of {dim}", data.len())));
    }
    w.write_all(&magic)?;
    w.write_all(&((data.len() / dim) as u64).to_le_bytes())?;
    w.write_all(&(dim as u32).to_le_bytes())?;
    let mut buf = Vec::with_capacity(data.len() * 4);
    for v in data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    w.flush()?;
    Ok(())
}

/// Returns `(dim, values)`.
pub fn read_matrix<R: Read>(mut r: R, magic: [u8; 4]) -> Result<(usize, Vec<f32>), EmbedError> {
    let mut head = [0u8; 16];
    r.read_exact(&mut head)
        .map_err(|_| EmbedError::Format("truncated header".into()))?;
    if head[..4] != magic {
        return Err(EmbedError::Format(format!(
            "magic {:?}, expected {:?}",
            String::from_utf8_lossy(&head[..4]),
            String::from_utf8_lossy(&magic)
        )));
    }
    let count = u64::from_le_bytes(head[4..12].try_into().expect("8 bytes")) as usize;
    let dim = u32::from_le_bytes(head[12..16].try_into().expect("4 bytes")) as usize;
    let mut body = Vec::new();
    r.read_to_end(&mut body)?;
    if body.len() != count * dim * 4 {
        return Err(EmbedError::Format(format!(
            "body has {} bytes, header promises {count}×{dim} floats",
            body.len()
        )));
    }
    let values = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    Ok((dim, values))
}

pub fn write_embeddings(path: &Path, embs: &[Embedding]) -> Result<(), EmbedError> {
    let flat: Vec<f32> = embs.iter().flat_map(|e| e.values.iter().copied()).collect();
    write_matrix(BufWriter::new(File::create(path)?), EMBEDDING_MAGIC, EMBEDDING_DIM, &flat)
}

pub fn read_embeddings(path: &Path) -> Result<Vec<Embedding>, EmbedError> {
    let (dim, values) = read_matrix(BufReader::new(File::open(path)?), EMBEDDING_MAGIC)?;
    if dim != EMBEDDING_DIM {
        return Err(EmbedError::Dimension(dim));
    }
    values.chunks_exact(dim).map(|c| Embedding::try_new(c.to_vec())).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Rgb8;

    fn pattern() -> RasterImage {
        let mut img = RasterImage::filled(120, 80, Rgb8::WHITE);
        for y in 20..60 {
            for x in 10..70 {
                img.set(x, y, Rgb8([200, (x * 3) as u8, 30]));
            }
        }
        img
    }

    #[test]
    fn matrix_roundtrip_and_errors() {
        let data: Vec<f32> = (0..24).map(|i| i as f32 * 0.5 - 3.0).collect();
        let mut buf = Vec::new();
        write_matrix(&mut buf, EMBEDDING_MAGIC, 8, &data).unwrap();
        assert_eq!(buf.len(), 16 + 24 * 4);
        assert_eq!(&buf[..4], b"VEMB");
        assert_eq!(read_matrix(&buf[..], EMBEDDING_MAGIC).unwrap(), (8, data));
        assert!(read_matrix(&buf[..], DESIGN_MAGIC).is_err());
        assert!(read_matrix(&buf[..buf.len() - 1], EMBEDDING_MAGIC).is_err());
    }

    #[test]
    fn reference_embedding_is_unit_and_deterministic() {
        let mut h = EmbedderHandle::reference();
        let a = h.embed_image(&pattern()).unwrap();
        let b = h.embed_image(&pattern()).unwrap();
        assert_eq!(a, b);
        assert!((a.norm() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn single_view_average_equals_view_embedding() {
        let mut h = EmbedderHandle::reference();
        let img = pattern();
        let avg = embed_views_avg(&mut h, &img, 1, 77).unwrap();
        let view = augment_views(&h.preprocess(&img), 1, 77).remove(0);
        assert_eq!(avg, h.embed_image(&view).unwrap());
        assert!(matches!(embed_views_avg(&mut h, &img, 0, 1), Err(EmbedError::NoViews)));
    }

    #[test]
    fn text_needs_a_bridge() {
        let mut h = EmbedderHandle::reference();
        assert!(matches!(h.embed_text("a bicycle"), Err(EmbedError::Unsupported(_))));
    }
}
