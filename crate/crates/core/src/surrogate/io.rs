//! Weight file layout (little-endian):
//!
//! ```text
//! magic "VRNW" | u32 version | u64 input, width, blocks, output
//! u32 layer count | per layer: u64 outputs, u64 inputs
//! per layer: outputs×inputs f64 weights (row-major), outputs f64 biases
//! ```

use std::fs;
use std::path::Path;

use thiserror::Error;

use super::net::{Block, Dense, ResidualNet, Topology};

pub const WEIGHTS_MAGIC: [u8; 4] = *b"VRNW";
pub const WEIGHTS_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum WeightsError {
    #[error("not a weight file")]
    Magic,
    #[error("weight file version {0}, expected {WEIGHTS_VERSION}")]
    Version(u32),
    #[error("shape table does not match topology: {0}")]
    Shape(String),
    #[error("weight file truncated or has trailing bytes")]
    Corrupt,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub fn to_bytes(net: &ResidualNet) -> Vec<u8> {
    let t = net.topology;
    let layers = net.layers();
    let mut out = Vec::with_capacity(64 + 8 * net.param_count());
    out.extend_from_slice(&WEIGHTS_MAGIC);
    out.extend_from_slice(&WEIGHTS_VERSION.to_le_bytes());
    for v in [t.input, t.width, t.blocks, t.output] {
        out.extend_from_slice(&(v as u64).to_le_bytes());
    }
    out.extend_from_slice(&(layers.len() as u32).to_le_bytes());
    for d in &layers {
        out.extend_from_slice(&(d.outputs as u64).to_le_bytes());
        out.extend_from_slice(&(d.inputs as u64).to_le_bytes());
    }
    for d in &layers {
        for v in d.w.iter().chain(&d.b) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl Reader<'_> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N], WeightsError> {
        if self.buf.len() < N {
            return Err(WeightsError::Corrupt);
        }
        let (a, b) = self.buf.split_at(N);
        self.buf = b;
        Ok(a.try_into().expect("N bytes"))
    }

    fn u32(&mut self) -> Result<u32, WeightsError> {
        Ok(u32::from_le_bytes(self.take()?))
    }

    fn u64(&mut self) -> Result<usize, WeightsError> {
        usize::try_from(u64::from_le_bytes(self.take()?)).map_err(|_| WeightsError::Corrupt)
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, WeightsError> {
        let bytes = n.checked_mul(8).ok_or(WeightsError::Corrupt)?;
        if self.buf.len() < bytes {
            return Err(WeightsError::Corrupt);
        }
        let (a, b) = self.buf.split_at(bytes);
        self.buf = b;
        Ok(a.chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<ResidualNet, WeightsError> {
    let mut r = Reader { buf: bytes };
    if r.take::<4>()? != WEIGHTS_MAGIC {
        return Err(WeightsError::Magic);
    }
    let version = r.u32()?;
    if version != WEIGHTS_VERSION {
        return Err(WeightsError::Version(version));
    }
    let t = Topology {
        input: r.u64()?,
        width: r.u64()?,
        blocks: r.u64()?,
        output: r.u64()?,
    };
    if t.input == 0 || t.width == 0 || t.output == 0 || t.blocks > 1024 {
        return Err(WeightsError::Shape(format!("{t:?}")));
    }
    let count = r.u32()? as usize;
    let mut expected = vec![(t.width, t.input)];
    expected.extend(std::iter::repeat_n((t.width, t.width), 2 * t.blocks));
    expected.push((t.output, t.width));
    if count != expected.len() {
        return Err(WeightsError::Shape(format!("{count} layers for {t:?}")));
    }
    for (k, want) in expected.iter().enumerate() {
        let got = (r.u64()?, r.u64()?);
        if got != *want {
            return Err(WeightsError::Shape(format!("layer {k} is {got:?}, expected {want:?}")));
        }
    }
    let mut read = |(outputs, inputs): (usize, usize)| -> Result<Dense, WeightsError> {
        let w = r.f64s(outputs.checked_mul(inputs).ok_or(WeightsError::Corrupt)?)?;
        let b = r.f64s(outputs)?;
        Ok(Dense { inputs, outputs, w, b })
    };
    let stem = read(expected[0])?;
    let mut blocks = Vec::with_capacity(t.blocks);
    for k in 0..t.blocks {
        blocks.push(Block {
            first: read(expected[1 + 2 * k])?,
            second: read(expected[2 + 2 * k])?,
        });
    }
    let head = read(expected[expected.len() - 1])?;
    if !r.buf.is_empty() {
        return Err(WeightsError::Corrupt);
    }
    Ok(ResidualNet {
        topology: t,
        stem,
        blocks,
        head,
    })
}

pub fn save_weights(net: &ResidualNet, path: &Path) -> Result<(), WeightsError> {
    fs::write(path, to_bytes(net))?;
    Ok(())
}

pub fn load_weights(path: &Path) -> Result<ResidualNet, WeightsError> {
    from_bytes(&fs::read(path)?)
}
