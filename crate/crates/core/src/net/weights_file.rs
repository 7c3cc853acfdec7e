//! ASTW weight files.
//!
//! Little-endian layout:
//!
//! ```text
//! "ASTW" | u32 version (1) | u32 layer_count | layer*
//! layer := u8 tag
//!          0 conv1d:  u32 out, u32 in, u32 width, f32[out*in*width] kernel, f32[out] bias
//!          1 relu
//!          2 maxpool2
//!          3 dense:   u32 out, u32 in, f32[out*in] weights, f32[out] bias
//! ```
//!
//! Feature blocks come first. A classifier head, when present, is stored as
//! `dense, relu, dense, dense`: the hidden layer followed by the main and
//! auxiliary output layers, which both read the hidden activations.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2, Array3};
use thiserror::Error;

use super::{ConvLayer, DenseLayer, Layer, NetError, NetworkWeights};

pub const MAGIC: [u8; 4] = *b"ASTW";
pub const VERSION: u32 = 1;

const TAG_CONV: u8 = 0;
const TAG_RELU: u8 = 1;
const TAG_POOL: u8 = 2;
const TAG_DENSE: u8 = 3;

#[derive(Debug, Error)]
pub enum WeightsFileError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("not an ASTW weight file (bad magic {0:?})")]
    BadMagic([u8; 4]),
    #[error("unsupported weight file version {0}")]
    Version(u32),
    #[error("weight file truncated")]
    Truncated,
    #[error("unknown layer tag {0}")]
    UnknownTag(u8),
    #[error("{0} trailing bytes after the last layer")]
    TrailingBytes(usize),
    #[error("inconsistent dimensions: {0}")]
    Dimension(String),
}

impl From<NetError> for WeightsFileError {
    fn from(e: NetError) -> Self {
        WeightsFileError::Dimension(e.to_string())
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], WeightsFileError> {
        if self.bytes.len() < n {
            return Err(WeightsFileError::Truncated);
        }
        let (head, tail) = self.bytes.split_at(n);
        self.bytes = tail;
        Ok(head)
    }

    fn u8(&mut self) -> Result<u8, WeightsFileError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, WeightsFileError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn dim(&mut self) -> Result<usize, WeightsFileError> {
        Ok(self.u32()? as usize)
    }

    fn floats(&mut self, count: usize) -> Result<Vec<f64>, WeightsFileError> {
        let bytes = count.checked_mul(4).ok_or(WeightsFileError::Truncated)?;
        let raw = self.take(bytes)?;
        Ok(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64).collect())
    }
}

fn overflow() -> WeightsFileError {
    WeightsFileError::Dimension("tensor size overflows".into())
}

/// Parses an ASTW byte stream.
pub fn read_weights(mut reader: impl Read) -> Result<NetworkWeights, WeightsFileError> {
    let mut bytes = Vec::new();
    reader.read_to_end(&mut bytes).map_err(|source| WeightsFileError::Io { path: PathBuf::new(), source })?;
    let mut cur = Cursor { bytes: &bytes };

    let magic: [u8; 4] = match cur.take(4) {
        Ok(m) => m.try_into().expect("4 bytes"),
        Err(_) => {
            let mut m = [0u8; 4];
            m[..bytes.len()].copy_from_slice(&bytes);
            return Err(WeightsFileError::BadMagic(m));
        }
    };
    if magic != MAGIC {
        return Err(WeightsFileError::BadMagic(magic));
    }
    let version = cur.u32()?;
    if version != VERSION {
        return Err(WeightsFileError::Version(version));
    }
    let count = cur.u32()?;
    let mut layers = Vec::new();
    for _ in 0..count {
        let layer = match cur.u8()? {
            TAG_CONV => {
                let (out, inp, width) = (cur.dim()?, cur.dim()?, cur.dim()?);
                let n = out.checked_mul(inp).and_then(|v| v.checked_mul(width)).ok_or_else(overflow)?;
                let kernel = Array3::from_shape_vec((out, inp, width), cur.floats(n)?).map_err(|_| overflow())?;
                let bias = Array1::from_vec(cur.floats(out)?);
                Layer::Conv1d(ConvLayer { kernel, bias })
            }
            TAG_RELU => Layer::Relu,
            TAG_POOL => Layer::MaxPool2,
            TAG_DENSE => {
                let (out, inp) = (cur.dim()?, cur.dim()?);
                let n = out.checked_mul(inp).ok_or_else(overflow)?;
                let weight = Array2::from_shape_vec((out, inp), cur.floats(n)?).map_err(|_| overflow())?;
                let bias = Array1::from_vec(cur.floats(out)?);
                Layer::Dense(DenseLayer { weight, bias })
            }
            tag => return Err(WeightsFileError::UnknownTag(tag)),
        };
        layers.push(layer);
    }
    if !cur.bytes.is_empty() {
        return Err(WeightsFileError::TrailingBytes(cur.bytes.len()));
    }
    Ok(NetworkWeights::from_layers(layers)?)
}

fn put_floats<'a>(buf: &mut Vec<u8>, values: impl IntoIterator<Item = &'a f64>) {
    for &v in values {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

fn put_u32(buf: &mut Vec<u8>, v: usize) {
    buf.extend_from_slice(&(v as u32).to_le_bytes());
}

/// Serializes weights; values are narrowed to 32-bit floats.
pub fn write_weights(w: &NetworkWeights, mut writer: impl Write) -> std::io::Result<()> {
    let layers = w.layers();
    let mut buf = Vec::new();
    buf.extend_from_slice(&MAGIC);
    put_u32(&mut buf, VERSION as usize);
    put_u32(&mut buf, layers.len());
    for layer in &layers {
        match layer {
            Layer::Conv1d(c) => {
                buf.push(TAG_CONV);
                let (o, i, k) = c.kernel.dim();
                put_u32(&mut buf, o);
                put_u32(&mut buf, i);
                put_u32(&mut buf, k);
                put_floats(&mut buf, c.kernel.as_standard_layout().iter());
                put_floats(&mut buf, c.bias.iter());
            }
            Layer::Relu => buf.push(TAG_RELU),
            Layer::MaxPool2 => buf.push(TAG_POOL),
            Layer::Dense(d) => {
                buf.push(TAG_DENSE);
                put_u32(&mut buf, d.out_features());
                put_u32(&mut buf, d.in_features());
                put_floats(&mut buf, d.weight.as_standard_layout().iter());
                put_floats(&mut buf, d.bias.iter());
            }
        }
    }
    writer.write_all(&buf)?;
    writer.flush()
}

pub fn save_weights(w: &NetworkWeights, path: impl AsRef<Path>) -> Result<(), WeightsFileError> {
    let path = path.as_ref();
    let io = |source| WeightsFileError::Io { path: path.to_path_buf(), source };
    let file = std::fs::File::create(path).map_err(io)?;
    write_weights(w, std::io::BufWriter::new(file)).map_err(io)
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<NetworkWeights, WeightsFileError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| WeightsFileError::Io { path: path.to_path_buf(), source })?;
    read_weights(std::io::BufReader::new(file)).map_err(|e| match e {
        WeightsFileError::Io { source, .. } => WeightsFileError::Io { path: path.to_path_buf(), source },
        other => other,
    })
}
