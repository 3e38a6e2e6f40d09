//! On-disk formats: BBX hidden-state/latent containers, their JSONL mirror,
//! and JSON model files.
//!
//! BBX layout (all integers little-endian `u32`):
//!
//! ```text
//! "BBX1" | dim | doc_count | { id_len | id bytes (UTF-8) | T | T*dim f32 LE } * doc_count
//! ```
//!
//! There is no padding and no trailing data. Floats are stored as IEEE-754
//! binary32 and widened to `f64` on load.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::Mlp3;
use crate::encoder::MlpEncoder;
use crate::error::{Error, Result};
use crate::nn::{Activation, Dense, Mlp};
use crate::sequence::{common_dim, Sequence};

pub const BBX_MAGIC: &[u8; 4] = b"BBX1";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BbxError {
    #[error("bad magic at byte offset {offset}")]
    BadMagic { offset: usize },
    #[error(
        "truncated payload at byte offset {offset}: need {needed} bytes, {available} available"
    )]
    Truncated {
        offset: usize,
        needed: usize,
        available: usize,
    },
    #[error("non-finite value at byte offset {offset}")]
    NonFinite { offset: usize },
    #[error("document id is not valid UTF-8 at byte offset {offset}")]
    InvalidUtf8 { offset: usize },
    #[error("zero dimension declared at byte offset {offset}")]
    ZeroDim { offset: usize },
    #[error("empty document at byte offset {offset}")]
    EmptyDocument { offset: usize },
    #[error("{extra} trailing bytes after the last document at byte offset {offset}")]
    TrailingBytes { offset: usize, extra: usize },
    #[error("mixed dimensions: {doc_id} has dim {found}, file dim is {expected}")]
    MixedDims {
        doc_id: String,
        expected: usize,
        found: usize,
    },
    #[error("value in {doc_id} is not representable as a finite 32-bit float")]
    Unrepresentable { doc_id: String },
    #[error("{what} exceeds the u32 range")]
    TooLarge { what: &'static str },
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], BbxError> {
        let available = self.bytes.len() - self.pos;
        if n > available {
            return Err(BbxError::Truncated {
                offset: self.pos,
                needed: n,
                available,
            });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> std::result::Result<usize, BbxError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }
}

/// Decodes a complete BBX image.
pub fn decode_bbx(bytes: &[u8]) -> std::result::Result<Vec<Sequence>, BbxError> {
    if bytes.len() < 4 || &bytes[..4] != BBX_MAGIC {
        return Err(BbxError::BadMagic { offset: 0 });
    }
    let mut cur = Cursor { bytes, pos: 4 };
    let dim_offset = cur.pos;
    let dim = cur.u32()?;
    if dim == 0 {
        return Err(BbxError::ZeroDim { offset: dim_offset });
    }
    let doc_count = cur.u32()?;
    let mut docs = Vec::with_capacity(doc_count.min(1 << 16));
    for _ in 0..doc_count {
        let id_len = cur.u32()?;
        let id_offset = cur.pos;
        let id = std::str::from_utf8(cur.take(id_len)?)
            .map_err(|_| BbxError::InvalidUtf8 { offset: id_offset })?
            .to_string();
        let len_offset = cur.pos;
        let rows = cur.u32()?;
        if rows == 0 {
            return Err(BbxError::EmptyDocument { offset: len_offset });
        }
        let n_values =
            rows.checked_mul(dim)
                .and_then(|v| v.checked_mul(4))
                .ok_or(BbxError::TooLarge {
                    what: "document payload",
                })?;
        let payload_offset = cur.pos;
        let payload = cur.take(n_values)?;
        let mut data = Vec::with_capacity(rows * dim);
        for (k, chunk) in payload.chunks_exact(4).enumerate() {
            let v = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
            if !v.is_finite() {
                return Err(BbxError::NonFinite {
                    offset: payload_offset + 4 * k,
                });
            }
            data.push(f64::from(v));
        }
        let seq = Sequence::from_flat(id, dim, data).expect("shape and finiteness checked above");
        docs.push(seq);
    }
    if cur.pos != bytes.len() {
        return Err(BbxError::TrailingBytes {
            offset: cur.pos,
            extra: bytes.len() - cur.pos,
        });
    }
    Ok(docs)
}

fn to_u32(v: usize, what: &'static str) -> std::result::Result<[u8; 4], BbxError> {
    u32::try_from(v)
        .map(u32::to_le_bytes)
        .map_err(|_| BbxError::TooLarge { what })
}

/// Canonical BBX encoding. All documents must share one dimension.
pub fn encode_bbx(docs: &[Sequence]) -> Result<Vec<u8>> {
    let first = docs.first().ok_or(Error::EmptyCorpus)?;
    let dim = first.dim();
    let mut out = Vec::new();
    out.extend_from_slice(BBX_MAGIC);
    out.extend_from_slice(&to_u32(dim, "dim")?);
    out.extend_from_slice(&to_u32(docs.len(), "doc_count")?);
    for doc in docs {
        if doc.dim() != dim {
            return Err(BbxError::MixedDims {
                doc_id: doc.doc_id().to_string(),
                expected: dim,
                found: doc.dim(),
            }
            .into());
        }
        let id = doc.doc_id().as_bytes();
        out.extend_from_slice(&to_u32(id.len(), "id_len")?);
        out.extend_from_slice(id);
        out.extend_from_slice(&to_u32(doc.len(), "T")?);
        for &v in doc.as_flat() {
            let narrow = v as f32;
            if !narrow.is_finite() {
                return Err(BbxError::Unrepresentable {
                    doc_id: doc.doc_id().to_string(),
                }
                .into());
            }
            out.extend_from_slice(&narrow.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn read_bbx(path: impl AsRef<Path>) -> Result<Vec<Sequence>> {
    let bytes = fs::read(path)?;
    Ok(decode_bbx(&bytes)?)
}

pub fn write_bbx(docs: &[Sequence], path: impl AsRef<Path>) -> Result<()> {
    let bytes = encode_bbx(docs)?;
    fs::write(path, bytes)?;
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct JsonlDoc {
    doc_id: String,
    dim: usize,
    rows: Vec<Vec<f64>>,
}

/// JSONL mirror: one `{"doc_id", "dim", "rows"}` object per line.
pub fn write_jsonl<W: Write>(docs: &[Sequence], mut out: W) -> Result<()> {
    common_dim(docs)?;
    for doc in docs {
        let line = JsonlDoc {
            doc_id: doc.doc_id().to_string(),
            dim: doc.dim(),
            rows: doc.to_rows(),
        };
        serde_json::to_writer(&mut out, &line)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_jsonl<R: BufRead>(input: R) -> Result<Vec<Sequence>> {
    let mut docs = Vec::new();
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let doc: JsonlDoc = serde_json::from_str(&line)?;
        let seq = Sequence::from_rows(doc.doc_id, doc.rows)?;
        if seq.dim() != doc.dim {
            return Err(Error::DimMismatch {
                expected: doc.dim,
                found: seq.dim(),
            });
        }
        docs.push(seq);
    }
    common_dim(&docs)?;
    Ok(docs)
}

/// Sequence container formats.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Bbx,
    Jsonl,
}

impl Format {
    /// `.jsonl` files are JSONL; everything else is BBX.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") => Format::Jsonl,
            _ => Format::Bbx,
        }
    }
}

impl std::str::FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bbx" => Ok(Format::Bbx),
            "jsonl" => Ok(Format::Jsonl),
            other => Err(Error::InvalidConfig(format!("unknown format {other:?}"))),
        }
    }
}

pub fn read_corpus(path: impl AsRef<Path>, format: Option<Format>) -> Result<Vec<Sequence>> {
    let path = path.as_ref();
    match format.unwrap_or_else(|| Format::from_path(path)) {
        Format::Bbx => read_bbx(path),
        Format::Jsonl => read_jsonl(BufReader::new(fs::File::open(path)?)),
    }
}

pub fn write_corpus(
    docs: &[Sequence],
    path: impl AsRef<Path>,
    format: Option<Format>,
) -> Result<()> {
    let path = path.as_ref();
    match format.unwrap_or_else(|| Format::from_path(path)) {
        Format::Bbx => write_bbx(docs, path),
        Format::Jsonl => {
            let mut buf = Vec::new();
            write_jsonl(docs, &mut buf)?;
            fs::write(path, buf)?;
            Ok(())
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct EncoderFile {
    input_dim: usize,
    hidden_dim: usize,
    output_dim: usize,
    activation: Activation,
    w1: Vec<Vec<f64>>,
    b1: Vec<f64>,
    w2: Vec<Vec<f64>>,
    b2: Vec<f64>,
}

pub fn encoder_to_json(enc: &MlpEncoder) -> Result<String> {
    let layers = enc.network().layers();
    let file = EncoderFile {
        input_dim: enc.input_dim(),
        hidden_dim: enc.hidden_dim(),
        output_dim: enc.output_dim(),
        activation: enc.activation(),
        w1: layers[0].weights_nested(),
        b1: layers[0].bias().to_vec(),
        w2: layers[1].weights_nested(),
        b2: layers[1].bias().to_vec(),
    };
    Ok(serde_json::to_string_pretty(&file)? + "\n")
}

pub fn encoder_from_json(text: &str) -> Result<MlpEncoder> {
    let f: EncoderFile = serde_json::from_str(text)?;
    let l1 = Dense::from_nested(&f.w1, &f.b1)?;
    let l2 = Dense::from_nested(&f.w2, &f.b2)?;
    let declared = [f.input_dim, f.hidden_dim, f.output_dim];
    let actual = [l1.in_dim(), l1.out_dim(), l2.out_dim()];
    if declared != actual {
        return Err(Error::InvalidConfig(format!(
            "encoder file declares dims {declared:?} but weights have {actual:?}"
        )));
    }
    MlpEncoder::from_network(Mlp::from_layers(vec![l1, l2], f.activation)?)
}

pub fn save_encoder(enc: &MlpEncoder, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encoder_to_json(enc)?)?;
    Ok(())
}

pub fn load_encoder(path: impl AsRef<Path>) -> Result<MlpEncoder> {
    encoder_from_json(&fs::read_to_string(path)?)
}

#[derive(Debug, Serialize, Deserialize)]
struct Mlp3File {
    kind: String,
    input_dim: usize,
    hidden_dims: Vec<usize>,
    output_dim: usize,
    activation: Activation,
    input_mean: Vec<f64>,
    input_scale: Vec<f64>,
    w1: Vec<Vec<f64>>,
    b1: Vec<f64>,
    w2: Vec<Vec<f64>>,
    b2: Vec<f64>,
    w3: Vec<Vec<f64>>,
    b3: Vec<f64>,
}

const MLP3_KIND: &str = "mlp3";

pub fn mlp3_to_json(model: &Mlp3) -> Result<String> {
    let layers = model.network().layers();
    let file = Mlp3File {
        kind: MLP3_KIND.into(),
        input_dim: model.network().input_dim(),
        hidden_dims: vec![layers[0].out_dim(), layers[1].out_dim()],
        output_dim: model.network().output_dim(),
        activation: model.network().activation(),
        input_mean: model.input_mean().to_vec(),
        input_scale: model.input_scale().to_vec(),
        w1: layers[0].weights_nested(),
        b1: layers[0].bias().to_vec(),
        w2: layers[1].weights_nested(),
        b2: layers[1].bias().to_vec(),
        w3: layers[2].weights_nested(),
        b3: layers[2].bias().to_vec(),
    };
    Ok(serde_json::to_string_pretty(&file)? + "\n")
}

pub fn mlp3_from_json(text: &str) -> Result<Mlp3> {
    let f: Mlp3File = serde_json::from_str(text)?;
    if f.kind != MLP3_KIND {
        return Err(Error::InvalidConfig(format!(
            "expected a {MLP3_KIND} model file, got kind {:?}",
            f.kind
        )));
    }
    let layers = vec![
        Dense::from_nested(&f.w1, &f.b1)?,
        Dense::from_nested(&f.w2, &f.b2)?,
        Dense::from_nested(&f.w3, &f.b3)?,
    ];
    let net = Mlp::from_layers(layers, f.activation)?;
    let mut declared = vec![f.input_dim];
    declared.extend(&f.hidden_dims);
    declared.push(f.output_dim);
    if declared != net.dims() {
        return Err(Error::InvalidConfig(format!(
            "model file declares dims {declared:?} but weights have {:?}",
            net.dims()
        )));
    }
    Mlp3::from_parts(net, f.input_mean, f.input_scale)
}

pub fn save_mlp3(model: &Mlp3, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, mlp3_to_json(model)?)?;
    Ok(())
}

pub fn load_mlp3(path: impl AsRef<Path>) -> Result<Mlp3> {
    mlp3_from_json(&fs::read_to_string(path)?)
}

/// Pretty JSON with a trailing newline; byte-stable for identical values.
pub fn write_json<T: Serialize>(value: &T, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}
