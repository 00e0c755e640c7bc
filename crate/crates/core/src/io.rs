//! On-disk formats: checkpoints for the unfolded network and the gate, and
//! the binary container for simulated frames.
//!
//! Checkpoints are a TOML header, a `--- payload ---` line, then
//! little-endian `f64` values. Complex matrices are stored row-major with
//! real and imaginary parts interleaved.

use std::fs;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::CMat;
use crate::moe::{GateParams, GROUPS, HIDDEN1, HIDDEN2};
use crate::unfolding::{LossKind, UnfoldedLayer, UnfoldedParams};

const SEPARATOR: &[u8] = b"\n--- payload ---\n";
pub const CHECKPOINT_VERSION: u32 = 1;

fn format_err(path: &Path, detail: impl Into<String>) -> Error {
    Error::Format { path: path.to_path_buf(), detail: detail.into() }
}

fn split_container<'a>(path: &Path, bytes: &'a [u8]) -> Result<(&'a str, &'a [u8])> {
    let pos = bytes
        .windows(SEPARATOR.len())
        .position(|w| w == SEPARATOR)
        .ok_or_else(|| format_err(path, "payload separator not found"))?;
    let header = std::str::from_utf8(&bytes[..pos]).map_err(|_| format_err(path, "header is not UTF-8"))?;
    Ok((header, &bytes[pos + SEPARATOR.len()..]))
}

fn decode_f64s(path: &Path, payload: &[u8], expected: usize) -> Result<Vec<f64>> {
    if payload.len() != 8 * expected {
        return Err(format_err(path, format!("payload holds {} bytes, expected {}", payload.len(), 8 * expected)));
    }
    Ok(payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk"))).collect())
}

fn push_f64(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn push_complex_row_major(out: &mut Vec<u8>, m: &CMat) {
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            push_f64(out, m[(i, j)].re);
            push_f64(out, m[(i, j)].im);
        }
    }
}

fn read_complex_row_major(values: &[f64], rows: usize, cols: usize) -> CMat {
    CMat::from_fn(rows, cols, |i, j| {
        let at = 2 * (i * cols + j);
        Complex64::new(values[at], values[at + 1])
    })
}

fn write_container(path: &Path, header: &str, payload: &[u8]) -> Result<()> {
    let mut bytes = Vec::with_capacity(header.len() + SEPARATOR.len() + payload.len());
    bytes.extend_from_slice(header.trim_end().as_bytes());
    bytes.extend_from_slice(SEPARATOR);
    bytes.extend_from_slice(payload);
    fs::write(path, bytes)?;
    Ok(())
}

fn read_file(path: &Path, what: &str) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingCheckpoint(format!("{what} {} does not exist", path.display())),
        _ => Error::Io(e),
    })
}

/// Header of an unfolded-network checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UnfoldedHeader {
    pub format: String,
    pub version: u32,
    pub depth: usize,
    pub signature_len: usize,
    pub loss: String,
    pub seed: u64,
    /// Detector id the network was trained for, e.g. `unfold:moe`.
    pub detector: String,
}

pub const UNFOLDED_FORMAT: &str = "irsad-unfolded";

/// Payload per layer: `A` then `B` (each `L x L`, row-major, interleaved),
/// then the log-step `nu`.
pub fn save_unfolded(path: &Path, params: &UnfoldedParams, loss: LossKind, seed: u64, detector: &str) -> Result<()> {
    params.validate()?;
    let header = UnfoldedHeader {
        format: UNFOLDED_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        depth: params.depth(),
        signature_len: params.signature_len(),
        loss: loss.name().into(),
        seed,
        detector: detector.into(),
    };
    let mut payload = Vec::new();
    for layer in &params.layers {
        push_complex_row_major(&mut payload, &layer.a_mat);
        push_complex_row_major(&mut payload, &layer.b_mat);
        push_f64(&mut payload, layer.nu);
    }
    let text = toml::to_string(&header).expect("header serializes");
    write_container(path, &text, &payload)
}

pub fn load_unfolded(path: &Path) -> Result<(UnfoldedParams, UnfoldedHeader)> {
    let bytes = read_file(path, "unfolded checkpoint")?;
    let (text, payload) = split_container(path, &bytes)?;
    let header: UnfoldedHeader = toml::from_str(text).map_err(|e| format_err(path, e.to_string()))?;
    if header.format != UNFOLDED_FORMAT {
        return Err(format_err(path, format!("format '{}' is not {UNFOLDED_FORMAT}", header.format)));
    }
    if header.version != CHECKPOINT_VERSION {
        return Err(format_err(path, format!("unsupported version {}", header.version)));
    }
    if LossKind::parse(&header.loss).is_none() {
        return Err(format_err(path, format!("unknown loss '{}'", header.loss)));
    }
    let (l, depth) = (header.signature_len, header.depth);
    if l == 0 || depth == 0 {
        return Err(format_err(path, "depth and signature length must be positive"));
    }
    let per = 4 * l * l + 1;
    let values = decode_f64s(path, payload, depth * per)?;
    let layers = values
        .chunks_exact(per)
        .map(|c| UnfoldedLayer {
            a_mat: read_complex_row_major(&c[..2 * l * l], l, l),
            b_mat: read_complex_row_major(&c[2 * l * l..4 * l * l], l, l),
            nu: c[4 * l * l],
        })
        .collect();
    let params = UnfoldedParams::new(layers).map_err(|e| format_err(path, e.to_string()))?;
    Ok((params, header))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GateHeader {
    pub format: String,
    pub version: u32,
    pub signature_len: usize,
    pub antennas: usize,
    /// Output widths of the three layers.
    pub layers: [usize; 3],
    pub input_len: usize,
    pub noise_power: f64,
    /// Factor applied to the stacked real/imaginary input.
    pub input_scale: f64,
    pub seed: u64,
}

pub const GATE_FORMAT: &str = "irsad-gate";

/// Payload: `W1, b1, W2, b2, W3, b3`, matrices row-major.
pub fn save_gate(path: &Path, gate: &GateParams, seed: u64) -> Result<()> {
    gate.validate()?;
    let header = GateHeader {
        format: GATE_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        signature_len: gate.signature_len,
        antennas: gate.antennas,
        layers: [HIDDEN1, HIDDEN2, GROUPS],
        input_len: gate.input_len(),
        noise_power: gate.noise_power,
        input_scale: gate.input_scale(),
        seed,
    };
    let mut payload = Vec::with_capacity(8 * gate.num_params());
    for v in gate.to_flat() {
        push_f64(&mut payload, v);
    }
    let text = toml::to_string(&header).expect("header serializes");
    write_container(path, &text, &payload)
}

pub fn load_gate(path: &Path) -> Result<(GateParams, GateHeader)> {
    let bytes = read_file(path, "gate checkpoint")?;
    let (text, payload) = split_container(path, &bytes)?;
    let header: GateHeader = toml::from_str(text).map_err(|e| format_err(path, e.to_string()))?;
    if header.format != GATE_FORMAT {
        return Err(format_err(path, format!("format '{}' is not {GATE_FORMAT}", header.format)));
    }
    if header.version != CHECKPOINT_VERSION {
        return Err(format_err(path, format!("unsupported version {}", header.version)));
    }
    if header.layers != [HIDDEN1, HIDDEN2, GROUPS] || header.input_len != 2 * header.signature_len * header.antennas {
        return Err(format_err(path, format!("layer sizes {:?} / input {} do not match this build", header.layers, header.input_len)));
    }
    if !(header.noise_power > 0.0) {
        return Err(format_err(path, "noise power must be positive"));
    }
    let mut gate = GateParams::zeros(header.signature_len, header.antennas, header.noise_power);
    let values = decode_f64s(path, payload, gate.num_params())?;
    gate.set_flat(&values);
    gate.validate().map_err(|e| format_err(path, e.to_string()))?;
    Ok((gate, header))
}

/// Leading bytes of a frame container.
pub const BATCH_MAGIC: u64 = u64::from_le_bytes(*b"IRSADFRM");
/// Element type code: complex `f64` stored as interleaved pairs.
pub const DTYPE_C64: u64 = 1;
/// Flag: each frame is followed by its `K` true activities as real `f64`.
pub const FLAG_TRUTH: u64 = 1;

/// Signatures and received frames of one deployment.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameBatch {
    pub seed: u64,
    /// `L x K`.
    pub s: CMat,
    /// Each `L x M`.
    pub frames: Vec<CMat>,
    /// Per-frame activities, same order as `frames`, if present.
    pub truth: Option<Vec<Vec<f64>>>,
}

impl FrameBatch {
    fn dims(&self) -> (usize, usize, usize) {
        let m = self.frames.first().map_or(0, |y| y.ncols());
        (self.s.nrows(), m, self.s.ncols())
    }
}

/// Header `[magic, L, M, K, seed, dtype, flags, reserved]` as `u64` LE, then
/// `S` and each frame row-major, complex interleaved.
pub fn write_batch(path: &Path, batch: &FrameBatch) -> Result<()> {
    let (l, m, k) = batch.dims();
    if batch.frames.iter().any(|y| y.shape() != (l, m)) {
        return Err(Error::Dimension("frames must all be L x M".into()));
    }
    if let Some(t) = &batch.truth {
        if t.len() != batch.frames.len() || t.iter().any(|a| a.len() != k) {
            return Err(Error::Dimension("truth must hold K values per frame".into()));
        }
    }
    let flags = if batch.truth.is_some() { FLAG_TRUTH } else { 0 };
    let mut out = Vec::new();
    for v in [BATCH_MAGIC, l as u64, m as u64, k as u64, batch.seed, DTYPE_C64, flags, 0] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    push_complex_row_major(&mut out, &batch.s);
    for (i, y) in batch.frames.iter().enumerate() {
        push_complex_row_major(&mut out, y);
        if let Some(t) = &batch.truth {
            for &a in &t[i] {
                push_f64(&mut out, a);
            }
        }
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_batch(path: &Path) -> Result<FrameBatch> {
    let bytes = fs::read(path)?;
    let err = |d: &str| format_err(path, d.to_string());
    if bytes.len() < 64 {
        return Err(err("shorter than the 64-byte header"));
    }
    let field = |i: usize| u64::from_le_bytes(bytes[8 * i..8 * i + 8].try_into().expect("8 bytes"));
    if field(0) != BATCH_MAGIC {
        return Err(err("bad magic"));
    }
    if field(5) != DTYPE_C64 {
        return Err(err("unsupported element type"));
    }
    let (l, m, k, seed, flags) = (field(1) as usize, field(2) as usize, field(3) as usize, field(4), field(6));
    let truth = flags & FLAG_TRUTH != 0;
    let body = &bytes[64..];
    if body.len() % 8 != 0 {
        return Err(err("payload is not a whole number of f64 values"));
    }
    let values: Vec<f64> = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    let s_len = 2 * l * k;
    let frame_len = 2 * l * m + if truth { k } else { 0 };
    if values.len() < s_len || frame_len == 0 || (values.len() - s_len) % frame_len != 0 {
        return Err(err("payload size does not match the header dimensions"));
    }
    let s = read_complex_row_major(&values[..s_len], l, k);
    let mut frames = Vec::new();
    let mut truths = Vec::new();
    for chunk in values[s_len..].chunks_exact(frame_len) {
        frames.push(read_complex_row_major(&chunk[..2 * l * m], l, m));
        if truth {
            truths.push(chunk[2 * l * m..].to_vec());
        }
    }
    Ok(FrameBatch { seed, s, frames, truth: truth.then_some(truths) })
}
