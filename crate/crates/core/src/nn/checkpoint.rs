//! Binary checkpoint format.
//!
//! ```text
//! SPECSEEK-CKPT v1\n
//! <layers> <n_bins> <n_scalars> (<path> <out> <in> <width> <stride> <relu>)*\n
//! f32 LE parameter values, layer by layer, weights then bias
//! [ADAM\n  f32 LE m values, f32 LE v values, u64 LE step counter]
//! ```
//!
//! `path` is 0 for the spectrum path, 1 for the scalar path, 2 for the head.
//! Dense layers record width and stride as 1.

use std::fs;
use std::io::{self, Write};
use std::path::{Path as FsPath, PathBuf};

use thiserror::Error;

use super::{AdamState, ConvSpec, DenseSpec, LayerKind, NetworkParams, NetworkSpec, Path};

pub const CKPT_MAGIC: &[u8] = b"SPECSEEK-CKPT v1\n";
const ADAM_MARKER: &[u8] = b"ADAM\n";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("bad magic at offset {offset}")]
    BadMagic { offset: usize },
    #[error("malformed header at offset {offset}: {reason}")]
    Header { offset: usize, reason: String },
    #[error("shape mismatch at offset {offset}: {reason}")]
    Shape { offset: usize, reason: String },
    #[error("truncated checkpoint at offset {offset}: need {needed} more bytes, {available} available")]
    Truncated { offset: usize, needed: usize, available: usize },
}

fn header_line(spec: &NetworkSpec) -> String {
    let layout = spec.layout().expect("params always carry a valid spec");
    let mut parts = vec![layout.layers.len().to_string(), spec.n_bins.to_string(), spec.n_scalars.to_string()];
    for g in &layout.layers {
        let (out, inp, width, stride) = match g.kind {
            LayerKind::Conv { in_channels, out_channels, width, stride, .. } => (out_channels, in_channels, width, stride),
            LayerKind::Dense { in_units, out_units } => (out_units, in_units, 1, 1),
        };
        for v in [g.path.code(), out, inp, width, stride, g.relu as usize] {
            parts.push(v.to_string());
        }
    }
    parts.join(" ") + "\n"
}

pub fn write_checkpoint<W: Write>(
    mut w: W,
    params: &NetworkParams<f32>,
    adam: Option<&AdamState<f32>>,
) -> io::Result<()> {
    w.write_all(CKPT_MAGIC)?;
    w.write_all(header_line(params.spec()).as_bytes())?;
    let mut buf = Vec::with_capacity(params.len() * 4);
    for v in &params.values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    if let Some(st) = adam {
        if st.m.len() != params.len() || st.v.len() != params.len() {
            return Err(io::Error::new(io::ErrorKind::InvalidInput, "adam state does not match parameters"));
        }
        w.write_all(ADAM_MARKER)?;
        buf.clear();
        for v in st.m.iter().chain(&st.v) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf.extend_from_slice(&st.t.to_le_bytes());
        w.write_all(&buf)?;
    }
    w.flush()
}

pub fn save_checkpoint(
    params: &NetworkParams<f32>,
    adam: Option<&AdamState<f32>>,
    path: impl AsRef<FsPath>,
) -> Result<(), CheckpointError> {
    let path = path.as_ref();
    let io_err = |source| CheckpointError::Io { path: path.to_path_buf(), source };
    let file = fs::File::create(path).map_err(io_err)?;
    write_checkpoint(io::BufWriter::new(file), params, adam).map_err(io_err)
}

pub fn load_checkpoint(
    path: impl AsRef<FsPath>,
) -> Result<(NetworkParams<f32>, Option<AdamState<f32>>), CheckpointError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| CheckpointError::Io { path: path.to_path_buf(), source })?;
    read_checkpoint(&bytes)
}

fn parse_spec(line: &str, offset: usize) -> Result<NetworkSpec, CheckpointError> {
    let header = |reason: String| CheckpointError::Header { offset, reason };
    let nums = line
        .split_ascii_whitespace()
        .map(|t| t.parse::<usize>().map_err(|_| header(format!("'{t}' is not an unsigned integer"))))
        .collect::<Result<Vec<_>, _>>()?;
    if nums.len() < 3 {
        return Err(header("expected layer count, n_bins and n_scalars".into()));
    }
    let (n_layers, n_bins, n_scalars) = (nums[0], nums[1], nums[2]);
    if nums.len() != 3 + 6 * n_layers {
        return Err(CheckpointError::Shape {
            offset,
            reason: format!("{n_layers} layers declared but {} shape values present", nums.len() - 3),
        });
    }
    let mut spec = NetworkSpec { spectrum_path: vec![], scalar_path: vec![], head: vec![], n_bins, n_scalars };
    let mut declared_inputs = Vec::with_capacity(n_layers);
    let mut last_path = 0;
    for (i, t) in nums[3..].chunks_exact(6).enumerate() {
        let path = Path::from_code(t[0]).ok_or_else(|| header(format!("layer {i}: unknown path code {}", t[0])))?;
        if t[0] < last_path {
            return Err(header(format!("layer {i}: paths out of order")));
        }
        last_path = t[0];
        let relu = match t[5] {
            0 => false,
            1 => true,
            other => return Err(header(format!("layer {i}: relu flag {other}"))),
        };
        match path {
            Path::Spectrum => spec.spectrum_path.push(ConvSpec { out_channels: t[1], width: t[3], stride: t[4], relu }),
            Path::Scalar => spec.scalar_path.push(DenseSpec { out_units: t[1], relu }),
            Path::Head => spec.head.push(DenseSpec { out_units: t[1], relu }),
        }
        declared_inputs.push(t[2]);
    }
    let layout = spec.layout().map_err(|e| CheckpointError::Shape { offset, reason: e.to_string() })?;
    for (i, (g, &declared)) in layout.layers.iter().zip(&declared_inputs).enumerate() {
        let actual = match g.kind {
            LayerKind::Conv { in_channels, .. } => in_channels,
            LayerKind::Dense { in_units, .. } => in_units,
        };
        if actual != declared {
            return Err(CheckpointError::Shape {
                offset,
                reason: format!("layer {i} declares {declared} inputs but the preceding layers produce {actual}"),
            });
        }
    }
    Ok(spec)
}

fn read_f32s(bytes: &[u8], n: usize) -> Vec<f32> {
    bytes[..n * 4].chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect()
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<(NetworkParams<f32>, Option<AdamState<f32>>), CheckpointError> {
    if !bytes.starts_with(CKPT_MAGIC) {
        return Err(CheckpointError::BadMagic { offset: 0 });
    }
    let mut pos = CKPT_MAGIC.len();
    let nl = bytes[pos..].iter().position(|&b| b == b'\n').ok_or(CheckpointError::Header {
        offset: pos,
        reason: "shape line is not newline-terminated".into(),
    })?;
    let line = std::str::from_utf8(&bytes[pos..pos + nl])
        .map_err(|_| CheckpointError::Header { offset: pos, reason: "shape line is not ASCII".into() })?;
    let spec = parse_spec(line, pos)?;
    pos += nl + 1;

    let n = spec.layout().map(|l| l.n_params).unwrap_or(0);
    let rest = bytes.len() - pos;
    if rest < n * 4 {
        return Err(CheckpointError::Shape {
            offset: pos,
            reason: format!("header declares {n} parameters but only {} bytes of data follow", rest),
        });
    }
    let values = read_f32s(&bytes[pos..], n);
    pos += n * 4;
    let params = NetworkParams::from_values(&spec, values)
        .map_err(|e| CheckpointError::Shape { offset: pos, reason: e.to_string() })?;
    if params.values.iter().any(|v| !v.is_finite()) {
        return Err(CheckpointError::Header { offset: pos, reason: "non-finite parameter value".into() });
    }
    if pos == bytes.len() {
        return Ok((params, None));
    }
    if !bytes[pos..].starts_with(ADAM_MARKER) {
        return Err(CheckpointError::Shape {
            offset: pos,
            reason: format!("{} unexpected bytes after the declared parameters", bytes.len() - pos),
        });
    }
    pos += ADAM_MARKER.len();
    let needed = n * 8 + 8;
    let available = bytes.len() - pos;
    if available < needed {
        return Err(CheckpointError::Truncated { offset: pos, needed, available });
    }
    if available > needed {
        return Err(CheckpointError::Shape {
            offset: pos + needed,
            reason: format!("{} trailing bytes after the optimizer block", available - needed),
        });
    }
    let m = read_f32s(&bytes[pos..], n);
    let v = read_f32s(&bytes[pos + n * 4..], n);
    let tb = &bytes[pos + n * 8..pos + n * 8 + 8];
    let t = u64::from_le_bytes(tb.try_into().expect("eight bytes"));
    let mut adam = AdamState::new(n, AdamState::<f32>::DEFAULT_LR);
    adam.m = m;
    adam.v = v;
    adam.t = t;
    Ok((params, Some(adam)))
}
