//! A small two-path action-value network with hand-written backprop.
//!
//! The spectrum runs through 1-D convolutions, the tuner scalars through
//! dense layers, and the two activation sets are concatenated into a dense
//! head that emits one value per action. Parameters live in one flat buffer
//! laid out layer by layer (weights then bias), which is also the checkpoint
//! order.

mod adam;
mod checkpoint;
mod gradcheck;
mod network;

use std::fmt::Debug;
use std::ops::{AddAssign, MulAssign, SubAssign};

use thiserror::Error;

pub use adam::{adam_step, adam_update, AdamState};
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CheckpointError, CKPT_MAGIC};
pub use gradcheck::{
    check_gradients, conv_small, conv_strided, dense_toy, gradcheck, standard_cases, GradcheckReport, LayerCheck,
};
pub use network::{argmax, backward, backward_into, forward, init_network, init_random, ForwardCache, NetworkParams};

pub const N_ACTIONS: usize = 7;
pub const N_SCALARS: usize = 2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("invalid network spec: {0}")]
    Config(String),
    #[error("size mismatch for {what}: expected {expected}, got {got}")]
    Size { what: &'static str, expected: usize, got: usize },
    #[error("{0}")]
    Usage(String),
    #[error("non-finite value in {0}")]
    Numeric(&'static str),
}

/// Scalar type the engine computes in.
pub trait Real:
    num_traits::Float + AddAssign + SubAssign + MulAssign + Default + Debug + Send + Sync + 'static
{
    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Real for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ConvSpec {
    pub out_channels: usize,
    pub width: usize,
    pub stride: usize,
    pub relu: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct DenseSpec {
    pub out_units: usize,
    pub relu: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Path {
    Spectrum,
    Scalar,
    Head,
}

impl Path {
    pub fn code(self) -> usize {
        match self {
            Path::Spectrum => 0,
            Path::Scalar => 1,
            Path::Head => 2,
        }
    }

    pub fn from_code(c: usize) -> Option<Path> {
        match c {
            0 => Some(Path::Spectrum),
            1 => Some(Path::Scalar),
            2 => Some(Path::Head),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct NetworkSpec {
    pub spectrum_path: Vec<ConvSpec>,
    pub scalar_path: Vec<DenseSpec>,
    pub head: Vec<DenseSpec>,
    pub n_bins: usize,
    pub n_scalars: usize,
}

impl NetworkSpec {
    /// Conv(16,8,2) → Conv(16,4,2) on the spectrum, Dense(32) on the
    /// scalars, then Dense(64) → Dense(7).
    pub fn default_for(n_bins: usize) -> Self {
        Self {
            spectrum_path: vec![
                ConvSpec { out_channels: 16, width: 8, stride: 2, relu: true },
                ConvSpec { out_channels: 16, width: 4, stride: 2, relu: true },
            ],
            scalar_path: vec![DenseSpec { out_units: 32, relu: true }],
            head: vec![
                DenseSpec { out_units: 64, relu: true },
                DenseSpec { out_units: N_ACTIONS, relu: false },
            ],
            n_bins,
            n_scalars: N_SCALARS,
        }
    }

    pub fn layout(&self) -> Result<Layout, NnError> {
        Layout::build(self)
    }
}

impl Default for NetworkSpec {
    fn default() -> Self {
        Self::default_for(64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Conv { in_channels: usize, out_channels: usize, width: usize, stride: usize, in_len: usize, out_len: usize },
    Dense { in_units: usize, out_units: usize },
}

/// Resolved geometry of one layer and where its parameters sit in the flat buffer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerGeom {
    pub path: Path,
    pub kind: LayerKind,
    pub relu: bool,
    pub w_offset: usize,
    pub w_len: usize,
    pub b_offset: usize,
    pub b_len: usize,
}

impl LayerGeom {
    pub fn input_len(&self) -> usize {
        match self.kind {
            LayerKind::Conv { in_channels, in_len, .. } => in_channels * in_len,
            LayerKind::Dense { in_units, .. } => in_units,
        }
    }

    pub fn output_len(&self) -> usize {
        match self.kind {
            LayerKind::Conv { out_channels, out_len, .. } => out_channels * out_len,
            LayerKind::Dense { out_units, .. } => out_units,
        }
    }

    pub fn fans(&self) -> (usize, usize) {
        match self.kind {
            LayerKind::Conv { in_channels, out_channels, width, .. } => (in_channels * width, out_channels * width),
            LayerKind::Dense { in_units, out_units } => (in_units, out_units),
        }
    }

    pub fn n_params(&self) -> usize {
        self.w_len + self.b_len
    }

    pub fn name(&self, index: usize) -> String {
        let path = match self.path {
            Path::Spectrum => "spectrum",
            Path::Scalar => "scalar",
            Path::Head => "head",
        };
        match self.kind {
            LayerKind::Conv { out_channels, width, stride, .. } => {
                format!("{index}:{path}:conv{out_channels}x{width}/{stride}")
            }
            LayerKind::Dense { in_units, out_units } => format!("{index}:{path}:dense{in_units}->{out_units}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub layers: Vec<LayerGeom>,
    pub n_spectrum: usize,
    pub n_scalar: usize,
    pub spectrum_out: usize,
    pub scalar_out: usize,
    pub n_params: usize,
}

impl Layout {
    fn build(spec: &NetworkSpec) -> Result<Self, NnError> {
        if spec.n_bins == 0 {
            return Err(NnError::Config("n_bins must be positive".into()));
        }
        if spec.n_scalars != N_SCALARS {
            return Err(NnError::Config(format!("n_scalars must be {N_SCALARS}, got {}", spec.n_scalars)));
        }
        let mut layers = Vec::new();
        let mut offset = 0usize;
        let mut push = |path, kind, relu, w_len: usize, b_len: usize, layers: &mut Vec<LayerGeom>| {
            layers.push(LayerGeom { path, kind, relu, w_offset: offset, w_len, b_offset: offset + w_len, b_len });
            offset += w_len + b_len;
        };

        let (mut channels, mut len) = (1usize, spec.n_bins);
        for (i, c) in spec.spectrum_path.iter().enumerate() {
            if c.out_channels == 0 || c.width == 0 || c.stride == 0 {
                return Err(NnError::Config(format!("conv layer {i} has a zero dimension")));
            }
            if c.width > len {
                return Err(NnError::Config(format!("conv layer {i}: width {} exceeds input length {len}", c.width)));
            }
            let out_len = (len - c.width) / c.stride + 1;
            let kind = LayerKind::Conv {
                in_channels: channels,
                out_channels: c.out_channels,
                width: c.width,
                stride: c.stride,
                in_len: len,
                out_len,
            };
            push(Path::Spectrum, kind, c.relu, c.out_channels * channels * c.width, c.out_channels, &mut layers);
            channels = c.out_channels;
            len = out_len;
        }
        let spectrum_out = channels * len;

        let mut units = spec.n_scalars;
        for (i, d) in spec.scalar_path.iter().enumerate() {
            if d.out_units == 0 {
                return Err(NnError::Config(format!("scalar layer {i} has zero units")));
            }
            let kind = LayerKind::Dense { in_units: units, out_units: d.out_units };
            push(Path::Scalar, kind, d.relu, d.out_units * units, d.out_units, &mut layers);
            units = d.out_units;
        }
        let scalar_out = units;

        match spec.head.last() {
            None => return Err(NnError::Config("head must contain at least one layer".into())),
            Some(last) if last.out_units != N_ACTIONS || last.relu => {
                return Err(NnError::Config(format!("head must end in a linear layer of {N_ACTIONS} outputs")))
            }
            _ => {}
        }
        let mut units = spectrum_out + scalar_out;
        for (i, d) in spec.head.iter().enumerate() {
            if d.out_units == 0 {
                return Err(NnError::Config(format!("head layer {i} has zero units")));
            }
            let kind = LayerKind::Dense { in_units: units, out_units: d.out_units };
            push(Path::Head, kind, d.relu, d.out_units * units, d.out_units, &mut layers);
            units = d.out_units;
        }

        Ok(Layout {
            layers,
            n_spectrum: spec.spectrum_path.len(),
            n_scalar: spec.scalar_path.len(),
            spectrum_out,
            scalar_out,
            n_params: offset,
        })
    }
}
