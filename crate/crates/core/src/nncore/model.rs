use std::io::{Read, Write};
use std::ops::Range;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Scalar;
use crate::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"DFMD";
pub const CHECKPOINT_VERSION: u16 = 1;

const INIT_RANGE: f64 = 0.05;

/// Network topology: stacked LSTM layers followed by a linear output layer.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub input_dim: usize,
    /// Hidden units per LSTM layer (per direction when bidirectional).
    pub layer_sizes: Vec<usize>,
    pub num_outputs: usize,
    #[serde(default)]
    pub bidirectional: bool,
    #[serde(default)]
    pub lookahead_frames: usize,
}

impl ModelSpec {
    /// Production student topology: 192-dim stacked input, five 768-unit
    /// unidirectional layers, 3,183 senones, three frames of look-ahead.
    pub fn reference_student() -> Self {
        ModelSpec {
            input_dim: 192,
            layer_sizes: vec![768; 5],
            num_outputs: 3183,
            bidirectional: false,
            lookahead_frames: 3,
        }
    }

    /// Production teacher topology: five bidirectional 768-unit layers.
    pub fn reference_teacher() -> Self {
        ModelSpec {
            bidirectional: true,
            lookahead_frames: 0,
            ..Self::reference_student()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::invalid("input_dim must be positive"));
        }
        if self.num_outputs == 0 {
            return Err(Error::invalid("num_outputs must be positive"));
        }
        if self.layer_sizes.contains(&0) {
            return Err(Error::invalid("LSTM layers need at least one unit"));
        }
        Ok(())
    }

    pub fn directions(&self) -> usize {
        if self.bidirectional {
            2
        } else {
            1
        }
    }

    /// Width of the representation fed to the output layer.
    pub fn top_width(&self) -> usize {
        self.layer_sizes
            .last()
            .map_or(self.input_dim, |&h| h * self.directions())
    }

    pub fn num_params(&self) -> usize {
        Geometry::new(self).total
    }
}

/// Offsets of one LSTM direction's weights inside the flat vector.
/// Gate rows are ordered input, forget, cell, output.
#[derive(Clone, Copy, Debug)]
pub(crate) struct DirSlots {
    pub input: usize,
    pub hidden: usize,
    pub w_ih: usize,
    pub w_hh: usize,
    pub bias: usize,
}

impl DirSlots {
    pub fn w_ih_range(&self) -> Range<usize> {
        self.w_ih..self.w_ih + 4 * self.hidden * self.input
    }

    pub fn w_hh_range(&self) -> Range<usize> {
        self.w_hh..self.w_hh + 4 * self.hidden * self.hidden
    }

    pub fn bias_range(&self) -> Range<usize> {
        self.bias..self.bias + 4 * self.hidden
    }
}

#[derive(Clone, Debug)]
pub(crate) struct Geometry {
    /// `layers[l][d]` for direction d (0 forward, 1 backward).
    pub layers: Vec<Vec<DirSlots>>,
    pub out_w: usize,
    pub out_b: usize,
    pub top_width: usize,
    pub outputs: usize,
    pub total: usize,
}

impl Geometry {
    pub fn new(spec: &ModelSpec) -> Self {
        let dirs = spec.directions();
        let mut offset = 0;
        let mut input = spec.input_dim;
        let mut layers = Vec::with_capacity(spec.layer_sizes.len());
        for &hidden in &spec.layer_sizes {
            let mut slots = Vec::with_capacity(dirs);
            for _ in 0..dirs {
                let w_ih = offset;
                let w_hh = w_ih + 4 * hidden * input;
                let bias = w_hh + 4 * hidden * hidden;
                offset = bias + 4 * hidden;
                slots.push(DirSlots {
                    input,
                    hidden,
                    w_ih,
                    w_hh,
                    bias,
                });
            }
            layers.push(slots);
            input = hidden * dirs;
        }
        let out_w = offset;
        let out_b = out_w + spec.num_outputs * input;
        Geometry {
            layers,
            out_w,
            out_b,
            top_width: input,
            outputs: spec.num_outputs,
            total: out_b + spec.num_outputs,
        }
    }
}

/// A named view into the flat parameter vector.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamSlice {
    pub name: String,
    pub range: Range<usize>,
}

/// Flat parameter vector for a [`ModelSpec`], with named per-layer slices.
#[derive(Clone, Debug)]
pub struct ModelParams<S> {
    spec: ModelSpec,
    params: Vec<S>,
    geometry: Geometry,
}

impl<S: Scalar> PartialEq for ModelParams<S> {
    fn eq(&self, other: &Self) -> bool {
        self.spec == other.spec && self.params == other.params
    }
}

impl<S: Scalar> ModelParams<S> {
    pub fn zeros(spec: ModelSpec) -> Result<Self> {
        spec.validate()?;
        let geometry = Geometry::new(&spec);
        Ok(ModelParams {
            params: vec![S::zero(); geometry.total],
            spec,
            geometry,
        })
    }

    /// Seeded uniform initialization in [-0.05, 0.05].
    pub fn init(spec: ModelSpec, seed: u64) -> Result<Self> {
        let mut model = Self::zeros(spec)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for p in &mut model.params {
            *p = S::of(rng.random_range(-INIT_RANGE..=INIT_RANGE));
        }
        Ok(model)
    }

    pub fn from_vec(spec: ModelSpec, params: Vec<S>) -> Result<Self> {
        spec.validate()?;
        let geometry = Geometry::new(&spec);
        if params.len() != geometry.total {
            return Err(Error::shape(format!(
                "model needs {} parameters, got {}",
                geometry.total,
                params.len()
            )));
        }
        Ok(ModelParams {
            spec,
            params,
            geometry,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn params(&self) -> &[S] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [S] {
        &mut self.params
    }

    pub fn into_params(self) -> Vec<S> {
        self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub(crate) fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    /// Named slices in storage order; their lengths sum to `num_params()`.
    pub fn slices(&self) -> Vec<ParamSlice> {
        let mut out = Vec::new();
        for (l, dirs) in self.geometry.layers.iter().enumerate() {
            for (d, slots) in dirs.iter().enumerate() {
                let dir = if d == 0 { "fwd" } else { "bwd" };
                out.push(ParamSlice {
                    name: format!("lstm{l}.{dir}.w_ih"),
                    range: slots.w_ih_range(),
                });
                out.push(ParamSlice {
                    name: format!("lstm{l}.{dir}.w_hh"),
                    range: slots.w_hh_range(),
                });
                out.push(ParamSlice {
                    name: format!("lstm{l}.{dir}.bias"),
                    range: slots.bias_range(),
                });
            }
        }
        out.push(ParamSlice {
            name: "out.weight".into(),
            range: self.geometry.out_w..self.geometry.out_b,
        });
        out.push(ParamSlice {
            name: "out.bias".into(),
            range: self.geometry.out_b..self.geometry.total,
        });
        out
    }

    pub fn slice(&self, name: &str) -> Option<&[S]> {
        let range = self.slices().into_iter().find(|s| s.name == name)?.range;
        Some(&self.params[range])
    }

    pub fn slice_mut(&mut self, name: &str) -> Option<&mut [S]> {
        let range = self.slices().into_iter().find(|s| s.name == name)?.range;
        Some(&mut self.params[range])
    }

    pub fn cast<T: Scalar>(&self) -> ModelParams<T> {
        ModelParams {
            spec: self.spec.clone(),
            params: self.params.iter().map(|v| T::of(v.as_f64())).collect(),
            geometry: self.geometry.clone(),
        }
    }
}

impl ModelParams<f32> {
    /// Little-endian checkpoint: magic, version, topology, raw f32 values.
    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> Result<()> {
        let spec = &self.spec;
        let mut buf = Vec::with_capacity(32 + 4 * self.params.len());
        buf.extend_from_slice(CHECKPOINT_MAGIC);
        buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        buf.extend_from_slice(&to_u32(spec.input_dim)?.to_le_bytes());
        buf.extend_from_slice(&to_u32(spec.layer_sizes.len())?.to_le_bytes());
        for &h in &spec.layer_sizes {
            buf.extend_from_slice(&to_u32(h)?.to_le_bytes());
        }
        buf.extend_from_slice(&to_u32(spec.num_outputs)?.to_le_bytes());
        buf.push(spec.bidirectional as u8);
        buf.extend_from_slice(&to_u32(spec.lookahead_frames)?.to_le_bytes());
        for v in &self.params {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(truncated)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::format("not a model checkpoint (bad magic)"));
        }
        let version = u16::from_le_bytes(read_array(&mut r)?);
        if version != CHECKPOINT_VERSION {
            return Err(Error::format(format!(
                "unsupported checkpoint version {version}"
            )));
        }
        let input_dim = u32::from_le_bytes(read_array(&mut r)?) as usize;
        let num_layers = u32::from_le_bytes(read_array(&mut r)?) as usize;
        if num_layers > 1024 {
            return Err(Error::format(format!(
                "implausible layer count {num_layers}"
            )));
        }
        let mut layer_sizes = Vec::with_capacity(num_layers);
        for _ in 0..num_layers {
            layer_sizes.push(u32::from_le_bytes(read_array(&mut r)?) as usize);
        }
        let num_outputs = u32::from_le_bytes(read_array(&mut r)?) as usize;
        let [bidi] = read_array::<1>(&mut r)?;
        let lookahead_frames = u32::from_le_bytes(read_array(&mut r)?) as usize;
        let spec = ModelSpec {
            input_dim,
            layer_sizes,
            num_outputs,
            bidirectional: match bidi {
                0 => false,
                1 => true,
                other => return Err(Error::format(format!("bad bidirectional flag {other}"))),
            },
            lookahead_frames,
        };
        spec.validate().map_err(|e| Error::format(e.to_string()))?;
        let n = spec.num_params();
        let mut raw = vec![0u8; n * 4];
        r.read_exact(&mut raw).map_err(truncated)?;
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(Error::format("trailing bytes after parameter vector"));
        }
        let params = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Self::from_vec(spec, params)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut buf = Vec::new();
        self.write_checkpoint(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::read_checkpoint(bytes.as_slice())
    }
}

fn to_u32(v: usize) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::invalid(format!("{v} does not fit in u32")))
}

fn read_array<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(b)
}

fn truncated(e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        Error::format("checkpoint truncated")
    } else {
        Error::Io(e)
    }
}
