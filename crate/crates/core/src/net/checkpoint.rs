//! Parameter checkpoints.
//!
//! Little-endian layout:
//!
//! ```text
//! "EXNW" | version u32
//! input channels u32 | height u32 | width u32 | layer count u32
//! per layer: tag u32 | a u32 | b u32 | c u32 | rate f32
//!   Conv = 0 (a = out channels, b = kernel, c = stride << 16 | pad)
//!   Relu = 1, MaxPool = 2 (a = size), FullyConnected = 3 (a = units),
//!   Dropout = 4 (rate), Softmax = 5
//! per parametric layer, in declaration order: weights f32[], bias f32[]
//! ```

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::{LayerParams, LayerSpec, Network, NetworkSpec, Parameters, Real};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"EXNW";
pub const CHECKPOINT_VERSION: u32 = 1;

fn encode_layer(l: &LayerSpec) -> (u32, [u32; 3], f32) {
    match *l {
        LayerSpec::Conv {
            out_channels,
            kernel,
            stride,
            pad,
        } => (0, [out_channels as u32, kernel as u32, ((stride as u32) << 16) | pad as u32], 0.0),
        LayerSpec::Relu => (1, [0; 3], 0.0),
        LayerSpec::MaxPool { size } => (2, [size as u32, 0, 0], 0.0),
        LayerSpec::FullyConnected { units } => (3, [units as u32, 0, 0], 0.0),
        LayerSpec::Dropout { rate } => (4, [0; 3], rate),
        LayerSpec::Softmax => (5, [0; 3], 0.0),
    }
}

fn decode_layer(tag: u32, a: [u32; 3], rate: f32) -> Option<LayerSpec> {
    Some(match tag {
        0 => LayerSpec::Conv {
            out_channels: a[0] as usize,
            kernel: a[1] as usize,
            stride: (a[2] >> 16) as usize,
            pad: (a[2] & 0xffff) as usize,
        },
        1 => LayerSpec::Relu,
        2 => LayerSpec::MaxPool { size: a[0] as usize },
        3 => LayerSpec::FullyConnected { units: a[0] as usize },
        4 => LayerSpec::Dropout { rate },
        5 => LayerSpec::Softmax,
        _ => return None,
    })
}

pub fn save_checkpoint<T: Real>(net: &Network<T>, path: &Path) -> Result<()> {
    let spec = net.spec();
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    let mut put = |v: u32| buf.extend_from_slice(&v.to_le_bytes());
    put(CHECKPOINT_VERSION);
    put(spec.input.0 as u32);
    put(spec.input.1 as u32);
    put(spec.input.2 as u32);
    put(spec.layers.len() as u32);
    for l in &spec.layers {
        let (tag, a, rate) = encode_layer(l);
        buf.extend_from_slice(&tag.to_le_bytes());
        for v in a {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf.extend_from_slice(&rate.to_le_bytes());
    }
    for l in &net.params.layers {
        for v in l.weights.iter().chain(&l.bias) {
            buf.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    }
    let mut w = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    w.write_all(&buf).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<T: Real>(path: &Path) -> Result<Network<T>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let fmt = |m: &str| Error::format(path, m.to_string());
    let mut pos = 0usize;
    let mut take = |n: usize| -> Result<&[u8]> {
        let s = bytes.get(pos..pos + n).ok_or_else(|| fmt("truncated checkpoint"))?;
        pos += n;
        Ok(s)
    };
    if take(4)? != CHECKPOINT_MAGIC {
        return Err(fmt("bad magic, not a network checkpoint"));
    }
    let mut words = Vec::new();
    let version = u32::from_le_bytes(take(4)?.try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(fmt(&format!("unsupported checkpoint version {version}")));
    }
    for _ in 0..4 {
        words.push(u32::from_le_bytes(take(4)?.try_into().expect("4 bytes")) as usize);
    }
    let input = (words[0], words[1], words[2]);
    let n_layers = words[3];
    let mut layers = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let rec = take(20)?;
        let w = |i: usize| u32::from_le_bytes(rec[i * 4..i * 4 + 4].try_into().expect("4 bytes"));
        let rate = f32::from_le_bytes(rec[16..20].try_into().expect("4 bytes"));
        layers.push(decode_layer(w(0), [w(1), w(2), w(3)], rate).ok_or_else(|| fmt("unknown layer tag"))?);
    }
    let spec = NetworkSpec { input, layers };
    let sizes = spec.param_sizes().map_err(|e| fmt(&e.to_string()))?;
    let mut params = Parameters { layers: Vec::new() };
    for (nw, nb) in sizes {
        let mut read = |n: usize| -> Result<Vec<T>> {
            let raw = take(n * 4)?;
            Ok(raw
                .chunks_exact(4)
                .map(|c| T::of(f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes")))))
                .collect())
        };
        let weights = read(nw)?;
        let bias = read(nb)?;
        params.layers.push(LayerParams { weights, bias });
    }
    if pos != bytes.len() {
        return Err(fmt("trailing bytes after parameters"));
    }
    Network::new(spec, params)
}
