//! `HVNC` network checkpoints.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! "HVNC"  u16 version  u32 layer_count
//! per layer: u32 in  u32 out  u8 activation  f64[in*out] weights (row-major)  f64[out] bias
//! ```
//!
//! Dropout rate and other training metadata live in the JSON manifests next
//! to the checkpoint, not in the binary.

use std::path::Path;

use super::mlp::{Activation, Layer, MlpNet};
use super::tensor::Tensor2;
use crate::binio::{put_f64s, put_u16, put_u32, u32_len, Reader};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"HVNC";
pub const CHECKPOINT_VERSION: u16 = 1;

pub fn encode_checkpoint(net: &MlpNet) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(10 + net.param_count() * 8);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    put_u16(&mut out, CHECKPOINT_VERSION);
    put_u32(&mut out, u32_len(net.layers().len(), "layers")?);
    for l in net.layers() {
        put_u32(&mut out, u32_len(l.in_dim(), "layer.in")?);
        put_u32(&mut out, u32_len(l.out_dim(), "layer.out")?);
        out.push(l.activation.code());
        put_f64s(&mut out, l.weight.data());
        put_f64s(&mut out, l.bias.data());
    }
    Ok(out)
}

/// Decodes a checkpoint; the returned net has the given dropout rate.
pub fn decode_checkpoint(bytes: &[u8], dropout_rate: f64) -> Result<MlpNet> {
    let mut r = Reader::new(bytes);
    r.magic(CHECKPOINT_MAGIC)?;
    let at = r.offset();
    let version = r.u16("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::format(at, format!("unsupported checkpoint version {version}")));
    }
    let count = r.u32("layer count")? as usize;
    if count == 0 {
        return Err(Error::format(r.offset() - 4, "checkpoint has no layers"));
    }
    let mut layers = Vec::with_capacity(count.min(1024));
    for i in 0..count {
        let fan_in = r.u32("layer in")? as usize;
        let fan_out = r.u32("layer out")? as usize;
        let at = r.offset();
        let code = r.u8("activation")?;
        let activation = Activation::from_code(code)
            .ok_or_else(|| Error::format(at, format!("layer {i}: unknown activation code {code}")))?;
        let w = r.f64s(fan_in * fan_out, "weights")?;
        let b = r.f64s(fan_out, "bias")?;
        layers.push(Layer::new(
            Tensor2::from_vec(fan_in, fan_out, w)?,
            Tensor2::from_vec(1, fan_out, b)?,
            activation,
        )?);
    }
    if r.remaining() != 0 {
        return Err(Error::format(r.offset(), format!("{} trailing bytes", r.remaining())));
    }
    MlpNet::from_layers(layers, dropout_rate)
}

pub fn save_checkpoint(net: &MlpNet, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, encode_checkpoint(net)?)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>, dropout_rate: f64) -> Result<MlpNet> {
    decode_checkpoint(&std::fs::read(path)?, dropout_rate)
}
