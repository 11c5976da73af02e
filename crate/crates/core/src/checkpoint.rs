//! Binary parameter checkpoints.
//!
//! Network file (`.crlw`):
//!
//! ```text
//! "CRLW" | version u16 | layer count u32 | (in u32, out u32) per layer
//!        | action dim u32 | action insert layer u32 (0xFFFF_FFFF = none)
//!        | layer norm u8 | parameter count u64 | f64 parameters
//! ```
//!
//! Optimizer file (`.bin`): `"CRLA" | version u16 | step u64 | lr, beta1,
//! beta2, eps f64 | length u64 | m f64s | v f64s`. All integers and floats
//! are little-endian.

use std::path::Path;

use crate::adam::AdamState;
use crate::codec::{Reader, Writer};
use crate::error::{Error, Result};
use crate::mlp::{MlpLayout, MlpParams};

pub const NET_MAGIC: &[u8; 4] = b"CRLW";
pub const ADAM_MAGIC: &[u8; 4] = b"CRLA";
pub const FORMAT_VERSION: u16 = 1;
const NO_INSERT: u32 = u32::MAX;
/// Upper bound on layers accepted from a file.
const MAX_LAYERS: u32 = 64;

pub(crate) fn write_layout(w: &mut Writer, layout: &MlpLayout) {
    w.u32(layout.num_layers() as u32);
    for l in 0..layout.num_layers() {
        w.u32(layout.layer_input(l) as u32);
        w.u32(layout.layer_sizes[l + 1] as u32);
    }
    w.u32(layout.action_dim as u32);
    w.u32(layout.action_insert_layer.map_or(NO_INSERT, |l| l as u32));
    w.u8(u8::from(layout.layer_norm));
}

pub(crate) fn read_layout(r: &mut Reader<'_>) -> Result<MlpLayout> {
    let n = r.u32()?;
    if n == 0 || n > MAX_LAYERS {
        return Err(Error::Format(format!("layer count {n} outside 1..={MAX_LAYERS}")));
    }
    let dims = (0..n)
        .map(|_| Ok((r.u32()? as usize, r.u32()? as usize)))
        .collect::<Result<Vec<_>>>()?;
    let action_dim = r.u32()? as usize;
    let insert = match r.u32()? {
        NO_INSERT => None,
        l => Some(l as usize),
    };
    let layer_norm = r.bool()?;
    let mut sizes = Vec::with_capacity(dims.len() + 1);
    for (l, &(input, output)) in dims.iter().enumerate() {
        let extra = if insert == Some(l) { action_dim } else { 0 };
        let own = input
            .checked_sub(extra)
            .ok_or_else(|| Error::Format(format!("layer {l} input narrower than the action")))?;
        if l == 0 {
            sizes.push(own);
        } else if sizes[l] != own {
            return Err(Error::Format(format!(
                "layer {l} input {own} does not match previous output {}",
                sizes[l]
            )));
        }
        sizes.push(output);
    }
    let layout = MlpLayout {
        layer_sizes: sizes,
        action_dim,
        action_insert_layer: insert,
        layer_norm,
    };
    layout.validate().map_err(|e| Error::Format(e.to_string()))?;
    Ok(layout)
}

pub fn encode_params(params: &MlpParams) -> Vec<u8> {
    let mut w = Writer::default();
    w.buf.extend_from_slice(NET_MAGIC);
    w.u16(FORMAT_VERSION);
    write_layout(&mut w, params.layout());
    w.u64(params.len() as u64);
    w.f64s(params.as_slice());
    w.buf
}

pub fn decode_params(bytes: &[u8]) -> Result<MlpParams> {
    let mut r = Reader::new(bytes);
    if r.take(4)? != NET_MAGIC {
        return Err(Error::Format("not a network checkpoint (bad magic)".into()));
    }
    let version = r.u16()?;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let layout = read_layout(&mut r)?;
    let count = r.u64()?;
    let expected = layout.param_count();
    if count != expected as u64 {
        return Err(Error::Format(format!(
            "parameter count {count} does not match layout ({expected})"
        )));
    }
    let data = r.f64s(count)?;
    r.finish()?;
    MlpParams::from_flat(layout, data)
}

pub fn encode_adam(state: &AdamState) -> Vec<u8> {
    let mut w = Writer::default();
    w.buf.extend_from_slice(ADAM_MAGIC);
    w.u16(FORMAT_VERSION);
    w.u64(state.step_count);
    for v in [state.lr, state.beta1, state.beta2, state.eps] {
        w.f64(v);
    }
    w.u64(state.m.len() as u64);
    w.f64s(&state.m);
    w.f64s(&state.v);
    w.buf
}

pub fn decode_adam(bytes: &[u8]) -> Result<AdamState> {
    let mut r = Reader::new(bytes);
    if r.take(4)? != ADAM_MAGIC {
        return Err(Error::Format("not an optimizer checkpoint (bad magic)".into()));
    }
    let version = r.u16()?;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported optimizer version {version}")));
    }
    let step_count = r.u64()?;
    let (lr, beta1, beta2, eps) = (r.f64()?, r.f64()?, r.f64()?, r.f64()?);
    let n = r.u64()?;
    let m = r.f64s(n)?;
    let v = r.f64s(n)?;
    r.finish()?;
    Ok(AdamState {
        step_count,
        m,
        v,
        lr,
        beta1,
        beta2,
        eps,
    })
}

pub fn save_params(path: &Path, params: &MlpParams) -> Result<()> {
    write_atomic(path, &encode_params(params))
}

pub fn load_params(path: &Path) -> Result<MlpParams> {
    decode_params(&std::fs::read(path)?)
}

pub fn save_adam(path: &Path, state: &AdamState) -> Result<()> {
    write_atomic(path, &encode_adam(state))
}

pub fn load_adam(path: &Path) -> Result<AdamState> {
    decode_adam(&std::fs::read(path)?)
}

/// Writes to a sibling temporary file, then renames over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}
