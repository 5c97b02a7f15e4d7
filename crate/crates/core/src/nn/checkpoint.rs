//! Model checkpoint file.
//!
//! Layout: the 4-byte magic `RGN1`, the byte length of the model spec JSON as
//! a little-endian `u64`, the model spec as canonical JSON (sorted keys, no
//! whitespace), then every parameter as a little-endian `f64` in layout order.

use std::path::Path;

use super::model::{Model, ModelSpec};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"RGN1";

/// Serializes with sorted object keys and no insignificant whitespace.
pub fn canonical_json<T: serde::Serialize>(value: &T) -> String {
    // Value maps are ordered by key unless serde_json's preserve_order is on
    let v = serde_json::to_value(value).expect("serializable config types");
    serde_json::to_string(&v).expect("JSON values always serialize")
}

pub fn encode(model: &Model) -> Vec<u8> {
    let spec = canonical_json(model.spec());
    let mut out = Vec::with_capacity(12 + spec.len() + 8 * model.param_count());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(spec.len() as u64).to_le_bytes());
    out.extend_from_slice(spec.as_bytes());
    for p in model.params() {
        out.extend_from_slice(&p.to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<Model> {
    let err = |offset: usize, message: &str| Error::Parse {
        offset,
        message: message.to_string(),
    };
    if bytes.get(..4) != Some(MAGIC.as_slice()) {
        return Err(err(0, "missing RGN1 magic"));
    }
    let len_bytes: [u8; 8] = bytes
        .get(4..12)
        .and_then(|b| b.try_into().ok())
        .ok_or_else(|| err(4, "truncated spec length"))?;
    let len = usize::try_from(u64::from_le_bytes(len_bytes)).map_err(|_| err(4, "spec length overflow"))?;
    let spec_end = 12usize.checked_add(len).filter(|&e| e <= bytes.len()).ok_or_else(|| err(12, "truncated spec"))?;
    let spec: ModelSpec = serde_json::from_slice(&bytes[12..spec_end]).map_err(|e| Error::Parse {
        offset: 12 + e.column().saturating_sub(1),
        message: e.to_string(),
    })?;
    let mut model = Model::zeros(spec)?;
    let body = &bytes[spec_end..];
    if body.len() != 8 * model.param_count() {
        return Err(err(
            spec_end,
            &format!(
                "expected {} parameter bytes, found {}",
                8 * model.param_count(),
                body.len()
            ),
        ));
    }
    let params: Vec<f64> = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    if params.iter().any(|p| !p.is_finite()) {
        return Err(err(spec_end, "non-finite parameter"));
    }
    model.set_params(params)?;
    Ok(model)
}

pub fn read(path: impl AsRef<Path>) -> Result<Model> {
    let path = path.as_ref();
    decode(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{ConvBlock, InputShape, TargetScaling};

    fn model() -> Model {
        let mut spec = ModelSpec::desk();
        spec.input = InputShape { height: 8, width: 8, channels: 2 };
        spec.blocks = vec![ConvBlock::new(2, 1)];
        spec.dense_width = 3;
        spec.target = TargetScaling { offset: 84.0, scale: 1.0 / 3.0 };
        Model::new(spec, 5).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let m = model();
        let bytes = encode(&m);
        assert_eq!(&bytes[..4], b"RGN1");
        assert_eq!(decode(&bytes).unwrap(), m);
        assert_eq!(encode(&decode(&bytes).unwrap()), bytes);
    }

    #[test]
    fn spec_json_is_canonical() {
        let bytes = encode(&model());
        let len = u64::from_le_bytes(bytes[4..12].try_into().unwrap()) as usize;
        let json = std::str::from_utf8(&bytes[12..12 + len]).unwrap();
        assert!(json.starts_with("{\"blocks\":"));
        assert!(!json.contains(' '));
    }

    #[test]
    fn corrupt_files_rejected() {
        let bytes = encode(&model());
        assert!(decode(b"XXXX").is_err());
        assert!(decode(&bytes[..bytes.len() - 3]).is_err());
        let mut extra = bytes.clone();
        extra.extend_from_slice(&[0; 8]);
        assert!(decode(&extra).is_err());
    }
}
