//! Bit-exact layer payload: a 27-byte little-endian header
//! `{mid: u64, layer_index: u16, version: u64, kind: u8, out_dim: u32, in_dim: u32}`
//! followed by row-major `f32` weights and then the bias. Activation layers
//! carry zero dimensions and no body.

use super::{ModelError, ModelId, Timestamp};
use crate::nn::{Layer, LayerKind};

pub const HEADER_LEN: usize = 27;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PayloadHeader {
    pub mid: ModelId,
    pub layer_index: u16,
    pub version: Timestamp,
    pub kind: LayerKind,
    pub out_dim: u32,
    pub in_dim: u32,
}

pub fn encode_layer(mid: ModelId, layer_index: u16, version: Timestamp, layer: &Layer) -> Vec<u8> {
    let mut buf = Vec::with_capacity(HEADER_LEN + 4 * layer.param_count());
    buf.extend_from_slice(&mid.to_le_bytes());
    buf.extend_from_slice(&layer_index.to_le_bytes());
    buf.extend_from_slice(&version.to_le_bytes());
    buf.push(layer.kind().code());
    buf.extend_from_slice(&(layer.out_dim() as u32).to_le_bytes());
    buf.extend_from_slice(&(layer.in_dim() as u32).to_le_bytes());
    for v in layer.weights().iter().chain(layer.bias()) {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf
}

pub fn decode_header(bytes: &[u8]) -> Result<PayloadHeader, ModelError> {
    if bytes.len() < HEADER_LEN {
        return Err(ModelError::Corrupt(format!("payload of {} bytes is shorter than header", bytes.len())));
    }
    let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().expect("8 bytes"));
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
    let kind = LayerKind::from_code(bytes[18])
        .ok_or_else(|| ModelError::Corrupt(format!("unknown layer kind {}", bytes[18])))?;
    Ok(PayloadHeader {
        mid: u64_at(0),
        layer_index: u16::from_le_bytes([bytes[8], bytes[9]]),
        version: u64_at(10),
        kind,
        out_dim: u32_at(19),
        in_dim: u32_at(23),
    })
}

pub fn decode_layer(bytes: &[u8]) -> Result<(PayloadHeader, Layer), ModelError> {
    let h = decode_header(bytes)?;
    let body = &bytes[HEADER_LEN..];
    let layer = match h.kind {
        LayerKind::Linear => {
            let (out, inp) = (h.out_dim as usize, h.in_dim as usize);
            let expected = 4 * (out * inp + out);
            if body.len() != expected {
                return Err(ModelError::Corrupt(format!("linear body is {} bytes, expected {expected}", body.len())));
            }
            let vals: Vec<f32> =
                body.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
            let (w, b) = vals.split_at(out * inp);
            Layer::linear_with(inp, out, w.to_vec(), b.to_vec()).map_err(|e| ModelError::Corrupt(e.to_string()))?
        }
        kind => {
            if !body.is_empty() || h.out_dim != 0 || h.in_dim != 0 {
                return Err(ModelError::Corrupt("activation layer with a body".into()));
            }
            Layer::activation(kind)
        }
    };
    Ok((h, layer))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_layout_is_bit_exact() {
        let layer = Layer::linear_with(2, 1, vec![1.0, -2.0], vec![0.5]).unwrap();
        let bytes = encode_layer(7, 3, 9, &layer);
        let mut expected = Vec::new();
        expected.extend_from_slice(&7u64.to_le_bytes());
        expected.extend_from_slice(&3u16.to_le_bytes());
        expected.extend_from_slice(&9u64.to_le_bytes());
        expected.push(0);
        expected.extend_from_slice(&1u32.to_le_bytes());
        expected.extend_from_slice(&2u32.to_le_bytes());
        for v in [1.0f32, -2.0, 0.5] {
            expected.extend_from_slice(&v.to_le_bytes());
        }
        assert_eq!(bytes, expected);
        assert_eq!(bytes.len(), HEADER_LEN + 12);
        let (h, back) = decode_layer(&bytes).unwrap();
        assert_eq!((h.mid, h.layer_index, h.version), (7, 3, 9));
        assert_eq!(back, layer);
    }

    #[test]
    fn activation_is_header_only() {
        let bytes = encode_layer(1, 2, 3, &Layer::relu());
        assert_eq!(bytes.len(), HEADER_LEN);
        assert_eq!(bytes[18], 1);
        assert_eq!(decode_layer(&bytes).unwrap().1, Layer::relu());
    }

    #[test]
    fn corrupt_payloads() {
        assert!(decode_layer(&[0u8; 5]).is_err());
        let mut bytes = encode_layer(1, 1, 1, &Layer::linear(2, 2));
        bytes.pop();
        assert!(decode_layer(&bytes).is_err());
        let mut bytes = encode_layer(1, 1, 1, &Layer::relu());
        bytes[18] = 42;
        assert!(decode_layer(&bytes).is_err());
    }
}
