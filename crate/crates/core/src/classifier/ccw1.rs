//! `CCW1` weight files.
//!
//! ```text
//! "CCW1"                      4 bytes magic
//! header_len                  u32 little-endian
//! header                      header_len bytes of UTF-8 JSON
//! blobs                       f32 little-endian, tensors in header order
//! ```
//!
//! The header carries `input_shape`, `num_classes`, `layers` and a
//! `tensors` list of `{layer, name, shape}` entries that must match the
//! shapes implied by the layer chain.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::network::{Layer, LayerParams, Network, NetworkDescription};
use crate::error::{Error, Result};
use crate::image::Shape;

pub const MAGIC: &[u8; 4] = b"CCW1";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    input_shape: [usize; 3],
    num_classes: usize,
    layers: Vec<Layer>,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    layer: usize,
    name: String,
    shape: Vec<usize>,
}

pub fn write_ccw1(net: &Network) -> Vec<u8> {
    let d = net.description();
    let slots = d.tensor_slots().expect("network validated at construction");
    let header = Header {
        input_shape: d.input_shape.to_array(),
        num_classes: d.num_classes,
        layers: d.layers.clone(),
        tensors: slots
            .iter()
            .map(|s| TensorEntry {
                layer: s.layer,
                name: s.name.to_string(),
                shape: s.shape.clone(),
            })
            .collect(),
    };
    let header = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(8 + header.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    for s in &slots {
        let p = &net.params()[s.layer];
        let values = if s.name == "weight" {
            &p.weight
        } else {
            &p.bias
        };
        for v in values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn read_ccw1(bytes: &[u8]) -> Result<Network> {
    if bytes.len() < 8 || &bytes[..4] != MAGIC {
        return Err(Error::Format("bad magic: not a CCW1 weight file".into()));
    }
    let header_len = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let header_end = 8usize
        .checked_add(header_len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| {
            Error::Format(format!(
                "truncated header: declared {header_len} bytes, file has {}",
                bytes.len() - 8
            ))
        })?;
    let header: Header = serde_json::from_slice(&bytes[8..header_end])
        .map_err(|e| Error::Format(format!("malformed CCW1 header: {e}")))?;
    let [c, h, w] = header.input_shape;
    let description = NetworkDescription {
        input_shape: Shape::new(c, h, w),
        num_classes: header.num_classes,
        layers: header.layers,
    };
    let slots = description.tensor_slots()?;
    if slots.len() != header.tensors.len() {
        return Err(Error::Format(format!(
            "header lists {} tensors, layer chain needs {}",
            header.tensors.len(),
            slots.len()
        )));
    }
    for (slot, entry) in slots.iter().zip(&header.tensors) {
        if slot.layer != entry.layer || slot.name != entry.name || slot.shape != entry.shape {
            return Err(Error::Format(format!(
                "tensor mismatch at layer {}: header declares {} {:?} at layer {}, chain needs {} {:?}",
                slot.layer, entry.name, entry.shape, entry.layer, slot.name, slot.shape
            )));
        }
    }

    let mut blob = &bytes[header_end..];
    let mut params = vec![LayerParams::default(); description.layers.len()];
    for slot in &slots {
        let need = slot.len() * 4;
        if blob.len() < need {
            return Err(Error::Format(format!(
                "blob length mismatch at layer {}: {} needs {need} bytes, {} remain",
                slot.layer,
                slot.name,
                blob.len()
            )));
        }
        let values: Vec<f32> = blob[..need]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::Format(format!(
                "non-finite value {v} in layer {} {}",
                slot.layer, slot.name
            )));
        }
        blob = &blob[need..];
        let p = &mut params[slot.layer];
        if slot.name == "weight" {
            p.weight = values;
        } else {
            p.bias = values;
        }
    }
    if !blob.is_empty() {
        return Err(Error::Format(format!(
            "blob length mismatch: {} trailing bytes after the last tensor",
            blob.len()
        )));
    }
    Network::new(description, params)
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<Network> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    read_ccw1(&bytes).map_err(|e| match e {
        Error::Format(msg) => Error::Format(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn save_weights(net: &Network, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, write_ccw1(net))
        .map_err(|e| Error::io(format!("writing {}", path.display()), e))
}
