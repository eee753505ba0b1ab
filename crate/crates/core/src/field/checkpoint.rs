//! Field checkpoint: one line of JSON header terminated by `\n`, followed by
//! `param_count` little-endian f64 values.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EncodedMlp, FieldConfig, FieldError, Mlp, RayOffsetField, RefractiveFieldModel};

pub const FIELD_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldCheckpointHeader {
    pub version: u32,
    /// `geometric` or `ray_offset`.
    pub head: String,
    pub layer_sizes: Vec<usize>,
    pub octaves: usize,
    pub z0: f64,
    pub t0: f64,
    pub index_inside: f64,
    pub index_outside: f64,
    /// Initialization seed, kept so the config survives a round trip.
    #[serde(default)]
    pub seed: u64,
    pub param_count: usize,
}

fn header_for(head: &str, config: &FieldConfig, mlp: &Mlp) -> FieldCheckpointHeader {
    FieldCheckpointHeader {
        version: FIELD_FORMAT_VERSION,
        head: head.to_string(),
        layer_sizes: mlp.sizes().to_vec(),
        octaves: config.octaves,
        z0: config.z0,
        t0: config.t0,
        index_inside: config.index_inside,
        index_outside: config.index_outside,
        seed: config.seed,
        param_count: mlp.params().len(),
    }
}

fn write_raw(path: &Path, header: &FieldCheckpointHeader, params: &[f64]) -> Result<(), FieldError> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    let line = serde_json::to_string(header).map_err(|e| FieldError::Checkpoint(e.to_string()))?;
    out.write_all(line.as_bytes())?;
    out.write_all(b"\n")?;
    for p in params {
        out.write_all(&p.to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

/// Either field variant, as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub enum StoredField {
    Geometric(RefractiveFieldModel),
    RayOffset(RayOffsetField),
}

pub fn write_field_checkpoint(path: &Path, field: &StoredField) -> Result<(), FieldError> {
    let (head, config, net) = match field {
        StoredField::Geometric(m) => ("geometric", &m.config, &m.net),
        StoredField::RayOffset(m) => ("ray_offset", &m.config, &m.net),
    };
    write_raw(path, &header_for(head, config, &net.mlp), net.mlp.params())
}

pub fn read_field_checkpoint(path: &Path) -> Result<StoredField, FieldError> {
    let mut reader = BufReader::new(std::fs::File::open(path)?);
    let mut line = String::new();
    reader.read_line(&mut line)?;
    let header: FieldCheckpointHeader =
        serde_json::from_str(line.trim_end()).map_err(|e| FieldError::Checkpoint(e.to_string()))?;
    if header.version != FIELD_FORMAT_VERSION {
        return Err(FieldError::Checkpoint(format!("unsupported version {}", header.version)));
    }
    let mut bytes = Vec::new();
    reader.read_to_end(&mut bytes)?;
    if bytes.len() != header.param_count * 8 {
        return Err(FieldError::Checkpoint(format!(
            "expected {} parameter bytes, found {}",
            header.param_count * 8,
            bytes.len()
        )));
    }
    let params: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let mlp = Mlp::from_parts(header.layer_sizes.clone(), params)
        .ok_or_else(|| FieldError::Checkpoint("layer sizes do not match parameter count".into()))?;
    let hidden = &header.layer_sizes[1..header.layer_sizes.len() - 1];
    let config = FieldConfig {
        z0: header.z0,
        t0: header.t0,
        index_inside: header.index_inside,
        index_outside: header.index_outside,
        octaves: header.octaves,
        hidden_layers: hidden.len(),
        hidden_width: hidden.first().copied().unwrap_or(0),
        seed: header.seed,
    };
    let net = EncodedMlp {
        octaves: header.octaves,
        mlp,
    };
    match header.head.as_str() {
        "geometric" => Ok(StoredField::Geometric(RefractiveFieldModel { config, net })),
        "ray_offset" => Ok(StoredField::RayOffset(RayOffsetField { config, net })),
        other => Err(FieldError::Checkpoint(format!("unknown head `{other}`"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let mut m = RefractiveFieldModel::new(FieldConfig::default());
        m.net.mlp.randomize_output_layer(0.1, 3);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("field.bin");
        write_field_checkpoint(&path, &StoredField::Geometric(m.clone())).unwrap();
        match read_field_checkpoint(&path).unwrap() {
            StoredField::Geometric(back) => {
                assert_eq!(back.net, m.net);
                assert_eq!(back.config.z0, m.config.z0);
            }
            _ => panic!("wrong head"),
        }
    }

    #[test]
    fn truncated_checkpoint_is_rejected() {
        let m = RayOffsetField::new(FieldConfig::default());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("field.bin");
        write_field_checkpoint(&path, &StoredField::RayOffset(m)).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 8]).unwrap();
        assert!(matches!(read_field_checkpoint(&path), Err(FieldError::Checkpoint(_))));
    }
}
