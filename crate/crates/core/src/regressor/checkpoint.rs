//! Model checkpoints: a JSON header describing the architecture followed by
//! the little-endian f64 weight payload in layer order (weights
//! column-major, then bias, per layer).

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{Model, ModelSpec};
use crate::error::FormatError;
use crate::Result;

const MAGIC: &[u8; 4] = b"FODM";

#[derive(Serialize, Deserialize)]
struct Header {
    spec: ModelSpec,
    input_dim: usize,
    output_dim: usize,
    n_parameters: usize,
}

pub fn save_model(path: impl AsRef<Path>, model: &Model) -> Result<()> {
    let header = Header {
        spec: model.spec.clone(),
        input_dim: model.input_dim,
        output_dim: model.output_dim,
        n_parameters: model.n_parameters(),
    };
    let header_json = serde_json::to_vec(&header)?;
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    file.write_all(MAGIC)?;
    file.write_all(&(header_json.len() as u32).to_le_bytes())?;
    file.write_all(&header_json)?;
    for layer in &model.layers {
        for v in layer.weights.as_slice() {
            file.write_all(&v.to_le_bytes())?;
        }
        for v in layer.bias.as_slice() {
            file.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Model> {
    let mut file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 4];
    file.read_exact(&mut magic)
        .map_err(|_| FormatError::MalformedHeader("checkpoint too short".into()))?;
    if &magic != MAGIC {
        return Err(FormatError::MalformedHeader("bad checkpoint magic".into()).into());
    }
    let mut len_bytes = [0u8; 4];
    file.read_exact(&mut len_bytes)
        .map_err(|_| FormatError::MalformedHeader("missing header length".into()))?;
    let header_len = u32::from_le_bytes(len_bytes) as usize;
    if header_len > 1 << 20 {
        return Err(FormatError::MalformedHeader(format!(
            "implausible header length {header_len}"
        ))
        .into());
    }
    let mut header_json = vec![0u8; header_len];
    file.read_exact(&mut header_json)
        .map_err(|_| FormatError::MalformedHeader("truncated header".into()))?;
    let header: Header = serde_json::from_slice(&header_json)
        .map_err(|e| FormatError::MalformedHeader(e.to_string()))?;

    let mut model = Model::new(header.spec, header.input_dim, header.output_dim)?;
    if model.n_parameters() != header.n_parameters {
        return Err(FormatError::MalformedHeader(format!(
            "parameter count {} does not match architecture ({})",
            header.n_parameters,
            model.n_parameters()
        ))
        .into());
    }
    let mut payload = Vec::new();
    file.read_to_end(&mut payload)?;
    let expected = header.n_parameters * 8;
    if payload.len() != expected {
        return Err(FormatError::TruncatedPayload {
            expected,
            actual: payload.len(),
        }
        .into());
    }
    let mut offset = 0usize;
    let mut next = || {
        let v = f64::from_le_bytes(payload[offset..offset + 8].try_into().unwrap());
        offset += 8;
        v
    };
    for layer in &mut model.layers {
        for v in layer.weights.as_mut_slice() {
            *v = next();
        }
        for v in layer.bias.as_mut_slice() {
            *v = next();
        }
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::regressor::ModelSpec;

    #[test]
    fn roundtrip_preserves_weights() {
        let dir = std::env::temp_dir().join("fodkit_checkpoint_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("model.fodm");
        let model = Model::new(ModelSpec::mlp(vec![7], 0.1, 42), 6, 45).unwrap();
        save_model(&path, &model).unwrap();
        let loaded = load_model(&path).unwrap();
        assert_eq!(model, loaded);
        std::fs::remove_file(&path).ok();
    }

    #[test]
    fn corrupt_files_yield_typed_errors() {
        let dir = std::env::temp_dir().join("fodkit_checkpoint_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad.fodm");
        std::fs::write(&path, b"not a checkpoint").unwrap();
        assert!(load_model(&path).is_err());
        // Truncated payload.
        let model = Model::new(ModelSpec::linear(1), 3, 2).unwrap();
        save_model(&path, &model).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 8]).unwrap();
        match load_model(&path) {
            Err(crate::Error::Format(FormatError::TruncatedPayload { .. })) => {}
            other => panic!("expected truncated payload, got {other:?}"),
        }
        std::fs::remove_file(&path).ok();
    }
}
