//! Versioned JSON model files.
//!
//! Floats are written with the shortest representation that parses back to
//! the same bits, so a reloaded model reproduces predictions exactly.

use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

use super::{Encoder, EncoderConfig, JcceModel, Layer, ModelError, Result};
use crate::features::FeatureSpace;
use crate::tensor::{ParamStore, Tensor};

pub const MODEL_FORMAT_VERSION: u32 = 1;
const FORMAT_TAG: &str = "jcce-model";

#[derive(Serialize, Deserialize)]
struct LayerFile {
    rows: usize,
    cols: usize,
    weight: Vec<f64>,
    bias: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct EncoderFile {
    config: EncoderConfig,
    input_dim: usize,
    layers: Vec<LayerFile>,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    schema_fingerprint: String,
    embed_dim: usize,
    content: EncoderFile,
    context: EncoderFile,
    feature_space: FeatureSpace,
}

#[derive(Deserialize)]
struct Header {
    format: Option<String>,
    version: Option<u32>,
}

fn encoder_file(enc: &Encoder, store: &ParamStore) -> EncoderFile {
    EncoderFile {
        config: enc.config.clone(),
        input_dim: enc.input_dim,
        layers: enc
            .layers
            .iter()
            .map(|l| {
                let w = store.value(l.weight);
                LayerFile {
                    rows: w.rows(),
                    cols: w.cols(),
                    weight: w.data().to_vec(),
                    bias: store.value(l.bias).data().to_vec(),
                }
            })
            .collect(),
    }
}

fn restore_encoder(file: EncoderFile, store: &mut ParamStore) -> Result<Encoder> {
    file.config.validate()?;
    let mut expected_in = file.input_dim;
    let n_layers = file.layers.len();
    if n_layers != file.config.hidden.len() + 1 {
        return Err(ModelError::Corrupt(format!(
            "encoder declares {} hidden layers but stores {n_layers} layers",
            file.config.hidden.len()
        )));
    }
    let mut layers = Vec::with_capacity(n_layers);
    for (i, l) in file.layers.into_iter().enumerate() {
        let expected_out = file.config.hidden.get(i).copied().unwrap_or(file.config.out_dim);
        if l.rows != expected_in || l.cols != expected_out || l.bias.len() != l.cols {
            return Err(ModelError::Corrupt(format!(
                "layer {i} has shape {}x{} (bias {}), expected {expected_in}x{expected_out}",
                l.rows,
                l.cols,
                l.bias.len()
            )));
        }
        if l.weight.iter().chain(&l.bias).any(|v| !v.is_finite()) {
            return Err(ModelError::Corrupt(format!("layer {i} contains non-finite values")));
        }
        let weight = store.add(Tensor::from_vec(l.rows, l.cols, l.weight).map_err(|e| ModelError::Corrupt(e.to_string()))?);
        let bias = store.add(Tensor::from_vec(1, l.cols, l.bias).expect("checked length"));
        layers.push(Layer { weight, bias });
        expected_in = expected_out;
    }
    Ok(Encoder {
        config: file.config,
        input_dim: file.input_dim,
        layers,
    })
}

pub fn write_model<W: Write>(model: &JcceModel, mut out: W) -> Result<()> {
    let file = ModelFile {
        format: FORMAT_TAG.into(),
        version: MODEL_FORMAT_VERSION,
        schema_fingerprint: model.schema_fingerprint(),
        embed_dim: model.embed_dim(),
        content: encoder_file(&model.content, &model.store),
        context: encoder_file(&model.context, &model.store),
        feature_space: model.space.clone(),
    };
    serde_json::to_writer(&mut out, &file).map_err(|e| ModelError::Io(e.into()))?;
    out.write_all(b"\n")?;
    Ok(())
}

pub fn read_model<R: Read>(mut input: R) -> Result<JcceModel> {
    let mut text = String::new();
    input
        .read_to_string(&mut text)
        .map_err(|e| ModelError::Corrupt(format!("unreadable model file: {e}")))?;
    let header: Header = serde_json::from_str(&text).map_err(|e| ModelError::Corrupt(e.to_string()))?;
    if header.format.as_deref() != Some(FORMAT_TAG) {
        return Err(ModelError::Corrupt("not a model file (missing format tag)".into()));
    }
    match header.version {
        Some(MODEL_FORMAT_VERSION) => {}
        Some(found) => {
            return Err(ModelError::Version {
                found,
                expected: MODEL_FORMAT_VERSION,
            })
        }
        None => return Err(ModelError::Corrupt("missing version field".into())),
    }
    let file: ModelFile = serde_json::from_str(&text).map_err(|e| ModelError::Corrupt(e.to_string()))?;
    let space = file.feature_space;
    space.validate()?;
    let found = space.schema().fingerprint();
    if found != file.schema_fingerprint {
        return Err(ModelError::Fingerprint {
            expected: file.schema_fingerprint,
            found,
        });
    }
    if file.content.input_dim != space.content_dim() || file.context.input_dim != space.context_dim() {
        return Err(ModelError::Corrupt("encoder input dimensions disagree with the feature space".into()));
    }
    if file.content.config.out_dim != file.embed_dim || file.context.config.out_dim != file.embed_dim {
        return Err(ModelError::Corrupt("encoder output dimensions disagree with embed_dim".into()));
    }
    let mut store = ParamStore::new();
    let content = restore_encoder(file.content, &mut store)?;
    let context = restore_encoder(file.context, &mut store)?;
    Ok(JcceModel {
        space,
        content,
        context,
        store,
    })
}

pub fn save_model(model: &JcceModel, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_model(model, &mut buf)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<JcceModel> {
    let bytes = std::fs::read(path)?;
    read_model(bytes.as_slice())
}

impl JcceModel {
    /// Fails if the model was trained under a different schema.
    pub fn check_schema(&self, schema: &crate::features::Schema) -> Result<()> {
        let (expected, found) = (schema.fingerprint(), self.schema_fingerprint());
        if expected != found {
            return Err(ModelError::Fingerprint { expected, found });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{testutil::event, FeatureSpace, Schema};
    use crate::tensor::RngState;

    fn tiny_model() -> JcceModel {
        let events = vec![event("drama-00", "drama"), event("news-00", "news"), event("news-01", "news")];
        let space = FeatureSpace::fit(&events, &Schema::default_tv()).unwrap();
        let cfg = EncoderConfig {
            hidden: vec![8, 8],
            out_dim: 4,
            ..EncoderConfig::default()
        };
        JcceModel::new(space, cfg.clone(), cfg, &mut RngState::seed_from(9)).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let m = tiny_model();
        let mut buf = Vec::new();
        write_model(&m, &mut buf).unwrap();
        let back = read_model(buf.as_slice()).unwrap();
        assert_eq!(back, m);
        let mut again = Vec::new();
        write_model(&back, &mut again).unwrap();
        assert_eq!(buf, again);
    }

    #[test]
    fn wrong_version_is_version_error() {
        let mut buf = Vec::new();
        write_model(&tiny_model(), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap().replacen("\"version\":1", "\"version\":7", 1);
        assert!(matches!(
            read_model(text.as_bytes()),
            Err(ModelError::Version { found: 7, expected: 1 })
        ));
    }

    #[test]
    fn truncated_file_is_corrupt() {
        let mut buf = Vec::new();
        write_model(&tiny_model(), &mut buf).unwrap();
        buf.truncate(buf.len() / 2);
        assert!(matches!(read_model(buf.as_slice()), Err(ModelError::Corrupt(_))));
    }

    #[test]
    fn tampered_fingerprint_is_detected() {
        let m = tiny_model();
        let mut buf = Vec::new();
        write_model(&m, &mut buf).unwrap();
        let fp = m.schema_fingerprint();
        let text = String::from_utf8(buf).unwrap().replacen(&fp, "00000000000000000000000000000000", 1);
        assert!(matches!(read_model(text.as_bytes()), Err(ModelError::Fingerprint { .. })));
    }
}
