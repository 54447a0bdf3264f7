//! JSON checkpoints. Floats are written in shortest round-trip form, so a
//! save/load cycle reproduces every parameter bit for bit.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::baselines::{CpParams, FactorConfig, TuckerParams};
use crate::data::Dims;
use crate::error::{CheckpointError, Error, Result};
use crate::model::{AnyModel, Model, ModelKind};
use crate::ntcn::{NtcnConfig, NtcnParams};

pub const FORMAT: &str = "hds-impute-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorDoc {
    name: String,
    shape: Vec<usize>,
    values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Document {
    format: String,
    version: u32,
    model: ModelKind,
    config: Value,
    dims: Dims,
    tensors: Vec<TensorDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    meta: Option<Value>,
}

/// A model plus whatever free-form metadata the caller attached
/// (preprocessing record, split settings, ...).
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: AnyModel,
    pub meta: Option<Value>,
}

fn tensor_docs<M: Model>(m: &M) -> Vec<TensorDoc> {
    m.shapes()
        .into_iter()
        .zip(m.tensors())
        .map(|((name, shape), (_, values))| TensorDoc {
            name: name.to_string(),
            shape,
            values: values.to_vec(),
        })
        .collect()
}

fn malformed(msg: impl std::fmt::Display) -> Error {
    CheckpointError::Malformed(msg.to_string()).into()
}

impl Checkpoint {
    pub fn new(model: AnyModel) -> Self {
        Self { model, meta: None }
    }

    pub fn with_meta(mut self, meta: Value) -> Self {
        self.meta = Some(meta);
        self
    }

    pub fn to_json(&self) -> Result<String> {
        let (config, tensors) = match &self.model {
            AnyModel::Ntcn(m) => (serde_json::to_value(m.config), tensor_docs(m)),
            AnyModel::Tucker(m) => (serde_json::to_value(m.config), tensor_docs(m)),
            AnyModel::Cp(m) => (serde_json::to_value(m.config), tensor_docs(m)),
        };
        if tensors.iter().any(|t| t.values.iter().any(|v| !v.is_finite())) {
            return Err(Error::Validation("refusing to checkpoint non-finite parameters".into()));
        }
        let doc = Document {
            format: FORMAT.to_string(),
            version: VERSION,
            model: self.model.kind(),
            config: config.map_err(malformed)?,
            dims: self.model.dims(),
            tensors,
            meta: self.meta.clone(),
        };
        serde_json::to_string(&doc).map_err(malformed)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: Value = serde_json::from_str(text).map_err(malformed)?;
        if raw.get("format").and_then(Value::as_str) != Some(FORMAT) {
            return Err(malformed("missing or unknown `format` field"));
        }
        let version = raw
            .get("version")
            .and_then(Value::as_u64)
            .ok_or_else(|| malformed("missing `version`"))?;
        if version != u64::from(VERSION) {
            return Err(CheckpointError::Version {
                found: u32::try_from(version).unwrap_or(u32::MAX),
                expected: VERSION,
            }
            .into());
        }
        let doc: Document = serde_json::from_value(raw).map_err(malformed)?;
        let model = match doc.model {
            ModelKind::Ntcn => {
                let cfg: NtcnConfig = serde_json::from_value(doc.config).map_err(malformed)?;
                AnyModel::Ntcn(fill(NtcnParams::zeros(cfg, doc.dims)?, &doc.tensors)?)
            }
            ModelKind::Tucker => {
                let cfg: FactorConfig = serde_json::from_value(doc.config).map_err(malformed)?;
                AnyModel::Tucker(fill(TuckerParams::zeros(cfg, doc.dims)?, &doc.tensors)?)
            }
            ModelKind::Cp => {
                let cfg: FactorConfig = serde_json::from_value(doc.config).map_err(malformed)?;
                AnyModel::Cp(fill(CpParams::zeros(cfg, doc.dims)?, &doc.tensors)?)
            }
        };
        Ok(Self {
            model,
            meta: doc.meta,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// Copies stored tensors into `model`, checking names, order and shapes.
fn fill<M: Model>(mut model: M, docs: &[TensorDoc]) -> Result<M> {
    let shapes = model.shapes();
    if docs.len() != shapes.len() {
        return Err(malformed(format!(
            "expected {} tensors, found {}",
            shapes.len(),
            docs.len()
        )));
    }
    for ((doc, (name, shape)), (_, dst)) in docs.iter().zip(&shapes).zip(model.tensors_mut()) {
        if doc.name != *name {
            return Err(malformed(format!("expected tensor `{name}`, found `{}`", doc.name)));
        }
        if doc.shape != *shape {
            return Err(CheckpointError::ShapeMismatch {
                name: doc.name.clone(),
                found: doc.shape.clone(),
                expected: shape.clone(),
            }
            .into());
        }
        if doc.values.len() != dst.len() {
            return Err(CheckpointError::ShapeMismatch {
                name: doc.name.clone(),
                found: vec![doc.values.len()],
                expected: vec![dst.len()],
            }
            .into());
        }
        dst.copy_from_slice(&doc.values);
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ntcn() -> AnyModel {
        let cfg = NtcnConfig::tiny().with_seed(5);
        NtcnParams::init(cfg, Dims::new(3, 2, 4)).unwrap().into()
    }

    fn bump_first(model: &mut AnyModel) {
        crate::with_model!(model, m => m.tensors_mut()[0].1[0] = 0.1 + 0.2);
    }

    #[test]
    fn roundtrip_is_exact_for_every_kind() {
        let dims = Dims::new(3, 2, 4);
        let fc = FactorConfig::default().with_rank(2).with_seed(9);
        let mut models = vec![
            ntcn(),
            TuckerParams::init(fc, dims).unwrap().into(),
            CpParams::init(fc, dims).unwrap().into(),
        ];
        for m in &mut models {
            bump_first(m);
            let ck = Checkpoint::new(m.clone()).with_meta(serde_json::json!({"split": "1:2:7"}));
            let back = Checkpoint::from_json(&ck.to_json().unwrap()).unwrap();
            assert_eq!(back, ck);
        }
    }

    #[test]
    fn wrong_version_is_rejected() {
        let text = Checkpoint::new(ntcn()).to_json().unwrap();
        let mut v: Value = serde_json::from_str(&text).unwrap();
        v["version"] = 99.into();
        match Checkpoint::from_json(&v.to_string()) {
            Err(Error::Checkpoint(CheckpointError::Version { found: 99, expected: 1 })) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn truncated_file_is_malformed() {
        let text = Checkpoint::new(ntcn()).to_json().unwrap();
        let cut = &text[..text.len() / 2];
        assert!(matches!(
            Checkpoint::from_json(cut),
            Err(Error::Checkpoint(CheckpointError::Malformed(_)))
        ));
    }

    #[test]
    fn shape_mismatch_names_the_tensor() {
        let text = Checkpoint::new(ntcn()).to_json().unwrap();
        let mut v: Value = serde_json::from_str(&text).unwrap();
        v["tensors"][3]["shape"] = serde_json::json!([1, 1, 3, 3, 3]);
        match Checkpoint::from_json(&v.to_string()) {
            Err(Error::Checkpoint(CheckpointError::ShapeMismatch { name, .. })) => assert_eq!(name, "w1"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn non_finite_parameters_are_refused() {
        let mut m = ntcn();
        crate::with_model!(&mut m, p => p.tensors_mut()[1].1[0] = f64::NAN);
        assert!(Checkpoint::new(m).to_json().is_err());
    }
}
