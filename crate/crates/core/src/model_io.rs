//! Versioned JSON files for fitted models.
//!
//! ```json
//! { "kind": "backend", "version": 1, "model": { ... } }
//! ```
//!
//! Floats are written with shortest round-trip formatting and parsed with
//! exact rounding, so a load after save is bit-identical.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use crate::backend::BackendModel;
use crate::error::{Error, Result};
use crate::fusion::FusionModel;

pub const MODEL_VERSION: u64 = 1;

pub trait ModelFile: Serialize + DeserializeOwned {
    const KIND: &'static str;

    fn check(&self) -> Result<()>;
}

impl ModelFile for BackendModel {
    const KIND: &'static str = "backend";

    fn check(&self) -> Result<()> {
        self.validate()
    }
}

impl ModelFile for FusionModel {
    const KIND: &'static str = "fusion";

    fn check(&self) -> Result<()> {
        self.validate()
    }
}

pub fn to_json<M: ModelFile>(model: &M) -> Result<String> {
    model.check()?;
    let doc = serde_json::json!({
        "kind": M::KIND,
        "version": MODEL_VERSION,
        "model": model,
    });
    Ok(serde_json::to_string_pretty(&doc)?)
}

pub fn from_json<M: ModelFile>(text: &str) -> Result<M> {
    let mut doc: Value = serde_json::from_str(text)?;
    let obj = doc
        .as_object_mut()
        .ok_or_else(|| Error::Model("expected a JSON object".into()))?;
    let version = obj
        .get("version")
        .ok_or_else(|| Error::Model("missing field `version`".into()))?
        .as_u64()
        .ok_or_else(|| Error::Model("`version` must be an unsigned integer".into()))?;
    if version != MODEL_VERSION {
        return Err(Error::UnsupportedModelVersion {
            found: version,
            expected: MODEL_VERSION,
        });
    }
    match obj.get("kind").and_then(Value::as_str) {
        Some(k) if k == M::KIND => {}
        Some(k) => {
            return Err(Error::Model(format!("expected a {} model, found {k:?}", M::KIND)));
        }
        None => return Err(Error::Model("missing field `kind`".into())),
    }
    let body = obj
        .remove("model")
        .ok_or_else(|| Error::Model("missing field `model`".into()))?;
    let model: M = serde_json::from_value(body).map_err(|e| Error::Model(e.to_string()))?;
    model.check()?;
    Ok(model)
}

pub fn save_model<M: ModelFile>(model: &M, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut text = to_json(model)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_model<M: ModelFile>(path: impl AsRef<Path>) -> Result<M> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_json(&text)
}
