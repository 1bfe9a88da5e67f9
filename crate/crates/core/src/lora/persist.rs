use std::collections::BTreeMap;
use std::path::Path;

use crate::denoiser::{DenoiserConfig, ModelWeights};
use crate::error::{Error, Result};
use crate::scenegen::{PromptTokens, Token};

use super::adapter::{LoraAdapter, LoraLayer};
use super::container::Container;

pub const KIND_MODEL: &str = "model";
pub const KIND_ADAPTER: &str = "adapter";
pub const KIND_GATES: &str = "gates";

pub fn weights_to_container(weights: &ModelWeights) -> Result<Container> {
    let mut c = Container::new(KIND_MODEL);
    c.metadata.insert("config".into(), serde_json::to_string(&weights.config)?);
    c.tensors = weights.tensors.clone();
    Ok(c)
}

pub fn weights_from_container(c: &Container) -> Result<ModelWeights> {
    c.expect_kind(KIND_MODEL)?;
    let config: DenoiserConfig = serde_json::from_str(c.meta("config")?)?;
    let weights = ModelWeights { config, tensors: c.tensors.clone() };
    weights.validate()?;
    Ok(weights)
}

pub fn adapter_to_container(adapter: &LoraAdapter) -> Result<Container> {
    let mut c = Container::new(KIND_ADAPTER);
    c.metadata.insert("concept_tag".into(), adapter.concept_tag.clone());
    c.metadata.insert("uid_tokens".into(), PromptTokens(adapter.uid_tokens.clone()).to_string());
    let scales: BTreeMap<&String, f32> = adapter.layers.iter().map(|(k, l)| (k, l.scale)).collect();
    c.metadata.insert("scales".into(), serde_json::to_string(&scales)?);
    for (key, layer) in &adapter.layers {
        c.tensors.insert(format!("{key}.A"), layer.a.clone());
        c.tensors.insert(format!("{key}.B"), layer.b.clone());
    }
    Ok(c)
}

pub fn adapter_from_container(c: &Container) -> Result<LoraAdapter> {
    c.expect_kind(KIND_ADAPTER)?;
    let scales: BTreeMap<String, f32> = serde_json::from_str(c.meta("scales")?)?;
    let uid_tokens = c
        .meta("uid_tokens")?
        .split_whitespace()
        .map(Token::parse)
        .collect::<Result<Vec<_>>>()?;
    let mut layers = BTreeMap::new();
    for (key, &scale) in &scales {
        let a = c.tensor(&format!("{key}.A"))?.clone();
        let b = c.tensor(&format!("{key}.B"))?.clone();
        let layer = LoraLayer { a, b, scale };
        layer.validate()?;
        layers.insert(key.clone(), layer);
    }
    if c.tensors.len() != 2 * layers.len() {
        return Err(Error::Format { offset: 8, detail: "adapter has tensors without a scale entry".into() });
    }
    Ok(LoraAdapter { layers, concept_tag: c.meta("concept_tag")?.to_string(), uid_tokens })
}

pub fn save_weights(weights: &ModelWeights, path: &Path) -> Result<()> {
    weights_to_container(weights)?.write(path)
}

pub fn load_weights(path: &Path) -> Result<ModelWeights> {
    weights_from_container(&Container::read(path)?)
}

pub fn save_adapter(adapter: &LoraAdapter, path: &Path) -> Result<()> {
    adapter_to_container(adapter)?.write(path)
}

pub fn load_adapter(path: &Path) -> Result<LoraAdapter> {
    adapter_from_container(&Container::read(path)?)
}
