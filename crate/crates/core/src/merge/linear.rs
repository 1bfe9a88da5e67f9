use crate::denoiser::LayerDeltas;
use crate::error::{Error, Result};
use crate::lora::{extract_lora, LoraAdapter};

/// `w·Δv + (1−w)·Δo` for every layer, before factorization.
pub fn linear_deltas(view: &LoraAdapter, object: &LoraAdapter, w_vo: f32) -> Result<LayerDeltas> {
    if !(0.0..=1.0).contains(&w_vo) {
        return Err(Error::Parameter(format!("merge weight {w_vo} outside [0, 1]")));
    }
    view.check_same_keys(object)?;
    let mut out = LayerDeltas::new();
    for key in view.layers.keys() {
        let mut d = view.materialize(key)?.scale(w_vo);
        d.axpy(1.0 - w_vo, &object.materialize(key)?)?;
        out.insert(key.clone(), d);
    }
    Ok(out)
}

/// Weighted sum of two adapters, re-factored at rank `r_v + r_o` per layer
/// (capped by the layer size) so the sum is represented exactly.
pub fn merge_linear(view: &LoraAdapter, object: &LoraAdapter, w_vo: f32) -> Result<LoraAdapter> {
    let deltas = linear_deltas(view, object, w_vo)?;
    let mut layers = std::collections::BTreeMap::new();
    for (key, d) in &deltas {
        let rank = (view.layers[key].rank() + object.layers[key].rank()).min(d.rows().min(d.cols()));
        layers.insert(key.clone(), extract_lora(d, rank)?);
    }
    let mut uid_tokens = view.uid_tokens.clone();
    uid_tokens.extend(object.uid_tokens.iter().copied().filter(|t| !view.uid_tokens.contains(t)));
    Ok(LoraAdapter {
        layers,
        concept_tag: format!("linear({},{};w={w_vo})", view.concept_tag, object.concept_tag),
        uid_tokens,
    })
}
