//! Low-rank adapters: construction, materialization, SVD extraction,
//! column-alignment diagnostics and the binary container format.

mod adapter;
mod alignment;
pub mod container;
mod persist;

pub use adapter::{extract_lora, LoraAdapter, LoraLayer, DEFAULT_RANK};
pub use alignment::{alignment, AlignmentReport, LayerAlignment};
pub use container::Container;
pub use persist::{
    adapter_from_container, adapter_to_container, load_adapter, load_weights, save_adapter, save_weights,
    weights_from_container, weights_to_container, KIND_ADAPTER, KIND_GATES, KIND_MODEL,
};

/// `scale · A·B` of one adapter layer.
pub fn materialize(adapter: &LoraAdapter, key: &str) -> crate::Result<crate::numerics::Matrix> {
    adapter.materialize(key)
}
