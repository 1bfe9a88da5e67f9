//! Deterministic procedural images: object × camera view × background.
//!
//! Views are 2-D operationalizations of a camera: elevation squashes the
//! silhouette vertically and moves the horizon, azimuth rotates the silhouette
//! and shifts the ground-plane cues (stripes, slab, table edge, gradient).
//! Masks come straight from the silhouette geometry.

mod dataset;
pub mod io;
mod render;
mod scene;
mod tokens;

pub use dataset::{
    make_splits, pretrain_split, ConceptSplits, ConceptTokens, DataItem, Dataset, PretrainSpec, Split,
    SplitRequest,
};
pub use render::{object_mask, render, RenderedScene, SceneSpec};
pub use scene::{render_background, Background, Elevation, ObjectId, ViewId, DEFAULT_GRID, MIN_GRID};
pub use tokens::{
    describe, detokenize, tokenize, tokenize_prompt, Prompt, PromptTokens, Token, MAX_PROMPT_LEN, UID_POOL,
    VOCAB_SIZE,
};
