use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

use super::scene::{render_background, Background, ObjectId, ViewId, DEFAULT_GRID, MIN_GRID};

/// Everything that determines one procedural image (together with a seed).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SceneSpec {
    pub object: ObjectId,
    pub view: ViewId,
    pub background: Background,
    pub grid: usize,
}

impl SceneSpec {
    pub fn new(object: ObjectId, view: ViewId, background: Background) -> Self {
        Self { object, view, background, grid: DEFAULT_GRID }
    }

    pub fn with_grid(mut self, grid: usize) -> Self {
        self.grid = grid;
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RenderedScene {
    /// Grayscale in `[0, 1]`.
    pub image: Matrix,
    /// 1 on object pixels, 0 elsewhere.
    pub mask: Matrix,
    pub spec: SceneSpec,
    pub seed: u64,
}

impl RenderedScene {
    pub fn mask_pixels(&self) -> usize {
        self.mask.data().iter().filter(|&&m| m > 0.5).count()
    }
}

/// Object silhouette mask sampled at pixel centers.
pub fn object_mask(object: ObjectId, view: ViewId, grid: usize) -> Matrix {
    Matrix::from_fn(grid, grid, |i, j| {
        let (u, v) = view.to_object(grid, j as f64 + 0.5, i as f64 + 0.5);
        if object.contains(u, v) {
            1.0
        } else {
            0.0
        }
    })
}

/// Draws the object over its background. No augmentation of any kind.
pub fn render(spec: &SceneSpec, seed: u64) -> Result<RenderedScene> {
    if spec.grid < MIN_GRID {
        return Err(Error::Parameter(format!("grid {} below minimum {MIN_GRID}", spec.grid)));
    }
    let mut image = render_background(spec.background, spec.view, spec.grid, seed);
    let mask = object_mask(spec.object, spec.view, spec.grid);
    let fill = spec.object.intensity();
    for (px, &m) in image.data_mut().iter_mut().zip(mask.data()) {
        if m > 0.5 {
            *px = fill;
        }
    }
    Ok(RenderedScene { image, mask, spec: *spec, seed })
}
