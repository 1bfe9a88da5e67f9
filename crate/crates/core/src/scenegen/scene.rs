//! Object silhouettes, camera views and backgrounds.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Matrix, Rng};

pub const DEFAULT_GRID: usize = 24;
pub const MIN_GRID: usize = 16;

/// Silhouette radius as a fraction of the grid side.
const OBJECT_RADIUS: f64 = 0.34;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObjectId {
    Circle,
    Square,
    Triangle,
    Cross,
    Ring,
    Star,
    Diamond,
    Hexagon,
    Crescent,
    Arrow,
    Tee,
    Ell,
    Bar,
    Heart,
}

impl ObjectId {
    pub const ALL: [ObjectId; 14] = [
        ObjectId::Circle,
        ObjectId::Square,
        ObjectId::Triangle,
        ObjectId::Cross,
        ObjectId::Ring,
        ObjectId::Star,
        ObjectId::Diamond,
        ObjectId::Hexagon,
        ObjectId::Crescent,
        ObjectId::Arrow,
        ObjectId::Tee,
        ObjectId::Ell,
        ObjectId::Bar,
        ObjectId::Heart,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            ObjectId::Circle => "circle",
            ObjectId::Square => "square",
            ObjectId::Triangle => "triangle",
            ObjectId::Cross => "cross",
            ObjectId::Ring => "ring",
            ObjectId::Star => "star",
            ObjectId::Diamond => "diamond",
            ObjectId::Hexagon => "hexagon",
            ObjectId::Crescent => "crescent",
            ObjectId::Arrow => "arrow",
            ObjectId::Tee => "tee",
            ObjectId::Ell => "ell",
            ObjectId::Bar => "bar",
            ObjectId::Heart => "heart",
        }
    }

    pub fn from_name(name: &str) -> Option<ObjectId> {
        Self::ALL.into_iter().find(|o| o.name() == name)
    }

    /// Fill intensity; always brighter than any background pixel.
    pub fn intensity(self) -> f32 {
        const FILL: [f32; 14] =
            [1.0, 0.76, 0.92, 0.84, 0.72, 0.96, 0.8, 0.88, 0.74, 0.98, 0.78, 0.9, 0.82, 0.94];
        FILL[self.index()]
    }

    /// Point-in-silhouette test in canonical coordinates (unit disk, `v` down).
    pub fn contains(self, u: f64, v: f64) -> bool {
        let r2 = u * u + v * v;
        match self {
            ObjectId::Circle => r2 <= 1.0,
            ObjectId::Square => u.abs() <= 0.72 && v.abs() <= 0.72,
            ObjectId::Triangle => point_in_polygon(u, v, &[(0.0, -0.95), (0.9, 0.7), (-0.9, 0.7)]),
            ObjectId::Cross => {
                (u.abs() <= 0.3 && v.abs() <= 0.95) || (v.abs() <= 0.3 && u.abs() <= 0.95)
            }
            ObjectId::Ring => (0.3..=1.0).contains(&r2),
            ObjectId::Star => {
                let pts: Vec<(f64, f64)> = (0..10)
                    .map(|k| {
                        let a = -std::f64::consts::FRAC_PI_2 + k as f64 * std::f64::consts::PI / 5.0;
                        let r = if k % 2 == 0 { 1.0 } else { 0.5 };
                        (r * a.cos(), r * a.sin())
                    })
                    .collect();
                point_in_polygon(u, v, &pts)
            }
            ObjectId::Diamond => u.abs() + v.abs() <= 1.0,
            ObjectId::Hexagon => {
                let pts: Vec<(f64, f64)> = (0..6)
                    .map(|k| {
                        let a = k as f64 * std::f64::consts::PI / 3.0;
                        (0.95 * a.cos(), 0.95 * a.sin())
                    })
                    .collect();
                point_in_polygon(u, v, &pts)
            }
            ObjectId::Crescent => {
                let du = u - 0.45;
                let dv = v + 0.1;
                r2 <= 1.0 && du * du + dv * dv > 0.64
            }
            ObjectId::Arrow => point_in_polygon(
                u,
                v,
                &[
                    (0.0, -0.95),
                    (0.85, -0.15),
                    (0.34, -0.15),
                    (0.34, 0.95),
                    (-0.34, 0.95),
                    (-0.34, -0.15),
                    (-0.85, -0.15),
                ],
            ),
            ObjectId::Tee => {
                (v >= -0.9 && v <= -0.3 && u.abs() <= 0.9) || (u.abs() <= 0.33 && v >= -0.3 && v <= 0.9)
            }
            ObjectId::Ell => {
                (u >= -0.75 && u <= -0.1 && v.abs() <= 0.9) || (u >= -0.75 && u <= 0.75 && v >= 0.3 && v <= 0.9)
            }
            ObjectId::Bar => u.abs() <= 0.95 && v.abs() <= 0.4,
            ObjectId::Heart => {
                let lobe = |cu: f64| {
                    let du = u - cu;
                    let dv = v + 0.3;
                    du * du + dv * dv <= 0.2
                };
                lobe(-0.42) || lobe(0.42) || point_in_polygon(u, v, &[(-0.86, -0.2), (0.86, -0.2), (0.0, 0.9)])
            }
        }
    }
}

/// Crossing-number test.
fn point_in_polygon(x: f64, y: f64, pts: &[(f64, f64)]) -> bool {
    let mut inside = false;
    let mut j = pts.len() - 1;
    for i in 0..pts.len() {
        let (xi, yi) = pts[i];
        let (xj, yj) = pts[j];
        if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
            inside = !inside;
        }
        j = i;
    }
    inside
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Elevation {
    Low,
    Mid,
    High,
    Top,
}

impl Elevation {
    pub const ALL: [Elevation; 4] = [Elevation::Low, Elevation::Mid, Elevation::High, Elevation::Top];

    /// Vertical squash of the silhouette.
    fn vertical_scale(self) -> f64 {
        match self {
            Elevation::Low => 0.6,
            Elevation::Mid => 0.7,
            Elevation::High => 0.85,
            Elevation::Top => 1.0,
        }
    }

    /// Row of the horizon as a fraction of the grid; `None` when looking straight down.
    fn horizon(self) -> Option<f64> {
        match self {
            Elevation::Low => Some(0.42),
            Elevation::Mid => Some(0.3),
            Elevation::High => Some(0.18),
            Elevation::Top => None,
        }
    }

    fn center_row(self) -> f64 {
        match self {
            Elevation::Low => 0.64,
            Elevation::Mid => 0.6,
            Elevation::High => 0.55,
            Elevation::Top => 0.5,
        }
    }
}

/// One of 32 camera views: 4 elevations × 8 azimuths (45° apart).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ViewId {
    pub elevation: Elevation,
    /// Azimuth step in `0..8`, i.e. `azimuth * 45°`.
    pub azimuth: u8,
}

impl ViewId {
    pub const COUNT: usize = 32;

    pub fn new(elevation: Elevation, azimuth: u8) -> Result<Self> {
        if azimuth >= 8 {
            return Err(Error::Parameter(format!("azimuth step {azimuth} outside 0..8")));
        }
        Ok(Self { elevation, azimuth })
    }

    pub fn all() -> Vec<ViewId> {
        Elevation::ALL
            .iter()
            .flat_map(|&e| (0..8).map(move |a| ViewId { elevation: e, azimuth: a }))
            .collect()
    }

    pub fn index(self) -> usize {
        self.elevation as usize * 8 + self.azimuth as usize
    }

    pub fn from_index(i: usize) -> Option<ViewId> {
        if i >= Self::COUNT {
            return None;
        }
        Some(ViewId { elevation: Elevation::ALL[i / 8], azimuth: (i % 8) as u8 })
    }

    pub fn azimuth_radians(self) -> f64 {
        self.azimuth as f64 * std::f64::consts::FRAC_PI_4
    }

    pub fn name(self) -> String {
        let e = match self.elevation {
            Elevation::Low => "low",
            Elevation::Mid => "mid",
            Elevation::High => "high",
            Elevation::Top => "top",
        };
        format!("{e}-{:03}", self.azimuth as u32 * 45)
    }

    pub fn parse(s: &str) -> Result<ViewId> {
        ViewId::all()
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Parameter(format!("unknown view `{s}`")))
    }

    /// Maps object-frame canonical coordinates to image coordinates (pixels).
    pub fn to_image(self, grid: usize, u: f64, v: f64) -> (f64, f64) {
        let g = grid as f64;
        let radius = OBJECT_RADIUS * g;
        let (s, c) = self.azimuth_radians().sin_cos();
        let ru = c * u - s * v;
        let rv = s * u + c * v;
        (g * 0.5 + radius * ru, g * self.elevation.center_row() + radius * rv * self.elevation.vertical_scale())
    }

    /// Inverse of [`ViewId::to_image`].
    pub fn to_object(self, grid: usize, x: f64, y: f64) -> (f64, f64) {
        let g = grid as f64;
        let radius = OBJECT_RADIUS * g;
        let ru = (x - g * 0.5) / radius;
        let rv = (y - g * self.elevation.center_row()) / (radius * self.elevation.vertical_scale());
        let (s, c) = self.azimuth_radians().sin_cos();
        (c * ru + s * rv, -s * ru + c * rv)
    }
}

impl TryFrom<String> for ViewId {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        ViewId::parse(&s)
    }
}

impl From<ViewId> for String {
    fn from(v: ViewId) -> String {
        v.name()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Background {
    Plain,
    GrassNoise,
    ForestStripes,
    TableEdge,
    BeachGradient,
}

impl Background {
    pub const ALL: [Background; 5] = [
        Background::Plain,
        Background::GrassNoise,
        Background::ForestStripes,
        Background::TableEdge,
        Background::BeachGradient,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Background::Plain => "plain",
            Background::GrassNoise => "grass-noise",
            Background::ForestStripes => "forest-stripes",
            Background::TableEdge => "table-edge",
            Background::BeachGradient => "beach-gradient",
        }
    }

    pub fn parse(s: &str) -> Result<Background> {
        Self::ALL
            .into_iter()
            .find(|b| b.name() == s)
            .ok_or_else(|| Error::Parameter(format!("unknown background `{s}`")))
    }

    /// Backgrounds with a slab on the ground plane that moves with azimuth.
    fn has_slab(self) -> bool {
        matches!(self, Background::ForestStripes | Background::TableEdge | Background::BeachGradient)
    }
}

const SKY: f32 = 0.12;

/// Background-only image; all values lie in `[0.05, 0.6]`.
pub fn render_background(bg: Background, view: ViewId, grid: usize, seed: u64) -> Matrix {
    let g = grid as f64;
    if bg == Background::Plain {
        return Matrix::filled(grid, grid, 0.3);
    }
    let az = view.azimuth_radians();
    let horizon = view.elevation.horizon().map(|h| h * g);
    let noise = (bg == Background::GrassNoise).then(|| {
        let mut rng = Rng::derived(seed, 0x6772_6173);
        // Wider than the grid so azimuth can shift the pattern.
        rng.uniform_matrix(grid, 2 * grid, -1.0, 1.0)
    });
    let shift = view.azimuth as f64 * g / 8.0;

    let mut img = Matrix::from_fn(grid, grid, |i, j| {
        let (x, y) = (j as f64 + 0.5, i as f64 + 0.5);
        if let Some(h) = horizon {
            if y < h {
                return SKY;
            }
            if (y - h).abs() < 0.75 {
                return 0.05;
            }
        }
        let value = match bg {
            Background::Plain => unreachable!(),
            Background::GrassNoise => {
                let n = noise.as_ref().expect("grass has noise");
                let col = (j + view.azimuth as usize * grid / 8) % (2 * grid);
                0.36 + 0.08 * n.get(i, col) as f64
            }
            Background::ForestStripes => {
                let phase = ((x + shift) / 6.0).floor() as i64;
                if phase.rem_euclid(2) == 0 { 0.22 } else { 0.46 }
            }
            Background::TableEdge => {
                // Edge through the lower third, tilted by azimuth.
                let (cx, cy) = (g * 0.5, g * 0.86);
                let (s, c) = (az * 0.5).sin_cos();
                let d = (x - cx) * s - (y - cy) * c;
                if d.abs() < 0.9 {
                    0.08
                } else if d > 0.0 {
                    0.52
                } else {
                    0.3
                }
            }
            Background::BeachGradient => {
                let (s, c) = az.sin_cos();
                let t = ((x / g - 0.5) * c + (y / g - 0.5) * s) * 0.5 + 0.5;
                0.2 + 0.35 * t
            }
        };
        value as f32
    });

    if bg.has_slab() {
        let ground_top = horizon.unwrap_or(0.0);
        let sx = g * (0.08 + 0.8 * view.azimuth as f64 / 8.0);
        let sy = ground_top + (g - ground_top) * 0.78;
        for i in 0..grid {
            for j in 0..grid {
                let (x, y) = (j as f64 + 0.5, i as f64 + 0.5);
                if (x - sx).abs() <= 2.0 && (y - sy).abs() <= 1.0 {
                    img.set(i, j, 0.58);
                }
            }
        }
    }
    img
}
