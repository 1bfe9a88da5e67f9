//! Binary PGM images and the JSON data manifest.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

use super::dataset::{ConceptSplits, Dataset, Split};
use super::render::{RenderedScene, SceneSpec};

/// `P5` graymap with maxval 255; values are clamped to `[0, 1]` and rounded.
pub fn encode_pgm(image: &Matrix) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", image.cols(), image.rows()).into_bytes();
    out.extend(image.data().iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    out
}

pub fn decode_pgm(bytes: &[u8]) -> Result<Matrix> {
    let bad = |offset: usize, detail: &str| Error::Format { offset: offset as u64, detail: detail.into() };
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad(pos, "truncated pgm header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad(start, "non-ascii header"))?);
    }
    if fields[0] != "P5" {
        return Err(bad(0, "not a binary graymap"));
    }
    let parse = |s: &str| s.parse::<usize>().map_err(|_| bad(0, "bad header number"));
    let (w, h, maxval) = (parse(fields[1])?, parse(fields[2])?, parse(fields[3])?);
    if maxval != 255 {
        return Err(bad(0, "only maxval 255 is supported"));
    }
    let body = &bytes[pos + 1..];
    if body.len() != w * h {
        return Err(bad(pos + 1, "pixel payload length mismatch"));
    }
    Matrix::from_vec(h, w, body.iter().map(|&b| b as f32 / 255.0).collect())
}

pub fn write_pgm(path: &Path, image: &Matrix) -> Result<()> {
    fs::write(path, encode_pgm(image)).map_err(|e| Error::io(path, e))
}

pub fn read_pgm(path: &Path) -> Result<Matrix> {
    decode_pgm(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub split: Split,
    pub spec: SceneSpec,
    pub seed: u64,
    pub prompt: String,
    pub image: PathBuf,
    pub mask: PathBuf,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct DataManifest {
    pub entries: Vec<ManifestEntry>,
}

fn write_scene(
    dir: &Path,
    split: Split,
    index: usize,
    scene: &RenderedScene,
    prompt: String,
    manifest: &mut DataManifest,
) -> Result<()> {
    let stem = format!(
        "{}-{:04}-{}-{}-{}",
        serde_json::to_value(split)?.as_str().unwrap_or("split"),
        index,
        scene.spec.object.name(),
        scene.spec.view.name(),
        scene.spec.background.name()
    );
    let image = PathBuf::from(format!("{stem}.pgm"));
    let mask = PathBuf::from(format!("{stem}.mask.pgm"));
    write_pgm(&dir.join(&image), &scene.image)?;
    write_pgm(&dir.join(&mask), &scene.mask)?;
    manifest.entries.push(ManifestEntry { split, spec: scene.spec, seed: scene.seed, prompt, image, mask });
    Ok(())
}

/// Writes every image and mask as PGM plus `manifest.json` under `dir`.
pub fn write_data(dir: &Path, pretrain: Option<&Dataset>, splits: Option<&ConceptSplits>) -> Result<DataManifest> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = DataManifest::default();
    let mut datasets: Vec<&Dataset> = pretrain.into_iter().collect();
    if let Some(s) = splits {
        datasets.push(&s.view_shot);
        datasets.push(&s.object_shots);
    }
    for data in datasets {
        for (i, item) in data.items.iter().enumerate() {
            write_scene(dir, data.split, i, &item.scene, item.prompt.to_string(), &mut manifest)?;
        }
    }
    if let Some(s) = splits {
        let prompt = s.tokens.transfer_prompt(s.heldout.spec.object)?.to_string();
        write_scene(dir, Split::HeldoutEval, 0, &s.heldout, prompt, &mut manifest)?;
    }
    let path = dir.join("manifest.json");
    fs::write(&path, serde_json::to_vec_pretty(&manifest)?).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}
