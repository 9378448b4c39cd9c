//! On-disk dataset layout: `<dir>/<class>/<index>.f32` raw little-endian float32
//! arrays in channel-major order, plus `<dir>/manifest.json`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Dataset, Image2C, ImageMC, Labeled, Plane, SplitTag, HEIGHT, PIXELS, WIDTH};
use crate::error::{Error, Result};

pub const NORMALIZATION: &str = "minmax-per-channel [-1, 1]";
pub const MANIFEST: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub classes: Vec<String>,
    pub counts: Vec<usize>,
    /// `[channels, height, width]`.
    pub image_shape: [usize; 3],
    pub normalization: String,
    /// Seed the data were generated with, when synthetic.
    pub seed: Option<u64>,
    pub split_seed: Option<u64>,
    /// SHA-256 of every image file, keyed by its path relative to the dataset root.
    pub checksums: BTreeMap<String, String>,
    pub splits: BTreeMap<String, SplitTag>,
    /// Dataset index each green channel came from, for mined composites.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub sources: BTreeMap<String, Vec<usize>>,
}

/// Images that can be stored as a stack of planes.
pub trait Stored: Labeled + Clone + Sized {
    fn planes(&self) -> Vec<&Plane>;
    fn sources(&self) -> Option<&[usize]>;
    fn assemble(planes: Vec<Plane>, class: usize, sources: Option<Vec<usize>>) -> Result<Self>;
}

impl Stored for Image2C {
    fn planes(&self) -> Vec<&Plane> {
        vec![&self.red, &self.green]
    }

    fn sources(&self) -> Option<&[usize]> {
        None
    }

    fn assemble(planes: Vec<Plane>, class: usize, _: Option<Vec<usize>>) -> Result<Self> {
        let [red, green]: [Plane; 2] = planes
            .try_into()
            .map_err(|p: Vec<Plane>| Error::Shape(format!("expected 2 channels, found {}", p.len())))?;
        Ok(Self { red, green, class })
    }
}

impl Stored for ImageMC {
    fn planes(&self) -> Vec<&Plane> {
        std::iter::once(&self.red).chain(&self.greens).collect()
    }

    fn sources(&self) -> Option<&[usize]> {
        Some(&self.source_ids)
    }

    fn assemble(mut planes: Vec<Plane>, class: usize, sources: Option<Vec<usize>>) -> Result<Self> {
        if planes.len() < 2 {
            return Err(Error::Shape("composite needs at least 2 channels".into()));
        }
        let greens = planes.split_off(1);
        Ok(Self {
            red: planes.pop().unwrap(),
            source_ids: sources.unwrap_or_default(),
            greens,
            class,
        })
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes `ds` under `dir`; items are grouped by class, keeping their relative order.
pub fn save_dataset<I: Stored>(ds: &Dataset<I>, dir: &Path, seed: Option<u64>) -> Result<Manifest> {
    let channels = ds.items.first().map_or(2, |it| it.planes().len());
    let mut manifest = Manifest {
        classes: ds.classes.clone(),
        counts: ds.counts(),
        image_shape: [channels, HEIGHT, WIDTH],
        normalization: NORMALIZATION.into(),
        seed,
        split_seed: ds.split_seed,
        checksums: BTreeMap::new(),
        splits: BTreeMap::new(),
        sources: BTreeMap::new(),
    };
    for (ci, name) in ds.classes.iter().enumerate() {
        if name.is_empty() || name.contains(['/', '\\']) || name.starts_with('.') {
            return Err(Error::Data(format!("class name {name:?} is not a valid directory name")));
        }
        let class_dir = dir.join(name);
        fs::create_dir_all(&class_dir).map_err(|e| Error::io(&class_dir, e))?;
        let members = (0..ds.len()).filter(|&i| ds.items[i].class() == ci);
        for (k, i) in members.enumerate() {
            let item = &ds.items[i];
            let planes = item.planes();
            if planes.len() != channels {
                return Err(Error::Shape("items differ in channel count".into()));
            }
            let bytes: Vec<u8> = planes
                .iter()
                .flat_map(|p| p.values().iter().flat_map(|v| v.to_le_bytes()))
                .collect();
            let rel = format!("{name}/{k:05}.f32");
            let path = dir.join(&rel);
            fs::write(&path, &bytes).map_err(|e| Error::io(&path, e))?;
            manifest.checksums.insert(rel.clone(), sha256_hex(&bytes));
            manifest.splits.insert(rel.clone(), ds.splits[i]);
            if let Some(src) = item.sources() {
                manifest.sources.insert(rel, src.to_vec());
            }
        }
    }
    let path = dir.join(MANIFEST);
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::json(&path, e))?;
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(&path, e))
}

/// Reads a dataset written by [`save_dataset`], verifying every checksum.
pub fn load_dataset<I: Stored>(dir: &Path) -> Result<(Dataset<I>, Manifest)> {
    let manifest = read_manifest(dir)?;
    let [channels, h, w] = manifest.image_shape;
    if (h, w) != (HEIGHT, WIDTH) {
        return Err(Error::Data(format!("unsupported image shape {h}×{w}")));
    }
    if manifest.counts.len() != manifest.classes.len() {
        return Err(Error::Data("manifest counts do not match its classes".into()));
    }
    let mut items = Vec::new();
    let mut splits = Vec::new();
    for (ci, name) in manifest.classes.iter().enumerate() {
        for k in 0..manifest.counts[ci] {
            let rel = format!("{name}/{k:05}.f32");
            let path = dir.join(&rel);
            let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
            let expected = manifest
                .checksums
                .get(&rel)
                .ok_or_else(|| Error::Data(format!("{rel} missing from manifest")))?;
            if &sha256_hex(&bytes) != expected {
                return Err(Error::Data(format!("checksum mismatch for {rel}")));
            }
            if bytes.len() != channels * PIXELS * 4 {
                return Err(Error::Data(format!("{rel} has {} bytes", bytes.len())));
            }
            let values: Vec<f32> = bytes
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            let planes = values
                .chunks_exact(PIXELS)
                .map(|c| Plane::new(c.to_vec()))
                .collect::<Result<Vec<_>>>()?;
            items.push(I::assemble(planes, ci, manifest.sources.get(&rel).cloned())?);
            splits.push(manifest.splits.get(&rel).copied().unwrap_or(SplitTag::Train));
        }
    }
    let mut ds = Dataset::new(manifest.classes.clone(), items);
    ds.splits = splits;
    ds.split_seed = manifest.split_seed;
    Ok((ds, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{mine_multichannel, split_train_test, synth_generate, ClassRecipe, Pattern, SynthSpec};

    fn sample() -> Dataset {
        let spec = SynthSpec::new(
            vec![ClassRecipe::new("tips", Pattern::Tips), ClassRecipe::new("ring", Pattern::Ring)],
            6,
            9,
        );
        split_train_test(&synth_generate(&spec).unwrap(), 0.5, 2).unwrap()
    }

    #[test]
    fn round_trip_preserves_items_and_splits() {
        let dir = tempfile::tempdir().unwrap();
        let ds = sample();
        let m = save_dataset(&ds, dir.path(), Some(9)).unwrap();
        assert_eq!(m.counts, vec![6, 6]);
        assert_eq!(m.image_shape, [2, 48, 80]);
        let (back, _) = load_dataset::<Image2C>(dir.path()).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn composites_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let ds = sample();
        let mc = mine_multichannel(&ds, &ds.classes, 1).unwrap();
        let m = save_dataset(&mc, dir.path(), None).unwrap();
        assert_eq!(m.image_shape[0], 3);
        let (back, _) = load_dataset::<ImageMC>(dir.path()).unwrap();
        assert_eq!(back.items, mc.items);
    }

    #[test]
    fn corrupted_file_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&sample(), dir.path(), None).unwrap();
        let f = dir.path().join("ring/00002.f32");
        let mut bytes = fs::read(&f).unwrap();
        bytes[100] ^= 1;
        fs::write(&f, bytes).unwrap();
        assert!(matches!(load_dataset::<Image2C>(dir.path()), Err(Error::Data(_))));
    }

    #[test]
    fn missing_manifest_is_a_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let err = load_dataset::<Image2C>(&dir.path().join("nope")).unwrap_err();
        assert!(err.is_config());
    }
}
