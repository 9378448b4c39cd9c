//! Two-channel cell images, datasets and splits.

mod io;
mod mining;
mod preprocess;
mod synth;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

pub use io::{load_dataset, read_manifest, save_dataset, Manifest, Stored, MANIFEST, NORMALIZATION};
pub use mining::{mine_multichannel, red_distance};
pub use preprocess::{
    center_crop_resize, crop_to_aspect, ingest_raw, minmax_normalize, resize_bilinear, RawImage,
};
pub use synth::{synth_generate, tip_regions, ClassRecipe, Pattern, SynthSpec};

pub const HEIGHT: usize = 48;
pub const WIDTH: usize = 80;
pub const PIXELS: usize = HEIGHT * WIDTH;

/// One `HEIGHT × WIDTH` intensity grid, row-major, values in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Plane(Vec<f32>);

impl Plane {
    pub fn new(values: Vec<f32>) -> Result<Self> {
        if values.len() != PIXELS {
            return Err(Error::Shape(format!(
                "plane needs {PIXELS} values, got {}",
                values.len()
            )));
        }
        Ok(Self(values))
    }

    pub fn filled(v: f32) -> Self {
        Self(vec![v; PIXELS])
    }

    pub fn values(&self) -> &[f32] {
        &self.0
    }

    pub fn values_mut(&mut self) -> &mut [f32] {
        &mut self.0
    }

    pub fn at(&self, y: usize, x: usize) -> f32 {
        self.0[y * WIDTH + x]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Image2C {
    pub red: Plane,
    pub green: Plane,
    /// Index into the owning dataset's class list.
    pub class: usize,
}

/// A red channel with one green channel per class, in the dataset's class order.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageMC {
    pub red: Plane,
    pub greens: Vec<Plane>,
    /// Dataset item index each green was taken from (the original image for its own class).
    pub source_ids: Vec<usize>,
    pub class: usize,
}

impl ImageMC {
    pub fn channels(&self) -> usize {
        self.greens.len() + 1
    }
}

pub trait Labeled {
    fn class(&self) -> usize;
}

impl Labeled for Image2C {
    fn class(&self) -> usize {
        self.class
    }
}

impl Labeled for ImageMC {
    fn class(&self) -> usize {
        self.class
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset<I = Image2C> {
    pub classes: Vec<String>,
    pub items: Vec<I>,
    pub splits: Vec<SplitTag>,
    /// Seed of the most recent split, if any.
    pub split_seed: Option<u64>,
}

impl<I: Labeled + Clone> Dataset<I> {
    /// All items tagged as training data.
    pub fn new(classes: Vec<String>, items: Vec<I>) -> Self {
        let splits = vec![SplitTag::Train; items.len()];
        Self {
            classes,
            items,
            splits,
            split_seed: None,
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn class_index(&self, name: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == name)
    }

    /// Item indices carrying `tag`, in dataset order.
    pub fn indices(&self, tag: SplitTag) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.splits[i] == tag).collect()
    }

    pub fn indices_of(&self, tag: SplitTag, class: usize) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.splits[i] == tag && self.items[i].class() == class)
            .collect()
    }

    /// Items with `tag`, re-tagged as training data.
    pub fn subset(&self, tag: SplitTag) -> Self {
        let items = self.indices(tag).into_iter().map(|i| self.items[i].clone()).collect();
        Self::new(self.classes.clone(), items)
    }

    pub fn items_of(&self, tag: SplitTag, class: usize) -> Vec<I> {
        self.indices_of(tag, class)
            .into_iter()
            .map(|i| self.items[i].clone())
            .collect()
    }

    pub fn counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.classes.len()];
        for it in &self.items {
            c[it.class()] += 1;
        }
        c
    }
}

/// Stratified train/test split: in every class `floor(n · test_fraction)` items become test.
pub fn split_train_test<I: Labeled + Clone>(
    ds: &Dataset<I>,
    test_fraction: f64,
    seed: u64,
) -> Result<Dataset<I>> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::Split(format!(
            "test fraction must lie in (0, 1), got {test_fraction}"
        )));
    }
    let mut rng = rng::stream(seed, "split/train-test");
    let mut out = ds.clone();
    out.splits = vec![SplitTag::Train; ds.len()];
    for class in 0..ds.classes.len() {
        let mut members: Vec<usize> = (0..ds.len())
            .filter(|&i| ds.items[i].class() == class)
            .collect();
        if members.is_empty() {
            continue;
        }
        if members.len() < 2 {
            return Err(Error::Split(format!(
                "class {} has fewer than 2 items",
                ds.classes[class]
            )));
        }
        let n_test = (members.len() as f64 * test_fraction).floor() as usize;
        members.shuffle(&mut rng);
        for &i in &members[..n_test] {
            out.splits[i] = SplitTag::Test;
        }
    }
    out.split_seed = Some(seed);
    Ok(out)
}

/// Halves a test set into test-train and test-test parts (the first gets `⌊n/2⌋` items).
pub fn split_test_for_c2st<I: Labeled + Clone>(
    test_set: &[I],
    seed: u64,
) -> Result<(Vec<I>, Vec<I>)> {
    if test_set.len() < 2 {
        return Err(Error::Split(format!(
            "need at least 2 test items, got {}",
            test_set.len()
        )));
    }
    let mut order: Vec<usize> = (0..test_set.len()).collect();
    order.shuffle(&mut rng::stream(seed, "split/c2st"));
    let half = test_set.len() / 2;
    let (a, b) = order.split_at(half);
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_unstable();
    b.sort_unstable();
    Ok((
        a.into_iter().map(|i| test_set[i].clone()).collect(),
        b.into_iter().map(|i| test_set[i].clone()).collect(),
    ))
}
