//! Synthetic rod-shaped cells with growth-stage red signal and class-specific green patterns.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Dataset, Image2C, Plane, HEIGHT, WIDTH};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pattern {
    /// Spots at both cell ends.
    Tips,
    /// A band across the cell middle.
    Ring,
    /// A few scattered spots inside the cell.
    Dots,
    /// A broad cap over one end.
    Cap,
}

impl std::str::FromStr for Pattern {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tips" => Ok(Self::Tips),
            "ring" => Ok(Self::Ring),
            "dots" => Ok(Self::Dots),
            "cap" => Ok(Self::Cap),
            other => Err(Error::Config(format!("unknown green pattern {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassRecipe {
    pub name: String,
    pub pattern: Pattern,
    /// Peak green intensity before noise, in `(0, 1]`.
    pub intensity: f32,
    /// Standard deviation of additive Gaussian pixel noise on the `[0, 1]` scale.
    pub noise: f32,
}

impl ClassRecipe {
    pub fn new(name: impl Into<String>, pattern: Pattern) -> Self {
        Self {
            name: name.into(),
            pattern,
            intensity: 0.9,
            noise: 0.03,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub classes: Vec<ClassRecipe>,
    /// Cell length range in pixels, tip to tip.
    pub length: (f32, f32),
    /// Cell width range in pixels.
    pub width: (f32, f32),
    /// Images per class.
    pub count: usize,
    pub seed: u64,
}

impl SynthSpec {
    pub fn new(classes: Vec<ClassRecipe>, count: usize, seed: u64) -> Self {
        Self {
            classes,
            length: (35.0, 75.0),
            width: (16.0, 24.0),
            count,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Spec(m));
        if self.count == 0 {
            return bad("count must be at least 1".into());
        }
        if self.classes.is_empty() {
            return bad("at least one class recipe is required".into());
        }
        let (l0, l1) = self.length;
        let (w0, w1) = self.width;
        if !(l0 > 0.0 && l0 <= l1 && w0 > 0.0 && w0 <= w1 && w1 <= l0) {
            return bad(format!("inconsistent geometry ranges {:?} / {:?}", self.length, self.width));
        }
        let max_dx = l1 / 2.0 + JITTER + 1.0;
        let max_dy = l1 / 2.0 * MAX_TILT.sin() + w1 / 2.0 + JITTER + 1.0;
        if max_dx > WIDTH as f32 / 2.0 || max_dy > HEIGHT as f32 / 2.0 {
            return bad(format!(
                "cells up to {l1}×{w1} px do not fit the {HEIGHT}×{WIDTH} frame"
            ));
        }
        for c in &self.classes {
            if !(c.intensity > 0.0 && c.intensity <= 1.0) || !(c.noise >= 0.0) {
                return bad(format!("class {}: intensity or noise out of range", c.name));
            }
        }
        Ok(())
    }
}

const JITTER: f32 = 1.5;
const MAX_TILT: f32 = 0.12;
/// Green tip spots are cut off at this distance from the tip point.
const TIP_CUTOFF: f32 = 8.0;

/// Geometry of one rendered cell.
#[derive(Clone, Copy, Debug)]
struct Cell {
    cx: f32,
    cy: f32,
    /// Unit axis direction.
    ux: f32,
    uy: f32,
    length: f32,
    width: f32,
}

impl Cell {
    /// Axial and perpendicular coordinates of a pixel center.
    fn local(&self, y: usize, x: usize) -> (f32, f32) {
        let dx = x as f32 + 0.5 - self.cx;
        let dy = y as f32 + 0.5 - self.cy;
        (dx * self.ux + dy * self.uy, -dx * self.uy + dy * self.ux)
    }

    fn inside(&self, a: f32, p: f32) -> bool {
        let r = self.width / 2.0;
        let half = self.length / 2.0 - r;
        let da = (a.abs() - half).max(0.0);
        da * da + p * p <= r * r
    }

    /// The two pole points, `(-axis end, +axis end)`.
    fn tips(&self) -> [(f32, f32); 2] {
        let h = self.length / 2.0;
        [
            (self.cy - h * self.uy, self.cx - h * self.ux),
            (self.cy + h * self.uy, self.cx + h * self.ux),
        ]
    }
}

fn gauss(d2: f32, sigma: f32) -> f32 {
    (-d2 / (2.0 * sigma * sigma)).exp()
}

fn dist2(y: usize, x: usize, (py, px): (f32, f32)) -> f32 {
    let dy = y as f32 + 0.5 - py;
    let dx = x as f32 + 0.5 - px;
    dx * dx + dy * dy
}

/// Pole points (row, column) of the cells in a generated dataset, in item order.
///
/// Green `tips` signal never extends further than 10 px from these points.
pub fn tip_regions(spec: &SynthSpec) -> Result<Vec<[(f32, f32); 2]>> {
    spec.validate()?;
    let mut out = Vec::with_capacity(spec.classes.len() * spec.count);
    for ci in 0..spec.classes.len() {
        for i in 0..spec.count {
            let mut rng = rng::stream(spec.seed, &format!("synth/{ci}/{i}"));
            out.push(sample_cell(spec, &mut rng).tips());
        }
    }
    Ok(out)
}

fn sample_cell(spec: &SynthSpec, rng: &mut impl Rng) -> Cell {
    let length = rng.random_range(spec.length.0..=spec.length.1);
    let width = rng.random_range(spec.width.0..=spec.width.1);
    let tilt = rng.random_range(-MAX_TILT..=MAX_TILT);
    let cx = WIDTH as f32 / 2.0 + rng.random_range(-JITTER..=JITTER);
    let cy = HEIGHT as f32 / 2.0 + rng.random_range(-JITTER..=JITTER);
    Cell {
        cx,
        cy,
        ux: tilt.cos(),
        uy: tilt.sin(),
        length,
        width,
    }
}

fn render(spec: &SynthSpec, recipe: &ClassRecipe, class: usize, rng: &mut impl Rng) -> Image2C {
    let cell = sample_cell(spec, rng);
    let tips = cell.tips();
    // Growth stage from relative length: one pole, both poles, then division ring.
    let stage = (cell.length - spec.length.0) / (spec.length.1 - spec.length.0).max(1e-6);
    let old_pole = rng.random_range(0..2usize);
    let red_tip_sigma = 0.18 * cell.width;

    let dots: Vec<(f32, f32)> = if recipe.pattern == Pattern::Dots {
        let n = rng.random_range(3..=6);
        (0..n)
            .map(|_| {
                let a = rng.random_range(-0.4..0.4) * cell.length;
                let p = rng.random_range(-0.25..0.25) * cell.width;
                (cell.cy + a * cell.uy + p * cell.ux, cell.cx + a * cell.ux - p * cell.uy)
            })
            .collect()
    } else {
        Vec::new()
    };
    let cap_pole = rng.random_range(0..2usize);

    let mut red = vec![0f32; HEIGHT * WIDTH];
    let mut green = vec![0f32; HEIGHT * WIDTH];
    for y in 0..HEIGHT {
        for x in 0..WIDTH {
            let (a, p) = cell.local(y, x);
            if !cell.inside(a, p) {
                continue;
            }
            let i = y * WIDTH + x;
            let signal = if stage < 0.35 {
                gauss(dist2(y, x, tips[old_pole]), red_tip_sigma)
            } else if stage < 0.75 {
                gauss(dist2(y, x, tips[0]), red_tip_sigma).max(gauss(dist2(y, x, tips[1]), red_tip_sigma))
            } else {
                gauss(a * a, 1.8)
            };
            red[i] = 0.2 + 0.75 * signal;

            green[i] = recipe.intensity
                * match recipe.pattern {
                    Pattern::Tips => tips
                        .iter()
                        .map(|&t| {
                            let d2 = dist2(y, x, t);
                            if d2 <= TIP_CUTOFF * TIP_CUTOFF {
                                gauss(d2, 3.0)
                            } else {
                                0.0
                            }
                        })
                        .fold(0.0, f32::max),
                    Pattern::Ring => gauss(a * a, 1.5),
                    Pattern::Dots => dots
                        .iter()
                        .map(|&d| gauss(dist2(y, x, d), 1.5))
                        .fold(0.0, f32::max),
                    Pattern::Cap => gauss(dist2(y, x, tips[cap_pole]), 0.3 * cell.width),
                };
        }
    }

    let noise = Normal::new(0.0, recipe.noise.max(0.0)).expect("finite noise level");
    let mut finish = |plane: &mut Vec<f32>| {
        for v in plane.iter_mut() {
            let n = if recipe.noise > 0.0 { noise.sample(rng) } else { 0.0 };
            *v = 2.0 * (*v + n).clamp(0.0, 1.0) - 1.0;
        }
    };
    finish(&mut red);
    finish(&mut green);
    Image2C {
        red: Plane(red),
        green: Plane(green),
        class,
    }
}

/// Renders `spec.count` images per class; each image has its own named random stream.
pub fn synth_generate(spec: &SynthSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut items = Vec::with_capacity(spec.classes.len() * spec.count);
    for (ci, recipe) in spec.classes.iter().enumerate() {
        for i in 0..spec.count {
            let mut rng = rng::stream(spec.seed, &format!("synth/{ci}/{i}"));
            items.push(render(spec, recipe, ci, &mut rng));
        }
    }
    Ok(Dataset::new(
        spec.classes.iter().map(|c| c.name.clone()).collect(),
        items,
    ))
}
