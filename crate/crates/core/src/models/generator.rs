use std::sync::atomic::{AtomicUsize, Ordering};

use autograd::{no_grad, Bound, ConvGeom, Float, ParamStore, Tensor, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{batch_norm, gaussian, BnBatchStat, BN_MOMENTUM, INIT_STD};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GeneratorKind {
    Dcgan,
    Separable,
    Multichannel,
    Star,
}

impl GeneratorKind {
    pub fn has_split_latent(self) -> bool {
        matches!(self, Self::Separable | Self::Star)
    }
}

impl std::str::FromStr for GeneratorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dcgan" => Ok(Self::Dcgan),
            "separable" => Ok(Self::Separable),
            "multichannel" => Ok(Self::Multichannel),
            "star" => Ok(Self::Star),
            other => Err(Error::Config(format!("unknown generator kind {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub kind: GeneratorKind,
    /// Number of green classes.
    pub c: usize,
    /// Channel count of the widest layer, summed over towers.
    pub base_width: usize,
    pub latent_dim: usize,
    pub bn_enabled: bool,
}

/// Initial spatial grid; four doublings reach 48×80.
const GRID: (usize, usize) = (3, 5);
const STAGES: usize = 4;

impl GeneratorSpec {
    pub fn new(kind: GeneratorKind, c: usize, base_width: usize) -> Self {
        Self {
            kind,
            c,
            base_width,
            latent_dim: 50,
            bn_enabled: true,
        }
    }

    /// A spec whose widest layer has `per_channel` filters per output channel,
    /// which keeps the width-to-output ratio equal across kinds.
    pub fn with_ratio(kind: GeneratorKind, c: usize, per_channel: usize) -> Self {
        let mut s = Self::new(kind, c, 0);
        s.base_width = per_channel * s.output_channels();
        s
    }

    pub fn output_channels(&self) -> usize {
        match self.kind {
            GeneratorKind::Dcgan | GeneratorKind::Separable => 2,
            GeneratorKind::Multichannel | GeneratorKind::Star => self.c + 1,
        }
    }

    pub fn towers(&self) -> usize {
        if self.kind.has_split_latent() {
            self.c + 1
        } else {
            1
        }
    }

    pub fn tower_width(&self) -> usize {
        self.base_width / self.towers()
    }

    /// Total latent dimension of one sample.
    pub fn latent_total(&self) -> usize {
        if self.kind.has_split_latent() {
            self.latent_dim * (self.c + 1)
        } else {
            2 * self.latent_dim
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.c == 0 {
            return bad("c must be at least 1".into());
        }
        if matches!(self.kind, GeneratorKind::Dcgan | GeneratorKind::Separable) && self.c != 1 {
            return bad(format!("{:?} generators have exactly one green channel", self.kind));
        }
        if self.latent_dim == 0 {
            return bad("latent_dim must be positive".into());
        }
        let tb = self.tower_width();
        if self.base_width % self.towers() != 0 || tb < 8 || tb % 8 != 0 {
            return bad(format!(
                "base_width {} gives {} filters per tower; need a multiple of 8",
                self.base_width,
                self.base_width as f64 / self.towers() as f64
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics; running estimates are reported for update.
    Train,
    /// Running statistics; deterministic.
    Eval,
}

/// Generator input: one joint vector per sample, or a red vector plus one per green tower.
#[derive(Clone, Debug, PartialEq)]
pub enum Latent<X> {
    Joint(X),
    Split { red: X, greens: Vec<X> },
}

impl<T: Float> Latent<Tensor<T>> {
    pub fn batch(&self) -> usize {
        match self {
            Self::Joint(z) | Self::Split { red: z, .. } => z.shape()[0],
        }
    }

    pub fn vars(&self, requires_grad: bool) -> Latent<Var<T>> {
        let wrap = |t: &Tensor<T>| {
            if requires_grad {
                Var::leaf(t.clone())
            } else {
                Var::constant(t.clone())
            }
        };
        match self {
            Self::Joint(z) => Latent::Joint(wrap(z)),
            Self::Split { red, greens } => Latent::Split {
                red: wrap(red),
                greens: greens.iter().map(wrap).collect(),
            },
        }
    }

    /// Row `i` of every component, as a batch of one.
    pub fn row(&self, i: usize) -> Self {
        let take = |t: &Tensor<T>| t.narrow(0, i, 1);
        match self {
            Self::Joint(z) => Self::Joint(take(z)),
            Self::Split { red, greens } => Self::Split {
                red: take(red),
                greens: greens.iter().map(take).collect(),
            },
        }
    }
}

/// Images produced by one forward pass, each `[B, 1, 48, 80]`.
pub struct GenOutput<T: Float> {
    pub red: Var<T>,
    /// Green channels in class order, restricted to the towers that were run.
    pub greens: Vec<Var<T>>,
    /// Class index of each entry of `greens`.
    pub green_ids: Vec<usize>,
    /// Batch-norm statistics of a training-mode pass.
    pub bn_stats: Vec<BnBatchStat<T>>,
}

impl<T: Float> GenOutput<T> {
    /// `[B, 2, H, W]` red and green of class `k`.
    pub fn pair(&self, k: usize) -> Var<T> {
        let j = self
            .green_ids
            .iter()
            .position(|&g| g == k)
            .unwrap_or_else(|| panic!("green {k} was not generated"));
        Var::concat(&[self.red.clone(), self.greens[j].clone()], 1)
    }

    /// `[B, 1 + greens, H, W]`.
    pub fn full(&self) -> Var<T> {
        let mut parts = vec![self.red.clone()];
        parts.extend(self.greens.iter().cloned());
        Var::concat(&parts, 1)
    }
}

/// Up-convolution ladder geometry shared by every tower.
fn stage_geom(l: usize, c_in: usize, c_out: usize) -> ConvGeom {
    let (h, w) = (GRID.0 << l, GRID.1 << l);
    ConvGeom::up(c_in, h, w, c_out, 4, 2, 1)
}

pub struct Generator<T: Float = f32> {
    pub spec: GeneratorSpec,
    pub params: ParamStore<T>,
    /// Batch-norm running means and variances.
    pub buffers: ParamStore<T>,
    red_passes: AtomicUsize,
}

impl<T: Float> Clone for Generator<T> {
    fn clone(&self) -> Self {
        Self {
            spec: self.spec.clone(),
            params: self.params.clone(),
            buffers: self.buffers.clone(),
            red_passes: AtomicUsize::new(self.red_pass_count()),
        }
    }
}

struct TowerPlan {
    name: String,
    latent_in: usize,
    /// Feature widths after the projection and the first three up-convolutions.
    widths: [usize; STAGES],
    /// Extra input channels concatenated from the red tower at each level.
    side: [usize; STAGES],
    out: usize,
}

impl<T: Float> Generator<T> {
    /// Builds a generator with freshly initialized weights drawn from `rng`.
    pub fn new(spec: GeneratorSpec, rng: &mut impl Rng) -> Result<Self> {
        spec.validate()?;
        let mut g = Self {
            spec,
            params: ParamStore::new(),
            buffers: ParamStore::new(),
            red_passes: AtomicUsize::new(0),
        };
        for plan in g.plans() {
            g.init_tower(&plan, rng);
        }
        Ok(g)
    }

    /// Rebuilds a generator from stored tensors, checking names and shapes.
    pub fn from_parts(spec: GeneratorSpec, params: ParamStore<T>, buffers: ParamStore<T>) -> Result<Self> {
        let reference = Self::new(spec.clone(), &mut crate::rng::stream(0, "shape-check"))?;
        for (want, got) in [(&reference.params, &params), (&reference.buffers, &buffers)] {
            if want.names() != got.names()
                || want.tensors().iter().zip(got.tensors()).any(|(a, b)| a.shape() != b.shape())
            {
                return Err(Error::Config("stored tensors do not match the generator spec".into()));
            }
        }
        Ok(Self {
            spec,
            params,
            buffers,
            red_passes: AtomicUsize::new(0),
        })
    }

    fn plans(&self) -> Vec<TowerPlan> {
        let s = &self.spec;
        let tb = s.tower_width();
        let widths = [tb, tb / 2, tb / 4, tb / 8];
        if !s.kind.has_split_latent() {
            return vec![TowerPlan {
                name: "main".into(),
                latent_in: s.latent_total(),
                widths,
                side: [0; STAGES],
                out: s.output_channels(),
            }];
        }
        let mut plans = vec![TowerPlan {
            name: "red".into(),
            latent_in: s.latent_dim,
            widths,
            side: [0; STAGES],
            out: 1,
        }];
        for k in 0..s.c {
            plans.push(TowerPlan {
                name: format!("green{k}"),
                latent_in: s.latent_dim,
                widths,
                side: widths,
                out: 1,
            });
        }
        plans
    }

    fn init_tower(&mut self, p: &TowerPlan, rng: &mut impl Rng) {
        let bn = self.spec.bn_enabled;
        let (gh, gw) = GRID;
        let n = &p.name;
        self.params
            .insert(format!("{n}.fc.w"), gaussian(&[p.latent_in, p.widths[0] * gh * gw], 0.0, INIT_STD, rng));
        if !bn {
            self.params.insert(format!("{n}.fc.b"), Tensor::zeros(vec![p.widths[0] * gh * gw]));
        }
        for l in 0..STAGES {
            let c_in = p.widths[l] + p.side[l];
            let c_out = if l + 1 < STAGES { p.widths[l + 1] } else { p.out };
            if bn {
                self.params
                    .insert(format!("{n}.bn{l}.gamma"), gaussian(&[p.widths[l]], 1.0, INIT_STD, rng));
                self.params.insert(format!("{n}.bn{l}.beta"), Tensor::zeros(vec![p.widths[l]]));
                self.buffers.insert(format!("{n}.bn{l}.mean"), Tensor::zeros(vec![p.widths[l]]));
                self.buffers.insert(format!("{n}.bn{l}.var"), Tensor::ones(vec![p.widths[l]]));
            }
            let geom = stage_geom(l, c_in, c_out);
            self.params
                .insert(format!("{n}.up{l}.w"), gaussian(&geom.weight_shape(), 0.0, INIT_STD, rng));
            if !bn || l + 1 == STAGES {
                self.params.insert(format!("{n}.up{l}.b"), Tensor::zeros(vec![c_out]));
            }
        }
    }

    /// How often the red tower (or the single tower of joint kinds) has run.
    pub fn red_pass_count(&self) -> usize {
        self.red_passes.load(Ordering::Relaxed)
    }

    /// Runs one tower, returning its output and the post-activation features
    /// at every level (the inputs to each up-convolution, before concatenation).
    #[allow(clippy::too_many_arguments)]
    fn tower(
        &self,
        bound: &Bound<T>,
        plan: &TowerPlan,
        z: &Var<T>,
        side: Option<&[Var<T>]>,
        mode: Mode,
        stats: &mut Vec<BnBatchStat<T>>,
    ) -> (Var<T>, Vec<Var<T>>) {
        let b = z.shape()[0];
        let n = &plan.name;
        let p = |s: String| bound.get(&s);
        let bn = self.spec.bn_enabled;
        let (gh, gw) = GRID;
        let mut h = z.matmul(p(format!("{n}.fc.w")));
        if !bn {
            let bias = p(format!("{n}.fc.b"));
            h = h.add(&bias.reshape(vec![1, bias.shape()[0]]).broadcast_to(h.shape()));
        }
        let mut h = h.reshape(vec![b, plan.widths[0], gh, gw]);
        let mut features = Vec::with_capacity(STAGES);
        for l in 0..STAGES {
            if bn {
                let running = match mode {
                    Mode::Train => None,
                    Mode::Eval => Some((
                        self.buffers.get(&format!("{n}.bn{l}.mean")).expect("bn buffer"),
                        self.buffers.get(&format!("{n}.bn{l}.var")).expect("bn buffer"),
                    )),
                };
                h = batch_norm(
                    &h,
                    p(format!("{n}.bn{l}.gamma")),
                    p(format!("{n}.bn{l}.beta")),
                    running,
                    &format!("{n}.bn{l}"),
                    stats,
                );
            }
            h = h.relu();
            features.push(h.clone());
            let input = match side {
                Some(red) => Var::concat(&[h.clone(), red[l].clone()], 1),
                None => h.clone(),
            };
            let c_out = if l + 1 < STAGES { plan.widths[l + 1] } else { plan.out };
            let geom = stage_geom(l, input.shape()[1], c_out);
            h = input.conv_transpose2d(p(format!("{n}.up{l}.w")), geom);
            if !bn || l + 1 == STAGES {
                let bias = p(format!("{n}.up{l}.b"));
                h = h.add(&bias.reshape(vec![1, c_out, 1, 1]).broadcast_to(h.shape()));
            }
        }
        (h.tanh(), features)
    }

    fn check_latent(&self, z: &Var<T>, dim: usize, batch: usize) -> Result<()> {
        if z.shape() != [batch, dim] {
            return Err(Error::Shape(format!(
                "latent has shape {:?}, expected [{batch}, {dim}]",
                z.shape()
            )));
        }
        Ok(())
    }

    /// Forward pass over all towers.
    pub fn forward(&self, bound: &Bound<T>, z: &Latent<Var<T>>, mode: Mode) -> Result<GenOutput<T>> {
        match z {
            Latent::Joint(z) => self.forward_joint(bound, z, mode),
            Latent::Split { red, greens } => {
                if greens.len() != self.spec.c {
                    return Err(Error::Shape(format!(
                        "{} green latents for {} green towers",
                        greens.len(),
                        self.spec.c
                    )));
                }
                let pick: Vec<(usize, &Var<T>)> = greens.iter().enumerate().collect();
                self.forward_split(bound, red, &pick, mode)
            }
        }
    }

    /// Red channel and the greens of the listed classes only.
    pub fn forward_subset(
        &self,
        bound: &Bound<T>,
        z_red: &Var<T>,
        greens: &[(usize, &Var<T>)],
        mode: Mode,
    ) -> Result<GenOutput<T>> {
        if !self.spec.kind.has_split_latent() {
            return Err(Error::Contract("generator has no separate green latents".into()));
        }
        self.forward_split(bound, z_red, greens, mode)
    }

    fn forward_joint(&self, bound: &Bound<T>, z: &Var<T>, mode: Mode) -> Result<GenOutput<T>> {
        if self.spec.kind.has_split_latent() {
            return Err(Error::Shape("this generator takes split latents".into()));
        }
        let b = z.shape().first().copied().unwrap_or(0);
        self.check_latent(z, self.spec.latent_total(), b)?;
        let plan = &self.plans()[0];
        let mut stats = Vec::new();
        self.red_passes.fetch_add(1, Ordering::Relaxed);
        let (out, _) = self.tower(bound, plan, z, None, mode, &mut stats);
        let c = self.spec.output_channels();
        Ok(GenOutput {
            red: out.narrow(1, 0, 1),
            greens: (1..c).map(|k| out.narrow(1, k, 1)).collect(),
            green_ids: (0..c - 1).collect(),
            bn_stats: stats,
        })
    }

    fn forward_split(
        &self,
        bound: &Bound<T>,
        z_red: &Var<T>,
        greens: &[(usize, &Var<T>)],
        mode: Mode,
    ) -> Result<GenOutput<T>> {
        let b = z_red.shape().first().copied().unwrap_or(0);
        self.check_latent(z_red, self.spec.latent_dim, b)?;
        for (k, z) in greens {
            if *k >= self.spec.c {
                return Err(Error::Shape(format!("no green tower {k}")));
            }
            self.check_latent(z, self.spec.latent_dim, b)?;
        }
        let plans = self.plans();
        let mut stats = Vec::new();
        self.red_passes.fetch_add(1, Ordering::Relaxed);
        let (red, red_features) = self.tower(bound, &plans[0], z_red, None, mode, &mut stats);
        let mut out = Vec::with_capacity(greens.len());
        for (k, z) in greens {
            let (g, _) = self.tower(bound, &plans[k + 1], z, Some(&red_features), mode, &mut stats);
            out.push(g);
        }
        Ok(GenOutput {
            red,
            greens: out,
            green_ids: greens.iter().map(|(k, _)| *k).collect(),
            bn_stats: stats,
        })
    }

    /// Graph-free generation from latent values.
    pub fn generate(&self, z: &Latent<Tensor<T>>, mode: Mode) -> Result<GenOutput<T>> {
        no_grad(|| self.forward(&self.params.bind(false), &z.vars(false), mode))
    }

    /// Folds training-mode batch statistics into the running estimates.
    pub fn update_running(&mut self, stats: &[BnBatchStat<T>]) {
        let m = T::from_f64c(BN_MOMENTUM);
        for s in stats {
            for (suffix, batch) in [("mean", &s.mean), ("var", &s.var)] {
                let buf = self
                    .buffers
                    .get_mut(&format!("{}.{suffix}", s.layer))
                    .expect("bn buffer");
                *buf = buf.zip_map(batch, |r, b| (T::one() - m) * r + m * b);
            }
        }
    }

    /// Draws a latent batch from the standard normal prior (red first, then greens in order).
    pub fn sample_latent(&self, batch: usize, rng: &mut impl Rng) -> Latent<Tensor<T>> {
        let d = self.spec.latent_dim;
        if self.spec.kind.has_split_latent() {
            let red = gaussian(&[batch, d], 0.0, 1.0, rng);
            let greens = (0..self.spec.c).map(|_| gaussian(&[batch, d], 0.0, 1.0, rng)).collect();
            Latent::Split { red, greens }
        } else {
            Latent::Joint(gaussian(&[batch, self.spec.latent_total()], 0.0, 1.0, rng))
        }
    }

    /// Parameter names belonging to the red tower.
    pub fn red_param_names(&self) -> Vec<String> {
        self.params
            .names()
            .iter()
            .filter(|n| n.starts_with("red."))
            .cloned()
            .collect()
    }

    /// Zeroes every red→green connection, so greens depend on green latents only.
    pub fn ablate_cross_connections(&mut self) -> Result<()> {
        if !self.spec.kind.has_split_latent() {
            return Err(Error::Contract("generator has no red→green connections".into()));
        }
        let tb = self.spec.tower_width();
        let widths = [tb, tb / 2, tb / 4, tb / 8];
        for k in 0..self.spec.c {
            for (l, &own) in widths.iter().enumerate() {
                let w = self
                    .params
                    .get_mut(&format!("green{k}.up{l}.w"))
                    .expect("green weight");
                // Weight layout is [input channels, output channels, k, k]; red inputs follow the own ones.
                let per_in: usize = w.shape()[1..].iter().product();
                w.data_mut()[own * per_in..].fill(T::zero());
            }
        }
        Ok(())
    }
}
