//! The alternating training loop with checkpoints, a CSV log and sample grids.

mod checkpoint;
mod log;

use std::fs;
use std::path::{Path, PathBuf};

use autograd::{Float, Tensor};
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::Checkpoint;
pub use log::{read_log, TrainingLog, LOG_FILE};

use crate::data::{mine_multichannel, Dataset, SplitTag, PIXELS};
use crate::error::{Error, Result};
use crate::models::{
    Discriminator, DiscriminatorSpec, Generator, GeneratorKind, GeneratorSpec, Head, Latent, Mode,
};
use crate::objectives::{
    adversarial_step, discriminator_count, Adversaries, LossReport, Objective, OptimSettings, Optimizer,
    StepSettings, DEFAULT_CLIP, DEFAULT_LAMBDA,
};
use crate::render::Rgb;
use crate::rng::{self, StreamRng};

/// Generator steps at which a checkpoint is always written once reached.
pub const MILESTONES: [u64; 6] = [100, 1_000, 2_000, 5_000, 10_000, 50_000];
/// Consecutive non-finite steps tolerated before training is aborted.
pub const DIVERGENCE_PATIENCE: u64 = 100;
const GRID_SIDE: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: GeneratorKind,
    /// Filters of the widest generator layer per output channel.
    pub width_per_channel: usize,
    pub latent_dim: usize,
    pub batch_norm: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            kind: GeneratorKind::Separable,
            width_per_channel: 32,
            latent_dim: 50,
            batch_norm: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub objective: Objective,
    pub model: ModelConfig,
    /// Filters of the first discriminator convolution.
    pub discriminator_width: usize,
    /// Dataset directory, when training from disk.
    pub data: Option<PathBuf>,
    /// Classes to train on, in green-channel order; empty means all.
    pub classes: Vec<String>,
    /// Total generator steps.
    pub steps: u64,
    /// Critic iterations per generator step; defaults to 5, and is always 1 for `gan`.
    pub n_critic: Option<usize>,
    pub batch_size: usize,
    /// Optimizer for generator and discriminators; defaults follow the objective.
    pub optimizer: Option<OptimSettings>,
    pub lambda: f64,
    pub clip: f64,
    /// Extra checkpoints every this many steps (0 disables).
    pub checkpoint_interval: u64,
    pub sample_grids: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            objective: Objective::WganGp,
            model: ModelConfig::default(),
            discriminator_width: 32,
            data: None,
            classes: Vec::new(),
            steps: 2_000,
            n_critic: None,
            batch_size: 64,
            optimizer: None,
            lambda: DEFAULT_LAMBDA,
            clip: DEFAULT_CLIP,
            checkpoint_interval: 0,
            sample_grids: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn n_critic(&self) -> usize {
        match self.objective {
            Objective::Gan => 1,
            _ => self.n_critic.unwrap_or(5),
        }
    }

    pub fn optimizer(&self) -> OptimSettings {
        self.optimizer.unwrap_or_else(|| self.objective.default_optimizer())
    }

    pub fn step_settings(&self) -> StepSettings {
        StepSettings {
            objective: self.objective,
            n_critic: self.n_critic(),
            batch_size: self.batch_size,
            lambda: self.lambda,
            clip: self.clip,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.n_critic == Some(0) {
            return bad("n_critic must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.lambda >= 0.0) || !(self.clip > 0.0) {
            return bad("lambda must be non-negative and clip positive");
        }
        if self.discriminator_width == 0 {
            return bad("discriminator_width must be positive");
        }
        let lr = match self.optimizer() {
            OptimSettings::Adam { lr, .. } | OptimSettings::Rmsprop { lr } => lr,
        };
        if !(lr > 0.0) {
            return bad("learning rate must be positive");
        }
        Ok(())
    }

    /// Generator spec for `c` green classes.
    pub fn generator_spec(&self, c: usize) -> GeneratorSpec {
        let mut s = GeneratorSpec::with_ratio(self.model.kind, c, self.model.width_per_channel);
        s.latent_dim = self.model.latent_dim;
        s.bn_enabled = self.model.batch_norm;
        s
    }

    pub fn discriminator_spec(&self, gen: &GeneratorSpec) -> DiscriminatorSpec {
        let channels = if gen.kind == GeneratorKind::Star { 2 } else { gen.output_channels() };
        let head = if self.objective == Objective::Gan {
            Head::Sigmoid
        } else {
            Head::Unconstrained
        };
        DiscriminatorSpec::new(channels, self.discriminator_width, head)
    }
}

/// Training images grouped by the discriminator that sees them, flattened channel-major.
struct Pools<T> {
    channels: usize,
    pools: Vec<Vec<Vec<T>>>,
    c: usize,
}

fn flatten<T: Float>(planes: &[&crate::data::Plane]) -> Vec<T> {
    planes
        .iter()
        .flat_map(|p| p.values().iter().map(|&v| T::from_f64c(v as f64)))
        .collect()
}

fn build_pools<T: Float>(cfg: &TrainConfig, ds: &Dataset) -> Result<Pools<T>> {
    let classes: Vec<String> = if cfg.classes.is_empty() {
        ds.classes.clone()
    } else {
        cfg.classes.clone()
    };
    let ids = classes
        .iter()
        .map(|n| {
            ds.class_index(n)
                .ok_or_else(|| Error::Config(format!("class {n:?} not in dataset")))
        })
        .collect::<Result<Vec<_>>>()?;
    let pair = |i: usize| flatten::<T>(&[&ds.items[i].red, &ds.items[i].green]);
    let (channels, c, pools) = match cfg.model.kind {
        GeneratorKind::Dcgan | GeneratorKind::Separable => {
            let pool: Vec<_> = ds
                .indices(SplitTag::Train)
                .into_iter()
                .filter(|&i| ids.contains(&ds.items[i].class))
                .map(pair)
                .collect();
            (2, 1, vec![pool])
        }
        GeneratorKind::Star => {
            let pools = ids
                .iter()
                .map(|&ci| ds.indices_of(SplitTag::Train, ci).into_iter().map(pair).collect())
                .collect();
            (2, classes.len(), pools)
        }
        GeneratorKind::Multichannel => {
            let mined = mine_multichannel(ds, &classes, 1)?;
            let pool = mined
                .items
                .iter()
                .map(|it| {
                    let mut planes = vec![&it.red];
                    planes.extend(it.greens.iter());
                    flatten::<T>(&planes)
                })
                .collect();
            (classes.len() + 1, classes.len(), vec![pool])
        }
    };
    for (k, p) in pools.iter().enumerate() {
        if p.is_empty() {
            return Err(Error::Data(format!("no training images for discriminator {k}")));
        }
    }
    Ok(Pools { channels, pools, c })
}

impl<T: Float> Pools<T> {
    fn sample(&self, batch: usize, rng: &mut StreamRng) -> Vec<Tensor<T>> {
        let (h, w) = (crate::data::HEIGHT, crate::data::WIDTH);
        self.pools
            .iter()
            .map(|pool| {
                let mut data = Vec::with_capacity(batch * self.channels * PIXELS);
                for _ in 0..batch {
                    data.extend_from_slice(&pool[rng.random_range(0..pool.len())]);
                }
                Tensor::from_vec(vec![batch, self.channels, h, w], data)
            })
            .collect()
    }
}

/// In-memory training state: models, optimizers, data pools and the step counter.
pub struct Trainer<T: Float = f32> {
    pub config: TrainConfig,
    pub adv: Adversaries<T>,
    optim: OptimSettings,
    step: u64,
    pools: Pools<T>,
}

impl<T: Float> Trainer<T> {
    /// Fresh models initialized from the configured seed.
    pub fn new(config: TrainConfig, ds: &Dataset) -> Result<Self> {
        config.validate()?;
        let pools = build_pools(&config, ds)?;
        let spec = config.generator_spec(pools.c);
        let gen = Generator::new(spec, &mut rng::stream(config.seed, "init/generator"))?;
        let dspec = config.discriminator_spec(&gen.spec);
        let discs = (0..discriminator_count(&gen))
            .map(|k| Discriminator::new(dspec.clone(), &mut rng::stream(config.seed, &format!("init/discriminator/{k}"))))
            .collect::<Result<Vec<_>>>()?;
        let optim = config.optimizer();
        let adv = Adversaries {
            g_opt: Optimizer::new(optim, &gen.params),
            d_opts: discs.iter().map(|d| Optimizer::new(optim, &d.params)).collect(),
            gen,
            discs,
        };
        Ok(Self {
            config,
            adv,
            optim,
            step: 0,
            pools,
        })
    }

    /// Continues from a checkpoint; its models must match what `config` would build.
    pub fn from_checkpoint(ckpt: Checkpoint<T>, config: TrainConfig, ds: &Dataset) -> Result<Self> {
        config.validate()?;
        let pools = build_pools::<T>(&config, ds)?;
        let spec = config.generator_spec(pools.c);
        if ckpt.gen.spec != spec {
            return Err(Error::Config(format!(
                "checkpoint generator {:?} does not match the configured {:?}",
                ckpt.gen.spec, spec
            )));
        }
        let dspec = config.discriminator_spec(&spec);
        if ckpt.discs.len() != discriminator_count(&ckpt.gen) || ckpt.discs.iter().any(|d| d.spec != dspec) {
            return Err(Error::Config("checkpoint discriminators do not match the configuration".into()));
        }
        let optim = config.optimizer();
        let ((g_set, g_opt), d_opts) = ckpt
            .optimizers
            .ok_or_else(|| Error::Config("checkpoint has no optimizer state".into()))?;
        if g_set != optim || d_opts.iter().any(|(s, _)| *s != optim) {
            return Err(Error::Config("checkpoint optimizer settings differ from the configuration".into()));
        }
        Ok(Self {
            config,
            adv: Adversaries {
                gen: ckpt.gen,
                discs: ckpt.discs,
                g_opt,
                d_opts: d_opts.into_iter().map(|(_, o)| o).collect(),
            },
            optim,
            step: ckpt.step,
            pools,
        })
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    /// Runs generator step `step() + 1` with its own random stream.
    pub fn step_once(&mut self) -> Result<LossReport> {
        let next = self.step + 1;
        let mut rng = rng::stream(self.config.seed, &format!("train/step/{next}"));
        let settings = self.config.step_settings();
        let pools = &self.pools;
        let mut sampler = |r: &mut StreamRng| Ok(pools.sample(settings.batch_size, r));
        let result = adversarial_step(&mut self.adv, &settings, &mut sampler, &mut rng);
        self.step = next;
        result
    }

    pub fn checkpoint(&self) -> Checkpoint<T> {
        Checkpoint {
            step: self.step,
            config: Some(self.config.clone()),
            gen: self.adv.gen.clone(),
            discs: self.adv.discs.clone(),
            optimizers: Some((
                (self.optim, self.adv.g_opt.clone()),
                self.adv.d_opts.iter().map(|o| (self.optim, o.clone())).collect(),
            )),
        }
    }

    pub fn models_finite(&self) -> bool {
        self.adv.gen.params.all_finite()
            && self.adv.gen.buffers.all_finite()
            && self.adv.discs.iter().all(|d| d.params.all_finite())
    }

    /// An 8×8 grid of red/green overlays from fixed latents.
    pub fn sample_grid(&self, z: &Latent<Tensor<T>>) -> Result<Rgb> {
        let out = self.adv.gen.generate(z, Mode::Train)?;
        let plane = |v: &autograd::Var<T>, i: usize| -> Vec<f32> {
            v.value().data()[i * PIXELS..(i + 1) * PIXELS]
                .iter()
                .map(|x| x.as_f64() as f32)
                .collect()
        };
        let tiles: Vec<Rgb> = (0..z.batch())
            .map(|i| {
                let green = &out.greens[(i / GRID_SIDE) % out.greens.len()];
                Rgb::overlay(&plane(&out.red, i), Some(&plane(green, i)))
            })
            .collect();
        Ok(Rgb::grid(&tiles, GRID_SIDE, 2))
    }
}

/// Whether a checkpoint is due after finishing `step`.
pub fn checkpoint_due(step: u64, total: u64, interval: u64) -> bool {
    step == total || MILESTONES.contains(&step) || (interval > 0 && step % interval == 0)
}

pub fn checkpoint_path(dir: &Path, step: u64) -> PathBuf {
    dir.join(format!("checkpoint_{step:07}.ckpt"))
}

#[derive(Clone, Debug, Default)]
pub struct TrainOutcome {
    /// Checkpoints written by this run, in step order.
    pub checkpoints: Vec<(u64, PathBuf)>,
    pub final_step: u64,
    pub reports: Vec<LossReport>,
}

/// Trains from scratch, writing checkpoints, the log and sample grids into `out`.
pub fn train<T: Float>(config: TrainConfig, ds: &Dataset, out: &Path) -> Result<TrainOutcome> {
    let trainer = Trainer::<T>::new(config, ds)?;
    run(trainer, out, true)
}

/// Continues the run stored in `checkpoint` up to `config.steps`.
pub fn resume<T: Float>(checkpoint: &Path, config: TrainConfig, ds: &Dataset, out: &Path) -> Result<TrainOutcome> {
    let ckpt = Checkpoint::<T>::load(checkpoint)?;
    let trainer = Trainer::from_checkpoint(ckpt, config, ds)?;
    run(trainer, out, false)
}

fn run<T: Float>(mut trainer: Trainer<T>, out: &Path, fresh: bool) -> Result<TrainOutcome> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let pairs = trainer.adv.discs.len();
    let mut log = TrainingLog::open(out, pairs, (!fresh).then_some(trainer.step()))?;
    let grid_z = trainer
        .adv
        .gen
        .sample_latent(GRID_SIDE * GRID_SIDE, &mut rng::stream(trainer.config.seed, "train/sample-grid"));
    let total = trainer.config.steps;
    let interval = trainer.config.checkpoint_interval;
    let mut outcome = TrainOutcome::default();
    let mut last_good: Option<PathBuf> = None;

    let emit = |trainer: &Trainer<T>, outcome: &mut TrainOutcome, last_good: &mut Option<PathBuf>| -> Result<()> {
        if !trainer.models_finite() {
            ::log::warn!("skipping checkpoint at step {}: non-finite parameters", trainer.step());
            return Ok(());
        }
        let path = checkpoint_path(out, trainer.step());
        trainer.checkpoint().save(&path)?;
        if trainer.config.sample_grids {
            let grid = trainer.sample_grid(&grid_z)?;
            grid.write_png(&out.join(format!("samples_{:07}.png", trainer.step())))?;
        }
        outcome.checkpoints.push((trainer.step(), path.clone()));
        *last_good = Some(path);
        Ok(())
    };

    if fresh {
        emit(&trainer, &mut outcome, &mut last_good)?;
    }
    let mut bad_streak = 0;
    while trainer.step() < total {
        let report = match trainer.step_once() {
            Ok(r) => r,
            Err(Error::Numeric(msg)) => {
                ::log::warn!("step {}: {msg}", trainer.step());
                LossReport {
                    d_loss: f64::NAN,
                    g_loss: f64::NAN,
                    penalty: f64::NAN,
                    pairs: Vec::new(),
                }
            }
            Err(e) => return Err(e),
        };
        let step = trainer.step();
        log.append(step, &report)?;
        if report.is_finite() {
            bad_streak = 0;
        } else {
            bad_streak += 1;
            if bad_streak >= DIVERGENCE_PATIENCE {
                return Err(Error::Divergence { step, last_good });
            }
        }
        if step % 100 == 0 {
            ::log::info!(
                "step {step}: d_loss {:.4} g_loss {:.4} penalty {:.4}",
                report.d_loss,
                report.g_loss,
                report.penalty
            );
        }
        if checkpoint_due(step, total, interval) {
            emit(&trainer, &mut outcome, &mut last_good)?;
        }
        outcome.reports.push(report);
    }
    outcome.final_step = trainer.step();
    Ok(outcome)
}
