//! Classifier two-sample test: a fresh discriminator is trained to tell two
//! sample collections apart on one half of a test set and scored on the other.

use std::thread;

use autograd::{grad_values, Tensor};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{split_test_for_c2st, Dataset, Image2C, SplitTag, HEIGHT, PIXELS, WIDTH};
use crate::error::{Error, Result};
use crate::models::{Discriminator, DiscriminatorSpec, Generator, GeneratorKind, Head, Mode};
use crate::objectives::{clip_weights, critic_loss, Objective, Optimizer, DEFAULT_CLIP, DEFAULT_LAMBDA};
use crate::rng::{stream, StreamRng};

pub const DEFAULT_SPLITS: usize = 10;
pub const DEFAULT_TRAIN_STEPS: usize = 5_000;

/// Which adversarial objective trains the test's classifier.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Flavor {
    Xent,
    Wgan,
    WganGp,
}

impl Flavor {
    pub fn objective(self) -> Objective {
        match self {
            Self::Xent => Objective::Gan,
            Self::Wgan => Objective::Wgan,
            Self::WganGp => Objective::WganGp,
        }
    }
}

impl std::str::FromStr for Flavor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "xent" => Ok(Self::Xent),
            "wgan" => Ok(Self::Wgan),
            "wgan-gp" => Ok(Self::WganGp),
            other => Err(Error::Config(format!("unknown C2ST flavor {other:?}"))),
        }
    }
}

impl std::fmt::Display for Flavor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Xent => "xent",
            Self::Wgan => "wgan",
            Self::WganGp => "wgan-gp",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct C2stConfig {
    pub flavor: Flavor,
    pub n_splits: usize,
    /// Classifier updates per split.
    pub train_steps: usize,
    pub batch_size: usize,
    /// Filters of the first convolution of the fresh discriminator.
    pub disc_width: usize,
    pub lambda: f64,
    pub clip: f64,
    pub seed: u64,
    /// Threads running splits concurrently; results do not depend on it.
    pub workers: usize,
}

impl Default for C2stConfig {
    fn default() -> Self {
        Self {
            flavor: Flavor::WganGp,
            n_splits: DEFAULT_SPLITS,
            train_steps: DEFAULT_TRAIN_STEPS,
            batch_size: 64,
            disc_width: 32,
            lambda: DEFAULT_LAMBDA,
            clip: DEFAULT_CLIP,
            seed: 0,
            workers: 1,
        }
    }
}

impl C2stConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_splits == 0 || self.train_steps == 0 || self.batch_size == 0 || self.workers == 0 {
            return Err(Error::Config(
                "n_splits, train_steps, batch_size and workers must be positive".into(),
            ));
        }
        self.disc_spec().validate()
    }

    pub fn disc_spec(&self) -> DiscriminatorSpec {
        let head = if self.flavor == Flavor::Xent {
            Head::Sigmoid
        } else {
            Head::Unconstrained
        };
        DiscriminatorSpec::new(2, self.disc_width, head)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct C2stReport {
    pub flavor: Flavor,
    /// Green class of a per-pair sub-report.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    /// Training step of the evaluated checkpoint, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<u64>,
    /// Finite split scores in split order; excluded splits are left out.
    pub per_split_scores: Vec<f64>,
    pub median: f64,
    pub mad: f64,
    /// Splits whose score was not finite.
    pub excluded_splits: Vec<usize>,
    /// One report per green channel for multi-output generators; the parent pools them.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sub_reports: Vec<C2stReport>,
}

impl C2stReport {
    fn from_scores(flavor: Flavor, label: Option<String>, scores: Vec<f64>) -> Result<Self> {
        let excluded_splits: Vec<usize> = (0..scores.len()).filter(|&i| !scores[i].is_finite()).collect();
        if !excluded_splits.is_empty() {
            ::log::warn!("C2ST: excluding non-finite splits {excluded_splits:?}");
        }
        let kept: Vec<f64> = scores.into_iter().filter(|s| s.is_finite()).collect();
        if kept.is_empty() {
            return Err(Error::Numeric("every C2ST split produced a non-finite score".into()));
        }
        let (median, mad) = median_mad(&kept)?;
        Ok(Self {
            flavor,
            label,
            step: None,
            per_split_scores: kept,
            median,
            mad,
            excluded_splits,
            sub_reports: Vec::new(),
        })
    }
}

/// Median and median absolute deviation; even counts average the two middle values.
pub fn median_mad(xs: &[f64]) -> Result<(f64, f64)> {
    fn median(v: &mut [f64]) -> f64 {
        v.sort_by(f64::total_cmp);
        let n = v.len();
        if n % 2 == 1 {
            v[n / 2]
        } else {
            0.5 * (v[n / 2 - 1] + v[n / 2])
        }
    }
    if xs.is_empty() {
        return Err(Error::Protocol("median of an empty sample".into()));
    }
    let mut v = xs.to_vec();
    let m = median(&mut v);
    let mut dev: Vec<f64> = xs.iter().map(|x| (x - m).abs()).collect();
    Ok((m, median(&mut dev)))
}

/// The side of the test that is compared against real test images.
pub enum Source<'a> {
    /// A second collection of real two-channel images, halved per split like the test set.
    Real(&'a [Image2C]),
    /// Fresh samples of a frozen generator; `pair` selects the green channel of multi-output models.
    Generator { gen: &'a Generator<f32>, pair: Option<usize> },
}

fn flatten(items: &[&Image2C]) -> Tensor<f32> {
    let mut data = Vec::with_capacity(items.len() * 2 * PIXELS);
    for it in items {
        data.extend_from_slice(it.red.values());
        data.extend_from_slice(it.green.values());
    }
    Tensor::from_vec(vec![items.len(), 2, HEIGHT, WIDTH], data)
}

fn with_replacement(pool: &[Image2C], n: usize, rng: &mut StreamRng) -> Tensor<f32> {
    let picks: Vec<&Image2C> = (0..n).map(|_| &pool[rng.random_range(0..pool.len())]).collect();
    flatten(&picks)
}

/// Generator samples in training-mode batches of at most `batch`, as `[n, 2, H, W]`.
fn generated(gen: &Generator<f32>, pair: Option<usize>, n: usize, batch: usize, rng: &mut StreamRng) -> Result<Tensor<f32>> {
    let mut data = Vec::with_capacity(n * 2 * PIXELS);
    let mut done = 0;
    while done < n {
        let b = batch.min(n - done);
        let out = gen.generate(&gen.sample_latent(b, rng), Mode::Train)?;
        let v = match pair {
            Some(k) => out.pair(k),
            None => out.full(),
        };
        if v.shape()[1] != 2 {
            return Err(Error::Config(format!("C2ST needs two-channel samples, got {}", v.shape()[1])));
        }
        data.extend_from_slice(v.value().data());
        done += b;
    }
    Ok(Tensor::from_vec(vec![n, 2, HEIGHT, WIDTH], data))
}

fn derived_seed(seed: u64, name: &str) -> u64 {
    stream(seed, name).random()
}

fn run_split(a: &Source, b: &[Image2C], cfg: &C2stConfig, scope: &str, s: usize) -> Result<f64> {
    let name = |what: &str| format!("c2st/{scope}/{s}/{what}");
    let protocol = |e: Error| match e {
        Error::Split(m) => Error::Protocol(m),
        other => other,
    };
    let (b_train, b_test) = split_test_for_c2st(b, derived_seed(cfg.seed, &name("halves"))).map_err(protocol)?;
    let a_halves = match a {
        Source::Real(items) => Some(split_test_for_c2st(items, derived_seed(cfg.seed, &name("source"))).map_err(protocol)?),
        Source::Generator { .. } => None,
    };
    let objective = cfg.flavor.objective();
    let mut d = Discriminator::<f32>::new(cfg.disc_spec(), &mut stream(cfg.seed, &name("init")))?;
    let mut opt = Optimizer::new(objective.default_optimizer(), &d.params);
    let draw_eps = |n: usize, rng: &mut StreamRng| -> Vec<f64> {
        if objective == Objective::WganGp {
            (0..n).map(|_| rng.random::<f64>()).collect()
        } else {
            Vec::new()
        }
    };

    let mut rng = stream(cfg.seed, &name("train"));
    let bs = cfg.batch_size;
    for _ in 0..cfg.train_steps {
        let real = with_replacement(&b_train, bs, &mut rng);
        let other = match (a, &a_halves) {
            (Source::Real(_), Some((a_train, _))) => with_replacement(a_train, bs, &mut rng),
            (Source::Generator { gen, pair }, _) => generated(gen, *pair, bs, bs, &mut rng)?,
            _ => unreachable!("real sources are always halved"),
        };
        let eps = draw_eps(bs, &mut rng);
        let bound = d.params.bind(true);
        let loss = match critic_loss(objective, &d, &bound, &real, &other, &eps, cfg.lambda) {
            Ok((loss, _)) if loss.value().all_finite() => loss,
            Ok(_) | Err(Error::Numeric(_)) => return Ok(f64::NAN),
            Err(e) => return Err(e),
        };
        let grads = grad_values(&loss, bound.vars());
        opt.step(&mut d.params, &grads);
        if objective == Objective::Wgan {
            clip_weights(&mut d.params, cfg.clip)?;
        }
    }

    let mut rng = stream(cfg.seed, &name("score"));
    let (real, other) = match (a, &a_halves) {
        (Source::Real(_), Some((_, a_test))) => {
            let n = b_test.len().min(a_test.len());
            (flatten(&b_test.iter().take(n).collect::<Vec<_>>()), flatten(&a_test.iter().take(n).collect::<Vec<_>>()))
        }
        (Source::Generator { gen, pair }, _) => {
            let n = b_test.len();
            (flatten(&b_test.iter().collect::<Vec<_>>()), generated(gen, *pair, n, bs, &mut rng)?)
        }
        _ => unreachable!("real sources are always halved"),
    };
    let eps = draw_eps(real.shape()[0], &mut rng);
    let bound = d.params.bind(false);
    let score = match critic_loss(objective, &d, &bound, &real, &other, &eps, cfg.lambda) {
        Ok((loss, _)) => -loss.item() as f64,
        Err(Error::Numeric(_)) => f64::NAN,
        Err(e) => return Err(e),
    };
    // The all-zero critic satisfies the clipping constraint, so the clipped dual is never below zero.
    Ok(if objective == Objective::Wgan { score.max(0.0) } else { score })
}

fn run_report(a: &Source, b: &[Image2C], cfg: &C2stConfig, scope: &str, label: Option<String>) -> Result<C2stReport> {
    cfg.validate()?;
    if b.len() < 2 {
        return Err(Error::Protocol(format!("need at least 2 real test items, got {}", b.len())));
    }
    let workers = cfg.workers.min(cfg.n_splits);
    let mut scores = vec![f64::NAN; cfg.n_splits];
    thread::scope(|sc| -> Result<()> {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                sc.spawn(move || {
                    (w..cfg.n_splits)
                        .step_by(workers)
                        .map(|s| run_split(a, b, cfg, scope, s).map(|v| (s, v)))
                        .collect::<Result<Vec<_>>>()
                })
            })
            .collect();
        for h in handles {
            for (s, v) in h.join().expect("C2ST worker panicked")? {
                scores[s] = v;
            }
        }
        Ok(())
    })?;
    C2stReport::from_scores(cfg.flavor, label, scores)
}

/// Scores `a` against the real collection `b`; `b` is split into halves anew for each split.
pub fn c2st_score(a: &Source, b: &[Image2C], cfg: &C2stConfig) -> Result<C2stReport> {
    run_report(a, b, cfg, "score", None)
}

/// Train images of `class_a` against test images of `class_b`.
pub fn c2st_real(ds: &Dataset, class_a: &str, class_b: &str, cfg: &C2stConfig) -> Result<C2stReport> {
    let idx = |n: &str| ds.class_index(n).ok_or_else(|| Error::Config(format!("class {n:?} not in dataset")));
    let a = ds.items_of(SplitTag::Train, idx(class_a)?);
    let b = ds.items_of(SplitTag::Test, idx(class_b)?);
    run_report(&Source::Real(&a), &b, cfg, &format!("real/{class_a}/{class_b}"), None)
}

/// Evaluates a frozen generator against the test split of `ds`.
///
/// `classes` names the green channels in generator order. Two-channel generators
/// are compared with the pooled test images of those classes. Multi-output
/// generators get one sub-report per green channel against its class, and the
/// returned report pools their split scores.
pub fn c2st_generator(gen: &Generator<f32>, ds: &Dataset, classes: &[String], cfg: &C2stConfig) -> Result<C2stReport> {
    let ids = classes
        .iter()
        .map(|n| ds.class_index(n).ok_or_else(|| Error::Config(format!("class {n:?} not in dataset"))))
        .collect::<Result<Vec<_>>>()?;
    match gen.spec.kind {
        GeneratorKind::Dcgan | GeneratorKind::Separable => {
            let b: Vec<Image2C> = ds
                .indices(SplitTag::Test)
                .into_iter()
                .filter(|&i| ids.contains(&ds.items[i].class))
                .map(|i| ds.items[i].clone())
                .collect();
            run_report(&Source::Generator { gen, pair: None }, &b, cfg, "generator", None)
        }
        GeneratorKind::Star | GeneratorKind::Multichannel => {
            if gen.spec.c != classes.len() {
                return Err(Error::Config(format!(
                    "generator has {} green channels but {} classes were named",
                    gen.spec.c,
                    classes.len()
                )));
            }
            let subs = ids
                .iter()
                .enumerate()
                .map(|(k, &ci)| {
                    let b = ds.items_of(SplitTag::Test, ci);
                    let source = Source::Generator { gen, pair: Some(k) };
                    run_report(&source, &b, cfg, &format!("generator/{k}"), Some(classes[k].clone()))
                })
                .collect::<Result<Vec<_>>>()?;
            let pooled: Vec<f64> = subs.iter().flat_map(|r| r.per_split_scores.iter().copied()).collect();
            let mut report = C2stReport::from_scores(cfg.flavor, None, pooled)?;
            report.sub_reports = subs;
            Ok(report)
        }
    }
}
