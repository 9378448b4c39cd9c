//! Latent-space probes of a frozen generator: reconstruction of held-out images,
//! prior negative log-likelihood, a nearest-neighbour baseline and interpolation strips.

use std::cell::RefCell;
use std::f64::consts::PI;
use std::thread;

use argmin::core::{CostFunction, Executor, Gradient, State};
use argmin::solver::linesearch::MoreThuenteLineSearch;
use argmin::solver::quasinewton::LBFGS;
use autograd::{grad_values, Float, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::data::{Image2C, HEIGHT, PIXELS, WIDTH};
use crate::error::{Error, Result};
use crate::models::{Generator, GeneratorKind, Latent, Mode};
use crate::render::Rgb;
use crate::rng::{normal_vec_f64, stream};

pub const DEFAULT_RESTARTS: usize = 5;
pub const DEFAULT_ITERS: usize = 50;
pub const LBFGS_MEMORY: usize = 10;
/// Below this angle (radians) slerp falls back to linear interpolation.
pub const SLERP_MIN_ANGLE: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReconMode {
    Regular,
    Separable,
}

impl std::str::FromStr for ReconMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "regular" => Ok(Self::Regular),
            "separable" => Ok(Self::Separable),
            other => Err(Error::Config(format!("unknown reconstruction mode {other:?}"))),
        }
    }
}

impl std::fmt::Display for ReconMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Regular => "regular",
            Self::Separable => "separable",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReconConfig {
    pub restarts: usize,
    /// L-BFGS iterations per restart, and per stage in separable mode.
    pub iters: usize,
    pub seed: u64,
    /// Threads reconstructing distinct targets; results do not depend on it.
    pub workers: usize,
}

impl Default for ReconConfig {
    fn default() -> Self {
        Self {
            restarts: DEFAULT_RESTARTS,
            iters: DEFAULT_ITERS,
            seed: 0,
            workers: 1,
        }
    }
}

impl ReconConfig {
    pub fn validate(&self) -> Result<()> {
        if self.restarts == 0 || self.workers == 0 {
            return Err(Error::Config("restarts and workers must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReconResult {
    pub mode: ReconMode,
    /// Best latent; split generators store the red part followed by the green part.
    pub best_latent: Vec<f64>,
    /// Mean squared error over all channel-pixels of the best restart.
    pub l2_error: f64,
    pub nll: f64,
    pub restart_errors: Vec<f64>,
    /// Red-stage and green-stage errors of the best separable restart.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage_errors: Option<(f64, f64)>,
}

/// Negative log density of `z` under the standard normal prior.
pub fn latent_nll(z: &[f64]) -> f64 {
    0.5 * z.iter().map(|v| v * v).sum::<f64>() + 0.5 * z.len() as f64 * (2.0 * PI).ln()
}

/// Mean and standard deviation of [`latent_nll`] for draws from the prior in `d` dimensions.
pub fn prior_nll_moments(d: usize) -> (f64, f64) {
    let d = d as f64;
    (0.5 * d * (1.0 + (2.0 * PI).ln()), (0.5 * d).sqrt())
}

/// Spherical interpolation along the great circle through `z0` and `z1`.
pub fn slerp(z0: &[f64], z1: &[f64], t: f64) -> Result<Vec<f64>> {
    if z0.len() != z1.len() {
        return Err(Error::Shape(format!("slerp between lengths {} and {}", z0.len(), z1.len())));
    }
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let (n0, n1) = (norm(z0), norm(z1));
    if n0 == 0.0 || n1 == 0.0 {
        return Err(Error::Config("slerp endpoints must be non-zero".into()));
    }
    let cos = (z0.iter().zip(z1).map(|(a, b)| a * b).sum::<f64>() / (n0 * n1)).clamp(-1.0, 1.0);
    let omega = cos.acos();
    let (a, b) = if omega < SLERP_MIN_ANGLE {
        (1.0 - t, t)
    } else {
        let s = omega.sin();
        (((1.0 - t) * omega).sin() / s, (t * omega).sin() / s)
    };
    Ok(z0.iter().zip(z1).map(|(x, y)| a * x + b * y).collect())
}

fn pair_mse(a: &Image2C, b: &Image2C) -> f64 {
    let sq = |x: &[f32], y: &[f32]| x.iter().zip(y).map(|(p, q)| (*p as f64 - *q as f64).powi(2)).sum::<f64>();
    (sq(a.red.values(), b.red.values()) + sq(a.green.values(), b.green.values())) / (2 * PIXELS) as f64
}

/// Closest training image over both channels, as `(index, mean squared error)`.
pub fn nn_baseline(target: &Image2C, train: &[Image2C]) -> Result<(usize, f64)> {
    train
        .iter()
        .enumerate()
        .map(|(i, it)| (i, pair_mse(target, it)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .ok_or_else(|| Error::Data("nearest-neighbour search over an empty training set".into()))
}

/// How a latent vector becomes a `[1, 2, H, W]` red/green pair.
#[derive(Clone, Copy)]
struct View<'a, T: Float> {
    gen: &'a Generator<T>,
    slot: usize,
}

impl<T: Float> View<'_, T> {
    fn split(&self) -> bool {
        self.gen.spec.kind.has_split_latent()
    }

    /// Latent length of the optimized vector.
    fn dim(&self) -> usize {
        if self.split() {
            2 * self.gen.spec.latent_dim
        } else {
            self.gen.spec.latent_total()
        }
    }

    fn render(&self, red: &Var<T>, green: Option<&Var<T>>) -> Result<Var<T>> {
        let bound = self.gen.params.bind(false);
        match self.gen.spec.kind {
            GeneratorKind::Dcgan => Ok(self.gen.forward(&bound, &Latent::Joint(red.clone()), Mode::Eval)?.full()),
            GeneratorKind::Multichannel => Ok(self.gen.forward(&bound, &Latent::Joint(red.clone()), Mode::Eval)?.pair(self.slot)),
            GeneratorKind::Separable | GeneratorKind::Star => {
                let green = green.expect("split generators take a green latent");
                Ok(self
                    .gen
                    .forward_subset(&bound, red, &[(self.slot, green)], Mode::Eval)?
                    .pair(self.slot))
            }
        }
    }
}

fn row<T: Float>(v: &[f64]) -> Tensor<T> {
    Tensor::from_vec(vec![1, v.len()], v.iter().map(|&x| T::from_f64c(x)).collect())
}

fn target_tensor<T: Float>(img: &Image2C) -> Tensor<T> {
    let data = img
        .red
        .values()
        .iter()
        .chain(img.green.values())
        .map(|&v| T::from_f64c(v as f64))
        .collect();
    Tensor::from_vec(vec![1, 2, HEIGHT, WIDTH], data)
}

/// Which channels enter the loss.
#[derive(Clone, Copy, PartialEq)]
enum Channels {
    Both,
    Red,
    Green,
}

/// Which part of the latent is free; the other part is held at the given values.
enum Free<'a> {
    All,
    Red { green: &'a [f64] },
    Green { red: &'a [f64] },
}

/// Mean squared error and its gradient with respect to the free latent entries.
fn loss_and_grad<T: Float>(
    view: View<T>,
    target: &Tensor<T>,
    channels: Channels,
    free: &Free,
    x: &[f64],
) -> Result<(f64, Vec<f64>)> {
    let d = view.gen.spec.latent_dim;
    let leaf = Var::leaf(row::<T>(x));
    let out = match (free, view.split()) {
        (Free::All, false) => view.render(&leaf, None)?,
        (Free::All, true) => {
            let red = leaf.narrow(1, 0, d);
            let green = leaf.narrow(1, d, d);
            view.render(&red, Some(&green))?
        }
        (Free::Red { green }, true) => view.render(&leaf, Some(&Var::constant(row(green))))?,
        (Free::Green { red }, true) => view.render(&Var::constant(row(red)), Some(&leaf))?,
        _ => return Err(Error::Contract("generator has no latent separation".into())),
    };
    let target = Var::constant(target.clone());
    let (out, target) = match channels {
        Channels::Both => (out, target),
        Channels::Red => (out.narrow(1, 0, 1), target.narrow(1, 0, 1)),
        Channels::Green => (out.narrow(1, 1, 1), target.narrow(1, 1, 1)),
    };
    let loss = out.sub(&target).square().mean();
    let value = loss.item().as_f64();
    let g = grad_values(&loss, std::slice::from_ref(&leaf))
        .pop()
        .expect("one gradient");
    Ok((value, g.data().iter().map(|v| v.as_f64()).collect()))
}

/// Cost function for the solver; remembers the best point it has evaluated.
struct Problem<'a> {
    f: &'a dyn Fn(&[f64]) -> Result<(f64, Vec<f64>)>,
    last: RefCell<Option<(Vec<f64>, f64, Vec<f64>)>>,
    best: RefCell<Option<(f64, Vec<f64>)>>,
}

impl Problem<'_> {
    fn eval(&self, x: &[f64]) -> std::result::Result<(f64, Vec<f64>), argmin::core::Error> {
        if let Some((p, c, g)) = self.last.borrow().as_ref() {
            if p.as_slice() == x {
                return Ok((*c, g.clone()));
            }
        }
        let (c, g) = (self.f)(x).map_err(|e| argmin::core::Error::msg(e.to_string()))?;
        if !c.is_finite() || g.iter().any(|v| !v.is_finite()) {
            return Err(argmin::core::Error::msg("non-finite objective"));
        }
        let mut best = self.best.borrow_mut();
        if best.as_ref().is_none_or(|(b, _)| c < *b) {
            *best = Some((c, x.to_vec()));
        }
        *self.last.borrow_mut() = Some((x.to_vec(), c, g.clone()));
        Ok((c, g))
    }
}

impl CostFunction for &Problem<'_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, x: &Vec<f64>) -> std::result::Result<f64, argmin::core::Error> {
        self.eval(x).map(|r| r.0)
    }
}

impl Gradient for &Problem<'_> {
    type Param = Vec<f64>;
    type Gradient = Vec<f64>;

    fn gradient(&self, x: &Vec<f64>) -> std::result::Result<Vec<f64>, argmin::core::Error> {
        self.eval(x).map(|r| r.1)
    }
}

/// Runs L-BFGS from `x0` and returns the best point evaluated, which is never
/// worse than `x0`. A failed line search ends the run early but keeps its iterate.
fn minimize(f: &dyn Fn(&[f64]) -> Result<(f64, Vec<f64>)>, x0: Vec<f64>, iters: usize) -> Result<(Vec<f64>, f64)> {
    let problem = Problem {
        f,
        last: RefCell::new(None),
        best: RefCell::new(None),
    };
    let (c0, _) = f(&x0)?;
    *problem.best.borrow_mut() = Some((c0, x0.clone()));
    if iters > 0 && c0 > 0.0 {
        let solver = LBFGS::new(MoreThuenteLineSearch::new(), LBFGS_MEMORY);
        let run = Executor::new(&problem, solver)
            .configure(|s| s.param(x0).max_iters(iters as u64))
            .run();
        if let Err(e) = run {
            ::log::debug!("L-BFGS stopped early: {e}");
        } else if let Ok(r) = &run {
            ::log::trace!("L-BFGS finished after {} iterations", r.state().get_iter());
        }
    }
    let (c, x) = problem.best.into_inner().expect("initial point evaluated");
    Ok((x, c))
}

fn check_target<T: Float>(gen: &Generator<T>, slot: usize) -> Result<()> {
    let limit = match gen.spec.kind {
        GeneratorKind::Dcgan | GeneratorKind::Separable => 1,
        GeneratorKind::Multichannel | GeneratorKind::Star => gen.spec.c,
    };
    if slot >= limit {
        return Err(Error::Config(format!("green slot {slot} out of range for {limit} channels")));
    }
    Ok(())
}

fn initial(dim: usize, init: Option<&[f64]>, r: usize, seed: u64, name: &str) -> Result<Vec<f64>> {
    match init {
        Some(z) if r == 0 => {
            if z.len() != dim {
                return Err(Error::Shape(format!("initial latent has {} entries, expected {dim}", z.len())));
            }
            Ok(z.to_vec())
        }
        _ => Ok(normal_vec_f64(&mut stream(seed, &format!("{name}/restart/{r}")), dim)),
    }
}

/// Fits the whole latent (for star and multichannel models, the one of green slot
/// `slot`) to `target` by L-BFGS from `cfg.restarts` prior draws.
///
/// `init`, when given, replaces the first draw; `name` keys the random streams.
pub fn reconstruct_regular<T: Float>(
    gen: &Generator<T>,
    target: &Image2C,
    slot: usize,
    cfg: &ReconConfig,
    init: Option<&[f64]>,
    name: &str,
) -> Result<ReconResult> {
    cfg.validate()?;
    check_target(gen, slot)?;
    let view = View { gen, slot };
    let t = target_tensor::<T>(target);
    let f = |x: &[f64]| loss_and_grad(view, &t, Channels::Both, &Free::All, x);
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut restart_errors = Vec::with_capacity(cfg.restarts);
    for r in 0..cfg.restarts {
        let x0 = initial(view.dim(), init, r, cfg.seed, name)?;
        let (x, c) = minimize(&f, x0, cfg.iters)?;
        restart_errors.push(c);
        if best.as_ref().is_none_or(|(b, _)| c < *b) {
            best = Some((c, x));
        }
    }
    let (l2_error, best_latent) = best.expect("at least one restart");
    Ok(ReconResult {
        mode: ReconMode::Regular,
        nll: latent_nll(&best_latent),
        best_latent,
        l2_error,
        restart_errors,
        stage_errors: None,
    })
}

/// Two-stage fit: the red latent against the red channel, then the green latent
/// against the green channel with the red latent frozen.
pub fn reconstruct_separable<T: Float>(
    gen: &Generator<T>,
    target: &Image2C,
    slot: usize,
    cfg: &ReconConfig,
    init: Option<&[f64]>,
    name: &str,
) -> Result<ReconResult> {
    cfg.validate()?;
    if !gen.spec.kind.has_split_latent() {
        return Err(Error::Contract(format!("{:?} generators have no latent separation", gen.spec.kind)));
    }
    check_target(gen, slot)?;
    let view = View { gen, slot };
    let d = gen.spec.latent_dim;
    let t = target_tensor::<T>(target);
    let mut best: Option<(f64, Vec<f64>, (f64, f64))> = None;
    let mut restart_errors = Vec::with_capacity(cfg.restarts);
    for r in 0..cfg.restarts {
        let x0 = initial(2 * d, init, r, cfg.seed, name)?;
        let (red0, green) = x0.split_at(d);
        let stage1 = |x: &[f64]| loss_and_grad(view, &t, Channels::Red, &Free::Red { green }, x);
        let (red, red_err) = minimize(&stage1, red0.to_vec(), cfg.iters)?;
        let stage2 = |x: &[f64]| loss_and_grad(view, &t, Channels::Green, &Free::Green { red: &red }, x);
        let (green, green_err) = minimize(&stage2, green.to_vec(), cfg.iters)?;
        let mut z = red;
        z.extend(green);
        // Both channels have equal pixel counts, so the joint error is the stage mean.
        let c = 0.5 * (red_err + green_err);
        restart_errors.push(c);
        if best.as_ref().is_none_or(|(b, ..)| c < *b) {
            best = Some((c, z, (red_err, green_err)));
        }
    }
    let (l2_error, best_latent, stages) = best.expect("at least one restart");
    Ok(ReconResult {
        mode: ReconMode::Separable,
        nll: latent_nll(&best_latent),
        best_latent,
        l2_error,
        restart_errors,
        stage_errors: Some(stages),
    })
}

/// Reconstructs every `(target, slot)` concurrently; target `i` uses the streams `recon/{i}`.
pub fn reconstruct_all<T: Float>(
    gen: &Generator<T>,
    targets: &[(Image2C, usize)],
    mode: ReconMode,
    cfg: &ReconConfig,
) -> Result<Vec<ReconResult>> {
    cfg.validate()?;
    let workers = cfg.workers.min(targets.len()).max(1);
    let mut out: Vec<Option<ReconResult>> = vec![None; targets.len()];
    thread::scope(|sc| -> Result<()> {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                sc.spawn(move || {
                    (w..targets.len())
                        .step_by(workers)
                        .map(|i| {
                            let (img, slot) = &targets[i];
                            let name = format!("recon/{i}");
                            let r = match mode {
                                ReconMode::Regular => reconstruct_regular(gen, img, *slot, cfg, None, &name),
                                ReconMode::Separable => reconstruct_separable(gen, img, *slot, cfg, None, &name),
                            };
                            r.map(|r| (i, r))
                        })
                        .collect::<Result<Vec<_>>>()
                })
            })
            .collect();
        for h in handles {
            for (i, r) in h.join().expect("reconstruction worker panicked")? {
                out[i] = Some(r);
            }
        }
        Ok(())
    })?;
    Ok(out.into_iter().map(|r| r.expect("every target reconstructed")).collect())
}

/// Eval-mode image for a latent laid out like [`ReconResult::best_latent`].
pub fn render_latent<T: Float>(gen: &Generator<T>, z: &[f64], slot: usize) -> Result<Image2C> {
    check_target(gen, slot)?;
    let view = View { gen, slot };
    if z.len() != view.dim() {
        return Err(Error::Shape(format!("latent has {} entries, expected {}", z.len(), view.dim())));
    }
    let out = autograd::no_grad(|| {
        let d = gen.spec.latent_dim;
        if view.split() {
            view.render(&Var::constant(row(&z[..d])), Some(&Var::constant(row(&z[d..]))))
        } else {
            view.render(&Var::constant(row(z)), None)
        }
    })?;
    let v: Vec<f32> = out.value().data().iter().map(|x| x.as_f64() as f32).collect();
    Ok(Image2C {
        red: crate::data::Plane::new(v[..PIXELS].to_vec())?,
        green: crate::data::Plane::new(v[PIXELS..].to_vec())?,
        class: slot,
    })
}

/// Frames of a red-latent interpolation with fixed green latents.
#[derive(Clone, Debug)]
pub struct Strip {
    /// `frames × (1 + c)` planes: the red channel followed by every green channel.
    pub frames: Vec<Vec<Vec<f32>>>,
}

impl Strip {
    /// One row per frame: the red channel in red, then each green channel in green.
    pub fn to_rgb(&self) -> Rgb {
        let cols = self.frames.first().map_or(1, Vec::len);
        let tiles: Vec<Rgb> = self
            .frames
            .iter()
            .flat_map(|f| {
                f.iter()
                    .enumerate()
                    .map(|(j, p)| Rgb::plane(p, Some(if j == 0 { 0 } else { 1 })))
            })
            .collect();
        Rgb::grid(&tiles, cols, 2)
    }
}

/// Slerps the red latent from `z_red_start` to `z_red_end` over `n_frames` while
/// every green latent stays fixed.
pub fn cell_cycle_strip<T: Float>(
    gen: &Generator<T>,
    z_red_start: &[f64],
    z_red_end: &[f64],
    n_frames: usize,
    z_greens: &[Vec<f64>],
) -> Result<Strip> {
    if !gen.spec.kind.has_split_latent() {
        return Err(Error::Config(format!("{:?} generators have no separate red latent", gen.spec.kind)));
    }
    if n_frames < 2 {
        return Err(Error::Config("a strip needs at least 2 frames".into()));
    }
    if z_greens.len() != gen.spec.c {
        return Err(Error::Shape(format!("{} green latents for {} towers", z_greens.len(), gen.spec.c)));
    }
    let greens: Vec<Tensor<T>> = z_greens.iter().map(|g| row(g)).collect();
    let mut frames = Vec::with_capacity(n_frames);
    for f in 0..n_frames {
        let t = f as f64 / (n_frames - 1) as f64;
        let z = Latent::Split {
            red: row(&slerp(z_red_start, z_red_end, t)?),
            greens: greens.clone(),
        };
        let out = gen.generate(&z, Mode::Eval)?;
        let plane = |v: &Var<T>| v.value().data().iter().map(|x| x.as_f64() as f32).collect::<Vec<_>>();
        let mut cols = vec![plane(&out.red)];
        cols.extend(out.greens.iter().map(plane));
        frames.push(cols);
    }
    Ok(Strip { frames })
}

/// Points of the error/NLL scatter with its optional guide lines.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scatter {
    /// `(l2_error, nll)` per reconstruction.
    pub points: Vec<(f64, f64)>,
    /// Median nearest-neighbour error, drawn as a vertical line.
    pub nn_median: Option<f64>,
    /// Prior NLL mean and standard deviation, drawn as mean ± 3 std.
    pub nll_guide: Option<(f64, f64)>,
}

/// Collects the scatter; `latent_dim` selects the analytic prior guide.
pub fn recon_scatter(results: &[ReconResult], nn_median: Option<f64>, latent_dim: Option<usize>) -> Result<Scatter> {
    if results.is_empty() {
        return Err(Error::Data("no reconstructions to plot".into()));
    }
    Ok(Scatter {
        points: results.iter().map(|r| (r.l2_error, r.nll)).collect(),
        nn_median,
        nll_guide: latent_dim.map(prior_nll_moments),
    })
}
