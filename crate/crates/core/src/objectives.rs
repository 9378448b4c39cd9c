//! Adversarial objectives, the gradient penalty, and one alternating update step.

use autograd::optim::{Adam, RmsProp};
use autograd::{grad, grad_values, no_grad, Bound, Float, ParamStore, Tensor, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{Discriminator, Generator, Latent, Mode};
use crate::rng::StreamRng;

/// Probabilities are clamped to `[LOG_EPS, 1 - LOG_EPS]` before taking logs.
pub const LOG_EPS: f64 = 1e-7;
pub const DEFAULT_LAMBDA: f64 = 10.0;
pub const DEFAULT_CLIP: f64 = 0.01;

fn ensure_finite<T: Float>(v: &Var<T>, what: &str) -> Result<()> {
    if v.value().all_finite() {
        Ok(())
    } else {
        Err(Error::Numeric(format!("non-finite {what}")))
    }
}

fn clamped_log<T: Float>(p: &Var<T>) -> Var<T> {
    p.clamp(LOG_EPS, 1.0 - LOG_EPS).ln()
}

/// `mean log D(real) + mean log(1 - D(fake))`, which the discriminator ascends.
pub fn gan_d_loss<T: Float>(d_real: &Var<T>, d_fake: &Var<T>) -> Result<Var<T>> {
    ensure_finite(d_real, "discriminator output")?;
    ensure_finite(d_fake, "discriminator output")?;
    let one_minus = d_fake.neg().add_scalar(1.0);
    Ok(clamped_log(d_real).mean().add(&clamped_log(&one_minus).mean()))
}

/// `-mean log D(fake)`, which the generator descends.
pub fn gan_g_loss_nonsaturating<T: Float>(d_fake: &Var<T>) -> Result<Var<T>> {
    ensure_finite(d_fake, "discriminator output")?;
    Ok(clamped_log(d_fake).mean().neg())
}

/// `mean D(real) - mean D(fake)`, which the critic ascends.
pub fn wgan_critic_estimate<T: Float>(d_real: &Var<T>, d_fake: &Var<T>) -> Var<T> {
    d_real.mean().sub(&d_fake.mean())
}

/// Clamps every parameter entry into `[-bound, bound]`.
pub fn clip_weights<T: Float>(params: &mut ParamStore<T>, bound: f64) -> Result<()> {
    if !(bound > 0.0) {
        return Err(Error::Config(format!("clip bound must be positive, got {bound}")));
    }
    let (lo, hi) = (T::from_f64c(-bound), T::from_f64c(bound));
    for t in params.tensors_mut() {
        for v in t.data_mut() {
            *v = v.max(lo).min(hi);
        }
    }
    Ok(())
}

/// A scoring network that can sit inside an adversarial objective.
pub trait Critic<T: Float> {
    fn score(&self, bound: &Bound<T>, x: &Var<T>) -> Var<T>;

    /// Whether the score can be differentiated twice, as the gradient penalty requires.
    fn twice_differentiable(&self) -> bool {
        true
    }
}

impl<T: Float> Critic<T> for Discriminator<T> {
    fn score(&self, bound: &Bound<T>, x: &Var<T>) -> Var<T> {
        Discriminator::score(self, bound, x)
    }
}

/// `λ · mean_i (‖∇D(x̂_i)‖₂ - 1)²` with `x̂_i = ε_i·real_i + (1-ε_i)·fake_i`.
///
/// The result stays differentiable with respect to the critic parameters in `bound`.
pub fn gradient_penalty<T: Float, C: Critic<T> + ?Sized>(
    critic: &C,
    bound: &Bound<T>,
    real: &Tensor<T>,
    fake: &Tensor<T>,
    eps: &[f64],
    lambda: f64,
) -> Result<Var<T>> {
    if !critic.twice_differentiable() {
        return Err(Error::Contract("gradient penalty needs a twice-differentiable critic".into()));
    }
    if real.shape() != fake.shape() {
        return Err(Error::Shape(format!(
            "real {:?} and fake {:?} batches differ",
            real.shape(),
            fake.shape()
        )));
    }
    let b = real.shape()[0];
    if eps.len() != b || eps.iter().any(|e| !(0.0..=1.0).contains(e)) {
        return Err(Error::Shape(format!("need {b} interpolation weights in [0, 1]")));
    }
    let per = real.numel() / b.max(1);
    let mut mixed = real.data().to_vec();
    for (i, &e) in eps.iter().enumerate() {
        let (e, f) = (T::from_f64c(e), T::from_f64c(1.0 - e));
        for j in i * per..(i + 1) * per {
            mixed[j] = e * real.data()[j] + f * fake.data()[j];
        }
    }
    let x_hat = Var::leaf(Tensor::from_vec(real.shape().to_vec(), mixed));
    let out = critic.score(bound, &x_hat);
    let gx = grad(&[out.sum()], None, std::slice::from_ref(&x_hat), true)
        .pop()
        .expect("one gradient");
    let norms = gx.reshape(vec![b, per]).square().sum_to(&[b, 1]).sqrt();
    Ok(norms.add_scalar(-1.0).square().mean().scale(lambda))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Objective {
    Gan,
    Wgan,
    WganGp,
}

impl std::str::FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gan" => Ok(Self::Gan),
            "wgan" => Ok(Self::Wgan),
            "wgan-gp" => Ok(Self::WganGp),
            other => Err(Error::Config(format!("unknown objective {other:?}"))),
        }
    }
}

impl Objective {
    /// Optimizer conventions of the method each objective comes from.
    pub fn default_optimizer(self) -> OptimSettings {
        match self {
            Self::Gan => OptimSettings::Adam {
                lr: 2e-4,
                beta1: 0.5,
                beta2: 0.999,
            },
            Self::Wgan => OptimSettings::Rmsprop { lr: 5e-5 },
            Self::WganGp => OptimSettings::Adam {
                lr: 1e-4,
                beta1: 0.5,
                beta2: 0.9,
            },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OptimSettings {
    Adam { lr: f64, beta1: f64, beta2: f64 },
    Rmsprop { lr: f64 },
}

#[derive(Clone, Debug)]
pub enum Optimizer<T> {
    Adam(Adam<T>),
    RmsProp(RmsProp<T>),
}

impl<T: Float> Optimizer<T> {
    pub fn new(settings: OptimSettings, params: &ParamStore<T>) -> Self {
        match settings {
            OptimSettings::Adam { lr, beta1, beta2 } => Self::Adam(Adam::new(params, lr, beta1, beta2)),
            OptimSettings::Rmsprop { lr } => Self::RmsProp(RmsProp::new(params, lr)),
        }
    }

    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &[Tensor<T>]) {
        match self {
            Self::Adam(o) => o.step(params, grads),
            Self::RmsProp(o) => o.step(params, grads),
        }
    }

    pub fn steps(&self) -> u64 {
        match self {
            Self::Adam(o) => o.steps,
            Self::RmsProp(o) => o.steps,
        }
    }

    /// Named state tensors, for checkpoints.
    pub fn state(&self) -> Vec<(&'static str, &[Tensor<T>])> {
        match self {
            Self::Adam(o) => vec![("m", &o.m), ("v", &o.v)],
            Self::RmsProp(o) => vec![("square_avg", &o.square_avg)],
        }
    }

    /// Restores state written by [`Optimizer::state`].
    pub fn restore(&mut self, steps: u64, mut state: Vec<(String, Vec<Tensor<T>>)>) -> Result<()> {
        let mut take = |name: &str, into: &mut Vec<Tensor<T>>| -> Result<()> {
            let pos = state
                .iter()
                .position(|(n, _)| n == name)
                .ok_or_else(|| Error::Config(format!("optimizer state {name} missing")))?;
            let tensors = state.swap_remove(pos).1;
            if tensors.len() != into.len() || tensors.iter().zip(into.iter()).any(|(a, b)| a.shape() != b.shape()) {
                return Err(Error::Config(format!("optimizer state {name} does not match the model")));
            }
            *into = tensors;
            Ok(())
        };
        match self {
            Self::Adam(o) => {
                take("m", &mut o.m)?;
                take("v", &mut o.v)?;
                o.steps = steps;
            }
            Self::RmsProp(o) => {
                take("square_avg", &mut o.square_avg)?;
                o.steps = steps;
            }
        }
        Ok(())
    }
}

/// Losses of one discriminator (or one red–green pair in star training).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PairLoss {
    /// Loss the discriminator minimized in its last critic iteration.
    pub d_loss: f64,
    pub g_loss: f64,
    pub penalty: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub d_loss: f64,
    pub g_loss: f64,
    pub penalty: f64,
    pub pairs: Vec<PairLoss>,
}

impl LossReport {
    pub fn is_finite(&self) -> bool {
        self.d_loss.is_finite() && self.g_loss.is_finite() && self.penalty.is_finite()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepSettings {
    pub objective: Objective,
    pub n_critic: usize,
    pub batch_size: usize,
    pub lambda: f64,
    pub clip: f64,
}

impl StepSettings {
    pub fn new(objective: Objective) -> Self {
        Self {
            objective,
            n_critic: if objective == Objective::Gan { 1 } else { 5 },
            batch_size: 64,
            lambda: DEFAULT_LAMBDA,
            clip: DEFAULT_CLIP,
        }
    }
}

/// A generator with its discriminators and their optimizers.
///
/// Discriminator `k` judges view `k` of the generator output: the red/green-`k`
/// pair for star generators, and the full image otherwise.
pub struct Adversaries<T: Float> {
    pub gen: Generator<T>,
    pub discs: Vec<Discriminator<T>>,
    pub g_opt: Optimizer<T>,
    pub d_opts: Vec<Optimizer<T>>,
}

/// Input to each discriminator, `[B, C, H, W]`.
pub fn views<T: Float>(gen: &Generator<T>, out: &crate::models::GenOutput<T>) -> Vec<Var<T>> {
    if gen.spec.kind == crate::models::GeneratorKind::Star {
        (0..gen.spec.c).map(|k| out.pair(k)).collect()
    } else {
        vec![out.full()]
    }
}

pub fn discriminator_count(gen: &Generator<impl Float>) -> usize {
    if gen.spec.kind == crate::models::GeneratorKind::Star {
        gen.spec.c
    } else {
        1
    }
}

/// Generator loss summed over discriminators; `only` restricts it to one of them.
pub fn generator_loss<T: Float>(
    gen: &Generator<T>,
    g_bound: &Bound<T>,
    discs: &[Discriminator<T>],
    z: &Latent<Tensor<T>>,
    objective: Objective,
    only: Option<usize>,
) -> Result<(Var<T>, Vec<f64>, Vec<crate::models::BnBatchStat<T>>)> {
    let out = gen.forward(g_bound, &z.vars(false), Mode::Train)?;
    let mut total: Option<Var<T>> = None;
    let mut per = Vec::with_capacity(discs.len());
    for (k, (d, x)) in discs.iter().zip(views(gen, &out)).enumerate() {
        let s = d.score(&d.params.bind(false), &x);
        let term = match objective {
            Objective::Gan => gan_g_loss_nonsaturating(&s)?,
            Objective::Wgan | Objective::WganGp => s.mean().neg(),
        };
        per.push(term.item().as_f64());
        if only.is_none_or(|o| o == k) {
            total = Some(match total {
                Some(t) => t.add(&term),
                None => term,
            });
        }
    }
    let total = total.ok_or_else(|| Error::Config("no discriminator selected".into()))?;
    Ok((total, per, out.bn_stats))
}

/// The loss a critic descends under `objective`, with the penalty term when there is one.
///
/// `eps` holds the per-item interpolation weights and is only read for WGAN-GP.
pub fn critic_loss<T: Float>(
    objective: Objective,
    d: &Discriminator<T>,
    bound: &Bound<T>,
    real: &Tensor<T>,
    fake: &Tensor<T>,
    eps: &[f64],
    lambda: f64,
) -> Result<(Var<T>, Option<Var<T>>)> {
    let s_real = d.score(bound, &Var::constant(real.clone()));
    let s_fake = d.score(bound, &Var::constant(fake.clone()));
    Ok(match objective {
        Objective::Gan => (gan_d_loss(&s_real, &s_fake)?.neg(), None),
        Objective::Wgan => (wgan_critic_estimate(&s_real, &s_fake).neg(), None),
        Objective::WganGp => {
            let p = gradient_penalty(d, bound, real, fake, eps, lambda)?;
            (wgan_critic_estimate(&s_real, &s_fake).neg().add(&p), Some(p))
        }
    })
}

/// One alternating update: `n_critic` discriminator iterations, then one generator update.
///
/// Random draws happen in a fixed order: per critic iteration the latent batch,
/// then the real batches (through `sample_real`), then the interpolation weights
/// of every discriminator; finally the generator latent batch.
pub fn adversarial_step<T: Float>(
    adv: &mut Adversaries<T>,
    settings: &StepSettings,
    sample_real: &mut dyn FnMut(&mut StreamRng) -> Result<Vec<Tensor<T>>>,
    rng: &mut StreamRng,
) -> Result<LossReport> {
    let n_disc = discriminator_count(&adv.gen);
    if adv.discs.len() != n_disc || adv.d_opts.len() != n_disc {
        return Err(Error::Config(format!(
            "generator needs {n_disc} discriminators, got {}",
            adv.discs.len()
        )));
    }
    let b = settings.batch_size;
    let mut pairs = vec![PairLoss::default(); n_disc];

    for _ in 0..settings.n_critic.max(1) {
        let z = adv.gen.sample_latent(b, rng);
        let real = sample_real(rng)?;
        if real.len() != n_disc {
            return Err(Error::Config(format!(
                "{} real batches for {n_disc} discriminators",
                real.len()
            )));
        }
        let eps: Vec<Vec<f64>> = if settings.objective == Objective::WganGp {
            (0..n_disc)
                .map(|_| (0..b).map(|_| rng.random::<f64>()).collect())
                .collect()
        } else {
            Vec::new()
        };
        let out = no_grad(|| adv.gen.forward(&adv.gen.params.bind(false), &z.vars(false), Mode::Train))?;
        let fakes: Vec<Tensor<T>> = views(&adv.gen, &out).iter().map(|v| v.value().clone()).collect();
        adv.gen.update_running(&out.bn_stats);

        for k in 0..n_disc {
            let d = &adv.discs[k];
            let bound = d.params.bind(true);
            let eps_k = eps.get(k).map_or(&[][..], Vec::as_slice);
            let (loss, penalty) = critic_loss(settings.objective, d, &bound, &real[k], &fakes[k], eps_k, settings.lambda)?;
            let grads = grad_values(&loss, bound.vars());
            pairs[k].d_loss = loss.item().as_f64();
            pairs[k].penalty = penalty.map_or(0.0, |p| p.item().as_f64());
            let d = &mut adv.discs[k];
            adv.d_opts[k].step(&mut d.params, &grads);
            if settings.objective == Objective::Wgan {
                clip_weights(&mut d.params, settings.clip)?;
            }
        }
    }

    let z = adv.gen.sample_latent(b, rng);
    let g_bound = adv.gen.params.bind(true);
    let (total, per, stats) = generator_loss(&adv.gen, &g_bound, &adv.discs, &z, settings.objective, None)?;
    let grads = grad_values(&total, g_bound.vars());
    adv.g_opt.step(&mut adv.gen.params, &grads);
    adv.gen.update_running(&stats);
    for (p, g) in pairs.iter_mut().zip(per) {
        p.g_loss = g;
    }

    let n = n_disc as f64;
    Ok(LossReport {
        d_loss: pairs.iter().map(|p| p.d_loss).sum::<f64>() / n,
        g_loss: total.item().as_f64(),
        penalty: pairs.iter().map(|p| p.penalty).sum::<f64>() / n,
        pairs,
    })
}

/// The star-generator update: every discriminator trains on its own pair, and the
/// generator descends the summed loss in one backward pass.
pub fn star_training_step<T: Float>(
    adv: &mut Adversaries<T>,
    settings: &StepSettings,
    sample_real: &mut dyn FnMut(&mut StreamRng) -> Result<Vec<Tensor<T>>>,
    rng: &mut StreamRng,
) -> Result<LossReport> {
    if adv.gen.spec.kind != crate::models::GeneratorKind::Star {
        return Err(Error::Config("star step needs a star generator".into()));
    }
    adversarial_step(adv, settings, sample_real, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{DiscriminatorSpec, GeneratorKind, GeneratorSpec, Head};
    use crate::rng::stream;

    fn probs(v: &[f64]) -> Var<f64> {
        Var::constant(Tensor::from_vec(vec![v.len(), 1], v.to_vec()))
    }

    #[test]
    fn gan_loss_values() {
        let half = probs(&[0.5; 4]);
        let d = gan_d_loss(&half, &half).unwrap().item();
        assert!((d + 2.0 * 2f64.ln()).abs() < 1e-12);
        let g = gan_g_loss_nonsaturating(&half).unwrap().item();
        assert!((g - 2f64.ln()).abs() < 1e-12);
        let best = gan_d_loss(&probs(&[1.0 - LOG_EPS]), &probs(&[LOG_EPS])).unwrap().item();
        assert!(best.abs() < 1e-6);
        let worst = gan_d_loss(&probs(&[0.0]), &probs(&[1.0])).unwrap().item();
        assert!(worst.is_finite() && worst < -30.0);
        assert!(gan_g_loss_nonsaturating(&probs(&[1.0 - LOG_EPS])).unwrap().item().abs() < 1e-6);
        assert!(matches!(gan_d_loss(&probs(&[f64::NAN]), &half), Err(Error::Numeric(_))));
    }

    #[test]
    fn nonsaturating_gradient_through_a_logit() {
        let f = |l: f64| -(1.0 / (1.0 + (-l).exp())).ln();
        for l in [-2.0, -0.3, 0.7, 3.0] {
            let x = Var::leaf(Tensor::from_vec(vec![1, 1], vec![l]));
            let loss = gan_g_loss_nonsaturating(&x.sigmoid()).unwrap();
            let g = grad_values(&loss, std::slice::from_ref(&x))[0].item();
            let h = 1e-6;
            let fd = (f(l + h) - f(l - h)) / (2.0 * h);
            assert!((g - fd).abs() <= 1e-5 * fd.abs().max(1e-12), "{g} vs {fd}");
        }
    }

    #[test]
    fn monotone_in_fake_probability() {
        let real = probs(&[0.7]);
        let mut prev_d = f64::INFINITY;
        let mut prev_g = f64::INFINITY;
        for i in 1..100 {
            let p = probs(&[i as f64 / 100.0]);
            let d = gan_d_loss(&real, &p).unwrap().item();
            let g = gan_g_loss_nonsaturating(&p).unwrap().item();
            assert!(d < prev_d && g < prev_g);
            (prev_d, prev_g) = (d, g);
        }
    }

    #[test]
    fn wgan_estimate_and_shift_invariance() {
        assert_eq!(wgan_critic_estimate(&probs(&[1.0; 3]), &probs(&[0.0; 3])).item(), 1.0);
        let a = [0.3, -1.2, 2.5, 0.1];
        let b = [1.1, 0.4, -0.7, 0.9];
        assert_eq!(wgan_critic_estimate(&probs(&a), &probs(&a)).item(), 0.0);
        let direct = a.iter().sum::<f64>() / 4.0 - b.iter().sum::<f64>() / 4.0;
        let est = wgan_critic_estimate(&probs(&a), &probs(&b)).item();
        assert!((est - direct).abs() < 1e-7);
        let shift = |v: &[f64]| v.iter().map(|x| x + 5.0).collect::<Vec<_>>();
        let shifted = wgan_critic_estimate(&probs(&shift(&a)), &probs(&shift(&b))).item();
        assert!((shifted - est).abs() < 1e-12);
    }

    #[test]
    fn clipping() {
        let mut p = ParamStore::new();
        p.insert("w", Tensor::from_vec(vec![4], vec![0.02f64, -0.005, -0.3, 0.0]));
        clip_weights(&mut p, DEFAULT_CLIP).unwrap();
        assert_eq!(p.get("w").unwrap().data(), &[0.01, -0.005, -0.01, 0.0]);
        let mut zeros = ParamStore::new();
        zeros.insert("z", Tensor::<f64>::zeros(vec![3]));
        clip_weights(&mut zeros, 0.01).unwrap();
        assert_eq!(zeros.get("z").unwrap().data(), &[0.0; 3]);
        assert!(clip_weights(&mut zeros, 0.0).is_err());
    }

    struct Linear;

    impl Critic<f64> for Linear {
        fn score(&self, bound: &Bound<f64>, x: &Var<f64>) -> Var<f64> {
            let b = x.shape()[0];
            x.reshape(vec![b, 4]).matmul(bound.get("w"))
        }
    }

    struct Frozen;

    impl Critic<f64> for Frozen {
        fn score(&self, _: &Bound<f64>, x: &Var<f64>) -> Var<f64> {
            Var::constant(Tensor::full(vec![x.shape()[0], 1], 0.3))
        }

        fn twice_differentiable(&self) -> bool {
            false
        }
    }

    fn batch(seed: u64) -> Tensor<f64> {
        crate::models::gaussian(&[3, 1, 2, 2], 0.0, 1.0, &mut stream(seed, "x"))
    }

    #[test]
    fn penalty_of_unit_linear_critic_is_zero() {
        let mut p = ParamStore::new();
        p.insert("w", Tensor::from_vec(vec![4, 1], vec![0.5, -0.5, 0.5, 0.5]));
        let pen = gradient_penalty(&Linear, &p.bind(true), &batch(1), &batch(2), &[0.1, 0.5, 0.9], 10.0).unwrap();
        assert!(pen.item().abs() < 1e-12);
    }

    #[test]
    fn penalty_of_constant_critic_is_lambda() {
        let mut p = ParamStore::new();
        p.insert("w", Tensor::<f64>::zeros(vec![4, 1]));
        let pen = gradient_penalty(&Linear, &p.bind(true), &batch(1), &batch(2), &[0.2, 0.4, 0.6], 10.0).unwrap();
        assert!((pen.item() - 10.0).abs() < 1e-12);
        let err = gradient_penalty(&Frozen, &p.bind(true), &batch(1), &batch(2), &[0.2, 0.4, 0.6], 10.0);
        assert!(matches!(err, Err(Error::Contract(_))));
    }

    #[test]
    fn penalty_is_permutation_invariant() {
        let mut rng = stream(3, "d");
        let spec = DiscriminatorSpec {
            height: 8,
            width: 8,
            layers: 2,
            ..DiscriminatorSpec::new(2, 4, Head::Unconstrained)
        };
        let d = Discriminator::<f64>::new(spec, &mut rng).unwrap();
        let real = crate::models::gaussian::<f64>(&[4, 2, 8, 8], 0.0, 1.0, &mut rng);
        let fake = crate::models::gaussian::<f64>(&[4, 2, 8, 8], 0.0, 1.0, &mut rng);
        let eps = [0.1, 0.7, 0.3, 0.95];
        let bound = d.params.bind(true);
        let a = gradient_penalty(&d, &bound, &real, &fake, &eps, 10.0).unwrap().item();
        let order = [2, 0, 3, 1];
        let permute = |t: &Tensor<f64>| {
            let parts: Vec<Tensor<f64>> = order.iter().map(|&i| t.narrow(0, i, 1)).collect();
            Tensor::concat(&parts.iter().collect::<Vec<_>>(), 0)
        };
        let eps_p: Vec<f64> = order.iter().map(|&i| eps[i]).collect();
        let b = gradient_penalty(&d, &bound, &permute(&real), &permute(&fake), &eps_p, 10.0)
            .unwrap()
            .item();
        assert!((a - b).abs() < 1e-12 * a.abs().max(1.0));
        let endpoint = gradient_penalty(&d, &bound, &real, &fake, &[1.0; 4], 10.0).unwrap().item();
        let at_real = gradient_penalty(&d, &bound, &real, &real, &[0.5; 4], 10.0).unwrap().item();
        assert_eq!(endpoint, at_real);
    }

    fn tiny_adversaries(kind: GeneratorKind, c: usize, objective: Objective) -> Adversaries<f64> {
        let gen = Generator::new(GeneratorSpec::new(kind, c, 8 * (c + 1)), &mut stream(1, "g")).unwrap();
        let n = discriminator_count(&gen);
        let channels = if kind == GeneratorKind::Star { 2 } else { gen.spec.output_channels() };
        let head = if objective == Objective::Gan { Head::Sigmoid } else { Head::Unconstrained };
        let discs: Vec<_> = (0..n)
            .map(|k| {
                Discriminator::new(DiscriminatorSpec::new(channels, 4, head), &mut stream(k as u64, "d")).unwrap()
            })
            .collect();
        let opt = objective.default_optimizer();
        Adversaries {
            g_opt: Optimizer::new(opt, &gen.params),
            d_opts: discs.iter().map(|d| Optimizer::new(opt, &d.params)).collect(),
            gen,
            discs,
        }
    }

    #[test]
    fn every_objective_steps_and_wgan_clips() {
        for objective in [Objective::Gan, Objective::Wgan, Objective::WganGp] {
            let mut adv = tiny_adversaries(GeneratorKind::Separable, 1, objective);
            let mut settings = StepSettings::new(objective);
            settings.batch_size = 2;
            settings.n_critic = 2;
            let mut sampler = |rng: &mut StreamRng| {
                Ok(vec![crate::models::gaussian::<f64>(&[2, 2, 48, 80], 0.0, 0.5, rng)])
            };
            let before = adv.gen.params.clone();
            let report = adversarial_step(&mut adv, &settings, &mut sampler, &mut stream(2, "s")).unwrap();
            assert!(report.is_finite());
            assert_ne!(before.tensors(), adv.gen.params.tensors());
            if objective == Objective::Wgan {
                assert!(adv.discs[0].params.max_abs() <= 0.01);
            }
            assert_eq!(report.penalty == 0.0, objective != Objective::WganGp);
        }
    }

    #[test]
    fn mismatched_discriminator_count_is_a_config_error() {
        let mut adv = tiny_adversaries(GeneratorKind::Star, 2, Objective::WganGp);
        adv.discs.pop();
        let mut sampler = |_: &mut StreamRng| Ok(vec![]);
        let r = star_training_step(&mut adv, &StepSettings::new(Objective::WganGp), &mut sampler, &mut stream(0, "s"));
        assert!(matches!(r, Err(Error::Config(_))));
    }
}
