//! Acceptance criteria. Every criterion prints one PASS/FAIL line.
//!
//! This target has its own harness: criteria run one after another so their
//! wall-clock budgets are measured without competition, and their report lines
//! show up in plain `cargo test` output. Arguments filter criteria by name.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use autograd::optim::Adam;
use autograd::{grad_values, Bound, ParamStore, Tensor, Var};
use starshape::c2st::{self, c2st_generator, c2st_real, median_mad, C2stConfig, C2stReport};
use starshape::data::{
    mine_multichannel, red_distance, split_train_test, synth_generate, tip_regions, ClassRecipe, Dataset, Image2C,
    Pattern, SplitTag, SynthSpec, HEIGHT, WIDTH,
};
use starshape::latent::{
    self, latent_nll, reconstruct_all, reconstruct_regular, render_latent, slerp, ReconConfig, ReconMode,
};
use starshape::models::{
    gaussian, Discriminator, DiscriminatorSpec, Generator, GeneratorKind, GeneratorSpec, Head, Latent, Mode,
};
use starshape::objectives::{
    self, adversarial_step, gradient_penalty, star_training_step, Adversaries, Critic, Objective, Optimizer,
    StepSettings,
};
use starshape::rng::{normal_vec_f64, stream, StreamRng};
use starshape::training::{Checkpoint, ModelConfig, TrainConfig, Trainer};

fn verdict(id: u32, name: &str, pass: bool, elapsed: Duration, detail: String) -> bool {
    println!(
        "criterion {id:02} {name}: {} [{:.1}s] {detail}",
        if pass { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64()
    );
    pass
}

fn workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

// ---------------------------------------------------------------- 1

const PENALTY_TOL: f64 = 1e-6;
const PENALTY_BUDGET: Duration = Duration::from_secs(1);

/// Scores a flattened input with a linear map.
struct Linear;

impl Critic<f64> for Linear {
    fn score(&self, bound: &Bound<f64>, x: &Var<f64>) -> Var<f64> {
        let b = x.shape()[0];
        let n = x.value().numel() / b;
        x.reshape(vec![b, n]).matmul(bound.get("w"))
    }
}

fn criterion_01_gradient_penalty_analytics() -> bool {
    let t = Instant::now();
    let lambda = objectives::DEFAULT_LAMBDA;
    let mut rng = stream(1, "acceptance/penalty");
    let real = gaussian::<f64>(&[6, 2, 48, 80], 0.0, 1.0, &mut rng);
    let fake = gaussian::<f64>(&[6, 2, 48, 80], 0.0, 1.0, &mut rng);
    let eps = [0.0, 0.1, 0.35, 0.5, 0.8, 1.0];

    // A full-size discriminator with every weight zeroed outputs its (zero) bias everywhere.
    let mut d = Discriminator::<f64>::new(DiscriminatorSpec::new(2, 8, Head::Unconstrained), &mut rng).unwrap();
    for p in d.params.tensors_mut() {
        p.data_mut().fill(0.0);
    }
    let constant = gradient_penalty(&d, &d.params.bind(true), &real, &fake, &eps, lambda).unwrap().item();

    let n = 2 * HEIGHT * WIDTH;
    let w: Vec<f64> = normal_vec_f64(&mut rng, n);
    let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut p = ParamStore::new();
    p.insert("w", Tensor::from_vec(vec![n, 1], w.iter().map(|v| v / norm).collect()));
    let unit = gradient_penalty(&Linear, &p.bind(true), &real, &fake, &eps, lambda).unwrap().item();

    let pass = lambda == 10.0
        && (constant - 10.0).abs() <= PENALTY_TOL
        && unit.abs() <= PENALTY_TOL
        && t.elapsed() < PENALTY_BUDGET;
    verdict(1, "gradient-penalty analytics", pass, t.elapsed(), format!("constant {constant:.3e}, unit-linear {unit:.3e}"))
}

// ---------------------------------------------------------------- 2

const SECOND_ORDER_TOL: f64 = 1e-4;
const FD_STEP: f64 = 1e-6;
const SECOND_ORDER_BUDGET: Duration = Duration::from_secs(30);

fn criterion_02_second_order_gradient_check() -> bool {
    let t = Instant::now();
    let mut rng = stream(2, "acceptance/second-order");
    let spec = DiscriminatorSpec {
        height: 8,
        width: 8,
        layers: 3,
        ..DiscriminatorSpec::new(2, 2, Head::Unconstrained)
    };
    let mut d = Discriminator::<f64>::new(spec, &mut rng).unwrap();
    // Weights well away from zero so the penalty has gradients of ordinary size.
    for p in d.params.tensors_mut() {
        let fresh = gaussian::<f64>(p.shape(), 0.0, 0.5, &mut rng);
        *p = fresh;
    }
    let real = gaussian::<f64>(&[4, 2, 8, 8], 0.0, 1.0, &mut rng);
    let fake = gaussian::<f64>(&[4, 2, 8, 8], 0.5, 1.0, &mut rng);
    let eps = [0.2, 0.45, 0.7, 0.9];
    let penalty = |d: &Discriminator<f64>| {
        gradient_penalty(d, &d.params.bind(false), &real, &fake, &eps, 10.0).unwrap().item()
    };

    let bound = d.params.bind(true);
    let pen = gradient_penalty(&d, &bound, &real, &fake, &eps, 10.0).unwrap();
    let analytic: Vec<f64> = grad_values(&pen, bound.vars()).iter().flat_map(|g| g.data().to_vec()).collect();

    let mut numeric = Vec::with_capacity(analytic.len());
    for ti in 0..d.params.len() {
        for j in 0..d.params.tensors()[ti].numel() {
            let probe = |delta: f64| {
                let mut d2 = Discriminator::from_parts(d.spec.clone(), d.params.clone()).unwrap();
                d2.params.tensors_mut()[ti].data_mut()[j] += delta;
                penalty(&d2)
            };
            numeric.push((probe(FD_STEP) - probe(-FD_STEP)) / (2.0 * FD_STEP));
        }
    }
    let scale = numeric.iter().fold(0f64, |m, v| m.max(v.abs()));
    let worst = analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-4 * scale))
        .fold(0f64, f64::max);
    let pass = worst <= SECOND_ORDER_TOL && scale > 0.0 && t.elapsed() < SECOND_ORDER_BUDGET;
    verdict(
        2,
        "second-order gradient check",
        pass,
        t.elapsed(),
        format!("{} parameters, worst relative error {worst:.2e}", analytic.len()),
    )
}

// ---------------------------------------------------------------- 3

const NLL_DRAWS: usize = 10_000;
const NLL_DIM: usize = 100;
const NLL_RANGE: (f64, f64) = (140.9, 142.9);
const NLL_BUDGET: Duration = Duration::from_secs(5);

fn criterion_03_prior_nll_baseline() -> bool {
    let t = Instant::now();
    let mut rng = stream(3, "acceptance/nll");
    let mean = (0..NLL_DRAWS).map(|_| latent_nll(&normal_vec_f64(&mut rng, NLL_DIM))).sum::<f64>() / NLL_DRAWS as f64;
    // E[-log N(z; 0, I_d)] = d/2 · ln(2π) + d/2.
    let closed = 0.5 * NLL_DIM as f64 * ((2.0 * std::f64::consts::PI).ln() + 1.0);
    let pass = (NLL_RANGE.0..=NLL_RANGE.1).contains(&mean)
        && (NLL_RANGE.0..=NLL_RANGE.1).contains(&closed)
        && t.elapsed() < NLL_BUDGET;
    verdict(3, "prior NLL baseline", pass, t.elapsed(), format!("mean {mean:.3}, closed form {closed:.3}"))
}

// ---------------------------------------------------------------- 4

const FLOW_POINTS: usize = 10;
const FLOW_TOL: f64 = 1e-6;
const FLOW_STEP: f64 = 1e-4;
const FLOW_BUDGET: Duration = Duration::from_secs(60);

/// He-style weights so every output depends visibly on its latents.
fn lively<T: autograd::Float>(gen: &mut Generator<T>, seed: u64) {
    let mut rng = stream(seed, "acceptance/lively");
    let names = gen.params.names().to_vec();
    for (name, p) in names.iter().zip(gen.params.tensors_mut()) {
        let shape = p.shape().to_vec();
        let std = if name.ends_with("fc.w") {
            (1.0 / shape[0] as f64).sqrt()
        } else if name.contains(".up") && name.ends_with(".w") {
            (2.0 / (shape[0] * 4) as f64).sqrt()
        } else {
            continue;
        };
        *p = gaussian(&shape, 0.0, std, &mut rng);
    }
}

fn rows(v: &[Vec<f64>]) -> Var<f64> {
    Var::constant(Tensor::from_vec(vec![v.len(), v[0].len()], v.concat()))
}

/// Largest central-difference derivative of the red output and of green slot 0
/// with respect to the green-0 latent, over all latent coordinates.
fn flow_derivatives(gen: &Generator<f64>, red: &[f64], greens: &[Vec<f64>]) -> (f64, f64) {
    let d = gen.spec.latent_dim;
    let mut perturbed = Vec::with_capacity(2 * d);
    for j in 0..d {
        for s in [1.0, -1.0] {
            let mut g = greens[0].clone();
            g[j] += s * FLOW_STEP;
            perturbed.push(g);
        }
    }
    let n = perturbed.len();
    let z_red = rows(&vec![red.to_vec(); n]);
    let mut green_vars = vec![rows(&perturbed)];
    green_vars.extend(greens[1..].iter().map(|g| rows(&vec![g.clone(); n])));
    let latent = Latent::Split {
        red: z_red,
        greens: green_vars,
    };
    let out = autograd::no_grad(|| gen.forward(&gen.params.bind(false), &latent, Mode::Eval)).unwrap();
    let per = HEIGHT * WIDTH;
    let max_fd = |t: &Tensor<f64>| {
        let x = t.data();
        (0..d)
            .flat_map(|j| {
                let (p, m) = (&x[2 * j * per..(2 * j + 1) * per], &x[(2 * j + 1) * per..(2 * j + 2) * per]);
                p.iter().zip(m).map(|(a, b)| ((a - b) / (2.0 * FLOW_STEP)).abs()).collect::<Vec<_>>()
            })
            .fold(0f64, f64::max)
    };
    (max_fd(out.red.value()), max_fd(out.greens[0].value()))
}

fn criterion_04_one_way_flow() -> bool {
    let t = Instant::now();
    let mut worst_red = 0f64;
    let mut weakest_green = f64::INFINITY;
    let mut red_identical = true;
    for (kind, c) in [(GeneratorKind::Separable, 1), (GeneratorKind::Star, 3)] {
        let mut gen =
            Generator::<f64>::new(GeneratorSpec::with_ratio(kind, c, 8), &mut stream(4, "acceptance/flow")).unwrap();
        lively(&mut gen, 4);
        let d = gen.spec.latent_dim;
        let mut rng = stream(4, &format!("acceptance/flow/{kind:?}"));
        for _ in 0..FLOW_POINTS {
            let red = normal_vec_f64(&mut rng, d);
            let greens: Vec<Vec<f64>> = (0..c).map(|_| normal_vec_f64(&mut rng, d)).collect();
            let (r, g) = flow_derivatives(&gen, &red, &greens);
            worst_red = worst_red.max(r);
            weakest_green = weakest_green.min(g);

            if kind == GeneratorKind::Star {
                let bound = gen.params.bind(false);
                let zr = rows(std::slice::from_ref(&red));
                let zg: Vec<Var<f64>> = greens.iter().map(|g| rows(std::slice::from_ref(g))).collect();
                let full = gen
                    .forward(&bound, &Latent::Split { red: zr.clone(), greens: zg.clone() }, Mode::Eval)
                    .unwrap();
                let reds: Vec<Tensor<f64>> = (0..c).map(|k| full.pair(k).value().narrow(1, 0, 1)).collect();
                red_identical &= reds.iter().all(|r| r.data() == full.red.value().data());
                for k in 0..c {
                    let single = gen.forward_subset(&bound, &zr, &[(k, &zg[k])], Mode::Eval).unwrap();
                    red_identical &= single.red.value().data() == full.red.value().data();
                }
            }
        }
    }
    // The green derivative shows the finite differences can see a dependence when there is one.
    let pass = worst_red <= FLOW_TOL && weakest_green > 1e-3 && red_identical && t.elapsed() < FLOW_BUDGET;
    verdict(
        4,
        "one-way flow",
        pass,
        t.elapsed(),
        format!("max |d red/d z_green| {worst_red:.2e}, min max |d green/d z_green| {weakest_green:.2e}, star reds identical {red_identical}"),
    )
}

// ---------------------------------------------------------------- 5

const STAR_SUM_TOL: f64 = 1e-6;
const STAR_BUDGET: Duration = Duration::from_secs(60);

fn adversaries(kind: GeneratorKind, c: usize) -> Adversaries<f64> {
    let spec = GeneratorSpec::with_ratio(kind, c, 8);
    let gen = Generator::<f64>::new(spec, &mut stream(5, "acceptance/star/g")).unwrap();
    let discs: Vec<Discriminator<f64>> = (0..objectives::discriminator_count(&gen))
        .map(|k| {
            Discriminator::new(
                DiscriminatorSpec::new(2, 8, Head::Unconstrained),
                &mut stream(5, &format!("acceptance/star/d{k}")),
            )
            .unwrap()
        })
        .collect();
    let opt = Objective::WganGp.default_optimizer();
    Adversaries {
        g_opt: Optimizer::new(opt, &gen.params),
        d_opts: discs.iter().map(|d| Optimizer::new(opt, &d.params)).collect(),
        gen,
        discs,
    }
}

fn criterion_05_star_step_equivalence() -> bool {
    let t = Instant::now();
    let mut settings = StepSettings::new(Objective::WganGp);
    settings.batch_size = 4;
    settings.n_critic = 2;
    let sampler = |n: usize| {
        move |rng: &mut StreamRng| Ok((0..n).map(|_| gaussian::<f64>(&[4, 2, 48, 80], 0.0, 0.5, rng)).collect())
    };

    let mut star = adversaries(GeneratorKind::Star, 1);
    let mut sep = adversaries(GeneratorKind::Separable, 1);
    let same_start = star.gen.params.tensors() == sep.gen.params.tensors();
    let mut a = sampler(1);
    let mut b = sampler(1);
    let r_star = star_training_step(&mut star, &settings, &mut a, &mut stream(5, "acceptance/star/step")).unwrap();
    let r_sep = adversarial_step(&mut sep, &settings, &mut b, &mut stream(5, "acceptance/star/step")).unwrap();
    let bitwise = same_start
        && r_star == r_sep
        && star.gen.params.tensors() == sep.gen.params.tensors()
        && star.gen.buffers.tensors() == sep.gen.buffers.tensors()
        && star.discs[0].params.tensors() == sep.discs[0].params.tensors();

    // c = 3: red-tower gradient of the summed loss against the sum of per-pair gradients,
    // each pair rendered on its own through the red tower and a single green tower.
    let adv = adversaries(GeneratorKind::Star, 3);
    let z = adv.gen.sample_latent(4, &mut stream(5, "acceptance/star/z"));
    let red_names = adv.gen.red_param_names();
    let red_grads = |loss: &Var<f64>, bound: &Bound<f64>| -> Vec<f64> {
        let vars: Vec<Var<f64>> = red_names.iter().map(|n| bound.get(n).clone()).collect();
        grad_values(loss, &vars).iter().flat_map(|g| g.data().to_vec()).collect()
    };
    let bound = adv.gen.params.bind(true);
    let (total, _, _) = objectives::generator_loss(&adv.gen, &bound, &adv.discs, &z, Objective::WganGp, None).unwrap();
    let joint = red_grads(&total, &bound);
    let Latent::Split { red, greens } = &z else { unreachable!("star latents are split") };
    let mut summed = vec![0.0; joint.len()];
    for k in 0..3 {
        let bound = adv.gen.params.bind(true);
        let zr = Var::constant(red.clone());
        let zg = Var::constant(greens[k].clone());
        let out = adv.gen.forward_subset(&bound, &zr, &[(k, &zg)], Mode::Train).unwrap();
        let d = &adv.discs[k];
        let loss = d.score(&d.params.bind(false), &out.pair(k)).mean().neg();
        for (s, g) in summed.iter_mut().zip(red_grads(&loss, &bound)) {
            *s += g;
        }
    }
    let norm = summed.iter().map(|v| v * v).sum::<f64>().sqrt();
    let diff = joint.iter().zip(&summed).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let rel = diff / norm;
    let pass = bitwise && norm > 0.0 && rel <= STAR_SUM_TOL && t.elapsed() < STAR_BUDGET;
    verdict(
        5,
        "star step equivalence",
        pass,
        t.elapsed(),
        format!("c=1 bitwise {bitwise}, c=3 red-gradient relative difference {rel:.2e}"),
    )
}

// ---------------------------------------------------------------- 6

const C2ST_IMAGES_PER_CLASS: usize = 500;
const SANITY_STEPS: usize = 1000;
/// Share of ring cells in the "similar" class; the rest are fresh tips cells.
const SIMILAR_RING_SHARE: f64 = 0.5;
const SANITY_BUDGET: Duration = Duration::from_secs(20 * 60);

/// Scaled-down C2ST critic shared by the data-level checks.
fn quick_c2st(train_steps: usize, n_splits: usize) -> C2stConfig {
    C2stConfig {
        train_steps,
        n_splits,
        disc_width: 4,
        batch_size: 16,
        workers: workers(),
        ..C2stConfig::default()
    }
}

fn criterion_06_c2st_sanity_ordering() -> bool {
    let t = Instant::now();
    // Classes 1 and 3 only feed the mixture.
    let spec = SynthSpec::new(
        vec![
            ClassRecipe::new("tips", Pattern::Tips),
            ClassRecipe::new("tips-b", Pattern::Tips),
            ClassRecipe::new("ring", Pattern::Ring),
            ClassRecipe::new("ring-b", Pattern::Ring),
        ],
        C2ST_IMAGES_PER_CLASS,
        7,
    );
    let raw = synth_generate(&spec).unwrap();
    let of = |c: usize| raw.items.iter().filter(move |it| it.class == c).cloned();
    let rings = (SIMILAR_RING_SHARE * C2ST_IMAGES_PER_CLASS as f64).round() as usize;
    let mut items: Vec<Image2C> = of(0).collect();
    items.extend(of(1).take(C2ST_IMAGES_PER_CLASS - rings).chain(of(3).take(rings)).map(|mut it| {
        it.class = 1;
        it
    }));
    items.extend(of(2).map(|mut it| {
        it.class = 2;
        it
    }));
    let classes = ["tips", "mixed", "ring"].map(String::from).to_vec();
    let ds = split_train_test(&Dataset::new(classes, items), 0.5, 7).unwrap();
    let cfg = quick_c2st(SANITY_STEPS, c2st::DEFAULT_SPLITS);
    let same = c2st_real(&ds, "tips", "tips", &cfg).unwrap();
    let near = c2st_real(&ds, "tips", "mixed", &cfg).unwrap();
    let far = c2st_real(&ds, "tips", "ring", &cfg).unwrap();
    let pass = same.median.abs() <= 3.0 * same.mad
        && far.median >= 5.0 * same.mad
        && same.median < near.median
        && near.median < far.median
        && t.elapsed() < SANITY_BUDGET;
    let show = |r: &C2stReport| format!("{:.4} ± {:.4}", r.median, r.mad);
    verdict(
        6,
        "C2ST sanity ordering",
        pass,
        t.elapsed(),
        format!("same {}, similar {}, disjoint {}", show(&same), show(&near), show(&far)),
    )
}

// ---------------------------------------------------------------- 7 and 9

const TRAIN_STEPS: u64 = 2000;
const TRAIN_IMAGES: usize = 500;
const IMPROVEMENT: f64 = 0.5;
const TREND_SPLITS: usize = 5;
const TREND_BUDGET: Duration = Duration::from_secs(45 * 60);
const SEPARABLE_TARGETS: usize = 20;

struct Trained {
    ds: Dataset,
    initial: Generator<f32>,
    trained: Generator<f32>,
    trained_f64: Generator<f64>,
    train_time: Duration,
}

fn copy<T: autograd::Float>(g: &Generator<T>) -> Generator<T> {
    Generator::from_parts(g.spec.clone(), g.params.clone(), g.buffers.clone()).unwrap()
}

/// Separable WGAN-GP generator trained on 500 synthetic images (shared by criteria 7 and 9).
fn trained() -> &'static Trained {
    static TRAINED: OnceLock<Trained> = OnceLock::new();
    TRAINED.get_or_init(|| {
        // Half of every class is held out for the C2ST, leaving 500 training images.
        let spec = SynthSpec::new(vec![ClassRecipe::new("tips", Pattern::Tips)], 2 * TRAIN_IMAGES, 11);
        let ds = split_train_test(&synth_generate(&spec).unwrap(), 0.5, 11).unwrap();
        assert_eq!(ds.indices(SplitTag::Train).len(), TRAIN_IMAGES);
        let config = TrainConfig {
            objective: Objective::WganGp,
            model: ModelConfig {
                kind: GeneratorKind::Separable,
                width_per_channel: 16,
                ..ModelConfig::default()
            },
            discriminator_width: 8,
            steps: TRAIN_STEPS,
            batch_size: 32,
            sample_grids: false,
            seed: 3,
            ..TrainConfig::default()
        };
        let t = Instant::now();
        let mut trainer = Trainer::<f32>::new(config, &ds).unwrap();
        let initial = copy(&trainer.adv.gen);
        for _ in 0..TRAIN_STEPS {
            trainer.step_once().unwrap();
        }
        let train_time = t.elapsed();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trained.ckpt");
        trainer.checkpoint().save(&path).unwrap();
        let trained_f64 = Checkpoint::<f64>::load(&path).unwrap().gen;
        Trained {
            ds,
            initial,
            trained: copy(&trainer.adv.gen),
            trained_f64,
            train_time,
        }
    })
}

fn criterion_07_training_improves_c2st() -> bool {
    let run = trained();
    let t = Instant::now();
    let cfg = quick_c2st(SANITY_STEPS, TREND_SPLITS);
    let classes = vec!["tips".to_string()];
    let before = c2st_generator(&run.initial, &run.ds, &classes, &cfg).unwrap();
    let after = c2st_generator(&run.trained, &run.ds, &classes, &cfg).unwrap();
    let elapsed = t.elapsed() + run.train_time;
    let pass = before.median > 0.0 && after.median <= IMPROVEMENT * before.median && elapsed < TREND_BUDGET;
    verdict(
        7,
        "training improves C2ST",
        pass,
        elapsed,
        format!(
            "step 0 median {:.3} (MAD {:.3}), step {TRAIN_STEPS} median {:.3} (MAD {:.3}); training took {:.0}s",
            before.median,
            before.mad,
            after.median,
            after.mad,
            run.train_time.as_secs_f64()
        ),
    )
}

fn criterion_09_separable_harder_than_regular() -> bool {
    let run = trained();
    let t = Instant::now();
    let targets: Vec<(Image2C, usize)> = run
        .ds
        .items_of(SplitTag::Test, 0)
        .into_iter()
        .take(SEPARABLE_TARGETS)
        .map(|img| (img, 0))
        .collect();
    let cfg = ReconConfig {
        workers: workers(),
        ..ReconConfig::default()
    };
    let errors = |mode| -> Vec<f64> {
        reconstruct_all(&run.trained_f64, &targets, mode, &cfg).unwrap().iter().map(|r| r.l2_error).collect()
    };
    let (regular, _) = median_mad(&errors(ReconMode::Regular)).unwrap();
    let (separable, _) = median_mad(&errors(ReconMode::Separable)).unwrap();
    let pass = targets.len() >= 20 && separable >= regular;
    verdict(
        9,
        "separable reconstruction is harder",
        pass,
        t.elapsed(),
        format!("{} targets, median MSE regular {regular:.5}, separable {separable:.5}", targets.len()),
    )
}

// ---------------------------------------------------------------- 8

const OVERFIT_IMAGES: usize = 16;
const OVERFIT_STEPS: usize = 12_000;
const OVERFIT_LR: f64 = 2e-3;
/// Latent jitter during fitting, decaying linearly to zero at 70% of the steps.
const OVERFIT_JITTER: f64 = 0.3;
const RECOVERED: f64 = 1e-3;
const RECOVERED_SHARE: f64 = 0.8;
const INFORMED_TOL: f64 = 1e-8;
const INFORMED_TARGETS: usize = 8;
const ORACLE_BUDGET: Duration = Duration::from_secs(15 * 60);

/// Latents that encode each cell's centre, length and tilt, standardized over the set.
fn geometry_latents(spec: &SynthSpec, dim: usize) -> Vec<f64> {
    let feats: Vec<[f64; 4]> = tip_regions(spec)
        .unwrap()
        .iter()
        .map(|&[(r0, c0), (r1, c1)]| {
            let (r0, c0, r1, c1) = (r0 as f64, c0 as f64, r1 as f64, c1 as f64);
            [(c0 + c1) / 2.0, (r0 + r1) / 2.0, (r1 - r0).hypot(c1 - c0), (r1 - r0).atan2(c1 - c0)]
        })
        .collect();
    let n = feats.len();
    let mut z = vec![0.0; n * dim];
    for k in 0..4.min(dim) {
        let mean = feats.iter().map(|f| f[k]).sum::<f64>() / n as f64;
        let sd = (feats.iter().map(|f| (f[k] - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
        for i in 0..n {
            z[i * dim + k] = (feats[i][k] - mean) / sd;
        }
    }
    z
}

fn criterion_08_reconstruction_oracle() -> bool {
    let t = Instant::now();
    let mut recipe = ClassRecipe::new("tips", Pattern::Tips);
    recipe.noise = 0.0;
    let spec = SynthSpec::new(vec![recipe], OVERFIT_IMAGES, 5);
    let ds = synth_generate(&spec).unwrap();

    let mut gspec = GeneratorSpec::new(GeneratorKind::Dcgan, 1, 32);
    gspec.latent_dim = 2;
    gspec.bn_enabled = false;
    let mut gen = Generator::<f64>::new(gspec, &mut stream(8, "acceptance/overfit/init")).unwrap();
    lively(&mut gen, 8);
    let n = ds.len();
    let dim = gen.spec.latent_total();
    let z = geometry_latents(&spec, dim);
    let target: Vec<f64> = ds
        .items
        .iter()
        .flat_map(|it| it.red.values().iter().chain(it.green.values()).map(|&v| v as f64))
        .collect();
    let target = Var::constant(Tensor::from_vec(vec![n, 2, HEIGHT, WIDTH], target));
    let mut adam = Adam::new(&gen.params, OVERFIT_LR, 0.9, 0.999);
    let mut fit = f64::NAN;
    for step in 0..OVERFIT_STEPS {
        let sigma = OVERFIT_JITTER * (1.0 - step as f64 / (0.7 * OVERFIT_STEPS as f64)).max(0.0);
        let noise = normal_vec_f64(&mut stream(step as u64, "acceptance/overfit/jitter"), n * dim);
        let zj: Vec<f64> = z.iter().zip(&noise).map(|(a, e)| a + sigma * e).collect();
        let bound = gen.params.bind(true);
        let out = gen
            .forward(&bound, &Latent::Joint(Var::constant(Tensor::from_vec(vec![n, dim], zj))), Mode::Eval)
            .unwrap()
            .full();
        let loss = out.sub(&target).square().mean();
        fit = loss.item();
        let grads = grad_values(&loss, bound.vars());
        adam.step(&mut gen.params, &grads);
    }

    let cfg = ReconConfig {
        workers: workers(),
        ..ReconConfig::default()
    };
    let targets: Vec<(Image2C, usize)> = ds.items.iter().map(|it| (it.clone(), 0)).collect();
    let results = reconstruct_all(&gen, &targets, ReconMode::Regular, &cfg).unwrap();
    let recovered = results.iter().filter(|r| r.l2_error <= RECOVERED).count();

    // Images rendered from known latents, recovered from a nearby start.
    let mut rng = stream(8, "acceptance/overfit/known");
    let mut worst_informed = 0f64;
    for i in 0..INFORMED_TARGETS {
        let z_star = normal_vec_f64(&mut rng, dim);
        let img = render_latent(&gen, &z_star, 0).unwrap();
        let start: Vec<f64> = z_star.iter().zip(normal_vec_f64(&mut rng, dim)).map(|(a, e)| a + 1e-2 * e).collect();
        let r = reconstruct_regular(&gen, &img, 0, &cfg, Some(&start), &format!("informed/{i}")).unwrap();
        worst_informed = worst_informed.max(r.l2_error);
    }

    let share = recovered as f64 / n as f64;
    let pass = share >= RECOVERED_SHARE && worst_informed <= INFORMED_TOL && t.elapsed() < ORACLE_BUDGET;
    let mut errors: Vec<f64> = results.iter().map(|r| r.l2_error).collect();
    errors.sort_by(f64::total_cmp);
    verdict(
        8,
        "reconstruction oracle",
        pass,
        t.elapsed(),
        format!(
            "fit MSE {fit:.2e}; {recovered}/{n} recovered to ≤ {RECOVERED:e} (sorted errors {:?}); worst informed {worst_informed:.2e}",
            errors.iter().map(|e| format!("{e:.1e}")).collect::<Vec<_>>()
        ),
    )
}

// ---------------------------------------------------------------- 10

const MINING_BUDGET: Duration = Duration::from_secs(60);

fn criterion_10_mining_oracle() -> bool {
    let t = Instant::now();
    let spec = SynthSpec::new(
        vec![
            ClassRecipe::new("tips", Pattern::Tips),
            ClassRecipe::new("ring", Pattern::Ring),
            ClassRecipe::new("dots", Pattern::Dots),
        ],
        100,
        10,
    );
    let ds = synth_generate(&spec).unwrap();
    let classes = ds.classes.clone();
    let mined = mine_multichannel(&ds, &classes, workers()).unwrap();

    // Exhaustive search written out independently: first strict minimum wins.
    let members: Vec<Vec<usize>> = (0..3).map(|c| (0..ds.len()).filter(|&i| ds.items[i].class == c).collect()).collect();
    let mut expected = Vec::new();
    for (slot, pool) in members.iter().enumerate() {
        for &i in pool {
            let ids: Vec<usize> = (0..3)
                .map(|j| {
                    if j == slot {
                        return i;
                    }
                    let mut best = (f64::INFINITY, usize::MAX);
                    for &k in &members[j] {
                        let d: f64 = ds.items[i]
                            .red
                            .values()
                            .iter()
                            .zip(ds.items[k].red.values())
                            .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
                            .sum();
                        if d < best.0 {
                            best = (d, k);
                        }
                    }
                    best.1
                })
                .collect();
            expected.push((slot, i, ids));
        }
    }
    let exact = mined.len() == expected.len()
        && mined.items.iter().zip(&expected).all(|(m, (slot, i, ids))| {
            m.class == *slot
                && m.red == ds.items[*i].red
                && m.source_ids == *ids
                && m.greens.iter().zip(ids).all(|(g, &s)| *g == ds.items[s].green)
        });
    // The library's distance agrees with the oracle's on a sample pair too.
    let d_lib = red_distance(&ds.items[0].red, &ds.items[150].red);
    let d_own: f64 = ds.items[0]
        .red
        .values()
        .iter()
        .zip(ds.items[150].red.values())
        .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
        .sum();
    let pass = exact && d_lib == d_own && t.elapsed() < MINING_BUDGET;
    verdict(10, "mining oracle", pass, t.elapsed(), format!("{} composites, exact match {exact}", mined.len()))
}

// ---------------------------------------------------------------- 11

const CONSTANTS_BUDGET: Duration = Duration::from_secs(1);

fn criterion_11_protocol_constants() -> bool {
    let t = Instant::now();
    let c2st_cfg = C2stConfig::default();
    let recon = ReconConfig::default();
    let train = TrainConfig {
        objective: Objective::Wgan,
        ..TrainConfig::default()
    };
    let checks = [
        ("C2ST splits", c2st_cfg.n_splits == 10 && c2st::DEFAULT_SPLITS == 10),
        ("C2ST steps", c2st_cfg.train_steps == 5000 && c2st::DEFAULT_TRAIN_STEPS == 5000),
        ("L-BFGS iterations", recon.iters == 50 && latent::DEFAULT_ITERS == 50),
        ("restarts", recon.restarts == 5 && latent::DEFAULT_RESTARTS == 5),
        ("WGAN clip", train.clip == 0.01 && objectives::DEFAULT_CLIP == 0.01),
        ("penalty weight", train.lambda == 10.0),
    ];
    let failed: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0).collect();
    let pass = failed.is_empty() && t.elapsed() < CONSTANTS_BUDGET;
    verdict(11, "protocol constants", pass, t.elapsed(), format!("mismatched: {failed:?}"))
}

// ---------------------------------------------------------------- 12

const UNIT_TOL: f64 = 1e-12;
const UNIT_BUDGET: Duration = Duration::from_secs(1);

fn criterion_12_slerp_and_median_mad() -> bool {
    let t = Instant::now();
    let mut rng = stream(12, "acceptance/slerp");
    let a = normal_vec_f64(&mut rng, 100);
    let b = normal_vec_f64(&mut rng, 100);
    let close = |x: &[f64], y: &[f64]| x.iter().zip(y).all(|(p, q)| (p - q).abs() <= UNIT_TOL * (1.0 + q.abs()));
    let endpoints = close(&slerp(&a, &b, 0.0).unwrap(), &a) && close(&slerp(&a, &b, 1.0).unwrap(), &b);

    // Orthogonal vectors of norm r: the midpoint is (u + v)/√2.
    let r = 3.0;
    let mut u = vec![0.0; 100];
    let mut v = vec![0.0; 100];
    u[0] = r;
    v[1] = r;
    let mid = slerp(&u, &v, 0.5).unwrap();
    let expected: Vec<f64> = u.iter().zip(&v).map(|(p, q)| (p + q) / 2f64.sqrt()).collect();
    let midpoint = close(&mid, &expected);

    let stats = median_mad(&[1.0, 2.0, 100.0]).unwrap();
    let pass = endpoints && midpoint && stats == (2.0, 1.0) && t.elapsed() < UNIT_BUDGET;
    verdict(
        12,
        "slerp and median/MAD",
        pass,
        t.elapsed(),
        format!("endpoints {endpoints}, orthogonal midpoint {midpoint}, median/MAD of {{1,2,100}} = {stats:?}"),
    )
}

type Criterion = fn() -> bool;

const CRITERIA: &[(&str, Criterion)] = &[
    ("criterion_01_gradient_penalty_analytics", criterion_01_gradient_penalty_analytics),
    ("criterion_02_second_order_gradient_check", criterion_02_second_order_gradient_check),
    ("criterion_03_prior_nll_baseline", criterion_03_prior_nll_baseline),
    ("criterion_04_one_way_flow", criterion_04_one_way_flow),
    ("criterion_05_star_step_equivalence", criterion_05_star_step_equivalence),
    ("criterion_06_c2st_sanity_ordering", criterion_06_c2st_sanity_ordering),
    ("criterion_07_training_improves_c2st", criterion_07_training_improves_c2st),
    ("criterion_08_reconstruction_oracle", criterion_08_reconstruction_oracle),
    ("criterion_09_separable_harder_than_regular", criterion_09_separable_harder_than_regular),
    ("criterion_10_mining_oracle", criterion_10_mining_oracle),
    ("criterion_11_protocol_constants", criterion_11_protocol_constants),
    ("criterion_12_slerp_and_median_mad", criterion_12_slerp_and_median_mad),
];

fn main() -> ExitCode {
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = Vec::new();
    let mut ran = 0;
    for &(name, run) in CRITERIA {
        if !filters.is_empty() && !filters.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        ran += 1;
        let pass = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|_| {
            println!("{name}: FAIL (panicked)");
            false
        });
        if !pass {
            failed.push(name);
        }
    }
    println!("acceptance: {} of {ran} criteria passed", ran - failed.len());
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("failed: {}", failed.join(", "));
        ExitCode::FAILURE
    }
}
