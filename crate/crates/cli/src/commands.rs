use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use starshape::c2st::{c2st_generator, c2st_real, C2stConfig, Flavor};
use starshape::data::{
    load_dataset, mine_multichannel, save_dataset, split_train_test, synth_generate, ClassRecipe, Dataset, Image2C,
    Labeled, Pattern, SplitTag, SynthSpec, MANIFEST,
};
use starshape::latent::{cell_cycle_strip, nn_baseline, reconstruct_all, ReconConfig, ReconMode};
use starshape::models::{Generator, GeneratorKind};
use starshape::rng::{normal_vec_f64, stream};
use starshape::training::{self, Checkpoint, TrainConfig};

use crate::error::{CliError, Result};
use crate::manifest::{ManifestLocation, RunManifest};
use crate::plots;
use crate::{C2stArgs, InterpArgs, MineArgs, ReconArgs, ReportArgs, SynthArgs, TrainArgs};

pub struct Context {
    pub argv: Vec<String>,
    pub workers: usize,
}

fn parse<T: std::str::FromStr<Err = starshape::Error>>(s: &str) -> Result<T> {
    Ok(s.parse()?)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn create_parent(file: &Path) -> Result<()> {
    match file.parent() {
        Some(p) if !p.as_os_str().is_empty() => create_dir(p),
        _ => Ok(()),
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("serializable");
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

/// Loads a two-channel dataset and records its manifest checksum.
fn load_data(dir: &Path, run: &mut RunManifest) -> Result<Dataset> {
    let (ds, _) = load_dataset::<Image2C>(dir)?;
    run.input(&dir.join(MANIFEST))?;
    Ok(ds)
}

fn parse_recipe(token: &str) -> Result<ClassRecipe> {
    let mut parts = token.split(':');
    let name = parts.next().unwrap_or_default().trim();
    let pattern: Pattern = parse(parts.next().unwrap_or(name).trim())?;
    let mut recipe = ClassRecipe::new(name, pattern);
    if let Some(noise) = parts.next() {
        recipe.noise = noise
            .trim()
            .parse()
            .map_err(|_| CliError::Config(format!("bad noise level in class {token:?}")))?;
    }
    if parts.next().is_some() {
        return Err(CliError::Config(format!("class {token:?} has too many fields")));
    }
    Ok(recipe)
}

pub fn synth_data(ctx: &Context, a: SynthArgs) -> Result<()> {
    let mut run = RunManifest::start("synth-data", ctx.argv.clone(), Some(a.seed));
    let classes = a.classes.iter().map(|c| parse_recipe(c)).collect::<Result<Vec<_>>>()?;
    let spec = SynthSpec::new(classes, a.count, a.seed);
    run.config(&serde_json::json!({ "spec": spec, "test_fraction": a.test_fraction }));
    let ds = split_train_test(&synth_generate(&spec)?, a.test_fraction, a.seed)?;
    create_dir(&a.out)?;
    let m = save_dataset(&ds, &a.out, Some(a.seed))?;
    log::info!("wrote {} images in {} classes to {}", ds.len(), m.classes.len(), a.out.display());
    run.output(a.out.join(MANIFEST));
    run.finish(ManifestLocation::Dir(&a.out))?;
    Ok(())
}

fn read_train_config(path: &Path) -> Result<TrainConfig> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text).map_err(|e| starshape::Error::Config(format!("{}: {e}", path.display())).into())
    } else {
        serde_yaml::from_str(&text).map_err(|source| CliError::Yaml {
            path: path.to_path_buf(),
            source,
        })
    }
}

pub fn train(ctx: &Context, a: TrainArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => read_train_config(p)?,
        None => TrainConfig::default(),
    };
    if let Some(s) = a.steps {
        cfg.steps = s;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(o) = &a.objective {
        cfg.objective = parse(o)?;
    }
    if let Some(k) = &a.kind {
        cfg.model.kind = parse(k)?;
    }
    if let Some(b) = a.batch_size {
        cfg.batch_size = b;
    }
    if let Some(i) = a.checkpoint_interval {
        cfg.checkpoint_interval = i;
    }
    if let Some(c) = &a.classes {
        cfg.classes = c.clone();
    }
    let data = a
        .data
        .clone()
        .or_else(|| cfg.data.clone())
        .or_else(|| std::env::var_os("STARSHAPE_DATA_DIR").map(PathBuf::from))
        .ok_or_else(|| CliError::Config("no dataset given (--data, config `data` or STARSHAPE_DATA_DIR)".into()))?;
    cfg.data = Some(data.clone());
    cfg.validate()?;

    let mut run = RunManifest::start("train", ctx.argv.clone(), Some(cfg.seed));
    run.config(&cfg);
    if let Some(p) = &a.config {
        run.input(p)?;
    }
    let ds = load_data(&data, &mut run)?;
    let outcome = match &a.resume {
        Some(ckpt) => {
            run.input(ckpt)?;
            training::resume::<f32>(ckpt, cfg, &ds, &a.out)?
        }
        None => training::train::<f32>(cfg, &ds, &a.out)?,
    };
    for (_, p) in &outcome.checkpoints {
        run.output(p.clone());
    }
    run.output(a.out.join(training::LOG_FILE));
    log::info!("training finished at step {}", outcome.final_step);
    run.finish(ManifestLocation::Dir(&a.out))?;
    Ok(())
}

/// Classes a checkpoint was trained on: its config's list, else every dataset class.
fn checkpoint_classes(ckpt_cfg: Option<&TrainConfig>, ds: &Dataset, flag: Option<&Vec<String>>) -> Vec<String> {
    if let Some(c) = flag {
        return c.clone();
    }
    match ckpt_cfg {
        Some(c) if !c.classes.is_empty() => c.classes.clone(),
        _ => ds.classes.clone(),
    }
}

pub fn eval_c2st(ctx: &Context, a: C2stArgs) -> Result<()> {
    let flavor: Flavor = parse(&a.flavor)?;
    let cfg = C2stConfig {
        flavor,
        n_splits: a.splits,
        train_steps: a.steps,
        batch_size: a.batch_size,
        disc_width: a.disc_width,
        seed: a.seed,
        workers: ctx.workers,
        ..C2stConfig::default()
    };
    cfg.validate()?;
    let mut run = RunManifest::start("eval-c2st", ctx.argv.clone(), Some(a.seed));
    run.config(&cfg);
    // Validate the checkpoint path before the slower dataset load.
    let ckpt = match &a.checkpoint {
        Some(p) => {
            let c = Checkpoint::<f32>::load(p)?;
            run.input(p)?;
            Some(c)
        }
        None => None,
    };
    let ds = load_data(&a.data, &mut run)?;
    create_parent(&a.out)?;
    match ckpt {
        Some(ckpt) => {
            let classes = checkpoint_classes(ckpt.config.as_ref(), &ds, a.classes.as_ref());
            let mut report = c2st_generator(&ckpt.gen, &ds, &classes, &cfg)?;
            report.step = Some(ckpt.step);
            write_json(&a.out, &report)?;
        }
        None => {
            let classes = a.classes.clone().unwrap_or_else(|| ds.classes.clone());
            let mut w = csv::Writer::from_path(&a.out).map_err(|e| CliError::csv(&a.out, e))?;
            w.write_record(["train_class", "test_class", "median", "mad"])
                .map_err(|e| CliError::csv(&a.out, e))?;
            for ca in &classes {
                for cb in &classes {
                    let r = c2st_real(&ds, ca, cb, &cfg)?;
                    log::info!("{ca} vs {cb}: {:.3} ± {:.3}", r.median, r.mad);
                    w.write_record([ca.clone(), cb.clone(), r.median.to_string(), r.mad.to_string()])
                        .map_err(|e| CliError::csv(&a.out, e))?;
                }
            }
            w.flush().map_err(|e| CliError::io(&a.out, e))?;
        }
    }
    run.output(a.out.clone());
    run.finish(ManifestLocation::Beside(&a.out))?;
    Ok(())
}

/// `class/index` identifiers matching the on-disk layout of a dataset.
fn image_ids(ds: &Dataset) -> Vec<String> {
    let mut seen = vec![0usize; ds.classes.len()];
    ds.items
        .iter()
        .map(|it| {
            let c = it.class();
            seen[c] += 1;
            format!("{}/{:05}", ds.classes[c], seen[c] - 1)
        })
        .collect()
}

fn slot_for(gen: &Generator<f64>, position: usize) -> usize {
    match gen.spec.kind {
        GeneratorKind::Dcgan | GeneratorKind::Separable => 0,
        GeneratorKind::Multichannel | GeneratorKind::Star => position,
    }
}

pub fn reconstruct(ctx: &Context, a: ReconArgs) -> Result<()> {
    let mode: ReconMode = parse(&a.mode)?;
    let cfg = ReconConfig {
        restarts: a.restarts,
        iters: a.iters,
        seed: a.seed,
        workers: ctx.workers,
    };
    cfg.validate()?;
    let mut run = RunManifest::start("reconstruct", ctx.argv.clone(), Some(a.seed));
    run.config(&serde_json::json!({ "mode": mode, "recon": cfg, "limit": a.limit, "classes": a.classes }));
    let ckpt = Checkpoint::<f64>::load(&a.checkpoint)?;
    run.input(&a.checkpoint)?;
    if mode == ReconMode::Separable && !ckpt.gen.spec.kind.has_split_latent() {
        return Err(CliError::Config(format!(
            "separable reconstruction needs a separable or star generator, not {:?}",
            ckpt.gen.spec.kind
        )));
    }
    let ds = load_data(&a.data, &mut run)?;
    let classes = checkpoint_classes(ckpt.config.as_ref(), &ds, a.classes.as_ref());
    let ids = image_ids(&ds);
    let mut targets = Vec::new();
    let mut labels = Vec::new();
    let mut train = Vec::new();
    for (pos, name) in classes.iter().enumerate() {
        let ci = ds
            .class_index(name)
            .ok_or_else(|| CliError::Config(format!("class {name:?} not in dataset")))?;
        let test = ds.indices_of(SplitTag::Test, ci);
        for &i in test.iter().take(a.limit.unwrap_or(usize::MAX)) {
            targets.push((ds.items[i].clone(), slot_for(&ckpt.gen, pos)));
            labels.push((ids[i].clone(), name.clone()));
        }
        train.extend(ds.items_of(SplitTag::Train, ci));
    }
    if targets.is_empty() {
        return Err(CliError::Config("no test images to reconstruct".into()));
    }
    let results = reconstruct_all(&ckpt.gen, &targets, mode, &cfg)?;

    create_parent(&a.out)?;
    let mut w = csv::Writer::from_path(&a.out).map_err(|e| CliError::csv(&a.out, e))?;
    let mut header: Vec<String> = ["image_id", "class", "mode", "l2_error", "nll"].map(String::from).to_vec();
    header.extend((0..cfg.restarts).map(|r| format!("restart_{r}")));
    header.extend(["nn_error", "latent_dim"].map(String::from));
    w.write_record(&header).map_err(|e| CliError::csv(&a.out, e))?;
    for (((id, class), r), (img, _)) in labels.iter().zip(&results).zip(&targets) {
        let nn = if train.is_empty() {
            f64::NAN
        } else {
            nn_baseline(img, &train)?.1
        };
        let mut row = vec![id.clone(), class.clone(), mode.to_string(), r.l2_error.to_string(), r.nll.to_string()];
        row.extend(r.restart_errors.iter().map(f64::to_string));
        row.push(nn.to_string());
        row.push(r.best_latent.len().to_string());
        w.write_record(&row).map_err(|e| CliError::csv(&a.out, e))?;
    }
    w.flush().map_err(|e| CliError::io(&a.out, e))?;
    run.output(a.out.clone());
    run.finish(ManifestLocation::Beside(&a.out))?;
    Ok(())
}

pub fn interpolate(ctx: &Context, a: InterpArgs) -> Result<()> {
    let mut run = RunManifest::start("interpolate", ctx.argv.clone(), Some(a.seed));
    run.config(&serde_json::json!({ "frames": a.frames }));
    let ckpt = Checkpoint::<f32>::load(&a.checkpoint)?;
    run.input(&a.checkpoint)?;
    let d = ckpt.gen.spec.latent_dim;
    let draw = |name: &str| normal_vec_f64(&mut stream(a.seed, name), d);
    let greens: Vec<Vec<f64>> = (0..ckpt.gen.spec.c).map(|k| draw(&format!("interpolate/green/{k}"))).collect();
    let strip = cell_cycle_strip(
        &ckpt.gen,
        &draw("interpolate/red/start"),
        &draw("interpolate/red/end"),
        a.frames,
        &greens,
    )?;
    create_parent(&a.out)?;
    strip.to_rgb().write_png(&a.out)?;
    run.output(a.out.clone());
    run.finish(ManifestLocation::Beside(&a.out))?;
    Ok(())
}

pub fn mine(ctx: &Context, a: MineArgs) -> Result<()> {
    let mut run = RunManifest::start("mine-multichannel", ctx.argv.clone(), None);
    run.config(&serde_json::json!({ "classes": a.classes }));
    let ds = load_data(&a.data, &mut run)?;
    let classes = a.classes.clone().unwrap_or_else(|| ds.classes.clone());
    let mined = mine_multichannel(&ds, &classes, ctx.workers)?;
    create_dir(&a.out)?;
    save_dataset(&mined, &a.out, None)?;
    run.output(a.out.join(MANIFEST));
    run.finish(ManifestLocation::Dir(&a.out))?;
    Ok(())
}

pub fn report(ctx: &Context, a: ReportArgs) -> Result<()> {
    let mut run = RunManifest::start("report", ctx.argv.clone(), None);
    for p in &a.inputs {
        run.input(p)?;
    }
    let inputs = a.inputs.iter().map(|p| plots::Input::read(p)).collect::<Result<Vec<_>>>()?;
    create_parent(&a.out)?;
    let summary = plots::render(&inputs, &a.out)?;
    let md = a.out.with_extension("md");
    fs::write(&md, summary).map_err(|e| CliError::io(&md, e))?;
    run.output(a.out.clone());
    run.output(md);
    run.finish(ManifestLocation::Beside(&a.out))?;
    Ok(())
}

