//! Checkpoint archive: magic bytes, a length-prefixed JSON header, then raw
//! little-endian tensor data in header order.

use std::fs;
use std::io::Write;
use std::path::Path;

use autograd::{Float, ParamStore, Tensor};
use serde::{Deserialize, Serialize};

use super::TrainConfig;
use crate::error::{Error, Result};
use crate::models::{Discriminator, DiscriminatorSpec, Generator, GeneratorSpec};
use crate::objectives::{OptimSettings, Optimizer};

const MAGIC: &[u8; 8] = b"STRSHP01";

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct OptimEntry {
    settings: OptimSettings,
    steps: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    dtype: String,
    step: u64,
    generator: GeneratorSpec,
    discriminators: Vec<DiscriminatorSpec>,
    config: Option<TrainConfig>,
    optimizers: Option<(OptimEntry, Vec<OptimEntry>)>,
    tensors: Vec<TensorEntry>,
}

/// Everything needed to continue training, or to run the generator frozen.
pub struct Checkpoint<T: Float = f32> {
    pub step: u64,
    pub config: Option<TrainConfig>,
    pub gen: Generator<T>,
    pub discs: Vec<Discriminator<T>>,
    /// Generator and discriminator optimizers, with the settings they were built from.
    pub optimizers: Option<((OptimSettings, Optimizer<T>), Vec<(OptimSettings, Optimizer<T>)>)>,
}

fn push_store<'a, T: Float>(
    prefix: &str,
    store: &'a ParamStore<T>,
    entries: &mut Vec<TensorEntry>,
    data: &mut Vec<&'a Tensor<T>>,
) {
    for (name, t) in store.iter() {
        entries.push(TensorEntry {
            name: format!("{prefix}{name}"),
            shape: t.shape().to_vec(),
        });
        data.push(t);
    }
}

fn push_optimizer<'a, T: Float>(
    prefix: &str,
    opt: &'a Optimizer<T>,
    entries: &mut Vec<TensorEntry>,
    data: &mut Vec<&'a Tensor<T>>,
) {
    for (slot, tensors) in opt.state() {
        for (i, t) in tensors.iter().enumerate() {
            entries.push(TensorEntry {
                name: format!("{prefix}{slot}.{i}"),
                shape: t.shape().to_vec(),
            });
            data.push(t);
        }
    }
}

fn encode<T: Float>(t: &Tensor<T>, out: &mut Vec<u8>) {
    if T::DTYPE == "f32" {
        out.extend(t.data().iter().flat_map(|v| (v.as_f64() as f32).to_le_bytes()));
    } else {
        out.extend(t.data().iter().flat_map(|v| v.as_f64().to_le_bytes()));
    }
}

impl<T: Float> Checkpoint<T> {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut entries = Vec::new();
        let mut data = Vec::new();
        push_store("g.param.", &self.gen.params, &mut entries, &mut data);
        push_store("g.buffer.", &self.gen.buffers, &mut entries, &mut data);
        for (k, d) in self.discs.iter().enumerate() {
            push_store(&format!("d{k}.param."), &d.params, &mut entries, &mut data);
        }
        let optimizers = self.optimizers.as_ref().map(|((gs, g), ds)| {
            push_optimizer("opt.g.", g, &mut entries, &mut data);
            for (k, (_, d)) in ds.iter().enumerate() {
                push_optimizer(&format!("opt.d{k}."), d, &mut entries, &mut data);
            }
            (
                OptimEntry {
                    settings: *gs,
                    steps: g.steps(),
                },
                ds.iter()
                    .map(|(s, o)| OptimEntry {
                        settings: *s,
                        steps: o.steps(),
                    })
                    .collect(),
            )
        });
        let header = Header {
            dtype: T::DTYPE.into(),
            step: self.step,
            generator: self.gen.spec.clone(),
            discriminators: self.discs.iter().map(|d| d.spec.clone()).collect(),
            config: self.config.clone(),
            optimizers,
            tensors: entries,
        };
        let json = serde_json::to_vec(&header).map_err(|e| Error::json(path, e))?;
        let mut bytes = Vec::with_capacity(json.len() + 16 + data.iter().map(|t| t.numel() * 8).sum::<usize>());
        bytes.extend_from_slice(MAGIC);
        bytes.extend_from_slice(&(json.len() as u64).to_le_bytes());
        bytes.extend_from_slice(&json);
        for t in data {
            encode(t, &mut bytes);
        }
        // Write to a sibling file first so a crash never leaves a truncated checkpoint.
        let tmp = path.with_extension("partial");
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let corrupt = |m: &str| Error::Config(format!("{}: {m}", path.display()));
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(corrupt("not a checkpoint archive"));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let body = bytes.get(16..16 + hlen).ok_or_else(|| corrupt("truncated header"))?;
        let header: Header = serde_json::from_slice(body).map_err(|e| Error::json(path, e))?;
        let width = match header.dtype.as_str() {
            "f32" => 4,
            "f64" => 8,
            other => return Err(corrupt(&format!("unknown dtype {other}"))),
        };
        let mut at = 16 + hlen;
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for e in &header.tensors {
            let n: usize = e.shape.iter().product();
            let raw = bytes
                .get(at..at + n * width)
                .ok_or_else(|| corrupt("truncated tensor data"))?;
            at += n * width;
            let values: Vec<T> = if width == 4 {
                raw.chunks_exact(4)
                    .map(|b| T::from_f64c(f32::from_le_bytes(b.try_into().unwrap()) as f64))
                    .collect()
            } else {
                raw.chunks_exact(8)
                    .map(|b| T::from_f64c(f64::from_le_bytes(b.try_into().unwrap())))
                    .collect()
            };
            tensors.push((e.name.clone(), Tensor::from_vec(e.shape.clone(), values)));
        }
        if at != bytes.len() {
            return Err(corrupt("trailing bytes"));
        }

        let store = |prefix: &str| {
            let mut s = ParamStore::new();
            for (name, t) in &tensors {
                if let Some(rest) = name.strip_prefix(prefix) {
                    s.insert(rest.to_string(), t.clone());
                }
            }
            s
        };
        let gen = Generator::from_parts(header.generator.clone(), store("g.param."), store("g.buffer."))?;
        let discs = header
            .discriminators
            .iter()
            .enumerate()
            .map(|(k, spec)| Discriminator::from_parts(spec.clone(), store(&format!("d{k}.param."))))
            .collect::<Result<Vec<_>>>()?;

        let restore = |entry: &OptimEntry, params: &ParamStore<T>, prefix: &str| -> Result<(OptimSettings, Optimizer<T>)> {
            let mut opt = Optimizer::new(entry.settings, params);
            let mut slots: Vec<(String, Vec<Tensor<T>>)> = Vec::new();
            for (name, t) in &tensors {
                if let Some(rest) = name.strip_prefix(prefix) {
                    let slot = rest.split('.').next().unwrap_or_default().to_string();
                    match slots.iter_mut().find(|(s, _)| *s == slot) {
                        Some((_, v)) => v.push(t.clone()),
                        None => slots.push((slot, vec![t.clone()])),
                    }
                }
            }
            opt.restore(entry.steps, slots)?;
            Ok((entry.settings, opt))
        };
        let optimizers = match &header.optimizers {
            None => None,
            Some((g, ds)) => {
                if ds.len() != discs.len() {
                    return Err(corrupt("optimizer count does not match discriminators"));
                }
                let g_opt = restore(g, &gen.params, "opt.g.")?;
                let d_opts = ds
                    .iter()
                    .zip(&discs)
                    .enumerate()
                    .map(|(k, (e, d))| restore(e, &d.params, &format!("opt.d{k}.")))
                    .collect::<Result<Vec<_>>>()?;
                Some((g_opt, d_opts))
            }
        };
        Ok(Self {
            step: header.step,
            config: header.config,
            gen,
            discs,
            optimizers,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{GeneratorKind, Head, Mode};
    use crate::rng::stream;

    #[test]
    fn round_trip_is_bit_exact_for_eval_outputs() {
        let mut gen = Generator::<f32>::new(GeneratorSpec::new(GeneratorKind::Star, 2, 24), &mut stream(1, "g")).unwrap();
        let z0 = gen.sample_latent(8, &mut stream(2, "z"));
        let warm = gen.generate(&z0, Mode::Train).unwrap();
        gen.update_running(&warm.bn_stats);
        let discs: Vec<_> = (0..2)
            .map(|k| Discriminator::new(DiscriminatorSpec::new(2, 4, Head::Unconstrained), &mut stream(k, "d")).unwrap())
            .collect();
        let s = OptimSettings::Adam {
            lr: 1e-4,
            beta1: 0.5,
            beta2: 0.9,
        };
        let mut g_opt = Optimizer::new(s, &gen.params);
        let grads: Vec<_> = gen.params.tensors().iter().map(|t| t.map(|v| v * 0.1 + 0.01)).collect();
        g_opt.step(&mut gen.params, &grads);
        let d_opts = discs.iter().map(|d| (s, Optimizer::new(s, &d.params))).collect();
        let ckpt = Checkpoint {
            step: 7,
            config: None,
            gen,
            discs,
            optimizers: Some(((s, g_opt), d_opts)),
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.ckpt");
        ckpt.save(&path).unwrap();
        let back = Checkpoint::<f32>::load(&path).unwrap();
        assert_eq!(back.step, 7);
        assert_eq!(back.gen.params.tensors(), ckpt.gen.params.tensors());
        assert_eq!(back.gen.buffers.tensors(), ckpt.gen.buffers.tensors());
        let z = ckpt.gen.sample_latent(4, &mut stream(3, "z"));
        let a = ckpt.gen.generate(&z, Mode::Eval).unwrap().full().value().clone();
        let b = back.gen.generate(&z, Mode::Eval).unwrap().full().value().clone();
        assert_eq!(a, b);
        let ((_, g1), _) = back.optimizers.as_ref().unwrap();
        let ((_, g0), _) = ckpt.optimizers.as_ref().unwrap();
        assert_eq!(g1.steps(), 1);
        assert_eq!(g1.state()[0].1, g0.state()[0].1);
    }

    #[test]
    fn garbage_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.ckpt");
        fs::write(&path, b"hello world, not a checkpoint").unwrap();
        assert!(Checkpoint::<f32>::load(&path).err().unwrap().is_config());
        assert!(Checkpoint::<f32>::load(&dir.path().join("missing")).err().unwrap().is_config());
    }
}
