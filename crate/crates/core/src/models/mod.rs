//! Generator and discriminator networks.

mod discriminator;
mod generator;

use autograd::{Float, Tensor, Var};
use rand::Rng;
use rand_distr::{Distribution, Normal};

pub use discriminator::{Discriminator, DiscriminatorSpec, Head};
pub use generator::{GenOutput, Generator, GeneratorKind, GeneratorSpec, Latent, Mode};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;
pub const INIT_STD: f64 = 0.02;
pub const LEAKY_SLOPE: f64 = 0.2;

pub fn gaussian<T: Float>(shape: &[usize], mean: f64, std: f64, rng: &mut impl Rng) -> Tensor<T> {
    let dist = Normal::new(mean, std).expect("valid normal");
    let n = shape.iter().product();
    Tensor::from_vec(shape.to_vec(), (0..n).map(|_| T::from_f64c(dist.sample(rng))).collect())
}

/// Per-channel statistics of one batch-norm layer, gathered in training mode.
#[derive(Clone, Debug)]
pub struct BnBatchStat<T> {
    /// Parameter prefix of the layer, e.g. `red.bn0`.
    pub layer: String,
    pub mean: Tensor<T>,
    /// Unbiased batch variance.
    pub var: Tensor<T>,
}

/// Broadcasts a per-channel `[C]` vector over an NCHW map.
fn per_channel<T: Float>(v: &Var<T>, shape: &[usize]) -> Var<T> {
    v.reshape(vec![1, shape[1], 1, 1]).broadcast_to(shape)
}

/// Batch normalization over `(N, H, W)` for every channel of an NCHW map.
///
/// With `running = None` the batch statistics are used and reported into
/// `stats`; otherwise the given running mean and variance are applied.
pub(crate) fn batch_norm<T: Float>(
    x: &Var<T>,
    gamma: &Var<T>,
    beta: &Var<T>,
    running: Option<(&Tensor<T>, &Tensor<T>)>,
    layer: &str,
    stats: &mut Vec<BnBatchStat<T>>,
) -> Var<T> {
    let shape = x.shape().to_vec();
    let c = shape[1];
    let (centered, inv_std) = match running {
        Some((mean, var)) => {
            let mean = Var::constant(mean.reshape(vec![1, c, 1, 1]).broadcast_to(&shape));
            let inv = var.map(|v| T::one() / (v + T::from_f64c(BN_EPS)).sqrt());
            (x.sub(&mean), Var::constant(inv.reshape(vec![1, c, 1, 1]).broadcast_to(&shape)))
        }
        None => {
            let n = (shape[0] * shape[2] * shape[3]) as f64;
            let mean = x.sum_to(&[1, c, 1, 1]).scale(1.0 / n);
            let centered = x.sub(&mean.broadcast_to(&shape));
            let var = centered.square().sum_to(&[1, c, 1, 1]).scale(1.0 / n);
            let unbiased = n / (n - 1.0).max(1.0);
            stats.push(BnBatchStat {
                layer: layer.to_string(),
                mean: mean.value().reshape(vec![c]),
                var: var.value().reshape(vec![c]).map(|v| v * T::from_f64c(unbiased)),
            });
            let inv = var.add_scalar(BN_EPS).sqrt().recip().broadcast_to(&shape);
            (centered, inv)
        }
    };
    centered
        .mul(&inv_std)
        .mul(&per_channel(gamma, &shape))
        .add(&per_channel(beta, &shape))
}

#[cfg(test)]
mod tests {
    use super::*;
    use autograd::{grad_values, no_grad};

    #[test]
    fn batch_norm_matches_direct_formula() {
        let data: Vec<f64> = (0..2 * 3 * 2 * 2).map(|i| ((i * 7) % 11) as f64 * 0.3 - 1.0).collect();
        let x = Var::leaf(Tensor::from_vec(vec![2, 3, 2, 2], data.clone()));
        let gamma = Var::constant(Tensor::from_vec(vec![3], vec![1.0, 2.0, 0.5]));
        let beta = Var::constant(Tensor::from_vec(vec![3], vec![0.0, -1.0, 0.25]));
        let mut stats = Vec::new();
        let y = batch_norm(&x, &gamma, &beta, None, "t", &mut stats);
        for c in 0..3 {
            let vals: Vec<f64> = (0..2)
                .flat_map(|b| (0..4).map(move |p| (b, p)))
                .map(|(b, p)| data[(b * 3 + c) * 4 + p])
                .collect();
            let m = vals.iter().sum::<f64>() / 8.0;
            let v = vals.iter().map(|x| (x - m).powi(2)).sum::<f64>() / 8.0;
            assert!((stats[0].mean.data()[c] - m).abs() < 1e-12);
            assert!((stats[0].var.data()[c] - v * 8.0 / 7.0).abs() < 1e-12);
            let g = gamma.value().data()[c];
            let bt = beta.value().data()[c];
            for b in 0..2 {
                for p in 0..4 {
                    let i = (b * 3 + c) * 4 + p;
                    let want = (data[i] - m) / (v + BN_EPS).sqrt() * g + bt;
                    assert!((y.value().data()[i] - want).abs() < 1e-12);
                }
            }
        }
        // Normalized output is invariant to a shift of the input.
        let g = grad_values(&y.sum(), std::slice::from_ref(&x));
        assert!(g[0].max_abs() < 1e-9);
        let eval = no_grad(|| {
            batch_norm(&x, &gamma, &beta, Some((&stats[0].mean, &stats[0].var)), "t", &mut Vec::new())
        });
        assert!(eval.value().all_finite());
    }
}
