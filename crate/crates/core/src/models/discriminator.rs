use autograd::{no_grad, Bound, ConvGeom, Float, ParamStore, Tensor, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{gaussian, INIT_STD, LEAKY_SLOPE};
use crate::data::{HEIGHT, WIDTH};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Head {
    /// Probability output in `(0, 1)`.
    Sigmoid,
    /// Real-valued critic output.
    Unconstrained,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscriminatorSpec {
    pub input_channels: usize,
    pub height: usize,
    pub width: usize,
    /// Filters of the first convolution; each further one doubles.
    pub base_width: usize,
    /// Number of stride-2 convolutions before the linear output layer.
    pub layers: usize,
    pub head: Head,
}

impl DiscriminatorSpec {
    /// Four stride-2 stages over full-size images, mirroring the generator ladder.
    pub fn new(input_channels: usize, base_width: usize, head: Head) -> Self {
        Self {
            input_channels,
            height: HEIGHT,
            width: WIDTH,
            base_width,
            layers: 4,
            head,
        }
    }

    fn geoms(&self) -> Vec<ConvGeom> {
        let (mut h, mut w, mut c) = (self.height, self.width, self.input_channels);
        (0..self.layers)
            .map(|l| {
                let g = ConvGeom::down(c, h, w, self.base_width << l, 4, 2, 1);
                (h, w, c) = (g.h_out, g.w_out, g.c_out);
                g
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_channels < 2 {
            return Err(Error::Config("discriminators see at least 2 channels".into()));
        }
        if self.base_width == 0 || self.layers == 0 {
            return Err(Error::Config("discriminator needs width and at least one layer".into()));
        }
        if self.height % (1 << self.layers) != 0 || self.width % (1 << self.layers) != 0 {
            return Err(Error::Config(format!(
                "{}×{} input cannot be halved {} times",
                self.height, self.width, self.layers
            )));
        }
        Ok(())
    }
}

#[derive(Clone)]
pub struct Discriminator<T: Float = f32> {
    pub spec: DiscriminatorSpec,
    pub params: ParamStore<T>,
}

impl<T: Float> Discriminator<T> {
    pub fn new(spec: DiscriminatorSpec, rng: &mut impl Rng) -> Result<Self> {
        spec.validate()?;
        let mut params = ParamStore::new();
        let geoms = spec.geoms();
        for (l, g) in geoms.iter().enumerate() {
            params.insert(format!("conv{l}.w"), gaussian(&g.weight_shape(), 0.0, INIT_STD, rng));
            params.insert(format!("conv{l}.b"), Tensor::zeros(vec![g.c_out]));
        }
        let last = geoms.last().expect("at least one layer");
        let features = last.c_out * last.h_out * last.w_out;
        params.insert("out.w", gaussian(&[features, 1], 0.0, INIT_STD, rng));
        params.insert("out.b", Tensor::zeros(vec![1]));
        Ok(Self { spec, params })
    }

    pub fn from_parts(spec: DiscriminatorSpec, params: ParamStore<T>) -> Result<Self> {
        let reference = Self::new(spec.clone(), &mut crate::rng::stream(0, "shape-check"))?;
        if reference.params.names() != params.names()
            || reference
                .params
                .tensors()
                .iter()
                .zip(params.tensors())
                .any(|(a, b)| a.shape() != b.shape())
        {
            return Err(Error::Config("stored tensors do not match the discriminator spec".into()));
        }
        Ok(Self { spec, params })
    }

    /// Scores a `[B, C, H, W]` batch, giving `[B, 1]`.
    pub fn score(&self, bound: &Bound<T>, x: &Var<T>) -> Var<T> {
        let b = x.shape()[0];
        let mut h = x.clone();
        for (l, g) in self.spec.geoms().into_iter().enumerate() {
            let bias = bound.get(&format!("conv{l}.b"));
            h = h.conv2d(bound.get(&format!("conv{l}.w")), g);
            h = h
                .add(&bias.reshape(vec![1, g.c_out, 1, 1]).broadcast_to(h.shape()))
                .leaky_relu(LEAKY_SLOPE);
        }
        let features = h.shape()[1..].iter().product();
        let out = h
            .reshape(vec![b, features])
            .matmul(bound.get("out.w"))
            .add(&bound.get("out.b").reshape(vec![1, 1]).broadcast_to(&[b, 1]));
        match self.spec.head {
            Head::Sigmoid => out.sigmoid(),
            Head::Unconstrained => out,
        }
    }

    /// Graph-free scores.
    pub fn score_values(&self, x: &Tensor<T>) -> Tensor<T> {
        no_grad(|| {
            self.score(&self.params.bind(false), &Var::constant(x.clone()))
                .value()
                .clone()
        })
    }
}
