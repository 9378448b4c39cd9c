use std::cell::Cell;
use std::fmt;
use std::rc::Rc;

use crate::conv::{self, ConvGeom};
use crate::float::Float;
use crate::tensor::Tensor;

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

pub fn is_grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

struct ModeGuard(bool);

impl Drop for ModeGuard {
    fn drop(&mut self) {
        GRAD_ENABLED.with(|g| g.set(self.0));
    }
}

pub(crate) fn with_grad_mode<R>(enabled: bool, f: impl FnOnce() -> R) -> R {
    let _guard = ModeGuard(GRAD_ENABLED.with(|g| g.replace(enabled)));
    f()
}

/// Runs `f` without recording any graph.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    with_grad_mode(false, f)
}

#[derive(Clone, Debug)]
pub(crate) enum Op<T> {
    Add,
    Sub,
    Mul,
    Neg,
    Scale(T),
    AddScalar,
    Square,
    Sqrt,
    Recip,
    Log,
    Exp,
    Tanh,
    Sigmoid,
    MaskMul(Tensor<T>),
    MatMul,
    Transpose,
    Reshape(Vec<usize>),
    BroadcastTo(Vec<usize>),
    SumTo(Vec<usize>),
    Narrow {
        axis: usize,
        start: usize,
        full: usize,
    },
    Embed {
        axis: usize,
        start: usize,
        len: usize,
    },
    Concat {
        axis: usize,
        sizes: Vec<usize>,
    },
    Conv(ConvGeom),
    ConvT(ConvGeom),
    ConvW(ConvGeom),
}

pub(crate) struct Node<T> {
    pub(crate) value: Tensor<T>,
    pub(crate) op: Option<Op<T>>,
    pub(crate) parents: Vec<Var<T>>,
    pub(crate) requires_grad: bool,
}

/// A tensor-valued node of the computation graph.
///
/// Cloning is cheap (reference counted). Operations on vars whose inputs
/// require gradients are recorded unless recording is disabled by
/// [`no_grad`].
#[derive(Clone)]
pub struct Var<T>(pub(crate) Rc<Node<T>>);

impl<T: Float> fmt::Debug for Var<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "Var({:?}, grad={})",
            self.0.value,
            self.0.requires_grad
        )
    }
}

impl<T: Float> Var<T> {
    /// A differentiable leaf.
    pub fn leaf(value: Tensor<T>) -> Self {
        Self(Rc::new(Node {
            value,
            op: None,
            parents: Vec::new(),
            requires_grad: true,
        }))
    }

    pub fn constant(value: Tensor<T>) -> Self {
        Self(Rc::new(Node {
            value,
            op: None,
            parents: Vec::new(),
            requires_grad: false,
        }))
    }

    fn record(value: Tensor<T>, op: Op<T>, parents: Vec<Var<T>>) -> Self {
        if is_grad_enabled() && parents.iter().any(|p| p.requires_grad()) {
            Self(Rc::new(Node {
                value,
                op: Some(op),
                parents,
                requires_grad: true,
            }))
        } else {
            Self::constant(value)
        }
    }

    pub fn value(&self) -> &Tensor<T> {
        &self.0.value
    }

    pub fn shape(&self) -> &[usize] {
        self.0.value.shape()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn item(&self) -> T {
        self.0.value.item()
    }

    /// Same value, cut from the graph.
    pub fn detach(&self) -> Self {
        Self::constant(self.0.value.clone())
    }

    pub(crate) fn key(&self) -> usize {
        Rc::as_ptr(&self.0) as usize
    }

    pub fn add(&self, other: &Self) -> Self {
        let v = self.value().zip_map(other.value(), |a, b| a + b);
        Self::record(v, Op::Add, vec![self.clone(), other.clone()])
    }

    pub fn sub(&self, other: &Self) -> Self {
        let v = self.value().zip_map(other.value(), |a, b| a - b);
        Self::record(v, Op::Sub, vec![self.clone(), other.clone()])
    }

    pub fn mul(&self, other: &Self) -> Self {
        let v = self.value().zip_map(other.value(), |a, b| a * b);
        Self::record(v, Op::Mul, vec![self.clone(), other.clone()])
    }

    pub fn div(&self, other: &Self) -> Self {
        self.mul(&other.recip())
    }

    pub fn neg(&self) -> Self {
        Self::record(self.value().map(|a| -a), Op::Neg, vec![self.clone()])
    }

    pub fn scale(&self, c: f64) -> Self {
        let c = T::from_f64c(c);
        Self::record(self.value().map(|a| a * c), Op::Scale(c), vec![self.clone()])
    }

    pub fn add_scalar(&self, c: f64) -> Self {
        let c = T::from_f64c(c);
        Self::record(self.value().map(|a| a + c), Op::AddScalar, vec![self.clone()])
    }

    pub fn square(&self) -> Self {
        Self::record(self.value().map(|a| a * a), Op::Square, vec![self.clone()])
    }

    /// Square root; its derivative is taken as zero where the value is zero.
    pub fn sqrt(&self) -> Self {
        Self::record(self.value().map(|a| a.sqrt()), Op::Sqrt, vec![self.clone()])
    }

    /// `1/x`, defined as zero at zero.
    pub fn recip(&self) -> Self {
        let v = self
            .value()
            .map(|a| if a == T::zero() { T::zero() } else { a.recip() });
        Self::record(v, Op::Recip, vec![self.clone()])
    }

    pub fn ln(&self) -> Self {
        Self::record(self.value().map(|a| a.ln()), Op::Log, vec![self.clone()])
    }

    pub fn exp(&self) -> Self {
        Self::record(self.value().map(|a| a.exp()), Op::Exp, vec![self.clone()])
    }

    pub fn tanh(&self) -> Self {
        Self::record(self.value().map(|a| a.tanh()), Op::Tanh, vec![self.clone()])
    }

    pub fn sigmoid(&self) -> Self {
        let v = self.value().map(|a| {
            if a >= T::zero() {
                T::one() / (T::one() + (-a).exp())
            } else {
                let e = a.exp();
                e / (T::one() + e)
            }
        });
        Self::record(v, Op::Sigmoid, vec![self.clone()])
    }

    /// Elementwise product with a constant tensor.
    pub fn mask_mul(&self, mask: &Tensor<T>) -> Self {
        let v = self.value().zip_map(mask, |a, m| a * m);
        Self::record(v, Op::MaskMul(mask.clone()), vec![self.clone()])
    }

    pub fn relu(&self) -> Self {
        self.leaky_relu(0.0)
    }

    pub fn leaky_relu(&self, slope: f64) -> Self {
        let s = T::from_f64c(slope);
        let mask = self
            .value()
            .map(|a| if a > T::zero() { T::one() } else { s });
        self.mask_mul(&mask)
    }

    /// Clamp into `[lo, hi]`; gradient passes only where the input is inside.
    pub fn clamp(&self, lo: f64, hi: f64) -> Self {
        let (l, h) = (T::from_f64c(lo), T::from_f64c(hi));
        let clamped = self.value().map(|a| a.max(l).min(h));
        let inside = self.value().map(|a| {
            if a >= l && a <= h {
                T::one()
            } else {
                T::zero()
            }
        });
        // clamped = inside * x + (constant offset for the clipped entries)
        let offset = Var::constant(clamped.zip_map(&inside, |c, m| c * (T::one() - m)));
        self.mask_mul(&inside).add(&offset)
    }

    pub fn matmul(&self, other: &Self) -> Self {
        let v = self.value().matmul(other.value());
        Self::record(v, Op::MatMul, vec![self.clone(), other.clone()])
    }

    pub fn t(&self) -> Self {
        Self::record(self.value().transpose2(), Op::Transpose, vec![self.clone()])
    }

    pub fn reshape(&self, shape: impl Into<Vec<usize>>) -> Self {
        let shape = shape.into();
        if shape.as_slice() == self.shape() {
            return self.clone();
        }
        let from = self.shape().to_vec();
        Self::record(self.value().reshape(shape), Op::Reshape(from), vec![self.clone()])
    }

    pub fn broadcast_to(&self, shape: &[usize]) -> Self {
        if shape == self.shape() {
            return self.clone();
        }
        let from = self.shape().to_vec();
        Self::record(
            self.value().broadcast_to(shape),
            Op::BroadcastTo(from),
            vec![self.clone()],
        )
    }

    pub fn sum_to(&self, shape: &[usize]) -> Self {
        if shape == self.shape() {
            return self.clone();
        }
        let from = self.shape().to_vec();
        Self::record(self.value().sum_to(shape), Op::SumTo(from), vec![self.clone()])
    }

    /// Sum of all entries as a rank-0 tensor.
    pub fn sum(&self) -> Self {
        self.sum_to(&[])
    }

    pub fn mean(&self) -> Self {
        let n = self.value().numel() as f64;
        self.sum().scale(1.0 / n)
    }

    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Self {
        let full = self.shape()[axis];
        if start == 0 && len == full {
            return self.clone();
        }
        Self::record(
            self.value().narrow(axis, start, len),
            Op::Narrow { axis, start, full },
            vec![self.clone()],
        )
    }

    pub fn embed(&self, axis: usize, start: usize, full: usize) -> Self {
        let len = self.shape()[axis];
        Self::record(
            self.value().embed(axis, start, full),
            Op::Embed { axis, start, len },
            vec![self.clone()],
        )
    }

    pub fn concat(parts: &[Self], axis: usize) -> Self {
        if parts.len() == 1 {
            return parts[0].clone();
        }
        let values: Vec<&Tensor<T>> = parts.iter().map(|p| p.value()).collect();
        let sizes = parts.iter().map(|p| p.shape()[axis]).collect();
        Self::record(
            Tensor::concat(&values, axis),
            Op::Concat { axis, sizes },
            parts.to_vec(),
        )
    }

    /// Strided convolution; `self` is `[B, c_in, h_in, w_in]`, `w` is `[c_out, c_in, k, k]`.
    pub fn conv2d(&self, w: &Self, geom: ConvGeom) -> Self {
        let b = self.batch_of(geom.in_shape(1));
        assert_eq!(w.shape(), geom.weight_shape(), "conv weight shape");
        let y = conv::conv_forward(&geom, b, self.value().data(), w.value().data());
        Self::record(
            Tensor::from_vec(geom.out_shape(b).to_vec(), y),
            Op::Conv(geom),
            vec![self.clone(), w.clone()],
        )
    }

    /// Transposed convolution from the small `[B, c_out, h_out, w_out]` side of `geom`
    /// to the large `[B, c_in, h_in, w_in]` side.
    pub fn conv_transpose2d(&self, w: &Self, geom: ConvGeom) -> Self {
        let b = self.batch_of(geom.out_shape(1));
        assert_eq!(w.shape(), geom.weight_shape(), "conv weight shape");
        let x = conv::conv_input_grad(&geom, b, self.value().data(), w.value().data());
        Self::record(
            Tensor::from_vec(geom.in_shape(b).to_vec(), x),
            Op::ConvT(geom),
            vec![self.clone(), w.clone()],
        )
    }

    /// Weight-space adjoint of [`Var::conv2d`] pairing input `self` with output-side `gy`.
    pub fn conv_weight(&self, gy: &Self, geom: ConvGeom) -> Self {
        let b = self.batch_of(geom.in_shape(1));
        let dw = conv::conv_weight_grad(&geom, b, self.value().data(), gy.value().data());
        Self::record(
            Tensor::from_vec(geom.weight_shape().to_vec(), dw),
            Op::ConvW(geom),
            vec![self.clone(), gy.clone()],
        )
    }

    fn batch_of(&self, per_item: [usize; 4]) -> usize {
        let s = self.shape();
        assert!(
            s.len() == 4 && s[1..] == per_item[1..],
            "conv input shape {s:?} does not match geometry {:?}",
            &per_item[1..]
        );
        s[0]
    }
}
