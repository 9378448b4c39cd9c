use std::fmt;
use std::sync::Arc;

use crate::float::Float;

/// Dense row-major array with shared, copy-on-write storage.
#[derive(Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Arc<Vec<T>>,
}

impl<T: fmt::Debug> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}", self.shape)?;
        if self.data.len() <= 8 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}

pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<T: Float> Tensor<T> {
    pub fn from_vec(shape: impl Into<Vec<usize>>, data: Vec<T>) -> Self {
        let shape = shape.into();
        assert_eq!(
            numel(&shape),
            data.len(),
            "shape {shape:?} does not match {} elements",
            data.len()
        );
        Self {
            shape,
            data: Arc::new(data),
        }
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: T) -> Self {
        let shape = shape.into();
        let n = numel(&shape);
        Self::from_vec(shape, vec![value; n])
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, T::one())
    }

    pub fn scalar(value: T) -> Self {
        Self::from_vec(Vec::new(), vec![value])
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    /// Mutable access; clones the storage if it is shared.
    pub fn data_mut(&mut self) -> &mut [T] {
        Arc::make_mut(&mut self.data).as_mut_slice()
    }

    pub fn into_vec(self) -> Vec<T> {
        Arc::try_unwrap(self.data).unwrap_or_else(|d| (*d).clone())
    }

    /// The single element of a one-element tensor.
    pub fn item(&self) -> T {
        assert_eq!(self.numel(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    pub fn reshape(&self, shape: impl Into<Vec<usize>>) -> Self {
        let shape = shape.into();
        assert_eq!(
            numel(&shape),
            self.numel(),
            "cannot reshape {:?} to {shape:?}",
            self.shape
        );
        Self {
            shape,
            data: self.data.clone(),
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self::from_vec(self.shape.clone(), self.data.iter().map(|&x| f(x)).collect())
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Self {
        assert_eq!(self.shape, other.shape, "elementwise shape mismatch");
        Self::from_vec(
            self.shape.clone(),
            self.data
                .iter()
                .zip(other.data.iter())
                .map(|(&a, &b)| f(a, b))
                .collect(),
        )
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn mean(&self) -> T {
        self.sum() / T::from_usize(self.numel()).unwrap()
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, &x| m.max(x.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn cast<U: Float>(&self) -> Tensor<U> {
        Tensor::from_vec(
            self.shape.clone(),
            self.data.iter().map(|&x| U::from_f64c(x.as_f64())).collect(),
        )
    }

    /// Numpy-style broadcast (shapes right-aligned, size-1 axes expanded).
    pub fn broadcast_to(&self, shape: &[usize]) -> Self {
        if self.shape == shape {
            return self.clone();
        }
        let strides = broadcast_strides(&self.shape, shape);
        let mut out = vec![T::zero(); numel(shape)];
        let src = self.data();
        walk(shape, &strides, |o, s, len, step| {
            let dst = &mut out[o..o + len];
            if step == 0 {
                dst.fill(src[s]);
            } else {
                for (j, d) in dst.iter_mut().enumerate() {
                    *d = src[s + j * step];
                }
            }
        });
        Self::from_vec(shape.to_vec(), out)
    }

    /// Sums over the axes that `broadcast_to(self.shape())` would expand.
    pub fn sum_to(&self, shape: &[usize]) -> Self {
        if self.shape == shape {
            return self.clone();
        }
        let strides = broadcast_strides(shape, &self.shape);
        let mut out = vec![T::zero(); numel(shape)];
        let src = self.data();
        walk(&self.shape, &strides, |o, s, len, step| {
            let seg = &src[o..o + len];
            if step == 0 {
                out[s] += seg.iter().copied().sum::<T>();
            } else {
                for (j, &v) in seg.iter().enumerate() {
                    out[s + j * step] += v;
                }
            }
        });
        Self::from_vec(shape.to_vec(), out)
    }

    /// Slice `len` entries starting at `start` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Self {
        let (outer, full, inner) = split_axis(&self.shape, axis);
        assert!(start + len <= full, "narrow out of range");
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * full + start) * inner;
            out.extend_from_slice(&self.data[base..base + len * inner]);
        }
        let mut shape = self.shape.clone();
        shape[axis] = len;
        Self::from_vec(shape, out)
    }

    /// Adjoint of `narrow`: place `self` at `start` inside zeros of size `full` along `axis`.
    pub fn embed(&self, axis: usize, start: usize, full: usize) -> Self {
        let (outer, len, inner) = split_axis(&self.shape, axis);
        assert!(start + len <= full, "embed out of range");
        let mut out = vec![T::zero(); outer * full * inner];
        for o in 0..outer {
            let dst = (o * full + start) * inner;
            let src = o * len * inner;
            out[dst..dst + len * inner].copy_from_slice(&self.data[src..src + len * inner]);
        }
        let mut shape = self.shape.clone();
        shape[axis] = full;
        Self::from_vec(shape, out)
    }

    pub fn concat(parts: &[&Self], axis: usize) -> Self {
        assert!(!parts.is_empty(), "concat of nothing");
        let first = parts[0].shape();
        let mut shape = first.to_vec();
        shape[axis] = parts.iter().map(|p| p.shape[axis]).sum();
        for p in parts {
            assert_eq!(p.shape.len(), first.len(), "concat rank mismatch");
            for (d, (&a, &b)) in p.shape.iter().zip(first).enumerate() {
                assert!(d == axis || a == b, "concat shape mismatch");
            }
        }
        let (outer, _, inner) = split_axis(first, axis);
        let mut out = Vec::with_capacity(numel(&shape));
        for o in 0..outer {
            for p in parts {
                let n = p.shape[axis] * inner;
                out.extend_from_slice(&p.data[o * n..(o + 1) * n]);
            }
        }
        Self::from_vec(shape, out)
    }

    pub fn transpose2(&self) -> Self {
        assert_eq!(self.shape.len(), 2, "transpose2 needs a matrix");
        let (r, c) = (self.shape[0], self.shape[1]);
        let mut out = vec![T::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Self::from_vec(vec![c, r], out)
    }

    pub fn matmul(&self, other: &Self) -> Self {
        assert!(
            self.shape.len() == 2 && other.shape.len() == 2 && self.shape[1] == other.shape[0],
            "matmul shape mismatch {:?} x {:?}",
            self.shape,
            other.shape
        );
        let (m, k, n) = (self.shape[0], self.shape[1], other.shape[1]);
        let mut out = vec![T::zero(); m * n];
        if m * k * n > 0 {
            // SAFETY: contiguous row-major buffers of the asserted sizes.
            unsafe {
                T::gemm(
                    m,
                    k,
                    n,
                    T::one(),
                    self.data.as_ptr(),
                    k as isize,
                    1,
                    other.data.as_ptr(),
                    n as isize,
                    1,
                    T::zero(),
                    out.as_mut_ptr(),
                    n as isize,
                    1,
                );
            }
        }
        Self::from_vec(vec![m, n], out)
    }
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    assert!(axis < shape.len(), "axis {axis} out of range for {shape:?}");
    (
        numel(&shape[..axis]),
        shape[axis],
        numel(&shape[axis + 1..]),
    )
}

/// Strides into a `small` tensor indexed by positions of the broadcast `big` shape.
fn broadcast_strides(small: &[usize], big: &[usize]) -> Vec<usize> {
    assert!(
        small.len() <= big.len(),
        "cannot broadcast {small:?} to {big:?}"
    );
    let lead = big.len() - small.len();
    let mut strides = vec![0; big.len()];
    let mut acc = 1;
    for i in (0..small.len()).rev() {
        let (s, b) = (small[i], big[lead + i]);
        assert!(s == b || s == 1, "cannot broadcast {small:?} to {big:?}");
        strides[lead + i] = if s == 1 { 0 } else { acc };
        acc *= s;
    }
    strides
}

/// Visits `shape` row by row: `f(flat_offset, mapped_offset, row_len, mapped_step)`.
fn walk(shape: &[usize], strides: &[usize], mut f: impl FnMut(usize, usize, usize, usize)) {
    if shape.is_empty() {
        f(0, 0, 1, 0);
        return;
    }
    let rank = shape.len();
    let row = shape[rank - 1];
    let step = strides[rank - 1];
    let rows = numel(&shape[..rank - 1]);
    let mut idx = vec![0usize; rank - 1];
    let mut mapped = 0usize;
    for r in 0..rows {
        f(r * row, mapped, row, step);
        for d in (0..rank - 1).rev() {
            idx[d] += 1;
            mapped += strides[d];
            if idx[d] < shape[d] {
                break;
            }
            mapped -= strides[d] * shape[d];
            idx[d] = 0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(shape.to_vec(), v.to_vec())
    }

    #[test]
    fn broadcast_and_sum_are_adjoint_shapes() {
        let b = t(&[1, 3, 1], &[1., 2., 3.]);
        let big = b.broadcast_to(&[2, 3, 2]);
        assert_eq!(big.data(), &[1., 1., 2., 2., 3., 3., 1., 1., 2., 2., 3., 3.]);
        let back = big.sum_to(&[1, 3, 1]);
        assert_eq!(back.data(), &[4., 8., 12.]);
        let s = t(&[], &[2.]).broadcast_to(&[2, 2]);
        assert_eq!(s.data(), &[2.; 4]);
        assert_eq!(s.sum_to(&[]).item(), 8.);
    }

    #[test]
    fn narrow_embed_concat() {
        let x = t(&[2, 3], &[1., 2., 3., 4., 5., 6.]);
        let n = x.narrow(1, 1, 2);
        assert_eq!(n.data(), &[2., 3., 5., 6.]);
        assert_eq!(n.embed(1, 1, 3).data(), &[0., 2., 3., 0., 5., 6.]);
        let a = x.narrow(1, 0, 1);
        let c = Tensor::concat(&[&a, &n], 1);
        assert_eq!(c, x);
    }

    #[test]
    fn matmul_small() {
        let a = t(&[2, 2], &[1., 2., 3., 4.]);
        let b = t(&[2, 1], &[5., 6.]);
        assert_eq!(a.matmul(&b).data(), &[17., 39.]);
        assert_eq!(a.transpose2().data(), &[1., 3., 2., 4.]);
    }
}
