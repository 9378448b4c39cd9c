use std::collections::{HashMap, HashSet};

use crate::float::Float;
use crate::tensor::Tensor;
use crate::var::{with_grad_mode, Op, Var};

impl<T: Float> Op<T> {
    /// Vector-Jacobian products for each parent, built from recordable ops so
    /// that they can themselves be differentiated.
    fn vjp(&self, parents: &[Var<T>], out: &Var<T>, g: &Var<T>, needs: &[bool]) -> Vec<Option<Var<T>>> {
        let want = |i: usize, f: &dyn Fn() -> Var<T>| if needs[i] { Some(f()) } else { None };
        match self {
            Op::Add => vec![want(0, &|| g.clone()), want(1, &|| g.clone())],
            Op::Sub => vec![want(0, &|| g.clone()), want(1, &|| g.neg())],
            Op::Mul => vec![
                want(0, &|| g.mul(&parents[1])),
                want(1, &|| g.mul(&parents[0])),
            ],
            Op::Neg => vec![Some(g.neg())],
            Op::Scale(c) => vec![Some(g.scale(c.as_f64()))],
            Op::AddScalar => vec![Some(g.clone())],
            Op::Square => vec![Some(g.mul(&parents[0]).scale(2.0))],
            Op::Sqrt => vec![Some(g.mul(&out.recip()).scale(0.5))],
            Op::Recip => vec![Some(g.mul(&out.square()).neg())],
            Op::Log => vec![Some(g.mul(&parents[0].recip()))],
            Op::Exp => vec![Some(g.mul(out))],
            Op::Tanh => vec![Some(g.mul(&out.square().neg().add_scalar(1.0)))],
            Op::Sigmoid => vec![Some(g.mul(out).mul(&out.neg().add_scalar(1.0)))],
            Op::MaskMul(mask) => vec![Some(g.mask_mul(mask))],
            Op::MatMul => vec![
                want(0, &|| g.matmul(&parents[1].t())),
                want(1, &|| parents[0].t().matmul(g)),
            ],
            Op::Transpose => vec![Some(g.t())],
            Op::Reshape(from) => vec![Some(g.reshape(from.clone()))],
            Op::BroadcastTo(from) => vec![Some(g.sum_to(from))],
            Op::SumTo(from) => vec![Some(g.broadcast_to(from))],
            Op::Narrow { axis, start, full } => vec![Some(g.embed(*axis, *start, *full))],
            Op::Embed { axis, start, len } => vec![Some(g.narrow(*axis, *start, *len))],
            Op::Concat { axis, sizes } => {
                let mut at = 0;
                sizes
                    .iter()
                    .enumerate()
                    .map(|(i, &n)| {
                        let r = want(i, &|| g.narrow(*axis, at, n));
                        at += n;
                        r
                    })
                    .collect()
            }
            Op::Conv(geom) => vec![
                want(0, &|| g.conv_transpose2d(&parents[1], *geom)),
                want(1, &|| parents[0].conv_weight(g, *geom)),
            ],
            Op::ConvT(geom) => vec![
                want(0, &|| g.conv2d(&parents[1], *geom)),
                want(1, &|| g.conv_weight(&parents[0], *geom)),
            ],
            Op::ConvW(geom) => vec![
                want(0, &|| parents[1].conv_transpose2d(g, *geom)),
                want(1, &|| parents[0].conv2d(g, *geom)),
            ],
        }
    }
}

/// Parents-first ordering of every node reachable from `outputs` through
/// nodes that require gradients.
fn topo_order<T: Float>(outputs: &[Var<T>]) -> Vec<Var<T>> {
    let mut order = Vec::new();
    let mut visited = HashSet::new();
    let mut stack: Vec<(Var<T>, bool)> = outputs
        .iter()
        .filter(|o| o.requires_grad())
        .map(|o| (o.clone(), false))
        .collect();
    while let Some((v, expanded)) = stack.pop() {
        if expanded {
            order.push(v);
            continue;
        }
        if !visited.insert(v.key()) {
            continue;
        }
        stack.push((v.clone(), true));
        for p in &v.0.parents {
            if p.requires_grad() && !visited.contains(&p.key()) {
                stack.push((p.clone(), false));
            }
        }
    }
    order
}

/// Gradients of `sum_i <seeds_i, outputs_i>` with respect to `inputs`.
///
/// With `seeds = None` every output is seeded with ones (the usual choice for
/// scalar losses). When `create_graph` is set the returned gradients are
/// themselves recorded and can be differentiated again. Inputs that do not
/// influence any output receive zero gradients.
pub fn grad<T: Float>(
    outputs: &[Var<T>],
    seeds: Option<&[Tensor<T>]>,
    inputs: &[Var<T>],
    create_graph: bool,
) -> Vec<Var<T>> {
    if let Some(s) = seeds {
        assert_eq!(s.len(), outputs.len(), "one seed per output");
    }
    with_grad_mode(create_graph, || {
        let order = topo_order(outputs);
        let input_keys: HashSet<usize> = inputs.iter().map(Var::key).collect();

        let mut needed: HashSet<usize> = HashSet::new();
        for v in &order {
            if input_keys.contains(&v.key()) || v.0.parents.iter().any(|p| needed.contains(&p.key())) {
                needed.insert(v.key());
            }
        }

        let mut grads: HashMap<usize, Var<T>> = HashMap::new();
        let accumulate = |grads: &mut HashMap<usize, Var<T>>, key: usize, g: Var<T>| {
            let merged = match grads.remove(&key) {
                Some(prev) => prev.add(&g),
                None => g,
            };
            grads.insert(key, merged);
        };
        for (i, o) in outputs.iter().enumerate() {
            if !o.requires_grad() {
                continue;
            }
            let seed = match seeds {
                Some(s) => s[i].clone(),
                None => Tensor::ones(o.shape().to_vec()),
            };
            assert_eq!(seed.shape(), o.shape(), "seed shape mismatch");
            accumulate(&mut grads, o.key(), Var::constant(seed));
        }

        let mut found: HashMap<usize, Var<T>> = HashMap::new();
        for v in order.iter().rev() {
            let key = v.key();
            let Some(g) = grads.remove(&key) else { continue };
            if input_keys.contains(&key) {
                found.insert(key, g.clone());
            }
            let Some(op) = &v.0.op else { continue };
            let parents = &v.0.parents;
            let needs: Vec<bool> = parents
                .iter()
                .map(|p| p.requires_grad() && needed.contains(&p.key()))
                .collect();
            if !needs.iter().any(|&n| n) {
                continue;
            }
            let pgs = op.vjp(parents, v, &g, &needs);
            for ((p, pg), need) in parents.iter().zip(pgs).zip(&needs) {
                if let (Some(pg), true) = (pg, *need) {
                    accumulate(&mut grads, p.key(), pg);
                }
            }
        }

        inputs
            .iter()
            .map(|i| {
                found
                    .get(&i.key())
                    .cloned()
                    .unwrap_or_else(|| Var::constant(Tensor::zeros(i.shape().to_vec())))
            })
            .collect()
    })
}

/// Gradient values of a scalar `loss` with respect to `inputs`, without graph.
pub fn grad_values<T: Float>(loss: &Var<T>, inputs: &[Var<T>]) -> Vec<Tensor<T>> {
    grad(std::slice::from_ref(loss), None, inputs, false)
        .into_iter()
        .map(|g| g.value().clone())
        .collect()
}
