//! Fully connected networks evaluated over any [`Scalar`].
//!
//! Layer `i` of network `net` owns the tensors `net.w{i}` (shape
//! `[out, in]`, row-major) and `net.b{i}` (shape `[out]`).

use std::collections::BTreeMap;

use rand::Rng;

use super::{AutodiffError, Scalar, Tensor};
use crate::syntax::{Activation, NetworkDecl};

pub fn weight_name(net: &str, layer: usize) -> String {
    format!("{net}.w{layer}")
}

pub fn bias_name(net: &str, layer: usize) -> String {
    format!("{net}.b{layer}")
}

/// `W x + b` with `W` row-major of shape `[b.len(), x.len()]`.
pub fn dense<S: Scalar>(w: &[S], b: &[S], x: &[S]) -> Vec<S> {
    debug_assert_eq!(w.len(), b.len() * x.len());
    b.iter()
        .enumerate()
        .map(|(j, &bj)| {
            let row = &w[j * x.len()..(j + 1) * x.len()];
            row.iter().zip(x).fold(bj, |acc, (&wji, &xi)| acc + wji * xi)
        })
        .collect()
}

pub fn softmax<S: Scalar>(xs: &[S]) -> Vec<S> {
    // Shifting by the max leaves the result and its derivative unchanged.
    let max = xs.iter().map(|x| x.value()).fold(f64::NEG_INFINITY, f64::max);
    let es: Vec<S> = xs.iter().map(|&x| (x - S::constant(max)).exp()).collect();
    let total = es.iter().skip(1).fold(es[0], |acc, &e| acc + e);
    es.into_iter().map(|e| e / total).collect()
}

pub fn activate<S: Scalar>(act: Activation, xs: Vec<S>) -> Vec<S> {
    match act {
        Activation::Linear => xs,
        Activation::Relu => xs.into_iter().map(S::relu).collect(),
        Activation::Tanh => xs.into_iter().map(S::tanh).collect(),
        Activation::Sigmoid => xs.into_iter().map(S::sigmoid).collect(),
        Activation::Softmax => softmax(&xs),
    }
}

/// Forward pass; `params` maps tensor names to their (raw) elements.
pub fn mlp_forward<S: Scalar>(
    decl: &NetworkDecl,
    params: &BTreeMap<String, Vec<S>>,
    input: &[S],
) -> Result<Vec<S>, AutodiffError> {
    if input.len() != decl.input_dim() {
        return Err(AutodiffError::ShapeMismatch(format!(
            "network `{}` expects {} inputs, got {}",
            decl.name,
            decl.input_dim(),
            input.len()
        )));
    }
    let layers = decl.arch.len() - 1;
    let mut x = input.to_vec();
    for i in 0..layers {
        let get = |name: String| params.get(&name).ok_or(AutodiffError::UnknownParam(name));
        let w = get(weight_name(&decl.name, i))?;
        let b = get(bias_name(&decl.name, i))?;
        let y = dense(w, b, &x);
        x = activate(if i + 1 == layers { decl.output } else { decl.hidden }, y);
    }
    Ok(x)
}

/// Glorot-uniform weights and zero biases for every layer.
pub fn init_network(decl: &NetworkDecl, rng: &mut impl Rng) -> Vec<(String, Tensor)> {
    let mut out = Vec::new();
    for (i, pair) in decl.arch.windows(2).enumerate() {
        let (fan_in, fan_out) = (pair[0], pair[1]);
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let w = (0..fan_in * fan_out).map(|_| rng.random_range(-limit..limit)).collect();
        out.push((weight_name(&decl.name, i), Tensor { shape: vec![fan_out, fan_in], values: w }));
        out.push((bias_name(&decl.name, i), Tensor::vector(vec![0.0; fan_out])));
    }
    out
}
