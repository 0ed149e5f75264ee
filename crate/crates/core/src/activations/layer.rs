//! Tensor-level activation with shared adaptive parameters.
//!
//! A parameter store has shape `(arity, groups...)`: row `k` holds the `k`-th
//! adaptive parameter (e.g. `alpha`, `beta`, `gamma` for PiLU) for every
//! group. How elements map onto groups depends on the [`SharingScheme`]:
//!
//! - `LayerWise`: one group for the whole layer, store shape `(arity,)`.
//! - `ChannelWise`: one group per channel (last axis), store `(arity, C)`.
//! - `NeuronWise`: one group per per-example coordinate, store
//!   `(arity, H, W, C)` for feature maps or `(arity, U)` for dense outputs.
//!
//! In every scheme the group of flat element `i` is `i % period`, where the
//! period is `1`, `C` or the per-example element count respectively.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{project_params, unit_backward, unit_forward, ActivationKind};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SharingScheme {
    #[serde(rename = "layer")]
    LayerWise,
    #[serde(rename = "channel")]
    ChannelWise,
    #[serde(rename = "neuron")]
    NeuronWise,
}

impl SharingScheme {
    pub const ALL: [SharingScheme; 3] = [
        SharingScheme::LayerWise,
        SharingScheme::ChannelWise,
        SharingScheme::NeuronWise,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SharingScheme::LayerWise => "layer",
            SharingScheme::ChannelWise => "channel",
            SharingScheme::NeuronWise => "neuron",
        }
    }

    /// Shape of the group axes for a per-example shape such as `[h, w, c]`.
    fn group_dims(self, per_example: &[usize]) -> Vec<usize> {
        match self {
            SharingScheme::LayerWise => vec![],
            SharingScheme::ChannelWise => vec![*per_example.last().unwrap_or(&1)],
            SharingScheme::NeuronWise => per_example.to_vec(),
        }
    }
}

impl fmt::Display for SharingScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SharingScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "layer" | "layerwise" | "layer_wise" => Ok(SharingScheme::LayerWise),
            "channel" | "channelwise" | "channel_wise" => Ok(SharingScheme::ChannelWise),
            "neuron" | "neuronwise" | "neuron_wise" => Ok(SharingScheme::NeuronWise),
            _ => Err(Error::InvalidArgument(format!(
                "unknown sharing scheme `{s}` (expected layer, channel or neuron)"
            ))),
        }
    }
}

/// Activation kind together with how its parameters are shared, initialised
/// and which of them are trained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivationSpec {
    pub kind: ActivationKind,
    pub scheme: SharingScheme,
    /// Initial value per adaptive parameter, length `kind.arity()`.
    pub init: Vec<f64>,
    /// Per adaptive parameter; frozen parameters receive zero gradient.
    pub trainable: Vec<bool>,
}

impl ActivationSpec {
    pub fn new(kind: ActivationKind, scheme: SharingScheme) -> Self {
        Self {
            kind,
            scheme,
            init: kind.default_init().to_vec(),
            trainable: vec![true; kind.arity()],
        }
    }

    pub fn with_init(mut self, init: &[f64]) -> Result<Self> {
        if init.len() != self.kind.arity() {
            return Err(Error::InvalidArgument(format!(
                "{} takes {} initial value(s), got {}",
                self.kind,
                self.kind.arity(),
                init.len()
            )));
        }
        self.init = init.to_vec();
        project_params(self.kind, &mut self.init);
        Ok(self)
    }

    pub fn freeze(mut self, param: &str) -> Result<Self> {
        let idx = self
            .kind
            .param_names()
            .iter()
            .position(|&n| n == param)
            .ok_or_else(|| Error::InvalidArgument(format!("{} has no parameter `{param}`", self.kind)))?;
        self.trainable[idx] = false;
        Ok(self)
    }

    pub fn arity(&self) -> usize {
        self.kind.arity()
    }

    /// Fresh parameter store for a layer whose per-example output shape is
    /// `per_example`; `None` when the kind has no adaptive parameters.
    pub fn init_store(&self, per_example: &[usize]) -> Option<Tensor> {
        let shape = param_store_shape(self.kind, self.scheme, per_example)?;
        let groups: usize = shape[1..].iter().product();
        let data = self
            .init
            .iter()
            .flat_map(|&v| std::iter::repeat_n(v, groups))
            .collect();
        Some(Tensor::from_vec(&shape, data).expect("store shape"))
    }
}

/// `(arity, groups...)`, or `None` for kinds without adaptive parameters.
pub fn param_store_shape(
    kind: ActivationKind,
    scheme: SharingScheme,
    per_example: &[usize],
) -> Option<Vec<usize>> {
    let arity = kind.arity();
    if arity == 0 {
        return None;
    }
    let mut shape = vec![arity];
    shape.extend(scheme.group_dims(per_example));
    Some(shape)
}

/// Adaptive parameter count of one activation layer.
pub fn activation_param_count(kind: ActivationKind, scheme: SharingScheme, per_example: &[usize]) -> usize {
    param_store_shape(kind, scheme, per_example)
        .map(|s| s.iter().product())
        .unwrap_or(0)
}

/// What the backward pass needs from a forward call.
#[derive(Debug, Clone)]
pub struct ActivationCache {
    input: Tensor,
    params: Option<Tensor>,
    period: usize,
}

impl ActivationCache {
    pub fn input(&self) -> &Tensor {
        &self.input
    }
}

fn per_example_shape(x: &Tensor) -> &[usize] {
    if x.rank() > 1 {
        &x.shape()[1..]
    } else {
        x.shape()
    }
}

/// Elements per group cycle, after checking the store against `x`.
fn check_store(x: &Tensor, spec: &ActivationSpec, store: Option<&Tensor>) -> Result<usize> {
    let per_example = per_example_shape(x);
    let expected = param_store_shape(spec.kind, spec.scheme, per_example);
    match (expected, store) {
        (None, None) => Ok(1),
        (None, Some(s)) => Err(Error::Shape(format!(
            "{} takes no parameters but got a store of shape {:?}",
            spec.kind,
            s.shape()
        ))),
        (Some(shape), None) => Err(Error::Shape(format!(
            "{} needs a parameter store of shape {shape:?}",
            spec.kind
        ))),
        (Some(shape), Some(s)) if s.shape() != shape.as_slice() => Err(Error::Shape(format!(
            "{} {} store should have shape {shape:?}, got {:?}",
            spec.kind,
            spec.scheme,
            s.shape()
        ))),
        (Some(shape), Some(_)) => Ok(shape[1..].iter().product()),
    }
}

/// Parameter tuples per group, laid out `[group][param]`.
fn gather(store: Option<&Tensor>, arity: usize, period: usize) -> Vec<f64> {
    let mut out = vec![0.0; arity * period];
    if let Some(s) = store {
        let d = s.data();
        for g in 0..period {
            for k in 0..arity {
                out[g * arity + k] = d[k * period + g];
            }
        }
    }
    out
}

pub fn apply_activation(
    x: &Tensor,
    spec: &ActivationSpec,
    store: Option<&Tensor>,
) -> Result<(Tensor, ActivationCache)> {
    let y = activation_forward(x, spec, store)?;
    let period = check_store(x, spec, store)?;
    Ok((
        y,
        ActivationCache {
            input: x.clone(),
            params: store.cloned(),
            period,
        },
    ))
}

/// Forward pass without building a cache.
pub fn activation_forward(x: &Tensor, spec: &ActivationSpec, store: Option<&Tensor>) -> Result<Tensor> {
    let period = check_store(x, spec, store)?;
    let arity = spec.arity();
    let kind = spec.kind;
    let groups = gather(store, arity, period);
    let mut y = Tensor::zeros_like(x);
    for (xs, ys) in x
        .data()
        .chunks_exact(period)
        .zip(y.data_mut().chunks_exact_mut(period))
    {
        for (g, (&xv, yv)) in xs.iter().zip(ys.iter_mut()).enumerate() {
            *yv = unit_forward(kind, xv, &groups[g * arity..(g + 1) * arity]);
        }
    }
    Ok(y)
}

/// Returns `dx` and, for kinds with adaptive parameters, `dparams` shaped
/// like the store. Each `dparams` entry is the sum of the per-element
/// gradients over every element sharing that parameter.
pub fn apply_activation_backward(
    dy: &Tensor,
    cache: &ActivationCache,
    spec: &ActivationSpec,
) -> Result<(Tensor, Option<Tensor>)> {
    if dy.shape() != cache.input.shape() {
        return Err(Error::StaleCache(format!(
            "upstream gradient has shape {:?}, cached input has {:?}",
            dy.shape(),
            cache.input.shape()
        )));
    }
    let period = check_store(&cache.input, spec, cache.params.as_ref())
        .map_err(|e| Error::StaleCache(e.to_string()))?;
    if period != cache.period {
        return Err(Error::StaleCache("sharing scheme changed since forward".into()));
    }
    let arity = spec.arity();
    let kind = spec.kind;
    let groups = gather(cache.params.as_ref(), arity, period);
    let mut acc = vec![0.0; arity * period];
    let mut scratch = [0.0; 3];
    let mut dx = Tensor::zeros_like(dy);
    for ((xs, dys), dxs) in cache
        .input
        .data()
        .chunks_exact(period)
        .zip(dy.data().chunks_exact(period))
        .zip(dx.data_mut().chunks_exact_mut(period))
    {
        for g in 0..period {
            let p = &groups[g * arity..(g + 1) * arity];
            dxs[g] = unit_backward(kind, xs[g], p, dys[g], &mut scratch[..arity]);
            for k in 0..arity {
                acc[g * arity + k] += scratch[k];
            }
        }
    }
    let dparams = cache.params.as_ref().map(|store| {
        let mut out = Tensor::zeros_like(store);
        let d = out.data_mut();
        for g in 0..period {
            for k in 0..arity {
                if spec.trainable[k] {
                    d[k * period + g] = acc[g * arity + k];
                }
            }
        }
        out
    });
    Ok((dx, dparams))
}

/// Applies an activation over a flat slice with one shared parameter tuple.
/// This is the timing path used by the benchmark harness.
#[inline]
pub fn activation_forward_slice(kind: ActivationKind, params: &[f64], x: &[f64], y: &mut [f64]) {
    // One monomorphic loop per kind so the branch is hoisted out of the hot loop.
    match kind {
        ActivationKind::Linear => y.copy_from_slice(x),
        ActivationKind::Relu => {
            for (o, &v) in y.iter_mut().zip(x) {
                *o = if v > 0.0 { v } else { 0.0 };
            }
        }
        ActivationKind::LeakyRelu => {
            for (o, &v) in y.iter_mut().zip(x) {
                *o = if v > 0.0 { v } else { super::LEAKY_SLOPE * v };
            }
        }
        ActivationKind::Prelu => {
            let d = params[0];
            for (o, &v) in y.iter_mut().zip(x) {
                *o = if v > 0.0 { v } else { d * v };
            }
        }
        ActivationKind::DoubleRelu => {
            let a = params[0];
            for (o, &v) in y.iter_mut().zip(x) {
                // both arms computed so the loop lowers to selects
                let (hi, lo) = (v - a, v + a);
                *o = if v > a {
                    hi
                } else if v < -a {
                    lo
                } else {
                    0.0
                };
            }
        }
        ActivationKind::Pilu => pilu_slice(params[0], params[1], params[2], x, y),
    }
}

/// The four forms a PiLU segment takes, mirroring the scalar evaluation.
trait Segment: Copy {
    fn eval(self, x: f64) -> f64;
}

#[derive(Clone, Copy)]
struct Identity;
#[derive(Clone, Copy)]
struct Flat(f64);
#[derive(Clone, Copy)]
struct Scale(f64);
#[derive(Clone, Copy)]
struct Through(f64, f64);

impl Segment for Identity {
    #[inline(always)]
    fn eval(self, x: f64) -> f64 {
        x
    }
}

impl Segment for Flat {
    #[inline(always)]
    fn eval(self, _: f64) -> f64 {
        self.0
    }
}

impl Segment for Scale {
    #[inline(always)]
    fn eval(self, x: f64) -> f64 {
        self.0 * x
    }
}

impl Segment for Through {
    #[inline(always)]
    fn eval(self, x: f64) -> f64 {
        self.0 * (x - self.1) + self.1
    }
}

#[inline(always)]
fn pilu_loop<A: Segment, B: Segment>(above: A, below: B, gamma: f64, x: &[f64], y: &mut [f64]) {
    for (o, &v) in y.iter_mut().zip(x) {
        let (a, b) = (above.eval(v), below.eval(v));
        *o = if v > gamma { a } else { b };
    }
}

/// Picks each segment's form once, then runs a loop specialised to the pair.
fn pilu_slice(alpha: f64, beta: f64, gamma: f64, x: &[f64], y: &mut [f64]) {
    macro_rules! below {
        ($above:expr) => {
            if beta == 1.0 {
                pilu_loop($above, Identity, gamma, x, y)
            } else if beta == 0.0 {
                pilu_loop($above, Flat(gamma), gamma, x, y)
            } else if gamma == 0.0 {
                pilu_loop($above, Scale(beta), gamma, x, y)
            } else {
                pilu_loop($above, Through(beta, gamma), gamma, x, y)
            }
        };
    }
    if alpha == 1.0 {
        below!(Identity)
    } else if alpha == 0.0 {
        below!(Flat(gamma))
    } else if gamma == 0.0 {
        below!(Scale(alpha))
    } else {
        below!(Through(alpha, gamma))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activations::{pilu_backward, pilu_forward, PiluParams};
    use rand::{Rng, SeedableRng};
    use rand_xoshiro::Xoshiro256PlusPlus;

    fn t(shape: &[usize], data: Vec<f64>) -> Tensor {
        Tensor::from_vec(shape, data).unwrap()
    }

    #[test]
    fn store_shapes_per_scheme() {
        let fmap = [30, 30, 16];
        let k = ActivationKind::Pilu;
        assert_eq!(
            param_store_shape(k, SharingScheme::LayerWise, &fmap),
            Some(vec![3])
        );
        assert_eq!(
            param_store_shape(k, SharingScheme::ChannelWise, &fmap),
            Some(vec![3, 16])
        );
        assert_eq!(
            param_store_shape(k, SharingScheme::NeuronWise, &fmap),
            Some(vec![3, 30, 30, 16])
        );
        assert_eq!(
            param_store_shape(k, SharingScheme::NeuronWise, &[64]),
            Some(vec![3, 64])
        );
        assert_eq!(
            param_store_shape(ActivationKind::Relu, SharingScheme::NeuronWise, &fmap),
            None
        );
    }

    #[test]
    fn param_counts() {
        let layers: [&[usize]; 5] = [
            &[30, 30, 16],
            &[13, 13, 16],
            &[11, 11, 32],
            &[9, 9, 32],
            &[7, 7, 64],
        ];
        let total = |k, s| -> usize { layers.iter().map(|l| activation_param_count(k, s, l)).sum() };
        assert_eq!(total(ActivationKind::Pilu, SharingScheme::ChannelWise), 480);
        assert_eq!(total(ActivationKind::Prelu, SharingScheme::ChannelWise), 160);
        assert_eq!(total(ActivationKind::DoubleRelu, SharingScheme::ChannelWise), 160);
        for s in SharingScheme::ALL {
            assert_eq!(total(ActivationKind::Relu, s), 0);
        }
        assert_eq!(total(ActivationKind::Pilu, SharingScheme::LayerWise), 15);
        assert_eq!(
            activation_param_count(ActivationKind::Prelu, SharingScheme::NeuronWise, &[7, 7, 64]),
            3136
        );
    }

    #[test]
    fn channel_wise_routes_by_channel() {
        let spec = ActivationSpec::new(ActivationKind::Pilu, SharingScheme::ChannelWise);
        // channel 0: identity, channel 1: relu
        let store = t(&[3, 2], vec![1.0, 1.0, 1.0, 0.0, 0.0, 0.0]);
        let x = t(&[1, 2, 2, 2], vec![-1.0, -1.0, 2.0, 2.0, -3.0, -3.0, 0.5, 0.5]);
        let (y, _) = apply_activation(&x, &spec, Some(&store)).unwrap();
        assert_eq!(y.data(), &[-1.0, 0.0, 2.0, 2.0, -3.0, 0.0, 0.5, 0.5]);
    }

    #[test]
    fn layer_wise_shares_one_tuple() {
        let spec = ActivationSpec::new(ActivationKind::Prelu, SharingScheme::LayerWise);
        let store = t(&[1], vec![0.5]);
        let x = t(&[2, 3], vec![-2.0, 1.0, -4.0, 3.0, -6.0, 0.0]);
        let (y, _) = apply_activation(&x, &spec, Some(&store)).unwrap();
        assert_eq!(y.data(), &[-1.0, 1.0, -2.0, 3.0, -3.0, 0.0]);
    }

    #[test]
    fn zero_arity_has_no_store() {
        let spec = ActivationSpec::new(ActivationKind::Relu, SharingScheme::ChannelWise);
        assert!(spec.init_store(&[2, 2, 3]).is_none());
        let x = t(&[1, 2, 2, 3], (0..12).map(|i| i as f64 - 6.0).collect());
        let (y, cache) = apply_activation(&x, &spec, None).unwrap();
        assert_eq!(y, x.map(|v| v.max(0.0)));
        let (dx, dp) = apply_activation_backward(&Tensor::full(&[1, 2, 2, 3], 1.0), &cache, &spec).unwrap();
        assert!(dp.is_none());
        assert_eq!(dx.data()[0], 0.0);
        assert_eq!(dx.data()[11], 1.0);
    }

    #[test]
    fn mismatched_store_is_rejected() {
        let spec = ActivationSpec::new(ActivationKind::Pilu, SharingScheme::ChannelWise);
        let x = Tensor::zeros(&[1, 2, 2, 2]);
        assert!(apply_activation(&x, &spec, Some(&Tensor::zeros(&[3, 3]))).is_err());
        assert!(apply_activation(&x, &spec, None).is_err());
        let relu = ActivationSpec::new(ActivationKind::Relu, SharingScheme::ChannelWise);
        assert!(apply_activation(&x, &relu, Some(&Tensor::zeros(&[3, 2]))).is_err());
    }

    #[test]
    fn stale_cache_is_rejected() {
        let spec = ActivationSpec::new(ActivationKind::Pilu, SharingScheme::ChannelWise);
        let x = Tensor::zeros(&[1, 2, 2, 2]);
        let store = spec.init_store(&[2, 2, 2]).unwrap();
        let (_, cache) = apply_activation(&x, &spec, Some(&store)).unwrap();
        assert!(matches!(
            apply_activation_backward(&Tensor::zeros(&[1, 2, 2, 3]), &cache, &spec),
            Err(Error::StaleCache(_))
        ));
        let other = ActivationSpec::new(ActivationKind::Pilu, SharingScheme::LayerWise);
        assert!(apply_activation_backward(&Tensor::zeros(&[1, 2, 2, 2]), &cache, &other).is_err());
    }

    #[test]
    fn single_element_reduces_to_scalar_backward() {
        let spec = ActivationSpec::new(ActivationKind::Pilu, SharingScheme::LayerWise);
        let store = t(&[3], vec![1.5, 3.0, 1.0]);
        let x = t(&[1, 1], vec![2.0]);
        let (y, cache) = apply_activation(&x, &spec, Some(&store)).unwrap();
        assert_eq!(y.data(), &[2.5]);
        let (dx, dp) = apply_activation_backward(&t(&[1, 1], vec![1.0]), &cache, &spec).unwrap();
        let g = pilu_backward(2.0, &PiluParams::new(1.5, 3.0, 1.0), 1.0);
        assert_eq!(dx.data(), &[g.dx]);
        assert_eq!(dp.unwrap().data(), &[g.dalpha, g.dbeta, g.dgamma]);
    }

    #[test]
    fn shared_parameter_sums_contributions() {
        let spec = ActivationSpec::new(ActivationKind::Pilu, SharingScheme::LayerWise);
        let p = PiluParams::new(0.8, 0.2, 0.1);
        let store = t(&[3], vec![p.alpha, p.beta, p.gamma]);
        let x = t(&[2, 1], vec![1.3, -0.7]);
        let dy = t(&[2, 1], vec![0.5, -2.0]);
        let (_, cache) = apply_activation(&x, &spec, Some(&store)).unwrap();
        let (_, dp) = apply_activation_backward(&dy, &cache, &spec).unwrap();
        let a = pilu_backward(1.3, &p, 0.5);
        let b = pilu_backward(-0.7, &p, -2.0);
        assert_eq!(
            dp.unwrap().data(),
            &[a.dalpha + b.dalpha, a.dbeta + b.dbeta, a.dgamma + b.dgamma]
        );
    }

    #[test]
    fn frozen_parameters_get_zero_gradient() {
        let spec = ActivationSpec::new(ActivationKind::Pilu, SharingScheme::LayerWise)
            .freeze("gamma")
            .unwrap();
        let store = t(&[3], vec![0.9, 0.1, 0.2]);
        let x = t(&[1, 2], vec![1.0, -1.0]);
        let (_, cache) = apply_activation(&x, &spec, Some(&store)).unwrap();
        let (_, dp) = apply_activation_backward(&Tensor::full(&[1, 2], 1.0), &cache, &spec).unwrap();
        let dp = dp.unwrap();
        assert_eq!(dp.data()[2], 0.0);
        assert!(dp.data()[0] != 0.0 && dp.data()[1] != 0.0);
    }

    /// Central differences on the scalar objective `sum(dy * f(x))`.
    #[test]
    fn channel_wise_pilu_matches_finite_differences() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(11);
        let spec = ActivationSpec::new(ActivationKind::Pilu, SharingScheme::ChannelWise);
        let store = t(&[3, 2], (0..6).map(|_| rng.random_range(-1.0..1.5)).collect());
        let knots = [store.data()[4], store.data()[5]];
        let x = t(
            &[1, 3, 3, 2],
            (0..18)
                .map(|i| loop {
                    let v: f64 = rng.random_range(-3.0..3.0);
                    if (v - knots[i % 2]).abs() > 1e-3 {
                        break v;
                    }
                })
                .collect(),
        );
        let dy = t(
            &[1, 3, 3, 2],
            (0..18).map(|_| rng.random_range(-1.0..1.0)).collect(),
        );
        let objective = |x: &Tensor, s: &Tensor| -> f64 {
            let y = activation_forward(x, &spec, Some(s)).unwrap();
            y.data().iter().zip(dy.data()).map(|(a, b)| a * b).sum()
        };
        let (_, cache) = apply_activation(&x, &spec, Some(&store)).unwrap();
        let (dx, dp) = apply_activation_backward(&dy, &cache, &spec).unwrap();
        let dp = dp.unwrap();
        let h = 1e-6;
        let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1e-8);
        for i in 0..x.len() {
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp.data_mut()[i] += h;
            xm.data_mut()[i] -= h;
            let fd = (objective(&xp, &store) - objective(&xm, &store)) / (2.0 * h);
            assert!(rel(dx.data()[i], fd) < 1e-6, "dx[{i}]");
        }
        for i in 0..store.len() {
            let (mut sp, mut sm) = (store.clone(), store.clone());
            sp.data_mut()[i] += h;
            sm.data_mut()[i] -= h;
            let fd = (objective(&x, &sp) - objective(&x, &sm)) / (2.0 * h);
            assert!(rel(dp.data()[i], fd) < 1e-6, "dparam[{i}]");
        }
        // sanity: forward used the right channel
        let p0 = PiluParams::new(store.data()[0], store.data()[2], store.data()[4]);
        assert_eq!(
            activation_forward(&x, &spec, Some(&store)).unwrap().data()[0],
            pilu_forward(x.data()[0], &p0)
        );
    }

    #[test]
    fn slice_path_matches_tensor_path() {
        let x: Vec<f64> = (0..50).map(|i| (i as f64 - 25.0) / 7.0).collect();
        for kind in ActivationKind::ALL {
            let spec = ActivationSpec::new(kind, SharingScheme::LayerWise);
            let store = spec.init_store(&[50]);
            let xt = t(&[1, 50], x.clone());
            let yt = activation_forward(&xt, &spec, store.as_ref()).unwrap();
            let mut ys = vec![0.0; 50];
            activation_forward_slice(kind, &spec.init, &x, &mut ys);
            assert_eq!(yt.data(), ys.as_slice(), "{kind}");
        }
    }

    #[test]
    fn slice_path_is_bit_exact_for_special_parameters() {
        let mut x: Vec<f64> = (0..200).map(|i| (i as f64 - 100.0) / 37.0).collect();
        x.extend([0.0, -0.0, 0.5, -0.5, 1.0, -1.0]);
        let special = [1.0, 0.0, -0.0, 0.5, -2.0];
        let mut y = vec![0.0; x.len()];
        for &a in &special {
            for &b in &special {
                for &g in &special {
                    let p = PiluParams::new(a, b, g);
                    activation_forward_slice(ActivationKind::Pilu, &[a, b, g], &x, &mut y);
                    for (&v, &out) in x.iter().zip(&y) {
                        assert_eq!(out.to_bits(), pilu_forward(v, &p).to_bits(), "{p:?} at {v}");
                    }
                }
            }
        }
        for a in [0.0, 0.5, 1.0] {
            let p = crate::activations::DoubleReluParams { alpha: a };
            activation_forward_slice(ActivationKind::DoubleRelu, &[a], &x, &mut y);
            for (&v, &out) in x.iter().zip(&y) {
                assert_eq!(
                    out.to_bits(),
                    crate::activations::double_relu_forward(v, &p).to_bits()
                );
            }
        }
    }
}
