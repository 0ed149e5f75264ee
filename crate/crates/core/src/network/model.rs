use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::layers::{
    apply_mask, conv2d_backward, conv2d_forward, dense_backward, dense_forward, dropout_mask,
    global_avg_pool_backward, global_avg_pool_forward, maxpool2x2_backward, maxpool2x2_forward, softmax,
    softmax_backward,
};
use crate::activations::{
    activation_forward, apply_activation, apply_activation_backward, branch_id, project_params,
    ActivationCache, ActivationKind, ActivationSpec, SharingScheme,
};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;
use crate::training::glorot_normal;

/// Architecture of one layer, without weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerDesc {
    Conv2d { kernel: usize, filters: usize },
    MaxPool2x2,
    Activation { spec: ActivationSpec },
    GlobalAvgPool,
    Dropout { p: f64 },
    Dense { units: usize },
    Softmax,
}

#[derive(Debug, Clone)]
pub enum Layer {
    Conv2d {
        kernel: Tensor,
        bias: Tensor,
    },
    MaxPool2x2,
    Activation {
        spec: ActivationSpec,
        params: Option<Tensor>,
    },
    GlobalAvgPool,
    Dropout {
        p: f64,
    },
    Dense {
        kernel: Tensor,
        bias: Tensor,
    },
    Softmax,
}

impl Layer {
    fn desc(&self) -> LayerDesc {
        match self {
            Layer::Conv2d { kernel, .. } => LayerDesc::Conv2d {
                kernel: kernel.shape()[0],
                filters: kernel.shape()[3],
            },
            Layer::MaxPool2x2 => LayerDesc::MaxPool2x2,
            Layer::Activation { spec, .. } => LayerDesc::Activation { spec: spec.clone() },
            Layer::GlobalAvgPool => LayerDesc::GlobalAvgPool,
            Layer::Dropout { p } => LayerDesc::Dropout { p: *p },
            Layer::Dense { kernel, .. } => LayerDesc::Dense {
                units: kernel.shape()[1],
            },
            Layer::Softmax => LayerDesc::Softmax,
        }
    }

    fn params(&self) -> Vec<&Tensor> {
        match self {
            Layer::Conv2d { kernel, bias } | Layer::Dense { kernel, bias } => vec![kernel, bias],
            Layer::Activation { params: Some(p), .. } => vec![p],
            _ => vec![],
        }
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            Layer::Conv2d { kernel, bias } | Layer::Dense { kernel, bias } => vec![kernel, bias],
            Layer::Activation { params: Some(p), .. } => vec![p],
            _ => vec![],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamRole {
    Kernel,
    Bias,
    /// Adaptive activation parameters, shaped `(arity, groups...)`.
    Adaptive(ActivationKind),
}

/// One entry of the parameter registry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamInfo {
    pub name: String,
    pub layer: usize,
    pub role: ParamRole,
    pub shape: Vec<usize>,
}

impl ParamInfo {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// How a forward pass treats dropout.
pub enum Mode<'a> {
    /// Dropout is the identity.
    Eval,
    /// Fresh masks are drawn from the given stream.
    Train(&'a mut Rng),
    /// Reuses masks from an earlier training-mode trace, in layer order.
    Replay(&'a [Tensor]),
}

#[derive(Debug, Clone)]
enum Cache {
    Input(Tensor),
    Pool {
        argmax: Vec<usize>,
        in_shape: Vec<usize>,
    },
    Activation(ActivationCache),
    Shape(Vec<usize>),
    Mask(Option<Tensor>),
    Output(Tensor),
}

/// Everything a backward pass needs from one forward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    caches: Vec<Cache>,
    output: Tensor,
}

impl Trace {
    /// Final layer output (class probabilities for a softmax-terminated model).
    pub fn output(&self) -> &Tensor {
        &self.output
    }

    /// Dropout masks drawn during the pass, in layer order.
    pub fn dropout_masks(&self) -> Vec<Tensor> {
        self.caches
            .iter()
            .filter_map(|c| match c {
                Cache::Mask(Some(m)) => Some(m.clone()),
                _ => None,
            })
            .collect()
    }

    /// A code for every piecewise-linear decision taken in the pass: the
    /// branch of each activation element and the winner of each max-pool
    /// window. Two passes with equal signatures lie on the same linear piece.
    pub fn kink_signature(&self, model: &Model) -> Vec<u32> {
        let mut sig = Vec::new();
        for (layer, cache) in model.layers.iter().zip(&self.caches) {
            match (layer, cache) {
                (Layer::Activation { spec, params }, Cache::Activation(c)) => {
                    let x = c.input();
                    let arity = spec.arity();
                    let period = params.as_ref().map(|p| p.len() / arity).unwrap_or(1);
                    let mut tuple = [0.0; 3];
                    for (i, &v) in x.data().iter().enumerate() {
                        if let Some(p) = params {
                            let g = i % period;
                            for (k, slot) in tuple.iter_mut().enumerate().take(arity) {
                                *slot = p.data()[k * period + g];
                            }
                        }
                        sig.push(branch_id(spec.kind, v, &tuple[..arity]) as u32);
                    }
                }
                (_, Cache::Pool { argmax, .. }) => {
                    sig.extend(argmax.iter().map(|&a| a as u32));
                }
                _ => {}
            }
        }
        sig
    }

    /// Activation layer inputs (pre-activations), by layer index.
    pub fn pre_activations(&self) -> impl Iterator<Item = (usize, &Tensor)> {
        self.caches.iter().enumerate().filter_map(|(i, c)| match c {
            Cache::Activation(a) => Some((i, a.input())),
            _ => None,
        })
    }
}

/// Ordered layer stack with a stable parameter registry.
#[derive(Debug, Clone)]
pub struct Model {
    input_shape: Vec<usize>,
    layers: Vec<Layer>,
    shapes: Vec<Vec<usize>>,
    names: Vec<String>,
}

impl Model {
    /// Builds a model with Glorot-normal kernels, zero biases and activation
    /// parameters set from each spec's initial values.
    pub fn from_descs(input_shape: &[usize], descs: &[LayerDesc], rng: &mut Rng) -> Result<Self> {
        let mut model = Self::skeleton(input_shape, descs)?;
        for layer in &mut model.layers {
            match layer {
                Layer::Conv2d { kernel, .. } => {
                    let s = kernel.shape().to_vec();
                    let field = s[0] * s[1];
                    *kernel = glorot_normal(&s, field * s[2], field * s[3], rng);
                }
                Layer::Dense { kernel, .. } => {
                    let s = kernel.shape().to_vec();
                    *kernel = glorot_normal(&s, s[0], s[1], rng);
                }
                _ => {}
            }
        }
        Ok(model)
    }

    /// Builds the layer stack with zero weights, checking that shapes chain.
    pub fn skeleton(input_shape: &[usize], descs: &[LayerDesc]) -> Result<Self> {
        if input_shape.is_empty() || input_shape.contains(&0) {
            return Err(Error::Shape(format!("invalid input shape {input_shape:?}")));
        }
        let mut shape = input_shape.to_vec();
        let mut layers = Vec::with_capacity(descs.len());
        let mut shapes = Vec::with_capacity(descs.len());
        let mut names = Vec::with_capacity(descs.len());
        let (mut n_conv, mut n_act, mut n_pool, mut n_dense) = (0, 0, 0, 0);
        for desc in descs {
            let (layer, out, name) = match desc {
                LayerDesc::Conv2d { kernel, filters } => {
                    let [h, w, c] = rank3(&shape, "conv2d")?;
                    if h < *kernel || w < *kernel || *filters == 0 || *kernel == 0 {
                        return Err(Error::Shape(format!(
                            "conv {kernel}x{kernel}/{filters} cannot follow {shape:?}"
                        )));
                    }
                    n_conv += 1;
                    (
                        Layer::Conv2d {
                            kernel: Tensor::zeros(&[*kernel, *kernel, c, *filters]),
                            bias: Tensor::zeros(&[*filters]),
                        },
                        vec![h - kernel + 1, w - kernel + 1, *filters],
                        format!("conv{n_conv}"),
                    )
                }
                LayerDesc::MaxPool2x2 => {
                    let [h, w, c] = rank3(&shape, "max pool")?;
                    if h < 2 || w < 2 {
                        return Err(Error::Shape(format!("cannot pool {shape:?}")));
                    }
                    n_pool += 1;
                    (Layer::MaxPool2x2, vec![h / 2, w / 2, c], format!("pool{n_pool}"))
                }
                LayerDesc::Activation { spec } => {
                    if spec.init.len() != spec.arity() || spec.trainable.len() != spec.arity() {
                        return Err(Error::InvalidArgument(format!(
                            "activation spec for {} has wrong parameter count",
                            spec.kind
                        )));
                    }
                    n_act += 1;
                    (
                        Layer::Activation {
                            spec: spec.clone(),
                            params: spec.init_store(&shape),
                        },
                        shape.clone(),
                        format!("act{n_act}"),
                    )
                }
                LayerDesc::GlobalAvgPool => {
                    let [_, _, c] = rank3(&shape, "average pool")?;
                    (Layer::GlobalAvgPool, vec![c], "avgpool".to_string())
                }
                LayerDesc::Dropout { p } => {
                    if !(0.0..1.0).contains(p) {
                        return Err(Error::InvalidArgument(format!("dropout p={p}")));
                    }
                    (Layer::Dropout { p: *p }, shape.clone(), "dropout".to_string())
                }
                LayerDesc::Dense { units } => {
                    if shape.len() != 1 || *units == 0 {
                        return Err(Error::Shape(format!(
                            "dense layer needs flat input, got {shape:?}"
                        )));
                    }
                    n_dense += 1;
                    (
                        Layer::Dense {
                            kernel: Tensor::zeros(&[shape[0], *units]),
                            bias: Tensor::zeros(&[*units]),
                        },
                        vec![*units],
                        if n_dense == 1 {
                            "dense".to_string()
                        } else {
                            format!("dense{n_dense}")
                        },
                    )
                }
                LayerDesc::Softmax => {
                    if shape.len() != 1 {
                        return Err(Error::Shape(format!("softmax needs flat input, got {shape:?}")));
                    }
                    (Layer::Softmax, shape.clone(), "softmax".to_string())
                }
            };
            layers.push(layer);
            shapes.push(out.clone());
            names.push(name);
            shape = out;
        }
        Ok(Self {
            input_shape: input_shape.to_vec(),
            layers,
            shapes,
            names,
        })
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    /// Per-example output shape of the whole model.
    pub fn output_shape(&self) -> &[usize] {
        self.shapes.last().map(Vec::as_slice).unwrap_or(&self.input_shape)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layer_names(&self) -> &[String] {
        &self.names
    }

    /// Per-example output shape of each layer.
    pub fn layer_shapes(&self) -> &[Vec<usize>] {
        &self.shapes
    }

    pub fn descs(&self) -> Vec<LayerDesc> {
        self.layers.iter().map(Layer::desc).collect()
    }

    pub fn registry(&self) -> Vec<ParamInfo> {
        let mut out = Vec::new();
        for (i, (layer, name)) in self.layers.iter().zip(&self.names).enumerate() {
            match layer {
                Layer::Conv2d { kernel, bias } | Layer::Dense { kernel, bias } => {
                    out.push(ParamInfo {
                        name: format!("{name}.kernel"),
                        layer: i,
                        role: ParamRole::Kernel,
                        shape: kernel.shape().to_vec(),
                    });
                    out.push(ParamInfo {
                        name: format!("{name}.bias"),
                        layer: i,
                        role: ParamRole::Bias,
                        shape: bias.shape().to_vec(),
                    });
                }
                Layer::Activation {
                    spec,
                    params: Some(p),
                } => out.push(ParamInfo {
                    name: format!("{name}.params"),
                    layer: i,
                    role: ParamRole::Adaptive(spec.kind),
                    shape: p.shape().to_vec(),
                }),
                _ => {}
            }
        }
        out
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(Layer::params).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(Layer::params_mut).collect()
    }

    /// Total number of trainable scalars.
    pub fn count_parameters(&self) -> usize {
        self.params().iter().map(|t| t.len()).sum()
    }

    /// Registry index of the output layer's kernel (the last dense layer).
    pub fn output_kernel_index(&self) -> Option<usize> {
        self.registry()
            .iter()
            .rposition(|p| p.role == ParamRole::Kernel && matches!(self.layers[p.layer], Layer::Dense { .. }))
    }

    /// Clamps activation parameters into their admissible range.
    pub fn project_constraints(&mut self) {
        for layer in &mut self.layers {
            if let Layer::Activation {
                spec,
                params: Some(p),
            } = layer
            {
                project_params(spec.kind, p.data_mut());
            }
        }
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.rank() != self.input_shape.len() + 1 || x.shape()[1..] != self.input_shape[..] {
            return Err(Error::Shape(format!(
                "model expects (n, {:?}), got {:?}",
                self.input_shape,
                x.shape()
            )));
        }
        Ok(())
    }

    /// Eval-mode forward pass without caching intermediates.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let mut h = x.clone();
        for layer in &self.layers {
            h = match layer {
                Layer::Conv2d { kernel, bias } => conv2d_forward(&h, kernel, bias)?,
                Layer::MaxPool2x2 => maxpool2x2_forward(&h)?.0,
                Layer::Activation { spec, params } => activation_forward(&h, spec, params.as_ref())?,
                Layer::GlobalAvgPool => global_avg_pool_forward(&h)?,
                Layer::Dropout { .. } => h,
                Layer::Dense { kernel, bias } => dense_forward(&h, kernel, bias)?,
                Layer::Softmax => softmax(&h)?,
            };
        }
        Ok(h)
    }

    /// Forward pass that records what [`Model::backward`] needs.
    pub fn forward(&self, x: &Tensor, mut mode: Mode<'_>) -> Result<Trace> {
        self.check_input(x)?;
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut replay_idx = 0;
        let mut h = x.clone();
        for layer in &self.layers {
            let (next, cache) = match layer {
                Layer::Conv2d { kernel, bias } => {
                    let y = conv2d_forward(&h, kernel, bias)?;
                    (y, Cache::Input(h))
                }
                Layer::MaxPool2x2 => {
                    let (y, argmax) = maxpool2x2_forward(&h)?;
                    let in_shape = h.shape().to_vec();
                    (y, Cache::Pool { argmax, in_shape })
                }
                Layer::Activation { spec, params } => {
                    let (y, c) = apply_activation(&h, spec, params.as_ref())?;
                    (y, Cache::Activation(c))
                }
                Layer::GlobalAvgPool => {
                    let y = global_avg_pool_forward(&h)?;
                    (y, Cache::Shape(h.shape().to_vec()))
                }
                Layer::Dropout { p } => match &mut mode {
                    Mode::Eval => (h, Cache::Mask(None)),
                    Mode::Train(rng) => {
                        let mask = dropout_mask(h.shape(), *p, rng)?;
                        (apply_mask(&h, &mask)?, Cache::Mask(Some(mask)))
                    }
                    Mode::Replay(masks) => {
                        let mask = masks.get(replay_idx).ok_or_else(|| {
                            Error::InvalidArgument("not enough dropout masks to replay".into())
                        })?;
                        replay_idx += 1;
                        (apply_mask(&h, mask)?, Cache::Mask(Some(mask.clone())))
                    }
                },
                Layer::Dense { kernel, bias } => {
                    let y = dense_forward(&h, kernel, bias)?;
                    (y, Cache::Input(h))
                }
                Layer::Softmax => {
                    let y = softmax(&h)?;
                    (y.clone(), Cache::Output(y))
                }
            };
            caches.push(cache);
            h = next;
        }
        Ok(Trace { caches, output: h })
    }

    /// Reverse pass over layers `[0, upto)` given the gradient with respect to
    /// the output of layer `upto - 1`. Returns gradients in registry order.
    ///
    /// For a softmax/cross-entropy head pass the logit gradient and
    /// `upto = layers.len() - 1`.
    pub fn backward(&self, trace: &Trace, grad: Tensor, upto: usize) -> Result<Vec<Tensor>> {
        if trace.caches.len() != self.layers.len() || upto > self.layers.len() {
            return Err(Error::StaleCache("trace does not belong to this model".into()));
        }
        let mut per_layer: Vec<Vec<Tensor>> = vec![Vec::new(); self.layers.len()];
        let mut g = grad;
        for i in (0..upto).rev() {
            let want_dx = i > 0;
            g = match (&self.layers[i], &trace.caches[i]) {
                (Layer::Conv2d { kernel, .. }, Cache::Input(x)) => {
                    let (dx, dw, db) = conv2d_backward(&g, x, kernel, want_dx)?;
                    per_layer[i] = vec![dw, db];
                    match dx {
                        Some(dx) => dx,
                        None => break,
                    }
                }
                (Layer::MaxPool2x2, Cache::Pool { argmax, in_shape }) => {
                    maxpool2x2_backward(&g, argmax, in_shape)?
                }
                (Layer::Activation { spec, .. }, Cache::Activation(c)) => {
                    let (dx, dp) = apply_activation_backward(&g, c, spec)?;
                    if let Some(dp) = dp {
                        per_layer[i] = vec![dp];
                    }
                    dx
                }
                (Layer::GlobalAvgPool, Cache::Shape(s)) => global_avg_pool_backward(&g, s)?,
                (Layer::Dropout { .. }, Cache::Mask(m)) => match m {
                    Some(mask) => apply_mask(&g, mask)?,
                    None => g,
                },
                (Layer::Dense { kernel, .. }, Cache::Input(x)) => {
                    let (dx, dw, db) = dense_backward(&g, x, kernel)?;
                    per_layer[i] = vec![dw, db];
                    dx
                }
                (Layer::Softmax, Cache::Output(y)) => softmax_backward(&g, y)?,
                _ => return Err(Error::StaleCache(format!("cache mismatch at layer {i}"))),
            };
        }
        // Layers past `upto` (e.g. the fused softmax) contribute no parameters;
        // fill zeros for any parameterised layer skipped entirely.
        let mut out = Vec::new();
        for (layer, grads) in self.layers.iter().zip(per_layer) {
            let params = layer.params();
            if grads.len() == params.len() {
                out.extend(grads);
            } else {
                out.extend(params.iter().map(|p| Tensor::zeros_like(p)));
            }
        }
        Ok(out)
    }

    /// Rows of a layer table: input size, output size, layer, parameter count.
    pub fn summary(&self) -> Vec<SummaryRow> {
        let mut rows = Vec::with_capacity(self.layers.len());
        let mut input = self.input_shape.clone();
        let mut conv_idx = 0;
        for (layer, out) in self.layers.iter().zip(&self.shapes) {
            let label = match layer {
                Layer::Conv2d { kernel, .. } => {
                    conv_idx += 1;
                    let s = kernel.shape();
                    format!("{}x{}, {} CONV2D (Layer {conv_idx})", s[0], s[1], s[3])
                }
                Layer::MaxPool2x2 => "2x2, Max Pool".to_string(),
                Layer::Activation { spec, .. } => {
                    format!("Activation Function ({}, {})", spec.kind.label(), spec.scheme)
                }
                Layer::GlobalAvgPool => "Average Pooling 2D".to_string(),
                Layer::Dropout { p } => format!("Dropout(p={p})"),
                Layer::Dense { kernel, .. } => format!("{}, Fully Connected", kernel.shape()[1]),
                Layer::Softmax => "SoftMax Activation Function".to_string(),
            };
            rows.push(SummaryRow {
                input: fmt_shape(&input),
                output: fmt_shape(out),
                layer: label,
                params: layer.params().iter().map(|t| t.len()).sum(),
            });
            input = out.clone();
        }
        rows
    }

    pub fn summary_table(&self) -> String {
        let rows = self.summary();
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<12} {:<12} {:<40} {:>10}",
            "Input size", "Output size", "Layer", "Parameters"
        );
        for r in &rows {
            let _ = writeln!(
                s,
                "{:<12} {:<12} {:<40} {:>10}",
                r.input, r.output, r.layer, r.params
            );
        }
        let _ = writeln!(
            s,
            "Total parameters: {}",
            group_thousands(self.count_parameters())
        );
        s
    }
}

/// `36282` → `"36,282"`.
pub fn group_thousands(n: usize) -> String {
    let digits = n.to_string();
    let mut out = String::with_capacity(digits.len() + digits.len() / 3);
    for (i, ch) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(ch);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SummaryRow {
    pub input: String,
    pub output: String,
    pub layer: String,
    pub params: usize,
}

fn fmt_shape(s: &[usize]) -> String {
    s.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("x")
}

fn rank3(shape: &[usize], what: &str) -> Result<[usize; 3]> {
    match *shape {
        [h, w, c] => Ok([h, w, c]),
        _ => Err(Error::Shape(format!(
            "{what} needs an (h, w, c) input, got {shape:?}"
        ))),
    }
}

/// Per-example input shape of CIFAR images.
pub const CIFAR_INPUT: [usize; 3] = [32, 32, 3];

/// The reference CNN: five valid 3x3 convolutions (16, 16, 32, 32, 64
/// filters) each followed by the activation, one 2x2 max pool after the
/// first, global average pooling, dropout 0.5, a dense classifier and
/// softmax.
pub fn paper_architecture(num_classes: usize, spec: &ActivationSpec) -> Vec<LayerDesc> {
    let act = || LayerDesc::Activation { spec: spec.clone() };
    let conv = |filters| LayerDesc::Conv2d { kernel: 3, filters };
    vec![
        conv(16),
        act(),
        LayerDesc::MaxPool2x2,
        conv(16),
        act(),
        conv(32),
        act(),
        conv(32),
        act(),
        conv(64),
        act(),
        LayerDesc::GlobalAvgPool,
        LayerDesc::Dropout { p: 0.5 },
        LayerDesc::Dense { units: num_classes },
        LayerDesc::Softmax,
    ]
}

pub fn build_paper_model(
    num_classes: usize,
    kind: ActivationKind,
    scheme: SharingScheme,
    rng: &mut Rng,
) -> Result<Model> {
    build_paper_model_with(num_classes, &ActivationSpec::new(kind, scheme), rng)
}

pub fn build_paper_model_with(num_classes: usize, spec: &ActivationSpec, rng: &mut Rng) -> Result<Model> {
    Model::from_descs(&CIFAR_INPUT, &paper_architecture(num_classes, spec), rng)
}

pub fn count_parameters(model: &Model) -> usize {
    model.count_parameters()
}
