//! Piecewise-linear activation functions and their exact gradients.
//!
//! Every activation here is a continuous piecewise-linear scalar function:
//!
//! | kind          | adaptive params | definition                                          |
//! |---------------|-----------------|-----------------------------------------------------|
//! | `Linear`      | –               | `x`                                                 |
//! | `Relu`        | –               | `max(0, x)`                                         |
//! | `LeakyRelu`   | –               | `x` if `x > 0`, else `0.01 x`                       |
//! | `Prelu`       | `δ`             | `x` if `x > 0`, else `δ x`                          |
//! | `DoubleRelu`  | `α ≥ 0`         | `x − α` above `α`, `0` on `[−α, α]`, `x + α` below  |
//! | `Pilu`        | `α, β, γ`       | `α (x − γ) + γ` if `x > γ`, else `β (x − γ) + γ`    |
//!
//! PiLU contains the whole rectifier family: `(α, β, γ) = (1, 0, 0)` is ReLU,
//! `(1, 0.01, 0)` is leaky ReLU and `(1, δ, 0)` is PReLU (see [`as_pilu`]).
//!
//! Scalar forward/backward functions live at the top of this module. Tensor
//! level application with per-layer, per-channel or per-neuron parameter
//! sharing lives in [`layer`].

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub mod layer;

pub use layer::{
    activation_forward, activation_forward_slice, activation_param_count, apply_activation,
    apply_activation_backward, param_store_shape, ActivationCache, ActivationSpec, SharingScheme,
};

/// Negative-side slope of the fixed leaky ReLU.
pub const LEAKY_SLOPE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivationKind {
    Linear,
    Relu,
    #[serde(rename = "lrelu")]
    LeakyRelu,
    Prelu,
    DoubleRelu,
    Pilu,
}

impl ActivationKind {
    pub const ALL: [ActivationKind; 6] = [
        ActivationKind::Linear,
        ActivationKind::Relu,
        ActivationKind::LeakyRelu,
        ActivationKind::Prelu,
        ActivationKind::DoubleRelu,
        ActivationKind::Pilu,
    ];

    /// Number of adaptive parameters per unit.
    pub fn arity(self) -> usize {
        self.param_names().len()
    }

    pub fn param_names(self) -> &'static [&'static str] {
        match self {
            ActivationKind::Linear | ActivationKind::Relu | ActivationKind::LeakyRelu => &[],
            ActivationKind::Prelu => &["delta"],
            ActivationKind::DoubleRelu => &["alpha"],
            ActivationKind::Pilu => &["alpha", "beta", "gamma"],
        }
    }

    /// Starting parameter values: PiLU begins as leaky ReLU, DoubleReLU with a
    /// dead zone of half-width 0.01, PReLU with slope 0.25.
    ///
    /// A DoubleReLU half-width of 0.5 puts every unit after the first layer
    /// of the reference CNN inside the dead zone at initialisation, so no
    /// gradient reaches any weight.
    pub fn default_init(self) -> &'static [f64] {
        match self {
            ActivationKind::Linear | ActivationKind::Relu | ActivationKind::LeakyRelu => &[],
            ActivationKind::Prelu => &[0.25],
            ActivationKind::DoubleRelu => &[0.01],
            ActivationKind::Pilu => &[1.0, LEAKY_SLOPE, 0.0],
        }
    }

    /// Name used on the command line and in logs.
    pub fn name(self) -> &'static str {
        match self {
            ActivationKind::Linear => "linear",
            ActivationKind::Relu => "relu",
            ActivationKind::LeakyRelu => "lrelu",
            ActivationKind::Prelu => "prelu",
            ActivationKind::DoubleRelu => "double_relu",
            ActivationKind::Pilu => "pilu",
        }
    }

    /// Display name as used in result tables.
    pub fn label(self) -> &'static str {
        match self {
            ActivationKind::Linear => "Linear",
            ActivationKind::Relu => "ReLU",
            ActivationKind::LeakyRelu => "LReLU",
            ActivationKind::Prelu => "PReLU",
            ActivationKind::DoubleRelu => "DoubleReLU",
            ActivationKind::Pilu => "PiLU",
        }
    }
}

impl fmt::Display for ActivationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ActivationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        ActivationKind::ALL
            .into_iter()
            .find(|k| k.name() == norm)
            .or(match norm.as_str() {
                "doublerelu" => Some(ActivationKind::DoubleRelu),
                "leaky_relu" => Some(ActivationKind::LeakyRelu),
                _ => None,
            })
            .ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "unknown activation `{s}` (expected one of linear, relu, lrelu, prelu, double_relu, pilu)"
                ))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PiluParams {
    /// Slope above the knot.
    pub alpha: f64,
    /// Slope at and below the knot.
    pub beta: f64,
    /// Knot location.
    pub gamma: f64,
}

impl PiluParams {
    pub fn new(alpha: f64, beta: f64, gamma: f64) -> Self {
        Self { alpha, beta, gamma }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DoubleReluParams {
    /// Half-width of the zero band; kept non-negative.
    pub alpha: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreluParams {
    pub delta: f64,
}

/// Gradients produced by [`pilu_backward`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PiluGrad {
    pub dx: f64,
    pub dalpha: f64,
    pub dbeta: f64,
    pub dgamma: f64,
}

/// Line of slope `slope` through `(knot, knot)`.
///
/// Written relative to the knot so that the value at the knot is exactly the
/// knot; unit slope returns `x` untouched so slope-one segments are exact
/// identities. Zero slope returns the knot and a knot at zero gives
/// `slope * x`, which match the rectifiers down to the sign of zero.
#[inline(always)]
fn through_knot(x: f64, slope: f64, knot: f64) -> f64 {
    if slope == 1.0 {
        x
    } else if slope == 0.0 {
        knot
    } else if knot == 0.0 {
        slope * x
    } else {
        slope * (x - knot) + knot
    }
}

#[inline]
pub fn pilu_forward(x: f64, p: &PiluParams) -> f64 {
    if x > p.gamma {
        through_knot(x, p.alpha, p.gamma)
    } else {
        through_knot(x, p.beta, p.gamma)
    }
}

#[inline]
pub fn pilu_backward(x: f64, p: &PiluParams, dy: f64) -> PiluGrad {
    if x > p.gamma {
        PiluGrad {
            dx: dy * p.alpha,
            dalpha: dy * (x - p.gamma),
            dbeta: 0.0,
            dgamma: dy * (1.0 - p.alpha),
        }
    } else {
        PiluGrad {
            dx: dy * p.beta,
            dalpha: 0.0,
            dbeta: dy * (x - p.gamma),
            dgamma: dy * (1.0 - p.beta),
        }
    }
}

#[inline]
pub fn double_relu_forward(x: f64, p: &DoubleReluParams) -> f64 {
    if x > p.alpha {
        x - p.alpha
    } else if x < -p.alpha {
        x + p.alpha
    } else {
        0.0
    }
}

/// Returns `(dx, dalpha)`.
#[inline]
pub fn double_relu_backward(x: f64, p: &DoubleReluParams, dy: f64) -> (f64, f64) {
    if x > p.alpha {
        (dy, -dy)
    } else if x < -p.alpha {
        (dy, dy)
    } else {
        (0.0, 0.0)
    }
}

/// The fixed-shape members of the rectifier family.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Rectifier {
    Linear,
    Relu,
    LeakyRelu,
    Prelu(PreluParams),
}

impl Rectifier {
    /// Builds a rectifier from a kind and its parameter slice.
    pub fn from_kind(kind: ActivationKind, params: &[f64]) -> Result<Self> {
        check_arity(kind, params)?;
        match kind {
            ActivationKind::Linear => Ok(Rectifier::Linear),
            ActivationKind::Relu => Ok(Rectifier::Relu),
            ActivationKind::LeakyRelu => Ok(Rectifier::LeakyRelu),
            ActivationKind::Prelu => Ok(Rectifier::Prelu(PreluParams { delta: params[0] })),
            other => Err(Error::InvalidArgument(format!("{other} is not a rectifier"))),
        }
    }
}

#[inline]
pub fn rectifier_forward(x: f64, r: Rectifier) -> f64 {
    match r {
        Rectifier::Linear => x,
        Rectifier::Relu => {
            if x > 0.0 {
                x
            } else {
                0.0
            }
        }
        Rectifier::LeakyRelu => {
            if x > 0.0 {
                x
            } else {
                LEAKY_SLOPE * x
            }
        }
        Rectifier::Prelu(p) => {
            if x > 0.0 {
                x
            } else {
                p.delta * x
            }
        }
    }
}

/// `(dx, ddelta)`; `ddelta` is zero for the fixed rectifiers.
#[inline]
pub fn rectifier_backward(x: f64, r: Rectifier, dy: f64) -> (f64, f64) {
    match r {
        Rectifier::Linear => (dy, 0.0),
        Rectifier::Relu => (if x > 0.0 { dy } else { 0.0 }, 0.0),
        Rectifier::LeakyRelu => (if x > 0.0 { dy } else { LEAKY_SLOPE * dy }, 0.0),
        Rectifier::Prelu(p) => {
            if x > 0.0 {
                (dy, 0.0)
            } else {
                (p.delta * dy, dy * x)
            }
        }
    }
}

/// PiLU parameters reproducing a rectifier: knot at zero, unit slope above it
/// and the rectifier's negative-side slope below it.
///
/// Only ReLU, leaky ReLU and PReLU have such a row; `Linear` and `DoubleRelu`
/// are rejected.
pub fn as_pilu(kind: ActivationKind, params: &[f64]) -> Result<PiluParams> {
    check_arity(kind, params)?;
    let beta = match kind {
        ActivationKind::Relu => 0.0,
        ActivationKind::LeakyRelu => LEAKY_SLOPE,
        ActivationKind::Prelu => params[0],
        other => return Err(Error::InvalidArgument(format!("{other} has no PiLU equivalent"))),
    };
    Ok(PiluParams::new(1.0, beta, 0.0))
}

/// Evaluates any activation kind on one unit with its parameter slice.
#[inline]
pub fn unit_forward(kind: ActivationKind, x: f64, params: &[f64]) -> f64 {
    match kind {
        ActivationKind::Linear => x,
        ActivationKind::Relu => rectifier_forward(x, Rectifier::Relu),
        ActivationKind::LeakyRelu => rectifier_forward(x, Rectifier::LeakyRelu),
        ActivationKind::Prelu => rectifier_forward(x, Rectifier::Prelu(PreluParams { delta: params[0] })),
        ActivationKind::DoubleRelu => double_relu_forward(x, &DoubleReluParams { alpha: params[0] }),
        ActivationKind::Pilu => pilu_forward(x, &PiluParams::new(params[0], params[1], params[2])),
    }
}

/// Backward on one unit. Parameter gradients are written into `dparams`
/// (same order as [`ActivationKind::param_names`]); returns `dx`.
#[inline]
pub fn unit_backward(kind: ActivationKind, x: f64, params: &[f64], dy: f64, dparams: &mut [f64]) -> f64 {
    match kind {
        ActivationKind::Linear => dy,
        ActivationKind::Relu => rectifier_backward(x, Rectifier::Relu, dy).0,
        ActivationKind::LeakyRelu => rectifier_backward(x, Rectifier::LeakyRelu, dy).0,
        ActivationKind::Prelu => {
            let (dx, dd) = rectifier_backward(x, Rectifier::Prelu(PreluParams { delta: params[0] }), dy);
            dparams[0] = dd;
            dx
        }
        ActivationKind::DoubleRelu => {
            let (dx, da) = double_relu_backward(x, &DoubleReluParams { alpha: params[0] }, dy);
            dparams[0] = da;
            dx
        }
        ActivationKind::Pilu => {
            let g = pilu_backward(x, &PiluParams::new(params[0], params[1], params[2]), dy);
            dparams[0] = g.dalpha;
            dparams[1] = g.dbeta;
            dparams[2] = g.dgamma;
            g.dx
        }
    }
}

/// Input locations where the unit changes slope.
pub fn knots(kind: ActivationKind, params: &[f64]) -> Vec<f64> {
    match kind {
        ActivationKind::Linear => vec![],
        ActivationKind::Relu | ActivationKind::LeakyRelu | ActivationKind::Prelu => vec![0.0],
        ActivationKind::DoubleRelu => vec![-params[0], params[0]],
        ActivationKind::Pilu => vec![params[2]],
    }
}

/// Which linear piece `x` falls on; used to detect knot crossings.
#[inline]
pub fn branch_id(kind: ActivationKind, x: f64, params: &[f64]) -> u8 {
    match kind {
        ActivationKind::Linear => 0,
        ActivationKind::Relu | ActivationKind::LeakyRelu | ActivationKind::Prelu => (x > 0.0) as u8,
        ActivationKind::DoubleRelu => {
            if x > params[0] {
                2
            } else if x < -params[0] {
                0
            } else {
                1
            }
        }
        ActivationKind::Pilu => (x > params[2]) as u8,
    }
}

/// Clamps parameters back into their admissible region after an update.
pub fn project_params(kind: ActivationKind, params: &mut [f64]) {
    if kind == ActivationKind::DoubleRelu {
        for a in params.iter_mut() {
            *a = a.max(0.0);
        }
    }
}

fn check_arity(kind: ActivationKind, params: &[f64]) -> Result<()> {
    if params.len() != kind.arity() {
        return Err(Error::InvalidArgument(format!(
            "{kind} takes {} parameter(s), got {}",
            kind.arity(),
            params.len()
        )));
    }
    Ok(())
}
