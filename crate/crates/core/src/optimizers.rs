//! Parameter-update rules.
//!
//! Every rule is element-wise. State is kept per parameter tensor: one [`Slot`]
//! per entry of `theta` and one for the bias, all zero at `t = 0`.
//!
//! Momentum and NAG come in two formulations:
//!
//! | kind     | `Classic`                                   | `Decoupled`                               |
//! |----------|---------------------------------------------|-------------------------------------------|
//! | Momentum | `v = γv + ηg`; `θ -= v`                     | `v = μv + g`; `θ -= ηv`                   |
//! | NAG      | `v = γv + η∇J(θ - γv)`; `θ -= v`            | `v = μv + g`; `θ -= η(g + μv)`            |
//!
//! `Classic` NAG is the only rule that evaluates the gradient somewhere other
//! than the current parameters, which is why stepping takes a gradient
//! callback rather than a precomputed gradient.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Gradient, LinearModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Momentum,
    Nag,
    Adagrad,
    RmsProp,
    Adadelta,
    Adam,
}

impl OptimizerKind {
    pub const ALL: [OptimizerKind; 7] = [
        OptimizerKind::Sgd,
        OptimizerKind::Momentum,
        OptimizerKind::Nag,
        OptimizerKind::Adagrad,
        OptimizerKind::RmsProp,
        OptimizerKind::Adadelta,
        OptimizerKind::Adam,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Momentum => "momentum",
            OptimizerKind::Nag => "nag",
            OptimizerKind::Adagrad => "adagrad",
            OptimizerKind::RmsProp => "rmsprop",
            OptimizerKind::Adadelta => "adadelta",
            OptimizerKind::Adam => "adam",
        }
    }

    /// Momentum and NAG carry a velocity and a formulation variant.
    pub fn uses_momentum(self) -> bool {
        matches!(self, OptimizerKind::Momentum | OptimizerKind::Nag)
    }

    /// SGD, Momentum and NAG apply one global step length.
    pub fn is_constant_lr(self) -> bool {
        matches!(
            self,
            OptimizerKind::Sgd | OptimizerKind::Momentum | OptimizerKind::Nag
        )
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        match lower.as_str() {
            "nesterov" => return Ok(OptimizerKind::Nag),
            "rms_prop" | "rms-prop" => return Ok(OptimizerKind::RmsProp),
            _ => {}
        }
        OptimizerKind::ALL
            .into_iter()
            .find(|k| k.name() == lower)
            .ok_or_else(|| Error::invalid(format!("unknown optimizer '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Classic,
    Decoupled,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Classic => "classic",
            Variant::Decoupled => "decoupled",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "classic" => Ok(Variant::Classic),
            "decoupled" => Ok(Variant::Decoupled),
            other => Err(Error::invalid(format!("unknown variant '{other}'"))),
        }
    }
}

pub const DEFAULT_MOMENTUM: f64 = 0.9;
pub const DEFAULT_DECAY: f64 = 0.9;
pub const DEFAULT_BETA1: f64 = 0.9;
pub const DEFAULT_BETA2: f64 = 0.999;
pub const DEFAULT_EPS: f64 = 1e-8;
/// Adadelta's smoothing term; larger than the others because it also seeds
/// the numerator `RMS[Δθ]` of the very first step.
pub const DEFAULT_ADADELTA_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerSpec {
    pub kind: OptimizerKind,
    /// Only consulted by Momentum and NAG.
    pub variant: Variant,
    pub lr: f64,
    /// γ for `Classic`, μ for `Decoupled`.
    pub momentum: f64,
    /// γ of the squared-gradient (and squared-update) running averages.
    pub decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl OptimizerSpec {
    /// Spec with the conventional defaults for `kind`.
    pub fn new(kind: OptimizerKind) -> Self {
        let lr = match kind {
            OptimizerKind::Sgd
            | OptimizerKind::Momentum
            | OptimizerKind::Nag
            | OptimizerKind::Adagrad => 0.01,
            OptimizerKind::RmsProp | OptimizerKind::Adam => 0.001,
            OptimizerKind::Adadelta => 1.0,
        };
        let eps = match kind {
            OptimizerKind::Adadelta => DEFAULT_ADADELTA_EPS,
            _ => DEFAULT_EPS,
        };
        OptimizerSpec {
            kind,
            variant: Variant::Decoupled,
            lr,
            momentum: DEFAULT_MOMENTUM,
            decay: DEFAULT_DECAY,
            beta1: DEFAULT_BETA1,
            beta2: DEFAULT_BETA2,
            eps,
        }
    }

    pub fn sgd(lr: f64) -> Self {
        Self::new(OptimizerKind::Sgd).with_lr(lr)
    }

    pub fn with_lr(mut self, lr: f64) -> Self {
        self.lr = lr;
        self
    }

    pub fn with_variant(mut self, variant: Variant) -> Self {
        self.variant = variant;
        self
    }

    pub fn with_momentum(mut self, momentum: f64) -> Self {
        self.momentum = momentum;
        self
    }

    pub fn with_decay(mut self, decay: f64) -> Self {
        self.decay = decay;
        self
    }

    pub fn with_betas(mut self, beta1: f64, beta2: f64) -> Self {
        self.beta1 = beta1;
        self.beta2 = beta2;
        self
    }

    pub fn with_eps(mut self, eps: f64) -> Self {
        self.eps = eps;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str, v: f64, range: &str| {
            Err(Error::invalid(format!(
                "{what} must be in {range}, got {v}"
            )))
        };
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad("learning rate", self.lr, "[0, inf)");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum", self.momentum, "[0, 1)");
        }
        if !(self.decay > 0.0 && self.decay < 1.0) {
            return bad("decay", self.decay, "(0, 1)");
        }
        if !(0.0..1.0).contains(&self.beta1) {
            return bad("beta1", self.beta1, "[0, 1)");
        }
        if !(0.0..1.0).contains(&self.beta2) {
            return bad("beta2", self.beta2, "[0, 1)");
        }
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return bad("eps", self.eps, "(0, inf)");
        }
        Ok(())
    }
}

/// Per-coordinate accumulators. Each rule touches only its own fields.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Slot {
    /// Momentum / NAG velocity.
    pub velocity: f64,
    /// Adagrad running sum of squared gradients.
    pub sum_sq_grad: f64,
    /// RMSProp / Adadelta running average of squared gradients.
    pub avg_sq_grad: f64,
    /// Adadelta running average of squared (unscaled) updates.
    pub avg_sq_update: f64,
    /// Adam first moment.
    pub first_moment: f64,
    /// Adam second moment.
    pub second_moment: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct OptimizerState {
    pub theta: Vec<Slot>,
    pub bias: Slot,
    /// Number of completed steps.
    pub step: u64,
}

impl OptimizerState {
    pub fn new(p: usize) -> Self {
        OptimizerState {
            theta: vec![Slot::default(); p],
            bias: Slot::default(),
            step: 0,
        }
    }

    fn conform(&mut self, p: usize) -> Result<()> {
        if self.step == 0 && self.theta.is_empty() && p > 0 {
            self.theta = vec![Slot::default(); p];
        }
        if self.theta.len() != p {
            return Err(Error::DimensionMismatch {
                op: "optimizer state",
                expected: p,
                actual: self.theta.len(),
            });
        }
        Ok(())
    }

    fn slot_mut(&mut self, k: usize) -> &mut Slot {
        if k == self.theta.len() {
            &mut self.bias
        } else {
            &mut self.theta[k]
        }
    }

    fn slots(&self) -> impl Iterator<Item = &Slot> {
        self.theta.iter().chain(std::iter::once(&self.bias))
    }
}

/// Applies one rule to one coordinate; returns the new parameter value.
fn update_coord(spec: &OptimizerSpec, slot: &mut Slot, param: f64, g: f64, t: u64) -> f64 {
    let lr = spec.lr;
    match (spec.kind, spec.variant) {
        (OptimizerKind::Sgd, _) => param - lr * g,
        // For classic NAG, `g` was evaluated at the look-ahead point.
        (OptimizerKind::Momentum | OptimizerKind::Nag, Variant::Classic) => {
            slot.velocity = spec.momentum * slot.velocity + lr * g;
            param - slot.velocity
        }
        (OptimizerKind::Momentum, Variant::Decoupled) => {
            slot.velocity = spec.momentum * slot.velocity + g;
            param - lr * slot.velocity
        }
        (OptimizerKind::Nag, Variant::Decoupled) => {
            slot.velocity = spec.momentum * slot.velocity + g;
            let direction = g + spec.momentum * slot.velocity;
            param - lr * direction
        }
        (OptimizerKind::Adagrad, _) => {
            slot.sum_sq_grad += g * g;
            param - lr * g / (slot.sum_sq_grad + spec.eps).sqrt()
        }
        (OptimizerKind::RmsProp, _) => {
            slot.avg_sq_grad = spec.decay * slot.avg_sq_grad + (1.0 - spec.decay) * g * g;
            param - lr * g / (slot.avg_sq_grad + spec.eps).sqrt()
        }
        (OptimizerKind::Adadelta, _) => {
            let rho = spec.decay;
            slot.avg_sq_grad = rho * slot.avg_sq_grad + (1.0 - rho) * g * g;
            let rms_update = (slot.avg_sq_update + spec.eps).sqrt();
            let rms_grad = (slot.avg_sq_grad + spec.eps).sqrt();
            let delta = -(rms_update / rms_grad) * g;
            slot.avg_sq_update = rho * slot.avg_sq_update + (1.0 - rho) * delta * delta;
            param + lr * delta
        }
        (OptimizerKind::Adam, _) => {
            let (b1, b2) = (spec.beta1, spec.beta2);
            slot.first_moment = b1 * slot.first_moment + (1.0 - b1) * g;
            slot.second_moment = b2 * slot.second_moment + (1.0 - b2) * g * g;
            let exp = i32::try_from(t).unwrap_or(i32::MAX);
            let m_hat = slot.first_moment / (1.0 - b1.powi(exp));
            let v_hat = slot.second_moment / (1.0 - b2.powi(exp));
            param - lr * m_hat / (v_hat.sqrt() + spec.eps)
        }
    }
}

fn needs_lookahead(spec: &OptimizerSpec) -> bool {
    spec.kind == OptimizerKind::Nag && spec.variant == Variant::Classic
}

/// Point at which classic NAG queries the gradient: `θ − γ v_{t−1}`.
fn lookahead(spec: &OptimizerSpec, state: &OptimizerState, m: &LinearModel) -> LinearModel {
    let mut ahead = m.clone();
    for (k, slot) in state.slots().enumerate() {
        *ahead.coord_mut(k) -= spec.momentum * slot.velocity;
    }
    ahead
}

/// In-place step. `grad_at` is called exactly once, at the point the rule
/// needs: the look-ahead parameters for classic NAG, `model` otherwise.
///
/// On error neither `state` nor `model` is modified.
pub fn step_in_place<F>(
    spec: &OptimizerSpec,
    state: &mut OptimizerState,
    model: &mut LinearModel,
    mut grad_at: F,
) -> Result<()>
where
    F: FnMut(&LinearModel) -> Result<Gradient>,
{
    spec.validate()?;
    let p = model.features();
    state.conform(p)?;

    let g = if needs_lookahead(spec) {
        grad_at(&lookahead(spec, state, model))?
    } else {
        grad_at(model)?
    };
    if g.d_theta.len() != p {
        return Err(Error::DimensionMismatch {
            op: "optimizer step",
            expected: p,
            actual: g.d_theta.len(),
        });
    }
    if !g.is_finite() {
        return Err(Error::Divergence(format!(
            "non-finite gradient at step {}",
            state.step + 1
        )));
    }

    let t = state.step + 1;
    for (k, gk) in g.coords().enumerate() {
        let param = model.coord_mut(k);
        *param = update_coord(spec, state.slot_mut(k), *param, gk, t);
    }
    state.step = t;
    Ok(())
}

/// Functional step with a precomputed gradient. For classic NAG the gradient
/// is taken to be the one at the look-ahead point.
pub fn step(
    spec: &OptimizerSpec,
    state: &OptimizerState,
    model: &LinearModel,
    g: &Gradient,
) -> Result<(LinearModel, OptimizerState)> {
    let mut next_model = model.clone();
    let mut next_state = state.clone();
    step_in_place(spec, &mut next_state, &mut next_model, |_| Ok(g.clone()))?;
    Ok((next_model, next_state))
}

/// Classic NAG with a gradient oracle queried at `θ − γ v_{t−1}`.
pub fn step_nag_classic<F>(
    spec: &OptimizerSpec,
    state: &OptimizerState,
    model: &LinearModel,
    grad_at: F,
) -> Result<(LinearModel, OptimizerState)>
where
    F: FnMut(&LinearModel) -> Result<Gradient>,
{
    let spec = OptimizerSpec {
        kind: OptimizerKind::Nag,
        variant: Variant::Classic,
        ..*spec
    };
    let mut next_model = model.clone();
    let mut next_state = state.clone();
    step_in_place(&spec, &mut next_state, &mut next_model, grad_at)?;
    Ok((next_model, next_state))
}

/// Spec and state bundled for a single training run.
#[derive(Debug, Clone)]
pub struct Optimizer {
    spec: OptimizerSpec,
    state: OptimizerState,
}

impl Optimizer {
    pub fn new(spec: OptimizerSpec, p: usize) -> Result<Self> {
        spec.validate()?;
        Ok(Optimizer {
            spec,
            state: OptimizerState::new(p),
        })
    }

    pub fn spec(&self) -> &OptimizerSpec {
        &self.spec
    }

    pub fn state(&self) -> &OptimizerState {
        &self.state
    }

    pub fn step<F>(&mut self, model: &mut LinearModel, grad_at: F) -> Result<()>
    where
        F: FnMut(&LinearModel) -> Result<Gradient>,
    {
        step_in_place(&self.spec, &mut self.state, model, grad_at)
    }
}
