//! First-order optimizers over a [`ParamSet`].

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamSet;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Momentum,
    Nesterov,
    RmsProp,
    Adagrad,
    Adadelta,
    Adam,
}

impl OptimizerKind {
    pub const ALL: [OptimizerKind; 7] = [
        OptimizerKind::Sgd,
        OptimizerKind::Momentum,
        OptimizerKind::Nesterov,
        OptimizerKind::RmsProp,
        OptimizerKind::Adagrad,
        OptimizerKind::Adadelta,
        OptimizerKind::Adam,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Momentum => "momentum",
            OptimizerKind::Nesterov => "nesterov",
            OptimizerKind::RmsProp => "rmsprop",
            OptimizerKind::Adagrad => "adagrad",
            OptimizerKind::Adadelta => "adadelta",
            OptimizerKind::Adam => "adam",
        }
    }
}

impl std::str::FromStr for OptimizerKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let s = s.to_ascii_lowercase();
        OptimizerKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown optimizer `{s}`")))
    }
}

/// How `decay` shrinks the learning rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DecayMode {
    /// `lr * decay^epoch`.
    #[default]
    PerEpoch,
    /// `lr / (1 + decay * updates)`.
    InverseTime,
}

/// Optimizer choice and hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerSpec {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub decay: Option<f64>,
    #[serde(default)]
    pub decay_mode: DecayMode,
    /// Momentum coefficient for the momentum kinds.
    pub momentum: f64,
    /// Moving-average coefficient for RMSprop and Adadelta.
    pub rho: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl OptimizerSpec {
    /// Standard defaults for `kind`.
    pub fn new(kind: OptimizerKind) -> Self {
        let (lr, rho, eps) = match kind {
            OptimizerKind::Adam => (1e-3, 0.9, 1e-8),
            OptimizerKind::Sgd | OptimizerKind::Momentum | OptimizerKind::Nesterov => {
                (1e-2, 0.9, 1e-8)
            }
            OptimizerKind::RmsProp => (1e-3, 0.9, 1e-8),
            OptimizerKind::Adagrad => (1e-2, 0.9, 1e-8),
            OptimizerKind::Adadelta => (1.0, 0.95, 1e-6),
        };
        OptimizerSpec {
            kind,
            lr,
            decay: None,
            decay_mode: DecayMode::PerEpoch,
            momentum: 0.9,
            rho,
            beta1: 0.9,
            beta2: 0.999,
            eps,
        }
    }

    pub fn adam(lr: f64) -> Self {
        OptimizerSpec {
            lr,
            ..Self::new(OptimizerKind::Adam)
        }
    }

    pub fn with_lr(mut self, lr: f64) -> Self {
        self.lr = lr;
        self
    }

    pub fn with_decay(mut self, decay: f64, mode: DecayMode) -> Self {
        self.decay = Some(decay);
        self.decay_mode = mode;
        self
    }

    fn slots(&self) -> usize {
        match self.kind {
            OptimizerKind::Sgd => 0,
            OptimizerKind::Momentum
            | OptimizerKind::Nesterov
            | OptimizerKind::RmsProp
            | OptimizerKind::Adagrad => 1,
            OptimizerKind::Adadelta | OptimizerKind::Adam => 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidArgument(format!("optimizer {what}")));
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad("learning rate must be positive");
        }
        if self.decay.is_some_and(|d| !d.is_finite() || d < 0.0) {
            return bad("decay must be non-negative");
        }
        for (v, name) in [
            (self.momentum, "momentum"),
            (self.rho, "rho"),
            (self.beta1, "beta1"),
            (self.beta2, "beta2"),
        ] {
            if !(0.0..1.0).contains(&v) {
                return bad(&format!("{name} must lie in [0, 1)"));
            }
        }
        Ok(())
    }
}

/// An optimizer with its per-parameter state buffers.
#[derive(Debug, Clone)]
pub struct Optimizer<T> {
    spec: OptimizerSpec,
    state: HashMap<String, Vec<Vec<T>>>,
    updates: u64,
    epoch: u64,
    shifted: bool,
    lr_scale: f64,
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(spec: OptimizerSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Optimizer {
            spec,
            state: HashMap::new(),
            updates: 0,
            epoch: 0,
            shifted: false,
            lr_scale: 1.0,
        })
    }

    pub fn spec(&self) -> &OptimizerSpec {
        &self.spec
    }

    /// Number of updates applied so far.
    pub fn updates(&self) -> u64 {
        self.updates
    }

    /// Multiplier applied on top of the scheduled rate (warmup).
    pub fn set_lr_scale(&mut self, scale: f64) {
        self.lr_scale = scale;
    }

    pub fn current_lr(&self) -> f64 {
        self.lr_scale
            * match (self.spec.decay, self.spec.decay_mode) {
                (None, _) => self.spec.lr,
                (Some(d), DecayMode::PerEpoch) => self.spec.lr * d.powi(self.epoch as i32),
                (Some(d), DecayMode::InverseTime) => self.spec.lr / (1.0 + d * self.updates as f64),
            }
    }

    /// Marks the end of an epoch for per-epoch decay.
    pub fn end_epoch(&mut self) {
        self.epoch += 1;
    }

    /// Shapes of the state buffers of `name`.
    pub fn state_lens(&self, name: &str) -> Vec<usize> {
        self.state
            .get(name)
            .map(|s| s.iter().map(Vec::len).collect())
            .unwrap_or_default()
    }

    /// Moves the parameters to the look-ahead point `θ + μv` before the
    /// gradient is taken. Only Nesterov momentum does anything here; the
    /// following [`Optimizer::step`] moves back before updating.
    pub fn begin_step(&mut self, params: &mut ParamSet<T>) {
        if self.spec.kind != OptimizerKind::Nesterov || self.shifted {
            return;
        }
        let mu = T::lit(self.spec.momentum);
        for (name, t) in params.iter_mut() {
            if let Some(v) = self.state.get(name).and_then(|s| s.first()) {
                t.data_mut()
                    .iter_mut()
                    .zip(v)
                    .for_each(|(p, &v)| *p += mu * v);
            }
        }
        self.shifted = true;
    }

    /// Applies one update from the accumulated gradients. `l2 * θ` is added
    /// to each gradient first.
    pub fn step(&mut self, params: &mut ParamSet<T>, l2: f64) -> Result<()> {
        let lr = T::lit(self.current_lr());
        let (l2, mu, rho, eps) = (
            T::lit(l2),
            T::lit(self.spec.momentum),
            T::lit(self.spec.rho),
            T::lit(self.spec.eps),
        );
        let (b1, b2) = (T::lit(self.spec.beta1), T::lit(self.spec.beta2));
        let t = self.updates + 1;
        let one = T::one();
        let nslots = self.spec.slots();
        let shifted = self.shifted;

        for (name, p) in params.iter() {
            if p.requires_grad() && p.grad().is_none() {
                return Err(Error::MissingGrad(name.clone()));
            }
        }
        for (name, p) in params.iter_mut() {
            if !p.requires_grad() {
                continue;
            }
            let n = p.len();
            let grad: Vec<T> = p.grad().expect("checked above").to_vec();
            let slots = self
                .state
                .entry(name.clone())
                .or_insert_with(|| vec![vec![T::zero(); n]; nslots]);
            let data = p.data_mut();
            if shifted {
                if let Some(v) = slots.first() {
                    data.iter_mut().zip(v).for_each(|(p, &v)| *p -= mu * v);
                }
            }
            for i in 0..n {
                let g = grad[i] + l2 * data[i];
                match self.spec.kind {
                    OptimizerKind::Sgd => data[i] -= lr * g,
                    OptimizerKind::Momentum | OptimizerKind::Nesterov => {
                        let v = &mut slots[0][i];
                        *v = mu * *v - lr * g;
                        data[i] += *v;
                    }
                    OptimizerKind::RmsProp => {
                        let a = &mut slots[0][i];
                        *a = rho * *a + (one - rho) * g * g;
                        data[i] -= lr * g / (a.sqrt() + eps);
                    }
                    OptimizerKind::Adagrad => {
                        let a = &mut slots[0][i];
                        *a += g * g;
                        data[i] -= lr * g / (a.sqrt() + eps);
                    }
                    OptimizerKind::Adadelta => {
                        let a = slots[0][i] * rho + (one - rho) * g * g;
                        let delta = g * (slots[1][i] + eps).sqrt() / (a + eps).sqrt();
                        slots[0][i] = a;
                        slots[1][i] = rho * slots[1][i] + (one - rho) * delta * delta;
                        data[i] -= lr * delta;
                    }
                    OptimizerKind::Adam => {
                        let m = b1 * slots[0][i] + (one - b1) * g;
                        let v = b2 * slots[1][i] + (one - b2) * g * g;
                        slots[0][i] = m;
                        slots[1][i] = v;
                        let m_hat = m / (one - b1.powi(t as i32));
                        let v_hat = v / (one - b2.powi(t as i32));
                        data[i] -= lr * m_hat / (v_hat.sqrt() + eps);
                    }
                }
            }
        }
        self.shifted = false;
        self.updates = t;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn one_param(value: f64, grad: f64) -> ParamSet<f64> {
        let mut p = ParamSet::new();
        p.insert("w", Tensor::scalar(value));
        p.get_mut("w").unwrap().accumulate_grad(&[grad]).unwrap();
        p
    }

    fn first_step(spec: OptimizerSpec, value: f64, grad: f64) -> f64 {
        let mut p = one_param(value, grad);
        let mut opt = Optimizer::new(spec).unwrap();
        opt.begin_step(&mut p);
        opt.step(&mut p, 0.0).unwrap();
        p.get("w").unwrap().data()[0]
    }

    #[test]
    fn sgd_example() {
        let v = first_step(
            OptimizerSpec::new(OptimizerKind::Sgd).with_lr(0.1),
            1.0,
            0.5,
        );
        assert!((v - 0.95).abs() < 1e-15);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let v = first_step(OptimizerSpec::adam(1e-3), 0.0, 1.0);
        assert!((v + 1e-3).abs() < 1e-9);
    }

    #[test]
    fn nesterov_first_step_matches_momentum() {
        let m = first_step(
            OptimizerSpec::new(OptimizerKind::Momentum).with_lr(0.1),
            2.0,
            0.7,
        );
        let n = first_step(
            OptimizerSpec::new(OptimizerKind::Nesterov).with_lr(0.1),
            2.0,
            0.7,
        );
        assert_eq!(m, n);
        assert!((m - (2.0 - 0.07)).abs() < 1e-15);
    }

    #[test]
    fn missing_gradient_is_reported() {
        let mut p = ParamSet::<f64>::new();
        p.insert("w", Tensor::scalar(1.0));
        let mut opt = Optimizer::new(OptimizerSpec::adam(1e-3)).unwrap();
        assert!(matches!(opt.step(&mut p, 0.0), Err(Error::MissingGrad(_))));
    }

    #[test]
    fn l2_adds_weight_to_gradient() {
        let mut p = one_param(2.0, 0.0);
        let mut opt = Optimizer::new(OptimizerSpec::new(OptimizerKind::Sgd).with_lr(0.5)).unwrap();
        opt.step(&mut p, 0.1).unwrap();
        assert!((p.get("w").unwrap().data()[0] - 1.9).abs() < 1e-15);
    }

    #[test]
    fn decay_modes() {
        let spec = OptimizerSpec::new(OptimizerKind::Sgd)
            .with_lr(1.0)
            .with_decay(0.5, DecayMode::PerEpoch);
        let mut opt = Optimizer::<f64>::new(spec).unwrap();
        opt.end_epoch();
        opt.end_epoch();
        assert_eq!(opt.current_lr(), 0.25);
        let spec = OptimizerSpec::new(OptimizerKind::Sgd)
            .with_lr(1.0)
            .with_decay(1.0, DecayMode::InverseTime);
        let mut opt = Optimizer::<f64>::new(spec).unwrap();
        let mut p = one_param(0.0, 1.0);
        opt.step(&mut p, 0.0).unwrap();
        assert_eq!(opt.current_lr(), 0.5);
    }

    #[test]
    fn parse_kind() {
        assert_eq!(
            "Adam".parse::<OptimizerKind>().unwrap(),
            OptimizerKind::Adam
        );
        assert!("lbfgs".parse::<OptimizerKind>().is_err());
    }
}
