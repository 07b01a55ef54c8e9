//! Neuron activation functions realised by the current-controlled voltage sources.

use std::fmt;
use std::sync::Arc;

use nalgebra::DVector;

use crate::validation::{sample_points, Property, ValidationReport, ViolationLog};
use crate::{Error, Result};

#[derive(Clone)]
enum Kind {
    Tanh,
    /// `3 sigmoid(x) - 1.5`, evaluated as `1.5 tanh(x / 2)`.
    ScaledSigmoid,
    /// The raw logistic function. Not odd; kept so validation can reject it.
    Logistic,
    Custom(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

/// An activation `sigma` with its declared Lipschitz constant `eta`.
#[derive(Clone)]
pub struct Activation {
    kind: Kind,
    name: String,
    pub eta: f64,
}

impl fmt::Debug for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Activation")
            .field("name", &self.name)
            .field("eta", &self.eta)
            .finish()
    }
}

impl Activation {
    pub fn tanh() -> Self {
        Self {
            kind: Kind::Tanh,
            name: "tanh".into(),
            eta: 1.0,
        }
    }

    pub fn scaled_sigmoid() -> Self {
        Self {
            kind: Kind::ScaledSigmoid,
            name: "scaled_sigmoid".into(),
            eta: 0.75,
        }
    }

    pub fn logistic() -> Self {
        Self {
            kind: Kind::Logistic,
            name: "sigmoid".into(),
            eta: 0.25,
        }
    }

    pub fn custom<F>(name: &str, sigma: F, eta: f64) -> Self
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        Self {
            kind: Kind::Custom(Arc::new(sigma)),
            name: name.into(),
            eta,
        }
    }

    /// Looks up a built-in by name: `tanh`, `scaled_sigmoid` or `sigmoid`.
    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "tanh" => Ok(Self::tanh()),
            "scaled_sigmoid" => Ok(Self::scaled_sigmoid()),
            "sigmoid" | "logistic" => Ok(Self::logistic()),
            other => Err(Error::Config(format!("unknown activation '{other}'"))),
        }
    }

    pub fn with_eta(mut self, eta: f64) -> Self {
        self.eta = eta;
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn apply(&self, x: f64) -> f64 {
        match &self.kind {
            Kind::Tanh => x.abs().tanh().copysign(x),
            Kind::ScaledSigmoid => (1.5 * (0.5 * x.abs()).tanh()).copysign(x),
            Kind::Logistic => 1.0 / (1.0 + (-x).exp()),
            Kind::Custom(f) => f(x),
        }
    }

    pub fn apply_vec(&self, x: &DVector<f64>) -> DVector<f64> {
        x.map(|v| self.apply(v))
    }
}

/// Samples `act` on `range` and reports oddness, monotonicity and Lipschitz
/// violations.
pub fn validate_activation(act: &Activation, range: (f64, f64), n_samples: usize) -> Result<ValidationReport> {
    let (lo, hi) = range;
    let mut xs = sample_points(lo, hi, n_samples)?;
    xs.push(0.0);
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    let ys: Vec<f64> = xs.iter().map(|&x| act.apply(x)).collect();
    let mut log = ViolationLog::default();

    for (&x, &y) in xs.iter().zip(&ys) {
        let mirrored = act.apply(-x);
        let err = (y + mirrored).abs();
        if err > 1e-12 * y.abs().max(1.0) {
            log.record(Property::Oddness, x, err);
        }
    }

    for i in 1..xs.len() {
        let dx = xs[i] - xs[i - 1];
        let dy = ys[i] - ys[i - 1];
        if dy.abs() / dx > act.eta * (1.0 + 1e-9) + 1e-12 {
            log.record(Property::Lipschitz, 0.5 * (xs[i] + xs[i - 1]), dy.abs() / dx - act.eta);
        }
        // saturated tails round to equal values; only flag resolvable steps
        let resolvable = dx > 1e-9 * (1.0 + xs[i].abs()) && !saturated(act, xs[i]);
        if dy < 0.0 || (dy == 0.0 && resolvable) {
            log.record(Property::Monotonicity, xs[i - 1], -dy);
        }
    }

    Ok(log.finish(xs.len(), range))
}

/// True when `x` lies in a tail where the activation has rounded to its limit.
fn saturated(act: &Activation, x: f64) -> bool {
    let h = 1e-6 * x.abs().max(1.0);
    act.apply(x + h) == act.apply(x) && act.apply(x - h) == act.apply(x)
}
