//! Parameter-dependent maps `f(x, λ)`.
//!
//! Every system implements [`DynamicalSystem`]. Two adapters cover the usual
//! cases: [`DiscreteMap`] wraps an explicit map, [`FlowMap`] turns a vector
//! field into its time-`T` map with fixed-step classical RK4. A
//! [`SystemRegistry`] resolves systems by name; the built-ins are just
//! pre-registered constructors, and user systems go through the same door.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use crate::geometry::MAX_DIM;

/// Any coordinate beyond this magnitude counts as an escaped trajectory.
pub const ESCAPE_BOUND: f64 = 1e6;

/// Default number of RK4 steps per time-`T` map.
pub const DEFAULT_FLOW_STEPS: usize = 200;

/// The image left every bounded region (non-finite or beyond [`ESCAPE_BOUND`]).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Escaped;

/// A map `f : R^n × Λ → R^n`.
pub trait DynamicalSystem: Send + Sync {
    fn name(&self) -> &str;

    /// State dimension `n`.
    fn dim(&self) -> usize;

    /// Writes `f(x, λ)` into `out`.
    fn eval(&self, x: &[f64], lambda: f64, out: &mut [f64]) -> Result<(), Escaped>;
}

impl fmt::Debug for dyn DynamicalSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "DynamicalSystem({}, n={})", self.name(), self.dim())
    }
}

#[inline]
fn escaped(x: &[f64]) -> bool {
    x.iter().any(|v| !(v.abs() <= ESCAPE_BOUND))
}

/// An explicit discrete map.
pub struct DiscreteMap<F> {
    name: String,
    dim: usize,
    map: F,
}

impl<F> DiscreteMap<F>
where
    F: Fn(&[f64], f64, &mut [f64]) + Send + Sync,
{
    pub fn new(name: impl Into<String>, dim: usize, map: F) -> Result<Self> {
        if dim == 0 || dim > MAX_DIM {
            return Err(Error::input(format!("state dimension must be in 1..={MAX_DIM}")));
        }
        Ok(DiscreteMap {
            name: name.into(),
            dim,
            map,
        })
    }
}

impl<F> DynamicalSystem for DiscreteMap<F>
where
    F: Fn(&[f64], f64, &mut [f64]) + Send + Sync,
{
    fn name(&self) -> &str {
        &self.name
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, x: &[f64], lambda: f64, out: &mut [f64]) -> Result<(), Escaped> {
        (self.map)(x, lambda, out);
        if escaped(out) {
            Err(Escaped)
        } else {
            Ok(())
        }
    }
}

/// One classical RK4 step of `field` from `x` with step `h`, in place.
#[inline]
pub fn rk4_step<G>(field: &G, x: &mut [f64], lambda: f64, h: f64)
where
    G: Fn(&[f64], f64, &mut [f64]),
{
    let n = x.len();
    let mut k1 = [0.0; MAX_DIM];
    let mut k2 = [0.0; MAX_DIM];
    let mut k3 = [0.0; MAX_DIM];
    let mut k4 = [0.0; MAX_DIM];
    let mut tmp = [0.0; MAX_DIM];

    field(x, lambda, &mut k1[..n]);
    for i in 0..n {
        tmp[i] = x[i] + 0.5 * h * k1[i];
    }
    field(&tmp[..n], lambda, &mut k2[..n]);
    for i in 0..n {
        tmp[i] = x[i] + 0.5 * h * k2[i];
    }
    field(&tmp[..n], lambda, &mut k3[..n]);
    for i in 0..n {
        tmp[i] = x[i] + h * k3[i];
    }
    field(&tmp[..n], lambda, &mut k4[..n]);
    for i in 0..n {
        x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
}

/// Integrates `field` over `steps` RK4 steps of size `h`, stopping early if
/// the trajectory escapes.
pub fn integrate<G>(field: &G, x: &mut [f64], lambda: f64, h: f64, steps: usize) -> Result<(), Escaped>
where
    G: Fn(&[f64], f64, &mut [f64]),
{
    for _ in 0..steps {
        rk4_step(field, x, lambda, h);
        if escaped(x) {
            return Err(Escaped);
        }
    }
    Ok(())
}

/// The time-`T` map of an autonomous vector field `g(x, λ)`.
///
/// `λ` is held fixed over the whole horizon.
pub struct FlowMap<G> {
    name: String,
    dim: usize,
    field: G,
    horizon: f64,
    steps: usize,
}

impl<G> FlowMap<G>
where
    G: Fn(&[f64], f64, &mut [f64]) + Send + Sync,
{
    /// `horizon / step` must be a positive integer (to 1e-9 relative).
    pub fn new(name: impl Into<String>, dim: usize, field: G, horizon: f64, step: f64) -> Result<Self> {
        if dim == 0 || dim > MAX_DIM {
            return Err(Error::input(format!("state dimension must be in 1..={MAX_DIM}")));
        }
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::input(format!("flow horizon T={horizon} must be positive")));
        }
        if !(step.is_finite() && step > 0.0) {
            return Err(Error::input(format!("step h={step} must be positive")));
        }
        let ratio = horizon / step;
        let steps = ratio.round();
        if steps < 1.0 || (ratio - steps).abs() > 1e-9 * ratio {
            return Err(Error::input(format!(
                "T/h = {horizon}/{step} = {ratio} is not a positive integer"
            )));
        }
        Ok(FlowMap {
            name: name.into(),
            dim,
            field,
            horizon,
            steps: steps as usize,
        })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn step_size(&self) -> f64 {
        self.horizon / self.steps as f64
    }
}

impl<G> DynamicalSystem for FlowMap<G>
where
    G: Fn(&[f64], f64, &mut [f64]) + Send + Sync,
{
    fn name(&self) -> &str {
        &self.name
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, x: &[f64], lambda: f64, out: &mut [f64]) -> Result<(), Escaped> {
        out.copy_from_slice(x);
        integrate(&self.field, out, lambda, self.step_size(), self.steps)
    }
}

/// Hénon map `(x, y) ↦ (1 - λx² + y, νx)`.
#[inline]
pub fn henon(x: &[f64], lambda: f64, nu: f64, out: &mut [f64]) {
    out[0] = 1.0 - lambda * x[0] * x[0] + x[1];
    out[1] = nu * x[0];
}

/// Van der Pol field `(x₂, λ(1 - x₁²)x₂ - x₁)`.
#[inline]
pub fn vdp_field(x: &[f64], lambda: f64, out: &mut [f64]) {
    out[0] = x[1];
    out[1] = lambda * (1.0 - x[0] * x[0]) * x[1] - x[0];
}

/// Arneodo field `(x₂, x₃, -x₃ - 2x₂ + λx₁ - x₁²)`.
#[inline]
pub fn arneodo_field(x: &[f64], lambda: f64, out: &mut [f64]) {
    out[0] = x[1];
    out[1] = x[2];
    out[2] = -x[2] - 2.0 * x[1] + lambda * x[0] - x[0] * x[0];
}

/// Name plus optional constants and flow settings, as written in configs.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSpec {
    pub name: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub constants: BTreeMap<String, f64>,
    /// Flow horizon `T`.
    #[serde(default, rename = "T", skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    /// RK4 step `h`; defaults to `T / 200`.
    #[serde(default, rename = "h", skip_serializing_if = "Option::is_none")]
    pub step: Option<f64>,
}

impl SystemSpec {
    pub fn named(name: impl Into<String>) -> Self {
        SystemSpec {
            name: name.into(),
            ..Default::default()
        }
    }

    /// Looks up a constant, falling back to `default`.
    pub fn constant(&self, key: &str, default: f64) -> f64 {
        self.constants.get(key).copied().unwrap_or(default)
    }

    /// Rejects constants other than `allowed`.
    pub fn check_constants(&self, allowed: &[&str]) -> Result<()> {
        match self.constants.keys().find(|k| !allowed.contains(&k.as_str())) {
            Some(k) => Err(Error::config(
                format!("system.constants.{k}"),
                format!("unknown constant for `{}`", self.name),
            )),
            None => Ok(()),
        }
    }

    fn reject_flow_settings(&self) -> Result<()> {
        if self.horizon.is_some() || self.step.is_some() {
            return Err(Error::config("system.T", format!("`{}` is a discrete map", self.name)));
        }
        Ok(())
    }

    /// `(T, h)` with `T` defaulting to `default_horizon`.
    pub fn flow_settings(&self, default_horizon: f64) -> (f64, f64) {
        let horizon = self.horizon.unwrap_or(default_horizon);
        let step = self.step.unwrap_or(horizon / DEFAULT_FLOW_STEPS as f64);
        (horizon, step)
    }
}

type Constructor = Box<dyn Fn(&SystemSpec) -> Result<Arc<dyn DynamicalSystem>> + Send + Sync>;

/// Systems available by name.
pub struct SystemRegistry {
    entries: BTreeMap<String, Constructor>,
}

impl fmt::Debug for SystemRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.entries.keys()).finish()
    }
}

impl Default for SystemRegistry {
    fn default() -> Self {
        SystemRegistry::with_builtins()
    }
}

impl SystemRegistry {
    pub fn empty() -> Self {
        SystemRegistry {
            entries: BTreeMap::new(),
        }
    }

    /// Registry holding `henon`, `vdp` and `arneodo`.
    pub fn with_builtins() -> Self {
        let mut reg = SystemRegistry::empty();
        reg.register("henon", |spec| {
            spec.check_constants(&["nu"])?;
            spec.reject_flow_settings()?;
            let nu = spec.constant("nu", 0.3);
            let sys = DiscreteMap::new("henon", 2, move |x, l, out| henon(x, l, nu, out))?;
            Ok(Arc::new(sys))
        });
        reg.register("vdp", |spec| {
            spec.check_constants(&[])?;
            let (t, h) = spec.flow_settings(4.0);
            let sys = FlowMap::new("vdp", 2, vdp_field, t, h).map_err(|e| Error::config("system.h", e.to_string()))?;
            Ok(Arc::new(sys))
        });
        reg.register("arneodo", |spec| {
            spec.check_constants(&[])?;
            let (t, h) = spec.flow_settings(2.0);
            let sys =
                FlowMap::new("arneodo", 3, arneodo_field, t, h).map_err(|e| Error::config("system.h", e.to_string()))?;
            Ok(Arc::new(sys))
        });
        reg
    }

    /// Adds or replaces the constructor for `name`.
    pub fn register<C>(&mut self, name: impl Into<String>, ctor: C)
    where
        C: Fn(&SystemSpec) -> Result<Arc<dyn DynamicalSystem>> + Send + Sync + 'static,
    {
        self.entries.insert(name.into(), Box::new(ctor));
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn build(&self, spec: &SystemSpec) -> Result<Arc<dyn DynamicalSystem>> {
        let ctor = self.entries.get(&spec.name).ok_or_else(|| {
            let known: Vec<&str> = self.names().collect();
            Error::config("system.name", format!("unknown system `{}` (known: {})", spec.name, known.join(", ")))
        })?;
        ctor(spec)
    }
}
