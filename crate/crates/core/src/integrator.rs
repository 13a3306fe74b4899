//! Projected Euler scheme for one reflected particle.
//!
//! A step moves the state by drift, control and noise and then projects the
//! result back onto `D̄`. The projection displacement `y - p` is the discrete
//! reflection increment `dK`; its length accumulates into the local time
//! `|K|`. For convex domains `y - p` is parallel to the outward normal at
//! `p`, so this is the normal reflection of the continuous system.

use crate::error::{input, Error, Result};
use crate::geometry::ConvexDomain;
use crate::linalg::{all_finite, norm, Matrix};
use crate::model::{MeasureSummary, ModelSpec};
use crate::scalar::Scalar;
use serde::{Deserialize, Serialize};

/// Uniform grid `t_k = k T / n` on `[0, T]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
pub struct TimeGrid<T> {
    pub horizon: T,
    pub n_steps: usize,
}

impl<T: Scalar> TimeGrid<T> {
    pub fn new(horizon: T, n_steps: usize) -> Result<Self> {
        if n_steps == 0 {
            return input("time grid needs at least one step");
        }
        if !(horizon > T::zero() && horizon.is_finite()) {
            return input("time grid horizon must be positive and finite");
        }
        Ok(Self { horizon, n_steps })
    }

    #[inline]
    pub fn dt(&self) -> T {
        self.horizon / T::from_usize_lossy(self.n_steps)
    }

    #[inline]
    pub fn node(&self, k: usize) -> T {
        if k == self.n_steps {
            self.horizon
        } else {
            self.horizon * T::from_usize_lossy(k) / T::from_usize_lossy(self.n_steps)
        }
    }

    pub fn nodes(&self) -> Vec<T> {
        (0..=self.n_steps).map(|k| self.node(k)).collect()
    }

    /// Index of `t` if it is a grid node (within a relative `1e-9`).
    pub fn index_of(&self, t: T) -> Option<usize> {
        let pos = t / self.dt();
        let k = pos.round();
        if k < T::zero() || k > T::from_usize_lossy(self.n_steps) {
            return None;
        }
        ((pos - k).abs() <= T::lit(1e-9)).then(|| k.to_usize().unwrap_or(usize::MAX))
    }

    /// The grid with twice as many steps.
    pub fn refined(&self) -> Self {
        Self {
            horizon: self.horizon,
            n_steps: self.n_steps * 2,
        }
    }
}

/// One trajectory on a grid with its reflection bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct ReflectedPath<T> {
    dim: usize,
    /// `X(t_k)`, row-major, `n + 1` rows.
    pub states: Vec<T>,
    /// `|K|(t_k)`: accumulated projection displacement.
    pub local_time: Vec<T>,
    /// `K(t_k)`: accumulated displacement vectors, row-major.
    pub reflection: Vec<T>,
    /// Whether step `k` (from `t_k` to `t_{k+1}`) was projected.
    pub boundary_hits: Vec<bool>,
}

impl<T: Scalar> ReflectedPath<T> {
    pub(crate) fn start(x0: &[T], n_steps: usize) -> Self {
        let dim = x0.len();
        let mut states = Vec::with_capacity((n_steps + 1) * dim);
        states.extend_from_slice(x0);
        let mut reflection = Vec::with_capacity((n_steps + 1) * dim);
        reflection.resize(dim, T::zero());
        let mut local_time = Vec::with_capacity(n_steps + 1);
        local_time.push(T::zero());
        Self {
            dim,
            states,
            local_time,
            reflection,
            boundary_hits: Vec::with_capacity(n_steps),
        }
    }

    /// A path with the given states and no reflection, e.g. for comparing
    /// externally produced trajectories.
    pub fn from_states(states: Vec<T>, dim: usize) -> Result<Self> {
        if dim == 0 || states.is_empty() || states.len() % dim != 0 {
            return input("states must hold a positive number of rows of length dim");
        }
        let rows = states.len() / dim;
        Ok(Self {
            dim,
            reflection: vec![T::zero(); states.len()],
            states,
            local_time: vec![T::zero(); rows],
            boundary_hits: vec![false; rows - 1],
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of completed steps.
    pub fn n_steps(&self) -> usize {
        self.boundary_hits.len()
    }

    pub fn state(&self, k: usize) -> &[T] {
        &self.states[k * self.dim..(k + 1) * self.dim]
    }

    pub fn last_state(&self) -> &[T] {
        self.state(self.n_steps())
    }

    pub fn reflection_at(&self, k: usize) -> &[T] {
        &self.reflection[k * self.dim..(k + 1) * self.dim]
    }

    /// Coordinate `j` along the path.
    pub fn coordinate(&self, j: usize) -> Vec<T> {
        self.states.iter().skip(j).step_by(self.dim).copied().collect()
    }

    pub(crate) fn push(&mut self, outcome: &StepOutcome<T>) {
        self.states.extend_from_slice(&outcome.x_next);
        let k = self.n_steps();
        for j in 0..self.dim {
            let v = self.reflection[k * self.dim + j] + outcome.dk[j];
            self.reflection.push(v);
        }
        let lt = self.local_time[k] + outcome.d_abs_k;
        self.local_time.push(lt);
        self.boundary_hits.push(outcome.hit);
    }

    /// Checks containment, monotone local time, the support condition and
    /// `|K| >= |K(t)|`.
    pub fn check_invariants(&self, domain: &ConvexDomain<T>) -> Result<()> {
        for k in 0..=self.n_steps() {
            if !domain.classify(self.state(k)).in_closure() {
                return Err(Error::Precondition(format!("state {k} outside the domain")));
            }
            let kvec = norm(self.reflection_at(k));
            let slack = T::lit(1e-12) * (T::one() + self.local_time[k]);
            if kvec > self.local_time[k] + slack {
                return Err(Error::Precondition(format!("|K| < |K(t)| at node {k}")));
            }
        }
        if self.local_time[0] != T::zero() {
            return Err(Error::Precondition("local time must start at 0".into()));
        }
        for k in 0..self.n_steps() {
            let inc = self.local_time[k + 1] - self.local_time[k];
            if inc < T::zero() {
                return Err(Error::Precondition(format!("local time decreases at {k}")));
            }
            if inc > T::zero() && !self.boundary_hits[k] {
                return Err(Error::Precondition(format!(
                    "local time grows off the boundary at step {k}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome<T> {
    pub x_next: Vec<T>,
    pub dk: Vec<T>,
    pub d_abs_k: T,
    pub hit: bool,
}

impl<T: Scalar> StepOutcome<T> {
    pub(crate) fn zeros(dim: usize) -> Self {
        Self {
            x_next: vec![T::zero(); dim],
            dk: vec![T::zero(); dim],
            d_abs_k: T::zero(),
            hit: false,
        }
    }
}

/// `y = x + (drift + control) dt + noise`, `x_next = Π(y)`, `dK = y - x_next`.
pub fn step_reflected<T: Scalar>(
    domain: &ConvexDomain<T>,
    x: &[T],
    drift_term: &[T],
    control_term: &[T],
    noise_term: &[T],
    dt: T,
) -> Result<StepOutcome<T>> {
    let d = domain.dim();
    if [x.len(), drift_term.len(), control_term.len(), noise_term.len()]
        .iter()
        .any(|&l| l != d)
    {
        return input("step terms must have the domain dimension");
    }
    if !(dt > T::zero()) {
        return input("step size must be positive");
    }
    if !(all_finite(drift_term) && all_finite(control_term) && all_finite(noise_term)) {
        return input("step terms must be finite");
    }
    if !domain.contains(x)?.in_closure() {
        return Err(Error::Precondition("step started outside the domain".into()));
    }
    let mut out = StepOutcome::zeros(d);
    advance(domain, x, drift_term, control_term, noise_term, dt, &mut out);
    Ok(out)
}

#[inline]
pub(crate) fn advance<T: Scalar>(
    domain: &ConvexDomain<T>,
    x: &[T],
    drift_term: &[T],
    control_term: &[T],
    noise_term: &[T],
    dt: T,
    out: &mut StepOutcome<T>,
) {
    for j in 0..x.len() {
        let y = x[j] + (drift_term[j] + control_term[j]) * dt + noise_term[j];
        out.x_next[j] = y;
        out.dk[j] = y;
    }
    let moved = domain.project_in_place(&mut out.x_next);
    out.hit = moved > T::zero();
    for (dk, &p) in out.dk.iter_mut().zip(&out.x_next) {
        *dk = if out.hit { *dk - p } else { T::zero() };
    }
    out.d_abs_k = if out.hit { norm(&out.dk) } else { T::zero() };
}

/// Scratch buffers for evaluating one particle step.
pub(crate) struct Workspace<T> {
    pub b: Vec<T>,
    pub sigma: Matrix<T>,
    pub control_term: Vec<T>,
    pub noise_term: Vec<T>,
    pub outcome: StepOutcome<T>,
}

impl<T: Scalar> Workspace<T> {
    pub fn new(d: usize, d1: usize) -> Self {
        Self {
            b: vec![T::zero(); d],
            sigma: Matrix::zeros(d, d1),
            control_term: vec![T::zero(); d],
            noise_term: vec![T::zero(); d],
            outcome: StepOutcome::zeros(d),
        }
    }

    /// Evaluates coefficients at `(t, x, μ)` and advances by one step with
    /// control value `h` and Brownian increment `dw`.
    #[inline]
    pub fn step(
        &mut self,
        model: &ModelSpec<T>,
        t: T,
        x: &[T],
        mu: &MeasureSummary<T>,
        h: &[T],
        dw: &[T],
        dt: T,
    ) -> Result<()> {
        model.eval_into(t, x, mu, &mut self.b, &mut self.sigma);
        if !all_finite(&self.b) || !self.sigma.is_finite() {
            return Err(Error::Model {
                t: t.as_f64(),
                x: x.iter().map(|v| v.as_f64()).collect(),
                msg: "non-finite coefficient value".into(),
            });
        }
        if model.strict {
            let size = norm(&self.b) + self.sigma.hs_norm();
            if size > model.bound {
                return Err(Error::AssumptionViolation(format!(
                    "|b| + |σ| = {size} exceeds L = {} at t = {t}",
                    model.bound
                )));
            }
        }
        self.sigma.mul_vec_into(h, &mut self.control_term);
        self.sigma.mul_vec_into(dw, &mut self.noise_term);
        advance(
            &model.domain,
            x,
            &self.b,
            &self.control_term,
            &self.noise_term,
            dt,
            &mut self.outcome,
        );
        Ok(())
    }
}

/// Chains [`step_reflected`] along the grid with `drift = b(t_k, X_k, μ_k)`,
/// `control = σ h_k` and `noise = σ ΔW_k`.
///
/// `controls` and `noise` hold one `d1`-vector per step.
pub fn simulate_reflected_path<T: Scalar>(
    model: &ModelSpec<T>,
    grid: &TimeGrid<T>,
    mu_flow: &[MeasureSummary<T>],
    x0: &[T],
    controls: &[T],
    noise: &[T],
) -> Result<ReflectedPath<T>> {
    let n = grid.n_steps;
    let d = model.dim();
    let d1 = model.noise_dim;
    if mu_flow.len() != n + 1 {
        return input(format!("{} measures for {} grid nodes", mu_flow.len(), n + 1));
    }
    if controls.len() != n * d1 || noise.len() != n * d1 {
        return input("controls and noise need one d1-vector per step");
    }
    if x0.len() != d {
        return input("initial point has the wrong dimension");
    }
    if !model.domain.contains(x0)?.in_closure() {
        return Err(Error::Precondition("initial point outside the domain".into()));
    }
    let dt = grid.dt();
    let mut ws = Workspace::new(d, d1);
    let mut path = ReflectedPath::start(x0, n);
    let mut x = x0.to_vec();
    for k in 0..n {
        ws.step(
            model,
            grid.node(k),
            &x,
            &mu_flow[k],
            &controls[k * d1..(k + 1) * d1],
            &noise[k * d1..(k + 1) * d1],
            dt,
        )?;
        path.push(&ws.outcome);
        x.copy_from_slice(&ws.outcome.x_next);
    }
    Ok(path)
}
