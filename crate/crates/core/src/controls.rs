//! Control policies, the atomic relaxed controls they induce, and the
//! quadratic control cost.

use crate::ensemble::Ensemble;
use crate::error::{input, Result};
use crate::integrator::TimeGrid;
use crate::linalg::{dot, norm};
use crate::scalar::Scalar;
use serde::{Deserialize, Serialize};

/// Feedback basis built from the features `(1, t, x, mean(μ))`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Basis {
    /// The features themselves.
    Deg1,
    /// All products of at most two features.
    Deg2,
}

impl Basis {
    pub fn size(self, d: usize) -> usize {
        let q = 2 + 2 * d;
        match self {
            Basis::Deg1 => q,
            Basis::Deg2 => q * (q + 1) / 2,
        }
    }

    pub(crate) fn evaluate<T: Scalar>(self, t: T, x: &[T], mean: &[T], out: &mut Vec<T>) {
        out.clear();
        let mut z = Vec::with_capacity(2 + x.len() + mean.len());
        z.push(T::one());
        z.push(t);
        z.extend_from_slice(x);
        z.extend_from_slice(mean);
        match self {
            Basis::Deg1 => out.extend_from_slice(&z),
            Basis::Deg2 => {
                for a in 0..z.len() {
                    for b in a..z.len() {
                        out.push(z[a] * z[b]);
                    }
                }
            }
        }
    }
}

fn default_clip<T: Scalar>() -> T {
    T::lit(10.0)
}

/// Feedback rule `h_i(t) = h(t, X^i, μ^N)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case")]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
pub enum ControlPolicy<T> {
    Zero,
    Constant { value: Vec<T> },
    /// Equal-length time cells covering `[0, T]`, shared by all particles.
    PiecewiseConstant { values: Vec<Vec<T>> },
    /// Per-particle cell values; particle `i` uses `values[i % len]`.
    Indexed { values: Vec<Vec<Vec<T>>> },
    /// `h = clip(Σ_j θ_j φ_j(t, x, mean(μ)))`, `θ` basis-major with `d1`
    /// entries per basis function.
    Feedback {
        basis: Basis,
        theta: Vec<T>,
        #[serde(default = "default_clip")]
        clip: T,
    },
}

impl<T: Scalar> ControlPolicy<T> {
    pub fn id(&self) -> &'static str {
        match self {
            ControlPolicy::Zero => "zero",
            ControlPolicy::Constant { .. } => "constant",
            ControlPolicy::PiecewiseConstant { .. } => "piecewise_constant",
            ControlPolicy::Indexed { .. } => "indexed",
            ControlPolicy::Feedback { .. } => "feedback",
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, ControlPolicy::Zero)
    }

    /// Checks dimensions against a state dimension `d` and noise dimension `d1`.
    pub fn validate(&self, d: usize, d1: usize) -> Result<()> {
        let vec_ok = |v: &Vec<T>| v.len() == d1 && v.iter().all(|x| x.is_finite());
        match self {
            ControlPolicy::Zero => Ok(()),
            ControlPolicy::Constant { value } => {
                if vec_ok(value) {
                    Ok(())
                } else {
                    input("constant control must be a finite d1-vector")
                }
            }
            ControlPolicy::PiecewiseConstant { values } => {
                if !values.is_empty() && values.iter().all(vec_ok) {
                    Ok(())
                } else {
                    input("piecewise-constant control needs finite d1-vectors per cell")
                }
            }
            ControlPolicy::Indexed { values } => {
                let n_cells = values.first().map_or(0, |v| v.len());
                if n_cells > 0 && values.iter().all(|p| p.len() == n_cells && p.iter().all(vec_ok)) {
                    Ok(())
                } else {
                    input("indexed control needs equal, nonempty cell lists per particle")
                }
            }
            ControlPolicy::Feedback { basis, theta, clip } => {
                if theta.len() != basis.size(d) * d1 {
                    return input(format!(
                        "feedback theta has {} entries, expected {}",
                        theta.len(),
                        basis.size(d) * d1
                    ));
                }
                if !theta.iter().all(|v| v.is_finite()) || !(*clip > T::zero()) {
                    return input("feedback parameters must be finite with positive clip");
                }
                Ok(())
            }
        }
    }

    /// `h` for particle `i` at grid step `k`, written into `out` (length `d1`).
    pub fn evaluate(
        &self,
        grid: &TimeGrid<T>,
        k: usize,
        i: usize,
        x: &[T],
        mean: &[T],
        scratch: &mut Vec<T>,
        out: &mut [T],
    ) {
        let cell = |n_cells: usize| (k * n_cells / grid.n_steps).min(n_cells - 1);
        match self {
            ControlPolicy::Zero => out.iter_mut().for_each(|v| *v = T::zero()),
            ControlPolicy::Constant { value } => out.copy_from_slice(value),
            ControlPolicy::PiecewiseConstant { values } => {
                out.copy_from_slice(&values[cell(values.len())])
            }
            ControlPolicy::Indexed { values } => {
                let own = &values[i % values.len()];
                out.copy_from_slice(&own[cell(own.len())]);
            }
            ControlPolicy::Feedback { basis, theta, clip } => {
                basis.evaluate(grid.node(k), x, mean, scratch);
                let d1 = out.len();
                for (c, o) in out.iter_mut().enumerate() {
                    let v: T = scratch
                        .iter()
                        .enumerate()
                        .map(|(j, &phi)| theta[j * d1 + c] * phi)
                        .sum();
                    *o = v.max(-*clip).min(*clip);
                }
            }
        }
    }
}

/// Parametrized policy class searched by the optimizer. Parameters are
/// clamped to `[-bound, bound]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
pub enum PolicyFamily<T> {
    Constant { d1: usize, bound: T },
    PiecewiseConstant { n_cells: usize, d1: usize, bound: T },
    Feedback { basis: Basis, d: usize, d1: usize, bound: T, clip: T },
}

impl<T: Scalar> PolicyFamily<T> {
    pub fn dim(&self) -> usize {
        match self {
            PolicyFamily::Constant { d1, .. } => *d1,
            PolicyFamily::PiecewiseConstant { n_cells, d1, .. } => n_cells * d1,
            PolicyFamily::Feedback { basis, d, d1, .. } => basis.size(*d) * d1,
        }
    }

    pub fn bound(&self) -> T {
        match self {
            PolicyFamily::Constant { bound, .. }
            | PolicyFamily::PiecewiseConstant { bound, .. }
            | PolicyFamily::Feedback { bound, .. } => *bound,
        }
    }

    pub fn clamp(&self, theta: &[T]) -> Vec<T> {
        let b = self.bound();
        theta.iter().map(|v| v.max(-b).min(b)).collect()
    }

    pub fn build(&self, theta: &[T]) -> Result<ControlPolicy<T>> {
        if theta.len() != self.dim() {
            return input(format!(
                "family expects {} parameters, got {}",
                self.dim(),
                theta.len()
            ));
        }
        let theta = self.clamp(theta);
        Ok(match self {
            PolicyFamily::Constant { .. } => ControlPolicy::Constant { value: theta },
            PolicyFamily::PiecewiseConstant { d1, .. } => ControlPolicy::PiecewiseConstant {
                values: theta.chunks(*d1).map(|c| c.to_vec()).collect(),
            },
            PolicyFamily::Feedback { basis, clip, .. } => ControlPolicy::Feedback {
                basis: *basis,
                theta,
                clip: *clip,
            },
        })
    }
}

/// Atomic relaxed control `r(dy × dt) = δ_{h(t)}(dy) dt` of a
/// piecewise-constant `h`.
#[derive(Debug, Clone, PartialEq)]
pub struct RelaxedControlView<T> {
    pub d1: usize,
    pub grid: TimeGrid<T>,
    /// One `d1`-vector per grid cell.
    pub values: Vec<T>,
    /// `∫ |y| r(dy × dt)`.
    pub first_moment: T,
    /// `∫ |y|² r(dy × dt)`.
    pub quadratic_cost: T,
}

impl<T: Scalar> RelaxedControlView<T> {
    /// `r(R^{d1} × [0, t_k]) = t_k`.
    pub fn mass_until(&self, k: usize) -> T {
        self.grid.node(k)
    }

    /// The atom `h(t)` of `r_t` on cell `k`.
    pub fn atom(&self, k: usize) -> &[T] {
        &self.values[k * self.d1..(k + 1) * self.d1]
    }

    /// `∫_{[0,t_k]} ∫ g(y) r_s(dy) ds`.
    pub fn integrate_until(&self, k: usize, mut g: impl FnMut(&[T]) -> T) -> T {
        let dt = self.grid.dt();
        (0..k).map(|c| g(self.atom(c)) * dt).sum()
    }
}

pub fn relax_control<T: Scalar>(h: &[T], d1: usize, grid: &TimeGrid<T>) -> Result<RelaxedControlView<T>> {
    if d1 == 0 || h.len() != grid.n_steps * d1 {
        return input("relaxed control needs one d1-vector per grid cell");
    }
    if !h.iter().all(|v| v.is_finite()) {
        return input("control values must be finite");
    }
    let dt = grid.dt();
    let (first, quad) = h.chunks_exact(d1).fold((T::zero(), T::zero()), |(f, q), y| {
        (f + norm(y) * dt, q + dot(y, y) * dt)
    });
    Ok(RelaxedControlView {
        d1,
        grid: *grid,
        values: h.to_vec(),
        first_moment: first,
        quadratic_cost: quad,
    })
}

/// `(1 / 2N) Σ_i Σ_k |h_{i,k}|² Δt`.
pub fn ensemble_cost<T: Scalar>(ens: &Ensemble<T>) -> T {
    let dt = ens.grid.dt();
    let total: T = ens
        .controls
        .iter()
        .map(|h| h.iter().map(|&v| v * v).sum::<T>() * dt)
        .sum();
    total / (T::lit(2.0) * T::from_usize_lossy(ens.n_particles()))
}
