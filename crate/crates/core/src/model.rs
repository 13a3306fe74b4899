//! Coefficients `b`, `σ`, initial data, finite-support measures and the
//! checks of the boundedness / Lipschitz assumptions.

use crate::error::{input, Error, Result};
use crate::geometry::ConvexDomain;
use crate::linalg::{all_finite, distance, norm, Matrix};
use crate::measures::bl_distance;
use crate::rng::{Purpose, StreamKey};
use crate::scalar::Scalar;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::sync::Arc;

/// Finite-support probability measure on `D̄` with cached first and second
/// moments. Every measure the simulators produce is of this form.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasureSummary<T> {
    dim: usize,
    points: Vec<T>,
    weights: Vec<T>,
    mean: Vec<T>,
    second_moment: Vec<T>,
}

impl<T: Scalar> MeasureSummary<T> {
    /// `points` is row-major with `dim` coordinates per atom.
    pub fn new(points: Vec<T>, dim: usize, weights: Vec<T>) -> Result<Self> {
        if dim == 0 || points.len() != weights.len() * dim || weights.is_empty() {
            return input("measure needs at least one atom with matching dimensions");
        }
        if !all_finite(&points) {
            return input("measure support must be finite");
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= T::zero())) {
            return input("measure weights must be finite and nonnegative");
        }
        let total: T = weights.iter().copied().sum();
        let tol = T::lit(1e-12).max(T::epsilon() * T::from_usize_lossy(4 * weights.len()));
        if (total - T::one()).abs() > tol {
            return input(format!("measure weights sum to {total}, expected 1"));
        }
        Ok(Self::build(points, dim, weights))
    }

    /// Empirical measure: weight `1/n` on each of the `n` rows of `points`.
    pub fn uniform(points: Vec<T>, dim: usize) -> Result<Self> {
        if dim == 0 || points.is_empty() || points.len() % dim != 0 {
            return input("empirical measure needs a nonempty row-major point list");
        }
        if !all_finite(&points) {
            return input("measure support must be finite");
        }
        let n = points.len() / dim;
        let w = T::one() / T::from_usize_lossy(n);
        Ok(Self::build(points, dim, vec![w; n]))
    }

    pub fn dirac(point: &[T]) -> Result<Self> {
        Self::uniform(point.to_vec(), point.len())
    }

    fn build(points: Vec<T>, dim: usize, weights: Vec<T>) -> Self {
        let mut mean = vec![T::zero(); dim];
        let mut second = vec![T::zero(); dim * dim];
        for (x, &w) in points.chunks_exact(dim).zip(&weights) {
            for i in 0..dim {
                mean[i] += w * x[i];
                for j in 0..dim {
                    second[i * dim + j] += w * x[i] * x[j];
                }
            }
        }
        Self {
            dim,
            points,
            weights,
            mean,
            second_moment: second,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn point(&self, i: usize) -> &[T] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> &[T] {
        &self.points
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn mean(&self) -> &[T] {
        &self.mean
    }

    /// Row-major `dim x dim` matrix `∫ x xᵀ dμ`.
    pub fn second_moment(&self) -> &[T] {
        &self.second_moment
    }

    /// Trace of the covariance; clamped at zero against rounding.
    pub fn covariance_trace(&self) -> T {
        (0..self.dim)
            .map(|i| self.second_moment[i * self.dim + i] - self.mean[i] * self.mean[i])
            .sum::<T>()
            .max(T::zero())
    }

    /// `∫ f dμ`.
    pub fn integrate(&self, mut f: impl FnMut(&[T]) -> T) -> T {
        self.points
            .chunks_exact(self.dim)
            .zip(&self.weights)
            .map(|(x, &w)| w * f(x))
            .sum()
    }

    pub fn validate_in(&self, domain: &ConvexDomain<T>) -> Result<()> {
        if domain.dim() != self.dim {
            return input("measure and domain dimensions differ");
        }
        for x in self.points.chunks_exact(self.dim) {
            if !domain.classify(x).in_closure() {
                return input("measure support leaves the domain");
            }
        }
        Ok(())
    }
}

/// Drift and diffusion callables. Implementations must be pure.
pub trait Coefficients<T: Scalar>: Send + Sync {
    fn name(&self) -> &str;

    /// Writes `b(t, x, μ)` into `out` (length `d`).
    fn drift(&self, t: T, x: &[T], mu: &MeasureSummary<T>, out: &mut [T]);

    /// Writes `σ(t, x, μ)` into `out` (`d x d1`).
    fn diffusion(&self, t: T, x: &[T], mu: &MeasureSummary<T>, out: &mut Matrix<T>);

    /// True when neither coefficient reads the measure argument.
    fn measure_free(&self) -> bool {
        false
    }
}

fn one<T: Scalar>() -> T {
    T::one()
}

fn zero<T: Scalar>() -> T {
    T::zero()
}

/// Built-in models. Every member uses `d1 = d` and a diffusion proportional
/// to the identity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
pub enum ModelKind<T> {
    /// `b = 0`, `σ = s I`.
    Brownian {
        #[serde(default = "one")]
        sigma: T,
    },
    /// `b = θ (mean(μ) - x)`, `σ = s I`.
    MeanAttraction {
        theta: T,
        #[serde(default = "one")]
        sigma: T,
    },
    /// `b = θ (mean(μ) - x)`, `σ = min(s (1 + α tr cov(μ)), clip) I`.
    DistributionDiffusion {
        #[serde(default = "zero")]
        theta: T,
        #[serde(default = "one")]
        s: T,
        alpha: T,
        clip: T,
    },
    /// `b ≡ drift`, `σ = s I`.
    ConstantDrift {
        drift: Vec<T>,
        #[serde(default = "one")]
        sigma: T,
    },
    /// `b = -rate x`, `σ = s I`.
    LinearRestoring {
        rate: T,
        #[serde(default = "one")]
        sigma: T,
    },
}

impl<T: Scalar> Coefficients<T> for ModelKind<T> {
    fn name(&self) -> &str {
        match self {
            ModelKind::Brownian { .. } => "brownian",
            ModelKind::MeanAttraction { .. } => "mean_attraction",
            ModelKind::DistributionDiffusion { .. } => "distribution_diffusion",
            ModelKind::ConstantDrift { .. } => "constant_drift",
            ModelKind::LinearRestoring { .. } => "linear_restoring",
        }
    }

    fn drift(&self, _t: T, x: &[T], mu: &MeasureSummary<T>, out: &mut [T]) {
        match self {
            ModelKind::Brownian { .. } => out.iter_mut().for_each(|v| *v = T::zero()),
            ModelKind::MeanAttraction { theta, .. }
            | ModelKind::DistributionDiffusion { theta, .. } => {
                for ((o, &xi), &m) in out.iter_mut().zip(x).zip(mu.mean()) {
                    *o = *theta * (m - xi);
                }
            }
            ModelKind::ConstantDrift { drift, .. } => out.copy_from_slice(drift),
            ModelKind::LinearRestoring { rate, .. } => {
                for (o, &xi) in out.iter_mut().zip(x) {
                    *o = -*rate * xi;
                }
            }
        }
    }

    fn diffusion(&self, _t: T, _x: &[T], mu: &MeasureSummary<T>, out: &mut Matrix<T>) {
        let scale = match self {
            ModelKind::Brownian { sigma }
            | ModelKind::MeanAttraction { sigma, .. }
            | ModelKind::ConstantDrift { sigma, .. }
            | ModelKind::LinearRestoring { sigma, .. } => *sigma,
            ModelKind::DistributionDiffusion { s, alpha, clip, .. } => {
                (*s * (T::one() + *alpha * mu.covariance_trace())).min(*clip)
            }
        };
        out.set_scaled_identity(scale);
    }

    fn measure_free(&self) -> bool {
        match self {
            ModelKind::Brownian { .. }
            | ModelKind::ConstantDrift { .. }
            | ModelKind::LinearRestoring { .. } => true,
            ModelKind::MeanAttraction { theta, .. } => *theta == T::zero(),
            ModelKind::DistributionDiffusion { .. } => false,
        }
    }
}

type DriftFn<T> = dyn Fn(T, &[T], &MeasureSummary<T>, &mut [T]) + Send + Sync;
type DiffusionFn<T> = dyn Fn(T, &[T], &MeasureSummary<T>, &mut Matrix<T>) + Send + Sync;

/// Coefficients registered from closures.
#[derive(Clone)]
pub struct FnCoefficients<T> {
    name: String,
    drift: Arc<DriftFn<T>>,
    diffusion: Arc<DiffusionFn<T>>,
    measure_free: bool,
}

impl<T: Scalar> FnCoefficients<T> {
    pub fn new(
        name: impl Into<String>,
        drift: impl Fn(T, &[T], &MeasureSummary<T>, &mut [T]) + Send + Sync + 'static,
        diffusion: impl Fn(T, &[T], &MeasureSummary<T>, &mut Matrix<T>) + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            drift: Arc::new(drift),
            diffusion: Arc::new(diffusion),
            measure_free: false,
        }
    }

    /// Declares that the closures ignore the measure argument.
    pub fn measure_free(mut self) -> Self {
        self.measure_free = true;
        self
    }
}

impl<T: Scalar> Coefficients<T> for FnCoefficients<T> {
    fn name(&self) -> &str {
        &self.name
    }

    fn drift(&self, t: T, x: &[T], mu: &MeasureSummary<T>, out: &mut [T]) {
        (self.drift)(t, x, mu, out)
    }

    fn diffusion(&self, t: T, x: &[T], mu: &MeasureSummary<T>, out: &mut Matrix<T>) {
        (self.diffusion)(t, x, mu, out)
    }

    fn measure_free(&self) -> bool {
        self.measure_free
    }
}

/// Initial positions: deterministic `x^{i,N}` or i.i.d. draws from `ν₀`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
pub enum InitialCondition<T> {
    /// One explicit point per particle.
    Points { points: Vec<Vec<T>> },
    /// Every particle starts at the same point.
    Dirac { point: Vec<T> },
    /// I.i.d. uniform over the domain.
    Uniform,
}

impl<T: Scalar> InitialCondition<T> {
    pub fn is_deterministic(&self) -> bool {
        !matches!(self, InitialCondition::Uniform)
    }

    pub(crate) fn validate(&self, domain: &ConvexDomain<T>) -> Result<()> {
        let check = |p: &Vec<T>| -> Result<()> {
            match domain.contains(p)? {
                m if m.in_closure() => Ok(()),
                _ => input("initial point outside the domain"),
            }
        };
        match self {
            InitialCondition::Points { points } => {
                if points.is_empty() {
                    return input("explicit initial points must be nonempty");
                }
                points.iter().try_for_each(check)
            }
            InitialCondition::Dirac { point } => check(point),
            InitialCondition::Uniform => Ok(()),
        }
    }

    /// Position of particle `i` of `n`. Draws come from the particle's own
    /// initial-condition substream so they do not depend on execution order.
    pub(crate) fn position(
        &self,
        domain: &ConvexDomain<T>,
        n: usize,
        i: usize,
        key: StreamKey,
    ) -> Result<Vec<T>> {
        match self {
            InitialCondition::Points { points } => {
                if points.len() != n {
                    return input(format!(
                        "{} explicit initial points for {} particles",
                        points.len(),
                        n
                    ));
                }
                Ok(points[i].clone())
            }
            InitialCondition::Dirac { point } => Ok(point.clone()),
            InitialCondition::Uniform => {
                let mut rng = key.with_purpose(Purpose::Initial).rng();
                Ok(uniform_in(domain, &mut rng))
            }
        }
    }
}

/// Rejection sample from the uniform law on `D̄`.
pub(crate) fn uniform_in<T: Scalar, R: Rng>(domain: &ConvexDomain<T>, rng: &mut R) -> Vec<T> {
    let (lo, hi) = domain.bounding_box();
    loop {
        let x: Vec<T> = lo
            .iter()
            .zip(&hi)
            .map(|(&l, &h)| l + (h - l) * T::lit(rng.random::<f64>()))
            .collect();
        if domain.classify(&x).in_closure() {
            return x;
        }
    }
}

/// Everything that defines the interacting system apart from `N` and the grid.
#[derive(Clone)]
pub struct ModelSpec<T: Scalar> {
    pub domain: ConvexDomain<T>,
    pub noise_dim: usize,
    pub horizon: T,
    pub init: InitialCondition<T>,
    /// Declared bound `L` on `|b| + ‖σ‖`.
    pub bound: T,
    /// Declared Lipschitz constant `K`.
    pub lipschitz: T,
    /// Check the bound on every coefficient evaluation.
    pub strict: bool,
    coefficients: Arc<dyn Coefficients<T>>,
}

impl<T: Scalar> fmt::Debug for ModelSpec<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelSpec")
            .field("model", &self.coefficients.name())
            .field("domain", &self.domain)
            .field("noise_dim", &self.noise_dim)
            .field("horizon", &self.horizon)
            .field("init", &self.init)
            .field("bound", &self.bound)
            .field("lipschitz", &self.lipschitz)
            .finish()
    }
}

impl<T: Scalar> ModelSpec<T> {
    pub fn new(
        domain: ConvexDomain<T>,
        noise_dim: usize,
        horizon: T,
        coefficients: impl Coefficients<T> + 'static,
        init: InitialCondition<T>,
    ) -> Result<Self> {
        Self::from_arc(domain, noise_dim, horizon, Arc::new(coefficients), init)
    }

    pub fn from_arc(
        domain: ConvexDomain<T>,
        noise_dim: usize,
        horizon: T,
        coefficients: Arc<dyn Coefficients<T>>,
        init: InitialCondition<T>,
    ) -> Result<Self> {
        if noise_dim == 0 {
            return input("noise dimension must be at least 1");
        }
        if !(horizon > T::zero() && horizon.is_finite()) {
            return input("horizon must be positive and finite");
        }
        init.validate(&domain)?;
        Ok(Self {
            domain,
            noise_dim,
            horizon,
            init,
            bound: T::lit(f64::MAX),
            lipschitz: T::lit(f64::MAX),
            strict: false,
            coefficients,
        })
    }

    /// A zoo model; `d1` equals the domain dimension.
    pub fn from_kind(
        domain: ConvexDomain<T>,
        horizon: T,
        kind: ModelKind<T>,
        init: InitialCondition<T>,
    ) -> Result<Self> {
        if let ModelKind::ConstantDrift { drift, .. } = &kind {
            if drift.len() != domain.dim() {
                return input("constant drift dimension differs from the domain");
            }
        }
        let d = domain.dim();
        Self::new(domain, d, horizon, kind, init)
    }

    pub fn with_constants(mut self, bound: T, lipschitz: T) -> Result<Self> {
        if !(bound > T::zero() && lipschitz > T::zero()) {
            return input("declared constants L and K must be positive");
        }
        self.bound = bound;
        self.lipschitz = lipschitz;
        Ok(self)
    }

    pub fn strict(mut self, on: bool) -> Self {
        self.strict = on;
        self
    }

    pub fn with_init(mut self, init: InitialCondition<T>) -> Result<Self> {
        init.validate(&self.domain)?;
        self.init = init;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    pub fn id(&self) -> &str {
        self.coefficients.name()
    }

    pub fn measure_free(&self) -> bool {
        self.coefficients.measure_free()
    }

    pub fn coefficients(&self) -> &Arc<dyn Coefficients<T>> {
        &self.coefficients
    }

    /// Hot-loop evaluation without validation.
    #[inline]
    pub(crate) fn eval_into(
        &self,
        t: T,
        x: &[T],
        mu: &MeasureSummary<T>,
        b: &mut [T],
        sigma: &mut Matrix<T>,
    ) {
        self.coefficients.drift(t, x, mu, b);
        self.coefficients.diffusion(t, x, mu, sigma);
    }

    fn model_error(&self, t: T, x: &[T], msg: impl Into<String>) -> Error {
        Error::Model {
            t: t.as_f64(),
            x: x.iter().map(|v| v.as_f64()).collect(),
            msg: msg.into(),
        }
    }

    /// `(b(t,x,μ), σ(t,x,μ))` with finiteness checks; in strict mode also
    /// checks `|b| + ‖σ‖_HS <= L`.
    pub fn eval_coefficients(
        &self,
        t: T,
        x: &[T],
        mu: &MeasureSummary<T>,
    ) -> Result<(Vec<T>, Matrix<T>)> {
        if x.len() != self.dim() || mu.dim() != self.dim() {
            return input("coefficient arguments have the wrong dimension");
        }
        if !(t >= T::zero() && t <= self.horizon) {
            return Err(Error::Precondition(format!("t = {t} outside [0, T]")));
        }
        if !self.domain.contains(x)?.in_closure() {
            return Err(Error::Precondition("x outside the closed domain".into()));
        }
        let mut b = vec![T::zero(); self.dim()];
        let mut sigma = Matrix::zeros(self.dim(), self.noise_dim);
        self.eval_into(t, x, mu, &mut b, &mut sigma);
        if !all_finite(&b) || !sigma.is_finite() {
            return Err(self.model_error(t, x, "non-finite coefficient value"));
        }
        if self.strict {
            let size = norm(&b) + sigma.hs_norm();
            if size > self.bound {
                return Err(Error::AssumptionViolation(format!(
                    "|b| + |σ| = {size} exceeds L = {} at t = {t}",
                    self.bound
                )));
            }
        }
        Ok((b, sigma))
    }

    /// Randomized check of the boundedness and Lipschitz assumptions.
    ///
    /// Samples `n_samples` pairs of `(t, x, μ)` and `(t, y, ν)` sharing the
    /// same time, with `μ, ν` random measures of one to four atoms in `D̄`.
    /// In `d >= 2` the distance between measures is a dictionary lower bound,
    /// so the observed Lipschitz ratio can only be over-estimated.
    pub fn validate_assumptions(&self, n_samples: usize, seed: u64) -> Result<AssumptionReport> {
        if n_samples < 2 {
            return input("validate_assumptions needs at least 2 samples");
        }
        let mut rng = StreamKey::new(seed, Purpose::Validation).rng();
        let d = self.dim();
        let mut b1 = vec![T::zero(); d];
        let mut b2 = vec![T::zero(); d];
        let mut s1 = Matrix::zeros(d, self.noise_dim);
        let mut s2 = Matrix::zeros(d, self.noise_dim);
        let mut max_bound = 0.0f64;
        let mut max_ratio = 0.0f64;
        for _ in 0..n_samples {
            let t = self.horizon * T::lit(rng.random::<f64>());
            let x = uniform_in(&self.domain, &mut rng);
            let y = uniform_in(&self.domain, &mut rng);
            let mu = random_measure(&self.domain, &mut rng);
            let nu = random_measure(&self.domain, &mut rng);
            self.eval_into(t, &x, &mu, &mut b1, &mut s1);
            self.eval_into(t, &y, &nu, &mut b2, &mut s2);
            for (b, s) in [(&b1, &s1), (&b2, &s2)] {
                let size = (norm(b) + s.hs_norm()).as_f64();
                max_bound = if size.is_nan() { f64::INFINITY } else { max_bound.max(size) };
            }
            let db: Vec<T> = b1.iter().zip(&b2).map(|(&a, &b)| a - b).collect();
            let ds: Vec<T> = s1
                .as_slice()
                .iter()
                .zip(s2.as_slice())
                .map(|(&a, &b)| a - b)
                .collect();
            let num = (norm(&db) + norm(&ds)).as_f64();
            let den = (distance(&x, &y) + bl_distance(&mu, &nu)?.value).as_f64();
            if den > 0.0 {
                let r = num / den;
                max_ratio = if r.is_nan() { f64::INFINITY } else { max_ratio.max(r) };
            }
        }
        Ok(AssumptionReport {
            n_samples,
            max_bound_observed: max_bound,
            max_lipschitz_ratio_observed: max_ratio,
            bound_ok: max_bound <= self.bound.as_f64(),
            lipschitz_ok: max_ratio <= self.lipschitz.as_f64(),
        })
    }
}

fn random_measure<T: Scalar, R: Rng>(domain: &ConvexDomain<T>, rng: &mut R) -> MeasureSummary<T> {
    let atoms = rng.random_range(1..=4usize);
    let mut points = Vec::with_capacity(atoms * domain.dim());
    let mut raw = Vec::with_capacity(atoms);
    for _ in 0..atoms {
        points.extend(uniform_in(domain, rng));
        raw.push(rng.random::<f64>() + 1e-3);
    }
    let total: f64 = raw.iter().sum();
    let mut weights: Vec<T> = raw.iter().map(|w| T::lit(w / total)).collect();
    // absorb rounding in the last weight so the sum is 1 in T
    let head: T = weights[..atoms - 1].iter().copied().sum();
    weights[atoms - 1] = T::one() - head;
    MeasureSummary::new(points, domain.dim(), weights).expect("valid random measure")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub n_samples: usize,
    pub max_bound_observed: f64,
    pub max_lipschitz_ratio_observed: f64,
    pub bound_ok: bool,
    pub lipschitz_ok: bool,
}

impl AssumptionReport {
    pub fn passed(&self) -> bool {
        self.bound_ok && self.lipschitz_ok
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit() -> ConvexDomain<f64> {
        ConvexDomain::cube(1, 0.0, 1.0).unwrap()
    }

    #[test]
    fn measure_summary_moments() {
        let m = MeasureSummary::uniform(vec![0.0f64, 1.0], 1).unwrap();
        assert_eq!(m.weights(), &[0.5, 0.5]);
        assert_eq!(m.mean(), &[0.5]);
        assert!((m.covariance_trace() - 0.25).abs() < 1e-15);
        let c = MeasureSummary::uniform(vec![0.3; 4], 1).unwrap();
        assert_eq!(c.covariance_trace(), 0.0);
        assert!(MeasureSummary::new(vec![0.0, 1.0], 1, vec![0.5, 0.6]).is_err());
        assert!(MeasureSummary::new(vec![0.0, 1.0], 1, vec![1.5, -0.5]).is_err());
    }

    #[test]
    fn brownian_coefficients_are_constant() {
        let model = ModelSpec::from_kind(
            unit(),
            1.0,
            ModelKind::Brownian { sigma: 1.0 },
            InitialCondition::Uniform,
        )
        .unwrap();
        let mu = MeasureSummary::dirac(&[0.4]).unwrap();
        let (b, s) = model.eval_coefficients(0.3, &[0.7], &mu).unwrap();
        assert_eq!(b, vec![0.0]);
        assert_eq!(s, Matrix::scaled_identity(1, 1, 1.0));
    }

    #[test]
    fn mean_attraction_plugs_into_formula() {
        let d = ConvexDomain::new_ball(vec![0.0, 0.0], 2.0).unwrap();
        let model = ModelSpec::from_kind(
            d,
            1.0,
            ModelKind::MeanAttraction { theta: 1.0, sigma: 0.5 },
            InitialCondition::Uniform,
        )
        .unwrap();
        let mu = MeasureSummary::dirac(&[0.0, 0.0]).unwrap();
        let (b, _) = model.eval_coefficients(0.0, &[1.0, 0.0], &mu).unwrap();
        assert_eq!(b, vec![-1.0, 0.0]);
    }

    #[test]
    fn distribution_diffusion_degenerate_measure_gives_identity() {
        let model = ModelSpec::from_kind(
            unit(),
            1.0,
            ModelKind::DistributionDiffusion { theta: 0.0, s: 1.0, alpha: 1.0, clip: 2.0 },
            InitialCondition::Uniform,
        )
        .unwrap();
        let mu = MeasureSummary::dirac(&[0.6]).unwrap();
        let (_, s) = model.eval_coefficients(0.0, &[0.6], &mu).unwrap();
        assert_eq!(s.get(0, 0), 1.0);
        // spread measure increases the diffusion, clipped at 2
        let spread = MeasureSummary::uniform(vec![0.0, 1.0], 1).unwrap();
        let (_, s) = model.eval_coefficients(0.0, &[0.6], &spread).unwrap();
        assert!((s.get(0, 0) - 1.25).abs() < 1e-15);
    }

    #[test]
    fn evaluation_errors() {
        let blowup = FnCoefficients::new(
            "blowup",
            |_t, x: &[f64], _mu, out: &mut [f64]| out[0] = 1.0 / (1.0 - x[0]),
            |_t, _x, _mu, out: &mut Matrix<f64>| out.set_scaled_identity(0.0),
        );
        let model = ModelSpec::new(unit(), 1, 1.0, blowup, InitialCondition::Uniform)
            .unwrap()
            .with_constants(10.0, 1.0)
            .unwrap()
            .strict(true);
        let mu = MeasureSummary::dirac(&[0.5]).unwrap();
        match model.eval_coefficients(0.5, &[1.0], &mu) {
            Err(Error::Model { t, x, .. }) => {
                assert_eq!(t, 0.5);
                assert_eq!(x, vec![1.0]);
            }
            other => panic!("expected model error, got {other:?}"),
        }
        assert!(matches!(
            model.eval_coefficients(0.5, &[0.95], &mu),
            Err(Error::AssumptionViolation(_))
        ));
        assert!(model.eval_coefficients(0.5, &[0.5], &mu).is_ok());
        assert!(matches!(
            model.eval_coefficients(2.0, &[0.5], &mu),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn evaluation_is_deterministic() {
        let model = ModelSpec::from_kind(
            unit(),
            1.0,
            ModelKind::DistributionDiffusion { theta: 0.7, s: 0.8, alpha: 2.0, clip: 3.0 },
            InitialCondition::Uniform,
        )
        .unwrap();
        let mu = MeasureSummary::uniform(vec![0.1, 0.4, 0.9], 1).unwrap();
        let a = model.eval_coefficients(0.2, &[0.3], &mu).unwrap();
        let b = model.eval_coefficients(0.2, &[0.3], &mu).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn validate_constant_coefficients() {
        let model = ModelSpec::from_kind(
            unit(),
            1.0,
            ModelKind::Brownian { sigma: 1.0 },
            InitialCondition::Uniform,
        )
        .unwrap()
        .with_constants(2.0, 1.0)
        .unwrap();
        let r = model.validate_assumptions(200, 3).unwrap();
        assert!(r.passed());
        assert_eq!(r.max_bound_observed, 1.0);
        assert_eq!(r.max_lipschitz_ratio_observed, 0.0);
        assert_eq!(r, model.validate_assumptions(200, 3).unwrap());
    }

    #[test]
    fn validate_mean_attraction_lipschitz() {
        // |Δb| <= |Δx| + |Δmean| <= |Δx| + W1 = |Δx| + Π on a unit interval,
        // so the ratio never exceeds 1.
        let model = ModelSpec::from_kind(
            unit(),
            1.0,
            ModelKind::MeanAttraction { theta: 1.0, sigma: 0.0 },
            InitialCondition::Uniform,
        )
        .unwrap()
        .with_constants(2.0, 2.0)
        .unwrap();
        let r = model.validate_assumptions(10_000, 11).unwrap();
        assert!(r.passed());
        assert!(r.max_lipschitz_ratio_observed <= 1.0 + 1e-12);
        assert!(r.max_lipschitz_ratio_observed > 0.5);
    }

    #[test]
    fn validate_detects_unbounded_drift() {
        let blowup = FnCoefficients::new(
            "blowup",
            |_t, x: &[f64], _mu, out: &mut [f64]| out[0] = 1.0 / (1.0 - x[0]),
            |_t, _x, _mu, out: &mut Matrix<f64>| out.set_scaled_identity(0.0),
        );
        let model = ModelSpec::new(unit(), 1, 1.0, blowup, InitialCondition::Uniform)
            .unwrap()
            .with_constants(10.0, 1.0)
            .unwrap();
        let r = model.validate_assumptions(1000, 5).unwrap();
        assert!(!r.bound_ok);
        assert!(r.max_bound_observed > 10.0);
    }

    #[test]
    fn zoo_config_schema() {
        let k: ModelKind<f64> =
            serde_json::from_str(r#"{"model":"mean_attraction","theta":1.5,"sigma":0.2}"#).unwrap();
        assert_eq!(k, ModelKind::MeanAttraction { theta: 1.5, sigma: 0.2 });
        let k: ModelKind<f64> = serde_json::from_str(r#"{"model":"brownian"}"#).unwrap();
        assert_eq!(k, ModelKind::Brownian { sigma: 1.0 });
    }
}
