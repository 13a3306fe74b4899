//! Submartingale diagnostics: test functions with analytic derivatives, the
//! controlled generator, the process `M_f` along simulated triples
//! `(φ, h, w)` and a one-sided statistical test of its submartingale
//! property.

use crate::controls::ControlPolicy;
use crate::ensemble::{simulate_particle_system, Ensemble, MeasureFlow, SimOptions};
use crate::integrator::TimeGrid;
use crate::error::{input, Error, Result};
use crate::geometry::{ConvexDomain, Shape};
use crate::linalg::{all_finite, Matrix};
use crate::model::{MeasureSummary, ModelSpec};
use crate::rng::{Purpose, StreamKey};
use crate::scalar::Scalar;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

/// First and second derivatives of `f(t, x, z)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Partials<T> {
    pub f_t: T,
    pub grad_x: Vec<T>,
    pub grad_z: Vec<T>,
    /// `d × d`.
    pub xx: Matrix<T>,
    /// `d × d1`.
    pub xz: Matrix<T>,
    /// `d1 × d1`.
    pub zz: Matrix<T>,
}

impl<T: Scalar> Partials<T> {
    pub fn zeros(d: usize, d1: usize) -> Self {
        Self {
            f_t: T::zero(),
            grad_x: vec![T::zero(); d],
            grad_z: vec![T::zero(); d1],
            xx: Matrix::zeros(d, d),
            xz: Matrix::zeros(d, d1),
            zz: Matrix::zeros(d1, d1),
        }
    }

    fn clear(&mut self) {
        self.f_t = T::zero();
        self.grad_x.iter_mut().for_each(|v| *v = T::zero());
        self.grad_z.iter_mut().for_each(|v| *v = T::zero());
        self.xx.as_mut_slice().iter_mut().for_each(|v| *v = T::zero());
        self.xz.as_mut_slice().iter_mut().for_each(|v| *v = T::zero());
        self.zz.as_mut_slice().iter_mut().for_each(|v| *v = T::zero());
    }

    fn is_finite(&self) -> bool {
        self.f_t.is_finite()
            && all_finite(&self.grad_x)
            && all_finite(&self.grad_z)
            && self.xx.is_finite()
            && self.xz.is_finite()
            && self.zz.is_finite()
    }
}

/// `f ∈ C^{1,2,2}` on `[0, T] × D̄ × R^{d1}` with analytic derivatives.
pub trait TestFunction<T: Scalar>: Send + Sync {
    fn id(&self) -> String;
    fn value(&self, t: T, x: &[T], z: &[T]) -> T;
    /// Writes all derivatives into `out`, which is sized `(d, d1)`.
    fn partials(&self, t: T, x: &[T], z: &[T], out: &mut Partials<T>);
    /// Whether `f` is bounded on `[0, T] × D̄ × R^{d1}`.
    fn bounded(&self) -> bool;
}

/// Registered test functions. Indices are zero-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "test_function", rename_all = "snake_case")]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
pub enum TestFunctionKind<T> {
    Constant { value: T },
    /// `f = t`.
    Time,
    /// `f = x_i`.
    Coordinate { index: usize },
    /// `f = x_i²`.
    Square { index: usize },
    /// `f = -x_i²`.
    NegSquare { index: usize },
    /// `f = -|x|²`.
    NegNormSquare,
    /// `f = z_j`.
    Noise { index: usize },
    /// `f = ⟨c, z⟩`.
    NoiseLinear { coefficients: Vec<T> },
    /// `f = x_i z_j`.
    CoordinateTimesNoise { x_index: usize, z_index: usize },
    /// `f = (1 - |x - c|²/ρ²)⁴` inside the ball, zero outside.
    Bump { center: Vec<T>, radius: T },
    /// `f = sin(t + Σx) cos(Σz) + x_0² z_0`.
    Mixed,
}

impl<T: Scalar> TestFunctionKind<T> {
    /// Every registered function, instantiated for dimension `(d, d1)` and
    /// a domain centred at `centre` with inscribed radius `inner`.
    pub fn registry(d: usize, d1: usize, centre: &[T], inner: T) -> Vec<Self> {
        let mut out = vec![
            TestFunctionKind::Constant { value: T::lit(0.7) },
            TestFunctionKind::Time,
            TestFunctionKind::Coordinate { index: 0 },
            TestFunctionKind::Square { index: 0 },
            TestFunctionKind::NegSquare { index: 0 },
            TestFunctionKind::NegNormSquare,
            TestFunctionKind::Noise { index: 0 },
            TestFunctionKind::NoiseLinear {
                coefficients: (0..d1).map(|j| T::lit(1.0 - 0.5 * j as f64)).collect(),
            },
            TestFunctionKind::CoordinateTimesNoise { x_index: 0, z_index: 0 },
            TestFunctionKind::Bump {
                center: centre.to_vec(),
                radius: inner * T::lit(0.8),
            },
            TestFunctionKind::Mixed,
        ];
        if d > 1 {
            out.push(TestFunctionKind::Coordinate { index: d - 1 });
        }
        if d1 > 1 {
            out.push(TestFunctionKind::CoordinateTimesNoise {
                x_index: d - 1,
                z_index: d1 - 1,
            });
        }
        out
    }

    /// Checks indices against `(d, d1)`.
    pub fn validate(&self, d: usize, d1: usize) -> Result<()> {
        let ok = match self {
            TestFunctionKind::Coordinate { index }
            | TestFunctionKind::Square { index }
            | TestFunctionKind::NegSquare { index } => *index < d,
            TestFunctionKind::Noise { index } => *index < d1,
            TestFunctionKind::NoiseLinear { coefficients } => coefficients.len() == d1,
            TestFunctionKind::CoordinateTimesNoise { x_index, z_index } => *x_index < d && *z_index < d1,
            TestFunctionKind::Bump { center, radius } => center.len() == d && *radius > T::zero(),
            _ => true,
        };
        if ok {
            Ok(())
        } else {
            input(format!("test function {} does not fit dimensions ({d}, {d1})", self.id()))
        }
    }
}

fn bump_profile<T: Scalar>(s: T) -> (T, T, T) {
    if s >= T::one() {
        return (T::zero(), T::zero(), T::zero());
    }
    let u = T::one() - s;
    (u.powi(4), -T::lit(4.0) * u.powi(3), T::lit(12.0) * u * u)
}

impl<T: Scalar> TestFunction<T> for TestFunctionKind<T> {
    fn id(&self) -> String {
        match self {
            TestFunctionKind::Constant { .. } => "constant".into(),
            TestFunctionKind::Time => "time".into(),
            TestFunctionKind::Coordinate { index } => format!("x{index}"),
            TestFunctionKind::Square { index } => format!("x{index}_sq"),
            TestFunctionKind::NegSquare { index } => format!("neg_x{index}_sq"),
            TestFunctionKind::NegNormSquare => "neg_norm_sq".into(),
            TestFunctionKind::Noise { index } => format!("z{index}"),
            TestFunctionKind::NoiseLinear { .. } => "noise_linear".into(),
            TestFunctionKind::CoordinateTimesNoise { x_index, z_index } => format!("x{x_index}_z{z_index}"),
            TestFunctionKind::Bump { .. } => "bump".into(),
            TestFunctionKind::Mixed => "mixed".into(),
        }
    }

    fn value(&self, t: T, x: &[T], z: &[T]) -> T {
        match self {
            TestFunctionKind::Constant { value } => *value,
            TestFunctionKind::Time => t,
            TestFunctionKind::Coordinate { index } => x[*index],
            TestFunctionKind::Square { index } => x[*index] * x[*index],
            TestFunctionKind::NegSquare { index } => -x[*index] * x[*index],
            TestFunctionKind::NegNormSquare => -x.iter().map(|&v| v * v).sum::<T>(),
            TestFunctionKind::Noise { index } => z[*index],
            TestFunctionKind::NoiseLinear { coefficients } => coefficients.iter().zip(z).map(|(&c, &v)| c * v).sum(),
            TestFunctionKind::CoordinateTimesNoise { x_index, z_index } => x[*x_index] * z[*z_index],
            TestFunctionKind::Bump { center, radius } => {
                let s = x.iter().zip(center).map(|(&a, &c)| (a - c) * (a - c)).sum::<T>() / (*radius * *radius);
                bump_profile(s).0
            }
            TestFunctionKind::Mixed => {
                let u = t + x.iter().copied().sum::<T>();
                let v = z.iter().copied().sum::<T>();
                u.sin() * v.cos() + x[0] * x[0] * z[0]
            }
        }
    }

    fn partials(&self, t: T, x: &[T], z: &[T], out: &mut Partials<T>) {
        out.clear();
        let two = T::lit(2.0);
        match self {
            TestFunctionKind::Constant { .. } => {}
            TestFunctionKind::Time => out.f_t = T::one(),
            TestFunctionKind::Coordinate { index } => out.grad_x[*index] = T::one(),
            TestFunctionKind::Square { index } => {
                out.grad_x[*index] = two * x[*index];
                out.xx.set(*index, *index, two);
            }
            TestFunctionKind::NegSquare { index } => {
                out.grad_x[*index] = -two * x[*index];
                out.xx.set(*index, *index, -two);
            }
            TestFunctionKind::NegNormSquare => {
                for (i, &v) in x.iter().enumerate() {
                    out.grad_x[i] = -two * v;
                    out.xx.set(i, i, -two);
                }
            }
            TestFunctionKind::Noise { index } => out.grad_z[*index] = T::one(),
            TestFunctionKind::NoiseLinear { coefficients } => out.grad_z.copy_from_slice(coefficients),
            TestFunctionKind::CoordinateTimesNoise { x_index, z_index } => {
                out.grad_x[*x_index] = z[*z_index];
                out.grad_z[*z_index] = x[*x_index];
                out.xz.set(*x_index, *z_index, T::one());
            }
            TestFunctionKind::Bump { center, radius } => {
                let r2 = *radius * *radius;
                let s = x.iter().zip(center).map(|(&a, &c)| (a - c) * (a - c)).sum::<T>() / r2;
                let (_, g1, g2) = bump_profile(s);
                for i in 0..x.len() {
                    let di = x[i] - center[i];
                    out.grad_x[i] = g1 * two * di / r2;
                    for k in 0..x.len() {
                        let dk = x[k] - center[k];
                        let mut h = g2 * T::lit(4.0) * di * dk / (r2 * r2);
                        if i == k {
                            h += g1 * two / r2;
                        }
                        out.xx.set(i, k, h);
                    }
                }
            }
            TestFunctionKind::Mixed => {
                let u = t + x.iter().copied().sum::<T>();
                let v = z.iter().copied().sum::<T>();
                let (su, cu, sv, cv) = (u.sin(), u.cos(), v.sin(), v.cos());
                out.f_t = cu * cv;
                for i in 0..x.len() {
                    out.grad_x[i] = cu * cv;
                    for k in 0..x.len() {
                        out.xx.set(i, k, -su * cv);
                    }
                    for j in 0..z.len() {
                        out.xz.set(i, j, -cu * sv);
                    }
                }
                for j in 0..z.len() {
                    out.grad_z[j] = -su * sv;
                    for l in 0..z.len() {
                        out.zz.set(j, l, -su * cv);
                    }
                }
                out.grad_x[0] += two * x[0] * z[0];
                out.grad_z[0] += x[0] * x[0];
                let h = out.xx.get(0, 0) + two * z[0];
                out.xx.set(0, 0, h);
                let h = out.xz.get(0, 0) + two * x[0];
                out.xz.set(0, 0, h);
            }
        }
    }

    fn bounded(&self) -> bool {
        !matches!(
            self,
            TestFunctionKind::Noise { .. }
                | TestFunctionKind::NoiseLinear { .. }
                | TestFunctionKind::CoordinateTimesNoise { .. }
                | TestFunctionKind::Mixed
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryCheck {
    pub passed: bool,
    /// `max ⟨∇_x f, n(x)⟩` over the samples.
    pub worst_value: f64,
    /// `(t, x, z)` attaining the worst value.
    pub worst_point: (f64, Vec<f64>, Vec<f64>),
}

/// Tolerance of the boundary condition `⟨∇_x f, n⟩ ≤ 0`.
pub const BOUNDARY_TOLERANCE: f64 = 1e-10;

/// Random point of `∂D`. Box faces are chosen uniformly.
fn boundary_point<T: Scalar, R: Rng>(domain: &ConvexDomain<T>, rng: &mut R) -> Vec<T> {
    match domain.shape() {
        Shape::Box { lo, hi } => {
            let d = lo.len();
            let mut x: Vec<T> = lo
                .iter()
                .zip(hi)
                .map(|(&l, &h)| l + (h - l) * T::lit(rng.random::<f64>()))
                .collect();
            let face = rng.random_range(0..2 * d);
            x[face / 2] = if face % 2 == 0 { lo[face / 2] } else { hi[face / 2] };
            x
        }
        Shape::Ball { center, radius } => loop {
            let v: Vec<f64> = center.iter().map(|_| StandardNormal.sample(rng)).collect();
            let len = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            if len > 1e-12 {
                break center
                    .iter()
                    .zip(&v)
                    .map(|(&c, &a)| c + *radius * T::lit(a / len))
                    .collect();
            }
        },
    }
}

/// Samples `(t, x ∈ ∂D, z)` with `t` uniform on `[0, T]` and `z ~ N(0, T I)`
/// and reports the largest `⟨∇_x f, n(x)⟩`.
pub fn boundary_condition_check<T: Scalar>(
    f: &dyn TestFunction<T>,
    domain: &ConvexDomain<T>,
    noise_dim: usize,
    horizon: T,
    n_samples: usize,
    seed: u64,
) -> Result<BoundaryCheck> {
    if n_samples == 0 {
        return input("at least one boundary sample is required");
    }
    let d = domain.dim();
    let mut rng = StreamKey::new(seed, Purpose::BoundarySampling).rng();
    let mut partials = Partials::zeros(d, noise_dim);
    let mut worst = f64::NEG_INFINITY;
    let mut worst_point = (0.0, Vec::new(), Vec::new());
    let scale = horizon.as_f64().sqrt();
    for _ in 0..n_samples {
        let t = horizon * T::lit(rng.random::<f64>());
        let x = boundary_point(domain, &mut rng);
        let z: Vec<T> = (0..noise_dim)
            .map(|_| {
                let g: f64 = StandardNormal.sample(&mut rng);
                T::lit(scale * g)
            })
            .collect();
        f.partials(t, &x, &z, &mut partials);
        let n = domain.normal_unchecked(&x);
        let v: f64 = partials.grad_x.iter().zip(&n).map(|(&g, &m)| (g * m).as_f64()).sum();
        if v > worst {
            worst = v;
            worst_point = (
                t.as_f64(),
                x.iter().map(|v| v.as_f64()).collect(),
                z.iter().map(|v| v.as_f64()).collect(),
            );
        }
    }
    Ok(BoundaryCheck {
        passed: worst <= BOUNDARY_TOLERANCE,
        worst_value: worst,
        worst_point,
    })
}

/// Applies the generator with control value `y` and noise coordinate `z`:
/// `⟨b + σy, ∇_x f⟩ + ½ Σ (σσᵀ)_ij f_{x_i x_j} + Σ σ_ij f_{x_i z_j} + ½ Σ f_{z_i z_i}`.
pub fn generator_apply<T: Scalar>(
    model: &ModelSpec<T>,
    f: &dyn TestFunction<T>,
    t: T,
    x: &[T],
    y: &[T],
    z: &[T],
    nu: &MeasureSummary<T>,
) -> Result<T> {
    if y.len() != model.noise_dim || z.len() != model.noise_dim {
        return input("control and noise arguments must have the noise dimension");
    }
    let (b, sigma) = model.eval_coefficients(t, x, nu)?;
    let mut p = Partials::zeros(model.dim(), model.noise_dim);
    f.partials(t, x, z, &mut p);
    if !p.is_finite() {
        return Err(Error::Model {
            t: t.as_f64(),
            x: x.iter().map(|v| v.as_f64()).collect(),
            msg: format!("non-finite partial derivatives of {}", f.id()),
        });
    }
    let mut control = vec![T::zero(); model.dim()];
    sigma.mul_vec_into(y, &mut control);
    Ok(generator_terms(&b, &sigma, &control, &p))
}

fn generator_terms<T: Scalar>(b: &[T], sigma: &Matrix<T>, control: &[T], p: &Partials<T>) -> T {
    let half = T::lit(0.5);
    let (d, d1) = (sigma.rows(), sigma.cols());
    let mut total = T::zero();
    for i in 0..d {
        total += (b[i] + control[i]) * p.grad_x[i];
        for k in 0..d {
            total += half * sigma.gram(i, k) * p.xx.get(i, k);
        }
        for j in 0..d1 {
            total += sigma.get(i, j) * p.xz.get(i, j);
        }
    }
    for j in 0..d1 {
        total += half * p.zz.get(j, j);
    }
    total
}

/// `M_f(t_k)` along particle `i` of `ens`, with the coefficients seeing the
/// supplied flow and integrals taken as left Riemann sums.
pub fn mf_process<T: Scalar>(
    model: &ModelSpec<T>,
    f: &dyn TestFunction<T>,
    ens: &Ensemble<T>,
    i: usize,
    flow: &MeasureFlow<T>,
) -> Result<Vec<T>> {
    let n = ens.grid.n_steps;
    if flow.len() != n + 1 {
        return input("flow and ensemble live on different grids");
    }
    if i >= ens.n_particles() {
        return input(format!("particle {i} out of range"));
    }
    if ens.dim() != model.dim() || ens.noise_dim != model.noise_dim {
        return input("ensemble does not match the model dimensions");
    }
    let (d, d1) = (model.dim(), model.noise_dim);
    let path = &ens.paths[i];
    let w = ens.brownian_path(i);
    let h = &ens.controls[i];
    let dt = ens.grid.dt();
    let mut b = vec![T::zero(); d];
    let mut sigma = Matrix::zeros(d, d1);
    let mut control = vec![T::zero(); d];
    let mut p = Partials::zeros(d, d1);
    let f0 = f.value(T::zero(), path.state(0), &w[..d1]);
    let mut integral = T::zero();
    let mut out = Vec::with_capacity(n + 1);
    out.push(T::zero());
    for k in 0..n {
        let t = ens.grid.node(k);
        let (x, z) = (path.state(k), &w[k * d1..(k + 1) * d1]);
        model.eval_into(t, x, flow.at(k), &mut b, &mut sigma);
        f.partials(t, x, z, &mut p);
        if !p.is_finite() || !all_finite(&b) || !sigma.is_finite() {
            return Err(Error::Model {
                t: t.as_f64(),
                x: x.iter().map(|v| v.as_f64()).collect(),
                msg: "non-finite value in M_f".into(),
            });
        }
        sigma.mul_vec_into(&h[k * d1..(k + 1) * d1], &mut control);
        integral += (p.f_t + generator_terms(&b, &sigma, &control, &p)) * dt;
        let t1 = ens.grid.node(k + 1);
        out.push(f.value(t1, path.state(k + 1), &w[(k + 1) * d1..(k + 2) * d1]) - f0 - integral);
    }
    Ok(out)
}

/// Nonnegative bounded weight `Ψ(φ(t0), w(t0))`: the constant one or
/// `clamp(a + ⟨u, x - centre⟩ + ⟨v, z⟩, 0, 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Weight {
    pub offset: f64,
    pub x_slope: Vec<f64>,
    pub z_slope: Vec<f64>,
    pub centre: Vec<f64>,
}

impl Weight {
    pub fn eval<T: Scalar>(&self, x: &[T], z: &[T]) -> f64 {
        if self.x_slope.is_empty() && self.z_slope.is_empty() {
            return self.offset;
        }
        let mut v = self.offset;
        for ((s, &xi), c) in self.x_slope.iter().zip(x).zip(&self.centre) {
            v += s * (xi.as_f64() - c);
        }
        for (s, &zi) in self.z_slope.iter().zip(z) {
            v += s * zi.as_f64();
        }
        v.clamp(0.0, 1.0)
    }
}

/// Seeded weight dictionary of `size` functions, the first being `Ψ ≡ 1`.
pub fn weight_dictionary<T: Scalar>(domain: &ConvexDomain<T>, noise_dim: usize, size: usize, seed: u64) -> Vec<Weight> {
    let mut rng = StreamKey::new(seed, Purpose::Weights).rng();
    let centre: Vec<f64> = domain.centre().iter().map(|v| v.as_f64()).collect();
    let scale = 1.0 / domain.diameter().as_f64().max(1e-12);
    let mut out = vec![Weight {
        offset: 1.0,
        x_slope: Vec::new(),
        z_slope: Vec::new(),
        centre: centre.clone(),
    }];
    while out.len() < size.max(1) {
        out.push(Weight {
            offset: rng.random_range(0.25..0.75),
            x_slope: centre.iter().map(|_| rng.random_range(-2.0..2.0) * scale).collect(),
            z_slope: (0..noise_dim).map(|_| rng.random_range(-0.5..0.5)).collect(),
            centre: centre.clone(),
        });
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubmartingaleOptions {
    /// One-sided confidence level, e.g. 0.95.
    pub confidence: f64,
    /// Bias allowance per unit step: the threshold includes `c_bias · Δt`.
    pub c_bias: f64,
    pub weights: usize,
    pub seed: u64,
    pub boundary_samples: usize,
    /// Test hook: run the test on a function that fails the boundary check.
    pub skip_boundary_check: bool,
}

impl Default for SubmartingaleOptions {
    fn default() -> Self {
        Self {
            confidence: 0.95,
            c_bias: 0.0,
            weights: 8,
            seed: 0,
            boundary_samples: 1000,
            skip_boundary_check: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairStatistic {
    pub k0: usize,
    pub k1: usize,
    pub weight: usize,
    /// Mean of `Ψ · (M_f(t1) - M_f(t0))` over all paths.
    pub statistic: f64,
    pub std_error: f64,
    /// `statistic + z · SE`.
    pub upper_bound: f64,
    /// `-c_bias · Δt`.
    pub threshold: f64,
    pub rejected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmartingaleReport {
    pub function: String,
    pub n_paths: usize,
    pub dt: f64,
    /// Bonferroni-adjusted standard normal quantile.
    pub z: f64,
    pub statistics: Vec<PairStatistic>,
    /// No weighted increment is significantly below the bias allowance.
    pub passed: bool,
    /// Smallest `statistic + z · SE + c_bias · Δt`; negative means rejected.
    pub margin: f64,
}

/// One-sided test of `E[Ψ (M_f(t1) - M_f(t0))] ≥ 0` for every pair of node
/// indices and every weight in the dictionary, pooling all particles of
/// all ensembles. `flows` holds either one flow shared by every ensemble or
/// one flow per ensemble. A pair is rejected when the upper confidence bound of the
/// weighted increment falls below `-c_bias · Δt`.
pub fn submartingale_test<T: Scalar>(
    model: &ModelSpec<T>,
    ensembles: &[Ensemble<T>],
    flows: &[MeasureFlow<T>],
    f: &dyn TestFunction<T>,
    pairs: &[(usize, usize)],
    opts: &SubmartingaleOptions,
) -> Result<SubmartingaleReport> {
    if ensembles.is_empty() || pairs.is_empty() {
        return input("need at least one ensemble and one time pair");
    }
    if flows.len() != 1 && flows.len() != ensembles.len() {
        return input("supply one shared flow or one flow per ensemble");
    }
    if !(opts.confidence > 0.5 && opts.confidence < 1.0) {
        return input("confidence must lie in (0.5, 1)");
    }
    let grid = ensembles[0].grid;
    if ensembles.iter().any(|e| e.grid != grid) {
        return input("ensembles live on different grids");
    }
    for &(k0, k1) in pairs {
        if k0 >= k1 || k1 > grid.n_steps {
            return input(format!("time pair ({k0}, {k1}) must satisfy k0 < k1 <= n"));
        }
    }
    if !opts.skip_boundary_check {
        let check = boundary_condition_check(f, &model.domain, model.noise_dim, model.horizon, opts.boundary_samples, opts.seed)?;
        if !check.passed {
            return Err(Error::Precondition(format!(
                "test function {} violates the boundary condition (worst value {})",
                f.id(),
                check.worst_value
            )));
        }
    }
    let weights = weight_dictionary(&model.domain, model.noise_dim, opts.weights, opts.seed);
    let d1 = model.noise_dim;
    // Per path: per pair and weight, Ψ · ΔM.
    let rows: Vec<Vec<f64>> = ensembles
        .par_iter()
        .enumerate()
        .map(|(e, ens)| {
            let flow = &flows[e.min(flows.len() - 1)];
            (0..ens.n_particles())
                .into_par_iter()
                .map(|i| {
                    let m = mf_process(model, f, ens, i, flow)?;
                    let w = ens.brownian_path(i);
                    let mut row = Vec::with_capacity(pairs.len() * weights.len());
                    for &(k0, k1) in pairs {
                        let inc = (m[k1] - m[k0]).as_f64();
                        let (x, z) = (ens.paths[i].state(k0), &w[k0 * d1..(k0 + 1) * d1]);
                        row.extend(weights.iter().map(|psi| psi.eval(x, z) * inc));
                    }
                    Ok(row)
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    let n_paths = rows.len();
    if n_paths < 2 {
        return input("at least two paths are required");
    }
    let tests = pairs.len() * weights.len();
    let alpha = (1.0 - opts.confidence) / tests as f64;
    let z = Normal::new(0.0, 1.0).expect("standard normal").inverse_cdf(1.0 - alpha);
    let dt = grid.dt().as_f64();
    let threshold = -opts.c_bias * dt;
    let mut statistics = Vec::with_capacity(tests);
    for (pi, &(k0, k1)) in pairs.iter().enumerate() {
        for wi in 0..weights.len() {
            let col = pi * weights.len() + wi;
            let mean = rows.iter().map(|r| r[col]).sum::<f64>() / n_paths as f64;
            let var = rows.iter().map(|r| (r[col] - mean).powi(2)).sum::<f64>() / (n_paths - 1) as f64;
            let se = (var / n_paths as f64).sqrt();
            let upper = mean + z * se;
            statistics.push(PairStatistic {
                k0,
                k1,
                weight: wi,
                statistic: mean,
                std_error: se,
                upper_bound: upper,
                threshold,
                rejected: upper < threshold,
            });
        }
    }
    let margin = statistics
        .iter()
        .map(|s| s.upper_bound - s.threshold)
        .fold(f64::INFINITY, f64::min);
    Ok(SubmartingaleReport {
        function: f.id(),
        n_paths,
        dt,
        z,
        passed: statistics.iter().all(|s| !s.rejected),
        statistics,
        margin,
    })
}

/// Regression slope through the origin of the negative part of unweighted
/// statistics against the step size: `c = Σ Δt (-s)⁺ / Σ Δt²`.
pub fn fit_bias(samples: &[(f64, f64)]) -> f64 {
    let num: f64 = samples.iter().map(|&(dt, s)| dt * (-s).max(0.0)).sum();
    let den: f64 = samples.iter().map(|&(dt, _)| dt * dt).sum();
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasCalibration {
    /// `(Δt, mean M_f(T))` at `Δt ∈ {4h, 2h, h}`.
    pub samples: Vec<(f64, f64)>,
    pub c_bias: f64,
}

/// Estimates the discretisation bias of `M_f(T)` for a function known to
/// give a submartingale, by simulating at `4h`, `2h` and `h` where `h` is
/// the step of `grid`, and fitting the negative part linearly in `Δt`.
pub fn calibrate_bias<T: Scalar>(
    model: &ModelSpec<T>,
    f: &dyn TestFunction<T>,
    n_particles: usize,
    replicas: usize,
    grid: &TimeGrid<T>,
    policy: Option<&ControlPolicy<T>>,
    seed: u64,
) -> Result<BiasCalibration> {
    if grid.n_steps % 4 != 0 {
        return input("bias calibration needs a step count divisible by 4");
    }
    if n_particles == 0 || replicas == 0 {
        return input("bias calibration needs particles and replicas");
    }
    let mut samples = Vec::with_capacity(3);
    for factor in [4, 2, 1] {
        let coarse = TimeGrid::new(grid.horizon, grid.n_steps / factor)?;
        let totals = (0..replicas as u64)
            .into_par_iter()
            .map(|r| {
                let opts = SimOptions::seeded(seed).replica(r);
                let ens = simulate_particle_system(model, n_particles, &coarse, policy, &opts)?;
                let flow = ens.marginal_flow();
                (0..n_particles)
                    .map(|i| Ok(mf_process(model, f, &ens, i, &flow)?[coarse.n_steps].as_f64()))
                    .sum::<Result<f64>>()
            })
            .collect::<Result<Vec<f64>>>()?;
        let mean = totals.iter().sum::<f64>() / (n_particles * replicas) as f64;
        samples.push((coarse.dt().as_f64(), mean));
    }
    Ok(BiasCalibration {
        c_bias: fit_bias(&samples),
        samples,
    })
}
