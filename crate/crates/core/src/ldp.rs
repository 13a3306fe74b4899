//! Monte Carlo estimators around the Laplace principle: the Laplace
//! functional, the variational (control) representation, control
//! optimisation and penalised upper estimates of the rate function.

use crate::controls::{ensemble_cost, ControlPolicy, PolicyFamily};
use crate::ensemble::{simulate_particle_system, MeasureFlow, SimOptions, DEFAULT_MAX_PARTICLE_STEPS};
use crate::error::{input, Error, Result};
use crate::integrator::TimeGrid;
use crate::linalg::distance;
use crate::measures::bl_distance;
use crate::model::{MeasureSummary, ModelSpec};
use crate::optim::{minimize, NelderMeadOptions};
use crate::scalar::Scalar;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::sync::Arc;

type FlowMap<T> = dyn Fn(&MeasureFlow<T>) -> Result<T> + Send + Sync;

/// Bounded function of a measure flow.
#[derive(Clone)]
pub struct Functional<T> {
    id: String,
    f_max: T,
    eval: Arc<FlowMap<T>>,
}

impl<T> fmt::Debug for Functional<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Functional").field("id", &self.id).finish_non_exhaustive()
    }
}

impl<T: Scalar> Functional<T> {
    /// `f_max` is the declared bound on `|F|`.
    pub fn new(
        id: impl Into<String>,
        f_max: T,
        eval: impl Fn(&MeasureFlow<T>) -> Result<T> + Send + Sync + 'static,
    ) -> Self {
        Self {
            id: id.into(),
            f_max,
            eval: Arc::new(eval),
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn f_max(&self) -> T {
        self.f_max
    }

    pub fn evaluate(&self, flow: &MeasureFlow<T>) -> Result<T> {
        let v = (self.eval)(flow)?;
        if !v.is_finite() {
            return Err(Error::Precondition(format!("functional {} returned {v}", self.id)));
        }
        Ok(v)
    }

    pub fn constant(c: T) -> Self {
        Self::new("constant", c.abs(), move |_| Ok(c))
    }

    /// `g(mean of coordinate j at T)`.
    pub fn of_terminal_mean(
        id: impl Into<String>,
        coordinate: usize,
        f_max: T,
        g: impl Fn(T) -> T + Send + Sync + 'static,
    ) -> Self {
        Self::new(id, f_max, move |flow| {
            let mean = flow.terminal().mean();
            match mean.get(coordinate) {
                Some(&m) => Ok(g(m)),
                None => input(format!("coordinate {coordinate} out of range")),
            }
        })
    }

    /// Mean of coordinate `j` at `T`, clipped to `[lo, hi]`.
    pub fn terminal_mean(coordinate: usize, lo: T, hi: T) -> Self {
        Self::of_terminal_mean("terminal_mean", coordinate, lo.abs().max(hi.abs()), move |m| m.max(lo).min(hi))
    }

    /// `λ · distance(flow, target)`.
    pub fn penalty(lambda: T, target: Arc<Target<T>>) -> Self {
        let f_max = lambda * target.max_distance();
        Self::new(format!("penalty[{}]", target.describe()), f_max, move |flow| {
            Ok(lambda * target.distance(flow)?)
        })
    }
}

/// Config form of the built-in functionals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "functional", rename_all = "snake_case")]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
pub enum FunctionalSpec<T> {
    Constant {
        value: T,
    },
    TerminalMean {
        #[serde(default)]
        coordinate: usize,
        lo: T,
        hi: T,
    },
    /// `λ |mean(μ(T)) - target|`.
    TerminalMeanPenalty {
        lambda: T,
        target: Vec<T>,
    },
}

impl<T: Scalar> FunctionalSpec<T> {
    pub fn build(&self, domain_diameter: T) -> Result<Functional<T>> {
        match self {
            FunctionalSpec::Constant { value } if value.is_finite() => Ok(Functional::constant(*value)),
            FunctionalSpec::TerminalMean { coordinate, lo, hi } if lo <= hi => {
                Ok(Functional::terminal_mean(*coordinate, *lo, *hi))
            }
            FunctionalSpec::TerminalMeanPenalty { lambda, target } if *lambda >= T::zero() => Ok(Functional::penalty(
                *lambda,
                Arc::new(Target::TerminalMean {
                    mean: target.clone(),
                    diameter: domain_diameter,
                }),
            )),
            _ => input("functional parameters are out of range"),
        }
    }
}

/// What a controlled flow is steered towards.
#[derive(Debug, Clone, PartialEq)]
pub enum Target<T> {
    /// Average over nodes of `Π(μ(t_k), ν(t_k))`.
    Flow(MeasureFlow<T>),
    /// `Π(μ(T), ν)`.
    Terminal(MeasureSummary<T>),
    /// `|mean(μ(T)) - mean|`; `diameter` bounds the distance.
    TerminalMean { mean: Vec<T>, diameter: T },
}

impl<T: Scalar> Target<T> {
    pub fn distance(&self, flow: &MeasureFlow<T>) -> Result<T> {
        match self {
            Target::Flow(target) => {
                let d = flow.node_distances(target)?;
                Ok(d.iter().copied().sum::<T>() / T::from_usize_lossy(d.len()))
            }
            Target::Terminal(nu) => Ok(bl_distance(flow.terminal(), nu)?.value),
            Target::TerminalMean { mean, .. } => {
                let m = flow.terminal().mean();
                if m.len() != mean.len() {
                    return input("target mean has the wrong dimension");
                }
                Ok(distance(m, mean))
            }
        }
    }

    pub fn max_distance(&self) -> T {
        match self {
            Target::Flow(_) | Target::Terminal(_) => T::lit(2.0),
            Target::TerminalMean { diameter, .. } => *diameter,
        }
    }

    pub fn describe(&self) -> String {
        match self {
            Target::Flow(f) => format!("flow with {} nodes", f.len()),
            Target::Terminal(_) => "terminal measure".into(),
            Target::TerminalMean { mean, .. } => {
                format!("terminal mean {:?}", mean.iter().map(|v| v.as_f64()).collect::<Vec<_>>())
            }
        }
    }
}

/// Size and seeding of a Monte Carlo estimate: `replicas` independent
/// `n_particles`-systems, replica `r` using substream `r` of `seed`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McConfig<T> {
    pub n_particles: usize,
    pub grid: TimeGrid<T>,
    pub replicas: usize,
    pub seed: u64,
    /// Cap on `N · M · n_steps`.
    pub max_particle_steps: u128,
}

impl<T: Scalar> McConfig<T> {
    pub fn new(n_particles: usize, grid: TimeGrid<T>, replicas: usize, seed: u64) -> Self {
        Self {
            n_particles,
            grid,
            replicas,
            seed,
            max_particle_steps: DEFAULT_MAX_PARTICLE_STEPS,
        }
    }

    fn check(&self) -> Result<()> {
        if self.replicas < 2 {
            return input("at least two replicas are required");
        }
        if self.n_particles == 0 {
            return input("at least one particle is required");
        }
        let requested = self.n_particles as u128 * self.replicas as u128 * self.grid.n_steps as u128;
        if requested > self.max_particle_steps {
            return Err(Error::Budget {
                requested,
                limit: self.max_particle_steps,
            });
        }
        Ok(())
    }
}

/// Per replica: control cost and functional value.
fn replica_values<T: Scalar>(
    model: &ModelSpec<T>,
    f: &Functional<T>,
    policy: Option<&ControlPolicy<T>>,
    cfg: &McConfig<T>,
) -> Result<Vec<(f64, f64)>> {
    cfg.check()?;
    (0..cfg.replicas as u64)
        .into_par_iter()
        .map(|r| {
            let opts = SimOptions::seeded(cfg.seed).replica(r);
            let ens = simulate_particle_system(model, cfg.n_particles, &cfg.grid, policy, &opts)?;
            let value = f.evaluate(&ens.marginal_flow())?;
            Ok((ensemble_cost(&ens).as_f64(), value.as_f64()))
        })
        .collect()
}

/// Mean computed around the first sample, so equal samples give that sample
/// back exactly.
fn shifted_mean(xs: &[f64]) -> f64 {
    let x0 = xs[0];
    x0 + xs.iter().map(|x| x - x0).sum::<f64>() / xs.len() as f64
}

fn std_error(xs: &[f64]) -> f64 {
    let m = shifted_mean(xs);
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
    (var / xs.len() as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaplaceEstimate {
    /// `-(1/N) log mean_m exp(-N F_m)`.
    pub value: f64,
    pub std_error: f64,
    pub n_particles: usize,
    pub replicas: usize,
    pub effective_sample_size: f64,
    /// Set when the effective sample size is below 1% of the replicas.
    pub log_sum_exp_guard: bool,
}

/// Estimates `-(1/N) log E exp(-N F(μ^N))` from `M` uncontrolled systems.
pub fn laplace_functional_mc<T: Scalar>(
    model: &ModelSpec<T>,
    f: &Functional<T>,
    cfg: &McConfig<T>,
) -> Result<LaplaceEstimate> {
    let values: Vec<f64> = replica_values(model, f, None, cfg)?.into_iter().map(|v| v.1).collect();
    Ok(laplace_from_values(&values, cfg.n_particles))
}

pub(crate) fn laplace_from_values(values: &[f64], n: usize) -> LaplaceEstimate {
    let m = values.len();
    let nf = n as f64;
    let f_min = values.iter().copied().fold(f64::INFINITY, f64::min);
    // exp(-N (F - F_min)) lies in (0, 1], with at least one term equal to 1.
    let weights: Vec<f64> = values.iter().map(|&v| (-nf * (v - f_min)).exp()).collect();
    let sum: f64 = weights.iter().sum();
    let mean = sum / m as f64;
    let value = f_min - mean.ln() / nf;
    let var = weights.iter().map(|w| (w - mean).powi(2)).sum::<f64>() / (m - 1) as f64;
    let std_error = (var / m as f64).sqrt() / (nf * mean);
    let ess = sum * sum / weights.iter().map(|w| w * w).sum::<f64>();
    LaplaceEstimate {
        value,
        std_error,
        n_particles: n,
        replicas: m,
        effective_sample_size: ess,
        log_sum_exp_guard: ess < 0.01 * m as f64,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariationalEstimate {
    /// `cost_part + f_part`.
    pub objective: f64,
    pub cost_part: f64,
    pub f_part: f64,
    /// Standard error of the objective (per-replica sums).
    pub std_error: f64,
    pub cost_std_error: f64,
    pub f_std_error: f64,
    pub n_particles: usize,
    pub replicas: usize,
    pub policy_id: String,
}

/// `E[(1/2N) Σ_i ∫ |h_i|² dt] + E[F(μ̄^N)]` under `policy`, on the same
/// substreams as [`laplace_functional_mc`] with the same config.
pub fn variational_objective<T: Scalar>(
    model: &ModelSpec<T>,
    f: &Functional<T>,
    policy: &ControlPolicy<T>,
    cfg: &McConfig<T>,
) -> Result<VariationalEstimate> {
    let values = replica_values(model, f, Some(policy), cfg)?;
    let costs: Vec<f64> = values.iter().map(|v| v.0).collect();
    let fs: Vec<f64> = values.iter().map(|v| v.1).collect();
    let totals: Vec<f64> = values.iter().map(|v| v.0 + v.1).collect();
    let cost_part = shifted_mean(&costs);
    let f_part = shifted_mean(&fs);
    Ok(VariationalEstimate {
        objective: cost_part + f_part,
        cost_part,
        f_part,
        std_error: std_error(&totals),
        cost_std_error: std_error(&costs),
        f_std_error: std_error(&fs),
        n_particles: cfg.n_particles,
        replicas: cfg.replicas,
        policy_id: policy.id().to_string(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizeOptions {
    /// Objective evaluations allowed, at least `dim θ + 2`.
    pub budget: usize,
    pub initial_step: f64,
    pub restarts: usize,
}

impl Default for OptimizeOptions {
    fn default() -> Self {
        Self {
            budget: 60,
            initial_step: 0.5,
            restarts: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlOptimization<T> {
    pub theta: Vec<f64>,
    pub policy: ControlPolicy<T>,
    pub estimate: VariationalEstimate,
    /// Best objective after each evaluation; nonincreasing.
    pub trace: Vec<f64>,
    pub evaluations: usize,
    /// The budget ran out before the search converged.
    pub budget_exhausted: bool,
}

/// Minimises the variational objective over a policy family by restarted
/// simplex search. Every evaluation uses the same substreams, and `θ = 0`
/// (the zero control) is evaluated first.
pub fn optimize_controls<T: Scalar>(
    model: &ModelSpec<T>,
    f: &Functional<T>,
    family: &PolicyFamily<T>,
    cfg: &McConfig<T>,
    opts: &OptimizeOptions,
) -> Result<ControlOptimization<T>> {
    let dim = family.dim();
    if opts.budget < dim + 2 {
        return input(format!("optimizer budget must be at least {}", dim + 2));
    }
    let bound = family.bound().as_f64();
    let mut best: Option<(f64, Vec<f64>, VariationalEstimate)> = None;
    let objective = |theta: &[f64]| -> Result<f64> {
        let t: Vec<T> = theta.iter().map(|&v| T::lit(v)).collect();
        let est = variational_objective(model, f, &family.build(&t)?, cfg)?;
        let v = est.objective;
        if best.as_ref().is_none_or(|b| v < b.0) {
            best = Some((v, theta.to_vec(), est));
        }
        Ok(v)
    };
    let nm = NelderMeadOptions {
        initial_step: opts.initial_step.min(bound.max(f64::MIN_POSITIVE)),
        max_evals: opts.budget,
        restarts: opts.restarts,
        ..NelderMeadOptions::default()
    };
    let result = minimize(objective, &vec![0.0; dim], &vec![-bound; dim], &vec![bound; dim], &nm)?;
    let (_, theta, estimate) = best.expect("at least one evaluation");
    let t: Vec<T> = theta.iter().map(|&v| T::lit(v)).collect();
    Ok(ControlOptimization {
        policy: family.build(&t)?,
        theta,
        estimate,
        trace: result.trace,
        evaluations: result.evaluations,
        budget_exhausted: result.budget_exhausted,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateCandidate {
    /// Penalty weight; zero for the uncontrolled candidate.
    pub lambda: f64,
    pub theta: Vec<f64>,
    pub cost: f64,
    /// Mean over replicas of the distance to the target.
    pub distance: f64,
    pub distance_std_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateEstimate {
    pub target: String,
    pub radius: f64,
    pub candidates: Vec<RateCandidate>,
    pub feasible: bool,
    /// Index into `candidates` of the reported point.
    pub chosen: Option<usize>,
    /// Cheapest control reaching the radius: an upper estimate of the rate
    /// of the radius-neighbourhood, since the control family is restricted.
    pub upper_bound: Option<f64>,
    /// Cost at the largest penalty weight that reaches the radius.
    pub largest_lambda_cost: Option<f64>,
    pub report: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateOptions {
    /// Neighbourhood radius around the target.
    pub radius: f64,
    pub optimizer: OptimizeOptions,
    /// Extra penalty weights tried between the last infeasible and the
    /// first feasible weight of the schedule (geometric bisection).
    pub bisection_steps: usize,
}

impl Default for RateOptions {
    fn default() -> Self {
        Self {
            radius: 0.05,
            optimizer: OptimizeOptions::default(),
            bisection_steps: 4,
        }
    }
}

/// Upper estimate of the rate function on a neighbourhood of `target`.
///
/// For each penalty weight `λ` in `schedule` the controls minimising
/// `cost + λ · distance` are found; every candidate whose mean distance is
/// within the radius certifies its cost. The zero control is always a
/// candidate.
pub fn estimate_rate<T: Scalar>(
    model: &ModelSpec<T>,
    target: Target<T>,
    schedule: &[f64],
    family: &PolicyFamily<T>,
    cfg: &McConfig<T>,
    opts: &RateOptions,
) -> Result<RateEstimate> {
    if schedule.is_empty() || schedule.iter().any(|&l| !(l > 0.0 && l.is_finite())) {
        return input("penalty schedule must hold positive finite weights");
    }
    if schedule.windows(2).any(|w| w[1] <= w[0]) {
        return input("penalty schedule must be strictly increasing");
    }
    if !(opts.radius > 0.0) {
        return input("radius must be positive");
    }
    let target = Arc::new(target);
    let unit = Functional::penalty(T::one(), target.clone());
    let zero = variational_objective(model, &unit, &ControlPolicy::Zero, cfg)?;
    let mut candidates = vec![RateCandidate {
        lambda: 0.0,
        theta: vec![0.0; family.dim()],
        cost: 0.0,
        distance: zero.f_part,
        distance_std_error: zero.f_std_error,
    }];
    let run = |lambda: f64| -> Result<RateCandidate> {
        let f = Functional::penalty(T::lit(lambda), target.clone());
        let opt = optimize_controls(model, &f, family, cfg, &opts.optimizer)?;
        Ok(RateCandidate {
            lambda,
            theta: opt.theta,
            cost: opt.estimate.cost_part,
            distance: opt.estimate.f_part / lambda,
            distance_std_error: opt.estimate.f_std_error / lambda,
        })
    };
    for &lambda in schedule {
        candidates.push(run(lambda)?);
    }
    let feasible = |c: &RateCandidate| c.distance <= opts.radius;
    if let Some(first) = candidates[1..].iter().position(feasible).map(|i| i + 1) {
        if first > 1 {
            let (mut lo, mut hi) = (candidates[first - 1].lambda, candidates[first].lambda);
            for _ in 0..opts.bisection_steps {
                let mid = (lo * hi).sqrt();
                let c = run(mid)?;
                if feasible(&c) {
                    hi = mid;
                } else {
                    lo = mid;
                }
                candidates.push(c);
            }
        }
    }
    let chosen = candidates
        .iter()
        .enumerate()
        .filter(|(_, c)| feasible(c))
        .min_by(|a, b| a.1.cost.total_cmp(&b.1.cost).then(a.1.lambda.total_cmp(&b.1.lambda)))
        .map(|(i, _)| i);
    let largest = candidates
        .iter()
        .filter(|c| c.lambda > 0.0 && feasible(c))
        .max_by(|a, b| a.lambda.total_cmp(&b.lambda))
        .map(|c| c.cost);
    let report = chosen.is_none().then(|| {
        let closest = candidates.iter().map(|c| c.distance).fold(f64::INFINITY, f64::min);
        format!(
            "no candidate reached radius {} (closest mean distance {closest}); the rate on this neighbourhood is treated as infinite",
            opts.radius
        )
    });
    Ok(RateEstimate {
        target: target.describe(),
        radius: opts.radius,
        feasible: chosen.is_some(),
        upper_bound: chosen.map(|i| candidates[i].cost),
        chosen,
        largest_lambda_cost: largest,
        candidates,
        report,
    })
}
