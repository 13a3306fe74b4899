//! Synchronous simulation of the interacting particle system, its
//! empirical measures and the mean-field reference flow.

use crate::controls::ControlPolicy;
use crate::error::{input, Error, Result};
use crate::integrator::{ReflectedPath, TimeGrid, Workspace};
use crate::measures::bl_distance;
use crate::model::{MeasureSummary, ModelSpec};
use crate::rng::{brownian_increments, StreamKey};
use crate::scalar::Scalar;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;

/// Default cap on `N · n_steps` for one ensemble.
pub const DEFAULT_MAX_PARTICLE_STEPS: u128 = 1 << 33;

/// Stream namespace of reference-flow runs, kept apart from the ensembles
/// they are compared with.
pub const REFERENCE_NAMESPACE: u64 = 1;
const PICARD_NAMESPACE: u64 = 2;

/// One measure per grid node.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasureFlow<T> {
    pub nodes: Vec<MeasureSummary<T>>,
}

impl<T: Scalar> MeasureFlow<T> {
    pub fn new(nodes: Vec<MeasureSummary<T>>) -> Result<Self> {
        if nodes.is_empty() {
            return input("a measure flow needs at least one node");
        }
        let d = nodes[0].dim();
        if nodes.iter().any(|m| m.dim() != d) {
            return input("measure flow mixes dimensions");
        }
        Ok(Self { nodes })
    }

    /// The same measure at every node of `grid`.
    pub fn constant(mu: MeasureSummary<T>, grid: &TimeGrid<T>) -> Self {
        Self {
            nodes: vec![mu; grid.n_steps + 1],
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn at(&self, k: usize) -> &MeasureSummary<T> {
        &self.nodes[k]
    }

    pub fn terminal(&self) -> &MeasureSummary<T> {
        self.nodes.last().expect("flow is nonempty")
    }

    pub fn as_slice(&self) -> &[MeasureSummary<T>] {
        &self.nodes
    }

    /// `sup_k Π(self(t_k), other(t_k))`.
    pub fn sup_distance(&self, other: &Self) -> Result<T> {
        self.node_distances(other)
            .map(|v| v.into_iter().fold(T::zero(), T::max))
    }

    /// `Π(self(t_k), other(t_k))` for every node.
    pub fn node_distances(&self, other: &Self) -> Result<Vec<T>> {
        if self.len() != other.len() {
            return input("flows live on different grids");
        }
        self.nodes
            .iter()
            .zip(&other.nodes)
            .map(|(a, b)| bl_distance(a, b).map(|e| e.value))
            .collect()
    }
}

/// Knobs of one particle-system run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimOptions {
    pub seed: u64,
    pub replica: u64,
    pub namespace: u64,
    /// Test hook: replace every Brownian increment by zero.
    pub zero_noise: bool,
    pub max_particle_steps: u128,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            replica: 0,
            namespace: 0,
            zero_noise: false,
            max_particle_steps: DEFAULT_MAX_PARTICLE_STEPS,
        }
    }
}

impl SimOptions {
    pub fn seeded(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    pub fn replica(mut self, replica: u64) -> Self {
        self.replica = replica;
        self
    }

    pub fn namespace(mut self, namespace: u64) -> Self {
        self.namespace = namespace;
        self
    }

    pub fn zero_noise(mut self, on: bool) -> Self {
        self.zero_noise = on;
        self
    }

    pub fn budget(mut self, max_particle_steps: u128) -> Self {
        self.max_particle_steps = max_particle_steps;
        self
    }

    pub(crate) fn key(&self, n: usize, i: usize) -> StreamKey {
        StreamKey::particle(self.seed, n, self.replica, i).with_namespace(self.namespace)
    }
}

/// `N` reflected paths together with the noise that drove them and the
/// control values that were applied.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble<T> {
    pub model_id: String,
    pub policy_id: String,
    pub grid: TimeGrid<T>,
    pub paths: Vec<ReflectedPath<T>>,
    /// Per particle, `n_steps` Brownian increments of dimension `d1`.
    pub noises: Vec<Vec<T>>,
    /// Per particle, the control value `h(t_k)` applied on each cell.
    pub controls: Vec<Vec<T>>,
    pub noise_dim: usize,
    pub seed: u64,
    pub replica: u64,
    /// Whether the initial states were given explicitly rather than sampled.
    pub deterministic_init: bool,
}

impl<T: Scalar> Ensemble<T> {
    pub fn n_particles(&self) -> usize {
        self.paths.len()
    }

    pub fn dim(&self) -> usize {
        self.paths[0].dim()
    }

    /// States of all particles at node `k`, row-major.
    pub fn states_at(&self, k: usize) -> Vec<T> {
        let mut out = Vec::with_capacity(self.n_particles() * self.dim());
        for p in &self.paths {
            out.extend_from_slice(p.state(k));
        }
        out
    }

    /// `μ^N(t_k)`: weight `1/N` on every particle.
    pub fn empirical_measure_at(&self, k: usize) -> Result<MeasureSummary<T>> {
        if k > self.grid.n_steps {
            return input(format!("node {k} is past the end of the grid"));
        }
        MeasureSummary::uniform(self.states_at(k), self.dim())
    }

    /// `μ^N(t)` for a time that must coincide with a grid node.
    pub fn empirical_measure_at_time(&self, t: T) -> Result<MeasureSummary<T>> {
        match self.grid.index_of(t) {
            Some(k) => self.empirical_measure_at(k),
            None => input(format!("t = {t} is not a grid node")),
        }
    }

    pub fn marginal_flow(&self) -> MeasureFlow<T> {
        let nodes = (0..=self.grid.n_steps)
            .map(|k| self.empirical_measure_at(k).expect("states are finite"))
            .collect();
        MeasureFlow { nodes }
    }

    /// `w(t_k)` of particle `i`, `k = 0..=n`, row-major.
    pub fn brownian_path(&self, i: usize) -> Vec<T> {
        let d1 = self.noise_dim;
        let mut out = vec![T::zero(); d1];
        for step in self.noises[i].chunks_exact(d1) {
            let base = out.len() - d1;
            for j in 0..d1 {
                let v = out[base + j] + step[j];
                out.push(v);
            }
        }
        out
    }

    /// One row per particle per node: `replica, i, k, t, x_0.., abs_k`.
    pub fn write_csv<W: Write>(&self, writer: &mut csv::Writer<W>, header: bool) -> Result<()> {
        let d = self.dim();
        if header {
            let mut head = vec!["replica".to_string(), "i".into(), "k".into(), "t".into()];
            head.extend((0..d).map(|j| format!("x{j}")));
            head.push("abs_k".into());
            writer.write_record(&head)?;
        }
        for (i, p) in self.paths.iter().enumerate() {
            for k in 0..=self.grid.n_steps {
                let mut row = vec![
                    self.replica.to_string(),
                    i.to_string(),
                    k.to_string(),
                    self.grid.node(k).to_string(),
                ];
                row.extend(p.state(k).iter().map(|v| v.to_string()));
                row.push(p.local_time[k].to_string());
                writer.write_record(&row)?;
            }
        }
        Ok(())
    }
}

enum Environment<'a, T> {
    Empirical,
    Frozen(&'a [MeasureSummary<T>]),
}

/// Simulates the `N`-particle system on `grid`, optionally under a control
/// policy. The measure felt by every particle during step `k` is the
/// empirical measure of the states at `t_k`.
pub fn simulate_particle_system<T: Scalar>(
    model: &ModelSpec<T>,
    n: usize,
    grid: &TimeGrid<T>,
    policy: Option<&ControlPolicy<T>>,
    opts: &SimOptions,
) -> Result<Ensemble<T>> {
    run_system(model, n, grid, policy, opts, Environment::Empirical)
}

/// `N` independent paths whose coefficients see the given flow instead of
/// their own empirical measure.
pub fn simulate_in_flow<T: Scalar>(
    model: &ModelSpec<T>,
    n: usize,
    grid: &TimeGrid<T>,
    flow: &MeasureFlow<T>,
    policy: Option<&ControlPolicy<T>>,
    opts: &SimOptions,
) -> Result<Ensemble<T>> {
    if flow.len() != grid.n_steps + 1 {
        return input("flow does not match the grid");
    }
    run_system(model, n, grid, policy, opts, Environment::Frozen(flow.as_slice()))
}

fn run_system<T: Scalar>(
    model: &ModelSpec<T>,
    n: usize,
    grid: &TimeGrid<T>,
    policy: Option<&ControlPolicy<T>>,
    opts: &SimOptions,
    env: Environment<'_, T>,
) -> Result<Ensemble<T>> {
    if n == 0 {
        return input("at least one particle is required");
    }
    let horizon = model.horizon.as_f64();
    if (grid.horizon.as_f64() - horizon).abs() > 1e-12 * horizon.max(1.0) {
        return input("grid horizon differs from the model horizon");
    }
    let requested = n as u128 * grid.n_steps as u128;
    if requested > opts.max_particle_steps {
        return Err(Error::Budget {
            requested,
            limit: opts.max_particle_steps,
        });
    }
    let d = model.dim();
    let d1 = model.noise_dim;
    let zero = ControlPolicy::Zero;
    let policy = policy.unwrap_or(&zero);
    policy.validate(d, d1)?;
    let dt = grid.dt();
    let steps = grid.n_steps;

    let starts: Vec<Vec<T>> = (0..n)
        .into_par_iter()
        .map(|i| model.init.position(&model.domain, n, i, opts.key(n, i)))
        .collect::<Result<_>>()?;
    for x in &starts {
        if x.len() != d || !model.domain.contains(x)?.in_closure() {
            return Err(Error::Precondition("initial state outside the domain".into()));
        }
    }
    let noises: Vec<Vec<T>> = (0..n)
        .into_par_iter()
        .map(|i| {
            if opts.zero_noise {
                vec![T::zero(); steps * d1]
            } else {
                brownian_increments(opts.key(n, i), steps, d1, dt)
            }
        })
        .collect();
    let mut paths: Vec<ReflectedPath<T>> =
        starts.iter().map(|x| ReflectedPath::start(x, steps)).collect();
    let mut controls: Vec<Vec<T>> = (0..n).map(|_| Vec::with_capacity(steps * d1)).collect();

    let mut snapshot = Vec::with_capacity(n * d);
    for k in 0..steps {
        let t = grid.node(k);
        let owned;
        let mu: &MeasureSummary<T> = match env {
            Environment::Empirical => {
                snapshot.clear();
                for p in &paths {
                    snapshot.extend_from_slice(p.state(k));
                }
                owned = MeasureSummary::uniform(snapshot.clone(), d)?;
                &owned
            }
            Environment::Frozen(flow) => &flow[k],
        };
        let mean = mu.mean();
        paths
            .par_iter_mut()
            .zip(controls.par_iter_mut())
            .zip(noises.par_iter())
            .enumerate()
            .with_min_len(64)
            .try_for_each_init(
                || (Workspace::new(d, d1), vec![T::zero(); d], vec![T::zero(); d1], Vec::new()),
                |(ws, x, h, scratch), (i, ((path, ctrl), noise))| -> Result<()> {
                    x.copy_from_slice(path.state(k));
                    policy.evaluate(grid, k, i, x, mean, scratch, h);
                    if !h.iter().all(|v| v.is_finite()) {
                        return Err(Error::Model {
                            t: t.as_f64(),
                            x: x.iter().map(|v| v.as_f64()).collect(),
                            msg: "non-finite control value".into(),
                        });
                    }
                    ws.step(model, t, x, mu, h, &noise[k * d1..(k + 1) * d1], dt)?;
                    path.push(&ws.outcome);
                    ctrl.extend_from_slice(h);
                    Ok(())
                },
            )?;
    }

    Ok(Ensemble {
        model_id: model.id().to_string(),
        policy_id: policy.id().to_string(),
        grid: *grid,
        paths,
        noises,
        controls,
        noise_dim: d1,
        seed: opts.seed,
        replica: opts.replica,
        deterministic_init: model.init.is_deterministic(),
    })
}

/// How the mean-field reference flow is computed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ReferenceMethod {
    /// Marginal flow of one large particle system.
    LargeN { n_ref: usize, seed: u64 },
    /// Fixed-point iteration of the flow map `ν ↦ Law(X^ν)`, each law
    /// approximated by `n_inner` independent paths on common noise.
    Picard {
        n_iter: usize,
        n_inner: usize,
        seed: u64,
        tol: f64,
    },
}

impl ReferenceMethod {
    pub const DEFAULT_N_REF: usize = 4096;
    pub const DEFAULT_PICARD_TOL: f64 = 5e-3;

    pub fn large_n(seed: u64) -> Self {
        ReferenceMethod::LargeN {
            n_ref: Self::DEFAULT_N_REF,
            seed,
        }
    }

    pub fn picard(n_iter: usize, n_inner: usize, seed: u64) -> Self {
        ReferenceMethod::Picard {
            n_iter,
            n_inner,
            seed,
            tol: Self::DEFAULT_PICARD_TOL,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSolution<T> {
    pub flow: MeasureFlow<T>,
    /// `distances[m] = sup_k Π(ν^(m+1)(t_k), ν^(m)(t_k))`; empty for `LargeN`.
    pub distances: Vec<f64>,
    pub converged: bool,
    /// Set when the Picard distances grew three times in a row.
    pub failure: Option<String>,
}

pub fn solve_mckean_vlasov_reference<T: Scalar>(
    model: &ModelSpec<T>,
    grid: &TimeGrid<T>,
    method: ReferenceMethod,
) -> Result<ReferenceSolution<T>> {
    match method {
        ReferenceMethod::LargeN { n_ref, seed } => {
            if n_ref < 1024 {
                return input("large-N reference needs at least 1024 particles");
            }
            let opts = SimOptions::seeded(seed).namespace(REFERENCE_NAMESPACE);
            let ens = simulate_particle_system(model, n_ref, grid, None, &opts)?;
            Ok(ReferenceSolution {
                flow: ens.marginal_flow(),
                distances: Vec::new(),
                converged: true,
                failure: None,
            })
        }
        ReferenceMethod::Picard {
            n_iter,
            n_inner,
            seed,
            tol,
        } => {
            if n_iter == 0 || n_inner == 0 {
                return input("Picard iteration needs n_iter >= 1 and n_inner >= 1");
            }
            let opts = SimOptions::seeded(seed).namespace(PICARD_NAMESPACE);
            let d = model.dim();
            let starts: Vec<T> = (0..n_inner)
                .map(|i| model.init.position(&model.domain, n_inner, i, opts.key(n_inner, i)))
                .collect::<Result<Vec<_>>>()?
                .concat();
            let mut flow = MeasureFlow::constant(MeasureSummary::uniform(starts, d)?, grid);
            let mut distances = Vec::new();
            let mut rising = 0;
            for _ in 0..n_iter {
                let next = simulate_in_flow(model, n_inner, grid, &flow, None, &opts)?.marginal_flow();
                let dist = next.sup_distance(&flow)?.as_f64();
                if distances.last().is_some_and(|&prev: &f64| dist > prev) {
                    rising += 1;
                } else {
                    rising = 0;
                }
                distances.push(dist);
                flow = next;
                if dist < tol {
                    return Ok(ReferenceSolution {
                        flow,
                        distances,
                        converged: true,
                        failure: None,
                    });
                }
                if rising >= 3 {
                    return Ok(ReferenceSolution {
                        flow,
                        distances,
                        converged: false,
                        failure: Some("Picard distances increased three consecutive times".into()),
                    });
                }
            }
            Ok(ReferenceSolution {
                flow,
                distances,
                converged: false,
                failure: None,
            })
        }
    }
}

/// Distances `Π(μ^N(T), ν(T))` per population size and replica.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChaosRow {
    pub n: usize,
    pub distances: Vec<f64>,
    pub median: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChaosReport {
    pub rows: Vec<ChaosRow>,
    /// Medians strictly decrease with `N`.
    pub decreasing: bool,
}

/// Compares terminal empirical measures of `replicas` independent systems
/// for every `N` in `populations` against the terminal law of `reference`.
pub fn propagation_of_chaos<T: Scalar>(
    model: &ModelSpec<T>,
    grid: &TimeGrid<T>,
    populations: &[usize],
    replicas: usize,
    reference: &MeasureFlow<T>,
    seed: u64,
) -> Result<ChaosReport> {
    if replicas == 0 {
        return input("at least one replica is required");
    }
    let target = reference.terminal();
    let mut rows = Vec::new();
    for &n in populations {
        let distances = (0..replicas as u64)
            .into_par_iter()
            .map(|r| {
                let ens = simulate_particle_system(model, n, grid, None, &SimOptions::seeded(seed).replica(r))?;
                let mu = ens.empirical_measure_at(grid.n_steps)?;
                Ok(bl_distance(&mu, target)?.value.as_f64())
            })
            .collect::<Result<Vec<f64>>>()?;
        let median = median(&distances);
        rows.push(ChaosRow { n, distances, median });
    }
    let decreasing = rows.windows(2).all(|w| w[1].median < w[0].median);
    Ok(ChaosReport { rows, decreasing })
}

pub(crate) fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
