//! Scenario files: parsing, dispatch to the core routines, and persistence of
//! results together with a manifest of hashes.

use rldp_core::diagnostics::{calibrate_bias, submartingale_test, SubmartingaleOptions, TestFunctionKind};
use rldp_core::ensemble::DEFAULT_MAX_PARTICLE_STEPS;
use rldp_core::{
    estimate_rate, laplace_functional_mc, optimize_controls, propagation_of_chaos, simulate_particle_system,
    solve_mckean_vlasov_reference, variational_objective, ControlPolicy, ConvexDomain, Error, FunctionalSpec,
    InitialCondition, McConfig, ModelKind, ModelSpec, OptimizeOptions, PolicyFamily, RateOptions, ReferenceMethod,
    SimOptions, Target, TimeGrid,
};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use std::fs;
use std::path::{Path, PathBuf};

pub const SCHEMA_VERSION: u32 = 1;

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_FLAGGED: i32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunKind {
    Simulate,
    Chaos,
    Laplace,
    Variational,
    Rate,
    Submartingale,
}

impl RunKind {
    pub fn name(self) -> &'static str {
        match self {
            RunKind::Simulate => "simulate",
            RunKind::Chaos => "chaos",
            RunKind::Laplace => "laplace",
            RunKind::Variational => "variational",
            RunKind::Rate => "rate",
            RunKind::Submartingale => "submartingale",
        }
    }
}

/// How the mean-field reference flow is obtained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case", deny_unknown_fields)]
pub enum ReferenceConfig {
    LargeN {
        #[serde(default = "default_n_ref")]
        n_ref: usize,
    },
    Picard {
        n_iter: usize,
        n_inner: usize,
        #[serde(default = "default_picard_tol")]
        tol: f64,
    },
}

impl Default for ReferenceConfig {
    fn default() -> Self {
        ReferenceConfig::LargeN { n_ref: default_n_ref() }
    }
}

impl ReferenceConfig {
    fn method(&self, seed: u64) -> ReferenceMethod {
        match *self {
            ReferenceConfig::LargeN { n_ref } => ReferenceMethod::LargeN { n_ref, seed },
            ReferenceConfig::Picard { n_iter, n_inner, tol } => ReferenceMethod::Picard {
                n_iter,
                n_inner,
                seed,
                tol,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChaosConfig {
    #[serde(default = "default_populations")]
    pub populations: Vec<usize>,
    #[serde(default)]
    pub reference: ReferenceConfig,
}

impl Default for ChaosConfig {
    fn default() -> Self {
        Self {
            populations: default_populations(),
            reference: ReferenceConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub family: PolicyFamily<f64>,
    #[serde(default = "default_budget")]
    pub budget: usize,
    #[serde(default = "default_initial_step")]
    pub initial_step: f64,
    #[serde(default = "default_restarts")]
    pub restarts: usize,
}

impl OptimizerConfig {
    fn options(&self) -> OptimizeOptions {
        OptimizeOptions {
            budget: self.budget,
            initial_step: self.initial_step,
            restarts: self.restarts,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "target", rename_all = "snake_case", deny_unknown_fields)]
pub enum TargetConfig {
    /// Euclidean distance between terminal means.
    TerminalMean { mean: Vec<f64> },
    /// Node-averaged distance to the uncontrolled reference flow.
    ReferenceFlow {
        #[serde(default)]
        reference: ReferenceConfig,
    },
    /// Distance between terminal laws, against the reference.
    ReferenceTerminal {
        #[serde(default)]
        reference: ReferenceConfig,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateConfig {
    pub target: TargetConfig,
    pub schedule: Vec<f64>,
    #[serde(default = "default_radius")]
    pub radius: f64,
    #[serde(default = "default_bisection")]
    pub bisection_steps: usize,
    pub optimizer: OptimizerConfig,
}

// Unknown fields cannot be rejected here because of the flattened function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmartingaleConfig {
    #[serde(flatten)]
    pub test_function: TestFunctionKind<f64>,
    /// Node index pairs `(k0, k1)`; defaults to `(0, n)`.
    #[serde(default)]
    pub pairs: Vec<(usize, usize)>,
    #[serde(default = "default_confidence")]
    pub confidence: f64,
    /// Fixed bias allowance; ignored when `calibrate` is set.
    #[serde(default)]
    pub c_bias: f64,
    #[serde(default)]
    pub calibrate: bool,
    #[serde(default = "default_weights")]
    pub weights: usize,
    #[serde(default = "default_boundary_samples")]
    pub boundary_samples: usize,
    #[serde(default)]
    pub skip_boundary_check: bool,
}

/// One scenario file. Absent optional fields take the documented defaults;
/// the manifest stores the fully resolved form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub schema_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<RunKind>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub domain: ConvexDomain<f64>,
    pub model: ModelKind<f64>,
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    #[serde(default = "default_init")]
    pub init: InitialCondition<f64>,
    pub n_steps: usize,
    pub particles: usize,
    #[serde(default = "default_replicas")]
    pub replicas: usize,
    #[serde(default = "default_max_steps")]
    pub max_particle_steps: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub functional: Option<FunctionalSpec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy: Option<ControlPolicy<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optimizer: Option<OptimizerConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chaos: Option<ChaosConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate: Option<RateConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub submartingale: Option<SubmartingaleConfig>,
    /// Write the particle paths of `simulate` runs.
    #[serde(default = "yes")]
    pub write_paths: bool,
}

fn default_n_ref() -> usize {
    ReferenceMethod::DEFAULT_N_REF
}
fn default_picard_tol() -> f64 {
    ReferenceMethod::DEFAULT_PICARD_TOL
}
fn default_populations() -> Vec<usize> {
    vec![64, 256, 1024]
}
fn default_budget() -> usize {
    OptimizeOptions::default().budget
}
fn default_initial_step() -> f64 {
    OptimizeOptions::default().initial_step
}
fn default_restarts() -> usize {
    OptimizeOptions::default().restarts
}
fn default_radius() -> f64 {
    RateOptions::default().radius
}
fn default_bisection() -> usize {
    RateOptions::default().bisection_steps
}
fn default_confidence() -> f64 {
    0.95
}
fn default_weights() -> usize {
    8
}
fn default_boundary_samples() -> usize {
    1000
}
fn default_workers() -> usize {
    1
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("rldp-out")
}
fn default_horizon() -> f64 {
    1.0
}
fn default_init() -> InitialCondition<f64> {
    InitialCondition::Uniform
}
fn default_replicas() -> usize {
    2
}
fn default_max_steps() -> u64 {
    DEFAULT_MAX_PARTICLE_STEPS as u64
}
fn yes() -> bool {
    true
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub output_dir: Option<PathBuf>,
}

/// Failure of a scenario run, with the process exit code it maps to.
#[derive(Debug)]
pub struct ScenarioError {
    pub code: i32,
    pub kind: &'static str,
    pub message: String,
}

impl ScenarioError {
    fn config(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_CONFIG,
            kind: "config",
            message: message.into(),
        }
    }

    /// Machine-readable form printed by the binary.
    pub fn to_json(&self) -> Value {
        json!({ "error": { "kind": self.kind, "code": self.code, "message": self.message } })
    }
}

impl std::fmt::Display for ScenarioError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} error: {}", self.kind, self.message)
    }
}

impl std::error::Error for ScenarioError {}

impl From<Error> for ScenarioError {
    fn from(e: Error) -> Self {
        let (code, kind) = match &e {
            Error::Input(_) | Error::Config(_) | Error::Precondition(_) | Error::AssumptionViolation(_) => {
                (EXIT_CONFIG, "config")
            }
            Error::Json(_) => (EXIT_CONFIG, "config"),
            Error::Budget { .. } => (EXIT_FLAGGED, "budget"),
            Error::Model { .. } => (EXIT_RUNTIME, "model"),
            Error::Io(_) | Error::Csv(_) => (EXIT_RUNTIME, "io"),
        };
        Self {
            code,
            kind,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for ScenarioError {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e).into()
    }
}

impl From<csv::Error> for ScenarioError {
    fn from(e: csv::Error) -> Self {
        Error::Csv(e).into()
    }
}

/// Parses a scenario from JSON text.
pub fn parse_config(text: &str) -> Result<ScenarioConfig, ScenarioError> {
    serde_json::from_str(text).map_err(|e| ScenarioError::config(format!("invalid scenario file: {e}")))
}

impl ScenarioConfig {
    /// Applies the run kind and command-line overrides and fills the block
    /// the kind needs with its defaults.
    pub fn resolve(mut self, kind: RunKind, overrides: &Overrides) -> Result<Self, ScenarioError> {
        if let Some(file_kind) = self.kind {
            if file_kind != kind {
                return Err(ScenarioError::config(format!(
                    "scenario file is for '{}' but '{}' was requested",
                    file_kind.name(),
                    kind.name()
                )));
            }
        }
        self.kind = Some(kind);
        if let Some(seed) = overrides.seed {
            self.seed = seed;
        }
        if let Some(workers) = overrides.workers {
            self.workers = workers;
        }
        if let Some(dir) = &overrides.output_dir {
            self.output_dir = dir.clone();
        }
        if kind == RunKind::Chaos && self.chaos.is_none() {
            self.chaos = Some(ChaosConfig::default());
        }
        self.validate()?;
        Ok(self)
    }

    pub fn kind(&self) -> Result<RunKind, ScenarioError> {
        self.kind.ok_or_else(|| ScenarioError::config("run kind is not set"))
    }

    fn validate(&self) -> Result<(), ScenarioError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(ScenarioError::config(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.workers == 0 {
            return Err(ScenarioError::config("workers must be positive"));
        }
        if self.n_steps == 0 || self.particles == 0 || self.replicas == 0 {
            return Err(ScenarioError::config("n_steps, particles and replicas must be positive"));
        }
        if self.max_particle_steps == 0 {
            return Err(ScenarioError::config("max_particle_steps must be positive"));
        }
        let need = |present: bool, block: &str| {
            if present {
                Ok(())
            } else {
                Err(ScenarioError::config(format!("run kind '{}' needs a '{block}' block", self.kind.map_or("?", |k| k.name()))))
            }
        };
        match self.kind()? {
            RunKind::Simulate | RunKind::Chaos => Ok(()),
            RunKind::Laplace | RunKind::Variational => need(self.functional.is_some(), "functional"),
            RunKind::Rate => need(self.rate.is_some(), "rate"),
            RunKind::Submartingale => need(self.submartingale.is_some(), "submartingale"),
        }
    }

    pub fn model(&self) -> Result<ModelSpec<f64>, ScenarioError> {
        Ok(ModelSpec::from_kind(self.domain.clone(), self.horizon, self.model.clone(), self.init.clone())?)
    }

    pub fn grid(&self) -> Result<TimeGrid<f64>, ScenarioError> {
        Ok(TimeGrid::new(self.horizon, self.n_steps)?)
    }

    fn mc(&self) -> Result<McConfig<f64>, ScenarioError> {
        let mut cfg = McConfig::new(self.particles, self.grid()?, self.replicas, self.seed);
        cfg.max_particle_steps = self.max_particle_steps as u128;
        Ok(cfg)
    }

    fn sim_options(&self, replica: u64) -> SimOptions {
        SimOptions::seeded(self.seed)
            .replica(replica)
            .budget(self.max_particle_steps as u128)
    }
}

/// An artifact written by a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    pub file: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub exit_code: i32,
    pub output_dir: PathBuf,
    pub result: Value,
    pub artifacts: Vec<Artifact>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

struct Output {
    dir: PathBuf,
    artifacts: Vec<Artifact>,
}

impl Output {
    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), ScenarioError> {
        fs::write(self.dir.join(name), bytes)?;
        self.artifacts.push(Artifact {
            file: name.to_string(),
            sha256: sha256_hex(bytes),
        });
        Ok(())
    }

    fn write_csv(&mut self, name: &str, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<(), ScenarioError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(header)?;
        for row in rows {
            w.write_record(&row)?;
        }
        let bytes = w.into_inner().map_err(|e| ScenarioError::from(e.into_error()))?;
        self.write(name, &bytes)
    }
}

/// Result of one run kind before it is written: the JSON body and whether a
/// budget or guard flag was raised.
struct Computed {
    result: Value,
    flagged: bool,
}

/// Runs a resolved scenario inside a thread pool of `workers` threads and
/// writes `result.json`, the CSV tables and `manifest.json` into the output
/// directory.
pub fn run_scenario(config: &ScenarioConfig) -> Result<RunOutcome, ScenarioError> {
    let kind = config.kind()?;
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| ScenarioError::config(format!("cannot start {} workers: {e}", config.workers)))?;
    fs::create_dir_all(&config.output_dir)?;
    let mut out = Output {
        dir: config.output_dir.clone(),
        artifacts: Vec::new(),
    };
    let computed = pool.install(|| dispatch(kind, config, &mut out));
    let computed = match computed {
        Ok(c) => c,
        Err(e) if e.code == EXIT_FLAGGED => Computed {
            result: json!({
                "kind": kind.name(),
                "seed": config.seed,
                "budget_exceeded": true,
                "message": e.message,
            }),
            flagged: true,
        },
        Err(e) => return Err(e),
    };
    let result_bytes = to_pretty(&computed.result)?;
    out.write("result.json", &result_bytes)?;
    let config_value = serde_json::to_value(config).map_err(Error::from)?;
    let manifest = json!({
        "schema_version": SCHEMA_VERSION,
        "kind": kind.name(),
        "seed": config.seed,
        "config": config_value,
        "config_sha256": sha256_hex(&to_pretty(&config_value)?),
        "files": out.artifacts,
        "flagged": computed.flagged,
        "version": env!("CARGO_PKG_VERSION"),
    });
    fs::write(out.dir.join("manifest.json"), to_pretty(&manifest)?)?;
    Ok(RunOutcome {
        exit_code: if computed.flagged { EXIT_FLAGGED } else { EXIT_OK },
        output_dir: out.dir,
        result: computed.result,
        artifacts: out.artifacts,
    })
}

/// Reads, resolves and runs a scenario file.
pub fn run_file(path: &Path, kind: RunKind, overrides: &Overrides) -> Result<RunOutcome, ScenarioError> {
    let text = fs::read_to_string(path)
        .map_err(|e| ScenarioError::config(format!("cannot read {}: {e}", path.display())))?;
    let config = parse_config(&text)?.resolve(kind, overrides)?;
    run_scenario(&config)
}

fn to_pretty<T: Serialize>(v: &T) -> Result<Vec<u8>, ScenarioError> {
    let mut bytes = serde_json::to_vec_pretty(v).map_err(Error::from)?;
    bytes.push(b'\n');
    Ok(bytes)
}

fn value<T: Serialize>(v: &T) -> Result<Value, ScenarioError> {
    Ok(serde_json::to_value(v).map_err(Error::from)?)
}

fn dispatch(kind: RunKind, config: &ScenarioConfig, out: &mut Output) -> Result<Computed, ScenarioError> {
    let model = config.model()?;
    let grid = config.grid()?;
    let header = json!({
        "kind": kind.name(),
        "seed": config.seed,
        "model": model.id(),
        "n_particles": config.particles,
        "n_steps": config.n_steps,
        "replicas": config.replicas,
    });
    let mut computed = match kind {
        RunKind::Simulate => run_simulate(config, &model, &grid, out)?,
        RunKind::Chaos => run_chaos(config, &model, &grid, out)?,
        RunKind::Laplace => {
            let f = functional(config, &model)?;
            let est = laplace_functional_mc(&model, &f, &config.mc()?)?;
            Computed {
                flagged: est.log_sum_exp_guard,
                result: json!({ "functional": f.id(), "estimate": value(&est)? }),
            }
        }
        RunKind::Variational => run_variational(config, &model, out)?,
        RunKind::Rate => run_rate(config, &model, &grid, out)?,
        RunKind::Submartingale => run_submartingale(config, &model, &grid, out)?,
    };
    if let (Value::Object(h), Value::Object(r)) = (header, &mut computed.result) {
        for (k, v) in h {
            r.entry(k).or_insert(v);
        }
    }
    Ok(computed)
}

fn functional(config: &ScenarioConfig, model: &ModelSpec<f64>) -> Result<rldp_core::Functional<f64>, ScenarioError> {
    let spec = config
        .functional
        .as_ref()
        .ok_or_else(|| ScenarioError::config("missing 'functional' block"))?;
    Ok(spec.build(model.domain.diameter())?)
}

fn policy(config: &ScenarioConfig, model: &ModelSpec<f64>) -> Result<Option<ControlPolicy<f64>>, ScenarioError> {
    match &config.policy {
        None => Ok(None),
        Some(p) => {
            p.validate(model.dim(), model.noise_dim)?;
            Ok(Some(p.clone()))
        }
    }
}

fn run_simulate(config: &ScenarioConfig, model: &ModelSpec<f64>, grid: &TimeGrid<f64>, out: &mut Output) -> Result<Computed, ScenarioError> {
    let policy = policy(config, model)?;
    let mut csv = csv::Writer::from_writer(Vec::new());
    let mut replicas = Vec::with_capacity(config.replicas);
    for r in 0..config.replicas as u64 {
        let ens = simulate_particle_system(model, config.particles, grid, policy.as_ref(), &config.sim_options(r))?;
        if config.write_paths {
            ens.write_csv(&mut csv, r == 0)?;
        }
        let terminal = ens.empirical_measure_at(grid.n_steps)?;
        let local: Vec<f64> = ens.paths.iter().map(|p| p.local_time[grid.n_steps]).collect();
        replicas.push(json!({
            "replica": r,
            "terminal_mean": terminal.mean(),
            "terminal_covariance_trace": terminal.covariance_trace(),
            "mean_local_time": local.iter().sum::<f64>() / local.len() as f64,
            "max_local_time": local.iter().copied().fold(0.0, f64::max),
            "control_cost": rldp_core::ensemble_cost(&ens),
        }));
    }
    if config.write_paths {
        let bytes = csv.into_inner().map_err(|e| ScenarioError::from(e.into_error()))?;
        out.write("paths.csv", &bytes)?;
    }
    Ok(Computed {
        flagged: false,
        result: json!({
            "policy": policy.as_ref().map_or("zero", |p| p.id()),
            "replica_summaries": replicas,
        }),
    })
}

fn run_chaos(config: &ScenarioConfig, model: &ModelSpec<f64>, grid: &TimeGrid<f64>, out: &mut Output) -> Result<Computed, ScenarioError> {
    let chaos = config.chaos.clone().unwrap_or_default();
    let reference = solve_mckean_vlasov_reference(model, grid, chaos.reference.method(config.seed))?;
    let report = propagation_of_chaos(model, grid, &chaos.populations, config.replicas, &reference.flow, config.seed)?;
    out.write_csv(
        "distances.csv",
        &["n", "replica", "distance", "method"],
        report.rows.iter().flat_map(|row| {
            row.distances.iter().enumerate().map(move |(r, d)| {
                let method = if model.dim() == 1 { "exact_1d" } else { "dictionary" };
                vec![row.n.to_string(), r.to_string(), d.to_string(), method.to_string()]
            })
        }),
    )?;
    Ok(Computed {
        flagged: false,
        result: json!({
            "report": value(&report)?,
            "reference": {
                "converged": reference.converged,
                "picard_distances": reference.distances,
                "failure": reference.failure,
            },
        }),
    })
}

fn run_variational(config: &ScenarioConfig, model: &ModelSpec<f64>, out: &mut Output) -> Result<Computed, ScenarioError> {
    let f = functional(config, model)?;
    let mc = config.mc()?;
    if let Some(opt) = &config.optimizer {
        let res = optimize_controls(model, &f, &opt.family, &mc, &opt.options())?;
        out.write_csv(
            "trace.csv",
            &["evaluation", "best_objective"],
            res.trace.iter().enumerate().map(|(i, v)| vec![(i + 1).to_string(), v.to_string()]),
        )?;
        return Ok(Computed {
            flagged: false,
            result: json!({
                "functional": f.id(),
                "estimate": value(&res.estimate)?,
                "theta": res.theta,
                "policy": value(&res.policy)?,
                "evaluations": res.evaluations,
                "optimizer_budget_exhausted": res.budget_exhausted,
            }),
        });
    }
    let policy = policy(config, model)?.unwrap_or(ControlPolicy::Zero);
    let est = variational_objective(model, &f, &policy, &mc)?;
    Ok(Computed {
        flagged: false,
        result: json!({ "functional": f.id(), "estimate": value(&est)?, "policy": value(&policy)? }),
    })
}

fn run_rate(config: &ScenarioConfig, model: &ModelSpec<f64>, grid: &TimeGrid<f64>, out: &mut Output) -> Result<Computed, ScenarioError> {
    let rate = config.rate.as_ref().ok_or_else(|| ScenarioError::config("missing 'rate' block"))?;
    let target = match &rate.target {
        TargetConfig::TerminalMean { mean } => Target::TerminalMean {
            mean: mean.clone(),
            diameter: model.domain.diameter(),
        },
        TargetConfig::ReferenceFlow { reference } => {
            Target::Flow(solve_mckean_vlasov_reference(model, grid, reference.method(config.seed))?.flow)
        }
        TargetConfig::ReferenceTerminal { reference } => Target::Terminal(
            solve_mckean_vlasov_reference(model, grid, reference.method(config.seed))?
                .flow
                .terminal()
                .clone(),
        ),
    };
    let opts = RateOptions {
        radius: rate.radius,
        optimizer: rate.optimizer.options(),
        bisection_steps: rate.bisection_steps,
    };
    let est = estimate_rate(model, target, &rate.schedule, &rate.optimizer.family, &config.mc()?, &opts)?;
    out.write_csv(
        "candidates.csv",
        &["lambda", "cost", "distance", "distance_std_error", "theta"],
        est.candidates.iter().map(|c| {
            let theta: Vec<String> = c.theta.iter().map(|v| v.to_string()).collect();
            vec![
                c.lambda.to_string(),
                c.cost.to_string(),
                c.distance.to_string(),
                c.distance_std_error.to_string(),
                theta.join(" "),
            ]
        }),
    )?;
    Ok(Computed {
        flagged: false,
        result: json!({ "estimate": value(&est)? }),
    })
}

fn run_submartingale(config: &ScenarioConfig, model: &ModelSpec<f64>, grid: &TimeGrid<f64>, out: &mut Output) -> Result<Computed, ScenarioError> {
    let sub = config
        .submartingale
        .as_ref()
        .ok_or_else(|| ScenarioError::config("missing 'submartingale' block"))?;
    let f = &sub.test_function;
    f.validate(model.dim(), model.noise_dim)?;
    let policy = policy(config, model)?;
    let requested = config.particles as u128 * config.replicas as u128 * config.n_steps as u128;
    if requested > config.max_particle_steps as u128 {
        return Err(Error::Budget {
            requested,
            limit: config.max_particle_steps as u128,
        }
        .into());
    }
    let calibration = if sub.calibrate {
        Some(calibrate_bias(model, f, config.particles, config.replicas, grid, policy.as_ref(), config.seed)?)
    } else {
        None
    };
    let ensembles = (0..config.replicas as u64)
        .map(|r| simulate_particle_system(model, config.particles, grid, policy.as_ref(), &config.sim_options(r)))
        .collect::<Result<Vec<_>, _>>()?;
    let flows: Vec<_> = ensembles.iter().map(|e| e.marginal_flow()).collect();
    let pairs = if sub.pairs.is_empty() { vec![(0, config.n_steps)] } else { sub.pairs.clone() };
    let opts = SubmartingaleOptions {
        confidence: sub.confidence,
        c_bias: calibration.as_ref().map_or(sub.c_bias, |c| c.c_bias),
        weights: sub.weights,
        seed: config.seed,
        boundary_samples: sub.boundary_samples,
        skip_boundary_check: sub.skip_boundary_check,
    };
    let report = submartingale_test(model, &ensembles, &flows, f, &pairs, &opts)?;
    out.write_csv(
        "statistics.csv",
        &["k0", "k1", "weight", "statistic", "std_error", "upper_bound", "threshold", "rejected"],
        report.statistics.iter().map(|s| {
            vec![
                s.k0.to_string(),
                s.k1.to_string(),
                s.weight.to_string(),
                s.statistic.to_string(),
                s.std_error.to_string(),
                s.upper_bound.to_string(),
                s.threshold.to_string(),
                s.rejected.to_string(),
            ]
        }),
    )?;
    Ok(Computed {
        flagged: false,
        result: json!({
            "c_bias": opts.c_bias,
            "calibration": value(&calibration)?,
            "report": value(&report)?,
        }),
    })
}
