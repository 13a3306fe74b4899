//! Simulation and estimation for mean-field interacting diffusions reflected
//! in a bounded convex domain.
//!
//! The numerical core is generic over the scalar type (`f32` or `f64`); the
//! aliases at the bottom of this file fix it to `f64`.

pub mod controls;
pub mod diagnostics;
pub mod ensemble;
pub mod error;
pub mod geometry;
pub mod integrator;
pub mod ldp;
pub mod linalg;
pub mod measures;
pub mod model;
pub mod optim;
pub mod rng;
pub mod scalar;

pub use controls::{ensemble_cost, relax_control, Basis, ControlPolicy, PolicyFamily, RelaxedControlView};
pub use diagnostics::{
    boundary_condition_check, calibrate_bias, generator_apply, mf_process, submartingale_test, BiasCalibration, BoundaryCheck, Partials,
    SubmartingaleOptions, SubmartingaleReport, TestFunction, TestFunctionKind,
};
pub use ensemble::{
    propagation_of_chaos, simulate_in_flow, simulate_particle_system, solve_mckean_vlasov_reference, ChaosReport,
    Ensemble, MeasureFlow, ReferenceMethod, ReferenceSolution, SimOptions,
};
pub use error::{Error, Result};
pub use geometry::{skorokhod_1d, ConvexDomain, Membership, Projection, Shape, Skorokhod1d};
pub use integrator::{simulate_reflected_path, step_reflected, ReflectedPath, StepOutcome, TimeGrid};
pub use ldp::{
    estimate_rate, laplace_functional_mc, optimize_controls, variational_objective, ControlOptimization, Functional,
    FunctionalSpec, LaplaceEstimate, McConfig, OptimizeOptions, RateEstimate, RateOptions, Target, VariationalEstimate,
};
pub use linalg::Matrix;
pub use measures::{bl_distance, holder_statistic, path_bl_distance, BLEstimate, BlDictionary, BlMethod, HolderMode};
pub use model::{AssumptionReport, Coefficients, FnCoefficients, InitialCondition, MeasureSummary, ModelKind, ModelSpec};
pub use rng::{BrownianPath, Purpose, StreamKey};
pub use scalar::Scalar;

pub type Domain = ConvexDomain<f64>;
pub type Model = ModelSpec<f64>;
pub type Grid = TimeGrid<f64>;
pub type Measure = MeasureSummary<f64>;
pub type Flow = MeasureFlow<f64>;
pub type Policy = ControlPolicy<f64>;
pub type Path = ReflectedPath<f64>;
pub type ParticleEnsemble = Ensemble<f64>;
