//! Acceptance suite: one PASS/FAIL line per criterion, with the tolerances
//! and runtime limits pinned below. Runs without the libtest harness.

use rand::Rng;
use rldp_cli::{parse_config, run_scenario, Overrides, RunKind};
use rldp_core::diagnostics::{
    calibrate_bias, generator_apply, submartingale_test, SubmartingaleOptions, TestFunction, TestFunctionKind,
};
use rldp_core::{
    bl_distance, estimate_rate, laplace_functional_mc, propagation_of_chaos, simulate_particle_system,
    simulate_reflected_path, skorokhod_1d, solve_mckean_vlasov_reference, variational_objective, Basis,
    BrownianPath, ControlPolicy, ConvexDomain, FnCoefficients, Functional, InitialCondition, Matrix, McConfig,
    MeasureSummary, Membership, ModelKind, ModelSpec, OptimizeOptions, PolicyFamily, Purpose, RateOptions,
    ReferenceMethod, SimOptions, StreamKey, Target, TimeGrid,
};
use serde_json::json;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

const SEED: u64 = 20_241;

// Criterion 1
const C1_MIN_PARTICLE_STEPS: usize = 100_000;
const C1_LIMIT: Duration = Duration::from_secs(30);
// Criterion 2
const C2_LEVELS: [u32; 3] = [6, 7, 8];
// Finer steps reported for information only.
const C2_EXTRA_LEVELS: [u32; 2] = [9, 10];
const C2_REFERENCE_LEVEL: u32 = 16;
const C2_PATHS: usize = 32;
const C2_MAX_MEDIAN_GAP: f64 = 0.05;
const C2_LIMIT: Duration = Duration::from_secs(60);
// Criterion 3
const C3_TWO_POINT_TOL: f64 = 1e-10;
const C3_LP_TOL: f64 = 1e-8;
// Criterion 4
const C4_POPULATIONS: [usize; 3] = [64, 256, 1024];
const C4_REPLICAS: usize = 16;
const C4_N_REF: usize = 4096;
const C4_LIMIT: Duration = Duration::from_secs(300);
// Criterion 6
const C6_POLICIES: usize = 20;
const C6_REQUIRED: usize = 19;
const C6_N: usize = 32;
const C6_M: usize = 256;
const C6_SE_FACTOR: f64 = 3.0;
const C6_LIMIT: Duration = Duration::from_secs(600);
// Criterion 7
const C7_RADIUS: f64 = 0.1;
const C7_LIMIT: Duration = Duration::from_secs(300);
// Criterion 8
const C8_RADIUS: f64 = 0.05;
const C8_REL_TOL: f64 = 0.25;
const C8_GRID_STEP: f64 = 0.05;
// Criterion 9
const C9_CONFIDENCE: f64 = 0.95;
const C9_VIOLATION_RUNS: u64 = 20;
const C9_REQUIRED_DETECTIONS: usize = 18;
const C9_LIMIT: Duration = Duration::from_secs(300);
// Criterion 10
const C10_POINTS: usize = 1000;
const C10_STEP: f64 = 1e-4;
const C10_REL_TOL: f64 = 1e-4;

type Outcome = Result<String, String>;

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(limit: Duration, start: Instant, outcome: Outcome) -> Outcome {
    let took = start.elapsed();
    match outcome {
        Ok(d) if took <= limit => Ok(format!("{d}; {:.1}s", took.as_secs_f64())),
        Ok(d) => Err(format!("{d}; runtime {:.1}s over {:.0}s", took.as_secs_f64(), limit.as_secs_f64())),
        Err(d) => Err(format!("{d}; {:.1}s", took.as_secs_f64())),
    }
}

fn unit_box(d: usize) -> ConvexDomain<f64> {
    ConvexDomain::cube(d, 0.0, 1.0).unwrap()
}

fn m1(d: usize) -> ModelSpec<f64> {
    ModelSpec::from_kind(unit_box(d), 1.0, ModelKind::Brownian { sigma: 1.0 }, InitialCondition::Uniform).unwrap()
}

fn m2(d: usize) -> ModelSpec<f64> {
    ModelSpec::from_kind(
        unit_box(d),
        1.0,
        ModelKind::MeanAttraction { theta: 2.0, sigma: 0.5 },
        InitialCondition::Uniform,
    )
    .unwrap()
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let ball = ConvexDomain::new_ball(vec![0.0, 0.0], 1.0).unwrap();
    let cases: Vec<(ModelSpec<f64>, usize, usize, Option<ControlPolicy<f64>>)> = vec![
        (m1(1), 256, 200, None),
        (m2(2), 256, 200, Some(ControlPolicy::Constant { value: vec![1.5, -0.5] })),
        (
            ModelSpec::from_kind(
                ball,
                1.0,
                ModelKind::DistributionDiffusion { theta: 1.0, s: 0.8, alpha: 2.0, clip: 3.0 },
                InitialCondition::Uniform,
            )
            .unwrap(),
            128,
            200,
            Some(ControlPolicy::Feedback { basis: Basis::Deg1, theta: vec![0.5; 12], clip: 4.0 }),
        ),
        (
            ModelSpec::from_kind(
                unit_box(2),
                1.0,
                ModelKind::ConstantDrift { drift: vec![3.0, -2.0], sigma: 0.7 },
                InitialCondition::Uniform,
            )
            .unwrap(),
            128,
            200,
            None,
        ),
    ];
    let mut steps = 0;
    let mut outside = 0;
    let mut off_boundary = 0;
    let mut hits = 0;
    for (c, (model, n, n_steps, policy)) in cases.iter().enumerate() {
        let grid = TimeGrid::new(1.0, *n_steps).unwrap();
        let ens = simulate_particle_system(model, *n, &grid, policy.as_ref(), &SimOptions::seeded(SEED).replica(c as u64))
            .unwrap();
        for p in &ens.paths {
            p.check_invariants(&model.domain).map_err(|e| format!("case {c}: {e}"))?;
            for k in 0..=*n_steps {
                if !model.domain.contains(p.state(k)).unwrap().in_closure() {
                    outside += 1;
                }
            }
            for k in 0..*n_steps {
                if p.local_time[k + 1] > p.local_time[k] {
                    hits += 1;
                    if model.domain.contains(p.state(k + 1)).unwrap() != Membership::Boundary {
                        off_boundary += 1;
                    }
                }
            }
            steps += n_steps;
        }
    }
    within(
        C1_LIMIT,
        start,
        check(
            steps >= C1_MIN_PARTICLE_STEPS && outside == 0 && off_boundary == 0 && hits > 0,
            format!("{steps} particle-steps, {outside} states outside, {off_boundary} of {hits} local-time increments off the boundary"),
        ),
    )
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let model = m1(1);
    let x0 = 0.5;
    let levels: Vec<u32> = C2_LEVELS.iter().chain(&C2_EXTRA_LEVELS).copied().collect();
    let mut gaps = vec![Vec::new(); levels.len()];
    for p in 0..C2_PATHS {
        let key = StreamKey::new(SEED, Purpose::Validation).with_particle(p as u64);
        let coarsest = C2_LEVELS[0];
        let mut level = BrownianPath::sample(key, 1 << coarsest, 1, 1.0 / (1u64 << coarsest) as f64);
        let mut by_level = Vec::new();
        for l in coarsest..=C2_REFERENCE_LEVEL {
            if l > coarsest {
                level = level.refine(key.with_replica(l as u64));
            }
            if levels.contains(&l) {
                by_level.push(level.clone());
            }
        }
        let fine: Vec<f64> = level.cumulative().iter().map(|w| x0 + w).collect();
        let oracle = skorokhod_1d(&fine, 0.0, 1.0).unwrap();
        for (j, bm) in by_level.iter().enumerate() {
            let n = bm.n_steps();
            let grid = TimeGrid::new(1.0, n).unwrap();
            let flow = vec![MeasureSummary::dirac(&[x0]).unwrap(); n + 1];
            let path = simulate_reflected_path(&model, &grid, &flow, &[x0], &vec![0.0; n], &bm.increments).unwrap();
            let stride = (1usize << C2_REFERENCE_LEVEL) / n;
            let gap = (0..=n)
                .map(|k| (path.state(k)[0] - oracle.x[k * stride]).abs())
                .fold(0.0, f64::max);
            gaps[j].push(gap);
        }
    }
    let all: Vec<f64> = gaps.iter().map(|g| median(g)).collect();
    let (medians, extra) = all.split_at(C2_LEVELS.len());
    let decreasing = medians.windows(2).all(|w| w[1] < w[0]);
    within(
        C2_LIMIT,
        start,
        check(
            decreasing && medians[2] < C2_MAX_MEDIAN_GAP,
            format!(
                "median sup gaps at dt=2^-6,2^-7,2^-8: {medians:.4?} (bound {C2_MAX_MEDIAN_GAP}); at 2^-9,2^-10: {extra:.4?}"
            ),
        ),
    )
}

// Cheapest matching of two equal-size uniform atom sets under the
// truncated cost min(|x - y|, 2), by enumerating permutations.
fn brute_force_bl(x: &[f64], y: &[f64]) -> f64 {
    fn permute(k: usize, perm: &mut Vec<usize>, x: &[f64], y: &[f64], best: &mut f64) {
        if k == perm.len() {
            let c: f64 = perm.iter().enumerate().map(|(i, &j)| (x[i] - y[j]).abs().min(2.0)).sum();
            *best = best.min(c / x.len() as f64);
            return;
        }
        for i in k..perm.len() {
            perm.swap(k, i);
            permute(k + 1, perm, x, y, best);
            perm.swap(k, i);
        }
    }
    let mut best = f64::INFINITY;
    permute(0, &mut (0..x.len()).collect(), x, y, &mut best);
    best
}

fn criterion_3() -> Outcome {
    let mut rng = StreamKey::new(SEED, Purpose::Validation).with_replica(3).rng();
    let mut worst_two = 0.0f64;
    for _ in 0..1000 {
        let (x, y): (f64, f64) = (rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
        let v = bl_distance(&MeasureSummary::dirac(&[x]).unwrap(), &MeasureSummary::dirac(&[y]).unwrap())
            .unwrap()
            .value;
        worst_two = worst_two.max((v - (x - y).abs().min(2.0)).abs());
    }
    let mut worst_lp = 0.0f64;
    for _ in 0..100 {
        let k = rng.random_range(1..=6);
        let x: Vec<f64> = (0..k).map(|_| rng.random_range(-2.0..3.0)).collect();
        let y: Vec<f64> = (0..k).map(|_| rng.random_range(-2.0..3.0)).collect();
        let v = bl_distance(
            &MeasureSummary::uniform(x.clone(), 1).unwrap(),
            &MeasureSummary::uniform(y.clone(), 1).unwrap(),
        )
        .unwrap()
        .value;
        worst_lp = worst_lp.max((v - brute_force_bl(&x, &y)).abs());
    }
    check(
        worst_two <= C3_TWO_POINT_TOL && worst_lp <= C3_LP_TOL,
        format!("two-point max error {worst_two:.2e}, brute-force max error {worst_lp:.2e}"),
    )
}

fn criterion_4() -> Outcome {
    let start = Instant::now();
    let grid = TimeGrid::new(1.0, 50).unwrap();
    let mut parts = Vec::new();
    let mut ok = true;
    for (name, model) in [("M1", m1(1)), ("M2", m2(1))] {
        let reference =
            solve_mckean_vlasov_reference(&model, &grid, ReferenceMethod::LargeN { n_ref: C4_N_REF, seed: SEED }).unwrap();
        let report = propagation_of_chaos(&model, &grid, &C4_POPULATIONS, C4_REPLICAS, &reference.flow, SEED).unwrap();
        ok &= report.decreasing;
        let medians: Vec<f64> = report.rows.iter().map(|r| r.median).collect();
        parts.push(format!("{name} medians {medians:.4?}"));
    }
    within(C4_LIMIT, start, check(ok, parts.join(", ")))
}

fn criterion_5() -> Outcome {
    let grid = TimeGrid::new(1.0, 20).unwrap();
    let mut bad = Vec::new();
    for (name, model) in [("M1", m1(1)), ("M2", m2(2))] {
        for c in [0.3, -1.25, 0.0, 7.0 / 3.0] {
            let cfg = McConfig::new(16, grid, 8, SEED);
            let f = Functional::constant(c);
            let l = laplace_functional_mc(&model, &f, &cfg).unwrap();
            let v = variational_objective(&model, &f, &ControlPolicy::Zero, &cfg).unwrap();
            if l.value != c || l.std_error != 0.0 || v.objective != c {
                bad.push(format!("{name} c={c}: laplace {} (se {}), variational {}", l.value, l.std_error, v.objective));
            }
        }
    }
    check(bad.is_empty(), if bad.is_empty() { "8 constant cases exact".into() } else { bad.join("; ") })
}

fn random_policy(rng: &mut impl Rng, i: usize) -> ControlPolicy<f64> {
    match i % 3 {
        0 => ControlPolicy::Constant { value: vec![rng.random_range(-2.0..2.0)] },
        1 => ControlPolicy::PiecewiseConstant {
            values: (0..4).map(|_| vec![rng.random_range(-2.0..2.0)]).collect(),
        },
        _ => ControlPolicy::Feedback {
            basis: Basis::Deg1,
            theta: (0..4).map(|_| rng.random_range(-1.5..1.5)).collect(),
            clip: 3.0,
        },
    }
}

fn criterion_6() -> Outcome {
    let start = Instant::now();
    let grid = TimeGrid::new(1.0, 20).unwrap();
    let cfg = McConfig::new(C6_N, grid, C6_M, SEED);
    let f = Functional::terminal_mean(0, 0.0, 1.0);
    let mut rng = StreamKey::new(SEED, Purpose::Policy).rng();
    let models = [m1(1), m2(1)];
    let laplace: Vec<_> = models.iter().map(|m| laplace_functional_mc(m, &f, &cfg).unwrap()).collect();
    let mut held = 0;
    let mut worst = f64::INFINITY;
    for i in 0..C6_POLICIES {
        let m = i % 2;
        let policy = random_policy(&mut rng, i / 2);
        let v = variational_objective(&models[m], &f, &policy, &cfg).unwrap();
        let se = (laplace[m].std_error.powi(2) + v.std_error.powi(2)).sqrt();
        let slack = v.objective + C6_SE_FACTOR * se - laplace[m].value;
        worst = worst.min(slack);
        if slack >= 0.0 {
            held += 1;
        }
    }
    within(
        C6_LIMIT,
        start,
        check(
            held >= C6_REQUIRED,
            format!("{held}/{C6_POLICIES} policies satisfy the inequality (smallest slack {worst:.4})"),
        ),
    )
}

fn criterion_7() -> Outcome {
    let start = Instant::now();
    let model = m1(1);
    let grid = TimeGrid::new(1.0, 20).unwrap();
    let reference = solve_mckean_vlasov_reference(&model, &grid, ReferenceMethod::large_n(SEED)).unwrap();
    let cfg = McConfig::new(256, grid, 8, SEED);
    let opts = RateOptions {
        radius: C7_RADIUS,
        optimizer: OptimizeOptions { budget: 12, ..Default::default() },
        bisection_steps: 2,
    };
    let family = PolicyFamily::Constant { d1: 1, bound: 2.0 };
    let est = estimate_rate(&model, Target::Flow(reference.flow), &[1.0, 10.0], &family, &cfg, &opts).unwrap();
    let zero = &est.candidates[0];
    let tolerance = 3.0 * zero.distance_std_error;
    let ok = zero.distance <= C7_RADIUS && est.upper_bound.is_some_and(|i| i <= 2.0 * tolerance);
    within(
        C7_LIMIT,
        start,
        check(
            ok,
            format!(
                "I_hat {:?}, zero-control distance {:.4} (se {:.4}), tolerance {:.4}",
                est.upper_bound, zero.distance, zero.distance_std_error, tolerance
            ),
        ),
    )
}

fn criterion_8() -> Outcome {
    let model = ModelSpec::from_kind(
        unit_box(1),
        1.0,
        ModelKind::Brownian { sigma: 1.0 },
        InitialCondition::Dirac { point: vec![0.5] },
    )
    .unwrap();
    let grid = TimeGrid::new(1.0, 32).unwrap();
    let cfg = McConfig::new(128, grid, 16, SEED);
    let target = Target::TerminalMean { mean: vec![0.75], diameter: 1.0 };
    // Grid oracle over constant controls on the same seeds.
    let distance = Functional::penalty(1.0, std::sync::Arc::new(target.clone()));
    let steps = (6.0 / C8_GRID_STEP).round() as i64;
    let mut oracle = f64::INFINITY;
    for j in 0..=steps {
        let v = -3.0 + j as f64 * C8_GRID_STEP;
        let est = variational_objective(&model, &distance, &ControlPolicy::Constant { value: vec![v] }, &cfg).unwrap();
        if est.f_part <= C8_RADIUS {
            oracle = oracle.min(0.5 * v * v * grid.horizon);
        }
    }
    let opts = RateOptions {
        radius: C8_RADIUS,
        optimizer: OptimizeOptions { budget: 40, initial_step: 0.5, restarts: 2 },
        bisection_steps: 6,
    };
    let family = PolicyFamily::Constant { d1: 1, bound: 3.0 };
    let schedule = [0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0];
    let est = estimate_rate(&model, target, &schedule, &family, &cfg, &opts).unwrap();
    match est.upper_bound {
        Some(i) if oracle.is_finite() => check(
            (i - oracle).abs() <= C8_REL_TOL * oracle,
            format!("I_hat {i:.4} vs grid oracle {oracle:.4} (relative gap {:.3})", (i - oracle).abs() / oracle),
        ),
        _ => Err(format!("I_hat {:?}, oracle {oracle}", est.upper_bound)),
    }
}

fn criterion_9() -> Outcome {
    let start = Instant::now();
    let opts = |c_bias: f64, seed: u64, skip: bool| SubmartingaleOptions {
        confidence: C9_CONFIDENCE,
        c_bias,
        weights: 8,
        seed,
        boundary_samples: 1000,
        skip_boundary_check: skip,
    };
    let ensembles = |model: &ModelSpec<f64>, grid: &TimeGrid<f64>, n: usize, m: usize, seed: u64| {
        let ens: Vec<_> = (0..m as u64)
            .map(|r| simulate_particle_system(model, n, grid, None, &SimOptions::seeded(seed).replica(r)).unwrap())
            .collect();
        let flows: Vec<_> = ens.iter().map(|e| e.marginal_flow()).collect();
        (ens, flows)
    };
    let compliant = TestFunctionKind::NegSquare { index: 0 };

    // Boundary-compliant case at dt = 1e-3 with 10^4 paths.
    let model = m1(1);
    let grid = TimeGrid::new(1.0, 1000).unwrap();
    let cal = calibrate_bias(&model, &compliant, 100, 100, &grid, None, SEED).unwrap();
    let (ens, flows) = ensembles(&model, &grid, 100, 100, SEED);
    let pairs = [(0, 250), (250, 500), (500, 750), (750, 1000), (0, 1000)];
    let pass = submartingale_test(&model, &ens, &flows, &compliant, &pairs, &opts(cal.c_bias, SEED, false)).unwrap();
    drop(ens);

    // Designed violation: f = +x_1 with drift pushing mass onto x_1 = 1.
    let drift = ModelSpec::from_kind(
        unit_box(1),
        1.0,
        ModelKind::ConstantDrift { drift: vec![2.0], sigma: 1.0 },
        InitialCondition::Uniform,
    )
    .unwrap();
    let grid = TimeGrid::new(1.0, 100).unwrap();
    let drift_cal = calibrate_bias(&drift, &compliant, 50, 20, &grid, None, SEED).unwrap();
    let violating = TestFunctionKind::Coordinate { index: 0 };
    let mut detected = 0;
    for run in 0..C9_VIOLATION_RUNS {
        let seed = SEED + 1000 + run;
        let (ens, flows) = ensembles(&drift, &grid, 50, 20, seed);
        let r = submartingale_test(&drift, &ens, &flows, &violating, &[(0, 50), (50, 100), (0, 100)], &opts(drift_cal.c_bias, seed, true))
            .unwrap();
        if !r.passed {
            detected += 1;
        }
    }
    within(
        C9_LIMIT,
        start,
        check(
            pass.passed && detected >= C9_REQUIRED_DETECTIONS,
            format!(
                "compliant case {} (margin {:.3e}, c_bias {:.3}), violation detected in {detected}/{C9_VIOLATION_RUNS}",
                if pass.passed { "passes" } else { "rejected" },
                pass.margin,
                cal.c_bias
            ),
        ),
    )
}

// Second-order operator applied through finite differences of f alone.
fn generator_fd(model: &ModelSpec<f64>, f: &dyn TestFunction<f64>, t: f64, x: &[f64], y: &[f64], z: &[f64], nu: &MeasureSummary<f64>) -> f64 {
    let (d, d1) = (x.len(), z.len());
    let h = C10_STEP;
    let (b, sigma) = model.eval_coefficients(t, x, nu).unwrap();
    let joint: Vec<f64> = x.iter().chain(z).copied().collect();
    let at = |u: &[f64]| f.value(t, &u[..d], &u[d..]);
    let first = |i: usize| {
        let (mut up, mut dn) = (joint.clone(), joint.clone());
        up[i] += h;
        dn[i] -= h;
        (at(&up) - at(&dn)) / (2.0 * h)
    };
    let second = |i: usize, k: usize| {
        let mut q = [joint.clone(), joint.clone(), joint.clone(), joint.clone()];
        q[0][i] += h;
        q[0][k] += h;
        q[1][i] += h;
        q[1][k] -= h;
        q[2][i] -= h;
        q[2][k] += h;
        q[3][i] -= h;
        q[3][k] -= h;
        (at(&q[0]) - at(&q[1]) - at(&q[2]) + at(&q[3])) / (4.0 * h * h)
    };
    let mut total = 0.0;
    for i in 0..d {
        let drift = b[i] + (0..d1).map(|j| sigma.get(i, j) * y[j]).sum::<f64>();
        total += drift * first(i);
        for k in 0..d {
            let a: f64 = (0..d1).map(|j| sigma.get(i, j) * sigma.get(k, j)).sum();
            total += 0.5 * a * second(i, k);
        }
        for j in 0..d1 {
            total += sigma.get(i, j) * second(i, d + j);
        }
    }
    for j in 0..d1 {
        total += 0.5 * second(d + j, d + j);
    }
    total
}

fn criterion_10() -> Outcome {
    let coefficients = FnCoefficients::new(
        "full_matrix",
        |t: f64, x: &[f64], mu: &MeasureSummary<f64>, b: &mut [f64]| {
            b[0] = t.sin() + x[1] * mu.mean()[0];
            b[1] = -x[0] + 0.5;
        },
        |t: f64, x: &[f64], _mu: &MeasureSummary<f64>, s: &mut Matrix<f64>| {
            s.set(0, 0, 1.0 + 0.1 * x[0]);
            s.set(0, 1, 0.3);
            s.set(1, 0, -0.2);
            s.set(1, 1, 0.8 + 0.1 * t);
        },
    );
    let model = ModelSpec::new(unit_box(2), 2, 1.0, coefficients, InitialCondition::Uniform).unwrap();
    let nu = MeasureSummary::uniform(vec![0.2, 0.4, 0.7, 0.9, 0.5, 0.1], 2).unwrap();
    let mut rng = StreamKey::new(SEED, Purpose::Validation).with_replica(10).rng();
    let registry = TestFunctionKind::registry(2, 2, &[0.5, 0.5], 0.5);
    let mut worst = (0.0f64, String::new());
    for f in &registry {
        for _ in 0..C10_POINTS {
            let t = rng.random_range(0.0..1.0);
            let x = [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)];
            let y = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
            let z = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
            let exact = generator_apply(&model, f, t, &x, &y, &z, &nu).unwrap();
            let fd = generator_fd(&model, f, t, &x, &y, &z, &nu);
            let rel = (exact - fd).abs() / exact.abs().max(1.0);
            if rel > worst.0 {
                worst = (rel, f.id());
            }
        }
    }
    check(
        worst.0 < C10_REL_TOL,
        format!("{} functions, worst relative error {:.2e} ({})", registry.len(), worst.0, worst.1),
    )
}

fn criterion_11() -> Outcome {
    let base = json!({
        "schema_version": 1,
        "seed": 7,
        "domain": { "kind": "box", "lo": [0.0], "hi": [1.0] },
        "model": { "model": "mean_attraction", "theta": 1.0, "sigma": 0.6 },
        "n_steps": 12,
        "particles": 16,
        "replicas": 6,
    });
    let with = |extra: serde_json::Value| {
        let mut v = base.clone();
        for (k, x) in extra.as_object().unwrap() {
            v[k] = x.clone();
        }
        v
    };
    let family = json!({ "family": "constant", "d1": 1, "bound": 2.0 });
    let kinds = [
        (RunKind::Simulate, base.clone()),
        (RunKind::Chaos, with(json!({ "chaos": { "populations": [8, 32], "reference": { "method": "large_n", "n_ref": 1024 } } }))),
        (RunKind::Laplace, with(json!({ "functional": { "functional": "terminal_mean", "lo": 0.0, "hi": 1.0 } }))),
        (
            RunKind::Variational,
            with(json!({
                "functional": { "functional": "terminal_mean_penalty", "lambda": 2.0, "target": [0.8] },
                "optimizer": { "family": family, "budget": 12 },
            })),
        ),
        (
            RunKind::Rate,
            with(json!({
                "rate": {
                    "target": { "target": "terminal_mean", "mean": [0.7] },
                    "schedule": [1.0, 4.0],
                    "radius": 0.1,
                    "bisection_steps": 1,
                    "optimizer": { "family": family, "budget": 8 },
                },
            })),
        ),
        (
            RunKind::Submartingale,
            with(json!({
                "submartingale": { "test_function": "neg_square", "index": 0, "pairs": [[0, 6], [0, 12]], "calibrate": true },
            })),
        ),
    ];
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut bad = Vec::new();
    for (kind, cfg) in kinds {
        let mut outputs = Vec::new();
        for workers in [1usize, 3, 8] {
            let out = dir.path().join(format!("{}-{workers}", kind.name()));
            let resolved = parse_config(&cfg.to_string())
                .and_then(|c| {
                    c.resolve(
                        kind,
                        &Overrides { workers: Some(workers), output_dir: Some(out.clone()), ..Default::default() },
                    )
                })
                .map_err(|e| format!("{}: {e}", kind.name()))?;
            let outcome = run_scenario(&resolved).map_err(|e| format!("{}: {e}", kind.name()))?;
            if outcome.exit_code != 0 {
                bad.push(format!("{} exit {}", kind.name(), outcome.exit_code));
            }
            outputs.push(std::fs::read(out.join("result.json")).map_err(|e| e.to_string())?);
        }
        if outputs.windows(2).any(|w| w[0] != w[1]) {
            bad.push(format!("{} differs across worker counts", kind.name()));
        }
    }
    check(
        bad.is_empty(),
        if bad.is_empty() { "6 run kinds identical with 1, 3 and 8 workers".into() } else { bad.join("; ") },
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("containment and local-time support", criterion_1),
        ("1D Skorokhod oracle", criterion_2),
        ("two-point BL exactness", criterion_3),
        ("propagation of chaos", criterion_4),
        ("constant functional exactness", criterion_5),
        ("representation inequality", criterion_6),
        ("rate at the LLN limit", criterion_7),
        ("rate oracle agreement", criterion_8),
        ("submartingale test", criterion_9),
        ("generator correctness", criterion_10),
        ("determinism across workers", criterion_11),
    ];
    let only: Option<usize> = std::env::args().skip(1).find_map(|a| a.parse().ok());
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let number = i + 1;
        if only.is_some_and(|o| o != number) {
            continue;
        }
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(detail) => println!("PASS {number:>2} {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {number:>2} {name}: {detail}");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
