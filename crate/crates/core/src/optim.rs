//! Derivative-free minimisation on a box: Nelder–Mead with restarts.

use crate::error::{input, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NelderMeadOptions {
    /// Edge length of the initial simplex.
    pub initial_step: f64,
    /// Hard cap on objective evaluations.
    pub max_evals: usize,
    /// Stop a run when the simplex values agree to this absolute tolerance
    /// or its vertices to `xtol`.
    pub ftol: f64,
    pub xtol: f64,
    /// Restarts from the incumbent after a run converges.
    pub restarts: usize,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self {
            initial_step: 0.5,
            max_evals: 200,
            ftol: 1e-9,
            xtol: 1e-7,
            restarts: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub evaluations: usize,
    /// Best value seen after each evaluation.
    pub trace: Vec<f64>,
    pub converged: bool,
    /// The evaluation cap was hit before convergence.
    pub budget_exhausted: bool,
}

struct Counter<'a, F> {
    f: F,
    lower: &'a [f64],
    upper: &'a [f64],
    evals: usize,
    max_evals: usize,
    best_x: Vec<f64>,
    best: f64,
    trace: Vec<f64>,
}

impl<F: FnMut(&[f64]) -> Result<f64>> Counter<'_, F> {
    fn clamp(&self, x: &mut [f64]) {
        for ((v, &l), &u) in x.iter_mut().zip(self.lower).zip(self.upper) {
            *v = v.clamp(l, u);
        }
    }

    fn left(&self) -> bool {
        self.evals < self.max_evals
    }

    fn eval(&mut self, x: &mut [f64]) -> Result<f64> {
        self.clamp(x);
        let v = (self.f)(x)?;
        let v = if v.is_nan() { f64::INFINITY } else { v };
        self.evals += 1;
        if v < self.best {
            self.best = v;
            self.best_x = x.to_vec();
        }
        self.trace.push(self.best);
        Ok(v)
    }
}

/// Minimises `f` over the box `[lower, upper]` starting at `x0`, which is
/// evaluated first. Points proposed outside the box are clamped.
pub fn minimize<F>(f: F, x0: &[f64], lower: &[f64], upper: &[f64], opts: &NelderMeadOptions) -> Result<Minimum>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let n = x0.len();
    if n == 0 || lower.len() != n || upper.len() != n {
        return input("bounds and start point must share a positive dimension");
    }
    if lower.iter().zip(upper).any(|(l, u)| !(l <= u)) {
        return input("lower bounds must not exceed upper bounds");
    }
    if opts.max_evals < n + 2 {
        return input(format!("evaluation budget must be at least {}", n + 2));
    }
    let mut c = Counter {
        f,
        lower,
        upper,
        evals: 0,
        max_evals: opts.max_evals,
        best_x: x0.to_vec(),
        best: f64::INFINITY,
        trace: Vec::new(),
    };
    let mut start = x0.to_vec();
    c.eval(&mut start)?;
    c.best_x = start.clone();
    let mut converged = false;
    for run in 0..=opts.restarts {
        if !c.left() {
            break;
        }
        let before = c.best;
        let centre = c.best_x.clone();
        let value = c.best;
        converged = simplex_run(&mut c, &centre, value, opts)?;
        if run > 0 && before - c.best <= opts.ftol {
            break;
        }
    }
    Ok(Minimum {
        budget_exhausted: !converged && !c.left(),
        x: c.best_x,
        value: c.best,
        evaluations: c.evals,
        trace: c.trace,
        converged,
    })
}

fn simplex_run<F: FnMut(&[f64]) -> Result<f64>>(
    c: &mut Counter<'_, F>,
    centre: &[f64],
    centre_value: f64,
    opts: &NelderMeadOptions,
) -> Result<bool> {
    let n = centre.len();
    let mut simplex: Vec<(Vec<f64>, f64)> = vec![(centre.to_vec(), centre_value)];
    for j in 0..n {
        if !c.left() {
            return Ok(false);
        }
        let mut x = centre.to_vec();
        // Step away from a bound the centre sits on.
        let step = if x[j] + opts.initial_step <= c.upper[j] {
            opts.initial_step
        } else {
            -opts.initial_step
        };
        x[j] += step;
        let v = c.eval(&mut x)?;
        simplex.push((x, v));
    }
    loop {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let spread = simplex[n].1 - simplex[0].1;
        let size = simplex[1..]
            .iter()
            .map(|(x, _)| x.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        if spread <= opts.ftol || size <= opts.xtol {
            return Ok(true);
        }
        if !c.left() {
            return Ok(false);
        }
        let mut centroid = vec![0.0; n];
        for (x, _) in &simplex[..n] {
            for (m, v) in centroid.iter_mut().zip(x) {
                *m += v / n as f64;
            }
        }
        let along = |t: f64, worst: &[f64]| -> Vec<f64> {
            centroid.iter().zip(worst).map(|(m, w)| m + t * (m - w)).collect()
        };
        let worst = simplex[n].0.clone();
        let mut xr = along(1.0, &worst);
        let fr = c.eval(&mut xr)?;
        if fr < simplex[0].1 {
            if !c.left() {
                simplex[n] = (xr, fr);
                continue;
            }
            let mut xe = along(2.0, &worst);
            let fe = c.eval(&mut xe)?;
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
            continue;
        }
        if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
            continue;
        }
        if !c.left() {
            return Ok(false);
        }
        let (xc, fc) = if fr < simplex[n].1 {
            let mut x = along(0.5, &worst);
            let v = c.eval(&mut x)?;
            (x, v)
        } else {
            let mut x = along(-0.5, &worst);
            let v = c.eval(&mut x)?;
            (x, v)
        };
        if fc < simplex[n].1.min(fr) {
            simplex[n] = (xc, fc);
            continue;
        }
        // Shrink towards the best vertex.
        let best = simplex[0].0.clone();
        for vertex in simplex.iter_mut().skip(1) {
            if !c.left() {
                return Ok(false);
            }
            let mut x: Vec<f64> = best.iter().zip(&vertex.0).map(|(b, v)| b + 0.5 * (v - b)).collect();
            let v = c.eval(&mut x)?;
            *vertex = (x, v);
        }
    }
}
