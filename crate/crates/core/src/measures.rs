//! Bounded-Lipschitz distances between finite measures and path sets, and
//! the Hölder seminorm of sampled paths.
//!
//! In one dimension the distance is computed exactly. For `d ≥ 2` it is the
//! maximum over a seeded dictionary of one-dimensional pushforwards, each
//! solved exactly; since a bounded 1-Lipschitz function of a 1-Lipschitz
//! feature is admissible, the result is a lower bound on the true value.

use crate::error::{input, Result};
use crate::geometry::ConvexDomain;
use crate::integrator::ReflectedPath;
use crate::linalg::distance;
use crate::model::MeasureSummary;
use crate::rng::{Purpose, StreamKey};
use crate::scalar::Scalar;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlMethod {
    Exact1d,
    Dictionary,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
pub struct BLEstimate<T> {
    pub value: T,
    pub method: BlMethod,
    /// Number of dictionary features, zero for exact values.
    pub dictionary_size: usize,
}

/// Exact bounded-Lipschitz distance between two signed-mass lists on the
/// line: `sup Σ c_i f(x_i)` over `|f| ≤ 1`, `Lip f ≤ 1`.
pub(crate) fn bl_line(mut atoms: Vec<(f64, f64)>) -> f64 {
    if atoms.is_empty() {
        return 0.0;
    }
    atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut merged: Vec<(f64, f64)> = Vec::with_capacity(atoms.len());
    for (x, c) in atoms {
        match merged.last_mut() {
            Some(last) if last.0 == x => last.1 += c,
            _ => merged.push((x, c)),
        }
    }
    let span = merged.last().unwrap().0 - merged[0].0;
    let value = if span <= 2.0 {
        // A 1-Lipschitz function on a set of diameter ≤ 2 can be shifted
        // into [-1, 1], so the distance equals W1.
        let mut cum = 0.0;
        let mut total = 0.0;
        for w in merged.windows(2) {
            cum += w[0].1;
            total += cum.abs() * (w[1].0 - w[0].0);
        }
        total
    } else {
        bl_line_dp(&merged)
    };
    value.clamp(0.0, 2.0)
}

/// Dynamic program over the value of `f` at successive atoms. `best(v)` is
/// the maximal partial objective given `f(x_i) = v`; it is concave and
/// piecewise linear on `[-1, 1]` and is stored by its breakpoints.
fn bl_line_dp(atoms: &[(f64, f64)]) -> f64 {
    let c0 = atoms[0].1;
    let mut best = vec![(-1.0, -c0), (1.0, c0)];
    let mut next = Vec::with_capacity(best.len() + 2);
    for w in atoms.windows(2) {
        let gap = w[1].0 - w[0].0;
        let c = w[1].1;
        let top = best
            .iter()
            .enumerate()
            .max_by(|a, b| a.1 .1.total_cmp(&b.1 .1))
            .map(|(i, _)| i)
            .unwrap();
        // Max over the window |u - v| ≤ gap: shift the rising part left and
        // the falling part right, leaving a plateau at the maximum.
        next.clear();
        next.extend(best[..=top].iter().map(|&(x, y)| (x - gap, y)));
        next.extend(best[top..].iter().map(|&(x, y)| (x + gap, y)));
        best.clear();
        clip_to_unit(&next, &mut best);
        for p in best.iter_mut() {
            p.1 += c * p.0;
        }
    }
    best.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max)
}

fn clip_to_unit(points: &[(f64, f64)], out: &mut Vec<(f64, f64)>) {
    let interp = |a: (f64, f64), b: (f64, f64), x: f64| {
        if b.0 == a.0 {
            a.1.max(b.1)
        } else {
            a.1 + (b.1 - a.1) * (x - a.0) / (b.0 - a.0)
        }
    };
    let mut prev: Option<(f64, f64)> = None;
    for &p in points {
        if let Some(q) = prev {
            if q.0 < -1.0 && p.0 >= -1.0 {
                out.push((-1.0, interp(q, p, -1.0)));
            }
            if q.0 < 1.0 && p.0 > 1.0 {
                out.push((1.0, interp(q, p, 1.0)));
            }
        }
        if (-1.0..=1.0).contains(&p.0) {
            match out.last() {
                Some(last) if last.0 == p.0 => {}
                _ => out.push(p),
            }
        }
        prev = Some(p);
    }
}

/// Signed masses `μ - ν` of two pushforwards onto the line.
fn signed_line(mu_vals: &[f64], mu_w: &[f64], nu_vals: &[f64], nu_w: &[f64]) -> Vec<(f64, f64)> {
    let mut atoms = Vec::with_capacity(mu_vals.len() + nu_vals.len());
    atoms.extend(mu_vals.iter().zip(mu_w).map(|(&x, &w)| (x, w)));
    atoms.extend(nu_vals.iter().zip(nu_w).map(|(&x, &w)| (x, -w)));
    atoms
}

fn to_f64<T: Scalar>(v: &[T]) -> Vec<f64> {
    v.iter().map(|x| x.as_f64()).collect()
}

/// Bounded-Lipschitz distance between two finite measures: exact for
/// `d = 1`, a dictionary lower bound otherwise.
pub fn bl_distance<T: Scalar>(mu: &MeasureSummary<T>, nu: &MeasureSummary<T>) -> Result<BLEstimate<T>> {
    if mu.dim() != nu.dim() {
        return input(format!("measures of dimension {} and {}", mu.dim(), nu.dim()));
    }
    if mu.dim() == 1 {
        let value = bl_line(signed_line(
            &to_f64(mu.points()),
            &to_f64(mu.weights()),
            &to_f64(nu.points()),
            &to_f64(nu.weights()),
        ));
        return Ok(BLEstimate {
            value: T::lit(value),
            method: BlMethod::Exact1d,
            dictionary_size: 0,
        });
    }
    let (lo, hi) = merged_bounds(mu, nu);
    BlDictionary::new(mu.dim(), &lo, &hi, BlDictionary::DEFAULT_SIZE, 0)?.distance(mu, nu)
}

fn merged_bounds<T: Scalar>(mu: &MeasureSummary<T>, nu: &MeasureSummary<T>) -> (Vec<f64>, Vec<f64>) {
    let d = mu.dim();
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    for row in mu.points().chunks_exact(d).chain(nu.points().chunks_exact(d)) {
        for j in 0..d {
            lo[j] = lo[j].min(row[j].as_f64());
            hi[j] = hi[j].max(row[j].as_f64());
        }
    }
    (lo, hi)
}

/// Seeded family of 1-Lipschitz features: projections onto unit directions
/// and distances to centres. For each feature the best bounded 1-Lipschitz
/// function of it is found exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct BlDictionary {
    dim: usize,
    directions: Vec<Vec<f64>>,
    centres: Vec<Vec<f64>>,
}

impl BlDictionary {
    pub const DEFAULT_SIZE: usize = 256;
    pub const MIN_SIZE: usize = 256;

    /// `size` features with centres drawn uniformly from the box `[lo, hi]`.
    /// The coordinate axes are always among the directions.
    pub fn new(dim: usize, lo: &[f64], hi: &[f64], size: usize, seed: u64) -> Result<Self> {
        if dim == 0 || lo.len() != dim || hi.len() != dim {
            return input("dictionary box has the wrong dimension");
        }
        if size < Self::MIN_SIZE {
            return input(format!("dictionary size must be at least {}", Self::MIN_SIZE));
        }
        let mut rng = StreamKey::new(seed, Purpose::Dictionary).rng();
        let n_dir = size / 2;
        let mut directions = Vec::with_capacity(n_dir);
        for j in 0..dim.min(n_dir) {
            let mut e = vec![0.0; dim];
            e[j] = 1.0;
            directions.push(e);
        }
        while directions.len() < n_dir {
            let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            let len = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            if len > 1e-12 {
                directions.push(v.iter().map(|a| a / len).collect());
            }
        }
        let centres = (0..size - n_dir)
            .map(|_| {
                (0..dim)
                    .map(|j| {
                        if hi[j] > lo[j] {
                            rng.random_range(lo[j]..hi[j])
                        } else {
                            lo[j]
                        }
                    })
                    .collect()
            })
            .collect();
        Ok(Self {
            dim,
            directions,
            centres,
        })
    }

    pub fn for_domain<T: Scalar>(domain: &ConvexDomain<T>, size: usize, seed: u64) -> Result<Self> {
        let (lo, hi) = domain.bounding_box();
        Self::new(domain.dim(), &to_f64(&lo), &to_f64(&hi), size, seed)
    }

    pub fn size(&self) -> usize {
        self.directions.len() + self.centres.len()
    }

    pub fn distance<T: Scalar>(&self, mu: &MeasureSummary<T>, nu: &MeasureSummary<T>) -> Result<BLEstimate<T>> {
        if mu.dim() != self.dim || nu.dim() != self.dim {
            return input("measure dimension does not match the dictionary");
        }
        let d = self.dim;
        let mu_pts = to_f64(mu.points());
        let nu_pts = to_f64(nu.points());
        let (mu_w, nu_w) = (to_f64(mu.weights()), to_f64(nu.weights()));
        let project = |pts: &[f64], u: &[f64]| -> Vec<f64> {
            pts.chunks_exact(d).map(|p| p.iter().zip(u).map(|(a, b)| a * b).sum()).collect()
        };
        let radial = |pts: &[f64], c: &[f64]| -> Vec<f64> {
            pts.chunks_exact(d).map(|p| distance(p, c)).collect()
        };
        let mut value = 0.0f64;
        for u in &self.directions {
            let v = bl_line(signed_line(&project(&mu_pts, u), &mu_w, &project(&nu_pts, u), &nu_w));
            value = value.max(v);
        }
        for c in &self.centres {
            let v = bl_line(signed_line(&radial(&mu_pts, c), &mu_w, &radial(&nu_pts, c), &nu_w));
            value = value.max(v);
        }
        Ok(BLEstimate {
            value: T::lit(value),
            method: BlMethod::Dictionary,
            dictionary_size: self.size(),
        })
    }
}

/// Lower bound on the bounded-Lipschitz distance between the empirical laws
/// of two path sets under the sup metric on grid skeletons.
///
/// Features: coordinate projections `⟨u, φ(t_k)⟩` at every node and for a
/// few directions, and sup-distances to the constant paths at dictionary
/// centres. Each is 1-Lipschitz for the sup metric.
pub fn path_bl_distance<T: Scalar>(p: &[ReflectedPath<T>], q: &[ReflectedPath<T>]) -> Result<BLEstimate<T>> {
    if p.is_empty() || q.is_empty() {
        return input("path sets must be nonempty");
    }
    let (n, d) = (p[0].n_steps(), p[0].dim());
    if p.iter().chain(q).any(|path| path.n_steps() != n || path.dim() != d) {
        return input("path sets live on different grids");
    }
    let wp = vec![1.0 / p.len() as f64; p.len()];
    let wq = vec![1.0 / q.len() as f64; q.len()];
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    for path in p.iter().chain(q) {
        for row in path.states.chunks_exact(d) {
            for j in 0..d {
                lo[j] = lo[j].min(row[j].as_f64());
                hi[j] = hi[j].max(row[j].as_f64());
            }
        }
    }
    let dict = BlDictionary::new(d, &lo, &hi, BlDictionary::DEFAULT_SIZE, 0)?;
    let mut value = 0.0f64;
    let mut features = 0;
    let directions: Vec<&Vec<f64>> = dict.directions.iter().take(if d == 1 { 1 } else { 2 * d }).collect();
    for k in 0..=n {
        for u in &directions {
            let feature = |path: &ReflectedPath<T>| -> f64 {
                path.state(k).iter().zip(u.iter()).map(|(a, b)| a.as_f64() * b).sum()
            };
            let fp: Vec<f64> = p.iter().map(feature).collect();
            let fq: Vec<f64> = q.iter().map(feature).collect();
            value = value.max(bl_line(signed_line(&fp, &wp, &fq, &wq)));
            features += 1;
        }
    }
    for c in &dict.centres {
        let feature = |path: &ReflectedPath<T>| -> f64 {
            path.states
                .chunks_exact(d)
                .map(|row| {
                    row.iter()
                        .zip(c)
                        .map(|(a, b)| (a.as_f64() - b).powi(2))
                        .sum::<f64>()
                        .sqrt()
                })
                .fold(0.0, f64::max)
        };
        let fp: Vec<f64> = p.iter().map(feature).collect();
        let fq: Vec<f64> = q.iter().map(feature).collect();
        value = value.max(bl_line(signed_line(&fp, &wp, &fq, &wq)));
        features += 1;
    }
    Ok(BLEstimate {
        value: T::lit(value),
        method: BlMethod::Dictionary,
        dictionary_size: features,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HolderMode {
    /// All node pairs, `O(n²)`.
    Exact,
    /// Dyadic-window upper bound, `O(n log n)`.
    Dyadic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HolderStatistic {
    pub value: f64,
    pub mode: HolderMode,
}

/// `sup_{s<t} |f(t) - f(s)| / |t - s|^α` over grid nodes for a row-major
/// sample `values` with `dim` coordinates per node.
pub fn holder_statistic<T: Scalar>(values: &[T], dim: usize, dt: T, alpha: f64, mode: HolderMode) -> Result<HolderStatistic> {
    if !(alpha > 0.0 && alpha < 0.5) {
        return input("alpha must lie in (0, 1/2)");
    }
    if dim == 0 || values.len() % dim != 0 || !(dt > T::zero()) {
        return input("path sample and step must be consistent");
    }
    let dt = dt.as_f64();
    let v = to_f64(values);
    let n = v.len() / dim;
    let row = |k: usize| &v[k * dim..(k + 1) * dim];
    let value = match mode {
        HolderMode::Exact => {
            let mut best = 0.0f64;
            for s in 0..n {
                for t in s + 1..n {
                    let q = distance(row(t), row(s)) / ((t - s) as f64 * dt).powf(alpha);
                    best = best.max(q);
                }
            }
            best
        }
        HolderMode::Dyadic => {
            // Any pair with 2^m ≤ t - s < 2^(m+1) steps lies inside a window
            // of three consecutive blocks of length 2^m, so the window's
            // coordinatewise range bounds the increment.
            let mut lo: Vec<f64> = v.clone();
            let mut hi: Vec<f64> = v.clone();
            let mut block = 1usize;
            let mut best = 0.0f64;
            while block < n {
                let blocks = n.div_ceil(block);
                let scale = (block as f64 * dt).powf(alpha);
                for b in 0..blocks {
                    let last = (b + 3).min(blocks);
                    let mut sq = 0.0;
                    for j in 0..dim {
                        let mn = (b..last).map(|c| lo[c * dim + j]).fold(f64::INFINITY, f64::min);
                        let mx = (b..last).map(|c| hi[c * dim + j]).fold(f64::NEG_INFINITY, f64::max);
                        sq += (mx - mn).powi(2);
                    }
                    best = best.max(sq.sqrt() / scale);
                }
                let next_blocks = blocks.div_ceil(2);
                let mut nlo = vec![0.0; next_blocks * dim];
                let mut nhi = vec![0.0; next_blocks * dim];
                for b in 0..next_blocks {
                    for j in 0..dim {
                        let a = 2 * b;
                        let c = (2 * b + 1).min(blocks - 1);
                        nlo[b * dim + j] = lo[a * dim + j].min(lo[c * dim + j]);
                        nhi[b * dim + j] = hi[a * dim + j].max(hi[c * dim + j]);
                    }
                }
                lo = nlo;
                hi = nhi;
                block *= 2;
            }
            best
        }
    };
    Ok(HolderStatistic { value, mode })
}

/// Hölder statistic of a reflected path; the mode switches to the dyadic
/// bound above `exact_limit` nodes.
pub fn path_holder_statistic<T: Scalar>(path: &ReflectedPath<T>, dt: T, alpha: f64, exact_limit: usize) -> Result<HolderStatistic> {
    let mode = if path.n_steps() < exact_limit {
        HolderMode::Exact
    } else {
        HolderMode::Dyadic
    };
    holder_statistic(&path.states, path.dim(), dt, alpha, mode)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn m1(points: &[f64], weights: &[f64]) -> MeasureSummary<f64> {
        MeasureSummary::new(points.to_vec(), 1, weights.to_vec()).unwrap()
    }

    #[test]
    fn spec_examples() {
        let mu = m1(&[0.0, 1.0], &[0.5, 0.5]);
        assert_eq!(bl_distance(&mu, &mu.clone()).unwrap().value, 0.0);
        let half = MeasureSummary::dirac(&[0.5]).unwrap();
        assert!((bl_distance(&mu, &half).unwrap().value - 0.5).abs() < 1e-15);
        for (x, y) in [(0.0f64, 0.3f64), (0.0, 1.7), (-3.0, 4.0), (1.0, 3.5)] {
            let a = MeasureSummary::dirac(&[x]).unwrap();
            let b = MeasureSummary::dirac(&[y]).unwrap();
            let est = bl_distance(&a, &b).unwrap();
            assert_eq!(est.method, BlMethod::Exact1d);
            assert!((est.value - f64::min(2.0, (x - y).abs())).abs() < 1e-12);
        }
    }

    #[test]
    fn wide_support_uses_bounded_test_functions() {
        // ½f(0) + ½f(10) - f(5) is maximised by f(0) = f(10) = 1, f(5) = -1,
        // which is 1-Lipschitz since the gaps are 5.
        let mu = m1(&[0.0, 10.0], &[0.5, 0.5]);
        let nu = MeasureSummary::dirac(&[5.0]).unwrap();
        assert!((bl_distance(&mu, &nu).unwrap().value - 2.0).abs() < 1e-12);
        // Close atoms on a wide support: the middle constraint binds.
        let mu = m1(&[0.0, 0.5, 10.0], &[0.25, 0.5, 0.25]);
        let nu = m1(&[0.25, 9.0], &[0.5, 0.5]);
        let v = bl_distance(&mu, &nu).unwrap().value;
        assert!(v > 0.0 && v <= 2.0);
    }

    #[test]
    fn dictionary_in_two_dimensions() {
        let a = MeasureSummary::dirac(&[0.0, 0.0]).unwrap();
        let b = MeasureSummary::dirac(&[0.3, 0.4]).unwrap();
        let est = bl_distance(&a, &b).unwrap();
        assert_eq!(est.method, BlMethod::Dictionary);
        assert!(est.dictionary_size >= 256);
        // Radial features centred anywhere separate two points by at most
        // their distance, and a centre on the segment's line achieves it.
        assert!(est.value <= 0.5 + 1e-12);
        assert!(est.value > 0.4);
        assert_eq!(bl_distance(&a, &a).unwrap().value, 0.0);
        let c = MeasureSummary::dirac(&[0.0]).unwrap();
        assert!(bl_distance(&a, &c).is_err());
    }

    #[test]
    fn dictionary_is_reproducible() {
        let dom = ConvexDomain::new_ball(vec![0.0, 0.0], 1.0).unwrap();
        let d1 = BlDictionary::for_domain(&dom, 300, 4).unwrap();
        let d2 = BlDictionary::for_domain(&dom, 300, 4).unwrap();
        assert_eq!(d1, d2);
        assert_eq!(d1.size(), 300);
        assert!(BlDictionary::for_domain(&dom, 100, 4).is_err());
    }

    #[test]
    fn path_distance_examples() {
        let zero = ReflectedPath::from_states(vec![0.0f64; 5], 1).unwrap();
        let one = ReflectedPath::from_states(vec![1.0; 5], 1).unwrap();
        let est = path_bl_distance(&[zero.clone()], &[one.clone()]).unwrap();
        assert!((est.value - 1.0).abs() < 1e-12);
        assert_eq!(path_bl_distance(&[zero.clone(), one.clone()], &[one.clone(), zero.clone()]).unwrap().value, 0.0);
        let short = ReflectedPath::from_states(vec![0.0; 4], 1).unwrap();
        assert!(path_bl_distance(&[zero], &[short]).is_err());
    }

    #[test]
    fn holder_examples() {
        let n = 64;
        let dt = 1.0 / n as f64;
        let constant = vec![0.3; n + 1];
        assert_eq!(holder_statistic(&constant, 1, dt, 0.125, HolderMode::Exact).unwrap().value, 0.0);
        let linear: Vec<f64> = (0..=n).map(|k| k as f64 * dt).collect();
        let g = holder_statistic(&linear, 1, dt, 0.125, HolderMode::Exact).unwrap();
        assert!((g.value - 1.0).abs() < 1e-12);
        let ub = holder_statistic(&linear, 1, dt, 0.125, HolderMode::Dyadic).unwrap();
        assert!(ub.value >= g.value);
        assert!(holder_statistic(&linear, 1, dt, 0.5, HolderMode::Exact).is_err());
    }

    #[test]
    fn dyadic_mode_bounds_exact_on_random_walks() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        for n in [5usize, 17, 100, 257] {
            let mut x = vec![0.0f64; 2];
            let mut v = x.clone();
            for _ in 0..n {
                for c in x.iter_mut() {
                    *c += rng.random_range(-1.0..1.0);
                }
                v.extend_from_slice(&x);
            }
            let dt = 1.0 / n as f64;
            let exact = holder_statistic(&v, 2, dt, 0.2, HolderMode::Exact).unwrap().value;
            let ub = holder_statistic(&v, 2, dt, 0.2, HolderMode::Dyadic).unwrap().value;
            assert!(ub >= exact - 1e-12, "n={n}: {ub} < {exact}");
            // Each window range is attained by a pair at most 3·2^m steps apart.
            assert!(ub <= exact * 3f64.powf(0.2) * 2f64.sqrt() + 1e-12);
        }
    }

    fn atoms() -> impl Strategy<Value = MeasureSummary<f64>> {
        prop::collection::vec((-3.0f64..3.0, 0.01f64..1.0), 1..6).prop_map(|v| {
            let total: f64 = v.iter().map(|p| p.1).sum();
            let pts = v.iter().map(|p| p.0).collect();
            let w = v.iter().map(|p| p.1 / total).collect();
            MeasureSummary::new(pts, 1, w).unwrap()
        })
    }

    fn w1(mu: &MeasureSummary<f64>, nu: &MeasureSummary<f64>) -> f64 {
        let mut atoms = signed_line(mu.points(), mu.weights(), nu.points(), nu.weights());
        atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut cum = 0.0;
        let mut total = 0.0;
        for w in atoms.windows(2) {
            cum += w[0].1;
            total += cum.abs() * (w[1].0 - w[0].0);
        }
        total
    }

    proptest! {
        #[test]
        fn pseudometric_properties(a in atoms(), b in atoms(), c in atoms()) {
            let ab = bl_distance(&a, &b).unwrap().value;
            let ba = bl_distance(&b, &a).unwrap().value;
            let bc = bl_distance(&b, &c).unwrap().value;
            let ac = bl_distance(&a, &c).unwrap().value;
            prop_assert!((ab - ba).abs() < 1e-12);
            prop_assert!(ac <= ab + bc + 1e-10);
            prop_assert!((0.0..=2.0).contains(&ab));
            prop_assert!(ab <= w1(&a, &b) + 1e-10);
        }

        #[test]
        fn equals_w1_on_unit_diameter(
            a in prop::collection::vec(0.0f64..1.0, 1..8),
            b in prop::collection::vec(0.0f64..1.0, 1..8),
        ) {
            let mu = MeasureSummary::uniform(a, 1).unwrap();
            let nu = MeasureSummary::uniform(b, 1).unwrap();
            prop_assert!((bl_distance(&mu, &nu).unwrap().value - w1(&mu, &nu)).abs() < 1e-12);
        }

        #[test]
        fn shared_dictionary_triangle(
            a in prop::collection::vec(-1.0f64..1.0, 2..10),
            b in prop::collection::vec(-1.0f64..1.0, 2..10),
            c in prop::collection::vec(-1.0f64..1.0, 2..10),
        ) {
            let trim = |v: Vec<f64>| { let n = v.len() / 2 * 2; MeasureSummary::uniform(v[..n].to_vec(), 2).unwrap() };
            let (a, b, c) = (trim(a), trim(b), trim(c));
            let dict = BlDictionary::new(2, &[-1.0, -1.0], &[1.0, 1.0], 256, 1).unwrap();
            let ab = dict.distance(&a, &b).unwrap().value;
            let bc = dict.distance(&b, &c).unwrap().value;
            let ac = dict.distance(&a, &c).unwrap().value;
            prop_assert!(ac <= ab + bc + 1e-10);
        }
    }
}
