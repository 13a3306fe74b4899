//! Bounded convex domains, Euclidean projection, outward normals and the
//! exact one-dimensional Skorokhod map.
//!
//! Two shapes are supported: axis-aligned boxes and Euclidean balls. Balls
//! are smooth; boxes have corners, where [`ConvexDomain::outward_normal`]
//! returns the normalized sum of the active face normals. Corner visits
//! have probability zero under nondegenerate noise, so the choice never
//! affects the simulated dynamics.

use crate::error::{input, Error, Result};
use crate::linalg::{all_finite, distance, norm};
use crate::scalar::Scalar;
use serde::{Deserialize, Serialize};

pub const DEFAULT_BOUNDARY_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Shape<T> {
    Box { lo: Vec<T>, hi: Vec<T> },
    Ball { center: Vec<T>, radius: T },
}

/// Closed convex domain `D̄` with a boundary classification tolerance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DomainRepr<T>", into = "DomainRepr<T>")]
#[serde(bound(
    serialize = "T: Scalar",
    deserialize = "T: Scalar"
))]
pub struct ConvexDomain<T: Scalar> {
    shape: Shape<T>,
    tolerance: T,
}

#[derive(Serialize, Deserialize)]
struct DomainRepr<T> {
    #[serde(flatten)]
    shape: Shape<T>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tolerance: Option<T>,
}

impl<T: Scalar> TryFrom<DomainRepr<T>> for ConvexDomain<T> {
    type Error = Error;

    fn try_from(r: DomainRepr<T>) -> Result<Self> {
        let d = ConvexDomain::from_shape(r.shape)?;
        match r.tolerance {
            Some(tol) => d.with_tolerance(tol),
            None => Ok(d),
        }
    }
}

impl<T: Scalar> From<ConvexDomain<T>> for DomainRepr<T> {
    fn from(d: ConvexDomain<T>) -> Self {
        let tolerance = if d.tolerance == T::lit(DEFAULT_BOUNDARY_TOLERANCE) {
            None
        } else {
            Some(d.tolerance)
        };
        DomainRepr {
            shape: d.shape,
            tolerance,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Membership {
    Interior,
    Boundary,
    Exterior,
}

impl Membership {
    /// True for points of the closed domain.
    pub fn in_closure(self) -> bool {
        !matches!(self, Membership::Exterior)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Projection<T> {
    pub point: Vec<T>,
    pub hit_boundary: bool,
    pub displacement: T,
}

impl<T: Scalar> ConvexDomain<T> {
    pub fn from_shape(shape: Shape<T>) -> Result<Self> {
        match &shape {
            Shape::Box { lo, hi } => {
                if lo.is_empty() || lo.len() != hi.len() {
                    return input("box bounds must be nonempty and of equal length");
                }
                if !all_finite(lo) || !all_finite(hi) {
                    return input("box bounds must be finite");
                }
                if lo.iter().zip(hi).any(|(l, h)| !(h > l)) {
                    return input("box requires hi > lo on every axis");
                }
            }
            Shape::Ball { center, radius } => {
                if center.is_empty() || !all_finite(center) {
                    return input("ball center must be a nonempty finite point");
                }
                if !(radius.is_finite() && *radius > T::zero()) {
                    return input("ball radius must be positive and finite");
                }
            }
        }
        Ok(Self {
            shape,
            tolerance: T::lit(DEFAULT_BOUNDARY_TOLERANCE),
        })
    }

    pub fn new_box(lo: Vec<T>, hi: Vec<T>) -> Result<Self> {
        Self::from_shape(Shape::Box { lo, hi })
    }

    /// The cube `[lo, hi]^dim`.
    pub fn cube(dim: usize, lo: T, hi: T) -> Result<Self> {
        Self::new_box(vec![lo; dim], vec![hi; dim])
    }

    pub fn new_ball(center: Vec<T>, radius: T) -> Result<Self> {
        Self::from_shape(Shape::Ball { center, radius })
    }

    pub fn with_tolerance(mut self, tolerance: T) -> Result<Self> {
        if !(tolerance >= T::zero() && tolerance.is_finite()) {
            return input("boundary tolerance must be finite and nonnegative");
        }
        self.tolerance = tolerance;
        Ok(self)
    }

    pub fn shape(&self) -> &Shape<T> {
        &self.shape
    }

    pub fn tolerance(&self) -> T {
        self.tolerance
    }

    pub fn dim(&self) -> usize {
        match &self.shape {
            Shape::Box { lo, .. } => lo.len(),
            Shape::Ball { center, .. } => center.len(),
        }
    }

    /// `sup |x|` over the closed domain, i.e. the radius of the smallest
    /// origin-centred ball containing it.
    pub fn bounding_radius(&self) -> T {
        match &self.shape {
            Shape::Box { lo, hi } => lo
                .iter()
                .zip(hi)
                .map(|(l, h)| {
                    let m = l.abs().max(h.abs());
                    m * m
                })
                .sum::<T>()
                .sqrt(),
            Shape::Ball { center, radius } => norm(center) + *radius,
        }
    }

    pub fn diameter(&self) -> T {
        match &self.shape {
            Shape::Box { lo, hi } => distance(lo, hi),
            Shape::Ball { radius, .. } => *radius + *radius,
        }
    }

    /// Axis-aligned bounding box `(lo, hi)`.
    pub fn bounding_box(&self) -> (Vec<T>, Vec<T>) {
        match &self.shape {
            Shape::Box { lo, hi } => (lo.clone(), hi.clone()),
            Shape::Ball { center, radius } => (
                center.iter().map(|&c| c - *radius).collect(),
                center.iter().map(|&c| c + *radius).collect(),
            ),
        }
    }

    /// A point of the interior (box centre or ball centre).
    pub fn centre(&self) -> Vec<T> {
        match &self.shape {
            Shape::Box { lo, hi } => lo
                .iter()
                .zip(hi)
                .map(|(&l, &h)| (l + h) / T::lit(2.0))
                .collect(),
            Shape::Ball { center, .. } => center.clone(),
        }
    }

    fn check_point(&self, x: &[T]) -> Result<()> {
        if x.len() != self.dim() {
            return input(format!(
                "point has dimension {}, domain has {}",
                x.len(),
                self.dim()
            ));
        }
        if !all_finite(x) {
            return input("point has non-finite coordinates");
        }
        Ok(())
    }

    pub fn contains(&self, x: &[T]) -> Result<Membership> {
        self.check_point(x)?;
        Ok(self.classify(x))
    }

    /// Unchecked classification; `x` must have the domain dimension.
    pub(crate) fn classify(&self, x: &[T]) -> Membership {
        let tol = self.tolerance;
        match &self.shape {
            Shape::Box { lo, hi } => {
                let mut on_face = false;
                for ((&xi, &l), &h) in x.iter().zip(lo).zip(hi) {
                    if xi < l - tol || xi > h + tol {
                        return Membership::Exterior;
                    }
                    if (xi - l).abs() <= tol || (xi - h).abs() <= tol {
                        on_face = true;
                    }
                }
                if on_face {
                    Membership::Boundary
                } else {
                    Membership::Interior
                }
            }
            Shape::Ball { center, radius } => {
                let r = distance(x, center);
                if r > *radius + tol {
                    Membership::Exterior
                } else if r >= *radius - tol {
                    Membership::Boundary
                } else {
                    Membership::Interior
                }
            }
        }
    }

    pub fn project(&self, x: &[T]) -> Result<Projection<T>> {
        self.check_point(x)?;
        let mut p = x.to_vec();
        let displacement = self.project_in_place(&mut p);
        Ok(Projection {
            point: p,
            hit_boundary: displacement > T::zero(),
            displacement,
        })
    }

    /// Replaces `x` by its Euclidean nearest point in `D̄` and returns the
    /// displacement `|x - p|`. Points of `D̄` are left bit-identical.
    pub(crate) fn project_in_place(&self, x: &mut [T]) -> T {
        match &self.shape {
            Shape::Box { lo, hi } => {
                let mut sq = T::zero();
                for ((xi, &l), &h) in x.iter_mut().zip(lo).zip(hi) {
                    let c = xi.max(l).min(h);
                    let dx = *xi - c;
                    sq += dx * dx;
                    *xi = c;
                }
                sq.sqrt()
            }
            Shape::Ball { center, radius } => {
                // Points within the boundary tolerance count as projected, which
                // keeps the map idempotent despite rounding of the radial scaling.
                let r = distance(x, center);
                if r <= *radius + self.tolerance {
                    return T::zero();
                }
                let scale = *radius / r;
                for (xi, &c) in x.iter_mut().zip(center) {
                    *xi = c + (*xi - c) * scale;
                }
                r - *radius
            }
        }
    }

    /// Outward unit normal at a boundary point.
    pub fn outward_normal(&self, x: &[T]) -> Result<Vec<T>> {
        self.check_point(x)?;
        if self.classify(x) != Membership::Boundary {
            return Err(Error::Precondition(format!(
                "outward normal requested at a non-boundary point {:?}",
                x.iter().map(|v| v.as_f64()).collect::<Vec<_>>()
            )));
        }
        Ok(self.normal_unchecked(x))
    }

    pub(crate) fn normal_unchecked(&self, x: &[T]) -> Vec<T> {
        let tol = self.tolerance;
        match &self.shape {
            Shape::Box { lo, hi } => {
                let mut n: Vec<T> = x
                    .iter()
                    .zip(lo)
                    .zip(hi)
                    .map(|((&xi, &l), &h)| {
                        if (xi - l).abs() <= tol {
                            -T::one()
                        } else if (xi - h).abs() <= tol {
                            T::one()
                        } else {
                            T::zero()
                        }
                    })
                    .collect();
                let len = norm(&n);
                n.iter_mut().for_each(|v| *v /= len);
                n
            }
            Shape::Ball { center, .. } => {
                let mut n: Vec<T> = x.iter().zip(center).map(|(&a, &c)| a - c).collect();
                let len = norm(&n);
                n.iter_mut().for_each(|v| *v /= len);
                n
            }
        }
    }
}

/// Reflected path and the two pushing terms produced by the one-dimensional
/// Skorokhod map: `x = w + lower - upper`.
#[derive(Debug, Clone, PartialEq)]
pub struct Skorokhod1d<T> {
    pub x: Vec<T>,
    /// Cumulative push away from `lo` (nondecreasing, grows only when `x = lo`).
    pub lower: Vec<T>,
    /// Cumulative push away from `hi`.
    pub upper: Vec<T>,
    pub iterations: usize,
}

impl<T: Scalar> Skorokhod1d<T> {
    /// Total local time `lower + upper`.
    pub fn local_time(&self) -> Vec<T> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(&a, &b)| a + b)
            .collect()
    }
}

const SKOROKHOD_MAX_ITERATIONS: usize = 100;
const SKOROKHOD_TOLERANCE: f64 = 1e-14;

/// Running-supremum push `sup_{j<=k} (level - v_j)^+` (sign +1) or
/// `sup_{j<=k} (v_j - level)^+` (sign -1).
fn running_push<T: Scalar>(v: impl Iterator<Item = T>, level: T, below: bool, out: &mut [T]) {
    let mut acc = T::zero();
    for (o, vk) in out.iter_mut().zip(v) {
        let gap = if below { level - vk } else { vk - level };
        if gap > acc {
            acc = gap;
        }
        *o = acc;
    }
}

/// Skorokhod map of a sampled path onto `[lo, hi]`; `hi` may be `+inf`.
///
/// The two-barrier map is the fixed point of alternating the one-sided maps,
/// iterated until the pushes change by less than `1e-14` (or 100 rounds).
pub fn skorokhod_1d<T: Scalar>(w: &[T], lo: T, hi: T) -> Result<Skorokhod1d<T>> {
    if w.is_empty() {
        return input("skorokhod map needs a nonempty path");
    }
    if !(lo < hi) || lo.is_nan() || hi.is_nan() || !lo.is_finite() {
        return input("skorokhod map needs finite lo < hi");
    }
    if !all_finite(w) {
        return input("skorokhod map input path must be finite");
    }
    if w[0] < lo || w[0] > hi {
        return input("skorokhod map requires w(0) in [lo, hi]");
    }
    let n = w.len();
    let mut lower = vec![T::zero(); n];
    let mut upper = vec![T::zero(); n];
    let mut next = vec![T::zero(); n];
    let mut iterations = 0;
    let tol = T::lit(SKOROKHOD_TOLERANCE);
    loop {
        iterations += 1;
        running_push(
            w.iter().zip(&upper).map(|(&a, &u)| a - u),
            lo,
            true,
            &mut next,
        );
        let mut change = sup_diff(&next, &lower);
        std::mem::swap(&mut lower, &mut next);
        if hi.is_finite() {
            running_push(
                w.iter().zip(&lower).map(|(&a, &l)| a + l),
                hi,
                false,
                &mut next,
            );
            change = change.max(sup_diff(&next, &upper));
            std::mem::swap(&mut upper, &mut next);
        }
        if change < tol || iterations >= SKOROKHOD_MAX_ITERATIONS {
            break;
        }
    }
    let x = w
        .iter()
        .zip(&lower)
        .zip(&upper)
        .map(|((&a, &l), &u)| (a + l - u).max(lo).min(hi))
        .collect();
    Ok(Skorokhod1d {
        x,
        lower,
        upper,
        iterations,
    })
}

fn sup_diff<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter()
        .zip(b)
        .fold(T::zero(), |m, (&x, &y)| m.max((x - y).abs()))
}
