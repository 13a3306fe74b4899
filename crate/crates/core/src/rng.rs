//! Counter-based random substreams.
//!
//! Every random quantity is drawn from a ChaCha stream selected by the master
//! seed plus a tuple `(purpose, namespace, population, replica, particle)`. Results
//! therefore do not depend on the order in which work is scheduled, and
//! different particle counts or replicas never share noise.

use crate::scalar::Scalar;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Purpose {
    Noise,
    Initial,
    Reference,
    Validation,
    Dictionary,
    BoundarySampling,
    Bridge,
    Policy,
    Weights,
}

impl Purpose {
    fn tag(self) -> u64 {
        match self {
            Purpose::Noise => 1,
            Purpose::Initial => 2,
            Purpose::Reference => 3,
            Purpose::Validation => 4,
            Purpose::Dictionary => 5,
            Purpose::BoundarySampling => 6,
            Purpose::Bridge => 7,
            Purpose::Policy => 8,
            Purpose::Weights => 9,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamKey {
    pub seed: u64,
    pub purpose: Purpose,
    /// Separates independent studies sharing one master seed (e.g. a
    /// reference solution and the ensembles compared against it).
    pub namespace: u64,
    pub population: u64,
    pub replica: u64,
    pub particle: u64,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl StreamKey {
    pub fn new(seed: u64, purpose: Purpose) -> Self {
        Self {
            seed,
            purpose,
            namespace: 0,
            population: 0,
            replica: 0,
            particle: 0,
        }
    }

    /// Noise stream of particle `i` in replica `replica` of an `n`-particle system.
    pub fn particle(seed: u64, n: usize, replica: u64, i: usize) -> Self {
        Self {
            seed,
            purpose: Purpose::Noise,
            namespace: 0,
            population: n as u64,
            replica,
            particle: i as u64,
        }
    }

    pub fn with_purpose(mut self, purpose: Purpose) -> Self {
        self.purpose = purpose;
        self
    }

    pub fn with_namespace(mut self, namespace: u64) -> Self {
        self.namespace = namespace;
        self
    }

    pub fn with_replica(mut self, replica: u64) -> Self {
        self.replica = replica;
        self
    }

    pub fn with_particle(mut self, particle: u64) -> Self {
        self.particle = particle;
        self
    }

    fn stream_id(&self) -> u64 {
        let mut h = splitmix(self.purpose.tag());
        for v in [self.namespace, self.population, self.replica, self.particle] {
            h = splitmix(h ^ v);
        }
        h
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream_id());
        rng
    }
}

/// `n_steps` Brownian increments of dimension `d1`, each `N(0, dt I)`,
/// row-major by step.
pub fn brownian_increments<T: Scalar>(key: StreamKey, n_steps: usize, d1: usize, dt: T) -> Vec<T> {
    let mut rng = key.rng();
    let scale = dt.as_f64().sqrt();
    (0..n_steps * d1)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            T::lit(z * scale)
        })
        .collect()
}

/// Brownian increments on a uniform grid that can be refined by midpoint
/// bridge sampling, so coarse and fine levels are the same Brownian path.
#[derive(Debug, Clone, PartialEq)]
pub struct BrownianPath<T> {
    pub dt: T,
    pub dim: usize,
    pub increments: Vec<T>,
}

impl<T: Scalar> BrownianPath<T> {
    pub fn sample(key: StreamKey, n_steps: usize, dim: usize, dt: T) -> Self {
        Self {
            dt,
            dim,
            increments: brownian_increments(key, n_steps, dim, dt),
        }
    }

    pub fn n_steps(&self) -> usize {
        self.increments.len() / self.dim
    }

    /// Halves the step: conditional on `ΔW` over `[a, a+h]`, the midpoint
    /// increment is `ΔW/2 + (√h / 2) Z`.
    pub fn refine(&self, key: StreamKey) -> Self {
        let mut rng = key.with_purpose(Purpose::Bridge).rng();
        let half = T::lit(0.5);
        let spread = self.dt.sqrt() * half;
        let mut out = Vec::with_capacity(self.increments.len() * 2);
        for step in self.increments.chunks_exact(self.dim) {
            let mut first = Vec::with_capacity(self.dim);
            let mut second = Vec::with_capacity(self.dim);
            for &dw in step {
                let z: f64 = StandardNormal.sample(&mut rng);
                let dev = spread * T::lit(z);
                first.push(dw * half + dev);
                second.push(dw * half - dev);
            }
            out.extend(first);
            out.extend(second);
        }
        Self {
            dt: self.dt * half,
            dim: self.dim,
            increments: out,
        }
    }

    /// Sum of consecutive pairs of increments (inverse of [`refine`](Self::refine)).
    pub fn coarsen(&self) -> Self {
        assert!(self.n_steps() % 2 == 0, "coarsen needs an even step count");
        let d = self.dim;
        let increments = self
            .increments
            .chunks_exact(2 * d)
            .flat_map(|pair| (0..d).map(move |j| pair[j] + pair[d + j]))
            .collect();
        Self {
            dt: self.dt + self.dt,
            dim: d,
            increments,
        }
    }

    /// `W(t_k)` for `k = 0..=n`, starting from zero, row-major.
    pub fn cumulative(&self) -> Vec<T> {
        let d = self.dim;
        let mut out = vec![T::zero(); d];
        for step in self.increments.chunks_exact(d) {
            let base = out.len() - d;
            for j in 0..d {
                let v = out[base + j] + step[j];
                out.push(v);
            }
        }
        out
    }
}
