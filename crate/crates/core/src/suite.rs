//! Seeded random instances for the identity and spectral suites.

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::functionals::Perturbation;
use crate::markov::{JumpFunction, ReversibleModel, SmoothMeasure, StateSpace};

/// Sup-norm bounds for the random perturbation and the model's rate ranges.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InstanceBounds {
    pub u: f64,
    pub mu: f64,
    pub f: f64,
    /// Upper bound of the uniform killing rate; 0 gives a conservative chain.
    pub kappa: f64,
    /// Probability of an edge beyond the spanning path.
    pub edge_probability: f64,
}

impl Default for InstanceBounds {
    fn default() -> Self {
        Self {
            u: 1.0,
            mu: 1.0,
            f: 1.0,
            kappa: 0.5,
            edge_probability: 0.6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Instance {
    pub model: ReversibleModel,
    pub perturbation: Perturbation,
    /// Test function for semigroup applications.
    pub f: Vec<f64>,
}

/// Random irreducible reversible chain on `n ≥ 2` states with random
/// `m ∈ [0.5, 2)`, symmetric intensities `J ∈ [0.2, 2)` on a connected graph
/// and killing `κ ∈ [0, bounds.kappa)`.
pub fn random_model(rng: &mut impl Rng, n: usize, bounds: InstanceBounds) -> ReversibleModel {
    let m: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..2.0)).collect();
    let mut rates = DMatrix::zeros(n, n);
    for x in 0..n {
        for y in (x + 1)..n {
            if y == x + 1 || rng.random_bool(bounds.edge_probability) {
                let j = rng.random_range(0.2..2.0);
                rates[(x, y)] = j / m[x];
                rates[(y, x)] = j / m[y];
            }
        }
    }
    let kappa = (0..n)
        .map(|_| {
            if bounds.kappa > 0.0 {
                rng.random_range(0.0..bounds.kappa)
            } else {
                0.0
            }
        })
        .collect();
    ReversibleModel::build(StateSpace::unlabeled(m).expect("positive weights"), rates, kappa)
        .expect("a spanning path keeps the chain irreducible")
}

fn uniform(rng: &mut impl Rng, bound: f64) -> f64 {
    if bound > 0.0 {
        rng.random_range(-bound..=bound)
    } else {
        0.0
    }
}

/// Random perturbation with `‖u‖_∞ ≤ b.u`, `‖μ̂‖_∞ ≤ b.mu`, `‖F‖_∞ ≤ b.f`.
pub fn random_perturbation(rng: &mut impl Rng, n: usize, bounds: InstanceBounds) -> Perturbation {
    let u = (0..n).map(|_| uniform(rng, bounds.u)).collect();
    let mu = (0..n).map(|_| uniform(rng, bounds.mu)).collect();
    let mut f = DMatrix::zeros(n, n);
    for x in 0..n {
        for y in (x + 1)..n {
            let v = uniform(rng, bounds.f);
            f[(x, y)] = v;
            f[(y, x)] = v;
        }
    }
    Perturbation::new(
        u,
        SmoothMeasure::new(mu).expect("finite"),
        JumpFunction::new(f).expect("symmetric with zero diagonal"),
    )
    .expect("consistent sizes")
}

pub fn random_instance(rng: &mut impl Rng, n: usize, bounds: InstanceBounds) -> Instance {
    let model = random_model(rng, n, bounds);
    let perturbation = random_perturbation(rng, n, bounds);
    let f = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    Instance { model, perturbation, f }
}

/// `count` instances on `n` states drawn from one seeded stream.
pub fn instance_suite(seed: u64, count: usize, n: usize, bounds: InstanceBounds) -> Vec<Instance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| random_instance(&mut rng, n, bounds)).collect()
}
