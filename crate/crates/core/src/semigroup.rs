//! The perturbed Feynman-Kac semigroup `T^{u,μ,F}_t`.
//!
//! The three additive functionals add in the exponent, so their densities
//! add in one generator:
//!
//! ```text
//! A(x,y) = N(x,y) e^{F(x,y)}                        (x ≠ y)
//! A(x,x) = -Σ_y N(x,y) - κ(x) + μ̂(x) + (Lu)(x)
//! ```
//!
//! `T_t = exp(tA)` is then evaluated exactly through the symmetrized
//! eigendecomposition, or estimated by Monte Carlo over sampled paths.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::functionals::{monte_carlo, nu_measure, Estimate, Perturbation};
use crate::linalg::{m_symmetry_residual, max_abs_diff, sup_norm, SymSpectrum};
use crate::markov::{JumpFunction, ReversibleModel, SmoothMeasure};

/// The m-symmetric generator of `T^{u,μ,F}_t` with its spectrum.
#[derive(Debug, Clone)]
pub struct PerturbedOperator {
    model: ReversibleModel,
    perturbation: Perturbation,
    matrix: DMatrix<f64>,
    spectrum: SymSpectrum,
}

impl PerturbedOperator {
    pub fn model(&self) -> &ReversibleModel {
        &self.model
    }

    pub fn perturbation(&self) -> &Perturbation {
        &self.perturbation
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn spectrum(&self) -> &SymSpectrum {
        &self.spectrum
    }

    pub fn m(&self) -> &[f64] {
        self.model.m()
    }

    pub fn len(&self) -> usize {
        self.model.len()
    }

    pub fn is_empty(&self) -> bool {
        self.model.is_empty()
    }

    /// `exp(tA)`.
    pub fn kernel(&self, t: f64) -> DMatrix<f64> {
        self.spectrum.exp(t)
    }

    pub fn symmetry_residual(&self) -> f64 {
        m_symmetry_residual(&self.matrix, self.m())
    }
}

/// Build the generator of `T^{u,μ,F}_t` for `model` and `pert`.
pub fn fk_generator(model: &ReversibleModel, pert: &Perturbation) -> Result<PerturbedOperator> {
    let n = model.len();
    if pert.len() != n {
        return Err(Error::invalid("perturbation size differs from the model"));
    }
    let lu = model.apply_generator(&pert.u);
    let rates = model.rates();
    let mut a = DMatrix::zeros(n, n);
    for x in 0..n {
        for y in 0..n {
            if x != y && rates[(x, y)] != 0.0 {
                a[(x, y)] = rates[(x, y)] * pert.f.get(x, y).exp();
            }
        }
        a[(x, x)] = -model.total_rate(x) + pert.mu.density()[x] + lu[x];
    }
    let spectrum = SymSpectrum::new(&a, model.m())?;
    Ok(PerturbedOperator {
        model: model.clone(),
        perturbation: pert.clone(),
        matrix: a,
        spectrum,
    })
}

/// `T_t f = exp(tA) f`.
pub fn fk_apply_exact(op: &PerturbedOperator, t: f64, f: &[f64]) -> Result<Vec<f64>> {
    if !(t >= 0.0) {
        return Err(Error::invalid("time must be nonnegative"));
    }
    if f.len() != op.len() {
        return Err(Error::invalid("function size differs from the model"));
    }
    Ok(op.spectrum.apply_exp(t, f).as_slice().to_vec())
}

/// Per-state Monte Carlo estimate of `T_t f(x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub estimate: Vec<f64>,
    pub stderr: Vec<f64>,
}

/// Monte Carlo estimate of `E_x[exp(N^u_t + A^μ_t + Σ F) f(X_t); t < ζ]`
/// for every starting state.
pub fn fk_apply_mc(
    model: &ReversibleModel,
    pert: &Perturbation,
    t: f64,
    f: &[f64],
    n_paths: usize,
    seed: u64,
) -> Result<McEstimate> {
    if n_paths < 100 {
        return Err(Error::invalid("n_paths must be at least 100"));
    }
    if !(t > 0.0) {
        return Err(Error::invalid("time must be positive"));
    }
    if f.len() != model.len() || pert.len() != model.len() {
        return Err(Error::invalid("input sizes differ from the model"));
    }
    let lu = model.apply_generator(&pert.u);
    let mut estimate = Vec::with_capacity(model.len());
    let mut stderr = Vec::with_capacity(model.len());
    for x0 in 0..model.len() {
        let est: Estimate = monte_carlo(model, x0, t, n_paths, seed, |path| match path.state_at(t) {
            Some(x) if f[x] != 0.0 => pert.exponent(path, &lu, t).exp() * f[x],
            _ => 0.0,
        })?;
        estimate.push(est.mean);
        stderr.push(est.stderr);
    }
    Ok(McEstimate { estimate, stderr })
}

/// Both sides of the Girsanov reduction and their max-norm difference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reduction {
    pub lhs: Vec<f64>,
    pub rhs: Vec<f64>,
    pub residual: f64,
    /// `residual / max(1, ‖lhs‖_∞)`; the semigroup grows like `e^{t·top}`,
    /// so at large `t` only this scale-free form is meaningful in f64.
    pub relative: f64,
}

/// Operator of the tilted model with time-density `μ̂ - ν̂` and the same `F`.
///
/// On the tilted process the Revuz measure of the reduced additive
/// functional is `e^{-2u}(μ - ν)`, whose density with respect to
/// `m̃ = e^{-2u} m` is again `μ̂ - ν̂`.
pub fn reduced_operator(model: &ReversibleModel, pert: &Perturbation) -> Result<PerturbedOperator> {
    reduced_operator_with_nu(model, pert, &nu_measure(model, &pert.u))
}

pub(crate) fn reduced_operator_with_nu(
    model: &ReversibleModel,
    pert: &Perturbation,
    nu: &SmoothMeasure,
) -> Result<PerturbedOperator> {
    let tilted = model.tilt(&pert.u)?;
    let density = pert
        .mu
        .density()
        .iter()
        .zip(nu.density())
        .map(|(a, b)| a - b)
        .collect();
    let reduced = Perturbation::new(vec![0.0; model.len()], SmoothMeasure::new(density)?, pert.f.clone())?;
    fk_generator(&tilted, &reduced)
}

/// Evaluate `T^{u,μ,F}_t f` directly and through `e^{-u} T̃^{μ-ν,F}_t (e^u f)`.
pub fn reduce_via_girsanov(model: &ReversibleModel, pert: &Perturbation, t: f64, f: &[f64]) -> Result<Reduction> {
    reduce_with_nu(model, pert, t, f, &nu_measure(model, &pert.u))
}

/// As [`reduce_via_girsanov`] with a caller-supplied `ν`; used to check that
/// a wrong `ν` is detected.
pub fn reduce_with_nu(
    model: &ReversibleModel,
    pert: &Perturbation,
    t: f64,
    f: &[f64],
    nu: &SmoothMeasure,
) -> Result<Reduction> {
    let direct = fk_generator(model, pert)?;
    let lhs = fk_apply_exact(&direct, t, f)?;
    let reduced = reduced_operator_with_nu(model, pert, nu)?;
    let lifted: Vec<f64> = f.iter().zip(&pert.u).map(|(fx, ux)| ux.exp() * fx).collect();
    let rhs: Vec<f64> = fk_apply_exact(&reduced, t, &lifted)?
        .iter()
        .zip(&pert.u)
        .map(|(g, ux)| (-ux).exp() * g)
        .collect();
    let residual = max_abs_diff(&lhs, &rhs);
    let relative = residual / sup_norm(&lhs).max(1.0);
    Ok(Reduction {
        lhs,
        rhs,
        residual,
        relative,
    })
}

/// `‖K‖_{∞,∞} = max_x Σ_y K(x,y)` for a nonnegative kernel.
pub fn inf_norm(kernel: &DMatrix<f64>) -> f64 {
    kernel.row_iter().map(|r| r.sum()).fold(0.0, f64::max)
}

/// `‖K‖_{1,1}` on `L^1(m)`: `max_y Σ_x m(x) K(x,y) / m(y)`.
pub fn one_norm(kernel: &DMatrix<f64>, m: &[f64]) -> f64 {
    (0..kernel.ncols())
        .map(|y| (0..kernel.nrows()).map(|x| m[x] * kernel[(x, y)]).sum::<f64>() / m[y])
        .fold(0.0, f64::max)
}

/// Zero perturbation on `model` with potential density `mu`.
pub fn schrodinger(model: &ReversibleModel, mu: Vec<f64>) -> Result<PerturbedOperator> {
    fk_generator(model, &Perturbation::potential(SmoothMeasure::new(mu)?))
}

/// `A f` for a dense vector.
pub fn apply_operator(op: &PerturbedOperator, f: &[f64]) -> Vec<f64> {
    (op.matrix() * DVector::from_column_slice(f)).as_slice().to_vec()
}

/// Zero jump function helper for callers that only perturb by `u` or `μ`.
pub fn no_jumps(n: usize) -> JumpFunction {
    JumpFunction::zero(n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::m_inner;
    use crate::suite::{random_instance, InstanceBounds};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_perturbation_is_generator() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let inst = random_instance(&mut rng, 5, InstanceBounds::default());
        let op = fk_generator(&inst.model, &Perturbation::zero(5)).unwrap();
        assert_eq!(op.matrix(), &inst.model.generator());
    }

    #[test]
    fn potential_only_adds_diagonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let inst = random_instance(&mut rng, 5, InstanceBounds::default());
        let v: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
        let op = schrodinger(&inst.model, v.clone()).unwrap();
        let expected = inst.model.generator() + DMatrix::from_diagonal(&DVector::from_vec(v));
        assert!((op.matrix() - expected).abs().max() < 1e-15);
    }

    #[test]
    fn operator_is_m_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let inst = random_instance(&mut rng, 5, InstanceBounds::default());
            let op = fk_generator(&inst.model, &inst.perturbation).unwrap();
            assert!(op.symmetry_residual() <= 1e-12);
            let f: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
            let g: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
            let lhs = m_inner(&apply_operator(&op, &f), &g, op.m());
            let rhs = m_inner(&f, &apply_operator(&op, &g), op.m());
            assert!((lhs - rhs).abs() <= 1e-12);
        }
    }

    #[test]
    fn exact_semigroup_basics() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let inst = random_instance(&mut rng, 5, InstanceBounds::default());
        let op = fk_generator(&inst.model, &inst.perturbation).unwrap();
        let f = [0.3, -1.0, 2.0, 0.0, 0.5];
        assert!(max_abs_diff(&fk_apply_exact(&op, 0.0, &f).unwrap(), &f) < 1e-14);
        let (s, t) = (0.7, 1.9);
        let once = fk_apply_exact(&op, s + t, &f).unwrap();
        let twice = fk_apply_exact(&op, s, &fk_apply_exact(&op, t, &f).unwrap()).unwrap();
        assert!(max_abs_diff(&once, &twice) <= 1e-10);
        let k = op.kernel(1.0);
        assert!(k.iter().all(|&v| v > 0.0));
    }

    #[test]
    fn constant_potential_scales_semigroup() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let inst = random_instance(&mut rng, 5, InstanceBounds::default());
        let c = 0.6;
        let op = schrodinger(&inst.model, vec![-c; 5]).unwrap();
        let t = 2.0;
        let f = [1.0, 2.0, 3.0, 4.0, 5.0];
        let p = inst.model.transition_semigroup(t).unwrap() * DVector::from_column_slice(&f);
        let expected: Vec<f64> = p.iter().map(|v| (-c * t).exp() * v).collect();
        assert!(max_abs_diff(&fk_apply_exact(&op, t, &f).unwrap(), &expected) < 1e-12);
    }

    #[test]
    fn kernel_is_m_symmetric_and_norms_are_dual() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..10 {
            let inst = random_instance(&mut rng, 5, InstanceBounds::default());
            let op = fk_generator(&inst.model, &inst.perturbation).unwrap();
            let k = op.kernel(1.5);
            assert!(m_symmetry_residual(&k, op.m()) <= 1e-12);
            let (a, b) = (inf_norm(&k), one_norm(&k, op.m()));
            assert!((a - b).abs() <= 1e-12 * a.max(1.0));
        }
    }

    #[test]
    fn mc_trivial_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let inst = random_instance(&mut rng, 4, InstanceBounds::default());
        let model = inst.model.subprocess(0.0).unwrap();
        let conservative = crate::markov::ReversibleModel::build(
            model.space().clone(),
            model.rates().clone(),
            vec![0.0; 4],
        )
        .unwrap();
        let ones = fk_apply_mc(&conservative, &Perturbation::zero(4), 1.0, &[1.0; 4], 200, 1).unwrap();
        assert!(ones.estimate.iter().all(|&v| v == 1.0));
        assert!(ones.stderr.iter().all(|&v| v == 0.0));
        let zeros = fk_apply_mc(&inst.model, &inst.perturbation, 1.0, &[0.0; 4], 200, 1).unwrap();
        assert!(zeros.estimate.iter().all(|&v| v == 0.0));
        assert!(fk_apply_mc(&inst.model, &inst.perturbation, 1.0, &[1.0; 4], 99, 1).is_err());
    }

    #[test]
    fn mc_matches_exact_on_one_seed() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let inst = random_instance(&mut rng, 4, InstanceBounds::default());
        let f = [1.0, 0.5, -0.3, 2.0];
        let op = fk_generator(&inst.model, &inst.perturbation).unwrap();
        let exact = fk_apply_exact(&op, 1.0, &f).unwrap();
        let mc = fk_apply_mc(&inst.model, &inst.perturbation, 1.0, &f, 20_000, 17).unwrap();
        for x in 0..4 {
            assert!((mc.estimate[x] - exact[x]).abs() <= 4.0 * mc.stderr[x]);
        }
    }

    #[test]
    fn reduction_trivial_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let inst = random_instance(&mut rng, 5, InstanceBounds::default());
        let f = [1.0, -1.0, 0.5, 0.2, 0.0];
        let mut pert = inst.perturbation.clone();
        pert.u = vec![0.0; 5];
        let r = reduce_via_girsanov(&inst.model, &pert, 1.0, &f).unwrap();
        assert!(r.residual <= 1e-14);
        pert.u = vec![0.37; 5];
        let r = reduce_via_girsanov(&inst.model, &pert, 1.0, &f).unwrap();
        assert!(r.residual <= 1e-12);
    }

    #[test]
    fn wrong_nu_breaks_reduction() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let inst = random_instance(&mut rng, 5, InstanceBounds::default());
        let f = [1.0; 5];
        let nu = nu_measure(&inst.model, &inst.perturbation.u).scaled(-1.0);
        let r = reduce_with_nu(&inst.model, &inst.perturbation, 1.0, &f, &nu).unwrap();
        assert!(r.residual > 1e-4);
    }

    #[test]
    fn strong_continuity_at_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let inst = random_instance(&mut rng, 5, InstanceBounds::default());
        let op = fk_generator(&inst.model, &inst.perturbation).unwrap();
        let f = [1.0, 2.0, -1.0, 0.0, 0.5];
        let mut prev = f64::INFINITY;
        for k in 1..8 {
            let t = 10f64.powi(-k);
            let d = max_abs_diff(&fk_apply_exact(&op, t, &f).unwrap(), &f);
            assert!(d < prev);
            prev = d;
        }
        assert!(prev < 1e-5);
    }
}
