//! Finite reversible Markov jump models and their Dirichlet forms.
//!
//! A model is a finite state space with a symmetrizing measure `m`, a jump
//! rate kernel `N(x, y)` in detailed balance with `m`, and a killing rate
//! `κ(x)`. The Lévy system clock is `H_t = t`, so `μ_H = m` and the symmetric
//! jump intensity is `J(x, y) = m(x) N(x, y)`.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{pairwise_sum, SymSpectrum};

/// Relative tolerance for detailed balance at construction.
pub const DETAILED_BALANCE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct StateSpace {
    labels: Vec<String>,
    positions: Option<Vec<Vec<f64>>>,
    m: Vec<f64>,
}

impl StateSpace {
    pub fn new(labels: Vec<String>, positions: Option<Vec<Vec<f64>>>, m: Vec<f64>) -> Result<Self> {
        if labels.len() < 2 {
            return Err(Error::invalid("state space needs at least 2 states"));
        }
        if m.len() != labels.len() {
            return Err(Error::invalid("reference measure length differs from state count"));
        }
        if let Some(x) = m.iter().position(|&w| !(w > 0.0 && w.is_finite())) {
            return Err(Error::invalid(format!("reference weight m({x}) must be positive and finite")));
        }
        if let Some(pos) = &positions {
            if pos.len() != labels.len() {
                return Err(Error::invalid("positions length differs from state count"));
            }
            let dim = pos[0].len();
            if pos.iter().any(|p| p.len() != dim || p.iter().any(|c| !c.is_finite())) {
                return Err(Error::invalid("positions must share one finite dimension"));
            }
            let mut sorted: Vec<&Vec<f64>> = pos.iter().collect();
            sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
            if sorted.windows(2).any(|w| w[0] == w[1]) {
                return Err(Error::invalid("positions must be pairwise distinct"));
            }
        }
        Ok(Self { labels, positions, m })
    }

    /// States labelled `0..n` without geometry.
    pub fn unlabeled(m: Vec<f64>) -> Result<Self> {
        let labels = (0..m.len()).map(|i| i.to_string()).collect();
        Self::new(labels, None, m)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn positions(&self) -> Option<&[Vec<f64>]> {
        self.positions.as_deref()
    }

    pub fn m(&self) -> &[f64] {
        &self.m
    }

    /// Euclidean distance between two states, when positions exist.
    pub fn distance(&self, x: usize, y: usize) -> Option<f64> {
        self.positions.as_ref().map(|p| euclid(&p[x], &p[y]))
    }

    /// Distance from the origin, when positions exist.
    pub fn radius(&self, x: usize) -> Option<f64> {
        self.positions
            .as_ref()
            .map(|p| p[x].iter().map(|c| c * c).sum::<f64>().sqrt())
    }
}

pub(crate) fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt()
}

/// A reversible (m-symmetric) Markov jump process on a finite state space.
#[derive(Debug, Clone, PartialEq)]
pub struct ReversibleModel {
    space: StateSpace,
    rates: DMatrix<f64>,
    kappa: Vec<f64>,
}

impl ReversibleModel {
    /// Validate and build a model: nonnegative rates with zero diagonal,
    /// nonnegative killing, detailed balance and irreducibility.
    pub fn build(space: StateSpace, rates: DMatrix<f64>, kappa: Vec<f64>) -> Result<Self> {
        let model = Self::build_reducible(space, rates, kappa)?;
        model.check_irreducible()?;
        Ok(model)
    }

    /// As [`ReversibleModel::build`] but without the irreducibility check.
    /// Degenerate chains (absorbing states, pure killing) need this.
    pub fn build_reducible(space: StateSpace, rates: DMatrix<f64>, kappa: Vec<f64>) -> Result<Self> {
        let n = space.len();
        if rates.nrows() != n || rates.ncols() != n {
            return Err(Error::invalid(format!("rate matrix must be {n}x{n}")));
        }
        if kappa.len() != n {
            return Err(Error::invalid("killing vector length differs from state count"));
        }
        for x in 0..n {
            if rates[(x, x)] != 0.0 {
                return Err(Error::invalid(format!("N({x},{x}) must be zero")));
            }
            if !(kappa[x] >= 0.0 && kappa[x].is_finite()) {
                return Err(Error::invalid(format!("kappa({x}) must be nonnegative and finite")));
            }
            for y in 0..n {
                let r = rates[(x, y)];
                if !(r >= 0.0 && r.is_finite()) {
                    return Err(Error::invalid(format!("N({x},{y}) must be nonnegative and finite")));
                }
            }
        }
        let m = space.m();
        for x in 0..n {
            for y in (x + 1)..n {
                let a = m[x] * rates[(x, y)];
                let b = m[y] * rates[(y, x)];
                let scale = a.abs().max(b.abs());
                if scale > 0.0 {
                    let residual = (a - b).abs() / scale;
                    if residual > DETAILED_BALANCE_TOL {
                        return Err(Error::DetailedBalanceViolation { x, y, residual });
                    }
                }
            }
        }
        Ok(Self { space, rates, kappa })
    }

    /// Strong connectivity of the support graph of `N`: forward and backward
    /// reachability from state 0.
    fn check_irreducible(&self) -> Result<()> {
        let n = self.len();
        for transpose in [false, true] {
            let mut seen = vec![false; n];
            let mut queue = VecDeque::from([0usize]);
            seen[0] = true;
            while let Some(x) = queue.pop_front() {
                for y in 0..n {
                    let r = if transpose { self.rates[(y, x)] } else { self.rates[(x, y)] };
                    if r > 0.0 && !seen[y] {
                        seen[y] = true;
                        queue.push_back(y);
                    }
                }
            }
            if let Some(unreachable) = seen.iter().position(|s| !s) {
                return Err(Error::NotIrreducible { unreachable });
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.space.len()
    }

    pub fn is_empty(&self) -> bool {
        self.space.is_empty()
    }

    pub fn space(&self) -> &StateSpace {
        &self.space
    }

    pub fn m(&self) -> &[f64] {
        self.space.m()
    }

    /// Jump rate kernel `N(x, y)`.
    pub fn rates(&self) -> &DMatrix<f64> {
        &self.rates
    }

    pub fn kappa(&self) -> &[f64] {
        &self.kappa
    }

    /// Symmetric jump intensity `J(x, y) = m(x) N(x, y)`.
    pub fn intensity(&self, x: usize, y: usize) -> f64 {
        self.space.m()[x] * self.rates[(x, y)]
    }

    /// Total event rate `q(x) = Σ_y N(x, y) + κ(x)`.
    pub fn total_rate(&self, x: usize) -> f64 {
        self.rates.row(x).sum() + self.kappa[x]
    }

    pub fn is_conservative(&self) -> bool {
        self.kappa.iter().all(|&k| k == 0.0)
    }

    /// `(Lf)(x) = Σ_y N(x,y)(f(y) - f(x)) - κ(x) f(x)`.
    pub fn generator(&self) -> DMatrix<f64> {
        let n = self.len();
        let mut l = self.rates.clone();
        for x in 0..n {
            l[(x, x)] = -self.total_rate(x);
        }
        l
    }

    /// `Lf` without forming the matrix.
    pub fn apply_generator(&self, f: &[f64]) -> Vec<f64> {
        let n = self.len();
        (0..n)
            .map(|x| {
                let jumps: f64 = (0..n).map(|y| self.rates[(x, y)] * (f[y] - f[x])).sum();
                jumps - self.kappa[x] * f[x]
            })
            .collect()
    }

    /// `E(f, g) = ½ Σ (f(x)-f(y))(g(x)-g(y)) J(x,y) + Σ f g κ m`.
    pub fn dirichlet_energy(&self, f: &[f64], g: &[f64]) -> f64 {
        let n = self.len();
        let m = self.m();
        let mut terms = Vec::with_capacity(n * n / 2 + n);
        for x in 0..n {
            for y in (x + 1)..n {
                let j = self.intensity(x, y);
                if j != 0.0 {
                    terms.push((f[x] - f[y]) * (g[x] - g[y]) * j);
                }
            }
            terms.push(f[x] * g[x] * self.kappa[x] * m[x]);
        }
        pairwise_sum(&terms)
    }

    /// Spectral decomposition of the generator in symmetrized form.
    pub fn spectrum(&self) -> Result<SymSpectrum> {
        SymSpectrum::new(&self.generator(), self.m())
    }

    /// `P_t = exp(tL)`.
    pub fn transition_semigroup(&self, t: f64) -> Result<DMatrix<f64>> {
        if !(t >= 0.0) {
            return Err(Error::invalid("time must be nonnegative"));
        }
        Ok(self.spectrum()?.exp(t))
    }

    /// Resolvent operator `G_α = (αI - L)^{-1}`, acting as `G_α f = Σ_y G(x,y) f(y)`.
    /// Use [`density_kernel`] to obtain the kernel with respect to `m`.
    pub fn resolvent(&self, alpha: f64) -> Result<DMatrix<f64>> {
        if !(alpha >= 0.0) {
            return Err(Error::invalid("resolvent parameter must be nonnegative"));
        }
        if alpha == 0.0 && self.is_conservative() {
            return Err(Error::SingularOperator(
                "alpha = 0 on a conservative chain; pass alpha > 0 or use a subprocess".into(),
            ));
        }
        let n = self.len();
        let op = DMatrix::identity(n, n) * alpha - self.generator();
        op.try_inverse()
            .filter(|g| g.iter().all(|v| v.is_finite()))
            .ok_or_else(|| Error::SingularOperator("alpha I - L is not invertible".into()))
    }

    /// Same jump kernel, killing rate `κ + α`.
    pub fn subprocess(&self, alpha: f64) -> Result<Self> {
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(Error::invalid("subprocess rate must be nonnegative"));
        }
        Ok(Self {
            space: self.space.clone(),
            rates: self.rates.clone(),
            kappa: self.kappa.iter().map(|k| k + alpha).collect(),
        })
    }

    /// Girsanov-tilted model: `m̃ = e^{-2u} m`, `Ñ(x,y) = e^{u(x)-u(y)} N(x,y)`,
    /// `κ̃ = e^{u} κ`.
    pub fn tilt(&self, u: &[f64]) -> Result<Self> {
        let n = self.len();
        if u.len() != n || u.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("tilt function must be finite on every state"));
        }
        let m: Vec<f64> = self.m().iter().zip(u).map(|(w, ux)| w * (-2.0 * ux).exp()).collect();
        let rates = DMatrix::from_fn(n, n, |x, y| {
            if x == y {
                0.0
            } else {
                (u[x] - u[y]).exp() * self.rates[(x, y)]
            }
        });
        let kappa = self.kappa.iter().zip(u).map(|(k, ux)| ux.exp() * k).collect();
        let space = StateSpace {
            labels: self.space.labels.clone(),
            positions: self.space.positions.clone(),
            m,
        };
        Ok(Self { space, rates, kappa })
    }

    /// Largest entrywise difference across `m`, `N` and `κ`.
    pub fn max_difference(&self, other: &Self) -> f64 {
        let dm = crate::linalg::max_abs_diff(self.m(), other.m());
        let dk = crate::linalg::max_abs_diff(&self.kappa, &other.kappa);
        let dn = (&self.rates - &other.rates).abs().max();
        dm.max(dk).max(dn)
    }

    pub fn to_document(&self) -> ModelDocument {
        let n = self.len();
        let mut triplets = Vec::new();
        for x in 0..n {
            for y in 0..n {
                if self.rates[(x, y)] != 0.0 {
                    triplets.push((x, y, self.rates[(x, y)]));
                }
            }
        }
        ModelDocument {
            states: self.space.labels.clone(),
            positions: self.space.positions.clone(),
            m: self.space.m.clone(),
            rates: triplets,
            kappa: self.kappa.clone(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_document())?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ModelDocument = serde_json::from_str(text)?;
        doc.into_model()
    }
}

/// Kernel of an operator matrix with respect to `m`: column `y` divided by `m(y)`.
pub fn density_kernel(op: &DMatrix<f64>, m: &[f64]) -> DMatrix<f64> {
    let mut k = op.clone();
    for (y, w) in m.iter().enumerate() {
        k.column_mut(y).unscale_mut(*w);
    }
    k
}

/// JSON form of a model; the rate kernel is a sparse `[x, y, N(x,y)]` list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    pub states: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub positions: Option<Vec<Vec<f64>>>,
    pub m: Vec<f64>,
    #[serde(rename = "N")]
    pub rates: Vec<(usize, usize, f64)>,
    pub kappa: Vec<f64>,
}

impl ModelDocument {
    pub fn into_model(self) -> Result<ReversibleModel> {
        let n = self.states.len();
        let mut rates = DMatrix::zeros(n, n);
        for &(x, y, v) in &self.rates {
            if x >= n || y >= n {
                return Err(Error::invalid(format!("rate triplet ({x}, {y}) out of range")));
            }
            rates[(x, y)] += v;
        }
        let space = StateSpace::new(self.states, self.positions, self.m)?;
        ReversibleModel::build(space, rates, self.kappa)
    }
}

/// Signed measure `μ(dx) = μ̂(x) m(dx)`, stored as its density.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothMeasure {
    density: Vec<f64>,
}

impl SmoothMeasure {
    pub fn new(density: Vec<f64>) -> Result<Self> {
        if density.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("measure density must be finite"));
        }
        Ok(Self { density })
    }

    pub fn zero(n: usize) -> Self {
        Self { density: vec![0.0; n] }
    }

    pub fn density(&self) -> &[f64] {
        &self.density
    }

    pub fn positive_part(&self) -> Vec<f64> {
        self.density.iter().map(|v| v.max(0.0)).collect()
    }

    pub fn negative_part(&self) -> Vec<f64> {
        self.density.iter().map(|v| (-v).max(0.0)).collect()
    }

    pub fn abs(&self) -> Vec<f64> {
        self.density.iter().map(|v| v.abs()).collect()
    }

    /// `|μ|({x}) = |μ̂(x)| m(x)`.
    pub fn atoms(&self, m: &[f64]) -> Vec<f64> {
        self.density.iter().zip(m).map(|(d, w)| d.abs() * w).collect()
    }

    pub fn integrate(&self, f: &[f64], m: &[f64]) -> f64 {
        crate::linalg::m_inner(&self.density, f, m)
    }

    pub fn sup_norm(&self) -> f64 {
        crate::linalg::sup_norm(&self.density)
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            density: self.density.iter().map(|v| v * c).collect(),
        }
    }
}

/// Bounded symmetric function on pairs of states, zero on the diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct JumpFunction {
    values: DMatrix<f64>,
}

impl JumpFunction {
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        let n = values.nrows();
        if values.ncols() != n {
            return Err(Error::invalid("jump function must be square"));
        }
        for x in 0..n {
            if values[(x, x)] != 0.0 {
                return Err(Error::invalid(format!("F({x},{x}) must vanish")));
            }
            for y in 0..n {
                let v = values[(x, y)];
                if !v.is_finite() {
                    return Err(Error::invalid("jump function must be finite"));
                }
                if v != values[(y, x)] {
                    return Err(Error::invalid(format!("F({x},{y}) != F({y},{x})")));
                }
            }
        }
        Ok(Self { values })
    }

    pub fn zero(n: usize) -> Self {
        Self {
            values: DMatrix::zeros(n, n),
        }
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[(x, y)]
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.abs().max()
    }

    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// `Lf` for a dense vector.
pub fn apply(l: &DMatrix<f64>, f: &[f64]) -> Vec<f64> {
    (l * DVector::from_column_slice(f)).as_slice().to_vec()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn path3() -> ReversibleModel {
        let space = StateSpace::unlabeled(vec![1.0; 3]).unwrap();
        let mut n = DMatrix::zeros(3, 3);
        n[(0, 1)] = 1.0;
        n[(1, 0)] = 1.0;
        n[(1, 2)] = 1.0;
        n[(2, 1)] = 1.0;
        ReversibleModel::build(space, n, vec![0.0; 3]).unwrap()
    }

    fn two_state(kappa: [f64; 2]) -> ReversibleModel {
        let space = StateSpace::unlabeled(vec![1.0, 1.0]).unwrap();
        let n = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        ReversibleModel::build(space, n, kappa.to_vec()).unwrap()
    }

    pub(crate) fn random_model(rng: &mut impl Rng, n: usize, killing: bool) -> ReversibleModel {
        let m: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..2.0)).collect();
        let mut rates = DMatrix::zeros(n, n);
        for x in 0..n {
            for y in (x + 1)..n {
                let j = if y == x + 1 || rng.random_bool(0.6) {
                    rng.random_range(0.2..2.0)
                } else {
                    0.0
                };
                rates[(x, y)] = j / m[x];
                rates[(y, x)] = j / m[y];
            }
        }
        let kappa = (0..n)
            .map(|_| if killing { rng.random_range(0.0..0.5) } else { 0.0 })
            .collect();
        ReversibleModel::build(StateSpace::unlabeled(m).unwrap(), rates, kappa).unwrap()
    }

    #[test]
    fn builds_symmetric_path_chain() {
        let model = path3();
        assert_eq!(model.len(), 3);
        assert!(model.is_conservative());
    }

    #[test]
    fn rejects_detailed_balance_violation() {
        let space = StateSpace::unlabeled(vec![1.0; 3]).unwrap();
        let mut n = DMatrix::zeros(3, 3);
        n[(0, 1)] = 2.0;
        n[(1, 0)] = 1.0;
        n[(1, 2)] = 1.0;
        n[(2, 1)] = 1.0;
        let err = ReversibleModel::build(space, n, vec![0.0; 3]).unwrap_err();
        assert!(matches!(err, Error::DetailedBalanceViolation { x: 0, y: 1, .. }));
    }

    #[test]
    fn rejects_disconnected_graph() {
        let space = StateSpace::unlabeled(vec![1.0; 4]).unwrap();
        let mut n = DMatrix::zeros(4, 4);
        n[(0, 1)] = 1.0;
        n[(1, 0)] = 1.0;
        n[(2, 3)] = 1.0;
        n[(3, 2)] = 1.0;
        let err = ReversibleModel::build(space, n, vec![0.0; 4]).unwrap_err();
        assert!(matches!(err, Error::NotIrreducible { unreachable: 2 }));
    }

    #[test]
    fn state_space_invariants() {
        assert!(StateSpace::unlabeled(vec![1.0]).is_err());
        assert!(StateSpace::unlabeled(vec![1.0, 0.0]).is_err());
        let dup = Some(vec![vec![0.0], vec![0.0]]);
        assert!(StateSpace::new(vec!["a".into(), "b".into()], dup, vec![1.0, 1.0]).is_err());
    }

    #[test]
    fn generator_two_state() {
        let l = two_state([0.0, 0.0]).generator();
        assert_eq!(l, DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 1.0, -1.0]));
        let l = two_state([1.0, 0.0]).generator();
        assert_eq!(l[(0, 0)], -2.0);
    }

    #[test]
    fn generator_is_m_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let model = random_model(&mut rng, 5, true);
            let l = model.generator();
            let m = model.m();
            for x in 0..5 {
                for y in 0..5 {
                    assert!((m[x] * l[(x, y)] - m[y] * l[(y, x)]).abs() <= 1e-14);
                }
            }
        }
    }

    #[test]
    fn energy_of_constants_and_two_state() {
        let model = path3();
        assert_eq!(model.dirichlet_energy(&[2.0; 3], &[2.0; 3]), 0.0);
        let two = two_state([0.0, 0.0]);
        assert!((two.dirichlet_energy(&[0.0, 1.0], &[0.0, 1.0]) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn energy_equals_generator_pairing() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let model = random_model(&mut rng, 6, true);
            for _ in 0..5 {
                let f: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
                let lf = model.apply_generator(&f);
                let pairing = -crate::linalg::m_inner(&lf, &f, model.m());
                assert!((model.dirichlet_energy(&f, &f) - pairing).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn semigroup_identity_and_mass() {
        let model = path3();
        let p0 = model.transition_semigroup(0.0).unwrap();
        assert!((p0 - DMatrix::<f64>::identity(3, 3)).abs().max() < 1e-15);
        for &t in &[0.1, 1.0, 25.0] {
            let p = model.transition_semigroup(t).unwrap();
            for x in 0..3 {
                assert!((p.row(x).sum() - 1.0).abs() < 1e-12);
            }
        }
        let killed = model.subprocess(1.0).unwrap();
        for &t in &[0.5, 3.0] {
            let p = killed.transition_semigroup(t).unwrap();
            for x in 0..3 {
                assert!((p.row(x).sum() - (-t).exp()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn resolvent_cases() {
        let two = two_state([0.0, 0.0]);
        assert!(matches!(two.resolvent(0.0), Err(Error::SingularOperator(_))));
        let g = two.resolvent(1.0).unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]) / 3.0;
        assert!((g - expected).abs().max() < 1e-15);
    }

    #[test]
    fn resolvent_equation_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let model = random_model(&mut rng, 5, false);
            let a = rng.random_range(0.1..3.0);
            let b = rng.random_range(0.1..3.0);
            let ga = model.resolvent(a).unwrap();
            let gb = model.resolvent(b).unwrap();
            let residual = (&ga - &gb - (&ga * &gb) * (b - a)).abs().max();
            assert!(residual <= 1e-10);
            if a < b {
                assert!(gb.iter().zip(ga.iter()).all(|(x, y)| *x <= *y + 1e-15));
            }
        }
    }

    #[test]
    fn subprocess_composes_and_matches_resolvent() {
        let model = path3();
        assert_eq!(model.subprocess(0.0).unwrap(), model);
        let once = model.subprocess(0.7).unwrap();
        let twice = model.subprocess(0.3).unwrap().subprocess(0.4).unwrap();
        assert!(once.max_difference(&twice) < 1e-15);
        let g0 = model.subprocess(1.0).unwrap().resolvent(0.0).unwrap();
        let g1 = model.resolvent(1.0).unwrap();
        assert!((g0 - g1).abs().max() <= 1e-12);
    }

    #[test]
    fn tilt_special_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let model = random_model(&mut rng, 5, true);
        assert!(model.tilt(&[0.0; 5]).unwrap().max_difference(&model) == 0.0);
        let c = 0.4;
        let t = model.tilt(&[c; 5]).unwrap();
        assert!((t.rates() - model.rates()).abs().max() < 1e-15);
        for x in 0..5 {
            assert!((t.m()[x] - (-2.0 * c).exp() * model.m()[x]).abs() < 1e-15);
            assert!((t.kappa()[x] - c.exp() * model.kappa()[x]).abs() < 1e-15);
        }
    }

    #[test]
    fn tilted_energy_matches_girsanov_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..20 {
            let model = random_model(&mut rng, 5, true);
            let u: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
            let tilted = model.tilt(&u).unwrap();
            // Rebuild the tilted model so detailed balance is checked again.
            let rebuilt = ReversibleModel::build(
                tilted.space().clone(),
                tilted.rates().clone(),
                tilted.kappa().to_vec(),
            );
            assert!(rebuilt.is_ok());
            let f: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut direct = 0.0;
            for x in 0..5 {
                for y in 0..5 {
                    direct += 0.5 * (f[x] - f[y]).powi(2) * (-u[x] - u[y]).exp() * model.intensity(x, y);
                }
                direct += f[x] * f[x] * (-u[x]).exp() * model.kappa()[x] * model.m()[x];
            }
            assert!((tilted.dirichlet_energy(&f, &f) - direct).abs() <= 1e-12);
        }
    }

    #[test]
    fn tilt_round_trip_recovers_model() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let model = random_model(&mut rng, 6, true);
        let u: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
        let neg: Vec<f64> = u.iter().map(|v| -v).collect();
        let back = model.tilt(&u).unwrap().tilt(&neg).unwrap();
        assert!(back.max_difference(&model) <= 1e-12);
    }

    #[test]
    fn json_round_trip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let model = random_model(&mut rng, 5, true);
        let back = ReversibleModel::from_json(&model.to_json().unwrap()).unwrap();
        assert_eq!(back, model);
    }

    #[test]
    fn smooth_measure_parts() {
        let mu = SmoothMeasure::new(vec![1.5, -2.0, 0.0]).unwrap();
        assert_eq!(mu.positive_part(), vec![1.5, 0.0, 0.0]);
        assert_eq!(mu.negative_part(), vec![0.0, 2.0, 0.0]);
        assert!(mu.positive_part().iter().zip(mu.negative_part()).all(|(p, q)| p * q == 0.0));
    }

    #[test]
    fn jump_function_invariants() {
        let bad = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 2.0, 0.0]);
        assert!(JumpFunction::new(bad).is_err());
        let diag = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 0.0]);
        assert!(JumpFunction::new(diag).is_err());
    }
}
