//! Kato-class checks: `K`, `K_∞`, `K_1`, `J`, `J_∞`, the Stollmann-Voigt
//! inequality and the metric criteria for stable-like lattices.
//!
//! Potentials use the operator form of the resolvent, so
//! `G_α(1_S |μ|)(x) = Σ_{y∈S} Gop(x,y) |μ̂(y)|`.

use std::fmt;

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{linear_fit, SymSpectrum};
use crate::markov::{euclid, JumpFunction, ReversibleModel, SmoothMeasure};

/// States that can be handled by exact subset search.
pub const EXACT_LIMIT: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum KatoClass {
    #[serde(rename = "K")]
    K,
    #[serde(rename = "K_inf")]
    KInf,
    #[serde(rename = "K_1")]
    K1,
    #[serde(rename = "J")]
    J,
    #[serde(rename = "J_inf")]
    JInf,
}

impl fmt::Display for KatoClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            KatoClass::K => "K",
            KatoClass::KInf => "K_inf",
            KatoClass::K1 => "K_1",
            KatoClass::J => "J",
            KatoClass::JInf => "J_inf",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CertVerdict {
    Pass,
    Fail,
    HeuristicPass,
}

impl CertVerdict {
    pub fn passed(self) -> bool {
        !matches!(self, CertVerdict::Fail)
    }
}

impl fmt::Display for CertVerdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CertVerdict::Pass => "pass",
            CertVerdict::Fail => "fail",
            CertVerdict::HeuristicPass => "heuristic-pass",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    /// The set `K` as a list of states.
    pub k_set: Vec<usize>,
    pub delta: f64,
    /// Value (or certified upper bound) of `sup_B ‖G(1_{K^c ∪ B}|μ|)‖_∞`.
    pub achieved_sup: f64,
    pub beta1: Option<f64>,
    /// Whether the supremum over `B` was computed exactly.
    pub exact: bool,
}

/// A `K`-type curve point: radius, `sup_B ‖G(1_{K^c∪B}|μ|)‖_∞` at the best δ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub radius: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KatoCertificate {
    pub class: KatoClass,
    pub verdict: CertVerdict,
    pub witness: Witness,
    pub alpha: f64,
    pub eps: Option<f64>,
    pub t_grid: Option<Vec<f64>>,
    /// Modulus values on `t_grid` (classes K and J).
    pub modulus: Option<Vec<f64>>,
    /// Best value per nested set, in search order (classes K_inf and J_inf).
    pub curve: Vec<CurvePoint>,
}

impl KatoCertificate {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn check_measure(model: &ReversibleModel, mu: &SmoothMeasure) -> Result<()> {
    if mu.density().len() != model.len() {
        return Err(Error::invalid("measure size differs from the model"));
    }
    Ok(())
}

/// Resolvent operator for potentials, mapping singularity to `NotTransient`.
pub fn potential_operator(model: &ReversibleModel, alpha: f64) -> Result<DMatrix<f64>> {
    if alpha == 0.0 && model.is_conservative() {
        return Err(Error::NotTransient(
            "alpha = 0 on a conservative chain; use alpha > 0".into(),
        ));
    }
    model.resolvent(alpha).map_err(|e| match e {
        Error::SingularOperator(msg) => Error::NotTransient(msg),
        other => other,
    })
}

/// `G_α ν` for a nonnegative density `nu`.
pub fn potential(gop: &DMatrix<f64>, density: &[f64]) -> Vec<f64> {
    (0..gop.nrows())
        .map(|x| (0..gop.ncols()).map(|y| gop[(x, y)] * density[y]).sum())
        .collect()
}

/// `sup_x ∫_0^t (P_s |μ̂|)(x) ds` by adaptive Simpson quadrature in `s`
/// (absolute tolerance 1e-10).
pub fn kato_modulus(model: &ReversibleModel, mu: &SmoothMeasure, t: f64) -> Result<f64> {
    check_measure(model, mu)?;
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::invalid("time must be positive"));
    }
    let spec = model.spectrum()?;
    Ok(modulus_with(&spec, &mu.abs(), t))
}

fn modulus_with(spec: &SymSpectrum, abs: &[f64], t: f64) -> f64 {
    let f = |s: f64| spec.apply_exp(s, abs).as_slice().to_vec();
    let a = f(0.0);
    let b = f(t);
    let c = f(0.5 * t);
    let whole = simpson(&a, &c, &b, t);
    let integral = adaptive_simpson(&f, 0.0, t, &a, &c, &b, &whole, 1e-10, 40);
    integral.into_iter().fold(0.0, f64::max)
}

fn simpson(fa: &[f64], fm: &[f64], fb: &[f64], h: f64) -> Vec<f64> {
    fa.iter()
        .zip(fm)
        .zip(fb)
        .map(|((a, m), b)| h / 6.0 * (a + 4.0 * m + b))
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn adaptive_simpson(
    f: &impl Fn(f64) -> Vec<f64>,
    a: f64,
    b: f64,
    fa: &[f64],
    fm: &[f64],
    fb: &[f64],
    whole: &[f64],
    tol: f64,
    depth: u32,
) -> Vec<f64> {
    let m = 0.5 * (a + b);
    let h = b - a;
    let flm = f(0.5 * (a + m));
    let frm = f(0.5 * (m + b));
    let left = simpson(fa, &flm, fm, 0.5 * h);
    let right = simpson(fm, &frm, fb, 0.5 * h);
    let err = left
        .iter()
        .zip(&right)
        .zip(whole)
        .map(|((l, r), w)| (l + r - w).abs())
        .fold(0.0, f64::max);
    if depth == 0 || err <= 15.0 * tol {
        return left
            .iter()
            .zip(&right)
            .zip(whole)
            .map(|((l, r), w)| l + r + (l + r - w) / 15.0)
            .collect();
    }
    let l = adaptive_simpson(f, a, m, fa, &flm, fm, &left, 0.5 * tol, depth - 1);
    let r = adaptive_simpson(f, m, b, fm, &frm, fb, &right, 0.5 * tol, depth - 1);
    l.iter().zip(&r).map(|(x, y)| x + y).collect()
}

/// Certificate for class `K` on a time grid: passes when the modulus at the
/// smallest time is below `eps`.
pub fn k_check(model: &ReversibleModel, mu: &SmoothMeasure, t_grid: &[f64], eps: f64) -> Result<KatoCertificate> {
    check_measure(model, mu)?;
    if t_grid.is_empty() {
        return Err(Error::invalid("t_grid must not be empty"));
    }
    let spec = model.spectrum()?;
    let abs = mu.abs();
    let values: Vec<f64> = t_grid.iter().map(|&t| modulus_with(&spec, &abs, t)).collect();
    let (i_min, _) = t_grid
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("nonempty");
    let achieved = values[i_min];
    Ok(KatoCertificate {
        class: KatoClass::K,
        verdict: if achieved < eps { CertVerdict::Pass } else { CertVerdict::Fail },
        witness: Witness {
            k_set: Vec::new(),
            delta: 0.0,
            achieved_sup: achieved,
            beta1: None,
            exact: true,
        },
        alpha: 0.0,
        eps: Some(eps),
        t_grid: Some(t_grid.to_vec()),
        modulus: Some(values),
        curve: Vec::new(),
    })
}

/// How candidate sets `K` are generated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KinfOptions {
    /// Largest admissible `|K|` as a fraction of the state count. On lattice
    /// truncations a value below 1 keeps `K` bounded away from the window.
    pub max_k_fraction: f64,
    /// Ball center; defaults to the state nearest the origin.
    pub center: Option<Vec<f64>>,
    /// Number of halvings of δ below `|μ|(K)`.
    pub delta_levels: usize,
}

impl Default for KinfOptions {
    fn default() -> Self {
        Self {
            max_k_fraction: 1.0,
            center: None,
            delta_levels: 40,
        }
    }
}

impl KinfOptions {
    /// Defaults for a model: half the window when positions are present.
    pub fn for_model(model: &ReversibleModel) -> Self {
        let mut o = Self::default();
        if model.space().positions().is_some() {
            o.max_k_fraction = 0.5;
        }
        o
    }
}

/// Nested candidate sets: balls by position around the center, otherwise
/// prefixes of the states ranked by `|μ|`-mass. Starts with `K = ∅`.
fn nested_sets(model: &ReversibleModel, atoms: &[f64], opts: &KinfOptions) -> Vec<(f64, Vec<usize>)> {
    let n = model.len();
    let max_k = ((opts.max_k_fraction * n as f64).floor() as usize).min(n);
    let mut order: Vec<(f64, usize)> = match model.space().positions() {
        Some(pos) => {
            let center = opts.center.clone().unwrap_or_else(|| vec![0.0; pos[0].len()]);
            (0..n).map(|x| (euclid(&pos[x], &center), x)).collect()
        }
        None => (0..n).map(|x| (-atoms[x], x)).collect(),
    };
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut sets = vec![(0.0, Vec::new())];
    let mut k = 0;
    while k < max_k {
        // Grow by whole shells of equal key.
        let key = order[k].0;
        while k < max_k && order[k].0 == key {
            k += 1;
        }
        let mut set: Vec<usize> = order[..k].iter().map(|&(_, x)| x).collect();
        set.sort_unstable();
        let radius = if model.space().positions().is_some() { key } else { k as f64 };
        sets.push((radius, set));
    }
    sets
}

/// `sup_{B⊂K, |μ|(B)<δ} ‖G(1_{K^c∪B}|μ|)‖_∞` and whether it is exact.
///
/// For `|K| ≤ 20` each `x` solves its 0-1 knapsack by branch and bound.
/// Larger `K` get the certified upper bound `sup_x base(x)` plus the
/// fractional knapsack over per-state values `sup_x Gop(x,y)|μ̂(y)|`.
pub fn subset_sup(gop: &DMatrix<f64>, abs_density: &[f64], atoms: &[f64], k_set: &[usize], delta: f64) -> (f64, bool) {
    let n = gop.nrows();
    let mut in_k = vec![false; n];
    for &y in k_set {
        in_k[y] = true;
    }
    let base: Vec<f64> = (0..n)
        .map(|x| (0..n).filter(|&y| !in_k[y]).map(|y| gop[(x, y)] * abs_density[y]).sum())
        .collect();
    let items: Vec<usize> = k_set.iter().copied().filter(|&y| abs_density[y] > 0.0).collect();
    if items.iter().all(|&y| atoms[y] >= delta) {
        return (base.iter().copied().fold(0.0, f64::max), true);
    }
    if k_set.len() <= EXACT_LIMIT {
        let best = (0..n)
            .map(|x| {
                let values: Vec<f64> = items.iter().map(|&y| gop[(x, y)] * abs_density[y]).collect();
                let weights: Vec<f64> = items.iter().map(|&y| atoms[y]).collect();
                base[x] + knapsack_strict(&values, &weights, delta)
            })
            .fold(0.0, f64::max);
        (best, true)
    } else {
        let values: Vec<f64> = items
            .iter()
            .map(|&y| (0..n).map(|x| gop[(x, y)]).fold(0.0, f64::max) * abs_density[y])
            .collect();
        let weights: Vec<f64> = items.iter().map(|&y| atoms[y]).collect();
        let bound = base.iter().copied().fold(0.0, f64::max) + fractional_knapsack(&values, &weights, delta);
        (bound, false)
    }
}

/// Max of `Σ v_i` over subsets with `Σ w_i < cap` (strict), by depth-first
/// branch and bound with the fractional relaxation as bound.
fn knapsack_strict(values: &[f64], weights: &[f64], cap: f64) -> f64 {
    let mut idx: Vec<usize> = (0..values.len()).filter(|&i| weights[i] < cap).collect();
    idx.sort_by(|&a, &b| (values[b] / weights[b]).total_cmp(&(values[a] / weights[a])));
    let v: Vec<f64> = idx.iter().map(|&i| values[i]).collect();
    let w: Vec<f64> = idx.iter().map(|&i| weights[i]).collect();
    let mut best = 0.0;
    branch(&v, &w, 0, 0.0, 0.0, cap, &mut best);
    best
}

fn branch(v: &[f64], w: &[f64], i: usize, value: f64, weight: f64, cap: f64, best: &mut f64) {
    if value > *best {
        *best = value;
    }
    if i == v.len() {
        return;
    }
    // Fractional bound on the remaining items.
    let mut bound = value;
    let mut room = cap - weight;
    for j in i..v.len() {
        if w[j] <= room {
            bound += v[j];
            room -= w[j];
        } else {
            bound += v[j] * room / w[j];
            break;
        }
    }
    if bound <= *best {
        return;
    }
    if weight + w[i] < cap {
        branch(v, w, i + 1, value + v[i], weight + w[i], cap, best);
    }
    branch(v, w, i + 1, value, weight, cap, best);
}

fn fractional_knapsack(values: &[f64], weights: &[f64], cap: f64) -> f64 {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| (values[b] / weights[b]).total_cmp(&(values[a] / weights[a])));
    let mut room = cap;
    let mut total = 0.0;
    for i in idx {
        if weights[i] <= room {
            total += values[i];
            room -= weights[i];
        } else {
            total += values[i] * room / weights[i];
            break;
        }
    }
    total
}

/// Certificate for `K_∞(X^{(α)})` at level `eps` with defaults from
/// [`KinfOptions::for_model`].
pub fn kinf_check(model: &ReversibleModel, mu: &SmoothMeasure, eps: f64, alpha: f64) -> Result<KatoCertificate> {
    kinf_check_with(model, mu, eps, alpha, &KinfOptions::for_model(model))
}

pub fn kinf_check_with(
    model: &ReversibleModel,
    mu: &SmoothMeasure,
    eps: f64,
    alpha: f64,
    opts: &KinfOptions,
) -> Result<KatoCertificate> {
    check_measure(model, mu)?;
    if !(eps > 0.0) {
        return Err(Error::invalid("eps must be positive"));
    }
    let gop = potential_operator(model, alpha)?;
    let abs = mu.abs();
    let atoms: Vec<f64> = abs.iter().zip(model.m()).map(|(a, w)| a * w).collect();
    let mut curve = Vec::new();
    let mut best: Option<Witness> = None;
    for (radius, k_set) in nested_sets(model, &atoms, opts) {
        let mass: f64 = k_set.iter().map(|&y| atoms[y]).sum();
        let min_atom = k_set
            .iter()
            .map(|&y| atoms[y])
            .filter(|&a| a > 0.0)
            .fold(f64::INFINITY, f64::min);
        let mut point: Option<Witness> = None;
        let mut delta = mass;
        for level in 0..=opts.delta_levels {
            if level > 0 {
                delta *= 0.5;
            }
            let below_atoms = delta <= min_atom;
            // All δ at or below the smallest atom force B = ∅.
            let d = if below_atoms { min_atom.min(delta) } else { delta };
            let (value, exact) = subset_sup(&gop, &abs, &atoms, &k_set, d);
            let w = Witness {
                k_set: k_set.clone(),
                delta: if d.is_finite() { d } else { 0.0 },
                achieved_sup: value,
                beta1: Some(value),
                exact,
            };
            let passes = value < eps;
            if point.as_ref().is_none_or(|p| value < p.achieved_sup) {
                point = Some(w.clone());
            }
            if passes {
                curve.push(CurvePoint { radius, value });
                return Ok(KatoCertificate {
                    class: KatoClass::KInf,
                    verdict: if exact { CertVerdict::Pass } else { CertVerdict::HeuristicPass },
                    witness: w,
                    alpha,
                    eps: Some(eps),
                    t_grid: None,
                    modulus: None,
                    curve,
                });
            }
            if below_atoms || mass == 0.0 {
                break;
            }
        }
        let point = point.expect("at least one δ level");
        curve.push(CurvePoint {
            radius,
            value: point.achieved_sup,
        });
        if best.as_ref().is_none_or(|b| point.achieved_sup < b.achieved_sup) {
            best = Some(point);
        }
    }
    Ok(KatoCertificate {
        class: KatoClass::KInf,
        verdict: CertVerdict::Fail,
        witness: best.expect("K = ∅ is always a candidate"),
        alpha,
        eps: Some(eps),
        t_grid: None,
        modulus: None,
        curve,
    })
}

/// `β₁(μ)` for a given `(K, δ)`: the value and whether it is exact.
pub fn k1_beta(model: &ReversibleModel, mu: &SmoothMeasure, k_set: &[usize], delta: f64, alpha: f64) -> Result<(f64, bool)> {
    check_measure(model, mu)?;
    if k_set.iter().any(|&y| y >= model.len()) {
        return Err(Error::invalid("K contains an unknown state"));
    }
    if !(delta > 0.0) {
        return Err(Error::invalid("delta must be positive"));
    }
    let gop = potential_operator(model, alpha)?;
    let abs = mu.abs();
    let atoms: Vec<f64> = abs.iter().zip(model.m()).map(|(a, w)| a * w).collect();
    let mut k: Vec<usize> = k_set.to_vec();
    k.sort_unstable();
    k.dedup();
    Ok(subset_sup(&gop, &abs, &atoms, &k, delta))
}

/// Certificate for `K_1`: passes iff `β₁ < 1`.
pub fn k1_check(model: &ReversibleModel, mu: &SmoothMeasure, k_set: &[usize], delta: f64, alpha: f64) -> Result<KatoCertificate> {
    let (beta, exact) = k1_beta(model, mu, k_set, delta, alpha)?;
    let verdict = match (beta < 1.0, exact) {
        (true, true) => CertVerdict::Pass,
        (true, false) => CertVerdict::HeuristicPass,
        _ => CertVerdict::Fail,
    };
    Ok(KatoCertificate {
        class: KatoClass::K1,
        verdict,
        witness: Witness {
            k_set: k_set.to_vec(),
            delta,
            achieved_sup: beta,
            beta1: Some(beta),
            exact,
        },
        alpha,
        eps: None,
        t_grid: None,
        modulus: None,
        curve: Vec::new(),
    })
}

/// Density `μ̂_{|F|}(x) = Σ_y |F(x,y)| N(x,y)`.
pub fn jclass_density(model: &ReversibleModel, f: &JumpFunction) -> Result<SmoothMeasure> {
    let n = model.len();
    if f.len() != n {
        return Err(Error::invalid("jump function size differs from the model"));
    }
    let density = (0..n)
        .map(|x| (0..n).filter(|&y| y != x).map(|y| f.get(x, y).abs() * model.rates()[(x, y)]).sum())
        .collect();
    SmoothMeasure::new(density)
}

/// `J` certificate through [`k_check`] on `μ_{|F|}`.
pub fn j_check(model: &ReversibleModel, f: &JumpFunction, t_grid: &[f64], eps: f64) -> Result<KatoCertificate> {
    let mut cert = k_check(model, &jclass_density(model, f)?, t_grid, eps)?;
    cert.class = KatoClass::J;
    Ok(cert)
}

/// `J_∞` certificate through [`kinf_check`] on `μ_{|F|}`.
pub fn jinf_check(model: &ReversibleModel, f: &JumpFunction, eps: f64, alpha: f64) -> Result<KatoCertificate> {
    let mut cert = kinf_check(model, &jclass_density(model, f)?, eps, alpha)?;
    cert.class = KatoClass::JInf;
    Ok(cert)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StableCriterion {
    /// `(r, sup_x Σ_{0<|x-y|<r} |x-y|^{α-d} |μ|({y}))`.
    pub local: Vec<CurvePoint>,
    /// `(R, sup_x Σ_{|y|≥R, y≠x} |x-y|^{α-d} |μ|({y}))`.
    pub tail: Vec<CurvePoint>,
    pub local_slope: f64,
    pub tail_slope: f64,
    pub condition_21: bool,
    pub condition_22: bool,
    pub verdict: CertVerdict,
}

/// Log-log slope a curve must reach to count as decaying.
pub const DECAY_SLOPE: f64 = 0.2;

/// Metric criteria for `K` and `K_∞` of a stable-like process with
/// `α < d`: the local curve must decay as `r ↓ 0` and the tail curve as
/// `R ↑ ∞`, each judged by the log-log slope over the given grid.
pub fn stable_kato_criterion(
    model: &ReversibleModel,
    mu: &SmoothMeasure,
    alpha: f64,
    d: usize,
    r_grid: &[f64],
    big_r_grid: &[f64],
) -> Result<StableCriterion> {
    check_measure(model, mu)?;
    if alpha >= d as f64 {
        return Err(Error::NotApplicable(format!("needs alpha < d, got alpha = {alpha}, d = {d}")));
    }
    let pos = model
        .space()
        .positions()
        .ok_or_else(|| Error::NotApplicable("model has no positions".into()))?;
    if r_grid.len() < 2 || big_r_grid.len() < 2 {
        return Err(Error::invalid("radius grids need at least two points"));
    }
    let atoms = mu.atoms(model.m());
    let atoms: Vec<f64> = atoms.iter().map(|a| a.abs()).collect();
    let n = model.len();
    let origin = vec![0.0; pos[0].len()];
    let expo = alpha - d as f64;
    let local: Vec<CurvePoint> = r_grid
        .iter()
        .map(|&r| {
            let value = (0..n)
                .map(|x| {
                    (0..n)
                        .filter(|&y| y != x && atoms[y] > 0.0)
                        .map(|y| (euclid(&pos[x], &pos[y]), y))
                        .filter(|&(dist, _)| dist < r)
                        .map(|(dist, y)| dist.powf(expo) * atoms[y])
                        .sum::<f64>()
                })
                .fold(0.0, f64::max);
            CurvePoint { radius: r, value }
        })
        .collect();
    let tail: Vec<CurvePoint> = big_r_grid
        .iter()
        .map(|&rr| {
            let value = (0..n)
                .map(|x| {
                    (0..n)
                        .filter(|&y| y != x && atoms[y] > 0.0 && euclid(&pos[y], &origin) >= rr)
                        .map(|y| euclid(&pos[x], &pos[y]).powf(expo) * atoms[y])
                        .sum::<f64>()
                })
                .fold(0.0, f64::max);
            CurvePoint { radius: rr, value }
        })
        .collect();
    let local_slope = log_slope(&local);
    let tail_slope = log_slope(&tail);
    let condition_21 = vanishes(&local) || local_slope >= DECAY_SLOPE;
    let condition_22 = vanishes(&tail) || -tail_slope >= DECAY_SLOPE;
    Ok(StableCriterion {
        local,
        tail,
        local_slope,
        tail_slope,
        condition_21,
        condition_22,
        verdict: if condition_21 && condition_22 { CertVerdict::Pass } else { CertVerdict::Fail },
    })
}

fn vanishes(curve: &[CurvePoint]) -> bool {
    curve.iter().all(|p| p.value == 0.0)
        || curve.iter().min_by(|a, b| a.radius.total_cmp(&b.radius)).is_some_and(|p| p.value == 0.0)
            && curve.iter().max_by(|a, b| a.radius.total_cmp(&b.radius)).is_some_and(|p| p.value == 0.0)
}

/// Slope of `log value` against `log radius` over the positive points.
fn log_slope(curve: &[CurvePoint]) -> f64 {
    let pts: Vec<(f64, f64)> = curve
        .iter()
        .filter(|p| p.value > 0.0 && p.radius > 0.0)
        .map(|p| (p.radius.ln(), p.value.ln()))
        .collect();
    if pts.len() < 2 {
        return f64::NAN;
    }
    let (x, y): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
    linear_fit(&x, &y).0
}

/// Largest `Σ u² μ̂ m - ‖Gμ‖_∞ E(u,u)` over `n_random` random `u` plus the
/// constant function; the inequality holds when the result is `≤ 0`.
pub fn stollmann_voigt_check(model: &ReversibleModel, mu_pos: &SmoothMeasure, n_random: usize, seed: u64) -> Result<f64> {
    check_measure(model, mu_pos)?;
    if mu_pos.density().iter().any(|&v| v < 0.0) {
        return Err(Error::invalid("measure must be nonnegative"));
    }
    let gop = potential_operator(model, 0.0)?;
    let g_mu = potential(&gop, mu_pos.density());
    let sup = g_mu.iter().copied().fold(0.0, f64::max);
    let n = model.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = f64::NEG_INFINITY;
    let mut test = |u: &[f64]| {
        let lhs = mu_pos.integrate(&u.iter().map(|v| v * v).collect::<Vec<_>>(), model.m());
        let rhs = sup * model.dirichlet_energy(u, u);
        worst = worst.max(lhs - rhs);
    };
    test(&vec![1.0; n]);
    for _ in 0..n_random {
        let u: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        test(&u);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::functionals::{energy_measure, nu_measure};
    use crate::linalg::integral_of_exp;
    use crate::markov::StateSpace;
    use crate::suite::{instance_suite, random_model, InstanceBounds};

    fn conservative(n: usize, seed: u64) -> ReversibleModel {
        let b = InstanceBounds {
            kappa: 0.0,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        random_model(&mut rng, n, b)
    }

    #[test]
    fn modulus_constant_density() {
        let model = conservative(4, 1);
        let mu = SmoothMeasure::new(vec![-0.7; 4]).unwrap();
        for t in [0.01, 0.5, 2.0] {
            assert!((kato_modulus(&model, &mu, t).unwrap() - 0.7 * t).abs() < 1e-10);
        }
    }

    #[test]
    fn modulus_matches_closed_form() {
        for inst in instance_suite(2, 5, 5, InstanceBounds::default()) {
            let abs = inst.perturbation.mu.abs();
            let spec = inst.model.spectrum().unwrap();
            for t in [0.1, 1.0, 3.0] {
                let exact = spec
                    .apply(|l| integral_of_exp(l, t), &abs)
                    .iter()
                    .copied()
                    .fold(0.0, f64::max);
                let quad = kato_modulus(&inst.model, &inst.perturbation.mu, t).unwrap();
                assert!((exact - quad).abs() < 1e-9, "{exact} {quad}");
                assert!(kato_modulus(&inst.model, &inst.perturbation.mu, t / 2.0).unwrap() <= quad);
            }
        }
    }

    #[test]
    fn modulus_leading_slope() {
        let model = conservative(4, 3);
        let mu = SmoothMeasure::new(vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        let mut prev = f64::INFINITY;
        for k in 1..6 {
            let t = 10f64.powi(-k);
            let err = (kato_modulus(&model, &mu, t).unwrap() / t - 1.0).abs();
            assert!(err < prev);
            assert!(err <= 2.0 * model.total_rate(0) * t);
            prev = err;
        }
    }

    #[test]
    fn zero_measure_passes_with_empty_k() {
        let model = conservative(5, 4);
        let cert = kinf_check(&model, &SmoothMeasure::zero(5), 1e-3, 1.0).unwrap();
        assert_eq!(cert.verdict, CertVerdict::Pass);
        assert!(cert.witness.k_set.is_empty());
        assert_eq!(k1_beta(&model, &SmoothMeasure::zero(5), &[0, 1], 0.1, 1.0).unwrap().0, 0.0);
    }

    #[test]
    fn whole_space_with_small_delta_passes() {
        let model = conservative(5, 5);
        let mu = SmoothMeasure::new(vec![3.0, -2.0, 1.0, 0.5, 4.0]).unwrap();
        let cert = kinf_check(&model, &mu, 1e-6, 1.0).unwrap();
        assert_eq!(cert.verdict, CertVerdict::Pass);
        assert_eq!(cert.witness.k_set.len(), 5);
        assert_eq!(cert.witness.achieved_sup, 0.0);
        assert!(cert.witness.delta <= 0.5 * model.m()[3] + 1e-15);
    }

    #[test]
    fn conservative_alpha_zero_is_not_transient() {
        let model = conservative(4, 6);
        let mu = SmoothMeasure::new(vec![1.0; 4]).unwrap();
        assert!(matches!(kinf_check(&model, &mu, 0.1, 0.0), Err(Error::NotTransient(_))));
        assert!(matches!(stollmann_voigt_check(&model, &mu, 3, 1), Err(Error::NotTransient(_))));
    }

    #[test]
    fn beta1_scales_linearly() {
        let model = conservative(6, 7);
        let mu = SmoothMeasure::new(vec![0.3, 0.1, 0.8, 0.2, 0.5, 0.4]).unwrap();
        let k = [0, 2, 3, 5];
        let (b1, exact) = k1_beta(&model, &mu, &k, 0.5, 1.0).unwrap();
        assert!(exact);
        let (b2, _) = k1_beta(&model, &mu.scaled(3.0), &k, 1.5, 1.0).unwrap();
        assert!((b2 - 3.0 * b1).abs() < 1e-12);
    }

    #[test]
    fn beta1_below_potential_norm() {
        let model = conservative(5, 8);
        let gop = potential_operator(&model, 1.0).unwrap();
        let raw = vec![1.0, 0.5, 0.2, 0.7, 0.1];
        let g = potential(&gop, &raw);
        let scale = 0.5 / g.iter().copied().fold(0.0, f64::max);
        let mu = SmoothMeasure::new(raw.iter().map(|v| v * scale).collect()).unwrap();
        let all: Vec<usize> = (0..5).collect();
        let cert = k1_check(&model, &mu, &all, 1e-3, 1.0).unwrap();
        assert!(cert.witness.achieved_sup <= 0.5 + 1e-12);
        assert_eq!(cert.verdict, CertVerdict::Pass);
    }

    #[test]
    fn exact_knapsack_matches_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let k = 10;
            let v: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..1.0)).collect();
            let w: Vec<f64> = (0..k).map(|_| rng.random_range(0.01..1.0)).collect();
            let cap = rng.random_range(0.1..3.0);
            let mut best: f64 = 0.0;
            for mask in 0u32..(1 << k) {
                let (mut sv, mut sw) = (0.0, 0.0);
                for i in 0..k {
                    if mask >> i & 1 == 1 {
                        sv += v[i];
                        sw += w[i];
                    }
                }
                if sw < cap {
                    best = best.max(sv);
                }
            }
            assert!((knapsack_strict(&v, &w, cap) - best).abs() < 1e-12);
            assert!(fractional_knapsack(&v, &w, cap) >= best - 1e-12);
        }
    }

    #[test]
    fn greedy_bound_dominates_exact() {
        let model = conservative(24, 10);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mu = SmoothMeasure::new((0..24).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap();
        let gop = potential_operator(&model, 1.0).unwrap();
        let abs = mu.abs();
        let atoms = mu.atoms(model.m());
        let k: Vec<usize> = (0..20).collect();
        let (exact, is_exact) = subset_sup(&gop, &abs, &atoms, &k, 1.0);
        assert!(is_exact);
        let k_big: Vec<usize> = (0..22).collect();
        let (bound, is_exact) = subset_sup(&gop, &abs, &atoms, &k_big, 1.0);
        assert!(!is_exact);
        let k_sub: Vec<usize> = (0..20).collect();
        let (sub, _) = subset_sup(&gop, &abs, &atoms, &k_sub, 1.0);
        assert_eq!(sub, exact);
        // Exact value for the larger K via brute force over B.
        let n = 24;
        let mut brute: f64 = 0.0;
        for mask in 0u32..(1 << 22) {
            let w: f64 = (0..22).filter(|i| mask >> i & 1 == 1).map(|i| atoms[i]).sum();
            if w >= 1.0 {
                continue;
            }
            if mask.count_ones() > 6 {
                continue;
            }
            for x in 0..n {
                let v: f64 = (0..n)
                    .filter(|&y| y >= 22 || mask >> y & 1 == 1)
                    .map(|y| gop[(x, y)] * abs[y])
                    .sum();
                brute = brute.max(v);
            }
        }
        assert!(bound >= brute - 1e-12);
    }

    #[test]
    fn potential_monotone_in_alpha() {
        for inst in instance_suite(12, 10, 5, InstanceBounds::default()) {
            let g1 = potential_operator(&inst.model, 0.5).unwrap();
            let g2 = potential_operator(&inst.model, 2.0).unwrap();
            assert!(g1.iter().zip(g2.iter()).all(|(a, b)| *b <= *a + 1e-14));
            let abs = inst.perturbation.mu.abs();
            assert!(potential(&g2, &abs).iter().zip(potential(&g1, &abs)).all(|(b, a)| *b <= a + 1e-14));
        }
    }

    #[test]
    fn jclass_examples() {
        let space = StateSpace::unlabeled(vec![1.0, 1.0]).unwrap();
        let n = DMatrix::from_row_slice(2, 2, &[0.0, 2.0, 2.0, 0.0]);
        let model = ReversibleModel::build(space, n, vec![0.0; 2]).unwrap();
        let f = JumpFunction::new(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0])).unwrap();
        assert_eq!(jclass_density(&model, &f).unwrap().density(), &[2.0, 2.0]);
        assert_eq!(jclass_density(&model, &JumpFunction::zero(2)).unwrap().density(), &[0.0, 0.0]);
    }

    #[test]
    fn stollmann_voigt_holds() {
        let b = InstanceBounds::default();
        for (i, inst) in instance_suite(13, 30, 5, b).into_iter().enumerate() {
            let mu = SmoothMeasure::new(inst.perturbation.mu.abs()).unwrap();
            let worst = stollmann_voigt_check(&inst.model, &mu, 20, i as u64).unwrap();
            assert!(worst <= 1e-12, "{worst}");
        }
        let model = instance_suite(14, 1, 4, b)[0].model.clone();
        assert!(stollmann_voigt_check(&model, &SmoothMeasure::zero(4), 5, 0).unwrap() <= 0.0);
        let mu = SmoothMeasure::new(vec![0.3; 4]).unwrap();
        assert!(stollmann_voigt_check(&model, &mu, 0, 0).unwrap() < 0.0);
    }

    #[test]
    fn nu_passes_where_energy_measure_passes() {
        for inst in instance_suite(15, 10, 6, InstanceBounds::default()) {
            // Positions fix the nested sets so both measures see the same K.
            let m = inst.model.m().to_vec();
            let labels = (0..6).map(|i| i.to_string()).collect();
            let pos = (0..6).map(|i| vec![i as f64]).collect();
            let space = StateSpace::new(labels, Some(pos), m).unwrap();
            let model =
                ReversibleModel::build(space, inst.model.rates().clone(), inst.model.kappa().to_vec()).unwrap();
            let u = &inst.perturbation.u;
            let energy = energy_measure(&model, u);
            let nu = nu_measure(&model, u);
            let opts = KinfOptions {
                max_k_fraction: 0.5,
                ..Default::default()
            };
            let c = u.iter().fold(0.0_f64, |a, v| a.max(v.abs())).exp() / 2.0;
            for eps in [0.05, 0.2, 1.0] {
                let e = kinf_check_with(&model, &energy, eps, 1.0, &opts).unwrap();
                if e.verdict.passed() {
                    let n = kinf_check_with(&model, &nu, c * eps * 1.000001, 1.0, &opts).unwrap();
                    assert!(n.verdict.passed());
                }
            }
        }
    }

    #[test]
    fn certificate_json_round_trip() {
        let model = conservative(5, 16);
        let mu = SmoothMeasure::new(vec![1.0, 0.0, 0.5, 0.0, 0.2]).unwrap();
        let cert = kinf_check(&model, &mu, 0.1, 1.0).unwrap();
        let back: KatoCertificate = serde_json::from_str(&cert.to_json().unwrap()).unwrap();
        assert_eq!(back, cert);
        assert!(cert.to_json().unwrap().contains("\"class\": \"K_inf\""));
    }
}
