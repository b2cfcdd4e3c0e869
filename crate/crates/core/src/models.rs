//! Lattice truncations of stable-like jump processes and of 1-d uniformly
//! elliptic diffusions, with heat-kernel and Green-function checks.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::linalg::linear_fit;
use crate::markov::{euclid, JumpFunction, ReversibleModel, StateSpace};
use crate::spectral::PIndex;

/// A coefficient given either as a number or as an expression.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Coefficient {
    Constant(f64),
    Expr(String),
}

impl Default for Coefficient {
    fn default() -> Self {
        Coefficient::Constant(1.0)
    }
}

impl Coefficient {
    pub fn constant(&self) -> Option<f64> {
        match self {
            Coefficient::Constant(c) => Some(*c),
            Coefficient::Expr(_) => None,
        }
    }

    fn compile(&self, vars: &[&str]) -> Result<Compiled> {
        Ok(match self {
            Coefficient::Constant(c) => Compiled::Constant(*c),
            Coefficient::Expr(src) => Compiled::Expr(Expr::parse(src, vars)?),
        })
    }
}

enum Compiled {
    Constant(f64),
    Expr(Expr),
}

impl Compiled {
    fn eval(&self, vals: &[f64]) -> f64 {
        match self {
            Compiled::Constant(c) => *c,
            Compiled::Expr(e) => e.eval(vals),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Boundary {
    /// Jumps leaving the window kill the process.
    #[default]
    KillOutside,
    /// Jumps leaving the window are dropped; the chain is conservative.
    ReflectTruncate,
}

/// Stable-like lattice on `{-L, …, L}^d · h` with jump density
/// `c(x,y) / |x-y|^{d+α}`. The coefficient expression sees `x`, `y` (first
/// coordinates) and `r = |x-y|`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StableLatticeSpec {
    #[serde(default = "one")]
    pub d: usize,
    pub half_width: usize,
    pub spacing: f64,
    pub alpha: f64,
    #[serde(default)]
    pub c: Coefficient,
    #[serde(default)]
    pub boundary: Boundary,
    /// Midpoint nodes for the killing-rate quadrature.
    #[serde(default = "default_quadrature")]
    pub quadrature_points: usize,
}

fn one() -> usize {
    1
}

fn default_quadrature() -> usize {
    256
}

impl StableLatticeSpec {
    pub fn new(half_width: usize, spacing: f64, alpha: f64) -> Self {
        Self {
            d: 1,
            half_width,
            spacing,
            alpha,
            c: Coefficient::default(),
            boundary: Boundary::default(),
            quadrature_points: default_quadrature(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 2.0) {
            return Err(Error::invalid(format!("alpha must lie in (0, 2), got {}", self.alpha)));
        }
        if !(self.spacing > 0.0 && self.spacing.is_finite()) {
            return Err(Error::invalid("spacing must be positive"));
        }
        if self.half_width == 0 {
            return Err(Error::invalid("half_width must be at least 1"));
        }
        if self.d == 0 {
            return Err(Error::invalid("dimension must be at least 1"));
        }
        if self.d > 1 && self.boundary == Boundary::KillOutside {
            return Err(Error::invalid("kill-outside boundary is implemented for d = 1 only"));
        }
        if self.quadrature_points == 0 {
            return Err(Error::invalid("quadrature_points must be positive"));
        }
        Ok(())
    }

    /// Outer radius `L·h`.
    pub fn extent(&self) -> f64 {
        self.half_width as f64 * self.spacing
    }

    pub fn len(&self) -> usize {
        (2 * self.half_width + 1).pow(self.d as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Index of the state at the origin.
    pub fn center(&self) -> usize {
        (self.len() - 1) / 2
    }

    pub fn positions(&self) -> Vec<Vec<f64>> {
        let side = 2 * self.half_width + 1;
        let l = self.half_width as i64;
        (0..self.len())
            .map(|mut k| {
                (0..self.d)
                    .map(|_| {
                        let i = (k % side) as i64 - l;
                        k /= side;
                        i as f64 * self.spacing
                    })
                    .rev()
                    .collect()
            })
            .collect()
    }
}

/// Range `[C₃, C₄]` of the coefficient over all lattice pairs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoefficientBounds {
    pub lower: f64,
    pub upper: f64,
}

/// `m = h^d`, `N(x,y) = c(x,y) h^d / |x-y|^{d+α}`; in kill-outside mode
/// `κ(x) = ∫_{outside} c(x,y) / |x-y|^{1+α} dy`.
pub fn build_stable_lattice(spec: &StableLatticeSpec) -> Result<ReversibleModel> {
    Ok(build_stable_lattice_with_bounds(spec)?.0)
}

pub fn build_stable_lattice_with_bounds(spec: &StableLatticeSpec) -> Result<(ReversibleModel, CoefficientBounds)> {
    spec.validate()?;
    let c = spec.c.compile(&["x", "y", "r"])?;
    let pos = spec.positions();
    let n = pos.len();
    let d = spec.d as f64;
    let hd = spec.spacing.powi(spec.d as i32);
    let mut rates = DMatrix::zeros(n, n);
    let mut bounds = CoefficientBounds {
        lower: f64::INFINITY,
        upper: f64::NEG_INFINITY,
    };
    for x in 0..n {
        for y in 0..n {
            if x == y {
                continue;
            }
            let r = euclid(&pos[x], &pos[y]);
            let cxy = c.eval(&[pos[x][0], pos[y][0], r]);
            if !(cxy > 0.0 && cxy.is_finite()) {
                return Err(Error::invalid(format!(
                    "coefficient must be positive and finite, got {cxy} at ({}, {})",
                    pos[x][0], pos[y][0]
                )));
            }
            bounds.lower = bounds.lower.min(cxy);
            bounds.upper = bounds.upper.max(cxy);
            rates[(x, y)] = cxy * hd / r.powf(d + spec.alpha);
        }
    }
    let kappa = match spec.boundary {
        Boundary::ReflectTruncate => vec![0.0; n],
        Boundary::KillOutside => {
            let b = (spec.half_width as f64 + 0.5) * spec.spacing;
            (0..n).map(|x| kill_rate(&c, pos[x][0], b, spec.alpha, spec.quadrature_points)).collect()
        }
    };
    let labels = (0..n).map(|i| i.to_string()).collect();
    let space = StateSpace::new(labels, Some(pos), vec![hd; n])?;
    Ok((ReversibleModel::build(space, rates, kappa)?, bounds))
}

/// `∫_{|y|>b} c(x,y) |x-y|^{-1-α} dy` through `y = x ± (b ∓ x) v^{-1/α}`,
/// which maps each side to `(1/(α (b ∓ x)^α)) ∫_0^1 c dv`.
fn kill_rate(c: &Compiled, x: f64, b: f64, alpha: f64, nodes: usize) -> f64 {
    let side = |dist: f64, sign: f64| {
        let avg = match c {
            Compiled::Constant(v) => *v,
            Compiled::Expr(_) => {
                let mut s = 0.0;
                for k in 0..nodes {
                    let v = (k as f64 + 0.5) / nodes as f64;
                    let y = x + sign * dist * v.powf(-1.0 / alpha);
                    s += c.eval(&[x, y, (y - x).abs()]);
                }
                s / nodes as f64
            }
        };
        avg / (alpha * dist.powf(alpha))
    };
    side(b - x, 1.0) + side(b + x, -1.0)
}

/// One sampled comparison of the lattice density against the two-sided
/// estimate `t^{-d/α} ∧ t/r^{d+α}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeatKernelSample {
    pub t: f64,
    pub x: usize,
    pub y: usize,
    pub r: f64,
    pub density: f64,
    pub estimate: f64,
    pub ratio: f64,
    /// Exact continuum density, when one is known (`d = 1`, `α = 1`, constant `c`).
    pub exact: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatKernelReport {
    /// `max(max ratio, 1/min ratio)` against the two-sided estimate.
    pub comparison_constant: f64,
    /// `max(max q, 1/min q)` with `q = density/exact`, if an exact kernel applies.
    pub exact_ratio: Option<f64>,
    pub samples: Vec<HeatKernelSample>,
}

/// Continuum density of the `d = 1`, `α = 1` process with constant `c`:
/// the Cauchy law with scale `cπt`.
pub fn cauchy_density(c: f64, t: f64, r: f64) -> f64 {
    let s = c * std::f64::consts::PI * t;
    s / (std::f64::consts::PI * (s * s + r * r))
}

/// Admissible times `[10 h^α, (Lh)^α / 10]`.
pub fn heat_kernel_window(spec: &StableLatticeSpec) -> (f64, f64) {
    (
        10.0 * spec.spacing.powf(spec.alpha),
        spec.extent().powf(spec.alpha) / 10.0,
    )
}

/// Default pairs: from the center and from `±Lh/8` to offsets
/// `0, h, 2h, 4h, …` up to `Lh/4`.
pub fn default_pairs(spec: &StableLatticeSpec) -> Vec<(usize, usize)> {
    let side = 2 * spec.half_width + 1;
    let stride: usize = (0..spec.d.saturating_sub(1)).map(|_| side).product::<usize>().max(1);
    let c = spec.center();
    let l = spec.half_width;
    let mut starts = vec![c];
    if l >= 8 {
        starts.push(c - (l / 8) * stride);
        starts.push(c + (l / 8) * stride);
    }
    let mut offsets = vec![0usize];
    let mut k = 1;
    while k <= l / 4 {
        offsets.push(k);
        k *= 2;
    }
    let mut pairs = Vec::new();
    for &x in &starts {
        for &k in &offsets {
            pairs.push((x, x + k * stride));
        }
    }
    pairs
}

pub fn heat_kernel_estimate_check(
    model: &ReversibleModel,
    spec: &StableLatticeSpec,
    t_grid: &[f64],
    pairs: &[(usize, usize)],
) -> Result<HeatKernelReport> {
    let (lo, hi) = heat_kernel_window(spec);
    for &t in t_grid {
        if t < lo * (1.0 - 1e-12) || t > hi * (1.0 + 1e-12) {
            return Err(Error::WindowViolation(format!("t = {t} outside [{lo}, {hi}]")));
        }
    }
    if t_grid.is_empty() || pairs.is_empty() {
        return Err(Error::invalid("need at least one time and one pair"));
    }
    let pos = model
        .space()
        .positions()
        .ok_or_else(|| Error::invalid("model has no positions"))?;
    let n = model.len();
    if pairs.iter().any(|&(x, y)| x >= n || y >= n) {
        return Err(Error::invalid("pair index out of range"));
    }
    let d = spec.d as f64;
    let a = spec.alpha;
    let exact_c = match (spec.d, spec.c.constant()) {
        (1, Some(c)) if (a - 1.0).abs() < 1e-15 => Some(c),
        _ => None,
    };
    let spectrum = model.spectrum()?;
    let mut ys: Vec<usize> = pairs.iter().map(|p| p.1).collect();
    ys.sort_unstable();
    ys.dedup();
    let mut samples = Vec::new();
    for &t in t_grid {
        let columns: Vec<DVector<f64>> = ys
            .iter()
            .map(|&y| {
                let mut e = vec![0.0; n];
                e[y] = 1.0;
                spectrum.apply_exp(t, &e)
            })
            .collect();
        for &(x, y) in pairs {
            let col = &columns[ys.binary_search(&y).expect("collected")];
            let density = col[x] / model.m()[y];
            let r = euclid(&pos[x], &pos[y]);
            let on_diag = t.powf(-d / a);
            let estimate = if r == 0.0 { on_diag } else { on_diag.min(t / r.powf(d + a)) };
            samples.push(HeatKernelSample {
                t,
                x,
                y,
                r,
                density,
                estimate,
                ratio: density / estimate,
                exact: exact_c.map(|c| cauchy_density(c, t, r)),
            });
        }
    }
    let spread = |qs: &mut dyn Iterator<Item = f64>| {
        let (mut lo, mut hi) = (f64::INFINITY, 0.0_f64);
        for q in qs {
            lo = lo.min(q);
            hi = hi.max(q);
        }
        hi.max(1.0 / lo)
    };
    let comparison_constant = spread(&mut samples.iter().map(|s| s.ratio));
    let exact_ratio = exact_c.map(|_| spread(&mut samples.iter().map(|s| s.density / s.exact.expect("set"))));
    Ok(HeatKernelReport {
        comparison_constant,
        exact_ratio,
        samples,
    })
}

/// Which upper bound applies to `G₁` for the pair `(d, α)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GreenCase {
    /// `d > α`: `e^{-r^α} / r^{d-α}`.
    Singular,
    /// `d = α`: `log(1/r)` for `r < 1/2`, `e^{-r^α}/r^d` beyond.
    Logarithmic,
    /// `d < α`: bounded, `e^{-r^α} / (1 + r^d)`.
    Bounded,
}

impl GreenCase {
    pub fn of(d: usize, alpha: f64) -> Self {
        let d = d as f64;
        if (d - alpha).abs() < 1e-12 {
            GreenCase::Logarithmic
        } else if d > alpha {
            GreenCase::Singular
        } else {
            GreenCase::Bounded
        }
    }

    pub fn bound(self, d: usize, alpha: f64, r: f64) -> f64 {
        let d = d as f64;
        match self {
            GreenCase::Singular => (-r.powf(alpha)).exp() / r.powf(d - alpha),
            GreenCase::Logarithmic if r < 0.5 => (1.0 / r).ln(),
            GreenCase::Logarithmic => (-r.powf(alpha)).exp() / r.powf(d),
            GreenCase::Bounded => (-r.powf(alpha)).exp() / (1.0 + r.powf(d)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GreenReport {
    pub case: GreenCase,
    /// Smallest `c₂` with `G₁ ≤ c₂ · bound` on the sampled window.
    pub c2: f64,
    pub window: (f64, f64),
    /// `(r, G₁(0, r), bound(r))`.
    pub samples: Vec<(f64, f64, f64)>,
    /// `max_y G₁(0, y)` over the window; finite for every case.
    pub max_green: f64,
}

/// Distances used for the Green bound: `[2h, min(2, Lh/4)]`. The far-field
/// tail of `G₁` is polynomial, so the exponential bound is only fitted on a
/// bounded window.
pub fn green_window(spec: &StableLatticeSpec) -> (f64, f64) {
    (2.0 * spec.spacing, 2.0_f64.min(spec.extent() / 4.0))
}

pub fn green1_bound_check(model: &ReversibleModel, spec: &StableLatticeSpec) -> Result<GreenReport> {
    let (lo, hi) = green_window(spec);
    if !(lo < hi) {
        return Err(Error::WindowViolation(format!("empty distance window [{lo}, {hi}]")));
    }
    let pos = model
        .space()
        .positions()
        .ok_or_else(|| Error::invalid("model has no positions"))?;
    let n = model.len();
    let x0 = spec.center();
    // Row x0 of (I - L)^{-1}: solve the transposed system.
    let a = DMatrix::identity(n, n) - model.generator();
    let mut e = DVector::zeros(n);
    e[x0] = 1.0;
    let row = a
        .transpose()
        .lu()
        .solve(&e)
        .ok_or_else(|| Error::SingularOperator("I - L is not invertible".into()))?;
    let case = GreenCase::of(spec.d, spec.alpha);
    let mut samples = Vec::new();
    let mut c2: f64 = 0.0;
    let mut max_green: f64 = 0.0;
    for y in 0..n {
        let r = euclid(&pos[x0], &pos[y]);
        if r < lo * (1.0 - 1e-12) || r > hi * (1.0 + 1e-12) {
            continue;
        }
        let g = row[y] / model.m()[y];
        let b = case.bound(spec.d, spec.alpha, r);
        c2 = c2.max(g / b);
        max_green = max_green.max(g);
        samples.push((r, g, b));
    }
    samples.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(GreenReport {
        case,
        c2,
        window: (lo, hi),
        samples,
        max_green,
    })
}

/// Birth-death chain for `½ (a u')'` on `{-L, …, L} · h`:
/// `m = h`, `N(x, x±h) = a(x ± h/2) / (2h²)`. The expression for `a` sees `x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiffusionChainSpec {
    #[serde(default)]
    pub a: Coefficient,
    pub half_width: usize,
    pub spacing: f64,
    #[serde(default)]
    pub boundary: Boundary,
}

impl DiffusionChainSpec {
    pub fn new(half_width: usize, spacing: f64) -> Self {
        Self {
            a: Coefficient::default(),
            half_width,
            spacing,
            boundary: Boundary::default(),
        }
    }

    pub fn extent(&self) -> f64 {
        self.half_width as f64 * self.spacing
    }

    pub fn center(&self) -> usize {
        self.half_width
    }
}

/// Model plus the ellipticity constant `λ = max(sup a, 1/inf a)`.
pub fn build_diffusion_chain_with_bounds(spec: &DiffusionChainSpec) -> Result<(ReversibleModel, f64)> {
    if !(spec.spacing > 0.0 && spec.spacing.is_finite()) || spec.half_width == 0 {
        return Err(Error::invalid("diffusion chain needs positive spacing and half_width"));
    }
    let a = spec.a.compile(&["x"])?;
    let h = spec.spacing;
    let n = 2 * spec.half_width + 1;
    let l = spec.half_width as f64;
    let xs: Vec<f64> = (0..n).map(|i| (i as f64 - l) * h).collect();
    let coef = |x: f64| -> Result<f64> {
        let v = a.eval(&[x]);
        if v > 0.0 && v.is_finite() {
            Ok(v)
        } else {
            Err(Error::invalid(format!("diffusion coefficient must be positive, got {v} at x = {x}")))
        }
    };
    let (mut lo, mut hi) = (f64::INFINITY, 0.0_f64);
    let mut rates = DMatrix::zeros(n, n);
    let mut kappa = vec![0.0; n];
    for i in 0..n {
        let up = coef(xs[i] + 0.5 * h)?;
        lo = lo.min(up);
        hi = hi.max(up);
        let rate = up / (2.0 * h * h);
        if i + 1 < n {
            rates[(i, i + 1)] = rate;
            rates[(i + 1, i)] = rate;
        } else if spec.boundary == Boundary::KillOutside {
            kappa[i] += rate;
        }
    }
    if spec.boundary == Boundary::KillOutside {
        let down = coef(xs[0] - 0.5 * h)?;
        lo = lo.min(down);
        hi = hi.max(down);
        kappa[0] += down / (2.0 * h * h);
    }
    let labels = (0..n).map(|i| i.to_string()).collect();
    let pos = xs.iter().map(|&x| vec![x]).collect();
    let space = StateSpace::new(labels, Some(pos), vec![h; n])?;
    Ok((ReversibleModel::build(space, rates, kappa)?, hi.max(1.0 / lo)))
}

pub fn build_diffusion_chain(spec: &DiffusionChainSpec) -> Result<ReversibleModel> {
    Ok(build_diffusion_chain_with_bounds(spec)?.0)
}

/// `max_{|x| ≤ radius} |(Lu)(x) - target(x)|` on the chain.
pub fn diffusion_generator_error(
    model: &ReversibleModel,
    u: impl Fn(f64) -> f64,
    target: impl Fn(f64) -> f64,
    radius: f64,
) -> Result<f64> {
    let pos = model
        .space()
        .positions()
        .ok_or_else(|| Error::invalid("model has no positions"))?;
    let values: Vec<f64> = pos.iter().map(|p| u(p[0])).collect();
    let lu = model.apply_generator(&values);
    Ok(pos
        .iter()
        .zip(&lu)
        .filter(|(p, _)| p[0].abs() <= radius + 1e-12)
        .map(|(p, v)| (v - target(p[0])).abs())
        .fold(0.0, f64::max))
}

/// Observed order: slope of `log err` against `log h`.
pub fn convergence_order(hs: &[f64], errors: &[f64]) -> f64 {
    let x: Vec<f64> = hs.iter().map(|h| h.ln()).collect();
    let y: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
    linear_fit(&x, &y).0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AronsonFit {
    pub c1: f64,
    pub c2: f64,
    /// `(t, r, p(t, 0, r))`.
    pub samples: Vec<(f64, f64, f64)>,
}

/// Admissible times `[10 h², (Lh)² / 10]` for the diffusion chain.
pub fn aronson_window(spec: &DiffusionChainSpec) -> (f64, f64) {
    (10.0 * spec.spacing * spec.spacing, spec.extent().powi(2) / 10.0)
}

/// Fit `c₁, c₂ ≥ 1` in
/// `c₁^{-1} t^{-1/2} e^{-c₂ r²/t} ≤ p(t,x,y) ≤ c₁ t^{-1/2} e^{-r²/(c₂ t)}`
/// from the center, over `r ≤ max_sigma·√t`: for each `c₂` on a grid the
/// smallest admissible `c₁`, keeping the smallest `c₂` that minimizes it.
pub fn aronson_fit(model: &ReversibleModel, spec: &DiffusionChainSpec, t_grid: &[f64], max_sigma: f64) -> Result<AronsonFit> {
    let (lo, hi) = aronson_window(spec);
    if t_grid.is_empty() {
        return Err(Error::invalid("t_grid must not be empty"));
    }
    for &t in t_grid {
        if t < lo * (1.0 - 1e-12) || t > hi * (1.0 + 1e-12) {
            return Err(Error::WindowViolation(format!("t = {t} outside [{lo}, {hi}]")));
        }
    }
    let pos = model
        .space()
        .positions()
        .ok_or_else(|| Error::invalid("model has no positions"))?;
    let x0 = spec.center();
    let spectrum = model.spectrum()?;
    let mut e = vec![0.0; model.len()];
    e[x0] = 1.0;
    let mut samples = Vec::new();
    for &t in t_grid {
        // P_t(x0, y) / m(y) = P_t(y, x0) / m(x0) by symmetry.
        let col = spectrum.apply_exp(t, &e);
        for y in 0..model.len() {
            let r = (pos[y][0] - pos[x0][0]).abs();
            if r <= max_sigma * t.sqrt() {
                samples.push((t, r, col[y] / model.m()[x0]));
            }
        }
    }
    let need = |c2: f64| {
        samples
            .iter()
            .map(|&(t, r, p)| {
                let s = p * t.sqrt();
                let upper = s * (r * r / (c2 * t)).exp();
                let lower = 1.0 / (s * (c2 * r * r / t).exp());
                upper.max(lower)
            })
            .fold(1.0_f64, f64::max)
    };
    let (mut c1, mut c2) = (f64::INFINITY, 1.0);
    for k in 0..=1000 {
        let cand = 1.0 + 0.01 * k as f64;
        let v = need(cand);
        if v < c1 * (1.0 - 1e-9) {
            c1 = v;
            c2 = cand;
        }
    }
    Ok(AronsonFit { c1, c2, samples })
}

/// `F(x,y) = c |x-y|^γ` for `x ≠ y` both in `K`, zero elsewhere.
pub fn build_f_gamma(model: &ReversibleModel, c: f64, gamma: f64, k_states: &[usize]) -> Result<JumpFunction> {
    let pos = model
        .space()
        .positions()
        .ok_or_else(|| Error::invalid("model has no positions"))?;
    let n = model.len();
    if k_states.iter().any(|&k| k >= n) {
        return Err(Error::invalid("K contains an unknown state"));
    }
    let mut in_k = vec![false; n];
    for &k in k_states {
        in_k[k] = true;
    }
    let f = DMatrix::from_fn(n, n, |x, y| {
        if x != y && in_k[x] && in_k[y] {
            c * euclid(&pos[x], &pos[y]).powf(gamma)
        } else {
            0.0
        }
    });
    JumpFunction::new(f)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BumpDiagnostics {
    pub f_u: Vec<f64>,
    /// Lattice norms `(Σ |f_u|^p h^d)^{1/p}` for `p = 1, 2, ∞`.
    pub lp_norms: Vec<(PIndex, f64)>,
    pub f_u_max: f64,
    /// `-slope` of `log f_u` against `log d(x, K)` for `d(x,K) ∈ [8·radius, Lh/2]`.
    pub tail_exponent: f64,
    /// `max f_u(x) (1 + |x|^{d+α})` outside the support.
    pub tail_constant: f64,
}

/// Smooth bump `u(x) = height · exp(1 - 1/(1 - s²))` with `s = |x - center|/radius`
/// and its energy density `f_u(x) = Σ_y (u(x)-u(y))² N(x,y)`.
pub fn build_u_bump(
    model: &ReversibleModel,
    spec: &StableLatticeSpec,
    center: &[f64],
    radius: f64,
    height: f64,
) -> Result<(Vec<f64>, BumpDiagnostics)> {
    if !(radius > 0.0) {
        return Err(Error::invalid("bump radius must be positive"));
    }
    let pos = model
        .space()
        .positions()
        .ok_or_else(|| Error::invalid("model has no positions"))?;
    if center.len() != pos[0].len() {
        return Err(Error::invalid("center dimension differs from the lattice"));
    }
    let n = model.len();
    let u: Vec<f64> = pos
        .iter()
        .map(|p| {
            let s = euclid(p, center) / radius;
            if s < 1.0 {
                height * (1.0 - 1.0 / (1.0 - s * s)).exp()
            } else {
                0.0
            }
        })
        .collect();
    let rates = model.rates();
    let f_u: Vec<f64> = (0..n)
        .map(|x| (0..n).map(|y| (u[x] - u[y]).powi(2) * rates[(x, y)]).sum())
        .collect();
    let hd = spec.spacing.powi(spec.d as i32);
    let l1 = f_u.iter().map(|v| v.abs() * hd).sum::<f64>();
    let l2 = f_u.iter().map(|v| v * v * hd).sum::<f64>().sqrt();
    let f_u_max = f_u.iter().copied().fold(0.0, f64::max);
    let expo = spec.d as f64 + spec.alpha;
    let origin = vec![0.0; center.len()];
    let mut tail_constant: f64 = 0.0;
    let (mut lx, mut ly) = (Vec::new(), Vec::new());
    for x in 0..n {
        let dist = euclid(&pos[x], center);
        if dist < radius {
            continue;
        }
        tail_constant = tail_constant.max(f_u[x] * (1.0 + euclid(&pos[x], &origin).powf(expo)));
        let dk = dist - radius;
        if dk >= 8.0 * radius && dk <= spec.extent() / 2.0 && f_u[x] > 0.0 {
            lx.push(dk.ln());
            ly.push(f_u[x].ln());
        }
    }
    let tail_exponent = if lx.len() >= 2 { -linear_fit(&lx, &ly).0 } else { f64::NAN };
    Ok((
        u,
        BumpDiagnostics {
            f_u,
            lp_norms: vec![(PIndex::ONE, l1), (PIndex::TWO, l2), (PIndex::INF, f_u_max)],
            f_u_max,
            tail_exponent,
            tail_constant,
        },
    ))
}
