//! L^p spectral bounds `λ_p = -lim (1/t) log ‖T_t‖_{p,p}` and the
//! independence verdicts built on them.

use std::fmt;

use nalgebra::{DMatrix, DVector, Matrix2, SymmetricEigen};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::functionals::Perturbation;
use crate::linalg::{linear_fit, SymSpectrum};
use crate::markov::ReversibleModel;
use crate::semigroup::{inf_norm, one_norm, reduced_operator, PerturbedOperator};

/// Relative slack allowed when checking a p-norm against its
/// interpolation bracket.
const BRACKET_SLACK: f64 = 1e-9;
const POWER_TOL: f64 = 1e-13;
/// `λ₂` values within this of zero count as `λ₂ ≤ 0`.
const ZERO_TOL: f64 = 1e-10;
const POWER_MAX_ITER: usize = 200_000;

/// `λ₂ = -sup spec(A)`.
pub fn lambda2_eigen(op: &PerturbedOperator) -> f64 {
    -op.spectrum().top()
}

/// `λ₂` of the Girsanov-reduced operator on the tilted model.
pub fn lambda2_reduced(model: &ReversibleModel, pert: &Perturbation) -> Result<f64> {
    Ok(lambda2_eigen(&reduced_operator(model, pert)?))
}

/// Symmetric matrix `S` with `Q(f) = fᵀ S f` for the quadratic form
///
/// ```text
/// Q(f) = E(f,f) + E(u,f²) - Σ f² μ̂ m - Σ_{x,y} f(x) f(y) (e^{F(x,y)} - 1) J(x,y)
/// ```
///
/// assembled from `J = mN`, `κ` and the perturbation directly.
pub fn quadratic_form_matrix(model: &ReversibleModel, pert: &Perturbation) -> Result<DMatrix<f64>> {
    let n = model.len();
    if pert.len() != n {
        return Err(Error::invalid("perturbation size differs from the model"));
    }
    let m = model.m();
    let u = &pert.u;
    let mut s = DMatrix::zeros(n, n);
    for x in 0..n {
        let mut diag = model.kappa()[x] * m[x];
        // E(u, f²) contributes f(x)² [Σ_y J(x,y)(u(x)-u(y)) + u(x) κ(x) m(x)].
        diag += u[x] * model.kappa()[x] * m[x];
        for y in 0..n {
            if y == x {
                continue;
            }
            let j = model.intensity(x, y);
            if j == 0.0 {
                continue;
            }
            diag += j;
            diag += j * (u[x] - u[y]);
            s[(x, y)] = -j - pert.f.get(x, y).exp_m1() * j;
        }
        diag -= pert.mu.density()[x] * m[x];
        s[(x, x)] = diag;
    }
    for x in 0..n {
        for y in (x + 1)..n {
            let avg = 0.5 * (s[(x, y)] + s[(y, x)]);
            s[(x, y)] = avg;
            s[(y, x)] = avg;
        }
    }
    Ok(s)
}

/// `inf { Q(f) : ‖f‖_{L²(m)} = 1 }` as the bottom eigenvalue of
/// `D^{-1/2} S D^{-1/2}`.
pub fn lambda2_variational(model: &ReversibleModel, pert: &Perturbation) -> Result<f64> {
    let s = normalized_form(model, pert)?;
    let eig = SymmetricEigen::try_new(s, 1e-15, 10_000).ok_or(Error::EigenFailure)?;
    Ok(eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min))
}

fn normalized_form(model: &ReversibleModel, pert: &Perturbation) -> Result<DMatrix<f64>> {
    let mut s = quadratic_form_matrix(model, pert)?;
    let m = model.m();
    for x in 0..s.nrows() {
        for y in 0..s.ncols() {
            s[(x, y)] /= (m[x] * m[y]).sqrt();
        }
    }
    Ok(s)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RayleighOptions {
    /// Stop when the residual `‖Mg - ρg‖` falls below this.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for RayleighOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 100_000,
        }
    }
}

/// Minimizer of `Q` on the unit `L²(m)` sphere by projected gradient descent
/// with exact line search (a 2x2 Rayleigh-Ritz step on `{g, ∇}`).
/// Returns the minimum and the minimizer in original coordinates.
pub fn lambda2_rayleigh(
    model: &ReversibleModel,
    pert: &Perturbation,
    opts: RayleighOptions,
) -> Result<(f64, Vec<f64>)> {
    let s = normalized_form(model, pert)?;
    let n = s.nrows();
    let sqrt_m: Vec<f64> = model.m().iter().map(|v| v.sqrt()).collect();
    let mut g = DVector::from_iterator(n, sqrt_m.iter().copied());
    g.normalize_mut();
    for _ in 0..opts.max_iter {
        let sg = &s * &g;
        let rho = g.dot(&sg);
        let mut r = &sg - rho * &g;
        let drift = r.dot(&g);
        r -= drift * &g;
        let rn = r.norm();
        if rn <= opts.tol {
            let f = g.iter().zip(&sqrt_m).map(|(a, b)| a / b).collect();
            return Ok((rho, f));
        }
        let d = r / rn;
        let sd = &s * &d;
        let off = 0.5 * (g.dot(&sd) + d.dot(&sg));
        let eig = Matrix2::new(rho, off, off, d.dot(&sd)).symmetric_eigen();
        let k = if eig.eigenvalues[0] <= eig.eigenvalues[1] { 0 } else { 1 };
        let c = eig.eigenvectors.column(k);
        g = c[0] * &g + c[1] * d;
        g.normalize_mut();
    }
    Err(Error::EigenFailure)
}

/// Exponent `p ∈ [1, ∞]`; serialized as a number, or the string `"inf"`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct PIndex(pub f64);

impl PIndex {
    pub const ONE: PIndex = PIndex(1.0);
    pub const TWO: PIndex = PIndex(2.0);
    pub const INF: PIndex = PIndex(f64::INFINITY);

    pub fn new(p: f64) -> Result<Self> {
        if p >= 1.0 {
            Ok(Self(p))
        } else {
            Err(Error::invalid(format!("p must lie in [1, inf], got {p}")))
        }
    }

    pub fn is_inf(self) -> bool {
        self.0.is_infinite()
    }
}

impl fmt::Display for PIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_inf() {
            write!(f, "inf")
        } else {
            write!(f, "{}", self.0)
        }
    }
}

impl Serialize for PIndex {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if self.is_inf() {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for PIndex {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        let p = match Raw::deserialize(d)? {
            Raw::Num(v) => v,
            Raw::Str(s) if s == "inf" || s == "infinity" => f64::INFINITY,
            Raw::Str(s) => s
                .parse::<f64>()
                .map_err(|_| serde::de::Error::custom(format!("invalid p {s:?}")))?,
        };
        PIndex::new(p).map_err(serde::de::Error::custom)
    }
}

/// `log ‖exp(tA)‖_{p,p}` on `L^p(m)`.
///
/// Evaluated on the shifted kernel `exp(t(A - top))`, so large `t` does not
/// overflow. For `1 < p < ∞`, `p ≠ 2`, the norm comes from a nonlinear power
/// iteration and is checked against `‖T‖_2 ≤ ‖T‖_p ≤` the Riesz-Thorin bound.
pub fn log_lp_norm(op: &PerturbedOperator, t: f64, p: PIndex) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::invalid("time must be positive"));
    }
    let spec = op.spectrum();
    let shift = t * spec.top();
    if p.0 == 2.0 {
        return Ok(shift);
    }
    let k = spec.exp_shifted(t);
    let m = op.m();
    if p.is_inf() {
        return Ok(shift + inf_norm(&k).ln());
    }
    if p.0 == 1.0 {
        return Ok(shift + one_norm(&k, m).ln());
    }
    let value = power_norm(&k, m, p.0, &spec.top_eigenfunction())?;
    let log_value = value.ln();
    // ‖T‖_2 = 1 on the shifted kernel.
    let (lo, hi) = (0.0, riesz_thorin_log_bound(&k, m, p.0));
    if log_value < lo - BRACKET_SLACK || log_value > hi + BRACKET_SLACK {
        return Err(Error::InterpolationBracketViolation {
            p: p.0,
            value: log_value,
            bound: if log_value < lo { lo } else { hi },
        });
    }
    Ok(shift + log_value)
}

/// `‖exp(tA)‖_{p,p}`.
pub fn lp_norm(op: &PerturbedOperator, t: f64, p: PIndex) -> Result<f64> {
    Ok(log_lp_norm(op, t, p)?.exp())
}

/// Fixed-time rate `-(1/t) log ‖T_t‖_{p,p}`.
pub fn lambda_p_at(op: &PerturbedOperator, t: f64, p: PIndex) -> Result<f64> {
    Ok(-log_lp_norm(op, t, p)? / t)
}

/// Log of the interpolation bound for a shifted kernel (`‖K‖_2 = 1`):
/// `θ log ‖K‖_1` with `θ = 2/p - 1` for `p < 2`, `θ = 1 - 2/p` for `p > 2`.
fn riesz_thorin_log_bound(k: &DMatrix<f64>, m: &[f64], p: f64) -> f64 {
    if p < 2.0 {
        (2.0 / p - 1.0) * one_norm(k, m).ln()
    } else {
        (1.0 - 2.0 / p) * inf_norm(k).ln()
    }
}

/// `‖K‖_{p,p}` on `L^p(m)` for a nonnegative kernel, by the nonlinear power
/// iteration `x ← ψ_{p'}(Bᵀ ψ_p(Bx))` with `B = D^{1/p} K D^{-1/p}` and
/// `ψ_q(z) = z^{q-1}`, started from the Perron eigenfunction.
fn power_norm(k: &DMatrix<f64>, m: &[f64], p: f64, perron: &DVector<f64>) -> Result<f64> {
    let n = k.nrows();
    let q = p / (p - 1.0);
    let mut b = k.clone();
    for x in 0..n {
        for y in 0..n {
            b[(x, y)] *= (m[x] / m[y]).powf(1.0 / p);
        }
    }
    let lp = |v: &DVector<f64>| v.iter().map(|a| a.abs().powf(p)).sum::<f64>().powf(1.0 / p);
    let mut x = DVector::from_iterator(n, perron.iter().zip(m).map(|(f, w)| f.abs().max(1e-300) * w.powf(1.0 / p)));
    x /= lp(&x);
    let mut value = lp(&(&b * &x));
    for _ in 0..POWER_MAX_ITER {
        let y = &b * &x;
        let s = y.map(|a| a.max(0.0).powf(p - 1.0));
        let z = b.tr_mul(&s);
        let mut next = z.map(|a| a.max(0.0).powf(q - 1.0));
        let norm = lp(&next);
        if !(norm > 0.0 && norm.is_finite()) {
            break;
        }
        next /= norm;
        let next_value = lp(&(&b * &next));
        x = next;
        let done = (next_value - value).abs() <= POWER_TOL * next_value;
        value = next_value;
        if done {
            return Ok(value);
        }
    }
    Err(Error::PowerIterationDivergence {
        p,
        iterations: POWER_MAX_ITER,
    })
}

/// Default fitting grid `t₀·{1,2,3,4}` with `t₀ = max(5, 35/gap)`, so that
/// sub-leading terms `e^{-gap·t}` are below roundoff on the whole grid.
pub fn default_t_grid(op: &PerturbedOperator) -> Vec<f64> {
    let gap = op.spectrum().gap();
    let t0 = if gap.is_finite() && gap > 0.0 {
        (35.0 / gap).max(5.0)
    } else {
        5.0
    };
    (1..=4).map(|k| t0 * k as f64).collect()
}

/// Fitted `λ_p` with the fixed-time rate at the largest grid time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LambdaFit {
    pub p: PIndex,
    pub estimate: f64,
    pub stderr: f64,
    pub fixed_t: f64,
}

/// Least-squares slope of `-log ‖T_t‖_{p,p}` against `t` and its standard error.
pub fn lambda_p_fit(op: &PerturbedOperator, p: PIndex, t_grid: &[f64]) -> Result<(f64, f64)> {
    let fit = fit_with_curve(op, p, t_grid)?;
    Ok((fit.0.estimate, fit.0.stderr))
}

fn fit_with_curve(op: &PerturbedOperator, p: PIndex, t_grid: &[f64]) -> Result<(LambdaFit, Vec<f64>)> {
    if t_grid.len() < 4 || t_grid.windows(2).any(|w| !(w[1] > w[0])) || !(t_grid[0] > 0.0) {
        return Err(Error::invalid("t_grid needs at least 4 increasing positive times"));
    }
    let logs: Vec<f64> = t_grid.iter().map(|&t| log_lp_norm(op, t, p)).collect::<Result<_>>()?;
    let neg: Vec<f64> = logs.iter().map(|v| -v).collect();
    let (slope, stderr, _) = linear_fit(t_grid, &neg);
    let t_max = *t_grid.last().expect("nonempty");
    let fixed_t = neg[neg.len() - 1] / t_max;
    Ok((
        LambdaFit {
            p,
            estimate: slope,
            stderr,
            fixed_t,
        },
        logs,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Independent,
    DependentExpected,
    Inconclusive,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Independent => "independent",
            Verdict::DependentExpected => "dependent-expected",
            Verdict::Inconclusive => "inconclusive",
        })
    }
}

/// Whether the fits come from one finite chain or from a sequence of
/// growing truncations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VerdictMode {
    #[default]
    SingleChain,
    Truncation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictInputs {
    pub lambda2: f64,
    pub fits: Vec<LambdaFit>,
    pub conservative: bool,
    pub mode: VerdictMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictOutcome {
    pub ordering_ok: bool,
    pub lower_bound_ok: bool,
    pub verdict: Verdict,
    pub explanation: String,
}

/// Agreement tolerance `max(1e-6, 3·stderr)`.
pub fn agreement_tol(stderr: f64) -> f64 {
    (3.0 * stderr).max(1e-6)
}

pub fn independence_verdict(inputs: &VerdictInputs) -> VerdictOutcome {
    let l2 = inputs.lambda2;
    let inf = inputs.fits.iter().find(|f| f.p.is_inf());
    let ordering_ok = match inf {
        Some(li) => inputs.fits.iter().all(|f| {
            let tol = agreement_tol(f.stderr.max(li.stderr));
            li.estimate <= f.estimate + tol && f.estimate <= l2 + agreement_tol(f.stderr)
        }),
        None => false,
    };
    let lower_bound_ok = inf.is_some_and(|li| li.estimate >= l2.min(0.0) - agreement_tol(li.stderr));
    let max_err = inputs.fits.iter().map(|f| f.stderr).fold(0.0, f64::max);
    let spread = inputs
        .fits
        .iter()
        .map(|f| (f.estimate - l2).abs())
        .fold(0.0, f64::max);
    let agree = spread <= agreement_tol(max_err);
    let (verdict, explanation) = if l2 <= ZERO_TOL && agree {
        (
            Verdict::Independent,
            format!("lambda2 = {l2:e} <= 0 and all fitted lambda_p agree within {:e}", agreement_tol(max_err)),
        )
    } else if l2 <= ZERO_TOL {
        (
            Verdict::Inconclusive,
            format!("lambda2 = {l2:e} <= 0 but fitted lambda_p spread {spread:e} exceeds the agreement tolerance"),
        )
    } else if inputs.conservative && inputs.mode == VerdictMode::Truncation {
        (
            Verdict::DependentExpected,
            format!(
                "conservative with lambda2 = {l2:e} > 0: in infinite volume lambda_inf = 0, so the rates depend on p"
            ),
        )
    } else if inputs.conservative {
        (
            Verdict::Inconclusive,
            format!(
                "conservative with lambda2 = {l2:e} > 0; a single finite chain has p-independent rates (fits agree: {agree}), \
                 the infinite-volume p-dependence is only visible in a truncation study"
            ),
        )
    } else {
        (
            Verdict::Inconclusive,
            format!("lambda2 = {l2:e} > 0 on a chain with killing; no independence criterion applies (fits agree: {agree})"),
        )
    };
    VerdictOutcome {
        ordering_ok,
        lower_bound_ok,
        verdict,
        explanation,
    }
}

/// One row of plot data: `log ‖T_t‖_{p,p}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormPoint {
    pub t: f64,
    pub p: PIndex,
    pub log_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralReport {
    pub lambda2_variational: f64,
    pub lambda2_eigen: f64,
    pub lambda2_reduced: f64,
    pub lambda_p_fit: Vec<LambdaFit>,
    pub t_grid: Vec<f64>,
    pub conservative: bool,
    pub ordering_ok: bool,
    pub lower_bound_ok: bool,
    pub verdict: Verdict,
    pub explanation: String,
    #[serde(skip)]
    pub curves: Vec<NormPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpectralOptions {
    pub p_grid: Vec<PIndex>,
    /// Fitting times; `None` picks [`default_t_grid`].
    pub t_grid: Option<Vec<f64>>,
    pub mode: VerdictMode,
}

impl Default for SpectralOptions {
    fn default() -> Self {
        Self {
            p_grid: vec![PIndex::ONE, PIndex(1.5), PIndex::TWO, PIndex(4.0), PIndex::INF],
            t_grid: None,
            mode: VerdictMode::SingleChain,
        }
    }
}

/// Full report: `λ₂` three ways, fitted `λ_p` on the p-grid (always
/// including 1, 2 and ∞) and the verdict.
pub fn spectral_report(model: &ReversibleModel, pert: &Perturbation, opts: &SpectralOptions) -> Result<SpectralReport> {
    let op = crate::semigroup::fk_generator(model, pert)?;
    let lambda2_eigen = lambda2_eigen(&op);
    let lambda2_variational = lambda2_variational(model, pert)?;
    let lambda2_reduced = lambda2_reduced(model, pert)?;
    let t_grid = match &opts.t_grid {
        Some(g) => g.clone(),
        None => default_t_grid(&op),
    };
    let mut ps = opts.p_grid.clone();
    ps.extend([PIndex::ONE, PIndex::TWO, PIndex::INF]);
    ps.sort_by(|a, b| a.0.total_cmp(&b.0));
    ps.dedup();
    let mut fits = Vec::with_capacity(ps.len());
    let mut curves = Vec::new();
    for &p in &ps {
        let (fit, logs) = fit_with_curve(&op, p, &t_grid)?;
        fits.push(fit);
        curves.extend(t_grid.iter().zip(logs).map(|(&t, log_norm)| NormPoint { t, p, log_norm }));
    }
    let outcome = independence_verdict(&VerdictInputs {
        lambda2: lambda2_eigen,
        fits: fits.clone(),
        conservative: model.is_conservative(),
        mode: opts.mode,
    });
    Ok(SpectralReport {
        lambda2_variational,
        lambda2_eigen,
        lambda2_reduced,
        lambda_p_fit: fits,
        t_grid,
        conservative: model.is_conservative(),
        ordering_ok: outcome.ordering_ok,
        lower_bound_ok: outcome.lower_bound_ok,
        verdict: outcome.verdict,
        explanation: outcome.explanation,
        curves,
    })
}

impl SpectralReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub const CSV_HEADER: &'static str =
        "instance,p,estimate,stderr,fixed_t_rate,lambda2_eigen,lambda2_variational,lambda2_reduced,verdict";

    /// Rows (one per p) without the header.
    pub fn csv_rows(&self, instance: &str) -> String {
        let mut out = String::new();
        for f in &self.lambda_p_fit {
            out.push_str(&format!(
                "{instance},{},{:?},{:?},{:?},{:?},{:?},{:?},{}\n",
                f.p,
                f.estimate,
                f.stderr,
                f.fixed_t,
                self.lambda2_eigen,
                self.lambda2_variational,
                self.lambda2_reduced,
                self.verdict
            ));
        }
        out
    }

    pub fn to_csv(&self, instance: &str) -> String {
        format!("{}\n{}", Self::CSV_HEADER, self.csv_rows(instance))
    }

    /// Plot data with columns `t,p,log_norm`.
    pub fn plot_csv(&self) -> String {
        let mut out = String::from("t,p,log_norm\n");
        for pt in &self.curves {
            out.push_str(&format!("{:?},{},{:?}\n", pt.t, pt.p, pt.log_norm));
        }
        out
    }
}

/// `λ₂` computed from an eigendecomposition already at hand.
pub fn lambda2_of(spectrum: &SymSpectrum) -> f64 {
    -spectrum.top()
}
