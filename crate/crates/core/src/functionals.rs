//! Path sampling and additive functionals of the chain.
//!
//! Paths are piecewise constant, so every continuous additive functional is
//! an exact sum over constancy intervals and every jump functional is a
//! finite sum over jump epochs. No time discretization is involved.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::pairwise_sum;
use crate::markov::{JumpFunction, ReversibleModel, SmoothMeasure};

/// A jump of the path into `to` at time `time`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Jump {
    pub time: f64,
    pub to: usize,
}

/// One trajectory on `[0, horizon]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathSample {
    pub initial: usize,
    pub jumps: Vec<Jump>,
    /// Death time `ζ` when the path was killed before the horizon;
    /// `None` stands for `ζ > horizon` (reported as `+∞`).
    pub lifetime: Option<f64>,
    pub horizon: f64,
}

impl PathSample {
    pub fn died(&self) -> bool {
        self.lifetime.is_some()
    }

    pub fn lifetime_or_inf(&self) -> f64 {
        self.lifetime.unwrap_or(f64::INFINITY)
    }

    /// State at time `t`, `None` once the path is in the cemetery.
    pub fn state_at(&self, t: f64) -> Option<usize> {
        if t >= self.lifetime_or_inf() {
            return None;
        }
        let idx = self.jumps.partition_point(|j| j.time <= t);
        Some(if idx == 0 { self.initial } else { self.jumps[idx - 1].to })
    }

    /// Constancy intervals `(start, end, state)` covering `[0, t ∧ ζ]`.
    pub fn segments(&self, t: f64) -> impl Iterator<Item = (f64, f64, usize)> + '_ {
        let stop = t.min(self.lifetime_or_inf());
        let starts = std::iter::once((0.0, self.initial)).chain(self.jumps.iter().map(|j| (j.time, j.to)));
        let ends = self
            .jumps
            .iter()
            .map(|j| j.time)
            .chain(std::iter::once(f64::INFINITY));
        starts
            .zip(ends)
            .take_while(move |((s, _), _)| *s < stop)
            .map(move |((s, x), e)| (s, e.min(stop), x))
    }

    /// Jumps `(time, from, to)` with `time ≤ t`; the death transition is not included.
    pub fn transitions(&self, t: f64) -> impl Iterator<Item = (f64, usize, usize)> + '_ {
        let froms = std::iter::once(self.initial).chain(self.jumps.iter().map(|j| j.to));
        self.jumps
            .iter()
            .zip(froms)
            .take_while(move |(j, _)| j.time <= t)
            .map(|(j, from)| (j.time, from, j.to))
    }

    fn check_invariants(&self) -> bool {
        let stop = self.horizon.min(self.lifetime_or_inf());
        let increasing = self.jumps.windows(2).all(|w| w[0].time < w[1].time);
        let bounded = self.jumps.iter().all(|j| j.time > 0.0 && j.time <= stop);
        let mut prev = self.initial;
        let moves = self.jumps.iter().all(|j| {
            let ok = j.to != prev;
            prev = j.to;
            ok
        });
        increasing && bounded && moves && self.lifetime.is_none_or(|z| z <= self.horizon)
    }
}

/// Random stream for one path, derived from `(seed, stream)` only.
pub fn path_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Stream index for path `index` started at state `x0`.
pub fn stream_id(x0: usize, index: usize) -> u64 {
    ((x0 as u64) << 32) | index as u64
}

/// Simulate the chain from `x0` up to `horizon`. Holding times at `x` are
/// exponential with rate `q(x)`; the next event is a jump to `y` with
/// probability `N(x,y)/q(x)` or death with probability `κ(x)/q(x)`.
pub fn sample_path(model: &ReversibleModel, x0: usize, horizon: f64, rng: &mut impl Rng) -> Result<PathSample> {
    if x0 >= model.len() {
        return Err(Error::invalid(format!("initial state {x0} out of range")));
    }
    if !(horizon > 0.0) {
        return Err(Error::invalid("horizon must be positive"));
    }
    let rates = model.rates();
    let kappa = model.kappa();
    let n = model.len();
    let mut path = PathSample {
        initial: x0,
        jumps: Vec::new(),
        lifetime: None,
        horizon,
    };
    let mut x = x0;
    let mut t = 0.0;
    loop {
        let q = model.total_rate(x);
        if q <= 0.0 {
            break;
        }
        t += Exp::new(q).expect("positive rate").sample(rng);
        if t > horizon {
            break;
        }
        let mut target = rng.random::<f64>() * q;
        let mut next = None;
        let mut last_positive = None;
        for y in 0..n {
            let r = rates[(x, y)];
            if r > 0.0 {
                last_positive = Some(y);
                if target < r {
                    next = Some(y);
                    break;
                }
                target -= r;
            }
        }
        match next {
            Some(y) => {
                path.jumps.push(Jump { time: t, to: y });
                x = y;
            }
            None if kappa[x] > 0.0 => {
                path.lifetime = Some(t);
                break;
            }
            None => {
                // Roundoff pushed the draw past the last bucket.
                let y = last_positive.expect("positive rate implies a target");
                path.jumps.push(Jump { time: t, to: y });
                x = y;
            }
        }
    }
    debug_assert!(path.check_invariants());
    Ok(path)
}

/// `A^μ_t = ∫_0^{t∧ζ} μ̂(X_s) ds`.
pub fn continuous_af(path: &PathSample, density: &[f64], t: f64) -> f64 {
    path.segments(t).map(|(s, e, x)| density[x] * (e - s)).sum()
}

/// `Σ_{s ≤ t∧ζ} F(X_{s-}, X_s)`; the death transition contributes 0.
pub fn jump_af(path: &PathSample, f: &JumpFunction, t: f64) -> f64 {
    path.transitions(t.min(path.lifetime_or_inf())).map(|(_, a, b)| f.get(a, b)).sum()
}

/// `N^u_t = ∫_0^{t∧ζ} (Lu)(X_s) ds`, with `L` including the killing term.
pub fn zero_energy_af(path: &PathSample, model: &ReversibleModel, u: &[f64], t: f64) -> f64 {
    continuous_af(path, &model.apply_generator(u), t)
}

/// `M^u_t = u(X_t) 1_{t<ζ} - u(X_0) - N^u_t`.
pub fn martingale_af(path: &PathSample, model: &ReversibleModel, u: &[f64], t: f64) -> f64 {
    let end = path.state_at(t).map_or(0.0, |x| u[x]);
    end - u[path.initial] - zero_energy_af(path, model, u, t)
}

/// Density of the energy measure `μ_⟨u⟩`:
/// `Σ_y (u(x)-u(y))² N(x,y) + u(x)² κ(x)`.
pub fn energy_measure(model: &ReversibleModel, u: &[f64]) -> SmoothMeasure {
    let n = model.len();
    let rates = model.rates();
    let density = (0..n)
        .map(|x| {
            let jumps: f64 = (0..n).map(|y| (u[x] - u[y]).powi(2) * rates[(x, y)]).sum();
            jumps + u[x] * u[x] * model.kappa()[x]
        })
        .collect();
    SmoothMeasure::new(density).expect("finite inputs give a finite density")
}

/// `s + 1 - e^s`, accurate for small `s`.
fn jump_compensator(s: f64) -> f64 {
    -(s.exp_m1() - s)
}

/// Density of `ν`, the Revuz measure of the drift left after pulling the
/// Girsanov density out of `e^{N^u}`:
/// `Σ_y (u(x)-u(y)+1-e^{u(x)-u(y)}) N(x,y) + (u(x)+1-e^{u(x)}) κ(x)`.
/// The cemetery carries `u(∂) = 0`.
pub fn nu_measure(model: &ReversibleModel, u: &[f64]) -> SmoothMeasure {
    let n = model.len();
    let rates = model.rates();
    let density = (0..n)
        .map(|x| {
            let jumps: f64 = (0..n)
                .filter(|&y| y != x)
                .map(|y| jump_compensator(u[x] - u[y]) * rates[(x, y)])
                .sum();
            jumps + jump_compensator(u[x]) * model.kappa()[x]
        })
        .collect();
    SmoothMeasure::new(density).expect("finite inputs give a finite density")
}

/// The triple `(u, μ, F)` entering the Feynman-Kac transform.
#[derive(Debug, Clone, PartialEq)]
pub struct Perturbation {
    pub u: Vec<f64>,
    pub mu: SmoothMeasure,
    pub f: JumpFunction,
}

impl Perturbation {
    pub fn new(u: Vec<f64>, mu: SmoothMeasure, f: JumpFunction) -> Result<Self> {
        let n = u.len();
        if mu.density().len() != n || f.len() != n {
            return Err(Error::invalid("perturbation components have different sizes"));
        }
        if u.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("u must be finite"));
        }
        Ok(Self { u, mu, f })
    }

    pub fn zero(n: usize) -> Self {
        Self {
            u: vec![0.0; n],
            mu: SmoothMeasure::zero(n),
            f: JumpFunction::zero(n),
        }
    }

    pub fn potential(mu: SmoothMeasure) -> Self {
        let n = mu.density().len();
        Self {
            u: vec![0.0; n],
            mu,
            f: JumpFunction::zero(n),
        }
    }

    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }

    /// `‖u‖_∞`, the constant in the ν-domination bound.
    pub fn u_sup(&self) -> f64 {
        crate::linalg::sup_norm(&self.u)
    }

    /// Exponent `N^u_t + A^μ_t + Σ F` along a path, given `Lu`.
    pub fn exponent(&self, path: &PathSample, lu: &[f64], t: f64) -> f64 {
        let drift: Vec<f64> = lu.iter().zip(self.mu.density()).map(|(a, b)| a + b).collect();
        continuous_af(path, &drift, t) + jump_af(path, &self.f, t)
    }
}

/// Doléans-Dade exponential `Z_t` of `M_t = ∫ e^{u(X_{s-})} dM^{e^{-u}-1}_s`.
#[derive(Debug, Clone)]
pub struct GirsanovWeight {
    u: Vec<f64>,
    lu: Vec<f64>,
    nu: Vec<f64>,
    /// `e^{u} L(e^{-u} - 1)`, the compensator density of `M`.
    compensator: Vec<f64>,
}

impl GirsanovWeight {
    pub fn new(model: &ReversibleModel, u: &[f64]) -> Self {
        let lu = model.apply_generator(u);
        let nu = nu_measure(model, u).density().to_vec();
        let v: Vec<f64> = u.iter().map(|x| (-x).exp_m1()).collect();
        let lv = model.apply_generator(&v);
        let compensator = lv.iter().zip(u).map(|(a, x)| a * x.exp()).collect();
        Self {
            u: u.to_vec(),
            lu,
            nu,
            compensator,
        }
    }

    fn u_at(&self, state: Option<usize>) -> f64 {
        state.map_or(0.0, |x| self.u[x])
    }

    /// `Z_t = e^{u(X_0)} e^{N^u_t} e^{A^ν_t} e^{-u(X_t)}` with `u(∂) = 0`.
    pub fn closed_form(&self, path: &PathSample, t: f64) -> f64 {
        let drift: Vec<f64> = self.lu.iter().zip(&self.nu).map(|(a, b)| a + b).collect();
        let log_z = self.u[path.initial] + continuous_af(path, &drift, t) - self.u_at(path.state_at(t));
        log_z.exp()
    }

    /// `Z_t = exp(M_t) Π (1 + ΔM_s) e^{-ΔM_s}` with the jumps of `M`
    /// `ΔM = e^{u(X_{s-}) - u(X_s)} - 1`, including the death jump.
    pub fn product_form(&self, path: &PathSample, t: f64) -> f64 {
        let mut increments: Vec<f64> = path
            .transitions(t.min(path.lifetime_or_inf()))
            .map(|(_, a, b)| (self.u[a] - self.u[b]).exp_m1())
            .collect();
        if let Some(zeta) = path.lifetime {
            if zeta <= t {
                let last = path.jumps.last().map_or(path.initial, |j| j.to);
                increments.push(self.u[last].exp_m1());
            }
        }
        let m_t = increments.iter().sum::<f64>() - continuous_af(path, &self.compensator, t);
        let product: f64 = increments.iter().map(|d| (1.0 + d) * (-d).exp()).product();
        m_t.exp() * product
    }
}

/// Convenience wrapper for [`GirsanovWeight::closed_form`].
pub fn girsanov_weight(path: &PathSample, model: &ReversibleModel, u: &[f64], t: f64) -> f64 {
    GirsanovWeight::new(model, u).closed_form(path, t)
}

/// Sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub stderr: f64,
}

impl Estimate {
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len() as f64;
        let mean = pairwise_sum(xs) / n;
        let sq: Vec<f64> = xs.iter().map(|x| (x - mean).powi(2)).collect();
        let var = if xs.len() > 1 { pairwise_sum(&sq) / (n - 1.0) } else { 0.0 };
        Self {
            mean,
            stderr: (var / n).sqrt(),
        }
    }

    /// `|mean - exact| / stderr`, with the degenerate zero-variance case
    /// reported as 0 on exact agreement and infinity otherwise.
    pub fn z_score(&self, exact: f64) -> f64 {
        let err = (self.mean - exact).abs();
        if self.stderr > 0.0 {
            err / self.stderr
        } else if err <= 1e-12 * exact.abs().max(1.0) {
            0.0
        } else {
            f64::INFINITY
        }
    }
}

/// Monte Carlo mean of `value(path)` over `n_paths` paths from `x0`.
/// Path `i` uses stream `(seed, stream_id(x0, i))`, so the result does not
/// depend on the number of worker threads.
pub fn monte_carlo<F>(
    model: &ReversibleModel,
    x0: usize,
    horizon: f64,
    n_paths: usize,
    seed: u64,
    value: F,
) -> Result<Estimate>
where
    F: Fn(&PathSample) -> f64 + Sync,
{
    let samples: Vec<f64> = (0..n_paths)
        .into_par_iter()
        .map(|i| {
            let mut rng = path_rng(seed, stream_id(x0, i));
            sample_path(model, x0, horizon, &mut rng).map(|p| value(&p))
        })
        .collect::<Result<_>>()?;
    Ok(Estimate::from_samples(&samples))
}

/// Debug dump, one CSV row per path:
/// `seed,path,initial,events,lifetime` where `events` is a `;`-separated
/// list of `time:state` and `lifetime` is `inf` for paths alive at the horizon.
pub fn paths_to_csv(seed: u64, paths: &[PathSample]) -> String {
    let mut out = String::from("seed,path,initial,events,lifetime\n");
    for (i, p) in paths.iter().enumerate() {
        let events: Vec<String> = p.jumps.iter().map(|j| format!("{:?}:{}", j.time, j.to)).collect();
        let life = p.lifetime.map_or("inf".to_string(), |z| format!("{z:?}"));
        let _ = writeln!(out, "{seed},{i},{},{},{life}", p.initial, events.join(";"));
    }
    out
}
