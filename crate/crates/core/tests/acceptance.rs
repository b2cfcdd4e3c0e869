//! Acceptance suite. Runs without the libtest harness so every criterion
//! prints one PASS/FAIL line; the process fails if any criterion fails.

use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use fklab::cli::{load_config, run_file, CommandSpec, Format};
use fklab::functionals::{energy_measure, girsanov_weight, monte_carlo, nu_measure};
use fklab::kato::{kato_modulus, kinf_check, stollmann_voigt_check};
use fklab::markov::{ReversibleModel, SmoothMeasure, StateSpace};
use fklab::models::{
    build_diffusion_chain, build_stable_lattice, convergence_order, default_pairs, diffusion_generator_error,
    green1_bound_check, heat_kernel_estimate_check, heat_kernel_window, Coefficient, DiffusionChainSpec,
    StableLatticeSpec,
};
use fklab::semigroup::{fk_apply_exact, fk_apply_mc, fk_generator, inf_norm, one_norm, reduce_via_girsanov};
use fklab::spectral::{
    agreement_tol, lambda2_eigen, lambda2_reduced, lambda2_variational, lambda_p_at, spectral_report, PIndex,
    SpectralOptions, Verdict,
};
use fklab::suite::{instance_suite, InstanceBounds};

const SUITE_SEED: u64 = 20261016;
const SUITE_SIZE: usize = 100;
const SUITE_STATES: usize = 5;

struct Outcome {
    pass: bool,
    detail: String,
}

fn report(id: usize, title: &str, start: Instant, limit: Option<f64>, outcome: fklab::Result<Outcome>) -> bool {
    let secs = start.elapsed().as_secs_f64();
    let (pass, detail) = match outcome {
        Ok(o) => (o.pass, o.detail),
        Err(e) => (false, format!("error: {e}")),
    };
    let in_time = limit.is_none_or(|l| secs < l);
    let timing = match limit {
        Some(l) => format!("{secs:.2} s (limit {l} s)"),
        None => format!("{secs:.2} s"),
    };
    let ok = pass && in_time;
    println!(
        "criterion {id:>2} [{title}]: {} | {detail} | {timing}",
        if ok { "PASS" } else { "FAIL" }
    );
    ok
}

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn suite() -> Vec<fklab::suite::Instance> {
    instance_suite(SUITE_SEED, SUITE_SIZE, SUITE_STATES, InstanceBounds::default())
}

/// 1. Girsanov reduction identity, t ∈ {0.1, 1, 10}, tolerance 1e-10.
fn girsanov_reduction() -> fklab::Result<Outcome> {
    let mut worst_rel: f64 = 0.0;
    let mut worst_abs_small_t: f64 = 0.0;
    for inst in suite() {
        for t in [0.1, 1.0, 10.0] {
            let r = reduce_via_girsanov(&inst.model, &inst.perturbation, t, &inst.f)?;
            worst_rel = worst_rel.max(r.relative);
            if t <= 1.0 {
                worst_abs_small_t = worst_abs_small_t.max(r.residual);
            }
        }
    }
    Ok(Outcome {
        pass: worst_rel <= 1e-10,
        detail: format!(
            "max residual / max(1, |lhs|) = {worst_rel:.2e} (tol 1e-10); max absolute residual for t <= 1: {worst_abs_small_t:.2e}"
        ),
    })
}

/// 2. λ₂ three ways, pairwise within 1e-8.
fn spectral_identity() -> fklab::Result<Outcome> {
    let mut worst: f64 = 0.0;
    for inst in suite() {
        let op = fk_generator(&inst.model, &inst.perturbation)?;
        let a = lambda2_eigen(&op);
        let b = lambda2_variational(&inst.model, &inst.perturbation)?;
        let c = lambda2_reduced(&inst.model, &inst.perturbation)?;
        worst = worst.max((a - b).abs()).max((a - c).abs()).max((b - c).abs());
    }
    Ok(Outcome {
        pass: worst <= 1e-8,
        detail: format!("max pairwise difference {worst:.2e} (tol 1e-8)"),
    })
}

fn p_grid() -> [PIndex; 5] {
    [PIndex::ONE, PIndex(1.5), PIndex::TWO, PIndex(4.0), PIndex::INF]
}

/// 3. Ordering of fixed-time rates at t = 20 and ‖T_t‖_{1,1} = ‖T_t‖_{∞,∞}.
fn ordering() -> fklab::Result<Outcome> {
    let t = 20.0;
    let mut violations = 0;
    let mut worst_gap = f64::NEG_INFINITY;
    let mut worst_dual: f64 = 0.0;
    for inst in suite() {
        let op = fk_generator(&inst.model, &inst.perturbation)?;
        let l2 = lambda2_eigen(&op);
        let rates: Vec<f64> = p_grid().iter().map(|&p| lambda_p_at(&op, t, p)).collect::<fklab::Result<_>>()?;
        let l_inf = rates[4];
        for &r in &rates {
            worst_gap = worst_gap.max(l_inf - r).max(r - l2);
            if l_inf > r + 1e-10 || r > l2 + 1e-10 {
                violations += 1;
            }
        }
        // Duality on a moderate time, where the kernel is O(1).
        let k = op.kernel(1.0);
        let (n1, ninf) = (one_norm(&k, op.m()), inf_norm(&k));
        worst_dual = worst_dual.max((n1 - ninf).abs() / ninf.max(1.0));
    }
    Ok(Outcome {
        pass: violations == 0 && worst_dual <= 1e-12,
        detail: format!(
            "{violations} ordering violations (largest excess {worst_gap:.2e}, tol 1e-10); max |‖T‖_11 - ‖T‖_inf| relative {worst_dual:.2e} (tol 1e-12)"
        ),
    })
}

/// 4. λ_∞ ≥ min(λ₂, 0) and p-independence when λ₂ ≤ 0, on the killed suite
/// and on a conservative suite (where λ₂ ≤ 0 occurs often).
fn lower_bound_check() -> fklab::Result<Outcome> {
    let conservative = InstanceBounds {
        kappa: 0.0,
        ..Default::default()
    };
    let mut instances = suite();
    instances.extend(instance_suite(SUITE_SEED + 1, SUITE_SIZE, SUITE_STATES, conservative));
    let opts = SpectralOptions::default();
    let (mut lower_bad, mut nonpositive, mut disagree) = (0, 0, 0);
    for inst in &instances {
        let rep = spectral_report(&inst.model, &inst.perturbation, &opts)?;
        let l2 = rep.lambda2_eigen;
        let inf = rep.lambda_p_fit.iter().find(|f| f.p.is_inf()).expect("always fitted");
        if inf.estimate < l2.min(0.0) - 1e-10 {
            lower_bad += 1;
        }
        if l2 <= 0.0 {
            nonpositive += 1;
            let max_se = rep.lambda_p_fit.iter().map(|f| f.stderr).fold(0.0, f64::max);
            let spread = rep
                .lambda_p_fit
                .iter()
                .map(|f| (f.estimate - inf.estimate).abs())
                .fold(0.0, f64::max);
            if spread > agreement_tol(max_se) || rep.verdict != Verdict::Independent {
                disagree += 1;
            }
        }
    }
    Ok(Outcome {
        pass: lower_bad == 0 && disagree == 0 && nonpositive > 0,
        detail: format!(
            "{} instances: {lower_bad} with lambda_inf < min(lambda2, 0) - 1e-10; {nonpositive} with lambda2 <= 0, {disagree} of them not p-independent",
            instances.len()
        ),
    })
}

fn four_state(kappa: [f64; 4]) -> ReversibleModel {
    let space = StateSpace::unlabeled(vec![1.0, 0.5, 2.0, 1.0]).unwrap();
    let mut n = DMatrix::zeros(4, 4);
    for &(x, y, j) in &[(0, 1, 1.0), (1, 2, 0.5), (2, 3, 1.0), (0, 3, 0.3), (0, 2, 0.4)] {
        let (mx, my) = (space.m()[x], space.m()[y]);
        n[(x, y)] = j / mx;
        n[(y, x)] = j / my;
    }
    ReversibleModel::build(space, n, kappa.to_vec()).unwrap()
}

/// 5. E_x[Z_t f(X_t)] = exp(tL̃) f and E_x[Z_t] = 1 from 10⁵ paths.
fn martingale() -> fklab::Result<Outcome> {
    let model = four_state([0.0; 4]);
    let u = [0.4, -0.3, 0.7, -0.6];
    let f = [1.0, -2.0, 0.5, 3.0];
    let t = 1.0;
    let n_paths = 100_000;
    let exact = model.tilt(&u)?.transition_semigroup(t)?;
    let (mut worst_f, mut worst_one): (f64, f64) = (0.0, 0.0);
    for x in 0..4 {
        let target: f64 = (0..4).map(|y| exact[(x, y)] * f[y]).sum();
        let est = monte_carlo(&model, x, t, n_paths, 5, |p| {
            p.state_at(t).map_or(0.0, |y| girsanov_weight(p, &model, &u, t) * f[y])
        })?;
        worst_f = worst_f.max(est.z_score(target).abs());
        let one = monte_carlo(&model, x, t, n_paths, 6, |p| {
            if p.state_at(t).is_some() {
                girsanov_weight(p, &model, &u, t)
            } else {
                0.0
            }
        })?;
        worst_one = worst_one.max(one.z_score(1.0).abs());
    }
    Ok(Outcome {
        pass: worst_f <= 3.0 && worst_one <= 3.0,
        detail: format!("max |z| for E[Z f(X)] = {worst_f:.2}, for E[Z] = {worst_one:.2} (limit 3)"),
    })
}

/// 6. Energy-measure identity to 1e-12 and |ν̂| ≤ (e^{‖u‖}/2) μ̂_⟨u⟩.
fn energy_and_nu() -> fklab::Result<Outcome> {
    let instances = suite();
    let mut rng = ChaCha8Rng::seed_from_u64(66);
    let mut worst: f64 = 0.0;
    for k in 0..50 {
        let inst = &instances[k];
        let u = &inst.perturbation.u;
        let f: Vec<f64> = (0..SUITE_STATES).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mu = energy_measure(&inst.model, u);
        let lhs = mu.integrate(&f, inst.model.m());
        let uf: Vec<f64> = u.iter().zip(&f).map(|(a, b)| a * b).collect();
        let u2: Vec<f64> = u.iter().map(|a| a * a).collect();
        let rhs = 2.0 * inst.model.dirichlet_energy(&uf, u) - inst.model.dirichlet_energy(&u2, &f);
        worst = worst.max((lhs - rhs).abs());
    }
    let mut violations = 0;
    for inst in &instances {
        let u = &inst.perturbation.u;
        let bound = inst.perturbation.u_sup().exp() / 2.0;
        let nu = nu_measure(&inst.model, u);
        let mu = energy_measure(&inst.model, u);
        for (a, b) in nu.density().iter().zip(mu.density()) {
            if a.abs() > bound * b * (1.0 + 1e-12) {
                violations += 1;
            }
        }
    }
    Ok(Outcome {
        pass: worst <= 1e-12 && violations == 0,
        detail: format!("max identity error {worst:.2e} (tol 1e-12); {violations} domination violations"),
    })
}

/// 7. Monte Carlo vs exact within 3 stderr at every state, in ≥ 96 of 100 runs.
fn mc_consistency() -> fklab::Result<Outcome> {
    let instances = suite();
    let t = 1.0;
    let mut good = 0;
    for (run, inst) in instances.iter().enumerate() {
        let op = fk_generator(&inst.model, &inst.perturbation)?;
        let exact = fk_apply_exact(&op, t, &inst.f)?;
        let mc = fk_apply_mc(&inst.model, &inst.perturbation, t, &inst.f, 4000, 1000 + run as u64)?;
        let ok = (0..inst.model.len()).all(|x| (mc.estimate[x] - exact[x]).abs() <= 3.0 * mc.stderr[x]);
        good += ok as usize;
    }
    Ok(Outcome {
        pass: good >= 96,
        detail: format!("{good}/100 runs within 3 stderr at every state (need 96)"),
    })
}

/// 8. Kato modulus slope, Stollmann-Voigt, and K_∞ discrimination.
fn kato_machinery() -> fklab::Result<Outcome> {
    let instances = suite();
    let mut worst_ratio: f64 = 0.0;
    let mut worst_slope: f64 = 0.0;
    for inst in instances.iter().take(3) {
        let mu = &inst.perturbation.mu;
        let lead = mu.sup_norm();
        let (t1, t2) = (1e-5, 1e-4);
        let (k1, k2) = (kato_modulus(&inst.model, mu, t1)?, kato_modulus(&inst.model, mu, t2)?);
        worst_ratio = worst_ratio.max((k2 / t2 / lead - 1.0).abs());
        worst_slope = worst_slope.max(((k2 / k1).ln() / (t2 / t1).ln() - 1.0).abs());
    }
    let modulus_ok = worst_ratio <= 0.01 && worst_slope <= 0.01;
    let mut sv_violations = 0;
    for (i, inst) in instances.iter().enumerate() {
        let pos = SmoothMeasure::new(inst.perturbation.mu.positive_part())?;
        let excess = stollmann_voigt_check(&inst.model, &pos, 50, i as u64)?;
        if excess > 1e-12 {
            sv_violations += 1;
        }
    }
    let verdict_of = |name: &str| -> fklab::Result<fklab::kato::CertVerdict> {
        let cfg = load_config(&configs_dir().join(name))?;
        let CommandSpec::Kato(cmd) = &cfg.command else {
            return Err(fklab::Error::InvalidInput(format!("{name} is not a kato config")));
        };
        let model = fklab::cli::build_model(&cfg, &configs_dir())?;
        let pert = cfg.perturbation.build(&model)?;
        Ok(kinf_check(&model, &pert.mu, cmd.eps, cmd.alpha)?.verdict)
    };
    let lp = verdict_of("kato_lp_density.json")?;
    let heavy = verdict_of("kato_heavy_tail.json")?;
    let discriminates = lp.passed() && !heavy.passed();
    Ok(Outcome {
        pass: modulus_ok && sv_violations == 0 && discriminates,
        detail: format!(
            "modulus/t vs sup|mu| off by {worst_ratio:.1e}, slope off by {worst_slope:.1e} (tol 1e-2); \
             {sv_violations} Stollmann-Voigt violations; K_inf: L^p density {lp}, heavy tail {heavy}"
        ),
    })
}

/// 9. Continuum anchors on the lattices.
fn continuum_anchors() -> fklab::Result<Outcome> {
    let spec = StableLatticeSpec::new(256, 1.0 / 16.0, 1.0);
    let model = build_stable_lattice(&spec)?;
    let (lo, hi) = heat_kernel_window(&spec);
    let grid = [lo, (lo * hi).sqrt(), hi];
    let hk = heat_kernel_estimate_check(&model, &spec, &grid, &default_pairs(&spec))?;
    let cauchy = hk.exact_ratio.expect("c constant, alpha = 1");
    let mut green_spread: f64 = 0.0;
    let mut green_parts = Vec::new();
    for alpha in [0.5, 1.0, 1.5] {
        let c2: Vec<f64> = [128, 256]
            .iter()
            .map(|&l| {
                let s = StableLatticeSpec::new(l, 1.0 / 16.0, alpha);
                Ok(green1_bound_check(&build_stable_lattice(&s)?, &s)?.c2)
            })
            .collect::<fklab::Result<_>>()?;
        let spread = if c2.iter().all(|c| c.is_finite() && *c > 0.0) {
            (c2[1] / c2[0] - 1.0).abs()
        } else {
            f64::INFINITY
        };
        green_spread = green_spread.max(spread);
        green_parts.push(format!("alpha {alpha}: {:.3}/{:.3}", c2[0], c2[1]));
    }
    let hs = [0.1, 0.05, 0.025];
    let mut errs = Vec::new();
    for &h in &hs {
        let mut s = DiffusionChainSpec::new((2.0_f64 / h).round() as usize, h);
        s.a = Coefficient::Expr("2 + sin(x)".into());
        let chain = build_diffusion_chain(&s)?;
        errs.push(diffusion_generator_error(
            &chain,
            |x| (-x * x).exp(),
            |x| 0.5 * (x.cos() * (-2.0 * x) + (2.0 + x.sin()) * (4.0 * x * x - 2.0)) * (-x * x).exp(),
            1.0,
        )?);
    }
    let order = convergence_order(&hs, &errs);
    Ok(Outcome {
        pass: cauchy <= 1.5 && green_spread <= 0.3 && (order - 2.0).abs() <= 0.2,
        detail: format!(
            "Cauchy ratio {cauchy:.4} (limit 1.5); Green c2 L=128/256 {} (max change {:.1}%, limit 30%); generator order {order:.3} (2 +- 0.2)",
            green_parts.join(", "),
            100.0 * green_spread
        ),
    })
}

/// 10. Byte-identical outputs for every bundled config, two runs, same threads.
fn reproducibility() -> fklab::Result<Outcome> {
    let mut configs: Vec<PathBuf> = std::fs::read_dir(configs_dir())?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .collect();
    configs.sort();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(2).build().expect("thread pool");
    let dirs = [tempfile::tempdir()?, tempfile::tempdir()?];
    let mut mismatches = Vec::new();
    let mut files = 0;
    for cfg in &configs {
        let mut outputs = Vec::new();
        for dir in &dirs {
            for format in [Format::Csv, Format::Json] {
                let out = dir.path().join(format!("{format:?}"));
                let outcome = pool.install(|| run_file(cfg, &out, None, format))?;
                let mut contents = Vec::new();
                for f in &outcome.files {
                    contents.push((f.file_name().expect("file").to_owned(), std::fs::read(f)?));
                }
                outputs.push(contents);
            }
        }
        files += outputs[0].len() + outputs[1].len();
        if outputs[0] != outputs[2] || outputs[1] != outputs[3] {
            mismatches.push(cfg.file_name().expect("file").to_string_lossy().into_owned());
        }
    }
    Ok(Outcome {
        pass: mismatches.is_empty() && !configs.is_empty(),
        detail: format!(
            "{} configs, {files} files per run; mismatches: {}",
            configs.len(),
            if mismatches.is_empty() { "none".into() } else { mismatches.join(", ") }
        ),
    })
}

fn main() {
    // `cargo test -- --list` and filters: this target has a single entry.
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let criteria: [(&str, Option<f64>, fn() -> fklab::Result<Outcome>); 10] = [
        ("Girsanov reduction identity", Some(10.0), girsanov_reduction),
        ("spectral identity", Some(10.0), spectral_identity),
        ("L^p ordering and duality", None, ordering),
        ("lower bound and p-independence", None, lower_bound_check),
        ("Girsanov martingale", Some(30.0), martingale),
        ("energy measure and nu", None, energy_and_nu),
        ("Monte Carlo consistency", None, mc_consistency),
        ("Kato machinery", None, kato_machinery),
        ("continuum anchors", Some(60.0), continuum_anchors),
        ("reproducibility", None, reproducibility),
    ];
    let mut failed = 0;
    for (i, (title, limit, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        if !report(i + 1, title, start, *limit, check()) {
            failed += 1;
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
