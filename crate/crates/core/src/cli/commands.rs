//! Command implementations. Each command computes in parallel and writes its
//! files afterwards, in a fixed order.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::Serialize;

use super::config::{CommandSpec, ExperimentConfig, ModelSpec};
use crate::error::{Error, Result};
use crate::functionals::{nu_measure, path_rng, paths_to_csv, sample_path, stream_id, PathSample};
use crate::kato::{j_check, jinf_check, k1_check, k_check, kinf_check, KatoCertificate, KatoClass};
use crate::markov::{ReversibleModel, SmoothMeasure};
use crate::models::{aronson_fit, default_pairs, green1_bound_check, heat_kernel_estimate_check};
use crate::semigroup::{fk_apply_exact, fk_apply_mc, fk_generator, reduce_with_nu};
use crate::spectral::{default_t_grid, lambda2_eigen, lambda_p_fit, spectral_report, PIndex, SpectralOptions};
use crate::suite::instance_suite;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Format {
    #[default]
    Csv,
    Json,
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => Err(Error::config("--format", format!("expected csv or json, got {other:?}"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    /// Overrides the config seed.
    pub seed: Option<u64>,
    pub format: Format,
    /// Prefix of every output file.
    pub stem: String,
    /// Directory against which model file references are resolved.
    pub base_dir: PathBuf,
}

impl RunOptions {
    pub fn new(out_dir: impl Into<PathBuf>, stem: impl Into<String>) -> Self {
        Self {
            out_dir: out_dir.into(),
            seed: None,
            format: Format::default(),
            stem: stem.into(),
            base_dir: PathBuf::from("."),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub files: Vec<PathBuf>,
    /// Set when a checked property failed; maps to exit code 3.
    pub violation: Option<String>,
    pub summary: String,
}

/// Exit status: 0 success, 2 validation error, 3 property violation, 1 other failures.
pub fn exit_code(result: &Result<RunOutcome>) -> i32 {
    match result {
        Ok(o) if o.violation.is_some() => 3,
        Ok(_) => 0,
        Err(
            Error::Config { .. }
            | Error::InvalidInput(_)
            | Error::DetailedBalanceViolation { .. }
            | Error::NotIrreducible { .. }
            | Error::WindowViolation(_)
            | Error::NotApplicable(_)
            | Error::Json(_),
        ) => 2,
        Err(_) => 1,
    }
}

/// Load a config file and run it; the stem defaults to the file name.
pub fn run_file(path: &Path, out_dir: &Path, seed: Option<u64>, format: Format) -> Result<RunOutcome> {
    let cfg = super::config::deserialize_config(&std::fs::read_to_string(path)?)?;
    let stem = cfg
        .name
        .clone()
        .or_else(|| path.file_stem().map(|s| s.to_string_lossy().into_owned()))
        .unwrap_or_else(|| "run".into());
    let opts = RunOptions {
        out_dir: out_dir.to_path_buf(),
        seed,
        format,
        stem,
        base_dir: path.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from(".")),
    };
    run(&cfg, &opts)
}

struct Writer<'a> {
    opts: &'a RunOptions,
    files: Vec<PathBuf>,
}

impl Writer<'_> {
    fn write(&mut self, suffix: &str, content: &str) -> Result<()> {
        std::fs::create_dir_all(&self.opts.out_dir)?;
        let path = self.opts.out_dir.join(format!("{}.{suffix}", self.opts.stem));
        std::fs::write(&path, content)?;
        self.files.push(path);
        Ok(())
    }
}

fn json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

pub fn run(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<RunOutcome> {
    let mut cfg = cfg.clone();
    if opts.seed.is_some() {
        cfg.seed = opts.seed;
    }
    cfg.validate()?;
    let mut w = Writer { opts, files: Vec::new() };
    let model = match &cfg.model {
        Some(spec) if !matches!(cfg.command, CommandSpec::TruncationStudy(_)) => Some(spec.build(&opts.base_dir, cfg.seed)?),
        _ => None,
    };
    let (violation, summary) = match &cfg.command {
        CommandSpec::Spectral(c) => {
            let model = model.as_ref().expect("validated");
            let pert = cfg.perturbation.build(model)?;
            let mut options = SpectralOptions {
                t_grid: c.t_grid.clone(),
                mode: c.mode,
                ..Default::default()
            };
            if let Some(p) = &c.p_grid {
                options.p_grid = p.clone();
            }
            let report = spectral_report(model, &pert, &options)?;
            w.write("report.json", &json(&report)?)?;
            w.write("report.csv", &report.to_csv(&opts.stem))?;
            w.write("plot.csv", &report.plot_csv())?;
            (
                None,
                format!("lambda2 = {:e}, verdict {}", report.lambda2_eigen, report.verdict),
            )
        }
        CommandSpec::IdentityCheck(c) => {
            let seed = cfg.seed.expect("validated");
            let suite = instance_suite(seed, c.count, c.n, c.bounds);
            let rows: Vec<IdentityRow> = suite
                .par_iter()
                .enumerate()
                .map(|(i, inst)| {
                    let mut nu = nu_measure(&inst.model, &inst.perturbation.u);
                    if let Some(shift) = c.corrupt_nu {
                        nu = SmoothMeasure::new(nu.density().iter().map(|v| v + shift).collect())?;
                    }
                    c.t_grid
                        .iter()
                        .map(|&t| {
                            let r = reduce_with_nu(&inst.model, &inst.perturbation, t, &inst.f, &nu)?;
                            Ok(IdentityRow {
                                instance: i,
                                t,
                                residual: r.residual,
                                relative: r.relative,
                            })
                        })
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<Vec<_>>>()?
                .into_iter()
                .flatten()
                .collect();
            let max_residual = rows.iter().map(|r| r.relative).fold(0.0, f64::max);
            match opts.format {
                Format::Json => w.write(
                    "identity.json",
                    &json(&IdentityReport {
                        max_residual,
                        tolerance: c.tolerance,
                        corrupt_nu: c.corrupt_nu,
                        rows: &rows,
                    })?,
                )?,
                Format::Csv => {
                    let mut s = String::from("instance,t,residual,relative\n");
                    for r in &rows {
                        let _ = writeln!(s, "{},{:?},{:e},{:e}", r.instance, r.t, r.residual, r.relative);
                    }
                    w.write("identity.csv", &s)?;
                }
            }
            let violation = (max_residual > c.tolerance)
                .then(|| format!("max residual {max_residual:e} exceeds {:e}", c.tolerance));
            (violation, format!("max residual {max_residual:e} over {} rows", rows.len()))
        }
        CommandSpec::Kato(c) => {
            let model = model.as_ref().expect("validated");
            let pert = cfg.perturbation.build(model)?;
            let certs: Vec<KatoCertificate> = c
                .classes
                .par_iter()
                .map(|&class| match class {
                    KatoClass::K => k_check(model, &pert.mu, &c.t_grid, c.eps),
                    KatoClass::KInf => kinf_check(model, &pert.mu, c.eps, c.alpha),
                    KatoClass::K1 => {
                        let k1 = c
                            .k1
                            .as_ref()
                            .ok_or_else(|| Error::config("command.k1", "class K_1 needs k_set and delta"))?;
                        k1_check(model, &pert.mu, &k1.k_set, k1.delta, c.alpha)
                    }
                    KatoClass::J => j_check(model, &pert.f, &c.t_grid, c.eps),
                    KatoClass::JInf => jinf_check(model, &pert.f, c.eps, c.alpha),
                })
                .collect::<Result<_>>()?;
            w.write("certificates.json", &json(&certs)?)?;
            if opts.format == Format::Csv {
                let mut s = String::from("class,verdict,k_size,delta,achieved_sup,beta1,exact\n");
                for cert in &certs {
                    let wt = &cert.witness;
                    let beta = wt.beta1.map_or(String::new(), |b| format!("{b:e}"));
                    let _ = writeln!(
                        s,
                        "{},{},{},{:e},{:e},{beta},{}",
                        cert.class,
                        cert.verdict,
                        wt.k_set.len(),
                        wt.delta,
                        wt.achieved_sup,
                        wt.exact
                    );
                }
                w.write("certificates.csv", &s)?;
            }
            let verdicts: Vec<String> = certs.iter().map(|c| format!("{}: {}", c.class, c.verdict)).collect();
            (None, verdicts.join(", "))
        }
        CommandSpec::TruncationStudy(c) => {
            let spec = cfg.model.as_ref().expect("validated");
            let rows: Vec<TruncationRow> = c
                .ladder
                .par_iter()
                .map(|&l| {
                    let model = spec.with_half_width(l).expect("validated").build(&opts.base_dir, cfg.seed)?;
                    let pert = cfg.perturbation.build(&model)?;
                    let op = fk_generator(&model, &pert)?;
                    let grid = c.t_grid.clone().unwrap_or_else(|| default_t_grid(&op));
                    let (lambda_inf, stderr) = lambda_p_fit(&op, PIndex::INF, &grid)?;
                    Ok(TruncationRow {
                        half_width: l,
                        states: model.len(),
                        lambda2: lambda2_eigen(&op),
                        lambda_inf_fit: lambda_inf,
                        stderr,
                    })
                })
                .collect::<Result<_>>()?;
            match opts.format {
                Format::Json => w.write("truncation.json", &json(&rows)?)?,
                Format::Csv => {
                    let mut s = String::from("L,states,lambda2,lambda_inf_fit,stderr\n");
                    for r in &rows {
                        let _ = writeln!(
                            s,
                            "{},{},{:e},{:e},{:e}",
                            r.half_width, r.states, r.lambda2, r.lambda_inf_fit, r.stderr
                        );
                    }
                    w.write("truncation.csv", &s)?;
                }
            }
            let mut plot = String::from("L,series,value\n");
            for r in &rows {
                let _ = writeln!(plot, "{},lambda2,{:e}", r.half_width, r.lambda2);
                let _ = writeln!(plot, "{},lambda_inf,{:e}", r.half_width, r.lambda_inf_fit);
            }
            w.write("truncation.plot.csv", &plot)?;
            let last = rows.last().expect("nonempty ladder");
            (None, format!("L = {}: lambda2 = {:e}", last.half_width, last.lambda2))
        }
        CommandSpec::Mc(c) => {
            let model = model.as_ref().expect("validated");
            let pert = cfg.perturbation.build(model)?;
            let f = c.f.evaluate(model, "command.f")?;
            let seed = cfg.seed.expect("validated");
            let exact = fk_apply_exact(&fk_generator(model, &pert)?, c.t, &f)?;
            let mc = fk_apply_mc(model, &pert, c.t, &f, c.n_paths, seed)?;
            let rows: Vec<McRow> = (0..model.len())
                .map(|x| McRow {
                    state: x,
                    exact: exact[x],
                    estimate: mc.estimate[x],
                    stderr: mc.stderr[x],
                    z: if mc.stderr[x] > 0.0 {
                        (mc.estimate[x] - exact[x]) / mc.stderr[x]
                    } else {
                        0.0
                    },
                })
                .collect();
            match opts.format {
                Format::Json => w.write("mc.json", &json(&rows)?)?,
                Format::Csv => {
                    let mut s = String::from("state,exact,estimate,stderr,z\n");
                    for r in &rows {
                        let _ = writeln!(s, "{},{:e},{:e},{:e},{:e}", r.state, r.exact, r.estimate, r.stderr, r.z);
                    }
                    w.write("mc.csv", &s)?;
                }
            }
            let worst = rows.iter().map(|r| r.z.abs()).fold(0.0, f64::max);
            (None, format!("max |z| = {worst:.3}"))
        }
        CommandSpec::Paths(c) => {
            let model = model.as_ref().expect("validated");
            let seed = cfg.seed.expect("validated");
            let paths: Vec<PathSample> = (0..c.n_paths)
                .into_par_iter()
                .map(|i| sample_path(model, c.x0, c.horizon, &mut path_rng(seed, stream_id(c.x0, i))))
                .collect::<Result<_>>()?;
            match opts.format {
                Format::Json => w.write("paths.json", &json(&paths)?)?,
                Format::Csv => w.write("paths.csv", &paths_to_csv(seed, &paths))?,
            }
            (None, format!("{} paths", paths.len()))
        }
        CommandSpec::Estimates(c) => {
            let model = model.as_ref().expect("validated");
            let spec = cfg.model.as_ref().expect("validated");
            let mut report = EstimatesReport::default();
            if c.heat_kernel.is_some() || c.green {
                let ModelSpec::StableLattice(s) = spec else {
                    return Err(Error::config("model.kind", "heat-kernel and Green checks need a stable lattice"));
                };
                if let Some(grid) = &c.heat_kernel {
                    report.heat_kernel = Some(heat_kernel_estimate_check(model, s, grid, &default_pairs(s))?);
                }
                if c.green {
                    report.green = Some(green1_bound_check(model, s)?);
                }
            }
            if let Some(grid) = &c.aronson {
                let ModelSpec::DiffusionChain(s) = spec else {
                    return Err(Error::config("model.kind", "the Aronson fit needs a diffusion chain"));
                };
                report.aronson = Some(aronson_fit(model, s, grid, c.max_sigma.unwrap_or(4.0))?);
            }
            match opts.format {
                Format::Json => w.write("estimates.json", &json(&report)?)?,
                Format::Csv => {
                    if let Some(hk) = &report.heat_kernel {
                        let mut s = String::from("t,x,y,r,density,estimate,ratio,exact\n");
                        for p in &hk.samples {
                            let exact = p.exact.map_or(String::new(), |e| format!("{e:e}"));
                            let _ = writeln!(
                                s,
                                "{:?},{},{},{:?},{:e},{:e},{:e},{exact}",
                                p.t, p.x, p.y, p.r, p.density, p.estimate, p.ratio
                            );
                        }
                        w.write("heat_kernel.csv", &s)?;
                    }
                    if let Some(g) = &report.green {
                        let mut s = String::from("r,green,bound\n");
                        for (r, gv, b) in &g.samples {
                            let _ = writeln!(s, "{r:?},{gv:e},{b:e}");
                        }
                        w.write("green.csv", &s)?;
                    }
                    if let Some(a) = &report.aronson {
                        let mut s = String::from("t,r,density\n");
                        for (t, r, p) in &a.samples {
                            let _ = writeln!(s, "{t:?},{r:?},{p:e}");
                        }
                        w.write("aronson.csv", &s)?;
                    }
                }
            }
            let mut parts = Vec::new();
            if let Some(hk) = &report.heat_kernel {
                parts.push(format!("heat-kernel constant {:.3}", hk.comparison_constant));
            }
            if let Some(g) = &report.green {
                parts.push(format!("green c2 {:.3}", g.c2));
            }
            if let Some(a) = &report.aronson {
                parts.push(format!("aronson c1 {:.3} c2 {:.2}", a.c1, a.c2));
            }
            (None, parts.join(", "))
        }
        CommandSpec::Model(_) => {
            let model = model.as_ref().expect("validated");
            let mut text = model.to_json()?;
            text.push('\n');
            w.write("model.json", &text)?;
            (None, format!("{} states", model.len()))
        }
    };
    Ok(RunOutcome {
        files: w.files,
        violation,
        summary,
    })
}

#[derive(Debug, Clone, Copy, Serialize)]
struct IdentityRow {
    instance: usize,
    t: f64,
    residual: f64,
    relative: f64,
}

#[derive(Serialize)]
struct IdentityReport<'a> {
    /// Largest scale-free residual.
    max_residual: f64,
    tolerance: f64,
    corrupt_nu: Option<f64>,
    rows: &'a [IdentityRow],
}

#[derive(Debug, Clone, Copy, Serialize)]
struct TruncationRow {
    #[serde(rename = "L")]
    half_width: usize,
    states: usize,
    lambda2: f64,
    lambda_inf_fit: f64,
    stderr: f64,
}

#[derive(Debug, Clone, Copy, Serialize)]
struct McRow {
    state: usize,
    exact: f64,
    estimate: f64,
    stderr: f64,
    z: f64,
}

#[derive(Debug, Default, Serialize)]
struct EstimatesReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    heat_kernel: Option<crate::models::HeatKernelReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    green: Option<crate::models::GreenReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    aronson: Option<crate::models::AronsonFit>,
}

/// Model referenced by a config, for callers that only need the chain.
pub fn build_model(cfg: &ExperimentConfig, base_dir: &Path) -> Result<ReversibleModel> {
    cfg.model
        .as_ref()
        .ok_or_else(|| Error::config("model", "no model given"))?
        .build(base_dir, cfg.seed)
}
