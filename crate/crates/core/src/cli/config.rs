//! Experiment configuration: one JSON document per run.

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::functionals::Perturbation;
use crate::kato::KatoClass;
use crate::markov::{euclid, JumpFunction, ModelDocument, ReversibleModel, SmoothMeasure};
use crate::models::{
    build_diffusion_chain, build_stable_lattice, DiffusionChainSpec, StableLatticeSpec,
};
use crate::spectral::{PIndex, VerdictMode};
use crate::suite::{random_model, InstanceBounds};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: Option<String>,
    /// Required by every command that samples; `--seed` overrides it.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub model: Option<ModelSpec>,
    #[serde(default)]
    pub perturbation: PerturbationSpec,
    pub command: CommandSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ModelSpec {
    /// A model document embedded in the config.
    Inline(ModelDocument),
    /// A model document on disk, relative to the config file.
    File { path: PathBuf },
    StableLattice(StableLatticeSpec),
    DiffusionChain(DiffusionChainSpec),
    /// Random chain drawn from the config seed.
    Random {
        n: usize,
        #[serde(default)]
        bounds: InstanceBounds,
    },
}

/// A state function: a number, one value per state, or an expression in
/// `x` (first coordinate, or the index without positions), `r = |x|` and `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FieldSpec {
    Constant(f64),
    Values(Vec<f64>),
    Expr(String),
}

impl Default for FieldSpec {
    fn default() -> Self {
        FieldSpec::Constant(0.0)
    }
}

/// A pair function: a number, a full matrix, or an expression in `x`, `y`,
/// `r = |x-y|`, `i` and `j`. The diagonal is always set to zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PairSpec {
    Constant(f64),
    Matrix(Vec<Vec<f64>>),
    Expr(String),
}

impl Default for PairSpec {
    fn default() -> Self {
        PairSpec::Constant(0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerturbationSpec {
    pub u: FieldSpec,
    /// Density `μ̂` of the time-perturbing measure with respect to `m`.
    pub mu: FieldSpec,
    #[serde(rename = "F")]
    pub f: PairSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case")]
pub enum CommandSpec {
    Spectral(SpectralCommand),
    IdentityCheck(IdentityCommand),
    Kato(KatoCommand),
    TruncationStudy(TruncationCommand),
    Mc(McCommand),
    Paths(PathsCommand),
    Estimates(EstimatesCommand),
    Model(ModelCommand),
}

impl CommandSpec {
    pub fn name(&self) -> &'static str {
        match self {
            CommandSpec::Spectral(_) => "spectral",
            CommandSpec::IdentityCheck(_) => "identity-check",
            CommandSpec::Kato(_) => "kato",
            CommandSpec::TruncationStudy(_) => "truncation-study",
            CommandSpec::Mc(_) => "mc",
            CommandSpec::Paths(_) => "paths",
            CommandSpec::Estimates(_) => "estimates",
            CommandSpec::Model(_) => "model",
        }
    }

    pub fn needs_seed(&self) -> bool {
        matches!(
            self,
            CommandSpec::IdentityCheck(_) | CommandSpec::Mc(_) | CommandSpec::Paths(_)
        )
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpectralCommand {
    pub p_grid: Option<Vec<PIndex>>,
    pub t_grid: Option<Vec<f64>>,
    pub mode: VerdictMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IdentityCommand {
    pub count: usize,
    pub n: usize,
    pub bounds: InstanceBounds,
    pub t_grid: Vec<f64>,
    pub tolerance: f64,
    /// Test hook: shift `ν̂` by this amount to break the identity on purpose.
    pub corrupt_nu: Option<f64>,
}

impl Default for IdentityCommand {
    fn default() -> Self {
        Self {
            count: 100,
            n: 5,
            bounds: InstanceBounds::default(),
            t_grid: vec![0.1, 1.0, 10.0],
            tolerance: 1e-8,
            corrupt_nu: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KatoCommand {
    pub eps: f64,
    /// Order of the subprocess for the `K_∞`, `K_1` and `J_∞` checks.
    pub alpha: f64,
    pub t_grid: Vec<f64>,
    /// Classes to certify; `K`-type classes apply to `μ`, `J`-type to `F`.
    pub classes: Vec<KatoClass>,
    /// `(K, δ)` for the `K_1` check.
    pub k1: Option<K1Params>,
}

impl Default for KatoCommand {
    fn default() -> Self {
        Self {
            eps: 0.05,
            alpha: 1.0,
            t_grid: vec![1e-4, 1e-3, 1e-2],
            classes: vec![KatoClass::K, KatoClass::KInf],
            k1: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct K1Params {
    pub k_set: Vec<usize>,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TruncationCommand {
    pub ladder: Vec<usize>,
    pub t_grid: Option<Vec<f64>>,
}

impl Default for TruncationCommand {
    fn default() -> Self {
        Self {
            ladder: vec![64, 128, 256],
            t_grid: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McCommand {
    pub t: f64,
    pub n_paths: usize,
    #[serde(default = "unit_field")]
    pub f: FieldSpec,
}

fn unit_field() -> FieldSpec {
    FieldSpec::Constant(1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsCommand {
    pub x0: usize,
    pub horizon: f64,
    pub n_paths: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatesCommand {
    /// Times for the two-sided heat-kernel comparison (stable lattices).
    pub heat_kernel: Option<Vec<f64>>,
    /// Green-function bound (stable lattices).
    pub green: bool,
    /// Times for the Aronson fit (diffusion chains).
    pub aronson: Option<Vec<f64>>,
    /// Sampling radius for the Aronson fit in units of `√t`; default 4.
    pub max_sigma: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelCommand {}

/// Parse a config, reporting the failing field as a path.
/// Deserialize without the semantic checks; `run` validates after applying overrides.
pub(crate) fn deserialize_config(text: &str) -> Result<ExperimentConfig> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        Error::config(if path.is_empty() { ".".to_string() } else { path }, e.into_inner().to_string())
    })
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let cfg = deserialize_config(text)?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)?;
    parse_config(&text)
}

fn positive(path: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::config(path, format!("must be positive, got {v}")))
    }
}

fn positive_grid(path: &str, grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::config(path, "must not be empty"));
    }
    for (i, &v) in grid.iter().enumerate() {
        positive(&format!("{path}[{i}]"), v)?;
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.command.needs_seed() && self.seed.is_none() {
            return Err(Error::config(
                "seed",
                format!("command `{}` samples randomly and needs a seed", self.command.name()),
            ));
        }
        if matches!(self.model, Some(ModelSpec::Random { .. })) && self.seed.is_none() {
            return Err(Error::config("seed", "a random model needs a seed"));
        }
        let needs_model = !matches!(self.command, CommandSpec::IdentityCheck(_));
        if needs_model && self.model.is_none() {
            return Err(Error::config("model", format!("command `{}` needs a model", self.command.name())));
        }
        match &self.command {
            CommandSpec::Spectral(c) => {
                if let Some(g) = &c.t_grid {
                    positive_grid("command.t_grid", g)?;
                }
            }
            CommandSpec::IdentityCheck(c) => {
                positive("command.tolerance", c.tolerance)?;
                positive_grid("command.t_grid", &c.t_grid)?;
                if c.n < 2 {
                    return Err(Error::config("command.n", "needs at least 2 states"));
                }
                if c.count == 0 {
                    return Err(Error::config("command.count", "must be positive"));
                }
            }
            CommandSpec::Kato(c) => {
                positive("command.eps", c.eps)?;
                if !(c.alpha >= 0.0) {
                    return Err(Error::config("command.alpha", "must be nonnegative"));
                }
                positive_grid("command.t_grid", &c.t_grid)?;
                if let Some(k1) = &c.k1 {
                    positive("command.k1.delta", k1.delta)?;
                }
            }
            CommandSpec::TruncationStudy(c) => {
                if c.ladder.is_empty() || c.ladder.contains(&0) {
                    return Err(Error::config("command.ladder", "needs positive half-widths"));
                }
                if let Some(g) = &c.t_grid {
                    positive_grid("command.t_grid", g)?;
                }
                if !matches!(
                    self.model,
                    Some(ModelSpec::StableLattice(_)) | Some(ModelSpec::DiffusionChain(_))
                ) {
                    return Err(Error::config("model.kind", "truncation study needs a lattice model"));
                }
            }
            CommandSpec::Mc(c) => {
                positive("command.t", c.t)?;
                if c.n_paths < 100 {
                    return Err(Error::config("command.n_paths", "must be at least 100"));
                }
            }
            CommandSpec::Paths(c) => {
                positive("command.horizon", c.horizon)?;
                if c.n_paths == 0 {
                    return Err(Error::config("command.n_paths", "must be positive"));
                }
            }
            CommandSpec::Estimates(c) => {
                if let Some(g) = &c.heat_kernel {
                    positive_grid("command.heat_kernel", g)?;
                }
                if let Some(g) = &c.aronson {
                    positive_grid("command.aronson", g)?;
                }
                if let Some(s) = c.max_sigma {
                    positive("command.max_sigma", s)?;
                }
            }
            CommandSpec::Model(_) => {}
        }
        Ok(())
    }
}

impl ModelSpec {
    /// Build the model; `base` resolves relative file paths.
    pub fn build(&self, base: &Path, seed: Option<u64>) -> Result<ReversibleModel> {
        match self {
            ModelSpec::Inline(doc) => doc.clone().into_model(),
            ModelSpec::File { path } => {
                let full = if path.is_absolute() { path.clone() } else { base.join(path) };
                let text = std::fs::read_to_string(&full)
                    .map_err(|e| Error::config("model.path", format!("{}: {e}", full.display())))?;
                ReversibleModel::from_json(&text)
            }
            ModelSpec::StableLattice(spec) => build_stable_lattice(spec),
            ModelSpec::DiffusionChain(spec) => build_diffusion_chain(spec),
            ModelSpec::Random { n, bounds } => {
                if *n < 2 {
                    return Err(Error::config("model.n", "needs at least 2 states"));
                }
                let seed = seed.ok_or_else(|| Error::config("seed", "a random model needs a seed"))?;
                Ok(random_model(&mut ChaCha8Rng::seed_from_u64(seed), *n, *bounds))
            }
        }
    }

    /// Same lattice with half-width `l`.
    pub fn with_half_width(&self, l: usize) -> Option<ModelSpec> {
        match self {
            ModelSpec::StableLattice(s) => Some(ModelSpec::StableLattice(StableLatticeSpec { half_width: l, ..s.clone() })),
            ModelSpec::DiffusionChain(s) => Some(ModelSpec::DiffusionChain(DiffusionChainSpec { half_width: l, ..s.clone() })),
            _ => None,
        }
    }
}

fn coordinates(model: &ReversibleModel) -> Vec<Vec<f64>> {
    match model.space().positions() {
        Some(p) => p.to_vec(),
        None => (0..model.len()).map(|i| vec![i as f64]).collect(),
    }
}

impl FieldSpec {
    pub fn evaluate(&self, model: &ReversibleModel, path: &str) -> Result<Vec<f64>> {
        let n = model.len();
        let out = match self {
            FieldSpec::Constant(c) => vec![*c; n],
            FieldSpec::Values(v) => {
                if v.len() != n {
                    return Err(Error::config(path, format!("expected {n} values, got {}", v.len())));
                }
                v.clone()
            }
            FieldSpec::Expr(src) => {
                let e = Expr::parse(src, &["x", "r", "i"]).map_err(|err| Error::config(path, err.to_string()))?;
                let origin = vec![0.0; coordinates(model)[0].len()];
                coordinates(model)
                    .iter()
                    .enumerate()
                    .map(|(i, p)| e.eval(&[p[0], euclid(p, &origin), i as f64]))
                    .collect()
            }
        };
        if let Some(i) = out.iter().position(|v| !v.is_finite()) {
            return Err(Error::config(path, format!("value at state {i} is not finite")));
        }
        Ok(out)
    }
}

impl PairSpec {
    pub fn evaluate(&self, model: &ReversibleModel, path: &str) -> Result<JumpFunction> {
        let n = model.len();
        let mut values = match self {
            PairSpec::Constant(c) => DMatrix::from_element(n, n, *c),
            PairSpec::Matrix(rows) => {
                if rows.len() != n || rows.iter().any(|r| r.len() != n) {
                    return Err(Error::config(path, format!("expected a {n}x{n} matrix")));
                }
                DMatrix::from_fn(n, n, |x, y| rows[x][y])
            }
            PairSpec::Expr(src) => {
                let e = Expr::parse(src, &["x", "y", "r", "i", "j"]).map_err(|err| Error::config(path, err.to_string()))?;
                let pos = coordinates(model);
                DMatrix::from_fn(n, n, |x, y| {
                    e.eval(&[pos[x][0], pos[y][0], euclid(&pos[x], &pos[y]), x as f64, y as f64])
                })
            }
        };
        values.fill_diagonal(0.0);
        JumpFunction::new(values).map_err(|e| Error::config(path, e.to_string()))
    }
}

impl PerturbationSpec {
    pub fn build(&self, model: &ReversibleModel) -> Result<Perturbation> {
        let u = self.u.evaluate(model, "perturbation.u")?;
        let mu = SmoothMeasure::new(self.mu.evaluate(model, "perturbation.mu")?)?;
        let f = self.f.evaluate(model, "perturbation.F")?;
        Perturbation::new(u, mu, f)
    }

    pub fn has_jumps(&self) -> bool {
        !matches!(self.f, PairSpec::Constant(c) if c == 0.0)
    }
}
