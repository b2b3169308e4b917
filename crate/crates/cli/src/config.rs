use std::fmt;

use fedpac_core::datagen::{ModelKind, TaskSpec};
use fedpac_core::federation::{Engine, RoundConfig};
use fedpac_core::linalg::NsVariant;
use fedpac_core::preconditioners::{OptimizerHyper, Variant};
use serde::Deserialize;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    /// Every engine × optimizer cell.
    #[default]
    Single,
    /// FedPAC over a grid of β values.
    BetaSweep,
    /// FedSOA baseline, align-only, correct-only and full FedPAC.
    Ablation,
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T: Clone> OneOrMany<T> {
    pub fn to_vec(&self) -> Vec<T> {
        match self {
            OneOrMany::One(x) => vec![x.clone()],
            OneOrMany::Many(v) => v.clone(),
        }
    }
}

/// Optional per-field overrides of an optimizer's default hyperparameters.
#[derive(Clone, Copy, Debug, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperOverrides {
    pub beta1: Option<f64>,
    pub beta2: Option<f64>,
    pub eps: Option<f64>,
    pub clip_rho: Option<f64>,
    pub precond_freq: Option<u64>,
    pub hessian_freq: Option<u64>,
    pub ns_steps: Option<usize>,
    pub ns_variant: Option<NsVariant>,
    pub dim_scaling: Option<bool>,
    pub bias_correction: Option<bool>,
}

impl HyperOverrides {
    pub fn apply(&self, variant: Variant) -> OptimizerHyper {
        let mut h = variant.default_hyper();
        macro_rules! set {
            ($($f:ident),*) => { $( if let Some(v) = self.$f { h.$f = v; } )* };
        }
        set!(beta1, beta2, eps, clip_rho, precond_freq, hessian_freq, ns_steps, ns_variant, dim_scaling, bias_correction);
        h
    }
}

fn default_engine() -> OneOrMany<Engine> {
    OneOrMany::One(Engine::FedPac)
}

fn default_optimizer() -> OneOrMany<Variant> {
    OneOrMany::One(Variant::Soap)
}

fn default_seeds() -> Vec<u64> {
    vec![42]
}

fn default_out() -> String {
    "results".into()
}

/// β grid of the sweep suite: 0.0, 0.1, …, 0.9.
pub fn default_beta_grid() -> Vec<f64> {
    (0..10).map(|i| i as f64 / 10.0).collect()
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub suite: Suite,
    #[serde(default = "default_engine")]
    pub engine: OneOrMany<Engine>,
    #[serde(default = "default_optimizer")]
    pub optimizer: OneOrMany<Variant>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_out")]
    pub out: String,
    pub beta_grid: Option<Vec<f64>>,
    #[serde(default)]
    pub round: RoundConfig,
    #[serde(default)]
    pub task: TaskSpec,
    #[serde(default)]
    pub hyper: HyperOverrides,
}

/// Command-line overrides applied after parsing.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    pub out: Option<String>,
    pub seeds: Option<Vec<u64>>,
    pub engine: Option<Engine>,
    pub optimizer: Option<Variant>,
    pub beta: Option<f64>,
    /// `Some(None)` forces an IID split.
    pub alpha: Option<Option<f64>>,
}

impl ExperimentConfig {
    pub fn apply(&mut self, o: &Overrides) {
        if let Some(out) = &o.out {
            self.out = out.clone();
        }
        if let Some(seeds) = &o.seeds {
            self.seeds = seeds.clone();
        }
        if let Some(e) = o.engine {
            self.engine = OneOrMany::One(e);
        }
        if let Some(v) = o.optimizer {
            self.optimizer = OneOrMany::One(v);
        }
        if let Some(b) = o.beta {
            self.round.beta_mix = b;
        }
        if let Some(a) = o.alpha {
            self.task.alpha = a;
        }
    }

    pub fn beta_grid(&self) -> Vec<f64> {
        self.beta_grid.clone().unwrap_or_else(default_beta_grid)
    }
}

/// One validation problem, anchored to a source line when the offending key
/// can be found.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Diagnostic {
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "line {l}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

/// 1-based line of `key = …` inside `[section]` (or the top level when
/// `section` is empty).
pub fn locate(source: &str, section: &str, key: &str) -> Option<usize> {
    let mut current = String::new();
    for (i, raw) in source.lines().enumerate() {
        let line = raw.trim();
        if line.starts_with('[') {
            current = line.trim_matches(|c| c == '[' || c == ']').trim().to_string();
            continue;
        }
        if current != section {
            continue;
        }
        if let Some((k, _)) = line.split_once('=') {
            if k.trim().trim_matches('"') == key {
                return Some(i + 1);
            }
        }
    }
    None
}

fn line_of_offset(source: &str, offset: usize) -> usize {
    source[..offset.min(source.len())].matches('\n').count() + 1
}

/// Parses without semantic checks. Syntax and schema errors come back as a
/// single diagnostic.
pub fn parse(source: &str) -> Result<ExperimentConfig, Diagnostic> {
    toml::from_str(source).map_err(|e| {
        let line = e.span().map(|s| line_of_offset(source, s.start));
        Diagnostic {
            line,
            message: e.message().trim().to_string(),
        }
    })
}

/// Every semantic problem with a parsed config.
pub fn diagnostics(cfg: &ExperimentConfig, source: &str) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    let mut push = |section: &str, key: &str, message: String| {
        out.push(Diagnostic {
            line: locate(source, section, key),
            message,
        })
    };
    for d in cfg.round.diagnostics() {
        let key = d.split(':').next().unwrap_or_default().to_string();
        push("round", &key, d);
    }
    if cfg.seeds.is_empty() {
        push("", "seeds", "seeds: at least one seed required".into());
    }
    if cfg.engine.to_vec().is_empty() {
        push("", "engine", "engine: at least one engine required".into());
    }
    if cfg.optimizer.to_vec().is_empty() {
        push("", "optimizer", "optimizer: at least one optimizer required".into());
    }
    if cfg.out.trim().is_empty() {
        push("", "out", "out: output directory must be nonempty".into());
    }
    if cfg.suite == Suite::BetaSweep {
        let grid = cfg.beta_grid();
        if grid.is_empty() {
            push("", "beta_grid", "beta_grid: must be nonempty".into());
        }
        if grid.iter().any(|b| !(0.0..=1.0).contains(b)) {
            push("", "beta_grid", "beta_grid: values out of [0,1]".into());
        }
    }
    for v in cfg.optimizer.to_vec() {
        if let Err(e) = cfg.hyper.apply(v).validate() {
            push("hyper", "", format!("hyper ({v}): {e}"));
        }
    }
    let t = &cfg.task;
    let mut task_err = |key: &str, msg: &str| push("task", key, format!("task.{key}: {msg}"));
    if t.n_train < cfg.round.n_clients.max(1) {
        task_err("n_train", "fewer samples than clients");
    }
    if t.n_test == 0 {
        task_err("n_test", "must be >= 1");
    }
    if t.n_classes == 0 {
        task_err("n_classes", "must be >= 1");
    }
    match t.model {
        ModelKind::Quadratic => {
            if t.quad_rows == 0 || t.quad_cols == 0 {
                task_err("quad_rows", "quadratic shape must be >= 1x1");
            }
            if !(t.quad_condition >= 1.0) {
                task_err("quad_condition", "must be >= 1");
            }
            if !(t.quad_noise >= 0.0) || !(t.quad_cluster_spread >= 0.0) {
                task_err("quad_noise", "noise and spread must be >= 0");
            }
        }
        ModelKind::Logistic | ModelKind::Mlp => {
            if t.n_features == 0 {
                task_err("n_features", "must be >= 1");
            }
            if !(t.separation > 0.0) {
                task_err("separation", "must be positive");
            }
            if t.model == ModelKind::Mlp && t.hidden == 0 {
                task_err("hidden", "must be >= 1");
            }
        }
    }
    if let Some(a) = t.alpha {
        if !(a > 0.0 && a.is_finite()) {
            task_err("alpha", "must be positive and finite");
        }
    }
    out
}

/// Parse plus semantic validation: the exact acceptance test `run` applies.
pub fn load(source: &str, overrides: &Overrides) -> Result<ExperimentConfig, Vec<Diagnostic>> {
    let mut cfg = parse(source).map_err(|d| vec![d])?;
    cfg.apply(overrides);
    let d = diagnostics(&cfg, source);
    if d.is_empty() {
        Ok(cfg)
    } else {
        Err(d)
    }
}
