//! Run configuration: a TOML file with one table per pipeline stage.
//!
//! Every key is optional; omitted keys take the defaults below. Unknown keys
//! are rejected.
//!
//! ```toml
//! [architecture]
//! style = "gpt-like"        # or "llama-like"
//! n_layers = 2
//! hidden_dim = 32
//! n_heads = 4
//! vocab_size = 64
//! max_context = 32
//! seed = 7
//!
//! [corpus]
//! n_prompts = 8
//! prompt_len = 8
//! horizon = 16
//! seed = 11
//!
//! [spec]
//! epsilon = 0.25
//! delta = 0.70
//! gamma = 0.70
//! tau = 0.70
//! rho_th = 0.0              # or one value per property
//! # spec_file = "props.stl" # property-spec file, replaces the keys above
//!
//! [[spec.property]]
//! name = "calm"
//! formula = "always[1,T'](0.2 - jsd >= 0)"
//!
//! [search]
//! bits = [2, 3, ..., 16]
//! prune = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5]
//! p_max = 0.5
//! budget = 200
//! n_init = 16               # default min(16, |C|, budget)
//! seed = 1
//! tie_layers = false        # one (bits, prune) per component type
//! frozen = []               # component types kept uncompressed
//!
//! [cost]
//! seq_len = 128
//! b_ref = 16
//! mac = 2.0
//!
//! [modes]
//! names = ["Strict", "Optimal", "Relaxed"]
//! targets = [99.0, 95.0, 85.0]
//!
//! [sensitivity]
//! budget = 50
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::Deserialize;

use crate::cost::CostParams;
use crate::model::{Assignment, Component, ComponentKey, ModelArchitecture, Style, MIN_BITS, REFERENCE_BITS};
use crate::modes::DEFAULT_MODES;
use crate::search::{SearchSpace, DEFAULT_BUDGET, DEFAULT_N_INIT};
use crate::signal::builtin_channels;
use crate::stl::{parse_formula, parse_spec, Formula, PredicateThresholds, PropertySpec, RhoThreshold};

/// One failed check, with the dotted path of the offending key.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub path: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawArch {
    style: String,
    n_layers: usize,
    hidden_dim: usize,
    n_heads: usize,
    vocab_size: usize,
    max_context: usize,
    seed: u64,
}

impl Default for RawArch {
    fn default() -> Self {
        Self {
            style: Style::GptLike.as_str().into(),
            n_layers: 2,
            hidden_dim: 32,
            n_heads: 4,
            vocab_size: 64,
            max_context: 32,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusConfig {
    pub n_prompts: usize,
    pub prompt_len: usize,
    pub horizon: usize,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            n_prompts: 8,
            prompt_len: 8,
            horizon: 16,
            seed: 11,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawProperty {
    name: String,
    formula: String,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawSpec {
    epsilon: Option<f64>,
    delta: Option<f64>,
    gamma: Option<f64>,
    tau: Option<f64>,
    rho_th: Option<RhoThreshold>,
    spec_file: Option<String>,
    property: Vec<RawProperty>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SearchConfig {
    pub bits: Vec<u8>,
    pub prune: Vec<f64>,
    pub p_max: f64,
    pub budget: usize,
    pub n_init: Option<usize>,
    pub seed: u64,
    pub tie_layers: bool,
    pub frozen: Vec<String>,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            bits: (MIN_BITS..=REFERENCE_BITS).collect(),
            prune: vec![0.0, 0.1, 0.2, 0.3, 0.4, 0.5],
            p_max: 0.5,
            budget: DEFAULT_BUDGET,
            n_init: None,
            seed: 1,
            tie_layers: false,
            frozen: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawCost {
    seq_len: usize,
    b_ref: u8,
    mac: f64,
}

impl Default for RawCost {
    fn default() -> Self {
        let p = CostParams::default();
        Self {
            seq_len: p.seq_len,
            b_ref: p.b_ref,
            mac: p.mac,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawModes {
    names: Option<Vec<String>>,
    targets: Vec<f64>,
}

impl Default for RawModes {
    fn default() -> Self {
        Self {
            names: None,
            targets: DEFAULT_MODES.iter().map(|m| m.1).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SensitivityConfig {
    /// Evaluations per sweep cell.
    pub budget: usize,
}

impl Default for SensitivityConfig {
    fn default() -> Self {
        Self { budget: 50 }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawConfig {
    architecture: RawArch,
    corpus: CorpusConfig,
    spec: RawSpec,
    search: SearchConfig,
    cost: RawCost,
    modes: RawModes,
    sensitivity: SensitivityConfig,
}

/// A validated run configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub architecture: ModelArchitecture,
    pub model_seed: u64,
    pub corpus: CorpusConfig,
    pub spec: PropertySpec,
    pub search: SearchConfig,
    pub cost: CostParams,
    /// `(name, AvgPP target)`.
    pub modes: Vec<(String, f64)>,
    pub sensitivity: SensitivityConfig,
}

/// Seed named by `--seed-override`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeedKind {
    Model,
    Corpus,
    Search,
}

/// Parses `k=v` with `k` one of `model`, `corpus`, `search`.
pub fn parse_seed_override(s: &str) -> Result<(SeedKind, u64), String> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| format!("seed override `{s}` is not of the form key=value"))?;
    let kind = match k.trim() {
        "model" => SeedKind::Model,
        "corpus" => SeedKind::Corpus,
        "search" => SeedKind::Search,
        other => return Err(format!("unknown seed `{other}` (expected model, corpus or search)")),
    };
    let v = v
        .trim()
        .parse::<u64>()
        .map_err(|e| format!("seed override `{s}`: {e}"))?;
    Ok((kind, v))
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig::from_toml_str("", None).expect("defaults are valid")
    }
}

impl RunConfig {
    /// Parse and validate; `base_dir` resolves a relative `spec.spec_file`.
    pub fn from_toml_str(text: &str, base_dir: Option<&Path>) -> Result<Self, Vec<Violation>> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| {
            vec![Violation {
                path: "<file>".into(),
                message: e.to_string().trim_end().replace('\n', " "),
            }]
        })?;
        build(raw, base_dir)
    }

    pub fn load(path: &Path) -> Result<Self, Vec<Violation>> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            vec![Violation {
                path: "<file>".into(),
                message: format!("cannot read {}: {e}", path.display()),
            }]
        })?;
        Self::from_toml_str(&text, path.parent())
    }

    /// Apply seed and budget overrides, then re-check the search block.
    pub fn with_overrides(mut self, seeds: &[(SeedKind, u64)], budget: Option<usize>) -> Result<Self, Vec<Violation>> {
        for (k, v) in seeds {
            match k {
                SeedKind::Model => self.model_seed = *v,
                SeedKind::Corpus => self.corpus.seed = *v,
                SeedKind::Search => self.search.seed = *v,
            }
        }
        if let Some(b) = budget {
            self.search.budget = b;
        }
        let mut v = Vec::new();
        if let Some(space) = check_space(&self, &mut v) {
            check_budget(&self.search, &space, &mut v);
        }
        if v.is_empty() {
            Ok(self)
        } else {
            Err(v)
        }
    }

    pub fn search_space(&self) -> Result<SearchSpace, String> {
        let frozen: Vec<Component> = self
            .search
            .frozen
            .iter()
            .map(|c| c.parse::<Component>().map_err(|e| e.to_string()))
            .collect::<Result<_, _>>()?;
        let arch = &self.architecture;
        let fixed: BTreeMap<ComponentKey, Assignment> = arch
            .component_keys()
            .into_iter()
            .filter(|k| frozen.contains(&k.component))
            .map(|k| (k, Assignment::IDENTITY))
            .collect();
        let free: Vec<ComponentKey> = arch
            .component_keys()
            .into_iter()
            .filter(|k| !fixed.contains_key(k))
            .collect();
        let groups: Vec<Vec<ComponentKey>> = if self.search.tie_layers {
            arch.style
                .components()
                .iter()
                .filter(|c| !frozen.contains(c))
                .map(|c| free.iter().copied().filter(|k| k.component == *c).collect())
                .collect()
        } else {
            free.into_iter().map(|k| vec![k]).collect()
        };
        SearchSpace::grouped(arch, &self.search.bits, &self.search.prune, self.search.p_max, groups, fixed)
            .map_err(|e| e.to_string())
    }

    /// `n_init`, defaulting to `min(16, |C|, budget)`.
    pub fn n_init(&self, space: &SearchSpace) -> usize {
        self.search
            .n_init
            .unwrap_or_else(|| space.size().min(DEFAULT_N_INIT.min(self.search.budget) as u128) as usize)
    }
}

fn push(v: &mut Vec<Violation>, path: &str, message: impl Into<String>) {
    v.push(Violation {
        path: path.into(),
        message: message.into(),
    });
}

fn build(raw: RawConfig, base_dir: Option<&Path>) -> Result<RunConfig, Vec<Violation>> {
    let mut v = Vec::new();

    let a = &raw.architecture;
    let style = a.style.parse::<Style>().unwrap_or_else(|e| {
        push(&mut v, "architecture.style", e.to_string());
        Style::GptLike
    });
    for (name, val) in [
        ("n_layers", a.n_layers),
        ("hidden_dim", a.hidden_dim),
        ("n_heads", a.n_heads),
        ("vocab_size", a.vocab_size),
        ("max_context", a.max_context),
    ] {
        if val == 0 {
            push(&mut v, &format!("architecture.{name}"), "must be >= 1");
        }
    }
    let architecture = ModelArchitecture {
        style,
        n_layers: a.n_layers,
        hidden_dim: a.hidden_dim,
        n_heads: a.n_heads,
        vocab_size: a.vocab_size,
        max_context: a.max_context,
    };
    if v.is_empty() {
        if a.hidden_dim % a.n_heads != 0 {
            push(
                &mut v,
                "architecture.n_heads",
                format!("must divide hidden_dim {}", a.hidden_dim),
            );
        } else if let Err(e) = architecture.validate() {
            push(&mut v, "architecture", e.to_string());
        }
    }

    let c = &raw.corpus;
    for (name, val) in [("n_prompts", c.n_prompts), ("prompt_len", c.prompt_len), ("horizon", c.horizon)] {
        if val == 0 {
            push(&mut v, &format!("corpus.{name}"), "must be >= 1");
        }
    }
    if c.prompt_len >= 1 && c.horizon >= 1 && c.prompt_len + c.horizon - 1 > a.max_context {
        push(
            &mut v,
            "corpus.horizon",
            format!(
                "prompt_len + horizon - 1 = {} exceeds architecture.max_context {}",
                c.prompt_len + c.horizon - 1,
                a.max_context
            ),
        );
    }

    let spec = build_spec(&raw.spec, base_dir, a.n_layers.max(1), &mut v);

    let p = &raw.cost;
    let cost = CostParams {
        seq_len: p.seq_len,
        b_ref: p.b_ref,
        mac: p.mac,
    };
    if p.seq_len == 0 {
        push(&mut v, "cost.seq_len", "must be >= 1");
    }
    if p.b_ref == 0 {
        push(&mut v, "cost.b_ref", "must be >= 1");
    }
    if !(p.mac > 0.0 && p.mac.is_finite()) {
        push(&mut v, "cost.mac", format!("must be a positive number, got {}", p.mac));
    }

    let m = &raw.modes;
    if m.targets.is_empty() {
        push(&mut v, "modes.targets", "must list at least one target");
    }
    for t in &m.targets {
        if !(0.0..=100.0).contains(t) {
            push(&mut v, "modes.targets", format!("target {t} outside [0, 100]"));
        }
    }
    let names: Vec<String> = match &m.names {
        Some(n) if n.len() != m.targets.len() => {
            push(
                &mut v,
                "modes.names",
                format!("{} names for {} targets", n.len(), m.targets.len()),
            );
            Vec::new()
        }
        Some(n) => n.clone(),
        None => m
            .targets
            .iter()
            .map(|t| {
                DEFAULT_MODES
                    .iter()
                    .find(|d| d.1 == *t)
                    .map(|d| d.0.to_string())
                    .unwrap_or_else(|| format!("AvgPP>={t}"))
            })
            .collect(),
    };
    let modes = names.into_iter().zip(m.targets.iter().copied()).collect();

    if raw.sensitivity.budget < 2 {
        push(&mut v, "sensitivity.budget", "must be >= 2");
    }

    let cfg = RunConfig {
        architecture,
        model_seed: a.seed,
        corpus: raw.corpus.clone(),
        spec: spec.unwrap_or_default(),
        search: raw.search.clone(),
        cost,
        modes,
        sensitivity: raw.sensitivity.clone(),
    };
    if let Some(space) = check_space(&cfg, &mut v) {
        check_budget(&cfg.search, &space, &mut v);
        if (cfg.sensitivity.budget as u128) > space.size() {
            push(
                &mut v,
                "sensitivity.budget",
                format!("exceeds the {} configurations in the search space", space.size()),
            );
        }
    }
    if v.is_empty() {
        Ok(cfg)
    } else {
        Err(v)
    }
}

fn build_spec(raw: &RawSpec, base_dir: Option<&Path>, n_layers: usize, v: &mut Vec<Violation>) -> Option<PropertySpec> {
    let spec = if let Some(file) = &raw.spec_file {
        if raw.epsilon.is_some()
            || raw.delta.is_some()
            || raw.gamma.is_some()
            || raw.tau.is_some()
            || raw.rho_th.is_some()
            || !raw.property.is_empty()
        {
            push(
                v,
                "spec.spec_file",
                "cannot be combined with inline thresholds or properties",
            );
            return None;
        }
        let path = match base_dir {
            Some(d) => d.join(file),
            None => file.into(),
        };
        let text = match std::fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) => {
                push(v, "spec.spec_file", format!("cannot read {}: {e}", path.display()));
                return None;
            }
        };
        match parse_spec(&text) {
            Ok(s) => s,
            Err(e) => {
                push(v, "spec.spec_file", e.to_string());
                return None;
            }
        }
    } else {
        let d = PredicateThresholds::default();
        let thresholds = PredicateThresholds {
            epsilon: raw.epsilon.unwrap_or(d.epsilon),
            delta: raw.delta.unwrap_or(d.delta),
            gamma: raw.gamma.unwrap_or(d.gamma),
            tau: raw.tau.unwrap_or(d.tau),
        };
        for (name, val) in [
            ("epsilon", thresholds.epsilon),
            ("delta", thresholds.delta),
            ("gamma", thresholds.gamma),
            ("tau", thresholds.tau),
        ] {
            if !(val > 0.0 && val <= 1.0) {
                push(v, &format!("spec.{name}"), format!("must be in (0, 1], got {val}"));
            }
        }
        let mut extras: Vec<(String, Formula)> = Vec::new();
        for (i, p) in raw.property.iter().enumerate() {
            let path = format!("spec.property[{i}]");
            if p.name.is_empty()
                || crate::stl::BUILTIN_NAMES.contains(&p.name.as_str())
                || extras.iter().any(|(n, _)| *n == p.name)
            {
                push(v, &format!("{path}.name"), format!("`{}` is empty or already used", p.name));
                continue;
            }
            match parse_formula(&p.formula) {
                Ok(f) => extras.push((p.name.clone(), f)),
                Err(e) => push(v, &format!("{path}.formula"), e.to_string()),
            }
        }
        PropertySpec {
            thresholds,
            rho_th: raw.rho_th.clone().unwrap_or_default(),
            extras,
        }
    };

    let channels = builtin_channels(n_layers);
    for (i, (name, f)) in spec.extras.iter().enumerate() {
        if let Err(e) = f.check_channels(&channels) {
            push(v, &format!("spec.property[{i}]"), format!("`{name}`: {e}"));
        }
    }
    match &spec.rho_th {
        RhoThreshold::Uniform(x) if !(*x >= 0.0 && x.is_finite()) => {
            push(v, "spec.rho_th", format!("must be >= 0, got {x}"));
        }
        RhoThreshold::PerProperty(xs) => {
            if xs.len() != spec.n_properties() {
                push(
                    v,
                    "spec.rho_th",
                    format!("{} values for {} properties", xs.len(), spec.n_properties()),
                );
            }
            if let Some(x) = xs.iter().find(|x| !(**x >= 0.0 && x.is_finite())) {
                push(v, "spec.rho_th", format!("must be >= 0, got {x}"));
            }
        }
        _ => {}
    }
    Some(spec)
}

fn check_space(cfg: &RunConfig, v: &mut Vec<Violation>) -> Option<SearchSpace> {
    let s = &cfg.search;
    let before = v.len();
    if !(0.0..1.0).contains(&s.p_max) {
        push(v, "search.p_max", format!("must be in [0, 1), got {}", s.p_max));
    }
    if s.bits.is_empty() {
        push(v, "search.bits", "must not be empty");
    }
    for b in &s.bits {
        if !(MIN_BITS..=REFERENCE_BITS).contains(b) {
            push(v, "search.bits", format!("bit-width {b} outside [{MIN_BITS}, {REFERENCE_BITS}]"));
        }
    }
    if s.prune.is_empty() {
        push(v, "search.prune", "must not be empty");
    }
    for p in &s.prune {
        if !(0.0..=s.p_max).contains(p) {
            push(v, "search.prune", format!("ratio {p} outside [0, p_max = {}]", s.p_max));
        }
    }
    for c in &s.frozen {
        match c.parse::<Component>() {
            Ok(comp) if cfg.architecture.style.components().contains(&comp) => {}
            _ => push(
                v,
                "search.frozen",
                format!("`{c}` is not a component of {} models", cfg.architecture.style.as_str()),
            ),
        }
    }
    if v.len() > before || cfg.architecture.validate().is_err() {
        return None;
    }
    match cfg.search_space() {
        Ok(space) => Some(space),
        Err(e) => {
            push(v, "search", e);
            None
        }
    }
}

fn check_budget(s: &SearchConfig, space: &SearchSpace, v: &mut Vec<Violation>) {
    let n_init = s
        .n_init
        .unwrap_or_else(|| space.size().min(DEFAULT_N_INIT.min(s.budget) as u128) as usize);
    if n_init < 2 {
        push(v, "search.n_init", format!("must be >= 2, got {n_init}"));
    }
    if n_init as u128 > space.size() {
        push(
            v,
            "search.n_init",
            format!("{n_init} exceeds the {} configurations in the search space", space.size()),
        );
    }
    if s.budget < n_init {
        push(v, "search.budget", format!("{} is smaller than n_init {n_init}", s.budget));
    }
    if s.budget as u128 > space.size() {
        push(
            v,
            "search.budget",
            format!("{} exceeds the {} configurations in the search space", s.budget, space.size()),
        );
    }
}
