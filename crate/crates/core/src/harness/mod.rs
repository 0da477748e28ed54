//! Command implementations behind the `toggle` binary.

mod config;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

pub use config::{parse_seed_override, CorpusConfig, RunConfig, SearchConfig, SeedKind, SensitivityConfig, Violation};

use crate::cost::{cost_report, CostError, CostReport};
use crate::io_util::write_atomic;
use crate::model::{build_model, CompressionConfig, EvaluationCorpus, ModelError, ReferenceModel};
use crate::modes::{mode_report, select_mode, ModeError, ModeReport};
use crate::search::{
    pareto_front, read_log, run_search, EvaluationRecord, ParetoPoint, PipelineEvaluator,
    SearchError, SearchSettings, SearchSpace,
};
use crate::signal::{write_trace, SignalError};
use crate::stl::{PropertySpec, StlError, BUILTIN_NAMES};

pub const RECORD_LOG: &str = "records.jsonl";
pub const PARETO_TABLE: &str = "pareto.tsv";
pub const MODES_JSON: &str = "modes.json";
pub const MODES_TEXT: &str = "modes.txt";
pub const TRACE_DIR: &str = "traces";
pub const SENSITIVITY_TABLE: &str = "sensitivity.tsv";
pub const SCATTER_TABLE: &str = "pareto_scatter.tsv";
pub const BARS_TABLE: &str = "mode_bars.tsv";

/// Sweep values for `delta`, `gamma` and `tau`.
pub const SIMILARITY_SWEEP: [f64; 5] = [0.5, 0.6, 0.7, 0.8, 0.9];
/// Sweep values for `epsilon`.
pub const EPSILON_SWEEP: [f64; 5] = [0.15, 0.2, 0.25, 0.3, 0.35];

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid configuration ({} problem(s))", .0.len())]
    Invalid(Vec<Violation>),
    /// Bad user input other than the run configuration.
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Runtime(String),
}

impl HarnessError {
    /// 1 for validation failures, 2 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Invalid(_) | HarnessError::Input(_) => 1,
            HarnessError::Runtime(_) => 2,
        }
    }
}

macro_rules! runtime_from {
    ($($t:ty),*) => {$(
        impl From<$t> for HarnessError {
            fn from(e: $t) -> Self {
                HarnessError::Runtime(e.to_string())
            }
        }
    )*};
}
runtime_from!(SearchError, ModelError, SignalError, StlError, CostError, ModeError, std::io::Error);

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;

pub fn cmd_validate(path: &Path) -> Result<RunConfig> {
    RunConfig::load(path).map_err(HarnessError::Invalid)
}

/// Base model, corpus, search space and a caching evaluator for a config.
pub struct Pipeline {
    pub config: RunConfig,
    pub base: ReferenceModel,
    pub corpus: EvaluationCorpus,
    pub space: SearchSpace,
    pub evaluator: PipelineEvaluator,
}

impl Pipeline {
    pub fn new(config: &RunConfig) -> Result<Self> {
        let base = build_model(&config.architecture, config.model_seed)?;
        let c = &config.corpus;
        let corpus = EvaluationCorpus::synthesize(&base, c.n_prompts, c.prompt_len, c.horizon, c.seed)?;
        let space = config.search_space().map_err(HarnessError::Runtime)?;
        let evaluator = PipelineEvaluator::new(&base, &corpus, config.spec.clone(), config.cost, config.search.p_max)?
            .with_cache();
        Ok(Self {
            config: config.clone(),
            base,
            corpus,
            space,
            evaluator,
        })
    }

    pub fn settings(&self, budget: usize) -> SearchSettings {
        SearchSettings {
            budget,
            n_init: self.config.n_init(&self.space).min(budget),
            seed: self.config.search.seed,
        }
    }
}

pub struct SearchOutput {
    pub records: Vec<EvaluationRecord>,
    pub front: Vec<ParetoPoint>,
    pub report: ModeReport,
}

fn trace_name(mode: &str) -> String {
    let s: String = mode
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '_' })
        .collect();
    format!("{s}.trace")
}

pub fn render_pareto(front: &[ParetoPoint]) -> String {
    let mut s = String::from("id\tcost\trho_overall\tavg_pp\n");
    for p in front {
        let _ = writeln!(
            s,
            "{}\t{}\t{}\t{}",
            p.record.id, p.record.cost, p.rho_overall, p.record.avg_pp
        );
    }
    s
}

/// Search, then write the record log, feasible Pareto front, mode report and
/// baseline/selected traces into `out_dir`. An existing record log is
/// resumed.
pub fn cmd_search(config: &RunConfig, out_dir: &Path) -> Result<SearchOutput> {
    fs::create_dir_all(out_dir.join(TRACE_DIR))?;
    let p = Pipeline::new(config)?;
    let records = run_search(
        &p.space,
        &p.evaluator,
        &p.settings(config.search.budget),
        Some(&out_dir.join(RECORD_LOG)),
    )?;
    let front = pareto_front(&records, true);
    write_atomic(&out_dir.join(PARETO_TABLE), render_pareto(&front).as_bytes())?;

    let inventory = p.evaluator.inventory().clone();
    let report = mode_report(&records, &config.modes, &inventory, &config.cost)?;
    let json = serde_json::to_string_pretty(&report).map_err(|e| HarnessError::Runtime(e.to_string()))?;
    write_atomic(&out_dir.join(MODES_JSON), format!("{json}\n").as_bytes())?;
    write_atomic(&out_dir.join(MODES_TEXT), report.render_table().as_bytes())?;

    let identity = CompressionConfig::identity(&config.architecture);
    write_trace(p.evaluator.simulate(&identity)?.as_ref(), &out_dir.join(TRACE_DIR).join("baseline.trace"))?;
    for (name, target) in &config.modes {
        if let Some(r) = select_mode(&records, name, *target).selected {
            let bundle = p.evaluator.simulate(&r.kappa)?;
            write_trace(&bundle, &out_dir.join(TRACE_DIR).join(trace_name(name)))?;
        }
    }
    Ok(SearchOutput { records, front, report })
}

#[derive(Debug, Clone, Serialize)]
pub struct EvaluateOutput {
    pub record: EvaluationRecord,
    pub cost: CostReport,
}

/// Evaluate the configuration in `kappa_path` (a JSON list of
/// `{layer, component, bits, prune}`) and write its trace and record into
/// `out_dir`.
pub fn cmd_evaluate(config: &RunConfig, kappa_path: &Path, out_dir: &Path) -> Result<EvaluateOutput> {
    let text = fs::read_to_string(kappa_path)
        .map_err(|e| HarnessError::Input(format!("cannot read {}: {e}", kappa_path.display())))?;
    let kappa: CompressionConfig = serde_json::from_str(&text)
        .map_err(|e| HarnessError::Input(format!("{}: {e}", kappa_path.display())))?;
    kappa
        .validate_for(&config.architecture, config.search.p_max)
        .map_err(|e| HarnessError::Input(format!("{}: {e}", kappa_path.display())))?;

    let base = build_model(&config.architecture, config.model_seed)?;
    let c = &config.corpus;
    let corpus = EvaluationCorpus::synthesize(&base, c.n_prompts, c.prompt_len, c.horizon, c.seed)?;
    let evaluator = PipelineEvaluator::new(&base, &corpus, config.spec.clone(), config.cost, config.search.p_max)?;
    let bundle = evaluator.simulate(&kappa)?;
    let record = evaluator.score(0, &kappa, &bundle)?;
    let cost = cost_report(evaluator.inventory(), &kappa, &config.cost)?;

    fs::create_dir_all(out_dir)?;
    let stem = kappa_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "evaluate".into());
    write_trace(&bundle, &out_dir.join(format!("{stem}.trace")))?;
    let out = EvaluateOutput { record, cost };
    let json = serde_json::to_string_pretty(&out).map_err(|e| HarnessError::Runtime(e.to_string()))?;
    write_atomic(&out_dir.join(format!("{stem}.json")), format!("{json}\n").as_bytes())?;
    Ok(out)
}

pub fn render_evaluation(out: &EvaluateOutput) -> String {
    let r = &out.record;
    let mut s = String::new();
    let _ = writeln!(s, "cost (FLOPs)     {}", r.cost);
    let _ = writeln!(s, "FLOPs reduction  {:.4}x", out.cost.flops_reduction);
    let _ = writeln!(s, "compression      {:.2}%", out.cost.compression_ratio);
    let _ = writeln!(
        s,
        "size             {:.6} MB -> {:.6} MB",
        out.cost.size_base_mb, out.cost.size_compressed_mb
    );
    for ((name, rho), th) in r.property_names.iter().zip(&r.rho_min).zip(&r.rho_th) {
        let _ = writeln!(s, "rho_min {name:<24} {rho:+.6} (threshold {th})");
    }
    let _ = writeln!(s, "feasible         {}", r.feasible);
    let _ = writeln!(s, "AvgPP            {:.4}%", r.avg_pp);
    s
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SensitivityRow {
    pub threshold: String,
    pub value: f64,
    pub config_id: Option<usize>,
    pub flops_reduction: Option<f64>,
    pub compression_ratio: Option<f64>,
    pub avg_pp: Option<f64>,
    pub n_feasible: usize,
}

fn spec_with(spec: &PropertySpec, threshold: &str, value: f64) -> PropertySpec {
    let mut s = spec.clone();
    match threshold {
        "delta" => s.thresholds.delta = value,
        "gamma" => s.thresholds.gamma = value,
        "tau" => s.thresholds.tau = value,
        _ => s.thresholds.epsilon = value,
    }
    s
}

/// One reduced-budget search per threshold setting, varying one threshold at
/// a time. Reports FR and CR of the cheapest feasible configuration found.
pub fn cmd_sensitivity(config: &RunConfig, out_dir: &Path) -> Result<Vec<SensitivityRow>> {
    let p = Pipeline::new(config)?;
    let budget = config.sensitivity.budget;
    let settings = p.settings(budget);
    let mut rows = Vec::new();
    let mut memo: Vec<(PropertySpec, SensitivityRow)> = Vec::new();
    let sweeps: [(&str, &[f64]); 4] = [
        ("delta", &SIMILARITY_SWEEP),
        ("gamma", &SIMILARITY_SWEEP),
        ("tau", &SIMILARITY_SWEEP),
        ("epsilon", &EPSILON_SWEEP),
    ];
    for (name, values) in sweeps {
        for &value in values {
            let spec = spec_with(&config.spec, name, value);
            if let Some((_, row)) = memo.iter().find(|(s, _)| *s == spec) {
                rows.push(SensitivityRow {
                    threshold: name.into(),
                    value,
                    ..row.clone()
                });
                continue;
            }
            let evaluator = p.evaluator.with_spec(spec.clone())?;
            let records = run_search(&p.space, &evaluator, &settings, None)?;
            let best = records
                .iter()
                .filter(|r| r.feasible)
                .min_by(|a, b| a.cost.total_cmp(&b.cost).then(a.id.cmp(&b.id)));
            let report = best
                .map(|r| cost_report(evaluator.inventory(), &r.kappa, &config.cost))
                .transpose()?;
            let row = SensitivityRow {
                threshold: name.into(),
                value,
                config_id: best.map(|r| r.id),
                flops_reduction: report.as_ref().map(|c| c.flops_reduction),
                compression_ratio: report.as_ref().map(|c| c.compression_ratio),
                avg_pp: best.map(|r| r.avg_pp),
                n_feasible: records.iter().filter(|r| r.feasible).count(),
            };
            memo.push((spec, row.clone()));
            rows.push(row);
        }
    }
    fs::create_dir_all(out_dir)?;
    write_atomic(&out_dir.join(SENSITIVITY_TABLE), render_sensitivity(&rows).as_bytes())?;
    Ok(rows)
}

fn opt(v: Option<f64>, prec: usize) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.prec$}"))
}

pub fn render_sensitivity(rows: &[SensitivityRow]) -> String {
    let mut s = String::from("threshold\tvalue\tconfig_id\tFR\tCR\tavg_pp\tn_feasible\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}",
            r.threshold,
            r.value,
            r.config_id.map_or_else(|| "-".into(), |i| i.to_string()),
            opt(r.flops_reduction, 4),
            opt(r.compression_ratio, 2),
            opt(r.avg_pp, 2),
            r.n_feasible
        );
    }
    s
}

/// Plot tables from a record log: a cost/robustness scatter and per-mode
/// preservation bars. Feasibility is re-derived from `rho_min` and
/// `rho_th` and must agree with the logged flag.
pub fn cmd_plot_data(log_path: &Path, modes: &[(String, f64)], out_dir: &Path) -> Result<(PathBuf, PathBuf)> {
    let records = read_log(log_path)?;
    if records.is_empty() {
        return Err(HarnessError::Runtime(format!("{} has no records", log_path.display())));
    }
    for r in &records {
        let derived = r.rho_min.len() == r.rho_th.len() && r.rho_min.iter().zip(&r.rho_th).all(|(a, b)| a >= b);
        if derived != r.feasible {
            return Err(HarnessError::Runtime(format!(
                "record {} is marked feasible={} but its robustness says {derived}",
                r.id, r.feasible
            )));
        }
    }
    let front: Vec<usize> = pareto_front(&records, true).iter().map(|p| p.record.id).collect();
    let mut scatter = String::from("id\tcost\trho_overall\tfeasible\tpareto\n");
    for r in &records {
        let _ = writeln!(
            scatter,
            "{}\t{}\t{}\t{}\t{}",
            r.id,
            r.cost,
            r.rho_overall(),
            r.feasible,
            front.contains(&r.id)
        );
    }
    let mut bars = String::from("mode\ttarget\tconfig_id\tproperty\tps_pct\n");
    for (name, target) in modes {
        let m = select_mode(&records, name, *target);
        match &m.selected {
            Some(r) => {
                for (prop, ps) in BUILTIN_NAMES.iter().zip(&r.ps) {
                    let _ = writeln!(bars, "{name}\t{target}\t{}\t{prop}\t{}", r.id, 100.0 * ps);
                }
            }
            None => {
                let _ = writeln!(bars, "{name}\t{target}\t-\t-\t-");
            }
        }
    }
    fs::create_dir_all(out_dir)?;
    let (a, b) = (out_dir.join(SCATTER_TABLE), out_dir.join(BARS_TABLE));
    write_atomic(&a, scatter.as_bytes())?;
    write_atomic(&b, bars.as_bytes())?;
    Ok((a, b))
}
