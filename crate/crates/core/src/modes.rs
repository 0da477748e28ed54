//! Property preservation scores (AvgPP) and operating-mode selection.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cost::{cost_report, CostError, CostParams, CostReport, ParamInventory};
use crate::search::EvaluationRecord;
use crate::signal::{SignalBundle, ATTN_SIM_PREFIX, CH_EMB_SIM, CH_FACT_RATIO, CH_JSD};
use crate::stl::PredicateThresholds;

pub const EPS_NORM: f64 = 1e-9;

/// `(name, AvgPP target)` for the three standard modes.
pub const DEFAULT_MODES: [(&str, f64); 3] = [("Strict", 99.0), ("Optimal", 95.0), ("Relaxed", 85.0)];

#[derive(Debug, Error)]
pub enum ModeError {
    #[error("bundle is missing channel group `{0}`")]
    MissingChannel(String),
    #[error("bundle has no signals")]
    Empty,
    #[error(transparent)]
    Cost(#[from] CostError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreservationScores {
    /// `per_prompt[d][i]`: score of built-in property `i` on prompt `d`.
    pub per_prompt: Vec<[f64; 4]>,
    /// Dataset mean per property.
    pub mean: [f64; 4],
    /// `100 * mean(mean)`.
    pub avg_pp: f64,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Preservation of each built-in property per prompt.
///
/// The representative metric of a prompt is its mean over steps. JSD is
/// scored against a reference of `epsilon` (`1 - jsd / epsilon`, floored at
/// 0), the similarity and ratio metrics against a base value of 1 (capped at
/// 1).
pub fn preservation_scores(
    bundle: &SignalBundle,
    thresholds: &PredicateThresholds,
) -> Result<PreservationScores, ModeError> {
    if bundle.is_empty() {
        return Err(ModeError::Empty);
    }
    let idx = |name: &str| {
        bundle
            .channels()
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| ModeError::MissingChannel(name.to_string()))
    };
    let (jsd, emb, fact) = (idx(CH_JSD)?, idx(CH_EMB_SIM)?, idx(CH_FACT_RATIO)?);
    let attn: Vec<usize> = bundle
        .channels()
        .iter()
        .enumerate()
        .filter(|(_, c)| c.starts_with(ATTN_SIM_PREFIX))
        .map(|(i, _)| i)
        .collect();
    if attn.is_empty() {
        return Err(ModeError::MissingChannel(format!("{ATTN_SIM_PREFIX}*")));
    }

    let per_prompt: Vec<[f64; 4]> = bundle
        .signals()
        .iter()
        .map(|s| {
            let steps: Vec<&[f64]> = (1..=s.horizon()).map(|t| s.row(t)).collect();
            let m_jsd = mean(&steps.iter().map(|r| r[jsd]).collect::<Vec<_>>());
            let m_attn = mean(
                &steps
                    .iter()
                    .map(|r| mean(&attn.iter().map(|&j| r[j]).collect::<Vec<_>>()))
                    .collect::<Vec<_>>(),
            );
            let m_emb = mean(&steps.iter().map(|r| r[emb]).collect::<Vec<_>>());
            let m_fact = mean(&steps.iter().map(|r| r[fact]).collect::<Vec<_>>());
            let ratio = |m: f64| (m / (1.0 + EPS_NORM)).clamp(0.0, 1.0);
            [
                (1.0 - m_jsd / (thresholds.epsilon + EPS_NORM)).clamp(0.0, 1.0),
                ratio(m_attn),
                ratio(m_emb),
                ratio(m_fact),
            ]
        })
        .collect();

    let mut means = [0.0; 4];
    for (i, m) in means.iter_mut().enumerate() {
        *m = mean(&per_prompt.iter().map(|p| p[i]).collect::<Vec<_>>());
    }
    Ok(PreservationScores {
        per_prompt,
        avg_pp: 100.0 * mean(&means),
        mean: means,
    })
}

/// `100 * mean(ps_bar)`.
pub fn avg_pp(ps_bar: &[f64]) -> f64 {
    100.0 * mean(ps_bar)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatingMode {
    pub name: String,
    pub target: f64,
    pub selected: Option<EvaluationRecord>,
}

/// Lowest-cost feasible record with `avg_pp >= target`; ties go to higher
/// AvgPP, then lower id.
pub fn select_mode(records: &[EvaluationRecord], name: &str, target: f64) -> OperatingMode {
    let selected = records
        .iter()
        .filter(|r| r.feasible && r.avg_pp >= target)
        .min_by(|a, b| {
            a.cost
                .total_cmp(&b.cost)
                .then(b.avg_pp.total_cmp(&a.avg_pp))
                .then(a.id.cmp(&b.id))
        })
        .cloned();
    OperatingMode {
        name: name.to_string(),
        target,
        selected,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSummary {
    pub name: String,
    pub target: f64,
    pub config_id: Option<usize>,
    pub avg_pp: Option<f64>,
    pub avg_bits: Option<f64>,
    /// Mean pruning ratio in percent.
    pub avg_prune_pct: Option<f64>,
    pub ps: Option<Vec<f64>>,
    pub cost: Option<CostReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeReport {
    pub modes: Vec<ModeSummary>,
}

pub fn mode_report(
    records: &[EvaluationRecord],
    modes: &[(String, f64)],
    inventory: &ParamInventory,
    params: &CostParams,
) -> Result<ModeReport, ModeError> {
    let mut out = Vec::with_capacity(modes.len());
    for (name, target) in modes {
        let mode = select_mode(records, name, *target);
        let summary = match &mode.selected {
            Some(r) => ModeSummary {
                name: name.clone(),
                target: *target,
                config_id: Some(r.id),
                avg_pp: Some(r.avg_pp),
                avg_bits: Some(r.kappa.mean_bits()),
                avg_prune_pct: Some(100.0 * r.kappa.mean_prune()),
                ps: Some(r.ps.clone()),
                cost: Some(cost_report(inventory, &r.kappa, params)?),
            },
            None => ModeSummary {
                name: name.clone(),
                target: *target,
                config_id: None,
                avg_pp: None,
                avg_bits: None,
                avg_prune_pct: None,
                ps: None,
                cost: None,
            },
        };
        out.push(summary);
    }
    Ok(ModeReport { modes: out })
}

impl ModeReport {
    /// Aligned text table: mode, target, id, AvgPP, AvgBits, AvgPrun, CR, FR,
    /// BMS, CMS, BF/T, CF/T.
    pub fn render_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<10} {:>7} {:>6} {:>8} {:>8} {:>11} {:>8} {:>6} {:>10} {:>10} {:>10} {:>10}",
            "Mode",
            "Target",
            "Id",
            "AvgPP",
            "AvgBits",
            "AvgPrun(%)",
            "CR(%)",
            "FR(x)",
            "BMS(MB)",
            "CMS(MB)",
            "BF/T",
            "CF/T"
        );
        for m in &self.modes {
            match (&m.cost, m.config_id) {
                (Some(c), Some(id)) => {
                    let _ = writeln!(
                        s,
                        "{:<10} {:>7.1} {:>6} {:>8.2} {:>8.2} {:>11.1} {:>8.1} {:>6.2} {:>10.4} {:>10.4} {:>10.6} {:>10.6}",
                        m.name,
                        m.target,
                        id,
                        m.avg_pp.unwrap_or_default(),
                        m.avg_bits.unwrap_or_default(),
                        m.avg_prune_pct.unwrap_or_default(),
                        c.compression_ratio,
                        c.flops_reduction,
                        c.size_base_mb,
                        c.size_compressed_mb,
                        c.gflops_per_token_base,
                        c.gflops_per_token_compressed
                    );
                }
                _ => {
                    let _ = writeln!(
                        s,
                        "{:<10} {:>7.1} {:>6} no configuration meets target",
                        m.name, m.target, "-"
                    );
                }
            }
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Assignment, Component, ComponentKey, CompressionConfig};
    use crate::signal::{builtin_channels, InferenceSignal};

    pub(crate) fn record(id: usize, avg_pp: f64, cost: f64, feasible: bool) -> EvaluationRecord {
        EvaluationRecord {
            id,
            kappa: CompressionConfig::from_map(
                [(
                    ComponentKey::new(1, Component::Ffn),
                    Assignment::IDENTITY,
                )]
                .into(),
            ),
            cost,
            property_names: vec![],
            rho_min: vec![],
            rho_th: vec![],
            feasible,
            avg_pp,
            ps: vec![],
        }
    }

    fn bundle(rows: Vec<Vec<f64>>) -> SignalBundle {
        let ch = builtin_channels(2);
        let s = InferenceSignal::new("p", ch.clone(), rows).unwrap();
        SignalBundle::new("d", 8, ch, vec![s]).unwrap()
    }

    #[test]
    fn perfect_preservation() {
        let b = bundle(vec![vec![0.0, 1.0, 1.0, 1.0, 1.0]; 3]);
        let ps = preservation_scores(&b, &PredicateThresholds::default()).unwrap();
        assert!(ps.mean.iter().all(|v| (v - 1.0).abs() < 1e-8));
        assert!((ps.avg_pp - 100.0).abs() < 1e-6);
    }

    #[test]
    fn jsd_at_epsilon_scores_zero() {
        let b = bundle(vec![vec![0.25, 1.0, 1.0, 1.0, 1.0]; 2]);
        let ps = preservation_scores(&b, &PredicateThresholds::default()).unwrap();
        assert!(ps.mean[0].abs() < 1e-8);
        let b = bundle(vec![vec![0.9, -0.5, 1.0, 1.0, 9.0]; 2]);
        let ps = preservation_scores(&b, &PredicateThresholds::default()).unwrap();
        assert_eq!(ps.mean[0], 0.0);
        assert_eq!(ps.mean[3], 1.0);
        assert!(ps.per_prompt[0].iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn avg_pp_arithmetic() {
        assert!((avg_pp(&[1.0, 0.9, 0.8, 0.9]) - 90.0).abs() < 1e-12);
    }

    #[test]
    fn missing_channels() {
        let s = InferenceSignal::new("p", vec!["jsd".into()], vec![vec![0.0]]).unwrap();
        let b = SignalBundle::new("d", 8, vec!["jsd".into()], vec![s]).unwrap();
        assert!(matches!(
            preservation_scores(&b, &PredicateThresholds::default()),
            Err(ModeError::MissingChannel(_))
        ));
    }

    #[test]
    fn selection_examples() {
        let recs = vec![
            record(0, 99.2, 100.0, true),
            record(1, 96.0, 70.0, true),
            record(2, 85.5, 40.0, true),
        ];
        assert_eq!(select_mode(&recs, "O", 95.0).selected.unwrap().cost, 70.0);
        assert!(select_mode(&recs, "S", 99.5).selected.is_none());
        assert_eq!(select_mode(&recs, "R", 85.0).selected.unwrap().cost, 40.0);
    }

    #[test]
    fn selection_ties_and_feasibility() {
        let recs = vec![
            record(0, 97.0, 50.0, true),
            record(1, 98.0, 50.0, true),
            record(2, 98.0, 50.0, true),
            record(3, 99.0, 10.0, false),
        ];
        assert_eq!(select_mode(&recs, "x", 90.0).selected.unwrap().id, 1);
    }

    #[test]
    fn report_for_uniform_config() {
        let key = ComponentKey::new(1, Component::Ffn);
        let inv = ParamInventory::new([(key, 1000)].into(), 0);
        let mut r = record(0, 100.0, 1.0, true);
        r.kappa = CompressionConfig::from_map([(key, Assignment::new(8, 0.4))].into());
        let rep = mode_report(
            &[r],
            &[("Optimal".to_string(), 95.0), ("Strict".to_string(), 100.5)],
            &inv,
            &CostParams::default(),
        )
        .unwrap();
        assert_eq!(rep.modes[0].avg_bits, Some(8.0));
        assert!((rep.modes[0].avg_prune_pct.unwrap() - 40.0).abs() < 1e-12);
        assert!(rep.modes[1].config_id.is_none());
        let table = rep.render_table();
        assert!(table.contains("no configuration meets target"));
    }
}
