//! The four built-in linguistic-preservation properties and feasibility.

use serde::{Deserialize, Serialize};

use super::{min_robustness_with_witness, AffineExpr, Formula, Interval, Result, StlError};
use crate::signal::{attn_sim_channel, SignalBundle, CH_EMB_SIM, CH_FACT_RATIO, CH_JSD};

/// Names of the built-in properties, in evaluation order.
pub const BUILTIN_NAMES: [&str; 4] = [
    "sequential_coherence",
    "long_range_dependency",
    "contextual_consistency",
    "factual_accuracy",
];

/// Per-step tolerances inside the predicates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredicateThresholds {
    /// Largest acceptable JSD.
    pub epsilon: f64,
    /// Attention-similarity floor.
    pub delta: f64,
    /// Embedding-similarity floor.
    pub gamma: f64,
    /// Factual probability-ratio floor.
    pub tau: f64,
}

impl Default for PredicateThresholds {
    fn default() -> Self {
        Self {
            epsilon: 0.25,
            delta: 0.70,
            gamma: 0.70,
            tau: 0.70,
        }
    }
}

impl PredicateThresholds {
    pub fn new(epsilon: f64, delta: f64, gamma: f64, tau: f64) -> Result<Self> {
        let t = Self {
            epsilon,
            delta,
            gamma,
            tau,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        for (field, value) in [
            ("epsilon", self.epsilon),
            ("delta", self.delta),
            ("gamma", self.gamma),
            ("tau", self.tau),
        ] {
            if !(value > 0.0 && value <= 1.0) {
                return Err(StlError::ThresholdRange {
                    field: field.into(),
                    value,
                    range: "(0, 1]",
                });
            }
        }
        Ok(())
    }
}

/// Minimum acceptable robustness, one entry per property.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessThresholds(Vec<f64>);

impl RobustnessThresholds {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(&v) = values.iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
            return Err(StlError::ThresholdRange {
                field: "rho_th".into(),
                value: v,
                range: "[0, inf)",
            });
        }
        Ok(Self(values))
    }

    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Robustness threshold as written in a spec: one value for every property,
/// or an explicit list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RhoThreshold {
    Uniform(f64),
    PerProperty(Vec<f64>),
}

impl Default for RhoThreshold {
    fn default() -> Self {
        RhoThreshold::Uniform(0.0)
    }
}

impl RhoThreshold {
    pub fn resolve(&self, n_properties: usize) -> Result<RobustnessThresholds> {
        match self {
            RhoThreshold::Uniform(v) => RobustnessThresholds::new(vec![*v; n_properties]),
            RhoThreshold::PerProperty(v) if v.len() == n_properties => {
                RobustnessThresholds::new(v.clone())
            }
            RhoThreshold::PerProperty(v) => Err(StlError::IndexMismatch {
                expected: n_properties,
                got: v.len(),
            }),
        }
    }
}

fn always_upto(horizon: usize, pred: AffineExpr) -> Formula {
    let iv = Interval::new(1, horizon.max(1)).expect("1 <= horizon");
    Formula::always(iv, Formula::predicate(pred))
}

/// `always[1,horizon](epsilon - jsd >= 0)`.
pub fn build_phi1(thresholds: &PredicateThresholds, horizon: usize) -> Formula {
    always_upto(
        horizon,
        AffineExpr::scaled(CH_JSD, -1.0, thresholds.epsilon),
    )
}

/// Conjunction over layers of `always[1,horizon](attn_sim_l - delta >= 0)`.
pub fn build_phi2(thresholds: &PredicateThresholds, horizon: usize, n_layers: usize) -> Formula {
    Formula::conjunction((1..=n_layers.max(1)).map(|l| {
        always_upto(
            horizon,
            AffineExpr::scaled(attn_sim_channel(l), 1.0, -thresholds.delta),
        )
    }))
    .expect("at least one layer")
}

/// `always[1,horizon](emb_sim - gamma >= 0)`.
pub fn build_phi3(thresholds: &PredicateThresholds, horizon: usize) -> Formula {
    always_upto(
        horizon,
        AffineExpr::scaled(CH_EMB_SIM, 1.0, -thresholds.gamma),
    )
}

/// `always[1,horizon](fact_ratio - tau >= 0)`.
pub fn build_phi4(thresholds: &PredicateThresholds, horizon: usize) -> Formula {
    always_upto(
        horizon,
        AffineExpr::scaled(CH_FACT_RATIO, 1.0, -thresholds.tau),
    )
}

/// A parsed property file: predicate thresholds, robustness
/// thresholds and any user-defined properties.
#[derive(Debug, Clone, PartialEq)]
pub struct PropertySpec {
    pub thresholds: PredicateThresholds,
    pub rho_th: RhoThreshold,
    pub extras: Vec<(String, Formula)>,
}

impl Default for PropertySpec {
    fn default() -> Self {
        Self {
            thresholds: PredicateThresholds::default(),
            rho_th: RhoThreshold::default(),
            extras: Vec::new(),
        }
    }
}

impl PropertySpec {
    /// Built-in properties (windows over the whole trace) followed by extras.
    pub fn formulas(&self, n_layers: usize) -> Vec<(String, Formula)> {
        let th = &self.thresholds;
        let whole = |pred: AffineExpr| {
            Formula::always(
                Interval::to_horizon(1).expect("1 >= 1"),
                Formula::predicate(pred),
            )
        };
        let phi2 = Formula::conjunction(
            (1..=n_layers.max(1))
                .map(|l| whole(AffineExpr::scaled(attn_sim_channel(l), 1.0, -th.delta))),
        )
        .expect("at least one layer");
        let mut out = vec![
            (
                BUILTIN_NAMES[0].to_string(),
                whole(AffineExpr::scaled(CH_JSD, -1.0, th.epsilon)),
            ),
            (BUILTIN_NAMES[1].to_string(), phi2),
            (
                BUILTIN_NAMES[2].to_string(),
                whole(AffineExpr::scaled(CH_EMB_SIM, 1.0, -th.gamma)),
            ),
            (
                BUILTIN_NAMES[3].to_string(),
                whole(AffineExpr::scaled(CH_FACT_RATIO, 1.0, -th.tau)),
            ),
        ];
        out.extend(self.extras.iter().cloned());
        out
    }

    pub fn n_properties(&self) -> usize {
        BUILTIN_NAMES.len() + self.extras.len()
    }

    pub fn robustness_thresholds(&self) -> Result<RobustnessThresholds> {
        self.rho_th.resolve(self.n_properties())
    }

    pub fn validate(&self) -> Result<()> {
        self.thresholds.validate()?;
        self.robustness_thresholds().map(|_| ())
    }
}

/// Worst-case robustness of each property over a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessResult {
    pub names: Vec<String>,
    pub per_property: Vec<f64>,
    /// Step attaining the minimum, in the prompt that attains it.
    pub argmin_step: Vec<usize>,
    pub argmin_prompt: Vec<String>,
}

/// Evaluates every formula against the bundle. All channels are checked
/// before anything is evaluated.
pub fn evaluate_properties(
    formulas: &[(String, Formula)],
    bundle: &SignalBundle,
) -> Result<RobustnessResult> {
    for (_, f) in formulas {
        f.check_channels(bundle.channels())?;
    }
    let mut out = RobustnessResult {
        names: Vec::with_capacity(formulas.len()),
        per_property: Vec::with_capacity(formulas.len()),
        argmin_step: Vec::with_capacity(formulas.len()),
        argmin_prompt: Vec::with_capacity(formulas.len()),
    };
    for (name, f) in formulas {
        let (rho, prompt, step) = min_robustness_with_witness(f, bundle)?;
        out.names.push(name.clone());
        out.per_property.push(rho);
        out.argmin_step.push(step);
        out.argmin_prompt
            .push(bundle.signals()[prompt].prompt_id().to_string());
    }
    Ok(out)
}

/// True iff every worst-case robustness meets its threshold.
pub fn check_feasibility(rho_min: &[f64], rho_th: &RobustnessThresholds) -> Result<bool> {
    if rho_min.len() != rho_th.len() {
        return Err(StlError::IndexMismatch {
            expected: rho_th.len(),
            got: rho_min.len(),
        });
    }
    Ok(rho_min
        .iter()
        .zip(rho_th.as_slice())
        .all(|(rho, th)| rho >= th))
}
