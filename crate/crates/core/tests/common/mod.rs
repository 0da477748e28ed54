//! Test-side reference implementations, written directly from the
//! definitions and sharing no code with the library paths they check.

#![allow(dead_code)]

use std::collections::BTreeMap;

use rand::Rng;
use toggle_core::cost::CostParams;
use toggle_core::model::{
    build_model, Assignment, Component, ComponentKey, CompressionConfig, EvaluationCorpus, ModelArchitecture, Style,
};
use toggle_core::search::{EvaluationRecord, PipelineEvaluator, SearchSpace};
use toggle_core::signal::InferenceSignal;
use toggle_core::stl::{AffineExpr, Bound, Formula, Interval, PropertySpec};

// ---------------------------------------------------------------- STL

fn affine_at(e: &AffineExpr, sig: &InferenceSignal, t: usize) -> f64 {
    let mut v = e.constant;
    for (name, c) in &e.terms {
        let j = sig.channel_index(name).expect("channel present");
        v += c * sig.value(t, j);
    }
    v
}

/// Recursive robustness at step `t`; `None` where the formula reads past the
/// trace. An `always` whose window ends at `T'` runs to the last step where
/// its operand is defined.
pub fn brute_robustness(phi: &Formula, sig: &InferenceSignal, t: usize) -> Option<f64> {
    let horizon = sig.horizon();
    match phi {
        Formula::Predicate(e) => (t >= 1 && t <= horizon).then(|| affine_at(e, sig, t)),
        Formula::Not(a) => brute_robustness(a, sig, t).map(|v| -v),
        Formula::And(a, b) => Some(brute_robustness(a, sig, t)?.min(brute_robustness(b, sig, t)?)),
        Formula::Or(a, b) => Some(brute_robustness(a, sig, t)?.max(brute_robustness(b, sig, t)?)),
        Formula::Always(iv, a) => {
            let first = t + iv.start() - 1;
            match iv.end() {
                Bound::Step(b) => {
                    let mut m = f64::INFINITY;
                    for s in first..=t + b - 1 {
                        m = m.min(brute_robustness(a, sig, s)?);
                    }
                    Some(m)
                }
                Bound::Horizon => {
                    let mut m = brute_robustness(a, sig, first)?;
                    let mut s = first + 1;
                    while let Some(v) = brute_robustness(a, sig, s) {
                        m = m.min(v);
                        s += 1;
                    }
                    Some(m)
                }
            }
        }
    }
}

pub fn channel_names(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("c{i}")).collect()
}

pub fn random_signal<R: Rng>(rng: &mut R, channels: &[String], horizon: usize) -> InferenceSignal {
    let rows = (0..horizon)
        .map(|_| channels.iter().map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    InferenceSignal::new("p", channels.to_vec(), rows).unwrap()
}

fn random_affine<R: Rng>(rng: &mut R, channels: &[String]) -> AffineExpr {
    let n_terms = rng.random_range(1..=2);
    AffineExpr {
        terms: (0..n_terms)
            .map(|_| {
                (
                    channels[rng.random_range(0..channels.len())].clone(),
                    rng.random_range(-2.0..2.0),
                )
            })
            .collect(),
        constant: rng.random_range(-1.0..1.0),
    }
}

fn random_interval<R: Rng>(rng: &mut R) -> Interval {
    let a = rng.random_range(1..=4);
    if rng.random_bool(0.25) {
        Interval::to_horizon(a).unwrap()
    } else {
        Interval::new(a, a + rng.random_range(0..=5)).unwrap()
    }
}

/// Random formula of depth at most `depth` (a predicate has depth 1).
pub fn random_formula<R: Rng>(rng: &mut R, depth: usize, channels: &[String]) -> Formula {
    if depth <= 1 || rng.random_bool(0.2) {
        return Formula::predicate(random_affine(rng, channels));
    }
    match rng.random_range(0..4) {
        0 => random_formula(rng, depth - 1, channels).not(),
        1 => random_formula(rng, depth - 1, channels).and(random_formula(rng, depth - 1, channels)),
        2 => random_formula(rng, depth - 1, channels).or(random_formula(rng, depth - 1, channels)),
        _ => Formula::always(random_interval(rng), random_formula(rng, depth - 1, channels)),
    }
}

// ---------------------------------------------------------------- records

pub fn record(id: usize, cost: f64, rho: &[f64], feasible: bool, avg_pp: f64) -> EvaluationRecord {
    EvaluationRecord {
        id,
        kappa: CompressionConfig::from_map(
            [(ComponentKey::new(1, Component::Ffn), Assignment::IDENTITY)].into(),
        ),
        cost,
        property_names: (0..rho.len()).map(|i| format!("p{i}")).collect(),
        rho_min: rho.to_vec(),
        rho_th: vec![0.0; rho.len()],
        feasible,
        avg_pp,
        ps: vec![avg_pp / 100.0; 4],
    }
}

/// Ids of records no other record dominates, by pairwise comparison.
pub fn brute_pareto(records: &[EvaluationRecord], feasible_only: bool) -> Vec<usize> {
    let pool: Vec<&EvaluationRecord> = records.iter().filter(|r| !feasible_only || r.feasible).collect();
    let rho = |r: &EvaluationRecord| r.rho_min.iter().copied().fold(f64::INFINITY, f64::min);
    let mut ids: Vec<usize> = pool
        .iter()
        .filter(|a| {
            !pool.iter().any(|b| {
                b.cost <= a.cost && rho(b) >= rho(a) && (b.cost < a.cost || rho(b) > rho(a))
            })
        })
        .map(|r| r.id)
        .collect();
    ids.sort_unstable();
    ids
}

/// Filter feasible records meeting the target, then take the cheapest (ties:
/// higher AvgPP, then lower id).
pub fn oracle_select(records: &[EvaluationRecord], target: f64) -> Option<usize> {
    let mut q: Vec<&EvaluationRecord> = records.iter().filter(|r| r.feasible && r.avg_pp >= target).collect();
    q.sort_by(|a, b| {
        a.cost
            .partial_cmp(&b.cost)
            .unwrap()
            .then(b.avg_pp.partial_cmp(&a.avg_pp).unwrap())
            .then(a.id.cmp(&b.id))
    });
    q.first().map(|r| r.id)
}

// ---------------------------------------------------------------- quantizer

/// 64-point geometric grid between `max / 2^b` and `max`.
pub fn oracle_grid(max_abs: f64, bits: u8) -> Vec<f64> {
    let lo = max_abs / 2f64.powi(bits as i32);
    (0..64).map(|i| lo * (max_abs / lo).powf(i as f64 / 63.0)).collect()
}

/// Nearest representable level at step `s`.
pub fn oracle_quantize(w: f64, bits: u8, s: f64) -> f64 {
    let levels: Vec<f64> = if bits == 2 {
        vec![-s, -s / 3.0, s / 3.0, s]
    } else {
        let q = (1i64 << (bits - 1)) - 1;
        (-q..=q).map(|k| k as f64 * s).collect()
    };
    let mut best = levels[0];
    for l in levels {
        if (l - w).abs() < (best - w).abs() {
            best = l;
        }
    }
    best
}

pub fn sse(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

// ---------------------------------------------------------------- instances

pub fn tiny_arch() -> ModelArchitecture {
    ModelArchitecture {
        style: Style::GptLike,
        n_layers: 2,
        hidden_dim: 32,
        n_heads: 4,
        vocab_size: 64,
        max_context: 32,
    }
}

/// A seeded 81-configuration instance: two of the three component types are
/// searched (each tied across both layers) over B = {4, 8, 16} and
/// P = {0, 0.25, 0.5}; the third stays uncompressed.
pub fn tiny_instance(seed: u64) -> (SearchSpace, PipelineEvaluator) {
    let arch = tiny_arch();
    let comps = [Component::AttnQkv, Component::AttnOut, Component::Ffn];
    let frozen = comps[(seed % 3) as usize];
    let groups: Vec<Vec<ComponentKey>> = comps
        .iter()
        .filter(|c| **c != frozen)
        .map(|c| (1..=2).map(|l| ComponentKey::new(l, *c)).collect())
        .collect();
    let fixed: BTreeMap<ComponentKey, Assignment> =
        (1..=2).map(|l| (ComponentKey::new(l, frozen), Assignment::IDENTITY)).collect();
    let space = SearchSpace::grouped(&arch, &[4, 8, 16], &[0.0, 0.25, 0.5], 0.5, groups, fixed).unwrap();
    let base = build_model(&arch, 100 + seed).unwrap();
    let corpus = EvaluationCorpus::synthesize(&base, 6, 6, 12, 200 + seed).unwrap();
    let ev = PipelineEvaluator::new(&base, &corpus, PropertySpec::default(), CostParams::default(), 0.5)
        .unwrap()
        .with_cache();
    (space, ev)
}

/// Cheapest feasible cost among records, if any.
pub fn best_feasible_cost(records: &[EvaluationRecord]) -> Option<f64> {
    records.iter().filter(|r| r.feasible).map(|r| r.cost).fold(None, |m, c| {
        Some(match m {
            Some(x) if x <= c => x,
            _ => c,
        })
    })
}
