use serde::{Deserialize, Serialize};

use super::EvaluationRecord;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoPoint {
    pub record: EvaluationRecord,
    pub rho_overall: f64,
}

/// Non-dominated records under (minimize cost, maximize overall robustness),
/// sorted by cost then id. Exact duplicates are all kept.
pub fn pareto_front(records: &[EvaluationRecord], feasible_only: bool) -> Vec<ParetoPoint> {
    let mut pts: Vec<ParetoPoint> = records
        .iter()
        .filter(|r| !feasible_only || r.feasible)
        .map(|r| ParetoPoint {
            rho_overall: r.rho_overall(),
            record: r.clone(),
        })
        .collect();
    pts.sort_by(|a, b| {
        a.record
            .cost
            .total_cmp(&b.record.cost)
            .then(a.record.id.cmp(&b.record.id))
    });

    let mut front = Vec::new();
    let mut best_before: Option<f64> = None;
    let mut i = 0;
    while i < pts.len() {
        let mut j = i;
        while j < pts.len() && pts[j].record.cost == pts[i].record.cost {
            j += 1;
        }
        let group_max = pts[i..j]
            .iter()
            .map(|p| p.rho_overall)
            .fold(f64::NEG_INFINITY, f64::max);
        if best_before.is_none_or(|b| group_max > b) {
            front.extend(pts[i..j].iter().filter(|p| p.rho_overall == group_max).cloned());
            best_before = Some(group_max);
        }
        i = j;
    }
    front
}
