//! Expected improvement under constraints.

use statrs::function::erf::erfc;

use super::gp::GpSurrogate;

/// Standard deviations below this are treated as this.
pub const SIGMA_FLOOR: f64 = 1e-9;

pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

pub fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// EI for minimization below `best`.
pub fn expected_improvement(mu: f64, sigma: f64, best: f64) -> f64 {
    let sigma = sigma.max(SIGMA_FLOOR);
    let z = (best - mu) / sigma;
    ((best - mu) * normal_cdf(z) + sigma * normal_pdf(z)).max(0.0)
}

/// `P(X >= threshold)` for `X ~ N(mu, sigma^2)`.
pub fn prob_at_least(mu: f64, sigma: f64, threshold: f64) -> f64 {
    normal_cdf((mu - threshold) / sigma.max(SIGMA_FLOOR))
}

/// Probability that every constraint holds, under independent posteriors.
pub fn feasibility_probability(constraint_gps: &[GpSurrogate], x: &[f64], rho_th: &[f64]) -> f64 {
    constraint_gps
        .iter()
        .zip(rho_th)
        .map(|(gp, th)| {
            let (m, v) = gp.predict(x);
            prob_at_least(m, v.sqrt(), *th)
        })
        .product()
}

/// `EI(x) * P(feasible | x)`, or the feasibility probability alone when no
/// feasible cost has been observed.
pub fn acquisition(
    cost_gp: &GpSurrogate,
    constraint_gps: &[GpSurrogate],
    x: &[f64],
    best_feasible_cost: Option<f64>,
    rho_th: &[f64],
) -> f64 {
    let pf = feasibility_probability(constraint_gps, x, rho_th);
    match best_feasible_cost {
        Some(best) => {
            let (m, v) = cost_gp.predict(x);
            expected_improvement(m, v.sqrt(), best) * pf
        }
        None => pf,
    }
}
