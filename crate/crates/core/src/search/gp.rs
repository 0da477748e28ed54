//! Exact Gaussian-process regression with a squared-exponential ARD kernel.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::{Result, SearchError};

pub const JITTER_START: f64 = 1e-6;
pub const JITTER_CAP: f64 = 1e-2;
/// Posterior variances are floored here (standardized scale).
pub const VARIANCE_FLOOR: f64 = 1e-12;

const LENGTH_GRID: [f64; 5] = [0.1, 0.25, 0.5, 1.0, 2.0];
const SIGNAL_GRID: [f64; 3] = [0.5, 1.0, 2.0];
const REFINE_FACTORS: [f64; 4] = [0.25, 0.5, 2.0, 4.0];

#[derive(Debug, Clone, PartialEq)]
pub struct GpHyper {
    pub length_scales: Vec<f64>,
    pub signal_var: f64,
}

impl GpHyper {
    pub fn isotropic(dim: usize, length: f64, signal_var: f64) -> Self {
        Self {
            length_scales: vec![length; dim],
            signal_var,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GpSurrogate {
    x: Vec<Vec<f64>>,
    y_mean: f64,
    y_scale: f64,
    hyper: GpHyper,
    jitter: f64,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
    log_marginal: f64,
}

fn kernel(a: &[f64], b: &[f64], h: &GpHyper) -> f64 {
    let r2: f64 = a
        .iter()
        .zip(b)
        .zip(&h.length_scales)
        .map(|((x, y), l)| ((x - y) / l).powi(2))
        .sum();
    h.signal_var * (-0.5 * r2).exp()
}

/// Population mean and standard deviation; a degenerate spread maps to 1.
fn standardize(y: &[f64]) -> (f64, f64) {
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt();
    (mean, if sd > 1e-12 { sd } else { 1.0 })
}

impl GpSurrogate {
    pub fn hyper(&self) -> &GpHyper {
        &self.hyper
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn log_marginal_likelihood(&self) -> f64 {
        self.log_marginal
    }

    pub fn n_observations(&self) -> usize {
        self.x.len()
    }

    /// Posterior mean and variance on the standardized scale.
    pub fn predict_standardized(&self, x: &[f64]) -> (f64, f64) {
        let k: DVector<f64> = DVector::from_iterator(self.x.len(), self.x.iter().map(|xi| kernel(xi, x, &self.hyper)));
        let mean = k.dot(&self.alpha);
        let v = self.chol.l().solve_lower_triangular(&k).expect("triangular factor is invertible");
        let var = (self.hyper.signal_var - v.norm_squared()).max(VARIANCE_FLOOR);
        (mean, var)
    }

    /// Posterior mean and variance in the units of the observations.
    pub fn predict(&self, x: &[f64]) -> (f64, f64) {
        let (m, v) = self.predict_standardized(x);
        (self.y_mean + self.y_scale * m, v * self.y_scale * self.y_scale)
    }

    /// Standardize `y` the same way [`gp_fit`] does.
    pub fn standardized_targets(y: &[f64]) -> Vec<f64> {
        let (m, s) = standardize(y);
        y.iter().map(|v| (v - m) / s).collect()
    }
}

/// Fit with fixed hyperparameters; jitter escalates from [`JITTER_START`] by
/// factors of 10 until the kernel matrix factorizes.
pub fn gp_fit_with(x: &[Vec<f64>], y: &[f64], hyper: &GpHyper) -> Result<GpSurrogate> {
    if x.len() < 2 || x.len() != y.len() {
        return Err(SearchError::Gp(format!(
            "need >= 2 matching observations, got {} inputs and {} targets",
            x.len(),
            y.len()
        )));
    }
    if let Some(bad) = x.iter().find(|xi| xi.len() != hyper.length_scales.len()) {
        return Err(SearchError::Gp(format!(
            "input of dimension {} but {} length scales",
            bad.len(),
            hyper.length_scales.len()
        )));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(SearchError::Gp("non-finite target".into()));
    }
    let n = x.len();
    let (y_mean, y_scale) = standardize(y);
    let ys = DVector::from_iterator(n, y.iter().map(|v| (v - y_mean) / y_scale));
    let k = DMatrix::from_fn(n, n, |i, j| kernel(&x[i], &x[j], hyper));

    let mut jitter = JITTER_START;
    loop {
        let mut kj = k.clone();
        for i in 0..n {
            kj[(i, i)] += jitter;
        }
        if let Some(chol) = kj.cholesky() {
            let alpha = chol.solve(&ys);
            let log_det: f64 = chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>() * 2.0;
            let log_marginal =
                -0.5 * ys.dot(&alpha) - 0.5 * log_det - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
            return Ok(GpSurrogate {
                x: x.to_vec(),
                y_mean,
                y_scale,
                hyper: hyper.clone(),
                jitter,
                chol,
                alpha,
                log_marginal,
            });
        }
        jitter *= 10.0;
        if jitter > JITTER_CAP * (1.0 + 1e-9) {
            return Err(SearchError::Gp("kernel matrix is singular at the jitter cap".into()));
        }
    }
}

/// Marginal-likelihood hyperparameter search: a shared length scale and
/// signal variance from a fixed grid, then one coordinate pass rescaling each
/// length scale.
pub fn fit_hyper(x: &[Vec<f64>], y: &[f64]) -> Result<GpHyper> {
    let dim = x.first().map_or(0, Vec::len);
    let score = |h: &GpHyper| gp_fit_with(x, y, h).map(|g| g.log_marginal);
    let mut best: Option<(f64, GpHyper)> = None;
    let consider = |h: GpHyper, best: &mut Option<(f64, GpHyper)>| -> Result<()> {
        let s = score(&h)?;
        if s.is_finite() && best.as_ref().is_none_or(|(b, _)| s > *b) {
            *best = Some((s, h));
        }
        Ok(())
    };
    for &l in &LENGTH_GRID {
        for &s in &SIGNAL_GRID {
            consider(GpHyper::isotropic(dim, l, s), &mut best)?;
        }
    }
    let Some((_, mut h)) = best.clone() else {
        return Err(SearchError::Gp("no finite marginal likelihood on the grid".into()));
    };
    for d in 0..dim {
        let base = h.length_scales[d];
        for f in REFINE_FACTORS {
            let mut cand = h.clone();
            cand.length_scales[d] = base * f;
            consider(cand, &mut best)?;
        }
        h = best.as_ref().expect("set above").1.clone();
    }
    Ok(h)
}

/// [`fit_hyper`] followed by [`gp_fit_with`].
pub fn gp_fit(x: &[Vec<f64>], y: &[f64]) -> Result<GpSurrogate> {
    let h = fit_hyper(x, y)?;
    gp_fit_with(x, y, &h)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interpolates_training_points() {
        let x: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64 / 5.0, (i * i % 5) as f64 / 4.0]).collect();
        let y: Vec<f64> = x.iter().map(|p| (3.0 * p[0]).sin() + p[1]).collect();
        let gp = gp_fit_with(&x, &y, &GpHyper::isotropic(2, 0.25, 1.0)).unwrap();
        let ys = GpSurrogate::standardized_targets(&y);
        for (xi, yi) in x.iter().zip(&ys) {
            let (m, v) = gp.predict_standardized(xi);
            assert!((m - yi).abs() < 3.0 * gp.jitter(), "{m} vs {yi}");
            assert!(v >= 0.0);
        }
    }

    #[test]
    fn constant_data() {
        let x = vec![vec![0.0], vec![1.0]];
        let gp = gp_fit(&x, &[2.5, 2.5]).unwrap();
        let (m, _) = gp.predict(&[0.5]);
        assert!((m - 2.5).abs() < 1e-9);
    }

    #[test]
    fn variance_grows_away_from_data() {
        let x = vec![vec![0.0, 0.0], vec![0.2, 0.1], vec![0.1, 0.3]];
        let gp = gp_fit(&x, &[1.0, 2.0, 0.5]).unwrap();
        let (_, near) = gp.predict(&[0.0, 0.0]);
        let (_, far) = gp.predict(&[5.0, 5.0]);
        assert!(near <= far);
    }

    #[test]
    fn duplicate_inputs_conflicting_values() {
        // Closed form: K = s*[[1,1],[1,1]] + jI, k* = s*[1,1], mean = k*^T K^{-1} y.
        let h = GpHyper::isotropic(1, 1.0, 1.0);
        let x = vec![vec![0.3], vec![0.3]];
        let gp = gp_fit_with(&x, &[1.0, 3.0], &h).unwrap();
        let (m, _) = gp.predict(&[0.3]);
        assert!((m - 2.0).abs() < 1e-9);
        let ys = [-1.0, 1.0];
        let j = gp.jitter();
        let s = h.signal_var;
        let det = (s + j) * (s + j) - s * s;
        let inv = [[(s + j) / det, -s / det], [-s / det, (s + j) / det]];
        let alpha = [inv[0][0] * ys[0] + inv[0][1] * ys[1], inv[1][0] * ys[0] + inv[1][1] * ys[1]];
        let expected = s * alpha[0] + s * alpha[1];
        assert!((gp.predict_standardized(&[0.3]).0 - expected).abs() < 1e-9);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(gp_fit(&[vec![0.0]], &[1.0]).is_err());
        assert!(gp_fit(&[vec![0.0], vec![1.0]], &[1.0, f64::NAN]).is_err());
    }
}
