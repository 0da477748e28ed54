//! Robustness-guided Bayesian optimization over compression configurations.

mod acquisition;
mod evaluate;
pub mod gp;
mod pareto;
mod record;
mod space;

use std::collections::{HashMap, HashSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

pub use acquisition::{
    acquisition, expected_improvement, feasibility_probability, normal_cdf, normal_pdf, prob_at_least,
    SIGMA_FLOOR,
};
pub use evaluate::{evaluate_config, ConfigEvaluator, PipelineEvaluator};
pub use gp::{fit_hyper, gp_fit, gp_fit_with, GpHyper, GpSurrogate};
pub use pareto::{pareto_front, ParetoPoint};
pub use record::{parse_log, read_log, render_log, write_log, EvaluationRecord};
pub use space::{GridPoint, SearchSpace, ENUMERATION_LIMIT};

use crate::cost::CostError;
use crate::model::{CompressionConfig, ModelError};
use crate::modes::ModeError;
use crate::signal::SignalError;
use crate::stl::StlError;

/// Random candidates drawn per proposal.
pub const POOL_SIZE: usize = 1024;
/// Default size of the initial design.
pub const DEFAULT_N_INIT: usize = 16;
/// Default evaluation budget, initial design included.
pub const DEFAULT_BUDGET: usize = 200;

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("invalid search space: {0}")]
    Space(String),
    #[error("n_init must be >= 2, got {0}")]
    InitTooSmall(usize),
    #[error("n_init {n_init} exceeds the {size} configurations in the space")]
    InitTooLarge { n_init: usize, size: u128 },
    #[error("budget {budget} is invalid: {reason}")]
    Budget { budget: usize, reason: String },
    #[error("every configuration has been evaluated")]
    Exhausted,
    #[error("gaussian process: {0}")]
    Gp(String),
    #[error("record log line {line}: {message}")]
    Log { line: usize, message: String },
    #[error("record log does not match this search: {0}")]
    LogMismatch(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Stl(#[from] StlError),
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error(transparent)]
    Cost(#[from] CostError),
    #[error(transparent)]
    Mode(#[from] ModeError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = SearchError> = std::result::Result<T, E>;

/// RNG for one stage of a search; stage 0 is the initial design, stage `k`
/// the proposal for evaluation `k`.
fn stage_rng(seed: u64, stage: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stage);
    rng
}

/// `min(16, |C|)`.
pub fn default_n_init(space: &SearchSpace) -> usize {
    space.size().min(DEFAULT_N_INIT as u128) as usize
}

/// Identity anchor followed by a Latin hypercube snapped to the grid, topped
/// up with random points after deduplication.
pub fn initial_points(space: &SearchSpace, n_init: usize, seed: u64) -> Result<Vec<GridPoint>> {
    if n_init < 2 {
        return Err(SearchError::InitTooSmall(n_init));
    }
    if n_init as u128 > space.size() {
        return Err(SearchError::InitTooLarge {
            n_init,
            size: space.size(),
        });
    }
    let mut rng = stage_rng(seed, 0);
    let dim = space.dim();
    let mut lhs = vec![vec![0usize; dim]; n_init];
    for d in 0..dim {
        let levels = if d % 2 == 0 {
            space.bits().len()
        } else {
            space.prunes().len()
        };
        let mut strata: Vec<usize> = (0..n_init).collect();
        strata.shuffle(&mut rng);
        for (i, s) in strata.into_iter().enumerate() {
            let u = (s as f64 + rng.random::<f64>()) / n_init as f64;
            lhs[i][d] = ((u * levels as f64) as usize).min(levels - 1);
        }
    }

    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(n_init);
    for p in std::iter::once(space.identity_point()).chain(lhs) {
        if out.len() < n_init && seen.insert(p.clone()) {
            out.push(p);
        }
    }
    if out.len() < n_init {
        if let Some(mut rest) = space.enumerate() {
            rest.retain(|p| !seen.contains(p));
            rest.shuffle(&mut rng);
            out.extend(rest.into_iter().take(n_init - out.len()));
        } else {
            while out.len() < n_init {
                let p = space.random_point(&mut rng);
                if seen.insert(p.clone()) {
                    out.push(p);
                }
            }
        }
    }
    Ok(out)
}

pub fn initial_design(space: &SearchSpace, n_init: usize, seed: u64) -> Result<Vec<CompressionConfig>> {
    Ok(initial_points(space, n_init, seed)?
        .iter()
        .map(|p| space.to_config(p))
        .collect())
}

/// Hyperparameters are refit on a prefix of the observations: all of them
/// while there are at most 16, then only every 8 evaluations. Between refits
/// the surrogates are conditioned on new data with the cached values.
pub fn refit_anchor(n: usize) -> usize {
    if n <= 16 {
        n
    } else {
        n - n % 8
    }
}

/// Observations collected so far plus cached surrogate hyperparameters.
pub struct OptimizerState<'a> {
    space: &'a SearchSpace,
    points: Vec<GridPoint>,
    records: Vec<EvaluationRecord>,
    hyper_cache: HashMap<usize, Vec<GpHyper>>,
}

impl<'a> OptimizerState<'a> {
    pub fn new(space: &'a SearchSpace) -> Self {
        Self {
            space,
            points: Vec::new(),
            records: Vec::new(),
            hyper_cache: HashMap::new(),
        }
    }

    pub fn observe(&mut self, record: EvaluationRecord) -> Result<()> {
        let p = self.space.point_of(&record.kappa).ok_or_else(|| {
            SearchError::LogMismatch(format!("record {} is not a point of the space", record.id))
        })?;
        if let Some(first) = self.records.first() {
            if first.rho_th.len() != record.rho_th.len() || record.rho_min.len() != record.rho_th.len() {
                return Err(SearchError::LogMismatch(format!(
                    "record {} has a different number of properties",
                    record.id
                )));
            }
        }
        self.points.push(p);
        self.records.push(record);
        Ok(())
    }

    pub fn records(&self) -> &[EvaluationRecord] {
        &self.records
    }

    /// Lowest-cost feasible point, else the one with the largest margin.
    fn incumbent(&self) -> Option<usize> {
        let feasible = (0..self.records.len())
            .filter(|&i| self.records[i].feasible)
            .min_by(|&a, &b| self.records[a].cost.total_cmp(&self.records[b].cost));
        feasible.or_else(|| {
            (0..self.records.len()).max_by(|&a, &b| {
                self.records[a]
                    .margin()
                    .total_cmp(&self.records[b].margin())
                    .then(b.cmp(&a))
            })
        })
    }

    fn surrogates(&mut self) -> Result<(GpSurrogate, Vec<GpSurrogate>)> {
        let x: Vec<Vec<f64>> = self.points.iter().map(|p| self.space.encode(p)).collect();
        let m = self.records[0].rho_th.len();
        let mut series = vec![self.records.iter().map(|r| r.cost).collect::<Vec<_>>()];
        for i in 0..m {
            series.push(self.records.iter().map(|r| r.rho_min[i]).collect());
        }
        let anchor = refit_anchor(x.len());
        if !self.hyper_cache.contains_key(&anchor) {
            let hypers = series
                .par_iter()
                .map(|y| fit_hyper(&x[..anchor], &y[..anchor]))
                .collect::<Result<Vec<_>>>()?;
            self.hyper_cache.insert(anchor, hypers);
        }
        let hypers = &self.hyper_cache[&anchor];
        let mut gps = series
            .iter()
            .zip(hypers)
            .map(|(y, h)| gp_fit_with(&x, y, h))
            .collect::<Result<Vec<_>>>()?;
        let cost = gps.remove(0);
        Ok((cost, gps))
    }

    fn candidate_pool(&self, rng: &mut ChaCha8Rng) -> Vec<GridPoint> {
        let evaluated: HashSet<&GridPoint> = self.points.iter().collect();
        if let Some(all) = self.space.enumerate() {
            return all.into_iter().filter(|p| !evaluated.contains(p)).collect();
        }
        let mut seen: HashSet<GridPoint> = HashSet::new();
        let mut pool = Vec::with_capacity(POOL_SIZE + 4 * self.space.dim());
        let mut attempts = 0;
        while pool.len() < POOL_SIZE && attempts < 8 * POOL_SIZE {
            attempts += 1;
            let p = self.space.random_point(rng);
            if !evaluated.contains(&p) && seen.insert(p.clone()) {
                pool.push(p);
            }
        }
        if let Some(i) = self.incumbent() {
            for q in self.space.neighbours(&self.points[i]) {
                if !evaluated.contains(&q) && seen.insert(q.clone()) {
                    pool.push(q);
                }
            }
        }
        pool
    }

    /// Next configuration to evaluate: the acquisition maximizer over the
    /// candidate pool, never one already evaluated. Deterministic in
    /// `(observations, seed, iteration)`.
    pub fn propose_next(&mut self, seed: u64, iteration: u64) -> Result<GridPoint> {
        if self.records.len() < 2 {
            return Err(SearchError::Gp("need at least 2 observations".into()));
        }
        let mut rng = stage_rng(seed, iteration + 1);
        let mut pool = self.candidate_pool(&mut rng);
        if pool.is_empty() {
            return Err(SearchError::Exhausted);
        }
        let (cost_gp, constraint_gps) = self.surrogates()?;
        let rho_th = self.records[0].rho_th.clone();
        let best = self
            .records
            .iter()
            .filter(|r| r.feasible)
            .map(|r| r.cost)
            .min_by(f64::total_cmp);
        let scores: Vec<(f64, f64)> = pool
            .par_iter()
            .map(|p| {
                let x = self.space.encode(p);
                let a = acquisition(&cost_gp, &constraint_gps, &x, best, &rho_th);
                (a, cost_gp.predict(&x).0)
            })
            .collect();
        let mut arg = 0;
        for (i, s) in scores.iter().enumerate().skip(1) {
            let b = scores[arg];
            if s.0 > b.0 || (s.0 == b.0 && s.1 < b.1) {
                arg = i;
            }
        }
        Ok(pool.swap_remove(arg))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchSettings {
    /// Total evaluations, initial design included.
    pub budget: usize,
    pub n_init: usize,
    pub seed: u64,
}

/// Evaluate `budget` configurations: the initial design, then one
/// acquisition-maximizing proposal at a time.
///
/// With `log`, every record is appended to a line-delimited log (rewritten
/// atomically) and an existing log is resumed rather than recomputed.
pub fn run_search<E: ConfigEvaluator + ?Sized>(
    space: &SearchSpace,
    evaluator: &E,
    settings: &SearchSettings,
    log: Option<&Path>,
) -> Result<Vec<EvaluationRecord>> {
    let SearchSettings { budget, n_init, seed } = *settings;
    if budget < n_init {
        return Err(SearchError::Budget {
            budget,
            reason: format!("smaller than n_init {n_init}"),
        });
    }
    if budget as u128 > space.size() {
        return Err(SearchError::Budget {
            budget,
            reason: format!("larger than the {} configurations in the space", space.size()),
        });
    }
    let design = initial_points(space, n_init, seed)?;

    let existing = match log {
        Some(path) if path.exists() => read_log(path)?,
        _ => Vec::new(),
    };
    let mut state = OptimizerState::new(space);
    for r in existing.into_iter().take(budget) {
        if r.id < n_init && space.point_of(&r.kappa).as_ref() != Some(&design[r.id]) {
            return Err(SearchError::LogMismatch(format!(
                "record {} differs from the initial design for seed {seed}",
                r.id
            )));
        }
        state.observe(r)?;
    }

    for k in state.records().len()..budget {
        let point = if k < n_init {
            design[k].clone()
        } else {
            state.propose_next(seed, k as u64)?
        };
        let record = evaluator.evaluate(k, &space.to_config(&point))?;
        state.observe(record)?;
        if let Some(path) = log {
            write_log(path, state.records())?;
        }
    }
    Ok(state.records)
}
