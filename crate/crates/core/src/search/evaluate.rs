use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use super::{EvaluationRecord, Result};
use crate::cost::{flops_compressed, CostParams, ParamInventory};
use crate::model::{CompressionConfig, EvaluationCorpus, ReferenceModel, SignalGenerator};
use crate::modes::preservation_scores;
use crate::signal::SignalBundle;
use crate::stl::{check_feasibility, evaluate_properties, Formula, PropertySpec, RobustnessThresholds};

/// Anything that turns a configuration into a record.
pub trait ConfigEvaluator {
    fn evaluate(&self, id: usize, kappa: &CompressionConfig) -> Result<EvaluationRecord>;
}

/// Compress, run paired inference, score against a property spec.
///
/// Signal bundles depend only on the configuration, so they are cached and
/// shared between evaluators derived with [`with_spec`](Self::with_spec).
#[derive(Clone)]
pub struct PipelineEvaluator {
    generator: Arc<SignalGenerator>,
    inventory: ParamInventory,
    cost_params: CostParams,
    p_max: f64,
    spec: PropertySpec,
    formulas: Vec<(String, Formula)>,
    rho_th: RobustnessThresholds,
    cache: Option<Arc<Mutex<HashMap<String, Arc<SignalBundle>>>>>,
}

impl PipelineEvaluator {
    pub fn new(
        base: &ReferenceModel,
        corpus: &EvaluationCorpus,
        spec: PropertySpec,
        cost_params: CostParams,
        p_max: f64,
    ) -> Result<Self> {
        let generator = Arc::new(SignalGenerator::new(base, corpus)?);
        Self::from_generator(generator, spec, cost_params, p_max)
    }

    pub fn from_generator(
        generator: Arc<SignalGenerator>,
        spec: PropertySpec,
        cost_params: CostParams,
        p_max: f64,
    ) -> Result<Self> {
        spec.validate()?;
        cost_params.validate()?;
        let formulas = spec.formulas(generator.base().arch().n_layers);
        let rho_th = spec.robustness_thresholds()?;
        Ok(Self {
            inventory: generator.base().inventory(),
            generator,
            cost_params,
            p_max,
            spec,
            formulas,
            rho_th,
            cache: None,
        })
    }

    /// Keep every simulated bundle in memory.
    pub fn with_cache(mut self) -> Self {
        self.cache = Some(Arc::default());
        self
    }

    /// Same model, corpus and cache under another spec.
    pub fn with_spec(&self, spec: PropertySpec) -> Result<Self> {
        let mut e = Self::from_generator(self.generator.clone(), spec, self.cost_params, self.p_max)?;
        e.cache = self.cache.clone();
        Ok(e)
    }

    pub fn spec(&self) -> &PropertySpec {
        &self.spec
    }

    pub fn rho_th(&self) -> &RobustnessThresholds {
        &self.rho_th
    }

    pub fn inventory(&self) -> &ParamInventory {
        &self.inventory
    }

    pub fn generator(&self) -> &SignalGenerator {
        &self.generator
    }

    pub fn simulate(&self, kappa: &CompressionConfig) -> Result<Arc<SignalBundle>> {
        let key = match &self.cache {
            Some(cache) => {
                let key = serde_json::to_string(kappa).expect("configs always serialize");
                if let Some(b) = cache.lock().expect("cache lock").get(&key) {
                    return Ok(b.clone());
                }
                Some(key)
            }
            None => None,
        };
        let compressed = self.generator.base().apply_config(kappa, self.p_max)?;
        let bundle = Arc::new(self.generator.generate(&compressed)?);
        if let (Some(cache), Some(key)) = (&self.cache, key) {
            cache.lock().expect("cache lock").insert(key, bundle.clone());
        }
        Ok(bundle)
    }

    pub fn score(&self, id: usize, kappa: &CompressionConfig, bundle: &SignalBundle) -> Result<EvaluationRecord> {
        let rob = evaluate_properties(&self.formulas, bundle)?;
        let feasible = check_feasibility(&rob.per_property, &self.rho_th)?;
        let ps = preservation_scores(bundle, &self.spec.thresholds)?;
        Ok(EvaluationRecord {
            id,
            kappa: kappa.clone(),
            cost: flops_compressed(&self.inventory, kappa, &self.cost_params)?,
            property_names: rob.names,
            rho_min: rob.per_property,
            rho_th: self.rho_th.as_slice().to_vec(),
            feasible,
            avg_pp: ps.avg_pp,
            ps: ps.mean.to_vec(),
        })
    }
}

impl ConfigEvaluator for PipelineEvaluator {
    fn evaluate(&self, id: usize, kappa: &CompressionConfig) -> Result<EvaluationRecord> {
        let bundle = self.simulate(kappa)?;
        self.score(id, kappa, &bundle)
    }
}

/// One-shot evaluation of a single configuration.
pub fn evaluate_config(
    kappa: &CompressionConfig,
    base: &ReferenceModel,
    corpus: &EvaluationCorpus,
    spec: &PropertySpec,
    cost_params: &CostParams,
    p_max: f64,
) -> Result<EvaluationRecord> {
    PipelineEvaluator::new(base, corpus, spec.clone(), *cost_params, p_max)?.evaluate(0, kappa)
}
