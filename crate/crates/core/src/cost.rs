//! FLOPs and model-size estimates from a configuration alone.
//!
//! Only the weight matmuls of compressible components contribute FLOPs.
//! Exempt parameters (embeddings, norms, output head) count towards model
//! size at the reference precision. Sizes are in bytes, with 1 MB = 10^6 B.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ComponentKey, CompressionConfig};

#[derive(Debug, Error, PartialEq)]
pub enum CostError {
    #[error("no assignment for component {0}")]
    Uncovered(ComponentKey),
    #[error("invalid cost parameters: {0}")]
    InvalidParams(String),
    #[error("compressed FLOPs are zero")]
    ZeroFlops,
}

pub type Result<T, E = CostError> = std::result::Result<T, E>;

/// Parameter counts `|W^{l,c}|` plus the exempt count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamInventory {
    components: BTreeMap<ComponentKey, usize>,
    exempt: usize,
}

impl ParamInventory {
    pub fn new(components: BTreeMap<ComponentKey, usize>, exempt: usize) -> Self {
        Self { components, exempt }
    }

    pub fn components(&self) -> &BTreeMap<ComponentKey, usize> {
        &self.components
    }

    pub fn exempt(&self) -> usize {
        self.exempt
    }

    pub fn compressible(&self) -> usize {
        self.components.values().sum()
    }

    pub fn total(&self) -> usize {
        self.compressible() + self.exempt
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostParams {
    /// Representative sequence length `S`.
    pub seq_len: usize,
    pub b_ref: u8,
    /// Multiply-accumulate factor.
    pub mac: f64,
}

impl Default for CostParams {
    fn default() -> Self {
        Self {
            seq_len: 128,
            b_ref: 16,
            mac: 2.0,
        }
    }
}

impl CostParams {
    pub fn validate(&self) -> Result<()> {
        if self.seq_len < 1 {
            return Err(CostError::InvalidParams("seq_len must be >= 1".into()));
        }
        if self.b_ref < 1 {
            return Err(CostError::InvalidParams("b_ref must be >= 1".into()));
        }
        if !(self.mac > 0.0 && self.mac.is_finite()) {
            return Err(CostError::InvalidParams("mac must be > 0".into()));
        }
        Ok(())
    }
}

/// `C * sum |W| * S`.
pub fn flops_base(inv: &ParamInventory, params: &CostParams) -> f64 {
    params.mac * inv.compressible() as f64 * params.seq_len as f64
}

/// FLOPs contribution of one component.
pub fn component_flops(count: usize, bits: u8, prune: f64, params: &CostParams) -> f64 {
    params.mac
        * (1.0 - prune)
        * count as f64
        * params.seq_len as f64
        * (bits as f64 / params.b_ref as f64)
}

/// `C * sum (1 - p) |W| S b / b_ref`. This is the search cost `E`.
pub fn flops_compressed(
    inv: &ParamInventory,
    kappa: &CompressionConfig,
    params: &CostParams,
) -> Result<f64> {
    let mut total = 0.0;
    for (key, &count) in &inv.components {
        let a = kappa.get(key).ok_or(CostError::Uncovered(*key))?;
        total += component_flops(count, a.bits, a.prune, params);
    }
    Ok(total)
}

/// Bytes needed to store the weights; `None` means the uncompressed baseline.
pub fn model_size_bytes(
    inv: &ParamInventory,
    kappa: Option<&CompressionConfig>,
    params: &CostParams,
) -> Result<f64> {
    let b_ref = params.b_ref as f64;
    let mut total = inv.exempt as f64 * b_ref / 8.0;
    for (key, &count) in &inv.components {
        let (bits, prune) = match kappa {
            Some(k) => {
                let a = k.get(key).ok_or(CostError::Uncovered(*key))?;
                (a.bits as f64, a.prune)
            }
            None => (b_ref, 0.0),
        };
        total += (1.0 - prune) * count as f64 * bits / 8.0;
    }
    Ok(total)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub flops_base: f64,
    pub flops_compressed: f64,
    pub size_base_bytes: f64,
    pub size_compressed_bytes: f64,
    /// `flops_base / flops_compressed`.
    pub flops_reduction: f64,
    /// `100 * (1 - compressed / base)` on model size.
    pub compression_ratio: f64,
    pub size_base_mb: f64,
    pub size_compressed_mb: f64,
    pub gflops_per_token_base: f64,
    pub gflops_per_token_compressed: f64,
}

pub fn cost_report(
    inv: &ParamInventory,
    kappa: &CompressionConfig,
    params: &CostParams,
) -> Result<CostReport> {
    params.validate()?;
    let fb = flops_base(inv, params);
    let fc = flops_compressed(inv, kappa, params)?;
    if fc == 0.0 && fb != 0.0 {
        return Err(CostError::ZeroFlops);
    }
    let sb = model_size_bytes(inv, None, params)?;
    let sc = model_size_bytes(inv, Some(kappa), params)?;
    let per_token = params.seq_len as f64 * 1e9;
    Ok(CostReport {
        flops_base: fb,
        flops_compressed: fc,
        size_base_bytes: sb,
        size_compressed_bytes: sc,
        flops_reduction: if fc == 0.0 { 1.0 } else { fb / fc },
        compression_ratio: if sb == 0.0 { 0.0 } else { 100.0 * (1.0 - sc / sb) },
        size_base_mb: sb / 1e6,
        size_compressed_mb: sc / 1e6,
        gflops_per_token_base: fb / per_token,
        gflops_per_token_compressed: fc / per_token,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Assignment, Component};

    fn one(count: usize, exempt: usize) -> (ParamInventory, ComponentKey) {
        let key = ComponentKey::new(1, Component::Ffn);
        (ParamInventory::new([(key, count)].into(), exempt), key)
    }

    fn cfg(key: ComponentKey, bits: u8, prune: f64) -> CompressionConfig {
        CompressionConfig::from_map([(key, Assignment::new(bits, prune))].into())
    }

    fn params(seq_len: usize) -> CostParams {
        CostParams {
            seq_len,
            b_ref: 16,
            mac: 2.0,
        }
    }

    #[test]
    fn base_flops() {
        let (inv, _) = one(100, 0);
        assert_eq!(flops_base(&inv, &params(10)), 2000.0);
        assert_eq!(flops_base(&inv, &params(20)), 4000.0);
        let empty = ParamInventory::new(BTreeMap::new(), 0);
        assert_eq!(flops_base(&empty, &params(10)), 0.0);
    }

    #[test]
    fn compressed_flops() {
        let (inv, key) = one(100, 0);
        let p = params(10);
        assert_eq!(flops_compressed(&inv, &cfg(key, 16, 0.0), &p).unwrap(), 2000.0);
        assert_eq!(flops_compressed(&inv, &cfg(key, 8, 0.5), &p).unwrap(), 500.0);
        assert!(
            flops_compressed(&inv, &cfg(key, 8, 0.3), &p).unwrap()
                < flops_compressed(&inv, &cfg(key, 8, 0.2), &p).unwrap()
        );
        let other = ComponentKey::new(2, Component::Ffn);
        assert_eq!(
            flops_compressed(&inv, &cfg(other, 8, 0.0), &p),
            Err(CostError::Uncovered(key))
        );
    }

    #[test]
    fn sizes() {
        let inv = ParamInventory::new(BTreeMap::new(), 124_000_000);
        assert_eq!(model_size_bytes(&inv, None, &params(1)).unwrap(), 248_000_000.0);
        let (inv, key) = one(1000, 0);
        assert_eq!(
            model_size_bytes(&inv, Some(&cfg(key, 8, 0.5)), &params(1)).unwrap(),
            500.0
        );
        let empty = ParamInventory::new(BTreeMap::new(), 0);
        assert_eq!(model_size_bytes(&empty, None, &params(1)).unwrap(), 0.0);
    }

    #[test]
    fn reports() {
        let (inv, key) = one(4096, 0);
        let p = params(32);
        let id = cost_report(&inv, &cfg(key, 16, 0.0), &p).unwrap();
        assert_eq!(id.flops_reduction, 1.0);
        assert_eq!(id.compression_ratio, 0.0);
        let r = cost_report(&inv, &cfg(key, 8, 0.5), &p).unwrap();
        assert_eq!(r.flops_reduction, 4.0);
        assert_eq!(r.compression_ratio, 75.0);
        let r = cost_report(&inv, &cfg(key, 8, 0.0), &p).unwrap();
        assert_eq!(r.flops_reduction, 2.0);
    }
}
