//! Per-component compression operators: magnitude pruning, symmetric
//! step-size-calibrated quantization, and the 4-level stretched grid used at
//! 2 bits.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{ComponentKey, ModelArchitecture, ModelError, Result};

pub const MIN_BITS: u8 = 2;
pub const REFERENCE_BITS: u8 = 16;
/// Number of candidate step sizes scanned during calibration.
pub const CALIBRATION_POINTS: usize = 64;
/// Slack when turning `ratio * n` into a count, so 0.3 * 10 prunes 3.
const COUNT_SLACK: f64 = 1e-9;

/// Bit-width and pruning ratio applied to one component.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub bits: u8,
    pub prune: f64,
}

impl Assignment {
    pub const IDENTITY: Assignment = Assignment {
        bits: REFERENCE_BITS,
        prune: 0.0,
    };

    pub fn new(bits: u8, prune: f64) -> Self {
        Self { bits, prune }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct AssignmentEntry {
    layer: usize,
    component: super::Component,
    bits: u8,
    prune: f64,
}

/// Assignment of `(bits, prune)` to every compressible component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<AssignmentEntry>", into = "Vec<AssignmentEntry>")]
pub struct CompressionConfig {
    assignments: BTreeMap<ComponentKey, Assignment>,
}

impl TryFrom<Vec<AssignmentEntry>> for CompressionConfig {
    type Error = ModelError;

    fn try_from(entries: Vec<AssignmentEntry>) -> Result<Self> {
        let mut assignments = BTreeMap::new();
        for e in entries {
            let key = ComponentKey::new(e.layer, e.component);
            if assignments
                .insert(key, Assignment::new(e.bits, e.prune))
                .is_some()
            {
                return Err(ModelError::Coverage(format!("{key} assigned twice")));
            }
        }
        Ok(Self { assignments })
    }
}

impl From<CompressionConfig> for Vec<AssignmentEntry> {
    fn from(c: CompressionConfig) -> Self {
        c.assignments
            .into_iter()
            .map(|(k, a)| AssignmentEntry {
                layer: k.layer,
                component: k.component,
                bits: a.bits,
                prune: a.prune,
            })
            .collect()
    }
}

impl CompressionConfig {
    pub fn from_map(assignments: BTreeMap<ComponentKey, Assignment>) -> Self {
        Self { assignments }
    }

    /// The same assignment everywhere.
    pub fn uniform(arch: &ModelArchitecture, a: Assignment) -> Self {
        Self {
            assignments: arch.component_keys().into_iter().map(|k| (k, a)).collect(),
        }
    }

    /// Reference precision, no pruning.
    pub fn identity(arch: &ModelArchitecture) -> Self {
        Self::uniform(arch, Assignment::IDENTITY)
    }

    pub fn get(&self, key: &ComponentKey) -> Option<Assignment> {
        self.assignments.get(key).copied()
    }

    pub fn set(&mut self, key: ComponentKey, a: Assignment) {
        self.assignments.insert(key, a);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ComponentKey, &Assignment)> {
        self.assignments.iter()
    }

    pub fn len(&self) -> usize {
        self.assignments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignments.is_empty()
    }

    /// Checks the config covers exactly the architecture's components and
    /// that every value is in range.
    pub fn validate_for(&self, arch: &ModelArchitecture, p_max: f64) -> Result<()> {
        let keys = arch.component_keys();
        for k in &keys {
            if !self.assignments.contains_key(k) {
                return Err(ModelError::Coverage(format!("no assignment for {k}")));
            }
        }
        if let Some(extra) = self.assignments.keys().find(|k| !keys.contains(k)) {
            return Err(ModelError::Coverage(format!(
                "{extra} is not a component of this architecture"
            )));
        }
        for a in self.assignments.values() {
            check_bits(a.bits)?;
            check_ratio(a.prune, p_max)?;
        }
        Ok(())
    }

    pub fn mean_bits(&self) -> f64 {
        mean(self.assignments.values().map(|a| a.bits as f64))
    }

    pub fn mean_prune(&self) -> f64 {
        mean(self.assignments.values().map(|a| a.prune))
    }
}

fn mean(it: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = it.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

fn check_bits(bits: u8) -> Result<()> {
    if !(MIN_BITS..=REFERENCE_BITS).contains(&bits) {
        return Err(ModelError::BitsOutOfRange(bits));
    }
    Ok(())
}

fn check_ratio(ratio: f64, p_max: f64) -> Result<()> {
    if !(0.0..=p_max).contains(&ratio) {
        return Err(ModelError::RatioOutOfRange { ratio, p_max });
    }
    Ok(())
}

/// Number of weights pruned at `ratio` out of `n`: `floor(ratio * n)`.
pub fn prune_count(ratio: f64, n: usize) -> usize {
    ((ratio * n as f64 + COUNT_SLACK).floor() as usize).min(n)
}

/// Zeroes the `floor(ratio * |W|)` smallest-magnitude weights. Ties in
/// magnitude go to the lower storage index. Returns the pruned matrix and the
/// mask of zeroed positions.
pub fn prune_with_mask(w: &DMatrix<f64>, ratio: f64, p_max: f64) -> Result<(DMatrix<f64>, Vec<bool>)> {
    check_ratio(ratio, p_max)?;
    let n = w.len();
    let k = prune_count(ratio, n);
    let mut mask = vec![false; n];
    let mut out = w.clone();
    if k == 0 {
        return Ok((out, mask));
    }
    let data = w.as_slice();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| data[i].abs().total_cmp(&data[j].abs()).then(i.cmp(&j)));
    let slice = out.as_mut_slice();
    for &i in &order[..k] {
        slice[i] = 0.0;
        mask[i] = true;
    }
    Ok((out, mask))
}

pub fn prune_component(w: &DMatrix<f64>, ratio: f64, p_max: f64) -> Result<DMatrix<f64>> {
    prune_with_mask(w, ratio, p_max).map(|(m, _)| m)
}

/// Geometric grid of `CALIBRATION_POINTS` step sizes over
/// `[max_abs / 2^bits, max_abs]`.
pub fn calibration_grid(max_abs: f64, bits: u8) -> Vec<f64> {
    let lo = max_abs / 2f64.powi(bits as i32);
    let ratio = max_abs / lo;
    (0..CALIBRATION_POINTS)
        .map(|i| lo * ratio.powf(i as f64 / (CALIBRATION_POINTS - 1) as f64))
        .collect()
}

/// Maps one weight onto the quantization grid of step `scale`.
pub fn quantize_value(w: f64, bits: u8, scale: f64) -> f64 {
    if bits <= MIN_BITS {
        // stretched 4-level grid {-1, -1/3, 1/3, 1} * scale
        let u = w / scale;
        let level = if u >= 2.0 / 3.0 {
            1.0
        } else if u >= 0.0 {
            1.0 / 3.0
        } else if u >= -2.0 / 3.0 {
            -1.0 / 3.0
        } else {
            -1.0
        };
        level * scale
    } else {
        let q_max = ((1u32 << (bits - 1)) - 1) as f64;
        (w / scale).round().clamp(-q_max, q_max) * scale
    }
}

fn squared_error(data: &[f64], bits: u8, scale: f64) -> f64 {
    data.iter()
        .map(|&w| {
            let e = quantize_value(w, bits, scale) - w;
            e * e
        })
        .sum()
}

/// Step size from the calibration grid with the lowest squared error (first
/// one on ties). `None` when every weight is zero.
pub fn calibrate_scale(data: &[f64], bits: u8) -> Option<f64> {
    let max_abs = data.iter().fold(0.0f64, |m, w| m.max(w.abs()));
    if max_abs == 0.0 {
        return None;
    }
    let mut best: Option<(f64, f64)> = None;
    for s in calibration_grid(max_abs, bits) {
        let err = squared_error(data, bits, s);
        if best.is_none_or(|(_, e)| err < e) {
            best = Some((s, err));
        }
    }
    best.map(|(s, _)| s)
}

/// Quantizes a weight matrix to `bits`. 16 bits is the reference precision
/// and returns the input unchanged.
pub fn quantize_component(w: &DMatrix<f64>, bits: u8) -> Result<DMatrix<f64>> {
    check_bits(bits)?;
    if bits == REFERENCE_BITS {
        return Ok(w.clone());
    }
    let Some(scale) = calibrate_scale(w.as_slice(), bits) else {
        return Ok(w.clone());
    };
    Ok(w.map(|v| quantize_value(v, bits, scale)))
}

/// Prune, then quantize, then restore the pruned zeros (the 2-bit grid has
/// no zero level).
pub fn compress_component(w: &DMatrix<f64>, a: Assignment, p_max: f64) -> Result<DMatrix<f64>> {
    let (pruned, mask) = prune_with_mask(w, a.prune, p_max)?;
    let mut q = quantize_component(&pruned, a.bits)?;
    for (v, &m) in q.as_mut_slice().iter_mut().zip(&mask) {
        if m {
            *v = 0.0;
        }
    }
    Ok(q)
}
