//! A small decoder-only transformer with deterministic random weights.
//!
//! GPT-like layers use LayerNorm, learned positions, a fused QKV projection
//! and a GELU MLP. Llama-like layers use RMSNorm, rotary positions, separate
//! Q/K/V projections and a SwiGLU MLP. Weights are untrained: every property
//! compares a compressed model against this same base, so linguistic quality
//! of the base itself does not matter.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::compress::{compress_component, CompressionConfig};
use super::{Component, ComponentKey, ModelArchitecture, ModelError, Result, Style};

const NORM_EPS: f64 = 1e-5;
/// Scale of the output head relative to fan-in initialization; makes the
/// next-token distributions noticeably peaked.
const HEAD_GAIN: f64 = 2.0;
const ROPE_BASE: f64 = 10_000.0;

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceModel {
    arch: ModelArchitecture,
    seed: u64,
    token_embedding: DMatrix<f64>,
    /// Learned positions (GPT-like only).
    position_embedding: Option<DMatrix<f64>>,
    head: DMatrix<f64>,
    weights: BTreeMap<ComponentKey, DMatrix<f64>>,
}

/// Everything one forward pass over a token sequence exposes.
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// Row `i` is the next-token distribution after reading tokens `0..=i`.
    pub probs: DMatrix<f64>,
    /// Row `i` is the final-layer (post-norm) hidden state at position `i`.
    pub hidden: DMatrix<f64>,
    /// Per layer, the head-averaged causal attention matrix (`L x L`).
    pub attention: Vec<DMatrix<f64>>,
}

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize, std: f64) -> DMatrix<f64> {
    let dist = Normal::new(0.0, std).expect("positive std");
    // row-major fill so the stream order does not depend on nalgebra's layout
    let data: Vec<f64> = (0..rows * cols).map(|_| dist.sample(rng)).collect();
    DMatrix::from_row_slice(rows, cols, &data)
}

/// Builds the base model. Same `(arch, seed)`, same weights, bit for bit.
pub fn build_model(arch: &ModelArchitecture, seed: u64) -> Result<ReferenceModel> {
    arch.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = arch.hidden_dim;
    let token_embedding = gaussian(&mut rng, arch.vocab_size, d, 1.0);
    let position_embedding = match arch.style {
        Style::GptLike => Some(gaussian(&mut rng, arch.max_context, d, 0.5)),
        Style::LlamaLike => None,
    };
    let mut weights = BTreeMap::new();
    for key in arch.component_keys() {
        let (rows, cols) = arch.component_shape(key.component);
        let w = match key.component {
            Component::Ffn => {
                // fc is d x f with fan-in d; the stacked projection has fan-in f
                let f = arch.ffn_dim();
                let fc = gaussian(&mut rng, d, f, 1.0 / (d as f64).sqrt());
                let proj_t = gaussian(&mut rng, d, f, 1.0 / (f as f64).sqrt());
                let mut w = DMatrix::zeros(rows, cols);
                w.rows_mut(0, d).copy_from(&fc);
                w.rows_mut(d, d).copy_from(&proj_t);
                w
            }
            _ => gaussian(&mut rng, rows, cols, 1.0 / (rows as f64).sqrt()),
        };
        weights.insert(key, w);
    }
    let head = gaussian(&mut rng, d, arch.vocab_size, HEAD_GAIN / (d as f64).sqrt());
    Ok(ReferenceModel {
        arch: arch.clone(),
        seed,
        token_embedding,
        position_embedding,
        head,
        weights,
    })
}

fn layer_norm(x: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = x.clone();
    for mut row in out.row_iter_mut() {
        let n = row.len() as f64;
        let mean = row.sum() / n;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let inv = 1.0 / (var + NORM_EPS).sqrt();
        row.apply(|v| *v = (*v - mean) * inv);
    }
    out
}

fn rms_norm(x: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = x.clone();
    for mut row in out.row_iter_mut() {
        let n = row.len() as f64;
        let ms = row.iter().map(|v| v * v).sum::<f64>() / n;
        let inv = 1.0 / (ms + NORM_EPS).sqrt();
        row.apply(|v| *v *= inv);
    }
    out
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (0.797_884_560_802_865_4 * (x + 0.044_715 * x * x * x)).tanh())
}

fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

/// Rotates consecutive pairs of each head's slice by position-dependent angles.
fn apply_rope(x: &mut DMatrix<f64>, n_heads: usize, head_dim: usize) {
    for pos in 0..x.nrows() {
        for h in 0..n_heads {
            for i in 0..head_dim / 2 {
                let theta = pos as f64 / ROPE_BASE.powf(2.0 * i as f64 / head_dim as f64);
                let (sin, cos) = theta.sin_cos();
                let a = h * head_dim + 2 * i;
                let (x0, x1) = (x[(pos, a)], x[(pos, a + 1)]);
                x[(pos, a)] = x0 * cos - x1 * sin;
                x[(pos, a + 1)] = x0 * sin + x1 * cos;
            }
        }
    }
}

/// Causal multi-head attention. Returns the concatenated head outputs and the
/// head-averaged attention matrix.
fn attention(
    q: &DMatrix<f64>,
    k: &DMatrix<f64>,
    v: &DMatrix<f64>,
    n_heads: usize,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let len = q.nrows();
    let d = q.ncols();
    let hd = d / n_heads;
    let scale = 1.0 / (hd as f64).sqrt();
    let mut out = DMatrix::zeros(len, d);
    let mut avg = DMatrix::zeros(len, len);
    let mut row = vec![0.0; len];
    for h in 0..n_heads {
        let qh = q.columns(h * hd, hd);
        let kh = k.columns(h * hd, hd);
        let vh = v.columns(h * hd, hd);
        for p in 0..len {
            for (qpos, slot) in row.iter_mut().enumerate().take(p + 1) {
                *slot = qh.row(p).dot(&kh.row(qpos)) * scale;
            }
            softmax_in_place(&mut row[..=p]);
            for (qpos, &a) in row.iter().enumerate().take(p + 1) {
                avg[(p, qpos)] += a / n_heads as f64;
                for j in 0..hd {
                    out[(p, h * hd + j)] += a * vh[(qpos, j)];
                }
            }
        }
    }
    (out, avg)
}

impl ReferenceModel {
    pub fn arch(&self) -> &ModelArchitecture {
        &self.arch
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn weights(&self, key: &ComponentKey) -> Option<&DMatrix<f64>> {
        self.weights.get(key)
    }

    pub fn component_weights(&self) -> impl Iterator<Item = (&ComponentKey, &DMatrix<f64>)> {
        self.weights.iter()
    }

    /// `|W^{l,c}|` per component plus the exempt count.
    pub fn inventory(&self) -> crate::cost::ParamInventory {
        crate::cost::ParamInventory::new(
            self.weights.iter().map(|(k, w)| (*k, w.len())).collect(),
            self.arch.exempt_params(),
        )
    }

    /// A copy with every component pruned then quantized per `kappa`.
    /// Components are independent of each other.
    pub fn apply_config(&self, kappa: &CompressionConfig, p_max: f64) -> Result<ReferenceModel> {
        kappa.validate_for(&self.arch, p_max)?;
        let mut out = self.clone();
        for (key, w) in out.weights.iter_mut() {
            let a = kappa.get(key).expect("validated coverage");
            *w = compress_component(w, a, p_max)?;
        }
        Ok(out)
    }

    /// Runs the model over `tokens` (teacher forced, causal).
    pub fn forward(&self, tokens: &[usize]) -> Result<ForwardOutput> {
        let len = tokens.len();
        let arch = &self.arch;
        if len == 0 || len > arch.max_context {
            return Err(ModelError::Mismatch(format!(
                "sequence length {len} outside 1..={}",
                arch.max_context
            )));
        }
        if let Some(&bad) = tokens.iter().find(|&&t| t >= arch.vocab_size) {
            return Err(ModelError::Mismatch(format!(
                "token {bad} outside vocabulary of {}",
                arch.vocab_size
            )));
        }
        let d = arch.hidden_dim;
        let mut x = DMatrix::zeros(len, d);
        for (i, &t) in tokens.iter().enumerate() {
            let mut row = self.token_embedding.row(t).clone_owned();
            if let Some(pos) = &self.position_embedding {
                row += pos.row(i);
            }
            x.set_row(i, &row);
        }

        let mut attention_maps = Vec::with_capacity(arch.n_layers);
        for layer in 1..=arch.n_layers {
            let w = |c| &self.weights[&ComponentKey::new(layer, c)];
            match arch.style {
                Style::GptLike => {
                    let h = layer_norm(&x);
                    let qkv = &h * w(Component::AttnQkv);
                    let (q, k, v) = (
                        qkv.columns(0, d).clone_owned(),
                        qkv.columns(d, d).clone_owned(),
                        qkv.columns(2 * d, d).clone_owned(),
                    );
                    let (att, avg) = attention(&q, &k, &v, arch.n_heads);
                    x += att * w(Component::AttnOut);
                    attention_maps.push(avg);

                    let h = layer_norm(&x);
                    let ffn = w(Component::Ffn);
                    let hidden = (&h * ffn.rows(0, d)).map(gelu);
                    x += hidden * ffn.rows(d, d).transpose();
                }
                Style::LlamaLike => {
                    let h = rms_norm(&x);
                    let mut q = &h * w(Component::QProj);
                    let mut k = &h * w(Component::KProj);
                    let v = &h * w(Component::VProj);
                    apply_rope(&mut q, arch.n_heads, arch.head_dim());
                    apply_rope(&mut k, arch.n_heads, arch.head_dim());
                    let (att, avg) = attention(&q, &k, &v, arch.n_heads);
                    x += att * w(Component::AttnOut);
                    attention_maps.push(avg);

                    let h = rms_norm(&x);
                    let gate = (&h * w(Component::FfnGate)).map(silu);
                    let up = &h * w(Component::FfnUp);
                    x += gate.component_mul(&up) * w(Component::FfnDown);
                }
            }
        }

        let hidden = match arch.style {
            Style::GptLike => layer_norm(&x),
            Style::LlamaLike => rms_norm(&x),
        };
        let mut probs = &hidden * &self.head;
        for mut row in probs.row_iter_mut() {
            let mut v: Vec<f64> = row.iter().copied().collect();
            softmax_in_place(&mut v);
            row.copy_from(&DVector::from_vec(v).transpose());
        }
        Ok(ForwardOutput {
            probs,
            hidden,
            attention: attention_maps,
        })
    }
}
