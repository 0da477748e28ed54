//! Synthetic evaluation corpus and paired base/compressed inference.

use std::sync::Arc;

use nalgebra::{DMatrix, RowDVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{ForwardOutput, ModelError, ReferenceModel, Result};
use crate::signal::{builtin_channels, InferenceSignal, SignalBundle};

/// Guards the factual-ratio denominator.
pub const EPS_DIV: f64 = 1e-9;
/// Upper clamp on the factual ratio.
pub const RATIO_MAX: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prompt {
    pub id: String,
    pub tokens: Vec<usize>,
    /// `correct[t - 1]` is the reference token for step `t`.
    pub correct: Vec<usize>,
}

impl Prompt {
    pub fn horizon(&self) -> usize {
        self.correct.len()
    }

    /// Prompt followed by the teacher-forced continuation (the last
    /// reference token is never consumed).
    pub fn sequence(&self) -> Vec<usize> {
        let mut seq = self.tokens.clone();
        seq.extend_from_slice(&self.correct[..self.correct.len().saturating_sub(1)]);
        seq
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationCorpus {
    pub prompts: Vec<Prompt>,
    pub seed: u64,
}

impl EvaluationCorpus {
    /// Uniform random prompts; reference tokens are the base model's greedy
    /// continuation (ties to the lowest token id).
    pub fn synthesize(
        base: &ReferenceModel,
        n_prompts: usize,
        prompt_len: usize,
        horizon: usize,
        seed: u64,
    ) -> Result<Self> {
        let arch = base.arch();
        if n_prompts == 0 || prompt_len == 0 || horizon == 0 {
            return Err(ModelError::Corpus(
                "n_prompts, prompt_len and horizon must all be >= 1".into(),
            ));
        }
        if prompt_len + horizon - 1 > arch.max_context {
            return Err(ModelError::Corpus(format!(
                "prompt_len + horizon - 1 = {} exceeds max_context {}",
                prompt_len + horizon - 1,
                arch.max_context
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut prompts = Vec::with_capacity(n_prompts);
        for i in 0..n_prompts {
            let tokens: Vec<usize> = (0..prompt_len)
                .map(|_| rng.random_range(0..arch.vocab_size))
                .collect();
            let mut seq = tokens.clone();
            let mut correct = Vec::with_capacity(horizon);
            for _ in 0..horizon {
                let out = base.forward(&seq)?;
                let last = out.probs.row(seq.len() - 1);
                let next = argmax(last.iter().copied());
                correct.push(next);
                seq.push(next);
            }
            prompts.push(Prompt {
                id: format!("p{i:03}"),
                tokens,
                correct,
            });
        }
        Ok(Self { prompts, seed })
    }

    pub fn validate(&self, base: &ReferenceModel) -> Result<()> {
        let arch = base.arch();
        if self.prompts.is_empty() {
            return Err(ModelError::Corpus("empty corpus".into()));
        }
        for p in &self.prompts {
            if p.tokens.is_empty() || p.correct.is_empty() {
                return Err(ModelError::Corpus(format!("prompt {} is empty", p.id)));
            }
            if p.tokens.iter().chain(&p.correct).any(|t| *t >= arch.vocab_size) {
                return Err(ModelError::Corpus(format!(
                    "prompt {} has tokens outside the vocabulary",
                    p.id
                )));
            }
            if p.tokens.len() + p.horizon() - 1 > arch.max_context {
                return Err(ModelError::Corpus(format!(
                    "prompt {} needs {} positions, max_context is {}",
                    p.id,
                    p.tokens.len() + p.horizon() - 1,
                    arch.max_context
                )));
            }
        }
        Ok(())
    }
}

fn argmax(it: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in it.enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

/// Base-2 Jensen-Shannon divergence, in `[0, 1]`.
pub fn jensen_shannon(p: &[f64], q: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (&a, &b) in p.iter().zip(q) {
        let m = 0.5 * (a + b);
        if a > 0.0 {
            acc += 0.5 * a * (a / m).log2();
        }
        if b > 0.0 {
            acc += 0.5 * b * (b / m).log2();
        }
    }
    acc.clamp(0.0, 1.0)
}

/// Cosine similarity; two zero vectors count as identical, one zero vector
/// as orthogonal.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 && nb == 0.0 {
        return 1.0;
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0)
}

fn row_vec(m: &DMatrix<f64>, i: usize) -> Vec<f64> {
    let r: RowDVector<f64> = m.row(i).clone_owned();
    r.iter().copied().collect()
}

/// Base-model forward passes over a corpus, computed once and reused for
/// every compressed model compared against it.
pub struct SignalGenerator {
    base: ReferenceModel,
    corpus: EvaluationCorpus,
    base_runs: Vec<ForwardOutput>,
    channels: Arc<Vec<String>>,
}

impl SignalGenerator {
    pub fn new(base: &ReferenceModel, corpus: &EvaluationCorpus) -> Result<Self> {
        corpus.validate(base)?;
        let base_runs = corpus
            .prompts
            .par_iter()
            .map(|p| base.forward(&p.sequence()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            base: base.clone(),
            corpus: corpus.clone(),
            base_runs,
            channels: Arc::new(builtin_channels(base.arch().n_layers)),
        })
    }

    pub fn base(&self) -> &ReferenceModel {
        &self.base
    }

    pub fn corpus(&self) -> &EvaluationCorpus {
        &self.corpus
    }

    /// One signal per prompt, in corpus order.
    pub fn generate(&self, compressed: &ReferenceModel) -> Result<SignalBundle> {
        if compressed.arch() != self.base.arch() {
            return Err(ModelError::Mismatch(
                "base and compressed architectures differ".into(),
            ));
        }
        let n_layers = self.base.arch().n_layers;
        let signals = self
            .corpus
            .prompts
            .par_iter()
            .zip(self.base_runs.par_iter())
            .map(|(prompt, base_run)| {
                let comp_run = compressed.forward(&prompt.sequence())?;
                let prompt_len = prompt.tokens.len();
                let rows: Vec<Vec<f64>> = (1..=prompt.horizon())
                    .map(|t| {
                        let n = prompt_len + t - 1;
                        let pos = n - 1;
                        let pb = row_vec(&base_run.probs, pos);
                        let pc = row_vec(&comp_run.probs, pos);
                        let mut row = Vec::with_capacity(n_layers + 3);
                        row.push(jensen_shannon(&pb, &pc));
                        for l in 0..n_layers {
                            let ab = base_run.attention[l].view((0, 0), (n, n));
                            let ac = comp_run.attention[l].view((0, 0), (n, n));
                            let ab: Vec<f64> = ab.iter().copied().collect();
                            let ac: Vec<f64> = ac.iter().copied().collect();
                            row.push(cosine_similarity(&ab, &ac));
                        }
                        row.push(cosine_similarity(
                            &row_vec(&base_run.hidden, pos),
                            &row_vec(&comp_run.hidden, pos),
                        ));
                        let y = prompt.correct[t - 1];
                        row.push((pc[y] / (pb[y] + EPS_DIV)).min(RATIO_MAX));
                        row
                    })
                    .collect();
                InferenceSignal::with_shared_channels(
                    prompt.id.clone(),
                    self.channels.clone(),
                    rows,
                )
                .map_err(|e| ModelError::Mismatch(e.to_string()))
            })
            .collect::<Result<Vec<_>>>()?;
        SignalBundle::new(
            format!("corpus-{}", self.corpus.seed),
            self.base.arch().max_context,
            (*self.channels).clone(),
            signals,
        )
        .map_err(|e| ModelError::Mismatch(e.to_string()))
    }
}

/// Paired inference of `base` and `compressed` over `corpus`.
pub fn generate_signals(
    base: &ReferenceModel,
    compressed: &ReferenceModel,
    corpus: &EvaluationCorpus,
) -> Result<SignalBundle> {
    SignalGenerator::new(base, corpus)?.generate(compressed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_model, Assignment, CompressionConfig, ModelArchitecture, Style};

    fn arch() -> ModelArchitecture {
        ModelArchitecture {
            style: Style::GptLike,
            n_layers: 2,
            hidden_dim: 32,
            n_heads: 4,
            vocab_size: 64,
            max_context: 32,
        }
    }

    #[test]
    fn jsd_of_disjoint_distributions_is_one() {
        assert_eq!(jensen_shannon(&[1.0, 0.0], &[0.0, 1.0]), 1.0);
        assert_eq!(jensen_shannon(&[0.3, 0.7], &[0.3, 0.7]), 0.0);
        // H(0.25, 0.75) - H(0.5) ... hand value for (0.5,0.5) vs (1,0)
        let v = jensen_shannon(&[0.5, 0.5], &[1.0, 0.0]);
        let expected = 0.5 * (0.5 * (0.5f64 / 0.75).log2() + 0.5 * (0.5f64 / 0.25).log2())
            + 0.5 * (1.0f64 / 0.75).log2();
        assert!((v - expected).abs() < 1e-15);
    }

    #[test]
    fn cosine_cases() {
        assert!((cosine_similarity(&[1.0, 2.0], &[-1.0, -2.0]) + 1.0).abs() < 1e-15);
        assert!((cosine_similarity(&[1.0, 2.0], &[2.0, 4.0]) - 1.0).abs() < 1e-15);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]), 0.0);
        assert_eq!(cosine_similarity(&[0.0, 0.0], &[0.0, 0.0]), 1.0);
    }

    #[test]
    fn self_comparison_signals() {
        let base = build_model(&arch(), 7).unwrap();
        let corpus = EvaluationCorpus::synthesize(&base, 3, 6, 8, 1).unwrap();
        let bundle = generate_signals(&base, &base, &corpus).unwrap();
        assert_eq!(bundle.len(), 3);
        for s in bundle.signals() {
            assert_eq!(s.horizon(), 8);
            for t in 1..=8 {
                let row = s.row(t);
                assert_eq!(row[0], 0.0);
                assert!(row[1..4].iter().all(|v| (*v - 1.0).abs() < 1e-12));
                assert!(row[4] < 1.0 && row[4] > 1.0 - 1e-6);
            }
        }
    }

    #[test]
    fn compressed_signals_stay_in_range() {
        let a = arch();
        let base = build_model(&a, 7).unwrap();
        let corpus = EvaluationCorpus::synthesize(&base, 2, 5, 6, 2).unwrap();
        let comp = base
            .apply_config(&CompressionConfig::uniform(&a, Assignment::new(2, 0.5)), 0.5)
            .unwrap();
        let bundle = generate_signals(&base, &comp, &corpus).unwrap();
        for s in bundle.signals() {
            for t in 1..=s.horizon() {
                let r = s.row(t);
                assert!((0.0..=1.0).contains(&r[0]));
                assert!(r[1..4].iter().all(|v| (-1.0..=1.0).contains(v)));
                assert!((0.0..=RATIO_MAX).contains(&r[4]));
            }
        }
        assert_eq!(bundle, generate_signals(&base, &comp, &corpus).unwrap());
    }

    #[test]
    fn horizon_past_context_is_rejected() {
        let base = build_model(&arch(), 7).unwrap();
        assert!(EvaluationCorpus::synthesize(&base, 1, 20, 14, 0).is_err());
        assert!(EvaluationCorpus::synthesize(&base, 1, 20, 13, 0).is_ok());
    }

    #[test]
    fn corpus_is_seed_determined() {
        let base = build_model(&arch(), 7).unwrap();
        let a = EvaluationCorpus::synthesize(&base, 2, 4, 4, 9).unwrap();
        let b = EvaluationCorpus::synthesize(&base, 2, 4, 4, 9).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, EvaluationCorpus::synthesize(&base, 2, 4, 4, 10).unwrap());
    }
}
