use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{ModelError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Style {
    #[serde(rename = "gpt-like")]
    GptLike,
    #[serde(rename = "llama-like")]
    LlamaLike,
}

impl Style {
    pub fn components(self) -> &'static [Component] {
        use Component::*;
        match self {
            Style::GptLike => &[AttnQkv, AttnOut, Ffn],
            Style::LlamaLike => &[QProj, KProj, VProj, AttnOut, FfnGate, FfnUp, FfnDown],
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Style::GptLike => "gpt-like",
            Style::LlamaLike => "llama-like",
        }
    }
}

impl FromStr for Style {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gpt-like" => Ok(Style::GptLike),
            "llama-like" => Ok(Style::LlamaLike),
            other => Err(ModelError::InvalidArch(format!("unknown style `{other}`"))),
        }
    }
}

/// A named, independently compressible parameter group inside a layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Component {
    /// Fused query/key/value projection.
    AttnQkv,
    QProj,
    KProj,
    VProj,
    AttnOut,
    /// Both feed-forward matrices of a GELU MLP, stacked.
    Ffn,
    FfnGate,
    FfnUp,
    FfnDown,
}

impl Component {
    pub fn as_str(self) -> &'static str {
        match self {
            Component::AttnQkv => "attn_qkv",
            Component::QProj => "q_proj",
            Component::KProj => "k_proj",
            Component::VProj => "v_proj",
            Component::AttnOut => "attn_out",
            Component::Ffn => "ffn",
            Component::FfnGate => "ffn_gate",
            Component::FfnUp => "ffn_up",
            Component::FfnDown => "ffn_down",
        }
    }
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Component {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self> {
        use Component::*;
        [AttnQkv, QProj, KProj, VProj, AttnOut, Ffn, FfnGate, FfnUp, FfnDown]
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| ModelError::InvalidArch(format!("unknown component `{s}`")))
    }
}

/// `(layer, component)`, layers numbered from 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ComponentKey {
    pub layer: usize,
    pub component: Component,
}

impl ComponentKey {
    pub fn new(layer: usize, component: Component) -> Self {
        Self { layer, component }
    }
}

impl fmt::Display for ComponentKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "L{}.{}", self.layer, self.component)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelArchitecture {
    pub style: Style,
    pub n_layers: usize,
    pub hidden_dim: usize,
    pub n_heads: usize,
    pub vocab_size: usize,
    pub max_context: usize,
}

impl ModelArchitecture {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ModelError::InvalidArch(m));
        if self.n_layers == 0 {
            return bad("n_layers must be >= 1".into());
        }
        if self.n_heads == 0 || self.hidden_dim == 0 {
            return bad("hidden_dim and n_heads must be >= 1".into());
        }
        if self.hidden_dim % self.n_heads != 0 {
            return bad(format!(
                "hidden_dim {} is not divisible by n_heads {}",
                self.hidden_dim, self.n_heads
            ));
        }
        if self.style == Style::LlamaLike && self.head_dim() % 2 != 0 {
            return bad("llama-like models need an even head dimension".into());
        }
        if self.vocab_size < 2 {
            return bad("vocab_size must be >= 2".into());
        }
        if self.max_context < 2 {
            return bad("max_context must be >= 2".into());
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_dim / self.n_heads
    }

    pub fn ffn_dim(&self) -> usize {
        match self.style {
            Style::GptLike => 4 * self.hidden_dim,
            Style::LlamaLike => (8 * self.hidden_dim).div_ceil(3),
        }
    }

    /// Every compressible `(layer, component)` in canonical order.
    pub fn component_keys(&self) -> Vec<ComponentKey> {
        (1..=self.n_layers)
            .flat_map(|l| {
                self.style
                    .components()
                    .iter()
                    .map(move |&c| ComponentKey::new(l, c))
            })
            .collect()
    }

    /// `(rows, cols)` of a component's weight matrix.
    pub fn component_shape(&self, c: Component) -> (usize, usize) {
        let d = self.hidden_dim;
        let f = self.ffn_dim();
        match c {
            Component::AttnQkv => (d, 3 * d),
            Component::QProj | Component::KProj | Component::VProj | Component::AttnOut => (d, d),
            // fc (d x f) stacked over the transposed projection (d x f)
            Component::Ffn => (2 * d, f),
            Component::FfnGate | Component::FfnUp => (d, f),
            Component::FfnDown => (f, d),
        }
    }

    /// Embeddings, norms and the output head.
    pub fn exempt_params(&self) -> usize {
        let d = self.hidden_dim;
        let v = self.vocab_size;
        match self.style {
            Style::GptLike => {
                v * d + self.max_context * d + self.n_layers * 4 * d + 2 * d + d * v
            }
            Style::LlamaLike => v * d + self.n_layers * 2 * d + d + d * v,
        }
    }
}
