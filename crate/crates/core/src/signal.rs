//! Discrete-time inference signals and the line-oriented trace format.
//!
//! Steps are 1-based throughout: a signal of horizon `T'` has values for
//! steps `1..=T'`. A trace file looks like:
//!
//! ```text
//! #toggle-trace v1 T=32
//! prompt_id,step,jsd,attn_sim_1,emb_sim,fact_ratio
//! p0,1,0.0000000000000000e0,1.0000000000000000e0,...
//! ```
//!
//! Values are written with 17 significant digits so every `f64` survives a
//! write/read cycle unchanged.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use thiserror::Error;

pub const TRACE_MAGIC: &str = "#toggle-trace v1";

pub const CH_JSD: &str = "jsd";
pub const CH_EMB_SIM: &str = "emb_sim";
pub const CH_FACT_RATIO: &str = "fact_ratio";
pub const ATTN_SIM_PREFIX: &str = "attn_sim_";

/// Channel name holding the attention similarity of 1-based `layer`.
pub fn attn_sim_channel(layer: usize) -> String {
    format!("{ATTN_SIM_PREFIX}{layer}")
}

/// The channel schema the four built-in properties need for `n_layers`.
pub fn builtin_channels(n_layers: usize) -> Vec<String> {
    let mut out = vec![CH_JSD.to_string()];
    out.extend((1..=n_layers).map(attn_sim_channel));
    out.push(CH_EMB_SIM.to_string());
    out.push(CH_FACT_RATIO.to_string());
    out
}

#[derive(Debug, Error)]
pub enum SignalError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("non-finite value at line {line}, channel `{channel}`")]
    NonFinite { line: usize, channel: String },
    #[error("invalid signal: {0}")]
    Invalid(String),
    #[error("invalid time window: {0}")]
    Window(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = SignalError> = std::result::Result<T, E>;

/// The inclusive step range `{start, ..., start + lookahead}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TimeWindow {
    start: usize,
    lookahead: usize,
}

impl TimeWindow {
    pub fn new(start: usize, lookahead: usize, max_context: usize) -> Result<Self> {
        if start < 1 {
            return Err(SignalError::Window(format!("start must be >= 1, got {start}")));
        }
        if start + lookahead > max_context {
            return Err(SignalError::Window(format!(
                "start + lookahead = {} exceeds max context {max_context}",
                start + lookahead
            )));
        }
        Ok(Self { start, lookahead })
    }

    pub fn start(&self) -> usize {
        self.start
    }

    pub fn end(&self) -> usize {
        self.start + self.lookahead
    }

    pub fn contains(&self, t: usize) -> bool {
        self.start <= t && t <= self.end()
    }
}

/// A multivariate trace for one prompt. Values are stored step-major.
#[derive(Debug, Clone, PartialEq)]
pub struct InferenceSignal {
    prompt_id: String,
    channels: Arc<Vec<String>>,
    values: Vec<f64>,
}

impl InferenceSignal {
    /// `rows[t - 1]` holds the channel values of step `t`.
    pub fn new(
        prompt_id: impl Into<String>,
        channels: Vec<String>,
        rows: Vec<Vec<f64>>,
    ) -> Result<Self> {
        Self::with_shared_channels(prompt_id, Arc::new(channels), rows)
    }

    pub(crate) fn with_shared_channels(
        prompt_id: impl Into<String>,
        channels: Arc<Vec<String>>,
        rows: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let prompt_id = prompt_id.into();
        validate_identifier(&prompt_id)?;
        validate_channels(&channels)?;
        if rows.is_empty() {
            return Err(SignalError::Invalid(format!(
                "signal `{prompt_id}` has no steps"
            )));
        }
        let width = channels.len();
        let mut values = Vec::with_capacity(rows.len() * width);
        for (i, row) in rows.into_iter().enumerate() {
            if row.len() != width {
                return Err(SignalError::Invalid(format!(
                    "signal `{prompt_id}` step {} has {} values, expected {width}",
                    i + 1,
                    row.len()
                )));
            }
            if let Some(j) = row.iter().position(|v| !v.is_finite()) {
                return Err(SignalError::Invalid(format!(
                    "signal `{prompt_id}` step {} channel `{}` is not finite",
                    i + 1,
                    channels[j]
                )));
            }
            values.extend(row);
        }
        Ok(Self {
            prompt_id,
            channels,
            values,
        })
    }

    pub fn prompt_id(&self) -> &str {
        &self.prompt_id
    }

    pub fn channels(&self) -> &[String] {
        &self.channels
    }

    pub fn horizon(&self) -> usize {
        self.values.len() / self.channels.len()
    }

    pub fn channel_index(&self, name: &str) -> Option<usize> {
        self.channels.iter().position(|c| c == name)
    }

    /// Value of channel `channel` at 1-based `step`.
    pub fn value(&self, step: usize, channel: usize) -> f64 {
        debug_assert!(step >= 1 && step <= self.horizon());
        self.values[(step - 1) * self.channels.len() + channel]
    }

    pub fn row(&self, step: usize) -> &[f64] {
        let w = self.channels.len();
        &self.values[(step - 1) * w..step * w]
    }

    /// All values of one channel, index 0 being step 1.
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.channel_index(name)?;
        Some((1..=self.horizon()).map(|t| self.value(t, j)).collect())
    }
}

/// One signal per prompt of an evaluation dataset, sharing a channel schema.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalBundle {
    dataset_id: String,
    max_context: usize,
    channels: Arc<Vec<String>>,
    signals: Vec<InferenceSignal>,
}

impl SignalBundle {
    pub fn new(
        dataset_id: impl Into<String>,
        max_context: usize,
        channels: Vec<String>,
        signals: Vec<InferenceSignal>,
    ) -> Result<Self> {
        validate_channels(&channels)?;
        let mut seen = HashSet::new();
        for s in &signals {
            if s.channels() != channels.as_slice() {
                return Err(SignalError::SchemaMismatch(format!(
                    "signal `{}` has channels [{}], bundle declares [{}]",
                    s.prompt_id(),
                    s.channels().join(","),
                    channels.join(",")
                )));
            }
            if s.horizon() > max_context {
                return Err(SignalError::Invalid(format!(
                    "signal `{}` horizon {} exceeds T={max_context}",
                    s.prompt_id(),
                    s.horizon()
                )));
            }
            if !seen.insert(s.prompt_id().to_string()) {
                return Err(SignalError::Invalid(format!(
                    "duplicate prompt id `{}`",
                    s.prompt_id()
                )));
            }
        }
        Ok(Self {
            dataset_id: dataset_id.into(),
            max_context,
            channels: Arc::new(channels),
            signals,
        })
    }

    pub fn dataset_id(&self) -> &str {
        &self.dataset_id
    }

    pub fn max_context(&self) -> usize {
        self.max_context
    }

    pub fn channels(&self) -> &[String] {
        &self.channels
    }

    pub fn signals(&self) -> &[InferenceSignal] {
        &self.signals
    }

    pub fn is_empty(&self) -> bool {
        self.signals.is_empty()
    }

    pub fn len(&self) -> usize {
        self.signals.len()
    }

    /// Fails with a schema mismatch naming the first absent channel.
    pub fn require_channels<S: AsRef<str>>(&self, required: &[S]) -> Result<()> {
        let missing: Vec<&str> = required
            .iter()
            .map(AsRef::as_ref)
            .filter(|r| !self.channels.iter().any(|c| c == r))
            .collect();
        if missing.is_empty() {
            Ok(())
        } else {
            Err(SignalError::SchemaMismatch(format!(
                "missing channel(s): {}",
                missing.join(", ")
            )))
        }
    }
}

fn validate_identifier(id: &str) -> Result<()> {
    if id.is_empty() || id.contains([',', '\n', '\r']) || id.starts_with('#') {
        return Err(SignalError::Invalid(format!("bad identifier `{id}`")));
    }
    Ok(())
}

fn validate_channels(channels: &[String]) -> Result<()> {
    if channels.is_empty() {
        return Err(SignalError::Invalid("no channels".into()));
    }
    let mut seen = HashSet::new();
    for c in channels {
        validate_identifier(c)?;
        if c == "prompt_id" || c == "step" {
            return Err(SignalError::Invalid(format!("reserved channel name `{c}`")));
        }
        if !seen.insert(c.as_str()) {
            return Err(SignalError::Invalid(format!("duplicate channel `{c}`")));
        }
    }
    Ok(())
}

fn format_value(v: f64) -> String {
    format!("{v:.16e}")
}

/// Renders the trace text of a bundle. Deterministic.
pub fn render_trace(bundle: &SignalBundle) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{TRACE_MAGIC} T={}", bundle.max_context);
    let _ = writeln!(out, "prompt_id,step,{}", bundle.channels.join(","));
    for s in &bundle.signals {
        for t in 1..=s.horizon() {
            out.push_str(&s.prompt_id);
            let _ = write!(out, ",{t}");
            for v in s.row(t) {
                out.push(',');
                out.push_str(&format_value(*v));
            }
            out.push('\n');
        }
    }
    out
}

/// Writes `bundle` to `path` through a temporary file and a rename.
pub fn write_trace(bundle: &SignalBundle, path: &Path) -> Result<()> {
    crate::io_util::write_atomic(path, render_trace(bundle).as_bytes())?;
    Ok(())
}

/// Reads a trace file. The bundle's dataset id is the file stem.
pub fn read_trace(path: &Path) -> Result<SignalBundle> {
    let text = fs::read_to_string(path)?;
    let dataset_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    parse_trace(&text, dataset_id)
}

/// Reads a trace and checks that `required` channels are present.
pub fn read_trace_with_schema<S: AsRef<str>>(path: &Path, required: &[S]) -> Result<SignalBundle> {
    let bundle = read_trace(path)?;
    bundle.require_channels(required)?;
    Ok(bundle)
}

pub fn parse_trace(text: &str, dataset_id: impl Into<String>) -> Result<SignalBundle> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (_, header) = lines.next().ok_or(SignalError::Parse {
        line: 1,
        message: "empty file".into(),
    })?;
    let max_context = header
        .strip_prefix(TRACE_MAGIC)
        .and_then(|rest| rest.strip_prefix(" T="))
        .and_then(|n| n.parse::<usize>().ok())
        .ok_or_else(|| SignalError::Parse {
            line: 1,
            message: format!("expected `{TRACE_MAGIC} T=<int>`, found `{header}`"),
        })?;

    let (_, columns) = lines.next().ok_or(SignalError::Parse {
        line: 2,
        message: "missing column header".into(),
    })?;
    let mut cols = columns.split(',');
    if cols.next() != Some("prompt_id") || cols.next() != Some("step") {
        return Err(SignalError::Parse {
            line: 2,
            message: "column header must start with `prompt_id,step`".into(),
        });
    }
    let channels: Vec<String> = cols.map(str::to_string).collect();
    validate_channels(&channels).map_err(|e| SignalError::Parse {
        line: 2,
        message: e.to_string(),
    })?;
    let channels = Arc::new(channels);

    let mut signals = Vec::new();
    let mut current: Option<(String, Vec<Vec<f64>>)> = None;
    let mut finished = HashSet::new();

    let flush = |current: &mut Option<(String, Vec<Vec<f64>>)>,
                     signals: &mut Vec<InferenceSignal>|
     -> Result<()> {
        if let Some((id, rows)) = current.take() {
            signals.push(InferenceSignal::with_shared_channels(
                id,
                channels.clone(),
                rows,
            )?);
        }
        Ok(())
    };

    for (line_no, line) in lines {
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let id = fields.next().unwrap_or_default();
        let step: usize = fields
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| SignalError::Parse {
                line: line_no,
                message: "missing or malformed step".into(),
            })?;
        let mut row = Vec::with_capacity(channels.len());
        for (j, field) in fields.enumerate() {
            if j >= channels.len() {
                return Err(SignalError::SchemaMismatch(format!(
                    "line {line_no}: more values than the {} declared channels",
                    channels.len()
                )));
            }
            let v: f64 = field.trim().parse().map_err(|_| SignalError::Parse {
                line: line_no,
                message: format!("cannot parse `{field}` as a number"),
            })?;
            if !v.is_finite() {
                return Err(SignalError::NonFinite {
                    line: line_no,
                    channel: channels[j].clone(),
                });
            }
            row.push(v);
        }
        if row.len() != channels.len() {
            return Err(SignalError::SchemaMismatch(format!(
                "line {line_no}: {} values for {} channels (missing `{}`)",
                row.len(),
                channels.len(),
                channels[row.len()]
            )));
        }

        let same_prompt = matches!(&current, Some((cur, _)) if cur == id);
        if !same_prompt {
            if let Some((cur, _)) = &current {
                finished.insert(cur.clone());
            }
            flush(&mut current, &mut signals)?;
            if finished.contains(id) {
                return Err(SignalError::Parse {
                    line: line_no,
                    message: format!("prompt `{id}` is not contiguous"),
                });
            }
            current = Some((id.to_string(), Vec::new()));
        }
        let rows = &mut current.as_mut().expect("set above").1;
        if step != rows.len() + 1 {
            return Err(SignalError::Parse {
                line: line_no,
                message: format!("expected step {}, found {step}", rows.len() + 1),
            });
        }
        if step > max_context {
            return Err(SignalError::Parse {
                line: line_no,
                message: format!("step {step} exceeds T={max_context}"),
            });
        }
        rows.push(row);
    }
    flush(&mut current, &mut signals)?;

    let channels = Arc::try_unwrap(channels).unwrap_or_else(|a| (*a).clone());
    SignalBundle::new(dataset_id, max_context, channels, signals)
}
