//! Experiment configuration, read from TOML.

use std::fmt;
use std::path::{Path, PathBuf};

use dsd_core::{ExpansionConfig, PayloadConvention, TruncationMode};
use serde::Deserialize;

/// A field-level configuration problem.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

impl std::error::Error for ConfigError {}

fn err(field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError {
        field: field.to_string(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Sc,
    Mc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Convention {
    /// Value and index bits per entry.
    Eq3,
    /// Value bits only.
    Table1,
}

impl Convention {
    pub fn label(self) -> &'static str {
        match self {
            Convention::Eq3 => "eq3",
            Convention::Table1 => "table1",
        }
    }

    pub fn payload(self) -> PayloadConvention {
        match self {
            Convention::Eq3 => PayloadConvention::ValueAndIndex,
            Convention::Table1 => PayloadConvention::ValueOnly,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Master seed; every random stream derives from it.
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub model: ModelConfig,
    pub draft: DraftConfig,
    #[serde(default)]
    pub truncation: TruncationConfig,
    pub link: LinkConfig,
    pub timing: TimingConfig,
    #[serde(default)]
    pub campaign: CampaignConfig,
    #[serde(default)]
    pub theory: TheoryConfig,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Vocabulary for payload accounting and the mass curve.
    pub vocab_size: usize,
    /// Vocabulary for Monte Carlo campaigns. Top-K sizes are scaled to it.
    #[serde(default = "default_stat_vocab")]
    pub stat_vocab_size: usize,
    #[serde(default = "default_context_order")]
    pub context_order: usize,
    /// Fixed mixing weight λ of the draft toward noise.
    pub divergence: Option<f64>,
    /// Calibrate λ so the dense single-step acceptance rate hits this.
    pub target_alpha: Option<f64>,
    /// Fixed peaking exponent γ.
    pub concentration: Option<f64>,
    /// Calibrate γ so the top `top_mass_fraction·V` tokens hold this mass.
    pub top_mass: Option<f64>,
    #[serde(default = "default_top_mass_fraction")]
    pub top_mass_fraction: f64,
    #[serde(default = "default_calibration_contexts")]
    pub calibration_contexts: usize,
}

fn default_stat_vocab() -> usize {
    512
}
fn default_context_order() -> usize {
    2
}
fn default_top_mass_fraction() -> f64 {
    0.01
}
fn default_calibration_contexts() -> usize {
    400
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DraftConfig {
    pub modes: Vec<Mode>,
    /// Draft length `L` for single-candidate decoding.
    pub draft_len: usize,
    /// Expansion `⟨k_1, …, k_L⟩` for multi-candidate decoding.
    pub expansion: Vec<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruncationConfig {
    /// Top-K sizes at `model.vocab_size`.
    #[serde(default)]
    pub top_k: Vec<usize>,
    #[serde(default)]
    pub top_rho: Vec<f64>,
    /// Drop the token that crosses the Top-ρ threshold.
    #[serde(default)]
    pub nucleus_exclusive: bool,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkConfig {
    /// Uplink rates in Mbit/s.
    pub rate_mbps: Vec<f64>,
    pub b_prob: u32,
    /// Defaults to `⌈log2 V⌉`.
    pub b_idx: Option<u32>,
    #[serde(default = "default_conventions")]
    pub payload_conventions: Vec<Convention>,
    #[serde(default)]
    pub include_draft_ids: bool,
}

fn default_conventions() -> Vec<Convention> {
    vec![Convention::Eq3]
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimingConfig {
    pub t_slm_s: f64,
    pub t_llm_s: f64,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CampaignConfig {
    /// Sessions per (mode, truncation) point.
    pub trials: usize,
    /// Tokens generated per session.
    pub session_len: usize,
    pub prefix_len: usize,
    /// Contexts averaged in the mass curve.
    pub mass_contexts: usize,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        Self {
            trials: 200,
            session_len: 64,
            prefix_len: 2,
            mass_contexts: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TheoryConfig {
    /// Instances per fuzz campaign.
    pub instances: usize,
    pub vocab_min: usize,
    pub vocab_max: usize,
    pub chain_vocab: usize,
    pub chain_top_k: usize,
    pub chain_max_depth: usize,
    pub max_candidates: usize,
}

impl Default for TheoryConfig {
    fn default() -> Self {
        Self {
            instances: 10_000,
            vocab_min: 2,
            vocab_max: 64,
            chain_vocab: 8,
            chain_top_k: 4,
            chain_max_depth: 4,
            max_candidates: 3,
        }
    }
}

/// Divergence source after validation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DivergenceSpec {
    Fixed(f64),
    TargetAlpha(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ConcentrationSpec {
    Fixed(f64),
    TopMass { fraction: f64, mass: f64 },
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| {
            let field = e
                .span()
                .map(|s| format!("bytes {}..{}", s.start, s.end))
                .unwrap_or_else(|| "config".into());
            err(&field, e.message().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| err(&path.display().to_string(), e.to_string()))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let m = &self.model;
        if m.vocab_size < 2 {
            return Err(err("model.vocab_size", "must be at least 2"));
        }
        if m.stat_vocab_size < 2 || m.stat_vocab_size > m.vocab_size {
            return Err(err("model.stat_vocab_size", "must lie in 2..=model.vocab_size"));
        }
        if m.context_order > 2 {
            return Err(err("model.context_order", "must be 0, 1 or 2"));
        }
        self.divergence()?;
        self.concentration()?;
        if m.calibration_contexts == 0 {
            return Err(err("model.calibration_contexts", "must be positive"));
        }
        let d = &self.draft;
        if d.modes.is_empty() {
            return Err(err("draft.modes", "must be nonempty"));
        }
        if d.draft_len == 0 {
            return Err(err("draft.draft_len", "must be positive"));
        }
        ExpansionConfig::new(d.expansion.clone()).map_err(|e| err("draft.expansion", e.to_string()))?;
        let t = &self.truncation;
        if let Some(&k) = t.top_k.iter().find(|&&k| k == 0 || k > m.vocab_size) {
            return Err(err("truncation.top_k", format!("{k} outside 1..={}", m.vocab_size)));
        }
        if let Some(&r) = t.top_rho.iter().find(|&&r| !(r > 0.0 && r <= 1.0)) {
            return Err(err("truncation.top_rho", format!("{r} outside (0, 1]")));
        }
        let l = &self.link;
        if l.rate_mbps.is_empty() {
            return Err(err("link.rate_mbps", "must be nonempty"));
        }
        if let Some(&r) = l.rate_mbps.iter().find(|&&r| !(r > 0.0 && r.is_finite())) {
            return Err(err("link.rate_mbps", format!("{r} is not a positive rate")));
        }
        if !matches!(l.b_prob, 16 | 32) {
            return Err(err("link.b_prob", "must be 16 or 32"));
        }
        if l.payload_conventions.is_empty() {
            return Err(err("link.payload_conventions", "must be nonempty"));
        }
        if !(self.timing.t_slm_s > 0.0) {
            return Err(err("timing.t_slm_s", "must be positive"));
        }
        if !(self.timing.t_llm_s > 0.0) {
            return Err(err("timing.t_llm_s", "must be positive"));
        }
        let c = &self.campaign;
        if c.trials == 0 {
            return Err(err("campaign.trials", "must be positive"));
        }
        if c.session_len == 0 {
            return Err(err("campaign.session_len", "must be positive"));
        }
        if c.mass_contexts == 0 {
            return Err(err("campaign.mass_contexts", "must be positive"));
        }
        let th = &self.theory;
        if th.vocab_min < 1 || th.vocab_min > th.vocab_max {
            return Err(err("theory.vocab_min", "must lie in 1..=theory.vocab_max"));
        }
        if th.chain_top_k == 0 || th.chain_top_k > th.chain_vocab {
            return Err(err("theory.chain_top_k", "must lie in 1..=theory.chain_vocab"));
        }
        if th.chain_max_depth < 2 {
            return Err(err("theory.chain_max_depth", "must be at least 2"));
        }
        if th.max_candidates == 0 {
            return Err(err("theory.max_candidates", "must be positive"));
        }
        Ok(())
    }

    pub fn divergence(&self) -> Result<DivergenceSpec, ConfigError> {
        match (self.model.divergence, self.model.target_alpha) {
            (Some(d), None) if (0.0..=1.0).contains(&d) => Ok(DivergenceSpec::Fixed(d)),
            (Some(_), None) => Err(err("model.divergence", "must lie in [0, 1]")),
            (None, Some(a)) if a > 0.0 && a <= 1.0 => Ok(DivergenceSpec::TargetAlpha(a)),
            (None, Some(_)) => Err(err("model.target_alpha", "must lie in (0, 1]")),
            _ => Err(err("model", "set exactly one of `divergence` and `target_alpha`")),
        }
    }

    pub fn concentration(&self) -> Result<ConcentrationSpec, ConfigError> {
        let fraction = self.model.top_mass_fraction;
        match (self.model.concentration, self.model.top_mass) {
            (Some(g), None) if g > 0.0 && g.is_finite() => Ok(ConcentrationSpec::Fixed(g)),
            (Some(_), None) => Err(err("model.concentration", "must be positive")),
            (None, Some(_)) if !(fraction > 0.0 && fraction <= 1.0) => {
                Err(err("model.top_mass_fraction", "must lie in (0, 1]"))
            }
            (None, Some(m)) if m > 0.0 && m < 1.0 => Ok(ConcentrationSpec::TopMass { fraction, mass: m }),
            (None, Some(_)) => Err(err("model.top_mass", "must lie in (0, 1)")),
            _ => Err(err("model", "set exactly one of `concentration` and `top_mass`")),
        }
    }

    pub fn expansion(&self) -> ExpansionConfig {
        ExpansionConfig::new(self.draft.expansion.clone()).expect("validated")
    }

    /// Top-K size at the statistics vocabulary: `max(1, round(K·V_stat/V))`.
    pub fn stat_k(&self, k: usize) -> usize {
        let scaled = (k as f64 * self.model.stat_vocab_size as f64 / self.model.vocab_size as f64).round();
        (scaled as usize).clamp(1, self.model.stat_vocab_size)
    }

    /// Top-K grid (ascending, deduplicated) at the payload vocabulary.
    pub fn top_k_grid(&self) -> Vec<usize> {
        let mut ks = self.truncation.top_k.clone();
        ks.sort_unstable();
        ks.dedup();
        ks
    }

    pub fn top_rho_modes(&self) -> Vec<TruncationMode> {
        let mut rhos = self.truncation.top_rho.clone();
        rhos.sort_by(f64::total_cmp);
        rhos.dedup();
        rhos.into_iter()
            .map(|r| {
                if self.truncation.nucleus_exclusive {
                    TruncationMode::TopRhoExclusive(r)
                } else {
                    TruncationMode::TopRho(r)
                }
            })
            .collect()
    }

    /// Rates in Mbit/s, ascending and deduplicated.
    pub fn rates(&self) -> Vec<f64> {
        let mut r = self.link.rate_mbps.clone();
        r.sort_by(f64::total_cmp);
        r.dedup();
        r
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
seed = 1
[model]
vocab_size = 1000
stat_vocab_size = 100
target_alpha = 0.8
top_mass = 0.85
[draft]
modes = ["sc", "mc"]
draft_len = 4
expansion = [2, 2]
[truncation]
top_k = [10, 1, 100]
[link]
rate_mbps = [10.0, 1.0]
b_prob = 16
[timing]
t_slm_s = 0.0025
t_llm_s = 0.05
"#;

    #[test]
    fn parses_and_normalizes_grids() {
        let cfg = ExperimentConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(cfg.top_k_grid(), vec![1, 10, 100]);
        assert_eq!(cfg.rates(), vec![1.0, 10.0]);
        assert_eq!(cfg.stat_k(10), 1);
        assert_eq!(cfg.stat_k(100), 10);
        assert_eq!(cfg.stat_k(1000), 100);
        assert_eq!(cfg.divergence().unwrap(), DivergenceSpec::TargetAlpha(0.8));
        assert_eq!(cfg.campaign, CampaignConfig::default());
        assert_eq!(cfg.link.payload_conventions, vec![Convention::Eq3]);
    }

    #[test]
    fn errors_name_the_field() {
        let bad = MINIMAL.replace("rate_mbps = [10.0, 1.0]", "rate_mbps = []");
        assert_eq!(ExperimentConfig::from_toml(&bad).unwrap_err().field, "link.rate_mbps");
        let bad = MINIMAL.replace("top_k = [10, 1, 100]", "top_k = [0]");
        assert_eq!(ExperimentConfig::from_toml(&bad).unwrap_err().field, "truncation.top_k");
        let bad = MINIMAL.replace("target_alpha = 0.8", "target_alpha = 0.8\ndivergence = 0.1");
        assert_eq!(ExperimentConfig::from_toml(&bad).unwrap_err().field, "model");
        let bad = MINIMAL.replace("seed = 1\n", "");
        assert!(ExperimentConfig::from_toml(&bad).unwrap_err().message.contains("seed"));
        let bad = MINIMAL.replace("b_prob = 16", "b_prob = 16\nbogus = 1");
        assert!(ExperimentConfig::from_toml(&bad).is_err());
    }
}
