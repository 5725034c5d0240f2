//! Uplink payload, latency, throughput and speedup models.
//!
//! One oracle call costs `L·T_SLM + T_comm + T_LLM`, where `L` is the draft
//! depth (tree layers are drafted in parallel) and `T_comm` is the uplink
//! payload divided by the effective rate `R_up`. Only the uplink is modeled.

use crate::error::{Error, Result};
use crate::tree::ExpansionConfig;

/// `⌈log2 V⌉`.
pub fn index_bits(vocab_size: usize) -> u32 {
    if vocab_size <= 1 {
        0
    } else {
        usize::BITS - (vocab_size - 1).leading_zeros()
    }
}

/// Which bits each transmitted entry costs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PayloadConvention {
    /// Value plus explicit token index: `b_prob + b_idx` per entry.
    ValueAndIndex,
    /// Value only: `b_prob` per entry (the 0.5 Mbit per 32K FP16 vector
    /// accounting).
    ValueOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PayloadAccounting {
    pub b_prob: u32,
    pub b_idx: u32,
    pub convention: PayloadConvention,
    /// Also charge `b_idx` bits per drafted token id.
    pub include_draft_ids: bool,
}

impl PayloadAccounting {
    /// `b_idx = ⌈log2 V⌉`, value-and-index convention, draft ids excluded.
    pub fn new(vocab_size: usize, b_prob: u32) -> Self {
        Self {
            b_prob,
            b_idx: index_bits(vocab_size),
            convention: PayloadConvention::ValueAndIndex,
            include_draft_ids: false,
        }
    }

    pub fn with_convention(mut self, convention: PayloadConvention) -> Self {
        self.convention = convention;
        self
    }

    pub fn bits_per_entry(&self) -> u64 {
        match self.convention {
            PayloadConvention::ValueAndIndex => u64::from(self.b_prob + self.b_idx),
            PayloadConvention::ValueOnly => u64::from(self.b_prob),
        }
    }

    pub fn dist_bits(&self, entries: usize) -> u64 {
        entries as u64 * self.bits_per_entry()
    }

    pub fn draft_id_bits(&self, tokens: usize) -> u64 {
        if self.include_draft_ids {
            tokens as u64 * u64::from(self.b_idx)
        } else {
            0
        }
    }
}

/// Shape of one oracle call's draft.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DraftShape {
    /// Single candidate, `L` tokens.
    Sequence(usize),
    Tree(ExpansionConfig),
}

impl DraftShape {
    pub fn depth(&self) -> usize {
        match self {
            DraftShape::Sequence(l) => *l,
            DraftShape::Tree(c) => c.depth(),
        }
    }

    /// Distributions sent uplink per oracle: `L` or `|𝒬|`.
    pub fn dist_count(&self) -> usize {
        match self {
            DraftShape::Sequence(l) => *l,
            DraftShape::Tree(c) => c.dist_count(),
        }
    }

    pub fn token_count(&self) -> usize {
        match self {
            DraftShape::Sequence(l) => *l,
            DraftShape::Tree(c) => c.token_count(),
        }
    }
}

/// Uplink bits for one oracle call when every distribution ships
/// `entries_per_dist` entries (`V` dense, `K` truncated).
pub fn payload_bits(shape: &DraftShape, entries_per_dist: usize, accounting: &PayloadAccounting) -> u64 {
    shape.dist_count() as u64 * accounting.dist_bits(entries_per_dist)
        + accounting.draft_id_bits(shape.token_count())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkModel {
    /// Effective uplink rate in bits per second.
    pub rate_bps: f64,
    pub accounting: PayloadAccounting,
    pub vocab_size: usize,
}

impl LinkModel {
    pub fn new(rate_bps: f64, accounting: PayloadAccounting, vocab_size: usize) -> Result<Self> {
        if !(rate_bps > 0.0) {
            return Err(Error::InvalidParameter(format!("uplink rate {rate_bps} must be positive")));
        }
        Ok(Self {
            rate_bps,
            accounting,
            vocab_size,
        })
    }

    pub fn with_rate(&self, rate_bps: f64) -> Result<Self> {
        Self::new(rate_bps, self.accounting, self.vocab_size)
    }
}

/// `T_comm = D_up / R_up`.
pub fn t_comm(link: &LinkModel, payload_bits: u64) -> f64 {
    payload_bits as f64 / link.rate_bps
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimingModel {
    /// Seconds per draft-model forward pass.
    pub t_slm: f64,
    /// Seconds per target-model forward pass.
    pub t_llm: f64,
}

impl TimingModel {
    pub fn new(t_slm: f64, t_llm: f64) -> Result<Self> {
        if !(t_slm > 0.0 && t_llm > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "forward times must be positive (t_slm={t_slm}, t_llm={t_llm})"
            )));
        }
        Ok(Self { t_slm, t_llm })
    }
}

/// `(1 - α^{L+1}) / (1 - α)`, evaluated as `Σ_{j=0}^{L} α^j` so the α → 1
/// limit `L + 1` needs no special case.
pub fn n_oracle_expected(alpha: f64, draft_len: usize) -> Result<f64> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidParameter(format!("alpha {alpha} outside [0, 1]")));
    }
    let mut term = 1.0;
    let mut total = 0.0;
    for _ in 0..=draft_len {
        total += term;
        term *= alpha;
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpeedupPoint {
    /// Expected tokens per oracle call.
    pub n_oracle: f64,
    pub payload_bits: u64,
    pub t_comm: f64,
    pub t_oracle: f64,
    /// Tokens per second.
    pub throughput: f64,
    /// Throughput relative to the target model alone.
    pub speedup: f64,
}

/// Throughput `N_oracle / T_oracle` and speedup `Θ·T_LLM`.
///
/// For trees `α` is the per-layer acceptance rate (probability some
/// candidate is accepted) and the payload counts `|𝒬|` distributions.
pub fn throughput_and_speedup(
    shape: &DraftShape,
    link: &LinkModel,
    timing: &TimingModel,
    alpha: f64,
    entries_per_dist: usize,
) -> Result<SpeedupPoint> {
    let depth = shape.depth();
    let n_oracle = n_oracle_expected(alpha, depth)?;
    let bits = payload_bits(shape, entries_per_dist, &link.accounting);
    let comm = t_comm(link, bits);
    let t_oracle = depth as f64 * timing.t_slm + comm + timing.t_llm;
    let throughput = n_oracle / t_oracle;
    Ok(SpeedupPoint {
        n_oracle,
        payload_bits: bits,
        t_comm: comm,
        t_oracle,
        throughput,
        speedup: throughput * timing.t_llm,
    })
}

/// The tree speedup expression in its published form,
/// `1 / ((L·T_SLM + |𝒬|·T_𝒱) / ((L·α + 1)·T_LLM) + 1)`.
///
/// It is bounded above by one for every input, so it is kept only for
/// comparison in reports; [`throughput_and_speedup`] is the model used.
pub fn tree_speedup_as_published(
    config: &ExpansionConfig,
    link: &LinkModel,
    timing: &TimingModel,
    alpha: f64,
    entries_per_dist: usize,
) -> f64 {
    let l = config.depth() as f64;
    let t_v = t_comm(link, link.accounting.dist_bits(entries_per_dist));
    let overhead = l * timing.t_slm + config.dist_count() as f64 * t_v;
    1.0 / (overhead / ((l * alpha + 1.0) * timing.t_llm) + 1.0)
}

/// `T_DSD = T_comp + N·T_comm`: measured compute plus simulated uplink.
pub fn t_dsd_total(t_comp: f64, n_oracles: u64, t_comm_per_oracle: f64) -> f64 {
    t_comp + n_oracles as f64 * t_comm_per_oracle
}
