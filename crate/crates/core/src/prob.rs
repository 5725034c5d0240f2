//! Categorical distributions over a shared vocabulary and the handful of
//! exact operations the protocols need: total variation distance, residual
//! distributions, truncation and inverse-CDF sampling.
//!
//! All sums run in ascending token-id order so results are bit-reproducible.

use std::fmt;

use rand::Rng;

use crate::error::{Error, Result};

/// Tolerance on `Σ p = 1` for a valid distribution.
pub const SUM_TOLERANCE: f64 = 1e-9;

/// Residual mass below which rejection is treated as impossible.
pub const DEGENERATE_MASS: f64 = 1e-12;

/// Slack used when comparing a cumulative mass to a nucleus threshold.
const NUCLEUS_SLACK: f64 = 1e-12;

/// A probability vector indexed by token id `0..V`.
#[derive(Debug, Clone, PartialEq)]
pub struct Categorical {
    probs: Vec<f64>,
}

impl Categorical {
    /// Validates and wraps a probability vector.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidDistribution("empty vocabulary".into()));
        }
        if let Some((i, p)) = probs
            .iter()
            .enumerate()
            .find(|(_, p)| !p.is_finite() || **p < 0.0)
        {
            return Err(Error::InvalidDistribution(format!(
                "entry {i} is {p}, expected a finite non-negative value"
            )));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::InvalidDistribution(format!(
                "entries sum to {total}"
            )));
        }
        Ok(Self { probs })
    }

    /// Normalizes non-negative weights into a distribution.
    pub fn from_weights(mut weights: Vec<f64>) -> Result<Self> {
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidDistribution(
                "weights must be finite and non-negative".into(),
            ));
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(Error::InvalidDistribution("weights sum to zero".into()));
        }
        weights.iter_mut().for_each(|w| *w /= total);
        Self::new(weights)
    }

    pub fn uniform(vocab_size: usize) -> Result<Self> {
        if vocab_size == 0 {
            return Err(Error::InvalidDistribution("empty vocabulary".into()));
        }
        Ok(Self {
            probs: vec![1.0 / vocab_size as f64; vocab_size],
        })
    }

    pub fn point_mass(vocab_size: usize, token: usize) -> Result<Self> {
        if token >= vocab_size {
            return Err(Error::InvalidDistribution(format!(
                "token {token} outside vocabulary of size {vocab_size}"
            )));
        }
        let mut probs = vec![0.0; vocab_size];
        probs[token] = 1.0;
        Ok(Self { probs })
    }

    pub fn vocab_size(&self) -> usize {
        self.probs.len()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Probability of `token`; zero for ids outside the vocabulary.
    pub fn prob(&self, token: usize) -> f64 {
        self.probs.get(token).copied().unwrap_or(0.0)
    }

    /// Token ids ordered by descending probability, ties by ascending id.
    pub fn ranked(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.probs.len()).collect();
        order.sort_by(|&a, &b| rank_cmp(&self.probs, a, b));
        order
    }

    /// The `k` highest-ranked ids, in rank order.
    pub fn top_k(&self, k: usize) -> Vec<usize> {
        let k = k.min(self.probs.len());
        let mut order: Vec<usize> = (0..self.probs.len()).collect();
        if k == 0 {
            return Vec::new();
        }
        if k < order.len() {
            order.select_nth_unstable_by(k - 1, |&a, &b| rank_cmp(&self.probs, a, b));
            order.truncate(k);
        }
        order.sort_by(|&a, &b| rank_cmp(&self.probs, a, b));
        order
    }

    /// Total probability of the `k` most likely tokens.
    pub fn top_k_mass(&self, k: usize) -> f64 {
        let mut kept = self.top_k(k);
        kept.sort_unstable();
        kept.iter().map(|&t| self.probs[t]).sum()
    }

    /// `(1 - weight) * self + weight * other`.
    pub fn mix(&self, other: &Categorical, weight: f64) -> Result<Categorical> {
        check_dims(self, other)?;
        if !(0.0..=1.0).contains(&weight) {
            return Err(Error::InvalidParameter(format!(
                "mixing weight {weight} outside [0, 1]"
            )));
        }
        let probs = self
            .probs
            .iter()
            .zip(&other.probs)
            .map(|(a, b)| (1.0 - weight) * a + weight * b)
            .collect();
        Categorical::new(probs)
    }

    /// Inverse-CDF draw; see [`sample`].
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        sample(self, rng)
    }
}

fn rank_cmp(probs: &[f64], a: usize, b: usize) -> std::cmp::Ordering {
    probs[b].total_cmp(&probs[a]).then(a.cmp(&b))
}

fn check_dims(a: &Categorical, b: &Categorical) -> Result<()> {
    if a.vocab_size() != b.vocab_size() {
        return Err(Error::DimensionMismatch {
            left: a.vocab_size(),
            right: b.vocab_size(),
        });
    }
    Ok(())
}

/// Total variation distance `½ Σ |a(x) - b(x)|`.
pub fn tv_distance(a: &Categorical, b: &Categorical) -> Result<f64> {
    check_dims(a, b)?;
    let l1: f64 = a.probs.iter().zip(&b.probs).map(|(x, y)| (x - y).abs()).sum();
    Ok(0.5 * l1)
}

/// Overlap `Σ min(a(x), b(x))`, the single-step acceptance rate when one of
/// the two is the draft and the other the target.
pub fn overlap(a: &Categorical, b: &Categorical) -> Result<f64> {
    check_dims(a, b)?;
    Ok(a.probs.iter().zip(&b.probs).map(|(x, y)| x.min(*y)).sum())
}

/// Inverse-CDF sampling with the CDF accumulated in ascending token order.
pub fn sample<R: Rng + ?Sized>(q: &Categorical, rng: &mut R) -> usize {
    let r: f64 = rng.random();
    let mut cum = 0.0;
    let mut last_positive = 0;
    for (token, &p) in q.probs.iter().enumerate() {
        if p > 0.0 {
            cum += p;
            last_positive = token;
            if r < cum {
                return token;
            }
        }
    }
    // Rounding left the CDF just below one.
    last_positive
}

/// Result of `norm(max(0, p - q))`.
#[derive(Debug, Clone, PartialEq)]
pub struct Residual {
    /// Normalizer `Z = Σ max(0, p - q)`, equal to `tv(p, q)`.
    pub mass: f64,
    /// `None` when `Z` is below [`DEGENERATE_MASS`].
    pub dist: Option<Categorical>,
}

impl Residual {
    pub fn is_degenerate(&self) -> bool {
        self.dist.is_none()
    }

    /// The residual, or `fallback` when it is degenerate.
    pub fn dist_or<'a>(&'a self, fallback: &'a Categorical) -> &'a Categorical {
        self.dist.as_ref().unwrap_or(fallback)
    }
}

pub fn residual(p: &Categorical, q: &Categorical) -> Result<Residual> {
    check_dims(p, q)?;
    let mut r: Vec<f64> = p
        .probs
        .iter()
        .zip(&q.probs)
        .map(|(a, b)| (a - b).max(0.0))
        .collect();
    let mass: f64 = r.iter().sum();
    if mass < DEGENERATE_MASS {
        return Ok(Residual { mass, dist: None });
    }
    r.iter_mut().for_each(|x| *x /= mass);
    // Exact renormalization of a non-negative vector; skip re-validation.
    Ok(Residual {
        mass,
        dist: Some(Categorical { probs: r }),
    })
}

/// How the kept set of a truncation is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TruncationMode {
    /// The `K` most likely tokens.
    TopK(usize),
    /// Smallest prefix of the ranked tokens whose mass reaches `ρ`; the
    /// token that crosses the threshold is kept.
    TopRho(f64),
    /// Longest prefix whose mass stays strictly below `ρ` (never empty).
    TopRhoExclusive(f64),
}

impl TruncationMode {
    pub fn validate(&self, vocab_size: usize) -> Result<()> {
        match *self {
            TruncationMode::TopK(k) if k == 0 || k > vocab_size => Err(
                Error::InvalidTruncation(format!("K={k} outside 1..={vocab_size}")),
            ),
            TruncationMode::TopRho(rho) | TruncationMode::TopRhoExclusive(rho)
                if !(rho > 0.0 && rho <= 1.0) =>
            {
                Err(Error::InvalidTruncation(format!("rho={rho} outside (0, 1]")))
            }
            _ => Ok(()),
        }
    }
}

impl fmt::Display for TruncationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TruncationMode::TopK(k) => write!(f, "topk:{k}"),
            TruncationMode::TopRho(r) => write!(f, "toprho:{r}"),
            TruncationMode::TopRhoExclusive(r) => write!(f, "toprho-excl:{r}"),
        }
    }
}

/// The kept set chosen by a truncation and the mass on either side of it.
#[derive(Debug, Clone, PartialEq)]
pub struct TruncationSpec {
    pub mode: TruncationMode,
    /// Kept token ids in rank order.
    pub kept: Vec<usize>,
    /// `ρ = Σ_{kept} q`.
    pub kept_mass: f64,
    /// `σ = Σ_{not kept} q`.
    pub discarded_mass: f64,
}

fn nucleus(q: &Categorical, rho: f64, exclusive: bool) -> Vec<usize> {
    let ranked = q.ranked();
    let mut cum = 0.0;
    let mut n = 0;
    for &t in &ranked {
        let next = cum + q.probs[t];
        if exclusive {
            if next >= rho - NUCLEUS_SLACK {
                break;
            }
            n += 1;
        } else {
            n += 1;
            if next >= rho - NUCLEUS_SLACK {
                break;
            }
        }
        cum = next;
    }
    let mut kept = ranked;
    kept.truncate(n.max(1));
    kept
}

/// Restricts `q` to a kept set and renormalizes inside it.
///
/// Returns `q̂` with `q̂(x) = q(x)/ρ` on the kept set and zero elsewhere.
pub fn truncate(q: &Categorical, mode: TruncationMode) -> Result<(Categorical, TruncationSpec)> {
    let v = q.vocab_size();
    mode.validate(v)?;
    let kept = match mode {
        TruncationMode::TopK(k) => q.top_k(k),
        TruncationMode::TopRho(rho) => nucleus(q, rho, false),
        TruncationMode::TopRhoExclusive(rho) => nucleus(q, rho, true),
    };
    let mut in_kept = vec![false; v];
    for &t in &kept {
        in_kept[t] = true;
    }
    let (mut kept_mass, mut discarded_mass) = (0.0, 0.0);
    for (t, &p) in q.probs.iter().enumerate() {
        if in_kept[t] {
            kept_mass += p;
        } else {
            discarded_mass += p;
        }
    }
    if !(kept_mass > 0.0) {
        return Err(Error::Internal("kept set carries no mass".into()));
    }
    let q_hat = if discarded_mass == 0.0 {
        q.clone()
    } else {
        let probs = q
            .probs
            .iter()
            .zip(&in_kept)
            .map(|(&p, &keep)| if keep { p / kept_mass } else { 0.0 })
            .collect();
        Categorical::new(probs)?
    };
    Ok((
        q_hat,
        TruncationSpec {
            mode,
            kept,
            kept_mass,
            discarded_mass,
        },
    ))
}

/// The sparse uplink form of a truncated distribution: kept ids and their
/// values, in rank order.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseLogits {
    entries: Vec<(usize, f64)>,
    source_size: usize,
}

impl SparseLogits {
    pub fn new(entries: Vec<(usize, f64)>, source_size: usize) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::InvalidTruncation("no entries".into()));
        }
        let mut seen = vec![false; source_size];
        for &(t, val) in &entries {
            if t >= source_size {
                return Err(Error::InvalidTruncation(format!(
                    "token {t} outside vocabulary of size {source_size}"
                )));
            }
            if std::mem::replace(&mut seen[t], true) {
                return Err(Error::InvalidTruncation(format!("duplicate token {t}")));
            }
            if !val.is_finite() || val < 0.0 {
                return Err(Error::InvalidTruncation(format!("bad value {val} for {t}")));
            }
        }
        Ok(Self {
            entries,
            source_size,
        })
    }

    /// Packs the kept entries of `q` selected by `spec`.
    pub fn from_truncation(q: &Categorical, spec: &TruncationSpec) -> Result<Self> {
        let entries = spec.kept.iter().map(|&t| (t, q.prob(t))).collect();
        Self::new(entries, q.vocab_size())
    }

    pub fn entries(&self) -> &[(usize, f64)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn source_size(&self) -> usize {
        self.source_size
    }

    /// Receiver-side reconstruction: scatter and renormalize.
    pub fn to_dense(&self) -> Result<Categorical> {
        let mut w = vec![0.0; self.source_size];
        for &(t, val) in &self.entries {
            w[t] = val;
        }
        Categorical::from_weights(w)
    }
}

/// A draft distribution as it travels uplink: the full vector, or the sparse
/// kept entries when truncation is active.
#[derive(Debug, Clone, PartialEq)]
pub enum UplinkDist {
    Dense(Categorical),
    Sparse {
        logits: SparseLogits,
        /// Mass the device discarded; bookkeeping only, never transmitted.
        discarded_mass: f64,
    },
}

impl UplinkDist {
    /// Applies the optional truncation to a raw draft distribution.
    ///
    /// Returns the uplink form and the distribution the device samples from
    /// (`q` itself, or the renormalized `q̂`).
    pub fn prepare(q: Categorical, truncation: Option<TruncationMode>) -> Result<(Self, Categorical)> {
        match truncation {
            None => Ok((UplinkDist::Dense(q.clone()), q)),
            Some(mode) => {
                let (q_hat, spec) = truncate(&q, mode)?;
                let logits = SparseLogits::from_truncation(&q, &spec)?;
                Ok((
                    UplinkDist::Sparse {
                        logits,
                        discarded_mass: spec.discarded_mass,
                    },
                    q_hat,
                ))
            }
        }
    }

    /// Number of (value, id) pairs on the wire.
    pub fn entries(&self) -> usize {
        match self {
            UplinkDist::Dense(q) => q.vocab_size(),
            UplinkDist::Sparse { logits, .. } => logits.len(),
        }
    }

    pub fn discarded_mass(&self) -> f64 {
        match self {
            UplinkDist::Dense(_) => 0.0,
            UplinkDist::Sparse { discarded_mass, .. } => *discarded_mass,
        }
    }

    /// The distribution the edge verifies against.
    pub fn to_dense(&self) -> Result<Categorical> {
        match self {
            UplinkDist::Dense(q) => Ok(q.clone()),
            UplinkDist::Sparse { logits, .. } => logits.to_dense(),
        }
    }
}
