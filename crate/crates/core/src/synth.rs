//! Seeded synthetic draft/target model pairs.
//!
//! Distributions are generated on the fly from a hash of `(seed, role,
//! last n context tokens)`, so even a 32K vocabulary needs no stored tables.
//! The target puts weight `u_i^γ` on token `i` for hashed uniforms `u_i`; the
//! draft mixes the target with an independent distribution of the same shape,
//! `Q = (1-λ)·P + λ·N`, giving `tv(Q, P) = λ·tv(N, P)`.

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::prob::{overlap, truncate, Categorical, TruncationMode};
use crate::rng::{derive_seed, mix64, substream, unit_open_closed};

/// Anything that maps a context to a next-token distribution.
pub trait LanguageModel: Sync {
    fn vocab_size(&self) -> usize;
    fn next_dist(&self, context: &[usize]) -> Categorical;
}

/// A context-independent model.
#[derive(Debug, Clone)]
pub struct FixedModel(pub Categorical);

impl LanguageModel for FixedModel {
    fn vocab_size(&self) -> usize {
        self.0.vocab_size()
    }

    fn next_dist(&self, _context: &[usize]) -> Categorical {
        self.0.clone()
    }
}

/// Wraps a closure as a model.
pub struct FnModel<F> {
    vocab_size: usize,
    f: F,
}

impl<F> FnModel<F>
where
    F: Fn(&[usize]) -> Categorical + Sync,
{
    pub fn new(vocab_size: usize, f: F) -> Self {
        Self { vocab_size, f }
    }
}

impl<F> LanguageModel for FnModel<F>
where
    F: Fn(&[usize]) -> Categorical + Sync,
{
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn next_dist(&self, context: &[usize]) -> Categorical {
        (self.f)(context)
    }
}

const TARGET_STREAM: u64 = 1;
const NOISE_STREAM: u64 = 2;
const MAX_CONTEXT_ORDER: usize = 2;
const PAD: u64 = u64::MAX;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelPair {
    vocab_size: usize,
    context_order: usize,
    divergence: f64,
    concentration: f64,
    seed: u64,
}

impl ModelPair {
    pub fn new(
        vocab_size: usize,
        context_order: usize,
        divergence: f64,
        concentration: f64,
        seed: u64,
    ) -> Result<Self> {
        if vocab_size == 0 {
            return Err(Error::InvalidParameter("vocab_size must be positive".into()));
        }
        if context_order > MAX_CONTEXT_ORDER {
            return Err(Error::InvalidParameter(format!(
                "context_order {context_order} exceeds {MAX_CONTEXT_ORDER}"
            )));
        }
        if !(0.0..=1.0).contains(&divergence) {
            return Err(Error::InvalidParameter(format!(
                "divergence {divergence} outside [0, 1]"
            )));
        }
        if !(concentration > 0.0 && concentration.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "concentration {concentration} must be positive"
            )));
        }
        Ok(Self {
            vocab_size,
            context_order,
            divergence,
            concentration,
            seed,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn context_order(&self) -> usize {
        self.context_order
    }

    pub fn divergence(&self) -> f64 {
        self.divergence
    }

    pub fn concentration(&self) -> f64 {
        self.concentration
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn with_divergence(&self, divergence: f64) -> Result<Self> {
        Self::new(
            self.vocab_size,
            self.context_order,
            divergence,
            self.concentration,
            self.seed,
        )
    }

    pub fn with_concentration(&self, concentration: f64) -> Result<Self> {
        Self::new(
            self.vocab_size,
            self.context_order,
            self.divergence,
            concentration,
            self.seed,
        )
    }

    fn context_key(&self, stream: u64, context: &[usize]) -> u64 {
        let mut keys = [PAD; MAX_CONTEXT_ORDER + 1];
        keys[0] = stream;
        let tail = &context[context.len().saturating_sub(self.context_order)..];
        let offset = self.context_order - tail.len();
        for (slot, &t) in keys[1 + offset..].iter_mut().zip(tail) {
            *slot = t as u64;
        }
        derive_seed(self.seed, &keys[..=self.context_order])
    }

    fn peaked(&self, key: u64) -> Categorical {
        let golden = 0x9E37_79B9_7F4A_7C15u64;
        let logs: Vec<f64> = (0..self.vocab_size as u64)
            .map(|i| unit_open_closed(mix64(key ^ (i + 1).wrapping_mul(golden))).ln())
            .collect();
        let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        // u_i^γ / u_max^γ, computed in the log domain so large γ cannot underflow
        // every weight.
        let weights = logs
            .iter()
            .map(|l| (self.concentration * (l - top)).exp())
            .collect();
        Categorical::from_weights(weights).expect("top weight is exactly one")
    }

    /// Target (edge LLM) distribution after `context`.
    pub fn target_dist(&self, context: &[usize]) -> Categorical {
        self.peaked(self.context_key(TARGET_STREAM, context))
    }

    /// The independent component mixed into the draft.
    pub fn noise_dist(&self, context: &[usize]) -> Categorical {
        self.peaked(self.context_key(NOISE_STREAM, context))
    }

    /// Draft (device SLM) distribution after `context`.
    pub fn draft_dist(&self, context: &[usize]) -> Categorical {
        let target = self.target_dist(context);
        if self.divergence == 0.0 {
            return target;
        }
        target
            .mix(&self.noise_dist(context), self.divergence)
            .expect("same vocabulary")
    }

    pub fn target(&self) -> TargetModel<'_> {
        TargetModel(self)
    }

    pub fn draft(&self) -> DraftModel<'_> {
        DraftModel(self)
    }

    /// Mean single-step acceptance rate `E[Σ min(q̂, p)]` over `contexts`.
    pub fn expected_alpha(
        &self,
        contexts: &[Vec<usize>],
        truncation: Option<TruncationMode>,
    ) -> Result<f64> {
        let mut total = 0.0;
        for ctx in contexts {
            let p = self.target_dist(ctx);
            let mut q = self.draft_dist(ctx);
            if let Some(mode) = truncation {
                q = truncate(&q, mode)?.0;
            }
            total += overlap(&q, &p)?;
        }
        Ok(total / contexts.len().max(1) as f64)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct TargetModel<'a>(&'a ModelPair);

#[derive(Debug, Clone, Copy)]
pub struct DraftModel<'a>(&'a ModelPair);

impl LanguageModel for TargetModel<'_> {
    fn vocab_size(&self) -> usize {
        self.0.vocab_size
    }

    fn next_dist(&self, context: &[usize]) -> Categorical {
        self.0.target_dist(context)
    }
}

impl LanguageModel for DraftModel<'_> {
    fn vocab_size(&self) -> usize {
        self.0.vocab_size
    }

    fn next_dist(&self, context: &[usize]) -> Categorical {
        self.0.draft_dist(context)
    }
}

/// Uniformly random contexts of length `len`, reproducible from `seed`.
pub fn sample_contexts(vocab_size: usize, len: usize, count: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut rng = substream(seed, &[0xC0_7E_47]);
    (0..count)
        .map(|_| (0..len).map(|_| rng.random_range(0..vocab_size)).collect())
        .collect()
}

/// Mixing weight λ at which the mean acceptance rate over `contexts` is
/// `target_alpha`.
///
/// Bisects on λ; the acceptance rate is `1 - λ·E[tv(N, P)]`, so it falls
/// monotonically from 1 at λ=0 to its minimum at λ=1.
pub fn calibrate_alpha(pair: &ModelPair, target_alpha: f64, contexts: &[Vec<usize>]) -> Result<f64> {
    const TOL: f64 = 1e-6;
    if !(target_alpha > 0.0 && target_alpha <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "target alpha {target_alpha} outside (0, 1]"
        )));
    }
    if contexts.is_empty() {
        return Err(Error::InvalidParameter("no calibration contexts".into()));
    }
    let pairs: Vec<(Categorical, Categorical)> = contexts
        .par_iter()
        .map(|c| (pair.target_dist(c), pair.noise_dist(c)))
        .collect();
    let measure = |lambda: f64| -> f64 {
        let overlaps: Vec<f64> = pairs
            .par_iter()
            .map(|(p, n)| overlap(&p.mix(n, lambda).expect("same vocabulary"), p).unwrap())
            .collect();
        overlaps.iter().sum::<f64>() / pairs.len() as f64
    };
    if target_alpha >= 1.0 - TOL {
        return Ok(0.0);
    }
    let floor = measure(1.0);
    if target_alpha < floor {
        return Err(Error::UnreachableAlpha {
            target: target_alpha,
            min: floor,
            max: 1.0,
        });
    }
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        let a = measure(mid);
        if (a - target_alpha).abs() < TOL {
            return Ok(mid);
        }
        if a > target_alpha {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Concentration γ at which the target's mean top-`k` mass over `contexts`
/// is `target_mass`. Bisects on `ln γ` over `[1e-3, 1e5]`.
pub fn calibrate_concentration(
    pair: &ModelPair,
    k: usize,
    target_mass: f64,
    contexts: &[Vec<usize>],
) -> Result<f64> {
    if k == 0 || k > pair.vocab_size() {
        return Err(Error::InvalidParameter(format!(
            "k={k} outside 1..={}",
            pair.vocab_size()
        )));
    }
    if contexts.is_empty() {
        return Err(Error::InvalidParameter("no calibration contexts".into()));
    }
    let mass = |gamma: f64| -> Result<f64> {
        let p = pair.with_concentration(gamma)?;
        let masses: Vec<f64> = contexts.par_iter().map(|c| p.target_dist(c).top_k_mass(k)).collect();
        Ok(masses.iter().sum::<f64>() / contexts.len() as f64)
    };
    let (mut lo, mut hi) = (1e-3f64.ln(), 1e5f64.ln());
    let (m_lo, m_hi) = (mass(lo.exp())?, mass(hi.exp())?);
    if !(m_lo..=m_hi).contains(&target_mass) {
        return Err(Error::InvalidParameter(format!(
            "top-{k} mass {target_mass} outside achievable [{m_lo:.4}, {m_hi:.4}]"
        )));
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        let m = mass(mid.exp())?;
        if (m - target_mass).abs() < 1e-6 {
            return Ok(mid.exp());
        }
        if m < target_mass {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok((0.5 * (lo + hi)).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prob::tv_distance;

    fn pair(lambda: f64) -> ModelPair {
        ModelPair::new(64, 2, lambda, 4.0, 99).unwrap()
    }

    #[test]
    fn distributions_are_pure_functions_of_seed_and_context() {
        let p = pair(0.3);
        assert_eq!(p.target_dist(&[1, 2, 3]), p.target_dist(&[9, 2, 3]));
        assert_eq!(p.draft_dist(&[4, 5]), p.draft_dist(&[4, 5]));
        assert_ne!(p.target_dist(&[1, 2]), p.target_dist(&[2, 1]));
        let other = ModelPair::new(64, 2, 0.3, 4.0, 100).unwrap();
        assert_ne!(p.target_dist(&[1, 2]), other.target_dist(&[1, 2]));
    }

    #[test]
    fn short_contexts_are_padded() {
        let p = pair(0.0);
        assert_ne!(p.target_dist(&[]), p.target_dist(&[0]));
        assert_ne!(p.target_dist(&[3]), p.target_dist(&[0, 3]));
        let unigram = ModelPair::new(16, 0, 0.0, 1.0, 1).unwrap();
        assert_eq!(unigram.target_dist(&[1]), unigram.target_dist(&[7, 7]));
    }

    #[test]
    fn zero_divergence_means_identical_models() {
        let p = pair(0.0);
        for ctx in sample_contexts(64, 2, 20, 1) {
            assert_eq!(p.draft_dist(&ctx), p.target_dist(&ctx));
        }
    }

    #[test]
    fn large_concentration_concentrates_on_top_token() {
        let p = ModelPair::new(128, 1, 0.0, 1e4, 5).unwrap();
        assert!(p.target_dist(&[3]).top_k_mass(1) > 0.99);
    }

    #[test]
    fn tv_non_decreasing_in_divergence() {
        let ctxs = sample_contexts(64, 2, 50, 2);
        for ctx in &ctxs {
            let mut prev = -1.0;
            for lambda in [0.0, 0.25, 0.5, 0.75, 1.0] {
                let p = pair(lambda);
                let d = tv_distance(&p.draft_dist(ctx), &p.target_dist(ctx)).unwrap();
                assert!(d >= prev - 1e-15);
                prev = d;
            }
        }
    }

    #[test]
    fn full_divergence_gives_low_alpha() {
        let p = ModelPair::new(256, 2, 1.0, 8.0, 3).unwrap();
        let ctxs = sample_contexts(256, 2, 1000, 4);
        let alpha = p.expected_alpha(&ctxs, None).unwrap();
        assert!(alpha < 0.5, "alpha={alpha}");
    }

    #[test]
    fn calibration_hits_target() {
        let base = ModelPair::new(256, 2, 0.0, 8.0, 17).unwrap();
        let ctxs = sample_contexts(256, 2, 1000, 5);
        assert_eq!(calibrate_alpha(&base, 1.0, &ctxs).unwrap(), 0.0);

        let l8 = calibrate_alpha(&base, 0.8, &ctxs).unwrap();
        let fresh = sample_contexts(256, 2, 1000, 6);
        let alpha = base.with_divergence(l8).unwrap().expected_alpha(&fresh, None).unwrap();
        assert!((0.79..=0.81).contains(&alpha), "alpha={alpha}");

        let l5 = calibrate_alpha(&base, 0.5, &ctxs).unwrap();
        assert!(l5 > l8);
    }

    #[test]
    fn calibration_reports_reachable_range() {
        let base = ModelPair::new(32, 2, 0.0, 0.5, 17).unwrap();
        let ctxs = sample_contexts(32, 2, 100, 5);
        match calibrate_alpha(&base, 0.05, &ctxs) {
            Err(Error::UnreachableAlpha { min, max, .. }) => {
                assert!(min > 0.05);
                assert_eq!(max, 1.0);
            }
            other => panic!("expected unreachable, got {other:?}"),
        }
        assert!(calibrate_alpha(&base, 0.0, &ctxs).is_err());
    }

    #[test]
    fn concentration_calibration() {
        let base = ModelPair::new(512, 2, 0.0, 1.0, 8).unwrap();
        let ctxs = sample_contexts(512, 2, 100, 9);
        let gamma = calibrate_concentration(&base, 5, 0.85, &ctxs).unwrap();
        let tuned = base.with_concentration(gamma).unwrap();
        let mass: f64 = ctxs.iter().map(|c| tuned.target_dist(c).top_k_mass(5)).sum::<f64>()
            / ctxs.len() as f64;
        assert!((mass - 0.85).abs() < 1e-4, "mass={mass}");
        assert!(calibrate_concentration(&base, 5, 0.001, &ctxs).is_err());
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(ModelPair::new(0, 1, 0.0, 1.0, 0).is_err());
        assert!(ModelPair::new(8, 3, 0.0, 1.0, 0).is_err());
        assert!(ModelPair::new(8, 1, 1.5, 1.0, 0).is_err());
        assert!(ModelPair::new(8, 1, 0.5, 0.0, 0).is_err());
    }
}
