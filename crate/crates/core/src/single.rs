//! Single-candidate distributed speculative decoding.
//!
//! The device drafts `L` tokens autoregressively (optionally from truncated
//! distributions), ships the tokens and their distributions uplink, and the
//! edge verifies them left to right with one uniform draw per position.

use rand::{Rng, RngCore};

use crate::error::Result;
use crate::perf::PayloadAccounting;
use crate::prob::{overlap, residual, sample, Categorical, TruncationMode, UplinkDist};
use crate::rng::{node_stream, SimRng};
use crate::synth::LanguageModel;
use crate::transcript::{OracleRecord, Transcript};

/// Which ratio the accept test compares the uniform draw against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AcceptRule {
    /// `min(1, p(x)/q(x))`, the lossless test.
    #[default]
    TargetOverDraft,
    /// `min(1, q(x)/p(x))`. Not lossless; kept to demonstrate that.
    DraftOverTarget,
}

impl AcceptRule {
    pub fn accept_probability(self, p: f64, q: f64) -> f64 {
        let (num, den) = match self {
            AcceptRule::TargetOverDraft => (p, q),
            AcceptRule::DraftOverTarget => (q, p),
        };
        if den > 0.0 {
            (num / den).min(1.0)
        } else if num > 0.0 {
            1.0
        } else {
            0.0
        }
    }
}

/// Drafted tokens and the distributions they were drawn from.
#[derive(Debug, Clone, PartialEq)]
pub struct DraftBatch {
    pub tokens: Vec<usize>,
    pub dists: Vec<UplinkDist>,
}

impl DraftBatch {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn uplink_entries(&self) -> usize {
        self.dists.iter().map(UplinkDist::entries).sum()
    }

    pub fn payload_bits(&self, accounting: &PayloadAccounting) -> u64 {
        self.dists
            .iter()
            .map(|d| accounting.dist_bits(d.entries()))
            .sum::<u64>()
            + accounting.draft_id_bits(self.tokens.len())
    }
}

/// Result of verifying one draft batch.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleOutcome {
    /// Verified tokens: accepted drafts followed by the resampled or bonus
    /// token.
    pub tokens: Vec<usize>,
    /// One flag per position checked.
    pub accept_flags: Vec<bool>,
    /// 1-based position of the first rejection.
    pub reject_position: Option<usize>,
    /// Exact acceptance probability `Σ min(q̂_j, p_j)` at each checked position.
    pub step_acceptance: Vec<f64>,
    /// Discarded mass of the draft distribution at each checked position.
    pub step_discarded_mass: Vec<f64>,
}

impl OracleOutcome {
    pub fn n_generated(&self) -> usize {
        self.tokens.len()
    }

    pub fn accepted_drafts(&self) -> usize {
        self.accept_flags.iter().filter(|&&a| a).count()
    }
}

pub fn tok_seq_draft<M: LanguageModel + ?Sized>(
    prefix: &[usize],
    draft: &M,
    len: usize,
    truncation: Option<TruncationMode>,
    rng: &mut SimRng,
) -> Result<DraftBatch> {
    let base = rng.next_u64();
    let mut context = prefix.to_vec();
    let mut tokens = Vec::with_capacity(len);
    let mut dists = Vec::with_capacity(len);
    for i in 1..=len {
        let (uplink, q) = UplinkDist::prepare(draft.next_dist(&context), truncation)?;
        let x = sample(&q, &mut node_stream(base, i - 1, 1));
        context.push(x);
        tokens.push(x);
        dists.push(uplink);
    }
    Ok(DraftBatch { tokens, dists })
}

pub fn tok_seq_veri<M: LanguageModel + ?Sized>(
    prefix: &[usize],
    target: &M,
    batch: &DraftBatch,
    rule: AcceptRule,
    rng: &mut SimRng,
) -> Result<OracleOutcome> {
    let base = rng.next_u64();
    let len = batch.len();
    let mut context = prefix.to_vec();
    let mut out = OracleOutcome {
        tokens: Vec::with_capacity(len + 1),
        accept_flags: Vec::with_capacity(len),
        reject_position: None,
        step_acceptance: Vec::with_capacity(len),
        step_discarded_mass: Vec::with_capacity(len),
    };
    for j in 1..=len {
        let p = target.next_dist(&context);
        let q = batch.dists[j - 1].to_dense()?;
        let x = batch.tokens[j - 1];
        let mut stream = node_stream(base, j - 1, 1);
        let r: f64 = stream.random();
        out.step_acceptance.push(overlap(&q, &p)?);
        out.step_discarded_mass.push(batch.dists[j - 1].discarded_mass());
        if r < rule.accept_probability(p.prob(x), q.prob(x)) {
            out.accept_flags.push(true);
            out.tokens.push(x);
            context.push(x);
        } else {
            out.accept_flags.push(false);
            out.reject_position = Some(j);
            let res = residual(&p, &q)?;
            out.tokens.push(sample(res.dist_or(&p), &mut stream));
            return Ok(out);
        }
    }
    let p = target.next_dist(&context);
    out.tokens.push(sample(&p, &mut node_stream(base, len, 1)));
    Ok(out)
}

/// Closed-form law of the token emitted at one position:
/// `min(p, q) + (1 - β)·norm(max(0, p - q))` with `β = Σ min(p, q)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactOutput {
    pub dist: Vec<f64>,
    /// Acceptance rate `β`.
    pub acceptance: f64,
}

pub fn sc_output_dist_exact(p: &Categorical, q: &Categorical) -> Result<ExactOutput> {
    let beta = overlap(p, q)?;
    let res = residual(p, q)?;
    let fallback = res.dist_or(p);
    let dist = p
        .probs()
        .iter()
        .zip(q.probs())
        .zip(fallback.probs())
        .map(|((&pp, &qq), &r)| pp.min(qq) + (1.0 - beta) * r)
        .collect();
    Ok(ExactOutput {
        dist,
        acceptance: beta,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScSessionConfig {
    pub draft_len: usize,
    pub truncation: Option<TruncationMode>,
    /// Stop once the full sequence (prefix included) reaches this length.
    pub stop_len: usize,
    pub accounting: PayloadAccounting,
    pub rule: AcceptRule,
}

/// One draft → upload → verify round.
pub fn run_sc_oracle<D, T>(
    draft: &D,
    target: &T,
    prefix: &[usize],
    cfg: &ScSessionConfig,
    rng: &mut SimRng,
) -> Result<(OracleOutcome, OracleRecord)>
where
    D: LanguageModel + ?Sized,
    T: LanguageModel + ?Sized,
{
    let batch = tok_seq_draft(prefix, draft, cfg.draft_len, cfg.truncation, rng)?;
    let outcome = tok_seq_veri(prefix, target, &batch, cfg.rule, rng)?;
    let record = OracleRecord {
        n_generated: outcome.n_generated(),
        attempts: outcome.accept_flags.len(),
        accepts: outcome.accepted_drafts(),
        analytic_accept_sum: outcome.step_acceptance.iter().sum(),
        discarded_mass_sum: outcome.step_discarded_mass.iter().sum(),
        uplink_entries: batch.uplink_entries(),
        payload_bits: batch.payload_bits(&cfg.accounting),
    };
    Ok((outcome, record))
}

pub fn run_sc_session<D, T>(
    draft: &D,
    target: &T,
    prefix: &[usize],
    cfg: &ScSessionConfig,
    rng: &mut SimRng,
) -> Result<Transcript>
where
    D: LanguageModel + ?Sized,
    T: LanguageModel + ?Sized,
{
    let mut seq = prefix.to_vec();
    let mut transcript = Transcript::default();
    while seq.len() < cfg.stop_len {
        let (outcome, record) = run_sc_oracle(draft, target, &seq, cfg, rng)?;
        seq.extend_from_slice(&outcome.tokens);
        transcript.oracles.push(record);
    }
    transcript.generated = seq.split_off(prefix.len());
    Ok(transcript)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prob::tv_distance;
    use crate::rng::from_seed;
    use crate::synth::{FixedModel, ModelPair};

    fn cat(p: &[f64]) -> Categorical {
        Categorical::new(p.to_vec()).unwrap()
    }

    #[test]
    fn point_mass_draft() {
        let m = FixedModel(Categorical::point_mass(5, 3).unwrap());
        let b = tok_seq_draft(&[], &m, 1, None, &mut from_seed(1)).unwrap();
        assert_eq!(b.tokens, vec![3]);
        assert_eq!(b.uplink_entries(), 5);
    }

    #[test]
    fn full_vocab_truncation_drafts_identically() {
        let pair = ModelPair::new(16, 2, 0.4, 2.0, 3).unwrap();
        let dense = tok_seq_draft(&[1], &pair.draft(), 6, None, &mut from_seed(9)).unwrap();
        let topv = tok_seq_draft(&[1], &pair.draft(), 6, Some(TruncationMode::TopK(16)), &mut from_seed(9))
            .unwrap();
        assert_eq!(dense.tokens, topv.tokens);
    }

    #[test]
    fn drafted_tokens_lie_in_kept_sets() {
        let pair = ModelPair::new(8, 2, 0.5, 1.0, 4).unwrap();
        for seed in 0..50 {
            let b = tok_seq_draft(&[0], &pair.draft(), 4, Some(TruncationMode::TopK(2)), &mut from_seed(seed))
                .unwrap();
            for (x, d) in b.tokens.iter().zip(&b.dists) {
                let UplinkDist::Sparse { logits, .. } = d else { panic!("expected sparse") };
                assert_eq!(logits.len(), 2);
                assert!(logits.entries().iter().any(|(t, _)| t == x));
            }
        }
    }

    #[test]
    fn identical_models_accept_everything() {
        let pair = ModelPair::new(32, 2, 0.0, 2.0, 5).unwrap();
        for seed in 0..50 {
            let mut rng = from_seed(seed);
            let b = tok_seq_draft(&[2], &pair.draft(), 4, None, &mut rng).unwrap();
            let o = tok_seq_veri(&[2], &pair.target(), &b, AcceptRule::default(), &mut rng).unwrap();
            assert_eq!(o.n_generated(), 5);
            assert_eq!(&o.tokens[..4], &b.tokens[..]);
            assert!(o.reject_position.is_none());
        }
    }

    #[test]
    fn zero_target_probability_forces_rejection() {
        let draft = FixedModel(Categorical::point_mass(3, 0).unwrap());
        let target = FixedModel(cat(&[0.0, 0.5, 0.5]));
        for seed in 0..20 {
            let mut rng = from_seed(seed);
            let b = tok_seq_draft(&[], &draft, 3, None, &mut rng).unwrap();
            let o = tok_seq_veri(&[], &target, &b, AcceptRule::default(), &mut rng).unwrap();
            assert_eq!(o.reject_position, Some(1));
            assert_eq!(o.n_generated(), 1);
            assert_ne!(o.tokens[0], 0);
        }
    }

    #[test]
    fn exact_output_law_is_target() {
        let p = cat(&[0.1, 0.5, 0.4]);
        let q = cat(&[0.6, 0.1, 0.3]);
        let out = sc_output_dist_exact(&p, &q).unwrap();
        for (a, b) in out.dist.iter().zip(p.probs()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((out.acceptance - (1.0 - tv_distance(&p, &q).unwrap())).abs() < 1e-12);
        let same = sc_output_dist_exact(&p, &p).unwrap();
        assert_eq!(same.acceptance, 1.0);
    }

    #[test]
    fn session_reaches_stop_length() {
        let pair = ModelPair::new(32, 2, 0.3, 2.0, 6).unwrap();
        let cfg = ScSessionConfig {
            draft_len: 3,
            truncation: Some(TruncationMode::TopK(8)),
            stop_len: 50,
            accounting: PayloadAccounting::new(32, 16),
            rule: AcceptRule::default(),
        };
        let t = run_sc_session(&pair.draft(), &pair.target(), &[1, 2], &cfg, &mut from_seed(3)).unwrap();
        assert!(t.generated.len() + 2 >= 50);
        let produced: usize = t.oracles.iter().map(|r| r.n_generated).sum();
        assert_eq!(produced, t.generated.len());
        for r in &t.oracles {
            assert!((1..=4).contains(&r.n_generated));
            assert_eq!(r.n_generated, r.accepts + 1);
            assert_eq!(r.payload_bits, 3 * 8 * (16 + 5));
        }
    }

    #[test]
    fn dense_and_full_vocab_sessions_match() {
        let pair = ModelPair::new(16, 2, 0.3, 2.0, 8).unwrap();
        let mut cfg = ScSessionConfig {
            draft_len: 4,
            truncation: None,
            stop_len: 40,
            accounting: PayloadAccounting::new(16, 16),
            rule: AcceptRule::default(),
        };
        let a = run_sc_session(&pair.draft(), &pair.target(), &[0], &cfg, &mut from_seed(4)).unwrap();
        cfg.truncation = Some(TruncationMode::TopK(16));
        let b = run_sc_session(&pair.draft(), &pair.target(), &[0], &cfg, &mut from_seed(4)).unwrap();
        // Edge-side renormalization may move the exact probabilities by an ulp.
        assert_eq!(a.generated, b.generated);
        assert_eq!(a.oracles.len(), b.oracles.len());
        for (x, y) in a.oracles.iter().zip(&b.oracles) {
            assert_eq!((x.n_generated, x.accepts, x.uplink_entries), (y.n_generated, y.accepts, y.uplink_entries));
            assert!((x.analytic_accept_sum - y.analytic_accept_sum).abs() < 1e-12);
        }
    }
}
