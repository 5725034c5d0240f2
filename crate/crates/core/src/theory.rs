//! Executable checks of the distortion bounds for truncated uploads, fuzz
//! generators for them, and the measurement campaigns over synthetic pairs.
//!
//! Notation: `β = 1 - tv(q, p)` is the acceptance rate of a draft `q`
//! against a target `p`, `q̂` is a truncation of `q` with discarded mass `σ`,
//! and `P^(i)` is the `i`-th residual of the target against the draft
//! (`P^(1) = P`). Hatted chains use `q̂` in every residual step.

use std::fmt;

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::multi::{mc_output_dist_exact, run_mc_session, McSessionConfig};
use crate::perf::PayloadAccounting;
use crate::prob::{residual, truncate, tv_distance, Categorical, TruncationMode};
use crate::rng::{derive_seed, from_seed, substream, SimRng};
use crate::single::{run_sc_session, sc_output_dist_exact, AcceptRule, ScSessionConfig};
use crate::synth::{sample_contexts, LanguageModel, ModelPair};
use crate::transcript::SessionTotals;
use crate::tree::ExpansionConfig;

/// Slack allowed when comparing a left-hand side against its bound.
pub const BOUND_TOLERANCE: f64 = 1e-9;

/// Residual normalizers below this are treated as a degenerate chain.
pub const DEGENERATE_Z: f64 = 1e-9;

/// Chains with a normalizer below this are reported but not asserted.
pub const Z_FLOOR: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CheckKind {
    SigmaIdentity,
    Theorem1,
    Lemma2,
    Lemma3,
    Lemma4,
    Corollary1,
    Theorem2,
    LosslessSingle,
    LosslessMulti,
}

impl CheckKind {
    pub fn label(self) -> &'static str {
        match self {
            CheckKind::SigmaIdentity => "sigma_identity",
            CheckKind::Theorem1 => "theorem1",
            CheckKind::Lemma2 => "lemma2",
            CheckKind::Lemma3 => "lemma3",
            CheckKind::Lemma4 => "lemma4",
            CheckKind::Corollary1 => "corollary1",
            CheckKind::Theorem2 => "theorem2",
            CheckKind::LosslessSingle => "lossless_sc",
            CheckKind::LosslessMulti => "lossless_mc",
        }
    }
}

impl fmt::Display for CheckKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Identifies the instance a report was computed on.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub seed: u64,
    pub vocab_size: usize,
    pub truncation: Option<TruncationMode>,
    /// Candidate count or chain level, zero when not applicable.
    pub k: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundReport {
    pub kind: CheckKind,
    pub instance: Instance,
    pub lhs: f64,
    pub rhs: f64,
    pub satisfied: bool,
    pub slack: f64,
    /// Whether a failure counts as a violation.
    pub asserted: bool,
    /// The bound exceeds the largest value the left side can take.
    pub vacuous: bool,
    pub note: Option<String>,
}

impl BoundReport {
    pub fn new(kind: CheckKind, instance: Instance, lhs: f64, rhs: f64) -> Self {
        Self {
            kind,
            instance,
            lhs,
            rhs,
            satisfied: lhs <= rhs + BOUND_TOLERANCE,
            slack: rhs - lhs,
            asserted: true,
            vacuous: false,
            note: None,
        }
    }

    pub fn is_violation(&self) -> bool {
        self.asserted && !self.satisfied
    }
}

/// `lhs = |tv(q̂, q) - σ|`, `rhs = 0`.
pub fn check_sigma_identity(q: &Categorical, mode: TruncationMode, instance: Instance) -> Result<BoundReport> {
    let (q_hat, spec) = truncate(q, mode)?;
    let tv = tv_distance(&q_hat, q)?;
    Ok(BoundReport::new(
        CheckKind::SigmaIdentity,
        instance,
        (tv - spec.discarded_mass).abs(),
        0.0,
    ))
}

/// `lhs = |β̂ - β|`, `rhs = σ`.
pub fn check_theorem1(
    p: &Categorical,
    q: &Categorical,
    mode: TruncationMode,
    instance: Instance,
) -> Result<BoundReport> {
    let (q_hat, spec) = truncate(q, mode)?;
    let beta = 1.0 - tv_distance(q, p)?;
    let beta_hat = 1.0 - tv_distance(&q_hat, p)?;
    Ok(BoundReport::new(
        CheckKind::Theorem1,
        instance,
        (beta_hat - beta).abs(),
        spec.discarded_mass,
    ))
}

/// `lhs = |tv(q̂, p) - tv(q, p)|`, `rhs = tv(q̂, q)`.
pub fn check_lemma_triangle(
    p: &Categorical,
    q: &Categorical,
    q_hat: &Categorical,
    instance: Instance,
) -> Result<BoundReport> {
    let lhs = (tv_distance(q_hat, p)? - tv_distance(q, p)?).abs();
    Ok(BoundReport::new(CheckKind::Lemma2, instance, lhs, tv_distance(q_hat, q)?))
}

/// `lhs = |tv(q̂, p̂) - tv(q, p)|`, `rhs = tv(q̂, q) + tv(p̂, p)`.
pub fn check_lemma3(
    p: &Categorical,
    q: &Categorical,
    p_hat: &Categorical,
    q_hat: &Categorical,
    instance: Instance,
) -> Result<BoundReport> {
    let lhs = (tv_distance(q_hat, p_hat)? - tv_distance(q, p)?).abs();
    let rhs = tv_distance(q_hat, q)? + tv_distance(p_hat, p)?;
    Ok(BoundReport::new(CheckKind::Lemma3, instance, lhs, rhs))
}

/// Bound reports for one residual chain, level by level.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainReport {
    pub reports: Vec<BoundReport>,
    /// `Z^(s)` of the untruncated chain for `s = 2..`, as far as computed.
    pub normalizers: Vec<f64>,
    /// Level at which either chain degenerated, if any.
    pub degenerate_at: Option<usize>,
}

impl ChainReport {
    pub fn min_normalizer(&self) -> f64 {
        self.normalizers.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// All normalizers cleared [`Z_FLOOR`] and the chain reached full depth.
    pub fn above_floor(&self) -> bool {
        self.degenerate_at.is_none() && self.min_normalizer() >= Z_FLOOR
    }

    pub fn violations(&self) -> usize {
        self.reports.iter().filter(|r| r.is_violation()).count()
    }
}

/// Walks the residual chains of `p` against `q` and against `q̂` for
/// `depth` levels and reports, at every level `i ≥ 2`:
///
/// * the one-step bound `D_i ≤ (2/Z^(i))·(D_{i-1} + σ)` where
///   `D_i = tv(P^(i), P̂^(i))` and `Z^(i) = Σ max(0, p^(i-1) - q)`;
/// * at `i = 2`, the base case `D_2 ≤ (2/Z^(2))·σ`;
/// * the unrolled bound on the level's acceptance rate,
///   `|β̂^(i) - β^(i)| ≤ Σ_{k=1}^{i-1} Π_{s=k+1}^{i} (2/Z^(s))·σ + σ`.
///
/// Level 1 reports the acceptance bound only, which there reduces to `σ`.
/// Reports are asserted only while every `Z^(s)` so far is at least
/// [`Z_FLOOR`].
pub fn check_lemma4_chain(
    p: &Categorical,
    q: &Categorical,
    mode: TruncationMode,
    depth: usize,
    seed: u64,
) -> Result<ChainReport> {
    if depth == 0 {
        return Err(Error::InvalidParameter("chain depth must be at least 1".into()));
    }
    let (q_hat, spec) = truncate(q, mode)?;
    let sigma = spec.discarded_mass;
    let instance = |level: usize| Instance {
        seed,
        vocab_size: p.vocab_size(),
        truncation: Some(mode),
        k: level,
    };
    let mut out = ChainReport {
        reports: Vec::new(),
        normalizers: Vec::new(),
        degenerate_at: None,
    };
    let (mut cur, mut cur_hat) = (p.clone(), p.clone());
    let mut d_prev = 0.0;
    // Unrolled bound on D_i divided by σ: Σ_{k<i} Π_{s=k+1}^{i} 2/Z^(s).
    let mut unrolled = 0.0;
    let mut floor_ok = true;
    let acceptance = |level: usize, cur: &Categorical, cur_hat: &Categorical, bound: f64, asserted: bool| {
        let beta = 1.0 - tv_distance(q, cur)?;
        let beta_hat = 1.0 - tv_distance(&q_hat, cur_hat)?;
        let mut r = BoundReport::new(CheckKind::Theorem2, instance(level), (beta_hat - beta).abs(), bound);
        r.asserted = asserted;
        r.vacuous = bound > 1.0;
        Ok::<_, Error>(r)
    };
    out.reports.push(acceptance(1, &cur, &cur_hat, sigma, true)?);
    for level in 2..=depth {
        let step = residual(&cur, q)?;
        let step_hat = residual(&cur_hat, &q_hat)?;
        let usable = step.mass >= DEGENERATE_Z && step_hat.mass >= DEGENERATE_Z;
        let (true, Some(next), Some(next_hat)) = (usable, step.dist, step_hat.dist) else {
            out.degenerate_at = Some(level);
            let mut r = BoundReport::new(CheckKind::Lemma4, instance(level), 0.0, 0.0);
            r.asserted = false;
            r.note = Some(format!(
                "degenerate residual: Z={:.3e}, Z_hat={:.3e}",
                step.mass, step_hat.mass
            ));
            out.reports.push(r);
            break;
        };
        let z = step.mass;
        out.normalizers.push(z);
        floor_ok &= z >= Z_FLOOR;
        let d = tv_distance(&next, &next_hat)?;
        let factor = 2.0 / z;

        let mut r = BoundReport::new(CheckKind::Lemma4, instance(level), d, factor * (d_prev + sigma));
        r.asserted = floor_ok;
        r.vacuous = r.rhs > 1.0;
        out.reports.push(r);
        if level == 2 {
            let mut c = BoundReport::new(CheckKind::Corollary1, instance(level), d, factor * sigma);
            c.asserted = floor_ok;
            c.vacuous = c.rhs > 1.0;
            out.reports.push(c);
        }
        unrolled = factor * (unrolled + 1.0);
        out.reports.push(acceptance(level, &next, &next_hat, (unrolled + 1.0) * sigma, floor_ok)?);

        d_prev = d;
        cur = next;
        cur_hat = next_hat;
    }
    Ok(out)
}

/// `lhs = max_x |out(x) - p(x)|` for the single-candidate output law with
/// draft `q̂`, `rhs = 0`.
pub fn check_lossless_single(
    p: &Categorical,
    q_hat: &Categorical,
    instance: Instance,
) -> Result<BoundReport> {
    let out = sc_output_dist_exact(p, q_hat)?;
    Ok(BoundReport::new(CheckKind::LosslessSingle, instance, max_abs_diff(&out.dist, p.probs()), 0.0))
}

/// Multi-candidate analogue of [`check_lossless_single`] with `k`
/// candidates.
pub fn check_lossless_multi(
    p: &Categorical,
    q_hat: &Categorical,
    k: usize,
    instance: Instance,
) -> Result<BoundReport> {
    let out = mc_output_dist_exact(p, q_hat, k)?;
    Ok(BoundReport::new(CheckKind::LosslessMulti, instance, max_abs_diff(&out.dist, p.probs()), 0.0))
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Random categorical: exponential weights, with a random subset zeroed in
/// about a third of draws. At least one entry stays positive.
pub fn fuzz_categorical<R: Rng + ?Sized>(vocab_size: usize, rng: &mut R) -> Categorical {
    let sparse = rng.random_bool(0.3);
    let mut w: Vec<f64> = (0..vocab_size)
        .map(|_| {
            let e = -(1.0 - rng.random::<f64>()).ln();
            if sparse && rng.random_bool(0.4) {
                0.0
            } else {
                e
            }
        })
        .collect();
    if w.iter().all(|&x| x == 0.0) {
        let i = rng.random_range(0..vocab_size);
        w[i] = 1.0;
    }
    Categorical::from_weights(w).expect("positive weights")
}

/// Top-K with K uniform in `1..=V`, or Top-ρ with ρ uniform over
/// `{0.1, 0.2, ..., 1.0}`, with equal odds.
pub fn fuzz_truncation<R: Rng + ?Sized>(vocab_size: usize, rng: &mut R) -> TruncationMode {
    if rng.random_bool(0.5) {
        TruncationMode::TopK(rng.random_range(1..=vocab_size))
    } else {
        TruncationMode::TopRho(rng.random_range(1..=10u32) as f64 / 10.0)
    }
}

fn instance_rng(seed: u64, kind: CheckKind, index: usize) -> (u64, SimRng) {
    let s = derive_seed(seed, &[kind as u64, index as u64]);
    (s, from_seed(s))
}

/// Which fuzz campaign to run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FuzzCampaign {
    /// σ-identity and Theorem 1 on random `(p, q, truncation)`.
    Theorem1 { vocab_range: (usize, usize) },
    /// Lemma 2 on random triples.
    Lemma2 { vocab_range: (usize, usize) },
    /// Lemma 3 on random quadruples.
    Lemma3 { vocab_range: (usize, usize) },
    /// Residual chains with Top-K truncation of depth `2..=max_depth`.
    Chains { vocab_size: usize, top_k: usize, max_depth: usize },
    /// Exact output laws, one and `1..=max_k` candidates.
    Lossless { vocab_range: (usize, usize), max_k: usize },
}

/// Reports of one fuzz instance.
fn fuzz_instance(campaign: FuzzCampaign, seed: u64, index: usize) -> Result<(Vec<BoundReport>, Option<ChainReport>)> {
    let mut reports = Vec::new();
    let mut chain = None;
    match campaign {
        FuzzCampaign::Theorem1 { vocab_range } => {
            let (s, mut rng) = instance_rng(seed, CheckKind::Theorem1, index);
            let v = rng.random_range(vocab_range.0..=vocab_range.1);
            let p = fuzz_categorical(v, &mut rng);
            let q = fuzz_categorical(v, &mut rng);
            let mode = fuzz_truncation(v, &mut rng);
            let inst = Instance { seed: s, vocab_size: v, truncation: Some(mode), k: 0 };
            reports.push(check_sigma_identity(&q, mode, inst.clone())?);
            reports.push(check_theorem1(&p, &q, mode, inst)?);
        }
        FuzzCampaign::Lemma2 { vocab_range } => {
            let (s, mut rng) = instance_rng(seed, CheckKind::Lemma2, index);
            let v = rng.random_range(vocab_range.0..=vocab_range.1);
            let p = fuzz_categorical(v, &mut rng);
            let q = fuzz_categorical(v, &mut rng);
            let q_hat = fuzz_categorical(v, &mut rng);
            let inst = Instance { seed: s, vocab_size: v, truncation: None, k: 0 };
            reports.push(check_lemma_triangle(&p, &q, &q_hat, inst)?);
        }
        FuzzCampaign::Lemma3 { vocab_range } => {
            let (s, mut rng) = instance_rng(seed, CheckKind::Lemma3, index);
            let v = rng.random_range(vocab_range.0..=vocab_range.1);
            let p = fuzz_categorical(v, &mut rng);
            let q = fuzz_categorical(v, &mut rng);
            let p_hat = fuzz_categorical(v, &mut rng);
            let q_hat = fuzz_categorical(v, &mut rng);
            let inst = Instance { seed: s, vocab_size: v, truncation: None, k: 0 };
            reports.push(check_lemma3(&p, &q, &p_hat, &q_hat, inst)?);
        }
        FuzzCampaign::Chains { vocab_size, top_k, max_depth } => {
            let (s, mut rng) = instance_rng(seed, CheckKind::Lemma4, index);
            let p = fuzz_categorical(vocab_size, &mut rng);
            let q = fuzz_categorical(vocab_size, &mut rng);
            let depth = rng.random_range(2..=max_depth.max(2));
            let c = check_lemma4_chain(&p, &q, TruncationMode::TopK(top_k), depth, s)?;
            reports.extend(c.reports.iter().cloned());
            chain = Some(c);
        }
        FuzzCampaign::Lossless { vocab_range, max_k } => {
            let (s, mut rng) = instance_rng(seed, CheckKind::LosslessSingle, index);
            let v = rng.random_range(vocab_range.0..=vocab_range.1);
            let p = fuzz_categorical(v, &mut rng);
            let q = fuzz_categorical(v, &mut rng);
            let mode = fuzz_truncation(v, &mut rng);
            let (q_hat, _) = truncate(&q, mode)?;
            let inst = |k| Instance { seed: s, vocab_size: v, truncation: Some(mode), k };
            reports.push(check_lossless_single(&p, &q_hat, inst(1))?);
            for k in 1..=max_k {
                reports.push(check_lossless_multi(&p, &q_hat, k, inst(k))?);
            }
        }
    }
    Ok((reports, chain))
}

/// Outcome of a fuzz campaign; reports are in instance order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FuzzOutcome {
    pub reports: Vec<BoundReport>,
    pub chains: Vec<ChainReport>,
}

impl FuzzOutcome {
    pub fn violations(&self) -> Vec<&BoundReport> {
        self.reports.iter().filter(|r| r.is_violation()).collect()
    }

    pub fn count(&self, kind: CheckKind) -> usize {
        self.reports.iter().filter(|r| r.kind == kind).count()
    }

    pub fn max_lhs(&self, kind: CheckKind) -> f64 {
        self.reports
            .iter()
            .filter(|r| r.kind == kind)
            .map(|r| r.lhs)
            .fold(0.0, f64::max)
    }
}

/// Runs `instances` fuzz instances in parallel on the current rayon pool.
/// The result depends only on `campaign`, `instances` and `seed`.
pub fn run_fuzz(campaign: FuzzCampaign, instances: usize, seed: u64) -> Result<FuzzOutcome> {
    let parts: Vec<_> = (0..instances)
        .into_par_iter()
        .map(|i| fuzz_instance(campaign, seed, i))
        .collect::<Result<_>>()?;
    let mut out = FuzzOutcome::default();
    for (reports, chain) in parts {
        out.reports.extend(reports);
        out.chains.extend(chain);
    }
    Ok(out)
}

/// Mean top-`k` mass of `model` over `contexts`, one row per `k`.
pub fn topk_mass_curve<M: LanguageModel + ?Sized>(
    model: &M,
    contexts: &[Vec<usize>],
    ks: &[usize],
) -> Result<Vec<(usize, f64)>> {
    if contexts.is_empty() {
        return Err(Error::InvalidParameter("no contexts".into()));
    }
    let v = model.vocab_size();
    if let Some(&k) = ks.iter().find(|&&k| k == 0 || k > v) {
        return Err(Error::InvalidParameter(format!("k={k} outside 1..={v}")));
    }
    let per_context: Vec<Vec<f64>> = contexts
        .par_iter()
        .map(|c| {
            let dist = model.next_dist(c);
            ks.iter().map(|&k| dist.top_k_mass(k)).collect()
        })
        .collect();
    Ok(ks
        .iter()
        .enumerate()
        .map(|(j, &k)| {
            let total: f64 = per_context.iter().map(|m| m[j]).sum();
            (k, total / contexts.len() as f64)
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Protocol {
    Single,
    Multi,
}

impl Protocol {
    pub fn label(self) -> &'static str {
        match self {
            Protocol::Single => "sc",
            Protocol::Multi => "mc",
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Settings shared by every point of an acceptance campaign.
#[derive(Debug, Clone, PartialEq)]
pub struct CampaignSettings {
    pub draft_len: usize,
    pub expansion: ExpansionConfig,
    /// Sessions per point.
    pub trials: usize,
    /// Tokens generated per session.
    pub session_len: usize,
    pub prefix_len: usize,
    pub b_prob: u32,
    pub seed: u64,
}

/// Pooled statistics of one (protocol, truncation) point.
#[derive(Debug, Clone, PartialEq)]
pub struct AcceptancePoint {
    pub protocol: Protocol,
    pub truncation: Option<TruncationMode>,
    pub totals: SessionTotals,
}

impl AcceptancePoint {
    /// Entries kept per distribution for Top-K, or `V` when untruncated.
    pub fn kept(&self, vocab_size: usize) -> Option<usize> {
        match self.truncation {
            None => Some(vocab_size),
            Some(TruncationMode::TopK(k)) => Some(k),
            Some(_) => None,
        }
    }
}

/// Runs `settings.trials` sessions for every protocol and truncation.
///
/// Trial `t` uses the same prefix and random stream for every truncation of
/// a protocol, so differences between truncations are paired.
pub fn acceptance_campaign(
    pair: &ModelPair,
    protocols: &[Protocol],
    truncations: &[Option<TruncationMode>],
    settings: &CampaignSettings,
) -> Result<Vec<AcceptancePoint>> {
    if settings.trials == 0 {
        return Err(Error::InvalidParameter("campaign needs at least one trial".into()));
    }
    let v = pair.vocab_size();
    let prefixes = sample_contexts(v, settings.prefix_len, settings.trials, settings.seed);
    let accounting = PayloadAccounting::new(v, settings.b_prob);
    let mut jobs = Vec::new();
    for &protocol in protocols {
        for &truncation in truncations {
            for (t, prefix) in prefixes.iter().enumerate() {
                jobs.push((protocol, truncation, t, prefix));
            }
        }
    }
    let transcripts: Vec<_> = jobs
        .par_iter()
        .map(|&(protocol, truncation, t, prefix)| {
            let mut rng = substream(settings.seed, &[protocol as u64, t as u64]);
            let stop_len = prefix.len() + settings.session_len;
            let transcript = match protocol {
                Protocol::Single => run_sc_session(
                    &pair.draft(),
                    &pair.target(),
                    prefix,
                    &ScSessionConfig {
                        draft_len: settings.draft_len,
                        truncation,
                        stop_len,
                        accounting,
                        rule: AcceptRule::default(),
                    },
                    &mut rng,
                ),
                Protocol::Multi => run_mc_session(
                    &pair.draft(),
                    &pair.target(),
                    prefix,
                    &McSessionConfig {
                        expansion: settings.expansion.clone(),
                        truncation,
                        stop_len,
                        accounting,
                    },
                    &mut rng,
                ),
            }?;
            Ok(transcript.totals())
        })
        .collect::<Result<_>>()?;
    // Jobs are laid out point by point, `trials` sessions each.
    let points = jobs
        .chunks(settings.trials)
        .zip(transcripts.chunks(settings.trials))
        .map(|(job, totals)| {
            let mut pooled = SessionTotals::default();
            for t in totals {
                pooled.merge(t);
            }
            AcceptancePoint {
                protocol: job[0].0,
                truncation: job[0].1,
                totals: pooled,
            }
        })
        .collect();
    Ok(points)
}
