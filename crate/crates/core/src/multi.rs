//! Multi-candidate distributed speculative decoding over token trees.
//!
//! Every internal node draws `k` children i.i.d. (with replacement) from its
//! draft distribution. The edge checks the candidates of a node one by one;
//! each rejection replaces the target distribution by its residual against
//! the draft, and if all `k` are rejected the emitted token comes from the
//! last residual. The verified sequence follows accepted children from the
//! root until the first node with no accepted child.

use rand::{Rng, RngCore};

use crate::error::{Error, Result};
use crate::perf::PayloadAccounting;
use crate::prob::{overlap, residual, sample, Categorical, TruncationMode, UplinkDist};
use crate::rng::{node_stream, SimRng};
use crate::synth::LanguageModel;
use crate::transcript::{OracleRecord, Transcript};
use crate::tree::{ExpansionConfig, TokenTree};

/// `k` i.i.d. draws from `q`, in draw order.
pub fn mc_sample<R: Rng + ?Sized>(q: &Categorical, k: usize, rng: &mut R) -> Vec<usize> {
    (0..k).map(|_| sample(q, rng)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct McVeriResult {
    pub token: usize,
    pub accepted: bool,
    /// 1-based index of the accepted candidate.
    pub accept_index: Option<usize>,
    /// Residual updates performed (rejections with a non-degenerate residual).
    pub residual_chain_len: usize,
}

pub fn mc_veri<R: Rng + ?Sized>(
    candidates: &[usize],
    p: &Categorical,
    q: &Categorical,
    rng: &mut R,
) -> Result<McVeriResult> {
    let mut current = p.clone();
    let mut chain = 0;
    for (i, &x) in candidates.iter().enumerate() {
        let r: f64 = rng.random();
        let qx = q.prob(x);
        let ratio = if qx > 0.0 { (current.prob(x) / qx).min(1.0) } else { 0.0 };
        if r < ratio {
            return Ok(McVeriResult {
                token: x,
                accepted: true,
                accept_index: Some(i + 1),
                residual_chain_len: chain,
            });
        }
        if let Some(next) = residual(&current, q)?.dist {
            current = next;
            chain += 1;
        }
    }
    Ok(McVeriResult {
        token: sample(&current, rng),
        accepted: false,
        accept_index: None,
        residual_chain_len: chain,
    })
}

/// Closed-form law of the token emitted by [`mc_veri`].
#[derive(Debug, Clone, PartialEq)]
pub struct McExactOutput {
    pub dist: Vec<f64>,
    /// `β^(j) = Σ min(q, p^(j))`, conditional acceptance of candidate `j`.
    pub betas: Vec<f64>,
    /// `θ = 1 - Π_j (1 - β^(j))`, probability some candidate is accepted.
    pub total_acceptance: f64,
}

/// Sums, over candidates `j`, the probability of reaching `j` times
/// `min(q, p^(j))`, plus the all-rejected mass times `p^(k+1)`.
pub fn mc_output_dist_exact(p: &Categorical, q: &Categorical, k: usize) -> Result<McExactOutput> {
    if k == 0 {
        return Err(Error::InvalidParameter("k must be at least 1".into()));
    }
    let mut current = p.clone();
    let mut reach = 1.0;
    let mut dist = vec![0.0; p.vocab_size()];
    let mut betas = Vec::with_capacity(k);
    for _ in 0..k {
        let beta = overlap(q, &current)?;
        for ((d, &qq), &pp) in dist.iter_mut().zip(q.probs()).zip(current.probs()) {
            *d += reach * qq.min(pp);
        }
        betas.push(beta);
        reach *= 1.0 - beta;
        if let Some(next) = residual(&current, q)?.dist {
            current = next;
        }
    }
    for (d, &pp) in dist.iter_mut().zip(current.probs()) {
        *d += reach * pp;
    }
    Ok(McExactOutput {
        dist,
        betas,
        total_acceptance: 1.0 - reach,
    })
}

/// `β^(1) + Σ_{i≥2} β^(i) Π_{j<i} (1 - β^(j))`.
pub fn total_acceptance(betas: &[f64]) -> f64 {
    let mut reach = 1.0;
    let mut theta = 0.0;
    for &b in betas {
        theta += b * reach;
        reach *= 1.0 - b;
    }
    theta
}

pub fn tok_tree_draft<M: LanguageModel + ?Sized>(
    prefix: &[usize],
    draft: &M,
    config: &ExpansionConfig,
    truncation: Option<TruncationMode>,
    rng: &mut SimRng,
) -> Result<TokenTree> {
    let base = rng.next_u64();
    let depth = config.depth();
    let mut layers = Vec::with_capacity(depth);
    let mut dists = Vec::with_capacity(depth);
    // Paths (prefix included) of the nodes in the current layer.
    let mut paths = vec![prefix.to_vec()];
    for l in 0..depth {
        let k = config.branching(l + 1);
        let mut layer_tokens = Vec::with_capacity(paths.len() * k);
        let mut layer_dists = Vec::with_capacity(paths.len());
        let mut next_paths = Vec::with_capacity(paths.len() * k);
        for (i0, path) in paths.iter().enumerate() {
            let (uplink, q) = UplinkDist::prepare(draft.next_dist(path), truncation)?;
            let children = mc_sample(&q, k, &mut node_stream(base, l, i0 + 1));
            for &c in &children {
                let mut child_path = path.clone();
                child_path.push(c);
                next_paths.push(child_path);
            }
            layer_tokens.extend(children);
            layer_dists.push(uplink);
        }
        layers.push(layer_tokens);
        dists.push(layer_dists);
        paths = next_paths;
    }
    TokenTree::new(config.clone(), prefix.to_vec(), layers, dists)
}

/// Phase-one verdict for one internal node.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeVerdict {
    pub result: McVeriResult,
    /// Exact `θ` for this node.
    pub analytic_acceptance: f64,
    pub discarded_mass: f64,
}

/// Verifies every internal node independently. `order` permutes the visiting
/// order; results are keyed by node and do not depend on it.
pub fn verify_nodes<M: LanguageModel + ?Sized>(
    target: &M,
    tree: &TokenTree,
    base: u64,
    order: impl Iterator<Item = (usize, usize)>,
) -> Result<Vec<Vec<Option<NodeVerdict>>>> {
    let config = tree.config();
    let mut verdicts: Vec<Vec<Option<NodeVerdict>>> =
        (0..config.depth()).map(|l| vec![None; config.width(l)]).collect();
    for (l, i) in order {
        let p = target.next_dist(&tree.path_of(l, i)?);
        let uplink = tree.dist(l, i)?;
        let q = uplink.to_dense()?;
        let children = tree.children(l, i)?;
        let result = mc_veri(children, &p, &q, &mut node_stream(base, l, i))?;
        let exact = mc_output_dist_exact(&p, &q, children.len())?;
        verdicts[l][i - 1] = Some(NodeVerdict {
            result,
            analytic_acceptance: exact.total_acceptance,
            discarded_mass: uplink.discarded_mass(),
        });
    }
    Ok(verdicts)
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifiedSequence {
    pub tokens: Vec<usize>,
    /// Index (within its layer) of the child descended into at each hop.
    pub trace: Vec<usize>,
    /// Acceptance flag of every internal node on the walk.
    pub node_accepts: Vec<bool>,
    pub node_analytic_acceptance: Vec<f64>,
    pub node_discarded_mass: Vec<f64>,
}

impl VerifiedSequence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

pub fn tok_tree_veri<M: LanguageModel + ?Sized>(
    target: &M,
    tree: &TokenTree,
    rng: &mut SimRng,
) -> Result<VerifiedSequence> {
    let base = rng.next_u64();
    let config = tree.config();
    let verdicts = verify_nodes(target, tree, base, config.internal_nodes())?;
    walk(target, tree, base, &verdicts)
}

/// Phase two: descend from the root through accepted children.
pub fn walk<M: LanguageModel + ?Sized>(
    target: &M,
    tree: &TokenTree,
    base: u64,
    verdicts: &[Vec<Option<NodeVerdict>>],
) -> Result<VerifiedSequence> {
    let config = tree.config();
    let depth = config.depth();
    let mut seq = VerifiedSequence {
        tokens: Vec::with_capacity(depth + 1),
        trace: Vec::with_capacity(depth),
        node_accepts: Vec::with_capacity(depth),
        node_analytic_acceptance: Vec::with_capacity(depth),
        node_discarded_mass: Vec::with_capacity(depth),
    };
    let (mut l, mut i) = (0usize, 1usize);
    while l < depth {
        let v = verdicts[l][i - 1]
            .as_ref()
            .ok_or_else(|| Error::Internal(format!("node ({l}, {i}) was not verified")))?;
        seq.tokens.push(v.result.token);
        seq.node_accepts.push(v.result.accepted);
        seq.node_analytic_acceptance.push(v.analytic_acceptance);
        seq.node_discarded_mass.push(v.discarded_mass);
        if !v.result.accepted {
            return Ok(seq);
        }
        // Identical siblings are exchangeable; take the first.
        let children = tree.children(l, i)?;
        let pos = children
            .iter()
            .position(|&c| c == v.result.token)
            .ok_or_else(|| Error::Internal(format!("accepted token missing under ({l}, {i})")))?;
        let range = config.children_range(l, i)?;
        let next = range.start() + pos;
        if !range.contains(&next) {
            return Err(Error::Internal(format!("trace left children of ({l}, {i})")));
        }
        seq.trace.push(next);
        l += 1;
        i = next;
    }
    let p = target.next_dist(&tree.path_of(depth, i)?);
    seq.tokens.push(sample(&p, &mut node_stream(base, depth, i)));
    Ok(seq)
}

#[derive(Debug, Clone, PartialEq)]
pub struct McSessionConfig {
    pub expansion: ExpansionConfig,
    pub truncation: Option<TruncationMode>,
    /// Stop once the full sequence (prefix included) reaches this length.
    pub stop_len: usize,
    pub accounting: PayloadAccounting,
}

pub fn tree_payload_bits(tree: &TokenTree, accounting: &PayloadAccounting) -> u64 {
    let flat = tree.flatten_for_upload();
    flat.dists
        .iter()
        .map(|d| accounting.dist_bits(d.entries()))
        .sum::<u64>()
        + accounting.draft_id_bits(flat.tokens.len())
}

pub fn run_mc_oracle<D, T>(
    draft: &D,
    target: &T,
    prefix: &[usize],
    cfg: &McSessionConfig,
    rng: &mut SimRng,
) -> Result<(VerifiedSequence, OracleRecord)>
where
    D: LanguageModel + ?Sized,
    T: LanguageModel + ?Sized,
{
    let tree = tok_tree_draft(prefix, draft, &cfg.expansion, cfg.truncation, rng)?;
    let seq = tok_tree_veri(target, &tree, rng)?;
    let record = OracleRecord {
        n_generated: seq.len(),
        attempts: seq.node_accepts.len(),
        accepts: seq.node_accepts.iter().filter(|&&a| a).count(),
        analytic_accept_sum: seq.node_analytic_acceptance.iter().sum(),
        discarded_mass_sum: seq.node_discarded_mass.iter().sum(),
        uplink_entries: tree.uplink_entries(),
        payload_bits: tree_payload_bits(&tree, &cfg.accounting),
    };
    Ok((seq, record))
}

pub fn run_mc_session<D, T>(
    draft: &D,
    target: &T,
    prefix: &[usize],
    cfg: &McSessionConfig,
    rng: &mut SimRng,
) -> Result<Transcript>
where
    D: LanguageModel + ?Sized,
    T: LanguageModel + ?Sized,
{
    let mut seq = prefix.to_vec();
    let mut transcript = Transcript::default();
    while seq.len() < cfg.stop_len {
        let (verified, record) = run_mc_oracle(draft, target, &seq, cfg, rng)?;
        seq.extend_from_slice(&verified.tokens);
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
    use crate::single::{run_sc_oracle, sc_output_dist_exact, AcceptRule, ScSessionConfig};
    use crate::synth::{FixedModel, ModelPair};

    fn cat(p: &[f64]) -> Categorical {
        Categorical::new(p.to_vec()).unwrap()
    }

    #[test]
    fn point_mass_candidates_repeat() {
        let q = Categorical::point_mass(4, 2).unwrap();
        assert_eq!(mc_sample(&q, 3, &mut from_seed(1)), vec![2, 2, 2]);
    }

    #[test]
    fn duplicate_pair_rate() {
        let q = Categorical::uniform(4).unwrap();
        let mut rng = from_seed(2);
        let n = 100_000;
        let dup = (0..n)
            .filter(|_| {
                let c = mc_sample(&q, 2, &mut rng);
                c[0] == c[1]
            })
            .count();
        let rate = dup as f64 / n as f64;
        assert!((rate - 0.25).abs() < 0.005, "rate={rate}");
    }

    #[test]
    fn identical_distributions_accept_first_candidate() {
        let p = cat(&[0.3, 0.3, 0.4]);
        let mut rng = from_seed(3);
        for _ in 0..100 {
            let c = mc_sample(&p, 3, &mut rng);
            let v = mc_veri(&c, &p, &p, &mut rng).unwrap();
            assert_eq!(v.accept_index, Some(1));
            assert_eq!(v.token, c[0]);
        }
    }

    #[test]
    fn rejected_duplicates_auto_reject() {
        // q puts all mass on token 0 where p has little: after the first
        // rejection the residual has no mass on 0.
        let p = cat(&[0.2, 0.8]);
        let q = Categorical::point_mass(2, 0).unwrap();
        let mut rng = from_seed(4);
        for _ in 0..200 {
            let v = mc_veri(&[0, 0, 0], &p, &q, &mut rng).unwrap();
            if !v.accepted {
                assert_eq!(v.token, 1);
            } else {
                assert_eq!(v.accept_index, Some(1));
            }
        }
    }

    #[test]
    fn exact_law_matches_target_and_reduces_to_single() {
        let p = cat(&[0.05, 0.25, 0.1, 0.3, 0.2, 0.1]);
        let q = cat(&[0.3, 0.05, 0.3, 0.05, 0.1, 0.2]);
        for k in 1..=4 {
            let out = mc_output_dist_exact(&p, &q, k).unwrap();
            for (a, b) in out.dist.iter().zip(p.probs()) {
                assert!((a - b).abs() < 1e-12);
            }
            assert!((out.total_acceptance - total_acceptance(&out.betas)).abs() < 1e-12);
        }
        let one = mc_output_dist_exact(&p, &q, 1).unwrap();
        let sc = sc_output_dist_exact(&p, &q).unwrap();
        assert_eq!(one.betas[0], overlap(&q, &p).unwrap());
        for (a, b) in one.dist.iter().zip(&sc.dist) {
            assert!((a - b).abs() < 1e-15);
        }
        let three = mc_output_dist_exact(&p, &q, 3).unwrap();
        let mut cur = p.clone();
        for &beta in &three.betas {
            assert!((beta - (1.0 - tv_distance(&q, &cur).unwrap())).abs() < 1e-12);
            cur = residual(&cur, &q).unwrap().dist.unwrap_or(cur);
        }
        assert!(mc_output_dist_exact(&p, &q, 0).is_err());
    }

    #[test]
    fn binary_tree_shape() {
        let pair = ModelPair::new(32, 2, 0.3, 2.0, 1).unwrap();
        let cfg = ExpansionConfig::new(vec![2, 2, 2]).unwrap();
        let tree = tok_tree_draft(&[5], &pair.draft(), &cfg, Some(TruncationMode::TopK(4)), &mut from_seed(2))
            .unwrap();
        let flat = tree.flatten_for_upload();
        assert_eq!(flat.tokens.len(), 14);
        assert_eq!(flat.dists.len(), 7);
        assert_eq!(tree.uplink_entries(), 28);
        for (l, i) in cfg.internal_nodes() {
            let UplinkDist::Sparse { logits, .. } = tree.dist(l, i).unwrap() else { panic!() };
            for c in tree.children(l, i).unwrap() {
                assert!(logits.entries().iter().any(|(t, _)| t == c));
            }
        }
    }

    #[test]
    fn identical_models_walk_to_leaf() {
        let pair = ModelPair::new(32, 2, 0.0, 2.0, 1).unwrap();
        let cfg = ExpansionConfig::new(vec![2, 3]).unwrap();
        for seed in 0..30 {
            let mut rng = from_seed(seed);
            let tree = tok_tree_draft(&[1], &pair.draft(), &cfg, None, &mut rng).unwrap();
            let seq = tok_tree_veri(&pair.target(), &tree, &mut rng).unwrap();
            assert_eq!(seq.len(), 3);
            assert_eq!(seq.trace.len(), 2);
            // First candidate always accepted.
            assert_eq!(seq.trace[0], 1);
            assert_eq!(seq.trace[1], 1);
        }
    }

    #[test]
    fn chain_tree_matches_single_candidate() {
        let pair = ModelPair::new(16, 2, 0.5, 1.5, 11).unwrap();
        let acc = PayloadAccounting::new(16, 16);
        let sc = ScSessionConfig {
            draft_len: 3,
            truncation: Some(TruncationMode::TopK(5)),
            stop_len: 0,
            accounting: acc,
            rule: AcceptRule::default(),
        };
        let mc = McSessionConfig {
            expansion: ExpansionConfig::chain(3).unwrap(),
            truncation: Some(TruncationMode::TopK(5)),
            stop_len: 0,
            accounting: acc,
        };
        for seed in 0..200 {
            let (a, ra) = run_sc_oracle(&pair.draft(), &pair.target(), &[3, 4], &sc, &mut from_seed(seed)).unwrap();
            let (b, rb) = run_mc_oracle(&pair.draft(), &pair.target(), &[3, 4], &mc, &mut from_seed(seed)).unwrap();
            assert_eq!(a.tokens, b.tokens, "seed {seed}");
            assert_eq!(a.accept_flags, b.node_accepts);
            assert_eq!(ra.payload_bits, rb.payload_bits);
        }
    }

    #[test]
    fn verification_is_order_invariant() {
        let pair = ModelPair::new(16, 2, 0.6, 1.0, 12).unwrap();
        let cfg = ExpansionConfig::new(vec![3, 2, 2]).unwrap();
        let tree = tok_tree_draft(&[0], &pair.draft(), &cfg, None, &mut from_seed(5)).unwrap();
        let forward = verify_nodes(&pair.target(), &tree, 77, cfg.internal_nodes()).unwrap();
        let nodes: Vec<_> = cfg.internal_nodes().collect();
        let backward = verify_nodes(&pair.target(), &tree, 77, nodes.into_iter().rev()).unwrap();
        assert_eq!(forward, backward);
    }

    #[test]
    fn walk_trace_respects_children_ranges() {
        let pair = ModelPair::new(8, 2, 0.4, 1.0, 13).unwrap();
        let cfg = ExpansionConfig::new(vec![2, 2, 2]).unwrap();
        for seed in 0..100 {
            let mut rng = from_seed(seed);
            let tree = tok_tree_draft(&[0], &pair.draft(), &cfg, Some(TruncationMode::TopK(3)), &mut rng).unwrap();
            let seq = tok_tree_veri(&pair.target(), &tree, &mut rng).unwrap();
            assert!((1..=4).contains(&seq.len()));
            let mut parent = 1;
            for (l, &idx) in seq.trace.iter().enumerate() {
                assert!(cfg.children_range(l, parent).unwrap().contains(&idx));
                assert_eq!(tree.token(l + 1, idx).unwrap(), seq.tokens[l]);
                parent = idx;
            }
        }
    }

    #[test]
    fn session_payload_accounting() {
        let pair = ModelPair::new(64, 2, 0.3, 3.0, 14).unwrap();
        let cfg = McSessionConfig {
            expansion: ExpansionConfig::new(vec![2, 2, 2]).unwrap(),
            truncation: Some(TruncationMode::TopK(8)),
            stop_len: 60,
            accounting: PayloadAccounting::new(64, 16),
        };
        let t = run_mc_session(&pair.draft(), &pair.target(), &[1], &cfg, &mut from_seed(9)).unwrap();
        for r in &t.oracles {
            assert_eq!(r.payload_bits, 7 * 8 * (16 + 6));
            assert_eq!(r.uplink_entries, 7 * 8);
            assert_eq!(r.n_generated, r.accepts + 1);
        }
    }

    #[test]
    fn fixed_models_session() {
        let target = FixedModel(cat(&[0.5, 0.25, 0.25]));
        let draft = FixedModel(cat(&[0.25, 0.5, 0.25]));
        let cfg = McSessionConfig {
            expansion: ExpansionConfig::new(vec![2, 2]).unwrap(),
            truncation: None,
            stop_len: 100,
            accounting: PayloadAccounting::new(3, 32),
        };
        let t = run_mc_session(&draft, &target, &[], &cfg, &mut from_seed(1)).unwrap();
        assert!(t.generated.len() >= 100);
        for r in &t.oracles {
            assert_eq!(r.payload_bits, 3 * 3 * (32 + 2));
            assert!((1..=3).contains(&r.n_generated));
        }
    }
}
