//! Property tests for the distribution arithmetic, truncation, tree indexing
//! and analytic performance model.

use dsd_core::multi::mc_output_dist_exact;
use dsd_core::perf::{n_oracle_expected, payload_bits, throughput_and_speedup, DraftShape, LinkModel};
use dsd_core::prob::{overlap, residual, truncate, tv_distance, Categorical, TruncationMode};
use dsd_core::single::sc_output_dist_exact;
use dsd_core::{ExpansionConfig, PayloadAccounting, PayloadConvention, TimingModel};
use proptest::prelude::*;

/// Non-negative weights with some exact zeros, normalized.
fn categorical(v: usize) -> impl Strategy<Value = Categorical> {
    prop::collection::vec(prop_oneof![3 => 0.0f64..1.0, 1 => Just(0.0)], v).prop_map(|mut w| {
        if w.iter().all(|&x| x == 0.0) {
            w[0] = 1.0;
        }
        Categorical::from_weights(w).unwrap()
    })
}

fn pair() -> impl Strategy<Value = (Categorical, Categorical)> {
    (1usize..=24).prop_flat_map(|v| (categorical(v), categorical(v)))
}

fn quad() -> impl Strategy<Value = [Categorical; 4]> {
    (1usize..=24).prop_flat_map(|v| {
        (categorical(v), categorical(v), categorical(v), categorical(v)).prop_map(|(a, b, c, d)| [a, b, c, d])
    })
}

fn with_mode() -> impl Strategy<Value = (Categorical, Categorical, TruncationMode)> {
    pair().prop_flat_map(|(p, q)| {
        let v = p.vocab_size();
        let mode = prop_oneof![
            (1..=v).prop_map(TruncationMode::TopK),
            (1u32..=10).prop_map(|r| TruncationMode::TopRho(r as f64 / 10.0)),
            (1u32..=10).prop_map(|r| TruncationMode::TopRhoExclusive(r as f64 / 10.0)),
        ];
        (Just(p), Just(q), mode)
    })
}

fn expansion() -> impl Strategy<Value = ExpansionConfig> {
    prop::collection::vec(1usize..=4, 1..=4).prop_map(|ks| ExpansionConfig::new(ks).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn tv_is_a_bounded_symmetric_distance((p, q) in pair()) {
        let d = tv_distance(&p, &q).unwrap();
        prop_assert!((0.0..=1.0 + 1e-12).contains(&d));
        prop_assert_eq!(d, tv_distance(&q, &p).unwrap());
        prop_assert_eq!(tv_distance(&p, &p).unwrap(), 0.0);
        prop_assert!((overlap(&p, &q).unwrap() - (1.0 - d)).abs() < 1e-12);
    }

    #[test]
    fn truncation_discards_exactly_sigma((_p, q, mode) in with_mode()) {
        let (q_hat, spec) = truncate(&q, mode).unwrap();
        prop_assert!(!spec.kept.is_empty());
        prop_assert!((spec.kept_mass + spec.discarded_mass - 1.0).abs() < 1e-9);
        prop_assert!((tv_distance(&q_hat, &q).unwrap() - spec.discarded_mass).abs() < 1e-9);
        for w in spec.kept.windows(2) {
            let (a, b) = (q.prob(w[0]), q.prob(w[1]));
            prop_assert!(a > b || (a == b && w[0] < w[1]));
        }
        for t in 0..q.vocab_size() {
            let expect_positive = spec.kept.contains(&t) && q.prob(t) > 0.0;
            prop_assert_eq!(q_hat.prob(t) > 0.0, expect_positive);
        }
    }

    #[test]
    fn top_k_is_idempotent((q, _p) in pair(), k in 1usize..=24) {
        let k = k.min(q.vocab_size());
        let (once, _) = truncate(&q, TruncationMode::TopK(k)).unwrap();
        let (twice, spec) = truncate(&once, TruncationMode::TopK(k)).unwrap();
        prop_assert_eq!(spec.discarded_mass, 0.0);
        for (a, b) in once.probs().iter().zip(twice.probs()) {
            prop_assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn top_k_on_logits_selects_the_same_set(logits in prop::collection::vec(-8.0f64..8.0, 1..=24), k in 1usize..=24) {
        let k = k.min(logits.len());
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let q = Categorical::from_weights(logits.iter().map(|l| (l - max).exp()).collect()).unwrap();
        let mut by_logit: Vec<usize> = (0..logits.len()).collect();
        by_logit.sort_by(|&a, &b| logits[b].total_cmp(&logits[a]).then(a.cmp(&b)));
        let mut expected = by_logit[..k].to_vec();
        let mut got = truncate(&q, TruncationMode::TopK(k)).unwrap().1.kept;
        expected.sort_unstable();
        got.sort_unstable();
        // exp may merge logits that differ by less than an ulp; require equal mass instead.
        let mass = |s: &[usize]| s.iter().map(|&t| q.prob(t)).sum::<f64>();
        prop_assert!((mass(&expected) - mass(&got)).abs() < 1e-12);
    }

    #[test]
    fn residual_mass_equals_tv((p, q) in pair()) {
        let r = residual(&p, &q).unwrap();
        prop_assert!((r.mass - tv_distance(&p, &q).unwrap()).abs() < 1e-12);
        if let Some(d) = r.dist {
            for t in 0..p.vocab_size() {
                if p.prob(t) <= q.prob(t) {
                    prop_assert_eq!(d.prob(t), 0.0);
                }
            }
        } else {
            prop_assert!(r.mass < 1e-12);
        }
    }

    #[test]
    fn theorem1_drift_bounded_by_sigma((p, q, mode) in with_mode()) {
        let (q_hat, spec) = truncate(&q, mode).unwrap();
        let drift = (tv_distance(&q_hat, &p).unwrap() - tv_distance(&q, &p).unwrap()).abs();
        prop_assert!(drift <= spec.discarded_mass + 1e-9);
    }

    #[test]
    fn lemma2_triangle([p, q, q_hat, _] in quad()) {
        let lhs = (tv_distance(&q_hat, &p).unwrap() - tv_distance(&q, &p).unwrap()).abs();
        prop_assert!(lhs <= tv_distance(&q_hat, &q).unwrap() + 1e-12);
    }

    #[test]
    fn lemma3_four_way([p, q, p_hat, q_hat] in quad()) {
        let lhs = (tv_distance(&q_hat, &p_hat).unwrap() - tv_distance(&q, &p).unwrap()).abs();
        let rhs = tv_distance(&q_hat, &q).unwrap() + tv_distance(&p_hat, &p).unwrap();
        prop_assert!(lhs <= rhs + 1e-12);
    }

    #[test]
    fn truncated_drafting_is_lossless((p, q, mode) in with_mode(), k in 1usize..=4) {
        let (q_hat, _) = truncate(&q, mode).unwrap();
        let sc = sc_output_dist_exact(&p, &q_hat).unwrap();
        let mc = mc_output_dist_exact(&p, &q_hat, k).unwrap();
        for t in 0..p.vocab_size() {
            prop_assert!((sc.dist[t] - p.prob(t)).abs() < 1e-12);
            prop_assert!((mc.dist[t] - p.prob(t)).abs() < 1e-12);
        }
        prop_assert!(mc.total_acceptance + 1e-12 >= sc.acceptance);
    }

    #[test]
    fn tree_counts_match_layer_widths(cfg in expansion()) {
        let l = cfg.depth();
        let mut w = 1;
        let mut internal = 0;
        let mut tokens = 0;
        for layer in 1..=l {
            internal += w;
            w *= cfg.branching(layer);
            tokens += w;
            prop_assert_eq!(cfg.width(layer), w);
        }
        prop_assert_eq!(cfg.dist_count(), internal);
        prop_assert_eq!(cfg.token_count(), tokens);
        prop_assert_eq!(cfg.internal_nodes().count(), internal);
    }

    #[test]
    fn parents_and_children_agree(cfg in expansion()) {
        for layer in 0..cfg.depth() {
            let mut next_expected = 1;
            for i in 1..=cfg.width(layer) {
                let range = cfg.children_range(layer, i).unwrap();
                prop_assert_eq!(*range.start(), next_expected);
                next_expected = range.end() + 1;
                for c in range {
                    prop_assert_eq!(cfg.parent(layer + 1, c).unwrap(), i);
                }
            }
            prop_assert_eq!(next_expected, cfg.width(layer + 1) + 1);
        }
    }

    #[test]
    fn sparse_payload_is_k_over_v_of_dense(v in 2usize..40_000, k_frac in 0.0f64..1.0, l in 1usize..8, table in any::<bool>()) {
        let k = ((k_frac * v as f64) as usize).max(1);
        let mut acc = PayloadAccounting::new(v, 16);
        if table {
            acc = acc.with_convention(PayloadConvention::ValueOnly);
        }
        let shape = DraftShape::Sequence(l);
        let dense = payload_bits(&shape, v, &acc);
        let sparse = payload_bits(&shape, k, &acc);
        prop_assert_eq!(sparse * v as u64, dense * k as u64);
        prop_assert!(payload_bits(&shape, k.saturating_add(1).min(v), &acc) >= sparse);
    }

    #[test]
    fn speedup_monotone_in_rate_and_alpha(
        alpha in 0.0f64..0.99,
        d_alpha in 0.0f64..0.01,
        rate in 1e4f64..1e9,
        factor in 1.0f64..10.0,
        k in 1usize..=32_000,
    ) {
        let acc = PayloadAccounting::new(32_000, 16);
        let timing = TimingModel::new(0.0025, 0.05).unwrap();
        let link = LinkModel::new(rate, acc, 32_000).unwrap();
        for shape in [DraftShape::Sequence(4), DraftShape::Tree(ExpansionConfig::new(vec![2, 2, 2]).unwrap())] {
            let base = throughput_and_speedup(&shape, &link, &timing, alpha, k).unwrap();
            let faster = throughput_and_speedup(&shape, &link.with_rate(rate * factor).unwrap(), &timing, alpha, k).unwrap();
            let better = throughput_and_speedup(&shape, &link, &timing, alpha + d_alpha, k).unwrap();
            prop_assert!(faster.speedup >= base.speedup);
            prop_assert!(better.speedup >= base.speedup);
        }
    }

    #[test]
    fn n_oracle_between_one_and_l_plus_one(alpha in 0.0f64..=1.0, l in 1usize..16) {
        let n = n_oracle_expected(alpha, l).unwrap();
        prop_assert!(n >= 1.0 && n <= (l + 1) as f64 + 1e-12);
        if alpha < 1.0 {
            let closed = (1.0 - alpha.powi(l as i32 + 1)) / (1.0 - alpha);
            prop_assert!((n - closed).abs() < 1e-9 * closed.max(1.0) / (1.0 - alpha).max(1e-3));
        }
    }
}

#[test]
fn top_rho_is_not_idempotent() {
    let q = Categorical::new(vec![0.7, 0.2, 0.1]).unwrap();
    let (once, s1) = truncate(&q, TruncationMode::TopRho(0.75)).unwrap();
    let (_, s2) = truncate(&once, TruncationMode::TopRho(0.75)).unwrap();
    assert_eq!(s1.kept, vec![0, 1]);
    // 0.7 / 0.9 already clears 0.75 after renormalization.
    assert_eq!(s2.kept, vec![0]);
}
