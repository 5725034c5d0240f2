//! Campaign execution: calibration, mass curves, acceptance sessions, the
//! speedup sweep and the theory fuzz suite.

use anyhow::{Context, Result};
use dsd_core::perf::{index_bits, t_dsd_total, tree_speedup_as_published};
use dsd_core::rng::derive_seed;
use dsd_core::theory::{
    acceptance_campaign, run_fuzz, topk_mass_curve, AcceptancePoint, BoundReport, CampaignSettings, CheckKind,
    FuzzCampaign, Protocol,
};
use dsd_core::{
    calibrate_alpha, calibrate_concentration, sample_contexts, throughput_and_speedup, DraftShape, LinkModel,
    ModelPair, PayloadAccounting, TimingModel, TruncationMode,
};
use serde::Serialize;

use crate::config::{ConcentrationSpec, DivergenceSpec, ExperimentConfig, Mode};

const TAG_MODEL: u64 = 1;
const TAG_CALIBRATION: u64 = 2;
const TAG_MASS: u64 = 3;
const TAG_ACCEPTANCE: u64 = 4;
const TAG_THEORY: u64 = 5;

/// Lossless output laws must match the target to this precision.
pub const LOSSLESS_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MassRow {
    pub vocab_size: usize,
    pub k: usize,
    pub k_fraction: f64,
    pub concentration: f64,
    pub mean_top_k_mass: f64,
    pub contexts: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AcceptanceRow {
    pub mode: String,
    pub truncation: String,
    /// Top-K at the payload vocabulary, if this row has one.
    pub k: Option<usize>,
    /// Entries kept at the statistics vocabulary.
    pub k_stat: Option<usize>,
    pub vocab_size: usize,
    pub divergence: f64,
    pub measured_alpha: f64,
    pub alpha_stderr: f64,
    pub analytic_alpha: f64,
    pub mean_sigma: f64,
    pub delta_vs_dense: f64,
    pub delta_stderr: f64,
    pub bound: f64,
    pub within_bound: bool,
    pub tokens_per_oracle: f64,
    pub tokens_per_oracle_stderr: f64,
    pub payload_bits_per_oracle: f64,
    pub oracles: u64,
    pub attempts: u64,
    pub trials: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpeedupRow {
    pub convention: String,
    pub mode: String,
    pub truncation: String,
    /// Entries per transmitted distribution.
    pub k: usize,
    pub rate_mbps: f64,
    pub alpha: f64,
    pub n_oracle: f64,
    pub payload_bits: u64,
    pub t_comm_s: f64,
    pub t_oracle_s: f64,
    pub throughput_tok_per_s: f64,
    pub speedup: f64,
    /// The published tree formula, for comparison (tree rows only).
    pub speedup_published: Option<f64>,
    /// Compute plus uplink time for `campaign.session_len` tokens.
    pub t_dsd_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TheoryRow {
    pub check: String,
    pub seed: u64,
    pub vocab_size: usize,
    pub truncation: String,
    pub k: usize,
    pub lhs: f64,
    pub rhs: f64,
    pub slack: f64,
    pub satisfied: bool,
    pub asserted: bool,
    pub vacuous: bool,
    pub note: String,
}

impl From<&BoundReport> for TheoryRow {
    fn from(r: &BoundReport) -> Self {
        Self {
            check: r.kind.label().to_string(),
            seed: r.instance.seed,
            vocab_size: r.instance.vocab_size,
            truncation: r.instance.truncation.map_or_else(|| "none".to_string(), |m| m.to_string()),
            k: r.instance.k,
            lhs: r.lhs,
            rhs: r.rhs,
            slack: r.slack,
            satisfied: r.satisfied,
            asserted: r.asserted,
            vacuous: r.vacuous,
            note: r.note.clone().unwrap_or_default(),
        }
    }
}

/// Invariants must always hold; shape checks compare against the
/// qualitative trends reported for real models.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckClass {
    Invariant,
    Shape,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: String,
    pub class: CheckClass,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub stat_vocab_size: usize,
    pub stat_concentration: f64,
    pub divergence: f64,
    pub mass_vocab_size: usize,
    pub mass_concentration: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CampaignReport {
    pub calibration: Option<Calibration>,
    pub mass: Vec<MassRow>,
    pub acceptance: Vec<AcceptanceRow>,
    pub speedup: Vec<SpeedupRow>,
    pub theory: Vec<TheoryRow>,
    pub checks: Vec<CheckOutcome>,
}

impl CampaignReport {
    /// Failed invariant checks.
    pub fn violations(&self) -> Vec<&CheckOutcome> {
        self.checks
            .iter()
            .filter(|c| c.class == CheckClass::Invariant && !c.passed)
            .collect()
    }

    pub fn check(&self, name: &str) -> Option<&CheckOutcome> {
        self.checks.iter().find(|c| c.name == name)
    }

    /// Checks whose name starts with `prefix`.
    pub fn checks_with_prefix(&self, prefix: &str) -> Vec<&CheckOutcome> {
        self.checks.iter().filter(|c| c.name.starts_with(prefix)).collect()
    }

    fn push(&mut self, name: impl Into<String>, class: CheckClass, passed: bool, detail: impl Into<String>) {
        self.checks.push(CheckOutcome {
            name: name.into(),
            class,
            passed,
            detail: detail.into(),
        });
    }
}

fn protocol(mode: Mode) -> Protocol {
    match mode {
        Mode::Sc => Protocol::Single,
        Mode::Mc => Protocol::Multi,
    }
}

fn truncation_label(t: Option<TruncationMode>) -> String {
    t.map_or_else(|| "dense".to_string(), |m| m.to_string())
}

/// Runs `f` on a dedicated pool of `jobs` threads.
pub fn with_jobs<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .context("building thread pool")?;
    Ok(pool.install(f))
}

/// The whole campaign: calibration, mass curves, acceptance, speedup and
/// theory.
pub fn run_campaign(cfg: &ExperimentConfig) -> Result<CampaignReport> {
    let mut report = CampaignReport::default();
    let (pair, calibration) = calibrate(cfg)?;
    mass_curves(cfg, &pair, &calibration, &mut report)?;
    report.calibration = Some(calibration);
    acceptance(cfg, &pair, &mut report)?;
    speedup(cfg, &mut report)?;
    theory(cfg, &mut report)?;
    Ok(report)
}

/// The theory fuzz suite alone.
pub fn run_theory(cfg: &ExperimentConfig) -> Result<CampaignReport> {
    let mut report = CampaignReport::default();
    theory(cfg, &mut report)?;
    Ok(report)
}

fn calibrate(cfg: &ExperimentConfig) -> Result<(ModelPair, Calibration)> {
    let m = &cfg.model;
    let model_seed = derive_seed(cfg.seed, &[TAG_MODEL]);
    let cal_seed = derive_seed(cfg.seed, &[TAG_CALIBRATION]);
    let stat_v = m.stat_vocab_size;
    let stat_contexts = sample_contexts(stat_v, m.context_order, m.calibration_contexts, cal_seed);
    let base = ModelPair::new(stat_v, m.context_order, 0.0, 1.0, model_seed)?;
    let concentration_at = |pair: &ModelPair, contexts: &[Vec<usize>]| -> Result<f64> {
        Ok(match cfg.concentration()? {
            ConcentrationSpec::Fixed(g) => g,
            ConcentrationSpec::TopMass { fraction, mass } => {
                let k = ((fraction * pair.vocab_size() as f64).round() as usize).clamp(1, pair.vocab_size());
                calibrate_concentration(pair, k, mass, contexts).context("calibrating model.top_mass")?
            }
        })
    };
    let stat_gamma = concentration_at(&base, &stat_contexts)?;
    let shaped = base.with_concentration(stat_gamma)?;
    let divergence = match cfg.divergence()? {
        DivergenceSpec::Fixed(d) => d,
        DivergenceSpec::TargetAlpha(a) => {
            calibrate_alpha(&shaped, a, &stat_contexts).context("calibrating model.target_alpha")?
        }
    };
    let pair = shaped.with_divergence(divergence)?;

    let mass_v = m.vocab_size;
    let mass_contexts = sample_contexts(mass_v, m.context_order, cfg.campaign.mass_contexts, cal_seed);
    let mass_base = ModelPair::new(mass_v, m.context_order, 0.0, 1.0, model_seed)?;
    let mass_gamma = concentration_at(&mass_base, &mass_contexts)?;
    Ok((
        pair,
        Calibration {
            stat_vocab_size: stat_v,
            stat_concentration: stat_gamma,
            divergence,
            mass_vocab_size: mass_v,
            mass_concentration: mass_gamma,
        },
    ))
}

fn mass_curves(
    cfg: &ExperimentConfig,
    stat_pair: &ModelPair,
    cal: &Calibration,
    report: &mut CampaignReport,
) -> Result<()> {
    let m = &cfg.model;
    let seed = derive_seed(cfg.seed, &[TAG_MASS]);
    let n = cfg.campaign.mass_contexts;
    let grid = cfg.top_k_grid();
    let fraction_k = |v: usize| ((m.top_mass_fraction * v as f64).round() as usize).clamp(1, v);

    let mut full_ks = grid.clone();
    full_ks.push(fraction_k(m.vocab_size));
    full_ks.push(m.vocab_size);
    let mut stat_ks: Vec<usize> = grid.iter().map(|&k| cfg.stat_k(k)).collect();
    stat_ks.push(fraction_k(m.stat_vocab_size));
    stat_ks.push(m.stat_vocab_size);

    let full_pair = ModelPair::new(m.vocab_size, m.context_order, 0.0, cal.mass_concentration, stat_pair.seed())?;
    for (pair, mut ks) in [(full_pair, full_ks), (stat_pair.clone(), stat_ks)] {
        ks.sort_unstable();
        ks.dedup();
        let v = pair.vocab_size();
        let contexts = sample_contexts(v, m.context_order, n, seed);
        let curve = topk_mass_curve(&pair.target(), &contexts, &ks)?;
        let monotone = curve.windows(2).all(|w| w[0].1 <= w[1].1 + 1e-12);
        let full = curve.last().map_or(0.0, |c| c.1);
        report.push(
            format!("mass.monotone.v{v}"),
            CheckClass::Invariant,
            monotone && (full - 1.0).abs() < 1e-9,
            format!("top-K mass non-decreasing in K over {} points; K=V mass {full:.12}", curve.len()),
        );
        for (k, mass) in curve {
            report.mass.push(MassRow {
                vocab_size: v,
                k,
                k_fraction: k as f64 / v as f64,
                concentration: pair.concentration(),
                mean_top_k_mass: mass,
                contexts: n,
            });
        }
    }
    Ok(())
}

/// Truncations run at the statistics vocabulary, with their payload-level K.
fn stat_truncations(cfg: &ExperimentConfig) -> Vec<(Option<usize>, Option<TruncationMode>)> {
    let mut out: Vec<_> = cfg
        .top_k_grid()
        .into_iter()
        .map(|k| (Some(k), Some(TruncationMode::TopK(cfg.stat_k(k)))))
        .collect();
    out.extend(cfg.top_rho_modes().into_iter().map(|m| (None, Some(m))));
    out.push((None, None));
    out
}

fn acceptance(cfg: &ExperimentConfig, pair: &ModelPair, report: &mut CampaignReport) -> Result<()> {
    let truncs = stat_truncations(cfg);
    let modes: Vec<Protocol> = cfg.draft.modes.iter().map(|&m| protocol(m)).collect();
    let settings = CampaignSettings {
        draft_len: cfg.draft.draft_len,
        expansion: cfg.expansion(),
        trials: cfg.campaign.trials,
        session_len: cfg.campaign.session_len,
        prefix_len: cfg.campaign.prefix_len,
        b_prob: cfg.link.b_prob,
        seed: derive_seed(cfg.seed, &[TAG_ACCEPTANCE]),
    };
    let stat_modes: Vec<_> = truncs.iter().map(|t| t.1).collect();
    let points = acceptance_campaign(pair, &modes, &stat_modes, &settings)?;
    let v = pair.vocab_size();
    for chunk in points.chunks(truncs.len()) {
        let dense = chunk.last().expect("dense point is last");
        for (point, &(k, _)) in chunk.iter().zip(&truncs) {
            report.acceptance.push(acceptance_row(point, dense, k, v, pair.divergence(), settings.trials));
        }
    }
    for row in report.acceptance.clone() {
        if row.truncation == "dense" {
            continue;
        }
        report.push(
            format!("acceptance.bound.{}.{}", row.mode, row.truncation),
            CheckClass::Invariant,
            row.within_bound,
            format!(
                "|alpha - alpha_dense| = {:.5} <= E[sigma] + 3 se = {:.5} + 3*{:.5}",
                row.delta_vs_dense.abs(),
                row.mean_sigma,
                row.delta_stderr
            ),
        );
    }
    acceptance_shape_checks(cfg, report);
    Ok(())
}

fn acceptance_row(
    point: &AcceptancePoint,
    dense: &AcceptancePoint,
    k: Option<usize>,
    vocab_size: usize,
    divergence: f64,
    trials: usize,
) -> AcceptanceRow {
    let t = &point.totals;
    let measured = t.acceptance_rate();
    let se = t.acceptance_stderr();
    let delta = measured - dense.totals.acceptance_rate();
    let delta_se = (se * se + dense.totals.acceptance_stderr().powi(2)).sqrt();
    let sigma = t.mean_discarded_mass();
    let bound = sigma + 3.0 * delta_se;
    AcceptanceRow {
        mode: point.protocol.label().to_string(),
        truncation: truncation_label(point.truncation),
        k,
        k_stat: point.kept(vocab_size),
        vocab_size,
        divergence,
        measured_alpha: measured,
        alpha_stderr: se,
        analytic_alpha: t.analytic_acceptance(),
        mean_sigma: sigma,
        delta_vs_dense: delta,
        delta_stderr: delta_se,
        bound,
        within_bound: delta.abs() <= bound,
        tokens_per_oracle: t.mean_tokens_per_oracle(),
        tokens_per_oracle_stderr: t.tokens_per_oracle_stderr(),
        payload_bits_per_oracle: t.mean_payload_bits(),
        oracles: t.oracles,
        attempts: t.attempts,
        trials,
    }
}

fn diff_se(a: &AcceptanceRow, b: &AcceptanceRow) -> f64 {
    (a.alpha_stderr.powi(2) + b.alpha_stderr.powi(2)).sqrt()
}

fn acceptance_shape_checks(cfg: &ExperimentConfig, report: &mut CampaignReport) {
    let rows = report.acceptance.clone();
    let find = |mode: &str, trunc: &str| rows.iter().find(|r| r.mode == mode && r.truncation == trunc);
    // Tree acceptance against sequence acceptance at each truncation.
    for sc in rows.iter().filter(|r| r.mode == "sc") {
        if let Some(mc) = find("mc", &sc.truncation) {
            let diff = mc.measured_alpha - sc.measured_alpha;
            let se = diff_se(mc, sc);
            report.push(
                format!("shape.mc_ge_sc.{}", sc.truncation),
                CheckClass::Shape,
                diff >= -3.0 * se,
                format!("alpha_mc - alpha_sc = {diff:.5} (se {se:.5})"),
            );
        }
    }
    // Extreme truncation drops acceptance visibly.
    let Some(&smallest) = cfg.top_k_grid().first() else { return };
    if (smallest as f64) >= cfg.model.top_mass_fraction * cfg.model.vocab_size as f64 {
        return;
    }
    for mode in ["sc", "mc"] {
        let (Some(dense), Some(row)) = (find(mode, "dense"), rows.iter().find(|r| r.mode == mode && r.k == Some(smallest)))
        else {
            continue;
        };
        let drop = dense.measured_alpha - row.measured_alpha;
        let se = diff_se(dense, row);
        report.push(
            format!("shape.drop.{mode}.k{smallest}"),
            CheckClass::Shape,
            drop > 3.0 * se,
            format!("alpha_dense - alpha(K={smallest}) = {drop:.5} (se {se:.5})"),
        );
    }
}

fn speedup(cfg: &ExperimentConfig, report: &mut CampaignReport) -> Result<()> {
    let v = cfg.model.vocab_size;
    let timing = TimingModel::new(cfg.timing.t_slm_s, cfg.timing.t_llm_s)?;
    let rates = cfg.rates();
    let grid = cfg.top_k_grid();
    let mut entries: Vec<(String, usize, Option<usize>)> =
        grid.iter().map(|&k| (TruncationMode::TopK(k).to_string(), k, Some(k))).collect();
    entries.push(("dense".to_string(), v, None));

    for &conv in &cfg.link.payload_conventions {
        let accounting = PayloadAccounting {
            b_prob: cfg.link.b_prob,
            b_idx: cfg.link.b_idx.unwrap_or_else(|| index_bits(v)),
            convention: conv.payload(),
            include_draft_ids: cfg.link.include_draft_ids,
        };
        let base_link = LinkModel::new(1e6, accounting, v)?;
        for &mode in &cfg.draft.modes {
            let label = protocol(mode).label();
            let shape = match mode {
                Mode::Sc => DraftShape::Sequence(cfg.draft.draft_len),
                Mode::Mc => DraftShape::Tree(cfg.expansion()),
            };
            for (trunc, k, paper_k) in &entries {
                let Some(row) = report
                    .acceptance
                    .iter()
                    .find(|r| r.mode == label && r.k == *paper_k && (paper_k.is_some() || r.truncation == "dense"))
                else {
                    continue;
                };
                let alpha = row.measured_alpha;
                for &rate in &rates {
                    let link = base_link.with_rate(rate * 1e6)?;
                    let pt = throughput_and_speedup(&shape, &link, &timing, alpha, *k)?;
                    let published = match &shape {
                        DraftShape::Tree(t) => Some(tree_speedup_as_published(t, &link, &timing, alpha, *k)),
                        DraftShape::Sequence(_) => None,
                    };
                    let n_oracles = (cfg.campaign.session_len as f64 / pt.n_oracle).ceil() as u64;
                    let t_comp = n_oracles as f64 * (pt.t_oracle - pt.t_comm);
                    report.speedup.push(SpeedupRow {
                        convention: conv.label().to_string(),
                        mode: label.to_string(),
                        truncation: trunc.clone(),
                        k: *k,
                        rate_mbps: rate,
                        alpha,
                        n_oracle: pt.n_oracle,
                        payload_bits: pt.payload_bits,
                        t_comm_s: pt.t_comm,
                        t_oracle_s: pt.t_oracle,
                        throughput_tok_per_s: pt.throughput,
                        speedup: pt.speedup,
                        speedup_published: published,
                        t_dsd_s: t_dsd_total(t_comp, n_oracles, pt.t_comm),
                    });
                }
            }
        }
    }
    speedup_checks(cfg, report);
    Ok(())
}

fn series<'a>(rows: &'a [SpeedupRow], conv: &str, mode: &str, trunc: &str) -> Vec<&'a SpeedupRow> {
    rows.iter()
        .filter(|r| r.convention == conv && r.mode == mode && r.truncation == trunc)
        .collect()
}

fn speedup_checks(cfg: &ExperimentConfig, report: &mut CampaignReport) {
    let rows = report.speedup.clone();
    let v = cfg.model.vocab_size;
    let grid = cfg.top_k_grid();
    let moderate_min = cfg.model.top_mass_fraction * v as f64;
    for &conv in &cfg.link.payload_conventions {
        let c = conv.label();
        for &mode in &cfg.draft.modes {
            let m = protocol(mode).label();
            let dense = series(&rows, c, m, "dense");
            let mut keys: Vec<String> = grid.iter().map(|&k| TruncationMode::TopK(k).to_string()).collect();
            keys.push("dense".into());
            for key in &keys {
                let s = series(&rows, c, m, key);
                let monotone = s.windows(2).all(|w| w[1].speedup >= w[0].speedup);
                report.push(
                    format!("speedup.monotone_rate.{c}.{m}.{key}"),
                    CheckClass::Invariant,
                    monotone,
                    format!("speedup non-decreasing over {} rates", s.len()),
                );
                if let (Some(first), Some(d)) = (s.first(), dense.first()) {
                    let ratio_ok = first.payload_bits as u128 * v as u128 == d.payload_bits as u128 * first.k as u128
                        || cfg.link.include_draft_ids;
                    report.push(
                        format!("payload.ratio.{c}.{m}.{key}"),
                        CheckClass::Invariant,
                        ratio_ok,
                        format!("payload {} bits vs dense {} bits, K/V = {}/{v}", first.payload_bits, d.payload_bits, first.k),
                    );
                }
            }
            if dense.is_empty() {
                continue;
            }
            for &k in grid.iter().filter(|&&k| (k as f64) >= moderate_min && k < v) {
                let key = TruncationMode::TopK(k).to_string();
                let s = series(&rows, c, m, &key);
                if s.len() != dense.len() {
                    continue;
                }
                let worst = s
                    .iter()
                    .zip(&dense)
                    .map(|(a, b)| a.speedup - b.speedup)
                    .fold(f64::INFINITY, f64::min);
                report.push(
                    format!("shape.tslt_ge_dense.{c}.{m}.k{k}"),
                    CheckClass::Shape,
                    worst >= 0.0,
                    format!("min over rates of S(K={k}) - S(dense) = {worst:.5}"),
                );
                let ratios: Vec<f64> = s.iter().zip(&dense).map(|(a, b)| a.speedup / b.speedup).collect();
                let grows = ratios.windows(2).all(|w| w[0] >= w[1] * (1.0 - 1e-12));
                report.push(
                    format!("shape.gap_grows.{c}.{m}.k{k}"),
                    CheckClass::Shape,
                    grows,
                    format!(
                        "S(K={k})/S(dense) from {:.4} at {} Mbit/s to {:.4} at {} Mbit/s",
                        ratios[0],
                        s[0].rate_mbps,
                        ratios[ratios.len() - 1],
                        s[s.len() - 1].rate_mbps
                    ),
                );
            }
            let extreme = grid.iter().copied().find(|&k| (k as f64) < moderate_min);
            let moderate = grid.iter().copied().find(|&k| (k as f64) >= moderate_min && k < v);
            if let (Some(ke), Some(km)) = (extreme, moderate) {
                let a = series(&rows, c, m, &TruncationMode::TopK(ke).to_string());
                let b = series(&rows, c, m, &TruncationMode::TopK(km).to_string());
                if let (Some(a_lo), Some(a_hi), Some(b_lo), Some(b_hi)) = (a.first(), a.last(), b.first(), b.last()) {
                    let low_wins = a_lo.speedup > b_lo.speedup;
                    let high_loses = a_hi.speedup < b_hi.speedup;
                    let cross = a
                        .windows(2)
                        .zip(b.windows(2))
                        .find(|(x, y)| (x[0].speedup - y[0].speedup) * (x[1].speedup - y[1].speedup) <= 0.0)
                        .map(|(x, _)| format!("between {} and {} Mbit/s", x[0].rate_mbps, x[1].rate_mbps))
                        .unwrap_or_else(|| "none in grid".into());
                    report.push(
                        format!("shape.crossover.{c}.{m}.k{ke}_vs_k{km}"),
                        CheckClass::Shape,
                        low_wins && high_loses,
                        format!(
                            "S(K={ke}) - S(K={km}): {:.4} at {} Mbit/s, {:.4} at {} Mbit/s; crossover {cross}",
                            a_lo.speedup - b_lo.speedup,
                            a_lo.rate_mbps,
                            a_hi.speedup - b_hi.speedup,
                            a_hi.rate_mbps
                        ),
                    );
                }
            }
        }
    }
}

fn theory(cfg: &ExperimentConfig, report: &mut CampaignReport) -> Result<()> {
    let th = &cfg.theory;
    let seed = derive_seed(cfg.seed, &[TAG_THEORY]);
    let range = (th.vocab_min.max(1), th.vocab_max);
    let campaigns = [
        FuzzCampaign::Theorem1 { vocab_range: range },
        FuzzCampaign::Lemma2 { vocab_range: range },
        FuzzCampaign::Lemma3 { vocab_range: range },
        FuzzCampaign::Chains {
            vocab_size: th.chain_vocab,
            top_k: th.chain_top_k,
            max_depth: th.chain_max_depth,
        },
        FuzzCampaign::Lossless {
            vocab_range: range,
            max_k: th.max_candidates,
        },
    ];
    for (i, campaign) in campaigns.into_iter().enumerate() {
        let out = run_fuzz(campaign, th.instances, derive_seed(seed, &[i as u64]))?;
        report.theory.extend(out.reports.iter().map(TheoryRow::from));
        let mut kinds: Vec<CheckKind> = out.reports.iter().map(|r| r.kind).collect();
        kinds.sort();
        kinds.dedup();
        for kind in kinds {
            let of_kind: Vec<&BoundReport> = out.reports.iter().filter(|r| r.kind == kind).collect();
            let asserted = of_kind.iter().filter(|r| r.asserted).count();
            let violations = of_kind.iter().filter(|r| r.is_violation()).count();
            let vacuous = of_kind.iter().filter(|r| r.vacuous).count();
            let max_lhs = out.max_lhs(kind);
            let passed = match kind {
                CheckKind::LosslessSingle | CheckKind::LosslessMulti => max_lhs <= LOSSLESS_TOLERANCE,
                _ => violations == 0,
            };
            report.push(
                format!("theory.{kind}"),
                CheckClass::Invariant,
                passed,
                format!(
                    "{} reports, {asserted} asserted, {violations} violations, {vacuous} vacuous, max lhs {max_lhs:.3e}",
                    of_kind.len()
                ),
            );
        }
        if !out.chains.is_empty() {
            let above = out.chains.iter().filter(|c| c.above_floor()).count();
            let degenerate = out.chains.iter().filter(|c| c.degenerate_at.is_some()).count();
            report.push(
                "theory.chain_floor",
                CheckClass::Invariant,
                out.chains.iter().filter(|c| c.above_floor()).all(|c| c.violations() == 0),
                format!(
                    "{} chains: {above} with min Z >= floor (asserted), {} below floor (reported), {degenerate} degenerate",
                    out.chains.len(),
                    out.chains.len() - above
                ),
            );
        }
    }
    Ok(())
}
