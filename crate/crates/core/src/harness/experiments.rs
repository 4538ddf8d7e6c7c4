//! The named experiments. Each writes its files under `out` and returns a
//! JSON summary plus the property checks `--check` enforces.

use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};

use super::config::{Architecture, AttackMethod, ExperimentConfig, Protocol};
use super::gradcheck::{run_gradcheck_suite, GRADCHECK_POINTS};
use super::output::*;
use crate::error::{Error, Result};
use crate::metrics::{
    amplification, attack_dominance, budget_sweep, classify_risk_tier, draw_params, measure_with, reward_gap_from,
    AmplificationReport, ErrorCurve, RiskTier, WeightSource, FIXED_WEIGHTS_STREAM,
};
use crate::mitigation::{adversarial_finetune, evaluate_mitigation};
use crate::models::save_params;
use crate::risk::run_risk_pipeline;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &str, passed: bool, detail: impl Into<String>) -> Self {
        Self { name: name.to_string(), passed, detail: detail.into() }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentOutput {
    pub name: &'static str,
    pub files: Vec<PathBuf>,
    pub summary: Value,
    pub checks: Vec<Check>,
}

pub const EXPERIMENTS: &[&str] = &["core", "arch-compare", "mitigate", "reward-gap", "risk", "gradcheck"];

fn core_table(wm: &ErrorCurve, ss: &ErrorCurve, a: &AmplificationReport) -> CsvTable {
    let mut t = CsvTable::new(CORE_COLUMNS);
    for k in 1..=wm.steps() {
        t.push(vec![
            k.to_string(),
            num(wm.mean(k)),
            num(wm.se(k)),
            num(ss.mean(k)),
            num(ss.se(k)),
            num(a.ratio(k)),
            flag(a.is_capped(k)),
        ]);
    }
    t
}

fn headline(a: &AmplificationReport) -> Vec<(usize, f64)> {
    [1, 2, 5, 10].into_iter().filter(|&k| k <= a.ratios.len()).map(|k| (k, a.ratio(k))).collect()
}

/// Error curves and amplification for the GRU under the configured
/// protocol, the symmetric-timing control and the attack dominance check.
pub fn run_core(config: &ExperimentConfig, out: &Path) -> Result<ExperimentOutput> {
    let spec = config.attack_spec();
    let set = measure_with(config, WeightSource::Drawn, &spec, false)?;
    let a = amplification(&set.wm, &set.ss, config.eta)?;
    let tier = classify_risk_tier(a.ratio(1))?;
    let mut table = core_table(&set.wm, &set.ss, &a);
    for (k, v) in headline(&a) {
        table.note(&format!("a_{k}"), num(v));
    }
    table.note("tier", tier);
    table.note("retries", set.retries);
    let mut files = vec![write_csv(out, "core.csv", &table)?];

    let a1 = a.ratio(1);
    let mut checks = vec![
        Check::new("core_a1_band", (1.5..=3.5).contains(&a1), format!("A_1 = {a1:.4}")),
        Check::new("core_tier", tier == RiskTier::Moderate, format!("tier {tier}")),
    ];
    if a.ratios.len() >= 10 {
        let r = |k| a.ratio(k);
        let ok = r(1) > r(2) && r(2) > r(5) && r(5) > r(10) && r(10) < 0.01;
        checks.push(Check::new(
            "core_decay_shape",
            ok,
            format!("A_1 {:.4} A_2 {:.4} A_5 {:.3e} A_10 {:.3e}", r(1), r(2), r(5), r(10)),
        ));
    }

    let sym_cfg = ExperimentConfig { protocol: Protocol::Symmetric, ..config.clone() };
    let sym = measure_with(&sym_cfg, WeightSource::Drawn, &spec, false)?;
    let sa = amplification(&sym.wm, &sym.ss, config.eta)?;
    files.push(write_csv(out, "core_symmetric.csv", &core_table(&sym.wm, &sym.ss, &sa))?);
    let zero = sym.records.iter().all(|r| r.ss[1..].iter().all(|&e| e == 0.0));
    let all_capped = sa.capped.iter().all(|&c| c);
    checks.push(Check::new(
        "symmetric_zero_baseline",
        zero && all_capped,
        format!("E_ss(k>=1) all zero: {zero}; all capped: {all_capped}"),
    ));

    let dom = attack_dominance(config)?;
    checks.push(Check::new(
        "attack_dominance",
        dom.win_rate() >= 0.95,
        format!("{} of {} trials ({} degenerate)", dom.wins, dom.trials, dom.degenerate),
    ));

    let ak: serde_json::Map<String, Value> =
        headline(&a).into_iter().map(|(k, v)| (format!("a_{k}"), json!(v))).collect();
    let summary = json!({
        "a_k": ak,
        "tier": tier.to_string(),
        "e1_wm": set.wm.mean(1),
        "e1_ss": set.ss.mean(1),
        "encoding0": set.encoding0.mean,
        "retries": set.retries,
        "symmetric_ss_zero": zero,
        "attack_dominance": dom.win_rate(),
    });
    Ok(ExperimentOutput { name: "core", files, summary, checks })
}

/// GRU against the RSSM proxy on shared observation seeds.
pub fn run_arch_compare(config: &ExperimentConfig, out: &Path) -> Result<ExperimentOutput> {
    let cfg = ExperimentConfig { architecture: Architecture::Both, ..config.clone() };
    let set = measure_with(&cfg, WeightSource::Drawn, &cfg.attack_spec(), true)?;
    let gru = amplification(&set.wm, &set.ss, cfg.eta)?;
    let rssm = amplification(set.rssm.as_ref().expect("measured"), &set.ss, cfg.eta)?;
    let mut table = CsvTable::new(ARCH_COLUMNS);
    for k in 1..=cfg.steps {
        table.push(vec![
            k.to_string(),
            num(gru.ratio(k)),
            num(rssm.ratio(k)),
            flag(gru.is_capped(k)),
            flag(rssm.is_capped(k)),
        ]);
    }
    let files = vec![write_csv(out, "arch.csv", &table)?];
    let (g1, r1) = (gru.ratio(1), rssm.ratio(1));
    let upto = cfg.steps.min(15);
    let min_rssm = (1..=upto).map(|k| rssm.ratio(k)).fold(f64::INFINITY, f64::min);
    let checks = vec![
        Check::new("arch_rssm_below_gru", r1 < g1, format!("A_1 rssm {r1:.4} gru {g1:.4}")),
        Check::new("arch_rssm_below_1_2", r1 < 1.2, format!("A_1 rssm {r1:.4}")),
        Check::new("arch_rssm_floor", min_rssm > 0.005, format!("min A_k (k<={upto}) {min_rssm:.3e}")),
    ];
    let summary = json!({ "a1_gru": g1, "a1_rssm": r1, "min_rssm_a_k_to_15": min_rssm });
    Ok(ExperimentOutput { name: "arch-compare", files, summary, checks })
}

/// Adversarial fine-tuning of the fixed-weights model, then paired
/// before/after curves and the budget sweep.
pub fn run_mitigation(config: &ExperimentConfig, out: &Path) -> Result<ExperimentOutput> {
    config.validate()?;
    let ft = config.finetune.clone().unwrap_or_default();
    let (before, ..) = draw_params(config, FIXED_WEIGHTS_STREAM)?;
    let (after, history) = adversarial_finetune(&before, &ft, config.master_seed)?;
    let report = evaluate_mitigation(&before, &after, config)?;

    let mut table = CsvTable::new(MITIGATION_COLUMNS);
    for k in 1..=config.steps {
        table.push(vec![
            k.to_string(),
            num(report.before.ratio(k)),
            num(report.after.ratio(k)),
            report.reduction(k).map(num).unwrap_or_default(),
        ]);
    }
    table.note("clean_drift", num(report.clean_drift));
    table.note("clean_norm_before", num(report.clean_norm_before));
    table.note("clean_norm_after", num(report.clean_norm_after));
    let mut files = vec![write_csv(out, "mitigation.csv", &table)?];

    let rows = budget_sweep(config, &config.epsilon_grid, &before, &after)?;
    let mut sweep = CsvTable::new(SWEEP_COLUMNS);
    for r in &rows {
        sweep.push(vec![num(r.epsilon), num(r.before.mean), num(r.before.se), num(r.after.mean), num(r.after.se)]);
    }
    files.push(write_csv(out, "sweep.csv", &sweep)?);

    let mut hist = CsvTable::new(HISTORY_COLUMNS);
    for i in 0..history.loss.len() {
        hist.push(vec![
            i.to_string(),
            num(history.loss[i]),
            num(history.sensitivity[i]),
            num(history.preservation[i]),
        ]);
    }
    files.push(write_csv(out, "finetune_history.csv", &hist)?);
    for (name, p) in [("baseline_params.txt", &before), ("hardened_params.txt", &after)] {
        let path = out.join(name);
        save_params(p, &path)?;
        files.push(path);
    }

    let red = |k: usize| if k <= config.steps { report.reduction(k) } else { None };
    let show = |r: Option<f64>| r.map(|v| format!("{v:.1}%")).unwrap_or_else(|| "undefined".into());
    let ratio = report.norm_ratio();
    let sweep_ok = rows.iter().all(|r| r.after.mean <= r.before.mean);
    let monotone = rows.windows(2).all(|w| w[1].before.mean >= w[0].before.mean);
    let checks = vec![
        Check::new("mitigation_a1_reduction", red(1).is_some_and(|v| v >= 30.0), format!("A_1 {}", show(red(1)))),
        Check::new("mitigation_a5_reduction", red(5).is_some_and(|v| v >= 50.0), format!("A_5 {}", show(red(5)))),
        Check::new("mitigation_norm_bound", (0.25..=4.0).contains(&ratio), format!("norm ratio {ratio:.3}")),
        Check::new(
            "mitigation_drift_bound",
            report.clean_drift < 2.0 * report.clean_norm_before,
            format!("drift {:.4} vs norm {:.4}", report.clean_drift, report.clean_norm_before),
        ),
        Check::new("sweep_hardened_not_worse", sweep_ok, format!("{} budgets", rows.len())),
        Check::new("sweep_baseline_monotone", monotone, format!("{} budgets", rows.len())),
    ];
    let summary = json!({
        "a1_before": report.before.ratio(1),
        "a1_after": report.after.ratio(1),
        "reduction_a1": red(1),
        "reduction_a5": red(5),
        "reduction_a10": red(10),
        "clean_drift": report.clean_drift,
        "norm_ratio": ratio,
        "outer_steps": ft.outer_steps,
        "learning_rate": ft.learning_rate,
        "lambda": ft.lambda,
    });
    Ok(ExperimentOutput { name: "mitigate", files, summary, checks })
}

/// Cumulative reward gaps for `h = 1..=H`, plus the `δ = 0` control.
pub fn run_reward_gap(config: &ExperimentConfig, out: &Path) -> Result<ExperimentOutput> {
    let h = config.horizon;
    let set = measure_with(config, WeightSource::Drawn, &config.attack_spec(), false)?;
    let report = reward_gap_from(&set, h)?;
    let mut table = CsvTable::new(REWARD_COLUMNS);
    for r in &report.rows {
        table.push(vec![
            r.horizon.to_string(),
            num(r.clean.mean),
            num(r.clean.se),
            num(r.perturbed.mean),
            num(r.perturbed.se),
            num(r.wm_gap.mean),
            num(r.wm_gap.se),
            num(r.ss_gap.mean),
            num(r.ss_gap.se),
        ]);
    }
    let files = vec![write_csv(out, "reward.csv", &table)?];

    let zero_cfg = ExperimentConfig { attack: AttackMethod::Zero, ..config.clone() };
    let zero_set = measure_with(&zero_cfg, WeightSource::Drawn, &zero_cfg.attack_spec(), false)?;
    let zero = reward_gap_from(&zero_set, h)?;
    let zero_ok = zero.rows.iter().all(|r| r.wm_gap.mean == 0.0 && r.ss_gap.mean == 0.0);
    let last = report.at(h);
    let (wm, ss) = (last.wm_gap.mean, last.ss_gap.mean);
    let ratio = if ss > 0.0 { wm / ss } else { f64::INFINITY };
    let checks = vec![
        Check::new("reward_wm_gap_larger", wm > ss, format!("H={h}: wm {wm:.3e} ss {ss:.3e}")),
        Check::new("reward_gap_ratio", ratio > 2.0, format!("wm/ss {ratio:.3}")),
        Check::new("reward_zero_control", zero_ok, "delta = 0 gaps"),
    ];
    let summary = json!({ "horizon": h, "wm_gap": wm, "ss_gap": ss, "gap_ratio": ratio, "clean": last.clean.mean });
    Ok(ExperimentOutput { name: "reward-gap", files, summary, checks })
}

pub fn run_risk(config: &ExperimentConfig, out: &Path) -> Result<ExperimentOutput> {
    let o = run_risk_pipeline(&config.risk, config.master_seed)?;
    let r = &o.report;
    let text_path = out.join("risk_report.txt");
    write_text(&text_path, &r.to_text())?;
    let mut table = CsvTable::new(RISK_SCORE_COLUMNS);
    for s in &o.scores {
        table.push(vec![
            s.region.as_str().to_string(),
            s.index.to_string(),
            num(s.disagreement),
            num(s.log_density),
            flag(s.flagged),
        ]);
    }
    let files = vec![text_path, write_csv(out, "risk_scores.csv", &table)?];
    let checks = vec![
        Check::new("risk_disagreement_ratio", r.disagreement_ratio >= 1.5, format!("{:.3}", r.disagreement_ratio)),
        Check::new("risk_heldout_flags", r.heldout_flag_rate < 0.05, format!("{:.4}", r.heldout_flag_rate)),
        Check::new("risk_probe_flags", r.probes_flagged, "mean + 10 sigma per dimension"),
        Check::new("risk_tv_self", r.tv.self_test < 0.1, format!("{:.4}", r.tv.self_test)),
        Check::new("risk_tv_corrupted", r.tv.corrupted > 0.3, format!("{:.4}", r.tv.corrupted)),
        Check::new("risk_tv_shuffled", r.tv.shuffled < 0.1, format!("{:.4}", r.tv.shuffled)),
        Check::new("risk_tier", r.tier == RiskTier::Moderate, format!("A_1 {} -> {}", r.a_1, r.tier)),
    ];
    let summary = serde_json::to_value(r).map_err(|e| Error::invalid(e.to_string()))?;
    Ok(ExperimentOutput { name: "risk", files, summary, checks })
}

pub fn run_gradcheck(config: &ExperimentConfig, out: &Path) -> Result<ExperimentOutput> {
    let results = run_gradcheck_suite(config.master_seed, GRADCHECK_POINTS)?;
    let mut table = CsvTable::new(&["objective", "points", "max_rel_error", "passed"]);
    for r in &results {
        table.push(vec![r.name.clone(), r.points.to_string(), num(r.max_rel_error), flag(r.passed)]);
    }
    let files = vec![write_csv(out, "gradcheck.csv", &table)?];
    let checks = results
        .iter()
        .map(|r| Check::new(&format!("gradcheck_{}", r.name), r.passed, format!("max rel error {:.2e}", r.max_rel_error)))
        .collect();
    let summary = serde_json::to_value(&results).map_err(|e| Error::invalid(e.to_string()))?;
    Ok(ExperimentOutput { name: "gradcheck", files, summary, checks })
}

pub fn run_named(name: &str, config: &ExperimentConfig, out: &Path) -> Result<ExperimentOutput> {
    match name {
        "core" => run_core(config, out),
        "arch-compare" => run_arch_compare(config, out),
        "mitigate" => run_mitigation(config, out),
        "reward-gap" => run_reward_gap(config, out),
        "risk" => run_risk(config, out),
        "gradcheck" => run_gradcheck(config, out),
        other => Err(Error::invalid(format!("unknown experiment {other:?}"))),
    }
}

/// `summary.json` over the given outputs, keyed by experiment name.
pub fn write_summary(out: &Path, outputs: &[ExperimentOutput]) -> Result<PathBuf> {
    let mut map = serde_json::Map::new();
    for o in outputs {
        map.insert(
            o.name.to_string(),
            json!({ "summary": o.summary, "checks": o.checks }),
        );
    }
    let path = out.join("summary.json");
    let text = serde_json::to_string_pretty(&Value::Object(map)).expect("json");
    write_text(&path, &(text + "\n"))?;
    Ok(path)
}
