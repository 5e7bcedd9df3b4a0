//! Executable acceptance battery.
//!
//! Twelve end-to-end checks validate the numeric core against closed forms,
//! independent oracles and statistical bounds, and validate the simulator
//! and warden against their design guarantees. Each check returns a
//! [`CriterionOutcome`] with a measured detail line; `run_all` executes the
//! battery in order. The same checks back the `selftest` CLI verb and the
//! acceptance integration test.

use std::error::Error;
use std::fmt::Write as _;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::budget::{admissible_lack_loss, loss_to_rate};
use crate::codec::CodecProfile;
use crate::control::{
    compare_controllers, planned_rate, ControllerMode, DenominatorMode, RateController,
};
use crate::duration::{approx_conditional_mean, approx_horizon, calibrate_scale, WeibullModel};
use crate::quality::{delta_mos, loss_budget_for_mos, mos_from_loss, mos_gain, MosParams};
use crate::runner::{derive_call_seed, run_batch, run_experiment};
use crate::sim::{run_call, Scenario};
use crate::warden::{
    active_filter, duration_distribution_test, passive_loss_scan, DurationReference, FilterAction,
    PassiveThreshold,
};

/// Result of one acceptance check.
#[derive(Debug, Clone)]
pub struct CriterionOutcome {
    pub id: u8,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl std::fmt::Display for CriterionOutcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} [{:02}] {}: {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.detail
        )
    }
}

type CheckResult = Result<(bool, String), Box<dyn Error>>;

fn check(id: u8, name: &'static str, body: impl FnOnce() -> CheckResult) -> CriterionOutcome {
    match body() {
        Ok((passed, detail)) => CriterionOutcome { id, name, passed, detail },
        Err(e) => CriterionOutcome { id, name, passed: false, detail: format!("errored: {e}") },
    }
}

/// Runs all twelve checks in order.
pub fn run_all() -> Vec<CriterionOutcome> {
    vec![
        criterion_01(),
        criterion_02(),
        criterion_03(),
        criterion_04(),
        criterion_05(),
        criterion_06(),
        criterion_07(),
        criterion_08(),
        criterion_09(),
        criterion_10(),
        criterion_11(),
        criterion_12(),
    ]
}

const REFERENCE_MEAN_S: f64 = 117.31;

/// Five dispersion profiles used across the analytic checks: heavy-tailed
/// (cv 2.23) through strongly peaked (cv 0.32), all at the same mean.
const SHAPE_TABLE: [(f64, f64, f64); 5] = [
    (3.4, 130.57, 0.32),
    (2.0, 132.37, 0.52),
    (1.2, 124.71, 0.84),
    (1.0, 117.31, 1.00),
    (0.5, 58.65, 2.23),
];

/// Calibrated scale and dispersion reproduce the reference table quickly.
pub fn criterion_01() -> CriterionOutcome {
    check(1, "weibull_calibration_table", || {
        let start = Instant::now();
        let mut worst_scale = 0.0f64;
        let mut worst_cv = 0.0f64;
        for (shape, scale_ref, cv_ref) in SHAPE_TABLE {
            let model = calibrate_scale(shape, REFERENCE_MEAN_S)?;
            worst_scale = worst_scale.max((model.scale() - scale_ref).abs() / scale_ref);
            worst_cv = worst_cv.max((model.stats().cv - cv_ref).abs());
        }
        let elapsed = start.elapsed();
        let passed = worst_scale <= 0.005 && worst_cv <= 0.01 && elapsed.as_secs_f64() < 1.0;
        Ok((
            passed,
            format!(
                "max scale error {:.3e} (cap 5e-3), max cv error {:.3e} (cap 1e-2), {} us",
                worst_scale,
                worst_cv,
                elapsed.as_micros()
            ),
        ))
    })
}

/// The worked loss-budget example holds with exact arithmetic.
pub fn criterion_02() -> CriterionOutcome {
    check(2, "budget_worked_examples", || {
        let p_l = admissible_lack_loss(0.05, 0.02)?;
        let expected = (0.05 - 0.02) / (1.0 - 0.02);
        let budget_err = (p_l - 0.030612244897959186).abs();
        let rate = loss_to_rate(&CodecProfile::g711(false), 0.005)?;
        let passed = p_l == expected && budget_err <= 1e-15 && rate == 320.0;
        Ok((
            passed,
            format!("admissible covert loss {p_l:.15} (err {budget_err:.1e}), 0.5% of G.711 = {rate} b/s"),
        ))
    })
}

/// The exponential profile is memoryless: remaining life is flat in t.
pub fn criterion_03() -> CriterionOutcome {
    check(3, "exponential_memorylessness", || {
        let model = calibrate_scale(1.0, REFERENCE_MEAN_S)?;
        let mut worst = 0.0f64;
        for t in (0..=600).step_by(30) {
            let t = t as f64;
            let m = model.conditional_mean_remaining(t)?;
            worst = worst.max((m - (t + REFERENCE_MEAN_S)).abs() / REFERENCE_MEAN_S);
        }
        let passed = worst <= 1e-6;
        Ok((passed, format!("max relative deviation {worst:.3e} (cap 1e-6) on t = 0..600 s")))
    })
}

/// Conditional means sit inside their distribution-free envelope.
pub fn criterion_04() -> CriterionOutcome {
    check(4, "conditional_mean_bounds", || {
        let start = Instant::now();
        let mut checked = 0u32;
        let mut ok = true;
        let mut worst_margin = f64::INFINITY;
        for (shape, _, _) in SHAPE_TABLE {
            let model = calibrate_scale(shape, REFERENCE_MEAN_S)?;
            let mean = model.stats().mean;
            for t in (0..=600).step_by(10) {
                let t = t as f64;
                let m = model.conditional_mean_remaining(t)?;
                let lower = t.max(mean);
                let upper = mean / model.survival(t)?;
                let low_ok = m >= lower - 1e-9 * lower.max(1.0);
                let high_ok = m <= upper + 1e-9 * upper.max(1.0);
                ok &= low_ok && high_ok;
                worst_margin = worst_margin.min((m - lower).min(upper - m));
                checked += 1;
            }
        }
        let elapsed = start.elapsed();
        let passed = ok && elapsed.as_secs_f64() < 10.0;
        Ok((
            passed,
            format!(
                "{checked} grid points within [max(t, mean), mean/S(t)], tightest margin {worst_margin:.3e} s, {} ms",
                elapsed.as_millis()
            ),
        ))
    })
}

/// Quantile horizons invert the conditional survival exactly.
pub fn criterion_05() -> CriterionOutcome {
    check(5, "quantile_round_trip", || {
        let mut worst = 0.0f64;
        for (shape, _, _) in SHAPE_TABLE {
            let model = calibrate_scale(shape, REFERENCE_MEAN_S)?;
            for t in (0..=600).step_by(10) {
                let t = t as f64;
                for xi in [0.8, 0.9, 0.95] {
                    let horizon = model.quantile_horizon(t, xi)?;
                    let survival = model.conditional_survival(t, horizon)?;
                    worst = worst.max((survival - xi).abs());
                }
            }
        }
        let passed = worst <= 1e-9;
        Ok((passed, format!("max |survival - xi| = {worst:.3e} (cap 1e-9)")))
    })
}

struct OracleErrors {
    max_rel: f64,
    max_log: f64,
}

/// Steps a controller uncapped with Euler step `dt` and measures both the
/// relative and log deviation from the exact continuous schedule.
fn euler_errors(
    mode: ControllerMode,
    model: &WeibullModel,
    s0: f64,
    dt: f64,
    horizon: f64,
    exact_ir: impl Fn(f64) -> f64,
) -> Result<OracleErrors, Box<dyn Error>> {
    let mut ctl = RateController::new(mode, DenominatorMode::MeanResidual, s0)?;
    let steps = (horizon / dt).round() as usize;
    let mut max_rel = 0.0f64;
    let mut max_log = 0.0f64;
    for k in 0..steps {
        let t = k as f64 * dt;
        let d = ctl.step(Some(model), dt, f64::INFINITY)?;
        let exact = exact_ir(t);
        max_rel = max_rel.max((d.ir_sent_bps / exact - 1.0).abs());
        max_log = max_log.max((d.ir_sent_bps / exact).ln().abs());
    }
    Ok(OracleErrors { max_rel, max_log })
}

/// Discrete controller schedules track their ODE solutions, and the error
/// is at least halved when the step is halved.
pub fn criterion_06() -> CriterionOutcome {
    check(6, "controller_euler_oracles", || {
        let model = calibrate_scale(1.0, REFERENCE_MEAN_S)?;
        let e = REFERENCE_MEAN_S;
        let s0 = 1000.0;

        // Exponential profile: both controllers decay exponentially, with
        // characteristic times E and -E ln(xi).
        let residual_exact = move |t: f64| s0 / e * (-t / e).exp();
        let c = -e * 0.8f64.ln();
        let quantile_exact = move |t: f64| s0 / c * (-t / c).exp();

        // Horizons near three characteristic times, divisible by both steps.
        let res_h = 350.0;
        let qnt_h = 78.0;

        let res_fine =
            euler_errors(ControllerMode::ResidualMean, &model, s0, 0.1, res_h, residual_exact)?;
        let res_coarse =
            euler_errors(ControllerMode::ResidualMean, &model, s0, 0.2, res_h, residual_exact)?;
        let qnt_fine = euler_errors(
            ControllerMode::Quantile { xi: 0.8 },
            &model,
            s0,
            0.1,
            qnt_h,
            quantile_exact,
        )?;
        let qnt_coarse = euler_errors(
            ControllerMode::Quantile { xi: 0.8 },
            &model,
            s0,
            0.2,
            qnt_h,
            quantile_exact,
        )?;

        let within_1pct = res_fine.max_rel <= 0.01 && qnt_fine.max_rel <= 0.01;
        let halving = res_fine.max_log <= res_coarse.max_log / 2.0
            && qnt_fine.max_log <= qnt_coarse.max_log / 2.0;
        let passed = within_1pct && halving;
        Ok((
            passed,
            format!(
                "dt=0.1 max relative error: residual {:.3e}, quantile {:.3e} (cap 1e-2); \
                 log-error halving {:.4e}->{:.4e} and {:.4e}->{:.4e}",
                res_fine.max_rel,
                qnt_fine.max_rel,
                res_coarse.max_log,
                res_fine.max_log,
                qnt_coarse.max_log,
                qnt_fine.max_log
            ),
        ))
    })
}

/// The quantile schedule front-loads, then hands the lead to the
/// residual-mean schedule at the predicted time.
pub fn criterion_07() -> CriterionOutcome {
    check(7, "controller_ordering_and_crossing", || {
        let model = calibrate_scale(1.0, REFERENCE_MEAN_S)?;
        let cmp = compare_controllers(&model, 1000.0, 0.9, 60.0, 0.1)?;
        let crossing = cmp.crossing_s.unwrap_or(f64::NAN);
        let crossing_ok = (crossing - 31.1).abs() <= 0.5;

        let heavy = calibrate_scale(0.5, REFERENCE_MEAN_S)?;
        let q0 = planned_rate(
            &ControllerMode::Quantile { xi: 0.8 },
            DenominatorMode::MeanResidual,
            Some(&heavy),
            0.0,
            1000.0,
        )?;
        let r0 = planned_rate(
            &ControllerMode::ResidualMean,
            DenominatorMode::MeanResidual,
            Some(&heavy),
            0.0,
            1000.0,
        )?;
        let ratio = q0 / r0;
        let passed = cmp.quantile_leads_initially && crossing_ok && ratio > 10.0;
        Ok((
            passed,
            format!(
                "quantile leads initially: {}, schedules cross at {crossing:.3} s \
                 (expected 31.1 +- 0.5), heavy-tail front-load ratio {ratio:.2} (> 10)",
                cmp.quantile_leads_initially
            ),
        ))
    })
}

/// The linear engineering fits reproduce the exact values near cv = 1.
pub fn criterion_08() -> CriterionOutcome {
    check(8, "engineering_fit_anchors", || {
        let model = calibrate_scale(1.0, REFERENCE_MEAN_S)?;
        let exact_cond = model.conditional_mean_remaining(60.0)? / 60.0;
        let fit_cond = approx_conditional_mean(1.0, 1.0);
        let cond_err = (fit_cond - exact_cond).abs() / exact_cond;

        let exact_horizon = model.quantile_horizon(60.0, 0.8)? / 60.0;
        let fit_horizon = approx_horizon(1.0, 1.0);
        let horizon_err = (fit_horizon - exact_horizon).abs() / exact_horizon;

        let passed = cond_err < 0.02 && horizon_err < 0.02;
        Ok((
            passed,
            format!(
                "conditional mean fit {fit_cond:.3} vs exact {exact_cond:.4} min ({:.2}%), \
                 horizon fit {fit_horizon:.3} vs exact {exact_horizon:.4} min ({:.2}%), both under 2%",
                cond_err * 100.0,
                horizon_err * 100.0
            ),
        ))
    })
}

/// Quality gain and quality drop are mutually consistent, and the loss
/// budget inverts the quality curve.
pub fn criterion_09() -> CriterionOutcome {
    check(9, "quality_model_consistency", || {
        let params = MosParams::default();
        let codec = CodecProfile::g711(false);
        let p_n = 0.01;
        let ir0 = 320.0;
        let gain = mos_gain(&params, p_n, ir0, ir0, &codec)?;
        let drop = delta_mos(&params, p_n, ir0 / codec.channel_rate_bps())?;
        let gain_err = (gain - drop).abs();

        let mut worst_round_trip = 0.0f64;
        for i in 0..20 {
            let target = 3.2 + 0.8 * i as f64 / 19.0;
            let budget = loss_budget_for_mos(&params, target, p_n)?;
            let back = mos_from_loss(&params, p_n + budget.p_l)?;
            worst_round_trip = worst_round_trip.max((back - target).abs());
        }
        let passed = gain_err <= 1e-9 && worst_round_trip <= 1e-9;
        Ok((
            passed,
            format!(
                "full-rate giveback matches quality drop to {gain_err:.2e}, \
                 20-point MOS round-trip max error {worst_round_trip:.2e} (caps 1e-9)"
            ),
        ))
    })
}

/// A thousand simulated calls land on the configured loss targets within
/// three binomial standard deviations.
pub fn criterion_10() -> CriterionOutcome {
    check(10, "simulation_loss_statistics", || {
        let start = Instant::now();
        let scenario = Scenario::from_toml_str(
            r#"
            [network]
            loss = 0.01

            [duration]
            mode = "fixed"
            seconds = 200.0

            [steganogram]
            size_bits = 10000000

            [controller]
            mode = "constant"
            rate_bps = 320.0

            [experiment]
            master_seed = 1
            "#,
        )?;
        let seeds: Vec<u64> = (0..1000).map(|i| derive_call_seed(0x5EED_CA11, i)).collect();
        let summaries = run_batch(&scenario, &seeds)?;

        let mut sent = 0u64;
        let mut natural = 0u64;
        let mut late_steg = 0u64;
        let mut worst_compose = 0.0f64;
        for s in &summaries {
            sent += s.packets_sent;
            natural += s.network_lost + s.late_other;
            late_steg += s.late_steg;
            let composed = 1.0 - (1.0 - s.realized_p_n) * (1.0 - s.realized_p_l);
            worst_compose = worst_compose.max((composed - s.realized_p_t).abs());
        }
        let survivors = sent - natural;
        let p_l_hat = late_steg as f64 / survivors as f64;
        let p_n_hat = natural as f64 / sent as f64;
        let p_t_hat = (natural + late_steg) as f64 / sent as f64;
        let p_t_ref = 1.0 - (1.0 - 0.01) * (1.0 - 0.005);

        let sigma_l = (0.005 * 0.995 / survivors as f64).sqrt();
        let sigma_n = (0.01 * 0.99 / sent as f64).sqrt();
        let sigma_t = (p_t_ref * (1.0 - p_t_ref) / sent as f64).sqrt();
        let elapsed = start.elapsed();

        let passed = (p_l_hat - 0.005).abs() <= 3.0 * sigma_l
            && (p_n_hat - 0.01).abs() <= 3.0 * sigma_n
            && (p_t_hat - p_t_ref).abs() <= 3.0 * sigma_t
            && worst_compose <= 1e-12
            && elapsed.as_secs_f64() < 60.0;
        Ok((
            passed,
            format!(
                "1000 calls, {sent} packets in {:.1} s: covert loss {p_l_hat:.6} \
                 (target 0.005 +- {:.1e}), network loss {p_n_hat:.6} (target 0.01 +- {:.1e}), \
                 total {p_t_hat:.6} (target {p_t_ref:.6} +- {:.1e}), composition error {worst_compose:.1e}",
                elapsed.as_secs_f64(),
                3.0 * sigma_l,
                3.0 * sigma_n,
                3.0 * sigma_t
            ),
        ))
    })
}

/// The active warden kills the channel cleanly at the true buffer size, the
/// passive scan orders cohorts by covert loss, and the duration test holds
/// its false-positive rate.
pub fn criterion_11() -> CriterionOutcome {
    check(11, "warden_effectiveness", || {
        // Active filter at the receiver's exact allowance.
        let lack = Scenario::from_toml_str(
            r#"
            [network]
            loss = 0.01
            [duration]
            mode = "fixed"
            seconds = 120.0
            [steganogram]
            size_bits = 10000000
            [controller]
            mode = "constant"
            rate_bps = 1280.0
            [experiment]
            master_seed = 1
            "#,
        )?;
        let trace = run_call(&lack, 77)?;
        let (filtered, report) =
            active_filter(&trace.events, 100, FilterAction::Erase, &MosParams::default())?;
        let active_ok = trace.delivered_bits > 0
            && crate::sim::delivered_steg_bits(&filtered) == 0
            && report.collateral_played == 0
            && report.steg_bits_destroyed > 0;

        // Passive scan: cohorts with covert loss 0 and 0.02 on the same
        // network and seeds.
        let mut flagged = Vec::new();
        for rate in ["0.0", "1280.0"] {
            let s = Scenario::from_toml_str(&format!(
                r#"
                [network]
                loss = 0.01
                [duration]
                mode = "fixed"
                seconds = 60.0
                [steganogram]
                size_bits = 10000000
                [controller]
                mode = "constant"
                rate_bps = {rate}
                [experiment]
                master_seed = 1
                "#,
            ))?;
            let seeds: Vec<u64> = (0..60).map(|i| derive_call_seed(0xBADC0DE, i)).collect();
            let summaries = run_batch(&s, &seeds)?;
            let losses: Vec<f64> = summaries.iter().map(|x| x.realized_p_t).collect();
            let scan = passive_loss_scan(&losses, None, PassiveThreshold::Absolute(0.022))?;
            flagged.push(scan.flagged);
        }
        let passive_ok = flagged[1] > flagged[0];

        // Duration-test false positives across 500 clean cohorts of 1000.
        let model = calibrate_scale(2.0, REFERENCE_MEAN_S)?;
        let mut rng = ChaCha8Rng::seed_from_u64(0x00D1_7E57);
        let cohorts = 500;
        let mut ks_flags = 0usize;
        for _ in 0..cohorts {
            let mut sample = Vec::with_capacity(1000);
            for _ in 0..1000 {
                let u: f64 = rng.random();
                sample.push(model.sample_duration(u.max(f64::MIN_POSITIVE))?);
            }
            let r = duration_distribution_test(&sample, DurationReference::Weibull(&model), 0.05)?;
            if r.flagged {
                ks_flags += 1;
            }
        }
        let fpr = ks_flags as f64 / cohorts as f64;
        let fpr_ok = (fpr - 0.05).abs() <= 0.02;

        let passed = active_ok && passive_ok && fpr_ok;
        Ok((
            passed,
            format!(
                "active filter at the true buffer: {} covert bits destroyed, zero collateral, \
                 nothing extracted; passive flags {} vs {} of 60 calls; \
                 duration-test false-positive rate {fpr:.3} (0.05 +- 0.02)",
                report.steg_bits_destroyed, flagged[1], flagged[0]
            ),
        ))
    })
}

/// Rerunning an experiment with the same master seed writes byte-identical
/// artifacts.
pub fn criterion_12() -> CriterionOutcome {
    check(12, "experiment_determinism", || {
        let scenario = Scenario::from_toml_str(
            r#"
            [network]
            loss = 0.01

            [duration]
            mode = "sampled"
            shape = 1.0
            mean_seconds = 30.0

            [steganogram]
            size_bits = 2000

            [controller]
            mode = "quantile"
            xi = 0.9

            [experiment]
            master_seed = 2026
            replications = 32
            write_packet_traces = true

            [warden]
            passive_threshold = 0.05

            [sweep]
            shape = [1.0, 2.0]
            xi = [0.8, 0.9]
            "#,
        )?;
        let dir_a = tempfile::tempdir()?;
        let dir_b = tempfile::tempdir()?;
        let out_a = run_experiment(&scenario, dir_a.path())?;
        let out_b = run_experiment(&scenario, dir_b.path())?;

        let names_a: Vec<String> = out_a
            .files
            .iter()
            .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
            .collect();
        let names_b: Vec<String> = out_b
            .files
            .iter()
            .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
            .collect();
        let mut identical = names_a == names_b;
        let mut total_bytes = 0usize;
        let mut listing = String::new();
        if identical {
            for (fa, fb) in out_a.files.iter().zip(&out_b.files) {
                let a = std::fs::read(fa)?;
                let b = std::fs::read(fb)?;
                identical &= a == b && !a.is_empty();
                total_bytes += a.len();
                let _ = write!(
                    listing,
                    "{}{} ({} bytes)",
                    if listing.is_empty() { "" } else { ", " },
                    fa.file_name().unwrap().to_string_lossy(),
                    a.len()
                );
            }
        }
        Ok((
            identical,
            format!(
                "{} calls over 4 sweep points; artifacts byte-identical across reruns: {listing} \
                 ({total_bytes} bytes total)",
                out_a.total_calls
            ),
        ))
    })
}
