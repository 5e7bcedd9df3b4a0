//! Warden-side analyses: the observer trying to detect or destroy the
//! covert channel.
//!
//! Three attacks are modeled. A passive warden scans per-call loss
//! fractions against a threshold, or tests whether call durations still
//! match the expected distribution. An active warden destroys the payload
//! of every packet that arrives later than the buffer it assumes at the
//! receiver, trading collateral damage to ordinary audio against covert
//! bits destroyed.
//!
//! The module also hosts the CSV readers matching the simulator's writers,
//! so captured runs round-trip losslessly.

use std::io::Read;

use thiserror::Error;

use crate::duration::{DurationError, EmpiricalDensity, WeibullModel};
use crate::quality::{mos_from_loss, MosParams, QualityError};
use crate::sim::trace::{CallSummary, OutcomeCounts, PacketEvent, PacketOutcome, RtcpReport};

#[derive(Debug, Error)]
pub enum WardenError {
    #[error("sample is empty")]
    EmptySample,
    #[error("duration test needs at least {min} samples, got {got}")]
    SampleTooSmall { got: usize, min: usize },
    #[error("significance level must lie strictly inside (0, 1), got {0}")]
    InvalidAlpha(f64),
    #[error("loss fraction must lie in [0, 1], got {0}")]
    InvalidLossFraction(f64),
    #[error("durations must be finite and non-negative, got {0}")]
    InvalidDuration(f64),
    #[error("sigma threshold rule needs a baseline cohort of at least 2 calls")]
    MissingBaseline,
    #[error("csv read failed: {0}")]
    Csv(#[from] csv::Error),
    #[error("duration model failed: {0}")]
    Duration(#[from] DurationError),
    #[error("quality model failed: {0}")]
    Quality(#[from] QualityError),
}

/// How the passive loss scan sets its alarm threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PassiveThreshold {
    /// Flag calls whose loss fraction exceeds this value.
    Absolute(f64),
    /// Flag calls above `mean + multiplier * sd` of a clean baseline cohort.
    MeanPlusSigma { multiplier: f64 },
}

/// Outcome of scanning a cohort of per-call loss fractions.
#[derive(Debug, Clone, PartialEq)]
pub struct PassiveReport {
    /// Resolved numeric threshold the scan used.
    pub threshold: f64,
    /// One verdict per scanned call, in input order.
    pub flags: Vec<bool>,
    pub flagged: usize,
}

fn check_fractions(values: &[f64]) -> Result<(), WardenError> {
    for &v in values {
        if !(0.0..=1.0).contains(&v) {
            return Err(WardenError::InvalidLossFraction(v));
        }
    }
    Ok(())
}

/// Scans per-call total-loss fractions for values above a threshold.
///
/// The sigma rule derives the threshold from `baseline` (loss fractions of
/// calls known to be clean); the absolute rule ignores the baseline.
pub fn passive_loss_scan(
    observed: &[f64],
    baseline: Option<&[f64]>,
    rule: PassiveThreshold,
) -> Result<PassiveReport, WardenError> {
    if observed.is_empty() {
        return Err(WardenError::EmptySample);
    }
    check_fractions(observed)?;
    let threshold = match rule {
        PassiveThreshold::Absolute(t) => {
            if !(0.0..=1.0).contains(&t) {
                return Err(WardenError::InvalidLossFraction(t));
            }
            t
        }
        PassiveThreshold::MeanPlusSigma { multiplier } => {
            let base = baseline.ok_or(WardenError::MissingBaseline)?;
            if base.len() < 2 {
                return Err(WardenError::MissingBaseline);
            }
            check_fractions(base)?;
            let n = base.len() as f64;
            let mean = base.iter().sum::<f64>() / n;
            let var = base.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
            mean + multiplier * var.sqrt()
        }
    };
    let flags: Vec<bool> = observed.iter().map(|&v| v > threshold).collect();
    let flagged = flags.iter().filter(|&&f| f).count();
    Ok(PassiveReport { threshold, flags, flagged })
}

/// Distribution the duration test compares against.
#[derive(Debug, Clone, Copy)]
pub enum DurationReference<'a> {
    Weibull(&'a WeibullModel),
    Empirical(&'a EmpiricalDensity),
}

impl DurationReference<'_> {
    fn cdf(&self, t: f64) -> Result<f64, DurationError> {
        match self {
            DurationReference::Weibull(m) => m.cdf(t),
            DurationReference::Empirical(d) => Ok(d.cdf(t)),
        }
    }
}

/// Smallest cohort the asymptotic critical value is trusted for.
pub const KS_MIN_SAMPLES: usize = 30;

/// Result of the Kolmogorov-Smirnov duration test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KsReport {
    pub n: usize,
    /// Largest deviation between empirical and reference CDF.
    pub statistic: f64,
    /// Asymptotic rejection threshold `c(alpha) / sqrt(n)`.
    pub critical: f64,
    pub alpha: f64,
    pub flagged: bool,
}

/// Tests whether observed call durations (seconds) still follow the
/// reference distribution, at significance `alpha`.
///
/// Uses the asymptotic one-sample Kolmogorov-Smirnov critical value
/// `sqrt(-ln(alpha/2)/2) / sqrt(n)` and therefore insists on at least
/// [`KS_MIN_SAMPLES`] observations.
pub fn duration_distribution_test(
    durations_s: &[f64],
    reference: DurationReference<'_>,
    alpha: f64,
) -> Result<KsReport, WardenError> {
    let n = durations_s.len();
    if n < KS_MIN_SAMPLES {
        return Err(WardenError::SampleTooSmall { got: n, min: KS_MIN_SAMPLES });
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(WardenError::InvalidAlpha(alpha));
    }
    for &d in durations_s {
        if !d.is_finite() || d < 0.0 {
            return Err(WardenError::InvalidDuration(d));
        }
    }
    let mut sorted = durations_s.to_vec();
    sorted.sort_by(f64::total_cmp);
    let nf = n as f64;
    let mut statistic: f64 = 0.0;
    for (i, &x) in sorted.iter().enumerate() {
        let f = reference.cdf(x)?;
        let below = f - i as f64 / nf;
        let above = (i + 1) as f64 / nf - f;
        statistic = statistic.max(below).max(above);
    }
    let critical = (-(alpha / 2.0).ln() / 2.0).sqrt() / nf.sqrt();
    Ok(KsReport { n, statistic, critical, alpha, flagged: statistic > critical })
}

/// What the active warden does to packets it deems too late.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FilterAction {
    /// Zero the payload but let the packet through.
    #[default]
    Erase,
    /// Remove the packet entirely; the receiver sees a network loss.
    Drop,
}

/// Damage report of one active filtering pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActiveFilterReport {
    pub assumed_buffer_ms: u32,
    /// Arrived packets whose transit exceeded the assumed buffer.
    pub packets_affected: u64,
    /// Affected packets that carried covert payload.
    pub steg_packets_hit: u64,
    pub steg_bits_destroyed: u64,
    /// Packets the receiver would have played that the warden destroyed.
    pub collateral_played: u64,
    /// Quality cost of that collateral: MOS before minus MOS after.
    pub mos_penalty: f64,
    pub flagged: bool,
}

/// Destroys every arrived packet delayed beyond `assumed_buffer_ms` and
/// reports what that cost both sides.
///
/// The assumed buffer is the warden's guess at the receiver playout
/// allowance. Guessing at or above the real allowance destroys the covert
/// channel with zero collateral, because genuine audio always arrives
/// within the allowance; guessing below it also destroys packets that
/// would have played.
pub fn active_filter(
    events: &[PacketEvent],
    assumed_buffer_ms: u32,
    action: FilterAction,
    quality: &MosParams,
) -> Result<(Vec<PacketEvent>, ActiveFilterReport), WardenError> {
    let mut filtered = Vec::with_capacity(events.len());
    let mut packets_affected = 0u64;
    let mut steg_packets_hit = 0u64;
    let mut steg_bits_destroyed = 0u64;
    let mut collateral_played = 0u64;
    for e in events {
        let arrived = e.outcome != PacketOutcome::NetworkLost;
        if arrived && e.total_delay_ms > assumed_buffer_ms {
            packets_affected += 1;
            if e.steg {
                steg_packets_hit += 1;
                steg_bits_destroyed += u64::from(e.steg_bits);
            }
            if e.outcome == PacketOutcome::Played {
                collateral_played += 1;
            }
            let mut scrubbed = *e;
            scrubbed.steg_bits = 0;
            if action == FilterAction::Drop {
                scrubbed.outcome = PacketOutcome::NetworkLost;
            }
            filtered.push(scrubbed);
        } else {
            filtered.push(*e);
        }
    }
    let mos_penalty = if events.is_empty() {
        0.0
    } else {
        let c = OutcomeCounts::from_events(events);
        let sent = c.sent as f64;
        let unusable_before =
            (c.network_lost + c.late_steg + c.late_other) as f64 / sent;
        let unusable_after = unusable_before + collateral_played as f64 / sent;
        mos_from_loss(quality, unusable_before)? - mos_from_loss(quality, unusable_after)?
    };
    let report = ActiveFilterReport {
        assumed_buffer_ms,
        packets_affected,
        steg_packets_hit,
        steg_bits_destroyed,
        collateral_played,
        mos_penalty,
        flagged: packets_affected > 0,
    };
    Ok((filtered, report))
}

/// Total-loss fraction of each call, the quantity a passive warden can see.
pub fn loss_fractions(summaries: &[CallSummary]) -> Vec<f64> {
    summaries.iter().map(|s| s.realized_p_t).collect()
}

pub fn read_packets_csv<R: Read>(reader: R) -> Result<Vec<PacketEvent>, WardenError> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for row in rdr.deserialize() {
        out.push(row?);
    }
    Ok(out)
}

pub fn read_summaries_csv<R: Read>(reader: R) -> Result<Vec<CallSummary>, WardenError> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for row in rdr.deserialize() {
        out.push(row?);
    }
    Ok(out)
}

pub fn read_reports_csv<R: Read>(reader: R) -> Result<Vec<RtcpReport>, WardenError> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for row in rdr.deserialize() {
        out.push(row?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::duration::calibrate_scale;
    use crate::sim::trace::{delivered_steg_bits, write_packets_csv, write_summaries_csv};
    use crate::sim::{run_call, Scenario};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn absolute_scan_flags_strictly_above_threshold() {
        let report = passive_loss_scan(
            &[0.01, 0.03, 0.030001, 0.5],
            None,
            PassiveThreshold::Absolute(0.03),
        )
        .unwrap();
        assert_eq!(report.flags, vec![false, false, true, true]);
        assert_eq!(report.flagged, 2);
        assert!(matches!(
            passive_loss_scan(&[], None, PassiveThreshold::Absolute(0.03)),
            Err(WardenError::EmptySample)
        ));
        assert!(matches!(
            passive_loss_scan(&[1.5], None, PassiveThreshold::Absolute(0.03)),
            Err(WardenError::InvalidLossFraction(_))
        ));
    }

    #[test]
    fn sigma_rule_derives_threshold_from_the_baseline() {
        let baseline = [0.01, 0.02, 0.03];
        let report = passive_loss_scan(
            &[0.05, 0.03],
            Some(&baseline),
            PassiveThreshold::MeanPlusSigma { multiplier: 2.0 },
        )
        .unwrap();
        // mean 0.02, sample sd 0.01, threshold 0.04
        assert_relative_eq!(report.threshold, 0.04, max_relative = 1e-12);
        assert_eq!(report.flags, vec![true, false]);
        assert!(matches!(
            passive_loss_scan(&[0.1], None, PassiveThreshold::MeanPlusSigma { multiplier: 2.0 }),
            Err(WardenError::MissingBaseline)
        ));
    }

    #[test]
    fn higher_covert_loss_is_flagged_more_often() {
        // Same network, three covert rates; count cohort flags at one
        // absolute threshold. More covert loss must mean more flags.
        let mut rates_flagged = Vec::new();
        for rate in ["0.0", "640.0", "1280.0"] {
            let toml = format!(
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
                master_seed = 5
                "#
            );
            let s = Scenario::from_toml_str(&toml).unwrap();
            let losses: Vec<f64> = (0..60)
                .map(|i| run_call(&s, 1000 + i).unwrap().summary().realized_p_t)
                .collect();
            let report =
                passive_loss_scan(&losses, None, PassiveThreshold::Absolute(0.022)).unwrap();
            rates_flagged.push(report.flagged);
        }
        assert!(
            rates_flagged[0] < rates_flagged[1] && rates_flagged[1] < rates_flagged[2],
            "{rates_flagged:?}"
        );
    }

    #[test]
    fn duration_test_clears_matching_data_and_flags_scaled_data() {
        let model = calibrate_scale(1.0, 117.31).unwrap();
        // Stratified inverse-transform sample: empirical CDF hugs the model.
        let matching: Vec<f64> = (0..100)
            .map(|i| model.sample_duration((i as f64 + 0.5) / 100.0).unwrap())
            .collect();
        let clear =
            duration_distribution_test(&matching, DurationReference::Weibull(&model), 0.05)
                .unwrap();
        assert!(!clear.flagged, "D = {}", clear.statistic);
        assert_relative_eq!(clear.critical, 1.3581015157406196 / 10.0, max_relative = 1e-9);

        let doubled: Vec<f64> = matching.iter().map(|d| d * 2.0).collect();
        let caught =
            duration_distribution_test(&doubled, DurationReference::Weibull(&model), 0.05)
                .unwrap();
        assert!(caught.flagged, "D = {}", caught.statistic);
        // Exponential data at twice the scale peaks near u - u^2 at u = 1/2.
        assert!((caught.statistic - 0.25).abs() < 0.05);
    }

    #[test]
    fn duration_test_guards_its_preconditions() {
        let model = calibrate_scale(1.0, 117.31).unwrap();
        let few = vec![100.0; 29];
        assert!(matches!(
            duration_distribution_test(&few, DurationReference::Weibull(&model), 0.05),
            Err(WardenError::SampleTooSmall { got: 29, min: 30 })
        ));
        let enough = vec![100.0; 30];
        assert!(matches!(
            duration_distribution_test(&enough, DurationReference::Weibull(&model), 1.0),
            Err(WardenError::InvalidAlpha(_))
        ));
        let bad = vec![-1.0; 30];
        assert!(matches!(
            duration_distribution_test(&bad, DurationReference::Weibull(&model), 0.05),
            Err(WardenError::InvalidDuration(_))
        ));
    }

    #[test]
    fn false_positive_rate_sits_near_the_significance_level() {
        let model = calibrate_scale(2.0, 117.31).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0xFEED);
        let cohorts = 200;
        let mut flags = 0;
        for _ in 0..cohorts {
            let sample: Vec<f64> = (0..200)
                .map(|_| {
                    let u: f64 = rng.random();
                    model.sample_duration(u.max(f64::MIN_POSITIVE)).unwrap()
                })
                .collect();
            let r = duration_distribution_test(&sample, DurationReference::Weibull(&model), 0.05)
                .unwrap();
            if r.flagged {
                flags += 1;
            }
        }
        let rate = flags as f64 / cohorts as f64;
        // Loose sanity band; the tight calibration check lives in the
        // acceptance suite with a larger design.
        assert!(rate < 0.12, "false positive rate {rate}");
    }

    fn lack_call_events() -> Vec<PacketEvent> {
        let toml = r#"
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
            master_seed = 5
        "#;
        let s = Scenario::from_toml_str(toml).unwrap();
        run_call(&s, 77).unwrap().events
    }

    #[test]
    fn guessing_the_real_buffer_kills_the_channel_without_collateral() {
        let events = lack_call_events();
        assert!(delivered_steg_bits(&events) > 0);
        let (filtered, report) =
            active_filter(&events, 100, FilterAction::Erase, &MosParams::default()).unwrap();
        assert!(report.flagged);
        assert_eq!(report.collateral_played, 0);
        assert_eq!(report.mos_penalty, 0.0);
        assert!(report.steg_bits_destroyed > 0);
        assert_eq!(delivered_steg_bits(&filtered), 0);
        assert_eq!(filtered.len(), events.len());
    }

    #[test]
    fn overestimating_the_buffer_leaves_the_stream_untouched() {
        let events = lack_call_events();
        let (filtered, report) =
            active_filter(&events, 500, FilterAction::Erase, &MosParams::default()).unwrap();
        assert!(!report.flagged);
        assert_eq!(report.packets_affected, 0);
        assert_eq!(filtered, events);
        assert_eq!(delivered_steg_bits(&filtered), delivered_steg_bits(&events));
    }

    #[test]
    fn underestimating_the_buffer_costs_audio_quality() {
        let events = lack_call_events();
        // Genuine audio arrives between 60 and 80 ms; a 65 ms guess clips
        // some of it.
        let (filtered, report) =
            active_filter(&events, 65, FilterAction::Drop, &MosParams::default()).unwrap();
        assert!(report.collateral_played > 0);
        assert!(report.mos_penalty > 0.0);
        assert_eq!(delivered_steg_bits(&filtered), 0);
        let dropped = filtered
            .iter()
            .filter(|e| e.outcome == PacketOutcome::NetworkLost)
            .count();
        let before = events
            .iter()
            .filter(|e| e.outcome == PacketOutcome::NetworkLost)
            .count();
        assert_eq!(dropped as u64, before as u64 + report.packets_affected);
    }

    #[test]
    fn csv_artifacts_round_trip_through_the_readers() {
        let events = lack_call_events();
        let mut buf = Vec::new();
        write_packets_csv(&mut buf, &events).unwrap();
        let back = read_packets_csv(buf.as_slice()).unwrap();
        assert_eq!(back, events);

        let toml = r#"
            [network]
            loss = 0.02
            [duration]
            mode = "fixed"
            seconds = 30.0
            [steganogram]
            size_bits = 4000
            [controller]
            mode = "constant"
            rate_bps = 320.0
            [experiment]
            master_seed = 5
        "#;
        let s = Scenario::from_toml_str(toml).unwrap();
        let summaries: Vec<_> = (0..5)
            .map(|i| run_call(&s, i).unwrap().summary())
            .collect();
        let mut buf = Vec::new();
        write_summaries_csv(&mut buf, &summaries).unwrap();
        let back = read_summaries_csv(buf.as_slice()).unwrap();
        assert_eq!(back, summaries);
    }
}
