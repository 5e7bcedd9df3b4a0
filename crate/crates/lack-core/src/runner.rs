//! Experiment runner: deterministic seed derivation, batch execution over
//! many calls, sweep expansion and the CSV artifacts of a run.
//!
//! Reproducibility contract: one master seed plus the replication count and
//! the sweep grid fully determine every call. Calls are seeded from the
//! master seed through a SplitMix64 mix of their global index, so reordering
//! or parallelizing execution cannot change any call's stream, and rerunning
//! an experiment writes byte-identical files.

use std::fs;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::control::ControllerMode;
use crate::duration::{calibrate_scale, DurationError};
use crate::sim::scenario::DurationPolicy;
use crate::sim::{run_call, CallSummary, Scenario, SimError, SweepConfig};
use crate::warden::{
    duration_distribution_test, passive_loss_scan, DurationReference, PassiveThreshold,
    WardenError, KS_MIN_SAMPLES,
};

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error("simulation failed: {0}")]
    Sim(#[from] SimError),
    #[error("duration model failed: {0}")]
    Duration(#[from] DurationError),
    #[error("warden analysis failed: {0}")]
    Warden(#[from] WardenError),
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv write failed: {0}")]
    Csv(#[from] csv::Error),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RunnerError + '_ {
    move |source| RunnerError::Io { path: path.to_path_buf(), source }
}

/// Mixes the master seed with a call's global index into its private seed
/// (SplitMix64 finalizer over a Weyl sequence).
pub fn derive_call_seed(master_seed: u64, index: u64) -> u64 {
    let mut z = master_seed.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Runs one call per seed sequentially and summarizes each.
pub fn run_batch_sequential(
    scenario: &Scenario,
    seeds: &[u64],
) -> Result<Vec<CallSummary>, SimError> {
    seeds
        .iter()
        .map(|&seed| run_call(scenario, seed).map(|t| t.summary()))
        .collect()
}

/// Runs one call per seed and summarizes each, in parallel when the
/// `parallel` feature is enabled. Output order always matches seed order,
/// and each call's stream depends only on its seed, so the parallel and
/// sequential paths produce identical results.
#[cfg(feature = "parallel")]
pub fn run_batch(scenario: &Scenario, seeds: &[u64]) -> Result<Vec<CallSummary>, SimError> {
    use rayon::prelude::*;
    seeds
        .par_iter()
        .map(|&seed| run_call(scenario, seed).map(|t| t.summary()))
        .collect()
}

#[cfg(not(feature = "parallel"))]
pub fn run_batch(scenario: &Scenario, seeds: &[u64]) -> Result<Vec<CallSummary>, SimError> {
    run_batch_sequential(scenario, seeds)
}

/// One resolved grid point of the sweep axes; `None` keeps the base value.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SweepPoint {
    pub shape: Option<f64>,
    pub xi: Option<f64>,
    pub size_bits: Option<u64>,
}

/// Expands the sweep axes into grid points, shape-major, then xi, then
/// steganogram size. An absent axis contributes the base value once.
pub fn expand_sweep(sweep: &SweepConfig) -> Vec<SweepPoint> {
    let shapes: Vec<Option<f64>> = if sweep.shape.is_empty() {
        vec![None]
    } else {
        sweep.shape.iter().map(|&v| Some(v)).collect()
    };
    let xis: Vec<Option<f64>> = if sweep.xi.is_empty() {
        vec![None]
    } else {
        sweep.xi.iter().map(|&v| Some(v)).collect()
    };
    let sizes: Vec<Option<u64>> = if sweep.size_bits.is_empty() {
        vec![None]
    } else {
        sweep.size_bits.iter().map(|&v| Some(v)).collect()
    };
    let mut points = Vec::with_capacity(shapes.len() * xis.len() * sizes.len());
    for &shape in &shapes {
        for &xi in &xis {
            for &size_bits in &sizes {
                points.push(SweepPoint { shape, xi, size_bits });
            }
        }
    }
    points
}

/// Applies a sweep point to the base scenario. A shape override rebuilds the
/// duration model around the base model's mean, so sweeps vary dispersion at
/// constant expected call length.
pub fn apply_point(base: &Scenario, point: &SweepPoint) -> Result<Scenario, RunnerError> {
    let mut s = base.clone();
    if let Some(shape) = point.shape {
        let model = base
            .duration_model()
            .expect("shape sweeps are validated to need sampled durations");
        let mean = model.stats().mean;
        s.duration = DurationPolicy::Sampled(calibrate_scale(shape, mean)?);
    }
    if let Some(xi) = point.xi {
        debug_assert!(matches!(s.controller.mode, ControllerMode::Quantile { .. }));
        s.controller.mode = ControllerMode::Quantile { xi };
    }
    if let Some(size_bits) = point.size_bits {
        s.steg.size_bits = size_bits;
    }
    Ok(s)
}

/// Files written by one experiment run.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutput {
    pub out_dir: PathBuf,
    /// Created files in a fixed order.
    pub files: Vec<PathBuf>,
    pub total_calls: usize,
}

fn fmt_opt_f64(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn fmt_opt_u64(v: Option<u64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

const CALL_COLUMNS: [&str; 19] = [
    "point", "shape", "xi", "size_bits", "call_index", "seed", "duration_s", "packets_sent",
    "played", "network_lost", "late_steg", "late_other", "steg_selected", "delivered_bits",
    "realized_p_n", "realized_p_l", "realized_p_t", "mos_mean", "mos_min",
];

const PACKET_COLUMNS: [&str; 11] = [
    "point", "call_index", "seq", "send_ms", "steg", "steg_bits", "lack_delay_ms",
    "network_delay_ms", "total_delay_ms", "allowance_ms", "outcome",
];

const AGGREGATE_COLUMNS: [&str; 12] = [
    "point", "shape", "xi", "size_bits", "calls", "mean_duration_s", "mean_p_n", "mean_p_l",
    "mean_p_t", "mean_delivered_bits", "completion_rate", "mean_mos",
];

const WARDEN_COLUMNS: [&str; 8] = [
    "point", "shape", "xi", "size_bits", "calls", "passive_threshold", "passive_flagged",
    "passive_flag_rate",
];

const WARDEN_KS_COLUMNS: [&str; 9] = [
    "point", "shape", "xi", "size_bits", "n", "alpha", "statistic", "critical", "flagged",
];

/// Runs the scenario's full experiment grid and writes its CSV artifacts
/// into `out_dir`.
///
/// Always writes `calls.csv` (one row per call) and `aggregate.csv` (one row
/// per sweep point). With `experiment.write_packet_traces` it adds
/// `packets.csv`. A configured `[warden]` section adds `warden.csv` with the
/// passive scan per point and, for sampled durations with enough calls,
/// `warden_ks.csv` with the duration-distribution test.
pub fn run_experiment(scenario: &Scenario, out_dir: &Path) -> Result<ExperimentOutput, RunnerError> {
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let points = expand_sweep(&scenario.sweep);
    let reps = u64::from(scenario.experiment.replications);
    let master = scenario.experiment.master_seed;

    let calls_path = out_dir.join("calls.csv");
    let mut calls = csv::Writer::from_writer(BufWriter::new(
        File::create(&calls_path).map_err(io_err(&calls_path))?,
    ));
    calls.write_record(CALL_COLUMNS)?;

    let mut packets = if scenario.experiment.write_packet_traces {
        let path = out_dir.join("packets.csv");
        let mut w = csv::Writer::from_writer(BufWriter::new(
            File::create(&path).map_err(io_err(&path))?,
        ));
        w.write_record(PACKET_COLUMNS)?;
        Some((path, w))
    } else {
        None
    };

    let mut per_point: Vec<(SweepPoint, Scenario, Vec<CallSummary>)> =
        Vec::with_capacity(points.len());
    for (p_idx, point) in points.iter().enumerate() {
        let s = apply_point(scenario, point)?;
        let seeds: Vec<u64> = (0..reps)
            .map(|c| derive_call_seed(master, p_idx as u64 * reps + c))
            .collect();
        let summaries = if let Some((_, w)) = packets.as_mut() {
            // Packet traces need the full event list, so run sequentially
            // and stream each call's rows out before dropping the trace.
            let mut summaries = Vec::with_capacity(seeds.len());
            for (c_idx, &seed) in seeds.iter().enumerate() {
                let trace = run_call(&s, seed)?;
                for e in &trace.events {
                    w.write_record([
                        p_idx.to_string(),
                        c_idx.to_string(),
                        e.seq.to_string(),
                        e.send_ms.to_string(),
                        e.steg.to_string(),
                        e.steg_bits.to_string(),
                        e.lack_delay_ms.to_string(),
                        e.network_delay_ms.to_string(),
                        e.total_delay_ms.to_string(),
                        e.allowance_ms.to_string(),
                        match e.outcome {
                            crate::sim::PacketOutcome::Played => "played",
                            crate::sim::PacketOutcome::Late => "late",
                            crate::sim::PacketOutcome::NetworkLost => "network_lost",
                        }
                        .to_string(),
                    ])?;
                }
                summaries.push(trace.summary());
            }
            summaries
        } else {
            run_batch(&s, &seeds)?
        };

        for (c_idx, sum) in summaries.iter().enumerate() {
            calls.write_record([
                p_idx.to_string(),
                fmt_opt_f64(point.shape),
                fmt_opt_f64(point.xi),
                fmt_opt_u64(point.size_bits),
                c_idx.to_string(),
                sum.seed.to_string(),
                sum.duration_s.to_string(),
                sum.packets_sent.to_string(),
                sum.played.to_string(),
                sum.network_lost.to_string(),
                sum.late_steg.to_string(),
                sum.late_other.to_string(),
                sum.steg_selected.to_string(),
                sum.delivered_bits.to_string(),
                sum.realized_p_n.to_string(),
                sum.realized_p_l.to_string(),
                sum.realized_p_t.to_string(),
                sum.mos_mean.to_string(),
                sum.mos_min.to_string(),
            ])?;
        }
        per_point.push((*point, s, summaries));
    }
    calls.flush().map_err(io_err(&calls_path))?;

    let aggregate_path = out_dir.join("aggregate.csv");
    {
        let mut agg = csv::Writer::from_writer(BufWriter::new(
            File::create(&aggregate_path).map_err(io_err(&aggregate_path))?,
        ));
        agg.write_record(AGGREGATE_COLUMNS)?;
        for (p_idx, (point, s, summaries)) in per_point.iter().enumerate() {
            let n = summaries.len() as f64;
            let mean = |f: &dyn Fn(&CallSummary) -> f64| -> f64 {
                summaries.iter().map(|x| f(x)).sum::<f64>() / n
            };
            let completed = summaries
                .iter()
                .filter(|x| x.delivered_bits >= s.steg.size_bits)
                .count() as f64;
            let mos_values: Vec<f64> = summaries
                .iter()
                .map(|x| x.mos_mean)
                .filter(|m| m.is_finite())
                .collect();
            let mean_mos = if mos_values.is_empty() {
                f64::NAN
            } else {
                mos_values.iter().sum::<f64>() / mos_values.len() as f64
            };
            agg.write_record([
                p_idx.to_string(),
                fmt_opt_f64(point.shape),
                fmt_opt_f64(point.xi),
                fmt_opt_u64(point.size_bits),
                summaries.len().to_string(),
                mean(&|x| x.duration_s).to_string(),
                mean(&|x| x.realized_p_n).to_string(),
                mean(&|x| x.realized_p_l).to_string(),
                mean(&|x| x.realized_p_t).to_string(),
                mean(&|x| x.delivered_bits as f64).to_string(),
                (completed / n).to_string(),
                mean_mos.to_string(),
            ])?;
        }
        agg.flush().map_err(io_err(&aggregate_path))?;
    }

    let mut files = vec![calls_path, aggregate_path];
    if let Some((path, mut w)) = packets.take() {
        w.flush().map_err(io_err(&path))?;
        files.insert(1, path);
    }

    let w_cfg = &scenario.warden;
    let warden_configured = w_cfg.passive_threshold.is_some()
        || w_cfg.passive_sigma_multiplier.is_some()
        || w_cfg.ks_alpha.is_some()
        || w_cfg.active_assumed_buffer_ms.is_some();
    if warden_configured {
        let warden_path = out_dir.join("warden.csv");
        let mut w = csv::Writer::from_writer(BufWriter::new(
            File::create(&warden_path).map_err(io_err(&warden_path))?,
        ));
        w.write_record(WARDEN_COLUMNS)?;
        let rule = match (w_cfg.passive_threshold, w_cfg.passive_sigma_multiplier) {
            (Some(t), _) => PassiveThreshold::Absolute(t),
            (None, Some(m)) => PassiveThreshold::MeanPlusSigma { multiplier: m },
            (None, None) => PassiveThreshold::MeanPlusSigma { multiplier: 2.0 },
        };
        for (p_idx, (point, _, summaries)) in per_point.iter().enumerate() {
            let losses: Vec<f64> = summaries.iter().map(|x| x.realized_p_t).collect();
            // The sigma rule self-calibrates on the scanned cohort.
            let report = passive_loss_scan(&losses, Some(&losses), rule)?;
            w.write_record([
                p_idx.to_string(),
                fmt_opt_f64(point.shape),
                fmt_opt_f64(point.xi),
                fmt_opt_u64(point.size_bits),
                losses.len().to_string(),
                report.threshold.to_string(),
                report.flagged.to_string(),
                (report.flagged as f64 / losses.len() as f64).to_string(),
            ])?;
        }
        w.flush().map_err(io_err(&warden_path))?;
        files.push(warden_path);

        let sampled = matches!(scenario.duration, DurationPolicy::Sampled(_));
        if sampled && scenario.experiment.replications as usize >= KS_MIN_SAMPLES {
            let ks_path = out_dir.join("warden_ks.csv");
            let mut w = csv::Writer::from_writer(BufWriter::new(
                File::create(&ks_path).map_err(io_err(&ks_path))?,
            ));
            w.write_record(WARDEN_KS_COLUMNS)?;
            let alpha = w_cfg.ks_alpha.unwrap_or(0.05);
            for (p_idx, (point, s, summaries)) in per_point.iter().enumerate() {
                let durations: Vec<f64> = summaries.iter().map(|x| x.duration_s).collect();
                let model = s.duration_model().expect("sampled scenario has a model");
                let report = duration_distribution_test(
                    &durations,
                    DurationReference::Weibull(model),
                    alpha,
                )?;
                w.write_record([
                    p_idx.to_string(),
                    fmt_opt_f64(point.shape),
                    fmt_opt_f64(point.xi),
                    fmt_opt_u64(point.size_bits),
                    report.n.to_string(),
                    report.alpha.to_string(),
                    report.statistic.to_string(),
                    report.critical.to_string(),
                    report.flagged.to_string(),
                ])?;
            }
            w.flush().map_err(io_err(&ks_path))?;
            files.push(ks_path);
        }
    }

    Ok(ExperimentOutput {
        out_dir: out_dir.to_path_buf(),
        files,
        total_calls: points.len() * reps as usize,
    })
}
