//! Deterministic packet-level call simulator.
//!
//! One call is simulated on a 1 ms integer clock. Packets leave the sender
//! on the codec's schedule; each is independently chosen to carry covert
//! payload, independently dropped by the network, and independently jittered.
//! Covert packets are intentionally delayed past the largest possible playout
//! allowance, so the receiver always classifies them as late; an aware
//! receiver reads their payload, an ordinary one discards them as losses.
//!
//! Reporting epochs fire every RTCP interval. At each epoch the receiver
//! window is folded into a report, the rate cap in force is recomputed, and
//! the insertion-rate controller replans from the bits still unsent. The
//! resulting rate sets the covert-selection probability until the next epoch.
//!
//! Determinism: each call owns one ChaCha8 stream seeded from the call seed.
//! Per packet the draws happen in a fixed order (selection, drop, network
//! delay), and the selection and drop draws are taken even when the covert
//! rate or the loss probability is zero. Two runs of the same scenario and
//! seed are identical, and runs that differ only in covert rate see identical
//! network behavior packet for packet.

pub mod scenario;
pub mod trace;

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::budget::{effective_loss_cap, loss_to_rate, BudgetError};
use crate::control::{ControlError, RateController};
use crate::duration::{DurationError, WeibullModel};
use crate::quality::{irq_dynamic, mos_from_loss, MosParams, QualityError};

pub use scenario::{
    BufferPolicy, CapPolicy, ControllerConfig, DurationPolicy, ExperimentConfig, JitterModel,
    NetworkModel, Scenario, ScenarioError, StegConfig, SweepConfig, WardenConfig,
};
pub use trace::{
    delivered_steg_bits, write_packets_csv, write_reports_csv, write_summaries_csv, CallSummary,
    CallTrace, OutcomeCounts, PacketEvent, PacketOutcome, RtcpReport,
};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("controller failed: {0}")]
    Control(#[from] ControlError),
    #[error("quality model failed: {0}")]
    Quality(#[from] QualityError),
    #[error("duration model failed: {0}")]
    Duration(#[from] DurationError),
    #[error("budget arithmetic failed: {0}")]
    Budget(#[from] BudgetError),
}

/// Receiver-side classification of one packet.
pub fn classify_arrival(
    total_delay_ms: u32,
    allowance_ms: u32,
    network_lost: bool,
) -> PacketOutcome {
    if network_lost {
        PacketOutcome::NetworkLost
    } else if total_delay_ms > allowance_ms {
        PacketOutcome::Late
    } else {
        PacketOutcome::Played
    }
}

/// Receiver accumulators over one reporting window.
#[derive(Debug, Clone, Copy, Default)]
pub struct WindowStats {
    /// Packets sent in the window.
    pub expected: u32,
    /// Network-lost plus late arrivals.
    pub lost: u32,
    /// Packets that physically arrived (played or late).
    pub received: u32,
    /// Sum of transit delays of arrived packets.
    pub delay_sum_ms: f64,
}

/// Folds a window into the report issued at `at_ms`.
///
/// An empty window (nothing sent) repeats the previous report at the new
/// timestamp; with no previous report either, no report is issued. A window
/// where everything was lost keeps the previous mean delay.
pub fn rtcp_feedback(
    at_ms: u64,
    window: &WindowStats,
    cumulative_lost: u64,
    jitter_ms: f64,
    previous: Option<&RtcpReport>,
    quality: &MosParams,
) -> Result<Option<RtcpReport>, QualityError> {
    if window.expected == 0 {
        return Ok(previous.map(|r| RtcpReport { at_ms, ..*r }));
    }
    let loss_fraction = f64::from(window.lost) / f64::from(window.expected);
    let mean_delay_ms = if window.received > 0 {
        window.delay_sum_ms / f64::from(window.received)
    } else {
        previous.map(|r| r.mean_delay_ms).unwrap_or(0.0)
    };
    Ok(Some(RtcpReport {
        at_ms,
        expected: window.expected,
        lost: window.lost,
        loss_fraction,
        cumulative_lost,
        mean_delay_ms,
        jitter_ms,
        mos: mos_from_loss(quality, loss_fraction)?,
    }))
}

/// Playout allowance tracking the recent delay peak, clamped to a band.
struct AdaptiveAllowance {
    recent: VecDeque<u32>,
    window: usize,
    margin_ms: u32,
    min_ms: u32,
    max_ms: u32,
}

impl AdaptiveAllowance {
    fn new(window: usize, margin_ms: u32, min_ms: u32, max_ms: u32) -> Self {
        Self {
            recent: VecDeque::with_capacity(window),
            window,
            margin_ms,
            min_ms,
            max_ms,
        }
    }

    fn current(&self) -> u32 {
        let peak = self.recent.iter().copied().max().unwrap_or(0);
        (peak + self.margin_ms).clamp(self.min_ms, self.max_ms)
    }

    fn observe(&mut self, total_delay_ms: u32) {
        if self.recent.len() == self.window {
            self.recent.pop_front();
        }
        self.recent.push_back(total_delay_ms);
    }
}

struct Engine<'a> {
    s: &'a Scenario,
    model: Option<&'a WeibullModel>,
    rng: ChaCha8Rng,
    controller: RateController,
    adaptive: Option<AdaptiveAllowance>,
    normal: Option<Normal<f64>>,
    lack_delay_ms: u32,
    proc_ms: u32,
    // covert bit accounting
    s_unsent: u64,
    delivered: u64,
    steg_selected: u64,
    p_steg: f64,
    // receiver state
    window: WindowStats,
    cumulative_lost: u64,
    jitter_ms: f64,
    prev_transit: Option<u32>,
    last_report: Option<RtcpReport>,
    reports: Vec<RtcpReport>,
    events: Vec<PacketEvent>,
}

impl Engine<'_> {
    /// Closes the window (epochs after t = 0), recomputes the cap in force
    /// and replans the insertion rate for the next interval.
    fn process_epoch(&mut self, at_ms: u64) -> Result<(), SimError> {
        if at_ms > 0 {
            let report = rtcp_feedback(
                at_ms,
                &self.window,
                self.cumulative_lost,
                self.jitter_ms,
                self.last_report.as_ref(),
                &self.s.quality,
            )?;
            if let Some(r) = report {
                self.reports.push(r);
                self.last_report = Some(r);
            }
            self.window = WindowStats::default();
        }
        let p_n = self.s.network.loss_at(at_ms);
        let irq_bps = match self.s.controller.cap {
            CapPolicy::Uncapped => f64::INFINITY,
            CapPolicy::Fixed { irq_bps } => irq_bps,
            CapPolicy::LossBudget { total_loss } => {
                let cap = effective_loss_cap(&self.s.codec, p_n, total_loss)?;
                loss_to_rate(&self.s.codec, cap)?
            }
            CapPolicy::DynamicMos { mos_floor } => {
                // Before the first report there is no estimate yet; starting
                // the evaluation at the floor grants the full floor headroom.
                let estimate = self.last_report.map(|r| r.mos).unwrap_or(mos_floor);
                irq_dynamic(&self.s.quality, estimate, mos_floor, p_n, &self.s.codec)?
            }
        };
        self.controller.set_remaining(self.s_unsent as f64)?;
        let dt = self.s.rtcp_interval_ms as f64 / 1000.0;
        let decision = self.controller.step(self.model, dt, irq_bps)?;
        let channel = self.s.codec.channel_rate_bps();
        self.p_steg = (decision.ir_sent_bps / channel).clamp(0.0, 1.0);
        Ok(())
    }

    fn send_packet(&mut self, seq: u64, send_ms: u64) {
        // Fixed draw order per packet keeps runs comparable across covert
        // rates: selection and drop are drawn even when their probability
        // is zero.
        let u_select: f64 = self.rng.random();
        let u_drop: f64 = self.rng.random();
        let base = self.s.network.base_delay_ms;
        let network_delay_ms = match self.s.network.jitter {
            JitterModel::None => base,
            JitterModel::Uniform { spread_ms } => {
                self.rng.random_range(base.saturating_sub(spread_ms)..=base + spread_ms)
            }
            JitterModel::Normal { .. } => {
                let offset = self.normal.as_ref().expect("normal model resolved").sample(&mut self.rng);
                (f64::from(base) + offset).round().max(0.0) as u32
            }
        };

        let steg = u_select < self.p_steg && self.s_unsent > 0;
        let chunk = if steg {
            let c = u64::from(self.s.codec.payload_bits).min(self.s_unsent) as u32;
            self.s_unsent -= u64::from(c);
            self.steg_selected += 1;
            c
        } else {
            0
        };
        let lack_delay_ms = if steg { self.lack_delay_ms } else { 0 };
        let total_delay_ms = self.proc_ms + lack_delay_ms + network_delay_ms;
        let allowance_ms = match (&self.s.buffer, &self.adaptive) {
            (BufferPolicy::Fixed { size_ms }, _) => *size_ms,
            (BufferPolicy::Adaptive { .. }, Some(a)) => a.current(),
            (BufferPolicy::Adaptive { .. }, None) => unreachable!("adaptive state initialized"),
        };
        let network_lost = u_drop < self.s.network.loss_at(send_ms);
        let outcome = classify_arrival(total_delay_ms, allowance_ms, network_lost);
        match outcome {
            PacketOutcome::NetworkLost => {
                self.cumulative_lost += 1;
                self.window.lost += 1;
                if steg {
                    // Covert bits on a dropped packet go back in the queue.
                    self.s_unsent += u64::from(chunk);
                }
            }
            PacketOutcome::Late => {
                self.cumulative_lost += 1;
                self.window.lost += 1;
                if steg && self.s.steg.receiver_aware {
                    self.delivered += u64::from(chunk);
                }
            }
            PacketOutcome::Played => {}
        }
        if outcome != PacketOutcome::NetworkLost {
            self.window.received += 1;
            self.window.delay_sum_ms += f64::from(total_delay_ms);
            if let Some(prev) = self.prev_transit {
                let d = f64::from(total_delay_ms.abs_diff(prev));
                self.jitter_ms += (d - self.jitter_ms) / 16.0;
            }
            self.prev_transit = Some(total_delay_ms);
            if let Some(a) = self.adaptive.as_mut() {
                a.observe(total_delay_ms);
            }
        }
        self.window.expected += 1;
        self.events.push(PacketEvent {
            seq,
            send_ms,
            steg,
            steg_bits: chunk,
            lack_delay_ms,
            network_delay_ms,
            total_delay_ms,
            allowance_ms,
            outcome,
        });
    }
}

/// Simulates one call and returns its full trace.
pub fn run_call(s: &Scenario, seed: u64) -> Result<CallTrace, SimError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let duration_ms = match s.duration {
        DurationPolicy::FixedMs(ms) => ms,
        DurationPolicy::Sampled(m) => {
            let u: f64 = rng.random();
            let secs = m.sample_duration(u.max(f64::MIN_POSITIVE))?;
            (secs * 1000.0).round().max(1.0) as u64
        }
    };
    let pps = s.codec.packets_per_second as u64;
    let controller = RateController::new(
        s.controller.mode,
        s.controller.denominator,
        s.steg.size_bits as f64,
    )?;
    let adaptive = match s.buffer {
        BufferPolicy::Adaptive { window_packets, margin_ms, min_ms, max_ms } => {
            Some(AdaptiveAllowance::new(window_packets, margin_ms, min_ms, max_ms))
        }
        BufferPolicy::Fixed { .. } => None,
    };
    let normal = match s.network.jitter {
        JitterModel::Normal { sigma_ms } => {
            Some(Normal::new(0.0, sigma_ms).expect("sigma validated positive"))
        }
        _ => None,
    };
    let expected_packets = (duration_ms.saturating_mul(pps) / 1000 + 1) as usize;
    let mut engine = Engine {
        s,
        model: s.duration_model(),
        rng,
        controller,
        adaptive,
        normal,
        lack_delay_ms: s.lack_delay_ms(),
        proc_ms: s.processing_ms(),
        s_unsent: s.steg.size_bits,
        delivered: 0,
        steg_selected: 0,
        p_steg: 0.0,
        window: WindowStats::default(),
        cumulative_lost: 0,
        jitter_ms: 0.0,
        prev_transit: None,
        last_report: None,
        reports: Vec::new(),
        events: Vec::with_capacity(expected_packets),
    };

    let interval_ms = s.rtcp_interval_ms;
    let mut next_epoch_ms: u64 = 0;
    let mut seq: u64 = 0;
    loop {
        let send_ms = seq * 1000 / pps;
        if send_ms >= duration_ms {
            break;
        }
        while next_epoch_ms <= send_ms {
            engine.process_epoch(next_epoch_ms)?;
            next_epoch_ms += interval_ms;
        }
        engine.send_packet(seq, send_ms);
        seq += 1;
    }
    // Trailing epochs up to and including call end flush the last windows.
    while next_epoch_ms <= duration_ms {
        engine.process_epoch(next_epoch_ms)?;
        next_epoch_ms += interval_ms;
    }

    Ok(CallTrace {
        seed,
        duration_ms,
        events: engine.events,
        reports: engine.reports,
        delivered_bits: engine.delivered,
        steg_selected: engine.steg_selected,
    })
}
