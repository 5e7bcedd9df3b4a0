//! Scenario configuration: the TOML schema describing one simulated call
//! setup, and its validation into ready-to-run typed form.
//!
//! A scenario file looks like:
//!
//! ```toml
//! [duration]
//! mode = "sampled"
//! shape = 1.0
//! mean_seconds = 117.31
//!
//! [steganogram]
//! size_bits = 1000
//!
//! [controller]
//! mode = "residual_mean"
//!
//! [controller.cap]
//! mode = "dynamic_mos"
//! mos_floor = 3.5
//!
//! [experiment]
//! master_seed = 42
//! replications = 100
//! ```
//!
//! Codec, network, processing delays, jitter buffer, quality constants and
//! RTCP cadence all have documented defaults (G.711, lossless 30 ms ± 10 ms
//! network, 10/5/25 ms processing chain, fixed 100 ms buffer, 5 s reports).

use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

use crate::budget::DelayBudget;
use crate::codec::CodecProfile;
use crate::control::{ControllerMode, DenominatorMode};
use crate::duration::{calibrate_scale, WeibullModel};
use crate::quality::MosParams;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read scenario file: {0}")]
    Io(#[from] std::io::Error),
    #[error("scenario file does not parse: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("missing required scenario key `{key}`")]
    Missing { key: &'static str },
    #[error("invalid value for scenario key `{key}`: {reason}")]
    Invalid { key: &'static str, reason: String },
}

fn invalid(key: &'static str, reason: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid { key, reason: reason.into() }
}

/// Network loss/delay model resolved from configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkModel {
    /// Piecewise-constant loss probability: `(from_ms, probability)`,
    /// sorted by onset, first entry at 0 ms.
    pub loss_schedule: Vec<(u64, f64)>,
    /// Deterministic transit delay component.
    pub base_delay_ms: u32,
    pub jitter: JitterModel,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum JitterModel {
    /// Every packet takes exactly the base delay.
    None,
    /// Uniform integer delay in `base ± spread_ms`, floored at zero.
    Uniform { spread_ms: u32 },
    /// Gaussian delay around the base, rounded to ms and floored at zero.
    Normal { sigma_ms: f64 },
}

impl NetworkModel {
    /// Loss probability in force at `t_ms`.
    pub fn loss_at(&self, t_ms: u64) -> f64 {
        let mut current = 0.0;
        for &(from, p) in &self.loss_schedule {
            if from <= t_ms {
                current = p;
            } else {
                break;
            }
        }
        current
    }

    /// Loss probability of the first schedule segment, used where a single
    /// nominal value is needed (cap policies, delay budgets).
    pub fn nominal_loss(&self) -> f64 {
        self.loss_schedule.first().map(|&(_, p)| p).unwrap_or(0.0)
    }
}

/// Receiver playout-buffer policy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BufferPolicy {
    Fixed {
        size_ms: u32,
    },
    /// Allowance follows the largest total delay seen over the last
    /// `window_packets` received packets, plus a safety margin, clamped to
    /// `[min_ms, max_ms]`.
    Adaptive {
        window_packets: usize,
        margin_ms: u32,
        min_ms: u32,
        max_ms: u32,
    },
}

impl BufferPolicy {
    /// Largest allowance the policy can ever grant; the intentional delay is
    /// sized against this so late classification is guaranteed.
    pub fn max_allowance_ms(&self) -> u32 {
        match *self {
            BufferPolicy::Fixed { size_ms } => size_ms,
            BufferPolicy::Adaptive { max_ms, .. } => max_ms,
        }
    }
}

/// How long a simulated call lasts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DurationPolicy {
    FixedMs(u64),
    Sampled(WeibullModel),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StegConfig {
    pub size_bits: u64,
    pub receiver_aware: bool,
    /// Optional hard ceiling on the intentional delay; scenarios whose
    /// buffer would require more are rejected as infeasible.
    pub max_lack_delay_ms: Option<u32>,
}

/// Rate-cap policy applied at every controller epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CapPolicy {
    Uncapped,
    Fixed {
        irq_bps: f64,
    },
    /// Cap from the tighter of the codec loss tolerance and a total-loss
    /// target, discounted by nominal network loss.
    LossBudget {
        total_loss: f64,
    },
    /// Cap recomputed from the estimated call quality of the latest report,
    /// zero once the estimate falls below the floor.
    DynamicMos {
        mos_floor: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControllerConfig {
    pub mode: ControllerMode,
    pub denominator: DenominatorMode,
    pub cap: CapPolicy,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExperimentConfig {
    pub replications: u32,
    pub master_seed: u64,
    /// Also write one row per packet for every call. Off by default; the
    /// per-call summary is always written.
    pub write_packet_traces: bool,
}

/// Warden analyses to run over the simulated cohort.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct WardenConfig {
    /// Absolute loss-fraction threshold for the passive scan.
    pub passive_threshold: Option<f64>,
    /// Mean + multiplier·sigma rule over the cohort itself.
    pub passive_sigma_multiplier: Option<f64>,
    /// Significance level for the call-duration distribution test.
    pub ks_alpha: Option<f64>,
    /// Buffer size the active warden assumes when destroying late packets.
    pub active_assumed_buffer_ms: Option<u32>,
    /// Destroy payloads in place (erase) or remove packets outright (drop).
    pub active_drop: bool,
}

/// Sweep axes expanded by the experiment runner (empty = single point).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SweepConfig {
    pub shape: Vec<f64>,
    pub xi: Vec<f64>,
    pub size_bits: Vec<u64>,
}

/// Fully validated scenario, ready for [`crate::sim::run_call`].
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub codec: CodecProfile,
    pub network: NetworkModel,
    /// Transmitter-side processing delays; `network_ms` mirrors the nominal
    /// network delay and `buffer_ms` the largest possible allowance.
    pub delays: DelayBudget,
    pub buffer: BufferPolicy,
    pub duration: DurationPolicy,
    pub steg: StegConfig,
    pub controller: ControllerConfig,
    pub quality: MosParams,
    pub rtcp_interval_ms: u64,
    pub experiment: ExperimentConfig,
    pub warden: WardenConfig,
    pub sweep: SweepConfig,
}

impl Scenario {
    pub fn from_path(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ScenarioError> {
        let raw: RawScenario = toml::from_str(text)?;
        raw.resolve()
    }

    /// Transmitter processing chain, in whole milliseconds.
    pub fn processing_ms(&self) -> u32 {
        self.delays.processing_ms().round() as u32
    }

    /// Intentional delay applied to steg packets: enough to exceed the
    /// largest possible allowance strictly, for any network delay.
    pub fn lack_delay_ms(&self) -> u32 {
        let allowance = self.buffer.max_allowance_ms();
        allowance.saturating_sub(self.processing_ms()) + 1
    }

    /// Duration model when the call length is sampled.
    pub fn duration_model(&self) -> Option<&WeibullModel> {
        match &self.duration {
            DurationPolicy::Sampled(m) => Some(m),
            DurationPolicy::FixedMs(_) => None,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    codec: Option<RawCodec>,
    network: Option<RawNetwork>,
    delays: Option<RawDelays>,
    jitter_buffer: Option<RawBuffer>,
    duration: Option<RawDuration>,
    steganogram: Option<RawSteg>,
    controller: Option<RawController>,
    quality: Option<RawQuality>,
    rtcp: Option<RawRtcp>,
    experiment: Option<RawExperiment>,
    warden: Option<RawWarden>,
    sweep: Option<RawSweep>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCodec {
    preset: Option<String>,
    name: Option<String>,
    packets_per_second: Option<f64>,
    payload_bits: Option<u32>,
    loss_tolerance: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNetwork {
    loss: Option<f64>,
    loss_schedule: Option<Vec<[f64; 2]>>,
    base_delay_ms: Option<f64>,
    jitter: Option<RawJitter>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawJitter {
    model: String,
    spread_ms: Option<f64>,
    sigma_ms: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDelays {
    signal_ms: Option<f64>,
    packetization_ms: Option<f64>,
    encapsulation_ms: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBuffer {
    mode: Option<String>,
    size_ms: Option<f64>,
    window_packets: Option<usize>,
    margin_ms: Option<f64>,
    min_ms: Option<f64>,
    max_ms: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDuration {
    mode: String,
    seconds: Option<f64>,
    shape: Option<f64>,
    mean_seconds: Option<f64>,
    scale_seconds: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSteg {
    size_bits: Option<u64>,
    receiver_aware: Option<bool>,
    max_lack_delay_ms: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawController {
    mode: String,
    rate_bps: Option<f64>,
    xi: Option<f64>,
    denominator: Option<String>,
    cap: Option<RawCap>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCap {
    mode: String,
    irq_bps: Option<f64>,
    total_loss: Option<f64>,
    mos_floor: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawQuality {
    alpha: Option<f64>,
    beta: Option<f64>,
    gamma: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRtcp {
    interval_s: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawExperiment {
    replications: Option<u32>,
    master_seed: Option<u64>,
    write_packet_traces: Option<bool>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawWarden {
    passive_threshold: Option<f64>,
    passive_sigma_multiplier: Option<f64>,
    ks_alpha: Option<f64>,
    active_assumed_buffer_ms: Option<f64>,
    active_action: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSweep {
    shape: Option<Vec<f64>>,
    xi: Option<Vec<f64>>,
    size_bits: Option<Vec<u64>>,
}

fn require_ms(value: Option<f64>, key: &'static str, default: f64) -> Result<u32, ScenarioError> {
    let v = value.unwrap_or(default);
    if !v.is_finite() || v < 0.0 {
        return Err(invalid(key, format!("must be a finite non-negative duration in ms, got {v}")));
    }
    Ok(v.round() as u32)
}

fn require_probability(value: f64, key: &'static str) -> Result<f64, ScenarioError> {
    if !(0.0..=1.0).contains(&value) {
        return Err(invalid(key, format!("must lie in [0, 1], got {value}")));
    }
    Ok(value)
}

impl RawScenario {
    fn resolve(self) -> Result<Scenario, ScenarioError> {
        let codec = resolve_codec(self.codec)?;
        let network = resolve_network(self.network)?;
        let delays_raw = self.delays.unwrap_or(RawDelays {
            signal_ms: None,
            packetization_ms: None,
            encapsulation_ms: None,
        });
        let signal_ms = require_ms(delays_raw.signal_ms, "delays.signal_ms", 10.0)?;
        let packetization_ms =
            require_ms(delays_raw.packetization_ms, "delays.packetization_ms", 5.0)?;
        let encapsulation_ms =
            require_ms(delays_raw.encapsulation_ms, "delays.encapsulation_ms", 25.0)?;
        let buffer = resolve_buffer(self.jitter_buffer)?;
        let duration = resolve_duration(self.duration)?;
        let steg = resolve_steg(self.steganogram)?;
        let controller = resolve_controller(self.controller)?;
        let quality = resolve_quality(self.quality)?;
        let rtcp_interval_ms = {
            let s = self.rtcp.and_then(|r| r.interval_s).unwrap_or(5.0);
            if !(s.is_finite() && s > 0.0) {
                return Err(invalid("rtcp.interval_s", format!("must be > 0, got {s}")));
            }
            (s * 1000.0).round() as u64
        };
        let experiment = resolve_experiment(self.experiment)?;
        let warden = resolve_warden(self.warden)?;
        let sweep = resolve_sweep(self.sweep, &controller, &duration)?;

        if !matches!(controller.mode, ControllerMode::Constant { .. })
            && !matches!(duration, DurationPolicy::Sampled(_))
        {
            return Err(invalid(
                "controller.mode",
                "residual_mean and quantile controllers plan against a duration model, \
                 which requires `duration.mode = \"sampled\"`",
            ));
        }

        let delays = DelayBudget {
            signal_ms: signal_ms as f64,
            packetization_ms: packetization_ms as f64,
            encapsulation_ms: encapsulation_ms as f64,
            network_ms: network.base_delay_ms as f64,
            buffer_ms: buffer.max_allowance_ms() as f64,
        };

        let scenario = Scenario {
            codec,
            network,
            delays,
            buffer,
            duration,
            steg,
            controller,
            quality,
            rtcp_interval_ms,
            experiment,
            warden,
            sweep,
        };

        if let Some(limit) = scenario.steg.max_lack_delay_ms {
            let needed = scenario.lack_delay_ms();
            if needed > limit {
                return Err(invalid(
                    "steganogram.max_lack_delay_ms",
                    format!(
                        "buffer allowance of {} ms requires an intentional delay of {needed} ms, \
                         above the configured limit of {limit} ms",
                        scenario.buffer.max_allowance_ms()
                    ),
                ));
            }
        }
        Ok(scenario)
    }
}

fn resolve_codec(raw: Option<RawCodec>) -> Result<CodecProfile, ScenarioError> {
    let raw = match raw {
        None => return Ok(CodecProfile::g711(false)),
        Some(r) => r,
    };
    let preset = raw.preset.as_deref().unwrap_or("custom");
    let pps = raw.packets_per_second;
    let payload = raw.payload_bits;
    let profile = match preset {
        "g711" => CodecProfile::g711(false),
        "g711_plc" => CodecProfile::g711(true),
        "g729a" => {
            let pps = pps.ok_or(ScenarioError::Missing { key: "codec.packets_per_second" })?;
            let payload = payload.ok_or(ScenarioError::Missing { key: "codec.payload_bits" })?;
            CodecProfile::g729a(pps, payload)
                .map_err(|e| invalid("codec", e.to_string()))?
        }
        "g723_1" => {
            let pps = pps.ok_or(ScenarioError::Missing { key: "codec.packets_per_second" })?;
            let payload = payload.ok_or(ScenarioError::Missing { key: "codec.payload_bits" })?;
            CodecProfile::g723_1(pps, payload)
                .map_err(|e| invalid("codec", e.to_string()))?
        }
        "custom" => {
            let pps = pps.ok_or(ScenarioError::Missing { key: "codec.packets_per_second" })?;
            let payload = payload.ok_or(ScenarioError::Missing { key: "codec.payload_bits" })?;
            let tolerance =
                raw.loss_tolerance.ok_or(ScenarioError::Missing { key: "codec.loss_tolerance" })?;
            let name = raw.name.unwrap_or_else(|| "custom".to_string());
            CodecProfile::new(name, pps, payload, tolerance)
                .map_err(|e| invalid("codec", e.to_string()))?
        }
        other => {
            return Err(invalid(
                "codec.preset",
                format!("unknown preset `{other}` (expected g711, g711_plc, g729a, g723_1 or custom)"),
            ))
        }
    };
    // integral packet rate keeps the millisecond send schedule exact
    let pps = profile.packets_per_second;
    if pps.fract().abs() > 1e-9 || !(1.0..=1000.0).contains(&pps) {
        return Err(invalid(
            "codec.packets_per_second",
            format!("must be an integer between 1 and 1000 for the 1 ms tick base, got {pps}"),
        ));
    }
    Ok(profile)
}

fn resolve_network(raw: Option<RawNetwork>) -> Result<NetworkModel, ScenarioError> {
    let raw = raw.unwrap_or(RawNetwork {
        loss: None,
        loss_schedule: None,
        base_delay_ms: None,
        jitter: None,
    });
    let loss_schedule = match (raw.loss, raw.loss_schedule) {
        (Some(_), Some(_)) => {
            return Err(invalid(
                "network.loss",
                "give either `loss` or `loss_schedule`, not both",
            ))
        }
        (Some(p), None) => vec![(0, require_probability(p, "network.loss")?)],
        (None, Some(entries)) => {
            if entries.is_empty() {
                return Err(invalid("network.loss_schedule", "schedule must not be empty"));
            }
            let mut schedule = Vec::with_capacity(entries.len());
            let mut prev_ms: Option<u64> = None;
            for (i, [t_s, p]) in entries.iter().enumerate() {
                if !t_s.is_finite() || *t_s < 0.0 {
                    return Err(invalid(
                        "network.loss_schedule",
                        format!("entry {i}: onset must be a non-negative time, got {t_s}"),
                    ));
                }
                let t_ms = (t_s * 1000.0).round() as u64;
                if i == 0 && t_ms != 0 {
                    return Err(invalid(
                        "network.loss_schedule",
                        "first entry must start at t = 0",
                    ));
                }
                if let Some(prev) = prev_ms {
                    if t_ms <= prev {
                        return Err(invalid(
                            "network.loss_schedule",
                            format!("entry {i}: onsets must be strictly increasing"),
                        ));
                    }
                }
                schedule.push((t_ms, require_probability(*p, "network.loss_schedule")?));
                prev_ms = Some(t_ms);
            }
            schedule
        }
        (None, None) => vec![(0, 0.0)],
    };
    let base_delay_ms = require_ms(raw.base_delay_ms, "network.base_delay_ms", 30.0)?;
    let jitter = match raw.jitter {
        None => JitterModel::Uniform { spread_ms: 10 },
        Some(j) => match j.model.as_str() {
            "none" => JitterModel::None,
            "uniform" => JitterModel::Uniform {
                spread_ms: require_ms(j.spread_ms, "network.jitter.spread_ms", 10.0)?,
            },
            "normal" => {
                let sigma = j.sigma_ms.ok_or(ScenarioError::Missing { key: "network.jitter.sigma_ms" })?;
                if !(sigma.is_finite() && sigma > 0.0) {
                    return Err(invalid(
                        "network.jitter.sigma_ms",
                        format!("must be > 0, got {sigma}"),
                    ));
                }
                JitterModel::Normal { sigma_ms: sigma }
            }
            other => {
                return Err(invalid(
                    "network.jitter.model",
                    format!("unknown jitter model `{other}` (expected none, uniform or normal)"),
                ))
            }
        },
    };
    Ok(NetworkModel { loss_schedule, base_delay_ms, jitter })
}

fn resolve_buffer(raw: Option<RawBuffer>) -> Result<BufferPolicy, ScenarioError> {
    let raw = match raw {
        None => return Ok(BufferPolicy::Fixed { size_ms: 100 }),
        Some(r) => r,
    };
    match raw.mode.as_deref().unwrap_or("fixed") {
        "fixed" => Ok(BufferPolicy::Fixed {
            size_ms: require_ms(raw.size_ms, "jitter_buffer.size_ms", 100.0)?,
        }),
        "adaptive" => {
            let window_packets = raw.window_packets.unwrap_or(50);
            if window_packets == 0 {
                return Err(invalid("jitter_buffer.window_packets", "must be at least 1"));
            }
            let margin_ms = require_ms(raw.margin_ms, "jitter_buffer.margin_ms", 5.0)?;
            let min_ms = require_ms(raw.min_ms, "jitter_buffer.min_ms", 20.0)?;
            let max_ms = require_ms(raw.max_ms, "jitter_buffer.max_ms", 200.0)?;
            if min_ms > max_ms {
                return Err(invalid(
                    "jitter_buffer.min_ms",
                    format!("min {min_ms} ms exceeds max {max_ms} ms"),
                ));
            }
            Ok(BufferPolicy::Adaptive { window_packets, margin_ms, min_ms, max_ms })
        }
        other => Err(invalid(
            "jitter_buffer.mode",
            format!("unknown mode `{other}` (expected fixed or adaptive)"),
        )),
    }
}

fn resolve_duration(raw: Option<RawDuration>) -> Result<DurationPolicy, ScenarioError> {
    let raw = raw.ok_or(ScenarioError::Missing { key: "duration" })?;
    match raw.mode.as_str() {
        "fixed" => {
            let seconds = raw.seconds.ok_or(ScenarioError::Missing { key: "duration.seconds" })?;
            if !(seconds.is_finite() && seconds > 0.0) {
                return Err(invalid("duration.seconds", format!("must be > 0, got {seconds}")));
            }
            Ok(DurationPolicy::FixedMs((seconds * 1000.0).round().max(1.0) as u64))
        }
        "sampled" => {
            let shape = raw.shape.ok_or(ScenarioError::Missing { key: "duration.shape" })?;
            let model = match (raw.mean_seconds, raw.scale_seconds) {
                (Some(_), Some(_)) => {
                    return Err(invalid(
                        "duration.mean_seconds",
                        "give either `mean_seconds` or `scale_seconds`, not both",
                    ))
                }
                (Some(mean), None) => calibrate_scale(shape, mean)
                    .map_err(|e| invalid("duration", e.to_string()))?,
                (None, Some(scale)) => WeibullModel::new(shape, scale)
                    .map_err(|e| invalid("duration", e.to_string()))?,
                (None, None) => {
                    return Err(ScenarioError::Missing { key: "duration.mean_seconds" })
                }
            };
            Ok(DurationPolicy::Sampled(model))
        }
        other => Err(invalid(
            "duration.mode",
            format!("unknown mode `{other}` (expected fixed or sampled)"),
        )),
    }
}

fn resolve_steg(raw: Option<RawSteg>) -> Result<StegConfig, ScenarioError> {
    let raw = raw.ok_or(ScenarioError::Missing { key: "steganogram" })?;
    let size_bits = raw.size_bits.ok_or(ScenarioError::Missing { key: "steganogram.size_bits" })?;
    let max_lack_delay_ms = match raw.max_lack_delay_ms {
        None => None,
        Some(v) => Some(require_ms(Some(v), "steganogram.max_lack_delay_ms", 0.0)?),
    };
    Ok(StegConfig {
        size_bits,
        receiver_aware: raw.receiver_aware.unwrap_or(true),
        max_lack_delay_ms,
    })
}

fn resolve_controller(raw: Option<RawController>) -> Result<ControllerConfig, ScenarioError> {
    let raw = raw.ok_or(ScenarioError::Missing { key: "controller" })?;
    let mode = match raw.mode.as_str() {
        "constant" => {
            let rate = raw.rate_bps.ok_or(ScenarioError::Missing { key: "controller.rate_bps" })?;
            if !(rate.is_finite() && rate >= 0.0) {
                return Err(invalid("controller.rate_bps", format!("must be >= 0, got {rate}")));
            }
            ControllerMode::Constant { rate_bps: rate }
        }
        "residual_mean" => ControllerMode::ResidualMean,
        "quantile" => {
            let xi = raw.xi.ok_or(ScenarioError::Missing { key: "controller.xi" })?;
            if !(xi > 0.0 && xi < 1.0) {
                return Err(invalid(
                    "controller.xi",
                    format!("must lie strictly inside (0, 1), got {xi}"),
                ));
            }
            ControllerMode::Quantile { xi }
        }
        other => {
            return Err(invalid(
                "controller.mode",
                format!("unknown mode `{other}` (expected constant, residual_mean or quantile)"),
            ))
        }
    };
    let denominator = match raw.denominator.as_deref() {
        None | Some("mean_residual") => DenominatorMode::MeanResidual,
        Some("full_conditional") => DenominatorMode::FullConditional,
        Some(other) => {
            return Err(invalid(
                "controller.denominator",
                format!("unknown denominator `{other}` (expected mean_residual or full_conditional)"),
            ))
        }
    };
    let cap = match raw.cap {
        None => CapPolicy::Uncapped,
        Some(c) => match c.mode.as_str() {
            "uncapped" => CapPolicy::Uncapped,
            "fixed" => {
                let irq = c.irq_bps.ok_or(ScenarioError::Missing { key: "controller.cap.irq_bps" })?;
                if !(irq.is_finite() && irq >= 0.0) {
                    return Err(invalid(
                        "controller.cap.irq_bps",
                        format!("must be >= 0, got {irq}"),
                    ));
                }
                CapPolicy::Fixed { irq_bps: irq }
            }
            "loss_budget" => {
                let p = c.total_loss
                    .ok_or(ScenarioError::Missing { key: "controller.cap.total_loss" })?;
                CapPolicy::LossBudget {
                    total_loss: require_probability(p, "controller.cap.total_loss")?,
                }
            }
            "dynamic_mos" => {
                let floor =
                    c.mos_floor.ok_or(ScenarioError::Missing { key: "controller.cap.mos_floor" })?;
                if !(1.0..=5.0).contains(&floor) {
                    return Err(invalid(
                        "controller.cap.mos_floor",
                        format!("must lie in [1, 5], got {floor}"),
                    ));
                }
                CapPolicy::DynamicMos { mos_floor: floor }
            }
            other => {
                return Err(invalid(
                    "controller.cap.mode",
                    format!(
                        "unknown cap mode `{other}` (expected uncapped, fixed, loss_budget or dynamic_mos)"
                    ),
                ))
            }
        },
    };
    Ok(ControllerConfig { mode, denominator, cap })
}

fn resolve_quality(raw: Option<RawQuality>) -> Result<MosParams, ScenarioError> {
    let defaults = MosParams::default();
    let raw = match raw {
        None => return Ok(defaults),
        Some(r) => r,
    };
    MosParams::new(
        raw.alpha.unwrap_or(defaults.alpha()),
        raw.beta.unwrap_or(defaults.beta()),
        raw.gamma.unwrap_or(defaults.gamma()),
    )
    .map_err(|e| invalid("quality", e.to_string()))
}

fn resolve_experiment(raw: Option<RawExperiment>) -> Result<ExperimentConfig, ScenarioError> {
    let raw = raw.ok_or(ScenarioError::Missing { key: "experiment" })?;
    let master_seed =
        raw.master_seed.ok_or(ScenarioError::Missing { key: "experiment.master_seed" })?;
    let replications = raw.replications.unwrap_or(1);
    if replications == 0 {
        return Err(invalid("experiment.replications", "must be at least 1"));
    }
    Ok(ExperimentConfig {
        replications,
        master_seed,
        write_packet_traces: raw.write_packet_traces.unwrap_or(false),
    })
}

fn resolve_warden(raw: Option<RawWarden>) -> Result<WardenConfig, ScenarioError> {
    let raw = match raw {
        None => return Ok(WardenConfig::default()),
        Some(r) => r,
    };
    if let Some(p) = raw.passive_threshold {
        require_probability(p, "warden.passive_threshold")?;
    }
    if let Some(m) = raw.passive_sigma_multiplier {
        if !(m.is_finite() && m >= 0.0) {
            return Err(invalid(
                "warden.passive_sigma_multiplier",
                format!("must be >= 0, got {m}"),
            ));
        }
    }
    if raw.passive_threshold.is_some() && raw.passive_sigma_multiplier.is_some() {
        return Err(invalid(
            "warden.passive_threshold",
            "give either an absolute threshold or a sigma multiplier, not both",
        ));
    }
    if let Some(a) = raw.ks_alpha {
        if !(a > 0.0 && a < 1.0) {
            return Err(invalid(
                "warden.ks_alpha",
                format!("must lie strictly inside (0, 1), got {a}"),
            ));
        }
    }
    let active_assumed_buffer_ms = match raw.active_assumed_buffer_ms {
        None => None,
        Some(v) => Some(require_ms(Some(v), "warden.active_assumed_buffer_ms", 0.0)?),
    };
    let active_drop = match raw.active_action.as_deref() {
        None | Some("erase") => false,
        Some("drop") => true,
        Some(other) => {
            return Err(invalid(
                "warden.active_action",
                format!("unknown action `{other}` (expected erase or drop)"),
            ))
        }
    };
    Ok(WardenConfig {
        passive_threshold: raw.passive_threshold,
        passive_sigma_multiplier: raw.passive_sigma_multiplier,
        ks_alpha: raw.ks_alpha,
        active_assumed_buffer_ms,
        active_drop,
    })
}

fn resolve_sweep(
    raw: Option<RawSweep>,
    controller: &ControllerConfig,
    duration: &DurationPolicy,
) -> Result<SweepConfig, ScenarioError> {
    let raw = match raw {
        None => return Ok(SweepConfig::default()),
        Some(r) => r,
    };
    let sweep = SweepConfig {
        shape: raw.shape.unwrap_or_default(),
        xi: raw.xi.unwrap_or_default(),
        size_bits: raw.size_bits.unwrap_or_default(),
    };
    if !sweep.shape.is_empty() && !matches!(duration, DurationPolicy::Sampled(_)) {
        return Err(invalid(
            "sweep.shape",
            "sweeping the duration shape requires `duration.mode = \"sampled\"`",
        ));
    }
    for &k in &sweep.shape {
        if !(k.is_finite() && k > 0.0) {
            return Err(invalid("sweep.shape", format!("shape values must be > 0, got {k}")));
        }
    }
    if !sweep.xi.is_empty() && !matches!(controller.mode, ControllerMode::Quantile { .. }) {
        return Err(invalid(
            "sweep.xi",
            "sweeping xi requires `controller.mode = \"quantile\"`",
        ));
    }
    for &xi in &sweep.xi {
        if !(xi > 0.0 && xi < 1.0) {
            return Err(invalid("sweep.xi", format!("xi values must lie in (0, 1), got {xi}")));
        }
    }
    Ok(sweep)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
        [duration]
        mode = "fixed"
        seconds = 200.0

        [steganogram]
        size_bits = 1000

        [controller]
        mode = "constant"
        rate_bps = 320.0

        [experiment]
        master_seed = 7
    "#;

    #[test]
    fn minimal_scenario_resolves_with_defaults() {
        let s = Scenario::from_toml_str(MINIMAL).unwrap();
        assert_eq!(s.codec.name, "G.711");
        assert_eq!(s.network.nominal_loss(), 0.0);
        assert_eq!(s.network.base_delay_ms, 30);
        assert_eq!(s.buffer, BufferPolicy::Fixed { size_ms: 100 });
        assert_eq!(s.duration, DurationPolicy::FixedMs(200_000));
        assert_eq!(s.rtcp_interval_ms, 5000);
        assert_eq!(s.experiment.replications, 1);
        assert!(s.steg.receiver_aware);
        assert_eq!(s.controller.cap, CapPolicy::Uncapped);
        // 100 ms allowance minus the 40 ms processing chain, strictly late
        assert_eq!(s.lack_delay_ms(), 61);
    }

    #[test]
    fn missing_sections_name_the_key() {
        let e = Scenario::from_toml_str("").unwrap_err();
        assert!(matches!(e, ScenarioError::Missing { key: "duration" }), "{e}");
        let e = Scenario::from_toml_str(
            "[duration]\nmode = \"fixed\"\nseconds = 10.0\n",
        )
        .unwrap_err();
        assert!(matches!(e, ScenarioError::Missing { key: "steganogram" }), "{e}");
        let no_seed = r#"
            [duration]
            mode = "fixed"
            seconds = 10.0
            [steganogram]
            size_bits = 10
            [controller]
            mode = "residual_mean"
            [experiment]
            replications = 2
        "#;
        let e = Scenario::from_toml_str(no_seed).unwrap_err();
        assert!(matches!(e, ScenarioError::Missing { key: "experiment.master_seed" }), "{e}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = format!("{MINIMAL}\n[nonsense]\nfoo = 1\n");
        assert!(matches!(Scenario::from_toml_str(&text), Err(ScenarioError::Parse(_))));
    }

    #[test]
    fn sampled_duration_calibrates_to_the_mean() {
        let text = r#"
            [duration]
            mode = "sampled"
            shape = 2.0
            mean_seconds = 117.31

            [steganogram]
            size_bits = 1000

            [controller]
            mode = "residual_mean"

            [experiment]
            master_seed = 1
        "#;
        let s = Scenario::from_toml_str(text).unwrap();
        let model = s.duration_model().unwrap();
        assert!((model.stats().mean - 117.31).abs() < 1e-9);
        assert!((model.scale() - 132.37).abs() < 0.05);
    }

    #[test]
    fn infeasible_lack_delay_is_rejected() {
        let text = r#"
            [jitter_buffer]
            mode = "fixed"
            size_ms = 150.0

            [duration]
            mode = "fixed"
            seconds = 60.0

            [steganogram]
            size_bits = 1000
            max_lack_delay_ms = 80.0

            [controller]
            mode = "constant"
            rate_bps = 100.0

            [experiment]
            master_seed = 1
        "#;
        let e = Scenario::from_toml_str(text).unwrap_err();
        assert!(
            matches!(e, ScenarioError::Invalid { key: "steganogram.max_lack_delay_ms", .. }),
            "{e}"
        );
    }

    #[test]
    fn loss_schedule_resolves_and_evaluates() {
        let text = r#"
            [network]
            loss_schedule = [[0.0, 0.01], [60.0, 0.05], [120.0, 0.0]]

            [duration]
            mode = "fixed"
            seconds = 200.0

            [steganogram]
            size_bits = 1000

            [controller]
            mode = "constant"
            rate_bps = 320.0

            [experiment]
            master_seed = 7
        "#;
        let s = Scenario::from_toml_str(text).unwrap();
        assert_eq!(s.network.loss_at(0), 0.01);
        assert_eq!(s.network.loss_at(59_999), 0.01);
        assert_eq!(s.network.loss_at(60_000), 0.05);
        assert_eq!(s.network.loss_at(500_000), 0.0);
        assert_eq!(s.network.nominal_loss(), 0.01);
    }

    #[test]
    fn fractional_packet_rate_is_rejected() {
        let text = r#"
            [codec]
            preset = "custom"
            name = "odd"
            packets_per_second = 33.33
            payload_bits = 640
            loss_tolerance = 0.02

            [duration]
            mode = "fixed"
            seconds = 10.0

            [steganogram]
            size_bits = 10

            [controller]
            mode = "constant"
            rate_bps = 1.0

            [experiment]
            master_seed = 1
        "#;
        let e = Scenario::from_toml_str(text).unwrap_err();
        assert!(matches!(e, ScenarioError::Invalid { key: "codec.packets_per_second", .. }), "{e}");
    }

    #[test]
    fn sweep_axes_require_matching_modes() {
        let text = format!("{MINIMAL}\n[sweep]\nxi = [0.8, 0.9]\n");
        let e = Scenario::from_toml_str(&text).unwrap_err();
        assert!(matches!(e, ScenarioError::Invalid { key: "sweep.xi", .. }), "{e}");
        let text = format!("{MINIMAL}\n[sweep]\nshape = [1.0]\n");
        let e = Scenario::from_toml_str(&text).unwrap_err();
        assert!(matches!(e, ScenarioError::Invalid { key: "sweep.shape", .. }), "{e}");
    }

    #[test]
    fn conflicting_warden_thresholds_are_rejected() {
        let text = format!(
            "{MINIMAL}\n[warden]\npassive_threshold = 0.03\npassive_sigma_multiplier = 2.0\n"
        );
        let e = Scenario::from_toml_str(&text).unwrap_err();
        assert!(matches!(e, ScenarioError::Invalid { key: "warden.passive_threshold", .. }), "{e}");
    }
}
