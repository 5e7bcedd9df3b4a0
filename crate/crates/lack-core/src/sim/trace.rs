//! Per-packet traces, receiver reports and per-call summaries produced by
//! the call simulator, plus their CSV serializations.
//!
//! The CSV layouts are part of the tool's external contract: every file the
//! simulator writes can be read back by the warden-side readers, so captured
//! runs can be re-analyzed offline.

use std::io::Write;

use serde::{Deserialize, Serialize};

/// What happened to one RTP packet at the receiver.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PacketOutcome {
    /// Arrived within the playout allowance and was played.
    Played,
    /// Arrived but too late to play; an aware receiver reads its payload.
    Late,
    /// Dropped by the network, never arrived.
    NetworkLost,
}

/// One packet as transmitted and classified.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PacketEvent {
    pub seq: u64,
    pub send_ms: u64,
    /// Chosen to carry covert payload this transmission.
    pub steg: bool,
    /// Covert bits carried in this packet (0 for ordinary packets; bits on a
    /// network-lost covert packet are re-queued and sent again later).
    pub steg_bits: u32,
    /// Intentional extra delay applied before sending (covert packets only).
    pub lack_delay_ms: u32,
    pub network_delay_ms: u32,
    /// Full transit: processing chain + intentional delay + network.
    pub total_delay_ms: u32,
    /// Playout allowance the receiver applied to this packet.
    pub allowance_ms: u32,
    pub outcome: PacketOutcome,
}

/// Receiver feedback for one reporting interval, RFC 3550 in shape: counts
/// and loss fraction over the window, running totals, smoothed jitter, and
/// the quality estimate the sender derives from the window loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RtcpReport {
    pub at_ms: u64,
    /// Packets sent in the window.
    pub expected: u32,
    /// Packets unusable at the receiver: network-lost plus late arrivals.
    pub lost: u32,
    pub loss_fraction: f64,
    pub cumulative_lost: u64,
    /// Mean transit delay of packets that arrived in the window.
    pub mean_delay_ms: f64,
    /// Interarrival jitter, exponentially smoothed with gain 1/16.
    pub jitter_ms: f64,
    /// Quality estimate mapped from the window loss fraction.
    pub mos: f64,
}

/// Packet counts by outcome, with late arrivals split by covert use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct OutcomeCounts {
    pub sent: u64,
    pub played: u64,
    pub network_lost: u64,
    /// Late arrivals that carried covert payload.
    pub late_steg: u64,
    /// Late arrivals caused by network delay alone.
    pub late_other: u64,
}

impl OutcomeCounts {
    pub fn from_events(events: &[PacketEvent]) -> Self {
        let mut c = OutcomeCounts { sent: events.len() as u64, ..Default::default() };
        for e in events {
            match e.outcome {
                PacketOutcome::Played => c.played += 1,
                PacketOutcome::NetworkLost => c.network_lost += 1,
                PacketOutcome::Late if e.steg => c.late_steg += 1,
                PacketOutcome::Late => c.late_other += 1,
            }
        }
        c
    }

    /// Packets that escaped network-caused loss (drops and natural lateness).
    pub fn survivors(&self) -> u64 {
        self.sent - self.network_lost - self.late_other
    }
}

/// Covert bits an aware receiver extracts: payload of late covert packets.
pub fn delivered_steg_bits(events: &[PacketEvent]) -> u64 {
    events
        .iter()
        .filter(|e| e.steg && e.outcome == PacketOutcome::Late)
        .map(|e| e.steg_bits as u64)
        .sum()
}

/// Full record of one simulated call.
#[derive(Debug, Clone, PartialEq)]
pub struct CallTrace {
    pub seed: u64,
    pub duration_ms: u64,
    pub events: Vec<PacketEvent>,
    pub reports: Vec<RtcpReport>,
    /// Covert bits the receiver actually extracted (zero when unaware).
    pub delivered_bits: u64,
    /// Times a packet was chosen to carry covert payload (re-sends count).
    pub steg_selected: u64,
}

impl CallTrace {
    pub fn counts(&self) -> OutcomeCounts {
        OutcomeCounts::from_events(&self.events)
    }

    /// Condenses the trace into the per-call summary row.
    ///
    /// The realized fractions compose exactly: with `p_n` covering all
    /// network-caused losses and `p_l` the covert losses among the
    /// remainder, `1 - (1 - p_n)(1 - p_l)` reproduces the total loss.
    pub fn summary(&self) -> CallSummary {
        let c = self.counts();
        let sent = c.sent;
        let (p_n, p_l, p_t) = if sent == 0 {
            (0.0, 0.0, 0.0)
        } else {
            let natural = (c.network_lost + c.late_other) as f64 / sent as f64;
            let survivors = c.survivors();
            let covert = if survivors == 0 {
                0.0
            } else {
                c.late_steg as f64 / survivors as f64
            };
            let total = (c.network_lost + c.late_other + c.late_steg) as f64 / sent as f64;
            (natural, covert, total)
        };
        let (mos_mean, mos_min) = if self.reports.is_empty() {
            (f64::NAN, f64::NAN)
        } else {
            let sum: f64 = self.reports.iter().map(|r| r.mos).sum();
            let min = self.reports.iter().map(|r| r.mos).fold(f64::INFINITY, f64::min);
            (sum / self.reports.len() as f64, min)
        };
        CallSummary {
            seed: self.seed,
            duration_s: self.duration_ms as f64 / 1000.0,
            packets_sent: sent,
            played: c.played,
            network_lost: c.network_lost,
            late_steg: c.late_steg,
            late_other: c.late_other,
            steg_selected: self.steg_selected,
            delivered_bits: self.delivered_bits,
            realized_p_n: p_n,
            realized_p_l: p_l,
            realized_p_t: p_t,
            mos_mean,
            mos_min,
        }
    }
}

/// One row of the per-call results table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CallSummary {
    pub seed: u64,
    pub duration_s: f64,
    pub packets_sent: u64,
    pub played: u64,
    pub network_lost: u64,
    pub late_steg: u64,
    pub late_other: u64,
    pub steg_selected: u64,
    pub delivered_bits: u64,
    /// Network-caused loss fraction (drops plus naturally late arrivals).
    pub realized_p_n: f64,
    /// Covert loss fraction among packets the network spared.
    pub realized_p_l: f64,
    /// Total unusable fraction at the receiver.
    pub realized_p_t: f64,
    pub mos_mean: f64,
    pub mos_min: f64,
}

pub fn write_packets_csv<W: Write>(writer: W, events: &[PacketEvent]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for e in events {
        w.serialize(e)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_reports_csv<W: Write>(writer: W, reports: &[RtcpReport]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in reports {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_summaries_csv<W: Write>(writer: W, summaries: &[CallSummary]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for s in summaries {
        w.serialize(s)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn event(seq: u64, steg: bool, bits: u32, outcome: PacketOutcome) -> PacketEvent {
        PacketEvent {
            seq,
            send_ms: seq * 20,
            steg,
            steg_bits: bits,
            lack_delay_ms: if steg { 61 } else { 0 },
            network_delay_ms: 30,
            total_delay_ms: if steg { 131 } else { 70 },
            allowance_ms: 100,
            outcome,
        }
    }

    #[test]
    fn counts_partition_the_events() {
        let events = vec![
            event(0, false, 0, PacketOutcome::Played),
            event(1, true, 1280, PacketOutcome::Late),
            event(2, false, 0, PacketOutcome::NetworkLost),
            event(3, true, 1280, PacketOutcome::NetworkLost),
            event(4, false, 0, PacketOutcome::Late),
        ];
        let c = OutcomeCounts::from_events(&events);
        assert_eq!(c.sent, 5);
        assert_eq!(c.played + c.network_lost + c.late_steg + c.late_other, c.sent);
        assert_eq!(c.late_steg, 1);
        assert_eq!(c.late_other, 1);
        assert_eq!(c.survivors(), 2);
        assert_eq!(delivered_steg_bits(&events), 1280);
    }

    #[test]
    fn summary_fractions_compose_exactly() {
        // 10 packets: 2 network-lost, 1 naturally late, 2 covert-late.
        let mut events = Vec::new();
        for i in 0..5 {
            events.push(event(i, false, 0, PacketOutcome::Played));
        }
        events.push(event(5, false, 0, PacketOutcome::NetworkLost));
        events.push(event(6, false, 0, PacketOutcome::NetworkLost));
        events.push(event(7, false, 0, PacketOutcome::Late));
        events.push(event(8, true, 640, PacketOutcome::Late));
        events.push(event(9, true, 1280, PacketOutcome::Late));
        let trace = CallTrace {
            seed: 1,
            duration_ms: 200,
            events,
            reports: vec![],
            delivered_bits: 1920,
            steg_selected: 2,
        };
        let s = trace.summary();
        assert_eq!(s.realized_p_n, 0.3);
        assert_eq!(s.realized_p_l, 2.0 / 7.0);
        assert_eq!(s.realized_p_t, 0.5);
        let composed = 1.0 - (1.0 - s.realized_p_n) * (1.0 - s.realized_p_l);
        assert!((composed - s.realized_p_t).abs() < 1e-15);
        assert!(s.mos_mean.is_nan());
    }

    #[test]
    fn packet_csv_round_trips_through_serde() {
        let events = vec![
            event(0, false, 0, PacketOutcome::Played),
            event(1, true, 1280, PacketOutcome::Late),
        ];
        let mut buf = Vec::new();
        write_packets_csv(&mut buf, &events).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("seq,send_ms,steg,steg_bits,lack_delay_ms,"));
        assert!(text.contains("late"));
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        let back: Vec<PacketEvent> = rdr.deserialize().map(|r| r.unwrap()).collect();
        assert_eq!(back, events);
    }
}
