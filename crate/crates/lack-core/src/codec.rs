//! Voice codec profiles.
//!
//! A profile carries the three numbers the loss/rate arithmetic needs: the
//! packet rate, the payload size, and how much packet loss the codec absorbs
//! before quality collapses. The product `packets_per_second * payload_bits`
//! is the gross channel rate a covert sender taps a fraction of.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CodecError {
    #[error("packets_per_second must be finite and > 0, got {0}")]
    InvalidPacketRate(f64),
    #[error("payload_bits must be > 0")]
    InvalidPayload,
    #[error("loss_tolerance must lie in [0, 1], got {0}")]
    InvalidTolerance(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodecProfile {
    pub name: String,
    /// Packet rate N_p in packets per second.
    pub packets_per_second: f64,
    /// Voice payload P_p per packet, in bits.
    pub payload_bits: u32,
    /// Fraction of lost packets the codec tolerates before quality is deemed
    /// unacceptable.
    pub loss_tolerance: f64,
}

impl CodecProfile {
    pub fn new(
        name: impl Into<String>,
        packets_per_second: f64,
        payload_bits: u32,
        loss_tolerance: f64,
    ) -> Result<Self, CodecError> {
        if !packets_per_second.is_finite() || packets_per_second <= 0.0 {
            return Err(CodecError::InvalidPacketRate(packets_per_second));
        }
        if payload_bits == 0 {
            return Err(CodecError::InvalidPayload);
        }
        if !(0.0..=1.0).contains(&loss_tolerance) {
            return Err(CodecError::InvalidTolerance(loss_tolerance));
        }
        Ok(Self {
            name: name.into(),
            packets_per_second,
            payload_bits,
            loss_tolerance,
        })
    }

    /// G.711 at 64 kbit/s in 20 ms frames: 50 packets/s of 1280 bits.
    /// Tolerates 3% loss bare, 5% with packet-loss concealment.
    pub fn g711(with_plc: bool) -> Self {
        Self {
            name: if with_plc { "G.711+PLC" } else { "G.711" }.to_owned(),
            packets_per_second: 50.0,
            payload_bits: 1280,
            loss_tolerance: if with_plc { 0.05 } else { 0.03 },
        }
    }

    /// G.729A tolerates 2% loss. Packetization varies by deployment, so the
    /// packet rate and payload size must be supplied.
    pub fn g729a(packets_per_second: f64, payload_bits: u32) -> Result<Self, CodecError> {
        Self::new("G.729A", packets_per_second, payload_bits, 0.02)
    }

    /// G.723.1 tolerates 1% loss; packetization must be supplied.
    pub fn g723_1(packets_per_second: f64, payload_bits: u32) -> Result<Self, CodecError> {
        Self::new("G.723.1", packets_per_second, payload_bits, 0.01)
    }

    /// Gross voice-channel rate `N_p * P_p` in bits per second.
    pub fn channel_rate_bps(&self) -> f64 {
        self.packets_per_second * self.payload_bits as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn g711_profile_matches_wire_rate() {
        let c = CodecProfile::g711(false);
        assert_eq!(c.channel_rate_bps(), 64_000.0);
        assert_eq!(c.loss_tolerance, 0.03);
        assert_eq!(CodecProfile::g711(true).loss_tolerance, 0.05);
    }

    #[test]
    fn low_rate_codecs_require_explicit_packetization() {
        let c = CodecProfile::g729a(50.0, 160).unwrap();
        assert_eq!(c.channel_rate_bps(), 8_000.0);
        assert_eq!(c.loss_tolerance, 0.02);
        assert_eq!(CodecProfile::g723_1(25.0, 256).unwrap().loss_tolerance, 0.01);
        assert!(matches!(
            CodecProfile::g729a(0.0, 160),
            Err(CodecError::InvalidPacketRate(_))
        ));
        assert!(matches!(
            CodecProfile::g723_1(25.0, 0),
            Err(CodecError::InvalidPayload)
        ));
    }
}
