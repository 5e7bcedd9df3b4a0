//! Loss and delay budgets.
//!
//! Covert losses ride on top of the network's own: with network loss `p_n`
//! and intentional loss `p_l` the total a receiver observes composes as
//! `p_t = 1 - (1 - p_n)(1 - p_l)`. Fixing an acceptable `p_t` therefore
//! bounds the intentional share ([`admissible_lack_loss`]), and the codec's
//! own loss tolerance bounds it again ([`effective_loss_cap`]).
//!
//! On the delay side, a packet is discarded by the receiver exactly when its
//! end-to-end delay exceeds the jitter-buffer allowance `t_b`, so the
//! intentional delay must be large enough to guarantee that
//! ([`min_lack_delay`]).
//!
//! [`loss_to_rate`] and [`rate_to_loss`] convert between a loss fraction and
//! the covert bit rate it carries: `ir = p_l * N_p * P_p`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::CodecProfile;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BudgetError {
    #[error("{name} must lie in [0, 1], got {value}")]
    InvalidProbability { name: &'static str, value: f64 },
    #[error("network loss of 1 leaves no channel at all")]
    DegenerateNetwork,
    #[error("delay {name} must be finite and >= 0, got {value} ms")]
    InvalidDelay { name: &'static str, value: f64 },
    #[error("insertion rate must lie in [0, {max} b/s] for this codec, got {rate}")]
    RateOutOfRange { rate: f64, max: f64 },
}

/// One-way delay decomposition in milliseconds. The total transmitter-side
/// delay is `signal + packetization + encapsulation + lack`, the network adds
/// `network`, and the receiver discards anything exceeding `buffer`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DelayBudget {
    /// Signal processing (voice activity detection, compression, ...).
    pub signal_ms: f64,
    /// Packetization at the codec frame boundary.
    pub packetization_ms: f64,
    /// Protocol encapsulation and serialization.
    pub encapsulation_ms: f64,
    /// Nominal network transit delay.
    pub network_ms: f64,
    /// Jitter-buffer allowance at the receiver.
    pub buffer_ms: f64,
}

impl DelayBudget {
    pub fn validate(&self) -> Result<(), BudgetError> {
        for (name, value) in [
            ("signal_ms", self.signal_ms),
            ("packetization_ms", self.packetization_ms),
            ("encapsulation_ms", self.encapsulation_ms),
            ("network_ms", self.network_ms),
            ("buffer_ms", self.buffer_ms),
        ] {
            if !value.is_finite() || value < 0.0 {
                return Err(BudgetError::InvalidDelay { name, value });
            }
        }
        Ok(())
    }

    /// Transmitter-side processing delay, before any intentional hold-back.
    pub fn processing_ms(&self) -> f64 {
        self.signal_ms + self.packetization_ms + self.encapsulation_ms
    }
}

/// Largest intentional loss fraction that keeps the observed total at or
/// below `p_t` when the network already loses `p_n`:
/// `(p_t - p_n) / (1 - p_n)`, clamped at zero.
pub fn admissible_lack_loss(p_t: f64, p_n: f64) -> Result<f64, BudgetError> {
    for (name, value) in [("p_t", p_t), ("p_n", p_n)] {
        if !(0.0..=1.0).contains(&value) {
            return Err(BudgetError::InvalidProbability { name, value });
        }
    }
    if p_n == 1.0 {
        return Err(BudgetError::DegenerateNetwork);
    }
    Ok(((p_t - p_n) / (1.0 - p_n)).max(0.0))
}

/// Smallest intentional delay (ms) that makes a packet miss the playout
/// deadline.
///
/// With a fixed buffer the transmitter knows the allowance in advance and
/// needs the processing chain plus hold-back to reach it:
/// `max(0, buffer - processing)`. When the buffer adapts, the network delay
/// must be counted too and the deadline condition is strict, so one clock
/// tick (`tick_ms`) is added on top of `max(0, buffer - network - processing)`.
pub fn min_lack_delay(budget: &DelayBudget, adaptive_buffer: bool, tick_ms: f64) -> f64 {
    let processing = budget.processing_ms();
    if adaptive_buffer {
        let raw = budget.buffer_ms - budget.network_ms - processing;
        if raw >= 0.0 {
            raw + tick_ms
        } else {
            0.0
        }
    } else {
        (budget.buffer_ms - processing).max(0.0)
    }
}

/// Covert bit rate carried by intentional loss fraction `p_l`.
pub fn loss_to_rate(codec: &CodecProfile, p_l: f64) -> Result<f64, BudgetError> {
    if !(0.0..=1.0).contains(&p_l) {
        return Err(BudgetError::InvalidProbability { name: "p_l", value: p_l });
    }
    Ok(p_l * codec.channel_rate_bps())
}

/// Intentional loss fraction required to carry `ir_bps`.
pub fn rate_to_loss(codec: &CodecProfile, ir_bps: f64) -> Result<f64, BudgetError> {
    let max = codec.channel_rate_bps();
    if !ir_bps.is_finite() || ir_bps < 0.0 || ir_bps > max {
        return Err(BudgetError::RateOutOfRange { rate: ir_bps, max });
    }
    Ok(ir_bps / max)
}

/// Binding intentional-loss cap: the tighter of the codec's loss tolerance
/// and a quality-derived total-loss target, both discounted by the loss the
/// network already contributes.
pub fn effective_loss_cap(
    codec: &CodecProfile,
    p_n: f64,
    p_t_quality: f64,
) -> Result<f64, BudgetError> {
    let from_codec = admissible_lack_loss(codec.loss_tolerance, p_n)?;
    let from_quality = admissible_lack_loss(p_t_quality, p_n)?;
    Ok(from_codec.min(from_quality))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn delays(buffer_ms: f64) -> DelayBudget {
        DelayBudget {
            signal_ms: 10.0,
            packetization_ms: 5.0,
            encapsulation_ms: 25.0,
            network_ms: 30.0,
            buffer_ms,
        }
    }

    #[test]
    fn admissible_loss_frozen_points() {
        let p_l = admissible_lack_loss(0.05, 0.02).unwrap();
        assert_relative_eq!(p_l, 0.03 / 0.98, max_relative = 1e-15);
        assert_eq!(admissible_lack_loss(0.01, 0.05).unwrap(), 0.0);
        assert!(matches!(
            admissible_lack_loss(0.5, 1.0),
            Err(BudgetError::DegenerateNetwork)
        ));
        assert!(matches!(
            admissible_lack_loss(1.5, 0.0),
            Err(BudgetError::InvalidProbability { .. })
        ));
    }

    #[test]
    fn min_delay_reaches_the_deadline() {
        // fixed buffer: processing 40 ms toward a 100 ms allowance
        assert_eq!(min_lack_delay(&delays(100.0), false, 1.0), 60.0);
        // allowance already exceeded by processing alone
        assert_eq!(min_lack_delay(&delays(35.0), false, 1.0), 0.0);
        // adaptive: network delay counts and the bound is strict
        assert_eq!(min_lack_delay(&delays(120.0), true, 1.0), 51.0);
        assert_eq!(min_lack_delay(&delays(30.0), true, 1.0), 0.0);
    }

    #[test]
    fn rate_loss_conversion_frozen_points() {
        let g711 = CodecProfile::g711(false);
        assert_eq!(loss_to_rate(&g711, 0.005).unwrap(), 320.0);
        assert_eq!(rate_to_loss(&g711, 320.0).unwrap(), 0.005);
        assert!(matches!(
            rate_to_loss(&g711, 70_000.0),
            Err(BudgetError::RateOutOfRange { .. })
        ));
    }

    #[test]
    fn effective_cap_takes_the_tighter_bound() {
        let g711 = CodecProfile::g711(false); // tolerates 3%
        let cap = effective_loss_cap(&g711, 0.01, 0.05).unwrap();
        assert_relative_eq!(cap, 0.02 / 0.99, max_relative = 1e-12);
        // quality target tighter than the codec tolerance
        let cap = effective_loss_cap(&g711, 0.01, 0.02).unwrap();
        assert_relative_eq!(cap, 0.01 / 0.99, max_relative = 1e-12);
    }

    proptest! {
        #[test]
        fn composition_round_trips(p_n in 0.0f64..0.9, p_l in 0.0f64..0.9) {
            // compose a total from (p_n, p_l), then recover p_l
            let p_t = 1.0 - (1.0 - p_n) * (1.0 - p_l);
            let back = admissible_lack_loss(p_t, p_n).unwrap();
            prop_assert!((back - p_l).abs() < 1e-12);
        }

        #[test]
        fn rate_conversion_is_a_bijection(p_l in 0.0f64..1.0) {
            let g711 = CodecProfile::g711(false);
            let ir = loss_to_rate(&g711, p_l).unwrap();
            prop_assert!((rate_to_loss(&g711, ir).unwrap() - p_l).abs() < 1e-15);
        }

        #[test]
        fn min_delay_added_back_reaches_allowance(
            buffer in 0.0f64..300.0,
            processing in 0.0f64..100.0,
        ) {
            let b = DelayBudget {
                signal_ms: processing,
                packetization_ms: 0.0,
                encapsulation_ms: 0.0,
                network_ms: 30.0,
                buffer_ms: buffer,
            };
            let fixed = min_lack_delay(&b, false, 1.0);
            prop_assert!(processing + fixed >= buffer - 1e-12);
            let adaptive = min_lack_delay(&b, true, 1.0);
            // adaptive mode guarantees a strict exceedance with the nominal
            // network delay included
            prop_assert!(processing + adaptive + b.network_ms > buffer - 1e-12);
        }
    }
}
