//! Analytics and simulation for covert channels that hide data in
//! intentionally delayed voice packets.
//!
//! An RTP packet that arrives after its playout deadline is discarded by an
//! ordinary receiver. A transmitter that delays selected packets on purpose
//! can therefore replace their payloads with hidden data: the call loses a
//! little quality, a cooperating receiver extracts the late payloads, and the
//! stream itself stays protocol-correct. The crate answers the engineering
//! questions behind that scheme:
//!
//! * how much extra loss a call can absorb before quality or loss statistics
//!   give it away ([`quality`], [`budget`]),
//! * how long a call that has survived to time `t` is still expected to last,
//!   and therefore how fast the hidden payload must be inserted
//!   ([`duration`], [`control`]),
//! * what happens packet by packet under a given scenario ([`sim`],
//!   [`runner`]),
//! * and what an observer can detect or destroy ([`warden`]).
//!
//! All randomness is seeded, per-call seeds are derived from a master seed,
//! and batch results are independent of thread scheduling, so every
//! experiment reproduces byte for byte. [`selftest`] bundles the whole
//! verification suite behind one call.

pub mod budget;
pub mod codec;
pub mod control;
pub mod duration;
pub mod quality;
pub mod runner;
pub mod selftest;
pub mod sim;
pub mod warden;

pub(crate) mod numeric;
