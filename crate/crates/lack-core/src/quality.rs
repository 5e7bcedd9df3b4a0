//! Voice-quality modelling and the insertion-rate caps derived from it.
//!
//! Perceived quality is scored on the 1..5 MOS scale and falls exponentially
//! with packet loss: `MOS(p) = alpha * exp(beta * p) + gamma`. Inverting the
//! fit turns a quality target into a loss budget, and the budget times the
//! codec's packet rate and payload size becomes the bit-rate cap `IR_Q` a
//! covert sender must respect to stay inconspicuous. Two cap styles exist:
//!
//! * static — pick the quality target from a histogram of call quality in
//!   the network ([`irq_static`]): the covert call must stay above the level
//!   a fraction `eta` of ordinary calls reach;
//! * dynamic — re-derive the cap each reporting interval from the current
//!   quality estimate ([`irq_dynamic`]).

use std::io::Read;

use thiserror::Error;

use crate::codec::CodecProfile;

#[derive(Debug, Error)]
pub enum QualityError {
    #[error("alpha must be finite and > 0, got {0}")]
    InvalidAlpha(f64),
    #[error("beta must be finite and < 0, got {0}")]
    InvalidBeta(f64),
    #[error("gamma must be finite, got {0}")]
    InvalidGamma(f64),
    #[error("zero-loss quality alpha + gamma = {0} exceeds the 5.0 MOS ceiling")]
    CeilingExceeded(f64),
    #[error("{name} must lie in [0, 1], got {value}")]
    InvalidProbability { name: &'static str, value: f64 },
    #[error("target MOS {target} is not above the asymptotic floor {floor}")]
    TargetBelowFloor { target: f64, floor: f64 },
    #[error("target MOS {0} exceeds the 5.0 ceiling")]
    TargetAboveCeiling(f64),
    #[error("insertion rate must be finite and >= 0, got {0}")]
    InvalidRate(f64),
    #[error("eta must lie in (0, 1), got {0}")]
    InvalidEta(f64),
    #[error("no histogram bin has tail probability above eta = {0}")]
    EtaUnreachable(f64),
    #[error("histogram has no bins")]
    EmptyHistogram,
    #[error("histogram bin {0} outside the [1, 5] MOS scale")]
    BinOutOfScale(f64),
    #[error("histogram probability for bin {bin} is invalid: {value}")]
    InvalidBinProbability { bin: f64, value: f64 },
    #[error("histogram probabilities sum to {0}, expected 1")]
    Unnormalized(f64),
    #[error("histogram csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("histogram csv field {field} on line {line} is not a number: {value}")]
    BadCsvField {
        field: &'static str,
        line: u64,
        value: String,
    },
}

/// Exponential MOS-versus-loss fit `MOS(p) = alpha * exp(beta * p) + gamma`.
/// The default parameters were fitted to Skype-carried G.711 traffic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MosParams {
    alpha: f64,
    beta: f64,
    gamma: f64,
}

impl MosParams {
    pub fn new(alpha: f64, beta: f64, gamma: f64) -> Result<Self, QualityError> {
        if !alpha.is_finite() || alpha <= 0.0 {
            return Err(QualityError::InvalidAlpha(alpha));
        }
        if !beta.is_finite() || beta >= 0.0 {
            return Err(QualityError::InvalidBeta(beta));
        }
        if !gamma.is_finite() {
            return Err(QualityError::InvalidGamma(gamma));
        }
        if alpha + gamma > 5.0 + 1e-12 {
            return Err(QualityError::CeilingExceeded(alpha + gamma));
        }
        Ok(Self { alpha, beta, gamma })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Best reachable score, at zero loss: `alpha + gamma`.
    pub fn zero_loss_mos(&self) -> f64 {
        self.alpha + self.gamma
    }
}

impl Default for MosParams {
    fn default() -> Self {
        Self {
            alpha: 3.0829,
            beta: -4.6446,
            gamma: 1.07,
        }
    }
}

/// MOS under total packet-loss fraction `p`.
pub fn mos_from_loss(params: &MosParams, p: f64) -> Result<f64, QualityError> {
    if !(0.0..=1.0).contains(&p) {
        return Err(QualityError::InvalidProbability { name: "p", value: p });
    }
    Ok(params.alpha * (params.beta * p).exp() + params.gamma)
}

/// Quality drop caused by adding covert loss `p_l` on top of network loss
/// `p_n`: `alpha * exp(beta p_n) * (1 - exp(beta p_l))`.
pub fn delta_mos(params: &MosParams, p_n: f64, p_l: f64) -> Result<f64, QualityError> {
    for (name, v) in [("p_n", p_n), ("p_l", p_l)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(QualityError::InvalidProbability { name, value: v });
        }
    }
    Ok(params.alpha * (params.beta * p_n).exp() * (1.0 - (params.beta * p_l).exp()))
}

/// Admissible covert loss once a quality target is fixed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBudget {
    /// Largest covert loss fraction that keeps MOS at or above the target.
    pub p_l: f64,
    /// True when the target leaves no room at all (the raw budget was
    /// negative and has been clamped to zero).
    pub exhausted: bool,
}

/// Inverts the MOS fit: the covert loss budget for target quality
/// `target_mos` given network loss `p_n` is `ln((M - gamma)/alpha)/beta - p_n`.
pub fn loss_budget_for_mos(
    params: &MosParams,
    target_mos: f64,
    p_n: f64,
) -> Result<LossBudget, QualityError> {
    if !(0.0..=1.0).contains(&p_n) {
        return Err(QualityError::InvalidProbability { name: "p_n", value: p_n });
    }
    if target_mos <= params.gamma {
        return Err(QualityError::TargetBelowFloor {
            target: target_mos,
            floor: params.gamma,
        });
    }
    if target_mos > 5.0 {
        return Err(QualityError::TargetAboveCeiling(target_mos));
    }
    let raw = ((target_mos - params.gamma) / params.alpha).ln() / params.beta - p_n;
    Ok(LossBudget {
        p_l: raw.clamp(0.0, 1.0),
        exhausted: raw < 0.0,
    })
}

/// Distribution of call quality in a network, as `(mos, probability)` bins.
/// Bins are kept sorted; duplicate bin values are merged.
#[derive(Debug, Clone, PartialEq)]
pub struct MosHistogram {
    bins: Vec<(f64, f64)>,
}

impl MosHistogram {
    pub fn new(mut bins: Vec<(f64, f64)>) -> Result<Self, QualityError> {
        if bins.is_empty() {
            return Err(QualityError::EmptyHistogram);
        }
        let mut sum = 0.0;
        for &(mos, p) in &bins {
            if !(1.0..=5.0).contains(&mos) {
                return Err(QualityError::BinOutOfScale(mos));
            }
            if !p.is_finite() || p < 0.0 {
                return Err(QualityError::InvalidBinProbability { bin: mos, value: p });
            }
            sum += p;
        }
        if (sum - 1.0).abs() > 1e-9 {
            return Err(QualityError::Unnormalized(sum));
        }
        bins.sort_by(|a, b| a.0.total_cmp(&b.0));
        bins.dedup_by(|hi, lo| {
            if hi.0 == lo.0 {
                lo.1 += hi.1;
                true
            } else {
                false
            }
        });
        Ok(Self { bins })
    }

    /// Reads a two-column `mos_bin,probability` CSV (with header).
    pub fn from_reader(reader: impl Read) -> Result<Self, QualityError> {
        let mut rdr = csv::Reader::from_reader(reader);
        let mut bins = Vec::new();
        for record in rdr.records() {
            let record = record?;
            let line = record.position().map(|p| p.line()).unwrap_or(0);
            let parse = |field: &'static str, idx: usize| -> Result<f64, QualityError> {
                let raw = record.get(idx).unwrap_or("");
                raw.trim()
                    .parse::<f64>()
                    .map_err(|_| QualityError::BadCsvField { field, line, value: raw.to_owned() })
            };
            bins.push((parse("mos_bin", 0)?, parse("probability", 1)?));
        }
        Self::new(bins)
    }

    pub fn bins(&self) -> &[(f64, f64)] {
        &self.bins
    }

    /// Right-continuous tail `P(MOS > m)`: probability strictly above `m`.
    pub fn tail_probability(&self, m: f64) -> f64 {
        self.bins.iter().filter(|&&(mos, _)| mos > m).map(|&(_, p)| p).sum()
    }

    /// Strictest (highest) bin value whose tail still exceeds `eta`. Bins
    /// with zero mass tie on tail probability with the mass-carrying bin
    /// below them; scanning from the top resolves ties toward the stricter
    /// target, matching the strict inequality in the selection rule.
    pub fn target_for_eta(&self, eta: f64) -> Result<f64, QualityError> {
        if !eta.is_finite() || eta <= 0.0 || eta >= 1.0 {
            return Err(QualityError::InvalidEta(eta));
        }
        self.bins
            .iter()
            .rev()
            .map(|&(mos, _)| mos)
            .find(|&mos| self.tail_probability(mos) > eta)
            .ok_or(QualityError::EtaUnreachable(eta))
    }
}

/// A quality-derived insertion-rate cap and how it was obtained.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StaticCap {
    /// Quality target selected from the histogram.
    pub mos_target: f64,
    pub budget: LossBudget,
    /// Cap in bits per second: `p_l * N_p * P_p`.
    pub irq_bps: f64,
}

/// Static cap: pick the quality target that a fraction `eta` of ordinary
/// calls exceeds, convert the remaining quality headroom into a loss budget,
/// and scale by the codec's channel rate.
pub fn irq_static(
    histogram: &MosHistogram,
    eta: f64,
    params: &MosParams,
    p_n: f64,
    codec: &CodecProfile,
) -> Result<StaticCap, QualityError> {
    let mos_target = histogram.target_for_eta(eta)?;
    let budget = loss_budget_for_mos(params, mos_target, p_n)?;
    Ok(StaticCap {
        mos_target,
        budget,
        irq_bps: budget.p_l * codec.channel_rate_bps(),
    })
}

/// Dynamic cap from a live quality estimate: zero whenever the estimate sits
/// below the configured floor, otherwise the loss level implied by the
/// estimate minus the network's own share, scaled to bits per second.
pub fn irq_dynamic(
    params: &MosParams,
    mos_estimate: f64,
    mos_floor: f64,
    p_n: f64,
    codec: &CodecProfile,
) -> Result<f64, QualityError> {
    if !(0.0..=1.0).contains(&p_n) {
        return Err(QualityError::InvalidProbability { name: "p_n", value: p_n });
    }
    if mos_floor <= params.gamma {
        return Err(QualityError::TargetBelowFloor {
            target: mos_floor,
            floor: params.gamma,
        });
    }
    if mos_estimate < mos_floor {
        return Ok(0.0);
    }
    let headroom = ((mos_estimate - params.gamma) / params.alpha).ln() / params.beta - p_n;
    Ok(headroom.max(0.0) * codec.channel_rate_bps())
}

/// Quality regained by lowering the insertion rate from `ir_initial` by `x`
/// bits per second (both expressed at the codec's channel rate):
/// `alpha * exp(beta (p_n + p0)) * (exp(-beta x/(N_p P_p)) - 1)` with
/// `p0 = ir_initial / (N_p P_p)`.
///
/// At `x = ir_initial` this equals `delta_mos(p_n, p0)` exactly: giving the
/// whole rate back recovers the whole quality drop.
pub fn mos_gain(
    params: &MosParams,
    p_n: f64,
    ir_initial_bps: f64,
    x_bps: f64,
    codec: &CodecProfile,
) -> Result<f64, QualityError> {
    if !(0.0..=1.0).contains(&p_n) {
        return Err(QualityError::InvalidProbability { name: "p_n", value: p_n });
    }
    if !ir_initial_bps.is_finite() || ir_initial_bps < 0.0 {
        return Err(QualityError::InvalidRate(ir_initial_bps));
    }
    if !x_bps.is_finite() || x_bps < 0.0 || x_bps > ir_initial_bps {
        return Err(QualityError::InvalidRate(x_bps));
    }
    let channel = codec.channel_rate_bps();
    let p0 = ir_initial_bps / channel;
    let reduction = x_bps / channel;
    Ok(params.alpha
        * (params.beta * (p_n + p0)).exp()
        * ((-params.beta * reduction).exp() - 1.0))
}
