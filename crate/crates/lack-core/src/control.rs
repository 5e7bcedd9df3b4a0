//! Insertion-rate controllers.
//!
//! A sender with `S` covert bits to move during a call of random duration
//! has to pick an insertion rate. Sending flat-out early is conspicuous,
//! sending too slowly risks the call ending first. The controllers here
//! spread the remaining payload `S_R(t)` over an estimate of the time still
//! available:
//!
//! * [`ControllerMode::ResidualMean`] divides by the expected remaining
//!   call time `E(D | D > t) - t`, which keeps the expected completion at
//!   the mean end of the call.
//! * [`ControllerMode::Quantile`] divides by `T_xi(t) - t`, the time left
//!   until the call survives only with probability `xi`. This front-loads
//!   transmission and completes with probability at least `1 - xi` under
//!   the model.
//! * [`ControllerMode::Constant`] ignores the clock entirely.
//!
//! Rates are integrated with an explicit Euler step: each tick the planned
//! rate is computed from the current state, optionally clipped by a quality
//! cap, and `S_R` is decremented by what was actually sent. Bits denied by
//! the cap accumulate as arrears and are drained once headroom returns.

use thiserror::Error;

use crate::duration::{DurationError, WeibullModel};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControlError {
    #[error("constant rate must be finite and >= 0, got {0} b/s")]
    InvalidRate(f64),
    #[error("quantile level must lie strictly inside (0, 1), got {0}")]
    InvalidXi(f64),
    #[error("steganogram size must be finite and >= 0, got {0} bits")]
    InvalidSize(f64),
    #[error("step width must be finite and > 0, got {0} s")]
    InvalidStep(f64),
    #[error("rate cap must be >= 0 (may be infinite), got {0}")]
    InvalidCap(f64),
    #[error("controller mode needs a call-duration model but none was supplied")]
    MissingModel,
    #[error(transparent)]
    Duration(#[from] DurationError),
}

/// Strategy for choosing the insertion rate from the controller state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ControllerMode {
    /// Fixed rate in bits per second, regardless of elapsed time.
    Constant { rate_bps: f64 },
    /// Remaining bits over the expected remaining call time.
    ResidualMean,
    /// Remaining bits over the time to the `xi`-survival horizon.
    Quantile { xi: f64 },
}

impl ControllerMode {
    fn validate(&self) -> Result<(), ControlError> {
        match *self {
            ControllerMode::Constant { rate_bps } => {
                if !rate_bps.is_finite() || rate_bps < 0.0 {
                    return Err(ControlError::InvalidRate(rate_bps));
                }
            }
            ControllerMode::ResidualMean => {}
            ControllerMode::Quantile { xi } => {
                if !(xi > 0.0 && xi < 1.0) {
                    return Err(ControlError::InvalidXi(xi));
                }
            }
        }
        Ok(())
    }
}

/// How the residual-mean controller turns `E(D | D > t)` into a divisor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DenominatorMode {
    /// Expected time still ahead, `E(D | D > t) - t`. The usual choice: the
    /// payload is spread over the time the call is actually expected to last.
    #[default]
    MeanResidual,
    /// Full conditional mean `E(D | D > t)`. A deliberately conservative
    /// variant that undershoots, useful as a lower envelope.
    FullConditional,
}

/// Outcome of one controller tick.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateDecision {
    /// Rate the mode asked for before any cap.
    pub ir_raw_bps: f64,
    /// Rate actually sent this tick (cap applied, arrears drain included).
    pub ir_sent_bps: f64,
    /// Cap in force during this tick.
    pub irq_bps: f64,
    /// Whether the cap clipped the raw rate.
    pub cap_active: bool,
    /// Backlog of bits the cap has denied so far.
    pub arrears_bits: f64,
}

/// Rate the given mode would plan at time `t` with `s_remaining` bits left.
///
/// This is the pure decision function behind [`RateController::step`];
/// exposing it separately makes the schedules easy to tabulate.
pub fn planned_rate(
    mode: &ControllerMode,
    denominator: DenominatorMode,
    model: Option<&WeibullModel>,
    t: f64,
    s_remaining: f64,
) -> Result<f64, ControlError> {
    mode.validate()?;
    if s_remaining <= 0.0 {
        return Ok(0.0);
    }
    match *mode {
        ControllerMode::Constant { rate_bps } => Ok(rate_bps),
        ControllerMode::ResidualMean => {
            let model = model.ok_or(ControlError::MissingModel)?;
            let conditional = model.conditional_mean_remaining(t)?;
            let divisor = match denominator {
                DenominatorMode::MeanResidual => conditional - t,
                DenominatorMode::FullConditional => conditional,
            };
            Ok(s_remaining / divisor)
        }
        ControllerMode::Quantile { xi } => {
            let model = model.ok_or(ControlError::MissingModel)?;
            let horizon = model.quantile_horizon(t, xi)?;
            let divisor = horizon - t;
            if divisor <= 0.0 {
                // Horizon collapsed onto the present (only possible through
                // rounding at extreme arguments): send everything now.
                Ok(f64::INFINITY)
            } else {
                Ok(s_remaining / divisor)
            }
        }
    }
}

/// Rate at which a backlog frozen at time `t` is drained: the backlog spread
/// over the conditional mean call duration at the moment draining starts.
pub fn arrears_drain_rate(
    arrears_bits: f64,
    model: &WeibullModel,
    t: f64,
) -> Result<f64, ControlError> {
    if !arrears_bits.is_finite() || arrears_bits < 0.0 {
        return Err(ControlError::InvalidSize(arrears_bits));
    }
    Ok(arrears_bits / model.conditional_mean_remaining(t)?)
}

/// Stateful insertion-rate controller stepped once per tick.
#[derive(Debug, Clone)]
pub struct RateController {
    mode: ControllerMode,
    denominator: DenominatorMode,
    s_total: f64,
    s_remaining: f64,
    arrears: f64,
    elapsed: f64,
    drain_rate: Option<f64>,
}

impl RateController {
    pub fn new(
        mode: ControllerMode,
        denominator: DenominatorMode,
        s_total_bits: f64,
    ) -> Result<Self, ControlError> {
        mode.validate()?;
        if !s_total_bits.is_finite() || s_total_bits < 0.0 {
            return Err(ControlError::InvalidSize(s_total_bits));
        }
        Ok(Self {
            mode,
            denominator,
            s_total: s_total_bits,
            s_remaining: s_total_bits,
            arrears: 0.0,
            elapsed: 0.0,
            drain_rate: None,
        })
    }

    pub fn mode(&self) -> &ControllerMode {
        &self.mode
    }

    pub fn total_bits(&self) -> f64 {
        self.s_total
    }

    pub fn remaining_bits(&self) -> f64 {
        self.s_remaining
    }

    pub fn arrears_bits(&self) -> f64 {
        self.arrears
    }

    pub fn elapsed_s(&self) -> f64 {
        self.elapsed
    }

    /// Overrides the internal backlog estimate, e.g. to re-synchronize the
    /// controller with the bits a simulator has actually delivered.
    pub fn set_remaining(&mut self, bits: f64) -> Result<(), ControlError> {
        if !bits.is_finite() || bits < 0.0 {
            return Err(ControlError::InvalidSize(bits));
        }
        self.s_remaining = bits;
        Ok(())
    }

    /// Advances the controller by `dt` seconds under the rate cap `irq_bps`
    /// (pass `f64::INFINITY` for an uncapped tick) and returns what was sent.
    ///
    /// While the cap clips the planned rate the shortfall accrues as
    /// arrears. When headroom returns the backlog is drained at a rate
    /// frozen at that moment (see [`arrears_drain_rate`]), never exceeding
    /// the cap.
    pub fn step(
        &mut self,
        model: Option<&WeibullModel>,
        dt: f64,
        irq_bps: f64,
    ) -> Result<RateDecision, ControlError> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(ControlError::InvalidStep(dt));
        }
        if irq_bps.is_nan() || irq_bps < 0.0 {
            return Err(ControlError::InvalidCap(irq_bps));
        }
        let raw = planned_rate(
            &self.mode,
            self.denominator,
            model,
            self.elapsed,
            self.s_remaining,
        )?;
        let cap_active = raw > irq_bps;
        let mut sent = raw.min(irq_bps);
        if cap_active {
            self.arrears += (raw - irq_bps) * dt;
            // A new clipping episode invalidates any previously frozen
            // drain schedule.
            self.drain_rate = None;
        } else if self.arrears > 0.0 {
            if self.drain_rate.is_none() {
                self.drain_rate = Some(match model {
                    Some(m) => arrears_drain_rate(self.arrears, m, self.elapsed)?,
                    // Without a duration model there is no horizon to spread
                    // the backlog over; use whatever headroom the cap leaves.
                    None => f64::INFINITY,
                });
            }
            let headroom = irq_bps - sent;
            let drain = self
                .drain_rate
                .unwrap_or(0.0)
                .min(headroom)
                .min(self.arrears / dt);
            sent += drain;
            self.arrears = (self.arrears - drain * dt).max(0.0);
            if self.arrears == 0.0 {
                self.drain_rate = None;
            }
        }
        // Never send more than is left to send.
        sent = sent.min(self.s_remaining / dt);
        self.s_remaining = (self.s_remaining - sent * dt).max(0.0);
        self.elapsed += dt;
        Ok(RateDecision {
            ir_raw_bps: raw,
            ir_sent_bps: sent,
            irq_bps,
            cap_active,
            arrears_bits: self.arrears,
        })
    }
}

/// Rate needed to move `s_bits` in exactly `duration_s` seconds.
pub fn constant_rate(s_bits: f64, duration_s: f64) -> Result<f64, ControlError> {
    if !s_bits.is_finite() || s_bits < 0.0 {
        return Err(ControlError::InvalidSize(s_bits));
    }
    if !(duration_s.is_finite() && duration_s > 0.0) {
        return Err(ControlError::InvalidStep(duration_s));
    }
    Ok(s_bits / duration_s)
}

/// Seconds a constant `rate_bps` takes to move `s_bits`.
pub fn time_to_complete(s_bits: f64, rate_bps: f64) -> Result<f64, ControlError> {
    if !s_bits.is_finite() || s_bits < 0.0 {
        return Err(ControlError::InvalidSize(s_bits));
    }
    if !(rate_bps.is_finite() && rate_bps > 0.0) {
        return Err(ControlError::InvalidRate(rate_bps));
    }
    Ok(s_bits / rate_bps)
}

/// Rate-reduction summary of a sampled schedule `(t, ir)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GainMetrics {
    /// Rate at the first sample.
    pub initial_rate_bps: f64,
    /// Reduction at the last sample, `IR(t_0) - IR(t_end)`.
    pub final_reduction_bps: f64,
    /// Trapezoid integral of the reduction over the sampled span, in bits.
    pub cumulative_reduction_bits: f64,
}

/// Summarizes how far a schedule has backed off from its initial rate.
pub fn gain_metrics(samples: &[(f64, f64)]) -> Option<GainMetrics> {
    let (first, rest) = samples.split_first()?;
    let initial = first.1;
    let mut cumulative = 0.0;
    let mut prev = *first;
    for &(t, ir) in rest {
        let x_prev = initial - prev.1;
        let x_here = initial - ir;
        cumulative += 0.5 * (x_prev + x_here) * (t - prev.0);
        prev = (t, ir);
    }
    Some(GainMetrics {
        initial_rate_bps: initial,
        final_reduction_bps: initial - prev.1,
        cumulative_reduction_bits: cumulative,
    })
}

/// Which schedule is ahead at a sample point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dominance {
    Quantile,
    Residual,
    /// Rates agree to within relative 1e-9 (e.g. two identical schedules).
    Tie,
}

/// One time point of a residual-mean versus quantile schedule comparison.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComparisonSample {
    pub t_s: f64,
    pub ir_residual_bps: f64,
    pub ir_quantile_bps: f64,
    pub dominance: Dominance,
}

/// Side-by-side run of the two adaptive controllers from the same payload.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerComparison {
    pub samples: Vec<ComparisonSample>,
    /// First time the two schedules swap order, located by linear
    /// interpolation between the bracketing ticks. `None` when one schedule
    /// dominates throughout (or they coincide).
    pub crossing_s: Option<f64>,
    /// Whether the quantile schedule starts above the residual-mean one.
    pub quantile_leads_initially: bool,
}

// Rate differences below this relative size count as a tie rather than a
// dominance flip, so numerically coincident schedules report no crossing.
const TIE_REL_TOL: f64 = 1e-9;

fn rate_difference(residual: f64, quantile: f64) -> f64 {
    let d = quantile - residual;
    if d.abs() <= TIE_REL_TOL * residual.abs().max(quantile.abs()) {
        0.0
    } else {
        d
    }
}

/// Runs both adaptive controllers uncapped over `[0, horizon_s]` with Euler
/// step `dt` and locates where their schedules cross.
pub fn compare_controllers(
    model: &WeibullModel,
    s_bits: f64,
    xi: f64,
    horizon_s: f64,
    dt: f64,
) -> Result<ControllerComparison, ControlError> {
    if !(horizon_s.is_finite() && horizon_s > 0.0) {
        return Err(ControlError::InvalidStep(horizon_s));
    }
    let mut residual =
        RateController::new(ControllerMode::ResidualMean, DenominatorMode::MeanResidual, s_bits)?;
    let mut quantile = RateController::new(
        ControllerMode::Quantile { xi },
        DenominatorMode::MeanResidual,
        s_bits,
    )?;
    let steps = (horizon_s / dt).round() as usize;
    let mut samples = Vec::with_capacity(steps + 1);
    let mut crossing = None;
    let mut prev: Option<(f64, f64)> = None;
    for i in 0..=steps {
        let t = i as f64 * dt;
        let ir_residual = planned_rate(
            &ControllerMode::ResidualMean,
            DenominatorMode::MeanResidual,
            Some(model),
            t,
            residual.remaining_bits(),
        )?;
        let ir_quantile = planned_rate(
            &ControllerMode::Quantile { xi },
            DenominatorMode::MeanResidual,
            Some(model),
            t,
            quantile.remaining_bits(),
        )?;
        let d = rate_difference(ir_residual, ir_quantile);
        let dominance = if d == 0.0 {
            Dominance::Tie
        } else if d > 0.0 {
            Dominance::Quantile
        } else {
            Dominance::Residual
        };
        if crossing.is_none() {
            if let Some((t_prev, d_prev)) = prev {
                if d_prev != 0.0 && d != 0.0 && d_prev.signum() != d.signum() {
                    let frac = d_prev / (d_prev - d);
                    crossing = Some(t_prev + frac * dt);
                }
            }
        }
        samples.push(ComparisonSample {
            t_s: t,
            ir_residual_bps: ir_residual,
            ir_quantile_bps: ir_quantile,
            dominance,
        });
        prev = Some((t, d));
        if i < steps {
            residual.step(Some(model), dt, f64::INFINITY)?;
            quantile.step(Some(model), dt, f64::INFINITY)?;
        }
    }
    let quantile_leads_initially = samples
        .first()
        .map(|s| s.dominance == Dominance::Quantile)
        .unwrap_or(false);
    Ok(ControllerComparison { samples, crossing_s: crossing, quantile_leads_initially })
}

/// Continuous-limit schedule of a depleting controller, tabulated on a
/// uniform grid over `[0, horizon_s]`.
///
/// The adaptive modes plan `IR(t) = S_R(t) / denom(t)` while the remaining
/// payload drains at exactly that rate, so the exact trajectory is
/// `S_R(t) = S exp(-integral of 1/denom over [0, t])`. The integral is
/// accumulated with Simpson's rule per emitted panel, which avoids the
/// O(step) bias an Euler pass would carry at coarse tabulation steps. The
/// constant mode holds its rate until the payload runs out.
pub fn analytic_schedule(
    mode: &ControllerMode,
    denominator: DenominatorMode,
    model: Option<&WeibullModel>,
    s_bits: f64,
    horizon_s: f64,
    step_s: f64,
) -> Result<Vec<(f64, f64)>, ControlError> {
    mode.validate()?;
    if !s_bits.is_finite() || s_bits < 0.0 {
        return Err(ControlError::InvalidSize(s_bits));
    }
    if !(horizon_s.is_finite() && horizon_s >= 0.0) {
        return Err(ControlError::InvalidStep(horizon_s));
    }
    if !(step_s.is_finite() && step_s > 0.0) {
        return Err(ControlError::InvalidStep(step_s));
    }
    let steps = (horizon_s / step_s).round() as usize;
    if let ControllerMode::Constant { rate_bps } = *mode {
        let exhausted_at = if rate_bps > 0.0 { s_bits / rate_bps } else { f64::INFINITY };
        return Ok((0..=steps)
            .map(|i| {
                let t = i as f64 * step_s;
                (t, if t < exhausted_at { rate_bps } else { 0.0 })
            })
            .collect());
    }
    // The planned rate is linear in the remaining payload for the adaptive
    // modes, so the depletion hazard 1/denom(t) is the planned rate of a
    // single bit.
    let hazard = |t: f64| planned_rate(mode, denominator, model, t, 1.0);
    let mut out = Vec::with_capacity(steps + 1);
    let mut remaining = s_bits;
    let mut h_left = hazard(0.0)?;
    out.push((0.0, remaining * h_left));
    for i in 0..steps {
        let t0 = i as f64 * step_s;
        let t1 = (i + 1) as f64 * step_s;
        let h_mid = hazard(0.5 * (t0 + t1))?;
        let h_right = hazard(t1)?;
        let panel = step_s / 6.0 * (h_left + 4.0 * h_mid + h_right);
        remaining *= (-panel).exp();
        out.push((t1, remaining * h_right));
        h_left = h_right;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::duration::{calibrate_scale, REFERENCE_MEAN_CALL_SECONDS, REFERENCE_SHAPES};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn model(shape: f64) -> WeibullModel {
        calibrate_scale(shape, REFERENCE_MEAN_CALL_SECONDS).unwrap()
    }

    #[test]
    fn initial_rate_is_payload_over_mean_for_every_shape() {
        for &shape in &REFERENCE_SHAPES {
            let m = model(shape);
            let rate = planned_rate(
                &ControllerMode::ResidualMean,
                DenominatorMode::MeanResidual,
                Some(&m),
                0.0,
                1000.0,
            )
            .unwrap();
            assert_relative_eq!(rate, 1000.0 / REFERENCE_MEAN_CALL_SECONDS, max_relative = 1e-8);
            assert_relative_eq!(rate, 8.52442, max_relative = 1e-5);
        }
    }

    #[test]
    fn residual_mean_matches_exponential_decay_oracle() {
        // Memoryless durations give E(D | D > t) - t = E(D), so the Euler
        // recursion tracks IR(t) = IR(0) exp(-t / E(D)).
        let m = model(1.0);
        let mean = REFERENCE_MEAN_CALL_SECONDS;
        let dt = 0.01;
        let mut ctl =
            RateController::new(ControllerMode::ResidualMean, DenominatorMode::MeanResidual, 1000.0)
                .unwrap();
        let steps = (mean / dt).round() as usize;
        let mut last = 0.0;
        for _ in 0..steps {
            last = ctl.step(Some(&m), dt, f64::INFINITY).unwrap().ir_raw_bps;
        }
        let expected = 1000.0 / mean * (-(mean - dt) / mean).exp();
        assert_relative_eq!(last, expected, max_relative = 1e-3);
        assert_relative_eq!(last, 3.13623, max_relative = 1e-4);
    }

    #[test]
    fn halving_the_step_at_least_halves_the_oracle_error() {
        // First-order convergence, measured as max |ln(IR_disc / IR_exact)|.
        // The log metric is the scale-invariant deviation for exponential
        // decays and is exactly linear in dt to leading order.
        let m = model(1.0);
        let xi = 0.9f64;
        let c = -REFERENCE_MEAN_CALL_SECONDS * xi.ln();
        let horizon = 37.2; // near 3c, divisible by both step widths
        let err_at = |dt: f64| -> f64 {
            let mut ctl = RateController::new(
                ControllerMode::Quantile { xi },
                DenominatorMode::MeanResidual,
                1000.0,
            )
            .unwrap();
            let steps = (horizon / dt).round() as usize;
            let mut worst: f64 = 0.0;
            for i in 0..steps {
                let t = i as f64 * dt;
                let got = ctl.step(Some(&m), dt, f64::INFINITY).unwrap().ir_raw_bps;
                let exact = 1000.0 / c * (-t / c).exp();
                worst = worst.max((got / exact).ln().abs());
            }
            worst
        };
        let coarse = err_at(0.2);
        let fine = err_at(0.1);
        assert!(fine <= coarse / 2.0, "coarse {coarse}, fine {fine}");
    }

    #[test]
    fn quantile_rate_frozen_point() {
        // Memoryless horizon: T_xi(t) - t = -lambda ln(xi) at every t.
        let m = model(1.0);
        let rate = planned_rate(
            &ControllerMode::Quantile { xi: 0.9 },
            DenominatorMode::MeanResidual,
            Some(&m),
            60.0,
            1000.0,
        )
        .unwrap();
        let expected = 1000.0 / (-REFERENCE_MEAN_CALL_SECONDS * 0.9f64.ln());
        assert_relative_eq!(rate, expected, max_relative = 1e-12);
        assert_relative_eq!(rate, 80.9072, max_relative = 1e-5);
    }

    #[test]
    fn quantile_controller_matches_exponential_oracle() {
        // For memoryless durations the divisor c = -lambda ln(xi) is
        // constant, so IR(t) = (S / c) exp(-t / c).
        let m = model(1.0);
        let xi = 0.8f64;
        let c = -REFERENCE_MEAN_CALL_SECONDS * xi.ln();
        let dt = 0.1;
        let mut ctl = RateController::new(
            ControllerMode::Quantile { xi },
            DenominatorMode::MeanResidual,
            1000.0,
        )
        .unwrap();
        let steps = (3.0 * c / dt).round() as usize;
        let mut worst: f64 = 0.0;
        for i in 0..steps {
            let t = i as f64 * dt;
            let got = ctl.step(Some(&m), dt, f64::INFINITY).unwrap().ir_raw_bps;
            let exact = 1000.0 / c * (-t / c).exp();
            worst = worst.max((got - exact).abs() / exact);
        }
        assert!(worst < 0.01, "worst relative deviation {worst}");
    }

    #[test]
    fn schedules_cross_where_the_closed_form_says() {
        // Memoryless case: both schedules decay exponentially and swap order
        // at t = ln(E / c) / (1/c - 1/E).
        let m = model(1.0);
        let mean = REFERENCE_MEAN_CALL_SECONDS;
        let c = -mean * 0.9f64.ln();
        let expected = (mean / c).ln() / (1.0 / c - 1.0 / mean);
        let cmp = compare_controllers(&m, 1000.0, 0.9, 60.0, 0.001).unwrap();
        assert!(cmp.quantile_leads_initially);
        let crossing = cmp.crossing_s.expect("schedules must cross");
        assert_relative_eq!(crossing, expected, max_relative = 2e-3);
        assert_relative_eq!(crossing, 31.090, max_relative = 1e-3);
        // dominance flips from quantile to residual-mean at the crossing
        assert_eq!(cmp.samples.first().unwrap().dominance, Dominance::Quantile);
        assert_eq!(cmp.samples.last().unwrap().dominance, Dominance::Residual);
    }

    #[test]
    fn coincident_schedules_report_ties_and_no_crossing() {
        // With memoryless durations and xi = 1/e both divisors equal the
        // mean, so the two controllers follow the same schedule.
        let m = model(1.0);
        let xi = (-1.0f64).exp();
        let cmp = compare_controllers(&m, 1000.0, xi, 60.0, 0.1).unwrap();
        assert!(cmp.crossing_s.is_none());
        assert!(!cmp.quantile_leads_initially);
        assert!(cmp.samples.iter().all(|s| s.dominance == Dominance::Tie));
    }

    #[test]
    fn heavy_tail_schedule_decreases_throughout() {
        // For a heavy-tailed model both the shrinking payload and the
        // growing mean residual life push the planned rate down.
        let m = model(0.5);
        let mut ctl =
            RateController::new(ControllerMode::ResidualMean, DenominatorMode::MeanResidual, 1000.0)
                .unwrap();
        let dt = 0.5;
        let mut prev = f64::INFINITY;
        for _ in 0..1200 {
            let raw = ctl.step(Some(&m), dt, f64::INFINITY).unwrap().ir_raw_bps;
            assert!(raw < prev, "rate rose from {prev} to {raw}");
            prev = raw;
        }
    }

    #[test]
    fn heavy_tail_front_loads_the_quantile_schedule() {
        let m = model(0.5);
        let horizon = m.quantile_horizon(0.0, 0.8).unwrap();
        assert_relative_eq!(horizon, 2.92061, max_relative = 1e-5);
        let quantile = planned_rate(
            &ControllerMode::Quantile { xi: 0.8 },
            DenominatorMode::MeanResidual,
            Some(&m),
            0.0,
            1000.0,
        )
        .unwrap();
        let residual = planned_rate(
            &ControllerMode::ResidualMean,
            DenominatorMode::MeanResidual,
            Some(&m),
            0.0,
            1000.0,
        )
        .unwrap();
        let ratio = quantile / residual;
        assert!(ratio > 10.0, "ratio {ratio}");
        assert_relative_eq!(ratio, REFERENCE_MEAN_CALL_SECONDS / horizon, max_relative = 1e-9);
        assert_relative_eq!(ratio, 40.166, max_relative = 1e-4);
    }

    #[test]
    fn cap_builds_arrears_and_drains_them_at_the_frozen_rate() {
        let m = model(1.0);
        let dt = 0.1;
        let mut ctl =
            RateController::new(ControllerMode::ResidualMean, DenominatorMode::MeanResidual, 1000.0)
                .unwrap();
        // clip well below the initial 8.52 b/s plan for 20 s
        for _ in 0..200 {
            let d = ctl.step(Some(&m), dt, 4.0).unwrap();
            assert!(d.cap_active);
            assert!(d.ir_sent_bps <= 4.0 + 1e-12);
        }
        let backlog = ctl.arrears_bits();
        assert!(backlog > 0.0);
        // lift the cap: the first free tick freezes the drain schedule
        let t_free = ctl.elapsed_s();
        let frozen = arrears_drain_rate(backlog, &m, t_free).unwrap();
        let d = ctl.step(Some(&m), dt, f64::INFINITY).unwrap();
        assert_relative_eq!(d.ir_sent_bps - d.ir_raw_bps, frozen, max_relative = 1e-9);
        assert!(d.arrears_bits < backlog);
        // backlog keeps shrinking while headroom lasts
        let d2 = ctl.step(Some(&m), dt, f64::INFINITY).unwrap();
        assert!(d2.arrears_bits < d.arrears_bits);
    }

    #[test]
    fn drain_rate_frozen_point() {
        // Backlog of 200 bits released at t = 100 s under memoryless
        // durations: 200 / (100 + 117.31).
        let m = model(1.0);
        let rate = arrears_drain_rate(200.0, &m, 100.0).unwrap();
        assert_relative_eq!(rate, 200.0 / 217.31, max_relative = 1e-8);
        assert_relative_eq!(rate, 0.920344, max_relative = 1e-5);
    }

    #[test]
    fn uncapped_run_never_accrues_arrears() {
        let m = model(2.0);
        let mut ctl =
            RateController::new(ControllerMode::ResidualMean, DenominatorMode::MeanResidual, 500.0)
                .unwrap();
        for _ in 0..300 {
            let d = ctl.step(Some(&m), 0.1, f64::INFINITY).unwrap();
            assert_eq!(d.arrears_bits, 0.0);
            assert!(!d.cap_active);
        }
    }

    #[test]
    fn sent_bits_and_remaining_bits_are_conserved() {
        let m = model(1.2);
        let dt = 0.05;
        let mut ctl =
            RateController::new(ControllerMode::ResidualMean, DenominatorMode::MeanResidual, 800.0)
                .unwrap();
        let mut sent = 0.0;
        for i in 0..2000 {
            // alternate capped and uncapped stretches
            let irq = if (i / 400) % 2 == 0 { 3.0 } else { f64::INFINITY };
            let d = ctl.step(Some(&m), dt, irq).unwrap();
            sent += d.ir_sent_bps * dt;
        }
        assert_relative_eq!(sent + ctl.remaining_bits(), 800.0, max_relative = 1e-9);
    }

    #[test]
    fn constant_mode_completes_on_schedule() {
        let needed = time_to_complete(1000.0, 320.0).unwrap();
        assert_eq!(needed, 3.125);
        assert_eq!(constant_rate(1000.0, 3.125).unwrap(), 320.0);
        let mut ctl = RateController::new(
            ControllerMode::Constant { rate_bps: 320.0 },
            DenominatorMode::MeanResidual,
            1000.0,
        )
        .unwrap();
        let dt = 0.005;
        let mut t = 0.0;
        while ctl.remaining_bits() > 0.0 {
            ctl.step(None, dt, f64::INFINITY).unwrap();
            t += dt;
            assert!(t < 10.0, "constant schedule failed to finish");
        }
        assert_relative_eq!(t, needed, epsilon = dt);
    }

    #[test]
    fn reduction_metrics_match_the_memoryless_closed_form() {
        // IR(t) = IR(0) exp(-t / E): the reduction at t = E is
        // IR(0)(1 - 1/e) and its integral over [0, E] is S / e.
        let mean = REFERENCE_MEAN_CALL_SECONDS;
        let ir0 = 1000.0 / mean;
        let dt = 0.01;
        let steps = (mean / dt).round() as usize;
        let samples: Vec<(f64, f64)> = (0..=steps)
            .map(|i| {
                let t = i as f64 * dt;
                (t, ir0 * (-t / mean).exp())
            })
            .collect();
        let g = gain_metrics(&samples).unwrap();
        assert_relative_eq!(g.initial_rate_bps, ir0, max_relative = 1e-12);
        assert_relative_eq!(
            g.final_reduction_bps,
            ir0 * (1.0 - (-1.0f64).exp()),
            max_relative = 1e-9
        );
        assert_relative_eq!(g.final_reduction_bps, 5.38846, max_relative = 1e-5);
        assert_relative_eq!(
            g.cumulative_reduction_bits,
            1000.0 * (-1.0f64).exp(),
            max_relative = 1e-6
        );
        assert_relative_eq!(g.cumulative_reduction_bits, 367.879, max_relative = 1e-5);
        // a flat schedule shows no reduction at all
        let flat = gain_metrics(&[(0.0, 5.0), (10.0, 5.0), (20.0, 5.0)]).unwrap();
        assert_eq!(flat.final_reduction_bps, 0.0);
        assert_eq!(flat.cumulative_reduction_bits, 0.0);
    }

    #[test]
    fn invalid_parameters_are_rejected() {
        assert!(matches!(
            RateController::new(
                ControllerMode::Quantile { xi: 1.0 },
                DenominatorMode::MeanResidual,
                10.0
            ),
            Err(ControlError::InvalidXi(_))
        ));
        assert!(matches!(
            RateController::new(
                ControllerMode::Constant { rate_bps: -1.0 },
                DenominatorMode::MeanResidual,
                10.0
            ),
            Err(ControlError::InvalidRate(_))
        ));
        assert!(matches!(
            RateController::new(ControllerMode::ResidualMean, DenominatorMode::MeanResidual, f64::NAN),
            Err(ControlError::InvalidSize(_))
        ));
        let mut ok =
            RateController::new(ControllerMode::ResidualMean, DenominatorMode::MeanResidual, 10.0)
                .unwrap();
        assert!(matches!(ok.step(None, 0.1, 1.0), Err(ControlError::MissingModel)));
        assert!(matches!(
            ok.step(Some(&model(1.0)), 0.0, 1.0),
            Err(ControlError::InvalidStep(_))
        ));
        assert!(matches!(
            ok.step(Some(&model(1.0)), 0.1, -2.0),
            Err(ControlError::InvalidCap(_))
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn state_stays_physical(
            shape in prop::sample::select(vec![0.5f64, 1.0, 2.0]),
            s in 10.0f64..5000.0,
            irq in 1.0f64..50.0,
            dt in 0.01f64..0.5,
        ) {
            let m = model(shape);
            let mut ctl = RateController::new(
                ControllerMode::ResidualMean,
                DenominatorMode::MeanResidual,
                s,
            ).unwrap();
            for _ in 0..200 {
                let d = ctl.step(Some(&m), dt, irq).unwrap();
                prop_assert!(d.ir_sent_bps >= 0.0);
                prop_assert!(d.ir_sent_bps <= irq + 1e-9);
                prop_assert!(ctl.remaining_bits() >= 0.0);
                prop_assert!(ctl.arrears_bits() >= 0.0);
            }
        }

        #[test]
        fn quantile_divisor_shrinks_rate_with_xi(
            xi_low in 0.5f64..0.7,
            xi_high in 0.8f64..0.95,
        ) {
            let m = model(2.0);
            let low = planned_rate(
                &ControllerMode::Quantile { xi: xi_low },
                DenominatorMode::MeanResidual,
                Some(&m), 30.0, 100.0,
            ).unwrap();
            let high = planned_rate(
                &ControllerMode::Quantile { xi: xi_high },
                DenominatorMode::MeanResidual,
                Some(&m), 30.0, 100.0,
            ).unwrap();
            // larger xi means a nearer horizon, hence a higher rate
            prop_assert!(high > low);
        }
    }

    #[test]
    fn analytic_schedule_matches_the_exponential_closed_forms() {
        let m = model(1.0);
        let e = REFERENCE_MEAN_CALL_SECONDS;
        let residual = analytic_schedule(
            &ControllerMode::ResidualMean,
            DenominatorMode::MeanResidual,
            Some(&m),
            1000.0,
            100.0,
            1.0,
        )
        .unwrap();
        assert_eq!(residual.len(), 101);
        for &(t, ir) in &residual {
            assert_relative_eq!(ir, 1000.0 / e * (-t / e).exp(), max_relative = 1e-8);
        }

        let c = -m.scale() * 0.8f64.ln();
        let quantile = analytic_schedule(
            &ControllerMode::Quantile { xi: 0.8 },
            DenominatorMode::MeanResidual,
            Some(&m),
            1000.0,
            100.0,
            1.0,
        )
        .unwrap();
        for &(t, ir) in &quantile {
            assert_relative_eq!(ir, 1000.0 / c * (-t / c).exp(), max_relative = 1e-8);
        }
    }

    #[test]
    fn analytic_schedule_holds_a_constant_rate_until_exhaustion() {
        let schedule = analytic_schedule(
            &ControllerMode::Constant { rate_bps: 100.0 },
            DenominatorMode::MeanResidual,
            None,
            1000.0,
            20.0,
            1.0,
        )
        .unwrap();
        for &(t, ir) in &schedule {
            assert_eq!(ir, if t < 10.0 { 100.0 } else { 0.0 }, "at t = {t}");
        }
    }
}
