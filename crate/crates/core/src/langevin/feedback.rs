//! Cold-damping feedback models.
//!
//! Two controllers are available. `IdealVelocity` differentiates the measured
//! coordinate and applies `F = -inertia·Γ_FB·v_meas`. `FilteredDisplacement`
//! passes the measurement through a second-order band-pass, rotates it by a
//! quadrature phase shift into a velocity estimate and applies the same law.
//! Both can be delayed by a fixed loop latency.
//!
//! The `gain` is the dimensionless ratio Γ_FB/Γ₀.

use std::collections::VecDeque;
use std::f64::consts::FRAC_PI_2;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::mode::ModeSpec;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FeedbackMode {
    #[default]
    Off,
    IdealVelocity,
    FilteredDisplacement,
}

impl FromStr for FeedbackMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "off" | "none" => Ok(FeedbackMode::Off),
            "ideal_velocity" => Ok(FeedbackMode::IdealVelocity),
            "filtered_displacement" => Ok(FeedbackMode::FilteredDisplacement),
            other => Err(Error::invalid(format!("unknown feedback mode '{other}'"))),
        }
    }
}

impl fmt::Display for FeedbackMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FeedbackMode::Off => "off",
            FeedbackMode::IdealVelocity => "ideal_velocity",
            FeedbackMode::FilteredDisplacement => "filtered_displacement",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeedbackConfig {
    pub mode: FeedbackMode,
    /// Γ_FB/Γ₀.
    pub gain: f64,
    /// Extra phase lead (rad) added to the quadrature shift of the filtered chain.
    pub phase_offset: f64,
    /// rad/s; `None` means "centered on the mode frequency".
    pub bandpass_center: Option<f64>,
    /// rad/s (full width of the band-pass).
    pub bandpass_width: f64,
    /// s
    pub loop_delay: f64,
}

impl Default for FeedbackConfig {
    fn default() -> Self {
        FeedbackConfig::off()
    }
}

impl FeedbackConfig {
    pub fn off() -> Self {
        FeedbackConfig {
            mode: FeedbackMode::Off,
            gain: 0.0,
            phase_offset: 0.0,
            bandpass_center: None,
            bandpass_width: 0.0,
            loop_delay: 0.0,
        }
    }

    pub fn ideal_velocity(gain: f64) -> Self {
        FeedbackConfig { mode: FeedbackMode::IdealVelocity, gain, ..Self::off() }
    }

    pub fn filtered_displacement(gain: f64, bandpass_width: f64) -> Self {
        FeedbackConfig { mode: FeedbackMode::FilteredDisplacement, gain, bandpass_width, ..Self::off() }
    }

    pub fn with_gain(mut self, gain: f64) -> Self {
        self.gain = gain;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gain >= 0.0 && self.gain.is_finite()) {
            return Err(Error::invalid(format!("feedback gain must be non-negative, got {}", self.gain)));
        }
        if !(self.loop_delay >= 0.0 && self.loop_delay.is_finite()) {
            return Err(Error::invalid(format!("loop delay must be non-negative, got {}", self.loop_delay)));
        }
        if !self.phase_offset.is_finite() {
            return Err(Error::invalid("phase offset must be finite"));
        }
        if self.mode == FeedbackMode::FilteredDisplacement {
            if !(self.bandpass_width > 0.0 && self.bandpass_width.is_finite()) {
                return Err(Error::invalid(format!(
                    "band-pass width must be positive for filtered feedback, got {}",
                    self.bandpass_width
                )));
            }
            if let Some(c) = self.bandpass_center {
                if !(c > 0.0 && c.is_finite()) {
                    return Err(Error::invalid(format!("band-pass center must be positive, got {c}")));
                }
            }
        }
        Ok(())
    }

    /// Feedback damping rate Γ_FB = gain·Γ₀ (s⁻¹).
    pub fn gamma_fb(&self, mode: &ModeSpec) -> f64 {
        match self.mode {
            FeedbackMode::Off => 0.0,
            _ => self.gain * mode.gamma0(),
        }
    }

    /// Continuous-time transfer from coordinate to the velocity estimate,
    /// evaluated at angular frequency `omega`, as (re, im).
    fn velocity_estimate_response(&self, mode: &ModeSpec, omega: f64) -> (f64, f64) {
        let (re, im) = match self.mode {
            FeedbackMode::Off => return (0.0, 0.0),
            FeedbackMode::IdealVelocity => (0.0, omega),
            FeedbackMode::FilteredDisplacement => {
                let wc = self.bandpass_center.unwrap_or(mode.omega0);
                let bw = self.bandpass_width;
                // den = wc² − ω² + j·bw·ω
                let (dr, di) = (wc * wc - omega * omega, bw * omega);
                let den2 = dr * dr + di * di;
                // H_bp = j·bw·ω / den, H_lp = bw·wc / den
                let bp = ((bw * omega) * di / den2, (bw * omega) * dr / den2);
                let lp = (bw * wc * dr / den2, -bw * wc * di / den2);
                let theta = FRAC_PI_2 + self.phase_offset;
                let (c, s) = (theta.cos(), theta.sin());
                (wc * (bp.0 * c - lp.0 * s), wc * (bp.1 * c - lp.1 * s))
            }
        };
        // loop delay e^{-jωτ}
        let phi = -omega * self.loop_delay;
        let (c, s) = (phi.cos(), phi.sin());
        (re * c - im * s, re * s + im * c)
    }

    /// Total damping rate at the mode frequency, Γ₀ plus the in-phase part
    /// of the feedback. A non-positive value means the loop is unstable.
    pub fn predicted_total_damping(&self, mode: &ModeSpec) -> f64 {
        let w = mode.omega0;
        let (_, im) = self.velocity_estimate_response(mode, w);
        // component of the estimate along the true velocity jω·x
        mode.gamma0() + self.gamma_fb(mode) * im / w
    }
}

/// Runtime state of a feedback controller.
#[derive(Debug, Clone)]
pub(crate) struct Controller {
    kind: ControllerKind,
    delay: VecDeque<f64>,
}

#[derive(Debug, Clone)]
enum ControllerKind {
    Off,
    Ideal { force_per_velocity: f64, dt: f64, previous: Option<f64> },
    Filtered { force_per_velocity: f64, svf: StateVariableFilter, omega_c: f64, cos_theta: f64, sin_theta: f64 },
}

impl Controller {
    pub(crate) fn new(config: &FeedbackConfig, mode: &ModeSpec, dt: f64) -> Self {
        let force_per_velocity = config.gamma_fb(mode) * mode.inertia;
        let kind = match config.mode {
            FeedbackMode::Off => ControllerKind::Off,
            FeedbackMode::IdealVelocity => ControllerKind::Ideal { force_per_velocity, dt, previous: None },
            FeedbackMode::FilteredDisplacement => {
                let omega_c = config.bandpass_center.unwrap_or(mode.omega0);
                let theta = FRAC_PI_2 + config.phase_offset;
                ControllerKind::Filtered {
                    force_per_velocity,
                    svf: StateVariableFilter::new(omega_c, config.bandpass_width, dt),
                    omega_c,
                    cos_theta: theta.cos(),
                    sin_theta: theta.sin(),
                }
            }
        };
        let delay_steps = (config.loop_delay / dt).round() as usize;
        Controller { kind, delay: std::iter::repeat_n(0.0, delay_steps).collect() }
    }

    /// Consume one measured sample and return the force to apply this step.
    pub(crate) fn update(&mut self, measured: f64) -> f64 {
        let force = match &mut self.kind {
            ControllerKind::Off => 0.0,
            ControllerKind::Ideal { force_per_velocity, dt, previous } => {
                let v = previous.map_or(0.0, |p| (measured - p) / *dt);
                *previous = Some(measured);
                -*force_per_velocity * v
            }
            ControllerKind::Filtered { force_per_velocity, svf, omega_c, cos_theta, sin_theta } => {
                let (bp, lp) = svf.process(measured);
                let v = *omega_c * (bp * *cos_theta - lp * *sin_theta);
                -*force_per_velocity * v
            }
        };
        if self.delay.is_empty() {
            force
        } else {
            self.delay.push_back(force);
            self.delay.pop_front().unwrap_or(0.0)
        }
    }
}

/// Trapezoidal state-variable filter with unity-gain band-pass and
/// matching low-pass (−90° at the center) outputs.
#[derive(Debug, Clone)]
pub(crate) struct StateVariableFilter {
    a1: f64,
    a2: f64,
    a3: f64,
    k: f64,
    ic1eq: f64,
    ic2eq: f64,
}

impl StateVariableFilter {
    pub(crate) fn new(center: f64, width: f64, dt: f64) -> Self {
        let g = (0.5 * center * dt).tan();
        let k = width / center;
        let a1 = 1.0 / (1.0 + g * (g + k));
        let a2 = g * a1;
        let a3 = g * a2;
        StateVariableFilter { a1, a2, a3, k, ic1eq: 0.0, ic2eq: 0.0 }
    }

    /// Returns (band-pass, low-pass), both normalised to unit magnitude at the center.
    pub(crate) fn process(&mut self, input: f64) -> (f64, f64) {
        let v3 = input - self.ic2eq;
        let v1 = self.a1 * self.ic1eq + self.a2 * v3;
        let v2 = self.ic2eq + self.a2 * self.ic1eq + self.a3 * v3;
        self.ic1eq = 2.0 * v1 - self.ic1eq;
        self.ic2eq = 2.0 * v2 - self.ic2eq;
        (self.k * v1, self.k * v2)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::langevin::mode::ModeLabel;
    use std::f64::consts::PI;

    fn mode() -> ModeSpec {
        ModeSpec::translational(ModeLabel::Z, 42.4, 23e-9, 1e3, 4.4).unwrap()
    }

    #[test]
    fn validation() {
        assert!(FeedbackConfig::ideal_velocity(-1.0).validate().is_err());
        assert!(FeedbackConfig::filtered_displacement(1.0, 0.0).validate().is_err());
        assert!(FeedbackConfig::filtered_displacement(1.0, 5.0).validate().is_ok());
        assert!(FeedbackConfig::off().validate().is_ok());
    }

    #[test]
    fn predicted_damping_for_ideal_and_filtered() {
        let m = mode();
        let g0 = m.gamma0();
        let ideal = FeedbackConfig::ideal_velocity(9.0);
        assert!((ideal.predicted_total_damping(&m) - 10.0 * g0).abs() < 1e-12 * g0);
        let filt = FeedbackConfig::filtered_displacement(9.0, 5.0);
        assert!((filt.predicted_total_damping(&m) - 10.0 * g0).abs() < 1e-9 * g0);
        // reversed phase heats and, at high gain, destabilises
        let anti = FeedbackConfig { phase_offset: PI, ..filt };
        assert!(anti.predicted_total_damping(&m) < 0.0);
        // quarter-period delay removes the damping part
        let delayed = FeedbackConfig { loop_delay: m.period() / 4.0, ..ideal };
        assert!((delayed.predicted_total_damping(&m) - g0).abs() < 1e-9 * g0);
    }

    #[test]
    fn svf_gain_and_phase_at_center() {
        let wc = 2.0 * PI * 42.4;
        let dt = 1.0 / (200.0 * 42.4);
        let mut f = StateVariableFilter::new(wc, 5.0, dt);
        let n = 200 * 200;
        let (mut bp_amp, mut lp_amp, mut cross) = (0.0f64, 0.0f64, 0.0);
        for i in 0..n {
            let t = i as f64 * dt;
            let (bp, lp) = f.process((wc * t).sin());
            if i > n / 2 {
                bp_amp = bp_amp.max(bp.abs());
                lp_amp = lp_amp.max(lp.abs());
                cross += bp * lp;
            }
        }
        assert!((bp_amp - 1.0).abs() < 0.01, "bp {bp_amp}");
        assert!((lp_amp - 1.0).abs() < 0.01, "lp {lp_amp}");
        // quadrature: the two outputs are uncorrelated over whole periods
        assert!(cross.abs() / (n as f64 / 2.0) < 0.01);
    }

    #[test]
    fn delay_line_shifts_output() {
        let m = mode();
        let dt = 1e-3;
        let cfg = FeedbackConfig { loop_delay: 3.0 * dt, ..FeedbackConfig::ideal_velocity(1.0) };
        let mut c = Controller::new(&cfg, &m, dt);
        let outputs: Vec<f64> = (0..6).map(|i| c.update(i as f64)).collect();
        assert_eq!(&outputs[..4], &[0.0, 0.0, 0.0, 0.0]);
        assert!(outputs[4] < 0.0);
    }
}
