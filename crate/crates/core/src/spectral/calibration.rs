use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::lorentzian::LorentzianFit;
use super::welch::PsdResult;
use crate::error::{Error, Result};
use crate::langevin::ModeSpec;

/// A thermally limited reference measurement used to convert RMS values to
/// temperatures. `reference_rms` may be in any unit (m, rad or V) as long as
/// the measured RMS uses the same one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReference {
    pub reference_temperature: f64,
    pub reference_rms: f64,
    /// V/m or V/rad, when known.
    pub conversion_factor: Option<f64>,
}

impl CalibrationReference {
    pub fn new(reference_temperature: f64, reference_rms: f64) -> Result<Self> {
        let r = CalibrationReference { reference_temperature, reference_rms, conversion_factor: None };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.reference_temperature > 0.0 && self.reference_temperature.is_finite()) {
            return Err(Error::invalid(format!(
                "reference temperature must be positive, got {}",
                self.reference_temperature
            )));
        }
        if !(self.reference_rms > 0.0 && self.reference_rms.is_finite()) {
            return Err(Error::invalid(format!("reference RMS must be positive, got {}", self.reference_rms)));
        }
        Ok(())
    }
}

/// Equipartition ratio `T_ref·(rms/rms_ref)²`.
pub fn mode_temperature(measured_rms: f64, reference: &CalibrationReference) -> Result<f64> {
    reference.validate()?;
    if !(measured_rms > 0.0) {
        return Err(Error::invalid(format!("measured RMS must be positive, got {measured_rms}")));
    }
    let ratio = measured_rms / reference.reference_rms;
    Ok(reference.reference_temperature * ratio * ratio)
}

/// Thermal RMS `√(k_B·T/(inertia·ω₀²))`.
pub fn thermal_rms(mode: &ModeSpec, temperature: f64) -> Result<f64> {
    if !(temperature >= 0.0) {
        return Err(Error::invalid(format!("temperature must be non-negative, got {temperature}")));
    }
    Ok(mode.equipartition_variance(temperature).sqrt())
}

/// Peak thermal amplitude `√2 × RMS = √(2·k_B·T/(inertia·ω₀²))`. The quoted
/// amplitudes in the reference data follow this convention.
pub fn thermal_amplitude(mode: &ModeSpec, temperature: f64) -> Result<f64> {
    Ok(std::f64::consts::SQRT_2 * thermal_rms(mode, temperature)?)
}

/// Volts per unit coordinate from a thermally limited voltage RMS.
pub fn conversion_factor(voltage_rms: f64, mode: &ModeSpec, temperature: f64) -> Result<f64> {
    if !(voltage_rms > 0.0) {
        return Err(Error::invalid(format!("voltage RMS must be positive, got {voltage_rms}")));
    }
    let rms = thermal_rms(mode, temperature)?;
    if rms == 0.0 {
        return Err(Error::invalid("temperature must be positive for a conversion factor"));
    }
    Ok(voltage_rms / rms)
}

/// RMS of the PSD integrated over `center_hz ± half_width_hz`.
pub fn band_rms(psd: &PsdResult, center_hz: f64, half_width_hz: f64) -> Result<f64> {
    if !(half_width_hz > 0.0) {
        return Err(Error::invalid("band half-width must be positive"));
    }
    let bins = psd.frequencies.iter().filter(|f| (**f - center_hz).abs() <= half_width_hz).count();
    if bins < 3 {
        return Err(Error::InsufficientData(format!("band holds {bins} bins, need at least 3")));
    }
    Ok(psd.band_power(center_hz - half_width_hz, center_hz + half_width_hz).sqrt())
}

/// Fraction of a high-Q Lorentzian's power inside `ω₀ ± half_width` (rad/s),
/// `(2/π)·atan(2·half_width/Γ)`.
pub fn lorentzian_band_fraction(half_width: f64, gamma: f64) -> f64 {
    2.0 / PI * (2.0 * half_width / gamma).atan()
}

/// Default band half-width in linewidths.
pub const DEFAULT_BAND_LINEWIDTHS: f64 = 5.0;

/// Mode temperature from the band RMS around a fitted peak, corrected for
/// the Lorentzian tails outside the band. `linewidths` sets the half-width
/// in units of the fitted Γ.
pub fn band_temperature(psd: &PsdResult, fit: &LorentzianFit, mode: &ModeSpec, linewidths: f64) -> Result<f64> {
    let half_width = linewidths * fit.gamma_total;
    let half_width_hz = (half_width / (2.0 * PI)).max(1.5 * psd.df());
    let rms = band_rms(psd, fit.frequency_hz(), half_width_hz)?;
    let fraction = lorentzian_band_fraction(2.0 * PI * half_width_hz, fit.gamma_total);
    Ok(mode.temperature_from_variance(rms * rms / fraction))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::langevin::ModeLabel;
    use proptest::prelude::*;

    fn z_mode() -> ModeSpec {
        ModeSpec::translational(ModeLabel::Z, 42.4, 23e-9, 1e7, 4.4).unwrap()
    }

    #[test]
    fn z_amplitudes() {
        let m = z_mode();
        let a = thermal_amplitude(&m, 4.4).unwrap();
        assert!((a - 270e-12).abs() / 270e-12 < 0.02, "{a}");
        let a = thermal_amplitude(&m, 3400.0).unwrap();
        assert!((a - 7.6e-9).abs() / 7.6e-9 < 0.02, "{a}");
        assert_eq!(thermal_amplitude(&m, 0.0).unwrap(), 0.0);
        assert!(thermal_amplitude(&m, -1.0).is_err());
    }

    #[test]
    fn reference_ratio_temperatures() {
        let r = CalibrationReference::new(4.4, 2.0e-3).unwrap();
        let t = mode_temperature((3400.0f64 / 4.4).sqrt() * 2.0e-3, &r).unwrap();
        assert!((t - 3400.0).abs() < 1e-9);
        assert_eq!(mode_temperature(2.0e-3, &r).unwrap(), 4.4);
        let b = CalibrationReference::new(4.2, 1.1e-6).unwrap();
        let t = mode_temperature(5.2e-6, &b).unwrap();
        assert!((t - 97.0).abs() / 97.0 < 0.05, "{t}");
        assert!(CalibrationReference::new(0.0, 1.0).is_err());
    }

    #[test]
    fn conversion_factor_is_linear_in_voltage() {
        let m = z_mode();
        let rms = thermal_rms(&m, 4.4).unwrap();
        let c = conversion_factor(1.76e6 * rms, &m, 4.4).unwrap();
        assert!((c - 1.76e6).abs() / 1.76e6 < 1e-12);
        let c2 = conversion_factor(2.0 * 1.76e6 * rms, &m, 4.4).unwrap();
        assert!((c2 - 2.0 * c).abs() / c < 1e-12);
        assert!(conversion_factor(1.0, &m, 0.0).is_err());
    }

    #[test]
    fn band_fraction_limits() {
        assert!((lorentzian_band_fraction(5.0, 1.0) - 0.9365).abs() < 1e-3);
        assert!(lorentzian_band_fraction(1e9, 1.0) > 0.999_999);
        assert!((lorentzian_band_fraction(0.5, 1.0) - 0.5).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn temperature_is_invariant_under_common_rescaling(
            t_ref in 0.01f64..1e4, r in 1e-12f64..1e3, m in 1e-12f64..1e3, k in 1e-6f64..1e6,
        ) {
            let a = mode_temperature(m, &CalibrationReference::new(t_ref, r).unwrap()).unwrap();
            let b = mode_temperature(m * k, &CalibrationReference::new(t_ref, r * k).unwrap()).unwrap();
            prop_assert!((a - b).abs() <= 1e-9 * a.abs());
        }
    }
}
