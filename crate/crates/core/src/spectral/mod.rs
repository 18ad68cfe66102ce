//! Spectral estimation and fits: Welch PSDs, damped-oscillator (Lorentzian)
//! fits, ring-down Q, RMS-to-temperature calibration and the thermal-limit
//! diagnostic.

mod calibration;
pub mod diagnostic;
mod lorentzian;
mod ringdown;
mod welch;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::langevin::{ModeKind, ModeLabel, ModeSpec, TimeSeries};

pub use calibration::{
    band_rms, band_temperature, conversion_factor, lorentzian_band_fraction, mode_temperature, thermal_amplitude,
    thermal_rms, CalibrationReference, DEFAULT_BAND_LINEWIDTHS,
};
pub use diagnostic::{synthetic_points, thermal_limit_diagnostic, DiagnosticReport, Regime};
pub use lorentzian::{fit_lorentzian, lorentzian, InitialGuess, LorentzianFit};
pub use ringdown::{demodulate_envelope, fit_decay, fit_ringdown, RingdownFit};
pub use welch::{segment_length_for_linewidth, welch, welch_psd, PsdResult};

/// Machine-readable fit summary. Field names are part of the output format.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FitReport {
    pub omega0_rad_s: Option<f64>,
    pub gamma_total_s: Option<f64>,
    pub q_factor: Option<f64>,
    pub q_error: Option<f64>,
    pub temperature_k: Option<f64>,
}

impl FitReport {
    pub fn from_lorentzian(fit: &LorentzianFit, temperature: Option<f64>) -> Self {
        FitReport {
            omega0_rad_s: Some(fit.omega0),
            gamma_total_s: Some(fit.gamma_total),
            q_factor: Some(fit.quality_factor()),
            q_error: Some(fit.quality_factor_error()),
            temperature_k: temperature,
        }
    }

    pub fn from_ringdown(fit: &RingdownFit) -> Self {
        FitReport {
            omega0_rad_s: Some(fit.omega0),
            gamma_total_s: Some(2.0 / fit.tau),
            q_factor: Some(fit.quality_factor),
            q_error: Some(fit.fit_error_q),
            temperature_k: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalysisOptions {
    /// Welch segment length; chosen from the fitted linewidth when `None`.
    pub segment_length: Option<usize>,
    pub overlap_fraction: f64,
    /// Fit band in Hz; peak ± `fit_linewidths`·Γ when `None`.
    pub band: Option<(f64, f64)>,
    pub fit_linewidths: f64,
    /// Half-width of the RMS band in fitted linewidths.
    pub rms_linewidths: f64,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        AnalysisOptions {
            segment_length: None,
            overlap_fraction: 0.5,
            band: None,
            fit_linewidths: 20.0,
            rms_linewidths: DEFAULT_BAND_LINEWIDTHS,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Analysis {
    pub psd: PsdResult,
    pub fit: LorentzianFit,
    /// Band-RMS temperature from the supplied inertia.
    pub temperature: f64,
    /// Temperature implied by the fitted curve's area, as a cross-check.
    pub fit_temperature: f64,
}

impl Analysis {
    pub fn report(&self) -> FitReport {
        FitReport::from_lorentzian(&self.fit, Some(self.temperature))
    }
}

/// Welch PSD, Lorentzian fit and band-RMS temperature of one channel, for a
/// mode of known inertia (kg or kg·m²).
pub fn analyze(series: &TimeSeries, channel: &str, inertia: f64, options: &AnalysisOptions) -> Result<Analysis> {
    if !(inertia > 0.0) {
        return Err(Error::invalid(format!("inertia must be positive, got {inertia}")));
    }
    let n = series.len();
    let fs = series.sample_rate();
    let max_segment = (n / 16).max(8);
    let first_len = options.segment_length.unwrap_or_else(|| prev_power_of_two(n / 64).max(64).min(n));
    let coarse = welch_psd(series, channel, first_len, options.overlap_fraction)?;
    let mut fit = fit_auto(&coarse, options)?;
    let psd = match options.segment_length {
        Some(_) => coarse,
        None => {
            let len = segment_length_for_linewidth(fs, fit.gamma_total, max_segment);
            if len == first_len {
                coarse
            } else {
                let fine = welch_psd(series, channel, len, options.overlap_fraction)?;
                fit = fit_auto(&fine, options)?;
                fine
            }
        }
    };
    let kind = match series.unit() {
        crate::langevin::Unit::Radian => ModeKind::Librational,
        _ => ModeKind::Translational,
    };
    let label = if kind == ModeKind::Librational { ModeLabel::Beta } else { ModeLabel::Z };
    let mode = ModeSpec::new(label, kind, fit.omega0, inertia, fit.quality_factor(), 0.0)?;
    let temperature = band_temperature(&psd, &fit, &mode, options.rms_linewidths)?;
    Ok(Analysis { fit_temperature: mode.temperature_from_variance(fit.variance()), psd, fit, temperature })
}

fn fit_auto(psd: &PsdResult, options: &AnalysisOptions) -> Result<LorentzianFit> {
    if let Some(band) = options.band {
        return fit_lorentzian(psd, band, None);
    }
    let df = psd.df();
    let peak = psd.peak_index(df, f64::INFINITY).ok_or_else(|| Error::InsufficientData("empty spectrum".into()))?;
    let f_peak = psd.frequencies[peak];
    // rough fit on a fixed-bin window, then refit on the linewidth-scaled band
    let half = (12.0 * df).min(0.9 * f_peak);
    let rough = fit_lorentzian(psd, (f_peak - half, f_peak + half), None)?;
    let half = (options.fit_linewidths * rough.gamma_total / (2.0 * std::f64::consts::PI)).max(12.0 * df);
    let lo = (rough.frequency_hz() - half).max(df);
    fit_lorentzian(
        psd,
        (lo, rough.frequency_hz() + half),
        Some((rough.omega0, rough.gamma_total, rough.drive_strength)),
    )
}

fn prev_power_of_two(n: usize) -> usize {
    if n == 0 {
        0
    } else {
        1 << (usize::BITS - 1 - n.leading_zeros())
    }
}
