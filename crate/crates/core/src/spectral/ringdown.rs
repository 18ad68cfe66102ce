use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::langevin::{Channel, TimeSeries, ENVELOPE};

/// Exponential amplitude decay `A₀·exp(−t/τ)`, with `Q = ω₀τ/2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RingdownFit {
    pub amplitude0: f64,
    pub tau: f64,
    pub quality_factor: f64,
    /// 1σ error of Q from the fit covariance.
    pub fit_error_q: f64,
    pub omega0: f64,
}

/// Straight-line fit of `ln A` against time for the envelope channel of
/// `envelope` (or its first channel).
pub fn fit_ringdown(envelope: &TimeSeries, omega0: f64) -> Result<RingdownFit> {
    let values =
        envelope.primary(ENVELOPE).ok_or_else(|| Error::InsufficientData("envelope series has no channels".into()))?;
    let times: Vec<f64> = (0..values.len()).map(|i| envelope.time(i)).collect();
    fit_decay(&times, values, omega0)
}

/// As [`fit_ringdown`] on explicit `(t, A)` samples.
pub fn fit_decay(times: &[f64], amplitudes: &[f64], omega0: f64) -> Result<RingdownFit> {
    if !(omega0 > 0.0) {
        return Err(Error::invalid(format!("omega0 must be positive, got {omega0}")));
    }
    if times.len() != amplitudes.len() {
        return Err(Error::invalid("times and amplitudes differ in length"));
    }
    if times.len() < 3 {
        return Err(Error::InsufficientData("ring-down fit needs at least 3 points".into()));
    }
    if amplitudes.iter().any(|a| !(*a > 0.0)) {
        return Err(Error::Fit("envelope must be strictly positive".into()));
    }
    let n = times.len() as f64;
    let t_mean = times.iter().sum::<f64>() / n;
    let y: Vec<f64> = amplitudes.iter().map(|a| a.ln()).collect();
    let y_mean = y.iter().sum::<f64>() / n;
    let sxx: f64 = times.iter().map(|t| (t - t_mean).powi(2)).sum();
    let sxy: f64 = times.iter().zip(&y).map(|(t, y)| (t - t_mean) * (y - y_mean)).sum();
    if !(sxx > 0.0) {
        return Err(Error::InsufficientData("envelope samples span no time".into()));
    }
    let slope = sxy / sxx;
    let intercept = y_mean - slope * t_mean;
    if !(slope < 0.0) {
        return Err(Error::Fit(format!("envelope is not decaying (log slope {slope:.3e} 1/s)")));
    }
    let rss: f64 = times.iter().zip(&y).map(|(t, y)| (y - intercept - slope * t).powi(2)).sum();
    let slope_var = if times.len() > 2 { rss / (n - 2.0) / sxx } else { 0.0 };
    let tau = -1.0 / slope;
    let tau_err = slope_var.sqrt() / (slope * slope);
    Ok(RingdownFit {
        amplitude0: intercept.exp(),
        tau,
        quality_factor: omega0 * tau / 2.0,
        fit_error_q: omega0 * tau_err / 2.0,
        omega0,
    })
}

/// Amplitude envelope of an oscillation near `omega0` by quadrature
/// demodulation over consecutive windows of `periods` periods. The result has
/// one `envelope` sample per window; sample `k` is stamped with the start time
/// of window `k`, which leaves the fitted decay time unchanged.
pub fn demodulate_envelope(series: &TimeSeries, channel: &str, omega0: f64, periods: usize) -> Result<TimeSeries> {
    let data = series.channel(channel).ok_or_else(|| Error::invalid(format!("series has no channel '{channel}'")))?;
    if periods == 0 {
        return Err(Error::invalid("demodulation window must span at least one period"));
    }
    let fs = series.sample_rate();
    let window = ((periods as f64 * 2.0 * PI / omega0) * fs).round() as usize;
    if window < 4 || data.len() < 3 * window {
        return Err(Error::InsufficientData("series too short for envelope demodulation".into()));
    }
    let dt = 1.0 / fs;
    let values: Vec<f64> = data
        .chunks_exact(window)
        .enumerate()
        .map(|(k, chunk)| {
            let (mut i, mut q) = (0.0, 0.0);
            for (j, x) in chunk.iter().enumerate() {
                let phase = omega0 * (k * window + j) as f64 * dt;
                i += x * phase.cos();
                q += x * phase.sin();
            }
            2.0 * (i * i + q * q).sqrt() / window as f64
        })
        .collect();
    TimeSeries::new(fs / window as f64, series.unit(), vec![Channel { name: ENVELOPE.into(), values }])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::langevin::Unit;

    #[test]
    fn recovers_high_q_from_exact_exponential() {
        let omega0 = 2.0 * PI * 42.4;
        let q = 1e7;
        let tau = 2.0 * q / omega0;
        let fs = 1e-2;
        let values: Vec<f64> = (0..500).map(|i| 3e-9 * (-(i as f64) / fs / tau).exp()).collect();
        let env = TimeSeries::single(ENVELOPE, fs, Unit::Meter, values).unwrap();
        let fit = fit_ringdown(&env, omega0).unwrap();
        assert!((fit.quality_factor - q).abs() / q < 1e-4);
        assert!((fit.amplitude0 - 3e-9).abs() / 3e-9 < 1e-9);
        assert!(fit.fit_error_q < 1e-3 * q);
        assert!((fit.quality_factor - omega0 * fit.tau / 2.0).abs() <= 1e-9 * q);
    }

    #[test]
    fn reference_scale_time_constant() {
        let omega0 = 2.0 * PI * 42.4;
        let tau = 2.0 * 1.0e7 / omega0;
        assert!((tau - 7.5e4).abs() / 7.5e4 < 0.01);
    }

    #[test]
    fn rejects_growing_envelope() {
        let t = [0.0, 1.0, 2.0, 3.0];
        let a = [1.0, 1.1, 1.2, 1.3];
        assert!(matches!(fit_decay(&t, &a, 1.0), Err(Error::Fit(_))));
        assert!(fit_decay(&t, &[1.0, 0.0, 1.0, 1.0], 1.0).is_err());
    }

    #[test]
    fn error_reflects_scatter() {
        let t: Vec<f64> = (0..50).map(|i| i as f64).collect();
        let clean: Vec<f64> = t.iter().map(|t| (-t / 20.0).exp()).collect();
        let noisy: Vec<f64> = clean.iter().enumerate().map(|(i, a)| a * if i % 2 == 0 { 1.05 } else { 0.95 }).collect();
        let c = fit_decay(&t, &clean, 10.0).unwrap();
        let n = fit_decay(&t, &noisy, 10.0).unwrap();
        assert!(c.fit_error_q < 1e-9);
        assert!(n.fit_error_q > 1e-3);
    }

    #[test]
    fn demodulated_envelope_of_decaying_sinusoid() {
        let omega0 = 2.0 * PI * 10.0;
        let fs = 2000.0;
        let tau = 4.0;
        let x: Vec<f64> = (0..(40.0 * fs) as usize)
            .map(|i| i as f64 / fs)
            .map(|t| 2.0 * (-t / tau).exp() * (omega0 * t).cos())
            .collect();
        let s = TimeSeries::single("true_position", fs, Unit::Meter, x).unwrap();
        let env = demodulate_envelope(&s, "true_position", omega0, 5).unwrap();
        let fit = fit_ringdown(&env, omega0).unwrap();
        assert!((fit.tau - tau).abs() / tau < 1e-3);
    }
}
