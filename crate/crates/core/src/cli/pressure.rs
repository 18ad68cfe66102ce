//! Gauge pressure corrections for a cold chamber read by a warm gauge.

use serde::Serialize;

use crate::error::{Error, Result};

/// Gas correction factor above this pressure (mbar).
pub const HIGH_PRESSURE_THRESHOLD: f64 = 2e-2;
/// Gas correction factor below this pressure (mbar).
pub const LOW_PRESSURE_THRESHOLD: f64 = 1e-3;
pub const HIGH_PRESSURE_FACTOR: f64 = 0.8;
pub const LOW_PRESSURE_FACTOR: f64 = 5.9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PressureReading {
    /// mbar
    pub gauge_value: f64,
    pub warm_temperature: f64,
    pub cold_temperature: f64,
}

impl PressureReading {
    pub fn new(gauge_value: f64, warm_temperature: f64, cold_temperature: f64) -> Result<Self> {
        let p = PressureReading { gauge_value, warm_temperature, cold_temperature };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gauge_value.is_finite() && self.gauge_value > 0.0) {
            return Err(Error::invalid(format!("gauge value must be positive, got {} mbar", self.gauge_value)));
        }
        if !(self.warm_temperature.is_finite() && self.warm_temperature > 0.0) {
            return Err(Error::invalid(format!("warm temperature must be positive, got {}", self.warm_temperature)));
        }
        if !(self.cold_temperature.is_finite() && self.cold_temperature > 0.0) {
            return Err(Error::invalid(format!("cold temperature must be positive, got {}", self.cold_temperature)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CorrectedPressure {
    pub gas_factor: f64,
    /// mbar, at the gauge
    pub gas_corrected: f64,
    /// mbar, thermal transpiration to the cold side
    pub cold_side: f64,
    /// cold_side / gauge_value
    pub total_factor: f64,
}

/// Gas-species factor for the gauge reading. Between the two calibrated
/// regimes the factor is undefined.
pub fn gas_factor(gauge_value: f64) -> Result<f64> {
    if gauge_value > HIGH_PRESSURE_THRESHOLD {
        Ok(HIGH_PRESSURE_FACTOR)
    } else if gauge_value < LOW_PRESSURE_THRESHOLD {
        Ok(LOW_PRESSURE_FACTOR)
    } else {
        Err(Error::Domain(format!(
            "gauge value {gauge_value} mbar lies between {LOW_PRESSURE_THRESHOLD} and \
             {HIGH_PRESSURE_THRESHOLD} mbar where no correction factor is defined"
        )))
    }
}

pub fn correct_pressure(reading: &PressureReading) -> Result<CorrectedPressure> {
    reading.validate()?;
    let gas_factor = gas_factor(reading.gauge_value)?;
    let gas_corrected = gas_factor * reading.gauge_value;
    let cold_side = gas_corrected * (reading.cold_temperature / reading.warm_temperature).sqrt();
    Ok(CorrectedPressure { gas_factor, gas_corrected, cold_side, total_factor: cold_side / reading.gauge_value })
}
