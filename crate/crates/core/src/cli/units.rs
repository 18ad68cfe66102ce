//! Unit suffixes for dimensioned config values.

use std::f64::consts::PI;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dimension {
    Dimensionless,
    Length,
    Mass,
    Time,
    /// Stored in rad/s.
    AngularFrequency,
    Temperature,
    Angle,
    Density,
    Magnetization,
    FluxDensity,
    DipoleMoment,
    MomentOfInertia,
    /// m²/Hz or rad²/Hz.
    CoordinatePsd,
    /// (m/s²)²/Hz or (rad/s²)²/Hz.
    AccelerationPsd,
    /// mbar.
    Pressure,
    /// Φ₀/√Hz.
    FluxNoise,
}

impl Dimension {
    /// Accepted suffixes and their factor to the stored unit. The first entry
    /// is the canonical suffix used when writing.
    fn units(self) -> &'static [(&'static str, f64)] {
        match self {
            Dimension::Dimensionless => &[("", 1.0)],
            Dimension::Length => &[("m", 1.0), ("cm", 1e-2), ("mm", 1e-3), ("um", 1e-6), ("nm", 1e-9), ("pm", 1e-12)],
            Dimension::Mass => &[("kg", 1.0), ("g", 1e-3), ("mg", 1e-6), ("ug", 1e-9), ("ng", 1e-12)],
            Dimension::Time => &[("s", 1.0), ("ms", 1e-3), ("us", 1e-6), ("ns", 1e-9), ("min", 60.0), ("h", 3600.0)],
            Dimension::AngularFrequency => {
                &[("rad/s", 1.0), ("Hz", 2.0 * PI), ("kHz", 2.0 * PI * 1e3), ("mHz", 2.0 * PI * 1e-3)]
            }
            Dimension::Temperature => &[("K", 1.0), ("mK", 1e-3), ("uK", 1e-6), ("nK", 1e-9)],
            Dimension::Angle => &[("rad", 1.0), ("mrad", 1e-3), ("urad", 1e-6), ("nrad", 1e-9), ("deg", PI / 180.0)],
            Dimension::Density => &[("kg/m^3", 1.0), ("g/cm^3", 1e3)],
            Dimension::Magnetization => &[("A/m", 1.0), ("kA/m", 1e3)],
            Dimension::FluxDensity => &[("T", 1.0), ("mT", 1e-3)],
            Dimension::DipoleMoment => &[("A m^2", 1.0)],
            Dimension::MomentOfInertia => &[("kg m^2", 1.0)],
            Dimension::CoordinatePsd => &[("m^2/Hz", 1.0), ("rad^2/Hz", 1.0)],
            Dimension::AccelerationPsd => &[("(m/s^2)^2/Hz", 1.0), ("(rad/s^2)^2/Hz", 1.0)],
            Dimension::Pressure => &[("mbar", 1.0), ("Pa", 1e-2), ("bar", 1e3)],
            Dimension::FluxNoise => &[("Phi0/rtHz", 1.0), ("uPhi0/rtHz", 1e-6)],
        }
    }

    pub fn canonical(self) -> &'static str {
        self.units()[0].0
    }

    /// Canonical suffix, or the librational alternative where one exists.
    pub fn suffix(self, angular: bool) -> &'static str {
        match (self, angular) {
            (Dimension::CoordinatePsd | Dimension::AccelerationPsd, true) => self.units()[1].0,
            _ => self.canonical(),
        }
    }
}

fn normalize(unit: &str) -> String {
    unit.trim()
        .replace(['µ', 'μ'], "u")
        .replace('²', "^2")
        .replace('³', "^3")
        .replace('Φ', "Phi")
        .replace(['·', '*'], " ")
        .replace("sqrt(Hz)", "rtHz")
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

/// Parse `"<number> <unit>"` into the stored SI value for `dim`.
pub fn parse_quantity(text: &str, dim: Dimension) -> Result<f64> {
    let text = text.trim();
    let split = text.find(|c: char| c.is_whitespace()).unwrap_or(text.len());
    let (number, unit) = text.split_at(split);
    let value: f64 = number.parse().map_err(|_| Error::invalid(format!("'{text}' does not start with a number")))?;
    let unit = normalize(unit);
    if dim == Dimension::Dimensionless {
        if unit.is_empty() || unit == "-" {
            return Ok(value);
        }
        return Err(Error::invalid(format!("'{text}' is dimensionless and takes no unit")));
    }
    if unit.is_empty() {
        return Err(Error::invalid(format!("'{text}' needs a unit suffix (e.g. '{} {}')", number, dim.canonical())));
    }
    dim.units().iter().find(|(u, _)| *u == unit).map(|(_, f)| value * f).ok_or_else(|| {
        let accepted: Vec<&str> = dim.units().iter().map(|(u, _)| *u).collect();
        Error::invalid(format!("unit '{unit}' in '{text}' is not one of: {}", accepted.join(", ")))
    })
}

/// Render a stored value with its canonical suffix; round-trips exactly.
pub fn format_quantity(value: f64, dim: Dimension, angular: bool) -> String {
    let suffix = dim.suffix(angular);
    if suffix.is_empty() {
        format!("{value:?}")
    } else {
        format!("{value:?} {suffix}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() <= 1e-14 * b.abs()
    }

    #[test]
    fn parses_prefixed_units() {
        assert!(close(parse_quantity("100 um", Dimension::Length).unwrap(), 100e-6));
        assert!(close(parse_quantity("23 µg", Dimension::Mass).unwrap(), 23e-9));
        assert!((parse_quantity("42.4 Hz", Dimension::AngularFrequency).unwrap() - 2.0 * PI * 42.4).abs() < 1e-12);
        assert!(close(parse_quantity("410 mK", Dimension::Temperature).unwrap(), 0.41));
        assert_eq!(parse_quantity("1e-22 m²/Hz", Dimension::CoordinatePsd).unwrap(), 1e-22);
        assert!(close(parse_quantity("0.6 µΦ0/sqrt(Hz)", Dimension::FluxNoise).unwrap(), 0.6e-6));
        assert_eq!(parse_quantity("7.8e-17 kg·m²", Dimension::MomentOfInertia).unwrap(), 7.8e-17);
        assert_eq!(parse_quantity("1e7", Dimension::Dimensionless).unwrap(), 1e7);
    }

    #[test]
    fn unit_is_mandatory_and_checked() {
        assert!(parse_quantity("100", Dimension::Length).is_err());
        assert!(parse_quantity("100 K", Dimension::Length).is_err());
        assert!(parse_quantity("3 Hz", Dimension::Dimensionless).is_err());
        assert!(parse_quantity("abc m", Dimension::Length).is_err());
    }

    #[test]
    fn format_round_trips() {
        for v in [0.1 + 0.2, 2.0 * PI * 42.4, 1e-300, 7.8e-17] {
            let s = format_quantity(v, Dimension::MomentOfInertia, false);
            assert_eq!(parse_quantity(&s, Dimension::MomentOfInertia).unwrap(), v);
        }
        assert_eq!(format_quantity(1e-20, Dimension::CoordinatePsd, true), "1e-20 rad^2/Hz");
    }
}
