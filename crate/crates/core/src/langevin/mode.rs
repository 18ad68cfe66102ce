use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::constants::K_B;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeLabel {
    X,
    Y,
    Z,
    Alpha,
    Beta,
}

impl ModeLabel {
    /// The natural kind of each labelled mode.
    pub fn default_kind(self) -> ModeKind {
        match self {
            ModeLabel::X | ModeLabel::Y | ModeLabel::Z => ModeKind::Translational,
            ModeLabel::Alpha | ModeLabel::Beta => ModeKind::Librational,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ModeLabel::X => "x",
            ModeLabel::Y => "y",
            ModeLabel::Z => "z",
            ModeLabel::Alpha => "alpha",
            ModeLabel::Beta => "beta",
        }
    }
}

impl fmt::Display for ModeLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModeLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "x" => Ok(ModeLabel::X),
            "y" => Ok(ModeLabel::Y),
            "z" => Ok(ModeLabel::Z),
            "alpha" | "α" => Ok(ModeLabel::Alpha),
            "beta" | "β" => Ok(ModeLabel::Beta),
            other => Err(Error::invalid(format!("unknown mode label '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeKind {
    Translational,
    Librational,
}

impl FromStr for ModeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "translational" => Ok(ModeKind::Translational),
            "librational" => Ok(ModeKind::Librational),
            other => Err(Error::invalid(format!("unknown mode kind '{other}'"))),
        }
    }
}

impl fmt::Display for ModeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModeKind::Translational => "translational",
            ModeKind::Librational => "librational",
        })
    }
}

/// Unit of a recorded coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Unit {
    #[serde(rename = "m")]
    Meter,
    #[serde(rename = "rad")]
    Radian,
    #[serde(rename = "V")]
    Volt,
}

impl Unit {
    pub fn symbol(self) -> &'static str {
        match self {
            Unit::Meter => "m",
            Unit::Radian => "rad",
            Unit::Volt => "V",
        }
    }
}

impl fmt::Display for Unit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

impl FromStr for Unit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "m" => Ok(Unit::Meter),
            "rad" => Ok(Unit::Radian),
            "V" | "v" => Ok(Unit::Volt),
            other => Err(Error::Format(format!("unknown unit '{other}'"))),
        }
    }
}

/// One mechanical mode of the levitated magnet.
///
/// `inertia` is the mass (kg) for translational modes and the moment of
/// inertia (kg·m²) for librational ones. The background damping rate is
/// always derived as `omega0 / quality_factor`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeSpec {
    pub label: ModeLabel,
    pub kind: ModeKind,
    pub omega0: f64,
    pub inertia: f64,
    pub quality_factor: f64,
    pub bath_temperature: f64,
}

impl ModeSpec {
    pub fn new(
        label: ModeLabel,
        kind: ModeKind,
        omega0: f64,
        inertia: f64,
        quality_factor: f64,
        bath_temperature: f64,
    ) -> Result<Self> {
        let mode = ModeSpec { label, kind, omega0, inertia, quality_factor, bath_temperature };
        mode.validate()?;
        Ok(mode)
    }

    /// Translational mode from a frequency in Hz and a mass in kg.
    pub fn translational(label: ModeLabel, freq_hz: f64, mass: f64, q: f64, temperature: f64) -> Result<Self> {
        Self::new(label, ModeKind::Translational, 2.0 * PI * freq_hz, mass, q, temperature)
    }

    /// Librational mode from a frequency in Hz and a moment of inertia in kg·m².
    pub fn librational(label: ModeLabel, freq_hz: f64, inertia: f64, q: f64, temperature: f64) -> Result<Self> {
        Self::new(label, ModeKind::Librational, 2.0 * PI * freq_hz, inertia, q, temperature)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.omega0 > 0.0 && self.omega0.is_finite()) {
            return Err(Error::invalid(format!("omega0 must be positive, got {}", self.omega0)));
        }
        if !(self.inertia > 0.0 && self.inertia.is_finite()) {
            return Err(Error::invalid(format!("inertia must be positive, got {}", self.inertia)));
        }
        if !(self.quality_factor > 0.0 && self.quality_factor.is_finite()) {
            return Err(Error::invalid(format!("quality factor must be positive, got {}", self.quality_factor)));
        }
        if !(self.bath_temperature >= 0.0 && self.bath_temperature.is_finite()) {
            return Err(Error::invalid(format!(
                "bath temperature must be non-negative, got {}",
                self.bath_temperature
            )));
        }
        Ok(())
    }

    /// Background damping rate Γ₀ = ω₀/Q (s⁻¹).
    pub fn gamma0(&self) -> f64 {
        self.omega0 / self.quality_factor
    }

    pub fn frequency_hz(&self) -> f64 {
        self.omega0 / (2.0 * PI)
    }

    pub fn period(&self) -> f64 {
        2.0 * PI / self.omega0
    }

    pub fn unit(&self) -> Unit {
        match self.kind {
            ModeKind::Translational => Unit::Meter,
            ModeKind::Librational => Unit::Radian,
        }
    }

    pub fn with_quality_factor(mut self, q: f64) -> Result<Self> {
        self.quality_factor = q;
        self.validate()?;
        Ok(self)
    }

    pub fn with_bath_temperature(mut self, t: f64) -> Result<Self> {
        self.bath_temperature = t;
        self.validate()?;
        Ok(self)
    }

    /// Equipartition variance k_B·T/(inertia·ω₀²) of the coordinate at temperature `t`.
    pub fn equipartition_variance(&self, t: f64) -> f64 {
        K_B * t / (self.inertia * self.omega0 * self.omega0)
    }

    /// Inverse of [`ModeSpec::equipartition_variance`].
    pub fn temperature_from_variance(&self, variance: f64) -> f64 {
        variance * self.inertia * self.omega0 * self.omega0 / K_B
    }
}
