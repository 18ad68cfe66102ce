//! Detection-noise-limited cooling floors and the parameter table report.
//!
//! With force (or torque) noise `S_F` and detector noise `S_xd`, feedback
//! cooling bottoms out at
//!
//! ```text
//! T_min = (ω₀/2k_B)·√(S_F·S_xd),    N_min = k_B·T_min/(ħω₀)
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::coil_coupling::{coupling_dz, CoilGeometry, DipoleSource, Orientation};
use crate::constants::{HBAR, K_B, PHI_0};
use crate::error::{Error, Result};
use crate::langevin::{thermal_force_psd, ModeLabel, ModeSpec};
use crate::spectral::{conversion_factor, thermal_amplitude};
use crate::trap_model::{dipole_moment, moment_of_inertia, MagnetSpec};

/// Caveat attached to every [`LimitReport`].
pub const BACKACTION_CAVEAT: &str = "SQUID backaction force noise is not included; \
at the SQUID-limited floor it may dominate the force noise and raise T_min";

/// Noise inputs for one mode. PSDs are one-sided.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseBudget {
    /// N²/Hz or (N·m)²/Hz.
    pub force_psd: f64,
    /// m²/Hz or rad²/Hz.
    pub detector_psd: f64,
    /// Φ₀²/Hz.
    pub squid_flux_psd: Option<f64>,
    /// Wb/m or Wb/rad.
    pub flux_coupling: Option<f64>,
    /// SQUID input transfer M/L.
    pub flux_transfer_ratio: Option<f64>,
}

impl NoiseBudget {
    pub fn new(force_psd: f64, detector_psd: f64) -> Self {
        NoiseBudget { force_psd, detector_psd, squid_flux_psd: None, flux_coupling: None, flux_transfer_ratio: None }
    }

    /// Thermal force noise of `mode` with the detector noise implied by a SQUID readout.
    pub fn from_squid(
        mode: &ModeSpec,
        squid_flux_psd: f64,
        flux_coupling: f64,
        flux_transfer_ratio: f64,
    ) -> Result<Self> {
        Ok(NoiseBudget {
            force_psd: thermal_force_psd(mode),
            detector_psd: detector_noise_from_flux(squid_flux_psd, flux_coupling, flux_transfer_ratio)?,
            squid_flux_psd: Some(squid_flux_psd),
            flux_coupling: Some(flux_coupling),
            flux_transfer_ratio: Some(flux_transfer_ratio),
        })
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("force_psd", Some(self.force_psd)),
            ("detector_psd", Some(self.detector_psd)),
            ("squid_flux_psd", self.squid_flux_psd),
        ] {
            if let Some(v) = v {
                if !(v >= 0.0 && v.is_finite()) {
                    return Err(Error::invalid(format!("{name} must be non-negative, got {v}")));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitReport {
    pub t_min: f64,
    pub n_min: f64,
    /// Peak amplitude at `t_min` (√2 × RMS).
    pub min_amplitude: f64,
    pub caveat: String,
}

pub fn min_temperature(mode: &ModeSpec, budget: &NoiseBudget) -> Result<LimitReport> {
    mode.validate()?;
    budget.validate()?;
    if !(budget.force_psd > 0.0 && budget.detector_psd > 0.0) {
        return Err(Error::invalid("force and detector noise must both be positive"));
    }
    let t_min = mode.omega0 / (2.0 * K_B) * (budget.force_psd * budget.detector_psd).sqrt();
    let n_min = K_B * t_min / (HBAR * mode.omega0);
    Ok(LimitReport {
        t_min,
        n_min,
        min_amplitude: thermal_amplitude(mode, t_min)?,
        caveat: BACKACTION_CAVEAT.to_string(),
    })
}

/// Detector PSD (m²/Hz or rad²/Hz) for SQUID flux noise `squid_flux_psd`
/// (Φ₀²/Hz) read through a coupling |∂Φ/∂z| and transfer ratio M/L:
/// `S_xd^{1/2} = S_Φ^{1/2}·Φ₀ / (ratio·|∂Φ/∂z|)`.
pub fn detector_noise_from_flux(squid_flux_psd: f64, flux_coupling: f64, flux_transfer_ratio: f64) -> Result<f64> {
    if !(squid_flux_psd >= 0.0) {
        return Err(Error::invalid(format!("SQUID flux noise must be non-negative, got {squid_flux_psd}")));
    }
    if !(flux_coupling.abs() > 0.0 && flux_coupling.is_finite()) {
        return Err(Error::Domain("zero flux coupling: displacement is not detectable".into()));
    }
    if !(flux_transfer_ratio > 0.0) {
        return Err(Error::invalid(format!("flux transfer ratio must be positive, got {flux_transfer_ratio}")));
    }
    let asd = squid_flux_psd.sqrt() * PHI_0 / (flux_transfer_ratio * flux_coupling.abs());
    Ok(asd * asd)
}

/// Inputs for one mode of the parameter table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeInputs {
    pub frequency_hz: f64,
    pub quality_factor: f64,
    pub equilibrium_temperature: f64,
    pub reference_temperature: f64,
    pub feedback_temperature: f64,
    /// ASD, m/√Hz or rad/√Hz.
    pub detection_noise: f64,
    /// ASD, Φ₀/√Hz.
    pub squid_flux_noise: Option<f64>,
    pub future_bath_temperature: f64,
    pub future_detection_noise: f64,
    /// Thermally limited voltage RMS at the reference temperature.
    pub reference_voltage_rms: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoilInputs {
    pub turns: u32,
    pub loop_radius: f64,
    pub lateral_offset: f64,
    pub separation: f64,
    pub flux_transfer_ratio: f64,
    pub warm_temperature: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub key: String,
    pub label: String,
    pub symbol: String,
    pub unit: String,
    pub value: f64,
}

/// The parameter table: inputs plus the published rows to recompute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableFixture {
    pub magnet: MagnetSpec,
    pub z: ModeInputs,
    pub beta: ModeInputs,
    pub coil: CoilInputs,
    pub rows: Vec<TableRow>,
}

const BUILTIN_FIXTURE: &str = include_str!("../fixtures/table1.toml");

impl TableFixture {
    /// The fixture shipped with the crate.
    pub fn builtin() -> Result<Self> {
        Self::parse(BUILTIN_FIXTURE)
    }

    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| {
            let line = e.span().map(|s| text[..s.start].lines().count().max(1));
            Error::Config { line, message: e.message().to_string() }
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|source| Error::MissingInput { path: path.to_path_buf(), source })?;
        Self::parse(&text)
    }

    pub fn z_mode(&self, temperature: f64) -> Result<ModeSpec> {
        ModeSpec::translational(ModeLabel::Z, self.z.frequency_hz, self.magnet.mass, self.z.quality_factor, temperature)
    }

    pub fn beta_mode(&self, temperature: f64) -> Result<ModeSpec> {
        ModeSpec::librational(
            ModeLabel::Beta,
            self.beta.frequency_hz,
            moment_of_inertia(&self.magnet)?,
            self.beta.quality_factor,
            temperature,
        )
    }

    pub fn coil_geometry(&self, orientation: Orientation) -> Result<CoilGeometry> {
        CoilGeometry::new(
            self.coil.turns,
            self.coil.loop_radius,
            self.coil.lateral_offset,
            self.coil.separation,
            orientation,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowResult {
    pub key: String,
    pub label: String,
    pub symbol: String,
    pub unit: String,
    pub reference: f64,
    pub computed: Option<f64>,
    /// (computed − reference)/reference.
    pub deviation: Option<f64>,
    pub within_tolerance: Option<bool>,
    /// Inputs that prevented recomputation.
    pub missing: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableReport {
    pub tolerance: f64,
    pub rows: Vec<RowResult>,
}

impl TableReport {
    pub fn derivable(&self) -> impl Iterator<Item = &RowResult> {
        self.rows.iter().filter(|r| r.computed.is_some())
    }

    /// Every recomputed row lies within tolerance.
    pub fn all_within_tolerance(&self) -> bool {
        self.derivable().all(|r| r.within_tolerance == Some(true))
    }

    pub fn failures(&self) -> Vec<&RowResult> {
        self.derivable().filter(|r| r.within_tolerance != Some(true)).collect()
    }

    pub fn to_text(&self) -> String {
        let header = ["key", "symbol", "computed", "reference", "unit", "deviation", "status"];
        let body: Vec<[String; 7]> = self
            .rows
            .iter()
            .map(|r| {
                let (computed, deviation, status) = match (r.computed, r.deviation) {
                    (Some(c), Some(d)) => (
                        format!("{c:.4e}"),
                        format!("{:+.2}%", 100.0 * d),
                        if r.within_tolerance == Some(true) { "ok".to_string() } else { "FAIL".to_string() },
                    ),
                    _ => ("-".into(), "-".into(), format!("missing: {}", r.missing.join(", "))),
                };
                [
                    r.key.clone(),
                    r.symbol.clone(),
                    computed,
                    format!("{:.4e}", r.reference),
                    r.unit.clone(),
                    deviation,
                    status,
                ]
            })
            .collect();
        let mut widths = header.map(str::len);
        for row in &body {
            for (w, cell) in widths.iter_mut().zip(row) {
                *w = (*w).max(cell.chars().count());
            }
        }
        let mut out = String::new();
        let line = |out: &mut String, cells: &[&str]| {
            let padded: Vec<String> = cells.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}", w = *w)).collect();
            let _ = writeln!(out, "{}", padded.join("  ").trim_end());
        };
        line(&mut out, &header);
        let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
        line(&mut out, &rule.iter().map(String::as_str).collect::<Vec<_>>());
        for row in &body {
            line(&mut out, &row.iter().map(String::as_str).collect::<Vec<_>>());
        }
        let _ = writeln!(
            out,
            "\n{} of {} derivable rows within {:.1}%",
            self.derivable().filter(|r| r.within_tolerance == Some(true)).count(),
            self.derivable().count(),
            100.0 * self.tolerance
        );
        out
    }
}

/// Every derivable quantity of the table, keyed by row key. Quantities that
/// need an absent input map to the list of missing inputs instead.
pub fn derived_quantities(fx: &TableFixture) -> Result<BTreeMap<&'static str, std::result::Result<f64, Vec<String>>>> {
    let mut out: BTreeMap<&'static str, std::result::Result<f64, Vec<String>>> = BTreeMap::new();
    let (z, b) = (&fx.z, &fx.beta);

    out.insert("moment_of_inertia", Ok(moment_of_inertia(&fx.magnet)?));
    out.insert("dipole_moment", Ok(dipole_moment(&fx.magnet)?));

    let z_eq = fx.z_mode(z.equilibrium_temperature)?;
    let z_s_f = thermal_force_psd(&z_eq);
    out.insert("z_force_noise", Ok(z_s_f.sqrt()));
    out.insert("z_amplitude_equilibrium", Ok(thermal_amplitude(&z_eq, z.equilibrium_temperature)?));
    out.insert("z_amplitude_reference", Ok(thermal_amplitude(&z_eq, z.reference_temperature)?));
    out.insert("z_amplitude_feedback", Ok(thermal_amplitude(&z_eq, z.feedback_temperature)?));
    out.insert(
        "z_conversion_factor",
        match z.reference_voltage_rms {
            Some(v) => Ok(conversion_factor(v, &z_eq, z.reference_temperature)?),
            None => Err(vec!["z.reference_voltage_rms".to_string()]),
        },
    );
    let z_lim = min_temperature(&z_eq, &NoiseBudget::new(z_s_f, z.detection_noise.powi(2)))?;
    out.insert("z_min_temperature", Ok(z_lim.t_min));
    out.insert("z_min_amplitude", Ok(z_lim.min_amplitude));
    out.insert("z_min_phonons", Ok(z_lim.n_min));

    let b_eq = fx.beta_mode(b.equilibrium_temperature)?;
    let b_s_t = thermal_force_psd(&b_eq);
    out.insert("beta_torque_noise", Ok(b_s_t.sqrt()));
    out.insert("beta_amplitude_equilibrium", Ok(thermal_amplitude(&b_eq, b.equilibrium_temperature)?));
    out.insert("beta_amplitude_reference", Ok(thermal_amplitude(&b_eq, b.reference_temperature)?));
    out.insert("beta_amplitude_feedback", Ok(thermal_amplitude(&b_eq, b.feedback_temperature)?));
    out.insert(
        "beta_conversion_factor",
        match b.reference_voltage_rms {
            Some(v) => Ok(conversion_factor(v, &b_eq, b.reference_temperature)?),
            None => Err(vec!["beta.reference_voltage_rms".to_string()]),
        },
    );
    let b_lim = min_temperature(&b_eq, &NoiseBudget::new(b_s_t, b.detection_noise.powi(2)))?;
    out.insert("beta_min_temperature", Ok(b_lim.t_min));
    out.insert("beta_min_amplitude", Ok(b_lim.min_amplitude));
    out.insert("beta_min_phonons", Ok(b_lim.n_min));

    let z_fut = fx.z_mode(z.future_bath_temperature)?;
    let z_fut_s_f = thermal_force_psd(&z_fut);
    out.insert("z_future_force_noise", Ok(z_fut_s_f.sqrt()));
    out.insert(
        "z_future_detection_noise",
        match z.squid_flux_noise {
            Some(phi) => {
                let source = DipoleSource::along_x(dipole_moment(&fx.magnet)?)?;
                let coupling = coupling_dz(&fx.coil_geometry(Orientation::Perpendicular)?, &source)?;
                Ok(detector_noise_from_flux(phi * phi, coupling, fx.coil.flux_transfer_ratio)?.sqrt())
            }
            None => Err(vec!["z.squid_flux_noise".to_string()]),
        },
    );
    let z_fut_lim = min_temperature(&z_fut, &NoiseBudget::new(z_fut_s_f, z.future_detection_noise.powi(2)))?;
    out.insert("z_future_min_temperature", Ok(z_fut_lim.t_min));
    out.insert("z_future_min_amplitude", Ok(z_fut_lim.min_amplitude));
    out.insert("z_future_min_phonons", Ok(z_fut_lim.n_min));

    let b_fut = fx.beta_mode(b.future_bath_temperature)?;
    let b_fut_s_t = thermal_force_psd(&b_fut);
    out.insert("beta_future_torque_noise", Ok(b_fut_s_t.sqrt()));
    let b_fut_lim = min_temperature(&b_fut, &NoiseBudget::new(b_fut_s_t, b.future_detection_noise.powi(2)))?;
    out.insert("beta_future_min_temperature", Ok(b_fut_lim.t_min));
    out.insert("beta_future_min_amplitude", Ok(b_fut_lim.min_amplitude));
    out.insert("beta_future_min_phonons", Ok(b_fut_lim.n_min));
    Ok(out)
}

/// Recompute every table row and compare with its published value.
pub fn table_report(fx: &TableFixture, tolerance: f64) -> Result<TableReport> {
    if !(tolerance >= 0.0) {
        return Err(Error::invalid(format!("tolerance must be non-negative, got {tolerance}")));
    }
    let derived = derived_quantities(fx)?;
    let rows = fx
        .rows
        .iter()
        .map(|row| {
            let (computed, missing) = match derived.get(row.key.as_str()) {
                Some(Ok(v)) => (Some(*v), vec![]),
                Some(Err(m)) => (None, m.clone()),
                None => (None, vec![format!("no derivation for '{}'", row.key)]),
            };
            let deviation = computed.map(|c| (c - row.value) / row.value);
            RowResult {
                key: row.key.clone(),
                label: row.label.clone(),
                symbol: row.symbol.clone(),
                unit: row.unit.clone(),
                reference: row.value,
                computed,
                deviation,
                within_tolerance: deviation.map(|d| d.abs() <= tolerance),
                missing,
            }
        })
        .collect();
    Ok(TableReport { tolerance, rows })
}
