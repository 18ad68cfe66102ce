//! Static levitation of a cylindrical magnet above an infinite superconducting
//! plane, using the image-dipole potential
//!
//! ```text
//! U(z, β) = μ₀μ²/(64π z³)·(1 + sin²β) + m·g·z
//! ```
//!
//! Only the vertical (`z`) and tilt (`β`) modes have closed forms here. The
//! lateral modes depend on the well walls and have to be supplied by the user.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::constants::{MU_0, STANDARD_GRAVITY};
use crate::error::{Error, Result};

/// Relative mass/density mismatch above which a warning is logged.
const DENSITY_WARN_TOLERANCE: f64 = 0.05;
/// Allowed disagreement between M and B_r/μ₀ when both are given.
const MAGNETIZATION_TOLERANCE: f64 = 0.01;

/// Geometry, mass and magnetization of the levitated cylinder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MagnetSpec {
    /// kg
    pub mass: f64,
    /// m
    pub radius: f64,
    /// m (cylinder length along its axis)
    pub thickness: f64,
    /// kg/m³, optional; only used for the consistency check.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub density: Option<f64>,
    /// A/m
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub magnetization: Option<f64>,
    /// T
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub residual_flux_density: Option<f64>,
}

impl MagnetSpec {
    pub fn new(mass: f64, radius: f64, thickness: f64) -> Self {
        MagnetSpec { mass, radius, thickness, density: None, magnetization: None, residual_flux_density: None }
    }

    pub fn with_density(mut self, density: f64) -> Self {
        self.density = Some(density);
        self
    }

    pub fn with_magnetization(mut self, magnetization: f64) -> Self {
        self.magnetization = Some(magnetization);
        self
    }

    pub fn with_residual_flux_density(mut self, b_r: f64) -> Self {
        self.residual_flux_density = Some(b_r);
        self
    }

    /// The magnet of the reference experiment: 23 µg, 100 µm radius,
    /// 100 µm thick, ρ = 7430 kg/m³, M = 4.4e5 A/m.
    pub fn reference() -> Self {
        MagnetSpec::new(23e-9, 100e-6, 100e-6).with_density(7430.0).with_magnetization(4.4e5)
    }

    pub fn volume(&self) -> f64 {
        PI * self.radius * self.radius * self.thickness
    }

    /// Relative deviation of `mass` from `density·volume`, if a density is set.
    pub fn density_mismatch(&self) -> Option<f64> {
        self.density.map(|rho| (self.mass - rho * self.volume()).abs() / (rho * self.volume()))
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("mass", self.mass), ("radius", self.radius), ("thickness", self.thickness)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("magnet {name} must be positive, got {v}")));
            }
        }
        if let Some(rho) = self.density {
            if !(rho > 0.0) {
                return Err(Error::invalid(format!("magnet density must be positive, got {rho}")));
            }
        }
        match (self.magnetization, self.residual_flux_density) {
            (None, None) => return Err(Error::invalid("magnet needs either magnetization or residual_flux_density")),
            (Some(m), Some(b_r)) => {
                let from_br = b_r / MU_0;
                let scale = m.abs().max(from_br.abs());
                if scale > 0.0 && (m - from_br).abs() > MAGNETIZATION_TOLERANCE * scale {
                    return Err(Error::invalid(format!(
                        "magnetization {m:.4e} A/m disagrees with B_r/μ₀ = {from_br:.4e} A/m"
                    )));
                }
            }
            _ => {}
        }
        if let Some(m) = self.magnetization {
            if !(m >= 0.0 && m.is_finite()) {
                return Err(Error::invalid(format!("magnetization must be non-negative, got {m}")));
            }
        }
        if let Some(b) = self.residual_flux_density {
            if !(b >= 0.0 && b.is_finite()) {
                return Err(Error::invalid(format!("residual flux density must be non-negative, got {b}")));
            }
        }
        if let Some(dev) = self.density_mismatch() {
            if dev > DENSITY_WARN_TOLERANCE {
                log::warn!("magnet mass {:.4e} kg differs from density × volume by {:.1}%", self.mass, 100.0 * dev);
            }
        }
        Ok(())
    }

    /// Magnetization in A/m, taken from `magnetization` or derived from B_r/μ₀.
    pub fn resolved_magnetization(&self) -> f64 {
        self.magnetization.or_else(|| self.residual_flux_density.map(|b| b / MU_0)).unwrap_or(0.0)
    }
}

/// Perpendicular moment of inertia of a solid cylinder, (1/12)·m·(d² + 3r²).
pub fn cylinder_moment_of_inertia(mass: f64, radius: f64, thickness: f64) -> f64 {
    mass * (thickness * thickness + 3.0 * radius * radius) / 12.0
}

/// Dipole moment μ = M·V (A·m²).
pub fn dipole_moment(spec: &MagnetSpec) -> Result<f64> {
    spec.validate()?;
    Ok(spec.resolved_magnetization() * spec.volume())
}

/// Moment of inertia about a diameter (kg·m²).
pub fn moment_of_inertia(spec: &MagnetSpec) -> Result<f64> {
    spec.validate()?;
    Ok(cylinder_moment_of_inertia(spec.mass, spec.radius, spec.thickness))
}

/// Equilibrium state and small-oscillation frequencies of the trap.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrapSolution {
    pub z0: f64,
    pub beta0: f64,
    pub omega_z: f64,
    pub omega_beta: f64,
    pub dipole_moment: f64,
    pub moment_of_inertia: f64,
}

/// Image-method trap model for one magnet.
#[derive(Debug, Clone, PartialEq)]
pub struct TrapModel {
    magnet: MagnetSpec,
    gravity: f64,
}

impl TrapModel {
    pub fn new(magnet: MagnetSpec) -> Result<Self> {
        magnet.validate()?;
        Ok(TrapModel { magnet, gravity: STANDARD_GRAVITY })
    }

    pub fn with_gravity(mut self, gravity: f64) -> Result<Self> {
        if !(gravity > 0.0 && gravity.is_finite()) {
            return Err(Error::invalid(format!("gravity must be positive, got {gravity}")));
        }
        self.gravity = gravity;
        Ok(self)
    }

    pub fn magnet(&self) -> &MagnetSpec {
        &self.magnet
    }

    pub fn gravity(&self) -> f64 {
        self.gravity
    }

    fn mu(&self) -> f64 {
        self.magnet.resolved_magnetization() * self.magnet.volume()
    }

    /// μ₀μ²/(64π), the strength of the image interaction.
    fn image_strength(&self) -> f64 {
        let mu = self.mu();
        MU_0 * mu * mu / (64.0 * PI)
    }

    /// Potential energy (J) at height `z` and tilt `beta`.
    pub fn potential_energy(&self, z: f64, beta: f64) -> Result<f64> {
        if !(z > 0.0) {
            return Err(Error::Domain(format!("image potential diverges at z = {z}; height must be positive")));
        }
        let s = beta.sin();
        Ok(self.image_strength() / (z * z * z) * (1.0 + s * s) + self.magnet.mass * self.gravity * z)
    }

    /// Closed-form equilibrium height z₀ = (3μ₀μ²/(64π m g))^{1/4}.
    pub fn equilibrium_height(&self) -> f64 {
        (3.0 * self.image_strength() / (self.magnet.mass * self.gravity)).powf(0.25)
    }

    pub fn moment_of_inertia(&self) -> f64 {
        cylinder_moment_of_inertia(self.magnet.mass, self.magnet.radius, self.magnet.thickness)
    }

    /// Spring constant ∂²U/∂z² at the equilibrium, which reduces to 4mg/z₀.
    pub fn k_z(&self) -> f64 {
        let z0 = self.equilibrium_height();
        12.0 * self.image_strength() / z0.powi(5)
    }

    /// Angular spring constant ∂²U/∂β² at the equilibrium, 2μ₀μ²/(64π z₀³).
    pub fn k_beta(&self) -> f64 {
        let z0 = self.equilibrium_height();
        2.0 * self.image_strength() / z0.powi(3)
    }

    /// (ω_z, ω_β) in rad/s.
    pub fn mode_frequencies(&self) -> Result<(f64, f64)> {
        let z0 = self.equilibrium_height();
        if !(z0 > 0.0) {
            return Err(Error::Domain("zero dipole moment: the magnet does not levitate".into()));
        }
        let g = self.gravity;
        let m = self.magnet.mass;
        let omega_z = (4.0 * g / z0).sqrt();
        let omega_beta = (2.0 * z0 * g * m / (3.0 * self.moment_of_inertia())).sqrt();
        Ok((omega_z, omega_beta))
    }

    pub fn solve(&self) -> Result<TrapSolution> {
        let (omega_z, omega_beta) = self.mode_frequencies()?;
        Ok(TrapSolution {
            z0: self.equilibrium_height(),
            beta0: 0.0,
            omega_z,
            omega_beta,
            dipole_moment: self.mu(),
            moment_of_inertia: self.moment_of_inertia(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reference_model() -> TrapModel {
        TrapModel::new(MagnetSpec::reference()).unwrap()
    }

    /// Golden-section minimisation, kept independent of the closed forms.
    fn golden_min(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
        let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
        let mut c = b - inv_phi * (b - a);
        let mut d = a + inv_phi * (b - a);
        while (b - a).abs() > tol {
            if f(c) < f(d) {
                b = d;
            } else {
                a = c;
            }
            c = b - inv_phi * (b - a);
            d = a + inv_phi * (b - a);
        }
        0.5 * (a + b)
    }

    #[test]
    fn reference_dipole_moment() {
        let mu = dipole_moment(&MagnetSpec::reference()).unwrap();
        assert!((mu - 1.4e-6).abs() / 1.4e-6 < 0.02, "mu = {mu}");
    }

    #[test]
    fn zero_magnetization_gives_zero_moment() {
        let spec = MagnetSpec::new(23e-9, 100e-6, 100e-6).with_magnetization(0.0);
        assert_eq!(dipole_moment(&spec).unwrap(), 0.0);
        let model = TrapModel::new(spec).unwrap();
        assert_eq!(model.equilibrium_height(), 0.0);
        assert!(model.mode_frequencies().is_err());
    }

    #[test]
    fn half_radius_moment_matches_direct_volume() {
        let spec = MagnetSpec::new(5e-9, 50e-6, 100e-6).with_magnetization(4.4e5);
        let direct = 4.4e5 * std::f64::consts::PI * 5e-5 * 5e-5 * 1e-4;
        let mu = dipole_moment(&spec).unwrap();
        assert!((mu - direct).abs() <= 1e-15 * direct);
    }

    #[test]
    fn residual_flux_density_alternative() {
        let b_r = 4.4e5 * MU_0;
        let a = MagnetSpec::new(23e-9, 100e-6, 100e-6).with_residual_flux_density(b_r);
        let b = MagnetSpec::reference();
        let rel = (dipole_moment(&a).unwrap() - dipole_moment(&b).unwrap()).abs() / dipole_moment(&b).unwrap();
        assert!(rel < 1e-12);
        // both given and consistent
        assert!(b.clone().with_residual_flux_density(b_r * 1.005).validate().is_ok());
        // both given and inconsistent
        assert!(b.with_residual_flux_density(b_r * 1.05).validate().is_err());
    }

    #[test]
    fn validation_rejects_bad_specs() {
        assert!(MagnetSpec::new(0.0, 1e-4, 1e-4).with_magnetization(1.0).validate().is_err());
        assert!(MagnetSpec::new(1e-9, -1e-4, 1e-4).with_magnetization(1.0).validate().is_err());
        assert!(MagnetSpec::new(1e-9, 1e-4, 0.0).with_magnetization(1.0).validate().is_err());
        assert!(MagnetSpec::new(1e-9, 1e-4, 1e-4).validate().is_err());
    }

    #[test]
    fn density_mismatch_only_warns() {
        let spec = MagnetSpec::reference().with_density(9000.0);
        assert!(spec.density_mismatch().unwrap() > 0.05);
        assert!(spec.validate().is_ok());
        // the reference magnet is within rounding of ρV
        assert!(MagnetSpec::reference().density_mismatch().unwrap() < 0.05);
    }

    #[test]
    fn moment_of_inertia_values() {
        let i = moment_of_inertia(&MagnetSpec::reference()).unwrap();
        assert!((i - 7.8e-17).abs() / 7.8e-17 < 0.05, "I = {i}");
        assert_eq!(cylinder_moment_of_inertia(0.0, 1e-4, 1e-4), 0.0);
        let disk = cylinder_moment_of_inertia(23e-9, 100e-6, 0.0);
        assert!((disk - 5.75e-17).abs() < 1e-30);
    }

    #[test]
    fn potential_rejects_non_positive_height() {
        let m = reference_model();
        assert!(matches!(m.potential_energy(0.0, 0.0), Err(Error::Domain(_))));
        assert!(m.potential_energy(-1e-3, 0.0).is_err());
    }

    #[test]
    fn tilt_raises_energy() {
        let m = reference_model();
        for z in [1e-4, 6e-4, 3e-3] {
            let flat = m.potential_energy(z, 0.0).unwrap();
            let tilted = m.potential_energy(z, std::f64::consts::FRAC_PI_2).unwrap();
            assert!(flat < tilted);
        }
    }

    #[test]
    fn equilibrium_height_matches_golden_section_minimum() {
        let m = reference_model();
        let z_min = golden_min(|z| m.potential_energy(z, 0.0).unwrap(), 1e-4, 1e-2, 1e-13);
        let z0 = m.equilibrium_height();
        assert!((z_min - z0).abs() < 1e-9, "oracle {z_min} vs closed form {z0}");
        // evaluating the closed form with the reference inputs
        assert!((z0 - 0.635e-3).abs() / 0.635e-3 < 0.01, "z0 = {z0}");
    }

    #[test]
    fn equilibrium_is_stationary_and_stable() {
        let m = reference_model();
        let z0 = m.equilibrium_height();
        let h = 1e-6 * z0;
        let u = |z: f64, b: f64| m.potential_energy(z, b).unwrap();
        let mg = m.magnet().mass * m.gravity();
        let du = (u(z0 + h, 0.0) - u(z0 - h, 0.0)) / (2.0 * h);
        assert!(du.abs() < 1e-6 * mg, "dU/dz = {du}");
        let d2u = (u(z0 + h, 0.0) - 2.0 * u(z0, 0.0) + u(z0 - h, 0.0)) / (h * h);
        assert!(d2u > 0.0);
        let (wz, wb) = m.mode_frequencies().unwrap();
        assert!((wz * wz * m.magnet().mass - d2u).abs() / d2u < 1e-3);
        assert!((m.k_z() - d2u).abs() / d2u < 1e-3);

        let hb = 1e-4;
        let d2b = (u(z0, hb) - 2.0 * u(z0, 0.0) + u(z0, -hb)) / (hb * hb);
        assert!(d2b > 0.0);
        let i = m.moment_of_inertia();
        assert!((wb * wb * i - d2b).abs() / d2b < 1e-3, "{} vs {}", wb * wb * i, d2b);
        assert!((m.k_beta() - d2b).abs() / d2b < 1e-3);
    }

    #[test]
    fn analytic_frequencies_match_reference_values() {
        let (wz, wb) = reference_model().mode_frequencies().unwrap();
        let fz = wz / (2.0 * PI);
        let fb = wb / (2.0 * PI);
        assert!((fz - 39.7).abs() / 39.7 < 0.01, "f_z = {fz}");
        assert!((fb - 175.4).abs() / 175.4 < 0.01, "f_beta = {fb}");
        // measured 42.4 / 178.8 Hz within 10%
        assert!((42.4 - fz).abs() / fz < 0.10);
        assert!((178.8 - fb).abs() / fb < 0.10);
    }

    #[test]
    fn doubling_moment_scales_height_by_sqrt2() {
        let a = TrapModel::new(MagnetSpec::reference()).unwrap();
        let b = TrapModel::new(MagnetSpec::reference().with_magnetization(8.8e5)).unwrap();
        let ratio = b.equilibrium_height() / a.equilibrium_height();
        assert!((ratio - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn quadrupling_gravity_rescales_omega_z() {
        let base = reference_model();
        let heavy = reference_model().with_gravity(4.0 * STANDARD_GRAVITY).unwrap();
        // re-evaluate z0(g) and ω_z(z0, g) by hand
        let z0_heavy = (3.0 * MU_0 * dipole_moment(base.magnet()).unwrap().powi(2)
            / (64.0 * PI * base.magnet().mass * 4.0 * STANDARD_GRAVITY))
            .powf(0.25);
        let wz_heavy = (4.0 * 4.0 * STANDARD_GRAVITY / z0_heavy).sqrt();
        let (wz0, _) = base.mode_frequencies().unwrap();
        let (wz1, _) = heavy.mode_frequencies().unwrap();
        assert!((wz1 - wz_heavy).abs() / wz_heavy < 1e-12);
        let expected = 4f64.powf(0.625);
        assert!((wz1 / wz0 - expected).abs() < 1e-12);
    }

    #[test]
    fn solution_invariants() {
        let s = reference_model().solve().unwrap();
        assert!(s.z0 > 0.0);
        assert_eq!(s.beta0, 0.0);
        assert!(s.omega_z > 0.0 && s.omega_beta > 0.0);
    }
}
