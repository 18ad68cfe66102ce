//! Physical constants (CODATA 2018 exact or recommended values).

/// Boltzmann constant (J/K).
pub const K_B: f64 = 1.380_649e-23;

/// Reduced Planck constant (J·s).
pub const HBAR: f64 = 1.054_571_817e-34;

/// Vacuum permeability (N/A²).
pub const MU_0: f64 = 1.256_637_062_12e-6;

/// Magnetic flux quantum h/2e (Wb).
pub const PHI_0: f64 = 2.067_833_848e-15;

/// Default gravitational acceleration (m/s²).
pub const STANDARD_GRAVITY: f64 = 9.81;

/// μ₀/4π, the prefactor of the dipole field.
pub const MU0_OVER_4PI: f64 = MU_0 / (4.0 * std::f64::consts::PI);
