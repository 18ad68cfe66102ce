//! Flux coupling between the levitated dipole and a pick-up coil.
//!
//! The coil is a small loop of `N` turns and radius `R` whose centre sits at
//! lateral offset `x` and height `z` from the dipole. The closed forms used
//! for the flux and its z-derivative (with `r² = x² + z²`,
//! `K = N·μ₀·R²·μ/4`) are
//!
//! ```text
//! perpendicular:  Φ⊥ = 3K·x·z / r⁴
//!                 ∂Φ⊥/∂z = 3K·x·(x² − 3z²) / r⁶
//! parallel:       ∂Φ∥/∂z = K·(3z/r⁵ − 12x²z/r⁶)
//! ```
//!
//! The parallel flux has two forms. [`FluxForm::Printed`] is
//! `K·(3x²/r⁴ − 1/r⁵)`, whose two terms do not share dimensions and whose
//! derivative is not the parallel coupling above. [`FluxForm::DerivativeConsistent`]
//! is `K·(3x²/r⁴ − 1/r³)`, the antiderivative of the coupling. The coupling
//! itself is always the closed form above; finite-difference checks use the
//! consistent form.
//!
//! These closed forms are not the point-dipole flux `N·πR²·(B·n̂)` at the
//! coil centre: for a dipole along x̂ and normal ẑ the latter is
//! `3K·x·z/r⁵`, so the perpendicular closed form equals it times `r` (in
//! metres). [`point_dipole_flux`] evaluates the field product for comparison.

use std::f64::consts::PI;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constants::{MU0_OVER_4PI, MU_0};
use crate::error::{Error, Result};

pub type Vec3 = [f64; 3];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DipoleSource {
    /// Magnitude µ (A·m²).
    pub moment: f64,
    /// Unit vector along the moment.
    pub axis: Vec3,
}

impl DipoleSource {
    /// Normalises `axis`.
    pub fn new(moment: f64, axis: Vec3) -> Result<Self> {
        if !(moment >= 0.0 && moment.is_finite()) {
            return Err(Error::invalid(format!("dipole moment must be non-negative, got {moment}")));
        }
        let n = norm(axis);
        if !(n > 0.0 && n.is_finite()) {
            return Err(Error::invalid("dipole axis must be a non-zero vector"));
        }
        Ok(DipoleSource { moment, axis: scale(axis, 1.0 / n) })
    }

    /// Moment along x̂, the orientation assumed by the closed forms.
    pub fn along_x(moment: f64) -> Result<Self> {
        Self::new(moment, [1.0, 0.0, 0.0])
    }

    pub fn vector(&self) -> Vec3 {
        scale(self.axis, self.moment)
    }
}

/// Coil normal relative to the dipole axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Orientation {
    Perpendicular,
    Parallel,
}

impl Orientation {
    pub const BOTH: [Orientation; 2] = [Orientation::Perpendicular, Orientation::Parallel];

    pub fn as_str(self) -> &'static str {
        match self {
            Orientation::Perpendicular => "perpendicular",
            Orientation::Parallel => "parallel",
        }
    }

    /// Coil normal used by [`point_dipole_flux`] for a dipole along x̂.
    pub fn normal(self) -> Vec3 {
        match self {
            Orientation::Perpendicular => [0.0, 0.0, 1.0],
            Orientation::Parallel => [1.0, 0.0, 0.0],
        }
    }
}

impl fmt::Display for Orientation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Orientation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "perpendicular" | "perp" => Ok(Orientation::Perpendicular),
            "parallel" | "par" => Ok(Orientation::Parallel),
            other => Err(Error::invalid(format!("unknown coil orientation '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FluxForm {
    #[default]
    Printed,
    DerivativeConsistent,
}

impl FromStr for FluxForm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "printed" => Ok(FluxForm::Printed),
            "derivative_consistent" | "consistent" => Ok(FluxForm::DerivativeConsistent),
            other => Err(Error::invalid(format!("unknown flux form '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoilGeometry {
    pub turns: u32,
    pub loop_radius: f64,
    pub lateral_offset: f64,
    pub separation: f64,
    pub orientation: Orientation,
}

impl CoilGeometry {
    pub fn new(
        turns: u32,
        loop_radius: f64,
        lateral_offset: f64,
        separation: f64,
        orientation: Orientation,
    ) -> Result<Self> {
        let g = CoilGeometry { turns, loop_radius, lateral_offset, separation, orientation };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.turns < 1 {
            return Err(Error::invalid("coil needs at least one turn"));
        }
        if !(self.loop_radius > 0.0 && self.loop_radius.is_finite()) {
            return Err(Error::invalid(format!("loop radius must be positive, got {}", self.loop_radius)));
        }
        if !(self.separation > 0.0 && self.separation.is_finite()) {
            return Err(Error::invalid(format!("separation must be positive, got {}", self.separation)));
        }
        if !(self.lateral_offset >= 0.0 && self.lateral_offset.is_finite()) {
            return Err(Error::invalid(format!("lateral offset must be non-negative, got {}", self.lateral_offset)));
        }
        Ok(())
    }

    pub fn with_orientation(mut self, orientation: Orientation) -> Self {
        self.orientation = orientation;
        self
    }

    pub fn with_position(mut self, lateral_offset: f64, separation: f64) -> Self {
        self.lateral_offset = lateral_offset;
        self.separation = separation;
        self
    }

    /// The dipole approximation degrades when the coil is within five magnet
    /// radii.
    pub fn is_near_field(&self, magnet_radius: f64) -> bool {
        self.separation < 5.0 * magnet_radius
    }

    fn prefactor(&self, moment: f64) -> f64 {
        self.turns as f64 * MU_0 * self.loop_radius * self.loop_radius * moment / 4.0
    }
}

/// B(r) = (µ₀/4πr³)(3(µ·r̂)r̂ − µ).
pub fn dipole_field(source: &DipoleSource, position: Vec3) -> Result<Vec3> {
    let r = norm(position);
    if !(r > 0.0) {
        return Err(Error::Domain("dipole field is singular at the origin".into()));
    }
    let rhat = scale(position, 1.0 / r);
    let mu = source.vector();
    let proj = dot(mu, rhat);
    let c = MU0_OVER_4PI / (r * r * r);
    Ok([c * (3.0 * proj * rhat[0] - mu[0]), c * (3.0 * proj * rhat[1] - mu[1]), c * (3.0 * proj * rhat[2] - mu[2])])
}

/// Closed-form flux at signed offset `x` (odd/even symmetry checks need x < 0).
pub fn flux_closed_form(k: f64, orientation: Orientation, form: FluxForm, x: f64, z: f64) -> Result<f64> {
    let r2 = x * x + z * z;
    if !(r2 > 0.0) {
        return Err(Error::Domain("coil centre coincides with the dipole".into()));
    }
    let r = r2.sqrt();
    Ok(match (orientation, form) {
        (Orientation::Perpendicular, _) => 3.0 * k * x * z / (r2 * r2),
        (Orientation::Parallel, FluxForm::Printed) => k * (3.0 * x * x / (r2 * r2) - 1.0 / (r2 * r2 * r)),
        (Orientation::Parallel, FluxForm::DerivativeConsistent) => k * (3.0 * x * x / (r2 * r2) - 1.0 / (r2 * r)),
    })
}

/// Closed-form ∂Φ/∂z at signed offset `x`.
pub fn coupling_closed_form(k: f64, orientation: Orientation, x: f64, z: f64) -> Result<f64> {
    let r2 = x * x + z * z;
    if !(r2 > 0.0) {
        return Err(Error::Domain("coil centre coincides with the dipole".into()));
    }
    let r6 = r2 * r2 * r2;
    Ok(match orientation {
        Orientation::Perpendicular => 3.0 * k * x * (x * x - 3.0 * z * z) / r6,
        Orientation::Parallel => k * (3.0 * z / (r6 / r2.sqrt()) - 12.0 * x * x * z / r6),
    })
}

/// Flux through the coil (Wb) in the selected parallel form.
pub fn flux(geometry: &CoilGeometry, source: &DipoleSource, form: FluxForm) -> Result<f64> {
    geometry.validate()?;
    flux_closed_form(
        geometry.prefactor(source.moment),
        geometry.orientation,
        form,
        geometry.lateral_offset,
        geometry.separation,
    )
}

/// ∂Φ/∂z (Wb/m).
pub fn coupling_dz(geometry: &CoilGeometry, source: &DipoleSource) -> Result<f64> {
    geometry.validate()?;
    coupling_closed_form(
        geometry.prefactor(source.moment),
        geometry.orientation,
        geometry.lateral_offset,
        geometry.separation,
    )
}

/// Small-loop flux `N·πR²·(B·n̂)` with B evaluated at the coil centre
/// `(x, 0, z)` and the normal of [`Orientation::normal`].
pub fn point_dipole_flux(geometry: &CoilGeometry, source: &DipoleSource) -> Result<f64> {
    geometry.validate()?;
    let b = dipole_field(source, [geometry.lateral_offset, 0.0, geometry.separation])?;
    let area = PI * geometry.loop_radius * geometry.loop_radius;
    Ok(geometry.turns as f64 * area * dot(b, geometry.orientation.normal()))
}

/// Search box for [`optimize_geometry`]. Collapsed ranges (lo == hi) are allowed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeometryBounds {
    pub lateral_offset: (f64, f64),
    pub separation: (f64, f64),
    pub orientations: Vec<Orientation>,
}

impl GeometryBounds {
    pub fn validate(&self) -> Result<()> {
        let (xl, xh) = self.lateral_offset;
        let (zl, zh) = self.separation;
        if !(xl >= 0.0 && xl <= xh && xh.is_finite()) {
            return Err(Error::invalid(format!("empty lateral offset range [{xl}, {xh}]")));
        }
        if !(zl > 0.0 && zl <= zh && zh.is_finite()) {
            return Err(Error::invalid(format!(
                "separation range [{zl}, {zh}] must be non-empty with a positive lower bound"
            )));
        }
        if self.orientations.is_empty() {
            return Err(Error::invalid("no coil orientation to search"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CouplingPoint {
    pub lateral_offset: f64,
    pub separation: f64,
    pub orientation: Orientation,
    pub dphi_dz: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizedGeometry {
    pub geometry: CoilGeometry,
    /// |∂Φ/∂z| at the optimum (Wb/m).
    pub coupling: f64,
    /// Best |∂Φ/∂z| among the grid vertices.
    pub best_grid_coupling: f64,
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n <= 1 || lo == hi {
        return vec![lo];
    }
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

/// ∂Φ/∂z over a regular grid, orientation-major then x then z.
pub fn coupling_map(
    source: &DipoleSource,
    turns: u32,
    loop_radius: f64,
    bounds: &GeometryBounds,
    grid: usize,
) -> Result<Vec<CouplingPoint>> {
    bounds.validate()?;
    let template =
        CoilGeometry::new(turns, loop_radius, bounds.lateral_offset.0, bounds.separation.0, bounds.orientations[0])?;
    let xs = linspace(bounds.lateral_offset.0, bounds.lateral_offset.1, grid);
    let zs = linspace(bounds.separation.0, bounds.separation.1, grid);
    let mut cells = Vec::with_capacity(bounds.orientations.len() * xs.len() * zs.len());
    for &o in &bounds.orientations {
        for &x in &xs {
            for &z in &zs {
                cells.push((o, x, z));
            }
        }
    }
    cells
        .par_iter()
        .map(|&(o, x, z)| {
            let g = template.with_orientation(o).with_position(x, z);
            Ok(CouplingPoint { lateral_offset: x, separation: z, orientation: o, dphi_dz: coupling_dz(&g, source)? })
        })
        .collect()
}

pub fn write_coupling_csv<W: Write>(points: &[CouplingPoint], mut w: W) -> Result<()> {
    writeln!(w, "x_m,z_m,orientation,dphi_dz_wb_per_m")?;
    for p in points {
        writeln!(w, "{:?},{:?},{},{:?}", p.lateral_offset, p.separation, p.orientation, p.dphi_dz)?;
    }
    Ok(())
}

const GOLDEN: f64 = 0.618_033_988_749_894_9;

/// Maximise `f` on `[lo, hi]` by golden-section search, returning the best
/// of the bracket interior and both ends.
fn golden_max(f: impl Fn(f64) -> f64, lo: f64, hi: f64, tol: f64) -> (f64, f64) {
    if hi <= lo {
        return (lo, f(lo));
    }
    let (mut a, mut b) = (lo, hi);
    let mut c = b - GOLDEN * (b - a);
    let mut d = a + GOLDEN * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a) > tol {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - GOLDEN * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + GOLDEN * (b - a);
            fd = f(d);
        }
    }
    let mid = 0.5 * (a + b);
    [(lo, f(lo)), (hi, f(hi)), (mid, f(mid))].into_iter().max_by(|p, q| p.1.total_cmp(&q.1)).unwrap()
}

/// Maximise |∂Φ/∂z| over the bounds: grid scan for each orientation, then
/// alternating golden-section refinement in x and z within one grid cell of
/// the best vertex. Deterministic.
pub fn optimize_geometry(
    source: &DipoleSource,
    turns: u32,
    loop_radius: f64,
    bounds: &GeometryBounds,
    grid: usize,
) -> Result<OptimizedGeometry> {
    let grid = grid.max(2);
    let map = coupling_map(source, turns, loop_radius, bounds, grid)?;
    let best = map
        .iter()
        .max_by(|a, b| a.dphi_dz.abs().total_cmp(&b.dphi_dz.abs()))
        .ok_or_else(|| Error::invalid("empty search grid"))?;
    let best_grid_coupling = best.dphi_dz.abs();
    let template = CoilGeometry::new(turns, loop_radius, best.lateral_offset, best.separation, best.orientation)?;
    let objective = |x: f64, z: f64| coupling_dz(&template.with_position(x, z), source).map(f64::abs).unwrap_or(0.0);

    let cell = |range: (f64, f64)| if grid > 1 { (range.1 - range.0) / (grid - 1) as f64 } else { 0.0 };
    let (cx, cz) = (cell(bounds.lateral_offset), cell(bounds.separation));
    let x_box = (
        (best.lateral_offset - cx).max(bounds.lateral_offset.0),
        (best.lateral_offset + cx).min(bounds.lateral_offset.1),
    );
    let z_box = ((best.separation - cz).max(bounds.separation.0), (best.separation + cz).min(bounds.separation.1));
    let (mut x, mut z, mut value) = (best.lateral_offset, best.separation, best_grid_coupling);
    for _ in 0..20 {
        let (nx, vx) = golden_max(|x| objective(x, z), x_box.0, x_box.1, 1e-9 * (1.0 + x_box.1));
        if vx > value {
            x = nx;
            value = vx;
        }
        let (nz, vz) = golden_max(|z| objective(x, z), z_box.0, z_box.1, 1e-9 * z_box.1);
        let improved = vz > value * (1.0 + 1e-12);
        if vz > value {
            z = nz;
            value = vz;
        }
        if !improved && vx <= value * (1.0 + 1e-12) {
            break;
        }
    }
    Ok(OptimizedGeometry { geometry: template.with_position(x, z), coupling: value, best_grid_coupling })
}

fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

fn scale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn reference(orientation: Orientation) -> CoilGeometry {
        CoilGeometry::new(15, 1e-3, 0.3e-3, 2.5e-3, orientation).unwrap()
    }

    fn source() -> DipoleSource {
        DipoleSource::along_x(1.4e-6).unwrap()
    }

    #[test]
    fn on_axis_and_equatorial_fields() {
        let s = DipoleSource::new(2.0, [0.0, 0.0, 3.0]).unwrap();
        let d = 0.01;
        let on = dipole_field(&s, [0.0, 0.0, d]).unwrap();
        let expected = 2.0 * MU_0 * 2.0 / (4.0 * PI * d.powi(3));
        assert!((on[2] - expected).abs() / expected < 1e-12);
        assert!(on[0].abs() < 1e-20 && on[1].abs() < 1e-20);
        let eq = dipole_field(&s, [d, 0.0, 0.0]).unwrap();
        assert!((eq[2] + expected / 2.0).abs() / expected < 1e-12);
        assert!(dipole_field(&s, [0.0; 3]).is_err());
    }

    #[test]
    fn reference_couplings() {
        let perp = coupling_dz(&reference(Orientation::Perpendicular), &source()).unwrap().abs();
        let par = coupling_dz(&reference(Orientation::Parallel), &source()).unwrap().abs();
        assert!((perp - 4.24e-10).abs() / 4.24e-10 < 0.05, "{perp}");
        assert!((par - 4.77e-7).abs() / 4.77e-7 < 0.05, "{par}");
        assert!((par / perp - 1100.0).abs() / 1100.0 < 0.05, "{}", par / perp);
    }

    #[test]
    fn parallel_coupling_dominated_by_first_term() {
        let g = reference(Orientation::Parallel);
        let (x, z) = (g.lateral_offset, g.separation);
        let r2 = x * x + z * z;
        let first = 3.0 * z / r2.powf(2.5);
        let second = 12.0 * x * x * z / r2.powi(3);
        assert!(second / first < 1e-3);
    }

    #[test]
    fn perpendicular_flux_symmetries() {
        let k = 1.0;
        assert_eq!(flux_closed_form(k, Orientation::Perpendicular, FluxForm::Printed, 0.0, 1e-3).unwrap(), 0.0);
        let a = flux_closed_form(k, Orientation::Perpendicular, FluxForm::Printed, 2e-4, 1e-3).unwrap();
        let b = flux_closed_form(k, Orientation::Perpendicular, FluxForm::Printed, -2e-4, 1e-3).unwrap();
        assert_eq!(a, -b);
        assert!(flux_closed_form(k, Orientation::Parallel, FluxForm::Printed, 0.0, 0.0).is_err());
    }

    #[test]
    fn perpendicular_closed_form_is_point_dipole_flux_times_distance() {
        for (x, z) in [(0.3e-3, 2.5e-3), (1e-3, 1e-3), (2e-3, 0.5e-3)] {
            let g = reference(Orientation::Perpendicular).with_position(x, z);
            let closed = flux(&g, &source(), FluxForm::Printed).unwrap();
            let oracle = point_dipole_flux(&g, &source()).unwrap();
            let r = (x * x + z * z).sqrt();
            assert!((closed - oracle * r).abs() / closed.abs() < 1e-12);
        }
    }

    #[test]
    fn parallel_point_dipole_flux_has_expected_sign_structure() {
        // directly above the dipole the x̂ field is −µ₀µ/4πz³
        let g = reference(Orientation::Parallel).with_position(0.0, 2e-3);
        let f = point_dipole_flux(&g, &source()).unwrap();
        let expected = -15.0 * PI * 1e-6 * MU0_OVER_4PI * 1.4e-6 / 8e-9;
        assert!((f - expected).abs() / expected.abs() < 1e-12);
    }

    #[test]
    fn printed_parallel_form_differs_from_consistent_one() {
        let g = reference(Orientation::Parallel);
        let p = flux(&g, &source(), FluxForm::Printed).unwrap();
        let c = flux(&g, &source(), FluxForm::DerivativeConsistent).unwrap();
        assert!((p - c).abs() > 1e-3 * c.abs());
    }

    #[test]
    fn scaling_laws() {
        let g = reference(Orientation::Parallel);
        let base = coupling_dz(&g, &source()).unwrap();
        let doubled_n = CoilGeometry { turns: 30, ..g };
        assert!((coupling_dz(&doubled_n, &source()).unwrap() / base - 2.0).abs() < 1e-12);
        let doubled_r = CoilGeometry { loop_radius: 2e-3, ..g };
        assert!((coupling_dz(&doubled_r, &source()).unwrap() / base - 4.0).abs() < 1e-12);
        let doubled_mu = DipoleSource::along_x(2.8e-6).unwrap();
        assert!((coupling_dz(&g, &doubled_mu).unwrap() / base - 2.0).abs() < 1e-12);
    }

    #[test]
    fn optimum_is_parallel_at_closest_approach() {
        let bounds = GeometryBounds {
            lateral_offset: (0.3e-3, 0.3e-3),
            separation: (2.0e-3, 2.5e-3),
            orientations: Orientation::BOTH.to_vec(),
        };
        let opt = optimize_geometry(&source(), 15, 1e-3, &bounds, 11).unwrap();
        assert_eq!(opt.geometry.orientation, Orientation::Parallel);
        assert!((opt.geometry.separation - 2.0e-3).abs() < 1e-9);
        let map = coupling_map(&source(), 15, 1e-3, &bounds, 11).unwrap();
        assert!(map.iter().all(|p| opt.coupling >= p.dphi_dz.abs()));
    }

    #[test]
    fn collapsed_bounds_return_reference_geometry() {
        let bounds = GeometryBounds {
            lateral_offset: (0.3e-3, 0.3e-3),
            separation: (2.5e-3, 2.5e-3),
            orientations: vec![Orientation::Perpendicular],
        };
        let opt = optimize_geometry(&source(), 15, 1e-3, &bounds, 5).unwrap();
        assert_eq!(opt.geometry, reference(Orientation::Perpendicular));
        assert!((opt.coupling - 4.24e-10).abs() / 4.24e-10 < 0.05);
    }

    #[test]
    fn interior_optimum_found_by_refinement() {
        // |∂Φ⊥/∂z| ∝ x·|x² − 3z²|/r⁶ peaks at an interior x for fixed z
        let bounds = GeometryBounds {
            lateral_offset: (0.0, 3e-3),
            separation: (1e-3, 1e-3),
            orientations: vec![Orientation::Perpendicular],
        };
        let opt = optimize_geometry(&source(), 1, 1e-3, &bounds, 4).unwrap();
        assert!(opt.coupling >= opt.best_grid_coupling);
        let g = opt.geometry;
        let h = 1e-7;
        let f = |x: f64| coupling_dz(&g.with_position(x, g.separation), &source()).unwrap().abs();
        assert!(f(g.lateral_offset) >= f(g.lateral_offset + h));
        assert!(f(g.lateral_offset) >= f((g.lateral_offset - h).max(0.0)));
    }

    #[test]
    fn empty_bounds_rejected() {
        let bad = [
            GeometryBounds {
                lateral_offset: (1.0, 0.0),
                separation: (1e-3, 2e-3),
                orientations: Orientation::BOTH.to_vec(),
            },
            GeometryBounds {
                lateral_offset: (0.0, 1e-3),
                separation: (0.0, 2e-3),
                orientations: Orientation::BOTH.to_vec(),
            },
            GeometryBounds { lateral_offset: (0.0, 1e-3), separation: (1e-3, 2e-3), orientations: vec![] },
        ];
        for b in bad {
            assert!(optimize_geometry(&source(), 15, 1e-3, &b, 5).is_err());
        }
    }

    #[test]
    fn near_field_flag() {
        let g = reference(Orientation::Parallel);
        assert!(!g.is_near_field(100e-6));
        assert!(g.with_position(0.0, 400e-6).is_near_field(100e-6));
    }

    #[test]
    fn coupling_csv_header() {
        let pts = [CouplingPoint {
            lateral_offset: 1e-4,
            separation: 2e-3,
            orientation: Orientation::Parallel,
            dphi_dz: 1e-7,
        }];
        let mut buf = Vec::new();
        write_coupling_csv(&pts, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("x_m,z_m,orientation,dphi_dz_wb_per_m\n"));
        assert!(text.contains(",parallel,"));
    }

    fn central_difference(g: &CoilGeometry, s: &DipoleSource) -> f64 {
        let h = 1e-4 * g.separation;
        let up = flux(&g.with_position(g.lateral_offset, g.separation + h), s, FluxForm::DerivativeConsistent).unwrap();
        let dn = flux(&g.with_position(g.lateral_offset, g.separation - h), s, FluxForm::DerivativeConsistent).unwrap();
        (up - dn) / (2.0 * h)
    }

    proptest! {
        #[test]
        fn closed_form_matches_finite_difference(
            x in 0.0f64..5e-3, z in 0.2e-3f64..5e-3, par in any::<bool>(),
        ) {
            let o = if par { Orientation::Parallel } else { Orientation::Perpendicular };
            let g = CoilGeometry::new(15, 1e-3, x, z, o).unwrap();
            let exact = coupling_dz(&g, &source()).unwrap();
            let fd = central_difference(&g, &source());
            // near a zero of the coupling compare against the size of its terms
            let k = g.prefactor(1.4e-6);
            let r2 = x * x + z * z;
            let terms = match o {
                Orientation::Perpendicular => 3.0 * k * x * (x * x + 3.0 * z * z) / r2.powi(3),
                Orientation::Parallel => k * (3.0 * z / r2.powf(2.5) + 12.0 * x * x * z / r2.powi(3)),
            };
            let scale = exact.abs().max(terms);
            prop_assert!((exact - fd).abs() <= 1e-6 * scale, "exact {exact} fd {fd}");
        }

        #[test]
        fn field_is_divergence_free(
            px in -1e-2f64..1e-2, py in -1e-2f64..1e-2, pz in 1e-3f64..1e-2,
            ax in -1.0f64..1.0, ay in -1.0f64..1.0, az in 0.1f64..1.0,
        ) {
            let s = DipoleSource::new(1.4e-6, [ax, ay, az]).unwrap();
            let p = [px, py, pz];
            let r = norm(p);
            let h = 1e-5 * r;
            let mut div = 0.0;
            for i in 0..3 {
                let mut up = p;
                let mut dn = p;
                up[i] += h;
                dn[i] -= h;
                div += (dipole_field(&s, up).unwrap()[i] - dipole_field(&s, dn).unwrap()[i]) / (2.0 * h);
            }
            let b = norm(dipole_field(&s, p).unwrap());
            prop_assert!(div.abs() < 1e-6 * b / r);
        }
    }
}
