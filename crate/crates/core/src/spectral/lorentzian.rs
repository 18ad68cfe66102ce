use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::welch::PsdResult;
use crate::error::{Error, Result};

/// Damped-oscillator response
///
/// ```text
/// S(f) = D / ((ω₀² − ω²)² + Γ²ω²),   ω = 2πf
/// ```
///
/// in (unit)²/Hz. For a thermally driven mode `D = 4·k_B·T·Γ₀/inertia`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LorentzianFit {
    pub omega0: f64,
    pub gamma_total: f64,
    pub drive_strength: f64,
    /// Covariance of (omega0, gamma_total, drive_strength).
    pub covariance: [[f64; 3]; 3],
    /// Euclidean norm of the log-space residuals.
    pub residual_norm: f64,
    pub iterations: usize,
}

impl LorentzianFit {
    pub fn evaluate(&self, freq_hz: f64) -> f64 {
        lorentzian(freq_hz, self.omega0, self.gamma_total, self.drive_strength)
    }

    pub fn quality_factor(&self) -> f64 {
        self.omega0 / self.gamma_total
    }

    /// 1σ error of Q propagated from the covariance.
    pub fn quality_factor_error(&self) -> f64 {
        let q = self.quality_factor();
        let c = &self.covariance;
        let rel = c[0][0] / (self.omega0 * self.omega0) + c[1][1] / (self.gamma_total * self.gamma_total)
            - 2.0 * c[0][1] / (self.omega0 * self.gamma_total);
        q * rel.max(0.0).sqrt()
    }

    /// Integral of the model over all frequencies, D/(4Γω₀²).
    pub fn variance(&self) -> f64 {
        self.drive_strength / (4.0 * self.gamma_total * self.omega0 * self.omega0)
    }

    pub fn frequency_hz(&self) -> f64 {
        self.omega0 / (2.0 * PI)
    }
}

pub fn lorentzian(freq_hz: f64, omega0: f64, gamma: f64, drive: f64) -> f64 {
    let w = 2.0 * PI * freq_hz;
    let d = omega0 * omega0 - w * w;
    drive / (d * d + gamma * gamma * w * w)
}

/// Optional starting point `(omega0, gamma_total, drive_strength)`.
pub type InitialGuess = (f64, f64, f64);

const MAX_ITERATIONS: usize = 200;

/// Least-squares fit of the damped-oscillator response to `psd` within the
/// band `[f_lo, f_hi]` Hz. Residuals are taken in log space; parameters are
/// (ω₀, ln Γ, ln D) internally so Γ and D stay positive.
pub fn fit_lorentzian(psd: &PsdResult, band: (f64, f64), initial: Option<InitialGuess>) -> Result<LorentzianFit> {
    let (f_lo, f_hi) = band;
    let pts: Vec<(f64, f64)> = psd
        .frequencies
        .iter()
        .zip(&psd.values)
        .filter(|(f, _)| **f >= f_lo && **f <= f_hi && **f > 0.0)
        .map(|(f, v)| (2.0 * PI * f, *v))
        .collect();
    if pts.len() < 10 {
        return Err(Error::InsufficientData(format!("fit band holds {} bins, need at least 10", pts.len())));
    }
    if pts.iter().any(|(_, v)| !(*v > 0.0)) {
        return Err(Error::Fit("PSD values in the fit band must be positive".into()));
    }
    let peak = (0..pts.len()).max_by(|&a, &b| pts[a].1.total_cmp(&pts[b].1)).unwrap();
    if peak == 0 || peak == pts.len() - 1 {
        return Err(Error::Fit("no local maximum inside the fit band".into()));
    }

    let (w0, g0, d0) = match initial {
        Some(g) => g,
        None => guess(&pts, peak, psd.df()),
    };
    if !(w0 > 0.0 && g0 > 0.0 && d0 > 0.0) {
        return Err(Error::invalid("initial guess must be positive"));
    }
    let mut p = Vector3::new(w0, g0.ln(), d0.ln());
    let mut rss = residual_sum(&pts, &p);
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let (jtj, jtr) = normal_equations(&pts, &p);
        let mut improved = false;
        for _ in 0..30 {
            let mut a = jtj;
            for i in 0..3 {
                a[(i, i)] *= 1.0 + lambda;
            }
            let Some(step) = a.lu().solve(&jtr) else {
                lambda *= 10.0;
                continue;
            };
            let trial = p + step;
            let trial_rss = if trial[0] > 0.0 { residual_sum(&pts, &trial) } else { f64::INFINITY };
            if trial_rss < rss {
                let rel_step = (step[0] / trial[0]).abs().max(step[1].abs()).max(step[2].abs());
                let rel_drop = (rss - trial_rss) / rss.max(f64::MIN_POSITIVE);
                p = trial;
                rss = trial_rss;
                lambda = (lambda * 0.3).max(1e-12);
                improved = true;
                if rel_step < 1e-10 || rel_drop < 1e-14 {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        if !improved || converged {
            // no downhill step left means we sit at the minimum to working precision
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NonConvergence { iterations, residual: rss.sqrt() });
    }

    let (jtj, _) = normal_equations(&pts, &p);
    let dof = (pts.len() - 3).max(1) as f64;
    let sigma2 = rss / dof;
    let cov_log = jtj.try_inverse().map(|m| m * sigma2).unwrap_or_else(|| Matrix3::from_element(f64::NAN));
    let (omega0, gamma, drive) = (p[0], p[1].exp(), p[2].exp());
    let scale = Vector3::new(1.0, gamma, drive);
    let mut covariance = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            covariance[i][j] = cov_log[(i, j)] * scale[i] * scale[j];
        }
    }
    if !(gamma > 0.0 && omega0 > 0.0) {
        return Err(Error::Fit("fit left the physical parameter range".into()));
    }
    Ok(LorentzianFit {
        omega0,
        gamma_total: gamma,
        drive_strength: drive,
        covariance,
        residual_norm: rss.sqrt(),
        iterations,
    })
}

fn guess(pts: &[(f64, f64)], peak: usize, df: f64) -> InitialGuess {
    let (w_peak, s_peak) = pts[peak];
    let half = s_peak / 2.0;
    let mut lo = peak;
    while lo > 0 && pts[lo].1 > half {
        lo -= 1;
    }
    let mut hi = peak;
    while hi < pts.len() - 1 && pts[hi].1 > half {
        hi += 1;
    }
    let gamma = (pts[hi].0 - pts[lo].0).max(2.0 * PI * df) / 2.0;
    let gamma = gamma.max(1e-3 * 2.0 * PI * df);
    (w_peak, gamma, s_peak * gamma * gamma * w_peak * w_peak)
}

fn log_model(w: f64, p: &Vector3<f64>) -> (f64, Vector3<f64>) {
    let (w0, g2) = (p[0], (2.0 * p[1]).exp());
    let d = w0 * w0 - w * w;
    let den = d * d + g2 * w * w;
    let value = p[2] - den.ln();
    let grad = Vector3::new(-4.0 * d * w0 / den, -2.0 * g2 * w * w / den, 1.0);
    (value, grad)
}

fn residual_sum(pts: &[(f64, f64)], p: &Vector3<f64>) -> f64 {
    pts.iter()
        .map(|(w, s)| {
            let r = s.ln() - log_model(*w, p).0;
            r * r
        })
        .sum()
}

fn normal_equations(pts: &[(f64, f64)], p: &Vector3<f64>) -> (Matrix3<f64>, Vector3<f64>) {
    let mut jtj = Matrix3::zeros();
    let mut jtr = Vector3::zeros();
    for (w, s) in pts {
        let (m, g) = log_model(*w, p);
        let r = s.ln() - m;
        jtj += g * g.transpose();
        jtr += g * r;
    }
    (jtj, jtr)
}
