//! Thermal-limit diagnostic on (Q, V_rms) pairs.
//!
//! A thermally limited mode has a Q-independent RMS. A mode driven by a
//! Q-independent external force (vibration) has variance ∝ Q, so V_rms/√Q is
//! constant instead. In log space the two regimes are
//!
//! ```text
//! thermal:    ln V = a
//! vibration:  ln V = b + ½·ln Q
//! ```
//!
//! and their asymptotes cross at ln Q_c = 2(a − b). The split between the
//! regimes is found by exhaustive two-segment least squares, and the split
//! model is only kept when it beats both single-regime fits after a BIC
//! penalty for the extra parameters.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Thermal,
    Vibration,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticReport {
    /// Q range of the points classified thermal-limited.
    pub thermal_region: Option<(f64, f64)>,
    pub vibration_region: Option<(f64, f64)>,
    pub crossover_q: Option<f64>,
    /// Per-point classification in the order of the input.
    pub classification: Vec<Regime>,
}

/// Classify each `(Q, V_rms)` point and locate the crossover.
pub fn thermal_limit_diagnostic(points: &[(f64, f64)]) -> Result<DiagnosticReport> {
    if points.len() < 4 {
        return Err(Error::InsufficientData(format!("diagnostic needs at least 4 points, got {}", points.len())));
    }
    if points.iter().any(|(q, v)| !(*q > 0.0 && *v > 0.0 && q.is_finite() && v.is_finite())) {
        return Err(Error::invalid("Q and V_rms must be positive and finite"));
    }
    let (q_min, q_max) = points.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), (q, _)| (lo.min(*q), hi.max(*q)));
    if (q_max / q_min).log10() < 2.0 {
        return Err(Error::InsufficientData(format!(
            "Q values span {:.2} decades, need at least 2",
            (q_max / q_min).log10()
        )));
    }

    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&i, &j| points[i].0.total_cmp(&points[j].0));
    let lq: Vec<f64> = order.iter().map(|&i| points[i].0.ln()).collect();
    let lv: Vec<f64> = order.iter().map(|&i| points[i].1.ln()).collect();
    // thermal residuals work on ln V, vibration residuals on ln V − ½ ln Q
    let lvib: Vec<f64> = lv.iter().zip(&lq).map(|(v, q)| v - 0.5 * q).collect();
    let n = lv.len();

    let level = |xs: &[f64]| -> (f64, f64) {
        if xs.is_empty() {
            return (0.0, 0.0);
        }
        let m = xs.iter().sum::<f64>() / xs.len() as f64;
        (m, xs.iter().map(|x| (x - m).powi(2)).sum())
    };
    let scale = lv.iter().map(|v| v * v).sum::<f64>() / n as f64;
    let floor = 1e-12 * scale.max(1.0);
    let bic = |rss: f64, params: f64| n as f64 * (rss / n as f64 + floor).ln() + params * (n as f64).ln();

    let (_, rss_thermal) = level(&lv);
    let (_, rss_vib) = level(&lvib);
    let mut best_split: Option<(usize, f64, f64, f64)> = None;
    // at least two points on each side so each level is constrained
    for k in 2..=n.saturating_sub(2) {
        let (a, ra) = level(&lv[..k]);
        let (b, rb) = level(&lvib[k..]);
        let rss = ra + rb;
        if best_split.is_none_or(|(_, _, _, r)| rss < r) {
            best_split = Some((k, a, b, rss));
        }
    }

    let scores = [
        (bic(rss_thermal, 1.0), 0usize),
        (bic(rss_vib, 1.0), 1),
        (best_split.map_or(f64::INFINITY, |(_, _, _, r)| bic(r, 3.0)), 2),
    ];
    let winner = scores.iter().min_by(|a, b| a.0.total_cmp(&b.0)).unwrap().1;

    let (split, crossover) = match (winner, best_split) {
        (0, _) => (n, None),
        (1, _) => (0, None),
        (_, Some((k, a, b, _))) => (k, Some((2.0 * (a - b)).exp())),
        _ => unreachable!("split model scored without a split"),
    };

    let mut classification = vec![Regime::Thermal; n];
    for (rank, &idx) in order.iter().enumerate() {
        classification[idx] = if rank < split { Regime::Thermal } else { Regime::Vibration };
    }
    let sorted_q: Vec<f64> = order.iter().map(|&i| points[i].0).collect();
    let region = |r: std::ops::Range<usize>| (!r.is_empty()).then(|| (sorted_q[r.start], sorted_q[r.end - 1]));
    Ok(DiagnosticReport {
        thermal_region: region(0..split),
        vibration_region: region(split..n),
        crossover_q: crossover,
        classification,
    })
}

/// Synthetic (Q, V_rms) data with thermal level `v_thermal` and a vibration
/// contribution added in quadrature that equals it at `crossover_q`.
pub fn synthetic_points(q_values: &[f64], v_thermal: f64, crossover_q: f64) -> Vec<(f64, f64)> {
    q_values.iter().map(|&q| (q, v_thermal * (1.0 + q / crossover_q).sqrt())).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
        (0..n).map(|i| 10f64.powf(lo + (hi - lo) * i as f64 / (n - 1) as f64)).collect()
    }

    #[test]
    fn sharp_crossover_at_1e4() {
        let pts: Vec<(f64, f64)> =
            log_grid(2.0, 7.0, 21).into_iter().map(|q| (q, if q < 1e4 { 1.0 } else { (q / 1e4).sqrt() })).collect();
        let r = thermal_limit_diagnostic(&pts).unwrap();
        let qc = r.crossover_q.unwrap();
        assert!((qc.log10() - 4.0).abs() < 0.5, "{qc}");
        assert_eq!(r.classification[0], Regime::Thermal);
        assert_eq!(r.classification[20], Regime::Vibration);
    }

    #[test]
    fn constant_rms_is_all_thermal() {
        let pts: Vec<(f64, f64)> = log_grid(2.0, 6.0, 9).into_iter().map(|q| (q, 0.3)).collect();
        let r = thermal_limit_diagnostic(&pts).unwrap();
        assert!(r.crossover_q.is_none());
        assert_eq!(r.thermal_region, Some((100.0, 1e6)));
        assert!(r.vibration_region.is_none());
        assert!(r.classification.iter().all(|c| *c == Regime::Thermal));
    }

    #[test]
    fn pure_sqrt_q_is_all_vibration() {
        let pts: Vec<(f64, f64)> = log_grid(2.0, 6.0, 9).into_iter().map(|q| (q, 1e-3 * q.sqrt())).collect();
        let r = thermal_limit_diagnostic(&pts).unwrap();
        assert!(r.crossover_q.is_none());
        assert!(r.thermal_region.is_none());
    }

    #[test]
    fn quadrature_mixture_crossover() {
        let pts = synthetic_points(&log_grid(1.5, 6.5, 16), 2.0e-3, 3e3);
        let r = thermal_limit_diagnostic(&pts).unwrap();
        let qc = r.crossover_q.unwrap();
        assert!((qc.log10() - 3e3f64.log10()).abs() < 0.5, "{qc}");
    }

    #[test]
    fn input_order_does_not_matter() {
        let mut pts = synthetic_points(&log_grid(2.0, 7.0, 12), 1.0, 1e4);
        let a = thermal_limit_diagnostic(&pts).unwrap();
        pts.reverse();
        let b = thermal_limit_diagnostic(&pts).unwrap();
        assert_eq!(a.crossover_q, b.crossover_q);
        assert_eq!(a.classification.first(), b.classification.last());
    }

    #[test]
    fn preconditions() {
        assert!(thermal_limit_diagnostic(&[(1e2, 1.0), (1e3, 1.0), (1e4, 1.0)]).is_err());
        assert!(thermal_limit_diagnostic(&[(1e2, 1.0), (2e2, 1.0), (5e2, 1.0), (9e2, 1.0)]).is_err());
        assert!(thermal_limit_diagnostic(&[(1e2, 1.0), (1e3, -1.0), (1e4, 1.0), (1e5, 1.0)]).is_err());
    }
}
