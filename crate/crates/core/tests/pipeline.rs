use std::f64::consts::PI;

use levcool::constants::K_B;
use levcool::langevin::{
    self, FeedbackConfig, ModeLabel, ModeSpec, NoiseConfig, RunConfig, MEASURED_POSITION, TRUE_POSITION,
};
use levcool::limits::{min_temperature, NoiseBudget};
use levcool::spectral::{self, lorentzian, welch_psd, AnalysisOptions};

fn z_mode(q: f64) -> ModeSpec {
    ModeSpec::translational(ModeLabel::Z, 42.4, 23e-9, q, 4.4).unwrap()
}

#[test]
fn welch_fit_recovers_configured_mode() {
    let mode = z_mode(100.0);
    let run = RunConfig::for_mode(&mode, 800.0).with_stride(4);
    let sim = langevin::simulate(&mode, &NoiseConfig::thermal(11), &FeedbackConfig::off(), &run).unwrap();
    let a = spectral::analyze(&sim.series, TRUE_POSITION, mode.inertia, &AnalysisOptions::default()).unwrap();
    let bin = 2.0 * PI * a.psd.df();
    assert!((a.fit.omega0 - mode.omega0).abs() < bin, "{} vs {}", a.fit.omega0, mode.omega0);
    assert!((a.temperature / mode.bath_temperature - 1.0).abs() < 0.1, "T = {}", a.temperature);
    assert!((a.fit.gamma_total / mode.gamma0() - 1.0).abs() < 0.25, "Γ = {}", a.fit.gamma_total);
}

#[test]
fn measured_psd_matches_susceptibility_times_force_noise() {
    // S_x(f) = S_F / (m² |ω0² − ω² + iΓω|²), plus the flat detector floor
    let mode = z_mode(50.0);
    let s_xd = 1e-24;
    let noise = NoiseConfig::thermal(5).with_detector_noise(s_xd);
    let run = RunConfig::for_mode(&mode, 600.0).with_stride(4);
    let sim = langevin::simulate(&mode, &noise, &FeedbackConfig::off(), &run).unwrap();
    let psd = welch_psd(&sim.series, MEASURED_POSITION, 4096, 0.5).unwrap();
    let s_f = langevin::thermal_force_psd(&mode);
    let drive = s_f / (mode.inertia * mode.inertia);
    let f0 = mode.frequency_hz();
    let mut ratios = Vec::new();
    for (f, v) in psd.frequencies.iter().zip(&psd.values) {
        if *f > 0.5 * f0 && *f < 1.5 * f0 {
            let expected = lorentzian(*f, mode.omega0, mode.gamma0(), drive) + s_xd;
            ratios.push(v / expected);
        }
    }
    let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
    assert!((mean - 1.0).abs() < 0.05, "mean ratio {mean}");
}

#[test]
fn cold_damping_ensemble_follows_gain_law() {
    let mode = z_mode(200.0);
    let run = RunConfig::for_mode(&mode, 300.0);
    for gain in [3.0, 30.0] {
        let fb = FeedbackConfig::ideal_velocity(gain);
        let st = langevin::ensemble_steady_state(&mode, &NoiseConfig::thermal(2), &fb, &run, 6).unwrap();
        let expected = mode.bath_temperature / (1.0 + gain);
        assert!((st.temperature / expected - 1.0).abs() < 0.1, "gain {gain}: {} vs {expected}", st.temperature);
    }
}

#[test]
fn detector_noise_produces_interior_minimum_near_floor() {
    let mode = z_mode(1000.0);
    let s_f = langevin::thermal_force_psd(&mode);
    let m = mode.inertia;
    // feedback noise equals thermal noise at gain 30
    let s_xd = s_f / (m * m * mode.omega0.powi(2) * 900.0 * mode.gamma0().powi(2));
    let noise = NoiseConfig::thermal(9).with_detector_noise(s_xd);
    let gains = [1.0, 10.0, 30.0, 100.0, 1000.0];
    let run = RunConfig::for_mode(&mode, 1200.0);
    let sweep = langevin::gain_sweep(&mode, &noise, &FeedbackConfig::ideal_velocity(0.0), &gains, &run).unwrap();
    let best = sweep.best.unwrap();
    assert!(best > 0 && best < gains.len() - 1, "{:?}", sweep.points);
    let floor = min_temperature(&mode, &NoiseBudget::new(s_f, s_xd)).unwrap().t_min;
    let t = sweep.points[best].temperature;
    assert!(t / floor < 3.0 && floor / t < 3.0, "{t} vs {floor}");
    for p in &sweep.points {
        let g = p.gain;
        let model = mode.bath_temperature * (1.0 + g * g / 900.0) / (1.0 + g);
        assert!((p.temperature / model - 1.0).abs() < 0.3, "gain {g}: {} vs {model}", p.temperature);
    }
}

#[test]
fn ringdown_and_spectral_linewidth_agree() {
    let mode = z_mode(300.0);
    let x0 = 1e-6;
    let tau = 2.0 * mode.quality_factor / mode.omega0;
    let run = RunConfig::for_mode(&mode, 4.0 * tau).with_initial(x0, 0.0).with_stride(5);
    let sim = langevin::simulate(&mode, &NoiseConfig::silent(), &FeedbackConfig::off(), &run).unwrap();
    let env = spectral::demodulate_envelope(&sim.series, TRUE_POSITION, mode.omega0, 10).unwrap();
    let ring = spectral::fit_ringdown(&env, mode.omega0).unwrap();
    assert!((ring.quality_factor / mode.quality_factor - 1.0).abs() < 0.02, "{}", ring.quality_factor);

    let thermal = langevin::simulate(
        &mode,
        &NoiseConfig::thermal(4),
        &FeedbackConfig::off(),
        &RunConfig::for_mode(&mode, 2000.0).with_stride(4),
    )
    .unwrap();
    let a = spectral::analyze(&thermal.series, TRUE_POSITION, mode.inertia, &AnalysisOptions::default()).unwrap();
    let q_spec = a.fit.quality_factor();
    assert!((q_spec / ring.quality_factor - 1.0).abs() < 0.25, "{q_spec} vs {}", ring.quality_factor);
}

#[test]
fn vibration_noise_raises_temperature_and_feedback_cools_it() {
    let mode = z_mode(100.0);
    let target = 40.0;
    let psd = langevin::vibration_psd_for_temperature(&mode, target).unwrap();
    let noise = NoiseConfig::thermal(3).with_vibration(psd);
    let run = RunConfig::for_mode(&mode, 400.0);
    let hot = langevin::ensemble_steady_state(&mode, &noise, &FeedbackConfig::off(), &run, 4).unwrap();
    assert!((hot.temperature / target - 1.0).abs() < 0.1, "{}", hot.temperature);
    let cooled = langevin::ensemble_steady_state(&mode, &noise, &FeedbackConfig::ideal_velocity(9.0), &run, 4).unwrap();
    assert!((cooled.temperature / (target / 10.0) - 1.0).abs() < 0.1, "{}", cooled.temperature);
}

#[test]
fn reduced_q_preserves_detection_floor() {
    let mode = z_mode(1e7);
    let noise = NoiseConfig::thermal(1).with_detector_noise(2.1e-11f64.powi(2));
    let plan = langevin::plan_reduced_q(&mode, &noise, 100.0, 2_000_000).unwrap();
    assert!(plan.q_scale > 1.0);
    let floor = |m: &ModeSpec, n: &NoiseConfig| {
        min_temperature(m, &NoiseBudget::new(langevin::thermal_force_psd(m), n.detector_noise_psd)).unwrap().t_min
    };
    let before = floor(&mode, &noise);
    let after = floor(&plan.mode, &plan.noise);
    assert!((after / before - 1.0).abs() < 1e-12);
    // a mode temperature from variance is Q independent
    let var = mode.equipartition_variance(4.4);
    assert!((plan.mode.temperature_from_variance(var) - 4.4).abs() < 1e-12);
    assert!((K_B * 4.4 / (mode.inertia * mode.omega0.powi(2)) - var).abs() / var < 1e-12);
}
