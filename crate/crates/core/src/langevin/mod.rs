//! Stochastic dynamics of a single mechanical mode,
//!
//! ```text
//! ẍ + Γ₀ẋ + ω₀²x = (F_th + F_vib + F_FB)/inertia
//! ```
//!
//! integrated with a semi-implicit Euler–Maruyama scheme: a position kick,
//! an exact Ornstein–Uhlenbeck update of the velocity for friction plus
//! thermal noise, and a drift. The thermal step draws its increment with the
//! exact variance of the continuous process over one step, so the scheme
//! stays stable and unbiased for Q up to 1e7 at the default timestep of
//! 1/(200·f₀).
//!
//! All PSDs are one-sided: a white force with PSD `S` has
//! `⟨F(t)F(t')⟩ = (S/2)·δ(t−t')`.

mod feedback;
mod mode;
mod series;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constants::K_B;
use crate::error::{Error, Result};

pub use feedback::{FeedbackConfig, FeedbackMode};
pub use mode::{ModeKind, ModeLabel, ModeSpec, Unit};
pub use series::{Channel, TimeSeries, ENVELOPE, FEEDBACK_FORCE, MEASURED_POSITION, TRUE_POSITION};

use feedback::Controller;

/// Default number of integration steps per mechanical period.
pub const STEPS_PER_PERIOD: f64 = 200.0;

/// One-sided thermal force PSD 4·k_B·T·inertia·ω₀/Q, in N²/Hz (or (N·m)²/Hz
/// for librational modes).
pub fn thermal_force_psd(mode: &ModeSpec) -> f64 {
    thermal_force_psd_at(mode, mode.bath_temperature)
}

/// [`thermal_force_psd`] at an arbitrary temperature.
pub fn thermal_force_psd_at(mode: &ModeSpec, temperature: f64) -> f64 {
    4.0 * K_B * temperature * mode.inertia * mode.omega0 / mode.quality_factor
}

/// Effective mode temperature under cold damping, T·Γ₀/(Γ₀ + Γ_FB).
pub fn predicted_feedback_temperature(temperature: f64, gamma0: f64, gamma_fb: f64) -> Result<f64> {
    if !(gamma0 > 0.0) {
        return Err(Error::invalid(format!("gamma0 must be positive, got {gamma0}")));
    }
    if !(gamma_fb >= 0.0) {
        return Err(Error::invalid(format!("gamma_fb must be non-negative, got {gamma_fb}")));
    }
    if gamma_fb.is_infinite() {
        return Ok(0.0);
    }
    Ok(temperature * gamma0 / (gamma0 + gamma_fb))
}

/// White base-acceleration PSD that raises the mode from its bath temperature
/// to `equilibrium_temperature`.
pub fn vibration_psd_for_temperature(mode: &ModeSpec, equilibrium_temperature: f64) -> Result<f64> {
    if equilibrium_temperature < mode.bath_temperature {
        return Err(Error::invalid(format!(
            "equilibrium temperature {equilibrium_temperature} K is below the bath ({} K)",
            mode.bath_temperature
        )));
    }
    Ok(4.0 * K_B * (equilibrium_temperature - mode.bath_temperature) * mode.gamma0() / mode.inertia)
}

/// Noise sources. `vibration_accel_psd` is a base acceleration in
/// (m/s²)²/Hz, or an angular acceleration in (rad/s²)²/Hz for librational
/// modes; `detector_noise_psd` is added to the measured channel only.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    pub thermal: bool,
    pub vibration_accel_psd: f64,
    pub detector_noise_psd: f64,
    pub seed: u64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig { thermal: true, vibration_accel_psd: 0.0, detector_noise_psd: 0.0, seed: 0 }
    }
}

impl NoiseConfig {
    pub fn thermal(seed: u64) -> Self {
        NoiseConfig { seed, ..Default::default() }
    }

    pub fn silent() -> Self {
        NoiseConfig { thermal: false, ..Default::default() }
    }

    pub fn with_detector_noise(mut self, psd: f64) -> Self {
        self.detector_noise_psd = psd;
        self
    }

    pub fn with_vibration(mut self, psd: f64) -> Self {
        self.vibration_accel_psd = psd;
        self
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in
            [("vibration_accel_psd", self.vibration_accel_psd), ("detector_noise_psd", self.detector_noise_psd)]
        {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be non-negative, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum InitialState {
    /// Drawn from the equilibrium distribution at the predicted mode temperature.
    Equilibrium,
    At {
        position: f64,
        velocity: f64,
    },
}

/// Integration and recording settings for one run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub timestep: f64,
    pub duration: f64,
    pub initial: InitialState,
    /// Record one sample every `record_stride` steps.
    pub record_stride: usize,
    /// Selects the RNG stream; runs with equal seed and different index are independent.
    pub run_index: u64,
    /// Transient discarded by the steady-state estimators (s). `None` picks
    /// ten relaxation times of the predicted total damping.
    pub burn_in: Option<f64>,
}

impl RunConfig {
    pub fn for_mode(mode: &ModeSpec, duration: f64) -> Self {
        RunConfig {
            timestep: mode.period() / STEPS_PER_PERIOD,
            duration,
            initial: InitialState::Equilibrium,
            record_stride: 1,
            run_index: 0,
            burn_in: None,
        }
    }

    pub fn with_timestep(mut self, dt: f64) -> Self {
        self.timestep = dt;
        self
    }

    pub fn with_initial(mut self, position: f64, velocity: f64) -> Self {
        self.initial = InitialState::At { position, velocity };
        self
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.record_stride = stride;
        self
    }

    pub fn with_run_index(mut self, index: u64) -> Self {
        self.run_index = index;
        self
    }

    pub fn with_burn_in(mut self, burn_in: f64) -> Self {
        self.burn_in = Some(burn_in);
        self
    }

    pub fn steps(&self) -> u64 {
        (self.duration / self.timestep).round() as u64
    }

    fn validate(&self, mode: &ModeSpec) -> Result<()> {
        let period = mode.period();
        if !(self.timestep > 0.0 && self.timestep < 0.05 * period) {
            return Err(Error::invalid(format!(
                "timestep {:.3e} s must be positive and below 5% of the period ({:.3e} s)",
                self.timestep,
                0.05 * period
            )));
        }
        if !(self.duration >= 100.0 * period) {
            return Err(Error::invalid(format!(
                "duration {:.3e} s must cover at least 100 periods ({:.3e} s)",
                self.duration,
                100.0 * period
            )));
        }
        if self.record_stride == 0 {
            return Err(Error::invalid("record stride must be at least 1"));
        }
        if let Some(b) = self.burn_in {
            if !(b >= 0.0 && b < self.duration) {
                return Err(Error::invalid(format!("burn-in {b} s must lie within the run")));
            }
        }
        Ok(())
    }
}

/// Output of [`simulate`].
#[derive(Debug, Clone)]
pub struct SimulationRun {
    pub series: TimeSeries,
    /// Predicted total damping at ω₀ is non-positive, or the state diverged.
    pub unstable: bool,
    pub predicted_total_damping: f64,
    /// Time at which the integration was stopped because of divergence.
    pub diverged_at: Option<f64>,
}

/// Steady-state statistics of the true coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SteadyState {
    pub mean_square: f64,
    /// Standard error of `mean_square` from batch means.
    pub mean_square_error: f64,
    pub temperature: f64,
    pub temperature_error: f64,
    pub samples: u64,
    pub unstable: bool,
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

struct Integrator<'a> {
    mode: &'a ModeSpec,
    controller: Controller,
    rng: ChaCha8Rng,
    dt: f64,
    omega2: f64,
    decay: f64,
    thermal_sigma: f64,
    vibration_sigma: f64,
    detector_sigma: f64,
    x: f64,
    v: f64,
    divergence_limit: f64,
}

struct Sample {
    position: f64,
    detector: f64,
    force: f64,
}

impl<'a> Integrator<'a> {
    fn new(mode: &'a ModeSpec, noise: &NoiseConfig, feedback: &FeedbackConfig, run: &RunConfig) -> Result<Self> {
        mode.validate()?;
        noise.validate()?;
        feedback.validate()?;
        run.validate(mode)?;
        let dt = run.timestep;
        let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
        rng.set_stream(run.run_index);

        let gamma0 = mode.gamma0();
        let decay = (-gamma0 * dt).exp();
        // exact OU velocity variance over one step: (k_B T/I)(1 − e^{−2Γ₀dt}),
        // with k_B T/I expressed through the shared force PSD
        let thermal_sigma = if noise.thermal {
            let kt_over_i = thermal_force_psd(mode) / (4.0 * mode.inertia * mode.inertia * gamma0);
            (kt_over_i * -(-2.0 * gamma0 * dt).exp_m1()).sqrt()
        } else {
            0.0
        };
        let vibration_sigma = (0.5 * noise.vibration_accel_psd * dt).sqrt();
        let detector_sigma = (0.5 * noise.detector_noise_psd / dt).sqrt();

        let total_damping = feedback.predicted_total_damping(mode);
        let (x, v) = match run.initial {
            InitialState::At { position, velocity } => (position, velocity),
            InitialState::Equilibrium => {
                let drive_t = if noise.thermal { mode.bath_temperature } else { 0.0 }
                    + mode.inertia * noise.vibration_accel_psd / (4.0 * K_B * gamma0);
                let t = if total_damping > 0.0 { drive_t * gamma0 / total_damping } else { drive_t };
                let sx = mode.equipartition_variance(t).sqrt();
                let sv = sx * mode.omega0;
                (sx * normal(&mut rng), sv * normal(&mut rng))
            }
        };

        let scale = [
            mode.equipartition_variance(mode.bath_temperature).sqrt(),
            (mode.inertia * noise.vibration_accel_psd / (4.0 * K_B * gamma0)).sqrt()
                * mode.equipartition_variance(1.0).sqrt(),
            detector_sigma,
            x.abs(),
            v.abs() / mode.omega0,
        ]
        .into_iter()
        .fold(0.0, f64::max);

        Ok(Integrator {
            mode,
            controller: Controller::new(feedback, mode, dt),
            rng,
            dt,
            omega2: mode.omega0 * mode.omega0,
            decay,
            thermal_sigma,
            vibration_sigma,
            detector_sigma,
            x,
            v,
            divergence_limit: if scale > 0.0 { 1e8 * scale } else { f64::INFINITY },
        })
    }

    fn diverged(&self) -> bool {
        !self.x.is_finite() || !self.v.is_finite() || self.x.abs() > self.divergence_limit
    }

    /// Measure, apply feedback, advance one step. Returns the pre-step sample.
    fn step(&mut self) -> Sample {
        let detector = if self.detector_sigma > 0.0 { self.detector_sigma * normal(&mut self.rng) } else { 0.0 };
        let position = self.x;
        let force = self.controller.update(position + detector);

        let dt = self.dt;
        self.v += (-self.omega2 * self.x + force / self.mode.inertia) * dt;
        self.v *= self.decay;
        if self.thermal_sigma > 0.0 {
            self.v += self.thermal_sigma * normal(&mut self.rng);
        }
        if self.vibration_sigma > 0.0 {
            self.v += self.vibration_sigma * normal(&mut self.rng);
        }
        self.x += self.v * dt;
        Sample { position, detector, force }
    }
}

/// Integrate one run and record true position, measured position and
/// feedback force.
///
/// With `record_stride > 1` the coordinate channels are point samples while
/// the detector noise in the measured channel is averaged over the stride, so
/// its PSD level is preserved at the lower rate.
pub fn simulate(
    mode: &ModeSpec,
    noise: &NoiseConfig,
    feedback: &FeedbackConfig,
    run: &RunConfig,
) -> Result<SimulationRun> {
    let mut integ = Integrator::new(mode, noise, feedback, run)?;
    let predicted = feedback.predicted_total_damping(mode);
    let steps = run.steps();
    let stride = run.record_stride as u64;
    let n_rec = (steps / stride) as usize;
    let mut true_pos = Vec::with_capacity(n_rec);
    let mut measured = Vec::with_capacity(n_rec);
    let mut forces = Vec::with_capacity(n_rec);
    let mut diverged_at = None;

    let mut det_acc = 0.0;
    let mut pending: Option<(f64, f64)> = None;
    for i in 0..steps {
        let s = integ.step();
        if i % stride == 0 {
            pending = Some((s.position, s.force));
            det_acc = 0.0;
        }
        det_acc += s.detector;
        if (i + 1) % stride == 0 {
            if let Some((p, f)) = pending.take() {
                true_pos.push(p);
                measured.push(p + det_acc / stride as f64);
                forces.push(f);
            }
        }
        if integ.diverged() {
            diverged_at = Some((i + 1) as f64 * run.timestep);
            break;
        }
    }

    let series = TimeSeries::new(
        1.0 / (run.timestep * stride as f64),
        mode.unit(),
        vec![
            Channel { name: TRUE_POSITION.into(), values: true_pos },
            Channel { name: MEASURED_POSITION.into(), values: measured },
            Channel { name: FEEDBACK_FORCE.into(), values: forces },
        ],
    )?;
    Ok(SimulationRun {
        series,
        unstable: predicted <= 0.0 || diverged_at.is_some(),
        predicted_total_damping: predicted,
        diverged_at,
    })
}

const BATCHES: usize = 20;

/// Time-averaged ⟨x²⟩ of the true coordinate after the burn-in, without
/// storing the trajectory.
pub fn steady_state(
    mode: &ModeSpec,
    noise: &NoiseConfig,
    feedback: &FeedbackConfig,
    run: &RunConfig,
) -> Result<SteadyState> {
    let mut integ = Integrator::new(mode, noise, feedback, run)?;
    let predicted = feedback.predicted_total_damping(mode);
    let burn_in = run.burn_in.unwrap_or_else(|| {
        let relax = if predicted > 0.0 { 10.0 / predicted } else { 0.0 };
        relax.min(0.5 * run.duration)
    });
    let steps = run.steps();
    let skip = ((burn_in / run.timestep).round() as u64).min(steps);
    for _ in 0..skip {
        integ.step();
        if integ.diverged() {
            return Ok(unstable_state());
        }
    }
    let measured = steps - skip;
    if measured < BATCHES as u64 {
        return Err(Error::invalid("run too short after burn-in"));
    }
    let per_batch = measured / BATCHES as u64;
    let mut batch_means = [0.0f64; BATCHES];
    for mean in batch_means.iter_mut() {
        let mut acc = 0.0;
        for _ in 0..per_batch {
            let s = integ.step();
            acc += s.position * s.position;
        }
        if integ.diverged() {
            return Ok(unstable_state());
        }
        *mean = acc / per_batch as f64;
    }
    let mean = batch_means.iter().sum::<f64>() / BATCHES as f64;
    let var = batch_means.iter().map(|b| (b - mean).powi(2)).sum::<f64>() / (BATCHES - 1) as f64;
    let err = (var / BATCHES as f64).sqrt();
    Ok(SteadyState {
        mean_square: mean,
        mean_square_error: err,
        temperature: mode.temperature_from_variance(mean),
        temperature_error: mode.temperature_from_variance(err),
        samples: per_batch * BATCHES as u64,
        unstable: predicted <= 0.0,
    })
}

fn unstable_state() -> SteadyState {
    SteadyState {
        mean_square: f64::INFINITY,
        mean_square_error: f64::INFINITY,
        temperature: f64::INFINITY,
        temperature_error: f64::INFINITY,
        samples: 0,
        unstable: true,
    }
}

/// Average of [`steady_state`] over `runs` independent streams
/// (`run_index = 0..runs`), computed in parallel.
pub fn ensemble_steady_state(
    mode: &ModeSpec,
    noise: &NoiseConfig,
    feedback: &FeedbackConfig,
    run: &RunConfig,
    runs: usize,
) -> Result<SteadyState> {
    if runs == 0 {
        return Err(Error::invalid("ensemble needs at least one run"));
    }
    let states = (0..runs as u64)
        .into_par_iter()
        .map(|i| steady_state(mode, noise, feedback, &run.with_run_index(i)))
        .collect::<Result<Vec<_>>>()?;
    if states.iter().any(|s| s.unstable) {
        return Ok(unstable_state());
    }
    let n = runs as f64;
    let mean = states.iter().map(|s| s.mean_square).sum::<f64>() / n;
    let err = if runs > 1 {
        let var = states.iter().map(|s| (s.mean_square - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt()
    } else {
        states[0].mean_square_error
    };
    Ok(SteadyState {
        mean_square: mean,
        mean_square_error: err,
        temperature: mode.temperature_from_variance(mean),
        temperature_error: mode.temperature_from_variance(err),
        samples: states.iter().map(|s| s.samples).sum(),
        unstable: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GainPoint {
    pub gain: f64,
    pub temperature: f64,
    pub temperature_error: f64,
    pub unstable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainSweep {
    pub points: Vec<GainPoint>,
    /// Index into `points` of the coldest stable run.
    pub best: Option<usize>,
}

impl GainSweep {
    pub fn best_point(&self) -> Option<&GainPoint> {
        self.best.map(|i| &self.points[i])
    }
}

/// Steady-state temperature of the true coordinate for each gain, with the
/// feedback settings of `template` otherwise unchanged. Runs are independent
/// RNG streams indexed by gain position.
pub fn gain_sweep(
    mode: &ModeSpec,
    noise: &NoiseConfig,
    template: &FeedbackConfig,
    gains: &[f64],
    run: &RunConfig,
) -> Result<GainSweep> {
    if gains.len() < 3 {
        return Err(Error::invalid(format!("gain sweep needs at least 3 gains, got {}", gains.len())));
    }
    let points = gains
        .par_iter()
        .enumerate()
        .map(|(i, &gain)| {
            let fb = template.with_gain(gain);
            let rc = run.with_run_index(run.run_index.wrapping_add(i as u64));
            let st = steady_state(mode, noise, &fb, &rc)?;
            Ok(GainPoint {
                gain,
                temperature: st.temperature,
                temperature_error: st.temperature_error,
                unstable: st.unstable,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let best = points
        .iter()
        .enumerate()
        .filter(|(_, p)| !p.unstable && p.temperature.is_finite())
        .min_by(|a, b| a.1.temperature.total_cmp(&b.1.temperature))
        .map(|(i, _)| i);
    Ok(GainSweep { points, best })
}

/// Exact stationary covariance `[⟨x²⟩, ⟨xv⟩, ⟨v²⟩]` of the discrete integrator
/// map under thermal noise and noiseless ideal velocity feedback with rate
/// `gamma_fb`. Used to check timestep convergence without sampling error.
pub fn stationary_covariance(mode: &ModeSpec, gamma_fb: f64, dt: f64) -> Result<[f64; 3]> {
    let g0 = mode.gamma0();
    let c = (-g0 * dt).exp();
    let kt_over_i = thermal_force_psd(mode) / (4.0 * mode.inertia * mode.inertia * g0);
    let s2 = kt_over_i * -(-2.0 * g0 * dt).exp_m1();
    let w2 = mode.omega0 * mode.omega0;
    // s' = A s + b ξ
    let a = nalgebra::Matrix2::new(
        1.0 - c * w2 * dt * dt,
        dt * c * (1.0 - gamma_fb * dt),
        -c * w2 * dt,
        c * (1.0 - gamma_fb * dt),
    );
    let b = nalgebra::Vector2::new(dt, 1.0);
    let q = b * b.transpose() * s2;
    // vec(P) = (I − A⊗A)⁻¹ vec(Q)
    let kron = a.kronecker(&a);
    let lhs = nalgebra::Matrix4::identity() - kron;
    let rhs = nalgebra::Vector4::new(q[(0, 0)], q[(1, 0)], q[(0, 1)], q[(1, 1)]);
    let p = lhs.lu().solve(&rhs).ok_or_else(|| Error::Domain("integrator map has no stationary state".into()))?;
    Ok([p[0], p[1], p[3]])
}

/// Plan for running a high-Q mode at a reduced Q within a step budget.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReducedQPlan {
    pub mode: ModeSpec,
    pub noise: NoiseConfig,
    /// Original Q divided by simulated Q (≥ 1).
    pub q_scale: f64,
}

/// Lower Q, if needed, so that `damping_times` relaxation times fit into
/// `max_steps` at the default timestep.
///
/// Temperatures and gain ratios are Q-invariant. The detector noise PSD is
/// divided by the same factor so that the detection-limited floor
/// (∝ √(S_F·S_xd)) is unchanged.
pub fn plan_reduced_q(
    mode: &ModeSpec,
    noise: &NoiseConfig,
    damping_times: f64,
    max_steps: u64,
) -> Result<ReducedQPlan> {
    mode.validate()?;
    let steps_needed = damping_times * mode.quality_factor / (2.0 * std::f64::consts::PI) * STEPS_PER_PERIOD;
    if steps_needed <= max_steps as f64 {
        return Ok(ReducedQPlan { mode: *mode, noise: *noise, q_scale: 1.0 });
    }
    let scale = steps_needed / max_steps as f64;
    let reduced = mode.with_quality_factor(mode.quality_factor / scale)?;
    let mut n = *noise;
    n.detector_noise_psd /= scale;
    Ok(ReducedQPlan { mode: reduced, noise: n, q_scale: scale })
}
