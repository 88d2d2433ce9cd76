//! Time-domain Langevin simulation of the mode under radiation-pressure
//! feedback.
//!
//! The mechanical equation `M ẍ = −M Ω_M² x − M Γ ẋ + F_T + F_rad` is
//! integrated with a semi-implicit leapfrog: velocities live on half steps,
//! the damping term is time-centred and the Langevin force is an
//! Euler–Maruyama increment on the velocity. With [`Discretization::Matched`]
//! the stiffness and damping coefficients are chosen so the homogeneous
//! discrete map has exactly the continuous poles `e^{(−Γ/2 ± iΩ_d) dt}`;
//! without that correction the resonance is pulled by `O(dt²)`, which is
//! a sizeable fraction of the linewidth at high Q.

pub mod actuator;
pub mod filter;
pub mod io;
mod ringdown;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub use actuator::ActuatorModel;
pub use filter::{bandpass_filter, Bandpass, FilterOutput, FilterState};
pub use ringdown::{envelope_decay_rate, ring_down_estimate};

use crate::error::{Error, Result};
use crate::model::{
    check_stability, effective_linewidth, langevin_force_psd, BackgroundModel, FeedbackConfig, LoopResponse, OscillatorParams,
    ReadoutParams, BOLTZMANN,
};

/// What the feedback loop senses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Sensing {
    /// The readout signal converted back to displacement, shot noise included.
    #[default]
    Sensor,
    /// The mirror displacement itself.
    Ideal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Discretization {
    /// Stiffness and damping pre-warped to reproduce the continuous poles.
    #[default]
    Matched,
    /// Physical coefficients used as they are (second-order accurate).
    Plain,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialState {
    /// Draw from the stationary distribution at the expected effective
    /// temperature.
    #[default]
    Thermal,
    /// Start from a given displacement (m) and velocity (m/s).
    Displaced { x: f64, v: f64 },
}

/// The physical set-up being simulated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Experiment {
    pub oscillator: OscillatorParams,
    pub readout: ReadoutParams,
    pub feedback: FeedbackConfig,
    pub actuator: ActuatorModel,
    pub background: BackgroundModel,
}

impl Experiment {
    pub fn validate(&self) -> Result<()> {
        self.oscillator.validate()?;
        self.readout.validate()?;
        self.feedback.validate()?;
        self.actuator.validate()?;
        self.background.validate()
    }

    /// Energy damping rate of the mode with the loop closed, filter
    /// response included.
    pub fn closed_loop_linewidth(&self) -> f64 {
        effective_linewidth(&self.oscillator, &self.feedback, LoopResponse::Filtered)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Integration step, s.
    pub dt: f64,
    /// Integration steps per recorded sample.
    pub decimation: usize,
    /// Recorded samples per scan.
    pub n_samples: usize,
    pub n_scans: usize,
    pub seed: u64,
    pub record_force: bool,
    #[serde(default)]
    pub sensing: Sensing,
    #[serde(default)]
    pub discretization: Discretization,
    #[serde(default)]
    pub initial: InitialState,
    /// Settling time simulated before recording starts, s.
    #[serde(default)]
    pub warmup: f64,
    /// Run the controller and record its force without applying it.
    #[serde(default)]
    pub open_loop_monitor: bool,
}

impl SimConfig {
    /// Defaults for a mode: 80 steps per mechanical period, 8 recorded
    /// samples per period, one scan long enough for ten linewidths.
    pub fn for_mode(p: &OscillatorParams) -> Self {
        let dt = 2.0 * std::f64::consts::PI / (80.0 * p.omega_m);
        let decimation = 10;
        let n_samples = (20.0 / (p.gamma * dt * decimation as f64)).ceil() as usize;
        Self {
            dt,
            decimation,
            n_samples,
            n_scans: 1,
            seed: 0,
            record_force: false,
            sensing: Sensing::Sensor,
            discretization: Discretization::Matched,
            initial: InitialState::Thermal,
            warmup: 0.0,
            open_loop_monitor: false,
        }
    }

    /// Interval between recorded samples, s.
    pub fn sample_interval(&self) -> f64 {
        self.dt * self.decimation as f64
    }

    pub fn total_samples(&self) -> usize {
        self.n_samples * self.n_scans
    }

    pub fn validate(&self, exp: &Experiment) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::invalid("dt must be positive"));
        }
        if self.dt * exp.oscillator.omega_m >= 0.1 {
            return Err(Error::invalid(format!(
                "dt·Ω_M = {:.4} must stay below 0.1",
                self.dt * exp.oscillator.omega_m
            )));
        }
        if self.decimation == 0 || self.n_samples == 0 || self.n_scans == 0 {
            return Err(Error::invalid("decimation, n_samples and n_scans must be positive"));
        }
        if !(self.warmup >= 0.0) {
            return Err(Error::invalid("warmup must be non-negative"));
        }
        let gamma_fb = if self.open_loop_monitor {
            exp.oscillator.gamma
        } else {
            exp.closed_loop_linewidth()
        };
        let scan = self.n_samples as f64 * self.sample_interval();
        if gamma_fb > 0.0 && scan * gamma_fb < 10.0 {
            return Err(Error::invalid(format!(
                "scan duration {scan:e} s is shorter than 10/Γ_fb = {:e} s",
                10.0 / gamma_fb
            )));
        }
        Ok(())
    }
}

/// Instantaneous state of the oscillator and loop filter.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct OscState {
    /// Displacement at the current step, m.
    pub x: f64,
    /// Velocity over the preceding half step, m/s.
    pub v: f64,
    pub filter: FilterState,
}

/// One recorded sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Record {
    /// Mode displacement, m.
    pub x: f64,
    /// Readout phase including background and shot noise, rad.
    pub phase: f64,
    /// Dynamic actuator force, N.
    pub force: f64,
    /// Background displacement contained in `phase`, m.
    pub background: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TrajectoryMeta {
    pub experiment: Experiment,
    pub config: SimConfig,
}

/// Recorded time series of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub x_series: Vec<f64>,
    pub phase_series: Vec<f64>,
    pub force_series: Option<Vec<f64>>,
    /// Sample interval, s.
    pub dt: f64,
    pub meta: TrajectoryMeta,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.x_series.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x_series.is_empty()
    }

    /// Readout phase converted back to displacement.
    pub fn sensed_displacement(&self) -> Vec<f64> {
        let k = self.meta.experiment.readout.phase_per_meter();
        self.phase_series.iter().map(|p| p / k).collect()
    }
}

const STREAM_THERMAL: u64 = 0;
const STREAM_SHOT: u64 = 1;
const STREAM_BACKGROUND: u64 = 2;
const STREAM_INITIAL: u64 = 3;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// One sample of the discretised Langevin force for a step `dt`: zero mean,
/// variance `2 M Γ k_B T / dt`, so that its double-sided PSD is `2 M Γ k_B T`.
pub fn thermal_force_step<R: Rng + ?Sized>(p: &OscillatorParams, rng: &mut R, dt: f64) -> f64 {
    let std = (langevin_force_psd(p) / dt).sqrt();
    if std == 0.0 {
        return 0.0;
    }
    let n: f64 = rng.sample(StandardNormal);
    std * n
}

struct Loop {
    filter: Bandpass,
    mass_gain: f64,
    cos: f64,
    sin_wc: f64,
}

/// Stateful integrator. Reproducible from the seed: the thermal force, shot
/// noise, background and initial condition each draw from their own
/// ChaCha8 stream derived from it.
pub struct Simulator {
    exp: Experiment,
    cfg: SimConfig,
    state: OscState,
    fb: Option<Loop>,
    h: f64,
    /// `(1 − c)/(1 + c)` and `h/(1 + c)` of the centred damping update.
    decay: f64,
    kick: f64,
    omega_s2: f64,
    inv_mass: f64,
    thermal_std: f64,
    shot_step_std: f64,
    shot_record_std: f64,
    bg_force_std: f64,
    bg_record_std: f64,
    chi_b: f64,
    phase_per_meter: f64,
    f_prev: f64,
    thermal: ChaCha8Rng,
    shot: ChaCha8Rng,
    background: ChaCha8Rng,
    steps: u64,
}

impl Simulator {
    pub fn new(exp: Experiment, cfg: SimConfig) -> Result<Self> {
        exp.validate()?;
        cfg.validate(&exp)?;
        let p = exp.oscillator;
        let fbc = exp.feedback;
        if fbc.enabled && !cfg.open_loop_monitor {
            check_stability(&p, &fbc, LoopResponse::Filtered)?;
        }
        let h = cfg.dt;
        let (c, omega_s2) = match cfg.discretization {
            Discretization::Plain => (0.5 * h * p.gamma, p.omega_m * p.omega_m),
            Discretization::Matched => {
                let c = (0.5 * p.gamma * h).tanh();
                let disc = p.omega_m * p.omega_m - 0.25 * p.gamma * p.gamma;
                let osc = if disc >= 0.0 {
                    (disc.sqrt() * h).cos()
                } else {
                    ((-disc).sqrt() * h).cosh()
                };
                let sum = 2.0 * (-0.5 * p.gamma * h).exp() * osc;
                (c, (2.0 - (1.0 + c) * sum) / (h * h))
            }
        };
        let fb = if fbc.enabled {
            let filter = Bandpass::new(fbc.filter_center, fbc.filter_q, h)?;
            let (sin, cos) = fbc.loop_phase.sin_cos();
            Some(Loop {
                filter,
                mass_gain: p.mass_eff * fbc.gain,
                cos,
                sin_wc: sin * fbc.filter_center,
            })
        } else {
            None
        };
        let record_dt = cfg.sample_interval();
        let floor = exp.readout.shot_noise_floor;
        let bg = exp.background;
        let chi_b = 1.0 / p.stiffness();
        let (bg_force_std, bg_record_std) = if bg.affected_by_feedback {
            ((bg.level / (chi_b * chi_b) / h).sqrt(), 0.0)
        } else {
            (0.0, (bg.level / record_dt).sqrt())
        };
        let (shot_step_std, shot_record_std) = match cfg.sensing {
            Sensing::Sensor if fb.is_some() => ((floor / h).sqrt(), 0.0),
            _ => (0.0, (floor / record_dt).sqrt()),
        };

        let mut init_rng = stream(cfg.seed, STREAM_INITIAL);
        let (x0, v0) = match cfg.initial {
            InitialState::Displaced { x, v } => (x, v),
            InitialState::Thermal => {
                let gamma_fb = if cfg.open_loop_monitor { p.gamma } else { exp.closed_loop_linewidth() };
                let t_eff = if gamma_fb > 0.0 { p.temperature * p.gamma / gamma_fb } else { p.temperature };
                let kt = BOLTZMANN * t_eff;
                let nx: f64 = init_rng.sample(StandardNormal);
                let nv: f64 = init_rng.sample(StandardNormal);
                ((kt / p.stiffness()).sqrt() * nx, (kt / p.mass_eff).sqrt() * nv)
            }
        };

        let mut sim = Self {
            exp,
            cfg,
            state: OscState { x: x0, v: v0, filter: FilterState::default() },
            fb,
            h,
            decay: (1.0 - c) / (1.0 + c),
            kick: h / (1.0 + c),
            omega_s2,
            inv_mass: 1.0 / p.mass_eff,
            thermal_std: (langevin_force_psd(&p) / h).sqrt(),
            shot_step_std,
            shot_record_std,
            bg_force_std,
            bg_record_std,
            chi_b,
            phase_per_meter: exp.readout.phase_per_meter(),
            f_prev: 0.0,
            thermal: stream(cfg.seed, STREAM_THERMAL),
            shot: stream(cfg.seed, STREAM_SHOT),
            background: stream(cfg.seed, STREAM_BACKGROUND),
            steps: 0,
        };
        let warmup_steps = (cfg.warmup / h).ceil() as u64;
        for _ in 0..warmup_steps {
            sim.step();
        }
        sim.check_finite()?;
        Ok(sim)
    }

    pub fn state(&self) -> &OscState {
        &self.state
    }

    pub fn experiment(&self) -> &Experiment {
        &self.exp
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    fn check_finite(&self) -> Result<()> {
        if self.state.x.is_finite() && self.state.v.is_finite() {
            Ok(())
        } else {
            Err(Error::Diverged { step: self.steps })
        }
    }

    #[inline]
    fn normal(rng: &mut ChaCha8Rng) -> f64 {
        rng.sample(StandardNormal)
    }

    /// Advances one integration step. Returns the displacement at the start
    /// of the step, the per-step shot and background displacements that
    /// entered the readout, and the applied feedback force.
    #[inline]
    fn step(&mut self) -> (f64, f64, f64, f64) {
        let x = self.state.x;
        let xb = if self.bg_force_std > 0.0 {
            self.chi_b * (self.bg_force_std * Self::normal(&mut self.background) + self.f_prev)
        } else {
            0.0
        };
        let shot = if self.shot_step_std > 0.0 {
            self.shot_step_std * Self::normal(&mut self.shot)
        } else {
            0.0
        };
        let mut force = 0.0;
        if let Some(lp) = &self.fb {
            let out = lp.filter.step(&mut self.state.filter, x + xb + shot);
            let cmd = -lp.mass_gain * (lp.cos * out.velocity + lp.sin_wc * out.y);
            force = self.exp.actuator.apply(cmd);
        }
        self.f_prev = force;
        let applied = if self.cfg.open_loop_monitor { 0.0 } else { force };
        let thermal = if self.thermal_std > 0.0 {
            self.thermal_std * Self::normal(&mut self.thermal)
        } else {
            0.0
        };
        let accel = -self.omega_s2 * x + (thermal + applied) * self.inv_mass;
        let v = self.decay * self.state.v + self.kick * accel;
        self.state.v = v;
        self.state.x = x + self.h * v;
        self.steps += 1;
        (x, shot, xb, force)
    }

    /// Produces one recorded sample covering `decimation` steps. The mode
    /// displacement and force are point samples at the middle of the block;
    /// white readout contributions are block averages, so their recorded PSD
    /// equals the configured level and stays time-aligned with the sample.
    pub fn next_record(&mut self) -> Result<Record> {
        let k = self.cfg.decimation;
        let mid = k / 2;
        let (mut x, mut force) = (0.0, 0.0);
        let (mut shot_sum, mut xb_sum) = (0.0, 0.0);
        for i in 0..k {
            let (xi, s, b, f) = self.step();
            if i == mid {
                x = xi;
                force = f;
            }
            shot_sum += s;
            xb_sum += b;
        }
        self.check_finite()?;
        let mut shot = shot_sum / k as f64;
        let mut background = xb_sum / k as f64;
        if self.shot_record_std > 0.0 {
            shot += self.shot_record_std * Self::normal(&mut self.shot);
        }
        if self.bg_record_std > 0.0 {
            background += self.bg_record_std * Self::normal(&mut self.background);
        }
        Ok(Record { x, phase: self.phase_per_meter * (x + shot + background), force, background })
    }

    /// Streams `n` records into `sink`.
    pub fn run<F: FnMut(&Record)>(&mut self, n: usize, mut sink: F) -> Result<()> {
        for _ in 0..n {
            let r = self.next_record()?;
            sink(&r);
        }
        Ok(())
    }
}

/// Runs a full simulation and collects the trajectory.
pub fn simulate(exp: &Experiment, cfg: &SimConfig) -> Result<Trajectory> {
    let mut sim = Simulator::new(*exp, *cfg)?;
    let n = cfg.total_samples();
    let mut x_series = Vec::with_capacity(n);
    let mut phase_series = Vec::with_capacity(n);
    let mut force_series = cfg.record_force.then(|| Vec::with_capacity(n));
    sim.run(n, |r| {
        x_series.push(r.x);
        phase_series.push(r.phase);
        if let Some(f) = force_series.as_mut() {
            f.push(r.force);
        }
    })?;
    Ok(Trajectory {
        x_series,
        phase_series,
        force_series,
        dt: cfg.sample_interval(),
        meta: TrajectoryMeta { experiment: *exp, config: *cfg },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{FeedbackConfig, ReadoutParams};

    pub(crate) fn scaled_experiment() -> Experiment {
        let p = OscillatorParams::from_q(1.0, 1.0, 1000.0, 300.0).unwrap();
        let mut fb = FeedbackConfig::disabled(&p);
        fb.filter_q = 0.5;
        Experiment {
            oscillator: p,
            readout: ReadoutParams { finesse: 37000.0, wavelength: 810e-9, shot_noise_floor: 0.0 },
            feedback: fb,
            actuator: ActuatorModel::for_feedback(&fb),
            background: BackgroundModel::none(),
        }
    }

    #[test]
    fn thermal_force_statistics() {
        let p = OscillatorParams::from_q(1.0, 1.0, 1000.0, 300.0).unwrap();
        let dt = 0.05;
        let mut rng = stream(7, 0);
        let n = 1_000_000;
        let mut s2 = 0.0;
        let mut s1 = 0.0;
        for _ in 0..n {
            let f = thermal_force_step(&p, &mut rng, dt);
            s1 += f;
            s2 += f * f;
        }
        let var = s2 / n as f64 - (s1 / n as f64).powi(2);
        let expected = langevin_force_psd(&p) / dt;
        assert!(((var - expected) / expected).abs() < 0.01);
        let cold = p.with_temperature(0.0);
        assert_eq!(thermal_force_step(&cold, &mut rng, dt), 0.0);
    }

    #[test]
    fn config_validation() {
        let exp = scaled_experiment();
        let mut cfg = SimConfig::for_mode(&exp.oscillator);
        assert!(cfg.validate(&exp).is_ok());
        assert!(cfg.dt * exp.oscillator.omega_m < 0.1);
        cfg.dt = 0.2;
        assert!(cfg.validate(&exp).is_err());
        let mut cfg = SimConfig::for_mode(&exp.oscillator);
        cfg.n_samples = 10;
        assert!(cfg.validate(&exp).is_err());
    }

    #[test]
    fn unstable_loop_is_rejected() {
        let mut exp = scaled_experiment();
        exp.feedback = exp.feedback.with_gain(-1.5 * exp.oscillator.gamma);
        let cfg = SimConfig::for_mode(&exp.oscillator);
        assert!(matches!(Simulator::new(exp, cfg), Err(Error::Unstable(_))));
    }

    #[test]
    fn deterministic() {
        let mut exp = scaled_experiment();
        exp.feedback = exp.feedback.with_gain(3.0 * exp.oscillator.gamma);
        exp.readout.shot_noise_floor = 1e-25;
        let mut cfg = SimConfig::for_mode(&exp.oscillator);
        cfg.seed = 42;
        cfg.record_force = true;
        let a = simulate(&exp, &cfg).unwrap();
        let b = simulate(&exp, &cfg).unwrap();
        assert_eq!(a, b);
        cfg.seed = 43;
        let c = simulate(&exp, &cfg).unwrap();
        assert_ne!(a.x_series, c.x_series);
    }

    #[test]
    fn zero_temperature_free_decay() {
        let mut exp = scaled_experiment();
        exp.oscillator = exp.oscillator.with_temperature(0.0);
        let mut cfg = SimConfig::for_mode(&exp.oscillator);
        cfg.initial = InitialState::Displaced { x: 1e-12, v: 0.0 };
        cfg.decimation = 1;
        cfg.n_samples = 200_000;
        let traj = simulate(&exp, &cfg).unwrap();
        let p = exp.oscillator;
        let t_end = (traj.len() - 1) as f64 * traj.dt;
        let tail = traj.x_series[traj.len() - 200..].iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let expected = 1e-12 * (-0.5 * p.gamma * t_end).exp();
        assert!((tail - expected).abs() / expected < 0.01, "{tail:e} vs {expected:e}");
    }
}
