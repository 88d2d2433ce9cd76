//! Scenario configuration: named defaults per profile, overridden by a TOML
//! document.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    thermal_displacement_psd, BackgroundModel, FeedbackConfig, OscillatorParams, ReadoutParams,
};
use crate::sim::{ActuatorModel, Discretization, Experiment, InitialState, Sensing, SimConfig};
use crate::spectral::Window;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioName {
    CoolingSpectra,
    Heating,
    GainSweep,
    OffresCooling,
    OracleCheck,
}

impl ScenarioName {
    pub const ALL: [ScenarioName; 5] = [
        ScenarioName::CoolingSpectra,
        ScenarioName::Heating,
        ScenarioName::GainSweep,
        ScenarioName::OffresCooling,
        ScenarioName::OracleCheck,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ScenarioName::CoolingSpectra => "cooling_spectra",
            ScenarioName::Heating => "heating",
            ScenarioName::GainSweep => "gain_sweep",
            ScenarioName::OffresCooling => "offres_cooling",
            ScenarioName::OracleCheck => "oracle_check",
        }
    }
}

impl fmt::Display for ScenarioName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScenarioName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|n| n.as_str() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Self::ALL.iter().map(|n| n.as_str()).collect();
                Error::invalid(format!("unknown scenario {s:?}; expected one of {}", names.join(", ")))
            })
    }
}

/// Parameter set the defaults are drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    /// `Ω_M = 1 rad/s`, `Q = 1000`: fast, every ratio preserved.
    #[default]
    Scaled,
    /// The measured mode: 1858.9 kHz, Γ/2π = 45 Hz.
    Physical,
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "scaled" => Ok(Profile::Scaled),
            "physical" => Ok(Profile::Physical),
            _ => Err(Error::invalid(format!("unknown profile {s:?}; expected scaled or physical"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OscillatorSection {
    /// kg.
    pub mass_eff: f64,
    /// rad/s.
    pub omega_m: f64,
    pub q: f64,
    /// K.
    pub temperature: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReadoutSection {
    pub finesse: f64,
    /// m.
    pub wavelength: f64,
    /// How far the open-loop thermal peak stands above the shot-noise floor,
    /// dB. Omit for a noiseless readout.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub peak_over_floor_db: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeedbackSection {
    /// Loop gains of the run points, in units of Γ. Zero is the open-loop
    /// reference.
    pub gains_over_gamma: Vec<f64>,
    /// rad.
    pub loop_phase: f64,
    /// Filter centre in units of `Ω_M`.
    pub filter_center_ratio: f64,
    pub filter_q: f64,
    /// W.
    pub actuator_max_power: f64,
    pub saturate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackgroundSection {
    /// Flat background level as a fraction of the open-loop peak PSD.
    pub fraction_of_peak: f64,
    pub affected_by_feedback: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    /// Integration steps per mechanical period.
    pub steps_per_period: f64,
    pub decimation: usize,
    pub sensing: Sensing,
    pub discretization: Discretization,
    /// Settling time before recording, in closed-loop energy decay times.
    pub warmup_decay_times: f64,
    /// Recorded samples for a single `simulate` run; defaults to twenty
    /// decay times.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSection {
    /// Welch segments averaged per run point.
    pub averages: usize,
    /// Frequency bins per closed-loop linewidth; sets the segment length
    /// unless `rbw_hz` is given.
    pub bins_per_linewidth: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rbw_hz: Option<f64>,
    pub window: Window,
    /// Full width of the band-integral temperature estimator, units of Γ.
    pub band_over_gamma: f64,
    /// Integration steps a point may use beyond `averages`: cheap, strongly
    /// damped points average more segments until they reach this count.
    pub step_budget: f64,
    /// Integration steps allowed per point; averages are reduced to fit,
    /// down to `min_averages`.
    pub max_steps_per_point: f64,
    pub min_averages: usize,
    /// Relative deviation from the analytic spectrum flagged in reports.
    pub oracle_tolerance: f64,
    /// Adjacent sub-bands, each one closed-loop linewidth wide, compared
    /// with the analytic spectrum.
    pub oracle_bands: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: ScenarioName,
    pub profile: Profile,
    pub seed: u64,
    pub oscillator: OscillatorSection,
    pub readout: ReadoutSection,
    pub feedback: FeedbackSection,
    pub background: BackgroundSection,
    pub sim: SimSection,
    pub analysis: AnalysisSection,
}

/// Gain grid bracketing heating, weak and strong cooling, in units of Γ.
pub const DEFAULT_GAIN_GRID: [f64; 10] = [-0.98, -0.9, -0.5, 0.0, 1.0, 2.0, 4.0, 9.0, 19.0, 39.0];

impl ScenarioConfig {
    pub fn defaults(name: ScenarioName, profile: Profile) -> Self {
        let oscillator = match profile {
            Profile::Scaled => OscillatorSection { mass_eff: 1.0, omega_m: 1.0, q: 1000.0, temperature: 300.0 },
            Profile::Physical => OscillatorSection {
                mass_eff: 1e-4,
                omega_m: 2.0 * PI * 1858.9e3,
                q: 1858.9e3 / 45.0,
                temperature: 300.0,
            },
        };
        // The scaled filter is broad so that its group delay stays a
        // percent-level effect on the closed-loop linewidth at Q = 1000.
        let in_band_q = match profile {
            Profile::Scaled => 0.5,
            Profile::Physical => 200.0,
        };
        let mut feedback = FeedbackSection {
            gains_over_gamma: vec![0.0, 2.0, 6.0, 19.0],
            loop_phase: 0.0,
            filter_center_ratio: 1.0,
            filter_q: in_band_q,
            actuator_max_power: 0.5,
            saturate: true,
        };
        let mut background = BackgroundSection { fraction_of_peak: 0.0, affected_by_feedback: false };
        let mut analysis = AnalysisSection {
            averages: 200,
            bins_per_linewidth: 8.0,
            rbw_hz: None,
            window: Window::Hann,
            band_over_gamma: 100.0,
            step_budget: 3e7,
            max_steps_per_point: 2e8,
            min_averages: 16,
            oracle_tolerance: 0.05,
            oracle_bands: 10,
        };
        let mut readout = ReadoutSection { finesse: 37000.0, wavelength: 810e-9, peak_over_floor_db: Some(40.0) };
        match name {
            ScenarioName::CoolingSpectra => {}
            ScenarioName::Heating => {
                feedback.gains_over_gamma = vec![0.0, -0.5, -0.98];
                // The narrowed line needs segments fifty times longer than
                // the open-loop one; coarser bins keep the run affordable.
                analysis.averages = 64;
                analysis.bins_per_linewidth = 4.0;
                analysis.max_steps_per_point = 4e8;
            }
            ScenarioName::GainSweep => {
                feedback.gains_over_gamma = DEFAULT_GAIN_GRID.to_vec();
                background.fraction_of_peak = 0.01;
                analysis.averages = 100;
                analysis.bins_per_linewidth = 4.0;
                analysis.step_budget = 2e7;
                analysis.max_steps_per_point = 1.5e8;
            }
            ScenarioName::OffresCooling => {
                let ratio = 0.43;
                feedback.filter_center_ratio = ratio;
                feedback.filter_q = 200.0;
                // Four times the gain at which the loop force matches the
                // spring force at the filter centre.
                let g = 4.0 * (1.0 - ratio * ratio) / ratio * oscillator.q;
                feedback.gains_over_gamma = vec![0.0, g];
                readout.peak_over_floor_db = None;
            }
            ScenarioName::OracleCheck => {
                feedback.gains_over_gamma = vec![0.0, 1.0, 4.0, 19.0];
                analysis.averages = 1000;
                analysis.max_steps_per_point = 4e8;
                readout.peak_over_floor_db = Some(60.0);
            }
        }
        Self {
            name,
            profile,
            seed: 1,
            oscillator,
            readout,
            feedback,
            background,
            sim: SimSection {
                steps_per_period: 80.0,
                decimation: 10,
                sensing: Sensing::Ideal,
                discretization: Discretization::Matched,
                warmup_decay_times: 5.0,
                samples: None,
            },
            analysis,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.oscillator_params()?;
        let fb = &self.feedback;
        if fb.gains_over_gamma.is_empty() {
            return Err(Error::invalid("feedback.gains_over_gamma is empty"));
        }
        if fb.gains_over_gamma.iter().any(|g| !g.is_finite()) {
            return Err(Error::invalid("feedback.gains_over_gamma must be finite"));
        }
        if !(fb.filter_center_ratio > 0.0 && fb.filter_q > 0.0 && fb.actuator_max_power > 0.0) {
            return Err(Error::invalid("filter centre, filter Q and actuator power must be positive"));
        }
        if !(self.background.fraction_of_peak >= 0.0) {
            return Err(Error::invalid("background.fraction_of_peak must be non-negative"));
        }
        let s = &self.sim;
        if !(s.steps_per_period > 0.0) || s.decimation == 0 || !(s.warmup_decay_times >= 0.0) {
            return Err(Error::invalid("sim section needs positive steps_per_period and decimation"));
        }
        let a = &self.analysis;
        if a.averages < 2 || a.min_averages < 2 || !(a.bins_per_linewidth > 0.0) || !(a.band_over_gamma > 0.0) {
            return Err(Error::invalid("analysis needs ≥ 2 averages, positive bins_per_linewidth and band"));
        }
        if a.rbw_hz.is_some_and(|r| !(r > 0.0)) {
            return Err(Error::invalid("analysis.rbw_hz must be positive"));
        }
        if !(a.max_steps_per_point > 0.0 && a.step_budget >= 0.0) || a.oracle_bands == 0 {
            return Err(Error::invalid(
                "analysis.max_steps_per_point and oracle_bands must be positive, step_budget non-negative",
            ));
        }
        Ok(())
    }

    pub fn oscillator_params(&self) -> Result<OscillatorParams> {
        let o = &self.oscillator;
        OscillatorParams::from_q(o.mass_eff, o.omega_m, o.q, o.temperature)
    }

    /// Open-loop thermal PSD at resonance (double-sided, rad/s), the
    /// reference for the floor and background levels.
    pub fn open_loop_peak(&self) -> Result<f64> {
        let p = self.oscillator_params()?;
        Ok(thermal_displacement_psd(&p, p.omega_m))
    }

    pub fn shot_noise_floor(&self) -> Result<f64> {
        Ok(match self.readout.peak_over_floor_db {
            Some(db) => self.open_loop_peak()? * 10f64.powf(-db / 10.0),
            None => 0.0,
        })
    }

    /// Experiment at loop gain `g_over_gamma · Γ`; zero gain leaves the loop
    /// disabled.
    pub fn experiment(&self, g_over_gamma: f64) -> Result<Experiment> {
        let p = self.oscillator_params()?;
        let fb = &self.feedback;
        let mut feedback = FeedbackConfig {
            gain: 0.0,
            loop_phase: fb.loop_phase,
            filter_center: fb.filter_center_ratio * p.omega_m,
            filter_q: fb.filter_q,
            actuator_max_power: fb.actuator_max_power,
            enabled: false,
        };
        if g_over_gamma != 0.0 {
            feedback = feedback.with_gain(g_over_gamma * p.gamma);
        }
        let actuator = ActuatorModel { saturate: fb.saturate, ..ActuatorModel::for_feedback(&feedback) };
        let exp = Experiment {
            oscillator: p,
            readout: ReadoutParams {
                finesse: self.readout.finesse,
                wavelength: self.readout.wavelength,
                shot_noise_floor: self.shot_noise_floor()?,
            },
            feedback,
            actuator,
            background: BackgroundModel {
                level: self.background.fraction_of_peak * self.open_loop_peak()?,
                affected_by_feedback: self.background.affected_by_feedback,
            },
        };
        exp.validate()?;
        Ok(exp)
    }

    /// Integration settings shared by every run point; `n_samples` and the
    /// warm-up are filled in per point.
    pub fn base_sim_config(&self, seed: u64) -> Result<SimConfig> {
        let p = self.oscillator_params()?;
        let mut cfg = SimConfig::for_mode(&p);
        cfg.dt = 2.0 * PI / (self.sim.steps_per_period * p.omega_m);
        cfg.decimation = self.sim.decimation;
        cfg.sensing = self.sim.sensing;
        cfg.discretization = self.sim.discretization;
        cfg.initial = InitialState::Thermal;
        cfg.seed = seed;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(e.to_string()))
    }
}

/// Resolves a configuration document over the defaults.
///
/// `doc` may be a bare configuration or a run manifest (whose `config` table
/// holds the resolved configuration). Keys missing from the document keep
/// their defaults for the scenario and profile; `name` and `profile` given
/// by the caller take precedence over the document.
pub fn resolve_config(doc: Option<&str>, name: Option<ScenarioName>, profile: Option<Profile>) -> Result<ScenarioConfig> {
    let mut user = match doc {
        Some(text) => {
            let value: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Format(e.to_string()))?;
            match value.get("config") {
                Some(toml::Value::Table(t)) => t.clone(),
                Some(_) => return Err(Error::Format("manifest `config` entry is not a table".into())),
                None => value,
            }
        }
        None => toml::Table::new(),
    };
    let doc_name = match user.get("name") {
        Some(toml::Value::String(s)) => Some(s.parse::<ScenarioName>()?),
        Some(_) => return Err(Error::Format("`name` must be a string".into())),
        None => None,
    };
    let name = match (name, doc_name) {
        (Some(a), Some(b)) if a != b => {
            return Err(Error::invalid(format!("configuration is for scenario {b}, not {a}")));
        }
        (Some(a), _) => a,
        (None, Some(b)) => b,
        (None, None) => return Err(Error::invalid("no scenario name given")),
    };
    let doc_profile = match user.get("profile") {
        Some(toml::Value::String(s)) => Some(s.parse::<Profile>()?),
        Some(_) => return Err(Error::Format("`profile` must be a string".into())),
        None => None,
    };
    let profile = profile.or(doc_profile).unwrap_or_default();
    user.insert("name".into(), toml::Value::String(name.as_str().into()));
    user.insert(
        "profile".into(),
        toml::Value::String(match profile {
            Profile::Scaled => "scaled".into(),
            Profile::Physical => "physical".into(),
        }),
    );
    let defaults = ScenarioConfig::defaults(name, profile);
    let mut merged = toml::Table::try_from(&defaults).map_err(|e| Error::Format(e.to_string()))?;
    merge(&mut merged, user);
    let cfg: ScenarioConfig = toml::Value::Table(merged)
        .try_into()
        .map_err(|e: toml::de::Error| Error::Format(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        for name in ScenarioName::ALL {
            for profile in [Profile::Scaled, Profile::Physical] {
                let cfg = ScenarioConfig::defaults(name, profile);
                cfg.validate().unwrap();
                let text = cfg.to_toml().unwrap();
                let back = resolve_config(Some(&text), None, None).unwrap();
                assert_eq!(back, cfg, "{name} {profile:?}");
            }
        }
    }

    #[test]
    fn partial_override() {
        let doc = "seed = 9\n[analysis]\naverages = 50\n";
        let cfg = resolve_config(Some(doc), Some(ScenarioName::GainSweep), None).unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.analysis.averages, 50);
        assert_eq!(cfg.feedback.gains_over_gamma, DEFAULT_GAIN_GRID.to_vec());
        assert!(resolve_config(Some("[analysis]\naveragez = 3\n"), Some(ScenarioName::Heating), None).is_err());
        assert!(resolve_config(Some("name = \"heating\"\n"), Some(ScenarioName::GainSweep), None).is_err());
        let manifest = format!("version = \"x\"\n[config]\n{}", "seed = 4\nname = \"heating\"\n");
        assert_eq!(resolve_config(Some(&manifest), None, None).unwrap().seed, 4);
    }

    #[test]
    fn offres_gain_is_four_spring_matchings() {
        let cfg = ScenarioConfig::defaults(ScenarioName::OffresCooling, Profile::Scaled);
        let exp = cfg.experiment(cfg.feedback.gains_over_gamma[1]).unwrap();
        let wc = exp.feedback.filter_center;
        let spring = exp.oscillator.omega_m.powi(2) - wc * wc;
        assert!((exp.feedback.gain * wc / spring - 4.0).abs() < 1e-12);
    }

    #[test]
    fn physical_profile_linewidth() {
        let cfg = ScenarioConfig::defaults(ScenarioName::CoolingSpectra, Profile::Physical);
        let p = cfg.oscillator_params().unwrap();
        assert!((p.gamma / (2.0 * PI) - 45.0).abs() < 1e-9);
    }
}
