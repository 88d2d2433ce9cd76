use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use coldmirror::model::{
    closed_loop_psd, effective_temperature, hz_to_rad, noise_reduction_r, thermal_displacement_psd, to_single_sided_hz,
    FeedbackConfig, LoopResponse, OscillatorParams,
};
use coldmirror::scenarios::{resolve_config, run_scenario, Profile, RunManifest, RunOptions, ScenarioConfig, ScenarioName};
use coldmirror::sim::{io, simulate as run_simulation};
use coldmirror::spectral::{lorentzian_fit, trajectory_spectrum, Spectrum, Window};

use crate::units::FilterCenter;
use crate::{ConfigArgs, FitArgs, Format, OracleArgs, ScenarioArgs, SimulateArgs, SpectrumArgs};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] coldmirror::Error),
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    File { path: PathBuf, source: std::io::Error },
}

impl CliError {
    /// 2 for numerical failures, 1 for everything the user can fix.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(e) if e.is_numerical() => 2,
            _ => 1,
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|source| CliError::File { path: path.into(), source })
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|source| CliError::File { path: path.into(), source })
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|source| CliError::File { path: dir.into(), source })
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

/// Loads the configuration document and applies the command-line
/// overrides, then validates the result.
fn load_config(args: &ConfigArgs, name: Option<ScenarioName>) -> Result<ScenarioConfig> {
    let doc = match args.config.as_deref() {
        None | Some("defaults") => None,
        Some(path) => {
            let path = Path::new(path);
            Some(fs::read_to_string(path).map_err(|source| CliError::File { path: path.into(), source })?)
        }
    };
    let profile = match (args.scaled, args.physical) {
        (_, true) => Some(Profile::Physical),
        (true, _) => Some(Profile::Scaled),
        _ => None,
    };
    let mut cfg = match name {
        Some(n) => resolve_config(doc.as_deref(), Some(n), profile)?,
        // A bare `simulate` takes the scenario from the document if it names
        // one, else the cooling defaults.
        None => resolve_config(doc.as_deref(), None, profile)
            .or_else(|_| resolve_config(doc.as_deref(), Some(ScenarioName::CoolingSpectra), profile))?,
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(gains) = &args.gain_over_gamma {
        cfg.feedback.gains_over_gamma = gains.0.clone();
    }
    if let Some(rbw) = args.rbw_hz {
        cfg.analysis.rbw_hz = Some(rbw);
    }
    if let Some(n) = args.averages {
        cfg.analysis.averages = n;
        cfg.analysis.min_averages = cfg.analysis.min_averages.min(n);
    }
    match args.filter_center {
        Some(FilterCenter::Ratio(r)) => cfg.feedback.filter_center_ratio = r,
        Some(FilterCenter::Hz(f)) => cfg.feedback.filter_center_ratio = hz_to_rad(f) / cfg.oscillator.omega_m,
        None => {}
    }
    if let Some(q) = args.filter_q {
        cfg.feedback.filter_q = q;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn simulate(args: SimulateArgs) -> Result<()> {
    let mut cfg = load_config(&args.common, None)?;
    let g = match args.common.gain_over_gamma.as_ref().map(|l| l.0.as_slice()) {
        None => 0.0,
        Some([g]) => *g,
        Some(_) => return Err(CliError::Usage("simulate takes a single --gain-over-gamma".into())),
    };
    cfg.feedback.gains_over_gamma = vec![g];
    if let Some(n) = args.samples {
        cfg.sim.samples = Some(n);
    }
    let exp = cfg.experiment(g)?;
    let gamma_eff = exp.closed_loop_linewidth();
    let mut sim = cfg.base_sim_config(cfg.seed)?;
    sim.n_samples = match cfg.sim.samples {
        Some(n) => n,
        None => (20.0 / (gamma_eff * sim.sample_interval())).ceil() as usize,
    };
    sim.warmup = cfg.sim.warmup_decay_times / gamma_eff;
    sim.record_force = args.record_force;

    let dir = args.common.out.clone().unwrap_or_else(|| PathBuf::from("out/simulate"));
    let file_name = match args.format {
        Format::Text => "trajectory.tsv",
        Format::Binary => "trajectory.bin",
    };
    let mut manifest = RunManifest::new(&cfg, now());
    manifest.outputs = vec!["manifest.toml".into(), file_name.into()];
    manifest.write(&dir)?;

    let traj = run_simulation(&exp, &sim)?;
    let path = dir.join(file_name);
    let w = create(&path)?;
    match args.format {
        Format::Text => io::write_text(&traj, w)?,
        Format::Binary => io::write_binary(&traj, w)?,
    }
    let p = exp.oscillator;
    let var = traj.x_series.iter().map(|x| x * x).sum::<f64>() / traj.len() as f64;
    let expected = p.thermal_variance() * effective_temperature(&p, g * p.gamma)? / p.temperature.max(f64::MIN_POSITIVE);
    println!("samples\t{}", traj.len());
    println!("sample_interval_s\t{:e}", traj.dt);
    println!("variance_over_equipartition\t{:.4}", var / expected);
    println!("wrote\t{}", path.display());
    Ok(())
}

pub fn spectrum(args: SpectrumArgs) -> Result<()> {
    let traj = io::read_file(&args.input).map_err(|e| match e {
        coldmirror::Error::Io(source) => CliError::File { path: args.input.clone(), source },
        e => e.into(),
    })?;
    let rbw = match args.rbw_hz {
        Some(r) => r,
        None => {
            let gamma_eff = traj.meta.experiment.closed_loop_linewidth();
            Window::Hann.nominal_enbw() * gamma_eff / (2.0 * std::f64::consts::PI * 8.0)
        }
    };
    let s = trajectory_spectrum(&traj, rbw, Window::Hann)?;
    let dir = match args.out {
        Some(d) => d,
        None => args.input.parent().map(Path::to_path_buf).unwrap_or_default(),
    };
    if !dir.as_os_str().is_empty() {
        create_dir(&dir)?;
    }
    let path = dir.join("spectrum.tsv");
    s.write_text(create(&path)?)?;
    println!("rbw_hz\t{:e}", s.rbw);
    println!("averages\t{}", s.n_averages);
    println!("bins\t{}", s.len());
    println!("wrote\t{}", path.display());
    Ok(())
}

pub fn fit(args: FitArgs) -> Result<()> {
    let s = Spectrum::read_text(BufReader::new(open(&args.input)?))?;
    let f = lorentzian_fit(&s, args.window)?;
    println!("center_hz\t{:.10e}", f.center);
    println!("width_hz\t{:.10e}", f.width);
    println!("area\t{:.10e}", f.area);
    println!("peak\t{:.10e}", f.peak);
    println!("background\t{:.10e}", f.background);
    println!("residual_rms\t{:.4e}", f.residual_rms);
    println!("converged\t{}", f.converged);
    println!("iterations\t{}", f.iterations);
    Ok(())
}

pub fn scenario(args: ScenarioArgs) -> Result<()> {
    let name: ScenarioName = args.name.parse()?;
    let mut cfg = load_config(&args.common, Some(name))?;
    let gains = &mut cfg.feedback.gains_over_gamma;
    if name != ScenarioName::OracleCheck && !gains.contains(&0.0) {
        gains.insert(0, 0.0);
    }
    let dir = args.common.out.clone().unwrap_or_else(|| Path::new("out").join(name.as_str()));
    RunManifest::new(&cfg, now()).write(&dir)?;
    let report = run_scenario(&cfg, &RunOptions { threads: args.common.threads })?;
    report.write(&dir)?;
    let mut out = std::io::stdout().lock();
    for (k, v) in &report.summary {
        writeln!(out, "{k}\t{v}").map_err(coldmirror::Error::from)?;
    }
    for f in &report.flags {
        eprintln!("warning: {f}");
    }
    writeln!(out, "wrote\t{}", dir.display()).map_err(coldmirror::Error::from)?;
    Ok(())
}

/// Rounds to six significant digits for display, so that exact ratios
/// print as `20` rather than `20.000000000000004`.
fn short(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return v.to_string();
    }
    let magnitude = v.abs().log10().floor() as i32;
    if !(-4..9).contains(&magnitude) {
        return format!("{v:.5e}");
    }
    let s = format!("{v:.*}", (5 - magnitude).max(0) as usize);
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

pub fn oracle(args: OracleArgs) -> Result<()> {
    let omega_m = hz_to_rad(args.fm_khz);
    let gamma = hz_to_rad(args.gamma_hz);
    let p = OscillatorParams::new(args.mass, omega_m, gamma, args.temperature)?;
    let mut blocks = Vec::new();
    for &k in &args.g_over_gamma.0 {
        let g = k * gamma;
        let r = noise_reduction_r(gamma, g)?;
        let t_fb = effective_temperature(&p, g)?;
        blocks.push(format!(
            "g/Γ = {}\nR = {}\nT/T_fb = {}\nΓ_fb/2π = {} Hz\nQ_eff = {}\nT_fb = {} K",
            short(k),
            short(r),
            short(p.temperature / t_fb),
            short(args.gamma_hz * (1.0 + k)),
            short(omega_m / (gamma + g)),
            short(t_fb),
        ));
    }
    println!("{}", blocks.join("\n\n"));

    if let Some(dir) = args.out {
        create_dir(&dir)?;
        let path = dir.join("oracle.tsv");
        let mut w = create(&path)?;
        let widest = args.g_over_gamma.0.iter().fold(1.0f64, |m, &k| m.max(1.0 + k));
        let span = 10.0 * widest * args.gamma_hz;
        let write_err = |e: std::io::Error| CliError::File { path: path.clone(), source: e };
        writeln!(w, "# single-sided displacement PSD, m^2/Hz").map_err(write_err)?;
        let mut header = vec!["freq_hz".to_string(), "open_loop".to_string()];
        header.extend(args.g_over_gamma.0.iter().map(|k| format!("g{}", short(*k))));
        writeln!(w, "{}", header.join("\t")).map_err(write_err)?;
        let feedback: Vec<FeedbackConfig> =
            args.g_over_gamma.0.iter().map(|&k| FeedbackConfig::disabled(&p).with_gain(k * gamma)).collect();
        for i in 0..=2000 {
            let f = args.fm_khz - span + 2.0 * span * i as f64 / 2000.0;
            if f <= 0.0 {
                continue;
            }
            let w_rad = hz_to_rad(f);
            let mut row = vec![format!("{f:.10e}"), format!("{:.10e}", to_single_sided_hz(thermal_displacement_psd(&p, w_rad)))];
            for fb in &feedback {
                let s = closed_loop_psd(&p, fb, w_rad, LoopResponse::InBand)?;
                row.push(format!("{:.10e}", to_single_sided_hz(s)));
            }
            writeln!(w, "{}", row.join("\t")).map_err(write_err)?;
        }
        w.flush().map_err(write_err)?;
        println!("\nwrote\t{}", path.display());
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::short;

    #[test]
    fn short_numbers() {
        assert_eq!(short(20.000000000000004), "20");
        assert_eq!(short(15.0), "15");
        assert_eq!(short(2065.4444), "2065.44");
        assert_eq!(short(0.02), "0.02");
        assert_eq!(short(1.234e-9), "1.23400e-9");
    }
}
