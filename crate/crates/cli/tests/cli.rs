use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn coldmirror(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_coldmirror"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Value of a `key<TAB>value` line.
fn field(text: &str, key: &str) -> f64 {
    text.lines()
        .find_map(|l| l.strip_prefix(key).and_then(|r| r.strip_prefix('\t')))
        .unwrap_or_else(|| panic!("no {key} in {text}"))
        .trim()
        .parse()
        .unwrap()
}

#[test]
fn oracle_prints_the_cooling_numbers() {
    let dir = tempfile::tempdir().unwrap();
    let o = coldmirror(&["oracle", "--gamma-hz", "45", "--fm-khz", "1858.9", "--g-over-gamma", "19"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.lines().any(|l| l == "R = 20"), "{out}");
    assert!(out.lines().any(|l| l == "T/T_fb = 20"), "{out}");
    assert!(out.lines().any(|l| l == "Γ_fb/2π = 900 Hz"), "{out}");
}

#[test]
fn oracle_accepts_unit_suffixes_and_writes_curves() {
    let dir = tempfile::tempdir().unwrap();
    let o = coldmirror(
        &["oracle", "--gamma-hz", "0.045khz", "--fm-khz", "1.8589MHz", "--g-over-gamma", "-0.98,19", "--out", "curves"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("R = 0.02"));
    let table = fs::read_to_string(dir.path().join("curves/oracle.tsv")).unwrap();
    assert!(table.lines().nth(1).unwrap().starts_with("freq_hz\topen_loop\tg-0.98\tg19"));
    assert_eq!(table.lines().count(), 2 + 2001);
}

#[test]
fn usage_and_validation_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        &["frobnicate"][..],
        &["oracle", "--bogus"],
        &["oracle", "--gamma-hz", "fast"],
        &["oracle", "--gamma-hz", "-45"],
        &["oracle", "--g-over-gamma", "-1"],
        &["scenario", "no_such_scenario"],
        &["scenario", "heating", "--averages", "2.5"],
        &["scenario", "heating", "--scaled", "--physical"],
        &["scenario", "heating", "--config", "missing.toml"],
        &["spectrum", "missing.tsv"],
    ] {
        let o = coldmirror(args, dir.path());
        assert_eq!(o.status.code(), Some(1), "{args:?}: {}", stderr(&o));
        assert!(!stderr(&o).is_empty());
    }
    assert_eq!(coldmirror(&["--help"], dir.path()).status.code(), Some(0));
}

#[test]
fn fit_of_a_flat_spectrum_is_a_numerical_failure() {
    let dir = tempfile::tempdir().unwrap();
    let mut text = String::from("# rbw_hz 1.5\n# n_averages 10\n# normalized false\n# freq_hz\tpsd\n");
    for i in 0..200 {
        text.push_str(&format!("{i}\t1e-20\n"));
    }
    fs::write(dir.path().join("flat.tsv"), text).unwrap();
    let o = coldmirror(&["fit", "flat.tsv"], dir.path());
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("no peak"), "{}", stderr(&o));
}

#[test]
fn simulate_spectrum_fit_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    for (format, file) in [("text", "trajectory.tsv"), ("binary", "trajectory.bin")] {
        let out = format!("run-{format}");
        let o = coldmirror(
            &["simulate", "--gain-over-gamma", "4", "--seed", "3", "--samples", "200k", "--format", format, "--out", &out],
            dir.path(),
        );
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        let run = dir.path().join(&out);
        assert!(run.join("manifest.toml").exists());
        let ratio = field(&stdout(&o), "variance_over_equipartition");
        assert!((ratio - 1.0).abs() < 0.15, "{ratio}");

        let o = coldmirror(&["spectrum", &format!("{out}/{file}")], dir.path());
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        assert!(field(&stdout(&o), "averages") >= 16.0);

        let o = coldmirror(&["fit", &format!("{out}/spectrum.tsv")], dir.path());
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        // Scaled units: Γ_fb/2π = 5 × 10⁻³/2π Hz at g = 4Γ.
        let width = field(&stdout(&o), "width_hz");
        let expected = 5e-3 / (2.0 * std::f64::consts::PI);
        assert!((width / expected - 1.0).abs() < 0.15, "{width} vs {expected}");
    }
}

#[test]
fn scenario_report_reruns_identically_from_its_manifest() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("quick.toml"),
        "[analysis]\naverages = 16\nstep_budget = 0.0\nbins_per_linewidth = 4.0\n",
    )
    .unwrap();
    let o = coldmirror(
        &["scenario", "gain_sweep", "--config", "quick.toml", "--gain-over-gamma", "4", "--seed", "7", "--out", "a"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let a = dir.path().join("a");
    for f in ["manifest.toml", "metrics.tsv", "summary.tsv", "spectra/g+0.tsv", "spectra/g+4.tsv", "overlays/damping_line.tsv"] {
        assert!(a.join(f).exists(), "{f}");
    }
    let manifest = fs::read_to_string(a.join("manifest.toml")).unwrap();
    assert!(manifest.contains("seed = 7"));

    let o = coldmirror(&["scenario", "gain_sweep", "--config", "a/manifest.toml", "--out", "b", "--threads", "1"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let read = |d: &str| fs::read(dir.path().join(d).join("metrics.tsv")).unwrap();
    assert_eq!(read("a"), read("b"));
}

#[test]
fn scenario_with_default_configuration_keyword() {
    let dir = tempfile::tempdir().unwrap();
    let o = coldmirror(
        &[
            "scenario", "offres_cooling", "--config", "defaults", "--filter-center", "0.5", "--filter-q", "50", "--out", "x",
            "--averages", "16",
        ],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let manifest = fs::read_to_string(dir.path().join("x/manifest.toml")).unwrap();
    assert!(manifest.contains("filter_center_ratio = 0.5"), "{manifest}");
    assert!(manifest.contains("filter_q = 50.0"), "{manifest}");
}
