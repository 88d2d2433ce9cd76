use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Single-sided power spectral density on a uniform frequency grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    /// Hz, uniformly spaced and increasing.
    pub freq: Vec<f64>,
    /// m²/Hz, or dimensionless when `normalized`.
    pub psd: Vec<f64>,
    /// Resolution bandwidth, Hz.
    pub rbw: f64,
    pub n_averages: usize,
    pub normalized: bool,
    /// Known white floor contained in `psd`, in the same units.
    pub floor: Option<f64>,
}

impl Spectrum {
    pub fn len(&self) -> usize {
        self.freq.len()
    }

    pub fn is_empty(&self) -> bool {
        self.freq.is_empty()
    }

    /// Spacing of the frequency grid, Hz.
    pub fn bin_width(&self) -> f64 {
        if self.freq.len() < 2 {
            0.0
        } else {
            (self.freq[self.freq.len() - 1] - self.freq[0]) / (self.freq.len() - 1) as f64
        }
    }

    pub fn units(&self) -> &'static str {
        if self.normalized {
            "shot-noise units"
        } else {
            "m^2/Hz"
        }
    }

    /// Index range of bins with `lo ≤ f ≤ hi`.
    pub fn bins_in(&self, lo: f64, hi: f64) -> std::ops::Range<usize> {
        let start = self.freq.partition_point(|&f| f < lo);
        let end = self.freq.partition_point(|&f| f <= hi);
        start..end.max(start)
    }

    /// Index of the largest value; ties resolve to the lowest frequency.
    pub fn peak_index(&self) -> Option<usize> {
        let mut best: Option<usize> = None;
        for (i, &v) in self.psd.iter().enumerate() {
            if best.is_none_or(|b| v > self.psd[b]) {
                best = Some(i);
            }
        }
        best
    }

    /// Interpolated value at `f` (linear between bins, clamped at the ends).
    pub fn value_at(&self, f: f64) -> f64 {
        let n = self.freq.len();
        if n == 0 {
            return 0.0;
        }
        let i = self.freq.partition_point(|&x| x < f);
        if i == 0 {
            return self.psd[0];
        }
        if i >= n {
            return self.psd[n - 1];
        }
        let (f0, f1) = (self.freq[i - 1], self.freq[i]);
        let t = (f - f0) / (f1 - f0);
        self.psd[i - 1] * (1.0 - t) + self.psd[i] * t
    }

    /// Writes the spectrum as tab-separated text with `#` header lines.
    pub fn write_text<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# rbw_hz {}", self.rbw)?;
        writeln!(w, "# n_averages {}", self.n_averages)?;
        writeln!(w, "# normalized {}", self.normalized)?;
        match self.floor {
            Some(f) => writeln!(w, "# floor {f}")?,
            None => writeln!(w, "# floor none")?,
        }
        writeln!(w, "# units {}", self.units().replace(' ', "_"))?;
        writeln!(w, "# freq_hz\tpsd")?;
        for (f, p) in self.freq.iter().zip(&self.psd) {
            writeln!(w, "{f}\t{p}")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_text<R: BufRead>(r: R) -> Result<Self> {
        let mut s = Spectrum {
            freq: Vec::new(),
            psd: Vec::new(),
            rbw: f64::NAN,
            n_averages: 0,
            normalized: false,
            floor: None,
        };
        let bad = |what: &str| Error::Format(format!("bad {what} header"));
        for (lineno, line) in r.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(h) = line.strip_prefix('#') {
                let mut parts = h.split_whitespace();
                let (Some(key), value) = (parts.next(), parts.next()) else { continue };
                match (key, value) {
                    ("rbw_hz", Some(v)) => s.rbw = v.parse().map_err(|_| bad("rbw_hz"))?,
                    ("n_averages", Some(v)) => s.n_averages = v.parse().map_err(|_| bad("n_averages"))?,
                    ("normalized", Some(v)) => s.normalized = v.parse().map_err(|_| bad("normalized"))?,
                    ("floor", Some("none")) => s.floor = None,
                    ("floor", Some(v)) => s.floor = Some(v.parse().map_err(|_| bad("floor"))?),
                    _ => {}
                }
                continue;
            }
            let mut cols = line.split('\t');
            let (Some(f), Some(p), None) = (cols.next(), cols.next(), cols.next()) else {
                return Err(Error::Format(format!("line {}: expected 2 columns", lineno + 1)));
            };
            let num = |v: &str| {
                v.parse::<f64>()
                    .map_err(|_| Error::Format(format!("line {}: cannot parse {v:?}", lineno + 1)))
            };
            s.freq.push(num(f)?);
            s.psd.push(num(p)?);
        }
        if s.rbw.is_nan() {
            return Err(Error::Format("missing rbw_hz header".into()));
        }
        Ok(s)
    }
}

/// Expresses a spectrum in units of the shot-noise floor.
///
/// With `floor_included` the series already contains the floor and the
/// spectrum is simply divided by it; otherwise the floor is added first, as
/// a noiseless simulation would need. Either way the far-off-resonance
/// baseline becomes 1.
pub fn normalize_to_shot_noise(s: &Spectrum, floor: f64, floor_included: bool) -> Result<Spectrum> {
    if !(floor > 0.0 && floor.is_finite()) {
        return Err(Error::invalid(format!("shot-noise floor must be positive, got {floor}")));
    }
    if s.normalized {
        return Err(Error::invalid("spectrum is already normalized"));
    }
    let add = if floor_included { 0.0 } else { floor };
    Ok(Spectrum {
        psd: s.psd.iter().map(|p| (p + add) / floor).collect(),
        normalized: true,
        floor: Some(1.0),
        ..s.clone()
    })
}

/// Inverse of [`normalize_to_shot_noise`] with the same arguments.
pub fn denormalize(s: &Spectrum, floor: f64, floor_included: bool) -> Result<Spectrum> {
    if !(floor > 0.0 && floor.is_finite()) {
        return Err(Error::invalid(format!("shot-noise floor must be positive, got {floor}")));
    }
    if !s.normalized {
        return Err(Error::invalid("spectrum is not normalized"));
    }
    let sub = if floor_included { 0.0 } else { floor };
    Ok(Spectrum {
        psd: s.psd.iter().map(|p| p * floor - sub).collect(),
        normalized: false,
        floor: floor_included.then_some(floor),
        ..s.clone()
    })
}

/// Trapezoidal integral of the spectrum over `[lo, hi]` Hz, optionally with
/// the recorded floor removed first.
pub fn band_variance(s: &Spectrum, band: (f64, f64), subtract_floor: bool) -> Result<f64> {
    let (lo, hi) = band;
    if !(lo < hi) {
        return Err(Error::invalid(format!("empty band [{lo}, {hi}]")));
    }
    if s.len() < 2 || lo < s.freq[0] - 0.5 * s.bin_width() || hi > s.freq[s.len() - 1] + 0.5 * s.bin_width() {
        return Err(Error::invalid(format!("band [{lo}, {hi}] Hz is outside the spectrum")));
    }
    let floor = if subtract_floor {
        s.floor
            .ok_or_else(|| Error::invalid("spectrum carries no floor to subtract"))?
    } else {
        0.0
    };
    let range = s.bins_in(lo, hi);
    if range.len() < 2 {
        return Err(Error::InsufficientData(format!("band [{lo}, {hi}] Hz holds fewer than two bins")));
    }
    let (f, p) = (&s.freq[range.clone()], &s.psd[range]);
    let mut acc = 0.0;
    for i in 1..f.len() {
        acc += 0.5 * (p[i] + p[i - 1] - 2.0 * floor) * (f[i] - f[i - 1]);
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat(level: f64, n: usize) -> Spectrum {
        Spectrum {
            freq: (0..n).map(|i| i as f64 * 0.5).collect(),
            psd: vec![level; n],
            rbw: 0.75,
            n_averages: 10,
            normalized: false,
            floor: None,
        }
    }

    #[test]
    fn normalization_round_trip() {
        let s = flat(0.0, 8);
        let n = normalize_to_shot_noise(&s, 2e-30, false).unwrap();
        assert!(n.psd.iter().all(|&v| v == 1.0));
        let mut peak = flat(1e-30, 8);
        peak.psd[3] = 1e-26;
        let n = normalize_to_shot_noise(&peak, 1e-30, false).unwrap();
        assert!(((n.psd[3] - 1e4 - 1.0) / 1e4).abs() < 1e-12);
        let back = denormalize(&n, 1e-30, false).unwrap();
        for (a, b) in back.psd.iter().zip(&peak.psd) {
            assert!((a - b).abs() <= 1e-15 * b.abs().max(1e-30));
        }
        assert!(normalize_to_shot_noise(&peak, 0.0, true).is_err());
        assert!(normalize_to_shot_noise(&n, 1.0, true).is_err());
    }

    #[test]
    fn band_variance_of_flat_spectrum() {
        let s = flat(2.0, 101);
        let v = band_variance(&s, (10.0, 20.0), false).unwrap();
        assert!((v - 2.0 * 10.0).abs() < 1e-12, "{v}");
        let a = band_variance(&s, (0.0, 10.0), false).unwrap();
        let b = band_variance(&s, (10.0, 50.0), false).unwrap();
        let all = band_variance(&s, (0.0, 50.0), false).unwrap();
        assert!((a + b - all).abs() < 1e-12);
        assert!(band_variance(&s, (20.0, 10.0), false).is_err());
        assert!(band_variance(&s, (0.0, 10.0), true).is_err());
        let mut with_floor = s.clone();
        with_floor.floor = Some(2.0);
        assert_eq!(band_variance(&with_floor, (0.0, 10.0), true).unwrap(), 0.0);
    }

    #[test]
    fn text_round_trip() {
        let mut s = flat(1.0 / 3.0, 5);
        s.psd[2] = std::f64::consts::PI * 1e-27;
        s.floor = Some(1e-31);
        s.rbw = 0.1 + 0.2;
        let mut buf = Vec::new();
        s.write_text(&mut buf).unwrap();
        assert_eq!(Spectrum::read_text(&buf[..]).unwrap(), s);
    }

    #[test]
    fn peak_ties_go_low() {
        let mut s = flat(1.0, 6);
        s.psd[2] = 5.0;
        s.psd[4] = 5.0;
        assert_eq!(s.peak_index(), Some(2));
        assert_eq!(s.bins_in(0.9, 2.0), 2..5);
    }
}
