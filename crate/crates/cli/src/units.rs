//! Numeric flag values with optional unit or multiplier suffixes.
//!
//! Frequencies accept `hz`, `khz` and `mhz` (case-insensitive, `mhz` being
//! megahertz) or the bare multipliers `k`/`K` and `M`. A number without a
//! suffix is read in the flag's own unit.

/// Splits `s` into its numeric part and a multiplier for a recognised suffix.
fn split_suffix(s: &str, allow_hz: bool) -> Result<(f64, Option<f64>), String> {
    let t = s.trim();
    let lower = t.to_ascii_lowercase();
    let mut suffixes: Vec<(&str, f64)> = Vec::new();
    if allow_hz {
        suffixes.extend([("khz", 1e3), ("mhz", 1e6), ("hz", 1.0)]);
    }
    for (suf, scale) in suffixes {
        if let Some(num) = lower.strip_suffix(suf) {
            return Ok((parse_number(num, s)?, Some(scale)));
        }
    }
    if let Some(num) = t.strip_suffix(['k', 'K']) {
        return Ok((parse_number(num, s)?, Some(1e3)));
    }
    if let Some(num) = t.strip_suffix('M') {
        return Ok((parse_number(num, s)?, Some(1e6)));
    }
    Ok((parse_number(t, s)?, None))
}

fn parse_number(num: &str, original: &str) -> Result<f64, String> {
    let v: f64 = num
        .trim()
        .parse()
        .map_err(|_| format!("cannot read {original:?} as a number"))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("{original:?} is not finite"))
    }
}

/// Frequency in Hz; a bare number is multiplied by `default_scale`.
pub fn frequency(s: &str, default_scale: f64) -> Result<f64, String> {
    let (v, scale) = split_suffix(s, true)?;
    let hz = v * scale.unwrap_or(default_scale);
    if hz > 0.0 {
        Ok(hz)
    } else {
        Err(format!("frequency {s:?} must be positive"))
    }
}

pub fn hz(s: &str) -> Result<f64, String> {
    frequency(s, 1.0)
}

pub fn khz(s: &str) -> Result<f64, String> {
    frequency(s, 1e3)
}

/// Plain number with an optional `k`/`M` multiplier.
pub fn number(s: &str) -> Result<f64, String> {
    let (v, scale) = split_suffix(s, false)?;
    Ok(v * scale.unwrap_or(1.0))
}

pub fn positive(s: &str) -> Result<f64, String> {
    let v = number(s)?;
    if v > 0.0 {
        Ok(v)
    } else {
        Err(format!("{s:?} must be positive"))
    }
}

pub fn count(s: &str) -> Result<usize, String> {
    let v = number(s)?;
    if v >= 1.0 && v.fract() == 0.0 && v < 1e15 {
        Ok(v as usize)
    } else {
        Err(format!("{s:?} is not a positive whole number"))
    }
}

/// Comma-separated list of numbers.
#[derive(Debug, Clone, PartialEq)]
pub struct List(pub Vec<f64>);

pub fn list(s: &str) -> Result<List, String> {
    s.split(',').map(number).collect::<Result<_, _>>().map(List)
}

/// Filter centre: a bare number is a ratio to the mode frequency, a value
/// with a unit or multiplier is an absolute frequency.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FilterCenter {
    Ratio(f64),
    Hz(f64),
}

pub fn filter_center(s: &str) -> Result<FilterCenter, String> {
    let (v, scale) = split_suffix(s, true)?;
    if !(v > 0.0) {
        return Err(format!("filter centre {s:?} must be positive"));
    }
    Ok(match scale {
        Some(k) => FilterCenter::Hz(v * k),
        None => FilterCenter::Ratio(v),
    })
}

/// Frequency band `lo:hi` in Hz.
pub fn band(s: &str) -> Result<(f64, f64), String> {
    let (lo, hi) = s.split_once(':').ok_or_else(|| format!("band {s:?} must look like lo:hi"))?;
    let (lo, hi) = (hz(lo)?, hz(hi)?);
    if lo < hi {
        Ok((lo, hi))
    } else {
        Err(format!("band {s:?} is empty"))
    }
}
