//! Least-squares fit of a mechanical Lorentzian plus a flat background.
//!
//! The model is `A / ((Ω_c² − Ω²)² + Γ_f² Ω²) + B`, whose half-maximum
//! points are exactly `Γ_f` apart. Internally it is parametrised by its
//! height `h = A/(Γ_f² Ω_c²)` in units of the largest bin, and angular
//! frequencies are scaled by the raw peak location so that every parameter
//! is of order one.

use serde::{Deserialize, Serialize};

use super::Spectrum;
use crate::error::{Error, Result};

const MAX_ITERATIONS: usize = 200;
const STEP_TOL: f64 = 1e-9;
const PASSES: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    /// Hz.
    pub center: f64,
    /// Full width at half maximum, Hz; equals `Γ_fb / 2π`.
    pub width: f64,
    /// Variance under the fitted peak with the background excluded, in the
    /// spectrum's units times Hz.
    pub area: f64,
    /// Flat background, spectrum units.
    pub background: f64,
    /// Height of the Lorentzian above the background, spectrum units.
    pub peak: f64,
    /// RMS of the residuals relative to the model.
    pub residual_rms: f64,
    pub converged: bool,
    pub iterations: usize,
}

impl FitResult {
    /// Fitted model evaluated at `f` Hz.
    pub fn eval(&self, f: f64) -> f64 {
        let (c, w) = (self.center, self.width);
        self.peak * w * w * c * c / ((c * c - f * f).powi(2) + w * w * f * f) + self.background
    }
}

/// Fits the Lorentzian model to the bins of `s`.
///
/// With `init_window = Some((lo, hi))` the fit uses the bins inside that
/// band and the peak must lie strictly inside it. Without it the band is
/// chosen automatically as ±12 half-maximum widths around the tallest bin.
pub fn lorentzian_fit(s: &Spectrum, init_window: Option<(f64, f64)>) -> Result<FitResult> {
    if s.len() < 8 {
        return Err(Error::InsufficientData("spectrum has fewer than 8 bins".into()));
    }
    // The DC bin of a detrended estimate carries no information.
    let search = match init_window {
        Some((lo, hi)) => {
            if !(lo < hi) {
                return Err(Error::invalid(format!("empty fit window [{lo}, {hi}] Hz")));
            }
            s.bins_in(lo, hi)
        }
        None => 1..s.len(),
    };
    if search.len() < 5 {
        return Err(Error::InsufficientData("fit window holds fewer than 5 bins".into()));
    }
    let k = search.clone().fold(search.start, |b, i| if s.psd[i] > s.psd[b] { i } else { b });
    let peak = s.psd[k];
    if k == search.start || k + 1 == search.end {
        return Err(Error::NoPeak("maximum lies on the edge of the search band".into()));
    }
    let base = median(&s.psd[1..]);
    if !(peak > 0.0) || peak - base < base {
        return Err(Error::NoPeak(format!(
            "largest bin {peak:e} is not clearly above the median level {base:e}"
        )));
    }

    let (left, right) = half_max_edges(s, k);
    let w0 = (right - left).max(2.0 * s.bin_width());
    let f0 = s.freq[k];
    let range = match init_window {
        Some(_) => search,
        None => {
            let r = s.bins_in(f0 - 12.0 * w0, f0 + 12.0 * w0);
            r.start.max(1)..r.end
        }
    };
    if range.len() < 6 {
        return Err(Error::InsufficientData("fewer than 6 bins around the peak".into()));
    }
    let far: Vec<f64> = range
        .clone()
        .filter(|&i| (s.freq[i] - f0).abs() > 4.0 * w0)
        .map(|i| s.psd[i])
        .collect();
    let b0 = if far.len() >= 3 { median(&far) } else { 0.0 };

    let u: Vec<f64> = s.freq[range.clone()].iter().map(|f| f / f0).collect();
    let y: Vec<f64> = s.psd[range].iter().map(|p| p / peak).collect();
    let mut params = [(1.0 - b0 / peak).max(0.1), 1.0, w0 / f0, b0 / peak];

    let mut iterations = 0;
    for _ in 0..PASSES {
        let sigma: Vec<f64> = u.iter().map(|&ui| model(&params, ui).max(1e-300)).collect();
        let (p, it) = levenberg_marquardt(&u, &y, &sigma, params)?;
        params = p;
        iterations += it;
    }

    let [h, c, w, b] = params;
    let rel: f64 = u
        .iter()
        .zip(&y)
        .map(|(&ui, &yi)| {
            let m = model(&params, ui);
            ((yi - m) / m).powi(2)
        })
        .sum::<f64>()
        / u.len() as f64;
    let width = w.abs() * f0;
    let peak_height = h * peak;
    Ok(FitResult {
        center: c * f0,
        width,
        area: 0.5 * std::f64::consts::PI * peak_height * width,
        background: b * peak,
        peak: peak_height,
        residual_rms: rel.sqrt(),
        converged: true,
        iterations,
    })
}

fn model(p: &[f64; 4], u: f64) -> f64 {
    let [h, c, w, b] = *p;
    let d = (c * c - u * u).powi(2) + w * w * u * u;
    h * w * w * c * c / d + b
}

fn gradient(p: &[f64; 4], u: f64) -> [f64; 4] {
    let [h, c, w, _] = *p;
    let diff = c * c - u * u;
    let d = diff * diff + w * w * u * u;
    let num = h * w * w * c * c;
    let d_h = w * w * c * c / d;
    let d_c = (2.0 * h * w * w * c * d - num * 4.0 * c * diff) / (d * d);
    let d_w = (2.0 * h * w * c * c * d - num * 2.0 * w * u * u) / (d * d);
    [d_h, d_c, d_w, 1.0]
}

fn cost(p: &[f64; 4], u: &[f64], y: &[f64], sigma: &[f64]) -> f64 {
    u.iter()
        .zip(y)
        .zip(sigma)
        .map(|((&ui, &yi), &si)| ((yi - model(p, ui)) / si).powi(2))
        .sum()
}

fn levenberg_marquardt(u: &[f64], y: &[f64], sigma: &[f64], mut p: [f64; 4]) -> Result<([f64; 4], usize)> {
    let mut lambda = 1e-3;
    let mut current = cost(&p, u, y, sigma);
    for iter in 1..=MAX_ITERATIONS {
        let mut jtj = [[0.0; 4]; 4];
        let mut jtr = [0.0; 4];
        for ((&ui, &yi), &si) in u.iter().zip(y).zip(sigma) {
            let g = gradient(&p, ui);
            let r = (yi - model(&p, ui)) / si;
            for a in 0..4 {
                let ga = g[a] / si;
                jtr[a] += ga * r;
                for bb in 0..=a {
                    jtj[a][bb] += ga * g[bb] / si;
                }
            }
        }
        for a in 0..4 {
            for bb in 0..a {
                jtj[bb][a] = jtj[a][bb];
            }
        }
        loop {
            let mut m = jtj;
            for (a, row) in m.iter_mut().enumerate() {
                row[a] += lambda * jtj[a][a].max(1e-300);
            }
            let Some(step) = solve4(m, jtr) else {
                lambda *= 10.0;
                if lambda > 1e16 {
                    return Err(Error::FitFailed("singular normal equations".into()));
                }
                continue;
            };
            let trial = [p[0] + step[0], p[1] + step[1], p[2] + step[2], p[3] + step[3]];
            let trial_cost = if trial[0] > 0.0 && trial[1] > 0.0 && trial[2] > 0.0 {
                cost(&trial, u, y, sigma)
            } else {
                f64::INFINITY
            };
            if trial_cost <= current {
                let scale = [p[0].abs(), p[1].abs(), p[2].abs(), p[0].abs().max(p[3].abs())];
                let rel = step
                    .iter()
                    .zip(&scale)
                    .map(|(s, sc)| s.abs() / sc.max(1e-300))
                    .fold(0.0, f64::max);
                p = trial;
                current = trial_cost;
                lambda = (lambda * 0.1).max(1e-12);
                if rel < STEP_TOL {
                    return Ok((p, iter));
                }
                break;
            }
            lambda *= 10.0;
            if lambda > 1e12 {
                // No downhill step exists at working precision: stationary.
                return Ok((p, iter));
            }
        }
    }
    Err(Error::NotConverged { iterations: MAX_ITERATIONS })
}

/// Solves a 4×4 system by Gaussian elimination with partial pivoting.
fn solve4(mut a: [[f64; 4]; 4], mut b: [f64; 4]) -> Option<[f64; 4]> {
    for col in 0..4 {
        let piv = (col..4).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-300 || !a[piv][col].is_finite() {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..4 {
            let f = a[row][col] / a[col][col];
            for k in col..4 {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0; 4];
    for row in (0..4).rev() {
        let mut acc = b[row];
        for k in row + 1..4 {
            acc -= a[row][k] * x[k];
        }
        x[row] = acc / a[row][row];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// Frequencies where the spectrum first drops below half of bin `k` on
/// either side, linearly interpolated.
fn half_max_edges(s: &Spectrum, k: usize) -> (f64, f64) {
    let half = 0.5 * s.psd[k];
    let mut i = k;
    while i > 0 && s.psd[i - 1] >= half {
        i -= 1;
    }
    let left = if i == 0 {
        s.freq[0]
    } else {
        let (f0, f1, p0, p1) = (s.freq[i - 1], s.freq[i], s.psd[i - 1], s.psd[i]);
        f0 + (half - p0) / (p1 - p0) * (f1 - f0)
    };
    let mut j = k;
    while j + 1 < s.len() && s.psd[j + 1] >= half {
        j += 1;
    }
    let right = if j + 1 == s.len() {
        s.freq[j]
    } else {
        let (f0, f1, p0, p1) = (s.freq[j], s.freq[j + 1], s.psd[j], s.psd[j + 1]);
        f0 + (p0 - half) / (p0 - p1) * (f1 - f0)
    };
    (left, right)
}

pub(crate) fn median(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    let mut w = v.to_vec();
    w.sort_by(f64::total_cmp);
    let n = w.len();
    if n % 2 == 1 {
        w[n / 2]
    } else {
        0.5 * (w[n / 2 - 1] + w[n / 2])
    }
}
