//! Averaged-periodogram (Welch) spectrum estimation.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use super::Spectrum;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Window {
    #[default]
    Hann,
    Hamming,
    Rectangular,
}

impl Window {
    /// Periodic window of length `n`.
    pub fn coefficients(self, n: usize) -> Vec<f64> {
        let tau = 2.0 * std::f64::consts::PI / n as f64;
        (0..n)
            .map(|i| match self {
                Window::Hann => 0.5 - 0.5 * (tau * i as f64).cos(),
                Window::Hamming => 0.54 - 0.46 * (tau * i as f64).cos(),
                Window::Rectangular => 1.0,
            })
            .collect()
    }

    /// Equivalent noise bandwidth in bins for long windows.
    pub fn nominal_enbw(self) -> f64 {
        match self {
            Window::Hann => 1.5,
            Window::Hamming => 1.3628,
            Window::Rectangular => 1.0,
        }
    }
}

/// Equivalent noise bandwidth of a window, in bins: `N Σw² / (Σw)²`.
pub fn enbw_bins(w: &[f64]) -> f64 {
    let s1: f64 = w.iter().sum();
    let s2: f64 = w.iter().map(|v| v * v).sum();
    w.len() as f64 * s2 / (s1 * s1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Detrend {
    None,
    /// Remove each segment's mean.
    #[default]
    Constant,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WelchConfig {
    pub window: Window,
    /// Fraction of each segment shared with the next.
    pub overlap: f64,
    pub detrend: Detrend,
}

impl Default for WelchConfig {
    fn default() -> Self {
        Self { window: Window::Hann, overlap: 0.5, detrend: Detrend::Constant }
    }
}

impl WelchConfig {
    pub fn with_window(window: Window) -> Self {
        Self { window, ..Self::default() }
    }
}

/// Segment length giving a resolution bandwidth close to `rbw` Hz.
pub fn segment_length(rbw: f64, dt: f64, window: Window) -> Result<usize> {
    if !(rbw > 0.0 && dt > 0.0) {
        return Err(Error::invalid("rbw and dt must be positive"));
    }
    let n = (window.nominal_enbw() / (rbw * dt)).round();
    if n < 4.0 {
        return Err(Error::invalid(format!("rbw {rbw} Hz is too coarse for dt = {dt} s")));
    }
    if n > 1e9 {
        return Err(Error::invalid(format!("rbw {rbw} Hz needs an impractically long segment")));
    }
    Ok(n as usize)
}

/// Averaged periodogram with the given window, 50% overlap and per-segment
/// mean removal. The result is single-sided in Hz and satisfies
/// `Σ psd · Δf ≈ variance`.
pub fn welch_psd(series: &[f64], dt: f64, rbw: f64, window: Window) -> Result<Spectrum> {
    let n = segment_length(rbw, dt, window)?;
    welch_psd_with(series, dt, n, WelchConfig::with_window(window))
}

/// [`welch_psd`] with an explicit segment length and configuration.
pub fn welch_psd_with(series: &[f64], dt: f64, segment_len: usize, cfg: WelchConfig) -> Result<Spectrum> {
    let mut acc = WelchAccumulator::new(segment_len, dt, cfg)?;
    acc.extend(series);
    acc.finish()
}

/// Segments a stream on the fly and accumulates periodograms, so long
/// simulations never need to be held in memory.
pub struct WelchAccumulator {
    core: SegmentCore,
    sum: Vec<f64>,
}

struct SegmentCore {
    n: usize,
    hop: usize,
    dt: f64,
    window: Vec<f64>,
    window_power: f64,
    detrend: Detrend,
    fft: Arc<dyn Fft<f64>>,
    scratch: Vec<Complex64>,
    pending: Vec<f64>,
    count: usize,
}

impl SegmentCore {
    fn new(n: usize, dt: f64, cfg: WelchConfig) -> Result<Self> {
        if n < 4 {
            return Err(Error::invalid("segment length must be at least 4"));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::invalid("sample interval must be positive"));
        }
        if !(0.0..0.95).contains(&cfg.overlap) {
            return Err(Error::invalid("overlap must lie in [0, 0.95)"));
        }
        let hop = ((1.0 - cfg.overlap) * n as f64).round().max(1.0) as usize;
        let window = cfg.window.coefficients(n);
        let window_power = window.iter().map(|w| w * w).sum();
        let fft = FftPlanner::new().plan_fft_forward(n);
        let scratch_len = fft.get_inplace_scratch_len();
        Ok(Self {
            n,
            hop,
            dt,
            window,
            window_power,
            detrend: cfg.detrend,
            fft,
            scratch: vec![Complex64::default(); scratch_len],
            pending: Vec::with_capacity(2 * n),
            count: 0,
        })
    }

    fn transform(&mut self, data: &[f64], out: &mut Vec<Complex64>) {
        let mean = match self.detrend {
            Detrend::Constant => data.iter().sum::<f64>() / self.n as f64,
            Detrend::None => 0.0,
        };
        out.clear();
        out.extend(data.iter().zip(&self.window).map(|(x, w)| Complex64::new((x - mean) * w, 0.0)));
        self.fft.process_with_scratch(out, &mut self.scratch);
    }

    fn bins(&self) -> usize {
        self.n / 2 + 1
    }

    /// Single-sided scale for bin `k`.
    fn scale(&self, k: usize) -> f64 {
        let edge = k == 0 || (self.n % 2 == 0 && k == self.n / 2);
        (if edge { 1.0 } else { 2.0 }) * self.dt / self.window_power
    }

    fn freq(&self) -> Vec<f64> {
        let df = 1.0 / (self.n as f64 * self.dt);
        (0..self.bins()).map(|k| k as f64 * df).collect()
    }

    fn rbw(&self) -> f64 {
        enbw_bins(&self.window) / (self.n as f64 * self.dt)
    }

    fn check_count(&self) -> Result<()> {
        if self.count < 2 {
            return Err(Error::InsufficientData(format!(
                "need at least 2 segments of {} samples, have {}",
                self.n, self.count
            )));
        }
        Ok(())
    }
}

impl WelchAccumulator {
    pub fn new(segment_len: usize, dt: f64, cfg: WelchConfig) -> Result<Self> {
        let core = SegmentCore::new(segment_len, dt, cfg)?;
        let sum = vec![0.0; core.bins()];
        Ok(Self { core, sum })
    }

    /// Accumulator sized for a target resolution bandwidth.
    pub fn for_rbw(rbw: f64, dt: f64, cfg: WelchConfig) -> Result<Self> {
        Self::new(segment_length(rbw, dt, cfg.window)?, dt, cfg)
    }

    pub fn segment_len(&self) -> usize {
        self.core.n
    }

    /// Samples between successive segment starts.
    pub fn hop(&self) -> usize {
        self.core.hop
    }

    pub fn n_averages(&self) -> usize {
        self.core.count
    }

    pub fn rbw(&self) -> f64 {
        self.core.rbw()
    }

    #[inline]
    pub fn push(&mut self, x: f64) {
        self.core.pending.push(x);
        if self.core.pending.len() == self.core.n {
            self.flush_segment();
        }
    }

    pub fn extend(&mut self, xs: &[f64]) {
        for &x in xs {
            self.push(x);
        }
    }

    fn flush_segment(&mut self) {
        let pending = std::mem::take(&mut self.core.pending);
        let mut buf = Vec::with_capacity(self.core.n);
        self.core.transform(&pending, &mut buf);
        for (k, s) in self.sum.iter_mut().enumerate() {
            *s += buf[k].norm_sqr();
        }
        self.core.count += 1;
        let mut pending = pending;
        pending.drain(..self.core.hop.min(pending.len()));
        self.core.pending = pending;
    }

    pub fn finish(&self) -> Result<Spectrum> {
        self.core.check_count()?;
        let m = self.core.count as f64;
        Ok(Spectrum {
            freq: self.core.freq(),
            psd: self.sum.iter().enumerate().map(|(k, s)| s * self.core.scale(k) / m).collect(),
            rbw: self.core.rbw(),
            n_averages: self.core.count,
            normalized: false,
            floor: None,
        })
    }
}

/// Auto- and cross-spectra of two simultaneously sampled channels.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossSpectrum {
    pub freq: Vec<f64>,
    pub sxx: Vec<f64>,
    pub syy: Vec<f64>,
    /// Single-sided `⟨X* Y⟩`.
    pub sxy: Vec<Complex64>,
    pub rbw: f64,
    pub n_averages: usize,
}

pub struct CrossAccumulator {
    a: SegmentCore,
    b_pending: Vec<f64>,
    sxx: Vec<f64>,
    syy: Vec<f64>,
    sxy: Vec<Complex64>,
}

impl CrossAccumulator {
    pub fn new(segment_len: usize, dt: f64, cfg: WelchConfig) -> Result<Self> {
        let a = SegmentCore::new(segment_len, dt, cfg)?;
        let m = a.bins();
        Ok(Self {
            a,
            b_pending: Vec::with_capacity(2 * segment_len),
            sxx: vec![0.0; m],
            syy: vec![0.0; m],
            sxy: vec![Complex64::default(); m],
        })
    }

    pub fn push(&mut self, x: f64, y: f64) {
        self.a.pending.push(x);
        self.b_pending.push(y);
        if self.a.pending.len() == self.a.n {
            let pa = std::mem::take(&mut self.a.pending);
            let pb = std::mem::take(&mut self.b_pending);
            let (mut fa, mut fb) = (Vec::new(), Vec::new());
            self.a.transform(&pa, &mut fa);
            self.a.transform(&pb, &mut fb);
            for k in 0..self.sxx.len() {
                self.sxx[k] += fa[k].norm_sqr();
                self.syy[k] += fb[k].norm_sqr();
                self.sxy[k] += fa[k].conj() * fb[k];
            }
            self.a.count += 1;
            let hop = self.a.hop;
            let (mut pa, mut pb) = (pa, pb);
            pa.drain(..hop);
            pb.drain(..hop);
            self.a.pending = pa;
            self.b_pending = pb;
        }
    }

    pub fn finish(&self) -> Result<CrossSpectrum> {
        self.a.check_count()?;
        let m = self.a.count as f64;
        let sc = |k: usize| self.a.scale(k) / m;
        Ok(CrossSpectrum {
            freq: self.a.freq(),
            sxx: self.sxx.iter().enumerate().map(|(k, v)| v * sc(k)).collect(),
            syy: self.syy.iter().enumerate().map(|(k, v)| v * sc(k)).collect(),
            sxy: self.sxy.iter().enumerate().map(|(k, v)| v * sc(k)).collect(),
            rbw: self.a.rbw(),
            n_averages: self.a.count,
        })
    }
}

/// Cross spectrum of two equal-length series.
pub fn cross_spectrum(x: &[f64], y: &[f64], dt: f64, segment_len: usize, cfg: WelchConfig) -> Result<CrossSpectrum> {
    if x.len() != y.len() {
        return Err(Error::invalid("series lengths differ"));
    }
    let mut acc = CrossAccumulator::new(segment_len, dt, cfg)?;
    for (&a, &b) in x.iter().zip(y) {
        acc.push(a, b);
    }
    acc.finish()
}
