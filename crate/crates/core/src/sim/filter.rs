//! Discrete second-order band-pass resonator used in the feedback loop.
//!
//! The continuous prototype `H(s) = a s / (s² + a s + Ω_c²)`, `a = Ω_c/Q`,
//! is realised in state-space form
//!
//! ```text
//! ẏ = a (u − y) − Ω_c z
//! ż = Ω_c y
//! ```
//!
//! and discretised with the trapezoidal (Tustin) rule, pre-warped so that
//! the discrete response is exactly unity at the centre. The two states are
//! in quadrature, so `ẏ` is available algebraically and serves as the
//! velocity estimate `s H(s) u` without differentiating a noisy signal.

use num_complex::Complex64;
use std::f64::consts::PI;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bandpass {
    center: f64,
    q: f64,
    dt: f64,
    omega_w: f64,
    a_w: f64,
    m1: [[f64; 2]; 2],
    m: [f64; 2],
    velocity_scale: f64,
}

/// Internal state: the two prototype states and the previous input sample.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FilterState {
    pub y: f64,
    pub z: f64,
    pub u_prev: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterOutput {
    /// Band-pass output, same units as the input.
    pub y: f64,
    /// Quadrature output ≈ time derivative of the input inside the band.
    pub velocity: f64,
}

/// Designs the discrete resonator for a centre frequency (rad/s), quality
/// factor and sample interval.
pub fn bandpass_filter(center: f64, q: f64, dt: f64) -> Result<Bandpass> {
    Bandpass::new(center, q, dt)
}

impl Bandpass {
    pub fn new(center: f64, q: f64, dt: f64) -> Result<Self> {
        if !(q > 0.0 && q.is_finite()) {
            return Err(Error::invalid(format!("filter Q must be positive, got {q}")));
        }
        if !(dt > 0.0 && center > 0.0) {
            return Err(Error::invalid("filter centre and time step must be positive"));
        }
        if center * dt >= PI {
            return Err(Error::invalid(format!(
                "filter centre {center} rad/s is at or above the Nyquist limit π/dt = {}",
                PI / dt
            )));
        }
        let omega_w = 2.0 / dt * (0.5 * center * dt).tan();
        let a_w = omega_w / q;
        let hh = 0.5 * dt;
        // A = [[-a, -w], [w, 0]]; P = I - hh A, Qm = I + hh A.
        let p = [[1.0 + hh * a_w, hh * omega_w], [-hh * omega_w, 1.0]];
        let qm = [[1.0 - hh * a_w, -hh * omega_w], [hh * omega_w, 1.0]];
        let det = p[0][0] * p[1][1] - p[0][1] * p[1][0];
        let pinv = [[p[1][1] / det, -p[0][1] / det], [-p[1][0] / det, p[0][0] / det]];
        let mut m1 = [[0.0; 2]; 2];
        for (i, row) in m1.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = pinv[i][0] * qm[0][j] + pinv[i][1] * qm[1][j];
            }
        }
        let m = [pinv[0][0] * a_w * hh, pinv[1][0] * a_w * hh];
        Ok(Self {
            center,
            q,
            dt,
            omega_w,
            a_w,
            m1,
            m,
            velocity_scale: center / omega_w,
        })
    }

    pub fn center(&self) -> f64 {
        self.center
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Advances the filter by one sample with input `u`.
    #[inline]
    pub fn step(&self, st: &mut FilterState, u: f64) -> FilterOutput {
        let drive = u + st.u_prev;
        let y = self.m1[0][0] * st.y + self.m1[0][1] * st.z + self.m[0] * drive;
        let z = self.m1[1][0] * st.y + self.m1[1][1] * st.z + self.m[1] * drive;
        st.y = y;
        st.z = z;
        st.u_prev = u;
        let dy = self.a_w * (u - y) - self.omega_w * z;
        FilterOutput { y, velocity: self.velocity_scale * dy }
    }

    /// Discrete response of the band-pass output at angular frequency
    /// `omega`, in the `e^{-iΩt}` convention of the analytic model.
    pub fn response(&self, omega: f64) -> Complex64 {
        self.responses(omega).0
    }

    /// Discrete response of the velocity output at `omega`.
    pub fn velocity_response(&self, omega: f64) -> Complex64 {
        self.responses(omega).1
    }

    fn responses(&self, omega: f64) -> (Complex64, Complex64) {
        // Engineering convention z = e^{+iωh}; conjugate at the end.
        let zinv = Complex64::from_polar(1.0, -omega * self.dt);
        let one = Complex64::new(1.0, 0.0);
        // (I - M1 z^-1) S = m (1 + z^-1) U
        let a00 = one - self.m1[0][0] * zinv;
        let a01 = -self.m1[0][1] * zinv;
        let a10 = -self.m1[1][0] * zinv;
        let a11 = one - self.m1[1][1] * zinv;
        let b0 = self.m[0] * (one + zinv);
        let b1 = self.m[1] * (one + zinv);
        let det = a00 * a11 - a01 * a10;
        let y = (a11 * b0 - a01 * b1) / det;
        let z = (a00 * b1 - a10 * b0) / det;
        let dy = (self.a_w * (one - y) - self.omega_w * z) * self.velocity_scale;
        (y.conj(), dy.conj())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn drive_sine(f: &Bandpass, omega: f64, n: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let mut st = FilterState::default();
        let mut u = Vec::with_capacity(n);
        let mut y = Vec::with_capacity(n);
        let mut v = Vec::with_capacity(n);
        for i in 0..n {
            let x = (omega * i as f64 * f.dt()).sin();
            let out = f.step(&mut st, x);
            u.push(x);
            y.push(out.y);
            v.push(out.velocity);
        }
        (u, y, v)
    }

    /// Least-squares amplitude and phase of `sig` against sin/cos at `omega`.
    fn fit_phasor(sig: &[f64], omega: f64, dt: f64, start: usize) -> (f64, f64) {
        let (mut ss, mut sc, mut cc, mut ys, mut yc) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (i, &y) in sig.iter().enumerate().skip(start) {
            let (s, c) = (omega * i as f64 * dt).sin_cos();
            ss += s * s;
            sc += s * c;
            cc += c * c;
            ys += y * s;
            yc += y * c;
        }
        let det = ss * cc - sc * sc;
        let a = (ys * cc - yc * sc) / det;
        let b = (yc * ss - ys * sc) / det;
        ((a * a + b * b).sqrt(), b.atan2(a))
    }

    #[test]
    fn unity_gain_zero_phase_at_centre() {
        let center = 1.0;
        let dt = 2.0 * PI / 80.0;
        let f = Bandpass::new(center, 200.0, dt).unwrap();
        let n = 400_000;
        let (_, y, v) = drive_sine(&f, center, n);
        let (amp, phase) = fit_phasor(&y, center, dt, n / 2);
        assert!((amp - 1.0).abs() < 0.01, "amp {amp}");
        assert!(phase.abs() < 0.02, "phase {phase}");
        // Velocity output leads by a quarter period with magnitude Ω_c.
        let (vamp, vphase) = fit_phasor(&v, center, dt, n / 2);
        assert!((vamp - center).abs() < 0.01 * center, "vamp {vamp}");
        assert!((vphase - PI / 2.0).abs() < 0.02, "vphase {vphase}");
    }

    #[test]
    fn analytic_response_is_exact_at_centre() {
        let f = Bandpass::new(1.0, 0.5, 0.0785).unwrap();
        let h = f.response(1.0);
        assert!((h - Complex64::new(1.0, 0.0)).norm() < 1e-12, "{h}");
        let v = f.velocity_response(1.0);
        assert!((v - Complex64::new(0.0, -1.0)).norm() < 1e-12, "{v}");
    }

    #[test]
    fn measured_bandwidth() {
        let center = 2.0 * PI * 1858.9e3;
        let dt = 1.0 / (80.0 * 1858.9e3);
        let f = Bandpass::new(center, 200.0, dt).unwrap();
        let half = |w: f64| f.response(w).norm_sqr() - 0.5;
        let bisect = |mut a: f64, mut b: f64| {
            for _ in 0..200 {
                let m = 0.5 * (a + b);
                if half(a).signum() == half(m).signum() {
                    a = m;
                } else {
                    b = m;
                }
            }
            0.5 * (a + b)
        };
        let lo = bisect(0.9 * center, center);
        let hi = bisect(center, 1.1 * center);
        let bw_khz = (hi - lo) / (2.0 * PI) / 1e3;
        assert!((bw_khz - 9.29).abs() < 0.05, "{bw_khz}");
        assert!((bw_khz - 9.0).abs() < 0.5);
    }

    #[test]
    fn rejects_dc() {
        let f = Bandpass::new(1.0, 5.0, 0.05).unwrap();
        let mut st = FilterState::default();
        let mut last = 1.0;
        for _ in 0..20_000 {
            last = f.step(&mut st, 1.0).y;
        }
        assert!(last.abs() < 1e-9, "{last}");
        assert!(f.response(0.0).norm() < 1e-15);
    }

    #[test]
    fn nyquist_limit() {
        assert!(Bandpass::new(PI / 0.1, 10.0, 0.1).is_err());
        assert!(Bandpass::new(1.0, 0.0, 0.1).is_err());
        assert!(bandpass_filter(1.0, 10.0, 0.1).is_ok());
    }

    #[test]
    fn discrete_matches_prototype_off_centre() {
        let dt = 2.0 * PI / 800.0;
        let f = Bandpass::new(1.0, 2.0, dt).unwrap();
        for w in [0.7, 0.9, 1.1, 1.3] {
            let d = f.response(w);
            let c = crate::model::bandpass_response(1.0, 2.0, w);
            assert!((d - c).norm() < 1e-3, "{w}: {d} vs {c}");
        }
    }
}
