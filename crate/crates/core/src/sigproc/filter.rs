use std::f64::consts::PI;

use rustfft::num_complex::Complex64;

use crate::{Error, Result};

/// One biquad section, `H(z) = (b0 + b1 z^-1 + b2 z^-2) / (1 + a1 z^-1 + a2 z^-2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sos {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Sos {
    /// Roots of `z^2 + a1 z + a2`.
    pub fn poles(&self) -> [Complex64; 2] {
        let [a1, a2] = self.a;
        let disc = Complex64::new(a1 * a1 - 4.0 * a2, 0.0).sqrt();
        [(-a1 + disc) / 2.0, (-a1 - disc) / 2.0]
    }

    pub fn response(&self, z: Complex64) -> Complex64 {
        let zi = z.inv();
        let num = self.b[0] + zi * (self.b[1] + zi * self.b[2]);
        let den = 1.0 + zi * (self.a[0] + zi * self.a[1]);
        num / den
    }

    fn dc_gain(&self) -> f64 {
        (self.b[0] + self.b[1] + self.b[2]) / (1.0 + self.a[0] + self.a[1])
    }
}

/// A cascade of second-order sections.
#[derive(Debug, Clone, PartialEq)]
pub struct IirCascade {
    pub sections: Vec<Sos>,
    pub sample_rate_hz: f64,
}

impl IirCascade {
    /// Complex frequency response at `freq_hz`.
    pub fn response(&self, freq_hz: f64) -> Complex64 {
        let z = Complex64::from_polar(1.0, 2.0 * PI * freq_hz / self.sample_rate_hz);
        self.sections.iter().map(|s| s.response(z)).product()
    }

    pub fn gain(&self, freq_hz: f64) -> f64 {
        self.response(freq_hz).norm()
    }

    pub fn poles(&self) -> Vec<Complex64> {
        self.sections.iter().flat_map(|s| s.poles()).collect()
    }

    pub fn is_stable(&self) -> bool {
        self.poles().iter().all(|p| p.norm() < 1.0)
    }

    /// Filter order (number of poles).
    pub fn order(&self) -> usize {
        2 * self.sections.len()
    }

    /// Causal filtering with the given per-section state (transposed direct form II).
    fn run(&self, x: &mut [f64], state: &mut [[f64; 2]]) {
        for (sec, z) in self.sections.iter().zip(state.iter_mut()) {
            let [b0, b1, b2] = sec.b;
            let [a1, a2] = sec.a;
            for v in x.iter_mut() {
                let xin = *v;
                let y = b0 * xin + z[0];
                z[0] = b1 * xin - a1 * y + z[1];
                z[1] = b2 * xin - a2 * y;
                *v = y;
            }
        }
    }

    /// Steady-state section states for a unit step input.
    fn step_state(&self) -> Vec<[f64; 2]> {
        let mut gain_in = 1.0;
        self.sections
            .iter()
            .map(|s| {
                let y = s.dc_gain() * gain_in;
                let z1 = s.b[2] * gain_in - s.a[1] * y;
                let z0 = y - s.b[0] * gain_in;
                gain_in = y;
                [z0, z1]
            })
            .collect()
    }
}

/// Butterworth band-pass filter realised as second-order sections.
///
/// The analog prototype is frequency-transformed to the pre-warped band and
/// mapped to the z-plane with the bilinear transform. An order-`n` design has
/// `2n` poles and therefore `n` sections.
pub fn design_bandpass(order: usize, lo_hz: f64, hi_hz: f64, fs_hz: f64) -> Result<IirCascade> {
    if order == 0 {
        return Err(Error::Param("filter order must be at least 1".into()));
    }
    if !(lo_hz > 0.0 && lo_hz < hi_hz && hi_hz < fs_hz / 2.0) {
        return Err(Error::Param(format!(
            "band edges must satisfy 0 < lo < hi < fs/2, got lo={lo_hz}, hi={hi_hz}, fs={fs_hz}"
        )));
    }
    let fs2 = 2.0 * fs_hz;
    let w_lo = fs2 * (PI * lo_hz / fs_hz).tan();
    let w_hi = fs2 * (PI * hi_hz / fs_hz).tan();
    let bw = w_hi - w_lo;
    let w0_sq = w_lo * w_hi;

    let bilinear = |s: Complex64| (fs2 + s) / (fs2 - s);
    // Each low-pass prototype pole p becomes the two roots of s^2 - p*bw*s + w0^2.
    let split = |p: Complex64| {
        let pb = p * bw;
        let disc = (pb * pb - 4.0 * w0_sq).sqrt();
        [(pb + disc) / 2.0, (pb - disc) / 2.0]
    };

    let mut analog_pole_product = Complex64::new(1.0, 0.0);
    let mut pole_pairs: Vec<[Complex64; 2]> = Vec::with_capacity(order);
    for k in 0..order {
        let theta = PI * (2 * k + order + 1) as f64 / (2 * order) as f64;
        let p = Complex64::from_polar(1.0, theta);
        if p.im < -1e-12 {
            continue;
        }
        let [s1, s2] = split(p);
        if p.im.abs() <= 1e-12 {
            // Real prototype pole: its two band-pass poles form one section.
            analog_pole_product *= (fs2 - s1) * (fs2 - s2);
            pole_pairs.push([bilinear(s1), bilinear(s2)]);
        } else {
            for s in [s1, s2] {
                analog_pole_product *= (fs2 - s) * (fs2 - s.conj());
                let z = bilinear(s);
                pole_pairs.push([z, z.conj()]);
            }
        }
    }
    debug_assert_eq!(pole_pairs.len(), order);

    // n analog zeros at s = 0 and gain bw^n.
    let gain = (bw.powi(order as i32) * fs2.powi(order as i32) / analog_pole_product).re;
    let per_section = gain.abs().powf(1.0 / order as f64);
    let sections = pole_pairs
        .iter()
        .enumerate()
        .map(|(i, [z1, z2])| {
            let g = if i == 0 { per_section * gain.signum() } else { per_section };
            Sos {
                // One zero at z = 1 and one at z = -1 per section.
                b: [g, 0.0, -g],
                a: [-(z1 + z2).re, (z1 * z2).re],
            }
        })
        .collect();
    Ok(IirCascade { sections, sample_rate_hz: fs_hz })
}

/// Zero-phase filtering: forward pass, reversal, second pass, reversal.
///
/// Both ends are extended by odd reflection over `3 * order` samples and the
/// section states start at the step-response steady state scaled by the first
/// padded sample of each pass.
pub fn filtfilt(filter: &IirCascade, x: &[f64]) -> Result<Vec<f64>> {
    let pad = 3 * filter.order();
    if x.len() <= pad {
        return Err(Error::TooShort { needed: pad, got: x.len() });
    }
    let n = x.len();
    let mut ext = Vec::with_capacity(n + 2 * pad);
    ext.extend((1..=pad).rev().map(|i| 2.0 * x[0] - x[i]));
    ext.extend_from_slice(x);
    ext.extend((1..=pad).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));

    let zi = filter.step_state();
    let pass = |buf: &mut [f64]| {
        let x0 = buf[0];
        let mut state: Vec<[f64; 2]> = zi.iter().map(|[a, b]| [a * x0, b * x0]).collect();
        filter.run(buf, &mut state);
    };
    pass(&mut ext);
    ext.reverse();
    pass(&mut ext);
    ext.reverse();
    Ok(ext[pad..pad + n].to_vec())
}
