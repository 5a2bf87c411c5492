use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Frame geometry of the short-time Fourier transform.
///
/// The default (window 30, overlap 6, beat length 390) gives exactly 16
/// frequency bins and 16 frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct StftConfig {
    pub window_len: usize,
    pub overlap: usize,
    pub beat_len: usize,
}

impl Default for StftConfig {
    fn default() -> Self {
        StftConfig { window_len: 30, overlap: 6, beat_len: 390 }
    }
}

impl StftConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window_len < 2 || self.overlap >= self.window_len {
            return Err(Error::Param(format!(
                "need window_len >= 2 and overlap < window_len, got {} / {}",
                self.window_len, self.overlap
            )));
        }
        if self.beat_len < self.window_len {
            return Err(Error::Param(format!(
                "beat length {} shorter than the window {}",
                self.beat_len, self.window_len
            )));
        }
        Ok(())
    }

    pub fn hop(&self) -> usize {
        self.window_len - self.overlap
    }

    pub fn n_bins(&self) -> usize {
        self.window_len / 2 + 1
    }

    pub fn n_frames(&self) -> usize {
        (self.beat_len - self.window_len) / self.hop() + 1
    }

    /// Samples actually covered by the frames.
    pub fn span(&self) -> usize {
        (self.n_frames() - 1) * self.hop() + self.window_len
    }
}

/// Complex time-frequency grid, `channels x bins x frames`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TfGrid {
    pub channels: usize,
    pub bins: usize,
    pub frames: usize,
    pub data: Vec<Complex64>,
}

impl TfGrid {
    pub fn zeros(channels: usize, bins: usize, frames: usize) -> Self {
        TfGrid { channels, bins, frames, data: vec![Complex64::new(0.0, 0.0); channels * bins * frames] }
    }

    pub fn at(&self, m: usize, k: usize, t: usize) -> Complex64 {
        self.data[(m * self.bins + k) * self.frames + t]
    }

    pub fn at_mut(&mut self, m: usize, k: usize, t: usize) -> &mut Complex64 {
        &mut self.data[(m * self.bins + k) * self.frames + t]
    }

    /// Real planes `[re(ch0), im(ch0), re(ch1), ...]`, each `bins x frames`.
    pub fn to_planes(&self) -> Vec<f64> {
        let plane = self.bins * self.frames;
        let mut out = vec![0.0; 2 * self.channels * plane];
        for m in 0..self.channels {
            for i in 0..plane {
                let c = self.data[m * plane + i];
                out[2 * m * plane + i] = c.re;
                out[(2 * m + 1) * plane + i] = c.im;
            }
        }
        out
    }

    /// Inverse of [`TfGrid::to_planes`].
    pub fn from_planes(planes: &[f64], channels: usize, bins: usize, frames: usize) -> Result<Self> {
        let plane = bins * frames;
        if planes.len() != 2 * channels * plane {
            return Err(Error::Shape(format!(
                "{} values cannot hold {channels} complex {bins}x{frames} planes",
                planes.len()
            )));
        }
        let data = (0..channels * plane)
            .map(|j| {
                let (m, i) = (j / plane, j % plane);
                Complex64::new(planes[2 * m * plane + i], planes[(2 * m + 1) * plane + i])
            })
            .collect();
        Ok(TfGrid { channels, bins, frames, data })
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|c| c.re.is_finite() && c.im.is_finite())
    }
}

fn plan(len: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    let mut planner = FftPlanner::new();
    if inverse {
        planner.plan_fft_inverse(len)
    } else {
        planner.plan_fft_forward(len)
    }
}

/// Rectangular-window STFT of each channel (`channels x beat_len`, row-major).
pub fn stft(cfg: &StftConfig, signal: &[f64], channels: usize) -> Result<TfGrid> {
    cfg.validate()?;
    if signal.len() != channels * cfg.beat_len {
        return Err(Error::Shape(format!("expected {channels} x {} samples, got {}", cfg.beat_len, signal.len())));
    }
    let (win, hop, bins, frames) = (cfg.window_len, cfg.hop(), cfg.n_bins(), cfg.n_frames());
    let fft = plan(win, false);
    let mut buf = vec![Complex64::new(0.0, 0.0); win];
    let mut grid = TfGrid::zeros(channels, bins, frames);
    for m in 0..channels {
        let x = &signal[m * cfg.beat_len..(m + 1) * cfg.beat_len];
        for t in 0..frames {
            for (b, &v) in buf.iter_mut().zip(&x[t * hop..t * hop + win]) {
                *b = Complex64::new(v, 0.0);
            }
            fft.process(&mut buf);
            for k in 0..bins {
                *grid.at_mut(m, k, t) = buf[k];
            }
        }
    }
    Ok(grid)
}

/// Inverse STFT by per-frame inverse real FFT and normalised overlap-add.
///
/// Returns `channels x beat_len` samples; positions not covered by any frame
/// are zero.
pub fn istft(cfg: &StftConfig, grid: &TfGrid) -> Result<Vec<f64>> {
    cfg.validate()?;
    let (win, hop, bins, frames) = (cfg.window_len, cfg.hop(), cfg.n_bins(), cfg.n_frames());
    if grid.bins != bins || grid.frames != frames {
        return Err(Error::Shape(format!(
            "grid is {}x{}, configuration expects {bins}x{frames}",
            grid.bins, grid.frames
        )));
    }
    let ifft = plan(win, true);
    let mut envelope = vec![0.0; cfg.beat_len];
    for t in 0..frames {
        for e in &mut envelope[t * hop..t * hop + win] {
            *e += 1.0;
        }
    }
    let mut out = vec![0.0; grid.channels * cfg.beat_len];
    let mut buf = vec![Complex64::new(0.0, 0.0); win];
    for m in 0..grid.channels {
        let y = &mut out[m * cfg.beat_len..(m + 1) * cfg.beat_len];
        for t in 0..frames {
            // Hermitian extension; DC and (for even windows) Nyquist are real.
            buf[0] = Complex64::new(grid.at(m, 0, t).re, 0.0);
            for k in 1..bins {
                let c = grid.at(m, k, t);
                if 2 * k == win {
                    buf[k] = Complex64::new(c.re, 0.0);
                } else {
                    buf[k] = c;
                    buf[win - k] = c.conj();
                }
            }
            ifft.process(&mut buf);
            for (i, b) in buf.iter().enumerate() {
                y[t * hop + i] += b.re / win as f64;
            }
        }
        for (v, &e) in y.iter_mut().zip(&envelope) {
            if e > 0.0 {
                *v /= e;
            }
        }
    }
    Ok(out)
}
