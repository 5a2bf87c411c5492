//! Seeded synthetic EGM/ECG beats.
//!
//! Three latent source channels are built from Gaussian P, QRS and T waves.
//! ECG leads are a linear mix of the sources; EGM channels pass a different
//! mix through `tanh` and add sensor noise. Both sides are normalised per
//! beat and channel exactly like segmented recordings.
//!
//! Every beat draws from its own ChaCha8 stream keyed on `(seed, beat_index)`,
//! so any beat can be regenerated on its own and generation order does not
//! matter.
//!
//! ```
//! use ecg_cosearch::datasynth::{gen_beat, PatientModel};
//!
//! let model = PatientModel::default_for_seed(7).unwrap();
//! let a = gen_beat(&model, 3).unwrap();
//! let b = gen_beat(&model, 3).unwrap();
//! assert_eq!(a, b);
//! assert_eq!((a.egm.len(), a.ecg.len()), (5 * 390, 12 * 390));
//! ```

use std::fs;
use std::path::Path;

use log::warn;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::sigproc::normalize_channels;
use crate::sigproc::{BeatRecord, Dataset, ECG_CHANNELS, EGM_CHANNELS};
use crate::{Error, Result};

/// Number of latent source channels.
pub const LATENTS: usize = 3;

/// One Gaussian wave of the beat template.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Wave {
    /// Peak position in samples.
    pub center: f64,
    /// Standard deviation in samples.
    pub width: f64,
}

/// Parameters of one synthetic patient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientModel {
    pub seed: u64,
    pub patient_id: u64,
    pub beat_len: usize,
    /// P, QRS and T waves.
    pub waves: [Wave; 3],
    /// `amplitudes[k][w]`: height of wave `w` in latent channel `k`.
    pub amplitudes: [[f64; 3]; LATENTS],
    /// Uniform jitter of each wave centre, +- samples.
    pub jitter_samples: f64,
    /// Uniform relative jitter of each wave amplitude.
    pub jitter_amplitude: f64,
    /// 12 x 3 mixing into ECG leads.
    pub a_ecg: Vec<[f64; LATENTS]>,
    /// 5 x 3 mixing into EGM channels.
    pub a_egm: Vec<[f64; LATENTS]>,
    /// Gain inside the EGM `tanh`.
    pub gain: f64,
    pub noise_sd: f64,
}

impl PatientModel {
    /// Default waves and noise with mixing matrices drawn from `seed`.
    ///
    /// ECG mixing entries are standard normal; EGM rows are standard normal
    /// scaled to unit L1 norm. Draws are repeated until both matrices have a
    /// condition number below 1e3.
    pub fn default_for_seed(seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(u64::MAX);
        for _ in 0..100 {
            let a_ecg: Vec<[f64; LATENTS]> = (0..ECG_CHANNELS).map(|_| normal_row(&mut rng)).collect();
            let a_egm: Vec<[f64; LATENTS]> = (0..EGM_CHANNELS)
                .map(|_| {
                    let r = normal_row(&mut rng);
                    let l1: f64 = r.iter().map(|v| v.abs()).sum();
                    r.map(|v| v / l1)
                })
                .collect();
            let model = PatientModel {
                seed,
                patient_id: seed,
                beat_len: 390,
                waves: [
                    Wave { center: 120.0, width: 10.0 },
                    Wave { center: 195.0, width: 6.0 },
                    Wave { center: 300.0, width: 18.0 },
                ],
                amplitudes: [[0.15, 1.0, 0.3], [0.1, -0.5, 0.4], [0.25, 0.3, -0.2]],
                jitter_samples: 3.0,
                jitter_amplitude: 0.05,
                a_ecg,
                a_egm,
                gain: 2.0,
                noise_sd: 0.01,
            };
            if model.validate().is_ok() {
                return Ok(model);
            }
        }
        Err(Error::Param(format!("could not draw well-conditioned mixing matrices for seed {seed}")))
    }

    pub fn validate(&self) -> Result<()> {
        if self.a_ecg.len() != ECG_CHANNELS || self.a_egm.len() != EGM_CHANNELS {
            return Err(Error::Param(format!(
                "mixing matrices must be {ECG_CHANNELS}x{LATENTS} and {EGM_CHANNELS}x{LATENTS}"
            )));
        }
        if self.waves.iter().any(|w| !(w.width > 0.0)) {
            return Err(Error::Param("wave widths must be positive".into()));
        }
        if self.beat_len < 2 || !(self.noise_sd >= 0.0) || !self.gain.is_finite() {
            return Err(Error::Param("beat_len >= 2, noise_sd >= 0 and a finite gain are required".into()));
        }
        for (name, m) in [("a_ecg", &self.a_ecg), ("a_egm", &self.a_egm)] {
            let c = condition_number(m);
            if !(c < 1e3) {
                return Err(Error::Param(format!("{name} has condition number {c:.3e}")));
            }
        }
        Ok(())
    }

    /// A warning when only EGM `channel` is kept and its mixing row is too
    /// weak to carry the latent sources.
    pub fn single_channel_warning(&self, channel: usize) -> Option<String> {
        let row = self.a_egm.get(channel)?;
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        (norm < 0.1).then(|| format!("EGM channel {channel} mixing row has norm {norm:.3} < 0.1"))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("patient model serialises")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let m: PatientModel = toml::from_str(text).map_err(|e| Error::Param(format!("patient model: {e}")))?;
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_toml())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        PatientModel::from_toml(&fs::read_to_string(path)?).map_err(|e| Error::format(path, e))
    }
}

fn normal_row<R: Rng>(rng: &mut R) -> [f64; LATENTS] {
    std::array::from_fn(|_| StandardNormal.sample(rng))
}

fn condition_number(rows: &[[f64; LATENTS]]) -> f64 {
    let m = DMatrix::from_fn(rows.len(), LATENTS, |i, j| rows[i][j]);
    let sv = m.singular_values();
    let (max, min) = sv.iter().fold((0.0f64, f64::INFINITY), |(a, b), &s| (a.max(s), b.min(s)));
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Un-normalised signals of one beat, each `channels x beat_len`.
#[derive(Debug, Clone, PartialEq)]
pub struct BeatSignals {
    pub latent: Vec<f64>,
    pub ecg: Vec<f64>,
    /// `tanh(gain * A_egm s)` before noise.
    pub egm_clean: Vec<f64>,
    pub egm: Vec<f64>,
}

fn beat_rng(model: &PatientModel, beat_index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(model.seed);
    rng.set_stream(beat_index);
    rng
}

fn mix(a: &[[f64; LATENTS]], latent: &[f64], len: usize) -> Vec<f64> {
    let mut out = vec![0.0; a.len() * len];
    for (row, o) in a.iter().zip(out.chunks_mut(len)) {
        for (k, &coef) in row.iter().enumerate() {
            for (v, s) in o.iter_mut().zip(&latent[k * len..(k + 1) * len]) {
                *v += coef * s;
            }
        }
    }
    out
}

/// Latent sources and raw channel signals of beat `beat_index`.
pub fn gen_signals(model: &PatientModel, beat_index: u64) -> Result<BeatSignals> {
    let len = model.beat_len;
    let mut rng = beat_rng(model, beat_index);
    let mut latent = vec![0.0; LATENTS * len];
    for (k, amps) in model.amplitudes.iter().enumerate() {
        let channel = &mut latent[k * len..(k + 1) * len];
        for (wave, &amp) in model.waves.iter().zip(amps) {
            let shift = rng.random_range(-model.jitter_samples..=model.jitter_samples);
            let scale = 1.0 + rng.random_range(-model.jitter_amplitude..=model.jitter_amplitude);
            let c = wave.center + shift;
            for (t, v) in channel.iter_mut().enumerate() {
                let d = (t as f64 - c) / wave.width;
                *v += amp * scale * (-0.5 * d * d).exp();
            }
        }
    }
    let ecg = mix(&model.a_ecg, &latent, len);
    let egm_clean: Vec<f64> = mix(&model.a_egm, &latent, len).into_iter().map(|z| (model.gain * z).tanh()).collect();
    let noise = Normal::new(0.0, model.noise_sd).map_err(|e| Error::Param(e.to_string()))?;
    let egm = egm_clean.iter().map(|v| v + noise.sample(&mut rng)).collect();
    Ok(BeatSignals { latent, ecg, egm_clean, egm })
}

/// One normalised beat.
pub fn gen_beat(model: &PatientModel, beat_index: u64) -> Result<BeatRecord> {
    let BeatSignals { mut ecg, mut egm, .. } = gen_signals(model, beat_index)?;
    normalize_channels(&mut egm, model.beat_len);
    normalize_channels(&mut ecg, model.beat_len);
    BeatRecord::new(beat_index, model.patient_id, model.beat_len, egm, ecg)
}

/// `n_beats` beats with a 50/50 split shuffled by the model seed.
pub fn gen_dataset(model: &PatientModel, n_beats: usize) -> Result<Dataset> {
    if n_beats < 2 {
        return Err(Error::Param(format!("need at least 2 beats, got {n_beats}")));
    }
    model.validate()?;
    let beats = (0..n_beats as u64).map(|i| gen_beat(model, i)).collect::<Result<Vec<_>>>()?;
    Dataset::with_random_split(beats, model.seed)
}

/// Keep only EGM `channel` of every beat; warns when the channel is weak.
pub fn single_channel(model: &PatientModel, dataset: &Dataset, channel: usize) -> Result<Dataset> {
    if channel >= EGM_CHANNELS {
        return Err(Error::Param(format!("EGM channel {channel} does not exist")));
    }
    if let Some(w) = model.single_channel_warning(channel) {
        warn!("{w}");
    }
    let beats = dataset
        .beats
        .iter()
        .map(|b| {
            let mut egm = vec![0.0; EGM_CHANNELS * b.len];
            egm[channel * b.len..(channel + 1) * b.len].copy_from_slice(b.egm_channel(channel));
            BeatRecord::new(b.beat_id, b.patient_id, b.len, egm, b.ecg.clone())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset { beats, split: dataset.split.clone() })
}
