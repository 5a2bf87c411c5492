use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ECG_CHANNELS, EGM_CHANNELS};
use crate::{Error, Result};

/// One heartbeat: `5 x len` EGM samples and `12 x len` ECG samples, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct BeatRecord {
    pub beat_id: u64,
    pub patient_id: u64,
    pub len: usize,
    pub egm: Vec<f64>,
    pub ecg: Vec<f64>,
}

impl BeatRecord {
    pub fn new(beat_id: u64, patient_id: u64, len: usize, egm: Vec<f64>, ecg: Vec<f64>) -> Result<Self> {
        if egm.len() != EGM_CHANNELS * len || ecg.len() != ECG_CHANNELS * len {
            return Err(Error::Shape(format!(
                "beat of length {len} needs {} EGM and {} ECG samples, got {} and {}",
                EGM_CHANNELS * len,
                ECG_CHANNELS * len,
                egm.len(),
                ecg.len()
            )));
        }
        if !egm.iter().chain(&ecg).all(|v| v.is_finite()) {
            return Err(Error::Param(format!("beat {beat_id} contains non-finite samples")));
        }
        Ok(BeatRecord { beat_id, patient_id, len, egm, ecg })
    }

    pub fn egm_channel(&self, m: usize) -> &[f64] {
        &self.egm[m * self.len..(m + 1) * self.len]
    }

    pub fn ecg_channel(&self, m: usize) -> &[f64] {
        &self.ecg[m * self.len..(m + 1) * self.len]
    }
}

/// Mean-centre each channel and scale it to unit max-abs. All-constant
/// channels become all-zero.
pub(crate) fn normalize_channels(data: &mut [f64], len: usize) {
    for ch in data.chunks_mut(len) {
        let mean = ch.iter().sum::<f64>() / len as f64;
        ch.iter_mut().for_each(|v| *v -= mean);
        let peak = ch.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if peak > 0.0 {
            ch.iter_mut().for_each(|v| *v /= peak);
        } else {
            ch.iter_mut().for_each(|v| *v = 0.0);
        }
    }
}

/// A continuous, simultaneously recorded EGM/ECG pair, channels row-major.
#[derive(Debug, Clone)]
pub struct Recording {
    pub patient_id: u64,
    pub len: usize,
    pub egm: Vec<f64>,
    pub ecg: Vec<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct Segmented {
    pub beats: Vec<BeatRecord>,
    /// Centres whose window fell outside the recording.
    pub skipped: usize,
}

/// Cut one fixed-length window `[c - T/2, c - T/2 + T)` per beat centre.
///
/// Each extracted channel is normalised independently. The beat id is the
/// index of the centre in `centers`.
pub fn segment_beats(rec: &Recording, centers: &[usize], beat_len: usize) -> Result<Segmented> {
    if rec.egm.len() != EGM_CHANNELS * rec.len || rec.ecg.len() != ECG_CHANNELS * rec.len {
        return Err(Error::Shape("recording channel data does not match its length".into()));
    }
    let half = beat_len / 2;
    let mut out = Segmented::default();
    for (i, &c) in centers.iter().enumerate() {
        if c < half || c - half + beat_len > rec.len {
            out.skipped += 1;
            continue;
        }
        let start = c - half;
        let cut = |data: &[f64], channels: usize| {
            let mut v = Vec::with_capacity(channels * beat_len);
            for m in 0..channels {
                v.extend_from_slice(&data[m * rec.len + start..m * rec.len + start + beat_len]);
            }
            normalize_channels(&mut v, beat_len);
            v
        };
        let egm = cut(&rec.egm, EGM_CHANNELS);
        let ecg = cut(&rec.ecg, ECG_CHANNELS);
        out.beats.push(BeatRecord::new(i as u64, rec.patient_id, beat_len, egm, ecg)?);
    }
    if out.skipped > 0 {
        log::warn!("skipped {} beat windows outside the recording", out.skipped);
    }
    Ok(out)
}

/// Beat centres from a pre-filtered lead.
///
/// The squared first difference is smoothed over 50 ms; local maxima of this
/// envelope above 30% of the largest envelope value within +-2 s are
/// candidates, separated by a 200 ms refractory period. Each accepted
/// candidate is refined to the largest |x| within 50 ms.
pub fn detect_beats(lead: &[f64], fs_hz: f64) -> Vec<usize> {
    let n = lead.len();
    if n < 3 {
        return Vec::new();
    }
    let ms = |t: f64| ((t * fs_hz / 1000.0).round() as usize).max(1);
    let smooth = ms(50.0);
    let refractory = ms(200.0);
    let local = ms(2000.0);
    let refine = ms(50.0);

    let mut sq = vec![0.0; n];
    for i in 1..n {
        let d = lead[i] - lead[i - 1];
        sq[i] = d * d;
    }
    // Centred moving average.
    let mut prefix = vec![0.0; n + 1];
    for i in 0..n {
        prefix[i + 1] = prefix[i] + sq[i];
    }
    let env: Vec<f64> = (0..n)
        .map(|i| {
            let lo = i.saturating_sub(smooth / 2);
            let hi = (i + smooth / 2 + 1).min(n);
            (prefix[hi] - prefix[lo]) / (hi - lo) as f64
        })
        .collect();
    let global = env.iter().cloned().fold(0.0, f64::max);
    if global <= f64::EPSILON {
        return Vec::new();
    }

    let mut peaks: Vec<usize> = Vec::new();
    for i in 1..n - 1 {
        if !(env[i] > env[i - 1] && env[i] >= env[i + 1]) {
            continue;
        }
        let lo = i.saturating_sub(local);
        let hi = (i + local + 1).min(n);
        let local_max = env[lo..hi].iter().cloned().fold(0.0, f64::max);
        if env[i] <= 0.3 * local_max || env[i] <= 1e-6 * global {
            continue;
        }
        match peaks.last_mut() {
            Some(last) if i - *last < refractory => {
                if env[i] > env[*last] {
                    *last = i;
                }
            }
            _ => peaks.push(i),
        }
    }
    let mut out: Vec<usize> = peaks
        .into_iter()
        .map(|p| {
            let lo = p.saturating_sub(refine);
            let hi = (p + refine + 1).min(n);
            (lo..hi).max_by(|&a, &b| lead[a].abs().total_cmp(&lead[b].abs()).then(b.cmp(&a))).unwrap()
        })
        .collect();
    out.dedup();
    out
}

/// Train/test partition as indices into [`Dataset::beats`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub beats: Vec<BeatRecord>,
    pub split: Split,
}

impl Dataset {
    /// Shuffle with `seed` and assign the first half to training.
    pub fn with_random_split(beats: Vec<BeatRecord>, seed: u64) -> Result<Self> {
        if beats.len() < 2 {
            return Err(Error::Param(format!("a dataset needs at least 2 beats, got {}", beats.len())));
        }
        let mut idx: Vec<usize> = (0..beats.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let test = idx.split_off(beats.len() / 2);
        Ok(Dataset { beats, split: Split { train: idx, test } })
    }

    pub fn train(&self) -> impl Iterator<Item = &BeatRecord> {
        self.split.train.iter().map(|&i| &self.beats[i])
    }

    pub fn test(&self) -> impl Iterator<Item = &BeatRecord> {
        self.split.test.iter().map(|&i| &self.beats[i])
    }
}
