use rand::seq::SliceRandom;
use rand::Rng;

use crate::autodiff::Tensor4;
use crate::sigproc::{stft, BeatRecord, StftConfig, ECG_CHANNELS};
use crate::{Error, Result};

/// Network-ready pairs: EGM planes in, ECG planes out, one sample per beat.
///
/// Planes are divided by the window length so a unit DC level maps to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Samples {
    x: Vec<f64>,
    y: Vec<f64>,
    x_dims: [usize; 3],
    y_dims: [usize; 3],
    n: usize,
}

impl Samples {
    pub fn new(x: Tensor4, y: Tensor4) -> Result<Self> {
        let ([n, c, h, w], [ny, cy, hy, wy]) = (x.dims(), y.dims());
        if n != ny {
            return Err(Error::Shape(format!("{n} inputs vs {ny} targets")));
        }
        Ok(Samples { x: x.into_data(), y: y.into_data(), x_dims: [c, h, w], y_dims: [cy, hy, wy], n })
    }

    /// STFT planes of the selected EGM channels and of all ECG leads.
    pub fn from_beats<'a>(
        beats: impl IntoIterator<Item = &'a BeatRecord>,
        cfg: &StftConfig,
        egm_channels: &[usize],
    ) -> Result<Self> {
        cfg.validate()?;
        let (k, t) = (cfg.n_bins(), cfg.n_frames());
        let scale = 1.0 / cfg.window_len as f64;
        let (mut x, mut y, mut n) = (Vec::new(), Vec::new(), 0);
        for beat in beats {
            let mut egm = Vec::with_capacity(egm_channels.len() * beat.len);
            for &c in egm_channels {
                if c >= beat.egm.len() / beat.len {
                    return Err(Error::Param(format!("EGM channel {c} does not exist")));
                }
                egm.extend_from_slice(beat.egm_channel(c));
            }
            let gx = stft(cfg, &egm, egm_channels.len())?;
            let gy = stft(cfg, &beat.ecg, ECG_CHANNELS)?;
            x.extend(gx.to_planes().into_iter().map(|v| v * scale));
            y.extend(gy.to_planes().into_iter().map(|v| v * scale));
            n += 1;
        }
        Ok(Samples { x, y, x_dims: [2 * egm_channels.len(), k, t], y_dims: [2 * ECG_CHANNELS, k, t], n })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn input_channels(&self) -> usize {
        self.x_dims[0]
    }

    fn gather(data: &[f64], dims: [usize; 3], idx: &[usize]) -> Tensor4 {
        let per: usize = dims.iter().product();
        let mut out = Vec::with_capacity(idx.len() * per);
        for &i in idx {
            out.extend_from_slice(&data[i * per..(i + 1) * per]);
        }
        Tensor4::new([idx.len(), dims[0], dims[1], dims[2]], out).unwrap()
    }

    /// `(x, y)` tensors for the given sample indices.
    pub fn batch(&self, idx: &[usize]) -> (Tensor4, Tensor4) {
        (Self::gather(&self.x, self.x_dims, idx), Self::gather(&self.y, self.y_dims, idx))
    }

    pub fn inputs(&self) -> Tensor4 {
        Self::gather(&self.x, self.x_dims, &(0..self.n).collect::<Vec<_>>())
    }

    pub fn targets(&self) -> Tensor4 {
        Self::gather(&self.y, self.y_dims, &(0..self.n).collect::<Vec<_>>())
    }
}

/// Endless shuffled minibatches: each epoch is a fresh permutation, the
/// trailing partial batch is dropped.
pub struct BatchSampler {
    n: usize,
    batch: usize,
    order: Vec<usize>,
    pos: usize,
}

impl BatchSampler {
    pub fn new(n: usize, batch: usize) -> Self {
        let batch = batch.clamp(1, n.max(1));
        BatchSampler { n, batch, order: Vec::new(), pos: 0 }
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.n / self.batch
    }

    pub fn next_indices<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Vec<usize> {
        if self.pos + self.batch > self.order.len() {
            self.order = (0..self.n).collect();
            self.order.shuffle(rng);
            self.pos = 0;
        }
        let out = self.order[self.pos..self.pos + self.batch].to_vec();
        self.pos += self.batch;
        out
    }
}
