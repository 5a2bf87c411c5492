use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::data::{BatchSampler, Samples};
use super::net::{init_params, network_forward, predict, Bound};
use super::space::NetworkSpec;
use crate::autodiff::{AdamState, ParamStore, Tape};
use crate::sigproc::{istft, pearson, BeatRecord, Dataset, StftConfig, TfGrid, ECG_CHANNELS};
use crate::{Error, Result};

/// Optimiser settings for training a fixed network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { epochs: 30, batch_size: 16, lr: 1e-3, weight_decay: 1e-3, seed: 0 }
    }
}

/// Mean training loss of every completed epoch.
pub type EpochLosses = Vec<f64>;

/// Train `params` in place on `samples` with the negative Pearson loss.
pub fn fit<F>(
    spec: &NetworkSpec,
    params: &mut ParamStore,
    samples: &Samples,
    cfg: &TrainConfig,
    mut on_epoch: F,
) -> Result<EpochLosses>
where
    F: FnMut(usize, f64),
{
    if samples.input_channels() != spec.input_channels {
        return Err(Error::Shape(format!(
            "samples have {} input planes, network expects {}",
            samples.input_channels(),
            spec.input_channels
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = AdamState::new(cfg.lr, cfg.weight_decay);
    let mut sampler = BatchSampler::new(samples.len(), cfg.batch_size);
    let mut losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut total = 0.0;
        let steps = sampler.batches_per_epoch().max(1);
        for _ in 0..steps {
            let idx = sampler.next_indices(&mut rng);
            let (x, y) = samples.batch(&idx);
            let mut tape = Tape::new();
            let (p, vars) = Bound::attach(params, &mut tape, true);
            let xv = tape.constant(x);
            let pred = network_forward(&mut tape, &p, spec, xv)?;
            let (loss, _) = tape.pearson_loss(pred, &y)?;
            let lv = tape.value(loss).item();
            if !lv.is_finite() {
                return Err(Error::Divergence(format!("training loss is {lv} in epoch {epoch}")));
            }
            total += lv;
            let mut grads = tape.backward(loss)?;
            let g: Vec<_> = vars
                .iter()
                .zip(params.tensors())
                .map(|(&v, t)| grads.take(v).unwrap_or_else(|| crate::autodiff::Tensor4::zeros(t.dims())))
                .collect();
            adam.update(params.tensors_mut(), &g)?;
        }
        let mean = total / steps as f64;
        info!("epoch {epoch}: loss {mean:.5}");
        on_epoch(epoch, mean);
        losses.push(mean);
    }
    Ok(losses)
}

/// Correlation of reconstructed ECG time series with the measured leads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Mean Pearson r per ECG lead over the evaluated beats.
    pub per_channel: Vec<f64>,
    /// Mean over leads and beats.
    pub mean: f64,
    pub beats: usize,
    /// Lead-beat pairs with zero variance, counted as r = 0.
    pub degenerate: usize,
}

/// Predict the ECG planes of `beats`, invert them to time series and
/// correlate each lead with the measured one.
pub fn evaluate<'a>(
    spec: &NetworkSpec,
    params: &ParamStore,
    beats: impl IntoIterator<Item = &'a BeatRecord>,
    cfg: &StftConfig,
    egm_channels: &[usize],
) -> Result<EvalReport> {
    let beats: Vec<&BeatRecord> = beats.into_iter().collect();
    let mut per_channel = vec![0.0; ECG_CHANNELS];
    let mut degenerate = 0;
    if beats.is_empty() {
        return Ok(EvalReport { per_channel, mean: 0.0, beats: 0, degenerate });
    }
    let samples = Samples::from_beats(beats.iter().copied(), cfg, egm_channels)?;
    let pred = predict(spec, params, &samples.inputs(), 64)?;
    let (k, t) = (cfg.n_bins(), cfg.n_frames());
    for (i, beat) in beats.iter().enumerate() {
        let grid = TfGrid::from_planes(pred.sample(i), ECG_CHANNELS, k, t)?;
        let series = istft(cfg, &grid)?;
        for (m, acc) in per_channel.iter_mut().enumerate() {
            let p = pearson(&series[m * cfg.beat_len..(m + 1) * cfg.beat_len], beat.ecg_channel(m))?;
            if p.degenerate {
                degenerate += 1;
            }
            *acc += p.r;
        }
    }
    per_channel.iter_mut().for_each(|v| *v /= beats.len() as f64);
    let mean = per_channel.iter().sum::<f64>() / ECG_CHANNELS as f64;
    Ok(EvalReport { per_channel, mean, beats: beats.len(), degenerate })
}

/// A network trained from scratch and its test-split report.
#[derive(Debug, Clone)]
pub struct TrainedNetwork {
    pub params: ParamStore,
    pub epoch_losses: EpochLosses,
    pub report: EvalReport,
}

/// Initialise `spec` from `cfg.seed`, train on the train split and evaluate
/// on the test split.
pub fn train_network<F>(
    spec: &NetworkSpec,
    dataset: &Dataset,
    stft_cfg: &StftConfig,
    egm_channels: &[usize],
    cfg: &TrainConfig,
    on_epoch: F,
) -> Result<TrainedNetwork>
where
    F: FnMut(usize, f64),
{
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0001);
    let mut params = init_params(spec, &mut rng);
    let train = Samples::from_beats(dataset.train(), stft_cfg, egm_channels)?;
    let epoch_losses = fit(spec, &mut params, &train, cfg, on_epoch)?;
    let report = evaluate(spec, &params, dataset.test(), stft_cfg, egm_channels)?;
    Ok(TrainedNetwork { params, epoch_losses, report })
}
