//! Run configuration and its validation.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use ecg_cosearch::das::DasConfig;
use ecg_cosearch::hwmodel::Platform;
use ecg_cosearch::nas::{DnsConfig, TrainConfig, GRID};
use ecg_cosearch::sigproc::{StftConfig, EGM_CHANNELS};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

/// Where beats come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Beats generated by `synth`.
    pub beats: usize,
    /// Patient model file for `synth`; the default model of the run seed when absent.
    pub model: Option<PathBuf>,
    /// An existing beat directory, used in place of synthetic data.
    pub beat_dir: Option<PathBuf>,
    /// EGM channels fed to the network.
    pub egm_channels: Vec<usize>,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig { beats: 2000, model: None, beat_dir: None, egm_channels: (0..EGM_CHANNELS).collect() }
    }
}

/// Everything a run needs. `train.seed` is replaced by `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Run directory; every artifact is written below it.
    pub out: PathBuf,
    pub data: DataConfig,
    pub stft: StftConfig,
    pub dns: DnsConfig,
    pub train: TrainConfig,
    pub das: DasConfig,
    pub platform: Platform,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            out: PathBuf::from("run"),
            data: DataConfig::default(),
            stft: StftConfig::default(),
            dns: DnsConfig::default(),
            train: TrainConfig::default(),
            das: DasConfig::default(),
            platform: Platform::default(),
        }
    }
}

fn check(errors: &mut Vec<String>, ok: bool, field: &str, msg: &str) {
    if !ok {
        errors.push(format!("{field}: {msg}"));
    }
}

fn positive(v: f64) -> bool {
    v.is_finite() && v > 0.0
}

fn non_negative(v: f64) -> bool {
    v.is_finite() && v >= 0.0
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(vec![e.to_string()]))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Config(vec![format!("{}: {e}", path.display())]))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serialises")
    }

    /// Every field-level problem, so they can be fixed in one pass.
    pub fn validate(&self) -> Result<(), CliError> {
        let mut e = Vec::new();
        let d = &self.data;
        match (&d.model, &d.beat_dir) {
            (Some(_), Some(_)) => e.push("data: set either model or beat_dir, not both".into()),
            (Some(p), None) => check(&mut e, p.is_file(), "data.model", &format!("{} is not a file", p.display())),
            (None, Some(p)) => {
                check(&mut e, p.is_dir(), "data.beat_dir", &format!("{} is not a directory", p.display()))
            }
            (None, None) => {}
        }
        if d.beat_dir.is_none() {
            check(&mut e, d.beats >= 2, "data.beats", "need at least 2 beats");
        }
        check(&mut e, !d.egm_channels.is_empty(), "data.egm_channels", "need at least one channel");
        check(
            &mut e,
            d.egm_channels.iter().all(|&c| c < EGM_CHANNELS),
            "data.egm_channels",
            &format!("channels must be below {EGM_CHANNELS}"),
        );
        check(
            &mut e,
            d.egm_channels.iter().collect::<HashSet<_>>().len() == d.egm_channels.len(),
            "data.egm_channels",
            "channels must be distinct",
        );

        let s = &self.stft;
        match s.validate() {
            Ok(()) => check(
                &mut e,
                s.n_bins() == GRID && s.n_frames() == GRID,
                "stft",
                &format!("the network needs {GRID} bins and {GRID} frames, got {} and {}", s.n_bins(), s.n_frames()),
            ),
            Err(err) => e.push(format!("stft: {err}")),
        }

        let n = &self.dns;
        check(&mut e, non_negative(n.lambda), "dns.lambda", "must be finite and >= 0");
        check(&mut e, positive(n.tau), "dns.tau", "must be > 0");
        check(&mut e, n.batch_size >= 1, "dns.batch_size", "must be >= 1");
        check(&mut e, positive(n.lr), "dns.lr", "must be > 0");
        check(&mut e, non_negative(n.weight_decay), "dns.weight_decay", "must be >= 0");
        check(&mut e, positive(n.arch_lr), "dns.arch_lr", "must be > 0");
        check(&mut e, non_negative(n.arch_weight_decay), "dns.arch_weight_decay", "must be >= 0");
        check(&mut e, n.width >= 1, "dns.width", "must be >= 1");
        check(&mut e, n.depth_limit != Some(0), "dns.depth_limit", "must be >= 1 when set");
        check(&mut e, n.check_interval >= 1, "dns.check_interval", "must be >= 1");
        check(&mut e, n.max_steps >= n.steps, "dns.max_steps", "must be >= dns.steps");

        let t = &self.train;
        check(&mut e, t.batch_size >= 1, "train.batch_size", "must be >= 1");
        check(&mut e, positive(t.lr), "train.lr", "must be > 0");
        check(&mut e, non_negative(t.weight_decay), "train.weight_decay", "must be >= 0");

        if let Err(err) = self.das.validate() {
            e.push(format!("das: {err}"));
        }
        if let Err(err) = self.platform.validate() {
            e.push(format!("platform: {err}"));
        }
        check(&mut e, !self.out.is_file(), "out", &format!("{} is a file", self.out.display()));
        if e.is_empty() {
            Ok(())
        } else {
            Err(CliError::Config(e))
        }
    }
}

/// First 12 hex digits of the SHA-256 of `parts`, each length-prefixed.
pub fn digest(parts: &[&[u8]]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    h.finalize().iter().take(6).map(|b| format!("{b:02x}")).collect()
}

fn toml_of<T: Serialize>(v: &T) -> Vec<u8> {
    toml::to_string(v).expect("config section serialises").into_bytes()
}

/// Per-stage hashes: each covers the stage's own settings and everything upstream.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageHashes {
    pub data: String,
    pub network: String,
    pub train: String,
    pub accel: String,
    pub run: String,
}

impl StageHashes {
    pub fn of(cfg: &RunConfig) -> Result<Self, CliError> {
        let model = match &cfg.data.model {
            Some(p) => fs::read(p).map_err(|e| CliError::Config(vec![format!("data.model: {}: {e}", p.display())]))?,
            None => Vec::new(),
        };
        let data = digest(&[b"data", &cfg.seed.to_le_bytes(), &toml_of(&cfg.data), &model]);
        let network = digest(&[b"network", data.as_bytes(), &toml_of(&cfg.stft), &toml_of(&cfg.dns)]);
        let train = digest(&[b"train", network.as_bytes(), &toml_of(&cfg.train)]);
        let accel = digest(&[b"accel", network.as_bytes(), &toml_of(&cfg.das), &toml_of(&cfg.platform)]);
        let run = digest(&[b"run", train.as_bytes(), accel.as_bytes()]);
        Ok(StageHashes { data, network, train, accel, run })
    }
}
