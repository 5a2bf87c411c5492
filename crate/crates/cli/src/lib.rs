//! Config-driven pipeline: synthesise beats, search and retrain the network,
//! search the accelerator and report.
//!
//! Every command validates the whole [`RunConfig`] first, takes a lock on the
//! run directory and writes its artifacts there with the hash of the settings
//! they depend on in the file name, so runs with different settings can share
//! a directory and identical runs overwrite identical bytes.

pub mod config;
pub mod error;
pub mod pipeline;

use std::path::PathBuf;

pub use config::{DataConfig, RunConfig, StageHashes};
pub use error::CliError;
pub use pipeline::{
    cmd_all, cmd_report, cmd_search_acc, cmd_search_net, cmd_synth, cmd_train, load_dataset, AccelRecord, RunLock,
    RunPaths, SearchRecord, Summary, TrainRecord,
};

/// A pipeline verb.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Synth,
    SearchNet,
    Train,
    SearchAcc,
    Report,
    All,
}

/// Load the config (defaults when `config` is `None`) and apply overrides.
pub fn resolve_config(
    config: Option<&PathBuf>,
    seed: Option<u64>,
    out: Option<PathBuf>,
) -> Result<RunConfig, CliError> {
    let mut cfg = match config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(o) = out {
        cfg.out = o;
    }
    Ok(cfg)
}

/// Validate, lock the run directory and run `stage`.
pub fn execute(stage: Stage, cfg: &RunConfig) -> Result<(), CliError> {
    cfg.validate()?;
    let paths = RunPaths::new(cfg)?;
    let _lock = RunLock::acquire(&paths.root)?;
    std::fs::write(paths.config_copy(), cfg.to_toml())?;
    match stage {
        Stage::Synth => cmd_synth(cfg, &paths).map(|_| ()),
        Stage::SearchNet => cmd_search_net(cfg, &paths).map(|_| ()),
        Stage::Train => cmd_train(cfg, &paths).map(|_| ()),
        Stage::SearchAcc => cmd_search_acc(cfg, &paths).map(|_| ()),
        Stage::Report => cmd_report(cfg, &paths).map(|_| ()),
        Stage::All => cmd_all(cfg, &paths).map(|_| ()),
    }
}
