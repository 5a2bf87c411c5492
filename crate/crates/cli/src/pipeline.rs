//! The pipeline stages. Each stage reads upstream artifacts from the run
//! directory and writes its own, named with the hash of the settings it
//! depends on.

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use ecg_cosearch::autodiff::{load_checkpoint, save_checkpoint, softmax};
use ecg_cosearch::das::{run_das, write_trace_csv, DasState, Objective, SearchSpace};
use ecg_cosearch::datasynth::{gen_dataset, PatientModel};
use ecg_cosearch::hwmodel::{estimate_network, write_report_csv, AcceleratorDesign};
use ecg_cosearch::nas::{
    alpha_header, predict, search, train_network, write_alpha_rows, EvalReport, NetworkSpec, Samples, SupernetState,
    TrainConfig, NUM_BLOCKS,
};
use ecg_cosearch::sigproc::io::{read_beat_dir, write_beat_dir, HEADER_FILE};
use ecg_cosearch::sigproc::{istft, Dataset, TfGrid, ECG_CHANNELS, ECG_LEAD_NAMES, SAMPLE_RATE_HZ};
use log::{info, warn};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::config::{RunConfig, StageHashes};
use crate::error::CliError;

const SEARCH_STREAM: u64 = 0x6e61_7300;
const DAS_STREAM: u64 = 0x6461_7300;
/// Architecture logits are logged every this many search steps, and at the end.
const ALPHA_EVERY: usize = 10;

/// Artifact locations of one run directory.
#[derive(Debug, Clone)]
pub struct RunPaths {
    pub root: PathBuf,
    pub hashes: StageHashes,
}

impl RunPaths {
    pub fn new(cfg: &RunConfig) -> Result<Self, CliError> {
        Ok(RunPaths { root: cfg.out.clone(), hashes: StageHashes::of(cfg)? })
    }

    fn file(&self, stem: &str, hash: &str, ext: &str) -> PathBuf {
        self.root.join(format!("{stem}-{hash}.{ext}"))
    }

    pub fn data_dir(&self) -> PathBuf {
        self.root.join(format!("data-{}", self.hashes.data))
    }
    pub fn network(&self) -> PathBuf {
        self.file("network", &self.hashes.network, "toml")
    }
    pub fn search_record(&self) -> PathBuf {
        self.file("search", &self.hashes.network, "toml")
    }
    pub fn search_trace(&self) -> PathBuf {
        self.file("search_trace", &self.hashes.network, "csv")
    }
    pub fn alpha_trace(&self) -> PathBuf {
        self.file("alpha", &self.hashes.network, "csv")
    }
    pub fn checkpoint(&self) -> (PathBuf, PathBuf) {
        (self.file("checkpoint", &self.hashes.train, "bin"), self.file("checkpoint", &self.hashes.train, "toml"))
    }
    pub fn train_record(&self) -> PathBuf {
        self.file("train", &self.hashes.train, "toml")
    }
    pub fn design(&self) -> PathBuf {
        self.file("design", &self.hashes.accel, "toml")
    }
    pub fn accel_record(&self) -> PathBuf {
        self.file("accel", &self.hashes.accel, "toml")
    }
    pub fn das_trace(&self) -> PathBuf {
        self.file("das_trace", &self.hashes.accel, "csv")
    }
    pub fn cost_report(&self) -> PathBuf {
        self.file("cost", &self.hashes.accel, "csv")
    }
    pub fn summary(&self) -> PathBuf {
        self.file("summary", &self.hashes.run, "csv")
    }
    pub fn plots_dir(&self) -> PathBuf {
        self.root.join(format!("plots-{}", self.hashes.run))
    }
    pub fn config_copy(&self) -> PathBuf {
        self.file("config", &self.hashes.run, "toml")
    }
}

/// Exclusive hold on a run directory, released on drop.
#[derive(Debug)]
pub struct RunLock(PathBuf);

impl RunLock {
    pub fn acquire(dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(dir)?;
        let path = dir.join(".lock");
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                writeln!(f, "{}", std::process::id())?;
                Ok(RunLock(path))
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(CliError::Locked(path)),
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.0);
    }
}

fn write_toml<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = toml::to_string(value).map_err(|e| CliError::Other(format!("{}: {e}", path.display())))?;
    fs::write(path, text)?;
    Ok(())
}

fn read_toml<T: DeserializeOwned>(path: &Path, stage: &'static str) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(|_| CliError::MissingArtifact { stage, path: path.to_path_buf() })?;
    toml::from_str(&text).map_err(|e| CliError::Other(format!("{}: {e}", path.display())))
}

fn require(path: &Path, stage: &'static str) -> Result<(), CliError> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::MissingArtifact { stage, path: path.to_path_buf() })
    }
}

fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>, CliError> {
    Ok(csv::Writer::from_writer(BufWriter::new(File::create(path)?)))
}

/// Generate the synthetic beat directory. Returns `None` when the run reads
/// an existing beat directory instead.
pub fn cmd_synth(cfg: &RunConfig, paths: &RunPaths) -> Result<Option<PathBuf>, CliError> {
    if let Some(dir) = &cfg.data.beat_dir {
        info!("data comes from {}; nothing to generate", dir.display());
        return Ok(None);
    }
    let model = match &cfg.data.model {
        Some(p) => PatientModel::load(p)?,
        None => PatientModel::default_for_seed(cfg.seed)?,
    };
    let dataset = gen_dataset(&model, cfg.data.beats)?;
    let dir = paths.data_dir();
    write_beat_dir(&dir, &dataset, SAMPLE_RATE_HZ)?;
    model.save(&dir.join("model.toml"))?;
    info!("wrote {} beats to {}", dataset.beats.len(), dir.display());
    Ok(Some(dir))
}

/// The run's beats, from the configured beat directory or from `synth`.
pub fn load_dataset(cfg: &RunConfig, paths: &RunPaths) -> Result<Dataset, CliError> {
    let dir = cfg.data.beat_dir.clone().unwrap_or_else(|| paths.data_dir());
    require(&dir.join(HEADER_FILE), "synth")?;
    let ds = read_beat_dir(&dir)?;
    if let Some(b) = ds.beats.first() {
        if b.len != cfg.stft.beat_len {
            return Err(CliError::Config(vec![format!(
                "stft.beat_len: {} does not match the {}-sample beats in {}",
                cfg.stft.beat_len,
                b.len,
                dir.display()
            )]));
        }
    }
    Ok(ds)
}

/// Outcome of the block search, as stored next to the derived network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchRecord {
    pub steps: usize,
    pub final_lambda: f64,
    pub lambda_doublings: usize,
    pub depth_ok: bool,
    pub depth: usize,
    pub macs: u64,
    pub blocks: Vec<String>,
}

pub fn cmd_search_net(cfg: &RunConfig, paths: &RunPaths) -> Result<NetworkSpec, CliError> {
    let dataset = load_dataset(cfg, paths)?;
    let train = Samples::from_beats(dataset.train(), &cfg.stft, &cfg.data.egm_channels)?;
    let mut state = SupernetState::new(2 * cfg.data.egm_channels.len(), &cfg.dns, cfg.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ SEARCH_STREAM);
    let mut alpha = csv_writer(&paths.alpha_trace())?;
    alpha.write_record(alpha_header())?;
    let mut trace = csv_writer(&paths.search_trace())?;
    trace.write_record(["step", "rec_loss", "mac_gmacs", "total_loss", "lambda"])?;
    let mut failure: Option<CliError> = None;
    let outcome = search(&mut state, &train, &cfg.dns, &mut rng, |step, stats, st| {
        if failure.is_some() {
            return;
        }
        let row = [
            step.to_string(),
            stats.rec_loss.to_string(),
            stats.mac_loss.to_string(),
            stats.total.to_string(),
            st.lambda.to_string(),
        ];
        let res = trace.write_record(&row).map_err(CliError::from).and_then(|_| {
            if step % ALPHA_EVERY == 0 {
                write_alpha_rows(&mut alpha, step, st)?;
            }
            Ok(())
        });
        if let Err(e) = res {
            failure = Some(e);
        }
        if step % 50 == 0 {
            info!("search step {step}: rec {:.4}, {:.4} GMACs, lambda {}", stats.rec_loss, stats.mac_loss, st.lambda);
        }
    })?;
    if let Some(e) = failure {
        return Err(e);
    }
    if outcome.steps % ALPHA_EVERY != 0 {
        write_alpha_rows(&mut alpha, outcome.steps, &state)?;
    }
    alpha.flush()?;
    trace.flush()?;
    if !outcome.depth_ok {
        warn!("depth limit still violated after {} steps", outcome.steps);
    }
    outcome.spec.save(&paths.network())?;
    let record = SearchRecord {
        steps: outcome.steps,
        final_lambda: outcome.lambda,
        lambda_doublings: outcome.lambda_doublings,
        depth_ok: outcome.depth_ok,
        depth: outcome.spec.depth(),
        macs: outcome.spec.macs(),
        blocks: outcome.spec.blocks().iter().map(|b| b.name().to_string()).collect(),
    };
    write_toml(&paths.search_record(), &record)?;
    info!("derived network: {} conv layers, {} MACs", record.depth, record.macs);
    Ok(outcome.spec)
}

fn load_network(paths: &RunPaths) -> Result<NetworkSpec, CliError> {
    let path = paths.network();
    require(&path, "search-net")?;
    Ok(NetworkSpec::load(&path)?)
}

/// Losses and test report of the retrained network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub epoch_losses: Vec<f64>,
    pub report: EvalReport,
}

pub fn cmd_train(cfg: &RunConfig, paths: &RunPaths) -> Result<TrainRecord, CliError> {
    let spec = load_network(paths)?;
    let dataset = load_dataset(cfg, paths)?;
    let tcfg = TrainConfig { seed: cfg.seed, ..cfg.train.clone() };
    let trained = train_network(&spec, &dataset, &cfg.stft, &cfg.data.egm_channels, &tcfg, |_, _| {})?;
    let (bin, manifest) = paths.checkpoint();
    save_checkpoint(&trained.params, &bin, &manifest)?;
    let record = TrainRecord { epoch_losses: trained.epoch_losses, report: trained.report };
    write_toml(&paths.train_record(), &record)?;
    info!("mean test Pearson {:.4} over {} beats", record.report.mean, record.report.beats);
    Ok(record)
}

/// Headline numbers of the chosen accelerator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccelRecord {
    pub objective: Objective,
    pub cost_cycles: f64,
    pub fps: f64,
    pub startup_ms: f64,
    pub used_fallback: bool,
}

pub fn cmd_search_acc(cfg: &RunConfig, paths: &RunPaths) -> Result<AccelRecord, CliError> {
    let spec = load_network(paths)?;
    let layers = spec.conv_layers();
    let mut state = DasState::new(SearchSpace::full(&layers, &cfg.platform), cfg.das.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ DAS_STREAM);
    let outcome = run_das(&mut state, &layers, &cfg.platform, &mut rng)?;
    let chosen = &outcome.chosen;
    chosen.design.save(&paths.design())?;
    write_trace_csv(&outcome.trace, BufWriter::new(File::create(paths.das_trace())?))?;
    write_report_csv(&chosen.report, BufWriter::new(File::create(paths.cost_report())?))?;
    let record = AccelRecord {
        objective: cfg.das.objective,
        cost_cycles: chosen.cost,
        fps: chosen.report.fps,
        startup_ms: chosen.report.startup_latency_s * 1e3,
        used_fallback: outcome.used_fallback,
    };
    write_toml(&paths.accel_record(), &record)?;
    info!("accelerator: {:.1} FPS, start-up {:.4} ms", record.fps, record.startup_ms);
    Ok(record)
}

/// One row of the summary CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub config_hash: String,
    pub mean_test_pearson: f64,
    pub network_macs: u64,
    pub network_depth: usize,
    pub fps: f64,
    pub startup_ms: f64,
    pub objective: Objective,
    pub design_feasible: bool,
}

/// Read a whole CSV file as string records, header first.
fn read_csv(path: &Path, stage: &'static str) -> Result<Vec<csv::StringRecord>, CliError> {
    require(path, stage)?;
    let mut r = csv::ReaderBuilder::new().has_headers(false).from_path(path)?;
    Ok(r.records().collect::<Result<Vec<_>, _>>()?)
}

pub fn cmd_report(cfg: &RunConfig, paths: &RunPaths) -> Result<Summary, CliError> {
    let spec = load_network(paths)?;
    let train: TrainRecord = read_toml(&paths.train_record(), "train")?;
    require(&paths.design(), "search-acc")?;
    let design = AcceleratorDesign::load(&paths.design())?;
    let cost = estimate_network(&spec.conv_layers(), &design, &cfg.platform)?;
    let summary = Summary {
        config_hash: paths.hashes.run.clone(),
        mean_test_pearson: train.report.mean,
        network_macs: spec.macs(),
        network_depth: spec.depth(),
        fps: cost.fps,
        startup_ms: cost.startup_latency_s * 1e3,
        objective: cfg.das.objective,
        design_feasible: cost.feasible,
    };
    let mut w = csv_writer(&paths.summary())?;
    w.serialize(&summary)?;
    w.flush()?;

    let plots = paths.plots_dir();
    fs::create_dir_all(&plots)?;
    let mut w = csv_writer(&plots.join("train_loss.csv"))?;
    w.write_record(["epoch", "loss"])?;
    for (i, l) in train.epoch_losses.iter().enumerate() {
        w.write_record([i.to_string(), l.to_string()])?;
    }
    w.flush()?;

    let mut w = csv_writer(&plots.join("lead_pearson.csv"))?;
    w.write_record(["lead", "name", "pearson"])?;
    for (i, r) in train.report.per_channel.iter().enumerate() {
        w.write_record([i.to_string(), ECG_LEAD_NAMES[i].to_string(), r.to_string()])?;
    }
    w.flush()?;

    let mut w = csv_writer(&plots.join("stage_cycles.csv"))?;
    w.write_record(["sub_accelerator", "cycles"])?;
    for (i, c) in cost.stage_cycles.iter().enumerate() {
        w.write_record([i.to_string(), c.to_string()])?;
    }
    w.flush()?;

    let mut w = csv_writer(&plots.join("search_loss.csv"))?;
    for row in read_csv(&paths.search_trace(), "search-net")? {
        w.write_record([&row[0], &row[1], &row[2]])?;
    }
    w.flush()?;

    let mut w = csv_writer(&plots.join("das_best.csv"))?;
    for row in read_csv(&paths.das_trace(), "search-acc")? {
        w.write_record([&row[0], &row[3]])?;
    }
    w.flush()?;

    let alpha = read_csv(&paths.alpha_trace(), "search-net")?;
    let mut w = csv_writer(&plots.join("block_probabilities.csv"))?;
    let mut header = vec!["block".to_string()];
    header.extend(alpha[0].iter().skip(2).map(str::to_string));
    w.write_record(&header)?;
    for row in alpha.iter().skip(alpha.len().saturating_sub(NUM_BLOCKS).max(1)) {
        let logits: Vec<f64> = row.iter().skip(2).map(|v| v.parse().unwrap_or(0.0)).collect();
        let mut rec = vec![row[1].to_string()];
        rec.extend(softmax(&logits).iter().map(|p| p.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;

    write_reconstruction(cfg, paths, &spec, &plots.join("reconstruction.csv"))?;
    info!("summary written to {}", paths.summary().display());
    Ok(summary)
}

/// Measured and reconstructed leads of the first test beat.
fn write_reconstruction(cfg: &RunConfig, paths: &RunPaths, spec: &NetworkSpec, out: &Path) -> Result<(), CliError> {
    let (bin, manifest) = paths.checkpoint();
    require(&bin, "train")?;
    let params = load_checkpoint(&bin, &manifest)?;
    let dataset = load_dataset(cfg, paths)?;
    let mut w = csv_writer(out)?;
    w.write_record(["sample", "lead", "measured", "reconstructed"])?;
    if let Some(beat) = dataset.test().next() {
        let samples = Samples::from_beats([beat], &cfg.stft, &cfg.data.egm_channels)?;
        let pred = predict(spec, &params, &samples.inputs(), 1)?;
        let grid = TfGrid::from_planes(pred.sample(0), ECG_CHANNELS, cfg.stft.n_bins(), cfg.stft.n_frames())?;
        let series = istft(&cfg.stft, &grid)?;
        for m in 0..ECG_CHANNELS {
            for (t, (a, b)) in beat.ecg_channel(m).iter().zip(&series[m * beat.len..(m + 1) * beat.len]).enumerate() {
                w.write_record([t.to_string(), ECG_LEAD_NAMES[m].to_string(), a.to_string(), b.to_string()])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Every stage in order.
pub fn cmd_all(cfg: &RunConfig, paths: &RunPaths) -> Result<Summary, CliError> {
    cmd_synth(cfg, paths)?;
    cmd_search_net(cfg, paths)?;
    cmd_train(cfg, paths)?;
    cmd_search_acc(cfg, paths)?;
    cmd_report(cfg, paths)
}
