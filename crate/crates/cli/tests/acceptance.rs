//! Acceptance checks, one pass/fail line per criterion.
//!
//! `cargo test -p ecg-cosearch-cli --test acceptance -- 3 7` runs a subset.
//! Set `ACCEPTANCE_DIR` to keep (and reuse) the pipeline artifacts.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use ecg_cosearch::das::{brute_force, random_search, run_das, DasConfig, DasState, Objective};
use ecg_cosearch::hwmodel::{
    enumerate_tilings, estimate_network, spatial_dims, AcceleratorDesign, Dim, Mapping, Noc, Platform,
    NUM_SUB_ACCELERATORS,
};
use ecg_cosearch::nas::{count_macs, BlockKind, LayerDims, NetworkSpec, NUM_BLOCKS};
use ecg_cosearch::sigproc::{design_bandpass, filtfilt, istft, stft, StftConfig, EGM_CHANNELS};
use ecg_cosearch_cli::{
    cmd_search_acc, cmd_search_net, cmd_synth, cmd_train, AccelRecord, RunConfig, RunPaths, SearchRecord, TrainRecord,
};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Block-search steps for every network criterion.
const SEARCH_STEPS: usize = 200;
/// Retraining epochs for every network criterion.
const RETRAIN_EPOCHS: usize = 6;

type Outcome = Result<String, String>;

fn pass_if(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn gradients() -> Outcome {
    let mut worst: Vec<(&str, f64)> = Vec::new();
    for seed in 0..20 {
        for (op, err) in common::gradient_suite(seed) {
            match worst.iter_mut().find(|(o, _)| *o == op) {
                Some(w) => w.1 = w.1.max(err),
                None => worst.push((op, err)),
            }
        }
    }
    let max = worst.iter().map(|w| w.1).fold(0.0, f64::max);
    let failing: Vec<String> =
        worst.iter().filter(|w| !(w.1 < common::GRAD_TOL)).map(|w| format!("{} {:.1e}", w.0, w.1)).collect();
    pass_if(failing.is_empty(), format!("{} ops x 20 seeds, max rel err {max:.1e}; failing: {failing:?}", worst.len()))
}

fn signals() -> Outcome {
    let cfg = StftConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut rt = 0.0f64;
    for _ in 0..100 {
        let x: Vec<f64> = (0..EGM_CHANNELS * cfg.beat_len).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y = istft(&cfg, &stft(&cfg, &x, EGM_CHANNELS).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
        rt = x.iter().zip(&y).fold(rt, |m, (a, b)| m.max((a - b).abs()));
    }
    let filter = design_bandpass(5, 3.0, 50.0, 1000.0).map_err(|e| e.to_string())?;
    let mut lags = Vec::new();
    for f in [5.0, 10.0, 20.0, 40.0] {
        let x: Vec<f64> = (0..2000).map(|t| (2.0 * std::f64::consts::PI * f * t as f64 / 1000.0).sin()).collect();
        let y = filtfilt(&filter, &x).map_err(|e| e.to_string())?;
        let xcorr = |lag: i64| -> f64 {
            (0..x.len() as i64)
                .filter_map(|t| y.get((t + lag) as usize).filter(|_| t + lag >= 0).map(|v| v * x[t as usize]))
                .sum()
        };
        let best = (-100..=100).max_by(|&a, &b| xcorr(a).total_cmp(&xcorr(b))).unwrap();
        lags.push(best);
    }
    let (dc, mid, nyq) = (filter.gain(0.0), filter.gain((3.0f64 * 50.0).sqrt()), filter.gain(500.0));
    let ok = rt < 1e-9 && lags.iter().all(|&l| l == 0) && dc < 1e-3 && (0.9..=1.0).contains(&mid) && nyq < 1e-3;
    pass_if(
        ok,
        format!("round trip {rt:.1e}, lags {lags:?} at 5/10/20/40 Hz, |H| dc {dc:.1e} mid {mid:.4} nyquist {nyq:.1e}"),
    )
}

/// Pipeline runs share one directory; stage outputs are reused by config hash.
struct Runs {
    root: PathBuf,
    _tmp: Option<tempfile::TempDir>,
}

impl Runs {
    fn new() -> Self {
        match std::env::var_os("ACCEPTANCE_DIR") {
            Some(d) => Runs { root: PathBuf::from(d), _tmp: None },
            None => {
                let tmp = tempfile::tempdir().unwrap();
                Runs { root: tmp.path().to_path_buf(), _tmp: Some(tmp) }
            }
        }
    }

    fn base(&self) -> RunConfig {
        let mut cfg = RunConfig { out: self.root.clone(), ..RunConfig::default() };
        cfg.dns.steps = SEARCH_STEPS;
        cfg.train.epochs = RETRAIN_EPOCHS;
        cfg
    }

    fn network(&self, cfg: &RunConfig) -> Result<NetworkSpec, String> {
        let paths = RunPaths::new(cfg).map_err(|e| e.to_string())?;
        if !paths.data_dir().exists() {
            cmd_synth(cfg, &paths).map_err(|e| e.to_string())?;
        }
        if paths.network().exists() {
            return NetworkSpec::load(&paths.network()).map_err(|e| e.to_string());
        }
        cmd_search_net(cfg, &paths).map_err(|e| e.to_string())
    }

    fn trained(&self, cfg: &RunConfig) -> Result<(NetworkSpec, TrainRecord), String> {
        let spec = self.network(cfg)?;
        let paths = RunPaths::new(cfg).map_err(|e| e.to_string())?;
        if let Ok(text) = std::fs::read_to_string(paths.train_record()) {
            return Ok((spec, toml::from_str(&text).map_err(|e| e.to_string())?));
        }
        Ok((spec, cmd_train(cfg, &paths).map_err(|e| e.to_string())?))
    }

    fn accelerator(&self, cfg: &RunConfig) -> Result<AccelRecord, String> {
        self.network(cfg)?;
        let paths = RunPaths::new(cfg).map_err(|e| e.to_string())?;
        cmd_search_acc(cfg, &paths).map_err(|e| e.to_string())
    }
}

fn describe(spec: &NetworkSpec) -> String {
    let kept = spec.blocks().iter().filter(|b| **b != BlockKind::Skip).count();
    format!("{} conv layers, {} MACs, {kept}/{NUM_BLOCKS} blocks kept", spec.depth(), spec.macs())
}

fn reconstruction(runs: &Runs) -> Outcome {
    let (spec, rec) = runs.trained(&runs.base())?;
    let r = rec.report.mean;
    pass_if(r >= 0.95, format!("mean test Pearson {r:.4} over {} beats ({})", rec.report.beats, describe(&spec)))
}

fn single_channel(runs: &Runs) -> Outcome {
    let mut cfg = runs.base();
    cfg.data.egm_channels = vec![0];
    let (spec, rec) = runs.trained(&cfg)?;
    let r = rec.report.mean;
    pass_if(r >= 0.90, format!("EGM channel 0 only: mean test Pearson {r:.4} ({})", describe(&spec)))
}

fn mac_regularisation(runs: &Runs) -> Outcome {
    let mut macs = Vec::new();
    for lambda in [0.0, 1.0, 10.0] {
        let mut cfg = runs.base();
        cfg.dns.lambda = lambda;
        macs.push(runs.network(&cfg)?.macs());
    }
    let mut cfg = runs.base();
    cfg.dns.lambda = 1e3;
    let heavy = runs.network(&cfg)?;
    let skips = heavy.blocks().iter().filter(|b| **b == BlockKind::Skip).count();
    let ok = macs.windows(2).all(|w| w[1] <= w[0]) && skips == NUM_BLOCKS;
    pass_if(
        ok,
        format!("MACs at lambda 0/1/10: {macs:?}; lambda 1e3: {skips}/{NUM_BLOCKS} skip after {SEARCH_STEPS} steps"),
    )
}

/// Both runs start from lambda 0, so the unconstrained network is deep and
/// only the depth check can shrink it.
fn depth_limit(runs: &Runs) -> Outcome {
    let mut free_cfg = runs.base();
    free_cfg.dns.lambda = 0.0;
    let (free_spec, free) = runs.trained(&free_cfg)?;
    let mut cfg = free_cfg.clone();
    cfg.dns.depth_limit = Some(15);
    cfg.dns.check_interval = 100;
    cfg.dns.max_steps = 2000;
    let (spec, rec) = runs.trained(&cfg)?;
    let paths = RunPaths::new(&cfg).map_err(|e| e.to_string())?;
    let search: SearchRecord =
        toml::from_str(&std::fs::read_to_string(paths.search_record()).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
    let gap = (rec.report.mean - free.report.mean).abs();
    let ok = search.depth_ok && spec.depth() <= 15 && gap <= 0.02;
    pass_if(
        ok,
        format!(
            "limited: {} conv layers after {} steps and {} lambda doublings, r {:.4}; \
             unconstrained: {} conv layers, r {:.4}; gap {gap:.4}",
            spec.depth(),
            search.steps,
            search.lambda_doublings,
            rec.report.mean,
            free_spec.depth(),
            free.report.mean
        ),
    )
}

fn das_optimality() -> Outcome {
    let layers = common::toy_layers();
    let platform = Platform::default();
    let space = common::toy_space();
    let opt = brute_force(&layers, &platform, &space, Objective::Startup).map_err(|e| e.to_string())?;
    let (mut close, mut beats) = (0, 0);
    let mut ratios = Vec::new();
    for seed in 0..10u64 {
        let cfg = DasConfig { objective: Objective::Startup, steps: 1000, ..Default::default() };
        let mut state = DasState::new(space.clone(), cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let das = run_das(&mut state, &layers, &platform, &mut rng).map_err(|e| e.to_string())?;
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let rand =
            random_search(&layers, &platform, &space, Objective::Startup, 1000, &mut rng).map_err(|e| e.to_string())?;
        close += (das.chosen.cost <= 1.05 * opt.cost) as usize;
        beats += (das.chosen.cost < rand.cost) as usize;
        ratios.push(format!("{:.3}", das.chosen.cost / opt.cost));
    }
    pass_if(
        close >= 9 && beats >= 8,
        format!(
            "{} designs, optimum {} cycles; within 5% in {close}/10, beats random search in {beats}/10; DAS/optimum {ratios:?}",
            space.size(),
            opt.cost
        ),
    )
}

fn random_layer(rng: &mut ChaCha8Rng, i: usize) -> LayerDims {
    let size = *[1, 2, 4, 8].choose(rng).unwrap();
    let k = *[1, 3].choose(rng).unwrap();
    if rng.random_bool(0.2) {
        return LayerDims::depthwise(format!("dw{i}"), *[2, 4, 8].choose(rng).unwrap(), size, k);
    }
    let c = *[1, 2, 4, 8, 16].choose(rng).unwrap();
    let m = *[1, 2, 4, 8, 16].choose(rng).unwrap();
    LayerDims { stride: *[1, 2].choose(rng).unwrap(), ..LayerDims::conv(format!("c{i}"), c, m, size, k, 1) }
}

fn random_mapping(rng: &mut ChaCha8Rng, layer: &LayerDims, noc: Noc) -> Mapping {
    let dims = layer.as_array();
    let mut tile_gb = [0; 6];
    let mut tile_pe = [0; 6];
    for d in Dim::ALL {
        let spatial = spatial_dims(noc).contains(&d);
        let opts: Vec<(usize, usize)> =
            enumerate_tilings(dims[d.index()]).into_iter().filter(|&(p, _)| spatial || p == 1).collect();
        (tile_pe[d.index()], tile_gb[d.index()]) = *opts.choose(rng).unwrap();
    }
    let (mut dram, mut gb) = (Dim::ALL, Dim::ALL);
    dram.shuffle(rng);
    gb.shuffle(rng);
    Mapping { loop_order_dram: dram, loop_order_gb: gb, tile_gb, tile_pe }
}

fn cost_invariants() -> Outcome {
    let platform = Platform { gb_capacity: 4096, ..Platform::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (mut checked, mut drawn, mut bad) = (0, 0, Vec::new());
    while checked < 1000 {
        drawn += 1;
        let layers: Vec<LayerDims> = (0..rng.random_range(1..=4)).map(|i| random_layer(&mut rng, i)).collect();
        let noc = *Noc::ALL.choose(&mut rng).unwrap();
        let mappings: Vec<Mapping> = layers.iter().map(|l| random_mapping(&mut rng, l, noc)).collect();
        let need = mappings.iter().map(Mapping::pes).max().unwrap();
        let max_pes = rng.random_range(need..=platform.pe_limit.max(need));
        let assignment = layers.iter().map(|_| rng.random_range(0..NUM_SUB_ACCELERATORS)).collect();
        let design = AcceleratorDesign { noc, max_pes, assignment, mappings };
        let r = estimate_network(&layers, &design, &platform).map_err(|e| e.to_string())?;
        if !r.feasible {
            continue;
        }
        checked += 1;
        for (l, c) in layers.iter().zip(&r.layers) {
            if (c.total_cycles as u128) * (max_pes as u128) < count_macs(l) as u128 {
                bad.push(format!("case {checked}: {} cycles < MACs/max_pes", c.total_cycles));
            }
        }
        let product = r.fps * r.max_stage_cycles as f64;
        if r.fps != platform.freq_hz / r.max_stage_cycles as f64
            || (product - platform.freq_hz).abs() > platform.freq_hz * f64::EPSILON
        {
            bad.push(format!("case {checked}: fps x max stage = {product}"));
        }
        for (dram, gb) in [(2.0, 1.0), (1.0, 2.0), (2.0, 2.0), (1.5, 1.0)] {
            let faster = Platform { dram_bw: platform.dram_bw * dram, gb_bw: platform.gb_bw * gb, ..platform.clone() };
            let f = estimate_network(&layers, &design, &faster).map_err(|e| e.to_string())?;
            let mono = f.layers.iter().zip(&r.layers).all(|(a, b)| a.total_cycles <= b.total_cycles)
                && f.total_cycles <= r.total_cycles
                && f.max_stage_cycles <= r.max_stage_cycles
                && f.fps >= r.fps;
            if !mono {
                bad.push(format!("case {checked}: bandwidth x({dram}, {gb}) increased cycles"));
            }
        }
    }
    pass_if(
        bad.is_empty(),
        format!("{checked} feasible designs ({drawn} drawn); violations: {:?}", &bad[..bad.len().min(3)]),
    )
}

fn objective_tradeoff(runs: &Runs) -> Outcome {
    let mut fps_cfg = runs.base();
    fps_cfg.das.objective = Objective::Fps;
    let mut start_cfg = runs.base();
    start_cfg.das.objective = Objective::Startup;
    let f = runs.accelerator(&fps_cfg)?;
    let s = runs.accelerator(&start_cfg)?;
    pass_if(
        s.startup_ms <= f.startup_ms && f.fps >= s.fps,
        format!(
            "fps mode: {:.1} FPS, start-up {:.4} ms; start-up mode: {:.1} FPS, start-up {:.4} ms",
            f.fps, f.startup_ms, s.fps, s.startup_ms
        ),
    )
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = RunConfig::from_toml(
        "seed = 3\n[data]\nbeats = 40\n[dns]\nsteps = 10\nbatch_size = 4\nwidth = 8\n[train]\nepochs = 2\nbatch_size = 4\n[das]\nsteps = 200\n",
    )
    .map_err(|e| e.to_string())?;
    let cfg_path = tmp.path().join("run.toml");
    std::fs::write(&cfg_path, cfg.to_toml()).map_err(|e| e.to_string())?;
    let run = |out: &Path| -> Result<Vec<u8>, String> {
        let status = Command::new(env!("CARGO_BIN_EXE_ecg-cosearch"))
            .env("RUST_LOG", "warn")
            .args(["all", "--config"])
            .arg(&cfg_path)
            .arg("--out")
            .arg(out)
            .status()
            .map_err(|e| e.to_string())?;
        if !status.success() {
            return Err(format!("`all` exited with {status}"));
        }
        let summary =
            RunPaths::new(&RunConfig { out: out.to_path_buf(), ..cfg.clone() }).map_err(|e| e.to_string())?.summary();
        std::fs::read(summary).map_err(|e| e.to_string())
    };
    let a = run(&tmp.path().join("a"))?;
    let b = run(&tmp.path().join("b"))?;
    pass_if(
        a == b && !a.is_empty(),
        format!("two `all` runs: summary CSVs of {} and {} bytes, identical: {}", a.len(), b.len(), a == b),
    )
}

fn main() {
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let runs = Runs::new();
    let criteria: [(&str, &dyn Fn() -> Outcome); 10] = [
        ("gradient suite", &gradients),
        ("signal suite", &signals),
        ("reconstruction, all EGM channels", &|| reconstruction(&runs)),
        ("reconstruction, EGM channel 0", &|| single_channel(&runs)),
        ("MAC regularisation", &|| mac_regularisation(&runs)),
        ("depth limit", &|| depth_limit(&runs)),
        ("accelerator search optimality", &das_optimality),
        ("cost-model invariants", &cost_invariants),
        ("objective trade-off", &|| objective_tradeoff(&runs)),
        ("determinism", &determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let n = i + 1;
        if !selected.is_empty() && !selected.contains(&n) {
            continue;
        }
        let t = Instant::now();
        let outcome = check();
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(d) => println!("criterion {n:2} PASS  {name}: {d} [{secs:.1} s]"),
            Err(d) => {
                failed += 1;
                println!("criterion {n:2} FAIL  {name}: {d} [{secs:.1} s]");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
