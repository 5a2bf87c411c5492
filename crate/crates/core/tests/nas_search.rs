use ecg_cosearch::autodiff::{softmax, Tape, Tensor4};
use ecg_cosearch::datasynth::{gen_dataset, PatientModel};
use ecg_cosearch::nas::*;
use ecg_cosearch::sigproc::{BeatRecord, Dataset, StftConfig, ECG_CHANNELS, EGM_CHANNELS};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const ALL_EGM: [usize; EGM_CHANNELS] = [0, 1, 2, 3, 4];

fn small_cfg() -> DnsConfig {
    DnsConfig { width: 8, batch_size: 4, ..DnsConfig::default() }
}

fn random_alpha(rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    (0..NUM_BLOCKS).map(|_| (0..NUM_OPS).map(|_| rng.random_range(-2.0..2.0)).collect()).collect()
}

fn random_input(rng: &mut ChaCha8Rng, n: usize) -> Tensor4 {
    Tensor4::randn([n, 2 * EGM_CHANNELS, GRID, GRID], 1.0, rng)
}

fn synthetic_samples(n: usize) -> Samples {
    let ds = gen_dataset(&PatientModel::default_for_seed(3).unwrap(), n).unwrap();
    Samples::from_beats(ds.beats.iter(), &StftConfig::default(), &ALL_EGM).unwrap()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn one_hot_supernet_equals_derived_network() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut state = SupernetState::new(2 * EGM_CHANNELS, &small_cfg(), 7);
    state.set_alpha_rows(&random_alpha(&mut rng)).unwrap();
    let spec = derive_network(&state);
    let one_hot: Vec<Vec<f64>> =
        spec.blocks().iter().map(|k| (0..NUM_OPS).map(|i| if i == k.index() { 1.0 } else { 0.0 }).collect()).collect();
    let x = random_input(&mut rng, 2);
    let pass = supernet_forward(&state, &x, &MixWeights::Fixed(one_hot), &mut rng).unwrap();
    let params = transfer_params(&spec, &state.weights).unwrap();
    let direct = predict(&spec, &params, &x, 8).unwrap();
    assert!(max_abs_diff(pass.tape.value(pass.output).data(), direct.data()) < 1e-10);
}

#[test]
fn uniform_mix_of_zeroed_candidates_scales_the_skip_path() {
    // With zero candidate weights, standard convs output 0 and inverted
    // residuals output their input, so each uniform block is 7/9 of identity.
    // Biases start at zero, so the whole network is positively homogeneous.
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut state = SupernetState::new(2 * EGM_CHANNELS, &small_cfg(), 8);
    let block_ids: Vec<_> = state.weights.ids().filter(|&id| state.weights.name(id).starts_with('b')).collect();
    assert!(!block_ids.is_empty());
    for id in block_ids {
        state.weights.get_mut(id).data_mut().iter_mut().for_each(|v| *v = 0.0);
    }
    let x = random_input(&mut rng, 2);
    let uniform = vec![vec![1.0 / NUM_OPS as f64; NUM_OPS]; NUM_BLOCKS];
    let pass = supernet_forward(&state, &x, &MixWeights::Fixed(uniform), &mut rng).unwrap();
    let skip = NetworkSpec::backbone(2 * EGM_CHANNELS, 8, &[BlockKind::Skip; NUM_BLOCKS]);
    let base = predict(&skip, &transfer_params(&skip, &state.weights).unwrap(), &x, 8).unwrap();
    let factor = (7.0f64 / 9.0).powi(NUM_BLOCKS as i32);
    let expect: Vec<f64> = base.data().iter().map(|v| v * factor).collect();
    let got = pass.tape.value(pass.output).data();
    let peak = expect.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    assert!(peak > 0.0);
    assert!(max_abs_diff(got, &expect) < 1e-10 * peak);
}

#[test]
fn fixed_weights_are_reported_back() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let state = SupernetState::new(2 * EGM_CHANNELS, &small_cfg(), 9);
    let ws: Vec<Vec<f64>> = random_alpha(&mut rng).iter().map(|r| softmax(r)).collect();
    let pass = supernet_forward(&state, &random_input(&mut rng, 1), &MixWeights::Fixed(ws.clone()), &mut rng).unwrap();
    assert_eq!(pass.weights, ws);
}

#[test]
fn supernet_rejects_wrong_input_shape() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let state = SupernetState::new(2 * EGM_CHANNELS, &small_cfg(), 0);
    let x = Tensor4::zeros([1, 2, GRID, GRID]);
    assert!(supernet_forward(&state, &x, &MixWeights::Sample, &mut rng).is_err());
}

#[test]
fn expected_macs_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut state = SupernetState::new(2 * EGM_CHANNELS, &DnsConfig::default(), 0);
    let alpha = random_alpha(&mut rng);
    state.set_alpha_rows(&alpha).unwrap();
    let mut tape = Tape::new();
    let vars: Vec<_> = state.alpha.tensors().iter().map(|t| tape.leaf(t.clone())).collect();
    let macs = expected_macs_on_tape(&mut tape, &state, &vars).unwrap();
    assert!((tape.value(macs).item() - expected_macs(&state) * 1e-9).abs() < 1e-12);
    let grads = tape.backward(macs).unwrap();
    let h = 1e-5;
    for b in [0, 6, 13] {
        for i in 0..NUM_OPS {
            let mut plus = alpha.clone();
            plus[b][i] += h;
            let mut minus = alpha.clone();
            minus[b][i] -= h;
            state.set_alpha_rows(&plus).unwrap();
            let fp = expected_macs(&state) * 1e-9;
            state.set_alpha_rows(&minus).unwrap();
            let fm = expected_macs(&state) * 1e-9;
            let numeric = (fp - fm) / (2.0 * h);
            let analytic = grads.get(vars[b]).unwrap().data()[i];
            assert!((numeric - analytic).abs() < 1e-8, "block {b} op {i}: {numeric} vs {analytic}");
        }
    }
}

#[test]
fn expected_macs_endpoints() {
    let mut state = SupernetState::new(2 * EGM_CHANNELS, &DnsConfig::default(), 0);
    let mean_op = state.op_macs().iter().sum::<f64>() / NUM_OPS as f64;
    let uniform = state.fixed_macs() + NUM_BLOCKS as f64 * mean_op;
    assert!((expected_macs(&state) - uniform).abs() < 1e-9 * uniform);

    let mut skip_row = vec![0.0; NUM_OPS];
    skip_row[BlockKind::Skip.index()] = 1e3;
    state.set_alpha_rows(&vec![skip_row; NUM_BLOCKS]).unwrap();
    let all_skip = NetworkSpec::backbone(2 * EGM_CHANNELS, DEFAULT_WIDTH, &[BlockKind::Skip; NUM_BLOCKS]);
    assert_eq!(expected_macs(&state), state.fixed_macs());
    assert_eq!(network_macs(&all_skip) as f64, state.fixed_macs());
}

#[test]
fn op_macs_match_counted_block_layers() {
    let state = SupernetState::new(2 * EGM_CHANNELS, &DnsConfig::default(), 0);
    for kind in BlockKind::ALL {
        let counted: u64 = kind.conv_layers("b", DEFAULT_WIDTH, block_grid()).iter().map(count_macs).sum();
        assert_eq!(state.op_macs()[kind.index()], counted as f64, "{}", kind.name());
    }
}

#[test]
fn expected_macs_is_shift_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut state = SupernetState::new(2 * EGM_CHANNELS, &DnsConfig::default(), 0);
    let alpha = random_alpha(&mut rng);
    state.set_alpha_rows(&alpha).unwrap();
    let base = expected_macs(&state);
    let shifted: Vec<Vec<f64>> = alpha.iter().map(|r| r.iter().map(|v| v + 37.5).collect()).collect();
    state.set_alpha_rows(&shifted).unwrap();
    assert!((expected_macs(&state) - base).abs() <= 1e-12 * base);
}

#[test]
fn zero_lambda_step_optimises_reconstruction_only() {
    let samples = synthetic_samples(4);
    let (x, y) = samples.batch(&[0, 1, 2, 3]);
    let mut state = SupernetState::new(2 * EGM_CHANNELS, &DnsConfig { lambda: 0.0, ..small_cfg() }, 1);
    let stats = dns_step(&mut state, &x, &y, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert_eq!(stats.total, stats.rec_loss);
    assert!(stats.mac_loss > 0.0);
}

#[test]
fn lambda_changes_the_total_but_not_the_reconstruction_term() {
    let samples = synthetic_samples(4);
    let (x, y) = samples.batch(&[0, 1, 2, 3]);
    let mut a = SupernetState::new(2 * EGM_CHANNELS, &DnsConfig { lambda: 0.0, ..small_cfg() }, 1);
    let mut b = SupernetState::new(2 * EGM_CHANNELS, &DnsConfig { lambda: 5.0, ..small_cfg() }, 1);
    let sa = dns_step(&mut a, &x, &y, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let sb = dns_step(&mut b, &x, &y, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert_eq!(sa.rec_loss, sb.rec_loss);
    assert!((sb.total - (sb.rec_loss + 5.0 * sb.mac_loss)).abs() < 1e-12);
    assert!(expected_macs(&b) < expected_macs(&a));
}

#[test]
fn search_loss_decreases_on_a_fixed_batch() {
    let samples = synthetic_samples(4);
    let (x, y) = samples.batch(&[0, 1, 2, 3]);
    let mut state = SupernetState::new(2 * EGM_CHANNELS, &DnsConfig { lr: 3e-3, ..small_cfg() }, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let losses: Vec<f64> = (0..100).map(|_| dns_step(&mut state, &x, &y, &mut rng).unwrap().rec_loss).collect();
    let head = losses[..10].iter().sum::<f64>() / 10.0;
    let tail = losses[90..].iter().sum::<f64>() / 10.0;
    assert!(tail < head - 0.1, "first {head}, last {tail}");
}

#[test]
fn batch_of_sixteen_runs() {
    let samples = synthetic_samples(16);
    let idx: Vec<usize> = (0..16).collect();
    let (x, y) = samples.batch(&idx);
    let mut state = SupernetState::new(2 * EGM_CHANNELS, &small_cfg(), 3);
    let stats = dns_step(&mut state, &x, &y, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    assert!(stats.total.is_finite());
}

#[test]
fn zero_step_search_derives_the_initial_argmax() {
    let samples = synthetic_samples(4);
    let cfg = DnsConfig { steps: 0, ..small_cfg() };
    let mut state = SupernetState::new(2 * EGM_CHANNELS, &cfg, 0);
    let out = search(&mut state, &samples, &cfg, &mut ChaCha8Rng::seed_from_u64(0), |_, _, _| {}).unwrap();
    assert_eq!(out.steps, 0);
    assert_eq!(out.spec.blocks(), vec![BlockKind::from_index(0).unwrap(); NUM_BLOCKS]);
    assert!(state.alpha_rows().iter().flatten().all(|&v| v == 0.0));
}

#[test]
fn search_without_depth_limit_runs_exactly_the_requested_steps() {
    let samples = synthetic_samples(8);
    let cfg = DnsConfig { steps: 3, check_interval: 1, ..small_cfg() };
    let mut state = SupernetState::new(2 * EGM_CHANNELS, &cfg, 0);
    let mut seen = Vec::new();
    let out = search(&mut state, &samples, &cfg, &mut ChaCha8Rng::seed_from_u64(0), |s, _, _| seen.push(s)).unwrap();
    assert_eq!(seen, vec![1, 2, 3]);
    assert_eq!((out.steps, out.lambda_doublings, out.lambda), (3, 0, cfg.lambda));
    assert!(out.depth_ok);
    assert_eq!(out.spec, derive_network(&state));
}

#[test]
fn unreachable_depth_limit_doubles_lambda_until_max_steps() {
    // All-skip has 7 conv layers, so a limit of 6 can never be met.
    let samples = synthetic_samples(8);
    let cfg = DnsConfig { lambda: 0.0, steps: 4, check_interval: 2, max_steps: 6, depth_limit: Some(6), ..small_cfg() };
    let mut state = SupernetState::new(2 * EGM_CHANNELS, &cfg, 0);
    let out = search(&mut state, &samples, &cfg, &mut ChaCha8Rng::seed_from_u64(0), |_, _, _| {}).unwrap();
    assert!(!out.depth_ok);
    assert_eq!(out.steps, 6);
    assert_eq!(out.lambda_doublings, 2);
    assert_eq!(out.lambda, 2.0);
    assert_eq!(state.lambda, 2.0);
}

#[test]
fn satisfied_depth_limit_never_doubles() {
    let samples = synthetic_samples(8);
    let cfg = DnsConfig { steps: 2, check_interval: 1, depth_limit: Some(1000), ..small_cfg() };
    let mut state = SupernetState::new(2 * EGM_CHANNELS, &cfg, 0);
    let out = search(&mut state, &samples, &cfg, &mut ChaCha8Rng::seed_from_u64(0), |_, _, _| {}).unwrap();
    assert!(out.depth_ok);
    assert_eq!((out.steps, out.lambda_doublings), (2, 0));
}

#[test]
fn depth_violation_reports_the_depth() {
    let skip = NetworkSpec::backbone(10, 8, &[BlockKind::Skip; NUM_BLOCKS]);
    assert_eq!(skip.depth(), 7);
    assert_eq!(depth_violation(&skip, Some(6)), Some(7));
    assert_eq!(depth_violation(&skip, Some(7)), None);
    assert_eq!(depth_violation(&skip, None), None);
}

#[test]
fn alpha_csv_round_trips_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut state = SupernetState::new(2 * EGM_CHANNELS, &small_cfg(), 0);
    let alpha = random_alpha(&mut rng);
    state.set_alpha_rows(&alpha).unwrap();
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(alpha_header()).unwrap();
    write_alpha_rows(&mut w, 42, &state).unwrap();
    let text = String::from_utf8(w.into_inner().unwrap()).unwrap();
    let mut r = csv::Reader::from_reader(text.as_bytes());
    assert_eq!(r.headers().unwrap().len(), 2 + NUM_OPS);
    let rows: Vec<csv::StringRecord> = r.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), NUM_BLOCKS);
    for (b, row) in rows.iter().enumerate() {
        assert_eq!(&row[0], "42");
        assert_eq!(row[1].parse::<usize>().unwrap(), b);
        let vals: Vec<f64> = row.iter().skip(2).map(|v| v.parse().unwrap()).collect();
        assert_eq!(vals, alpha[b]);
    }
}

#[test]
fn set_alpha_rows_rejects_bad_shapes() {
    let mut state = SupernetState::new(10, &small_cfg(), 0);
    assert!(state.set_alpha_rows(&vec![vec![0.0; NUM_OPS]; NUM_BLOCKS - 1]).is_err());
    assert!(state.set_alpha_rows(&vec![vec![0.0; NUM_OPS - 1]; NUM_BLOCKS]).is_err());
}

/// Beats whose ECG leads copy EGM channels (lead m = channel m mod 5).
fn identity_dataset(n: usize) -> Dataset {
    let ds = gen_dataset(&PatientModel::default_for_seed(5).unwrap(), n).unwrap();
    let beats = ds
        .beats
        .iter()
        .map(|b| {
            let ecg: Vec<f64> = (0..ECG_CHANNELS).flat_map(|m| b.egm_channel(m % EGM_CHANNELS).to_vec()).collect();
            BeatRecord::new(b.beat_id, b.patient_id, b.len, b.egm.clone(), ecg).unwrap()
        })
        .collect();
    Dataset::with_random_split(beats, 5).unwrap()
}

#[test]
fn zero_epochs_returns_the_untrained_network() {
    let ds = identity_dataset(8);
    let spec = NetworkSpec::backbone(2 * EGM_CHANNELS, 8, &[BlockKind::Skip; NUM_BLOCKS]);
    let cfg = TrainConfig { epochs: 0, ..TrainConfig::default() };
    let a = train_network(&spec, &ds, &StftConfig::default(), &ALL_EGM, &cfg, |_, _| {}).unwrap();
    let b = train_network(&spec, &ds, &StftConfig::default(), &ALL_EGM, &cfg, |_, _| {}).unwrap();
    assert!(a.epoch_losses.is_empty());
    assert_eq!(a.report.beats, 4);
    assert_eq!(a.params.tensors(), b.params.tensors());
    assert!(a.report.mean.abs() < 0.5, "untrained r = {}", a.report.mean);
}

#[test]
fn identity_task_is_learned() {
    let ds = identity_dataset(200);
    let spec = NetworkSpec::backbone(2 * EGM_CHANNELS, 16, &[BlockKind::Skip; NUM_BLOCKS]);
    let cfg = TrainConfig { epochs: 20, batch_size: 4, lr: 3e-3, weight_decay: 0.0, seed: 1 };
    let mut losses = Vec::new();
    let out = train_network(&spec, &ds, &StftConfig::default(), &ALL_EGM, &cfg, |_, l| losses.push(l)).unwrap();
    assert_eq!(losses.len(), 20);
    assert!(out.report.mean > 0.99, "identity r = {}, losses {losses:?}", out.report.mean);
}

#[test]
fn training_rejects_mismatched_inputs() {
    let ds = identity_dataset(4);
    let spec = NetworkSpec::backbone(2, 8, &[BlockKind::Skip; NUM_BLOCKS]);
    let cfg = TrainConfig { epochs: 1, ..TrainConfig::default() };
    assert!(train_network(&spec, &ds, &StftConfig::default(), &ALL_EGM, &cfg, |_, _| {}).is_err());
}
