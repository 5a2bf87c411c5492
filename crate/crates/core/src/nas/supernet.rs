use std::io::Write;

use log::info;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::data::{BatchSampler, Samples};
use super::net::{block_forward, block_prefix, forward_with, init_store, param_shapes, Bound};
use super::space::{block_grid, fixed_macs, BlockKind, NetworkSpec, NUM_BLOCKS, NUM_OPS};
use crate::autodiff::{argmax, softmax, AdamState, ParamStore, Tape, Tensor4, Var};
use crate::{Error, Result};

/// Hyper-parameters of the block search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DnsConfig {
    /// Weight of the expected-MAC term, in giga-MACs.
    pub lambda: f64,
    pub tau: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub arch_lr: f64,
    pub arch_weight_decay: f64,
    pub width: usize,
    pub depth_limit: Option<usize>,
    /// Steps between depth checks when `depth_limit` is set.
    pub check_interval: usize,
    /// Hard cap on total steps while the depth limit is still violated.
    pub max_steps: usize,
}

impl Default for DnsConfig {
    fn default() -> Self {
        DnsConfig {
            lambda: 1.0,
            tau: 1.0,
            steps: 2000,
            batch_size: 16,
            lr: 1e-3,
            weight_decay: 1e-3,
            arch_lr: 1e-3,
            arch_weight_decay: 0.0,
            width: super::space::DEFAULT_WIDTH,
            depth_limit: None,
            check_interval: 500,
            max_steps: 20_000,
        }
    }
}

/// Supernet weights, architecture logits and optimiser state.
#[derive(Debug, Clone)]
pub struct SupernetState {
    pub weights: ParamStore,
    /// One `(1, 9, 1, 1)` logit row per searchable block.
    pub alpha: ParamStore,
    pub lambda: f64,
    pub tau: f64,
    pub input_channels: usize,
    pub width: usize,
    adam_w: AdamState,
    adam_a: AdamState,
    op_macs: Vec<f64>,
    fixed_macs: f64,
}

/// How block mixing weights are obtained for a forward pass.
#[derive(Debug, Clone)]
pub enum MixWeights {
    /// A fresh Gumbel-Softmax draw per block, shared by the batch.
    Sample,
    /// Given weights, held constant.
    Fixed(Vec<Vec<f64>>),
}

/// Result of a supernet forward pass; the tape is kept for backward.
pub struct SupernetPass {
    pub tape: Tape,
    pub output: Var,
    pub weights: Vec<Vec<f64>>,
    weight_vars: Vec<Var>,
    alpha_vars: Vec<Var>,
}

/// Losses of one search step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    pub rec_loss: f64,
    /// Expected MACs in giga-MACs.
    pub mac_loss: f64,
    pub total: f64,
    pub degenerate: bool,
}

impl SupernetState {
    /// Supernet with every candidate op initialised and uniform logits.
    pub fn new(input_channels: usize, cfg: &DnsConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let template = NetworkSpec::backbone(input_channels, cfg.width, &[BlockKind::Skip; NUM_BLOCKS]);
        let weights = init_store(&param_shapes(&template, true), &mut rng);
        let mut alpha = ParamStore::new();
        for b in 0..NUM_BLOCKS {
            alpha.insert(format!("alpha.b{b}"), Tensor4::zeros([1, NUM_OPS, 1, 1]));
        }
        let op_macs = BlockKind::ALL.iter().map(|k| k.macs(cfg.width, block_grid()) as f64).collect();
        SupernetState {
            weights,
            alpha,
            lambda: cfg.lambda,
            tau: cfg.tau,
            input_channels,
            width: cfg.width,
            adam_w: AdamState::new(cfg.lr, cfg.weight_decay),
            adam_a: AdamState::new(cfg.arch_lr, cfg.arch_weight_decay),
            op_macs,
            fixed_macs: fixed_macs(input_channels, cfg.width) as f64,
        }
    }

    pub fn alpha_rows(&self) -> Vec<Vec<f64>> {
        self.alpha.tensors().iter().map(|t| t.data().to_vec()).collect()
    }

    pub fn set_alpha_rows(&mut self, rows: &[Vec<f64>]) -> Result<()> {
        if rows.len() != NUM_BLOCKS || rows.iter().any(|r| r.len() != NUM_OPS) {
            return Err(Error::Shape(format!("alpha must be {NUM_BLOCKS} rows of {NUM_OPS} logits")));
        }
        for (t, r) in self.alpha.tensors_mut().iter_mut().zip(rows) {
            t.data_mut().copy_from_slice(r);
        }
        Ok(())
    }

    /// MACs of each candidate op inside one block, in logit order.
    pub fn op_macs(&self) -> &[f64] {
        &self.op_macs
    }

    /// MACs outside the searchable blocks.
    pub fn fixed_macs(&self) -> f64 {
        self.fixed_macs
    }

    fn template(&self) -> NetworkSpec {
        NetworkSpec::backbone(self.input_channels, self.width, &[BlockKind::Skip; NUM_BLOCKS])
    }
}

/// `sum_b softmax(alpha_b) . macs + fixed`, in MACs.
pub fn expected_macs(state: &SupernetState) -> f64 {
    state
        .alpha_rows()
        .iter()
        .map(|row| softmax(row).iter().zip(&state.op_macs).map(|(p, m)| p * m).sum::<f64>())
        .sum::<f64>()
        + state.fixed_macs
}

/// Differentiable expected MACs in giga-MACs, on `tape`.
pub fn expected_macs_on_tape(tape: &mut Tape, state: &SupernetState, alpha_vars: &[Var]) -> Result<Var> {
    let giga: Vec<f64> = state.op_macs.iter().map(|m| m * 1e-9).collect();
    let mut acc = tape.constant(Tensor4::scalar(state.fixed_macs * 1e-9));
    for &a in alpha_vars {
        let p = tape.softmax(a)?;
        let d = tape.dot_const(p, &giga)?;
        acc = tape.add(acc, d)?;
    }
    Ok(acc)
}

/// Forward a `(batch, C, 16, 16)` input; each block outputs the weighted
/// sum of all nine candidate operations.
pub fn supernet_forward<R: Rng + ?Sized>(
    state: &SupernetState,
    x: &Tensor4,
    mix: &MixWeights,
    rng: &mut R,
) -> Result<SupernetPass> {
    let [_, c, h, w] = x.dims();
    if c != state.input_channels || h != super::space::GRID || w != super::space::GRID {
        return Err(Error::Shape(format!("supernet expects {}x16x16 inputs, got {c}x{h}x{w}", state.input_channels)));
    }
    if let MixWeights::Fixed(ws) = mix {
        if ws.len() != NUM_BLOCKS || ws.iter().any(|r| r.len() != NUM_OPS) {
            return Err(Error::Shape(format!("fixed mixing weights must be {NUM_BLOCKS} x {NUM_OPS}")));
        }
    }
    let mut tape = Tape::new();
    let (p, weight_vars) = Bound::attach(&state.weights, &mut tape, true);
    let alpha_vars: Vec<Var> = state.alpha.tensors().iter().map(|t| tape.leaf(t.clone())).collect();
    let xv = tape.constant(x.clone());
    let template = state.template();
    let mut weights = Vec::with_capacity(NUM_BLOCKS);
    let out = forward_with(&mut tape, &p, &template, xv, |tape, bi, layer, h| {
        let mix_var = match mix {
            MixWeights::Sample => tape.gumbel_softmax(alpha_vars[bi], state.tau, rng)?,
            MixWeights::Fixed(ws) => tape.constant(Tensor4::vector(ws[bi].clone())),
        };
        weights.push(tape.value(mix_var).data().to_vec());
        let mut outs = Vec::with_capacity(NUM_OPS);
        for kind in BlockKind::ALL {
            outs.push(block_forward(tape, &p, &block_prefix(layer, kind), kind, h)?);
        }
        tape.weighted_sum(&outs, mix_var)
    })?;
    Ok(SupernetPass { tape, output: out, weights, weight_vars, alpha_vars })
}

/// One joint update of weights and logits on `pred_loss + lambda * macs`.
pub fn dns_step<R: Rng + ?Sized>(
    state: &mut SupernetState,
    x: &Tensor4,
    y: &Tensor4,
    rng: &mut R,
) -> Result<StepStats> {
    let SupernetPass { mut tape, output, weight_vars, alpha_vars, .. } =
        supernet_forward(state, x, &MixWeights::Sample, rng)?;
    let (rec, degenerate) = tape.pearson_loss(output, y)?;
    let macs = expected_macs_on_tape(&mut tape, state, &alpha_vars)?;
    let (rec_loss, mac_loss) = (tape.value(rec).item(), tape.value(macs).item());
    let loss = if state.lambda != 0.0 {
        let scaled = tape.scale(macs, state.lambda);
        tape.add(rec, scaled)?
    } else {
        rec
    };
    let total = tape.value(loss).item();
    if !total.is_finite() {
        return Err(Error::Divergence(format!("search loss is {total} (reconstruction {rec_loss}, MACs {mac_loss})")));
    }
    let mut grads = tape.backward(loss)?;
    let gw: Vec<Tensor4> = weight_vars
        .iter()
        .zip(state.weights.tensors())
        .map(|(&v, t)| grads.take(v).unwrap_or_else(|| Tensor4::zeros(t.dims())))
        .collect();
    let ga: Vec<Tensor4> = alpha_vars
        .iter()
        .zip(state.alpha.tensors())
        .map(|(&v, t)| grads.take(v).unwrap_or_else(|| Tensor4::zeros(t.dims())))
        .collect();
    if ga.iter().chain(&gw).any(|g| !g.is_finite()) {
        return Err(Error::Divergence("non-finite gradient in search step".into()));
    }
    state.adam_w.update(state.weights.tensors_mut(), &gw)?;
    state.adam_a.update(state.alpha.tensors_mut(), &ga)?;
    Ok(StepStats { rec_loss, mac_loss, total, degenerate })
}

/// Per-block argmax of the logits (lowest index on ties).
pub fn derive_network(state: &SupernetState) -> NetworkSpec {
    let blocks: Vec<BlockKind> =
        state.alpha_rows().iter().map(|row| BlockKind::from_index(argmax(row)).unwrap()).collect();
    NetworkSpec::backbone(state.input_channels, state.width, &blocks)
}

/// Whether `spec` exceeds `limit` conv layers.
pub fn depth_violation(spec: &NetworkSpec, limit: Option<usize>) -> Option<usize> {
    let depth = spec.depth();
    limit.filter(|&l| depth > l).map(|_| depth)
}

/// Outcome of [`search`].
#[derive(Debug, Clone)]
pub struct SearchOutcome {
    pub spec: NetworkSpec,
    pub steps: usize,
    pub lambda: f64,
    pub lambda_doublings: usize,
    /// False when `max_steps` ran out with the depth limit still violated.
    pub depth_ok: bool,
}

/// Run the block search on `train` for `cfg.steps` steps.
///
/// With a depth limit, the derived network is checked every
/// `cfg.check_interval` steps and at the end; on a violation lambda is
/// doubled (set to 1 if it was 0) and the search continues, past
/// `cfg.steps` if necessary, up to `cfg.max_steps`.
pub fn search<R, F>(
    state: &mut SupernetState,
    train: &Samples,
    cfg: &DnsConfig,
    rng: &mut R,
    mut on_step: F,
) -> Result<SearchOutcome>
where
    R: Rng + ?Sized,
    F: FnMut(usize, &StepStats, &SupernetState),
{
    let mut sampler = BatchSampler::new(train.len(), cfg.batch_size);
    let interval = cfg.check_interval.max(1);
    let mut doublings = 0;
    let mut step = 0;
    if cfg.steps == 0 {
        let spec = derive_network(state);
        let depth_ok = depth_violation(&spec, cfg.depth_limit).is_none();
        return Ok(SearchOutcome { spec, steps: 0, lambda: state.lambda, lambda_doublings: 0, depth_ok });
    }
    loop {
        let idx = sampler.next_indices(rng);
        let (x, y) = train.batch(&idx);
        let stats = dns_step(state, &x, &y, rng)?;
        step += 1;
        on_step(step, &stats, state);
        let at_check = step % interval == 0 || step == cfg.steps;
        if !at_check {
            continue;
        }
        let spec = derive_network(state);
        match depth_violation(&spec, cfg.depth_limit) {
            Some(depth) if step < cfg.max_steps => {
                state.lambda = if state.lambda == 0.0 { 1.0 } else { state.lambda * 2.0 };
                doublings += 1;
                info!("step {step}: derived depth {depth} over limit, lambda -> {}", state.lambda);
            }
            Some(_) => {
                return Ok(SearchOutcome {
                    spec,
                    steps: step,
                    lambda: state.lambda,
                    lambda_doublings: doublings,
                    depth_ok: false,
                })
            }
            None if step >= cfg.steps => {
                return Ok(SearchOutcome {
                    spec,
                    steps: step,
                    lambda: state.lambda,
                    lambda_doublings: doublings,
                    depth_ok: true,
                })
            }
            None => {}
        }
    }
}

/// Write one CSV row per block: `step,block,logit_0..logit_8`.
pub fn write_alpha_rows<W: Write>(out: &mut csv::Writer<W>, step: usize, state: &SupernetState) -> Result<()> {
    for (b, row) in state.alpha_rows().iter().enumerate() {
        let mut rec = vec![step.to_string(), b.to_string()];
        rec.extend(row.iter().map(|v| format!("{v:.17e}")));
        out.write_record(&rec).map_err(|e| Error::Io(e.into()))?;
    }
    Ok(())
}

/// Header matching [`write_alpha_rows`].
pub fn alpha_header() -> Vec<String> {
    let mut h = vec!["step".to_string(), "block".to_string()];
    h.extend(BlockKind::ALL.iter().map(|k| k.name().to_string()));
    h
}
