use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::space::{ParamKind, ParamSpec, SearchSpace};
use crate::autodiff::{argmax, gumbel_noise, softmax_tempered, AdamState};
use crate::hwmodel::{estimate_network, AcceleratorDesign, CostReport, Platform};
use crate::nas::{count_macs, LayerDims};
use crate::{Error, Result};

/// What the search minimises.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    /// Slowest pipeline stage, i.e. maximise frames per second.
    Fps,
    /// Sum of all layer cycles, i.e. minimise start-up latency.
    Startup,
}

/// How the selected Gumbel-Softmax weights combine in the surrogate loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Weighting {
    Sum,
    Product,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DasConfig {
    pub objective: Objective,
    pub steps: usize,
    pub lr: f64,
    pub tau: f64,
    pub weighting: Weighting,
    /// Decay of the running-mean cost subtracted from each sample; 0 disables it.
    pub baseline_decay: f64,
    /// Use `ln(cost / penalty)` in place of `cost / penalty`.
    pub log_cost: bool,
    /// Centred costs are compressed to `sign(a) |a|^p`.
    pub advantage_power: f64,
    /// Designs drawn per step. With more than one, each draw is centred on
    /// the mean of the others in place of the running mean.
    pub samples: usize,
}

impl Default for DasConfig {
    fn default() -> Self {
        DasConfig {
            objective: Objective::Fps,
            steps: 2000,
            lr: 1e-2,
            tau: 1.0,
            weighting: Weighting::Sum,
            baseline_decay: 0.9,
            log_cost: true,
            advantage_power: 0.4,
            samples: 16,
        }
    }
}

impl DasConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && self.tau > 0.0
            && (0.0..1.0).contains(&self.baseline_decay)
            && self.advantage_power > 0.0
            && self.samples >= 1
            && self.lr.is_finite()
            && self.tau.is_finite()
            && self.advantage_power.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::Param(
                "das: lr, tau and advantage_power must be positive, baseline_decay in [0, 1), samples at least 1"
                    .into(),
            ))
        }
    }
}

/// Objective cycles of a report, ignoring feasibility.
pub fn objective_cycles(report: &CostReport, objective: Objective) -> u64 {
    match objective {
        Objective::Fps => report.max_stage_cycles,
        Objective::Startup => report.total_cycles,
    }
}

/// Cost assigned to infeasible designs: ten times the single-PE cycle count
/// of the whole network, which bounds every feasible design's objective.
pub fn infeasible_penalty(layers: &[LayerDims]) -> f64 {
    10.0 * layers.iter().map(count_macs).sum::<u64>() as f64
}

/// A design and its evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluated {
    pub design: AcceleratorDesign,
    pub report: CostReport,
    /// Objective cycles, or the penalty when infeasible.
    pub cost: f64,
}

pub fn evaluate_design(
    layers: &[LayerDims],
    design: AcceleratorDesign,
    platform: &Platform,
    objective: Objective,
) -> Result<Evaluated> {
    let report = estimate_network(layers, &design, platform)?;
    let cost = if report.feasible { objective_cycles(&report, objective) as f64 } else { infeasible_penalty(layers) };
    Ok(Evaluated { design, report, cost })
}

/// A sampled design with the soft weights behind each choice.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignSample {
    pub choices: Vec<usize>,
    /// Gumbel-Softmax weights per parameter; masked options are 0.
    pub weights: Vec<Vec<f64>>,
    pub design: AcceleratorDesign,
}

/// One trace row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub cost: f64,
    pub feasible: bool,
    pub best_so_far: f64,
}

/// Logits over every design parameter plus search bookkeeping.
#[derive(Debug, Clone)]
pub struct DasState {
    pub space: SearchSpace,
    pub gamma: Vec<Vec<f64>>,
    pub cfg: DasConfig,
    params: Vec<ParamSpec>,
    adam: AdamState,
    step: usize,
    baseline: Option<f64>,
    best: Option<(AcceleratorDesign, f64)>,
}

impl DasState {
    pub fn new(space: SearchSpace, cfg: DasConfig) -> Self {
        let params = space.params();
        let gamma = params.iter().map(|p| vec![0.0; p.options]).collect();
        let adam = AdamState::new(cfg.lr, 0.0);
        DasState { space, gamma, cfg, params, adam, step: 0, baseline: None, best: None }
    }

    pub fn params(&self) -> &[ParamSpec] {
        &self.params
    }

    pub fn steps_done(&self) -> usize {
        self.step
    }

    /// Cheapest feasible design sampled so far, with its cost.
    pub fn best_seen(&self) -> Option<(&AcceleratorDesign, f64)> {
        self.best.as_ref().map(|(d, c)| (d, *c))
    }

    /// Softmax probabilities of parameter `i` (without masking).
    pub fn probabilities(&self, i: usize) -> Vec<f64> {
        crate::autodiff::softmax(&self.gamma[i])
    }

    fn masked(&self, i: usize, picked: &[bool; 6]) -> Vec<f64> {
        self.gamma[i].iter().zip(picked).map(|(&g, &p)| if p { f64::NEG_INFINITY } else { g }).collect()
    }

    fn is_first_slot(&self, i: usize) -> bool {
        matches!(self.params[i].kind, ParamKind::Order { slot: 0, .. })
    }
}

/// Draw one hard choice per parameter by Gumbel-Softmax argmax; loop-order
/// slots are drawn in sequence with already-picked dims masked out.
pub fn sample_design<R: Rng + ?Sized>(state: &DasState, rng: &mut R) -> DesignSample {
    let mut choices = Vec::with_capacity(state.params.len());
    let mut weights = Vec::with_capacity(state.params.len());
    let mut picked = [false; 6];
    for (i, p) in state.params.iter().enumerate() {
        let logits = if let ParamKind::Order { .. } = p.kind {
            if state.is_first_slot(i) {
                picked = [false; 6];
            }
            state.masked(i, &picked)
        } else {
            state.gamma[i].clone()
        };
        let noise = gumbel_noise(logits.len(), rng);
        let w = softmax_tempered(&logits, &noise, state.cfg.tau);
        let c = argmax(&w);
        if let ParamKind::Order { .. } = p.kind {
            picked[c] = true;
        }
        choices.push(c);
        weights.push(w);
    }
    let design = state.space.decode(&choices);
    DesignSample { choices, weights, design }
}

/// Sample `samples` designs, cost them with the hardware model, and take one
/// Adam step on the mean over draws of `c * sum_s w_s[choice_s]` (or the
/// product, per config).
///
/// `c` is the sampled cost divided by the infeasibility penalty, optionally
/// log-transformed, centred and compressed (see [`DasConfig`]). With
/// `baseline_decay = 0`, `log_cost = false`, `advantage_power = 1` and one
/// sample it is the plain scaled cost.
pub fn das_step<R: Rng + ?Sized>(
    state: &mut DasState,
    layers: &[LayerDims],
    platform: &Platform,
    rng: &mut R,
) -> Result<StepRecord> {
    let objective = state.cfg.objective;
    let scale = infeasible_penalty(layers).max(1.0);
    das_step_with(state, rng, scale, |d| {
        let e = evaluate_design(layers, d.clone(), platform, objective)?;
        Ok((e.cost, e.report.feasible))
    })
    .map(|(r, _)| r)
}

/// [`das_step`] with an arbitrary cost function returning `(cost, feasible)`.
/// Returns the step record and the cheapest draw of the step.
pub fn das_step_with<R, F>(
    state: &mut DasState,
    rng: &mut R,
    scale: f64,
    mut cost_fn: F,
) -> Result<(StepRecord, DesignSample)>
where
    R: Rng + ?Sized,
    F: FnMut(&AcceleratorDesign) -> Result<(f64, bool)>,
{
    let k = state.cfg.samples.max(1);
    let mut draws = Vec::with_capacity(k);
    for _ in 0..k {
        let sample = sample_design(state, rng);
        let (cost, feasible) = cost_fn(&sample.design)?;
        draws.push((sample, cost, feasible));
    }
    let scaled: Vec<f64> =
        draws.iter().map(|d| if state.cfg.log_cost { (d.1 / scale).ln() } else { d.1 / scale }).collect();
    let advantages: Vec<f64> = if k > 1 {
        let total: f64 = scaled.iter().sum();
        scaled.iter().map(|&c| compress(c - (total - c) / (k - 1) as f64, state.cfg.advantage_power)).collect()
    } else if state.cfg.baseline_decay > 0.0 {
        let c = scaled[0];
        let b = state.baseline.unwrap_or(c);
        state.baseline = Some(state.cfg.baseline_decay * b + (1.0 - state.cfg.baseline_decay) * c);
        vec![compress(c - b, state.cfg.advantage_power)]
    } else {
        scaled
    };
    let tau = state.cfg.tau;
    let mut grads: Vec<Vec<f64>> = state.gamma.iter().map(|g| vec![0.0; g.len()]).collect();
    for ((sample, _, _), &c) in draws.iter().zip(&advantages) {
        let selected: Vec<f64> = sample.weights.iter().zip(&sample.choices).map(|(w, &k)| w[k]).collect();
        for (s, (w, &ks)) in sample.weights.iter().zip(&sample.choices).enumerate() {
            let outer = match state.cfg.weighting {
                Weighting::Sum => c,
                Weighting::Product => {
                    c * selected.iter().enumerate().filter(|&(j, _)| j != s).map(|(_, v)| v).product::<f64>()
                }
            } / k as f64;
            // d w_k / d gamma_j = w_k (delta_kj - w_j) / tau
            for (j, (g, &wj)) in grads[s].iter_mut().zip(w).enumerate() {
                *g += outer * w[ks] * (if j == ks { 1.0 } else { 0.0 } - wj) / tau;
            }
        }
    }
    if grads.iter().flatten().any(|g| !g.is_finite()) {
        return Err(Error::Divergence("non-finite accelerator search gradient".into()));
    }
    let mut views: Vec<(&mut [f64], &[f64])> =
        state.gamma.iter_mut().zip(&grads).map(|(g, d)| (g.as_mut_slice(), d.as_slice())).collect();
    state.adam.update_slices(&mut views)?;
    state.step += 1;
    for (sample, cost, feasible) in &draws {
        if *feasible && state.best.as_ref().is_none_or(|b| *cost < b.1) {
            state.best = Some((sample.design.clone(), *cost));
        }
    }
    let best_so_far = state.best.as_ref().map_or(f64::INFINITY, |b| b.1);
    let i = (0..k).min_by(|&a, &b| draws[a].1.total_cmp(&draws[b].1)).unwrap_or(0);
    let (sample, cost, feasible) = draws.swap_remove(i);
    Ok((StepRecord { step: state.step, cost, feasible, best_so_far }, sample))
}

fn compress(a: f64, power: f64) -> f64 {
    a.signum() * a.abs().powf(power)
}

/// Per-parameter argmax (lowest index on ties), loop-order slots resolved
/// greedily with masking.
pub fn derive_design(state: &DasState) -> AcceleratorDesign {
    let mut choices = Vec::with_capacity(state.params.len());
    let mut picked = [false; 6];
    for (i, p) in state.params.iter().enumerate() {
        let c = if let ParamKind::Order { .. } = p.kind {
            if state.is_first_slot(i) {
                picked = [false; 6];
            }
            let c = argmax(&state.masked(i, &picked));
            picked[c] = true;
            c
        } else {
            argmax(&state.gamma[i])
        };
        choices.push(c);
    }
    state.space.decode(&choices)
}

/// Result of a full accelerator search.
#[derive(Debug, Clone)]
pub struct DasOutcome {
    pub derived: Evaluated,
    /// The better of the derived design and the best feasible sample.
    pub chosen: Evaluated,
    pub used_fallback: bool,
    pub trace: Vec<StepRecord>,
}

/// Run `state.cfg.steps` steps, derive, and fall back to the best feasible
/// sample when it beats the derived design.
pub fn run_das<R: Rng + ?Sized>(
    state: &mut DasState,
    layers: &[LayerDims],
    platform: &Platform,
    rng: &mut R,
) -> Result<DasOutcome> {
    state.space.validate(layers)?;
    let mut trace = Vec::with_capacity(state.cfg.steps);
    for _ in 0..state.cfg.steps {
        trace.push(das_step(state, layers, platform, rng)?);
    }
    let derived = evaluate_design(layers, derive_design(state), platform, state.cfg.objective)?;
    let (chosen, used_fallback) = match state.best_seen() {
        Some((d, c)) if !derived.report.feasible || c < derived.cost => {
            (evaluate_design(layers, d.clone(), platform, state.cfg.objective)?, true)
        }
        _ => (derived.clone(), false),
    };
    if !chosen.report.feasible {
        return Err(Error::NoFeasibleDesign);
    }
    Ok(DasOutcome { derived, chosen, used_fallback, trace })
}

/// Largest space [`brute_force`] will enumerate.
pub const BRUTE_FORCE_LIMIT: usize = 100_000;

/// Exhaustive search of `space`; the lowest-cost feasible design, first in
/// enumeration order on ties.
pub fn brute_force(
    layers: &[LayerDims],
    platform: &Platform,
    space: &SearchSpace,
    objective: Objective,
) -> Result<Evaluated> {
    space.validate(layers)?;
    let size = space.size();
    if size > BRUTE_FORCE_LIMIT as f64 {
        return Err(Error::SpaceTooLarge { size, limit: BRUTE_FORCE_LIMIT });
    }
    let mut best: Option<Evaluated> = None;
    let mut err = None;
    space.for_each_choice(|choices| {
        if err.is_some() {
            return;
        }
        match evaluate_design(layers, space.decode(choices), platform, objective) {
            Ok(e) if e.report.feasible && best.as_ref().is_none_or(|b| e.cost < b.cost) => best = Some(e),
            Ok(_) => {}
            Err(e) => err = Some(e),
        }
    });
    if let Some(e) = err {
        return Err(e);
    }
    best.ok_or(Error::NoFeasibleDesign)
}

/// Uniform random sampling with a fixed budget; the best feasible sample.
pub fn random_search<R: Rng + ?Sized>(
    layers: &[LayerDims],
    platform: &Platform,
    space: &SearchSpace,
    objective: Objective,
    budget: usize,
    rng: &mut R,
) -> Result<Evaluated> {
    space.validate(layers)?;
    let mut best: Option<Evaluated> = None;
    for _ in 0..budget {
        let e = evaluate_design(layers, space.decode(&space.random_choice(rng)), platform, objective)?;
        if e.report.feasible && best.as_ref().is_none_or(|b| e.cost < b.cost) {
            best = Some(e);
        }
    }
    best.ok_or(Error::NoFeasibleDesign)
}

/// `step,sampled_cost,feasible,best_so_far`.
pub fn write_trace_csv<W: Write>(trace: &[StepRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::Io(e.into());
    w.write_record(["step", "sampled_cost", "feasible", "best_so_far"]).map_err(io)?;
    for r in trace {
        w.write_record([
            r.step.to_string(),
            format!("{}", r.cost),
            r.feasible.to_string(),
            format!("{}", r.best_so_far),
        ])
        .map_err(io)?;
    }
    w.flush()?;
    Ok(())
}
