use std::io::Write;

use serde::{Deserialize, Serialize};

use super::design::{AcceleratorDesign, Dim, Mapping, Noc, Platform, NUM_SUB_ACCELERATORS};
use crate::nas::LayerDims;
use crate::{Error, Result};

/// All `(tile_pe, tile_gb)` with `tile_pe | tile_gb | dim`, ordered by
/// `tile_gb` then `tile_pe`.
pub fn enumerate_tilings(dim: usize) -> Vec<(usize, usize)> {
    let divisors = |n: usize| (1..=n).filter(move |d| n % d == 0);
    divisors(dim).flat_map(|g| divisors(g).map(move |p| (p, g))).collect()
}

/// Cost of one layer under one mapping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerCost {
    pub name: String,
    pub compute_cycles: u64,
    pub dram_words: u64,
    pub dram_cycles: u64,
    pub gb_words: u64,
    pub gb_cycles: u64,
    /// `max(compute, dram, gb)`: transfers overlap compute via double buffering.
    pub total_cycles: u64,
    /// Words held in the global buffer: W + I + 2 O tiles.
    pub gb_footprint: u64,
    pub feasible: bool,
    pub violations: Vec<String>,
}

const W_DEPS: [Dim; 4] = [Dim::M, Dim::C, Dim::R, Dim::S];
const I_DEPS: [Dim; 5] = [Dim::C, Dim::E, Dim::F, Dim::R, Dim::S];
const I_DEPS_DW: [Dim; 5] = [Dim::M, Dim::E, Dim::F, Dim::R, Dim::S];
const O_DEPS: [Dim; 3] = [Dim::M, Dim::E, Dim::F];

/// Tile fetch count under the revisit rule.
fn fetches(order: &[Dim; 6], trips: &[u64; 6], deps: &[Dim]) -> u64 {
    let innermost = order.iter().rposition(|d| trips[d.index()] > 1 && deps.contains(d));
    match innermost {
        None => 1,
        Some(p) => order[..=p].iter().map(|d| trips[d.index()]).product(),
    }
}

/// Words of W, I and O held for a tile of size `t`.
fn footprints(t: &[usize; 6], stride: usize, depthwise: bool) -> (u64, u64, u64) {
    let [m, c, e, f, r, s] = t.map(|v| v as u64);
    let u = stride as u64;
    let w = m * c * r * s;
    let in_ch = if depthwise { m } else { c };
    let i = in_ch * ((e - 1) * u + r) * ((f - 1) * u + s);
    let o = m * e * f;
    (w, i, o)
}

/// Words moved by one level of the loop nest.
fn level_words(order: &[Dim; 6], outer: &[usize; 6], tile: &[usize; 6], stride: usize, depthwise: bool) -> u64 {
    let trips: [u64; 6] = std::array::from_fn(|i| (outer[i] / tile[i]) as u64);
    let (w, i, o) = footprints(tile, stride, depthwise);
    let i_deps: &[Dim] = if depthwise { &I_DEPS_DW } else { &I_DEPS };
    let out_fetches = fetches(order, &trips, &O_DEPS);
    let distinct_out: u64 = O_DEPS.iter().map(|d| trips[d.index()]).product();
    w * fetches(order, &trips, &W_DEPS) + i * fetches(order, &trips, i_deps) + o * (2 * out_fetches - distinct_out)
}

fn ceil_div(a: u64, b: f64) -> u64 {
    (a as f64 / b).ceil() as u64
}

/// Cycles and data movement of `layer` under `mapping`.
///
/// Structurally invalid mappings (broken divisibility, spatial tiles on a
/// dimension the NoC cannot unroll, non-permutation loop orders) are
/// reported as infeasible with zero cost.
pub fn estimate_layer(
    layer: &LayerDims,
    mapping: &Mapping,
    noc: Noc,
    max_pes: usize,
    platform: &Platform,
) -> LayerCost {
    let mut violations = mapping.structural_violations(layer, noc);
    if !violations.is_empty() {
        return LayerCost {
            name: layer.name.clone(),
            compute_cycles: 0,
            dram_words: 0,
            dram_cycles: 0,
            gb_words: 0,
            gb_cycles: 0,
            total_cycles: 0,
            gb_footprint: 0,
            feasible: false,
            violations,
        };
    }
    let dims = layer.as_array();
    let compute_cycles: u64 = (0..6).map(|i| (dims[i] / mapping.tile_pe[i]) as u64).product();
    let dram_words = level_words(&mapping.loop_order_dram, &dims, &mapping.tile_gb, layer.stride, layer.depthwise);
    let gb_tiles: u64 = (0..6).map(|i| (dims[i] / mapping.tile_gb[i]) as u64).product();
    let gb_words = gb_tiles
        * level_words(&mapping.loop_order_gb, &mapping.tile_gb, &mapping.tile_pe, layer.stride, layer.depthwise);
    let dram_cycles = ceil_div(dram_words, platform.dram_bw);
    let gb_cycles = ceil_div(gb_words, platform.gb_bw);
    let (w, i, o) = footprints(&mapping.tile_gb, layer.stride, layer.depthwise);
    let gb_footprint = w + i + 2 * o;
    if gb_footprint > platform.gb_capacity as u64 {
        violations.push(format!("buffer needs {gb_footprint} words, capacity {}", platform.gb_capacity));
    }
    let pes = mapping.pes();
    if pes > max_pes {
        violations.push(format!("mapping uses {pes} PEs, budget {max_pes}"));
    }
    LayerCost {
        name: layer.name.clone(),
        compute_cycles,
        dram_words,
        dram_cycles,
        gb_words,
        gb_cycles,
        total_cycles: compute_cycles.max(dram_cycles).max(gb_cycles),
        gb_footprint,
        feasible: violations.is_empty(),
        violations,
    }
}

/// Whole-network cost of a design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub layers: Vec<LayerCost>,
    pub assignment: Vec<usize>,
    /// Summed layer cycles of each sub-accelerator.
    pub stage_cycles: Vec<u64>,
    pub max_stage_cycles: u64,
    pub total_cycles: u64,
    pub fps: f64,
    pub startup_latency_s: f64,
    pub dram_bytes: u64,
    pub feasible: bool,
    /// `(layer index, problem)`; index `usize::MAX` marks design-level problems.
    pub violations: Vec<(usize, String)>,
}

/// `(fps, start-up seconds)` of a pipeline: the slowest stage sets the
/// frame rate, a single frame traverses all layers in sequence.
pub fn pipeline_metrics(stage_cycles: &[u64], total_cycles: u64, freq_hz: f64) -> (f64, f64) {
    let max = stage_cycles.iter().copied().max().unwrap_or(0);
    let fps = if max == 0 { f64::INFINITY } else { freq_hz / max as f64 };
    (fps, total_cycles as f64 / freq_hz)
}

/// Cost every layer of `layers` under `design` and combine the stages.
pub fn estimate_network(layers: &[LayerDims], design: &AcceleratorDesign, platform: &Platform) -> Result<CostReport> {
    platform.validate()?;
    if design.mappings.len() != layers.len() || design.assignment.len() != layers.len() {
        return Err(Error::Shape(format!(
            "{} layers, {} mappings, {} assignments",
            layers.len(),
            design.mappings.len(),
            design.assignment.len()
        )));
    }
    if let Some(&a) = design.assignment.iter().find(|&&a| a >= NUM_SUB_ACCELERATORS) {
        return Err(Error::Param(format!("sub-accelerator {a} out of range 0..{NUM_SUB_ACCELERATORS}")));
    }
    let mut violations = Vec::new();
    if design.max_pes == 0 || design.max_pes > platform.pe_limit {
        violations.push((usize::MAX, format!("max_pes {} outside 1..={}", design.max_pes, platform.pe_limit)));
    }
    let costs: Vec<LayerCost> = layers
        .iter()
        .zip(&design.mappings)
        .map(|(l, m)| estimate_layer(l, m, design.noc, design.max_pes, platform))
        .collect();
    let mut stage_cycles = vec![0u64; NUM_SUB_ACCELERATORS];
    for (c, &a) in costs.iter().zip(&design.assignment) {
        stage_cycles[a] += c.total_cycles;
    }
    for (i, c) in costs.iter().enumerate() {
        violations.extend(c.violations.iter().map(|v| (i, v.clone())));
    }
    let total_cycles: u64 = costs.iter().map(|c| c.total_cycles).sum();
    let (fps, startup_latency_s) = pipeline_metrics(&stage_cycles, total_cycles, platform.freq_hz);
    let dram_bytes = costs.iter().map(|c| c.dram_words).sum::<u64>() * platform.bytes_per_word as u64;
    Ok(CostReport {
        max_stage_cycles: stage_cycles.iter().copied().max().unwrap_or(0),
        layers: costs,
        assignment: design.assignment.clone(),
        stage_cycles,
        total_cycles,
        fps,
        startup_latency_s,
        dram_bytes,
        feasible: violations.is_empty(),
        violations,
    })
}

/// One row per layer followed by a `total` row.
pub fn write_report_csv<W: Write>(report: &CostReport, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::Io(e.into());
    w.write_record([
        "layer",
        "name",
        "sub_accelerator",
        "compute_cycles",
        "dram_cycles",
        "gb_cycles",
        "total_cycles",
        "feasible",
        "fps",
        "startup_latency_s",
    ])
    .map_err(io)?;
    for (i, (c, a)) in report.layers.iter().zip(&report.assignment).enumerate() {
        w.write_record([
            i.to_string(),
            c.name.clone(),
            a.to_string(),
            c.compute_cycles.to_string(),
            c.dram_cycles.to_string(),
            c.gb_cycles.to_string(),
            c.total_cycles.to_string(),
            c.feasible.to_string(),
            String::new(),
            String::new(),
        ])
        .map_err(io)?;
    }
    w.write_record([
        "total".to_string(),
        String::new(),
        String::new(),
        report.layers.iter().map(|c| c.compute_cycles).sum::<u64>().to_string(),
        report.layers.iter().map(|c| c.dram_cycles).sum::<u64>().to_string(),
        report.layers.iter().map(|c| c.gb_cycles).sum::<u64>().to_string(),
        report.total_cycles.to_string(),
        report.feasible.to_string(),
        format!("{:.6}", report.fps),
        format!("{:.9e}", report.startup_latency_s),
    ])
    .map_err(io)?;
    w.flush()?;
    Ok(())
}
