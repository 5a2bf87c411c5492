use ecg_cosearch::hwmodel::*;
use ecg_cosearch::nas::{count_macs, LayerDims};
use proptest::prelude::*;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Walk the loop nest explicitly and count how often each tensor's tile
/// coordinate changes between consecutive iterations.
fn simulated_words(order: &[Dim; 6], outer: &[usize; 6], tile: &[usize; 6], stride: usize, depthwise: bool) -> u64 {
    let trips: Vec<usize> = (0..6).map(|i| outer[i] / tile[i]).collect();
    let deps = |names: &[Dim]| -> Vec<usize> { names.iter().map(|d| d.index()).collect() };
    let w_deps = deps(&[Dim::M, Dim::C, Dim::R, Dim::S]);
    let i_deps = if depthwise {
        deps(&[Dim::M, Dim::E, Dim::F, Dim::R, Dim::S])
    } else {
        deps(&[Dim::C, Dim::E, Dim::F, Dim::R, Dim::S])
    };
    let o_deps = deps(&[Dim::M, Dim::E, Dim::F]);
    let key = |idx: &[usize; 6], d: &[usize]| -> Vec<usize> { d.iter().map(|&k| idx[k]).collect() };

    let (mut fw, mut fi, mut fo) = (0u64, 0u64, 0u64);
    let (mut last_w, mut last_i, mut last_o) = (None, None, None);
    let mut outs = std::collections::HashSet::new();
    let mut idx = [0usize; 6];
    let total: usize = trips.iter().product();
    for _ in 0..total {
        let (w, i, o) = (key(&idx, &w_deps), key(&idx, &i_deps), key(&idx, &o_deps));
        if last_w.as_ref() != Some(&w) {
            fw += 1;
        }
        if last_i.as_ref() != Some(&i) {
            fi += 1;
        }
        if last_o.as_ref() != Some(&o) {
            fo += 1;
        }
        outs.insert(o.clone());
        (last_w, last_i, last_o) = (Some(w), Some(i), Some(o));
        for d in order.iter().rev() {
            let k = d.index();
            idx[k] += 1;
            if idx[k] < trips[k] {
                break;
            }
            idx[k] = 0;
        }
    }
    let [m, c, e, f, r, s] = tile.map(|v| v as u64);
    let u = stride as u64;
    let w_size = m * c * r * s;
    let i_size = if depthwise { m } else { c } * ((e - 1) * u + r) * ((f - 1) * u + s);
    let o_size = m * e * f;
    w_size * fw + i_size * fi + o_size * (2 * fo - outs.len() as u64)
}

fn random_layer(rng: &mut ChaCha8Rng) -> LayerDims {
    let size = *[1, 2, 4, 6].choose(rng).unwrap();
    let k = *[1, 3].choose(rng).unwrap();
    if rng.random_bool(0.2) {
        return LayerDims::depthwise("dw", *[2, 4, 6].choose(rng).unwrap(), size, k);
    }
    let c = *[1, 2, 3, 4, 8].choose(rng).unwrap();
    let m = *[1, 2, 4, 6, 8].choose(rng).unwrap();
    LayerDims { stride: *[1, 2].choose(rng).unwrap(), ..LayerDims::conv("c", c, m, size, k, 1) }
}

fn random_order(rng: &mut ChaCha8Rng) -> [Dim; 6] {
    let mut o = Dim::ALL;
    o.shuffle(rng);
    o
}

fn random_mapping(rng: &mut ChaCha8Rng, layer: &LayerDims, noc: Noc) -> Mapping {
    let dims = layer.as_array();
    let mut tile_gb = [0; 6];
    let mut tile_pe = [0; 6];
    for d in Dim::ALL {
        let spatial = spatial_dims(noc).contains(&d);
        let opts: Vec<(usize, usize)> =
            enumerate_tilings(dims[d.index()]).into_iter().filter(|&(p, _)| spatial || p == 1).collect();
        let (p, g) = *opts.choose(rng).unwrap();
        tile_pe[d.index()] = p;
        tile_gb[d.index()] = g;
    }
    Mapping { loop_order_dram: random_order(rng), loop_order_gb: random_order(rng), tile_gb, tile_pe }
}

fn case(seed: u64) -> (LayerDims, Mapping, Noc) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layer = random_layer(&mut rng);
    let noc = *Noc::ALL.choose(&mut rng).unwrap();
    let mapping = random_mapping(&mut rng, &layer, noc);
    (layer, mapping, noc)
}

fn roomy() -> Platform {
    Platform { gb_capacity: 1 << 30, ..Platform::default() }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(400))]

    #[test]
    fn data_movement_matches_loop_nest_simulation(seed in any::<u64>()) {
        let (layer, m, noc) = case(seed);
        let cost = estimate_layer(&layer, &m, noc, 1 << 20, &roomy());
        let dims = layer.as_array();
        let dram = simulated_words(&m.loop_order_dram, &dims, &m.tile_gb, layer.stride, layer.depthwise);
        let gb_tiles: u64 = (0..6).map(|i| (dims[i] / m.tile_gb[i]) as u64).product();
        let gb = gb_tiles * simulated_words(&m.loop_order_gb, &m.tile_gb, &m.tile_pe, layer.stride, layer.depthwise);
        prop_assert_eq!(cost.dram_words, dram);
        prop_assert_eq!(cost.gb_words, gb);
    }

    #[test]
    fn compute_meets_the_parallelism_bound(seed in any::<u64>()) {
        let (layer, m, noc) = case(seed);
        let cost = estimate_layer(&layer, &m, noc, m.pes(), &roomy());
        prop_assert!(cost.feasible);
        prop_assert_eq!(cost.compute_cycles * m.pes() as u64, count_macs(&layer));
        prop_assert!(cost.compute_cycles as f64 >= count_macs(&layer) as f64 / m.pes() as f64);
    }

    #[test]
    fn more_bandwidth_never_slows_a_layer(seed in any::<u64>(), dram_mul in 1.0f64..8.0, gb_mul in 1.0f64..8.0) {
        let (layer, m, noc) = case(seed);
        let slow = Platform { dram_bw: 0.5, gb_bw: 1.0, ..roomy() };
        let fast = Platform { dram_bw: 0.5 * dram_mul, gb_bw: gb_mul, ..slow.clone() };
        let a = estimate_layer(&layer, &m, noc, 1 << 20, &slow);
        let b = estimate_layer(&layer, &m, noc, 1 << 20, &fast);
        prop_assert!(b.total_cycles <= a.total_cycles);
        prop_assert_eq!(a.total_cycles, a.compute_cycles.max(a.dram_cycles).max(a.gb_cycles));
    }

    #[test]
    fn shrinking_a_buffer_tile_keeps_capacity_feasibility(seed in any::<u64>(), pick in 0usize..6) {
        let (layer, m, noc) = case(seed);
        let tight = Platform { gb_capacity: estimate_layer(&layer, &m, noc, 1 << 20, &roomy()).gb_footprint as usize, ..roomy() };
        prop_assert!(estimate_layer(&layer, &m, noc, 1 << 20, &tight).feasible);
        let d = pick;
        let (p, g) = (m.tile_pe[d], m.tile_gb[d]);
        for g2 in (p..g).filter(|g2| g % g2 == 0 && g2 % p == 0) {
            let mut smaller = m.clone();
            smaller.tile_gb[d] = g2;
            prop_assert!(estimate_layer(&layer, &smaller, noc, 1 << 20, &tight).feasible);
        }
    }

    #[test]
    fn estimate_layer_is_pure(seed in any::<u64>()) {
        let (layer, m, noc) = case(seed);
        let p = Platform::default();
        prop_assert_eq!(estimate_layer(&layer, &m, noc, 64, &p), estimate_layer(&layer, &m, noc, 64, &p));
    }

    #[test]
    fn pipeline_invariants(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(1..12);
        let layers: Vec<LayerDims> = (0..n).map(|_| random_layer(&mut rng)).collect();
        let noc = *Noc::ALL.choose(&mut rng).unwrap();
        let design = AcceleratorDesign {
            noc,
            max_pes: 900,
            assignment: (0..n).map(|_| rng.random_range(0..NUM_SUB_ACCELERATORS)).collect(),
            mappings: layers.iter().map(|l| random_mapping(&mut rng, l, noc)).collect(),
        };
        let p = Platform::default();
        let r = estimate_network(&layers, &design, &p).unwrap();
        prop_assert!((r.fps * r.max_stage_cycles as f64 - p.freq_hz).abs() <= 1e-9 * p.freq_hz);
        prop_assert_eq!(r.stage_cycles.iter().sum::<u64>(), r.total_cycles);
        prop_assert!((r.startup_latency_s - r.total_cycles as f64 / p.freq_hz).abs() <= 1e-15);
        prop_assert!(r.max_stage_cycles <= r.total_cycles);
    }
}

#[test]
fn tiling_counts() {
    assert_eq!(enumerate_tilings(1), vec![(1, 1)]);
    let four = enumerate_tilings(4);
    assert_eq!(four.len(), 6);
    for pair in [(1, 1), (1, 2), (2, 2), (1, 4), (2, 4), (4, 4)] {
        assert!(four.contains(&pair));
    }
    assert_eq!(enumerate_tilings(6).len(), 9);
    assert_eq!(enumerate_tilings(12).len(), 18);
}

#[test]
fn spatial_dims_per_noc() {
    assert_eq!(spatial_dims(Noc::OutputParallel), &[Dim::M, Dim::E, Dim::F]);
    assert_eq!(spatial_dims(Noc::KernelParallel), &[Dim::M, Dim::C]);
    assert_eq!(spatial_dims(Noc::KernelOutputParallel), &[Dim::M, Dim::R, Dim::F]);
}

#[test]
fn hand_traced_two_level_weights() {
    // M=2, C=1, E=4, F=1, R=S=1. E tiles of 1, everything else full.
    // DRAM order E outermost: weights (no E dependence) stay resident, fetched once.
    let layer = LayerDims { name: "t".into(), m: 2, c: 1, e: 4, f: 1, r: 1, s: 1, stride: 1, depthwise: false };
    let mut m = Mapping::single_pe(&layer);
    m.tile_gb = [2, 1, 1, 1, 1, 1];
    m.loop_order_dram = [Dim::E, Dim::M, Dim::C, Dim::F, Dim::R, Dim::S];
    let cost = estimate_layer(&layer, &m, Noc::OutputParallel, 1, &roomy());
    // W 2 words once, I 1 word per E tile, O 2 words written per E tile.
    assert_eq!(cost.dram_words, 2 + 4 + 4 * 2);

    // With M split too, M outside E fetches each weight tile once while the
    // input is refetched per M tile.
    m.tile_gb = [1, 1, 1, 1, 1, 1];
    m.loop_order_dram = [Dim::M, Dim::E, Dim::C, Dim::F, Dim::R, Dim::S];
    let cost = estimate_layer(&layer, &m, Noc::OutputParallel, 1, &roomy());
    assert_eq!(cost.dram_words, 2 + 2 * 4 + 8);
    // E outside M refetches the weights for every E tile instead.
    m.loop_order_dram = [Dim::E, Dim::M, Dim::C, Dim::F, Dim::R, Dim::S];
    let cost = estimate_layer(&layer, &m, Noc::OutputParallel, 1, &roomy());
    assert_eq!(cost.dram_words, 8 + 4 + 8);
}

#[test]
fn pipeline_formula_examples() {
    let (fps, startup) = pipeline_metrics(&[100, 300], 400, 200e6);
    assert!((fps - 666_666.666_666_7).abs() < 1e-3);
    assert!((startup - 2.0e-6).abs() < 1e-18);

    let layers: Vec<LayerDims> = (0..10).map(|i| LayerDims::conv(format!("l{i}"), 4, 4, 4, 3, 1)).collect();
    let mut design = AcceleratorDesign::baseline(&layers);
    let p = Platform::default();
    let single = estimate_network(&layers, &design, &p).unwrap();
    assert!((single.fps - p.freq_hz / single.total_cycles as f64).abs() < 1e-9);
    design.assignment = (0..10).collect();
    let spread = estimate_network(&layers, &design, &p).unwrap();
    assert!((spread.fps - 10.0 * single.fps).abs() < 1e-9 * spread.fps);
    assert_eq!(spread.startup_latency_s, single.startup_latency_s);
}

#[test]
fn structural_violations_make_a_layer_infeasible_with_zero_cost() {
    let layer = LayerDims::conv("c", 4, 4, 4, 3, 1);
    let mut m = Mapping::single_pe(&layer);
    m.tile_pe[Dim::C.index()] = 2;
    let cost = estimate_layer(&layer, &m, Noc::OutputParallel, 900, &Platform::default());
    assert!(!cost.feasible);
    assert_eq!(cost.total_cycles, 0);
    m.tile_pe[Dim::C.index()] = 1;
    m.tile_gb[Dim::M.index()] = 3;
    assert!(!estimate_layer(&layer, &m, Noc::OutputParallel, 900, &Platform::default()).feasible);
}

#[test]
fn network_rejects_mismatched_designs() {
    let layers = vec![LayerDims::conv("c", 2, 2, 2, 1, 1)];
    let mut design = AcceleratorDesign::baseline(&layers);
    design.assignment = vec![NUM_SUB_ACCELERATORS];
    assert!(estimate_network(&layers, &design, &Platform::default()).is_err());
    design.assignment = vec![0, 0];
    assert!(estimate_network(&layers, &design, &Platform::default()).is_err());
    design.assignment = vec![0];
    design.max_pes = 901;
    let r = estimate_network(&layers, &design, &Platform::default()).unwrap();
    assert!(!r.feasible);
}
