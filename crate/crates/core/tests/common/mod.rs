//! Finite-difference oracle shared by the gradient tests and the acceptance suite.
#![allow(dead_code)]

use ecg_cosearch::autodiff::{ConvOpts, Tape, Tensor4, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Build = dyn Fn(&mut Tape, &[Var]) -> Var;

/// Scalar loss of `build` evaluated on fresh leaves holding `inputs`.
fn eval(build: &Build, inputs: &[Tensor4]) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = build(&mut tape, &vars);
    tape.value(out).item()
}

/// Largest absolute analytic/numeric discrepancy over all inputs, divided by
/// the largest numeric gradient magnitude.
pub fn gradcheck(build: &Build, inputs: &[Tensor4], h: f64) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = build(&mut tape, &vars);
    let grads = tape.backward(out).unwrap();
    let mut max_diff = 0.0f64;
    let mut scale = 0.0f64;
    for (k, t) in inputs.iter().enumerate() {
        let analytic = grads.get_or_zeros(vars[k], t);
        for i in 0..t.len() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[i] += h;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[i] -= h;
            let numeric = (eval(build, &plus) - eval(build, &minus)) / (2.0 * h);
            max_diff = max_diff.max((numeric - analytic.data()[i]).abs());
            scale = scale.max(numeric.abs());
        }
    }
    max_diff / scale.max(1e-12)
}

pub fn rand_tensor(rng: &mut ChaCha8Rng, dims: [usize; 4]) -> Tensor4 {
    let n = dims.iter().product();
    Tensor4::new(dims, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Values bounded away from zero, so ReLU kinks are never crossed by a finite-difference step.
pub fn rand_away_from_zero(rng: &mut ChaCha8Rng, dims: [usize; 4]) -> Tensor4 {
    let n = dims.iter().product();
    Tensor4::new(
        dims,
        (0..n)
            .map(|_| {
                let v: f64 = rng.random_range(0.1..1.0);
                if rng.random_bool(0.5) {
                    v
                } else {
                    -v
                }
            })
            .collect(),
    )
    .unwrap()
}

/// Distinct values (a shuffled ramp), so max-pool argmaxes are stable.
pub fn rand_distinct(rng: &mut ChaCha8Rng, dims: [usize; 4]) -> Tensor4 {
    let n: usize = dims.iter().product();
    let mut v: Vec<f64> = (0..n).map(|i| i as f64 * 0.01).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        v.swap(i, j);
    }
    Tensor4::new(dims, v).unwrap()
}

/// Project an op output onto a fixed random direction: sum(out * probe).
pub fn probe(tape: &mut Tape, out: Var, seed: u64) -> Var {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcdef);
    let dims = tape.value(out).dims();
    let p = tape.constant(rand_tensor(&mut rng, dims));
    let prod = tape.mul(out, p).unwrap();
    tape.sum(prod)
}

pub const GRAD_TOL: f64 = 1e-6;
pub const FD_STEP: f64 = 1e-5;

/// Named per-op gradient checks for one seed; returns `(op, rel_err)`.
pub fn gradient_suite(seed: u64) -> Vec<(&'static str, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dim = |lo: usize| rng.random_range(lo..=4usize);
    let (n, c, m, h, w, k) = (dim(1), dim(1), dim(1), dim(3), dim(3), dim(1));
    let k = k.min(h).min(w);
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(31) + 1);
    let mut out = Vec::new();

    let inputs = vec![
        rand_tensor(&mut rng, [n, c, h, w]),
        rand_tensor(&mut rng, [m, c, k, k]),
        rand_tensor(&mut rng, [1, m, 1, 1]),
    ];
    let pad = k / 2;
    let f = move |t: &mut Tape, v: &[Var]| {
        let y = t.conv2d(v[0], v[1], Some(v[2]), ConvOpts::new(1, pad)).unwrap();
        probe(t, y, seed)
    };
    out.push(("conv2d", gradcheck(&f, &inputs, FD_STEP)));

    let groups = c;
    let inputs = vec![rand_tensor(&mut rng, [n, c, h, w]), rand_tensor(&mut rng, [c, 1, k, k])];
    let f = move |t: &mut Tape, v: &[Var]| {
        let y = t.conv2d(v[0], v[1], None, ConvOpts::new(1, pad).grouped(groups)).unwrap();
        probe(t, y, seed)
    };
    out.push(("conv2d_depthwise", gradcheck(&f, &inputs, FD_STEP)));

    let inputs = vec![
        rand_tensor(&mut rng, [n, m, h, w]),
        rand_tensor(&mut rng, [m, c, k, k]),
        rand_tensor(&mut rng, [1, c, 1, 1]),
    ];
    let f = move |t: &mut Tape, v: &[Var]| {
        let y = t.conv_transpose2d(v[0], v[1], Some(v[2]), 1, pad).unwrap();
        probe(t, y, seed)
    };
    out.push(("conv_transpose2d", gradcheck(&f, &inputs, FD_STEP)));

    let inputs = vec![rand_distinct(&mut rng, [n, c, 2 * h.min(2), 2 * w.min(2)])];
    let f = move |t: &mut Tape, v: &[Var]| {
        let y = t.maxpool2d(v[0], 2, 2).unwrap();
        probe(t, y, seed)
    };
    out.push(("maxpool2d", gradcheck(&f, &inputs, 1e-4)));

    let inputs = vec![rand_tensor(&mut rng, [n, c, h, w])];
    let f = move |t: &mut Tape, v: &[Var]| {
        let y = t.upsample_nearest(v[0], 2).unwrap();
        probe(t, y, seed)
    };
    out.push(("upsample_nearest", gradcheck(&f, &inputs, FD_STEP)));

    let inputs = vec![rand_away_from_zero(&mut rng, [n, c, h, w])];
    let f = move |t: &mut Tape, v: &[Var]| {
        let y = t.relu(v[0]);
        probe(t, y, seed)
    };
    out.push(("relu", gradcheck(&f, &inputs, FD_STEP)));

    let inputs = vec![rand_tensor(&mut rng, [n, c, h, w]), rand_tensor(&mut rng, [n, c, h, w])];
    let f = move |t: &mut Tape, v: &[Var]| {
        let y = t.add(v[0], v[1]).unwrap();
        probe(t, y, seed)
    };
    out.push(("add", gradcheck(&f, &inputs, FD_STEP)));

    let inputs = vec![
        rand_tensor(&mut rng, [n, c, h, w]),
        rand_tensor(&mut rng, [n, c, h, w]),
        rand_tensor(&mut rng, [1, 2, 1, 1]),
    ];
    let f = move |t: &mut Tape, v: &[Var]| {
        let y = t.weighted_sum(&[v[0], v[1]], v[2]).unwrap();
        probe(t, y, seed)
    };
    out.push(("weighted_sum", gradcheck(&f, &inputs, FD_STEP)));

    let kk = dim(2) + 1;
    let noise: Vec<f64> = (0..kk).map(|_| rng.random_range(-1.0..1.0)).collect();
    let inputs = vec![rand_tensor(&mut rng, [1, kk, 1, 1])];
    let f = move |t: &mut Tape, v: &[Var]| {
        let y = t.softmax_with_noise(v[0], &noise, 0.7).unwrap();
        probe(t, y, seed)
    };
    out.push(("gumbel_softmax", gradcheck(&f, &inputs, FD_STEP)));

    let target = rand_tensor(&mut rng, [n, c, h, w]);
    let inputs = vec![rand_tensor(&mut rng, [n, c, h, w])];
    let f = move |t: &mut Tape, v: &[Var]| t.pearson_loss(v[0], &target).unwrap().0;
    out.push(("pearson_loss", gradcheck(&f, &inputs, FD_STEP)));

    out
}

/// Three small convolutions used by the accelerator-search checks.
pub fn toy_layers() -> Vec<ecg_cosearch::nas::LayerDims> {
    use ecg_cosearch::nas::LayerDims;
    vec![
        LayerDims::conv("a", 4, 16, 8, 3, 1),
        LayerDims::conv("b", 16, 16, 8, 3, 1),
        LayerDims::conv("c", 16, 8, 8, 3, 1),
    ]
}

/// A 9 600-design space over [`toy_layers`]: two NoCs, 128 PEs, spatial
/// tilings on M and F, fixed loop orders, one sub-accelerator per layer.
/// Its start-up-latency optimum is unique.
pub fn toy_space() -> ecg_cosearch::das::SearchSpace {
    use ecg_cosearch::das::{OrderMenu, SearchSpace};
    use ecg_cosearch::hwmodel::{enumerate_tilings, Dim, Noc, Platform};
    let layers = toy_layers();
    let mut space = SearchSpace::full(&layers, &Platform::default());
    space.nocs = vec![Noc::OutputParallel, Noc::KernelParallel];
    space.pes = vec![128];
    for (i, (menu, l)) in space.layers.iter_mut().zip(&layers).enumerate() {
        let d = l.as_array();
        menu.tilings = std::array::from_fn(|k| vec![(1, d[k])]);
        menu.tilings[Dim::M.index()] = enumerate_tilings(d[0]).into_iter().filter(|t| t.1 == d[0]).collect();
        menu.tilings[Dim::F.index()] = if i == 2 {
            vec![(1, 8), (2, 8), (8, 8)]
        } else {
            enumerate_tilings(8).into_iter().filter(|t| t.1 == 8).collect()
        };
        menu.orders = OrderMenu::Fixed { dram: Dim::ALL, gb: Dim::ALL };
        menu.assignment = vec![i];
    }
    space
}
