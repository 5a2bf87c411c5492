use std::collections::HashMap;

use rand::Rng;

use super::space::{BlockKind, LayerKind, LayerSpec, NetworkSpec};
use crate::autodiff::{ConvOpts, ParamStore, Tape, Tensor4, Var};
use crate::{Error, Result};

/// Shape and init scale of one parameter tensor.
pub(crate) struct ParamShape {
    pub name: String,
    pub dims: [usize; 4],
    pub std: f64,
}

fn conv_params(out: &mut Vec<ParamShape>, name: &str, cin_per_group: usize, cout: usize, k: usize, gain: f64) {
    let fan_in = (cin_per_group * k * k) as f64;
    out.push(ParamShape { name: format!("{name}.w"), dims: [cout, cin_per_group, k, k], std: (gain / fan_in).sqrt() });
    out.push(ParamShape { name: format!("{name}.b"), dims: [1, cout, 1, 1], std: 0.0 });
}

pub(crate) fn block_params(out: &mut Vec<ParamShape>, prefix: &str, kind: BlockKind, width: usize) {
    let k = kind.kernel();
    match kind.expansion() {
        _ if kind == BlockKind::Skip => {}
        None => conv_params(out, &format!("{prefix}.conv"), width, width, k, 2.0),
        Some(e) => {
            let hidden = width * e;
            conv_params(out, &format!("{prefix}.expand"), width, hidden, 1, 2.0);
            conv_params(out, &format!("{prefix}.dw"), 1, hidden, k, 2.0);
            conv_params(out, &format!("{prefix}.project"), hidden, width, 1, 1.0);
        }
    }
}

pub(crate) fn block_prefix(layer: &LayerSpec, kind: BlockKind) -> String {
    format!("{}.{}", layer.name, kind.name())
}

/// Parameters of `spec`, in a fixed order. With `all_candidates`, every
/// searchable block carries the parameters of all nine operations.
pub(crate) fn param_shapes(spec: &NetworkSpec, all_candidates: bool) -> Vec<ParamShape> {
    let mut out = Vec::new();
    for l in &spec.layers {
        match l.kind {
            LayerKind::Conv => {
                conv_params(&mut out, &l.name, l.in_channels, l.out_channels, l.kernel, if l.relu { 2.0 } else { 1.0 })
            }
            LayerKind::Deconv => {
                let fan_in = (l.in_channels * l.kernel * l.kernel) as f64;
                out.push(ParamShape {
                    name: format!("{}.w", l.name),
                    dims: [l.in_channels, l.out_channels, l.kernel, l.kernel],
                    std: (2.0 / fan_in).sqrt(),
                });
                out.push(ParamShape { name: format!("{}.b", l.name), dims: [1, l.out_channels, 1, 1], std: 0.0 });
            }
            LayerKind::Maxpool | LayerKind::Upsample => {}
            LayerKind::Block(chosen) => {
                let kinds: Vec<BlockKind> = if all_candidates { BlockKind::ALL.to_vec() } else { vec![chosen] };
                for kind in kinds {
                    block_params(&mut out, &block_prefix(l, kind), kind, l.in_channels);
                }
            }
        }
    }
    out
}

/// He-style normal initialisation with zero biases.
pub(crate) fn init_store<R: Rng + ?Sized>(shapes: &[ParamShape], rng: &mut R) -> ParamStore {
    let mut store = ParamStore::new();
    for p in shapes {
        let t = if p.std == 0.0 { Tensor4::zeros(p.dims) } else { Tensor4::randn(p.dims, p.std, rng) };
        store.insert(p.name.clone(), t);
    }
    store
}

/// Freshly initialised parameters for `spec`.
pub fn init_params<R: Rng + ?Sized>(spec: &NetworkSpec, rng: &mut R) -> ParamStore {
    init_store(&param_shapes(spec, false), rng)
}

/// Parameter handles on a tape, looked up by name.
pub(crate) struct Bound {
    map: HashMap<String, Var>,
}

impl Bound {
    pub fn attach(store: &ParamStore, tape: &mut Tape, trainable: bool) -> (Self, Vec<Var>) {
        let vars: Vec<Var> = store
            .tensors()
            .iter()
            .map(|t| if trainable { tape.leaf(t.clone()) } else { tape.constant(t.clone()) })
            .collect();
        let map = store.ids().zip(&vars).map(|(id, &v)| (store.name(id).to_string(), v)).collect();
        (Bound { map }, vars)
    }

    fn get(&self, name: &str) -> Result<Var> {
        self.map.get(name).copied().ok_or_else(|| Error::Param(format!("missing parameter {name}")))
    }
}

fn conv(tape: &mut Tape, p: &Bound, name: &str, x: Var, opts: ConvOpts, relu: bool) -> Result<Var> {
    let w = p.get(&format!("{name}.w"))?;
    let b = p.get(&format!("{name}.b"))?;
    let y = tape.conv2d(x, w, Some(b), opts)?;
    Ok(if relu { tape.relu(y) } else { y })
}

/// One candidate operation applied to `x`.
pub(crate) fn block_forward(tape: &mut Tape, p: &Bound, prefix: &str, kind: BlockKind, x: Var) -> Result<Var> {
    let k = kind.kernel();
    match kind.expansion() {
        _ if kind == BlockKind::Skip => Ok(x),
        None => conv(tape, p, &format!("{prefix}.conv"), x, ConvOpts::same(k), true),
        Some(e) => {
            let hidden = tape.value(x).dims()[1] * e;
            let h = conv(tape, p, &format!("{prefix}.expand"), x, ConvOpts::same(1), true)?;
            let h = conv(tape, p, &format!("{prefix}.dw"), h, ConvOpts::same(k).grouped(hidden), true)?;
            let h = conv(tape, p, &format!("{prefix}.project"), h, ConvOpts::same(1), false)?;
            tape.add(h, x)
        }
    }
}

/// Run the layer list; `block` handles each searchable block.
pub(crate) fn forward_with<F>(tape: &mut Tape, p: &Bound, spec: &NetworkSpec, x: Var, mut block: F) -> Result<Var>
where
    F: FnMut(&mut Tape, usize, &LayerSpec, Var) -> Result<Var>,
{
    let mut h = x;
    let mut bi = 0;
    for l in &spec.layers {
        h = match l.kind {
            LayerKind::Conv => conv(tape, p, &l.name, h, ConvOpts::same(l.kernel), l.relu)?,
            LayerKind::Deconv => {
                let w = p.get(&format!("{}.w", l.name))?;
                let b = p.get(&format!("{}.b", l.name))?;
                let y = tape.conv_transpose2d(h, w, Some(b), 1, l.kernel / 2)?;
                if l.relu {
                    tape.relu(y)
                } else {
                    y
                }
            }
            LayerKind::Maxpool => tape.maxpool2d(h, l.kernel, l.stride)?,
            LayerKind::Upsample => tape.upsample_nearest(h, l.stride)?,
            LayerKind::Block(_) => {
                let y = block(tape, bi, l, h)?;
                bi += 1;
                y
            }
        };
    }
    Ok(h)
}

/// Forward pass of a concrete network.
pub(crate) fn network_forward(tape: &mut Tape, p: &Bound, spec: &NetworkSpec, x: Var) -> Result<Var> {
    forward_with(tape, p, spec, x, |tape, _, l, h| match l.kind {
        LayerKind::Block(kind) => block_forward(tape, p, &block_prefix(l, kind), kind, h),
        _ => unreachable!(),
    })
}

/// Inference without gradient bookkeeping, in chunks of `chunk` samples.
pub fn predict(spec: &NetworkSpec, params: &ParamStore, x: &Tensor4, chunk: usize) -> Result<Tensor4> {
    let [n, c, h, w] = x.dims();
    if c != spec.input_channels || h != spec.grid || w != spec.grid {
        return Err(Error::Shape(format!(
            "network expects {}x{}x{} inputs, got {c}x{h}x{w}",
            spec.input_channels, spec.grid, spec.grid
        )));
    }
    let mut out = Vec::with_capacity(n * spec.output_channels * h * w);
    let mut start = 0;
    while start < n {
        let end = (start + chunk.max(1)).min(n);
        let samples: Vec<&[f64]> = (start..end).map(|i| x.sample(i)).collect();
        let xb = Tensor4::stack(&samples, c, h, w)?;
        let mut tape = Tape::new();
        let (p, _) = Bound::attach(params, &mut tape, false);
        let xv = tape.constant(xb);
        let y = network_forward(&mut tape, &p, spec, xv)?;
        out.extend_from_slice(tape.value(y).data());
        start = end;
    }
    Tensor4::new([n, spec.output_channels, h, w], out)
}

/// Parameters of `spec` copied by name from a store holding a superset,
/// such as trained supernet weights.
pub fn transfer_params(spec: &NetworkSpec, source: &ParamStore) -> Result<ParamStore> {
    let mut store = ParamStore::new();
    for p in param_shapes(spec, false) {
        let id = source.find(&p.name).ok_or_else(|| Error::Param(format!("source lacks parameter {}", p.name)))?;
        let t = source.get(id);
        if t.dims() != p.dims {
            return Err(Error::Shape(format!("{}: {:?} vs {:?}", p.name, t.dims(), p.dims)));
        }
        store.insert(p.name, t.clone());
    }
    Ok(store)
}
