use rand::Rng;

use super::gumbel::{gumbel_noise, softmax_tempered};
use super::kernels::{self, ConvGeom};
use super::Tensor4;
use crate::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

type BackwardFn = Box<dyn Fn(&Tensor4, &[Node]) -> Vec<Tensor4>>;

struct Node {
    value: Tensor4,
    parents: Vec<usize>,
    backward: Option<BackwardFn>,
    requires_grad: bool,
}

/// Convolution hyper-parameters; kernels are `(m, c / groups, r, s)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvOpts {
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl ConvOpts {
    pub fn new(stride: usize, padding: usize) -> Self {
        ConvOpts { stride, padding, groups: 1 }
    }

    /// Stride 1 with the padding that preserves spatial size for odd kernels.
    pub fn same(kernel: usize) -> Self {
        ConvOpts { stride: 1, padding: kernel / 2, groups: 1 }
    }

    pub fn grouped(mut self, groups: usize) -> Self {
        self.groups = groups;
        self
    }
}

/// Gradients produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor4>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor4> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`, or zeros shaped like `like` when `v` did not influence the loss.
    pub fn get_or_zeros(&self, v: Var, like: &Tensor4) -> Tensor4 {
        self.get(v).cloned().unwrap_or_else(|| Tensor4::zeros(like.dims()))
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor4> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

/// Records a forward computation as a topologically ordered list of nodes,
/// each with a closure producing its parents' gradients.
///
/// A tape is built fresh for every forward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A trainable input.
    pub fn leaf(&mut self, t: Tensor4) -> Var {
        self.nodes.push(Node { value: t, parents: Vec::new(), backward: None, requires_grad: true });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, t: Tensor4) -> Var {
        self.nodes.push(Node { value: t, parents: Vec::new(), backward: None, requires_grad: false });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor4 {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor4, parents: Vec<usize>, backward: BackwardFn) -> Var {
        let requires_grad = parents.iter().any(|&p| self.nodes[p].requires_grad);
        let backward = if requires_grad { Some(backward) } else { None };
        self.nodes.push(Node { value, parents, backward, requires_grad });
        Var(self.nodes.len() - 1)
    }

    /// Reverse sweep from a single-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::Shape(format!(
                "backward needs a scalar loss, got dims {:?}",
                self.nodes[loss.0].value.dims()
            )));
        }
        let mut grads: Vec<Option<Tensor4>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor4::full(self.nodes[loss.0].value.dims(), 1.0));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            let Some(backward) = &node.backward else { continue };
            let Some(g) = grads[i].take() else { continue };
            let parent_grads = backward(&g, &self.nodes[..i]);
            for (&p, pg) in node.parents.iter().zip(parent_grads) {
                if !self.nodes[p].requires_grad {
                    continue;
                }
                match &mut grads[p] {
                    Some(acc) => acc.add_assign(&pg),
                    slot => *slot = Some(pg),
                }
            }
        }
        Ok(Gradients { grads })
    }

    fn same_dims(&self, a: Var, b: Var, op: &str) -> Result<[usize; 4]> {
        let (da, db) = (self.value(a).dims(), self.value(b).dims());
        if da != db {
            return Err(Error::Shape(format!("{op}: {da:?} vs {db:?}")));
        }
        Ok(da)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let dims = self.same_dims(a, b, "add")?;
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(x, y)| x + y).collect();
        let value = Tensor4::new(dims, data)?;
        Ok(self.push(value, vec![a.0, b.0], Box::new(|g, _| vec![g.clone(), g.clone()])))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let dims = self.same_dims(a, b, "mul")?;
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(x, y)| x * y).collect();
        let value = Tensor4::new(dims, data)?;
        let (ia, ib) = (a.0, b.0);
        Ok(self.push(
            value,
            vec![ia, ib],
            Box::new(move |g, nodes| {
                let (va, vb) = (&nodes[ia].value, &nodes[ib].value);
                let ga = g.data().iter().zip(vb.data()).map(|(g, y)| g * y).collect();
                let gb = g.data().iter().zip(va.data()).map(|(g, x)| g * x).collect();
                vec![Tensor4::new(dims, ga).unwrap(), Tensor4::new(dims, gb).unwrap()]
            }),
        ))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a);
        let value = Tensor4::new(v.dims(), v.data().iter().map(|x| x * c).collect()).unwrap();
        self.push(
            value,
            vec![a.0],
            Box::new(move |g, _| vec![Tensor4::new(g.dims(), g.data().iter().map(|x| x * c).collect()).unwrap()]),
        )
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let dims = v.dims();
        let value = Tensor4::scalar(v.data().iter().sum());
        self.push(value, vec![a.0], Box::new(move |g, _| vec![Tensor4::full(dims, g.item())]))
    }

    /// `sum_i a_i * c_i` against a constant vector.
    pub fn dot_const(&mut self, a: Var, c: &[f64]) -> Result<Var> {
        let v = self.value(a);
        if v.len() != c.len() {
            return Err(Error::Shape(format!("dot_const: {} vs {} values", v.len(), c.len())));
        }
        let dims = v.dims();
        let value = Tensor4::scalar(v.dot(&Tensor4::vector(c.to_vec())));
        let c = c.to_vec();
        Ok(self.push(
            value,
            vec![a.0],
            Box::new(move |g, _| vec![Tensor4::new(dims, c.iter().map(|x| x * g.item()).collect()).unwrap()]),
        ))
    }

    /// `max(x, 0)`; the subgradient at 0 is 0.
    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let value = Tensor4::new(v.dims(), v.data().iter().map(|&x| x.max(0.0)).collect()).unwrap();
        let ia = a.0;
        self.push(
            value,
            vec![ia],
            Box::new(move |g, nodes| {
                let x = &nodes[ia].value;
                let d = g.data().iter().zip(x.data()).map(|(g, &x)| if x > 0.0 { *g } else { 0.0 }).collect();
                vec![Tensor4::new(g.dims(), d).unwrap()]
            }),
        )
    }

    fn conv_geom(&self, x: Var, w: Var, opts: ConvOpts, op: &str) -> Result<ConvGeom> {
        let [n, c, h, wd] = self.value(x).dims();
        let [m, cg, r, s] = self.value(w).dims();
        let groups = opts.groups.max(1);
        if c % groups != 0 || m % groups != 0 || cg * groups != c {
            return Err(Error::Shape(format!(
                "{op}: input has {c} channels, kernel is {m}x{cg}x{r}x{s} with {groups} groups"
            )));
        }
        if opts.stride == 0 || h + 2 * opts.padding < r || wd + 2 * opts.padding < s {
            return Err(Error::Shape(format!(
                "{op}: {h}x{wd} input with padding {} is smaller than the {r}x{s} kernel",
                opts.padding
            )));
        }
        let e = (h + 2 * opts.padding - r) / opts.stride + 1;
        let f = (wd + 2 * opts.padding - s) / opts.stride + 1;
        Ok(ConvGeom { n, c, h, w: wd, m, r, s, stride: opts.stride, pad: opts.padding, groups, e, f })
    }

    fn check_bias(&self, b: Option<Var>, channels: usize, op: &str) -> Result<()> {
        if let Some(b) = b {
            if self.value(b).len() != channels {
                return Err(Error::Shape(format!(
                    "{op}: bias has {} values for {channels} channels",
                    self.value(b).len()
                )));
            }
        }
        Ok(())
    }

    /// Grouped 2-D cross-correlation with zero padding, plus an optional bias.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, opts: ConvOpts) -> Result<Var> {
        let g = self.conv_geom(x, w, opts, "conv2d")?;
        self.check_bias(b, g.m, "conv2d")?;
        let mut out = kernels::conv_forward(self.value(x).data(), self.value(w).data(), &g);
        let ef = g.e * g.f;
        if let Some(b) = b {
            let bias = self.value(b).data();
            for (i, chunk) in out.chunks_mut(ef).enumerate() {
                let bv = bias[i % g.m];
                chunk.iter_mut().for_each(|v| *v += bv);
            }
        }
        let value = Tensor4::new([g.n, g.m, g.e, g.f], out)?;
        let (ix, iw) = (x.0, w.0);
        let mut parents = vec![ix, iw];
        parents.extend(b.map(|b| b.0));
        let (xdims, wdims, has_bias) = ([g.n, g.c, g.h, g.w], self.value(w).dims(), b.is_some());
        Ok(self.push(
            value,
            parents,
            Box::new(move |gout, nodes| {
                let gx = if nodes[ix].requires_grad {
                    kernels::conv_backward_input(gout.data(), nodes[iw].value.data(), &g)
                } else {
                    vec![0.0; xdims.iter().product()]
                };
                let gw = kernels::conv_backward_weight(gout.data(), nodes[ix].value.data(), &g);
                let mut out = vec![Tensor4::new(xdims, gx).unwrap(), Tensor4::new(wdims, gw).unwrap()];
                if has_bias {
                    out.push(Tensor4::vector(kernels::bias_grad(gout.data(), g.n, g.m, ef)));
                }
                out
            }),
        ))
    }

    /// Transposed convolution: the adjoint of [`Tape::conv2d`] with the same
    /// `(m, c, r, s)` kernel, mapping `m` input channels to `c` outputs.
    pub fn conv_transpose2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, padding: usize) -> Result<Var> {
        let [n, m_in, h, wd] = self.value(x).dims();
        let wdims @ [m, c, r, s] = self.value(w).dims();
        if m != m_in {
            return Err(Error::Shape(format!("conv_transpose2d: input has {m_in} channels, kernel expects {m}")));
        }
        if stride == 0
            || h == 0
            || wd == 0
            || (h - 1) * stride + r < 2 * padding + 1
            || (wd - 1) * stride + s < 2 * padding + 1
        {
            return Err(Error::Shape("conv_transpose2d: output would be empty".into()));
        }
        let ho = (h - 1) * stride + r - 2 * padding;
        let wo = (wd - 1) * stride + s - 2 * padding;
        let g = ConvGeom { n, c, h: ho, w: wo, m, r, s, stride, pad: padding, groups: 1, e: h, f: wd };
        self.check_bias(b, c, "conv_transpose2d")?;
        let mut out = kernels::conv_backward_input(self.value(x).data(), self.value(w).data(), &g);
        let plane = ho * wo;
        if let Some(b) = b {
            let bias = self.value(b).data();
            for (i, chunk) in out.chunks_mut(plane).enumerate() {
                let bv = bias[i % c];
                chunk.iter_mut().for_each(|v| *v += bv);
            }
        }
        let value = Tensor4::new([n, c, ho, wo], out)?;
        let (ix, iw) = (x.0, w.0);
        let mut parents = vec![ix, iw];
        parents.extend(b.map(|b| b.0));
        let (xdims, has_bias) = ([n, m, h, wd], b.is_some());
        Ok(self.push(
            value,
            parents,
            Box::new(move |gout, nodes| {
                let gx = if nodes[ix].requires_grad {
                    kernels::conv_forward(gout.data(), nodes[iw].value.data(), &g)
                } else {
                    vec![0.0; xdims.iter().product()]
                };
                let gw = kernels::conv_backward_weight(nodes[ix].value.data(), gout.data(), &g);
                let mut out = vec![Tensor4::new(xdims, gx).unwrap(), Tensor4::new(wdims, gw).unwrap()];
                if has_bias {
                    out.push(Tensor4::vector(kernels::bias_grad(gout.data(), n, c, plane)));
                }
                out
            }),
        ))
    }

    /// Max pooling without padding; gradients go to the first maximal element
    /// in row-major window order.
    pub fn maxpool2d(&mut self, x: Var, kernel: usize, stride: usize) -> Result<Var> {
        let dims @ [n, c, h, w] = self.value(x).dims();
        if kernel == 0 || stride == 0 || h < kernel || w < kernel {
            return Err(Error::Shape(format!("maxpool2d: {h}x{w} input, kernel {kernel}, stride {stride}")));
        }
        let (ho, wo) = ((h - kernel) / stride + 1, (w - kernel) / stride + 1);
        let xv = self.value(x).data();
        let mut out = Vec::with_capacity(n * c * ho * wo);
        let mut argmax = Vec::with_capacity(n * c * ho * wo);
        for nc in 0..n * c {
            let plane = &xv[nc * h * w..(nc + 1) * h * w];
            for i in 0..ho {
                for j in 0..wo {
                    let mut best = (f64::NEG_INFINITY, 0);
                    for a in 0..kernel {
                        for b in 0..kernel {
                            let idx = (i * stride + a) * w + j * stride + b;
                            if plane[idx] > best.0 {
                                best = (plane[idx], idx);
                            }
                        }
                    }
                    out.push(best.0);
                    argmax.push(nc * h * w + best.1);
                }
            }
        }
        let value = Tensor4::new([n, c, ho, wo], out)?;
        Ok(self.push(
            value,
            vec![x.0],
            Box::new(move |g, _| {
                let mut gx = Tensor4::zeros(dims);
                for (gv, &idx) in g.data().iter().zip(&argmax) {
                    gx.data_mut()[idx] += gv;
                }
                vec![gx]
            }),
        ))
    }

    /// Nearest-neighbour upsampling by an integer factor.
    pub fn upsample_nearest(&mut self, x: Var, factor: usize) -> Result<Var> {
        if factor == 0 {
            return Err(Error::Param("upsample factor must be positive".into()));
        }
        let dims @ [n, c, h, w] = self.value(x).dims();
        let (ho, wo) = (h * factor, w * factor);
        let xv = self.value(x).data();
        let mut out = vec![0.0; n * c * ho * wo];
        for nc in 0..n * c {
            for i in 0..ho {
                for j in 0..wo {
                    out[nc * ho * wo + i * wo + j] = xv[nc * h * w + (i / factor) * w + j / factor];
                }
            }
        }
        let value = Tensor4::new([n, c, ho, wo], out)?;
        Ok(self.push(
            value,
            vec![x.0],
            Box::new(move |g, _| {
                let mut gx = Tensor4::zeros(dims);
                let gd = g.data();
                for nc in 0..n * c {
                    for i in 0..ho {
                        for j in 0..wo {
                            gx.data_mut()[nc * h * w + (i / factor) * w + j / factor] += gd[nc * ho * wo + i * wo + j];
                        }
                    }
                }
                vec![gx]
            }),
        ))
    }

    /// `sum_k weights[k] * xs[k]` for a `(1, K, 1, 1)` weight vector.
    pub fn weighted_sum(&mut self, xs: &[Var], weights: Var) -> Result<Var> {
        if xs.is_empty() || self.value(weights).len() != xs.len() {
            return Err(Error::Shape(format!(
                "weighted_sum: {} inputs, {} weights",
                xs.len(),
                self.value(weights).len()
            )));
        }
        let dims = self.value(xs[0]).dims();
        for &x in xs {
            if self.value(x).dims() != dims {
                return Err(Error::Shape(format!("weighted_sum: {:?} vs {dims:?}", self.value(x).dims())));
            }
        }
        let wv = self.value(weights).data().to_vec();
        let mut out = vec![0.0; dims.iter().product()];
        for (&x, &wk) in xs.iter().zip(&wv) {
            for (o, v) in out.iter_mut().zip(self.value(x).data()) {
                *o += wk * v;
            }
        }
        let value = Tensor4::new(dims, out)?;
        let ids: Vec<usize> = xs.iter().map(|x| x.0).collect();
        let iw = weights.0;
        let mut parents = ids.clone();
        parents.push(iw);
        let wdims = self.value(weights).dims();
        Ok(self.push(
            value,
            parents,
            Box::new(move |g, nodes| {
                let mut grads: Vec<Tensor4> = wv
                    .iter()
                    .map(|&wk| Tensor4::new(dims, g.data().iter().map(|v| wk * v).collect()).unwrap())
                    .collect();
                let gw = ids.iter().map(|&i| g.dot(&nodes[i].value)).collect();
                grads.push(Tensor4::new(wdims, gw).unwrap());
                grads
            }),
        ))
    }

    /// `softmax((logits + noise) / tau)` with the noise held constant.
    pub fn softmax_with_noise(&mut self, logits: Var, noise: &[f64], tau: f64) -> Result<Var> {
        let l = self.value(logits);
        if noise.len() != l.len() || !(tau > 0.0) {
            return Err(Error::Param(format!("softmax: {} logits, {} noise terms, tau {tau}", l.len(), noise.len())));
        }
        let dims = l.dims();
        let y = softmax_tempered(l.data(), noise, tau);
        let value = Tensor4::new(dims, y.clone())?;
        Ok(self.push(
            value,
            vec![logits.0],
            Box::new(move |g, _| {
                let gy: f64 = g.data().iter().zip(&y).map(|(a, b)| a * b).sum();
                let d = y.iter().zip(g.data()).map(|(yi, gi)| yi * (gi - gy) / tau).collect();
                vec![Tensor4::new(dims, d).unwrap()]
            }),
        ))
    }

    pub fn softmax(&mut self, logits: Var) -> Result<Var> {
        let zeros = vec![0.0; self.value(logits).len()];
        self.softmax_with_noise(logits, &zeros, 1.0)
    }

    /// Soft Gumbel-Softmax sample: fresh Gumbel noise, differentiable in the logits.
    pub fn gumbel_softmax<R: Rng + ?Sized>(&mut self, logits: Var, tau: f64, rng: &mut R) -> Result<Var> {
        let noise = gumbel_noise(self.value(logits).len(), rng);
        self.softmax_with_noise(logits, &noise, tau)
    }

    /// Negative Pearson correlation between each flattened prediction sample
    /// and its target, averaged over the batch.
    ///
    /// Samples whose target or prediction has zero variance contribute 0 and
    /// no gradient; the returned flag reports whether that happened.
    pub fn pearson_loss(&mut self, pred: Var, target: &Tensor4) -> Result<(Var, bool)> {
        let dims = self.value(pred).dims();
        if dims != target.dims() {
            return Err(Error::Shape(format!("pearson_loss: {dims:?} vs {:?}", target.dims())));
        }
        let n = dims[0];
        let p = self.value(pred);
        let mut loss = 0.0;
        let mut degenerate = false;
        let mut grad = vec![0.0; p.len()];
        for i in 0..n {
            let (x, y) = (p.sample(i), target.sample(i));
            let len = x.len() as f64;
            let mx = x.iter().sum::<f64>() / len;
            let my = y.iter().sum::<f64>() / len;
            let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
            for (a, b) in x.iter().zip(y) {
                sxy += (a - mx) * (b - my);
                sxx += (a - mx) * (a - mx);
                syy += (b - my) * (b - my);
            }
            if sxx == 0.0 || syy == 0.0 {
                degenerate = true;
                continue;
            }
            let (na, nb) = (sxx.sqrt(), syy.sqrt());
            let r = sxy / (na * nb);
            loss -= r / n as f64;
            let g = &mut grad[i * x.len()..(i + 1) * x.len()];
            for ((gi, a), b) in g.iter_mut().zip(x).zip(y) {
                // d r / d x_i = b_i / (|a| |b|) - r a_i / |a|^2, centred terms
                *gi = -((b - my) / (na * nb) - r * (a - mx) / sxx) / n as f64;
            }
        }
        let value = Tensor4::scalar(loss);
        let var = self.push(
            value,
            vec![pred.0],
            Box::new(move |g, _| vec![Tensor4::new(dims, grad.iter().map(|v| v * g.item()).collect()).unwrap()]),
        );
        Ok((var, degenerate))
    }
}
