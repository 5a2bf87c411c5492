//! im2col/GEMM convolution kernels shared by the forward and backward passes.

/// Geometry of a grouped 2-D convolution, `(n, c, h, w) -> (n, m, e, f)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub m: usize,
    pub r: usize,
    pub s: usize,
    pub stride: usize,
    pub pad: usize,
    pub groups: usize,
    pub e: usize,
    pub f: usize,
}

impl ConvGeom {
    fn cols(&self) -> usize {
        self.n * self.e * self.f
    }

    fn cg(&self) -> usize {
        self.c / self.groups
    }

    fn mg(&self) -> usize {
        self.m / self.groups
    }

    /// Rows of the im2col matrix per group.
    fn krows(&self) -> usize {
        self.cg() * self.r * self.s
    }
}

/// `c = a * b + beta * c`, all operands described by row/column strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
    (rsc, csc): (usize, usize),
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(k == 0 || (m - 1) * rsa + (k - 1) * csa < a.len());
    assert!(k == 0 || (k - 1) * rsb + (n - 1) * csb < b.len());
    assert!((m - 1) * rsc + (n - 1) * csc < c.len());
    // SAFETY: the asserts above bound every element the kernel touches.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

/// Unfold `x` into a `(c*r*s) x (n*e*f)` matrix.
pub(crate) fn im2col(x: &[f64], g: &ConvGeom) -> Vec<f64> {
    let cols = g.cols();
    let ef = g.e * g.f;
    let mut col = vec![0.0; g.c * g.r * g.s * cols];
    for ci in 0..g.c {
        for kr in 0..g.r {
            for ks in 0..g.s {
                let row = (ci * g.r + kr) * g.s + ks;
                let dst = &mut col[row * cols..(row + 1) * cols];
                for ni in 0..g.n {
                    let src = &x[(ni * g.c + ci) * g.h * g.w..(ni * g.c + ci + 1) * g.h * g.w];
                    for e in 0..g.e {
                        let hi = (e * g.stride + kr) as isize - g.pad as isize;
                        if hi < 0 || hi >= g.h as isize {
                            continue;
                        }
                        let srow = &src[hi as usize * g.w..(hi as usize + 1) * g.w];
                        let base = ni * ef + e * g.f;
                        for f in 0..g.f {
                            let wi = (f * g.stride + ks) as isize - g.pad as isize;
                            if wi >= 0 && wi < g.w as isize {
                                dst[base + f] = srow[wi as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    col
}

/// Adjoint of [`im2col`]: scatter-add columns back into an `(n, c, h, w)` buffer.
pub(crate) fn col2im(col: &[f64], g: &ConvGeom) -> Vec<f64> {
    let cols = g.cols();
    let ef = g.e * g.f;
    let mut x = vec![0.0; g.n * g.c * g.h * g.w];
    for ci in 0..g.c {
        for kr in 0..g.r {
            for ks in 0..g.s {
                let row = (ci * g.r + kr) * g.s + ks;
                let src = &col[row * cols..(row + 1) * cols];
                for ni in 0..g.n {
                    let dst = &mut x[(ni * g.c + ci) * g.h * g.w..(ni * g.c + ci + 1) * g.h * g.w];
                    for e in 0..g.e {
                        let hi = (e * g.stride + kr) as isize - g.pad as isize;
                        if hi < 0 || hi >= g.h as isize {
                            continue;
                        }
                        let base = ni * ef + e * g.f;
                        for f in 0..g.f {
                            let wi = (f * g.stride + ks) as isize - g.pad as isize;
                            if wi >= 0 && wi < g.w as isize {
                                dst[hi as usize * g.w + wi as usize] += src[base + f];
                            }
                        }
                    }
                }
            }
        }
    }
    x
}

/// `(n, m, e*f)` <-> `(m, n*e*f)`.
fn batch_to_channel_major(t: &[f64], n: usize, m: usize, ef: usize) -> Vec<f64> {
    let mut out = vec![0.0; t.len()];
    for ni in 0..n {
        for mi in 0..m {
            out[mi * n * ef + ni * ef..mi * n * ef + (ni + 1) * ef]
                .copy_from_slice(&t[(ni * m + mi) * ef..(ni * m + mi + 1) * ef]);
        }
    }
    out
}

fn channel_to_batch_major(t: &[f64], n: usize, m: usize, ef: usize) -> Vec<f64> {
    let mut out = vec![0.0; t.len()];
    for ni in 0..n {
        for mi in 0..m {
            out[(ni * m + mi) * ef..(ni * m + mi + 1) * ef]
                .copy_from_slice(&t[mi * n * ef + ni * ef..mi * n * ef + (ni + 1) * ef]);
        }
    }
    out
}

/// `y[n, m] = sum_k W[m, k] * col[k, n]`, without bias. Returns `(n, m, e, f)`.
pub(crate) fn conv_forward(x: &[f64], w: &[f64], g: &ConvGeom) -> Vec<f64> {
    let col = im2col(x, g);
    let cols = g.cols();
    let (kr, mg) = (g.krows(), g.mg());
    let mut out = vec![0.0; g.m * cols];
    for gi in 0..g.groups {
        gemm(
            mg,
            kr,
            cols,
            &w[gi * mg * kr..],
            (kr, 1),
            &col[gi * kr * cols..],
            (cols, 1),
            0.0,
            &mut out[gi * mg * cols..],
            (cols, 1),
        );
    }
    channel_to_batch_major(&out, g.n, g.m, g.e * g.f)
}

/// Gradient of the convolution with respect to its input.
pub(crate) fn conv_backward_input(gout: &[f64], w: &[f64], g: &ConvGeom) -> Vec<f64> {
    let gmat = batch_to_channel_major(gout, g.n, g.m, g.e * g.f);
    let cols = g.cols();
    let (kr, mg) = (g.krows(), g.mg());
    let mut dcol = vec![0.0; g.c * g.r * g.s * cols];
    for gi in 0..g.groups {
        gemm(
            kr,
            mg,
            cols,
            &w[gi * mg * kr..],
            (1, kr),
            &gmat[gi * mg * cols..],
            (cols, 1),
            0.0,
            &mut dcol[gi * kr * cols..],
            (cols, 1),
        );
    }
    col2im(&dcol, g)
}

/// Gradient of the convolution with respect to its `(m, c/groups, r, s)` kernel.
pub(crate) fn conv_backward_weight(gout: &[f64], x: &[f64], g: &ConvGeom) -> Vec<f64> {
    let gmat = batch_to_channel_major(gout, g.n, g.m, g.e * g.f);
    let col = im2col(x, g);
    let cols = g.cols();
    let (kr, mg) = (g.krows(), g.mg());
    let mut dw = vec![0.0; g.m * kr];
    for gi in 0..g.groups {
        gemm(
            mg,
            cols,
            kr,
            &gmat[gi * mg * cols..],
            (cols, 1),
            &col[gi * kr * cols..],
            (1, cols),
            0.0,
            &mut dw[gi * mg * kr..],
            (kr, 1),
        );
    }
    dw
}

/// Per-output-channel sums of an `(n, m, e, f)` gradient.
pub(crate) fn bias_grad(gout: &[f64], n: usize, m: usize, ef: usize) -> Vec<f64> {
    let mut db = vec![0.0; m];
    for ni in 0..n {
        for (mi, d) in db.iter_mut().enumerate() {
            *d += gout[(ni * m + mi) * ef..(ni * m + mi + 1) * ef].iter().sum::<f64>();
        }
    }
    db
}
