//! im2col convolution kernels over raw row-major slices.
//!
//! Layout is NCHW for activations and KCHW for kernels. Each image is
//! lowered to a `[C*kh*kw, Ho*Wo]` column matrix so forward and both
//! backward products are plain GEMMs.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_h(&self) -> usize {
        (self.h + 2 * self.pad - self.kh) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.w + 2 * self.pad - self.kw) / self.stride + 1
    }

    pub fn col_rows(&self) -> usize {
        self.c * self.kh * self.kw
    }

    pub fn col_cols(&self) -> usize {
        self.out_h() * self.out_w()
    }

    fn in_image(&self) -> usize {
        self.c * self.h * self.w
    }

    fn out_image(&self) -> usize {
        self.k * self.col_cols()
    }
}

/// Plain `C = alpha * op(A) * op(B) + beta * C` with explicit strides.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: isize,
    csa: isize,
    b: &[f64],
    rsb: isize,
    csb: isize,
    beta: f64,
    c: &mut [f64],
    rsc: isize,
    csc: isize,
) {
    debug_assert!(c.len() >= m * n);
    // SAFETY: callers pass slices whose extents cover every strided access
    // for the given m/k/n, and `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            rsc,
            csc,
        );
    }
}

fn im2col(g: &ConvGeom, img: &[f64], cols: &mut [f64]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let p = oh * ow;
    for c in 0..g.c {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..oh {
                    let y = (oy * g.stride + ki) as isize - g.pad as isize;
                    let line = &mut dst[oy * ow..(oy + 1) * ow];
                    if y < 0 || y >= g.h as isize {
                        line.fill(0.0);
                        continue;
                    }
                    let src = &img[(c * g.h + y as usize) * g.w..][..g.w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let x = (ox * g.stride + kj) as isize - g.pad as isize;
                        *v = if x < 0 || x >= g.w as isize {
                            0.0
                        } else {
                            src[x as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im_add(g: &ConvGeom, cols: &[f64], img: &mut [f64]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let p = oh * ow;
    for c in 0..g.c {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..oh {
                    let y = (oy * g.stride + ki) as isize - g.pad as isize;
                    if y < 0 || y >= g.h as isize {
                        continue;
                    }
                    let dst = &mut img[(c * g.h + y as usize) * g.w..][..g.w];
                    for ox in 0..ow {
                        let x = (ox * g.stride + kj) as isize - g.pad as isize;
                        if x >= 0 && x < g.w as isize {
                            dst[x as usize] += src[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Returns `(output, cols)`; `cols` is the per-image lowered input kept for backward.
pub(crate) fn conv_forward(
    g: &ConvGeom,
    input: &[f64],
    kernel: &[f64],
    bias: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let rows = g.col_rows();
    let p = g.col_cols();
    let mut cols = vec![0.0; g.n * rows * p];
    let mut out = vec![0.0; g.n * g.out_image()];
    for n in 0..g.n {
        let col = &mut cols[n * rows * p..(n + 1) * rows * p];
        im2col(g, &input[n * g.in_image()..(n + 1) * g.in_image()], col);
        let o = &mut out[n * g.out_image()..(n + 1) * g.out_image()];
        for (k, chunk) in o.chunks_mut(p).enumerate() {
            chunk.fill(bias[k]);
        }
        gemm(
            g.k, rows, p, kernel, rows as isize, 1, col, p as isize, 1, 1.0, o, p as isize, 1,
        );
    }
    (out, cols)
}

/// Accumulates gradients for input, kernel and bias given the output gradient.
pub(crate) fn conv_backward(
    g: &ConvGeom,
    cols: &[f64],
    kernel: &[f64],
    dout: &[f64],
    dinput: Option<&mut [f64]>,
    dkernel: Option<&mut [f64]>,
    dbias: Option<&mut [f64]>,
) {
    let rows = g.col_rows();
    let p = g.col_cols();
    if let Some(db) = dbias {
        for n in 0..g.n {
            let o = &dout[n * g.out_image()..(n + 1) * g.out_image()];
            for (k, chunk) in o.chunks(p).enumerate() {
                db[k] += chunk.iter().sum::<f64>();
            }
        }
    }
    if let Some(dk) = dkernel {
        for n in 0..g.n {
            let o = &dout[n * g.out_image()..(n + 1) * g.out_image()];
            let col = &cols[n * rows * p..(n + 1) * rows * p];
            // dK[K, rows] += dO[K, P] * cols^T[P, rows]
            gemm(
                g.k, p, rows, o, p as isize, 1, col, 1, p as isize, 1.0, dk, rows as isize, 1,
            );
        }
    }
    if let Some(di) = dinput {
        let mut dcol = vec![0.0; rows * p];
        for n in 0..g.n {
            let o = &dout[n * g.out_image()..(n + 1) * g.out_image()];
            // dcols[rows, P] = K^T[rows, K] * dO[K, P]
            gemm(
                rows, g.k, p, kernel, 1, rows as isize, o, p as isize, 1, 0.0, &mut dcol,
                p as isize, 1,
            );
            col2im_add(g, &dcol, &mut di[n * g.in_image()..(n + 1) * g.in_image()]);
        }
    }
}
