//! 2-D cross-correlation with stride, zero padding and dilation.
//!
//! Lowered to GEMM through an im2col buffer per sample. The column buffer is
//! rebuilt during the backward pass instead of being kept alive with the graph.

use crate::error::{Error, Result};

use super::ops::dims4;
use super::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dArgs {
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
}

impl Default for Conv2dArgs {
    fn default() -> Self {
        Self {
            stride: 1,
            padding: 0,
            dilation: 1,
        }
    }
}

impl Conv2dArgs {
    pub fn new(stride: usize, padding: usize, dilation: usize) -> Self {
        Self {
            stride,
            padding,
            dilation,
        }
    }

    /// Output extent along one axis, or `None` if the kernel does not fit.
    pub fn out_len(&self, input: usize, kernel: usize) -> Option<usize> {
        let span = self.dilation * (kernel - 1) + 1;
        let padded = input + 2 * self.padding;
        if padded < span {
            return None;
        }
        Some((padded - span) / self.stride + 1)
    }
}

#[derive(Clone, Copy)]
struct Geometry {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    args: Conv2dArgs,
}

impl Geometry {
    fn rows(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn cols(&self) -> usize {
        self.oh * self.ow
    }

    fn im2col(&self, img: &[f32], cols: &mut [f32]) {
        let Conv2dArgs {
            stride,
            padding,
            dilation,
        } = self.args;
        let p = self.cols();
        for c in 0..self.c {
            let plane = &img[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (c * self.kh + ki) * self.kw + kj;
                    let dst = &mut cols[row * p..(row + 1) * p];
                    for oy in 0..self.oh {
                        let iy = (oy * stride + ki * dilation) as isize - padding as isize;
                        let line = &mut dst[oy * self.ow..(oy + 1) * self.ow];
                        if iy < 0 || iy >= self.h as isize {
                            line.fill(0.0);
                            continue;
                        }
                        let src = &plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        for (ox, v) in line.iter_mut().enumerate() {
                            let ix = (ox * stride + kj * dilation) as isize - padding as isize;
                            *v = if ix < 0 || ix >= self.w as isize {
                                0.0
                            } else {
                                src[ix as usize]
                            };
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, cols: &[f32], img: &mut [f32]) {
        let Conv2dArgs {
            stride,
            padding,
            dilation,
        } = self.args;
        let p = self.cols();
        for c in 0..self.c {
            let plane = &mut img[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (c * self.kh + ki) * self.kw + kj;
                    let src = &cols[row * p..(row + 1) * p];
                    for oy in 0..self.oh {
                        let iy = (oy * stride + ki * dilation) as isize - padding as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        for ox in 0..self.ow {
                            let ix = (ox * stride + kj * dilation) as isize - padding as isize;
                            if ix >= 0 && ix < self.w as isize {
                                dst[ix as usize] += src[oy * self.ow + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Row-major `c[m×n] = beta·c + a[m×k]·b[k×n]` with explicit strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    (rsa, csa): (usize, usize),
    b: &[f32],
    (rsb, csb): (usize, usize),
    beta: f32,
    c: &mut [f32],
) {
    debug_assert!(a.len() >= (m - 1) * rsa + (k - 1) * csa + 1);
    debug_assert!(b.len() >= (k - 1) * rsb + (n - 1) * csb + 1);
    debug_assert!(c.len() >= m * n);
    // SAFETY: the asserted slice lengths cover every strided access made by
    // sgemm for the given dimensions and strides.
    unsafe {
        matrixmultiply::sgemm(
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
            n as isize,
            1,
        );
    }
}

/// `input: [N, C, H, W]`, `kernel: [O, C, kH, kW]`, `bias: [O]`.
pub fn conv2d(input: &Tensor, kernel: &Tensor, bias: Option<&Tensor>, args: Conv2dArgs) -> Result<Tensor> {
    let [n, c, h, w] = dims4("conv2d", input)?;
    let [o, kc, kh, kw] = dims4("conv2d", kernel)?;
    if kc != c {
        return Err(Error::ShapeMismatch {
            op: "conv2d",
            left: input.shape().to_vec(),
            right: kernel.shape().to_vec(),
        });
    }
    if let Some(b) = bias {
        if b.shape() != [o] {
            return Err(Error::ShapeMismatch {
                op: "conv2d bias",
                left: kernel.shape().to_vec(),
                right: b.shape().to_vec(),
            });
        }
    }
    if args.stride == 0 || args.dilation == 0 {
        return Err(Error::invalid("conv2d: stride and dilation must be positive"));
    }
    let (oh, ow) = match (args.out_len(h, kh), args.out_len(w, kw)) {
        (Some(oh), Some(ow)) => (oh, ow),
        _ => {
            return Err(Error::ShapeMismatch {
                op: "conv2d (kernel larger than padded input)",
                left: input.shape().to_vec(),
                right: kernel.shape().to_vec(),
            })
        }
    };
    let geo = Geometry {
        c,
        h,
        w,
        kh,
        kw,
        oh,
        ow,
        args,
    };
    let (k, p) = (geo.rows(), geo.cols());
    let mut out = vec![0.0f32; n * o * p];
    {
        let x = input.data();
        let wt = kernel.data();
        let mut cols = vec![0.0f32; k * p];
        for i in 0..n {
            geo.im2col(&x[i * c * h * w..(i + 1) * c * h * w], &mut cols);
            let dst = &mut out[i * o * p..(i + 1) * o * p];
            if let Some(b) = bias {
                for (row, &bv) in dst.chunks_mut(p).zip(b.data().iter()) {
                    row.fill(bv);
                }
            }
            gemm(o, k, p, &wt, (k, 1), &cols, (p, 1), 1.0, dst);
        }
    }

    let mut parents = vec![input.clone(), kernel.clone()];
    if let Some(b) = bias {
        parents.push(b.clone());
    }
    Ok(Tensor::from_op(
        vec![n, o, oh, ow],
        out,
        parents,
        Box::new(move |g, ps| {
            let want_x = ps[0].requires_grad();
            let want_w = ps[1].requires_grad();
            let x = ps[0].data();
            let wt = ps[1].data();
            let mut gx = want_x.then(|| vec![0.0f32; n * c * h * w]);
            let mut gw = want_w.then(|| vec![0.0f32; o * k]);
            let mut cols = vec![0.0f32; k * p];
            for i in 0..n {
                let gout = &g[i * o * p..(i + 1) * o * p];
                if let Some(gw) = gw.as_mut() {
                    geo.im2col(&x[i * c * h * w..(i + 1) * c * h * w], &mut cols);
                    // dW += gout · colsᵀ
                    gemm(o, p, k, gout, (p, 1), &cols, (1, p), 1.0, gw);
                }
                if let Some(gx) = gx.as_mut() {
                    // dcols = Wᵀ · gout
                    gemm(k, o, p, &wt, (1, k), gout, (p, 1), 0.0, &mut cols);
                    geo.col2im(&cols, &mut gx[i * c * h * w..(i + 1) * c * h * w]);
                }
            }
            let mut res = vec![gx, gw];
            if ps.len() == 3 {
                let mut gb = vec![0.0f32; o];
                for i in 0..n {
                    for (j, gbj) in gb.iter_mut().enumerate() {
                        let base = (i * o + j) * p;
                        *gbj += g[base..base + p].iter().sum::<f32>();
                    }
                }
                res.push(Some(gb));
            }
            res
        }),
    ))
}
