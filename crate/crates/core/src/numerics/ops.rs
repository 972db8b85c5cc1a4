//! Differentiable elementwise, layout and reduction operations (NCHW).

use crate::error::{Error, Result};

use super::tensor::Tensor;

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            op,
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    Ok(())
}

pub(crate) fn dims4(op: &'static str, t: &Tensor) -> Result<[usize; 4]> {
    match *t.shape() {
        [n, c, h, w] => Ok([n, c, h, w]),
        _ => Err(Error::invalid(format!(
            "{op}: expected a rank-4 NCHW tensor, got shape {:?}",
            t.shape()
        ))),
    }
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    same_shape("add", a, b)?;
    let data = {
        let (x, y) = (a.data(), b.data());
        x.iter().zip(y.iter()).map(|(p, q)| p + q).collect()
    };
    Ok(Tensor::from_op(
        a.shape().to_vec(),
        data,
        vec![a.clone(), b.clone()],
        Box::new(|g, _| vec![Some(g.to_vec()), Some(g.to_vec())]),
    ))
}

pub fn sub(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    same_shape("sub", a, b)?;
    let data = {
        let (x, y) = (a.data(), b.data());
        x.iter().zip(y.iter()).map(|(p, q)| p - q).collect()
    };
    Ok(Tensor::from_op(
        a.shape().to_vec(),
        data,
        vec![a.clone(), b.clone()],
        Box::new(|g, _| vec![Some(g.to_vec()), Some(g.iter().map(|v| -v).collect())]),
    ))
}

pub fn mul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    same_shape("mul", a, b)?;
    let data = {
        let (x, y) = (a.data(), b.data());
        x.iter().zip(y.iter()).map(|(p, q)| p * q).collect()
    };
    Ok(Tensor::from_op(
        a.shape().to_vec(),
        data,
        vec![a.clone(), b.clone()],
        Box::new(|g, ps| {
            let (x, y) = (ps[0].data(), ps[1].data());
            let ga = g.iter().zip(y.iter()).map(|(g, y)| g * y).collect();
            let gb = g.iter().zip(x.iter()).map(|(g, x)| g * x).collect();
            vec![Some(ga), Some(gb)]
        }),
    ))
}

pub fn scale(a: &Tensor, s: f32) -> Tensor {
    let data = a.data().iter().map(|v| v * s).collect();
    Tensor::from_op(
        a.shape().to_vec(),
        data,
        vec![a.clone()],
        Box::new(move |g, _| vec![Some(g.iter().map(|v| v * s).collect())]),
    )
}

/// Multiplies every element of sample `n` (leading axis) by `coeffs[n]`.
pub fn scale_per_sample(a: &Tensor, coeffs: &[f32]) -> Result<Tensor> {
    let n = a.shape()[0];
    if coeffs.len() != n {
        return Err(Error::ShapeMismatch {
            op: "scale_per_sample",
            left: a.shape().to_vec(),
            right: vec![coeffs.len()],
        });
    }
    let per = a.numel() / n;
    let coeffs = coeffs.to_vec();
    let data = a
        .data()
        .chunks(per)
        .zip(&coeffs)
        .flat_map(|(chunk, &c)| chunk.iter().map(move |v| v * c))
        .collect();
    Ok(Tensor::from_op(
        a.shape().to_vec(),
        data,
        vec![a.clone()],
        Box::new(move |g, _| {
            let ga = g
                .chunks(per)
                .zip(&coeffs)
                .flat_map(|(chunk, &c)| chunk.iter().map(move |v| v * c))
                .collect();
            vec![Some(ga)]
        }),
    ))
}

fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

pub fn silu(a: &Tensor) -> Tensor {
    let data = a.data().iter().map(|&x| x * sigmoid(x)).collect();
    Tensor::from_op(
        a.shape().to_vec(),
        data,
        vec![a.clone()],
        Box::new(|g, ps| {
            let x = ps[0].data();
            let ga = g
                .iter()
                .zip(x.iter())
                .map(|(g, &x)| {
                    let s = sigmoid(x);
                    g * s * (1.0 + x * (1.0 - s))
                })
                .collect();
            vec![Some(ga)]
        }),
    )
}

/// Channels of `a` followed by channels of `b`.
pub fn concat_channels(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let [n, ca, h, w] = dims4("concat_channels", a)?;
    let [nb, cb, hb, wb] = dims4("concat_channels", b)?;
    if (n, h, w) != (nb, hb, wb) {
        return Err(Error::ShapeMismatch {
            op: "concat_channels",
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    let plane = h * w;
    let (sa, sb) = (ca * plane, cb * plane);
    let mut data = Vec::with_capacity(n * (sa + sb));
    {
        let (x, y) = (a.data(), b.data());
        for i in 0..n {
            data.extend_from_slice(&x[i * sa..(i + 1) * sa]);
            data.extend_from_slice(&y[i * sb..(i + 1) * sb]);
        }
    }
    Ok(Tensor::from_op(
        vec![n, ca + cb, h, w],
        data,
        vec![a.clone(), b.clone()],
        Box::new(move |g, _| {
            let mut ga = Vec::with_capacity(n * sa);
            let mut gb = Vec::with_capacity(n * sb);
            for chunk in g.chunks(sa + sb) {
                ga.extend_from_slice(&chunk[..sa]);
                gb.extend_from_slice(&chunk[sa..]);
            }
            vec![Some(ga), Some(gb)]
        }),
    ))
}

/// Channels `start..start + len` of an NCHW tensor.
pub fn slice_channels(a: &Tensor, start: usize, len: usize) -> Result<Tensor> {
    let [n, c, h, w] = dims4("slice_channels", a)?;
    if len == 0 || start + len > c {
        return Err(Error::invalid(format!(
            "slice_channels: range {start}..{} out of bounds for {c} channels",
            start + len
        )));
    }
    let plane = h * w;
    let data = {
        let x = a.data();
        (0..n)
            .flat_map(|i| {
                let base = (i * c + start) * plane;
                x[base..base + len * plane].to_vec()
            })
            .collect()
    };
    Ok(Tensor::from_op(
        vec![n, len, h, w],
        data,
        vec![a.clone()],
        Box::new(move |g, _| {
            let mut ga = vec![0.0; n * c * plane];
            for i in 0..n {
                let dst = (i * c + start) * plane;
                let src = i * len * plane;
                ga[dst..dst + len * plane].copy_from_slice(&g[src..src + len * plane]);
            }
            vec![Some(ga)]
        }),
    ))
}

/// Nearest-neighbour upsampling; each pixel becomes a `factor`×`factor` block.
pub fn upsample_nearest(a: &Tensor, factor: usize) -> Result<Tensor> {
    let [n, c, h, w] = dims4("upsample_nearest", a)?;
    if factor == 0 {
        return Err(Error::invalid("upsample_nearest: factor must be >= 1"));
    }
    let (oh, ow) = (h * factor, w * factor);
    let mut data = vec![0.0; n * c * oh * ow];
    {
        let x = a.data();
        for p in 0..n * c {
            let src = &x[p * h * w..(p + 1) * h * w];
            let dst = &mut data[p * oh * ow..(p + 1) * oh * ow];
            for y in 0..oh {
                for xo in 0..ow {
                    dst[y * ow + xo] = src[(y / factor) * w + xo / factor];
                }
            }
        }
    }
    Ok(Tensor::from_op(
        vec![n, c, oh, ow],
        data,
        vec![a.clone()],
        Box::new(move |g, _| {
            let mut ga = vec![0.0; n * c * h * w];
            for p in 0..n * c {
                let src = &g[p * oh * ow..(p + 1) * oh * ow];
                let dst = &mut ga[p * h * w..(p + 1) * h * w];
                for y in 0..oh {
                    for xo in 0..ow {
                        dst[(y / factor) * w + xo / factor] += src[y * ow + xo];
                    }
                }
            }
            vec![Some(ga)]
        }),
    ))
}

/// `x · wᵀ + b` for `x: [N, I]`, `w: [O, I]`, `b: [O]`.
pub fn linear(x: &Tensor, weight: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
    let (n, i) = match *x.shape() {
        [n, i] => (n, i),
        _ => return Err(Error::invalid(format!("linear: input must be [N, I], got {:?}", x.shape()))),
    };
    let o = match *weight.shape() {
        [o, wi] if wi == i => o,
        _ => {
            return Err(Error::ShapeMismatch {
                op: "linear",
                left: x.shape().to_vec(),
                right: weight.shape().to_vec(),
            })
        }
    };
    if let Some(b) = bias {
        if b.shape() != [o] {
            return Err(Error::ShapeMismatch {
                op: "linear bias",
                left: weight.shape().to_vec(),
                right: b.shape().to_vec(),
            });
        }
    }
    let mut out = vec![0.0f32; n * o];
    {
        let (xd, wd) = (x.data(), weight.data());
        let bd = bias.map(|b| b.data());
        for r in 0..n {
            for k in 0..o {
                let mut acc = bd.as_ref().map_or(0.0, |b| b[k]);
                for j in 0..i {
                    acc += xd[r * i + j] * wd[k * i + j];
                }
                out[r * o + k] = acc;
            }
        }
    }
    let mut parents = vec![x.clone(), weight.clone()];
    if let Some(b) = bias {
        parents.push(b.clone());
    }
    Ok(Tensor::from_op(
        vec![n, o],
        out,
        parents,
        Box::new(move |g, ps| {
            let (xd, wd) = (ps[0].data(), ps[1].data());
            let mut gx = vec![0.0; n * i];
            let mut gw = vec![0.0; o * i];
            for r in 0..n {
                for k in 0..o {
                    let gv = g[r * o + k];
                    for j in 0..i {
                        gx[r * i + j] += gv * wd[k * i + j];
                        gw[k * i + j] += gv * xd[r * i + j];
                    }
                }
            }
            let mut res = vec![Some(gx), Some(gw)];
            if ps.len() == 3 {
                let mut gb = vec![0.0; o];
                for r in 0..n {
                    for k in 0..o {
                        gb[k] += g[r * o + k];
                    }
                }
                res.push(Some(gb));
            }
            res
        }),
    ))
}

/// Adds `bias[n, c]` to every pixel of channel `c` in sample `n`.
pub fn add_channel_bias(x: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let [n, c, h, w] = dims4("add_channel_bias", x)?;
    if bias.shape() != [n, c] {
        return Err(Error::ShapeMismatch {
            op: "add_channel_bias",
            left: x.shape().to_vec(),
            right: bias.shape().to_vec(),
        });
    }
    let plane = h * w;
    let data = {
        let (xd, bd) = (x.data(), bias.data());
        xd.chunks(plane)
            .zip(bd.iter())
            .flat_map(|(chunk, &b)| chunk.iter().map(move |v| v + b))
            .collect()
    };
    Ok(Tensor::from_op(
        x.shape().to_vec(),
        data,
        vec![x.clone(), bias.clone()],
        Box::new(move |g, _| {
            let gb = g.chunks(plane).map(|c| c.iter().sum::<f32>()).collect();
            vec![Some(g.to_vec()), Some(gb)]
        }),
    ))
}

/// Mean of all elements, accumulated in f64.
pub fn mean(a: &Tensor) -> Tensor {
    let n = a.numel();
    let m = a.data().iter().map(|&v| v as f64).sum::<f64>() / n as f64;
    Tensor::from_op(
        vec![1],
        vec![m as f32],
        vec![a.clone()],
        Box::new(move |g, _| vec![Some(vec![g[0] / n as f32; n])]),
    )
}

/// Mean of squared elements, accumulated in f64.
pub fn mean_square(a: &Tensor) -> Tensor {
    let n = a.numel();
    let m = a.data().iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>() / n as f64;
    Tensor::from_op(
        vec![1],
        vec![m as f32],
        vec![a.clone()],
        Box::new(move |g, ps| {
            let k = 2.0 * g[0] / n as f32;
            vec![Some(ps[0].data().iter().map(|v| k * v).collect())]
        }),
    )
}

/// `mean((a - b)²)` over all elements.
pub fn mse_mean(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    same_shape("mse_mean", a, b)?;
    let n = a.numel();
    let m = {
        let (x, y) = (a.data(), b.data());
        x.iter()
            .zip(y.iter())
            .map(|(&p, &q)| {
                let d = p as f64 - q as f64;
                d * d
            })
            .sum::<f64>()
            / n as f64
    };
    Ok(Tensor::from_op(
        vec![1],
        vec![m as f32],
        vec![a.clone(), b.clone()],
        Box::new(move |g, ps| {
            let k = 2.0 * g[0] / n as f32;
            let (x, y) = (ps[0].data(), ps[1].data());
            let ga: Vec<f32> = x.iter().zip(y.iter()).map(|(p, q)| k * (p - q)).collect();
            let gb = ga.iter().map(|v| -v).collect();
            vec![Some(ga), Some(gb)]
        }),
    ))
}
