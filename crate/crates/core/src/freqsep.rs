//! Laplacian frequency separation and the frequency-separated loss terms.
//!
//! The high band is the 4-neighbour Laplacian response with replicate
//! padding; the low band is defined as the input minus the high band.

use crate::error::{Error, Result};
use crate::numerics::{add, dims4, mean_square, mse_mean, scale, sub, Tensor};

/// 4-neighbour Laplacian stencil.
pub const LAPLACIAN: [[f32; 3]; 3] = [[0.0, 1.0, 0.0], [1.0, -4.0, 1.0], [0.0, 1.0, 0.0]];

/// Laplacian of one `h×w` plane with replicate padding, evaluated in f64.
///
/// For f32 inputs the f64 sum is exact unless pixel magnitudes span more than
/// ~27 binary orders, which does not happen for image data.
pub fn laplacian_plane(src: &[f32], h: usize, w: usize) -> Vec<f64> {
    let at = |y: usize, x: usize| src[y * w + x] as f64;
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        let (up, down) = (y.saturating_sub(1), (y + 1).min(h - 1));
        for x in 0..w {
            let (left, right) = (x.saturating_sub(1), (x + 1).min(w - 1));
            out.push(at(up, x) + at(down, x) + at(y, left) + at(y, right) - 4.0 * at(y, x));
        }
    }
    out
}

/// Low and high bands of a plane, both in f64, with `low + high == x` exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct Bands {
    pub low: Vec<f64>,
    pub high: Vec<f64>,
}

impl Bands {
    pub fn recombine(&self) -> Vec<f64> {
        self.low.iter().zip(&self.high).map(|(l, h)| l + h).collect()
    }
}

pub fn decompose(src: &[f32], h: usize, w: usize) -> Result<Bands> {
    if src.len() != h * w || h == 0 || w == 0 {
        return Err(Error::invalid(format!(
            "decompose: {} pixels do not form a {h}x{w} plane",
            src.len()
        )));
    }
    let high = laplacian_plane(src, h, w);
    let low = src.iter().zip(&high).map(|(&x, hp)| x as f64 - hp).collect();
    Ok(Bands { low, high })
}

/// Per-channel Laplacian high-pass of an NCHW tensor; differentiable.
pub fn highpass(x: &Tensor) -> Result<Tensor> {
    let [n, c, h, w] = dims4("highpass", x)?;
    if h < 3 || w < 3 {
        return Err(Error::invalid(format!(
            "highpass needs at least 3x3 planes, got {h}x{w}"
        )));
    }
    let plane = h * w;
    let data: Vec<f32> = x
        .data()
        .chunks(plane)
        .flat_map(|p| laplacian_plane(p, h, w).into_iter().map(|v| v as f32))
        .collect();
    debug_assert_eq!(data.len(), n * c * plane);
    Ok(Tensor::from_op(
        x.shape().to_vec(),
        data,
        vec![x.clone()],
        Box::new(move |g, _| {
            let mut gx = vec![0.0f32; g.len()];
            for (gp, dst) in g.chunks(plane).zip(gx.chunks_mut(plane)) {
                for y in 0..h {
                    let (up, down) = (y.saturating_sub(1), (y + 1).min(h - 1));
                    for xi in 0..w {
                        let (left, right) = (xi.saturating_sub(1), (xi + 1).min(w - 1));
                        let v = gp[y * w + xi];
                        dst[up * w + xi] += v;
                        dst[down * w + xi] += v;
                        dst[y * w + left] += v;
                        dst[y * w + right] += v;
                        dst[y * w + xi] -= 4.0 * v;
                    }
                }
            }
            vec![Some(gx)]
        }),
    ))
}

/// `x − highpass(x)`.
pub fn lowpass(x: &Tensor) -> Result<Tensor> {
    sub(x, &highpass(x)?)
}

/// Weights of the frequency-separated objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    /// Weight of the filtered auxiliary terms.
    pub beta0: f32,
    /// Weight of the coarse-predictor branch.
    pub beta1: f32,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            beta0: 2.0,
            beta1: 0.5,
        }
    }
}

impl LossWeights {
    pub fn new(beta0: f32, beta1: f32) -> Result<Self> {
        if !(beta0 >= 0.0 && beta1 > 0.0) {
            return Err(Error::invalid(format!(
                "loss weights must be non-negative (beta0) and positive (beta1), got {beta0}, {beta1}"
            )));
        }
        Ok(Self { beta0, beta1 })
    }
}

/// Squared mean of the low band of `x_c − x_gt`.
pub fn loss_low(x_c: &Tensor, x_gt: &Tensor) -> Result<Tensor> {
    Ok(mean_square(&lowpass(&sub(x_c, x_gt)?)?))
}

/// Squared mean of the high band of `x0 − x0_hat`.
pub fn loss_high(x0: &Tensor, x0_hat: &Tensor) -> Result<Tensor> {
    Ok(mean_square(&highpass(&sub(x0, x0_hat)?)?))
}

/// All loss terms of one step; `total` is the differentiable objective.
#[derive(Debug, Clone)]
pub struct LossTerms {
    pub pixel: Tensor,
    pub low: Tensor,
    pub dm: Tensor,
    pub high: Tensor,
    pub total: Tensor,
}

impl LossTerms {
    pub fn values(&self) -> [f32; 5] {
        [
            self.pixel.item(),
            self.low.item(),
            self.dm.item(),
            self.high.item(),
            self.total.item(),
        ]
    }
}

/// `β1·(L_pixel + β0·L_low) + (L_DM + β0·L_high)`.
///
/// `x0` is the residual target and `x0_hat` the denoiser's prediction of it.
pub fn total_loss(
    x_c: &Tensor,
    x_gt: &Tensor,
    x0: &Tensor,
    x0_hat: &Tensor,
    w: LossWeights,
) -> Result<LossTerms> {
    let pixel = mse_mean(x_c, x_gt)?;
    let low = loss_low(x_c, x_gt)?;
    let dm = mse_mean(x0, x0_hat)?;
    let high = loss_high(x0, x0_hat)?;
    let total = combine(&pixel, &low, &dm, &high, w)?;
    Ok(LossTerms {
        pixel,
        low,
        dm,
        high,
        total,
    })
}

/// Weighted combination of already computed scalar terms.
pub fn combine(pixel: &Tensor, low: &Tensor, dm: &Tensor, high: &Tensor, w: LossWeights) -> Result<Tensor> {
    let cp_branch = scale(&add(pixel, &scale(low, w.beta0))?, w.beta1);
    let dm_branch = add(dm, &scale(high, w.beta0))?;
    add(&cp_branch, &dm_branch)
}
