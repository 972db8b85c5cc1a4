//! Distortion and binarization metrics.

use crate::data::ImageBuffer;
use crate::error::{Error, Result};

/// PSNR cap used when the images (nearly) coincide.
pub const PSNR_CAP: f64 = 100.0;

fn check_shape(op: &'static str, a: &ImageBuffer, b: &ImageBuffer) -> Result<()> {
    if a.same_shape(b) {
        Ok(())
    } else {
        Err(Error::ShapeMismatch {
            op,
            left: vec![a.channels(), a.height(), a.width()],
            right: vec![b.channels(), b.height(), b.width()],
        })
    }
}

pub fn mse(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    check_shape("mse", a, b)?;
    let sum: f64 = a
        .pixels()
        .iter()
        .zip(b.pixels())
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum();
    Ok(sum / a.pixels().len() as f64)
}

/// `10·log10(1 / MSE)` on unit-range images, capped at 100 dB.
pub fn psnr(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    let m = mse(a, b)?;
    if m < 1e-10 {
        Ok(PSNR_CAP)
    } else {
        Ok((10.0 * (1.0 / m).log10()).min(PSNR_CAP))
    }
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn gaussian_1d() -> [f64; SSIM_WINDOW] {
    let r = (SSIM_WINDOW / 2) as f64;
    let mut g = [0.0; SSIM_WINDOW];
    for (i, v) in g.iter_mut().enumerate() {
        let x = i as f64 - r;
        *v = (-x * x / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = g.iter().sum();
    g.map(|v| v / s)
}

/// Separable "valid" Gaussian filter of a row-major plane.
fn filter_valid(src: &[f64], w: usize, h: usize, g: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (ow, oh) = (w - SSIM_WINDOW + 1, h - SSIM_WINDOW + 1);
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..SSIM_WINDOW).map(|k| g[k] * src[y * w + x + k]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..SSIM_WINDOW).map(|k| g[k] * rows[(y + k) * ow + x]).sum();
        }
    }
    out
}

/// Mean local SSIM over an 11×11 Gaussian window (σ = 1.5), computed on luma.
pub fn ssim(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    check_shape("ssim", a, b)?;
    let (w, h) = (a.width(), a.height());
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::invalid(format!(
            "ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {w}x{h}"
        )));
    }
    let to64 = |img: &ImageBuffer| -> Vec<f64> { img.luma().pixels().iter().map(|&v| v as f64).collect() };
    let (x, y) = (to64(a), to64(b));
    let g = gaussian_1d();
    let prod = |p: &[f64], q: &[f64]| -> Vec<f64> { p.iter().zip(q).map(|(a, b)| a * b).collect() };
    let mu_x = filter_valid(&x, w, h, &g);
    let mu_y = filter_valid(&y, w, h, &g);
    let xx = filter_valid(&prod(&x, &x), w, h, &g);
    let yy = filter_valid(&prod(&y, &y), w, h, &g);
    let xy = filter_valid(&prod(&x, &y), w, h, &g);
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let total: f64 = (0..mu_x.len())
        .map(|i| {
            let (mx, my) = (mu_x[i], mu_y[i]);
            let vx = xx[i] - mx * mx;
            let vy = yy[i] - my * my;
            let cxy = xy[i] - mx * my;
            ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))
        })
        .sum();
    Ok(total / mu_x.len() as f64)
}

/// Histogram bin of a unit-range value, matching 8-bit quantization.
fn bin(v: f32) -> usize {
    (v.clamp(0.0, 1.0) * 255.0).round() as usize
}

/// Otsu's threshold over a 256-bin histogram of the luma channel.
///
/// Bins `0..=k` form the dark class for the `k` maximizing between-class
/// variance (lowest `k` on ties); the returned threshold is `(k + 0.5) / 255`,
/// so a pixel is dark exactly when its value is below it.
pub fn otsu_threshold(img: &ImageBuffer) -> f32 {
    let luma = img.luma();
    let mut hist = [0u64; 256];
    for &v in luma.pixels() {
        hist[bin(v)] += 1;
    }
    let total = luma.pixels().len() as f64;
    let sum_all: f64 = hist.iter().enumerate().map(|(i, &c)| i as f64 * c as f64).sum();
    let (mut w0, mut sum0) = (0.0f64, 0.0f64);
    let (mut best_k, mut best) = (0usize, f64::NEG_INFINITY);
    for (k, &c) in hist.iter().enumerate() {
        w0 += c as f64;
        sum0 += k as f64 * c as f64;
        let w1 = total - w0;
        let var = if w0 == 0.0 || w1 == 0.0 {
            0.0
        } else {
            let d = sum0 / w0 - (sum_all - sum0) / w1;
            w0 * w1 * d * d
        };
        if var > best {
            best = var;
            best_k = k;
        }
    }
    (best_k as f32 + 0.5) / 255.0
}

/// A bilevel image: `0` is text, `1` is background.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryImage {
    width: usize,
    height: usize,
    bits: Vec<u8>,
}

impl BinaryImage {
    pub fn new(width: usize, height: usize, bits: Vec<u8>) -> Result<Self> {
        if bits.len() != width * height {
            return Err(Error::invalid(format!(
                "binary image {width}x{height} needs {} values, got {}",
                width * height,
                bits.len()
            )));
        }
        if let Some(i) = bits.iter().position(|&b| b > 1) {
            return Err(Error::invalid(format!("binary image value {} at index {i} is not 0/1", bits[i])));
        }
        Ok(Self { width, height, bits })
    }

    /// Text where luma is below `threshold`.
    pub fn threshold(img: &ImageBuffer, threshold: f32) -> Self {
        let bits = img.luma().pixels().iter().map(|&v| u8::from(v >= threshold)).collect();
        Self {
            width: img.width(),
            height: img.height(),
            bits,
        }
    }

    pub fn from_text_mask(width: usize, height: usize, text: &[bool]) -> Result<Self> {
        Self::new(width, height, text.iter().map(|&t| u8::from(!t)).collect())
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn is_text(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x] == 0
    }

    pub fn text_mask(&self) -> Vec<bool> {
        self.bits.iter().map(|&b| b == 0).collect()
    }

    pub fn text_count(&self) -> usize {
        self.bits.iter().filter(|&&b| b == 0).count()
    }

    /// Renders text black on white.
    pub fn to_image(&self) -> ImageBuffer {
        let px = self.bits.iter().map(|&b| b as f32).collect();
        ImageBuffer::new(self.width, self.height, 1, px).expect("shape is consistent")
    }

    /// Zhang-Suen skeleton of the text pixels.
    pub fn skeleton(&self) -> Self {
        let text = zhang_suen(&self.text_mask(), self.width, self.height);
        Self::from_text_mask(self.width, self.height, &text).expect("shape is consistent")
    }
}

/// Zhang-Suen thinning of a row-major foreground mask; pixels outside the
/// image count as background.
pub fn zhang_suen(mask: &[bool], width: usize, height: usize) -> Vec<bool> {
    let mut img = mask.to_vec();
    let at = |img: &[bool], x: isize, y: isize| -> bool {
        x >= 0 && y >= 0 && (x as usize) < width && (y as usize) < height && img[y as usize * width + x as usize]
    };
    loop {
        let mut changed = false;
        for pass in 0..2 {
            let mut remove = Vec::new();
            for y in 0..height as isize {
                for x in 0..width as isize {
                    if !at(&img, x, y) {
                        continue;
                    }
                    // P2..P9 clockwise from north
                    let p = [
                        at(&img, x, y - 1),
                        at(&img, x + 1, y - 1),
                        at(&img, x + 1, y),
                        at(&img, x + 1, y + 1),
                        at(&img, x, y + 1),
                        at(&img, x - 1, y + 1),
                        at(&img, x - 1, y),
                        at(&img, x - 1, y - 1),
                    ];
                    let b = p.iter().filter(|&&v| v).count();
                    let a = (0..8).filter(|&i| !p[i] && p[(i + 1) % 8]).count();
                    let (p2, p4, p6, p8) = (p[0], p[2], p[4], p[6]);
                    let cond = if pass == 0 {
                        !(p2 && p4 && p6) && !(p4 && p6 && p8)
                    } else {
                        !(p2 && p4 && p8) && !(p2 && p6 && p8)
                    };
                    if (2..=6).contains(&b) && a == 1 && cond {
                        remove.push(y as usize * width + x as usize);
                    }
                }
            }
            changed |= !remove.is_empty();
            for i in remove {
                img[i] = false;
            }
        }
        if !changed {
            return img;
        }
    }
}

/// Text-class scores in percent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FScore {
    pub fm: f64,
    pub precision: f64,
    pub recall: f64,
}

fn check_binary(op: &'static str, a: &BinaryImage, b: &BinaryImage) -> Result<()> {
    if (a.width, a.height) == (b.width, b.height) {
        Ok(())
    } else {
        Err(Error::ShapeMismatch {
            op,
            left: vec![a.height, a.width],
            right: vec![b.height, b.width],
        })
    }
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r) * 100.0
    }
}

fn ratio(num: usize, den: usize, empty: f64) -> f64 {
    if den == 0 {
        empty
    } else {
        num as f64 / den as f64
    }
}

pub fn f_measure(pred: &BinaryImage, gt: &BinaryImage) -> Result<FScore> {
    check_binary("f_measure", pred, gt)?;
    let tp = pred.bits.iter().zip(&gt.bits).filter(|&(&p, &g)| p == 0 && g == 0).count();
    let (np, ng) = (pred.text_count(), gt.text_count());
    if np == 0 && ng == 0 {
        return Ok(FScore {
            fm: 100.0,
            precision: 100.0,
            recall: 100.0,
        });
    }
    let p = ratio(tp, np, 0.0);
    let r = ratio(tp, ng, 0.0);
    Ok(FScore {
        fm: harmonic(p, r),
        precision: p * 100.0,
        recall: r * 100.0,
    })
}

/// F-measure with recall measured against the Zhang-Suen skeleton of the
/// ground-truth text.
pub fn pseudo_f_measure(pred: &BinaryImage, gt: &BinaryImage) -> Result<f64> {
    check_binary("pseudo_f_measure", pred, gt)?;
    let skel = zhang_suen(&gt.text_mask(), gt.width, gt.height);
    let pm = pred.text_mask();
    let ns = skel.iter().filter(|&&s| s).count();
    let hit = skel.iter().zip(&pm).filter(|&(&s, &p)| s && p).count();
    let np = pred.text_count();
    let tp = pm.iter().zip(gt.text_mask()).filter(|&(&p, g)| p && g).count();
    if np == 0 && ns == 0 {
        return Ok(100.0);
    }
    Ok(harmonic(ratio(tp, np, 0.0), ratio(hit, ns, 0.0)))
}
