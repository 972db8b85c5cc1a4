//! Deterministic sampling, whole-image and tiled enhancement, and refinement
//! of externally produced coarse images.

use crate::data::ImageBuffer;
use crate::error::{Error, Result};
use crate::model::{ModelBundle, Prediction};
use crate::rng::{normal_vec, stream, Rng};
use crate::schedule::{NoiseSchedule, StepPlan};

/// The two learned maps used at inference time.
pub trait Pipeline: Sync {
    fn schedule(&self) -> &NoiseSchedule;

    fn prediction(&self) -> Prediction {
        Prediction::Residual
    }

    /// `x^C = C(y)`.
    fn coarse(&self, y: &ImageBuffer) -> Result<ImageBuffer>;

    /// `f(x_t, t, cond)`: the residual estimate, or the noise estimate under
    /// [`Prediction::Noise`].
    fn denoise(&self, x_t: &ImageBuffer, t: usize, cond: &ImageBuffer) -> Result<ImageBuffer>;
}

/// A trained bundle with a choice of live or EMA weights.
#[derive(Debug, Clone, Copy)]
pub struct Weights<'a> {
    pub bundle: &'a ModelBundle,
    pub ema: bool,
}

impl<'a> Weights<'a> {
    pub fn ema(bundle: &'a ModelBundle) -> Self {
        Self { bundle, ema: true }
    }

    pub fn live(bundle: &'a ModelBundle) -> Self {
        Self { bundle, ema: false }
    }
}

impl Pipeline for Weights<'_> {
    fn schedule(&self) -> &NoiseSchedule {
        &self.bundle.schedule
    }

    fn prediction(&self) -> Prediction {
        self.bundle.prediction
    }

    fn coarse(&self, y: &ImageBuffer) -> Result<ImageBuffer> {
        self.bundle.cp_forward(y, self.ema)
    }

    fn denoise(&self, x_t: &ImageBuffer, t: usize, cond: &ImageBuffer) -> Result<ImageBuffer> {
        self.bundle.denoiser_forward(x_t, t, cond, self.ema)
    }
}

/// Runs the reverse process from `x_T ∼ N(0, I)` drawn from `rng` and returns
/// the final residual estimate `x̂_0`.
pub fn sample_residual(pipe: &impl Pipeline, cond: &ImageBuffer, plan: &StepPlan, rng: &mut Rng) -> Result<ImageBuffer> {
    let schedule = pipe.schedule();
    if plan.first() > schedule.steps() {
        return Err(Error::invalid(format!(
            "plan starts at t={} but the schedule has T={}",
            plan.first(),
            schedule.steps()
        )));
    }
    let mut x = ImageBuffer::new(
        cond.width(),
        cond.height(),
        cond.channels(),
        normal_vec(rng, cond.pixels().len()),
    )?;
    for (t_from, t_to) in plan.transitions() {
        let out = pipe.denoise(&x, t_from, cond)?;
        if !out.same_shape(cond) {
            return Err(Error::ShapeMismatch {
                op: "denoiser output",
                left: vec![out.channels(), out.height(), out.width()],
                right: vec![cond.channels(), cond.height(), cond.width()],
            });
        }
        let x0_hat = match pipe.prediction() {
            Prediction::Residual => out.into_pixels(),
            Prediction::Noise => {
                let ab = schedule.alpha_bar(t_from);
                let (a, s) = (ab.sqrt(), (1.0 - ab).sqrt());
                x.pixels()
                    .iter()
                    .zip(out.pixels())
                    .map(|(&xt, &e)| ((xt as f64 - s * e as f64) / a) as f32)
                    .collect()
            }
        };
        let next = schedule.reverse_step(x.pixels(), &x0_hat, t_from, t_to)?;
        x = ImageBuffer::new(cond.width(), cond.height(), cond.channels(), next)?;
    }
    Ok(x)
}

fn refine_with(pipe: &impl Pipeline, coarse: &ImageBuffer, steps: usize, rng: &mut Rng) -> Result<ImageBuffer> {
    let plan = StepPlan::even(pipe.schedule().steps(), steps)?;
    let residual = sample_residual(pipe, coarse, &plan, rng)?;
    Ok(coarse.add(&residual)?.clamped())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Mode {
    /// Crop-predict-merge over 128×128 tiles.
    #[default]
    Native,
    /// One pass over the whole image.
    Full,
}

impl Mode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "native" => Ok(Mode::Native),
            "full" => Ok(Mode::Full),
            _ => Err(Error::invalid(format!("unknown mode `{s}`, expected native or full"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Mode::Native => "native",
            Mode::Full => "full",
        }
    }
}

pub const TILE: usize = 128;
pub const TILE_OVERLAP: usize = 16;

/// Tile origins covering a `width × height` image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TilePlan {
    pub width: usize,
    pub height: usize,
    pub tile_w: usize,
    pub tile_h: usize,
    pub stride: usize,
    pub origins: Vec<(usize, usize)>,
}

fn axis_origins(len: usize, tile: usize, stride: usize) -> Vec<usize> {
    let mut v = vec![0];
    while v[v.len() - 1] + tile < len {
        let next = (v[v.len() - 1] + stride).min(len - tile);
        v.push(next);
    }
    v
}

impl TilePlan {
    /// Tiles are `tile × tile` (shrunk to the image on small axes), stepped by
    /// `stride`, with the last origin on each axis clamped in-bounds.
    pub fn new(width: usize, height: usize, tile: usize, stride: usize) -> Result<Self> {
        if width == 0 || height == 0 || tile == 0 || stride == 0 || stride > tile {
            return Err(Error::invalid(format!(
                "tile plan needs a non-empty image and 0 < stride <= tile, got {width}x{height}, tile {tile}, stride {stride}"
            )));
        }
        let (tile_w, tile_h) = (tile.min(width), tile.min(height));
        let xs = axis_origins(width, tile_w, stride);
        let ys = axis_origins(height, tile_h, stride);
        let origins = ys.iter().flat_map(|&y| xs.iter().map(move |&x| (x, y))).collect();
        Ok(Self {
            width,
            height,
            tile_w,
            tile_h,
            stride,
            origins,
        })
    }

    /// The default plan: 128-pixel tiles with 16 pixels of overlap.
    pub fn native(width: usize, height: usize) -> Result<Self> {
        Self::new(width, height, TILE, TILE - TILE_OVERLAP)
    }

    pub fn len(&self) -> usize {
        self.origins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.origins.is_empty()
    }

    /// Number of tiles containing each pixel, row-major.
    pub fn coverage(&self) -> Vec<u32> {
        let mut c = vec![0u32; self.width * self.height];
        for &(x0, y0) in &self.origins {
            for y in y0..y0 + self.tile_h {
                for v in &mut c[y * self.width + x0..y * self.width + x0 + self.tile_w] {
                    *v += 1;
                }
            }
        }
        c
    }

    pub fn processed_pixels(&self) -> usize {
        self.len() * self.tile_w * self.tile_h
    }

    /// Fraction of processed pixels beyond the image area.
    pub fn overhead(&self) -> f64 {
        self.processed_pixels() as f64 / (self.width * self.height) as f64 - 1.0
    }

    pub fn crops(&self, img: &ImageBuffer) -> Result<Vec<ImageBuffer>> {
        self.origins
            .iter()
            .map(|&(x, y)| img.crop(x, y, self.tile_w, self.tile_h))
            .collect()
    }

    /// Per-pixel mean of the tile predictions, accumulated in f64.
    pub fn merge(&self, tiles: &[ImageBuffer]) -> Result<ImageBuffer> {
        if tiles.len() != self.len() {
            return Err(Error::invalid(format!(
                "merge expects {} tiles, got {}",
                self.len(),
                tiles.len()
            )));
        }
        let channels = tiles[0].channels();
        let (w, h) = (self.width, self.height);
        let mut acc = vec![0.0f64; channels * w * h];
        for (tile, &(x0, y0)) in tiles.iter().zip(&self.origins) {
            if (tile.width(), tile.height(), tile.channels()) != (self.tile_w, self.tile_h, channels) {
                return Err(Error::ShapeMismatch {
                    op: "merge tile",
                    left: vec![tile.channels(), tile.height(), tile.width()],
                    right: vec![channels, self.tile_h, self.tile_w],
                });
            }
            for c in 0..channels {
                let plane = tile.plane(c);
                for y in 0..self.tile_h {
                    let dst = c * w * h + (y0 + y) * w + x0;
                    for (a, &v) in acc[dst..dst + self.tile_w]
                        .iter_mut()
                        .zip(&plane[y * self.tile_w..(y + 1) * self.tile_w])
                    {
                        *a += v as f64;
                    }
                }
            }
        }
        let cov = self.coverage();
        let pixels = acc
            .iter()
            .enumerate()
            .map(|(i, &s)| (s / cov[i % (w * h)] as f64) as f32)
            .collect();
        ImageBuffer::new(w, h, channels, pixels)
    }

    /// Applies `f(tile_index, tile)` to every tile (on the worker pool when
    /// available) and merges the results.
    pub fn run<F>(&self, img: &ImageBuffer, f: F) -> Result<ImageBuffer>
    where
        F: Fn(usize, &ImageBuffer) -> Result<ImageBuffer> + Sync,
    {
        let crops = self.crops(img)?;
        #[cfg(feature = "parallel")]
        let outs: Vec<ImageBuffer> = {
            use rayon::prelude::*;
            crops
                .par_iter()
                .enumerate()
                .map(|(i, t)| f(i, t))
                .collect::<Result<_>>()?
        };
        #[cfg(not(feature = "parallel"))]
        let outs: Vec<ImageBuffer> = crops.iter().enumerate().map(|(i, t)| f(i, t)).collect::<Result<_>>()?;
        self.merge(&outs)
    }
}

fn tiled(
    img: &ImageBuffer,
    mode: Mode,
    seed: u64,
    f: impl Fn(&ImageBuffer, &mut Rng) -> Result<ImageBuffer> + Sync,
) -> Result<ImageBuffer> {
    match mode {
        Mode::Full => f(img, &mut stream(seed, 0)),
        Mode::Native => {
            TilePlan::native(img.width(), img.height())?.run(img, |i, tile| f(tile, &mut stream(seed, i as u64)))
        }
    }
}

/// `clamp(x^C + x̂_res, 0, 1)` with `x^C = C(y)`. Tile `i` (or the whole
/// image in full mode, as tile 0) draws its `x_T` from stream `i` of `seed`.
pub fn enhance(pipe: &impl Pipeline, y: &ImageBuffer, steps: usize, mode: Mode, seed: u64) -> Result<ImageBuffer> {
    StepPlan::even(pipe.schedule().steps(), steps)?;
    tiled(y, mode, seed, |img, rng| {
        let coarse = pipe.coarse(img)?;
        refine_with(pipe, &coarse, steps, rng)
    })
}

/// Uses `coarse` as the condition in place of `C(y)`:
/// `clamp(coarse + x̂_res, 0, 1)`.
pub fn refine_external(pipe: &impl Pipeline, coarse: &ImageBuffer, steps: usize, mode: Mode, seed: u64) -> Result<ImageBuffer> {
    StepPlan::even(pipe.schedule().steps(), steps)?;
    tiled(coarse, mode, seed, |img, rng| refine_with(pipe, img, steps, rng))
}

/// Coarse prediction alone, clamped, tiled like [`enhance`].
pub fn coarse_only(pipe: &impl Pipeline, y: &ImageBuffer, mode: Mode) -> Result<ImageBuffer> {
    tiled(y, mode, 0, |img, _| Ok(pipe.coarse(img)?.clamped()))
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Identity(NoiseSchedule);

    impl Pipeline for Identity {
        fn schedule(&self) -> &NoiseSchedule {
            &self.0
        }
        fn coarse(&self, y: &ImageBuffer) -> Result<ImageBuffer> {
            Ok(y.clone())
        }
        fn denoise(&self, x_t: &ImageBuffer, _: usize, _: &ImageBuffer) -> Result<ImageBuffer> {
            Ok(ImageBuffer::filled(x_t.width(), x_t.height(), x_t.channels(), 0.0))
        }
    }

    #[test]
    fn axis_origins_clamp() {
        assert_eq!(axis_origins(300, 128, 112), vec![0, 112, 172]);
        assert_eq!(axis_origins(128, 128, 112), vec![0]);
        assert_eq!(axis_origins(300, 128, 128), vec![0, 128, 172]);
        assert_eq!(axis_origins(50, 50, 112), vec![0]);
    }

    #[test]
    fn overhead_for_300_square() {
        let p = TilePlan::native(300, 300).unwrap();
        assert_eq!(p.len(), 9);
        assert_eq!(p.processed_pixels(), 147_456);
        assert!((p.overhead() - 0.6384).abs() < 1e-12);
        assert!(p.coverage().iter().all(|&c| c >= 1));
    }

    #[test]
    fn identity_stub_round_trips() {
        let pipe = Identity(NoiseSchedule::default_linear());
        let mut rng = crate::rng::seeded(1);
        let y = ImageBuffer::new(150, 131, 1, crate::rng::uniform_vec(&mut rng, 150 * 131, 1.0))
            .unwrap()
            .clamped();
        let out = enhance(&pipe, &y, 5, Mode::Native, 3).unwrap();
        assert_eq!(out.pixels(), y.pixels());
    }

    #[test]
    fn rejects_bad_step_count() {
        let pipe = Identity(NoiseSchedule::default_linear());
        let y = ImageBuffer::filled(8, 8, 1, 0.5);
        assert!(enhance(&pipe, &y, 0, Mode::Full, 0).is_err());
        assert!(enhance(&pipe, &y, 101, Mode::Full, 0).is_err());
    }

    #[test]
    fn rejects_plan_longer_than_schedule() {
        let pipe = Identity(NoiseSchedule::linear(10, 1e-4, 0.02).unwrap());
        let plan = StepPlan::even(100, 5).unwrap();
        let cond = ImageBuffer::filled(4, 4, 1, 0.0);
        assert!(sample_residual(&pipe, &cond, &plan, &mut crate::rng::seeded(0)).is_err());
    }
}
