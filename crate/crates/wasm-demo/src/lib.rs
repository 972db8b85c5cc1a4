//! Browser bindings: synthetic degradations, the frequency split and the
//! deterministic sampler driven by an oracle residual.

use docdiff::data::{generate_pair, CorpusKind, ImageBuffer};
use docdiff::freqsep::decompose;
use docdiff::metrics::psnr;
use docdiff::rng::{normal_vec, stream};
use docdiff::schedule::{NoiseSchedule, StepPlan};
use wasm_bindgen::prelude::*;

fn js(e: docdiff::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// Planar image to RGBA bytes; grayscale is replicated.
pub fn to_rgba(img: &ImageBuffer) -> Vec<u8> {
    let n = img.width() * img.height();
    let c = img.channels();
    let mut out = Vec::with_capacity(4 * n);
    for i in 0..n {
        for k in 0..3 {
            let v = img.pixels()[(k.min(c - 1)) * n + i];
            out.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
        }
        out.push(255);
    }
    out
}

/// RGBA bytes to a single-channel luma plane in `[0, 1]`.
pub fn luma_from_rgba(rgba: &[u8], width: usize, height: usize) -> Result<Vec<f32>, String> {
    if rgba.len() != 4 * width * height {
        return Err(format!("expected {} RGBA bytes for {width}x{height}, got {}", 4 * width * height, rgba.len()));
    }
    Ok(rgba
        .chunks_exact(4)
        .map(|p| (0.299 * p[0] as f32 + 0.587 * p[1] as f32 + 0.114 * p[2] as f32) / 255.0)
        .collect())
}

#[wasm_bindgen]
pub struct Patch {
    size: usize,
    degraded: Vec<u8>,
    clean: Vec<u8>,
    psnr: f64,
}

#[wasm_bindgen]
impl Patch {
    #[wasm_bindgen(getter)]
    pub fn size(&self) -> usize {
        self.size
    }
    pub fn degraded(&self) -> Vec<u8> {
        self.degraded.clone()
    }
    pub fn clean(&self) -> Vec<u8> {
        self.clean.clone()
    }
    #[wasm_bindgen(getter)]
    pub fn psnr(&self) -> f64 {
        self.psnr
    }
}

/// Degraded/clean pair of `kind` (blur, denoise, watermark, seal).
#[wasm_bindgen]
pub fn synthesize(kind: &str, seed: u32, index: u32, size: u32) -> Result<Patch, JsError> {
    let kind = CorpusKind::parse(kind).map_err(js)?;
    let (y, gt, _) = generate_pair(kind, seed as u64, index as u64, size as usize).map_err(js)?;
    Ok(Patch {
        size: size as usize,
        psnr: psnr(&y, &gt).map_err(js)?,
        degraded: to_rgba(&y),
        clean: to_rgba(&gt),
    })
}

#[wasm_bindgen]
pub struct Bands {
    low: Vec<u8>,
    high: Vec<u8>,
    high_energy: f64,
}

#[wasm_bindgen]
impl Bands {
    pub fn low(&self) -> Vec<u8> {
        self.low.clone()
    }
    pub fn high(&self) -> Vec<u8> {
        self.high.clone()
    }
    #[wasm_bindgen(getter)]
    pub fn high_energy(&self) -> f64 {
        self.high_energy
    }
}

/// Laplacian split of the luma of an RGBA image; the high band is shown as
/// `0.5 + gain·high`.
#[wasm_bindgen]
pub fn frequency_split(rgba: &[u8], width: usize, height: usize, gain: f32) -> Result<Bands, JsError> {
    let plane = luma_from_rgba(rgba, width, height).map_err(|e| JsError::new(&e))?;
    let b = decompose(&plane, height, width).map_err(js)?;
    let img = |v: Vec<f32>| ImageBuffer::new(width, height, 1, v).map_err(js);
    let low = img(b.low.iter().map(|&v| v as f32).collect())?;
    let high = img(b.high.iter().map(|&v| 0.5 + gain * v as f32).collect())?;
    Ok(Bands {
        low: to_rgba(&low),
        high: to_rgba(&high),
        high_energy: b.high.iter().map(|v| v * v).sum::<f64>() / b.high.len() as f64,
    })
}

#[wasm_bindgen]
pub struct Trajectory {
    size: usize,
    frames: Vec<Vec<u8>>,
    timesteps: Vec<u32>,
    psnr: Vec<f64>,
}

#[wasm_bindgen]
impl Trajectory {
    #[wasm_bindgen(getter)]
    pub fn size(&self) -> usize {
        self.size
    }
    #[wasm_bindgen(getter)]
    pub fn len(&self) -> usize {
        self.frames.len()
    }
    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
    pub fn frame(&self, i: usize) -> Vec<u8> {
        self.frames.get(i).cloned().unwrap_or_default()
    }
    pub fn timesteps(&self) -> Vec<u32> {
        self.timesteps.clone()
    }
    pub fn psnr(&self) -> Vec<f64> {
        self.psnr.clone()
    }
}

/// Deterministic `steps`-step sampling of a blur pair where the denoiser is
/// replaced by the true residual `gt − y`. Frame `k` shows `y + x_t` after the
/// `k`-th transition, starting from pure noise.
#[wasm_bindgen]
pub fn oracle_trajectory(seed: u32, index: u32, size: u32, steps: usize) -> Result<Trajectory, JsError> {
    let size = size as usize;
    let (y, gt, _) = generate_pair(CorpusKind::Blur, seed as u64, index as u64, size).map_err(js)?;
    let residual = gt.sub(&y).map_err(js)?;
    let schedule = NoiseSchedule::default_linear();
    let plan = StepPlan::even(schedule.steps(), steps).map_err(js)?;
    let mut x = normal_vec(&mut stream(seed as u64, index as u64), residual.pixels().len());
    let mut frames = Vec::with_capacity(plan.len() + 1);
    let mut timesteps = vec![plan.first() as u32];
    let mut scores = Vec::with_capacity(plan.len() + 1);
    let push = |x: &[f32], frames: &mut Vec<Vec<u8>>, scores: &mut Vec<f64>| -> Result<(), JsError> {
        let shown = y.add(&ImageBuffer::new(size, size, 1, x.to_vec()).map_err(js)?).map_err(js)?.clamped();
        scores.push(psnr(&shown, &gt).map_err(js)?);
        frames.push(to_rgba(&shown));
        Ok(())
    };
    push(&x, &mut frames, &mut scores)?;
    for (from, to) in plan.transitions() {
        x = schedule.reverse_step(&x, residual.pixels(), from, to).map_err(js)?;
        timesteps.push(to as u32);
        push(&x, &mut frames, &mut scores)?;
    }
    Ok(Trajectory {
        size,
        frames,
        timesteps,
        psnr: scores,
    })
}
