//! Synthetic clean/degraded document patches.
//!
//! Clean patches are bilevel black text on white. Degradations are applied
//! to a copy, so the clean patch stays the ground truth.

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng::Rng;

use super::font::{ink, text_bitmap, GLYPHS, GLYPH_H, GLYPH_W};
use super::ImageBuffer;

pub const MIN_PATCH: usize = 32;
pub const MIN_COVERAGE: f64 = 0.10;
pub const MAX_COVERAGE: f64 = 0.60;
pub const OVERLAY_OPACITY: (f32, f32) = (0.7, 0.95);

/// Fraction of inked (value 0) pixels in the first channel.
pub fn ink_coverage(img: &ImageBuffer) -> f64 {
    let p = img.plane(0);
    p.iter().filter(|&&v| v < 0.5).count() as f64 / p.len() as f64
}

fn draw_text(rng: &mut Rng, size: usize, plane: &mut [f32]) {
    let scale = rng.random_range(2..=3usize);
    let (gw, gh) = (GLYPH_W * scale, GLYPH_H * scale);
    let mut y = rng.random_range(0..=2 * scale);
    while y < size {
        let mut x = rng.random_range(0..=3 * scale) as isize - scale as isize;
        while x < size as isize {
            if rng.random_bool(0.85) {
                let g = rng.random_range(0..GLYPHS.len());
                for r in 0..gh {
                    for c in 0..gw {
                        let (py, px) = (y + r, x + c as isize);
                        if py >= size || px < 0 || px >= size as isize {
                            continue;
                        }
                        if ink(g, r / scale, c / scale) {
                            plane[py * size + px as usize] = 0.0;
                        }
                    }
                }
            }
            x += (gw + scale) as isize;
        }
        y += gh + rng.random_range(scale..=3 * scale);
    }
}

/// A bilevel `size × size` text patch with ink coverage in `[0.10, 0.60]`.
pub fn render_text_patch(rng: &mut Rng, size: usize) -> Result<ImageBuffer> {
    if size < MIN_PATCH {
        return Err(Error::invalid(format!(
            "text patches need size >= {MIN_PATCH}, got {size}"
        )));
    }
    loop {
        let mut plane = vec![1.0f32; size * size];
        draw_text(rng, size, &mut plane);
        let img = ImageBuffer::new(size, size, 1, plane)?;
        let cov = ink_coverage(&img);
        if (MIN_COVERAGE..=MAX_COVERAGE).contains(&cov) {
            return Ok(img);
        }
    }
}

/// Replicates a grayscale image into `channels` channels.
pub fn with_channels(img: &ImageBuffer, channels: usize) -> ImageBuffer {
    if img.channels() == channels {
        return img.clone();
    }
    let plane = img.plane(0);
    let pixels = (0..channels).flat_map(|_| plane.iter().copied()).collect();
    ImageBuffer::new(img.width(), img.height(), channels, pixels).expect("same extent")
}

#[derive(Debug, Clone, PartialEq)]
pub enum BlurKernel {
    Gaussian { size: usize, sigma: f32 },
    Motion { length: usize, angle_deg: f32 },
}

impl BlurKernel {
    /// Normalized row-major weights and the (odd) kernel extent.
    pub fn weights(&self) -> (usize, Vec<f64>) {
        match *self {
            BlurKernel::Gaussian { size, sigma } => {
                let r = (size / 2) as f64;
                let s2 = 2.0 * (sigma as f64).powi(2);
                let mut k: Vec<f64> = (0..size * size)
                    .map(|i| {
                        let (y, x) = ((i / size) as f64 - r, (i % size) as f64 - r);
                        (-(x * x + y * y) / s2).exp()
                    })
                    .collect();
                let sum: f64 = k.iter().sum();
                k.iter_mut().for_each(|v| *v /= sum);
                (size, k)
            }
            BlurKernel::Motion { length, angle_deg } => {
                let size = length | 1;
                let c = (size / 2) as f64;
                let (s, co) = (angle_deg as f64).to_radians().sin_cos();
                let mut k = vec![0.0; size * size];
                let half = (length as f64 - 1.0) / 2.0;
                let samples = 8 * length;
                for i in 0..=samples {
                    let d = -half + 2.0 * half * i as f64 / samples as f64;
                    let x = (c + d * co).round() as usize;
                    let y = (c - d * s).round() as usize;
                    k[y * size + x] += 1.0;
                }
                let sum: f64 = k.iter().sum();
                k.iter_mut().for_each(|v| *v /= sum);
                (size, k)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Blob {
    pub cx: f32,
    pub cy: f32,
    pub radius: f32,
    /// `true` darkens, `false` lightens.
    pub dark: bool,
    pub strength: f32,
}

/// A fully sampled corruption.
#[derive(Debug, Clone, PartialEq)]
pub enum DegradationSpec {
    Blur(BlurKernel),
    InkNoise {
        blobs: Vec<Blob>,
    },
    BleedThrough {
        opacity: f32,
        flip: bool,
        layer_seed: u64,
    },
    Watermark {
        text: String,
        rotation_deg: f32,
        scale: f32,
        center: (f32, f32),
        color: [f32; 3],
        opacity: f32,
    },
    Seal {
        center: (f32, f32),
        axes: (f32, f32),
        thickness: f32,
        text: String,
        color: [f32; 3],
        opacity: f32,
    },
}

/// Corpus-level degradation families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CorpusKind {
    Blur,
    Denoise,
    Watermark,
    Seal,
}

impl CorpusKind {
    pub fn name(self) -> &'static str {
        match self {
            CorpusKind::Blur => "blur",
            CorpusKind::Denoise => "denoise",
            CorpusKind::Watermark => "watermark",
            CorpusKind::Seal => "seal",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "blur" => Ok(CorpusKind::Blur),
            "denoise" => Ok(CorpusKind::Denoise),
            "watermark" => Ok(CorpusKind::Watermark),
            "seal" => Ok(CorpusKind::Seal),
            _ => Err(Error::invalid(format!(
                "unknown corpus kind `{s}` (expected blur, denoise, watermark or seal)"
            ))),
        }
    }

    /// Overlays are colored; blur and denoise corpora are grayscale.
    pub fn channels(self) -> usize {
        match self {
            CorpusKind::Blur | CorpusKind::Denoise => 1,
            CorpusKind::Watermark | CorpusKind::Seal => 3,
        }
    }

    /// Samples the corruption chain for one `size × size` patch.
    pub fn sample(self, rng: &mut Rng, size: usize) -> Vec<DegradationSpec> {
        let s = size as f32;
        match self {
            CorpusKind::Blur => {
                let kernel = if rng.random_bool(0.5) {
                    BlurKernel::Gaussian {
                        size: 2 * rng.random_range(1..=4usize) + 1,
                        sigma: rng.random_range(0.8..=2.5f32),
                    }
                } else {
                    BlurKernel::Motion {
                        length: rng.random_range(3..=9usize),
                        angle_deg: rng.random_range(0.0..180.0f32),
                    }
                };
                vec![DegradationSpec::Blur(kernel)]
            }
            CorpusKind::Denoise => {
                let count = rng.random_range(3..=12usize);
                let blobs = (0..count)
                    .map(|_| Blob {
                        cx: rng.random_range(0.0..s),
                        cy: rng.random_range(0.0..s),
                        radius: rng.random_range(0.03..0.15f32) * s,
                        dark: rng.random_bool(0.6),
                        strength: rng.random_range(0.3..0.8f32),
                    })
                    .collect();
                vec![
                    DegradationSpec::BleedThrough {
                        opacity: rng.random_range(0.1..=0.4f32),
                        flip: true,
                        layer_seed: rng.random(),
                    },
                    DegradationSpec::InkNoise { blobs },
                ]
            }
            CorpusKind::Watermark => {
                let len = rng.random_range(3..=8usize);
                let gray = rng.random_range(0.2..0.7f32);
                vec![DegradationSpec::Watermark {
                    text: random_text(rng, len),
                    rotation_deg: rng.random_range(-45.0..=45.0f32),
                    scale: rng.random_range(0.6..1.2f32) * s / (len * 6) as f32,
                    center: (rng.random_range(0.3..0.7f32) * s, rng.random_range(0.3..0.7f32) * s),
                    color: [
                        gray + rng.random_range(-0.15..0.15f32),
                        gray + rng.random_range(-0.15..0.15f32),
                        gray + rng.random_range(-0.15..0.15f32),
                    ],
                    opacity: sample_opacity(rng),
                }]
            }
            CorpusKind::Seal => {
                let a = rng.random_range(0.25..0.45f32) * s;
                let b = a * rng.random_range(0.7..1.0f32);
                let glyphs = rng.random_range(2..=4usize);
                vec![DegradationSpec::Seal {
                    center: (rng.random_range(0.35..0.65f32) * s, rng.random_range(0.35..0.65f32) * s),
                    axes: (a, b),
                    thickness: rng.random_range(1.5..3.5f32),
                    text: random_text(rng, glyphs),
                    color: [
                        rng.random_range(0.75..1.0f32),
                        rng.random_range(0.0..0.3f32),
                        rng.random_range(0.0..0.3f32),
                    ],
                    opacity: sample_opacity(rng),
                }]
            }
        }
    }
}

fn sample_opacity(rng: &mut Rng) -> f32 {
    rng.random_range(OVERLAY_OPACITY.0..=OVERLAY_OPACITY.1)
}

fn random_text(rng: &mut Rng, len: usize) -> String {
    (0..len)
        .map(|_| GLYPHS[rng.random_range(0..GLYPHS.len())].0)
        .collect()
}

fn convolve_replicate(img: &ImageBuffer, size: usize, k: &[f64]) -> ImageBuffer {
    let (w, h) = (img.width() as isize, img.height() as isize);
    let r = (size / 2) as isize;
    let mut out = img.clone();
    for c in 0..img.channels() {
        let src = img.plane(c);
        let dst = out.plane_mut(c);
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0f64;
                for ky in 0..size as isize {
                    let sy = (y + ky - r).clamp(0, h - 1);
                    for kx in 0..size as isize {
                        let sx = (x + kx - r).clamp(0, w - 1);
                        acc += k[(ky * size as isize + kx) as usize] * src[(sy * w + sx) as usize] as f64;
                    }
                }
                dst[(y * w + x) as usize] = acc as f32;
            }
        }
    }
    out
}

/// Pixels covered by an overlay and its blend color.
pub struct OverlayMask {
    pub covered: Vec<bool>,
    pub color: [f32; 3],
    pub opacity: f32,
}

/// Rasterizes the mask of a watermark or seal spec on a `w × h` canvas.
pub fn overlay_mask(spec: &DegradationSpec, w: usize, h: usize) -> Option<OverlayMask> {
    match spec {
        DegradationSpec::Watermark {
            text,
            rotation_deg,
            scale,
            center,
            color,
            opacity,
        } => {
            let (bw, bh, bits) = text_bitmap(text);
            let (s, c) = rotation_deg.to_radians().sin_cos();
            let mut covered = vec![false; w * h];
            for y in 0..h {
                for x in 0..w {
                    // inverse-rotate into text space
                    let (dx, dy) = (x as f32 + 0.5 - center.0, y as f32 + 0.5 - center.1);
                    let u = (c * dx + s * dy) / scale + bw as f32 / 2.0;
                    let v = (-s * dx + c * dy) / scale + bh as f32 / 2.0;
                    if u >= 0.0 && v >= 0.0 && (u as usize) < bw && (v as usize) < bh {
                        covered[y * w + x] = bits[v as usize * bw + u as usize];
                    }
                }
            }
            Some(OverlayMask {
                covered,
                color: *color,
                opacity: *opacity,
            })
        }
        DegradationSpec::Seal {
            center,
            axes,
            thickness,
            text,
            color,
            opacity,
        } => {
            let mut covered = vec![false; w * h];
            let (bw, bh, bits) = text_bitmap(text);
            let glyph_scale = (1.2 * axes.0 / bw as f32).max(1.0);
            for y in 0..h {
                for x in 0..w {
                    let (dx, dy) = (x as f32 + 0.5 - center.0, y as f32 + 0.5 - center.1);
                    let rho = ((dx / axes.0).powi(2) + (dy / axes.1).powi(2)).sqrt();
                    let ring = (rho - 1.0).abs() * axes.1 <= thickness / 2.0;
                    let u = dx / glyph_scale + bw as f32 / 2.0;
                    let v = dy / glyph_scale + bh as f32 / 2.0;
                    let glyph = u >= 0.0
                        && v >= 0.0
                        && (u as usize) < bw
                        && (v as usize) < bh
                        && bits[v as usize * bw + u as usize];
                    covered[y * w + x] = ring || glyph;
                }
            }
            Some(OverlayMask {
                covered,
                color: *color,
                opacity: *opacity,
            })
        }
        _ => None,
    }
}

/// Applies one corruption to `clean`. Randomness inside the spec (e.g. the
/// bleed-through layer) is seeded from the spec itself.
pub fn degrade(clean: &ImageBuffer, spec: &DegradationSpec) -> Result<ImageBuffer> {
    let (w, h) = (clean.width(), clean.height());
    match spec {
        DegradationSpec::Blur(kernel) => {
            let (size, k) = kernel.weights();
            if size % 2 == 0 {
                return Err(Error::invalid("blur kernels must have odd size"));
            }
            Ok(convolve_replicate(clean, size, &k))
        }
        DegradationSpec::InkNoise { blobs } => {
            let mut out = clean.clone();
            for b in blobs {
                let target = if b.dark { 0.0 } else { 1.0 };
                for y in 0..h {
                    for x in 0..w {
                        let d = ((x as f32 + 0.5 - b.cx).powi(2) + (y as f32 + 0.5 - b.cy).powi(2)).sqrt();
                        if d >= b.radius {
                            continue;
                        }
                        let a = b.strength * (1.0 - (d / b.radius).powi(2));
                        for c in 0..out.channels() {
                            let v = out.get(c, y, x);
                            out.set(c, y, x, (1.0 - a) * v + a * target);
                        }
                    }
                }
            }
            Ok(out)
        }
        DegradationSpec::BleedThrough {
            opacity,
            flip,
            layer_seed,
        } => {
            let size = w.max(h).max(MIN_PATCH);
            let mut layer = render_text_patch(&mut crate::rng::seeded(*layer_seed), size)?;
            if *flip {
                layer = layer.flip_horizontal();
            }
            let mut out = clean.clone();
            for c in 0..out.channels() {
                for y in 0..h {
                    for x in 0..w {
                        let back_ink = 1.0 - layer.get(0, y, x);
                        let v = out.get(c, y, x);
                        out.set(c, y, x, v * (1.0 - opacity * back_ink));
                    }
                }
            }
            Ok(out)
        }
        DegradationSpec::Watermark { .. } | DegradationSpec::Seal { .. } => {
            let mask = overlay_mask(spec, w, h).expect("overlay spec");
            let mut out = clean.clone();
            let o = mask.opacity;
            for c in 0..out.channels() {
                let mark = if out.channels() == 1 {
                    0.299 * mask.color[0] + 0.587 * mask.color[1] + 0.114 * mask.color[2]
                } else {
                    mask.color[c]
                };
                for (i, &hit) in mask.covered.iter().enumerate() {
                    if hit {
                        let (y, x) = (i / w, i % w);
                        let doc = out.get(c, y, x);
                        out.set(c, y, x, o * doc + (1.0 - o) * mark);
                    }
                }
            }
            Ok(out)
        }
    }
}

/// Applies a corruption chain and clamps to `[0, 1]`.
pub fn degrade_all(clean: &ImageBuffer, specs: &[DegradationSpec]) -> Result<ImageBuffer> {
    let mut img = clean.clone();
    for s in specs {
        img = degrade(&img, s)?;
    }
    Ok(img.clamped())
}

/// One clean/degraded pair generated purely from `(seed, index, kind)`.
pub fn generate_pair(kind: CorpusKind, seed: u64, index: u64, size: usize) -> Result<(ImageBuffer, ImageBuffer, Vec<DegradationSpec>)> {
    let mut rng = crate::rng::stream(seed, index);
    let clean = with_channels(&render_text_patch(&mut rng, size)?, kind.channels());
    let specs = kind.sample(&mut rng, size);
    let degraded = degrade_all(&clean, &specs)?;
    Ok((degraded, clean, specs))
}
