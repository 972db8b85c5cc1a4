use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// A `height × width` image with 1 or 3 channels, stored planar (CHW).
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer {
    width: usize,
    height: usize,
    channels: usize,
    pixels: Vec<f32>,
}

impl ImageBuffer {
    pub fn new(width: usize, height: usize, channels: usize, pixels: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid(format!("image extent {width}x{height} is empty")));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::invalid(format!("images have 1 or 3 channels, got {channels}")));
        }
        if pixels.len() != width * height * channels {
            return Err(Error::invalid(format!(
                "{width}x{height}x{channels} image needs {} values, got {}",
                width * height * channels,
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f32) -> Self {
        Self::new(width, height, channels, vec![value; width * height * channels])
            .expect("filled image with valid extent")
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [f32] {
        &mut self.pixels
    }

    pub fn into_pixels(self) -> Vec<f32> {
        self.pixels
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.width * self.height;
        &self.pixels[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f32] {
        let n = self.width * self.height;
        &mut self.pixels[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.pixels[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f32) {
        self.pixels[(c * self.height + y) * self.width + x] = v;
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        (self.width, self.height, self.channels) == (other.width, other.height, other.channels)
    }

    pub fn clamped(mut self) -> Self {
        self.pixels.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
        self
    }

    /// Elementwise `self + other`, unclamped.
    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a - b)
    }

    fn zip_with(&self, other: &Self, f: impl Fn(f32, f32) -> f32) -> Result<Self> {
        if !self.same_shape(other) {
            return Err(Error::ShapeMismatch {
                op: "image arithmetic",
                left: vec![self.channels, self.height, self.width],
                right: vec![other.channels, other.height, other.width],
            });
        }
        let pixels = self.pixels.iter().zip(&other.pixels).map(|(&a, &b)| f(a, b)).collect();
        Ok(Self { pixels, ..*self })
    }

    /// Single-channel luma (0.299, 0.587, 0.114); grayscale images are copied.
    pub fn luma(&self) -> Self {
        if self.channels == 1 {
            return self.clone();
        }
        let n = self.width * self.height;
        let pixels = (0..n)
            .map(|i| {
                0.299 * self.pixels[i] + 0.587 * self.pixels[n + i] + 0.114 * self.pixels[2 * n + i]
            })
            .collect();
        Self {
            channels: 1,
            pixels,
            ..*self
        }
    }

    /// Axis-aligned sub-image.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<Self> {
        if w == 0 || h == 0 || x0 + w > self.width || y0 + h > self.height {
            return Err(Error::invalid(format!(
                "crop {w}x{h} at ({x0},{y0}) exceeds {}x{} image",
                self.width, self.height
            )));
        }
        let mut pixels = Vec::with_capacity(w * h * self.channels);
        for c in 0..self.channels {
            let plane = self.plane(c);
            for y in y0..y0 + h {
                pixels.extend_from_slice(&plane[y * self.width + x0..y * self.width + x0 + w]);
            }
        }
        Self::new(w, h, self.channels, pixels)
    }

    /// Extends the right and bottom borders by repeating the last row/column.
    pub fn pad_replicate(&self, new_w: usize, new_h: usize) -> Self {
        debug_assert!(new_w >= self.width && new_h >= self.height);
        let mut pixels = Vec::with_capacity(new_w * new_h * self.channels);
        for c in 0..self.channels {
            let plane = self.plane(c);
            for y in 0..new_h {
                let sy = y.min(self.height - 1);
                for x in 0..new_w {
                    pixels.push(plane[sy * self.width + x.min(self.width - 1)]);
                }
            }
        }
        Self {
            width: new_w,
            height: new_h,
            channels: self.channels,
            pixels,
        }
    }

    /// Mirror left-right.
    pub fn flip_horizontal(&self) -> Self {
        let mut out = self.clone();
        for c in 0..self.channels {
            for y in 0..self.height {
                for x in 0..self.width {
                    out.set(c, y, x, self.get(c, y, self.width - 1 - x));
                }
            }
        }
        out
    }

    /// Rotation by `quarter_turns × 90°` counter-clockwise.
    pub fn rotate90(&self, quarter_turns: usize) -> Self {
        let q = quarter_turns % 4;
        if q == 0 {
            return self.clone();
        }
        let (w, h) = (self.width, self.height);
        let (nw, nh) = if q % 2 == 1 { (h, w) } else { (w, h) };
        let mut pixels = vec![0.0; self.pixels.len()];
        for c in 0..self.channels {
            for y in 0..nh {
                for x in 0..nw {
                    let (sy, sx) = match q {
                        1 => (x, w - 1 - y),
                        2 => (h - 1 - y, w - 1 - x),
                        _ => (h - 1 - x, y),
                    };
                    pixels[(c * nh + y) * nw + x] = self.get(c, sy, sx);
                }
            }
        }
        Self {
            width: nw,
            height: nh,
            channels: self.channels,
            pixels,
        }
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_vec(&[1, self.channels, self.height, self.width], self.pixels.clone())
            .expect("image extents are positive")
    }

    /// Stacks same-shaped images into an `[N, C, H, W]` tensor.
    pub fn stack(images: &[Self]) -> Result<Tensor> {
        let first = images
            .first()
            .ok_or_else(|| Error::invalid("cannot stack an empty image list"))?;
        let mut data = Vec::with_capacity(first.pixels.len() * images.len());
        for im in images {
            if !im.same_shape(first) {
                return Err(Error::ShapeMismatch {
                    op: "stack",
                    left: vec![first.channels, first.height, first.width],
                    right: vec![im.channels, im.height, im.width],
                });
            }
            data.extend_from_slice(&im.pixels);
        }
        Tensor::from_vec(&[images.len(), first.channels, first.height, first.width], data)
    }

    /// Sample `index` of an NCHW tensor.
    pub fn from_tensor(t: &Tensor, index: usize) -> Result<Self> {
        let [n, c, h, w] = crate::numerics::dims4("from_tensor", t)?;
        if index >= n {
            return Err(Error::invalid(format!("sample {index} out of {n}")));
        }
        let per = c * h * w;
        let data = t.data()[index * per..(index + 1) * per].to_vec();
        Self::new(w, h, c, data)
    }
}
