//! Paired corpora on disk and random training crops.
//!
//! Layout: `<root>/<split>/<NNNNNN>.{pgm,ppm}` (degraded) next to
//! `<root>/<split>/<NNNNNN>_gt.{pgm,ppm}` (clean), plus `manifest.txt` with
//! one `index kind seed` line per pair.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng::Rng;

use super::pnm::{load_image, save_image};
use super::synth::{generate_pair, CorpusKind};
use super::ImageBuffer;

pub const MANIFEST: &str = "manifest.txt";

fn extension(channels: usize) -> &'static str {
    if channels == 1 {
        "pgm"
    } else {
        "ppm"
    }
}

pub fn pair_paths(dir: &Path, index: usize, channels: usize) -> (PathBuf, PathBuf) {
    let ext = extension(channels);
    (
        dir.join(format!("{index:06}.{ext}")),
        dir.join(format!("{index:06}_gt.{ext}")),
    )
}

/// Generates `count` pairs into `dir`. Pairs are independent streams of
/// `seed`, so output does not depend on the number of worker threads.
pub fn write_corpus(dir: &Path, kind: CorpusKind, count: usize, size: usize, seed: u64) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let write_one = |i: usize| -> Result<()> {
        let (y, gt, _) = generate_pair(kind, seed, i as u64, size)?;
        let (py, pgt) = pair_paths(dir, i, kind.channels());
        save_image(&y, py)?;
        save_image(&gt, pgt)
    };
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..count).into_par_iter().try_for_each(write_one)?;
    }
    #[cfg(not(feature = "parallel"))]
    (0..count).try_for_each(write_one)?;

    let manifest: String = (0..count)
        .map(|i| format!("{i} {} {seed}\n", kind.name()))
        .collect();
    let path = dir.join(MANIFEST);
    fs::write(&path, manifest).map_err(|e| Error::io(&path, e))
}

/// In-memory `(degraded, clean)` pairs.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    pub pairs: Vec<(ImageBuffer, ImageBuffer)>,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn channels(&self) -> Option<usize> {
        self.pairs.first().map(|(y, _)| y.channels())
    }

    /// Generated in memory, identical to what [`write_corpus`] stores after
    /// 8-bit quantization.
    pub fn synthetic(kind: CorpusKind, count: usize, size: usize, seed: u64) -> Result<Self> {
        let pairs = (0..count)
            .map(|i| generate_pair(kind, seed, i as u64, size).map(|(y, gt, _)| (y, gt)))
            .collect::<Result<_>>()?;
        Ok(Self { pairs })
    }

    /// Loads every `X_gt.{pgm,ppm}` with a matching `X.{pgm,ppm}` from `dir`,
    /// sorted by name.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
        let mut stems = Vec::new();
        for entry in entries {
            let entry = entry.map_err(|e| Error::io(dir, e))?;
            let name = entry.file_name().to_string_lossy().into_owned();
            for ext in [".pgm", ".ppm"] {
                if let Some(stem) = name.strip_suffix(&format!("_gt{ext}")) {
                    stems.push((stem.to_string(), ext));
                }
            }
        }
        stems.sort();
        let mut pairs = Vec::with_capacity(stems.len());
        for (stem, ext) in stems {
            let degraded = dir.join(format!("{stem}{ext}"));
            if !degraded.exists() {
                return Err(Error::invalid(format!(
                    "{} has no degraded counterpart {}",
                    dir.join(format!("{stem}_gt{ext}")).display(),
                    degraded.display()
                )));
            }
            let y = load_image(&degraded)?;
            let gt = load_image(dir.join(format!("{stem}_gt{ext}")))?;
            if !y.same_shape(&gt) {
                return Err(Error::invalid(format!(
                    "pair {stem}: degraded and clean images differ in shape"
                )));
            }
            pairs.push((y, gt));
        }
        Ok(Self { pairs })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Augment {
    pub quarter_turns: usize,
    pub flip: bool,
}

impl Augment {
    pub fn sample(rng: &mut Rng) -> Self {
        let quarter_turns = if rng.random_bool(0.5) {
            rng.random_range(1..=3)
        } else {
            0
        };
        Self {
            quarter_turns,
            flip: rng.random_bool(0.5),
        }
    }

    pub fn apply(&self, img: &ImageBuffer) -> ImageBuffer {
        let img = if self.flip { img.flip_horizontal() } else { img.clone() };
        img.rotate90(self.quarter_turns)
    }
}

/// An aligned random `crop × crop` window from a random pair, with the same
/// rotation/flip applied to both images when `augment` is set.
pub fn sample_training_pair(
    corpus: &Corpus,
    rng: &mut Rng,
    crop: usize,
    augment: bool,
) -> Result<(ImageBuffer, ImageBuffer)> {
    if corpus.is_empty() {
        return Err(Error::invalid("cannot sample from an empty corpus"));
    }
    let (y, gt) = &corpus.pairs[rng.random_range(0..corpus.len())];
    if crop == 0 || crop > y.width() || crop > y.height() {
        return Err(Error::invalid(format!(
            "crop {crop} does not fit a {}x{} image",
            y.width(),
            y.height()
        )));
    }
    let x0 = rng.random_range(0..=y.width() - crop);
    let y0 = rng.random_range(0..=y.height() - crop);
    let (yc, gc) = (y.crop(x0, y0, crop, crop)?, gt.crop(x0, y0, crop, crop)?);
    if augment {
        let a = Augment::sample(rng);
        Ok((a.apply(&yc), a.apply(&gc)))
    } else {
        Ok((yc, gc))
    }
}
