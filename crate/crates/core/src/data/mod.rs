//! Images, netpbm I/O, synthetic degraded-document corpora and training crops.

mod corpus;
pub mod font;
mod image;
mod pnm;
pub mod synth;

pub use corpus::{pair_paths, sample_training_pair, write_corpus, Augment, Corpus, MANIFEST};
pub use image::ImageBuffer;
pub use pnm::{decode, encode, from_byte, load_image, save_image, to_byte};
pub use synth::{degrade, degrade_all, generate_pair, render_text_patch, CorpusKind, DegradationSpec};
