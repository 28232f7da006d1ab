//! Synthetic segmentation scenes, Netpbm image and label files, and the
//! on-disk dataset layout.

mod dataset;
mod netpbm;
mod scene;

pub use dataset::{image_path, label_path, write_dataset, Dataset, CONFIG_FILE};
pub use netpbm::{
    decode_pgm, decode_ppm, encode_pgm, encode_ppm, read_pgm, read_ppm, write_pgm, write_ppm,
};
pub use scene::{colorize, default_palette, generate_scene, Sample, SceneConfig, ShapeKind};
