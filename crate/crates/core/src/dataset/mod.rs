//! Image and mask ingestion, manifests, overlays and the synthetic suite.

mod io;
mod overlay;
pub mod synth;
mod types;

pub use io::{
    label_table_path, load_sample, read_binary_mask, read_label_table, read_manifest,
    read_parsing_mask, read_rgb, write_binary_mask, write_manifest, write_parsing_mask, write_rgb,
    Sample, SampleRecord,
};
pub use overlay::{overlay, write_overlay, OVERLAY_TINT};
pub use synth::{synth_sample, write_synth_dataset, OccluderShape, SynthConfig, SynthSample, TextureMode};
pub use types::{BinaryMask, FaceComponent, LabelTable, ParsingMask, RgbImage, Split};
