//! Pluggable stand-ins for the pretrained components: image encoder,
//! positional scheme, mask decoder, reference generator and landmark scorer.
//! Each has a deterministic toy implementation and a file-exchange adapter.

pub mod arrayfile;
mod decoder;
mod encoder;
mod grid;
mod landmark;
mod positional;
mod reference;

pub use arrayfile::{ArrayFile, DType};
pub use decoder::{sigmoid, DecoderKeys, ExternalDecoder, ToyDecoder};
pub use encoder::{BackendKind, Encoder, EncoderConfig, ExternalEncoder, ImageRole, ToyEncoder};
pub use grid::{ProbabilityMap, Resolution, TokenGrid};
pub use landmark::{ConstantLandmark, FileLandmark, LandmarkBackend, LandmarkScorer, QualityInputs};
pub use positional::PositionalEncoding;
pub use reference::{external_reference_path, provide_reference, reference_for, ReferenceMode};
