//! Readers and writers for the on-disk inputs: audio, beat grids, segment
//! annotations, SSMF feature matrices and corpus manifests.
//!
//! All readers are pure functions of file content and return validated,
//! immutable values.

mod annotation;
mod beats;
mod manifest;
mod ssmf;
mod wav;

pub use annotation::{normalize_label, read_annotation, write_annotation, Segment, SegmentAnnotation};
pub use beats::{read_beats, uniform_beats, write_beats, BeatGrid, BeatSource, MIN_BEATS};
pub use manifest::{read_manifest, write_manifest, ManifestEntry};
pub use ssmf::{decode_ssmf, encode_ssmf, read_feature_matrix, write_feature_matrix, SSMF_MAGIC, SSMF_VERSION};
pub use wav::{read_wav, write_wav_pcm16, AudioBuffer};
