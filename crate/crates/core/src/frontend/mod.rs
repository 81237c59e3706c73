//! Audio to beat-centred CQT patches.
//!
//! `compute_cqt` → `subdivide_beats` → `assemble_patches`. Each patch is a
//! 72 × 64 slice of the CQT: four inter-beat intervals of 16 sub-beat columns,
//! centred on its beat.

mod cqt;
mod patches;
mod subbeat;

pub use cqt::{compute_cqt, decimate, CqtConfig, CqtMatrix, C1_HZ};
pub use patches::{assemble_patches, PatchSequence};
pub use subbeat::{subdivide_beats, ward_segments, SubBeatMatrix};

use crate::error::Result;
use crate::ingest::{AudioBuffer, BeatGrid};

/// Frequency rows of every patch (6 octaves × 12 bins).
pub const PATCH_BINS: usize = 72;
/// Sub-beat columns per inter-beat interval.
pub const SUB_BEATS: usize = 16;
/// Inter-beat intervals per patch.
pub const PATCH_INTERVALS: usize = 4;
pub const PATCH_COLS: usize = SUB_BEATS * PATCH_INTERVALS;

/// Full extraction: CQT, sub-beat clustering, patch assembly.
pub fn extract_patches(audio: &AudioBuffer, beats: &BeatGrid, config: &CqtConfig) -> Result<PatchSequence> {
    let cqt = compute_cqt(audio, config)?;
    patches_from_cqt(&cqt, beats)
}

pub fn patches_from_cqt(cqt: &CqtMatrix, beats: &BeatGrid) -> Result<PatchSequence> {
    let sub = subdivide_beats(cqt, beats, SUB_BEATS)?;
    assemble_patches(&sub, beats)
}
