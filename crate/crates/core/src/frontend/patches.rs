use std::path::{Path, PathBuf};

use ndarray::{s, Array2, Array4, Axis};
use serde::{Deserialize, Serialize};

use super::{SubBeatMatrix, PATCH_BINS, PATCH_COLS, PATCH_INTERVALS, SUB_BEATS};
use crate::diffcore::Real;
use crate::error::{Error, Result};
use crate::ingest::{read_feature_matrix, write_feature_matrix, BeatGrid, MIN_BEATS};
use crate::util::{read_text, write_atomic};

/// One 72 × 64 patch per beat.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchSequence {
    patches: Vec<Array2<f32>>,
    beat_times: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    n_patches: usize,
    beat_times: Vec<f64>,
}

impl PatchSequence {
    pub fn new(patches: Vec<Array2<f32>>, beat_times: Vec<f64>) -> Result<Self> {
        if patches.len() != beat_times.len() {
            return Err(Error::Shape(format!(
                "{} patches for {} beats",
                patches.len(),
                beat_times.len()
            )));
        }
        if let Some(i) = patches.iter().position(|p| p.dim() != (PATCH_BINS, PATCH_COLS)) {
            return Err(Error::Shape(format!(
                "patch {i} is {:?}, expected ({PATCH_BINS}, {PATCH_COLS})",
                patches[i].dim()
            )));
        }
        if patches.iter().any(|p| p.iter().any(|v| !v.is_finite())) {
            return Err(Error::validation("patch values must be finite"));
        }
        Ok(Self { patches, beat_times })
    }

    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    pub fn patches(&self) -> &[Array2<f32>] {
        &self.patches
    }

    pub fn patch(&self, i: usize) -> &Array2<f32> {
        &self.patches[i]
    }

    /// Beat that patch `i` is centred on.
    pub fn beat_times(&self) -> &[f64] {
        &self.beat_times
    }

    /// Network input layout `[T, 1, 72, 64]`.
    pub fn to_tensor<F: Real>(&self) -> Array4<F> {
        let mut out = Array4::<F>::zeros((self.len(), 1, PATCH_BINS, PATCH_COLS));
        for (mut dst, p) in out.axis_iter_mut(Axis(0)).zip(&self.patches) {
            dst.index_axis_mut(Axis(0), 0)
                .zip_mut_with(p, |d, &v| *d = F::from_f32(v).unwrap());
        }
        out
    }

    /// Sequence restricted to the given patch indices, in that order.
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            patches: indices.iter().map(|&i| self.patches[i].clone()).collect(),
            beat_times: indices.iter().map(|&i| self.beat_times[i]).collect(),
        }
    }

    /// Path of the JSON sidecar that accompanies the SSMF file at `path`.
    pub fn sidecar_path(path: &Path) -> PathBuf {
        path.with_extension("json")
    }

    /// Writes a `(T·72) × 64` SSMF matrix plus the JSON sidecar.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut stacked = Array2::<f32>::zeros((self.len() * PATCH_BINS, PATCH_COLS));
        for (i, p) in self.patches.iter().enumerate() {
            stacked.slice_mut(s![i * PATCH_BINS..(i + 1) * PATCH_BINS, ..]).assign(p);
        }
        write_feature_matrix(path, &stacked)?;
        let sidecar = Sidecar {
            n_patches: self.len(),
            beat_times: self.beat_times.clone(),
        };
        write_atomic(&Self::sidecar_path(path), &serde_json::to_vec(&sidecar)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let stacked = read_feature_matrix(path)?;
        let sidecar: Sidecar = serde_json::from_str(&read_text(&Self::sidecar_path(path))?)?;
        if stacked.ncols() != PATCH_COLS || stacked.nrows() != sidecar.n_patches * PATCH_BINS {
            return Err(Error::Shape(format!(
                "{}: matrix {:?} does not hold {} patches of {PATCH_BINS}x{PATCH_COLS}",
                path.display(),
                stacked.dim(),
                sidecar.n_patches
            )));
        }
        let patches = stacked
            .axis_chunks_iter(Axis(0), PATCH_BINS)
            .map(|c| c.to_owned())
            .collect();
        Self::new(patches, sidecar.beat_times)
    }
}

/// Builds the patch for every beat `i` from the interval blocks
/// `(i−2, i−1), (i−1, i), (i, i+1), (i+1, i+2)`; blocks that fall off either
/// end of the track are replaced by the nearest existing block.
pub fn assemble_patches(sub: &SubBeatMatrix, beats: &BeatGrid) -> Result<PatchSequence> {
    let n_beats = beats.len();
    if n_beats < MIN_BEATS {
        return Err(Error::TooShort(format!("{n_beats} beats, need {MIN_BEATS}")));
    }
    if sub.n_sub != SUB_BEATS || sub.values.ncols() != SUB_BEATS * (n_beats - 1) || sub.values.nrows() != PATCH_BINS {
        return Err(Error::Shape(format!(
            "sub-beat matrix {:?} does not match {n_beats} beats",
            sub.values.dim()
        )));
    }
    let last_block = (n_beats - 2) as isize;
    let patches = (0..n_beats)
        .map(|i| {
            let mut p = Array2::<f32>::zeros((PATCH_BINS, PATCH_COLS));
            for slot in 0..PATCH_INTERVALS {
                let block = (i as isize + slot as isize - 2).clamp(0, last_block) as usize;
                p.slice_mut(s![.., slot * SUB_BEATS..(slot + 1) * SUB_BEATS])
                    .assign(&sub.values.slice(s![.., block * SUB_BEATS..(block + 1) * SUB_BEATS]));
            }
            p
        })
        .collect();
    PatchSequence::new(patches, beats.times().to_vec())
}
