//! Synthetic structured tracks: CQT-like matrices whose sections repeat a
//! per-label spectral template, with matching beats and annotations.
//!
//! Beat `k` sits at `(k + ½)·period` and section `s` spans
//! `[s·n·period, (s+1)·n·period)` for `n` beats per section, so every patch
//! is dominated by the section of its centre beat.

use std::path::Path;

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frontend::{patches_from_cqt, CqtMatrix, PatchSequence, PATCH_BINS};
use crate::ingest::{write_annotation, write_beats, write_manifest, BeatGrid, BeatSource, ManifestEntry, Segment, SegmentAnnotation};

/// Semitone offsets of the partials of a harmonic tone above its fundamental.
const PARTIAL_OFFSETS: [usize; 8] = [0, 12, 19, 24, 28, 31, 34, 36];
/// Lowest bin a template fundamental may occupy is 0, the highest this.
const MAX_FUNDAMENTAL: usize = 30;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    /// One character per section; equal characters share a label.
    pub structure: String,
    pub beats_per_section: usize,
    /// Seconds between beats.
    pub beat_period: f64,
    pub frames_per_beat: usize,
    /// Standard deviation of the additive Gaussian noise.
    pub noise: f64,
    /// Spectral peaks per template (at most 8).
    pub peaks: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            structure: "ABAB".into(),
            beats_per_section: 8,
            beat_period: 0.5,
            frames_per_beat: 20,
            noise: 0.0,
            peaks: 4,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let labels = self.labels();
        if self.structure.chars().count() < 2 || labels.len() < 2 {
            return Err(Error::Config(format!(
                "structure {:?} needs at least 2 sections and 2 distinct labels",
                self.structure
            )));
        }
        if self.beats_per_section < 4 {
            return Err(Error::Config("beats_per_section must be at least 4".into()));
        }
        if !(self.beat_period > 0.0 && self.beat_period.is_finite()) || self.frames_per_beat == 0 {
            return Err(Error::Config("beat_period and frames_per_beat must be positive".into()));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::Config(format!("noise must be non-negative, got {}", self.noise)));
        }
        if !(1..=PARTIAL_OFFSETS.len()).contains(&self.peaks) {
            return Err(Error::Config(format!("peaks must lie in 1..={}", PARTIAL_OFFSETS.len())));
        }
        if labels.len() > MAX_FUNDAMENTAL + 1 {
            return Err(Error::Config(format!("at most {} distinct labels", MAX_FUNDAMENTAL + 1)));
        }
        Ok(())
    }

    /// Distinct section labels in order of first appearance.
    pub fn labels(&self) -> Vec<char> {
        let mut out = Vec::new();
        for c in self.structure.chars() {
            if !out.contains(&c) {
                out.push(c);
            }
        }
        out
    }

    pub fn frame_rate(&self) -> f64 {
        self.frames_per_beat as f64 / self.beat_period
    }
}

/// One generated track.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthTrack {
    pub cqt: CqtMatrix,
    pub beats: BeatGrid,
    pub annotation: SegmentAnnotation,
}

impl SynthTrack {
    pub fn patches(&self) -> Result<PatchSequence> {
        patches_from_cqt(&self.cqt, &self.beats)
    }
}

/// Harmonic-like template: decaying peaks above a random fundamental, each
/// spread over its neighbouring bins.
fn template(fundamental: usize, peaks: usize, rng: &mut impl Rng) -> Array1<f32> {
    let mut t = Array1::<f32>::zeros(PATCH_BINS);
    for (p, &offset) in PARTIAL_OFFSETS.iter().take(peaks).enumerate() {
        let centre = fundamental + offset;
        let amp = (1.0 / (1.0 + 0.35 * p as f64)) * rng.gen_range(0.75..1.0);
        for d in -2i64..=2 {
            let bin = centre as i64 + d;
            if (0..PATCH_BINS as i64).contains(&bin) {
                let v = amp * (-(d * d) as f64 / 1.5).exp();
                let slot = &mut t[bin as usize];
                *slot = slot.max(v as f32);
            }
        }
    }
    t
}

pub fn gen_track(cfg: &SynthConfig) -> Result<SynthTrack> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let labels = cfg.labels();
    let mut fundamentals: Vec<usize> = (0..=MAX_FUNDAMENTAL).collect();
    fundamentals.shuffle(&mut rng);
    let templates: Vec<Array1<f32>> = fundamentals[..labels.len()]
        .iter()
        .map(|&f| template(f, cfg.peaks, &mut rng))
        .collect();

    let sections: Vec<usize> = cfg
        .structure
        .chars()
        .map(|c| labels.iter().position(|&l| l == c).expect("label listed"))
        .collect();
    let n_beats = sections.len() * cfg.beats_per_section;
    let section_frames = cfg.beats_per_section * cfg.frames_per_beat;
    let noise = Normal::new(0.0, cfg.noise).map_err(|e| Error::Config(e.to_string()))?;
    let mut values = Array2::<f32>::zeros((PATCH_BINS, sections.len() * section_frames));
    for (f, mut col) in values.columns_mut().into_iter().enumerate() {
        let tpl = &templates[sections[f / section_frames]];
        for (dst, &v) in col.iter_mut().zip(tpl) {
            let n = if cfg.noise > 0.0 { noise.sample(&mut rng) } else { 0.0 };
            *dst = (v as f64 + n).clamp(0.0, 1.0) as f32;
        }
    }
    let cqt = CqtMatrix::new(values, cfg.frame_rate())?;

    let beats = BeatGrid::new(
        (0..n_beats).map(|k| (k as f64 + 0.5) * cfg.beat_period).collect(),
        BeatSource::File,
    )?;
    let section_len = cfg.beats_per_section as f64 * cfg.beat_period;
    let annotation = SegmentAnnotation::new(
        cfg.structure
            .chars()
            .enumerate()
            .map(|(s, c)| Segment {
                start: s as f64 * section_len,
                end: (s + 1) as f64 * section_len,
                label: c.to_string(),
            })
            .collect(),
    )?;
    Ok(SynthTrack { cqt, beats, annotation })
}

/// Random structure: 3–6 sections over 2–4 labels, adjacent sections
/// differ and every label occurs.
pub fn random_structure(rng: &mut impl Rng) -> String {
    let n_labels = rng.gen_range(2..=4usize);
    let n_sections = rng.gen_range(n_labels.max(3)..=6usize);
    loop {
        let mut seq: Vec<usize> = Vec::with_capacity(n_sections);
        while seq.len() < n_sections {
            let l = rng.gen_range(0..n_labels);
            if seq.last() != Some(&l) {
                seq.push(l);
            }
        }
        if (0..n_labels).all(|l| seq.contains(&l)) {
            // name labels by first appearance so structures read "ABAC..."
            let mut order: Vec<usize> = Vec::new();
            for &l in &seq {
                if !order.contains(&l) {
                    order.push(l);
                }
            }
            return seq
                .iter()
                .map(|l| (b'A' + order.iter().position(|o| o == l).expect("seen") as u8) as char)
                .collect();
        }
    }
}

/// Writes `n_tracks` tracks and `manifest.json` into `out_dir`. Track `i`
/// uses seed `seed + i` for its structure, templates and noise; the other
/// settings come from `base`.
pub fn gen_corpus(n_tracks: usize, base: &SynthConfig, seed: u64, out_dir: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let entries = (0..n_tracks)
        .into_par_iter()
        .map(|i| {
            let track_seed = seed.wrapping_add(i as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(track_seed);
            let cfg = SynthConfig {
                structure: random_structure(&mut rng),
                seed: rng.gen(),
                ..base.clone()
            };
            let track = gen_track(&cfg)?;
            let id = format!("track_{i:03}");
            let entry = ManifestEntry {
                track_id: id.clone(),
                features_path: format!("{id}.ssmf").into(),
                beats_path: format!("{id}.beats").into(),
                annotation_path: format!("{id}.lab").into(),
            };
            track.patches()?.save(out_dir.join(&entry.features_path))?;
            write_beats(out_dir.join(&entry.beats_path), &track.beats)?;
            write_annotation(out_dir.join(&entry.annotation_path), &track.annotation)?;
            Ok(entry)
        })
        .collect::<Result<Vec<_>>>()?;
    write_manifest(out_dir.join("manifest.json"), &entries)?;
    Ok(entries
        .into_iter()
        .map(|e| ManifestEntry {
            features_path: out_dir.join(e.features_path),
            beats_path: out_dir.join(e.beats_path),
            annotation_path: out_dir.join(e.annotation_path),
            track_id: e.track_id,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_of_a_track() {
        let cfg = SynthConfig {
            structure: "AB".into(),
            ..SynthConfig::default()
        };
        let t = gen_track(&cfg).unwrap();
        assert_eq!(t.beats.len(), 16);
        assert_eq!(t.cqt.n_frames(), 16 * 20);
        assert_eq!(t.beats.times()[0], 0.25);
        assert_eq!(t.annotation.segments()[1].start, 4.0);
        assert!(t.cqt.values.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn same_seed_same_track() {
        let cfg = SynthConfig {
            noise: 0.3,
            seed: 4,
            ..SynthConfig::default()
        };
        assert_eq!(gen_track(&cfg).unwrap(), gen_track(&cfg).unwrap());
    }

    #[test]
    fn config_validation() {
        for bad in [
            SynthConfig {
                structure: "AAAA".into(),
                ..SynthConfig::default()
            },
            SynthConfig {
                beats_per_section: 3,
                ..SynthConfig::default()
            },
            SynthConfig {
                noise: -0.1,
                ..SynthConfig::default()
            },
        ] {
            assert!(matches!(gen_track(&bad), Err(Error::Config(_))));
        }
    }

    #[test]
    fn structures_follow_the_grammar() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..500 {
            let s: Vec<char> = random_structure(&mut rng).chars().collect();
            assert!((3..=6).contains(&s.len()));
            assert!(s.windows(2).all(|w| w[0] != w[1]));
            let mut distinct = s.clone();
            distinct.sort_unstable();
            distinct.dedup();
            assert!((2..=4).contains(&distinct.len()));
            assert_eq!(distinct[0], 'A');
            assert_eq!(*distinct.last().unwrap(), (b'A' + distinct.len() as u8 - 1) as char);
        }
    }
}
