//! Loss and AUC of a feature variant against annotated structure.
//!
//! Every variant turns a track's patches into unit-norm embeddings, which are
//! compared through the same similarity matrix and weighted BCE used in
//! training. AUC treats similarities as scores for the binary ground truth
//! over the strict upper triangle of the matrix.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoder::{encode, init_params, load_params, ChannelPlan, EmbeddingSequence, EncoderParams};
use crate::error::{Error, Result};
use crate::frontend::PatchSequence;
use crate::ingest::{read_annotation, read_beats, BeatGrid, ManifestEntry, SegmentAnnotation};
use crate::loss::{weighted_bce, LossConfig};
use crate::ssm::{ground_truth_ssm, render_binary_pgm, render_ssm_pgm, similarity_matrix, BinarySSM, SimilarityMatrix};
use crate::util::{quantile_sorted, write_atomic};

/// Pairs scored by AUC, as stated in reports.
pub const SCORED_PAIRS: &str = "strict upper triangle (i < j); diagonal and mirrored pairs excluded";
/// Loss normalisation, as stated in reports.
pub const LOSS_NORMALIZATION: &str = "per-pair mean: weighted BCE summed over all T*T pairs divided by T*T";
pub const REPORT_HEADER: [&str; 6] = ["track_id", "variant", "T", "loss", "auc", "status"];
const NORM_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VariantKind {
    /// Flattened CQT patches.
    Cqt,
    /// Encoder with random initial weights.
    Convnet,
    /// Trained encoder.
    Ssmnet,
}

impl VariantKind {
    pub fn name(self) -> &'static str {
        match self {
            VariantKind::Cqt => "cqt",
            VariantKind::Convnet => "convnet",
            VariantKind::Ssmnet => "ssmnet",
        }
    }
}

impl fmt::Display for VariantKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for VariantKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cqt" => Ok(VariantKind::Cqt),
            "convnet" => Ok(VariantKind::Convnet),
            "ssmnet" => Ok(VariantKind::Ssmnet),
            other => Err(Error::Argument(format!(
                "unknown variant {other:?} (expected cqt, convnet or ssmnet)"
            ))),
        }
    }
}

/// A way of embedding patches.
#[derive(Debug, Clone)]
pub enum FeatureVariant {
    Cqt,
    Convnet { seed: u64, params: EncoderParams<f32> },
    Ssmnet { source: Option<PathBuf>, params: EncoderParams<f32> },
}

impl FeatureVariant {
    /// Untrained encoder from `init_params(plan, seed)`.
    pub fn convnet(plan: ChannelPlan, seed: u64) -> Result<Self> {
        Ok(FeatureVariant::Convnet {
            seed,
            params: init_params(plan, seed)?,
        })
    }

    pub fn ssmnet(params: EncoderParams<f32>) -> Self {
        FeatureVariant::Ssmnet { source: None, params }
    }

    pub fn ssmnet_from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Ok(FeatureVariant::Ssmnet {
            source: Some(path.to_path_buf()),
            params: load_params(path)?,
        })
    }

    pub fn kind(&self) -> VariantKind {
        match self {
            FeatureVariant::Cqt => VariantKind::Cqt,
            FeatureVariant::Convnet { .. } => VariantKind::Convnet,
            FeatureVariant::Ssmnet { .. } => VariantKind::Ssmnet,
        }
    }

    pub fn embed(&self, track_id: &str, patches: &PatchSequence) -> Result<EmbeddingSequence<f32>> {
        match self {
            FeatureVariant::Cqt => baseline_cqt_embed(track_id, patches),
            FeatureVariant::Convnet { params, .. } | FeatureVariant::Ssmnet { params, .. } => {
                encode(track_id, patches, params)
            }
        }
    }
}

/// Each patch flattened row-major to 4608 values and L2-normalized.
pub fn baseline_cqt_embed(track_id: &str, patches: &PatchSequence) -> Result<EmbeddingSequence<f32>> {
    let dim = patches.patches().first().map_or(0, |p| p.len());
    let mut out = Array2::<f32>::zeros((patches.len(), dim));
    for (i, (p, mut row)) in patches.patches().iter().zip(out.rows_mut()).enumerate() {
        let norm = p.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt();
        if norm < NORM_EPS {
            return Err(Error::Degenerate(format!("patch {i} of track {track_id} is all zeros")));
        }
        for (dst, &v) in row.iter_mut().zip(p.iter()) {
            *dst = (v as f64 / norm) as f32;
        }
    }
    EmbeddingSequence::new(track_id, out)
}

/// Area under the ROC curve of `est` as a score for `gt` over the strict
/// upper triangle, via the Mann-Whitney statistic with midranks for ties.
pub fn roc_auc(gt: &BinarySSM, est: &SimilarityMatrix<f32>) -> Result<f64> {
    let est64 = est.values().mapv(f64::from);
    roc_auc_scores(gt.values(), &est64)
}

/// [`roc_auc`] for arbitrary real scores.
pub fn roc_auc_scores(labels: &Array2<u8>, scores: &Array2<f64>) -> Result<f64> {
    let t = labels.nrows();
    if !labels.is_square() || scores.dim() != labels.dim() {
        return Err(Error::Shape(format!(
            "labels {:?} and scores {:?} must be equal square matrices",
            labels.dim(),
            scores.dim()
        )));
    }
    let mut pairs: Vec<(f64, bool)> = Vec::with_capacity(t * t.saturating_sub(1) / 2);
    for i in 0..t {
        for j in i + 1..t {
            pairs.push((scores[[i, j]], labels[[i, j]] == 1));
        }
    }
    if let Some((s, _)) = pairs.iter().find(|(s, _)| !s.is_finite()) {
        return Err(Error::NonFinite(format!("score {s}")));
    }
    let n_pos = pairs.iter().filter(|p| p.1).count();
    let n_neg = pairs.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedAuc(format!(
            "{n_pos} positive and {n_neg} negative pairs; both classes are required"
        )));
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < pairs.len() {
        let mut j = i;
        while j + 1 < pairs.len() && pairs[j + 1].0 == pairs[i].0 {
            j += 1;
        }
        // ranks i+1 ..= j+1 share their mean
        let midrank = (i + j + 2) as f64 / 2.0;
        rank_sum_pos += midrank * pairs[i..=j].iter().filter(|p| p.1).count() as f64;
        i = j + 1;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Ok((rank_sum_pos - p * (p + 1.0) / 2.0) / (p * n))
}

/// Everything needed to score one manifest track.
#[derive(Debug, Clone)]
pub struct TrackData {
    pub track_id: String,
    pub patches: PatchSequence,
    pub beats: BeatGrid,
    pub annotation: SegmentAnnotation,
    pub gt: BinarySSM,
}

impl TrackData {
    pub fn load(entry: &ManifestEntry) -> Result<Self> {
        let patches = PatchSequence::load(&entry.features_path)?;
        let beats = read_beats(&entry.beats_path)?;
        let annotation = read_annotation(&entry.annotation_path)?;
        if patches.len() != beats.len() {
            return Err(Error::validation(format!(
                "{} patches but {} beats",
                patches.len(),
                beats.len()
            )));
        }
        let gt = ground_truth_ssm(&annotation, &beats)?;
        Ok(Self {
            track_id: entry.track_id.clone(),
            patches,
            beats,
            annotation,
            gt,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackReport {
    pub track_id: String,
    pub variant: VariantKind,
    #[serde(rename = "T")]
    pub t: Option<usize>,
    /// Per-pair mean weighted BCE.
    pub loss: Option<f64>,
    pub auc: Option<f64>,
    /// `ok` or `error: <message>`.
    pub status: String,
}

impl TrackReport {
    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }
}

/// Scored track together with the matrices behind the score.
pub struct TrackScore {
    pub report: TrackReport,
    pub estimate: SimilarityMatrix<f32>,
}

pub fn score_track(data: &TrackData, variant: &FeatureVariant, loss_cfg: &LossConfig) -> Result<TrackScore> {
    let emb = variant.embed(&data.track_id, &data.patches)?;
    let estimate = similarity_matrix(emb.vectors().view())?;
    let loss = weighted_bce(&estimate, &data.gt, loss_cfg)?;
    let auc = roc_auc(&data.gt, &estimate)?;
    Ok(TrackScore {
        report: TrackReport {
            track_id: data.track_id.clone(),
            variant: variant.kind(),
            t: Some(data.patches.len()),
            loss: Some(loss.per_pair_mean),
            auc: Some(auc),
            status: "ok".into(),
        },
        estimate,
    })
}

/// Scores every track. Failures become error rows; rows are ordered by track id.
/// With `render_dir`, writes `<id>_<variant>.pgm` and `<id>_gt.pgm` per track.
pub fn evaluate_corpus(
    entries: &[ManifestEntry],
    variant: &FeatureVariant,
    loss_cfg: &LossConfig,
    render_dir: Option<&Path>,
) -> Result<Vec<TrackReport>> {
    loss_cfg.validate()?;
    let mut sorted: Vec<&ManifestEntry> = entries.iter().collect();
    sorted.sort_by(|a, b| a.track_id.cmp(&b.track_id));
    sorted
        .par_iter()
        .map(|entry| {
            let scored = TrackData::load(entry).and_then(|data| Ok((score_track(&data, variant, loss_cfg)?, data)));
            match scored {
                Ok((score, data)) => {
                    if let Some(dir) = render_dir {
                        let id = &data.track_id;
                        render_ssm_pgm(&score.estimate, dir.join(format!("{id}_{}.pgm", variant.kind())))?;
                        render_binary_pgm(&data.gt, dir.join(format!("{id}_gt.pgm")))?;
                    }
                    Ok(score.report)
                }
                Err(e) => {
                    log::warn!("track {}: {e}", entry.track_id);
                    Ok(TrackReport {
                        track_id: entry.track_id.clone(),
                        variant: variant.kind(),
                        t: None,
                        loss: None,
                        auc: None,
                        status: format!("error: {e}"),
                    })
                }
            }
        })
        .collect()
}

/// First quartile, median and third quartile (linear interpolation).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quartiles {
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
}

impl Quartiles {
    pub fn of(values: &[f64]) -> Option<Self> {
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        Some(Self {
            q1: quantile_sorted(&v, 0.25)?,
            median: quantile_sorted(&v, 0.5)?,
            q3: quantile_sorted(&v, 0.75)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantSummary {
    pub tracks: usize,
    pub failed: usize,
    pub loss: Option<Quartiles>,
    pub auc: Option<Quartiles>,
    /// Seed of the random encoder for `convnet`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub scored_pairs: String,
    pub loss_normalization: String,
    pub variants: BTreeMap<VariantKind, VariantSummary>,
}

impl Default for ReportSummary {
    fn default() -> Self {
        Self {
            scored_pairs: SCORED_PAIRS.into(),
            loss_normalization: LOSS_NORMALIZATION.into(),
            variants: BTreeMap::new(),
        }
    }
}

pub fn summarize(rows: &[TrackReport], variant: &FeatureVariant) -> VariantSummary {
    let ok: Vec<&TrackReport> = rows.iter().filter(|r| r.is_ok()).collect();
    let losses: Vec<f64> = ok.iter().filter_map(|r| r.loss).collect();
    let aucs: Vec<f64> = ok.iter().filter_map(|r| r.auc).collect();
    let (seed, model) = match variant {
        FeatureVariant::Cqt => (None, None),
        FeatureVariant::Convnet { seed, .. } => (Some(*seed), None),
        FeatureVariant::Ssmnet { source, .. } => (None, source.clone()),
    };
    VariantSummary {
        tracks: rows.len(),
        failed: rows.len() - ok.len(),
        loss: Quartiles::of(&losses),
        auc: Quartiles::of(&aucs),
        seed,
        model,
    }
}

/// CSV report with the header `track_id,variant,T,loss,auc,status`.
pub fn report_csv(rows: &[TrackReport]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::Format(format!("csv: {e}"));
    w.write_record(REPORT_HEADER).map_err(csv_err)?;
    for r in rows {
        w.write_record([
            r.track_id.clone(),
            r.variant.to_string(),
            r.t.map(|t| t.to_string()).unwrap_or_default(),
            r.loss.map(|v| v.to_string()).unwrap_or_default(),
            r.auc.map(|v| v.to_string()).unwrap_or_default(),
            r.status.clone(),
        ])
        .map_err(csv_err)?;
    }
    w.into_inner().map_err(|e| Error::Format(format!("csv: {e}")))
}

pub fn write_report_csv(path: impl AsRef<Path>, rows: &[TrackReport]) -> Result<()> {
    write_atomic(path.as_ref(), &report_csv(rows)?)
}

pub fn read_report_csv(path: impl AsRef<Path>) -> Result<Vec<TrackReport>> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let headers = r.headers().map_err(|e| Error::Format(format!("csv: {e}")))?;
    if headers.iter().ne(REPORT_HEADER) {
        return Err(Error::Format(format!("unexpected report header {headers:?}")));
    }
    r.records()
        .map(|rec| {
            let rec = rec.map_err(|e| Error::Format(format!("csv: {e}")))?;
            let num = |k: usize| -> Result<Option<f64>> {
                match &rec[k] {
                    "" => Ok(None),
                    s => s.parse().map(Some).map_err(|_| Error::Format(format!("bad number {s:?}"))),
                }
            };
            Ok(TrackReport {
                track_id: rec[0].to_string(),
                variant: rec[1].parse()?,
                t: match &rec[2] {
                    "" => None,
                    s => Some(s.parse().map_err(|_| Error::Format(format!("bad T {s:?}")))?),
                },
                loss: num(3)?,
                auc: num(4)?,
                status: rec[5].to_string(),
            })
        })
        .collect()
}

pub fn write_summary_json(path: impl AsRef<Path>, summary: &ReportSummary) -> Result<()> {
    let mut json = serde_json::to_vec_pretty(summary)?;
    json.push(b'\n');
    write_atomic(path.as_ref(), &json)
}
