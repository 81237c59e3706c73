//! Estimated and ground-truth self-similarity matrices.

use std::path::Path;

use ndarray::{Array2, ArrayView2, Axis};

use crate::diffcore::{lit, Real};
use crate::error::{Error, Result};
use crate::ingest::{BeatGrid, SegmentAnnotation};
use crate::util::{read_file, write_atomic};

/// Bounds applied to the positive rate of a ground-truth SSM.
pub const LAMBDA_MIN: f64 = 0.05;
pub const LAMBDA_MAX: f64 = 0.95;

/// Largest accepted deviation of an embedding norm from 1.
const UNIT_NORM_TOL: f64 = 1e-5;

/// `T × T` similarities in `[0, 1]` with a unit diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix<F = f32> {
    values: Array2<F>,
}

impl<F: Real> SimilarityMatrix<F> {
    /// Wraps an existing matrix after checking shape and range.
    pub fn new(values: Array2<F>) -> Result<Self> {
        if !values.is_square() {
            return Err(Error::Shape(format!("similarity matrix is {:?}", values.dim())));
        }
        if let Some(v) = values.iter().find(|v| !(**v >= F::zero() && **v <= F::one())) {
            return Err(Error::Domain(format!("similarity {v} outside [0, 1]")));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &Array2<F> {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// `Ŝ_ij = 1 − ¼‖e_i − e_j‖²` for unit-norm rows `e_i`.
///
/// Only the upper triangle is computed and mirrored, so the result is
/// exactly symmetric with an exact unit diagonal.
pub fn similarity_matrix<F: Real>(embeddings: ArrayView2<F>) -> Result<SimilarityMatrix<F>> {
    let tol: F = lit(UNIT_NORM_TOL);
    for (i, row) in embeddings.axis_iter(Axis(0)).enumerate() {
        let norm = row.dot(&row).sqrt();
        if !((norm - F::one()).abs() <= tol) {
            return Err(Error::Domain(format!("embedding {i} has norm {norm}, expected 1")));
        }
    }
    let t = embeddings.nrows();
    let quarter: F = lit(0.25);
    let mut s = Array2::<F>::from_elem((t, t), F::one());
    for i in 0..t {
        let ei = embeddings.row(i);
        for j in i + 1..t {
            let d2 = ei
                .iter()
                .zip(embeddings.row(j))
                .map(|(&a, &b)| (a - b) * (a - b))
                .sum::<F>();
            let v = (F::one() - quarter * d2).max(F::zero()).min(F::one());
            s[[i, j]] = v;
            s[[j, i]] = v;
        }
    }
    Ok(SimilarityMatrix { values: s })
}

/// Gradient with respect to the embeddings given `∂L/∂Ŝ`:
/// `∂L/∂e_i = −½ Σ_j (G_ij + G_ji)(e_i − e_j)`.
pub fn similarity_backward<F: Real>(embeddings: ArrayView2<F>, grad: ArrayView2<F>) -> Result<Array2<F>> {
    let t = embeddings.nrows();
    if grad.dim() != (t, t) {
        return Err(Error::Shape(format!(
            "similarity gradient is {:?} for {t} embeddings",
            grad.dim()
        )));
    }
    let half: F = lit(0.5);
    let mut out = Array2::<F>::zeros(embeddings.raw_dim());
    for i in 0..t {
        for j in i + 1..t {
            let c = -half * (grad[[i, j]] + grad[[j, i]]);
            if c == F::zero() {
                continue;
            }
            for k in 0..embeddings.ncols() {
                let d = c * (embeddings[[i, k]] - embeddings[[j, k]]);
                out[[i, k]] += d;
                out[[j, k]] -= d;
            }
        }
    }
    Ok(out)
}

/// Binary ground truth: `S_ij = 1` iff beats `i` and `j` carry the same label.
#[derive(Debug, Clone, PartialEq)]
pub struct BinarySSM {
    values: Array2<u8>,
    lambda_raw: f64,
    lambda: f64,
}

impl BinarySSM {
    /// Builds `S` from per-beat label ids.
    pub fn from_labels(labels: &[usize]) -> Result<Self> {
        let t = labels.len();
        if t == 0 {
            return Err(Error::EmptyInput("no beats".into()));
        }
        let values = Array2::from_shape_fn((t, t), |(i, j)| u8::from(labels[i] == labels[j]));
        let ones = values.iter().filter(|&&v| v == 1).count();
        let lambda_raw = ones as f64 / (t * t) as f64;
        let lambda = lambda_raw.clamp(LAMBDA_MIN, LAMBDA_MAX);
        if lambda != lambda_raw {
            log::warn!("positive rate {lambda_raw:.4} clamped to {lambda}");
        }
        Ok(Self {
            values,
            lambda_raw,
            lambda,
        })
    }

    pub fn values(&self) -> &Array2<u8> {
        &self.values
    }

    pub fn to_real<F: Real>(&self) -> Array2<F> {
        self.values.mapv(|v| if v == 1 { F::one() } else { F::zero() })
    }

    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Fraction of ones in `S`.
    pub fn lambda_raw(&self) -> f64 {
        self.lambda_raw
    }

    /// Positive rate clamped to `[LAMBDA_MIN, LAMBDA_MAX]`; the loss weight.
    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn is_single_class(&self) -> bool {
        self.values.iter().all(|&v| v == 1)
    }
}

/// Segment index for every time: the segment containing it, else the
/// segment with the nearest boundary (ties go to the earlier segment).
pub fn assign_segments(ann: &SegmentAnnotation, times: &[f64]) -> Result<Vec<usize>> {
    let segs = ann.segments();
    if segs.is_empty() {
        return Err(Error::EmptyInput("annotation has no segments".into()));
    }
    Ok(times
        .iter()
        .map(|&t| {
            if let Some(k) = segs.iter().position(|s| s.contains(t)) {
                return k;
            }
            let dist = |k: usize| {
                let s = &segs[k];
                if t < s.start {
                    s.start - t
                } else {
                    t - s.end
                }
            };
            (0..segs.len())
                .min_by(|&a, &b| dist(a).total_cmp(&dist(b)))
                .expect("non-empty")
        })
        .collect())
}

/// Label id (index into [`SegmentAnnotation::labels`]) of every time.
pub fn time_labels(ann: &SegmentAnnotation, times: &[f64]) -> Result<Vec<usize>> {
    let labels = ann.labels();
    let segs = ann.segments();
    Ok(assign_segments(ann, times)?
        .into_iter()
        .map(|k| labels.iter().position(|l| *l == segs[k].label).expect("label listed"))
        .collect())
}

/// Label id of every beat.
pub fn beat_labels(ann: &SegmentAnnotation, beats: &BeatGrid) -> Result<Vec<usize>> {
    time_labels(ann, beats.times())
}

pub fn ground_truth_ssm(ann: &SegmentAnnotation, beats: &BeatGrid) -> Result<BinarySSM> {
    let gt = BinarySSM::from_labels(&beat_labels(ann, beats)?)?;
    if gt.is_single_class() {
        log::warn!("every beat carries the same label; the ground-truth SSM is all ones");
    }
    Ok(gt)
}

/// Binary PGM (`P5`, maxval 255) with pixel `round(255·v)` for `v ∈ [0, 1]`.
pub fn pgm_bytes(values: ArrayView2<f64>) -> Vec<u8> {
    let (h, w) = values.dim();
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(
        values
            .iter()
            .map(|&v| (255.0 * v.clamp(0.0, 1.0) + 0.5).floor() as u8),
    );
    out
}

pub fn render_ssm_pgm<F: Real>(s: &SimilarityMatrix<F>, path: impl AsRef<Path>) -> Result<()> {
    let v = s.values.mapv(|x| x.to_f64().expect("finite"));
    write_atomic(path.as_ref(), &pgm_bytes(v.view()))
}

pub fn render_binary_pgm(s: &BinarySSM, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &pgm_bytes(s.to_real::<f64>().view()))
}

/// Reads a binary 8-bit PGM written by [`pgm_bytes`].
pub fn read_pgm(path: impl AsRef<Path>) -> Result<Array2<u8>> {
    let bytes = read_file(path.as_ref())?;
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Format("truncated PGM header".into()));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1;
    let bad = || Error::Format("malformed PGM header".into());
    if fields[0] != "P5" || fields[3] != "255" {
        return Err(bad());
    }
    let w: usize = fields[1].parse().map_err(|_| bad())?;
    let h: usize = fields[2].parse().map_err(|_| bad())?;
    let data = bytes.get(pos..).filter(|d| d.len() == w * h).ok_or_else(|| {
        Error::Length(format!("PGM payload does not hold {w}x{h} pixels"))
    })?;
    Ok(Array2::from_shape_vec((h, w), data.to_vec()).expect("length checked"))
}
