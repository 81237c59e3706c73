use ndarray::{Array2, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::frontend::CqtMatrix;
use crate::ingest::BeatGrid;

/// `bins × n_sub·(B−1)` matrix: `n_sub` columns per inter-beat interval.
#[derive(Debug, Clone, PartialEq)]
pub struct SubBeatMatrix {
    pub values: Array2<f32>,
    pub beats_covered: usize,
    pub n_sub: usize,
}

/// Splits the columns of `frames` (features × n) into `n_clusters`
/// contiguous runs by greedy agglomerative merging with the Ward cost
/// `n_a n_b / (n_a + n_b) · ‖μ_a − μ_b‖²`. Ties merge the earlier pair.
/// Returns the start column of every run.
pub fn ward_segments(frames: ArrayView2<f32>, n_clusters: usize) -> Vec<usize> {
    let n = frames.ncols();
    let n_clusters = n_clusters.clamp(1, n.max(1));
    struct Run {
        start: usize,
        len: usize,
        sum: Vec<f64>,
    }
    let mut runs: Vec<Run> = (0..n)
        .map(|j| Run {
            start: j,
            len: 1,
            sum: frames.column(j).iter().map(|&v| v as f64).collect(),
        })
        .collect();
    let cost = |a: &Run, b: &Run| -> f64 {
        let (na, nb) = (a.len as f64, b.len as f64);
        let d2: f64 = a
            .sum
            .iter()
            .zip(&b.sum)
            .map(|(sa, sb)| {
                let d = sa / na - sb / nb;
                d * d
            })
            .sum();
        na * nb / (na + nb) * d2
    };
    let mut costs: Vec<f64> = runs.windows(2).map(|w| cost(&w[0], &w[1])).collect();
    while runs.len() > n_clusters {
        let mut best = 0;
        for (i, &c) in costs.iter().enumerate() {
            if c < costs[best] {
                best = i;
            }
        }
        let right = runs.remove(best + 1);
        let left = &mut runs[best];
        left.len += right.len;
        for (s, r) in left.sum.iter_mut().zip(&right.sum) {
            *s += r;
        }
        costs.remove(best);
        if best > 0 {
            costs[best - 1] = cost(&runs[best - 1], &runs[best]);
        }
        if best < costs.len() {
            costs[best] = cost(&runs[best], &runs[best + 1]);
        }
    }
    runs.iter().map(|r| r.start).collect()
}

fn median(values: &mut [f32]) -> f32 {
    values.sort_by(f32::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Element-wise median of each contiguous run of columns.
fn median_columns(frames: ArrayView2<f32>, starts: &[usize]) -> Array2<f32> {
    let (bins, n) = frames.dim();
    let mut out = Array2::<f32>::zeros((bins, starts.len()));
    let mut buf = Vec::new();
    for (c, &s) in starts.iter().enumerate() {
        let e = starts.get(c + 1).copied().unwrap_or(n);
        for b in 0..bins {
            buf.clear();
            buf.extend(frames.row(b).iter().skip(s).take(e - s));
            out[[b, c]] = median(&mut buf);
        }
    }
    out
}

/// Resamples every inter-beat interval of `cqt` to `n_sub` columns.
///
/// Beat times map to the nearest frame (clamped to the CQT, with a warning).
/// An interval of at least `n_sub` frames is split by [`ward_segments`] and
/// each run is reduced to its element-wise median. Shorter intervals repeat
/// their frames (column `j` takes frame `⌊j·n/n_sub⌋`), and an empty
/// interval repeats its nearest frame.
pub fn subdivide_beats(cqt: &CqtMatrix, beats: &BeatGrid, n_sub: usize) -> Result<SubBeatMatrix> {
    if n_sub == 0 {
        return Err(Error::Argument("n_sub must be positive".into()));
    }
    let n_frames = cqt.n_frames();
    let last = n_frames as i64 - 1;
    let mut clamped = 0;
    let frames: Vec<usize> = beats
        .times()
        .iter()
        .map(|&t| {
            let f = (t * cqt.frame_rate).round() as i64;
            if f < 0 || f > last {
                clamped += 1;
            }
            f.clamp(0, last) as usize
        })
        .collect();
    if clamped > 0 {
        log::warn!("{clamped} beat(s) fall outside the {n_frames} CQT frames and were clamped");
    }

    let bins = cqt.values.nrows();
    let intervals = beats.len() - 1;
    let mut values = Array2::<f32>::zeros((bins, n_sub * intervals));
    for k in 0..intervals {
        let (lo, hi) = (frames[k], frames[k + 1]);
        let mut block = values.slice_mut(ndarray::s![.., k * n_sub..(k + 1) * n_sub]);
        if hi <= lo {
            let col = cqt.values.column(lo);
            for mut c in block.axis_iter_mut(Axis(1)) {
                c.assign(&col);
            }
        } else if hi - lo < n_sub {
            let n = hi - lo;
            for (j, mut c) in block.axis_iter_mut(Axis(1)).enumerate() {
                c.assign(&cqt.values.column(lo + j * n / n_sub));
            }
        } else {
            let seg = cqt.values.slice(ndarray::s![.., lo..hi]);
            let starts = ward_segments(seg, n_sub);
            block.assign(&median_columns(seg, &starts));
        }
    }
    Ok(SubBeatMatrix {
        values,
        beats_covered: beats.len(),
        n_sub,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::BeatSource;
    use ndarray::{arr2, Array1};

    fn grid(times: &[f64]) -> BeatGrid {
        BeatGrid::new(times.to_vec(), BeatSource::File).unwrap()
    }

    /// Exhaustive search over all contiguous 2-partitions minimising the
    /// total within-cluster squared error.
    fn best_two_split(frames: &Array2<f32>) -> usize {
        let n = frames.ncols();
        let sse = |s: usize, e: usize| -> f64 {
            let cols: Vec<Array1<f64>> = (s..e).map(|j| frames.column(j).mapv(|v| v as f64)).collect();
            let mean = cols.iter().fold(Array1::<f64>::zeros(frames.nrows()), |a, c| a + c) / (e - s) as f64;
            cols.iter().map(|c| (c - &mean).mapv(|v| v * v).sum()).sum()
        };
        (1..n)
            .min_by(|&a, &b| (sse(0, a) + sse(a, n)).total_cmp(&(sse(0, b) + sse(b, n))))
            .unwrap()
    }

    #[test]
    fn aaab_splits_off_b() {
        let frames = arr2(&[[1.0f32, 1.0, 1.0, 5.0], [0.0, 0.0, 0.0, 2.0]]);
        assert_eq!(best_two_split(&frames), 3);
        let starts = ward_segments(frames.view(), 2);
        assert_eq!(starts, vec![0, 3]);
        let cols = median_columns(frames.view(), &starts);
        assert_eq!(cols, arr2(&[[1.0, 5.0], [0.0, 2.0]]));
    }

    #[test]
    fn ties_merge_earlier_pair() {
        let frames = arr2(&[[0.0f32, 1.0, 2.0, 3.0]]);
        // all adjacent costs equal: first merge is (0,1), then {0,1}|{2}|{3}
        assert_eq!(ward_segments(frames.view(), 3), vec![0, 2, 3]);
    }

    #[test]
    fn sixteen_frames_pass_through() {
        let frames = Array2::from_shape_fn((72, 40), |(b, f)| ((b * 13 + f * 7) % 17) as f32 / 17.0);
        let cqt = CqtMatrix::new(frames.clone(), 1.0).unwrap();
        let sub = subdivide_beats(&cqt, &grid(&[0.0, 16.0, 32.0, 33.0, 34.0]), 16).unwrap();
        assert_eq!(sub.values.ncols(), 16 * 4);
        assert_eq!(sub.values.slice(ndarray::s![.., 0..16]), frames.slice(ndarray::s![.., 0..16]));
        assert_eq!(sub.values.slice(ndarray::s![.., 16..32]), frames.slice(ndarray::s![.., 16..32]));
    }

    #[test]
    fn constant_interval_gives_constant_columns() {
        let v: Vec<f32> = (0..72).map(|b| b as f32 / 72.0).collect();
        let frames = Array2::from_shape_fn((72, 200), |(b, _)| v[b]);
        let cqt = CqtMatrix::new(frames, 1.0).unwrap();
        let sub = subdivide_beats(&cqt, &grid(&[0.0, 32.0, 64.0, 96.0, 128.0]), 16).unwrap();
        for c in sub.values.axis_iter(Axis(1)) {
            assert_eq!(c.to_vec(), v);
        }
    }

    #[test]
    fn empty_and_short_intervals() {
        let frames = Array2::from_shape_fn((72, 10), |(_, f)| f as f32);
        let cqt = CqtMatrix::new(frames, 1.0).unwrap();
        // beats 3.0 and 3.2 share frame 3; the last beat is past the end
        let sub = subdivide_beats(&cqt, &grid(&[0.0, 3.0, 3.2, 7.0, 50.0]), 16).unwrap();
        assert_eq!(sub.values.ncols(), 64);
        // interval 0 (frames 0..3) repeats frames 0,1,2
        let row: Vec<f32> = sub.values.row(0).iter().copied().collect();
        assert_eq!(&row[0..16], &[0., 0., 0., 0., 0., 0., 1., 1., 1., 1., 1., 2., 2., 2., 2., 2.]);
        // interval 1 is empty -> frame 3 replicated
        assert!(row[16..32].iter().all(|&v| v == 3.0));
    }

    #[test]
    fn medians_stay_within_cluster_range() {
        let frames = Array2::from_shape_fn((8, 37), |(b, f)| ((b * 31 + f * f * 7) % 19) as f32);
        let starts = ward_segments(frames.view(), 16);
        assert_eq!(starts.len(), 16);
        let cols = median_columns(frames.view(), &starts);
        for (c, &s) in starts.iter().enumerate() {
            let e = starts.get(c + 1).copied().unwrap_or(37);
            for b in 0..8 {
                let run = frames.slice(ndarray::s![b, s..e]);
                let lo = run.iter().copied().fold(f32::INFINITY, f32::min);
                let hi = run.iter().copied().fold(f32::NEG_INFINITY, f32::max);
                assert!(lo <= cols[[b, c]] && cols[[b, c]] <= hi);
            }
        }
    }

    #[test]
    fn median_ignores_order_within_cluster() {
        let a = arr2(&[[3.0f32, 1.0, 2.0, 9.0]]);
        let b = arr2(&[[2.0f32, 3.0, 1.0, 9.0]]);
        assert_eq!(median_columns(a.view(), &[0, 3]), median_columns(b.view(), &[0, 3]));
    }
}
