use std::f64::consts::PI;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::AudioBuffer;

/// Equal-tempered C1 (A4 = 440 Hz).
pub const C1_HZ: f64 = 32.703_195_662_574_83;

const AMIN: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CqtConfig {
    pub sample_rate: u32,
    pub hop_length: usize,
    pub f_min: f64,
    pub n_bins: usize,
    pub bins_per_octave: usize,
    /// Dynamic range kept below the loudest bin before min-max scaling.
    pub top_db: f64,
}

impl Default for CqtConfig {
    fn default() -> Self {
        Self {
            sample_rate: 22050,
            hop_length: 512,
            f_min: C1_HZ,
            n_bins: 72,
            bins_per_octave: 12,
            top_db: 80.0,
        }
    }
}

impl CqtConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sample_rate == 0 || self.hop_length == 0 || self.n_bins == 0 || self.bins_per_octave == 0 {
            return Err(Error::Config("CQT sample rate, hop, bin count and resolution must be positive".into()));
        }
        if !(self.f_min > 0.0) || !(self.top_db > 0.0) {
            return Err(Error::Config("CQT f_min and top_db must be positive".into()));
        }
        let f_max = self.center_frequency(self.n_bins - 1);
        if f_max >= self.sample_rate as f64 / 2.0 {
            return Err(Error::Config(format!(
                "highest CQT bin {f_max:.1} Hz is above Nyquist for {} Hz",
                self.sample_rate
            )));
        }
        Ok(())
    }

    pub fn center_frequency(&self, bin: usize) -> f64 {
        self.f_min * 2f64.powf(bin as f64 / self.bins_per_octave as f64)
    }

    pub fn q_factor(&self) -> f64 {
        1.0 / (2f64.powf(1.0 / self.bins_per_octave as f64) - 1.0)
    }

    /// Kernel length of `bin` in samples.
    pub fn kernel_length(&self, bin: usize) -> usize {
        (self.q_factor() * self.sample_rate as f64 / self.center_frequency(bin)).ceil() as usize
    }

    pub fn frame_rate(&self) -> f64 {
        self.sample_rate as f64 / self.hop_length as f64
    }
}

/// `n_bins × frames` magnitude CQT, dB-scaled and min-max normalised to [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct CqtMatrix {
    pub values: Array2<f32>,
    pub frame_rate: f64,
}

impl CqtMatrix {
    pub fn new(values: Array2<f32>, frame_rate: f64) -> Result<Self> {
        if values.ncols() == 0 || values.nrows() == 0 {
            return Err(Error::EmptyInput("CQT matrix has no frames".into()));
        }
        if !(frame_rate > 0.0) {
            return Err(Error::Argument(format!("frame rate must be positive, got {frame_rate}")));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation("CQT matrix contains non-finite values"));
        }
        Ok(Self { values, frame_rate })
    }

    pub fn n_frames(&self) -> usize {
        self.values.ncols()
    }
}

/// Low-pass (Hann-windowed sinc) and keep every `factor`-th sample.
pub fn decimate(samples: &[f32], factor: usize) -> Vec<f32> {
    if factor <= 1 {
        return samples.to_vec();
    }
    let half = 32 * factor;
    let cutoff = 0.45 / factor as f64;
    let taps: Vec<f64> = (0..=2 * half)
        .map(|i| {
            let t = i as f64 - half as f64;
            let sinc = if t == 0.0 {
                2.0 * cutoff
            } else {
                (2.0 * PI * cutoff * t).sin() / (PI * t)
            };
            let w = 0.5 - 0.5 * (2.0 * PI * i as f64 / (2 * half) as f64).cos();
            sinc * w
        })
        .collect();
    let gain: f64 = taps.iter().sum();
    (0..samples.len().div_ceil(factor))
        .map(|o| {
            let c = (o * factor) as isize;
            let mut acc = 0.0;
            for (j, &tap) in taps.iter().enumerate() {
                let idx = c + j as isize - half as isize;
                if idx >= 0 && (idx as usize) < samples.len() {
                    acc += tap * samples[idx as usize] as f64;
                }
            }
            (acc / gain).clamp(-1.0, 1.0) as f32
        })
        .collect()
}

struct Kernel {
    re: Vec<f32>,
    im: Vec<f32>,
}

fn kernels(config: &CqtConfig) -> Vec<Kernel> {
    let sr = config.sample_rate as f64;
    (0..config.n_bins)
        .map(|k| {
            let f = config.center_frequency(k);
            let len = config.kernel_length(k);
            let centre = len as f64 / 2.0;
            let window: Vec<f64> = (0..len)
                .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / (len - 1).max(1) as f64).cos())
                .collect();
            let norm: f64 = window.iter().sum();
            let (re, im) = window
                .iter()
                .enumerate()
                .map(|(n, w)| {
                    let phase = -2.0 * PI * f * (n as f64 - centre) / sr;
                    ((w * phase.cos() / norm) as f32, (w * phase.sin() / norm) as f32)
                })
                .unzip();
            Kernel { re, im }
        })
        .collect()
}

#[inline]
fn dot8(a: &[f32], b: &[f32]) -> f32 {
    let mut acc = [0f32; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut s: f32 = acc.iter().sum();
    for (x, y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

/// Constant-Q magnitude spectrogram with one frame every `hop_length`
/// samples (frames centred on their sample, zero padding at the edges).
/// Audio at an integer multiple of the analysis rate is decimated first.
pub fn compute_cqt(audio: &AudioBuffer, config: &CqtConfig) -> Result<CqtMatrix> {
    config.validate()?;
    let samples = if audio.sample_rate() == config.sample_rate {
        audio.samples().to_vec()
    } else if audio.sample_rate() % config.sample_rate == 0 {
        decimate(audio.samples(), (audio.sample_rate() / config.sample_rate) as usize)
    } else {
        return Err(Error::Unsupported(format!(
            "sample rate {} Hz is not an integer multiple of {} Hz",
            audio.sample_rate(),
            config.sample_rate
        )));
    };
    let longest = config.kernel_length(0);
    if samples.len() < longest {
        return Err(Error::TooShort(format!(
            "{} samples, the lowest CQT bin needs {longest}",
            samples.len()
        )));
    }

    let kernels = kernels(config);
    let pad = longest / 2 + 1;
    let mut padded = vec![0f32; samples.len() + 2 * pad + longest];
    padded[pad..pad + samples.len()].copy_from_slice(&samples);

    let n_frames = 1 + samples.len() / config.hop_length;
    let mut db = Array2::<f64>::zeros((config.n_bins, n_frames));
    for t in 0..n_frames {
        let centre = pad + t * config.hop_length;
        for (k, ker) in kernels.iter().enumerate() {
            let start = centre - ker.re.len() / 2;
            let seg = &padded[start..start + ker.re.len()];
            let re = dot8(seg, &ker.re) as f64;
            let im = dot8(seg, &ker.im) as f64;
            db[[k, t]] = 20.0 * re.hypot(im).max(AMIN).log10();
        }
    }

    let top = db.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let floor = top - config.top_db;
    db.mapv_inplace(|v| v.max(floor));
    let lo = db.iter().copied().fold(f64::INFINITY, f64::min);
    let range = top - lo;
    let values = if range > 0.0 {
        db.mapv(|v| ((v - lo) / range) as f32)
    } else {
        Array2::zeros(db.raw_dim())
    };
    CqtMatrix::new(values, config.frame_rate())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Axis;

    fn sine(freq: f64, amp: f64, seconds: f64, sr: u32) -> AudioBuffer {
        let n = (seconds * sr as f64) as usize;
        let s = (0..n)
            .map(|i| (amp * (2.0 * PI * freq * i as f64 / sr as f64).sin()) as f32)
            .collect();
        AudioBuffer::new(s, sr).unwrap()
    }

    fn argmax_bin(cqt: &CqtMatrix, frame: usize) -> usize {
        let col = cqt.values.index_axis(Axis(1), frame);
        (0..col.len()).max_by(|&a, &b| col[a].total_cmp(&col[b])).unwrap()
    }

    #[test]
    fn a4_peaks_at_the_nearest_bin_centre() {
        let cfg = CqtConfig::default();
        // oracle: nearest centre frequency in log distance
        let nearest = (0..cfg.n_bins)
            .min_by(|&a, &b| {
                let da = (cfg.center_frequency(a) / 440.0).log2().abs();
                let db = (cfg.center_frequency(b) / 440.0).log2().abs();
                da.total_cmp(&db)
            })
            .unwrap();
        assert_eq!(nearest, 45);
        let cqt = compute_cqt(&sine(440.0, 0.5, 2.0, 22050), &cfg).unwrap();
        assert_eq!(cqt.values.nrows(), 72);
        let mid = cqt.n_frames() / 2;
        assert_eq!(argmax_bin(&cqt, mid), nearest);
    }

    #[test]
    fn silence_is_all_zero() {
        let audio = AudioBuffer::new(vec![0.0; 22050], 22050).unwrap();
        let cqt = compute_cqt(&audio, &CqtConfig::default()).unwrap();
        assert!(cqt.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn amplitude_scaling_is_removed() {
        let cfg = CqtConfig::default();
        let mix = |amp: f64| {
            let n = 22050 * 3 / 2;
            let s = (0..n)
                .map(|i| {
                    let t = i as f64 / 22050.0;
                    (amp * (0.6 * (2.0 * PI * 220.0 * t).sin() + 0.3 * (2.0 * PI * 523.25 * t).sin())) as f32
                })
                .collect();
            AudioBuffer::new(s, 22050).unwrap()
        };
        let a = compute_cqt(&mix(0.8), &cfg).unwrap();
        let b = compute_cqt(&mix(0.4), &cfg).unwrap();
        let diff = a.values.iter().zip(b.values.iter()).map(|(x, y)| (x - y).abs()).fold(0f32, f32::max);
        assert!(diff < 1e-6, "max diff {diff}");
    }

    #[test]
    fn values_are_in_unit_range() {
        let cqt = compute_cqt(&sine(110.0, 0.9, 1.0, 22050), &CqtConfig::default()).unwrap();
        assert!(cqt.values.iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert_eq!(cqt.n_frames(), 1 + 22050 / 512);
    }

    #[test]
    fn too_short_audio() {
        let audio = AudioBuffer::new(vec![0.1; 1000], 22050).unwrap();
        assert!(matches!(compute_cqt(&audio, &CqtConfig::default()), Err(Error::TooShort(_))));
    }

    #[test]
    fn double_rate_audio_is_decimated() {
        let cfg = CqtConfig::default();
        let cqt = compute_cqt(&sine(440.0, 0.5, 1.5, 44100), &cfg).unwrap();
        assert_eq!(argmax_bin(&cqt, cqt.n_frames() / 2), 45);
        let odd = sine(440.0, 0.5, 1.5, 16000);
        assert!(matches!(compute_cqt(&odd, &cfg), Err(Error::Unsupported(_))));
    }

    #[test]
    fn kernel_lengths_match_constant_q() {
        let cfg = CqtConfig::default();
        assert!((cfg.center_frequency(72 - 12) - 1046.5).abs() < 0.1);
        assert!((cfg.center_frequency(0) * 64.0 - 2093.0).abs() < 0.1);
        assert!(cfg.kernel_length(0) > cfg.kernel_length(71));
    }
}
