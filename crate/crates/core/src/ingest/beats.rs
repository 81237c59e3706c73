use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::{read_text, write_atomic};

/// Fewest beats from which one 4-beat patch can be formed.
pub const MIN_BEATS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BeatSource {
    File,
    UniformFallback,
}

/// Strictly increasing beat positions in seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct BeatGrid {
    beat_times: Vec<f64>,
    source: BeatSource,
}

impl BeatGrid {
    pub fn new(beat_times: Vec<f64>, source: BeatSource) -> Result<Self> {
        if let Some(i) = beat_times.iter().position(|t| !t.is_finite() || *t < 0.0) {
            return Err(Error::validation(format!(
                "beat {i} ({}) is negative or not finite",
                beat_times[i]
            )));
        }
        if let Some(k) = beat_times.windows(2).position(|w| w[1] <= w[0]) {
            return Err(Error::validation(format!(
                "beat {} ({}) does not follow beat {} ({})",
                k + 1,
                beat_times[k + 1],
                k,
                beat_times[k]
            )));
        }
        if beat_times.len() < MIN_BEATS {
            return Err(Error::TooShort(format!(
                "{} beats, need at least {MIN_BEATS}",
                beat_times.len()
            )));
        }
        Ok(Self { beat_times, source })
    }

    pub fn times(&self) -> &[f64] {
        &self.beat_times
    }

    pub fn len(&self) -> usize {
        self.beat_times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.beat_times.is_empty()
    }

    pub fn source(&self) -> BeatSource {
        self.source
    }

    /// Same grid moved by `offset` seconds.
    pub fn shifted(&self, offset: f64) -> Result<Self> {
        Self::new(
            self.beat_times.iter().map(|t| t + offset).collect(),
            self.source,
        )
    }
}

/// One decimal seconds value per line; blank lines are skipped.
pub fn read_beats(path: impl AsRef<Path>) -> Result<BeatGrid> {
    parse_beats(&read_text(path.as_ref())?)
}

pub(crate) fn parse_beats(text: &str) -> Result<BeatGrid> {
    let mut times: Vec<f64> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let s = raw.trim();
        if s.is_empty() {
            continue;
        }
        let t: f64 = s.parse().map_err(|_| Error::Parse {
            line,
            msg: format!("not a number: {s:?}"),
        })?;
        if !t.is_finite() || t < 0.0 {
            return Err(Error::Validation {
                line: Some(line),
                msg: format!("beat time {t} must be finite and non-negative"),
            });
        }
        if let Some(&prev) = times.last() {
            if t <= prev {
                return Err(Error::Validation {
                    line: Some(line),
                    msg: format!("beat time {t} does not exceed previous beat {prev}"),
                });
            }
        }
        times.push(t);
    }
    BeatGrid::new(times, BeatSource::File)
}

pub fn write_beats(path: impl AsRef<Path>, beats: &BeatGrid) -> Result<()> {
    let mut text = String::new();
    for t in beats.times() {
        // `{}` on f64 prints the shortest string that parses back to the same value.
        text.push_str(&format!("{t}\n"));
    }
    write_atomic(path.as_ref(), text.as_bytes())
}

/// Evenly spaced beats at `period, 2·period, …` strictly before `duration`.
pub fn uniform_beats(duration: f64, period: f64) -> Result<BeatGrid> {
    if !(period > 0.0) || !period.is_finite() {
        return Err(Error::Argument(format!("beat period must be positive, got {period}")));
    }
    if !(duration > MIN_BEATS as f64 * period) {
        return Err(Error::TooShort(format!(
            "duration {duration}s holds fewer than {MIN_BEATS} beats at period {period}s"
        )));
    }
    let times: Vec<f64> = (1..)
        .map(|k| k as f64 * period)
        .take_while(|&t| t < duration)
        .collect();
    BeatGrid::new(times, BeatSource::UniformFallback)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_plain_list() {
        let g = parse_beats("0.5\n1.0\n1.5\n2.0\n2.5").unwrap();
        assert_eq!(g.times(), &[0.5, 1.0, 1.5, 2.0, 2.5]);
        assert_eq!(g.source(), BeatSource::File);
    }

    #[test]
    fn blank_lines_are_ignored() {
        let g = parse_beats("\n0.5\n\n1.0\n1.5\n  \n2.0\n2.5\n\n").unwrap();
        assert_eq!(g.len(), 5);
    }

    #[test]
    fn non_monotonic_names_line() {
        let err = parse_beats("1.0\n0.5\n2.0\n3.0\n4.0").unwrap_err();
        assert!(matches!(err, Error::Validation { line: Some(2), .. }), "{err}");
    }

    #[test]
    fn empty_file_is_too_short() {
        assert!(matches!(parse_beats(""), Err(Error::TooShort(_))));
        assert!(matches!(parse_beats("1\n2\n3\n4"), Err(Error::TooShort(_))));
    }

    #[test]
    fn bad_number_is_parse_error() {
        assert!(matches!(
            parse_beats("1\n2\nthree\n4\n5"),
            Err(Error::Parse { line: 3, .. })
        ));
    }

    #[test]
    fn uniform_grid_examples() {
        assert!(uniform_beats(2.0, 0.5).is_err());
        let g = uniform_beats(10.0, 1.0).unwrap();
        assert_eq!(g.times(), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0]);
        assert_eq!(g.source(), BeatSource::UniformFallback);
        let g = uniform_beats(3.0, 0.5).unwrap();
        assert_eq!(g.times(), &[0.5, 1.0, 1.5, 2.0, 2.5]);
    }

    #[test]
    fn uniform_rejects_non_positive_period() {
        assert!(matches!(uniform_beats(10.0, 0.0), Err(Error::Argument(_))));
        assert!(matches!(uniform_beats(10.0, -1.0), Err(Error::Argument(_))));
    }

    #[test]
    fn file_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("b.txt");
        let g = BeatGrid::new(vec![0.1, 0.3333333333333333, 0.7, 1.1e-3 + 1.0, 2.0 / 3.0 + 1.0], BeatSource::File).unwrap();
        write_beats(&p, &g).unwrap();
        assert_eq!(read_beats(&p).unwrap(), g);
    }

    proptest! {
        #[test]
        fn read_grids_are_strictly_increasing(steps in prop::collection::vec(1e-3f64..5.0, 5..40)) {
            let mut t = 0.0;
            let text: String = steps.iter().map(|d| { t += d; format!("{t}\n") }).collect();
            let g = parse_beats(&text).unwrap();
            prop_assert!(g.times().windows(2).all(|w| w[1] - w[0] > 0.0));
        }
    }
}
