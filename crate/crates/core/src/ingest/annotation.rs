use std::path::Path;

use crate::error::{Error, Result};
use crate::util::{read_text, write_atomic};

#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub start: f64,
    pub end: f64,
    pub label: String,
}

impl Segment {
    /// Half-open membership: `start <= t < end`.
    pub fn contains(&self, t: f64) -> bool {
        self.start <= t && t < self.end
    }
}

/// Sorted, non-overlapping labelled segments. Gaps are allowed.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentAnnotation {
    segments: Vec<Segment>,
}

/// Trims surrounding whitespace and lower-cases.
pub fn normalize_label(label: &str) -> String {
    label.trim().to_lowercase()
}

impl SegmentAnnotation {
    pub fn new(segments: Vec<Segment>) -> Result<Self> {
        let mut segments: Vec<Segment> = segments
            .into_iter()
            .map(|s| Segment {
                label: normalize_label(&s.label),
                ..s
            })
            .collect();
        for s in &segments {
            if !(s.start.is_finite() && s.end.is_finite()) || s.start >= s.end {
                return Err(Error::validation(format!(
                    "segment [{}, {}) must have start < end",
                    s.start, s.end
                )));
            }
            if s.label.is_empty() {
                return Err(Error::validation(format!(
                    "segment [{}, {}) has an empty label",
                    s.start, s.end
                )));
            }
        }
        segments.sort_by(|a, b| a.start.total_cmp(&b.start));
        if let Some(w) = segments.windows(2).find(|w| w[1].start < w[0].end) {
            return Err(Error::validation(format!(
                "segments [{}, {}) and [{}, {}) overlap",
                w[0].start, w[0].end, w[1].start, w[1].end
            )));
        }
        Ok(Self { segments })
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    /// Distinct labels in order of first appearance.
    pub fn labels(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for s in &self.segments {
            if !out.contains(&s.label.as_str()) {
                out.push(&s.label);
            }
        }
        out
    }

    /// Applies `f` to every label (used to check relabelling invariance).
    pub fn relabeled(&self, f: impl Fn(&str) -> String) -> Result<Self> {
        Self::new(
            self.segments
                .iter()
                .map(|s| Segment {
                    label: f(&s.label),
                    ..s.clone()
                })
                .collect(),
        )
    }
}

/// Reads `start<TAB>end<TAB>label` rows.
pub fn read_annotation(path: impl AsRef<Path>) -> Result<SegmentAnnotation> {
    parse_annotation(&read_text(path.as_ref())?)
}

pub(crate) fn parse_annotation(text: &str) -> Result<SegmentAnnotation> {
    let mut segments = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let mut fields = raw.splitn(3, '\t');
        let mut number = |what: &str| -> Result<f64> {
            let f = fields.next().ok_or_else(|| Error::Parse {
                line,
                msg: format!("missing {what} field"),
            })?;
            f.trim().parse().map_err(|_| Error::Parse {
                line,
                msg: format!("{what} is not a number: {f:?}"),
            })
        };
        let start = number("start")?;
        let end = number("end")?;
        let label = fields.next().ok_or_else(|| Error::Parse {
            line,
            msg: "missing label field".into(),
        })?;
        if !(start < end) {
            return Err(Error::Validation {
                line: Some(line),
                msg: format!("start {start} is not before end {end}"),
            });
        }
        if normalize_label(label).is_empty() {
            return Err(Error::Validation {
                line: Some(line),
                msg: "empty label".into(),
            });
        }
        segments.push(Segment {
            start,
            end,
            label: label.to_string(),
        });
    }
    SegmentAnnotation::new(segments)
}

pub fn write_annotation(path: impl AsRef<Path>, ann: &SegmentAnnotation) -> Result<()> {
    let mut text = String::new();
    for s in ann.segments() {
        text.push_str(&format!("{}\t{}\t{}\n", s.start, s.end, s.label));
    }
    write_atomic(path.as_ref(), text.as_bytes())
}
