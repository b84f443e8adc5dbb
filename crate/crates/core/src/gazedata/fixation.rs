use serde::{Deserialize, Serialize};

use super::DataError;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Fixation {
    pub x: f64,
    pub y: f64,
    /// Dwell time in seconds.
    pub dur: f64,
}

/// The raw gaze trace recorded on one image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FixationRecord {
    pub image_id: String,
    pub fixations: Vec<Fixation>,
}

impl FixationRecord {
    pub fn new(image_id: impl Into<String>, fixations: Vec<Fixation>) -> Result<Self, DataError> {
        let rec = Self {
            image_id: image_id.into(),
            fixations,
        };
        rec.validate()?;
        Ok(rec)
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if self.fixations.is_empty() {
            return Err(DataError::EmptyRecord(self.image_id.clone()));
        }
        for (i, f) in self.fixations.iter().enumerate() {
            for (axis, v) in [("x", f.x), ("y", f.y)] {
                if !(0.0..=1.0).contains(&v) {
                    return Err(DataError::CoordinateOutOfRange {
                        index: i,
                        axis,
                        value: v,
                    });
                }
            }
            if !(f.dur > 0.0) || !f.dur.is_finite() {
                return Err(DataError::NonPositiveDuration { index: i, value: f.dur });
            }
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        serde_json::to_string(self).expect("record serializes")
    }
}

#[derive(Deserialize)]
struct RawFixation {
    x: Option<f64>,
    y: Option<f64>,
    dur: Option<f64>,
}

#[derive(Deserialize)]
struct RawRecord {
    image_id: Option<String>,
    fixations: Option<Vec<RawFixation>>,
}

/// Parses one line of the fixation file:
/// `{"image_id": str, "fixations": [{"x": f, "y": f, "dur": f}, ...]}`.
pub fn parse_fixation_jsonl(line: &str) -> Result<FixationRecord, DataError> {
    let raw: RawRecord = serde_json::from_str(line).map_err(|e| DataError::Json(e.to_string()))?;
    let image_id = raw.image_id.ok_or(DataError::MissingKey("image_id"))?;
    let raw_fix = raw.fixations.ok_or(DataError::MissingKey("fixations"))?;
    let mut fixations = Vec::with_capacity(raw_fix.len());
    for f in raw_fix {
        fixations.push(Fixation {
            x: f.x.ok_or(DataError::MissingKey("x"))?,
            y: f.y.ok_or(DataError::MissingKey("y"))?,
            dur: f.dur.ok_or(DataError::MissingKey("dur"))?,
        });
    }
    FixationRecord::new(image_id, fixations)
}

/// Parses every non-blank line; errors carry the 1-based line number.
pub fn parse_fixation_file(text: &str) -> Result<Vec<FixationRecord>, DataError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            parse_fixation_jsonl(l).map_err(|e| DataError::AtLine {
                line: i + 1,
                source: Box::new(e),
            })
        })
        .collect()
}
