use serde::{Deserialize, Serialize};

use super::MetricError;
use crate::gazedata::{Fixation, GridSpec};

/// An evaluated trajectory in normalized image coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scanpath {
    pub image_id: String,
    pub task: usize,
    pub fixations: Vec<Fixation>,
    /// Step at which the termination head first fired, if it did.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub termination: Option<usize>,
}

impl Scanpath {
    pub fn validate(&self) -> Result<(), MetricError> {
        for (i, f) in self.fixations.iter().enumerate() {
            if !(0.0..=1.0).contains(&f.x) || !(0.0..=1.0).contains(&f.y) {
                return Err(MetricError::InvalidScanpath(format!(
                    "{}: fixation {i} at ({}, {}) outside [0, 1]",
                    self.image_id, f.x, f.y
                )));
            }
            if !(f.dur >= 0.0) || !f.dur.is_finite() {
                return Err(MetricError::InvalidScanpath(format!(
                    "{}: fixation {i} has duration {}",
                    self.image_id, f.dur
                )));
            }
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        serde_json::to_string(self).expect("scanpath serializes")
    }
}

pub fn parse_scanpath_jsonl(line: &str) -> Result<Scanpath, MetricError> {
    let sp: Scanpath = serde_json::from_str(line).map_err(|e| MetricError::Json(e.to_string()))?;
    sp.validate()?;
    Ok(sp)
}

/// Parses a JSONL file, skipping blank lines; errors carry 1-based line numbers.
pub fn parse_scanpath_file(text: &str) -> Result<Vec<Scanpath>, MetricError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            parse_scanpath_jsonl(l).map_err(|e| MetricError::AtLine {
                line: i + 1,
                source: Box::new(e),
            })
        })
        .collect()
}

pub fn write_scanpath_file(paths: &[Scanpath]) -> String {
    let mut out = String::new();
    for p in paths {
        out.push_str(&p.to_jsonl());
        out.push('\n');
    }
    out
}

/// A scanpath snapped to grid cells.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QuantizedScanpath {
    cells: Vec<usize>,
    grid: GridSpec,
}

impl QuantizedScanpath {
    pub fn new(cells: Vec<usize>, grid: GridSpec) -> Result<Self, MetricError> {
        if cells.is_empty() {
            return Err(MetricError::EmptyPath);
        }
        if let Some(&c) = cells.iter().find(|&&c| c >= grid.len()) {
            return Err(MetricError::CellOutOfRange { cell: c, n: grid.len() });
        }
        Ok(Self { cells, grid })
    }

    pub fn from_scanpath(sp: &Scanpath, grid: GridSpec) -> Result<Self, MetricError> {
        sp.validate()?;
        Self::new(sp.fixations.iter().map(|f| grid.cell_of(f.x, f.y)).collect(), grid)
    }

    pub fn cells(&self) -> &[usize] {
        &self.cells
    }

    pub fn grid(&self) -> GridSpec {
        self.grid
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// Cell centers in normalized coordinates.
    pub fn points(&self) -> Vec<(f64, f64)> {
        self.cells.iter().map(|&c| self.grid.center(c)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jsonl_round_trip() {
        let sp = Scanpath {
            image_id: "img7".into(),
            task: 1,
            fixations: vec![
                Fixation {
                    x: 0.125,
                    y: 0.875,
                    dur: 0.3,
                },
                Fixation {
                    x: 0.5,
                    y: 0.5,
                    dur: 0.0,
                },
            ],
            termination: None,
        };
        let text = write_scanpath_file(&[sp.clone(), sp.clone()]);
        assert_eq!(parse_scanpath_file(&text).unwrap(), vec![sp.clone(), sp]);
    }

    #[test]
    fn rejects_bad_lines() {
        let err =
            parse_scanpath_file("\n{\"image_id\":\"a\",\"task\":0,\"fixations\":[{\"x\":1.5,\"y\":0,\"dur\":1}]}")
                .unwrap_err();
        assert!(matches!(err, MetricError::AtLine { line: 2, .. }));
        assert!(parse_scanpath_jsonl("{\"image_id\":\"a\"}").is_err());
    }

    #[test]
    fn quantize_uses_cell_of() {
        let g = GridSpec { rows: 2, cols: 2 };
        let sp = Scanpath {
            image_id: "a".into(),
            task: 0,
            fixations: vec![
                Fixation {
                    x: 0.9,
                    y: 0.1,
                    dur: 1.0,
                },
                Fixation {
                    x: 1.0,
                    y: 1.0,
                    dur: 1.0,
                },
            ],
            termination: None,
        };
        assert_eq!(QuantizedScanpath::from_scanpath(&sp, g).unwrap().cells(), &[1, 3]);
        assert_eq!(QuantizedScanpath::new(vec![], g), Err(MetricError::EmptyPath));
        assert!(QuantizedScanpath::new(vec![4], g).is_err());
    }
}
