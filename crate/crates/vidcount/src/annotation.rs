//! Point annotation files (JSON).

use serde::{Deserialize, Serialize};
use vidcount_core::data::{FrameAnnotation, Point, PointAnnotationSet, SequenceMeta};

use crate::error::{CliError, Result};

/// Digits kept after the decimal point when coordinates are written.
pub const COORD_DECIMALS: i32 = 6;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AnnotationFile {
    sequence_id: String,
    fps: f64,
    width: usize,
    height: usize,
    frames: Vec<FrameEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FrameEntry {
    index: usize,
    points: Vec<[f64; 2]>,
}

/// Parses an annotation file and checks every point against the declared
/// frame size.
pub fn load_annotations(text: &str) -> Result<(SequenceMeta, PointAnnotationSet)> {
    let file: AnnotationFile =
        serde_json::from_str(text).map_err(|e| CliError::Data(format!("annotation parse error: {e}")))?;
    if !(file.fps > 0.0) {
        return Err(CliError::Data(format!("annotation parse error: field `fps` must be positive, got {}", file.fps)));
    }
    if file.width == 0 || file.height == 0 {
        return Err(CliError::Data(format!(
            "annotation parse error: frame size {}x{} must be positive",
            file.width, file.height
        )));
    }
    for pair in file.frames.windows(2) {
        if pair[1].index <= pair[0].index {
            return Err(CliError::Data(format!(
                "annotation parse error: frame index {} does not follow {}",
                pair[1].index, pair[0].index
            )));
        }
    }
    let set = PointAnnotationSet {
        frames: file
            .frames
            .iter()
            .map(|f| FrameAnnotation { index: f.index, points: f.points.iter().map(|&[x, y]| Point::new(x, y)).collect() })
            .collect(),
    };
    set.validate(file.width, file.height)?;
    let meta = SequenceMeta { sequence_id: file.sequence_id, fps: file.fps, width: file.width, height: file.height };
    Ok((meta, set))
}

/// Rounds to [`COORD_DECIMALS`] places without letting a point leave
/// `[0, extent)`.
fn quantize(v: f64, extent: usize) -> f64 {
    let scale = 10f64.powi(COORD_DECIMALS);
    let r = (v * scale).round() / scale;
    if r >= extent as f64 {
        (v * scale).floor() / scale
    } else {
        r
    }
}

/// Serializes `set`; fails if a point lies outside the frame.
pub fn save_annotations(meta: &SequenceMeta, set: &PointAnnotationSet) -> Result<String> {
    set.validate(meta.width, meta.height)?;
    let file = AnnotationFile {
        sequence_id: meta.sequence_id.clone(),
        fps: meta.fps,
        width: meta.width,
        height: meta.height,
        frames: set
            .frames
            .iter()
            .map(|f| FrameEntry {
                index: f.index,
                points: f.points.iter().map(|p| [quantize(p.x, meta.width), quantize(p.y, meta.height)]).collect(),
            })
            .collect(),
    };
    let mut text = serde_json::to_string_pretty(&file).map_err(|e| CliError::Data(e.to_string()))?;
    text.push('\n');
    Ok(text)
}
