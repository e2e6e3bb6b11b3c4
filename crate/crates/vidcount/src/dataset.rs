//! On-disk dataset layout.
//!
//! ```text
//! <root>/manifest.json
//! <root>/<sequence_id>/annotations.json
//! <root>/<sequence_id>/frame_000000.ppm ...
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use vidcount_core::data::{AnnotatedSequence, DatasetSplit, Frame, FrameSequence, PointAnnotationSet, SequenceMeta};

use crate::annotation::{load_annotations, save_annotations};
use crate::error::{read, read_text, write, CliError, Result};
use crate::pnm::{decode_ppm, encode_ppm};

pub const MANIFEST: &str = "manifest.json";
pub const ANNOTATIONS: &str = "annotations.json";

pub fn frame_file_name(index: usize) -> String {
    format!("frame_{index:06}.ppm")
}

/// Parses `frame_%06d.ppm` back to its index.
pub fn frame_index_of(name: &str) -> Option<usize> {
    let digits = name.strip_prefix("frame_")?.strip_suffix(".ppm")?;
    (digits.len() >= 6 && digits.bytes().all(|b| b.is_ascii_digit())).then(|| digits.parse().ok())?
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Splits {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub sequences: Vec<String>,
    pub splits: Splits,
}

impl Manifest {
    pub fn new(sequences: Vec<String>, split: DatasetSplit) -> Self {
        Manifest { sequences, splits: Splits { train: split.train, val: split.val, test: split.test } }
    }

    pub fn split(&self, name: &str) -> Result<&[String]> {
        match name {
            "train" => Ok(&self.splits.train),
            "val" => Ok(&self.splits.val),
            "test" => Ok(&self.splits.test),
            other => Err(CliError::Data(format!("no split named '{other}' (expected train, val or test)"))),
        }
    }

    pub fn load(root: &Path) -> Result<Self> {
        let path = root.join(MANIFEST);
        let m: Manifest = serde_json::from_str(&read_text(&path)?)
            .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        let listed = m.splits.train.iter().chain(&m.splits.val).chain(&m.splits.test);
        if let Some(id) = listed.clone().find(|id| !m.sequences.contains(id)) {
            return Err(CliError::Data(format!("{}: split names unknown sequence {id}", path.display())));
        }
        if listed.count() != m.sequences.len() {
            return Err(CliError::Data(format!("{}: splits do not partition the sequences", path.display())));
        }
        Ok(m)
    }

    pub fn save(&self, root: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        write(&root.join(MANIFEST), text)
    }
}

pub fn write_sequence(dir: &Path, seq: &AnnotatedSequence) -> Result<()> {
    write(&dir.join(ANNOTATIONS), save_annotations(&seq.meta(), &seq.annotations)?)?;
    for f in &seq.frames.frames {
        write(&dir.join(frame_file_name(f.index)), encode_ppm(&f.pixels))?;
    }
    Ok(())
}

fn read_frame(dir: &Path, index: usize) -> Result<Frame> {
    let path = dir.join(frame_file_name(index));
    let pixels = decode_ppm(&read(&path)?).map_err(|e| e.context(path.display()))?;
    Ok(Frame { index, pixels })
}

/// Loads the annotation file and every frame it lists.
pub fn read_sequence(dir: &Path) -> Result<AnnotatedSequence> {
    let ann_path = dir.join(ANNOTATIONS);
    let (meta, annotations) = load_annotations(&read_text(&ann_path)?).map_err(|e| e.context(ann_path.display()))?;
    let frames = annotations.frames.iter().map(|a| read_frame(dir, a.index)).collect::<Result<Vec<_>>>()?;
    if let Some(f) = frames.iter().find(|f| f.pixels.width != meta.width || f.pixels.height != meta.height) {
        return Err(CliError::Data(format!(
            "{}: frame {} is {}x{}, annotations declare {}x{}",
            dir.display(),
            f.index,
            f.pixels.width,
            f.pixels.height,
            meta.width,
            meta.height
        )));
    }
    let frames = FrameSequence { sequence_id: meta.sequence_id, fps: meta.fps, frames };
    AnnotatedSequence::new(frames, annotations).map_err(|e| CliError::from(e).context(dir.display()))
}

/// Frames of a directory that may lack annotations. Without an annotation
/// file every `frame_%06d.ppm` is read, the id is the directory name and
/// the frame rate is taken as 30.
pub fn read_frames(dir: &Path) -> Result<(SequenceMeta, AnnotatedSequence)> {
    if dir.join(ANNOTATIONS).exists() {
        let seq = read_sequence(dir)?;
        return Ok((seq.meta(), seq));
    }
    let entries = std::fs::read_dir(dir).map_err(|e| CliError::io(dir, e))?;
    let mut indices = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| CliError::io(dir, e))?;
        if let Some(i) = entry.file_name().to_str().and_then(frame_index_of) {
            indices.push(i);
        }
    }
    indices.sort_unstable();
    if indices.is_empty() {
        return Err(CliError::Data(format!("{}: no frame_%06d.ppm files", dir.display())));
    }
    let frames = indices.iter().map(|&i| read_frame(dir, i)).collect::<Result<Vec<_>>>()?;
    let id = dir.file_name().map_or_else(|| "sequence".into(), |n| n.to_string_lossy().into_owned());
    let frames = FrameSequence { sequence_id: id, fps: 30.0, frames };
    let empty = PointAnnotationSet {
        frames: indices.iter().map(|&index| vidcount_core::data::FrameAnnotation { index, points: Vec::new() }).collect(),
    };
    let seq = AnnotatedSequence::new(frames, empty).map_err(|e| CliError::from(e).context(dir.display()))?;
    Ok((seq.meta(), seq))
}

pub fn sequence_dir(root: &Path, id: &str) -> PathBuf {
    root.join(id)
}

/// Loads every sequence of split `name`, in manifest order.
pub fn load_split(root: &Path, name: &str) -> Result<Vec<AnnotatedSequence>> {
    let manifest = Manifest::load(root)?;
    manifest.split(name)?.iter().map(|id| read_sequence(&sequence_dir(root, id))).collect()
}
