//! Annotations, pseudo-density targets, patch tiling, the synthetic clip
//! generator and dataset splits.

mod annotations;
mod density;
mod patches;
mod split;
mod synth;

pub use annotations::{
    AnnotatedSequence, Frame, FrameAnnotation, FrameSequence, Image, Point, PointAnnotationSet, SequenceMeta,
};
pub use density::{generate_pseudo_density, PseudoDensityMap, DEFAULT_SIGMA, TRUNCATE_SIGMAS};
pub use patches::{crop_patches, Patch, PatchGrid, Rect};
pub use split::{split_dataset, DatasetSplit};
pub use synth::{synthesize_annotated, synthesize_sequence, SyntheticSceneConfig, SYNTHETIC_FPS};
