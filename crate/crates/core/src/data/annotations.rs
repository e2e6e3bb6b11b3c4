use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::{Error, Result};

/// Centre point of one annotated object, in pixels: origin top-left, `x`
/// rightward, `y` downward. Sub-pixel values are allowed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn in_bounds(&self, width: usize, height: usize) -> bool {
        self.x >= 0.0 && self.y >= 0.0 && self.x < width as f64 && self.y < height as f64
    }
}

/// An RGB frame stored height-major as `[H, W, 3]` with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || data.len() != height * width * 3 {
            return Err(Error::Data(format!(
                "image {height}x{width}x3 cannot hold {} values",
                data.len()
            )));
        }
        Ok(Image { height, width, data })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        Image { height, width, data: alloc::vec![value; height * width * 3] }
    }

    pub fn pixel(&self, y: usize, x: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, y: usize, x: usize, rgb: [f64; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Copies the `size`x`size` window whose top-left corner is `(x0, y0)`.
    pub fn crop(&self, x0: usize, y0: usize, size: usize) -> Result<Image> {
        if x0 + size > self.width || y0 + size > self.height {
            return Err(Error::Data(format!(
                "crop {size}x{size} at ({x0}, {y0}) exceeds {}x{} frame",
                self.width, self.height
            )));
        }
        let mut data = Vec::with_capacity(size * size * 3);
        for y in y0..y0 + size {
            let start = (y * self.width + x0) * 3;
            data.extend_from_slice(&self.data[start..start + size * 3]);
        }
        Ok(Image { height: size, width: size, data })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub index: usize,
    pub pixels: Image,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrameSequence {
    pub sequence_id: String,
    pub fps: f64,
    pub frames: Vec<Frame>,
}

impl FrameSequence {
    /// Checks shared frame extents and strictly increasing indices.
    pub fn validate(&self) -> Result<()> {
        if !(self.fps > 0.0) {
            return Err(Error::Data(format!("{}: fps must be positive", self.sequence_id)));
        }
        if let Some(first) = self.frames.first() {
            let (h, w) = (first.pixels.height, first.pixels.width);
            for pair in self.frames.windows(2) {
                if pair[1].index <= pair[0].index {
                    return Err(Error::Data(format!(
                        "{}: frame indices not increasing at {}",
                        self.sequence_id, pair[1].index
                    )));
                }
            }
            if let Some(f) = self.frames.iter().find(|f| f.pixels.height != h || f.pixels.width != w) {
                return Err(Error::Data(format!(
                    "{}: frame {} is {}x{}, expected {h}x{w}",
                    self.sequence_id, f.index, f.pixels.height, f.pixels.width
                )));
            }
        }
        Ok(())
    }

    /// `(height, width)` of the frames, if any.
    pub fn extent(&self) -> Option<(usize, usize)> {
        self.frames.first().map(|f| (f.pixels.height, f.pixels.width))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrameAnnotation {
    pub index: usize,
    pub points: Vec<Point>,
}

impl FrameAnnotation {
    pub fn count(&self) -> usize {
        self.points.len()
    }
}

/// Per-frame object centres for one sequence.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointAnnotationSet {
    pub frames: Vec<FrameAnnotation>,
}

impl PointAnnotationSet {
    pub fn validate(&self, width: usize, height: usize) -> Result<()> {
        for f in &self.frames {
            if let Some(p) = f.points.iter().find(|p| !p.in_bounds(width, height)) {
                return Err(Error::Annotation {
                    frame: f.index,
                    detail: format!("point ({}, {}) outside {width}x{height} frame", p.x, p.y),
                });
            }
        }
        Ok(())
    }

    pub fn counts(&self) -> Vec<usize> {
        self.frames.iter().map(FrameAnnotation::count).collect()
    }

    pub fn frame(&self, index: usize) -> Option<&FrameAnnotation> {
        self.frames.iter().find(|f| f.index == index)
    }
}

/// Sequence-level header of an annotation file.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceMeta {
    pub sequence_id: String,
    pub fps: f64,
    pub width: usize,
    pub height: usize,
}

/// Frames together with their point annotations (same order, same indices).
#[derive(Clone, Debug, PartialEq)]
pub struct AnnotatedSequence {
    pub frames: FrameSequence,
    pub annotations: PointAnnotationSet,
}

impl AnnotatedSequence {
    pub fn new(frames: FrameSequence, annotations: PointAnnotationSet) -> Result<Self> {
        frames.validate()?;
        if frames.frames.len() != annotations.frames.len()
            || frames.frames.iter().zip(&annotations.frames).any(|(f, a)| f.index != a.index)
        {
            return Err(Error::Data(format!(
                "{}: frame indices of images and annotations differ",
                frames.sequence_id
            )));
        }
        if let Some((h, w)) = frames.extent() {
            annotations.validate(w, h)?;
        }
        Ok(AnnotatedSequence { frames, annotations })
    }

    pub fn len(&self) -> usize {
        self.frames.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.frames.is_empty()
    }

    pub fn meta(&self) -> SequenceMeta {
        let (h, w) = self.frames.extent().unwrap_or((0, 0));
        SequenceMeta {
            sequence_id: self.frames.sequence_id.clone(),
            fps: self.frames.fps,
            width: w,
            height: h,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn out_of_bounds_point_names_frame() {
        let set = PointAnnotationSet {
            frames: vec![
                FrameAnnotation { index: 0, points: vec![Point::new(1.0, 1.0)] },
                FrameAnnotation { index: 4, points: vec![Point::new(10.0, 3.0)] },
            ],
        };
        assert!(matches!(set.validate(10, 10), Err(Error::Annotation { frame: 4, .. })));
        assert!(set.validate(11, 10).is_ok());
        assert_eq!(set.counts(), vec![1, 1]);
    }

    #[test]
    fn sequence_rejects_unordered_frames() {
        let img = Image::filled(2, 2, 0.0);
        let seq = FrameSequence {
            sequence_id: "s".into(),
            fps: 30.0,
            frames: vec![Frame { index: 1, pixels: img.clone() }, Frame { index: 1, pixels: img }],
        };
        assert!(seq.validate().is_err());
    }

    #[test]
    fn crop_copies_window() {
        let mut img = Image::filled(4, 5, 0.0);
        img.set_pixel(2, 3, [1.0, 0.5, 0.25]);
        let c = img.crop(2, 1, 3).unwrap();
        assert_eq!(c.pixel(1, 1), [1.0, 0.5, 0.25]);
        assert!(img.crop(3, 0, 3).is_err());
    }
}
