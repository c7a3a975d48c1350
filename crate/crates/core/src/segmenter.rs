//! From per-column margin probabilities to character segments, and the
//! projection-profile baseline.

use crate::error::{shape_err, Error, Result};
use crate::model::{batch_from_images, rows, FcnModel};
use crate::raster::{BinaryImage, GrayImage};
use crate::segment::Segment;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PostprocParams {
    /// A column is a margin when its probability is strictly above this.
    pub threshold: f64,
    /// Candidates with fewer ink-bearing interior columns are blank.
    pub min_ink_columns: usize,
}

impl Default for PostprocParams {
    fn default() -> Self {
        Self {
            threshold: 0.5,
            min_ink_columns: 2,
        }
    }
}

impl PostprocParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Config(format!("threshold {} outside (0, 1)", self.threshold)));
        }
        Ok(())
    }
}

pub fn binarize_probs<T: Into<f64> + Copy>(p: &[T], threshold: f64) -> Vec<bool> {
    p.iter().map(|&v| v.into() > threshold).collect()
}

/// Centre `⌊(s + e) / 2⌋` of every maximal run of `true`.
pub fn runs_to_splitpoints(b: &[bool]) -> Vec<usize> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, &v) in b.iter().chain(std::iter::once(&false)).enumerate() {
        match (v, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                out.push((s + i - 1) / 2);
                start = None;
            }
            _ => {}
        }
    }
    out
}

pub fn splitpoints_to_candidates(points: &[usize]) -> Vec<Segment> {
    points.windows(2).map(|w| Segment::new(w[0], w[1])).collect()
}

/// Ink-bearing columns strictly between `left` and `right`. Signed bounds so
/// virtual points outside the image work.
fn interior_ink_columns(profile: &[usize], left: i64, right: i64) -> usize {
    let lo = (left + 1).max(0) as usize;
    let hi = right.min(profile.len() as i64);
    if (lo as i64) >= hi {
        return 0;
    }
    profile[lo..hi as usize].iter().filter(|&&c| c > 0).count()
}

/// Drops candidates whose interior (endpoints excluded) has fewer than
/// `params.min_ink_columns` ink-bearing columns. The endpoints sit on
/// character margins, which carry ink, so they are not evidence of content.
pub fn discard_blank(image: &BinaryImage, candidates: &[Segment], params: &PostprocParams) -> Vec<Segment> {
    let profile = image.column_profile();
    candidates
        .iter()
        .filter(|s| interior_ink_columns(&profile, s.left as i64, s.right as i64) >= params.min_ink_columns)
        .copied()
        .collect()
}

/// The four post-processing steps applied to an already computed
/// probability row.
pub fn segment_probs<T: Into<f64> + Copy>(
    probs: &[T],
    image: &BinaryImage,
    params: &PostprocParams,
) -> Result<Vec<Segment>> {
    if probs.len() != image.width {
        return Err(shape_err!(
            "{} probabilities for an image {} wide",
            probs.len(),
            image.width
        ));
    }
    let points = runs_to_splitpoints(&binarize_probs(probs, params.threshold));
    Ok(discard_blank(image, &splitpoints_to_candidates(&points), params))
}

fn check_image(model: &FcnModel<f32>, image: &BinaryImage) -> Result<()> {
    let spec = model.spec();
    if image.height != spec.input_height || image.width != spec.input_width {
        return Err(shape_err!(
            "image is {}x{} but the model expects {}x{}",
            image.height,
            image.width,
            spec.input_height,
            spec.input_width
        ));
    }
    Ok(())
}

pub fn segment_line(model: &FcnModel<f32>, image: &BinaryImage, params: &PostprocParams) -> Result<Vec<Segment>> {
    Ok(segment_lines(model, std::slice::from_ref(image), params)?.remove(0))
}

/// Batched [`segment_line`]; results are identical to per-image calls.
pub fn segment_lines(
    model: &FcnModel<f32>,
    images: &[BinaryImage],
    params: &PostprocParams,
) -> Result<Vec<Vec<Segment>>> {
    const CHUNK: usize = 16;
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(CHUNK) {
        for img in chunk {
            check_image(model, img)?;
        }
        let spec = model.spec();
        let data: Vec<&[u8]> = chunk.iter().map(|i| i.data.as_slice()).collect();
        let batch = batch_from_images::<f32>(&data, spec.input_height, spec.input_width)?;
        let probs = model.predict(&batch)?;
        for (row, img) in rows(&probs).iter().zip(chunk) {
            out.push(segment_probs(row, img, params)?);
        }
    }
    Ok(out)
}

/// Projection-profile segmentation: every zero-ink column run of at least
/// `blank_run_min` columns is split at its centre, with virtual split points
/// just outside both image edges.
pub fn proj_segment(image: &BinaryImage, blank_run_min: usize, params: &PostprocParams) -> Vec<Segment> {
    let profile = image.column_profile();
    let w = image.width as i64;
    let mut points: Vec<i64> = vec![-1];
    let mut start = None;
    for (i, &c) in profile.iter().chain(std::iter::once(&1)).enumerate() {
        match (c == 0, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                if i - s >= blank_run_min.max(1) {
                    points.push(((s + i - 1) / 2) as i64);
                }
                start = None;
            }
            _ => {}
        }
    }
    points.push(w);
    points
        .windows(2)
        .filter(|p| interior_ink_columns(&profile, p[0], p[1]) >= params.min_ink_columns)
        .map(|p| Segment::new(p[0].max(0) as usize, p[1].min(w - 1) as usize))
        .collect()
}

/// The image with every segment boundary drawn as a column of alternating
/// black and white pixels.
pub fn overlay(image: &BinaryImage, segments: &[Segment]) -> GrayImage {
    let mut out = image.to_gray();
    for s in segments {
        for x in [s.left, s.right] {
            for y in 0..out.height {
                out.data[y * out.width + x] = if y % 2 == 0 { 0 } else { 255 };
            }
        }
    }
    out
}
