//! Synthetic text-line samples: glyphs are composed into a grayscale line,
//! disturbed (rotation, erosion, dilation, Gaussian blur), binarized, and
//! labelled with every character's left and right ink column.

mod atlas;
mod dataset;

use rand::Rng;

use crate::error::{Error, Result};
use crate::raster::{BinaryImage, GrayImage};
use crate::segment::Segment;

pub use atlas::{make_toy_atlas, Glyph, GlyphAtlas, FAMILY_CJK, FAMILY_LATIN};
pub use dataset::{
    corpus_seed, generate_dataset, generate_samples, make_corpus, read_dataset, write_dataset, Content, DatasetSpec,
    Manifest, MANIFEST_NAME,
};

/// One labelled text line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sample {
    pub image: BinaryImage,
    /// Per-character inclusive ink extents, ordered by left column.
    pub intervals: Vec<Segment>,
    /// 1 at every character margin column, 0 elsewhere.
    pub mask: Vec<u8>,
    /// Atlas id of each interval's glyph. Not stored on disk, so empty for
    /// loaded samples.
    pub glyph_ids: Vec<u32>,
}

/// Ground-truth column labels: each character's first and last column is a
/// splitting point, everything else is not.
pub fn intervals_to_mask(intervals: &[Segment], width: usize) -> Result<Vec<u8>> {
    let mut mask = vec![0u8; width];
    for s in intervals {
        if s.left > s.right || s.right >= width {
            return Err(Error::Bounds(format!("interval {s} outside width {width}")));
        }
        mask[s.left] = 1;
        mask[s.right] = 1;
    }
    Ok(mask)
}

/// Horizontal gap (in px) between consecutive glyphs; `0` means abutting,
/// negative values make glyphs overlap.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SpacingSampler {
    Fixed(i32),
    /// With probability `touch_prob` draw uniformly from `touch_min..=0`,
    /// otherwise uniformly from `gap_min..=gap_max`.
    Random {
        touch_prob: f64,
        touch_min: i32,
        gap_min: i32,
        gap_max: i32,
    },
}

impl Default for SpacingSampler {
    fn default() -> Self {
        SpacingSampler::Random {
            touch_prob: 0.3,
            touch_min: -2,
            gap_min: 1,
            gap_max: 5,
        }
    }
}

impl SpacingSampler {
    pub fn sample(&self, rng: &mut impl Rng) -> i32 {
        match *self {
            SpacingSampler::Fixed(s) => s,
            SpacingSampler::Random {
                touch_prob,
                touch_min,
                gap_min,
                gap_max,
            } => {
                let touch = rng.random::<f64>() < touch_prob;
                if touch {
                    rng.random_range(touch_min..=0)
                } else {
                    rng.random_range(gap_min..=gap_max)
                }
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let SpacingSampler::Random {
            touch_prob,
            touch_min,
            gap_min,
            gap_max,
        } = *self
        {
            if !(0.0..=1.0).contains(&touch_prob) || touch_min > 0 || gap_min > gap_max {
                return Err(Error::Config(format!("invalid spacing sampler {self:?}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Overflow {
    /// Drop the glyphs that no longer fit.
    #[default]
    Truncate,
    Error,
}

/// A clean composed line before disturbance.
#[derive(Debug, Clone, PartialEq)]
pub struct ComposedLine {
    pub gray: GrayImage,
    pub intervals: Vec<Segment>,
    /// Flat pixel indices of every character's ink, aligned with `intervals`.
    pub char_ink: Vec<Vec<usize>>,
    pub glyph_ids: Vec<u32>,
}

/// Plots glyphs left to right (ink 0 on a 255 background), starting at
/// column `margin`, with per-gap spacing from `spacing`. Each glyph is
/// vertically centred with up to ±2 px jitter.
#[allow(clippy::too_many_arguments)]
pub fn compose_line(
    atlas: &GlyphAtlas,
    glyph_ids: &[u32],
    spacing: &SpacingSampler,
    margin: usize,
    width: usize,
    overflow: Overflow,
    rng: &mut impl Rng,
) -> Result<ComposedLine> {
    let height = atlas.line_height;
    let mut gray = GrayImage::blank(height, width);
    let mut intervals = Vec::new();
    let mut char_ink = Vec::new();
    let mut placed = Vec::new();
    let mut cursor = margin as i64;
    for (k, &id) in glyph_ids.iter().enumerate() {
        let g = atlas
            .glyph(id)
            .ok_or_else(|| Error::Data(format!("unknown glyph id {id}")))?;
        if k > 0 {
            cursor += spacing.sample(rng) as i64;
        }
        let left = cursor.max(0) as usize;
        let jitter = rng.random_range(-2i64..=2);
        if left + g.width > width {
            match overflow {
                Overflow::Truncate => break,
                Overflow::Error => {
                    return Err(Error::Data(format!(
                        "glyph {id} at column {left} overflows line width {width}"
                    )))
                }
            }
        }
        let top = ((height - g.height) as i64 / 2 + jitter).clamp(0, (height - g.height) as i64) as usize;
        let mut ink = Vec::new();
        for y in 0..g.height {
            for x in 0..g.width {
                if g.bitmap[y * g.width + x] != 0 {
                    let i = (top + y) * width + left + x;
                    gray.data[i] = 0;
                    ink.push(i);
                }
            }
        }
        intervals.push(Segment::new(left, left + g.width - 1));
        char_ink.push(ink);
        placed.push(id);
        cursor = (left + g.width) as i64;
    }
    Ok(ComposedLine {
        gray,
        intervals,
        char_ink,
        glyph_ids: placed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DisturbanceParams {
    /// Rotation angle is drawn from `[-rotation_deg, rotation_deg]`.
    pub rotation_deg: f64,
    pub erosion_prob: f64,
    pub dilation_prob: f64,
    pub blur_prob: f64,
    pub blur_sigma_min: f64,
    pub blur_sigma_max: f64,
    pub threshold: u8,
}

impl Default for DisturbanceParams {
    fn default() -> Self {
        Self {
            rotation_deg: 2.0,
            erosion_prob: 0.5,
            dilation_prob: 0.5,
            blur_prob: 1.0,
            blur_sigma_min: 0.5,
            blur_sigma_max: 1.5,
            threshold: 160,
        }
    }
}

impl DisturbanceParams {
    /// No rotation, morphology or blur: binarization only.
    pub fn identity() -> Self {
        Self {
            rotation_deg: 0.0,
            erosion_prob: 0.0,
            dilation_prob: 0.0,
            blur_prob: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.rotation_deg >= 0.0 && self.rotation_deg <= 45.0) {
            return bad(format!("rotation range {} outside [0, 45] degrees", self.rotation_deg));
        }
        for (name, p) in [
            ("erosion", self.erosion_prob),
            ("dilation", self.dilation_prob),
            ("blur", self.blur_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} probability {p} outside [0, 1]"));
            }
        }
        if !(self.blur_sigma_min > 0.0 && self.blur_sigma_min <= self.blur_sigma_max && self.blur_sigma_max <= 10.0) {
            return bad(format!(
                "blur sigma range [{}, {}] must satisfy 0 < min <= max <= 10",
                self.blur_sigma_min, self.blur_sigma_max
            ));
        }
        if self.threshold == 0 || self.threshold == 255 {
            return bad(format!("threshold {} outside (0, 255)", self.threshold));
        }
        Ok(())
    }
}

/// Cross-shaped (4-neighbour) binary erosion of ink; neighbours outside the
/// image do not constrain.
pub fn erode(img: &[bool], height: usize, width: usize) -> Vec<bool> {
    cross_filter(img, height, width, true)
}

/// Cross-shaped binary dilation of ink.
pub fn dilate(img: &[bool], height: usize, width: usize) -> Vec<bool> {
    cross_filter(img, height, width, false)
}

fn cross_filter(img: &[bool], height: usize, width: usize, all: bool) -> Vec<bool> {
    let mut out = vec![false; img.len()];
    for y in 0..height {
        for x in 0..width {
            let i = y * width + x;
            let neighbours = [
                Some(i),
                (x > 0).then(|| i - 1),
                (x + 1 < width).then(|| i + 1),
                (y > 0).then(|| i - width),
                (y + 1 < height).then(|| i + width),
            ];
            let mut it = neighbours.iter().flatten().map(|&j| img[j]);
            out[i] = if all { it.all(|v| v) } else { it.any(|v| v) };
        }
    }
    out
}

/// Inverse-mapped nearest-neighbour rotation about the image centre:
/// `map[i]` is the source pixel of destination `i`, if inside the image.
fn rotation_map(height: usize, width: usize, theta_deg: f64) -> Vec<Option<usize>> {
    if theta_deg == 0.0 {
        return (0..height * width).map(Some).collect();
    }
    let (s, c) = theta_deg.to_radians().sin_cos();
    let cx = (width as f64 - 1.0) / 2.0;
    let cy = (height as f64 - 1.0) / 2.0;
    let mut map = Vec::with_capacity(height * width);
    for y in 0..height {
        for x in 0..width {
            let dx = x as f64 - cx;
            let dy = y as f64 - cy;
            let sx = (c * dx + s * dy + cx).round();
            let sy = (-s * dx + c * dy + cy).round();
            map.push(
                (sx >= 0.0 && sy >= 0.0 && sx < width as f64 && sy < height as f64)
                    .then(|| sy as usize * width + sx as usize),
            );
        }
    }
    map
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as i64;
    let raw: Vec<f64> = (-radius..=radius)
        .map(|k| (-(k * k) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// Separable Gaussian blur with edge clamping.
fn blur(img: &[f64], width: usize, height: usize, kernel: &[f64]) -> Vec<f64> {
    let r = (kernel.len() / 2) as i64;
    let clamp = |v: i64, n: usize| v.clamp(0, n as i64 - 1) as usize;
    let mut tmp = vec![0.0; img.len()];
    for y in 0..height {
        for x in 0..width {
            let mut acc = 0.0;
            for (k, &kv) in kernel.iter().enumerate() {
                acc += kv * img[y * width + clamp(x as i64 + k as i64 - r, width)];
            }
            tmp[y * width + x] = acc;
        }
    }
    let mut out = vec![0.0; img.len()];
    for y in 0..height {
        for x in 0..width {
            let mut acc = 0.0;
            for (k, &kv) in kernel.iter().enumerate() {
                acc += kv * tmp[clamp(y as i64 + k as i64 - r, height) * width + x];
            }
            out[y * width + x] = acc;
        }
    }
    out
}

/// Binarizes `ink` (true = black) after an optional blur.
fn render_ink(ink: &[bool], height: usize, width: usize, kernel: Option<&[f64]>, threshold: f64) -> Vec<bool> {
    match kernel {
        None => ink.to_vec(),
        Some(k) => {
            let gray: Vec<f64> = ink.iter().map(|&b| if b { 0.0 } else { 255.0 }).collect();
            blur(&gray, width, height, k)
                .into_iter()
                .map(|v| v < threshold)
                .collect()
        }
    }
}

/// Applies rotation, erosion, dilation and blur (each drawn from `params`
/// with `rng`), binarizes, and recomputes every character's interval from
/// the final ink it owns. A final ink pixel is owned by the characters with
/// the nearest rotated clean ink, so ink bridging two characters still
/// belongs to a character. Characters left with no ink are dropped.
pub fn disturb(line: &ComposedLine, params: &DisturbanceParams, rng: &mut impl Rng) -> Result<Sample> {
    let (height, width) = (line.gray.height, line.gray.width);
    let n = height * width;

    // fixed number of draws per sample, whatever the outcome
    let theta = params.rotation_deg * (2.0 * rng.random::<f64>() - 1.0);
    let do_erode = rng.random::<f64>() < params.erosion_prob;
    let do_dilate = rng.random::<f64>() < params.dilation_prob;
    let do_blur = rng.random::<f64>() < params.blur_prob;
    let sigma_u = rng.random::<f64>();
    let sigma = params.blur_sigma_min + (params.blur_sigma_max - params.blur_sigma_min) * sigma_u;
    let kernel = do_blur.then(|| gaussian_kernel(sigma));
    let radius = kernel.as_ref().map_or(0, |k| k.len() / 2);
    let threshold = params.threshold as f64;

    let map = rotation_map(height, width, theta);
    let morph = |mut ink: Vec<bool>| {
        if do_erode {
            ink = erode(&ink, height, width);
        }
        if do_dilate {
            ink = dilate(&ink, height, width);
        }
        ink
    };
    let rotate = |src: &[bool]| -> Vec<bool> { map.iter().map(|m| m.is_some_and(|s| src[s])).collect() };

    let line_ink: Vec<bool> = line.gray.data.iter().map(|&v| (v as f64) < threshold).collect();
    let combined = morph(rotate(&line_ink));
    let image = BinaryImage {
        height,
        width,
        data: render_ink(&combined, height, width, kernel.as_deref(), threshold)
            .into_iter()
            .map(u8::from)
            .collect(),
    };

    // owners of every clean ink pixel after rotation; glyphs overlap by at
    // most a few columns, so no pixel has more than two owners
    const NONE: u32 = u32::MAX;
    let mut clean_owner = vec![[NONE; 2]; n];
    for (c, pixels) in line.char_ink.iter().enumerate() {
        for &i in pixels {
            let slot = &mut clean_owner[i];
            if slot[0] == NONE {
                slot[0] = c as u32;
            } else if slot[1] == NONE && slot[0] != c as u32 {
                slot[1] = c as u32;
            }
        }
    }
    let owner: Vec<[u32; 2]> = map.iter().map(|m| m.map_or([NONE; 2], |s| clean_owner[s])).collect();

    // a final ink pixel belongs to every character with clean ink at the
    // minimum distance; morphology and blur move ink by at most `reach`
    let reach = radius as i64 + 2;
    let mut spans: Vec<Option<(usize, usize)>> = vec![None; line.char_ink.len()];
    let mut nearest: Vec<u32> = Vec::new();
    for (i, _) in image.data.iter().enumerate().filter(|(_, &v)| v != 0) {
        let (y, x) = ((i / width) as i64, (i % width) as i64);
        let mut best = i64::MAX;
        nearest.clear();
        for yy in (y - reach).max(0)..=(y + reach).min(height as i64 - 1) {
            for xx in (x - reach).max(0)..=(x + reach).min(width as i64 - 1) {
                let o = owner[yy as usize * width + xx as usize];
                if o[0] == NONE {
                    continue;
                }
                let d = (xx - x).pow(2) + (yy - y).pow(2);
                if d < best {
                    best = d;
                    nearest.clear();
                }
                if d == best {
                    nearest.extend(o.iter().filter(|&&c| c != NONE));
                }
            }
        }
        let col = i % width;
        for &c in &nearest {
            let span = &mut spans[c as usize];
            *span = Some(span.map_or((col, col), |(lo, hi)| (lo.min(col), hi.max(col))));
        }
    }
    let mut labelled: Vec<(Segment, u32)> = spans
        .into_iter()
        .zip(&line.glyph_ids)
        .filter_map(|(span, &id)| span.map(|(lo, hi)| (Segment::new(lo, hi), id)))
        .collect();
    labelled.sort();
    let (intervals, glyph_ids): (Vec<Segment>, Vec<u32>) = labelled.into_iter().unzip();
    let mask = intervals_to_mask(&intervals, width)?;
    Ok(Sample {
        image,
        intervals,
        mask,
        glyph_ids,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn bar_atlas() -> GlyphAtlas {
        let solid = |id: u32, w: usize, h: usize| Glyph {
            id,
            width: w,
            height: h,
            bitmap: vec![1; w * h],
            family: FAMILY_CJK.into(),
        };
        GlyphAtlas {
            line_height: 16,
            glyphs: vec![solid(0, 10, 8), solid(1, 10, 6)],
        }
    }

    #[test]
    fn mask_examples() {
        let m = intervals_to_mask(&[Segment::new(5, 9)], 16).unwrap();
        let ones: Vec<usize> = (0..16).filter(|&i| m[i] == 1).collect();
        assert_eq!(ones, vec![5, 9]);
        assert_eq!(intervals_to_mask(&[], 8).unwrap(), vec![0; 8]);
        let m = intervals_to_mask(&[Segment::new(3, 12), Segment::new(12, 21)], 32).unwrap();
        let ones: Vec<usize> = (0..32).filter(|&i| m[i] == 1).collect();
        assert_eq!(ones, vec![3, 12, 21]);
        assert!(matches!(
            intervals_to_mask(&[Segment::new(3, 40)], 32),
            Err(Error::Bounds(_))
        ));
    }

    #[test]
    fn placement_arithmetic() {
        let atlas = bar_atlas();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let line = compose_line(
            &atlas,
            &[0, 1],
            &SpacingSampler::Fixed(2),
            3,
            64,
            Overflow::Truncate,
            &mut rng,
        )
        .unwrap();
        assert_eq!(line.intervals, vec![Segment::new(3, 12), Segment::new(15, 24)]);
        let line = compose_line(
            &atlas,
            &[0, 1],
            &SpacingSampler::Fixed(-1),
            3,
            64,
            Overflow::Truncate,
            &mut rng,
        )
        .unwrap();
        assert_eq!(line.intervals, vec![Segment::new(3, 12), Segment::new(12, 21)]);
        let empty = compose_line(
            &atlas,
            &[],
            &SpacingSampler::Fixed(2),
            3,
            64,
            Overflow::Truncate,
            &mut rng,
        )
        .unwrap();
        assert!(empty.intervals.is_empty());
        assert!(empty.gray.data.iter().all(|&v| v == 255));
    }

    #[test]
    fn overflow_policy() {
        let atlas = bar_atlas();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let ids = [0, 1, 0, 1, 0];
        let line = compose_line(
            &atlas,
            &ids,
            &SpacingSampler::Fixed(2),
            3,
            40,
            Overflow::Truncate,
            &mut rng,
        )
        .unwrap();
        assert_eq!(line.intervals.len(), 3);
        assert!(compose_line(
            &atlas,
            &ids,
            &SpacingSampler::Fixed(2),
            3,
            40,
            Overflow::Error,
            &mut rng
        )
        .is_err());
        assert!(matches!(
            compose_line(&atlas, &[7], &SpacingSampler::Fixed(2), 3, 40, Overflow::Truncate, &mut rng),
            Err(Error::Data(m)) if m.contains('7')
        ));
    }

    #[test]
    fn identity_disturbance_only_binarizes() {
        let atlas = make_toy_atlas(1, 12, 48).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let line = compose_line(
            &atlas,
            &atlas.ids(),
            &SpacingSampler::default(),
            4,
            256,
            Overflow::Truncate,
            &mut rng,
        )
        .unwrap();
        let s = disturb(&line, &DisturbanceParams::identity(), &mut rng).unwrap();
        assert_eq!(s.image, line.gray.threshold(160));
        assert_eq!(s.intervals, line.intervals);
        assert_eq!(s.mask, intervals_to_mask(&line.intervals, 256).unwrap());
    }

    #[test]
    fn erosion_of_solid_square_keeps_center() {
        let mut img = vec![false; 25];
        for y in 1..4 {
            for x in 1..4 {
                img[y * 5 + x] = true;
            }
        }
        let e = erode(&img, 5, 5);
        let kept: Vec<usize> = (0..25).filter(|&i| e[i]).collect();
        assert_eq!(kept, vec![12]);
        let d = dilate(&[false, false, true, false, false], 1, 5);
        assert_eq!(d, vec![false, true, true, true, false]);
    }

    #[test]
    fn disturbance_is_deterministic() {
        let atlas = make_toy_atlas(8, 16, 48).unwrap();
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(99);
            let line = compose_line(
                &atlas,
                &atlas.ids(),
                &SpacingSampler::default(),
                5,
                512,
                Overflow::Truncate,
                &mut rng,
            )
            .unwrap();
            disturb(&line, &DisturbanceParams::default(), &mut rng).unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn blur_kernel_is_normalized() {
        let k = gaussian_kernel(1.2);
        assert_eq!(k.len(), 2 * 4 + 1);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
