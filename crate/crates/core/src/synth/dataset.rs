use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::raster::{read_pgm, write_pgm};
use crate::segment::Segment;

use super::{
    compose_line, disturb, intervals_to_mask, DisturbanceParams, GlyphAtlas, Overflow, Sample, SpacingSampler,
};

pub const MANIFEST_NAME: &str = "manifest.txt";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Content {
    /// Consecutive runs of the corpus.
    Normal,
    /// The corpus globally shuffled with the dataset seed.
    Chaotic,
}

impl Content {
    pub fn as_str(&self) -> &'static str {
        match self {
            Content::Normal => "normal",
            Content::Chaotic => "chaotic",
        }
    }
}

impl std::str::FromStr for Content {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "normal" => Ok(Content::Normal),
            "chaotic" => Ok(Content::Chaotic),
            other => Err(Error::Config(format!("unknown content style {other:?}"))),
        }
    }
}

/// "Normal" text: a stream of words drawn from a fixed vocabulary with
/// Zipf-like frequencies, so glyph neighbourhoods recur.
pub fn make_corpus(atlas: &GlyphAtlas, seed: u64, length: usize) -> Vec<u32> {
    let ids = atlas.ids();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vocab: Vec<Vec<u32>> = (0..64)
        .map(|_| {
            let len = rng.random_range(1..=4);
            (0..len).map(|_| ids[rng.random_range(0..ids.len())]).collect()
        })
        .collect();
    let weights: Vec<f64> = (0..vocab.len()).map(|r| 1.0 / ((r + 1) as f64).sqrt()).collect();
    let total: f64 = weights.iter().sum();
    let mut corpus = Vec::with_capacity(length + 4);
    while corpus.len() < length {
        let mut u = rng.random::<f64>() * total;
        let mut pick = vocab.len() - 1;
        for (i, w) in weights.iter().enumerate() {
            if u < *w {
                pick = i;
                break;
            }
            u -= w;
        }
        corpus.extend_from_slice(&vocab[pick]);
    }
    corpus.truncate(length);
    corpus
}

/// Seed for the atlas's default corpus, so every dataset drawn from one
/// atlas shares a vocabulary.
pub fn corpus_seed(atlas: &GlyphAtlas) -> u64 {
    u64::from_str_radix(&atlas.hash()[..16], 16).expect("sha256 hex digest")
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSpec {
    pub content: Content,
    pub count: usize,
    pub seed: u64,
    pub width: usize,
    pub disturbance: DisturbanceParams,
    pub spacing: SpacingSampler,
    pub margin_min: usize,
    pub margin_max: usize,
}

impl DatasetSpec {
    pub fn new(content: Content, count: usize, seed: u64, width: usize) -> Self {
        Self {
            content,
            count,
            seed,
            width,
            disturbance: DisturbanceParams::default(),
            spacing: SpacingSampler::default(),
            margin_min: 2,
            margin_max: 8,
        }
    }
}

/// The glyph sequence a dataset draws lines from.
fn arrange_corpus(atlas: &GlyphAtlas, corpus: &[u32], spec: &DatasetSpec) -> Result<Vec<u32>> {
    let known: HashSet<u32> = atlas.ids().into_iter().collect();
    if let Some(bad) = corpus.iter().find(|id| !known.contains(id)) {
        return Err(Error::Data(format!("corpus references unknown glyph id {bad}")));
    }
    if corpus.is_empty() && spec.count > 0 {
        return Err(Error::Data("corpus is empty".into()));
    }
    let mut arranged = corpus.to_vec();
    if spec.content == Content::Chaotic {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        arranged.shuffle(&mut rng);
    }
    Ok(arranged)
}

/// Generates `spec.count` samples in memory. Sample `i` uses its own
/// generator derived from `(spec.seed, i)`, so the result does not depend
/// on how generation is scheduled.
pub fn generate_samples(atlas: &GlyphAtlas, corpus: &[u32], spec: &DatasetSpec) -> Result<Vec<Sample>> {
    spec.disturbance.validate()?;
    spec.spacing.validate()?;
    if spec.margin_min > spec.margin_max {
        return Err(Error::Config("margin_min exceeds margin_max".into()));
    }
    let arranged = arrange_corpus(atlas, corpus, spec)?;
    let per_line = spec.width / 4 + 2;
    (0..spec.count)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(i as u64 + 1);
            let start = rng.random_range(0..arranged.len());
            let ids: Vec<u32> = arranged.iter().cycle().skip(start).take(per_line).copied().collect();
            let margin = rng.random_range(spec.margin_min..=spec.margin_max);
            let line = compose_line(
                atlas,
                &ids,
                &spec.spacing,
                margin,
                spec.width,
                Overflow::Truncate,
                &mut rng,
            )?;
            disturb(&line, &spec.disturbance, &mut rng)
        })
        .collect()
}

/// Header and sample list of a dataset directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    /// `key=value` header fields in file order.
    pub header: Vec<(String, String)>,
    pub samples: Vec<String>,
}

impl Manifest {
    pub fn get(&self, key: &str) -> Option<&str> {
        self.header.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("# charseg dataset\n");
        for (k, v) in &self.header {
            let _ = writeln!(s, "# {k}={v}");
        }
        for name in &self.samples {
            let _ = writeln!(s, "{name}");
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut header = Vec::new();
        let mut samples = Vec::new();
        for line in text.lines() {
            let line = line.trim();
            if let Some(rest) = line.strip_prefix('#') {
                if let Some((k, v)) = rest.trim().split_once('=') {
                    header.push((k.trim().to_string(), v.trim().to_string()));
                }
            } else if !line.is_empty() {
                samples.push(line.to_string());
            }
        }
        Ok(Self { header, samples })
    }
}

fn manifest_header(atlas: &GlyphAtlas, spec: &DatasetSpec) -> Vec<(String, String)> {
    let d = &spec.disturbance;
    let spacing = match spec.spacing {
        SpacingSampler::Fixed(s) => format!("fixed:{s}"),
        SpacingSampler::Random {
            touch_prob,
            touch_min,
            gap_min,
            gap_max,
        } => format!("random:{touch_prob}:{touch_min}:{gap_min}:{gap_max}"),
    };
    [
        ("seed", spec.seed.to_string()),
        ("atlas_hash", atlas.hash()),
        ("content", spec.content.as_str().to_string()),
        ("count", spec.count.to_string()),
        ("width", spec.width.to_string()),
        ("height", atlas.line_height.to_string()),
        ("rotation_deg", d.rotation_deg.to_string()),
        ("erosion_prob", d.erosion_prob.to_string()),
        ("dilation_prob", d.dilation_prob.to_string()),
        ("blur_prob", d.blur_prob.to_string()),
        ("blur_sigma", format!("{}..{}", d.blur_sigma_min, d.blur_sigma_max)),
        ("threshold", d.threshold.to_string()),
        ("spacing", spacing),
        ("margin", format!("{}..{}", spec.margin_min, spec.margin_max)),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}

fn labels_text(intervals: &[Segment]) -> String {
    intervals.iter().map(|s| format!("{} {}\n", s.left, s.right)).collect()
}

fn parse_labels(text: &str, name: &str) -> Result<Vec<Segment>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let nums: Vec<usize> = line
            .split_whitespace()
            .map(|t| t.parse())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::Data(format!("{name}: line {} is not an integer pair", i + 1)))?;
        match nums.as_slice() {
            [m, n] if m <= n => out.push(Segment::new(*m, *n)),
            _ => return Err(Error::Data(format!("{name}: line {} is not a valid `m n` pair", i + 1))),
        }
    }
    Ok(out)
}

/// Writes samples as `sample_NNNNN.pgm` / `.lab` pairs plus the manifest.
pub fn write_dataset(out_dir: impl AsRef<Path>, samples: &[Sample], header: Vec<(String, String)>) -> Result<Manifest> {
    let dir = out_dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut names = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        let name = format!("sample_{i:05}");
        write_pgm(&s.image.to_gray(), dir.join(format!("{name}.pgm")))?;
        let lab = dir.join(format!("{name}.lab"));
        std::fs::write(&lab, labels_text(&s.intervals)).map_err(|e| Error::io(&lab, e))?;
        names.push(name);
    }
    let manifest = Manifest { header, samples: names };
    let path = dir.join(MANIFEST_NAME);
    std::fs::write(&path, manifest.to_text()).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

/// Generates a dataset and writes it (with a copy of the atlas) to
/// `out_dir`.
pub fn generate_dataset(
    atlas: &GlyphAtlas,
    corpus: &[u32],
    spec: &DatasetSpec,
    out_dir: impl AsRef<Path>,
) -> Result<Manifest> {
    let samples = generate_samples(atlas, corpus, spec)?;
    let dir = out_dir.as_ref();
    let manifest = write_dataset(dir, &samples, manifest_header(atlas, spec))?;
    atlas.save(dir.join("atlas.txt"))?;
    Ok(manifest)
}

/// Loads every sample listed in a manifest (path to the manifest file or to
/// its directory).
pub fn read_dataset(path: impl AsRef<Path>) -> Result<(Manifest, Vec<(String, Sample)>)> {
    let path = path.as_ref();
    let manifest_path: PathBuf = if path.is_dir() {
        path.join(MANIFEST_NAME)
    } else {
        path.to_path_buf()
    };
    let dir = manifest_path.parent().unwrap_or(Path::new(".")).to_path_buf();
    let text = std::fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest = Manifest::from_text(&text)?;
    let mut out = Vec::with_capacity(manifest.samples.len());
    for name in &manifest.samples {
        let missing = |what: &str| Error::Data(format!("sample {name}: {what} missing or unreadable"));
        let img_path = dir.join(format!("{name}.pgm"));
        let lab_path = dir.join(format!("{name}.lab"));
        if !img_path.is_file() {
            return Err(missing("image"));
        }
        let image = read_pgm(&img_path)?.threshold(128);
        let labels = std::fs::read_to_string(&lab_path).map_err(|_| missing("label file"))?;
        let intervals = parse_labels(&labels, name)?;
        let mask =
            intervals_to_mask(&intervals, image.width).map_err(|e| Error::Data(format!("sample {name}: {e}")))?;
        out.push((
            name.clone(),
            Sample {
                image,
                intervals,
                mask,
                glyph_ids: Vec::new(),
            },
        ));
    }
    Ok((manifest, out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::make_toy_atlas;

    #[test]
    fn chaotic_shuffle_preserves_multiset() {
        let atlas = make_toy_atlas(1, 16, 48).unwrap();
        let corpus = make_corpus(&atlas, 2, 500);
        let spec = DatasetSpec::new(Content::Chaotic, 1, 9, 128);
        let shuffled = arrange_corpus(&atlas, &corpus, &spec).unwrap();
        assert_ne!(shuffled, corpus);
        let mut a = shuffled.clone();
        let mut b = corpus.clone();
        a.sort();
        b.sort();
        assert_eq!(a, b);
    }

    #[test]
    fn unknown_glyph_is_named() {
        let atlas = make_toy_atlas(1, 8, 48).unwrap();
        let spec = DatasetSpec::new(Content::Normal, 2, 0, 128);
        let err = generate_samples(&atlas, &[0, 1, 99], &spec).unwrap_err();
        assert!(err.to_string().contains("99"));
    }

    #[test]
    fn labels_parse_and_reject() {
        assert_eq!(parse_labels("3 9\n12 20\n", "x").unwrap().len(), 2);
        assert!(parse_labels("3\n", "x").is_err());
        assert!(parse_labels("9 3\n", "x").is_err());
    }
}
