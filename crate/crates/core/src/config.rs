//! Flat `key = value` run configuration with dotted keys. Later sources
//! override earlier ones: defaults, then a file, then explicit overrides.

use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::evalmetric::MatchParams;
use crate::segmenter::PostprocParams;
use crate::synth::{Content, DisturbanceParams, SpacingSampler};
use crate::trainloop::TrainConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSettings {
    pub count: usize,
    pub width: usize,
    pub content: Content,
    pub glyphs: usize,
    pub corpus_len: usize,
    pub margin_min: usize,
    pub margin_max: usize,
    pub seed: Option<u64>,
}

impl Default for SynthSettings {
    fn default() -> Self {
        Self {
            count: 1000,
            width: 512,
            content: Content::Normal,
            glyphs: 32,
            corpus_len: 20_000,
            margin_min: 2,
            margin_max: 8,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// `train.seed` is tracked in `train_seed`; `train.seed` inside
    /// `train` is only meaningful once that is set.
    pub train: TrainConfig,
    pub train_seed: Option<u64>,
    pub disturb: DisturbanceParams,
    pub spacing: SpacingSampler,
    pub post: PostprocParams,
    /// Minimum blank run for the projection baseline.
    pub blank_run_min: usize,
    pub matching: MatchParams,
    pub synth: SynthSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::full_scale(0),
            train_seed: None,
            disturb: DisturbanceParams::default(),
            spacing: SpacingSampler::default(),
            post: PostprocParams::default(),
            blank_run_min: 1,
            matching: MatchParams::default(),
            synth: SynthSettings::default(),
        }
    }
}

pub const KEYS: &[&str] = &[
    "train.batch_size",
    "train.momentum",
    "train.learning_rate",
    "train.iterations",
    "train.lr_drops",
    "train.lr_drop_factor",
    "train.alpha0",
    "train.delta_cap",
    "train.seed",
    "disturb.rotation_deg",
    "disturb.erosion_prob",
    "disturb.dilation_prob",
    "disturb.blur_prob",
    "disturb.blur_sigma_min",
    "disturb.blur_sigma_max",
    "disturb.threshold",
    "spacing.fixed",
    "spacing.touch_prob",
    "spacing.touch_min",
    "spacing.gap_min",
    "spacing.gap_max",
    "post.threshold",
    "post.min_ink_columns",
    "post.blank_run_min",
    "match.t1",
    "match.t2",
    "match.t3",
    "synth.count",
    "synth.width",
    "synth.content",
    "synth.glyphs",
    "synth.corpus_len",
    "synth.margin_min",
    "synth.margin_max",
    "synth.seed",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_list(key: &str, value: &str) -> Result<Vec<u64>> {
    if value.trim().is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| parse(key, v.trim())).collect()
}

impl RunConfig {
    /// Sets one key. The whole configuration is validated separately by
    /// [`RunConfig::validate`].
    #[allow(clippy::type_complexity)]
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let random_spacing = |s: &mut SpacingSampler| -> (f64, i32, i32, i32) {
            match *s {
                SpacingSampler::Random {
                    touch_prob,
                    touch_min,
                    gap_min,
                    gap_max,
                } => (touch_prob, touch_min, gap_min, gap_max),
                SpacingSampler::Fixed(_) => match SpacingSampler::default() {
                    SpacingSampler::Random {
                        touch_prob,
                        touch_min,
                        gap_min,
                        gap_max,
                    } => (touch_prob, touch_min, gap_min, gap_max),
                    SpacingSampler::Fixed(_) => unreachable!(),
                },
            }
        };
        let set_random = |s: &mut SpacingSampler, f: &dyn Fn(&mut (f64, i32, i32, i32))| {
            let mut t = random_spacing(s);
            f(&mut t);
            *s = SpacingSampler::Random {
                touch_prob: t.0,
                touch_min: t.1,
                gap_min: t.2,
                gap_max: t.3,
            };
        };
        match key {
            "train.batch_size" => self.train.batch_size = parse(key, v)?,
            "train.momentum" => self.train.momentum = parse(key, v)?,
            "train.learning_rate" => self.train.learning_rate = parse(key, v)?,
            "train.iterations" => self.train.iterations = parse(key, v)?,
            "train.lr_drops" => self.train.lr_drops = parse_list(key, v)?,
            "train.lr_drop_factor" => self.train.lr_drop_factor = parse(key, v)?,
            "train.alpha0" => self.train.alpha0 = parse(key, v)?,
            "train.delta_cap" => self.train.delta_cap = parse(key, v)?,
            "train.seed" => {
                let s = parse(key, v)?;
                self.train.seed = s;
                self.train_seed = Some(s);
            }
            "disturb.rotation_deg" => self.disturb.rotation_deg = parse(key, v)?,
            "disturb.erosion_prob" => self.disturb.erosion_prob = parse(key, v)?,
            "disturb.dilation_prob" => self.disturb.dilation_prob = parse(key, v)?,
            "disturb.blur_prob" => self.disturb.blur_prob = parse(key, v)?,
            "disturb.blur_sigma_min" => self.disturb.blur_sigma_min = parse(key, v)?,
            "disturb.blur_sigma_max" => self.disturb.blur_sigma_max = parse(key, v)?,
            "disturb.threshold" => self.disturb.threshold = parse(key, v)?,
            "spacing.fixed" => self.spacing = SpacingSampler::Fixed(parse(key, v)?),
            "spacing.touch_prob" => {
                let p: f64 = parse(key, v)?;
                set_random(&mut self.spacing, &|t| t.0 = p);
            }
            "spacing.touch_min" => {
                let p: i32 = parse(key, v)?;
                set_random(&mut self.spacing, &|t| t.1 = p);
            }
            "spacing.gap_min" => {
                let p: i32 = parse(key, v)?;
                set_random(&mut self.spacing, &|t| t.2 = p);
            }
            "spacing.gap_max" => {
                let p: i32 = parse(key, v)?;
                set_random(&mut self.spacing, &|t| t.3 = p);
            }
            "post.threshold" => self.post.threshold = parse(key, v)?,
            "post.min_ink_columns" => self.post.min_ink_columns = parse(key, v)?,
            "post.blank_run_min" => self.blank_run_min = parse(key, v)?,
            "match.t1" => self.matching.t1 = parse(key, v)?,
            "match.t2" => self.matching.t2 = parse(key, v)?,
            "match.t3" => self.matching.t3 = parse(key, v)?,
            "synth.count" => self.synth.count = parse(key, v)?,
            "synth.width" => self.synth.width = parse(key, v)?,
            "synth.content" => self.synth.content = v.parse()?,
            "synth.glyphs" => self.synth.glyphs = parse(key, v)?,
            "synth.corpus_len" => self.synth.corpus_len = parse(key, v)?,
            "synth.margin_min" => self.synth.margin_min = parse(key, v)?,
            "synth.margin_max" => self.synth.margin_max = parse(key, v)?,
            "synth.seed" => self.synth.seed = Some(parse(key, v)?),
            other => return Err(Error::Config(format!("unknown configuration key {other:?}"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
            self.set(k.trim(), v)
                .map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        self.validate()
    }

    pub fn apply_file(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.apply_text(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.disturb.validate()?;
        self.spacing.validate()?;
        self.post.validate()?;
        let s = &self.synth;
        if s.margin_min > s.margin_max {
            return Err(Error::Config("synth.margin_min exceeds synth.margin_max".into()));
        }
        if s.width == 0 || s.glyphs < 8 || s.corpus_len == 0 {
            return Err(Error::Config(
                "synth.width, synth.glyphs (>= 8) and synth.corpus_len must be positive".into(),
            ));
        }
        Ok(())
    }
}
