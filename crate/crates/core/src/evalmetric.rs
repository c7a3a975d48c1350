//! Coverage-threshold matching between predicted and true segments.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::FcnModel;
use crate::raster::BinaryImage;
use crate::segment::Segment;
use crate::segmenter::{proj_segment, segment_lines, segment_probs, PostprocParams};
use crate::synth::Sample;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MatchParams {
    /// Uncovered truth columns must be fewer than this.
    pub t1: usize,
    /// Covered truth columns must exceed this.
    pub t2: usize,
    /// Coverage of every other truth must be below this.
    pub t3: usize,
}

impl Default for MatchParams {
    fn default() -> Self {
        Self { t1: 8, t2: 0, t3: 5 }
    }
}

/// `(covered, uncovered)` columns of `truth` under `pred`.
pub fn coverage(pred: &Segment, truth: &Segment) -> (usize, usize) {
    let c = pred.overlap(truth);
    (c, truth.width() - c)
}

/// Whether `pred` matches truth `j` on its own, ignoring tie-breaking
/// between truths.
pub fn pair_matches(pred: &Segment, truths: &[Segment], j: usize, params: &MatchParams) -> bool {
    let cov: Vec<(usize, usize)> = truths.iter().map(|t| coverage(pred, t)).collect();
    let min_u = cov.iter().map(|c| c.1).min().unwrap_or(0);
    let max_c = cov.iter().map(|c| c.0).max().unwrap_or(0);
    let (c, u) = cov[j];
    let cross = cov
        .iter()
        .enumerate()
        .filter(|&(k, _)| k != j)
        .map(|(_, c)| c.0)
        .max()
        .unwrap_or(0);
    u == min_u && c == max_c && u < params.t1 && c > params.t2 && cross < params.t3
}

/// The truth `pred` matches, if any: the smallest index satisfying every
/// condition.
pub fn matches(pred: &Segment, truths: &[Segment], params: &MatchParams) -> Option<usize> {
    (0..truths.len()).find(|&j| pair_matches(pred, truths, j, params))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchReport {
    pub m: usize,
    pub n: usize,
    pub k: usize,
    pub accuracy: f64,
    /// `(prediction, truth)` index pairs.
    pub pairs: Vec<(usize, usize)>,
}

/// Greedy one-to-one matching in prediction order.
pub fn match_and_score(preds: &[Segment], truths: &[Segment], params: &MatchParams) -> MatchReport {
    let mut taken = vec![false; truths.len()];
    let mut pairs = Vec::new();
    for (i, p) in preds.iter().enumerate() {
        if let Some(j) = matches(p, truths, params) {
            if !taken[j] {
                taken[j] = true;
                pairs.push((i, j));
            }
        }
    }
    let (m, n, k) = (preds.len(), truths.len(), pairs.len());
    let accuracy = if m == 0 && n == 0 {
        1.0
    } else {
        k as f64 / m.max(n) as f64
    };
    MatchReport {
        m,
        n,
        k,
        accuracy,
        pairs,
    }
}

/// A segmentation method under evaluation.
#[derive(Debug, Clone, Copy)]
pub enum Method<'a> {
    Fcn(&'a FcnModel<f32>),
    Proj {
        blank_run_min: usize,
    },
    /// Post-processing applied to the ground-truth mask softened to
    /// `{0.01, 0.99}`.
    IdealMask,
    /// Returns the ground truth unchanged.
    Oracle,
}

impl Method<'_> {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Fcn(_) => "fcn",
            Method::Proj { .. } => "proj",
            Method::IdealMask => "ideal-mask",
            Method::Oracle => "oracle",
        }
    }

    /// Predictions for every sample, in order.
    pub fn predict(&self, samples: &[&Sample], post: &PostprocParams) -> Result<Vec<Vec<Segment>>> {
        match self {
            Method::Fcn(model) => {
                let images: Vec<BinaryImage> = samples.iter().map(|s| s.image.clone()).collect();
                segment_lines(model, &images, post)
            }
            Method::Proj { blank_run_min } => Ok(samples
                .par_iter()
                .map(|s| proj_segment(&s.image, *blank_run_min, post))
                .collect()),
            Method::IdealMask => samples
                .par_iter()
                .map(|s| {
                    let p: Vec<f64> = s.mask.iter().map(|&q| if q != 0 { 0.99 } else { 0.01 }).collect();
                    segment_probs(&p, &s.image, post)
                })
                .collect(),
            Method::Oracle => Ok(samples.iter().map(|s| s.intervals.clone()).collect()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleReport {
    pub name: String,
    pub report: MatchReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub method: String,
    pub params: MatchParams,
    pub samples: Vec<SampleReport>,
    pub mean_accuracy: f64,
}

impl EvalReport {
    pub fn summary_line(&self) -> String {
        format!("samples={} mean_acc={:.4}", self.samples.len(), self.mean_accuracy)
    }

    /// Per-sample CSV preceded by a comment header echoing the thresholds
    /// and followed by the summary line.
    pub fn to_csv(&self) -> String {
        let p = &self.params;
        let mut s = format!(
            "# method={} t1={} t2={} t3={}\nsample,m,n,k,accuracy\n",
            self.method, p.t1, p.t2, p.t3
        );
        for r in &self.samples {
            let m = &r.report;
            let _ = writeln!(s, "{},{},{},{},{:.6}", r.name, m.m, m.n, m.k, m.accuracy);
        }
        let _ = writeln!(s, "# {}", self.summary_line());
        s
    }
}

pub fn evaluate_dataset(
    method: Method<'_>,
    dataset: &[(String, Sample)],
    params: &MatchParams,
    post: &PostprocParams,
) -> Result<EvalReport> {
    if dataset.is_empty() {
        return Err(Error::Data("dataset has no samples".into()));
    }
    let samples: Vec<&Sample> = dataset.iter().map(|(_, s)| s).collect();
    let preds = method.predict(&samples, post)?;
    let reports: Vec<SampleReport> = dataset
        .iter()
        .zip(&preds)
        .map(|((name, s), p)| SampleReport {
            name: name.clone(),
            report: match_and_score(p, &s.intervals, params),
        })
        .collect();
    let mean = reports.iter().map(|r| r.report.accuracy).sum::<f64>() / reports.len() as f64;
    Ok(EvalReport {
        method: method.name().to_string(),
        params: *params,
        samples: reports,
        mean_accuracy: mean,
    })
}
