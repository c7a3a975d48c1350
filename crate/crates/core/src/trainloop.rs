//! Weighted binary cross entropy with dynamically re-balanced class weights,
//! and the mini-batch SGD training schedule.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{shape_err, Error, Result};
use crate::model::{batch_from_images, FcnModel, Mode, ModelCheckpoint};
use crate::numerics::{Real, Sgd, Tensor4};
use crate::synth::Sample;

/// Lower clamp applied to log arguments.
pub const LOG_CLAMP: f64 = 1e-12;

/// Positive/negative class weights. Only `alpha` is stored; `beta` is
/// always `1 - alpha`, so the pair sums to one by construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    alpha: f64,
}

impl LossWeights {
    pub const INITIAL_ALPHA: f64 = 0.9;

    pub fn new(alpha: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::Config(format!("alpha {alpha} outside [0, 1]")));
        }
        Ok(Self { alpha })
    }

    /// `(0.9, 0.1)`.
    pub fn initial() -> Self {
        Self {
            alpha: Self::INITIAL_ALPHA,
        }
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        1.0 - self.alpha
    }
}

/// Loss and its gradient w.r.t. the probabilities for a batch of `batch`
/// rows. `q` holds 0/1 labels aligned with `p`.
///
/// The summed loss is divided by the batch size.
pub fn weighted_bce<T: Real>(p: &[T], q: &[u8], batch: usize, w: LossWeights) -> Result<(f64, Vec<T>)> {
    if p.len() != q.len() {
        return Err(shape_err!("{} probabilities vs {} labels", p.len(), q.len()));
    }
    if batch == 0 || !p.len().is_multiple_of(batch) {
        return Err(shape_err!("{} values do not split into {} rows", p.len(), batch));
    }
    let inv_b = 1.0 / batch as f64;
    let (alpha, beta) = (w.alpha(), w.beta());
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(p.len());
    for (&pv, &qv) in p.iter().zip(q) {
        let pv = pv.to_f64().unwrap();
        let g = if qv != 0 {
            let a = pv.max(LOG_CLAMP);
            loss -= alpha * a.ln();
            -alpha / a
        } else {
            let a = (1.0 - pv).max(LOG_CLAMP);
            loss -= beta * a.ln();
            beta / a
        };
        grad.push(T::lit(g * inv_b));
    }
    Ok((loss * inv_b, grad))
}

/// Fraction of positive labels predicted `> 0.5` and of negative labels
/// predicted `< 0.5`. A class absent from the batch scores 1.0.
pub fn batch_accuracies<T: Real>(p: &[T], q: &[u8]) -> (f64, f64) {
    let half = T::lit(0.5);
    let (mut pos, mut pos_hit, mut neg, mut neg_hit) = (0usize, 0usize, 0usize, 0usize);
    for (&pv, &qv) in p.iter().zip(q) {
        if qv != 0 {
            pos += 1;
            pos_hit += (pv > half) as usize;
        } else {
            neg += 1;
            neg_hit += (pv < half) as usize;
        }
    }
    let frac = |hit: usize, n: usize| if n == 0 { 1.0 } else { hit as f64 / n as f64 };
    (frac(pos_hit, pos), frac(neg_hit, neg))
}

/// One step of the heuristic: shift weight toward whichever class is
/// currently less accurate, by at most `delta_cap`. Ties shift toward the
/// negative class.
pub fn update_loss_weights(w: LossWeights, acc_pos: f64, acc_neg: f64, delta_cap: f64) -> LossWeights {
    let alpha = if acc_pos < acc_neg {
        w.alpha() + w.beta().min(delta_cap)
    } else {
        w.alpha() - w.alpha().min(delta_cap)
    };
    LossWeights {
        alpha: alpha.clamp(0.0, 1.0),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub momentum: f64,
    pub learning_rate: f64,
    pub iterations: u64,
    pub lr_drops: Vec<u64>,
    pub lr_drop_factor: f64,
    pub alpha0: f64,
    pub delta_cap: f64,
    pub seed: u64,
}

impl TrainConfig {
    /// Full-scale schedule: 50000 iterations of batch 8, momentum 0.9,
    /// learning rate 1e-4 divided by 10 at 20000 and 40000.
    pub fn full_scale(seed: u64) -> Self {
        Self {
            batch_size: 8,
            momentum: 0.9,
            learning_rate: 1e-4,
            iterations: 50_000,
            lr_drops: vec![20_000, 40_000],
            lr_drop_factor: 10.0,
            alpha0: LossWeights::INITIAL_ALPHA,
            delta_cap: 0.001,
            seed,
        }
    }

    /// The same schedule shortened to 3000 iterations (drops at 1200, 2400).
    pub fn desk_scale(seed: u64) -> Self {
        Self {
            iterations: 3_000,
            lr_drops: vec![1_200, 2_400],
            ..Self::full_scale(seed)
        }
    }

    #[allow(clippy::neg_cmp_op_on_partial_ord)] // negated form also rejects NaN
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.batch_size == 0 {
            return bad("batch size must be >= 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate {} must be positive", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum {} outside [0, 1)", self.momentum));
        }
        if !(self.lr_drop_factor > 0.0) {
            return bad("lr drop factor must be positive".into());
        }
        if self.lr_drops.windows(2).any(|w| w[0] > w[1]) {
            return bad("lr drops must be sorted".into());
        }
        if !(0.0..=1.0).contains(&self.alpha0) {
            return bad(format!("alpha0 {} outside [0, 1]", self.alpha0));
        }
        if !(self.delta_cap >= 0.0) {
            return bad("delta cap must be non-negative".into());
        }
        Ok(())
    }

    /// Learning rate in effect for (0-based) iteration `iter`.
    pub fn lr_at(&self, iter: u64) -> f64 {
        let drops = self.lr_drops.iter().filter(|&&d| iter >= d).count();
        self.learning_rate / self.lr_drop_factor.powi(drops as i32)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainRecord {
    pub iteration: u64,
    pub loss: f64,
    pub acc_pos: f64,
    pub acc_neg: f64,
    /// Positive-class weight used for this iteration's loss.
    pub alpha: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    records: Vec<TrainRecord>,
}

impl TrainLog {
    pub fn push(&mut self, r: TrainRecord) {
        self.records.push(r);
    }

    pub fn records(&self) -> &[TrainRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("iteration,loss,acc_pos,acc_neg,alpha,lr\n");
        for r in &self.records {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                r.iteration, r.loss, r.acc_pos, r.acc_neg, r.alpha, r.lr
            );
        }
        s
    }
}

/// Trains `model` on `dataset` for `cfg.iterations` mini-batches drawn
/// uniformly with replacement. `on_record` sees every log record as it is
/// produced.
pub fn train_with(
    mut model: FcnModel<f32>,
    dataset: &[Sample],
    cfg: &TrainConfig,
    mut on_record: impl FnMut(&TrainRecord),
) -> Result<(ModelCheckpoint, TrainLog)> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    let (h, w) = (model.spec().input_height, model.spec().input_width);
    if let Some(s) = dataset.iter().find(|s| s.image.height != h || s.image.width != w) {
        return Err(Error::Config(format!(
            "sample is {}x{} but the model expects {h}x{w}",
            s.image.height, s.image.width
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut opt = Sgd::new(cfg.learning_rate as f32, cfg.momentum as f32);
    let mut weights = LossWeights::new(cfg.alpha0)?;
    let mut log = TrainLog::default();
    model.set_mode(Mode::Train);
    model.zero_grad();

    for iter in 0..cfg.iterations {
        let lr = cfg.lr_at(iter);
        let picks: Vec<&Sample> = (0..cfg.batch_size)
            .map(|_| &dataset[rng.random_range(0..dataset.len())])
            .collect();
        let images: Vec<&[u8]> = picks.iter().map(|s| s.image.data.as_slice()).collect();
        let labels: Vec<u8> = picks.iter().flat_map(|s| s.mask.iter().copied()).collect();
        let batch = batch_from_images::<f32>(&images, h, w)?;

        let probs = model.forward(&batch)?;
        let (loss, grad) = weighted_bce(probs.data(), &labels, cfg.batch_size, weights)?;
        model.backward(&Tensor4::from_vec(probs.dims(), grad)?)?;
        opt.learning_rate = lr as f32;
        opt.step(model.params_mut());

        let (acc_pos, acc_neg) = batch_accuracies(probs.data(), &labels);
        let record = TrainRecord {
            iteration: iter,
            loss,
            acc_pos,
            acc_neg,
            alpha: weights.alpha(),
            lr,
        };
        on_record(&record);
        log.push(record);
        weights = update_loss_weights(weights, acc_pos, acc_neg, cfg.delta_cap);
    }

    model.set_mode(Mode::Infer);
    Ok((
        ModelCheckpoint {
            model,
            iteration: cfg.iterations,
            loss_weights: weights,
        },
        log,
    ))
}

pub fn train(model: FcnModel<f32>, dataset: &[Sample], cfg: &TrainConfig) -> Result<(ModelCheckpoint, TrainLog)> {
    train_with(model, dataset, cfg, |_| {})
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_prediction_at_clamp_has_no_loss() {
        let q = [1u8, 0, 0, 1];
        let p: Vec<f64> = q.iter().map(|&v| if v == 1 { 1.0 - 1e-12 } else { 1e-12 }).collect();
        let (loss, _) = weighted_bce(&p, &q, 1, LossWeights::initial()).unwrap();
        assert!((0.0..=4e-10).contains(&loss), "{loss}");
    }

    #[test]
    fn half_probabilities_give_ln2_weighted_counts() {
        let q = [1u8, 0, 0, 0, 1, 0, 0];
        let p = vec![0.5f64; q.len()];
        let w = LossWeights::initial();
        let (loss, _) = weighted_bce(&p, &q, 1, w).unwrap();
        let want = (w.alpha() * 2.0 + w.beta() * 5.0) * std::f64::consts::LN_2;
        assert!((loss - want).abs() < 1e-12);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        assert!(matches!(
            weighted_bce(&[0.5f32; 3], &[0, 1], 1, LossWeights::initial()),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn accuracy_edge_cases() {
        let q = [1u8, 0, 0, 1, 0];
        let perfect: Vec<f64> = q.iter().map(|&v| if v == 1 { 0.9 } else { 0.1 }).collect();
        assert_eq!(batch_accuracies(&perfect, &q), (1.0, 1.0));
        assert_eq!(batch_accuracies(&[0.5f64; 5], &q), (0.0, 0.0));
        // no positives present
        assert_eq!(batch_accuracies(&[0.2f64, 0.7], &[0, 0]), (1.0, 0.5));
    }

    #[test]
    fn weight_update_examples() {
        let w = update_loss_weights(LossWeights::initial(), 0.4, 0.99, 0.001);
        assert!((w.alpha() - 0.901).abs() < 1e-12 && (w.beta() - 0.099).abs() < 1e-12);

        let w = update_loss_weights(LossWeights::new(0.9995).unwrap(), 0.1, 0.2, 0.001);
        assert_eq!((w.alpha(), w.beta()), (1.0, 0.0));

        let w = update_loss_weights(LossWeights::new(0.5).unwrap(), 0.7, 0.7, 0.001);
        assert!((w.alpha() - 0.499).abs() < 1e-15 && (w.beta() - 0.501).abs() < 1e-15);
    }

    #[test]
    fn learning_rate_schedule() {
        let cfg = TrainConfig::full_scale(0);
        assert_eq!(cfg.lr_at(0), 1e-4);
        assert_eq!(cfg.lr_at(19_999), 1e-4);
        assert!((cfg.lr_at(20_000) - 1e-5).abs() < 1e-20);
        assert!((cfg.lr_at(49_999) - 1e-6).abs() < 1e-20);
    }

    #[test]
    fn config_validation() {
        let mut cfg = TrainConfig::desk_scale(1);
        cfg.validate().unwrap();
        cfg.lr_drops = vec![2400, 1200];
        assert!(cfg.validate().is_err());
        cfg.lr_drops = vec![5000];
        cfg.validate().unwrap();
        cfg = TrainConfig::desk_scale(1);
        cfg.batch_size = 0;
        assert!(cfg.validate().is_err());
    }
}
