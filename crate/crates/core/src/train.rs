//! Mixture-NLL training with Adam and the pretrain / fine-tune curriculum.

use std::io::Write;
use std::time::Instant;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autograd::Tape;
use crate::error::{Error, Result};
use crate::geom::{ScenarioRecord, MAX_OBJECTS};
use crate::net::{Batch, KnollingModel};
use crate::scalar::Real;

pub use crate::gmm::gmm_nll;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Constant rates for long runs on large data: pretraining, then a tenfold
/// cut for fine-tuning. `TrainConfig::default` starts from the first.
pub const PRETRAIN_LR: f64 = 1e-4;
pub const FINETUNE_LR: f64 = 1e-5;
/// Peak rate of the warmup-then-cosine schedule. Short runs use it in every
/// phase; a fine-tune at a lower rate does not recover within their budget.
pub const DIRECT_LR: f64 = 1e-3;

/// First and second moment estimates for every parameter tensor.
#[derive(Debug, Clone)]
pub struct AdamState<T> {
    pub step: u64,
    pub m: Vec<Array2<T>>,
    pub v: Vec<Array2<T>>,
}

impl<T: Real> AdamState<T> {
    pub fn new(params: &[Array2<T>]) -> Self {
        Self {
            step: 0,
            m: params.iter().map(|p| Array2::zeros(p.dim())).collect(),
            v: params.iter().map(|p| Array2::zeros(p.dim())).collect(),
        }
    }
}

/// One Adam update. Missing gradients count as zero.
pub fn adam_step<T: Real>(
    params: &mut [Array2<T>],
    grads: &[Option<Array2<T>>],
    names: &[String],
    state: &mut AdamState<T>,
    lr: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::LengthMismatch {
            left: params.len(),
            right: grads.len(),
        });
    }
    for (i, g) in grads.iter().enumerate() {
        if let Some(g) = g {
            if g.dim() != params[i].dim() {
                return Err(Error::Config(format!("gradient shape mismatch for `{}`", names[i])));
            }
            if g.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFiniteGradient(names[i].clone()));
            }
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let b1 = T::lit(ADAM_BETA1);
    let b2 = T::lit(ADAM_BETA2);
    let c1 = T::lit(1.0 - ADAM_BETA1.powi(t));
    let c2 = T::lit(1.0 - ADAM_BETA2.powi(t));
    let lr = T::lit(lr);
    let eps = T::lit(ADAM_EPS);
    let one = T::one();
    for (i, p) in params.iter_mut().enumerate() {
        let m = &mut state.m[i];
        let v = &mut state.v[i];
        match &grads[i] {
            Some(g) => {
                ndarray::Zip::from(p).and(m).and(v).and(g).for_each(|p, m, v, &g| {
                    *m = b1 * *m + (one - b1) * g;
                    *v = b2 * *v + (one - b2) * g * g;
                    let mh = *m / c1;
                    let vh = *v / c2;
                    *p -= lr * mh / (vh.sqrt() + eps);
                });
            }
            None => {
                ndarray::Zip::from(p).and(m).and(v).for_each(|p, m, v| {
                    *m = b1 * *m;
                    *v = b2 * *v;
                    *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                });
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub early_stop_patience: usize,
    pub validation_fraction: f64,
    pub seed: u64,
    /// Optimizer steps of linear learning-rate warmup from zero.
    pub warmup_steps: usize,
    /// Cosine decay of the learning rate towards zero over `max_epochs`.
    pub cosine_decay: bool,
    /// Rescale gradients whose global L2 norm exceeds this.
    pub grad_clip: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: PRETRAIN_LR,
            batch_size: 512,
            max_epochs: 100,
            early_stop_patience: 10,
            validation_fraction: 0.02,
            seed: 0,
            warmup_steps: 0,
            cosine_decay: false,
            grad_clip: None,
        }
    }
}

impl TrainConfig {
    /// Desk-scale recipe, used for every curriculum phase. Patience spans the
    /// whole schedule: validation NLL is spiky until the rate has decayed, and
    /// the best epoch is restored at the end either way.
    pub fn direct() -> Self {
        Self {
            learning_rate: DIRECT_LR,
            batch_size: 32,
            max_epochs: 100,
            early_stop_patience: 100,
            warmup_steps: 500,
            cosine_decay: true,
            grad_clip: Some(1.0),
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Pretrain,
    Finetune,
}

/// What each phase trains on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurriculumSpec {
    pub phase: Phase,
    /// Inclusive object-count range of records used.
    pub n_range: (usize, usize),
    /// Up to this many leading ground-truth positions are given as context
    /// and left unscored (drawn per sample, never all of them).
    pub teacher_prefix: usize,
    /// Probability of hiding trailing objects from the encoder.
    pub encoder_mask_prob: f64,
}

impl CurriculumSpec {
    /// Small, partially pre-arranged scenes.
    pub fn pretrain() -> Self {
        Self {
            phase: Phase::Pretrain,
            n_range: (2, 5),
            teacher_prefix: 3,
            encoder_mask_prob: 0.0,
        }
    }

    /// Full scenes with encoder-input masking.
    pub fn finetune() -> Self {
        Self {
            phase: Phase::Finetune,
            n_range: (2, MAX_OBJECTS),
            teacher_prefix: 0,
            encoder_mask_prob: 0.1,
        }
    }

    /// Full scenes, no curriculum tricks.
    pub fn direct() -> Self {
        Self {
            encoder_mask_prob: 0.0,
            ..Self::finetune()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.n_range;
        if lo < 1 || lo > hi || hi > MAX_OBJECTS {
            return Err(Error::Config(format!("bad n_range {:?}", self.n_range)));
        }
        if self.phase == Phase::Pretrain && (lo < 2 || hi > 5) {
            return Err(Error::Config("pretraining uses 2..=5 objects".into()));
        }
        if self.phase == Phase::Finetune && (lo, hi) != (2, MAX_OBJECTS) {
            return Err(Error::Config("fine-tuning uses 2..=10 objects".into()));
        }
        if !(0.0..=1.0).contains(&self.encoder_mask_prob) {
            return Err(Error::Config("encoder_mask_prob outside [0, 1]".into()));
        }
        Ok(())
    }
}

/// One row of the training log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_nll: f64,
    pub val_nll: f64,
    pub lr: f64,
    pub wall_seconds: f64,
}

impl EpochLog {
    pub const CSV_HEADER: &'static str = "epoch,train_nll,val_nll,lr,wall_seconds";

    pub fn csv(&self) -> String {
        format!(
            "{},{:.6},{:.6},{:e},{:.3}",
            self.epoch, self.train_nll, self.val_nll, self.lr, self.wall_seconds
        )
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub history: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_val_nll: f64,
}

/// Splits indices into (train, validation) with a seeded shuffle.
pub fn validation_split(len: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..len).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0f_5911));
    let n_val = ((len as f64 * fraction).round() as usize).min(len.saturating_sub(1));
    let val = idx[..n_val].to_vec();
    let train = idx[n_val..].to_vec();
    if val.is_empty() {
        return (train.clone(), train);
    }
    (train, val)
}

/// Applies encoder masking and draws the unscored teacher prefix for one sample.
fn prepare<R: Rng>(rec: &ScenarioRecord<f64>, cur: &CurriculumSpec, rng: &mut R) -> (ScenarioRecord<f64>, usize) {
    let n = rec.len();
    let mut out = rec.clone();
    if cur.encoder_mask_prob > 0.0 && n > 2 && rng.random::<f64>() < cur.encoder_mask_prob {
        out = rec.truncated(rng.random_range(2..n));
    }
    let prefix = if cur.teacher_prefix > 0 {
        rng.random_range(0..=cur.teacher_prefix.min(out.len() - 1))
    } else {
        0
    };
    (out, prefix)
}

/// Groups indices into batches of equal object count, then shuffles the batch order.
fn make_batches<R: Rng>(records: &[ScenarioRecord<f64>], idx: &[usize], batch_size: usize, rng: &mut R) -> Vec<Vec<usize>> {
    let mut shuffled = idx.to_vec();
    shuffled.shuffle(rng);
    let mut by_n: Vec<Vec<usize>> = vec![Vec::new(); MAX_OBJECTS + 1];
    for i in shuffled {
        by_n[records[i].len()].push(i);
    }
    let mut batches: Vec<Vec<usize>> = by_n
        .into_iter()
        .flat_map(|group| group.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect::<Vec<_>>())
        .collect();
    batches.shuffle(rng);
    batches
}

/// Mean teacher-forced NLL over `idx`, all slots scored.
pub fn evaluate_nll<T: Real>(model: &KnollingModel<T>, records: &[ScenarioRecord<f64>], idx: &[usize], batch_size: usize) -> Result<f64> {
    let mut by_n: Vec<Vec<usize>> = vec![Vec::new(); MAX_OBJECTS + 1];
    for &i in idx {
        by_n[records[i].len()].push(i);
    }
    let mut total = 0.0;
    let mut weight = 0.0;
    for group in by_n {
        for chunk in group.chunks(batch_size.max(1)) {
            let recs: Vec<&ScenarioRecord<f64>> = chunk.iter().map(|&i| &records[i]).collect();
            let batch = Batch::teacher(&recs, &vec![0; recs.len()])?;
            let mut tape = Tape::new();
            let p = model.bind(&mut tape, false);
            let l = model.loss(&mut tape, &p, &batch);
            let scored: f64 = batch.score.iter().map(|s| s.as_f64()).sum();
            total += tape.value(l)[[0, 0]].as_f64() * scored;
            weight += scored;
        }
    }
    Ok(if weight > 0.0 { total / weight } else { 0.0 })
}

/// Learning rate after `step` optimizer steps, `progress` in `[0, 1]` of the run.
pub fn scheduled_lr(cfg: &TrainConfig, step: usize, progress: f64) -> f64 {
    let mut lr = cfg.learning_rate;
    if step < cfg.warmup_steps {
        lr *= step as f64 / cfg.warmup_steps as f64;
    }
    if cfg.cosine_decay {
        lr *= 0.5 * (1.0 + (std::f64::consts::PI * progress.clamp(0.0, 1.0)).cos());
    }
    lr
}

/// Scales all gradients by a common factor so their joint L2 norm is at most `max_norm`.
/// Non-finite norms are left alone for `adam_step` to reject.
pub fn clip_global_norm<T: Real>(grads: &mut [Option<Array2<T>>], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flatten()
        .flat_map(|g| g.iter())
        .map(|v| v.as_f64() * v.as_f64())
        .sum::<f64>()
        .sqrt();
    if norm.is_finite() && norm > max_norm {
        let s = T::lit(max_norm / norm);
        for g in grads.iter_mut().flatten() {
            g.mapv_inplace(|v| v * s);
        }
    }
    norm
}

/// Trains `model` in place on `dataset` and restores the parameters of the
/// best validation epoch. `log` receives one CSV line per epoch.
pub fn train_phase<T: Real>(
    model: &mut KnollingModel<T>,
    dataset: &[ScenarioRecord<f64>],
    cfg: &TrainConfig,
    cur: &CurriculumSpec,
    log: Option<&mut dyn Write>,
) -> Result<TrainOutcome> {
    cur.validate()?;
    if cfg.learning_rate < 0.0 || !cfg.learning_rate.is_finite() {
        return Err(Error::Config("learning rate must be finite and non-negative".into()));
    }
    if cfg.grad_clip.is_some_and(|c| !(c > 0.0)) {
        return Err(Error::Config("gradient clip must be positive".into()));
    }
    let (lo, hi) = cur.n_range;
    let records: Vec<ScenarioRecord<f64>> = dataset
        .iter()
        .filter(|r| (lo..=hi).contains(&r.len()))
        .cloned()
        .collect();
    if records.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut log = log;
    if let Some(w) = log.as_deref_mut() {
        writeln!(w, "{}", EpochLog::CSV_HEADER)?;
    }
    let (train_idx, val_idx) = validation_split(records.len(), cfg.validation_fraction, cfg.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = AdamState::new(&model.params.values);
    let started = Instant::now();
    let mut best_val = evaluate_nll(model, &records, &val_idx, cfg.batch_size)?;
    let mut best_params = model.params.values.clone();
    let mut best_epoch = 0;
    let mut history = Vec::new();
    let mut stale = 0;
    let mut step = 0usize;
    let mut lr = cfg.learning_rate;
    for epoch in 1..=cfg.max_epochs {
        let batches = make_batches(&records, &train_idx, cfg.batch_size, &mut rng);
        let per_epoch = batches.len().max(1);
        let mut sum = 0.0;
        let mut count = 0.0;
        for (b, chunk) in batches.into_iter().enumerate() {
            let prepared: Vec<(ScenarioRecord<f64>, usize)> =
                chunk.iter().map(|&i| prepare(&records[i], cur, &mut rng)).collect();
            let recs: Vec<&ScenarioRecord<f64>> = prepared.iter().map(|(r, _)| r).collect();
            let prefixes: Vec<usize> = prepared.iter().map(|(_, k)| *k).collect();
            let batch = Batch::teacher(&recs, &prefixes)?;
            let mut tape = Tape::new();
            let p = model.bind(&mut tape, true);
            let loss = model.loss(&mut tape, &p, &batch);
            let grads = tape.backward(loss, model.params.len());
            let scored: f64 = batch.score.iter().map(|s| s.as_f64()).sum();
            sum += tape.value(loss)[[0, 0]].as_f64() * scored;
            count += scored;
            drop(tape);
            let mut grads = grads;
            if let Some(clip) = cfg.grad_clip {
                clip_global_norm(&mut grads, clip);
            }
            step += 1;
            let progress = ((epoch - 1) as f64 + (b + 1) as f64 / per_epoch as f64) / cfg.max_epochs as f64;
            lr = scheduled_lr(cfg, step, progress);
            adam_step(&mut model.params.values, &grads, &model.params.names, &mut adam, lr)?;
        }
        let val = evaluate_nll(model, &records, &val_idx, cfg.batch_size)?;
        let entry = EpochLog {
            epoch,
            train_nll: if count > 0.0 { sum / count } else { 0.0 },
            val_nll: val,
            lr,
            wall_seconds: started.elapsed().as_secs_f64(),
        };
        if let Some(w) = log.as_deref_mut() {
            writeln!(w, "{}", entry.csv())?;
            w.flush()?;
        }
        history.push(entry);
        if val < best_val {
            best_val = val;
            best_params = model.params.values.clone();
            best_epoch = epoch;
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.early_stop_patience {
                break;
            }
        }
    }
    model.params.values = best_params;
    Ok(TrainOutcome {
        history,
        best_epoch,
        best_val_nll: best_val,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::ObjectSpec;
    use crate::gmm::{GmmParams, SamplerConfig};
    use crate::net::ModelConfig;

    fn record(rng: &mut ChaCha8Rng, n: usize) -> ScenarioRecord<f64> {
        ScenarioRecord::new(
            (0..n)
                .map(|_| ObjectSpec::new(rng.random_range(0.01..0.05), rng.random_range(0.01..0.05)).unwrap())
                .collect(),
            (0..n).map(|i| [0.02 + 0.03 * i as f64, 0.02]).collect(),
        )
    }

    #[test]
    fn adam_zero_gradient_keeps_params_and_decays_moments() {
        let mut params = vec![Array2::from_elem((1, 2), 0.5f64)];
        let mut st = AdamState::new(&params);
        st.m[0].fill(0.2);
        st.v[0].fill(0.04);
        let grads = vec![Some(Array2::zeros((1, 2)))];
        let before = params.clone();
        // with a zero gradient moments shrink but the bias-corrected step is nonzero;
        // use zero moments to isolate the "unchanged" contract
        let mut clean = AdamState::new(&params);
        adam_step(&mut params, &grads, &["p".into()], &mut clean, 0.1).unwrap();
        assert_eq!(params, before);
        adam_step(&mut params, &grads, &["p".into()], &mut st, 0.0).unwrap();
        assert!((st.m[0][[0, 0]] - 0.18).abs() < 1e-15);
        assert!((st.v[0][[0, 0]] - 0.04 * 0.999).abs() < 1e-15);
    }

    #[test]
    fn adam_hand_computed_first_step() {
        let mut params = vec![Array2::from_shape_vec((1, 2), vec![1.0f64, -2.0]).unwrap()];
        let grads = vec![Some(Array2::from_shape_vec((1, 2), vec![0.5, -0.1]).unwrap())];
        let mut st = AdamState::new(&params);
        adam_step(&mut params, &grads, &["p".into()], &mut st, 0.1).unwrap();
        // m_hat = g, v_hat = g^2 after one step
        let e0 = 1.0 - 0.1 * 0.5 / (0.5 + 1e-8);
        let e1 = -2.0 + 0.1 * 0.1 / (0.1 + 1e-8);
        assert!((params[0][[0, 0]] - e0).abs() < 1e-14);
        assert!((params[0][[0, 1]] - e1).abs() < 1e-14);
        assert!((st.m[0][[0, 0]] - 0.05).abs() < 1e-15);
        assert!((st.v[0][[0, 0]] - 0.00025).abs() < 1e-15);
    }

    #[test]
    fn adam_constant_gradient_steps_approach_lr() {
        let mut params = vec![Array2::from_elem((1, 1), 0.0f64)];
        let grads = vec![Some(Array2::from_elem((1, 1), 3.7))];
        let mut st = AdamState::new(&params);
        let lr = 0.01;
        let mut last = 0.0;
        for _ in 0..2000 {
            let before = params[0][[0, 0]];
            adam_step(&mut params, &grads, &["p".into()], &mut st, lr).unwrap();
            last = before - params[0][[0, 0]];
        }
        assert!((last - lr).abs() < 1e-8, "{last}");
    }

    #[test]
    fn adam_rejects_non_finite() {
        let mut params = vec![Array2::from_elem((1, 1), 0.0f64)];
        let grads = vec![Some(Array2::from_elem((1, 1), f64::NAN))];
        let mut st = AdamState::new(&params);
        let err = adam_step(&mut params, &grads, &["enc.0.w".into()], &mut st, 0.1).unwrap_err();
        assert!(matches!(err, Error::NonFiniteGradient(name) if name == "enc.0.w"));
    }

    #[test]
    fn gmm_nll_matches_direct_density_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..1000 {
            let raw: Vec<f64> = (0..25).map(|_| rng.random_range(-2.0..2.0)).collect();
            let p = GmmParams::from_raw(&raw, 5, 1.0);
            let t = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            let mut density = 0.0;
            for k in 0..5 {
                let [sx, sy] = p.stds[k];
                let zx = (t[0] - p.means[k][0]) / sx;
                let zy = (t[1] - p.means[k][1]) / sy;
                density += p.weights[k] * (-0.5 * (zx * zx + zy * zy)).exp()
                    / (2.0 * std::f64::consts::PI * sx * sy);
            }
            let direct = -density.ln();
            assert!((gmm_nll(&p, t) - direct).abs() < 1e-10);
            assert!((crate::gmm::raw_row_nll(&raw, t, 5) - direct).abs() < 1e-10);
        }
    }

    #[test]
    fn gmm_nll_survives_distant_target() {
        let p = GmmParams {
            means: vec![[0.0, 0.0]; 5],
            stds: vec![[0.01, 0.01]; 5],
            weights: vec![0.2; 5],
        };
        let l: f64 = gmm_nll(&p, [1.0, 0.0]);
        assert!(l.is_finite());
    }

    #[test]
    fn gmm_nll_nonnegative_for_wide_components() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let cap = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
        for _ in 0..500 {
            let p = GmmParams {
                means: (0..5).map(|_| [rng.random_range(-1.0..1.0), 0.0]).collect(),
                stds: (0..5)
                    .map(|_| [rng.random_range(cap..1.0), rng.random_range(cap..1.0)])
                    .collect(),
                weights: vec![0.2; 5],
            };
            assert!(gmm_nll(&p, [rng.random_range(-1.0..1.0), 0.5]) >= -1e-12);
        }
    }

    #[test]
    fn zero_learning_rate_leaves_parameters() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let data: Vec<_> = (0..8).map(|_| record(&mut rng, 3)).collect();
        let mut m = KnollingModel::<f64>::new(ModelConfig::transformer(), 3).unwrap();
        let before = m.params.clone();
        let cfg = TrainConfig {
            learning_rate: 0.0,
            batch_size: 8,
            max_epochs: 1,
            ..TrainConfig::default()
        };
        train_phase(&mut m, &data, &cfg, &CurriculumSpec::direct(), None).unwrap();
        assert_eq!(m.params, before);
    }

    #[test]
    fn empty_dataset_is_an_error() {
        let mut m = KnollingModel::<f32>::new(ModelConfig::mlp(), 3).unwrap();
        let err = train_phase(&mut m, &[], &TrainConfig::default(), &CurriculumSpec::direct(), None);
        assert!(matches!(err, Err(Error::EmptyDataset)));
    }

    #[test]
    fn curriculum_validation() {
        assert!(CurriculumSpec::pretrain().validate().is_ok());
        assert!(CurriculumSpec::finetune().validate().is_ok());
        let bad = CurriculumSpec {
            n_range: (2, 8),
            ..CurriculumSpec::pretrain()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn training_is_reproducible_and_logs_csv() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let data: Vec<_> = (0..40).map(|i| record(&mut rng, 2 + i % 4)).collect();
        let cfg = TrainConfig {
            learning_rate: 1e-3,
            batch_size: 8,
            max_epochs: 3,
            seed: 5,
            ..TrainConfig::default()
        };
        let run = || {
            let mut m = KnollingModel::<f32>::new(ModelConfig::transformer(), 4).unwrap();
            let mut log = Vec::new();
            let out = train_phase(&mut m, &data, &cfg, &CurriculumSpec::pretrain(), Some(&mut log)).unwrap();
            (m.params, out.history, String::from_utf8(log).unwrap())
        };
        let (pa, ha, la) = run();
        let (pb, hb, _) = run();
        assert_eq!(pa, pb);
        let strip = |h: &[EpochLog]| h.iter().map(|e| (e.train_nll, e.val_nll)).collect::<Vec<_>>();
        assert_eq!(strip(&ha), strip(&hb));
        let lines: Vec<&str> = la.lines().collect();
        assert_eq!(lines[0], EpochLog::CSV_HEADER);
        assert_eq!(lines.len(), 1 + ha.len());
        assert_eq!(lines[1].split(',').count(), 5);
    }

    #[test]
    fn memorized_dataset_rollout_matches_teacher_forcing() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let data: Vec<_> = (0..10).map(|_| record(&mut rng, 3)).collect();
        let mut m = KnollingModel::<f64>::new(
            ModelConfig {
                d_model: 16,
                num_heads: 2,
                feedforward_dim: 32,
                ..ModelConfig::transformer()
            },
            5,
        )
        .unwrap();
        let cfg = TrainConfig {
            learning_rate: 3e-3,
            batch_size: 10,
            max_epochs: 400,
            early_stop_patience: 400,
            validation_fraction: 0.0,
            seed: 1,
            ..TrainConfig::default()
        };
        train_phase(&mut m, &data, &cfg, &CurriculumSpec::direct(), None).unwrap();
        // Where the zero-temperature rollout reproduces the ground truth up to
        // slot t, its mixture at t equals the teacher-forced one.
        for rec in &data {
            let mem = m.forward_encoder(&[&rec.objects]).unwrap();
            let roll = m.predict_layout(&rec.objects, &SamplerConfig::deterministic()).unwrap();
            let teacher: Vec<Option<[f64; 2]>> = rec.targets.iter().copied().map(Some).collect();
            let rolled: Vec<Option<[f64; 2]>> = roll.iter().copied().map(Some).collect();
            for step in 0..rec.len() {
                let same_prefix = (0..step).all(|s| roll[s] == rec.targets[s]);
                let a = m.decode_step(&mem, &[teacher.clone()], step).unwrap();
                let b = m.decode_step(&mem, &[rolled.clone()], step).unwrap();
                if same_prefix {
                    assert_eq!(a, b);
                }
            }
            let err: f64 = roll
                .iter()
                .zip(&rec.targets)
                .map(|(p, t)| (p[0] - t[0]).abs() + (p[1] - t[1]).abs())
                .sum::<f64>()
                / (2.0 * rec.len() as f64);
            assert!(err < 0.01, "memorized rollout error {err}");
        }
    }

    #[test]
    fn schedule_warms_up_then_decays() {
        let cfg = TrainConfig {
            learning_rate: 1e-3,
            warmup_steps: 10,
            cosine_decay: true,
            ..TrainConfig::default()
        };
        assert_eq!(scheduled_lr(&cfg, 0, 0.0), 0.0);
        assert!((scheduled_lr(&cfg, 5, 0.0) - 5e-4).abs() < 1e-18);
        assert!((scheduled_lr(&cfg, 20, 0.5) - 5e-4).abs() < 1e-15);
        assert!(scheduled_lr(&cfg, 20, 1.0).abs() < 1e-18);
        let flat = TrainConfig::default();
        assert_eq!(scheduled_lr(&flat, 3, 0.7), flat.learning_rate);
    }

    #[test]
    fn clipping_rescales_jointly() {
        let mut g = vec![Some(Array2::from_elem((1, 1), 3.0f64)), None, Some(Array2::from_elem((1, 1), 4.0))];
        assert_eq!(clip_global_norm(&mut g, 10.0), 5.0);
        assert_eq!(g[0].as_ref().unwrap()[[0, 0]], 3.0);
        assert_eq!(clip_global_norm(&mut g, 1.0), 5.0);
        assert!((g[0].as_ref().unwrap()[[0, 0]] - 0.6).abs() < 1e-15);
        assert!((g[2].as_ref().unwrap()[[0, 0]] - 0.8).abs() < 1e-15);
        let mut bad = vec![Some(Array2::from_elem((1, 1), f64::NAN))];
        assert!(clip_global_norm(&mut bad, 1.0).is_nan());
    }

    #[test]
    fn non_positive_clip_rejected() {
        let data = vec![ScenarioRecord::new(vec![ObjectSpec::new(0.02, 0.02).unwrap(); 2], vec![[0.01, 0.01], [0.045, 0.01]])];
        let mut m = KnollingModel::<f64>::new(ModelConfig::mlp(), 0).unwrap();
        let cfg = TrainConfig {
            grad_clip: Some(0.0),
            ..TrainConfig::default()
        };
        assert!(matches!(
            train_phase(&mut m, &data, &cfg, &CurriculumSpec::direct(), None),
            Err(Error::Config(_))
        ));
    }
}
