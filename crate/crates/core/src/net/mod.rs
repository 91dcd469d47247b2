//! The knolling model and its equal-budget baselines.
//!
//! All three architectures read the same per-slot inputs (sinusoidally lifted
//! object sizes) and emit one Gaussian-mixture head row per slot. Positions are
//! handled in workspace-normalized units internally and in meters at the API.

mod baselines;
mod file;
mod transformer;

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Uniform;

use crate::autograd::{GmmTargets, Tape, Var};
use crate::encode::{lift_into, LiftConfig};
use crate::error::{Error, Result};
use crate::geom::{ObjectSpec, ScenarioRecord, MAX_OBJECTS, MAX_OBJECT_SIZE, WORKSPACE_SIZE};
use crate::gmm::{gmm_sample, GmmParams, SamplerConfig, NUM_MIXTURES};
use crate::scalar::Real;

pub use file::{load_model, save_model, MODEL_MAGIC, MODEL_VERSION};

/// Positions are divided by this before entering the network.
pub const POSITION_SCALE: f64 = WORKSPACE_SIZE;
/// Object sizes are divided by this before the feature lift.
pub const SIZE_SCALE: f64 = MAX_OBJECT_SIZE;

/// Parameter budgets the architectures are sized against.
pub const TRANSFORMER_BUDGET: usize = 87_458;
pub const LSTM_BUDGET: usize = 86_858;
pub const MLP_BUDGET: usize = 87_788;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelKind {
    Transformer,
    Lstm,
    Mlp,
}

impl ModelKind {
    pub fn budget(self) -> usize {
        match self {
            ModelKind::Transformer => TRANSFORMER_BUDGET,
            ModelKind::Lstm => LSTM_BUDGET,
            ModelKind::Mlp => MLP_BUDGET,
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            ModelKind::Transformer => 0,
            ModelKind::Lstm => 1,
            ModelKind::Mlp => 2,
        }
    }

    pub(crate) fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(ModelKind::Transformer),
            1 => Some(ModelKind::Lstm),
            2 => Some(ModelKind::Mlp),
            _ => None,
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Transformer => "transformer",
            ModelKind::Lstm => "lstm",
            ModelKind::Mlp => "mlp",
        })
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "transformer" | "om" => Ok(ModelKind::Transformer),
            "lstm" => Ok(ModelKind::Lstm),
            "mlp" => Ok(ModelKind::Mlp),
            other => Err(Error::Config(format!("unknown model kind `{other}`"))),
        }
    }
}

/// Architecture hyperparameters.
///
/// For the baselines `d_model` is the hidden width and `num_encoder_layers`
/// the number of recurrent (LSTM) or hidden (MLP) layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub d_model: usize,
    pub num_heads: usize,
    pub num_encoder_layers: usize,
    pub num_decoder_layers: usize,
    pub feedforward_dim: usize,
    pub num_mixtures: usize,
    pub max_objects: usize,
}

impl ModelConfig {
    /// 64-wide, 4 heads, one encoder and one decoder layer; the feed-forward
    /// width lands the parameter count on the transformer budget.
    pub fn transformer() -> Self {
        Self {
            kind: ModelKind::Transformer,
            d_model: 64,
            num_heads: 4,
            num_encoder_layers: 1,
            num_decoder_layers: 1,
            feedforward_dim: 112,
            num_mixtures: NUM_MIXTURES,
            max_objects: MAX_OBJECTS,
        }
    }

    /// Two stacked LSTM layers of width 80.
    pub fn lstm() -> Self {
        Self {
            kind: ModelKind::Lstm,
            d_model: 80,
            num_heads: 0,
            num_encoder_layers: 2,
            num_decoder_layers: 0,
            feedforward_dim: 0,
            num_mixtures: NUM_MIXTURES,
            max_objects: MAX_OBJECTS,
        }
    }

    /// Two hidden layers of width 140 over all ten zero-padded slots.
    pub fn mlp() -> Self {
        Self {
            kind: ModelKind::Mlp,
            d_model: 140,
            num_heads: 0,
            num_encoder_layers: 2,
            num_decoder_layers: 0,
            feedforward_dim: 0,
            num_mixtures: NUM_MIXTURES,
            max_objects: MAX_OBJECTS,
        }
    }

    pub fn for_kind(kind: ModelKind) -> Self {
        match kind {
            ModelKind::Transformer => Self::transformer(),
            ModelKind::Lstm => Self::lstm(),
            ModelKind::Mlp => Self::mlp(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.num_mixtures == 0 || self.max_objects == 0 {
            return Err(Error::Config("dimensions must be positive".into()));
        }
        if self.max_objects > MAX_OBJECTS {
            return Err(Error::Config(format!("max_objects above {MAX_OBJECTS}")));
        }
        if self.kind == ModelKind::Transformer
            && (self.num_heads == 0 || self.d_model % self.num_heads != 0)
        {
            return Err(Error::Config(format!(
                "d_model {} not divisible by {} heads",
                self.d_model, self.num_heads
            )));
        }
        Ok(())
    }

    pub(crate) fn head_width(&self) -> usize {
        5 * self.num_mixtures
    }
}

/// Named trainable tensors in declaration order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T> {
    pub names: Vec<String>,
    pub values: Vec<Array2<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Total trainable scalars.
    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(Array2::len).sum()
    }

    pub(crate) fn push(&mut self, name: impl Into<String>, value: Array2<T>) -> usize {
        self.names.push(name.into());
        self.values.push(value);
        self.values.len() - 1
    }
}

impl<T: Real> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Deterministic initializer used while laying out an architecture.
pub(crate) struct Init<T> {
    pub store: ParamStore<T>,
    rng: ChaCha8Rng,
}

impl<T: Real> Init<T> {
    pub fn new(seed: u64) -> Self {
        Self {
            store: ParamStore::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    fn uniform(&mut self, name: String, rows: usize, cols: usize, bound: f64) -> usize {
        let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
        let v = Array2::from_shape_fn((rows, cols), |_| T::lit(self.rng.sample(dist)));
        self.store.push(name, v)
    }

    /// Glorot-uniform matrix scaled by `gain`.
    pub fn weight(&mut self, name: impl Into<String>, fan_in: usize, fan_out: usize, gain: f64) -> usize {
        let bound = gain * (6.0 / (fan_in + fan_out) as f64).sqrt();
        self.uniform(name.into(), fan_in, fan_out, bound)
    }

    pub fn small(&mut self, name: impl Into<String>, rows: usize, cols: usize, bound: f64) -> usize {
        self.uniform(name.into(), rows, cols, bound)
    }

    pub fn fill(&mut self, name: impl Into<String>, cols: usize, value: f64) -> usize {
        self.store.push(name, Array2::from_elem((1, cols), T::lit(value)))
    }
}

/// Padded, normalized inputs for one forward pass over `batch` scenarios.
#[derive(Debug, Clone)]
pub struct Batch<T> {
    pub batch: usize,
    pub len: usize,
    /// Visible objects per scenario; slots at or past this are padding.
    pub counts: Vec<usize>,
    /// `batch * len` normalized `(width, length)`, zero on padding.
    pub sizes: Vec<[T; 2]>,
    /// `batch * len` normalized positions already known to the decoder.
    pub placed: Vec<Option<[T; 2]>>,
    /// `batch * len` normalized targets, zero when unknown.
    pub targets: Vec<[T; 2]>,
    /// `batch * len` loss weights.
    pub score: Vec<T>,
}

impl<T: Real> Batch<T> {
    fn empty(counts: Vec<usize>) -> Result<Self> {
        for &n in &counts {
            if n == 0 || n > MAX_OBJECTS {
                return Err(Error::ObjectCount { n, max: MAX_OBJECTS });
            }
        }
        let len = counts.iter().copied().max().unwrap_or(0);
        let rows = counts.len() * len;
        Ok(Self {
            batch: counts.len(),
            len,
            counts,
            sizes: vec![[T::zero(); 2]; rows],
            placed: vec![None; rows],
            targets: vec![[T::zero(); 2]; rows],
            score: vec![T::zero(); rows],
        })
    }

    /// Object sizes only; nothing placed.
    pub fn inference(objects: &[&[ObjectSpec<f64>]]) -> Result<Self> {
        let mut b = Self::empty(objects.iter().map(|o| o.len()).collect())?;
        for (i, objs) in objects.iter().enumerate() {
            for (t, o) in objs.iter().enumerate() {
                b.sizes[i * b.len + t] = [T::lit(o.width / SIZE_SCALE), T::lit(o.length / SIZE_SCALE)];
            }
        }
        Ok(b)
    }

    /// Teacher-forced batch: every target is visible to the decoder and slots
    /// `score_from[i]..n_i` carry loss weight one.
    pub fn teacher(records: &[&ScenarioRecord<f64>], score_from: &[usize]) -> Result<Self> {
        let objects: Vec<&[ObjectSpec<f64>]> = records.iter().map(|r| r.objects.as_slice()).collect();
        let mut b = Self::inference(&objects)?;
        for (i, r) in records.iter().enumerate() {
            if r.targets.len() != r.objects.len() {
                return Err(Error::LengthMismatch {
                    left: r.objects.len(),
                    right: r.targets.len(),
                });
            }
            for (t, p) in r.targets.iter().enumerate() {
                let q = [T::lit(p[0] / POSITION_SCALE), T::lit(p[1] / POSITION_SCALE)];
                b.placed[i * b.len + t] = Some(q);
                b.targets[i * b.len + t] = q;
                if t >= score_from[i] {
                    b.score[i * b.len + t] = T::one();
                }
            }
        }
        Ok(b)
    }

    pub fn rows(&self) -> usize {
        self.batch * self.len
    }

    pub(crate) fn valid(&self, row: usize) -> bool {
        row % self.len < self.counts[row / self.len]
    }

    /// Lifted size features `[rows, 22]`, zero rows on padding.
    pub(crate) fn size_features(&self, lift: &LiftConfig) -> Array2<T> {
        let dim = lift.output_dim(2);
        let mut out = Array2::zeros((self.rows(), dim));
        let mut buf = Vec::with_capacity(dim);
        for r in 0..self.rows() {
            if !self.valid(r) {
                continue;
            }
            buf.clear();
            lift_into(&self.sizes[r], lift, &mut buf).expect("finite sizes");
            out.row_mut(r).assign(&ndarray::ArrayView1::from(&buf));
        }
        out
    }

    pub(crate) fn gmm_targets(&self, components: usize) -> GmmTargets<T> {
        GmmTargets {
            components,
            targets: self.targets.clone(),
            weights: self.score.clone(),
        }
    }
}

/// Encoder output kept between autoregressive decode steps.
#[derive(Debug, Clone)]
pub struct Memory<T> {
    pub value: Array2<T>,
    pub batch: Batch<T>,
}

#[derive(Debug, Clone)]
pub(crate) enum Arch {
    Transformer(transformer::TransformerIds),
    Lstm(baselines::LstmIds),
    Mlp(baselines::MlpIds),
}

/// A trainable model of any of the three kinds.
#[derive(Debug, Clone)]
pub struct KnollingModel<T> {
    pub config: ModelConfig,
    pub params: ParamStore<T>,
    pub(crate) arch: Arch,
    pub(crate) lift: LiftConfig,
}

impl<T: Real> KnollingModel<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let lift = LiftConfig::default();
        let mut init = Init::new(seed);
        let arch = match config.kind {
            ModelKind::Transformer => Arch::Transformer(transformer::build(&config, &lift, &mut init)),
            ModelKind::Lstm => Arch::Lstm(baselines::build_lstm(&config, &lift, &mut init)),
            ModelKind::Mlp => Arch::Mlp(baselines::build_mlp(&config, &lift, &mut init)),
        };
        Ok(Self {
            config,
            params: init.store,
            arch,
            lift,
        })
    }

    pub fn kind(&self) -> ModelKind {
        self.config.kind
    }

    /// Exact trainable scalar count.
    pub fn count_params(&self) -> usize {
        self.params.scalar_count()
    }

    /// Binds every parameter onto `tape`, trainable or frozen.
    pub fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> Vec<Var> {
        self.params
            .values
            .iter()
            .enumerate()
            .map(|(i, v)| {
                if trainable {
                    tape.param(i, v.clone())
                } else {
                    tape.constant(v.clone())
                }
            })
            .collect()
    }

    /// Raw head rows `[batch * len, 5K]`, row `b * len + t` scoring slot `t`
    /// of scenario `b`. The transformer conditions slot `t` on `placed`
    /// entries of earlier slots; the baselines ignore `placed`.
    pub fn head_rows(&self, tape: &mut Tape<T>, p: &[Var], batch: &Batch<T>) -> Var {
        match &self.arch {
            Arch::Transformer(ids) => {
                let memory = transformer::encode(ids, &self.config, &self.lift, tape, p, batch);
                transformer::decode(ids, &self.config, &self.lift, tape, p, memory, batch)
            }
            Arch::Lstm(ids) => baselines::lstm_forward(ids, &self.config, &self.lift, tape, p, batch),
            Arch::Mlp(ids) => baselines::mlp_forward(ids, &self.config, &self.lift, tape, p, batch),
        }
    }

    /// Teacher-forced mean mixture NLL over the scored slots of `batch`.
    pub fn loss(&self, tape: &mut Tape<T>, p: &[Var], batch: &Batch<T>) -> Var {
        let raw = self.head_rows(tape, p, batch);
        let data = std::rc::Rc::new(batch.gmm_targets(self.config.num_mixtures));
        tape.gmm_nll(raw, data)
    }

    fn check_counts(&self, objects: &[&[ObjectSpec<f64>]]) -> Result<()> {
        for o in objects {
            if o.is_empty() || o.len() > self.config.max_objects {
                return Err(Error::ObjectCount {
                    n: o.len(),
                    max: self.config.max_objects,
                });
            }
        }
        Ok(())
    }

    /// Runs the encoder once. Baselines return their inputs unchanged.
    pub fn forward_encoder(&self, objects: &[&[ObjectSpec<f64>]]) -> Result<Memory<T>> {
        self.check_counts(objects)?;
        let batch = Batch::inference(objects)?;
        let value = match &self.arch {
            Arch::Transformer(ids) => {
                let mut tape = Tape::new();
                let p = self.bind(&mut tape, false);
                let m = transformer::encode(ids, &self.config, &self.lift, &mut tape, &p, &batch);
                tape.value(m).clone()
            }
            _ => Array2::zeros((0, 0)),
        };
        Ok(Memory { value, batch })
    }

    /// Mixture for slot `step` of every scenario in `memory` (meters).
    ///
    /// `placed[b][s]` supplies the position of slot `s < step`; later entries
    /// are treated as masked regardless of content.
    pub fn decode_step(
        &self,
        memory: &Memory<T>,
        placed: &[Vec<Option<[f64; 2]>>],
        step: usize,
    ) -> Result<Vec<GmmParams<T>>> {
        let mut batch = memory.batch.clone();
        if step >= batch.len {
            return Err(Error::StepOutOfRange { step, n: batch.len });
        }
        for (b, row) in placed.iter().enumerate() {
            for t in 0..batch.len {
                batch.placed[b * batch.len + t] = if t < step {
                    row.get(t)
                        .copied()
                        .flatten()
                        .map(|p| [T::lit(p[0] / POSITION_SCALE), T::lit(p[1] / POSITION_SCALE)])
                } else {
                    None
                };
            }
        }
        let mut tape = Tape::new();
        let p = self.bind(&mut tape, false);
        let raw = match &self.arch {
            Arch::Transformer(ids) => {
                let m = tape.constant(memory.value.clone());
                transformer::decode(ids, &self.config, &self.lift, &mut tape, &p, m, &batch)
            }
            _ => self.head_rows(&mut tape, &p, &batch),
        };
        let rows = tape.value(raw);
        let k = self.config.num_mixtures;
        Ok((0..batch.batch)
            .map(|b| {
                let row = rows.row(b * batch.len + step).to_vec();
                GmmParams::from_raw(&row, k, T::lit(POSITION_SCALE))
            })
            .collect())
    }

    /// Autoregressive prediction for a single scenario.
    pub fn predict_layout(&self, objects: &[ObjectSpec<f64>], sampler: &SamplerConfig) -> Result<Vec<[f64; 2]>> {
        Ok(self.predict_batch(&[objects], sampler)?.remove(0))
    }

    /// Target centers (meters) for each scenario. The transformer decodes one
    /// slot at a time, feeding every sampled position back in; the baselines
    /// read all slots from a single pass.
    pub fn predict_batch(
        &self,
        objects: &[&[ObjectSpec<f64>]],
        sampler: &SamplerConfig,
    ) -> Result<Vec<Vec<[f64; 2]>>> {
        let memory = self.forward_encoder(objects)?;
        let len = memory.batch.len;
        let mut rng = ChaCha8Rng::seed_from_u64(sampler.seed);
        let mut placed: Vec<Vec<Option<[f64; 2]>>> = objects.iter().map(|o| vec![None; o.len()]).collect();
        match self.arch {
            Arch::Transformer(_) => {
                for step in 0..len {
                    let mixtures = self.decode_step(&memory, &placed, step)?;
                    for (b, g) in mixtures.iter().enumerate() {
                        if step < objects[b].len() {
                            let s = gmm_sample(g, sampler.temperature, &mut rng);
                            placed[b][step] = Some([s[0].as_f64(), s[1].as_f64()]);
                        }
                    }
                }
            }
            _ => {
                let mut tape = Tape::new();
                let p = self.bind(&mut tape, false);
                let raw = self.head_rows(&mut tape, &p, &memory.batch);
                let rows = tape.value(raw);
                for step in 0..len {
                    for b in 0..objects.len() {
                        if step < objects[b].len() {
                            let row = rows.row(b * len + step).to_vec();
                            let g = GmmParams::from_raw(&row, self.config.num_mixtures, T::lit(POSITION_SCALE));
                            let s = gmm_sample(&g, sampler.temperature, &mut rng);
                            placed[b][step] = Some([s[0].as_f64(), s[1].as_f64()]);
                        }
                    }
                }
            }
        }
        Ok(placed
            .into_iter()
            .map(|row| row.into_iter().map(|p| p.expect("every slot decoded")).collect())
            .collect())
    }

    /// Fixed-size baseline output: the MLP's twenty coordinates (meters) at
    /// temperature zero, zero past the visible objects.
    pub fn mlp_coordinates(&self, objects: &[ObjectSpec<f64>]) -> Result<Vec<f64>> {
        if self.kind() != ModelKind::Mlp {
            return Err(Error::Config("mlp_coordinates requires an MLP model".into()));
        }
        let pred = self.predict_layout(objects, &SamplerConfig::deterministic())?;
        let mut out = vec![0.0; 2 * self.config.max_objects];
        for (i, p) in pred.iter().enumerate() {
            out[2 * i] = p[0];
            out[2 * i + 1] = p[1];
        }
        Ok(out)
    }

    /// Converts parameters to another scalar type.
    pub fn cast<U: Real>(&self) -> KnollingModel<U> {
        KnollingModel {
            config: self.config,
            params: ParamStore {
                names: self.params.names.clone(),
                values: self.params.values.iter().map(|v| v.mapv(|x| U::lit(x.as_f64()))).collect(),
            },
            arch: self.arch.clone(),
            lift: self.lift,
        }
    }
}

/// Row-major `[rows, cols]` constant where row `b * len + t` holds the
/// index encoding of slot `t`.
pub(crate) fn slot_encodings<T: Real>(batch: usize, len: usize, d: usize) -> Array2<T> {
    let enc: Vec<Vec<T>> = (0..len)
        .map(|t| crate::encode::index_encoding_unchecked(t, d))
        .collect();
    Array2::from_shape_fn((batch * len, d), |(r, c)| enc[r % len][c])
}

#[cfg(test)]
mod tests;
