//! Adversarial training loop: warm-up on reconstruction losses, then one
//! discriminator update followed by one generator update per batch.

mod checkpoint;

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{DataError, DyadSample, LandmarkFrame, Segment, FRAME_DIM};
use crate::kernel::{clip_global_norm, AdamState, Graph, KernelError, Tensor};
use crate::model::network::{self, BatchInputs};
use crate::model::{
    bind_discriminator, bind_generator, discriminator_loss, generator_loss, LossWeights, ModelConfig, ModelError,
    ModelParams,
};

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint, FORMAT_VERSION};

const SHUFFLE_SALT: u64 = 0x5f3c_9a1d_2e47_b806;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("non-finite {what} at epoch {epoch}, batch {batch}")]
    NonFinite { epoch: usize, batch: usize, what: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("checkpoint format version {found}, expected {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
}

/// Training hyperparameters. [`TrainConfig::default`] is the full-scale
/// setup; [`TrainConfig::desk`] fits a single CPU.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub warmup_epochs: usize,
    pub weights: LossWeights,
    pub model: ModelConfig,
    pub seed: u64,
    /// Global-norm gradient clip per parameter group; `0` disables it.
    pub clip_norm: f64,
    /// Write a checkpoint every this many epochs; `0` only at the end.
    pub checkpoint_every: usize,
    /// Use `-log D(fake)` for the generator's adversarial term.
    pub non_saturating: bool,
    pub deterministic: bool,
    pub data: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 1024,
            epochs: 1000,
            lr: 5e-4,
            warmup_epochs: 50,
            weights: LossWeights::default(),
            model: ModelConfig::default(),
            seed: 0,
            clip_norm: 5.0,
            checkpoint_every: 0,
            non_saturating: false,
            deterministic: false,
            data: None,
        }
    }
}

impl TrainConfig {
    pub fn desk() -> Self {
        Self {
            batch_size: 16,
            epochs: 500,
            warmup_epochs: 300,
            model: ModelConfig::uniform(32, 16),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let fail = |m: String| Err(TrainError::Config(m));
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1".into());
        }
        if self.warmup_epochs > self.epochs {
            return fail(format!("warmup_epochs {} exceeds epochs {}", self.warmup_epochs, self.epochs));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return fail(format!("lr must be positive, got {}", self.lr));
        }
        if !(self.clip_norm >= 0.0 && self.clip_norm.is_finite()) {
            return fail(format!("clip_norm must be non-negative, got {}", self.clip_norm));
        }
        let m = &self.model;
        let sizes = [m.encoder_hidden, m.generator_hidden, m.discriminator_hidden, m.context_dim];
        if sizes.contains(&0) || m.observed_len == 0 || m.horizon == 0 {
            return fail("model sizes must be positive".into());
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mse_face: f64,
    pub mse_body: f64,
    pub mse_hands: f64,
    /// `β` times the generator's adversarial term; zero during warm-up.
    pub adv_g: f64,
    pub loss_d: f64,
    pub d_real: f64,
    pub d_fake: f64,
    /// Wall-clock time of the epoch; always zero in deterministic mode.
    pub seconds: f64,
}

impl EpochRecord {
    pub fn weighted_mse(&self, w: &LossWeights) -> f64 {
        w.alpha1 * self.mse_face + w.alpha2 * self.mse_body + w.alpha3 * self.mse_hands
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
}

pub const HISTORY_HEADER: &str = "epoch,mse_face,mse_body,mse_hands,adv_g,loss_d,d_real,d_fake,seconds";

impl TrainHistory {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(HISTORY_HEADER);
        out.push('\n');
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                r.epoch, r.mse_face, r.mse_body, r.mse_hands, r.adv_g, r.loss_d, r.d_real, r.d_fake, r.seconds
            ));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), TrainError> {
        std::fs::write(path, self.to_csv()).map_err(|source| TrainError::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}

/// Adam states for the two parameter groups: encoder plus generators, and
/// the discriminator.
#[derive(Clone, Debug, PartialEq)]
pub struct Optimizers {
    pub generator: AdamState,
    pub discriminator: AdamState,
}

impl Optimizers {
    pub fn new(params: &ModelParams) -> Self {
        Self {
            generator: AdamState::new(params.generator.named().into_iter().map(|(_, t)| t.shape())),
            discriminator: AdamState::new(params.discriminator.named().into_iter().map(|(_, t)| t.shape())),
        }
    }
}

/// Losses of one batch, before its parameter updates.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepLosses {
    pub mse: [f64; 3],
    pub adv_g: f64,
    pub loss_d: f64,
    pub d_real: f64,
    pub d_fake: f64,
}

struct BatchData {
    inputs: BatchInputs,
    truth: [Tensor; 3],
    real: Tensor,
}

fn batch_data(batch: &[&DyadSample], cfg: &ModelConfig) -> Result<BatchData, TrainError> {
    let (n, h) = (cfg.observed_len, cfg.horizon);
    for s in batch {
        if s.target.len() < n + h {
            return Err(TrainError::Config(format!(
                "samples have {} frames, model needs {}",
                s.target.len(),
                n + h
            )));
        }
    }
    let t_obs: Vec<&[LandmarkFrame]> = batch.iter().map(|s| &s.target.frames()[..n]).collect();
    let p_obs: Vec<&[LandmarkFrame]> = batch.iter().map(|s| &s.partner.frames()[..n]).collect();
    let t_fut: Vec<&[LandmarkFrame]> = batch.iter().map(|s| &s.target.frames()[n..n + h]).collect();
    Ok(BatchData {
        inputs: BatchInputs::new(&t_obs, &p_obs)?,
        truth: [
            network::stack_time_major(&t_fut, Segment::Face.columns())?,
            network::stack_time_major(&t_fut, Segment::Body.columns())?,
            network::stack_time_major(&t_fut, Segment::Hands.columns())?,
        ],
        real: network::stack_time_major(&t_fut, 0..FRAME_DIM)?,
    })
}

fn mean_of(t: &Tensor) -> f64 {
    t.sum() / t.len() as f64
}

/// One batch: a discriminator update on real versus generated futures (after
/// warm-up only), then a generator update with the discriminator frozen.
pub fn train_step(
    batch: &[&DyadSample],
    params: &mut ModelParams,
    opt: &mut Optimizers,
    epoch: usize,
    config: &TrainConfig,
) -> Result<StepLosses, TrainError> {
    train_step_at(batch, params, opt, epoch, 0, config)
}

fn train_step_at(
    batch: &[&DyadSample],
    params: &mut ModelParams,
    opt: &mut Optimizers,
    epoch: usize,
    batch_index: usize,
    config: &TrainConfig,
) -> Result<StepLosses, TrainError> {
    if batch.is_empty() {
        return Err(TrainError::Config("empty batch".into()));
    }
    let non_finite = |what: &str| TrainError::NonFinite {
        epoch,
        batch: batch_index,
        what: what.to_string(),
    };
    let grad_error = |e: KernelError| match e {
        KernelError::NonFiniteGradient(name) => non_finite(&format!("gradient for `{name}`")),
        other => TrainError::Kernel(other),
    };
    let data = batch_data(batch, &params.config)?;
    let horizon = params.config.horizon;
    let adversarial = epoch >= config.warmup_epochs;
    let mut losses = StepLosses::default();

    let mut g = Graph::new();
    let gen = bind_generator(&mut g, &params.generator, true);
    let out = network::forecast_graph(&mut g, &gen, &data.inputs, horizon)?;
    let merged = network::merge_steps(&mut g, &out)?;
    if !g.value(merged).is_finite() {
        return Err(non_finite("generator output"));
    }

    if adversarial {
        let mut gd = Graph::new();
        let disc = bind_discriminator(&mut gd, &params.discriminator, true);
        let real = gd.constant(data.real.clone());
        let fake = gd.constant(g.value(merged).clone());
        let d_real = network::discriminate_graph(&mut gd, &disc, real, horizon)?;
        let d_fake = network::discriminate_graph(&mut gd, &disc, fake, horizon)?;
        let loss = discriminator_loss(&mut gd, d_real, d_fake).map_err(|e| match e {
            ModelError::Contract(_) => non_finite("discriminator output"),
            other => other.into(),
        })?;
        losses.loss_d = gd.value(loss).data()[0];
        losses.d_real = mean_of(gd.value(d_real));
        losses.d_fake = mean_of(gd.value(d_fake));
        if !losses.loss_d.is_finite() {
            return Err(non_finite("discriminator loss"));
        }
        let mut grads = gd.backward(loss)?;
        let mut gs: Vec<Tensor> = disc.named().into_iter().map(|(_, v)| grads.take(*v)).collect();
        clip_global_norm(&mut gs, config.clip_norm);
        let mut named = params.discriminator.named_mut();
        opt.discriminator.step(&mut named, &gs, config.lr).map_err(grad_error)?;
    }

    let d_fake = if adversarial {
        let disc = bind_discriminator(&mut g, &params.discriminator, false);
        Some(network::discriminate_graph(&mut g, &disc, merged, horizon)?)
    } else {
        None
    };
    let truth = data.truth.map(|t| g.constant(t));
    let loss = generator_loss(
        &mut g,
        &out,
        &truth,
        d_fake,
        &config.weights,
        adversarial,
        config.non_saturating,
    )
    .map_err(|e| match e {
        ModelError::Contract(_) => non_finite("discriminator output"),
        other => other.into(),
    })?;
    for (m, v) in losses.mse.iter_mut().zip(loss.mse) {
        *m = g.value(v).data()[0];
    }
    losses.adv_g = loss.adversarial.map_or(0.0, |a| g.value(a).data()[0]);
    if !g.value(loss.total).data()[0].is_finite() {
        return Err(non_finite("generator loss"));
    }
    let mut grads = g.backward(loss.total)?;
    let mut gs: Vec<Tensor> = gen.named().into_iter().map(|(_, v)| grads.take(*v)).collect();
    clip_global_norm(&mut gs, config.clip_norm);
    let mut named = params.generator.named_mut();
    opt.generator.step(&mut named, &gs, config.lr).map_err(grad_error)?;
    Ok(losses)
}

/// Where and how often [`TrainState::train`] reports progress.
#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub checkpoint: Option<PathBuf>,
    pub history: Option<PathBuf>,
    pub progress: bool,
}

/// Everything needed to continue training: config, parameters, optimizer
/// moments and the history so far.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub config: TrainConfig,
    pub params: ModelParams,
    pub optimizers: Optimizers,
    pub history: TrainHistory,
}

impl TrainState {
    pub fn new(config: TrainConfig) -> Result<Self, TrainError> {
        config.validate()?;
        let params = ModelParams::init(config.model, config.seed);
        Ok(Self {
            optimizers: Optimizers::new(&params),
            params,
            history: TrainHistory::default(),
            config,
        })
    }

    pub fn epoch(&self) -> usize {
        self.history.len()
    }

    fn check_dataset(dataset: &[DyadSample]) -> Result<(), TrainError> {
        if dataset.is_empty() {
            return Err(TrainError::Config("empty dataset".into()));
        }
        if !dataset.iter().all(DyadSample::is_normalized) {
            return Err(TrainError::Config("training samples must be normalized".into()));
        }
        Ok(())
    }

    /// Sample order for `epoch`; independent of any earlier epoch.
    pub fn shuffled(&self, n: usize, epoch: usize) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed ^ SHUFFLE_SALT);
        rng.set_stream(epoch as u64);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        order
    }

    /// Runs the next epoch and appends its record.
    pub fn run_epoch(&mut self, dataset: &[DyadSample]) -> Result<EpochRecord, TrainError> {
        Self::check_dataset(dataset)?;
        let epoch = self.epoch();
        let started = Instant::now();
        let order = self.shuffled(dataset.len(), epoch);
        let mut sum = StepLosses::default();
        for (b, chunk) in order.chunks(self.config.batch_size).enumerate() {
            let batch: Vec<&DyadSample> = chunk.iter().map(|&i| &dataset[i]).collect();
            let s = train_step_at(&batch, &mut self.params, &mut self.optimizers, epoch, b, &self.config)?;
            let w = batch.len() as f64;
            for k in 0..3 {
                sum.mse[k] += w * s.mse[k];
            }
            sum.adv_g += w * s.adv_g;
            sum.loss_d += w * s.loss_d;
            sum.d_real += w * s.d_real;
            sum.d_fake += w * s.d_fake;
        }
        let n = dataset.len() as f64;
        let record = EpochRecord {
            epoch,
            mse_face: sum.mse[0] / n,
            mse_body: sum.mse[1] / n,
            mse_hands: sum.mse[2] / n,
            adv_g: sum.adv_g / n,
            loss_d: sum.loss_d / n,
            d_real: sum.d_real / n,
            d_fake: sum.d_fake / n,
            seconds: if self.config.deterministic {
                0.0
            } else {
                started.elapsed().as_secs_f64()
            },
        };
        self.history.records.push(record);
        Ok(record)
    }

    /// Trains until `config.epochs` epochs are complete, writing checkpoints
    /// and the history as configured. A failed epoch leaves the last
    /// checkpoint on disk untouched.
    pub fn train(&mut self, dataset: &[DyadSample], opts: &RunOptions) -> Result<(), TrainError> {
        Self::check_dataset(dataset)?;
        while self.epoch() < self.config.epochs {
            let r = self.run_epoch(dataset)?;
            if opts.progress {
                eprintln!(
                    "epoch {:>4}  mse face {:.5} body {:.5} hands {:.5}  adv_g {:.4}  loss_d {:.4}  {:.2}s",
                    r.epoch, r.mse_face, r.mse_body, r.mse_hands, r.adv_g, r.loss_d, r.seconds
                );
            }
            let done = self.epoch();
            let every = self.config.checkpoint_every;
            if every > 0 && done.is_multiple_of(every) && done < self.config.epochs {
                self.persist(opts)?;
            }
        }
        self.persist(opts)
    }

    fn persist(&self, opts: &RunOptions) -> Result<(), TrainError> {
        if let Some(path) = &opts.checkpoint {
            save_checkpoint(&self.checkpoint(), path)?;
        }
        if let Some(path) = &opts.history {
            self.history.write_csv(path)?;
        }
        Ok(())
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.config.clone(),
            params: self.params.clone(),
            optimizers: self.optimizers.clone(),
            history: self.history.clone(),
        }
    }

    pub fn from_checkpoint(c: Checkpoint) -> Self {
        Self {
            config: c.config,
            params: c.params,
            optimizers: c.optimizers,
            history: c.history,
        }
    }
}

/// Trains a fresh model on normalized samples.
pub fn train(config: TrainConfig, dataset: &[DyadSample]) -> Result<(ModelParams, TrainHistory), TrainError> {
    let mut state = TrainState::new(config)?;
    state.train(dataset, &RunOptions::default())?;
    Ok((state.params, state.history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_dyads;
    use crate::data::{normalize_dataset, StatsWindow};

    pub(super) fn toy_config() -> TrainConfig {
        TrainConfig {
            batch_size: 3,
            epochs: 4,
            warmup_epochs: 2,
            lr: 1e-3,
            model: ModelConfig {
                observed_len: 6,
                horizon: 3,
                ..ModelConfig::uniform(4, 3)
            },
            seed: 11,
            deterministic: true,
            ..TrainConfig::default()
        }
    }

    pub(super) fn toy_data(n: usize) -> Vec<DyadSample> {
        normalize_dataset(&synth_dyads(3, n, 0.8), StatsWindow::Full).unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig::desk().validate().is_ok());
        for bad in [
            TrainConfig { batch_size: 0, ..toy_config() },
            TrainConfig { warmup_epochs: 9, ..toy_config() },
            TrainConfig { lr: 0.0, ..toy_config() },
            TrainConfig { lr: f64::NAN, ..toy_config() },
        ] {
            assert!(matches!(TrainState::new(bad), Err(TrainError::Config(_))));
        }
    }

    #[test]
    fn zero_epochs_returns_initial_params() {
        let cfg = TrainConfig { epochs: 0, warmup_epochs: 0, ..toy_config() };
        let (params, history) = train(cfg.clone(), &toy_data(2)).unwrap();
        assert_eq!(params, ModelParams::init(cfg.model, cfg.seed));
        assert!(history.is_empty());
    }

    #[test]
    fn rejects_unnormalized_or_empty_data() {
        assert!(train(toy_config(), &[]).is_err());
        assert!(train(toy_config(), &synth_dyads(1, 2, 0.5)).is_err());
    }

    #[test]
    fn warmup_leaves_discriminator_untouched() {
        let cfg = toy_config();
        let data = toy_data(4);
        let mut state = TrainState::new(cfg.clone()).unwrap();
        let init = state.params.clone();
        for _ in 0..2 {
            let r = state.run_epoch(&data).unwrap();
            assert_eq!(r.adv_g, 0.0);
            assert_eq!(r.loss_d, 0.0);
        }
        assert_eq!(state.params.discriminator, init.discriminator);
        assert_ne!(state.params.generator, init.generator);
        assert_eq!(state.optimizers.discriminator.step, 0);

        let before = state.params.clone();
        let r = state.run_epoch(&data).unwrap();
        assert!(r.adv_g != 0.0 && r.loss_d > 0.0);
        assert_ne!(state.params.discriminator, before.discriminator);
        assert_ne!(state.params.generator, before.generator);
    }

    #[test]
    fn last_partial_batch_is_kept() {
        let cfg = TrainConfig { epochs: 1, warmup_epochs: 1, ..toy_config() };
        let mut state = TrainState::new(cfg).unwrap();
        state.run_epoch(&toy_data(4)).unwrap();
        assert_eq!(state.optimizers.generator.step, 2);
    }

    #[test]
    fn shuffle_depends_on_epoch_and_seed() {
        let state = TrainState::new(toy_config()).unwrap();
        let a = state.shuffled(20, 0);
        assert_eq!(a, state.shuffled(20, 0));
        assert_ne!(a, state.shuffled(20, 1));
        let mut sorted = a.clone();
        sorted.sort();
        assert_eq!(sorted, (0..20).collect::<Vec<_>>());
    }

    #[test]
    fn identical_runs_are_bitwise_equal() {
        let data = toy_data(4);
        let a = train(toy_config(), &data).unwrap();
        let b = train(toy_config(), &data).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.1.to_csv(), b.1.to_csv());
        assert_eq!(a.1.len(), 4);
    }

    #[test]
    fn history_csv_layout() {
        let h = TrainHistory {
            records: vec![EpochRecord {
                epoch: 3,
                mse_face: 0.5,
                ..Default::default()
            }],
        };
        let csv = h.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some(HISTORY_HEADER));
        assert_eq!(lines.next(), Some("3,0.5,0,0,0,0,0,0,0"));
    }

    #[test]
    fn diverging_run_names_epoch_and_batch() {
        let mut state = TrainState::new(toy_config()).unwrap();
        state.params.generator.body.output.bias.data_mut().fill(1e200);
        let before = state.params.clone();
        let err = state.run_epoch(&toy_data(4)).unwrap_err();
        assert!(matches!(err, TrainError::NonFinite { epoch: 0, batch: 0, .. }), "{err}");
        assert_eq!(state.params, before);
        assert!(state.history.is_empty());
    }
}
