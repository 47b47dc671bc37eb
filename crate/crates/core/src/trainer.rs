//! Sample-at-a-time training loop.
//!
//! Step `s` trains on pack `s mod len`. Every step draws a negative batch for
//! the pack's ground-truth candidate, runs the forward pass on a fresh tape,
//! backpropagates the matching loss and applies one Adam update.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::{Checkpoint, RngState};
use crate::config::{MiningStrategy, RunConfig};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::mining::{build_negative_batch, delaunay_adjacency, hard_negative_set, mask_centroid};
use crate::model::{forward_on_tape, ForwardSettings, Model, ModelDims, ModelParams};
use crate::optim::{adam_step, AdamConfig, AdamOutcome, AdamState};
use crate::pack::FeaturePack;
use crate::tape::Tape;
use crate::tensor::Tensor;

/// Stream of the parameter-initialization generator.
const INIT_STREAM: u64 = 0;
/// Stream of the negative-mining generator.
const MINING_STREAM: u64 = 1;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord {
    /// Number of steps completed, counting this one.
    pub step: u64,
    pub loss: f64,
    /// Whether the positive scored highest in its batch.
    pub top1: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub enum StepOutcome {
    Trained(StepRecord),
    /// The sample could not be used (no ground truth, empty masks, too few
    /// candidates).
    Skipped(String),
    /// The update was dropped because a gradient was not finite.
    NonFinite(StepRecord),
}

/// Loss and parameter gradients for one pack.
#[derive(Clone, Debug)]
pub struct SampleGradients {
    pub loss: f64,
    pub sims: Vec<f64>,
    /// In [`crate::model::PARAM_NAMES`] order.
    pub grads: Vec<Tensor>,
    /// Candidate positions of the batch; the positive comes first.
    pub positions: Vec<usize>,
}

/// Forward and backward pass for one pack, or `Ok(None)` with a reason when
/// the sample must be skipped.
pub fn sample_gradients(
    params: &ModelParams,
    config: &RunConfig,
    pack: &FeaturePack,
    rng: &mut ChaCha8Rng,
) -> Result<std::result::Result<SampleGradients, String>> {
    let gt = match (pack.visible, pack.gt_index) {
        (true, Some(gt)) => gt,
        _ => return Ok(Err("pack has no visible ground truth".into())),
    };
    let settings = ForwardSettings::from_config(config);
    let model_d = params.attention.dim();
    if pack.dim() != model_d {
        return Err(Error::Dimension(format!(
            "pack features have d={}, model expects {model_d}",
            pack.dim()
        )));
    }
    let model = Model::new(params.clone(), settings);
    let sample = match model.encode(pack) {
        Ok(s) => s,
        Err(Error::EmptyMask) => return Ok(Err("source mask is empty".into())),
        Err(e) => return Err(e),
    };
    let Some(pos) = sample.position_of(gt) else {
        return Ok(Err("ground-truth candidate is empty".into()));
    };
    let hard = match config.mining.strategy {
        MiningStrategy::Adjacent => {
            let centroids = sample
                .kept
                .iter()
                .map(|&k| mask_centroid(&pack.candidates[k]))
                .collect::<Result<Vec<_>>>()?;
            hard_negative_set(&delaunay_adjacency(&centroids), pos)?
        }
        MiningStrategy::Random => Default::default(),
    };
    let batch = match build_negative_batch(
        sample.candidates.len(),
        pos,
        &hard,
        config.mining.batch_size,
        rng,
    ) {
        Ok(b) => b,
        Err(Error::NoNegatives(msg)) => return Ok(Err(msg)),
        Err(e) => return Err(e),
    };
    let mut positions = vec![batch.positive_index];
    positions.extend(&batch.negative_indices);

    let mut tape = Tape::new();
    let vars = params.record(&mut tape);
    let fwd = forward_on_tape(&mut tape, &vars, pack, &sample, &positions, settings.ln_eps)?;
    let loss = tape.info_nce(fwd.sims, 0, config.loss.temperature)?;
    let mut grads = tape.backward(loss)?;
    let grads = vars
        .all()
        .iter()
        .zip(params.tensors())
        .map(|(&v, t)| grads.take(v).unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();
    Ok(Ok(SampleGradients {
        loss: tape.value(loss).data()[0],
        sims: tape.value(fwd.sims).data().to_vec(),
        grads,
        positions,
    }))
}

#[derive(Clone, Debug)]
pub struct Trainer {
    config: RunConfig,
    params: ModelParams,
    adam: AdamState,
    rng: ChaCha8Rng,
    step: u64,
    nonfinite_skips: u64,
}

impl Trainer {
    /// Fresh parameters for feature dimension `d`, initialized from the run
    /// seed.
    pub fn new(config: RunConfig, d: usize) -> Result<Self> {
        config.validate()?;
        if d == 0 {
            return Err(Error::Parameter("feature dimension must be > 0".into()));
        }
        let dims = ModelDims::from_config(&config, d);
        let mut init = ChaCha8Rng::seed_from_u64(config.train.seed);
        init.set_stream(INIT_STREAM);
        let params = ModelParams::init(&dims, &mut init);
        let mut rng = ChaCha8Rng::seed_from_u64(config.train.seed);
        rng.set_stream(MINING_STREAM);
        Ok(Self {
            adam: AdamState::new(&params),
            config,
            params,
            rng,
            step: 0,
            nonfinite_skips: 0,
        })
    }

    /// Continues from a checkpoint. `config` may differ from the stored one
    /// only in settings that do not affect the trajectory.
    pub fn resume(checkpoint: Checkpoint, config: RunConfig) -> Result<Self> {
        config.validate()?;
        let stored = checkpoint.config()?;
        if stored.trajectory_view() != config.trajectory_view() {
            return Err(Error::Config(
                "config differs from the checkpoint's in settings that affect training".into(),
            ));
        }
        let mut rng = ChaCha8Rng::from_seed(checkpoint.rng.seed);
        rng.set_stream(checkpoint.rng.stream);
        rng.set_word_pos(checkpoint.rng.word_pos);
        Ok(Self {
            config,
            params: checkpoint.params,
            adam: checkpoint.adam,
            rng,
            step: checkpoint.step,
            nonfinite_skips: checkpoint.nonfinite_skips,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn into_params(self) -> ModelParams {
        self.params
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn nonfinite_skips(&self) -> u64 {
        self.nonfinite_skips
    }

    pub fn model(&self) -> Model {
        Model::new(self.params.clone(), ForwardSettings::from_config(&self.config))
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            step: self.step,
            config_json: serde_json::to_string(&self.config).expect("config serializes"),
            params: self.params.clone(),
            adam: self.adam.clone(),
            rng: RngState {
                seed: self.rng.get_seed(),
                stream: self.rng.get_stream(),
                word_pos: self.rng.get_word_pos(),
            },
            nonfinite_skips: self.nonfinite_skips,
        }
    }

    /// One training step on `pack`. The step counter advances whatever the
    /// outcome.
    pub fn train_step(&mut self, pack: &FeaturePack) -> Result<StepOutcome> {
        let result = sample_gradients(&self.params, &self.config, pack, &mut self.rng)?;
        self.step += 1;
        let sg = match result {
            Ok(sg) => sg,
            Err(reason) => return Ok(StepOutcome::Skipped(reason)),
        };
        let best_negative = sg.sims[1..].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let record = StepRecord {
            step: self.step,
            loss: sg.loss,
            top1: sg.sims[0] >= best_negative,
        };
        let cfg = AdamConfig {
            lr: self.config.train.lr,
            beta1: self.config.train.beta1,
            beta2: self.config.train.beta2,
            eps: self.config.train.eps,
        };
        let mut tensors = self.params.tensors_mut();
        match adam_step(&mut tensors, &sg.grads, &mut self.adam, &cfg)? {
            AdamOutcome::Applied => Ok(StepOutcome::Trained(record)),
            AdamOutcome::SkippedNonFinite => {
                self.nonfinite_skips += 1;
                Ok(StepOutcome::NonFinite(record))
            }
        }
    }

    /// Trains until `config.train.steps` steps are done. With `out_dir`,
    /// appends to `metrics.csv` and writes `ckpt_<step>.ommc` files there.
    pub fn run(&mut self, data: &dyn Dataset, out_dir: Option<&Path>) -> Result<TrainSummary> {
        if data.is_empty() {
            return Err(Error::Parameter("dataset is empty".into()));
        }
        let total = self.config.train.steps as u64;
        let len = data.len() as u64;
        let mut metrics = match out_dir {
            Some(dir) => Some(MetricsLog::open(dir, self.step == 0)?),
            None => None,
        };
        let mut summary = TrainSummary::default();
        let mut epoch = self.step / len;
        let mut skipped_in_epoch = 0u64;
        while self.step < total {
            let index = (self.step % len) as usize;
            if self.step / len != epoch {
                epoch = self.step / len;
                skipped_in_epoch = 0;
            }
            let pack = data.load(index)?;
            match self.train_step(&pack)? {
                StepOutcome::Trained(rec) | StepOutcome::NonFinite(rec) => {
                    if let Some(m) = metrics.as_mut() {
                        m.append(&rec)?;
                    }
                    if rec.step % 50 == 0 {
                        log::info!("step {} loss {:.5}", rec.step, rec.loss);
                    }
                    summary.records.push(rec);
                }
                StepOutcome::Skipped(reason) => {
                    log::warn!("step {}: skipping {}: {reason}", self.step, data.name(index));
                    summary.skipped += 1;
                    skipped_in_epoch += 1;
                    if skipped_in_epoch * 2 > len {
                        return Err(Error::Aborted(format!(
                            "{skipped_in_epoch} of {len} samples skipped in epoch {epoch}; last: {reason}"
                        )));
                    }
                }
            }
            let interval = self.config.train.checkpoint_interval as u64;
            if let Some(dir) = out_dir {
                if interval > 0 && self.step.is_multiple_of(interval) {
                    let path = checkpoint_path(dir, self.step);
                    self.checkpoint().save(&path)?;
                    summary.checkpoints.push(path);
                }
            }
        }
        if let Some(dir) = out_dir {
            let path = checkpoint_path(dir, self.step);
            if summary.checkpoints.last() != Some(&path) {
                self.checkpoint().save(&path)?;
                summary.checkpoints.push(path);
            }
        }
        summary.nonfinite_skips = self.nonfinite_skips;
        Ok(summary)
    }
}

#[derive(Clone, Debug, Default)]
pub struct TrainSummary {
    pub records: Vec<StepRecord>,
    pub skipped: u64,
    pub nonfinite_skips: u64,
    pub checkpoints: Vec<PathBuf>,
}

pub fn checkpoint_path(dir: &Path, step: u64) -> PathBuf {
    dir.join(format!("ckpt_{step}.ommc"))
}

/// Trains from scratch; the feature dimension comes from the first pack.
pub fn train(
    data: &dyn Dataset,
    config: &RunConfig,
    out_dir: Option<&Path>,
) -> Result<(Trainer, TrainSummary)> {
    if data.is_empty() {
        return Err(Error::Parameter("dataset is empty".into()));
    }
    let d = data.load(0)?.dim();
    let mut trainer = Trainer::new(config.clone(), d)?;
    let summary = trainer.run(data, out_dir)?;
    Ok((trainer, summary))
}

struct MetricsLog {
    file: std::fs::File,
}

impl MetricsLog {
    fn open(dir: &Path, fresh: bool) -> Result<Self> {
        let path = dir.join("metrics.csv");
        let exists = path.exists();
        let mut file = OpenOptions::new()
            .create(true)
            .write(true)
            .append(!fresh)
            .truncate(fresh)
            .open(&path)?;
        if fresh || !exists {
            writeln!(file, "step,loss,top1")?;
        }
        Ok(Self { file })
    }

    fn append(&mut self, rec: &StepRecord) -> Result<()> {
        writeln!(self.file, "{},{},{}", rec.step, rec.loss, rec.top1 as u8)?;
        Ok(())
    }
}
