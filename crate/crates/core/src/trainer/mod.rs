//! Initialization, the training loop and early stopping.

mod adam;
mod checkpoint;
mod sampling;

use log::info;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub use adam::{adam_step, OptimizerState, BETA1, BETA2, EPSILON};
pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint,
    CHECKPOINT_MAGIC,
};
pub use sampling::{sample_triples, NegativeSampler, MAX_NEGATIVE_TRIES};

use crate::autodiff::{Matrix, Tape, Var};
use crate::dataset::{Dataset, Part};
use crate::error::{Error, Result};
use crate::eval::{evaluate, MetricsReport, UserItems};
use crate::graph::InteractionGraph;
use crate::losses::{total_loss, LossComponents, LossWeights};
use crate::model::{self, ModelConfig, ParamVars, ParameterSet};

/// Cutoff of the validation metric that drives early stopping.
pub const SELECTION_K: usize = 20;

const STREAM_SAMPLING: u64 = 1;
const STREAM_DROPOUT: u64 = 2;

/// Uniform samples in `±√(6/(rows+cols))`.
pub fn xavier_init(rows: usize, cols: usize, seed: u64) -> Matrix {
    xavier_init_with(rows, cols, &mut ChaCha8Rng::seed_from_u64(seed))
}

pub fn xavier_init_with<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Matrix {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-bound..=bound))
}

/// Generator for one `(stream, step)` slot, independent of every other
/// slot, so a step's randomness does not depend on what ran before it.
pub fn step_rng(seed: u64, stream: u64, step: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((stream << 48) | (step & ((1 << 48) - 1)));
    rng
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub weights: LossWeights,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.001,
            batch_size: 256,
            max_epochs: 30,
            patience: 5,
            seed: 2024,
            weights: LossWeights::default(),
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "train.learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("train.batch_size must be at least 1".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::Config("train.max_epochs must be at least 1".into()));
        }
        if self.patience == 0 {
            return Err(Error::Config("train.patience must be at least 1".into()));
        }
        self.weights.validate()?;
        self.model.validate()
    }

    /// Stable 64-bit hash of every setting that affects training.
    pub fn fingerprint(&self) -> u64 {
        let mut hasher = Sha256::new();
        for (key, value) in crate::config::train_entries(self) {
            hasher.update(key.as_bytes());
            hasher.update(b"=");
            hasher.update(value.as_bytes());
            hasher.update(b"\n");
        }
        let digest = hasher.finalize();
        u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
    }
}

/// Per-epoch means of the loss terms over the epoch's steps.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossLog {
    pub total: f64,
    pub bpr: f64,
    pub contrastive_users: f64,
    pub contrastive_items: f64,
    pub ddr: f64,
    pub ddr_mm: f64,
}

impl LossLog {
    /// The weighted sum the total is built from.
    pub fn weighted_sum(&self, w: &LossWeights) -> f64 {
        self.bpr
            + w.omega * (self.contrastive_users + self.contrastive_items)
            + w.beta * self.ddr
            + w.delta * self.ddr_mm
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub steps: usize,
    pub loss: LossLog,
    pub validation_recall: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

/// Stops after `patience` consecutive epochs without a strict improvement.
#[derive(Clone, Debug)]
pub struct EarlyStopper {
    patience: usize,
    best: Option<(usize, f64)>,
    bad_epochs: usize,
}

impl EarlyStopper {
    pub fn new(patience: usize) -> Self {
        EarlyStopper {
            patience,
            best: None,
            bad_epochs: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, metric: f64) -> StopDecision {
        match self.best {
            Some((_, best)) if metric <= best => {
                self.bad_epochs += 1;
                if self.bad_epochs >= self.patience {
                    StopDecision::Stop
                } else {
                    StopDecision::Continue
                }
            }
            _ => {
                self.best = Some((epoch, metric));
                self.bad_epochs = 0;
                StopDecision::Improved
            }
        }
    }

    /// `(epoch, metric)` of the best observation.
    pub fn best(&self) -> Option<(usize, f64)> {
        self.best
    }
}

/// Result of [`fit`].
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the best validation metric.
    pub params: ParameterSet,
    /// Optimizer state at that epoch.
    pub optimizer: OptimizerState,
    pub best_epoch: usize,
    pub best_validation: f64,
    pub log: Vec<EpochLog>,
}

/// Evaluation-mode metrics on the validation or test split. Validation masks
/// training items; test masks training and validation items.
pub fn evaluate_split(
    params: &ParameterSet,
    dataset: &Dataset,
    graph: &InteractionGraph,
    model: &ModelConfig,
    part: Part,
    ks: &[usize],
    fingerprint: u64,
) -> Result<MetricsReport> {
    let embeddings = model::embed(params, graph, &dataset.features, model)?;
    let train = dataset.items(Part::Train);
    let truth = dataset.items(part);
    match part {
        Part::Validation => evaluate(&embeddings, dataset.n_users, &truth, &[&train], ks, fingerprint),
        Part::Test => {
            let val = dataset.items(Part::Validation);
            evaluate(&embeddings, dataset.n_users, &truth, &[&train, &val], ks, fingerprint)
        }
        Part::Train => Err(Error::InvalidArgument("cannot evaluate on the training split".into())),
    }
}

fn component_values(tape: &Tape, parts: &LossComponents) -> Result<[(&'static str, f64); 5]> {
    Ok([
        ("bpr", tape.scalar(parts.bpr)?),
        ("hcl_users", tape.scalar(parts.contrastive_users)?),
        ("hcl_items", tape.scalar(parts.contrastive_items)?),
        ("ddr", tape.scalar(parts.ddr)?),
        ("ddr_mm", tape.scalar(parts.ddr_mm)?),
    ])
}

/// Runs one optimization step and returns the loss terms.
#[allow(clippy::too_many_arguments)]
fn train_step(
    params: &mut ParameterSet,
    optimizer: &mut OptimizerState,
    graph: &InteractionGraph,
    sampler: &NegativeSampler<'_>,
    dataset: &Dataset,
    config: &TrainConfig,
    epoch: usize,
    step: usize,
    global_step: u64,
) -> Result<LossLog> {
    let mut sample_rng = step_rng(config.seed, STREAM_SAMPLING, global_step);
    let mut dropout_rng = step_rng(config.seed, STREAM_DROPOUT, global_step);
    let batch = sampler.sample(config.batch_size, &mut sample_rng);

    let mut tape = Tape::new();
    let map = params.register(&mut tape)?;
    let vars = ParamVars::from_map(&map, config.model.modalities())?;
    let pass = model::forward(
        &mut tape,
        graph,
        &dataset.features,
        &vars,
        &config.model,
        Some(&mut dropout_rng),
    )?;
    let parts =
        model::loss_components(&mut tape, graph, &pass, &vars, &batch, &config.weights, &config.model, None)?;
    let values = component_values(&tape, &parts)?;
    for (component, v) in values {
        if !v.is_finite() {
            return Err(Error::NonFinite {
                component,
                epoch,
                step,
            });
        }
    }
    let total: Var = total_loss(&mut tape, &parts, &config.weights)?;
    let total_value = tape.scalar(total)?;
    if !total_value.is_finite() {
        return Err(Error::NonFinite {
            component: "total",
            epoch,
            step,
        });
    }
    let grads = tape.backward(total)?;
    adam_step(params, &grads, optimizer, config.learning_rate)?;
    Ok(LossLog {
        total: total_value,
        bpr: values[0].1,
        contrastive_users: values[1].1,
        contrastive_items: values[2].1,
        ddr: values[3].1,
        ddr_mm: values[4].1,
    })
}

/// Trains from a fresh initialization with early stopping on validation
/// Recall@20.
pub fn fit(dataset: &Dataset, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let params = ParameterSet::init(
        dataset.n_users,
        dataset.n_items,
        &dataset.features,
        &config.model,
        config.seed,
    )?;
    fit_from(dataset, config, params)
}

/// Trains starting from `params`.
pub fn fit_from(dataset: &Dataset, config: &TrainConfig, mut params: ParameterSet) -> Result<TrainOutcome> {
    config.validate()?;
    let graph = dataset.train_graph()?;
    let known: UserItems = dataset.known();
    let sampler = NegativeSampler::new(&graph, &known)?;
    let mut optimizer = OptimizerState::new(&params);
    let steps = dataset.train.len().div_ceil(config.batch_size);
    let fingerprint = config.fingerprint();

    let mut stopper = EarlyStopper::new(config.patience);
    let mut best: Option<(ParameterSet, OptimizerState)> = None;
    let mut log = Vec::new();
    let mut global_step = 0u64;
    for epoch in 1..=config.max_epochs {
        let mut sum = LossLog::default();
        for step in 0..steps {
            let l = train_step(
                &mut params,
                &mut optimizer,
                &graph,
                &sampler,
                dataset,
                config,
                epoch,
                step,
                global_step,
            )?;
            global_step += 1;
            sum.total += l.total;
            sum.bpr += l.bpr;
            sum.contrastive_users += l.contrastive_users;
            sum.contrastive_items += l.contrastive_items;
            sum.ddr += l.ddr;
            sum.ddr_mm += l.ddr_mm;
        }
        let n = steps as f64;
        let loss = LossLog {
            total: sum.total / n,
            bpr: sum.bpr / n,
            contrastive_users: sum.contrastive_users / n,
            contrastive_items: sum.contrastive_items / n,
            ddr: sum.ddr / n,
            ddr_mm: sum.ddr_mm / n,
        };
        let report = evaluate_split(
            &params,
            dataset,
            &graph,
            &config.model,
            Part::Validation,
            &[SELECTION_K],
            fingerprint,
        )?;
        let recall = report.recall[0];
        info!(
            "epoch {epoch}: loss {:.6} (bpr {:.6}, hcl {:.6}/{:.6}, ddr {:.6}, ddr_mm {:.6}) val recall@{SELECTION_K} {:.6}",
            loss.total,
            loss.bpr,
            loss.contrastive_users,
            loss.contrastive_items,
            loss.ddr,
            loss.ddr_mm,
            recall
        );
        log.push(EpochLog {
            epoch,
            steps,
            loss,
            validation_recall: recall,
        });
        match stopper.observe(epoch, recall) {
            StopDecision::Improved => best = Some((params.clone(), optimizer.clone())),
            StopDecision::Continue => {}
            StopDecision::Stop => {
                info!("early stop after epoch {epoch}");
                break;
            }
        }
    }
    let (best_epoch, best_validation) = stopper.best().expect("at least one epoch");
    let (params, optimizer) = best.expect("first epoch always improves");
    Ok(TrainOutcome {
        params,
        optimizer,
        best_epoch,
        best_validation,
        log,
    })
}
