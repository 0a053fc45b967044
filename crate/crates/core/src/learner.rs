//! One-pass streaming training loop and the replay strategies.
//!
//! Every batch follows the same order: snapshot the parameters, compute the
//! strategy's loss and gradient, take one Adam step, then offer each batch
//! sample to the strategy's buffers with logits and gradients taken at the
//! snapshot. Task labels are read once up front to place the per-task
//! checkpoints; only A-GEM reads them inside the loop.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{audit, GroundTruth, Sample, Scene};
use crate::error::{Error, Result};
use crate::losses::{total_loss_and_grad, BaseKind, LossSpec, Target};
use crate::memory::{draw_minibatch, CompletionBuffer, MemoryTriplet, SeparationBuffer};
use crate::predictor::{adam_step, AdamState, GradVector, ParamVector, Predictor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum StrategyKind {
    Vanilla,
    #[serde(rename = "H2C")]
    H2c,
    DerStyle,
    GssStyle,
    #[serde(rename = "A-GEM")]
    AGem,
    Joint,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 6] = [
        StrategyKind::Vanilla,
        StrategyKind::H2c,
        StrategyKind::DerStyle,
        StrategyKind::GssStyle,
        StrategyKind::AGem,
        StrategyKind::Joint,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            StrategyKind::Vanilla => "Vanilla",
            StrategyKind::H2c => "H2C",
            StrategyKind::DerStyle => "DerStyle",
            StrategyKind::GssStyle => "GssStyle",
            StrategyKind::AGem => "A-GEM",
            StrategyKind::Joint => "Joint",
        }
    }

    /// Whether the strategy may read task labels while training.
    pub fn reads_task_labels(&self) -> bool {
        matches!(self, StrategyKind::AGem | StrategyKind::Joint)
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.to_ascii_lowercase().replace(['-', '_'], "");
        Ok(match key.as_str() {
            "vanilla" => StrategyKind::Vanilla,
            "h2c" => StrategyKind::H2c,
            "der" | "derstyle" => StrategyKind::DerStyle,
            "gss" | "gssstyle" => StrategyKind::GssStyle,
            "agem" => StrategyKind::AGem,
            "joint" => StrategyKind::Joint,
            _ => return Err(Error::Config(format!("unknown strategy {s:?}"))),
        })
    }
}

/// How stored-item gradients are obtained when scoring a newcomer.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientMode {
    /// Recompute at the current parameters.
    #[default]
    Recompute,
    /// Reuse the gradient captured when the item was stored. Approximate.
    Cached,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    /// Total replay memory. H2C splits it evenly between its two buffers.
    pub buffer_total: usize,
    pub alpha: f64,
    pub beta: f64,
    /// Samples drawn from each buffer per step.
    pub replay_batch: usize,
    pub seed: u64,
    pub checkpoint_after_each_task: bool,
    /// Stored items compared when scoring a newcomer.
    pub b_compare: usize,
    pub loss: BaseKind,
    pub gradient_mode: GradientMode,
    /// Score each batch once with its mean gradient instead of per sample.
    pub per_batch_scoring: bool,
    /// Memory samples behind each A-GEM reference gradient.
    pub agem_reference_batch: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            batch_size: 8,
            buffer_total: 200,
            alpha: 1.0,
            beta: 1.0,
            replay_batch: 8,
            seed: 0,
            checkpoint_after_each_task: true,
            b_compare: 10,
            loss: BaseKind::CrossEntropy,
            gradient_mode: GradientMode::Recompute,
            per_batch_scoring: false,
            agem_reference_batch: 64,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config("lr must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if self.replay_batch == 0 || self.b_compare == 0 || self.agem_reference_batch == 0 {
            return Err(Error::Config(
                "replay_batch, b_compare and agem_reference_batch must be positive".into(),
            ));
        }
        self.loss_spec().validate()
    }

    pub fn loss_spec(&self) -> LossSpec {
        LossSpec {
            base: self.loss,
            alpha: self.alpha,
            beta: self.beta,
        }
    }

    /// Separation and completion capacities used by H2C.
    pub fn h2c_capacities(&self) -> (usize, usize) {
        let sp = self.buffer_total / 2;
        (sp, self.buffer_total - sp)
    }
}

/// Parameters captured after the last batch of a task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskCheckpoint {
    pub after_task: u32,
    pub params: ParamVector,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainStats {
    pub steps: usize,
    /// Label reads inside the training loop.
    pub training_label_reads: u64,
    /// Label reads spent locating task boundaries for checkpoints.
    pub checkpoint_label_reads: u64,
    /// How many current-batch losses each stream position entered.
    pub visits: Vec<u32>,
    /// Steps on which A-GEM had to project its gradient.
    pub agem_projected_steps: usize,
    /// Smallest `g' . g_ref` seen after a projection.
    pub agem_min_projected_dot: Option<f64>,
    pub final_loss: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub final_params: ParamVector,
    pub optimizer: AdamState,
    pub checkpoints: Vec<TaskCheckpoint>,
    pub stats: TrainStats,
    pub separation: Option<SeparationBuffer>,
    pub completion: Option<CompletionBuffer>,
}

/// Gradient of the base loss of one observation.
pub fn sample_gradient(
    model: &Predictor,
    params: &ParamVector,
    scene: &Scene,
    truth: &GroundTruth,
    kind: BaseKind,
) -> Result<GradVector> {
    let mut g = GradVector::zeros(model.num_params());
    let target = Target::Cell(model.grid().target_cell(scene, truth));
    model.accumulate(params, scene, &target, kind, 1.0, &mut g)?;
    Ok(g)
}

/// Current-batch loss plus replay of both buffers, weighted by `alpha`
/// (separation) and `beta` (completion). A buffer with zero weight is not
/// sampled.
pub fn h2c_step(
    model: &Predictor,
    params: &ParamVector,
    current: &[&Sample],
    sp: Option<&SeparationBuffer>,
    cp: Option<&CompletionBuffer>,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, GradVector)> {
    let sp_batch = match sp {
        Some(b) if cfg.alpha != 0.0 => b.draw(cfg.replay_batch, rng),
        _ => Vec::new(),
    };
    let cp_batch = match cp {
        Some(b) if cfg.beta != 0.0 => b.draw(cfg.replay_batch, rng),
        _ => Vec::new(),
    };
    total_loss_and_grad(model, params, current, &sp_batch, &cp_batch, &cfg.loss_spec())
}

/// Base loss over the current batch concatenated with a separation-buffer
/// minibatch. No distillation.
pub fn gss_style_step(
    model: &Predictor,
    params: &ParamVector,
    current: &[&Sample],
    sp: Option<&SeparationBuffer>,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, GradVector)> {
    if current.is_empty() {
        return Err(Error::InvalidInput("empty current batch".into()));
    }
    let replay = sp.map(|b| b.draw(cfg.replay_batch, rng)).unwrap_or_default();
    let observations = current
        .iter()
        .map(|s| (&s.scene, &s.truth))
        .chain(replay.iter().map(|m| (&m.scene, &m.truth)));
    base_loss_and_grad(model, params, observations, current.len() + replay.len(), cfg.loss)
}

fn base_loss_and_grad<'a>(
    model: &Predictor,
    params: &ParamVector,
    observations: impl Iterator<Item = (&'a Scene, &'a GroundTruth)>,
    count: usize,
    kind: BaseKind,
) -> Result<(f64, GradVector)> {
    let mut grad = GradVector::zeros(model.num_params());
    let w = 1.0 / count as f64;
    let mut loss = 0.0;
    for (scene, truth) in observations {
        let target = Target::Cell(model.grid().target_cell(scene, truth));
        loss += w * model.accumulate(params, scene, &target, kind, w, &mut grad)?;
    }
    Ok((loss, grad))
}

/// Projects `g` so it does not increase the reference loss to first order.
pub fn agem_project(g: &GradVector, g_ref: &GradVector) -> GradVector {
    let dot = g.dot(g_ref);
    let ref_sq = g_ref.dot(g_ref);
    if dot >= 0.0 || ref_sq == 0.0 {
        return g.clone();
    }
    let mut out = g.clone();
    out.add_scaled(g_ref, -dot / ref_sq);
    out
}

enum Memory {
    None,
    H2c {
        sp: Option<SeparationBuffer>,
        cp: Option<CompletionBuffer>,
    },
    Der(Option<CompletionBuffer>),
    Gss(Option<SeparationBuffer>),
    AGem {
        per_task: BTreeMap<u32, CompletionBuffer>,
        capacity: usize,
    },
}

fn completion(cap: usize) -> Result<Option<CompletionBuffer>> {
    (cap > 0).then(|| CompletionBuffer::new(cap)).transpose()
}

fn separation(cap: usize, b: usize) -> Result<Option<SeparationBuffer>> {
    (cap > 0).then(|| SeparationBuffer::new(cap, b)).transpose()
}

struct Trainer<'a> {
    model: &'a Predictor,
    cfg: &'a TrainConfig,
    strategy: StrategyKind,
    params: ParamVector,
    adam: AdamState,
    rng: ChaCha8Rng,
    memory: Memory,
    /// Gradients captured at storage time, by separation-buffer slot.
    grad_cache: Vec<Option<GradVector>>,
    stats: TrainStats,
}

impl<'a> Trainer<'a> {
    fn step_gradient(&mut self, batch: &[&Sample]) -> Result<(f64, GradVector)> {
        let (model, cfg) = (self.model, self.cfg);
        match &self.memory {
            Memory::None => {
                let spec = LossSpec {
                    alpha: 0.0,
                    beta: 0.0,
                    ..cfg.loss_spec()
                };
                total_loss_and_grad(model, &self.params, batch, &[], &[], &spec)
            }
            Memory::H2c { sp, cp } => {
                h2c_step(model, &self.params, batch, sp.as_ref(), cp.as_ref(), cfg, &mut self.rng)
            }
            Memory::Der(cp) => {
                let der_cfg = TrainConfig {
                    alpha: 0.0,
                    ..cfg.clone()
                };
                h2c_step(model, &self.params, batch, None, cp.as_ref(), &der_cfg, &mut self.rng)
            }
            Memory::Gss(sp) => gss_style_step(model, &self.params, batch, sp.as_ref(), cfg, &mut self.rng),
            Memory::AGem { per_task, .. } => {
                let obs = batch.iter().map(|s| (&s.scene, &s.truth));
                let (loss, g) = base_loss_and_grad(model, &self.params, obs, batch.len(), cfg.loss)?;
                let current = batch[0].task_label();
                let pool: Vec<&MemoryTriplet> = per_task
                    .range(..current)
                    .flat_map(|(_, b)| b.items())
                    .collect();
                if pool.is_empty() {
                    return Ok((loss, g));
                }
                let reference = draw_minibatch(&pool, cfg.agem_reference_batch, &mut self.rng);
                let obs = reference.iter().map(|m| (&m.scene, &m.truth));
                let (_, g_ref) = base_loss_and_grad(model, &self.params, obs, reference.len(), cfg.loss)?;
                if g.dot(&g_ref) >= 0.0 {
                    return Ok((loss, g));
                }
                let projected = agem_project(&g, &g_ref);
                let dot = projected.dot(&g_ref);
                self.stats.agem_projected_steps += 1;
                self.stats.agem_min_projected_dot =
                    Some(self.stats.agem_min_projected_dot.map_or(dot, |m| m.min(dot)));
                Ok((loss, projected))
            }
        }
    }

    fn offer(&mut self, batch: &[&Sample], snapshot: &ParamVector) -> Result<()> {
        let (model, cfg) = (self.model, self.cfg);
        let triplets = batch
            .iter()
            .map(|s| Ok(MemoryTriplet::from_sample(s, model.forward(snapshot, &s.scene)?.logits)))
            .collect::<Result<Vec<_>>>()?;
        match &mut self.memory {
            Memory::None => {}
            Memory::Der(cp) => {
                if let Some(cp) = cp {
                    for t in triplets {
                        cp.observe(t, &mut self.rng);
                    }
                }
            }
            Memory::H2c { sp, cp } => {
                if let Some(sp) = sp {
                    offer_separation(
                        model,
                        cfg,
                        snapshot,
                        sp,
                        &mut self.grad_cache,
                        triplets.clone(),
                        &mut self.rng,
                    )?;
                }
                if let Some(cp) = cp {
                    for t in triplets {
                        cp.observe(t, &mut self.rng);
                    }
                }
            }
            Memory::Gss(sp) => {
                if let Some(sp) = sp {
                    offer_separation(model, cfg, snapshot, sp, &mut self.grad_cache, triplets, &mut self.rng)?;
                }
            }
            Memory::AGem { per_task, capacity } => {
                for (s, t) in batch.iter().zip(triplets) {
                    let buf = match per_task.entry(s.task_label()) {
                        std::collections::btree_map::Entry::Occupied(e) => e.into_mut(),
                        std::collections::btree_map::Entry::Vacant(e) => {
                            e.insert(CompletionBuffer::new(*capacity)?)
                        }
                    };
                    buf.observe(t, &mut self.rng);
                }
            }
        }
        Ok(())
    }
}

fn offer_separation(
    model: &Predictor,
    cfg: &TrainConfig,
    snapshot: &ParamVector,
    sp: &mut SeparationBuffer,
    cache: &mut Vec<Option<GradVector>>,
    triplets: Vec<MemoryTriplet>,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    let grads = triplets
        .iter()
        .map(|t| sample_gradient(model, snapshot, &t.scene, &t.truth, cfg.loss))
        .collect::<Result<Vec<_>>>()?;
    let batch_score = if cfg.per_batch_scoring && !sp.is_empty() {
        let mut mean = GradVector::zeros(model.num_params());
        for g in &grads {
            mean.add_scaled(g, 1.0 / grads.len() as f64);
        }
        Some(score_against(model, cfg, snapshot, sp, cache, &mean, rng)?)
    } else {
        None
    };
    for (t, g) in triplets.into_iter().zip(grads) {
        let (_, adm) = match batch_score {
            Some(q) if sp.stream_count() > 0 => (q, sp.observe(t, q, rng)),
            _ => {
                let q = if sp.stream_count() == 0 || sp.is_empty() {
                    crate::memory::INITIAL_SCORE
                } else {
                    score_against(model, cfg, snapshot, sp, cache, &g, rng)?
                };
                (q, sp.observe(t, q, rng))
            }
        };
        if cfg.gradient_mode == GradientMode::Cached {
            if let Some(slot) = adm.slot() {
                if cache.len() <= slot {
                    cache.resize(slot + 1, None);
                }
                cache[slot] = Some(g);
            }
        }
    }
    Ok(())
}

fn score_against(
    model: &Predictor,
    cfg: &TrainConfig,
    snapshot: &ParamVector,
    sp: &SeparationBuffer,
    cache: &[Option<GradVector>],
    g: &GradVector,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    sp.score(g, rng, |slot, item: &MemoryTriplet| match (cfg.gradient_mode, cache.get(slot)) {
        (GradientMode::Cached, Some(Some(cached))) => Ok(cached.clone()),
        _ => sample_gradient(model, snapshot, &item.scene, &item.truth, cfg.loss),
    })
}

/// Trains `model` from `init` over the stream, visiting each sample once
/// in order (Joint visits a seeded permutation of the whole stream).
pub fn train_stream_from(
    model: &Predictor,
    init: ParamVector,
    stream: &[Sample],
    strategy: StrategyKind,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if stream.is_empty() {
        return Err(Error::InvalidInput("empty stream".into()));
    }
    if init.len() != model.num_params() {
        return Err(Error::Shape {
            what: "initial parameters",
            expected: model.num_params(),
            actual: init.len(),
        });
    }

    let reads_before = audit::label_reads();
    let labels: Vec<u32> = stream.iter().map(Sample::task_label).collect();
    if labels.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidInput("task labels must be non-decreasing along the stream".into()));
    }
    // (end index, label) of every task's last sample
    let boundaries: Vec<(usize, u32)> = (0..labels.len())
        .filter(|&i| i + 1 == labels.len() || labels[i + 1] != labels[i])
        .map(|i| (i + 1, labels[i]))
        .collect();
    let n_tasks = boundaries.len();
    let last_label = *labels.last().expect("non-empty");
    drop(labels);
    let checkpoint_reads = audit::label_reads() - reads_before;

    let memory = match strategy {
        StrategyKind::Vanilla | StrategyKind::Joint => Memory::None,
        StrategyKind::H2c => {
            let (sp, cp) = cfg.h2c_capacities();
            Memory::H2c {
                sp: separation(sp, cfg.b_compare)?,
                cp: completion(cp)?,
            }
        }
        StrategyKind::DerStyle => Memory::Der(completion(cfg.buffer_total)?),
        StrategyKind::GssStyle => Memory::Gss(separation(cfg.buffer_total, cfg.b_compare)?),
        StrategyKind::AGem => Memory::AGem {
            per_task: BTreeMap::new(),
            capacity: (cfg.buffer_total / n_tasks).max(1),
        },
    };

    let mut trainer = Trainer {
        model,
        cfg,
        strategy,
        adam: AdamState::new(init.len()),
        params: init,
        rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        memory,
        grad_cache: Vec::new(),
        stats: TrainStats {
            checkpoint_label_reads: checkpoint_reads,
            visits: vec![0; stream.len()],
            ..TrainStats::default()
        },
    };

    let mut order: Vec<usize> = (0..stream.len()).collect();
    if strategy == StrategyKind::Joint {
        order.shuffle(&mut trainer.rng);
    }

    let training_reads_start = audit::label_reads();
    let mut checkpoints = Vec::new();
    let mut next_boundary = 0;
    let mut consumed = 0;
    for chunk in order.chunks(cfg.batch_size) {
        let batch: Vec<&Sample> = chunk.iter().map(|&i| &stream[i]).collect();
        for &i in chunk {
            trainer.stats.visits[i] += 1;
        }
        let snapshot = (!matches!(trainer.memory, Memory::None)).then(|| trainer.params.clone());
        let (loss, grad) = trainer.step_gradient(&batch)?;
        adam_step(&mut trainer.params, &grad, &mut trainer.adam, cfg.lr)?;
        trainer.stats.steps += 1;
        trainer.stats.final_loss = loss;
        if let Some(snapshot) = snapshot {
            trainer.offer(&batch, &snapshot)?;
        }
        consumed += chunk.len();
        if trainer.strategy != StrategyKind::Joint && cfg.checkpoint_after_each_task {
            while next_boundary < boundaries.len() && boundaries[next_boundary].0 <= consumed {
                checkpoints.push(TaskCheckpoint {
                    after_task: boundaries[next_boundary].1,
                    params: trainer.params.clone(),
                });
                next_boundary += 1;
            }
        }
    }
    trainer.stats.training_label_reads = audit::label_reads() - training_reads_start;
    if strategy == StrategyKind::Joint && cfg.checkpoint_after_each_task {
        checkpoints.push(TaskCheckpoint {
            after_task: last_label,
            params: trainer.params.clone(),
        });
    }

    let (separation, completion) = match trainer.memory {
        Memory::H2c { sp, cp } => (sp, cp),
        Memory::Der(cp) => (None, cp),
        Memory::Gss(sp) => (sp, None),
        _ => (None, None),
    };
    Ok(TrainOutcome {
        final_params: trainer.params,
        optimizer: trainer.adam,
        checkpoints,
        stats: trainer.stats,
        separation,
        completion,
    })
}

/// [`train_stream_from`] starting at the model's seeded initialization.
pub fn train_stream(
    model: &Predictor,
    stream: &[Sample],
    strategy: StrategyKind,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    train_stream_from(model, model.init_params(), stream, strategy, cfg)
}
