//! Mini-batch SGD on `E = mean_a [ℓ(a) + w·ℓ̃(a)]`.
//!
//! Loss values and their derivatives with respect to similarities come from
//! the scalar tape; the chain rule through embeddings, mixing and the encoder
//! is applied by hand.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::analysis::{evaluate, MetricsReport};
use crate::data::{positives_negatives, sample_batch, Dataset, EpochState, SamplerConfig, Split};
use crate::error::{Error, Result};
use crate::loss::{LossConfig, LossPlugin, Role};
use crate::mixup::{
    mix_unchecked, select_pairs, AnchorSets, BetaSampler, HardNegativeLimits, MixPairPolicy,
    MixupType, MixupTypes, PairKind,
};
use crate::model::{backward_normalize, EmbedTrace, Model, ModelConfig, ModelGrads, RangeTrace};
use crate::numerics::dot;

/// Recall cutoffs reported during training.
pub const RECALL_KS: [usize; 4] = [1, 2, 4, 8];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MixupConfig {
    pub mix_type: MixupTypes,
    pub pairs: MixPairPolicy,
    pub alpha: f64,
    /// Hard negatives kept per anchor under input mixup.
    pub k_hard: usize,
    /// Hard negatives kept under feature and embedding mixup; unset keeps all.
    pub k_manifold: Option<usize>,
    pub w: f64,
}

impl Default for MixupConfig {
    fn default() -> Self {
        Self {
            mix_type: MixupTypes::single(MixupType::Feature),
            pairs: MixPairPolicy::new(vec![PairKind::PosNeg, PairKind::AncNeg]).expect("non-empty"),
            alpha: 2.0,
            k_hard: 3,
            k_manifold: None,
            w: 0.4,
        }
    }
}

impl MixupConfig {
    pub fn limits(&self) -> HardNegativeLimits {
        HardNegativeLimits {
            input: self.k_hard,
            manifold: self.k_manifold,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.w >= 0.0) || !self.w.is_finite() {
            return Err(Error::invalid(format!(
                "w must be non-negative, got {}",
                self.w
            )));
        }
        if self.k_hard == 0 || self.k_manifold == Some(0) {
            return Err(Error::invalid("hard negative counts must be at least 1"));
        }
        BetaSampler::new(self.alpha, 0)?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    Sgd,
    SgdMomentum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub momentum: f64,
    /// Applied to encoder weight matrices only.
    pub weight_decay: f64,
    /// Epochs after which the learning rate is multiplied by `decay_factor`.
    pub decay_epochs: Vec<usize>,
    pub decay_factor: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            kind: OptimizerKind::SgdMomentum,
            lr: 0.05,
            momentum: 0.9,
            weight_decay: 1e-3,
            decay_epochs: vec![50],
            decay_factor: 0.5,
        }
    }
}

impl OptimizerConfig {
    fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(Error::invalid(format!(
                "learning rate must be non-negative, got {}",
                self.lr
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if !(self.weight_decay >= 0.0) || !(self.decay_factor > 0.0) {
            return Err(Error::invalid(
                "weight decay must be non-negative and decay factor positive",
            ));
        }
        Ok(())
    }

    /// Learning rate during 1-based `epoch`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let decays = self.decay_epochs.iter().filter(|&&d| epoch > d).count();
        self.lr * self.decay_factor.powi(decays as i32)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub seed: u64,
    /// Evaluate on the test split every this many epochs and after the last one.
    pub eval_every: usize,
    /// Defaults to one pass over the train split.
    pub steps_per_epoch: Option<usize>,
    /// Mixed entries kept for utilization.
    pub reservoir: usize,
    pub model: ModelConfig,
    pub batch: SamplerConfig,
    pub loss: LossConfig,
    pub mixup: MixupConfig,
    pub optimizer: OptimizerConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 60,
            seed: 0,
            eval_every: 10,
            steps_per_epoch: None,
            reservoir: 8192,
            model: ModelConfig::default(),
            batch: SamplerConfig::default(),
            loss: LossConfig::default(),
            mixup: MixupConfig::default(),
            optimizer: OptimizerConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be at least 1"));
        }
        if self.eval_every == 0 || self.steps_per_epoch == Some(0) {
            return Err(Error::invalid(
                "eval_every and steps_per_epoch must be at least 1",
            ));
        }
        self.batch.validate()?;
        self.loss.resolve()?;
        self.mixup.validate()?;
        self.optimizer.validate()
    }
}

const SAMPLER_SALT: u64 = 0x6261_7463_6865_7300;
const MIX_SALT: u64 = 0x6d69_7875_7000_0000;
const RESERVOIR_SALT: u64 = 0x7265_7365_7276_6f00;

fn stream_rng(seed: u64, salt: u64, epoch: usize, step: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ salt);
    rng.set_stream(((epoch as u64) << 32) | step as u64);
    rng
}

/// Mixup choices for one step: drawn pair kind and mixup type, and the seed of
/// the stream that draws `λ` and per-anchor pair-kind redraws.
#[derive(Debug, Clone)]
pub struct MixPlan {
    pub w: f64,
    pub policy: MixPairPolicy,
    pub kind: PairKind,
    pub mixup_type: MixupType,
    pub limits: HardNegativeLimits,
    pub beta: BetaSampler,
    pub seed: u64,
}

impl MixPlan {
    /// `None` when `w = 0`: the step is exactly the clean baseline.
    pub fn draw(cfg: &MixupConfig, seed: u64, epoch: usize, step: usize) -> Result<Option<Self>> {
        if cfg.w == 0.0 {
            return Ok(None);
        }
        let mut rng = stream_rng(seed, MIX_SALT, epoch, step);
        let kind = cfg.pairs.draw(&mut rng);
        let mixup_type = cfg.mix_type.draw(&mut rng);
        Ok(Some(Self {
            w: cfg.w,
            policy: cfg.pairs.clone(),
            kind,
            mixup_type,
            limits: cfg.limits(),
            beta: BetaSampler::new(cfg.alpha, 0)?,
            seed: rng.random(),
        }))
    }
}

/// A mixed embedding produced during a step, by batch position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixedSource {
    pub first: usize,
    pub second: usize,
    pub lambda: f64,
    pub mixup_type: MixupType,
}

#[derive(Debug, Clone)]
pub struct Objective {
    pub loss: f64,
    pub grads: ModelGrads,
    /// Anchors whose clean loss was defined.
    pub anchors: usize,
    pub mixed: Vec<MixedSource>,
}

#[derive(Clone, Copy)]
enum Anchor {
    Example(usize),
    Proxy(usize),
}

#[derive(Clone, Copy)]
enum Target {
    Example(usize),
    Proxy(usize),
}

/// A mixed embedding with what its backward pass needs.
enum MixedTrace {
    Embedding,
    Feature(EmbedTrace),
    Input(EmbedTrace),
}

/// `E` and its gradient on one batch of inputs and class ids.
pub fn objective(
    model: &Model,
    plugin: &LossPlugin,
    inputs: &[&[f64]],
    labels: &[usize],
    plan: Option<&MixPlan>,
) -> Result<Objective> {
    crate::numerics::check_dims(inputs.len(), labels.len())?;
    let enc = &model.encoder;
    let split = enc.split();
    let n = inputs.len();
    let dim = enc.embed_dim();

    let feature_traces: Vec<RangeTrace> = inputs
        .iter()
        .map(|x| enc.forward_range(0, split, x))
        .collect::<Result<_>>()?;
    let head_traces: Vec<EmbedTrace> = feature_traces
        .iter()
        .map(|t| enc.embed_features_traced(t.output()))
        .collect::<Result<_>>()?;
    let emb: Vec<&[f64]> = head_traces.iter().map(|t| t.embedding()).collect();

    let proxies = if plugin.kind.uses_proxies() {
        let bank = model
            .proxies
            .as_ref()
            .ok_or_else(|| Error::invalid(format!("loss `{}` needs a proxy bank", plugin.kind)))?;
        (0..bank.len())
            .map(|s| bank.normalized(s))
            .collect::<Result<Vec<_>>>()?
    } else {
        Vec::new()
    };
    let slot_of = |class: usize| -> Result<usize> {
        model
            .proxies
            .as_ref()
            .and_then(|b| b.slot_of(class))
            .ok_or_else(|| Error::invalid(format!("no proxy for class {class}")))
    };

    let anchors: Vec<Anchor> = match plugin.kind.anchor_role() {
        Role::Example => (0..n).map(Anchor::Example).collect(),
        Role::Proxy => {
            let mut classes = labels.to_vec();
            classes.sort_unstable();
            classes.dedup();
            classes
                .into_iter()
                .map(|c| slot_of(c).map(Anchor::Proxy))
                .collect::<Result<_>>()?
        }
    };

    let mut grads = model.zero_grads();
    let mut d_emb = vec![vec![0.0; dim]; n];
    let mut d_feat = vec![vec![0.0; enc.feature_dim()]; n];
    let mut d_proxy = vec![vec![0.0; dim]; proxies.len()];
    let mut loss_sum = 0.0;
    let mut evaluated = 0usize;
    let mut mixed_log = Vec::new();
    let mut mix_rng = plan.map(|p| ChaCha8Rng::seed_from_u64(p.seed));

    for &anchor in &anchors {
        let (anchor_vec, anchor_class): (&[f64], usize) = match anchor {
            Anchor::Example(i) => (emb[i], labels[i]),
            Anchor::Proxy(s) => (&proxies[s].0, model.proxies.as_ref().unwrap().classes()[s]),
        };
        let targets: Vec<(Target, f64)> = match (anchor, plugin.kind.pos_neg_role()) {
            (Anchor::Example(i), Role::Example) => (0..n)
                .filter(|&j| j != i)
                .map(|j| (Target::Example(j), (labels[j] == anchor_class) as u8 as f64))
                .collect(),
            (Anchor::Proxy(_), _) => (0..n)
                .map(|j| (Target::Example(j), (labels[j] == anchor_class) as u8 as f64))
                .collect(),
            (Anchor::Example(_), Role::Proxy) => {
                slot_of(anchor_class)?;
                let bank = model.proxies.as_ref().unwrap();
                (0..bank.len())
                    .map(|s| {
                        (
                            Target::Proxy(s),
                            (bank.classes()[s] == anchor_class) as u8 as f64,
                        )
                    })
                    .collect()
            }
        };
        let has_pos = targets.iter().any(|t| t.1 > 0.0);
        let has_neg = targets.iter().any(|t| t.1 < 1.0);
        if targets.is_empty() || !plugin.accepts(has_pos, has_neg) {
            continue;
        }
        let target_vec = |t: Target| -> &[f64] {
            match t {
                Target::Example(j) => emb[j],
                Target::Proxy(s) => &proxies[s].0,
            }
        };
        let sims: Vec<f64> = targets
            .iter()
            .map(|t| dot(anchor_vec, target_vec(t.0)))
            .collect();
        let ys: Vec<f64> = targets.iter().map(|t| t.1).collect();
        let (value, ds) = plugin.labeled_loss_grad(&sims, &ys)?;
        loss_sum += value;
        evaluated += 1;
        let mut d_anchor = vec![0.0; dim];
        for (&(t, _), &g) in targets.iter().zip(&ds) {
            if g == 0.0 {
                continue;
            }
            let tv = target_vec(t);
            let dt = match t {
                Target::Example(j) => &mut d_emb[j],
                Target::Proxy(s) => &mut d_proxy[s],
            };
            for k in 0..dim {
                d_anchor[k] += g * tv[k];
                dt[k] += g * anchor_vec[k];
            }
        }

        if let (Some(plan), Some(rng)) = (plan, mix_rng.as_mut()) {
            let (pos, neg) = match anchor {
                Anchor::Example(i) => positives_negatives(i, labels),
                Anchor::Proxy(_) => (0..n).partition(|&j| labels[j] == anchor_class),
            };
            let sets = AnchorSets {
                anchor: match anchor {
                    Anchor::Example(i) => Some(i),
                    Anchor::Proxy(_) => None,
                },
                positives: pos,
                negatives: neg,
            };
            if let Some(kind) = plan.policy.resolve(plan.kind, &sets, rng) {
                let anchor_sims: Vec<f64> = emb.iter().map(|e| dot(anchor_vec, e)).collect();
                let pairs = select_pairs(&sets, kind, plan.mixup_type, plan.limits, &anchor_sims)?;
                let mut mixed = Vec::with_capacity(pairs.len());
                for p in &pairs {
                    let lambda = plan.beta.sample_with(rng);
                    let (v, trace) = match plan.mixup_type {
                        MixupType::Embedding => (
                            mix_unchecked(emb[p.first], emb[p.second], lambda),
                            MixedTrace::Embedding,
                        ),
                        MixupType::Feature => {
                            let h = mix_unchecked(
                                feature_traces[p.first].output(),
                                feature_traces[p.second].output(),
                                lambda,
                            );
                            let t = enc.embed_features_traced(&h)?;
                            (t.embedding().to_vec(), MixedTrace::Feature(t))
                        }
                        MixupType::Input => {
                            let t = enc.embed_traced(&mix_unchecked(
                                inputs[p.first],
                                inputs[p.second],
                                lambda,
                            ))?;
                            (t.embedding().to_vec(), MixedTrace::Input(t))
                        }
                    };
                    mixed.push((p, lambda, v, trace));
                }
                let ys: Vec<f64> = mixed.iter().map(|m| m.0.label(m.1)).collect();
                let has_pos = ys.iter().any(|&y| y > 0.0);
                let has_neg = ys.iter().any(|&y| y < 1.0);
                if !mixed.is_empty() && plugin.accepts(has_pos, has_neg) {
                    let sims: Vec<f64> = mixed.iter().map(|m| dot(anchor_vec, &m.2)).collect();
                    let (value, ds) = plugin.labeled_loss_grad(&sims, &ys)?;
                    loss_sum += plan.w * value;
                    for ((p, lambda, v, trace), g) in mixed.iter().zip(ds) {
                        mixed_log.push(MixedSource {
                            first: p.first,
                            second: p.second,
                            lambda: *lambda,
                            mixup_type: plan.mixup_type,
                        });
                        let g = plan.w * g;
                        if g == 0.0 {
                            continue;
                        }
                        let dv: Vec<f64> = anchor_vec.iter().map(|a| g * a).collect();
                        for k in 0..dim {
                            d_anchor[k] += g * v[k];
                        }
                        match trace {
                            MixedTrace::Embedding => {
                                for k in 0..dim {
                                    d_emb[p.first][k] += lambda * dv[k];
                                    d_emb[p.second][k] += (1.0 - lambda) * dv[k];
                                }
                            }
                            MixedTrace::Feature(t) => {
                                let dh = enc.backward_embed(t, &dv, &mut grads.encoder);
                                for (k, d) in dh.iter().enumerate() {
                                    d_feat[p.first][k] += lambda * d;
                                    d_feat[p.second][k] += (1.0 - lambda) * d;
                                }
                            }
                            MixedTrace::Input(t) => {
                                enc.backward_embed(t, &dv, &mut grads.encoder);
                            }
                        }
                    }
                }
            }
        }

        let da = match anchor {
            Anchor::Example(i) => &mut d_emb[i],
            Anchor::Proxy(s) => &mut d_proxy[s],
        };
        for k in 0..dim {
            da[k] += d_anchor[k];
        }
    }

    if evaluated == 0 {
        return Ok(Objective {
            loss: 0.0,
            grads: model.zero_grads(),
            anchors: 0,
            mixed: Vec::new(),
        });
    }

    for i in 0..n {
        if d_emb[i].iter().any(|&d| d != 0.0) {
            let dh = enc.backward_embed(&head_traces[i], &d_emb[i], &mut grads.encoder);
            for (a, b) in d_feat[i].iter_mut().zip(dh) {
                *a += b;
            }
        }
        if d_feat[i].iter().any(|&d| d != 0.0) {
            enc.backward_range(&feature_traces[i], &d_feat[i], &mut grads.encoder);
        }
    }
    if let Some(gp) = grads.proxies.as_mut() {
        for (s, (unit, length)) in proxies.iter().enumerate() {
            gp[s] = backward_normalize(unit, *length, &d_proxy[s]);
        }
    }
    grads.scale(1.0 / evaluated as f64);
    Ok(Objective {
        loss: loss_sum / evaluated as f64,
        grads,
        anchors: evaluated,
        mixed: mixed_log,
    })
}

/// A mixed training entry by dataset index, replayable with any model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixedEntry {
    pub first: usize,
    pub second: usize,
    pub lambda: f64,
    pub mixup_type: MixupType,
}

/// Uniform reservoir sample of every mixed entry produced during training.
#[derive(Debug, Clone)]
pub struct Reservoir {
    capacity: usize,
    seen: u64,
    entries: Vec<MixedEntry>,
    rng: ChaCha8Rng,
}

impl Reservoir {
    pub fn new(capacity: usize, seed: u64) -> Self {
        Self {
            capacity,
            seen: 0,
            entries: Vec::with_capacity(capacity.min(1 << 16)),
            rng: ChaCha8Rng::seed_from_u64(seed ^ RESERVOIR_SALT),
        }
    }

    pub fn offer(&mut self, entry: MixedEntry) {
        self.seen += 1;
        if self.entries.len() < self.capacity {
            self.entries.push(entry);
        } else if self.capacity > 0 {
            let j = self.rng.random_range(0..self.seen);
            if (j as usize) < self.capacity {
                self.entries[j as usize] = entry;
            }
        }
    }

    pub fn seen(&self) -> u64 {
        self.seen
    }

    pub fn entries(&self) -> &[MixedEntry] {
        &self.entries
    }

    /// Embeddings of the stored entries under `model`.
    pub fn reencode(&self, model: &Model, dataset: &Dataset) -> Result<Vec<Vec<f64>>> {
        let x = |i: usize| dataset.examples()[i].features.as_slice();
        self.entries
            .iter()
            .map(|e| {
                crate::mixup::f_lambda(
                    &model.encoder,
                    x(e.first),
                    x(e.second),
                    e.lambda,
                    e.mixup_type,
                )
            })
            .collect()
    }
}

/// Per-epoch record; `metrics` is set on evaluation epochs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub metrics: Option<MetricsReport>,
}

#[derive(Debug, Clone)]
pub struct RunState {
    pub epoch: usize,
    pub model: Model,
    pub velocity: Vec<f64>,
    pub log: Vec<EpochLog>,
    /// Model snapshots taken at the end of each decay epoch.
    pub checkpoints: Vec<(usize, Model)>,
    pub reservoir: Reservoir,
}

impl RunState {
    pub fn final_metrics(&self) -> Option<&MetricsReport> {
        self.log.iter().rev().find_map(|l| l.metrics.as_ref())
    }
}

/// Positions in the flat parameter vector that receive weight decay.
fn decay_mask(model: &Model) -> Vec<bool> {
    let mut mask = Vec::new();
    for l in model.encoder.layers() {
        mask.extend(std::iter::repeat_n(true, l.weights().len()));
        mask.extend(std::iter::repeat_n(false, l.bias().len()));
    }
    if let Some(bank) = &model.proxies {
        mask.extend(std::iter::repeat_n(
            false,
            bank.len() * model.encoder.embed_dim(),
        ));
    }
    mask
}

/// One optimizer update from precomputed gradients.
pub fn apply_update(
    model: &mut Model,
    velocity: &mut [f64],
    grads: &ModelGrads,
    opt: &OptimizerConfig,
    lr: f64,
) -> Result<()> {
    let mut params = model.to_flat();
    let g = grads.flatten();
    crate::numerics::check_dims(params.len(), g.len())?;
    crate::numerics::check_dims(params.len(), velocity.len())?;
    if lr == 0.0 {
        return Ok(());
    }
    let mask = decay_mask(model);
    for k in 0..params.len() {
        let mut gk = g[k];
        if mask[k] {
            gk += opt.weight_decay * params[k];
        }
        let step = match opt.kind {
            OptimizerKind::Sgd => gk,
            OptimizerKind::SgdMomentum => {
                velocity[k] = opt.momentum * velocity[k] + gk;
                velocity[k]
            }
        };
        params[k] -= lr * step;
        if !params[k].is_finite() {
            return Err(Error::NonFinite(params[k]));
        }
    }
    model.set_flat(&params)?;
    if let Some(bank) = model.proxies.as_mut() {
        bank.renormalize()?;
    }
    Ok(())
}

/// A fresh model for `dataset` under `cfg`.
pub fn init_model(dataset: &Dataset, cfg: &TrainConfig) -> Result<Model> {
    let (_, plugin) = cfg.loss.resolve()?;
    let proxy_classes = plugin.kind.uses_proxies().then(|| dataset.train_classes());
    Model::init(dataset.input_dim(), &cfg.model, proxy_classes, cfg.seed)
}

fn sampler(cfg: &TrainConfig) -> SamplerConfig {
    SamplerConfig {
        seed: cfg.seed ^ SAMPLER_SALT,
        ..cfg.batch.clone()
    }
}

/// Runs one step: draws the batch and the mixup plan, computes `E`, updates `state`.
pub fn train_step(
    dataset: &Dataset,
    cfg: &TrainConfig,
    plugin: &LossPlugin,
    state: &mut RunState,
    pos: EpochState,
) -> Result<f64> {
    let batch = sample_batch(dataset, &sampler(cfg), pos)?;
    let inputs: Vec<&[f64]> = batch
        .iter()
        .map(|&i| dataset.examples()[i].features.as_slice())
        .collect();
    let labels = dataset.labels(&batch);
    let plan = MixPlan::draw(&cfg.mixup, cfg.seed, pos.epoch, pos.step)?;
    let diverged = |e: Error| {
        if e.is_numeric() {
            Error::Diverged {
                epoch: pos.epoch,
                step: pos.step,
                source: Box::new(e),
            }
        } else {
            e
        }
    };
    let out = objective(&state.model, plugin, &inputs, &labels, plan.as_ref()).map_err(diverged)?;
    let non_finite = !out.loss.is_finite() || out.grads.flatten().iter().any(|g| !g.is_finite());
    if non_finite {
        return Err(Error::NonFiniteLoss {
            epoch: pos.epoch,
            step: pos.step,
            value: out.loss,
        });
    }
    apply_update(
        &mut state.model,
        &mut state.velocity,
        &out.grads,
        &cfg.optimizer,
        cfg.optimizer.lr_at(pos.epoch),
    )
    .map_err(diverged)?;
    for m in out.mixed {
        state.reservoir.offer(MixedEntry {
            first: batch[m.first],
            second: batch[m.second],
            lambda: m.lambda,
            mixup_type: m.mixup_type,
        });
    }
    Ok(out.loss)
}

pub fn steps_per_epoch(dataset: &Dataset, cfg: &TrainConfig) -> usize {
    cfg.steps_per_epoch.unwrap_or_else(|| {
        dataset
            .split_indices(Split::Train)
            .len()
            .div_ceil(cfg.batch.batch_size)
    })
}

/// Fresh state at epoch 0.
pub fn start(dataset: &Dataset, cfg: &TrainConfig) -> Result<RunState> {
    cfg.validate()?;
    let model = init_model(dataset, cfg)?;
    let velocity = vec![0.0; model.to_flat().len()];
    Ok(RunState {
        epoch: 0,
        model,
        velocity,
        log: Vec::new(),
        checkpoints: Vec::new(),
        reservoir: Reservoir::new(cfg.reservoir, cfg.seed),
    })
}

/// Runs one epoch and evaluates when scheduled.
pub fn run_epoch(
    dataset: &Dataset,
    cfg: &TrainConfig,
    plugin: &LossPlugin,
    state: &mut RunState,
) -> Result<()> {
    let epoch = state.epoch + 1;
    let steps = steps_per_epoch(dataset, cfg);
    let mut total = 0.0;
    for step in 0..steps {
        total += train_step(dataset, cfg, plugin, state, EpochState { epoch, step })?;
    }
    state.epoch = epoch;
    let metrics = if epoch.is_multiple_of(cfg.eval_every) || epoch == cfg.epochs {
        let mixed = state.reservoir.reencode(&state.model, dataset)?;
        Some(evaluate(&state.model, dataset, &mixed, &RECALL_KS)?)
    } else {
        None
    };
    state.log.push(EpochLog {
        epoch,
        train_loss: total / steps as f64,
        metrics,
    });
    if cfg.optimizer.decay_epochs.contains(&epoch) && epoch < cfg.epochs {
        state.checkpoints.push((epoch, state.model.clone()));
    }
    Ok(())
}

pub fn train(dataset: &Dataset, cfg: &TrainConfig) -> Result<RunState> {
    let (_, plugin) = cfg.loss.resolve()?;
    let mut state = start(dataset, cfg)?;
    while state.epoch < cfg.epochs {
        run_epoch(dataset, cfg, &plugin, &mut state)?;
    }
    Ok(state)
}
