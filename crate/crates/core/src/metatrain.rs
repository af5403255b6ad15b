//! Training: the inner adaptation step, the meta-gradient that
//! differentiates through it, and the step/loop machinery for the
//! meta-learning method and its two baselines.
//!
//! One meta update works on the current parameter snapshot: it takes
//! the regularizer gradient on an auxiliary batch, adapts the target
//! view by one inner gradient step on a target batch, backpropagates
//! the post-adaptation loss on a second target batch through that step
//! (a gradient minus a scaled Hessian-vector product), and applies
//! everything at once with momentum and weight decay on the outer
//! update only.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::functional::{grad, hvp, value_and_grad, HvpBackend, ScalarFn};
use crate::autodiff::params::ParamVector;
use crate::data::{Batch, Dataset};
use crate::error::{Error, Result};
use crate::harness::evaluate;
use crate::model::{Head, TwoHeadParams};
use crate::scalar::Scalar;

/// Training method selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Finetune,
    Joint,
    MetaFgNet,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Method::Finetune => "finetune",
            Method::Joint => "joint",
            Method::MetaFgNet => "metafgnet",
        };
        write!(f, "{name}")
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "finetune" => Ok(Method::Finetune),
            "joint" => Ok(Method::Joint),
            "metafgnet" => Ok(Method::MetaFgNet),
            other => Err(Error::InvalidConfig(format!(
                "unknown method `{other}` (expected finetune|joint|metafgnet)"
            ))),
        }
    }
}

/// Hyperparameters of one training phase.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Inner adaptation step size.
    pub eta: f64,
    /// Outer learning rate.
    pub alpha: f64,
    /// Epoch indices at which both rates are divided by 10.
    pub lr_decay_epochs: Vec<usize>,
    /// Target batch size for the adaptation batch.
    pub batch_target: usize,
    /// Target batch size for the post-adaptation (meta) batch.
    pub batch_meta: usize,
    /// Auxiliary batch size for the regularizer.
    pub batch_aux: usize,
    pub epochs: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Multiplier on the auxiliary regularizer term; 0 disables the
    /// source path entirely.
    pub reg_weight: f64,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::InvalidConfig(msg.to_string()));
        if self.eta < 0.0 || !self.eta.is_finite() {
            return fail("eta must be finite and >= 0");
        }
        if self.alpha <= 0.0 || !self.alpha.is_finite() {
            return fail("alpha must be finite and > 0");
        }
        if self.batch_target == 0 || self.batch_meta == 0 || self.batch_aux == 0 {
            return fail("batch sizes must be >= 1");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return fail("momentum must lie in [0, 1)");
        }
        if self.weight_decay < 0.0 || self.reg_weight < 0.0 {
            return fail("weight decay and regularizer weight must be >= 0");
        }
        Ok(())
    }

    /// Learning-rate divisor in force at `epoch` (0-based).
    fn decay_factor(&self, epoch: usize) -> f64 {
        let crossings = self.lr_decay_epochs.iter().filter(|&&b| b <= epoch).count();
        10f64.powi(crossings as i32)
    }

    pub fn alpha_at(&self, epoch: usize) -> f64 {
        self.alpha / self.decay_factor(epoch)
    }

    /// The inner step size decays on the same boundaries as `alpha` to
    /// stay synchronized with it.
    pub fn eta_at(&self, epoch: usize) -> f64 {
        self.eta / self.decay_factor(epoch)
    }
}

/// Momentum state for one optimized parameter vector.
#[derive(Debug, Clone)]
pub struct SgdState<S = f64> {
    buffer: ParamVector<S>,
}

impl<S: Scalar> SgdState<S> {
    pub fn new(layout: &Arc<crate::autodiff::params::Layout>) -> Self {
        SgdState {
            buffer: ParamVector::zeros(Arc::clone(layout)),
        }
    }
}

/// Losses observed during one step, for reporting.
#[derive(Debug, Clone, Copy)]
pub struct StepStats<S = f64> {
    /// The method's target-term loss: post-adaptation loss for the meta
    /// method, plain target-batch loss otherwise.
    pub target_loss: S,
    /// Unweighted auxiliary regularizer loss (zero when unused).
    pub source_loss: S,
}

/// The meta-gradient over the pre-adaptation parameters, plus the
/// post-adaptation loss it backpropagated.
#[derive(Debug, Clone)]
pub struct MetaGradient<S = f64> {
    pub grad: ParamVector<S>,
    pub adapted_loss: S,
}

/// One inner gradient-descent step: `p - eta * grad(f at p on batch)`.
/// A zero step size returns `p` bit-exactly.
pub fn inner_step_fn<S: Scalar>(
    f: &dyn ScalarFn<S>,
    p: &ParamVector<S>,
    batch: &Batch<S>,
    eta: S,
) -> Result<ParamVector<S>> {
    if eta == S::zero() {
        return Ok(p.clone());
    }
    let g = grad(f, p, batch)?;
    let mut adapted = p.clone();
    adapted.axpy(-eta, &g);
    Ok(adapted)
}

/// The gradient of the post-adaptation loss with respect to the
/// pre-adaptation parameters:
/// `g' - eta * H(inner batch) . g'` where `g'` is the gradient of the
/// loss on `batch_meta` at the adapted parameters. The Hessian acts
/// through a single Hessian-vector product and is never materialized.
pub fn meta_gradient_fn<S: Scalar>(
    f: &dyn ScalarFn<S>,
    p: &ParamVector<S>,
    batch_inner: &Batch<S>,
    batch_meta: &Batch<S>,
    eta: S,
    backend: HvpBackend<S>,
) -> Result<MetaGradient<S>> {
    let adapted = inner_step_fn(f, p, batch_inner, eta)?;
    let (adapted_loss, g_meta) = value_and_grad(f, &adapted, batch_meta)?;
    if eta == S::zero() {
        return Ok(MetaGradient {
            grad: g_meta,
            adapted_loss,
        });
    }
    let hv = hvp(f, p, batch_inner, &g_meta, backend)?;
    let mut total = g_meta;
    total.axpy(-eta, &hv);
    Ok(MetaGradient {
        grad: total,
        adapted_loss,
    })
}

/// The target and source loss functions a two-head update optimizes.
///
/// The step methods are generic over the losses so the update algebra
/// can be exercised with analytic functions; the model-bound entry
/// points below instantiate them with the two cross-entropy heads.
pub struct Objective<'a, S: Scalar> {
    pub target: &'a dyn ScalarFn<S>,
    pub source: &'a dyn ScalarFn<S>,
}

impl<'a, S: Scalar> Objective<'a, S> {
    /// Applies `update` (full layout, zero outside the active segments)
    /// with weight decay and momentum, in place.
    fn apply(
        &self,
        params: &mut ParamVector<S>,
        update: &ParamVector<S>,
        active: &[String],
        lr: S,
        cfg: &TrainConfig,
        opt: &mut SgdState<S>,
    ) {
        let momentum = S::from_f64_lossy(cfg.momentum);
        let decay = S::from_f64_lossy(cfg.weight_decay);
        let layout = Arc::clone(params.layout());
        for name in active {
            let seg = layout.segment(name).expect("active segment exists");
            let range = seg.offset..seg.offset + seg.len();
            let u = &update.values()[range.clone()];
            let buf = &mut opt.buffer.values_mut()[range.clone()];
            let p = &mut params.values_mut()[range];
            for ((pv, bv), &uv) in p.iter_mut().zip(buf.iter_mut()).zip(u) {
                let d = uv + decay * *pv;
                *bv = momentum * *bv + d;
                *pv -= lr * *bv;
            }
        }
    }

    fn active_with_source(&self, cfg: &TrainConfig) -> Vec<String> {
        let mut names: Vec<String> = self
            .target
            .layout()
            .segments()
            .iter()
            .map(|s| s.name.clone())
            .collect();
        if cfg.reg_weight != 0.0 {
            for seg in self.source.layout().segments() {
                if !names.contains(&seg.name) {
                    names.push(seg.name.clone());
                }
            }
        }
        names
    }

    /// One update of the meta method: regularizer gradient plus
    /// meta-gradient, both taken at the current snapshot and applied
    /// simultaneously.
    pub fn meta_step(
        &self,
        params: &mut ParamVector<S>,
        batch_inner: &Batch<S>,
        batch_meta: &Batch<S>,
        batch_aux: &Batch<S>,
        lr: S,
        eta: S,
        cfg: &TrainConfig,
        opt: &mut SgdState<S>,
    ) -> Result<StepStats<S>> {
        let mut update = ParamVector::zeros(Arc::clone(params.layout()));
        let mut stats = StepStats {
            target_loss: S::zero(),
            source_loss: S::zero(),
        };
        if cfg.reg_weight != 0.0 {
            let source_view = params.gather(self.source.layout());
            let (loss_s, g_s) = value_and_grad(self.source, &source_view, batch_aux)?;
            stats.source_loss = loss_s;
            update.scatter_axpy(S::from_f64_lossy(cfg.reg_weight), &g_s);
        }
        let target_view = params.gather(self.target.layout());
        let meta = meta_gradient_fn(
            self.target,
            &target_view,
            batch_inner,
            batch_meta,
            eta,
            HvpBackend::Exact,
        )?;
        stats.target_loss = meta.adapted_loss;
        update.scatter_axpy(S::one(), &meta.grad);
        let active = self.active_with_source(cfg);
        self.apply(params, &update, &active, lr, cfg, opt);
        Ok(stats)
    }

    /// One joint-training update: the sum of the target loss and the
    /// weighted regularizer, by plain SGD.
    pub fn joint_step(
        &self,
        params: &mut ParamVector<S>,
        batch_target: &Batch<S>,
        batch_aux: &Batch<S>,
        lr: S,
        cfg: &TrainConfig,
        opt: &mut SgdState<S>,
    ) -> Result<StepStats<S>> {
        let mut update = ParamVector::zeros(Arc::clone(params.layout()));
        let mut stats = StepStats {
            target_loss: S::zero(),
            source_loss: S::zero(),
        };
        if cfg.reg_weight != 0.0 {
            let source_view = params.gather(self.source.layout());
            let (loss_s, g_s) = value_and_grad(self.source, &source_view, batch_aux)?;
            stats.source_loss = loss_s;
            update.scatter_axpy(S::from_f64_lossy(cfg.reg_weight), &g_s);
        }
        let target_view = params.gather(self.target.layout());
        let (loss_t, g_t) = value_and_grad(self.target, &target_view, batch_target)?;
        stats.target_loss = loss_t;
        update.scatter_axpy(S::one(), &g_t);
        let active = self.active_with_source(cfg);
        self.apply(params, &update, &active, lr, cfg, opt);
        Ok(stats)
    }

    /// One SGD step on the target loss only; the source head is frozen.
    pub fn target_step(
        &self,
        params: &mut ParamVector<S>,
        batch: &Batch<S>,
        lr: S,
        cfg: &TrainConfig,
        opt: &mut SgdState<S>,
    ) -> Result<StepStats<S>> {
        let target_view = params.gather(self.target.layout());
        let (loss_t, g_t) = value_and_grad(self.target, &target_view, batch)?;
        let mut update = ParamVector::zeros(Arc::clone(params.layout()));
        update.scatter_axpy(S::one(), &g_t);
        let active: Vec<String> = self
            .target
            .layout()
            .segments()
            .iter()
            .map(|s| s.name.clone())
            .collect();
        self.apply(params, &update, &active, lr, cfg, opt);
        Ok(StepStats {
            target_loss: loss_t,
            source_loss: S::zero(),
        })
    }

    /// One SGD step on the source loss only; the target head is frozen.
    pub fn source_step(
        &self,
        params: &mut ParamVector<S>,
        batch: &Batch<S>,
        lr: S,
        cfg: &TrainConfig,
        opt: &mut SgdState<S>,
    ) -> Result<StepStats<S>> {
        let source_view = params.gather(self.source.layout());
        let (loss_s, g_s) = value_and_grad(self.source, &source_view, batch)?;
        let mut update = ParamVector::zeros(Arc::clone(params.layout()));
        update.scatter_axpy(S::one(), &g_s);
        let active: Vec<String> = self
            .source
            .layout()
            .segments()
            .iter()
            .map(|s| s.name.clone())
            .collect();
        self.apply(params, &update, &active, lr, cfg, opt);
        Ok(StepStats {
            target_loss: S::zero(),
            source_loss: loss_s,
        })
    }
}

/// [`inner_step_fn`] on a model's target view.
pub fn inner_step<S: Scalar>(
    model: &TwoHeadParams<S>,
    batch: &Batch<S>,
    eta: f64,
) -> Result<ParamVector<S>> {
    inner_step_fn(
        &model.loss_fn(Head::Target),
        &model.view(Head::Target),
        batch,
        S::from_f64_lossy(eta),
    )
}

/// [`meta_gradient_fn`] on a model's target view with the exact
/// Hessian-vector backend.
pub fn meta_gradient<S: Scalar>(
    model: &TwoHeadParams<S>,
    batch_inner: &Batch<S>,
    batch_meta: &Batch<S>,
    eta: f64,
) -> Result<MetaGradient<S>> {
    meta_gradient_fn(
        &model.loss_fn(Head::Target),
        &model.view(Head::Target),
        batch_inner,
        batch_meta,
        S::from_f64_lossy(eta),
        HvpBackend::Exact,
    )
}

/// One meta update of a model, at the configured (unscheduled) rates.
pub fn meta_train_step<S: Scalar>(
    model: &mut TwoHeadParams<S>,
    batch_inner: &Batch<S>,
    batch_meta: &Batch<S>,
    batch_aux: &Batch<S>,
    cfg: &TrainConfig,
    opt: &mut SgdState<S>,
) -> Result<StepStats<S>> {
    cfg.validate()?;
    let target = model.loss_fn(Head::Target);
    let source = model.loss_fn(Head::Source);
    let objective = Objective {
        target: &target,
        source: &source,
    };
    objective.meta_step(
        model.params_mut(),
        batch_inner,
        batch_meta,
        batch_aux,
        S::from_f64_lossy(cfg.alpha),
        S::from_f64_lossy(cfg.eta),
        cfg,
        opt,
    )
}

/// One joint-training update of a model.
pub fn joint_train_step<S: Scalar>(
    model: &mut TwoHeadParams<S>,
    batch_target: &Batch<S>,
    batch_aux: &Batch<S>,
    cfg: &TrainConfig,
    opt: &mut SgdState<S>,
) -> Result<StepStats<S>> {
    cfg.validate()?;
    let target = model.loss_fn(Head::Target);
    let source = model.loss_fn(Head::Source);
    let objective = Objective {
        target: &target,
        source: &source,
    };
    objective.joint_step(
        model.params_mut(),
        batch_target,
        batch_aux,
        S::from_f64_lossy(cfg.alpha),
        cfg,
        opt,
    )
}

/// One recorded training iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct IterRecord {
    pub iteration: usize,
    pub epoch: usize,
    /// Target-term loss (post-adaptation loss for the meta method).
    pub meta_loss: f64,
    /// Unweighted regularizer loss; zero for target-only phases.
    pub reg_loss: f64,
    pub lr: f64,
    pub meta_lr: f64,
}

/// The record of one training run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    pub records: Vec<IterRecord>,
    /// Target test accuracy after each epoch, when an evaluation set
    /// was supplied.
    pub epoch_accuracy: Vec<(usize, f64)>,
    /// Wall-clock per iteration in milliseconds; informational only and
    /// never serialized.
    pub iter_wall_ms: Vec<f64>,
}

impl TrainReport {
    pub fn final_meta_loss(&self) -> Option<f64> {
        self.records.last().map(|r| r.meta_loss)
    }

    pub fn final_reg_loss(&self) -> Option<f64> {
        self.records.last().map(|r| r.reg_loss)
    }

    /// Writes the per-iteration table as CSV.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "iteration,epoch,meta_loss,reg_loss,lr,meta_lr")?;
        for r in &self.records {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                r.iteration, r.epoch, r.meta_loss, r.reg_loss, r.lr, r.meta_lr
            )?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads back a CSV written by [`write_csv`](Self::write_csv).
    pub fn read_csv(path: &Path) -> Result<Vec<IterRecord>> {
        let malformed = |detail: String| Error::MalformedFile {
            path: path.to_path_buf(),
            detail,
        };
        let r = BufReader::new(File::open(path)?);
        let mut lines = r.lines();
        let header = lines
            .next()
            .transpose()?
            .ok_or_else(|| malformed("empty file".to_string()))?;
        if header != "iteration,epoch,meta_loss,reg_loss,lr,meta_lr" {
            return Err(malformed(format!("unexpected header `{header}`")));
        }
        let mut records = Vec::new();
        for (lineno, line) in lines.enumerate() {
            let line = line?;
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 6 {
                return Err(malformed(format!("line {}: wrong field count", lineno + 2)));
            }
            let parse_usize = |s: &str| {
                s.parse::<usize>()
                    .map_err(|_| malformed(format!("line {}: bad integer", lineno + 2)))
            };
            let parse_f64 = |s: &str| {
                s.parse::<f64>()
                    .map_err(|_| malformed(format!("line {}: bad float", lineno + 2)))
            };
            records.push(IterRecord {
                iteration: parse_usize(fields[0])?,
                epoch: parse_usize(fields[1])?,
                meta_loss: parse_f64(fields[2])?,
                reg_loss: parse_f64(fields[3])?,
                lr: parse_f64(fields[4])?,
                meta_lr: parse_f64(fields[5])?,
            });
        }
        Ok(records)
    }
}

/// Which loop body a phase runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum LoopKind {
    Warmup,
    Finetune,
    Joint,
    Meta,
}

impl LoopKind {
    fn of(method: Method) -> Self {
        match method {
            Method::Finetune => LoopKind::Finetune,
            Method::Joint => LoopKind::Joint,
            Method::MetaFgNet => LoopKind::Meta,
        }
    }
}

/// The datasets a training loop draws from.
pub struct LoopData<'a, S = f64> {
    pub target_train: &'a Dataset<S>,
    pub auxiliary: Option<&'a Dataset<S>>,
    /// When present, target accuracy is recorded after each epoch.
    pub target_eval: Option<&'a Dataset<S>>,
}

/// Independent RNG streams for target and auxiliary batch sampling.
pub(crate) fn loop_rngs(seed: u64) -> (ChaCha8Rng, ChaCha8Rng) {
    let mut rng_target = ChaCha8Rng::seed_from_u64(seed);
    rng_target.set_stream(1);
    let mut rng_aux = ChaCha8Rng::seed_from_u64(seed);
    rng_aux.set_stream(2);
    (rng_target, rng_aux)
}

fn run_loop<S: Scalar>(
    model: &mut TwoHeadParams<S>,
    kind: LoopKind,
    data: &LoopData<S>,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    cfg.validate()?;
    let needs_aux = matches!(kind, LoopKind::Warmup | LoopKind::Joint | LoopKind::Meta)
        && (kind == LoopKind::Warmup || cfg.reg_weight != 0.0);
    if needs_aux && data.auxiliary.is_none() {
        return Err(Error::InvalidConfig(
            "this training method needs an auxiliary dataset".to_string(),
        ));
    }

    let target = model.loss_fn(Head::Target);
    let source = model.loss_fn(Head::Source);
    let objective = Objective {
        target: &target,
        source: &source,
    };
    let mut opt = SgdState::new(model.params().layout());
    let (mut rng_target, mut rng_aux) = loop_rngs(cfg.seed);

    let (per_epoch_set, per_epoch_batch) = match kind {
        LoopKind::Warmup => (data.auxiliary.unwrap().len(), cfg.batch_aux),
        _ => (data.target_train.len(), cfg.batch_target),
    };
    if per_epoch_set == 0 {
        return Err(Error::EmptyDataset);
    }
    let iterations_per_epoch = per_epoch_set.div_ceil(per_epoch_batch);

    let mut report = TrainReport::default();
    let mut iteration = 0usize;
    for epoch in 0..cfg.epochs {
        let lr = cfg.alpha_at(epoch);
        let eta = cfg.eta_at(epoch);
        for _ in 0..iterations_per_epoch {
            let started = Instant::now();
            let stats = match kind {
                LoopKind::Warmup => {
                    let batch = data.auxiliary.unwrap().sample_batch(cfg.batch_aux, &mut rng_aux)?;
                    objective.source_step(
                        model.params_mut(),
                        &batch,
                        S::from_f64_lossy(lr),
                        cfg,
                        &mut opt,
                    )?
                }
                LoopKind::Finetune => {
                    let batch = data
                        .target_train
                        .sample_batch(cfg.batch_target, &mut rng_target)?;
                    objective.target_step(
                        model.params_mut(),
                        &batch,
                        S::from_f64_lossy(lr),
                        cfg,
                        &mut opt,
                    )?
                }
                LoopKind::Joint => {
                    let batch_t = data
                        .target_train
                        .sample_batch(cfg.batch_target, &mut rng_target)?;
                    let batch_s = sample_aux(data, cfg, &mut rng_aux)?;
                    objective.joint_step(
                        model.params_mut(),
                        &batch_t,
                        &batch_s,
                        S::from_f64_lossy(lr),
                        cfg,
                        &mut opt,
                    )?
                }
                LoopKind::Meta => {
                    let batch_i = data
                        .target_train
                        .sample_batch(cfg.batch_target, &mut rng_target)?;
                    let batch_j = data
                        .target_train
                        .sample_batch(cfg.batch_meta, &mut rng_target)?;
                    let batch_s = sample_aux(data, cfg, &mut rng_aux)?;
                    objective.meta_step(
                        model.params_mut(),
                        &batch_i,
                        &batch_j,
                        &batch_s,
                        S::from_f64_lossy(lr),
                        S::from_f64_lossy(eta),
                        cfg,
                        &mut opt,
                    )?
                }
            };
            report.records.push(IterRecord {
                iteration,
                epoch,
                meta_loss: stats.target_loss.to_f64_lossy(),
                reg_loss: stats.source_loss.to_f64_lossy(),
                lr,
                meta_lr: eta,
            });
            report
                .iter_wall_ms
                .push(started.elapsed().as_secs_f64() * 1e3);
            iteration += 1;
        }
        if let Some(eval) = data.target_eval {
            report
                .epoch_accuracy
                .push((epoch, evaluate(model, eval)?));
        }
    }
    Ok(report)
}

fn sample_aux<'a, S: Scalar>(
    data: &LoopData<'a, S>,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Batch<S>> {
    if cfg.reg_weight == 0.0 {
        return Ok(Batch::empty());
    }
    data.auxiliary
        .expect("presence checked above")
        .sample_batch(cfg.batch_aux, rng)
}

/// Trains the (base, source head) view on auxiliary data only — the
/// pre-training analog every experiment starts from.
pub fn warmup<S: Scalar>(
    model: &mut TwoHeadParams<S>,
    auxiliary: &Dataset<S>,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    let data = LoopData {
        target_train: auxiliary,
        auxiliary: Some(auxiliary),
        target_eval: None,
    };
    run_loop(model, LoopKind::Warmup, &data, cfg)
}

/// Epochs of SGD on the target loss only; the source head stays frozen.
/// The caller re-initializes the target head beforehand when the
/// protocol calls for it.
pub fn finetune<S: Scalar>(
    model: &mut TwoHeadParams<S>,
    data: &LoopData<S>,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    run_loop(model, LoopKind::Finetune, data, cfg)
}

/// Runs the full training loop for one method, applying the
/// divide-by-10 schedule to both the learning rate and the inner step
/// size, and recording one row per iteration.
pub fn train_loop<S: Scalar>(
    model: &mut TwoHeadParams<S>,
    method: Method,
    data: &LoopData<S>,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    run_loop(model, LoopKind::of(method), data, cfg)
}
