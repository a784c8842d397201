//! Task-by-task training with frozen encoder, per-task subnetwork masks and
//! evaluation of every task seen so far.

use std::cell::RefCell;

use crate::error::{Error, Result};
use crate::graph::{SplitKind, TaskGraph, TaskSequence};
use crate::masking::{trainable_set, Bitmask};
use crate::metrics::RMatrix;
use crate::model::{accuracy, mean_nll, RamCgModel, TrainPlan};
use crate::optim::{MaskedAdam, UpdateGroup};
use crate::tensor::{ParamId, ParamStore, Tape, Tensor, Var};

/// Where the trainer gets task graphs from.
pub trait TaskSource {
    fn num_tasks(&self) -> usize;
    fn task(&self, t: usize) -> Result<&TaskGraph>;
}

impl TaskSource for TaskSequence {
    fn num_tasks(&self) -> usize {
        self.len()
    }

    fn task(&self, t: usize) -> Result<&TaskGraph> {
        self.tasks()
            .get(t)
            .ok_or_else(|| Error::Protocol(format!("task {t} out of range ({} tasks)", self.len())))
    }
}

/// Wraps a source and records every task index requested from it.
pub struct AuditedSource<'a, S: TaskSource + ?Sized> {
    inner: &'a S,
    log: RefCell<Vec<usize>>,
}

impl<'a, S: TaskSource + ?Sized> AuditedSource<'a, S> {
    pub fn new(inner: &'a S) -> Self {
        AuditedSource {
            inner,
            log: RefCell::new(Vec::new()),
        }
    }

    /// Task indices requested since the last call, in order.
    pub fn take_accesses(&self) -> Vec<usize> {
        std::mem::take(&mut self.log.borrow_mut())
    }
}

impl<S: TaskSource + ?Sized> TaskSource for AuditedSource<'_, S> {
    fn num_tasks(&self) -> usize {
        self.inner.num_tasks()
    }

    fn task(&self, t: usize) -> Result<&TaskGraph> {
        self.log.borrow_mut().push(t);
        self.inner.task(t)
    }
}

/// What happened while training one task.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskReport {
    pub task: usize,
    /// Training loss at each epoch, measured before that epoch's update.
    pub losses: Vec<f64>,
    /// Number of updates applied before the kept state (`epochs` = final state).
    pub kept_after: usize,
    /// Validation loss of the kept state, when early-keep was active.
    pub best_val_loss: Option<f64>,
    /// Weights selected for the task.
    pub selected: usize,
    /// Selected weights that no earlier task had claimed.
    pub newly_claimed: usize,
}

pub(crate) fn snapshot(store: &ParamStore, ids: &[ParamId]) -> Vec<Tensor> {
    ids.iter().map(|&id| store.value(id).clone()).collect()
}

pub(crate) fn restore(store: &mut ParamStore, ids: &[ParamId], values: Vec<Tensor>) {
    for (&id, v) in ids.iter().zip(values) {
        store.get_mut(id).value = v;
    }
}

pub(crate) fn check_finite(store: &ParamStore, ids: &[ParamId], context: &str) -> Result<()> {
    match ids.iter().find(|&&id| !store.value(id).is_finite()) {
        Some(&id) => Err(Error::Numerical(format!(
            "{context}: parameter `{}` became non-finite",
            store.get(id).name
        ))),
        None => Ok(()),
    }
}

/// Log-probabilities restricted to the first `classes` logits.
pub(crate) fn task_log_probs(tape: &mut Tape, logits: Var, classes: usize) -> Result<Var> {
    let sliced = if tape.value(logits).cols() == classes {
        logits
    } else {
        tape.slice_cols(logits, 0, classes)?
    };
    Ok(tape.log_softmax_rows(sliced))
}

pub(crate) fn train_nodes(task: &TaskGraph, t: usize) -> Result<(Vec<usize>, Vec<usize>)> {
    let (nodes, labels) = task.labeled(SplitKind::Train);
    if nodes.is_empty() {
        return Err(Error::InvalidArgument(format!("task {t} has no labeled training nodes")));
    }
    Ok((nodes, labels))
}

/// Test accuracy of task `t` under its committed mask.
pub fn evaluate_task(model: &RamCgModel, h: &Tensor, task: &TaskGraph, t: usize) -> Result<f64> {
    let logits = model.evaluate_with_mask(h, t)?;
    let (nodes, labels) = task.labeled(SplitKind::Test);
    accuracy(&logits, task.num_classes, &nodes, &labels)
        .map_err(|_| Error::InvalidArgument(format!("task {t} has no labeled test nodes")))
}

/// Drives the model through a task sequence one task at a time.
#[derive(Clone, Debug)]
pub struct ContinualTrainer {
    pub model: RamCgModel,
    plan: TrainPlan,
    feature_dim: usize,
    opt: MaskedAdam,
    encoded: Vec<Option<Tensor>>,
    rmatrix: RMatrix,
    reports: Vec<TaskReport>,
    frozen_digest: Option<String>,
}

impl ContinualTrainer {
    pub fn new(plan: &TrainPlan, feature_dim: usize, num_classes: usize) -> Result<Self> {
        let model = RamCgModel::new(plan, feature_dim, num_classes)?;
        Ok(Self::from_model(plan, model, feature_dim))
    }

    /// Resumes around an existing model; its committed masks decide the next task.
    pub fn from_model(plan: &TrainPlan, model: RamCgModel, feature_dim: usize) -> Self {
        let mut opt = MaskedAdam::new(plan.adam);
        opt.reset();
        ContinualTrainer {
            model,
            plan: plan.clone(),
            feature_dim,
            opt,
            encoded: Vec::new(),
            rmatrix: RMatrix::new(),
            reports: Vec::new(),
            frozen_digest: None,
        }
    }

    pub fn next_task(&self) -> usize {
        self.model.registry.num_committed()
    }

    pub fn rmatrix(&self) -> &RMatrix {
        &self.rmatrix
    }

    pub fn reports(&self) -> &[TaskReport] {
        &self.reports
    }

    pub fn plan(&self) -> &TrainPlan {
        &self.plan
    }

    /// Parameters trained only on the first task: the encoder and classifier.
    pub fn shared_params(&self) -> Vec<ParamId> {
        let mut ids = self.model.encoder_params();
        ids.extend(self.model.classifier.params());
        ids
    }

    /// Digest of the shared parameters taken when they were frozen.
    pub fn frozen_digest(&self) -> Option<&str> {
        self.frozen_digest.as_deref()
    }

    fn check_task(&self, task: &TaskGraph, t: usize) -> Result<()> {
        if task.feature_dim() != self.feature_dim {
            return Err(Error::InvalidArgument(format!(
                "task {t} has feature dimension {}, model expects {}",
                task.feature_dim(),
                self.feature_dim
            )));
        }
        if task.num_classes > self.model.num_classes {
            return Err(Error::InvalidArgument(format!(
                "task {t} has {} classes, classifier has {}",
                task.num_classes, self.model.num_classes
            )));
        }
        Ok(())
    }

    /// Frozen-encoder representation of task `t`, cached after first use.
    fn encoding(&mut self, task: &TaskGraph, t: usize) -> Result<Tensor> {
        if self.encoded.len() <= t {
            self.encoded.resize(t + 1, None);
        }
        if let Some(h) = &self.encoded[t] {
            return Ok(h.clone());
        }
        let h = self.model.encode(&task.features, &task.csr)?;
        if !h.is_finite() {
            return Err(Error::Numerical(format!("encoder output for task {t} is non-finite")));
        }
        self.encoded[t] = Some(h.clone());
        Ok(h)
    }

    /// Trains task `t`, which must be the next uncommitted task, and commits its mask.
    /// Only task `t` is read from `src`.
    pub fn train_task<S: TaskSource + ?Sized>(&mut self, src: &S, t: usize) -> Result<&TaskReport> {
        if t != self.next_task() {
            return Err(Error::Protocol(format!(
                "task {t} requested but task {} is next",
                self.next_task()
            )));
        }
        let task = src.task(t)?;
        self.check_task(task, t)?;
        let (train, train_y) = train_nodes(task, t)?;
        let (val, val_y) = task.labeled(SplitKind::Val);
        let keep_best = self.plan.early_keep && !val.is_empty();
        let classes = task.num_classes;
        let first = t == 0;
        let claimed = self.model.registry.union();

        let fixed_h = if first { None } else { Some(self.encoding(task, t)?) };
        let shared = if first { self.shared_params() } else { Vec::new() };
        let layers = self.model.backbone.layers.clone();
        let scores = self.model.backbone.scores.clone();
        let kept: Vec<ParamId> = shared.iter().chain(&layers).chain(&scores).copied().collect();

        self.opt.reset();
        let mut losses = Vec::with_capacity(self.plan.epochs_per_task);
        let mut best: Option<(f64, usize, Vec<Tensor>)> = None;
        for epoch in 0..=self.plan.epochs_per_task {
            let phi = self.model.current_selection()?;
            let mut tape = Tape::new();
            let h = match &fixed_h {
                Some(h) => tape.constant(h.clone()),
                None => {
                    let x = tape.constant(task.features.clone());
                    self.model.encoder.forward(&mut tape, &self.model.store, x, &task.csr)?
                }
            };
            let logits = self.model.logits(&mut tape, h, &phi)?;
            if keep_best {
                let loss = mean_nll(tape.value(logits), classes, &val, &val_y)?;
                if best.as_ref().is_none_or(|b| loss < b.0) {
                    best = Some((loss, epoch, snapshot(&self.model.store, &kept)));
                }
            }
            // the extra pass only scores the state left by the last update
            if epoch == self.plan.epochs_per_task {
                break;
            }
            let logp = task_log_probs(&mut tape, logits, classes)?;
            let loss = tape.nll(logp, &train, &train_y)?;
            let lv = tape.value(loss).item()?;
            if !lv.is_finite() {
                return Err(Error::Numerical(format!("task {t}, epoch {epoch}: loss is {lv}")));
            }
            losses.push(lv);

            self.model.store.zero_grad();
            tape.backward(loss, &mut self.model.store)?;
            let xi = trainable_set(&phi, &claimed);
            let per_layer = self.model.backbone.split(&xi);
            let mut groups: Vec<UpdateGroup<'_>> = shared.iter().map(|&id| (id, None)).collect();
            groups.extend(layers.iter().zip(per_layer).map(|(&id, m)| (id, Some(m))));
            groups.extend(scores.iter().map(|&id| (id, None)));
            self.opt.step(&mut self.model.store, &groups);
        }
        self.model.store.zero_grad();

        let (kept_after, best_val_loss) = match best {
            Some((loss, epoch, values)) => {
                restore(&mut self.model.store, &kept, values);
                (epoch, Some(loss))
            }
            None => (self.plan.epochs_per_task, None),
        };
        check_finite(&self.model.store, &kept, &format!("task {t}"))?;

        let mask = self.model.current_selection()?;
        let selected = mask.count();
        let newly_claimed = trainable_set(&mask, &claimed).count();
        self.model.registry.commit(t, mask)?;
        if first {
            let ids = self.shared_params();
            self.model.store.set_trainable(&ids, false);
            self.frozen_digest = Some(self.model.store.digest_of(&ids));
        }
        self.reports.push(TaskReport {
            task: t,
            losses,
            kept_after,
            best_val_loss,
            selected,
            newly_claimed,
        });
        Ok(self.reports.last().expect("just pushed"))
    }

    /// Test accuracy of every committed task `0..=upto` with its own mask.
    pub fn evaluate_all<S: TaskSource + ?Sized>(&mut self, src: &S, upto: usize) -> Result<Vec<f64>> {
        (0..=upto)
            .map(|t| {
                let task = src.task(t)?;
                self.check_task(task, t)?;
                let h = self.encoding(task, t)?;
                evaluate_task(&self.model, &h, task, t)
            })
            .collect()
    }

    /// Trains the next task, evaluates all tasks so far and records the row.
    pub fn step<S: TaskSource + ?Sized>(&mut self, src: &S) -> Result<Vec<f64>> {
        let t = self.next_task();
        self.train_task(src, t)?;
        let row = self.evaluate_all(src, t)?;
        self.rmatrix.push_row(row.clone())?;
        Ok(row)
    }

    /// Trains and evaluates every remaining task of `src`.
    pub fn run<S: TaskSource + ?Sized>(&mut self, src: &S) -> Result<&RMatrix> {
        while self.next_task() < src.num_tasks() {
            self.step(src)?;
        }
        Ok(&self.rmatrix)
    }

    /// The committed mask of task `t`.
    pub fn mask(&self, t: usize) -> Result<&Bitmask> {
        self.model.registry.mask(t)
    }
}

/// Full relation-aware continual run over a sequence.
pub fn run_continual(seq: &TaskSequence, plan: &TrainPlan) -> Result<ContinualTrainer> {
    let mut trainer = ContinualTrainer::new(plan, seq.feature_dim(), seq.max_classes())?;
    trainer.run(seq)?;
    Ok(trainer)
}
