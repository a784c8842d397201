//! Reference learners: a plain graph convolution retrained task after task,
//! and the same network trained jointly on all tasks at once.

use crate::error::Result;
use crate::graph::{SplitKind, TaskGraph, TaskSequence};
use crate::metrics::RMatrix;
use crate::model::{accuracy, mean_nll, TrainPlan};
use crate::optim::{MaskedAdam, UpdateGroup};
use crate::masking::Classifier;
use crate::relation::PlainGcn;
use crate::tensor::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::trainer::{check_finite, restore, snapshot, task_log_probs, train_nodes};

/// Two-layer mean-aggregation GCN with one shared linear head.
#[derive(Clone, Debug)]
pub struct GcnClassifier {
    pub store: ParamStore,
    pub gcn: PlainGcn,
    pub head: Classifier,
    pub num_classes: usize,
}

impl GcnClassifier {
    pub fn new(plan: &TrainPlan, feature_dim: usize, num_classes: usize) -> Result<Self> {
        plan.validate()?;
        let mut rng = plan.init_rng();
        let mut store = ParamStore::new();
        let gcn = PlainGcn::new(
            &mut store,
            &mut rng,
            feature_dim,
            plan.d_enc,
            plan.stack,
            plan.leaky_slope,
            plan.bias,
        );
        let head = Classifier::new(&mut store, &mut rng, "head", plan.d_enc, num_classes, plan.bias);
        Ok(GcnClassifier {
            store,
            gcn,
            head,
            num_classes,
        })
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut ids = self.gcn.params();
        ids.extend(self.head.params());
        ids
    }

    fn logits(&self, tape: &mut Tape, task: &TaskGraph) -> Result<Var> {
        let x = tape.constant(task.features.clone());
        let h = self.gcn.forward(tape, &self.store, x, &task.csr)?;
        self.head.forward(tape, &self.store, h)
    }

    pub fn predict(&self, task: &TaskGraph) -> Result<Tensor> {
        let mut tape = Tape::new();
        let y = self.logits(&mut tape, task)?;
        Ok(tape.value(y).clone())
    }

    fn split_accuracy(&self, task: &TaskGraph, kind: SplitKind) -> Result<Option<f64>> {
        let (nodes, labels) = task.labeled(kind);
        if nodes.is_empty() {
            return Ok(None);
        }
        accuracy(&self.predict(task)?, task.num_classes, &nodes, &labels).map(Some)
    }

    pub fn test_accuracy(&self, task: &TaskGraph) -> Result<f64> {
        self.split_accuracy(task, SplitKind::Test)?.ok_or_else(|| {
            crate::Error::InvalidArgument("task has no labeled test nodes".into())
        })
    }

    /// Mean validation loss over the tasks that have validation nodes.
    fn val_loss(&self, tasks: &[&TaskGraph]) -> Result<Option<f64>> {
        let mut losses = Vec::new();
        for task in tasks {
            let (nodes, labels) = task.labeled(SplitKind::Val);
            if !nodes.is_empty() {
                losses.push(mean_nll(&self.predict(task)?, task.num_classes, &nodes, &labels)?);
            }
        }
        Ok((!losses.is_empty()).then(|| losses.iter().sum::<f64>() / losses.len() as f64))
    }

    /// Trains all parameters on `tasks` together; the per-epoch gradient is
    /// the mean of the per-task loss gradients. Returns the per-epoch losses.
    pub fn fit(&mut self, tasks: &[&TaskGraph], plan: &TrainPlan) -> Result<Vec<f64>> {
        let ids = self.params();
        let mut opt = MaskedAdam::new(plan.adam);
        let scale = 1.0 / tasks.len() as f64;
        let mut losses = Vec::with_capacity(plan.epochs_per_task);
        let mut best: Option<(f64, Vec<Tensor>)> = None;
        for epoch in 0..=plan.epochs_per_task {
            if plan.early_keep {
                if let Some(loss) = self.val_loss(tasks)? {
                    if best.as_ref().is_none_or(|b| loss < b.0) {
                        best = Some((loss, snapshot(&self.store, &ids)));
                    }
                }
            }
            if epoch == plan.epochs_per_task {
                break;
            }
            self.store.zero_grad();
            let mut total = 0.0;
            for (k, task) in tasks.iter().enumerate() {
                let (nodes, labels) = train_nodes(task, k)?;
                let mut tape = Tape::new();
                let logits = self.logits(&mut tape, task)?;
                let logp = task_log_probs(&mut tape, logits, task.num_classes)?;
                let loss = tape.nll(logp, &nodes, &labels)?;
                let lv = tape.value(loss).item()?;
                if !lv.is_finite() {
                    return Err(crate::Error::Numerical(format!("epoch {epoch}: loss is {lv}")));
                }
                total += lv;
                tape.backward(loss, &mut self.store)?;
            }
            losses.push(total * scale);
            if tasks.len() > 1 {
                for &id in &ids {
                    self.store.get_mut(id).grad.data_mut().iter_mut().for_each(|g| *g *= scale);
                }
            }
            let groups: Vec<UpdateGroup<'_>> = ids.iter().map(|&id| (id, None)).collect();
            opt.step(&mut self.store, &groups);
        }
        self.store.zero_grad();
        if let Some((_, values)) = best {
            restore(&mut self.store, &ids, values);
        }
        check_finite(&self.store, &ids, "baseline")?;
        Ok(losses)
    }
}

/// Accuracy matrix of a baseline and its network after the last step.
#[derive(Clone, Debug)]
pub struct BaselineOutcome {
    pub rmatrix: RMatrix,
    pub model: GcnClassifier,
}

/// One network trained on each task in turn with every parameter free to
/// move; row `i` holds accuracies on tasks `1..=i` after training task `i`.
pub fn run_retrained(seq: &TaskSequence, plan: &TrainPlan) -> Result<BaselineOutcome> {
    let mut model = GcnClassifier::new(plan, seq.feature_dim(), seq.max_classes())?;
    let mut rmatrix = RMatrix::new();
    for (t, task) in seq.tasks().iter().enumerate() {
        model.fit(&[task], plan)?;
        let row = seq.tasks()[..=t]
            .iter()
            .map(|past| model.test_accuracy(past))
            .collect::<Result<Vec<_>>>()?;
        rmatrix.push_row(row)?;
    }
    Ok(BaselineOutcome { rmatrix, model })
}

fn fit_joint(seq: &TaskSequence, plan: &TrainPlan) -> Result<GcnClassifier> {
    let mut model = GcnClassifier::new(plan, seq.feature_dim(), seq.max_classes())?;
    let tasks: Vec<&TaskGraph> = seq.tasks().iter().collect();
    model.fit(&tasks, plan)?;
    Ok(model)
}

/// Test accuracy on every task of a network trained on all tasks at once.
pub fn run_joint(seq: &TaskSequence, plan: &TrainPlan) -> Result<Vec<f64>> {
    let model = fit_joint(seq, plan)?;
    seq.tasks().iter().map(|t| model.test_accuracy(t)).collect()
}

/// Accuracy matrix whose row `i` comes from a fresh joint fit on tasks `1..=i`.
pub fn joint_rmatrix(seq: &TaskSequence, plan: &TrainPlan) -> Result<BaselineOutcome> {
    let mut rmatrix = RMatrix::new();
    let mut last = None;
    for k in 1..=seq.len() {
        let prefix = seq.truncated(k)?;
        let model = fit_joint(&prefix, plan)?;
        rmatrix.push_row(
            prefix
                .tasks()
                .iter()
                .map(|t| model.test_accuracy(t))
                .collect::<Result<Vec<_>>>()?,
        )?;
        last = Some(model);
    }
    Ok(BaselineOutcome {
        rmatrix,
        model: last.expect("a sequence has at least one task"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{synth_stream, SynthStreamConfig};

    fn small_plan() -> TrainPlan {
        TrainPlan {
            epochs_per_task: 15,
            d_enc: 8,
            ..Default::default()
        }
    }

    #[test]
    fn single_task_joint_equals_retrained() {
        let cfg = SynthStreamConfig {
            num_tasks: 1,
            nodes_per_task: 60,
            ..Default::default()
        };
        let seq = synth_stream(&cfg).unwrap().sequence;
        let plan = small_plan();
        let joint = run_joint(&seq, &plan).unwrap();
        let retrained = run_retrained(&seq, &plan).unwrap();
        assert_eq!(joint[0].to_bits(), retrained.rmatrix.get(1, 1).unwrap().to_bits());
    }

    #[test]
    fn retrained_matrix_is_lower_triangular() {
        let cfg = SynthStreamConfig {
            num_tasks: 3,
            nodes_per_task: 50,
            ..Default::default()
        };
        let seq = synth_stream(&cfg).unwrap().sequence;
        let r = run_retrained(&seq, &small_plan()).unwrap().rmatrix;
        assert_eq!(r.steps(), 3);
        assert_eq!(r.row(3).unwrap().len(), 3);
    }
}
