//! Task graphs, CSR adjacency, splits, the on-disk task format and the
//! synthetic drifting stream generator.

mod csr;
mod io;
mod splits;
pub mod synth;

pub use csr::Csr;
pub use io::{load_sequence, load_task_dir, task_dir_name, write_sequence, write_task_dir, MANIFEST_FILE};
pub use splits::{make_splits, SplitKind, Splits};
pub use synth::{synth_stream, LabelWeights, SynthStream, SynthStreamConfig};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// One node-classification task: a single undirected graph with features,
/// partial labels and train/val/test assignment.
#[derive(Clone, Debug)]
pub struct TaskGraph {
    /// `n × D` node features.
    pub features: Tensor,
    /// Input edges as read or generated, before symmetrisation.
    pub edges: Vec<(usize, usize)>,
    pub csr: Csr,
    pub labels: Vec<Option<usize>>,
    pub splits: Splits,
    pub num_classes: usize,
    /// Generating relation of each input edge. Diagnostics only; never fed to a model.
    pub edge_relations: Option<Vec<usize>>,
}

impl TaskGraph {
    pub fn new(
        features: Tensor,
        edges: Vec<(usize, usize)>,
        labels: Vec<Option<usize>>,
        splits: Splits,
        num_classes: usize,
    ) -> Result<Self> {
        let n = features.rows();
        let csr = Csr::build(&edges, n)?;
        let task = TaskGraph {
            features,
            edges,
            csr,
            labels,
            splits,
            num_classes,
            edge_relations: None,
        };
        task.validate()?;
        Ok(task)
    }

    pub fn num_nodes(&self) -> usize {
        self.features.rows()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    /// Labeled nodes of the given split together with their labels.
    pub fn labeled(&self, kind: SplitKind) -> (Vec<usize>, Vec<usize>) {
        self.splits
            .nodes(kind)
            .into_iter()
            .filter_map(|u| self.labels[u].map(|y| (u, y)))
            .unzip()
    }

    /// Checks every structural invariant of a task graph.
    pub fn validate(&self) -> Result<()> {
        let n = self.num_nodes();
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.csr.num_nodes() != n {
            return bad(format!("csr has {} nodes, features {n}", self.csr.num_nodes()));
        }
        if self.labels.len() != n || self.splits.len() != n {
            return bad(format!(
                "{} labels / {} split entries for {n} nodes",
                self.labels.len(),
                self.splits.len()
            ));
        }
        if !self.features.is_finite() {
            return bad("non-finite feature value".into());
        }
        self.csr.check_symmetric_with_self_loops()?;
        for u in 0..n {
            if let Some(y) = self.labels[u] {
                if y >= self.num_classes {
                    return bad(format!("node {u}: label {y} >= {} classes", self.num_classes));
                }
            }
            if self.splits.kind(u) == SplitKind::Train && self.labels[u].is_none() {
                return bad(format!("node {u} is in the train split but unlabeled"));
            }
        }
        if let Some(rel) = &self.edge_relations {
            if rel.len() != self.edges.len() {
                return bad("edge relation count differs from edge count".into());
            }
        }
        Ok(())
    }
}

/// Ordered sequence of disjoint task graphs sharing one feature dimension.
#[derive(Clone, Debug)]
pub struct TaskSequence {
    tasks: Vec<TaskGraph>,
}

impl TaskSequence {
    pub fn new(tasks: Vec<TaskGraph>) -> Result<Self> {
        let Some(first) = tasks.first() else {
            return Err(Error::InvalidArgument("task sequence is empty".into()));
        };
        let d = first.feature_dim();
        for (t, task) in tasks.iter().enumerate() {
            if task.feature_dim() != d {
                return Err(Error::InvalidArgument(format!(
                    "task {t} has feature dim {}, expected {d}",
                    task.feature_dim()
                )));
            }
            task.validate()?;
        }
        Ok(TaskSequence { tasks })
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn task(&self, t: usize) -> &TaskGraph {
        &self.tasks[t]
    }

    pub fn tasks(&self) -> &[TaskGraph] {
        &self.tasks
    }

    pub fn feature_dim(&self) -> usize {
        self.tasks[0].feature_dim()
    }

    /// Largest per-task class count; the shared output width.
    pub fn max_classes(&self) -> usize {
        self.tasks.iter().map(|t| t.num_classes).max().unwrap_or(0)
    }

    /// Keeps only the first `k` tasks.
    pub fn truncated(&self, k: usize) -> Result<Self> {
        Self::new(self.tasks[..k.min(self.tasks.len())].to_vec())
    }
}
