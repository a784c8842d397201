//! Synthetic task streams whose latent edge relations keep their meaning
//! across tasks while the relation→label association and the class-conditional
//! feature means drift.
//!
//! Per task:
//! 1. every node draws a relation affinity vector on the simplex;
//! 2. each node pair is joined with probability `edge_prob[r]·a_u[r]·a_v[r]`
//!    for relation `r` (the generating relation is kept as a diagnostic);
//!    with `background_edge_prob` it is instead joined by a background edge
//!    that carries no relation (recorded as relation index `R`);
//! 3. a node's realised relation mix is the share of its edges per relation,
//!    and its label is the argmax of a task-specific linear score of that
//!    mix plus a private Gaussian signal;
//! 4. features combine a fixed embedding of the affinity vector with a
//!    unit class mean that rotates by `drift` radians per task, plus
//!    isotropic noise.
//!
//! Step 2's rule and the affinity embedding are shared by all tasks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use super::{make_splits, TaskGraph, TaskSequence};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// How each task's `C × R` relation→label weight matrix is chosen.
#[derive(Clone, Debug, PartialEq)]
pub enum LabelWeights {
    /// Independent Gaussian matrix per task.
    Random,
    /// One Gaussian matrix reused by every task.
    Shared,
    /// Given matrices, one `C × R` matrix per task.
    Explicit(Vec<Vec<Vec<f64>>>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthStreamConfig {
    pub num_tasks: usize,
    pub nodes_per_task: usize,
    pub num_relations: usize,
    pub num_classes: usize,
    pub feature_dim: usize,
    /// Per-relation pair probability scale; a single value applies to all.
    pub edge_prob: Vec<f64>,
    /// Probability of a relation-free edge between any pair not joined by a relation.
    pub background_edge_prob: f64,
    /// Dirichlet concentration of node affinities; small values are peaky.
    pub affinity_concentration: f64,
    pub label_weights: LabelWeights,
    /// Weight of the (standardised) relation-mix score in the label.
    pub relation_gain: f64,
    /// Weight of the private Gaussian signal in the label.
    pub signal_gain: f64,
    /// Norm of the affinity embedding in the features.
    pub relation_feature_scale: f64,
    /// Norm of the class-mean offset in the features.
    pub class_feature_scale: f64,
    pub feature_noise: f64,
    /// Rotation of each class mean per task, in radians, within a fixed
    /// plane per class. Mean norms and class separation stay constant.
    pub drift: f64,
    pub seed: u64,
}

impl Default for SynthStreamConfig {
    fn default() -> Self {
        SynthStreamConfig {
            num_tasks: 6,
            nodes_per_task: 300,
            num_relations: 4,
            num_classes: 3,
            feature_dim: 16,
            edge_prob: vec![0.12],
            background_edge_prob: 0.0,
            affinity_concentration: 0.3,
            label_weights: LabelWeights::Random,
            relation_gain: 2.0,
            signal_gain: 1.0,
            relation_feature_scale: 1.0,
            class_feature_scale: 1.0,
            feature_noise: 1.0,
            drift: 0.8,
            seed: 0,
        }
    }
}

impl SynthStreamConfig {
    pub fn edge_prob_for(&self, r: usize) -> f64 {
        if self.edge_prob.len() == 1 {
            self.edge_prob[0]
        } else {
            self.edge_prob[r]
        }
    }

    fn check(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.num_tasks == 0 || self.nodes_per_task == 0 || self.feature_dim == 0 {
            return bad("num_tasks, nodes_per_task and feature_dim must be positive".into());
        }
        if self.num_relations == 0 || self.num_classes < 2 {
            return bad("need at least one relation and two classes".into());
        }
        if self.edge_prob.len() != 1 && self.edge_prob.len() != self.num_relations {
            return bad(format!(
                "edge_prob has {} entries for {} relations",
                self.edge_prob.len(),
                self.num_relations
            ));
        }
        if !(0.0..=1.0).contains(&self.background_edge_prob) {
            return bad("background_edge_prob must lie in [0, 1]".into());
        }
        if self.edge_prob.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return bad("edge probabilities must lie in [0, 1]".into());
        }
        if self.affinity_concentration <= 0.0 || !self.affinity_concentration.is_finite() {
            return bad("affinity_concentration must be positive".into());
        }
        if let LabelWeights::Explicit(ws) = &self.label_weights {
            if ws.len() != self.num_tasks
                || ws.iter().any(|w| {
                    w.len() != self.num_classes || w.iter().any(|r| r.len() != self.num_relations)
                })
            {
                return bad("explicit label weights must be num_tasks × C × R".into());
            }
        }
        Ok(())
    }

    /// Degenerate-but-legal settings worth flagging in the output manifest.
    pub fn warnings(&self) -> Vec<String> {
        let mut w = Vec::new();
        if self.num_relations < 2 {
            w.push("fewer than two latent relations".to_string());
        }
        let weights_fixed = match &self.label_weights {
            LabelWeights::Shared => true,
            LabelWeights::Random => self.num_tasks < 2,
            LabelWeights::Explicit(ws) => ws.windows(2).all(|p| p[0] == p[1]),
        };
        if weights_fixed {
            w.push("relation→label weights identical across tasks".to_string());
        }
        if self.drift == 0.0 && weights_fixed {
            w.push("no distribution shift between tasks".to_string());
        }
        w
    }
}

/// Per-task hidden generative quantities, for diagnostics and oracles only.
#[derive(Clone, Debug)]
pub struct TaskDiagnostics {
    pub affinity: Vec<Vec<f64>>,
    pub relation_mix: Vec<Vec<f64>>,
    pub label_weights: Vec<Vec<f64>>,
}

#[derive(Clone, Debug)]
pub struct SynthStream {
    pub sequence: TaskSequence,
    pub diagnostics: Vec<TaskDiagnostics>,
    pub warnings: Vec<String>,
}

fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Vec<Vec<f64>> {
    (0..rows)
        .map(|_| (0..cols).map(|_| rng.sample(StandardNormal)).collect())
        .collect()
}

fn unit_rows(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Vec<Vec<f64>> {
    gaussian_matrix(rng, rows, cols)
        .into_iter()
        .map(|r| {
            let norm = r.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            r.into_iter().map(|v| v / norm).collect()
        })
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Generates a task sequence. A pure function of `cfg`, seed included.
pub fn synth_stream(cfg: &SynthStreamConfig) -> Result<SynthStream> {
    cfg.check()?;
    let (r_count, c_count, d) = (cfg.num_relations, cfg.num_classes, cfg.feature_dim);

    let mut shared = ChaCha8Rng::seed_from_u64(cfg.seed);
    shared.set_stream(0);
    let relation_embedding = unit_rows(&mut shared, r_count, d);
    let class_base = unit_rows(&mut shared, c_count, d);
    let drift_dir: Vec<Vec<f64>> = unit_rows(&mut shared, c_count, d)
        .into_iter()
        .zip(&class_base)
        .map(|(dir, base)| {
            let along = dot(&dir, base);
            let orth: Vec<f64> = dir.iter().zip(base).map(|(v, b)| v - along * b).collect();
            let norm = dot(&orth, &orth).sqrt().max(1e-12);
            orth.into_iter().map(|v| v / norm).collect()
        })
        .collect();
    let shared_weights = gaussian_matrix(&mut shared, c_count, r_count);

    let gamma = Gamma::new(cfg.affinity_concentration, 1.0)
        .map_err(|e| Error::InvalidArgument(format!("affinity concentration: {e}")))?;

    let mut tasks = Vec::with_capacity(cfg.num_tasks);
    let mut diagnostics = Vec::with_capacity(cfg.num_tasks);
    for t in 0..cfg.num_tasks {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(1 + t as u64);
        let n = cfg.nodes_per_task;

        let weights = match &cfg.label_weights {
            LabelWeights::Random => gaussian_matrix(&mut rng, c_count, r_count),
            LabelWeights::Shared => shared_weights.clone(),
            LabelWeights::Explicit(ws) => ws[t].clone(),
        };

        let affinity: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let mut a: Vec<f64> = (0..r_count).map(|_| gamma.sample(&mut rng)).collect();
                let s: f64 = a.iter().sum();
                if s > 0.0 {
                    a.iter_mut().for_each(|v| *v /= s);
                } else {
                    a.fill(1.0 / r_count as f64);
                }
                a
            })
            .collect();

        let mut edges = Vec::new();
        let mut relations = Vec::new();
        let mut counts = vec![vec![0usize; r_count]; n];
        for u in 0..n {
            for v in u + 1..n {
                let draw: f64 = rng.random();
                let mut acc = 0.0;
                let mut joined = false;
                for r in 0..r_count {
                    acc += cfg.edge_prob_for(r) * affinity[u][r] * affinity[v][r];
                    if draw < acc {
                        edges.push((u, v));
                        relations.push(r);
                        counts[u][r] += 1;
                        counts[v][r] += 1;
                        joined = true;
                        break;
                    }
                }
                if !joined && draw < acc + cfg.background_edge_prob {
                    edges.push((u, v));
                    relations.push(r_count);
                }
            }
        }

        let relation_mix: Vec<Vec<f64>> = (0..n)
            .map(|u| {
                let deg: usize = counts[u].iter().sum();
                if deg == 0 {
                    affinity[u].clone()
                } else {
                    counts[u].iter().map(|&k| k as f64 / deg as f64).collect()
                }
            })
            .collect();

        // Relation part of the label score, standardised per class column.
        let mut rel_score: Vec<Vec<f64>> = relation_mix
            .iter()
            .map(|m| weights.iter().map(|w| dot(w, m)).collect())
            .collect();
        for c in 0..c_count {
            let mean = rel_score.iter().map(|s| s[c]).sum::<f64>() / n as f64;
            let var = rel_score.iter().map(|s| (s[c] - mean).powi(2)).sum::<f64>() / n as f64;
            let sd = var.sqrt().max(1e-12);
            rel_score.iter_mut().for_each(|s| s[c] = (s[c] - mean) / sd);
        }

        let (sin, cos) = (cfg.drift * t as f64).sin_cos();
        let class_means: Vec<Vec<f64>> = (0..c_count)
            .map(|c| {
                (0..d)
                    .map(|j| cos * class_base[c][j] + sin * drift_dir[c][j])
                    .collect()
            })
            .collect();

        let mut labels = Vec::with_capacity(n);
        let mut features = Vec::with_capacity(n * d);
        for u in 0..n {
            let score: Vec<f64> = (0..c_count)
                .map(|c| cfg.relation_gain * rel_score[u][c] + cfg.signal_gain * rng.sample::<f64, _>(StandardNormal))
                .collect();
            let mut y = 0;
            for c in 1..c_count {
                if score[c] > score[y] {
                    y = c;
                }
            }
            labels.push(Some(y));
            for j in 0..d {
                let rel: f64 = (0..r_count).map(|r| affinity[u][r] * relation_embedding[r][j]).sum();
                let noise: f64 = rng.sample(StandardNormal);
                features.push(
                    cfg.relation_feature_scale * rel
                        + cfg.class_feature_scale * class_means[y][j]
                        + cfg.feature_noise * noise,
                );
            }
        }

        let labeled: Vec<usize> = (0..n).collect();
        let splits = make_splits(t, n, &labeled, c_count, cfg.seed)?;
        let features = Tensor::matrix(n, d, features)?;
        let mut task = TaskGraph::new(features, edges, labels, splits, c_count)?;
        task.edge_relations = Some(relations);
        tasks.push(task);
        diagnostics.push(TaskDiagnostics {
            affinity,
            relation_mix,
            label_weights: weights,
        });
    }

    Ok(SynthStream {
        sequence: TaskSequence::new(tasks)?,
        diagnostics,
        warnings: cfg.warnings(),
    })
}
