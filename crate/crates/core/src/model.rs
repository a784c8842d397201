//! Training plan and the assembled model: encoder → masked backbone → classifier.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::Csr;
use crate::masking::{masked_forward, Backbone, Bitmask, Classifier, TaskMaskRegistry};
use crate::optim::AdamConfig;
use crate::relation::{Encoder, EncoderConfig, PlainGcn, RelationEncoder};
use crate::tensor::{ParamId, ParamStore, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Ablation {
    /// Full model.
    None,
    /// Encoder removed; the classifier sees raw features.
    NoEncoder,
    /// Encoder replaced by a plain mean-aggregation graph convolution.
    PlainGcn,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Baseline {
    RamCg,
    Retrained,
    Joint,
}

macro_rules! str_enum {
    ($ty:ident { $($var:ident => $s:literal),* $(,)? }) => {
        impl $ty {
            pub fn as_str(self) -> &'static str {
                match self { $($ty::$var => $s),* }
            }
        }
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }
        impl FromStr for $ty {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($s => Ok($ty::$var),)*
                    other => Err(Error::Config(format!(
                        concat!("unknown ", stringify!($ty), " `{}`"), other
                    ))),
                }
            }
        }
    };
}

str_enum!(Ablation { None => "none", NoEncoder => "no_encoder", PlainGcn => "plain_gcn" });
str_enum!(Baseline { RamCg => "ramcg", Retrained => "retrained", Joint => "joint" });

/// Every hyperparameter of one run.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainPlan {
    pub epochs_per_task: usize,
    pub adam: AdamConfig,
    /// Disentangle channels per relation module.
    pub channels: usize,
    /// Stacked relation modules.
    pub stack: usize,
    /// Encoder output width.
    pub d_enc: usize,
    /// Per-channel output width.
    pub channel_dim: usize,
    /// Width of the edge-scoring projection; `None` means `channel_dim`.
    pub d_hid: Option<usize>,
    /// Backbone hidden width; `None` means `d_enc`.
    pub backbone_width: Option<usize>,
    pub backbone_layers: usize,
    /// Selection ratio `c`, in percent.
    pub select_pct: f64,
    pub leaky_slope: f64,
    pub score_init: f64,
    pub bias: bool,
    pub early_keep: bool,
    pub ablation: Ablation,
    pub baseline: Baseline,
    pub seed: u64,
    pub deterministic: bool,
}

impl Default for TrainPlan {
    fn default() -> Self {
        TrainPlan {
            epochs_per_task: 200,
            adam: AdamConfig::default(),
            channels: 6,
            stack: 2,
            d_enc: 32,
            channel_dim: 8,
            d_hid: None,
            backbone_width: None,
            backbone_layers: 2,
            select_pct: 70.0,
            leaky_slope: 0.2,
            score_init: 0.01,
            bias: false,
            early_keep: true,
            ablation: Ablation::None,
            baseline: Baseline::RamCg,
            seed: 0,
            deterministic: true,
        }
    }
}

impl TrainPlan {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.epochs_per_task == 0 {
            return bad("epochs must be at least 1");
        }
        if self.channels == 0 || self.stack == 0 || self.backbone_layers == 0 {
            return bad("channels, stack and backbone_layers must be at least 1");
        }
        if self.d_enc == 0 || self.channel_dim == 0 || self.d_hid == Some(0) || self.backbone_width == Some(0) {
            return bad("layer widths must be positive");
        }
        if !(self.select_pct > 0.0 && self.select_pct <= 100.0) {
            return bad("select_pct must lie in (0, 100]");
        }
        if !(self.leaky_slope >= 0.0) {
            return bad("leaky_slope must be non-negative");
        }
        if !(self.adam.lr > 0.0) || !(0.0..1.0).contains(&self.adam.beta1) || !(0.0..1.0).contains(&self.adam.beta2) {
            return bad("invalid Adam hyperparameters");
        }
        Ok(())
    }

    pub fn hidden_dim(&self) -> usize {
        self.d_hid.unwrap_or(self.channel_dim)
    }

    pub fn width(&self) -> usize {
        self.backbone_width.unwrap_or(self.d_enc)
    }

    /// Fresh RNG for parameter initialisation.
    pub fn init_rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(0x1417);
        rng
    }
}

/// Encoder, score-masked backbone, classifier and the committed task masks.
#[derive(Clone, Debug)]
pub struct RamCgModel {
    pub store: ParamStore,
    pub encoder: Encoder,
    pub backbone: Backbone,
    pub classifier: Classifier,
    pub registry: TaskMaskRegistry,
    pub num_classes: usize,
    pub select_pct: f64,
}

impl RamCgModel {
    pub fn new(plan: &TrainPlan, feature_dim: usize, num_classes: usize) -> Result<Self> {
        plan.validate()?;
        let mut rng = plan.init_rng();
        let mut store = ParamStore::new();
        let encoder = match plan.ablation {
            Ablation::None => Encoder::Relation(RelationEncoder::new(
                &mut store,
                &mut rng,
                &EncoderConfig {
                    input_dim: feature_dim,
                    channels: plan.channels,
                    channel_dim: plan.channel_dim,
                    hidden_dim: plan.hidden_dim(),
                    output_dim: plan.d_enc,
                    layers: plan.stack,
                    slope: plan.leaky_slope,
                    bias: plan.bias,
                },
            )?),
            Ablation::PlainGcn => Encoder::PlainGcn(PlainGcn::new(
                &mut store,
                &mut rng,
                feature_dim,
                plan.d_enc,
                plan.stack,
                plan.leaky_slope,
                plan.bias,
            )),
            Ablation::NoEncoder => Encoder::Identity { dim: feature_dim },
        };
        let mut dims = vec![encoder.output_dim()];
        dims.extend(std::iter::repeat_n(plan.width(), plan.backbone_layers));
        let backbone = Backbone::new(&mut store, &mut rng, &dims, plan.leaky_slope, plan.score_init);
        let classifier = Classifier::new(&mut store, &mut rng, "g", plan.width(), num_classes, plan.bias);
        let registry = TaskMaskRegistry::new(backbone.num_weights());
        Ok(RamCgModel {
            store,
            encoder,
            backbone,
            classifier,
            registry,
            num_classes,
            select_pct: plan.select_pct,
        })
    }

    /// Encoder representation of a task graph, without gradients.
    pub fn encode(&self, features: &Tensor, csr: &Csr) -> Result<Tensor> {
        self.encoder.encode(&self.store, features, csr)
    }

    /// Logits `g(f_φ(h))` recorded on `tape`.
    pub fn logits(&self, tape: &mut Tape, h: Var, mask: &Bitmask) -> Result<Var> {
        masked_forward(tape, &self.store, h, &self.backbone, &self.classifier, mask)
    }

    /// Current top-c% selection from the score table.
    pub fn current_selection(&self) -> Result<Bitmask> {
        self.backbone.select(&self.store, self.select_pct)
    }

    /// Logits for task `t` under its committed mask, computed off-tape.
    pub fn evaluate_with_mask(&self, h: &Tensor, t: usize) -> Result<Tensor> {
        let mask = self.registry.mask(t)?;
        let mut tape = Tape::new();
        let hv = tape.constant(h.clone());
        let y = self.logits(&mut tape, hv, mask)?;
        Ok(tape.value(y).clone())
    }

    pub fn encoder_params(&self) -> Vec<ParamId> {
        self.encoder.params()
    }

    pub fn scores(&self) -> &[ParamId] {
        &self.backbone.scores
    }
}

/// Fraction of `nodes` whose argmax over the first `classes` logits equals the label.
pub fn accuracy(logits: &Tensor, classes: usize, nodes: &[usize], labels: &[usize]) -> Result<f64> {
    if nodes.is_empty() {
        return Err(Error::InvalidArgument("accuracy over an empty node set".into()));
    }
    let pred = logits.argmax_rows(classes);
    let hits = nodes
        .iter()
        .zip(labels)
        .filter(|(&u, &y)| pred[u] == y)
        .count();
    Ok(hits as f64 / nodes.len() as f64)
}

/// Mean negative log-likelihood of `labels` at `nodes`, softmax over the first `classes` logits.
pub fn mean_nll(logits: &Tensor, classes: usize, nodes: &[usize], labels: &[usize]) -> Result<f64> {
    if nodes.is_empty() {
        return Err(Error::InvalidArgument("loss over an empty node set".into()));
    }
    let total: f64 = nodes
        .iter()
        .zip(labels)
        .map(|(&u, &y)| {
            let row = &logits.row(u)[..classes];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            lse - row[y]
        })
        .sum();
    Ok(total / nodes.len() as f64)
}
