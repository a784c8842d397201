//! Relation-discovery encoder and the two ablation encoders.
//!
//! A relation module runs `m` disentangle channels over the graph. Channel
//! `i` scores every CSR entry `u ← v` as
//! `sigmoid(LeakyReLU([h_u, h_v]·W1)·W2)`, softmax-normalises the scores
//! over each node's neighbourhood, aggregates neighbour features under those
//! weights and projects with `W_feat`. The `m` channel outputs are
//! concatenated and mixed by `W_agg` followed by LeakyReLU. Modules stack.

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::Csr;
use crate::tensor::{ParamId, ParamStore, Tape, Tensor, Var};

/// Glorot-uniform matrix: entries in `±sqrt(6 / (fan_in + fan_out))`.
pub fn glorot<R: Rng + ?Sized>(rng: &mut R, fan_in: usize, fan_out: usize) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out)
        .map(|_| rng.random_range(-limit..=limit))
        .collect();
    Tensor::matrix(fan_in, fan_out, data).expect("shape matches")
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderConfig {
    pub input_dim: usize,
    /// Channels per module.
    pub channels: usize,
    /// Output width of each channel (`W_feat` columns).
    pub channel_dim: usize,
    /// Width of the scoring projection `W1`.
    pub hidden_dim: usize,
    /// Output width of every module (`W_agg` columns).
    pub output_dim: usize,
    pub layers: usize,
    pub slope: f64,
    pub bias: bool,
}

#[derive(Clone, Debug)]
pub struct DisentangleChannel {
    /// `2·d_in × d_hid`
    pub w1: ParamId,
    /// `d_hid × 1`
    pub w2: ParamId,
    /// `d_in × d_out`
    pub w_feat: ParamId,
}

#[derive(Clone, Debug)]
pub struct RelationModule {
    pub channels: Vec<DisentangleChannel>,
    /// `(m·d_out) × d_module_out`
    pub w_agg: ParamId,
    pub bias: Option<ParamId>,
}

#[derive(Clone, Debug)]
pub struct RelationEncoder {
    pub modules: Vec<RelationModule>,
    pub slope: f64,
    output_dim: usize,
}

/// Per-entry scores `sigmoid(LeakyReLU([h_u, h_v]·W1)·W2)` in CSR entry order.
pub fn channel_edge_scores(
    tape: &mut Tape,
    store: &ParamStore,
    h: Var,
    csr: &Csr,
    ch: &DisentangleChannel,
    slope: f64,
) -> Result<Var> {
    if tape.value(h).rows() != csr.num_nodes() {
        return Err(Error::Shape {
            op: "channel_edge_scores",
            left: tape.value(h).shape().to_vec(),
            right: vec![csr.num_nodes()],
        });
    }
    let hu = tape.gather_rows(h, csr.sources())?;
    let hv = tape.gather_rows(h, csr.targets())?;
    let pair = tape.concat_cols(hu, hv)?;
    let w1 = tape.param(store, ch.w1);
    let z = tape.matmul(pair, w1)?;
    let z = tape.leaky_relu(z, slope);
    let w2 = tape.param(store, ch.w2);
    let s = tape.matmul(z, w2)?;
    let s = tape.sigmoid(s);
    tape.reshape(s, &[csr.num_entries()])
}

/// Softmax of entry scores within each node's CSR row.
pub fn normalize_over_neighbors(tape: &mut Tape, scores: Var, csr: &Csr) -> Result<Var> {
    tape.segment_softmax(scores, csr.offsets())
}

/// `(Σ_v A_uv · h_v) · W_feat` for every node `u`.
pub fn channel_aggregate(
    tape: &mut Tape,
    store: &ParamStore,
    weights: Var,
    h: Var,
    csr: &Csr,
    ch: &DisentangleChannel,
) -> Result<Var> {
    let mixed = tape.segment_weighted_sum(weights, h, csr.offsets(), csr.targets())?;
    let w = tape.param(store, ch.w_feat);
    tape.matmul(mixed, w)
}

/// One relation module; also returns each channel's normalised weights.
pub fn module_forward_traced(
    tape: &mut Tape,
    store: &ParamStore,
    h: Var,
    csr: &Csr,
    module: &RelationModule,
    slope: f64,
) -> Result<(Var, Vec<Var>)> {
    let mut attn = Vec::with_capacity(module.channels.len());
    let mut cat: Option<Var> = None;
    for ch in &module.channels {
        let scores = channel_edge_scores(tape, store, h, csr, ch, slope)?;
        let a = normalize_over_neighbors(tape, scores, csr)?;
        let out = channel_aggregate(tape, store, a, h, csr, ch)?;
        attn.push(a);
        cat = Some(match cat {
            None => out,
            Some(prev) => tape.concat_cols(prev, out)?,
        });
    }
    let cat = cat.ok_or_else(|| Error::InvalidArgument("relation module without channels".into()))?;
    let w_agg = tape.param(store, module.w_agg);
    let mut y = tape.matmul(cat, w_agg)?;
    if let Some(b) = module.bias {
        let b = tape.param(store, b);
        y = tape.add_row(y, b)?;
    }
    Ok((tape.leaky_relu(y, slope), attn))
}

pub fn module_forward(
    tape: &mut Tape,
    store: &ParamStore,
    h: Var,
    csr: &Csr,
    module: &RelationModule,
    slope: f64,
) -> Result<Var> {
    Ok(module_forward_traced(tape, store, h, csr, module, slope)?.0)
}

impl RelationEncoder {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, rng: &mut R, cfg: &EncoderConfig) -> Result<Self> {
        if cfg.channels == 0 || cfg.layers == 0 {
            return Err(Error::InvalidArgument("encoder needs ≥1 channel and ≥1 layer".into()));
        }
        let mut modules = Vec::with_capacity(cfg.layers);
        let mut d_in = cfg.input_dim;
        for l in 0..cfg.layers {
            let channels = (0..cfg.channels)
                .map(|i| DisentangleChannel {
                    w1: store.add(format!("enc.{l}.ch{i}.w1"), glorot(rng, 2 * d_in, cfg.hidden_dim)),
                    w2: store.add(format!("enc.{l}.ch{i}.w2"), glorot(rng, cfg.hidden_dim, 1)),
                    w_feat: store.add(format!("enc.{l}.ch{i}.w_feat"), glorot(rng, d_in, cfg.channel_dim)),
                })
                .collect();
            let w_agg = store.add(
                format!("enc.{l}.w_agg"),
                glorot(rng, cfg.channels * cfg.channel_dim, cfg.output_dim),
            );
            let bias = cfg
                .bias
                .then(|| store.add(format!("enc.{l}.bias"), Tensor::zeros(&[1, cfg.output_dim])));
            modules.push(RelationModule {
                channels,
                w_agg,
                bias,
            });
            d_in = cfg.output_dim;
        }
        Ok(RelationEncoder {
            modules,
            slope: cfg.slope,
            output_dim: cfg.output_dim,
        })
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var, csr: &Csr) -> Result<Var> {
        let mut h = x;
        for m in &self.modules {
            h = module_forward(tape, store, h, csr, m, self.slope)?;
        }
        Ok(h)
    }

    /// Normalised propagation weights of every channel in every module.
    pub fn attention_weights(&self, store: &ParamStore, x: &Tensor, csr: &Csr) -> Result<Vec<Vec<Tensor>>> {
        let mut tape = Tape::new();
        let mut h = tape.constant(x.clone());
        let mut out = Vec::new();
        for m in &self.modules {
            let (next, attn) = module_forward_traced(&mut tape, store, h, csr, m, self.slope)?;
            out.push(attn.iter().map(|&a| tape.value(a).clone()).collect());
            h = next;
        }
        Ok(out)
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut ids = Vec::new();
        for m in &self.modules {
            for ch in &m.channels {
                ids.extend([ch.w1, ch.w2, ch.w_feat]);
            }
            ids.push(m.w_agg);
            ids.extend(m.bias);
        }
        ids
    }
}

/// Two-layer mean-aggregation graph convolution, the plain substitute
/// encoder: `H' = LeakyReLU(mean_{v∈N(u)} h_v · W)` per layer.
#[derive(Clone, Debug)]
pub struct PlainGcn {
    pub weights: Vec<ParamId>,
    pub biases: Vec<ParamId>,
    pub slope: f64,
    output_dim: usize,
}

/// `1/deg(u)` for every CSR entry of row `u`.
pub fn mean_weights(csr: &Csr) -> Tensor {
    let data = csr
        .sources()
        .iter()
        .map(|&u| 1.0 / csr.degree(u) as f64)
        .collect();
    Tensor::new(vec![csr.num_entries()], data).expect("one weight per entry")
}

impl PlainGcn {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        input_dim: usize,
        output_dim: usize,
        layers: usize,
        slope: f64,
        bias: bool,
    ) -> Self {
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        let mut d_in = input_dim;
        for l in 0..layers {
            weights.push(store.add(format!("gcn.{l}.w"), glorot(rng, d_in, output_dim)));
            if bias {
                biases.push(store.add(format!("gcn.{l}.bias"), Tensor::zeros(&[1, output_dim])));
            }
            d_in = output_dim;
        }
        PlainGcn {
            weights,
            biases,
            slope,
            output_dim,
        }
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var, csr: &Csr) -> Result<Var> {
        let mean = tape.constant(mean_weights(csr));
        let mut h = x;
        for (l, &w) in self.weights.iter().enumerate() {
            let agg = tape.segment_weighted_sum(mean, h, csr.offsets(), csr.targets())?;
            let w = tape.param(store, w);
            let mut y = tape.matmul(agg, w)?;
            if let Some(&b) = self.biases.get(l) {
                let b = tape.param(store, b);
                y = tape.add_row(y, b)?;
            }
            h = tape.leaky_relu(y, self.slope);
        }
        Ok(h)
    }

    pub fn params(&self) -> Vec<ParamId> {
        self.weights.iter().chain(&self.biases).copied().collect()
    }
}

/// Which encoder produces the node representation fed to the classifier.
#[derive(Clone, Debug)]
pub enum Encoder {
    Relation(RelationEncoder),
    PlainGcn(PlainGcn),
    /// Encoder removed: raw features pass straight through.
    Identity { dim: usize },
}

impl Encoder {
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var, csr: &Csr) -> Result<Var> {
        match self {
            Encoder::Relation(e) => e.forward(tape, store, x, csr),
            Encoder::PlainGcn(g) => g.forward(tape, store, x, csr),
            Encoder::Identity { .. } => Ok(x),
        }
    }

    /// Forward pass without gradient bookkeeping. Takes only features and
    /// adjacency: nothing else about a task reaches the encoder.
    pub fn encode(&self, store: &ParamStore, features: &Tensor, csr: &Csr) -> Result<Tensor> {
        let mut tape = Tape::new();
        let x = tape.constant(features.clone());
        let h = self.forward(&mut tape, store, x, csr)?;
        Ok(tape.value(h).clone())
    }

    pub fn output_dim(&self) -> usize {
        match self {
            Encoder::Relation(e) => e.output_dim(),
            Encoder::PlainGcn(g) => g.output_dim(),
            Encoder::Identity { dim } => *dim,
        }
    }

    pub fn params(&self) -> Vec<ParamId> {
        match self {
            Encoder::Relation(e) => e.params(),
            Encoder::PlainGcn(g) => g.params(),
            Encoder::Identity { .. } => Vec::new(),
        }
    }
}
