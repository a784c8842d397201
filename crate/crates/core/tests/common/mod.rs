//! Helpers shared by the integration tests: seeded random tensors and
//! graphs, finite-difference checks, and a dense-adjacency encoder.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ramcg::graph::Csr;
use ramcg::relation::{Encoder, RelationEncoder, RelationModule};
use ramcg::tensor::{fd_gradient, max_relative_error, ParamId, ParamStore, Tape, Tensor, Var};
use ramcg::Result;

pub const FD_EPS: f64 = 1e-6;
pub const REL_FLOOR: f64 = 1e-3;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-scale..scale)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Erdős–Rényi edge list over `n` nodes.
pub fn random_edges(rng: &mut ChaCha8Rng, n: usize, p: f64) -> Vec<(usize, usize)> {
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if rng.random::<f64>() < p {
                edges.push((u, v));
            }
        }
    }
    edges
}

pub fn random_graph(rng: &mut ChaCha8Rng, n: usize, p: f64) -> Csr {
    Csr::build(&random_edges(rng, n, p), n).unwrap()
}

/// Graphs with at most 16 nodes: hand-picked shapes plus seeded random ones.
pub fn small_graph_corpus() -> Vec<Csr> {
    let mut out = vec![
        Csr::build(&[], 1).unwrap(),
        Csr::build(&[], 5).unwrap(),
        Csr::build(&[(0, 1)], 2).unwrap(),
        Csr::build(&(1..16).map(|v| (0, v)).collect::<Vec<_>>(), 16).unwrap(),
        Csr::build(&(0..11).map(|v| (v, v + 1)).collect::<Vec<_>>(), 12).unwrap(),
    ];
    let complete: Vec<_> = (0..9).flat_map(|u| (u + 1..9).map(move |v| (u, v))).collect();
    out.push(Csr::build(&complete, 9).unwrap());
    let mut r = rng(0xC0FFEE);
    for i in 0..40 {
        let n = 1 + i % 16;
        let p = [0.1, 0.3, 0.6][i % 3];
        out.push(random_graph(&mut r, n, p));
    }
    out
}

/// `Σ out ⊙ proj` as a scalar, giving every output entry a distinct weight.
pub fn project(tape: &mut Tape, out: Var, proj: &Tensor) -> Result<Var> {
    let k = tape.value(out).len();
    let flat = tape.reshape(out, &[1, k])?;
    let p = tape.constant(proj.reshape_clone(&[k, 1]));
    tape.matmul(flat, p)
}

pub trait ReshapeClone {
    fn reshape_clone(&self, shape: &[usize]) -> Tensor;
}

impl ReshapeClone for Tensor {
    fn reshape_clone(&self, shape: &[usize]) -> Tensor {
        Tensor::new(shape.to_vec(), self.data().to_vec()).unwrap()
    }
}

/// Largest relative error between tape gradients and central differences
/// over the listed parameters.
pub fn gradient_error<F>(store: &ParamStore, ids: &[ParamId], build: F) -> f64
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    let mut analytic_store = store.clone();
    analytic_store.zero_grad();
    let mut tape = Tape::new();
    let loss = build(&mut tape, &analytic_store).unwrap();
    tape.backward(loss, &mut analytic_store).unwrap();

    let mut worst: f64 = 0.0;
    for &id in ids {
        let theta = store.value(id).clone();
        let numeric = fd_gradient(
            |probe| {
                let mut s = store.clone();
                s.get_mut(id).value = probe.clone();
                let mut t = Tape::new();
                let l = build(&mut t, &s).unwrap();
                t.value(l).data()[0]
            },
            &theta,
            FD_EPS,
        );
        let err = max_relative_error(analytic_store.grad(id).data(), numeric.data(), REL_FLOOR);
        worst = worst.max(err);
    }
    worst
}

fn leaky(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        slope * x
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn dense_matmul(a: &[Vec<f64>], b: &Tensor) -> Vec<Vec<f64>> {
    a.iter()
        .map(|row| {
            (0..b.cols())
                .map(|j| row.iter().enumerate().map(|(k, v)| v * b.get(k, j)).sum())
                .collect()
        })
        .collect()
}

/// Dense adjacency (with self-loops) of a CSR graph.
pub fn dense_adjacency(csr: &Csr) -> Vec<Vec<bool>> {
    let n = csr.num_nodes();
    let mut adj = vec![vec![false; n]; n];
    for u in 0..n {
        for &v in csr.neighbors(u) {
            adj[u][v] = true;
        }
    }
    adj
}

/// Attention weights of every channel of one module, as dense `n × n` matrices.
pub fn dense_module_attention(
    store: &ParamStore,
    module: &RelationModule,
    h: &[Vec<f64>],
    adj: &[Vec<bool>],
    slope: f64,
) -> Vec<Vec<Vec<f64>>> {
    let n = h.len();
    module
        .channels
        .iter()
        .map(|ch| {
            let w1 = store.value(ch.w1);
            let w2 = store.value(ch.w2);
            let mut a = vec![vec![0.0; n]; n];
            for u in 0..n {
                let mut scores = vec![None; n];
                for v in 0..n {
                    if !adj[u][v] {
                        continue;
                    }
                    let pair: Vec<f64> = h[u].iter().chain(&h[v]).copied().collect();
                    let mut s = 0.0;
                    for j in 0..w1.cols() {
                        let z: f64 = pair.iter().enumerate().map(|(k, x)| x * w1.get(k, j)).sum();
                        s += leaky(z, slope) * w2.get(j, 0);
                    }
                    scores[v] = Some(sigmoid(s));
                }
                let max = scores.iter().flatten().cloned().fold(f64::NEG_INFINITY, f64::max);
                let total: f64 = scores.iter().flatten().map(|s| (s - max).exp()).sum();
                for v in 0..n {
                    if let Some(s) = scores[v] {
                        a[u][v] = (s - max).exp() / total;
                    }
                }
            }
            a
        })
        .collect()
}

/// Relation encoder evaluated with dense adjacency and plain loops.
pub fn dense_encoder(store: &ParamStore, enc: &RelationEncoder, x: &Tensor, csr: &Csr) -> Vec<Vec<f64>> {
    let adj = dense_adjacency(csr);
    let mut h: Vec<Vec<f64>> = (0..x.rows()).map(|i| x.row(i).to_vec()).collect();
    for module in &enc.modules {
        let attn = dense_module_attention(store, module, &h, &adj, enc.slope);
        let mut cat: Vec<Vec<f64>> = vec![Vec::new(); h.len()];
        for (ch, a) in module.channels.iter().zip(&attn) {
            let mixed = dense_matmul(a, &Tensor::from_rows(&h).unwrap());
            let out = dense_matmul(&mixed, store.value(ch.w_feat));
            for (row, o) in cat.iter_mut().zip(out) {
                row.extend(o);
            }
        }
        let mut y = dense_matmul(&cat, store.value(module.w_agg));
        if let Some(b) = module.bias {
            for row in &mut y {
                for (v, bb) in row.iter_mut().zip(store.value(b).data()) {
                    *v += bb;
                }
            }
        }
        h = y
            .into_iter()
            .map(|r| r.into_iter().map(|v| leaky(v, enc.slope)).collect())
            .collect();
    }
    h
}

pub fn relation_encoder(enc: &Encoder) -> &RelationEncoder {
    match enc {
        Encoder::Relation(e) => e,
        _ => panic!("expected a relation encoder"),
    }
}
