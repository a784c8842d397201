use super::kernels::{matmul_acc, matmul_nt_acc, matmul_tn_acc, sigmoid};
use super::{ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(usize, usize),
    ConcatCols(usize, usize),
    LeakyRelu(usize, f64),
    Sigmoid(usize),
    Reshape(usize),
    Add(usize, usize),
    AddRow(usize, usize),
    Sum(usize),
    GatherRows {
        src: usize,
        index: Vec<usize>,
    },
    SliceCols {
        src: usize,
        start: usize,
    },
    SegmentSoftmax {
        src: usize,
        offsets: Vec<usize>,
    },
    SegmentWeightedSum {
        weights: usize,
        values: usize,
        offsets: Vec<usize>,
        targets: Vec<usize>,
    },
    LogSoftmaxRows(usize),
    Nll {
        src: usize,
        rows: Vec<usize>,
        labels: Vec<usize>,
    },
    MaskedWeight {
        weight: usize,
        score: usize,
        mask: Vec<bool>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Linear record of executed operations. Values are computed eagerly on
/// push; [`Tape::backward`] replays the record in reverse.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::Shape {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

fn check_segments(op: &'static str, offsets: &[usize], len: usize) -> Result<()> {
    let ok = !offsets.is_empty()
        && offsets[0] == 0
        && *offsets.last().unwrap() == len
        && offsets.windows(2).all(|w| w[0] <= w[1]);
    if ok {
        Ok(())
    } else {
        Err(Error::Shape {
            op,
            left: vec![offsets.last().copied().unwrap_or(0)],
            right: vec![len],
        })
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of recorded operations (leaves included).
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Records a constant; gradients stop here.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    /// Records the current value of a parameter. Gradients reaching this
    /// node are accumulated into the parameter if it is trainable.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.value(id).clone(), Op::Param(id))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape().len() != 2 || tb.shape().len() != 2 || ta.cols() != tb.rows() {
            return Err(shape_err("matmul", ta, tb));
        }
        let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
        let mut out = vec![0.0; m * n];
        matmul_acc(ta.data(), tb.data(), &mut out, m, k, n);
        let value = Tensor::matrix(m, n, out)?;
        Ok(self.push(value, Op::MatMul(a.0, b.0)))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rows() != tb.rows() {
            return Err(shape_err("concat_cols", ta, tb));
        }
        let (m, p, q) = (ta.rows(), ta.cols(), tb.cols());
        let mut out = Vec::with_capacity(m * (p + q));
        for i in 0..m {
            out.extend_from_slice(ta.row(i));
            out.extend_from_slice(tb.row(i));
        }
        let value = Tensor::matrix(m, p + q, out)?;
        Ok(self.push(value, Op::ConcatCols(a.0, b.0)))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let t = self.value(x);
        let data = t
            .data()
            .iter()
            .map(|&v| if v >= 0.0 { v } else { slope * v })
            .collect();
        let value = Tensor::new(t.shape().to_vec(), data).expect("same shape");
        self.push(value, Op::LeakyRelu(x.0, slope))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let data = t.data().iter().map(|&v| sigmoid(v)).collect();
        let value = Tensor::new(t.shape().to_vec(), data).expect("same shape");
        self.push(value, Op::Sigmoid(x.0))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = Tensor::new(shape.to_vec(), self.value(x).data().to_vec())?;
        Ok(self.push(value, Op::Reshape(x.0)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err("add", ta, tb));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(value, Op::Add(a.0, b.0)))
    }

    /// Adds a `1×d` row to every row of an `n×d` matrix.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (tx, tr) = (self.value(x), self.value(row));
        if tr.len() != tx.cols() {
            return Err(shape_err("add_row", tx, tr));
        }
        let d = tx.cols();
        let data = tx
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| v + tr.data()[i % d])
            .collect();
        let value = Tensor::new(tx.shape().to_vec(), data)?;
        Ok(self.push(value, Op::AddRow(x.0, row.0)))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x.0))
    }

    /// Row gather: output row `i` is input row `index[i]`.
    pub fn gather_rows(&mut self, x: Var, index: &[usize]) -> Result<Var> {
        let t = self.value(x);
        if let Some(&bad) = index.iter().find(|&&i| i >= t.rows()) {
            return Err(Error::Shape {
                op: "gather_rows",
                left: t.shape().to_vec(),
                right: vec![bad],
            });
        }
        let value = t.select_rows(index);
        Ok(self.push(
            value,
            Op::GatherRows {
                src: x.0,
                index: index.to_vec(),
            },
        ))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let t = self.value(x);
        if start > end || end > t.cols() {
            return Err(Error::Shape {
                op: "slice_cols",
                left: t.shape().to_vec(),
                right: vec![start, end],
            });
        }
        let w = end - start;
        let mut data = Vec::with_capacity(t.rows() * w);
        for i in 0..t.rows() {
            data.extend_from_slice(&t.row(i)[start..end]);
        }
        let value = Tensor::matrix(t.rows(), w, data)?;
        Ok(self.push(value, Op::SliceCols { src: x.0, start }))
    }

    /// Softmax within contiguous segments `offsets[u]..offsets[u+1]` of a
    /// flat value vector. Each segment is max-shifted before exponentiation.
    pub fn segment_softmax(&mut self, x: Var, offsets: &[usize]) -> Result<Var> {
        let t = self.value(x);
        check_segments("segment_softmax", offsets, t.len())?;
        let src = t.data();
        let mut out = vec![0.0; src.len()];
        for w in offsets.windows(2) {
            let (lo, hi) = (w[0], w[1]);
            if lo == hi {
                continue;
            }
            let max = src[lo..hi].iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for e in lo..hi {
                out[e] = (src[e] - max).exp();
                z += out[e];
            }
            for o in &mut out[lo..hi] {
                *o /= z;
            }
        }
        let value = Tensor::new(t.shape().to_vec(), out)?;
        Ok(self.push(
            value,
            Op::SegmentSoftmax {
                src: x.0,
                offsets: offsets.to_vec(),
            },
        ))
    }

    /// Sparse aggregation: output row `u` is
    /// `Σ_{e in segment u} weights[e] · values[targets[e]]`.
    pub fn segment_weighted_sum(
        &mut self,
        weights: Var,
        values: Var,
        offsets: &[usize],
        targets: &[usize],
    ) -> Result<Var> {
        let (tw, tv) = (self.value(weights), self.value(values));
        check_segments("segment_weighted_sum", offsets, tw.len())?;
        if targets.len() != tw.len() || targets.iter().any(|&t| t >= tv.rows()) {
            return Err(shape_err("segment_weighted_sum", tw, tv));
        }
        let n = offsets.len() - 1;
        let d = tv.cols();
        let mut out = vec![0.0; n * d];
        for u in 0..n {
            let orow = &mut out[u * d..(u + 1) * d];
            for e in offsets[u]..offsets[u + 1] {
                let a = tw.data()[e];
                for (o, &h) in orow.iter_mut().zip(tv.row(targets[e])) {
                    *o += a * h;
                }
            }
        }
        let value = Tensor::matrix(n, d, out)?;
        Ok(self.push(
            value,
            Op::SegmentWeightedSum {
                weights: weights.0,
                values: values.0,
                offsets: offsets.to_vec(),
                targets: targets.to_vec(),
            },
        ))
    }

    pub fn log_softmax_rows(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let c = t.cols();
        let mut out = Vec::with_capacity(t.len());
        for i in 0..t.rows() {
            let row = t.row(i);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            out.extend(row.iter().map(|v| v - lse));
        }
        let value = Tensor::matrix(t.rows(), c, out).expect("same shape");
        self.push(value, Op::LogSoftmaxRows(x.0))
    }

    /// Mean negative log-likelihood of `labels[i]` at row `rows[i]`.
    pub fn nll(&mut self, logp: Var, rows: &[usize], labels: &[usize]) -> Result<Var> {
        if rows.is_empty() {
            return Err(Error::EmptyMask);
        }
        let t = self.value(logp);
        if rows.len() != labels.len() {
            return Err(Error::InvalidArgument(format!(
                "nll: {} rows but {} labels",
                rows.len(),
                labels.len()
            )));
        }
        if let Some((&r, &y)) = rows
            .iter()
            .zip(labels)
            .find(|(&r, &y)| r >= t.rows() || y >= t.cols())
        {
            return Err(Error::InvalidArgument(format!(
                "nll: row {r} / label {y} outside {:?}",
                t.shape()
            )));
        }
        let total: f64 = rows.iter().zip(labels).map(|(&r, &y)| t.get(r, y)).sum();
        let value = Tensor::scalar(-total / rows.len() as f64);
        Ok(self.push(
            value,
            Op::Nll {
                src: logp.0,
                rows: rows.to_vec(),
                labels: labels.to_vec(),
            },
        ))
    }

    /// Elementwise `weight · mask` for a binary mask derived from `score`.
    ///
    /// Backward: the weight receives `g · mask`; the score receives the
    /// straight-through estimate `g · weight · sign(score)` (the binarised
    /// top-|score| selection is treated as the identity on `|score|`).
    pub fn masked_weight(&mut self, weight: Var, score: Var, mask: &[bool]) -> Result<Var> {
        let (tw, ts) = (self.value(weight), self.value(score));
        if tw.shape() != ts.shape() || mask.len() != tw.len() {
            return Err(shape_err("masked_weight", tw, ts));
        }
        let data = tw
            .data()
            .iter()
            .zip(mask)
            .map(|(&w, &m)| if m { w } else { 0.0 })
            .collect();
        let value = Tensor::new(tw.shape().to_vec(), data)?;
        Ok(self.push(
            value,
            Op::MaskedWeight {
                weight: weight.0,
                score: score.0,
                mask: mask.to_vec(),
            },
        ))
    }

    /// Reverse pass from a scalar `loss`, accumulating into every trainable
    /// parameter recorded on this tape. Gradients add to whatever the
    /// store already holds.
    pub fn backward(&self, loss: Var, store: &mut ParamStore) -> Result<()> {
        for (i, g) in self.gradients(loss)?.into_iter().enumerate() {
            if let (Op::Param(id), Some(g)) = (&self.nodes[i].op, g) {
                let p = store.get_mut(*id);
                if p.trainable {
                    for (acc, v) in p.grad.data_mut().iter_mut().zip(g) {
                        *acc += v;
                    }
                }
            }
        }
        Ok(())
    }

    /// Gradient of `loss` with respect to every node, `None` where no path exists.
    pub fn gradients(&self, loss: Var) -> Result<Vec<Option<Vec<f64>>>> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::NotScalar(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf | Op::Param(_) => {
                    grads[i] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let (ta, tb) = (&self.nodes[*a].value, &self.nodes[*b].value);
                    let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                    matmul_nt_acc(&g, tb.data(), self.slot(&mut grads, *a), m, k, n);
                    matmul_tn_acc(ta.data(), &g, self.slot(&mut grads, *b), m, k, n);
                }
                Op::ConcatCols(a, b) => {
                    let p = self.nodes[*a].value.cols();
                    let q = self.nodes[*b].value.cols();
                    let w = p + q;
                    let ga = self.slot(&mut grads, *a);
                    for (r, chunk) in g.chunks(w).enumerate() {
                        for j in 0..p {
                            ga[r * p + j] += chunk[j];
                        }
                    }
                    let gb = self.slot(&mut grads, *b);
                    for (r, chunk) in g.chunks(w).enumerate() {
                        for j in 0..q {
                            gb[r * q + j] += chunk[p + j];
                        }
                    }
                }
                Op::LeakyRelu(x, slope) => {
                    let slope = *slope;
                    let xs = self.nodes[*x].value.data();
                    let gx = self.slot(&mut grads, *x);
                    for ((acc, &gv), &xv) in gx.iter_mut().zip(&g).zip(xs) {
                        *acc += if xv >= 0.0 { gv } else { slope * gv };
                    }
                }
                Op::Sigmoid(x) => {
                    let ys = node.value.data();
                    let gx = self.slot(&mut grads, *x);
                    for ((acc, &gv), &y) in gx.iter_mut().zip(&g).zip(ys) {
                        *acc += gv * y * (1.0 - y);
                    }
                }
                Op::Reshape(x) => {
                    let gx = self.slot(&mut grads, *x);
                    for (acc, gv) in gx.iter_mut().zip(&g) {
                        *acc += gv;
                    }
                }
                Op::Add(a, b) => {
                    for src in [*a, *b] {
                        let gs = self.slot(&mut grads, src);
                        for (acc, gv) in gs.iter_mut().zip(&g) {
                            *acc += gv;
                        }
                    }
                }
                Op::AddRow(x, row) => {
                    let d = self.nodes[*row].value.len();
                    let gx = self.slot(&mut grads, *x);
                    for (acc, gv) in gx.iter_mut().zip(&g) {
                        *acc += gv;
                    }
                    let gr = self.slot(&mut grads, *row);
                    for (i, gv) in g.iter().enumerate() {
                        gr[i % d] += gv;
                    }
                }
                Op::Sum(x) => {
                    let gx = self.slot(&mut grads, *x);
                    for acc in gx.iter_mut() {
                        *acc += g[0];
                    }
                }
                Op::GatherRows { src, index } => {
                    let d = self.nodes[*src].value.cols();
                    let gs = self.slot(&mut grads, *src);
                    for (i, &r) in index.iter().enumerate() {
                        for j in 0..d {
                            gs[r * d + j] += g[i * d + j];
                        }
                    }
                }
                Op::SliceCols { src, start } => {
                    let c = self.nodes[*src].value.cols();
                    let w = node.value.cols();
                    let gs = self.slot(&mut grads, *src);
                    for r in 0..node.value.rows() {
                        for j in 0..w {
                            gs[r * c + start + j] += g[r * w + j];
                        }
                    }
                }
                Op::SegmentSoftmax { src, offsets } => {
                    let y = node.value.data();
                    let gs = self.slot(&mut grads, *src);
                    for w in offsets.windows(2) {
                        let (lo, hi) = (w[0], w[1]);
                        let dot: f64 = (lo..hi).map(|e| y[e] * g[e]).sum();
                        for e in lo..hi {
                            gs[e] += y[e] * (g[e] - dot);
                        }
                    }
                }
                Op::SegmentWeightedSum {
                    weights,
                    values,
                    offsets,
                    targets,
                } => {
                    let tw = &self.nodes[*weights].value;
                    let tv = &self.nodes[*values].value;
                    let d = tv.cols();
                    {
                        let gw = self.slot(&mut grads, *weights);
                        for u in 0..offsets.len() - 1 {
                            let grow = &g[u * d..(u + 1) * d];
                            for e in offsets[u]..offsets[u + 1] {
                                let h = tv.row(targets[e]);
                                gw[e] += grow.iter().zip(h).map(|(a, b)| a * b).sum::<f64>();
                            }
                        }
                    }
                    let gv = self.slot(&mut grads, *values);
                    for u in 0..offsets.len() - 1 {
                        let grow = &g[u * d..(u + 1) * d];
                        for e in offsets[u]..offsets[u + 1] {
                            let a = tw.data()[e];
                            let t = targets[e];
                            for (acc, &gg) in gv[t * d..(t + 1) * d].iter_mut().zip(grow) {
                                *acc += a * gg;
                            }
                        }
                    }
                }
                Op::LogSoftmaxRows(x) => {
                    let y = &node.value;
                    let c = y.cols();
                    let gx = self.slot(&mut grads, *x);
                    for r in 0..y.rows() {
                        let grow = &g[r * c..(r + 1) * c];
                        let total: f64 = grow.iter().sum();
                        for j in 0..c {
                            gx[r * c + j] += grow[j] - y.data()[r * c + j].exp() * total;
                        }
                    }
                }
                Op::Nll { src, rows, labels } => {
                    let c = self.nodes[*src].value.cols();
                    let scale = g[0] / rows.len() as f64;
                    let gs = self.slot(&mut grads, *src);
                    for (&r, &y) in rows.iter().zip(labels) {
                        gs[r * c + y] -= scale;
                    }
                }
                Op::MaskedWeight {
                    weight,
                    score,
                    mask,
                } => {
                    let w = self.nodes[*weight].value.data();
                    let s = self.nodes[*score].value.data();
                    {
                        let gw = self.slot(&mut grads, *weight);
                        for ((acc, &gv), &m) in gw.iter_mut().zip(&g).zip(mask) {
                            if m {
                                *acc += gv;
                            }
                        }
                    }
                    let gs = self.slot(&mut grads, *score);
                    for (i, acc) in gs.iter_mut().enumerate() {
                        *acc += g[i] * w[i] * s[i].signum();
                    }
                }
            }
        }
        Ok(grads)
    }

    fn slot<'a>(&self, grads: &'a mut [Option<Vec<f64>>], idx: usize) -> &'a mut Vec<f64> {
        let len = self.nodes[idx].value.len();
        grads[idx].get_or_insert_with(|| vec![0.0; len])
    }
}
