//! Score-selected subnetworks of the backbone.
//!
//! Every backbone weight has a real-valued score. The top `c%` of weights by
//! absolute score form the active subnetwork `φ`. A task trains only the
//! part of `φ` no earlier task has claimed (`ξ = φ ∩ Uᶜ`), together with
//! the scores. On completion the task's mask is committed and added to the
//! union `U`, freezing those weights for good.

use std::fmt;

use rand::Rng;

use crate::error::{Error, Result};
use crate::relation::glorot;
use crate::tensor::{ParamId, ParamStore, Tape, Tensor, Var};

/// Fixed-length bit vector over the flattened backbone weights.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Bitmask {
    bits: Vec<bool>,
}

impl fmt::Debug for Bitmask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Bitmask({}/{}: {})", self.count(), self.len(), self.to_hex())
    }
}

impl Bitmask {
    pub fn zeros(n: usize) -> Self {
        Bitmask { bits: vec![false; n] }
    }

    pub fn ones(n: usize) -> Self {
        Bitmask { bits: vec![true; n] }
    }

    pub fn from_bits(bits: Vec<bool>) -> Self {
        Bitmask { bits }
    }

    pub fn from_indices(n: usize, idx: &[usize]) -> Self {
        let mut m = Self::zeros(n);
        for &i in idx {
            m.bits[i] = true;
        }
        m
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, i: usize) -> bool {
        self.bits[i]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn indices(&self) -> Vec<usize> {
        (0..self.bits.len()).filter(|&i| self.bits[i]).collect()
    }

    fn zip_with(&self, other: &Bitmask, f: impl Fn(bool, bool) -> bool) -> Bitmask {
        assert_eq!(self.len(), other.len(), "bitmask length mismatch");
        Bitmask {
            bits: self.bits.iter().zip(&other.bits).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    pub fn and(&self, other: &Bitmask) -> Bitmask {
        self.zip_with(other, |a, b| a && b)
    }

    pub fn or(&self, other: &Bitmask) -> Bitmask {
        self.zip_with(other, |a, b| a || b)
    }

    pub fn and_not(&self, other: &Bitmask) -> Bitmask {
        self.zip_with(other, |a, b| a && !b)
    }

    pub fn is_subset_of(&self, other: &Bitmask) -> bool {
        self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b)
    }

    /// Hex digits, four bits per digit, bit `4j` as the most significant
    /// bit of digit `j`. The final digit is zero-padded.
    pub fn to_hex(&self) -> String {
        self.bits
            .chunks(4)
            .map(|c| {
                let v = c
                    .iter()
                    .enumerate()
                    .fold(0u32, |acc, (k, &b)| acc | (u32::from(b) << (3 - k)));
                char::from_digit(v, 16).unwrap()
            })
            .collect()
    }

    pub fn from_hex(n: usize, hex: &str) -> Result<Self> {
        let hex = hex.trim();
        if hex.len() != n.div_ceil(4) {
            return Err(Error::InvalidArgument(format!(
                "{} hex digits for {n} bits",
                hex.len()
            )));
        }
        let mut bits = Vec::with_capacity(n);
        for ch in hex.chars() {
            let v = ch
                .to_digit(16)
                .ok_or_else(|| Error::InvalidArgument(format!("bad hex digit `{ch}`")))?;
            for k in 0..4 {
                bits.push(v & (1 << (3 - k)) != 0);
            }
        }
        if bits[n..].iter().any(|&b| b) {
            return Err(Error::InvalidArgument("nonzero padding bits".into()));
        }
        bits.truncate(n);
        Ok(Bitmask { bits })
    }
}

/// `ceil(pct/100 · n)`, robust to the float product landing a hair above an integer.
pub fn topc_count(n: usize, pct: f64) -> usize {
    let exact = pct * n as f64 / 100.0;
    ((exact - 1e-9).ceil().max(0.0) as usize).min(n)
}

/// Indices of the `ceil(pct/100 · N)` largest `|score|`; ties go to the lower index.
pub fn select_topc(scores: &[f64], pct: f64) -> Result<Bitmask> {
    if !(pct > 0.0 && pct <= 100.0) {
        return Err(Error::InvalidArgument(format!("selection ratio {pct} outside (0, 100]")));
    }
    let k = topc_count(scores.len(), pct);
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].abs().total_cmp(&scores[a].abs()).then(a.cmp(&b)));
    Ok(Bitmask::from_indices(scores.len(), &order[..k]))
}

/// `ξ = φ ∧ ¬U`: selected weights no earlier task has claimed.
pub fn trainable_set(selected: &Bitmask, claimed: &Bitmask) -> Bitmask {
    selected.and_not(claimed)
}

/// Dense backbone `f` with one score per weight. Layers are bias-free so
/// the flattened weight space is exactly the concatenation of the layer
/// matrices in order.
#[derive(Clone, Debug)]
pub struct Backbone {
    pub layers: Vec<ParamId>,
    pub scores: Vec<ParamId>,
    pub slope: f64,
    sizes: Vec<usize>,
}

impl Backbone {
    /// `dims = [d_in, w_1, ..., w_L]`. Weights are Glorot-uniform; scores
    /// are uniform in `±score_init`.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        dims: &[usize],
        slope: f64,
        score_init: f64,
    ) -> Self {
        let mut layers = Vec::new();
        let mut scores = Vec::new();
        let mut sizes = Vec::new();
        for (l, w) in dims.windows(2).enumerate() {
            layers.push(store.add(format!("backbone.{l}.w"), glorot(rng, w[0], w[1])));
            sizes.push(w[0] * w[1]);
        }
        for (l, w) in dims.windows(2).enumerate() {
            let data = (0..w[0] * w[1])
                .map(|_| rng.random_range(-score_init..=score_init))
                .collect();
            scores.push(store.add(
                format!("backbone.{l}.score"),
                Tensor::matrix(w[0], w[1], data).expect("shape"),
            ));
        }
        Backbone {
            layers,
            scores,
            slope,
            sizes,
        }
    }

    /// `N_θ`, the number of backbone weights.
    pub fn num_weights(&self) -> usize {
        self.sizes.iter().sum()
    }

    pub fn output_dim(&self, store: &ParamStore) -> usize {
        store.value(*self.layers.last().expect("non-empty backbone")).cols()
    }

    /// Flattened index range of each layer.
    pub fn layer_ranges(&self) -> Vec<std::ops::Range<usize>> {
        let mut start = 0;
        self.sizes
            .iter()
            .map(|&s| {
                let r = start..start + s;
                start += s;
                r
            })
            .collect()
    }

    fn flatten(&self, store: &ParamStore, ids: &[ParamId]) -> Vec<f64> {
        ids.iter()
            .flat_map(|&id| store.value(id).data().iter().copied())
            .collect()
    }

    pub fn flat_weights(&self, store: &ParamStore) -> Vec<f64> {
        self.flatten(store, &self.layers)
    }

    pub fn flat_scores(&self, store: &ParamStore) -> Vec<f64> {
        self.flatten(store, &self.scores)
    }

    pub fn select(&self, store: &ParamStore, pct: f64) -> Result<Bitmask> {
        select_topc(&self.flat_scores(store), pct)
    }

    /// `f_φ(h)`: every weight multiplied by its mask bit, LeakyReLU after each layer.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, h: Var, mask: &Bitmask) -> Result<Var> {
        if mask.len() != self.num_weights() {
            return Err(Error::Shape {
                op: "backbone mask",
                left: vec![mask.len()],
                right: vec![self.num_weights()],
            });
        }
        let mut z = h;
        for ((&w, &s), range) in self.layers.iter().zip(&self.scores).zip(self.layer_ranges()) {
            let wv = tape.param(store, w);
            let sv = tape.param(store, s);
            let wm = tape.masked_weight(wv, sv, &mask.bits()[range])?;
            let y = tape.matmul(z, wm)?;
            z = tape.leaky_relu(y, self.slope);
        }
        Ok(z)
    }

    /// Per-layer slices of a flattened mask.
    pub fn split<'a>(&self, mask: &'a Bitmask) -> Vec<&'a [bool]> {
        self.layer_ranges()
            .into_iter()
            .map(|r| &mask.bits()[r])
            .collect()
    }

    pub fn params(&self) -> Vec<ParamId> {
        self.layers.clone()
    }
}

/// Single linear layer `g` mapping backbone output to class logits.
#[derive(Clone, Debug)]
pub struct Classifier {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Classifier {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        d_in: usize,
        classes: usize,
        bias: bool,
    ) -> Self {
        let weight = store.add(format!("{name}.w"), glorot(rng, d_in, classes));
        let bias = bias.then(|| store.add(format!("{name}.bias"), Tensor::zeros(&[1, classes])));
        Classifier { weight, bias }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, z: Var) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let mut y = tape.matmul(z, w)?;
        if let Some(b) = self.bias {
            let b = tape.param(store, b);
            y = tape.add_row(y, b)?;
        }
        Ok(y)
    }

    pub fn params(&self) -> Vec<ParamId> {
        std::iter::once(self.weight).chain(self.bias).collect()
    }
}

/// `g(f_φ(h))`.
pub fn masked_forward(
    tape: &mut Tape,
    store: &ParamStore,
    h: Var,
    backbone: &Backbone,
    classifier: &Classifier,
    mask: &Bitmask,
) -> Result<Var> {
    let z = backbone.forward(tape, store, h, mask)?;
    classifier.forward(tape, store, z)
}

/// Committed per-task masks and their running union.
#[derive(Clone, Debug)]
pub struct TaskMaskRegistry {
    masks: Vec<Bitmask>,
    unions: Vec<Bitmask>,
    num_weights: usize,
}

impl TaskMaskRegistry {
    pub fn new(num_weights: usize) -> Self {
        TaskMaskRegistry {
            masks: Vec::new(),
            unions: Vec::new(),
            num_weights,
        }
    }

    pub fn num_weights(&self) -> usize {
        self.num_weights
    }

    pub fn num_committed(&self) -> usize {
        self.masks.len()
    }

    /// Records the mask of task `t` (0-based); tasks commit in order, once.
    pub fn commit(&mut self, t: usize, mask: Bitmask) -> Result<()> {
        if t < self.masks.len() {
            return Err(Error::Protocol(format!("task {t} already committed")));
        }
        if t > self.masks.len() {
            return Err(Error::Protocol(format!(
                "task {t} committed before task {}",
                self.masks.len()
            )));
        }
        if mask.len() != self.num_weights {
            return Err(Error::InvalidArgument(format!(
                "mask of length {} for {} weights",
                mask.len(),
                self.num_weights
            )));
        }
        let union = self.union().or(&mask);
        self.masks.push(mask);
        self.unions.push(union);
        Ok(())
    }

    pub fn mask(&self, t: usize) -> Result<&Bitmask> {
        self.masks
            .get(t)
            .ok_or_else(|| Error::Protocol(format!("task {t} has no committed mask")))
    }

    /// Union of all committed masks so far (`U_t`; empty before any commit).
    pub fn union(&self) -> Bitmask {
        self.unions
            .last()
            .cloned()
            .unwrap_or_else(|| Bitmask::zeros(self.num_weights))
    }

    /// Union after committing task `t` (0-based).
    pub fn union_after(&self, t: usize) -> Result<&Bitmask> {
        self.unions
            .get(t)
            .ok_or_else(|| Error::Protocol(format!("task {t} has no committed mask")))
    }

    pub fn masks(&self) -> &[Bitmask] {
        &self.masks
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn topc_examples() {
        assert_eq!(select_topc(&[0.1, -2.0, 0.3], 100.0).unwrap(), Bitmask::ones(3));
        assert_eq!(
            select_topc(&[0.9, -0.5, 0.1, 0.3], 50.0).unwrap().indices(),
            vec![0, 1]
        );
        assert_eq!(select_topc(&[0.2; 8], 25.0).unwrap().indices(), vec![0, 1]);
        assert!(select_topc(&[1.0], 0.0).is_err());
        assert!(select_topc(&[1.0], 100.5).is_err());
    }

    #[test]
    fn topc_count_exact_at_standard_ratios() {
        assert_eq!(topc_count(100, 70.0), 70);
        assert_eq!(topc_count(10, 70.0), 7);
        assert_eq!(topc_count(3, 70.0), 3);
        assert_eq!(topc_count(1000, 20.0), 200);
        assert_eq!(topc_count(7, 50.0), 4);
    }

    #[test]
    fn trainable_set_examples() {
        let phi = Bitmask::from_bits(vec![true, true, false, false]);
        let u = Bitmask::from_bits(vec![true, false, true, false]);
        assert_eq!(trainable_set(&phi, &u).bits(), &[false, true, false, false]);
        assert_eq!(trainable_set(&phi, &Bitmask::zeros(4)), phi);
        assert_eq!(trainable_set(&phi, &Bitmask::ones(4)).count(), 0);
    }

    #[test]
    fn hex_round_trip_and_padding() {
        let m = Bitmask::from_bits(vec![true, false, true, true, false, true]);
        assert_eq!(m.to_hex(), "b4");
        assert_eq!(Bitmask::from_hex(6, "b4").unwrap(), m);
        assert!(Bitmask::from_hex(6, "b5").is_err());
        assert!(Bitmask::from_hex(6, "b").is_err());
    }

    #[test]
    fn registry_union_and_order() {
        let mut reg = TaskMaskRegistry::new(4);
        assert_eq!(reg.union().count(), 0);
        assert!(reg.mask(0).is_err());
        reg.commit(0, Bitmask::from_indices(4, &[0, 1])).unwrap();
        assert_eq!(reg.union().count(), 2);
        assert!(reg.commit(0, Bitmask::from_indices(4, &[2])).is_err());
        assert!(reg.commit(2, Bitmask::from_indices(4, &[2])).is_err());
        reg.commit(1, Bitmask::from_indices(4, &[2, 3])).unwrap();
        assert_eq!(reg.union().count(), 4);
        assert_eq!(reg.union_after(0).unwrap().count(), 2);
    }

    fn setup() -> (ParamStore, Backbone, Classifier) {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let bb = Backbone::new(&mut store, &mut rng, &[3, 4, 4], 0.2, 0.01);
        let g = Classifier::new(&mut store, &mut rng, "g", 4, 2, false);
        (store, bb, g)
    }

    fn logits(store: &ParamStore, bb: &Backbone, g: &Classifier, h: &Tensor, m: &Bitmask) -> Tensor {
        let mut tape = Tape::new();
        let hv = tape.constant(h.clone());
        let y = masked_forward(&mut tape, store, hv, bb, g, m).unwrap();
        tape.value(y).clone()
    }

    #[test]
    fn full_mask_equals_unmasked_network() {
        let (store, bb, g) = setup();
        let h = Tensor::from_rows(&[[0.1, -0.4, 0.8], [1.0, 0.2, -0.3]]).unwrap();
        let masked = logits(&store, &bb, &g, &h, &Bitmask::ones(bb.num_weights()));

        let mut tape = Tape::new();
        let mut z = tape.constant(h.clone());
        for &w in &bb.layers {
            let wv = tape.param(&store, w);
            let y = tape.matmul(z, wv).unwrap();
            z = tape.leaky_relu(y, 0.2);
        }
        let y = g.forward(&mut tape, &store, z).unwrap();
        assert_eq!(&masked, tape.value(y));
    }

    #[test]
    fn empty_mask_gives_identical_rows() {
        let (store, bb, g) = setup();
        let h = Tensor::from_rows(&[[0.1, -0.4, 0.8], [1.0, 0.2, -0.3], [5.0, 5.0, 5.0]]).unwrap();
        let out = logits(&store, &bb, &g, &h, &Bitmask::zeros(bb.num_weights()));
        for r in 1..3 {
            assert_eq!(out.row(r), out.row(0));
        }
    }

    #[test]
    fn masked_forward_deterministic() {
        let (store, bb, g) = setup();
        let h = Tensor::from_rows(&[[0.1, -0.4, 0.8]]).unwrap();
        let m = bb.select(&store, 50.0).unwrap();
        let a = logits(&store, &bb, &g, &h, &m);
        let b = logits(&store, &bb, &g, &h, &m);
        assert_eq!(a.to_le_bytes(), b.to_le_bytes());
    }

    proptest! {
        #[test]
        fn selection_cardinality_and_order(
            scores in proptest::collection::vec(-1.0f64..1.0, 1..200),
            pct in prop_oneof![Just(20.0), Just(50.0), Just(70.0), Just(90.0), 1.0f64..100.0],
        ) {
            let m = select_topc(&scores, pct).unwrap();
            let k = (pct / 100.0 * scores.len() as f64 - 1e-9).ceil() as usize;
            prop_assert_eq!(m.count(), k);
            let min_in = m.indices().iter().map(|&i| scores[i].abs()).fold(f64::INFINITY, f64::min);
            for i in 0..scores.len() {
                if !m.get(i) {
                    prop_assert!(scores[i].abs() <= min_in);
                }
            }
        }

        #[test]
        fn hex_round_trip(bits in proptest::collection::vec(any::<bool>(), 0..70)) {
            let m = Bitmask::from_bits(bits);
            prop_assert_eq!(Bitmask::from_hex(m.len(), &m.to_hex()).unwrap(), m);
        }
    }
}
