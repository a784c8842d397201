//! Adam with per-entry update masks.

use std::collections::BTreeMap;

use crate::tensor::{ParamId, ParamStore};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 0.0065,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment accumulators of one parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

/// Adam where each step names the parameters to update and, optionally,
/// which entries of each. Entries left out keep their value, their
/// gradient is zeroed, and their moments are not touched.
#[derive(Clone, Debug)]
pub struct MaskedAdam {
    pub config: AdamConfig,
    pub states: BTreeMap<ParamId, AdamState>,
    pub steps: u64,
}

/// A parameter to update and the entries allowed to change (`None` = all).
pub type UpdateGroup<'a> = (ParamId, Option<&'a [bool]>);

impl MaskedAdam {
    pub fn new(config: AdamConfig) -> Self {
        MaskedAdam {
            config,
            states: BTreeMap::new(),
            steps: 0,
        }
    }

    /// Drops all moments and the step counter.
    pub fn reset(&mut self) {
        self.states.clear();
        self.steps = 0;
    }

    pub fn state(&self, id: ParamId) -> Option<&AdamState> {
        self.states.get(&id)
    }

    pub fn step(&mut self, store: &mut ParamStore, groups: &[UpdateGroup<'_>]) {
        self.steps += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.steps as i32);
        let bc2 = 1.0 - beta2.powi(self.steps as i32);
        for &(id, allowed) in groups {
            let p = store.get_mut(id);
            let len = p.value.len();
            let st = self.states.entry(id).or_insert_with(|| AdamState {
                m: vec![0.0; len],
                v: vec![0.0; len],
            });
            let grad = p.grad.data_mut();
            let value = p.value.data_mut();
            for i in 0..len {
                if let Some(mask) = allowed {
                    if !mask[i] {
                        grad[i] = 0.0;
                        continue;
                    }
                }
                let g = grad[i];
                st.m[i] = beta1 * st.m[i] + (1.0 - beta1) * g;
                st.v[i] = beta2 * st.v[i] + (1.0 - beta2) * g * g;
                let m_hat = st.m[i] / bc1;
                let v_hat = st.v[i] / bc2;
                value[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn one_step_from_known_moments_matches_hand_evaluation() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::scalar(0.5));
        store.get_mut(w).grad.data_mut()[0] = 0.2;
        let mut opt = MaskedAdam::new(AdamConfig {
            lr: 0.01,
            ..Default::default()
        });
        opt.states.insert(
            w,
            AdamState {
                m: vec![0.1],
                v: vec![0.04],
            },
        );
        opt.steps = 1;
        opt.step(&mut store, &[(w, None)]);

        // step 2: m = 0.9·0.1 + 0.1·0.2 = 0.11; v = 0.999·0.04 + 0.001·0.04 = 0.04
        // m̂ = 0.11 / (1 − 0.81) ; v̂ = 0.04 / (1 − 0.998001)
        let m_hat = 0.11 / 0.19;
        let v_hat = 0.04 / (1.0 - 0.999f64 * 0.999);
        let expected = 0.5 - 0.01 * m_hat / (v_hat.sqrt() + 1e-8);
        assert!((store.value(w).data()[0] - expected).abs() < 1e-15);
        let st = opt.state(w).unwrap();
        assert!((st.m[0] - 0.11).abs() < 1e-15);
        assert!((st.v[0] - 0.04).abs() < 1e-15);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::scalar(1.0));
        store.get_mut(w).grad.data_mut()[0] = 3.0;
        let mut opt = MaskedAdam::new(AdamConfig::default());
        opt.step(&mut store, &[(w, None)]);
        let moved = 1.0 - store.value(w).data()[0];
        assert!((moved - 0.0065).abs() < 1e-10);
    }

    #[test]
    fn excluded_entries_are_untouched() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap());
        store.get_mut(w).grad.fill(1.0);
        let mut opt = MaskedAdam::new(AdamConfig::default());
        let allowed = [false, true, false];
        opt.step(&mut store, &[(w, Some(&allowed))]);
        let v = store.value(w).data();
        assert_eq!(v[0].to_bits(), 1.0f64.to_bits());
        assert_eq!(v[2].to_bits(), 3.0f64.to_bits());
        assert!(v[1] < 2.0);
        let st = opt.state(w).unwrap();
        assert_eq!((st.m[0], st.v[0], st.m[2], st.v[2]), (0.0, 0.0, 0.0, 0.0));
        assert_eq!(store.grad(w).data(), &[0.0, 1.0, 0.0]);
    }
}
