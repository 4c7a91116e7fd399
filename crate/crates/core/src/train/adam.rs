use std::collections::HashMap;

use crate::gauss::{DensifyKind, DensifySource};
use crate::nn::ParamStore;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Clone, Debug, Default)]
struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

/// Per-parameter Adam with bias correction. A non-finite gradient skips the
/// update for that parameter and bumps the fault counter; moments stay put.
#[derive(Clone, Debug, Default)]
pub struct Adam {
    state: HashMap<String, AdamState>,
    pub skipped: usize,
}

impl Adam {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns false when the gradient was rejected.
    pub fn step(&mut self, store: &mut ParamStore, name: &str, grad: &[f64], lr: f64) -> bool {
        if grad.iter().any(|g| !g.is_finite()) {
            self.skipped += 1;
            return false;
        }
        let p = store.get_mut(name);
        assert_eq!(p.values.len(), grad.len(), "{name}: gradient length mismatch");
        let st = self.state.entry(name.to_string()).or_default();
        if st.m.len() != grad.len() {
            assert!(st.m.is_empty(), "{name}: stale optimizer state; remap after resizing");
            st.m = vec![0.0; grad.len()];
            st.v = vec![0.0; grad.len()];
        }
        st.t += 1;
        let bc1 = 1.0 - ADAM_BETA1.powi(st.t as i32);
        let bc2 = 1.0 - ADAM_BETA2.powi(st.t as i32);
        for i in 0..grad.len() {
            st.m[i] = ADAM_BETA1 * st.m[i] + (1.0 - ADAM_BETA1) * grad[i];
            st.v[i] = ADAM_BETA2 * st.v[i] + (1.0 - ADAM_BETA2) * grad[i] * grad[i];
            let mh = st.m[i] / bc1;
            let vh = st.v[i] / bc2;
            p.values[i] -= lr * mh / (vh.sqrt() + ADAM_EPS);
        }
        true
    }

    /// Rebuilds a parameter's moment rows after densification: survivors
    /// keep their state, clones and split halves start fresh.
    pub fn remap(&mut self, name: &str, sources: &[DensifySource], row: usize) {
        let Some(st) = self.state.get_mut(name) else { return };
        let (mut m, mut v) = (vec![0.0; sources.len() * row], vec![0.0; sources.len() * row]);
        for (i, s) in sources.iter().enumerate() {
            if s.kind == DensifyKind::Kept {
                m[i * row..(i + 1) * row].copy_from_slice(&st.m[s.index * row..(s.index + 1) * row]);
                v[i * row..(i + 1) * row].copy_from_slice(&st.v[s.index * row..(s.index + 1) * row]);
            }
        }
        st.m = m;
        st.v = v;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with(name: &str, vals: Vec<f64>) -> ParamStore {
        let mut s = ParamStore::new();
        let n = vals.len();
        s.register(name, &[n], vals);
        s
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut store = store_with("p", vec![1.0, -2.0]);
        let mut opt = Adam::new();
        for _ in 0..5 {
            assert!(opt.step(&mut store, "p", &[0.0, 0.0], 0.1));
        }
        assert_eq!(store.get("p").values, vec![1.0, -2.0]);
    }

    #[test]
    fn converges_on_a_quadratic_bowl() {
        let mut store = store_with("x", vec![3.0, -4.0]);
        let mut opt = Adam::new();
        for _ in 0..2000 {
            let x = store.get("x").values.clone();
            let grad: Vec<f64> = x.iter().map(|&v| 2.0 * v).collect();
            opt.step(&mut store, "x", &grad, 0.05);
        }
        for &v in &store.get("x").values {
            assert!(v.abs() < 1e-3, "{v}");
        }
    }

    #[test]
    fn first_step_moves_by_about_lr() {
        // with bias correction the very first update is ~lr * sign(grad)
        let mut store = store_with("x", vec![0.0]);
        let mut opt = Adam::new();
        opt.step(&mut store, "x", &[2.5], 0.01);
        let v = store.get("x").values[0];
        assert!((v + 0.01).abs() < 1e-6, "{v}");
    }

    #[test]
    fn non_finite_gradient_is_skipped_and_counted() {
        let mut store = store_with("x", vec![1.0]);
        let mut opt = Adam::new();
        assert!(!opt.step(&mut store, "x", &[f64::NAN], 0.1));
        assert_eq!(store.get("x").values, vec![1.0]);
        assert_eq!(opt.skipped, 1);
        // state untouched: a later clean step behaves like the first
        opt.step(&mut store, "x", &[1.0], 0.01);
        assert!((store.get("x").values[0] - 0.99).abs() < 1e-6);
    }

    #[test]
    fn remap_keeps_survivor_state_and_resets_new_rows() {
        use crate::gauss::{DensifyKind, DensifySource};
        let mut store = store_with("x", vec![1.0, 2.0]);
        let mut opt = Adam::new();
        opt.step(&mut store, "x", &[0.5, -0.5], 0.01);
        let sources = vec![
            DensifySource { index: 1, kind: DensifyKind::Kept },
            DensifySource { index: 1, kind: DensifyKind::Clone },
        ];
        opt.remap("x", &sources, 1);
        let st = opt.state.get("x").unwrap();
        assert!(st.m[0] != 0.0);
        assert_eq!(st.m[1], 0.0);
        assert_eq!(st.v[1], 0.0);
    }
}
