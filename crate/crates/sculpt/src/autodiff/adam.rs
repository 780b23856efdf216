//! Adam optimizer state and the parameter store shared by the networks.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::container::Container;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment buffers per parameter tensor plus the step counter.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
    /// Steps skipped because a gradient was non-finite.
    pub skipped: u64,
}

impl AdamState {
    pub fn new(param_sizes: &[usize]) -> AdamState {
        AdamState {
            m: param_sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: param_sizes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
            skipped: 0,
        }
    }
}

/// One Adam update over a parameter list. If any gradient entry is
/// non-finite the whole step is skipped and the skip counter increments.
pub fn adam_step(
    params: &mut [Vec<f64>],
    grads: &[&[f64]],
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(crate::error::invalid(format!(
            "adam_step: {} params, {} grads, {} moment buffers",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (p, g) in params.iter().zip(grads) {
        if p.len() != g.len() {
            return Err(crate::error::shape_mismatch(
                "adam_step",
                &[p.len()],
                &[g.len()],
            ));
        }
    }
    if grads.iter().any(|g| g.iter().any(|v| !v.is_finite())) {
        state.skipped += 1;
        return Ok(());
    }
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        for i in 0..p.len() {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            let mhat = m[i] / bc1;
            let vhat = v[i] / bc2;
            p[i] -= cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

/// Named parameter tensors with deterministic ordering; the unit networks
/// bind these onto a tape each forward pass and checkpoints serialize them
/// with optimizer state.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    pub names: Vec<String>,
    pub shapes: Vec<Vec<usize>>,
    pub values: Vec<Vec<f64>>,
    index: BTreeMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> ParamStore {
        ParamStore::default()
    }

    pub fn add(&mut self, name: &str, shape: &[usize], data: Vec<f64>) -> usize {
        assert_eq!(shape.iter().product::<usize>(), data.len());
        assert!(
            !self.index.contains_key(name),
            "duplicate parameter {name}"
        );
        let id = self.names.len();
        self.names.push(name.to_string());
        self.shapes.push(shape.to_vec());
        self.values.push(data);
        self.index.insert(name.to_string(), id);
        id
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn id(&self, name: &str) -> usize {
        *self
            .index
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.values.iter().map(|v| v.len()).collect()
    }

    pub fn total_len(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    /// Stable content hash of all parameter values (frozen-stage checks).
    pub fn content_hash(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        let mut eat = |bytes: &[u8]| {
            for &b in bytes {
                h ^= b as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
        };
        for (name, values) in self.names.iter().zip(&self.values) {
            eat(name.as_bytes());
            for &v in values {
                eat(&v.to_le_bytes());
            }
        }
        h
    }

    /// Serializes parameters (and optimizer state when given) into a
    /// checkpoint container.
    pub fn save_checkpoint(
        &self,
        dir: &Path,
        state: Option<&AdamState>,
        metadata: &[(String, String)],
    ) -> Result<()> {
        let mut c = Container::new("checkpoint");
        for (k, v) in metadata {
            c.metadata.insert(k.clone(), v.clone());
        }
        for ((name, shape), values) in self.names.iter().zip(&self.shapes).zip(&self.values) {
            c.put_f32(&format!("param/{name}"), shape, values.clone());
        }
        if let Some(state) = state {
            c.metadata.insert("adam_t".into(), state.t.to_string());
            c.metadata
                .insert("adam_skipped".into(), state.skipped.to_string());
            for ((name, shape), (m, v)) in self
                .names
                .iter()
                .zip(&self.shapes)
                .zip(state.m.iter().zip(&state.v))
            {
                c.put_f32(&format!("adam_m/{name}"), shape, m.clone());
                c.put_f32(&format!("adam_v/{name}"), shape, v.clone());
            }
        }
        c.save(dir)
    }

    /// Loads parameter values (and optimizer state when present) into a
    /// store with matching names/shapes.
    pub fn load_checkpoint(&mut self, dir: &Path) -> Result<(Option<AdamState>, BTreeMap<String, String>)> {
        let c = Container::load(dir)?;
        if c.kind != "checkpoint" {
            return Err(Error::CheckpointMismatch(format!(
                "container kind `{}` is not a checkpoint",
                c.kind
            )));
        }
        for ((name, shape), values) in self
            .names
            .iter()
            .zip(&self.shapes)
            .zip(self.values.iter_mut())
        {
            let (got_shape, data) = c
                .get_f32(&format!("param/{name}"))
                .map_err(|_| Error::CheckpointMismatch(format!("checkpoint lacks `{name}`")))?;
            if got_shape != shape.as_slice() {
                return Err(Error::CheckpointMismatch(format!(
                    "`{name}` has shape {got_shape:?}, expected {shape:?}"
                )));
            }
            values.copy_from_slice(data);
        }
        let state = if c.has(&format!("adam_m/{}", self.names[0])) {
            let mut st = AdamState::new(&self.sizes());
            st.t = c
                .metadata
                .get("adam_t")
                .and_then(|s| s.parse().ok())
                .unwrap_or(0);
            st.skipped = c
                .metadata
                .get("adam_skipped")
                .and_then(|s| s.parse().ok())
                .unwrap_or(0);
            for (i, name) in self.names.iter().enumerate() {
                let (_, m) = c.get_f32(&format!("adam_m/{name}"))?;
                let (_, v) = c.get_f32(&format!("adam_v/{name}"))?;
                st.m[i].copy_from_slice(m);
                st.v[i].copy_from_slice(v);
            }
            Some(st)
        } else {
            None
        };
        Ok((state, c.metadata.clone()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_grads_leave_params_and_decay_moments() {
        let mut params = vec![vec![1.0, -2.0, 3.0]];
        let mut state = AdamState::new(&[3]);
        state.m[0] = vec![0.1, 0.1, 0.1];
        let zeros = vec![0.0; 3];
        adam_step(
            &mut params,
            &[&zeros],
            &mut state,
            &AdamConfig::default(),
        )
        .unwrap();
        assert!((state.m[0][0] - 0.09).abs() < 1e-15);
        // Params move slightly because the stale moment still points
        // somewhere; with zero moments they would not move at all.
        let mut params2 = vec![vec![1.0, -2.0, 3.0]];
        let mut state2 = AdamState::new(&[3]);
        adam_step(
            &mut params2,
            &[&zeros],
            &mut state2,
            &AdamConfig::default(),
        )
        .unwrap();
        assert_eq!(params2[0], vec![1.0, -2.0, 3.0]);
    }

    #[test]
    fn first_step_matches_closed_form() {
        let cfg = AdamConfig::default();
        let g = [0.5, -0.25, 1e-3];
        let mut params = vec![vec![0.0; 3]];
        let mut state = AdamState::new(&[3]);
        adam_step(&mut params, &[&g], &mut state, &cfg).unwrap();
        for i in 0..3 {
            // Step 1: mhat = g, vhat = g^2 -> update = -lr * g/(|g|+eps).
            let expect = -cfg.lr * g[i] / (g[i].abs() + cfg.eps);
            assert!(
                (params[0][i] - expect).abs() < 1e-12,
                "param {i}: {} vs {expect}",
                params[0][i]
            );
        }
        assert_eq!(state.t, 1);
    }

    #[test]
    fn non_finite_grads_skip_step() {
        let mut params = vec![vec![1.0]];
        let g = [f64::NAN];
        let mut state = AdamState::new(&[1]);
        adam_step(&mut params, &[&g], &mut state, &AdamConfig::default()).unwrap();
        assert_eq!(params[0][0], 1.0);
        assert_eq!(state.t, 0);
        assert_eq!(state.skipped, 1);
    }

    #[test]
    fn checkpoint_roundtrip_with_state() {
        let mut store = ParamStore::new();
        store.add("layer/w", &[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        store.add("layer/b", &[3], vec![0.5, -0.5, 0.25]);
        let mut state = AdamState::new(&store.sizes());
        state.t = 7;
        state.m[0][2] = 0.125;

        let dir = tempfile::tempdir().unwrap();
        store
            .save_checkpoint(dir.path(), Some(&state), &[("note".into(), "x".into())])
            .unwrap();

        let mut store2 = ParamStore::new();
        store2.add("layer/w", &[2, 3], vec![0.0; 6]);
        store2.add("layer/b", &[3], vec![0.0; 3]);
        let (loaded_state, meta) = store2.load_checkpoint(dir.path()).unwrap();
        assert_eq!(store2.values[0], store.values[0]);
        let st = loaded_state.unwrap();
        assert_eq!(st.t, 7);
        assert!((st.m[0][2] - 0.125).abs() < 1e-6);
        assert_eq!(meta["note"], "x");

        // Shape mismatch is a checkpoint error.
        let mut store3 = ParamStore::new();
        store3.add("layer/w", &[3, 2], vec![0.0; 6]);
        store3.add("layer/b", &[3], vec![0.0; 3]);
        match store3.load_checkpoint(dir.path()) {
            Err(Error::CheckpointMismatch(_)) => {}
            other => panic!("expected checkpoint mismatch, got {other:?}"),
        }
    }
}
