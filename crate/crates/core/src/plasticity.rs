//! Symmetric pair-based STDP realized with all-to-all traces, and
//! per-neuron synaptic scaling.
//!
//! Both branches of the rule potentiate: a post spike adds `A+ * x_pre` to
//! every in-synapse and a pre spike adds `A- * x_post` to every out-synapse.
//! Learning rates are expressed relative to the matrix `w_max`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SnnError};
use crate::topology::SynapseMatrix;

/// Matrices with at least this many entries are updated with rayon.
pub(crate) const PAR_MIN_ENTRIES: usize = 1 << 18;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StdpParams {
    /// Potentiation per unit pre trace on a post spike, as a fraction of `w_max`.
    pub a_plus: f64,
    /// Potentiation per unit post trace on a pre spike, as a fraction of `w_max`.
    pub a_minus: f64,
    pub tau_plus: f64,
    pub tau_minus: f64,
}

impl Default for StdpParams {
    fn default() -> Self {
        StdpParams {
            a_plus: 0.01,
            a_minus: 0.01,
            tau_plus: 20.0,
            tau_minus: 20.0,
        }
    }
}

impl StdpParams {
    /// Symmetric rule with `a_plus = a_minus = rate` and the default window.
    pub fn with_rate(rate: f64) -> Self {
        StdpParams {
            a_plus: rate,
            a_minus: rate,
            ..StdpParams::default()
        }
    }

    pub fn validate(&self, name: &str) -> Result<()> {
        for (f, v) in [
            ("a_plus", self.a_plus),
            ("a_minus", self.a_minus),
            ("tau_plus", self.tau_plus),
            ("tau_minus", self.tau_minus),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(SnnError::config(format!("{name}.{f}"), "must be > 0"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceState {
    pub x_pre: Vec<f64>,
    pub x_post: Vec<f64>,
}

impl TraceState {
    pub fn new(n_pre: usize, n_post: usize) -> Self {
        TraceState {
            x_pre: vec![0.0; n_pre],
            x_post: vec![0.0; n_post],
        }
    }

    pub fn reset(&mut self) {
        self.x_pre.fill(0.0);
        self.x_post.fill(0.0);
    }

    pub fn decay(&mut self, params: &StdpParams, dt: f64) {
        let fp = (-dt / params.tau_plus).exp();
        let fm = (-dt / params.tau_minus).exp();
        self.x_pre.iter_mut().for_each(|x| *x *= fp);
        self.x_post.iter_mut().for_each(|x| *x *= fm);
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingParams {
    /// Target mean in-weight; columns are scaled to sum to `beta * N_in`.
    pub beta: f64,
    /// Columns whose sum is below this are left alone.
    pub sum_floor: f64,
}

impl ScalingParams {
    pub fn new(beta: f64) -> Self {
        ScalingParams {
            beta,
            sum_floor: 1e-6,
        }
    }

    pub fn validate(&self, name: &str) -> Result<()> {
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(SnnError::config(format!("{name}.beta"), "must lie in (0, 1)"));
        }
        if !(self.sum_floor >= 0.0) {
            return Err(SnnError::config(format!("{name}.sum_floor"), "must be >= 0"));
        }
        Ok(())
    }
}

/// Applies one step of symmetric STDP for the spikes emitted this step.
///
/// Both branches read the traces as they stand after this step's decay and
/// before this step's increments, so a same-step pre/post pair is seen by
/// neither branch and the result does not depend on branch order.
pub fn on_spikes(
    weights: &mut SynapseMatrix,
    traces: &mut TraceState,
    pre_spikes: &[usize],
    post_spikes: &[usize],
    params: &StdpParams,
) -> Result<()> {
    if !weights.plastic {
        return Err(SnnError::Contract(
            "STDP applied to a non-plastic synapse matrix".into(),
        ));
    }
    if traces.x_pre.len() != weights.n_pre || traces.x_post.len() != weights.n_post {
        return Err(SnnError::Contract(format!(
            "trace shape {}x{} does not match matrix {}x{}",
            traces.x_pre.len(),
            traces.x_post.len(),
            weights.n_pre,
            weights.n_post
        )));
    }
    let w_max = weights.w_max;
    let n_post = weights.n_post;

    if !post_spikes.is_empty() {
        let a = params.a_plus * w_max;
        let x_pre = &traces.x_pre;
        let row_update = |(i, row): (usize, &mut [f64])| {
            let x = x_pre[i];
            if x == 0.0 {
                return;
            }
            let dw = a * x;
            for &j in post_spikes {
                row[j] = (row[j] + dw).clamp(0.0, w_max);
            }
        };
        if weights.weights.len() >= PAR_MIN_ENTRIES {
            weights
                .weights
                .par_chunks_mut(n_post)
                .enumerate()
                .for_each(row_update);
        } else {
            weights
                .weights
                .chunks_mut(n_post)
                .enumerate()
                .for_each(row_update);
        }
    }

    if !pre_spikes.is_empty() {
        let a = params.a_minus * w_max;
        let x_post = &traces.x_post;
        for &i in pre_spikes {
            let row = weights.row_mut(i);
            for (w, &x) in row.iter_mut().zip(x_post) {
                if x != 0.0 {
                    *w = (*w + a * x).clamp(0.0, w_max);
                }
            }
        }
    }

    for &i in pre_spikes {
        traces.x_pre[i] += 1.0;
    }
    for &j in post_spikes {
        traces.x_post[j] += 1.0;
    }
    Ok(())
}

/// Rescales every in-synapse column to sum to `beta * N_in`, then clamps to
/// `[0, w_max]`. Columns summing below `sum_floor` are untouched.
pub fn scale_in_synapses(weights: &mut SynapseMatrix, params: &ScalingParams) -> Result<()> {
    if !weights.plastic {
        return Err(SnnError::Contract(
            "synaptic scaling applied to a non-plastic synapse matrix".into(),
        ));
    }
    let target = params.beta * weights.n_pre as f64;
    let sums = weights.column_sums();
    let factors: Vec<Option<f64>> = sums
        .iter()
        .map(|&s| (s >= params.sum_floor && s > 0.0).then(|| target / s))
        .collect();
    let w_max = weights.w_max;
    let scale_row = |row: &mut [f64]| {
        for (w, f) in row.iter_mut().zip(&factors) {
            if let Some(f) = f {
                *w = (*w * f).min(w_max);
            }
        }
    };
    let n_post = weights.n_post;
    if weights.weights.len() >= PAR_MIN_ENTRIES {
        weights.weights.par_chunks_mut(n_post).for_each(scale_row);
    } else {
        weights.weights.chunks_mut(n_post).for_each(scale_row);
    }
    Ok(())
}
