//! Network wiring: Poisson input, excitatory hidden layer with one-to-one
//! inhibitory partners, and the supervised output layer.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoding::{RngStream, StreamId};
use crate::error::{Result, SnnError};
use crate::neurodyn::{LayerState, NeuronParams, ThetaParams};
use crate::plasticity::{ScalingParams, StdpParams, TraceState, PAR_MIN_ENTRIES};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynapseKind {
    Excitatory,
    Inhibitory,
}

/// Dense `[n_pre x n_post]` weight matrix, row-major by presynaptic neuron.
#[derive(Clone, Debug, PartialEq)]
pub struct SynapseMatrix {
    pub n_pre: usize,
    pub n_post: usize,
    pub weights: Vec<f64>,
    pub w_max: f64,
    pub plastic: bool,
    pub kind: SynapseKind,
}

impl SynapseMatrix {
    pub fn filled(
        n_pre: usize,
        n_post: usize,
        w: f64,
        w_max: f64,
        plastic: bool,
        kind: SynapseKind,
    ) -> Self {
        SynapseMatrix {
            n_pre,
            n_post,
            weights: vec![w; n_pre * n_post],
            w_max,
            plastic,
            kind,
        }
    }

    /// I.i.d. uniform weights on `[0, init_fraction * w_max)`.
    pub fn uniform(
        n_pre: usize,
        n_post: usize,
        w_max: f64,
        init_fraction: f64,
        rng: RngStream,
        stream: StreamId,
    ) -> Self {
        let hi = init_fraction * w_max;
        let key = rng.step_key(stream, 0);
        let weights = (0..n_pre * n_post)
            .map(|k| key.uniform(k as u64) * hi)
            .collect();
        SynapseMatrix {
            n_pre,
            n_post,
            weights,
            w_max,
            plastic: true,
            kind: SynapseKind::Excitatory,
        }
    }

    #[inline]
    pub fn get(&self, pre: usize, post: usize) -> f64 {
        self.weights[pre * self.n_post + post]
    }

    #[inline]
    pub fn set(&mut self, pre: usize, post: usize, w: f64) {
        self.weights[pre * self.n_post + post] = w;
    }

    #[inline]
    pub fn row(&self, pre: usize) -> &[f64] {
        &self.weights[pre * self.n_post..(pre + 1) * self.n_post]
    }

    #[inline]
    pub fn row_mut(&mut self, pre: usize) -> &mut [f64] {
        &mut self.weights[pre * self.n_post..(pre + 1) * self.n_post]
    }

    pub fn column(&self, post: usize) -> Vec<f64> {
        (0..self.n_pre).map(|i| self.get(i, post)).collect()
    }

    /// Column sums, accumulated in ascending presynaptic order.
    pub fn column_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.n_post];
        for row in self.weights.chunks(self.n_post) {
            for (s, w) in sums.iter_mut().zip(row) {
                *s += w;
            }
        }
        sums
    }

    pub fn synapse_count(&self) -> usize {
        self.n_pre * self.n_post
    }

    /// Adds the rows of every spiking presynaptic neuron into `out`.
    pub fn gather_rows(&self, spikes: &[usize], out: &mut [f64]) {
        if spikes.is_empty() {
            return;
        }
        debug_assert_eq!(out.len(), self.n_post);
        if self.n_post * spikes.len() >= PAR_MIN_ENTRIES / 16 && self.n_post >= 1024 {
            const CHUNK: usize = 512;
            out.par_chunks_mut(CHUNK).enumerate().for_each(|(c, dst)| {
                let lo = c * CHUNK;
                for &i in spikes {
                    let src = &self.row(i)[lo..lo + dst.len()];
                    for (d, w) in dst.iter_mut().zip(src) {
                        *d += w;
                    }
                }
            });
        } else {
            for &i in spikes {
                for (d, w) in out.iter_mut().zip(self.row(i)) {
                    *d += w;
                }
            }
        }
    }
}

/// Fixed lateral circuit of the hidden layer: excitatory neuron `k` drives
/// inhibitory neuron `k` only, and inhibitory neuron `k` inhibits every
/// excitatory neuron except `k`. Stored implicitly; the dense equivalent
/// would be quadratic in the layer size.
#[derive(Clone, Debug, PartialEq)]
pub struct LateralWiring {
    pub n: usize,
    pub w_exc_to_inh: f64,
    pub w_inh_to_exc: f64,
}

impl LateralWiring {
    pub fn exc_to_inh(&self, pre: usize, post: usize) -> f64 {
        if pre == post {
            self.w_exc_to_inh
        } else {
            0.0
        }
    }

    pub fn inh_to_exc(&self, pre: usize, post: usize) -> f64 {
        if pre == post {
            0.0
        } else {
            self.w_inh_to_exc
        }
    }

    pub fn exc_to_inh_matrix(&self) -> SynapseMatrix {
        let mut m = SynapseMatrix::filled(self.n, self.n, 0.0, self.w_exc_to_inh, false, SynapseKind::Excitatory);
        for k in 0..self.n {
            m.set(k, k, self.w_exc_to_inh);
        }
        m
    }

    pub fn inh_to_exc_matrix(&self) -> SynapseMatrix {
        let mut m = SynapseMatrix::filled(
            self.n,
            self.n,
            self.w_inh_to_exc,
            self.w_inh_to_exc,
            false,
            SynapseKind::Inhibitory,
        );
        for k in 0..self.n {
            m.set(k, k, 0.0);
        }
        m
    }

    pub fn exc_to_inh_count(&self) -> usize {
        self.n
    }

    pub fn inh_to_exc_count(&self) -> usize {
        self.n * self.n.saturating_sub(1)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub image_width: usize,
    pub image_height: usize,
    pub n_input: usize,
    pub n_hidden: usize,
    pub n_labels: usize,
    /// 1 for the full model; 0 wires input straight to the output layer.
    pub hidden_blocks: u8,
    pub w_max_input_hidden: f64,
    pub w_max_hidden_sl: f64,
    /// Used only when `hidden_blocks == 0`.
    pub w_max_input_sl: f64,
    pub w_exc_to_inh: f64,
    pub w_inh_to_exc: f64,
    pub init_fraction: f64,
    pub hidden_neuron: NeuronParams,
    pub hidden_theta: ThetaParams,
    pub inhibitory_neuron: NeuronParams,
    pub sl_neuron: NeuronParams,
    pub sl_theta: ThetaParams,
    pub stdp_input_hidden: StdpParams,
    pub stdp_hidden_sl: StdpParams,
    pub scaling_input_hidden: ScalingParams,
    pub scaling_hidden_sl: ScalingParams,
}

impl NetworkConfig {
    /// MNIST-shaped network with `n_hidden` excitatory neurons and the given
    /// adaptive-threshold constants.
    ///
    /// Inhibition strength, the output threshold offset and both learning
    /// rates are calibrated values; see the reproduction notes in the README.
    pub fn mnist(n_hidden: usize, tau_theta: f64, alpha: f64, beta: f64) -> Self {
        NetworkConfig {
            image_width: 28,
            image_height: 28,
            n_input: 784,
            n_hidden,
            n_labels: 10,
            hidden_blocks: 1,
            w_max_input_hidden: 1.0,
            w_max_hidden_sl: 8.0,
            w_max_input_sl: 8.0,
            w_exc_to_inh: 10.4,
            w_inh_to_exc: 40.0,
            init_fraction: 0.3,
            hidden_neuron: NeuronParams::excitatory(),
            hidden_theta: ThetaParams::new(tau_theta, alpha),
            inhibitory_neuron: NeuronParams::inhibitory(),
            sl_neuron: NeuronParams::excitatory(),
            sl_theta: ThetaParams::fixed(7.5),
            stdp_input_hidden: StdpParams::with_rate(1e-3),
            stdp_hidden_sl: StdpParams::with_rate(3e-4),
            scaling_input_hidden: ScalingParams::new(beta),
            scaling_hidden_sl: ScalingParams::new(beta),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_input != self.image_width * self.image_height {
            return Err(SnnError::config(
                "network.n_input",
                format!(
                    "is {} but the image is {}x{}",
                    self.n_input, self.image_width, self.image_height
                ),
            ));
        }
        if self.n_input == 0 {
            return Err(SnnError::config("network.n_input", "must be > 0"));
        }
        if self.n_labels < 2 {
            return Err(SnnError::config("network.n_labels", "must be >= 2"));
        }
        match self.hidden_blocks {
            0 => {}
            1 => {
                if self.n_hidden == 0 {
                    return Err(SnnError::config("network.n_hidden", "must be > 0"));
                }
            }
            n => {
                return Err(SnnError::config(
                    "network.hidden_blocks",
                    format!("must be 0 or 1, got {n}"),
                ))
            }
        }
        if !(self.init_fraction > 0.0 && self.init_fraction <= 1.0) {
            return Err(SnnError::config("network.init_fraction", "must lie in (0, 1]"));
        }
        for (f, v) in [
            ("network.w_max_input_hidden", self.w_max_input_hidden),
            ("network.w_max_hidden_sl", self.w_max_hidden_sl),
            ("network.w_max_input_sl", self.w_max_input_sl),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(SnnError::config(f, "must be > 0"));
            }
        }
        for (f, v) in [
            ("network.w_exc_to_inh", self.w_exc_to_inh),
            ("network.w_inh_to_exc", self.w_inh_to_exc),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(SnnError::config(f, "must be >= 0"));
            }
        }
        self.hidden_neuron.validate("network.hidden_neuron")?;
        self.hidden_theta.validate("network.hidden_theta")?;
        self.inhibitory_neuron.validate("network.inhibitory_neuron")?;
        self.sl_neuron.validate("network.sl_neuron")?;
        self.sl_theta.validate("network.sl_theta")?;
        self.stdp_input_hidden.validate("network.stdp_input_hidden")?;
        self.stdp_hidden_sl.validate("network.stdp_hidden_sl")?;
        self.scaling_input_hidden.validate("network.scaling_input_hidden")?;
        self.scaling_hidden_sl.validate("network.scaling_hidden_sl")?;
        Ok(())
    }
}

/// Excitatory/inhibitory hidden block.
#[derive(Clone, Debug, PartialEq)]
pub struct HiddenBlock {
    pub input_exc: SynapseMatrix,
    pub lateral: LateralWiring,
}

/// Weights of a network; shared read-only by evaluation workers.
#[derive(Clone, Debug, PartialEq)]
pub struct Synapses {
    pub hidden: Option<HiddenBlock>,
    /// Hidden-E to output, or input to output without a hidden block.
    pub sl_in: SynapseMatrix,
}

/// Per-population dynamic state plus STDP traces.
#[derive(Clone, Debug, PartialEq)]
pub struct Layers {
    pub exc: Option<LayerState>,
    pub inh: Option<LayerState>,
    pub sl: LayerState,
    pub input_traces: Option<TraceState>,
    pub sl_traces: TraceState,
}

impl Layers {
    /// Returns every population to rest and clears all traces. Thresholds are
    /// kept.
    pub fn reset_dynamics(&mut self, config: &NetworkConfig) {
        if let Some(exc) = &mut self.exc {
            exc.reset_dynamics(&config.hidden_neuron);
        }
        if let Some(inh) = &mut self.inh {
            inh.reset_dynamics(&config.inhibitory_neuron);
        }
        self.sl.reset_dynamics(&config.sl_neuron);
        if let Some(t) = &mut self.input_traces {
            t.reset();
        }
        self.sl_traces.reset();
    }

    pub fn hidden_theta(&self) -> Option<&[f64]> {
        self.exc.as_ref().map(|e| e.theta.as_slice())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    pub config: NetworkConfig,
    pub synapses: Synapses,
    pub layers: Layers,
}

/// Spikes emitted by every population in one step.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct StepSpikes {
    pub input: Vec<usize>,
    pub exc: Vec<usize>,
    pub inh: Vec<usize>,
    pub sl: Vec<usize>,
}

impl StepSpikes {
    pub fn clear(&mut self) {
        self.input.clear();
        self.exc.clear();
        self.inh.clear();
        self.sl.clear();
    }
}

/// Conductance increments to deliver on the next step.
#[derive(Clone, Debug, PartialEq)]
pub struct Deltas {
    pub exc_ge: Vec<f64>,
    pub exc_gi: Vec<f64>,
    pub inh_ge: Vec<f64>,
    pub inh_gi: Vec<f64>,
    pub sl_ge: Vec<f64>,
    pub sl_gi: Vec<f64>,
}

impl Deltas {
    pub fn new(config: &NetworkConfig) -> Self {
        let nh = if config.hidden_blocks == 1 { config.n_hidden } else { 0 };
        Deltas {
            exc_ge: vec![0.0; nh],
            exc_gi: vec![0.0; nh],
            inh_ge: vec![0.0; nh],
            inh_gi: vec![0.0; nh],
            sl_ge: vec![0.0; config.n_labels],
            sl_gi: vec![0.0; config.n_labels],
        }
    }

    pub fn clear(&mut self) {
        for v in [
            &mut self.exc_ge,
            &mut self.exc_gi,
            &mut self.inh_ge,
            &mut self.inh_gi,
            &mut self.sl_ge,
            &mut self.sl_gi,
        ] {
            v.fill(0.0);
        }
    }

    pub fn is_zero(&self) -> bool {
        [
            &self.exc_ge,
            &self.exc_gi,
            &self.inh_ge,
            &self.inh_gi,
            &self.sl_ge,
            &self.sl_gi,
        ]
        .iter()
        .all(|v| v.iter().all(|&x| x == 0.0))
    }
}

pub(crate) const WEIGHTS_INPUT_HIDDEN: u64 = 1;
pub(crate) const WEIGHTS_SL: u64 = 2;

/// Builds a network from `config`, drawing plastic weights from `rng_seed`.
pub fn build_network(config: &NetworkConfig, rng_seed: u64) -> Result<Network> {
    config.validate()?;
    let rng = RngStream::new(rng_seed);
    let weight_stream = |which| StreamId::new(crate::encoding::DOMAIN_WEIGHTS, which);

    let (hidden, exc, inh, input_traces, sl_pre, w_max_sl) = if config.hidden_blocks == 1 {
        let n = config.n_hidden;
        let input_exc = SynapseMatrix::uniform(
            config.n_input,
            n,
            config.w_max_input_hidden,
            config.init_fraction,
            rng,
            weight_stream(WEIGHTS_INPUT_HIDDEN),
        );
        let lateral = LateralWiring {
            n,
            w_exc_to_inh: config.w_exc_to_inh,
            w_inh_to_exc: config.w_inh_to_exc,
        };
        (
            Some(HiddenBlock { input_exc, lateral }),
            Some(LayerState::new("hidden_exc", n, &config.hidden_neuron, config.hidden_theta.theta_initial)),
            Some(LayerState::new("hidden_inh", n, &config.inhibitory_neuron, 0.0)),
            Some(TraceState::new(config.n_input, n)),
            n,
            config.w_max_hidden_sl,
        )
    } else {
        (None, None, None, None, config.n_input, config.w_max_input_sl)
    };

    let sl_in = SynapseMatrix::uniform(
        sl_pre,
        config.n_labels,
        w_max_sl,
        config.init_fraction,
        rng,
        weight_stream(WEIGHTS_SL),
    );
    let sl = LayerState::new(
        "sl",
        config.n_labels,
        &config.sl_neuron,
        config.sl_theta.theta_initial,
    );
    Ok(Network {
        config: config.clone(),
        synapses: Synapses { hidden, sl_in },
        layers: Layers {
            exc,
            inh,
            sl,
            input_traces,
            sl_traces: TraceState::new(sl_pre, config.n_labels),
        },
    })
}

impl Synapses {
    /// Accumulates the conductance increments caused by `spikes` into `out`.
    /// Work is proportional to the number of spikes times their fan-out.
    pub fn propagate(&self, spikes: &StepSpikes, out: &mut Deltas) {
        match &self.hidden {
            Some(h) => {
                h.input_exc.gather_rows(&spikes.input, &mut out.exc_ge);
                for &k in &spikes.exc {
                    out.inh_ge[k] += h.lateral.w_exc_to_inh;
                }
                self.sl_in.gather_rows(&spikes.exc, &mut out.sl_ge);
                let w = h.lateral.w_inh_to_exc;
                for &k in &spikes.inh {
                    for (j, g) in out.exc_gi.iter_mut().enumerate() {
                        if j != k {
                            *g += w;
                        }
                    }
                }
            }
            None => self.sl_in.gather_rows(&spikes.input, &mut out.sl_ge),
        }
    }
}
