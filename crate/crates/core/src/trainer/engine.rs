//! Simulation of one sample presentation: stimulus window with optional
//! boosted retries, then the silent rest period.

use crate::dataio::Sample;
use crate::encoding::{
    image_to_rates, teacher_spikes, EncodingParams, PoissonSource, RngStream, StreamId,
    DOMAIN_TEACHER,
};
use crate::error::{Result, SnnError};
use crate::plasticity::{on_spikes, scale_in_synapses};
use crate::topology::{Deltas, Layers, NetworkConfig, StepSpikes, Synapses};

/// What may change during a presentation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Phase {
    pub learn_hidden: bool,
    pub learn_readout: bool,
    pub adapt_theta: bool,
    /// Output spikes come from the one-hot teacher instead of the output
    /// neurons' own dynamics.
    pub teacher: bool,
    pub retry: bool,
}

impl Phase {
    pub fn frozen(retry: bool) -> Self {
        Phase {
            retry,
            ..Phase::default()
        }
    }

    pub fn simultaneous() -> Self {
        Phase {
            learn_hidden: true,
            learn_readout: true,
            adapt_theta: true,
            teacher: true,
            retry: true,
        }
    }

    pub fn unsupervised() -> Self {
        Phase {
            learn_hidden: true,
            adapt_theta: true,
            retry: true,
            ..Phase::default()
        }
    }

    pub fn readout() -> Self {
        Phase {
            learn_readout: true,
            teacher: true,
            retry: true,
            ..Phase::default()
        }
    }

    pub fn is_plastic(&self) -> bool {
        self.learn_hidden || self.learn_readout || self.adapt_theta
    }
}

/// Read-only weights for evaluation, mutable ones for training.
pub enum Weights<'a> {
    Frozen(&'a Synapses),
    Plastic(&'a mut Synapses),
}

impl Weights<'_> {
    fn get(&self) -> &Synapses {
        match self {
            Weights::Frozen(s) => s,
            Weights::Plastic(s) => s,
        }
    }
}

/// Outcome of one presentation. Counts cover the whole final attempt,
/// stimulus and rest.
#[derive(Clone, Debug, PartialEq)]
pub struct RunRecord {
    pub sample_id: u64,
    pub label: u8,
    pub boost: u32,
    /// The final attempt still drove fewer hidden spikes than required.
    pub under_driven: bool,
    pub hidden_counts: Vec<u32>,
    pub sl_counts: Vec<u32>,
    /// Output neuron with the most spikes, lowest index on ties.
    pub predicted: usize,
    pub zero_output: bool,
}

pub fn argmax_lowest<T: PartialOrd + Copy>(xs: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Step counts and encoding shared by every presentation of a run.
#[derive(Clone, Debug)]
pub struct Engine {
    pub dt: f64,
    pub present_steps: u64,
    pub rest_steps: u64,
    pub encoding: EncodingParams,
    pub rng: RngStream,
    deltas: Deltas,
    spikes: StepSpikes,
}

struct Counts<'a> {
    hidden: &'a mut [u32],
    sl: &'a mut [u32],
    window_hidden: u32,
    window_sl: u32,
}

impl Engine {
    pub fn new(
        config: &NetworkConfig,
        dt: f64,
        present_steps: u64,
        rest_steps: u64,
        encoding: EncodingParams,
        seed: u64,
    ) -> Self {
        Engine {
            dt,
            present_steps,
            rest_steps,
            encoding,
            rng: RngStream::new(seed),
            deltas: Deltas::new(config),
            spikes: StepSpikes::default(),
        }
    }

    /// Presents `sample` once (plus retries). Input spikes are keyed by
    /// `input`; teacher spikes by the same sample key in the teacher domain.
    #[allow(clippy::too_many_arguments)]
    pub fn present(
        &mut self,
        mut weights: Weights<'_>,
        layers: &mut Layers,
        config: &NetworkConfig,
        sample: &Sample,
        sample_id: u64,
        input: StreamId,
        phase: Phase,
    ) -> Result<RunRecord> {
        if phase.is_plastic() && matches!(weights, Weights::Frozen(_)) {
            return Err(SnnError::Contract(
                "plastic phase requested with frozen weights".into(),
            ));
        }
        if sample.pixels.len() != config.n_input {
            return Err(SnnError::Contract(format!(
                "sample has {} pixels, network expects {}",
                sample.pixels.len(),
                config.n_input
            )));
        }
        let label = usize::from(sample.label);
        if label >= config.n_labels {
            return Err(SnnError::Contract(format!(
                "label {label} outside 0..{}",
                config.n_labels
            )));
        }
        let has_hidden = config.hidden_blocks == 1;
        let mut hidden_counts = vec![0u32; if has_hidden { config.n_hidden } else { 0 }];
        let mut sl_counts = vec![0u32; config.n_labels];
        let teacher_stream = StreamId::new(DOMAIN_TEACHER, input.sample);

        let mut boost = 0u32;
        let driven = loop {
            layers.reset_dynamics(config);
            self.deltas.clear();
            hidden_counts.fill(0);
            sl_counts.fill(0);
            let rates = image_to_rates(&sample.pixels, boost, &self.encoding);
            let source = PoissonSource::new(&rates, self.dt);
            let mut counts = Counts {
                hidden: &mut hidden_counts,
                sl: &mut sl_counts,
                window_hidden: 0,
                window_sl: 0,
            };
            for t in 0..self.present_steps {
                let teacher = phase.teacher.then(|| {
                    teacher_spikes(
                        label,
                        t,
                        self.dt,
                        &self.rng,
                        teacher_stream.with_boost(boost),
                        &self.encoding,
                    )
                });
                let input_stream = input.with_boost(boost);
                self.step(
                    &mut weights,
                    layers,
                    config,
                    t,
                    Some((&source, input_stream)),
                    teacher,
                    phase,
                    &mut counts,
                )?;
            }
            // Without a hidden block the output layer is the only gauge of
            // drive, and it is meaningless while the teacher controls it.
            let driven = if has_hidden {
                Some(counts.window_hidden)
            } else if !phase.teacher {
                Some(counts.window_sl)
            } else {
                None
            };
            match driven {
                Some(n) if phase.retry && self.encoding.needs_retry(n, boost) => boost += 1,
                _ => break driven,
            }
        };

        let mut counts = Counts {
            hidden: &mut hidden_counts,
            sl: &mut sl_counts,
            window_hidden: 0,
            window_sl: 0,
        };
        for t in self.present_steps..self.present_steps + self.rest_steps {
            let teacher = phase.teacher.then_some(None);
            self.step(&mut weights, layers, config, t, None, teacher, phase, &mut counts)?;
        }

        if let Weights::Plastic(syn) = &mut weights {
            if phase.learn_hidden {
                if let Some(h) = &mut syn.hidden {
                    scale_in_synapses(&mut h.input_exc, &config.scaling_input_hidden)?;
                }
            }
            if phase.learn_readout {
                scale_in_synapses(&mut syn.sl_in, &config.scaling_hidden_sl)?;
            }
        }

        let under_driven = driven.is_some_and(|n| n < self.encoding.min_hidden_spikes);
        let zero_output = sl_counts.iter().all(|&c| c == 0);
        Ok(RunRecord {
            sample_id,
            label: sample.label,
            boost,
            under_driven,
            predicted: argmax_lowest(&sl_counts),
            hidden_counts,
            sl_counts,
            zero_output,
        })
    }

    /// One integration step. `teacher` is `Some(spike)` while the teacher
    /// owns the output layer.
    #[allow(clippy::too_many_arguments)]
    fn step(
        &mut self,
        weights: &mut Weights<'_>,
        layers: &mut Layers,
        config: &NetworkConfig,
        t: u64,
        input: Option<(&PoissonSource, StreamId)>,
        teacher: Option<Option<usize>>,
        phase: Phase,
        counts: &mut Counts<'_>,
    ) -> Result<()> {
        let dt = self.dt;
        let now = t as f64 * dt;
        let d = &mut self.deltas;
        let s = &mut self.spikes;
        s.clear();

        if let (Some(exc), Some(inh)) = (&mut layers.exc, &mut layers.inh) {
            exc.decay_conductances(&config.hidden_neuron, dt);
            inh.decay_conductances(&config.inhibitory_neuron, dt);
            exc.inject_spikes(&d.exc_ge, &d.exc_gi)?;
            inh.inject_spikes(&d.inh_ge, &d.inh_gi)?;
        }
        layers.sl.decay_conductances(&config.sl_neuron, dt);
        layers.sl.inject_spikes(&d.sl_ge, &d.sl_gi)?;
        d.clear();

        if let Some((source, stream)) = input {
            source.sample(&self.rng, stream, t, &mut s.input);
        }
        if let (Some(exc), Some(inh)) = (&mut layers.exc, &mut layers.inh) {
            exc.step_membrane(&config.hidden_neuron, dt, now)?;
            exc.fire_and_reset(&config.hidden_neuron, now, &mut s.exc);
            inh.step_membrane(&config.inhibitory_neuron, dt, now)?;
            inh.fire_and_reset(&config.inhibitory_neuron, now, &mut s.inh);
        }
        match teacher {
            Some(spike) => s.sl.extend(spike),
            None => {
                layers.sl.step_membrane(&config.sl_neuron, dt, now)?;
                layers.sl.fire_and_reset(&config.sl_neuron, now, &mut s.sl);
            }
        }

        if phase.adapt_theta {
            if let Some(exc) = &mut layers.exc {
                exc.update_theta(&config.hidden_theta, &s.exc, dt);
            }
        }

        if let Weights::Plastic(syn) = weights {
            if phase.learn_hidden {
                if let (Some(h), Some(tr)) = (&mut syn.hidden, &mut layers.input_traces) {
                    tr.decay(&config.stdp_input_hidden, dt);
                    on_spikes(&mut h.input_exc, tr, &s.input, &s.exc, &config.stdp_input_hidden)?;
                }
            }
            if phase.learn_readout {
                let pre = if syn.hidden.is_some() { &s.exc } else { &s.input };
                layers.sl_traces.decay(&config.stdp_hidden_sl, dt);
                on_spikes(&mut syn.sl_in, &mut layers.sl_traces, pre, &s.sl, &config.stdp_hidden_sl)?;
            }
        }

        weights.get().propagate(s, d);

        for &i in &s.exc {
            counts.hidden[i] += 1;
        }
        for &j in &s.sl {
            counts.sl[j] += 1;
        }
        counts.window_hidden += s.exc.len() as u32;
        counts.window_sl += s.sl.len() as u32;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoding::DOMAIN_INPUT;
    use crate::topology::build_network;

    fn setup(n: usize) -> (NetworkConfig, crate::topology::Network, Engine) {
        let cfg = NetworkConfig::mnist(n, 6e6, 8.4e5, 0.1);
        let net = build_network(&cfg, 1).unwrap();
        let eng = Engine::new(&cfg, 0.5, 700, 300, EncodingParams::default(), 9);
        (cfg, net, eng)
    }

    fn blank(label: u8) -> Sample {
        Sample {
            pixels: vec![0.0; 784],
            label,
        }
    }

    #[test]
    fn argmax_prefers_lowest_index() {
        assert_eq!(argmax_lowest(&[0u32, 3, 3, 1]), 1);
        assert_eq!(argmax_lowest(&[0u32; 10]), 0);
    }

    #[test]
    fn blank_image_retries_to_the_cap() {
        let (cfg, net, mut eng) = setup(10);
        let mut layers = net.layers.clone();
        let r = eng
            .present(
                Weights::Frozen(&net.synapses),
                &mut layers,
                &cfg,
                &blank(3),
                0,
                StreamId::new(DOMAIN_INPUT, 0),
                Phase::frozen(true),
            )
            .unwrap();
        assert_eq!(r.boost, eng.encoding.max_retries);
        assert!(r.under_driven);
        assert!(r.zero_output);
        assert_eq!(r.predicted, 0);
    }

    #[test]
    fn frozen_weights_reject_plastic_phase() {
        let (cfg, net, mut eng) = setup(10);
        let mut layers = net.layers.clone();
        let e = eng.present(
            Weights::Frozen(&net.synapses),
            &mut layers,
            &cfg,
            &blank(0),
            0,
            StreamId::new(DOMAIN_INPUT, 0),
            Phase::simultaneous(),
        );
        assert!(matches!(e, Err(SnnError::Contract(_))));
    }

    #[test]
    fn teacher_drives_only_the_label() {
        let (cfg, mut net, mut eng) = setup(10);
        let r = eng
            .present(
                Weights::Plastic(&mut net.synapses),
                &mut net.layers,
                &cfg,
                &blank(6),
                0,
                StreamId::new(DOMAIN_INPUT, 0),
                Phase::readout(),
            )
            .unwrap();
        assert!(r.sl_counts[6] > 0);
        assert_eq!(r.sl_counts.iter().sum::<u32>(), r.sl_counts[6]);
    }
}
