//! Conductance-based leaky integrate-and-fire dynamics with an adaptive
//! threshold.
//!
//! Membrane potential follows
//! `tau_m dV/dt = (E_rest - V) + gE (E_exc - V) + gI (E_inh - V)`, integrated
//! with forward Euler. Conductances and the threshold offset `theta` decay
//! exponentially and are advanced with their exact decay factor.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SnnError};

/// Slack used when comparing simulation clocks against refractory deadlines.
const CLOCK_EPS: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeuronParams {
    /// Resting potential (mV).
    pub e_rest: f64,
    /// Excitatory reversal potential (mV).
    pub e_exc: f64,
    /// Inhibitory reversal potential (mV).
    pub e_inh: f64,
    /// Potential after a spike (mV).
    pub e_reset: f64,
    /// Membrane time constant (ms).
    pub tau_m: f64,
    /// Constant part of the firing threshold (mV).
    pub v_th_const: f64,
    /// Absolute refractory period (ms).
    pub t_refractory: f64,
    pub tau_ge: f64,
    pub tau_gi: f64,
}

impl NeuronParams {
    /// Excitatory hidden-layer neuron: rest and reset at -65 mV, 100 ms
    /// membrane constant, 1 ms synapses, 2 ms refractory period.
    pub fn excitatory() -> Self {
        NeuronParams {
            e_rest: -65.0,
            e_exc: 0.0,
            e_inh: -100.0,
            e_reset: -65.0,
            tau_m: 100.0,
            v_th_const: -72.0,
            t_refractory: 2.0,
            tau_ge: 1.0,
            tau_gi: 1.0,
        }
    }

    /// Fast inhibitory interneuron with a fixed -40 mV threshold.
    pub fn inhibitory() -> Self {
        NeuronParams {
            e_rest: -60.0,
            e_exc: 0.0,
            e_inh: -100.0,
            e_reset: -45.0,
            tau_m: 10.0,
            v_th_const: -40.0,
            t_refractory: 2.0,
            tau_ge: 1.0,
            tau_gi: 1.0,
        }
    }

    pub fn validate(&self, name: &str) -> Result<()> {
        let field = |f: &str| format!("{name}.{f}");
        let finite = [
            ("e_rest", self.e_rest),
            ("e_exc", self.e_exc),
            ("e_inh", self.e_inh),
            ("e_reset", self.e_reset),
            ("tau_m", self.tau_m),
            ("v_th_const", self.v_th_const),
            ("t_refractory", self.t_refractory),
            ("tau_ge", self.tau_ge),
            ("tau_gi", self.tau_gi),
        ];
        for (f, v) in finite {
            if !v.is_finite() {
                return Err(SnnError::config(field(f), "must be finite"));
            }
        }
        // Reset may sit above rest (inhibitory interneurons reset to -45 mV
        // while resting at -60 mV); both must lie strictly between the
        // reversal potentials.
        if !(self.e_inh < self.e_rest && self.e_rest < self.e_exc) {
            return Err(SnnError::config(
                field("e_rest"),
                "must satisfy e_inh < e_rest < e_exc",
            ));
        }
        if !(self.e_inh < self.e_reset && self.e_reset < self.e_exc) {
            return Err(SnnError::config(
                field("e_reset"),
                "must satisfy e_inh < e_reset < e_exc",
            ));
        }
        for (f, v) in [
            ("tau_m", self.tau_m),
            ("tau_ge", self.tau_ge),
            ("tau_gi", self.tau_gi),
        ] {
            if v <= 0.0 {
                return Err(SnnError::config(field(f), "must be > 0"));
            }
        }
        if self.t_refractory < 0.0 {
            return Err(SnnError::config(field("t_refractory"), "must be >= 0"));
        }
        Ok(())
    }
}

/// Adaptive threshold offset.
///
/// Between spikes `theta` decays to zero with `tau_theta`; each spike adds
/// `(alpha / tau_theta) * theta_initial / |2 theta - theta_initial|`, so the
/// increment shrinks as the offset grows past its initial value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThetaParams {
    pub tau_theta: f64,
    pub alpha: f64,
    pub theta_initial: f64,
    pub enabled: bool,
    /// Lower bound on `|2 theta - theta_initial|` (mV).
    pub denom_floor: f64,
}

impl ThetaParams {
    pub fn new(tau_theta: f64, alpha: f64) -> Self {
        ThetaParams {
            tau_theta,
            alpha,
            theta_initial: 20.0,
            enabled: true,
            denom_floor: 1e-2,
        }
    }

    /// Fixed offset equal to `theta_initial`; never decays or jumps.
    pub fn fixed(theta_initial: f64) -> Self {
        ThetaParams {
            tau_theta: 1.0,
            alpha: 0.0,
            theta_initial,
            enabled: false,
            denom_floor: 1e-2,
        }
    }

    /// Threshold increment for one spike at the current offset.
    pub fn jump(&self, theta: f64) -> f64 {
        let denom = (2.0 * theta - self.theta_initial)
            .abs()
            .max(self.denom_floor);
        self.alpha / self.tau_theta * self.theta_initial / denom
    }

    pub fn validate(&self, name: &str) -> Result<()> {
        let field = |f: &str| format!("{name}.{f}");
        if !(self.tau_theta > 0.0 && self.tau_theta.is_finite()) {
            return Err(SnnError::config(field("tau_theta"), "must be > 0"));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(SnnError::config(field("alpha"), "must be >= 0"));
        }
        if !(self.theta_initial >= 0.0 && self.theta_initial.is_finite()) {
            return Err(SnnError::config(field("theta_initial"), "must be >= 0"));
        }
        if self.enabled && self.theta_initial <= 0.0 {
            return Err(SnnError::config(
                field("theta_initial"),
                "must be > 0 when the adaptive threshold is enabled",
            ));
        }
        if !(self.denom_floor > 0.0) {
            return Err(SnnError::config(field("denom_floor"), "must be > 0"));
        }
        Ok(())
    }
}

/// Per-neuron state of one population.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerState {
    pub name: &'static str,
    pub v: Vec<f64>,
    pub ge: Vec<f64>,
    pub gi: Vec<f64>,
    pub theta: Vec<f64>,
    pub refractory_until: Vec<f64>,
    pub spiked: Vec<bool>,
}

impl LayerState {
    pub fn new(name: &'static str, n: usize, params: &NeuronParams, theta_initial: f64) -> Self {
        LayerState {
            name,
            v: vec![params.e_rest; n],
            ge: vec![0.0; n],
            gi: vec![0.0; n],
            theta: vec![theta_initial; n],
            refractory_until: vec![f64::NEG_INFINITY; n],
            spiked: vec![false; n],
        }
    }

    pub fn len(&self) -> usize {
        self.v.len()
    }

    pub fn is_empty(&self) -> bool {
        self.v.is_empty()
    }

    /// Returns membrane, conductances and refractory clocks to rest; `theta`
    /// is kept.
    pub fn reset_dynamics(&mut self, params: &NeuronParams) {
        self.v.fill(params.e_rest);
        self.ge.fill(0.0);
        self.gi.fill(0.0);
        self.refractory_until.fill(f64::NEG_INFINITY);
        self.spiked.fill(false);
    }

    #[inline]
    pub fn is_refractory(&self, i: usize, now: f64) -> bool {
        now + CLOCK_EPS < self.refractory_until[i]
    }

    pub fn decay_conductances(&mut self, params: &NeuronParams, dt: f64) {
        let fe = (-dt / params.tau_ge).exp();
        let fi = (-dt / params.tau_gi).exp();
        self.ge.iter_mut().for_each(|g| *g *= fe);
        self.gi.iter_mut().for_each(|g| *g *= fi);
    }

    /// Adds incoming conductance jumps.
    pub fn inject_spikes(&mut self, incoming_exc: &[f64], incoming_inh: &[f64]) -> Result<()> {
        if incoming_exc.len() != self.len() || incoming_inh.len() != self.len() {
            return Err(SnnError::Contract(format!(
                "{}: conductance vectors of length {}/{} for a population of {}",
                self.name,
                incoming_exc.len(),
                incoming_inh.len(),
                self.len()
            )));
        }
        if let Some(i) = incoming_exc
            .iter()
            .chain(incoming_inh)
            .position(|&x| !(x >= 0.0))
        {
            return Err(SnnError::Contract(format!(
                "{}: negative or NaN conductance increment at position {}",
                self.name,
                i % self.len().max(1)
            )));
        }
        for (g, d) in self.ge.iter_mut().zip(incoming_exc) {
            *g += d;
        }
        for (g, d) in self.gi.iter_mut().zip(incoming_inh) {
            *g += d;
        }
        Ok(())
    }

    /// One forward-Euler step of the membrane equation. Refractory neurons
    /// are held at `e_reset`. The result is kept inside `[e_inh, e_exc]`,
    /// the range a conductance-based neuron can physically reach.
    pub fn step_membrane(&mut self, params: &NeuronParams, dt: f64, now: f64) -> Result<()> {
        let k = dt / params.tau_m;
        for i in 0..self.len() {
            if self.is_refractory(i, now) {
                self.v[i] = params.e_reset;
                continue;
            }
            let v = self.v[i];
            let ge = self.ge[i];
            let gi = self.gi[i];
            let dv = (params.e_rest - v) + ge * (params.e_exc - v) + gi * (params.e_inh - v);
            let next = v + k * dv;
            if !next.is_finite() || !ge.is_finite() || !gi.is_finite() {
                return Err(SnnError::Fault {
                    layer: self.name,
                    neuron: i,
                    what: format!("V={next}, gE={ge}, gI={gi}"),
                });
            }
            self.v[i] = next.clamp(params.e_inh, params.e_exc);
        }
        Ok(())
    }

    /// Emits spikes for every non-refractory neuron at or above threshold and
    /// resets them. Spike indices are appended to `spikes` in ascending order.
    pub fn fire_and_reset(&mut self, params: &NeuronParams, now: f64, spikes: &mut Vec<usize>) {
        for i in 0..self.len() {
            let fire = !self.is_refractory(i, now) && self.v[i] >= params.v_th_const + self.theta[i];
            self.spiked[i] = fire;
            if fire {
                self.v[i] = params.e_reset;
                self.refractory_until[i] = now + params.t_refractory;
                spikes.push(i);
            }
        }
    }

    /// Decays every offset, then applies the spike-triggered increment at the
    /// decayed value. No-op when the adaptive threshold is disabled.
    pub fn update_theta(&mut self, theta_params: &ThetaParams, spikes: &[usize], dt: f64) {
        if !theta_params.enabled {
            return;
        }
        let f = (-dt / theta_params.tau_theta).exp();
        self.theta.iter_mut().for_each(|t| *t *= f);
        for &i in spikes {
            let t = self.theta[i];
            self.theta[i] = t + theta_params.jump(t);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(v: f64) -> LayerState {
        let mut s = LayerState::new("test", 1, &NeuronParams::excitatory(), 20.0);
        s.v[0] = v;
        s
    }

    #[test]
    fn rest_is_a_fixed_point() {
        let p = NeuronParams::excitatory();
        let mut s = single(-65.0);
        s.step_membrane(&p, 0.5, 0.0).unwrap();
        assert_eq!(s.v[0], -65.0);
    }

    #[test]
    fn one_euler_step_by_hand() {
        let p = NeuronParams::excitatory();
        let mut s = single(-60.0);
        s.step_membrane(&p, 0.5, 0.0).unwrap();
        assert!((s.v[0] - (-60.025)).abs() < 1e-12);
    }

    #[test]
    fn strong_excitation_moves_towards_reversal_without_crossing() {
        let p = NeuronParams::excitatory();
        for ge in [10.0, 100.0, 199.0, 1e6] {
            let mut s = single(-60.0);
            s.ge[0] = ge;
            s.step_membrane(&p, 0.5, 0.0).unwrap();
            assert!(s.v[0] > -60.0 && s.v[0] <= p.e_exc, "gE={ge}: {}", s.v[0]);
        }
    }

    #[test]
    fn non_finite_state_is_a_fault() {
        let p = NeuronParams::excitatory();
        let mut s = LayerState::new("hidden", 3, &p, 20.0);
        s.ge[2] = f64::NAN;
        match s.step_membrane(&p, 0.5, 0.0) {
            Err(SnnError::Fault { layer, neuron, .. }) => {
                assert_eq!(layer, "hidden");
                assert_eq!(neuron, 2);
            }
            other => panic!("expected fault, got {other:?}"),
        }
    }

    #[test]
    fn conductance_decay_closed_form() {
        let p = NeuronParams::excitatory();
        let mut s = single(-65.0);
        s.ge[0] = 1.0;
        s.gi[0] = 0.0;
        s.decay_conductances(&p, 0.5);
        assert!((s.ge[0] - 0.606_530_659_712_633_4).abs() < 1e-12);
        assert_eq!(s.gi[0], 0.0);

        let mut s = single(-65.0);
        s.ge[0] = 1.0;
        for _ in 0..20 {
            s.decay_conductances(&p, 0.5);
        }
        assert!((s.ge[0] - 4.539_992_976_248_485e-5).abs() < 1e-12);
    }

    #[test]
    fn injection_is_additive_and_rejects_negatives() {
        let p = NeuronParams::excitatory();
        let mut s = LayerState::new("t", 3, &p, 20.0);
        s.inject_spikes(&[0.0; 3], &[0.0; 3]).unwrap();
        assert_eq!(s.ge, vec![0.0; 3]);
        s.inject_spikes(&[0.0, 0.25, 0.0], &[0.0; 3]).unwrap();
        s.inject_spikes(&[0.0, 0.5, 0.0], &[0.0, 0.0, 1.5]).unwrap();
        assert_eq!(s.ge, vec![0.0, 0.75, 0.0]);
        assert_eq!(s.gi, vec![0.0, 0.0, 1.5]);
        assert!(matches!(
            s.inject_spikes(&[0.0, -0.1, 0.0], &[0.0; 3]),
            Err(SnnError::Contract(_))
        ));
        assert!(s.inject_spikes(&[0.0; 2], &[0.0; 3]).is_err());
    }

    #[test]
    fn threshold_comparison_is_inclusive() {
        let p = NeuronParams::excitatory();
        let mut s = single(-52.0);
        let mut spikes = Vec::new();
        s.fire_and_reset(&p, 0.0, &mut spikes);
        assert_eq!(spikes, vec![0]);
        assert_eq!(s.v[0], p.e_reset);

        let mut s = single(-52.1);
        spikes.clear();
        s.fire_and_reset(&p, 0.0, &mut spikes);
        assert!(spikes.is_empty());
        assert!(!s.spiked[0]);
    }

    #[test]
    fn refractory_window_blocks_until_deadline() {
        let p = NeuronParams::excitatory();
        let mut s = single(-40.0);
        let mut spikes = Vec::new();
        s.fire_and_reset(&p, 100.0, &mut spikes);
        assert_eq!(spikes, vec![0]);
        for now in [100.5, 101.0, 101.5] {
            s.v[0] = -40.0;
            spikes.clear();
            s.fire_and_reset(&p, now, &mut spikes);
            assert!(spikes.is_empty(), "fired at {now}");
            s.step_membrane(&p, 0.5, now).unwrap();
            assert_eq!(s.v[0], p.e_reset);
        }
        s.v[0] = -40.0;
        s.fire_and_reset(&p, 102.0, &mut spikes);
        assert_eq!(spikes, vec![0]);
    }

    #[test]
    fn theta_jump_at_initial_value() {
        let tp = ThetaParams::new(6e6, 8.4e5);
        assert!((tp.jump(20.0) - 0.14).abs() < 1e-12);
        let mut s = single(-65.0);
        s.update_theta(&tp, &[0], 0.5);
        let decayed = 20.0 * (-0.5f64 / 6e6).exp();
        let expected = decayed + 8.4e5 / 6e6 * 20.0 / (2.0 * decayed - 20.0).abs();
        assert!((s.theta[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn theta_singularity_is_floored() {
        let tp = ThetaParams::new(6e6, 8.4e5);
        let j = tp.jump(10.0);
        assert!(j.is_finite());
        assert!((j - 0.14 * 20.0 / 1e-2).abs() < 1e-9);
    }

    #[test]
    fn theta_decays_without_spikes_and_respects_disable() {
        let tp = ThetaParams::new(6e6, 8.4e5);
        let mut s = single(-65.0);
        s.update_theta(&tp, &[], 0.5);
        let ratio = s.theta[0] / 20.0;
        assert!((ratio - (-0.5f64 / 6e6).exp()).abs() < 1e-15);
        assert!((ratio - (1.0 - 0.5 / 6e6)).abs() < 1e-14);
        assert!(s.theta[0] < 20.0);

        let fixed = ThetaParams::fixed(20.0);
        let mut s = single(-65.0);
        s.update_theta(&fixed, &[0], 0.5);
        assert_eq!(s.theta[0], 20.0);
    }

    #[test]
    fn inhibitory_defaults_validate() {
        NeuronParams::excitatory().validate("e").unwrap();
        NeuronParams::inhibitory().validate("i").unwrap();
        let mut bad = NeuronParams::excitatory();
        bad.tau_m = 0.0;
        let err = bad.validate("hidden").unwrap_err().to_string();
        assert!(err.contains("hidden.tau_m"), "{err}");
        ThetaParams::new(6e6, 8.4e5).validate("t").unwrap();
    }
}
