//! Complete, serializable description of an experiment, and the named
//! presets for each dataset and network size.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataio::{
    fetch_dataset, normalize_sum, DatasetManifest, DatasetName, Sample, Source, Split,
};
use crate::encoding::EncodingParams;
use crate::error::{Result, SnnError};
use crate::topology::NetworkConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    /// Input->hidden and hidden->output learn together, teacher on.
    Simultaneous,
    /// Unsupervised hidden phase, then supervised readout with the hidden
    /// layer frozen.
    LayerByLayer,
    /// Unsupervised hidden phase only.
    UnsupervisedOnly,
}

impl std::str::FromStr for TrainMode {
    type Err = SnnError;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "simultaneous" => Ok(TrainMode::Simultaneous),
            "layer_by_layer" => Ok(TrainMode::LayerByLayer),
            "unsupervised_only" | "unsupervised" => Ok(TrainMode::UnsupervisedOnly),
            _ => Err(SnnError::config(
                "sim.mode",
                format!("unknown mode `{s}` (simultaneous, layer-by-layer, unsupervised-only)"),
            )),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimParams {
    /// Integration step (ms).
    pub dt: f64,
    /// Stimulus duration (ms).
    pub t_present: f64,
    /// Silent period after each sample (ms).
    pub t_rest: f64,
    pub epochs: u32,
    pub mode: TrainMode,
    /// Epochs of the supervised readout phase in layer-by-layer mode.
    pub readout_epochs: u32,
    /// Evaluate on the test set after this many training samples; 0 disables.
    pub eval_every: u64,
    /// Limit periodic evaluations to the first N test samples.
    pub eval_samples: Option<usize>,
    pub test_time_retry: bool,
}

impl Default for SimParams {
    fn default() -> Self {
        SimParams {
            dt: 0.5,
            t_present: 350.0,
            t_rest: 150.0,
            epochs: 1,
            mode: TrainMode::Simultaneous,
            readout_epochs: 1,
            eval_every: 10_000,
            eval_samples: None,
            test_time_retry: true,
        }
    }
}

fn steps_of(field: &str, t: f64, dt: f64) -> Result<u64> {
    let n = (t / dt).round();
    if !(t >= 0.0) || (n * dt - t).abs() > 1e-9 * t.max(1.0) {
        return Err(SnnError::config(
            field,
            format!("{t} ms is not a whole number of {dt} ms steps"),
        ));
    }
    Ok(n as u64)
}

impl SimParams {
    pub fn present_steps(&self) -> u64 {
        (self.t_present / self.dt).round() as u64
    }

    pub fn rest_steps(&self) -> u64 {
        (self.t_rest / self.dt).round() as u64
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(SnnError::config("sim.dt", "must be > 0"));
        }
        if steps_of("sim.t_present", self.t_present, self.dt)? == 0 {
            return Err(SnnError::config("sim.t_present", "must be > 0"));
        }
        steps_of("sim.t_rest", self.t_rest, self.dt)?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub preset: Option<String>,
    pub dataset: DatasetName,
    /// Dataset cache root; files live in `<data_dir>/<dataset>/`.
    pub data_dir: PathBuf,
    pub output_dir: PathBuf,
    /// Drives weight initialization, epoch shuffles, and all spike trains.
    pub seed: u64,
    pub network: NetworkConfig,
    pub sim: SimParams,
    pub encoding: EncodingParams,
    /// Use only the first N training samples.
    pub train_limit: Option<usize>,
    /// Use only the first N test samples.
    pub test_limit: Option<usize>,
    /// Per-image pixel-sum target. Resolved from the training split for
    /// Fashion-MNIST when left empty; ignored for MNIST.
    pub target_sum: Option<f64>,
    /// Training samples used to assign Label-Statistics classes.
    pub label_stats_samples: usize,
}

/// Threshold constants per hidden size: (size, epochs, tau_theta, alpha).
const MNIST_SIZES: [(usize, u32, f64, f64); 5] = [
    (100, 3, 6e6, 8.4e5),
    (400, 5, 6e6, 8.4e5),
    (1600, 7, 8e6, 1.12e6),
    (6400, 10, 2e7, 2e6),
    (10000, 20, 2e7, 2e6),
];

/// (size, epochs, tau_theta, alpha, beta).
const FASHION_SIZES: [(usize, u32, f64, f64, f64); 2] =
    [(400, 5, 5e7, 5e6, 0.05), (6400, 10, 2e7, 2e6, 0.025)];

pub const PRESETS: [&str; 7] = [
    "mnist-n100",
    "mnist-n400",
    "mnist-n1600",
    "mnist-n6400",
    "mnist-n10000",
    "fashion-n400",
    "fashion-n6400",
];

impl RunConfig {
    pub fn preset(name: &str) -> Result<Self> {
        let unknown = || {
            SnnError::config(
                "preset",
                format!("unknown preset `{name}`; available: {}", PRESETS.join(", ")),
            )
        };
        let (dataset, size) = name.split_once("-n").ok_or_else(unknown)?;
        let size: usize = size.parse().map_err(|_| unknown())?;
        let (dataset, epochs, network) = match dataset {
            "mnist" => {
                let &(_, epochs, tau, alpha) =
                    MNIST_SIZES.iter().find(|s| s.0 == size).ok_or_else(unknown)?;
                (DatasetName::Mnist, epochs, NetworkConfig::mnist(size, tau, alpha, 0.1))
            }
            "fashion" => {
                let &(_, epochs, tau, alpha, beta) =
                    FASHION_SIZES.iter().find(|s| s.0 == size).ok_or_else(unknown)?;
                (
                    DatasetName::FashionMnist,
                    epochs,
                    NetworkConfig::mnist(size, tau, alpha, beta),
                )
            }
            _ => return Err(unknown()),
        };
        Ok(RunConfig {
            preset: Some(name.to_string()),
            dataset,
            data_dir: PathBuf::from("data"),
            output_dir: PathBuf::from("runs").join(name),
            seed: 1,
            network,
            sim: SimParams {
                epochs,
                ..SimParams::default()
            },
            encoding: EncodingParams::default(),
            train_limit: None,
            test_limit: None,
            target_sum: None,
            label_stats_samples: 10_000,
        })
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_slice(bytes)
            .map_err(|e| SnnError::config("config", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| SnnError::io(path, e))?;
        Self::from_json(&bytes)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("run config serializes")
    }

    /// Loads both splits from the verified cache, applies the sample limits,
    /// and for Fashion-MNIST resolves `target_sum` and normalizes every image.
    pub fn load_data(&mut self) -> Result<(Vec<Sample>, Vec<Sample>)> {
        let manifest = DatasetManifest::builtin(self.dataset);
        let handle = fetch_dataset(&manifest, &self.data_dir, Source::CacheOnly)?;
        let mut train = handle.load(Split::Train)?;
        let mut test = handle.load(Split::Test)?;
        if self.dataset == DatasetName::FashionMnist {
            let target = match self.target_sum {
                Some(t) => t,
                None => handle.target_sum(&train)?,
            };
            self.target_sum = Some(target);
            train = train.iter().map(|s| normalize_sum(s, target)).collect();
            test = test.iter().map(|s| normalize_sum(s, target)).collect();
        }
        if let Some(n) = self.train_limit {
            train.truncate(n);
        }
        if let Some(n) = self.test_limit {
            test.truncate(n);
        }
        let pixels = self.network.n_input;
        if let Some(s) = train.iter().chain(&test).find(|s| s.pixels.len() != pixels) {
            return Err(SnnError::Data(format!(
                "images have {} pixels but network.n_input is {pixels}",
                s.pixels.len()
            )));
        }
        Ok((train, test))
    }

    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        self.sim.validate()?;
        self.encoding.validate(self.sim.dt)?;
        if let Some(t) = self.target_sum {
            if !(t > 0.0 && t.is_finite()) {
                return Err(SnnError::config("target_sum", "must be > 0"));
            }
        }
        if self.train_limit == Some(0) {
            return Err(SnnError::config("train_limit", "must be > 0 when set"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_preset_resolves_and_validates() {
        for name in PRESETS {
            let cfg = RunConfig::preset(name).unwrap();
            cfg.validate().unwrap();
            let back = RunConfig::from_json(cfg.to_json().as_bytes()).unwrap();
            assert_eq!(back, cfg);
        }
        let n100 = RunConfig::preset("mnist-n100").unwrap();
        assert_eq!(n100.sim.epochs, 3);
        assert_eq!(n100.network.hidden_theta.tau_theta, 6e6);
        assert_eq!(n100.network.hidden_theta.alpha, 8.4e5);
        let f = RunConfig::preset("fashion-n6400").unwrap();
        assert_eq!(f.network.scaling_input_hidden.beta, 0.025);
        assert_eq!(f.dataset, DatasetName::FashionMnist);
    }

    #[test]
    fn unknown_preset_lists_choices() {
        let e = RunConfig::preset("mnist-n123").unwrap_err().to_string();
        assert!(e.contains("mnist-n400"), "{e}");
        assert!(RunConfig::preset("cifar-n100").is_err());
    }

    #[test]
    fn steps_must_divide() {
        let mut s = SimParams::default();
        assert_eq!(s.present_steps(), 700);
        assert_eq!(s.rest_steps(), 300);
        s.t_present = 350.25;
        assert!(s.validate().is_err());
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let mut v: serde_json::Value =
            serde_json::from_str(&RunConfig::preset("mnist-n100").unwrap().to_json()).unwrap();
        v["sim"]["bogus"] = serde_json::json!(1);
        let e = RunConfig::from_json(v.to_string().as_bytes()).unwrap_err();
        assert!(e.to_string().contains("bogus"), "{e}");
    }
}
