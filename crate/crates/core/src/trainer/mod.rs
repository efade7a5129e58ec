//! Training schedules, frozen evaluation, and the Label-Statistics readout.

pub mod checkpoint;
mod engine;
mod labelstats;

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use engine::{argmax_lowest, Engine, Phase, RunRecord, Weights};
pub use labelstats::NeuronLabels;

use crate::config::{RunConfig, TrainMode};
use crate::dataio::{epoch_order, Sample};
use crate::encoding::{StreamId, DOMAIN_EVAL, DOMAIN_INPUT};
use crate::error::Result;
use crate::topology::Network;

/// Position in the training schedule.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cursor {
    pub phase: u32,
    pub epoch: u32,
    /// Index into the current epoch's presentation order.
    pub position: u64,
    /// Training presentations completed so far, across all phases.
    pub presented: u64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhasePlan {
    pub name: &'static str,
    pub phase: Phase,
    pub epochs: u32,
}

pub fn plan(mode: TrainMode, epochs: u32, readout_epochs: u32) -> Vec<PhasePlan> {
    match mode {
        TrainMode::Simultaneous => vec![PhasePlan {
            name: "simultaneous",
            phase: Phase::simultaneous(),
            epochs,
        }],
        TrainMode::LayerByLayer => vec![
            PhasePlan {
                name: "hidden",
                phase: Phase::unsupervised(),
                epochs,
            },
            PhasePlan {
                name: "readout",
                phase: Phase::readout(),
                epochs: readout_epochs,
            },
        ],
        TrainMode::UnsupervisedOnly => vec![PhasePlan {
            name: "hidden",
            phase: Phase::unsupervised(),
            epochs,
        }],
    }
}

/// Which frozen pass a stream belongs to. Keeps evaluation spike trains
/// disjoint from training ones and from each other.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EvalSet {
    Test,
    Assign,
}

impl EvalSet {
    fn stream(self, index: usize) -> StreamId {
        let tag = match self {
            EvalSet::Test => 1u64,
            EvalSet::Assign => 2,
        };
        StreamId::new(DOMAIN_EVAL, (tag << 40) | index as u64)
    }
}

pub fn engine_for(run: &RunConfig) -> Engine {
    Engine::new(
        &run.network,
        run.sim.dt,
        run.sim.present_steps(),
        run.sim.rest_steps(),
        run.encoding.clone(),
        run.seed,
    )
}

/// Presents every sample to a frozen copy of `network`, in parallel on the
/// current rayon pool. Records come back in sample order and do not depend
/// on the number of workers.
pub fn evaluate(
    network: &Network,
    run: &RunConfig,
    samples: &[Sample],
    set: EvalSet,
    retry: bool,
) -> Result<Vec<RunRecord>> {
    let engine = engine_for(run);
    samples
        .par_iter()
        .enumerate()
        .map_init(
            || (engine.clone(), network.layers.clone()),
            |(eng, layers), (i, s)| {
                eng.present(
                    Weights::Frozen(&network.synapses),
                    layers,
                    &network.config,
                    s,
                    i as u64,
                    set.stream(i),
                    Phase::frozen(retry),
                )
            },
        )
        .collect()
}

/// Tags hidden neurons from a frozen pass over `assign` and classifies each
/// test record with them.
pub fn label_stats(
    network: &Network,
    run: &RunConfig,
    assign: &[Sample],
    test: &[RunRecord],
) -> Result<(NeuronLabels, Vec<usize>)> {
    let records = evaluate(network, run, assign, EvalSet::Assign, run.sim.test_time_retry)?;
    let labels = NeuronLabels::assign(&records, network.config.n_hidden, network.config.n_labels)?;
    let predictions = test
        .iter()
        .map(|r| labels.predict(&r.hidden_counts))
        .collect::<Result<Vec<_>>>()?;
    Ok((labels, predictions))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub phase: String,
    pub epoch: u32,
    pub presented: u64,
    pub eval_samples: usize,
    pub accuracy: f64,
    pub zero_output_fraction: f64,
    pub retried_fraction: f64,
    pub elapsed_s: f64,
}

pub struct Trainer<'d> {
    pub run: RunConfig,
    pub network: Network,
    pub cursor: Cursor,
    /// Periodic evaluations recorded since construction.
    pub history: Vec<HistoryEntry>,
    plan: Vec<PhasePlan>,
    train: &'d [Sample],
    eval_set: &'d [Sample],
    engine: Engine,
    order: Option<((u32, u32), Vec<usize>)>,
    started: Instant,
}

impl<'d> Trainer<'d> {
    pub fn new(
        run: RunConfig,
        network: Network,
        cursor: Cursor,
        train: &'d [Sample],
        test: &'d [Sample],
    ) -> Self {
        let plan = plan(run.sim.mode, run.sim.epochs, run.sim.readout_epochs);
        let eval_len = run.sim.eval_samples.map_or(test.len(), |n| n.min(test.len()));
        let engine = engine_for(&run);
        Trainer {
            plan,
            train,
            eval_set: &test[..eval_len],
            engine,
            run,
            network,
            cursor,
            history: Vec::new(),
            order: None,
            started: Instant::now(),
        }
    }

    pub fn plan(&self) -> &[PhasePlan] {
        &self.plan
    }

    /// Total presentations in the full schedule.
    pub fn total_presentations(&self) -> u64 {
        self.plan
            .iter()
            .map(|p| u64::from(p.epochs) * self.train.len() as u64)
            .sum()
    }

    pub fn is_done(&mut self) -> bool {
        self.normalize_cursor();
        self.cursor.phase as usize >= self.plan.len()
    }

    fn normalize_cursor(&mut self) {
        let c = &mut self.cursor;
        while (c.phase as usize) < self.plan.len() {
            if c.position >= self.train.len() as u64 {
                c.epoch += 1;
                c.position = 0;
            }
            if c.epoch >= self.plan[c.phase as usize].epochs {
                c.phase += 1;
                c.epoch = 0;
                c.position = 0;
                continue;
            }
            break;
        }
    }

    fn sample_index(&mut self) -> usize {
        let key = (self.cursor.phase, self.cursor.epoch);
        if self.order.as_ref().map(|(k, _)| *k) != Some(key) {
            let shuffle_key = (u64::from(key.0) << 32) | u64::from(key.1);
            self.order = Some((key, epoch_order(self.train.len(), self.run.seed, shuffle_key)));
        }
        let (_, order) = self.order.as_ref().expect("order just set");
        order[self.cursor.position as usize]
    }

    /// Runs one training presentation; `None` once the schedule is complete.
    pub fn step(&mut self) -> Result<Option<RunRecord>> {
        if self.is_done() {
            return Ok(None);
        }
        let idx = self.sample_index();
        let phase = self.plan[self.cursor.phase as usize].phase;
        let presented = self.cursor.presented;
        let record = self.engine.present(
            Weights::Plastic(&mut self.network.synapses),
            &mut self.network.layers,
            &self.network.config,
            &self.train[idx],
            idx as u64,
            StreamId::new(DOMAIN_INPUT, presented),
            phase,
        )?;
        self.cursor.position += 1;
        self.cursor.presented += 1;
        let every = self.run.sim.eval_every;
        if every > 0 && self.cursor.presented % every == 0 && !self.eval_set.is_empty() {
            self.periodic_eval()?;
        }
        Ok(Some(record))
    }

    /// Runs up to `limit` presentations (all remaining when `None`).
    /// Returns the number performed.
    pub fn run_for(&mut self, limit: Option<u64>) -> Result<u64> {
        let mut n = 0;
        while limit.map_or(true, |l| n < l) {
            if self.step()?.is_none() {
                break;
            }
            n += 1;
            if n % 1000 == 0 {
                log::info!(
                    "{} presentations, phase {} epoch {}",
                    self.cursor.presented,
                    self.cursor.phase,
                    self.cursor.epoch
                );
            }
        }
        Ok(n)
    }

    fn periodic_eval(&mut self) -> Result<()> {
        let records = evaluate(
            &self.network,
            &self.run,
            self.eval_set,
            EvalSet::Test,
            self.run.sim.test_time_retry,
        )?;
        let n = records.len().max(1) as f64;
        let correct = records
            .iter()
            .filter(|r| r.predicted == usize::from(r.label))
            .count();
        let entry = HistoryEntry {
            phase: self
                .plan
                .get(self.cursor.phase as usize)
                .map_or("done", |p| p.name)
                .to_string(),
            epoch: self.cursor.epoch,
            presented: self.cursor.presented,
            eval_samples: records.len(),
            accuracy: correct as f64 / n,
            zero_output_fraction: records.iter().filter(|r| r.zero_output).count() as f64 / n,
            retried_fraction: records.iter().filter(|r| r.boost > 0).count() as f64 / n,
            elapsed_s: self.started.elapsed().as_secs_f64(),
        };
        log::info!(
            "eval after {} presentations: accuracy {:.4} on {} samples",
            entry.presented,
            entry.accuracy,
            entry.eval_samples
        );
        self.history.push(entry);
        Ok(())
    }
}
