//! Accuracy, confusion matrices, and CSV exports of activities and weights.

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use crate::error::{Result, SnnError};
use crate::topology::Network;
use crate::trainer::{NeuronLabels, RunRecord};

/// Fraction of `(true, predicted)` pairs that agree. Empty input gives 0.
pub fn accuracy_of(pairs: impl IntoIterator<Item = (usize, usize)>) -> f64 {
    let (mut n, mut hit) = (0usize, 0usize);
    for (t, p) in pairs {
        n += 1;
        hit += usize::from(t == p);
    }
    if n == 0 {
        0.0
    } else {
        hit as f64 / n as f64
    }
}

/// Accuracy of the output-layer predictions.
pub fn accuracy(records: &[RunRecord]) -> f64 {
    accuracy_of(records.iter().map(|r| (usize::from(r.label), r.predicted)))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub n: usize,
    /// `counts[true * n + predicted]`.
    pub counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(n: usize) -> Self {
        ConfusionMatrix {
            n,
            counts: vec![0; n * n],
        }
    }

    pub fn from_pairs(n: usize, pairs: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut m = Self::new(n);
        for (t, p) in pairs {
            m.add(t, p);
        }
        m
    }

    pub fn from_records(n: usize, records: &[RunRecord]) -> Self {
        Self::from_pairs(n, records.iter().map(|r| (usize::from(r.label), r.predicted)))
    }

    pub fn add(&mut self, truth: usize, predicted: usize) {
        self.counts[truth * self.n + predicted] += 1;
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.n + predicted]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn accuracy(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        (0..self.n).map(|k| self.get(k, k)).sum::<u64>() as f64 / total as f64
    }

    /// Rows are true classes, columns predictions.
    pub fn to_table(&self) -> String {
        let width = self
            .counts
            .iter()
            .map(|c| c.to_string().len())
            .max()
            .unwrap_or(1)
            .max(self.n.to_string().len())
            + 1;
        let mut s = format!("{:>w$}", "t\\p", w = width.max(4));
        for p in 0..self.n {
            let _ = write!(s, "{p:>width$}");
        }
        s.push('\n');
        for t in 0..self.n {
            let _ = write!(s, "{t:>w$}", w = width.max(4));
            for p in 0..self.n {
                let _ = write!(s, "{:>width$}", self.get(t, p));
            }
            s.push('\n');
        }
        s
    }
}

fn create(path: &Path) -> Result<std::io::BufWriter<std::fs::File>> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| SnnError::io(parent, e))?;
    }
    let f = std::fs::File::create(path).map_err(|e| SnnError::io(path, e))?;
    Ok(std::io::BufWriter::new(f))
}

/// One row per sample: label, then `n_hidden` hidden spike counts, then
/// `n_labels` output counts.
pub fn write_activities_csv(
    path: &Path,
    records: &[RunRecord],
    n_hidden: usize,
    n_labels: usize,
) -> Result<()> {
    let mut w = create(path)?;
    let (nh, nl) = (n_hidden, n_labels);
    let mut header = String::from("label");
    for i in 0..nh {
        let _ = write!(header, ",hidden_{i}");
    }
    for j in 0..nl {
        let _ = write!(header, ",sl_{j}");
    }
    let io = |e| SnnError::io(path, e);
    writeln!(w, "{header}").map_err(io)?;
    for r in records {
        if r.hidden_counts.len() != nh || r.sl_counts.len() != nl {
            return Err(SnnError::Contract(format!(
                "record {} does not have {nh} hidden and {nl} output counts",
                r.sample_id
            )));
        }
        let mut line = r.label.to_string();
        for c in r.hidden_counts.iter().chain(&r.sl_counts) {
            let _ = write!(line, ",{c}");
        }
        writeln!(w, "{line}").map_err(io)?;
    }
    w.flush().map_err(io)
}

/// One row per hidden neuron, in index order: its Label-Statistics class
/// (`-1` when untagged) followed by its weights to every output neuron,
/// printed with round-trip precision.
pub fn write_weights_csv(path: &Path, network: &Network, labels: Option<&NeuronLabels>) -> Result<()> {
    let sl = &network.synapses.sl_in;
    let mut w = create(path)?;
    let io = |e| SnnError::io(path, e);
    let mut header = String::from("class");
    for j in 0..sl.n_post {
        let _ = write!(header, ",w_sl_{j}");
    }
    writeln!(w, "{header}").map_err(io)?;
    for i in 0..sl.n_pre {
        let class = labels.and_then(|l| l.labels.get(i)).copied().unwrap_or(-1);
        let mut line = class.to_string();
        for v in sl.row(i) {
            let _ = write!(line, ",{v:?}");
        }
        writeln!(w, "{line}").map_err(io)?;
    }
    w.flush().map_err(io)
}
