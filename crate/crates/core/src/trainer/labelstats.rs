//! Label-Statistics readout: each hidden neuron is tagged with the class
//! that made it fire most, and a sample is classified by the class whose
//! tagged neurons fire most on average.

use serde::{Deserialize, Serialize};

use super::engine::RunRecord;
use crate::error::{Result, SnnError};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeuronLabels {
    /// Class per hidden neuron; `-1` for neurons that never fired.
    pub labels: Vec<i32>,
    pub n_labels: usize,
}

impl NeuronLabels {
    /// Assigns classes from a frozen, labelled pass. Per-class mean spike
    /// counts are compared; ties go to the lowest class.
    pub fn assign(records: &[RunRecord], n_hidden: usize, n_labels: usize) -> Result<Self> {
        let mut sums = vec![0.0f64; n_hidden * n_labels];
        let mut per_class = vec![0usize; n_labels];
        for r in records {
            if r.hidden_counts.len() != n_hidden {
                return Err(SnnError::Contract(format!(
                    "record has {} hidden counts, expected {n_hidden}",
                    r.hidden_counts.len()
                )));
            }
            let c = usize::from(r.label);
            per_class[c] += 1;
            for (i, &k) in r.hidden_counts.iter().enumerate() {
                sums[i * n_labels + c] += f64::from(k);
            }
        }
        let labels = (0..n_hidden)
            .map(|i| {
                let row = &sums[i * n_labels..(i + 1) * n_labels];
                let mut best = -1i32;
                let mut best_rate = 0.0;
                for (c, (&s, &n)) in row.iter().zip(&per_class).enumerate() {
                    if n == 0 {
                        continue;
                    }
                    let rate = s / n as f64;
                    if rate > best_rate {
                        best_rate = rate;
                        best = c as i32;
                    }
                }
                best
            })
            .collect();
        Ok(NeuronLabels { labels, n_labels })
    }

    pub fn labelled(&self) -> usize {
        self.labels.iter().filter(|&&l| l >= 0).count()
    }

    /// Class with the highest mean spike count over its tagged neurons.
    /// Classes without neurons are never chosen; ties go to the lowest class.
    pub fn predict(&self, hidden_counts: &[u32]) -> Result<usize> {
        let mut sum = vec![0.0f64; self.n_labels];
        let mut n = vec![0usize; self.n_labels];
        for (&l, &k) in self.labels.iter().zip(hidden_counts) {
            if l >= 0 {
                sum[l as usize] += f64::from(k);
                n[l as usize] += 1;
            }
        }
        let mut best: Option<(usize, f64)> = None;
        for c in 0..self.n_labels {
            if n[c] == 0 {
                continue;
            }
            let m = sum[c] / n[c] as f64;
            if best.map_or(true, |(_, b)| m > b) {
                best = Some((c, m));
            }
        }
        best.map(|(c, _)| c).ok_or_else(|| {
            SnnError::Contract("no hidden neuron carries a class; Label-Statistics unusable".into())
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(label: u8, hidden: &[u32]) -> RunRecord {
        RunRecord {
            sample_id: 0,
            label,
            boost: 0,
            under_driven: false,
            hidden_counts: hidden.to_vec(),
            sl_counts: vec![0; 3],
            predicted: 0,
            zero_output: true,
        }
    }

    #[test]
    fn assigns_by_mean_not_total() {
        // Class 0 appears three times, class 1 once. Neuron 0 totals 6 on
        // class 0 (mean 2) and 3 on class 1 (mean 3).
        let recs = [
            rec(0, &[2, 0, 0]),
            rec(0, &[2, 1, 0]),
            rec(0, &[2, 0, 0]),
            rec(1, &[3, 0, 0]),
        ];
        let nl = NeuronLabels::assign(&recs, 3, 3).unwrap();
        assert_eq!(nl.labels, vec![1, 0, -1]);
        assert_eq!(nl.labelled(), 2);
    }

    #[test]
    fn predicts_by_class_mean() {
        let nl = NeuronLabels {
            labels: vec![0, 0, 1, -1],
            n_labels: 3,
        };
        assert_eq!(nl.predict(&[4, 0, 3, 50]).unwrap(), 1);
        assert_eq!(nl.predict(&[3, 3, 3, 0]).unwrap(), 0);
        assert_eq!(nl.predict(&[0, 0, 0, 0]).unwrap(), 0);
    }

    #[test]
    fn all_silent_is_an_error() {
        let nl = NeuronLabels::assign(&[rec(2, &[0, 0, 0])], 3, 3).unwrap();
        assert_eq!(nl.labels, vec![-1, -1, -1]);
        assert!(nl.predict(&[1, 2, 3]).is_err());
    }
}
