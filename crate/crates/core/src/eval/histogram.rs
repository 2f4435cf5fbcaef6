use std::io::Write;

use crate::data::BiasedDataset;
use crate::engine::disagreements;
use crate::nn::ClassifierModel;
use crate::{DprError, Result, Scalar};

/// Equal-width histogram of disagreement probabilities per group.
#[derive(Debug, Clone, PartialEq)]
pub struct DisagreementHistogram {
    /// `num_bins + 1` edges from 0 to 1.
    pub edges: Vec<f64>,
    pub aligned_counts: Vec<usize>,
    pub conflicting_counts: Vec<usize>,
    pub aligned_mean: Option<f64>,
    pub conflicting_mean: Option<f64>,
}

impl DisagreementHistogram {
    pub fn num_bins(&self) -> usize {
        self.aligned_counts.len()
    }

    /// `bin_lo,bin_hi,aligned_count,conflicting_count` rows.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "bin_lo,bin_hi,aligned_count,conflicting_count")?;
        for i in 0..self.num_bins() {
            writeln!(
                w,
                "{},{},{},{}",
                self.edges[i],
                self.edges[i + 1],
                self.aligned_counts[i],
                self.conflicting_counts[i]
            )?;
        }
        Ok(())
    }

    /// `conflicting mean - aligned mean`.
    pub fn mean_separation(&self) -> Option<f64> {
        Some(self.conflicting_mean? - self.aligned_mean?)
    }
}

fn bin_of(v: f64, bins: usize) -> usize {
    ((v * bins as f64) as usize).min(bins - 1)
}

pub fn disagreement_histogram<S: Scalar>(
    biased: &ClassifierModel<S>,
    train: &BiasedDataset<S>,
    tau: S,
    num_bins: usize,
) -> Result<DisagreementHistogram> {
    if num_bins < 2 {
        return Err(DprError::param("histogram needs at least two bins"));
    }
    let d = disagreements(biased, train, tau)?;
    let mut aligned_counts = vec![0; num_bins];
    let mut conflicting_counts = vec![0; num_bins];
    let (mut sums, mut counts) = ([0.0; 2], [0usize; 2]);
    for (e, v) in train.examples().iter().zip(&d) {
        let v = v.to_f64_lossy();
        let c = usize::from(e.is_conflicting());
        let target = if c == 1 {
            &mut conflicting_counts
        } else {
            &mut aligned_counts
        };
        target[bin_of(v, num_bins)] += 1;
        sums[c] += v;
        counts[c] += 1;
    }
    let mean = |g: usize| (counts[g] > 0).then(|| sums[g] / counts[g] as f64);
    Ok(DisagreementHistogram {
        edges: (0..=num_bins).map(|i| i as f64 / num_bins as f64).collect(),
        aligned_counts,
        conflicting_counts,
        aligned_mean: mean(0),
        conflicting_mean: mean(1),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_colored, GenConfig};

    #[test]
    fn untrained_model_mass_sits_in_one_bin() {
        let data: BiasedDataset<f64> = generate_colored(&GenConfig::colored(10).with_rho(0.2), 200, 1).unwrap();
        let model = ClassifierModel::<f64>::zeros(&[data.feature_dim(), 10]).unwrap();
        let h = disagreement_histogram(&model, &data, 1.0, 20).unwrap();
        let bin = bin_of(0.9, 20);
        let (na, nc) = data.group_sizes();
        assert_eq!(h.aligned_counts[bin], na);
        assert_eq!(h.conflicting_counts[bin], nc);
        assert_eq!(h.aligned_counts.iter().sum::<usize>(), na);
        assert_eq!(h.edges[0], 0.0);
        assert_eq!(*h.edges.last().unwrap(), 1.0);
    }

    #[test]
    fn needs_two_bins() {
        let data: BiasedDataset<f64> = generate_colored(&GenConfig::colored(3), 10, 1).unwrap();
        let model = ClassifierModel::<f64>::zeros(&[data.feature_dim(), 3]).unwrap();
        assert!(disagreement_histogram(&model, &data, 1.0, 1).is_err());
    }

    #[test]
    fn unit_value_lands_in_last_bin() {
        assert_eq!(bin_of(1.0, 10), 9);
        assert_eq!(bin_of(0.0, 10), 0);
    }
}
