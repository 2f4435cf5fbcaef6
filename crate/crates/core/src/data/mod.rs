//! Datasets with a controlled spurious correlation between the label and one
//! or more bias attributes.

pub(crate) mod augment;
mod generate;
mod idx;
mod io;

pub use augment::{augment, augment_with_rng, AugmentParams};
pub use generate::{
    colorize_idx, default_palette, generate, generate_colored, generate_multibias,
    make_unbiased_test, DatasetKind, GenConfig, GlyphStyle, UNBIASED_TEST_RHO,
};
pub use idx::{
    parse_idx_images, parse_idx_labels, read_idx_images, read_idx_labels, write_idx_images,
    write_idx_labels, IdxImages,
};
pub use io::{encoded_len, load_dataset, read_dataset, save_dataset, write_dataset};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::{DprError, Result, Scalar};

/// How a flat feature vector is interpreted.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureLayout {
    /// Row-major pixels with interleaved channels (`HWC`).
    Image {
        height: usize,
        width: usize,
        channels: usize,
    },
    Flat,
}

impl FeatureLayout {
    /// Guesses the layout of a loaded feature vector: `3 * s * s` entries are
    /// read as an `s × s` RGB image, anything else as flat.
    pub fn infer(len: usize) -> Self {
        if len > 0 && len % 3 == 0 {
            let side = ((len / 3) as f64).sqrt().round() as usize;
            if side * side * 3 == len {
                return FeatureLayout::Image {
                    height: side,
                    width: side,
                    channels: 3,
                };
            }
        }
        FeatureLayout::Flat
    }

    pub fn len(&self) -> Option<usize> {
        match *self {
            FeatureLayout::Image {
                height,
                width,
                channels,
            } => Some(height * width * channels),
            FeatureLayout::Flat => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiasedExample<S> {
    pub features: Vec<S>,
    pub y: usize,
    /// One value per bias attribute.
    pub bias_labels: Vec<usize>,
    /// `aligned[m]` is true iff `bias_labels[m] == y`.
    pub aligned: Vec<bool>,
}

impl<S> BiasedExample<S> {
    /// Bias-conflicting if any attribute is misaligned with the label.
    pub fn is_conflicting(&self) -> bool {
        self.aligned.iter().any(|a| !a)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiasedDataset<S> {
    examples: Vec<BiasedExample<S>>,
    num_classes: usize,
    num_bias_attrs: usize,
    rho: f64,
    seed: u64,
    layout: FeatureLayout,
}

impl<S: Scalar> BiasedDataset<S> {
    /// Validates label ranges, attribute counts, alignment flags and feature
    /// widths.
    pub fn new(
        examples: Vec<BiasedExample<S>>,
        num_classes: usize,
        num_bias_attrs: usize,
        rho: f64,
        seed: u64,
        layout: FeatureLayout,
    ) -> Result<Self> {
        if num_classes < 2 {
            return Err(DprError::param("need at least two classes"));
        }
        if num_bias_attrs == 0 {
            return Err(DprError::param("need at least one bias attribute"));
        }
        if !(0.0..=1.0).contains(&rho) {
            return Err(DprError::param(format!("rho must lie in [0, 1], got {rho}")));
        }
        let width = examples.first().map(|e| e.features.len());
        if let (Some(w), Some(expected)) = (width, layout.len()) {
            if w != expected {
                return Err(DprError::shape(format!(
                    "features have {w} entries but the image layout needs {expected}"
                )));
            }
        }
        for (i, e) in examples.iter().enumerate() {
            if Some(e.features.len()) != width {
                return Err(DprError::shape(format!("example {i} has a different feature width")));
            }
            if e.y >= num_classes {
                return Err(DprError::Index {
                    index: e.y,
                    classes: num_classes,
                });
            }
            if e.bias_labels.len() != num_bias_attrs || e.aligned.len() != num_bias_attrs {
                return Err(DprError::Consistency(format!(
                    "example {i} does not carry exactly {num_bias_attrs} bias attributes"
                )));
            }
            for (b, a) in e.bias_labels.iter().zip(&e.aligned) {
                if *b >= num_classes {
                    return Err(DprError::Index {
                        index: *b,
                        classes: num_classes,
                    });
                }
                if (*b == e.y) != *a {
                    return Err(DprError::Consistency(format!(
                        "example {i} has an alignment flag that disagrees with its bias label"
                    )));
                }
            }
        }
        Ok(Self {
            examples,
            num_classes,
            num_bias_attrs,
            rho,
            seed,
            layout,
        })
    }

    pub fn examples(&self) -> &[BiasedExample<S>] {
        &self.examples
    }

    pub fn get(&self, i: usize) -> &BiasedExample<S> {
        &self.examples[i]
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn num_bias_attrs(&self) -> usize {
        self.num_bias_attrs
    }

    /// Bias-conflicting ratio the data was generated with.
    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn layout(&self) -> FeatureLayout {
        self.layout
    }

    pub fn feature_dim(&self) -> usize {
        self.examples.first().map_or(0, |e| e.features.len())
    }

    /// `(aligned, conflicting)` counts under [`BiasedExample::is_conflicting`].
    pub fn group_sizes(&self) -> (usize, usize) {
        let c = self.examples.iter().filter(|e| e.is_conflicting()).count();
        (self.len() - c, c)
    }

    /// New dataset holding the listed examples, with the same metadata.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            examples: indices.iter().map(|&i| self.examples[i].clone()).collect(),
            ..self.metadata_only()
        }
    }

    fn metadata_only(&self) -> Self {
        Self {
            examples: Vec::new(),
            num_classes: self.num_classes,
            num_bias_attrs: self.num_bias_attrs,
            rho: self.rho,
            seed: self.seed,
            layout: self.layout,
        }
    }

    /// Whether the observed conflict count lies within `k` binomial standard
    /// deviations of `n * rho`.
    pub fn conflict_count_plausible(&self, k: f64) -> bool {
        let n = self.len() as f64;
        let observed = self.examples.iter().filter(|e| !e.aligned[0]).count() as f64;
        let sd = (n * self.rho * (1.0 - self.rho)).sqrt();
        (observed - n * self.rho).abs() <= k * sd
    }
}

/// Fraction of examples whose first bias attribute is misaligned.
pub fn empirical_conflict_ratio<S: Scalar>(dataset: &BiasedDataset<S>) -> Result<f64> {
    if dataset.is_empty() {
        return Err(DprError::param("conflict ratio of an empty dataset"));
    }
    let c = dataset.examples.iter().filter(|e| !e.aligned[0]).count();
    Ok(c as f64 / dataset.len() as f64)
}

/// Seeded shuffle split into `(train, val)` with `round(n * val_fraction)`
/// validation examples.
pub fn split<S: Scalar>(
    dataset: &BiasedDataset<S>,
    val_fraction: f64,
    seed: u64,
) -> Result<(BiasedDataset<S>, BiasedDataset<S>)> {
    if !(0.0..1.0).contains(&val_fraction) {
        return Err(DprError::param(format!(
            "validation fraction must lie in [0, 1), got {val_fraction}"
        )));
    }
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_val = (dataset.len() as f64 * val_fraction).round() as usize;
    let (val, train) = order.split_at(n_val);
    Ok((dataset.subset(train), dataset.subset(val)))
}
