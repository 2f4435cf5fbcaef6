//! Color jitter and small rotations for image-shaped examples.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{BiasedExample, FeatureLayout};
use crate::{DprError, Result, Scalar};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentParams {
    /// Per-channel multiplicative factor drawn from `U[1 - jitter, 1 + jitter]`.
    pub jitter: f64,
    /// Rotation angle drawn from `U[-max_rotation_deg, max_rotation_deg]`.
    pub max_rotation_deg: f64,
}

impl Default for AugmentParams {
    fn default() -> Self {
        Self {
            jitter: 0.4,
            max_rotation_deg: 15.0,
        }
    }
}

impl AugmentParams {
    pub fn identity() -> Self {
        Self {
            jitter: 0.0,
            max_rotation_deg: 0.0,
        }
    }
}

/// Seeded augmentation of one example. Labels and flags are copied unchanged.
pub fn augment<S: Scalar>(
    example: &BiasedExample<S>,
    layout: FeatureLayout,
    params: &AugmentParams,
    seed: u64,
) -> Result<BiasedExample<S>> {
    augment_with_rng(example, layout, params, &mut ChaCha8Rng::seed_from_u64(seed))
}

pub fn augment_with_rng<S: Scalar, R: Rng + ?Sized>(
    example: &BiasedExample<S>,
    layout: FeatureLayout,
    params: &AugmentParams,
    rng: &mut R,
) -> Result<BiasedExample<S>> {
    let mut features = Vec::new();
    augment_features_into(&example.features, layout, params, rng, &mut features)?;
    Ok(BiasedExample {
        features,
        y: example.y,
        bias_labels: example.bias_labels.clone(),
        aligned: example.aligned.clone(),
    })
}

pub(crate) fn augment_features_into<S: Scalar, R: Rng + ?Sized>(
    features: &[S],
    layout: FeatureLayout,
    params: &AugmentParams,
    rng: &mut R,
    out: &mut Vec<S>,
) -> Result<()> {
    let FeatureLayout::Image {
        height,
        width,
        channels,
    } = layout
    else {
        return Err(DprError::UnsupportedShape(
            "augmentation needs image-shaped features".into(),
        ));
    };
    if features.len() != height * width * channels {
        return Err(DprError::UnsupportedShape(format!(
            "{} features do not form a {height}x{width}x{channels} image",
            features.len()
        )));
    }

    let factors: Vec<S> = (0..channels)
        .map(|_| S::lit(1.0 + params.jitter * (2.0 * rng.random::<f64>() - 1.0)))
        .collect();
    let angle = params.max_rotation_deg * (2.0 * rng.random::<f64>() - 1.0);

    out.clear();
    out.resize(features.len(), S::zero());
    if angle == 0.0 {
        out.copy_from_slice(features);
    } else {
        // inverse map each output pixel back into the source, nearest neighbour
        let (sin, cos) = angle.to_radians().sin_cos();
        let cx = (width as f64 - 1.0) / 2.0;
        let cy = (height as f64 - 1.0) / 2.0;
        for r in 0..height {
            for c in 0..width {
                let dx = c as f64 - cx;
                let dy = r as f64 - cy;
                let sx = (cos * dx + sin * dy + cx).round();
                let sy = (-sin * dx + cos * dy + cy).round();
                if sx < 0.0 || sy < 0.0 || sx >= width as f64 || sy >= height as f64 {
                    continue;
                }
                let src = (sy as usize * width + sx as usize) * channels;
                let dst = (r * width + c) * channels;
                out[dst..dst + channels].copy_from_slice(&features[src..src + channels]);
            }
        }
    }
    for px in out.chunks_exact_mut(channels) {
        for (v, f) in px.iter_mut().zip(&factors) {
            *v = (*v * *f).max(S::zero()).min(S::one());
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_colored, BiasedDataset, GenConfig};

    fn sample() -> (BiasedDataset<f64>, FeatureLayout) {
        let d: BiasedDataset<f64> = generate_colored(&GenConfig::colored(10).with_rho(0.2), 30, 3).unwrap();
        let layout = d.layout();
        (d, layout)
    }

    #[test]
    fn identity_params_are_bitwise_identity() {
        let (d, layout) = sample();
        for (i, e) in d.examples().iter().enumerate() {
            let a = augment(e, layout, &AugmentParams::identity(), i as u64).unwrap();
            assert_eq!(&a, e);
        }
    }

    #[test]
    fn zero_rotation_with_jitter_only_scales() {
        let (d, layout) = sample();
        let p = AugmentParams {
            jitter: 0.4,
            max_rotation_deg: 0.0,
        };
        let e = d.get(0);
        let a = augment(e, layout, &p, 1).unwrap();
        for (x, y) in a.features.iter().zip(&e.features) {
            assert_eq!(*x == 0.0, *y == 0.0);
        }
    }

    #[test]
    fn output_stays_in_unit_interval_and_labels_survive() {
        let (d, layout) = sample();
        let p = AugmentParams::default();
        for (i, e) in d.examples().iter().enumerate() {
            let a = augment(e, layout, &p, 100 + i as u64).unwrap();
            assert!(a.features.iter().all(|v| (0.0..=1.0).contains(v)));
            assert_eq!((a.y, &a.bias_labels, &a.aligned), (e.y, &e.bias_labels, &e.aligned));
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let (d, layout) = sample();
        let p = AugmentParams::default();
        assert_eq!(
            augment(d.get(4), layout, &p, 77).unwrap(),
            augment(d.get(4), layout, &p, 77).unwrap()
        );
    }

    #[test]
    fn flat_layout_is_rejected() {
        let e = BiasedExample {
            features: vec![0.5f64; 10],
            y: 0,
            bias_labels: vec![0],
            aligned: vec![true],
        };
        assert!(matches!(
            augment(&e, FeatureLayout::Flat, &AugmentParams::default(), 0),
            Err(DprError::UnsupportedShape(_))
        ));
    }
}
