//! Procedural colored-glyph and multi-attribute datasets.
//!
//! Every example draws its randomness from its own ChaCha stream keyed by
//! `(seed, index)`, so a dataset is a pure function of `(config, n, seed)`
//! and identical conditioned on the alignment flag regardless of `rho`.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::idx::{read_idx_images, read_idx_labels};
use super::{BiasedDataset, BiasedExample, FeatureLayout};
use crate::{DprError, Result, Scalar};

/// Conflicting ratio of every unbiased evaluation set.
pub const UNBIASED_TEST_RHO: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetKind {
    /// Procedural digit glyphs colored by a class-correlated color.
    Colored,
    /// Grayscale glyph target plus `M` independently correlated attributes.
    Multibias,
    /// Grayscale IDX images colored like [`DatasetKind::Colored`].
    ColorizedIdx,
}

/// Per-example variation of the rendered glyphs.
#[derive(Debug, Clone, PartialEq)]
pub struct GlyphStyle {
    /// Maximum translation in pixels along each axis.
    pub max_shift: i32,
    /// Stroke intensities are drawn from `U(min_intensity, 1)`.
    pub min_intensity: f64,
    /// Probability that a stroke pixel is dropped.
    pub dropout: f64,
}

impl Default for GlyphStyle {
    fn default() -> Self {
        Self {
            max_shift: 1,
            min_intensity: 0.5,
            dropout: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenConfig {
    pub kind: DatasetKind,
    pub num_classes: usize,
    pub num_bias_attrs: usize,
    pub rho: f64,
    /// Variance of the isotropic Gaussian color noise, `c ~ N(C_y, sigma I)`.
    pub sigma: f64,
    /// `prototypes[m][k]` is the RGB prototype of value `k` for attribute `m`.
    pub prototypes: Vec<Vec<[f64; 3]>>,
    /// Side of the square glyph canvas.
    pub image_size: usize,
    pub glyph: GlyphStyle,
}

impl GenConfig {
    pub fn colored(num_classes: usize) -> Self {
        Self {
            kind: DatasetKind::Colored,
            num_classes,
            num_bias_attrs: 1,
            rho: 0.01,
            sigma: 1e-4,
            prototypes: vec![default_palette(num_classes, 0)],
            image_size: 12,
            glyph: GlyphStyle::default(),
        }
    }

    pub fn multibias(num_classes: usize, num_bias_attrs: usize) -> Self {
        Self {
            kind: DatasetKind::Multibias,
            num_bias_attrs,
            rho: 0.1,
            prototypes: (0..num_bias_attrs)
                .map(|m| default_palette(num_classes, m))
                .collect(),
            ..Self::colored(num_classes)
        }
    }

    pub fn colorized_idx(num_classes: usize) -> Self {
        Self {
            kind: DatasetKind::ColorizedIdx,
            ..Self::colored(num_classes)
        }
    }

    pub fn with_rho(mut self, rho: f64) -> Self {
        self.rho = rho;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(DprError::param("need at least two classes"));
        }
        if self.num_bias_attrs == 0 {
            return Err(DprError::param("need at least one bias attribute"));
        }
        if !(0.0..=1.0).contains(&self.rho) {
            return Err(DprError::param(format!("rho must lie in [0, 1], got {}", self.rho)));
        }
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
            return Err(DprError::param("sigma must be finite and nonnegative"));
        }
        if self.prototypes.len() != self.num_bias_attrs {
            return Err(DprError::param("need one prototype table per bias attribute"));
        }
        for table in &self.prototypes {
            if table.len() != self.num_classes {
                return Err(DprError::param("need one prototype per class"));
            }
            for (i, a) in table.iter().enumerate() {
                if a.iter().any(|c| !(0.0..=1.0).contains(c)) {
                    return Err(DprError::param("prototype colors must lie in [0, 1]^3"));
                }
                if table[..i].contains(a) {
                    return Err(DprError::param("prototype colors must be pairwise distinct"));
                }
            }
        }
        match self.kind {
            DatasetKind::Colored | DatasetKind::ColorizedIdx if self.num_bias_attrs != 1 => {
                return Err(DprError::param("colored datasets carry exactly one bias attribute"))
            }
            DatasetKind::Multibias if self.num_bias_attrs < 2 => {
                return Err(DprError::param("multibias datasets need at least two attributes"))
            }
            _ => {}
        }
        if self.kind != DatasetKind::ColorizedIdx {
            if self.image_size < 8 {
                return Err(DprError::param("glyph canvas must be at least 8 pixels wide"));
            }
            if self.num_classes > glyph_masks().len() {
                return Err(DprError::param(format!(
                    "at most {} procedural glyph classes are available",
                    glyph_masks().len()
                )));
            }
            if self.glyph.max_shift < 0
                || !(0.0..=1.0).contains(&self.glyph.min_intensity)
                || !(0.0..1.0).contains(&self.glyph.dropout)
            {
                return Err(DprError::param("invalid glyph style"));
            }
        }
        Ok(())
    }
}

/// Fixed, well separated RGB prototypes. Attribute `m` uses the table rotated
/// by `m` so different attributes assign different colors to the same value.
pub fn default_palette(num_classes: usize, attribute: usize) -> Vec<[f64; 3]> {
    const BASE: [[f64; 3]; 10] = [
        [1.0, 0.0, 0.0],
        [0.0, 1.0, 0.0],
        [0.0, 0.0, 1.0],
        [1.0, 1.0, 0.0],
        [1.0, 0.0, 1.0],
        [0.0, 1.0, 1.0],
        [1.0, 0.5, 0.0],
        [0.5, 0.0, 1.0],
        [0.0, 0.5, 0.25],
        [1.0, 1.0, 1.0],
    ];
    let mut colors: Vec<[f64; 3]> = if num_classes <= BASE.len() {
        BASE[..num_classes].to_vec()
    } else {
        // evenly spaced fully saturated hues
        (0..num_classes)
            .map(|k| hsv_to_rgb(k as f64 / num_classes as f64))
            .collect()
    };
    let shift = attribute % num_classes;
    colors.rotate_left(shift);
    colors
}

fn hsv_to_rgb(h: f64) -> [f64; 3] {
    let h6 = h * 6.0;
    let x = 1.0 - (h6 % 2.0 - 1.0).abs();
    match h6 as usize {
        0 => [1.0, x, 0.0],
        1 => [x, 1.0, 0.0],
        2 => [0.0, 1.0, x],
        3 => [0.0, x, 1.0],
        4 => [x, 0.0, 1.0],
        _ => [1.0, 0.0, x],
    }
}

// Seven segment bits: a=1 b=2 c=4 d=8 e=16 f=32 g=64.
const DIGIT_MASKS: [u8; 10] = [63, 6, 91, 79, 102, 109, 125, 7, 127, 111];

/// Segment masks for every procedural class: the ten digits first, then the
/// remaining patterns with at least two segments in increasing order.
fn glyph_masks() -> Vec<u8> {
    let mut masks = DIGIT_MASKS.to_vec();
    masks.extend((1u8..128).filter(|m| m.count_ones() >= 2 && !DIGIT_MASKS.contains(m)));
    masks
}

/// Renders the seven-segment glyph of `class` as intensities in `[0, 1]`.
fn render_glyph(class: usize, size: usize, style: &GlyphStyle, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mask = glyph_masks()[class];
    let gw = size / 2;
    let gh = size - 4;
    let shift = style.max_shift;
    let dx = rng.random_range(-shift..=shift);
    let dy = rng.random_range(-shift..=shift);
    let x0 = (size - gw) as i32 / 2 + dx;
    let y0 = (size - gh) as i32 / 2 + dy;
    let (left, right) = (x0, x0 + gw as i32 - 1);
    let (top, bottom) = (y0, y0 + gh as i32 - 1);
    let mid = y0 + (gh as i32 - 1) / 2;

    let mut on = vec![false; size * size];
    let mut mark = |x: i32, y: i32| {
        if (0..size as i32).contains(&x) && (0..size as i32).contains(&y) {
            on[y as usize * size + x as usize] = true;
        }
    };
    let hline = |y: i32, mark: &mut dyn FnMut(i32, i32)| (left..=right).for_each(|x| mark(x, y));
    if mask & 1 != 0 {
        hline(top, &mut mark);
    }
    if mask & 8 != 0 {
        hline(bottom, &mut mark);
    }
    if mask & 64 != 0 {
        hline(mid, &mut mark);
    }
    let segments = [(2, right, top, mid), (4, right, mid, bottom), (16, left, mid, bottom), (32, left, top, mid)];
    for (bit, x, from, to) in segments {
        if mask & bit != 0 {
            (from..=to).for_each(|y| mark(x, y));
        }
    }

    on.into_iter()
        .map(|lit| {
            let keep = rng.random::<f64>() >= style.dropout;
            let level = style.min_intensity + (1.0 - style.min_intensity) * rng.random::<f64>();
            if lit && keep {
                level
            } else {
                0.0
            }
        })
        .collect()
}

fn example_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Draws the value of one bias attribute: `y` with probability `1 - rho`,
/// otherwise uniform over the other `K - 1` values.
fn draw_bias_value(y: usize, k: usize, rho: f64, rng: &mut ChaCha8Rng) -> usize {
    if rng.random_bool(rho) {
        let r = rng.random_range(0..k - 1);
        if r >= y {
            r + 1
        } else {
            r
        }
    } else {
        y
    }
}

fn noisy_color(proto: [f64; 3], noise: &Normal<f64>, rng: &mut ChaCha8Rng) -> [f64; 3] {
    proto.map(|c| (c + noise.sample(rng)).clamp(0.0, 1.0))
}

fn color_noise(sigma: f64) -> Normal<f64> {
    Normal::new(0.0, sigma.sqrt()).expect("sigma validated as finite and nonnegative")
}

fn check_count(n: usize) -> Result<()> {
    if n == 0 {
        return Err(DprError::param("dataset size must be positive"));
    }
    Ok(())
}

/// Colored glyph dataset: label `i mod K`, color drawn around the label's
/// prototype (aligned) or another class's prototype (conflicting, prob. `rho`).
pub fn generate_colored<S: Scalar>(config: &GenConfig, n: usize, seed: u64) -> Result<BiasedDataset<S>> {
    config.validate()?;
    check_count(n)?;
    if config.kind != DatasetKind::Colored {
        return Err(DprError::param("generate_colored needs a colored config"));
    }
    let k = config.num_classes;
    let size = config.image_size;
    let noise = color_noise(config.sigma);
    let examples = (0..n)
        .map(|i| {
            let mut rng = example_rng(seed, i);
            let y = i % k;
            let b = draw_bias_value(y, k, config.rho, &mut rng);
            let color = noisy_color(config.prototypes[0][b], &noise, &mut rng);
            let glyph = render_glyph(y, size, &config.glyph, &mut rng);
            BiasedExample {
                features: colorize(&glyph, color),
                y,
                bias_labels: vec![b],
                aligned: vec![b == y],
            }
        })
        .collect();
    BiasedDataset::new(
        examples,
        k,
        1,
        config.rho,
        seed,
        FeatureLayout::Image {
            height: size,
            width: size,
            channels: 3,
        },
    )
}

fn colorize<S: Scalar>(intensity: &[f64], color: [f64; 3]) -> Vec<S> {
    intensity
        .iter()
        .flat_map(|v| color.map(|c| S::lit((v * c).clamp(0.0, 1.0))))
        .collect()
}

/// Grayscale glyph followed by one `K`-wide block per bias attribute; the
/// block is one-hot at the attribute value, scaled by a noisy scalar derived
/// from that value's prototype color.
pub fn generate_multibias<S: Scalar>(config: &GenConfig, n: usize, seed: u64) -> Result<BiasedDataset<S>> {
    config.validate()?;
    check_count(n)?;
    if config.kind != DatasetKind::Multibias {
        return Err(DprError::param("generate_multibias needs a multibias config"));
    }
    let k = config.num_classes;
    let m = config.num_bias_attrs;
    let noise = color_noise(config.sigma);
    let examples = (0..n)
        .map(|i| {
            let mut rng = example_rng(seed, i);
            let y = i % k;
            let bias_labels: Vec<usize> = (0..m).map(|_| draw_bias_value(y, k, config.rho, &mut rng)).collect();
            let glyph = render_glyph(y, config.image_size, &config.glyph, &mut rng);
            let mut features: Vec<S> = glyph.iter().map(|v| S::lit(*v)).collect();
            for (attr, &b) in bias_labels.iter().enumerate() {
                let c = noisy_color(config.prototypes[attr][b], &noise, &mut rng);
                let level = ((c[0] + c[1] + c[2]) / 3.0).clamp(0.0, 1.0);
                features.extend((0..k).map(|v| if v == b { S::lit(level) } else { S::zero() }));
            }
            BiasedExample {
                features,
                y,
                aligned: bias_labels.iter().map(|b| *b == y).collect(),
                bias_labels,
            }
        })
        .collect();
    BiasedDataset::new(examples, k, m, config.rho, seed, FeatureLayout::Flat)
}

/// Dispatches on `config.kind` for the procedural kinds.
pub fn generate<S: Scalar>(config: &GenConfig, n: usize, seed: u64) -> Result<BiasedDataset<S>> {
    match config.kind {
        DatasetKind::Colored => generate_colored(config, n, seed),
        DatasetKind::Multibias => generate_multibias(config, n, seed),
        DatasetKind::ColorizedIdx => Err(DprError::param(
            "colorized IDX datasets are built with colorize_idx",
        )),
    }
}

/// The same generator with `rho` overridden to [`UNBIASED_TEST_RHO`].
pub fn make_unbiased_test<S: Scalar>(config: &GenConfig, n: usize, seed: u64) -> Result<BiasedDataset<S>> {
    generate(&config.clone().with_rho(UNBIASED_TEST_RHO), n, seed)
}

/// Colors grayscale IDX images: each pixel becomes `intensity / 255 * c` with
/// `c` drawn as in [`generate_colored`].
pub fn colorize_idx<S: Scalar>(
    image_file: impl AsRef<Path>,
    label_file: impl AsRef<Path>,
    config: &GenConfig,
    seed: u64,
) -> Result<BiasedDataset<S>> {
    config.validate()?;
    let images = read_idx_images(image_file)?;
    let labels = read_idx_labels(label_file)?;
    if images.count != labels.len() {
        return Err(DprError::Consistency(format!(
            "{} images but {} labels",
            images.count,
            labels.len()
        )));
    }
    let k = config.num_classes;
    let noise = color_noise(config.sigma);
    let pixels = images.rows * images.cols;
    let mut examples = Vec::with_capacity(images.count);
    for (i, &label) in labels.iter().enumerate() {
        let y = label as usize;
        if y >= k {
            return Err(DprError::Format {
                offset: 8 + i as u64,
                reason: format!("label {y} exceeds the configured {k} classes"),
            });
        }
        let mut rng = example_rng(seed, i);
        let b = draw_bias_value(y, k, config.rho, &mut rng);
        let color = noisy_color(config.prototypes[0][b], &noise, &mut rng);
        let intensity: Vec<f64> = images.pixels[i * pixels..(i + 1) * pixels]
            .iter()
            .map(|p| *p as f64 / 255.0)
            .collect();
        examples.push(BiasedExample {
            features: colorize(&intensity, color),
            y,
            bias_labels: vec![b],
            aligned: vec![b == y],
        });
    }
    BiasedDataset::new(
        examples,
        k,
        1,
        config.rho,
        seed,
        FeatureLayout::Image {
            height: images.rows,
            width: images.cols,
            channels: 3,
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::empirical_conflict_ratio;

    fn colored(rho: f64) -> GenConfig {
        GenConfig::colored(10).with_rho(rho)
    }

    #[test]
    fn rho_zero_is_fully_aligned() {
        let d: BiasedDataset<f64> = generate_colored(&colored(0.0), 500, 1).unwrap();
        assert_eq!(empirical_conflict_ratio(&d).unwrap(), 0.0);
    }

    #[test]
    fn rho_one_is_fully_conflicting() {
        let d: BiasedDataset<f64> = generate_colored(&colored(1.0), 500, 2).unwrap();
        assert!(d.examples().iter().all(|e| e.bias_labels[0] != e.y));
    }

    #[test]
    fn conflict_count_within_binomial_band() {
        // 20000 * 0.01 = 200, 3 sd = 3 * sqrt(198) ~ 42.2
        let d: BiasedDataset<f64> = generate_colored(&colored(0.01), 20_000, 7).unwrap();
        let c = d.examples().iter().filter(|e| !e.aligned[0]).count();
        assert!((158..=242).contains(&c), "{c}");
        assert!(d.conflict_count_plausible(3.0));
    }

    #[test]
    fn features_in_unit_interval_and_deterministic() {
        let cfg = colored(0.3);
        let a: BiasedDataset<f64> = generate_colored(&cfg, 200, 9).unwrap();
        let b: BiasedDataset<f64> = generate_colored(&cfg, 200, 9).unwrap();
        assert_eq!(a, b);
        assert!(a
            .examples()
            .iter()
            .all(|e| e.features.iter().all(|v| (0.0..=1.0).contains(v))));
        assert_eq!(a.feature_dim(), 12 * 12 * 3);
    }

    #[test]
    fn labels_are_balanced() {
        let d: BiasedDataset<f64> = generate_colored(&colored(0.1), 1000, 3).unwrap();
        for k in 0..10 {
            assert_eq!(d.examples().iter().filter(|e| e.y == k).count(), 100);
        }
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(generate_colored::<f64>(&colored(0.1), 0, 0).is_err());
        assert!(generate_colored::<f64>(&GenConfig::colored(1), 10, 0).is_err());
        assert!(generate_colored::<f64>(&colored(1.5), 10, 0).is_err());
        let mut dup = colored(0.1);
        dup.prototypes[0][1] = dup.prototypes[0][0];
        assert!(generate_colored::<f64>(&dup, 10, 0).is_err());
    }

    #[test]
    fn multibias_rho_zero_all_aligned() {
        let cfg = GenConfig::multibias(10, 7).with_rho(0.0);
        let d: BiasedDataset<f64> = generate_multibias(&cfg, 300, 1).unwrap();
        assert!(d.examples().iter().all(|e| e.aligned.iter().all(|a| *a)));
        assert_eq!(d.feature_dim(), 144 + 70);
    }

    #[test]
    fn multibias_flags_recomputable() {
        let cfg = GenConfig::multibias(5, 3).with_rho(0.4);
        let d: BiasedDataset<f64> = generate_multibias(&cfg, 500, 2).unwrap();
        for e in d.examples() {
            for (b, a) in e.bias_labels.iter().zip(&e.aligned) {
                assert_eq!(*b == e.y, *a);
            }
        }
    }

    #[test]
    fn multibias_all_aligned_fraction_is_product() {
        // P(all aligned) = 0.7^2 = 0.49; sd = sqrt(0.49 * 0.51 / 10000) ~ 0.005
        let cfg = GenConfig::multibias(10, 2).with_rho(0.3);
        let d: BiasedDataset<f64> = generate_multibias(&cfg, 10_000, 5).unwrap();
        let frac = d.group_sizes().0 as f64 / 10_000.0;
        let sd = (0.49f64 * 0.51 / 10_000.0).sqrt();
        assert!((frac - 0.49).abs() <= 3.0 * sd, "{frac}");
    }

    #[test]
    fn multibias_needs_two_attributes() {
        let cfg = GenConfig::multibias(10, 1);
        assert!(generate_multibias::<f64>(&cfg, 10, 0).is_err());
    }

    #[test]
    fn unbiased_test_matches_generator_at_point_nine() {
        let cfg = colored(0.01);
        let t: BiasedDataset<f64> = make_unbiased_test(&cfg, 400, 4).unwrap();
        assert_eq!(t.rho(), 0.9);
        let g: BiasedDataset<f64> = generate_colored(&cfg.clone().with_rho(0.9), 400, 4).unwrap();
        assert_eq!(t, g);
    }

    #[test]
    fn unbiased_test_conflict_fraction() {
        let t: BiasedDataset<f64> = make_unbiased_test(&colored(0.01), 5000, 8).unwrap();
        let r = empirical_conflict_ratio(&t).unwrap();
        let sd = (0.9f64 * 0.1 / 5000.0).sqrt();
        assert!((r - 0.9).abs() <= 3.0 * sd, "{r}");
    }

    #[test]
    fn empirical_ratio_near_five_percent() {
        let d: BiasedDataset<f64> = generate_colored(&colored(0.05), 8000, 21).unwrap();
        let r = empirical_conflict_ratio(&d).unwrap();
        let sd = (0.05f64 * 0.95 / 8000.0).sqrt();
        assert!((r - 0.05).abs() <= 3.0 * sd, "{r}");
    }

    #[test]
    fn glyph_masks_are_distinct() {
        let masks = glyph_masks();
        for (i, m) in masks.iter().enumerate() {
            assert!(!masks[..i].contains(m));
        }
    }

    #[test]
    fn palettes_are_distinct_for_large_k() {
        let p = default_palette(40, 3);
        for (i, c) in p.iter().enumerate() {
            assert!(!p[..i].contains(c));
        }
    }
}
