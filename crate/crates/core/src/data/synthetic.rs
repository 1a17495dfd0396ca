use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{DataError, HsiCube, LabelMap, Result};
use crate::rng::{stream, Purpose};

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub rows: usize,
    pub cols: usize,
    pub bands: usize,
    pub classes: usize,
    /// Std of the i.i.d. per-pixel noise.
    pub noise_std: f64,
    /// RMS amplitude of each class's deviation from the shared base curve.
    pub separation: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            rows: 64,
            cols: 64,
            bands: 16,
            classes: 5,
            noise_std: 0.1,
            separation: 0.09,
            seed: 0,
        }
    }
}

pub struct SyntheticScene {
    pub cube: HsiCube,
    pub labels: LabelMap,
    /// Noise-free spectrum of each class; `signatures[c]` belongs to class `c + 1`.
    pub signatures: Vec<Vec<f64>>,
    /// Region centres as `(row, col)`.
    pub seeds: Vec<(usize, usize)>,
}

/// Sum of Gaussian bumps over the band axis.
fn smooth_curve(rng: &mut impl Rng, bands: usize, bumps: usize, amplitude: f64) -> Vec<f64> {
    let span = bands as f64;
    let params: Vec<(f64, f64, f64)> = (0..bumps)
        .map(|_| {
            let a = rng.gen_range(-amplitude..=amplitude);
            let centre = rng.gen_range(0.0..span);
            let width = rng.gen_range(span / 6.0..=span / 3.0).max(0.5);
            (a, centre, width)
        })
        .collect();
    (0..bands)
        .map(|b| {
            params
                .iter()
                .map(|&(a, c, w)| a * (-((b as f64 - c) / w).powi(2) / 2.0).exp())
                .sum()
        })
        .collect()
}

/// Unit-RMS smooth deviations, one per class, built from the low-frequency
/// cosine basis. When the basis is large enough they are mutually
/// orthogonal, so every pair of classes sits at the same distance.
fn class_deviations(rng: &mut impl Rng, bands: usize, classes: usize) -> Vec<Vec<f64>> {
    let span = bands as f64;
    let basis_len = (bands.saturating_sub(1)).min(classes.max(4)).max(1);
    let basis: Vec<Vec<f64>> = (1..=basis_len)
        .map(|j| {
            (0..bands)
                .map(|b| (std::f64::consts::PI * j as f64 * (b as f64 + 0.5) / span).cos())
                .collect()
        })
        .collect();
    let mut coeffs: Vec<Vec<f64>> = Vec::with_capacity(classes);
    for _ in 0..classes {
        let mut c: Vec<f64> = (0..basis_len).map(|_| rng.sample(rand_distr::StandardNormal)).collect();
        // Gram-Schmidt against earlier classes while the basis has room
        if coeffs.len() < basis_len {
            for prev in &coeffs {
                let d: f64 = c.iter().zip(prev).map(|(a, b)| a * b).sum();
                c.iter_mut().zip(prev).for_each(|(a, b)| *a -= d * b);
            }
        }
        let norm = c.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            c.iter_mut().for_each(|v| *v /= norm);
        }
        coeffs.push(c);
    }
    coeffs
        .iter()
        .map(|c| {
            let curve: Vec<f64> = (0..bands)
                .map(|b| c.iter().zip(&basis).map(|(w, f)| w * f[b]).sum())
                .collect();
            let rms = (curve.iter().map(|v| v * v).sum::<f64>() / span).sqrt();
            let gain = if rms > 0.0 { 1.0 / rms } else { 0.0 };
            curve.into_iter().map(|v| v * gain).collect()
        })
        .collect()
}

/// Scene of `classes` contiguous regions (nearest of `classes` random
/// centre pixels). Each pixel is its class signature plus Gaussian noise.
pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<SyntheticScene> {
    let &SyntheticConfig {
        rows,
        cols,
        bands,
        classes,
        noise_std,
        separation,
        seed,
    } = cfg;
    if classes < 2 {
        return Err(DataError::Param(format!("need at least 2 classes, got {classes}")));
    }
    if rows == 0 || cols == 0 || bands == 0 {
        return Err(DataError::Param("scene dimensions must be positive".into()));
    }
    if rows * cols < 50 * classes {
        return Err(DataError::Param(format!(
            "{rows}x{cols} scene is too small for {classes} classes (need {} pixels)",
            50 * classes
        )));
    }
    if !(noise_std >= 0.0 && noise_std.is_finite() && separation >= 0.0 && separation.is_finite()) {
        return Err(DataError::Param("noise and separation must be finite and non-negative".into()));
    }

    let mut rng = stream(seed, Purpose::Synthetic, &[0]);

    let mut cells: Vec<usize> = (0..rows * cols).collect();
    let (picked, _) = rand::seq::SliceRandom::partial_shuffle(&mut cells[..], &mut rng, classes);
    let seeds: Vec<(usize, usize)> = picked.iter().map(|&i| (i / cols, i % cols)).collect();

    let base: Vec<f64> = smooth_curve(&mut rng, bands, 3, 0.25)
        .into_iter()
        .map(|v| v + 0.5)
        .collect();
    let signatures: Vec<Vec<f64>> = class_deviations(&mut rng, bands, classes)
        .into_iter()
        .map(|dev| base.iter().zip(&dev).map(|(b, d)| b + separation * d).collect())
        .collect();

    let mut labels = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            let nearest = seeds
                .iter()
                .enumerate()
                .min_by_key(|(_, &(sr, sc))| {
                    let dr = r as i64 - sr as i64;
                    let dc = c as i64 - sc as i64;
                    dr * dr + dc * dc
                })
                .map(|(i, _)| i)
                .unwrap();
            labels.push(nearest as u32 + 1);
        }
    }

    let mut noise_rng = stream(seed, Purpose::Synthetic, &[1]);
    let noise = Normal::new(0.0, noise_std.max(f64::MIN_POSITIVE)).unwrap();
    let mut values = Vec::with_capacity(rows * cols * bands);
    for &l in &labels {
        for &s in &signatures[l as usize - 1] {
            let eps = if noise_std > 0.0 { noise.sample(&mut noise_rng) } else { 0.0 };
            values.push((s + eps) as f32);
        }
    }

    Ok(SyntheticScene {
        cube: HsiCube::new(rows, cols, bands, values)?,
        labels: LabelMap::new(rows, cols, labels)?,
        signatures,
        seeds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_class_present() {
        let scene = generate_synthetic(&SyntheticConfig {
            rows: 20,
            cols: 20,
            bands: 4,
            classes: 6,
            seed: 3,
            ..Default::default()
        })
        .unwrap();
        let mut counts = [0usize; 7];
        for &l in scene.labels.labels() {
            assert!((1..=6).contains(&l));
            counts[l as usize] += 1;
        }
        assert!(counts[1..].iter().all(|&c| c > 0));
    }

    #[test]
    fn noiseless_classes_are_constant() {
        let scene = generate_synthetic(&SyntheticConfig {
            rows: 16,
            cols: 16,
            bands: 5,
            classes: 3,
            noise_std: 0.0,
            seed: 1,
            ..Default::default()
        })
        .unwrap();
        for r in 0..16 {
            for c in 0..16 {
                let l = scene.labels.get(r, c) as usize;
                let want: Vec<f32> = scene.signatures[l - 1].iter().map(|&v| v as f32).collect();
                assert_eq!(scene.cube.pixel(r, c), &want[..]);
            }
        }
    }

    #[test]
    fn parameter_checks() {
        let base = SyntheticConfig::default();
        assert!(generate_synthetic(&SyntheticConfig { classes: 1, ..base.clone() }).is_err());
        assert!(generate_synthetic(&SyntheticConfig { rows: 5, cols: 5, ..base.clone() }).is_err());
        assert!(generate_synthetic(&SyntheticConfig { noise_std: -1.0, ..base }).is_err());
    }

    #[test]
    fn deterministic() {
        let cfg = SyntheticConfig::default();
        let a = generate_synthetic(&cfg).unwrap();
        let b = generate_synthetic(&cfg).unwrap();
        assert_eq!(a.cube, b.cube);
        assert_eq!(a.labels, b.labels);
    }

    #[test]
    fn nearest_true_mean_classifies_well() {
        let scene = generate_synthetic(&SyntheticConfig::default()).unwrap();
        let mut correct = 0;
        for r in 0..64 {
            for c in 0..64 {
                let px = scene.cube.pixel(r, c);
                let best = scene
                    .signatures
                    .iter()
                    .enumerate()
                    .map(|(i, s)| {
                        let d: f64 = s.iter().zip(px).map(|(a, &b)| (a - b as f64).powi(2)).sum();
                        (i, d)
                    })
                    .min_by(|a, b| a.1.total_cmp(&b.1))
                    .unwrap()
                    .0;
                if best as u32 + 1 == scene.labels.get(r, c) {
                    correct += 1;
                }
            }
        }
        let acc = correct as f64 / 4096.0;
        assert!(acc > 0.95, "accuracy {acc}");
    }
}
