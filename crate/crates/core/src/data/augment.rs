use super::Sample;
use crate::rng::NoiseSource;

/// Adds i.i.d. `N(0, std²)` noise to every spectral and patch element.
/// Spectral elements are drawn first, then the patch in row-major order.
pub fn augment(sample: &Sample, std: f64, noise: &mut impl NoiseSource) -> Sample {
    let mut out = sample.clone();
    augment_into(&mut out, std, noise);
    out
}

pub fn augment_into(sample: &mut Sample, std: f64, noise: &mut impl NoiseSource) {
    for v in sample.spectral.data_mut() {
        *v += std * noise.next_standard_normal();
    }
    for v in sample.patch.data_mut() {
        *v += std * noise.next_standard_normal();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{GaussianStream, Purpose, ZeroNoise};
    use crate::tensor::Tensor;

    fn sample() -> Sample {
        Sample {
            row: 0,
            col: 0,
            spectral: Tensor::vector(vec![0.1, 0.2, 0.3]),
            patch: Tensor::filled(&[2, 2, 2], 0.5),
            label: Some(2),
        }
    }

    #[test]
    fn zero_stream_is_identity() {
        let s = sample();
        assert_eq!(augment(&s, 0.5, &mut ZeroNoise), s);
    }

    #[test]
    fn successive_draws_differ_and_keep_shape() {
        let s = sample();
        let mut noise = GaussianStream::new(1, Purpose::LabeledNoise, &[]);
        let a = augment(&s, 0.5, &mut noise);
        let b = augment(&s, 0.5, &mut noise);
        assert_ne!(a, b);
        assert_eq!(a.label, s.label);
        assert_eq!(a.patch.shape(), s.patch.shape());
        assert_eq!(s, sample());
    }

    #[test]
    fn noise_moments() {
        let base = Sample {
            row: 0,
            col: 0,
            spectral: Tensor::zeros(&[100]),
            patch: Tensor::zeros(&[10, 10, 9]),
            label: None,
        };
        let mut noise = GaussianStream::new(11, Purpose::LabeledNoise, &[]);
        let mut draws = Vec::with_capacity(100_000);
        while draws.len() < 100_000 {
            let a = augment(&base, 0.5, &mut noise);
            draws.extend_from_slice(a.spectral.data());
            draws.extend_from_slice(a.patch.data());
        }
        let n = draws.len() as f64;
        let mean = draws.iter().sum::<f64>() / n;
        let std = (draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((std - 0.5).abs() < 0.01, "std {std}");
    }
}
