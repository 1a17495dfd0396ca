use rand::seq::index::sample;
use rand::Rng;
use rand_distr::StandardNormal;

use super::{forward, init_params, param_gradients, predict_probs, supervised_logit_grad, supervised_loss};
use super::{Arch, BaseNetParams, Param, Result};
use crate::rng::{stream, Purpose};
use crate::tensor::Tensor;

/// Finite-difference step.
pub const FD_STEP: f64 = 1e-5;
/// Gradients smaller than this are compared absolutely rather than relatively.
pub const FD_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckOptions {
    /// Entries checked per tensor; smaller tensors are checked in full.
    pub entries_per_tensor: usize,
    /// Scale the analytic gradient of the class bias, a negative control.
    pub corrupt: bool,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            entries_per_tensor: 24,
            corrupt: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub seed: u64,
    /// Worst relative error per parameter tensor, in checkpoint order.
    pub per_param: Vec<(Param, f64)>,
    pub checked: usize,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.per_param.iter().map(|&(_, e)| e).fold(0.0, f64::max)
    }
}

/// `|a - b| / max(|a|, |b|, FD_FLOOR)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(FD_FLOOR)
}

/// Compares backpropagated cross-entropy gradients against central
/// differences on a randomly initialized network with random inputs.
pub fn gradient_check(arch: Arch, seed: u64, opts: &GradCheckOptions) -> Result<GradCheckReport> {
    let mut params = init_params(seed, arch)?;
    // non-zero biases so their paths are exercised too
    let mut rng = stream(seed, Purpose::Eval, &[0]);
    for &p in Param::ALL.iter().filter(|p| p.is_bias()) {
        for v in params.get_mut(p).data_mut() {
            *v = 0.1 * rng.sample::<f64, _>(StandardNormal);
        }
    }
    let spectral = Tensor::vector((0..arch.bands).map(|_| rng.gen_range(0.0..1.0)).collect());
    let patch_len = arch.window * arch.window * arch.components;
    let patch = Tensor::new(
        vec![arch.window, arch.window, arch.components],
        (0..patch_len).map(|_| rng.sample(StandardNormal)).collect(),
    )?;
    let label = rng.gen_range(1..=arch.classes as u32);

    let mut analytic = {
        let mut trace = forward(&params, &spectral, &patch)?;
        let seed_grad = supervised_logit_grad(&trace.probs, label);
        param_gradients(&mut trace, &seed_grad)?
    };
    if opts.corrupt {
        analytic.get_mut(Param::ClsB).scale(1.1);
    }

    let loss = |p: &BaseNetParams| -> Result<f64> {
        Ok(supervised_loss(&predict_probs(p, &spectral, &patch)?, label))
    };
    let mut per_param = Vec::with_capacity(Param::ALL.len());
    let mut checked = 0;
    for &which in &Param::ALL {
        let len = params.get(which).len();
        let mut pick = stream(seed, Purpose::Eval, &[1, which as u64]);
        let entries: Vec<usize> = if len <= opts.entries_per_tensor {
            (0..len).collect()
        } else {
            sample(&mut pick, len, opts.entries_per_tensor).into_vec()
        };
        let mut worst = 0.0f64;
        for i in entries {
            let orig = params.get(which).data()[i];
            params.get_mut(which).data_mut()[i] = orig + FD_STEP;
            let up = loss(&params)?;
            params.get_mut(which).data_mut()[i] = orig - FD_STEP;
            let down = loss(&params)?;
            params.get_mut(which).data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            worst = worst.max(relative_error(analytic.get(which).data()[i], numeric));
            checked += 1;
        }
        per_param.push((which, worst));
    }
    Ok(GradCheckReport {
        seed,
        per_param,
        checked,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reduced_net_passes() {
        let arch = Arch::new(8, 2, 8, 3).unwrap();
        let report = gradient_check(arch, 0, &GradCheckOptions::default()).unwrap();
        assert_eq!(report.per_param.len(), 12);
        assert!(report.max_rel_error() <= 1e-4, "{report:?}");
    }

    #[test]
    fn corruption_is_detected() {
        let arch = Arch::new(8, 2, 8, 3).unwrap().with_widths(8, 4, 8).unwrap();
        let opts = GradCheckOptions {
            corrupt: true,
            ..Default::default()
        };
        let report = gradient_check(arch, 1, &opts).unwrap();
        let cls_b = report.per_param.iter().find(|(p, _)| *p == Param::ClsB).unwrap().1;
        assert!(cls_b > 0.05);
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(2.0, 1.0), 0.5);
        assert_eq!(relative_error(0.0, 1e-9), 1e-3);
    }
}
