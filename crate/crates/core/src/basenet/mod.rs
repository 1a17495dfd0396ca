//! BaseNet: a spectral fully-connected branch and a spatial branch of three
//! convolutions with two skip-connected average pools, fused and classified
//! by two fully-connected layers.
//!
//! ```text
//! spectral ─ fc ─ relu ───────────────────────────────────────┐
//! patch ─ conv1(1x1) ─┬─ conv2(3x3) ─ + ─ relu ─ pool ─┬─ conv3(3x3) ─ + ─ relu ─ pool ─ flatten ─┤
//!                     └──────────────┘                 └──────────────┘                          concat ─ fc1 ─ relu ─ fc ─ softmax
//! ```

mod checkpoint;
mod gradcheck;
mod params;

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use gradcheck::{gradient_check, relative_error, GradCheckOptions, GradCheckReport, FD_FLOOR, FD_STEP};
pub use params::{init_params, Arch, BaseNetParams, Param};

use thiserror::Error;

use crate::tensor::{self, Tape, Tensor, TensorError, Var};

#[derive(Debug, Error)]
pub enum BaseNetError {
    #[error("invalid architecture: {0}")]
    Arch(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, BaseNetError>;

/// Lower bound applied to the true-class probability before the log.
pub const PROB_FLOOR: f64 = 1e-30;

/// Intermediate activations of one forward pass plus its tape.
pub struct ForwardTrace<'a> {
    pub arch: Arch,
    pub tape: Tape<'a>,
    pub params: Vec<Var>,
    pub spectral: Var,
    pub patch: Var,
    pub h_spe: Var,
    pub conv1: Var,
    pub conv2: Var,
    pub pool1: Var,
    pub conv3: Var,
    pub pool2: Var,
    pub h_spa: Var,
    pub fusion: Var,
    pub fc1: Var,
    pub logits: Var,
    pub probs: Tensor,
}

impl ForwardTrace<'_> {
    pub fn value(&self, v: Var) -> &Tensor {
        self.tape.value(v)
    }
}

fn check_inputs(arch: &Arch, spectral: &Tensor, patch: &Tensor) -> Result<()> {
    if spectral.shape() != [arch.bands] {
        return Err(TensorError::Shape {
            op: "forward",
            detail: format!("spectral input {:?}, expected [{}]", spectral.shape(), arch.bands),
        }
        .into());
    }
    let want = [arch.window, arch.window, arch.components];
    if patch.shape() != want {
        return Err(TensorError::Shape {
            op: "forward",
            detail: format!("patch input {:?}, expected {want:?}", patch.shape()),
        }
        .into());
    }
    Ok(())
}

/// Records a full forward pass on a fresh tape.
pub fn forward<'a>(
    params: &'a BaseNetParams,
    spectral: &'a Tensor,
    patch: &'a Tensor,
) -> Result<ForwardTrace<'a>> {
    check_inputs(params.arch(), spectral, patch)?;
    let mut tape = Tape::new();
    let pv: Vec<Var> = params.tensors().iter().map(|t| tape.param(t)).collect();
    let p = |which: Param| pv[which as usize];
    let xs = tape.param(spectral);
    let xp = tape.param(patch);

    let spe = tape.fc(xs, p(Param::SpeW), p(Param::SpeB))?;
    let h_spe = tape.relu(spe);

    let conv1 = tape.conv2d_same(xp, p(Param::Conv1K), p(Param::Conv1B))?;
    let conv2 = tape.conv2d_same(conv1, p(Param::Conv2K), p(Param::Conv2B))?;
    let skip1 = tape.add(conv1, conv2)?;
    let act1 = tape.relu(skip1);
    let pool1 = tape.avgpool2x2(act1)?;
    let conv3 = tape.conv2d_same(pool1, p(Param::Conv3K), p(Param::Conv3B))?;
    let skip2 = tape.add(pool1, conv3)?;
    let act2 = tape.relu(skip2);
    let pool2 = tape.avgpool2x2(act2)?;
    let h_spa = tape.flatten(pool2);

    let fusion = tape.concat(h_spe, h_spa);
    let fc1_lin = tape.fc(fusion, p(Param::Fc1W), p(Param::Fc1B))?;
    let fc1 = tape.relu(fc1_lin);
    let logits = tape.fc(fc1, p(Param::ClsW), p(Param::ClsB))?;
    let probs = tensor::softmax(tape.value(logits));

    Ok(ForwardTrace {
        arch: *params.arch(),
        tape,
        params: pv,
        spectral: xs,
        patch: xp,
        h_spe,
        conv1,
        conv2,
        pool1,
        conv3,
        pool2,
        h_spa,
        fusion,
        fc1,
        logits,
        probs,
    })
}

/// Tape-free forward returning class probabilities. Bit-identical to
/// `forward(..).probs`.
pub fn predict_probs(params: &BaseNetParams, spectral: &Tensor, patch: &Tensor) -> Result<Tensor> {
    check_inputs(params.arch(), spectral, patch)?;
    let t = |which: Param| params.get(which);
    let h_spe = tensor::relu(&tensor::fc_forward(spectral, t(Param::SpeW), t(Param::SpeB))?);
    let conv1 = tensor::conv2d_same(patch, t(Param::Conv1K), t(Param::Conv1B))?;
    let conv2 = tensor::conv2d_same(&conv1, t(Param::Conv2K), t(Param::Conv2B))?;
    let pool1 = tensor::avgpool2x2(&tensor::relu(&tensor::add(&conv1, &conv2)?))?;
    let conv3 = tensor::conv2d_same(&pool1, t(Param::Conv3K), t(Param::Conv3B))?;
    let pool2 = tensor::avgpool2x2(&tensor::relu(&tensor::add(&pool1, &conv3)?))?;
    let fusion = tensor::concat(&h_spe, &tensor::flatten(&pool2));
    let fc1 = tensor::relu(&tensor::fc_forward(&fusion, t(Param::Fc1W), t(Param::Fc1B))?);
    let logits = tensor::fc_forward(&fc1, t(Param::ClsW), t(Param::ClsB))?;
    Ok(tensor::softmax(&logits))
}

/// Cross-entropy `-ln p[label]` for a 1-based class id.
pub fn supervised_loss(probs: &Tensor, label: u32) -> f64 {
    -probs.data()[label as usize - 1].max(PROB_FLOOR).ln()
}

/// Gradient of [`supervised_loss`] with respect to the logits,
/// `probs - onehot(label)`.
pub fn supervised_logit_grad(probs: &Tensor, label: u32) -> Tensor {
    let mut g = probs.clone();
    g.data_mut()[label as usize - 1] -= 1.0;
    g
}

/// Backpropagates a gradient on the logits to every parameter.
pub fn param_gradients(trace: &mut ForwardTrace<'_>, logit_seed: &Tensor) -> Result<BaseNetParams> {
    let mut grads = trace.tape.backward(logit_seed)?;
    let tensors = trace.params.iter().map(|&v| grads.take(v)).collect();
    BaseNetParams::from_tensors(trace.arch, tensors)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Purpose};
    use rand::Rng;

    fn small() -> Arch {
        Arch::new(5, 2, 8, 4).unwrap().with_widths(6, 3, 7).unwrap()
    }

    fn inputs(arch: &Arch, seed: u64) -> (Tensor, Tensor) {
        let mut rng = stream(seed, Purpose::Eval, &[99]);
        let spectral = Tensor::vector((0..arch.bands).map(|_| rng.gen_range(0.0..1.0)).collect());
        let n = arch.window * arch.window * arch.components;
        let patch = Tensor::new(
            vec![arch.window, arch.window, arch.components],
            (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        (spectral, patch)
    }

    #[test]
    fn zero_params_give_uniform_output() {
        let arch = small();
        let (s, p) = inputs(&arch, 1);
        let probs = predict_probs(&BaseNetParams::zeros(arch), &s, &p).unwrap();
        assert!(probs.data().iter().all(|&v| v == 0.25));
    }

    #[test]
    fn probabilities_are_a_distribution_and_paths_agree() {
        let arch = small();
        for seed in 0..5 {
            let params = init_params(seed, arch).unwrap();
            let (s, p) = inputs(&arch, seed);
            let trace = forward(&params, &s, &p).unwrap();
            let sum: f64 = trace.probs.data().iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
            assert!(trace.probs.data().iter().all(|&v| v > 0.0 && v < 1.0));
            assert_eq!(predict_probs(&params, &s, &p).unwrap(), trace.probs);
            assert_eq!(trace.value(trace.h_spa).len(), arch.spatial_features());
            assert_eq!(trace.value(trace.fusion).len(), arch.fusion_width());
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let arch = small();
        let params = init_params(3, arch).unwrap();
        let (s, p) = inputs(&arch, 3);
        let a = forward(&params, &s, &p).unwrap();
        let b = forward(&params, &s, &p).unwrap();
        assert_eq!(a.probs, b.probs);
        assert_eq!(a.value(a.logits), b.value(b.logits));
    }

    #[test]
    fn permuting_class_rows_permutes_output() {
        let arch = small();
        let mut params = init_params(4, arch).unwrap();
        for v in params.get_mut(Param::ClsB).data_mut().iter_mut().enumerate() {
            *v.1 = 0.1 * v.0 as f64;
        }
        let (s, p) = inputs(&arch, 4);
        let before = predict_probs(&params, &s, &p).unwrap();
        let perm = [2usize, 0, 3, 1];
        let h = arch.hidden;
        let mut permuted = params.clone();
        for (dst, &src) in perm.iter().enumerate() {
            let row = params.get(Param::ClsW).data()[src * h..(src + 1) * h].to_vec();
            permuted.get_mut(Param::ClsW).data_mut()[dst * h..(dst + 1) * h].copy_from_slice(&row);
            permuted.get_mut(Param::ClsB).data_mut()[dst] = params.get(Param::ClsB).data()[src];
        }
        let after = predict_probs(&permuted, &s, &p).unwrap();
        for (dst, &src) in perm.iter().enumerate() {
            assert!((after.data()[dst] - before.data()[src]).abs() < 1e-15);
        }
    }

    #[test]
    fn loss_examples() {
        let onehot = Tensor::vector(vec![0.0, 1.0, 0.0]);
        assert_eq!(supervised_loss(&onehot, 2), 0.0);
        let uniform = Tensor::filled(&[10], 0.1);
        assert!((supervised_loss(&uniform, 7) - 10f64.ln()).abs() < 1e-12);
        assert!(supervised_loss(&onehot, 1).is_finite());
        assert!(supervised_loss(&onehot, 1) > 0.0);
    }

    #[test]
    fn class_bias_gradient_is_probs_minus_onehot() {
        let arch = small();
        let params = init_params(5, arch).unwrap();
        let (s, p) = inputs(&arch, 5);
        let mut trace = forward(&params, &s, &p).unwrap();
        let probs = trace.probs.clone();
        let g = param_gradients(&mut trace, &supervised_logit_grad(&probs, 3)).unwrap();
        let want: Vec<f64> = probs
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| if i == 2 { v - 1.0 } else { v })
            .collect();
        assert_eq!(g.get(Param::ClsB).data(), &want[..]);

        let mut trace = forward(&params, &s, &p).unwrap();
        let zero = param_gradients(&mut trace, &Tensor::zeros(&[4])).unwrap();
        assert!(zero.tensors().iter().all(|t| t.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn init_statistics() {
        let arch = Arch::new(103, 5, 16, 9).unwrap();
        let params = init_params(0, arch).unwrap();
        let w = params.get(Param::Fc1W);
        assert_eq!(w.shape(), &[128, 1088]);
        let n = w.len() as f64;
        let mean = w.data().iter().sum::<f64>() / n;
        let std = (w.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        let want = (2.0f64 / 1088.0).sqrt();
        assert!((std / want - 1.0).abs() < 0.1, "std {std}, want {want}");
        assert!(params.get(Param::Fc1B).data().iter().all(|&v| v == 0.0));
        assert_eq!(init_params(0, arch).unwrap(), params);
        assert_ne!(init_params(1, arch).unwrap(), params);
    }

    #[test]
    fn shape_rule() {
        let arch = Arch::new(103, 5, 16, 9).unwrap();
        let want: [(Param, &[usize]); 12] = [
            (Param::SpeW, &[64, 103]),
            (Param::SpeB, &[64]),
            (Param::Conv1K, &[1, 1, 5, 64]),
            (Param::Conv1B, &[64]),
            (Param::Conv2K, &[3, 3, 64, 64]),
            (Param::Conv2B, &[64]),
            (Param::Conv3K, &[3, 3, 64, 64]),
            (Param::Conv3B, &[64]),
            (Param::Fc1W, &[128, 1088]),
            (Param::Fc1B, &[128]),
            (Param::ClsW, &[9, 128]),
            (Param::ClsB, &[9]),
        ];
        for (p, shape) in want {
            assert_eq!(arch.shape_of(p), shape, "{}", p.name());
        }

        let w8 = Arch::new(103, 5, 8, 9).unwrap();
        assert_eq!(arch.spatial_features(), 4 * w8.spatial_features());
        for p in Param::ALL {
            if p != Param::Fc1W {
                assert_eq!(arch.shape_of(p), w8.shape_of(p));
            }
        }
        assert_eq!(w8.shape_of(Param::Fc1W), vec![128, 64 + 256]);
        assert!(Arch::new(103, 5, 6, 9).is_err());
        assert!(Arch::new(103, 0, 8, 9).is_err());
    }

    #[test]
    fn input_shapes_checked() {
        let arch = small();
        let params = init_params(0, arch).unwrap();
        let (s, p) = inputs(&arch, 0);
        assert!(forward(&params, &Tensor::zeros(&[4]), &p).is_err());
        assert!(predict_probs(&params, &s, &Tensor::zeros(&[4, 4, 2])).is_err());
    }

    #[test]
    fn single_sample_is_learnable() {
        let arch = small();
        let mut params = init_params(6, arch).unwrap();
        let (s, p) = inputs(&arch, 6);
        let label = 2;
        let mut reached = None;
        for step in 0..500 {
            let mut trace = forward(&params, &s, &p).unwrap();
            if trace.probs.data()[label as usize - 1] > 0.99 {
                reached = Some(step);
                break;
            }
            let seed = supervised_logit_grad(&trace.probs, label);
            let g = param_gradients(&mut trace, &seed).unwrap();
            params.add_scaled(&g, -0.05).unwrap();
        }
        assert!(reached.is_some(), "true-class probability stayed below 0.99");
    }
}
