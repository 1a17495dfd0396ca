use crate::basenet::{predict_probs, BaseNetParams, Result as ModelResult};
use crate::data::{augment, Sample};
use crate::rng::NoiseSource;
use crate::tensor::Tensor;

/// Teacher output for one unlabeled sample.
#[derive(Debug, Clone, PartialEq)]
pub struct TeacherPrediction {
    /// Elementwise mean of `copies`.
    pub mean: Tensor,
    pub copies: Vec<Tensor>,
}

/// Runs the teacher on `m` independent augmentations of `sample`.
///
/// `stream_for(t)` supplies the noise for copy `t`. No tape is recorded.
pub fn ensemble_mean_prediction<N: NoiseSource>(
    teacher: &BaseNetParams,
    sample: &Sample,
    m: usize,
    noise_std: f64,
    mut stream_for: impl FnMut(usize) -> N,
) -> ModelResult<TeacherPrediction> {
    let copies = (0..m.max(1))
        .map(|t| {
            let aug = augment(sample, noise_std, &mut stream_for(t));
            predict_probs(teacher, &aug.spectral, &aug.patch)
        })
        .collect::<ModelResult<Vec<_>>>()?;
    Ok(TeacherPrediction {
        mean: mean_of(&copies),
        copies,
    })
}

fn mean_of(copies: &[Tensor]) -> Tensor {
    let mut acc = copies[0].clone();
    for c in &copies[1..] {
        acc.add_scaled(c, 1.0).expect("copies share a shape");
    }
    acc.scale(1.0 / copies.len() as f64);
    acc
}

/// Negative sum over classes of the population standard deviation of the
/// copies' probabilities. Zero is the most consistent value.
pub fn consistency_value(copies: &[Tensor]) -> f64 {
    let m = copies.len();
    if m < 2 {
        return 0.0;
    }
    let k = copies[0].len();
    let mut total = 0.0;
    for j in 0..k {
        // offsets from the first copy make identical copies give exactly 0
        let base = copies[0].data()[j];
        let mean = copies.iter().map(|c| c.data()[j] - base).sum::<f64>() / m as f64;
        let var = copies
            .iter()
            .map(|c| (c.data()[j] - base - mean).powi(2))
            .sum::<f64>()
            / m as f64;
        total += var.sqrt();
    }
    -total
}

/// Ramp-up quota `round(b · exp(-(1 - iter/iter_max)²))`, clamped to `[1, b]`.
///
/// Rounds half away from zero. `iter_max = 0` yields `b`.
pub fn rampup_q(iter: usize, iter_max: usize, b: usize) -> usize {
    if iter_max == 0 {
        return b.max(1);
    }
    let frac = 1.0 - iter.min(iter_max) as f64 / iter_max as f64;
    let q = (b as f64 * (-frac * frac).exp()).round() as usize;
    q.clamp(1, b.max(1))
}

/// Binary selection over one unlabeled batch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FilterMask {
    pub mask: Vec<bool>,
    /// Batch positions sorted by descending consistency value.
    pub order: Vec<usize>,
    pub q: usize,
}

impl FilterMask {
    pub fn all(b: usize) -> Self {
        Self {
            mask: vec![true; b],
            order: (0..b).collect(),
            q: b,
        }
    }

    pub fn selected(&self) -> impl Iterator<Item = usize> + '_ {
        self.mask.iter().enumerate().filter(|(_, &m)| m).map(|(i, _)| i)
    }
}

/// Keeps the `q` largest consistency values; ties go to the smaller batch
/// position.
pub fn build_filter(cons: &[f64], q: usize) -> FilterMask {
    let b = cons.len();
    let q = q.min(b);
    let mut order: Vec<usize> = (0..b).collect();
    // adding 0.0 folds -0.0 into 0.0 so the two count as a tie
    order.sort_by(|&i, &j| (cons[j] + 0.0).total_cmp(&(cons[i] + 0.0)).then(i.cmp(&j)));
    let mut mask = vec![false; b];
    for &i in &order[..q] {
        mask[i] = true;
    }
    FilterMask { mask, order, q }
}

/// Squared-error consistency summed over classes and over the selected
/// samples. Rows of `student` and `teacher` are per-sample probability
/// vectors.
pub fn consistency_loss(student: &[Tensor], teacher: &[Tensor], mask: &FilterMask) -> f64 {
    student
        .iter()
        .zip(teacher)
        .zip(&mask.mask)
        .filter(|(_, &keep)| keep)
        .map(|((s, t), _)| squared_error(s, t))
        .sum()
}

/// The same loss without filtering, every sample counted.
pub fn unfiltered_consistency_loss(student: &[Tensor], teacher: &[Tensor]) -> f64 {
    student.iter().zip(teacher).map(|(s, t)| squared_error(s, t)).sum()
}

fn squared_error(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `teacher ← alpha · teacher + (1 − alpha) · student`, scalar by scalar.
pub fn ema_update(teacher: &mut BaseNetParams, student: &BaseNetParams, alpha: f64) -> ModelResult<()> {
    teacher.check_same_shape(student)?;
    for (e, b) in teacher.tensors_mut().iter_mut().zip(student.tensors()) {
        for (e, &b) in e.data_mut().iter_mut().zip(b.data()) {
            *e = alpha * *e + (1.0 - alpha) * b;
        }
    }
    Ok(())
}
