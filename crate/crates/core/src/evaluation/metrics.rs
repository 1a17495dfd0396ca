use super::{EvalError, Result};

/// `counts[i * k + j]` holds samples of true class `i + 1` predicted as
/// class `j + 1`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn from_counts(k: usize, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != k * k {
            return Err(EvalError::Input(format!(
                "{} counts cannot form a {k}x{k} matrix",
                counts.len()
            )));
        }
        Ok(Self { k, counts })
    }

    pub fn classes(&self) -> usize {
        self.k
    }

    /// Count for 1-based true class `truth` and predicted class `pred`.
    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[(truth - 1) * self.k + pred - 1]
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    fn row_sum(&self, i: usize) -> u64 {
        self.counts[i * self.k..(i + 1) * self.k].iter().sum()
    }

    fn col_sum(&self, j: usize) -> u64 {
        (0..self.k).map(|i| self.counts[i * self.k + j]).sum()
    }
}

/// Tallies predictions against ground truth; both use class ids `1..=k`.
pub fn confusion(predictions: &[u32], truths: &[u32], k: usize) -> Result<ConfusionMatrix> {
    if predictions.len() != truths.len() {
        return Err(EvalError::Input(format!(
            "{} predictions for {} ground-truth labels",
            predictions.len(),
            truths.len()
        )));
    }
    let mut counts = vec![0u64; k * k];
    for (i, (&p, &t)) in predictions.iter().zip(truths).enumerate() {
        for (what, v) in [("prediction", p), ("label", t)] {
            if v == 0 || v as usize > k {
                return Err(EvalError::Input(format!("{what} {v} at position {i} outside 1..={k}")));
            }
        }
        counts[(t as usize - 1) * k + p as usize - 1] += 1;
    }
    Ok(ConfusionMatrix { k, counts })
}

/// Accuracy figures as fractions in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub overall_accuracy: f64,
    pub kappa: f64,
    pub average_accuracy: f64,
    /// Producer accuracy of class `c + 1` at index `c`.
    pub per_class: Vec<f64>,
    /// Classes with no test samples; they count as 0 in the average.
    pub empty_classes: Vec<usize>,
}

pub fn metrics(cm: &ConfusionMatrix) -> Result<MetricsReport> {
    let total = cm.total();
    if total == 0 {
        return Err(EvalError::Input("confusion matrix is empty".into()));
    }
    let k = cm.k;
    let n = total as f64;
    let trace: u64 = (0..k).map(|i| cm.counts[i * k + i]).sum();
    let oa = trace as f64 / n;

    let mut empty_classes = Vec::new();
    let per_class: Vec<f64> = (0..k)
        .map(|i| {
            let row = cm.row_sum(i);
            if row == 0 {
                empty_classes.push(i + 1);
                0.0
            } else {
                cm.counts[i * k + i] as f64 / row as f64
            }
        })
        .collect();
    for c in &empty_classes {
        log::warn!("class {c} has no test samples; its accuracy counts as 0");
    }
    let aa = per_class.iter().sum::<f64>() / k as f64;

    // integer marginal products keep p_e exact for moderate totals
    let chance: u128 = (0..k).map(|i| cm.row_sum(i) as u128 * cm.col_sum(i) as u128).sum();
    let pe = chance as f64 / (total as f64 * total as f64);
    let kappa = if pe == 1.0 { 1.0 } else { (oa - pe) / (1.0 - pe) };

    Ok(MetricsReport {
        overall_accuracy: oa,
        kappa,
        average_accuracy: aa,
        per_class,
        empty_classes,
    })
}
