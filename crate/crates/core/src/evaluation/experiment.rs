use std::fmt::Write as _;
use std::io::Write;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::{confusion, metrics, ConfusionMatrix, EvalError, MetricsReport, Result};
use crate::basenet::BaseNetParams;
use crate::data::{
    extract_sample, normalize, pca_reduce, sample_unlabeled, split_dataset, HsiCube, LabelMap,
    ReducedCube, Sample, SplitSpec, UnlabeledPool,
};
use crate::ensemble::{predict, train, EnsembleState, EpochEvaluator, TrainConfig, TrainHistory};
use crate::rng::{stream, Purpose};

/// Pixels extracted at once during prediction, bounding memory on large scenes.
const PREDICT_CHUNK: usize = 1024;

/// Normalized cube with its PCA projection, ready for sample extraction.
pub struct PreparedScene {
    cube: HsiCube,
    labels: LabelMap,
    reduced: ReducedCube,
}

impl PreparedScene {
    pub fn new(raw: &HsiCube, labels: LabelMap, components: usize) -> Result<Self> {
        if !labels.matches(raw) {
            return Err(EvalError::Input(format!(
                "label map is {}x{} but the cube is {}x{}",
                labels.rows(),
                labels.cols(),
                raw.rows(),
                raw.cols()
            )));
        }
        let cube = normalize(raw);
        let reduced = pca_reduce(&cube, components)?;
        Ok(Self { cube, labels, reduced })
    }

    pub fn cube(&self) -> &HsiCube {
        &self.cube
    }

    pub fn labels(&self) -> &LabelMap {
        &self.labels
    }

    pub fn reduced(&self) -> &ReducedCube {
        &self.reduced
    }

    pub fn classes(&self) -> usize {
        self.labels.num_classes()
    }

    /// Samples for raster-order pixel indices, labeled from the reference map
    /// when `with_labels` is set.
    pub fn samples(&self, pixels: &[usize], window: usize, with_labels: bool) -> Result<Vec<Sample>> {
        let cols = self.cube.cols();
        pixels
            .par_iter()
            .map(|&i| {
                let (r, c) = (i / cols, i % cols);
                let label = with_labels.then(|| self.labels.get(r, c));
                Ok(extract_sample(&self.cube, &self.reduced, r, c, window, label)?)
            })
            .collect()
    }

    /// Predicted class ids for the given pixels.
    pub fn predict_pixels(&self, params: &BaseNetParams, pixels: &[usize], window: usize) -> Result<Vec<u32>> {
        let mut out = Vec::with_capacity(pixels.len());
        for chunk in pixels.chunks(PREDICT_CHUNK) {
            let samples = self.samples(chunk, window, false)?;
            out.extend(predict(params, &samples)?);
        }
        Ok(out)
    }

    /// Predictions for every pixel in raster order.
    pub fn predict_all(&self, params: &BaseNetParams, window: usize) -> Result<Vec<u32>> {
        let all: Vec<usize> = (0..self.cube.pixels()).collect();
        self.predict_pixels(params, &all, window)
    }

    /// Confusion matrix of `params` over the given reference pixels.
    pub fn evaluate(&self, params: &BaseNetParams, pixels: &[usize], window: usize) -> Result<ConfusionMatrix> {
        let pred = self.predict_pixels(params, pixels, window)?;
        let truth: Vec<u32> = pixels.iter().map(|&i| self.labels.labels()[i]).collect();
        confusion(&pred, &truth, self.classes())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExperimentOptions {
    /// Record student and teacher test accuracy after every epoch.
    pub track_epochs: bool,
    /// Cap on the test pixels used for the per-epoch accuracies; a fixed
    /// seed-derived subset is drawn when the test set is larger.
    pub epoch_eval_limit: Option<usize>,
}

pub struct ExperimentOutcome {
    pub state: EnsembleState,
    pub history: TrainHistory,
    pub split: SplitSpec,
    pub unlabeled: UnlabeledPool,
    pub confusion: ConfusionMatrix,
    /// Teacher accuracy on the test pixels.
    pub report: MetricsReport,
    pub runtime: Duration,
}

struct SubsetEvaluator<'a> {
    scene: &'a PreparedScene,
    pixels: Vec<usize>,
    window: usize,
}

impl EpochEvaluator for SubsetEvaluator<'_> {
    fn overall_accuracy(&mut self, params: &BaseNetParams) -> f64 {
        match self.scene.evaluate(params, &self.pixels, self.window).and_then(|cm| metrics(&cm)) {
            Ok(m) => m.overall_accuracy,
            Err(e) => {
                log::warn!("epoch evaluation failed: {e}");
                f64::NAN
            }
        }
    }
}

/// Split, unlabeled draw, training and teacher evaluation for one seed
/// (`config.seed`).
pub fn run_experiment(scene: &PreparedScene, config: &TrainConfig, options: &ExperimentOptions) -> Result<ExperimentOutcome> {
    let start = Instant::now();
    if scene.reduced.components() != config.components {
        return Err(EvalError::Input(format!(
            "scene was reduced to {} components but the config asks for {}",
            scene.reduced.components(),
            config.components
        )));
    }
    let arch = config.arch(scene.cube.bands(), scene.classes())?;
    let split = split_dataset(&scene.labels, config.n_per_class, config.seed)?;
    let pool = sample_unlabeled(&scene.labels, config.n_unlabeled, config.seed);
    let labeled_pixels: Vec<usize> = split.labeled.iter().flatten().copied().collect();
    let labeled = scene.samples(&labeled_pixels, config.window, true)?;
    let unlabeled = scene.samples(&pool.indices, config.window, false)?;

    let mut tracker = options.track_epochs.then(|| {
        let mut pixels = split.test.clone();
        if let Some(limit) = options.epoch_eval_limit {
            if pixels.len() > limit {
                pixels.shuffle(&mut stream(config.seed, Purpose::Eval, &[]));
                pixels.truncate(limit);
                pixels.sort_unstable();
            }
        }
        SubsetEvaluator {
            scene,
            pixels,
            window: config.window,
        }
    });
    let (state, history) = train(
        config,
        arch,
        &labeled,
        &unlabeled,
        tracker.as_mut().map(|t| t as &mut dyn EpochEvaluator),
    )?;

    let cm = scene.evaluate(&state.teacher, &split.test, config.window)?;
    let report = metrics(&cm)?;
    Ok(ExperimentOutcome {
        state,
        history,
        split,
        unlabeled: pool,
        confusion: cm,
        report,
        runtime: start.elapsed(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RepetitionResult {
    pub repetition: usize,
    /// Training seed; `None` for evaluations of a stored model.
    pub seed: Option<u64>,
    pub report: MetricsReport,
    pub runtime: Duration,
}

/// Per-metric statistics across repetitions.
#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub overall_accuracy: f64,
    pub kappa: f64,
    pub average_accuracy: f64,
    pub per_class: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RepeatedReport {
    pub runs: Vec<RepetitionResult>,
    pub mean: Summary,
    /// Sample standard deviation; 0 for a single run.
    pub std: Summary,
}

impl RepeatedReport {
    pub fn from_runs(mut runs: Vec<RepetitionResult>) -> Result<Self> {
        if runs.is_empty() {
            return Err(EvalError::Input("no repetitions to summarize".into()));
        }
        runs.sort_by_key(|r| r.repetition);
        let k = runs[0].report.per_class.len();
        let column = |f: &dyn Fn(&MetricsReport) -> f64| -> (f64, f64) {
            let v: Vec<f64> = runs.iter().map(|r| f(&r.report)).collect();
            mean_std(&v)
        };
        let (oa, oa_s) = column(&|m| m.overall_accuracy);
        let (ka, ka_s) = column(&|m| m.kappa);
        let (aa, aa_s) = column(&|m| m.average_accuracy);
        let (pc, pc_s): (Vec<f64>, Vec<f64>) = (0..k).map(|c| column(&|m| m.per_class[c])).unzip();
        Ok(Self {
            runs,
            mean: Summary {
                overall_accuracy: oa,
                kappa: ka,
                average_accuracy: aa,
                per_class: pc,
            },
            std: Summary {
                overall_accuracy: oa_s,
                kappa: ka_s,
                average_accuracy: aa_s,
                per_class: pc_s,
            },
        })
    }

    /// One row per repetition, then `mean` and `std` rows. Runtimes are
    /// left out so identical runs give identical files.
    pub fn to_csv(&self) -> String {
        let k = self.mean.per_class.len();
        let mut out = String::from("run,seed,OA,kappa,AA");
        for c in 1..=k {
            let _ = write!(out, ",PA_{c}");
        }
        out.push('\n');
        let row = |out: &mut String, name: &str, seed: &str, oa: f64, ka: f64, aa: f64, pc: &[f64]| {
            let _ = write!(out, "{name},{seed},{oa},{ka},{aa}");
            for v in pc {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        };
        for r in &self.runs {
            let m = &r.report;
            row(
                &mut out,
                &r.repetition.to_string(),
                &r.seed.map(|s| s.to_string()).unwrap_or_default(),
                m.overall_accuracy,
                m.kappa,
                m.average_accuracy,
                &m.per_class,
            );
        }
        for (name, s) in [("mean", &self.mean), ("std", &self.std)] {
            row(&mut out, name, "", s.overall_accuracy, s.kappa, s.average_accuracy, &s.per_class);
        }
        out
    }

    pub fn write_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        out.write_all(self.to_csv().as_bytes())
    }
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Runs `repetitions` experiments with seeds `base_seed + r`, each with a
/// fresh split and unlabeled pool.
pub fn repeat_experiment(
    scene: &PreparedScene,
    config: &TrainConfig,
    options: &ExperimentOptions,
    repetitions: usize,
    base_seed: u64,
) -> Result<RepeatedReport> {
    repeat_experiment_with(scene, config, options, repetitions, base_seed, |_, _| Ok(()))
}

/// [`repeat_experiment`] with a callback that sees every finished run.
pub fn repeat_experiment_with(
    scene: &PreparedScene,
    config: &TrainConfig,
    options: &ExperimentOptions,
    repetitions: usize,
    base_seed: u64,
    mut on_run: impl FnMut(usize, &ExperimentOutcome) -> Result<()>,
) -> Result<RepeatedReport> {
    if repetitions == 0 {
        return Err(EvalError::Input("repetitions must be at least 1".into()));
    }
    let mut runs = Vec::with_capacity(repetitions);
    for r in 0..repetitions {
        let seed = base_seed.wrapping_add(r as u64);
        let cfg = TrainConfig { seed, ..config.clone() };
        let outcome = run_experiment(scene, &cfg, options)
            .and_then(|o| on_run(r, &o).map(|_| o))
            .map_err(|e| EvalError::Repetition {
                index: r,
                source: Box::new(e),
            })?;
        runs.push(RepetitionResult {
            repetition: r,
            seed: Some(seed),
            report: outcome.report,
            runtime: outcome.runtime,
        });
    }
    RepeatedReport::from_runs(runs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SyntheticConfig};

    fn report(oa: f64) -> MetricsReport {
        MetricsReport {
            overall_accuracy: oa,
            kappa: oa / 2.0,
            average_accuracy: oa,
            per_class: vec![oa, 1.0 - oa],
            empty_classes: vec![],
        }
    }

    fn run(repetition: usize, oa: f64) -> RepetitionResult {
        RepetitionResult {
            repetition,
            seed: Some(repetition as u64),
            report: report(oa),
            runtime: Duration::ZERO,
        }
    }

    #[test]
    fn single_run_has_zero_std() {
        let r = RepeatedReport::from_runs(vec![run(0, 0.8)]).unwrap();
        assert_eq!(r.std.overall_accuracy, 0.0);
        assert_eq!(r.mean.overall_accuracy, 0.8);
    }

    #[test]
    fn summary_statistics() {
        let oas = [0.7, 0.9, 0.8, 0.6];
        let r = RepeatedReport::from_runs(oas.iter().enumerate().rev().map(|(i, &o)| run(i, o)).collect()).unwrap();
        assert_eq!(r.runs.iter().map(|x| x.repetition).collect::<Vec<_>>(), vec![0, 1, 2, 3]);
        let mean = oas.iter().sum::<f64>() / 4.0;
        assert!((r.mean.overall_accuracy - mean).abs() < 1e-12);
        // sample std of 0.6..0.9 in steps of 0.1
        assert!((r.std.overall_accuracy - (0.05f64 / 3.0).sqrt()).abs() < 1e-12);
        let same = RepeatedReport::from_runs(vec![run(0, 0.5), run(1, 0.5)]).unwrap();
        assert_eq!(same.std.kappa, 0.0);
    }

    #[test]
    fn csv_layout() {
        let r = RepeatedReport::from_runs(vec![run(0, 0.5), run(1, 0.75)]).unwrap();
        let csv = r.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "run,seed,OA,kappa,AA,PA_1,PA_2");
        assert_eq!(lines[1], "0,0,0.5,0.25,0.5,0.5,0.5");
        assert!(lines[3].starts_with("mean,,0.625,"));
        assert!(lines[4].starts_with("std,,"));
        assert_eq!(lines.len(), 5);
    }

    #[test]
    fn tiny_experiment_is_reproducible() {
        let syn = generate_synthetic(&SyntheticConfig {
            rows: 20,
            cols: 20,
            bands: 6,
            classes: 3,
            seed: 2,
            ..Default::default()
        })
        .unwrap();
        let cfg = TrainConfig {
            window: 4,
            components: 2,
            n_per_class: 3,
            n_unlabeled: 12,
            labeled_batch: 4,
            unlabeled_batch: 4,
            epochs: 1,
            copies: 2,
            spectral_width: 4,
            conv_channels: 2,
            hidden: 6,
            ..Default::default()
        };
        let scene = PreparedScene::new(&syn.cube, syn.labels.clone(), 2).unwrap();
        let opts = ExperimentOptions {
            track_epochs: true,
            epoch_eval_limit: Some(50),
        };
        let a = repeat_experiment(&scene, &cfg, &opts, 2, 7).unwrap();
        let b = repeat_experiment(&scene, &cfg, &opts, 2, 7).unwrap();
        assert_eq!(a.to_csv(), b.to_csv());
        assert_eq!(a.runs[1].seed, Some(8));

        let out = run_experiment(&scene, &cfg, &opts).unwrap();
        assert_eq!(out.history.epochs.len(), 1);
        assert_eq!(out.confusion.total() as usize, out.split.test.len());
        assert_eq!(out.split.test.len() + 9, 400);

        let wrong = TrainConfig { components: 3, ..cfg };
        assert!(run_experiment(&scene, &wrong, &opts).is_err());
    }
}
