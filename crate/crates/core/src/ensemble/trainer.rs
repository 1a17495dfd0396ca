use std::fmt::Write as _;
use std::io::Write;

use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::{
    adam_step, build_filter, ema_update, ensemble_mean_prediction, AdamState, FilterContext,
    FilterMask, PolicyRegistry, Result, SelectionPolicy, TrainConfig, TrainError,
};
use crate::basenet::{
    forward, init_params, param_gradients, predict_probs, supervised_logit_grad, supervised_loss,
    Arch, BaseNetParams,
};
use crate::data::{augment, Sample};
use crate::rng::{stream, GaussianStream, Purpose};
use crate::tensor::{softmax_backward, Tensor};

use super::consistency_value;

/// Samples per gradient work unit. Units are reduced in a fixed order, so
/// the summed gradient does not depend on the number of worker threads.
const GRAD_CHUNK: usize = 8;

/// Student and teacher parameters with the optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleState {
    pub student: BaseNetParams,
    pub teacher: BaseNetParams,
    pub adam: AdamState,
    /// Completed iterations.
    pub iteration: usize,
}

impl EnsembleState {
    /// Student drawn from `seed`; the teacher starts as a copy.
    pub fn init(seed: u64, arch: Arch) -> Result<Self> {
        let student = init_params(seed, arch)?;
        Ok(Self {
            teacher: student.clone(),
            adam: AdamState::new(&student),
            student,
            iteration: 0,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub epoch: usize,
    pub loss_cls: f64,
    pub loss_con: f64,
    pub q: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub oa_student: f64,
    pub oa_teacher: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub iterations_per_epoch: usize,
    pub iterations: Vec<IterationRecord>,
    /// Filled only when an evaluator was supplied.
    pub epochs: Vec<EpochRecord>,
}

impl TrainHistory {
    /// Comma-separated export, one row per iteration. Epoch accuracies
    /// appear on the last iteration row of their epoch.
    pub fn to_csv(&self) -> String {
        let with_oa = !self.epochs.is_empty();
        let mut out = String::from("iteration,L_cls,L_con,q,epoch");
        if with_oa {
            out.push_str(",OA_student,OA_teacher");
        }
        out.push('\n');
        for r in &self.iterations {
            let _ = write!(out, "{},{},{},{},{}", r.iteration, r.loss_cls, r.loss_con, r.q, r.epoch);
            if with_oa {
                let last_of_epoch = (r.iteration + 1) % self.iterations_per_epoch.max(1) == 0;
                match self.epochs.iter().find(|e| e.epoch == r.epoch) {
                    Some(e) if last_of_epoch => {
                        let _ = write!(out, ",{},{}", e.oa_student, e.oa_teacher);
                    }
                    _ => out.push_str(",,"),
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        out.write_all(self.to_csv().as_bytes())
    }

    /// Mean supervised loss over the iterations of `epoch`.
    pub fn mean_loss_cls(&self, epoch: usize) -> Option<f64> {
        let losses: Vec<f64> = self
            .iterations
            .iter()
            .filter(|r| r.epoch == epoch)
            .map(|r| r.loss_cls)
            .collect();
        (!losses.is_empty()).then(|| losses.iter().sum::<f64>() / losses.len() as f64)
    }
}

/// Test-set accuracy hook called after every epoch.
pub trait EpochEvaluator {
    fn overall_accuracy(&mut self, params: &BaseNetParams) -> f64;
}

impl<F: FnMut(&BaseNetParams) -> f64> EpochEvaluator for F {
    fn overall_accuracy(&mut self, params: &BaseNetParams) -> f64 {
        self(params)
    }
}

struct Schedule {
    epoch: usize,
    labeled: Vec<usize>,
    unlabeled: Vec<usize>,
}

enum WorkItem {
    Labeled { position: usize, index: usize },
    Unlabeled { position: usize, index: usize },
}

struct Partial {
    grads: BaseNetParams,
    loss_cls: f64,
    loss_con: f64,
}

/// Runs the optimization loop one iteration at a time.
pub struct Trainer<'d> {
    config: TrainConfig,
    policy: Box<dyn SelectionPolicy>,
    labeled: &'d [Sample],
    unlabeled: &'d [Sample],
    iterations_per_epoch: usize,
    state: EnsembleState,
    history: TrainHistory,
    schedule: Option<Schedule>,
}

impl<'d> Trainer<'d> {
    pub fn new(
        config: &TrainConfig,
        arch: Arch,
        labeled: &'d [Sample],
        unlabeled: &'d [Sample],
        policy: Box<dyn SelectionPolicy>,
    ) -> Result<Self> {
        config.validate()?;
        if labeled.is_empty() {
            return Err(TrainError::Config("labeled set is empty".into()));
        }
        if let Some(bad) = labeled.iter().find(|s| !matches!(s.label, Some(l) if l >= 1 && l as usize <= arch.classes)) {
            return Err(TrainError::Config(format!(
                "labeled sample at ({}, {}) has label {:?}, expected 1..={}",
                bad.row, bad.col, bad.label, arch.classes
            )));
        }
        let iterations_per_epoch = config.steps_per_epoch.unwrap_or_else(|| {
            if unlabeled.is_empty() {
                labeled.len().div_ceil(config.labeled_batch)
            } else {
                unlabeled.len().div_ceil(config.unlabeled_batch)
            }
        });
        let state = EnsembleState::init(config.seed, arch)?;
        Ok(Self {
            config: config.clone(),
            policy,
            labeled,
            unlabeled,
            iterations_per_epoch,
            state,
            history: TrainHistory {
                iterations_per_epoch,
                ..Default::default()
            },
            schedule: None,
        })
    }

    pub fn state(&self) -> &EnsembleState {
        &self.state
    }

    pub fn history(&self) -> &TrainHistory {
        &self.history
    }

    pub fn iterations_per_epoch(&self) -> usize {
        self.iterations_per_epoch
    }

    pub fn total_iterations(&self) -> usize {
        self.config.epochs * self.iterations_per_epoch
    }

    fn schedule_for(&mut self, epoch: usize) -> &Schedule {
        if self.schedule.as_ref().map(|s| s.epoch) != Some(epoch) {
            let seed = self.config.seed;
            let mut labeled: Vec<usize> = (0..self.labeled.len()).collect();
            labeled.shuffle(&mut stream(seed, Purpose::Shuffle, &[epoch as u64, 0]));
            let mut unlabeled: Vec<usize> = (0..self.unlabeled.len()).collect();
            unlabeled.shuffle(&mut stream(seed, Purpose::Shuffle, &[epoch as u64, 1]));
            self.schedule = Some(Schedule {
                epoch,
                labeled,
                unlabeled,
            });
        }
        self.schedule.as_ref().unwrap()
    }

    /// Pool indices of the labeled and unlabeled mini-batches for the
    /// current iteration. Both pools wrap around when exhausted.
    pub fn current_batches(&mut self) -> (Vec<usize>, Vec<usize>) {
        let it = self.state.iteration;
        let per_epoch = self.iterations_per_epoch.max(1);
        let (epoch, step) = (it / per_epoch, it % per_epoch);
        let (bl, bu) = (self.config.labeled_batch, self.config.unlabeled_batch);
        let sched = self.schedule_for(epoch);
        let take = |order: &[usize], b: usize| -> Vec<usize> {
            if order.is_empty() {
                return Vec::new();
            }
            let b = b.min(order.len());
            (0..b).map(|j| order[(step * b + j) % order.len()]).collect()
        };
        (take(&sched.labeled, bl), take(&sched.unlabeled, bu))
    }

    /// Backpropagation and one Adam step on the student. The teacher is
    /// not touched.
    pub fn student_step(&mut self) -> Result<IterationRecord> {
        let it = self.state.iteration;
        let epoch = it / self.iterations_per_epoch.max(1);
        let (lb, ub) = self.current_batches();
        let cfg = &self.config;
        let seed = cfg.seed;

        let teacher = &self.state.teacher;
        let unlabeled = self.unlabeled;
        let predictions = ub
            .par_iter()
            .enumerate()
            .map(|(pos, &idx)| {
                ensemble_mean_prediction(teacher, &unlabeled[idx], cfg.copies, cfg.noise_std, |t| {
                    GaussianStream::new(seed, Purpose::TeacherNoise, &[it as u64, pos as u64, t as u64])
                })
            })
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let cons: Vec<f64> = predictions.iter().map(|p| consistency_value(&p.copies)).collect();

        let (q, mask) = if ub.is_empty() {
            (0, FilterMask::all(0))
        } else {
            let ctx = FilterContext {
                iteration: it,
                total_iterations: self.total_iterations(),
                batch_size: ub.len(),
            };
            let q = self.policy.quota(&ctx).clamp(1, ub.len());
            (q, build_filter(&cons, q))
        };

        let work: Vec<WorkItem> = lb
            .iter()
            .enumerate()
            .map(|(position, &index)| WorkItem::Labeled { position, index })
            .chain(mask.selected().map(|position| WorkItem::Unlabeled {
                position,
                index: ub[position],
            }))
            .collect();

        let student = &self.state.student;
        let labeled = self.labeled;
        let n_l = lb.len() as f64;
        let q_f = q.max(1) as f64;
        let item = |w: &WorkItem| -> Result<Partial> {
            match *w {
                WorkItem::Labeled { position, index } => {
                    let sample = &labeled[index];
                    let label = sample.label.expect("checked in Trainer::new");
                    let mut noise = GaussianStream::new(seed, Purpose::LabeledNoise, &[it as u64, position as u64]);
                    let aug = augment(sample, cfg.noise_std, &mut noise);
                    let mut trace = forward(student, &aug.spectral, &aug.patch)?;
                    let loss = supervised_loss(&trace.probs, label) / n_l;
                    let mut seed_grad = supervised_logit_grad(&trace.probs, label);
                    seed_grad.scale(1.0 / n_l);
                    Ok(Partial {
                        grads: param_gradients(&mut trace, &seed_grad)?,
                        loss_cls: loss,
                        loss_con: 0.0,
                    })
                }
                WorkItem::Unlabeled { position, index } => {
                    let mut noise = GaussianStream::new(seed, Purpose::StudentNoise, &[it as u64, position as u64]);
                    let aug = augment(&unlabeled[index], cfg.noise_std, &mut noise);
                    let mut trace = forward(student, &aug.spectral, &aug.patch)?;
                    let target = &predictions[position].mean;
                    let residual: Vec<f64> = trace
                        .probs
                        .data()
                        .iter()
                        .zip(target.data())
                        .map(|(p, t)| p - t)
                        .collect();
                    let loss = residual.iter().map(|r| r * r).sum::<f64>() / q_f;
                    let grad_probs = Tensor::vector(residual.iter().map(|r| 2.0 * r / q_f).collect());
                    let seed_grad = softmax_backward(&trace.probs, &grad_probs);
                    Ok(Partial {
                        grads: param_gradients(&mut trace, &seed_grad)?,
                        loss_cls: 0.0,
                        loss_con: loss,
                    })
                }
            }
        };
        let arch = *student.arch();
        let partials = work
            .par_chunks(GRAD_CHUNK)
            .map(|chunk| {
                let mut acc = Partial {
                    grads: BaseNetParams::zeros(arch),
                    loss_cls: 0.0,
                    loss_con: 0.0,
                };
                for w in chunk {
                    let p = item(w)?;
                    acc.grads.add_scaled(&p.grads, 1.0)?;
                    acc.loss_cls += p.loss_cls;
                    acc.loss_con += p.loss_con;
                }
                Ok(acc)
            })
            .collect::<Result<Vec<Partial>>>()?;

        let mut grads = BaseNetParams::zeros(arch);
        let (mut loss_cls, mut loss_con) = (0.0, 0.0);
        for p in &partials {
            grads.add_scaled(&p.grads, 1.0)?;
            loss_cls += p.loss_cls;
            loss_con += p.loss_con;
        }

        let diverged = || TrainError::Diverged {
            iteration: it,
            loss_cls,
            loss_con,
            labeled_batch: lb.clone(),
            unlabeled_batch: ub.clone(),
        };
        if !(loss_cls.is_finite() && loss_con.is_finite() && grads.all_finite()) {
            return Err(diverged());
        }
        adam_step(&mut self.state.student, &grads, &mut self.state.adam, self.config.learning_rate)?;
        if !self.state.student.all_finite() {
            return Err(diverged());
        }
        Ok(IterationRecord {
            iteration: it,
            epoch,
            loss_cls,
            loss_con,
            q,
        })
    }

    /// One full iteration: student update, then the teacher's moving average.
    pub fn step(&mut self) -> Result<IterationRecord> {
        let record = self.student_step()?;
        ema_update(&mut self.state.teacher, &self.state.student, self.config.alpha)?;
        self.state.iteration += 1;
        self.history.iterations.push(record);
        Ok(record)
    }

    /// Trains for the configured number of epochs.
    pub fn run(mut self, mut evaluator: Option<&mut dyn EpochEvaluator>) -> Result<(EnsembleState, TrainHistory)> {
        for epoch in 0..self.config.epochs {
            for _ in 0..self.iterations_per_epoch {
                self.step()?;
            }
            if let Some(eval) = evaluator.as_deref_mut() {
                let record = EpochRecord {
                    epoch,
                    oa_student: eval.overall_accuracy(&self.state.student),
                    oa_teacher: eval.overall_accuracy(&self.state.teacher),
                };
                log::info!(
                    "epoch {epoch}: OA student {:.4}, teacher {:.4}",
                    record.oa_student,
                    record.oa_teacher
                );
                self.history.epochs.push(record);
            }
        }
        Ok((self.state, self.history))
    }
}

/// Trains with the policy named by `config`.
pub fn train(
    config: &TrainConfig,
    arch: Arch,
    labeled: &[Sample],
    unlabeled: &[Sample],
    evaluator: Option<&mut dyn EpochEvaluator>,
) -> Result<(EnsembleState, TrainHistory)> {
    let policy = PolicyRegistry::with_builtins().for_config(config)?;
    Trainer::new(config, arch, labeled, unlabeled, policy)?.run(evaluator)
}

/// Class id (1-based) of the un-augmented forward; ties go to the smaller id.
pub fn predict_one(params: &BaseNetParams, sample: &Sample) -> crate::basenet::Result<u32> {
    Ok(predict_probs(params, &sample.spectral, &sample.patch)?.argmax() as u32 + 1)
}

pub fn predict(params: &BaseNetParams, samples: &[Sample]) -> crate::basenet::Result<Vec<u32>> {
    samples.par_iter().map(|s| predict_one(params, s)).collect()
}
