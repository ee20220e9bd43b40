//! Desk-scale training: a LookupFFN (or dense FFN) student fitted to a frozen
//! random teacher FFN on Gaussian inputs.

use alloc::boxed::Box;
use alloc::vec::Vec;

use num_traits::Float;

use super::optim::{clip_grad_norm, Optimizer, OptimizerKind};
use crate::baselines::{Activation, FfnParams};
use crate::error::{Error, Result};
use crate::flops::{lookup_flops, vanilla_flops, FlopReport};
use crate::lookup::{LookupConfig, LookupFfn, Variant};
use crate::proj::ProjKind;
use crate::rng::{gaussian_matrix, seeded, SeededRng};
use crate::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    /// Targets are the teacher's outputs; loss is mean squared error.
    TeacherDistill,
    /// Targets are a fixed random linear map of the input; mean squared error.
    SyntheticRegression,
    /// Labels are the argmax of the teacher's outputs; softmax cross-entropy.
    ToyClassification,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::TeacherDistill => "teacher-distill",
            Task::SyntheticRegression => "synthetic-regression",
            Task::ToyClassification => "toy-classification",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub task: Task,
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    /// Joint gradient-norm clip over all parameter groups.
    pub clip_norm: f64,
    /// Held-out rows used for the reported initial and final loss.
    pub eval_rows: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            task: Task::TeacherDistill,
            steps: 2000,
            batch: 64,
            lr: 3e-4,
            optimizer: OptimizerKind::Adam,
            seed: 0,
            clip_norm: 1.0,
            eval_rows: 1024,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.batch == 0 || self.eval_rows == 0 {
            return Err(Error::Config("steps, batch and eval_rows must be >= 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(alloc::format!("learning rate {} must be > 0", self.lr)));
        }
        Ok(())
    }
}

/// The teacher used by the distillation tasks: `d = 64`, `t = 256`, GELU.
pub fn default_teacher(seed: u64) -> FfnParams {
    FfnParams::init(64, 256, 64, Activation::Gelu, seed)
}

#[derive(Debug, Clone, PartialEq)]
pub enum Student {
    Lookup { cfg: LookupConfig, kind: ProjKind },
    Dense(FfnParams),
}

impl Student {
    /// Scaled top-1 lookup layer shaped like the teacher.
    pub fn lookup(teacher: &FfnParams, h: usize, tau: usize, kind: ProjKind) -> Self {
        let cfg = LookupConfig::new(teacher.d_in(), teacher.d_out(), h, tau).with_variant(Variant::Scaled);
        Student::Lookup { cfg, kind }
    }

    pub fn flops(&self) -> Result<FlopReport> {
        Ok(match self {
            Student::Lookup { cfg, kind } => lookup_flops(cfg, &cfg.projection_spec(*kind)?),
            Student::Dense(p) => vanilla_flops(p.d_in(), p.hidden(), p.d_out()),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Training-batch loss before each update, one entry per step.
    pub losses: Vec<f64>,
    /// Held-out loss before training and after the last step.
    pub initial_eval: f64,
    pub final_eval: f64,
    /// Updates applied to the lookup tables (equals `steps` for lookup students).
    pub table_writes: u64,
    pub student_flops: FlopReport,
    pub teacher_flops: FlopReport,
}

struct Targets<'a> {
    task: Task,
    teacher: &'a FfnParams,
    linear: Matrix,
}

impl Targets<'_> {
    fn make(&self, x: &Matrix) -> Result<Matrix> {
        match self.task {
            Task::TeacherDistill | Task::ToyClassification => Ok(self.teacher.forward(x)?.0),
            Task::SyntheticRegression => x.matmul(&self.linear),
        }
    }

    /// Loss and `dL/dy` for predictions `y` against targets `t`.
    fn loss(&self, y: &Matrix, t: &Matrix) -> (f64, Matrix) {
        let n = y.rows() as f64;
        match self.task {
            Task::TeacherDistill | Task::SyntheticRegression => {
                let scale = 1.0 / (y.data().len() as f64);
                let mut g = y.clone();
                let mut l = 0.0;
                for (gv, tv) in g.data_mut().iter_mut().zip(t.data()) {
                    let d = *gv - tv;
                    l += d * d;
                    *gv = 2.0 * d * scale;
                }
                (l * scale, g)
            }
            Task::ToyClassification => {
                let mut g = y.clone();
                let mut l = 0.0;
                for r in 0..y.rows() {
                    let label = argmax(t.row(r));
                    let row = g.row_mut(r);
                    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
                    let lse = max + sum.ln();
                    l += lse - row[label];
                    for (j, v) in row.iter_mut().enumerate() {
                        let p = (*v - lse).exp();
                        *v = (p - f64::from(u8::from(j == label))) / n;
                    }
                }
                (l / n, g)
            }
        }
    }
}

fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |b, (i, &x)| if x > b.1 { (i, x) } else { b })
        .0
}

enum Model {
    Lookup(LookupFfn),
    Dense(FfnParams),
}

impl Model {
    fn predict(&self, x: &Matrix) -> Result<Matrix> {
        match self {
            Model::Lookup(l) => Ok(l.forward(x)?.0),
            Model::Dense(p) => Ok(p.forward(x)?.0),
        }
    }
}

/// Trains `student` on `cfg.task`; `on_step(step, loss)` is called after
/// each update with the pre-update batch loss.
pub fn train_with(
    teacher: &FfnParams,
    student: &Student,
    cfg: &TrainConfig,
    mut on_step: impl FnMut(usize, f64),
) -> Result<TrainReport> {
    cfg.validate()?;
    let mut data_rng: SeededRng = seeded(cfg.seed.wrapping_mul(0x9e37_79b9).wrapping_add(17));
    let d_in = teacher.d_in();
    let targets = Targets {
        task: cfg.task,
        teacher,
        linear: gaussian_matrix(
            &mut seeded(cfg.seed ^ 0x11ea),
            d_in,
            teacher.d_out(),
            1.0 / (d_in as f64).sqrt(),
        ),
    };
    let mut model = match student {
        Student::Lookup { cfg: lc, kind } => Model::Lookup(LookupFfn::new(*lc, *kind, cfg.seed)?),
        Student::Dense(p) => Model::Dense(p.clone()),
    };
    let eval_x = gaussian_matrix(&mut seeded(cfg.seed ^ 0xe7a1), cfg.eval_rows, d_in, 1.0);
    let eval_t = targets.make(&eval_x)?;
    let initial_eval = targets.loss(&model.predict(&eval_x)?, &eval_t).0;

    let mut opt_a: Box<dyn Optimizer> = cfg.optimizer.build(cfg.lr);
    let mut opt_b: Box<dyn Optimizer> = cfg.optimizer.build(cfg.lr);
    let mut losses = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let x = gaussian_matrix(&mut data_rng, cfg.batch, d_in, 1.0);
        let t = targets.make(&x)?;
        let loss = match &mut model {
            Model::Lookup(layer) => {
                let (y, cache) = layer.forward(&x)?;
                let (loss, gy) = targets.loss(&y, &t);
                let mut g = layer.backward(&gy, &cache)?;
                clip_grad_norm(&mut [g.proj.as_mut_slice(), g.tables.as_mut_slice()], cfg.clip_norm);
                if layer.projection().is_trainable() {
                    opt_a.step(layer.projection_mut().params_mut(), &g.proj);
                }
                layer.tables_mut().apply_gradient(opt_b.as_mut(), &g.tables)?;
                loss
            }
            Model::Dense(p) => {
                let (y, cache) = p.forward(&x)?;
                let (loss, gy) = targets.loss(&y, &t);
                let mut g = p.backward(&gy, &cache)?;
                clip_grad_norm(&mut [g.w.data_mut(), g.v.data_mut()], cfg.clip_norm);
                opt_a.step(p.w.data_mut(), g.w.data());
                opt_b.step(p.v.data_mut(), g.v.data());
                loss
            }
        };
        if !loss.is_finite() {
            return Err(Error::Diverged { step, loss, lr: cfg.lr });
        }
        losses.push(loss);
        on_step(step, loss);
    }
    let final_eval = targets.loss(&model.predict(&eval_x)?, &eval_t).0;
    if !final_eval.is_finite() {
        return Err(Error::Diverged {
            step: cfg.steps,
            loss: final_eval,
            lr: cfg.lr,
        });
    }
    let table_writes = match &model {
        Model::Lookup(l) => l.tables().writes(),
        Model::Dense(_) => 0,
    };
    Ok(TrainReport {
        losses,
        initial_eval,
        final_eval,
        table_writes,
        student_flops: student.flops()?,
        teacher_flops: vanilla_flops(teacher.d_in(), teacher.hidden(), teacher.d_out()),
    })
}

pub fn teacher_distill(teacher: &FfnParams, student: &Student, cfg: &TrainConfig) -> Result<TrainReport> {
    train_with(teacher, student, cfg, |_, _| {})
}
