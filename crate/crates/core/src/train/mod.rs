//! Optimizers, gradient checks and desk-scale training runs.

mod distill;
mod gradcheck;
mod optim;
mod sweep;

pub use distill::{
    default_teacher, teacher_distill, train_with, Student, Task, TrainConfig, TrainReport,
};
pub use gradcheck::{
    grad_check, rel_err, GradCheckModel, GradCheckReport, GroupCheck, BOUNDARY_MARGIN, FD_STEP,
    REL_FLOOR,
};
pub use optim::{clip_grad_norm, Adam, Optimizer, OptimizerKind, Sgd};
pub use sweep::{tau_tradeoff_sweep, SweepRow, DEFAULT_TAU_GRID};
