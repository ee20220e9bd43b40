//! Trading table count for code length at a fixed projection width `h·tau`.

use alloc::vec::Vec;

use super::distill::{teacher_distill, Student, TrainConfig};
use crate::baselines::FfnParams;
use crate::error::Result;
use crate::flops::FlopReport;
use crate::proj::ProjKind;

/// Default grid, `h·tau = 256`.
pub const DEFAULT_TAU_GRID: [(usize, usize); 3] = [(128, 2), (64, 4), (32, 8)];

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub h: usize,
    pub tau: usize,
    /// Held-out loss after training, averaged over seeds.
    pub mse: f64,
    pub flops: FlopReport,
}

/// Trains one student per `(h, tau)` cell and seed; each seed offsets
/// `cfg.seed`.
pub fn tau_tradeoff_sweep(
    teacher: &FfnParams,
    grid: &[(usize, usize)],
    kind: ProjKind,
    cfg: &TrainConfig,
    seeds: usize,
) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::with_capacity(grid.len());
    for &(h, tau) in grid {
        let student = Student::lookup(teacher, h, tau, kind);
        let mut total = 0.0;
        for s in 0..seeds.max(1) {
            let c = TrainConfig {
                seed: cfg.seed.wrapping_add(s as u64),
                ..*cfg
            };
            total += teacher_distill(teacher, &student, &c)?.final_eval;
        }
        rows.push(SweepRow {
            h,
            tau,
            mse: total / seeds.max(1) as f64,
            flops: student.flops()?,
        });
    }
    Ok(rows)
}
