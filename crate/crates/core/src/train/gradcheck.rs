//! Central finite-difference checks of every hand-written backward pass.
//!
//! Each model is reduced to the scalar `L = Σ y ⊙ C` for a fixed random
//! `C`, so the analytic gradient is the backward pass fed with `grad_y = C`.
//! Entries are compared with `|a − n| / max(|a|, |n|, floor)`.

use alloc::format;
use alloc::vec::Vec;


use crate::baselines::{Activation, FfnParams};
use crate::error::{Error, Result};
use crate::lookup::{HashTables, LookupConfig, LookupFfn};
use crate::proj::{ProjKind, Projection, ProjectionSpec};
use crate::rng::{gaussian_matrix, seeded};
use crate::Matrix;

/// Finite-difference step.
pub const FD_STEP: f64 = 1e-5;
/// Magnitude below which entries are compared on an absolute scale.
pub const REL_FLOOR: f64 = 1e-3;
/// Soft-code magnitude under which a top-1 check point is rejected.
pub const BOUNDARY_MARGIN: f64 = 1e-2;

#[derive(Debug, Clone, PartialEq)]
pub enum GradCheckModel {
    Ffn {
        d_in: usize,
        hidden: usize,
        d_out: usize,
        activation: Activation,
    },
    Projection(ProjectionSpec),
    Lookup { cfg: LookupConfig, kind: ProjKind },
}

impl GradCheckModel {
    pub fn name(&self) -> alloc::string::String {
        match self {
            GradCheckModel::Ffn { activation, .. } => format!("ffn-{}", activation.name()),
            GradCheckModel::Projection(spec) => match spec.kind() {
                ProjKind::Bh { stages, block } => format!("bh{stages}-b{block}"),
                ProjKind::Acdc { depth } => format!("acdc-k{depth}"),
                k => k.name().into(),
            },
            GradCheckModel::Lookup { cfg, .. } => format!(
                "lookup-{}-tau{}-n{}",
                cfg.variant.name(),
                cfg.tau,
                cfg.neighbor_count
            ),
        }
    }
}

/// Result for one parameter group.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupCheck {
    pub name: &'static str,
    pub checked: usize,
    /// Entries skipped because a ±step perturbation changed a selected code.
    pub excluded: usize,
    pub max_rel_err: f64,
    pub worst_index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub model: alloc::string::String,
    pub groups: Vec<GroupCheck>,
    pub threshold: f64,
    /// Whether entries near a selection boundary were skipped.
    pub boundary_excluded: bool,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.groups.iter().map(|g| g.max_rel_err).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_rel_err() < self.threshold
    }

    /// `Err` naming the worst entry when the threshold is exceeded.
    pub fn ensure_passed(&self) -> Result<()> {
        match self
            .groups
            .iter()
            .find(|g| g.max_rel_err >= self.threshold)
        {
            None => Ok(()),
            Some(g) => Err(Error::GradCheck {
                path: format!("{}/{}[{}]", self.model, g.name, g.worst_index),
                rel_err: g.max_rel_err,
                threshold: self.threshold,
            }),
        }
    }
}

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(REL_FLOOR)
}

fn weighted_sum(y: &Matrix, c: &Matrix) -> f64 {
    y.data().iter().zip(c.data()).map(|(a, b)| a * b).sum()
}

/// Compares `analytic` against central differences of `eval`, which returns
/// the loss with entry `i` shifted by `delta`, or `None` if the shifted
/// point must be skipped.
fn check_group(
    name: &'static str,
    analytic: &[f64],
    mut eval: impl FnMut(usize, f64) -> Result<Option<f64>>,
) -> Result<GroupCheck> {
    let mut g = GroupCheck {
        name,
        checked: 0,
        excluded: 0,
        max_rel_err: 0.0,
        worst_index: 0,
    };
    for (i, &a) in analytic.iter().enumerate() {
        let (Some(lp), Some(lm)) = (eval(i, FD_STEP)?, eval(i, -FD_STEP)?) else {
            g.excluded += 1;
            continue;
        };
        let n = (lp - lm) / (2.0 * FD_STEP);
        let e = rel_err(a, n);
        g.checked += 1;
        if e > g.max_rel_err || !e.is_finite() {
            g.max_rel_err = if e.is_finite() { e } else { f64::INFINITY };
            g.worst_index = i;
        }
    }
    Ok(g)
}

fn shifted(m: &Matrix, i: usize, delta: f64) -> Matrix {
    let mut m = m.clone();
    m.data_mut()[i] += delta;
    m
}

fn shifted_vec(v: &[f64], i: usize, delta: f64) -> Vec<f64> {
    let mut v = v.to_vec();
    v[i] += delta;
    v
}

/// Rows of the random check input.
const ROWS: usize = 3;

/// Runs the finite-difference check for one model at a seeded random point.
pub fn grad_check(model: &GradCheckModel, seed: u64, threshold: f64) -> Result<GradCheckReport> {
    let (groups, boundary_excluded) = match model {
        GradCheckModel::Ffn {
            d_in,
            hidden,
            d_out,
            activation,
        } => (check_ffn(*d_in, *hidden, *d_out, *activation, seed)?, false),
        GradCheckModel::Projection(spec) => (check_projection(*spec, seed)?, false),
        GradCheckModel::Lookup { cfg, kind } => check_lookup(*cfg, *kind, seed)?,
    };
    Ok(GradCheckReport {
        model: model.name(),
        groups,
        threshold,
        boundary_excluded,
    })
}

fn check_ffn(d_in: usize, hidden: usize, d_out: usize, act: Activation, seed: u64) -> Result<Vec<GroupCheck>> {
    let p = FfnParams::init(d_in, hidden, d_out, act, seed);
    let mut rng = seeded(seed ^ 0x5eed);
    let x = gaussian_matrix(&mut rng, ROWS, d_in, 1.0);
    let c = gaussian_matrix(&mut rng, ROWS, d_out, 1.0);
    let (_, cache) = p.forward(&x)?;
    let g = p.backward(&c, &cache)?;
    let loss = |p: &FfnParams, x: &Matrix| -> Result<Option<f64>> {
        Ok(Some(weighted_sum(&p.forward(x)?.0, &c)))
    };
    Ok(alloc::vec![
        check_group("x", g.x.data(), |i, d| loss(&p, &shifted(&x, i, d)))?,
        check_group("W", g.w.data(), |i, d| {
            let q = FfnParams { w: shifted(&p.w, i, d), ..p.clone() };
            loss(&q, &x)
        })?,
        check_group("V", g.v.data(), |i, d| {
            let q = FfnParams { v: shifted(&p.v, i, d), ..p.clone() };
            loss(&q, &x)
        })?,
    ])
}

fn check_projection(spec: ProjectionSpec, seed: u64) -> Result<Vec<GroupCheck>> {
    let proj = Projection::init(spec, seed);
    let mut rng = seeded(seed ^ 0x5eed);
    let x = gaussian_matrix(&mut rng, ROWS, spec.d_in(), 1.0);
    let c = gaussian_matrix(&mut rng, ROWS, spec.d_out(), 1.0);
    let (_, cache) = proj.forward(&x)?;
    let (gx, gp) = proj.backward(&c, &cache)?;
    let loss = |p: &Projection, x: &Matrix| -> Result<Option<f64>> {
        Ok(Some(weighted_sum(&p.apply(x)?, &c)))
    };
    let mut out = alloc::vec![check_group("x", gx.data(), |i, d| loss(&proj, &shifted(&x, i, d)))?];
    if proj.is_trainable() {
        out.push(check_group("params", &gp, |i, d| {
            let q = Projection::from_params(spec, shifted_vec(proj.params(), i, d))?;
            loss(&q, &x)
        })?);
    }
    Ok(out)
}

/// Draws inputs until every soft code is at least [`BOUNDARY_MARGIN`] from
/// zero (up to a bounded number of attempts).
fn input_away_from_boundary(layer: &LookupFfn, seed: u64) -> Result<Matrix> {
    let mut best = None;
    for attempt in 0..256u64 {
        let mut rng = seeded(seed ^ 0x5eed ^ (attempt << 32));
        let x = gaussian_matrix(&mut rng, ROWS, layer.config().d_in, 1.0);
        let z = layer.projection().apply(&x)?;
        let margin = z.data().iter().map(|v| v.abs()).fold(f64::INFINITY, f64::min);
        if margin >= BOUNDARY_MARGIN {
            return Ok(x);
        }
        if best.as_ref().is_none_or(|(m, _)| margin > *m) {
            best = Some((margin, x));
        }
    }
    Ok(best.expect("at least one attempt").1)
}

fn check_lookup(cfg: LookupConfig, kind: ProjKind, seed: u64) -> Result<(Vec<GroupCheck>, bool)> {
    let layer = LookupFfn::new(cfg, kind, seed)?;
    let partial = cfg.neighbor_count < cfg.table_rows();
    let x = if partial {
        input_away_from_boundary(&layer, seed)?
    } else {
        let mut rng = seeded(seed ^ 0x5eed);
        gaussian_matrix(&mut rng, ROWS, cfg.d_in, 1.0)
    };
    let mut rng = seeded(seed ^ 0xc0de);
    let c = gaussian_matrix(&mut rng, ROWS, cfg.d_out, 1.0);
    let (_, cache) = layer.forward(&x)?;
    let g = layer.backward(&c, &cache)?;
    let base_sel = cache.selections().to_vec();

    let loss = |l: &LookupFfn, x: &Matrix| -> Result<Option<f64>> {
        let (y, cache) = l.forward(x)?;
        if partial && cache.selections() != base_sel.as_slice() {
            return Ok(None);
        }
        Ok(Some(weighted_sum(&y, &c)))
    };
    let (_, proj, tables) = layer.clone().into_parts();
    let with = |p: &Projection, t: &[f64]| -> Result<LookupFfn> {
        LookupFfn::from_parts(cfg, p.clone(), HashTables::from_vec(&cfg, t.to_vec())?)
    };
    let mut groups = alloc::vec![check_group("x", g.x.data(), |i, d| loss(&layer, &shifted(&x, i, d)))?];
    if proj.is_trainable() {
        groups.push(check_group("proj", &g.proj, |i, d| {
            let p = Projection::from_params(*proj.spec(), shifted_vec(proj.params(), i, d))?;
            loss(&with(&p, tables.data())?, &x)
        })?);
    }
    groups.push(check_group("tables", &g.tables, |i, d| {
        loss(&with(&proj, &shifted_vec(tables.data(), i, d))?, &x)
    })?);
    Ok((groups, partial))
}
