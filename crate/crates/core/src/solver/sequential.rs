use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::step::{self, Scratch, StepCtx};
use super::{drive, head_rows, stream_seed, Backend, EpochPlan, HeadStats, InnerStats, Mode, SolverConfig, SolverOutput};
use crate::error::{Error, Result};
use crate::problem::Problem;
use crate::screening::{ActiveSet, CompactView};

/// Single-threaded backend; the reference the concurrent ones must match.
pub(crate) struct SequentialBackend<'a> {
    problem: &'a Problem,
    view: Option<(Vec<usize>, CompactView)>,
    z0: Vec<f64>,
    scratch: Scratch,
    dense: Vec<f64>,
}

impl<'a> SequentialBackend<'a> {
    pub(crate) fn new(problem: &'a Problem) -> Self {
        Self { problem, view: None, z0: Vec::new(), scratch: Scratch::default(), dense: Vec::new() }
    }

    fn ensure_view(&mut self, active: &ActiveSet) {
        if self.view.as_ref().is_none_or(|(blocks, _)| blocks != active.blocks()) {
            self.view = Some((active.blocks().to_vec(), CompactView::new(self.problem, active)));
        }
    }
}

impl Backend for SequentialBackend<'_> {
    fn head(&mut self, _epoch: u64, active: &ActiveSet, x: &[f64]) -> Result<HeadStats> {
        self.ensure_view(active);
        let view = &self.view.as_ref().expect("view built above").1;
        let (stats, z) = head_rows(self.problem, view, active.p_active(), x);
        self.z0 = z;
        Ok(stats)
    }

    fn inner(&mut self, plan: &EpochPlan, x: &mut Vec<f64>) -> Result<InnerStats> {
        self.ensure_view(plan.active);
        let view = &self.view.as_ref().expect("view built above").1;
        let spec = self.problem.spec();
        let targets = self.problem.data().targets();
        let ctx = StepCtx {
            spec,
            active: plan.active,
            view,
            targets,
            grad0: plan.grad0,
            z0: &self.z0,
            eta: plan.eta,
        };
        let n = view.len();
        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(plan.seed, 0, plan.epoch));
        let mut stats = InnerStats::default();
        for t in 0..plan.inner {
            let r = rng.random_range(0..n);
            match plan.mode {
                Mode::Ddss => {
                    let touched = step::ddss_delta(&ctx, r, &mut self.scratch, |c| x[c]);
                    for (_, c0, delta) in self.scratch.deltas() {
                        for (xc, d) in x[c0..c0 + delta.len()].iter_mut().zip(delta) {
                            *xc += d;
                        }
                    }
                    if touched > step::support_size(plan.active, view, r) {
                        stats.touch_violations += 1;
                    }
                    stats.touches += touched as u64;
                }
                Mode::Naive => {
                    let eta_t = step::naive_eta(plan.eta, plan.step_base + t as u64, plan.inner);
                    let coef = step::naive_coef(spec, view, targets, r, x);
                    let (idx, val) = view.row(r);
                    step::naive_apply(spec, plan.active, x, idx.iter().zip(val).map(|(&c, &a)| (c, coef * a)), eta_t);
                    stats.touches += plan.active.p_active() as u64;
                }
                Mode::ProxSvrg => {
                    step::svrg_step(&ctx, r, x, &mut self.dense);
                    stats.touches += plan.active.p_active() as u64;
                }
            }
        }
        Ok(stats)
    }
}

fn run_mode(problem: &Problem, cfg: &SolverConfig, mode: Mode) -> Result<SolverOutput> {
    let cfg = SolverConfig { mode, ..cfg.clone() };
    drive(problem, &cfg, &mut SequentialBackend::new(problem))
}

/// Single-threaded DDSS.
pub fn ddss_sequential(problem: &Problem, cfg: &SolverConfig) -> Result<SolverOutput> {
    run_mode(problem, cfg, Mode::Ddss)
}

/// Single-threaded plain stochastic proximal gradient with screening.
pub fn ddss_naive_sequential(problem: &Problem, cfg: &SolverConfig) -> Result<SolverOutput> {
    run_mode(problem, cfg, Mode::Naive)
}

/// Dense prox-SVRG baseline without screening.
pub fn prox_svrg(problem: &Problem, cfg: &SolverConfig) -> Result<SolverOutput> {
    run_mode(problem, cfg, Mode::ProxSvrg)
}

/// Snapshot data of the variance-reduced estimator on one active set.
#[derive(Debug, Clone)]
pub struct VrAnchor {
    /// `x0` in compact layout.
    pub x0: Vec<f64>,
    /// `grad F(x0)` in compact layout.
    pub grad0: Vec<f64>,
    /// `a_i^T x0` per sample.
    pub z0: Vec<f64>,
}

impl VrAnchor {
    pub fn new(problem: &Problem, active: &ActiveSet, x0: &[f64]) -> Result<Self> {
        if x0.len() != active.p_active() {
            return Err(Error::Dimension { expected: active.p_active(), got: x0.len() });
        }
        let view = CompactView::new(problem, active);
        let (stats, z0) = head_rows(problem, &view, active.p_active(), x0);
        let n = problem.n() as f64;
        let grad0 = stats.atu.iter().map(|g| g / n).collect();
        Ok(Self { x0: x0.to_vec(), grad0, z0 })
    }
}

/// `v = (f_i'(a_i^T x_hat) - f_i'(a_i^T x0)) a_i + D_i grad F(x0)` in compact
/// layout, zero outside the blocks sample `i` touches.
pub fn vr_sparse_gradient(
    problem: &Problem,
    active: &ActiveSet,
    anchor: &VrAnchor,
    i: usize,
    x_hat: &[f64],
) -> Result<Vec<f64>> {
    if x_hat.len() != active.p_active() {
        return Err(Error::Dimension { expected: active.p_active(), got: x_hat.len() });
    }
    let spec = problem.spec();
    let support = problem.support();
    let y = problem.data().targets()[i];
    let mut v = vec![0.0; active.p_active()];
    for &b in support.psi(i) {
        if let Some(k) = active.block_pos(b) {
            let d = support.weight(b).expect("touched block has a weight");
            for c in active.block_range(k) {
                v[c] = d * anchor.grad0[c];
            }
        }
    }
    let (idx, val) = problem.data().row(i);
    let mut z = 0.0;
    let mut entries = Vec::new();
    for (&j, &a) in idx.iter().zip(val) {
        if let Some(c) = active.compact_index(j) {
            entries.push((c, a));
        }
    }
    entries.sort_unstable_by_key(|e| e.0);
    for &(c, a) in &entries {
        z += x_hat[c] * a;
    }
    let coef = spec.loss.deriv(z, y) - spec.loss.deriv(anchor.z0[i], y);
    for &(c, a) in &entries {
        v[c] += coef * a;
    }
    Ok(v)
}
