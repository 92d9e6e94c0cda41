//! Solver configuration, the outer-loop driver shared by every backend, and
//! the single-threaded backend.

mod oracle;
mod sequential;
pub(crate) mod step;

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{duality_gap, primal_objective, GapEval};
use crate::problem::Problem;
use crate::screening::{screen_with_eval, ActiveSet, CompactView, RadiusRule, ScreeningReport};
use crate::trace::TraceRecord;

pub use oracle::{oracle_check, oracle_solve, reference_blocks, CoordinateOrder, OracleOptions, OracleSolution, MASS_TOL};
pub use sequential::{ddss_naive_sequential, ddss_sequential, prox_svrg, vr_sparse_gradient, VrAnchor};

/// Which inner-loop update a run uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    /// Sparse variance-reduced steps with reweighted prox and additive deltas.
    Ddss,
    /// Plain stochastic proximal gradient with a decaying step and full prox.
    Naive,
    /// Dense prox-SVRG without screening.
    ProxSvrg,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    /// Step size; `None` picks the default from the model constants.
    pub eta: Option<f64>,
    /// Inner-loop length `K` (total over all workers); `None` picks the default.
    pub inner: Option<usize>,
    /// Outer epochs `S`.
    pub epochs: usize,
    pub seed: u64,
    /// Staleness bound plugged into the default step size.
    pub tau_assumed: f64,
    pub mode: Mode,
    pub screen: bool,
    /// Screen even when a ridge term is present.
    pub unsafe_screen_ridge: bool,
    pub radius: RadiusRule,
    /// Keep the expanded iterate of every epoch in the output.
    pub keep_iterates: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            eta: None,
            inner: None,
            epochs: 30,
            seed: 0,
            tau_assumed: 0.0,
            mode: Mode::Ddss,
            screen: true,
            unsafe_screen_ridge: false,
            radius: RadiusRule::Safe,
            keep_iterates: false,
        }
    }
}

/// Step size and inner-loop length after defaults are applied.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepPlan {
    pub eta: f64,
    pub inner: usize,
}

impl SolverConfig {
    /// With ridge `mu > 0` and `kappa = L / mu`:
    /// `eta = min{1/(24 kappa L), kappa/(2L), kappa/(10 tau L)}` and
    /// `K = ceil(4 ln 3 / (eta mu))`. Without ridge those are undefined and
    /// the defaults fall back to `eta = 1/(3L max(1, tau))`, `K = 2n`.
    pub fn step_plan(&self, problem: &Problem) -> Result<StepPlan> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if !(self.tau_assumed >= 0.0) {
            return Err(Error::Config(format!("tau must be non-negative, got {}", self.tau_assumed)));
        }
        let l = if problem.lipschitz() > 0.0 { problem.lipschitz() } else { 1.0 };
        let mu = problem.spec().ridge;
        let eta = match self.eta {
            Some(eta) => eta,
            None if mu > 0.0 => {
                let kappa = l / mu;
                let async_term = if self.tau_assumed > 0.0 { kappa / (10.0 * self.tau_assumed * l) } else { f64::INFINITY };
                (1.0 / (24.0 * kappa * l)).min(kappa / (2.0 * l)).min(async_term)
            }
            None => 1.0 / (3.0 * l * self.tau_assumed.max(1.0)),
        };
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(Error::Config(format!("step size must be positive and finite, got {eta}")));
        }
        let inner = match self.inner {
            Some(k) => k,
            None if mu > 0.0 => (4.0 * 3f64.ln() / (eta * mu)).ceil() as usize,
            None => 2 * problem.n(),
        };
        if inner == 0 {
            return Err(Error::Config("inner loop length must be at least 1".into()));
        }
        Ok(StepPlan { eta, inner })
    }

    pub(crate) fn screening_enabled(&self, problem: &Problem) -> bool {
        self.screen && self.mode != Mode::ProxSvrg && (problem.spec().ridge == 0.0 || self.unsafe_screen_ridge)
    }
}

#[derive(Debug, Clone)]
pub struct SolverOutput {
    /// Final iterate, full length, zero outside `final_active`.
    pub x: Vec<f64>,
    pub trace: Vec<TraceRecord>,
    pub reports: Vec<ScreeningReport>,
    /// Surviving global block ids after the last screening pass.
    pub final_active: Vec<usize>,
    /// `P(x)` and duality gap of the full problem at `x`.
    pub final_objective: f64,
    pub final_gap: f64,
    pub plan: StepPlan,
    /// Expanded iterates `x_0, x_1, ...` when requested.
    pub iterates: Vec<Vec<f64>>,
    /// Inner steps that wrote outside `Psi_i` restricted to the active set.
    pub touch_violations: u64,
    /// Commits carrying a stale epoch stamp.
    pub epoch_violations: u64,
    pub total_time_s: f64,
}

/// Sufficient statistics at an epoch head.
#[derive(Debug, Clone, Default)]
pub(crate) struct HeadStats {
    pub loss_sum: f64,
    /// `u_i = f_i'(a_i^T x)` for every sample.
    pub derivs: Vec<f64>,
    /// `A^T u` in the compact layout of the head's active set.
    pub atu: Vec<f64>,
}

/// What an inner loop needs beyond the backend's own state.
pub(crate) struct EpochPlan<'a> {
    pub epoch: u64,
    pub active: &'a ActiveSet,
    pub grad0: &'a [f64],
    pub eta: f64,
    pub inner: usize,
    pub mode: Mode,
    pub seed: u64,
    /// Global step count before this epoch, for the naive schedule.
    pub step_base: u64,
}

#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct InnerStats {
    pub touches: u64,
    pub staleness: u64,
    pub touch_violations: u64,
    pub epoch_violations: u64,
}

/// A place inner loops run. `head` evaluates at `x` on `active` and keeps
/// `a_i^T x` as the next anchor; `inner` runs one epoch's `K` steps.
pub(crate) trait Backend {
    fn head(&mut self, epoch: u64, active: &ActiveSet, x: &[f64]) -> Result<HeadStats>;
    fn inner(&mut self, plan: &EpochPlan, x: &mut Vec<f64>) -> Result<InnerStats>;
    fn finish(&mut self) -> Result<()> {
        Ok(())
    }
}

/// Head statistics over the samples of `view`, summed in ascending sample order.
/// Returns the statistics and `a_i^T x` per covered sample.
pub(crate) fn head_rows(problem: &Problem, view: &CompactView, p_active: usize, x: &[f64]) -> (HeadStats, Vec<f64>) {
    let spec = problem.spec();
    let targets = problem.data().targets();
    let mut atu = vec![0.0; p_active];
    let mut derivs = Vec::with_capacity(view.len());
    let mut z = Vec::with_capacity(view.len());
    let mut loss_sum = 0.0;
    for r in 0..view.len() {
        let (idx, val) = view.row(r);
        let zi = step::dot(idx, val, x);
        let y = targets[view.start() + r];
        loss_sum += spec.loss.value(zi, y);
        let u = spec.loss.deriv(zi, y);
        for (&c, &a) in idx.iter().zip(val) {
            atu[c] += u * a;
        }
        derivs.push(u);
        z.push(zi);
    }
    (HeadStats { loss_sum, derivs, atu }, z)
}

pub(crate) fn sequential_head(problem: &Problem, active: &ActiveSet, view: &CompactView, x: &[f64]) -> HeadStats {
    head_rows(problem, view, active.p_active(), x).0
}

/// Splitmix-style mixing of `(seed, worker, epoch)` into one RNG seed.
pub(crate) fn stream_seed(seed: u64, worker: u64, epoch: u64) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    mix(mix(mix(seed) ^ worker) ^ epoch)
}

const DIVERGENCE_FACTOR: f64 = 1e6;

/// Outer loop: head, screen, inner, repeated for `S` epochs.
pub(crate) fn drive<B: Backend>(problem: &Problem, cfg: &SolverConfig, backend: &mut B) -> Result<SolverOutput> {
    let result = drive_inner(problem, cfg, backend);
    let finished = backend.finish();
    let out = result?;
    finished?;
    Ok(out)
}

fn drive_inner<B: Backend>(problem: &Problem, cfg: &SolverConfig, backend: &mut B) -> Result<SolverOutput> {
    let plan = cfg.step_plan(problem)?;
    if problem.spec().ridge == 0.0 && (cfg.eta.is_none() || cfg.inner.is_none()) {
        log::warn!("no ridge term: default step 1/(3L max(1, tau)) and inner length 2n carry no linear-rate guarantee");
    }
    if cfg.mode == Mode::ProxSvrg && cfg.screen {
        log::debug!("prox-SVRG runs without screening");
    }
    let screen = cfg.screening_enabled(problem);
    let spec = problem.spec();
    let targets = problem.data().targets();
    let n = problem.n() as f64;
    let clock = Instant::now();

    let mut active = ActiveSet::full(&spec.partition);
    let mut x = vec![0.0; active.p_active()];
    let evaluate = |active: &ActiveSet, x: &[f64], h: &HeadStats| -> GapEval {
        spec.evaluate(active, targets, h.loss_sum, &h.derivs, &h.atu, x)
    };
    let mut stats = backend.head(0, &active, &x)?;
    let mut eval = evaluate(&active, &x, &stats);
    let initial = eval.primal.abs().max(f64::MIN_POSITIVE);

    let mut trace = Vec::with_capacity(cfg.epochs);
    let mut reports = Vec::new();
    let mut iterates = Vec::new();
    if cfg.keep_iterates {
        iterates.push(active.expand(&x)?);
    }
    let mut touches = 0u64;
    let mut touch_violations = 0;
    let mut epoch_violations = 0;

    for s in 1..=cfg.epochs as u64 {
        let next = if screen {
            let (next, report) = screen_with_eval(problem, &active, &x, &eval, cfg.radius)?;
            reports.push(report);
            next
        } else {
            active.restrict(&spec.partition, active.blocks().to_vec())?
        };
        let grad0: Vec<f64> = next.project_from(&active, &stats.atu).into_iter().map(|g| g / n).collect();
        x = next.project_from(&active, &x);
        active = next;

        let inner = if active.is_empty() {
            InnerStats::default()
        } else {
            let ep = EpochPlan {
                epoch: s,
                active: &active,
                grad0: &grad0,
                eta: plan.eta,
                inner: plan.inner,
                mode: cfg.mode,
                seed: cfg.seed,
                step_base: (s - 1) * plan.inner as u64,
            };
            backend.inner(&ep, &mut x)?
        };
        touches += inner.touches;
        touch_violations += inner.touch_violations;
        epoch_violations += inner.epoch_violations;

        stats = backend.head(s, &active, &x)?;
        eval = evaluate(&active, &x, &stats);
        trace.push(TraceRecord {
            epoch: s,
            wall_time_s: clock.elapsed().as_secs_f64(),
            objective: eval.primal,
            duality_gap: eval.gap,
            active_blocks: active.q(),
            active_features: active.p_active(),
            nnz_coefficients: x.iter().filter(|v| **v != 0.0).count(),
            coordinate_touches: touches,
            staleness: inner.staleness,
        });
        if cfg.keep_iterates {
            iterates.push(active.expand(&x)?);
        }
        if !eval.primal.is_finite() || eval.primal > DIVERGENCE_FACTOR * initial {
            return Err(Error::Diverged { epoch: s, objective: eval.primal });
        }
        if active.is_empty() {
            break;
        }
    }

    if screen && !active.is_empty() {
        let (next, report) = screen_with_eval(problem, &active, &x, &eval, cfg.radius)?;
        reports.push(report);
        x = next.project_from(&active, &x);
        active = next;
    }
    let x_full = active.expand(&x)?;
    let final_objective = primal_objective(spec, problem.data(), &x_full)?;
    let (final_gap, _) = duality_gap(spec, problem.data(), &x_full)?;
    Ok(SolverOutput {
        x: x_full,
        trace,
        reports,
        final_active: active.blocks().to_vec(),
        final_objective,
        final_gap,
        plan,
        iterates,
        touch_violations,
        epoch_violations,
        total_time_s: clock.elapsed().as_secs_f64(),
    })
}
