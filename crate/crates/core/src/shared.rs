//! Lock-free shared-memory backend: workers read the iterate without locks
//! and commit coordinate-wise atomic additions; the epoch head runs behind a
//! full barrier (the scoped threads of one phase all join before the next).

use std::sync::atomic::{AtomicU64, Ordering};
use std::thread;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::problem::Problem;
use crate::screening::{ActiveSet, CompactView};
use crate::solver::step::{self, Scratch, StepCtx};
use crate::solver::{drive, stream_seed, Backend, EpochPlan, HeadStats, InnerStats, Mode, SolverConfig, SolverOutput};

/// Compact iterate as `f64` bit patterns in atomics.
#[derive(Debug)]
pub struct SharedIterate {
    vals: Vec<AtomicU64>,
    epoch: AtomicU64,
    commits: AtomicU64,
}

impl SharedIterate {
    pub fn new(x: &[f64], epoch: u64) -> Self {
        Self {
            vals: x.iter().map(|v| AtomicU64::new(v.to_bits())).collect(),
            epoch: AtomicU64::new(epoch),
            commits: AtomicU64::new(0),
        }
    }

    pub fn len(&self) -> usize {
        self.vals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vals.is_empty()
    }

    pub fn epoch(&self) -> u64 {
        self.epoch.load(Ordering::Acquire)
    }

    /// Unsynchronized read of one coordinate.
    pub fn read(&self, c: usize) -> f64 {
        f64::from_bits(self.vals[c].load(Ordering::Relaxed))
    }

    /// Indivisible `x[c] += d`.
    pub fn add(&self, c: usize, d: f64) {
        let cell = &self.vals[c];
        let mut cur = cell.load(Ordering::Relaxed);
        loop {
            let next = (f64::from_bits(cur) + d).to_bits();
            match cell.compare_exchange_weak(cur, next, Ordering::AcqRel, Ordering::Relaxed) {
                Ok(_) => return,
                Err(seen) => cur = seen,
            }
        }
    }

    pub fn store(&self, c: usize, v: f64) {
        self.vals[c].store(v.to_bits(), Ordering::Release);
    }

    /// Commits so far; a step's overlap is the count at commit minus the count at read.
    pub fn commits(&self) -> u64 {
        self.commits.load(Ordering::Acquire)
    }

    /// Registers one commit and returns how many commits preceded it.
    pub fn mark_commit(&self) -> u64 {
        self.commits.fetch_add(1, Ordering::AcqRel)
    }

    pub fn snapshot(&self) -> Vec<f64> {
        (0..self.len()).map(|c| self.read(c)).collect()
    }
}

fn chunk_bounds(len: usize, parts: usize, k: usize) -> std::ops::Range<usize> {
    let base = len / parts;
    let rem = len % parts;
    let start = k * base + k.min(rem);
    start..start + base + usize::from(k < rem)
}

/// Head statistics computed by `threads` workers. Per-sample values come from
/// disjoint sample ranges; each gradient coordinate is summed over its column
/// in ascending sample order, so the result does not depend on `threads`.
fn parallel_head(problem: &Problem, active: &ActiveSet, view: &CompactView, x: &[f64], threads: usize) -> (HeadStats, Vec<f64>) {
    let spec = problem.spec();
    let data = problem.data();
    let targets = data.targets();
    let n = problem.n();
    let mut z = vec![0.0; n];
    let mut derivs = vec![0.0; n];
    let mut losses = vec![0.0; n];
    thread::scope(|s| {
        let mut zs = z.as_mut_slice();
        let mut us = derivs.as_mut_slice();
        let mut ls = losses.as_mut_slice();
        for k in 0..threads {
            let range = chunk_bounds(n, threads, k);
            let (zk, zr) = zs.split_at_mut(range.len());
            let (uk, ur) = us.split_at_mut(range.len());
            let (lk, lr) = ls.split_at_mut(range.len());
            (zs, us, ls) = (zr, ur, lr);
            s.spawn(move || {
                for (o, i) in range.enumerate() {
                    let (idx, val) = view.row(i);
                    let zi = step::dot(idx, val, x);
                    zk[o] = zi;
                    uk[o] = spec.loss.deriv(zi, targets[i]);
                    lk[o] = spec.loss.value(zi, targets[i]);
                }
            });
        }
    });
    let mut loss_sum = 0.0;
    for l in &losses {
        loss_sum += l;
    }
    let p_s = active.p_active();
    let mut atu = vec![0.0; p_s];
    thread::scope(|s| {
        let mut rest = atu.as_mut_slice();
        let derivs = &derivs;
        for k in 0..threads {
            let range = chunk_bounds(p_s, threads, k);
            let (mine, tail) = rest.split_at_mut(range.len());
            rest = tail;
            s.spawn(move || {
                for (o, c) in range.enumerate() {
                    let (idx, val) = data.col(active.features()[c]);
                    let mut acc = 0.0;
                    for (&i, &a) in idx.iter().zip(val) {
                        acc += derivs[i] * a;
                    }
                    mine[o] = acc;
                }
            });
        }
    });
    (HeadStats { loss_sum, derivs, atu }, z)
}

/// `grad F(x0)` on the active set, computed by `threads` workers.
pub fn parallel_full_gradient(problem: &Problem, active: &ActiveSet, x0: &[f64], threads: usize) -> Result<Vec<f64>> {
    if x0.len() != active.p_active() {
        return Err(Error::Dimension { expected: active.p_active(), got: x0.len() });
    }
    let view = CompactView::new(problem, active);
    let (stats, _) = parallel_head(problem, active, &view, x0, threads.max(1));
    let n = problem.n() as f64;
    Ok(stats.atu.into_iter().map(|g| g / n).collect())
}

struct SharedBackend<'a> {
    problem: &'a Problem,
    threads: usize,
    view: Option<(Vec<usize>, CompactView)>,
    z0: Vec<f64>,
}

impl SharedBackend<'_> {
    fn ensure_view(&mut self, active: &ActiveSet) {
        if self.view.as_ref().is_none_or(|(blocks, _)| blocks != active.blocks()) {
            self.view = Some((active.blocks().to_vec(), CompactView::new(self.problem, active)));
        }
    }
}

#[derive(Default)]
struct WorkerTally {
    touches: u64,
    overlap: u64,
    touch_violations: u64,
    epoch_violations: u64,
}

impl Backend for SharedBackend<'_> {
    fn head(&mut self, _epoch: u64, active: &ActiveSet, x: &[f64]) -> Result<HeadStats> {
        self.ensure_view(active);
        let view = &self.view.as_ref().expect("view built above").1;
        let (stats, z) = parallel_head(self.problem, active, view, x, self.threads);
        self.z0 = z;
        Ok(stats)
    }

    fn inner(&mut self, plan: &EpochPlan, x: &mut Vec<f64>) -> Result<InnerStats> {
        if plan.mode == Mode::ProxSvrg {
            return Err(Error::Config("the shared-memory backend runs DDSS or naive modes only".into()));
        }
        self.ensure_view(plan.active);
        let view = &self.view.as_ref().expect("view built above").1;
        let spec = self.problem.spec();
        let targets = self.problem.data().targets();
        let shared = SharedIterate::new(x, plan.epoch);
        let steps = AtomicU64::new(plan.step_base);
        let ctx = StepCtx { spec, active: plan.active, view, targets, grad0: plan.grad0, z0: &self.z0, eta: plan.eta };
        let n = view.len();

        let tallies: Vec<WorkerTally> = thread::scope(|s| {
            let handles: Vec<_> = (0..self.threads)
                .map(|w| {
                    let (ctx, shared, steps) = (&ctx, &shared, &steps);
                    let quota = chunk_bounds(plan.inner, self.threads, w).len();
                    s.spawn(move || {
                        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(plan.seed, w as u64, plan.epoch));
                        let mut scratch = Scratch::default();
                        let mut local = Vec::new();
                        let mut tally = WorkerTally::default();
                        for _ in 0..quota {
                            let r = rng.random_range(0..n);
                            let before = shared.commits();
                            match plan.mode {
                                Mode::Ddss => {
                                    let touched = step::ddss_delta(ctx, r, &mut scratch, |c| shared.read(c));
                                    if shared.epoch() != plan.epoch {
                                        tally.epoch_violations += 1;
                                    }
                                    for (_, c0, delta) in scratch.deltas() {
                                        for (o, &d) in delta.iter().enumerate() {
                                            shared.add(c0 + o, d);
                                        }
                                    }
                                    if touched > step::support_size(plan.active, view, r) {
                                        tally.touch_violations += 1;
                                    }
                                    tally.touches += touched as u64;
                                }
                                _ => {
                                    let t = steps.fetch_add(1, Ordering::AcqRel);
                                    let eta_t = step::naive_eta(plan.eta, t, plan.inner);
                                    local.clear();
                                    local.extend((0..shared.len()).map(|c| shared.read(c)));
                                    let coef = step::naive_coef(spec, view, targets, r, &local);
                                    let (idx, val) = view.row(r);
                                    step::naive_apply(
                                        spec,
                                        plan.active,
                                        &mut local,
                                        idx.iter().zip(val).map(|(&c, &a)| (c, coef * a)),
                                        eta_t,
                                    );
                                    if shared.epoch() != plan.epoch {
                                        tally.epoch_violations += 1;
                                    }
                                    for (c, &v) in local.iter().enumerate() {
                                        shared.store(c, v);
                                    }
                                    tally.touches += local.len() as u64;
                                }
                            }
                            let at = shared.mark_commit();
                            tally.overlap = tally.overlap.max(at - before);
                        }
                        tally
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("worker thread panicked")).collect()
        });

        *x = shared.snapshot();
        let mut stats = InnerStats::default();
        for t in tallies {
            stats.touches += t.touches;
            stats.staleness = stats.staleness.max(t.overlap);
            stats.touch_violations += t.touch_violations;
            stats.epoch_violations += t.epoch_violations;
        }
        let bound = self.problem.support().tau_bound();
        if stats.staleness as f64 > bound {
            log::info!(
                "epoch {}: observed overlap {} exceeds 1/(10 sqrt(delta)) = {bound:.3}; the linear-rate premise does not hold",
                plan.epoch,
                stats.staleness
            );
        }
        Ok(stats)
    }
}

fn run_mode(problem: &Problem, cfg: &SolverConfig, threads: usize, mode: Mode) -> Result<SolverOutput> {
    if threads == 0 {
        return Err(Error::Config("worker count must be at least 1".into()));
    }
    let cfg = SolverConfig { mode, ..cfg.clone() };
    let mut backend = SharedBackend { problem, threads, view: None, z0: Vec::new() };
    drive(problem, &cfg, &mut backend)
}

/// Lock-free DDSS with `threads` workers.
pub fn sha_ddss_run(problem: &Problem, cfg: &SolverConfig, threads: usize) -> Result<SolverOutput> {
    run_mode(problem, cfg, threads, Mode::Ddss)
}

/// Lock-free plain stochastic proximal gradient; each step overwrites the
/// whole active iterate (last writer wins).
pub fn sha_naive_run(problem: &Problem, cfg: &SolverConfig, threads: usize) -> Result<SolverOutput> {
    run_mode(problem, cfg, threads, Mode::Naive)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chunks_cover_in_order() {
        let parts: Vec<_> = (0..3).map(|k| chunk_bounds(10, 3, k)).collect();
        assert_eq!(parts, vec![0..4, 4..7, 7..10]);
        assert_eq!(chunk_bounds(2, 4, 3), 2..2);
    }

    #[test]
    fn concurrent_dyadic_adds_are_conserved() {
        let it = SharedIterate::new(&[0.5; 4], 3);
        let ledgers: Vec<Vec<f64>> = thread::scope(|s| {
            let hs: Vec<_> = (0..4)
                .map(|w| {
                    let it = &it;
                    s.spawn(move || {
                        let mut ledger = vec![0.0; 4];
                        for t in 0..5000u32 {
                            let c = (t as usize + w) % 4;
                            let d = f64::from((t % 7) as i32 - 3) / 64.0;
                            it.add(c, d);
                            ledger[c] += d;
                        }
                        ledger
                    })
                })
                .collect();
            hs.into_iter().map(|h| h.join().unwrap()).collect()
        });
        for c in 0..4 {
            let total: f64 = ledgers.iter().map(|l| l[c]).sum();
            assert_eq!(it.read(c) - 0.5, total);
        }
        assert_eq!(it.epoch(), 3);
    }
}
