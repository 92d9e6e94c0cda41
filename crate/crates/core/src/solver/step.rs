//! Inner-loop kernels shared by every backend. Keeping one copy of the
//! arithmetic is what makes single-worker runs bit-identical across backends.

use crate::model::ModelSpec;
use crate::screening::{ActiveSet, CompactView};

/// Read-only state of one epoch's inner loop.
pub(crate) struct StepCtx<'a> {
    pub spec: &'a ModelSpec,
    pub active: &'a ActiveSet,
    pub view: &'a CompactView,
    /// Targets of the samples covered by `view`, locally indexed.
    pub targets: &'a [f64],
    /// `grad F(x0)` in the compact layout.
    pub grad0: &'a [f64],
    /// `a_i^T x0` for the samples covered by `view`, locally indexed.
    pub z0: &'a [f64],
    pub eta: f64,
}

#[derive(Default)]
pub(crate) struct Scratch {
    xs: Vec<f64>,
    ws: Vec<f64>,
    starts: Vec<usize>,
    emitted: Vec<(usize, usize, usize, usize)>,
}

impl Scratch {
    /// Blocks written by the last `ddss_delta` call, as
    /// `(block_pos, first_coord, delta)`.
    pub(crate) fn deltas(&self) -> impl Iterator<Item = (usize, usize, &[f64])> + '_ {
        self.emitted.iter().map(|&(k, c0, s, len)| (k, c0, &self.ws[s..s + len]))
    }
}

/// `a^T x` summed in row order from `+0.0`.
pub(crate) fn dot(idx: &[usize], val: &[f64], x: &[f64]) -> f64 {
    let mut z = 0.0;
    for (&c, &a) in idx.iter().zip(val) {
        z += x[c] * a;
    }
    z
}

/// One sparse variance-reduced proximal step for local sample `r`.
///
/// Reads `x_hat` on the blocks of `Psi_r` through `read`, forms
/// `v = (f'(a^T x_hat) - f'(a^T x0)) a + D_r grad0`, applies the weighted
/// prox and records the delta of every block in `Psi_r`, zeros included, since
/// the step overwrites all of them (see [`Scratch::deltas`]). Returns the
/// number of coordinates recorded.
pub(crate) fn ddss_delta(ctx: &StepCtx, r: usize, scratch: &mut Scratch, mut read: impl FnMut(usize) -> f64) -> usize {
    let Scratch { xs, ws, starts, emitted } = scratch;
    emitted.clear();
    let active = ctx.active;
    let (blks, weights) = ctx.view.psi(r);
    xs.clear();
    starts.clear();
    for &k in blks {
        starts.push(xs.len());
        for c in active.block_range(k) {
            xs.push(read(c));
        }
    }
    let (idx, val) = ctx.view.row(r);
    let loc = |bi: usize, c: usize, k: usize| starts[bi] + c - active.block_range(k).start;

    let mut z = 0.0;
    let mut bi = 0;
    for (&c, &a) in idx.iter().zip(val) {
        let k = active.coord_block(c);
        while blks[bi] != k {
            bi += 1;
        }
        z += xs[loc(bi, c, k)] * a;
    }
    let y = ctx.targets[r];
    let coef = ctx.spec.loss.deriv(z, y) - ctx.spec.loss.deriv(ctx.z0[r], y);

    ws.clear();
    for (bi, &k) in blks.iter().enumerate() {
        let d = weights[bi];
        for c in active.block_range(k) {
            ws.push(d * ctx.grad0[c]);
        }
    }
    bi = 0;
    for (&c, &a) in idx.iter().zip(val) {
        let k = active.coord_block(c);
        while blks[bi] != k {
            bi += 1;
        }
        ws[loc(bi, c, k)] += coef * a;
    }
    for (w, &x) in ws.iter_mut().zip(xs.iter()) {
        *w = x - ctx.eta * *w;
    }

    let lambda = ctx.spec.lambda;
    let ridge = ctx.spec.ridge;
    let mut touched = 0;
    for (bi, &k) in blks.iter().enumerate() {
        let d = weights[bi];
        let range = active.block_range(k);
        let s = starts[bi]..starts[bi] + range.len();
        ctx.spec.block_prox_scaled(&mut ws[s.clone()], ctx.eta * lambda * d, ctx.eta * d * ridge);
        for (w, &x) in ws[s.clone()].iter_mut().zip(&xs[s.clone()]) {
            *w -= x;
        }
        touched += range.len();
        emitted.push((k, range.start, s.start, range.len()));
    }
    touched
}

/// Coordinates a DDSS step for local sample `r` may write: `sum_{G in Psi_r} |G|`.
pub(crate) fn support_size(active: &ActiveSet, view: &CompactView, r: usize) -> usize {
    view.psi(r).0.iter().map(|&k| active.block_range(k).len()).sum()
}

/// Scalar factor of the plain stochastic gradient `v = f'(a^T x_hat) a`.
pub(crate) fn naive_coef(spec: &ModelSpec, view: &CompactView, targets: &[f64], r: usize, x_hat: &[f64]) -> f64 {
    let (idx, val) = view.row(r);
    spec.loss.deriv(dot(idx, val, x_hat), targets[r])
}

/// `x <- prox_{eta_t lambda Omega}(x - eta_t v)` over every active block, with
/// `v` given by its nonzero entries.
pub(crate) fn naive_apply(
    spec: &ModelSpec,
    active: &ActiveSet,
    x: &mut [f64],
    v: impl IntoIterator<Item = (usize, f64)>,
    eta_t: f64,
) {
    for (c, g) in v {
        x[c] -= eta_t * g;
    }
    for k in 0..active.q() {
        spec.block_prox_scaled(&mut x[active.block_range(k)], eta_t * spec.lambda, eta_t * spec.ridge);
    }
}

/// Step size of the naive schedule at global step `t`.
pub(crate) fn naive_eta(eta: f64, t: u64, inner: usize) -> f64 {
    eta / (1.0 + t as f64 / inner as f64)
}

/// Dense prox-SVRG step (no reweighting, no sparsity) on compact `x`.
pub(crate) fn svrg_step(ctx: &StepCtx, r: usize, x: &mut [f64], w: &mut Vec<f64>) {
    let (idx, val) = ctx.view.row(r);
    let y = ctx.targets[r];
    let coef = ctx.spec.loss.deriv(dot(idx, val, x), y) - ctx.spec.loss.deriv(ctx.z0[r], y);
    w.clear();
    w.extend_from_slice(ctx.grad0);
    for (&c, &a) in idx.iter().zip(val) {
        w[c] += coef * a;
    }
    for (xc, &g) in x.iter_mut().zip(w.iter()) {
        *xc -= ctx.eta * g;
    }
    for k in 0..ctx.active.q() {
        ctx.spec.block_prox_scaled(&mut x[ctx.active.block_range(k)], ctx.eta * ctx.spec.lambda, ctx.eta * ctx.spec.ridge);
    }
}
